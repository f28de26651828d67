//! Loading the configured dataset into memory, fold assignment and JSRT
//! import.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::info;
use postdae_core::data::{
    generate_synthetic, load_jsrt_image, resize_image, resize_mask, split, write_gray_png, write_mask_png,
    DatasetManifest, DatasetSource, JsrtOptions, ManifestEntry, Sample, SplitSpec, JSRT_SIDE, JSRT_SPACING_MM,
};
use postdae_core::BinaryMask;

use crate::config::DatasetConfig;
use crate::error::{CliError, IoContext, Result};

/// A dataset held in memory, in manifest order.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

pub struct Folds {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn virtual_entry(id: &str) -> ManifestEntry {
    ManifestEntry {
        image_id: id.to_string(),
        image_path: PathBuf::from(format!("images/{id}.png")),
        mask_path: PathBuf::from(format!("masks/{id}.png")),
        provenance: None,
    }
}

pub fn load_dataset(cfg: &DatasetConfig, synthetic_seed: u64) -> Result<Dataset> {
    let (manifest, mut samples) = match &cfg.manifest {
        Some(rel) => {
            let root = cfg.resolved_root();
            let manifest = DatasetManifest::load(&root.join(rel))?;
            manifest.check_files(&root)?;
            let samples = manifest.load_samples(&root)?;
            (manifest, samples)
        }
        None => {
            let p = &cfg.synthetic;
            let samples = generate_synthetic(p.count, p.size, synthetic_seed)?;
            let entries = samples.iter().map(|s| virtual_entry(&s.id)).collect();
            let manifest = DatasetManifest::new(DatasetSource::Synthetic, samples[0].mask.spacing(), entries)?;
            (manifest, samples)
        }
    };
    if let Some(size) = cfg.size {
        for s in samples.iter_mut() {
            s.image = resize_image(&s.image, size)?;
            s.mask = resize_mask(&s.mask, size)?;
        }
    }
    info!("loaded {} samples", samples.len());
    Ok(Dataset { manifest, samples })
}

/// Splits through the manifest so fold membership matches `split`.
pub fn split_dataset(ds: Dataset, spec: &SplitSpec) -> Result<Folds> {
    let splits = split(&ds.manifest, spec)?;
    let mut by_id: HashMap<String, Sample> = ds.samples.into_iter().map(|s| (s.id.clone(), s)).collect();
    let mut take = |m: &DatasetManifest| -> Result<Vec<Sample>> {
        m.entries
            .iter()
            .map(|e| {
                by_id
                    .remove(&e.image_id)
                    .ok_or_else(|| CliError::Config(format!("sample {:?} missing from dataset", e.image_id)))
            })
            .collect()
    };
    Ok(Folds {
        train: take(&splits.train)?,
        val: take(&splits.val)?,
        test: take(&splits.test)?,
    })
}

fn read_any_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(BinaryMask::from_vec(
        h as usize,
        w as usize,
        img.into_raw().into_iter().map(|v| v >= 128).collect(),
    )?)
}

fn files_by_stem(dir: &Path) -> Result<HashMap<String, PathBuf>> {
    let mut out = HashMap::new();
    for entry in std::fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

pub struct JsrtImport<'a> {
    /// Directory of `.IMG` rasters.
    pub raw_dir: &'a Path,
    /// One directory per structure (e.g. left and right lung); masks whose
    /// stem matches an image id are united.
    pub mask_dirs: &'a [PathBuf],
    pub size: usize,
    pub output: &'a Path,
    pub options: JsrtOptions,
}

/// Converts raw rasters and companion masks into 8-bit PNGs plus a
/// manifest under `output`. Images without a mask in every directory are
/// skipped with a warning.
pub fn import_jsrt(job: &JsrtImport) -> Result<DatasetManifest> {
    if job.mask_dirs.is_empty() {
        return Err(CliError::Config("at least one mask directory is required".into()));
    }
    let mask_index: Vec<HashMap<String, PathBuf>> =
        job.mask_dirs.iter().map(|d| files_by_stem(d)).collect::<Result<_>>()?;
    let mut raws: Vec<(String, PathBuf)> = files_by_stem(job.raw_dir)?
        .into_iter()
        .filter(|(_, p)| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("img")))
        .collect();
    raws.sort();
    std::fs::create_dir_all(job.output.join("images")).at(job.output)?;
    std::fs::create_dir_all(job.output.join("masks")).at(job.output)?;
    let mut entries = Vec::new();
    for (id, raw) in raws {
        let Some(parts) = mask_index.iter().map(|ix| ix.get(&id)).collect::<Option<Vec<_>>>() else {
            log::warn!("{id}: no mask in every mask directory, skipped");
            continue;
        };
        let mut mask = BinaryMask::new(job.size, job.size);
        for p in parts {
            mask = mask.or(&resize_mask(&read_any_mask(p)?, job.size)?)?;
        }
        let image = resize_image(&load_jsrt_image(&raw, job.options)?, job.size)?;
        let entry = virtual_entry(&id);
        write_gray_png(&job.output.join(&entry.image_path), &image)?;
        write_mask_png(&job.output.join(&entry.mask_path), &mask)?;
        entries.push(ManifestEntry {
            provenance: Some(format!("jsrt {}", raw.display())),
            ..entry
        });
    }
    if entries.is_empty() {
        return Err(CliError::Config(format!("no importable images in {}", job.raw_dir.display())));
    }
    let spacing = JSRT_SPACING_MM * JSRT_SIDE as f64 / job.size as f64;
    let manifest = DatasetManifest::new(DatasetSource::Jsrt, spacing, entries)?;
    manifest.save(&job.output.join("manifest.json"))?;
    info!("imported {} images at {}px", manifest.len(), job.size);
    Ok(manifest)
}
