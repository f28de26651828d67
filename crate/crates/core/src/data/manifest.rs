use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::png_io::{read_gray_png, read_mask_png};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::raster::GrayImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Jsrt,
    Synthetic,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Relative to the dataset root.
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    /// Where the mask came from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub source: DatasetSource,
    /// mm per pixel of the stored images.
    pub spacing: f64,
    pub entries: Vec<ManifestEntry>,
}

/// One loaded image/mask pair.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub mask: BinaryMask,
}

/// Resolves the dataset root: an explicit flag wins over `DATASET_ROOT`,
/// which wins over the current directory.
pub fn dataset_root(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os("DATASET_ROOT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(".")),
    }
}

impl DatasetManifest {
    pub fn new(source: DatasetSource, spacing: f64, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            source,
            spacing,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0) {
            return Err(Error::InvalidConfig("spacing must be positive".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::DuplicateId(e.image_id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_entries(&self, entries: Vec<ManifestEntry>) -> Self {
        Self {
            source: self.source,
            spacing: self.spacing,
            entries,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Fails with the first referenced file that does not exist.
    pub fn check_files(&self, root: &Path) -> Result<()> {
        for e in &self.entries {
            for p in [&e.image_path, &e.mask_path] {
                let full = root.join(p);
                if !full.is_file() {
                    return Err(Error::Io(std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("{} (entry {})", full.display(), e.image_id),
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load_mask(&self, root: &Path, entry: &ManifestEntry) -> Result<BinaryMask> {
        Ok(read_mask_png(&root.join(&entry.mask_path))?.with_spacing(self.spacing))
    }

    pub fn load_image(&self, root: &Path, entry: &ManifestEntry) -> Result<GrayImage> {
        read_gray_png(&root.join(&entry.image_path))
    }

    pub fn load_samples(&self, root: &Path) -> Result<Vec<Sample>> {
        self.entries
            .iter()
            .map(|e| {
                Ok(Sample {
                    id: e.image_id.clone(),
                    image: self.load_image(root, e)?,
                    mask: self.load_mask(root, e)?,
                })
            })
            .collect()
    }

    /// Masks only; never touches the intensity images.
    pub fn load_masks(&self, root: &Path) -> Result<Vec<BinaryMask>> {
        self.entries.iter().map(|e| self.load_mask(root, e)).collect()
    }
}
