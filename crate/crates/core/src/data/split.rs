use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.70,
            val_frac: 0.10,
            test_frac: 0.20,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions must lie in [0,1] and sum to 1, got {fr:?}"
            )));
        }
        Ok(())
    }

    /// Fold sizes: `floor(n * frac)` for validation and test, the rest to
    /// training.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let fold = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
        let (val, test) = (fold(self.val_frac), fold(self.test_frac));
        (n - val - test, val, test)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

/// Seeded shuffle, then contiguous train/val/test folds.
pub fn split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let mut entries = manifest.entries.clone();
    entries.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (n_train, n_val, _) = spec.sizes(entries.len());
    let test = entries.split_off(n_train + n_val);
    let val = entries.split_off(n_train);
    Ok(Splits {
        train: manifest.with_entries(entries),
        val: manifest.with_entries(val),
        test: manifest.with_entries(test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetSource, ManifestEntry};
    use std::collections::HashSet;

    fn manifest(n: usize) -> DatasetManifest {
        let entries = (0..n)
            .map(|i| ManifestEntry {
                image_id: format!("img{i:03}"),
                image_path: format!("images/{i}.png").into(),
                mask_path: format!("masks/{i}.png").into(),
                provenance: None,
            })
            .collect();
        DatasetManifest::new(DatasetSource::Synthetic, 0.35, entries).unwrap()
    }

    #[test]
    fn jsrt_sized_split() {
        assert_eq!(SplitSpec::default().sizes(247), (174, 24, 49));
        let s = split(&manifest(247), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (174, 24, 49));
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let m = manifest(53);
        let spec = SplitSpec { seed: 9, ..Default::default() };
        let a = split(&m, &spec).unwrap();
        assert_eq!(a, split(&m, &spec).unwrap());
        let ids: Vec<&str> = [&a.train, &a.val, &a.test]
            .iter()
            .flat_map(|f| f.entries.iter().map(|e| e.image_id.as_str()))
            .collect();
        let unique: HashSet<&str> = ids.iter().copied().collect();
        assert_eq!(ids.len(), 53);
        assert_eq!(unique.len(), 53);
    }

    #[test]
    fn empty_manifest_is_an_error() {
        assert!(matches!(
            split(&manifest(0), &SplitSpec::default()),
            Err(Error::EmptyManifest)
        ));
    }
}
