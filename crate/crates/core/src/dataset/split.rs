use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, SampleRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_environment: u32,
    pub train_environments: BTreeSet<u32>,
}

impl SplitSpec {
    /// Holds out `test_env`; every other environment of `manifest` trains.
    pub fn hold_out(manifest: &DatasetManifest, test_env: u32) -> Result<Self> {
        let mut envs = manifest.environments();
        if !envs.remove(&test_env) {
            return Err(Error::MissingEnvironment {
                requested: test_env,
                available: manifest.environments().into_iter().collect(),
            });
        }
        Ok(SplitSpec {
            test_environment: test_env,
            train_environments: envs,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

/// Environment-level split. Excluded records are dropped from both halves.
pub fn environment_split(manifest: &DatasetManifest, test_env: u32) -> Result<Split> {
    SplitSpec::hold_out(manifest, test_env)?;
    let mut split = Split::default();
    for r in manifest.records.iter().filter(|r| r.mapped_class.is_some()) {
        if r.environment == test_env {
            split.test.push(r.clone());
        } else {
            split.train.push(r.clone());
        }
    }
    if split.train.is_empty() {
        warn!("holding out environment {test_env} leaves no training records");
    }
    Ok(split)
}

/// Moves about `fraction` of each class out of `train` into a validation
/// list, chosen by a seeded shuffle. A class keeps at least one training
/// record. Both outputs stay in the input order.
pub fn carve_validation(
    train: &[SampleRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("val_fraction {fraction} must lie in (0, 1)")));
    }
    let mut by_class: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, r) in train.iter().enumerate() {
        by_class.entry(r.mapped_class).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_val = vec![false; train.len()];
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let take = ((idx.len() as f64 * fraction).round() as usize).min(idx.len() - 1);
        for &i in &idx[..take] {
            is_val[i] = true;
        }
    }
    let (mut t, mut v) = (Vec::new(), Vec::new());
    for (r, val) in train.iter().zip(is_val) {
        if val { v.push(r.clone()) } else { t.push(r.clone()) }
    }
    Ok((t, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabelMap;
    use std::path::PathBuf;

    fn manifest(envs: &[u32]) -> DatasetManifest {
        let lm = LabelMap::default();
        let mut recs = Vec::new();
        for &e in envs {
            for raw in 0..12 {
                recs.push(SampleRecord::new(PathBuf::from(format!("env{e}/{raw}.ppm")), raw, &lm, e).unwrap());
            }
        }
        DatasetManifest::new(recs, lm).unwrap()
    }

    #[test]
    fn hold_out_four_of_five() {
        let m = manifest(&[0, 1, 2, 3, 4]);
        let s = SplitSpec::hold_out(&m, 4).unwrap();
        assert_eq!(s.train_environments, BTreeSet::from([0, 1, 2, 3]));
        let split = environment_split(&m, 4).unwrap();
        assert_eq!(split.test.len(), 10);
        assert_eq!(split.train.len(), 40);
    }

    #[test]
    fn missing_environment_lists_available() {
        let err = environment_split(&manifest(&[0, 2]), 1).unwrap_err();
        assert!(matches!(err, Error::MissingEnvironment { requested: 1, ref available } if available == &[0, 2]));
    }

    #[test]
    fn single_environment_gives_empty_train() {
        let split = environment_split(&manifest(&[3]), 3).unwrap();
        assert!(split.train.is_empty());
        assert_eq!(split.test.len(), 10);
    }

    #[test]
    fn validation_is_stratified_and_seeded() {
        let m = manifest(&[0, 1, 2, 3]);
        let train = environment_split(&m, 3).unwrap().train;
        let (t, v) = carve_validation(&train, 0.25, 9).unwrap();
        assert_eq!(t.len() + v.len(), train.len());
        // 3 records of class 0 and 6 of every other class
        for c in 0..6 {
            let n = v.iter().filter(|r| r.mapped_class == Some(c)).count();
            assert!((1..=2).contains(&n), "class {c}: {n}");
        }
        assert_eq!(carve_validation(&train, 0.25, 9).unwrap(), (t, v));
        assert!(carve_validation(&train, 1.0, 9).is_err());
    }
}
