use serde::{Deserialize, Serialize};

use super::{BuildGroup, BuildId, Dataset, FeatureSchema};
use crate::error::{Error, Result};

/// Hold-out split for one target build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSplit {
    pub schema: FeatureSchema,
    pub train: Vec<BuildGroup>,
    pub validation: Vec<BuildGroup>,
    pub test: BuildGroup,
}

/// Number of validation builds carved out of `k` predecessor builds: ceil(k / 5).
pub(crate) fn validation_len(k: usize) -> usize {
    k.div_ceil(5)
}

/// Splits a chronological history into (train, validation), keeping the last
/// ceil(20%) of builds for validation.
pub fn split_history(history: &[BuildGroup]) -> Result<(Vec<BuildGroup>, Vec<BuildGroup>)> {
    let k = history.len();
    let n_val = validation_len(k);
    if k == 0 || k - n_val == 0 {
        return Err(Error::InsufficientTraining(format!(
            "{k} predecessor build(s) leave no training builds after the validation carve-out"
        )));
    }
    let (train, val) = history.split_at(k - n_val);
    Ok((train.to_vec(), val.to_vec()))
}

/// Test = `target`, validation = last ceil(20%) of its predecessors, train = the rest.
pub fn make_experiment_split(ds: &Dataset, target: BuildId) -> Result<ExperimentSplit> {
    let idx = ds.build_index(target)?;
    if idx == 0 {
        return Err(Error::InsufficientTraining(format!(
            "build {target} is the first build"
        )));
    }
    let (train, validation) = split_history(&ds.builds[..idx])?;
    Ok(ExperimentSplit {
        schema: ds.schema.clone(),
        train,
        validation,
        test: ds.builds[idx].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testutil::rec;
    use crate::dataset::Verdict;
    use proptest::prelude::*;

    fn dataset(m: u64) -> Dataset {
        let recs = (1..=m).map(|b| rec(b, "t", Verdict::Passed, 1.0, &[0.0])).collect();
        Dataset::from_records(FeatureSchema::numbered(1).unwrap(), recs).unwrap()
    }

    fn ids(bs: &[BuildGroup]) -> Vec<BuildId> {
        bs.iter().map(|b| b.build_id).collect()
    }

    #[test]
    fn ten_builds() {
        let s = make_experiment_split(&dataset(10), 10).unwrap();
        assert_eq!(ids(&s.train), (1..=7).collect::<Vec<_>>());
        assert_eq!(ids(&s.validation), vec![8, 9]);
        assert_eq!(s.test.build_id, 10);
    }

    #[test]
    fn thirty_three_predecessors() {
        let s = make_experiment_split(&dataset(40), 34).unwrap();
        assert_eq!(ids(&s.train), (1..=26).collect::<Vec<_>>());
        assert_eq!(ids(&s.validation), (27..=33).collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_cases() {
        let ds = dataset(5);
        assert!(matches!(make_experiment_split(&ds, 1), Err(Error::InsufficientTraining(_))));
        assert!(matches!(make_experiment_split(&ds, 2), Err(Error::InsufficientTraining(_))));
        assert!(matches!(make_experiment_split(&ds, 99), Err(Error::UnknownBuild(99))));
        let s = make_experiment_split(&ds, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (1, 1));
    }

    proptest! {
        #[test]
        fn chronology_holds(m in 3u64..60, pick in 0.0f64..1.0) {
            let ds = dataset(m);
            let target = 3 + ((m - 3) as f64 * pick) as u64;
            let s = make_experiment_split(&ds, target).unwrap();
            let k = (target - 1) as usize;
            prop_assert_eq!(s.validation.len(), k.div_ceil(5));
            prop_assert_eq!(s.train.len() + s.validation.len(), k);
            prop_assert!(s.train.iter().chain(&s.validation).all(|b| b.build_id < target));
            prop_assert!(s.train.iter().all(|t| s.validation.iter().all(|v| t.build_id < v.build_id)));
        }
    }
}
