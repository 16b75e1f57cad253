//! Per-build test case datasets: ingestion, labeling, chronological splits
//! and a planted-signal generator.

mod csvio;
mod label;
mod split;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

pub use csvio::{emit_csv, parse_csv, ImputedCell, IngestOptions, MissingPolicy};
pub use label::{assign_rank_labels, grade_relevance, GradingMode};
pub use split::{make_experiment_split, split_history, ExperimentSplit};
pub use synth::{generate_synthetic, SyntheticConfig};

/// Ordinal build identifier. Ordering of ids defines chronology.
pub type BuildId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Failed,
    Passed,
}

impl Verdict {
    pub fn is_failed(self) -> bool {
        self == Verdict::Failed
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Failed => "failed",
            Verdict::Passed => "passed",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "failed" | "fail" | "f" => Ok(Verdict::Failed),
            "passed" | "pass" | "p" => Ok(Verdict::Passed),
            other => Err(Error::InvalidInput(format!("unknown verdict {other:?}"))),
        }
    }
}

/// Ordered, unique feature names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct FeatureSchema {
    names: Vec<String>,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidDataset("schema needs at least one feature".into()));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::InvalidDataset("empty feature name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate feature {name:?}")));
            }
        }
        Ok(Self { names })
    }

    /// `f0`, `f1`, ... `f{p-1}`.
    pub fn numbered(p: usize) -> Result<Self> {
        Self::new((0..p).map(|i| format!("f{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Hex SHA-256 over the newline-joined names.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.names {
            h.update(name.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

impl TryFrom<Vec<String>> for FeatureSchema {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<FeatureSchema> for Vec<String> {
    fn from(s: FeatureSchema) -> Self {
        s.names
    }
}

/// One test case executed in one build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCaseRecord {
    pub build_id: BuildId,
    pub test_id: String,
    pub verdict: Verdict,
    /// Seconds.
    pub execution_time: f64,
    pub features: Vec<f64>,
}

/// All records of one build, with optional derived labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildGroup {
    pub build_id: BuildId,
    pub time_index: usize,
    pub records: Vec<TestCaseRecord>,
    /// Per-record position, 1 = most relevant.
    pub rank_labels: Option<Vec<u32>>,
    pub relevance_grades: Option<Vec<u32>>,
}

impl BuildGroup {
    pub fn new(build_id: BuildId, records: Vec<TestCaseRecord>) -> Self {
        Self {
            build_id,
            time_index: 0,
            records,
            rank_labels: None,
            relevance_grades: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn failed_count(&self) -> usize {
        self.records.iter().filter(|r| r.verdict.is_failed()).count()
    }

    pub fn has_failures(&self) -> bool {
        self.records.iter().any(|r| r.verdict.is_failed())
    }

    pub fn record(&self, test_id: &str) -> Option<&TestCaseRecord> {
        self.records.iter().find(|r| r.test_id == test_id)
    }

    pub fn feature_matrix(&self, p: usize) -> Result<FeatureMatrix> {
        let rows: Vec<&[f64]> = self.records.iter().map(|r| r.features.as_slice()).collect();
        FeatureMatrix::from_rows(p, &rows)
    }

    /// Test id → true position, computing labels if they are not set yet.
    pub fn true_positions(&self) -> Result<BTreeMap<String, u32>> {
        let labeled;
        let group = if self.rank_labels.is_some() {
            self
        } else {
            labeled = assign_rank_labels(self)?;
            &labeled
        };
        let labels = group.rank_labels.as_ref().expect("labels assigned");
        Ok(group
            .records
            .iter()
            .zip(labels)
            .map(|(r, &l)| (r.test_id.clone(), l))
            .collect())
    }

    fn validate(&self, p: usize) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.records {
            if r.build_id != self.build_id {
                return Err(Error::InvalidDataset(format!(
                    "record {:?} has build {} inside build {}",
                    r.test_id, r.build_id, self.build_id
                )));
            }
            if !ids.insert(r.test_id.as_str()) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate test {:?} in build {}",
                    r.test_id, self.build_id
                )));
            }
            if r.features.len() != p {
                return Err(Error::LengthMismatch {
                    expected: p,
                    actual: r.features.len(),
                });
            }
            if !(r.execution_time.is_finite() && r.execution_time >= 0.0) {
                return Err(Error::InvalidDataset(format!(
                    "test {:?} in build {}: execution time {} is not a nonnegative number",
                    r.test_id, self.build_id, r.execution_time
                )));
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "test {:?} in build {}: non-finite feature value",
                    r.test_id, self.build_id
                )));
            }
        }
        let n = self.records.len();
        if let Some(labels) = &self.rank_labels {
            let set: BTreeSet<u32> = labels.iter().copied().collect();
            if labels.len() != n || set.len() != n || set.iter().next_back().copied() != Some(n as u32)
                || set.iter().next().copied() != Some(1)
            {
                return Err(Error::InvalidDataset(format!(
                    "build {}: rank labels are not a permutation of 1..{n}",
                    self.build_id
                )));
            }
            if let Some(grades) = &self.relevance_grades {
                if grades.len() != n {
                    return Err(Error::LengthMismatch {
                        expected: n,
                        actual: grades.len(),
                    });
                }
                let mut by_label: Vec<(u32, u32)> =
                    labels.iter().copied().zip(grades.iter().copied()).collect();
                by_label.sort_unstable();
                if by_label.windows(2).any(|w| w[1].1 > w[0].1) {
                    return Err(Error::InvalidDataset(format!(
                        "build {}: grades increase with rank position",
                        self.build_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A chronologically ordered collection of builds over one feature schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub builds: Vec<BuildGroup>,
    /// Free-form provenance, e.g. synthetic ground truth.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    /// Cells that were missing at ingestion and imputed with 0.
    #[serde(default)]
    pub imputed: Vec<ImputedCell>,
}

impl Dataset {
    /// Groups records by build, orders builds by id and validates everything.
    pub fn from_records(schema: FeatureSchema, records: Vec<TestCaseRecord>) -> Result<Self> {
        let mut grouped: BTreeMap<BuildId, Vec<TestCaseRecord>> = BTreeMap::new();
        for r in records {
            grouped.entry(r.build_id).or_default().push(r);
        }
        let builds = grouped
            .into_iter()
            .map(|(id, recs)| BuildGroup::new(id, recs))
            .collect();
        Self::from_groups(schema, builds)
    }

    pub fn from_groups(schema: FeatureSchema, mut builds: Vec<BuildGroup>) -> Result<Self> {
        if builds.is_empty() {
            return Err(Error::InvalidDataset("dataset has no builds".into()));
        }
        builds.sort_by_key(|b| b.build_id);
        for (i, b) in builds.iter_mut().enumerate() {
            b.time_index = i;
        }
        if builds.windows(2).any(|w| w[0].build_id == w[1].build_id) {
            return Err(Error::InvalidDataset("duplicate build id".into()));
        }
        for b in &builds {
            if b.is_empty() {
                return Err(Error::InvalidDataset(format!("build {} is empty", b.build_id)));
            }
            b.validate(schema.len())?;
        }
        Ok(Self {
            schema,
            builds,
            metadata: BTreeMap::new(),
            imputed: Vec::new(),
        })
    }

    pub fn p(&self) -> usize {
        self.schema.len()
    }

    pub fn m(&self) -> usize {
        self.builds.len()
    }

    pub fn n_records(&self) -> usize {
        self.builds.iter().map(BuildGroup::len).sum()
    }

    pub fn build_index(&self, id: BuildId) -> Result<usize> {
        self.builds
            .binary_search_by_key(&id, |b| b.build_id)
            .map_err(|_| Error::UnknownBuild(id))
    }

    pub fn build(&self, id: BuildId) -> Result<&BuildGroup> {
        Ok(&self.builds[self.build_index(id)?])
    }

    /// Returns a copy with rank labels and grades computed for every build.
    pub fn labeled(&self, mode: GradingMode) -> Result<Self> {
        let mut out = self.clone();
        for b in &mut out.builds {
            *b = grade_relevance(&assign_rank_labels(b)?, mode)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn rec(build: BuildId, id: &str, verdict: Verdict, t: f64, features: &[f64]) -> TestCaseRecord {
        TestCaseRecord {
            build_id: build,
            test_id: id.to_string(),
            verdict,
            execution_time: t,
            features: features.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::rec;
    use super::*;
    use Verdict::*;

    #[test]
    fn schema_rules() {
        assert!(FeatureSchema::new(vec![]).is_err());
        assert!(FeatureSchema::new(vec!["a".into(), "a".into()]).is_err());
        assert!(FeatureSchema::new(vec!["".into()]).is_err());
        let s = FeatureSchema::numbered(3).unwrap();
        assert_eq!(s.index_of("f2"), Some(2));
        assert_ne!(s.digest(), FeatureSchema::numbered(2).unwrap().digest());
    }

    #[test]
    fn builds_sorted_chronologically() {
        let schema = FeatureSchema::numbered(1).unwrap();
        let ds = Dataset::from_records(
            schema,
            vec![
                rec(5, "a", Passed, 1.0, &[0.0]),
                rec(2, "a", Passed, 1.0, &[0.0]),
                rec(9, "a", Failed, 1.0, &[0.0]),
            ],
        )
        .unwrap();
        let ids: Vec<_> = ds.builds.iter().map(|b| b.build_id).collect();
        assert_eq!(ids, vec![2, 5, 9]);
        assert_eq!(ds.builds[2].time_index, 2);
        assert_eq!(ds.build_index(5).unwrap(), 1);
        assert!(matches!(ds.build(7), Err(Error::UnknownBuild(7))));
    }

    #[test]
    fn rejects_bad_records() {
        let schema = FeatureSchema::numbered(1).unwrap();
        let dup = vec![rec(1, "a", Passed, 1.0, &[0.0]), rec(1, "a", Passed, 1.0, &[0.0])];
        assert!(Dataset::from_records(schema.clone(), dup).is_err());
        let neg = vec![rec(1, "a", Passed, -1.0, &[0.0])];
        assert!(Dataset::from_records(schema.clone(), neg).is_err());
        let width = vec![rec(1, "a", Passed, 1.0, &[0.0, 1.0])];
        assert!(Dataset::from_records(schema.clone(), width).is_err());
        let nan = vec![rec(1, "a", Passed, 1.0, &[f64::NAN])];
        assert!(Dataset::from_records(schema.clone(), nan).is_err());
        assert!(Dataset::from_records(schema, vec![]).is_err());
    }

    #[test]
    fn verdict_tokens() {
        assert_eq!("FAILED".parse::<Verdict>().unwrap(), Failed);
        assert_eq!("pass".parse::<Verdict>().unwrap(), Passed);
        assert!("skipped".parse::<Verdict>().is_err());
    }
}
