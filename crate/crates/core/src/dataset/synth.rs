//! Planted-signal generator for CI build histories.
//!
//! Each test case has a persistent per-test profile; each execution mixes
//! that profile with fresh noise. A build fails with probability
//! `failure_rate`. In a failed build, the failing tests are drawn without
//! replacement with weights `exp(signal_strength * s)`, where `s` in [-1, 1]
//! is the rescaled mean of the active signal features, so higher signal
//! values make failure strictly more likely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, FeatureSchema, TestCaseRecord, Verdict};
use crate::error::{Error, Result};
use crate::kv::KvMap;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// Builds (m).
    pub builds: usize,
    /// Test cases in the suite (n).
    pub tests: usize,
    /// Features (p).
    pub features: usize,
    /// Fraction of builds that contain at least one failure.
    pub failure_rate: f64,
    pub signal_features: Vec<usize>,
    pub seed: u64,
    pub signal_strength: f64,
    /// Upper bound on failing tests in a failed build; defaults to max(1, n / 4).
    pub max_failures: Option<usize>,
    /// Probability a test is executed in a given build.
    pub exec_prob: f64,
    /// Weight of the persistent per-test profile in each feature value.
    pub persistence: f64,
    /// 1-based build index from which `shift_features` replace `signal_features`.
    pub shift_build: Option<usize>,
    pub shift_features: Vec<usize>,
}

const KEYS: [&str; 12] = [
    "m",
    "n",
    "p",
    "failure_rate",
    "signal_features",
    "seed",
    "signal_strength",
    "max_failures",
    "exec_prob",
    "persistence",
    "shift_build",
    "shift_features",
];

impl SyntheticConfig {
    pub fn new(builds: usize, tests: usize, features: usize) -> Self {
        Self {
            builds,
            tests,
            features,
            failure_rate: 0.4,
            signal_features: vec![0],
            seed: 0,
            signal_strength: 40.0,
            max_failures: None,
            exec_prob: 1.0,
            persistence: 0.2,
            shift_build: None,
            shift_features: Vec::new(),
        }
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let kv = KvMap::parse(text)?;
        kv.reject_unknown(&KEYS)?;
        let need = |k: &str| -> Result<usize> {
            kv.get(k)?
                .ok_or_else(|| Error::InvalidConfig(format!("missing key {k:?}")))
        };
        let mut cfg = Self::new(need("m")?, need("n")?, need("p")?);
        if let Some(v) = kv.get("failure_rate")? {
            cfg.failure_rate = v;
        }
        if let Some(v) = kv.get_list("signal_features")? {
            cfg.signal_features = v;
        }
        if let Some(v) = kv.get("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = kv.get("signal_strength")? {
            cfg.signal_strength = v;
        }
        cfg.max_failures = kv.get("max_failures")?;
        if let Some(v) = kv.get("exec_prob")? {
            cfg.exec_prob = v;
        }
        if let Some(v) = kv.get("persistence")? {
            cfg.persistence = v;
        }
        cfg.shift_build = kv.get("shift_build")?;
        if let Some(v) = kv.get_list("shift_features")? {
            cfg.shift_features = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = format!(
            "m={}\nn={}\np={}\nfailure_rate={}\nsignal_features={}\nseed={}\nsignal_strength={}\nexec_prob={}\npersistence={}\n",
            self.builds,
            self.tests,
            self.features,
            self.failure_rate,
            list(&self.signal_features),
            self.seed,
            self.signal_strength,
            self.exec_prob,
            self.persistence,
        );
        if let Some(k) = self.max_failures {
            s.push_str(&format!("max_failures={k}\n"));
        }
        if let Some(b) = self.shift_build {
            s.push_str(&format!("shift_build={b}\nshift_features={}\n", list(&self.shift_features)));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.failure_rate > 0.0 && self.failure_rate < 1.0) {
            return bad(format!("failure_rate must lie in (0, 1), got {}", self.failure_rate));
        }
        if self.builds == 0 || self.tests == 0 || self.features == 0 {
            return bad("m, n and p must be positive".into());
        }
        if self.signal_features.is_empty() {
            return bad("at least one signal feature is required".into());
        }
        if let Some(&f) = self
            .signal_features
            .iter()
            .chain(&self.shift_features)
            .find(|&&f| f >= self.features)
        {
            return bad(format!("signal feature {f} out of range for p={}", self.features));
        }
        if self.shift_build.is_some() && self.shift_features.is_empty() {
            return bad("shift_build requires shift_features".into());
        }
        if !(self.exec_prob > 0.0 && self.exec_prob <= 1.0) {
            return bad(format!("exec_prob must lie in (0, 1], got {}", self.exec_prob));
        }
        if !(0.0..=1.0).contains(&self.persistence) {
            return bad(format!("persistence must lie in [0, 1], got {}", self.persistence));
        }
        if !self.signal_strength.is_finite() || self.signal_strength < 0.0 {
            return bad("signal_strength must be a nonnegative number".into());
        }
        if self.max_failures == Some(0) {
            return bad("max_failures must be at least 1".into());
        }
        Ok(())
    }

    fn signal_at(&self, build_index: usize) -> &[usize] {
        match self.shift_build {
            Some(s) if build_index + 1 >= s => &self.shift_features,
            _ => &self.signal_features,
        }
    }
}

/// Generates a dataset; identical `(cfg, seed)` give identical output.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n, p) = (cfg.builds, cfg.tests, cfg.features);
    let width = n.saturating_sub(1).to_string().len().max(3);
    let ids: Vec<String> = (0..n).map(|j| format!("tc{j:0width$}")).collect();
    let profiles: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mean_times: Vec<f64> = (0..n).map(|_| 0.5 + 9.5 * rng.random::<f64>()).collect();
    let max_failures = cfg.max_failures.unwrap_or((n / 4).max(1));

    let mut records = Vec::with_capacity(m * n);
    let mut failed_builds = 0usize;
    for b in 0..m {
        let build_id = b as u64 + 1;
        let mut executed: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < cfg.exec_prob).collect();
        if executed.is_empty() {
            executed.push(rng.random_range(0..n));
        }
        let rows: Vec<Vec<f64>> = executed
            .iter()
            .map(|&j| {
                profiles[j]
                    .iter()
                    .map(|&base| cfg.persistence * base + (1.0 - cfg.persistence) * rng.random::<f64>())
                    .collect()
            })
            .collect();
        let times: Vec<f64> = executed
            .iter()
            .map(|&j| mean_times[j] * (0.5 + rng.random::<f64>()))
            .collect();

        let mut failed = vec![false; executed.len()];
        if rng.random::<f64>() < cfg.failure_rate {
            failed_builds += 1;
            let k = rng.random_range(1..=max_failures).min(executed.len());
            let signal = cfg.signal_at(b);
            // Gumbel top-k == sampling without replacement proportional to exp(logit)
            let mut keys: Vec<(f64, usize)> = rows
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let s = 2.0 * signal.iter().map(|&f| x[f] - 0.5).sum::<f64>() / signal.len() as f64;
                    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                    (cfg.signal_strength * s - (-u.ln()).ln(), i)
                })
                .collect();
            keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, i) in keys.iter().take(k) {
                failed[i] = true;
            }
        }
        for (i, &j) in executed.iter().enumerate() {
            records.push(TestCaseRecord {
                build_id,
                test_id: ids[j].clone(),
                verdict: if failed[i] { Verdict::Failed } else { Verdict::Passed },
                execution_time: times[i],
                features: rows[i].clone(),
            });
        }
    }

    let mut ds = Dataset::from_records(FeatureSchema::numbered(p)?, records)?;
    let mut truth_cfg = cfg.clone();
    truth_cfg.seed = seed;
    for line in truth_cfg.to_kv_text().lines() {
        if let Some((k, v)) = line.split_once('=') {
            ds.metadata.insert(format!("synthetic.{k}"), v.to_string());
        }
    }
    ds.metadata
        .insert("synthetic.failed_builds".into(), failed_builds.to_string());
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::emit_csv;

    /// Goodman-Kruskal gamma between `f0` and the failure indicator,
    /// counting only failed/passed pairs inside the same build.
    fn failure_gamma(ds: &Dataset, feature: usize) -> f64 {
        let (mut concordant, mut discordant) = (0u64, 0u64);
        for b in &ds.builds {
            for f in b.records.iter().filter(|r| r.verdict.is_failed()) {
                for p in b.records.iter().filter(|r| !r.verdict.is_failed()) {
                    match f.features[feature].partial_cmp(&p.features[feature]) {
                        Some(std::cmp::Ordering::Greater) => concordant += 1,
                        Some(std::cmp::Ordering::Less) => discordant += 1,
                        _ => {}
                    }
                }
            }
        }
        (concordant as f64 - discordant as f64) / (concordant + discordant) as f64
    }

    fn csv_bytes(ds: &Dataset) -> Vec<u8> {
        let mut out = Vec::new();
        emit_csv(ds, &mut out).unwrap();
        out
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = SyntheticConfig::new(10, 12, 4);
        let a = generate_synthetic(&cfg, 7).unwrap();
        let b = generate_synthetic(&cfg, 7).unwrap();
        assert_eq!(csv_bytes(&a), csv_bytes(&b));
        let c = generate_synthetic(&cfg, 8).unwrap();
        assert_ne!(csv_bytes(&a), csv_bytes(&c));
    }

    #[test]
    fn record_count() {
        let ds = generate_synthetic(&SyntheticConfig::new(50, 40, 10), 1).unwrap();
        assert_eq!(ds.n_records(), 2000);
        assert_eq!(ds.m(), 50);
        assert_eq!(ds.metadata["synthetic.signal_features"], "0");
        let failed: usize = ds.metadata["synthetic.failed_builds"].parse().unwrap();
        assert_eq!(failed, ds.builds.iter().filter(|b| b.has_failures()).count());
        assert!(ds.builds.iter().flat_map(|b| &b.records).all(|r| r.execution_time > 0.0));
    }

    #[test]
    fn planted_signal_correlates_with_failure() {
        let ds = generate_synthetic(&SyntheticConfig::new(50, 40, 10), 3).unwrap();
        let gamma = failure_gamma(&ds, 0);
        assert!(gamma >= 0.8, "gamma {gamma}");
        assert!(failure_gamma(&ds, 5).abs() < 0.5);
    }

    #[test]
    fn concept_shift_moves_signal() {
        let mut cfg = SyntheticConfig::new(60, 40, 4);
        cfg.shift_build = Some(31);
        cfg.shift_features = vec![1];
        let ds = generate_synthetic(&cfg, 5).unwrap();
        let (early, late) = ds.builds.split_at(30);
        let sub = |bs: &[crate::dataset::BuildGroup]| Dataset::from_groups(ds.schema.clone(), bs.to_vec()).unwrap();
        assert!(failure_gamma(&sub(early), 0) > 0.8);
        assert!(failure_gamma(&sub(late), 1) > 0.8);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SyntheticConfig::new(5, 5, 2);
        for rate in [0.0, 1.0, -0.1, 1.5] {
            cfg.failure_rate = rate;
            assert!(generate_synthetic(&cfg, 0).is_err());
        }
        cfg.failure_rate = 0.5;
        cfg.signal_features = vec![2];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let text = "m=50\nn=40\np=10\nfailure_rate=0.4\nsignal_features=0,3\nseed=9\n";
        let cfg = SyntheticConfig::from_kv_text(text).unwrap();
        assert_eq!(cfg.signal_features, vec![0, 3]);
        assert_eq!(cfg.seed, 9);
        assert_eq!(SyntheticConfig::from_kv_text(&cfg.to_kv_text()).unwrap(), cfg);
        assert!(SyntheticConfig::from_kv_text("m=1\nn=1\n").is_err());
        assert!(SyntheticConfig::from_kv_text("m=1\nn=1\np=1\nbogus=2\n").is_err());
    }
}
