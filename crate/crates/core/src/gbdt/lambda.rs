//! LambdaRank gradients for one query (one build).

use super::ndcg::{discount, gain, ideal_dcg, Truncation};
use crate::error::{Error, Result};

/// Per-document first and second order terms. Gradients point in the ascent
/// direction: a relevant document that should move up gets a positive value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lambdas {
    pub gradients: Vec<f64>,
    pub hessians: Vec<f64>,
}

/// Positions (1-based) from descending score, ties by document index.
pub(crate) fn positions_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut pos = vec![0; scores.len()];
    for (rank, &doc) in order.iter().enumerate() {
        pos[doc] = rank + 1;
    }
    pos
}

/// Accumulates pairwise lambdas into `out`, which must be zeroed and sized like `scores`.
pub(crate) fn accumulate_lambdas(
    scores: &[f64],
    grades: &[u32],
    sigma: f64,
    truncation: Truncation,
    gradients: &mut [f64],
    hessians: &mut [f64],
) {
    let n = scores.len();
    if n < 2 {
        return;
    }
    let k = truncation.cutoff(n);
    let ideal = ideal_dcg(grades, k);
    if ideal == 0.0 {
        return;
    }
    let pos = positions_by_score(scores);
    let disc = |p: usize| if p <= k { discount(p) } else { 0.0 };
    for i in 0..n {
        for j in 0..n {
            if grades[i] <= grades[j] {
                continue;
            }
            let delta = (gain(grades[i]) - gain(grades[j])).abs() * (disc(pos[i]) - disc(pos[j])).abs() / ideal;
            if delta == 0.0 {
                continue;
            }
            let rho = 1.0 / (1.0 + (sigma * (scores[i] - scores[j])).exp());
            let lambda = sigma * rho * delta;
            let h = sigma * sigma * rho * (1.0 - rho) * delta;
            gradients[i] += lambda;
            gradients[j] -= lambda;
            hessians[i] += h;
            hessians[j] += h;
        }
    }
}

pub fn compute_lambdas(scores: &[f64], grades: &[u32], sigma: f64, truncation: Truncation) -> Result<Lambdas> {
    if scores.len() != grades.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            actual: grades.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("lambdas of an empty query".into()));
    }
    let mut out = Lambdas {
        gradients: vec![0.0; scores.len()],
        hessians: vec![0.0; scores.len()],
    };
    accumulate_lambdas(scores, grades, sigma, truncation, &mut out.gradients, &mut out.hessians);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_documents() {
        let l = compute_lambdas(&[0.0, 0.0], &[1, 0], 1.0, Truncation::Full).unwrap();
        // rho = 0.5, |dNDCG| = 1 - 1/log2(3)
        let delta = 1.0 - 1.0 / 3f64.log2();
        assert!((l.gradients[0] - 0.5 * delta).abs() < 1e-12);
        assert!((l.gradients[0] - 0.18454).abs() < 1e-5);
        assert!((l.gradients[1] + 0.18454).abs() < 1e-5);
        assert!((l.hessians[0] - 0.09227).abs() < 1e-5);
        assert_eq!(l.hessians[0], l.hessians[1]);
    }

    #[test]
    fn no_discordant_pairs() {
        let l = compute_lambdas(&[0.3, -1.0, 2.0], &[2, 2, 2], 1.0, Truncation::Full).unwrap();
        assert!(l.gradients.iter().chain(&l.hessians).all(|&v| v == 0.0));
        let single = compute_lambdas(&[1.0], &[1], 1.0, Truncation::Full).unwrap();
        assert_eq!(single.gradients, vec![0.0]);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            compute_lambdas(&[0.0], &[1, 0], 1.0, Truncation::Full),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn tie_break_by_index() {
        assert_eq!(positions_by_score(&[1.0, 2.0, 1.0]), vec![2, 1, 3]);
    }

    proptest! {
        #[test]
        fn antisymmetric_and_signed(
            docs in prop::collection::vec((-3.0f64..3.0, 0u32..4), 1..50),
            sigma in 0.1f64..3.0,
        ) {
            let (scores, grades): (Vec<f64>, Vec<u32>) = docs.into_iter().unzip();
            let l = compute_lambdas(&scores, &grades, sigma, Truncation::Full).unwrap();
            let total: f64 = l.gradients.iter().sum();
            let scale: f64 = l.gradients.iter().map(|g| g.abs()).sum::<f64>().max(1.0);
            prop_assert!(total.abs() <= 1e-12 * scale);
            prop_assert!(l.hessians.iter().all(|&h| h >= 0.0));
            let top = *grades.iter().max().unwrap();
            for (g, &grade) in l.gradients.iter().zip(&grades) {
                if grade == top {
                    prop_assert!(*g >= 0.0);
                }
            }
        }
    }
}
