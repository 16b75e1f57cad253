use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cutoff for NDCG and for the lambda weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truncation {
    #[default]
    Full,
    At(usize),
}

impl Truncation {
    pub fn cutoff(self, n: usize) -> usize {
        match self {
            Truncation::Full => n,
            Truncation::At(k) => k.min(n),
        }
    }
}

impl fmt::Display for Truncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Truncation::Full => f.write_str("full"),
            Truncation::At(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for Truncation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(Truncation::Full),
            k => match k.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(Truncation::At(k)),
                _ => Err(Error::InvalidConfig(format!("bad NDCG truncation {s:?}"))),
            },
        }
    }
}

#[inline]
pub(crate) fn gain(grade: u32) -> f64 {
    (2f64).powi(grade as i32) - 1.0
}

/// 1 / log2(position + 1) for 1-based positions.
#[inline]
pub(crate) fn discount(position: usize) -> f64 {
    1.0 / ((position + 1) as f64).log2()
}

pub(crate) fn dcg(grades: &[u32], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) * discount(i + 1))
        .sum()
}

pub(crate) fn ideal_dcg(grades: &[u32], k: usize) -> f64 {
    let mut sorted = grades.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    dcg(&sorted, k)
}

pub(crate) fn ndcg_unchecked(grades: &[u32], truncation: Truncation) -> f64 {
    let k = truncation.cutoff(grades.len());
    let ideal = ideal_dcg(grades, k);
    if ideal == 0.0 {
        return 1.0;
    }
    (dcg(grades, k) / ideal).min(1.0)
}

/// NDCG of grades listed in predicted order. A list with no relevant item scores 1.
pub fn ndcg<G: Copy + Into<i64>>(grades_in_predicted_order: &[G], truncation: Truncation) -> Result<f64> {
    if grades_in_predicted_order.is_empty() {
        return Err(Error::InvalidInput("NDCG of an empty list".into()));
    }
    let grades = grades_in_predicted_order
        .iter()
        .map(|&g| {
            let g: i64 = g.into();
            u32::try_from(g).map_err(|_| Error::InvalidInput(format!("grade {g} is not a nonnegative integer")))
        })
        .collect::<Result<Vec<u32>>>()?;
    Ok(ndcg_unchecked(&grades, truncation))
}
