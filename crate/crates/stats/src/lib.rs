//! Statistics for evaluating generated prompts and user studies:
//! contingency tests, rank tests, descriptive and effect-size arithmetic.

mod bloom;
mod contingency;
pub mod fixtures;
mod parametric;
mod rank;

use serde::Serialize;
use thiserror::Error;

pub use bloom::{bloom_table, BloomRow, BloomTable};
pub use contingency::{chi_square, ContingencyTable};
pub use parametric::{cohens_d, cohens_d_from_summary, describe, paired_t, Descriptive};
pub use rank::{kruskal_wallis, mann_whitney_u, midranks, EXACT_LIMIT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("table must be at least 2x2, got {rows}x{cols}")]
    TableShape { rows: usize, cols: usize },
    #[error("row {row} has {found} counts, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("{which} marginal {index} is zero")]
    ZeroMarginal { which: &'static str, index: usize },
    #[error("sample {0} is empty")]
    EmptySample(&'static str),
    #[error("need at least 2 observations, got {0}")]
    TooFew(usize),
    #[error("samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("standard deviation is zero")]
    ZeroSpread,
    #[error("non-finite observation")]
    NonFinite,
}

/// One test outcome. `df` is absent for statistics without degrees of freedom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatResult {
    pub method: String,
    pub statistic: f64,
    pub df: Option<f64>,
    pub p: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl StatResult {
    fn new(method: &str, statistic: f64, df: Option<f64>, p: f64, n: usize) -> Self {
        Self {
            method: method.to_string(),
            statistic,
            df,
            p: p.clamp(0.0, 1.0),
            n,
            note: None,
        }
    }
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}
