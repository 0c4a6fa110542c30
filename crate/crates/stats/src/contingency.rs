use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::{StatResult, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(rows: Vec<String>, cols: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, StatsError> {
        let t = Self { rows, cols, counts };
        t.validate()?;
        Ok(t)
    }

    /// Unlabeled table; rows and columns are numbered.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, StatsError> {
        let r = counts.len();
        let c = counts.first().map_or(0, Vec::len);
        Self::new(
            (0..r).map(|i| format!("r{i}")).collect(),
            (0..c).map(|j| format!("c{j}")).collect(),
            counts,
        )
    }

    fn validate(&self) -> Result<(), StatsError> {
        let rows = self.counts.len();
        let cols = self.counts.first().map_or(0, Vec::len);
        if rows < 2 || cols < 2 {
            return Err(StatsError::TableShape { rows, cols });
        }
        for (i, r) in self.counts.iter().enumerate() {
            if r.len() != cols {
                return Err(StatsError::RaggedRow {
                    row: i,
                    found: r.len(),
                    expected: cols,
                });
            }
        }
        Ok(())
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        (0..self.counts[0].len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.row_totals().iter().sum()
    }

    /// Keeps only the named columns, in the given order.
    pub fn select_cols(&self, idx: &[usize]) -> Result<Self, StatsError> {
        Self::new(
            self.rows.clone(),
            idx.iter().map(|&j| self.cols[j].clone()).collect(),
            self.counts
                .iter()
                .map(|r| idx.iter().map(|&j| r[j]).collect())
                .collect(),
        )
    }
}

/// Pearson chi-square test of independence, without continuity correction.
pub fn chi_square(table: &ContingencyTable) -> Result<StatResult, StatsError> {
    table.validate()?;
    let rt = table.row_totals();
    let ct = table.col_totals();
    if let Some(i) = rt.iter().position(|&t| t == 0) {
        return Err(StatsError::ZeroMarginal { which: "row", index: i });
    }
    if let Some(j) = ct.iter().position(|&t| t == 0) {
        return Err(StatsError::ZeroMarginal { which: "column", index: j });
    }
    let n = table.total() as f64;
    let mut stat = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = rt[i] as f64 * ct[j] as f64 / n;
            stat += (o as f64 - e).powi(2) / e;
        }
    }
    let df = ((rt.len() - 1) * (ct.len() - 1)) as f64;
    let p = ChiSquared::new(df).expect("df >= 1").sf(stat);
    Ok(StatResult::new("pearson chi-square", stat, Some(df), p, n as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_zero() {
        let t = ContingencyTable::from_counts(vec![vec![10, 10], vec![10, 10]]).unwrap();
        let r = chi_square(&t).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_and_marginal_errors() {
        assert!(matches!(
            ContingencyTable::from_counts(vec![vec![1, 2]]),
            Err(StatsError::TableShape { .. })
        ));
        assert!(matches!(
            ContingencyTable::from_counts(vec![vec![1, 2], vec![3]]),
            Err(StatsError::RaggedRow { .. })
        ));
        let t = ContingencyTable::from_counts(vec![vec![0, 2], vec![0, 3]]).unwrap();
        assert_eq!(
            chi_square(&t),
            Err(StatsError::ZeroMarginal { which: "column", index: 0 })
        );
    }
}
