use serde::Serialize;

use scenic_core::strategy::BloomLevel;

use crate::{ContingencyTable, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BloomRow {
    pub condition: String,
    pub n: usize,
    /// Counts in `BloomLevel::ALL` order.
    pub counts: Vec<u64>,
    pub percents: Vec<f64>,
    pub higher_order: u64,
    pub higher_order_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct BloomTable {
    pub rows: Vec<BloomRow>,
}

/// Per-condition level distribution. Conditions keep first-seen order.
pub fn bloom_table(labeled: &[(String, BloomLevel)]) -> BloomTable {
    let mut rows: Vec<BloomRow> = Vec::new();
    for (cond, level) in labeled {
        let idx = match rows.iter().position(|r| &r.condition == cond) {
            Some(i) => i,
            None => {
                rows.push(BloomRow {
                    condition: cond.clone(),
                    n: 0,
                    counts: vec![0; 6],
                    percents: vec![0.0; 6],
                    higher_order: 0,
                    higher_order_pct: 0.0,
                });
                rows.len() - 1
            }
        };
        let row = &mut rows[idx];
        row.n += 1;
        row.counts[(level.rank() - 1) as usize] += 1;
        if level.is_higher_order() {
            row.higher_order += 1;
        }
    }
    for r in &mut rows {
        let n = r.n as f64;
        r.percents = r.counts.iter().map(|&c| 100.0 * c as f64 / n).collect();
        r.higher_order_pct = 100.0 * r.higher_order as f64 / n;
    }
    BloomTable { rows }
}

impl BloomTable {
    /// 2 x k table: higher-order counts over lower-order counts, one column
    /// per condition.
    pub fn higher_lower(&self) -> Result<ContingencyTable, StatsError> {
        ContingencyTable::new(
            vec!["higher-order".into(), "lower-order".into()],
            self.rows.iter().map(|r| r.condition.clone()).collect(),
            vec![
                self.rows.iter().map(|r| r.higher_order).collect(),
                self.rows.iter().map(|r| r.n as u64 - r.higher_order).collect(),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_remember_is_lower_order() {
        let t = bloom_table(&vec![("x".to_string(), BloomLevel::Remember); 4]);
        assert_eq!(t.rows[0].higher_order_pct, 0.0);
        assert_eq!(t.rows[0].percents[0], 100.0);
    }

    #[test]
    fn empty_input() {
        assert!(bloom_table(&[]).rows.is_empty());
    }
}
