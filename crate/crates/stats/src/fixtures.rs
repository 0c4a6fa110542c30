//! Built-in evaluation data sets.
//!
//! Prompt study: each condition produced 54 prompts (9 locations x 6
//! prompts). The published table gives percentages only, so counts are
//! percentage x 54, rounded: e.g. 11.1% x 54 = 6, 24.1% x 54 = 13.

use scenic_core::strategy::BloomLevel;

use crate::{ContingencyTable, StatsError};

pub const PROMPTS_PER_CONDITION: u64 = 54;

pub const CONDITIONS: [&str; 3] = ["SCENIC", "Parent", "LLM"];

/// Remember, Understand, Apply, Analyze, Evaluate, Create.
pub const TABLE3_COUNTS: [[u64; 6]; 3] = [
    [6, 3, 3, 13, 17, 12],
    [29, 9, 5, 4, 5, 2],
    [14, 16, 10, 3, 4, 7],
];

/// Printed percentages, one decimal.
pub const TABLE3_PERCENTS: [[f64; 6]; 3] = [
    [11.1, 5.6, 5.6, 24.1, 31.5, 22.2],
    [53.7, 16.7, 9.3, 7.4, 9.3, 3.7],
    [25.9, 29.6, 18.5, 5.6, 7.4, 13.0],
];

/// Landmark nominations per child.
pub const TABLE5_SCENIC: [f64; 8] = [5.0, 4.0, 8.0, 5.0, 4.0, 5.0, 5.0, 6.0];
pub const TABLE5_PARENT: [f64; 8] = [1.0, 1.0, 3.0, 2.0, 1.0, 3.0, 4.0, 2.0];

/// Engagement score summary compared with the scale midpoint.
pub const ENGAGEMENT_MEAN: f64 = 3.51;
pub const ENGAGEMENT_SD: f64 = 0.30;
pub const ENGAGEMENT_BENCHMARK: f64 = 3.0;
pub const ENGAGEMENT_D_REPORTED: f64 = 1.74;

/// One label per prompt, expanded from the counts.
pub fn table3_labels() -> Vec<(String, BloomLevel)> {
    let mut out = Vec::new();
    for (cond, counts) in CONDITIONS.iter().zip(TABLE3_COUNTS) {
        for (level, &c) in BloomLevel::ALL.iter().zip(counts.iter()) {
            for _ in 0..c {
                out.push((cond.to_string(), *level));
            }
        }
    }
    out
}

/// Higher-order (Analyze, Evaluate, Create) over lower-order counts.
pub fn table3_higher_lower() -> Result<ContingencyTable, StatsError> {
    let higher: Vec<u64> = TABLE3_COUNTS.iter().map(|r| r[3..].iter().sum()).collect();
    let lower: Vec<u64> = TABLE3_COUNTS.iter().map(|r| r[..3].iter().sum()).collect();
    ContingencyTable::new(
        vec!["higher-order".into(), "lower-order".into()],
        CONDITIONS.iter().map(|s| s.to_string()).collect(),
        vec![higher, lower],
    )
}
