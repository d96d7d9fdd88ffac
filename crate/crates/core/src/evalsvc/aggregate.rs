use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{PreferenceRecord, SCHEMA_VERSION};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateFilter {
    pub exclude_raters: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n: u64,
    pub wins: u64,
    pub percentage: f64,
}

impl Cell {
    fn new(n: u64, wins: u64) -> Option<Self> {
        (n > 0).then(|| Cell {
            n,
            wins,
            percentage: 100.0 * wins as f64 / n as f64,
        })
    }
}

/// Preference for `first` over `second`. `cells` aligns with the table's
/// categories; `None` means no trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRow {
    pub first: String,
    pub second: String,
    pub cells: Vec<Option<Cell>>,
    /// Pooled over every category.
    pub mean: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideBias {
    pub n: u64,
    pub left_choices: u64,
    pub left_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTable {
    pub schema_version: u32,
    pub categories: Vec<String>,
    pub rows: Vec<PreferenceRow>,
    pub side_bias: SideBias,
    pub excluded_raters: Vec<String>,
    pub records: u64,
}

impl PreferenceTable {
    pub fn row(&self, first: &str, second: &str) -> Option<&PreferenceRow> {
        self.rows.iter().find(|r| r.first == first && r.second == second)
    }

    pub fn cell(&self, first: &str, second: &str, category: &str) -> Option<Cell> {
        let c = self.categories.iter().position(|c| c == category)?;
        self.row(first, second)?.cells[c]
    }
}

/// Win counts for every ordered model pair with at least one trial, split by
/// category tag, plus the left-side choice rate.
pub fn aggregate(records: &[PreferenceRecord], filter: &AggregateFilter) -> PreferenceTable {
    let kept: Vec<&PreferenceRecord> = records.iter().filter(|r| !filter.exclude_raters.contains(&r.rater_id)).collect();
    let categories: Vec<String> = kept
        .iter()
        .map(|r| r.category.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    // (first, second) -> per category (n, wins)
    let mut counts: BTreeMap<(&str, &str), Vec<(u64, u64)>> = BTreeMap::new();
    let mut left = 0u64;
    for r in &kept {
        let c = categories.binary_search(&r.category).expect("category collected above");
        let winner = r.winner();
        for (x, y) in [(&r.model_a, &r.model_b), (&r.model_b, &r.model_a)] {
            let e = counts.entry((x, y)).or_insert_with(|| vec![(0, 0); categories.len()]);
            e[c].0 += 1;
            e[c].1 += u64::from(winner == x.as_str());
        }
        left += u64::from(r.choice == super::Side::Left);
    }
    let rows = counts
        .into_iter()
        .map(|((x, y), per)| {
            let (n, w) = per.iter().fold((0, 0), |(n, w), c| (n + c.0, w + c.1));
            PreferenceRow {
                first: x.into(),
                second: y.into(),
                cells: per.iter().map(|&(n, w)| Cell::new(n, w)).collect(),
                mean: Cell::new(n, w),
            }
        })
        .collect();
    let n = kept.len() as u64;
    PreferenceTable {
        schema_version: SCHEMA_VERSION,
        categories,
        rows,
        side_bias: SideBias {
            n,
            left_choices: left,
            left_rate: (n > 0).then(|| left as f64 / n as f64),
        },
        excluded_raters: filter.exclude_raters.iter().cloned().collect(),
        records: n,
    }
}
