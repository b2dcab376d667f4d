//! Threshold sweeps and the NDCG ranking metric.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};

/// Ground-truth lookup: `None` when the item is not covered, `Some(None)`
/// when the item belongs to no category.
pub trait Truth {
    fn true_category(&self, item_id: &str) -> Option<Option<u32>>;
}

impl Truth for HashMap<String, Option<u32>> {
    fn true_category(&self, item_id: &str) -> Option<Option<u32>> {
        self.get(item_id).copied()
    }
}

/// Fraction of pairs whose label matches the truth, over the whole dataset.
/// `None` for an empty dataset or when some item is not covered.
pub fn exact_accuracy<T: Truth + ?Sized>(dataset: &LabeledDataset, truth: &T) -> Option<f64> {
    if dataset.is_empty() {
        return None;
    }
    let mut correct = 0usize;
    for img in dataset.items() {
        match truth.true_category(&img.item_id)? {
            Some(c) if c == img.category_id => correct += 1,
            _ => {}
        }
    }
    Some(correct as f64 / dataset.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub quantity: usize,
    pub accuracy: Option<f64>,
}

/// Builds one dataset per threshold and records its size and, when truth is
/// given, its full-population accuracy.
pub fn sweep<F>(build: F, grid: &[f64], truth: Option<&dyn Truth>) -> Result<Vec<SweepPoint>>
where
    F: Fn(f64) -> Result<LabeledDataset>,
{
    for &t in grid {
        crate::check_unit("threshold", t)?;
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("sweep grid must be sorted ascending".into()));
    }
    grid.iter()
        .map(|&threshold| {
            let ds = build(threshold)?;
            Ok(SweepPoint {
                threshold,
                quantity: ds.len(),
                accuracy: truth.and_then(|t| exact_accuracy(&ds, t)),
            })
        })
        .collect()
}

/// `threshold quantity accuracy`, tab-separated, with a header line.
pub fn sweep_to_tsv(points: &[SweepPoint]) -> String {
    let mut out = String::from("threshold\tquantity\taccuracy\n");
    for p in points {
        let acc = p
            .accuracy
            .map_or_else(|| "NA".to_owned(), |a| format!("{a:.6}"));
        let _ = writeln!(out, "{}\t{}\t{}", p.threshold, p.quantity, acc);
    }
    out
}

/// Graded relevances of a ranked list, best rank first. Grades are
/// Excellent = 3, Good = 2, Bad = 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList(Vec<u8>);

impl RankedList {
    pub const GRADES: [u8; 3] = [0, 2, 3];

    pub fn new(grades: Vec<u8>) -> Result<Self> {
        if grades.is_empty() {
            return Err(Error::Config("ranked list is empty".into()));
        }
        if let Some(g) = grades.iter().find(|g| !Self::GRADES.contains(g)) {
            return Err(Error::Config(format!(
                "relevance grade {g} is not one of 0, 2, 3"
            )));
        }
        Ok(RankedList(grades))
    }

    pub fn grades(&self) -> &[u8] {
        &self.0
    }
}

fn dcg(grades: &[u8], depth: usize) -> f64 {
    grades
        .iter()
        .take(depth)
        .enumerate()
        .map(|(idx, &r)| ((1u32 << r) - 1) as f64 / ((idx + 2) as f64).ln())
        .sum()
}

/// NDCG at depth `d`, truncated at the list length. A list without any
/// relevant entry scores 0.
pub fn ndcg(list: &RankedList, depth: usize) -> Result<f64> {
    if depth < 1 {
        return Err(Error::Config("ndcg depth must be at least 1".into()));
    }
    let mut ideal = list.0.clone();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let ideal_dcg = dcg(&ideal, depth);
    if ideal_dcg == 0.0 {
        return Ok(0.0);
    }
    Ok((dcg(&list.0, depth) / ideal_dcg).min(1.0))
}

/// One NDCG query line: a comma-separated grade list and a depth,
/// separated by whitespace, e.g. `2,3,0 3`.
pub fn parse_ndcg_query(line: &str) -> std::result::Result<(RankedList, usize), String> {
    let mut parts = line.split_whitespace();
    let (Some(grades), Some(depth), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err("expected `<grades> <depth>`".into());
    };
    let grades = grades
        .split(',')
        .map(|g| {
            g.trim()
                .parse::<u8>()
                .map_err(|e| format!("grade {g:?}: {e}"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let depth: usize = depth.parse().map_err(|e| format!("depth {depth:?}: {e}"))?;
    if depth == 0 {
        return Err("depth must be at least 1".into());
    }
    let list = RankedList::new(grades).map_err(|e| e.to_string())?;
    Ok((list, depth))
}
