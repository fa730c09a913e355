//! Partition-comparison metrics: the Adjusted Rand Index.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Pairs `n choose 2` in wide integer arithmetic.
fn choose2(n: u64) -> u128 {
    (n as u128) * (n as u128 - 1) / 2
}

/// Adjusted Rand Index between two labelings of the same items.
///
/// Label values need not be contiguous or shared between the two vectors.
/// Returns 1.0 when both partitions are trivial in the same way (the
/// chance-adjustment denominator vanishes).
pub fn ari(u: &[usize], v: &[usize]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "label vectors have different lengths: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let n = u.len();
    if n < 2 {
        return Err(Error::NotEnoughData("ARI needs at least 2 items".into()));
    }

    let mut contingency: HashMap<(usize, usize), u64> = HashMap::new();
    let mut row_sums: HashMap<usize, u64> = HashMap::new();
    let mut col_sums: HashMap<usize, u64> = HashMap::new();
    for (&a, &b) in u.iter().zip(v.iter()) {
        *contingency.entry((a, b)).or_insert(0) += 1;
        *row_sums.entry(a).or_insert(0) += 1;
        *col_sums.entry(b).or_insert(0) += 1;
    }

    let index: u128 = contingency.values().map(|&c| choose2(c)).sum();
    let sum_rows: u128 = row_sums.values().map(|&c| choose2(c)).sum();
    let sum_cols: u128 = col_sums.values().map(|&c| choose2(c)).sum();
    let total = choose2(n as u64);

    let expected = (sum_rows as f64) * (sum_cols as f64) / (total as f64);
    let max_index = 0.5 * (sum_rows as f64 + sum_cols as f64);
    let denom = max_index - expected;
    if denom.abs() < f64::EPSILON * (1.0 + max_index) {
        // both partitions trivial: identical by convention
        return Ok(1.0);
    }
    Ok((index as f64 - expected) / denom)
}
