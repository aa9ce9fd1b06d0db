//! Partition agreement measures.

use std::collections::HashMap;
use std::hash::Hash;

fn pairs(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand Index between two labelings of the same items.
///
/// Returns 1.0 for identical partitions (up to relabeling). When both
/// partitions are trivial the index is defined as 1.0.
pub fn adjusted_rand_index<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len();
    let mut contingency: HashMap<(&A, &B), usize> = HashMap::new();
    let mut rows: HashMap<&A, usize> = HashMap::new();
    let mut cols: HashMap<&B, usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *contingency.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = contingency.values().map(|&c| pairs(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| pairs(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Share of a group's members carrying its most common reference label.
pub fn group_purity<L: Eq + Hash>(reference_labels: &[L]) -> f64 {
    if reference_labels.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&L, usize> = HashMap::new();
    for l in reference_labels {
        *counts.entry(l).or_default() += 1;
    }
    *counts.values().max().unwrap() as f64 / reference_labels.len() as f64
}
