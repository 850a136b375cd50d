//! Picking the informative cycles of a long capacity curve.

/// 1-based cycle indices: first and last, then the `k − 2` interior cycles with
/// the largest |second difference| of `capacities` (ties to the lower index),
/// sorted ascending. Asking for more cycles than exist returns them all.
pub fn select_cycle_indices(capacities: &[f64], k: usize) -> Vec<usize> {
    let n = capacities.len();
    if k >= n {
        return (1..=n).collect();
    }
    let mut chosen = vec![1, n];
    let mut interior: Vec<(usize, f64)> = (1..n - 1)
        .map(|i| (i + 1, (capacities[i - 1] - 2.0 * capacities[i] + capacities[i + 1]).abs()))
        .collect();
    interior.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    chosen.extend(interior.iter().take(k.saturating_sub(2)).map(|&(c, _)| c));
    chosen.sort_unstable();
    chosen.dedup();
    chosen
}
