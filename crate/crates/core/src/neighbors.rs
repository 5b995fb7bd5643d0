//! Brute-force Euclidean nearest neighbours with index tie-breaking.

use std::cmp::Ordering;

/// Squared Euclidean distance.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` candidates nearest to `query`, closest first; equal distances are
/// ordered by index. `exclude` is skipped (typically the query's own index).
pub fn k_nearest<'a, F>(
    candidates: &[usize],
    row: F,
    query: &[f64],
    k: usize,
    exclude: Option<usize>,
) -> Vec<usize>
where
    F: Fn(usize) -> &'a [f64],
{
    let mut dist: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&i| Some(i) != exclude)
        .map(|&i| (squared_distance(row(i), query), i))
        .collect();
    let k = k.min(dist.len());
    if k == 0 {
        return Vec::new();
    }
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, by_distance_then_index);
        dist.truncate(k);
    }
    dist.sort_unstable_by(by_distance_then_index);
    dist.into_iter().map(|(_, i)| i).collect()
}
