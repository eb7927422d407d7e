//! Brute-force tree sampler.
//!
//! Works on one bucket given as a list of `(sort_key, patch_id, row)`. It
//! sorts the list itself, assigns each sorted position its depth in the
//! median-split tree by direct recursion, and scans depths 1..=L with a
//! textbook population variance.

/// Depth (root = 1) of every position in `0..len` for the tree whose root is
/// the element at `(len - 1) / 2` of each subrange.
pub fn depths(len: usize) -> Vec<u32> {
    fn assign(lo: usize, hi: usize, depth: u32, out: &mut [u32]) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo - 1) / 2;
        out[mid] = depth;
        assign(lo, mid, depth + 1, out);
        assign(mid + 1, hi, depth + 1, out);
    }
    let mut out = vec![0; len];
    assign(0, len, 1, &mut out);
    out
}

/// Sum over coordinates of the population variance, computed directly from
/// the definition.
fn total_variance(rows: &[&[f64]]) -> f64 {
    let n = rows.len() as f64;
    let d = rows.first().map_or(0, |r| r.len());
    (0..d)
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n
        })
        .sum()
}

/// Patch ids kept for one bucket at threshold `epsilon`, sorted ascending.
/// Entries are `(sort_key, patch_id, value)` with one-dimensional values.
pub fn sample_bucket(entries: &[(u64, u64, f64)], epsilon: f64) -> Vec<u64> {
    let rows: Vec<(u64, u64, Vec<f64>)> = entries.iter().map(|&(k, id, v)| (k, id, vec![v])).collect();
    sample_bucket_rows(&rows, epsilon)
}

/// [`sample_bucket`] for feature rows of any dimension.
pub fn sample_bucket_rows(entries: &[(u64, u64, Vec<f64>)], epsilon: f64) -> Vec<u64> {
    let mut sorted: Vec<&(u64, u64, Vec<f64>)> = entries.iter().collect();
    sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let depth = depths(sorted.len());
    let height = depth.iter().copied().max().unwrap_or(0);
    let rows_to = |level: u32| -> Vec<&[f64]> {
        sorted
            .iter()
            .zip(&depth)
            .filter(|(_, &d)| d <= level)
            .map(|(e, _)| e.2.as_slice())
            .collect()
    };
    let all = total_variance(&rows_to(height));
    // Zero total variance happens exactly when every row is the same.
    let constant = sorted.iter().all(|e| e.2 == sorted[0].2);
    let mut chosen = height;
    for level in 1..=height {
        let ratio = if constant { 1.0 } else { total_variance(&rows_to(level)) / all };
        if ratio >= epsilon {
            chosen = level;
            break;
        }
    }
    let mut ids: Vec<u64> = sorted
        .iter()
        .zip(&depth)
        .filter(|(_, &d)| d <= chosen)
        .map(|(e, _)| e.1)
        .collect();
    ids.sort_unstable();
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depths_of_small_trees() {
        assert_eq!(depths(1), vec![1]);
        assert_eq!(depths(3), vec![2, 1, 2]);
        assert_eq!(depths(4), vec![2, 1, 2, 3]);
        let d31 = depths(31);
        for level in 1..=5u32 {
            assert_eq!(d31.iter().filter(|&&d| d == level).count(), 1 << (level - 1));
        }
        assert_eq!(d31[15], 1);
    }

    #[test]
    fn three_values_by_hand() {
        // var({5}) = 0 < eps, var({0,5,10}) / itself = 1.
        let entries = [(1, 0, 0.0), (2, 1, 5.0), (3, 2, 10.0)];
        assert_eq!(sample_bucket(&entries, 0.5), vec![0, 1, 2]);
        let same = [(1, 0, 4.0), (1, 1, 4.0), (1, 2, 4.0)];
        assert_eq!(sample_bucket(&same, 1.0), vec![1]);
    }
}
