//! Per-bucket sampling.
//!
//! [`bst_sample`] lays each bucket's sorted entries out as a balanced binary
//! search tree (the root is the middle entry of every subrange) and keeps
//! the shallowest levels `1..=ℓ` whose variance ratio
//! `ϑ_ℓ = var(levels 1..=ℓ) / var(whole tree)` reaches `ε`. [`cap_sample`] is
//! the uniform at-most-k-per-bucket baseline, and [`target_sample`] searches
//! `ε` for a global sample size.

use std::collections::VecDeque;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{FeatureMatrix, PatchId};
use crate::hashindex::{Bucket, Entry, HashTable};
use crate::{Error, Result};

const TARGET_BISECTION_STEPS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeNode {
    pub entry: Entry,
    /// Root is depth 1.
    pub depth: u32,
    pub left: Option<usize>,
    pub right: Option<usize>,
}

/// Balanced BST over one bucket. Nodes are stored in breadth-first order, so
/// the nodes at depths `1..=ℓ` form a prefix of [`BucketTree::nodes`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketTree {
    key: u64,
    nodes: Vec<TreeNode>,
    /// `level_ends[ℓ - 1]` is the number of nodes at depth ≤ ℓ.
    level_ends: Vec<usize>,
}

pub fn build_bucket_tree(bucket: &Bucket) -> Result<BucketTree> {
    let entries = &bucket.entries;
    if entries.is_empty() {
        return Err(Error::Contract(format!("bucket {:#x} is empty", bucket.key)));
    }
    if !bucket.is_sorted() {
        return Err(Error::Contract(format!("bucket {:#x} is not sorted", bucket.key)));
    }

    let mut nodes: Vec<TreeNode> = Vec::with_capacity(entries.len());
    // (lo, hi, depth, parent slot to patch: (parent index, is_left))
    let mut queue: VecDeque<(usize, usize, u32, Option<(usize, bool)>)> = VecDeque::new();
    queue.push_back((0, entries.len(), 1, None));
    while let Some((lo, hi, depth, parent)) = queue.pop_front() {
        if lo >= hi {
            continue;
        }
        let mid = lo + (hi - lo - 1) / 2;
        let idx = nodes.len();
        nodes.push(TreeNode {
            entry: entries[mid],
            depth,
            left: None,
            right: None,
        });
        match parent {
            Some((p, true)) => nodes[p].left = Some(idx),
            Some((p, false)) => nodes[p].right = Some(idx),
            None => {}
        }
        queue.push_back((lo, mid, depth + 1, Some((idx, true))));
        queue.push_back((mid + 1, hi, depth + 1, Some((idx, false))));
    }

    let height = nodes.last().map_or(0, |n| n.depth);
    let level_ends = (1..=height)
        .map(|l| nodes.partition_point(|n| n.depth <= l))
        .collect();
    Ok(BucketTree {
        key: bucket.key,
        nodes,
        level_ends,
    })
}

impl BucketTree {
    pub fn key(&self) -> u64 {
        self.key
    }

    /// Number of levels, `⌈log2(len + 1)⌉`.
    pub fn height(&self) -> u32 {
        self.level_ends.len() as u32
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Nodes at exactly depth `level`.
    pub fn level_count(&self, level: u32) -> usize {
        match level {
            0 => 0,
            1 => self.level_ends.first().copied().unwrap_or(0),
            l => {
                let l = l as usize;
                match self.level_ends.get(l - 1) {
                    Some(end) => end - self.level_ends[l - 2],
                    None => 0,
                }
            }
        }
    }

    /// All nodes at depths `1..=level`, breadth first.
    pub fn level_order(&self, level: u32) -> Result<&[TreeNode]> {
        self.check_level(level)?;
        Ok(&self.nodes[..self.level_ends[level as usize - 1]])
    }

    /// Entries in in-order (left, node, right) sequence.
    pub fn in_order(&self) -> Vec<Entry> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = Vec::new();
        let mut cur = Some(0);
        while cur.is_some() || !stack.is_empty() {
            while let Some(i) = cur {
                stack.push(i);
                cur = self.nodes[i].left;
            }
            let i = stack.pop().expect("stack is nonempty");
            out.push(self.nodes[i].entry);
            cur = self.nodes[i].right;
        }
        out
    }

    fn check_level(&self, level: u32) -> Result<()> {
        if level == 0 || level > self.height() {
            return Err(Error::Contract(format!(
                "level {level} outside 1..={} for bucket {:#x}",
                self.height(),
                self.key
            )));
        }
        Ok(())
    }
}

/// Total population variance of a set of rows: the trace of their covariance
/// with `1/n` normalization. Identical rows give exactly 0.
pub fn total_variance<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    let rows: Vec<&[f64]> = rows.into_iter().collect();
    let Some(first) = rows.first() else { return 0.0 };
    let n = rows.len() as f64;
    let d = first.len();
    // Shift by the first row so identical rows cancel exactly.
    let mut mean = vec![0.0; d];
    for r in &rows {
        for j in 0..d {
            mean[j] += r[j] - first[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut sum = 0.0;
    for r in &rows {
        for j in 0..d {
            let dev = (r[j] - first[j]) - mean[j];
            sum += dev * dev;
        }
    }
    sum / n
}

fn node_rows<'a>(nodes: &'a [TreeNode], features: &'a FeatureMatrix) -> Result<Vec<&'a [f64]>> {
    nodes
        .iter()
        .map(|n| {
            features.row_of(n.entry.patch_id).ok_or_else(|| {
                Error::Contract(format!("patch {} has no feature row", n.entry.patch_id))
            })
        })
        .collect()
}

/// `ϑ_ℓ` for one level. A tree with zero total variance has `ϑ_ℓ = 1` for
/// every level.
pub fn variance_ratio(tree: &BucketTree, level: u32, features: &FeatureMatrix) -> Result<f64> {
    tree.check_level(level)?;
    let all = node_rows(&tree.nodes, features)?;
    let whole = total_variance(all.iter().copied());
    if whole == 0.0 {
        return Ok(1.0);
    }
    let end = tree.level_ends[level as usize - 1];
    Ok(total_variance(all[..end].iter().copied()) / whole)
}

/// `[ϑ_1, ..., ϑ_L]`.
pub fn variance_profile(tree: &BucketTree, features: &FeatureMatrix) -> Result<Vec<f64>> {
    let all = node_rows(&tree.nodes, features)?;
    let whole = total_variance(all.iter().copied());
    if whole == 0.0 {
        return Ok(vec![1.0; tree.height() as usize]);
    }
    Ok(tree
        .level_ends
        .iter()
        .map(|&end| total_variance(all[..end].iter().copied()) / whole)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleMode {
    Epsilon(f64),
    Target { target: usize, epsilon: f64 },
    Cap { cap: usize, seed: u64 },
}

/// What one bucket contributed.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketSelection {
    pub key: u64,
    pub size: usize,
    /// Deepest level kept (tree sampler only).
    pub level: Option<u32>,
    /// `ϑ` at that level (tree sampler only).
    pub variance_ratio: Option<f64>,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    /// Selected patch ids, ascending, no duplicates.
    pub selected: Vec<PatchId>,
    /// One row per bucket, ascending key.
    pub per_bucket: Vec<BucketSelection>,
    pub mode: SampleMode,
    pub prefix_len: u32,
}

impl SampleResult {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn contains(&self, id: PatchId) -> bool {
        self.selected.binary_search(&id).is_ok()
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Config(format!("epsilon must be in (0, 1], got {epsilon}")));
    }
    Ok(())
}

/// A bucket's tree with its full variance profile, reusable across thresholds.
struct Scanned {
    tree: BucketTree,
    profile: Vec<f64>,
}

impl Scanned {
    /// First level whose ratio reaches `epsilon`, else the last level.
    fn chosen_level(&self, epsilon: f64) -> u32 {
        self.profile
            .iter()
            .position(|&r| r >= epsilon)
            .map_or(self.tree.height(), |i| i as u32 + 1)
    }

    fn kept(&self, epsilon: f64) -> usize {
        self.tree.level_ends[self.chosen_level(epsilon) as usize - 1]
    }
}

fn scan_table(table: &HashTable, features: &FeatureMatrix) -> Result<Vec<Scanned>> {
    let buckets: Vec<&Bucket> = table.read_buckets().collect();
    buckets
        .par_iter()
        .map(|b| {
            let tree = build_bucket_tree(b)?;
            let profile = variance_profile(&tree, features)?;
            Ok(Scanned { tree, profile })
        })
        .collect()
}

fn assemble(scanned: &[Scanned], epsilon: f64, mode: SampleMode, prefix_len: u32) -> SampleResult {
    let mut selected = Vec::new();
    let mut per_bucket = Vec::with_capacity(scanned.len());
    for s in scanned {
        let level = s.chosen_level(epsilon);
        let kept = &s.tree.nodes[..s.tree.level_ends[level as usize - 1]];
        selected.extend(kept.iter().map(|n| n.entry.patch_id));
        per_bucket.push(BucketSelection {
            key: s.tree.key,
            size: s.tree.len(),
            level: Some(level),
            variance_ratio: Some(s.profile[level as usize - 1]),
            selected: kept.len(),
        });
    }
    selected.sort_unstable();
    SampleResult {
        selected,
        per_bucket,
        mode,
        prefix_len,
    }
}

/// Tree sampler with threshold `epsilon ∈ (0, 1]`.
pub fn bst_sample(table: &HashTable, features: &FeatureMatrix, epsilon: f64) -> Result<SampleResult> {
    check_epsilon(epsilon)?;
    let scanned = scan_table(table, features)?;
    Ok(assemble(&scanned, epsilon, SampleMode::Epsilon(epsilon), table.prefix_len()))
}

/// At most `cap` entries per bucket, drawn uniformly without replacement.
/// Bucket `key` draws from ChaCha8 stream `key` of `seed`.
pub fn cap_sample(table: &HashTable, cap: usize, seed: u64) -> Result<SampleResult> {
    if cap == 0 {
        return Err(Error::Config("cap must be at least 1".into()));
    }
    let mut selected = Vec::new();
    let mut per_bucket = Vec::with_capacity(table.num_buckets());
    for b in table.read_buckets() {
        let before = selected.len();
        if b.len() <= cap {
            selected.extend(b.entries.iter().map(|e| e.patch_id));
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b.key);
            selected.extend(index::sample(&mut rng, b.len(), cap).iter().map(|i| b.entries[i].patch_id));
        }
        per_bucket.push(BucketSelection {
            key: b.key,
            size: b.len(),
            level: None,
            variance_ratio: None,
            selected: selected.len() - before,
        });
    }
    selected.sort_unstable();
    Ok(SampleResult {
        selected,
        per_bucket,
        mode: SampleMode::Cap { cap, seed },
        prefix_len: table.prefix_len(),
    })
}

/// Bisects `ε` so the tree sampler keeps as close to `target` patches as
/// possible; ties prefer the smaller sample.
///
/// The kept count never decreases as `ε` grows, since a higher threshold
/// can only push each bucket's first qualifying level deeper.
pub fn target_sample(table: &HashTable, features: &FeatureMatrix, target: usize) -> Result<SampleResult> {
    let (lo_bound, hi_bound) = (table.num_buckets(), table.total_entries());
    if target < lo_bound || target > hi_bound || target == 0 {
        return Err(Error::Config(format!(
            "target {target} outside the achievable range [{lo_bound}, {hi_bound}]"
        )));
    }
    let scanned = scan_table(table, features)?;
    let count = |eps: f64| scanned.iter().map(|s| s.kept(eps)).sum::<usize>();

    let closer = |c: usize, best: (f64, usize)| {
        let (d_new, d_best) = (c.abs_diff(target), best.1.abs_diff(target));
        d_new < d_best || (d_new == d_best && c < best.1)
    };
    let mut best = (1.0, count(1.0));
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..TARGET_BISECTION_STEPS {
        if best.1 == target {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let c = count(mid);
        if closer(c, best) {
            best = (mid, c);
        }
        if c < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let epsilon = best.0;
    Ok(assemble(
        &scanned,
        epsilon,
        SampleMode::Target { target, epsilon },
        table.prefix_len(),
    ))
}

/// Depth of every entry in its bucket's tree, as `(patch_id, bucket key,
/// depth)` sorted by patch id.
pub fn entry_depths(table: &HashTable) -> Result<Vec<(PatchId, u64, u32)>> {
    let mut rows = Vec::with_capacity(table.total_entries());
    for b in table.read_buckets() {
        let tree = build_bucket_tree(b)?;
        rows.extend(tree.nodes.iter().map(|n| (n.entry.patch_id, b.key, n.depth)));
    }
    rows.sort_unstable_by_key(|r| r.0);
    Ok(rows)
}

/// Selection manifest: `patch_id,bucket_key_hex,level,selected`, one row per
/// patch in the table, ascending patch id. `level` is the patch's depth in
/// its bucket tree.
pub fn write_selection_csv(table: &HashTable, result: &SampleResult, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut buf = Vec::new();
    writeln!(buf, "patch_id,bucket_key_hex,level,selected").expect("write to Vec");
    for (id, key, depth) in entry_depths(table)? {
        writeln!(
            buf,
            "{id},{},{depth},{}",
            table.key_hex(key),
            u8::from(result.contains(id))
        )
        .expect("write to Vec");
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
