//! Synthetic corpora.

use patchsift_core::dataset::{
    Dtype, FeatureConfig, FeatureMatrix, Label, Patch, PatchSet, PatchShape, Samples,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draw (Box-Muller).
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn features(rows: &[Vec<f64>]) -> FeatureMatrix {
    FeatureMatrix::from_rows((0..rows.len() as u64).collect(), rows, FeatureConfig::default())
        .expect("valid rows")
}

/// Two Gaussian clusters of `per_cluster` points in `dim` dimensions with
/// centers `gap` apart and per-coordinate spread `sigma`.
pub fn two_clusters(seed: u64, dim: usize, per_cluster: usize, gap: f64, sigma: f64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let offset = gap / (dim as f64).sqrt();
    let mut rows = Vec::with_capacity(2 * per_cluster);
    for center in [0.0, offset] {
        for _ in 0..per_cluster {
            rows.push((0..dim).map(|_| center + sigma * normal(&mut r)).collect());
        }
    }
    rows
}

/// `unique` distinct random u8 patches, each repeated `copies` times.
///
/// Copies are interleaved (`id = copy * unique + u`) so duplicates are never
/// adjacent by id. Labels alternate settle / non_settle by unique index.
pub fn duplicated_patches(seed: u64, unique: usize, copies: usize, side: u32) -> PatchSet {
    let originals: Vec<Vec<u8>> = textured_patches(seed, unique, side)
        .patches()
        .iter()
        .map(|p| match &p.samples {
            Samples::U8(px) => px.clone(),
            Samples::F32(_) => unreachable!("textured patches are u8"),
        })
        .collect();
    let mut patches = Vec::with_capacity(unique * copies);
    for copy in 0..copies {
        for (u, px) in originals.iter().enumerate() {
            patches.push(Patch {
                id: (copy * unique + u) as u64,
                samples: Samples::U8(px.clone()),
                label: if u % 2 == 0 { Label::Settle } else { Label::NonSettle },
                tile_id: format!("tile{}", u % 4),
                origin: ((u as u64 % 32) * side as u64, (u as u64 / 32) * side as u64),
            });
        }
    }
    PatchSet::new(PatchShape::new(side, side, 1, Dtype::U8), patches).expect("valid set")
}

/// `n` patches with smooth random content: a random base level, gradient and
/// noise, so nearby patches in parameter space look alike.
pub fn textured_patches(seed: u64, n: usize, side: u32) -> PatchSet {
    let mut r = rng(seed);
    let patches = (0..n)
        .map(|i| {
            let base: f64 = r.gen_range(0.0..160.0);
            let gx: f64 = r.gen_range(-6.0..6.0);
            let gy: f64 = r.gen_range(-6.0..6.0);
            let px = (0..side * side)
                .map(|k| {
                    let (y, x) = ((k / side) as f64, (k % side) as f64);
                    let v = base + gx * x + gy * y + 8.0 * normal(&mut r);
                    v.clamp(0.0, 255.0) as u8
                })
                .collect();
            Patch {
                id: i as u64,
                samples: Samples::U8(px),
                label: if base < 80.0 { Label::Settle } else { Label::NonSettle },
                tile_id: "synthetic".into(),
                origin: (0, 0),
            }
        })
        .collect();
    PatchSet::new(PatchShape::new(side, side, 1, Dtype::U8), patches).expect("valid set")
}
