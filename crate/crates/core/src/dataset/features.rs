use std::str::FromStr;

use rayon::prelude::*;

use super::{PatchId, PatchSet, Samples};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalize {
    None,
    /// Each row shifted to mean 0 and scaled to variance 1. Constant rows
    /// become all zeros.
    PerPatchZscore,
    /// Every value divided by the largest absolute value in the matrix.
    GlobalUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandMode {
    AllBands,
    /// One channel: Rec. 601 luma for 3-channel patches, channel mean otherwise.
    Luminance,
}

impl FromStr for Normalize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalize::None),
            "zscore" | "per_patch_zscore" => Ok(Normalize::PerPatchZscore),
            "global_unit" => Ok(Normalize::GlobalUnit),
            other => Err(Error::Config(format!("unknown normalization {other:?}"))),
        }
    }
}

impl FromStr for BandMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all_bands" => Ok(BandMode::AllBands),
            "luminance" => Ok(BandMode::Luminance),
            other => Err(Error::Config(format!("unknown band mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub normalize: Normalize,
    pub downsample_factor: u32,
    pub band_mode: BandMode,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            normalize: Normalize::None,
            downsample_factor: 1,
            band_mode: BandMode::AllBands,
        }
    }
}

impl FeatureConfig {
    /// Raw flattened pixels, u8 scaled into [0, 1].
    pub fn raw_pixels() -> Self {
        Self::default()
    }
}

/// Row-major feature rows, one per patch in ascending patch-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<PatchId>,
    data: Vec<f64>,
    dim: usize,
    config: FeatureConfig,
}

impl FeatureMatrix {
    /// Builds a matrix from explicit rows. `ids` must be strictly ascending
    /// and every value finite.
    pub fn from_rows(ids: Vec<PatchId>, rows: &[Vec<f64>], config: FeatureConfig) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Contract(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("feature ids must be strictly ascending".into()));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "row {bad} has length {}, expected {dim}",
                rows[bad].len()
            )));
        }
        let data: Vec<f64> = rows.concat();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(FeatureMatrix {
            ids,
            data,
            dim,
            config,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> FeatureConfig {
        self.config
    }

    pub fn ids(&self) -> &[PatchId] {
        &self.ids
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    /// Row index holding `id`.
    pub fn index_of(&self, id: PatchId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn row_of(&self, id: PatchId) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.row(i))
    }

    /// Content fingerprint (FNV-1a over shape and value bits).
    pub fn fingerprint(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let mut feed = |word: u64| {
            for b in word.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(PRIME);
            }
        };
        feed(self.len() as u64);
        feed(self.dim as u64);
        for &id in &self.ids {
            feed(id);
        }
        for v in &self.data {
            feed(v.to_bits());
        }
        h
    }
}

fn validate(set: &PatchSet, cfg: &FeatureConfig) -> Result<()> {
    let shape = set.shape();
    let f = cfg.downsample_factor;
    if f == 0 {
        return Err(Error::Config("downsample factor must be positive".into()));
    }
    if !set.is_empty() && (f > shape.height || f > shape.width) {
        return Err(Error::Config(format!(
            "downsample factor {f} exceeds patch size {}x{}",
            shape.height, shape.width
        )));
    }
    Ok(())
}

/// Flattens, optionally pools and normalizes every patch.
///
/// When the downsample factor does not divide the patch size, the bottom
/// rows and right columns that do not fill a whole block are dropped.
pub fn extract_features(set: &PatchSet, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    validate(set, cfg)?;
    let shape = set.shape();
    let f = cfg.downsample_factor as usize;
    let (h, w, c) = (
        shape.height as usize,
        shape.width as usize,
        shape.channels as usize,
    );
    let out_c = match cfg.band_mode {
        BandMode::AllBands => c,
        BandMode::Luminance => 1,
    };
    let dim = if set.is_empty() { 0 } else { (h / f) * (w / f) * out_c };

    let mut rows: Vec<Vec<f64>> = set
        .patches()
        .par_iter()
        .map(|p| {
            let mut row = pool(&p.samples, h, w, c, f, cfg.band_mode);
            if cfg.normalize == Normalize::PerPatchZscore {
                zscore(&mut row);
            }
            row
        })
        .collect();

    if cfg.normalize == Normalize::GlobalUnit {
        let max_abs = rows
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        if max_abs > 0.0 {
            rows.par_iter_mut()
                .for_each(|r| r.iter_mut().for_each(|v| *v /= max_abs));
        }
    }

    let data: Vec<f64> = rows.concat();
    debug_assert_eq!(data.len(), dim * set.len());
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("feature extraction produced a non-finite value".into()));
    }
    Ok(FeatureMatrix {
        ids: set.ids(),
        data,
        dim,
        config: *cfg,
    })
}

fn pool(samples: &Samples, h: usize, w: usize, c: usize, f: usize, band: BandMode) -> Vec<f64> {
    let (bh, bw) = (h / f, w / f);
    let out_c = if band == BandMode::Luminance { 1 } else { c };
    let area = (f * f) as f64;
    let pixel = |y: usize, x: usize, ch: usize| samples.value((y * w + x) * c + ch);
    let band_value = |y: usize, x: usize, ch: usize| match band {
        BandMode::AllBands => pixel(y, x, ch),
        BandMode::Luminance if c == 3 => {
            0.299 * pixel(y, x, 0) + 0.587 * pixel(y, x, 1) + 0.114 * pixel(y, x, 2)
        }
        BandMode::Luminance => (0..c).map(|k| pixel(y, x, k)).sum::<f64>() / c as f64,
    };

    let mut row = Vec::with_capacity(bh * bw * out_c);
    for by in 0..bh {
        for bx in 0..bw {
            for ch in 0..out_c {
                if f == 1 {
                    row.push(band_value(by, bx, ch));
                    continue;
                }
                let mut sum = 0.0;
                for y in by * f..(by + 1) * f {
                    for x in bx * f..(bx + 1) * f {
                        sum += band_value(y, x, ch);
                    }
                }
                row.push(sum / area);
            }
        }
    }
    row
}

fn zscore(row: &mut [f64]) {
    let Some(&first) = row.first() else { return };
    if row.iter().all(|&v| v == first) {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    row.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}
