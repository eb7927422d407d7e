//! Kernelized locality-sensitive hashing.
//!
//! Each hash bit `i` owns `M` anchor rows and a weight vector
//! `ω_i = K_M^{-1/2} e_i`, where `K_M` is the anchors' kernel matrix and `e_i`
//! is a 0/1 vector selecting `t` of the anchors. A row `x` hashes to 1 on bit
//! `i` when `Σ_m ω_i[m] k(anchor_m, x) > 0`.
//!
//! With `center_kernel` set, `K_M` is replaced by `H K_M H` (`H` the centering
//! projector) and each query's kernel vector is centered against the anchors
//! the same way, so the implicit projection direction has zero mean.
//!
//! Randomness comes from ChaCha8 seeded with the configured seed. Stream 0
//! feeds the shared anchor draw; bit `i` (0-based) draws from stream `i + 1`,
//! anchors first (when resampled per bit) and then the positions of `e_i`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{BandMode, FeatureConfig, FeatureMatrix, Normalize, PatchId};
use crate::fmt::hex_bits;
use crate::kernels::{kernel_matrix, Gamma, KernelConfig, KernelKind, KernelSpec};
use crate::linalg::{inv_sqrt_psd, Matrix, DEFAULT_EIG_TOL};
use crate::{Error, Result};

/// Codes are held in a `u64`.
pub const MAX_BITS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorMode {
    /// Fresh anchors for every bit.
    ResamplePerBit,
    /// One anchor draw reused by every bit; only `e` changes.
    SharedAnchors,
}

impl AnchorMode {
    fn code(self) -> u32 {
        match self {
            AnchorMode::ResamplePerBit => 0,
            AnchorMode::SharedAnchors => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(AnchorMode::ResamplePerBit),
            1 => Ok(AnchorMode::SharedAnchors),
            other => Err(Error::Format(format!("unknown anchor mode code {other}"))),
        }
    }
}

impl FromStr for AnchorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resample" | "resample_per_bit" => Ok(AnchorMode::ResamplePerBit),
            "shared" | "shared_anchors" => Ok(AnchorMode::SharedAnchors),
            other => Err(Error::Config(format!("unknown anchor mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlshConfig {
    pub num_bits: u32,
    pub anchors_per_bit: usize,
    pub subset_size: usize,
    pub anchor_mode: AnchorMode,
    pub kernel: KernelConfig,
    pub seed: u64,
    pub eig_tol: f64,
    pub center_kernel: bool,
}

impl KlshConfig {
    /// 32 bits, `M = min(256, n)`, `t = min(30, ⌈M/4⌉)`, RBF with automatic
    /// gamma, anchors resampled per bit, centered kernel.
    ///
    /// Without centering, kernels with positive values (RBF, Laplacian) give
    /// every row a positive score on every bit and the codes collapse to all
    /// ones.
    pub fn defaults_for(n: usize) -> Self {
        let m = n.clamp(1, 256);
        KlshConfig {
            num_bits: 32,
            anchors_per_bit: m,
            subset_size: m.div_ceil(4).min(30),
            anchor_mode: AnchorMode::ResamplePerBit,
            kernel: KernelConfig::default(),
            seed: 0,
            eig_tol: DEFAULT_EIG_TOL,
            center_kernel: true,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.num_bits == 0 || self.num_bits > MAX_BITS {
            return Err(Error::Config(format!(
                "number of bits must be in 1..={MAX_BITS}, got {}",
                self.num_bits
            )));
        }
        if self.anchors_per_bit == 0 {
            return Err(Error::Config("anchors per bit must be at least 1".into()));
        }
        if self.anchors_per_bit > n {
            return Err(Error::Config(format!(
                "anchors per bit ({}) exceeds dataset size ({n})",
                self.anchors_per_bit
            )));
        }
        if self.anchors_per_bit > u32::MAX as usize || n > u32::MAX as usize {
            return Err(Error::Config("dataset too large for u32 anchor ids".into()));
        }
        if self.subset_size == 0 || self.subset_size > self.anchors_per_bit {
            return Err(Error::Config(format!(
                "subset size must be in 1..={}, got {}",
                self.anchors_per_bit, self.subset_size
            )));
        }
        if !(self.eig_tol.is_finite() && self.eig_tol > 0.0) {
            return Err(Error::Config(format!("eig_tol must be positive, got {}", self.eig_tol)));
        }
        if let Gamma::Fixed(g) = self.kernel.gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::Config(format!("kernel gamma must be positive, got {g}")));
            }
        }
        if self.kernel.degree == 0 {
            return Err(Error::Config("polynomial degree must be at least 1".into()));
        }
        Ok(())
    }
}

/// An `len`-bit code; bit 1 of the family is the most significant bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HashCode {
    value: u64,
    len: u32,
}

impl HashCode {
    pub fn new(value: u64, len: u32) -> Result<Self> {
        if len == 0 || len > MAX_BITS {
            return Err(Error::Contract(format!("code length {len} out of range")));
        }
        if len < 64 && value >> len != 0 {
            return Err(Error::Contract(format!("value {value:#x} does not fit in {len} bits")));
        }
        Ok(HashCode { value, len })
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Output of hash function `i` (0-based).
    pub fn bit(&self, i: u32) -> bool {
        (self.value >> (self.len - 1 - i)) & 1 == 1
    }

    /// The leading `bits` bits as an integer.
    pub fn prefix(&self, bits: u32) -> u64 {
        debug_assert!(bits >= 1 && bits <= self.len);
        self.value >> (self.len - bits)
    }

    pub fn hamming(&self, other: &HashCode) -> u32 {
        (self.value ^ other.value).count_ones()
    }

    pub fn to_hex(&self) -> String {
        hex_bits(self.value, self.len)
    }

    pub fn from_hex(s: &str, len: u32) -> Result<Self> {
        let value = u64::from_str_radix(s.trim(), 16)
            .map_err(|_| Error::Format(format!("bad hex code {s:?}")))?;
        HashCode::new(value, len).map_err(|e| Error::Format(e.to_string()))
    }
}

impl fmt::Display for HashCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:0width$b}", self.value, width = self.len as usize)
    }
}

/// Statistics of the anchors' kernel matrix needed to center a kernel vector.
#[derive(Debug, Clone, PartialEq)]
struct Centering {
    col_means: Vec<f64>,
    total_mean: f64,
}

impl Centering {
    fn of(k: &Matrix) -> Self {
        let m = k.size();
        let col_means: Vec<f64> = (0..m)
            .map(|j| (0..m).map(|i| k.get(i, j)).sum::<f64>() / m as f64)
            .collect();
        let total_mean = col_means.iter().sum::<f64>() / m as f64;
        Centering {
            col_means,
            total_mean,
        }
    }

    fn center_matrix(&self, k: &Matrix) -> Matrix {
        let m = k.size();
        let mut c = Matrix::zeros(m);
        for i in 0..m {
            for j in i..m {
                let v = k.get(i, j) - self.col_means[i] - self.col_means[j] + self.total_mean;
                c.set(i, j, v);
                c.set(j, i, v);
            }
        }
        c
    }
}

/// One hash function: anchors, their feature rows, and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HashBit {
    pub anchor_ids: Vec<u32>,
    pub omega: Vec<f64>,
    anchor_rows: Vec<Vec<f64>>,
    centering: Option<Centering>,
}

impl HashBit {
    /// `Σ_m ω[m] k(anchor_m, x)`, summed in anchor order.
    pub fn score(&self, kernel: &KernelSpec, x: &[f64]) -> f64 {
        let kx: Vec<f64> = self
            .anchor_rows
            .iter()
            .map(|a| kernel.eval_unchecked(a, x))
            .collect();
        let kx = match &self.centering {
            None => kx,
            Some(c) => {
                let mean = kx.iter().sum::<f64>() / kx.len() as f64;
                kx.iter()
                    .zip(&c.col_means)
                    .map(|(k, cm)| k - mean - cm + c.total_mean)
                    .collect()
            }
        };
        self.omega.iter().zip(&kx).map(|(w, k)| w * k).sum()
    }

    pub fn anchor_rows(&self) -> &[Vec<f64>] {
        &self.anchor_rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashFamily {
    config: KlshConfig,
    kernel: KernelSpec,
    feature_config: FeatureConfig,
    dim: usize,
    build_len: usize,
    fingerprint: u64,
    bits: Vec<HashBit>,
}

impl HashFamily {
    pub fn config(&self) -> &KlshConfig {
        &self.config
    }

    /// The kernel with `gamma` resolved.
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn feature_config(&self) -> FeatureConfig {
        self.feature_config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_bits(&self) -> u32 {
        self.bits.len() as u32
    }

    pub fn bits(&self) -> &[HashBit] {
        &self.bits
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Same family with every ω negated.
    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        for b in &mut out.bits {
            b.omega.iter_mut().for_each(|w| *w = -*w);
        }
        out
    }
}

fn bit_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct AnchorBasis {
    ids: Vec<u32>,
    rows: Vec<Vec<f64>>,
    whitening: Matrix,
    centering: Option<Centering>,
}

fn anchor_basis(features: &FeatureMatrix, ids: Vec<u32>, kernel: &KernelSpec, cfg: &KlshConfig) -> Result<AnchorBasis> {
    let rows: Vec<Vec<f64>> = ids.iter().map(|&i| features.row(i as usize).to_vec()).collect();
    let k = kernel_matrix(kernel, &rows)?;
    let (k, centering) = if cfg.center_kernel {
        let c = Centering::of(&k);
        (c.center_matrix(&k), Some(c))
    } else {
        (k, None)
    };
    let whitening = inv_sqrt_psd(&k, cfg.eig_tol)?;
    Ok(AnchorBasis {
        ids,
        rows,
        whitening,
        centering,
    })
}

fn draw_anchors(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<u32> {
    index::sample(rng, n, m).into_iter().map(|i| i as u32).collect()
}

/// Builds `I` hash functions from `features`. The result depends only on
/// `features` and `cfg`, not on thread count.
pub fn build_hash_family(features: &FeatureMatrix, cfg: &KlshConfig) -> Result<HashFamily> {
    let n = features.len();
    cfg.validate(n)?;
    let kernel = cfg.kernel.resolve(features)?;
    let m = cfg.anchors_per_bit;

    let shared = match cfg.anchor_mode {
        AnchorMode::SharedAnchors => {
            let ids = draw_anchors(&mut bit_rng(cfg.seed, 0), n, m);
            Some(anchor_basis(features, ids, &kernel, cfg).map_err(|e| on_bit(e, None))?)
        }
        AnchorMode::ResamplePerBit => None,
    };

    let bits: Vec<HashBit> = (0..cfg.num_bits)
        .into_par_iter()
        .map(|bit| {
            let mut rng = bit_rng(cfg.seed, u64::from(bit) + 1);
            let owned;
            let basis = match &shared {
                Some(b) => b,
                None => {
                    let ids = draw_anchors(&mut rng, n, m);
                    owned = anchor_basis(features, ids, &kernel, cfg).map_err(|e| on_bit(e, Some(bit)))?;
                    &owned
                }
            };
            let chosen = index::sample(&mut rng, m, cfg.subset_size);
            let mut omega = vec![0.0; m];
            for j in chosen.iter() {
                for (r, w) in omega.iter_mut().enumerate() {
                    *w += basis.whitening.get(r, j);
                }
            }
            if omega.iter().any(|w| !w.is_finite()) || omega.iter().all(|&w| w == 0.0) {
                return Err(Error::Numeric(format!(
                    "bit {}: weight vector is zero or non-finite",
                    bit + 1
                )));
            }
            Ok(HashBit {
                anchor_ids: basis.ids.clone(),
                omega,
                anchor_rows: basis.rows.clone(),
                centering: basis.centering.clone(),
            })
        })
        .collect::<Result<_>>()?;

    if cfg.anchor_mode == AnchorMode::SharedAnchors && cfg.subset_size < m {
        let mut seen = std::collections::HashSet::new();
        let collisions = bits
            .iter()
            .filter(|b| !seen.insert(b.omega.iter().map(|w| w.to_bits()).collect::<Vec<_>>()))
            .count();
        if collisions > 0 {
            log::warn!("{collisions} hash bits share an indexing vector with an earlier bit");
        }
    }

    Ok(HashFamily {
        config: *cfg,
        kernel,
        feature_config: features.config(),
        dim: features.dim(),
        build_len: n,
        fingerprint: features.fingerprint(),
        bits,
    })
}

fn on_bit(e: Error, bit: Option<u32>) -> Error {
    let which = match bit {
        Some(b) => format!("bit {}", b + 1),
        None => "shared anchors".to_owned(),
    };
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("{which}: {msg}")),
        other => other,
    }
}

/// Hashes one feature row. A score of exactly zero maps to bit 0.
pub fn hash_code(family: &HashFamily, x: &[f64]) -> Result<HashCode> {
    if x.len() != family.dim {
        return Err(Error::DimensionMismatch(format!(
            "row has length {}, family was built on {}",
            x.len(),
            family.dim
        )));
    }
    let mut value = 0u64;
    for bit in &family.bits {
        value = (value << 1) | u64::from(bit.score(&family.kernel, x) > 0.0);
    }
    HashCode::new(value, family.num_bits())
}

/// Codes for every row, in row order.
pub fn hash_all(family: &HashFamily, features: &FeatureMatrix) -> Result<Vec<HashCode>> {
    (0..features.len())
        .into_par_iter()
        .map(|i| hash_code(family, features.row(i)))
        .collect()
}

// Family file, little-endian:
//   "KLF1", u32 version
//   u32 num_bits, u32 anchors_per_bit, u32 subset_size, u32 anchor_mode,
//   u64 seed, f64 eig_tol, u32 center_kernel,
//   u32 kernel kind, f64 gamma (resolved), u32 degree, f64 coef0,
//   u32 normalize, u32 downsample, u32 band_mode,
//   u32 dim, u32 build_len, u64 fingerprint
//   per bit: anchors_per_bit × u32 anchor id, anchors_per_bit × f64 omega
const FAMILY_MAGIC: &[u8; 4] = b"KLF1";
const FAMILY_VERSION: u32 = 1;

fn normalize_code(n: Normalize) -> u32 {
    match n {
        Normalize::None => 0,
        Normalize::PerPatchZscore => 1,
        Normalize::GlobalUnit => 2,
    }
}

fn band_code(b: BandMode) -> u32 {
    match b {
        BandMode::AllBands => 0,
        BandMode::Luminance => 1,
    }
}

pub fn encode_family(family: &HashFamily) -> Vec<u8> {
    let cfg = &family.config;
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(FAMILY_MAGIC);
    u32le(&mut out, FAMILY_VERSION);
    u32le(&mut out, cfg.num_bits);
    u32le(&mut out, cfg.anchors_per_bit as u32);
    u32le(&mut out, cfg.subset_size as u32);
    u32le(&mut out, cfg.anchor_mode.code());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.extend_from_slice(&cfg.eig_tol.to_le_bytes());
    u32le(&mut out, u32::from(cfg.center_kernel));
    u32le(&mut out, family.kernel.kind.code());
    out.extend_from_slice(&family.kernel.gamma.to_le_bytes());
    u32le(&mut out, family.kernel.degree);
    out.extend_from_slice(&family.kernel.coef0.to_le_bytes());
    u32le(&mut out, normalize_code(family.feature_config.normalize));
    u32le(&mut out, family.feature_config.downsample_factor);
    u32le(&mut out, band_code(family.feature_config.band_mode));
    u32le(&mut out, family.dim as u32);
    u32le(&mut out, family.build_len as u32);
    out.extend_from_slice(&family.fingerprint.to_le_bytes());
    for bit in &family.bits {
        bit.anchor_ids.iter().for_each(|&a| u32le(&mut out, a));
        bit.omega.iter().for_each(|w| out.extend_from_slice(&w.to_le_bytes()));
    }
    out
}

pub fn write_family(family: &HashFamily, path: &Path) -> Result<()> {
    std::fs::write(path, encode_family(family)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let slice = self.bytes.get(self.pos..self.pos + N).ok_or(Error::Corrupt {
            offset: self.bytes.len() as u64,
            message: format!("family file truncated, needed {N} bytes at {}", self.pos),
        })?;
        self.pos += N;
        Ok(slice.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

/// Reads a family file. `features` must be the matrix the family was built
/// on; anchor rows are taken from it and its fingerprint is checked.
pub fn read_family(path: &Path, features: &FeatureMatrix) -> Result<HashFamily> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_family(&bytes, features)
}

/// Everything in a family file before the per-bit records.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyHeader {
    pub config: KlshConfig,
    pub kernel: KernelSpec,
    pub feature_config: FeatureConfig,
    pub dim: usize,
    pub build_len: usize,
    pub fingerprint: u64,
}

fn decode_header(c: &mut Cursor<'_>) -> Result<FamilyHeader> {
    let magic = c.take::<4>()?;
    if &magic != FAMILY_MAGIC {
        return Err(Error::Format("missing KLF1 magic".into()));
    }
    let version = c.u32()?;
    if version != FAMILY_VERSION {
        return Err(Error::Version(format!("family file version {version}")));
    }
    let num_bits = c.u32()?;
    let anchors_per_bit = c.u32()? as usize;
    let subset_size = c.u32()? as usize;
    let anchor_mode = AnchorMode::from_code(c.u32()?)?;
    let seed = c.u64()?;
    let eig_tol = c.f64()?;
    let center_kernel = c.u32()? != 0;
    let kind = KernelKind::from_code(c.u32()?)?;
    let gamma = c.f64()?;
    let degree = c.u32()?;
    let coef0 = c.f64()?;
    let normalize = match c.u32()? {
        0 => Normalize::None,
        1 => Normalize::PerPatchZscore,
        2 => Normalize::GlobalUnit,
        other => return Err(Error::Format(format!("unknown normalize code {other}"))),
    };
    let downsample_factor = c.u32()?;
    let band_mode = match c.u32()? {
        0 => BandMode::AllBands,
        1 => BandMode::Luminance,
        other => return Err(Error::Format(format!("unknown band mode code {other}"))),
    };
    let dim = c.u32()? as usize;
    let build_len = c.u32()? as usize;
    let fingerprint = c.u64()?;

    let kernel = KernelSpec {
        kind,
        gamma,
        degree,
        coef0,
    };
    let config = KlshConfig {
        num_bits,
        anchors_per_bit,
        subset_size,
        anchor_mode,
        kernel: KernelConfig {
            kind,
            gamma: Gamma::Fixed(gamma),
            degree,
            coef0,
        },
        seed,
        eig_tol,
        center_kernel,
    };
    config
        .validate(build_len)
        .map_err(|e| Error::Format(format!("family config invalid: {e}")))?;

    Ok(FamilyHeader {
        config,
        kernel,
        feature_config: FeatureConfig {
            normalize,
            downsample_factor,
            band_mode,
        },
        dim,
        build_len,
        fingerprint,
    })
}

/// Reads only the header, e.g. to learn the feature settings needed to
/// rebuild the matrix that [`read_family`] checks against.
pub fn read_family_header(path: &Path) -> Result<FamilyHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_header(&mut Cursor { bytes: &bytes, pos: 0 })
}

pub fn decode_family(bytes: &[u8], features: &FeatureMatrix) -> Result<HashFamily> {
    let mut c = Cursor { bytes, pos: 0 };
    let FamilyHeader {
        config,
        kernel,
        feature_config,
        dim,
        build_len,
        fingerprint,
    } = decode_header(&mut c)?;
    let (num_bits, anchors_per_bit, center_kernel) = (config.num_bits, config.anchors_per_bit, config.center_kernel);
    if features.dim() != dim || features.len() != build_len || features.fingerprint() != fingerprint {
        return Err(Error::Contract(
            "feature matrix does not match the one the family was built on".into(),
        ));
    }

    let mut bits = Vec::with_capacity(num_bits as usize);
    for _ in 0..num_bits {
        let mut anchor_ids = Vec::with_capacity(anchors_per_bit);
        for _ in 0..anchors_per_bit {
            let id = c.u32()?;
            if id as usize >= build_len {
                return Err(Error::Format(format!("anchor id {id} out of range")));
            }
            anchor_ids.push(id);
        }
        let omega = (0..anchors_per_bit).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        let anchor_rows: Vec<Vec<f64>> = anchor_ids
            .iter()
            .map(|&i| features.row(i as usize).to_vec())
            .collect();
        let centering = if center_kernel {
            Some(Centering::of(&kernel_matrix(&kernel, &anchor_rows)?))
        } else {
            None
        };
        bits.push(HashBit {
            anchor_ids,
            omega,
            anchor_rows,
            centering,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::Corrupt {
            offset: c.pos as u64,
            message: "trailing bytes in family file".into(),
        });
    }
    Ok(HashFamily {
        config,
        kernel,
        feature_config,
        dim,
        build_len,
        fingerprint,
        bits,
    })
}

/// Writes `patch_id,code_hex` rows.
pub fn write_codes_csv(ids: &[PatchId], codes: &[HashCode], path: &Path) -> Result<()> {
    if ids.len() != codes.len() {
        return Err(Error::Contract(format!("{} ids for {} codes", ids.len(), codes.len())));
    }
    let mut buf = Vec::new();
    writeln!(buf, "patch_id,code_hex").expect("write to Vec");
    for (id, code) in ids.iter().zip(codes) {
        writeln!(buf, "{id},{}", code.to_hex()).expect("write to Vec");
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_codes_csv(path: &Path, num_bits: u32) -> Result<(Vec<PatchId>, Vec<HashCode>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("patch_id,code_hex") {
        return Err(Error::Format(format!("{}: expected header patch_id,code_hex", path.display())));
    }
    let mut ids = Vec::new();
    let mut codes = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = || Error::Format(format!("{}: bad row {}: {line:?}", path.display(), n + 2));
        let (id, hex) = line.split_once(',').ok_or_else(bad)?;
        ids.push(id.parse().map_err(|_| bad())?);
        codes.push(HashCode::from_hex(hex, num_bits).map_err(|_| bad())?);
    }
    Ok((ids, codes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr_free::normal;

    /// Box-Muller, so the tests need no extra distribution crate.
    mod rand_distr_free {
        use rand::Rng;

        pub fn normal<R: Rng>(rng: &mut R) -> f64 {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        }
    }

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows((0..rows.len() as u64).collect(), rows, FeatureConfig::default()).unwrap()
    }

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect()).collect()
    }

    fn uncentered(cfg: KlshConfig) -> KlshConfig {
        KlshConfig {
            center_kernel: false,
            ..cfg
        }
    }

    fn rbf_cfg(bits: u32, m: usize, t: usize, seed: u64) -> KlshConfig {
        KlshConfig {
            num_bits: bits,
            anchors_per_bit: m,
            subset_size: t,
            seed,
            ..KlshConfig::defaults_for(m)
        }
    }

    #[test]
    fn defaults() {
        let c = KlshConfig::defaults_for(1000);
        assert_eq!((c.num_bits, c.anchors_per_bit, c.subset_size), (32, 256, 30));
        let c = KlshConfig::defaults_for(40);
        assert_eq!((c.anchors_per_bit, c.subset_size), (40, 10));
        assert_eq!(c.anchor_mode, AnchorMode::ResamplePerBit);
    }

    #[test]
    fn config_errors() {
        let f = matrix(&random_rows(5, 2, 1));
        let mut c = rbf_cfg(4, 6, 2, 0);
        assert!(matches!(build_hash_family(&f, &c), Err(Error::Config(_))));
        c.anchors_per_bit = 3;
        c.subset_size = 4;
        assert!(matches!(build_hash_family(&f, &c), Err(Error::Config(_))));
        c.subset_size = 2;
        c.num_bits = 0;
        assert!(matches!(build_hash_family(&f, &c), Err(Error::Config(_))));
        c.num_bits = 65;
        assert!(matches!(build_hash_family(&f, &c), Err(Error::Config(_))));
    }

    #[test]
    fn single_anchor_rbf_weight_is_one() {
        let f = matrix(&random_rows(10, 3, 2));
        let fam = build_hash_family(&f, &uncentered(rbf_cfg(1, 1, 1, 9))).unwrap();
        assert_eq!(fam.bits()[0].omega, vec![1.0]);
        // Positive weight times a positive kernel: every row hashes to 1.
        assert!(hash_all(&fam, &f).unwrap().iter().all(|c| c.value() == 1));
    }

    #[test]
    fn single_anchor_polynomial_weight() {
        let f = matrix(&[vec![2.0], vec![3.0]]);
        let cfg = KlshConfig {
            kernel: KernelConfig {
                kind: KernelKind::Polynomial,
                ..KernelConfig::default()
            },
            ..uncentered(rbf_cfg(1, 1, 1, 0))
        };
        let fam = build_hash_family(&f, &cfg).unwrap();
        let a = fam.bits()[0].anchor_ids[0] as usize;
        let k = (f.row(a)[0] * f.row(a)[0] + 1.0).powi(2);
        assert!((fam.bits()[0].omega[0] - 1.0 / k.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn duplicate_anchors_take_pseudo_inverse() {
        // K_M = [[1,1],[1,1]]: eigenvalues {2, 0}, v = (1,1)/sqrt2, so
        // ω = (eᵀv) 2^{-1/2} v. One anchor selected: eᵀv = 1/sqrt2 and
        // ω = (1,1)/(2 sqrt2). Both selected: eᵀv = sqrt2 and ω = (1,1)/sqrt2.
        let f = matrix(&[vec![0.3, 0.3], vec![0.3, 0.3]]);
        let one = 1.0 / (2.0 * std::f64::consts::SQRT_2);
        let fam = build_hash_family(&f, &uncentered(rbf_cfg(3, 2, 1, 5))).unwrap();
        for bit in fam.bits() {
            assert!((bit.omega[0] - one).abs() < 1e-12);
            assert!((bit.omega[1] - one).abs() < 1e-12);
        }
        let fam = build_hash_family(&f, &uncentered(rbf_cfg(1, 2, 2, 5))).unwrap();
        assert!((fam.bits()[0].omega[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((fam.bits()[0].omega[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn deterministic_across_runs_and_threads() {
        let f = matrix(&random_rows(60, 4, 3));
        for mode in [AnchorMode::ResamplePerBit, AnchorMode::SharedAnchors] {
            let cfg = KlshConfig {
                anchor_mode: mode,
                ..rbf_cfg(16, 20, 5, 42)
            };
            let a = build_hash_family(&f, &cfg).unwrap();
            let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
            let b = pool.install(|| build_hash_family(&f, &cfg)).unwrap();
            assert_eq!(a, b);
            let codes_a = hash_all(&a, &f).unwrap();
            let codes_b = pool.install(|| hash_all(&b, &f)).unwrap();
            assert_eq!(codes_a, codes_b);
        }
    }

    #[test]
    fn shared_mode_reuses_anchors() {
        let f = matrix(&random_rows(40, 3, 4));
        let cfg = KlshConfig {
            anchor_mode: AnchorMode::SharedAnchors,
            ..rbf_cfg(8, 10, 3, 1)
        };
        let fam = build_hash_family(&f, &cfg).unwrap();
        assert!(fam.bits().windows(2).all(|w| w[0].anchor_ids == w[1].anchor_ids));
        let distinct: std::collections::HashSet<Vec<u64>> = fam
            .bits()
            .iter()
            .map(|b| b.omega.iter().map(|w| w.to_bits()).collect())
            .collect();
        assert!(distinct.len() > 1);

        let resampled = build_hash_family(&f, &rbf_cfg(8, 10, 3, 1)).unwrap();
        assert!(resampled.bits().windows(2).any(|w| w[0].anchor_ids != w[1].anchor_ids));
    }

    #[test]
    fn negation_flips_nonzero_bits() {
        let f = matrix(&random_rows(50, 3, 5));
        let fam = build_hash_family(&f, &rbf_cfg(12, 16, 4, 2)).unwrap();
        let neg = fam.negated();
        for row in f.rows() {
            let a = hash_code(&fam, row).unwrap();
            let b = hash_code(&neg, row).unwrap();
            for (i, bit) in fam.bits().iter().enumerate() {
                if bit.score(fam.kernel(), row) != 0.0 {
                    assert_ne!(a.bit(i as u32), b.bit(i as u32));
                }
            }
        }
    }

    #[test]
    fn zero_score_maps_to_zero_bit() {
        // Polynomial kernel with coef0 = 0 on a zero row scores exactly 0.
        let f = matrix(&[vec![1.0, 0.5], vec![0.2, 0.9]]);
        let cfg = KlshConfig {
            kernel: KernelConfig {
                kind: KernelKind::Polynomial,
                degree: 1,
                coef0: 0.0,
                ..KernelConfig::default()
            },
            ..uncentered(rbf_cfg(4, 2, 1, 3))
        };
        let fam = build_hash_family(&f, &cfg).unwrap();
        for neg in [false, true] {
            let fam = if neg { fam.negated() } else { fam.clone() };
            assert_eq!(hash_code(&fam, &[0.0, 0.0]).unwrap().value(), 0);
        }
    }

    #[test]
    fn positive_scaling_of_e_keeps_bits() {
        let f = matrix(&random_rows(30, 3, 6));
        let fam = build_hash_family(&f, &rbf_cfg(8, 12, 3, 8)).unwrap();
        let mut scaled = fam.clone();
        for b in &mut scaled.bits {
            b.omega.iter_mut().for_each(|w| *w /= 3.0);
        }
        assert_eq!(hash_all(&fam, &f).unwrap(), hash_all(&scaled, &f).unwrap());
    }

    #[test]
    fn bits_recompute_from_stored_anchors() {
        let f = matrix(&random_rows(40, 5, 7));
        let fam = build_hash_family(&f, &uncentered(rbf_cfg(10, 12, 4, 11))).unwrap();
        let codes = hash_all(&fam, &f).unwrap();
        for (n, code) in codes.iter().enumerate() {
            for (i, bit) in fam.bits().iter().enumerate() {
                let score: f64 = bit
                    .anchor_ids
                    .iter()
                    .zip(&bit.omega)
                    .map(|(&a, w)| w * fam.kernel().eval_unchecked(f.row(a as usize), f.row(n)))
                    .sum();
                assert_eq!(code.bit(i as u32), score > 0.0);
            }
        }
    }

    #[test]
    fn hashing_edge_cases() {
        let f = matrix(&random_rows(20, 3, 8));
        let fam = build_hash_family(&f, &rbf_cfg(8, 8, 2, 1)).unwrap();
        let empty = FeatureMatrix::from_rows(vec![], &[], FeatureConfig::default()).unwrap();
        assert!(hash_all(&fam, &empty).unwrap().is_empty());
        assert!(matches!(hash_code(&fam, &[0.0; 2]), Err(Error::DimensionMismatch(_))));
        let dup = matrix(&[f.row(3).to_vec(), f.row(3).to_vec()]);
        let codes = hash_all(&fam, &dup).unwrap();
        assert_eq!(codes[0], codes[1]);
    }

    #[test]
    fn degenerate_kernel_matrix_names_bit() {
        // Polynomial with coef0 = 0 on all-zero rows gives K_M = 0.
        let f = matrix(&[vec![0.0], vec![0.0], vec![0.0]]);
        let cfg = KlshConfig {
            kernel: KernelConfig {
                kind: KernelKind::Polynomial,
                degree: 1,
                coef0: 0.0,
                ..KernelConfig::default()
            },
            ..rbf_cfg(2, 2, 1, 0)
        };
        match build_hash_family(&f, &cfg) {
            Err(Error::Numeric(msg)) => assert!(msg.starts_with("bit 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Mean Hamming distance within and across two clusters, by direct pair
    /// enumeration.
    fn intra_inter(codes: &[HashCode], split: usize) -> (f64, f64) {
        let (mut intra, mut n_intra, mut inter, mut n_inter) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..codes.len() {
            for j in i + 1..codes.len() {
                let d = u64::from((codes[i].value() ^ codes[j].value()).count_ones());
                if (i < split) == (j < split) {
                    intra += d;
                    n_intra += 1;
                } else {
                    inter += d;
                    n_inter += 1;
                }
            }
        }
        (intra as f64 / n_intra as f64, inter as f64 / n_inter as f64)
    }

    fn two_clusters(seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 8;
        let sigma = 0.1;
        // Centers one unit apart; sigma is a tenth of the gap.
        let mut rows = Vec::new();
        for center in [0.0, 1.0 / (d as f64).sqrt()] {
            for _ in 0..100 {
                rows.push((0..d).map(|_| center + sigma * normal(&mut rng)).collect());
            }
        }
        matrix(&rows)
    }

    #[test]
    fn clusters_separate_in_hamming_space() {
        for kind in [KernelKind::Rbf, KernelKind::Laplacian] {
            let mut wins = 0;
            for seed in 0..20 {
                let f = two_clusters(1000 + seed);
                let cfg = KlshConfig {
                    kernel: KernelConfig {
                        kind,
                        ..KernelConfig::default()
                    },
                    ..rbf_cfg(32, 64, 16, seed)
                };
                let fam = build_hash_family(&f, &cfg).unwrap();
                let codes = hash_all(&fam, &f).unwrap();
                let (intra, inter) = intra_inter(&codes, 100);
                if intra < inter {
                    wins += 1;
                }
            }
            assert!(wins >= 18, "{kind}: {wins}/20");
        }
    }

    #[test]
    fn uncentered_rbf_codes_collapse() {
        let f = two_clusters(7);
        let fam = build_hash_family(&f, &uncentered(rbf_cfg(32, 64, 16, 7))).unwrap();
        let codes = hash_all(&fam, &f).unwrap();
        let ones: u32 = codes.iter().map(|c| c.value().count_ones()).sum();
        assert!(ones as f64 / (32.0 * 200.0) > 0.99);
    }

    #[test]
    fn family_file_round_trip() {
        let f = matrix(&random_rows(30, 4, 9));
        for center in [false, true] {
            let cfg = KlshConfig {
                center_kernel: center,
                ..rbf_cfg(6, 10, 3, 12)
            };
            let fam = build_hash_family(&f, &cfg).unwrap();
            let bytes = encode_family(&fam);
            assert_eq!(&bytes[..4], b"KLF1");
            let back = decode_family(&bytes, &f).unwrap();
            assert_eq!(hash_all(&back, &f).unwrap(), hash_all(&fam, &f).unwrap());
            assert_eq!(encode_family(&back), bytes);
        }
    }

    #[test]
    fn family_file_rejects_other_features() {
        let f = matrix(&random_rows(30, 4, 9));
        let fam = build_hash_family(&f, &rbf_cfg(4, 10, 3, 12)).unwrap();
        let other = matrix(&random_rows(30, 4, 10));
        assert!(matches!(decode_family(&encode_family(&fam), &other), Err(Error::Contract(_))));
        let bytes = encode_family(&fam);
        assert!(matches!(decode_family(&bytes[..bytes.len() - 3], &f), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn codes_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes.csv");
        let codes = vec![HashCode::new(0xdead_beef, 32).unwrap(), HashCode::new(5, 32).unwrap()];
        write_codes_csv(&[3, 9], &codes, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "patch_id,code_hex\n3,deadbeef\n9,00000005\n"
        );
        assert_eq!(read_codes_csv(&path, 32).unwrap(), (vec![3, 9], codes));
    }

    #[test]
    fn code_bit_order() {
        let c = HashCode::new(0b1011, 4).unwrap();
        assert!(c.bit(0) && !c.bit(1) && c.bit(2) && c.bit(3));
        assert_eq!(c.prefix(2), 0b10);
        assert_eq!(c.to_string(), "1011");
        assert!(HashCode::new(16, 4).is_err());
        assert!(HashCode::new(0, 4).unwrap() < c);
        assert_eq!(c.hamming(&HashCode::new(0b0100, 4).unwrap()), 4);
    }
}
