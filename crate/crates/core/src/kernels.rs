//! Kernel functions and kernel matrices.

use std::fmt;
use std::str::FromStr;

use crate::dataset::FeatureMatrix;
use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Rbf,
    Laplacian,
    Polynomial,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Laplacian => "laplacian",
            KernelKind::Polynomial => "polynomial",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            KernelKind::Rbf => 0,
            KernelKind::Laplacian => 1,
            KernelKind::Polynomial => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(KernelKind::Rbf),
            1 => Ok(KernelKind::Laplacian),
            2 => Ok(KernelKind::Polynomial),
            other => Err(Error::Format(format!("unknown kernel code {other}"))),
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(KernelKind::Rbf),
            "laplacian" => Ok(KernelKind::Laplacian),
            "polynomial" | "poly" => Ok(KernelKind::Polynomial),
            other => Err(Error::Config(format!("unknown kernel {other:?}"))),
        }
    }
}

/// A fully resolved kernel.
///
/// - rbf: `exp(-gamma * ||x - y||^2)`
/// - laplacian: `exp(-gamma * ||x - y||_1)`
/// - polynomial: `(x . y + coef0)^degree`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: f64,
    pub degree: u32,
    pub coef0: f64,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            gamma,
            degree: 2,
            coef0: 1.0,
        }
    }

    pub fn laplacian(gamma: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Laplacian,
            ..Self::rbf(gamma)
        }
    }

    pub fn polynomial(degree: u32, coef0: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Polynomial,
            gamma: 1.0,
            degree,
            coef0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!("kernel gamma must be positive, got {}", self.gamma)));
        }
        if self.degree == 0 {
            return Err(Error::Config("polynomial degree must be at least 1".into()));
        }
        if !self.coef0.is_finite() {
            return Err(Error::Config("polynomial coef0 must be finite".into()));
        }
        Ok(())
    }

    /// Kernel value without the length check. Callers guarantee equal lengths.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * d2).exp()
            }
            KernelKind::Laplacian => {
                let d1: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
                (-self.gamma * d1).exp()
            }
            KernelKind::Polynomial => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                (dot + self.coef0).powi(self.degree as i32)
            }
        }
    }
}

/// Gamma setting as written in configuration: a number, or `auto` to derive
/// it from the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Auto,
    Fixed(f64),
}

impl FromStr for Gamma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_matches('"');
        if s == "auto" {
            return Ok(Gamma::Auto);
        }
        s.parse()
            .map(Gamma::Fixed)
            .map_err(|_| Error::Config(format!("gamma must be a number or \"auto\", got {s:?}")))
    }
}

/// Kernel as configured, before `gamma = auto` is resolved against data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub gamma: Gamma,
    pub degree: u32,
    pub coef0: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            kind: KernelKind::Rbf,
            gamma: Gamma::Auto,
            degree: 2,
            coef0: 1.0,
        }
    }
}

impl KernelConfig {
    pub fn resolve(&self, features: &FeatureMatrix) -> Result<KernelSpec> {
        let gamma = match self.gamma {
            Gamma::Auto => auto_gamma(features),
            Gamma::Fixed(g) => g,
        };
        let spec = KernelSpec {
            kind: self.kind,
            gamma,
            degree: self.degree,
            coef0: self.coef0,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `1 / (d * mean per-dimension variance)`, or 1 when the data has no spread.
pub fn auto_gamma(features: &FeatureMatrix) -> f64 {
    let (n, d) = (features.len(), features.dim());
    if n == 0 || d == 0 {
        return 1.0;
    }
    let mut mean = vec![0.0; d];
    for row in features.rows() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut total = 0.0;
    for row in features.rows() {
        total += row
            .iter()
            .zip(&mean)
            .map(|(v, m)| (v - m) * (v - m))
            .sum::<f64>();
    }
    let mean_var = total / (n as f64 * d as f64);
    if mean_var > 0.0 && mean_var.is_finite() {
        1.0 / (d as f64 * mean_var)
    } else {
        1.0
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "kernel arguments have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(spec.eval_unchecked(x, y))
}

/// Gram matrix over `points`. Each unordered pair is evaluated once, so the
/// result is exactly symmetric.
pub fn kernel_matrix<R: AsRef<[f64]>>(spec: &KernelSpec, points: &[R]) -> Result<Matrix> {
    let Some(first) = points.first() else {
        return Err(Error::Contract("kernel matrix needs at least one point".into()));
    };
    let d = first.as_ref().len();
    check_uniform(points, d)?;
    let m = points.len();
    let mut k = Matrix::zeros(m);
    for i in 0..m {
        for j in i..m {
            let v = spec.eval_unchecked(points[i].as_ref(), points[j].as_ref());
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    Ok(k)
}

/// `[k(anchor_0, x), ..., k(anchor_{M-1}, x)]`.
pub fn kernel_cross<R: AsRef<[f64]>>(spec: &KernelSpec, anchors: &[R], x: &[f64]) -> Result<Vec<f64>> {
    check_uniform(anchors, x.len())?;
    Ok(anchors
        .iter()
        .map(|a| spec.eval_unchecked(a.as_ref(), x))
        .collect())
}

fn check_uniform<R: AsRef<[f64]>>(points: &[R], d: usize) -> Result<()> {
    if let Some(bad) = points.iter().position(|p| p.as_ref().len() != d) {
        return Err(Error::DimensionMismatch(format!(
            "point {bad} has length {}, expected {d}",
            points[bad].as_ref().len()
        )));
    }
    Ok(())
}
