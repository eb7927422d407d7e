//! Dense symmetric eigendecomposition (cyclic Jacobi) and the pseudo-inverse
//! square root built on it.

use crate::{Error, Result};

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

/// Default relative eigenvalue cutoff for [`inv_sqrt_psd`].
pub const DEFAULT_EIG_TOL: f64 = 1e-10;

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        (0..n).for_each(|i| m.set(i, i, 1.0));
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        diag.iter().enumerate().for_each(|(i, &v)| m.set(i, i, v));
        m
    }

    /// Builds from rows; every row must have `rows.len()` entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("matrix rows must form a square".into()));
        }
        Ok(Matrix {
            n,
            data: rows.concat(),
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n, "matmul size mismatch");
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// `S = V · diag(eigenvalues) · Vᵀ`, eigenvalues descending, eigenvectors in
/// the columns of `vectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub vectors: Matrix,
    pub eigenvalues: Vec<f64>,
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = (0..n)
                    .map(|k| self.vectors.get(i, k) * self.eigenvalues[k] * self.vectors.get(j, k))
                    .sum();
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        out
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Each sweep visits every pair `(p, q)` once in a fixed round-robin order,
/// rotating disjoint pairs together. Sweeps stop once every off-diagonal
/// entry is at most `1e-12 * max|S|` and below machine epsilon relative to
/// `sqrt(|a_pp a_qq|)`, up to 100 sweeps; after 100 the absolute test alone
/// decides.
/// Output is canonical: eigenvalues descending (stable on ties) and each
/// eigenvector's largest-magnitude entry positive.
pub fn sym_eigen(s: &Matrix) -> Result<EigenDecomposition> {
    let n = s.size();
    if n == 0 {
        return Err(Error::Contract("eigendecomposition of an empty matrix".into()));
    }
    let scale = s.max_abs();
    if !scale.is_finite() {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            if (s.get(i, j) - s.get(j, i)).abs() > SYMMETRY_TOL * scale.max(1.0) {
                return Err(Error::Contract(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    s.get(i, j),
                    s.get(j, i)
                )));
            }
        }
    }

    // Work on the upper triangle mirrored, so tiny input asymmetry is ignored.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            a[i * n + j] = s.get(i, j);
            a[j * n + i] = s.get(i, j);
        }
    }
    // Row r of `vt` is column r of V.
    let mut vt = Matrix::identity(n).data;
    let threshold = OFF_DIAGONAL_TOL * scale;
    let rounds = tournament(n);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if is_diagonal(&a, n, threshold) {
            converged = true;
            break;
        }
        for pairs in &rounds {
            rotate_round(&mut a, &mut vt, n, pairs);
        }
        // Row and column passes round differently; keep the upper triangle.
        for i in 0..n {
            for j in i + 1..n {
                a[j * n + i] = a[i * n + j];
            }
        }
    }
    if !converged {
        let residual = off_diagonal_max(&a, n);
        if residual > threshold {
            return Err(Error::Numeric(format!(
                "Jacobi did not converge in {MAX_SWEEPS} sweeps, off-diagonal residual {residual:e}"
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Matrix::zeros(n);
    for (col, &src) in order.iter().enumerate() {
        let row = &vt[src * n..(src + 1) * n];
        let mut pivot = 0;
        for r in 1..n {
            if row[r].abs() > row[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (r, &x) in row.iter().enumerate() {
            vectors.set(r, col, sign * x);
        }
    }
    Ok(EigenDecomposition {
        vectors,
        eigenvalues,
    })
}

/// Every off-diagonal entry is below the absolute threshold and negligible
/// next to its two diagonal entries. The second test matters for small
/// eigenvalues: an absolute floor alone leaves couplings larger than them.
fn is_diagonal(a: &[f64], n: usize, threshold: f64) -> bool {
    (0..n).all(|i| {
        (i + 1..n).all(|j| {
            let x = a[i * n + j].abs();
            x <= threshold && x <= f64::EPSILON * (a[i * n + i] * a[j * n + j]).abs().sqrt()
        })
    })
}

fn off_diagonal_max(a: &[f64], n: usize) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..n {
        for &x in &a[i * n + i + 1..(i + 1) * n] {
            m = m.max(x.abs());
        }
    }
    m
}

/// Round-robin schedule: `n - 1` rounds (n rounded up to even) of disjoint
/// pairs `(p, q)`, `p < q`, covering every pair exactly once per sweep.
fn tournament(n: usize) -> Vec<Vec<(usize, usize)>> {
    let m = n + n % 2;
    let mut players: Vec<usize> = (0..m).collect();
    let mut rounds = Vec::with_capacity(m.saturating_sub(1));
    for _ in 1..m {
        let round = (0..m / 2)
            .map(|i| (players[i], players[m - 1 - i]))
            .filter(|&(p, q)| p < n && q < n)
            .map(|(p, q)| (p.min(q), p.max(q)))
            .collect();
        rounds.push(round);
        players[1..].rotate_right(1);
    }
    rounds
}

/// Applies the rotations zeroing `a[p][q]` for a set of disjoint pairs at
/// once: rows first, then columns, so both passes walk memory in order.
fn rotate_round(a: &mut [f64], vt: &mut [f64], n: usize, pairs: &[(usize, usize)]) {
    // (p, q, c, s, new a_pp, new a_qq)
    let rot: Vec<(usize, usize, f64, f64, f64, f64)> = pairs
        .iter()
        .filter_map(|&(p, q)| {
            let apq = a[p * n + q];
            if apq == 0.0 {
                return None;
            }
            let (app, aqq) = (a[p * n + p], a[q * n + q]);
            let theta = (aqq - app) / (2.0 * apq);
            let t = if theta.abs() > 1e150 {
                0.5 / theta
            } else {
                theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
            };
            let c = 1.0 / (t * t + 1.0).sqrt();
            Some((p, q, c, t * c, app - t * apq, aqq + t * apq))
        })
        .collect();
    if rot.is_empty() {
        return;
    }

    let rotate_rows = |m: &mut [f64]| {
        for &(p, q, c, s, ..) in &rot {
            let (head, tail) = m.split_at_mut(q * n);
            let (rp, rq) = (&mut head[p * n..(p + 1) * n], &mut tail[..n]);
            for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
                let (xp, xq) = (*x, *y);
                *x = c * xp - s * xq;
                *y = s * xp + c * xq;
            }
        }
    };
    rotate_rows(a);
    rotate_rows(vt);
    for row in a.chunks_exact_mut(n) {
        for &(p, q, c, s, ..) in &rot {
            let (xp, xq) = (row[p], row[q]);
            row[p] = c * xp - s * xq;
            row[q] = s * xp + c * xq;
        }
    }
    for &(p, q, _, _, app, aqq) in &rot {
        a[p * n + p] = app;
        a[q * n + q] = aqq;
        a[p * n + q] = 0.0;
        a[q * n + p] = 0.0;
    }
}

/// `V · diag(g(λ)) · Vᵀ` with `g(λ) = λ^{-1/2}` for `λ > tol · λ_max` and 0
/// otherwise. The result is exactly symmetric.
pub fn inv_sqrt_psd(s: &Matrix, tol: f64) -> Result<Matrix> {
    let eig = sym_eigen(s)?;
    inv_sqrt_from_eigen(&eig, tol)
}

pub fn inv_sqrt_from_eigen(eig: &EigenDecomposition, tol: f64) -> Result<Matrix> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Config(format!("eigenvalue tolerance must be positive, got {tol}")));
    }
    let lambda_max = eig.eigenvalues[0];
    if !(lambda_max > 0.0) {
        return Err(Error::Numeric(format!(
            "degenerate matrix: largest eigenvalue {lambda_max:e} is not positive"
        )));
    }
    let cutoff = tol * lambda_max;
    let g: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| if l > cutoff { 1.0 / l.sqrt() } else { 0.0 })
        .collect();
    if g.iter().all(|&x| x == 0.0) {
        return Err(Error::Numeric("degenerate matrix: no eigenvalue above the cutoff".into()));
    }
    let n = g.len();
    let vecs = &eig.vectors;
    let mut out = Matrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for k in 0..n {
                if g[k] != 0.0 {
                    acc += vecs.get(i, k) * g[k] * vecs.get(j, k);
                }
            }
            out.set(i, j, acc);
            out.set(j, i, acc);
        }
    }
    Ok(out)
}

/// Orthogonal projector onto the eigenvectors kept by [`inv_sqrt_psd`].
pub fn kept_projector(eig: &EigenDecomposition, tol: f64) -> Matrix {
    let n = eig.eigenvalues.len();
    let cutoff = tol * eig.eigenvalues[0];
    let kept: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > cutoff).collect();
    let mut p = Matrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            p.set(i, j, kept.iter().map(|&k| eig.vectors.get(i, k) * eig.vectors.get(j, k)).sum());
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_is_canonical() {
        let e = sym_eigen(&Matrix::identity(3)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0, 1.0]);
        assert_eq!(e.vectors, Matrix::identity(3));
    }

    #[test]
    fn diagonal_is_sorted_descending() {
        let e = sym_eigen(&Matrix::from_diagonal(&[2.0, 8.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![8.0, 2.0]);
        assert_eq!(e.vectors, m(&[&[0.0, 1.0], &[1.0, 0.0]]));
    }

    #[test]
    fn two_by_two_by_hand() {
        // Characteristic polynomial (2-l)^2 - 1 = 0 gives l = 3 and 1, with
        // eigenvectors (1, 1)/sqrt2 and (1, -1)/sqrt2.
        let e = sym_eigen(&m(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
        assert!((e.vectors.get(0, 0) - r).abs() < 1e-14);
        assert!((e.vectors.get(1, 0) - r).abs() < 1e-14);
        assert!((e.vectors.get(0, 1).abs() - r).abs() < 1e-14);
        assert!((e.vectors.get(0, 1) + e.vectors.get(1, 1)).abs() < 1e-14);
    }

    #[test]
    fn rejects_asymmetric_and_empty() {
        assert!(matches!(sym_eigen(&m(&[&[1.0, 2.0], &[0.0, 1.0]])), Err(Error::Contract(_))));
        assert!(matches!(sym_eigen(&Matrix::zeros(0)), Err(Error::Contract(_))));
    }

    #[test]
    fn inverse_sqrt_examples() {
        assert_eq!(inv_sqrt_psd(&Matrix::identity(3), DEFAULT_EIG_TOL).unwrap(), Matrix::identity(3));

        let r = inv_sqrt_psd(&Matrix::from_diagonal(&[4.0, 0.0]), 1e-10).unwrap();
        assert_eq!(r, Matrix::from_diagonal(&[0.5, 0.0]));

        let s = m(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let r = inv_sqrt_psd(&s, DEFAULT_EIG_TOL).unwrap();
        assert!(r.matmul(&r).matmul(&s).max_abs_diff(&Matrix::identity(2)) < 1e-9);
    }

    #[test]
    fn degenerate_and_bad_tolerance() {
        assert!(matches!(inv_sqrt_psd(&Matrix::zeros(2), 1e-10), Err(Error::Numeric(_))));
        assert!(matches!(
            inv_sqrt_psd(&Matrix::from_diagonal(&[-1.0, -2.0]), 1e-10),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(inv_sqrt_psd(&Matrix::identity(2), 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn negative_eigenvalues_are_dropped() {
        let r = inv_sqrt_psd(&Matrix::from_diagonal(&[4.0, -1e-3]), 1e-10).unwrap();
        assert_eq!(r, Matrix::from_diagonal(&[0.5, 0.0]));
    }

    fn symmetric(n: usize, vals: &[f64]) -> Matrix {
        let mut s = Matrix::zeros(n);
        let mut it = vals.iter();
        for i in 0..n {
            for j in i..n {
                let v = *it.next().unwrap();
                s.set(i, j, v);
                s.set(j, i, v);
            }
        }
        s
    }

    fn sym_strategy() -> impl Strategy<Value = Matrix> {
        (1usize..=16).prop_flat_map(|n| {
            prop::collection::vec(-10.0f64..10.0, n * (n + 1) / 2).prop_map(move |v| symmetric(n, &v))
        })
    }

    fn psd_strategy() -> impl Strategy<Value = Matrix> {
        (1usize..=16, 1usize..=16).prop_flat_map(|(n, r)| {
            prop::collection::vec(-1.0f64..1.0, n * r).prop_map(move |b| {
                // B Bᵀ with B of shape n x r has rank min(n, r).
                let mut s = Matrix::zeros(n);
                for i in 0..n {
                    for j in i..n {
                        let v: f64 = (0..r).map(|k| b[i * r + k] * b[j * r + k]).sum();
                        s.set(i, j, v);
                        s.set(j, i, v);
                    }
                }
                s
            })
        })
    }

    proptest! {
        #[test]
        fn decomposition_invariants(s in sym_strategy()) {
            let e = sym_eigen(&s).unwrap();
            let n = s.size();
            let vtv = e.vectors.transpose().matmul(&e.vectors);
            prop_assert!(vtv.max_abs_diff(&Matrix::identity(n)) <= 1e-9);
            prop_assert!(e.reconstruct().max_abs_diff(&s) <= 1e-8 * s.max_abs().max(1.0));
            prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            let trace: f64 = (0..n).map(|i| s.get(i, i)).sum();
            let sum: f64 = e.eigenvalues.iter().sum();
            prop_assert!((trace - sum).abs() <= 1e-9 * n as f64 * s.max_abs().max(1.0));
            // Bitwise determinism.
            prop_assert_eq!(sym_eigen(&s).unwrap(), e);
        }

        #[test]
        fn inverse_sqrt_projects(s in psd_strategy()) {
            let e = sym_eigen(&s).unwrap();
            let r = inv_sqrt_psd(&s, DEFAULT_EIG_TOL).unwrap();
            prop_assert_eq!(r.transpose(), r.clone());
            let p = kept_projector(&e, DEFAULT_EIG_TOL);
            prop_assert!(r.matmul(&r).matmul(&s).max_abs_diff(&p) <= 1e-6);
        }
    }

    #[test]
    fn agrees_with_nalgebra() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for n in [1usize, 2, 5, 9, 16] {
            let vals: Vec<f64> = (0..n * (n + 1) / 2).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let s = symmetric(n, &vals);
            let ours = sym_eigen(&s).unwrap();
            let theirs = nalgebra::DMatrix::from_row_slice(n, n, s.as_slice()).symmetric_eigen();
            let mut ev: Vec<f64> = theirs.eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in ours.eigenvalues.iter().zip(&ev) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }
}
