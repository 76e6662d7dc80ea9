//! Dense linear algebra: ridge least squares through the Gram matrix,
//! linear-map fitting, one-sided Jacobi SVD, and PCA.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Ridge added to every Gram solve unless the caller overrides it.
pub const DEFAULT_RIDGE: f64 = 1e-6;

const MAX_JITTER: f64 = 1e-4;

/// Lower-triangular Cholesky factor of an `n×n` symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub(crate) struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub(crate) fn factor(a: &[f64], n: usize) -> Option<Self> {
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for p in 0..j {
                d -= l[j * n + p] * l[j * n + p];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p];
                }
                l[i * n + j] = s / d;
            }
        }
        Some(Cholesky { n, l })
    }

    /// Solves `L Lᵀ x = b` in place for a row-major `n×d` right-hand side.
    pub(crate) fn solve_in_place(&self, b: &mut [f64], d: usize) {
        let n = self.n;
        let l = &self.l;
        for c in 0..d {
            for i in 0..n {
                let mut s = b[i * d + c];
                for p in 0..i {
                    s -= l[i * n + p] * b[p * d + c];
                }
                b[i * d + c] = s / l[i * n + i];
            }
            for i in (0..n).rev() {
                let mut s = b[i * d + c];
                for p in i + 1..n {
                    s -= l[p * n + i] * b[p * d + c];
                }
                b[i * d + c] = s / l[i * n + i];
            }
        }
    }

    /// Row-major `n×n` lower factor.
    pub(crate) fn lower(&self) -> &[f64] {
        &self.l
    }

    pub(crate) fn solve(&self, rhs: &Tensor) -> Tensor {
        let mut out = rhs.clone();
        let d = rhs.cols();
        self.solve_in_place(out.data_mut(), d);
        out
    }
}

/// Factors `GᵀG + ridge·I`, escalating a diagonal jitter ×10 up to `1e-4`
/// (relative to the mean diagonal) when the factorization fails.
pub(crate) fn gram_factor(g: &Tensor, ridge: f64) -> Result<Cholesky> {
    let (m, k) = (g.rows(), g.cols());
    let mut gram = vec![0.0; k * k];
    gemm(k, m, k, g.data(), true, g.data(), false, &mut gram, 0.0);
    for i in 0..k {
        gram[i * k + i] += ridge;
    }
    if let Some(c) = Cholesky::factor(&gram, k) {
        return Ok(c);
    }
    let mean_diag = (0..k).map(|i| gram[i * k + i]).sum::<f64>() / k as f64;
    if !(mean_diag > 0.0) {
        return Err(Error::Conditioning(format!(
            "Gram matrix ({k}×{k}) is zero; the design carries no information"
        )));
    }
    let mut jitter = 1e-12;
    while jitter <= MAX_JITTER * (1.0 + 1e-9) {
        let mut jittered = gram.clone();
        for i in 0..k {
            jittered[i * k + i] += jitter * mean_diag;
        }
        if let Some(c) = Cholesky::factor(&jittered, k) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::Conditioning(format!(
        "Gram matrix ({k}×{k}) not positive definite even with jitter {MAX_JITTER:e}"
    )))
}

fn check_ls_inputs(g: &Tensor, f: &Tensor, ridge: f64) -> Result<()> {
    if g.ndim() != 2 || g.rows() == 0 || g.cols() == 0 {
        return Err(Error::Dimension(format!(
            "design matrix must be m×k with m, k ≥ 1, got {:?}",
            g.shape()
        )));
    }
    if f.rows() != g.rows() {
        return Err(Error::Dimension(format!(
            "design matrix has {} rows but targets have {}",
            g.rows(),
            f.rows()
        )));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Config(format!("ridge must be ≥ 0, got {ridge}")));
    }
    if !g.is_finite() || !f.is_finite() {
        return Err(Error::Data("non-finite entry in least-squares input".into()));
    }
    Ok(())
}

/// `argmin_α ‖Gα − F‖² + ridge·‖α‖²` via Cholesky of `GᵀG + ridge·I`.
///
/// `g` is `m×k`, `f` is `m×d`; the result is `k×d`.
pub fn least_squares(g: &Tensor, f: &Tensor, ridge: f64) -> Result<Tensor> {
    check_ls_inputs(g, f, ridge)?;
    let chol = gram_factor(g, ridge)?;
    let rhs = g.t_matmul(f)?;
    Ok(chol.solve(&rhs))
}

/// Least squares that also returns the factor, for reuse in backward passes.
pub(crate) fn least_squares_factored(
    g: &Tensor,
    f: &Tensor,
    ridge: f64,
) -> Result<(Tensor, Cholesky)> {
    check_ls_inputs(g, f, ridge)?;
    let chol = gram_factor(g, ridge)?;
    let rhs = g.t_matmul(f)?;
    Ok((chol.solve(&rhs), chol))
}

/// A linear map between coefficient spaces, stored as an `ℓ×k` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    matrix: Tensor,
}

impl LinearMap {
    pub fn new(matrix: Tensor) -> Result<Self> {
        if matrix.ndim() != 2 || !matrix.is_finite() {
            return Err(Error::Data("linear map must be a finite 2-D matrix".into()));
        }
        Ok(LinearMap { matrix })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearMap {
            matrix: Tensor::zeros(&[out_dim, in_dim]),
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut matrix = Tensor::zeros(&[n, n]);
        for (i, &v) in values.iter().enumerate() {
            matrix.set2(i, i, v);
        }
        LinearMap { matrix }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn in_dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.rows()
    }

    /// `A·α` for a coefficient vector of length `k`.
    pub fn apply(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        if alpha.len() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "linear map expects {} coefficients, got {}",
                self.in_dim(),
                alpha.len()
            )));
        }
        let k = self.in_dim();
        Ok((0..self.out_dim())
            .map(|r| {
                self.matrix.data()[r * k..(r + 1) * k]
                    .iter()
                    .zip(alpha)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }
}

/// Fits `A = argmin (1/N) Σ‖βₙ − Aαₙ‖² + ridge‖A‖²` from stacked rows.
pub fn fit_linear_map(alphas: &Tensor, betas: &Tensor, ridge: f64) -> Result<LinearMap> {
    if alphas.rows() == 0 {
        return Err(Error::Config("need at least one coefficient pair".into()));
    }
    // Rows of `alphas` form the design matrix; each column of the solution is
    // one row of A.
    let x = least_squares(alphas, betas, ridge)?;
    LinearMap::new(x.transpose())
}

/// Thin singular value decomposition `A = U·diag(S)·Vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `m×r`, orthonormal columns.
    pub u: Tensor,
    /// Descending, non-negative, length `r = min(m, n)`.
    pub s: Vec<f64>,
    /// `n×r`, orthonormal columns.
    pub v: Tensor,
}

/// One-sided Jacobi SVD.
///
/// Each right singular vector is signed so its largest-magnitude entry is positive.
pub fn svd_dense(a: &Tensor) -> Result<Svd> {
    if a.ndim() != 2 {
        return Err(Error::Dimension(format!("svd needs a matrix, got {:?}", a.shape())));
    }
    if !a.is_finite() {
        return Err(Error::Data("non-finite entry in svd input".into()));
    }
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        let t = svd_tall(&a.transpose());
        let mut out = Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
        fix_signs(&mut out);
        return Ok(out);
    }
    let mut out = svd_tall(a);
    fix_signs(&mut out);
    Ok(out)
}

fn svd_tall(a: &Tensor) -> Svd {
    let (m, n) = (a.rows(), a.cols());
    // Column-major working copies.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get2(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let eps = 1e-15;
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (&w[p], &w[q]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for i in 0..m {
                        al += wp[i] * wp[i];
                        be += wq[i] * wq[i];
                        ga += wp[i] * wq[i];
                    }
                    (al, be, ga)
                };
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = w.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let smax = norms.iter().fold(0.0f64, |a, &b| a.max(b));
    let tiny = smax * 1e-14 + f64::MIN_POSITIVE;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        v_cols.push(v[j].clone());
        if sigma > tiny {
            u_cols.push(w[j].iter().map(|x| x / sigma).collect());
        } else {
            u_cols.push(vec![0.0; m]);
            deficient.push(slot);
        }
    }
    for slot in deficient {
        let others: Vec<&Vec<f64>> = u_cols
            .iter()
            .enumerate()
            .filter(|(i, c)| *i != slot && c.iter().any(|x| *x != 0.0))
            .map(|(_, c)| c)
            .collect();
        let col = orthonormal_complement(&others, m);
        u_cols[slot] = col;
    }
    Svd {
        u: from_columns(&u_cols, m),
        s,
        v: from_columns(&v_cols, n),
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

fn from_columns(cols: &[Vec<f64>], rows: usize) -> Tensor {
    let n = cols.len();
    let mut t = Tensor::zeros(&[rows, n]);
    for (j, c) in cols.iter().enumerate() {
        for (i, &x) in c.iter().enumerate() {
            t.set2(i, j, x);
        }
    }
    t
}

/// A unit vector orthogonal to every vector in `basis`, found by
/// Gram–Schmidt over the standard basis.
pub(crate) fn orthonormal_complement(basis: &[&Vec<f64>], dim: usize) -> Vec<f64> {
    for e in 0..dim {
        let mut cand = vec![0.0; dim];
        cand[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let d: f64 = b.iter().zip(&cand).map(|(x, y)| x * y).sum();
                for (c, x) in cand.iter_mut().zip(b.iter()) {
                    *c -= d * x;
                }
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return cand.into_iter().map(|x| x / norm).collect();
        }
    }
    vec![0.0; dim]
}

fn fix_signs(svd: &mut Svd) {
    let r = svd.s.len();
    for j in 0..r {
        let (mut best, mut idx) = (0.0f64, 0);
        for i in 0..svd.v.rows() {
            let x = svd.v.get2(i, j);
            if x.abs() > best {
                best = x.abs();
                idx = i;
            }
        }
        if svd.v.get2(idx, j) < 0.0 {
            for i in 0..svd.v.rows() {
                let x = svd.v.get2(i, j);
                svd.v.set2(i, j, -x);
            }
            for i in 0..svd.u.rows() {
                let x = svd.u.get2(i, j);
                svd.u.set2(i, j, -x);
            }
        }
    }
}

/// Principal components of row samples.
#[derive(Debug, Clone)]
pub struct Pca {
    /// `n_components × P`, orthonormal rows.
    pub components: Tensor,
    pub singular_values: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Top right-singular vectors of the column-centered `X` (`n×P`).
pub fn pca(x: &Tensor, n_components: usize) -> Result<Pca> {
    let (n, p) = (x.rows(), x.cols());
    if n_components == 0 || n_components > n.min(p) {
        return Err(Error::Config(format!(
            "n_components must be in 1..={}, got {n_components}",
            n.min(p)
        )));
    }
    let mut mean = vec![0.0; p];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut centered = x.clone();
    for i in 0..n {
        for j in 0..p {
            let v = centered.get2(i, j) - mean[j];
            centered.set2(i, j, v);
        }
    }

    let (mut comps, svals): (Vec<Vec<f64>>, Vec<f64>) = if p <= n || p <= 256 {
        let svd = svd_dense(&centered)?;
        (
            (0..n_components)
                .map(|c| (0..p).map(|i| svd.v.get2(i, c)).collect())
                .collect(),
            svd.s[..n_components].to_vec(),
        )
    } else {
        // Wide case: eigenvectors of the n×n Gram matrix X Xᵀ.
        let mut gram = vec![0.0; n * n];
        gemm(n, p, n, centered.data(), false, centered.data(), true, &mut gram, 0.0);
        let gsvd = svd_dense(&Tensor::from_parts(vec![n, n], gram))?;
        let top = gsvd.s.first().copied().unwrap_or(0.0);
        let mut comps = Vec::with_capacity(n_components);
        let mut svals = Vec::with_capacity(n_components);
        for c in 0..n_components {
            let s2 = gsvd.s[c];
            let sigma = s2.max(0.0).sqrt();
            if s2 > top * 1e-24 && s2 > 0.0 {
                let mut v = vec![0.0; p];
                for i in 0..n {
                    let ui = gsvd.u.get2(i, c);
                    for (vj, xj) in v.iter_mut().zip(centered.row(i)) {
                        *vj += ui * xj;
                    }
                }
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                comps.push(v.into_iter().map(|a| a / norm).collect());
            } else {
                comps.push(vec![0.0; p]);
            }
            svals.push(sigma);
        }
        (comps, svals)
    };

    // Re-orthonormalize (and fill degenerate directions) so rows are exactly orthonormal.
    for c in 0..comps.len() {
        let prev: Vec<Vec<f64>> = comps[..c].to_vec();
        let mut v = comps[c].clone();
        for _ in 0..2 {
            for b in &prev {
                let d: f64 = b.iter().zip(&v).map(|(x, y)| x * y).sum();
                for (a, x) in v.iter_mut().zip(b) {
                    *a -= d * x;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        comps[c] = if norm > 1e-8 {
            v.into_iter().map(|a| a / norm).collect()
        } else {
            let refs: Vec<&Vec<f64>> = prev.iter().collect();
            orthonormal_complement(&refs, p)
        };
    }
    let data = comps.into_iter().flatten().collect();
    Ok(Pca {
        components: Tensor::from_parts(vec![n_components, p], data),
        singular_values: svals,
        mean,
    })
}
