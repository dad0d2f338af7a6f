//! Dense linear-algebra helpers shared by the alignment, PNS and AJIVE code.
//!
//! Everything here works on `nalgebra` dynamic matrices. SVD results are always
//! returned thin, with singular values in descending order and a deterministic
//! sign convention so that downstream bases are reproducible.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Thin singular value decomposition `a = u * diag(s) * vt`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub vt: DMatrix<f64>,
}

impl Svd {
    /// Computes the thin SVD of `a`.
    ///
    /// Singular values are sorted descending. Each right singular vector (row of
    /// `vt`) has its largest-magnitude entry made positive, and the matching
    /// column of `u` is flipped with it.
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        let k = m.min(n);
        if k == 0 {
            return Svd {
                u: DMatrix::zeros(m, 0),
                s: DVector::zeros(0),
                vt: DMatrix::zeros(0, n),
            };
        }
        let (u_raw, sv, vt_raw) = if m >= n {
            let (u, s, v) = jacobi_svd(a);
            (u, s, v.transpose())
        } else {
            let (u, s, v) = jacobi_svd(&a.transpose());
            (v, s, u.transpose())
        };
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| {
            sv[j]
                .partial_cmp(&sv[i])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        });
        let mut u = DMatrix::zeros(m, k);
        let mut s = DVector::zeros(k);
        let mut vt = DMatrix::zeros(k, n);
        for (dst, &src) in order.iter().enumerate() {
            s[dst] = sv[src];
            let mut row = vt_raw.row(src).clone_owned();
            let mut col = u_raw.column(src).clone_owned();
            if largest_entry_negative(row.iter()) {
                row.neg_mut();
                col.neg_mut();
            }
            vt.set_row(dst, &row);
            u.set_column(dst, &col);
        }
        Svd { u, s, vt }
    }

    /// Keeps the leading `r` components.
    pub fn truncate(&self, r: usize) -> Svd {
        let r = r.min(self.s.len());
        Svd {
            u: self.u.columns(0, r).clone_owned(),
            s: self.s.rows(0, r).clone_owned(),
            vt: self.vt.rows(0, r).clone_owned(),
        }
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, sv) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*sv);
        }
        us * &self.vt
    }
}

/// One-sided Jacobi SVD of a tall matrix (`m >= n`): returns `(u, s, v)` with
/// `a = u diag(s) v^T`, `u` of size `m x n` with orthonormal columns.
fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * x - s * y;
                    w[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let s: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let smax = s.iter().copied().fold(0.0, f64::max);
    let mut u = DMatrix::zeros(m, n);
    let mut filled = vec![false; n];
    for j in 0..n {
        if s[j] > 0.0 && s[j] > smax * 1e-300 {
            u.set_column(j, &(w.column(j) / s[j]));
            filled[j] = true;
        }
    }
    // complete u for zero singular values
    let mut e = 0;
    for j in 0..n {
        if filled[j] {
            continue;
        }
        while e < m {
            let mut cand = nalgebra::DVector::<f64>::zeros(m);
            cand[e] = 1.0;
            e += 1;
            for _ in 0..2 {
                for k in 0..n {
                    if filled[k] {
                        let proj = u.column(k).dot(&cand);
                        cand -= u.column(k) * proj;
                    }
                }
            }
            let nrm = cand.norm();
            if nrm > 1e-8 {
                u.set_column(j, &(cand / nrm));
                filled[j] = true;
                break;
            }
        }
    }
    (u, s, v)
}

/// True when the entry of largest magnitude (first one on ties) is negative.
pub(crate) fn largest_entry_negative<'a>(it: impl Iterator<Item = &'a f64>) -> bool {
    let mut best = 0.0_f64;
    let mut neg = false;
    for &x in it {
        if x.abs() > best {
            best = x.abs();
            neg = x < 0.0;
        }
    }
    neg
}

/// Number of singular values above `rel_tol * s_max`.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let svd = Svd::new(a);
    if svd.s.is_empty() || svd.s[0] == 0.0 {
        return 0;
    }
    let cut = rel_tol * svd.s[0];
    svd.s.iter().filter(|&&v| v > cut).count()
}

/// Orthonormal basis (as rows) of the row space of `a`, dropping directions
/// whose singular value is below `rel_tol * s_max`.
pub fn row_space_basis(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = Svd::new(a);
    if svd.s.is_empty() || svd.s[0] == 0.0 {
        return DMatrix::zeros(0, a.ncols());
    }
    let cut = rel_tol * svd.s[0];
    let r = svd.s.iter().filter(|&&v| v > cut).count();
    svd.vt.rows(0, r).clone_owned()
}

/// Principal angles (ascending, radians) between the row spaces of two matrices.
pub fn principal_angles_between(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = row_space_basis(a, 1e-10);
    let qb = row_space_basis(b, 1e-10);
    if qa.nrows() == 0 || qb.nrows() == 0 {
        return Vec::new();
    }
    let cross = &qa * qb.transpose();
    let svd = Svd::new(&cross);
    svd.s.iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect()
}

/// Row-orthonormal `r x n` matrix spanning a uniformly random `r`-dimensional
/// subspace of `R^n`.
pub fn random_orthonormal_rows<R: Rng + ?Sized>(r: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    q.transpose()
}

/// Subtracts each row's mean; returns the centered matrix and the means.
pub fn center_rows(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.ncols().max(1) as f64;
    let means = DVector::from_iterator(a.nrows(), a.row_iter().map(|r| r.sum() / n));
    let mut out = a.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row.add_scalar_mut(-means[i]);
    }
    (out, means)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] * (1.0 - frac) + v[hi] * frac
}

/// First canonical correlation between the row spaces of two (centered here)
/// feature matrices over the same cases.
pub fn first_canonical_correlation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let (ac, _) = center_rows(a);
    let (bc, _) = center_rows(b);
    principal_angles_between(&ac, &bc)
        .first()
        .map(|t| t.cos())
        .unwrap_or(0.0)
}
