//! Principal Nested Spheres.
//!
//! Starting from points on `S^{d-1}`, each level fits the best small (or
//! great) subsphere, records the signed geodesic residuals, projects onto the
//! subsphere and identifies it with `S^{k-1}` one dimension lower. The last
//! level is the circle `S^1`, where the exact Fréchet mean is taken. Residuals
//! of level `l` are multiplied by the product of `sin r_j` over the levels
//! above it so every score is a geodesic length on the original sphere.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{
    exp_map_unchecked, geodesic_distance, pole_tiebreak_direction, project_to_subsphere_or_tiebreak,
    rotate_a_to_b, PlaneRotation, Subsphere, UnitVector,
};

/// Score matrix: rows are score coordinates, columns are cases.
pub type ScoreMatrix = DMatrix<f64>;

const FIT_MAX_ITER: usize = 500;
const FIT_TOL: f64 = 1e-9;

/// Options for [`fit_subsphere_with`] and [`pns_fit_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Restrict every level to great subspheres (`r = π/2`).
    pub force_great: bool,
}

/// Outcome of a single subsphere fit.
#[derive(Debug, Clone)]
pub struct SubsphereFit {
    pub subsphere: Subsphere,
    /// Sum of squared residuals at the returned subsphere.
    pub objective: f64,
    pub iterations: usize,
    /// Fewer than `m + 2` points on `S^m`.
    pub under_determined: bool,
}

/// Sum of squared residuals `sum_i (d(x_i, v) - r)^2`.
pub fn subsphere_objective(points: &[UnitVector], axis: &UnitVector, radius: f64) -> f64 {
    points
        .iter()
        .map(|p| (geodesic_distance(p, axis) - radius).powi(2))
        .sum()
}

pub fn fit_subsphere(points: &[UnitVector]) -> Result<SubsphereFit> {
    fit_subsphere_with(points, FitOptions::default())
}

/// Least-squares subsphere of points on `S^m` (vectors in `R^{m+1}`).
///
/// The axis starts at the least-variance direction of the points and is
/// refined by damped Gauss-Newton steps in the tangent space, with the radius
/// profiled out as the mean distance to the axis.
pub fn fit_subsphere_with(points: &[UnitVector], opts: FitOptions) -> Result<SubsphereFit> {
    let n = points.len();
    if n == 0 {
        return Err(Error::DegenerateData("no points".into()));
    }
    let dim = points[0].dim();
    for p in points {
        if p.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.dim(),
            });
        }
    }
    if dim < 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            found: dim,
        });
    }
    let spread = points
        .iter()
        .map(|p| geodesic_distance(p, &points[0]))
        .fold(0.0, f64::max);
    if spread < 1e-12 {
        return Err(Error::DegenerateData("all points coincide".into()));
    }

    let mut axis = initial_axis(points);
    let radius_of = |axis: &UnitVector| -> f64 {
        if opts.force_great {
            FRAC_PI_2
        } else {
            points.iter().map(|p| geodesic_distance(p, axis)).sum::<f64>() / n as f64
        }
    };
    let mut f = subsphere_objective(points, &axis, radius_of(&axis));
    let mut damping = 1e-3;
    let mut iterations = 0;
    while iterations < FIT_MAX_ITER && f > 1e-30 {
        iterations += 1;
        let (jac, res) = profiled_jacobian(points, &axis, opts.force_great);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * &res;
        let mut accepted = false;
        while damping < 1e12 {
            let mut lhs = jtj.clone();
            let scale = jtj.diagonal().amax().max(1e-12);
            for i in 0..lhs.nrows() {
                lhs[(i, i)] += damping * scale;
            }
            let Some(chol) = lhs.cholesky() else {
                damping *= 4.0;
                continue;
            };
            let delta = -chol.solve(&grad);
            if delta.norm() < 1e-15 {
                break;
            }
            let basis = tangent_basis(&axis);
            let step = &basis * &delta;
            let candidate = exp_map_unchecked(&axis, &step);
            let f_new = subsphere_objective(points, &candidate, radius_of(&candidate));
            if f_new < f {
                let gain = f - f_new;
                axis = candidate;
                f = f_new;
                damping = (damping / 3.0).max(1e-12);
                accepted = gain > FIT_TOL * f.max(1e-300) && gain > 1e-300;
                break;
            }
            damping *= 4.0;
        }
        if !accepted {
            break;
        }
    }

    let mut radius = radius_of(&axis);
    if radius > FRAC_PI_2 {
        axis = axis.neg();
        radius = PI - radius;
    }
    if (radius - FRAC_PI_2).abs() < 1e-12 && crate::linalg::largest_entry_negative(axis.coords().iter()) {
        axis = axis.neg();
    }
    let radius = radius.max(f64::MIN_POSITIVE);
    let subsphere = Subsphere::new(axis, radius)?;
    let objective = subsphere_objective(points, &subsphere.axis, subsphere.radius);
    Ok(SubsphereFit {
        subsphere,
        objective,
        iterations,
        under_determined: n < dim + 1,
    })
}

fn initial_axis(points: &[UnitVector]) -> UnitVector {
    let dim = points[0].dim();
    let n = points.len() as f64;
    let mut mean = DVector::zeros(dim);
    for p in points {
        mean += p.coords();
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for p in points {
        let c = p.coords() - &mean;
        cov += &c * c.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut idx = 0;
    for i in 1..dim {
        if eig.eigenvalues[i] < eig.eigenvalues[idx] {
            idx = i;
        }
    }
    let mut v = eig.eigenvectors.column(idx).clone_owned();
    if crate::linalg::largest_entry_negative(v.iter()) {
        v.neg_mut();
    }
    UnitVector::from_unit_unchecked(v)
}

/// Orthonormal basis of the tangent space at `v` (columns), from the
/// Householder reflection sending `v` to the last basis vector.
fn tangent_basis(v: &UnitVector) -> DMatrix<f64> {
    let d = v.dim();
    let mut h = v.coords().clone();
    h[d - 1] -= 1.0;
    let hn2 = h.norm_squared();
    let mut basis = DMatrix::zeros(d, d - 1);
    for j in 0..d - 1 {
        let mut col = DVector::zeros(d);
        col[j] = 1.0;
        if hn2 > 1e-30 {
            col -= &h * (2.0 * h[j] / hn2);
        }
        basis.set_column(j, &col);
    }
    basis
}

/// Jacobian (in tangent coordinates) and residual vector of the radius-profiled
/// least-squares problem.
fn profiled_jacobian(points: &[UnitVector], axis: &UnitVector, force_great: bool) -> (DMatrix<f64>, DVector<f64>) {
    let n = points.len();
    let basis = tangent_basis(axis);
    let dim_t = basis.ncols();
    let v = axis.coords();
    let mut jac = DMatrix::zeros(n, dim_t);
    let mut res = DVector::zeros(n);
    for (i, p) in points.iter().enumerate() {
        let c = p.dot(axis).clamp(-1.0, 1.0);
        let rho = geodesic_distance(p, axis);
        res[i] = rho;
        let s = rho.sin();
        if s > 1e-12 {
            let g = -(p.coords() - v * c) / s;
            let row = basis.transpose() * g;
            jac.set_row(i, &row.transpose());
        }
    }
    if force_great {
        res.add_scalar_mut(-FRAC_PI_2);
    } else {
        let mean_res = res.mean();
        res.add_scalar_mut(-mean_res);
        let mean_row = jac.row_mean();
        for mut row in jac.row_iter_mut() {
            row -= &mean_row;
        }
    }
    (jac, res)
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(TAU);
    if x > PI {
        x -= TAU;
    }
    x
}

/// Exact Fréchet mean of angles on the unit circle (arc-length metric).
///
/// The Fréchet function is piecewise quadratic with breakpoints at the
/// antipodes of the data; the global minimizer is either a breakpoint or the
/// unwrapped mean of some piece, and all of them are scanned.
pub fn circular_frechet_mean(angles: &[f64]) -> f64 {
    assert!(!angles.is_empty(), "Fréchet mean of no angles");
    let n = angles.len() as f64;
    let cost = |mu: f64| -> f64 { angles.iter().map(|a| wrap_angle(a - mu).powi(2)).sum() };
    let mut antipodes: Vec<f64> = angles.iter().map(|a| (a + PI).rem_euclid(TAU)).collect();
    antipodes.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = angles.to_vec();
    candidates.extend(antipodes.iter().copied());
    for i in 0..antipodes.len() {
        let next = if i + 1 < antipodes.len() {
            antipodes[i + 1]
        } else {
            antipodes[0] + TAU
        };
        let reference = 0.5 * (antipodes[i] + next);
        let unwrapped_mean = angles
            .iter()
            .map(|a| reference + wrap_angle(a - reference))
            .sum::<f64>()
            / n;
        candidates.push(unwrapped_mean);
    }
    let mut best = wrap_angle(candidates[0]);
    let mut best_cost = cost(best);
    for c in candidates.into_iter().skip(1) {
        let c = wrap_angle(c);
        let v = cost(c);
        if v < best_cost {
            best = c;
            best_cost = v;
        }
    }
    best
}

/// One fitted subsphere level of the nested hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnsLevel {
    pub subsphere: Subsphere,
    /// Unscaled signed residuals of the training points.
    pub residuals: Vec<f64>,
    /// Rotation sending the axis to the last basis vector; together with the
    /// `1 / sin r` rescaling it identifies the subsphere with a unit sphere of
    /// one dimension less.
    pub rotation: PlaneRotation,
    pub under_determined: bool,
    /// The level saw coincident points and was set to a great subsphere
    /// through them.
    pub degenerate: bool,
}

impl PnsLevel {
    /// Dimension of the ambient space this level lives in.
    pub fn ambient_dim(&self) -> usize {
        self.subsphere.axis.dim()
    }

    fn to_lower(&self, projected: &UnitVector) -> UnitVector {
        let d = self.ambient_dim();
        let rotated = self.rotation.apply(projected.coords());
        let lower = rotated.rows(0, d - 1).clone_owned();
        UnitVector::from_unit_unchecked(lower)
    }

    fn from_lower(&self, lower: &DVector<f64>, offset: f64) -> DVector<f64> {
        let d = self.ambient_dim();
        let mut x = DVector::zeros(d);
        let (s, c) = offset.sin_cos();
        x.rows_mut(0, d - 1).copy_from(&(lower * s));
        x[d - 1] = c;
        self.rotation.apply_inverse(&x)
    }
}

/// The final `S^1` level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleLevel {
    /// Fréchet mean angle in `(-π, π]`.
    pub mean_angle: f64,
    /// Unscaled signed arcs of the training points from the mean.
    pub arcs: Vec<f64>,
}

/// A fitted PNS hierarchy on `S^{d-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnsModel {
    /// Ambient dimension `d`.
    pub dim: usize,
    /// Subsphere levels, from `S^{d-1}` down to `S^2`.
    pub levels: Vec<PnsLevel>,
    pub circle: CircleLevel,
    pub backward_mean: UnitVector,
    /// Multiplier of each score row (`d - 1` entries, the circle last).
    pub scale_factors: Vec<f64>,
    pub options: FitOptions,
}

impl PnsModel {
    /// Number of score coordinates, `d - 1`.
    pub fn n_scores(&self) -> usize {
        self.dim - 1
    }

    /// Training scores recorded during the fit.
    pub fn training_scores(&self) -> ScoreMatrix {
        let n = self.circle.arcs.len();
        let mut m = DMatrix::zeros(self.n_scores(), n);
        for (l, level) in self.levels.iter().enumerate() {
            for (j, r) in level.residuals.iter().enumerate() {
                m[(l, j)] = r * self.scale_factors[l];
            }
        }
        let last = self.n_scores() - 1;
        for (j, a) in self.circle.arcs.iter().enumerate() {
            m[(last, j)] = a * self.scale_factors[last];
        }
        m
    }
}

pub fn pns_fit(points: &[UnitVector]) -> Result<PnsModel> {
    pns_fit_with(points, FitOptions::default())
}

/// Fits the full nested-sphere hierarchy.
pub fn pns_fit_with(points: &[UnitVector], opts: FitOptions) -> Result<PnsModel> {
    if points.len() < 2 {
        return Err(Error::CaseMismatch(format!(
            "PNS needs at least 2 points, got {}",
            points.len()
        )));
    }
    let dim = points[0].dim();
    if dim < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: dim,
        });
    }
    for p in points {
        if p.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.dim(),
            });
        }
    }
    let mut current: Vec<UnitVector> = points.to_vec();
    let mut levels = Vec::with_capacity(dim.saturating_sub(2));
    while current[0].dim() > 2 {
        let level = fit_level(&current, opts)?;
        current = current
            .iter()
            .map(|p| project_to_subsphere_or_tiebreak(p, &level.subsphere).map(|q| level.to_lower(&q)))
            .collect::<Result<_>>()?;
        levels.push(level);
    }
    let angles: Vec<f64> = current.iter().map(|p| p.coords()[1].atan2(p.coords()[0])).collect();
    let mean_angle = circular_frechet_mean(&angles);
    let arcs = angles.iter().map(|a| wrap_angle(a - mean_angle)).collect();

    let mut scale_factors = Vec::with_capacity(dim - 1);
    let mut acc = 1.0;
    for level in &levels {
        scale_factors.push(acc);
        acc *= level.subsphere.radius.sin();
    }
    scale_factors.push(acc);

    let mut model = PnsModel {
        dim,
        levels,
        circle: CircleLevel { mean_angle, arcs },
        backward_mean: UnitVector::basis(dim, 0),
        scale_factors,
        options: opts,
    };
    model.backward_mean = pns_inverse(&model, &[])?;
    Ok(model)
}

fn fit_level(points: &[UnitVector], opts: FitOptions) -> Result<PnsLevel> {
    let dim = points[0].dim();
    let (subsphere, under_determined, degenerate) = match fit_subsphere_with(points, opts) {
        Ok(fit) => (fit.subsphere, fit.under_determined, false),
        Err(Error::DegenerateData(_)) => {
            // Great subsphere through the common point.
            let axis = UnitVector::from_unit_unchecked(pole_tiebreak_direction(&points[0]));
            (Subsphere::new(axis, FRAC_PI_2)?, points.len() < dim + 1, true)
        }
        Err(e) => return Err(e),
    };
    let last = UnitVector::basis(dim, dim - 1);
    let plane = UnitVector::basis(dim, 0).into_inner();
    let rotation = rotate_a_to_b(&subsphere.axis, &last, Some(&plane))?;
    let residuals = points
        .iter()
        .map(|p| geodesic_distance(p, &subsphere.axis) - subsphere.radius)
        .collect();
    Ok(PnsLevel {
        subsphere,
        residuals,
        rotation,
        under_determined,
        degenerate,
    })
}

/// Euclidean scores of arbitrary points under a fitted model (`d - 1` rows).
pub fn pns_scores(model: &PnsModel, points: &[UnitVector]) -> Result<ScoreMatrix> {
    let mut out = DMatrix::zeros(model.n_scores(), points.len());
    for (j, p) in points.iter().enumerate() {
        if p.dim() != model.dim {
            return Err(Error::DimensionMismatch {
                expected: model.dim,
                found: p.dim(),
            });
        }
        let mut cur = p.clone();
        for (l, level) in model.levels.iter().enumerate() {
            let res = geodesic_distance(&cur, &level.subsphere.axis) - level.subsphere.radius;
            out[(l, j)] = res * model.scale_factors[l];
            let q = project_to_subsphere_or_tiebreak(&cur, &level.subsphere)?;
            cur = level.to_lower(&q);
        }
        let angle = cur.coords()[1].atan2(cur.coords()[0]);
        let last = model.n_scores() - 1;
        out[(last, j)] = wrap_angle(angle - model.circle.mean_angle) * model.scale_factors[last];
    }
    Ok(out)
}

/// Pullback of a score vector to the original sphere. Scores beyond
/// `scores.len()` are taken as zero.
pub fn pns_inverse(model: &PnsModel, scores: &[f64]) -> Result<UnitVector> {
    let k = model.n_scores();
    if scores.len() > k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: scores.len(),
        });
    }
    let score = |i: usize| scores.get(i).copied().unwrap_or(0.0);
    let last = k - 1;
    let angle = model.circle.mean_angle + score(last) / model.scale_factors[last];
    let mut cur = DVector::from_column_slice(&[angle.cos(), angle.sin()]);
    for (l, level) in model.levels.iter().enumerate().rev() {
        let offset = level.subsphere.radius + score(l) / model.scale_factors[l];
        if !(0.0..PI).contains(&offset) {
            return Err(Error::ScoreOutOfRange { level: l, angle: offset });
        }
        cur = level.from_lower(&cur, offset);
    }
    Ok(UnitVector::from_unit_unchecked(cur))
}

/// Pullback of every column of a score matrix.
pub fn pns_inverse_columns(model: &PnsModel, scores: &ScoreMatrix) -> Result<Vec<UnitVector>> {
    scores
        .column_iter()
        .map(|c| pns_inverse(model, c.as_slice()))
        .collect()
}
