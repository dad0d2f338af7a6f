//! Pre-shapes and Generalized Procrustes Analysis.
//!
//! A landmark configuration is centered and scaled to unit centroid size,
//! which places it on the unit sphere of dimension `M*D - 1`. Rotation is
//! removed by GPA, separately for every object.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Svd;
use crate::serde_mat;
use crate::sphere::UnitVector;

/// Mean-change tolerance at which GPA stops.
pub const GPA_TOL: f64 = 1e-9;
/// Iteration cap for GPA.
pub const GPA_MAX_ITER: usize = 200;
/// Final mean change above which a capped GPA run is reported as not converged.
pub const GPA_CONVERGENCE_FLAG: f64 = 1e-6;

/// One object's landmarks (`M x D`, rows are landmarks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkConfig {
    #[serde(with = "serde_mat")]
    pub points: DMatrix<f64>,
    pub case_id: String,
    pub object_label: String,
}

impl LandmarkConfig {
    pub fn new(
        points: DMatrix<f64>,
        case_id: impl Into<String>,
        object_label: impl Into<String>,
    ) -> Result<Self> {
        let cfg = LandmarkConfig {
            points,
            case_id: case_id.into(),
            object_label: object_label.into(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, d) = self.points.shape();
        if m < 3 {
            return Err(Error::DegenerateShape(format!(
                "case {}: {m} landmarks, at least 3 required",
                self.case_id
            )));
        }
        if d != 2 && d != 3 {
            return Err(Error::DegenerateShape(format!(
                "case {}: ambient dimension {d} not in {{2, 3}}",
                self.case_id
            )));
        }
        if self.points.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateShape(format!(
                "case {}: non-finite coordinate",
                self.case_id
            )));
        }
        for i in 0..m {
            for j in (i + 1)..m {
                if self.points.row(i) == self.points.row(j) {
                    return Err(Error::DegenerateShape(format!(
                        "case {}: landmarks {i} and {j} coincide",
                        self.case_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_landmarks(&self) -> usize {
        self.points.nrows()
    }

    pub fn ambient_dim(&self) -> usize {
        self.points.ncols()
    }
}

/// A centered, unit-size landmark vector (row-major flattening of `M x D`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreShape {
    pub coords: Vec<f64>,
    pub n_landmarks: usize,
    pub ambient_dim: usize,
    pub centroid_size: f64,
    pub removed_translation: Vec<f64>,
    #[serde(with = "serde_mat")]
    pub applied_rotation: DMatrix<f64>,
}

impl PreShape {
    /// Landmark matrix view (`M x D`).
    pub fn landmarks(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_landmarks, self.ambient_dim, &self.coords)
    }

    pub fn to_unit_vector(&self) -> UnitVector {
        UnitVector::from_unit_unchecked(DVector::from_column_slice(&self.coords))
    }

    /// Builds a pre-shape from a point already on the pre-shape sphere.
    pub fn from_unit_vector(u: &UnitVector, n_landmarks: usize, ambient_dim: usize) -> Result<Self> {
        if u.dim() != n_landmarks * ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: n_landmarks * ambient_dim,
                found: u.dim(),
            });
        }
        Ok(PreShape {
            coords: u.coords().as_slice().to_vec(),
            n_landmarks,
            ambient_dim,
            centroid_size: 1.0,
            removed_translation: vec![0.0; ambient_dim],
            applied_rotation: DMatrix::identity(ambient_dim, ambient_dim),
        })
    }

    fn with_rotation(&self, rot: &DMatrix<f64>) -> PreShape {
        let rotated = self.landmarks() * rot.transpose();
        PreShape {
            coords: row_major(&rotated),
            applied_rotation: rot * &self.applied_rotation,
            ..self.clone()
        }
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Removes translation and scale.
pub fn to_preshape(cfg: &LandmarkConfig) -> Result<PreShape> {
    let (m, d) = cfg.points.shape();
    let centroid: DVector<f64> =
        DVector::from_iterator(d, cfg.points.column_iter().map(|c| c.sum() / m as f64));
    let mut centered = cfg.points.clone();
    for mut row in centered.row_iter_mut() {
        row -= centroid.transpose();
    }
    let size = centered.norm();
    if !(size > 0.0) || size < 1e-300 {
        return Err(Error::DegenerateShape(format!(
            "case {}: all landmarks coincide",
            cfg.case_id
        )));
    }
    centered /= size;
    Ok(PreShape {
        coords: row_major(&centered),
        n_landmarks: m,
        ambient_dim: d,
        centroid_size: size,
        removed_translation: centroid.as_slice().to_vec(),
        applied_rotation: DMatrix::identity(d, d),
    })
}

/// Result of [`optimal_rotation`].
#[derive(Debug, Clone)]
pub struct OptimalRotation {
    /// `D x D` rotation `R` minimizing `|A R^T - B|_F`.
    pub matrix: DMatrix<f64>,
    /// Cross-covariance rank below `D - 1`; the rotation is not unique.
    pub rank_deficient: bool,
}

/// Rotation (det +1) that best superimposes `a` onto `b`.
pub fn optimal_rotation(a: &PreShape, b: &PreShape) -> Result<OptimalRotation> {
    if a.n_landmarks != b.n_landmarks || a.ambient_dim != b.ambient_dim {
        return Err(Error::DimensionMismatch {
            expected: a.coords.len(),
            found: b.coords.len(),
        });
    }
    Ok(rotation_between(&a.landmarks(), &b.landmarks()))
}

fn rotation_between(a: &DMatrix<f64>, b: &DMatrix<f64>) -> OptimalRotation {
    let d = a.ncols();
    let cross = a.transpose() * b;
    let svd = Svd::new(&cross);
    let scale = svd.s[0].max(1e-300);
    let rank = svd.s.iter().filter(|&&s| s > 1e-12 * scale).count();
    // R = V U^T, with the last pair flipped when that would be a reflection.
    let v = svd.vt.transpose();
    let mut r = &v * svd.u.transpose();
    if r.determinant() < 0.0 {
        let mut v_fixed = v.clone();
        v_fixed.column_mut(d - 1).neg_mut();
        r = v_fixed * svd.u.transpose();
    }
    OptimalRotation {
        matrix: r,
        rank_deficient: rank + 1 < d,
    }
}

/// Distance between `a` and `b` after optimally rotating `a` onto `b`.
pub fn procrustes_distance(a: &PreShape, b: &PreShape) -> Result<f64> {
    let rot = optimal_rotation(a, b)?;
    Ok(euclid(&a.with_rotation(&rot.matrix).coords, &b.coords))
}

/// One object's population after GPA.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignedPopulation {
    pub preshapes: Vec<PreShape>,
    pub procrustes_mean: PreShape,
    pub iterations_used: usize,
    pub final_change: f64,
    pub converged: bool,
    /// Sum of squared distances to the mean, starting before any rotation.
    pub objective_trace: Vec<f64>,
    /// Mean centroid size of the input configurations.
    pub mean_centroid_size: f64,
}

impl AlignedPopulation {
    pub fn unit_vectors(&self) -> Vec<UnitVector> {
        self.preshapes.iter().map(PreShape::to_unit_vector).collect()
    }
}

fn objective(shapes: &[PreShape], mean: &[f64]) -> f64 {
    shapes
        .iter()
        .map(|s| euclid(&s.coords, mean).powi(2))
        .sum()
}

fn normalized_mean(shapes: &[PreShape]) -> Result<Vec<f64>> {
    let len = shapes[0].coords.len();
    let mut acc = vec![0.0; len];
    for s in shapes {
        for (a, x) in acc.iter_mut().zip(&s.coords) {
            *a += x;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::DegenerateData(
            "aligned shapes average to the origin".into(),
        ));
    }
    Ok(acc.into_iter().map(|x| x / norm).collect())
}

/// Generalized Procrustes Analysis of a single object's population.
///
/// The mean starts at the first case's pre-shape. Each iteration rotates every
/// case onto the current mean and replaces the mean by the normalized average,
/// so the recorded objective never increases.
pub fn gpa(block: &[LandmarkConfig]) -> Result<AlignedPopulation> {
    if block.len() < 2 {
        return Err(Error::CaseMismatch(format!(
            "GPA needs at least 2 cases, got {}",
            block.len()
        )));
    }
    let (m, d) = block[0].points.shape();
    for cfg in block {
        cfg.validate()?;
        if cfg.points.shape() != (m, d) {
            return Err(Error::DimensionMismatch {
                expected: m * d,
                found: cfg.points.len(),
            });
        }
    }
    let raw: Vec<PreShape> = block.iter().map(to_preshape).collect::<Result<_>>()?;
    let mean_centroid_size = raw.iter().map(|p| p.centroid_size).sum::<f64>() / raw.len() as f64;

    let mut mean = raw[0].coords.clone();
    let mut aligned = raw.clone();
    let mut trace = vec![objective(&aligned, &mean)];
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < GPA_MAX_ITER {
        iterations += 1;
        let target = DMatrix::from_row_slice(m, d, &mean);
        aligned = raw
            .par_iter()
            .map(|p| {
                let rot = rotation_between(&p.landmarks(), &target);
                p.with_rotation(&rot.matrix)
            })
            .collect();
        let new_mean = normalized_mean(&aligned)?;
        change = euclid(&new_mean, &mean);
        mean = new_mean;
        trace.push(objective(&aligned, &mean));
        if change < GPA_TOL {
            break;
        }
    }
    let procrustes_mean = PreShape {
        coords: mean,
        n_landmarks: m,
        ambient_dim: d,
        centroid_size: 1.0,
        removed_translation: vec![0.0; d],
        applied_rotation: DMatrix::identity(d, d),
    };
    Ok(AlignedPopulation {
        preshapes: aligned,
        procrustes_mean,
        iterations_used: iterations,
        final_change: change,
        converged: change <= GPA_CONVERGENCE_FLAG,
        objective_trace: trace,
        mean_centroid_size,
    })
}

/// Rotates a 2-D or 3-D landmark matrix (rows are points) by `rot`.
pub fn rotate_landmarks(points: &DMatrix<f64>, rot: &DMatrix<f64>) -> DMatrix<f64> {
    points * rot.transpose()
}

/// 2-D rotation matrix by `angle` radians.
pub fn rotation_2d(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Rotation matrix for the given axis and angle (Rodrigues), `D = 3`.
pub fn rotation_3d(axis: &[f64; 3], angle: f64) -> DMatrix<f64> {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    DMatrix::from_row_slice(
        3,
        3,
        &[
            t * x * x + c,
            t * x * y - s * z,
            t * x * z + s * y,
            t * x * y + s * z,
            t * y * y + c,
            t * y * z - s * x,
            t * x * z - s * y,
            t * y * z + s * x,
            t * z * z + c,
        ],
    )
}
