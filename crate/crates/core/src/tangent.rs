//! Tangent-space baselines: intrinsic (Fréchet) and extrinsic means, and PCA
//! of log-mapped data at the mean.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::Svd;
use crate::sphere::{exp_map_unchecked, log_map, UnitVector};

/// Normalized Euclidean average.
pub fn extrinsic_mean(points: &[UnitVector]) -> Result<UnitVector> {
    let Some(first) = points.first() else {
        return Err(Error::DegenerateData("no points".into()));
    };
    let mut acc = DVector::zeros(first.dim());
    for p in points {
        acc += p.coords();
    }
    if acc.norm() < 1e-12 {
        return Err(Error::DegenerateData("points average to the origin".into()));
    }
    UnitVector::normalize(acc)
}

/// Intrinsic mean by fixed-point iteration `μ ← exp_μ(mean_i log_μ(x_i))`,
/// started from the extrinsic mean.
pub fn frechet_mean(points: &[UnitVector]) -> Result<UnitVector> {
    let mut mu = extrinsic_mean(points)?;
    for _ in 0..500 {
        let mut step = DVector::zeros(mu.dim());
        for p in points {
            step += log_map(&mu, p)?;
        }
        step /= points.len() as f64;
        mu = exp_map_unchecked(&mu, &step);
        if step.norm() < 1e-12 {
            break;
        }
    }
    Ok(mu)
}

/// Principal component analysis in the tangent space at the Fréchet mean.
#[derive(Debug, Clone)]
pub struct TangentPca {
    pub mean: UnitVector,
    /// Principal directions as columns (`d x k`).
    pub directions: DMatrix<f64>,
    /// Scores (`k x n`).
    pub scores: DMatrix<f64>,
    pub variances: Vec<f64>,
}

pub fn tangent_pca(points: &[UnitVector], k: usize) -> Result<TangentPca> {
    let mean = frechet_mean(points)?;
    let n = points.len();
    let d = mean.dim();
    let mut logs = DMatrix::zeros(d, n);
    for (j, p) in points.iter().enumerate() {
        logs.set_column(j, &log_map(&mean, p)?);
    }
    let svd = Svd::new(&logs).truncate(k);
    let scores = svd.u.transpose() * &logs;
    Ok(TangentPca {
        mean,
        variances: svd.s.iter().map(|s| s * s / n as f64).collect(),
        directions: svd.u,
        scores,
    })
}
