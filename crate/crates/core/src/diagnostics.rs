//! Fit-quality measures used to compare decompositions.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::linalg::{center_rows, Svd};

/// Best-fitting circle of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleFit {
    pub center: DVector<f64>,
    /// Orthonormal basis of the circle's plane (`p x 2`).
    pub plane: DMatrix<f64>,
    pub radius: f64,
    /// Root mean squared Euclidean distance from the points to the circle.
    pub rms_residual: f64,
}

/// Fits a circle to the columns of `points` (`p x n`, `p >= 2`): the plane of
/// the two leading principal directions, an algebraic (Kasa) circle in that
/// plane, then Gauss-Newton on the geometric in-plane distances. The residual
/// also counts the distance of each point from the plane.
pub fn best_circle_fit(points: &DMatrix<f64>) -> Result<CircleFit> {
    let (p, n) = points.shape();
    if p < 2 || n < 3 {
        return Err(Error::DegenerateData(format!(
            "circle fit needs at least 2 dimensions and 3 points, got {p} x {n}"
        )));
    }
    let (centered, mean) = center_rows(points);
    let svd = Svd::new(&centered);
    let mut basis = DMatrix::zeros(p, 2);
    for k in 0..2.min(svd.u.ncols()) {
        basis.set_column(k, &svd.u.column(k));
    }
    let plane = basis.transpose() * &centered;
    let off_plane: Vec<f64> = (0..n)
        .map(|j| (centered.column(j) - &basis * plane.column(j)).norm_squared())
        .collect();

    // algebraic fit: x^2 + y^2 + D x + E y + F = 0
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for j in 0..n {
        let (x, y) = (plane[(0, j)], plane[(1, j)]);
        let row = Vector3::new(x, y, 1.0);
        ata += row * row.transpose();
        atb += row * -(x * x + y * y);
    }
    let mut c = match ata.lu().solve(&atb) {
        Some(sol) => {
            let (cx, cy) = (-sol[0] / 2.0, -sol[1] / 2.0);
            let r2 = cx * cx + cy * cy - sol[2];
            if r2 > 0.0 && r2.is_finite() {
                Vector3::new(cx, cy, r2.sqrt())
            } else {
                Vector3::new(0.0, 0.0, mean_radius(&plane, 0.0, 0.0))
            }
        }
        None => Vector3::new(0.0, 0.0, mean_radius(&plane, 0.0, 0.0)),
    };

    let cost = |c: &Vector3<f64>| -> f64 {
        (0..n)
            .map(|j| {
                let d = ((plane[(0, j)] - c[0]).powi(2) + (plane[(1, j)] - c[1]).powi(2)).sqrt() - c[2];
                d * d
            })
            .sum()
    };
    let mut f = cost(&c);
    for _ in 0..200 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for j in 0..n {
            let dx = plane[(0, j)] - c[0];
            let dy = plane[(1, j)] - c[1];
            let rho = (dx * dx + dy * dy).sqrt().max(1e-300);
            let res = rho - c[2];
            let g = Vector3::new(-dx / rho, -dy / rho, -1.0);
            jtj += g * g.transpose();
            jtr += g * res;
        }
        let Some(step) = jtj.lu().solve(&-jtr) else {
            break;
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = c + step * t;
            let fc = cost(&cand);
            if fc < f {
                let rel = (f - fc) / f.max(1e-300);
                c = cand;
                f = fc;
                improved = rel > 1e-14;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let total: f64 = f + off_plane.iter().sum::<f64>();
    Ok(CircleFit {
        center: mean + &basis * DVector::from_column_slice(&[c[0], c[1]]),
        plane: basis,
        radius: c[2].abs(),
        rms_residual: (total / n as f64).sqrt(),
    })
}

impl CircleFit {
    /// Euclidean distance from `x` to the circle.
    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        let y = x - &self.center;
        let a = self.plane.transpose() * &y;
        let off = (&y - &self.plane * &a).norm_squared();
        (off + (a.norm() - self.radius).powi(2)).sqrt()
    }

    /// Root mean squared distance from the columns of `points` to the circle.
    pub fn rms_distance(&self, points: &DMatrix<f64>) -> f64 {
        let n = points.ncols().max(1) as f64;
        (points
            .column_iter()
            .map(|c| self.distance(&c.clone_owned()).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    }
}

fn mean_radius(plane: &DMatrix<f64>, cx: f64, cy: f64) -> f64 {
    let n = plane.ncols() as f64;
    plane
        .column_iter()
        .map(|c| ((c[0] - cx).powi(2) + (c[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_circle_in_space_has_zero_residual() {
        let n = 40;
        let u = Vector3::new(1.0, 1.0, 0.0).normalize();
        let v = Vector3::new(0.0, 0.0, 1.0);
        let center = Vector3::new(0.3, -2.0, 5.0);
        let pts = DMatrix::from_fn(3, n, |i, j| {
            // only a 120 degree arc
            let t = j as f64 / n as f64 * 2.0;
            center[i] + 1.7 * (u[i] * t.cos() + v[i] * t.sin())
        });
        let fit = best_circle_fit(&pts).unwrap();
        assert!(fit.rms_residual < 1e-8, "{}", fit.rms_residual);
        assert!((fit.radius - 1.7).abs() < 1e-8);
        assert!((fit.center - DVector::from_column_slice(center.as_slice())).norm() < 1e-7);
    }

    #[test]
    fn residual_matches_noise_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 2000;
        let sd = 0.05;
        let pts = DMatrix::from_fn(2, n, |i, j| {
            let t = j as f64 * 0.01;
            let base = if i == 0 { 2.0 * t.cos() } else { 2.0 * t.sin() };
            base + sd * rng.sample::<f64, _>(StandardNormal)
        });
        let fit = best_circle_fit(&pts).unwrap();
        assert!((fit.rms_residual / sd - 1.0).abs() < 0.1, "{}", fit.rms_residual);
    }

    #[test]
    fn a_chord_is_far_from_the_reference_circle() {
        let n = 50;
        let circle = DMatrix::from_fn(2, n, |i, j| {
            let t = j as f64 / n as f64 * std::f64::consts::TAU;
            if i == 0 { t.cos() } else { t.sin() }
        });
        let fit = best_circle_fit(&circle).unwrap();
        assert!(fit.rms_distance(&circle) < 1e-10);
        assert!((fit.rms_distance(&circle) - fit.rms_residual).abs() < 1e-10);
        let line = DMatrix::from_fn(2, n, |i, j| if i == 0 { circle[(0, j)] } else { 0.0 });
        assert!(fit.rms_distance(&line) > 0.3);
        assert!(best_circle_fit(&DMatrix::zeros(1, 10)).is_err());
    }
}
