use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::LabeledScores;

pub const DWD_TOL: f64 = 1e-8;
pub const DWD_MAX_ITER: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Dwd,
    MeanDifference,
}

/// Linear rule `w^T (x - center) + intercept`; positive values predict label 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub w: Vec<f64>,
    pub intercept: f64,
    /// Training centering vector subtracted before applying `w`.
    pub center: Vec<f64>,
    pub lambda: f64,
    pub loss: Loss,
    pub iterations: usize,
    pub converged: bool,
    /// The line search failed to decrease the objective; `w` is the best
    /// iterate found.
    pub no_descent: bool,
    /// Objective after each accepted step (empty for the closed form).
    pub objective_trace: Vec<f64>,
}

impl LinearClassifier {
    pub fn decision_values(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        if features.nrows() != self.w.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w.len(),
                found: features.nrows(),
            });
        }
        Ok(features
            .column_iter()
            .map(|c| {
                c.iter()
                    .zip(&self.center)
                    .zip(&self.w)
                    .map(|((x, m), w)| (x - m) * w)
                    .sum::<f64>()
                    + self.intercept
            })
            .collect())
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<u8>> {
        Ok(self
            .decision_values(features)?
            .into_iter()
            .map(|v| u8::from(v > 0.0))
            .collect())
    }

    pub fn accuracy(&self, test: &LabeledScores) -> Result<f64> {
        let pred = self.predict(&test.features)?;
        let hits = pred.iter().zip(&test.labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / test.labels.len().max(1) as f64)
    }

    pub fn weight_norm(&self) -> f64 {
        self.w.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn check_classes(train: &LabeledScores) -> Result<()> {
    for class in [0u8, 1] {
        if train.class_count(class) == 0 {
            return Err(Error::InsufficientClassSize(format!("class {class} is empty")));
        }
    }
    Ok(())
}

fn class_means(train: &LabeledScores) -> [DVector<f64>; 2] {
    let p = train.features.nrows();
    let mut sums = [DVector::zeros(p), DVector::zeros(p)];
    let mut counts = [0usize; 2];
    for (j, &l) in train.labels.iter().enumerate() {
        sums[l as usize] += train.features.column(j);
        counts[l as usize] += 1;
    }
    [&sums[0] / counts[0] as f64, &sums[1] / counts[1] as f64]
}

/// Closed form: `w` is the class-mean difference, cut at the midpoint.
pub fn train_mean_difference(train: &LabeledScores) -> Result<LinearClassifier> {
    check_classes(train)?;
    let [m0, m1] = class_means(train);
    Ok(LinearClassifier {
        w: (&m1 - &m0).iter().copied().collect(),
        intercept: 0.0,
        center: ((&m1 + &m0) / 2.0).iter().copied().collect(),
        lambda: 0.0,
        loss: Loss::MeanDifference,
        iterations: 0,
        converged: true,
        no_descent: false,
        objective_trace: Vec::new(),
    })
}

/// Generalized DWD loss: linear below one half, `1 / (4u)` above.
fn loss(u: f64) -> f64 {
    if u <= 0.5 {
        1.0 - u
    } else {
        1.0 / (4.0 * u)
    }
}

fn loss_deriv(u: f64) -> f64 {
    if u <= 0.5 {
        -1.0
    } else {
        -1.0 / (4.0 * u * u)
    }
}

struct Problem {
    x: DMatrix<f64>,
    y: Vec<f64>,
    lambda: f64,
}

impl Problem {
    fn objective(&self, w: &DVector<f64>, b: f64) -> f64 {
        let n = self.y.len() as f64;
        let margins = self.x.tr_mul(w);
        let data: f64 = margins
            .iter()
            .zip(&self.y)
            .map(|(m, y)| loss(y * (m + b)))
            .sum();
        data / n + self.lambda * w.norm_squared()
    }

    fn gradient(&self, w: &DVector<f64>, b: f64) -> (DVector<f64>, f64) {
        let n = self.y.len() as f64;
        let margins = self.x.tr_mul(w);
        let coef = DVector::from_iterator(
            self.y.len(),
            margins.iter().zip(&self.y).map(|(m, y)| loss_deriv(y * (m + b)) * y / n),
        );
        let gw = &self.x * &coef + w * (2.0 * self.lambda);
        (gw, coef.sum())
    }
}

/// Minimizes `(1/n) Σ V(y_i (w^T x_i + b)) + λ |w|^2` over centered features by
/// gradient descent with Barzilai-Borwein trial steps and Armijo backtracking.
pub fn train_dwd(train: &LabeledScores, lambda: f64) -> Result<LinearClassifier> {
    check_classes(train)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda = {lambda} must be positive")));
    }
    let p = train.features.nrows();
    let n = train.n_cases();
    let center = DVector::from_iterator(p, train.features.row_iter().map(|r| r.sum() / n as f64));
    let mut x = train.features.clone();
    for mut col in x.column_iter_mut() {
        col -= &center;
    }
    let prob = Problem {
        x,
        y: train.labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect(),
        lambda,
    };

    let mut w = DVector::zeros(p);
    let mut b = 0.0;
    let mut f = prob.objective(&w, b);
    let (mut gw, mut gb) = prob.gradient(&w, b);
    let mut step = 1.0;
    let mut trace = vec![f];
    let mut converged = false;
    let mut no_descent = false;
    let mut iterations = 0;
    let mut small_changes = 0;
    while iterations < DWD_MAX_ITER {
        iterations += 1;
        let g2 = gw.norm_squared() + gb * gb;
        if g2.sqrt() <= 1e-12 {
            converged = true;
            break;
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..60 {
            let w_new = &w - &gw * t;
            let b_new = b - gb * t;
            let f_new = prob.objective(&w_new, b_new);
            if f_new <= f - 1e-4 * t * g2 {
                accepted = Some((w_new, b_new, f_new));
                break;
            }
            t *= 0.5;
        }
        let Some((w_new, b_new, f_new)) = accepted else {
            no_descent = true;
            break;
        };
        let (gw_new, gb_new) = prob.gradient(&w_new, b_new);
        let sw = &w_new - &w;
        let sb = b_new - b;
        let yw = &gw_new - &gw;
        let yb = gb_new - gb;
        let sy = sw.dot(&yw) + sb * yb;
        let ss = sw.norm_squared() + sb * sb;
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { (t * 2.0).min(1e10) };
        let change = f - f_new;
        w = w_new;
        b = b_new;
        gw = gw_new;
        gb = gb_new;
        f = f_new;
        trace.push(f);
        if change <= DWD_TOL * f.abs().max(1.0) {
            small_changes += 1;
            if small_changes >= 2 {
                converged = true;
                break;
            }
        } else {
            small_changes = 0;
        }
    }
    Ok(LinearClassifier {
        w: w.iter().copied().collect(),
        intercept: b,
        center: center.iter().copied().collect(),
        lambda,
        loss: Loss::Dwd,
        iterations,
        converged,
        no_descent,
        objective_trace: trace,
    })
}
