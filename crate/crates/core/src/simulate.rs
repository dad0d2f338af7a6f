//! Synthetic data: shared-angle small circles on `S^2`, a single noisy small
//! circle, the two-group landmark construction, and landmark populations with
//! a planted group difference.

use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preshape::{gpa, rotation_2d, rotation_3d, LandmarkConfig};
use crate::sphere::{exp_map_unchecked, rotate_a_to_b, PlaneRotation, UnitVector};

fn north() -> UnitVector {
    UnitVector::basis(3, 2)
}

/// Settings for [`simulate_circle_blocks`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleSimConfig {
    pub n: usize,
    /// Circle radius (geodesic) of each block.
    pub a: Vec<f64>,
    pub sigma: f64,
    /// Where each block's circle is centred (image of the north pole).
    pub targets: Vec<UnitVector>,
    pub seed: u64,
}

impl Default for CircleSimConfig {
    fn default() -> Self {
        CircleSimConfig {
            n: 50,
            a: vec![1.0, 0.6],
            sigma: 0.1,
            targets: vec![
                north(),
                UnitVector::normalize(DVector::from_column_slice(&[1.0, 1.0, 1.0])).expect("non-zero"),
            ],
            seed: 0,
        }
    }
}

impl CircleSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::InvalidConfig(format!("n = {} < 3", self.n)));
        }
        if self.a.is_empty() || self.a.iter().any(|a| *a == 0.0 || !a.is_finite()) {
            return Err(Error::InvalidConfig("radii must be finite and non-zero".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma = {}", self.sigma)));
        }
        if self.targets.len() != self.a.len() {
            return Err(Error::InvalidConfig(format!(
                "{} targets for {} blocks",
                self.targets.len(),
                self.a.len()
            )));
        }
        if let Some(t) = self.targets.iter().find(|t| t.dim() != 3) {
            return Err(Error::DimensionMismatch {
                expected: 3,
                found: t.dim(),
            });
        }
        Ok(())
    }
}

/// Generated circle data with the latent angles.
#[derive(Debug, Clone)]
pub struct CircleSim {
    pub blocks: Vec<Vec<UnitVector>>,
    pub theta: Vec<f64>,
    pub rotations: Vec<PlaneRotation>,
}

/// Points `g_k(exp_N(a_k (cos θ, sin θ) + ε))` with `θ ~ U(0, 3π/2)` shared by
/// all blocks and independent Gaussian tangent noise per block.
pub fn simulate_circle_blocks(cfg: &CircleSimConfig) -> Result<CircleSim> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let theta: Vec<f64> = (0..cfg.n).map(|_| rng.random_range(0.0..1.5 * PI)).collect();
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let pole = north();
    let mut blocks = Vec::with_capacity(cfg.a.len());
    let mut rotations = Vec::with_capacity(cfg.a.len());
    for (a, target) in cfg.a.iter().zip(&cfg.targets) {
        let g = rotate_a_to_b(&pole, target, None)?;
        let pts = theta
            .iter()
            .map(|t| {
                let x = a * t.cos() + noise.sample(&mut rng);
                let y = a * t.sin() + noise.sample(&mut rng);
                let p = exp_map_unchecked(&pole, &DVector::from_column_slice(&[x, y, 0.0]));
                UnitVector::from_unit_unchecked(g.apply(p.coords()))
            })
            .collect();
        blocks.push(pts);
        rotations.push(g);
    }
    Ok(CircleSim {
        blocks,
        theta,
        rotations,
    })
}

/// Single-block variant of [`simulate_circle_blocks`].
pub fn simulate_single_circle(n: usize, a: f64, sigma: f64, target: &UnitVector, seed: u64) -> Result<CircleSim> {
    simulate_circle_blocks(&CircleSimConfig {
        n,
        a: vec![a],
        sigma,
        targets: vec![target.clone()],
        seed,
    })
}

/// Geodesic distance from `p` to the circle of radius `|a|` around `pole`.
pub fn distance_to_circle(p: &UnitVector, pole: &UnitVector, a: f64) -> f64 {
    (crate::sphere::geodesic_distance(p, pole) - a.abs()).abs()
}

/// Landmark change applied to build the second block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoGroupModification {
    pub landmark_index: usize,
    /// Outward displacement of the landmark from the centroid; `None` uses 20%
    /// of the population's mean centroid size.
    pub displacement: Option<f64>,
    /// Rotation of every configuration about its centroid (radians).
    pub rotation_angle: f64,
}

impl Default for TwoGroupModification {
    fn default() -> Self {
        TwoGroupModification {
            landmark_index: 0,
            displacement: None,
            rotation_angle: FRAC_PI_4,
        }
    }
}

/// Two blocks over `2n` cases: the first `n` columns are the configurations as
/// given, the last `n` their GPA-aligned versions.
#[derive(Debug, Clone)]
pub struct TwoGroupBlocks {
    pub blocks: Vec<Vec<LandmarkConfig>>,
    /// 0 for the unaligned half, 1 for the aligned half.
    pub labels: Vec<u8>,
    /// The modification with the displacement resolved.
    pub modification: TwoGroupModification,
}

/// Topmost landmark (largest second coordinate) of the population mean.
pub fn topmost_landmark(base: &[LandmarkConfig]) -> usize {
    let m = base[0].n_landmarks();
    let mut best = 0;
    let mut best_y = f64::NEG_INFINITY;
    for i in 0..m {
        let y = base.iter().map(|c| c.points[(i, 1)]).sum::<f64>() / base.len() as f64;
        if y > best_y {
            best_y = y;
            best = i;
        }
    }
    best
}

fn centroid(points: &DMatrix<f64>) -> DVector<f64> {
    let m = points.nrows() as f64;
    DVector::from_iterator(points.ncols(), points.column_iter().map(|c| c.sum() / m))
}

fn modify(cfg: &LandmarkConfig, index: usize, displacement: f64, angle: f64) -> Result<LandmarkConfig> {
    let d = cfg.ambient_dim();
    let c = centroid(&cfg.points);
    let mut pts = cfg.points.clone();
    let offset = pts.row(index).transpose() - &c;
    let norm = offset.norm();
    if norm > 0.0 {
        let moved = pts.row(index) + (offset * (displacement / norm)).transpose();
        pts.set_row(index, &moved);
    }
    let rot = if d == 2 {
        rotation_2d(angle)
    } else {
        rotation_3d(&[0.0, 0.0, 1.0], angle)
    };
    for mut row in pts.row_iter_mut() {
        let local = row.transpose() - &c;
        row.copy_from(&(&rot * local + &c).transpose());
    }
    LandmarkConfig::new(pts, cfg.case_id.clone(), cfg.object_label.clone())
}

/// GPA-aligned copies that keep each case's own size and centroid, so they
/// differ from the originals by a rotation only.
fn aligned_copies(block: &[LandmarkConfig], label: &str) -> Result<Vec<LandmarkConfig>> {
    let pop = gpa(block)?;
    block
        .iter()
        .zip(&pop.preshapes)
        .map(|(c, p)| {
            let mut pts = p.landmarks() * p.centroid_size;
            for mut row in pts.row_iter_mut() {
                row += DVector::from_column_slice(&p.removed_translation).transpose();
            }
            LandmarkConfig::new(pts, format!("{}:aligned", c.case_id), label)
        })
        .collect()
}

pub fn make_twogroup_blocks(base: &[LandmarkConfig], m: &TwoGroupModification) -> Result<TwoGroupBlocks> {
    if base.len() < 2 {
        return Err(Error::CaseMismatch(format!("need at least 2 cases, got {}", base.len())));
    }
    let n_landmarks = base[0].n_landmarks();
    if m.landmark_index >= n_landmarks {
        return Err(Error::IndexOutOfRange {
            index: m.landmark_index,
            len: n_landmarks,
        });
    }
    let displacement = match m.displacement {
        Some(d) => d,
        None => {
            let sizes: Result<Vec<f64>> = base
                .iter()
                .map(|c| crate::preshape::to_preshape(c).map(|p| p.centroid_size))
                .collect();
            let sizes = sizes?;
            0.2 * sizes.iter().sum::<f64>() / sizes.len() as f64
        }
    };
    let relabel = |cfgs: &[LandmarkConfig], label: &str| -> Vec<LandmarkConfig> {
        cfgs.iter()
            .map(|c| LandmarkConfig {
                object_label: label.to_string(),
                ..c.clone()
            })
            .collect()
    };
    let original = relabel(base, "original");
    let modified: Vec<LandmarkConfig> = base
        .iter()
        .map(|c| modify(c, m.landmark_index, displacement, m.rotation_angle))
        .collect::<Result<Vec<_>>>()?;
    let modified = relabel(&modified, "modified");
    let mut block1 = original.clone();
    block1.extend(aligned_copies(&original, "original")?);
    let mut block2 = modified.clone();
    block2.extend(aligned_copies(&modified, "modified")?);
    let n = base.len();
    let labels = (0..2 * n).map(|j| u8::from(j >= n)).collect();
    Ok(TwoGroupBlocks {
        blocks: vec![block1, block2],
        labels,
        modification: TwoGroupModification {
            displacement: Some(displacement),
            ..*m
        },
    })
}

/// Settings of the synthetic stand-in for a skull landmark population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkullPopulationConfig {
    pub n: usize,
    /// Per-coordinate shape noise relative to unit template size.
    pub shape_noise: f64,
    /// Standard deviation of the random orientation (radians).
    pub rotation_sd: f64,
    pub seed: u64,
}

impl Default for SkullPopulationConfig {
    fn default() -> Self {
        SkullPopulationConfig {
            n: 29,
            shape_noise: 0.2,
            rotation_sd: 0.5,
            seed: 0,
        }
    }
}

/// Eight-landmark 2-D outline loosely shaped like a skull in lateral view.
pub fn skull_template() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        8,
        2,
        &[
            -1.00, 0.05, // prosthion
            -0.70, 0.45, // nasion
            -0.15, 0.85, // bregma
            0.55, 0.70, // lambda
            0.95, 0.20, // opisthocranion
            0.65, -0.35, // opisthion
            0.00, -0.30, // basion
            -0.55, -0.25, // staphylion
        ],
    )
}

/// Template plus Gaussian shape noise, random size, position and orientation.
pub fn synthetic_skull_population(cfg: &SkullPopulationConfig) -> Result<Vec<LandmarkConfig>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let template = skull_template();
    (0..cfg.n)
        .map(|j| {
            let noise = DMatrix::from_fn(8, 2, |_, _| cfg.shape_noise * rng.sample::<f64, _>(StandardNormal));
            let scale = 100.0 * (1.0 + 0.05 * rng.sample::<f64, _>(StandardNormal));
            let angle = cfg.rotation_sd * rng.sample::<f64, _>(StandardNormal);
            let shift = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
            let rot = rotation_2d(angle);
            let mut pts = (&template + noise) * rot.transpose() * scale;
            for mut row in pts.row_iter_mut() {
                row[0] += shift[0];
                row[1] += shift[1];
            }
            LandmarkConfig::new(pts, format!("case{j:02}"), "skull")
        })
        .collect()
}

/// Two groups drawn from one noisy template, with one landmark of group 1
/// moved by `shift`. Returns `(cases, labels)`.
pub fn planted_landmark_groups(
    n_per_group: usize,
    n_landmarks: usize,
    landmark: usize,
    shift: &[f64; 2],
    noise: f64,
    seed: u64,
) -> Result<(Vec<LandmarkConfig>, Vec<u8>)> {
    if landmark >= n_landmarks {
        return Err(Error::IndexOutOfRange {
            index: landmark,
            len: n_landmarks,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = DMatrix::from_fn(n_landmarks, 2, |i, c| {
        let t = std::f64::consts::TAU * i as f64 / n_landmarks as f64;
        let r = 1.0 + 0.25 * (3.0 * t).cos();
        if c == 0 {
            r * t.cos()
        } else {
            r * t.sin()
        }
    });
    let mut cases = Vec::with_capacity(2 * n_per_group);
    let mut labels = Vec::with_capacity(2 * n_per_group);
    for g in 0..2u8 {
        for j in 0..n_per_group {
            let mut pts = template.clone() + DMatrix::from_fn(n_landmarks, 2, |_, _| noise * rng.sample::<f64, _>(StandardNormal));
            if g == 1 {
                pts[(landmark, 0)] += shift[0];
                pts[(landmark, 1)] += shift[1];
            }
            let rot = rotation_2d(rng.random_range(-PI..PI));
            cases.push(LandmarkConfig::new(pts * rot.transpose(), format!("g{g}_{j:03}"), "object")?);
            labels.push(g);
        }
    }
    Ok((cases, labels))
}
