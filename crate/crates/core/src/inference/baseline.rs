use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ajive::{decompose, scree_gap_rank, AjiveResult, EuclideanBlock, JointRankPolicy};
use crate::error::{Error, Result};
use crate::linalg::{center_rows, Svd};
use crate::pns::{pns_fit_with, FitOptions};
use crate::preshape::{gpa, to_preshape, LandmarkConfig};
use crate::sphere::UnitVector;

/// Comparison feature sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Pre-shape coordinates of all blocks stacked.
    ConcatLandmarks,
    /// PNS scores of all blocks stacked.
    ConcatPns,
    /// AJIVE joint components of the raw coordinates.
    EuclideanAjive,
    /// AJIVE joint components of the pre-shape coordinates, treated as Euclidean.
    SphericalAjive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSettings {
    /// Initial AJIVE ranks; the scree gap of each block when `None`.
    pub ranks: Option<Vec<usize>>,
    pub policy: JointRankPolicy,
    pub seed: u64,
    /// Procrustes-align pre-shapes before use.
    pub align: bool,
    pub pns: FitOptions,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        BaselineSettings {
            ranks: None,
            policy: JointRankPolicy::default(),
            seed: 0,
            align: true,
            pns: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFeatures {
    /// One `p_k x n` matrix per block.
    pub per_block: Vec<DMatrix<f64>>,
    /// All blocks stacked row-wise.
    pub stacked: DMatrix<f64>,
}

impl BaselineFeatures {
    fn new(per_block: Vec<DMatrix<f64>>) -> Self {
        let n = per_block.first().map_or(0, DMatrix::ncols);
        let p: usize = per_block.iter().map(DMatrix::nrows).sum();
        let mut stacked = DMatrix::zeros(p, n);
        let mut r = 0;
        for m in &per_block {
            stacked.rows_mut(r, m.nrows()).copy_from(m);
            r += m.nrows();
        }
        BaselineFeatures { per_block, stacked }
    }
}

fn columns(points: &[UnitVector]) -> DMatrix<f64> {
    let d = points.first().map_or(0, UnitVector::dim);
    DMatrix::from_fn(d, points.len(), |i, j| points[j].coords()[i])
}

/// AJIVE on row-centered copies of `mats` (`p_k x n` each).
pub fn euclidean_ajive(mats: &[DMatrix<f64>], settings: &BaselineSettings) -> Result<AjiveResult> {
    let blocks = mats
        .iter()
        .enumerate()
        .map(|(k, m)| EuclideanBlock::new(center_rows(m).0, format!("block{k}")))
        .collect::<Result<Vec<_>>>()?;
    let ranks = match &settings.ranks {
        Some(r) => r.clone(),
        None => blocks
            .iter()
            .map(|b| {
                let s: Vec<f64> = Svd::new(&b.data).s.iter().copied().collect();
                scree_gap_rank(&s)
            })
            .collect(),
    };
    decompose(&blocks, &ranks, settings.policy, settings.seed)
}

fn pns_features(points: &[Vec<UnitVector>], opts: FitOptions) -> Result<Vec<DMatrix<f64>>> {
    points
        .par_iter()
        .map(|b| Ok(pns_fit_with(b, opts)?.training_scores()))
        .collect()
}

fn joint_features(mats: &[DMatrix<f64>], settings: &BaselineSettings) -> Result<Vec<DMatrix<f64>>> {
    Ok(euclidean_ajive(mats, settings)?
        .blocks
        .into_iter()
        .map(|b| b.joint)
        .collect())
}

/// Comparison features for landmark blocks (same cases, same order in each).
pub fn baseline_features(
    blocks: &[Vec<LandmarkConfig>],
    kind: BaselineKind,
    settings: &BaselineSettings,
) -> Result<BaselineFeatures> {
    if blocks.is_empty() {
        return Err(Error::InvalidConfig("no blocks".into()));
    }
    let raw = || -> Vec<DMatrix<f64>> {
        blocks
            .iter()
            .map(|b| {
                let d = b[0].points.len();
                DMatrix::from_fn(d, b.len(), |i, j| {
                    let p = &b[j].points;
                    p[(i / p.ncols(), i % p.ncols())]
                })
            })
            .collect()
    };
    let preshapes = || -> Result<Vec<Vec<UnitVector>>> {
        blocks
            .iter()
            .map(|b| {
                if settings.align {
                    Ok(gpa(b)?.unit_vectors())
                } else {
                    b.iter().map(|c| Ok(to_preshape(c)?.to_unit_vector())).collect()
                }
            })
            .collect()
    };
    let per_block = match kind {
        BaselineKind::ConcatLandmarks => preshapes()?.iter().map(|b| columns(b)).collect(),
        BaselineKind::ConcatPns => pns_features(&preshapes()?, settings.pns)?,
        BaselineKind::EuclideanAjive => joint_features(&raw(), settings)?,
        BaselineKind::SphericalAjive => {
            let mats: Vec<DMatrix<f64>> = preshapes()?.iter().map(|b| columns(b)).collect();
            joint_features(&mats, settings)?
        }
    };
    Ok(BaselineFeatures::new(per_block))
}

/// Comparison features for blocks that are already points on spheres. The raw
/// and the pre-shape coordinates coincide here.
pub fn baseline_features_spherical(
    blocks: &[Vec<UnitVector>],
    kind: BaselineKind,
    settings: &BaselineSettings,
) -> Result<BaselineFeatures> {
    if blocks.is_empty() {
        return Err(Error::InvalidConfig("no blocks".into()));
    }
    let mats: Vec<DMatrix<f64>> = blocks.iter().map(|b| columns(b)).collect();
    let per_block = match kind {
        BaselineKind::ConcatLandmarks => mats,
        BaselineKind::ConcatPns => pns_features(blocks, settings.pns)?,
        BaselineKind::EuclideanAjive | BaselineKind::SphericalAjive => joint_features(&mats, settings)?,
    };
    Ok(BaselineFeatures::new(per_block))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_circle_blocks, synthetic_skull_population, CircleSimConfig, SkullPopulationConfig};

    #[test]
    fn feature_dimensions() {
        let base = synthetic_skull_population(&SkullPopulationConfig {
            n: 12,
            ..SkullPopulationConfig::default()
        })
        .unwrap();
        let blocks = vec![base.clone(), base];
        let s = BaselineSettings::default();
        let f = baseline_features(&blocks, BaselineKind::ConcatLandmarks, &s).unwrap();
        assert_eq!(f.stacked.shape(), (32, 12));
        let f = baseline_features(&blocks, BaselineKind::ConcatPns, &s).unwrap();
        assert_eq!(f.stacked.shape(), (30, 12));
        let f = baseline_features(&blocks, BaselineKind::EuclideanAjive, &s).unwrap();
        assert_eq!(f.per_block[1].shape(), (16, 12));
    }

    #[test]
    fn spherical_blocks() {
        let sim = simulate_circle_blocks(&CircleSimConfig {
            n: 20,
            ..CircleSimConfig::default()
        })
        .unwrap();
        let s = BaselineSettings::default();
        let f = baseline_features_spherical(&sim.blocks, BaselineKind::ConcatPns, &s).unwrap();
        assert_eq!(f.stacked.shape(), (4, 20));
        let f = baseline_features_spherical(&sim.blocks, BaselineKind::EuclideanAjive, &s).unwrap();
        assert_eq!(f.per_block[0].shape(), (3, 20));
    }
}
