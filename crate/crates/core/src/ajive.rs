//! Angle-based Joint and Individual Variation Explained on Euclidean blocks.
//!
//! Blocks are `d_k x n` matrices over a shared set of `n` cases. Each block is
//! reduced to a low-rank approximation; the row spaces of those approximations
//! are stacked and their SVD yields candidate joint directions in `R^n`. The
//! selected joint basis `J` splits each approximation `X_k` into a joint part
//! `X_k J^T J` and an individual remainder.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{quantile, random_orthonormal_rows, Svd};

/// Row means above this (times the row's scale) are rejected.
pub const CENTERING_TOL: f64 = 1e-6;

/// A centered feature block: rows are features, columns are cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EuclideanBlock {
    #[serde(with = "crate::serde_mat")]
    pub data: DMatrix<f64>,
    pub block_id: String,
}

impl EuclideanBlock {
    pub fn new(data: DMatrix<f64>, block_id: impl Into<String>) -> Result<Self> {
        let b = EuclideanBlock {
            data,
            block_id: block_id.into(),
        };
        b.check_centered()?;
        Ok(b)
    }

    pub fn n_features(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cases(&self) -> usize {
        self.data.ncols()
    }

    pub fn check_centered(&self) -> Result<()> {
        let n = self.data.ncols().max(1) as f64;
        for (i, row) in self.data.row_iter().enumerate() {
            let mean = row.sum() / n;
            let scale = row.amax().max(1.0);
            if !mean.is_finite() || mean.abs() > CENTERING_TOL * scale {
                return Err(Error::NotCentered { row: i, mean });
            }
        }
        Ok(())
    }
}

/// Rank-`r_k` SVD approximation of a block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankBlock {
    #[serde(with = "crate::serde_mat")]
    pub u_hat: DMatrix<f64>,
    pub s_hat: Vec<f64>,
    #[serde(with = "crate::serde_mat")]
    pub vt_hat: DMatrix<f64>,
    pub initial_rank: usize,
}

impl LowRankBlock {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u_hat.clone();
        for (j, s) in self.s_hat.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * &self.vt_hat
    }
}

pub fn low_rank_approx(block: &EuclideanBlock, rank: usize) -> Result<LowRankBlock> {
    block.check_centered()?;
    let max = block.n_features().min(block.n_cases());
    if rank == 0 || rank > max {
        return Err(Error::RankTooLarge { rank, max });
    }
    let svd = Svd::new(&block.data).truncate(rank);
    Ok(LowRankBlock {
        u_hat: svd.u,
        s_hat: svd.s.iter().copied().collect(),
        vt_hat: svd.vt,
        initial_rank: rank,
    })
}

/// Rank at the largest relative drop `s_i / s_{i+1}` of the singular values.
pub fn scree_gap_rank(singular_values: &[f64]) -> usize {
    let s = singular_values;
    if s.len() < 2 || s[0] <= 0.0 {
        return 1;
    }
    let floor = 1e-12 * s[0];
    let mut best = 0;
    let mut best_ratio = 0.0;
    for i in 0..s.len() - 1 {
        if s[i + 1] <= floor {
            return i + 1;
        }
        let ratio = s[i] / s[i + 1];
        if ratio > best_ratio {
            best_ratio = ratio;
            best = i;
        }
    }
    best + 1
}

/// Result of the stacked-basis SVD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalAngles {
    /// Ascending angles in `[0, π/2]`, `min_k r_k` of them.
    pub angles: Vec<f64>,
    /// Right singular vectors of the stack (rows, candidate joint directions).
    #[serde(with = "crate::serde_mat")]
    pub directions: DMatrix<f64>,
    /// Squared singular values of the stack, descending.
    pub squared_singular_values: Vec<f64>,
}

/// Stacks row-orthonormal score bases and extracts principal angles.
///
/// For two bases the stacked squared singular values are `1 + cos θ_i`; for
/// more bases the angles are read as `arccos(σ_i / √K)`.
pub fn principal_angles(bases: &[&DMatrix<f64>]) -> Result<PrincipalAngles> {
    let Some(first) = bases.first() else {
        return Err(Error::InvalidConfig("no score bases".into()));
    };
    let n = first.ncols();
    for b in bases {
        if b.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.ncols(),
            });
        }
    }
    let total: usize = bases.iter().map(|b| b.nrows()).sum();
    let mut stacked = DMatrix::zeros(total, n);
    let mut offset = 0;
    for b in bases {
        stacked.rows_mut(offset, b.nrows()).copy_from(b);
        offset += b.nrows();
    }
    let svd = Svd::new(&stacked);
    let sq: Vec<f64> = svd.s.iter().map(|s| s * s).collect();
    let k = bases.len();
    let n_angles = bases.iter().map(|b| b.nrows()).min().unwrap_or(0).min(sq.len());
    let angles = (0..n_angles)
        .map(|i| {
            let c = match k {
                2 => sq[i] - 1.0,
                _ => svd.s[i] / (k as f64).sqrt(),
            };
            c.clamp(-1.0, 1.0).acos().min(std::f64::consts::FRAC_PI_2)
        })
        .collect();
    Ok(PrincipalAngles {
        angles,
        directions: svd.vt,
        squared_singular_values: sq,
    })
}

/// Joint-rank selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JointRankPolicy {
    Fixed { rank: usize },
    /// Count principal angles below `max_angle` (radians).
    AngleThreshold { max_angle: f64 },
    /// Count stacked squared singular values above the `quantile` of the
    /// largest one over `n_sim` stacks of uniformly random subspaces.
    RandomDirection { quantile: f64, n_sim: usize },
}

impl Default for JointRankPolicy {
    fn default() -> Self {
        JointRankPolicy::RandomDirection {
            quantile: 0.95,
            n_sim: 400,
        }
    }
}

/// Null draws of the largest squared singular value of stacked random bases
/// with the given ranks. Draw `i` uses its own stream of the seeded generator.
pub fn random_direction_null(ranks: &[usize], n: usize, n_sim: usize, seed: u64) -> Vec<f64> {
    (0..n_sim)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let bases: Vec<DMatrix<f64>> = ranks
                .iter()
                .map(|&r| random_orthonormal_rows(r, n, &mut rng))
                .collect();
            let total: usize = ranks.iter().sum();
            let mut stacked = DMatrix::zeros(total, n);
            let mut offset = 0;
            for b in &bases {
                stacked.rows_mut(offset, b.nrows()).copy_from(b);
                offset += b.nrows();
            }
            let gram = &stacked * stacked.transpose();
            SymmetricEigen::new(gram).eigenvalues.max()
        })
        .collect()
}

/// Returns the joint rank and the threshold used (squared singular value for
/// the random-direction rule, angle for the angle rule, none for fixed).
pub fn select_joint_rank(
    angles: &PrincipalAngles,
    ranks: &[usize],
    n: usize,
    policy: JointRankPolicy,
    seed: u64,
) -> (usize, Option<f64>) {
    let max_rank = ranks.iter().copied().min().unwrap_or(0);
    if ranks.len() == 1 {
        let r = match policy {
            JointRankPolicy::Fixed { rank } => rank.min(max_rank),
            _ => max_rank,
        };
        return (r, None);
    }
    match policy {
        JointRankPolicy::Fixed { rank } => (rank.min(max_rank), None),
        JointRankPolicy::AngleThreshold { max_angle } => {
            let r = angles.angles.iter().filter(|&&a| a < max_angle).count();
            (r.min(max_rank), Some(max_angle))
        }
        JointRankPolicy::RandomDirection { quantile: q, n_sim } => {
            let null = random_direction_null(ranks, n, n_sim.max(1), seed);
            let threshold = quantile(&null, q);
            let r = angles
                .squared_singular_values
                .iter()
                .take(max_rank)
                .filter(|&&s| s > threshold)
                .count();
            (r, Some(threshold))
        }
    }
}

/// Selected joint score subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointBasis {
    /// `r x n`, orthonormal rows.
    #[serde(with = "crate::serde_mat")]
    pub j_hat: DMatrix<f64>,
    pub squared_singular_values: Vec<f64>,
    pub threshold_used: Option<f64>,
}

impl JointBasis {
    pub fn rank(&self) -> usize {
        self.j_hat.nrows()
    }

    /// Projection of a `p x n` matrix onto the joint score space.
    pub fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        (x * self.j_hat.transpose()) * &self.j_hat
    }
}

/// Joint/individual/residual split of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub block_id: String,
    #[serde(with = "crate::serde_mat")]
    pub joint: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub individual: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub residual: DMatrix<f64>,
    pub low_rank: LowRankBlock,
}

/// Output of [`decompose`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AjiveResult {
    pub blocks: Vec<BlockDecomposition>,
    pub basis: JointBasis,
    pub angles: PrincipalAngles,
    pub policy: JointRankPolicy,
    pub seed: u64,
}

pub fn decompose(
    blocks: &[EuclideanBlock],
    ranks: &[usize],
    policy: JointRankPolicy,
    seed: u64,
) -> Result<AjiveResult> {
    if blocks.is_empty() {
        return Err(Error::InvalidConfig("no blocks".into()));
    }
    if ranks.len() != blocks.len() {
        return Err(Error::InvalidConfig(format!(
            "{} initial ranks for {} blocks",
            ranks.len(),
            blocks.len()
        )));
    }
    let n = blocks[0].n_cases();
    for b in blocks {
        if b.n_cases() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.n_cases(),
            });
        }
    }
    let low: Vec<LowRankBlock> = blocks
        .par_iter()
        .zip(ranks.par_iter())
        .map(|(b, &r)| low_rank_approx(b, r))
        .collect::<Result<_>>()?;
    let refs: Vec<&DMatrix<f64>> = low.iter().map(|l| &l.vt_hat).collect();
    let angles = principal_angles(&refs)?;
    let (r, threshold) = select_joint_rank(&angles, ranks, n, policy, seed);
    let basis = JointBasis {
        j_hat: angles.directions.rows(0, r).clone_owned(),
        squared_singular_values: angles.squared_singular_values[..r].to_vec(),
        threshold_used: threshold,
    };
    let out = blocks
        .iter()
        .zip(low)
        .map(|(b, l)| {
            let approx = l.reconstruct();
            let joint = basis.project(&approx);
            let individual = &approx - &joint;
            let residual = &b.data - &approx;
            BlockDecomposition {
                block_id: b.block_id.clone(),
                joint,
                individual,
                residual,
                low_rank: l,
            }
        })
        .collect();
    Ok(AjiveResult {
        blocks: out,
        basis,
        angles,
        policy,
        seed,
    })
}

/// `sum_k max_i sin θ_i(J, Q_k)`: the subspace-distance objective that the
/// joint basis minimizes.
pub fn joint_objective(j_hat: &DMatrix<f64>, bases: &[&DMatrix<f64>]) -> f64 {
    bases
        .iter()
        .map(|q| {
            let cross = j_hat * q.transpose();
            let svd = Svd::new(&cross);
            let min_cos = if svd.s.len() < j_hat.nrows() {
                0.0
            } else {
                svd.s.iter().copied().fold(f64::INFINITY, f64::min).min(1.0)
            };
            (1.0 - min_cos * min_cos).max(0.0).sqrt()
        })
        .sum()
}
