//! The full NEUJIVE composition: per-block alignment and PNS Euclideanization,
//! score centering, AJIVE across blocks, and pullback of score-space results
//! to the sphere (and to landmark configurations).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ajive::{
    decompose, scree_gap_rank, AjiveResult, BlockDecomposition, EuclideanBlock, JointBasis, JointRankPolicy,
    PrincipalAngles,
};
use crate::error::{Error, Result};
use crate::linalg::{center_rows, Svd};
use crate::pns::{pns_fit_with, pns_inverse, FitOptions, PnsModel};
use crate::preshape::{gpa, to_preshape, LandmarkConfig, PreShape};
use crate::sphere::UnitVector;

/// Pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeujiveConfig {
    /// Initial AJIVE rank per block; `None` picks each by the scree gap.
    #[serde(default)]
    pub initial_ranks: Option<Vec<usize>>,
    #[serde(default)]
    pub joint_rank_policy: JointRankPolicy,
    /// Kept PNS score rows per block; `None` keeps all `d - 1`.
    #[serde(default)]
    pub pns_levels: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
    /// Rotate each block by GPA before PNS. When false, landmark inputs are
    /// only centered and scaled.
    #[serde(default = "default_true")]
    pub align: bool,
    #[serde(default)]
    pub pns: FitOptions,
}

fn default_true() -> bool {
    true
}

impl Default for NeujiveConfig {
    fn default() -> Self {
        NeujiveConfig {
            initial_ranks: None,
            joint_rank_policy: JointRankPolicy::default(),
            pns_levels: None,
            seed: 0,
            align: true,
            pns: FitOptions::default(),
        }
    }
}

/// Landmark geometry of a block, absent for direction-data blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkShape {
    pub n_landmarks: usize,
    pub ambient_dim: usize,
}

/// Everything computed for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    pub block_id: String,
    pub shape: Option<LandmarkShape>,
    pub pns: PnsModel,
    /// Kept score rows.
    pub levels: usize,
    /// Row means removed from the scores before AJIVE.
    pub score_means: Vec<f64>,
    /// Centered scores fed to AJIVE (`levels x n`).
    #[serde(with = "crate::serde_mat")]
    pub scores: DMatrix<f64>,
    pub initial_rank: usize,
    pub decomposition: BlockDecomposition,
    /// Mean centroid size of the input configurations (1 for direction data).
    pub mean_centroid_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// SHA-256 of the input coordinates and case ids.
    pub input_digest: String,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeujiveResult {
    pub case_ids: Vec<String>,
    pub blocks: Vec<BlockResult>,
    pub basis: JointBasis,
    pub angles: PrincipalAngles,
    pub config: NeujiveConfig,
    pub provenance: Provenance,
}

impl NeujiveResult {
    pub fn joint_rank(&self) -> usize {
        self.basis.rank()
    }

    pub fn n_cases(&self) -> usize {
        self.case_ids.len()
    }

    pub fn block(&self, k: usize) -> Result<&BlockResult> {
        self.blocks.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.blocks.len(),
        })
    }
}

struct PreparedBlock {
    block_id: String,
    shape: Option<LandmarkShape>,
    points: Vec<UnitVector>,
    mean_centroid_size: f64,
}

/// NEUJIVE on `K` landmark blocks over the same cases (same order).
pub fn neujive(blocks: &[Vec<LandmarkConfig>], cfg: &NeujiveConfig) -> Result<NeujiveResult> {
    let case_ids = check_cases(blocks)?;
    let prepared: Vec<PreparedBlock> = blocks
        .par_iter()
        .enumerate()
        .map(|(k, block)| prepare_landmarks(k, block, cfg.align))
        .collect::<Result<_>>()?;
    let digest = digest_landmarks(blocks);
    run(prepared, case_ids, cfg, digest)
}

/// NEUJIVE on blocks that already live on unit spheres (no shape alignment).
pub fn neujive_spherical(blocks: &[Vec<UnitVector>], cfg: &NeujiveConfig) -> Result<NeujiveResult> {
    let Some(first) = blocks.first() else {
        return Err(Error::InvalidConfig("no blocks".into()));
    };
    let n = first.len();
    if n < 2 {
        return Err(Error::CaseMismatch(format!("need at least 2 cases, got {n}")));
    }
    if let Some(b) = blocks.iter().find(|b| b.len() != n) {
        return Err(Error::CaseMismatch(format!(
            "blocks have {} and {} cases",
            n,
            b.len()
        )));
    }
    let prepared = blocks
        .iter()
        .enumerate()
        .map(|(k, b)| PreparedBlock {
            block_id: format!("block{k}"),
            shape: None,
            points: b.clone(),
            mean_centroid_size: 1.0,
        })
        .collect();
    let case_ids = (0..n).map(|i| i.to_string()).collect();
    let mut hasher = Sha256::new();
    for b in blocks {
        for p in b {
            for x in p.coords().iter() {
                hasher.update(x.to_le_bytes());
            }
        }
    }
    run(prepared, case_ids, cfg, hex::encode(hasher.finalize()))
}

fn check_cases(blocks: &[Vec<LandmarkConfig>]) -> Result<Vec<String>> {
    let Some(first) = blocks.first() else {
        return Err(Error::InvalidConfig("no blocks".into()));
    };
    if first.len() < 2 {
        return Err(Error::CaseMismatch(format!(
            "need at least 2 cases, got {}",
            first.len()
        )));
    }
    let ids: Vec<String> = first.iter().map(|c| c.case_id.clone()).collect();
    for (k, b) in blocks.iter().enumerate().skip(1) {
        let other: Vec<&str> = b.iter().map(|c| c.case_id.as_str()).collect();
        if other.len() != ids.len() || other.iter().zip(&ids).any(|(a, b)| *a != b) {
            return Err(Error::CaseMismatch(format!(
                "block {k} does not list the same cases in the same order as block 0"
            )));
        }
    }
    Ok(ids)
}

fn prepare_landmarks(k: usize, block: &[LandmarkConfig], align: bool) -> Result<PreparedBlock> {
    let (m, d) = block[0].points.shape();
    let (preshapes, size) = if align {
        let pop = gpa(block)?;
        (pop.preshapes, pop.mean_centroid_size)
    } else {
        let mut shapes = Vec::with_capacity(block.len());
        for c in block {
            c.validate()?;
            if c.points.shape() != (m, d) {
                return Err(Error::DimensionMismatch {
                    expected: m * d,
                    found: c.points.len(),
                });
            }
            shapes.push(to_preshape(c)?);
        }
        let size = shapes.iter().map(|p| p.centroid_size).sum::<f64>() / shapes.len() as f64;
        (shapes, size)
    };
    let block_id = block[0].object_label.clone();
    Ok(PreparedBlock {
        block_id: if block_id.is_empty() {
            format!("block{k}")
        } else {
            block_id
        },
        shape: Some(LandmarkShape {
            n_landmarks: m,
            ambient_dim: d,
        }),
        points: preshapes.iter().map(PreShape::to_unit_vector).collect(),
        mean_centroid_size: size,
    })
}

fn digest_landmarks(blocks: &[Vec<LandmarkConfig>]) -> String {
    let mut hasher = Sha256::new();
    for b in blocks {
        for c in b {
            hasher.update(c.case_id.as_bytes());
            hasher.update([0u8]);
            hasher.update(c.object_label.as_bytes());
            hasher.update([0u8]);
            for i in 0..c.points.nrows() {
                for j in 0..c.points.ncols() {
                    hasher.update(c.points[(i, j)].to_le_bytes());
                }
            }
        }
    }
    hex::encode(hasher.finalize())
}

/// SHA-256 of a value's JSON serialization.
pub fn json_digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).unwrap_or_default();
    hex::encode(Sha256::digest(&bytes))
}

fn run(
    prepared: Vec<PreparedBlock>,
    case_ids: Vec<String>,
    cfg: &NeujiveConfig,
    input_digest: String,
) -> Result<NeujiveResult> {
    let k = prepared.len();
    for (name, v) in [("initial_ranks", &cfg.initial_ranks), ("pns_levels", &cfg.pns_levels)] {
        if let Some(v) = v {
            if v.len() != k {
                return Err(Error::InvalidConfig(format!(
                    "{name} has {} entries for {k} blocks",
                    v.len()
                )));
            }
        }
    }
    if let Some(r) = &cfg.initial_ranks {
        if r.contains(&0) {
            return Err(Error::InvalidConfig("initial ranks must be at least 1".into()));
        }
    }
    let fitted: Vec<(PnsModel, DMatrix<f64>, DVector<f64>, usize)> = prepared
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let model = pns_fit_with(&b.points, cfg.pns)?;
            let full = model.training_scores();
            let levels = match &cfg.pns_levels {
                Some(l) => {
                    if l[i] == 0 || l[i] > full.nrows() {
                        return Err(Error::InvalidConfig(format!(
                            "block {i}: {} PNS levels requested, {} available",
                            l[i],
                            full.nrows()
                        )));
                    }
                    l[i]
                }
                None => full.nrows(),
            };
            let (centered, means) = center_rows(&full.rows(0, levels).clone_owned());
            Ok((model, centered, means, levels))
        })
        .collect::<Result<_>>()?;

    let n = case_ids.len();
    let ranks: Vec<usize> = match &cfg.initial_ranks {
        Some(r) => r.clone(),
        None => fitted
            .iter()
            .map(|(_, z, _, _)| {
                let s: Vec<f64> = Svd::new(z).s.iter().copied().collect();
                scree_gap_rank(&s).min(z.nrows().min(n))
            })
            .collect(),
    };
    let eblocks: Vec<EuclideanBlock> = fitted
        .iter()
        .zip(&prepared)
        .map(|((_, z, _, _), b)| EuclideanBlock::new(z.clone(), b.block_id.clone()))
        .collect::<Result<_>>()?;
    let AjiveResult {
        blocks: decs,
        basis,
        angles,
        ..
    } = decompose(&eblocks, &ranks, cfg.joint_rank_policy, cfg.seed)?;

    let blocks = prepared
        .into_iter()
        .zip(fitted)
        .zip(decs)
        .zip(ranks)
        .map(|(((b, (model, z, means, levels)), dec), rank)| BlockResult {
            block_id: b.block_id,
            shape: b.shape,
            pns: model,
            levels,
            score_means: means.iter().copied().collect(),
            scores: z,
            initial_rank: rank,
            decomposition: dec,
            mean_centroid_size: b.mean_centroid_size,
        })
        .collect();
    Ok(NeujiveResult {
        case_ids,
        blocks,
        basis,
        angles,
        config: cfg.clone(),
        provenance: Provenance {
            seed: cfg.seed,
            input_digest,
            config_digest: json_digest(cfg),
        },
    })
}

/// Pulls centered score columns of block `k` back to its sphere. Missing rows
/// are zero; the stored row means are added before inversion.
pub fn pullback_points(result: &NeujiveResult, k: usize, scores: &DMatrix<f64>) -> Result<Vec<UnitVector>> {
    let b = result.block(k)?;
    if scores.nrows() > b.levels {
        return Err(Error::DimensionMismatch {
            expected: b.levels,
            found: scores.nrows(),
        });
    }
    scores
        .column_iter()
        .map(|col| {
            let full: Vec<f64> = (0..b.levels)
                .map(|i| col.get(i).copied().unwrap_or(0.0) + b.score_means[i])
                .collect();
            pns_inverse(&b.pns, &full)
        })
        .collect()
}

/// Landmark configurations for score columns of block `k`; with
/// `restore_scale` they are multiplied by the block's mean centroid size.
pub fn pullback_scores(
    result: &NeujiveResult,
    k: usize,
    scores: &DMatrix<f64>,
    restore_scale: bool,
) -> Result<Vec<LandmarkConfig>> {
    let b = result.block(k)?;
    let Some(shape) = b.shape else {
        return Err(Error::InvalidConfig(format!(
            "block {k} holds direction data, not landmarks"
        )));
    };
    let scale = if restore_scale { b.mean_centroid_size } else { 1.0 };
    pullback_points(result, k, scores)?
        .iter()
        .enumerate()
        .map(|(j, u)| {
            let p = PreShape::from_unit_vector(u, shape.n_landmarks, shape.ambient_dim)?;
            Ok(LandmarkConfig {
                points: p.landmarks() * scale,
                case_id: format!("pullback{j}"),
                object_label: b.block_id.clone(),
            })
        })
        .collect()
}

/// Joint components of block `k` pulled back to its sphere, one per case.
pub fn joint_pullback(result: &NeujiveResult, k: usize) -> Result<Vec<UnitVector>> {
    let b = result.block(k)?;
    pullback_points(result, k, &b.decomposition.joint)
}

/// Per-landmark distances between the pullbacks of the two groups' mean joint
/// scores, for every block.
pub fn group_difference_map(result: &NeujiveResult, labels: &[u8], restore_scale: bool) -> Result<Vec<Vec<f64>>> {
    if labels.len() != result.n_cases() {
        return Err(Error::CaseMismatch(format!(
            "{} labels for {} cases",
            labels.len(),
            result.n_cases()
        )));
    }
    for g in [0u8, 1] {
        if !labels.contains(&g) {
            return Err(Error::EmptyGroup(g));
        }
    }
    (0..result.blocks.len())
        .map(|k| {
            let joint = &result.blocks[k].decomposition.joint;
            let group_mean = |g: u8| -> DMatrix<f64> {
                let cols: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == g).collect();
                let mut m = DMatrix::zeros(joint.nrows(), 1);
                for &j in &cols {
                    m += joint.column(j);
                }
                m / cols.len() as f64
            };
            let both = DMatrix::from_columns(&[group_mean(1).column(0), group_mean(0).column(0)]);
            match result.blocks[k].shape {
                Some(_) => {
                    let cfgs = pullback_scores(result, k, &both, restore_scale)?;
                    let (p, q) = (&cfgs[0].points, &cfgs[1].points);
                    Ok((0..p.nrows()).map(|i| (p.row(i) - q.row(i)).norm()).collect())
                }
                None => {
                    let pts = pullback_points(result, k, &both)?;
                    Ok(vec![(pts[0].coords() - pts[1].coords()).norm()])
                }
            }
        })
        .collect()
}
