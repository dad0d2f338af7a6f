use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Svd;
use crate::pipeline::{neujive_spherical, NeujiveConfig, NeujiveResult};
use crate::pns::pns_scores;
use crate::sphere::UnitVector;

use super::dwd::{train_dwd, train_mean_difference, LinearClassifier, Loss};
use super::roc::auc;
use super::{select_columns, LabeledScores};

/// How test-case features relate to the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Features computed once from all cases (training and test together),
    /// then partitioned.
    Transductive,
    /// Decomposition refit on training cases only; held-out cases are
    /// projected onto the training joint loadings. Not the published protocol.
    Strict,
}

/// Supplies feature matrices for a candidate setting (usually an initial rank).
pub trait FeatureSource: Sync {
    fn n_cases(&self) -> usize;
    fn n_settings(&self) -> usize;
    /// Rank reported for a setting, if the setting is a rank.
    fn setting_rank(&self, setting: usize) -> Option<usize>;
    fn protocol(&self) -> Protocol;
    /// Features of `train` and `eval` cases (columns in the given order).
    fn features(&self, setting: usize, train: &[usize], eval: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
}

/// Feature matrices fixed in advance, one per setting.
#[derive(Debug, Clone)]
pub struct PrecomputedFeatures {
    settings: Vec<(Option<usize>, DMatrix<f64>)>,
}

impl PrecomputedFeatures {
    pub fn single(features: DMatrix<f64>) -> Self {
        PrecomputedFeatures {
            settings: vec![(None, features)],
        }
    }

    pub fn with_ranks(settings: Vec<(usize, DMatrix<f64>)>) -> Result<Self> {
        let Some(n) = settings.first().map(|(_, m)| m.ncols()) else {
            return Err(Error::InvalidConfig("empty rank grid".into()));
        };
        if let Some((_, m)) = settings.iter().find(|(_, m)| m.ncols() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: m.ncols(),
            });
        }
        Ok(PrecomputedFeatures {
            settings: settings.into_iter().map(|(r, m)| (Some(r), m)).collect(),
        })
    }

    /// Runs NEUJIVE on all cases once per initial rank in `rank_grid` (the same
    /// rank for every block, capped by what each block supports) and keeps the
    /// joint components of `block`, or of all blocks stacked when `None`.
    pub fn neujive(
        blocks: &[Vec<UnitVector>],
        cfg: &NeujiveConfig,
        block: Option<usize>,
        rank_grid: &[usize],
    ) -> Result<Self> {
        let n = blocks.first().map_or(0, Vec::len);
        let settings = rank_grid
            .iter()
            .map(|&r| {
                let res = neujive_spherical(blocks, &with_ranks(cfg, blocks, r, n))?;
                Ok((r, joint_features(&res, block)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_ranks(settings)
    }
}

impl FeatureSource for PrecomputedFeatures {
    fn n_cases(&self) -> usize {
        self.settings[0].1.ncols()
    }

    fn n_settings(&self) -> usize {
        self.settings.len()
    }

    fn setting_rank(&self, setting: usize) -> Option<usize> {
        self.settings[setting].0
    }

    fn protocol(&self) -> Protocol {
        Protocol::Transductive
    }

    fn features(&self, setting: usize, train: &[usize], eval: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let m = &self.settings[setting].1;
        Ok((select_columns(m, train), select_columns(m, eval)))
    }
}

/// NEUJIVE refit on every training subset; see [`Protocol::Strict`].
#[derive(Debug, Clone)]
pub struct StrictNeujiveFeatures {
    pub blocks: Vec<Vec<UnitVector>>,
    pub config: NeujiveConfig,
    pub block: Option<usize>,
    pub rank_grid: Vec<usize>,
}

impl FeatureSource for StrictNeujiveFeatures {
    fn n_cases(&self) -> usize {
        self.blocks.first().map_or(0, Vec::len)
    }

    fn n_settings(&self) -> usize {
        self.rank_grid.len()
    }

    fn setting_rank(&self, setting: usize) -> Option<usize> {
        Some(self.rank_grid[setting])
    }

    fn protocol(&self) -> Protocol {
        Protocol::Strict
    }

    fn features(&self, setting: usize, train: &[usize], eval: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let pick = |idx: &[usize]| -> Vec<Vec<UnitVector>> {
            self.blocks
                .iter()
                .map(|b| idx.iter().map(|&i| b[i].clone()).collect())
                .collect()
        };
        let train_blocks = pick(train);
        let eval_blocks = pick(eval);
        let cfg = with_ranks(&self.config, &train_blocks, self.rank_grid[setting], train.len());
        let res = neujive_spherical(&train_blocks, &cfg)?;
        let used: Vec<usize> = match self.block {
            Some(k) => vec![k],
            None => (0..res.blocks.len()).collect(),
        };
        let mut train_parts = Vec::new();
        let mut eval_parts = Vec::new();
        for k in used {
            let b = res.blocks.get(k).ok_or(Error::IndexOutOfRange {
                index: k,
                len: res.blocks.len(),
            })?;
            let joint = &b.decomposition.joint;
            let loadings = Svd::new(joint).truncate(res.joint_rank()).u;
            let mut z = pns_scores(&b.pns, &eval_blocks[k])?.rows(0, b.levels).clone_owned();
            for (i, mut row) in z.row_iter_mut().enumerate() {
                row.add_scalar_mut(-b.score_means[i]);
            }
            let projected = &loadings * (loadings.transpose() * z);
            train_parts.push(joint.clone());
            eval_parts.push(projected);
        }
        Ok((vstack(&train_parts, train.len()), vstack(&eval_parts, eval.len())))
    }
}

fn with_ranks(cfg: &NeujiveConfig, blocks: &[Vec<UnitVector>], r: usize, n: usize) -> NeujiveConfig {
    let mut cfg = cfg.clone();
    cfg.initial_ranks = Some(
        blocks
            .iter()
            .map(|b| {
                let d = b.first().map_or(1, UnitVector::dim);
                r.min(d.saturating_sub(1)).min(n.saturating_sub(1)).max(1)
            })
            .collect(),
    );
    cfg
}

fn joint_features(res: &NeujiveResult, block: Option<usize>) -> Result<DMatrix<f64>> {
    match block {
        Some(k) => res
            .blocks
            .get(k)
            .map(|b| b.decomposition.joint.clone())
            .ok_or(Error::IndexOutOfRange {
                index: k,
                len: res.blocks.len(),
            }),
        None => {
            let parts: Vec<DMatrix<f64>> = res.blocks.iter().map(|b| b.decomposition.joint.clone()).collect();
            Ok(vstack(&parts, res.n_cases()))
        }
    }
}

fn vstack(parts: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let p: usize = parts.iter().map(DMatrix::nrows).sum();
    let mut out = DMatrix::zeros(p, n);
    let mut r = 0;
    for m in parts {
        out.rows_mut(r, m.nrows()).copy_from(m);
        r += m.nrows();
    }
    out
}

/// Six values log-spaced from 1e-4 to 1e1.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..6).map(|i| 10f64.powi(i - 4)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutConfig {
    pub n_rounds: usize,
    pub test_fraction: f64,
    /// Inner cross-validation folds for choosing the setting and λ.
    pub inner_folds: usize,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    pub loss: Loss,
}

impl Default for HoldoutConfig {
    fn default() -> Self {
        HoldoutConfig {
            n_rounds: 1000,
            test_fraction: 0.2,
            inner_folds: 5,
            lambda_grid: default_lambda_grid(),
            seed: 0,
            loss: Loss::Dwd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub aucs: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub mean_auc: f64,
    pub mean_accuracy: f64,
    pub selected_ranks: Vec<Option<usize>>,
    pub selected_lambdas: Vec<f64>,
    pub n_rounds: usize,
    pub seed: u64,
    pub protocol: Protocol,
}

fn class_indices(labels: &[u8]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        out[l as usize].push(i);
    }
    out
}

/// Classes ordered larger first (class 0 on ties).
fn by_size(classes: &[Vec<usize>; 2]) -> [usize; 2] {
    if classes[1].len() > classes[0].len() {
        [1, 0]
    } else {
        [0, 1]
    }
}

/// Stratified `(train, test)` split. Each class contributes
/// `floor(fraction * n_c)` test cases; the cases still needed to reach
/// `round(fraction * n)` go to the larger class first. Both classes keep at
/// least one case on each side.
pub fn stratified_split<R: Rng + ?Sized>(
    labels: &[u8],
    test_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    let mut classes = class_indices(labels);
    for (c, idx) in classes.iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::InsufficientClassSize(format!(
                "class {c} has {} cases; a holdout split needs at least 2",
                idx.len()
            )));
        }
    }
    let target = (test_fraction * labels.len() as f64).round() as usize;
    let mut counts = [0usize; 2];
    for c in 0..2 {
        counts[c] = ((test_fraction * classes[c].len() as f64).floor() as usize).max(1);
    }
    for c in by_size(&classes) {
        while counts[0] + counts[1] < target && counts[c] + 1 < classes[c].len() {
            counts[c] += 1;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..2 {
        classes[c].shuffle(rng);
        test.extend_from_slice(&classes[c][..counts[c]]);
        train.extend_from_slice(&classes[c][counts[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified partition of `0..labels.len()` into `n_folds` folds: each class
/// is shuffled and dealt round-robin, larger class first, so leftovers land in
/// the larger class.
pub fn stratified_folds<R: Rng + ?Sized>(labels: &[u8], n_folds: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if n_folds < 2 || n_folds > labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{n_folds} folds for {} cases",
            labels.len()
        )));
    }
    let mut classes = class_indices(labels);
    let mut folds = vec![Vec::new(); n_folds];
    let mut slot = 0;
    for c in by_size(&classes) {
        classes[c].shuffle(rng);
        for &i in &classes[c] {
            folds[slot % n_folds].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

fn train(loss: Loss, data: &LabeledScores, lambda: f64) -> Result<LinearClassifier> {
    match loss {
        Loss::Dwd => train_dwd(data, lambda),
        Loss::MeanDifference => train_mean_difference(data),
    }
}

struct Round {
    auc: f64,
    accuracy: f64,
    setting: usize,
    lambda: f64,
}

fn run_round(source: &dyn FeatureSource, labels: &[u8], cfg: &HoldoutConfig, round: usize) -> Result<Round> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(round as u64 + 1);
    let (train_idx, test_idx) = stratified_split(labels, cfg.test_fraction, &mut rng)?;
    let pick = |idx: &[usize]| -> Vec<u8> { idx.iter().map(|&i| labels[i]).collect() };
    let train_labels = pick(&train_idx);

    let lambdas = match cfg.loss {
        Loss::Dwd => cfg.lambda_grid.clone(),
        Loss::MeanDifference => vec![0.0],
    };
    let mut best = (0usize, lambdas[0]);
    if source.n_settings() * lambdas.len() > 1 {
        for c in 0..2u8 {
            if train_labels.iter().filter(|&&l| l == c).count() < 2 {
                return Err(Error::InsufficientClassSize(format!(
                    "class {c} has fewer than 2 training cases for inner cross-validation"
                )));
            }
        }
        let folds = stratified_folds(&train_labels, cfg.inner_folds.min(train_labels.len()), &mut rng)?;
        let mut best_auc = f64::NEG_INFINITY;
        for s in 0..source.n_settings() {
            // out-of-fold decision values pooled over folds, one vector per λ
            let mut pooled = vec![vec![0.0; train_idx.len()]; lambdas.len()];
            for fold in &folds {
                let inner: Vec<usize> = (0..train_idx.len()).filter(|i| fold.binary_search(i).is_err()).collect();
                let inner_cases: Vec<usize> = inner.iter().map(|&i| train_idx[i]).collect();
                let fold_cases: Vec<usize> = fold.iter().map(|&i| train_idx[i]).collect();
                let (xf, xv) = source.features(s, &inner_cases, &fold_cases)?;
                let fit = LabeledScores::new(xf, pick(&inner_cases))?;
                for (li, &lambda) in lambdas.iter().enumerate() {
                    let values = train(cfg.loss, &fit, lambda)?.decision_values(&xv)?;
                    for (&i, v) in fold.iter().zip(values) {
                        pooled[li][i] = v;
                    }
                }
            }
            for (li, values) in pooled.iter().enumerate() {
                let a = auc(values, &train_labels)?;
                if a > best_auc {
                    best_auc = a;
                    best = (s, lambdas[li]);
                }
            }
        }
    }
    let (xtr, xte) = source.features(best.0, &train_idx, &test_idx)?;
    let clf = train(cfg.loss, &LabeledScores::new(xtr, train_labels)?, best.1)?;
    let test = LabeledScores::new(xte, pick(&test_idx))?;
    Ok(Round {
        auc: auc(&clf.decision_values(&test.features)?, &test.labels)?,
        accuracy: clf.accuracy(&test)?,
        setting: best.0,
        lambda: best.1,
    })
}

/// Repeated stratified holdouts. In each round the setting and λ with the
/// best pooled out-of-fold ROC-AUC on the training part are refit on the whole
/// training part and scored on the held-out part. Round `i` draws from stream
/// `i + 1` of the seeded generator.
pub fn holdout_harness(source: &dyn FeatureSource, labels: &[u8], cfg: &HoldoutConfig) -> Result<HoldoutReport> {
    if labels.len() != source.n_cases() {
        return Err(Error::CaseMismatch(format!(
            "{} labels for {} cases",
            labels.len(),
            source.n_cases()
        )));
    }
    if let Some(l) = labels.iter().find(|l| **l > 1) {
        return Err(Error::InvalidConfig(format!("label {l} is not binary")));
    }
    if cfg.n_rounds == 0 || source.n_settings() == 0 {
        return Err(Error::InvalidConfig("no rounds or no settings".into()));
    }
    if cfg.loss == Loss::Dwd && cfg.lambda_grid.is_empty() {
        return Err(Error::InvalidConfig("empty lambda grid".into()));
    }
    let rounds = (0..cfg.n_rounds)
        .into_par_iter()
        .map(|r| run_round(source, labels, cfg, r))
        .collect::<Result<Vec<_>>>()?;
    let n = rounds.len() as f64;
    Ok(HoldoutReport {
        aucs: rounds.iter().map(|r| r.auc).collect(),
        accuracies: rounds.iter().map(|r| r.accuracy).collect(),
        mean_auc: rounds.iter().map(|r| r.auc).sum::<f64>() / n,
        mean_accuracy: rounds.iter().map(|r| r.accuracy).sum::<f64>() / n,
        selected_ranks: rounds.iter().map(|r| source.setting_rank(r.setting)).collect(),
        selected_lambdas: rounds.iter().map(|r| r.lambda).collect(),
        n_rounds: cfg.n_rounds,
        seed: cfg.seed,
        protocol: source.protocol(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn planted(seed: u64, n: usize, p: usize, shift: f64) -> (DMatrix<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let x = DMatrix::from_fn(p, n, |i, j| {
            rng.sample::<f64, _>(StandardNormal) + if i == 0 && labels[j] == 1 { shift } else { 0.0 }
        });
        (x, labels)
    }

    fn quick(seed: u64) -> HoldoutConfig {
        HoldoutConfig {
            n_rounds: 100,
            lambda_grid: vec![1e-3, 1e-1],
            inner_folds: 3,
            seed,
            ..HoldoutConfig::default()
        }
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<u8> = (0..174).map(|i| u8::from(i < 33)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (train, test) = stratified_split(&labels, 0.2, &mut rng).unwrap();
        assert_eq!(train.len() + test.len(), 174);
        assert_eq!(test.len(), 35);
        let pos = test.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(pos, 6);
        let folds = stratified_folds(&labels, 10, &mut rng).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..174).collect::<Vec<_>>());
        for f in &folds {
            let p = f.iter().filter(|&&i| labels[i] == 1).count();
            assert!((3..=4).contains(&p));
        }
    }

    #[test]
    fn planted_shift_is_detected() {
        let (x, labels) = planted(1, 90, 4, 3.0);
        let rep = holdout_harness(&PrecomputedFeatures::single(x), &labels, &quick(5)).unwrap();
        assert!(rep.mean_auc >= 0.9, "{}", rep.mean_auc);
        assert!(rep.aucs.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn random_labels_give_chance_auc() {
        let (x, _) = planted(2, 90, 4, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut labels: Vec<u8> = (0..90).map(|i| u8::from(i % 2 == 0)).collect();
        labels.shuffle(&mut rng);
        let rep = holdout_harness(&PrecomputedFeatures::single(x), &labels, &quick(6)).unwrap();
        assert!((0.4..=0.6).contains(&rep.mean_auc), "{}", rep.mean_auc);
    }

    #[test]
    fn identical_seed_gives_identical_report() {
        let (x, labels) = planted(3, 40, 3, 1.0);
        let src = PrecomputedFeatures::with_ranks(vec![(1, x.rows(0, 1).clone_owned()), (3, x)]).unwrap();
        let cfg = HoldoutConfig { n_rounds: 20, ..quick(7) };
        let a = holdout_harness(&src, &labels, &cfg).unwrap();
        let b = holdout_harness(&src, &labels, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.protocol, Protocol::Transductive);
        assert!(a.selected_ranks.iter().all(|r| matches!(r, Some(1) | Some(3))));
    }

    #[test]
    fn tiny_class_is_rejected() {
        let x = DMatrix::zeros(2, 6);
        let labels = vec![0, 0, 0, 0, 0, 1];
        let err = holdout_harness(&PrecomputedFeatures::single(x), &labels, &quick(0)).unwrap_err();
        assert!(matches!(err, Error::InsufficientClassSize(_)));
    }
}
