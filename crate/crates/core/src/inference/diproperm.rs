use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::LabeledScores;

pub const DEFAULT_N_PERM: usize = 1000;

/// Direction-projection-permutation test with the mean-difference statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiProPermResult {
    pub observed_md: f64,
    pub permutation_mds: Vec<f64>,
    pub p_value: f64,
    pub z_score: f64,
    pub n_perm: usize,
    pub seed: u64,
}

/// Distance between the class means of the feature columns. Projecting both
/// classes on the mean-difference direction gives the same number.
fn mean_difference(scores: &LabeledScores, labels: &[u8]) -> f64 {
    let p = scores.features.nrows();
    let mut sums = [DVector::zeros(p), DVector::zeros(p)];
    let mut counts = [0usize; 2];
    for (j, &l) in labels.iter().enumerate() {
        sums[l as usize] += scores.features.column(j);
        counts[l as usize] += 1;
    }
    (&sums[1] / counts[1] as f64 - &sums[0] / counts[0] as f64).norm()
}

/// Permutation `i` shuffles the labels with stream `i + 1` of the seeded
/// generator, so results do not depend on scheduling.
pub fn diproperm(scores: &LabeledScores, n_perm: usize, seed: u64) -> Result<DiProPermResult> {
    if n_perm < 100 {
        return Err(Error::InvalidConfig(format!("n_perm = {n_perm} < 100")));
    }
    for class in [0u8, 1] {
        if scores.class_count(class) < 2 {
            return Err(Error::InsufficientClassSize(format!(
                "class {class} has {} cases, need at least 2",
                scores.class_count(class)
            )));
        }
    }
    let observed = mean_difference(scores, &scores.labels);
    let perms: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let mut labels = scores.labels.clone();
            labels.shuffle(&mut rng);
            mean_difference(scores, &labels)
        })
        .collect();
    let n = perms.len() as f64;
    let mean = perms.iter().sum::<f64>() / n;
    let var = perms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegeneratePermutationSpread);
    }
    let exceed = perms.iter().filter(|&&x| x >= observed).count();
    Ok(DiProPermResult {
        observed_md: observed,
        p_value: exceed as f64 / n,
        z_score: (observed - mean) / sd,
        permutation_mds: perms,
        n_perm,
        seed,
    })
}
