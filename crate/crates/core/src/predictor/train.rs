//! Mini-batch gradient descent on the weighted cross-entropy
//! `Σ_k θ_k CE_k`, with `θ` scheduled by dynamic weight averaging.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkShape, STATS_PER_USER};
use super::{PredictorError, Sample};
use crate::rng::substream;
use crate::tokens::{TokenDims, ATTRIBUTES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub experts: usize,
    pub dwa_temperature: f64,
    pub a0: f64,
    /// Numerator of the mixture scale; `min(L, N)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<f64>,
    /// Denominator of the mixture scale; `min(L, N)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_moe: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            learning_rate: 0.1,
            hidden: 64,
            experts: 4,
            dwa_temperature: 2.0,
            a0: 1.0,
            rank: None,
            eta_moe: None,
        }
    }
}

/// Loss record of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLoss {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean cross-entropy of each user over the epoch's batches.
    pub per_user: Vec<f64>,
    /// Task weights used during the epoch.
    pub theta: Vec<f64>,
    /// `Σ_k θ_k · per_user_k`.
    pub total: f64,
}

/// Task weights for the next epoch given the per-user loss history.
///
/// Uniform while fewer than two epochs are recorded; afterwards
/// `θ_k = K·softmax(r/τ)_k` with `r_k = L_k(e−1) / L_k(e−2)`.
pub fn dwa_weights(history: &[Vec<f64>], users: usize, temperature: f64) -> Vec<f64> {
    if history.len() < 2 {
        return vec![1.0; users];
    }
    let last = &history[history.len() - 1];
    let prev = &history[history.len() - 2];
    let ratios: Vec<f64> = last.iter().zip(prev).map(|(l, p)| l / p / temperature).collect();
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = ratios.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| users as f64 * e / total).collect()
}

fn check_samples(samples: &[Sample], dims: &TokenDims, classes: usize) -> Result<usize, PredictorError> {
    let first = samples.first().ok_or(PredictorError::EmptyDataset)?;
    let users = first.users();
    for s in samples {
        if s.users() != users || s.features.len() != users {
            return Err(PredictorError::BadSample {
                sample: s.id,
                reason: format!("expected {users} users"),
            });
        }
        for x in &s.features {
            if x.len() != dims.feature_len() {
                return Err(PredictorError::BadSample {
                    sample: s.id,
                    reason: format!("feature length {} instead of {}", x.len(), dims.feature_len()),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(PredictorError::BadSample {
                    sample: s.id,
                    reason: "non-finite feature".into(),
                });
            }
        }
        if let Some(&label) = s.labels.iter().find(|&&l| l >= classes) {
            return Err(PredictorError::LabelOutOfRange {
                sample: s.id,
                label,
                classes,
            });
        }
    }
    Ok(users)
}

/// Mean and spread of the RevIN statistics across the training set.
fn stat_standardization(samples: &[Sample], dims: &TokenDims) -> (Vec<f64>, Vec<f64>) {
    let start = ATTRIBUTES * dims.patch_len();
    let rows: Vec<&[f64]> = samples.iter().flat_map(|s| s.features.iter().map(|x| &x[start..])).collect();
    let n = rows.len() as f64;
    let shift: Vec<f64> = (0..STATS_PER_USER).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let scale = (0..STATS_PER_USER)
        .map(|j| {
            let sd = (rows.iter().map(|r| (r[j] - shift[j]).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (shift, scale)
}

/// Trains a network on `samples`. `rank_default` is `min(L, N)` of the
/// scenario. Deterministic given `seed`.
pub fn train(
    samples: &[Sample],
    dims: &TokenDims,
    classes: usize,
    rank_default: f64,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Network, Vec<EpochLoss>), PredictorError> {
    if cfg.epochs == 0 {
        return Err(PredictorError::InvalidConfig("epochs"));
    }
    if cfg.batch_size == 0 {
        return Err(PredictorError::InvalidConfig("batch_size"));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(PredictorError::InvalidConfig("learning_rate"));
    }
    if cfg.hidden == 0 {
        return Err(PredictorError::InvalidConfig("hidden"));
    }
    if !(cfg.dwa_temperature > 0.0) {
        return Err(PredictorError::InvalidConfig("dwa_temperature"));
    }
    dims.validate().map_err(|_| PredictorError::InvalidConfig("token dims"))?;
    let users = check_samples(samples, dims, classes)?;

    let shape = NetworkShape {
        users,
        classes,
        dims: *dims,
        hidden: cfg.hidden,
        experts: cfg.experts,
        a0: cfg.a0,
        mixture_scale: cfg.rank.unwrap_or(rank_default) / cfg.eta_moe.unwrap_or(rank_default),
    };
    let mut net = Network::init(shape, &mut substream(seed, "init", 0));
    let (shift, scale) = stat_standardization(samples, dims);
    net.stat_shift = shift;
    net.stat_scale = scale;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grad = vec![0.0; net.num_params()];
    let mut per_user_history: Vec<Vec<f64>> = Vec::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let theta = dwa_weights(&per_user_history, users, cfg.dwa_temperature);
        order.shuffle(&mut substream(seed, "shuffle", epoch as u64));
        let mut sums = vec![0.0; users];
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &samples[i];
                let losses = net.loss_and_grad(&s.features, &s.labels, &theta, scale, &mut grad);
                for (acc, l) in sums.iter_mut().zip(losses) {
                    *acc += l;
                }
            }
            for (p, g) in net.params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
        }
        let per_user: Vec<f64> = sums.iter().map(|s| s / samples.len() as f64).collect();
        let total: f64 = per_user.iter().zip(&theta).map(|(l, t)| l * t).sum();
        if !total.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            return Err(PredictorError::Divergence { epoch });
        }
        per_user_history.push(per_user.clone());
        history.push(EpochLoss {
            epoch,
            per_user,
            theta,
            total,
        });
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{evaluate, Split, TrainedPredictor};
    use rand::Rng;

    fn dims() -> TokenDims {
        TokenDims {
            window: 7,
            l_patch: 3,
            l_full: 2,
            s_patch: 4,
        }
    }

    fn sample(id: u64, features: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Sample {
        Sample {
            id,
            features,
            layout: labels[0],
            labels,
            sum_rate: 1.0,
            codeword_sum_rates: vec![1.0; classes],
            user_positions: vec![],
            split: Split::Train,
        }
    }

    /// Classes separated by the first mean statistic.
    fn separable(n: usize, users: usize, classes: usize, seed: u64) -> Vec<Sample> {
        let d = dims();
        let mut rng = substream(seed, "toy", 0);
        (0..n)
            .map(|i| {
                let labels: Vec<usize> = (0..users).map(|_| rng.random_range(0..classes)).collect();
                let features = labels
                    .iter()
                    .map(|&y| {
                        let mut x: Vec<f64> = (0..d.feature_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                        x[ATTRIBUTES * d.patch_len()] = y as f64 + rng.random_range(-0.2..0.2);
                        x
                    })
                    .collect();
                sample(i as u64, features, labels, classes)
            })
            .collect()
    }

    #[test]
    fn dwa_schedule() {
        assert_eq!(dwa_weights(&[], 3, 2.0), vec![1.0; 3]);
        assert_eq!(dwa_weights(&[vec![1.0, 2.0]], 2, 2.0), vec![1.0; 2]);
        let w = dwa_weights(&[vec![1.0, 1.0], vec![0.5, 1.0]], 2, 2.0);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        // The user whose loss fell less gets more weight.
        assert!(w[1] > w[0]);
        let expected0 = 2.0 * (0.25f64).exp() / ((0.25f64).exp() + (0.5f64).exp());
        assert!((w[0] - expected0).abs() < 1e-12);
    }

    #[test]
    fn memorizes_one_sample() {
        let data = separable(1, 1, 6, 1);
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 1,
            learning_rate: 0.2,
            hidden: 8,
            experts: 2,
            ..TrainConfig::default()
        };
        let (_, hist) = train(&data, &dims(), 6, 1.0, &cfg, 3).unwrap();
        assert!(hist.last().unwrap().total < 1e-2, "{:?}", hist.last());
    }

    #[test]
    fn learns_separable_toy_set_and_is_deterministic() {
        let data = separable(300, 1, 5, 2);
        let cfg = TrainConfig {
            epochs: 40,
            hidden: 16,
            experts: 2,
            ..TrainConfig::default()
        };
        let (net, hist) = train(&data, &dims(), 5, 1.0, &cfg, 7).unwrap();
        let acc = evaluate(&TrainedPredictor { network: net }, &data, &[1]).unwrap().top_s[0].1;
        assert!(acc >= 0.95, "{acc}");
        assert!(hist.iter().all(|h| h.theta == vec![1.0]));
        let (_, again) = train(&data, &dims(), 5, 1.0, &cfg, 7).unwrap();
        assert_eq!(hist, again);
    }

    #[test]
    fn dwa_weights_stay_normalized_for_two_users() {
        let data = separable(100, 2, 4, 3);
        let cfg = TrainConfig {
            epochs: 8,
            hidden: 8,
            experts: 1,
            ..TrainConfig::default()
        };
        let (_, hist) = train(&data, &dims(), 4, 1.0, &cfg, 1).unwrap();
        for h in hist {
            assert!(h.theta.iter().all(|&t| t > 0.0));
            assert!((h.theta.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        let mut train_set = separable(400, 1, 8, 4);
        let test_set = separable(2000, 1, 8, 5);
        let mut rng = substream(0, "shuffle-labels", 0);
        for s in train_set.iter_mut() {
            s.labels = vec![rng.random_range(0..8)];
        }
        let cfg = TrainConfig {
            epochs: 10,
            hidden: 8,
            experts: 1,
            ..TrainConfig::default()
        };
        let (net, _) = train(&train_set, &dims(), 8, 1.0, &cfg, 1).unwrap();
        let acc = evaluate(&TrainedPredictor { network: net }, &test_set, &[1]).unwrap().top_s[0].1;
        let sd = (0.125f64 * 0.875 / 2000.0).sqrt();
        assert!((acc - 0.125).abs() < 3.0 * sd + 0.02, "{acc}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = TrainConfig::default();
        assert_eq!(train(&[], &dims(), 4, 1.0, &cfg, 0).unwrap_err(), PredictorError::EmptyDataset);
        let mut data = separable(3, 1, 4, 0);
        data[1].labels = vec![9];
        assert!(matches!(
            train(&data, &dims(), 4, 1.0, &cfg, 0),
            Err(PredictorError::LabelOutOfRange { label: 9, .. })
        ));
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let data = separable(50, 1, 4, 0);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            hidden: 8,
            experts: 1,
            epochs: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&data, &dims(), 4, 1.0, &cfg, 0),
            Err(PredictorError::Divergence { .. })
        ));
    }
}
