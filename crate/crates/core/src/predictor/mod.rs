//! Beam predictors, training and evaluation.
//!
//! Every predictor maps a [`Sample`] to one ranked distribution over the
//! codebook per user. [`OraclePredictor`] reads the label,
//! [`RandomPredictor`] guesses, [`NearestCentroid`] is a non-parametric
//! baseline and [`TrainedPredictor`] wraps a trained [`Network`].

pub mod network;
mod train;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{rank_descending, top_s_accuracy};
use crate::geometry::Point3;
use crate::rng::substream;

pub use network::{finite_difference_check, softmax, Network, NetworkShape, TensorInfo};
pub use train::{dwa_weights, train, EpochLoss, TrainConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictorError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("sample {sample}: label {label} outside a codebook of {classes}")]
    LabelOutOfRange { sample: u64, label: usize, classes: usize },
    #[error("sample {sample}: {reason}")]
    BadSample { sample: u64, reason: String },
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },
    #[error("invalid training parameter `{0}`")]
    InvalidConfig(&'static str),
    #[error("parameter document: {0}")]
    Document(String),
    #[error("Top-S evaluation: {0}")]
    Metric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One labeled observation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Index of the sample in its dataset; seeds its random draws.
    pub id: u64,
    /// Per-user feature vectors (normalized patches, then RevIN statistics).
    pub features: Vec<Vec<f64>>,
    /// Per-user codeword labels.
    pub labels: Vec<usize>,
    /// Codeword deployed under the labels.
    pub layout: usize,
    /// Sum rate achieved by `layout`.
    pub sum_rate: f64,
    /// Full-`K` MMSE sum rate of every codeword.
    pub codeword_sum_rates: Vec<f64>,
    pub user_positions: Vec<Point3>,
    pub split: Split,
}

impl Sample {
    pub fn users(&self) -> usize {
        self.labels.len()
    }
}

/// Distribution over the codebook and its ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Codeword ids, most likely first, ascending id on ties.
    pub ranking: Vec<usize>,
    pub probabilities: Vec<f64>,
}

impl Prediction {
    pub fn from_probabilities(probabilities: Vec<f64>) -> Self {
        Self {
            ranking: rank_descending(&probabilities),
            probabilities,
        }
    }

    pub fn top1(&self) -> usize {
        self.ranking[0]
    }
}

/// Anything that ranks codewords for every user of a sample.
pub trait BeamPredictor: Sync {
    fn name(&self) -> &str;
    fn predict(&self, sample: &Sample) -> Vec<Prediction>;
}

/// Ranks the label first. Upper bound for every metric.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub classes: usize,
}

impl BeamPredictor for OraclePredictor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, sample: &Sample) -> Vec<Prediction> {
        sample
            .labels
            .iter()
            .map(|&y| {
                let mut p = vec![0.0; self.classes];
                p[y] = 1.0;
                Prediction::from_probabilities(p)
            })
            .collect()
    }
}

/// Random scores drawn from the substream `(seed, "random-predictor", id)`.
#[derive(Debug, Clone)]
pub struct RandomPredictor {
    pub classes: usize,
    pub seed: u64,
}

impl BeamPredictor for RandomPredictor {
    fn name(&self) -> &str {
        "random"
    }

    fn predict(&self, sample: &Sample) -> Vec<Prediction> {
        let mut rng = substream(self.seed, "random-predictor", sample.id);
        (0..sample.users())
            .map(|_| {
                let raw: Vec<f64> = (0..self.classes).map(|_| rng.random::<f64>()).collect();
                let total: f64 = raw.iter().sum();
                Prediction::from_probabilities(raw.iter().map(|v| v / total).collect())
            })
            .collect()
    }
}

/// Per-class mean of standardized features; scores are `softmax(-‖x − c‖²)`.
#[derive(Debug, Clone)]
pub struct NearestCentroid {
    shift: Vec<f64>,
    scale: Vec<f64>,
    centroids: Vec<Option<Vec<f64>>>,
}

impl NearestCentroid {
    /// Fits on every user block of every training sample.
    pub fn fit(samples: &[Sample], classes: usize) -> Result<Self, PredictorError> {
        let blocks: Vec<(&Vec<f64>, usize)> = samples
            .iter()
            .flat_map(|s| s.features.iter().zip(s.labels.iter().copied()))
            .collect();
        if blocks.is_empty() {
            return Err(PredictorError::EmptyDataset);
        }
        let dim = blocks[0].0.len();
        let n = blocks.len() as f64;
        let mut shift = vec![0.0; dim];
        for (x, _) in &blocks {
            for (s, v) in shift.iter_mut().zip(x.iter()) {
                *s += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for (x, _) in &blocks {
            for ((s, v), m) in scale.iter_mut().zip(x.iter()).zip(&shift) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in scale.iter_mut() {
            *s = if s.sqrt() > 1e-12 { s.sqrt() } else { 1.0 };
        }
        let mut sums = vec![vec![0.0; dim]; classes];
        let mut counts = vec![0usize; classes];
        for (x, y) in &blocks {
            if *y >= classes {
                return Err(PredictorError::LabelOutOfRange {
                    sample: 0,
                    label: *y,
                    classes,
                });
            }
            counts[*y] += 1;
            for (j, v) in x.iter().enumerate() {
                sums[*y][j] += (v - shift[j]) / scale[j];
            }
        }
        let centroids = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| (c > 0).then(|| s.iter().map(|v| v / c as f64).collect()))
            .collect();
        Ok(Self { shift, scale, centroids })
    }
}

impl BeamPredictor for NearestCentroid {
    fn name(&self) -> &str {
        "nearest-centroid"
    }

    fn predict(&self, sample: &Sample) -> Vec<Prediction> {
        sample
            .features
            .iter()
            .map(|x| {
                let z: Vec<f64> = x.iter().zip(self.shift.iter().zip(&self.scale)).map(|(v, (m, s))| (v - m) / s).collect();
                let scores: Vec<f64> = self
                    .centroids
                    .iter()
                    .map(|c| match c {
                        Some(c) => -c.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
                        None => f64::NEG_INFINITY,
                    })
                    .collect();
                Prediction::from_probabilities(softmax(&scores).0)
            })
            .collect()
    }
}

/// Network-backed predictor.
#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    pub network: Network,
}

impl BeamPredictor for TrainedPredictor {
    fn name(&self) -> &str {
        "trained"
    }

    fn predict(&self, sample: &Sample) -> Vec<Prediction> {
        self.network
            .probabilities(&sample.features)
            .into_iter()
            .map(Prediction::from_probabilities)
            .collect()
    }
}

/// Top-S accuracies and sum-rate efficiency of a predictor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub predictor: String,
    pub samples: usize,
    /// `(S, accuracy)` pooled over all users.
    pub top_s: Vec<(usize, f64)>,
    /// Mean over samples of the sum rate of the deployed prediction divided
    /// by the labeled sum rate; samples with a zero labeled rate are skipped.
    pub sum_rate_ratio: f64,
}

/// Scores `predictor` on `samples`. The deployed layout of a prediction is
/// the first user's top-ranked codeword.
pub fn evaluate(predictor: &dyn BeamPredictor, samples: &[Sample], s_list: &[usize]) -> Result<EvalReport, PredictorError> {
    if samples.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    let predictions: Vec<Vec<Prediction>> = samples.par_iter().map(|s| predictor.predict(s)).collect();
    let rankings: Vec<Vec<usize>> = predictions.iter().flatten().map(|p| p.ranking.clone()).collect();
    let truths: Vec<usize> = samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
    let top_s = s_list
        .iter()
        .map(|&s| {
            top_s_accuracy(&rankings, &truths, s)
                .map(|a| (s, a))
                .map_err(|e| PredictorError::Metric(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (sum, count) = samples
        .iter()
        .zip(&predictions)
        .filter(|(s, _)| s.sum_rate > 0.0)
        .fold((0.0, 0usize), |(acc, n), (s, p)| (acc + s.codeword_sum_rates[p[0].top1()] / s.sum_rate, n + 1));
    Ok(EvalReport {
        predictor: predictor.name().to_string(),
        samples: samples.len(),
        top_s,
        sum_rate_ratio: if count > 0 { sum / count as f64 } else { 1.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorDocument {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDocument {
    v: u32,
    shape: NetworkShape,
    stat_shift: Vec<f64>,
    stat_scale: Vec<f64>,
    tensors: Vec<TensorDocument>,
}

/// Versioned JSON with a shape header and one row-major array per tensor.
pub fn network_to_json(net: &Network) -> String {
    let doc = ParamsDocument {
        v: 1,
        shape: net.shape.clone(),
        stat_shift: net.stat_shift.clone(),
        stat_scale: net.stat_scale.clone(),
        tensors: net
            .tensors()
            .into_iter()
            .map(|t| TensorDocument {
                data: net.params[t.offset..t.offset + t.rows * t.cols].to_vec(),
                name: t.name,
                rows: t.rows,
                cols: t.cols,
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("parameters serialize")
}

pub fn network_from_json(text: &str) -> Result<Network, PredictorError> {
    let doc: ParamsDocument = serde_json::from_str(text).map_err(|e| PredictorError::Document(e.to_string()))?;
    if doc.v != 1 {
        return Err(PredictorError::Document(format!("unsupported version {}", doc.v)));
    }
    let template = Network::zeros(doc.shape.clone());
    let expected = template.tensors();
    if expected.len() != doc.tensors.len() {
        return Err(PredictorError::Document(format!(
            "{} tensors, expected {}",
            doc.tensors.len(),
            expected.len()
        )));
    }
    let mut params = Vec::with_capacity(template.num_params());
    for (e, t) in expected.iter().zip(&doc.tensors) {
        if e.name != t.name || e.rows != t.rows || e.cols != t.cols || t.data.len() != t.rows * t.cols {
            return Err(PredictorError::Document(format!("tensor `{}` does not match the shape header", t.name)));
        }
        params.extend(&t.data);
    }
    Network::from_parts(doc.shape, params, doc.stat_shift, doc.stat_scale)
        .ok_or_else(|| PredictorError::Document("inconsistent statistics".into()))
}
