//! Synthetic scenes: user trajectories, labeled samples and the inference
//! pipeline (candidates → joint selection → MMSE).

use rand::Rng;
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

use crate::beamforming::{BeamformingError, BeamformingSolution, PowerConfig};
use crate::channel::{BlockageDraw, BlockageModel, ChannelError, RadioConfig};
use crate::codebook::{
    codeword_channels, joint_label_search, top_s_candidates, ChannelContext, Codebook, CodebookError, JointLabel, JointMode,
};
use crate::geometry::{Point3, SystemGeometry};
use crate::predictor::{BeamPredictor, Sample, Split};
use crate::rng::{substream, SimRng};
use crate::tokens::{synthesize_boxes, CameraModel, PatchFeatures, TokenDims, TokenError};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Beamforming(#[from] BeamformingError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error("invalid scene parameter `{0}`")]
    Invalid(&'static str),
}

/// Everything that defines one simulated deployment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub geometry: SystemGeometry,
    pub radio: RadioConfig,
    pub power: PowerConfig,
    pub blockage: BlockageModel,
    pub dims: TokenDims,
    pub camera: CameraModel,
    /// Seconds between observation slots.
    pub slot: f64,
    pub max_speed: f64,
    /// Slots between the last observation and the labeled position.
    pub horizon: usize,
    /// Per-user candidates kept for joint selection.
    pub top_s: usize,
    pub joint_mode: JointMode,
    pub joint_cap: usize,
}

impl Scenario {
    pub fn users(&self) -> usize {
        self.power.users()
    }

    /// `min(L, N)`, the default mixture-scale numerator and denominator.
    pub fn rank(&self) -> f64 {
        self.geometry.num_waveguides.min(self.geometry.pas_per_waveguide) as f64
    }

    /// Blockage-free context for ground positions.
    pub fn context(&self, users: Vec<Point3>) -> ChannelContext {
        ChannelContext::unblocked(self.radio.clone(), self.geometry.clone(), users)
    }

    /// Context with one block-fading realization drawn from `rng`.
    pub fn blocked_context<R: Rng>(&self, users: Vec<Point3>, rng: &mut R) -> ChannelContext {
        let draw = BlockageDraw::sample(rng, self.geometry.total_pas(), users.len());
        self.context(users).with_blockage(self.blockage.clone(), draw)
    }
}

/// Straight-line walk ending at a uniform point of the region.
///
/// The final position is drawn first; earlier slots step back along a
/// uniformly oriented velocity of speed up to `max_speed`, clamped to the
/// region.
pub fn generate_trajectory<R: Rng>(geometry: &SystemGeometry, slots: usize, slot: f64, max_speed: f64, rng: &mut R) -> Vec<Point3> {
    let end = [
        rng.random_range(0.0..=geometry.waveguide_length),
        rng.random_range(0.0..=geometry.region_depth),
    ];
    let heading = rng.random_range(0.0..2.0 * PI);
    let speed = rng.random_range(0.0..=max_speed);
    let v = [speed * heading.cos(), speed * heading.sin()];
    (0..slots)
        .map(|t| {
            let back = (slots - 1 - t) as f64 * slot;
            [
                (end[0] - v[0] * back).clamp(0.0, geometry.waveguide_length),
                (end[1] - v[1] * back).clamp(0.0, geometry.region_depth),
                0.0,
            ]
        })
        .collect()
}

/// Label and per-codeword sum rates for one channel context.
pub fn label_context(
    scenario: &Scenario,
    codebook: &Codebook,
    ctx: &ChannelContext,
) -> Result<(JointLabel, Vec<f64>), SceneError> {
    let rates: Vec<f64> = codeword_channels(codebook, ctx)?
        .iter()
        .map(|h| BeamformingSolution::mmse(h, &scenario.power).map(|s| s.sum_rate))
        .collect::<Result<_, _>>()?;
    let s = scenario.top_s.min(codebook.len());
    let candidates = top_s_candidates(codebook, ctx, s)?;
    let label = joint_label_search(&candidates, codebook, ctx, &scenario.power, scenario.joint_mode, scenario.joint_cap)?;
    Ok((label, rates))
}

/// Observation windows, final positions and blockage realization of scene `id`.
pub struct Scene {
    pub trajectories: Vec<Vec<Point3>>,
    pub positions: Vec<Point3>,
    pub context: ChannelContext,
}

pub fn draw_scene(scenario: &Scenario, master: u64, id: u64) -> Scene {
    let mut rng = substream(master, "scene", id);
    let slots = scenario.dims.window + scenario.horizon;
    let trajectories: Vec<Vec<Point3>> = (0..scenario.users())
        .map(|_| generate_trajectory(&scenario.geometry, slots, scenario.slot, scenario.max_speed, &mut rng))
        .collect();
    let positions: Vec<Point3> = trajectories.iter().map(|t| t[slots - 1]).collect();
    let mut blockage_rng: SimRng = substream(master, "blockage", id);
    let context = scenario.blocked_context(positions.clone(), &mut blockage_rng);
    Scene {
        trajectories,
        positions,
        context,
    }
}

/// Per-user feature vectors of the observation window.
pub fn scene_features(scenario: &Scenario, scene: &Scene) -> Result<Vec<Vec<f64>>, SceneError> {
    scene
        .trajectories
        .iter()
        .map(|t| {
            let boxes = synthesize_boxes(&t[..scenario.dims.window], &scenario.camera)?;
            Ok(PatchFeatures::from_series(&boxes, &scenario.dims)?.to_vec())
        })
        .collect()
}

/// Fully labeled sample `id`.
pub fn make_sample(scenario: &Scenario, codebook: &Codebook, master: u64, id: u64, split: Split) -> Result<Sample, SceneError> {
    let scene = draw_scene(scenario, master, id);
    let features = scene_features(scenario, &scene)?;
    let (label, rates) = label_context(scenario, codebook, &scene.context)?;
    Ok(Sample {
        id,
        features,
        labels: label.ids,
        layout: label.layout,
        sum_rate: rates[label.layout],
        codeword_sum_rates: rates,
        user_positions: scene.positions,
        split,
    })
}

/// Train/val/test tag of sample `i` out of `count` (70/10/20 by index).
pub fn split_of(i: usize, count: usize) -> Split {
    let train = (0.7 * count as f64).round() as usize;
    let val = (0.1 * count as f64).round() as usize;
    if i < train {
        Split::Train
    } else if i < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

/// `count` samples generated in parallel; identical for any thread count.
pub fn generate_dataset(scenario: &Scenario, codebook: &Codebook, master: u64, count: usize) -> Result<Vec<Sample>, SceneError> {
    (0..count)
        .into_par_iter()
        .map(|i| make_sample(scenario, codebook, master, i as u64, split_of(i, count)))
        .collect()
}

/// Outcome of one inference trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub candidates: Vec<Vec<usize>>,
    pub layout: usize,
    pub solution: BeamformingSolution,
}

/// Selects a layout from per-user ranked candidates and finalizes the
/// baseband weights with MMSE.
pub fn finalize(scenario: &Scenario, codebook: &Codebook, ctx: &ChannelContext, candidates: Vec<Vec<usize>>) -> Result<TrialOutcome, SceneError> {
    let label = joint_label_search(&candidates, codebook, ctx, &scenario.power, JointMode::Union, scenario.joint_cap)?;
    let h = ctx.effective(codebook.get(label.layout)?)?;
    let solution = BeamformingSolution::mmse(&h, &scenario.power)?;
    Ok(TrialOutcome {
        candidates,
        layout: label.layout,
        solution,
    })
}

/// Runs the inference pipeline on `sample`'s scene with `predictor`'s
/// Top-S lists as candidates.
pub fn predictor_trial(
    scenario: &Scenario,
    codebook: &Codebook,
    ctx: &ChannelContext,
    predictor: &dyn BeamPredictor,
    sample: &Sample,
) -> Result<TrialOutcome, SceneError> {
    let s = scenario.top_s.clamp(1, codebook.len());
    let candidates = predictor
        .predict(sample)
        .into_iter()
        .map(|p| p.ranking[..s].to_vec())
        .collect();
    finalize(scenario, codebook, ctx, candidates)
}
