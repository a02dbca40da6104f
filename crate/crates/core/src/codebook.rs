//! Pinching-beamforming codebooks, probing, exhaustive oracle and labels.
//!
//! A codeword is a complete [`PaLayout`]. The generated codewords are
//! compact clusters: `L` antennas spaced `antenna_step` apart, slid along
//! the waveguide by one of `grid_points` offsets. A cluster a few
//! wavelengths long yields an array factor that varies smoothly with user
//! position, so the best codeword is a learnable function of where the user
//! stands. Setting `antenna_step` to `x_max / (L - 1)` recovers the
//! full-span uniform grid.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

use crate::beamforming::{BeamformingError, BeamformingSolution, PowerConfig};
use crate::channel::{BlockageDraw, BlockageModel, ChannelError, ChannelState, RadioConfig};
use crate::geometry::{validate_layout, GeometryError, PaLayout, Point3, SystemGeometry, LAYOUT_TOLERANCE};
use crate::rng::substream;

/// Default ceiling on generated codebook size.
pub const DEFAULT_CODEBOOK_CAP: usize = 4096;
/// Default ceiling on joint-label search combinations.
pub const DEFAULT_JOINT_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodebookError {
    #[error("codebook would hold {size} codewords, above the cap of {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("empty codebook")]
    Empty,
    #[error("S = {s} exceeds the codebook size {size}")]
    TooManyCandidates { s: usize, size: usize },
    #[error("joint search needs {size} combinations, above the cap of {cap}")]
    JointTooLarge { size: usize, cap: usize },
    #[error("codeword id {id} outside a codebook of {size}")]
    UnknownCodeword { id: usize, size: usize },
    #[error("user index {user} out of range for {users} users")]
    UnknownUser { user: usize, users: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Beamforming(#[from] BeamformingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridPattern {
    /// One offset shared by every waveguide; `grid_points` codewords.
    UniformOffset,
    /// Independent offset per waveguide; `grid_points^N` codewords.
    PerWaveguideShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub grid_points: usize,
    pub pattern: GridPattern,
    /// Distance between neighbouring antennas of a codeword.
    pub antenna_step: f64,
    pub cap: usize,
}

impl GridSpec {
    pub fn new(grid_points: usize, pattern: GridPattern, antenna_step: f64) -> Self {
        Self {
            grid_points,
            pattern,
            antenna_step,
            cap: DEFAULT_CODEBOOK_CAP,
        }
    }

    /// Offsets of the first antenna, ascending.
    pub fn offsets(&self, geometry: &SystemGeometry) -> Vec<f64> {
        let span = (geometry.pas_per_waveguide - 1) as f64 * self.antenna_step;
        let room = (geometry.waveguide_length - span).max(0.0);
        if self.grid_points <= 1 {
            return vec![0.0];
        }
        (0..self.grid_points)
            .map(|j| j as f64 * room / (self.grid_points - 1) as f64)
            .collect()
    }
}

/// Ordered codewords; the id of a codeword is its index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub spec: Option<GridSpec>,
    codewords: Vec<PaLayout>,
}

impl Codebook {
    /// Codebook over explicit layouts.
    pub fn from_layouts(codewords: Vec<PaLayout>) -> Result<Self, CodebookError> {
        if codewords.is_empty() {
            return Err(CodebookError::Empty);
        }
        Ok(Self { spec: None, codewords })
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&PaLayout, CodebookError> {
        self.codewords.get(id).ok_or(CodebookError::UnknownCodeword {
            id,
            size: self.codewords.len(),
        })
    }

    pub fn codewords(&self) -> &[PaLayout] {
        &self.codewords
    }

    /// Checks every codeword against `geometry`.
    pub fn validate(&self, geometry: &SystemGeometry) -> Result<(), CodebookError> {
        for layout in &self.codewords {
            validate_layout(geometry, layout)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("codebook serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn generate_grid_codebook(geometry: &SystemGeometry, spec: &GridSpec) -> Result<Codebook, CodebookError> {
    let n = geometry.num_waveguides;
    let l = geometry.pas_per_waveguide;
    if spec.grid_points == 0 {
        return Err(CodebookError::InvalidGrid("grid_points must be at least 1".into()));
    }
    if l > 1 {
        if !(spec.antenna_step.is_finite() && spec.antenna_step > 0.0) {
            return Err(CodebookError::InvalidGrid(format!(
                "antenna_step {} must be positive",
                spec.antenna_step
            )));
        }
        if spec.antenna_step + LAYOUT_TOLERANCE < geometry.min_pa_spacing {
            return Err(CodebookError::InvalidGrid(format!(
                "antenna_step {} below the minimum spacing {}",
                spec.antenna_step, geometry.min_pa_spacing
            )));
        }
        let span = (l - 1) as f64 * spec.antenna_step;
        if span > geometry.waveguide_length + LAYOUT_TOLERANCE {
            return Err(CodebookError::InvalidGrid(format!(
                "{l} antennas at step {} span {span} m, longer than the waveguide",
                spec.antenna_step
            )));
        }
    }
    let size = match spec.pattern {
        GridPattern::UniformOffset => spec.grid_points,
        GridPattern::PerWaveguideShift => (0..n).try_fold(1usize, |acc, _| acc.checked_mul(spec.grid_points)).unwrap_or(usize::MAX),
    };
    if size > spec.cap {
        return Err(CodebookError::TooLarge { size, cap: spec.cap });
    }

    let offsets = spec.offsets(geometry);
    let clamp = |x: f64| x.min(geometry.waveguide_length);
    let cluster = |offset: f64| -> Vec<f64> { (0..l).map(|i| clamp(offset + i as f64 * spec.antenna_step)).collect() };
    let codewords: Vec<PaLayout> = match spec.pattern {
        GridPattern::UniformOffset => offsets.iter().map(|&o| PaLayout::replicated(&cluster(o), n)).collect(),
        GridPattern::PerWaveguideShift => (0..size)
            .map(|id| {
                // Mixed radix, waveguide 0 most significant.
                let mut rest = id;
                let mut digits = vec![0; n];
                for d in digits.iter_mut().rev() {
                    *d = rest % spec.grid_points;
                    rest /= spec.grid_points;
                }
                PaLayout::from_columns(digits.iter().map(|&d| cluster(offsets[d])).collect()).expect("equal columns")
            })
            .collect(),
    };
    let codebook = Codebook {
        spec: Some(spec.clone()),
        codewords,
    };
    codebook.validate(geometry)?;
    Ok(codebook)
}

/// Everything needed to turn a layout into channels: radio, geometry,
/// users and one blockage realization.
#[derive(Debug, Clone)]
pub struct ChannelContext {
    pub radio: RadioConfig,
    pub geometry: SystemGeometry,
    pub users: Vec<Point3>,
    pub blockage: Option<(BlockageModel, BlockageDraw)>,
}

impl ChannelContext {
    /// Context with every link in line of sight.
    pub fn unblocked(radio: RadioConfig, geometry: SystemGeometry, users: Vec<Point3>) -> Self {
        Self {
            radio,
            geometry,
            users,
            blockage: None,
        }
    }

    /// Adds a blockage realization held fixed across codewords.
    pub fn with_blockage(mut self, model: BlockageModel, draw: BlockageDraw) -> Self {
        self.blockage = Some((model, draw));
        self
    }

    pub fn state(&self, layout: &PaLayout) -> Result<ChannelState, ChannelError> {
        match &self.blockage {
            None => ChannelState::unblocked(&self.radio, &self.geometry, layout, &self.users),
            Some((model, draw)) => {
                let mask = draw.mask(model, &self.geometry, layout, &self.users)?;
                ChannelState::new(&self.radio, &self.geometry, layout, &self.users, mask)
            }
        }
    }

    /// Effective channels `K x N` under `layout`.
    pub fn effective(&self, layout: &PaLayout) -> Result<DMatrix<Complex64>, ChannelError> {
        Ok(self.state(layout)?.effective)
    }
}

/// Effective channels of every codeword, in id order.
pub fn codeword_channels(codebook: &Codebook, ctx: &ChannelContext) -> Result<Vec<DMatrix<Complex64>>, CodebookError> {
    codebook
        .codewords
        .par_iter()
        .map(|layout| ctx.effective(layout).map_err(CodebookError::from))
        .collect()
}

/// Single-user MRT gains `p_max·‖e_k‖²`, one row per codeword.
pub fn codeword_gains(codebook: &Codebook, ctx: &ChannelContext, p_max: f64) -> Result<Vec<Vec<f64>>, CodebookError> {
    Ok(codeword_channels(codebook, ctx)?
        .iter()
        .map(|h| h.row_iter().map(|e| p_max * e.norm_squared()).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMode {
    /// Identity baseband with a single all-ones pilot: one measurement of
    /// `|√(αp)·Σ_n e_n + z|²` per codeword.
    AllOnes,
    /// Identity baseband with one pilot slot per waveguide: the energies
    /// `|√(αp)·e_n + z_n|²` are summed, which tracks the MRT gain.
    Orthogonal,
}

/// Received probing energy per codeword and user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// `|F|` rows of `K` energies in watts.
    pub power: Vec<Vec<f64>>,
    pub noise_seed: u64,
    pub mode: ProbeMode,
}

impl ProbeReport {
    /// Codeword with the strongest measurement for `user`, lowest id on ties.
    pub fn best(&self, user: usize) -> usize {
        argmax(self.power.iter().map(|row| row[user]))
    }

    /// Codeword ids ranked by measured power for `user`.
    pub fn ranking(&self, user: usize) -> Vec<usize> {
        rank_descending(&self.power.iter().map(|row| row[user]).collect::<Vec<_>>())
    }
}

fn complex_gaussian<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    Complex64::new(s * rng.sample::<f64, _>(StandardNormal), s * rng.sample::<f64, _>(StandardNormal))
}

/// Sweeps every codeword with the probing beamformer.
///
/// `noise` is the receiver noise power; `0` gives a noiseless sweep. Noise
/// for codeword `t` is drawn from the substream `(noise_seed, "probe", t)`.
pub fn probe_sweep(
    codebook: &Codebook,
    ctx: &ChannelContext,
    power: &PowerConfig,
    noise: f64,
    mode: ProbeMode,
    noise_seed: u64,
) -> Result<ProbeReport, CodebookError> {
    let mut rows = Vec::with_capacity(codebook.len());
    for (t, layout) in codebook.codewords.iter().enumerate() {
        let h = ctx.effective(layout)?;
        let mut rng = substream(noise_seed, "probe", t as u64);
        rows.push(probe_energies(&h, power, noise, mode, &mut rng));
    }
    Ok(ProbeReport {
        power: rows,
        noise_seed,
        mode,
    })
}

fn probe_energies<R: Rng>(h: &DMatrix<Complex64>, power: &PowerConfig, noise: f64, mode: ProbeMode, rng: &mut R) -> Vec<f64> {
    (0..h.nrows())
        .map(|k| {
            let amp = (power.alpha[k] * power.p_max).sqrt();
            let mut draw = || if noise > 0.0 { complex_gaussian(rng, noise) } else { Complex64::new(0.0, 0.0) };
            match mode {
                ProbeMode::AllOnes => (h.row(k).sum() * amp + draw()).norm_sqr(),
                ProbeMode::Orthogonal => h.row(k).iter().map(|&e| (e * amp + draw()).norm_sqr()).sum(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// MRT beamforming gain `p_max·‖e‖²`.
    GainMrt,
    /// Single-user SNR `α p_max ‖e‖² / σ²`.
    Snr,
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Indices sorted by value descending, ascending index on ties.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..values.len()).collect();
    ids.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    ids
}

fn check_user(ctx: &ChannelContext, user: usize) -> Result<(), CodebookError> {
    if user >= ctx.users.len() {
        return Err(CodebookError::UnknownUser {
            user,
            users: ctx.users.len(),
        });
    }
    Ok(())
}

/// Exhaustive search for the codeword maximizing `user`'s objective.
pub fn oracle_best_codeword(
    codebook: &Codebook,
    ctx: &ChannelContext,
    user: usize,
    objective: Objective,
    power: &PowerConfig,
) -> Result<usize, CodebookError> {
    if codebook.is_empty() {
        return Err(CodebookError::Empty);
    }
    check_user(ctx, user)?;
    let scale = match objective {
        Objective::GainMrt => power.p_max,
        Objective::Snr => power.alpha[user] * power.p_max / power.noise,
    };
    let gains = codeword_gains(codebook, ctx, 1.0)?;
    Ok(argmax(gains.iter().map(|row| scale * row[user])))
}

/// Per user, the `s` codewords with the highest MRT gain.
pub fn top_s_candidates(codebook: &Codebook, ctx: &ChannelContext, s: usize) -> Result<Vec<Vec<usize>>, CodebookError> {
    if s > codebook.len() {
        return Err(CodebookError::TooManyCandidates { s, size: codebook.len() });
    }
    let gains = codeword_gains(codebook, ctx, 1.0)?;
    Ok((0..ctx.users.len())
        .map(|k| {
            let column: Vec<f64> = gains.iter().map(|row| row[k]).collect();
            let mut ranked = rank_descending(&column);
            ranked.truncate(s);
            ranked
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointMode {
    /// Score each layout in the union of the candidate lists once.
    Union,
    /// Score all `S^K` tuples; a tuple deploys its first element.
    Tuple,
}

/// Result of a joint label search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLabel {
    /// One codeword id per user.
    pub ids: Vec<usize>,
    /// Id of the deployed layout.
    pub layout: usize,
    pub sum_rate: f64,
    pub evaluations: usize,
}

/// Full-`K` MMSE sum rate of one codeword.
pub fn layout_sum_rate(codebook: &Codebook, id: usize, ctx: &ChannelContext, power: &PowerConfig) -> Result<f64, CodebookError> {
    let h = ctx.effective(codebook.get(id)?)?;
    Ok(BeamformingSolution::mmse(&h, power)?.sum_rate)
}

/// Picks the combination of per-user candidates with the best sum rate.
pub fn joint_label_search(
    candidates: &[Vec<usize>],
    codebook: &Codebook,
    ctx: &ChannelContext,
    power: &PowerConfig,
    mode: JointMode,
    cap: usize,
) -> Result<JointLabel, CodebookError> {
    if candidates.is_empty() || candidates.iter().any(Vec::is_empty) {
        return Err(CodebookError::Length("empty candidate list".into()));
    }
    for &id in candidates.iter().flatten() {
        codebook.get(id)?;
    }
    let k = candidates.len();
    match mode {
        JointMode::Union => {
            let union: Vec<usize> = candidates.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
            if union.len() > cap {
                return Err(CodebookError::JointTooLarge { size: union.len(), cap });
            }
            let rates: Vec<f64> = union
                .par_iter()
                .map(|&id| layout_sum_rate(codebook, id, ctx, power))
                .collect::<Result<_, _>>()?;
            let best = argmax(rates.iter().copied());
            Ok(JointLabel {
                ids: vec![union[best]; k],
                layout: union[best],
                sum_rate: rates[best],
                evaluations: union.len(),
            })
        }
        JointMode::Tuple => {
            let size = candidates
                .iter()
                .try_fold(1usize, |acc, c| acc.checked_mul(c.len()))
                .unwrap_or(usize::MAX);
            if size > cap {
                return Err(CodebookError::JointTooLarge { size, cap });
            }
            let mut cache: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
            let mut best: Option<(Vec<usize>, f64)> = None;
            let mut digits = vec![0usize; k];
            for _ in 0..size {
                let tuple: Vec<usize> = digits.iter().zip(candidates).map(|(&d, c)| c[d]).collect();
                let rate = match cache.get(&tuple[0]) {
                    Some(&r) => r,
                    None => {
                        let r = layout_sum_rate(codebook, tuple[0], ctx, power)?;
                        cache.insert(tuple[0], r);
                        r
                    }
                };
                let better = match &best {
                    None => true,
                    Some((ids, r)) => rate > *r || (rate == *r && tuple < *ids),
                };
                if better {
                    best = Some((tuple, rate));
                }
                for pos in (0..k).rev() {
                    digits[pos] += 1;
                    if digits[pos] < candidates[pos].len() {
                        break;
                    }
                    digits[pos] = 0;
                }
            }
            let (ids, sum_rate) = best.expect("at least one tuple");
            Ok(JointLabel {
                layout: ids[0],
                ids,
                sum_rate,
                evaluations: size,
            })
        }
    }
}

/// Fraction of samples whose truth appears in the first `s` ranked ids.
pub fn top_s_accuracy(predictions: &[Vec<usize>], truths: &[usize], s: usize) -> Result<f64, CodebookError> {
    if predictions.len() != truths.len() {
        return Err(CodebookError::Length(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(CodebookError::Length("no samples".into()));
    }
    if let Some(short) = predictions.iter().find(|p| p.len() < s) {
        return Err(CodebookError::Length(format!("ranked list of {} shorter than S = {s}", short.len())));
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p[..s].contains(t)).count();
    Ok(hits as f64 / truths.len() as f64)
}
