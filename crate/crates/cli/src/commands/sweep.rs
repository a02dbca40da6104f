use std::time::Instant;

use passlab_core::beamforming::{min_power_for_sinr, watts_to_dbm, BeamformingSolution};
use passlab_core::codebook::{codeword_gains, top_s_candidates, ChannelContext, Codebook};
use passlab_core::geometry::PaLayout;
use passlab_core::predictor::{train, BeamPredictor, TrainedPredictor};
use passlab_core::rng::substream_seed;
use passlab_core::scene::{draw_scene, finalize, generate_dataset, scene_features, Scenario};
use rayon::prelude::*;

use super::{inference_sample, Run};
use crate::config::{Resolved, ScenarioConfig};
use crate::error::CliError;
use crate::output::{num, opt};
use crate::Axis;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    OraclePass,
    TrainedPass,
    FixedAntenna,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::OraclePass => "oracle-PASS",
            Variant::TrainedPass => "trained-PASS",
            Variant::FixedAntenna => "fixed-antenna",
        }
    }
}

/// Per-trial measurements of one variant.
struct Measure {
    sum_rate: f64,
    /// `p_max ‖e_0‖² / σ²` of the first user.
    gain: f64,
    min_power: Option<f64>,
}

struct Point {
    label: String,
    cfg: ScenarioConfig,
    gamma: Option<f64>,
}

fn points(base: &ScenarioConfig, axis: Axis) -> Vec<Point> {
    let s = &base.sweep;
    let with = |label: String, f: &dyn Fn(&mut ScenarioConfig), gamma: Option<f64>| {
        let mut cfg = base.clone();
        f(&mut cfg);
        Point { label, cfg, gamma }
    };
    match axis {
        Axis::Snr => s
            .snr_db
            .iter()
            .map(|&v| with(num(v), &|c| c.power.p_max_dbm = c.power.noise_dbm + v, None))
            .collect(),
        Axis::Power => s.power_dbm.iter().map(|&v| with(num(v), &|c| c.power.p_max_dbm = v, None)).collect(),
        Axis::SinrMin => s
            .sinr_min_db
            .iter()
            .map(|&v| with(num(v), &|_| {}, Some(10f64.powf(v / 10.0))))
            .collect(),
        Axis::Pas => s
            .pas
            .iter()
            .map(|&v| with(v.to_string(), &|c| c.geometry.pas_per_waveguide = v, None))
            .collect(),
        Axis::GridResolution => s
            .grid_resolution
            .iter()
            .map(|&v| with(v.to_string(), &|c| c.codebook.grid_points = v, None))
            .collect(),
    }
}

/// Conventional array: one cluster per waveguide centered on the waveguide.
fn fixed_layout(resolved: &Resolved) -> PaLayout {
    let g = &resolved.scenario.geometry;
    let step = resolved.grid.antenna_step;
    let span = (g.pas_per_waveguide - 1) as f64 * step;
    PaLayout::uniform(g.num_waveguides, g.pas_per_waveguide, 0.5 * (g.waveguide_length - span).max(0.0), step)
}

fn user0_gain(sc: &Scenario, ctx: &ChannelContext, layout: &PaLayout) -> Result<f64, CliError> {
    let h = ctx.effective(layout).map_err(CliError::runtime)?;
    Ok(sc.power.p_max * h.row(0).norm_squared() / sc.power.noise)
}

fn measure(sc: &Scenario, ctx: &ChannelContext, layout: &PaLayout, gain: f64, gamma: Option<f64>) -> Result<Measure, CliError> {
    let h = ctx.effective(layout).map_err(CliError::runtime)?;
    let sol = BeamformingSolution::mmse(&h, &sc.power).map_err(CliError::runtime)?;
    let min_power = gamma.and_then(|g| min_power_for_sinr(&h, &sol.w, &sc.power.alpha, sc.power.noise, g));
    Ok(Measure {
        sum_rate: sol.sum_rate,
        gain,
        min_power,
    })
}

#[allow(clippy::too_many_arguments)]
fn trial(
    sc: &Scenario,
    cb: &Codebook,
    variant: Variant,
    fixed: &PaLayout,
    predictor: Option<&dyn BeamPredictor>,
    seed: u64,
    t: u64,
    gamma: Option<f64>,
) -> Result<Measure, CliError> {
    let scene = draw_scene(sc, seed, t);
    let ctx = &scene.context;
    let s = sc.top_s.min(cb.len());
    match variant {
        Variant::FixedAntenna => measure(sc, ctx, fixed, user0_gain(sc, ctx, fixed)?, gamma),
        Variant::OraclePass => {
            let candidates = top_s_candidates(cb, ctx, s).map_err(CliError::runtime)?;
            let out = finalize(sc, cb, ctx, candidates).map_err(CliError::runtime)?;
            let best = codeword_gains(cb, ctx, sc.power.p_max)
                .map_err(CliError::runtime)?
                .iter()
                .map(|row| row[0] / sc.power.noise)
                .fold(0.0, f64::max);
            measure(sc, ctx, cb.get(out.layout).map_err(CliError::runtime)?, best, gamma)
        }
        Variant::TrainedPass => {
            let p = predictor.expect("trained variant has a predictor");
            let features = scene_features(sc, &scene).map_err(CliError::runtime)?;
            let predictions = p.predict(&inference_sample(t, features));
            let candidates = predictions.iter().map(|pr| pr.ranking[..s].to_vec()).collect();
            let out = finalize(sc, cb, ctx, candidates).map_err(CliError::runtime)?;
            let gain = user0_gain(sc, ctx, cb.get(predictions[0].top1()).map_err(CliError::runtime)?)?;
            measure(sc, ctx, cb.get(out.layout).map_err(CliError::runtime)?, gain, gamma)
        }
    }
}

pub fn run(run: &mut Run, axis: Axis) -> Result<(), CliError> {
    let trials = run.cfg.sweep.trials;
    if trials == 0 {
        return Err(CliError::Config("sweep.trials: must be at least 1".into()));
    }
    let points = points(&run.cfg, axis);
    if points.is_empty() {
        return Err(CliError::Config(format!("sweep: no values for axis {}", axis.name())));
    }
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for (i, point) in points.iter().enumerate() {
        let resolved = point.cfg.resolve()?;
        let cb = resolved.codebook()?;
        let sc = &resolved.scenario;
        let fixed = fixed_layout(&resolved);
        let mut variants = vec![Variant::OraclePass];
        let mut predictor = None;
        if run.cfg.sweep.train_samples > 0 {
            let data = generate_dataset(sc, &cb, substream_seed(run.seed, "sweep-train", i as u64), run.cfg.sweep.train_samples)
                .map_err(CliError::runtime)?;
            let (network, _) = train(&data, &sc.dims, cb.len(), sc.rank(), &point.cfg.train, run.seed).map_err(CliError::runtime)?;
            predictor = Some(TrainedPredictor { network });
            variants.push(Variant::TrainedPass);
        }
        variants.push(Variant::FixedAntenna);
        for variant in variants {
            let start = Instant::now();
            let measures: Vec<Measure> = (0..trials as u64)
                .into_par_iter()
                .map(|t| {
                    trial(
                        sc,
                        &cb,
                        variant,
                        &fixed,
                        predictor.as_ref().map(|p| p as &dyn BeamPredictor),
                        run.seed,
                        t,
                        point.gamma,
                    )
                })
                .collect::<Result<_, CliError>>()?;
            timing.push(vec![
                axis.name().to_string(),
                point.label.clone(),
                variant.name().to_string(),
                cb.len().to_string(),
                num(start.elapsed().as_secs_f64()),
            ]);
            let n = measures.len() as f64;
            let mut metrics = vec![
                ("sum_rate", Some(measures.iter().map(|m| m.sum_rate).sum::<f64>() / n)),
                ("gain_db", Some(10.0 * (measures.iter().map(|m| m.gain).sum::<f64>() / n).log10())),
            ];
            if point.gamma.is_some() {
                let feasible: Vec<f64> = measures.iter().filter_map(|m| m.min_power).collect();
                metrics.push(("sinr_feasible", Some(feasible.len() as f64 / n)));
                let mean = (!feasible.is_empty()).then(|| watts_to_dbm(feasible.iter().sum::<f64>() / feasible.len() as f64));
                metrics.push(("min_power_dbm", mean));
            }
            for (metric, value) in metrics {
                rows.push(vec![
                    axis.name().to_string(),
                    point.label.clone(),
                    variant.name().to_string(),
                    metric.to_string(),
                    opt(value),
                ]);
            }
        }
    }
    let file = format!("sweep_{}.csv", axis.name());
    run.out.write_csv(&file, &["axis", "value", "variant", "metric", "result"], &rows, &[])?;
    run.out.write_csv(
        &format!("timing_{}.csv", axis.name()),
        &["axis", "value", "variant", "codebook_size", "seconds"],
        &timing,
        &[],
    )
}
