use std::path::Path;

use passlab_core::beamforming::BeamformingSolution;
use passlab_core::codebook::{codeword_channels, probe_sweep, top_s_candidates};
use passlab_core::rng::substream_seed;
use passlab_core::scene::{draw_scene, finalize, scene_features, TrialOutcome};
use rayon::prelude::*;

use super::{inference_sample, predictor, Run};
use crate::error::CliError;
use crate::output::num;
use crate::Mode;

struct Trial {
    outcome: TrialOutcome,
    probe_best: Vec<usize>,
    /// Best full-codebook sum rate, computed for the single-user oracle check.
    best_rate: Option<f64>,
}

pub fn run(run: &mut Run, mode: Mode, params: Option<&Path>) -> Result<(), CliError> {
    let predictor = predictor(run, mode, params)?;
    let sc = run.scenario();
    let cb = &run.codebook;
    let s = sc.top_s.min(cb.len());
    let recheck = mode == Mode::Oracle && sc.users() == 1;
    let trials: Vec<Trial> = (0..run.cfg.trials.simulate as u64)
        .into_par_iter()
        .map(|t| {
            let scene = draw_scene(sc, run.seed, t);
            let ctx = &scene.context;
            let probe = probe_sweep(cb, ctx, &sc.power, sc.power.noise, run.resolved.probe_mode, substream_seed(run.seed, "probe-noise", t))
                .map_err(CliError::runtime)?;
            let candidates = match &predictor {
                None => top_s_candidates(cb, ctx, s).map_err(CliError::runtime)?,
                Some(p) => {
                    let features = scene_features(sc, &scene).map_err(CliError::runtime)?;
                    p.predict(&inference_sample(t, features))
                        .into_iter()
                        .map(|pred| pred.ranking[..s].to_vec())
                        .collect()
                }
            };
            let outcome = finalize(sc, cb, ctx, candidates).map_err(CliError::runtime)?;
            let best_rate = if recheck {
                let rates = codeword_channels(cb, ctx)
                    .map_err(CliError::runtime)?
                    .iter()
                    .map(|h| BeamformingSolution::mmse(h, &sc.power).map(|b| b.sum_rate))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(CliError::runtime)?;
                Some(rates.into_iter().fold(f64::NEG_INFINITY, f64::max))
            } else {
                None
            };
            Ok(Trial {
                probe_best: (0..sc.users()).map(|k| probe.best(k)).collect(),
                outcome,
                best_rate,
            })
        })
        .collect::<Result<_, CliError>>()?;

    let mut rows = Vec::new();
    let mut violation = None;
    for (t, trial) in trials.iter().enumerate() {
        let sol = &trial.outcome.solution;
        for k in 0..sc.users() {
            rows.push(vec![
                t.to_string(),
                k.to_string(),
                trial.outcome.layout.to_string(),
                trial.probe_best[k].to_string(),
                num(sol.sinr[k]),
                num(sol.rates[k]),
                num(sol.sum_rate),
            ]);
        }
        if let Some(best) = trial.best_rate {
            if (sol.sum_rate - best).abs() > 1e-9 * best.max(1.0) {
                violation.get_or_insert(format!("trial {t}: oracle sum rate {} below codebook maximum {best}", sol.sum_rate));
            }
        }
    }
    run.out.write_csv(
        "simulate.csv",
        &["trial", "user", "codeword", "probe_codeword", "sinr", "rate", "sum_rate"],
        &rows,
        &[],
    )?;
    match violation {
        Some(msg) => Err(CliError::Property(msg)),
        None => Ok(()),
    }
}
