use passlab_core::beamforming::BeamformingSolution;
use passlab_core::scene::{draw_scene, generate_dataset};
use rayon::prelude::*;

use super::{DatasetRecord, Run, DATASET_VERSION};
use crate::error::CliError;

pub const FILE: &str = "dataset.jsonl";

pub fn run(run: &mut Run, count: Option<usize>) -> Result<(), CliError> {
    let count = count.unwrap_or(run.cfg.trials.dataset);
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let sc = run.scenario();
    let samples = generate_dataset(sc, &run.codebook, run.seed, count).map_err(CliError::runtime)?;

    // Re-evaluate every label from a fresh draw of its scene.
    let drift: Vec<(u64, f64)> = samples
        .par_iter()
        .map(|s| {
            let scene = draw_scene(sc, run.seed, s.id);
            let layout = run.codebook.get(s.layout).map_err(CliError::runtime)?;
            let h = scene.context.effective(layout).map_err(CliError::runtime)?;
            let rate = BeamformingSolution::mmse(&h, &sc.power).map_err(CliError::runtime)?.sum_rate;
            Ok((s.id, (rate - s.sum_rate).abs()))
        })
        .collect::<Result<_, CliError>>()?;

    let mut text = String::new();
    for sample in samples {
        let rec = DatasetRecord {
            v: DATASET_VERSION,
            seed: run.seed,
            sample,
        };
        text.push_str(&serde_json::to_string(&rec).map_err(CliError::runtime)?);
        text.push('\n');
    }
    run.out.write_text(FILE, &text)?;
    match drift.iter().find(|(_, d)| *d > 1e-9) {
        Some((id, d)) => Err(CliError::Property(format!("sample {id}: label re-evaluates {d} away from its stored sum rate"))),
        None => Ok(()),
    }
}
