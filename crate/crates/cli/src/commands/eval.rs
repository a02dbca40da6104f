use std::path::Path;

use passlab_core::predictor::{evaluate, OraclePredictor, Split};

use super::{predictor, read_dataset, split, Run};
use crate::error::CliError;
use crate::output::num;
use crate::Mode;

pub const TOP_S: [usize; 2] = [1, 3];

pub fn run(run: &mut Run, dataset: &Path, mode: Mode, params: Option<&Path>) -> Result<(), CliError> {
    let records = read_dataset(dataset)?;
    let samples = split(&records, Split::Test);
    let oracle = OraclePredictor {
        classes: run.codebook.len(),
    };
    let chosen = predictor(run, mode, params)?;
    let p = chosen.as_deref().unwrap_or(&oracle);
    let report = evaluate(p, &samples, &TOP_S).map_err(CliError::runtime)?;
    let mut rows = vec![vec![report.predictor.clone(), "samples".into(), String::new(), report.samples.to_string()]];
    for (s, acc) in &report.top_s {
        rows.push(vec![report.predictor.clone(), "top_s_accuracy".into(), s.to_string(), num(*acc)]);
    }
    rows.push(vec![report.predictor.clone(), "sum_rate_ratio".into(), String::new(), num(report.sum_rate_ratio)]);
    run.out.write_csv("eval.csv", &["predictor", "metric", "s", "value"], &rows, &[])?;
    if report.top_s.windows(2).any(|w| w[1].1 < w[0].1) {
        return Err(CliError::Property("Top-S accuracy decreases with S".into()));
    }
    Ok(())
}
