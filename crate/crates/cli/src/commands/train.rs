use std::path::Path;

use passlab_core::predictor::{network_to_json, train, PredictorError, Split};

use super::{read_dataset, split, Run};
use crate::error::CliError;
use crate::output::num;

pub fn run(run: &mut Run, dataset: &Path) -> Result<(), CliError> {
    let records = read_dataset(dataset)?;
    let samples = split(&records, Split::Train);
    let sc = run.scenario();
    let (net, history) = train(&samples, &sc.dims, run.codebook.len(), sc.rank(), &run.cfg.train, run.seed).map_err(|e| match e {
        PredictorError::InvalidConfig(key) => CliError::Config(format!("train: invalid {key}")),
        other => CliError::runtime(other),
    })?;
    let users = sc.users();
    let mut header: Vec<String> = vec!["epoch".into()];
    header.extend((0..users).map(|k| format!("loss_{k}")));
    header.extend((0..users).map(|k| format!("theta_{k}")));
    header.push("total".into());
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|h| {
            let mut row = vec![h.epoch.to_string()];
            row.extend(h.per_user.iter().copied().map(num));
            row.extend(h.theta.iter().copied().map(num));
            row.push(num(h.total));
            row
        })
        .collect();
    run.out.write_text("params.json", &network_to_json(&net))?;
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    run.out.write_csv("loss.csv", &header, &rows, &[])
}
