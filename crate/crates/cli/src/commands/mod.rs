use std::fs;
use std::path::Path;

use passlab_core::codebook::Codebook;
use passlab_core::predictor::{network_from_json, BeamPredictor, Network, RandomPredictor, Sample, Split, TrainedPredictor};
use passlab_core::scene::Scenario;
use serde::{Deserialize, Serialize};

use crate::config::{Resolved, ScenarioConfig};
use crate::error::CliError;
use crate::output::{RunManifest, RunOutput};
use crate::{Cli, Command, Mode};

mod dataset;
mod eval;
mod outage;
mod simulate;
mod sweep;
mod train;

pub const DATASET_VERSION: u32 = 1;

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub v: u32,
    pub seed: u64,
    #[serde(flatten)]
    pub sample: Sample,
}

/// State shared by every command.
pub struct Run {
    pub cfg: ScenarioConfig,
    pub resolved: Resolved,
    pub codebook: Codebook,
    pub seed: u64,
    pub out: RunOutput,
}

impl Run {
    pub fn scenario(&self) -> &Scenario {
        &self.resolved.scenario
    }
}

pub fn dispatch(cli: &Cli, cfg: ScenarioConfig) -> Result<RunManifest, CliError> {
    let resolved = cfg.resolve()?;
    let codebook = resolved.codebook()?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    let mut run = Run {
        resolved,
        codebook,
        seed,
        out: RunOutput::create(&cli.out)?,
        cfg,
    };
    let (name, result) = match cli.command {
        Command::Simulate => ("simulate", simulate::run(&mut run, cli.mode, cli.params.as_deref())),
        Command::Dataset => ("dataset", dataset::run(&mut run, cli.count)),
        Command::Train => ("train", train::run(&mut run, required(cli.dataset.as_deref(), "--dataset")?)),
        Command::Eval => ("eval", eval::run(&mut run, required(cli.dataset.as_deref(), "--dataset")?, cli.mode, cli.params.as_deref())),
        Command::Outage => ("outage", outage::run(&mut run)),
        Command::Sweep => {
            let axis = cli.axis.ok_or_else(|| CliError::Usage("sweep requires --axis".into()))?;
            ("sweep", sweep::run(&mut run, axis))
        }
    };
    // Files written before a property violation are still listed.
    let Run { cfg, out, seed, .. } = run;
    let manifest = out.finish(name, &cfg, seed)?;
    result.map(|_| manifest)
}

fn required<'a>(path: Option<&'a Path>, flag: &str) -> Result<&'a Path, CliError> {
    path.ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let rec: DatasetRecord =
                serde_json::from_str(line).map_err(|e| CliError::Runtime(format!("{}:{}: {e}", path.display(), i + 1)))?;
            if rec.v != DATASET_VERSION {
                return Err(CliError::Runtime(format!("{}:{}: unsupported version {}", path.display(), i + 1, rec.v)));
            }
            Ok(rec)
        })
        .collect()
}

pub fn split(records: &[DatasetRecord], split: Split) -> Vec<Sample> {
    records.iter().filter(|r| r.sample.split == split).map(|r| r.sample.clone()).collect()
}

pub fn load_network(path: &Path) -> Result<Network, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    network_from_json(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Checks that `net` fits the scenario's users, codebook and token sizes.
pub fn check_network(net: &Network, run: &Run) -> Result<(), CliError> {
    let s = &net.shape;
    if s.users != run.scenario().users() || s.classes != run.codebook.len() || s.dims != run.scenario().dims {
        return Err(CliError::Runtime(format!(
            "parameters expect {} users, {} codewords and {:?}",
            s.users, s.classes, s.dims
        )));
    }
    Ok(())
}

/// Predictor selected by `--mode`; `None` for the oracle.
pub fn predictor(run: &Run, mode: Mode, params: Option<&Path>) -> Result<Option<Box<dyn BeamPredictor>>, CliError> {
    Ok(match mode {
        Mode::Oracle => None,
        Mode::Random => Some(Box::new(RandomPredictor {
            classes: run.codebook.len(),
            seed: run.seed,
        })),
        Mode::Trained => {
            let path = params.ok_or_else(|| CliError::Usage("--mode trained requires --params".into()))?;
            let network = load_network(path)?;
            check_network(&network, run)?;
            Some(Box::new(TrainedPredictor { network }))
        }
    })
}

/// Unlabeled sample carrying only the features of an inference trial.
pub fn inference_sample(id: u64, features: Vec<Vec<f64>>) -> Sample {
    let users = features.len();
    Sample {
        id,
        features,
        labels: vec![0; users],
        layout: 0,
        sum_rate: 0.0,
        codeword_sum_rates: Vec::new(),
        user_positions: Vec::new(),
        split: Split::Test,
    }
}
