//! Command-line surface. Flags override keys of the config file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use factpref_core::{DpoMode, Pairing, TiePolicy};

use crate::config::PipelineConfig;
use crate::error::PipelineError;

#[derive(Debug, Parser)]
#[command(name = "factpref", version, about = "Preference-data pipeline for factually consistent summarisation")]
pub struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true, env = "FACTPREF_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory that relative paths resolve against.
    #[arg(long, global = true)]
    pub root: Option<PathBuf>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode one summary pair per document.
    GeneratePairs(DecodeArgs),
    /// Score both members of every pair with the labelling metrics.
    Score,
    /// Keep the pairs on which all metrics agree.
    BuildPrefs(FilterArgs),
    /// DPO on the preference file.
    Train(TrainCmdArgs),
    /// Print the filter statistics table.
    Stats,
    /// Decode BS#1 with base and trained parameters and score it.
    Evaluate(DecodeArgs),
    /// Every stage in order.
    RunAll(RunAllArgs),
    /// Write a seeded synthetic corpus.
    ToyCorpus(ToyCorpusArgs),
}

#[derive(Debug, Default, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub pairing: Option<Pairing>,
    #[arg(long)]
    pub beam_size: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Decoding seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub tie_policy: Option<TiePolicy>,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub beta: Option<f64>,
    /// literal | anchored
    #[arg(long)]
    pub mode: Option<DpoMode>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct TrainCmdArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Shuffling seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Args)]
pub struct RunAllArgs {
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Shuffling seed for training (`--seed` is the decoding seed here).
    #[arg(long)]
    pub train_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ToyCorpusArgs {
    #[arg(long, default_value_t = 50)]
    pub docs: usize,
    /// Corpus seed.
    #[arg(long = "corpus-seed", default_value_t = 0)]
    pub seed: u64,
    /// Also write a separable preference file favouring this word.
    #[arg(long)]
    pub marker: Option<String>,
}

impl DecodeArgs {
    pub fn apply(&self, c: &mut PipelineConfig) {
        let d = &mut c.decoding;
        set(&mut d.pairing, self.pairing);
        set(&mut d.beam_size, self.beam_size);
        set(&mut d.temperature, self.temperature);
        set(&mut d.seed, self.seed);
        set(&mut d.max_len, self.max_len);
    }
}

impl FilterArgs {
    pub fn apply(&self, c: &mut PipelineConfig) {
        set(&mut c.tie_policy, self.tie_policy);
    }
}

impl TrainArgs {
    pub fn apply(&self, c: &mut PipelineConfig) {
        let t = &mut c.train;
        set(&mut t.beta, self.beta);
        set(&mut t.mode, self.mode);
        set(&mut t.learning_rate, self.lr);
        set(&mut t.epochs, self.epochs);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.eval_every, self.eval_every);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Cli {
    /// Config file (or defaults under the working directory) with the
    /// command-line overrides applied.
    pub fn resolve_config(&self) -> Result<PipelineConfig, PipelineError> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::rooted(&std::env::current_dir().map_err(|source| PipelineError::Io {
                path: ".".into(),
                source,
            })?),
        };
        if let Some(root) = &self.root {
            config.set_root(root);
        }
        if let Some(n) = self.parallelism {
            config.parallelism = n;
        }
        match &self.command {
            Command::GeneratePairs(a) | Command::Evaluate(a) => a.apply(&mut config),
            Command::BuildPrefs(a) => a.apply(&mut config),
            Command::Train(a) => {
                a.train.apply(&mut config);
                set(&mut config.train.seed, a.seed);
            }
            Command::RunAll(a) => {
                a.decode.apply(&mut config);
                a.filter.apply(&mut config);
                a.train.apply(&mut config);
                set(&mut config.train.seed, a.train_seed);
            }
            Command::Score | Command::Stats | Command::ToyCorpus(_) => {}
        }
        Ok(config)
    }
}
