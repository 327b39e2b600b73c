//! Declarative pipeline configuration (TOML).
//!
//! Relative paths resolve against `paths.root` when set, otherwise against
//! the directory holding the config file, otherwise the working directory.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use factpref_core::dpo::DpoConfig;
use factpref_core::remote::RemoteConfig;
use factpref_core::scorers::TokenWeights;
use factpref_core::{Pairing, PairingConfig, TiePolicy, Vocab};
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub tie_policy: TiePolicy,
    /// Worker threads for the generate, score and evaluate stages.
    pub parallelism: usize,
    pub paths: Paths,
    pub model: ModelConfig,
    pub decoding: DecodingConfig,
    pub scoring: ScoringConfig,
    pub train: DpoConfig,
    pub labels: Labels,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tie_policy: TiePolicy::Drop,
            parallelism: 4,
            paths: Paths::default(),
            model: ModelConfig::default(),
            decoding: DecodingConfig::default(),
            scoring: ScoringConfig::default(),
            train: DpoConfig::default(),
            labels: Labels::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub root: Option<PathBuf>,
    pub documents: PathBuf,
    pub pairs: PathBuf,
    pub scored: PathBuf,
    pub prefs: PathBuf,
    pub trace: PathBuf,
    /// Directory for filter, skip, stats and evaluation reports.
    pub reports: PathBuf,
    /// Initial summariser parameters; built from `[model]` when absent.
    pub base_params: Option<PathBuf>,
    pub trained_params: PathBuf,
    /// Documents decoded by `evaluate`; defaults to `documents`.
    pub eval_documents: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            root: None,
            documents: "documents.jsonl".into(),
            pairs: "pairs.jsonl".into(),
            scored: "scored.jsonl".into(),
            prefs: "prefs.jsonl".into(),
            trace: "trace.jsonl".into(),
            reports: "reports".into(),
            base_params: None,
            trained_params: "trained_params.json".into(),
            eval_documents: None,
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let root = match &self.root {
            Some(r) if r.is_absolute() => r.clone(),
            Some(r) => base.join(r),
            None => base.to_path_buf(),
        };
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        for p in [
            &mut self.documents,
            &mut self.pairs,
            &mut self.scored,
            &mut self.prefs,
            &mut self.trace,
            &mut self.reports,
            &mut self.trained_params,
        ] {
            join(p);
        }
        for p in [&mut self.base_params, &mut self.eval_documents].into_iter().flatten() {
            join(p);
        }
        self.root = Some(root);
    }

    pub fn filter_report(&self) -> PathBuf {
        self.reports.join("filter_report.json")
    }

    pub fn skips(&self) -> PathBuf {
        self.reports.join("skips.jsonl")
    }

    pub fn stats(&self) -> PathBuf {
        self.reports.join("stats.txt")
    }

    pub fn evaluation(&self) -> PathBuf {
        self.reports.join("evaluation.json")
    }

    pub fn eval_outputs(&self, label: &str) -> PathBuf {
        self.reports.join(format!("eval_outputs_{label}.jsonl"))
    }

    pub fn diverged_params(&self) -> PathBuf {
        self.reports.join("diverged_params.json")
    }

    fn outputs(&self) -> Vec<(&'static str, &Path)> {
        let mut out = vec![
            ("documents", self.documents.as_path()),
            ("pairs", self.pairs.as_path()),
            ("scored", self.scored.as_path()),
            ("prefs", self.prefs.as_path()),
            ("trace", self.trace.as_path()),
            ("reports", self.reports.as_path()),
            ("trained_params", self.trained_params.as_path()),
        ];
        if let Some(p) = &self.base_params {
            out.push(("base_params", p));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// In-process toy language model.
    Toy,
    /// Logits server at `model.endpoint`; generation and scoring only.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backend: Backend,
    /// Word list with `<eos>` first; the built-in 8-word list when absent.
    pub vocab: Option<Vec<String>>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_len: usize,
    pub init_seed: u64,
    pub init_scale: f64,
    /// Maximum-likelihood epochs on lead sentences before decoding.
    pub warm_start_epochs: usize,
    pub warm_start_lr: f64,
    pub endpoint: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Toy,
            vocab: None,
            embed_dim: 8,
            hidden_dim: 16,
            max_len: 16,
            init_seed: 0,
            init_scale: 0.1,
            warm_start_epochs: 500,
            warm_start_lr: 1.0,
            endpoint: None,
        }
    }
}

impl ModelConfig {
    pub fn vocab(&self) -> Result<Vocab, PipelineError> {
        match &self.vocab {
            None => Ok(Vocab::default()),
            Some(words) => Vocab::new(words.clone()).map_err(|e| PipelineError::Config(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodingConfig {
    pub pairing: Pairing,
    pub beam_size: usize,
    pub temperature: f64,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        let p = PairingConfig::default();
        Self {
            pairing: Pairing::Bs1Bs2,
            beam_size: p.beam_size,
            temperature: p.temperature,
            seed: p.seed,
            max_len: p.max_len,
        }
    }
}

impl DecodingConfig {
    pub fn pairing_config(&self) -> PairingConfig {
        PairingConfig {
            beam_size: self.beam_size,
            temperature: self.temperature,
            seed: self.seed,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Sbert,
    Summac,
    Align,
    Factcc,
    Bart,
    RougeL,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Sbert,
        Metric::Summac,
        Metric::Align,
        Metric::Factcc,
        Metric::Bart,
        Metric::RougeL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Sbert => "sbert",
            Metric::Summac => "summac",
            Metric::Align => "align",
            Metric::Factcc => "factcc",
            Metric::Bart => "bart",
            Metric::RougeL => "rouge_l",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

/// Where a provider's answers come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderBinding {
    #[default]
    Mock,
    Remote {
        endpoint: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    /// Metrics whose signs label pairs.
    pub metrics: Vec<Metric>,
    /// Metrics reported by `evaluate`.
    pub eval_metrics: Vec<Metric>,
    pub embedding: ProviderBinding,
    pub nli: ProviderBinding,
    pub alignment: ProviderBinding,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retries: u32,
    pub timeout_ms: u64,
    pub summac_bins: usize,
    /// JSON file `{"h": .., "weights": [..]}` with trained conv weights.
    pub summac_weights: Option<PathBuf>,
    pub align_chunk_size: usize,
    pub bart_weights: TokenWeights,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::Sbert, Metric::Summac],
            eval_metrics: vec![Metric::Align, Metric::Bart, Metric::Factcc, Metric::RougeL],
            embedding: ProviderBinding::Mock,
            nli: ProviderBinding::Mock,
            alignment: ProviderBinding::Mock,
            batch_size: 32,
            max_in_flight: 4,
            retries: 2,
            timeout_ms: 30_000,
            summac_bins: 50,
            summac_weights: None,
            align_chunk_size: 2,
            bart_weights: TokenWeights::Unit,
        }
    }
}

impl ScoringConfig {
    pub fn remote(&self, endpoint: &str) -> RemoteConfig {
        RemoteConfig {
            endpoint: endpoint.to_string(),
            retries: self.retries,
            timeout_ms: self.timeout_ms,
            ..RemoteConfig::new(endpoint)
        }
    }
}

/// Row labels for the stats table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Labels {
    pub model_name: String,
    pub dataset_name: String,
}

impl Default for Labels {
    fn default() -> Self {
        Self {
            model_name: "toy".into(),
            dataset_name: "synthetic".into(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML text; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut config: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.paths.resolve(base);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Defaults with every path under `root`.
    pub fn rooted(root: &Path) -> Self {
        let mut config = Self::default();
        config.paths.resolve(root);
        config
    }

    /// Re-resolves paths after a root override.
    pub fn set_root(&mut self, root: &Path) {
        let strip = |p: &Path, old_root: &Path| p.strip_prefix(old_root).map(Path::to_path_buf).ok();
        if let Some(old) = self.paths.root.clone() {
            let rebase = |p: &mut PathBuf| {
                if let Some(rel) = strip(p, &old) {
                    *p = rel;
                }
            };
            for p in [
                &mut self.paths.documents,
                &mut self.paths.pairs,
                &mut self.paths.scored,
                &mut self.paths.prefs,
                &mut self.paths.trace,
                &mut self.paths.reports,
                &mut self.paths.trained_params,
            ] {
                rebase(p);
            }
            for p in [&mut self.paths.base_params, &mut self.paths.eval_documents]
                .into_iter()
                .flatten()
            {
                rebase(p);
            }
        }
        self.paths.root = Some(root.to_path_buf());
        self.paths.resolve(Path::new("."));
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        let outputs = self.paths.outputs();
        let mut seen = BTreeSet::new();
        for (name, p) in &outputs {
            if !seen.insert(*p) {
                return bad(format!("paths.{name} ({}) collides with another path", p.display()));
            }
        }
        let s = &self.scoring;
        for (name, list) in [("metrics", &s.metrics), ("eval_metrics", &s.eval_metrics)] {
            if list.is_empty() {
                return bad(format!("scoring.{name} must name at least one metric"));
            }
            if list.iter().collect::<BTreeSet<_>>().len() != list.len() {
                return bad(format!("scoring.{name} lists a metric twice"));
            }
        }
        if s.batch_size == 0 || s.max_in_flight == 0 {
            return bad("scoring.batch_size and scoring.max_in_flight must be positive".into());
        }
        if s.summac_bins < 2 {
            return bad("scoring.summac_bins must be at least 2".into());
        }
        if s.align_chunk_size == 0 {
            return bad("scoring.align_chunk_size must be positive".into());
        }
        for (name, binding) in [("embedding", &s.embedding), ("nli", &s.nli), ("alignment", &s.alignment)] {
            if let ProviderBinding::Remote { endpoint } = binding {
                RemoteConfig::new(endpoint.as_str())
                    .validate()
                    .map_err(|e| PipelineError::Config(format!("scoring.{name}: {e}")))?;
            }
        }
        let m = &self.model;
        m.vocab()?;
        match m.backend {
            Backend::Toy => {
                if !(m.init_scale.is_finite() && m.init_scale >= 0.0) {
                    return bad("model.init_scale must be finite and non-negative".into());
                }
                if m.embed_dim == 0 || m.hidden_dim == 0 || m.max_len == 0 {
                    return bad("model dimensions and max_len must be positive".into());
                }
            }
            Backend::Remote => {
                let endpoint = m
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| PipelineError::Config("model.endpoint is required for the remote backend".into()))?;
                RemoteConfig::new(endpoint)
                    .validate()
                    .map_err(|e| PipelineError::Config(format!("model.endpoint: {e}")))?;
            }
        }
        let d = &self.decoding;
        if d.beam_size == 0 {
            return bad("decoding.beam_size must be positive".into());
        }
        if !(d.temperature.is_finite() && d.temperature > 0.0) {
            return bad("decoding.temperature must be positive".into());
        }
        if d.max_len == 0 || d.max_len > m.max_len {
            return bad(format!(
                "decoding.max_len must lie in 1..={} (model.max_len)",
                m.max_len
            ));
        }
        self.train.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }
}
