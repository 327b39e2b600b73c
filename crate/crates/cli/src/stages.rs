//! The pipeline stages. Each reads its inputs from files, writes its
//! outputs to files, and returns a short summary for the caller to print.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use factpref_core::annotation::{filter_dataset, format_filter_table, ReportRow};
use factpref_core::corpus::{separable_preferences, toy_documents, warm_start_examples};
use factpref_core::decoding::{beam_search, document_seed, generate_pair, DecodeError};
use factpref_core::dpo::{self, encode_preferences, DpoError};
use factpref_core::jsonl::{read_jsonl, write_jsonl, JsonlError};
use factpref_core::lm::{LanguageModel, LmError, RemoteLm};
use factpref_core::scorers::providers::{BatchConfig, HashEmbedder, LexicalNli, RemoteEmbedder, RemoteNli};
use factpref_core::scorers::{
    words, AlignScorer, BartScorer, EmbeddingProvider, FactccScorer, NliProvider, RougeScorer, SbertScorer,
    ScoreError, Scorer, SummacConv, SummacScorer,
};
use factpref_core::types::Validate;
use factpref_core::{
    Document, FilterReport, PairOutcome, PreferenceRecord, ScoredPair, SkipReason, Strategy, SummaryCandidate,
    SummaryPair, ToyLm, ToyLmShape, TracePoint, Vocab,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Backend, Metric, PipelineConfig, ProviderBinding};
use crate::error::PipelineError;

const GENERATE: &str = "generate-pairs";
const SCORE: &str = "score";
const BUILD: &str = "build-prefs";
const TRAIN: &str = "train";
const STATS: &str = "stats";
const EVALUATE: &str = "evaluate";

/// A document that produced no pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub doc_id: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub documents: usize,
    pub pairs: usize,
    pub skipped: Vec<SkipRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub first: TracePoint,
    pub last: TracePoint,
    pub snapshot_id: String,
}

/// Mean metric values over one model's BS#1 outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub model: String,
    pub documents: usize,
    /// Documents whose output rendered to no words; excluded from means.
    pub empty_outputs: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<EvaluationRow>,
}

impl EvaluationReport {
    pub fn to_table(&self) -> String {
        let names: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.metrics.keys()).collect();
        let mut out = format!("{:<10} {:>5}", "Model", "Docs");
        for n in &names {
            out.push_str(&format!(" {n:>10}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<10} {:>5}", r.model, r.documents));
            for n in &names {
                match r.metrics.get(*n) {
                    Some(v) => out.push_str(&format!(" {v:>10.4}")),
                    None => out.push_str(&format!(" {:>10}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn read<T>(stage: &'static str, what: &str, path: &Path) -> Result<Vec<T>, PipelineError>
where
    T: serde::de::DeserializeOwned + Validate,
{
    read_jsonl(path).map_err(|e: JsonlError| PipelineError::validation(stage, format!("reading {what}: {e}")))
}

fn write<T: Serialize>(stage: &'static str, path: &Path, records: &[T]) -> Result<usize, PipelineError> {
    ensure_parent(path)?;
    write_jsonl(path, records).map_err(|e| PipelineError::validation(stage, e))
}

fn ensure_parent(path: &Path) -> Result<(), PipelineError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.to_path_buf(),
            source,
        }),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports always serialise");
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: serde::de::DeserializeOwned>(stage: &'static str, path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::validation(stage, format!("{}: {e}", path.display())))
}

fn decode_error(stage: &'static str, e: DecodeError) -> PipelineError {
    match e {
        DecodeError::Lm(LmError::Remote(r)) => PipelineError::provider(stage, r),
        other => PipelineError::validation(stage, other),
    }
}

fn score_error(stage: &'static str, e: ScoreError) -> PipelineError {
    if e.is_remote() {
        PipelineError::provider(stage, e)
    } else {
        PipelineError::validation(stage, e)
    }
}

/// Runs the stages of one configured experiment.
pub struct Pipeline {
    config: PipelineConfig,
    vocab: Vocab,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let vocab = config.model.vocab()?;
        Ok(Self { config, vocab })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.parallelism)
            .build()
            .expect("thread pool")
    }

    fn documents(&self, stage: &'static str) -> Result<Vec<Document>, PipelineError> {
        read(stage, "documents", &self.config.paths.documents)
    }

    fn sources(&self, stage: &'static str) -> Result<HashMap<String, String>, PipelineError> {
        Ok(self
            .documents(stage)?
            .into_iter()
            .map(|d| (d.id, d.source))
            .collect())
    }

    fn shape(&self) -> ToyLmShape {
        let m = &self.config.model;
        ToyLmShape::new(self.vocab.len(), m.embed_dim, m.hidden_dim).with_max_len(m.max_len)
    }

    /// Initial summariser: loaded from `paths.base_params`, or initialised
    /// from `[model]` and warm-started on the lead sentences of the
    /// documents file.
    pub fn base_model(&self, stage: &'static str) -> Result<ToyLm, PipelineError> {
        if let Some(path) = &self.config.paths.base_params {
            let lm: ToyLm = read_json(stage, path)?;
            if lm.shape().vocab_size != self.vocab.len() {
                return Err(PipelineError::validation(
                    stage,
                    format!(
                        "{} has vocabulary size {}, the configured vocabulary has {}",
                        path.display(),
                        lm.shape().vocab_size,
                        self.vocab.len()
                    ),
                ));
            }
            return Ok(lm);
        }
        let m = &self.config.model;
        let mut lm = ToyLm::init(self.shape(), m.init_seed, m.init_scale);
        if m.warm_start_epochs > 0 {
            let docs = self.documents(stage)?;
            let examples =
                warm_start_examples(&docs, &self.vocab).map_err(|e| PipelineError::validation(stage, e))?;
            lm.warm_start(&examples, m.warm_start_lr, m.warm_start_epochs)
                .map_err(|e| PipelineError::validation(stage, e))?;
        }
        Ok(lm)
    }

    fn generator(&self, stage: &'static str) -> Result<Arc<dyn LanguageModel>, PipelineError> {
        let m = &self.config.model;
        Ok(match m.backend {
            Backend::Toy => Arc::new(self.base_model(stage)?),
            Backend::Remote => {
                let endpoint = m.endpoint.as_deref().expect("validated");
                Arc::new(RemoteLm::new(self.config.scoring.remote(endpoint), self.vocab.len(), m.max_len))
            }
        })
    }

    fn batch(&self) -> BatchConfig {
        BatchConfig {
            batch_size: self.config.scoring.batch_size,
            max_in_flight: self.config.scoring.max_in_flight,
        }
    }

    fn nli(&self, binding: &ProviderBinding) -> Arc<dyn NliProvider> {
        match binding {
            ProviderBinding::Mock => Arc::new(LexicalNli),
            ProviderBinding::Remote { endpoint } => {
                Arc::new(RemoteNli::new(self.config.scoring.remote(endpoint), self.batch()))
            }
        }
    }

    fn scorers(&self, stage: &'static str, metrics: &[Metric]) -> Result<Vec<Box<dyn Scorer>>, PipelineError> {
        let s = &self.config.scoring;
        let mut out: Vec<Box<dyn Scorer>> = Vec::with_capacity(metrics.len());
        for metric in metrics {
            out.push(match metric {
                Metric::Sbert => {
                    let embedder: Arc<dyn EmbeddingProvider> = match &s.embedding {
                        ProviderBinding::Mock => Arc::new(HashEmbedder::default()),
                        ProviderBinding::Remote { endpoint } => {
                            Arc::new(RemoteEmbedder::new(s.remote(endpoint), self.batch()))
                        }
                    };
                    Box::new(SbertScorer { embedder })
                }
                Metric::Summac => {
                    let conv = match &s.summac_weights {
                        Some(path) => SummacConv::from_file(path).map_err(|e| PipelineError::Config(e.to_string()))?,
                        None => SummacConv::fallback(s.summac_bins),
                    };
                    Box::new(SummacScorer {
                        nli: self.nli(&s.nli),
                        conv,
                    })
                }
                Metric::Align => Box::new(AlignScorer {
                    alignment: self.nli(&s.alignment),
                    chunk_size: s.align_chunk_size,
                }),
                Metric::Factcc => Box::new(FactccScorer { nli: self.nli(&s.nli) }),
                Metric::Bart => Box::new(BartScorer {
                    lm: self.generator(stage)?,
                    vocab: self.vocab.clone(),
                    weights: s.bart_weights.clone(),
                }),
                Metric::RougeL => Box::new(RougeScorer),
            });
        }
        Ok(out)
    }

    /// Decodes one pair per document. Skips go to `reports/skips.jsonl`.
    /// On a provider failure the pairs decoded before the failing document
    /// are written to `<pairs>.partial` before aborting.
    pub fn generate_pairs(&self) -> Result<GenerateSummary, PipelineError> {
        let docs = self.documents(GENERATE)?;
        let paths = &self.config.paths;
        if docs.is_empty() {
            write::<SummaryPair>(GENERATE, &paths.pairs, &[])?;
            write::<SkipRecord>(GENERATE, &paths.skips(), &[])?;
            return Ok(GenerateSummary {
                documents: 0,
                pairs: 0,
                skipped: Vec::new(),
            });
        }
        let lm = self.generator(GENERATE)?;
        let d = &self.config.decoding;
        let outcomes: Vec<Result<PairOutcome, PipelineError>> = self.pool().install(|| {
            docs.par_iter()
                .map(|doc| {
                    let source = self
                        .vocab
                        .encode(&doc.source)
                        .map_err(|e| PipelineError::validation(GENERATE, format!("document {}: {e}", doc.id)))?;
                    let mut cfg = d.pairing_config();
                    cfg.seed = document_seed(d.seed, &doc.id);
                    generate_pair(lm.as_ref(), &self.vocab, &doc.id, &source, d.pairing, &cfg)
                        .map_err(|e| decode_error(GENERATE, e))
                })
                .collect()
        });
        let mut pairs = Vec::new();
        let mut skipped = Vec::new();
        for (doc, outcome) in docs.iter().zip(outcomes) {
            match outcome {
                Ok(PairOutcome::Pair(p)) => pairs.push(*p),
                Ok(PairOutcome::Skip(reason)) => skipped.push(SkipRecord {
                    doc_id: doc.id.clone(),
                    reason,
                }),
                Err(e @ PipelineError::Provider { .. }) => {
                    let mut partial = paths.pairs.clone().into_os_string();
                    partial.push(".partial");
                    write(GENERATE, Path::new(&partial), &pairs)?;
                    return Err(PipelineError::provider(
                        GENERATE,
                        format!(
                            "{e}; {} pairs before document {} saved to {}",
                            pairs.len(),
                            doc.id,
                            Path::new(&partial).display()
                        ),
                    ));
                }
                Err(e) => return Err(e),
            }
        }
        write(GENERATE, &paths.pairs, &pairs)?;
        write(GENERATE, &paths.skips(), &skipped)?;
        Ok(GenerateSummary {
            documents: docs.len(),
            pairs: pairs.len(),
            skipped,
        })
    }

    /// Scores both members of every pair with the labelling metrics.
    pub fn score(&self) -> Result<usize, PipelineError> {
        let pairs: Vec<SummaryPair> = read(SCORE, "pairs (output of generate-pairs)", &self.config.paths.pairs)?;
        let sources = self.sources(SCORE)?;
        let scorers = self.scorers(SCORE, &self.config.scoring.metrics)?;
        let scored: Vec<Result<ScoredPair, PipelineError>> = self.pool().install(|| {
            pairs
                .into_par_iter()
                .map(|pair| {
                    let source = sources.get(&pair.doc_id).ok_or_else(|| {
                        PipelineError::validation(
                            SCORE,
                            format!("pair for unknown document `{}` (generate-pairs/score boundary)", pair.doc_id),
                        )
                    })?;
                    let mut scores = BTreeMap::new();
                    for s in &scorers {
                        let a = s.score(&pair.a.text, source).map_err(|e| score_error(SCORE, e))?;
                        let b = s.score(&pair.b.text, source).map_err(|e| score_error(SCORE, e))?;
                        scores.insert(s.name().to_string(), (a, b));
                    }
                    ScoredPair::from_scores(pair, scores).map_err(|e| PipelineError::validation(SCORE, e))
                })
                .collect()
        });
        let scored = scored.into_iter().collect::<Result<Vec<_>, _>>()?;
        write(SCORE, &self.config.paths.scored, &scored)
    }

    /// Keeps the pairs on which every metric agrees.
    pub fn build_prefs(&self) -> Result<FilterReport, PipelineError> {
        let scored: Vec<ScoredPair> = read(BUILD, "scored pairs (output of score)", &self.config.paths.scored)?;
        let configured: BTreeSet<&str> = self.config.scoring.metrics.iter().map(|m| m.name()).collect();
        if let Some(p) = scored.first() {
            let found: BTreeSet<&str> = p.labels.keys().map(String::as_str).collect();
            if found != configured {
                return Err(PipelineError::validation(
                    BUILD,
                    format!("score/build-prefs boundary: scored file carries metrics {found:?}, config lists {configured:?}"),
                ));
            }
        }
        let sources = self.sources(BUILD)?;
        let (prefs, report) = filter_dataset(&scored, self.config.tie_policy, &sources)
            .map_err(|e| PipelineError::validation(BUILD, e))?;
        write(BUILD, &self.config.paths.prefs, &prefs)?;
        write_json(&self.config.paths.filter_report(), &report)?;
        Ok(report)
    }

    /// DPO on the preference file, starting from the base model.
    pub fn train(&self) -> Result<TrainSummary, PipelineError> {
        if self.config.model.backend != Backend::Toy {
            return Err(PipelineError::Config("training needs model.backend = \"toy\"".into()));
        }
        let prefs: Vec<PreferenceRecord> = read(TRAIN, "preferences (output of build-prefs)", &self.config.paths.prefs)?;
        if prefs.is_empty() {
            return Err(PipelineError::validation(TRAIN, "the preference file is empty"));
        }
        let data = encode_preferences(&prefs, &self.vocab).map_err(|e| PipelineError::validation(TRAIN, e))?;
        let theta0 = self.base_model(TRAIN)?;
        let (theta, trace) = match dpo::train(&theta0, &data, &self.config.train, None) {
            Ok(out) => out,
            Err(DpoError::Diverged { step, loss, snapshot }) => {
                let path = self.config.paths.diverged_params();
                write_json(&path, &*snapshot)?;
                return Err(PipelineError::Diverged {
                    step,
                    loss,
                    snapshot: path,
                });
            }
            Err(e) => return Err(PipelineError::validation(TRAIN, e)),
        };
        write_json(&self.config.paths.trained_params, &theta)?;
        write(TRAIN, &self.config.paths.trace, &trace.points)?;
        Ok(TrainSummary {
            steps: trace.points.last().map_or(0, |p| p.step),
            first: trace.points[0],
            last: *trace.points.last().expect("trace has a first point"),
            snapshot_id: trace.snapshot_id,
        })
    }

    /// Renders the filter report as a table and saves it as `stats.txt`.
    pub fn stats(&self) -> Result<String, PipelineError> {
        let report: FilterReport = read_json(STATS, &self.config.paths.filter_report())?;
        if !report.is_consistent() {
            return Err(PipelineError::validation(STATS, "filter report counts do not add up"));
        }
        let table = format_filter_table(&[ReportRow {
            model: self.config.labels.model_name.clone(),
            dataset: self.config.labels.dataset_name.clone(),
            report,
        }]);
        write_text(&self.config.paths.stats(), &table)?;
        Ok(table)
    }

    fn decode_top_beam(&self, lm: &dyn LanguageModel, docs: &[Document]) -> Result<Vec<SummaryCandidate>, PipelineError> {
        let d = &self.config.decoding;
        self.pool().install(|| {
            docs.par_iter()
                .map(|doc| {
                    let source = self
                        .vocab
                        .encode(&doc.source)
                        .map_err(|e| PipelineError::validation(EVALUATE, format!("document {}: {e}", doc.id)))?;
                    let beams = beam_search(lm, &source, d.beam_size, d.max_len).map_err(|e| decode_error(EVALUATE, e))?;
                    Ok(beams.best().clone().into_candidate(&doc.id, Strategy::Beam, 0, &self.vocab))
                })
                .collect()
        })
    }

    /// Decodes BS#1 with the base and (when present) trained parameters and
    /// reports the mean of each evaluation metric. Decoded outputs go to
    /// `reports/eval_outputs_<model>.jsonl`.
    pub fn evaluate(&self) -> Result<EvaluationReport, PipelineError> {
        let paths = &self.config.paths;
        let eval_path = paths.eval_documents.as_ref().unwrap_or(&paths.documents);
        let docs: Vec<Document> = read(EVALUATE, "evaluation documents", eval_path)?;
        let mut models: Vec<(&str, Arc<dyn LanguageModel>)> = vec![("base", self.generator(EVALUATE)?)];
        if paths.trained_params.exists() {
            let trained: ToyLm = read_json(EVALUATE, &paths.trained_params)?;
            models.push(("trained", Arc::new(trained)));
        }
        let scorers = self.scorers(EVALUATE, &self.config.scoring.eval_metrics)?;
        let mut rows = Vec::new();
        for (label, lm) in models {
            let outputs = self.decode_top_beam(lm.as_ref(), &docs)?;
            write(EVALUATE, &paths.eval_outputs(label), &outputs)?;
            let usable: Vec<(&SummaryCandidate, &Document)> = outputs
                .iter()
                .zip(&docs)
                .filter(|(c, _)| !words(&c.text).is_empty())
                .collect();
            let per_doc: Vec<Result<Vec<f64>, PipelineError>> = self.pool().install(|| {
                usable
                    .par_iter()
                    .map(|(c, doc)| {
                        scorers
                            .iter()
                            .map(|s| s.score(&c.text, &doc.source).map_err(|e| score_error(EVALUATE, e)))
                            .collect()
                    })
                    .collect()
            });
            let per_doc = per_doc.into_iter().collect::<Result<Vec<_>, _>>()?;
            let metrics = scorers
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let mean = if per_doc.is_empty() {
                        0.0
                    } else {
                        per_doc.iter().map(|v| v[i]).sum::<f64>() / per_doc.len() as f64
                    };
                    (s.name().to_string(), mean)
                })
                .collect();
            rows.push(EvaluationRow {
                model: label.to_string(),
                documents: docs.len(),
                empty_outputs: docs.len() - usable.len(),
                metrics,
            });
        }
        let report = EvaluationReport { rows };
        write_json(&paths.evaluation(), &report)?;
        Ok(report)
    }

    /// Writes `n` seeded synthetic documents; with `marker`, also a
    /// separable preference file whose chosen summaries carry that word.
    pub fn toy_corpus(&self, n: usize, seed: u64, marker: Option<&str>) -> Result<usize, PipelineError> {
        let docs = toy_documents(n, &self.vocab, seed).map_err(|e| PipelineError::Config(e.to_string()))?;
        write("toy-corpus", &self.config.paths.documents, &docs)?;
        if let Some(marker) = marker {
            let lm = self.base_model("toy-corpus")?;
            let prefs = separable_preferences(&docs, &self.vocab, marker, &lm, seed)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            write("toy-corpus", &self.config.paths.prefs, &prefs)?;
        }
        Ok(docs.len())
    }
}
