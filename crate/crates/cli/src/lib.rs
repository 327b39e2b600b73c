//! Pipeline orchestration: documents → pairs → scored pairs → preferences
//! → DPO training → evaluation, one file-backed stage at a time.
//!
//! Stages share nothing in memory, so any stage can be rerun on its own
//! and `run-all` is exactly the stages in sequence.

pub mod cli;
pub mod config;
pub mod error;
pub mod stages;

pub use config::PipelineConfig;
pub use error::PipelineError;
pub use stages::{EvaluationReport, GenerateSummary, Pipeline, TrainSummary};

use factpref_core::FilterReport;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub generate: GenerateSummary,
    pub scored: usize,
    pub filter: FilterReport,
    pub train: TrainSummary,
    pub stats: String,
    pub evaluation: EvaluationReport,
}

impl Pipeline {
    /// All stages in order.
    pub fn run_all(&self) -> Result<RunSummary, PipelineError> {
        let generate = self.generate_pairs()?;
        let scored = self.score()?;
        let filter = self.build_prefs()?;
        let train = self.train()?;
        let stats = self.stats()?;
        let evaluation = self.evaluate()?;
        Ok(RunSummary {
            generate,
            scored,
            filter,
            train,
            stats,
            evaluation,
        })
    }
}
