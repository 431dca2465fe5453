//! Whole-run orchestration: ingest, enrich, aggregate, fit.
//!
//! Every stage runs in memory on the previous stage's results; artifacts are
//! written through an [`OutputSink`] that records a SHA-256 per file.

mod config;
mod export;
mod fixture;
mod run;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ComplaintWindow, CorrelationSpec, Datasets, ModelKind, ModelSpec, RunConfig};
pub use export::{
    write_aggregate_outputs, write_correlations, write_enrich_outputs, write_fit_outputs, write_ingest_outputs,
    write_pollen_outputs, write_sensor_outputs, write_table_outputs,
};
pub use fixture::{gen_fixture, FixtureSizes, FixtureSummary, FIT_T_VALUES};
pub use run::{
    aggregate, build_table, enrich, fit_table, ingest, load_table, run_pipeline, Aggregated, CorrelationResult,
    EnrichSummary, Enriched, FitOutput, Inputs, ModelSummary, RollupSummary, RunReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Enrich,
    Aggregate,
    Fit,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Stage::Ingest => "ingest",
            Stage::Enrich => "enrich",
            Stage::Aggregate => "aggregate",
            Stage::Fit => "fit",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("{stage} stage failed ({context}): {message}")]
    Stage {
        stage: Stage,
        context: String,
        message: String,
    },
}

impl PipelineError {
    pub fn config(path: &Path, message: impl Into<String>) -> Self {
        PipelineError::Config { path: path.to_path_buf(), message: message.into() }
    }

    pub fn stage(stage: Stage, context: impl Into<String>, message: impl fmt::Display) -> Self {
        PipelineError::Stage { stage, context: context.into(), message: message.to_string() }
    }

    /// Configuration problems are the caller's to fix; everything else is
    /// a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(self, PipelineError::Config { .. })
    }
}

/// Writes artifacts under a root directory and remembers their hashes.
#[derive(Debug)]
pub struct OutputSink {
    root: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl OutputSink {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        OutputSink { root: root.into(), hashes: BTreeMap::new() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `root/rel` (with `/` separators in `rel`).
    pub fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = rel.split('/').fold(self.root.clone(), |p, part| p.join(part));
        let fail = |e: std::io::Error| PipelineError::stage(Stage::Output, path.display().to_string(), e);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(fail)?;
        }
        fs::write(&path, bytes).map_err(fail)?;
        self.hashes.insert(rel.to_string(), crate::ingest::sha256_hex(bytes));
        Ok(())
    }

    /// Relative path to SHA-256 hex of everything written so far.
    pub fn hashes(&self) -> &BTreeMap<String, String> {
        &self.hashes
    }
}
