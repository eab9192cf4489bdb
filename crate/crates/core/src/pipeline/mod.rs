//! Command orchestration over a reproducible run directory.
//!
//! A run lives under `<out>/<config-hash>/` with one subdirectory per stage.
//! Each stage writes its files atomically and finishes with a
//! `manifest.json` naming the config hash and the digest of every file; a
//! stage counts as present only once its manifest exists.

mod commands;
mod config;
mod report;
mod store;
mod synthetic;

use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

pub use commands::{
    cmd_all, cmd_analyze, cmd_derive, cmd_encode, cmd_generate, cmd_ingest, cmd_probe, cmd_report, cmd_train, Command,
    Context,
};
pub use config::{DatasetSource, RunConfig, Scale};
pub use store::{read_manifest, write_atomic, Manifest, RunDir, StageDir};
pub use synthetic::{check_agreement, emitted_tasks, generate_synthetic, Agreement, SyntheticCorpus, SyntheticSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing input artifact {}: run `{producer}` first (cmd_{producer})", .path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Label(#[from] crate::probelab::LabelError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Probe(#[from] crate::probeclf::ProbeError),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::MissingArtifact { .. } => "missing_artifact",
            PipelineError::Integrity(_) => "integrity",
            PipelineError::Io { .. } => "io",
            PipelineError::Corpus(_) => "corpus",
            PipelineError::Label(_) => "labels",
            PipelineError::Model(_) => "model",
            PipelineError::Probe(_) => "probe",
            PipelineError::Analysis(_) => "analysis",
        }
    }

    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 1,
        }
    }

    /// Machine-readable form printed on stderr by the CLI.
    pub fn to_json(&self) -> String {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let PipelineError::MissingArtifact { path, producer } = self {
            v["path"] = json!(path.display().to_string());
            v["producer"] = json!(format!("cmd_{producer}"));
        }
        v.to_string()
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
        let path = path.into();
        move |source| PipelineError::Io { path, source }
    }
}
