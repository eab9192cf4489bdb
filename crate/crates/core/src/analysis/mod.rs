//! Post-hoc analyses of representations, probe results and human annotations.

mod bootstrap;
mod difficulty;
mod evolution;
mod pca;

use thiserror::Error;

use crate::models::RepresentationRecord;

pub use bootstrap::{
    bootstrap_ties, read_annotations, synthetic_annotations, write_annotations, BootstrapConfig, Choice, Response,
    TieCounting, TieDistribution, MAX_ANNOTATIONS,
};
pub use difficulty::{
    bucket_difficulty, Bucket, BucketScore, DifficultyTable, ModelScores, TaskBucket, SEQ2SEQ_MODELS,
};
pub use evolution::{evolution_csv, evolution_curves, EvolutionSeries};
pub use pca::{manifold_ratio, pca2, PcaProjection};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("format error on line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Representation vectors widened for analysis.
pub fn cache_rows(records: &[RepresentationRecord]) -> Vec<Vec<f64>> {
    records.iter().map(|r| r.vector.iter().map(|&v| v as f64).collect()).collect()
}

/// Plot data: one row per record with an optional color key.
pub fn pca_csv(records: &[RepresentationRecord], proj: &PcaProjection, colors: Option<&[String]>) -> String {
    let mut s = String::from("dialogue_id,turn_index,x,y,color\n");
    for (i, (r, p)) in records.iter().zip(&proj.points).enumerate() {
        let c = colors.and_then(|c| c.get(i)).map(String::as_str).unwrap_or("");
        s.push_str(&format!("{},{},{:.6},{:.6},{}\n", r.dialogue_id, r.turn_index, p[0], p[1], c));
    }
    s
}
