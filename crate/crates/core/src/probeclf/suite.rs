use serde::{Deserialize, Serialize};

use crate::models::RepresentationRecord;
use crate::parallel::{map_slice, Execution};
use crate::probelab::{LabelSpace, ProbeLabelRecord, ProbeTaskId};

use super::{evaluate, train_classifier, ClassifierKind, ProbeConfig, ProbeDataset, ProbeError};

/// Train and validation representations of one (model, stage, seed) checkpoint.
#[derive(Debug, Clone, Copy)]
pub struct CacheEntry<'a> {
    pub model: &'a str,
    pub stage: &'a str,
    pub seed: u64,
    pub train: &'a [RepresentationRecord],
    pub valid: &'a [RepresentationRecord],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRequest {
    pub dataset: String,
    pub models: Vec<String>,
    pub stages: Vec<String>,
    pub seeds: Vec<u64>,
    pub tasks: Vec<ProbeTaskId>,
    pub classifiers: Vec<ClassifierKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub dataset: String,
    pub task: ProbeTaskId,
    pub model: String,
    pub stage: String,
    pub seed: u64,
    pub classifier: ClassifierKind,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_train: usize,
    pub n_valid: usize,
    pub iterations: usize,
}

/// Mean and population std of F1 over the seeds of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub task: ProbeTaskId,
    pub model: String,
    pub stage: String,
    pub classifier: ClassifierKind,
    pub seeds: usize,
    pub f1_mean: f64,
    pub f1_std: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuiteOutput {
    pub rows: Vec<ProbeRow>,
    pub aggregates: Vec<AggregateRow>,
    /// `model/stage/seed` cells without a cache.
    pub absent: Vec<String>,
    /// Cells whose training or evaluation failed, with the reason.
    pub failures: Vec<String>,
}

enum Cell {
    Row(Box<ProbeRow>),
    Absent(String),
    Failed(String),
}

/// Trains and scores one probe per (task, model, stage, seed, classifier),
/// in request order. The order of `caches` does not matter.
pub fn run_probe_suite(
    req: &SuiteRequest,
    caches: &[CacheEntry],
    space: &LabelSpace,
    train_labels: &[ProbeLabelRecord],
    valid_labels: &[ProbeLabelRecord],
    cfg: &ProbeConfig,
    exec: Execution,
) -> SuiteOutput {
    let mut work = Vec::new();
    for &task in &req.tasks {
        for model in &req.models {
            for stage in &req.stages {
                for &seed in &req.seeds {
                    for &kind in &req.classifiers {
                        work.push((task, model.as_str(), stage.as_str(), seed, kind));
                    }
                }
            }
        }
    }
    let cells = map_slice(exec, &work, |&(task, model, stage, seed, kind)| {
        let Some(cache) = caches.iter().find(|c| c.model == model && c.stage == stage && c.seed == seed) else {
            return Cell::Absent(format!("{model}/{stage}/{seed}"));
        };
        let run = || -> Result<ProbeRow, ProbeError> {
            let ds = ProbeDataset::assemble(task, space, cache.train, train_labels, cache.valid, valid_labels)?;
            let clf = train_classifier(kind, &ds, cfg, seed)?;
            let r = evaluate(&clf, &ds)?;
            Ok(ProbeRow {
                dataset: req.dataset.clone(),
                task,
                model: model.to_string(),
                stage: stage.to_string(),
                seed,
                classifier: kind,
                f1: r.report.f1,
                precision: r.report.precision,
                recall: r.report.recall,
                n_train: ds.n_train(),
                n_valid: ds.n_valid(),
                iterations: clf.diagnostics.iterations,
            })
        };
        match run() {
            Ok(row) => Cell::Row(Box::new(row)),
            Err(e) => Cell::Failed(format!("{task} {model}/{stage}/{seed} {kind}: {e}")),
        }
    });
    let mut out = SuiteOutput::default();
    for c in cells {
        match c {
            Cell::Row(r) => out.rows.push(*r),
            Cell::Absent(a) => {
                if !out.absent.contains(&a) {
                    out.absent.push(a);
                }
            }
            Cell::Failed(f) => out.failures.push(f),
        }
    }
    out.aggregates = aggregate_rows(&out.rows);
    out
}

/// Groups rows by (dataset, task, model, stage, classifier) in first-seen order.
pub fn aggregate_rows(rows: &[ProbeRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<(AggregateRow, Vec<f64>)> = Vec::new();
    for r in rows {
        let key = |a: &AggregateRow| {
            a.dataset == r.dataset
                && a.task == r.task
                && a.model == r.model
                && a.stage == r.stage
                && a.classifier == r.classifier
        };
        match groups.iter_mut().find(|(a, _)| key(a)) {
            Some((_, v)) => v.push(r.f1),
            None => groups.push((
                AggregateRow {
                    dataset: r.dataset.clone(),
                    task: r.task,
                    model: r.model.clone(),
                    stage: r.stage.clone(),
                    classifier: r.classifier,
                    seeds: 0,
                    f1_mean: 0.0,
                    f1_std: 0.0,
                },
                vec![r.f1],
            )),
        }
    }
    groups
        .into_iter()
        .map(|(mut a, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            a.seeds = v.len();
            a.f1_mean = mean;
            a.f1_std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            a
        })
        .collect()
}

fn to_csv<T: Serialize>(items: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for it in items {
        w.serialize(it).expect("row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

/// Results table, one row per probe.
pub fn results_csv(rows: &[ProbeRow]) -> String {
    if rows.is_empty() {
        return "dataset,task,model,stage,seed,classifier,f1,precision,recall,n_train,n_valid,iterations\n".into();
    }
    to_csv(rows)
}

/// Aggregates with the population std column labelled as such.
pub fn summary_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("dataset,task,model,stage,classifier,seeds,f1_mean,f1_std_population\n");
    for a in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{:.6}\n",
            a.dataset, a.task, a.model, a.stage, a.classifier, a.seeds, a.f1_mean, a.f1_std
        ));
    }
    s
}

pub fn read_results_csv(text: &str) -> Result<Vec<ProbeRow>, ProbeError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| ProbeError::Format(format!("results row {}: {e}", i + 1))))
        .collect()
}
