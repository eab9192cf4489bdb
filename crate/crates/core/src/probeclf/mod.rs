//! Shallow probe classifiers over encoder representations.

mod lbfgs;
mod logreg;
mod mlp;
mod suite;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::RepresentationRecord;
use crate::probelab::{Label, LabelSpace, ProbeLabelRecord, ProbeTaskId, TaskKind};
use crate::textmetrics::{micro_f1_sets, micro_f1_single, F1Report};

pub use lbfgs::{minimize, LbfgsReport};
pub use logreg::{train_logreg, LogregConfig};
pub use mlp::{train_mlp, MlpConfig};
pub use suite::{
    aggregate_rows, read_results_csv, results_csv, run_probe_suite, summary_csv, AggregateRow, CacheEntry, ProbeRow,
    SuiteOutput, SuiteRequest,
};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("empty split: {0}")]
    Empty(String),
    #[error("format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Logreg,
    Mlp,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Logreg => "logreg",
            ClassifierKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = ProbeError;
    fn from_str(s: &str) -> Result<Self, ProbeError> {
        match s {
            "logreg" => Ok(ClassifierKind::Logreg),
            "mlp" => Ok(ClassifierKind::Mlp),
            _ => Err(ProbeError::Config(format!("unknown classifier {s:?}"))),
        }
    }
}

/// Features and labels of one task, split into train and validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub task: ProbeTaskId,
    pub set_task: bool,
    pub num_labels: usize,
    pub none_id: Option<u32>,
    pub dim: usize,
    /// Row-major `N × dim`.
    pub train_x: Vec<f64>,
    pub train_y: Vec<Label>,
    pub valid_x: Vec<f64>,
    pub valid_y: Vec<Label>,
}

fn join(
    task: ProbeTaskId,
    dim: usize,
    reprs: &[RepresentationRecord],
    labels: &[ProbeLabelRecord],
    split: &str,
) -> Result<(Vec<f64>, Vec<Label>, HashSet<(String, usize)>), ProbeError> {
    let index: HashMap<(&str, usize), &RepresentationRecord> =
        reprs.iter().map(|r| ((r.dialogue_id.as_str(), r.turn_index), r)).collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut keys = HashSet::new();
    for l in labels.iter().filter(|l| l.task == task) {
        let r = index.get(&(l.dialogue_id.as_str(), l.turn_index)).ok_or_else(|| {
            ProbeError::Integrity(format!("{split}: no representation for {}#{}", l.dialogue_id, l.turn_index))
        })?;
        if r.vector.len() != dim {
            return Err(ProbeError::Integrity(format!("{split}: vector of {} dims, expected {dim}", r.vector.len())));
        }
        if r.vector.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::Integrity(format!(
                "{split}: non-finite feature for {}#{}",
                l.dialogue_id, l.turn_index
            )));
        }
        x.extend(r.vector.iter().map(|&v| v as f64));
        y.push(l.label.clone());
        keys.insert((l.dialogue_id.clone(), l.turn_index));
    }
    Ok((x, y, keys))
}

impl ProbeDataset {
    /// Joins representations with one task's labels on (dialogue id, turn index).
    pub fn assemble(
        task: ProbeTaskId,
        space: &LabelSpace,
        train_reprs: &[RepresentationRecord],
        train_labels: &[ProbeLabelRecord],
        valid_reprs: &[RepresentationRecord],
        valid_labels: &[ProbeLabelRecord],
    ) -> Result<Self, ProbeError> {
        let dim = train_reprs.first().or(valid_reprs.first()).map(|r| r.vector.len()).unwrap_or(0);
        let (train_x, train_y, tk) = join(task, dim, train_reprs, train_labels, "train")?;
        let (valid_x, valid_y, vk) = join(task, dim, valid_reprs, valid_labels, "valid")?;
        if let Some(k) = tk.intersection(&vk).next() {
            return Err(ProbeError::Integrity(format!("{}#{} appears in both splits", k.0, k.1)));
        }
        Ok(ProbeDataset {
            task,
            set_task: task.kind() == TaskKind::LabelSet,
            num_labels: space.num_labels(task),
            none_id: space.none_id(task),
            dim,
            train_x,
            train_y,
            valid_x,
            valid_y,
        })
    }

    /// Builds a dataset directly from feature rows.
    #[allow(clippy::too_many_arguments)]
    pub fn from_rows(
        task: ProbeTaskId,
        num_labels: usize,
        none_id: Option<u32>,
        train: &[Vec<f64>],
        train_y: Vec<Label>,
        valid: &[Vec<f64>],
        valid_y: Vec<Label>,
    ) -> Result<Self, ProbeError> {
        let dim = train.first().or(valid.first()).map(Vec::len).unwrap_or(0);
        if train.iter().chain(valid).any(|r| r.len() != dim) {
            return Err(ProbeError::Integrity("rows of unequal width".into()));
        }
        if train.len() != train_y.len() || valid.len() != valid_y.len() {
            return Err(ProbeError::Integrity("feature and label counts differ".into()));
        }
        Ok(ProbeDataset {
            task,
            set_task: task.kind() == TaskKind::LabelSet,
            num_labels,
            none_id,
            dim,
            train_x: train.concat(),
            train_y,
            valid_x: valid.concat(),
            valid_y,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train_y.len()
    }

    pub fn n_valid(&self) -> usize {
        self.valid_y.len()
    }

    fn check_trainable(&self) -> Result<(), ProbeError> {
        if self.train_y.is_empty() {
            return Err(ProbeError::Empty(format!("{}: no training examples", self.task)));
        }
        if self.dim == 0 {
            return Err(ProbeError::Integrity("zero-dimensional features".into()));
        }
        if self.num_labels == 0 {
            return Err(ProbeError::Config(format!("{}: empty label space", self.task)));
        }
        for y in &self.train_y {
            let bad = match y {
                Label::Single(v) => self.set_task || *v as usize >= self.num_labels,
                Label::Set(s) => !self.set_task || s.iter().any(|&v| v as usize >= self.num_labels),
            };
            if bad {
                return Err(ProbeError::Integrity(format!("{}: label {y:?} outside the label space", self.task)));
            }
        }
        Ok(())
    }

    fn single_targets(&self) -> Vec<u32> {
        self.train_y.iter().map(|l| if let Label::Single(v) = l { *v } else { 0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum BinaryHead {
    Fitted { w: Vec<f64>, b: f64 },
    Constant(bool),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Weights {
    /// `w` is `C × D`.
    Multinomial {
        w: Vec<f64>,
        b: Vec<f64>,
    },
    OneVsRest(Vec<BinaryHead>),
    /// `w1` is `D × H`, `w2` is `H × C`.
    Mlp {
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    },
    Constant(u32),
}

/// Training diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Optimizer iterations (max over one-vs-rest heads; epochs for the MLP).
    pub iterations: usize,
    pub objective: f64,
    /// Final max-abs gradient entry (logreg).
    pub grad_norm: f64,
    /// Heads that saw a single class and predict a constant.
    pub degenerate_heads: usize,
    /// Objective trace per optimized head.
    pub history: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeClassifier {
    pub kind: ClassifierKind,
    pub task: ProbeTaskId,
    pub dim: usize,
    pub num_labels: usize,
    pub set_task: bool,
    pub none_id: Option<u32>,
    pub diagnostics: Diagnostics,
    weights: Weights,
}

impl ProbeClassifier {
    pub(crate) fn new(kind: ClassifierKind, ds: &ProbeDataset, weights: Weights, diagnostics: Diagnostics) -> Self {
        ProbeClassifier {
            kind,
            task: ds.task,
            dim: ds.dim,
            num_labels: ds.num_labels,
            set_task: ds.set_task,
            none_id: ds.none_id,
            diagnostics,
            weights,
        }
    }

    /// True when every prediction is a constant.
    pub fn is_degenerate(&self) -> bool {
        match &self.weights {
            Weights::Constant(_) => true,
            Weights::OneVsRest(h) => h.iter().all(|h| matches!(h, BinaryHead::Constant(_))),
            _ => false,
        }
    }

    /// Class scores (softmax or per-label sigmoid) for row-major features.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ProbeError> {
        if x.len() % self.dim.max(1) != 0 {
            return Err(ProbeError::Integrity(format!("feature buffer is not a multiple of {} dims", self.dim)));
        }
        let n = x.len() / self.dim.max(1);
        let c = self.num_labels;
        let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
        let softmax = |row: &mut [f64]| {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        };
        let mut out = vec![vec![0.0; c]; n];
        match &self.weights {
            Weights::Constant(k) => out.iter_mut().for_each(|r| r[*k as usize] = 1.0),
            Weights::Multinomial { w, b } => {
                let mut z = vec![0.0; n * c];
                logreg::affine(x, n, self.dim, w, b, &mut z);
                for (o, r) in out.iter_mut().zip(z.chunks_exact_mut(c)) {
                    softmax(r);
                    o.copy_from_slice(r);
                }
            }
            Weights::OneVsRest(heads) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &x[i * self.dim..(i + 1) * self.dim];
                    for (l, h) in heads.iter().enumerate() {
                        o[l] = match h {
                            BinaryHead::Constant(v) => f64::from(u8::from(*v)),
                            BinaryHead::Fitted { w, b } => {
                                sigmoid(row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b)
                            }
                        };
                    }
                }
            }
            Weights::Mlp { w1, b1, w2, b2 } => {
                let h = b1.len();
                let mut hid = vec![0.0; n * h];
                for r in hid.chunks_exact_mut(h) {
                    r.copy_from_slice(b1);
                }
                crate::gradkernel::Scalar::gemm(n, self.dim, h, x, false, w1, false, 1.0, &mut hid);
                hid.iter_mut().for_each(|v| *v = v.max(0.0));
                let mut z = vec![0.0; n * c];
                for r in z.chunks_exact_mut(c) {
                    r.copy_from_slice(b2);
                }
                crate::gradkernel::Scalar::gemm(n, h, c, &hid, false, w2, false, 1.0, &mut z);
                for (o, r) in out.iter_mut().zip(z.chunks_exact_mut(c)) {
                    if self.set_task {
                        r.iter_mut().for_each(|v| *v = sigmoid(*v));
                    } else {
                        softmax(r);
                    }
                    o.copy_from_slice(r);
                }
            }
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<Label>, ProbeError> {
        Ok(self
            .scores(x)?
            .into_iter()
            .map(|s| {
                if self.set_task {
                    let mut set: Vec<u32> = (0..s.len() as u32).filter(|&l| s[l as usize] >= 0.5).collect();
                    if set.is_empty() {
                        set.extend(self.none_id);
                    }
                    Label::Set(set)
                } else {
                    let mut best = 0;
                    for (i, &v) in s.iter().enumerate() {
                        if v > s[best] {
                            best = i;
                        }
                    }
                    Label::Single(best as u32)
                }
            })
            .collect())
    }
}

/// Micro-averaged scores plus per-class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub report: F1Report,
    pub n_valid: usize,
    /// `(label, tp, fp, fn)` for every label id.
    pub per_class: Vec<(u32, usize, usize, usize)>,
}

fn label_set(l: &Label) -> BTreeSet<u32> {
    match l {
        Label::Single(v) => BTreeSet::from([*v]),
        Label::Set(s) => s.iter().copied().collect(),
    }
}

/// Scores `clf` on the given rows.
pub fn evaluate_on(clf: &ProbeClassifier, x: &[f64], y: &[Label]) -> Result<ProbeResult, ProbeError> {
    if y.is_empty() {
        return Err(ProbeError::Empty(format!("{}: no evaluation examples", clf.task)));
    }
    if x.len() != y.len() * clf.dim {
        return Err(ProbeError::Integrity(format!(
            "{} features for {} examples of dimension {}",
            x.len(),
            y.len(),
            clf.dim
        )));
    }
    let pred = clf.predict(x)?;
    let report = if clf.set_task {
        let p: Vec<BTreeSet<u32>> = pred.iter().map(label_set).collect();
        let g: Vec<BTreeSet<u32>> = y.iter().map(label_set).collect();
        micro_f1_sets(&p, &g)
    } else {
        micro_f1_single(&pred, y)
    }
    .map_err(|e| ProbeError::Integrity(e.to_string()))?;
    let mut per_class: Vec<(u32, usize, usize, usize)> = (0..clf.num_labels as u32).map(|l| (l, 0, 0, 0)).collect();
    for (p, g) in pred.iter().zip(y) {
        let (p, g) = (label_set(p), label_set(g));
        for &l in p.union(&g) {
            if let Some(e) = per_class.get_mut(l as usize) {
                match (p.contains(&l), g.contains(&l)) {
                    (true, true) => e.1 += 1,
                    (true, false) => e.2 += 1,
                    _ => e.3 += 1,
                }
            }
        }
    }
    Ok(ProbeResult { report, n_valid: y.len(), per_class })
}

/// Scores `clf` on the validation split of `ds`.
pub fn evaluate(clf: &ProbeClassifier, ds: &ProbeDataset) -> Result<ProbeResult, ProbeError> {
    if clf.dim != ds.dim {
        return Err(ProbeError::Integrity(format!("classifier expects {} dims, dataset has {}", clf.dim, ds.dim)));
    }
    evaluate_on(clf, &ds.valid_x, &ds.valid_y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ProbeConfig {
    pub logreg: LogregConfig,
    pub mlp: MlpConfig,
}

/// Trains the requested classifier kind; `seed` only affects the MLP.
pub fn train_classifier(
    kind: ClassifierKind,
    ds: &ProbeDataset,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeClassifier, ProbeError> {
    match kind {
        ClassifierKind::Logreg => train_logreg(ds, &cfg.logreg),
        ClassifierKind::Mlp => train_mlp(ds, &MlpConfig { seed, ..cfg.mlp }),
    }
}
