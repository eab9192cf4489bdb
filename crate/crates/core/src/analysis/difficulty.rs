use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::probeclf::ProbeRow;
use crate::probelab::ProbeTaskId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Easy,
    Medium,
    Hard,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Easy, Bucket::Medium, Bucket::Hard];

    /// Thresholds on an average F1 in `[0, 1]`; exactly 0.25 counts as hard.
    pub fn of(avg: f64) -> Bucket {
        if avg > 0.50 {
            Bucket::Easy
        } else if avg > 0.25 {
            Bucket::Medium
        } else {
            Bucket::Hard
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Easy => "easy",
            Bucket::Medium => "medium",
            Bucket::Hard => "hard",
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBucket {
    pub task: ProbeTaskId,
    pub avg_untrained: f64,
    pub bucket: Bucket,
}

/// Mean and sample std over a bucket's tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub mean: f64,
    pub std: f64,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub model: String,
    pub easy: Option<BucketScore>,
    pub medium: Option<BucketScore>,
    pub hard: Option<BucketScore>,
}

impl ModelScores {
    pub fn get(&self, b: Bucket) -> Option<BucketScore> {
        match b {
            Bucket::Easy => self.easy,
            Bucket::Medium => self.medium,
            Bucket::Hard => self.hard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyTable {
    pub stage: String,
    pub tasks: Vec<TaskBucket>,
    pub models: Vec<ModelScores>,
    pub warnings: Vec<String>,
}

/// The four recurrent architectures averaged for bucketing.
pub const SEQ2SEQ_MODELS: [&str; 4] = ["lstm", "lstm_attn", "bilstm_attn", "hred"];

/// Seed-mean F1 per (model, stage, task).
fn cell_means(rows: &[ProbeRow]) -> BTreeMap<(String, String, ProbeTaskId), f64> {
    let mut acc: BTreeMap<(String, String, ProbeTaskId), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.model.clone(), r.stage.clone(), r.task)).or_default();
        e.0 += r.f1;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn mean_sample_std(v: &[f64]) -> BucketScore {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    BucketScore { mean, std, tasks: v.len() }
}

/// Buckets tasks by the average Untrained F1 of `seq2seq` models, then scores
/// every model per bucket at `stage`. Rows should come from one dataset and
/// one classifier kind.
pub fn bucket_difficulty(rows: &[ProbeRow], seq2seq: &[&str], stage: &str) -> DifficultyTable {
    let means = cell_means(rows);
    let mut tasks: Vec<ProbeTaskId> = rows.iter().map(|r| r.task).collect();
    tasks.sort();
    tasks.dedup();
    let mut models: Vec<String> = Vec::new();
    for r in rows {
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
    }
    let mut warnings = Vec::new();
    let mut buckets = Vec::new();
    for &task in &tasks {
        let vals: Vec<Option<f64>> =
            seq2seq.iter().map(|m| means.get(&(m.to_string(), "untrained".to_string(), task)).copied()).collect();
        if let Some(i) = vals.iter().position(Option::is_none) {
            warnings.push(format!("{task}: no untrained result for {}; task excluded", seq2seq[i]));
            continue;
        }
        let avg = vals.iter().flatten().sum::<f64>() / vals.len() as f64;
        buckets.push(TaskBucket { task, avg_untrained: avg, bucket: Bucket::of(avg) });
    }
    let scores = models
        .into_iter()
        .map(|model| {
            let score = |b: Bucket| {
                let v: Vec<f64> = buckets
                    .iter()
                    .filter(|t| t.bucket == b)
                    .filter_map(|t| means.get(&(model.clone(), stage.to_string(), t.task)).copied())
                    .collect();
                (!v.is_empty()).then(|| mean_sample_std(&v))
            };
            ModelScores { easy: score(Bucket::Easy), medium: score(Bucket::Medium), hard: score(Bucket::Hard), model }
        })
        .collect();
    DifficultyTable { stage: stage.to_string(), tasks: buckets, models: scores, warnings }
}

impl DifficultyTable {
    /// Per-model bucket scores ×100 as "mean ± std" cells.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# stage={} std=sample-across-tasks\nmodel,easy,medium,hard\n", self.stage);
        for m in &self.models {
            let cell = |b: Bucket| {
                m.get(b).map(|c| format!("{:.1} ± {:.1}", 100.0 * c.mean, 100.0 * c.std)).unwrap_or_else(|| "-".into())
            };
            s.push_str(&format!(
                "{},{},{},{}\n",
                m.model,
                cell(Bucket::Easy),
                cell(Bucket::Medium),
                cell(Bucket::Hard)
            ));
        }
        s
    }

    pub fn tasks_csv(&self) -> String {
        let mut s = String::from("task,avg_untrained,bucket\n");
        for t in &self.tasks {
            s.push_str(&format!("{},{:.2},{}\n", t.task, 100.0 * t.avg_untrained, t.bucket));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probeclf::ClassifierKind;

    pub(crate) fn row(model: &str, stage: &str, task: ProbeTaskId, f1: f64) -> ProbeRow {
        ProbeRow {
            dataset: "goal-oriented".into(),
            task,
            model: model.into(),
            stage: stage.into(),
            seed: 0,
            classifier: ClassifierKind::Logreg,
            f1,
            precision: f1,
            recall: f1,
            n_train: 1,
            n_valid: 1,
            iterations: 1,
        }
    }

    #[test]
    fn thresholds() {
        assert_eq!(Bucket::of(0.5000001), Bucket::Easy);
        assert_eq!(Bucket::of(0.5), Bucket::Medium);
        assert_eq!(Bucket::of(0.2500001), Bucket::Medium);
        assert_eq!(Bucket::of(0.25), Bucket::Hard);
        assert_eq!(Bucket::of(0.0), Bucket::Hard);
    }

    #[test]
    fn buckets_ignore_reporting_stage() {
        let mut rows = Vec::new();
        for (i, m) in SEQ2SEQ_MODELS.iter().enumerate() {
            rows.push(row(m, "untrained", ProbeTaskId::IsMultiTopic, 0.85));
            rows.push(row(m, "untrained", ProbeTaskId::AllValues, 0.03));
            rows.push(row(m, "bestbleu", ProbeTaskId::IsMultiTopic, 0.8 + i as f64 * 0.01));
            rows.push(row(m, "bestbleu", ProbeTaskId::AllValues, 0.1));
        }
        let t = bucket_difficulty(&rows, &SEQ2SEQ_MODELS, "bestbleu");
        let changed: Vec<ProbeRow> = rows
            .iter()
            .map(|r| if r.stage == "bestbleu" { ProbeRow { f1: 0.99, ..r.clone() } } else { r.clone() })
            .collect();
        assert_eq!(bucket_difficulty(&changed, &SEQ2SEQ_MODELS, "bestbleu").tasks, t.tasks);
        let bucket = |task| t.tasks.iter().find(|b| b.task == task).unwrap().bucket;
        assert_eq!((bucket(ProbeTaskId::AllValues), bucket(ProbeTaskId::IsMultiTopic)), (Bucket::Hard, Bucket::Easy));
        let lstm = &t.models[0];
        assert_eq!(lstm.easy.unwrap().tasks, 1);
        assert!(lstm.medium.is_none());
        assert!(t.to_csv().contains("lstm,80.0 ± 0.0,-,10.0 ± 0.0"));
    }

    #[test]
    fn missing_untrained_cell_excludes_task() {
        let mut rows: Vec<ProbeRow> =
            SEQ2SEQ_MODELS.iter().map(|m| row(m, "untrained", ProbeTaskId::RecentTopic, 0.2)).collect();
        rows.push(row("lstm", "untrained", ProbeTaskId::AllTopics, 0.4));
        let t = bucket_difficulty(&rows, &SEQ2SEQ_MODELS, "bestbleu");
        assert_eq!(t.tasks.len(), 1);
        assert_eq!(t.warnings.len(), 1);
    }
}
