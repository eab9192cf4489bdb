use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::space::{LabelSpace, MapOutcome};
use super::{Label, ProbeLabelRecord, ProbeTaskId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAudit {
    pub task: ProbeTaskId,
    pub records: usize,
    /// Label name and occurrence count, in label-space order; unused labels omitted.
    pub counts: Vec<(String, usize)>,
    pub entropy_bits: f64,
    pub majority_share: f64,
    /// Labels mapped to OTHER.
    pub mapped_to_other: usize,
    /// Set members dropped as unseen.
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub tasks: Vec<TaskAudit>,
}

/// Shannon entropy in bits and the largest share of a frequency table.
pub fn entropy_and_majority(counts: &[usize]) -> (f64, f64) {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return (0.0, 0.0);
    }
    let t = total as f64;
    let h = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 / t).map(|p| -p * p.log2()).sum::<f64>();
    let max = counts.iter().copied().max().unwrap_or(0) as f64 / t;
    (h.max(0.0), max)
}

/// Per-task label histogram. `outcomes` is parallel to `records` (or empty).
pub fn audit_distribution(records: &[ProbeLabelRecord], outcomes: &[MapOutcome], space: &LabelSpace) -> AuditReport {
    struct Acc {
        records: usize,
        counts: BTreeMap<u32, usize>,
        other: usize,
        dropped: usize,
    }
    let mut per: BTreeMap<ProbeTaskId, Acc> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let a = per.entry(r.task).or_insert(Acc { records: 0, counts: BTreeMap::new(), other: 0, dropped: 0 });
        a.records += 1;
        match &r.label {
            Label::Single(l) => *a.counts.entry(*l).or_insert(0) += 1,
            Label::Set(ls) => ls.iter().for_each(|l| *a.counts.entry(*l).or_insert(0) += 1),
        }
        if let Some(o) = outcomes.get(i) {
            a.other += o.other;
            a.dropped += o.dropped;
        }
    }
    let tasks = per
        .into_iter()
        .map(|(task, a)| {
            let raw: Vec<usize> = a.counts.values().copied().collect();
            let (entropy_bits, majority_share) = entropy_and_majority(&raw);
            let counts = a
                .counts
                .iter()
                .map(|(&id, &c)| (space.name(task, id).map(str::to_string).unwrap_or_else(|| id.to_string()), c))
                .collect();
            TaskAudit {
                task,
                records: a.records,
                counts,
                entropy_bits,
                majority_share,
                mapped_to_other: a.other,
                dropped: a.dropped,
            }
        })
        .collect();
    AuditReport { tasks }
}

impl AuditReport {
    /// `task,label,count,share` rows, then a summary block.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        let io = "writing to memory";
        w.write_record(["task", "label", "count", "share"]).expect(io);
        for t in &self.tasks {
            let total: usize = t.counts.iter().map(|(_, c)| c).sum();
            for (label, c) in &t.counts {
                let share = *c as f64 / total.max(1) as f64;
                w.write_record([t.task.name(), label, &c.to_string(), &format!("{share:.6}")]).expect(io);
            }
        }
        w.write_record([""]).expect(io);
        w.write_record(["task", "records", "entropy_bits", "majority_share", "mapped_to_other", "dropped"]).expect(io);
        for t in &self.tasks {
            w.write_record([
                t.task.name().to_string(),
                t.records.to_string(),
                format!("{:.6}", t.entropy_bits),
                format!("{:.6}", t.majority_share),
                t.mapped_to_other.to_string(),
                t.dropped.to_string(),
            ])
            .expect(io);
        }
        String::from_utf8(w.into_inner().expect(io)).expect("csv output is UTF-8")
    }
}
