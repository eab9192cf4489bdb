use std::collections::BTreeMap;

use crate::probeclf::{ClassifierKind, ProbeRow};
use crate::probelab::ProbeTaskId;

/// Seed-mean F1 per probed epoch for one (task, model, classifier).
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionSeries {
    pub task: ProbeTaskId,
    pub model: String,
    pub classifier: ClassifierKind,
    /// `(epoch, f1)` in ascending epoch order.
    pub points: Vec<(usize, f64)>,
}

impl EvolutionSeries {
    /// Last point strictly above the first.
    pub fn improved(&self) -> bool {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) if self.points.len() > 1 => b.1 > a.1,
            _ => false,
        }
    }
}

/// Series from rows whose stage is `epoch-N`; other stages are ignored.
pub fn evolution_curves(rows: &[ProbeRow]) -> Vec<EvolutionSeries> {
    let mut acc: BTreeMap<(ProbeTaskId, String, ClassifierKind), BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        let Some(epoch) = r.stage.strip_prefix("epoch-").and_then(|n| n.parse::<usize>().ok()) else {
            continue;
        };
        let e = acc.entry((r.task, r.model.clone(), r.classifier)).or_default().entry(epoch).or_default();
        e.0 += r.f1;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|((task, model, classifier), pts)| EvolutionSeries {
            task,
            model,
            classifier,
            points: pts.into_iter().map(|(e, (s, n))| (e, s / n as f64)).collect(),
        })
        .collect()
}

pub fn evolution_csv(series: &[EvolutionSeries]) -> String {
    let mut s = String::from("task,model,classifier,epoch,f1\n");
    for c in series {
        for (e, f) in &c.points {
            s.push_str(&format!("{},{},{},{},{:.6}\n", c.task, c.model, c.classifier, e, f));
        }
    }
    s
}
