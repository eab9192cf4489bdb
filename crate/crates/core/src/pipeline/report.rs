use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::probeclf::{aggregate_rows, read_results_csv, AggregateRow};
use crate::probelab::ProbeTaskId;

use super::commands::Context;
use super::store::StageDir;
use super::PipelineError;

/// Validation BLEU-2 of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuRow {
    pub model: String,
    pub seed: u64,
    pub untrained: f64,
    pub best: f64,
    pub best_epoch: usize,
    pub last_epoch: usize,
    pub diverged: bool,
}

impl BleuRow {
    pub fn to_csv(rows: &[BleuRow]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).expect("row serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is UTF-8")
    }

    pub fn from_csv(text: &str) -> Result<Vec<BleuRow>, PipelineError> {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| PipelineError::Integrity(format!("ckpts/bleu.csv: {e}")))
    }
}

fn md_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn md_header(cells: &[String]) -> String {
    md_row(cells) + &md_row(&vec!["---".to_string(); cells.len()])
}

/// Markdown table from a comma-separated file, skipping `#` lines.
fn csv_to_md(text: &str) -> String {
    let mut out = String::new();
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    if let Some(h) = lines.next() {
        out.push_str(&md_header(&h.split(',').map(str::to_string).collect::<Vec<_>>()));
    }
    for l in lines {
        out.push_str(&md_row(&l.split(',').map(str::to_string).collect::<Vec<_>>()));
    }
    out
}

fn probe_table(aggs: &[&AggregateRow], stages: &[String], models: &[String]) -> String {
    let mut tasks: Vec<ProbeTaskId> = aggs.iter().map(|a| a.task).collect();
    tasks.sort();
    tasks.dedup();
    let cells: BTreeMap<(&str, &str, ProbeTaskId), &AggregateRow> =
        aggs.iter().map(|a| ((a.model.as_str(), a.stage.as_str(), a.task), *a)).collect();
    let mut head = vec!["model".to_string(), "stage".to_string()];
    head.extend(tasks.iter().map(|t| t.to_string()));
    let mut out = md_header(&head);
    for m in models {
        for s in stages {
            let mut row = vec![m.clone(), s.clone()];
            let mut any = false;
            for &t in &tasks {
                row.push(match cells.get(&(m.as_str(), s.as_str(), t)) {
                    Some(a) => {
                        any = true;
                        format!("{:.2} ± {:.2}", 100.0 * a.f1_mean, 100.0 * a.f1_std)
                    }
                    None => "-".into(),
                });
            }
            if any {
                out.push_str(&md_row(&row));
            }
        }
    }
    out
}

pub(crate) fn build_report(ctx: &Context) -> Result<String, PipelineError> {
    let cfg = &ctx.cfg;
    let bleu = BleuRow::from_csv(&ctx.run.read_text(StageDir::Ckpts, "bleu.csv")?)?;
    let rows = read_results_csv(&ctx.run.read_text(StageDir::Probes, "results.csv")?)?;
    let aggs = aggregate_rows(&rows);
    let models: Vec<String> = cfg.models.iter().map(|k| k.name().to_string()).collect();

    let mut s = String::new();
    writeln!(s, "# Probe report\n").unwrap();
    writeln!(s, "- config hash: `{}`", ctx.run.hash).unwrap();
    writeln!(s, "- dataset: {}", cfg.dataset.name()).unwrap();
    writeln!(s, "- models: {}", models.join(", ")).unwrap();
    writeln!(s, "- seeds: {}", cfg.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")).unwrap();
    writeln!(s, "- epochs: {}, lr: {}, window: {}", cfg.epochs, cfg.lr, cfg.window).unwrap();
    writeln!(s, "- F1 values are micro-F1 x100, mean ± population std over seeds\n").unwrap();

    writeln!(s, "## Validation BLEU-2\n").unwrap();
    let head: Vec<String> =
        ["model", "seed", "untrained", "best", "best epoch", "last epoch", "diverged"].map(String::from).to_vec();
    s.push_str(&md_header(&head));
    for b in &bleu {
        s.push_str(&md_row(&[
            b.model.clone(),
            b.seed.to_string(),
            format!("{:.2}", b.untrained),
            format!("{:.2}", b.best),
            b.best_epoch.to_string(),
            b.last_epoch.to_string(),
            b.diverged.to_string(),
        ]));
    }

    for &clf in &cfg.classifiers {
        let sub: Vec<&AggregateRow> = aggs.iter().filter(|a| a.classifier == clf).collect();
        writeln!(s, "\n## Probe F1 ({clf})\n").unwrap();
        s.push_str(&probe_table(&sub, &cfg.probe_stages, &models));
        if cfg.probe_epochs {
            let epochs: Vec<String> = (0..=cfg.epochs).map(|e| format!("epoch-{e}")).collect();
            writeln!(s, "\n### Per epoch ({clf})\n").unwrap();
            s.push_str(&probe_table(&sub, &epochs, &models));
        }
        writeln!(s, "\n## Task difficulty ({clf}, stage {})\n", cfg.report_stage).unwrap();
        s.push_str(&csv_to_md(&ctx.run.read_text(StageDir::Analysis, &format!("difficulty_{clf}.csv"))?));
        writeln!(s, "\nBuckets by average untrained F1 of the recurrent models:\n").unwrap();
        s.push_str(&csv_to_md(&ctx.run.read_text(StageDir::Analysis, &format!("difficulty_tasks_{clf}.csv"))?));
    }

    let ties = ctx.run.require(StageDir::Analysis)?.files.contains_key("ties_summary.json");
    if ties {
        writeln!(
            s,
            "\n## Tie fractions\n\n```json\n{}```",
            ctx.run.read_text(StageDir::Analysis, "ties_summary.json")?
        )
        .unwrap();
    }
    let warnings = ctx.run.read_text(StageDir::Analysis, "warnings.txt")?;
    if !warnings.is_empty() {
        writeln!(s, "\n## Warnings\n").unwrap();
        for l in warnings.lines() {
            writeln!(s, "- {l}").unwrap();
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bleu_csv_round_trip() {
        let rows = vec![BleuRow {
            model: "lstm".into(),
            seed: 1,
            untrained: 0.5,
            best: 3.25,
            best_epoch: 2,
            last_epoch: 3,
            diverged: false,
        }];
        let text = BleuRow::to_csv(&rows);
        assert!(text.starts_with("model,seed,untrained,best,best_epoch,last_epoch,diverged\n"));
        assert_eq!(BleuRow::from_csv(&text).unwrap(), rows);
    }

    #[test]
    fn csv_tables_become_markdown() {
        let md = csv_to_md("# stage=x\nmodel,easy\nlstm,80.0 ± 1.0\n");
        assert_eq!(md, "| model | easy |\n| --- | --- |\n| lstm | 80.0 ± 1.0 |\n");
    }
}
