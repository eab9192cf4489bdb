use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::analysis::{
    bootstrap_ties, bucket_difficulty, cache_rows, evolution_csv, evolution_curves, pca2, pca_csv, read_annotations,
    AnalysisError, BootstrapConfig, SEQ2SEQ_MODELS,
};
use crate::corpus::{
    build_vocabulary, make_contexts, parse_multiwoz, parse_personachat, read_ndf, write_ndf, NormalizedDialogue,
    Vocabulary,
};
use crate::models::{
    export_representations, read_checkpoint, read_representations, train, write_checkpoint, write_representations,
    Checkpoint, EncoderInput, EpochLog, ModelConfig, ModelError, Pair, RepresentationRecord, TrainConfig,
};
use crate::parallel::{map_slice, Execution};
use crate::probeclf::{read_results_csv, results_csv, run_probe_suite, summary_csv, CacheEntry, SuiteRequest};
use crate::probelab::{
    derive_labels, derive_raw, read_jsonl, write_jsonl, Label, LabelSpace, ProbeLabelRecord, RawRecord, RepeatHorizon,
};

use super::config::{DatasetSource, RunConfig, Scale};
use super::report::{build_report, BleuRow};
use super::store::{write_atomic, Manifest, RunDir, StageDir};
use super::synthetic::{check_agreement, generate_synthetic};
use super::PipelineError;

/// A resolved configuration bound to its run directory.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub run: RunDir,
    pub exec: Execution,
}

impl Context {
    pub fn new(cfg: RunConfig, exec: Execution) -> Self {
        let run = RunDir::new(&cfg);
        Context { cfg, run, exec }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Derive,
    Train,
    Encode,
    Probe,
    Analyze,
    Report,
    All,
}

impl Command {
    pub fn run(self, ctx: &Context) -> Result<Vec<Manifest>, PipelineError> {
        let one = |m: Result<Manifest, PipelineError>| m.map(|m| vec![m]);
        match self {
            Command::Ingest => one(cmd_ingest(ctx)),
            Command::Derive => one(cmd_derive(ctx)),
            Command::Train => one(cmd_train(ctx)),
            Command::Encode => one(cmd_encode(ctx)),
            Command::Probe => one(cmd_probe(ctx)),
            Command::Analyze => one(cmd_analyze(ctx)),
            Command::Report => one(cmd_report(ctx)),
            Command::All => cmd_all(ctx),
        }
    }
}

fn json_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

fn split_tail(
    mut dialogues: Vec<NormalizedDialogue>,
    fraction: f64,
) -> (Vec<NormalizedDialogue>, Vec<NormalizedDialogue>) {
    let n = dialogues.len();
    let n_valid = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let valid = dialogues.split_off(n - n_valid);
    (dialogues, valid)
}

/// Parses or generates the corpus, splits it and builds the vocabulary.
pub fn cmd_ingest(ctx: &Context) -> Result<Manifest, PipelineError> {
    let cfg = &ctx.cfg;
    let mut warnings = Vec::new();
    let (train, valid, truth) = match cfg.dataset {
        DatasetSource::Synthetic => {
            let c = generate_synthetic(&cfg.synthetic, ctx.exec)?;
            let (t, v) = split_tail(c.dialogues, cfg.valid_fraction);
            (t, v, Some(c.truth))
        }
        source => {
            let parse = |p: &Path| -> Result<Vec<NormalizedDialogue>, PipelineError> {
                let raw = fs::read(p).map_err(PipelineError::io(p))?;
                let out = match source {
                    DatasetSource::Multiwoz => parse_multiwoz(&raw)?,
                    _ => parse_personachat(&raw)?,
                };
                Ok(out.dialogues)
            };
            let train_path =
                cfg.train_path.as_deref().ok_or_else(|| PipelineError::Config("train_path is not set".into()))?;
            let train = parse(train_path)?;
            match &cfg.valid_path {
                Some(p) => (train, parse(p)?, None),
                None => {
                    let (t, v) = split_tail(train, cfg.valid_fraction);
                    (t, v, None)
                }
            }
        }
    };
    if train.is_empty() {
        return Err(PipelineError::Config("the corpus has no training dialogues".into()));
    }
    for d in train.iter().chain(&valid) {
        if let Err(e) = d.validate() {
            warnings.push(e.to_string());
        }
    }
    let vocab = build_vocabulary(
        train.iter().flat_map(|d| &d.turns).flat_map(|t| &t.tokens).map(String::as_str),
        cfg.vocab_cap,
    )?;

    let mut w = ctx.run.begin(StageDir::Corpus)?;
    w.write("train.ndf", write_ndf(&train).as_bytes())?;
    w.write("valid.ndf", write_ndf(&valid).as_bytes())?;
    w.write("vocab.json", json_pretty(&vocab).as_bytes())?;
    if let Some(truth) = &truth {
        w.write("truth.jsonl", write_jsonl(truth).as_bytes())?;
    }
    let stats = json!({
        "dataset": cfg.dataset.name(),
        "train_dialogues": train.len(),
        "valid_dialogues": valid.len(),
        "vocab_size": vocab.len(),
        "warnings": warnings,
    });
    w.write("stats.json", json_pretty(&stats).as_bytes())?;
    w.finish()
}

struct Corpus {
    train: Vec<NormalizedDialogue>,
    valid: Vec<NormalizedDialogue>,
    vocab: Vocabulary,
}

fn load_corpus(ctx: &Context) -> Result<Corpus, PipelineError> {
    let ndf = |rel: &str| -> Result<Vec<NormalizedDialogue>, PipelineError> {
        Ok(read_ndf(ctx.run.read(StageDir::Corpus, rel)?.as_slice())?)
    };
    let vocab = serde_json::from_slice(&ctx.run.read(StageDir::Corpus, "vocab.json")?)
        .map_err(|e| PipelineError::Integrity(format!("corpus/vocab.json: {e}")))?;
    Ok(Corpus { train: ndf("train.ndf")?, valid: ndf("valid.ndf")?, vocab })
}

/// Derives probe labels for both splits and, for synthetic corpora, checks
/// them against the generator's labels.
pub fn cmd_derive(ctx: &Context) -> Result<Manifest, PipelineError> {
    let corpus_manifest = ctx.run.require(StageDir::Corpus)?;
    let c = load_corpus(ctx)?;
    let label_cfg = ctx.cfg.label_config();
    let out = derive_labels(&c.train, &c.valid, ctx.cfg.dataset.kind(), &label_cfg, ctx.exec)?;

    let mut w = ctx.run.begin(StageDir::Labels)?;
    w.write("train.jsonl", write_jsonl(&out.train).as_bytes())?;
    w.write("valid.jsonl", write_jsonl(&out.valid).as_bytes())?;
    w.write("space.json", json_pretty(&out.space).as_bytes())?;
    w.write("setup.json", json_pretty(&out.setup).as_bytes())?;
    w.write("audit_train.csv", out.train_audit.to_csv().as_bytes())?;
    w.write("audit_valid.csv", out.valid_audit.to_csv().as_bytes())?;
    // emitted labels assume repeats may come from any earlier user turn
    if corpus_manifest.files.contains_key("truth.jsonl") && label_cfg.repeat_horizon == RepeatHorizon::AnyEarlier {
        let truth: Vec<RawRecord> = read_jsonl(ctx.run.read(StageDir::Corpus, "truth.jsonl")?.as_slice())?;
        let mut derived = derive_raw(&out.setup, &c.train, ctx.exec);
        derived.extend(derive_raw(&out.setup, &c.valid, ctx.exec));
        let a = check_agreement(&truth, &derived);
        w.write("agreement.json", json_pretty(&a).as_bytes())?;
        if !a.is_exact() {
            return Err(PipelineError::Integrity(format!(
                "derived labels disagree with generated labels on {} of {} records; first: {}",
                a.compared - a.matched,
                a.compared,
                a.mismatches.first().map(String::as_str).unwrap_or("")
            )));
        }
    }
    w.finish()
}

/// `(dialogue_id, turn_index, encoder input, target ids)` for every context.
fn contexts(
    dialogues: &[NormalizedDialogue],
    vocab: &Vocabulary,
    window: usize,
) -> Vec<(String, usize, EncoderInput, Vec<usize>)> {
    dialogues
        .iter()
        .flat_map(|d| make_contexts(d, window))
        .map(|(ctx, target)| {
            let input = EncoderInput::new(vocab.encode(&ctx.tokens), ctx.segments);
            (ctx.dialogue_id, ctx.turn_index, input, vocab.encode(&target))
        })
        .collect()
}

fn pairs(items: &[(String, usize, EncoderInput, Vec<usize>)], max_len: usize) -> Vec<Pair> {
    items
        .iter()
        .map(|(_, _, input, target)| Pair {
            input: input.clone(),
            target: target[..target.len().min(max_len)].to_vec(),
        })
        .collect()
}

fn model_config(cfg: &RunConfig, kind: crate::models::ModelKind, vocab: usize, seed: u64) -> ModelConfig {
    let base = match cfg.scale {
        Scale::Desk => ModelConfig::desk_scale(kind, vocab),
        Scale::Paper => ModelConfig::paper_scale(kind, vocab),
    };
    ModelConfig { window: cfg.window, max_decode_len: cfg.max_target_len, seed, ..base }
}

fn run_prefix(model: &str, seed: u64) -> String {
    format!("{model}/seed-{seed}")
}

/// Trains every (model, seed) pair, writing each checkpoint as it is made.
pub fn cmd_train(ctx: &Context) -> Result<Manifest, PipelineError> {
    let cfg = &ctx.cfg;
    let c = load_corpus(ctx)?;
    let train_pairs = pairs(&contexts(&c.train, &c.vocab, cfg.window), cfg.max_target_len);
    let valid_pairs = pairs(&contexts(&c.valid, &c.vocab, cfg.window), cfg.max_target_len);
    let jobs: Vec<(crate::models::ModelKind, u64)> =
        cfg.models.iter().flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s))).collect();

    let mut w = ctx.run.begin(StageDir::Ckpts)?;
    let dir = w.dir.clone();
    let results =
        map_slice(ctx.exec, &jobs, |&(kind, seed)| -> Result<(Vec<(String, String)>, BleuRow), PipelineError> {
            let prefix = run_prefix(kind.name(), seed);
            let tcfg = TrainConfig {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                lr: cfg.lr,
                valid_limit: (cfg.bleu_valid_limit > 0).then_some(cfg.bleu_valid_limit),
                exec: ctx.exec,
                ..TrainConfig::default()
            };
            let mut files = Vec::new();
            let mut sink = |ck: &Checkpoint| -> Result<(), ModelError> {
                let rel = format!("{prefix}/{}.ckpt", ck.stage.name());
                let digest = write_atomic(&dir.join(&rel), &write_checkpoint(ck))
                    .map_err(|e| ModelError::Io(std::io::Error::other(e.to_string())))?;
                files.push((rel, digest));
                Ok(())
            };
            let out =
                train(model_config(cfg, kind, c.vocab.len(), seed), &train_pairs, &valid_pairs, &tcfg, &mut sink)?;
            let rel = format!("{prefix}/log.csv");
            files.push((rel.clone(), write_atomic(&dir.join(&rel), EpochLog::to_csv(&out.logs).as_bytes())?));
            if let Some(d) = &out.divergence {
                let rel = format!("{prefix}/divergence.json");
                files.push((rel.clone(), write_atomic(&dir.join(&rel), json_pretty(d).as_bytes())?));
            }
            let bleu_at = |e: usize| out.logs.iter().find(|l| l.epoch == e).map(|l| l.valid_bleu2).unwrap_or(0.0);
            let row = BleuRow {
                model: kind.name().to_string(),
                seed,
                untrained: bleu_at(0),
                best: bleu_at(out.best_epoch),
                best_epoch: out.best_epoch,
                last_epoch: out.last_epoch,
                diverged: out.divergence.is_some(),
            };
            Ok((files, row))
        });
    let mut rows = Vec::new();
    for r in results {
        let (files, row) = r?;
        for (rel, digest) in files {
            w.record(rel, digest);
        }
        rows.push(row);
    }
    w.write("bleu.csv", BleuRow::to_csv(&rows).as_bytes())?;
    w.finish()
}

/// Exports encoder vectors for every probed checkpoint.
pub fn cmd_encode(ctx: &Context) -> Result<Manifest, PipelineError> {
    let cfg = &ctx.cfg;
    let ckpts = ctx.run.require(StageDir::Ckpts)?;
    let c = load_corpus(ctx)?;
    let item = |v: Vec<(String, usize, EncoderInput, Vec<usize>)>| -> Vec<(String, usize, EncoderInput)> {
        v.into_iter().map(|(d, t, i, _)| (d, t, i)).collect()
    };
    let train_items = item(contexts(&c.train, &c.vocab, cfg.window));
    let valid_items = item(contexts(&c.valid, &c.vocab, cfg.window));

    let mut w = ctx.run.begin(StageDir::Reprs)?;
    let mut skipped = Vec::new();
    for kind in &cfg.models {
        for &seed in &cfg.seeds {
            let prefix = run_prefix(kind.name(), seed);
            for stage in cfg.encode_stages() {
                let rel = format!("{prefix}/{stage}.ckpt");
                if !ckpts.files.contains_key(&rel) {
                    skipped.push(rel);
                    continue;
                }
                let ck = read_checkpoint(&ctx.run.read(StageDir::Ckpts, &rel)?)?;
                let dim = ck.model.config.probe_dim();
                for (split, items) in [("train", &train_items), ("valid", &valid_items)] {
                    let recs = export_representations(&ck.model, items, ctx.exec)?;
                    w.write(&format!("{prefix}/{stage}.{split}.bin"), &write_representations(dim, &recs)?)?;
                }
            }
        }
    }
    w.write("skipped.txt", skipped.iter().map(|s| format!("{s}\n")).collect::<String>().as_bytes())?;
    w.finish()
}

fn load_labels(ctx: &Context) -> Result<(LabelSpace, Vec<ProbeLabelRecord>, Vec<ProbeLabelRecord>), PipelineError> {
    let space = serde_json::from_slice(&ctx.run.read(StageDir::Labels, "space.json")?)
        .map_err(|e| PipelineError::Integrity(format!("labels/space.json: {e}")))?;
    let train = read_jsonl(ctx.run.read(StageDir::Labels, "train.jsonl")?.as_slice())?;
    let valid = read_jsonl(ctx.run.read(StageDir::Labels, "valid.jsonl")?.as_slice())?;
    Ok((space, train, valid))
}

fn load_reprs(ctx: &Context, rel: &str) -> Result<Vec<RepresentationRecord>, PipelineError> {
    Ok(read_representations(&ctx.run.read(StageDir::Reprs, rel)?)?.1)
}

/// Trains and scores probes on every cached representation.
pub fn cmd_probe(ctx: &Context) -> Result<Manifest, PipelineError> {
    let cfg = &ctx.cfg;
    let reprs = ctx.run.require(StageDir::Reprs)?;
    let (space, train_labels, valid_labels) = load_labels(ctx)?;
    let stages = cfg.encode_stages();
    let mut loaded = Vec::new();
    for kind in &cfg.models {
        for &seed in &cfg.seeds {
            for stage in &stages {
                let base = format!("{}/{stage}", run_prefix(kind.name(), seed));
                if !reprs.files.contains_key(&format!("{base}.train.bin")) {
                    continue;
                }
                let train = load_reprs(ctx, &format!("{base}.train.bin"))?;
                let valid = load_reprs(ctx, &format!("{base}.valid.bin"))?;
                loaded.push((kind.name(), stage.as_str(), seed, train, valid));
            }
        }
    }
    let caches: Vec<CacheEntry> = loaded
        .iter()
        .map(|(model, stage, seed, train, valid)| CacheEntry { model, stage, seed: *seed, train, valid })
        .collect();
    let (tasks, unlabeled): (Vec<_>, Vec<_>) = cfg.probe_tasks().into_iter().partition(|t| space.names(*t).is_some());
    let req = SuiteRequest {
        dataset: cfg.dataset.name().to_string(),
        models: cfg.models.iter().map(|k| k.name().to_string()).collect(),
        stages: stages.clone(),
        seeds: cfg.seeds.clone(),
        tasks,
        classifiers: cfg.classifiers.clone(),
    };
    let out = run_probe_suite(&req, &caches, &space, &train_labels, &valid_labels, &cfg.probe_config(), ctx.exec);

    let mut w = ctx.run.begin(StageDir::Probes)?;
    w.write("results.csv", results_csv(&out.rows).as_bytes())?;
    w.write("summary.csv", summary_csv(&out.aggregates).as_bytes())?;
    let issues = json!({
        "absent": out.absent,
        "failures": out.failures,
        "tasks_without_labels": unlabeled.iter().map(|t| t.name()).collect::<Vec<_>>(),
    });
    w.write("issues.json", json_pretty(&issues).as_bytes())?;
    w.finish()
}

fn label_name(space: &LabelSpace, r: &ProbeLabelRecord) -> String {
    let name = |id: &u32| space.name(r.task, *id).unwrap_or("?").to_string();
    match &r.label {
        Label::Single(id) => name(id),
        Label::Set(ids) => ids.iter().map(name).collect::<Vec<_>>().join("+"),
    }
}

/// Difficulty buckets, probe evolution, PCA plot data and the optional
/// tie-fraction bootstrap.
pub fn cmd_analyze(ctx: &Context) -> Result<Manifest, PipelineError> {
    let cfg = &ctx.cfg;
    let rows = read_results_csv(&ctx.run.read_text(StageDir::Probes, "results.csv")?)?;
    let reprs = ctx.run.require(StageDir::Reprs)?;
    let (space, _, valid_labels) = load_labels(ctx)?;
    let mut warnings: Vec<String> = Vec::new();
    let mut w = ctx.run.begin(StageDir::Analysis)?;

    let present: BTreeSet<&str> = cfg.models.iter().map(|k| k.name()).collect();
    let mut seq2seq: Vec<&str> = SEQ2SEQ_MODELS.iter().copied().filter(|m| present.contains(m)).collect();
    if seq2seq.is_empty() {
        warnings.push("no recurrent model in the run; buckets use every model".into());
        seq2seq = present.iter().copied().collect();
    }
    for &clf in &cfg.classifiers {
        let sub: Vec<_> = rows.iter().filter(|r| r.classifier == clf).cloned().collect();
        let table = bucket_difficulty(&sub, &seq2seq, &cfg.report_stage);
        w.write(&format!("difficulty_{clf}.csv"), table.to_csv().as_bytes())?;
        w.write(&format!("difficulty_tasks_{clf}.csv"), table.tasks_csv().as_bytes())?;
        warnings.extend(table.warnings.iter().map(|m| format!("{clf}: {m}")));
    }
    w.write("evolution.csv", evolution_csv(&evolution_curves(&rows)).as_bytes())?;

    let colors: BTreeMap<(&str, usize), String> = valid_labels
        .iter()
        .filter(|r| r.task == cfg.pca_color_task)
        .map(|r| ((r.dialogue_id.as_str(), r.turn_index), label_name(&space, r)))
        .collect();
    let mut summary = String::from("model,seed,stage,variance_ratio_1,variance_ratio_2,range_1,range_2\n");
    let seed = cfg.seeds[0];
    let mut stages = vec!["untrained".to_string()];
    if cfg.pca_stage != "untrained" {
        stages.push(cfg.pca_stage.clone());
    }
    for kind in &cfg.models {
        for stage in &stages {
            let rel = format!("{}/{stage}.valid.bin", run_prefix(kind.name(), seed));
            if !reprs.files.contains_key(&rel) {
                continue;
            }
            let recs = load_reprs(ctx, &rel)?;
            match pca2(&cache_rows(&recs), &rel) {
                Ok(p) => {
                    let keys: Vec<String> = recs
                        .iter()
                        .map(|r| colors.get(&(r.dialogue_id.as_str(), r.turn_index)).cloned().unwrap_or_default())
                        .collect();
                    w.write(&format!("pca_{}_{stage}.csv", kind.name()), pca_csv(&recs, &p, Some(&keys)).as_bytes())?;
                    summary.push_str(&format!(
                        "{},{seed},{stage},{:.6},{:.6},{:.6},{:.6}\n",
                        kind.name(),
                        p.variance_ratio[0],
                        p.variance_ratio[1],
                        p.ranges[0],
                        p.ranges[1]
                    ));
                }
                Err(e @ (AnalysisError::Degenerate(_) | AnalysisError::Input(_))) => warnings.push(e.to_string()),
                Err(e) => return Err(e.into()),
            }
        }
    }
    w.write("pca_summary.csv", summary.as_bytes())?;

    if let Some(path) = &cfg.annotations {
        let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
        let responses = read_annotations(&text)?;
        let bcfg = BootstrapConfig {
            n_sets: cfg.bootstrap_sets,
            set_size: cfg.bootstrap_set_size,
            seed: cfg.bootstrap_seed,
            with_replacement: cfg.bootstrap_replacement,
            counting: cfg.bootstrap_counting,
        };
        let dist = bootstrap_ties(&responses, &bcfg, ctx.exec)?;
        w.write("ties_histogram.csv", dist.histogram_csv(cfg.histogram_bins).as_bytes())?;
        w.write("ties_summary.json", (dist.summary_json() + "\n").as_bytes())?;
    }
    w.write("warnings.txt", warnings.iter().map(|s| format!("{s}\n")).collect::<String>().as_bytes())?;
    w.finish()
}

/// Assembles the human-readable summary.
pub fn cmd_report(ctx: &Context) -> Result<Manifest, PipelineError> {
    ctx.run.require(StageDir::Analysis)?;
    let text = build_report(ctx)?;
    let mut w = ctx.run.begin(StageDir::Report)?;
    w.write("report.md", text.as_bytes())?;
    w.finish()
}

/// Every stage in order.
pub fn cmd_all(ctx: &Context) -> Result<Vec<Manifest>, PipelineError> {
    let steps: [fn(&Context) -> Result<Manifest, PipelineError>; 7] =
        [cmd_ingest, cmd_derive, cmd_train, cmd_encode, cmd_probe, cmd_analyze, cmd_report];
    steps.iter().map(|f| f(ctx)).collect()
}

/// Writes a synthetic corpus and its labels to `out` outside any run directory.
pub fn cmd_generate(cfg: &RunConfig, out: &Path, exec: Execution) -> Result<Vec<String>, PipelineError> {
    let c = generate_synthetic(&cfg.synthetic, exec)?;
    let mut written = Vec::new();
    for (name, bytes) in [
        ("corpus.ndf", write_ndf(&c.dialogues)),
        ("truth.jsonl", write_jsonl(&c.truth)),
        ("synthetic.json", json_pretty(&cfg.synthetic)),
    ] {
        let path = out.join(name);
        write_atomic(&path, bytes.as_bytes())?;
        written.push(path.display().to_string());
    }
    Ok(written)
}
