use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::TieCounting;
use crate::models::ModelKind;
use crate::probeclf::{ClassifierKind, LogregConfig, MlpConfig, ProbeConfig};
use crate::probelab::{DatasetKind, LabelConfig, ProbeTaskId, RepeatHorizon};

use super::synthetic::SyntheticSpec;
use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic,
    Multiwoz,
    Personachat,
}

impl DatasetSource {
    pub fn kind(self) -> DatasetKind {
        match self {
            DatasetSource::Personachat => DatasetKind::ChitChat,
            _ => DatasetKind::GoalOriented,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetSource::Synthetic => "synthetic",
            DatasetSource::Multiwoz => "multiwoz",
            DatasetSource::Personachat => "personachat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

/// Every setting of a run. Keys of the `key = value` file are the field
/// names below; `synth_*`, `logreg_*`, `mlp_*` and `bootstrap_*` keys set
/// the nested fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    /// Raw corpus files; ignored for the synthetic source.
    pub train_path: Option<PathBuf>,
    /// Without a validation file the last `valid_fraction` of dialogues is held out.
    pub valid_path: Option<PathBuf>,
    pub valid_fraction: f64,
    pub synthetic: SyntheticSpec,
    pub vocab_cap: usize,
    pub window: usize,
    /// Training targets and greedy decodes are cut to this many tokens.
    pub max_target_len: usize,
    pub models: Vec<ModelKind>,
    pub scale: Scale,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Validation pairs used for BLEU-2 model selection; 0 means all.
    pub bleu_valid_limit: usize,
    pub loc_buckets: usize,
    pub count_cap: u32,
    pub value_cap: usize,
    pub repeat_horizon: RepeatHorizon,
    /// Probed tasks; empty means every task of the dataset.
    pub tasks: Vec<ProbeTaskId>,
    pub classifiers: Vec<ClassifierKind>,
    pub probe_stages: Vec<String>,
    /// Also probe every `epoch-N` checkpoint.
    pub probe_epochs: bool,
    pub logreg: LogregConfig,
    pub mlp: MlpConfig,
    pub report_stage: String,
    pub pca_stage: String,
    pub pca_color_task: ProbeTaskId,
    /// Human preference annotations (`response_id,annotator,choice`).
    pub annotations: Option<PathBuf>,
    pub bootstrap_sets: usize,
    pub bootstrap_set_size: usize,
    pub bootstrap_seed: u64,
    pub bootstrap_replacement: bool,
    pub bootstrap_counting: TieCounting,
    pub histogram_bins: usize,
    /// Root under which run directories are created; not part of the hash.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSource::Synthetic,
            train_path: None,
            valid_path: None,
            valid_fraction: 0.2,
            synthetic: SyntheticSpec::default(),
            vocab_cap: 2000,
            window: 100,
            max_target_len: 30,
            models: ModelKind::ALL.to_vec(),
            scale: Scale::Desk,
            seeds: vec![0, 1, 2],
            epochs: 5,
            lr: 4e-3,
            batch_size: 32,
            bleu_valid_limit: 500,
            loc_buckets: 5,
            count_cap: 10,
            value_cap: 200,
            repeat_horizon: RepeatHorizon::AnyEarlier,
            tasks: Vec::new(),
            classifiers: vec![ClassifierKind::Logreg],
            probe_stages: vec!["untrained".into(), "bestbleu".into(), "lastepoch".into()],
            probe_epochs: true,
            logreg: LogregConfig::default(),
            mlp: MlpConfig::default(),
            report_stage: "bestbleu".into(),
            pca_stage: "lastepoch".into(),
            pca_color_task: ProbeTaskId::RecentTopic,
            annotations: None,
            bootstrap_sets: 50_000,
            bootstrap_set_size: 200,
            bootstrap_seed: 0,
            bootstrap_replacement: false,
            bootstrap_counting: TieCounting::Pooled,
            histogram_bins: 20,
            out: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, PipelineError> {
    v.parse().map_err(|_| PipelineError::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, PipelineError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(PipelineError::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn list<T, E: std::fmt::Display>(
    key: &str,
    v: &str,
    f: impl Fn(&str) -> Result<T, E>,
) -> Result<Vec<T>, PipelineError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(s).map_err(|e| PipelineError::Config(format!("{key}: {e}"))))
        .collect()
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), PipelineError> {
        let v = v.trim();
        match key {
            "dataset" => {
                self.dataset = match v {
                    "synthetic" => DatasetSource::Synthetic,
                    "multiwoz" => DatasetSource::Multiwoz,
                    "personachat" => DatasetSource::Personachat,
                    _ => return Err(PipelineError::Config(format!("dataset: unknown source {v:?}"))),
                }
            }
            "train_path" => self.train_path = path(v),
            "valid_path" => self.valid_path = path(v),
            "valid_fraction" => self.valid_fraction = parse(key, v)?,
            "synth_topics" => self.synthetic.topics = parse(key, v)?,
            "synth_slots" => self.synthetic.slots_per_topic = parse(key, v)?,
            "synth_values" => self.synthetic.values_per_slot = parse(key, v)?,
            "synth_dialogues" => self.synthetic.dialogues = parse(key, v)?,
            "synth_min_turns" => self.synthetic.min_turns = parse(key, v)?,
            "synth_max_turns" => self.synthetic.max_turns = parse(key, v)?,
            "synth_repeat_prob" => self.synthetic.repeat_prob = parse(key, v)?,
            "synth_seed" => self.synthetic.seed = parse(key, v)?,
            "vocab_cap" => self.vocab_cap = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            "max_target_len" => self.max_target_len = parse(key, v)?,
            "models" => self.models = list(key, v, ModelKind::from_str)?,
            "scale" => {
                self.scale = match v {
                    "desk" => Scale::Desk,
                    "paper" => Scale::Paper,
                    _ => return Err(PipelineError::Config(format!("scale: expected desk or paper, got {v:?}"))),
                }
            }
            "seeds" => self.seeds = list(key, v, |s| s.parse::<u64>().map_err(|e| e.to_string()))?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "bleu_valid_limit" => self.bleu_valid_limit = parse(key, v)?,
            "loc_buckets" => self.loc_buckets = parse(key, v)?,
            "count_cap" => self.count_cap = parse(key, v)?,
            "value_cap" => self.value_cap = parse(key, v)?,
            "repeat_horizon" => {
                self.repeat_horizon = match v {
                    "any-earlier" => RepeatHorizon::AnyEarlier,
                    "previous-user-turn" => RepeatHorizon::PreviousUserTurn,
                    _ => return Err(PipelineError::Config(format!("repeat_horizon: unknown value {v:?}"))),
                }
            }
            "tasks" => self.tasks = if v == "all" { Vec::new() } else { list(key, v, ProbeTaskId::from_str)? },
            "classifiers" => self.classifiers = list(key, v, ClassifierKind::from_str)?,
            "probe_stages" => self.probe_stages = list(key, v, |s| Ok::<_, String>(s.to_string()))?,
            "probe_epochs" => self.probe_epochs = parse_bool(key, v)?,
            "logreg_c" => self.logreg.c = parse(key, v)?,
            "logreg_max_iter" => self.logreg.max_iter = parse(key, v)?,
            "logreg_tol" => self.logreg.tol = parse(key, v)?,
            "mlp_hidden" => self.mlp.hidden = parse(key, v)?,
            "mlp_max_iter" => self.mlp.max_iter = parse(key, v)?,
            "mlp_lr" => self.mlp.lr = parse(key, v)?,
            "report_stage" => self.report_stage = v.to_string(),
            "pca_stage" => self.pca_stage = v.to_string(),
            "pca_color_task" => self.pca_color_task = v.parse().map_err(PipelineError::Config)?,
            "annotations" => self.annotations = path(v),
            "bootstrap_sets" => self.bootstrap_sets = parse(key, v)?,
            "bootstrap_set_size" => self.bootstrap_set_size = parse(key, v)?,
            "bootstrap_seed" => self.bootstrap_seed = parse(key, v)?,
            "bootstrap_replacement" => self.bootstrap_replacement = parse_bool(key, v)?,
            "bootstrap_counting" => {
                self.bootstrap_counting = match v {
                    "pooled" => TieCounting::Pooled,
                    "majority-vote" => TieCounting::MajorityVote,
                    _ => return Err(PipelineError::Config(format!("bootstrap_counting: unknown value {v:?}"))),
                }
            }
            "histogram_bins" => self.histogram_bins = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(PipelineError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
    pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>, PipelineError> {
        let mut out = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(PipelineError::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)));
            };
            if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(PipelineError::Config(format!("line {}: duplicate key {:?}", i + 1, k.trim())));
            }
        }
        Ok(out)
    }

    /// Defaults, then the file's keys, then `overrides` in order.
    pub fn resolve(text: Option<&str>, overrides: &[(String, String)]) -> Result<Self, PipelineError> {
        let mut cfg = RunConfig::default();
        if let Some(text) = text {
            for (k, v) in Self::parse_text(text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
        Self::resolve(Some(&text), overrides)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.dataset == DatasetSource::Synthetic {
            self.synthetic.validate()?;
        } else if self.train_path.is_none() {
            return bad(format!("dataset {} needs train_path", self.dataset.name()));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return bad("valid_fraction must lie in [0, 1)".into());
        }
        if self.models.is_empty() || self.seeds.is_empty() || self.classifiers.is_empty() {
            return bad("models, seeds and classifiers must be non-empty".into());
        }
        if self.window == 0 || self.max_target_len == 0 || self.batch_size == 0 {
            return bad("window, max_target_len and batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be a positive number, got {}", self.lr));
        }
        for t in &self.tasks {
            if !t.applicability().covers(self.dataset.kind()) {
                return bad(format!("task {t} does not apply to dataset {}", self.dataset.name()));
            }
        }
        for s in self.probe_stages.iter().chain([&self.report_stage, &self.pca_stage]) {
            if s.parse::<crate::models::Stage>().is_err() {
                return bad(format!("unknown stage {s:?}"));
            }
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        Ok(())
    }

    /// Resolved configuration as pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Pretty JSON without the output root, as echoed into stage directories.
    pub fn echo_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("out");
        serde_json::to_string_pretty(&v).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON, output root excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("out");
        let digest = Sha256::digest(v.to_string().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn label_config(&self) -> LabelConfig {
        LabelConfig {
            buckets: self.loc_buckets,
            count_cap: self.count_cap,
            value_cap: self.value_cap,
            repeat_horizon: self.repeat_horizon,
            window: self.window,
            ..LabelConfig::default()
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig { logreg: self.logreg, mlp: self.mlp }
    }

    /// Tasks to probe: the configured list or every task of the dataset.
    pub fn probe_tasks(&self) -> Vec<ProbeTaskId> {
        if self.tasks.is_empty() {
            ProbeTaskId::for_dataset(self.dataset.kind())
        } else {
            self.tasks.clone()
        }
    }

    /// Checkpoint stages that are encoded and probed; untrained is always
    /// included because difficulty bucketing needs it.
    pub fn encode_stages(&self) -> Vec<String> {
        let mut out: Vec<String> = vec!["untrained".into()];
        for s in self.probe_stages.iter().chain([&self.report_stage, &self.pca_stage]) {
            if !out.contains(s) {
                out.push(s.clone());
            }
        }
        if self.probe_epochs {
            for e in 0..=self.epochs {
                let s = format!("epoch-{e}");
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let text = "# desk run\nmodels = lstm, hred\nepochs=3\nseeds = 4,5 # two seeds\nsynth_topics = 2\n";
        let cfg = RunConfig::resolve(Some(text), &[("epochs".into(), "7".into())]).unwrap();
        assert_eq!(cfg.models, [ModelKind::Lstm, ModelKind::Hred]);
        assert_eq!((cfg.epochs, cfg.seeds.clone(), cfg.synthetic.topics), (7, vec![4, 5], 2));
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        for text in ["epoch = 3", "epochs 3", "epochs = three", "models = gru", "tasks = WordCont", "a=1\na=2"] {
            assert!(matches!(RunConfig::resolve(Some(text), &[]), Err(PipelineError::Config(_))), "{text}");
        }
        assert!(RunConfig::resolve(None, &[("synth_topics".into(), "0".into())]).is_err());
    }

    #[test]
    fn hash_ignores_output_root_only() {
        let a = RunConfig::default();
        let b = RunConfig { out: PathBuf::from("elsewhere"), ..a.clone() };
        let c = RunConfig { epochs: 6, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn json_echo_round_trips() {
        let cfg = RunConfig::resolve(Some("tasks = RecentTopic, IsMultiTask\nclassifiers = logreg,mlp"), &[]).unwrap();
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.tasks, [ProbeTaskId::RecentTopic, ProbeTaskId::IsMultiTopic]);
    }

    #[test]
    fn encode_stages_cover_probing_and_bucketing() {
        let cfg = RunConfig { epochs: 2, probe_stages: vec!["lastepoch".into()], ..Default::default() };
        assert_eq!(cfg.encode_stages(), ["untrained", "lastepoch", "bestbleu", "epoch-0", "epoch-1", "epoch-2"]);
    }
}
