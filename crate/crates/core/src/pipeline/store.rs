use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::PipelineError;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_ECHO: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StageDir {
    Corpus,
    Labels,
    Ckpts,
    Reprs,
    Probes,
    Analysis,
    Report,
}

impl StageDir {
    pub const ALL: [StageDir; 7] = [
        StageDir::Corpus,
        StageDir::Labels,
        StageDir::Ckpts,
        StageDir::Reprs,
        StageDir::Probes,
        StageDir::Analysis,
        StageDir::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageDir::Corpus => "corpus",
            StageDir::Labels => "labels",
            StageDir::Ckpts => "ckpts",
            StageDir::Reprs => "reprs",
            StageDir::Probes => "probes",
            StageDir::Analysis => "analysis",
            StageDir::Report => "report",
        }
    }

    /// The command that fills this directory.
    pub fn producer(self) -> &'static str {
        match self {
            StageDir::Corpus => "ingest",
            StageDir::Labels => "derive",
            StageDir::Ckpts => "train",
            StageDir::Reprs => "encode",
            StageDir::Probes => "probe",
            StageDir::Analysis => "analyze",
            StageDir::Report => "report",
        }
    }
}

/// Sidecar of a finished stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub command: String,
    /// Relative path → SHA-256 of the file contents.
    pub files: BTreeMap<String, String>,
}

/// Writes `bytes` to a sibling temp file, syncs it and renames it over
/// `path`, so readers never see a partial file. Returns the content digest.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<String, PipelineError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(PipelineError::Io { path: path.to_path_buf(), source: e });
    }
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn read_manifest(dir: &Path) -> Option<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST)).ok()?;
    serde_json::from_str(&text).ok()
}

/// `<out>/<config-hash>/` of one resolved configuration.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
    pub hash: String,
    config_json: String,
}

impl RunDir {
    pub fn new(cfg: &RunConfig) -> Self {
        let hash = cfg.hash();
        RunDir { root: cfg.out.join(&hash), hash, config_json: cfg.echo_json() + "\n" }
    }

    pub fn dir(&self, s: StageDir) -> PathBuf {
        self.root.join(s.name())
    }

    /// The manifest of a finished stage, or the error naming its producer.
    pub fn require(&self, s: StageDir) -> Result<Manifest, PipelineError> {
        let dir = self.dir(s);
        let missing = || PipelineError::MissingArtifact { path: dir.join(MANIFEST), producer: s.producer() };
        let m = read_manifest(&dir).ok_or_else(missing)?;
        if m.config_hash != self.hash {
            return Err(PipelineError::Integrity(format!(
                "{} was produced by config {}, not {}",
                dir.display(),
                m.config_hash,
                self.hash
            )));
        }
        Ok(m)
    }

    /// Reads a file of a finished stage.
    pub fn read(&self, s: StageDir, rel: &str) -> Result<Vec<u8>, PipelineError> {
        let m = self.require(s)?;
        let path = self.dir(s).join(rel);
        if !m.files.contains_key(rel) {
            return Err(PipelineError::MissingArtifact { path, producer: s.producer() });
        }
        fs::read(&path).map_err(PipelineError::io(&path))
    }

    pub fn read_text(&self, s: StageDir, rel: &str) -> Result<String, PipelineError> {
        String::from_utf8(self.read(s, rel)?)
            .map_err(|_| PipelineError::Integrity(format!("{}/{rel} is not UTF-8", s.name())))
    }

    /// Clears the stage directory and starts recording its files.
    pub fn begin(&self, s: StageDir) -> Result<StageWriter, PipelineError> {
        let dir = self.dir(s);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(PipelineError::io(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(PipelineError::io(&dir))?;
        Ok(StageWriter {
            dir,
            stage: s,
            hash: self.hash.clone(),
            config_json: self.config_json.clone(),
            files: BTreeMap::new(),
        })
    }
}

/// Collects the files of one stage until [`StageWriter::finish`] seals it.
#[derive(Debug)]
pub struct StageWriter {
    pub dir: PathBuf,
    stage: StageDir,
    hash: String,
    config_json: String,
    files: BTreeMap<String, String>,
}

impl StageWriter {
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let digest = write_atomic(&self.dir.join(rel), bytes)?;
        self.files.insert(rel.to_string(), digest);
        Ok(())
    }

    /// Registers a file already written with [`write_atomic`].
    pub fn record(&mut self, rel: String, digest: String) {
        self.files.insert(rel, digest);
    }

    pub fn finish(mut self) -> Result<Manifest, PipelineError> {
        let cfg = self.config_json.clone();
        self.write(CONFIG_ECHO, cfg.as_bytes())?;
        let m = Manifest { config_hash: self.hash, command: self.stage.producer().to_string(), files: self.files };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
        write_atomic(&self.dir.join(MANIFEST), text.as_bytes())?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_lifecycle() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = RunConfig { out: tmp.path().to_path_buf(), ..Default::default() };
        let run = RunDir::new(&cfg);
        let err = run.require(StageDir::Reprs).unwrap_err();
        assert!(err.to_string().contains("cmd_encode"), "{err}");
        let mut w = run.begin(StageDir::Reprs).unwrap();
        w.write("a/b.txt", b"hi").unwrap();
        assert!(run.require(StageDir::Reprs).is_err());
        let m = w.finish().unwrap();
        assert_eq!(m.config_hash, cfg.hash());
        assert!(m.files.contains_key("config.json"));
        assert_eq!(run.read(StageDir::Reprs, "a/b.txt").unwrap(), b"hi");
        assert!(run.read(StageDir::Reprs, "c.txt").is_err());
        let names: Vec<_> =
            fs::read_dir(run.dir(StageDir::Reprs).join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, ["b.txt"]);
    }
}
