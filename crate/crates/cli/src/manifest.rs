//! Run manifests: enough configuration and provenance to repeat a run.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tkg_core::training::TrainConfig;

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// `git describe`-style version of this binary.
pub fn version() -> &'static str {
    env!("TKG_VERSION")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    /// Name as given on the command line.
    pub name: String,
    pub dir: PathBuf,
    /// SHA-256 over the dataset files, see [`fingerprint`].
    pub fingerprint: String,
    pub num_entities: usize,
    pub num_relations: usize,
    pub names_file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub checkpoint: PathBuf,
    /// Manifest id of the training run that wrote the checkpoint.
    pub checkpoint_run_id: Option<String>,
    pub mode: String,
    pub split: String,
    pub tasks: Vec<String>,
    pub history: usize,
    pub filtered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub dataset: DatasetInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSettings>,
    pub timings: Vec<PhaseTiming>,
    /// Files written by the run, relative to the manifest's directory.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: TrainConfig, dataset: DatasetInfo, eval: Option<EvalSettings>) -> Self {
        let mut m = Self {
            run_id: String::new(),
            command: command.into(),
            version: version().into(),
            seed: config.seed,
            config,
            dataset,
            eval,
            timings: Vec::new(),
            artifacts: Vec::new(),
        };
        m.run_id = m.compute_id();
        m
    }

    /// Hash of everything that determines the run's outputs, so repeating a
    /// run reproduces its id.
    fn compute_id(&self) -> String {
        let key = serde_json::json!({
            "command": self.command,
            "version": self.version,
            "config": self.config,
            "fingerprint": self.dataset.fingerprint,
            "eval": self.eval.as_ref().map(|e| (&e.checkpoint_run_id, &e.mode, &e.split, &e.tasks, e.history, e.filtered)),
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        hex(&digest)[..16].to_string()
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

/// Wall-clock timer that records named phases in order.
pub struct PhaseClock {
    phases: Vec<PhaseTiming>,
    start: Instant,
}

impl PhaseClock {
    pub fn start() -> Self {
        Self {
            phases: Vec::new(),
            start: Instant::now(),
        }
    }

    /// Closes the current phase under `name` and starts the next one.
    pub fn lap(&mut self, name: &str) {
        self.phases.push(PhaseTiming {
            phase: name.into(),
            seconds: self.start.elapsed().as_secs_f64(),
        });
        self.start = Instant::now();
    }

    pub fn into_phases(self) -> Vec<PhaseTiming> {
        self.phases
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the given files in order. Each file contributes its base
/// name, its length and its bytes; missing files contribute a marker.
pub fn fingerprint(files: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    let mut buf = Vec::new();
    for path in files {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        h.update(name.as_bytes());
        h.update([0]);
        match std::fs::File::open(path) {
            Ok(mut f) => {
                buf.clear();
                f.read_to_end(&mut buf).map_err(|e| CliError::io(path, e))?;
                h.update((buf.len() as u64).to_le_bytes());
                h.update(&buf);
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => h.update(b"<absent>"),
            Err(e) => return Err(CliError::io(path, e)),
        }
    }
    Ok(hex(&h.finalize()))
}
