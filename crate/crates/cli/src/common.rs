//! Pieces shared by the subcommands: error classes, pipeline flags,
//! provider specs, manifests and output helpers.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::Args;
use salseg::evalkit::{ClassList, ManifestEntry};
use salseg::PipelineConfig;
use sha2::{Digest, Sha256};

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or inconsistent inputs (exit 1).
    Usage(String),
    /// A stage failed while running (exit 2).
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub fn usage<T>(message: impl Into<String>) -> CmdResult<T> {
    Err(Failure::Usage(message.into()))
}

/// Pipeline configuration flags shared by `segment` and `tune`.
#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// JSON pipeline configuration; missing fields take their defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Salience dropout rounds (1 is plain GradCAM).
    #[arg(long, value_name = "N")]
    pub rounds: Option<usize>,
    /// Skip the Gaussian blur.
    #[arg(long)]
    pub no_blur: bool,
    /// Skip the dense CRF.
    #[arg(long)]
    pub no_crf: bool,
    /// One GradCAM round, no blur, no CRF.
    #[arg(long, conflicts_with = "rounds")]
    pub gradcam_only: bool,
}

impl PipelineArgs {
    pub fn resolve(&self) -> CmdResult<PipelineConfig> {
        let mut cfg = match &self.config {
            None => PipelineConfig::default(),
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
            }
        };
        if let Some(rounds) = self.rounds {
            cfg.dropout_rounds = rounds;
        }
        if self.gradcam_only {
            cfg.dropout_rounds = 1;
            cfg.blur = false;
            cfg.crf = false;
        }
        if self.no_blur {
            cfg.blur = false;
        }
        if self.no_crf {
            cfg.crf = false;
        }
        cfg.validate()
            .map_err(|e| Failure::Usage(format!("invalid configuration: {e}")))?;
        Ok(cfg)
    }
}

/// Where salience comes from, as given on the command line.
#[derive(Clone, Debug, PartialEq)]
pub enum ProviderArg {
    /// Each manifest entry's own scene file.
    SyntheticPerItem,
    /// One scene file.
    SyntheticScene(PathBuf),
    /// External process speaking the line protocol.
    Subprocess(String),
}

impl ProviderArg {
    pub fn parse(text: &str) -> CmdResult<Self> {
        match text.split_once(':') {
            None if text == "synthetic" => Ok(Self::SyntheticPerItem),
            Some(("synthetic", path)) if !path.is_empty() => Ok(Self::SyntheticScene(path.into())),
            Some(("subprocess", command)) if !command.trim().is_empty() => Ok(Self::Subprocess(command.into())),
            _ => usage(format!(
                "provider must be `synthetic`, `synthetic:<scene.json>` or `subprocess:<command>`, got `{text}`"
            )),
        }
    }
}

/// Shared flags of commands that talk to external processes.
#[derive(Debug, Args)]
pub struct ProcessArgs {
    /// Patch grid side requested from subprocess providers.
    #[arg(long, default_value_t = 24)]
    pub grid: usize,
    /// Seconds to wait for any one subprocess reply.
    #[arg(long, value_name = "SECS", default_value_t = 300)]
    pub timeout: u64,
}

impl ProcessArgs {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout)
    }
}

/// Manifest entries with paths resolved against the manifest's directory.
pub fn load_manifest(path: &Path) -> CmdResult<(PathBuf, Vec<ManifestEntry>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    for e in &mut entries {
        e.image = dir.join(&e.image);
        e.raster = dir.join(&e.raster);
        e.scene = e.scene.as_ref().map(|s| dir.join(s));
    }
    Ok((dir, entries))
}

pub fn load_classes(path: &Path) -> CmdResult<ClassList> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    ClassList::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

/// SHA-256 of the configuration's JSON serialization (fields in
/// declaration order), hex encoded.
pub fn config_hash(config: &PipelineConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Run `f` on a pool of `jobs` threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> CmdResult<T> {
    if jobs == 0 {
        return usage("--jobs must be at least 1");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building the worker pool")?;
    Ok(pool.install(f))
}

/// File stem of `path` as a string, for output names.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Seconds since the Unix epoch, for run reports only.
pub fn unix_time() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
