//! Run manifests: what was run, with which fully resolved settings, on which files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use geocon::optim::OptimConfig;
use geocon::{Camera, SceneSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum SweepParam {
    #[serde(rename = "theta")]
    #[value(name = "theta")]
    Theta,
    #[serde(rename = "percentile")]
    #[value(name = "percentile")]
    Percentile,
    #[serde(rename = "S")]
    #[value(name = "S", alias = "s")]
    S,
    #[serde(rename = "lambda3")]
    #[value(name = "lambda3")]
    Lambda3,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Theta => "theta",
            SweepParam::Percentile => "percentile",
            SweepParam::S => "S",
            SweepParam::Lambda3 => "lambda3",
        }
    }
}

/// A command with every setting materialized. Paths are absolute so a manifest can be
/// replayed from anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    Synth {
        spec: SceneSpec,
        out: PathBuf,
    },
    Partition {
        image: PathBuf,
        percentile: f64,
        out: PathBuf,
    },
    Loss {
        bundle: PathBuf,
        config: OptimConfig,
        out: Option<PathBuf>,
    },
    Optimize {
        bundle: PathBuf,
        config: OptimConfig,
        out: PathBuf,
    },
    Sweep {
        bundle: PathBuf,
        config: OptimConfig,
        param: SweepParam,
        values: Vec<f64>,
        repeats: usize,
        out: PathBuf,
    },
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Synth { .. } => "synth",
            Job::Partition { .. } => "partition",
            Job::Loss { .. } => "loss",
            Job::Optimize { .. } => "optimize",
            Job::Sweep { .. } => "sweep",
        }
    }

    pub fn out(&self) -> Option<&Path> {
        match self {
            Job::Synth { out, .. } | Job::Partition { out, .. } | Job::Optimize { out, .. } | Job::Sweep { out, .. } => {
                Some(out)
            }
            Job::Loss { out, .. } => out.as_deref(),
        }
    }

    pub fn set_out(&mut self, dir: PathBuf) {
        match self {
            Job::Synth { out, .. } | Job::Partition { out, .. } | Job::Optimize { out, .. } | Job::Sweep { out, .. } => {
                *out = dir
            }
            Job::Loss { out, .. } => *out = Some(dir),
        }
    }

    /// Hash of the settings alone, without any paths.
    pub fn settings_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("job serializes");
        if let Some(obj) = v.as_object_mut() {
            for key in ["out", "bundle", "image"] {
                obj.remove(key);
            }
        }
        sha256_hex(v.to_string().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        })
    }
}

/// One rendered view inside a bundle directory; file names are relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub camera: Camera,
    pub rgb: String,
    pub depth: String,
    pub plane_distance: String,
    pub normals: String,
    /// Clean depth and normals. Equal to `depth` / `normals` for noise-free bundles.
    pub gt_depth: String,
    pub gt_normals: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub job: Job,
    pub threads: usize,
    pub spec_hash: String,
    /// Settings hash of the run that produced the input bundle, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle_spec_hash: Option<String>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub views: Option<Vec<ViewRecord>>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
