//! Run configuration shared by every CLI command.
//!
//! Resolution order: built-in defaults, then command-line overrides, then
//! the config file, each layer deep-merged over the previous one. Relative
//! paths in a config file are taken relative to that file's directory.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::HeuristicTierClassifier;
use crate::curriculum::TrainConfig;
use crate::distill::DistillConfig;
use crate::endpoint::EndpointConfig;
use crate::error::{Error, Result};
use crate::evalharness::BenchmarkSpec;
use crate::synth::SynthConfig;
use crate::toy::ToyConfig;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub graph: Option<PathBuf>,
    /// Primary input corpus or benchmark file.
    pub input: Option<PathBuf>,
    /// Synthetic corpus mixed in by `refine`.
    pub synthetic: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Primary output file; defaults to a per-command name in `out_dir`.
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Recorded teacher transcript for `distill`.
    pub transcript: Option<PathBuf>,
    /// Benchmark files or directories for `eval`.
    pub bench: Vec<PathBuf>,
    /// Run directories compared by `report`.
    pub runs: Vec<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            graph: None,
            input: None,
            synthetic: None,
            out_dir: PathBuf::from("out"),
            out: None,
            checkpoint: None,
            transcript: None,
            bench: Vec::new(),
            runs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// `mock-correct`, `mock-graph` or `http`.
    pub validator: String,
    pub trials: u32,
    pub anonymize: bool,
    pub classifier: HeuristicTierClassifier,
    pub public_fraction: f64,
    /// Size of the public/synthetic mix; all verified items when absent.
    pub mix_size: Option<usize>,
    pub endpoint: Option<EndpointConfig>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            validator: "mock-correct".into(),
            trials: 5,
            anonymize: true,
            classifier: HeuristicTierClassifier::default(),
            public_fraction: 0.7,
            mix_size: None,
            endpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    /// `fixture`, `http`, `mock-correct` or `mock-fail`.
    pub mode: String,
    pub endpoint: Option<EndpointConfig>,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            mode: "fixture".into(),
            endpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// `policy`, `http`, `mock-correct` or `mock-tagless`.
    pub adapter: String,
    /// Row label in report tables.
    pub model: String,
    pub endpoint: Option<EndpointConfig>,
    /// Explicit benchmark specs, evaluated before any `paths.bench` entries.
    pub benchmarks: Vec<BenchmarkSpec>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            adapter: "policy".into(),
            model: "model".into(),
            endpoint: None,
            benchmarks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Items generated by `synth`.
    pub count: usize,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub refine: RefineConfig,
    pub train: TrainConfig,
    pub distill: DistillConfig,
    pub teacher: TeacherConfig,
    pub eval: EvalConfig,
    pub toy: ToyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            jobs: 0,
            count: 100,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            refine: RefineConfig::default(),
            train: TrainConfig::default(),
            distill: DistillConfig::default(),
            teacher: TeacherConfig::default(),
            eval: EvalConfig::default(),
            toy: ToyConfig::default(),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Error {
    Error::ConfigInvalid(e.to_string())
}

/// Recursively merges `top` into `base`; tables merge key by key, any other
/// value replaces.
pub fn deep_merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(existing) => deep_merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn rebase(value: &mut toml::Value, dir: &Path) {
    let fix = |v: &mut toml::Value| {
        if let toml::Value::String(s) = v {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                *s = dir.join(p).to_string_lossy().into_owned();
            }
        }
    };
    if let Some(paths) = value.get_mut("paths").and_then(toml::Value::as_table_mut) {
        for (_, v) in paths.iter_mut() {
            match v {
                toml::Value::Array(items) => items.iter_mut().for_each(fix),
                other => fix(other),
            }
        }
    }
    if let Some(benches) = value
        .get_mut("eval")
        .and_then(|e| e.get_mut("benchmarks"))
        .and_then(toml::Value::as_array_mut)
    {
        for b in benches {
            if let Some(p) = b.get_mut("path") {
                fix(p);
            }
        }
    }
}

/// Reads a config file into a TOML value with its relative paths rebased.
pub fn read_config_file(path: &Path) -> Result<toml::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    let mut value: toml::Value = toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    rebase(&mut value, dir);
    Ok(value)
}

impl RunConfig {
    /// Defaults, then `overrides`, then the file at `file`.
    pub fn resolve(file: Option<&Path>, overrides: toml::Table) -> Result<RunConfig> {
        let mut value = toml::Value::try_from(RunConfig::default()).map_err(invalid)?;
        deep_merge(&mut value, toml::Value::Table(overrides));
        if let Some(path) = file {
            deep_merge(&mut value, read_config_file(path)?);
        }
        let config: RunConfig = value.try_into().map_err(invalid)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.distill.validate()?;
        if self.refine.trials == 0 {
            return Err(invalid("refine.trials must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.refine.public_fraction) {
            return Err(invalid("refine.public_fraction must be in [0, 1]"));
        }
        self.eval.benchmarks.iter().try_for_each(BenchmarkSpec::validate)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(invalid)
    }

    /// SHA-256 of the serialized config.
    pub fn digest(&self) -> Result<[u8; 32]> {
        Ok(Sha256::digest(self.to_toml()?.as_bytes()).into())
    }

    /// Writes the resolved config into the output directory.
    pub fn write_resolved(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.paths.out_dir)?;
        let path = self.paths.out_dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }

    /// `paths.out`, or `name` inside the output directory.
    pub fn out_file(&self, name: &str) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| self.paths.out_dir.join(name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn file_beats_flags_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "seed = 9\n[paths]\ngraph = \"kg.jsonl\"\n[train.grpo]\nbatch_size = 4\n").unwrap();
        let mut flags = toml::Table::new();
        flags.insert("seed".into(), 3.into());
        flags.insert("count".into(), 12.into());
        let c = RunConfig::resolve(Some(&file), flags).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.count, 12);
        assert_eq!(c.train.grpo.batch_size, 4);
        assert_eq!(c.train.grpo.feature_dim, 1024);
        assert_eq!(c.paths.graph.unwrap(), dir.path().join("kg.jsonl"));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "[train.grpo]\nlearning_rat = 1.0\n").unwrap();
        assert!(matches!(RunConfig::resolve(Some(&file), Default::default()), Err(Error::ConfigInvalid(_))));
        std::fs::write(&file, "[train.curriculum]\nk_stage2 = 2\n").unwrap();
        assert!(matches!(RunConfig::resolve(Some(&file), Default::default()), Err(Error::ConfigInvalid(_))));
    }
}
