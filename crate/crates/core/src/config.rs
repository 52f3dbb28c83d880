//! Declarative run configuration: a TOML file, then the output-directory
//! environment override, then `--set section.key=value` overrides.

use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetOptions, LoadOptions, TimestampFormat};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::revisit::RevisitConfig;
use crate::training::TrainingConfig;

/// Environment variable that replaces `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "RECAP_OUTPUT_DIR";

/// File name of the resolved configuration written next to artifacts.
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Raw check-in file.
    pub path: Option<PathBuf>,
    /// Single ASCII character.
    pub delimiter: String,
    pub has_header: bool,
    pub timestamp_format: TimestampFormat,
    pub tz_offset_seconds: i64,
    pub max_skip_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            delimiter: ",".to_string(),
            has_header: true,
            timestamp_format: TimestampFormat::Epoch,
            tz_offset_seconds: 0,
            max_skip_fraction: 0.1,
        }
    }
}

impl DataConfig {
    pub fn load_options(&self) -> Result<LoadOptions> {
        let delimiter = match self.delimiter.as_bytes() {
            [b] if b.is_ascii() => *b,
            _ => {
                return Err(Error::Config(format!(
                    "data.delimiter must be one ASCII character, got {:?}",
                    self.delimiter
                )))
            }
        };
        Ok(LoadOptions {
            delimiter,
            has_header: self.has_header,
            timestamp_format: self.timestamp_format.clone(),
            tz_offset_seconds: self.tz_offset_seconds,
            max_skip_fraction: self.max_skip_fraction,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Tail threshold `η`: a transition is tail iff its training count is at most this.
    pub eta: u32,
    pub batch_size: usize,
    pub hop_values: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            eta: 1,
            batch_size: 512,
            hop_values: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub precision: Precision,
    pub data: DataConfig,
    pub dataset: DatasetOptions,
    pub model: ModelConfig,
    pub revisit: RevisitConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs/recap"),
            precision: Precision::default(),
            data: DataConfig::default(),
            dataset: DatasetOptions::default(),
            model: ModelConfig::default(),
            revisit: RevisitConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Parses `raw` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies one `a.b.c=value` override, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Deserializes a table into `T`, rejecting unknown keys.
pub fn from_table<T: DeserializeOwned>(table: toml::Table) -> Result<T> {
    T::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config(e.to_string().trim().to_string()))
}

impl RunConfig {
    /// File (optional) < `RECAP_OUTPUT_DIR` < overrides, then validation.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let env = std::env::var(OUTPUT_DIR_ENV).ok().filter(|v| !v.is_empty());
        Self::resolve_with_env(file, overrides, env.as_deref())
    }

    pub fn resolve_with_env(file: Option<&Path>, overrides: &[String], output_dir: Option<&str>) -> Result<Self> {
        let mut table = match file {
            Some(p) => read_table(p)?,
            None => toml::Table::new(),
        };
        if let Some(dir) = output_dir {
            table.insert("output_dir".to_string(), toml::Value::String(dir.to_string()));
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("output_dir is empty".to_string()));
        }
        self.data.load_options()?;
        if !(0.0..=1.0).contains(&self.data.max_skip_fraction) {
            return Err(Error::Config("data.max_skip_fraction must lie in [0, 1]".to_string()));
        }
        self.dataset.ratios.validate()?;
        if self.dataset.suffix_len == 0 {
            return Err(Error::Config("dataset.suffix_len must be positive".to_string()));
        }
        let m = &self.model;
        if m.hops == 0 {
            return Err(Error::Config("model.hops must be positive".to_string()));
        }
        if m.heads == 0 || m.hidden % m.heads != 0 {
            return Err(Error::Config(format!(
                "model.hidden ({}) must be a multiple of model.heads ({})",
                m.hidden, m.heads
            )));
        }
        let probs = [m.dropout, m.embedding_dropout, m.output_dropout, m.graph_dropout];
        if probs.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config(format!("dropout rates must lie in [0, 1): {probs:?}")));
        }
        let r = &self.revisit;
        if r.window == 0 || r.candidate_cap == 0 {
            return Err(Error::Config("revisit.window and revisit.candidate_cap must be positive".to_string()));
        }
        if !(r.b_max > 0.0) || !(r.init_tau > 0.0) {
            return Err(Error::Config("revisit.b_max and revisit.init_tau must be positive".to_string()));
        }
        self.training.validate()?;
        if self.eval.batch_size == 0 || self.eval.hop_values.iter().any(|&h| h == 0) {
            return Err(Error::Config("eval.batch_size and eval.hop_values must be positive".to_string()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
