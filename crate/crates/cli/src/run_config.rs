//! Run configuration files: `key=value` lines covering the benchmark spec,
//! the trainer, the classifier, and per-command paths and options.

use std::path::{Path, PathBuf};

use rsan::experiment::SweepAxis;
use rsan::{BenchSpec, ConfigEcho, Result, RsanError, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Settings tuned for the desk-scale synthetic benchmark.
    Desk,
    /// The library defaults (`TrainConfig::default`).
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Zsl,
    Gzsl,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preset: Preset,
    pub bench: BenchSpec,
    pub train: TrainConfig,
    pub dataset: Option<PathBuf>,
    pub words: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub mode: EvalMode,
    pub axis: Option<SweepAxis>,
    pub values: Option<Vec<String>>,
    pub samples: Vec<usize>,
    pub attributes: Option<Vec<usize>>,
    pub dataset_name: String,
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| RsanError::Config(format!("invalid entry '{s}' in '{key}'")))
        })
        .collect()
}

impl RunConfig {
    /// Parses config text. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let echo = ConfigEcho::parse(text)?;
        let preset = match echo.get("preset").unwrap_or("desk") {
            "desk" => Preset::Desk,
            "reference" => Preset::Reference,
            other => {
                return Err(RsanError::Config(format!(
                    "unknown preset '{other}' (expected desk|reference)"
                )))
            }
        };
        let mut rc = RunConfig {
            preset,
            bench: BenchSpec::default(),
            train: match preset {
                Preset::Desk => TrainConfig::desk(),
                Preset::Reference => TrainConfig::default(),
            },
            dataset: None,
            words: None,
            checkpoint: None,
            mode: EvalMode::Zsl,
            axis: None,
            values: None,
            samples: vec![0],
            attributes: None,
            dataset_name: "synthetic".into(),
        };
        let path = |v: &str| base.join(v);
        for (key, value) in echo.entries() {
            let value = value.as_str();
            match key.as_str() {
                "preset" => {}
                "dataset" => rc.dataset = Some(path(value)),
                "words" => rc.words = Some(path(value)),
                "checkpoint" => rc.checkpoint = Some(path(value)),
                "mode" => {
                    rc.mode = match value {
                        "zsl" => EvalMode::Zsl,
                        "gzsl" => EvalMode::Gzsl,
                        other => {
                            return Err(RsanError::Config(format!(
                                "unknown mode '{other}' (expected zsl|gzsl)"
                            )))
                        }
                    }
                }
                "axis" => rc.axis = Some(SweepAxis::parse(value)?),
                "values" => rc.values = Some(list(key, value)?),
                "samples" => rc.samples = list(key, value)?,
                "attributes" => rc.attributes = Some(list(key, value)?),
                "dataset_name" => {
                    if value.contains(',') {
                        return Err(RsanError::Config("dataset_name must not contain commas".into()));
                    }
                    rc.dataset_name = value.to_string();
                }
                other => {
                    if !rc.bench.set(other, value)? && !rc.train.set(other, value)? {
                        return Err(RsanError::Config(format!("unknown key '{other}'")));
                    }
                }
            }
        }
        rc.bench.validate()?;
        rc.train.validate()?;
        Ok(rc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            RsanError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Every resolved setting, run keys first.
    pub fn echo(&self) -> ConfigEcho {
        let mut e = ConfigEcho::new();
        e.set(
            "preset",
            match self.preset {
                Preset::Desk => "desk",
                Preset::Reference => "reference",
            },
        );
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string());
        for (key, value) in [
            ("dataset", p(&self.dataset)),
            ("words", p(&self.words)),
            ("checkpoint", p(&self.checkpoint)),
        ] {
            if let Some(v) = value {
                e.set(key, v);
            }
        }
        e.set(
            "mode",
            match self.mode {
                EvalMode::Zsl => "zsl",
                EvalMode::Gzsl => "gzsl",
            },
        );
        if let Some(axis) = self.axis {
            e.set("axis", axis.name());
        }
        if let Some(v) = &self.values {
            e.set("values", v.join(","));
        }
        let join = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        e.set("samples", join(&self.samples));
        if let Some(a) = &self.attributes {
            e.set("attributes", join(a));
        }
        e.set("dataset_name", &self.dataset_name);
        e.extend(&self.bench.echo());
        e.extend(&self.train.echo());
        e
    }
}
