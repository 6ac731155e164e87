//! Ablation tables and one-axis sweeps over the synthetic benchmark.

use crate::attribute_constraint::{average_word_embeddings, AttributeEmbeddings};
use crate::cosine_classifier::GzslMetrics;
use crate::dataset::Dataset;
use crate::echo::ConfigEcho;
use crate::error::{Result, RsanError};
use crate::evaluate::{evaluate_gzsl, evaluate_zsl, gamma_sweep};
use crate::scalar::Scalar;
use crate::trainer::{AblationFlags, EpochRecord, RsanModel, TrainConfig, Trainer};

/// Ablation rows from the plain baseline to the full model; each row turns on
/// exactly one more flag than the previous one.
pub fn ablation_rows() -> Vec<(&'static str, AblationFlags)> {
    let mut flags = AblationFlags::BASELINE;
    let mut rows = vec![("Baseline", flags)];
    flags.use_region_mapping = true;
    rows.push(("+RM", flags));
    flags.use_concentrate = true;
    rows.push(("+L_Con", flags));
    flags.use_cosine_embedding = true;
    rows.push(("+CE", flags));
    flags.use_regression = true;
    rows.push(("+L_Reg", flags));
    flags.use_semantic_init = true;
    rows.push(("+semantic init", flags));
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult<T> {
    pub echo: ConfigEcho,
    pub history: Vec<EpochRecord>,
    /// Best-validation model.
    pub model: RsanModel<T>,
    /// Unseen-only classification; `t1` is the ZSL accuracy.
    pub zsl: GzslMetrics,
    /// Calibrated stacking at the configured γ.
    pub gzsl: GzslMetrics,
}

/// Trains with `cfg` and evaluates the best-validation checkpoint.
pub fn run_once<T: Scalar>(
    cfg: &TrainConfig,
    data: &Dataset<T>,
    embeddings: Option<&AttributeEmbeddings<T>>,
) -> Result<RunResult<T>> {
    let echo = cfg.echo();
    let outcome = Trainer::new(cfg, data, embeddings, echo.clone())?.run()?;
    let model = outcome.best.model;
    Ok(RunResult {
        zsl: evaluate_zsl(&model, data)?,
        gzsl: evaluate_gzsl(&model, data, &cfg.classifier)?,
        echo,
        history: outcome.history,
        model,
    })
}

/// Averaged embeddings for a benchmark's word vectors.
pub fn embeddings_for<T: Scalar>(
    words: &[crate::attribute_constraint::AttributeWords],
) -> Result<AttributeEmbeddings<T>> {
    average_word_embeddings(words)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationEntry<T> {
    pub name: &'static str,
    pub result: RunResult<T>,
}

pub fn ablate<T: Scalar>(
    base: &TrainConfig,
    data: &Dataset<T>,
    embeddings: Option<&AttributeEmbeddings<T>>,
) -> Result<Vec<AblationEntry<T>>> {
    ablation_rows()
        .into_iter()
        .map(|(name, flags)| {
            let cfg = TrainConfig {
                flags,
                ..base.clone()
            };
            Ok(AblationEntry {
                name,
                result: run_once(&cfg, data, embeddings)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    KernelSize,
    EpisodeShape,
    Gamma,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kernel_size" => Ok(Self::KernelSize),
            "episode_shape" => Ok(Self::EpisodeShape),
            "gamma" => Ok(Self::Gamma),
            _ => Err(RsanError::Config(format!(
                "unknown sweep axis '{s}' (expected kernel_size, episode_shape or gamma)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::KernelSize => "kernel_size",
            Self::EpisodeShape => "episode_shape",
            Self::Gamma => "gamma",
        }
    }

    /// Default grid.
    pub fn default_values(self) -> Vec<String> {
        match self {
            Self::KernelSize => ["1", "3", "5", "7"].map(String::from).to_vec(),
            Self::EpisodeShape => {
                let mut v = Vec::new();
                for m in [8, 12, 16] {
                    for n in [2, 3, 4] {
                        v.push(format!("{m}x{n}"));
                    }
                }
                v
            }
            Self::Gamma => GAMMA_GRID.iter().map(|g| g.to_string()).collect(),
        }
    }
}

/// Default γ grid in units of the σ-scaled score.
pub const GAMMA_GRID: [f64; 8] = [0.0, 0.1, 0.2, 0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub zsl_t1: Option<f64>,
    pub gzsl: Option<GzslMetrics>,
    pub seen_predictions: Option<usize>,
    /// Why the point was skipped, if it was.
    pub note: Option<String>,
}

impl SweepPoint {
    pub const HEADER: &'static str = "axis,value,zsl_T1,S,U,H,seen_predictions,note";

    pub fn to_csv_line(&self, axis: SweepAxis) -> String {
        let f = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6}"));
        format!(
            "{},{},{},{},{},{},{},{}",
            axis.name(),
            self.value,
            f(self.zsl_t1),
            f(self.gzsl.map(|m| m.s)),
            f(self.gzsl.map(|m| m.u)),
            f(self.gzsl.map(|m| m.h)),
            self.seen_predictions.map_or(String::new(), |n| n.to_string()),
            self.note.as_deref().unwrap_or("")
        )
    }
}

/// Runs one point per value. Kernel-size and episode-shape points retrain;
/// γ points reuse one trained model. Infeasible settings (an episode wider
/// than the seen classes, a kernel larger than the map) are reported with a
/// note instead of failing the sweep.
pub fn sweep<T: Scalar>(
    axis: SweepAxis,
    values: &[String],
    base: &TrainConfig,
    data: &Dataset<T>,
    embeddings: Option<&AttributeEmbeddings<T>>,
) -> Result<Vec<SweepPoint>> {
    let key = axis.name();
    if axis == SweepAxis::Gamma {
        let gammas = values
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| RsanError::Config(format!("invalid gamma '{v}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let run = run_once(base, data, embeddings)?;
        return Ok(gamma_sweep(&run.model, data, &base.classifier, &gammas)?
            .into_iter()
            .zip(values)
            .map(|(p, v)| SweepPoint {
                value: v.clone(),
                zsl_t1: Some(run.zsl.t1),
                gzsl: Some(p.metrics),
                seen_predictions: Some(p.seen_predictions),
                note: None,
            })
            .collect());
    }
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        let mut cfg = base.clone();
        cfg.set(key, v)?;
        let skipped = |note: String| SweepPoint {
            value: v.clone(),
            zsl_t1: None,
            gzsl: None,
            seen_predictions: None,
            note: Some(note),
        };
        match run_once(&cfg, data, embeddings) {
            Ok(r) => out.push(SweepPoint {
                value: v.clone(),
                zsl_t1: Some(r.zsl.t1),
                gzsl: Some(r.gzsl),
                seen_predictions: None,
                note: None,
            }),
            Err(e @ (RsanError::Config(_) | RsanError::Dimension { .. })) => {
                out.push(skipped(format!("infeasible: {}", e.to_string().replace(',', ";"))))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
