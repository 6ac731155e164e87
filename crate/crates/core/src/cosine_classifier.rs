//! Cosine-embedding classification over class semantic descriptions, ZSL and
//! calibrated-stacking GZSL decision rules, and per-class accuracy metrics.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, RsanError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tensor_ops::{cosine, cosine_backward};

/// Row index of a class in its [`SemanticTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub usize);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Class semantic descriptions with the seen/unseen partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTable<T> {
    attributes: Tensor<T>,
    seen: Vec<bool>,
}

impl<T: Scalar> SemanticTable<T> {
    /// `attributes` is |Y|×K; `seen[y]` marks training classes.
    pub fn new(attributes: Tensor<T>, seen: Vec<bool>) -> Result<Self> {
        let (classes, _) = attributes.dims2("semantic_table", "attribute table")?;
        if seen.len() != classes {
            return Err(RsanError::dim(
                "semantic_table",
                format!("{} seen flags for {classes} classes", seen.len()),
            ));
        }
        let attributes = attributes.ensure_finite("semantic_table")?;
        let table = Self { attributes, seen };
        for y in 0..classes {
            if table.row(ClassId(y)).norm() == 0.0 {
                return Err(RsanError::Data(format!(
                    "class {y} has an all-zero semantic description"
                )));
            }
        }
        Ok(table)
    }

    pub fn num_classes(&self) -> usize {
        self.seen.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.shape()[1]
    }

    pub fn attributes(&self) -> &Tensor<T> {
        &self.attributes
    }

    pub fn seen_mask(&self) -> &[bool] {
        &self.seen
    }

    pub fn row(&self, y: ClassId) -> Tensor<T> {
        self.attributes.slice_outer(y.0)
    }

    pub fn is_seen(&self, y: ClassId) -> bool {
        self.seen[y.0]
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.seen.len()).map(ClassId)
    }

    pub fn seen_classes(&self) -> Vec<ClassId> {
        self.classes().filter(|&y| self.is_seen(y)).collect()
    }

    pub fn unseen_classes(&self) -> Vec<ClassId> {
        self.classes().filter(|&y| !self.is_seen(y)).collect()
    }

    /// Copy with row `y` multiplied by `factor`.
    pub fn with_row_scaled(&self, y: ClassId, factor: T) -> Result<Self> {
        let mut attributes = self.attributes.clone();
        let k = self.num_attributes();
        for x in &mut attributes.data_mut()[y.0 * k..(y.0 + 1) * k] {
            *x = *x * factor;
        }
        Self::new(attributes, self.seen.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    /// Softmax temperature on cosine logits.
    pub tau_s: f64,
    /// Cosine scale at GZSL inference.
    pub sigma_scale: f64,
    /// Penalty subtracted from seen-class scores at GZSL inference.
    pub gamma: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            tau_s: 0.04,
            sigma_scale: 20.0,
            gamma: 0.7,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_s.is_finite() && self.tau_s > 0.0) {
            return Err(RsanError::Config(format!(
                "tau_s must be positive, got {}",
                self.tau_s
            )));
        }
        if !(self.sigma_scale.is_finite() && self.sigma_scale > 0.0) {
            return Err(RsanError::Config(format!(
                "sigma_scale must be positive, got {}",
                self.sigma_scale
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(RsanError::Config(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Compatibility function between a predicted representation and a class row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreRule {
    /// Cosine similarity; training logits are divided by `tau_s`.
    Cosine,
    /// Plain inner product; the ablation counterpart of `Cosine`.
    Dot,
}

impl ScoreRule {
    pub fn score<T: Scalar>(self, a_hat: &Tensor<T>, row: &Tensor<T>) -> Result<f64> {
        match self {
            ScoreRule::Cosine => cosine(a_hat, row),
            ScoreRule::Dot => a_hat.dot(row),
        }
    }
}

fn check_prediction<T: Scalar>(a_hat: &Tensor<T>, table: &SemanticTable<T>) -> Result<()> {
    if a_hat.numel() != table.num_attributes() {
        return Err(RsanError::dim(
            "classifier",
            format!(
                "prediction {:?} vs table with K = {}",
                a_hat.shape(),
                table.num_attributes()
            ),
        ));
    }
    Ok(())
}

/// Softmax cross-entropy over seen classes with logits `cos(â, a(y))/τ_s`.
pub fn classification_loss<T: Scalar>(
    a_hat: &Tensor<T>,
    y: ClassId,
    table: &SemanticTable<T>,
    cfg: &ClassifierConfig,
) -> Result<f64> {
    Ok(classification_loss_with_grad(a_hat, y, table, cfg, ScoreRule::Cosine)?.0)
}

/// Loss and its gradient with respect to `a_hat` under `rule`. The dot rule
/// uses unscaled inner-product logits.
pub fn classification_loss_with_grad<T: Scalar>(
    a_hat: &Tensor<T>,
    y: ClassId,
    table: &SemanticTable<T>,
    cfg: &ClassifierConfig,
    rule: ScoreRule,
) -> Result<(f64, Tensor<T>)> {
    cfg.validate()?;
    check_prediction(a_hat, table)?;
    if y.0 >= table.num_classes() || !table.is_seen(y) {
        return Err(RsanError::Usage(format!(
            "class {y} is not a seen class; training labels must be seen"
        )));
    }
    let seen = table.seen_classes();
    let scale = match rule {
        ScoreRule::Cosine => 1.0 / cfg.tau_s,
        ScoreRule::Dot => 1.0,
    };
    let rows: Vec<Tensor<T>> = seen.iter().map(|&c| table.row(c)).collect();
    let logits = rows
        .iter()
        .map(|row| Ok(rule.score(a_hat, row)? * scale))
        .collect::<Result<Vec<f64>>>()?;
    let target = seen.iter().position(|&c| c == y).expect("seen label");
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let denom: f64 = exps.iter().sum();
    let loss = (m + denom.ln() - logits[target]).max(0.0);
    if !loss.is_finite() {
        return Err(RsanError::NonFinite {
            op: "classification_loss",
        });
    }

    let mut grad = Tensor::zeros(a_hat.shape());
    for (c, (row, e)) in rows.iter().zip(&exps).enumerate() {
        let mut coeff = e / denom;
        if c == target {
            coeff -= 1.0;
        }
        if coeff == 0.0 {
            continue;
        }
        let dz = coeff * scale;
        match rule {
            ScoreRule::Cosine => {
                let (gu, _) = cosine_backward(a_hat, row, dz)?;
                grad.axpy(T::one(), &gu)?;
            }
            ScoreRule::Dot => grad.axpy(T::from_acc(dz), row)?,
        }
    }
    Ok((loss, grad.ensure_finite("classification_loss")?))
}

/// Argmax of `scale·score(â, a(y)) − penalty(y)` over `candidates`, ties to
/// the lowest class id.
fn argmax_over<T: Scalar>(
    a_hat: &Tensor<T>,
    table: &SemanticTable<T>,
    candidates: impl Iterator<Item = ClassId>,
    rule: ScoreRule,
    scale: f64,
    penalty: impl Fn(ClassId) -> f64,
) -> Result<Option<ClassId>> {
    check_prediction(a_hat, table)?;
    let mut best: Option<(ClassId, f64)> = None;
    for y in candidates {
        let s = scale * rule.score(a_hat, &table.row(y))? - penalty(y);
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((y, s)),
        }
    }
    Ok(best.map(|(y, _)| y))
}

/// Best-matching unseen class by cosine.
pub fn zsl_predict<T: Scalar>(a_hat: &Tensor<T>, table: &SemanticTable<T>) -> Result<ClassId> {
    zsl_predict_with(a_hat, table, ScoreRule::Cosine)
}

pub fn zsl_predict_with<T: Scalar>(
    a_hat: &Tensor<T>,
    table: &SemanticTable<T>,
    rule: ScoreRule,
) -> Result<ClassId> {
    argmax_over(a_hat, table, table.unseen_classes().into_iter(), rule, 1.0, |_| 0.0)?
        .ok_or_else(|| RsanError::Config("ZSL prediction needs at least one unseen class".into()))
}

/// Calibrated stacking over all classes: `σ·cos(â, a(y)) − γ·[y seen]`.
pub fn gzsl_predict<T: Scalar>(
    a_hat: &Tensor<T>,
    table: &SemanticTable<T>,
    cfg: &ClassifierConfig,
) -> Result<ClassId> {
    gzsl_predict_with(a_hat, table, cfg, ScoreRule::Cosine)
}

pub fn gzsl_predict_with<T: Scalar>(
    a_hat: &Tensor<T>,
    table: &SemanticTable<T>,
    cfg: &ClassifierConfig,
    rule: ScoreRule,
) -> Result<ClassId> {
    let gamma = cfg.gamma;
    argmax_over(a_hat, table, table.classes(), rule, cfg.sigma_scale, |y| {
        if table.is_seen(y) {
            gamma
        } else {
            0.0
        }
    })?
    .ok_or_else(|| RsanError::Config("semantic table is empty".into()))
}

/// Best seen class by plain score, used for validation on held-out seen samples.
pub fn seen_predict_with<T: Scalar>(
    a_hat: &Tensor<T>,
    table: &SemanticTable<T>,
    rule: ScoreRule,
) -> Result<ClassId> {
    argmax_over(a_hat, table, table.seen_classes().into_iter(), rule, 1.0, |_| 0.0)?
        .ok_or_else(|| RsanError::Config("no seen classes".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GzslMetrics {
    /// Macro accuracy over seen classes present in the evaluation set.
    pub s: f64,
    /// Macro accuracy over unseen classes present in the evaluation set.
    pub u: f64,
    /// Harmonic mean of `s` and `u`; 0 when both are 0.
    pub h: f64,
    /// Macro accuracy over every class present in the evaluation set.
    pub t1: f64,
}

pub fn harmonic_mean(s: f64, u: f64) -> f64 {
    if s + u == 0.0 {
        0.0
    } else {
        2.0 * s * u / (s + u)
    }
}

/// Per-class (macro) accuracies. Classes without evaluation samples are left
/// out of every average they would belong to.
pub fn gzsl_metrics<T: Scalar>(
    predictions: &[ClassId],
    truths: &[ClassId],
    table: &SemanticTable<T>,
) -> Result<GzslMetrics> {
    if predictions.len() != truths.len() {
        return Err(RsanError::dim(
            "gzsl_metrics",
            format!(
                "{} predictions for {} truths",
                predictions.len(),
                truths.len()
            ),
        ));
    }
    let n = table.num_classes();
    let mut total = vec![0usize; n];
    let mut correct = vec![0usize; n];
    for (&p, &t) in predictions.iter().zip(truths) {
        if t.0 >= n || p.0 >= n {
            return Err(RsanError::Data(format!(
                "class id {} outside table of {n} classes",
                t.0.max(p.0)
            )));
        }
        total[t.0] += 1;
        if p == t {
            correct[t.0] += 1;
        }
    }
    let macro_avg = |filter: &dyn Fn(usize) -> bool| {
        let accs: Vec<f64> = (0..n)
            .filter(|&y| total[y] > 0 && filter(y))
            .map(|y| correct[y] as f64 / total[y] as f64)
            .collect();
        if accs.is_empty() {
            0.0
        } else {
            accs.iter().sum::<f64>() / accs.len() as f64
        }
    };
    let s = macro_avg(&|y| table.seen[y]);
    let u = macro_avg(&|y| !table.seen[y]);
    Ok(GzslMetrics {
        s,
        u,
        h: harmonic_mean(s, u),
        t1: macro_avg(&|_| true),
    })
}

/// One evaluation result row:
/// `dataset,split,T1,S,U,H,gamma,tau_s,seed,config_hash`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub dataset: String,
    pub split: String,
    pub metrics: GzslMetrics,
    pub gamma: f64,
    pub tau_s: f64,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricsRecord {
    pub const HEADER: &'static str = "dataset,split,T1,S,U,H,gamma,tau_s,seed,config_hash";

    pub fn to_csv_line(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
            self.dataset,
            self.split,
            m.t1,
            m.s,
            m.u,
            m.h,
            self.gamma,
            self.tau_s,
            self.seed,
            self.config_hash
        )
    }

    /// Appends the record, writing the header first if the file is new.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        if fresh {
            writeln!(f, "{}", Self::HEADER)?;
        }
        writeln!(f, "{}", self.to_csv_line())?;
        Ok(())
    }
}
