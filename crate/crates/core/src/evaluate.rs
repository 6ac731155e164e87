//! ZSL and GZSL evaluation of a trained model, and calibrated-stacking sweeps.

use crate::cosine_classifier::{
    gzsl_metrics, gzsl_predict_with, zsl_predict_with, ClassId, ClassifierConfig, GzslMetrics,
};
use crate::dataset::{Dataset, Split};
use crate::error::{Result, RsanError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::RsanModel;

/// Predicted semantic vectors and labels for a set of samples, computed once
/// so that sweeps over inference settings do not rerun the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions<T> {
    pub indices: Vec<usize>,
    pub a_hat: Vec<Tensor<T>>,
    pub truths: Vec<ClassId>,
}

impl<T: Scalar> Predictions<T> {
    pub fn compute(model: &RsanModel<T>, data: &Dataset<T>, indices: Vec<usize>) -> Result<Self> {
        let mut a_hat = Vec::with_capacity(indices.len());
        let mut truths = Vec::with_capacity(indices.len());
        for &i in &indices {
            let s = data
                .samples
                .get(i)
                .ok_or_else(|| RsanError::Data(format!("sample {i} out of range")))?;
            a_hat.push(model.predict(&s.features)?);
            truths.push(s.label);
        }
        Ok(Self {
            indices,
            a_hat,
            truths,
        })
    }
}

/// ZSL: unseen test samples classified among unseen classes only. The
/// returned metrics have `t1 == u` and `s == 0`.
pub fn evaluate_zsl<T: Scalar>(model: &RsanModel<T>, data: &Dataset<T>) -> Result<GzslMetrics> {
    let p = Predictions::compute(model, data, data.zsl_test_indices())?;
    if p.indices.is_empty() {
        return Err(RsanError::Data("no unseen-class test samples".into()));
    }
    let preds = p
        .a_hat
        .iter()
        .map(|a| zsl_predict_with(a, &data.table, model.score_rule))
        .collect::<Result<Vec<_>>>()?;
    gzsl_metrics(&preds, &p.truths, &data.table)
}

/// GZSL predictions over every test sample with calibrated stacking.
pub fn gzsl_predictions<T: Scalar>(
    p: &Predictions<T>,
    data: &Dataset<T>,
    cfg: &ClassifierConfig,
    model: &RsanModel<T>,
) -> Result<Vec<ClassId>> {
    p.a_hat
        .iter()
        .map(|a| gzsl_predict_with(a, &data.table, cfg, model.score_rule))
        .collect()
}

pub fn evaluate_gzsl<T: Scalar>(
    model: &RsanModel<T>,
    data: &Dataset<T>,
    cfg: &ClassifierConfig,
) -> Result<GzslMetrics> {
    let p = Predictions::compute(model, data, data.indices_in(Split::Test))?;
    let preds = gzsl_predictions(&p, data, cfg, model)?;
    gzsl_metrics(&preds, &p.truths, &data.table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPoint {
    pub gamma: f64,
    pub metrics: GzslMetrics,
    /// Test samples assigned to some seen class.
    pub seen_predictions: usize,
}

/// GZSL metrics on the test split for each γ, reusing one forward pass.
pub fn gamma_sweep<T: Scalar>(
    model: &RsanModel<T>,
    data: &Dataset<T>,
    cfg: &ClassifierConfig,
    gammas: &[f64],
) -> Result<Vec<GammaPoint>> {
    let p = Predictions::compute(model, data, data.indices_in(Split::Test))?;
    gammas
        .iter()
        .map(|&gamma| {
            let c = ClassifierConfig { gamma, ..*cfg };
            c.validate()?;
            let preds = gzsl_predictions(&p, data, &c, model)?;
            Ok(GammaPoint {
                gamma,
                metrics: gzsl_metrics(&preds, &p.truths, &data.table)?,
                seen_predictions: preds.iter().filter(|&&y| data.table.is_seen(y)).count(),
            })
        })
        .collect()
}

/// Index of the best H in a sweep; ties go to the earliest point.
pub fn best_gamma(points: &[GammaPoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        if best.is_none_or(|b| p.metrics.h > points[b].metrics.h) {
            best = Some(i);
        }
    }
    best
}
