//! The trainable head: a semantic mapping (region-based or pooled) plus an
//! optional attribute-kernel bank, and the joint objective over a batch.

use rand::Rng;

use crate::attribute_constraint::{
    init_kernels, random_kernels, regression_forward, regression_kernel_grads, regression_loss,
    regression_loss_grad, regression_peaks,
    AttributeEmbeddings, AttributeKernelBank,
};
use crate::cosine_classifier::{classification_loss_with_grad, ClassId, ScoreRule, SemanticTable};
use crate::error::{Result, RsanError};
use crate::region_mapping::{
    concentrate_loss, concentrate_loss_grad, saliency, ProjectionMatrix, SaliencyResult,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tensor_ops::{self, Tape};

use super::config::{AblationFlags, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum Mapping<T> {
    /// Per-region projection `P`, max-pooled per attribute.
    Region(ProjectionMatrix<T>),
    /// Global average pooling followed by `V`.
    Pooled(Tensor<T>),
}

impl<T: Scalar> Mapping<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        match self {
            Mapping::Region(p) => p.tensor(),
            Mapping::Pooled(v) => v,
        }
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor<T> {
        match self {
            Mapping::Region(p) => p.tensor_mut(),
            Mapping::Pooled(v) => v,
        }
    }

    /// Parameter-group name used in checkpoints.
    pub fn group_name(&self) -> &'static str {
        match self {
            Mapping::Region(_) => "P",
            Mapping::Pooled(_) => "V",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsanModel<T> {
    pub mapping: Mapping<T>,
    pub kernels: Option<AttributeKernelBank<T>>,
    pub score_rule: ScoreRule,
}

/// Gradients in the same layout as the model's trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub mapping: Tensor<T>,
    pub kernels: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.mapping];
        if let Some(ks) = &self.kernels {
            out.extend(ks.iter());
        }
        out
    }
}

impl<T: Scalar> RsanModel<T> {
    /// Fresh model for `channels` feature channels and the attribute count of
    /// `embeddings` (or `attributes` when no embeddings are given).
    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        attributes: usize,
        cfg: &TrainConfig,
        embeddings: Option<&AttributeEmbeddings<T>>,
        rng: &mut R,
    ) -> Result<Self> {
        let flags = cfg.flags;
        let bound = (6.0 / (channels + attributes) as f64).sqrt();
        let proj = Tensor::uniform(&[channels, attributes], bound, rng);
        let mapping = if flags.use_region_mapping {
            Mapping::Region(ProjectionMatrix::new(proj)?)
        } else {
            Mapping::Pooled(proj)
        };
        let dims = (channels, cfg.kernel_h, cfg.kernel_w);
        let kernels = if !flags.use_regression {
            None
        } else if flags.use_semantic_init {
            let emb = embeddings.ok_or_else(|| {
                RsanError::Config("semantic kernel initialization needs attribute embeddings".into())
            })?;
            if emb.num_attributes() != attributes {
                return Err(RsanError::dim(
                    "model_init",
                    format!(
                        "{} embedding rows for {attributes} attributes",
                        emb.num_attributes()
                    ),
                ));
            }
            Some(init_kernels(emb, dims, cfg.kernel_layout, rng)?)
        } else {
            Some(random_kernels(attributes, dims, rng)?)
        };
        Ok(Self {
            mapping,
            kernels,
            score_rule: score_rule(&flags),
        })
    }

    pub fn num_attributes(&self) -> usize {
        self.mapping.tensor().shape()[1]
    }

    /// Predicted semantic representation of one feature map.
    pub fn predict(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.mapping {
            Mapping::Region(p) => crate::region_mapping::predict_semantic(v, p),
            Mapping::Pooled(proj) => crate::region_mapping::baseline_predict(v, proj),
        }
    }

    pub fn saliency(&self, v: &Tensor<T>) -> Result<SaliencyResult<T>> {
        match &self.mapping {
            Mapping::Region(p) => saliency(v, p),
            Mapping::Pooled(_) => Err(RsanError::Usage(
                "saliency maps need a region-mapping model".into(),
            )),
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![self.mapping.tensor()];
        if let Some(bank) = &self.kernels {
            out.extend(bank.kernels.iter());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![self.mapping.tensor_mut()];
        if let Some(bank) = &mut self.kernels {
            out.extend(bank.kernels.iter_mut());
        }
        out
    }

    /// Smallest gap protecting any max or ReLU decision from a perturbation;
    /// finite-difference checks are only meaningful where this is large.
    pub fn decision_margin(&self, v: &Tensor<T>) -> Result<f64> {
        let mut margin = f64::INFINITY;
        if let Mapping::Region(p) = &self.mapping {
            let map = tensor_ops::region_linear(v, p.tensor())?;
            let (k, h, w) = map.dims3("decision_margin", "saliency map")?;
            for ki in 0..k {
                let chunk = &map.data()[ki * h * w..(ki + 1) * h * w];
                margin = margin.min(top_two_gap(chunk));
            }
        }
        if let Some(bank) = &self.kernels {
            let pass = regression_forward(v, bank)?;
            margin = pass.margins.iter().copied().fold(margin, f64::min);
        }
        Ok(margin)
    }
}

fn top_two_gap<T: Scalar>(xs: &[T]) -> f64 {
    let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for x in xs {
        let x = x.to_acc();
        if x > top {
            second = top;
            top = x;
        } else if x > second {
            second = x;
        }
    }
    top - second
}

pub fn score_rule(flags: &AblationFlags) -> ScoreRule {
    if flags.use_cosine_embedding {
        ScoreRule::Cosine
    } else {
        ScoreRule::Dot
    }
}

/// Batch-mean loss terms, the weighted total, and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLoss<T> {
    pub total: f64,
    pub cls: f64,
    pub con: f64,
    pub reg: f64,
    pub grads: ModelGrads<T>,
}

/// `mean L_cls + λ1·mean L_con + λ2·mean L_reg` over `batch`, with gradients.
/// Disabled components contribute exactly zero and get no gradient.
pub fn joint_loss<T: Scalar>(
    batch: &[(&Tensor<T>, ClassId)],
    model: &RsanModel<T>,
    table: &SemanticTable<T>,
    cfg: &TrainConfig,
) -> Result<JointLoss<T>> {
    if batch.is_empty() {
        return Err(RsanError::Usage("joint loss over an empty batch".into()));
    }
    let flags = cfg.flags;
    if flags.use_regression != model.kernels.is_some() {
        return Err(RsanError::Usage(
            "model kernel bank does not match the use_regression flag".into(),
        ));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let (mut cls, mut con, mut reg) = (0.0, 0.0, 0.0);
    let mut g_map = Tensor::zeros(model.mapping.tensor().shape());
    let mut g_kernels: Option<Vec<Tensor<T>>> = model
        .kernels
        .as_ref()
        .map(|b| b.kernels.iter().map(|k| Tensor::zeros(k.shape())).collect());

    for &(v, y) in batch {
        let mut tape = Tape::new();
        match &model.mapping {
            Mapping::Region(p) => {
                let (map, lin) = tape.region_linear(v, p.tensor())?;
                let (max, pool) = tape.max_argmax_trailing(&map, 2)?;
                let (l, g_ahat) =
                    classification_loss_with_grad(&max.values, y, table, &cfg.classifier, model.score_rule)?;
                cls += l;
                let mut g_m = tape.adjoint(pool, &g_ahat.scale(T::from_acc(inv_b)))?.remove(0);
                if flags.concentrate_active() {
                    let peaks: Vec<_> = max.locations.iter().map(|l| (l[0], l[1])).collect();
                    con += concentrate_loss(&map, &peaks)?;
                    g_m.axpy(
                        T::from_acc(cfg.lambda1 * inv_b),
                        &concentrate_loss_grad(&map, &peaks)?,
                    )?;
                }
                let g_p = tape.adjoint(lin, &g_m)?.remove(1);
                g_map.axpy(T::one(), &g_p)?;
            }
            Mapping::Pooled(proj) => {
                let c = v.shape()[0];
                let (pooled, _) = tape.global_avg_pool(v)?;
                let (out, lin) = tape.region_linear(&pooled.reshape(&[c, 1, 1])?, proj)?;
                let k = out.shape()[0];
                let a_hat = out.reshape(&[k])?;
                let (l, g_ahat) =
                    classification_loss_with_grad(&a_hat, y, table, &cfg.classifier, model.score_rule)?;
                cls += l;
                let g_out = g_ahat.scale(T::from_acc(inv_b)).reshape(&[k, 1, 1])?;
                g_map.axpy(T::one(), &tape.adjoint(lin, &g_out)?[1])?;
            }
        }
        if let (Some(bank), Some(gk)) = (&model.kernels, g_kernels.as_mut()) {
            let pass = regression_peaks(v, bank)?;
            let a_true = table.row(y);
            reg += regression_loss(&pass.a_reg, &a_true)?;
            let upstream = regression_loss_grad(&pass.a_reg, &a_true)?
                .scale(T::from_acc(cfg.lambda2 * inv_b));
            for (acc, g) in gk
                .iter_mut()
                .zip(regression_kernel_grads(v, bank, &pass.peaks, &upstream)?)
            {
                acc.axpy(T::one(), &g)?;
            }
        }
    }

    let (cls, con, reg) = (cls * inv_b, con * inv_b, reg * inv_b);
    for (term, value) in [("classification", cls), ("concentrate", con), ("regression", reg)] {
        if !value.is_finite() {
            return Err(RsanError::NonFiniteLoss {
                term,
                epoch: 0,
                batch: 0,
            });
        }
    }
    let total = cls + cfg.lambda1 * con + cfg.lambda2 * reg;
    let grads = ModelGrads {
        mapping: g_map.ensure_finite("joint_loss gradient")?,
        kernels: g_kernels,
    };
    Ok(JointLoss {
        total,
        cls,
        con,
        reg,
        grads,
    })
}
