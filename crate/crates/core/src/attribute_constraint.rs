//! Attribute-kernel regression branch.
//!
//! Each attribute owns a C×h×w kernel applied depthwise to the feature map.
//! The attribute estimate is the global max of the rectified response, and the
//! branch is trained by squared-error regression against the class
//! description. Kernels start from averaged word embeddings pushed through a
//! random linear map and reshaped to the kernel extent.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Result, RsanError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tensor_ops::{self, NodeId, Tape};

/// Averaged word embedding per attribute, K×d.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeEmbeddings<T> {
    pub ids: Vec<String>,
    pub matrix: Tensor<T>,
}

impl<T: Scalar> AttributeEmbeddings<T> {
    pub fn new(ids: Vec<String>, matrix: Tensor<T>) -> Result<Self> {
        let (k, _) = matrix.dims2("attribute_embeddings", "embedding matrix")?;
        if ids.len() != k {
            return Err(RsanError::dim(
                "attribute_embeddings",
                format!("{} ids for {k} rows", ids.len()),
            ));
        }
        Ok(Self {
            ids,
            matrix: matrix.ensure_finite("attribute_embeddings")?,
        })
    }

    pub fn num_attributes(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }
}

/// Word vectors making up one attribute's text description.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeWords {
    pub id: String,
    pub vectors: Vec<Vec<f64>>,
}

/// Mean word vector per attribute.
pub fn average_word_embeddings<T: Scalar>(words: &[AttributeWords]) -> Result<AttributeEmbeddings<T>> {
    let first = words
        .iter()
        .find_map(|a| a.vectors.first())
        .ok_or_else(|| RsanError::Data("no attribute word vectors".into()))?;
    let d = first.len();
    if d == 0 {
        return Err(RsanError::Data("word vectors have dimension 0".into()));
    }
    let mut data = Vec::with_capacity(words.len() * d);
    for attr in words {
        if attr.vectors.is_empty() {
            return Err(RsanError::Data(format!(
                "attribute '{}' has no word vectors",
                attr.id
            )));
        }
        let mut mean = vec![0.0f64; d];
        for v in &attr.vectors {
            if v.len() != d {
                return Err(RsanError::Data(format!(
                    "attribute '{}' has a word vector of dimension {} (expected {d})",
                    attr.id,
                    v.len()
                )));
            }
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        let n = attr.vectors.len() as f64;
        data.extend(mean.into_iter().map(|m| T::from_acc(m / n)));
    }
    AttributeEmbeddings::new(
        words.iter().map(|a| a.id.clone()).collect(),
        Tensor::from_vec(&[words.len(), d], data)?,
    )
}

/// Parses `attribute_id<TAB>x1 x2 … xd` lines. Repeated ids contribute
/// additional words to the same attribute; attributes keep first-seen order.
pub fn read_word_vectors<R: BufRead>(reader: R) -> Result<Vec<AttributeWords>> {
    let mut order: Vec<AttributeWords> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (id, values) = trimmed.split_once('\t').ok_or_else(|| {
            RsanError::Data(format!("line {}: expected <id><TAB><floats>", lineno + 1))
        })?;
        let vector = values
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    RsanError::Data(format!("line {}: bad float '{s}'", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let slot = *index.entry(id.to_string()).or_insert_with(|| {
            order.push(AttributeWords {
                id: id.to_string(),
                vectors: Vec::new(),
            });
            order.len() - 1
        });
        order[slot].vectors.push(vector);
    }
    Ok(order)
}

pub fn write_word_vectors<W: Write>(words: &[AttributeWords], out: &mut W) -> Result<()> {
    for attr in words {
        for v in &attr.vectors {
            let vals: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
            writeln!(out, "{}\t{}", attr.id, vals.join(" "))?;
        }
    }
    Ok(())
}

/// How an embedding row is expanded into a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelLayout {
    /// `d → C·h·w`, reshaped row-major into the full kernel.
    #[default]
    Full,
    /// `d → h·w`, the same spatial kernel repeated on every channel.
    SharedSpatial,
}

impl KernelLayout {
    pub fn name(self) -> &'static str {
        match self {
            KernelLayout::Full => "full",
            KernelLayout::SharedSpatial => "shared_spatial",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(KernelLayout::Full),
            "shared_spatial" => Ok(KernelLayout::SharedSpatial),
            other => Err(RsanError::Config(format!(
                "unknown kernel layout '{other}' (expected full|shared_spatial)"
            ))),
        }
    }

    fn init_width(self, c: usize, h: usize, w: usize) -> usize {
        match self {
            KernelLayout::Full => c * h * w,
            KernelLayout::SharedSpatial => h * w,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeKernelBank<T> {
    /// Initializer weights, d×(C·h·w) or d×(h·w) depending on `layout`.
    /// Not updated by training.
    pub w_init: Tensor<T>,
    /// One C×h×w kernel per attribute.
    pub kernels: Vec<Tensor<T>>,
    pub layout: KernelLayout,
}

impl<T: Scalar> AttributeKernelBank<T> {
    pub fn from_kernels(kernels: Vec<Tensor<T>>, w_init: Tensor<T>, layout: KernelLayout) -> Result<Self> {
        let first = kernels
            .first()
            .ok_or_else(|| RsanError::Data("kernel bank needs at least one kernel".into()))?;
        let shape = first.shape().to_vec();
        first.dims3("kernel_bank", "kernel")?;
        if kernels.iter().any(|k| k.shape() != shape) {
            return Err(RsanError::dim(
                "kernel_bank",
                "all attribute kernels must share one shape",
            ));
        }
        Ok(Self {
            w_init,
            kernels,
            layout,
        })
    }

    pub fn num_attributes(&self) -> usize {
        self.kernels.len()
    }

    /// `(C, h, w)`.
    pub fn kernel_dims(&self) -> (usize, usize, usize) {
        let s = self.kernels[0].shape();
        (s[0], s[1], s[2])
    }
}

fn check_extent(c: usize, h: usize, w: usize) -> Result<()> {
    if c == 0 || h == 0 || w == 0 {
        return Err(RsanError::Config(format!(
            "kernel extents must be positive, got C={c} h={h} w={w}"
        )));
    }
    Ok(())
}

/// Expands each embedding row through `w_init` into a C×h×w kernel.
pub fn kernels_from_embeddings<T: Scalar>(
    emb: &AttributeEmbeddings<T>,
    w_init: &Tensor<T>,
    (c, h, w): (usize, usize, usize),
    layout: KernelLayout,
) -> Result<Vec<Tensor<T>>> {
    let (d, n) = w_init.dims2("init_kernels", "initializer weights")?;
    if d != emb.dim() || n != layout.init_width(c, h, w) {
        return Err(RsanError::dim(
            "init_kernels",
            format!(
                "initializer {:?} incompatible with d={} and kernel {c}x{h}x{w} ({})",
                w_init.shape(),
                emb.dim(),
                layout.name()
            ),
        ));
    }
    let (ed, wd) = (emb.matrix.data(), w_init.data());
    (0..emb.num_attributes())
        .map(|k| {
            let row = &ed[k * d..(k + 1) * d];
            let flat: Vec<T> = (0..n)
                .map(|col| {
                    let s: f64 = row
                        .iter()
                        .enumerate()
                        .map(|(r, e)| e.to_acc() * wd[r * n + col].to_acc())
                        .sum();
                    T::from_acc(s)
                })
                .collect();
            let full = match layout {
                KernelLayout::Full => flat,
                KernelLayout::SharedSpatial => (0..c).flat_map(|_| flat.iter().copied()).collect(),
            };
            Tensor::from_vec(&[c, h, w], full)
        })
        .collect()
}

/// Semantic initialization: `w_init ~ U(−s, s)` with `s = sqrt(6/(d + n))`,
/// where `n` is the initializer width, then each kernel is the reshaped
/// product of its embedding row with `w_init`.
pub fn init_kernels<T: Scalar, R: Rng + ?Sized>(
    emb: &AttributeEmbeddings<T>,
    dims: (usize, usize, usize),
    layout: KernelLayout,
    rng: &mut R,
) -> Result<AttributeKernelBank<T>> {
    let (c, h, w) = dims;
    check_extent(c, h, w)?;
    let d = emb.dim();
    let n = layout.init_width(c, h, w);
    let bound = (6.0 / (d + n) as f64).sqrt();
    let w_init = Tensor::uniform(&[d, n], bound, rng);
    let kernels = kernels_from_embeddings(emb, &w_init, dims, layout)?;
    AttributeKernelBank::from_kernels(kernels, w_init, layout)
}

/// Kernels drawn independently of any embedding, `U(−s, s)` with
/// `s = sqrt(6/(C·h·w + 1))`. The initializer weights are left empty (1×1 zero).
pub fn random_kernels<T: Scalar, R: Rng + ?Sized>(
    num_attributes: usize,
    dims: (usize, usize, usize),
    rng: &mut R,
) -> Result<AttributeKernelBank<T>> {
    let (c, h, w) = dims;
    check_extent(c, h, w)?;
    let bound = (6.0 / (c * h * w + 1) as f64).sqrt();
    let kernels = (0..num_attributes)
        .map(|_| Tensor::uniform(&[c, h, w], bound, rng))
        .collect();
    AttributeKernelBank::from_kernels(kernels, Tensor::zeros(&[1, 1]), KernelLayout::Full)
}

/// Gradient with respect to the initializer weights given per-kernel
/// gradients, for the factorized view `kernel_k = reshape(E_k · W)`.
pub fn init_weight_gradient<T: Scalar>(
    emb: &AttributeEmbeddings<T>,
    kernel_grads: &[Tensor<T>],
    layout: KernelLayout,
) -> Result<Tensor<T>> {
    if kernel_grads.len() != emb.num_attributes() {
        return Err(RsanError::dim(
            "init_weight_gradient",
            format!(
                "{} kernel gradients for {} attributes",
                kernel_grads.len(),
                emb.num_attributes()
            ),
        ));
    }
    let (c, h, w) = kernel_grads[0].dims3("init_weight_gradient", "kernel gradient")?;
    let d = emb.dim();
    let n = layout.init_width(c, h, w);
    let mut acc = vec![0.0f64; d * n];
    for (k, g) in kernel_grads.iter().enumerate() {
        let flat: Vec<f64> = match layout {
            KernelLayout::Full => g.to_f64_vec(),
            KernelLayout::SharedSpatial => {
                let gd = g.data();
                (0..h * w)
                    .map(|s| (0..c).map(|ci| gd[ci * h * w + s].to_acc()).sum())
                    .collect()
            }
        };
        for r in 0..d {
            let e = emb.matrix.data()[k * d + r].to_acc();
            for (col, f) in flat.iter().enumerate() {
                acc[r * n + col] += e * f;
            }
        }
    }
    Tensor::from_vec(&[d, n], acc.into_iter().map(T::from_acc).collect())
}

/// Forward pass of the regression branch, retaining what the backward pass needs.
#[derive(Debug)]
pub struct RegressionPass<T> {
    pub a_reg: Tensor<T>,
    /// Per attribute: gap between the best and second-best rectified response
    /// candidates, or the distance of the best pre-activation from the ReLU
    /// kink, whichever is smaller.
    pub margins: Vec<f64>,
    tape: Tape<T>,
    nodes: Vec<(NodeId, NodeId, NodeId)>,
}

pub fn regression_forward<T: Scalar>(
    v: &Tensor<T>,
    bank: &AttributeKernelBank<T>,
) -> Result<RegressionPass<T>> {
    let mut tape = Tape::new();
    let mut values = Vec::with_capacity(bank.num_attributes());
    let mut nodes = Vec::with_capacity(bank.num_attributes());
    let mut margins = Vec::with_capacity(bank.num_attributes());
    for kernel in &bank.kernels {
        let (response, conv) = tape.depthwise_conv_valid(v, kernel)?;
        let (rectified, act) = tape.relu(&response);
        let (max, pool) = tape.max_argmax_trailing(&rectified, 3)?;
        values.push(max.values.data()[0]);
        nodes.push((conv, act, pool));
        margins.push(response_margin(&response));
    }
    Ok(RegressionPass {
        a_reg: Tensor::from_vec(&[values.len()], values)?,
        margins,
        tape,
        nodes,
    })
}

fn response_margin<T: Scalar>(response: &Tensor<T>) -> f64 {
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for x in response.data() {
        let x = x.to_acc();
        if x > top {
            second = top;
            top = x;
        } else if x > second {
            second = x;
        }
    }
    let gap = if top > 0.0 { top - second.max(0.0) } else { f64::INFINITY };
    gap.min(top.abs())
}

impl<T: Scalar> RegressionPass<T> {
    /// Kernel gradients given `d loss / d a_reg`.
    pub fn backward(&self, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if upstream.numel() != self.nodes.len() {
            return Err(RsanError::dim(
                "regression_backward",
                format!(
                    "{} upstream values for {} attributes",
                    upstream.numel(),
                    self.nodes.len()
                ),
            ));
        }
        self.nodes
            .iter()
            .zip(upstream.data())
            .map(|(&(conv, act, pool), &g)| {
                let g_rect = self.tape.adjoint(pool, &Tensor::from_vec(&[1], vec![g])?)?;
                let g_resp = self.tape.adjoint(act, &g_rect[0])?;
                let mut g_conv = self.tape.adjoint(conv, &g_resp[0])?;
                Ok(g_conv.swap_remove(1))
            })
            .collect()
    }
}

/// Winning location of each attribute's rectified response: `(channel, i, j)`,
/// or `None` when no response is positive (the max then sits on the ReLU's
/// flat side and passes no gradient).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionPeaks<T> {
    pub a_reg: Tensor<T>,
    pub peaks: Vec<Option<(usize, usize, usize)>>,
}

/// Same values and winners as [`regression_forward`] without recording a
/// tape; the training loop uses this together with [`regression_kernel_grads`].
pub fn regression_peaks<T: Scalar>(v: &Tensor<T>, bank: &AttributeKernelBank<T>) -> Result<RegressionPeaks<T>> {
    let (c, h, w) = v.dims3("regression_peaks", "feature map")?;
    let (kc, kh, kw) = bank.kernel_dims();
    if kc != c || kh > h || kw > w {
        return Err(RsanError::dim(
            "regression_peaks",
            format!("kernel [{kc}, {kh}, {kw}] incompatible with feature map {:?}", v.shape()),
        ));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let vd = v.data();
    let mut values = Vec::with_capacity(bank.num_attributes());
    let mut peaks = Vec::with_capacity(bank.num_attributes());
    for kernel in &bank.kernels {
        let kd = kernel.data();
        let mut best = 0.0f64;
        let mut at = None;
        for ci in 0..c {
            let (vbase, kbase) = (ci * h * w, ci * kh * kw);
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0f64;
                    for p in 0..kh {
                        let (vrow, krow) = (vbase + (i + p) * w + j, kbase + p * kw);
                        for q in 0..kw {
                            acc += vd[vrow + q].to_acc() * kd[krow + q].to_acc();
                        }
                    }
                    // Response values are rounded to T exactly as the tape path does.
                    let acc = T::from_acc(acc).to_acc();
                    if !acc.is_finite() {
                        return Err(RsanError::NonFinite { op: "regression_peaks" });
                    }
                    if acc > best {
                        best = acc;
                        at = Some((ci, i, j));
                    }
                }
            }
        }
        values.push(T::from_acc(best));
        peaks.push(at);
    }
    Ok(RegressionPeaks {
        a_reg: Tensor::from_vec(&[values.len()], values)?,
        peaks,
    })
}

/// Kernel gradients given the winners and `d loss / d a_reg`: only the
/// winning channel's window receives `g · v`.
pub fn regression_kernel_grads<T: Scalar>(
    v: &Tensor<T>,
    bank: &AttributeKernelBank<T>,
    peaks: &[Option<(usize, usize, usize)>],
    upstream: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    let (_, h, w) = v.dims3("regression_kernel_grads", "feature map")?;
    let (c, kh, kw) = bank.kernel_dims();
    if peaks.len() != bank.num_attributes() || upstream.numel() != peaks.len() {
        return Err(RsanError::dim(
            "regression_kernel_grads",
            format!(
                "{} peaks and {} upstream values for {} attributes",
                peaks.len(),
                upstream.numel(),
                bank.num_attributes()
            ),
        ));
    }
    let vd = v.data();
    peaks
        .iter()
        .zip(upstream.data())
        .map(|(peak, g)| {
            let mut gk = Tensor::zeros(&[c, kh, kw]);
            if let Some((ci, i, j)) = *peak {
                let g = g.to_acc();
                let out = gk.data_mut();
                for p in 0..kh {
                    for q in 0..kw {
                        out[(ci * kh + p) * kw + q] = T::from_acc(g * vd[ci * h * w + (i + p) * w + j + q].to_acc());
                    }
                }
            }
            Ok(gk)
        })
        .collect()
}

/// Global max of the rectified depthwise response, one value per attribute.
pub fn attribute_regression<T: Scalar>(
    v: &Tensor<T>,
    bank: &AttributeKernelBank<T>,
) -> Result<Tensor<T>> {
    let mut out = Vec::with_capacity(bank.num_attributes());
    for kernel in &bank.kernels {
        let response = tensor_ops::relu(&tensor_ops::depthwise_conv_valid(v, kernel)?);
        out.push(tensor_ops::global_max_argmax(&response)?.0);
    }
    Tensor::from_vec(&[out.len()], out)
}

/// Squared L2 distance, not averaged over attributes.
pub fn regression_loss<T: Scalar>(a_reg: &Tensor<T>, a_true: &Tensor<T>) -> Result<f64> {
    if a_reg.numel() != a_true.numel() {
        return Err(RsanError::dim(
            "regression_loss",
            format!("{:?} vs {:?}", a_reg.shape(), a_true.shape()),
        ));
    }
    let loss: f64 = a_reg
        .data()
        .iter()
        .zip(a_true.data())
        .map(|(a, b)| {
            let d = a.to_acc() - b.to_acc();
            d * d
        })
        .sum();
    if !loss.is_finite() {
        return Err(RsanError::NonFinite {
            op: "regression_loss",
        });
    }
    Ok(loss)
}

pub fn regression_loss_grad<T: Scalar>(a_reg: &Tensor<T>, a_true: &Tensor<T>) -> Result<Tensor<T>> {
    if a_reg.numel() != a_true.numel() {
        return Err(RsanError::dim(
            "regression_loss_grad",
            format!("{:?} vs {:?}", a_reg.shape(), a_true.shape()),
        ));
    }
    let data = a_reg
        .data()
        .iter()
        .zip(a_true.data())
        .map(|(a, b)| T::from_acc(2.0 * (a.to_acc() - b.to_acc())))
        .collect();
    Tensor::from_vec(a_reg.shape(), data)
}
