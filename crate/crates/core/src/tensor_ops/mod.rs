//! Dense kernels shared by both branches, with hand-written adjoints.
//!
//! All reductions accumulate in `f64` and visit operands in a fixed order, so
//! results are reproducible bit for bit across runs. Outputs are checked for
//! NaN/Inf before they are returned.

mod tape;

pub use tape::{NodeId, Tape};

use crate::error::{Result, RsanError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Applies `P` (C×K) independently at every spatial position of `v` (C×H×W),
/// producing a K×H×W map.
pub fn region_linear<T: Scalar>(v: &Tensor<T>, p: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = v.dims3("region_linear", "feature map")?;
    let (pc, k) = p.dims2("region_linear", "projection")?;
    if pc != c {
        return Err(RsanError::dim(
            "region_linear",
            format!(
                "feature map {:?} and projection {:?} disagree on channels",
                v.shape(),
                p.shape()
            ),
        ));
    }
    let hw = h * w;
    let vd = v.data();
    let pd = p.data();
    let mut acc = vec![0.0f64; k * hw];
    for ci in 0..c {
        let vrow = &vd[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            let weight = pd[ci * k + ki].to_acc();
            let out = &mut acc[ki * hw..(ki + 1) * hw];
            for (o, x) in out.iter_mut().zip(vrow) {
                *o += x.to_acc() * weight;
            }
        }
    }
    let data = acc.into_iter().map(T::from_acc).collect();
    Tensor::from_vec(&[k, h, w], data)?.ensure_finite("region_linear")
}

/// Adjoint of [`region_linear`]: returns `(d/dv, d/dP)`.
pub fn region_linear_backward<T: Scalar>(
    v: &Tensor<T>,
    p: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, h, w) = v.dims3("region_linear_backward", "feature map")?;
    let (_, k) = p.dims2("region_linear_backward", "projection")?;
    if grad_out.shape() != [k, h, w] {
        return Err(RsanError::dim(
            "region_linear_backward",
            format!(
                "upstream gradient {:?} does not match output [{k}, {h}, {w}]",
                grad_out.shape()
            ),
        ));
    }
    let hw = h * w;
    let (vd, pd, gd) = (v.data(), p.data(), grad_out.data());
    let mut gp = vec![0.0f64; c * k];
    let mut gv = vec![0.0f64; c * hw];
    for ci in 0..c {
        let vrow = &vd[ci * hw..(ci + 1) * hw];
        let gvrow = &mut gv[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            let grow = &gd[ki * hw..(ki + 1) * hw];
            let weight = pd[ci * k + ki].to_acc();
            let mut s = 0.0;
            for ((x, g), gvx) in vrow.iter().zip(grow).zip(gvrow.iter_mut()) {
                let g = g.to_acc();
                s += x.to_acc() * g;
                *gvx += weight * g;
            }
            gp[ci * k + ki] = s;
        }
    }
    let gv = Tensor::from_vec(&[c, h, w], gv.into_iter().map(T::from_acc).collect())?;
    let gp = Tensor::from_vec(&[c, k], gp.into_iter().map(T::from_acc).collect())?;
    Ok((
        gv.ensure_finite("region_linear_backward")?,
        gp.ensure_finite("region_linear_backward")?,
    ))
}

/// Spatial mean of a C×H×W map.
pub fn global_avg_pool<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = v.dims3("global_avg_pool", "feature map")?;
    let hw = h * w;
    let data = (0..c)
        .map(|ci| {
            let s: f64 = v.data()[ci * hw..(ci + 1) * hw]
                .iter()
                .map(|x| x.to_acc())
                .sum();
            T::from_acc(s / hw as f64)
        })
        .collect();
    Tensor::from_vec(&[c], data)?.ensure_finite("global_avg_pool")
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let &[c, h, w] = input_shape else {
        return Err(RsanError::dim(
            "global_avg_pool_backward",
            format!("input shape must be rank 3, got {input_shape:?}"),
        ));
    };
    if grad_out.shape() != [c] {
        return Err(RsanError::dim(
            "global_avg_pool_backward",
            format!("upstream gradient {:?} vs [{c}]", grad_out.shape()),
        ));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(c * hw);
    for g in grad_out.data() {
        let share = T::from_acc(g.to_acc() / hw as f64);
        out.extend(std::iter::repeat_n(share, hw));
    }
    Tensor::from_vec(input_shape, out)
}

/// Per-channel valid cross-correlation (no kernel flip, stride 1, no padding).
pub fn depthwise_conv_valid<T: Scalar>(v: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = v.dims3("depthwise_conv_valid", "feature map")?;
    let (kc, kh, kw) = k.dims3("depthwise_conv_valid", "kernel")?;
    if kc != c || kh > h || kw > w {
        return Err(RsanError::dim(
            "depthwise_conv_valid",
            format!(
                "kernel {:?} incompatible with feature map {:?}",
                k.shape(),
                v.shape()
            ),
        ));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let (vd, kd) = (v.data(), k.data());
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let vbase = ci * h * w;
        let kbase = ci * kh * kw;
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0f64;
                for p in 0..kh {
                    let vrow = vbase + (i + p) * w + j;
                    let krow = kbase + p * kw;
                    for q in 0..kw {
                        acc += vd[vrow + q].to_acc() * kd[krow + q].to_acc();
                    }
                }
                out.push(T::from_acc(acc));
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)?.ensure_finite("depthwise_conv_valid")
}

/// Adjoint of [`depthwise_conv_valid`]: returns `(d/dv, d/dk)`. Zero upstream
/// entries are skipped, which makes gradients routed through a max cheap.
pub fn depthwise_conv_valid_backward<T: Scalar>(
    v: &Tensor<T>,
    k: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, h, w) = v.dims3("depthwise_conv_valid_backward", "feature map")?;
    let (_, kh, kw) = k.dims3("depthwise_conv_valid_backward", "kernel")?;
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    if grad_out.shape() != [c, oh, ow] {
        return Err(RsanError::dim(
            "depthwise_conv_valid_backward",
            format!(
                "upstream gradient {:?} vs output [{c}, {oh}, {ow}]",
                grad_out.shape()
            ),
        ));
    }
    let (vd, kd, gd) = (v.data(), k.data(), grad_out.data());
    let mut gv = vec![0.0f64; c * h * w];
    let mut gk = vec![0.0f64; c * kh * kw];
    for ci in 0..c {
        let vbase = ci * h * w;
        let kbase = ci * kh * kw;
        for i in 0..oh {
            for j in 0..ow {
                let g = gd[ci * oh * ow + i * ow + j].to_acc();
                if g == 0.0 {
                    continue;
                }
                for p in 0..kh {
                    for q in 0..kw {
                        let vo = vbase + (i + p) * w + j + q;
                        let ko = kbase + p * kw + q;
                        gv[vo] += g * kd[ko].to_acc();
                        gk[ko] += g * vd[vo].to_acc();
                    }
                }
            }
        }
    }
    let gv = Tensor::from_vec(&[c, h, w], gv.into_iter().map(T::from_acc).collect())?;
    let gk = Tensor::from_vec(&[c, kh, kw], gk.into_iter().map(T::from_acc).collect())?;
    Ok((
        gv.ensure_finite("depthwise_conv_valid_backward")?,
        gk.ensure_finite("depthwise_conv_valid_backward")?,
    ))
}

pub fn relu<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Subgradient 0 at the kink.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(RsanError::dim(
            "relu_backward",
            format!("{:?} vs {:?}", input.shape(), grad_out.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Result of a max over the trailing axes of a tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxArgmax<T> {
    /// One maximum per leading index; shape is the leading shape.
    pub values: Tensor<T>,
    /// Trailing multi-index of the first (row-major) maximizer per leading index.
    pub locations: Vec<Vec<usize>>,
    /// Flat offsets of the maximizers into the full input.
    pub offsets: Vec<usize>,
}

/// Maximum over the last `axes` axes. Ties resolve to the first location in
/// row-major order.
pub fn max_argmax_trailing<T: Scalar>(t: &Tensor<T>, axes: usize) -> Result<MaxArgmax<T>> {
    if axes == 0 || axes > t.ndim() {
        return Err(RsanError::Domain {
            op: "max_argmax_trailing",
            detail: format!("cannot reduce {axes} trailing axes of shape {:?}", t.shape()),
        });
    }
    let split = t.ndim() - axes;
    let lead = &t.shape()[..split];
    let trail = &t.shape()[split..];
    let block: usize = trail.iter().product();
    let outer: usize = lead.iter().product();
    let mut values = Vec::with_capacity(outer);
    let mut locations = Vec::with_capacity(outer);
    let mut offsets = Vec::with_capacity(outer);
    for o in 0..outer {
        let chunk = &t.data()[o * block..(o + 1) * block];
        let mut best = 0;
        for (i, &x) in chunk.iter().enumerate().skip(1) {
            if x > chunk[best] {
                best = i;
            }
        }
        values.push(chunk[best]);
        offsets.push(o * block + best);
        let mut loc = vec![0; trail.len()];
        let mut rem = best;
        for axis in (0..trail.len()).rev() {
            loc[axis] = rem % trail[axis];
            rem /= trail[axis];
        }
        locations.push(loc);
    }
    Ok(MaxArgmax {
        values: Tensor::from_vec(lead, values)?,
        locations,
        offsets,
    })
}

/// Maximum over every entry, with the first row-major maximizer.
pub fn global_max_argmax<T: Scalar>(t: &Tensor<T>) -> Result<(T, Vec<usize>)> {
    if t.ndim() == 0 {
        return Ok((t.data()[0], Vec::new()));
    }
    let mut r = max_argmax_trailing(t, t.ndim())?;
    Ok((r.values.data()[0], r.locations.swap_remove(0)))
}

/// Routes each upstream value to its maximizer; every other entry gets zero.
pub fn max_backward<T: Scalar>(
    input_shape: &[usize],
    offsets: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.numel() != offsets.len() {
        return Err(RsanError::dim(
            "max_backward",
            format!(
                "{} upstream values for {} maxima",
                grad_out.numel(),
                offsets.len()
            ),
        ));
    }
    let mut g = Tensor::zeros(input_shape);
    for (&off, &x) in offsets.iter().zip(grad_out.data()) {
        g.data_mut()[off] = g.data()[off] + x;
    }
    Ok(g)
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine<T: Scalar>(u: &Tensor<T>, w: &Tensor<T>) -> Result<f64> {
    if u.numel() != w.numel() {
        return Err(RsanError::dim(
            "cosine",
            format!("{:?} vs {:?}", u.shape(), w.shape()),
        ));
    }
    let (nu, nw) = (u.norm(), w.norm());
    if nu == 0.0 || nw == 0.0 {
        return Err(RsanError::DegenerateVector { op: "cosine" });
    }
    let c = u.dot(w)? / (nu * nw);
    if !c.is_finite() {
        return Err(RsanError::NonFinite { op: "cosine" });
    }
    Ok(c.clamp(-1.0, 1.0))
}

/// Adjoint of [`cosine`] for upstream scalar `grad_out`: returns `(d/du, d/dw)`.
pub fn cosine_backward<T: Scalar>(
    u: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (nu, nw) = (u.norm(), w.norm());
    if nu == 0.0 || nw == 0.0 {
        return Err(RsanError::DegenerateVector {
            op: "cosine_backward",
        });
    }
    let c = u.dot(w)? / (nu * nw);
    let inv = 1.0 / (nu * nw);
    let gu = u
        .data()
        .iter()
        .zip(w.data())
        .map(|(a, b)| {
            let (a, b) = (a.to_acc(), b.to_acc());
            T::from_acc(grad_out * (b * inv - c * a / (nu * nu)))
        })
        .collect();
    let gw = u
        .data()
        .iter()
        .zip(w.data())
        .map(|(a, b)| {
            let (a, b) = (a.to_acc(), b.to_acc());
            T::from_acc(grad_out * (a * inv - c * b / (nw * nw)))
        })
        .collect();
    Ok((
        Tensor::from_vec(u.shape(), gu)?.ensure_finite("cosine_backward")?,
        Tensor::from_vec(w.shape(), gw)?.ensure_finite("cosine_backward")?,
    ))
}
