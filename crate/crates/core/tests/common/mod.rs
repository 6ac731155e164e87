//! Shared helpers for the integration suites: plain-loop reference
//! implementations, random small problem instances, and a central-difference
//! gradient checker.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rsan::attribute_constraint::{
    kernels_from_embeddings, AttributeEmbeddings, AttributeKernelBank, KernelLayout,
};
use rsan::region_mapping::ProjectionMatrix;
use rsan::trainer::{joint_loss, Mapping, RsanModel};
use rsan::{AblationFlags, ClassId, ScoreRule, SemanticTable, Tensor, TrainConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Random table with `seen + unseen` classes and strictly positive rows.
pub fn rand_table(k: usize, seen: usize, unseen: usize, rng: &mut impl Rng) -> SemanticTable<f64> {
    let n = seen + unseen;
    let data = (0..k * n).map(|_| rng.random_range(0.05..1.0)).collect();
    let mask = (0..n).map(|y| y < seen).collect();
    SemanticTable::new(Tensor::from_vec(&[n, k], data).unwrap(), mask).unwrap()
}

// ---- reference implementations over raw slices ----

/// `out[k][i][j] = Σ_c v[c][i][j] · p[c][k]`.
pub fn region_linear_ref(v: &[f64], (c, h, w): (usize, usize, usize), p: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * h * w];
    for kk in 0..k {
        for i in 0..h {
            for j in 0..w {
                let mut s = 0.0;
                for cc in 0..c {
                    s += v[(cc * h + i) * w + j] * p[cc * k + kk];
                }
                out[(kk * h + i) * w + j] = s;
            }
        }
    }
    out
}

/// Valid cross-correlation per channel, no flipping.
pub fn depthwise_ref(
    v: &[f64],
    (c, h, w): (usize, usize, usize),
    kern: &[f64],
    (kh, kw): (usize, usize),
) -> Vec<f64> {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0.0; c * oh * ow];
    for cc in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut s = 0.0;
                for p in 0..kh {
                    for q in 0..kw {
                        s += v[(cc * h + i + p) * w + j + q] * kern[(cc * kh + p) * kw + q];
                    }
                }
                out[(cc * oh + i) * ow + j] = s;
            }
        }
    }
    out
}

/// Row-major-first argmax of one H×W slice.
pub fn argmax_ref(xs: &[f64], w: usize) -> (usize, usize) {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    (best / w, best % w)
}

pub fn concentrate_ref(map: &[f64], (k, h, w): (usize, usize, usize)) -> f64 {
    let mut total = 0.0;
    for kk in 0..k {
        let slice = &map[kk * h * w..(kk + 1) * h * w];
        let (pi, pj) = argmax_ref(slice, w);
        for i in 0..h {
            for j in 0..w {
                let d = (i as f64 - pi as f64).powi(2) + (j as f64 - pj as f64).powi(2);
                total += slice[i * w + j] * d;
            }
        }
    }
    total
}

pub fn cosine_ref(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Cross-entropy over the seen classes with cosine logits `/ tau`, written
/// as `log Σ exp(z) − z_y` without stabilization tricks beyond the max.
pub fn classification_ref(a_hat: &[f64], y: usize, table: &SemanticTable<f64>, tau: f64) -> f64 {
    let col = |c: usize| table.row(ClassId(c)).to_f64_vec();
    let seen: Vec<usize> = (0..table.num_classes()).filter(|&c| table.seen_mask()[c]).collect();
    let z: Vec<f64> = seen.iter().map(|&c| cosine_ref(a_hat, &col(c)) / tau).collect();
    let zy = cosine_ref(a_hat, &col(y)) / tau;
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - zy
}

pub fn regression_loss_ref(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(S, U, H, T1)` by explicit per-class counting.
pub fn gzsl_ref(preds: &[usize], truths: &[usize], seen: &[bool]) -> (f64, f64, f64, f64) {
    let mut per_class: Vec<(f64, f64)> = vec![(0.0, 0.0); seen.len()];
    for (&p, &t) in preds.iter().zip(truths) {
        per_class[t].1 += 1.0;
        if p == t {
            per_class[t].0 += 1.0;
        }
    }
    let avg = |want: Option<bool>| {
        let accs: Vec<f64> = per_class
            .iter()
            .enumerate()
            .filter(|(c, (_, n))| *n > 0.0 && want.is_none_or(|s| seen[*c] == s))
            .map(|(_, (k, n))| k / n)
            .collect();
        if accs.is_empty() {
            0.0
        } else {
            accs.iter().sum::<f64>() / accs.len() as f64
        }
    };
    let (s, u) = (avg(Some(true)), avg(Some(false)));
    let h = if s + u == 0.0 { 0.0 } else { 2.0 * s * u / (s + u) };
    (s, u, h, avg(None))
}

// ---- gradient checking ----

/// One randomly drawn small training problem.
pub struct GradInstance {
    pub batch: Vec<(Tensor<f64>, ClassId)>,
    pub model: RsanModel<f64>,
    pub table: SemanticTable<f64>,
    pub cfg: TrainConfig,
    pub emb: AttributeEmbeddings<f64>,
}

impl GradInstance {
    pub fn random(rng: &mut impl Rng, flags: AblationFlags) -> Self {
        let c = rng.random_range(2..=4);
        let h = rng.random_range(2..=4);
        let w = rng.random_range(2..=4);
        let k = rng.random_range(2..=4);
        let seen = rng.random_range(2..=4);
        let table = rand_table(k, seen, 1, rng);
        let mut cfg = TrainConfig {
            flags,
            lambda1: 0.05,
            lambda2: 0.7,
            kernel_h: rng.random_range(1..=h.min(2)),
            kernel_w: rng.random_range(1..=w.min(2)),
            kernel_layout: if rng.random_bool(0.5) {
                KernelLayout::Full
            } else {
                KernelLayout::SharedSpatial
            },
            ..TrainConfig::default()
        };
        cfg.classifier.tau_s = 0.5;
        let d = rng.random_range(2..=3);
        let emb = AttributeEmbeddings::new(
            (0..k).map(|i| format!("a{i}")).collect(),
            rand_tensor(&[k, d], rng),
        )
        .unwrap();
        let model = RsanModel::init(c, k, &cfg, Some(&emb), rng).unwrap();
        let batch = (0..2)
            .map(|_| (rand_tensor(&[c, h, w], rng), ClassId(rng.random_range(0..seen))))
            .collect();
        Self {
            batch,
            model,
            table,
            cfg,
            emb,
        }
    }

    pub fn loss(&self, model: &RsanModel<f64>) -> f64 {
        let batch: Vec<_> = self.batch.iter().map(|(v, y)| (v, *y)).collect();
        joint_loss(&batch, model, &self.table, &self.cfg).unwrap().total
    }

    /// Smallest max/ReLU decision gap over the batch.
    pub fn margin(&self) -> f64 {
        self.batch
            .iter()
            .map(|(v, _)| self.model.decision_margin(v).unwrap())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Max over entries of `|fd − analytic|`, relative to the largest analytic
/// entry (or 1 when the gradient is tiny).
pub fn compare(fd: &[f64], analytic: &[f64]) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-3);
    fd.iter()
        .zip(analytic)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` over every entry of `x`.
pub fn central_diff(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.numel())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + FD_STEP;
            let up = f(&probe);
            probe.data_mut()[i] = orig - FD_STEP;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Relative errors `(mapping, kernels)` of the analytic joint-loss gradient.
pub fn check_model_grads(inst: &GradInstance) -> (f64, Option<f64>) {
    let batch: Vec<_> = inst.batch.iter().map(|(v, y)| (v, *y)).collect();
    let grads = joint_loss(&batch, &inst.model, &inst.table, &inst.cfg).unwrap().grads;
    let base = inst.model.mapping.tensor().clone();
    let fd = central_diff(&base, |p| {
        let mut m = inst.model.clone();
        *m.mapping.tensor_mut() = p.clone();
        inst.loss(&m)
    });
    let map_err = compare(&fd, grads.mapping.data());
    let kern_err = inst.model.kernels.as_ref().map(|bank| {
        let gk = grads.kernels.as_ref().unwrap();
        (0..bank.kernels.len())
            .map(|a| {
                let fd = central_diff(&bank.kernels[a], |kern| {
                    let mut m = inst.model.clone();
                    m.kernels.as_mut().unwrap().kernels[a] = kern.clone();
                    inst.loss(&m)
                });
                compare(&fd, gk[a].data())
            })
            .fold(0.0, f64::max)
    });
    (map_err, kern_err)
}

/// Relative error of the initializer-weight gradient, treating the kernels as
/// `reshape(E · W)` and the loss as the joint loss through them.
pub fn check_init_weight_grad(inst: &GradInstance) -> Option<f64> {
    let bank = inst.model.kernels.as_ref()?;
    if !inst.cfg.flags.use_semantic_init {
        return None;
    }
    let dims = bank.kernel_dims();
    let layout = bank.layout;
    let with_w = |w: &Tensor<f64>| {
        let kernels = kernels_from_embeddings(&inst.emb, w, dims, layout).unwrap();
        let mut m = inst.model.clone();
        m.kernels = Some(AttributeKernelBank::from_kernels(kernels, w.clone(), layout).unwrap());
        m
    };
    let model = with_w(&bank.w_init);
    let batch: Vec<_> = inst.batch.iter().map(|(v, y)| (v, *y)).collect();
    let gk = joint_loss(&batch, &model, &inst.table, &inst.cfg)
        .unwrap()
        .grads
        .kernels
        .unwrap();
    let analytic = rsan::attribute_constraint::init_weight_gradient(&inst.emb, &gk, layout).unwrap();
    let fd = central_diff(&bank.w_init, |w| inst.loss(&with_w(w)));
    Some(compare(&fd, analytic.data()))
}

/// Flag sets exercised by the gradient checks: the full model, region
/// mapping with dot logits, and the pooled baseline with either logit rule.
pub fn grad_flag_sets() -> Vec<AblationFlags> {
    let mut dot_region = AblationFlags::FULL;
    dot_region.use_cosine_embedding = false;
    let mut pooled_cos = AblationFlags::BASELINE;
    pooled_cos.use_cosine_embedding = true;
    let mut random_kernels = AblationFlags::FULL;
    random_kernels.use_semantic_init = false;
    vec![
        AblationFlags::FULL,
        dot_region,
        AblationFlags::BASELINE,
        pooled_cos,
        random_kernels,
    ]
}

/// Projection with the same values as a pooled baseline matrix.
pub fn as_region(v: &Tensor<f64>) -> Mapping<f64> {
    Mapping::Region(ProjectionMatrix::new(v.clone()).unwrap())
}

pub fn score_rule(flags: AblationFlags) -> ScoreRule {
    rsan::trainer::model::score_rule(&flags)
}

/// Runs `n` accepted gradient-check instances (those whose decision margin
/// exceeds `min_margin`) and returns the worst relative error per group
/// `(P, V, kernels, W_init)` together with the number of rejected draws.
pub fn gradient_sweep(n: usize, seed: u64, min_margin: f64) -> ([f64; 4], usize) {
    let mut r = rng(seed);
    let sets = grad_flag_sets();
    let mut worst = [0.0f64; 4];
    let (mut accepted, mut rejected) = (0, 0);
    while accepted < n {
        let flags = sets[accepted % sets.len()];
        let inst = GradInstance::random(&mut r, flags);
        if inst.margin() < min_margin {
            rejected += 1;
            continue;
        }
        accepted += 1;
        let (map_err, kern_err) = check_model_grads(&inst);
        let slot = if flags.use_region_mapping { 0 } else { 1 };
        worst[slot] = worst[slot].max(map_err);
        if let Some(e) = kern_err {
            worst[2] = worst[2].max(e);
        }
        if let Some(e) = check_init_weight_grad(&inst) {
            worst[3] = worst[3].max(e);
        }
    }
    (worst, rejected)
}

// ---- oracle agreement ----

/// Worst relative disagreement per operation between the library and the
/// reference loops above, over `n` random instances.
pub fn oracle_sweep(n: usize, seed: u64) -> Vec<(&'static str, f64)> {
    use rsan::attribute_constraint::regression_loss;
    use rsan::cosine_classifier::{classification_loss, gzsl_metrics};
    use rsan::region_mapping::concentrate_loss;
    use rsan::tensor_ops::{depthwise_conv_valid, max_argmax_trailing, region_linear};

    let mut r = rng(seed);
    let mut worst = [0.0f64; 6];
    let max_rel = |xs: &[f64], ys: &[f64]| {
        let scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(f64::MIN_POSITIVE);
        xs.iter().zip(ys).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    };
    for _ in 0..n {
        let (c, h, w, k) = (
            r.random_range(1..=6),
            r.random_range(1..=7),
            r.random_range(1..=7),
            r.random_range(1..=6),
        );
        let v = rand_tensor(&[c, h, w], &mut r);
        let p = rand_tensor(&[c, k], &mut r);
        let map = region_linear(&v, &p).unwrap();
        let want = region_linear_ref(v.data(), (c, h, w), p.data(), k);
        worst[0] = worst[0].max(max_rel(map.data(), &want));

        let (kh, kw) = (r.random_range(1..=h), r.random_range(1..=w));
        let kern = rand_tensor(&[c, kh, kw], &mut r);
        let conv = depthwise_conv_valid(&v, &kern).unwrap();
        let want = depthwise_ref(v.data(), (c, h, w), kern.data(), (kh, kw));
        worst[1] = worst[1].max(max_rel(conv.data(), &want));

        let peaks: Vec<_> = max_argmax_trailing(&map, 2)
            .unwrap()
            .locations
            .iter()
            .map(|l| (l[0], l[1]))
            .collect();
        let got = concentrate_loss(&map, &peaks).unwrap();
        worst[2] = worst[2].max(rel_diff(got, concentrate_ref(map.data(), (k, h, w))));

        let seen = r.random_range(1..=5);
        let table = rand_table(k, seen, r.random_range(1..=3), &mut r);
        let a_hat = rand_tensor(&[k], &mut r);
        if a_hat.norm() > 1e-3 {
            let tau = r.random_range(0.02..2.0);
            let cfg = rsan::ClassifierConfig {
                tau_s: tau,
                ..Default::default()
            };
            let y = r.random_range(0..seen);
            let got = classification_loss(&a_hat, ClassId(y), &table, &cfg).unwrap();
            let want = classification_ref(a_hat.data(), y, &table, tau);
            // Losses near zero are compared absolutely against the logit scale.
            let err = (got - want).abs() / want.abs().max(1.0);
            worst[3] = worst[3].max(err);
        }

        let a_reg = rand_tensor(&[k], &mut r);
        let a_true = rand_tensor(&[k], &mut r);
        let got = regression_loss(&a_reg, &a_true).unwrap();
        worst[4] = worst[4].max(rel_diff(got, regression_loss_ref(a_reg.data(), a_true.data())));

        let classes = table.num_classes();
        let m = r.random_range(1..40);
        let truths: Vec<usize> = (0..m).map(|_| r.random_range(0..classes)).collect();
        let preds: Vec<usize> = truths
            .iter()
            .map(|&t| if r.random_bool(0.6) { t } else { r.random_range(0..classes) })
            .collect();
        let ids = |xs: &[usize]| xs.iter().map(|&x| ClassId(x)).collect::<Vec<_>>();
        let got = gzsl_metrics(&ids(&preds), &ids(&truths), &table).unwrap();
        let (s, u, h_, t1) = gzsl_ref(&preds, &truths, table.seen_mask());
        for (a, b) in [(got.s, s), (got.u, u), (got.h, h_), (got.t1, t1)] {
            worst[5] = worst[5].max(rel_diff(a, b));
        }
    }
    [
        "region_linear",
        "depthwise_conv_valid",
        "concentrate_loss",
        "classification_loss",
        "regression_loss",
        "gzsl_metrics",
    ]
    .into_iter()
    .zip(worst)
    .collect()
}

// ---- invariance checks ----

pub type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Scaling â by a power of two leaves cosine losses and every decision
/// bit-identical; scaling a table row by any positive factor leaves
/// decisions unchanged.
pub fn check_scale_invariance(n: usize, seed: u64) -> Check {
    use rsan::cosine_classifier::{classification_loss, gzsl_predict, zsl_predict};
    let mut r = rng(seed);
    for _ in 0..n {
        let k = r.random_range(2..=6);
        let seen = r.random_range(1..=4);
        let table = rand_table(k, seen, r.random_range(1..=3), &mut r);
        let a_hat = rand_tensor(&[k], &mut r);
        if a_hat.norm() < 1e-3 {
            continue;
        }
        let cfg = rsan::ClassifierConfig::default();
        let y = ClassId(r.random_range(0..seen));
        let base_loss = classification_loss(&a_hat, y, &table, &cfg).map_err(|e| e.to_string())?;
        let base_zsl = zsl_predict(&a_hat, &table).map_err(|e| e.to_string())?;
        let base_gzsl = gzsl_predict(&a_hat, &table, &cfg).map_err(|e| e.to_string())?;
        for factor in [0.25, 0.5, 2.0, 8.0, 1024.0] {
            let scaled = a_hat.scale(factor);
            let l = classification_loss(&scaled, y, &table, &cfg).map_err(|e| e.to_string())?;
            ensure(l.to_bits() == base_loss.to_bits(), || {
                format!("loss changed under scale {factor}: {base_loss} vs {l}")
            })?;
            ensure(zsl_predict(&scaled, &table).unwrap() == base_zsl, || {
                format!("ZSL decision changed under scale {factor}")
            })?;
            ensure(gzsl_predict(&scaled, &table, &cfg).unwrap() == base_gzsl, || {
                format!("GZSL decision changed under scale {factor}")
            })?;
        }
        let target = ClassId(r.random_range(0..table.num_classes()));
        let scaled_table = table.with_row_scaled(target, 2.0).map_err(|e| e.to_string())?;
        ensure(zsl_predict(&a_hat, &scaled_table).unwrap() == base_zsl, || {
            "ZSL decision changed when a table row was scaled".into()
        })?;
    }
    Ok(())
}

/// Zero map → zero loss; a one-hot map (mass only at the peak) → zero loss;
/// mass one step from the peak costs exactly its squared distance.
pub fn check_concentrate_cases() -> Check {
    use rsan::region_mapping::concentrate_loss;
    let zero = Tensor::<f64>::zeros(&[2, 5, 4]);
    let l = concentrate_loss(&zero, &[(0, 0), (0, 0)]).map_err(|e| e.to_string())?;
    ensure(l == 0.0, || format!("zero map gave {l}"))?;
    for (pi, pj) in [(0, 0), (2, 3), (4, 1)] {
        let mut map = Tensor::<f64>::zeros(&[1, 5, 4]);
        map.data_mut()[pi * 4 + pj] = 3.5;
        let l = concentrate_loss(&map, &[(pi, pj)]).map_err(|e| e.to_string())?;
        ensure(l == 0.0, || format!("one-hot at ({pi},{pj}) gave {l}"))?;
    }
    let mut map = Tensor::<f64>::zeros(&[1, 5, 4]);
    map.data_mut()[2 * 4 + 2] = 1.0;
    map.data_mut()[4 * 4] = 0.5;
    let l = concentrate_loss(&map, &[(2, 2)]).map_err(|e| e.to_string())?;
    ensure(l == 0.5 * 8.0, || format!("two-point map gave {l}"))
}

/// Ties resolve to the lowest class id and the first row-major location, and
/// the same inputs give the same answers every time.
pub fn check_tie_breaks() -> Check {
    use rsan::cosine_classifier::{gzsl_predict, zsl_predict};
    use rsan::tensor_ops::max_argmax_trailing;
    let rows = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
    let table = SemanticTable::new(Tensor::from_vec(&[4, 2], rows).unwrap(), vec![true, false, false, true])
        .map_err(|e| e.to_string())?;
    let a_hat = Tensor::from_vec(&[2], vec![3.0, 0.0]).unwrap();
    let cfg = rsan::ClassifierConfig {
        gamma: 0.0,
        ..Default::default()
    };
    for _ in 0..3 {
        ensure(zsl_predict(&a_hat, &table).unwrap() == ClassId(1), || {
            "ZSL tie did not go to the lowest unseen id".into()
        })?;
        ensure(gzsl_predict(&a_hat, &table, &cfg).unwrap() == ClassId(0), || {
            "GZSL tie did not go to the lowest id".into()
        })?;
    }
    let flat = Tensor::from_vec(&[1, 3, 3], vec![0.0, 2.0, 1.0, 2.0, 0.0, 2.0, 1.0, 1.0, 1.0]).unwrap();
    let m = max_argmax_trailing(&flat, 2).map_err(|e| e.to_string())?;
    ensure(m.locations[0] == vec![0, 1], || format!("argmax tie went to {:?}", m.locations[0]))?;
    let constant = Tensor::<f64>::full(&[2, 2, 3], -1.0);
    let m = max_argmax_trailing(&constant, 2).map_err(|e| e.to_string())?;
    ensure(m.locations.iter().all(|l| l == &vec![0, 0]), || {
        "constant map did not peak at the origin".into()
    })
}

/// Everything a pipeline run produces, as bytes and bit patterns.
#[derive(Debug, PartialEq, Eq)]
pub struct PipelineTrace {
    pub dataset: Vec<u8>,
    pub checkpoint: Vec<u8>,
    pub history: Vec<u64>,
    pub metrics: Vec<u64>,
}

pub fn pipeline_trace(spec: &rsan::BenchSpec, cfg: &TrainConfig) -> rsan::Result<PipelineTrace> {
    use rsan::experiment::embeddings_for;
    use rsan::synthetic_bench::generate;
    let bench = generate::<f64>(spec)?;
    let emb = embeddings_for::<f64>(&bench.words)?;
    let outcome = rsan::trainer::train(cfg, &bench.dataset, Some(&emb))?;
    let zsl = rsan::evaluate::evaluate_zsl(&outcome.best.model, &bench.dataset)?;
    let gzsl = rsan::evaluate::evaluate_gzsl(&outcome.best.model, &bench.dataset, &cfg.classifier)?;
    let history = outcome
        .history
        .iter()
        .flat_map(|e| [e.lr, e.l_cls, e.l_con, e.l_reg, e.val_t1])
        .map(f64::to_bits)
        .collect();
    let metrics = [zsl.t1, gzsl.s, gzsl.u, gzsl.h, gzsl.t1].map(f64::to_bits).to_vec();
    Ok(PipelineTrace {
        dataset: bench.dataset.to_bytes()?,
        checkpoint: outcome.last.to_bytes()?,
        history,
        metrics,
    })
}

pub fn check_rerun_identical(spec: &rsan::BenchSpec, cfg: &TrainConfig) -> Check {
    let a = pipeline_trace(spec, cfg).map_err(|e| e.to_string())?;
    let b = pipeline_trace(spec, cfg).map_err(|e| e.to_string())?;
    ensure(a.dataset == b.dataset, || "dataset bytes differ".into())?;
    ensure(a.checkpoint == b.checkpoint, || "checkpoint bytes differ".into())?;
    ensure(a.history == b.history, || "training log differs".into())?;
    ensure(a.metrics == b.metrics, || "metrics differ".into())
}

/// With 1×1 maps the region mapping and the pooled baseline agree bitwise
/// for the same projection.
pub fn check_degeneracy(n: usize, seed: u64) -> Check {
    use rsan::region_mapping::{baseline_predict, predict_semantic};
    let mut r = rng(seed);
    for _ in 0..n {
        let c = r.random_range(1..=64);
        let k = r.random_range(1..=32);
        let v = rand_tensor(&[c, 1, 1], &mut r).scale(r.random_range(0.01..100.0));
        let proj = rand_tensor(&[c, k], &mut r);
        let region = predict_semantic(&v, &ProjectionMatrix::new(proj.clone()).unwrap()).map_err(|e| e.to_string())?;
        let pooled = baseline_predict(&v, &proj).map_err(|e| e.to_string())?;
        let same = region
            .data()
            .iter()
            .zip(pooled.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same && region.shape() == pooled.shape(), || {
            format!("C={c} K={k}: region {:?} vs pooled {:?}", region.data(), pooled.data())
        })?;
        let as_model = |mapping| RsanModel {
            mapping,
            kernels: None,
            score_rule: ScoreRule::Cosine,
        };
        let a = as_model(as_region(&proj)).predict(&v).unwrap();
        let b = as_model(Mapping::Pooled(proj.clone())).predict(&v).unwrap();
        ensure(a == b, || "model-level predictions differ".into())?;
    }
    Ok(())
}

/// Small benchmark used by the quick pipeline tests.
pub fn small_spec(seed: u64) -> rsan::BenchSpec {
    rsan::BenchSpec {
        c: 8,
        h: 5,
        w: 5,
        k: 6,
        num_seen: 5,
        num_unseen: 2,
        samples_per_class: 10,
        active_per_class: 2,
        seed,
        ..rsan::BenchSpec::default()
    }
}

pub fn small_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batches_per_epoch: 4,
        episode_m: 3,
        seed,
        ..TrainConfig::desk()
    }
}
