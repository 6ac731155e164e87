//! Planted-attribute benchmark: feature maps where every active attribute
//! adds `strength · signature` at one spatial cell on top of Gaussian noise.
//!
//! Seen classes draw a few active attributes each (together covering all K);
//! every unseen class is a convex mix of a distinct pair of seen classes, so it shares its
//! local parts with them. Word embeddings are noisy projections of the
//! signatures, which gives semantic kernel initialization a real prior.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attribute_constraint::AttributeWords;
use crate::cosine_classifier::{ClassId, SemanticTable};
use crate::dataset::{Dataset, PlantLocations, Sample, Split};
use crate::echo::ConfigEcho;
use crate::error::{Result, RsanError};
use crate::region_mapping::Peak;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::config::parse_bool;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub num_seen: usize,
    pub num_unseen: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    pub embedding_dim: usize,
    pub seed: u64,
    /// Active attributes per seen class.
    pub active_per_class: usize,
    /// Orthonormal signatures; needs `c ≥ k`.
    pub orthogonal: bool,
    /// Std of the noise added to each projected word vector.
    pub embedding_noise: f64,
    pub words_per_attribute: usize,
    /// Appearance change of shared attributes in unseen classes, in [0, 1]:
    /// unseen samples plant each attribute along a pattern rotated away from
    /// its signature by a random angle up to `domain_shift · 90°`.
    pub domain_shift: f64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            c: 32,
            h: 14,
            w: 14,
            k: 16,
            num_seen: 12,
            num_unseen: 4,
            samples_per_class: 30,
            noise_sigma: 0.05,
            embedding_dim: 16,
            seed: 0,
            active_per_class: 4,
            orthogonal: true,
            embedding_noise: 0.05,
            words_per_attribute: 2,
            domain_shift: 0.0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| RsanError::Config(format!("invalid value '{value}' for '{key}'")))
}

impl BenchSpec {
    /// Applies one `key=value` setting; `Ok(false)` for foreign keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "C" => self.c = parse(key, value)?,
            "H" => self.h = parse(key, value)?,
            "W" => self.w = parse(key, value)?,
            "K" => self.k = parse(key, value)?,
            "num_seen" => self.num_seen = parse(key, value)?,
            "num_unseen" => self.num_unseen = parse(key, value)?,
            "samples_per_class" => self.samples_per_class = parse(key, value)?,
            "noise_sigma" => self.noise_sigma = parse(key, value)?,
            "embedding_dim" => self.embedding_dim = parse(key, value)?,
            "bench_seed" => self.seed = parse(key, value)?,
            "active_per_class" => self.active_per_class = parse(key, value)?,
            "orthogonal" => self.orthogonal = parse_bool(key, value)?,
            "embedding_noise" => self.embedding_noise = parse(key, value)?,
            "words_per_attribute" => self.words_per_attribute = parse(key, value)?,
            "domain_shift" => self.domain_shift = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn echo(&self) -> ConfigEcho {
        let mut e = ConfigEcho::new();
        e.set("C", self.c);
        e.set("H", self.h);
        e.set("W", self.w);
        e.set("K", self.k);
        e.set("num_seen", self.num_seen);
        e.set("num_unseen", self.num_unseen);
        e.set("samples_per_class", self.samples_per_class);
        e.set("noise_sigma", self.noise_sigma);
        e.set("embedding_dim", self.embedding_dim);
        e.set("bench_seed", self.seed);
        e.set("active_per_class", self.active_per_class);
        e.set("orthogonal", self.orthogonal);
        e.set("embedding_noise", self.embedding_noise);
        e.set("words_per_attribute", self.words_per_attribute);
        e.set("domain_shift", self.domain_shift);
        e
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RsanError::Config(m));
        for (name, v) in [
            ("C", self.c),
            ("H", self.h),
            ("W", self.w),
            ("K", self.k),
            ("num_seen", self.num_seen),
            ("samples_per_class", self.samples_per_class),
            ("embedding_dim", self.embedding_dim),
            ("active_per_class", self.active_per_class),
            ("words_per_attribute", self.words_per_attribute),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.orthogonal && self.c < self.k {
            return bad(format!(
                "{} orthogonal signatures do not fit in C = {} channels",
                self.k, self.c
            ));
        }
        if self.active_per_class > self.k {
            return bad(format!(
                "active_per_class = {} exceeds K = {}",
                self.active_per_class, self.k
            ));
        }
        if self.num_seen * self.active_per_class < self.k {
            return bad(format!(
                "{} seen classes × {} active attributes cannot cover K = {}",
                self.num_seen, self.active_per_class, self.k
            ));
        }
        if self.num_unseen > 0 && self.num_seen < 2 {
            return bad("unseen classes are mixes of two seen classes; need ≥ 2 seen".into());
        }
        if self.h > u16::MAX as usize - 1 || self.w > u16::MAX as usize - 1 {
            return bad("spatial extents must fit the plant block".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite())
            || !(self.embedding_noise >= 0.0 && self.embedding_noise.is_finite())
        {
            return bad("noise levels must be finite and nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.domain_shift) {
            return bad(format!("domain_shift must be in [0, 1], got {}", self.domain_shift));
        }
        Ok(())
    }
}

/// Everything the generator knows, including ground truth the dataset file
/// does not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark<T> {
    pub dataset: Dataset<T>,
    pub words: Vec<AttributeWords>,
    /// K×C unit-norm signatures.
    pub signatures: Tensor<f64>,
    /// K×C patterns planted in unseen-class samples; equal to `signatures`
    /// without domain shift.
    pub unseen_patterns: Tensor<f64>,
    /// Nearest seen classes of each unseen class.
    pub similar: BTreeMap<ClassId, Vec<ClassId>>,
}

/// Minimum angle between non-orthogonal signatures, as a cosine bound.
const MAX_SIGNATURE_COS: f64 = 0.5;
const MAX_ATTEMPTS: usize = 10_000;

fn unit_normal<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> bool {
    let n = dot(v, v).sqrt();
    if n < 1e-12 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

fn signatures<R: Rng>(spec: &BenchSpec, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let mut sigs: Vec<Vec<f64>> = Vec::with_capacity(spec.k);
    let mut attempts = 0;
    while sigs.len() < spec.k {
        attempts += 1;
        if attempts > MAX_ATTEMPTS * spec.k {
            return Err(RsanError::Config(format!(
                "could not place {} signatures in {} channels with pairwise cosine ≤ {MAX_SIGNATURE_COS}",
                spec.k, spec.c
            )));
        }
        let mut v = unit_normal(spec.c, rng);
        if spec.orthogonal {
            // Gram–Schmidt, twice for stability.
            for _ in 0..2 {
                for s in &sigs {
                    let d = dot(&v, s);
                    v.iter_mut().zip(s).for_each(|(x, y)| *x -= d * y);
                }
            }
        }
        if !normalize(&mut v) {
            continue;
        }
        if !spec.orthogonal && sigs.iter().any(|s| dot(&v, s).abs() > MAX_SIGNATURE_COS) {
            continue;
        }
        sigs.push(v);
    }
    Ok(sigs)
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

const DISTINCT_COS: f64 = 1.0 - 1e-6;
/// Unseen classes come from distinct seen pairs and must also be clearly
/// apart from each other.
const UNSEEN_PAIR_COS: f64 = 0.9;

fn class_table<R: Rng>(spec: &BenchSpec, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let k = spec.k;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for _ in 0..MAX_ATTEMPTS {
        // Cover every attribute once, in random order, then fill at random.
        let mut cover: Vec<usize> = (0..k).collect();
        cover.shuffle(rng);
        let mut active: Vec<Vec<usize>> = vec![Vec::new(); spec.num_seen];
        for (i, a) in cover.into_iter().enumerate() {
            active[i % spec.num_seen].push(a);
        }
        let mut ok = true;
        for set in active.iter_mut() {
            if set.len() > spec.active_per_class {
                ok = false;
                break;
            }
            while set.len() < spec.active_per_class {
                let a = rng.random_range(0..k);
                if !set.contains(&a) {
                    set.push(a);
                }
            }
        }
        if !ok {
            continue;
        }
        rows = active
            .iter()
            .map(|set| {
                let mut row = vec![0.0; k];
                for &a in set {
                    row[a] = rng.random_range(0.5..1.5);
                }
                row
            })
            .collect();
        let distinct = (0..rows.len())
            .all(|i| (0..i).all(|j| cos(&rows[i], &rows[j]) < DISTINCT_COS));
        if distinct {
            break;
        }
        rows.clear();
    }
    if rows.is_empty() {
        return Err(RsanError::Config("could not draw distinct seen-class attributes".into()));
    }
    let seen = rows.len();
    let mut used_pairs: Vec<(usize, usize)> = Vec::new();
    let mut tries = 0;
    while rows.len() < seen + spec.num_unseen {
        tries += 1;
        if tries > MAX_ATTEMPTS {
            return Err(RsanError::Config(format!(
                "could not draw {} distinct unseen classes from {seen} seen classes",
                spec.num_unseen
            )));
        }
        let pair = index::sample(rng, seen, 2);
        let key = (pair.index(0).min(pair.index(1)), pair.index(0).max(pair.index(1)));
        let w = rng.random_range(0.3..0.7);
        if used_pairs.contains(&key) {
            continue;
        }
        let row: Vec<f64> = rows[pair.index(0)]
            .iter()
            .zip(&rows[pair.index(1)])
            .map(|(a, b)| w * a + (1.0 - w) * b)
            .collect();
        if rows[..seen].iter().any(|r| cos(&row, r) >= DISTINCT_COS) {
            continue;
        }
        if rows[seen..].iter().any(|r| cos(&row, r) >= UNSEEN_PAIR_COS) {
            continue;
        }
        used_pairs.push(key);
        rows.push(row);
    }
    Ok(rows)
}

/// For each unseen class, the `n` seen classes with the highest attribute
/// cosine (ties to the lower id).
pub fn similar_classes<T: Scalar>(table: &SemanticTable<T>, n: usize) -> BTreeMap<ClassId, Vec<ClassId>> {
    let mut out = BTreeMap::new();
    for u in table.unseen_classes() {
        let ru = table.row(u).to_f64_vec();
        let mut scored: Vec<(f64, ClassId)> = table
            .seen_classes()
            .into_iter()
            .map(|s| (cos(&ru, &table.row(s).to_f64_vec()), s))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        out.insert(u, scored.into_iter().take(n).map(|(_, s)| s).collect());
    }
    out
}

/// `cos θ · s + sin θ · u` per signature, with `u` a random unit vector
/// orthogonal to `s` and `θ` uniform in `[0, shift · π/2]`.
fn shifted_patterns<R: Rng>(sigs: &[Vec<f64>], shift: f64, rng: &mut R) -> Vec<Vec<f64>> {
    if shift == 0.0 {
        return sigs.to_vec();
    }
    sigs.iter()
        .map(|s| {
            let mut u = unit_normal(s.len(), rng);
            let d = dot(&u, s);
            u.iter_mut().zip(s).for_each(|(x, y)| *x -= d * y);
            if !normalize(&mut u) {
                return s.clone();
            }
            let theta = shift * rng.random_range(0.0..1.0) * std::f64::consts::FRAC_PI_2;
            s.iter()
                .zip(&u)
                .map(|(a, b)| theta.cos() * a + theta.sin() * b)
                .collect()
        })
        .collect()
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds the benchmark. Class structure comes from stream 0 of the seed;
/// sample `i` uses its own stream `i + 1`, so samples are independent of
/// generation order.
pub fn generate<T: Scalar>(spec: &BenchSpec) -> Result<Benchmark<T>> {
    spec.validate()?;
    let mut rng = sample_rng(spec.seed, 0);
    let sigs = signatures(spec, &mut rng)?;
    let rows = class_table(spec, &mut rng)?;
    let (c, h, w, k) = (spec.c, spec.h, spec.w, spec.k);
    let shifted = shifted_patterns(&sigs, spec.domain_shift, &mut sample_rng(spec.seed, u64::MAX));
    let num_classes = rows.len();

    let table_data: Vec<f64> = rows.iter().flatten().copied().collect();
    let seen_mask: Vec<bool> = (0..num_classes).map(|y| y < spec.num_seen).collect();
    let table = SemanticTable::new(Tensor::from_f64(&[num_classes, k], &table_data)?, seen_mask)?;

    // Word vectors: a fixed random d×C projection of each signature plus noise.
    let d = spec.embedding_dim;
    let proj: Vec<f64> = (0..d * c)
        .map(|_| rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt())
        .collect();
    let words: Vec<AttributeWords> = sigs
        .iter()
        .enumerate()
        .map(|(a, s)| AttributeWords {
            id: format!("attr{a:02}"),
            vectors: (0..spec.words_per_attribute)
                .map(|_| {
                    (0..d)
                        .map(|r| {
                            dot(&proj[r * c..(r + 1) * c], s)
                                + spec.embedding_noise * rng.sample::<f64, _>(StandardNormal)
                        })
                        .collect()
                })
                .collect(),
        })
        .collect();

    // Per-class split assignment: 60 / 20 / 20 for seen classes.
    let n = spec.samples_per_class;
    let n_train = ((n as f64) * 0.6).round().max(1.0) as usize;
    let n_val = ((n as f64) * 0.2).round() as usize;
    let mut samples = Vec::with_capacity(num_classes * n);
    for (y, row) in rows.iter().enumerate() {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut split_of = vec![Split::Test; n];
        if y < spec.num_seen {
            for (rank, &i) in order.iter().enumerate() {
                split_of[i] = if rank < n_train {
                    Split::Train
                } else if rank < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
        }
        for &split in &split_of {
            let mut srng = sample_rng(spec.seed, (samples.len() + 1) as u64);
            let mut data: Vec<f64> = (0..c * h * w)
                .map(|_| spec.noise_sigma * srng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut plants: PlantLocations = vec![None; k];
            let patterns = if y < spec.num_seen { &sigs } else { &shifted };
            for (a, &strength) in row.iter().enumerate() {
                if strength <= 0.0 {
                    continue;
                }
                let (pi, pj) = (srng.random_range(0..h), srng.random_range(0..w));
                plants[a] = Some((pi, pj));
                for ch in 0..c {
                    data[(ch * h + pi) * w + pj] += strength * patterns[a][ch];
                }
            }
            samples.push(Sample {
                features: Tensor::from_f64(&[c, h, w], &data)?,
                label: ClassId(y),
                split,
                plants: Some(plants),
            });
        }
    }

    let dataset = Dataset {
        samples,
        table,
        dims: (c, h, w),
        seed: spec.seed,
        config_hash: spec.echo().hash_u64(),
    };
    let similar = similar_classes(&dataset.table, 2);
    let sig_flat: Vec<f64> = sigs.iter().flatten().copied().collect();
    let shifted_flat: Vec<f64> = shifted.iter().flatten().copied().collect();
    Ok(Benchmark {
        dataset,
        words,
        signatures: Tensor::from_vec(&[k, c], sig_flat)?,
        unseen_patterns: Tensor::from_vec(&[k, c], shifted_flat)?,
        similar,
    })
}

/// Least-squares decoding of planted strengths from one feature map: the
/// spatial sum of `V` equals `Σ_k a_k · s_k` without noise, so `a` solves the
/// normal equations `(S Sᵀ) a = S · ΣV`.
pub fn recover_strengths<T: Scalar>(features: &Tensor<T>, signatures: &Tensor<f64>) -> Result<Vec<f64>> {
    let (c, h, w) = features.dims3("recover_strengths", "feature map")?;
    let (k, sc) = signatures.dims2("recover_strengths", "signature matrix")?;
    if sc != c {
        return Err(RsanError::dim(
            "recover_strengths",
            format!("signatures have {sc} channels, features {c}"),
        ));
    }
    let v = features.data();
    let total: Vec<f64> = (0..c)
        .map(|ch| v[ch * h * w..(ch + 1) * h * w].iter().map(|x| x.to_acc()).sum())
        .collect();
    let s = signatures.data();
    let row = |a: usize| &s[a * c..(a + 1) * c];
    // Augmented system [S Sᵀ | S·total], solved by partial-pivot elimination.
    let mut m: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut r: Vec<f64> = (0..k).map(|j| dot(row(i), row(j))).collect();
            r.push(dot(row(i), &total));
            r
        })
        .collect();
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        if m[pivot][col].abs() < 1e-12 {
            return Err(RsanError::Domain {
                op: "recover_strengths",
                detail: "signatures are linearly dependent".into(),
            });
        }
        m.swap(col, pivot);
        let pivot_row = m[col].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r != col {
                let f = row[col] / pivot_row[col];
                for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
            }
        }
    }
    Ok((0..k).map(|i| m[i][k] / m[i][i]).collect())
}

/// Fraction of active attributes whose saliency peak lies within Chebyshev
/// distance 1 of its plant. `peaks[s][k]` is the peak of attribute `k` in
/// sample `s`. Returns 0 when nothing is active.
pub fn localization_score(peaks: &[Vec<Peak>], plants: &[PlantLocations]) -> f64 {
    let mut hits = 0usize;
    let mut active = 0usize;
    for (sample_peaks, sample_plants) in peaks.iter().zip(plants) {
        for (peak, plant) in sample_peaks.iter().zip(sample_plants) {
            if let Some((pi, pj)) = plant {
                active += 1;
                if peak.0.abs_diff(*pi) <= 1 && peak.1.abs_diff(*pj) <= 1 {
                    hits += 1;
                }
            }
        }
    }
    if active == 0 {
        0.0
    } else {
        hits as f64 / active as f64
    }
}

/// Where the samples of one class ended up.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionRow {
    pub class: ClassId,
    pub total: usize,
    pub own: f64,
    pub similar: Vec<(ClassId, f64)>,
    pub other: f64,
}

/// Per-class proportions predicted as the class itself, as each of its
/// listed similar classes, and as anything else. Classes without samples
/// are skipped.
pub fn confusion_breakdown(
    predictions: &[ClassId],
    truths: &[ClassId],
    similar: &BTreeMap<ClassId, Vec<ClassId>>,
) -> Vec<ConfusionRow> {
    let mut rows = Vec::new();
    for (&class, sims) in similar {
        let preds: Vec<ClassId> = predictions
            .iter()
            .zip(truths)
            .filter(|(_, &t)| t == class)
            .map(|(&p, _)| p)
            .collect();
        if preds.is_empty() {
            continue;
        }
        let n = preds.len() as f64;
        let share = |y: ClassId| preds.iter().filter(|&&p| p == y).count() as f64 / n;
        let sims: Vec<ClassId> = sims.iter().copied().filter(|&s| s != class).collect();
        let own = share(class);
        let similar: Vec<(ClassId, f64)> = sims.iter().map(|&s| (s, share(s))).collect();
        let listed = preds.iter().filter(|&&p| p == class || sims.contains(&p)).count();
        rows.push(ConfusionRow {
            class,
            total: preds.len(),
            own,
            similar,
            other: (preds.len() - listed) as f64 / n,
        });
    }
    rows
}
