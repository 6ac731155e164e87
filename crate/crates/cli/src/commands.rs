use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rsan::attribute_constraint::{read_word_vectors, write_word_vectors, AttributeEmbeddings};
use rsan::cosine_classifier::MetricsRecord;
use rsan::evaluate::{evaluate_gzsl, evaluate_zsl, gzsl_predictions, Predictions};
use rsan::experiment::{ablate, embeddings_for, sweep, SweepPoint};
use rsan::region_mapping::{write_saliency_csv, write_saliency_pgm};
use rsan::synthetic_bench::{confusion_breakdown, generate, similar_classes};
use rsan::trainer::{write_training_log, Trainer};
use rsan::{Checkpoint64, ConfigEcho, Dataset64, Result, RsanError, Split};

use crate::run_config::{EvalMode, RunConfig};

/// Everything a command needs: resolved settings and the output directory.
pub struct Ctx {
    pub rc: RunConfig,
    pub out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes `<command>.echo` with every resolved setting and its hash.
    fn write_echo(&self, name: &str, echo: &ConfigEcho) -> Result<()> {
        let mut f = BufWriter::new(File::create(self.path(&format!("{name}.echo")))?);
        writeln!(f, "# config_hash={}", echo.hash())?;
        f.write_all(echo.to_text().as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Dataset and attribute embeddings: loaded from `dataset`/`words` when
/// given, generated from the benchmark keys otherwise.
fn load_data(rc: &RunConfig) -> Result<(Dataset64, Option<AttributeEmbeddings<f64>>)> {
    let Some(path) = &rc.dataset else {
        let b = generate::<f64>(&rc.bench)?;
        let emb = embeddings_for(&b.words)?;
        return Ok((b.dataset, Some(emb)));
    };
    let data = Dataset64::load(path)?;
    let emb = match &rc.words {
        Some(w) => Some(embeddings_for(&read_word_vectors(BufReader::new(File::open(w)?))?)?),
        None => None,
    };
    Ok((data, emb))
}

fn load_checkpoint(rc: &RunConfig) -> Result<Checkpoint64> {
    let path = rc
        .checkpoint
        .as_ref()
        .ok_or_else(|| RsanError::Config("this command needs checkpoint=<path>".into()))?;
    Checkpoint64::load(path)
}

pub fn generate_cmd(ctx: &Ctx) -> Result<()> {
    let echo = ctx.rc.bench.echo();
    let b = generate::<f64>(&ctx.rc.bench)?;
    b.dataset.save(&ctx.path("dataset.feat"))?;
    let mut w = create(&ctx.path("words.txt"))?;
    writeln!(w, "# seed={} config_hash={}", ctx.rc.bench.seed, echo.hash())?;
    write_word_vectors(&b.words, &mut w)?;
    w.flush()?;
    ctx.write_echo("generate", &echo)?;
    println!(
        "generated {} samples ({} classes, {} attributes) seed={} config_hash={}",
        b.dataset.samples.len(),
        b.dataset.table.num_classes(),
        b.dataset.num_attributes(),
        ctx.rc.bench.seed,
        echo.hash()
    );
    Ok(())
}

pub fn train_cmd(ctx: &Ctx) -> Result<()> {
    let rc = &ctx.rc;
    let (data, emb) = load_data(rc)?;
    let echo = rc.echo();
    let outcome = Trainer::new(&rc.train, &data, emb.as_ref(), echo.clone())?.run()?;
    outcome.best.save(&ctx.path("checkpoint.ckpt"))?;
    outcome.last.save(&ctx.path("last.ckpt"))?;
    let mut log = create(&ctx.path("train_log.csv"))?;
    writeln!(log, "# seed={} config_hash={}", rc.train.seed, echo.hash())?;
    write_training_log(&outcome.history, &mut log)?;
    log.flush()?;
    ctx.write_echo("train", &echo)?;
    println!(
        "trained {} epochs; best epoch {} seed={} config_hash={}",
        outcome.history.len(),
        outcome.best.epoch,
        rc.train.seed,
        echo.hash()
    );
    Ok(())
}

/// Read-only on the checkpoint and dataset; appends to `metrics.csv`.
pub fn eval_cmd(ctx: &Ctx) -> Result<()> {
    let rc = &ctx.rc;
    let ckpt = load_checkpoint(rc)?;
    let (data, _) = load_data(rc)?;
    let cls = &rc.train.classifier;
    let (metrics, split, gamma) = match rc.mode {
        EvalMode::Zsl => (evaluate_zsl(&ckpt.model, &data)?, "test_unseen", 0.0),
        EvalMode::Gzsl => {
            let m = evaluate_gzsl(&ckpt.model, &data, cls)?;
            let p = Predictions::compute(&ckpt.model, &data, data.indices_in(Split::Test))?;
            let preds = gzsl_predictions(&p, &data, cls, &ckpt.model)?;
            let rows = confusion_breakdown(&preds, &p.truths, &similar_classes(&data.table, 2));
            let mut f = create(&ctx.path("confusion.csv"))?;
            writeln!(f, "# seed={} config_hash={:016x} gamma={}", ckpt.seed, ckpt.config_hash, cls.gamma)?;
            writeln!(f, "class,total,own,similar,other")?;
            for r in rows {
                let sims: Vec<String> = r.similar.iter().map(|(c, s)| format!("{c}:{s:.6}")).collect();
                writeln!(f, "{},{},{:.6},{},{:.6}", r.class, r.total, r.own, sims.join(";"), r.other)?;
            }
            f.flush()?;
            (m, "test", cls.gamma)
        }
    };
    let record = MetricsRecord {
        dataset: rc.dataset_name.clone(),
        split: split.into(),
        metrics,
        gamma,
        tau_s: cls.tau_s,
        seed: ckpt.seed,
        config_hash: format!("{:016x}", ckpt.config_hash),
    };
    record.append_to(&ctx.path("metrics.csv"))?;
    ctx.write_echo("eval", &rc.echo())?;
    println!("{}", MetricsRecord::HEADER);
    println!("{}", record.to_csv_line());
    Ok(())
}

pub fn ablate_cmd(ctx: &Ctx) -> Result<()> {
    let rc = &ctx.rc;
    let (data, emb) = load_data(rc)?;
    let entries = ablate(&rc.train, &data, emb.as_ref())?;
    let mut f = create(&ctx.path("ablation.csv"))?;
    writeln!(
        f,
        "row,name,region_mapping,concentrate,cosine_embedding,regression,semantic_init,zsl_T1,S,U,H,seed,config_hash"
    )?;
    for (i, e) in entries.iter().enumerate() {
        let r = &e.result;
        let fl = rsan::TrainConfig::from_echo(&r.echo)?.flags;
        let b = |x: bool| x as u8;
        writeln!(
            f,
            "{i},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            e.name,
            b(fl.use_region_mapping),
            b(fl.use_concentrate),
            b(fl.use_cosine_embedding),
            b(fl.use_regression),
            b(fl.use_semantic_init),
            r.zsl.t1,
            r.gzsl.s,
            r.gzsl.u,
            r.gzsl.h,
            rc.train.seed,
            r.echo.hash()
        )?;
        let mut row_echo = rc.echo();
        row_echo.extend(&r.echo);
        ctx.write_echo(&format!("ablation_row{i}"), &row_echo)?;
        println!("{:<16} ZSL {:.3}  S {:.3} U {:.3} H {:.3}", e.name, r.zsl.t1, r.gzsl.s, r.gzsl.u, r.gzsl.h);
    }
    f.flush()?;
    ctx.write_echo("ablate", &rc.echo())?;
    Ok(())
}

pub fn sweep_cmd(ctx: &Ctx) -> Result<()> {
    let rc = &ctx.rc;
    let axis = rc
        .axis
        .ok_or_else(|| RsanError::Config("sweep needs axis=kernel_size|episode_shape|gamma".into()))?;
    let values = rc.values.clone().unwrap_or_else(|| axis.default_values());
    let (data, emb) = load_data(rc)?;
    let points = sweep(axis, &values, &rc.train, &data, emb.as_ref())?;
    let echo = rc.echo();
    let mut f = create(&ctx.path(&format!("sweep_{}.csv", axis.name())))?;
    writeln!(f, "# seed={} config_hash={}", rc.train.seed, echo.hash())?;
    writeln!(f, "{}", SweepPoint::HEADER)?;
    for p in &points {
        let line = p.to_csv_line(axis);
        writeln!(f, "{line}")?;
        println!("{line}");
    }
    f.flush()?;
    ctx.write_echo(&format!("sweep_{}", axis.name()), &echo)?;
    Ok(())
}

pub fn visualize_cmd(ctx: &Ctx) -> Result<()> {
    let rc = &ctx.rc;
    let ckpt = load_checkpoint(rc)?;
    let (data, _) = load_data(rc)?;
    let k = ckpt.model.num_attributes();
    let attrs: Vec<usize> = rc.attributes.clone().unwrap_or_else(|| (0..k).collect());
    let hash = format!("{:016x}", ckpt.config_hash);
    for &s in &rc.samples {
        let sample = data
            .samples
            .get(s)
            .ok_or_else(|| RsanError::Config(format!("sample {s} out of range ({} samples)", data.samples.len())))?;
        let sal = ckpt.model.saliency(&sample.features)?;
        for &a in &attrs {
            if a >= k {
                return Err(RsanError::Config(format!("attribute {a} out of range ({k} attributes)")));
            }
            let map = sal.map.slice_outer(a);
            let (pi, pj) = sal.peaks[a];
            let header = [
                ("seed", ckpt.seed.to_string()),
                ("config_hash", hash.clone()),
                ("sample", s.to_string()),
                ("label", sample.label.to_string()),
                ("attribute", a.to_string()),
                ("peak", format!("{pi} {pj}")),
            ];
            let stem = format!("saliency_s{s}_a{a}");
            let mut csv = create(&ctx.path(&format!("{stem}.csv")))?;
            write_saliency_csv(&map, &header, &mut csv)?;
            csv.flush()?;
            let mut pgm = create(&ctx.path(&format!("{stem}.pgm")))?;
            write_saliency_pgm(&map, &header, &mut pgm)?;
            pgm.flush()?;
        }
    }
    ctx.write_echo("visualize", &rc.echo())?;
    println!(
        "wrote {} saliency maps to {}",
        rc.samples.len() * attrs.len(),
        ctx.out.display()
    );
    Ok(())
}
