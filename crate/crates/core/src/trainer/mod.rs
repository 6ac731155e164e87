//! Episodic training of the joint objective.
//!
//! Two ChaCha8 streams derive from the seed: stream 0 initializes parameters,
//! stream 1 draws episodes. Every reduction runs in a fixed order, so the same
//! config, seed and dataset reproduce the final checkpoint bit for bit.

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod optim;
pub mod sampler;

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attribute_constraint::AttributeEmbeddings;
use crate::cosine_classifier::{gzsl_metrics, seen_predict_with, ClassId};
use crate::dataset::{Dataset, Split};
use crate::echo::ConfigEcho;
use crate::error::{Result, RsanError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use checkpoint::{Checkpoint, RngState};
pub use config::{AblationFlags, TrainConfig};
pub use model::{joint_loss, JointLoss, Mapping, ModelGrads, RsanModel};
pub use optim::{Sgd, StepSchedule};
pub use sampler::{sample_episode, ClassIndex, EpisodeBatch};

const INIT_STREAM: u64 = 0;
const SAMPLE_STREAM: u64 = 1;

/// Per-epoch means of the loss terms plus validation accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    pub l_cls: f64,
    pub l_con: f64,
    pub l_reg: f64,
    pub val_t1: f64,
}

impl EpochRecord {
    pub const HEADER: &'static str = "epoch,lr,l_cls,l_con,l_reg,val_T1";

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{:e},{:.9},{:.9},{:.9},{:.6}",
            self.epoch, self.lr, self.l_cls, self.l_con, self.l_reg, self.val_t1
        )
    }
}

pub fn write_training_log<W: Write>(history: &[EpochRecord], out: &mut W) -> Result<()> {
    writeln!(out, "{}", EpochRecord::HEADER)?;
    for r in history {
        writeln!(out, "{}", r.to_csv_line())?;
    }
    Ok(())
}

/// Macro accuracy over seen classes on `split`, predicting among seen classes.
pub fn seen_accuracy<T: Scalar>(model: &RsanModel<T>, data: &Dataset<T>, split: Split) -> Result<f64> {
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for s in data.samples.iter().filter(|s| s.split == split && data.table.is_seen(s.label)) {
        let a_hat = model.predict(&s.features)?;
        preds.push(seen_predict_with(&a_hat, &data.table, model.score_rule)?);
        truths.push(s.label);
    }
    if truths.is_empty() {
        return Err(RsanError::Data(format!("no seen-class samples in the {split:?} split")));
    }
    Ok(gzsl_metrics(&preds, &truths, &data.table)?.t1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub history: Vec<EpochRecord>,
    /// Highest validation T1; later epochs win ties.
    pub best: Checkpoint<T>,
    pub last: Checkpoint<T>,
}

/// Stateful training loop. On a non-finite loss `run` stops and
/// [`last_good`](Self::last_good) still holds the most recent finished epoch.
pub struct Trainer<'a, T> {
    cfg: TrainConfig,
    data: &'a Dataset<T>,
    echo: ConfigEcho,
    index: ClassIndex,
    model: RsanModel<T>,
    opt: Sgd<T>,
    rng: ChaCha8Rng,
    epoch: usize,
    history: Vec<EpochRecord>,
    best: Option<(f64, Checkpoint<T>)>,
    last_good: Checkpoint<T>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    /// `echo` is recorded in checkpoints and hashed; pass the full run
    /// configuration there, or `cfg.echo()` for the trainer settings alone.
    pub fn new(
        cfg: &TrainConfig,
        data: &'a Dataset<T>,
        embeddings: Option<&AttributeEmbeddings<T>>,
        echo: ConfigEcho,
    ) -> Result<Self> {
        cfg.validate()?;
        let index = ClassIndex::seen_train(data)?;
        if cfg.episode_m > index.num_classes() {
            return Err(RsanError::Config(format!(
                "episode_m = {} exceeds the {} seen classes with training samples",
                cfg.episode_m,
                index.num_classes()
            )));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        init_rng.set_stream(INIT_STREAM);
        let (c, _, _) = data.dims;
        let model = RsanModel::init(c, data.num_attributes(), cfg, embeddings, &mut init_rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(SAMPLE_STREAM);
        let opt = Sgd::new(cfg.momentum, cfg.weight_decay);
        let last_good = Checkpoint {
            model: model.clone(),
            epoch: 0,
            seed: cfg.seed,
            config_hash: echo.hash_u64(),
            echo: echo.clone(),
            rng: RngState::capture(&rng),
            velocity: Vec::new(),
        };
        Ok(Self {
            cfg: cfg.clone(),
            data,
            echo,
            index,
            model,
            opt,
            rng,
            epoch: 0,
            history: Vec::new(),
            best: None,
            last_good,
        })
    }

    pub fn model(&self) -> &RsanModel<T> {
        &self.model
    }

    /// Replaces the initial parameters (warm start). Only allowed before the
    /// first epoch and with the same parameter shapes.
    pub fn warm_start(&mut self, model: RsanModel<T>) -> Result<()> {
        if self.epoch > 0 {
            return Err(RsanError::Usage("warm start after training began".into()));
        }
        let same = model.params().len() == self.model.params().len()
            && model
                .params()
                .iter()
                .zip(self.model.params())
                .all(|(a, b)| a.shape() == b.shape())
            && model.score_rule == self.model.score_rule;
        if !same {
            return Err(RsanError::Usage(
                "warm-start model does not match the configured architecture".into(),
            ));
        }
        self.model = model;
        self.last_good.model = self.model.clone();
        Ok(())
    }

    /// Continues from a checkpoint taken by a trainer with the same config
    /// and dataset: parameters, momentum, sampler state and epoch count are
    /// restored, so the remaining epochs match an uninterrupted run. The
    /// history and best-model tracking start afresh.
    pub fn resume(
        cfg: &TrainConfig,
        data: &'a Dataset<T>,
        embeddings: Option<&AttributeEmbeddings<T>>,
        ckpt: &Checkpoint<T>,
    ) -> Result<Self> {
        let mut t = Self::new(cfg, data, embeddings, ckpt.echo.clone())?;
        if ckpt.seed != cfg.seed {
            return Err(RsanError::Config(format!(
                "checkpoint seed {} does not match configured seed {}",
                ckpt.seed, cfg.seed
            )));
        }
        t.warm_start(ckpt.model.clone())?;
        let shapes_match = ckpt.velocity.is_empty()
            || (ckpt.velocity.len() == t.model.params().len()
                && ckpt
                    .velocity
                    .iter()
                    .zip(t.model.params())
                    .all(|(v, p)| v.shape() == p.shape()));
        if !shapes_match {
            return Err(RsanError::Usage(
                "checkpoint momentum does not match the model parameters".into(),
            ));
        }
        t.opt.set_velocity(ckpt.velocity.clone());
        t.rng = ckpt.rng.restore();
        t.epoch = ckpt.epoch as usize;
        t.last_good = ckpt.clone();
        Ok(t)
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn last_good(&self) -> &Checkpoint<T> {
        &self.last_good
    }

    pub fn best(&self) -> Option<&Checkpoint<T>> {
        self.best.as_ref().map(|(_, c)| c)
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule {
            base: self.cfg.lr,
            factor: self.cfg.lr_decay_factor,
            every: self.cfg.lr_decay_epochs,
        }
    }

    fn snapshot(&self) -> Checkpoint<T> {
        Checkpoint {
            model: self.model.clone(),
            epoch: self.epoch as u32,
            seed: self.cfg.seed,
            config_hash: self.echo.hash_u64(),
            echo: self.echo.clone(),
            rng: RngState::capture(&self.rng),
            velocity: self.opt.velocity().to_vec(),
        }
    }

    /// Runs one epoch and returns its record.
    pub fn step_epoch(&mut self) -> Result<EpochRecord> {
        let lr = self.schedule().lr_at(self.epoch);
        let (mut cls, mut con, mut reg) = (0.0, 0.0, 0.0);
        for b in 0..self.cfg.batches_per_epoch {
            let ep = sample_episode(&self.index, self.cfg.episode_m, self.cfg.episode_n, &mut self.rng)?;
            let batch: Vec<(&Tensor<T>, ClassId)> = ep
                .samples
                .iter()
                .map(|&(i, y)| (&self.data.samples[i].features, y))
                .collect();
            let loss = joint_loss(&batch, &self.model, &self.data.table, &self.cfg).map_err(|e| match e {
                RsanError::NonFiniteLoss { term, .. } => RsanError::NonFiniteLoss {
                    term,
                    epoch: self.epoch + 1,
                    batch: b + 1,
                },
                other => other,
            })?;
            cls += loss.cls;
            con += loss.con;
            reg += loss.reg;
            let grads = loss.grads.tensors();
            self.opt.step(lr, &mut self.model.params_mut(), &grads)?;
        }
        self.epoch += 1;
        let n = self.cfg.batches_per_epoch as f64;
        let val_t1 = seen_accuracy(&self.model, self.data, Split::Val)
            .or_else(|_| seen_accuracy(&self.model, self.data, Split::Train))?;
        let record = EpochRecord {
            epoch: self.epoch,
            lr,
            l_cls: cls / n,
            l_con: con / n,
            l_reg: reg / n,
            val_t1,
        };
        self.history.push(record);
        let snap = self.snapshot();
        if self.best.as_ref().is_none_or(|(t1, _)| val_t1 >= *t1) {
            self.best = Some((val_t1, snap.clone()));
        }
        self.last_good = snap;
        Ok(record)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self) -> Result<TrainOutcome<T>> {
        while self.epoch < self.cfg.epochs {
            self.step_epoch()?;
        }
        let last = self.snapshot();
        let best = self.best.as_ref().map_or_else(|| last.clone(), |(_, c)| c.clone());
        Ok(TrainOutcome {
            history: self.history.clone(),
            best,
            last,
        })
    }
}

/// Trains from scratch with the trainer settings as the echo.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    data: &Dataset<T>,
    embeddings: Option<&AttributeEmbeddings<T>>,
) -> Result<TrainOutcome<T>> {
    Trainer::new(cfg, data, embeddings, cfg.echo())?.run()
}

/// Writes the training log CSV to `path`.
pub fn save_training_log(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_training_log(history, &mut f)?;
    f.flush()?;
    Ok(())
}
