//! Two-phase training: autoencoder pre-training with instance
//! discrimination, then progressive rounds of the full objective with a
//! growing neighborhood.

mod augment;
mod config;

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{augment, AugmentSpec};
pub use config::{neighborhood_schedule, Ablation, KSchedule, TrainingConfig};

use crate::dataprep::{Image, Sample};
use crate::error::{Error, Result};
use crate::losses::{
    aggregation_loss, mse_loss, neighbor_mass, salad_objective, sample_specific_loss, LossBreakdown, MiniBatch,
};
use crate::membank::MemoryBank;
use crate::model::{adam_step, decode_graph, encode_graph, AdamState, ModelParams};
use crate::ndgrad::{Graph, Tensor};
use crate::scalar::Scalar;
use crate::scorer::{score_dataset, AnomalyScore};

const BANK_SEED_SALT: u64 = 0x6d656d62616e6b;

/// SplitMix64 finalizer, used to derive per-epoch and per-sample seeds.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Same-sized training images with their anomaly indicator. The indicator
/// only sets bank flags (and, for the memory-autoencoder baseline, removes
/// anomalous samples); no loss reads it.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    images: Vec<Image<T>>,
    anomalous: Vec<bool>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Vec<Image<T>>, anomalous: Vec<bool>) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Data("empty training set".into()))?;
        let shape = (first.height(), first.width());
        if images.iter().any(|i| (i.height(), i.width()) != shape) {
            return Err(Error::Data("training images differ in size".into()));
        }
        if anomalous.len() != images.len() {
            return Err(Error::Data("one anomaly indicator per image required".into()));
        }
        Ok(Dataset { images, anomalous })
    }

    pub fn from_samples(samples: &[Sample<T>]) -> Result<Self> {
        Self::new(
            samples.iter().map(|s| s.image.clone()).collect(),
            samples.iter().map(|s| s.label.is_anomalous()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.images[0].pixels().len()
    }

    pub fn image(&self, i: usize) -> &Image<T> {
        &self.images[i]
    }

    pub fn anomalous(&self) -> &[bool] {
        &self.anomalous
    }

    pub fn with_anomalous(mut self, anomalous: Vec<bool>) -> Result<Self> {
        if anomalous.len() != self.images.len() {
            return Err(Error::Data("one anomaly indicator per image required".into()));
        }
        self.anomalous = anomalous;
        Ok(self)
    }
}

/// One row of the loss log. `k` is zero during pre-training.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub k: usize,
    pub loss: LossBreakdown<f64>,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,mse,ss,agg,total,k";

    pub fn csv_line(&self) -> String {
        let l = &self.loss;
        format!("{},{},{},{},{},{}", self.epoch, l.mse, l.ss, l.agg, l.total, self.k)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Mean neighbor probability mass of normal training samples after
    /// each progressive round, at a fixed `k = k_max`.
    pub round_mass: Vec<f64>,
    pub wall_clock: Duration,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", EpochRecord::CSV_HEADER)?;
        for e in &self.epochs {
            writeln!(w, "{}", e.csv_line())?;
        }
        Ok(())
    }
}

/// Where in the schedule an epoch falls.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Round { round: usize, k: usize },
}

/// Hooks called while training; every method defaults to a no-op.
pub trait TrainObserver<T> {
    fn on_epoch(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }

    /// Called after pre-training and after every progressive round.
    fn on_boundary(&mut self, _trainer: &Trainer<T>) -> Result<()> {
        Ok(())
    }
}

impl<T> TrainObserver<T> for () {}

/// Owns the parameters, optimizer state and memory bank of one run.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    config: TrainingConfig,
    params: ModelParams<T>,
    adam: AdamState<T>,
    bank: MemoryBank<T>,
    epochs_done: usize,
    report: TrainReport,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh parameters and a random bank with one slot per training sample,
    /// flagged where the sample is anomalous.
    pub fn new(config: TrainingConfig, data: &Dataset<T>) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config.architecture(data.input_dim()), config.init_seed)?;
        let adam = AdamState::new(&params, config.adam());
        let mut bank = MemoryBank::init(
            data.len(),
            config.latent_dim,
            T::lit(config.temperature),
            T::lit(config.update_rate),
            mix(config.init_seed, BANK_SEED_SALT),
        )?;
        bank.set_flags(data.anomalous())?;
        let report = TrainReport {
            init_seed: config.init_seed,
            shuffle_seed: config.shuffle_seed,
            ..TrainReport::default()
        };
        let t = Trainer {
            config,
            params,
            adam,
            bank,
            epochs_done: 0,
            report,
        };
        t.check_data(data)?;
        Ok(t)
    }

    /// Reassembles a trainer from checkpointed state.
    pub fn from_parts(
        config: TrainingConfig,
        params: ModelParams<T>,
        adam: AdamState<T>,
        bank: MemoryBank<T>,
        epochs_done: usize,
        report: TrainReport,
    ) -> Result<Self> {
        config.validate()?;
        if params.latent_dim() != bank.dim() || params.latent_dim() != config.latent_dim {
            return Err(Error::Format("checkpoint latent dimensions disagree".into()));
        }
        if epochs_done > config.total_epochs() || report.epochs.len() != epochs_done {
            return Err(Error::Format("checkpoint progress is inconsistent".into()));
        }
        Ok(Trainer {
            config,
            params,
            adam,
            bank,
            epochs_done,
            report,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn bank(&self) -> &MemoryBank<T> {
        &self.bank
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.config.total_epochs()
    }

    fn check_data(&self, data: &Dataset<T>) -> Result<()> {
        if data.len() != self.bank.len() {
            return Err(Error::Data(format!(
                "training set has {} samples but the bank has {} slots",
                data.len(),
                self.bank.len()
            )));
        }
        if data.input_dim() != self.params.input_dim() {
            return Err(Error::Data(format!(
                "images have {} pixels, model expects {}",
                data.input_dim(),
                self.params.input_dim()
            )));
        }
        let active = self.active(data).len();
        if active < self.config.batch_size {
            return Err(Error::Data(format!(
                "{active} trainable samples is fewer than the batch size {}",
                self.config.batch_size
            )));
        }
        Ok(())
    }

    fn active(&self, data: &Dataset<T>) -> Vec<usize> {
        (0..data.len())
            .filter(|&i| !(self.config.exclude_anomalous && data.anomalous()[i]))
            .collect()
    }

    /// Phase of the zero-based global epoch `epoch`.
    pub fn phase(&self, epoch: usize) -> Result<Phase> {
        let c = &self.config;
        if epoch < c.pretrain_epochs {
            return Ok(Phase::Pretrain);
        }
        let round = (epoch - c.pretrain_epochs) / c.epochs_per_round.max(1) + 1;
        Ok(Phase::Round {
            round,
            k: neighborhood_schedule(round, c)?,
        })
    }

    /// Largest neighborhood the bank can supply.
    fn k_cap(&self) -> usize {
        self.bank.len() - usize::from(self.config.exclude_self)
    }

    /// Runs pre-training to completion.
    pub fn pretrain(&mut self, data: &Dataset<T>) -> Result<()> {
        self.check_data(data)?;
        while self.epochs_done < self.config.pretrain_epochs {
            self.run_epoch(data)?;
        }
        Ok(())
    }

    /// Runs the remaining progressive rounds. Pre-training must be done.
    pub fn train_progressive(&mut self, data: &Dataset<T>, observer: &mut impl TrainObserver<T>) -> Result<()> {
        if self.epochs_done < self.config.pretrain_epochs {
            return Err(Error::Config(
                "progressive training requires completed pre-training".into(),
            ));
        }
        self.check_data(data)?;
        while !self.is_finished() {
            let rec = self.run_epoch(data)?;
            observer.on_epoch(&rec)?;
            if (self.epochs_done - self.config.pretrain_epochs).is_multiple_of(self.config.epochs_per_round) {
                let mass = self.mean_normal_mass(data)?;
                self.report.round_mass.push(mass);
                observer.on_boundary(self)?;
            }
        }
        Ok(())
    }

    /// Full schedule from wherever this trainer stands.
    pub fn run(&mut self, data: &Dataset<T>, observer: &mut impl TrainObserver<T>) -> Result<()> {
        self.check_data(data)?;
        let start = Instant::now();
        let in_pretrain = self.epochs_done < self.config.pretrain_epochs;
        while self.epochs_done < self.config.pretrain_epochs {
            let rec = self.run_epoch(data)?;
            observer.on_epoch(&rec)?;
        }
        if in_pretrain {
            observer.on_boundary(self)?;
        }
        self.train_progressive(data, observer)?;
        self.report.wall_clock += start.elapsed();
        Ok(())
    }

    /// Mean `k_max`-neighbor probability mass over normal training samples.
    pub fn mean_normal_mass(&self, data: &Dataset<T>) -> Result<f64> {
        let k = self.config.k_max.min(self.bank.len());
        let normal: Vec<usize> = (0..data.len()).filter(|&i| !data.anomalous()[i]).collect();
        if normal.is_empty() {
            return Err(Error::Data("no normal training samples".into()));
        }
        let z = self.embed(data, &normal)?;
        let d = self.params.latent_dim();
        let mut total = 0.0;
        for row in z.chunks(d) {
            total += neighbor_mass(&self.bank, row, k)?.as_f64();
        }
        Ok(total / normal.len() as f64)
    }

    /// Embeddings of `indices`, row-major.
    pub fn embed(&self, data: &Dataset<T>, indices: &[usize]) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(indices.len() * self.params.latent_dim());
        for chunk in indices.chunks(64) {
            let x: Vec<T> = chunk
                .iter()
                .flat_map(|&i| data.image(i).pixels().iter().copied())
                .collect();
            out.extend(self.params.encode_rows(&x, chunk.len())?);
        }
        Ok(out)
    }

    /// Scores images against the non-anomalous bank slots with `k_score`.
    pub fn score(&self, images: &[&[T]]) -> Result<Vec<AnomalyScore<T>>> {
        score_dataset(images, &self.params, &self.bank, self.config.k_score)
    }

    /// One pass over the (shuffled) training set.
    pub fn run_epoch(&mut self, data: &Dataset<T>) -> Result<EpochRecord> {
        if self.is_finished() {
            return Err(Error::Config("training schedule already complete".into()));
        }
        let epoch = self.epochs_done;
        let phase = self.phase(epoch)?;
        let mut order = self.active(data);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(
            self.config.shuffle_seed,
            epoch as u64,
        )));
        let mut sums = [0.0f64; 3];
        for batch in order.chunks(self.config.batch_size) {
            let l = self.step(data, batch, phase, epoch)?;
            let w = batch.len() as f64;
            sums[0] += l.mse.as_f64() * w;
            sums[1] += l.ss.as_f64() * w;
            sums[2] += l.agg.as_f64() * w;
        }
        let n = order.len() as f64;
        let loss = LossBreakdown::combine(sums[0] / n, sums[1] / n, sums[2] / n, self.config.lambda)?;
        let k = match phase {
            Phase::Pretrain => 0,
            Phase::Round { k, .. } => k.min(self.k_cap()),
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            k,
            loss,
        };
        self.epochs_done += 1;
        self.report.epochs.push(rec.clone());
        Ok(rec)
    }

    fn step(&mut self, data: &Dataset<T>, batch: &[usize], phase: Phase, epoch: usize) -> Result<LossBreakdown<T>> {
        let cfg = &self.config;
        let dim = data.input_dim();
        let x: Vec<T> = batch
            .iter()
            .flat_map(|&i| data.image(i).pixels().iter().copied())
            .collect();
        let mut g = Graph::new();
        let pv = self.params.register(&mut g);
        let xv = g.constant(Tensor::matrix(batch.len(), dim, x)?);
        let z = encode_graph(&mut g, &pv, xv)?;

        let mse = if cfg.use_mse {
            let x_hat = decode_graph(&mut g, &pv, z)?;
            Some(mse_loss(&mut g, xv, x_hat)?)
        } else {
            None
        };
        let latent = cfg.latent_active();
        let ss = if latent && cfg.use_ss {
            let spec = cfg.augment_spec();
            let mut views = Vec::with_capacity(batch.len() * spec.count * dim);
            for &i in batch {
                let seed = mix(mix(cfg.augment_seed, epoch as u64), i as u64);
                for v in augment(data.image(i), &spec, seed)? {
                    views.extend(v.into_pixels());
                }
            }
            let vv = g.constant(Tensor::matrix(batch.len() * spec.count, dim, views)?);
            let za = encode_graph(&mut g, &pv, vv)?;
            let mb = MiniBatch::new(batch.to_vec(), spec.count);
            Some(sample_specific_loss(&mut g, &mb, &self.bank, za)?)
        } else {
            None
        };
        let agg = match phase {
            Phase::Round { k, .. } if latent && cfg.use_agg => {
                let mb = MiniBatch::new(batch.to_vec(), 1);
                Some(aggregation_loss(
                    &mut g,
                    &mb,
                    &self.bank,
                    z,
                    k.min(self.k_cap()),
                    cfg.exclude_self,
                )?)
            }
            _ => None,
        };

        let lambda = T::lit(cfg.lambda);
        let value = |v: Option<_>| v.map_or(T::zero(), |v| g.value(v).item());
        let breakdown = LossBreakdown::combine(value(mse), value(ss), value(agg), lambda)?;
        if mse.is_some() || ss.is_some() || agg.is_some() {
            let total = salad_objective(&mut g, mse, ss, agg, lambda)?;
            g.backward(total)?;
            let grads = pv.grads(&g);
            adam_step(&mut self.params, &grads, &mut self.adam)?;
        }

        let d = self.params.latent_dim();
        let zs = g.value(z).data().to_vec();
        for (row, &i) in zs.chunks(d).zip(batch) {
            self.bank.update_slot(i, row)?;
        }
        Ok(breakdown)
    }
}

#[cfg(test)]
mod tests;
