//! Versioned binary formats for trainer checkpoints and bank snapshots.
//!
//! All integers are `u64` and all reals `f64`, little-endian.
//!
//! Bank snapshot: magic `SALADMB\0`, version byte, then the bank body:
//! `N`, `d`, update rate `t`, temperature `τ`, `N·d` slot values, and the
//! anomaly flags as a bitmap of `ceil(N/8)` bytes (bit `i % 8` of byte
//! `i / 8`).
//!
//! Checkpoint: magic `SALADCK\0`, version byte, the training config as a
//! length-prefixed TOML string, input dimension, epochs completed, the
//! parameter tensors (count, then per tensor its rank, dims and values),
//! the Adam step and both moment lists, the bank body, and the report
//! (epoch rows, round masses, seeds).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::membank::MemoryBank;
use crate::model::{AdamState, ModelParams};
use crate::ndgrad::Tensor;
use crate::scalar::Scalar;
use crate::trainer::{EpochRecord, TrainReport, Trainer, TrainingConfig};

pub const BANK_MAGIC: &[u8; 8] = b"SALADMB\0";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SALADCK\0";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn header(&mut self, magic: &[u8; 8]) {
        self.0.extend_from_slice(magic);
        self.0.push(FORMAT_VERSION);
    }

    fn tensor<T: Scalar>(&mut self, t: &Tensor<T>) {
        self.usize(t.shape().len());
        for &d in t.shape() {
            self.usize(d);
        }
        for &v in t.data() {
            self.f64(v.as_f64());
        }
    }

    fn tensors<'a, T: Scalar>(&mut self, ts: impl ExactSizeIterator<Item = &'a Tensor<T>>) {
        self.usize(ts.len());
        for t in ts {
            self.tensor(t);
        }
    }

    fn bank<T: Scalar>(&mut self, bank: &MemoryBank<T>) {
        self.usize(bank.len());
        self.usize(bank.dim());
        self.f64(bank.update_rate().as_f64());
        self.f64(bank.temperature().as_f64());
        for &v in bank.slots() {
            self.f64(v.as_f64());
        }
        let mut bits = vec![0u8; bank.len().div_ceil(8)];
        for (i, &f) in bank.anomaly_flags().iter().enumerate() {
            if f {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        self.0.extend_from_slice(&bits);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A count, bounded by the bytes left so corrupt input cannot request
    /// huge allocations.
    fn count(&mut self, min_item_bytes: usize) -> Result<usize> {
        let n = usize::try_from(self.u64()?).map_err(|_| Error::Format("count overflows".into()))?;
        if n.saturating_mul(min_item_bytes.max(1)) > self.buf.len() - self.pos {
            return Err(Error::Format(format!("count {n} exceeds remaining data")));
        }
        Ok(n)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self, magic: &[u8; 8], what: &str) -> Result<()> {
        if self.take(8).ok() != Some(&magic[..]) {
            return Err(Error::Format(format!("not a {what} file")));
        }
        let v = self.take(1)?[0];
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{what} format version {v} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        Ok(())
    }

    fn tensor<T: Scalar>(&mut self) -> Result<Tensor<T>> {
        let rank = self.count(8)?;
        let shape = (0..rank).map(|_| self.count(0)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        if len.saturating_mul(8) > self.buf.len() - self.pos {
            return Err(Error::Format("tensor exceeds remaining data".into()));
        }
        let data = (0..len).map(|_| self.f64().map(T::lit)).collect::<Result<Vec<_>>>()?;
        Tensor::new(&shape, data)
    }

    fn tensors<T: Scalar>(&mut self) -> Result<Vec<Tensor<T>>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.tensor()).collect()
    }

    fn bank<T: Scalar>(&mut self) -> Result<MemoryBank<T>> {
        let len = self.count(8)?;
        let dim = self.count(0)?;
        let rate = self.f64()?;
        let tau = self.f64()?;
        let values = len
            .checked_mul(dim)
            .filter(|v| v.saturating_mul(8) <= self.buf.len() - self.pos)
            .ok_or_else(|| Error::Format("bank exceeds remaining data".into()))?;
        let slots = (0..values)
            .map(|_| self.f64().map(T::lit))
            .collect::<Result<Vec<_>>>()?;
        let bits = self.take(len.div_ceil(8))?;
        let flags = (0..len).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect();
        MemoryBank::from_raw(slots, dim, flags, T::lit(tau), T::lit(rate))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_bank<T: Scalar>(bank: &MemoryBank<T>) -> Vec<u8> {
    let mut w = Writer::default();
    w.header(BANK_MAGIC);
    w.bank(bank);
    w.0
}

pub fn decode_bank<T: Scalar>(bytes: &[u8]) -> Result<MemoryBank<T>> {
    let mut r = Reader::new(bytes);
    r.header(BANK_MAGIC, "bank snapshot")?;
    let bank = r.bank()?;
    r.finish()?;
    Ok(bank)
}

pub fn save_bank<T: Scalar>(path: &Path, bank: &MemoryBank<T>) -> Result<()> {
    fs::write(path, encode_bank(bank))?;
    Ok(())
}

pub fn load_bank<T: Scalar>(path: &Path) -> Result<MemoryBank<T>> {
    decode_bank(&fs::read(path)?)
}

pub fn encode_checkpoint<T: Scalar>(trainer: &Trainer<T>) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.header(CHECKPOINT_MAGIC);
    let cfg = trainer.config().to_toml()?;
    w.usize(cfg.len());
    w.0.extend_from_slice(cfg.as_bytes());
    w.usize(trainer.params().input_dim());
    w.usize(trainer.epochs_done());
    w.tensors(trainer.params().tensors().collect::<Vec<_>>().into_iter());
    let adam = trainer.adam();
    w.u64(adam.step);
    w.tensors(adam.first_moment.iter());
    w.tensors(adam.second_moment.iter());
    w.bank(trainer.bank());
    let report = trainer.report();
    w.usize(report.epochs.len());
    for e in &report.epochs {
        w.usize(e.epoch);
        w.usize(e.k);
        for v in [e.loss.mse, e.loss.ss, e.loss.agg, e.loss.total, e.loss.lambda] {
            w.f64(v);
        }
    }
    w.usize(report.round_mass.len());
    for &m in &report.round_mass {
        w.f64(m);
    }
    w.u64(report.init_seed);
    w.u64(report.shuffle_seed);
    Ok(w.0)
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Trainer<T>> {
    let mut r = Reader::new(bytes);
    r.header(CHECKPOINT_MAGIC, "checkpoint")?;
    let n = r.count(1)?;
    let text = std::str::from_utf8(r.take(n)?).map_err(|e| Error::Format(e.to_string()))?;
    let config = TrainingConfig::from_toml(text)?;
    let input_dim = r.count(0)?;
    let epochs_done = r.count(0)?;
    let params = ModelParams::from_tensors(&config.architecture(input_dim), r.tensors()?)?;
    let step = r.u64()?;
    let first_moment = r.tensors()?;
    let second_moment = r.tensors()?;
    let congruent = |m: &[Tensor<T>]| {
        m.len() == params.num_tensors() && m.iter().zip(params.tensors()).all(|(a, b)| a.shape() == b.shape())
    };
    if !congruent(&first_moment) || !congruent(&second_moment) {
        return Err(Error::Format("optimizer moments do not match the parameters".into()));
    }
    let adam = AdamState {
        config: config.adam(),
        step,
        first_moment,
        second_moment,
    };
    let bank = r.bank()?;
    let n_epochs = r.count(56)?;
    let mut epochs = Vec::with_capacity(n_epochs);
    for _ in 0..n_epochs {
        let epoch = r.count(0)?;
        let k = r.count(0)?;
        let mut v = [0.0; 5];
        for x in &mut v {
            *x = r.f64()?;
        }
        epochs.push(EpochRecord {
            epoch,
            k,
            loss: LossBreakdown {
                mse: v[0],
                ss: v[1],
                agg: v[2],
                latent: v[1] + v[2],
                total: v[3],
                lambda: v[4],
            },
        });
    }
    let n_mass = r.count(8)?;
    let round_mass = (0..n_mass).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let init_seed = r.u64()?;
    let shuffle_seed = r.u64()?;
    r.finish()?;
    let report = TrainReport {
        epochs,
        round_mass,
        init_seed,
        shuffle_seed,
        ..TrainReport::default()
    };
    Trainer::from_parts(config, params, adam, bank, epochs_done, report)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, trainer: &Trainer<T>) -> Result<()> {
    fs::write(path, encode_checkpoint(trainer)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Trainer<T>> {
    decode_checkpoint(&fs::read(path)?)
}
