//! Feature memory bank: one unit-vector slot per training sample.
//!
//! Slots start as random unit vectors and track the encoder's embeddings
//! through a moving average. The bank provides the temperature-scaled
//! similarity distribution used by both latent losses and the exact
//! cosine-distance neighbor search used by aggregation and scoring.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ndgrad::{softmax_in_place, Tensor};
use crate::scalar::{dot, norm, Scalar};

/// Tolerance on slot norms after any update.
pub const SLOT_NORM_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank<T> {
    slots: Vec<T>,
    len: usize,
    dim: usize,
    anomaly_flags: Vec<bool>,
    temperature: T,
    update_rate: T,
}

/// Softmax over bank slots of `m_jᵀz / τ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityDistribution<T> {
    pub probs: Vec<T>,
    pub query: Option<usize>,
}

impl<T: Scalar> SimilarityDistribution<T> {
    /// Probability mass on a subset of slots.
    pub fn mass(&self, indices: &[usize]) -> T {
        indices.iter().map(|&i| self.probs[i]).sum()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Nearest slots by cosine distance `1 - m_jᵀz`, closest first.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet<T> {
    pub indices: Vec<usize>,
    pub distances: Vec<T>,
}

impl<T: Scalar> MemoryBank<T> {
    /// Random isotropic unit vectors, all flags cleared.
    pub fn init(len: usize, dim: usize, temperature: T, update_rate: T, seed: u64) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "memory bank needs positive size, got {len}x{dim}"
            )));
        }
        check_hyper(temperature, update_rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut slots = Vec::with_capacity(len * dim);
        for _ in 0..len {
            loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 1e-6 {
                    slots.extend(v.iter().map(|x| T::lit(x / n)));
                    break;
                }
            }
        }
        Ok(MemoryBank {
            slots,
            len,
            dim,
            anomaly_flags: vec![false; len],
            temperature,
            update_rate,
        })
    }

    /// Builds a bank from explicit slot vectors, normalizing each one.
    pub fn from_slots(rows: &[Vec<T>], temperature: T, update_rate: T) -> Result<Self> {
        let len = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if len == 0 || dim == 0 {
            return Err(Error::Config("memory bank needs at least one non-empty slot".into()));
        }
        check_hyper(temperature, update_rate)?;
        let mut slots = Vec::with_capacity(len * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::shape(
                    "memory bank",
                    format!("slot {i} has {} dims, expected {dim}", r.len()),
                ));
            }
            let n = norm(r);
            if !(n > T::lit(crate::ndgrad::NORMALIZE_EPS)) {
                return Err(Error::domain("memory bank", format!("slot {i} has zero norm")));
            }
            slots.extend(r.iter().map(|&v| v / n));
        }
        Ok(MemoryBank {
            slots,
            len,
            dim,
            anomaly_flags: vec![false; len],
            temperature,
            update_rate,
        })
    }

    pub(crate) fn from_raw(
        slots: Vec<T>,
        dim: usize,
        anomaly_flags: Vec<bool>,
        temperature: T,
        update_rate: T,
    ) -> Result<Self> {
        if dim == 0 || slots.is_empty() || !slots.len().is_multiple_of(dim) {
            return Err(Error::Format("slot array does not match dimension".into()));
        }
        let len = slots.len() / dim;
        if anomaly_flags.len() != len {
            return Err(Error::Format("flag count does not match slot count".into()));
        }
        check_hyper(temperature, update_rate)?;
        Ok(MemoryBank {
            slots,
            len,
            dim,
            anomaly_flags,
            temperature,
            update_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    pub fn update_rate(&self) -> T {
        self.update_rate
    }

    pub fn set_temperature(&mut self, temperature: T) -> Result<()> {
        check_hyper(temperature, self.update_rate)?;
        self.temperature = temperature;
        Ok(())
    }

    pub fn slot(&self, i: usize) -> &[T] {
        &self.slots[i * self.dim..(i + 1) * self.dim]
    }

    pub fn slots(&self) -> &[T] {
        &self.slots
    }

    pub fn anomaly_flags(&self) -> &[bool] {
        &self.anomaly_flags
    }

    pub fn set_flag(&mut self, i: usize, anomalous: bool) -> Result<()> {
        self.check_index(i)?;
        self.anomaly_flags[i] = anomalous;
        Ok(())
    }

    pub fn set_flags(&mut self, flags: &[bool]) -> Result<()> {
        if flags.len() != self.len {
            return Err(Error::shape(
                "set_flags",
                format!("{} flags for {} slots", flags.len(), self.len),
            ));
        }
        self.anomaly_flags.copy_from_slice(flags);
        Ok(())
    }

    /// All slots as an `N×d` tensor.
    pub fn slot_matrix(&self) -> Tensor<T> {
        Tensor::from_parts(vec![self.len, self.dim], self.slots.clone())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len {
            return Err(Error::Index {
                what: "memory bank slot",
                index: i,
                len: self.len,
            });
        }
        Ok(())
    }

    fn check_query(&self, z: &[T]) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::shape(
                "memory bank query",
                format!("{} dims, bank has {}", z.len(), self.dim),
            ));
        }
        Ok(())
    }

    /// `m_i ← (1−t)·m_i + t·z`, then renormalized onto the unit sphere.
    pub fn update_slot(&mut self, i: usize, z: &[T]) -> Result<()> {
        self.check_index(i)?;
        self.check_query(z)?;
        let t = self.update_rate;
        let keep = T::one() - t;
        let slot = &mut self.slots[i * self.dim..(i + 1) * self.dim];
        for (m, &v) in slot.iter_mut().zip(z) {
            *m = keep * *m + t * v;
        }
        let n = norm(slot);
        if !(n > T::lit(crate::ndgrad::NORMALIZE_EPS)) {
            // Antipodal average; fall back to the new embedding.
            slot.copy_from_slice(z);
            let n = norm(slot);
            for m in slot.iter_mut() {
                *m /= n;
            }
            return Ok(());
        }
        for m in slot.iter_mut() {
            *m /= n;
        }
        Ok(())
    }

    /// Cosine similarity of `z` to every slot.
    pub fn similarities(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_query(z)?;
        Ok((0..self.len).map(|j| dot(self.slot(j), z)).collect())
    }

    pub fn similarity_distribution(&self, z: &[T]) -> Result<SimilarityDistribution<T>> {
        self.similarity_distribution_excluding(z, None)
    }

    /// Distribution with an optional slot dropped from the denominator
    /// (its probability is reported as zero).
    pub fn similarity_distribution_excluding(
        &self,
        z: &[T],
        exclude: Option<usize>,
    ) -> Result<SimilarityDistribution<T>> {
        if self.len == 0 {
            return Err(Error::Data("empty memory bank".into()));
        }
        let mut logits = self.similarities(z)?;
        for v in logits.iter_mut() {
            *v /= self.temperature;
        }
        if let Some(q) = exclude {
            self.check_index(q)?;
            if self.len == 1 {
                return Err(Error::Data("excluding the only bank slot".into()));
            }
            logits[q] = T::neg_infinity();
        }
        softmax_in_place(&mut logits);
        if logits.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                op: "similarity_distribution",
            });
        }
        Ok(SimilarityDistribution {
            probs: logits,
            query: exclude,
        })
    }

    /// Exact top-k search; ties go to the lower slot index.
    pub fn top_k_neighbors(&self, z: &[T], k: usize, exclude: Option<&[usize]>) -> Result<NeighborSet<T>> {
        self.check_query(z)?;
        let excluded = exclude.unwrap_or(&[]);
        let candidates: Vec<usize> = (0..self.len).filter(|j| !excluded.contains(j)).collect();
        if k > candidates.len() {
            return Err(Error::Config(format!(
                "k={k} exceeds the {} available bank slots",
                candidates.len()
            )));
        }
        let mut scored: Vec<(T, usize)> = candidates
            .into_iter()
            .map(|j| (T::one() - dot(self.slot(j), z), j))
            .collect();
        Ok(take_smallest(&mut scored, k))
    }

    /// View of the slots not flagged anomalous.
    pub fn discard_anomalous(&self) -> Result<BankView<'_, T>> {
        let indices: Vec<usize> = (0..self.len).filter(|&i| !self.anomaly_flags[i]).collect();
        if indices.is_empty() {
            return Err(Error::Data("every memory bank slot is flagged anomalous".into()));
        }
        Ok(BankView { bank: self, indices })
    }

    /// View of every slot.
    pub fn full_view(&self) -> BankView<'_, T> {
        BankView {
            bank: self,
            indices: (0..self.len).collect(),
        }
    }

    /// Copies the listed slots into a new bank (flags carried over).
    pub fn rebuild(&self, keep: &[usize]) -> Result<Self> {
        let mut slots = Vec::with_capacity(keep.len() * self.dim);
        let mut flags = Vec::with_capacity(keep.len());
        for &i in keep {
            self.check_index(i)?;
            slots.extend_from_slice(self.slot(i));
            flags.push(self.anomaly_flags[i]);
        }
        Self::from_raw(slots, self.dim, flags, self.temperature, self.update_rate)
    }
}

/// Subset of bank slots, keeping the mapping back to original indices.
#[derive(Clone, Debug)]
pub struct BankView<'a, T> {
    bank: &'a MemoryBank<T>,
    indices: Vec<usize>,
}

impl<'a, T: Scalar> BankView<'a, T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bank.dim
    }

    /// Original bank index of view position `p`.
    pub fn original_index(&self, p: usize) -> usize {
        self.indices[p]
    }

    pub fn original_indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn slot(&self, p: usize) -> &[T] {
        self.bank.slot(self.indices[p])
    }

    pub fn bank(&self) -> &'a MemoryBank<T> {
        self.bank
    }
}

fn check_hyper<T: Scalar>(temperature: T, update_rate: T) -> Result<()> {
    if !(temperature > T::zero() && temperature <= T::one()) {
        return Err(Error::Config(format!(
            "temperature must lie in (0, 1], got {temperature}"
        )));
    }
    if !(update_rate >= T::zero() && update_rate <= T::one()) {
        return Err(Error::Config(format!(
            "update rate must lie in [0, 1], got {update_rate}"
        )));
    }
    Ok(())
}

fn by_distance_then_index<T: Scalar>(a: &(T, usize), b: &(T, usize)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

fn take_smallest<T: Scalar>(scored: &mut [(T, usize)], k: usize) -> NeighborSet<T> {
    if k == 0 {
        return NeighborSet {
            indices: Vec::new(),
            distances: Vec::new(),
        };
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_distance_then_index);
    }
    let head = &mut scored[..k];
    head.sort_by(by_distance_then_index);
    NeighborSet {
        indices: head.iter().map(|p| p.1).collect(),
        distances: head.iter().map(|p| p.0).collect(),
    }
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
