//! Training objectives: reconstruction, sample-specific (instance
//! discrimination against the memory bank), neighborhood aggregation, and
//! their weighted combination.
//!
//! All reductions are batch means, so the latent weight λ does not depend on
//! the batch size. The bank is a constant in every graph: gradients flow only
//! through the query embeddings.

use crate::error::{Error, Result};
use crate::membank::MemoryBank;
use crate::ndgrad::{Graph, Tensor, Var};
use crate::scalar::Scalar;

/// Added to a logit to drop it from a softmax without producing infinities.
const MASKED_LOGIT: f64 = -1e6;

/// Tolerance above 1 for an inner probability mass before it is treated as
/// an indexing bug.
const MASS_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub mse: T,
    pub ss: T,
    pub agg: T,
    pub latent: T,
    pub total: T,
    pub lambda: T,
}

impl<T: Scalar> LossBreakdown<T> {
    /// `total = mse + λ·(ss + agg)`.
    pub fn combine(mse: T, ss: T, agg: T, lambda: T) -> Result<Self> {
        if [mse, ss, agg, lambda].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "salad_loss" });
        }
        let latent = ss + agg;
        Ok(LossBreakdown {
            mse,
            ss,
            agg,
            latent,
            total: mse + lambda * latent,
            lambda,
        })
    }

    pub fn zero(lambda: T) -> Self {
        LossBreakdown {
            mse: T::zero(),
            ss: T::zero(),
            agg: T::zero(),
            latent: T::zero(),
            total: T::zero(),
            lambda,
        }
    }
}

/// Index bookkeeping for one mini-batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MiniBatch {
    /// Bank slot (equivalently dataset index) of each batch row.
    pub samples: Vec<usize>,
    /// Batch rows treated as prototypical by the aggregation loss.
    pub prototypical: Vec<usize>,
    /// Augmented views per sample. View embeddings are laid out sample-major:
    /// row `b * views + v` is view `v` of batch row `b`.
    pub views: usize,
}

impl MiniBatch {
    /// Every sample is prototypical.
    pub fn new(samples: Vec<usize>, views: usize) -> Self {
        let prototypical = (0..samples.len()).collect();
        MiniBatch {
            samples,
            prototypical,
            views,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Data("empty mini-batch".into()));
        }
        if self.views == 0 {
            return Err(Error::Data("every sample needs at least one augmented view".into()));
        }
        if let Some(&p) = self.prototypical.iter().find(|&&p| p >= self.samples.len()) {
            return Err(Error::Index {
                what: "prototypical row",
                index: p,
                len: self.samples.len(),
            });
        }
        Ok(())
    }
}

/// Mean over the batch of the summed squared pixel error.
pub fn mse_loss<T: Scalar>(g: &mut Graph<T>, x: Var, x_hat: Var) -> Result<Var> {
    if g.value(x).shape() != g.value(x_hat).shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("{:?} vs {:?}", g.value(x).shape(), g.value(x_hat).shape()),
        ));
    }
    let rows = g.value(x).rows_cols().0;
    let d = g.sub(x, x_hat)?;
    let sq = g.square(d)?;
    let s = g.sum(sq)?;
    g.scale(s, T::one() / T::from_usize_lossy(rows))
}

/// `emb[B×d] · Mᵀ / τ`, the logits of the bank similarity distribution.
fn bank_logits<T: Scalar>(g: &mut Graph<T>, bank: &MemoryBank<T>, emb: Var) -> Result<Var> {
    let (_, d) = g.value(emb).rows_cols();
    if d != bank.dim() {
        return Err(Error::shape(
            "bank_logits",
            format!("embedding dim {d}, bank dim {}", bank.dim()),
        ));
    }
    let mt = g.constant(bank.slot_matrix().transposed()?);
    let sims = g.matmul(emb, mt)?;
    g.scale(sims, T::one() / bank.temperature())
}

fn check_masses<T: Scalar>(g: &Graph<T>, mass: Var, op: &'static str) -> Result<()> {
    if let Some(m) = g
        .value(mass)
        .data()
        .iter()
        .find(|&&m| m >= T::one() + T::lit(MASS_SLACK))
    {
        return Err(Error::domain(
            op,
            format!("inner probability mass {m} exceeds 1; index aliasing"),
        ));
    }
    Ok(())
}

/// Instance discrimination against the bank.
///
/// For each sample `i`, every augmented view's embedding is scored by the
/// probability it assigns to slot `i`; the per-sample inner mass is the mean
/// over views, and the loss is the batch mean of `-log(mass)`.
pub fn sample_specific_loss<T: Scalar>(
    g: &mut Graph<T>,
    batch: &MiniBatch,
    bank: &MemoryBank<T>,
    view_emb: Var,
) -> Result<Var> {
    batch.validate()?;
    let rows = g.value(view_emb).rows_cols().0;
    if rows != batch.len() * batch.views {
        return Err(Error::shape(
            "sample_specific_loss",
            format!("{rows} view rows for {} samples x {} views", batch.len(), batch.views),
        ));
    }
    if let Some(&s) = batch.samples.iter().find(|&&s| s >= bank.len()) {
        return Err(Error::Index {
            what: "memory bank slot",
            index: s,
            len: bank.len(),
        });
    }
    let logits = bank_logits(g, bank, view_emb)?;
    let probs = g.softmax_rows(logits)?;
    let cols: Vec<Vec<usize>> = batch
        .samples
        .iter()
        .flat_map(|&s| std::iter::repeat_n(vec![s], batch.views))
        .collect();
    let per_view = g.masked_row_sum(probs, cols)?;
    let grid = g.reshape(per_view, &[batch.len(), batch.views])?;
    let summed = g.sum_rows(grid)?;
    let mass = g.scale(summed, T::one() / T::from_usize_lossy(batch.views))?;
    check_masses(g, mass, "sample_specific_loss")?;
    let logm = g.log(mass)?;
    let nll = g.neg(logm)?;
    g.mean(nll)
}

/// Neighbor sets `N_k(z_i)` for the prototypical rows of `emb`, chosen by
/// cosine distance against the current bank.
pub fn neighbor_sets<T: Scalar>(
    bank: &MemoryBank<T>,
    emb: &Tensor<T>,
    batch: &MiniBatch,
    k: usize,
    exclude_self: bool,
) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::Config("neighborhood size k must be at least 1".into()));
    }
    batch
        .prototypical
        .iter()
        .map(|&r| {
            let own = [batch.samples[r]];
            let exclude = if exclude_self { Some(&own[..]) } else { None };
            Ok(bank.top_k_neighbors(emb.row(r), k, exclude)?.indices)
        })
        .collect()
}

/// Aggregation: batch mean over prototypical rows of `-log` of the
/// probability mass on the row's `k` nearest bank slots.
///
/// The neighbor choice is an index selection and carries no gradient. With
/// `exclude_self`, a sample's own slot is dropped from both its neighbor set
/// and its softmax denominator.
pub fn aggregation_loss<T: Scalar>(
    g: &mut Graph<T>,
    batch: &MiniBatch,
    bank: &MemoryBank<T>,
    emb: Var,
    k: usize,
    exclude_self: bool,
) -> Result<Var> {
    batch.validate()?;
    let rows = g.value(emb).rows_cols().0;
    if rows != batch.len() {
        return Err(Error::shape(
            "aggregation_loss",
            format!("{rows} rows for {} samples", batch.len()),
        ));
    }
    if batch.prototypical.is_empty() {
        return Err(Error::Data("no prototypical samples in batch".into()));
    }
    let sets = neighbor_sets(bank, g.value(emb), batch, k, exclude_self)?;
    let all_rows =
        batch.prototypical.len() == batch.len() && batch.prototypical.iter().enumerate().all(|(i, &p)| i == p);
    let ps = if all_rows {
        emb
    } else {
        g.select_rows(emb, batch.prototypical.clone())?
    };
    let mut logits = bank_logits(g, bank, ps)?;
    if exclude_self {
        let p = batch.prototypical.len();
        let mut mask = Tensor::zeros(&[p, bank.len()]);
        for (row, &r) in batch.prototypical.iter().enumerate() {
            mask.data_mut()[row * bank.len() + batch.samples[r]] = T::lit(MASKED_LOGIT);
        }
        let mask = g.constant(mask);
        logits = g.add(logits, mask)?;
    }
    let probs = g.softmax_rows(logits)?;
    let mass = g.masked_row_sum(probs, sets)?;
    check_masses(g, mass, "aggregation_loss")?;
    let logm = g.log(mass)?;
    let nll = g.neg(logm)?;
    g.mean(nll)
}

/// `mse + λ·(ss + agg)` on the graph; absent terms are skipped.
pub fn salad_objective<T: Scalar>(
    g: &mut Graph<T>,
    mse: Option<Var>,
    ss: Option<Var>,
    agg: Option<Var>,
    lambda: T,
) -> Result<Var> {
    let latent = match (ss, agg) {
        (Some(a), Some(b)) => Some(g.add(a, b)?),
        (one, None) | (None, one) => one,
    };
    let weighted = match latent {
        Some(l) => Some(g.scale(l, lambda)?),
        None => None,
    };
    match (mse, weighted) {
        (Some(m), Some(w)) => g.add(m, w),
        (Some(m), None) => Ok(m),
        (None, Some(w)) => Ok(w),
        (None, None) => Err(Error::Config("every loss term is disabled".into())),
    }
}

/// Probability mass the bank distribution of `z` places on its `k` nearest
/// slots. Used for monitoring; no gradient.
pub fn neighbor_mass<T: Scalar>(bank: &MemoryBank<T>, z: &[T], k: usize) -> Result<T> {
    let ns = bank.top_k_neighbors(z, k, None)?;
    let dist = bank.similarity_distribution(z)?;
    Ok(dist.mass(&ns.indices))
}
