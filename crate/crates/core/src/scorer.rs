//! Weighted angular k-nearest-neighbor anomaly scoring against the bank.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::membank::{BankView, MemoryBank};
use crate::model::{LatentVector, ModelParams};
use crate::scalar::{dot, Scalar};

/// One sample's score. `votes` holds `(original slot index, weight)` for the
/// `K` angularly nearest slots, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyScore<T> {
    pub raw: T,
    pub normalized: T,
    pub votes: Vec<(usize, T)>,
}

/// Angular distance `arccos(mᵀz)` to every slot of the view.
pub fn angular_distances<T: Scalar>(z: &[T], view: &BankView<'_, T>) -> Result<Vec<T>> {
    if z.len() != view.dim() {
        return Err(Error::shape(
            "angular_distances",
            format!("latent has {} dims, bank has {}", z.len(), view.dim()),
        ));
    }
    Ok((0..view.len())
        .map(|p| {
            let c = dot(view.slot(p), z).max(-T::one()).min(T::one());
            c.acos()
        })
        .collect())
}

/// Mean of the `K` nearest slots' shares of the total angular distance.
/// `normalized` is left at zero; [`score_dataset`] fills it.
pub fn anomaly_score<T: Scalar>(z: &LatentVector<T>, view: &BankView<'_, T>, k: usize) -> Result<AnomalyScore<T>> {
    if view.is_empty() {
        return Err(Error::Data("cannot score against an empty bank view".into()));
    }
    if k == 0 {
        return Err(Error::Config("scoring K must be at least 1".into()));
    }
    if k > view.len() {
        return Err(Error::Config(format!(
            "scoring K = {k} exceeds {} available slots",
            view.len()
        )));
    }
    let angles = angular_distances(z.values(), view)?;
    let total: T = angles.iter().copied().sum();
    let mut order: Vec<usize> = (0..angles.len()).collect();
    order.sort_by(|&a, &b| {
        angles[a]
            .partial_cmp(&angles[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let votes: Vec<(usize, T)> = order[..k]
        .iter()
        .map(|&p| {
            let w = if total > T::zero() {
                angles[p] / total
            } else {
                T::zero()
            };
            (view.original_index(p), w)
        })
        .collect();
    let raw = votes.iter().map(|&(_, w)| w).sum::<T>() / T::from_usize_lossy(k);
    Ok(AnomalyScore {
        raw,
        normalized: T::zero(),
        votes,
    })
}

/// Encodes and scores every sample against the non-anomalous slots, then
/// min-max rescales the raw scores into `normalized`. A degenerate range
/// (one sample, or all raw scores equal) normalizes to zero.
pub fn score_dataset<T: Scalar>(
    images: &[&[T]],
    params: &ModelParams<T>,
    bank: &MemoryBank<T>,
    k: usize,
) -> Result<Vec<AnomalyScore<T>>> {
    if images.is_empty() {
        return Err(Error::Data("no samples to score".into()));
    }
    let view = bank.discard_anomalous()?;
    let mut scores = images
        .iter()
        .map(|x| anomaly_score(&params.encode(x)?, &view, k))
        .collect::<Result<Vec<_>>>()?;
    normalize(&mut scores);
    Ok(scores)
}

/// Min-max rescaling of `raw` into `normalized`.
pub fn normalize<T: Scalar>(scores: &mut [AnomalyScore<T>]) {
    let lo = scores.iter().map(|s| s.raw).fold(T::infinity(), T::min);
    let hi = scores.iter().map(|s| s.raw).fold(T::neg_infinity(), T::max);
    let span = hi - lo;
    for s in scores {
        s.normalized = if span > T::zero() {
            (s.raw - lo) / span
        } else {
            T::zero()
        };
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::Architecture;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = crate::norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    fn random_bank(rng: &mut ChaCha8Rng, n: usize, d: usize) -> MemoryBank<f64> {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        MemoryBank::from_slots(&rows, 0.1, 0.5).unwrap()
    }

    #[test]
    fn exact_slot_match_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = random_bank(&mut rng, 10, 4);
        let z = LatentVector::normalized(bank.slot(3).to_vec()).unwrap();
        let s = anomaly_score(&z, &bank.full_view(), 1).unwrap();
        assert!(s.raw.abs() < 1e-7, "{}", s.raw);
        assert_eq!(s.votes[0].0, 3);
    }

    #[test]
    fn equidistant_two_slots() {
        let bank = MemoryBank::<f64>::from_slots(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0.1, 0.5).unwrap();
        let z = LatentVector::normalized(vec![1.0, 1.0]).unwrap();
        let s = anomaly_score(&z, &bank.full_view(), 2).unwrap();
        assert!((s.votes[0].1 - 0.5).abs() < 1e-12);
        assert!((s.votes[1].1 - 0.5).abs() < 1e-12);
        assert!((s.raw - 0.5).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_oracle() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bank = random_bank(&mut rng, 40, 8);
            let z = LatentVector::normalized((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let s = anomaly_score(&z, &bank.full_view(), 5).unwrap();
            let mut angles: Vec<f64> = (0..40)
                .map(|j| crate::dot(bank.slot(j), z.values()).clamp(-1.0, 1.0).acos())
                .collect();
            let total: f64 = angles.iter().sum();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let oracle = angles[..5].iter().map(|a| a / total).sum::<f64>() / 5.0;
            assert!((s.raw - oracle).abs() < 1e-12);
            let mean_votes = s.votes.iter().map(|v| v.1).sum::<f64>() / 5.0;
            assert!((s.raw - mean_votes).abs() < 1e-12);
            assert!(s.votes.iter().all(|v| (0.0..=1.0).contains(&v.1)));
            assert!((0.0..=1.0).contains(&s.raw));
        }
    }

    #[test]
    fn errors() {
        let bank = MemoryBank::<f64>::from_slots(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0.1, 0.5).unwrap();
        let z = LatentVector::normalized(vec![1.0, 1.0]).unwrap();
        assert!(anomaly_score(&z, &bank.full_view(), 0).is_err());
        assert!(anomaly_score(&z, &bank.full_view(), 3).is_err());
        let mut all = bank.clone();
        all.set_flags(&[true, true]).unwrap();
        assert!(all.discard_anomalous().is_err());
    }

    #[test]
    fn geodesic_rotation_is_monotone() {
        // d=2: slots at angles 0 and 2.5 rad; z rotates from slot 0 toward
        // the far side, away from its nearest slot.
        let bank = MemoryBank::from_slots(&[vec![1.0, 0.0], vec![2.5f64.cos(), 2.5f64.sin()]], 0.1, 0.5).unwrap();
        let mut prev = -1.0;
        for i in 0..=100 {
            let th = -(i as f64) * 0.005;
            let z = LatentVector::normalized(vec![th.cos(), th.sin()]).unwrap();
            let s = anomaly_score(&z, &bank.full_view(), 1).unwrap();
            assert!(s.raw >= prev - 1e-15);
            prev = s.raw;
        }
    }

    #[test]
    fn filtered_view_equals_rebuilt_bank() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut bank = random_bank(&mut rng, 12, 5);
        let flags: Vec<bool> = (0..12).map(|i| i % 4 == 1).collect();
        bank.set_flags(&flags).unwrap();
        let keep: Vec<usize> = (0..12).filter(|&i| !flags[i]).collect();
        let rebuilt = bank.rebuild(&keep).unwrap();
        for _ in 0..10 {
            let z = LatentVector::normalized((0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let a = anomaly_score(&z, &bank.discard_anomalous().unwrap(), 3).unwrap();
            let b = anomaly_score(&z, &rebuilt.full_view(), 3).unwrap();
            assert!((a.raw - b.raw).abs() < 1e-15);
            let mapped: Vec<usize> = b.votes.iter().map(|v| keep[v.0]).collect();
            assert_eq!(a.votes.iter().map(|v| v.0).collect::<Vec<_>>(), mapped);
        }
    }

    #[test]
    fn dataset_normalization_and_permutation() {
        let arch = Architecture::mirrored(16, &[8], 4);
        let params = ModelParams::<f64>::init(&arch, 2).unwrap();
        let bank = MemoryBank::<f64>::init(10, 4, 0.1, 0.5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let imgs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..16).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = imgs.iter().map(Vec::as_slice).collect();
        let s = score_dataset(&refs, &params, &bank, 3).unwrap();
        assert!(s.iter().all(|x| (0.0..=1.0).contains(&x.normalized)));
        assert!(s.iter().any(|x| x.normalized == 0.0) && s.iter().any(|x| x.normalized == 1.0));
        let rev: Vec<&[f64]> = refs.iter().rev().copied().collect();
        let r = score_dataset(&rev, &params, &bank, 3).unwrap();
        for (a, b) in s.iter().zip(r.iter().rev()) {
            assert_eq!(a, b);
        }
        let single = score_dataset(&refs[..1], &params, &bank, 3).unwrap();
        assert_eq!(single[0].normalized, 0.0);
        assert!(score_dataset::<f64>(&[], &params, &bank, 3).is_err());
    }
}
