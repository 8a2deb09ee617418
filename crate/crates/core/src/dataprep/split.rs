use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataprep::{GroupId, Label, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum GroupCategory {
    Normal,
    Abnormal,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitConfig {
    /// Share of all groups assigned to train.
    pub train_groups: f64,
    /// Target share of anomalous images inside train.
    pub train_anomalous: f64,
    /// Largest accepted gap between achieved and target anomalous share.
    pub tolerance: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_groups: 0.5,
            train_anomalous: 0.05,
            tolerance: 0.025,
        }
    }
}

/// Group-disjoint partition; the index lists point into the input samples.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedSplit {
    pub train: Vec<GroupId>,
    pub validation: Vec<GroupId>,
    pub test: Vec<GroupId>,
    pub train_samples: Vec<usize>,
    pub validation_samples: Vec<usize>,
    pub test_samples: Vec<usize>,
}

impl GroupedSplit {
    /// Anomalous share of the train images.
    pub fn train_anomalous_fraction<T>(&self, samples: &[Sample<T>]) -> f64 {
        let a = self
            .train_samples
            .iter()
            .filter(|&&i| samples[i].label.is_anomalous())
            .count();
        a as f64 / self.train_samples.len().max(1) as f64
    }
}

struct Group {
    id: GroupId,
    members: Vec<usize>,
    anomalous: usize,
}

impl Group {
    fn category(&self) -> GroupCategory {
        match self.anomalous {
            0 => GroupCategory::Normal,
            a if a == self.members.len() => GroupCategory::Abnormal,
            _ => GroupCategory::Mixed,
        }
    }
}

/// Splits by (patient, body part) group. Train takes `train_groups` of the
/// groups: normal groups plus however many abnormal/mixed groups bring the
/// anomalous image share closest to `train_anomalous`. The remaining groups
/// alternate between validation and test within each category.
pub fn split_grouped<T>(samples: &[Sample<T>], cfg: &SplitConfig, seed: u64) -> Result<GroupedSplit> {
    if !(0.0..=1.0).contains(&cfg.train_groups) || !(0.0..=1.0).contains(&cfg.train_anomalous) {
        return Err(Error::Config("split ratios must lie in [0, 1]".into()));
    }
    let mut by_id: BTreeMap<GroupId, Group> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let id = s
            .group
            .clone()
            .ok_or_else(|| Error::Data(format!("sample {i} has no group id")))?;
        if s.label == Label::Unknown {
            return Err(Error::Data(format!("sample {i} has an unknown label")));
        }
        let g = by_id.entry(id.clone()).or_insert_with(|| Group {
            id,
            members: Vec::new(),
            anomalous: 0,
        });
        g.members.push(i);
        g.anomalous += usize::from(s.label.is_anomalous());
    }
    if by_id.is_empty() {
        return Err(Error::Data("no samples to split".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: BTreeMap<GroupCategory, Vec<Group>> = BTreeMap::new();
    for g in by_id.into_values() {
        pools.entry(g.category()).or_default().push(g);
    }
    for pool in pools.values_mut() {
        pool.shuffle(&mut rng);
    }
    let mut normal = pools.remove(&GroupCategory::Normal).unwrap_or_default();
    let mut flagged: Vec<Group> = pools.remove(&GroupCategory::Abnormal).unwrap_or_default();
    flagged.extend(pools.remove(&GroupCategory::Mixed).unwrap_or_default());
    flagged.shuffle(&mut rng);

    let total = normal.len() + flagged.len();
    let n_train = (cfg.train_groups * total as f64).round() as usize;
    let mut best: Option<(usize, f64)> = None;
    for a in 0..=flagged.len().min(n_train) {
        let n = n_train - a;
        if n > normal.len() {
            continue;
        }
        let images: usize = normal[..n].iter().chain(&flagged[..a]).map(|g| g.members.len()).sum();
        let anomalous: usize = flagged[..a].iter().map(|g| g.anomalous).sum();
        let frac = anomalous as f64 / images.max(1) as f64;
        if best.is_none_or(|(_, f)| (frac - cfg.train_anomalous).abs() < (f - cfg.train_anomalous).abs()) {
            best = Some((a, frac));
        }
    }
    let (a, frac) = best.ok_or_else(|| Error::Data("no feasible train selection".into()))?;
    if (frac - cfg.train_anomalous).abs() > cfg.tolerance {
        return Err(Error::Data(format!(
            "train anomalous share {frac:.4} misses target {:.4} by more than {}: {} normal and {} abnormal/mixed groups available",
            cfg.train_anomalous,
            cfg.tolerance,
            normal.len(),
            flagged.len()
        )));
    }

    let rest_normal = normal.split_off(n_train - a);
    let rest_flagged = flagged.split_off(a);
    let mut train_groups = normal;
    train_groups.extend(flagged);

    let mut rest: BTreeMap<GroupCategory, Vec<Group>> = BTreeMap::new();
    for g in rest_normal.into_iter().chain(rest_flagged) {
        rest.entry(g.category()).or_default().push(g);
    }
    let (mut val, mut test) = (Vec::new(), Vec::new());
    let mut to_val = true;
    for pool in rest.into_values() {
        for g in pool {
            if to_val {
                val.push(g);
            } else {
                test.push(g);
            }
            to_val = !to_val;
        }
    }

    let finish = |groups: Vec<Group>| -> (Vec<GroupId>, Vec<usize>) {
        let mut idx: Vec<usize> = groups.iter().flat_map(|g| g.members.iter().copied()).collect();
        idx.sort_unstable();
        (groups.into_iter().map(|g| g.id).collect(), idx)
    };
    let (train, train_samples) = finish(train_groups);
    let (validation, validation_samples) = finish(val);
    let (test, test_samples) = finish(test);
    Ok(GroupedSplit {
        train,
        validation,
        test,
        train_samples,
        validation_samples,
        test_samples,
    })
}
