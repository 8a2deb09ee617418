use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AdamConfig, Architecture};
use crate::trainer::AugmentSpec;

/// How the neighborhood size grows over the progressive rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KSchedule {
    /// `k_r = max(1, round(r / R · k_max))`.
    Linear,
    /// `k_r = max(1, k_max / 2^(R - r))`.
    Doubling,
}

/// Variants of the objective compared against the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    NoAgg,
    NoMse,
    NoSs,
    /// Plain autoencoder: λ = 0 and no augmentation.
    Dae,
    /// Autoencoder trained on normal samples only, latent terms off.
    MemDae,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::NoAgg,
        Ablation::NoMse,
        Ablation::NoSs,
        Ablation::Dae,
        Ablation::MemDae,
    ];
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoAgg => "no-agg",
            Ablation::NoMse => "no-mse",
            Ablation::NoSs => "no-ss",
            Ablation::Dae => "dae",
            Ablation::MemDae => "memdae",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

/// Every training hyperparameter. Serializes to a flat key set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub temperature: f64,
    pub lambda: f64,
    pub update_rate: f64,
    pub k_score: usize,
    pub k_max: usize,
    pub k_schedule: KSchedule,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub pretrain_epochs: usize,
    pub rounds: usize,
    pub epochs_per_round: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub aug_flip_prob: f64,
    pub aug_min_crop_area: f64,
    pub aug_noise_sigma: f64,
    pub aug_count: usize,
    pub use_mse: bool,
    pub use_ss: bool,
    pub use_agg: bool,
    /// Leave anomalous-labeled samples out of training altogether.
    pub exclude_anomalous: bool,
    /// Drop a sample's own slot from its aggregation softmax and neighbors.
    pub exclude_self: bool,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub augment_seed: u64,
}

impl TrainingConfig {
    /// Full-length schedule with the reference hyperparameters and a dense
    /// backbone.
    pub fn full() -> Self {
        TrainingConfig {
            temperature: 0.1,
            lambda: 0.25,
            update_rate: 0.5,
            k_score: 100,
            k_max: 100,
            k_schedule: KSchedule::Linear,
            batch_size: 16,
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            pretrain_epochs: 50,
            rounds: 10,
            epochs_per_round: 50,
            encoder_hidden: vec![512],
            latent_dim: 200,
            aug_flip_prob: 0.5,
            aug_min_crop_area: 0.8,
            aug_noise_sigma: 0.02,
            aug_count: 2,
            use_mse: true,
            use_ss: true,
            use_agg: true,
            exclude_anomalous: false,
            exclude_self: false,
            init_seed: 0,
            shuffle_seed: 1,
            augment_seed: 2,
        }
    }

    /// Shortened schedule and smaller network for single-core runs. The
    /// neighborhood is scaled down with the bank, and the larger step and
    /// weight compensate for the fewer epochs.
    pub fn desk() -> Self {
        TrainingConfig {
            lambda: 1.0,
            learning_rate: 1e-3,
            k_score: 10,
            k_max: 16,
            pretrain_epochs: 20,
            rounds: 5,
            epochs_per_round: 10,
            encoder_hidden: vec![128],
            latent_dim: 32,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    /// Same seeds and hyperparameters with one objective variant applied.
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        match ablation {
            Ablation::Full => {}
            Ablation::NoAgg => self.use_agg = false,
            Ablation::NoMse => self.use_mse = false,
            Ablation::NoSs => self.use_ss = false,
            Ablation::Dae => {
                self.lambda = 0.0;
                self.disable_augmentation();
            }
            Ablation::MemDae => {
                self.use_ss = false;
                self.use_agg = false;
                self.exclude_anomalous = true;
                self.disable_augmentation();
            }
        }
        self
    }

    fn disable_augmentation(&mut self) {
        let id = AugmentSpec::identity(self.aug_count);
        self.aug_flip_prob = id.flip_prob;
        self.aug_min_crop_area = id.min_crop_area;
        self.aug_noise_sigma = id.noise_sigma;
    }

    /// Replaces all three seeds with ones derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed.wrapping_mul(3);
        self.shuffle_seed = seed.wrapping_mul(3).wrapping_add(1);
        self.augment_seed = seed.wrapping_mul(3).wrapping_add(2);
        self
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn augment_spec(&self) -> AugmentSpec {
        AugmentSpec {
            flip_prob: self.aug_flip_prob,
            min_crop_area: self.aug_min_crop_area,
            noise_sigma: self.aug_noise_sigma,
            count: self.aug_count,
        }
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture::mirrored(input_dim, &self.encoder_hidden, self.latent_dim)
    }

    /// Whether the latent terms are evaluated at all.
    pub fn latent_active(&self) -> bool {
        self.lambda > 0.0 && (self.use_ss || self.use_agg)
    }

    pub fn total_epochs(&self) -> usize {
        self.pretrain_epochs + self.rounds * self.epochs_per_round
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.temperature > 0.0 && self.temperature <= 1.0) {
            return bad("temperature must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.update_rate) {
            return bad("update rate must lie in [0, 1]");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if self.k_score == 0 || self.k_max == 0 || self.batch_size == 0 || self.latent_dim == 0 {
            return bad("k_score, k_max, batch_size and latent_dim must be positive");
        }
        if self.rounds > 0 && self.epochs_per_round == 0 {
            return bad("epochs_per_round must be positive when rounds are scheduled");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("learning rate must be positive and betas in [0, 1)");
        }
        if !self.use_mse && !self.latent_active() {
            return bad("every loss term is disabled");
        }
        self.augment_spec().validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Neighborhood size used during round `round` (1-based) of `cfg.rounds`.
pub fn neighborhood_schedule(round: usize, cfg: &TrainingConfig) -> Result<usize> {
    let r_total = cfg.rounds;
    if round == 0 || round > r_total {
        return Err(Error::Config(format!("round {round} outside 1..={r_total}")));
    }
    let k = match cfg.k_schedule {
        KSchedule::Linear => (round as f64 / r_total as f64 * cfg.k_max as f64).round() as usize,
        KSchedule::Doubling => cfg.k_max >> (r_total - round).min(usize::BITS as usize - 1),
    };
    Ok(k.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_preset_values() {
        let c = TrainingConfig::full();
        assert_eq!(c.temperature, 0.1);
        assert_eq!(c.lambda, 0.25);
        assert_eq!(c.update_rate, 0.5);
        assert_eq!(c.k_score, 100);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.batch_size, 16);
        assert_eq!((c.beta1, c.beta2), (0.5, 0.999));
        assert_eq!((c.pretrain_epochs, c.rounds, c.epochs_per_round), (50, 10, 50));
        let d = TrainingConfig::desk();
        assert_eq!((d.pretrain_epochs, d.rounds, d.epochs_per_round), (20, 5, 10));
        assert!(c.validate().is_ok() && d.validate().is_ok());
    }

    #[test]
    fn linear_schedule() {
        let c = TrainingConfig::full();
        assert_eq!(neighborhood_schedule(1, &c).unwrap(), 10);
        assert_eq!(neighborhood_schedule(10, &c).unwrap(), 100);
        assert!(neighborhood_schedule(0, &c).is_err());
        assert!(neighborhood_schedule(11, &c).is_err());
        for sched in [KSchedule::Linear, KSchedule::Doubling] {
            let c = TrainingConfig {
                k_schedule: sched,
                k_max: 37,
                rounds: 7,
                ..TrainingConfig::full()
            };
            let ks: Vec<usize> = (1..=7).map(|r| neighborhood_schedule(r, &c).unwrap()).collect();
            assert!(ks.windows(2).all(|w| w[0] <= w[1]), "{ks:?}");
            assert_eq!(*ks.last().unwrap(), 37);
            assert!(ks[0] >= 1);
        }
    }

    #[test]
    fn ablation_mapping() {
        let base = TrainingConfig::desk();
        let dae = base.clone().with_ablation(Ablation::Dae);
        assert_eq!(dae.lambda, 0.0);
        assert!(dae.augment_spec().is_identity());
        assert!(!dae.latent_active());
        let mem = base.clone().with_ablation(Ablation::MemDae);
        assert!(!mem.latent_active() && mem.exclude_anomalous);
        assert!(!base.clone().with_ablation(Ablation::NoAgg).use_agg);
        assert!(base.clone().with_ablation(Ablation::NoMse).validate().is_ok());
        for a in Ablation::ALL {
            assert_eq!(a.to_string().parse::<Ablation>().unwrap(), a);
        }
        assert!("none".parse::<Ablation>().is_err());
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let c = TrainingConfig::desk().with_seed(5);
        let text = c.to_toml().unwrap();
        assert_eq!(TrainingConfig::from_toml(&text).unwrap(), c);
        let bad = text.replace("temperature = 0.1", "temperature = 1.5");
        assert!(TrainingConfig::from_toml(&bad).is_err());
        assert!(TrainingConfig::from_toml("bogus = 1").is_err());
        let off = TrainingConfig {
            use_mse: false,
            lambda: 0.0,
            ..TrainingConfig::desk()
        };
        assert!(off.validate().is_err());
    }
}
