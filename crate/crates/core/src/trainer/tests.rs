use super::*;
use crate::dataprep::{synth_generate, SynthConfig};

fn toy_data(count: usize, seed: u64) -> Dataset<f64> {
    let cfg = SynthConfig {
        count,
        size: 8,
        anomaly_fraction: 0.125,
        ..SynthConfig::default()
    };
    Dataset::from_samples(&synth_generate(&cfg, seed).unwrap()).unwrap()
}

fn toy_config() -> TrainingConfig {
    TrainingConfig {
        batch_size: 8,
        pretrain_epochs: 2,
        rounds: 2,
        epochs_per_round: 2,
        encoder_hidden: vec![16],
        latent_dim: 4,
        k_max: 6,
        k_score: 5,
        learning_rate: 1e-3,
        ..TrainingConfig::desk()
    }
}

#[test]
fn zero_epochs_is_a_no_op() {
    let data = toy_data(16, 1);
    let cfg = TrainingConfig {
        pretrain_epochs: 0,
        rounds: 0,
        ..toy_config()
    };
    let mut t = Trainer::new(cfg, &data).unwrap();
    let before = (t.params().clone(), t.bank().clone());
    t.run(&data, &mut ()).unwrap();
    assert_eq!((t.params().clone(), t.bank().clone()), before);
    assert!(t.report().epochs.is_empty() && t.report().round_mass.is_empty());
}

#[test]
fn dataset_smaller_than_batch_is_rejected() {
    let data = toy_data(4, 1);
    assert!(Trainer::new(toy_config(), &data).is_err());
}

#[test]
fn pretraining_reduces_reconstruction_error() {
    let data = toy_data(32, 2);
    let cfg = TrainingConfig {
        pretrain_epochs: 10,
        rounds: 0,
        ..toy_config()
    };
    let mut t = Trainer::new(cfg, &data).unwrap();
    t.pretrain(&data).unwrap();
    let e = &t.report().epochs;
    assert_eq!(e.len(), 10);
    assert!(e[9].loss.mse < e[0].loss.mse, "{} vs {}", e[9].loss.mse, e[0].loss.mse);
    assert!(e.iter().all(|r| r.k == 0 && r.loss.agg == 0.0 && r.loss.ss > 0.0));
}

#[test]
fn one_epoch_touches_exactly_the_active_slots() {
    let data = toy_data(24, 3);
    let cfg = TrainingConfig {
        exclude_anomalous: true,
        use_ss: false,
        use_agg: false,
        ..toy_config()
    };
    let mut t = Trainer::new(cfg, &data).unwrap();
    let before = t.bank().clone();
    t.run_epoch(&data).unwrap();
    for i in 0..data.len() {
        let changed = t.bank().slot(i) != before.slot(i);
        assert_eq!(changed, !data.anomalous()[i], "slot {i}");
    }
}

#[test]
fn schedule_series_and_flags() {
    let data = toy_data(32, 4);
    let mut t = Trainer::new(toy_config(), &data).unwrap();
    t.run(&data, &mut ()).unwrap();
    let r = t.report();
    assert_eq!(r.epochs.len(), 6);
    assert_eq!(r.round_mass.len(), 2);
    assert_eq!(r.epochs.iter().map(|e| e.k).collect::<Vec<_>>(), vec![0, 0, 3, 3, 6, 6]);
    assert!(r.epochs.iter().all(|e| e.loss.total.is_finite()));
    assert!(r.epochs[2..].iter().all(|e| e.loss.agg > 0.0));
    assert_eq!(t.bank().anomaly_flags(), data.anomalous());
    assert!(t.run_epoch(&data).is_err());
}

#[test]
fn progressive_requires_pretraining() {
    let data = toy_data(16, 5);
    let mut t = Trainer::new(toy_config(), &data).unwrap();
    assert!(t.train_progressive(&data, &mut ()).is_err());
}

#[test]
fn zero_rounds_leave_pretrained_state() {
    let data = toy_data(16, 5);
    let cfg = TrainingConfig {
        rounds: 0,
        ..toy_config()
    };
    let mut t = Trainer::new(cfg, &data).unwrap();
    t.pretrain(&data).unwrap();
    let snapshot = (t.params().clone(), t.bank().clone());
    t.train_progressive(&data, &mut ()).unwrap();
    assert_eq!((t.params().clone(), t.bank().clone()), snapshot);
}

#[test]
fn losses_ignore_labels() {
    let data = toy_data(32, 6);
    let mut permuted = data.anomalous().to_vec();
    permuted.rotate_left(5);
    let other = data.clone().with_anomalous(permuted).unwrap();
    let mut a = Trainer::new(toy_config(), &data).unwrap();
    let mut b = Trainer::new(toy_config(), &other).unwrap();
    a.run(&data, &mut ()).unwrap();
    b.run(&other, &mut ()).unwrap();
    assert_eq!(a.report().epochs, b.report().epochs);
    assert_eq!(a.params(), b.params());
}

#[test]
fn dae_ablation_equals_lambda_zero_without_augmentation() {
    let data = toy_data(32, 7);
    let manual = TrainingConfig {
        lambda: 0.0,
        aug_flip_prob: 0.0,
        aug_min_crop_area: 1.0,
        aug_noise_sigma: 0.0,
        ..toy_config()
    };
    let ablated = toy_config().with_ablation(Ablation::Dae);
    let mut a = Trainer::new(manual, &data).unwrap();
    let mut b = Trainer::new(ablated, &data).unwrap();
    a.run(&data, &mut ()).unwrap();
    b.run(&data, &mut ()).unwrap();
    assert_eq!(a.report().epochs, b.report().epochs);
    assert_eq!(a.params(), b.params());
    assert!(a.report().epochs.iter().all(|e| e.loss.ss == 0.0 && e.loss.agg == 0.0));
}

#[test]
fn memdae_never_evaluates_latent_terms() {
    let data = toy_data(32, 8);
    let mut t = Trainer::new(toy_config().with_ablation(Ablation::MemDae), &data).unwrap();
    t.run(&data, &mut ()).unwrap();
    assert!(t
        .report()
        .epochs
        .iter()
        .all(|e| e.loss.ss == 0.0 && e.loss.agg == 0.0 && e.loss.mse > 0.0));
}

#[test]
fn resume_matches_uninterrupted_run() {
    struct Stop(usize);
    impl TrainObserver<f64> for Stop {
        fn on_boundary(&mut self, _t: &Trainer<f64>) -> Result<()> {
            self.0 -= 1;
            if self.0 == 0 {
                return Err(Error::Config("interrupted".into()));
            }
            Ok(())
        }
    }
    let data = toy_data(32, 9);
    let mut full = Trainer::new(toy_config(), &data).unwrap();
    full.run(&data, &mut ()).unwrap();

    let mut part = Trainer::new(toy_config(), &data).unwrap();
    assert!(part.run(&data, &mut Stop(2)).is_err());
    assert_eq!(part.epochs_done(), 4);
    let mut resumed = Trainer::from_parts(
        part.config().clone(),
        part.params().clone(),
        part.adam().clone(),
        part.bank().clone(),
        part.epochs_done(),
        part.report().clone(),
    )
    .unwrap();
    resumed.run(&data, &mut ()).unwrap();
    assert_eq!(resumed.report().epochs, full.report().epochs);
    assert_eq!(resumed.report().round_mass, full.report().round_mass);
    assert_eq!(resumed.params(), full.params());
    assert_eq!(resumed.bank(), full.bank());
}

#[test]
fn csv_layout() {
    let report = TrainReport {
        epochs: vec![EpochRecord {
            epoch: 1,
            k: 0,
            loss: LossBreakdown::combine(1.0, 2.0, 2.0, 0.25).unwrap(),
        }],
        ..TrainReport::default()
    };
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "epoch,mse,ss,agg,total,k\n1,1,2,2,2,0\n"
    );
}

#[test]
fn scoring_after_training() {
    let data = toy_data(32, 10);
    let mut t = Trainer::new(toy_config(), &data).unwrap();
    t.run(&data, &mut ()).unwrap();
    let imgs: Vec<&[f64]> = (0..4).map(|i| data.image(i).pixels()).collect();
    let s = t.score(&imgs).unwrap();
    assert_eq!(s.len(), 4);
    assert!(s.iter().all(|x| (0.0..=1.0).contains(&x.raw)));
}
