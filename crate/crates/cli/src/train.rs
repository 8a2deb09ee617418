use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread;

use salad::checkpoint::{load_checkpoint, save_bank, save_checkpoint};
use salad::trainer::{Dataset, EpochRecord, TrainObserver, TrainingConfig};
use salad::Trainer;

use crate::args::TrainArgs;
use crate::config::training_config;
use crate::data::{out_path, Manifest};
use crate::error::{CliError, Result};

pub const FINAL_CHECKPOINT: &str = "model.ckpt";
const LOSSES: &str = "losses.csv";
const CHECKPOINTS: &str = "checkpoints";

/// Appends each epoch to the loss log and checkpoints every round boundary.
struct RunLog {
    dir: PathBuf,
    losses: File,
}

impl TrainObserver<f64> for RunLog {
    fn on_epoch(&mut self, record: &EpochRecord) -> salad::Result<()> {
        writeln!(self.losses, "{}", record.csv_line())?;
        self.losses.flush()?;
        Ok(())
    }

    fn on_boundary(&mut self, t: &Trainer) -> salad::Result<()> {
        let c = t.config();
        let round = (t.epochs_done() - c.pretrain_epochs) / c.epochs_per_round.max(1);
        save_checkpoint(&self.dir.join(CHECKPOINTS).join(format!("round-{round:03}.ckpt")), t)
    }
}

/// Latest round checkpoint in `dir`, by file name.
fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let ck = dir.join(CHECKPOINTS);
    if !ck.is_dir() {
        return Ok(None);
    }
    let mut found: Vec<PathBuf> = fs::read_dir(ck)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    found.retain(|p| p.extension().is_some_and(|e| e == "ckpt"));
    found.sort();
    Ok(found.pop())
}

fn run_one(cfg: TrainingConfig, data: &Dataset<f64>, dir: &Path, resume: bool) -> Result<String> {
    fs::create_dir_all(dir.join(CHECKPOINTS))?;
    let mut trainer = match resume.then(|| latest_checkpoint(dir)).transpose()?.flatten() {
        Some(path) => {
            let t: Trainer = load_checkpoint(&path)?;
            if *t.config() != cfg {
                return Err(CliError::Usage(format!(
                    "{} was written with a different configuration",
                    path.display()
                )));
            }
            t
        }
        None if resume => {
            return Err(CliError::Data(format!("no checkpoint to resume in {}", dir.display())));
        }
        None => Trainer::new(cfg, data)?,
    };
    fs::write(dir.join("config.toml"), trainer.config().to_toml()?)?;

    // The log is rewritten from the checkpoint so a resumed run drops any
    // epochs logged after the last boundary.
    let mut losses = Vec::new();
    trainer.report().write_csv(&mut losses)?;
    fs::write(dir.join(LOSSES), losses)?;
    let losses = OpenOptions::new().append(true).open(dir.join(LOSSES))?;
    let mut log = RunLog {
        dir: dir.to_path_buf(),
        losses,
    };
    trainer.run(data, &mut log)?;

    save_checkpoint(&dir.join(FINAL_CHECKPOINT), &trainer)?;
    save_bank(&dir.join("bank.bin"), trainer.bank())?;
    let mut mass = String::from("round,mass\n");
    for (i, m) in trainer.report().round_mass.iter().enumerate() {
        mass.push_str(&format!("{},{m}\n", i + 1));
    }
    fs::write(dir.join("rounds.csv"), mass)?;

    let last = trainer.report().epochs.last();
    Ok(format!(
        "{}: {} epochs, final total loss {}, {:.1}s",
        dir.display(),
        trainer.epochs_done(),
        last.map_or(f64::NAN, |e| e.loss.total),
        trainer.report().wall_clock.as_secs_f64()
    ))
}

pub fn train(a: &TrainArgs, root: &Option<PathBuf>) -> Result<()> {
    let cfg = training_config(a)?;
    let data = Dataset::from_samples(&Manifest::read(&a.train)?.load_samples()?)?;
    let out = out_path(root, &a.out);
    let n = a.replicates as usize;
    let jobs: Vec<(TrainingConfig, PathBuf)> = (0..n)
        .map(|i| {
            let c = match a.seed {
                Some(s) => cfg.clone().with_seed(s + i as u64),
                None if n > 1 => cfg.clone().with_seed(i as u64),
                None => cfg.clone(),
            };
            let dir = if n == 1 {
                out.clone()
            } else {
                out.join(format!("rep{i}"))
            };
            (c, dir)
        })
        .collect();

    if !a.parallel {
        for (c, dir) in jobs {
            println!("{}", run_one(c, &data, &dir, a.resume)?);
        }
        return Ok(());
    }
    let results: Vec<Result<String>> = thread::scope(|s| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(c, dir)| {
                let data = &data;
                s.spawn(move || run_one(c, data, &dir, a.resume))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(CliError::Data("replicate thread panicked".into())))
            })
            .collect()
    });
    for r in results {
        println!("{}", r?);
    }
    Ok(())
}
