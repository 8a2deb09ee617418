use std::fs;

use salad::trainer::{Ablation, TrainingConfig};
use toml::{Table, Value};

use crate::args::TrainArgs;
use crate::error::{CliError, Result};

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn set(table: &mut Table, key: &str, value: Value) -> Result<()> {
    if !table.contains_key(key) {
        return Err(usage(format!("unknown config key {key:?}")));
    }
    table.insert(key.to_string(), value);
    Ok(())
}

/// Parses `key=value` with `value` in TOML syntax; bare words are taken as
/// strings.
fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| usage(format!("override {s:?} is not key=value")))?;
    let k = k.trim();
    let parsed: Table = toml::from_str(&format!("v = {}", v.trim())).unwrap_or_else(|_| {
        let mut t = Table::new();
        t.insert("v".into(), Value::String(v.trim().to_string()));
        t
    });
    Ok((k.to_string(), parsed["v"].clone()))
}

/// Preset, then config file, then `--set` overrides, then named flags. The
/// ablation is applied last.
pub fn training_config(a: &TrainArgs) -> Result<TrainingConfig> {
    let preset = TrainingConfig::preset(&a.preset).map_err(usage)?;
    let mut table: Table = toml::from_str(&preset.to_toml()?).map_err(usage)?;
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let file: Table = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        for (k, v) in file {
            set(&mut table, &k, v)?;
        }
    }
    for o in &a.overrides {
        let (k, v) = parse_override(o)?;
        set(&mut table, &k, v)?;
    }
    let floats = [
        ("learning_rate", a.lr),
        ("lambda", a.lambda),
        ("temperature", a.temperature),
    ];
    for (k, v) in floats {
        if let Some(v) = v {
            table.insert(k.into(), Value::Float(v));
        }
    }
    let ints = [
        ("batch_size", a.batch_size),
        ("pretrain_epochs", a.pretrain_epochs),
        ("rounds", a.rounds),
        ("epochs_per_round", a.epochs_per_round),
        ("k_max", a.k_max),
        ("k_score", a.k_score),
    ];
    for (k, v) in ints {
        if let Some(v) = v {
            table.insert(k.into(), Value::Integer(v as i64));
        }
    }
    let cfg = TrainingConfig::from_toml(&toml::to_string(&table).map_err(usage)?)?;
    let cfg = cfg.with_ablation(Ablation::from(a.ablate));
    cfg.validate()?;
    Ok(cfg)
}
