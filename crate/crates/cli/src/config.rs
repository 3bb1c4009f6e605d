//! Flat `key=value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are skipped. Every key is
//! optional; unknown or repeated keys are errors.
//!
//! | key | default |
//! |-----|---------|
//! | `epochs` | 50 |
//! | `lr_rnn` | 0.01 |
//! | `lr_embed` | 0.0001 |
//! | `decay_rate` | 0.9 |
//! | `decay_start` | 10 |
//! | `seed` | 0 |
//! | `eval_every` | 1 |
//! | `clip_norm` | none |
//! | `grid` | 8x8 |
//! | `patch` | 2 |
//! | `feature_dim` | 16 |
//! | `hidden` | 64 |
//! | `classes` | 3 |
//! | `recurrence` | true |
//! | `dense` | true |
//! | `attention` | true |
//! | `directions` | 4 |
//! | `shared_z` | false |
//! | `average_preds` | false |
//! | `init_scale` | 1.0 |
//! | `store_pairwise_limit` | 1024 |

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use ddrnn::{DdRnnConfig, GridShape, ModelConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            model: ModelConfig {
                grid: GridShape::new(8, 8),
                patch: 2,
                feature_dim: 16,
                hidden_dim: 64,
                classes: 3,
                rnn: DdRnnConfig::default(),
                init_scale: 1.0,
            },
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| anyhow!("bad value `{raw}` for `{key}`"))
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => bail!("bad value `{raw}` for `{key}`, expected true or false"),
    }
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, raw) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key=value, got `{line}`", n + 1))?;
        let (key, raw) = (key.trim(), raw.trim());
        if !seen.insert(key.to_string()) {
            bail!("line {}: duplicate key `{key}`", n + 1);
        }
        let (t, m) = (&mut cfg.train, &mut cfg.model);
        let res = (|| -> Result<()> {
            match key {
                "epochs" => t.epochs = value(key, raw)?,
                "lr_rnn" => t.base_lr_rnn = value(key, raw)?,
                "lr_embed" => t.base_lr_embed = value(key, raw)?,
                "decay_rate" => t.decay_rate = value(key, raw)?,
                "decay_start" => t.decay_start_epoch = value(key, raw)?,
                "seed" => t.seed = value(key, raw)?,
                "eval_every" => t.eval_every = value(key, raw)?,
                "clip_norm" => t.clip_norm = Some(value(key, raw)?),
                "grid" => m.grid = value(key, raw)?,
                "patch" => m.patch = value(key, raw)?,
                "feature_dim" => m.feature_dim = value(key, raw)?,
                "hidden" => m.hidden_dim = value(key, raw)?,
                "classes" => m.classes = value(key, raw)?,
                "recurrence" => m.rnn.recurrence = flag(key, raw)?,
                "dense" => m.rnn.dense = flag(key, raw)?,
                "attention" => m.rnn.attention = flag(key, raw)?,
                "directions" => m.rnn.directions = value(key, raw)?,
                "shared_z" => m.rnn.shared_z = flag(key, raw)?,
                "average_preds" => m.rnn.average_preds = flag(key, raw)?,
                "init_scale" => m.init_scale = value(key, raw)?,
                "store_pairwise_limit" => m.rnn.store_pairwise_limit = value(key, raw)?,
                _ => bail!("unknown key `{key}`"),
            }
            Ok(())
        })();
        res.with_context(|| format!("line {}", n + 1))?;
    }
    cfg.train.validate()?;
    cfg.model.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config_str(&text).with_context(|| format!("in {}", path.display()))
}
