//! Experiment configuration: flat `key = value` text with `[section]` headers.
//!
//! ```text
//! seed = 42
//! [data]
//! source = synthetic
//! days = 365
//! [ppo]
//! epochs = 1000
//! ```
//!
//! Keys are addressed as `section.key` (or bare `key` before any section),
//! both in files and in `--set section.key=value` overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::agents::PpoConfig;
use crate::dataio::SynthParams;
use crate::env::EnvConfig;
use crate::forecast::MoeConfig;
use crate::{Error, Result};

/// Parses config text into `section.key → value`. Later keys win.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i as u64 + 1;
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("unterminated section header `{line}`"),
            })?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                msg: "empty key".into(),
            });
        }
        let key = if section.is_empty() {
            k.to_string()
        } else {
            format!("{section}.{k}")
        };
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// Splits a `section.key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override must look like key=value, got `{s}`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        days: usize,
        seed: u64,
        params: SynthParams,
    },
    /// Raw solar measurements plus a daily price file.
    Csv {
        solar: PathBuf,
        prices: PathBuf,
        missing_generation_is_zero: bool,
    },
    /// A `day,price,generation` file as written by `synth`.
    Dataset { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Episodes {
    pub ppo: usize,
    pub moe: usize,
    pub random: usize,
    pub sell_only: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Master seed for training and evaluation (not the synthetic data seed).
    pub seed: u64,
    pub data: DataSource,
    /// Chronological test fraction for the trading environment.
    pub env_test_fraction: f64,
    pub env: EnvConfig,
    /// `ppo.epochs` is the long run; the short agent is a snapshot of it.
    pub ppo: PpoConfig,
    pub ppo_short_epochs: usize,
    pub ppo_greedy: bool,
    /// `moe.test_fraction` is the forecaster's own random split.
    pub moe: MoeConfig,
    /// Expert counts for the table-embedding rows of the comparison.
    pub compare_table_experts: Vec<usize>,
    pub leak_free: bool,
    pub episodes: Episodes,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data: DataSource::Synthetic {
                days: 365,
                seed: 42,
                params: SynthParams::default(),
            },
            env_test_fraction: 0.3,
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            ppo_short_epochs: 30,
            ppo_greedy: false,
            moe: MoeConfig::default(),
            compare_table_experts: vec![2, 4, 6],
            leak_free: true,
            episodes: Episodes {
                ppo: 30,
                moe: 30,
                random: 5,
                sell_only: 1,
            },
            out_dir: PathBuf::from("results"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{v}`: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true|false, got `{v}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s.trim()))
        .collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_entries(&parse_config(&text)?)
    }

    pub fn from_entries(entries: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(entries)?;
        Ok(cfg)
    }

    /// Applies `data.source` first so source-specific keys land correctly.
    pub fn apply(&mut self, entries: &BTreeMap<String, String>) -> Result<()> {
        if let Some(v) = entries.get("data.source") {
            self.set("data.source", v)?;
        }
        for (k, v) in entries {
            if k != "data.source" {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    /// Sets one key; unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.ppo;
        let m = &mut self.moe;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data.source" => {
                self.data = match v {
                    "synthetic" => DataSource::Synthetic {
                        days: 365,
                        seed: 42,
                        params: SynthParams::default(),
                    },
                    "csv" => DataSource::Csv {
                        solar: PathBuf::new(),
                        prices: PathBuf::new(),
                        missing_generation_is_zero: false,
                    },
                    "dataset" => DataSource::Dataset { path: PathBuf::new() },
                    _ => {
                        return Err(Error::Config(format!(
                            "data.source must be synthetic|csv|dataset, got `{v}`"
                        )))
                    }
                }
            }
            k if k.starts_with("data.") => self.set_data(k, v)?,
            "split.env_test_fraction" => self.env_test_fraction = parse(key, v)?,
            "split.moe_test_fraction" => m.test_fraction = parse(key, v)?,
            "env.reward_balance_timing" => self.env.reward_balance_timing = parse(key, v)?,
            "env.reward" => self.env.reward = parse(key, v)?,
            "ppo.gamma" => p.gamma = parse(key, v)?,
            "ppo.lambda" => p.lambda = parse(key, v)?,
            "ppo.clip" => p.clip = parse(key, v)?,
            "ppo.epochs" => p.epochs = parse(key, v)?,
            "ppo.short_epochs" => self.ppo_short_epochs = parse(key, v)?,
            "ppo.update_passes" => p.update_passes = parse(key, v)?,
            "ppo.minibatch" => p.minibatch = parse(key, v)?,
            "ppo.actor_lr" => p.actor_lr = parse(key, v)?,
            "ppo.critic_lr" => p.critic_lr = parse(key, v)?,
            "ppo.entropy_coef" => p.entropy_coef = parse(key, v)?,
            "ppo.actor_hidden" => {
                p.actor_hidden = parse_list::<usize>(key, v)?
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: need exactly three widths")))?
            }
            "ppo.critic_hidden" => {
                p.critic_hidden = parse_list::<usize>(key, v)?
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: need exactly two widths")))?
            }
            "ppo.hidden_activation" => p.hidden_activation = parse(key, v)?,
            "ppo.rollouts_per_epoch" => p.rollouts_per_epoch = parse(key, v)?,
            "ppo.reward_scale" => p.reward_scale = parse(key, v)?,
            "ppo.normalize_advantages" => p.normalize_advantages = parse_bool(key, v)?,
            "ppo.sell_transitions_only" => p.sell_transitions_only = parse_bool(key, v)?,
            "ppo.gae_form" => p.gae_form = parse(key, v)?,
            "ppo.greedy_eval" => self.ppo_greedy = parse_bool(key, v)?,
            "moe.embedding" => m.embedding = parse(key, v)?,
            "moe.dim" => m.dim = parse(key, v)?,
            "moe.experts" => m.experts = parse(key, v)?,
            "moe.k" => m.k = parse(key, v)?,
            "moe.expert_hidden" => m.expert_hidden = parse(key, v)?,
            "moe.soliton_hidden" => m.soliton_hidden = parse(key, v)?,
            "moe.input_scale" => m.input_scale = parse(key, v)?,
            "moe.soliton_tail" => m.soliton_tail = parse(key, v)?,
            "moe.soliton_profile" => m.soliton_profile = parse(key, v)?,
            "moe.augment" => m.augment = parse_bool(key, v)?,
            "moe.epochs" => m.epochs = parse(key, v)?,
            "moe.lr" => m.lr = parse(key, v)?,
            "moe.batch_size" => m.batch_size = parse(key, v)?,
            "moe.importance_coef" => m.importance_coef = parse(key, v)?,
            "moe.compare_table_experts" => self.compare_table_experts = parse_list(key, v)?,
            "moe.leak_free" => self.leak_free = parse_bool(key, v)?,
            "eval.ppo_episodes" => self.episodes.ppo = parse(key, v)?,
            "eval.moe_episodes" => self.episodes.moe = parse(key, v)?,
            "eval.random_episodes" => self.episodes.random = parse(key, v)?,
            "eval.sell_only_episodes" => self.episodes.sell_only = parse(key, v)?,
            "output.dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    fn set_data(&mut self, key: &str, v: &str) -> Result<()> {
        let field = &key["data.".len()..];
        match (&mut self.data, field) {
            (DataSource::Synthetic { days, .. }, "days") => *days = parse(key, v)?,
            (DataSource::Synthetic { seed, .. }, "seed") => *seed = parse(key, v)?,
            (DataSource::Synthetic { params, .. }, f) => {
                let slot = match f {
                    "price_base" => &mut params.price_base,
                    "price_amplitude" => &mut params.price_amplitude,
                    "price_noise" => &mut params.price_noise,
                    "price_phase" => &mut params.price_phase,
                    "gen_base" => &mut params.gen_base,
                    "gen_amplitude" => &mut params.gen_amplitude,
                    "gen_noise" => &mut params.gen_noise,
                    "gen_phase" => &mut params.gen_phase,
                    _ => return Err(Error::Config(format!("unknown key `{key}` for synthetic data"))),
                };
                *slot = parse(key, v)?;
            }
            (DataSource::Csv { solar, .. }, "solar") => *solar = PathBuf::from(v),
            (DataSource::Csv { prices, .. }, "prices") => *prices = PathBuf::from(v),
            (
                DataSource::Csv {
                    missing_generation_is_zero,
                    ..
                },
                "missing_generation_is_zero",
            ) => *missing_generation_is_zero = parse_bool(key, v)?,
            (DataSource::Dataset { path }, "path") => *path = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key `{key}` for data source"))),
        }
        Ok(())
    }

    /// Every effective setting as sorted `key = value` pairs.
    pub fn entries(&self) -> Vec<(String, String)> {
        let p = &self.ppo;
        let m = &self.moe;
        let mut e: Vec<(String, String)> = vec![("seed".into(), self.seed.to_string())];
        match &self.data {
            DataSource::Synthetic { days, seed, params } => {
                e.push(("data.source".into(), "synthetic".into()));
                e.push(("data.days".into(), days.to_string()));
                e.push(("data.seed".into(), seed.to_string()));
                for (k, v) in [
                    ("price_base", params.price_base),
                    ("price_amplitude", params.price_amplitude),
                    ("price_noise", params.price_noise),
                    ("price_phase", params.price_phase),
                    ("gen_base", params.gen_base),
                    ("gen_amplitude", params.gen_amplitude),
                    ("gen_noise", params.gen_noise),
                    ("gen_phase", params.gen_phase),
                ] {
                    e.push((format!("data.{k}"), v.to_string()));
                }
            }
            DataSource::Csv {
                solar,
                prices,
                missing_generation_is_zero,
            } => {
                e.push(("data.source".into(), "csv".into()));
                e.push(("data.solar".into(), solar.display().to_string()));
                e.push(("data.prices".into(), prices.display().to_string()));
                e.push((
                    "data.missing_generation_is_zero".into(),
                    missing_generation_is_zero.to_string(),
                ));
            }
            DataSource::Dataset { path } => {
                e.push(("data.source".into(), "dataset".into()));
                e.push(("data.path".into(), path.display().to_string()));
            }
        }
        let mut push = |k: &str, v: String| e.push((k.to_string(), v));
        push("split.env_test_fraction", self.env_test_fraction.to_string());
        push("split.moe_test_fraction", m.test_fraction.to_string());
        push("env.reward_balance_timing", self.env.reward_balance_timing.to_string());
        push("env.reward", self.env.reward.to_string());
        push("ppo.gamma", p.gamma.to_string());
        push("ppo.lambda", p.lambda.to_string());
        push("ppo.clip", p.clip.to_string());
        push("ppo.epochs", p.epochs.to_string());
        push("ppo.short_epochs", self.ppo_short_epochs.to_string());
        push("ppo.update_passes", p.update_passes.to_string());
        push("ppo.minibatch", p.minibatch.to_string());
        push("ppo.actor_lr", p.actor_lr.to_string());
        push("ppo.critic_lr", p.critic_lr.to_string());
        push("ppo.entropy_coef", p.entropy_coef.to_string());
        push("ppo.actor_hidden", join(&p.actor_hidden));
        push("ppo.critic_hidden", join(&p.critic_hidden));
        push("ppo.hidden_activation", p.hidden_activation.to_string());
        push("ppo.rollouts_per_epoch", p.rollouts_per_epoch.to_string());
        push("ppo.reward_scale", p.reward_scale.to_string());
        push("ppo.normalize_advantages", p.normalize_advantages.to_string());
        push("ppo.sell_transitions_only", p.sell_transitions_only.to_string());
        push("ppo.gae_form", p.gae_form.to_string());
        push("ppo.greedy_eval", self.ppo_greedy.to_string());
        push("moe.embedding", m.embedding.to_string());
        push("moe.dim", m.dim.to_string());
        push("moe.experts", m.experts.to_string());
        push("moe.k", m.k.to_string());
        push("moe.expert_hidden", m.expert_hidden.to_string());
        push("moe.soliton_hidden", m.soliton_hidden.to_string());
        push("moe.input_scale", m.input_scale.to_string());
        push("moe.soliton_tail", m.soliton_tail.to_string());
        push("moe.soliton_profile", m.soliton_profile.to_string());
        push("moe.augment", m.augment.to_string());
        push("moe.epochs", m.epochs.to_string());
        push("moe.lr", m.lr.to_string());
        push("moe.batch_size", m.batch_size.to_string());
        push("moe.importance_coef", m.importance_coef.to_string());
        push("moe.compare_table_experts", join(&self.compare_table_experts));
        push("moe.leak_free", self.leak_free.to_string());
        push("eval.ppo_episodes", self.episodes.ppo.to_string());
        push("eval.moe_episodes", self.episodes.moe.to_string());
        push("eval.random_episodes", self.episodes.random.to_string());
        push("eval.sell_only_episodes", self.episodes.sell_only.to_string());
        push("output.dir", self.out_dir.display().to_string());
        e
    }

    /// Canonical text of every setting that affects results (the output
    /// directory is excluded so moving outputs does not change the hash).
    pub fn canonical(&self) -> String {
        self.entries()
            .into_iter()
            .filter(|(k, _)| k != "output.dir")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Sectioned config text that [`parse_config`] reads back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = String::new();
        for (k, v) in self.entries() {
            let (sec, key) = k.split_once('.').unwrap_or(("", k.as_str()));
            if sec != current {
                out.push_str(&format!("\n[{sec}]\n"));
                current = sec.to_string();
            }
            out.push_str(&format!("{key} = {v}\n"));
        }
        out.trim_start().to_string()
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.moe.validate()?;
        let frac = |name: &str, f: f64| {
            if f > 0.0 && f < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1), got {f}")))
            }
        };
        frac("split.env_test_fraction", self.env_test_fraction)?;
        frac("split.moe_test_fraction", self.moe.test_fraction)?;
        let e = &self.episodes;
        if e.ppo == 0 || e.moe == 0 || e.random == 0 || e.sell_only == 0 {
            return Err(Error::Config("episode counts must be positive".into()));
        }
        if self.ppo_short_epochs > self.ppo.epochs {
            return Err(Error::Config(format!(
                "ppo.short_epochs ({}) exceeds ppo.epochs ({})",
                self.ppo_short_epochs, self.ppo.epochs
            )));
        }
        if self.compare_table_experts.iter().any(|&n| n < self.moe.k) {
            return Err(Error::Config(
                "moe.compare_table_experts entries must be ≥ moe.k".into(),
            ));
        }
        let exists = |p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Validation(format!("data file `{}` does not exist", p.display())))
            }
        };
        match &self.data {
            DataSource::Synthetic { days, .. } if *days < 10 => {
                Err(Error::Config(format!("data.days must be at least 10, got {days}")))
            }
            DataSource::Synthetic { .. } => Ok(()),
            DataSource::Csv { solar, prices, .. } => {
                exists(solar)?;
                exists(prices)
            }
            DataSource::Dataset { path } => exists(path),
        }
    }
}
