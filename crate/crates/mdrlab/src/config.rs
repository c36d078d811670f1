//! Flat `key = value` experiment configuration.
//!
//! The format is line-oriented: one assignment per line, `#` starts a
//! comment, blank lines are ignored. Unknown keys are hard errors carrying
//! the line they came from. A `preset = name` line (anywhere in the file)
//! selects a built-in base config; every other assignment is applied on top
//! in file order, and `--set key=value` overrides are applied last.
//! [`ExperimentConfig::to_text`] emits the fully resolved config in a fixed
//! key order, so a written manifest re-parses to an identical config.

use crate::envs::{EnvSpec, GridGameConfig, PatchLocConfig};
use crate::error::{Error, Result};
use crate::train::{rounds_for, MdrSchedule, PpoConfig};

/// The six training variants. `-mdr` plans use the (α₁, α₂) split; the
/// others spend every epoch in the standard phase (`eval` additionally pins
/// BatchNorm to its running-statistics path during those updates).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModePlan {
    Bn,
    Eval,
    BnMdr,
    Nonorm,
    Dropout,
    DropoutMdr,
}

pub const MODE_NAMES: [&str; 6] = ["bn", "eval", "bn-mdr", "nonorm", "dropout", "dropout-mdr"];

impl ModePlan {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "bn" => ModePlan::Bn,
            "eval" => ModePlan::Eval,
            "bn-mdr" => ModePlan::BnMdr,
            "nonorm" => ModePlan::Nonorm,
            "dropout" => ModePlan::Dropout,
            "dropout-mdr" => ModePlan::DropoutMdr,
            other => {
                return Err(Error::Config(format!(
                    "unknown mode '{other}' (expected one of {})",
                    MODE_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModePlan::Bn => "bn",
            ModePlan::Eval => "eval",
            ModePlan::BnMdr => "bn-mdr",
            ModePlan::Nonorm => "nonorm",
            ModePlan::Dropout => "dropout",
            ModePlan::DropoutMdr => "dropout-mdr",
        }
    }

    pub fn all() -> [ModePlan; 6] {
        [
            ModePlan::Bn,
            ModePlan::Eval,
            ModePlan::BnMdr,
            ModePlan::Nonorm,
            ModePlan::Dropout,
            ModePlan::DropoutMdr,
        ]
    }

    pub fn uses_batchnorm(&self) -> bool {
        matches!(self, ModePlan::Bn | ModePlan::Eval | ModePlan::BnMdr)
    }

    pub fn pinned_eval(&self) -> bool {
        matches!(self, ModePlan::Eval)
    }

    pub fn uses_dropout(&self) -> bool {
        matches!(self, ModePlan::Dropout | ModePlan::DropoutMdr)
    }

    pub fn uses_mdr(&self) -> bool {
        matches!(self, ModePlan::BnMdr | ModePlan::DropoutMdr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub mode: ModePlan,
    /// Master seed used when `seeds` is empty.
    pub seed: u64,
    /// Fan-out list; each entry is the master seed of one run.
    pub seeds: Vec<u64>,
    /// Training steps K (rollout/optimize cycles).
    pub steps: usize,
    pub lanes: usize,
    /// Transitions collected per step across all lanes.
    pub rollout: usize,
    pub ppo: PpoConfig,
    pub weight_decay: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub hidden: Vec<usize>,
    pub bn_momentum: f64,
    pub dropout_rate: f64,
    pub collapse_window: usize,
    pub collapse_drop: f64,
    /// Checkpoint every n steps (0: only at the end of the run).
    pub checkpoint_every: usize,
    pub out_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvSpec::PatchLoc(PatchLocConfig::default()),
            mode: ModePlan::Bn,
            seed: 7,
            seeds: Vec::new(),
            steps: 40,
            lanes: 4,
            rollout: 512,
            ppo: PpoConfig::default(),
            weight_decay: 1e-4,
            alpha1: 2.0,
            alpha2: 1.0,
            hidden: vec![64, 64],
            bn_momentum: 0.1,
            dropout_rate: 0.2,
            collapse_window: 5,
            collapse_drop: 0.5,
            checkpoint_every: 0,
            out_dir: "runs".to_string(),
        }
    }
}

pub const PRESET_NAMES: [&str; 2] = ["collapse-demo", "gridgame-gen"];

impl ExperimentConfig {
    /// Built-in experiment bases. `collapse-demo` is the reduced
    /// collapse-prone patch-localization setting (small datasets, four
    /// lanes, three epochs); `gridgame-gen` is the level-generalization
    /// setting with a finite train pool and a disjoint holdout pool.
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        match name {
            "collapse-demo" => {
                cfg.env = EnvSpec::PatchLoc(PatchLocConfig { view: 8, ..PatchLocConfig::default() });
                cfg.mode = ModePlan::Bn;
                cfg.steps = 100;
                cfg.lanes = 4;
                cfg.rollout = 512;
                cfg.ppo.minibatch_size = 128;
                cfg.ppo.epochs = 3;
                cfg.ppo.clip_epsilon = 0.2;
                cfg.ppo.learning_rate = 7e-3;
                cfg.ppo.recompute_period = 2;
                cfg.bn_momentum = 0.1;
                // rectification-heavy split: a long standard phase at this
                // learning rate can push the policy into the confirm trap
                // within a single round
                cfg.alpha1 = 1.0;
                cfg.alpha2 = 2.0;
                cfg.collapse_window = 3;
            }
            "gridgame-gen" => {
                cfg.env = EnvSpec::GridGame(GridGameConfig {
                    levels: 8,
                    ..GridGameConfig::default()
                });
                cfg.mode = ModePlan::Dropout;
                cfg.steps = 120;
                cfg.lanes = 4;
                cfg.rollout = 512;
                cfg.ppo.minibatch_size = 128;
                cfg.ppo.epochs = 3;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}' (expected one of {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        }
        Ok(cfg)
    }

    /// Parse a config document on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        Self::from_sources(Some(text), &[])
    }

    /// Full resolution pipeline: preset (if named) → file assignments in
    /// order → `--set` overrides in order.
    pub fn from_sources(file: Option<&str>, sets: &[String]) -> Result<Self> {
        let mut lines: Vec<(String, String, String)> = Vec::new(); // key, value, context
        if let Some(text) = file {
            for (i, raw) in text.lines().enumerate() {
                let line = strip_comment(raw).trim().to_string();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = split_assignment(&line, &format!("line {}", i + 1))?;
                lines.push((k, v, format!("line {}", i + 1)));
            }
        }
        for (i, s) in sets.iter().enumerate() {
            let ctx = format!("--set #{}", i + 1);
            let (k, v) = split_assignment(s.trim(), &ctx)?;
            lines.push((k, v, ctx));
        }

        let mut cfg = ExperimentConfig::default();
        let mut preset_seen: Option<String> = None;
        for (k, v, ctx) in &lines {
            if k == "preset" {
                if let Some(prev) = &preset_seen {
                    if prev != v {
                        return Err(Error::Config(format!(
                            "{ctx}: conflicting presets '{prev}' and '{v}'"
                        )));
                    }
                } else {
                    cfg = Self::preset(v).map_err(|e| Error::Config(format!("{ctx}: {e}")))?;
                    preset_seen = Some(v.clone());
                }
            }
        }
        let mut env_overridden = false;
        for (k, v, ctx) in &lines {
            if k == "preset" {
                continue;
            }
            cfg.apply_kv(k, v, &mut env_overridden)
                .map_err(|e| Error::Config(format!("{ctx}: {e}")))?;
        }
        Ok(cfg)
    }

    fn apply_kv(&mut self, key: &str, value: &str, env_overridden: &mut bool) -> Result<()> {
        if let Some(sub) = key.strip_prefix("env.") {
            *env_overridden = true;
            return self.apply_env_kv(sub, value);
        }
        match key {
            "env" => {
                if *env_overridden {
                    return Err(Error::Config(
                        "set 'env' before any 'env.*' override".to_string(),
                    ));
                }
                self.env = match value {
                    "patchloc" => EnvSpec::PatchLoc(PatchLocConfig::default()),
                    "gridgame" => EnvSpec::GridGame(GridGameConfig::default()),
                    other => {
                        return Err(Error::Config(format!(
                            "unknown env '{other}' (expected patchloc or gridgame)"
                        )))
                    }
                };
            }
            "mode" => self.mode = ModePlan::parse(value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "lanes" => self.lanes = parse_num(key, value)?,
            "rollout" => self.rollout = parse_num(key, value)?,
            "minibatch" => self.ppo.minibatch_size = parse_num(key, value)?,
            "epochs" => self.ppo.epochs = parse_num(key, value)?,
            "alpha1" => self.alpha1 = parse_num(key, value)?,
            "alpha2" => self.alpha2 = parse_num(key, value)?,
            "clip_epsilon" => self.ppo.clip_epsilon = parse_num(key, value)?,
            "value_coef" => self.ppo.value_coef = parse_num(key, value)?,
            "entropy_coef" => self.ppo.entropy_coef = parse_num(key, value)?,
            "learning_rate" => self.ppo.learning_rate = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "max_grad_norm" => self.ppo.max_grad_norm = parse_num(key, value)?,
            "gamma" => self.ppo.gamma = parse_num(key, value)?,
            "gae_lambda" => self.ppo.lambda = parse_num(key, value)?,
            "recompute_period" => self.ppo.recompute_period = parse_num(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "bn_momentum" => self.bn_momentum = parse_num(key, value)?,
            "dropout" => self.dropout_rate = parse_num(key, value)?,
            "collapse_window" => self.collapse_window = parse_num(key, value)?,
            "collapse_drop" => self.collapse_drop = parse_num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "out" => self.out_dir = value.to_string(),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    fn apply_env_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match &mut self.env {
            EnvSpec::PatchLoc(c) => match key {
                "image" => c.image = parse_num(key, value)?,
                "view" => c.view = parse_num(key, value)?,
                "budget" => c.budget = parse_num(key, value)?,
                "step_cost" => c.step_cost = parse_num(key, value)?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown patchloc key 'env.{other}' (expected image, view, budget, step_cost)"
                    )))
                }
            },
            EnvSpec::GridGame(c) => match key {
                "length" => c.length = parse_num(key, value)?,
                "window" => c.window = parse_num(key, value)?,
                "horizon" => c.horizon = parse_num(key, value)?,
                "gap_rate" => c.gap_rate = parse_num(key, value)?,
                "levels" => c.levels = parse_num(key, value)?,
                "level_seed" => c.level_seed = parse_num(key, value)?,
                "holdout" => c.holdout = parse_bool(key, value)?,
                "shaping" => c.shaping = parse_num(key, value)?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown gridgame key 'env.{other}' (expected length, window, horizon, \
                         gap_rate, levels, level_seed, holdout, shaping)"
                    )))
                }
            },
        }
        Ok(())
    }

    /// Use `MDRLAB_SEED` (passed in by the caller) as the master seed for
    /// the whole invocation, replacing any fan-out list.
    pub fn override_master_seed(&mut self, var: Option<&str>) -> Result<()> {
        if let Some(raw) = var {
            let seed: u64 = raw.trim().parse().map_err(|_| {
                Error::Config(format!("MDRLAB_SEED must be an unsigned integer, got '{raw}'"))
            })?;
            self.seed = seed;
            self.seeds = vec![seed];
        }
        Ok(())
    }

    /// Seeds the runner fans out over.
    pub fn effective_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// The update schedule implied by the mode plan.
    pub fn schedule(&self) -> Result<MdrSchedule> {
        if self.mode.uses_mdr() {
            MdrSchedule::new(self.alpha1, self.alpha2)
        } else {
            Ok(MdrSchedule::plain(self.ppo.epochs))
        }
    }

    /// Network architecture for a run with the given master seed.
    pub fn arch(&self, run_seed: u64) -> crate::agent::ArchConfig {
        crate::agent::ArchConfig {
            obs_dim: self.env.obs_dim(),
            action_count: self.env.action_count(),
            hidden: self.hidden.clone(),
            batchnorm: self.mode.uses_batchnorm(),
            pinned_eval_bn: self.mode.pinned_eval(),
            bn_momentum: self.bn_momentum,
            dropout: if self.mode.uses_dropout() { self.dropout_rate } else { 0.0 },
            init_seed: crate::seeding::derive_seed(run_seed, "net", 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |d: String| Err(Error::Config(d));
        self.ppo.validate()?;
        match &self.env {
            EnvSpec::PatchLoc(c) => c.validate()?,
            EnvSpec::GridGame(c) => c.validate()?,
        }
        if self.steps == 0 {
            return fail("steps must be at least 1".to_string());
        }
        if self.lanes == 0 {
            return fail("lanes must be at least 1".to_string());
        }
        if self.rollout == 0 || self.rollout % self.lanes != 0 {
            return fail(format!(
                "rollout ({}) must be a positive multiple of lanes ({})",
                self.rollout, self.lanes
            ));
        }
        if self.ppo.minibatch_size > self.rollout {
            return fail(format!(
                "minibatch ({}) larger than rollout ({})",
                self.ppo.minibatch_size, self.rollout
            ));
        }
        if self.mode.uses_batchnorm() && !self.mode.pinned_eval() && self.ppo.minibatch_size < 2 {
            return fail("batchnorm modes need minibatch >= 2 for batch statistics".to_string());
        }
        if self.mode.uses_dropout() && !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
            return fail(format!("dropout rate {} out of (0, 1)", self.dropout_rate));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return fail(format!("bn momentum {} out of (0, 1]", self.bn_momentum));
        }
        if self.weight_decay < 0.0 {
            return fail(format!("weight decay {} must be non-negative", self.weight_decay));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return fail(format!("hidden sizes {:?} must be non-empty and positive", self.hidden));
        }
        if self.collapse_window == 0 {
            return fail("collapse window must be at least 1".to_string());
        }
        if !(self.collapse_drop > 0.0 && self.collapse_drop < 1.0) {
            return fail(format!("collapse drop {} out of (0, 1)", self.collapse_drop));
        }
        let schedule = self.schedule()?;
        rounds_for(self.ppo.epochs, &schedule)?;
        Ok(())
    }

    /// Fully resolved dump in fixed key order; re-parsing it reproduces this
    /// config exactly. Used as the run manifest.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("env", self.env.name().to_string());
        kv("mode", self.mode.name().to_string());
        kv("seed", self.seed.to_string());
        if !self.seeds.is_empty() {
            kv(
                "seeds",
                self.seeds.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            );
        }
        kv("steps", self.steps.to_string());
        kv("lanes", self.lanes.to_string());
        kv("rollout", self.rollout.to_string());
        kv("minibatch", self.ppo.minibatch_size.to_string());
        kv("epochs", self.ppo.epochs.to_string());
        kv("alpha1", self.alpha1.to_string());
        kv("alpha2", self.alpha2.to_string());
        kv("clip_epsilon", self.ppo.clip_epsilon.to_string());
        kv("value_coef", self.ppo.value_coef.to_string());
        kv("entropy_coef", self.ppo.entropy_coef.to_string());
        kv("learning_rate", self.ppo.learning_rate.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("max_grad_norm", self.ppo.max_grad_norm.to_string());
        kv("gamma", self.ppo.gamma.to_string());
        kv("gae_lambda", self.ppo.lambda.to_string());
        kv("recompute_period", self.ppo.recompute_period.to_string());
        kv(
            "hidden",
            self.hidden.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("bn_momentum", self.bn_momentum.to_string());
        kv("dropout", self.dropout_rate.to_string());
        kv("collapse_window", self.collapse_window.to_string());
        kv("collapse_drop", self.collapse_drop.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("out", self.out_dir.clone());
        match &self.env {
            EnvSpec::PatchLoc(c) => {
                kv("env.image", c.image.to_string());
                kv("env.view", c.view.to_string());
                kv("env.budget", c.budget.to_string());
                kv("env.step_cost", c.step_cost.to_string());
            }
            EnvSpec::GridGame(c) => {
                kv("env.length", c.length.to_string());
                kv("env.window", c.window.to_string());
                kv("env.horizon", c.horizon.to_string());
                kv("env.gap_rate", c.gap_rate.to_string());
                kv("env.levels", c.levels.to_string());
                kv("env.level_seed", c.level_seed.to_string());
                kv("env.holdout", c.holdout.to_string());
                kv("env.shaping", c.shaping.to_string());
            }
        }
        s
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn split_assignment(s: &str, ctx: &str) -> Result<(String, String)> {
    let Some(eq) = s.find('=') else {
        return Err(Error::Config(format!("{ctx}: expected 'key = value', got '{s}'")));
    };
    let key = s[..eq].trim();
    let value = s[eq + 1..].trim();
    if key.is_empty() || value.is_empty() {
        return Err(Error::Config(format!("{ctx}: expected 'key = value', got '{s}'")));
    }
    Ok((key.to_string(), value.to_string()))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "key '{key}': cannot parse '{value}' as {}",
            std::any::type_name::<T>()
        ))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("key '{key}': cannot parse '{other}' as bool"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let inner = value
        .strip_prefix('[')
        .and_then(|v| v.strip_suffix(']'))
        .unwrap_or(value);
    inner.split(',').map(|p| parse_num(key, p.trim())).collect()
}
