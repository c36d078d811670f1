//! PPO objective and the dual-phase (standard / rectification) update loop.
//!
//! A rollout is optimized in rounds: each round runs ⌊α₁·B⌋ minibatch
//! updates with the network in Train mode, then ⌊α₂·B⌋ in Eval mode, where
//! B = ⌊N/m⌋ is the number of full minibatches per epoch. Both phases use
//! the same buffer and the same `log_prob_old` anchors, so the schedule
//! never adds gradient updates beyond the plain-PPO epoch budget. An epoch
//! is B updates regardless of phase; value targets are refreshed on epoch
//! boundaries divisible by the recompute period.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::agent::ActorCritic;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::optim::{clip_grad_global_norm, AdamState};
use crate::rollout::{recompute_targets, RolloutBuffer};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Log-ratio clamp: ratios live in [e^-20, e^20] so a badly mismatched
/// forward pass cannot overflow the surrogate.
const LOG_RATIO_LIMIT: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub minibatch_size: usize,
    /// Total optimization epochs per rollout, across both phases.
    pub epochs: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub max_grad_norm: f64,
    /// Refresh value targets every this many epochs; 0 disables.
    pub recompute_period: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            value_coef: 1.0,
            entropy_coef: 1e-4,
            minibatch_size: 128,
            epochs: 3,
            learning_rate: 3e-4,
            gamma: 0.99,
            lambda: 0.95,
            max_grad_norm: 1.0,
            recompute_period: 3,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::Config(detail));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return fail(format!("clip epsilon {} out of (0, 1)", self.clip_epsilon));
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return fail(format!(
                "loss coefficients must be non-negative (c1 {}, c2 {})",
                self.value_coef, self.entropy_coef
            ));
        }
        if self.minibatch_size == 0 {
            return fail("minibatch size must be at least 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma {} out of (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda {} out of [0, 1]", self.lambda));
        }
        if !(self.max_grad_norm > 0.0) {
            return fail(format!("max grad norm {} must be positive", self.max_grad_norm));
        }
        Ok(())
    }
}

/// Epoch split between the Train-mode standard phase (α₁) and the
/// Eval-mode rectification phase (α₂).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdrSchedule {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl MdrSchedule {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(alpha1.is_finite() && alpha2.is_finite() && alpha1 >= 0.0 && alpha2 >= 0.0) {
            return Err(Error::Config(format!(
                "schedule epochs must be finite and non-negative, got ({alpha1}, {alpha2})"
            )));
        }
        Ok(MdrSchedule { alpha1, alpha2 })
    }

    /// Plain PPO: every epoch in the standard phase.
    pub fn plain(epochs: usize) -> Self {
        MdrSchedule { alpha1: epochs as f64, alpha2: 0.0 }
    }

    pub fn total(&self) -> f64 {
        self.alpha1 + self.alpha2
    }

    /// Update counts for one round given B full minibatches per epoch.
    pub fn updates_per_round(&self, minibatches_per_epoch: usize) -> (usize, usize) {
        let b = minibatches_per_epoch as f64;
        ((self.alpha1 * b).floor() as usize, (self.alpha2 * b).floor() as usize)
    }
}

/// Number of rounds needed to spend `epochs` under `schedule`. Zero-total
/// schedules yield zero rounds (no-op training); otherwise the total must
/// divide the epoch budget.
pub fn rounds_for(epochs: usize, schedule: &MdrSchedule) -> Result<usize> {
    let total = schedule.total();
    if total == 0.0 {
        return Ok(0);
    }
    let r = epochs as f64 / total;
    if (r - r.round()).abs() > 1e-9 || r.round() < 1.0 {
        return Err(Error::Config(format!(
            "epochs ({epochs}) must be a positive multiple of alpha1+alpha2 ({total})"
        )));
    }
    Ok(r.round() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Standard,
    Rectification,
}

impl Phase {
    pub fn mode(self) -> Mode {
        match self {
            Phase::Standard => Mode::Train,
            Phase::Rectification => Mode::Eval,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Phase::Standard => "standard",
            Phase::Rectification => "rectification",
        }
    }
}

/// One gathered training minibatch.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub obs: Tensor,
    pub actions: Vec<usize>,
    pub log_prob_old: Vec<f64>,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

pub fn gather_minibatch(buffer: &RolloutBuffer, idx: &[usize]) -> Result<Minibatch> {
    let (advantages, targets) = match (&buffer.advantages, &buffer.targets) {
        (Some(a), Some(t)) => (a, t),
        _ => {
            return Err(Error::Domain {
                op: "gather_minibatch",
                detail: "advantages/targets not computed; run compute_gae first".to_string(),
            })
        }
    };
    let n = buffer.len();
    let d = buffer.obs.shape()[1];
    let mut obs = Vec::with_capacity(idx.len() * d);
    let mut mb = Minibatch {
        obs: Tensor::zeros(vec![0, d]),
        actions: Vec::with_capacity(idx.len()),
        log_prob_old: Vec::with_capacity(idx.len()),
        advantages: Vec::with_capacity(idx.len()),
        targets: Vec::with_capacity(idx.len()),
    };
    for &i in idx {
        if i >= n {
            return Err(Error::ShapeMismatch {
                op: "gather_minibatch",
                detail: format!("index {i} out of bounds for buffer of {n}"),
            });
        }
        obs.extend_from_slice(&buffer.obs.data()[i * d..(i + 1) * d]);
        mb.actions.push(buffer.actions[i]);
        mb.log_prob_old.push(buffer.log_prob_old[i]);
        mb.advantages.push(advantages[i]);
        mb.targets.push(targets[i]);
    }
    mb.obs = Tensor::new(vec![idx.len(), d], obs)?;
    Ok(mb)
}

/// Loss value and components for one minibatch. `root` is the scalar node
/// to differentiate; `l_clip` is the clipped surrogate being maximized,
/// `entropy` is always measured even when its coefficient is zero.
#[derive(Debug, Clone, Copy)]
pub struct PpoLossParts {
    pub root: ValueId,
    pub total: f64,
    pub l_clip: f64,
    pub l_value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Build the loss graph: total = −L^CLIP + c₁·L^VF − c₂·S. The probability
/// ratio is formed in log space and clamped before exponentiation; in Train
/// mode it is the perturbed ratio (batch statistics, live dropout), in Eval
/// mode the deterministic one. With c₂ = 0 the entropy term contributes no
/// graph nodes, so its gradient is exactly zero.
pub fn ppo_loss(
    tape: &mut Tape,
    net: &mut ActorCritic,
    mb: &Minibatch,
    cfg: &PpoConfig,
    mode: Mode,
) -> Result<PpoLossParts> {
    let m = mb.actions.len();
    if m == 0
        || mb.obs.shape()[0] != m
        || mb.log_prob_old.len() != m
        || mb.advantages.len() != m
        || mb.targets.len() != m
    {
        return Err(Error::ShapeMismatch {
            op: "ppo_loss",
            detail: format!(
                "inconsistent minibatch: obs {:?}, {} actions, {} anchors, {} advantages, {} targets",
                mb.obs.shape(),
                m,
                mb.log_prob_old.len(),
                mb.advantages.len(),
                mb.targets.len()
            ),
        });
    }
    let a_count = net.arch.action_count;
    let fwd = net.forward(tape, &mb.obs, mode)?;
    let lsm = tape.log_softmax(fwd.logits)?;

    // select log π(a|s) per row: one-hot mask, then row-sum by matmul
    let mut mask = vec![0.0; m * a_count];
    for (i, &a) in mb.actions.iter().enumerate() {
        if a >= a_count {
            return Err(Error::InvalidAction { action: a, count: a_count });
        }
        mask[i * a_count + a] = 1.0;
    }
    let mask = tape.constant(vec![m, a_count], mask)?;
    let picked = tape.mul(lsm, mask)?;
    let ones = tape.constant(vec![a_count, 1], vec![1.0; a_count])?;
    let log_prob = tape.matmul(picked, ones)?;

    let lp_old = tape.constant(vec![m, 1], mb.log_prob_old.clone())?;
    let log_ratio = tape.sub(log_prob, lp_old)?;
    let log_ratio = tape.clamp(log_ratio, -LOG_RATIO_LIMIT, LOG_RATIO_LIMIT)?;
    let ratio = tape.exp(log_ratio)?;
    let clip_fraction = tape
        .value(ratio)
        .iter()
        .filter(|&&r| (r - 1.0).abs() > cfg.clip_epsilon)
        .count() as f64
        / m as f64;

    let adv = tape.constant(vec![m, 1], mb.advantages.clone())?;
    let surr_raw = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon)?;
    let surr_clip = tape.mul(clipped, adv)?;
    let surrogate = tape.min_elem(surr_raw, surr_clip)?;
    let l_clip = tape.mean_all(surrogate)?;

    let targets = tape.constant(vec![m, 1], mb.targets.clone())?;
    let v_err = tape.sub(fwd.values, targets)?;
    let v_sq = tape.square(v_err)?;
    let l_value = tape.mean_all(v_sq)?;

    let neg_clip = tape.scale(l_clip, -1.0)?;
    let scaled_value = tape.scale(l_value, cfg.value_coef)?;
    let mut root = tape.add(neg_clip, scaled_value)?;

    let entropy;
    if cfg.entropy_coef > 0.0 {
        let probs = tape.exp(lsm)?;
        let prod = tape.mul(probs, lsm)?;
        let p_logp = tape.mean_all(prod)?;
        let s = tape.scale(p_logp, -(a_count as f64))?;
        entropy = tape.scalar_value(s);
        let ent_term = tape.scale(s, -cfg.entropy_coef)?;
        root = tape.add(root, ent_term)?;
    } else {
        // same arithmetic as the graph path, off tape
        let vals = tape.value(lsm);
        let sum: f64 = vals.iter().map(|&l| l.exp() * l).sum();
        entropy = -(a_count as f64) * (sum / vals.len() as f64);
    }

    Ok(PpoLossParts {
        root,
        total: tape.scalar_value(root),
        l_clip: tape.scalar_value(l_clip),
        l_value: tape.scalar_value(l_value),
        entropy,
        clip_fraction,
    })
}

/// One gradient update worth of log data.
#[derive(Debug, Clone, Copy)]
pub struct UpdateLog {
    pub phase: Phase,
    pub loss: f64,
    pub l_clip: f64,
    pub l_value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Per-rollout training record: one entry per gradient update.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub updates: Vec<UpdateLog>,
    pub standard_updates: usize,
    pub rectification_updates: usize,
    pub recomputes: usize,
}

fn run_update(
    buffer: &RolloutBuffer,
    net: &mut ActorCritic,
    cfg: &PpoConfig,
    mode: Mode,
    idx: &[usize],
    opt: &mut AdamState,
) -> Result<(PpoLossParts, f64)> {
    let mb = gather_minibatch(buffer, idx)?;
    let mut tape = Tape::new();
    net.store_mut().zero_grads();
    let parts = ppo_loss(&mut tape, net, &mb, cfg, mode)?;
    tape.backward(parts.root, net.store_mut())?;
    let grad_norm = clip_grad_global_norm(net.store_mut(), cfg.max_grad_norm);
    opt.step(net.store_mut())?;
    Ok((parts, grad_norm))
}

#[allow(clippy::too_many_arguments)]
fn run_rounds(
    buffer: &mut RolloutBuffer,
    net: &mut ActorCritic,
    cfg: &PpoConfig,
    schedule: &MdrSchedule,
    opt: &mut AdamState,
    rng: &mut ChaCha8Rng,
    step: usize,
    rounds: usize,
) -> Result<TrainLog> {
    cfg.validate()?;
    let n = buffer.len();
    let m = cfg.minibatch_size;
    let b = n / m;
    if b == 0 {
        return Err(Error::Config(format!(
            "buffer of {n} transitions is smaller than one minibatch of {m}"
        )));
    }
    let (t1, t2) = schedule.updates_per_round(b);
    let per_round = t1 + t2;
    let total_updates = rounds * per_round;

    let mut log = TrainLog::default();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut cursor = b; // exhausted: forces a shuffle before the first update
    let mut epochs_done = 0usize;
    let mut done = 0usize;
    for _ in 0..rounds {
        for u in 0..per_round {
            let phase = if u < t1 { Phase::Standard } else { Phase::Rectification };
            net.set_mode(phase.mode());
            if cursor == b {
                perm.shuffle(rng);
                cursor = 0;
            }
            let idx = &perm[cursor * m..(cursor + 1) * m];
            cursor += 1;
            let (parts, grad_norm) = run_update(buffer, net, cfg, phase.mode(), idx, opt)
                .map_err(|e| e.in_training(step, phase.tag(), done))?;
            log.updates.push(UpdateLog {
                phase,
                loss: parts.total,
                l_clip: parts.l_clip,
                l_value: parts.l_value,
                entropy: parts.entropy,
                clip_fraction: parts.clip_fraction,
                grad_norm,
            });
            match phase {
                Phase::Standard => log.standard_updates += 1,
                Phase::Rectification => log.rectification_updates += 1,
            }
            done += 1;
            if cursor == b {
                epochs_done += 1;
                let boundary_due =
                    cfg.recompute_period > 0 && epochs_done % cfg.recompute_period == 0;
                if boundary_due && done < total_updates {
                    recompute_targets(buffer, net, cfg.gamma, cfg.lambda)
                        .map_err(|e| e.in_training(step, phase.tag(), done))?;
                    log.recomputes += 1;
                }
            }
        }
    }
    net.set_mode(Mode::Eval);
    Ok(log)
}

/// Execute exactly one dual-phase round: ⌊α₁·B⌋ Train-mode updates, then
/// ⌊α₂·B⌋ Eval-mode updates. The network is left in Eval mode.
pub fn train_step(
    buffer: &mut RolloutBuffer,
    net: &mut ActorCritic,
    cfg: &PpoConfig,
    schedule: &MdrSchedule,
    opt: &mut AdamState,
    rng: &mut ChaCha8Rng,
    step: usize,
) -> Result<TrainLog> {
    let rounds = if schedule.total() == 0.0 { 0 } else { 1 };
    run_rounds(buffer, net, cfg, schedule, opt, rng, step, rounds)
}

/// Spend the configured epoch budget on one rollout:
/// `epochs / (α₁+α₂)` rounds of the dual-phase schedule.
pub fn optimize_rollout(
    buffer: &mut RolloutBuffer,
    net: &mut ActorCritic,
    cfg: &PpoConfig,
    schedule: &MdrSchedule,
    opt: &mut AdamState,
    rng: &mut ChaCha8Rng,
    step: usize,
) -> Result<TrainLog> {
    let rounds = rounds_for(cfg.epochs, schedule)?;
    run_rounds(buffer, net, cfg, schedule, opt, rng, step, rounds)
}
