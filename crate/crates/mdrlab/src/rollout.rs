//! Experience collection and advantage estimation.
//!
//! Collection always runs the policy in Eval mode — acting with batch
//! statistics would entangle the behavior policy with minibatch composition
//! — and it is a hard error to try otherwise. The buffer stores everything
//! PPO needs anchored at collection time (`log_prob_old`, `values_old`);
//! `values` may later be refreshed by [`recompute_targets`] but the old-
//! policy log-probs are never recomputed.
//!
//! Index layout is lane-major: transition `t` of lane `e` lives at
//! `e * steps_per_lane + t`.

use rand_chacha::ChaCha8Rng;

use crate::agent::ActorCritic;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::seeding;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepInfo {
    /// Episode was cut by a time limit rather than a true terminal state.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct StepOut {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    /// Start a new episode; identical seeds reproduce identical episodes.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<StepOut>;
    /// Near-optimal scripted action for the current state, if the
    /// environment provides one (used by probes and baselines).
    fn oracle_action(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStat {
    pub ret: f64,
    pub len: usize,
}

/// Fixed set of environment lanes stepped in lockstep, with deterministic
/// per-lane seed streams for episodes and action sampling.
pub struct EnvPool {
    envs: Vec<Box<dyn Environment>>,
    current_obs: Vec<Vec<f64>>,
    episode_counter: Vec<u64>,
    ep_return: Vec<f64>,
    ep_len: Vec<usize>,
    completed: Vec<EpisodeStat>,
    sample_rngs: Vec<ChaCha8Rng>,
    lane_masters: Vec<u64>,
    obs_dim: usize,
    action_count: usize,
}

impl EnvPool {
    pub fn new(envs: Vec<Box<dyn Environment>>, master_seed: u64) -> Result<Self> {
        if envs.is_empty() {
            return Err(Error::Env("environment pool needs at least one lane".to_string()));
        }
        let obs_dim = envs[0].obs_dim();
        let action_count = envs[0].action_count();
        if envs.iter().any(|e| e.obs_dim() != obs_dim || e.action_count() != action_count) {
            return Err(Error::Env("environment pool lanes must be homogeneous".to_string()));
        }
        let lanes = envs.len();
        let lane_masters: Vec<u64> = (0..lanes)
            .map(|e| seeding::derive_seed(master_seed, "lane", e as u64))
            .collect();
        let mut pool = EnvPool {
            envs,
            current_obs: vec![Vec::new(); lanes],
            episode_counter: vec![0; lanes],
            ep_return: vec![0.0; lanes],
            ep_len: vec![0; lanes],
            completed: Vec::new(),
            sample_rngs: (0..lanes)
                .map(|e| seeding::rng(master_seed, "action-sample", e as u64))
                .collect(),
            lane_masters,
            obs_dim,
            action_count,
        };
        for e in 0..lanes {
            pool.current_obs[e] = pool.reset_lane(e);
        }
        Ok(pool)
    }

    pub fn lanes(&self) -> usize {
        self.envs.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    fn reset_lane(&mut self, lane: usize) -> Vec<f64> {
        let seed = seeding::derive_seed(self.lane_masters[lane], "episode", self.episode_counter[lane]);
        self.episode_counter[lane] += 1;
        self.ep_return[lane] = 0.0;
        self.ep_len[lane] = 0;
        self.envs[lane].reset(seed)
    }

    pub fn drain_episodes(&mut self) -> Vec<EpisodeStat> {
        std::mem::take(&mut self.completed)
    }
}

#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub obs: Tensor,
    pub actions: Vec<usize>,
    pub log_prob_old: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub truncated: Vec<bool>,
    /// Values at collection time; never mutated after collection.
    pub values_old: Vec<f64>,
    /// Values used for advantage estimation; refreshed by recomputation.
    pub values: Vec<f64>,
    /// Post-truncation observations, aligned with `trunc_values`.
    pub trunc_obs: Vec<(usize, Vec<f64>)>,
    pub trunc_values: Vec<f64>,
    pub bootstrap_obs: Tensor,
    pub bootstrap_values: Vec<f64>,
    pub lanes: usize,
    pub steps_per_lane: usize,
    pub advantages: Option<Vec<f64>>,
    pub targets: Option<Vec<f64>>,
    pub episodes: Vec<EpisodeStat>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Run the current policy for `steps_per_lane` steps on every lane.
///
/// The network must be in Eval mode; BatchNorm buffers and dropout streams
/// are unaffected by collection (verified by the buffer snapshot below).
pub fn collect(pool: &mut EnvPool, net: &mut ActorCritic, steps_per_lane: usize) -> Result<RolloutBuffer> {
    if net.mode() != Mode::Eval {
        return Err(Error::ModeViolation(
            "rollout collection requires the network in Eval mode".to_string(),
        ));
    }
    if steps_per_lane == 0 {
        return Err(Error::Env("steps_per_lane must be positive".to_string()));
    }
    if net.arch.obs_dim != pool.obs_dim() || net.arch.action_count != pool.action_count() {
        return Err(Error::Env(format!(
            "network ({}, {}) does not match environment ({}, {})",
            net.arch.obs_dim,
            net.arch.action_count,
            pool.obs_dim(),
            pool.action_count()
        )));
    }
    let lanes = pool.lanes();
    let t_max = steps_per_lane;
    let n = lanes * t_max;
    let d = pool.obs_dim();
    let state_before = net.state_snapshot();

    let mut obs_flat = vec![0.0; n * d];
    let mut actions = vec![0usize; n];
    let mut log_prob_old = vec![0.0; n];
    let mut rewards = vec![0.0; n];
    let mut dones = vec![false; n];
    let mut truncated = vec![false; n];
    let mut values_old = vec![0.0; n];
    let mut trunc_obs: Vec<(usize, Vec<f64>)> = Vec::new();

    for t in 0..t_max {
        let batch = Tensor::from_rows(&pool.current_obs)?;
        let (dists, vals) = net.policy_values(&batch, Mode::Eval)?;
        for lane in 0..lanes {
            let idx = lane * t_max + t;
            let action = dists[lane].sample(&mut pool.sample_rngs[lane]);
            obs_flat[idx * d..(idx + 1) * d].copy_from_slice(&pool.current_obs[lane]);
            actions[idx] = action;
            log_prob_old[idx] = dists[lane].log_prob(action)?;
            values_old[idx] = vals[lane];
            let out = pool.envs[lane].step(action)?;
            rewards[idx] = out.reward;
            pool.ep_return[lane] += out.reward;
            pool.ep_len[lane] += 1;
            if out.done || out.info.truncated {
                dones[idx] = out.done;
                truncated[idx] = !out.done && out.info.truncated;
                if truncated[idx] {
                    trunc_obs.push((idx, out.obs.clone()));
                }
                pool.completed.push(EpisodeStat {
                    ret: pool.ep_return[lane],
                    len: pool.ep_len[lane],
                });
                pool.current_obs[lane] = pool.reset_lane(lane);
            } else {
                pool.current_obs[lane] = out.obs;
            }
        }
    }

    let bootstrap_obs = Tensor::from_rows(&pool.current_obs)?;
    let (_, bootstrap_values) = net.policy_values(&bootstrap_obs, Mode::Eval)?;
    let trunc_values = if trunc_obs.is_empty() {
        Vec::new()
    } else {
        let rows: Vec<Vec<f64>> = trunc_obs.iter().map(|(_, o)| o.clone()).collect();
        let (_, v) = net.policy_values(&Tensor::from_rows(&rows)?, Mode::Eval)?;
        v
    };

    debug_assert_eq!(net.bn_buffers(), {
        net.state_restore(&state_before);
        net.bn_buffers()
    });

    Ok(RolloutBuffer {
        obs: Tensor::new(vec![n, d], obs_flat)?,
        actions,
        log_prob_old,
        rewards,
        dones,
        truncated,
        values: values_old.clone(),
        values_old,
        trunc_obs,
        trunc_values,
        bootstrap_obs,
        bootstrap_values,
        lanes,
        steps_per_lane: t_max,
        advantages: None,
        targets: None,
        episodes: pool.drain_episodes(),
    })
}

/// Generalized advantage estimation over the buffer's current values.
///
/// Boundaries (terminal or truncated) stop both the bootstrap and the
/// (gamma*lambda) recursion. Truncated transitions fold `gamma * V(s')` of
/// the post-truncation state into their effective reward, so the horizon
/// cut does not masquerade as a zero-value terminal.
pub fn compute_gae(buffer: &mut RolloutBuffer, gamma: f64, lambda: f64) -> Result<()> {
    let n = buffer.len();
    if buffer.values.len() != n || buffer.bootstrap_values.len() != buffer.lanes {
        return Err(Error::ShapeMismatch {
            op: "compute_gae",
            detail: format!(
                "values {} / bootstrap {} vs n {} / lanes {}",
                buffer.values.len(),
                buffer.bootstrap_values.len(),
                n,
                buffer.lanes
            ),
        });
    }
    let mut eff_r = buffer.rewards.clone();
    for (k, (idx, _)) in buffer.trunc_obs.iter().enumerate() {
        eff_r[*idx] += gamma * buffer.trunc_values[k];
    }
    let t_max = buffer.steps_per_lane;
    let mut adv = vec![0.0; n];
    for lane in 0..buffer.lanes {
        let mut gae = 0.0;
        let mut next_value = buffer.bootstrap_values[lane];
        for t in (0..t_max).rev() {
            let i = lane * t_max + t;
            let boundary = buffer.dones[i] || buffer.truncated[i];
            let nv = if boundary { 0.0 } else { next_value };
            let delta = eff_r[i] + gamma * nv - buffer.values[i];
            gae = delta + gamma * lambda * if boundary { 0.0 } else { gae };
            adv[i] = gae;
            next_value = buffer.values[i];
        }
    }
    let targets = adv.iter().zip(&buffer.values).map(|(a, v)| a + v).collect();
    buffer.advantages = Some(adv);
    buffer.targets = Some(targets);
    Ok(())
}

/// Standardize advantages in place over the whole buffer (biased std,
/// floored at 1e-8 so constant advantages map to zero, not infinity).
pub fn normalize_advantages(buffer: &mut RolloutBuffer) -> Result<()> {
    let adv = buffer.advantages.as_mut().ok_or(Error::ShapeMismatch {
        op: "normalize_advantages",
        detail: "advantages not computed".to_string(),
    })?;
    let n = adv.len() as f64;
    let mean: f64 = adv.iter().sum::<f64>() / n;
    let var: f64 = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
    Ok(())
}

/// Re-evaluate all values under the current weights (Eval mode, chunked so
/// results are independent of chunking), then rebuild advantages + targets
/// and re-normalize. `log_prob_old` is deliberately left untouched.
pub fn recompute_targets(
    buffer: &mut RolloutBuffer,
    net: &mut ActorCritic,
    gamma: f64,
    lambda: f64,
) -> Result<()> {
    let n = buffer.len();
    let d = buffer.obs.shape()[1];
    let chunk = 256;
    let mut values = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let rows = chunk.min(n - start);
        let part = Tensor::new(
            vec![rows, d],
            buffer.obs.data()[start * d..(start + rows) * d].to_vec(),
        )?;
        let (_, v) = net.policy_values(&part, Mode::Eval)?;
        values.extend(v);
        start += rows;
    }
    buffer.values = values;
    let (_, bv) = net.policy_values(&buffer.bootstrap_obs, Mode::Eval)?;
    buffer.bootstrap_values = bv;
    if !buffer.trunc_obs.is_empty() {
        let rows: Vec<Vec<f64>> = buffer.trunc_obs.iter().map(|(_, o)| o.clone()).collect();
        let (_, tv) = net.policy_values(&Tensor::from_rows(&rows)?, Mode::Eval)?;
        buffer.trunc_values = tv;
    }
    compute_gae(buffer, gamma, lambda)?;
    normalize_advantages(buffer)
}
