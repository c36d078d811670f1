//! Built-in environments, the registry used by experiment configs, and a
//! visit-distribution probe.

pub mod gridgame;
pub mod patchloc;

pub use gridgame::{GridGameConfig, GridGameEnv};
pub use patchloc::{PatchLocConfig, PatchLocEnv};

use rand::Rng;

use crate::agent::ActorCritic;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::rollout::Environment;
use crate::seeding;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvSpec {
    PatchLoc(PatchLocConfig),
    GridGame(GridGameConfig),
}

impl EnvSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::PatchLoc(_) => "patchloc",
            EnvSpec::GridGame(_) => "gridgame",
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::PatchLoc(cfg) => Box::new(PatchLocEnv::new(*cfg)?),
            EnvSpec::GridGame(cfg) => Box::new(GridGameEnv::new(*cfg)?),
        })
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvSpec::PatchLoc(cfg) => cfg.obs_dim(),
            EnvSpec::GridGame(cfg) => cfg.obs_dim(),
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            EnvSpec::PatchLoc(_) => patchloc::ACTIONS,
            EnvSpec::GridGame(_) => gridgame::ACTIONS,
        }
    }
}

/// Action source for [`distribution_probe`].
pub enum ProbePolicy<'a> {
    Random,
    Oracle,
    Net(&'a mut ActorCritic),
}

/// Per-feature moments of the observation distribution a policy induces.
#[derive(Debug, Clone)]
pub struct ProbeSummary {
    pub episodes: usize,
    pub transitions: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Roll `episodes` episodes under the given policy and accumulate the
/// first two moments of every observation feature (pre-action states).
pub fn distribution_probe(
    env: &mut dyn Environment,
    mut policy: ProbePolicy,
    episodes: usize,
    seed: u64,
) -> Result<ProbeSummary> {
    if episodes == 0 {
        return Err(Error::Env("probe needs at least one episode".to_string()));
    }
    let d = env.obs_dim();
    let mut sum = vec![0.0; d];
    let mut sumsq = vec![0.0; d];
    let mut n = 0usize;
    let mut action_rng = seeding::rng(seed, "probe-action", 0);
    for ep in 0..episodes {
        let mut obs = env.reset(seeding::derive_seed(seed, "probe-episode", ep as u64));
        for step in 0.. {
            if step > 100_000 {
                return Err(Error::Env("probe episode exceeded 100000 steps".to_string()));
            }
            for (j, &v) in obs.iter().enumerate() {
                sum[j] += v;
                sumsq[j] += v * v;
            }
            n += 1;
            let action = match &mut policy {
                ProbePolicy::Random => action_rng.gen_range(0..env.action_count()),
                ProbePolicy::Oracle => env
                    .oracle_action()
                    .ok_or_else(|| Error::Env("environment has no oracle policy".to_string()))?,
                ProbePolicy::Net(net) => {
                    let row = Tensor::new(vec![1, d], obs.clone())?;
                    let (dists, _) = net.policy_values(&row, Mode::Eval)?;
                    dists[0].sample(&mut action_rng)
                }
            };
            let out = env.step(action)?;
            if out.done || out.info.truncated {
                break;
            }
            obs = out.obs;
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let var: Vec<f64> = sumsq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| (sq / nf - m * m).max(0.0))
        .collect();
    Ok(ProbeSummary { episodes, transitions: n, mean, var })
}
