//! Finite-difference verification of the full PPO loss gradient.
//!
//! Every case builds a random small network, a data batch whose ratios all
//! sit clear of the clip kink, and compares the tape's gradient against
//! central differences parameter by parameter — in Eval mode and in Train
//! mode, where BatchNorm batch statistics and live dropout masks make the
//! graph considerably less trivial. The dropout RNG stream is rolled back
//! before every forward so all probes see identical masks.

use rand::Rng;

use crate::agent::{ActorCritic, ArchConfig, CategoricalDistribution};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::seeding;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::{ppo_loss, Minibatch, PpoConfig};

pub const ABS_TOL: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub net: usize,
    pub batchnorm: bool,
    pub dropout: f64,
    pub mode: Mode,
    pub params_checked: usize,
    pub worst_abs_err: f64,
    /// Worst err / (abs_tol + rel_tol·scale); below 1 passes.
    pub worst_margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub cases: Vec<CaseReport>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            let layers = match (c.batchnorm, c.dropout > 0.0) {
                (false, false) => "plain",
                (true, false) => "bn",
                (false, true) => "dropout",
                (true, true) => "bn+dropout",
            };
            let mode = match c.mode {
                Mode::Train => "train",
                Mode::Eval => "eval",
            };
            out.push_str(&format!(
                "net {:02} {:<10} {:<5} {:>4} params  worst |err| {:9.2e}  margin {:8.2e}  {}\n",
                c.net,
                layers,
                mode,
                c.params_checked,
                c.worst_abs_err,
                c.worst_margin,
                if c.passed { "PASS" } else { "FAIL" },
            ));
        }
        out.push_str(&format!(
            "{}/{} cases passed\n",
            self.cases.iter().filter(|c| c.passed).count(),
            self.cases.len()
        ));
        out
    }
}

/// Data batch anchored to the net's own Eval policy, with jittered old
/// log-probs; resampled until every ratio in both modes clears the clip
/// boundary, so finite differences never straddle the kink.
fn kink_free_minibatch(
    net: &mut ActorCritic,
    m: usize,
    eps: f64,
    master: u64,
    case: u64,
) -> Result<Minibatch> {
    let d = net.arch.obs_dim;
    for attempt in 0..100u64 {
        let mut rng = seeding::rng(master, "gradcheck-data", case * 1000 + attempt);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let obs = Tensor::from_rows(&rows)?;
        let snap = net.state_snapshot();
        let (dists, values) = net.policy_values(&obs, Mode::Eval)?;
        let actions: Vec<usize> = dists.iter().map(|dd| dd.sample(&mut rng)).collect();
        let log_prob_old: Vec<f64> = dists
            .iter()
            .zip(&actions)
            .map(|(dd, &a)| Ok(dd.log_prob(a)? - rng.gen_range(-0.4..0.4)))
            .collect::<Result<_>>()?;
        let advantages: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let targets: Vec<f64> = values.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
        let mb = Minibatch { obs, actions, log_prob_old, advantages, targets };

        let clear = |dists: &[CategoricalDistribution]| -> Result<bool> {
            for (i, dd) in dists.iter().enumerate() {
                let r = (dd.log_prob(mb.actions[i])? - mb.log_prob_old[i]).exp();
                if ((r - 1.0).abs() - eps).abs() <= KINK_MARGIN {
                    return Ok(false);
                }
            }
            Ok(true)
        };
        let (td, _) = net.policy_values(&mb.obs, Mode::Train)?;
        net.state_restore(&snap);
        let (ed, _) = net.policy_values(&mb.obs, Mode::Eval)?;
        if clear(&td)? && clear(&ed)? {
            return Ok(mb);
        }
    }
    Err(Error::Domain {
        op: "gradcheck",
        detail: format!("no kink-free minibatch found for case {case}"),
    })
}

fn check_case(
    net: &mut ActorCritic,
    mb: &Minibatch,
    cfg: &PpoConfig,
    mode: Mode,
) -> Result<(usize, f64, f64)> {
    let snap = net.state_snapshot();
    net.state_restore(&snap);
    let mut tape = Tape::new();
    net.store_mut().zero_grads();
    let parts = ppo_loss(&mut tape, net, mb, cfg, mode)?;
    tape.backward(parts.root, net.store_mut())?;
    let ids: Vec<_> = net.store().ids().collect();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| net.store().get(*id).grad().map(|g| g.to_vec()).unwrap_or_default())
        .collect();
    net.store_mut().zero_grads();

    let mut checked = 0usize;
    let mut worst_abs = 0.0f64;
    let mut worst_margin = 0.0f64;
    for (pi, id) in ids.iter().enumerate() {
        for j in 0..net.store().get(*id).numel() {
            let orig = net.store().get(*id).data()[j];
            let eval_at = |x: f64, net: &mut ActorCritic| -> Result<f64> {
                net.store_mut().get_mut(*id).data_mut()[j] = x;
                net.state_restore(&snap);
                let mut t = Tape::new();
                let p = ppo_loss(&mut t, net, mb, cfg, mode);
                net.store_mut().get_mut(*id).data_mut()[j] = orig;
                Ok(p?.total)
            };
            let plus = eval_at(orig + FD_STEP, net)?;
            let minus = eval_at(orig - FD_STEP, net)?;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[pi].get(j).copied().unwrap_or(0.0);
            let err = (a - fd).abs();
            let margin = err / (ABS_TOL + REL_TOL * a.abs().max(fd.abs()));
            worst_abs = worst_abs.max(err);
            worst_margin = worst_margin.max(margin);
            checked += 1;
        }
    }
    net.state_restore(&snap);
    Ok((checked, worst_abs, worst_margin))
}

/// Check `nets` random networks, cycling through the four layer combinations
/// (plain, BatchNorm, Dropout, both) and verifying each in both modes.
pub fn run_suite(nets: usize, master_seed: u64) -> Result<SuiteReport> {
    if nets == 0 {
        return Err(Error::Domain {
            op: "gradcheck",
            detail: "need at least one network".to_string(),
        });
    }
    let cfg = PpoConfig::default();
    let mut cases = Vec::with_capacity(nets * 2);
    for i in 0..nets {
        let mut rng = seeding::rng(master_seed, "gradcheck-net", i as u64);
        let (batchnorm, dropout) = match i % 4 {
            0 => (false, 0.0),
            1 => (true, 0.0),
            2 => (false, 0.25),
            _ => (true, 0.25),
        };
        let hidden = if rng.gen_bool(0.5) {
            vec![rng.gen_range(5..=8)]
        } else {
            vec![rng.gen_range(5..=8), rng.gen_range(4..=6)]
        };
        let arch = ArchConfig {
            obs_dim: rng.gen_range(3..=6),
            action_count: rng.gen_range(3..=6),
            hidden,
            batchnorm,
            pinned_eval_bn: false,
            bn_momentum: 0.1,
            dropout,
            init_seed: seeding::derive_seed(master_seed, "gradcheck-init", i as u64),
        };
        let mut net = ActorCritic::new(arch)?;
        let mb = kink_free_minibatch(&mut net, 6, cfg.clip_epsilon, master_seed, i as u64)?;
        for mode in [Mode::Eval, Mode::Train] {
            let (params_checked, worst_abs_err, worst_margin) =
                check_case(&mut net, &mb, &cfg, mode)?;
            cases.push(CaseReport {
                net: i,
                batchnorm,
                dropout,
                mode,
                params_checked,
                worst_abs_err,
                worst_margin,
                passed: worst_margin < 1.0,
            });
        }
    }
    let passed = cases.iter().all(|c| c.passed);
    Ok(SuiteReport { cases, passed })
}
