//! Acceptance suite: every headline claim checked end to end, one verdict
//! line per criterion.
//!
//! `cargo test --test acceptance -- --nocapture` streams the lines as they
//! complete; without the flag cargo prints them only when the final
//! assertion fails. The collapse/entropy/generalization criteria retrain
//! real agents, so the whole suite takes a few minutes.

use std::time::Instant;

use rand::Rng;

use mdrlab::agent::{ActorCritic, ArchConfig};
use mdrlab::config::{ExperimentConfig, ModePlan};
use mdrlab::diagnostics;
use mdrlab::envs::{EnvSpec, GridGameConfig};
use mdrlab::experiment::{self, RunArtifacts};
use mdrlab::gradcheck;
use mdrlab::layers::{BatchNormLayer, Mode};
use mdrlab::optim::{AdamConfig, AdamState};
use mdrlab::rollout::{compute_gae, RolloutBuffer};
use mdrlab::seeding;
use mdrlab::tape::Tape;
use mdrlab::tensor::{ParamStore, Tensor};
use mdrlab::train::{gather_minibatch, optimize_rollout, ppo_loss, MdrSchedule, PpoConfig};

// ── shared helpers ──────────────────────────────────────────────────────

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Std of the trailing-5 moving average of `series` over its last half:
/// the reward-fluctuation statistic used by the entropy and dropout
/// criteria.
fn windowed_std(series: &[f64]) -> f64 {
    let w = 5usize.min(series.len());
    let smoothed: Vec<f64> = (0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let seg = &series[lo..=i];
            seg.iter().sum::<f64>() / seg.len() as f64
        })
        .collect();
    let half = &smoothed[smoothed.len() / 2..];
    let m = half.iter().sum::<f64>() / half.len() as f64;
    (half.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / half.len() as f64).sqrt()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn small_net(obs_dim: usize, actions: usize, batchnorm: bool, dropout: f64, seed: u64) -> ActorCritic {
    ActorCritic::new(ArchConfig {
        obs_dim,
        action_count: actions,
        hidden: vec![8],
        batchnorm,
        pinned_eval_bn: false,
        bn_momentum: 0.1,
        dropout,
        init_seed: seed,
    })
    .expect("net construction")
}

/// Buffer of n transitions with log_prob_old anchored to the net's Eval
/// policy so every ratio starts at exactly 1.
fn anchored_buffer(net: &mut ActorCritic, n: usize, seed: u64) -> RolloutBuffer {
    let d = net.arch.obs_dim;
    let mut rng = seeding::rng(seed, "acceptance-buffer", 0);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let obs = Tensor::from_rows(&rows).unwrap();
    let (dists, values) = net.policy_values(&obs, Mode::Eval).unwrap();
    let actions: Vec<usize> = dists.iter().map(|dd| dd.sample(&mut rng)).collect();
    let log_prob_old: Vec<f64> =
        dists.iter().zip(&actions).map(|(dd, &a)| dd.log_prob(a).unwrap()).collect();
    let advantages: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = values.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
    RolloutBuffer {
        obs,
        actions,
        log_prob_old,
        rewards: vec![0.0; n],
        dones: vec![false; n],
        truncated: vec![false; n],
        values_old: values.clone(),
        values,
        trunc_obs: Vec::new(),
        trunc_values: Vec::new(),
        bootstrap_obs: Tensor::zeros(vec![1, d]),
        bootstrap_values: vec![0.0],
        lanes: 1,
        steps_per_lane: n,
        advantages: Some(advantages),
        targets: Some(targets),
        episodes: Vec::new(),
    }
}

fn preset_cfg(name: &str, mode: ModePlan, entropy: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(name).expect("preset");
    cfg.mode = mode;
    cfg.ppo.entropy_coef = entropy;
    cfg
}

fn run_one(cfg: &ExperimentConfig, seed: u64) -> Result<RunArtifacts, String> {
    let art = experiment::run_single(cfg, seed, None).map_err(|e| e.to_string())?;
    if let Some(e) = &art.error {
        return Err(format!("seed {seed} aborted: {e}"));
    }
    Ok(art)
}

/// Per-run summary used by the collapse and entropy criteria.
struct RunStats {
    dpi: Vec<f64>,
    onsets: Vec<(usize, bool)>,
    final_window: f64,
    wstd: f64,
    /// Pearson r of Δπ⁻ against step index over the pre-collapse segment
    /// (the whole run when no collapse fires).
    r_pre: f64,
}

fn summarize(art: &RunArtifacts, cfg: &ExperimentConfig) -> Result<RunStats, String> {
    let rewards: Vec<f64> = art.records.iter().map(|r| r.reward_mean).collect();
    if rewards.iter().any(|v| !v.is_finite()) {
        return Err("non-finite reward_mean (episode-free step)".to_string());
    }
    let dpi: Vec<f64> = art.records.iter().map(|r| r.delta_pi_minus).collect();
    let events = diagnostics::detect_collapse(&rewards, cfg.collapse_window, cfg.collapse_drop)
        .map_err(|e| e.to_string())?;
    let onsets: Vec<(usize, bool)> = events.iter().map(|e| (e.onset, e.recovered)).collect();
    let pre = onsets.first().map(|&(o, _)| o).unwrap_or(dpi.len());
    let steps: Vec<f64> = (0..pre).map(|i| i as f64).collect();
    let r_pre = if pre >= 3 { pearson(&steps, &dpi[..pre]) } else { f64::NAN };
    let last = cfg.collapse_window.min(rewards.len());
    let final_window = mean(&rewards[rewards.len() - last..]);
    Ok(RunStats { wstd: windowed_std(&rewards), dpi, onsets, final_window, r_pre })
}

// ── criteria ────────────────────────────────────────────────────────────

fn c01_gradcheck() -> Result<String, String> {
    let t0 = Instant::now();
    let report = gradcheck::run_suite(20, 7).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let worst = report.cases.iter().map(|c| c.worst_abs_err).fold(0.0f64, f64::max);
    let n = report.cases.len();
    if !report.passed {
        let bad = report.cases.iter().filter(|c| !c.passed).count();
        return Err(format!("{bad}/{n} cases outside 1e-4 rel / 1e-6 abs"));
    }
    if secs >= 30.0 {
        return Err(format!("suite took {secs:.1} s (budget 30 s)"));
    }
    Ok(format!("{n} nets x 2 modes, worst |err| {worst:.2e}, {secs:.1} s"))
}

fn c02_batchnorm() -> Result<String, String> {
    let mut store = ParamStore::new();
    let mut bn = BatchNormLayer::new(&mut store, 4, 0.1, false);
    // large-scale data keeps the 1e-5 variance guard below the 1e-9 gate
    let mut rng = seeding::rng(2, "acceptance-bn", 0);
    let rows: Vec<Vec<f64>> = (0..16)
        .map(|_| (0..4).map(|_| rng.gen_range(-600.0..600.0)).collect())
        .collect();
    let x = Tensor::from_rows(&rows).unwrap();

    let before = bn.buffers();
    let mut tape = Tape::new();
    let xid = tape.input(&x);
    let (y, stats) = bn.forward(&mut tape, &store, xid, Mode::Train).map_err(|e| e.to_string())?;
    let out = tape.value(y).to_vec();
    for j in 0..4 {
        let col: Vec<f64> = (0..16).map(|i| out[i * 4 + j]).collect();
        let m = mean(&col);
        let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 16.0;
        if m.abs() > 1e-9 {
            return Err(format!("pre-affine mean {m:.2e} above 1e-9"));
        }
        if (v - 1.0).abs() > 1e-9 {
            return Err(format!("pre-affine variance off by {:.2e}", (v - 1.0).abs()));
        }
    }
    // Eq. 3 must be the exact update expression, bit for bit
    for j in 0..4 {
        let want_m = (1.0 - 0.1) * before.0[j] + 0.1 * stats.mean[j];
        let want_v = (1.0 - 0.1) * before.1[j] + 0.1 * stats.var[j];
        if bn.running_mean[j] != want_m || bn.running_var[j] != want_v {
            return Err(format!("running-stat update deviates from Eq. 3 at feature {j}"));
        }
    }
    // repeated identical batches contract the gap by (1 - M) each step
    let mut prev: Vec<f64> = (0..4).map(|j| bn.running_mean[j] - stats.mean[j]).collect();
    for _ in 0..6 {
        let mut tape = Tape::new();
        let xid = tape.input(&x);
        let (_, s) = bn.forward(&mut tape, &store, xid, Mode::Train).map_err(|e| e.to_string())?;
        for j in 0..4 {
            let gap = bn.running_mean[j] - s.mean[j];
            if (gap - 0.9 * prev[j]).abs() > 1e-12 {
                return Err(format!("contraction off by {:.2e}", (gap - 0.9 * prev[j]).abs()));
            }
            prev[j] = gap;
        }
    }
    Ok("mean/var within 1e-9, Eq. 3 exact, (1-M) contraction within 1e-12".to_string())
}

fn c03_mode_equivalence() -> Result<String, String> {
    // layer level: running stats set to batch stats => the two paths agree
    let mut store = ParamStore::new();
    let mut bn = BatchNormLayer::new(&mut store, 3, 0.1, false);
    let mut rng = seeding::rng(3, "acceptance-mode", 0);
    let rows: Vec<Vec<f64>> =
        (0..8).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let x = Tensor::from_rows(&rows).unwrap();
    let mut tape = Tape::new();
    let xid = tape.input(&x);
    let (y_train, stats) =
        bn.forward(&mut tape, &store, xid, Mode::Train).map_err(|e| e.to_string())?;
    let train_out = tape.value(y_train).to_vec();
    bn.restore_buffers(stats.mean.clone(), stats.var.clone());
    let mut tape = Tape::new();
    let xid = tape.input(&x);
    let (y_eval, _) = bn.forward(&mut tape, &store, xid, Mode::Eval).map_err(|e| e.to_string())?;
    let eval_out = tape.value(y_eval).to_vec();
    let worst = train_out
        .iter()
        .zip(&eval_out)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if worst > 1e-10 {
        return Err(format!("train/eval forwards differ by {worst:.2e}"));
    }

    // network level: a dataset of identical minibatches, running stats
    // converged onto the batch => policy_mismatch reports zero
    let mut net = small_net(5, 3, true, 0.0, 11);
    let block: Vec<Vec<f64>> =
        (0..8).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let block_t = Tensor::from_rows(&block).unwrap();
    for _ in 0..300 {
        net.policy_values(&block_t, Mode::Train).map_err(|e| e.to_string())?;
    }
    let tiled: Vec<Vec<f64>> = (0..4).flat_map(|_| block.clone()).collect();
    let mut buffer = anchored_buffer(&mut net, 32, 5);
    buffer.obs = Tensor::from_rows(&tiled).unwrap();
    let entry = diagnostics::policy_mismatch(&buffer, &mut net, 8).map_err(|e| e.to_string())?;
    if entry.mean_js > 1e-10 {
        return Err(format!("constant-batch mismatch {:.2e} above 1e-10", entry.mean_js));
    }
    Ok(format!("forwards agree to {worst:.1e}, constant-batch JS {:.1e}", entry.mean_js))
}

fn c04_gae_oracle() -> Result<String, String> {
    let mut rng = seeding::rng(4, "acceptance-gae", 0);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let t_max = rng.gen_range(1..=50);
        let rewards: Vec<f64> = (0..t_max).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..t_max).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dones: Vec<bool> = (0..t_max).map(|_| rng.gen_bool(0.15)).collect();
        let bootstrap = rng.gen_range(-1.0..1.0);
        let (gamma, lambda) = match case % 3 {
            0 => (rng.gen_range(0.8..1.0), 0.0),
            1 => (rng.gen_range(0.8..1.0), 1.0),
            _ => (rng.gen_range(0.8..1.0), rng.gen_range(0.1..0.9)),
        };
        let mut buffer = RolloutBuffer {
            obs: Tensor::zeros(vec![t_max, 1]),
            actions: vec![0; t_max],
            log_prob_old: vec![0.0; t_max],
            rewards: rewards.clone(),
            dones: dones.clone(),
            truncated: vec![false; t_max],
            values_old: values.clone(),
            values: values.clone(),
            trunc_obs: Vec::new(),
            trunc_values: Vec::new(),
            bootstrap_obs: Tensor::zeros(vec![1, 1]),
            bootstrap_values: vec![bootstrap],
            lanes: 1,
            steps_per_lane: t_max,
            advantages: None,
            targets: None,
            episodes: Vec::new(),
        };
        compute_gae(&mut buffer, gamma, lambda).map_err(|e| e.to_string())?;
        let got = buffer.advantages.as_ref().unwrap();

        // brute-force double sum: delta_t plus (gamma*lambda)-discounted
        // deltas up to and including the episode boundary
        let delta = |k: usize| -> f64 {
            let next = if dones[k] {
                0.0
            } else if k + 1 < t_max {
                values[k + 1]
            } else {
                bootstrap
            };
            rewards[k] + gamma * next - values[k]
        };
        for t in 0..t_max {
            let mut oracle = 0.0;
            let mut factor = 1.0;
            for k in t..t_max {
                oracle += factor * delta(k);
                if dones[k] {
                    break;
                }
                factor *= gamma * lambda;
            }
            let err = (got[t] - oracle).abs();
            worst = worst.max(err);
            if err > 1e-10 {
                return Err(format!("case {case} t {t}: |{} - {oracle}| = {err:.2e}", got[t]));
            }
            // closed forms at the lambda extremes
            if lambda == 0.0 {
                let err0 = (got[t] - delta(t)).abs();
                worst = worst.max(err0);
                if err0 > 1e-10 {
                    return Err(format!("lambda=0 closed form off by {err0:.2e}"));
                }
            }
            if lambda == 1.0 {
                let mut ret = 0.0;
                let mut disc = 1.0;
                let mut k = t;
                loop {
                    ret += disc * rewards[k];
                    if dones[k] {
                        break;
                    }
                    disc *= gamma;
                    if k + 1 == t_max {
                        ret += disc * bootstrap;
                        break;
                    }
                    k += 1;
                }
                let err1 = (got[t] - (ret - values[t])).abs();
                worst = worst.max(err1);
                if err1 > 1e-10 {
                    return Err(format!("lambda=1 closed form off by {err1:.2e}"));
                }
            }
        }
    }
    Ok(format!("100 trajectories, worst |err| {worst:.2e}"))
}

fn c05_clip_cases() -> Result<String, String> {
    let cfg = PpoConfig { entropy_coef: 0.0, ..PpoConfig::default() };
    let case = |ratio: f64, adv: f64| -> Result<(f64, f64), String> {
        let mut net = small_net(5, 3, false, 0.0, 23);
        let mut buf = anchored_buffer(&mut net, 1, 31);
        buf.log_prob_old[0] -= ratio.ln();
        buf.advantages = Some(vec![adv]);
        let mb = gather_minibatch(&buf, &[0]).map_err(|e| e.to_string())?;
        let mut tape = Tape::new();
        let parts = ppo_loss(&mut tape, &mut net, &mb, &cfg, Mode::Eval).map_err(|e| e.to_string())?;
        Ok((parts.l_clip, parts.clip_fraction))
    };
    let (l, _) = case(1.5, 1.0)?;
    if (l - 1.2).abs() > 1e-12 {
        return Err(format!("r=1.5, A=1: got {l}, want 1.2"));
    }
    let (l, _) = case(0.5, -1.0)?;
    if (l + 0.8).abs() > 1e-12 {
        return Err(format!("r=0.5, A=-1: got {l}, want -0.8"));
    }
    let (l, f) = case(1.0, 0.37)?;
    if (l - 0.37).abs() > 1e-12 || f != 0.0 {
        return Err(format!("r=1: got {l} (want 0.37), clip fraction {f}"));
    }
    // theta = theta_old over a full batch: every ratio is exactly 1
    let mut net = small_net(6, 4, false, 0.0, 29);
    let buf = anchored_buffer(&mut net, 32, 37);
    let idx: Vec<usize> = (0..32).collect();
    let mb = gather_minibatch(&buf, &idx).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let parts = ppo_loss(&mut tape, &mut net, &mb, &cfg, Mode::Eval).map_err(|e| e.to_string())?;
    if parts.clip_fraction != 0.0 {
        return Err(format!("clip fraction {} at theta = theta_old", parts.clip_fraction));
    }
    let want = mean(buf.advantages.as_ref().unwrap());
    if (parts.l_clip - want).abs() > 1e-12 {
        return Err(format!("identity surrogate {} vs mean advantage {want}", parts.l_clip));
    }
    Ok("1.2 / -0.8 / identity / zero clip fraction all exact".to_string())
}

fn c06_js() -> Result<String, String> {
    let mut rng = seeding::rng(6, "acceptance-js", 0);
    let random_dist = |rng: &mut rand_chacha::ChaCha8Rng, k: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    };
    let mut worst_sym = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=8);
        let p = random_dist(&mut rng, k);
        let q = random_dist(&mut rng, k);
        let a = diagnostics::js_divergence(&p, &q).map_err(|e| e.to_string())?;
        let b = diagnostics::js_divergence(&q, &p).map_err(|e| e.to_string())?;
        worst_sym = worst_sym.max((a - b).abs());
        // direct evaluation of JS = 0.5 sum p ln(2p/(p+q)) + 0.5 sum q ln(2q/(p+q))
        let mut oracle = 0.0;
        for j in 0..k {
            let m = 0.5 * (p[j] + q[j]);
            oracle += 0.5 * p[j] * (p[j] / m).ln() + 0.5 * q[j] * (q[j] / m).ln();
        }
        worst_oracle = worst_oracle.max((a - oracle).abs());
        if worst_sym > 1e-12 || worst_oracle > 1e-12 {
            return Err(format!("sym err {worst_sym:.2e}, oracle err {worst_oracle:.2e}"));
        }
        let self_div = diagnostics::js_divergence(&p, &p).map_err(|e| e.to_string())?;
        if self_div != 0.0 {
            return Err(format!("JS(p, p) = {self_div:.2e}, want exact zero"));
        }
    }
    let disjoint =
        diagnostics::js_divergence(&[1.0, 0.0], &[0.0, 1.0]).map_err(|e| e.to_string())?;
    if (disjoint - 2.0f64.ln()).abs() > 1e-12 {
        return Err(format!("disjoint support gives {disjoint}, want ln 2"));
    }
    Ok(format!(
        "1000 pairs: symmetry {worst_sym:.1e}, oracle {worst_oracle:.1e}, bound ln 2 exact"
    ))
}

fn c07_schedule() -> Result<String, String> {
    let cfg = PpoConfig { minibatch_size: 128, epochs: 3, recompute_period: 0, ..PpoConfig::default() };
    let run = |schedule: MdrSchedule| -> Result<(usize, usize), String> {
        let mut net = small_net(4, 3, true, 0.0, 41);
        let mut buffer = anchored_buffer(&mut net, 3000, 43);
        let mut opt = AdamState::new(AdamConfig::default(), net.store());
        let mut rng = seeding::rng(45, "acceptance-sched", 0);
        let log = optimize_rollout(&mut buffer, &mut net, &cfg, &schedule, &mut opt, &mut rng, 1)
            .map_err(|e| e.to_string())?;
        Ok((log.standard_updates, log.rectification_updates))
    };
    let (std_u, rect_u) = run(MdrSchedule::new(2.0, 1.0).map_err(|e| e.to_string())?)?;
    if (std_u, rect_u) != (46, 23) {
        return Err(format!("MDR(2,1) ran {std_u}+{rect_u} updates, want 46+23"));
    }
    let (plain_u, plain_r) = run(MdrSchedule::plain(3))?;
    if plain_u != 69 || plain_r != 0 {
        return Err(format!("plain PPO ran {plain_u}+{plain_r} updates, want 69+0"));
    }
    // a nonorm network has no mode-dependent layers, so delta-r vanishes
    let mut net = small_net(4, 3, false, 0.0, 47);
    let buffer = anchored_buffer(&mut net, 256, 49);
    let report =
        diagnostics::ratio_perturbation(&buffer, &mut net, 64, 0.2).map_err(|e| e.to_string())?;
    if report.max_abs != 0.0 {
        return Err(format!("nonorm |delta r| max {:.2e}, want exact zero", report.max_abs));
    }
    Ok("46+23 = 69 = plain PPO; nonorm |delta r| identically zero".to_string())
}

fn c08_scan() -> Result<String, String> {
    let grid = experiment::linspace(0.5, 1.5, 101).map_err(|e| e.to_string())?;
    let levels = [0.05, 0.10, 0.15];
    let scan = diagnostics::clip_saturation_scan(&grid, &levels, 0.2).map_err(|e| e.to_string())?;
    let expect = [(0.75, 1.25), (0.70, 1.30), (0.65, 1.35)];
    let mut intervals = Vec::new();
    for (i, &(lo, hi)) in expect.iter().enumerate() {
        let row = &scan.cells[i * grid.len()..(i + 1) * grid.len()];
        let got_lo = row[0].effective_lo;
        let got_hi = row[0].effective_hi;
        if got_lo != lo || got_hi != hi {
            return Err(format!(
                "dr={}: effective interval [{got_lo}, {got_hi}], want exactly [{lo}, {hi}]",
                levels[i]
            ));
        }
        if row.iter().any(|c| c.clipped != (c.r < got_lo || c.r > got_hi)) {
            return Err(format!("dr={}: clip mask disagrees with interval", levels[i]));
        }
        intervals.push((got_lo, got_hi));
    }
    for w in intervals.windows(2) {
        if !(w[1].0 < w[0].0 && w[0].1 < w[1].1) {
            return Err("intervals are not strictly nested".to_string());
        }
    }
    Ok("[0.75,1.25] c [0.70,1.30] c [0.65,1.35], all endpoints exact".to_string())
}

struct CollapseRuns {
    bn: Vec<RunStats>,
    eval: Vec<RunStats>,
    mdr: Vec<RunStats>,
    secs: f64,
}

fn collapse_runs() -> Result<CollapseRuns, String> {
    let seeds = [1u64, 2, 3, 4, 5];
    let t0 = Instant::now();
    let split = |mode: ModePlan| -> Result<Vec<RunStats>, String> {
        let cfg = preset_cfg("collapse-demo", mode, 1e-4);
        seeds
            .iter()
            .map(|&s| summarize(&run_one(&cfg, s)?, &cfg))
            .collect::<Result<Vec<_>, _>>()
    };
    let bn = split(ModePlan::Bn)?;
    let eval = split(ModePlan::Eval)?;
    let mdr = split(ModePlan::BnMdr)?;
    Ok(CollapseRuns { bn, eval, mdr, secs: t0.elapsed().as_secs_f64() })
}

fn c09_collapse(runs: &CollapseRuns) -> Result<String, String> {
    let trending = runs.bn.iter().filter(|s| s.r_pre > 0.3).count();
    let collapsed = runs.bn.iter().filter(|s| !s.onsets.is_empty()).count();
    if trending < 3 {
        return Err(format!("pre-collapse Pearson r > 0.3 in only {trending}/5 bn seeds"));
    }
    if collapsed < 3 {
        // documented soft gate for the random-init deviation: the bn
        // mismatch must still tower over bn-mdr in time average
        let bn_dpi = mean(&runs.bn.iter().map(|s| mean(&s.dpi)).collect::<Vec<_>>());
        let mdr_dpi = mean(&runs.mdr.iter().map(|s| mean(&s.dpi)).collect::<Vec<_>>());
        if bn_dpi < 5.0 * mdr_dpi {
            return Err(format!(
                "collapse fired in {collapsed}/5 seeds and bn/bn-mdr mismatch ratio {:.2} < 5",
                bn_dpi / mdr_dpi
            ));
        }
    }
    for (i, s) in runs.eval.iter().enumerate() {
        if s.dpi.iter().any(|&d| d != 0.0) {
            return Err(format!("eval seed {} has nonzero delta-pi", i + 1));
        }
        if s.onsets.iter().any(|&(_, recovered)| !recovered) {
            return Err(format!("eval seed {} ends collapsed", i + 1));
        }
    }
    let mdr_final = mean(&runs.mdr.iter().map(|s| s.final_window).collect::<Vec<_>>());
    let eval_final = mean(&runs.eval.iter().map(|s| s.final_window).collect::<Vec<_>>());
    let floor = eval_final - 0.1 * eval_final.abs();
    if mdr_final < floor {
        return Err(format!("bn-mdr final {mdr_final:.3} under eval floor {floor:.3}"));
    }
    if runs.secs >= 900.0 {
        return Err(format!("15 runs took {:.0} s (budget 900 s)", runs.secs));
    }
    Ok(format!(
        "bn: r>0.3 in {trending}/5, collapse in {collapsed}/5; eval clean; bn-mdr final {mdr_final:.3} >= {floor:.3}; {:.0} s",
        runs.secs
    ))
}

fn c10_entropy(runs: &CollapseRuns) -> Result<String, String> {
    // seeds 2 and 4 of the shared runs are the c2 = 1e-4 side
    let pick = |v: &[RunStats]| -> Vec<f64> { vec![v[1].wstd, v[3].wstd] };
    let seeds = [2u64, 4];
    let zero = |mode: ModePlan| -> Result<Vec<f64>, String> {
        let cfg = preset_cfg("collapse-demo", mode, 0.0);
        seeds
            .iter()
            .map(|&s| Ok(summarize(&run_one(&cfg, s)?, &cfg)?.wstd))
            .collect::<Result<Vec<_>, String>>()
    };
    let worst = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max);

    let mdr_zero = worst(&zero(ModePlan::BnMdr)?);
    let mdr_ent = worst(&pick(&runs.mdr));
    if mdr_zero <= mdr_ent {
        return Err(format!(
            "bn-mdr fluctuation with c2=0 ({mdr_zero:.4}) not above c2=1e-4 ({mdr_ent:.4})"
        ));
    }
    let eval_zero = worst(&zero(ModePlan::Eval)?);
    let eval_ent = worst(&pick(&runs.eval));
    let eval_gap = (eval_zero - eval_ent).abs();
    let mdr_gap = (mdr_zero - mdr_ent).abs();
    if eval_gap >= mdr_gap {
        return Err(format!("eval entropy gap {eval_gap:.4} not below bn-mdr gap {mdr_gap:.4}"));
    }
    Ok(format!(
        "bn-mdr wstd {mdr_zero:.4} (c2=0) > {mdr_ent:.4} (c2=1e-4); eval gap {eval_gap:.4} < {mdr_gap:.4}"
    ))
}

fn c11_generalization() -> Result<String, String> {
    let seeds = [1u64, 2, 3];
    let base = ExperimentConfig::preset("gridgame-gen").map_err(|e| e.to_string())?;
    let grid = match &base.env {
        EnvSpec::GridGame(gc) => *gc,
        _ => return Err("gridgame-gen preset is not a gridgame".to_string()),
    };
    let train_spec = EnvSpec::GridGame(GridGameConfig { holdout: false, ..grid });
    let hold_spec = EnvSpec::GridGame(GridGameConfig { holdout: true, ..grid });

    let mut gaps = std::collections::BTreeMap::new();
    let mut wstds = std::collections::BTreeMap::new();
    for mode in [ModePlan::Nonorm, ModePlan::Dropout, ModePlan::DropoutMdr] {
        let cfg = preset_cfg("gridgame-gen", mode, base.ppo.entropy_coef);
        let mut mode_gaps = Vec::new();
        let mut mode_wstds = Vec::new();
        for &seed in &seeds {
            let mut art = run_one(&cfg, seed)?;
            mode_wstds.push(summarize(&art, &cfg)?.wstd);
            let on_train = experiment::evaluate_policy(&mut art.net, &train_spec, 40, seed)
                .map_err(|e| e.to_string())?;
            let on_hold = experiment::evaluate_policy(&mut art.net, &hold_spec, 40, seed)
                .map_err(|e| e.to_string())?;
            mode_gaps.push(on_train - on_hold);
        }
        gaps.insert(mode.name(), mean(&mode_gaps));
        wstds.insert(mode.name(), mean(&mode_wstds));
    }
    if gaps["dropout-mdr"] > gaps["nonorm"] {
        return Err(format!(
            "dropout-mdr train-test gap {:.3} above nonorm {:.3}",
            gaps["dropout-mdr"], gaps["nonorm"]
        ));
    }
    if wstds["dropout"] <= wstds["dropout-mdr"] {
        return Err(format!(
            "dropout curve variance {:.4} not above dropout-mdr {:.4}",
            wstds["dropout"], wstds["dropout-mdr"]
        ));
    }
    Ok(format!(
        "gap {:.3} (dropout-mdr) <= {:.3} (nonorm); curve std {:.4} (dropout) > {:.4} (dropout-mdr)",
        gaps["dropout-mdr"], gaps["nonorm"], wstds["dropout"], wstds["dropout-mdr"]
    ))
}

fn c12_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::default();
    cfg.steps = 2;
    cfg.lanes = 2;
    cfg.rollout = 32;
    cfg.ppo.minibatch_size = 16;
    cfg.hidden = vec![8];
    cfg.seeds = vec![1, 2];
    cfg.out_dir = dir.path().join("a").to_string_lossy().into_owned();
    let first = experiment::run_to_disk(&cfg).map_err(|e| e.to_string())?;
    if !first.failures.is_empty() {
        return Err(format!("first pass failed: {:?}", first.failures));
    }
    let manifest = std::fs::read_to_string(first.dir.join("manifest.cfg")).map_err(|e| e.to_string())?;
    let mut again = ExperimentConfig::parse_str(&manifest).map_err(|e| e.to_string())?;
    again.out_dir = dir.path().join("b").to_string_lossy().into_owned();
    let second = experiment::run_to_disk(&again).map_err(|e| e.to_string())?;
    if !second.failures.is_empty() {
        return Err(format!("manifest re-run failed: {:?}", second.failures));
    }
    if first.csv_paths.len() != second.csv_paths.len() {
        return Err("manifest re-run produced a different file set".to_string());
    }
    for (a, b) in first.csv_paths.iter().zip(&second.csv_paths) {
        let ba = std::fs::read(a).map_err(|e| e.to_string())?;
        let bb = std::fs::read(b).map_err(|e| e.to_string())?;
        if ba != bb {
            return Err(format!("{} differs from {}", a.display(), b.display()));
        }
    }
    Ok(format!("{} CSVs byte-identical across a manifest re-run", first.csv_paths.len()))
}

#[test]
fn acceptance() {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    let mut verdict = |id: usize, name: &str, result: Result<String, String>| {
        let line = match &result {
            Ok(detail) => format!("criterion {id:2} PASS  {name}: {detail}"),
            Err(reason) => format!("criterion {id:2} FAIL  {name}: {reason}"),
        };
        println!("{line}");
        if result.is_err() {
            failures.push(id);
        }
        lines.push(line);
    };

    verdict(1, "gradient check", c01_gradcheck());
    verdict(2, "batchnorm semantics", c02_batchnorm());
    verdict(3, "mode equivalence", c03_mode_equivalence());
    verdict(4, "gae oracle", c04_gae_oracle());
    verdict(5, "ppo clip arithmetic", c05_clip_cases());
    verdict(6, "js divergence", c06_js());
    verdict(7, "mdr scheduling", c07_schedule());
    verdict(8, "saturation scan", c08_scan());

    match collapse_runs() {
        Ok(runs) => {
            verdict(9, "collapse phenomenon", c09_collapse(&runs));
            verdict(10, "entropy ablation", c10_entropy(&runs));
        }
        Err(e) => {
            verdict(9, "collapse phenomenon", Err(format!("runs failed: {e}")));
            verdict(10, "entropy ablation", Err("shared runs failed".to_string()));
        }
    }
    verdict(11, "dropout generalization", c11_generalization());
    verdict(12, "determinism", c12_determinism());

    assert!(
        failures.is_empty(),
        "criteria {failures:?} failed:\n{}",
        lines.join("\n")
    );
}
