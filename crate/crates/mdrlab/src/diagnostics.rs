//! Train/eval mismatch instrumentation: JS policy divergence, ratio
//! perturbation, clip-saturation scans and collapse detection.
//!
//! All measurements are side-effect free: any Train-mode forward needed for
//! a measurement runs against a state snapshot that is rolled back before
//! the next one, so BatchNorm buffers and dropout streams are bit-identical
//! before and after a measurement pass.

use crate::agent::{ActorCritic, CategoricalDistribution};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::rollout::RolloutBuffer;
use crate::tensor::Tensor;

const PROB_FLOOR: f64 = 1e-12;

/// Jensen-Shannon divergence between two distributions over the same
/// support (natural log, bounded by ln 2). Probabilities are floored at
/// 1e-12 inside the KL terms so one-hot inputs stay finite.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "js_divergence",
            detail: format!("lengths {} vs {}", p.len(), q.len()),
        });
    }
    for (name, v) in [("p", p), ("q", q)] {
        let sum: f64 = v.iter().sum();
        if v.iter().any(|&x| !x.is_finite() || x < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Domain {
                op: "js_divergence",
                detail: format!("{name} is not a probability vector (sum {sum})"),
            });
        }
    }
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (&ai, &bi) in a.iter().zip(b) {
            let m = 0.5 * (ai + bi);
            if ai > 0.0 {
                acc += ai * (ai.max(PROB_FLOOR).ln() - m.max(PROB_FLOOR).ln());
            }
        }
        acc
    };
    Ok(0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p))
}

/// One Δπ measurement: mean JS over every state in the partition, plus the
/// per-minibatch means.
#[derive(Debug, Clone)]
pub struct MismatchEntry {
    pub mean_js: f64,
    pub per_minibatch: Vec<f64>,
}

/// Δπ⁻ / Δπ⁺ pair for one training step.
#[derive(Debug, Clone)]
pub struct MismatchReport {
    pub step: usize,
    pub delta_pi_minus: f64,
    pub delta_pi_plus: f64,
    pub per_minibatch_minus: Vec<f64>,
    pub per_minibatch_plus: Vec<f64>,
}

/// Summary of |δr| = |r_train - r_eval| over a buffer, and the estimated
/// clip-boundary expansion Δε.
#[derive(Debug, Clone)]
pub struct RatioPerturbationReport {
    pub mean_abs: f64,
    pub max_abs: f64,
    pub q50: f64,
    pub q90: f64,
    pub delta_eps: f64,
    pub transitions: usize,
}

/// Distributions under both modes for each minibatch of the partition.
/// The partition is the first floor(N/m) consecutive blocks of size m —
/// the same coverage a training epoch consumes.
fn dual_mode_pass(
    buffer: &RolloutBuffer,
    net: &mut ActorCritic,
    minibatch: usize,
) -> Result<Vec<(Vec<CategoricalDistribution>, Vec<CategoricalDistribution>)>> {
    let n = buffer.len();
    if minibatch == 0 || n < minibatch {
        return Err(Error::ShapeMismatch {
            op: "policy_mismatch",
            detail: format!("buffer of {n} transitions is smaller than one minibatch of {minibatch}"),
        });
    }
    let d = buffer.obs.shape()[1];
    let batches = n / minibatch;
    let start_state = net.state_snapshot();
    let mut out = Vec::with_capacity(batches);
    for b in 0..batches {
        let lo = b * minibatch;
        let obs = Tensor::new(
            vec![minibatch, d],
            buffer.obs.data()[lo * d..(lo + minibatch) * d].to_vec(),
        )?;
        let (train_dists, _) = net.policy_values(&obs, Mode::Train)?;
        net.state_restore(&start_state);
        let (eval_dists, _) = net.policy_values(&obs, Mode::Eval)?;
        out.push((train_dists, eval_dists));
    }
    Ok(out)
}

/// Mean JS divergence between the Train-mode and Eval-mode views of the
/// current policy over the buffer, partitioned into training minibatches.
pub fn policy_mismatch(buffer: &RolloutBuffer, net: &mut ActorCritic, minibatch: usize) -> Result<MismatchEntry> {
    let passes = dual_mode_pass(buffer, net, minibatch)?;
    let mut per_minibatch = Vec::with_capacity(passes.len());
    let mut total = 0.0;
    let mut count = 0usize;
    for (train_dists, eval_dists) in &passes {
        let mut batch_sum = 0.0;
        for (t, e) in train_dists.iter().zip(eval_dists) {
            batch_sum += js_divergence(&t.probs(), &e.probs())?;
        }
        total += batch_sum;
        count += train_dists.len();
        per_minibatch.push(batch_sum / train_dists.len() as f64);
    }
    Ok(MismatchEntry {
        mean_js: total / count as f64,
        per_minibatch,
    })
}

/// Per-transition ratio perturbation δr = r' - r, where r' uses Train-mode
/// log-probs and r uses Eval-mode log-probs, both against `log_prob_old`.
pub fn ratio_perturbation(
    buffer: &RolloutBuffer,
    net: &mut ActorCritic,
    minibatch: usize,
    clip_epsilon: f64,
) -> Result<RatioPerturbationReport> {
    let passes = dual_mode_pass(buffer, net, minibatch)?;
    let mut pairs = Vec::with_capacity(passes.len() * minibatch);
    for (b, (train_dists, eval_dists)) in passes.iter().enumerate() {
        for (i, (t, e)) in train_dists.iter().zip(eval_dists).enumerate() {
            let idx = b * minibatch + i;
            let lp_old = buffer.log_prob_old[idx];
            let a = buffer.actions[idx];
            let r_train = (t.log_prob(a)? - lp_old).exp();
            let r_eval = (e.log_prob(a)? - lp_old).exp();
            pairs.push((r_eval, r_train));
        }
    }
    let mut abs_dr: Vec<f64> = pairs.iter().map(|(r, rt)| (rt - r).abs()).collect();
    let transitions = abs_dr.len();
    let mean_abs = abs_dr.iter().sum::<f64>() / transitions as f64;
    abs_dr.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max_abs = *abs_dr.last().unwrap();
    Ok(RatioPerturbationReport {
        mean_abs,
        max_abs,
        q50: nearest_rank(&abs_dr, 0.5),
        q90: nearest_rank(&abs_dr, 0.9),
        delta_eps: delta_eps_from_ratios(&pairs, clip_epsilon),
        transitions,
    })
}

/// Boundary-expansion estimate: over transitions that the Train-mode ratio
/// reports as unclipped while the Eval-mode ratio already sits outside
/// [1-ε, 1+ε], take the largest excess of the eval deviation over the train
/// deviation. That is the widening ε' - ε a clip band would have needed to
/// catch the violation the optimizer never saw.
pub(crate) fn delta_eps_from_ratios(pairs: &[(f64, f64)], eps: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for &(r_eval, r_train) in pairs {
        let train_dev = (r_train - 1.0).abs();
        let eval_dev = (r_eval - 1.0).abs();
        if train_dev <= eps && eval_dev > eps {
            worst = worst.max(eval_dev - train_dev);
        }
    }
    worst
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

// ── Clip saturation scan ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationCell {
    pub r: f64,
    pub delta_r: f64,
    /// Whether clipping is guaranteed for this base ratio even under the
    /// worst-case perturbation sign (false = the perturbed ratio can land
    /// inside the band).
    pub clipped: bool,
    pub effective_lo: f64,
    pub effective_hi: f64,
}

#[derive(Debug, Clone)]
pub struct SaturationScan {
    pub eps: f64,
    pub r_grid: Vec<f64>,
    pub levels: Vec<f64>,
    /// Row-major: one row per δr level over the full grid.
    pub cells: Vec<SaturationCell>,
}

/// For each base ratio r and perturbation budget δr, decide whether the
/// perturbed ratio can escape clipping; the effective unclipped interval is
/// [1-ε-δr, 1+ε+δr].
pub fn clip_saturation_scan(r_grid: &[f64], levels: &[f64], eps: f64) -> Result<SaturationScan> {
    if eps <= 0.0 {
        return Err(Error::Domain {
            op: "clip_saturation_scan",
            detail: format!("epsilon must be positive, got {eps}"),
        });
    }
    if r_grid.is_empty() || r_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Domain {
            op: "clip_saturation_scan",
            detail: "r_grid must be non-empty and sorted ascending".to_string(),
        });
    }
    if levels.iter().any(|&l| l < 0.0) {
        return Err(Error::Domain {
            op: "clip_saturation_scan",
            detail: "negative perturbation level".to_string(),
        });
    }
    let mut cells = Vec::with_capacity(levels.len() * r_grid.len());
    for &dr in levels {
        // summing the widths first keeps decimal budgets on decimal
        // bounds (1 - (0.2 + 0.1) rounds to 0.7; (1 - 0.2) - 0.1 does not)
        let width = eps + dr;
        let lo = 1.0 - width;
        let hi = 1.0 + width;
        for &r in r_grid {
            cells.push(SaturationCell {
                r,
                delta_r: dr,
                clipped: !(lo <= r && r <= hi),
                effective_lo: lo,
                effective_hi: hi,
            });
        }
    }
    Ok(SaturationScan {
        eps,
        r_grid: r_grid.to_vec(),
        levels: levels.to_vec(),
        cells,
    })
}

// ── Collapse detection ──────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseEvent {
    /// First step whose trailing-window mean sits below the threshold.
    pub onset: usize,
    /// Running-peak windowed mean at onset.
    pub pre_mean: f64,
    /// Lowest windowed mean while the event is active.
    pub trough: f64,
    /// Whether the windowed mean later re-crossed the onset threshold.
    pub recovered: bool,
}

/// Find sustained performance collapses: the trailing-`window` mean falling
/// below `drop_fraction` of its running peak and staying there for at least
/// `window` consecutive steps.
pub fn detect_collapse(series: &[f64], window: usize, drop_fraction: f64) -> Result<Vec<CollapseEvent>> {
    if window == 0 || series.len() <= 2 * window {
        return Err(Error::Domain {
            op: "detect_collapse",
            detail: format!("series of {} needs length > 2*window ({})", series.len(), 2 * window),
        });
    }
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::Domain {
            op: "detect_collapse",
            detail: format!("drop fraction {drop_fraction} out of (0, 1)"),
        });
    }
    let w = window;
    let means: Vec<f64> = (w - 1..series.len())
        .map(|k| series[k + 1 - w..=k].iter().sum::<f64>() / w as f64)
        .collect();
    let offset = w - 1; // means[i] is the windowed mean at step i + offset
    let mut events = Vec::new();
    let mut peak = f64::NEG_INFINITY;
    let mut i = 0;
    while i < means.len() {
        peak = peak.max(means[i]);
        let threshold = drop_fraction * peak;
        if means[i] < threshold {
            let start = i;
            let mut trough = means[i];
            let mut j = i + 1;
            while j < means.len() && means[j] < threshold {
                trough = trough.min(means[j]);
                j += 1;
            }
            if j - start >= w {
                events.push(CollapseEvent {
                    onset: start + offset,
                    pre_mean: peak,
                    trough,
                    recovered: j < means.len(),
                });
            }
            i = j;
        } else {
            i += 1;
        }
    }
    Ok(events)
}
