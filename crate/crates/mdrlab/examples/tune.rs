//! Scratch harness for tuning the collapse-demo preset (not shipped).

use mdrlab::config::{ExperimentConfig, ModePlan};
use mdrlab::diagnostics;
use mdrlab::experiment;

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
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

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut mode = "bn".to_string();
    let mut preset = "collapse-demo".to_string();
    let mut seeds: Vec<u64> = vec![1, 2, 3, 4, 5];
    let mut sets: Vec<String> = Vec::new();
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "--mode" => {
                mode = args[i + 1].clone();
                i += 2;
            }
            "--preset" => {
                preset = args[i + 1].clone();
                i += 2;
            }
            "--seeds" => {
                seeds = args[i + 1].split(',').map(|s| s.parse().unwrap()).collect();
                i += 2;
            }
            "--set" => {
                sets.push(args[i + 1].clone());
                i += 2;
            }
            other => panic!("unknown arg {other}"),
        }
    }

    let mut all_sets = vec![format!("preset = {preset}"), format!("mode = {mode}")];
    all_sets.extend(sets);
    let cfg = ExperimentConfig::from_sources(None, &all_sets).unwrap();
    cfg.validate().unwrap();
    println!("# mode={mode} steps={} rollout={} lr={}", cfg.steps, cfg.rollout, cfg.ppo.learning_rate);

    let t_all = std::time::Instant::now();
    for &seed in &seeds {
        let t0 = std::time::Instant::now();
        let art = experiment::run_single(&cfg, seed, None).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        if let Some(e) = &art.error {
            println!("seed {seed}: ABORT {e}");
            continue;
        }
        let rewards: Vec<f64> = art.series(|r| r.reward_mean);
        let dpi: Vec<f64> = art.series(|r| r.delta_pi_minus);
        let finite: Vec<f64> = rewards.iter().copied().filter(|v| v.is_finite()).collect();
        let events = diagnostics::detect_collapse(&finite, cfg.collapse_window, cfg.collapse_drop)
            .unwrap_or_default();
        let steps: Vec<f64> = (0..dpi.len()).map(|i| i as f64).collect();
        let r_all = pearson(&steps, &dpi);
        let onset = events.first().map(|e| e.onset);
        let pre = onset.unwrap_or(dpi.len());
        let r_pre = if pre >= 3 { pearson(&steps[..pre], &dpi[..pre]) } else { f64::NAN };
        let mean_dpi = dpi.iter().sum::<f64>() / dpi.len() as f64;
        let last = cfg.collapse_window.min(finite.len());
        let final_window = finite[finite.len() - last..].iter().sum::<f64>() / last as f64;
        let peak = finite.iter().cloned().fold(f64::MIN, f64::max);
        // std of window-5 moving-average reward over the last half of training
        let w = 5usize.min(finite.len());
        let smoothed: Vec<f64> = (0..finite.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                let seg = &finite[lo..=i];
                seg.iter().sum::<f64>() / seg.len() as f64
            })
            .collect();
        let half = &smoothed[smoothed.len() / 2..];
        let hm = half.iter().sum::<f64>() / half.len() as f64;
        let wstd = (half.iter().map(|v| (v - hm).powi(2)).sum::<f64>() / half.len() as f64).sqrt();
        println!(
            "seed {seed}: {secs:5.1}s  peak {peak:6.3}  final {final_window:6.3}  wstd {wstd:8.5}  mean_dpi {mean_dpi:8.5}  r_all {r_all:5.2}  r_pre {r_pre:5.2}  collapse {:?}",
            events.iter().map(|e| (e.onset, e.recovered)).collect::<Vec<_>>()
        );
        if let mdrlab::envs::EnvSpec::GridGame(gc) = &cfg.env {
            let mut net = art.net;
            let train_spec =
                mdrlab::envs::EnvSpec::GridGame(mdrlab::envs::GridGameConfig { holdout: false, ..*gc });
            let hold_spec =
                mdrlab::envs::EnvSpec::GridGame(mdrlab::envs::GridGameConfig { holdout: true, ..*gc });
            let tr = experiment::evaluate_policy(&mut net, &train_spec, 40, seed).unwrap();
            let te = experiment::evaluate_policy(&mut net, &hold_spec, 40, seed).unwrap();
            println!("  eval: train {tr:.3}  holdout {te:.3}  gap {:.3}", tr - te);
            continue;
        }
        // Compact curves for eyeballing.
        let rw: Vec<String> = rewards.iter().map(|v| if v.is_finite() { format!("{v:.2}") } else { "nan".into() }).collect();
        let dp: Vec<String> = dpi.iter().map(|v| format!("{v:.3}")).collect();
        println!("  reward: {}", rw.join(" "));
        println!("  dpi:    {}", dp.join(" "));
    }
    println!("# total {:.1}s", t_all.elapsed().as_secs_f64());
}
