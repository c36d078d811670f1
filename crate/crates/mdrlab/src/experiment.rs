//! End-to-end experiment runs and their artifacts.
//!
//! A run is: collect a rollout → compute advantages → measure the pre-update
//! diagnostics (Δπ⁻, |δr|, Δε) → optimize → measure Δπ⁺ → emit one
//! [`RunRecord`]. The disk layer fans out over seeds, streams CSV rows so a
//! partial run survives a crash, and writes a manifest that is itself a valid
//! config file: re-running it reproduces every CSV byte-for-byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::agent::ActorCritic;
use crate::config::{ExperimentConfig, ModePlan};
use crate::diagnostics::{self, SaturationScan};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::optim::{AdamConfig, AdamState};
use crate::plot::{self, Panel, Series};
use crate::report::{self, RunRecord, RunTable};
use crate::rollout::{self, EnvPool};
use crate::seeding;
use crate::tensor::Tensor;
use crate::train::{self, MdrSchedule, UpdateLog};

pub const MANIFEST_FILE: &str = "manifest.cfg";
pub const MANIFEST_SCHEMA: &str = "mdrlab-manifest-v1";
pub const SCAN_SCHEMA: &str = "scan-v1";

/// Content hash of the crate sources, embedded at compile time.
pub fn build_hash() -> &'static str {
    env!("MDRLAB_BUILD_HASH")
}

pub fn run_stem(mode: ModePlan, seed: u64) -> String {
    format!("{}-seed{}", mode.name(), seed)
}

pub fn parse_run_stem(stem: &str) -> Option<(&str, u64)> {
    let (mode, seed) = stem.rsplit_once("-seed")?;
    Some((mode, seed.parse().ok()?))
}

/// Receives rows as they are produced so artifacts survive a mid-run abort.
pub trait StepSink {
    fn on_record(&mut self, record: &RunRecord, seconds: f64) -> Result<()>;
    fn on_error(&mut self, message: &str) -> Result<()>;
    fn on_checkpoint(&mut self, step: usize, net: &ActorCritic) -> Result<()>;
}

pub struct RunArtifacts {
    pub seed: u64,
    pub records: Vec<RunRecord>,
    pub timings: Vec<f64>,
    /// Set when training aborted; `records` then holds the completed steps.
    pub error: Option<String>,
    pub net: ActorCritic,
}

impl RunArtifacts {
    /// Full CSV including the trailing error row for aborted runs.
    pub fn csv(&self) -> String {
        let mut s = report::to_run_csv(&self.records);
        if let Some(e) = &self.error {
            s.push_str(&report::format_error_row(e));
        }
        s
    }

    pub fn series<F: Fn(&RunRecord) -> f64>(&self, get: F) -> Vec<f64> {
        self.records.iter().map(get).collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn step_once(
    cfg: &ExperimentConfig,
    schedule: &MdrSchedule,
    pool: &mut EnvPool,
    net: &mut ActorCritic,
    opt: &mut AdamState,
    rng: &mut ChaCha8Rng,
    step: usize,
    steps_per_lane: usize,
) -> Result<RunRecord> {
    let mut buffer = rollout::collect(pool, net, steps_per_lane)?;
    rollout::compute_gae(&mut buffer, cfg.ppo.gamma, cfg.ppo.lambda)?;
    rollout::normalize_advantages(&mut buffer)?;

    let m = cfg.ppo.minibatch_size;
    let pre = diagnostics::policy_mismatch(&buffer, net, m)?;
    let ratio = diagnostics::ratio_perturbation(&buffer, net, m, cfg.ppo.clip_epsilon)?;
    let log = train::optimize_rollout(&mut buffer, net, &cfg.ppo, schedule, opt, rng, step)?;
    let post = diagnostics::policy_mismatch(&buffer, net, m)?;

    let episodes = buffer.episodes.len();
    let (reward_mean, reward_std) = if episodes == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let n = episodes as f64;
        let mean = buffer.episodes.iter().map(|e| e.ret).sum::<f64>() / n;
        let var = buffer.episodes.iter().map(|e| (e.ret - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };

    let avg = |get: fn(&UpdateLog) -> f64| -> f64 {
        if log.updates.is_empty() {
            f64::NAN
        } else {
            log.updates.iter().map(get).sum::<f64>() / log.updates.len() as f64
        }
    };

    Ok(RunRecord {
        step,
        env_steps: step * cfg.rollout,
        reward_mean,
        reward_std,
        episodes,
        delta_pi_minus: pre.mean_js,
        delta_pi_plus: post.mean_js,
        abs_dr_mean: ratio.mean_abs,
        abs_dr_max: ratio.max_abs,
        delta_eps: ratio.delta_eps,
        clip_fraction: avg(|u| u.clip_fraction),
        entropy: avg(|u| u.entropy),
        loss_total: avg(|u| u.loss),
        loss_clip: avg(|u| u.l_clip),
        loss_value: avg(|u| u.l_value),
        standard_updates: log.standard_updates,
        rectification_updates: log.rectification_updates,
    })
}

/// One seeded run. Setup failures (bad config, env construction) are hard
/// errors; a failure inside the training loop is recorded in
/// [`RunArtifacts::error`] with the completed steps intact.
pub fn run_single(
    cfg: &ExperimentConfig,
    seed: u64,
    mut sink: Option<&mut dyn StepSink>,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let steps_per_lane = cfg.rollout / cfg.lanes;
    let mut envs = Vec::with_capacity(cfg.lanes);
    for _ in 0..cfg.lanes {
        envs.push(cfg.env.build()?);
    }
    let mut pool = EnvPool::new(envs, seeding::derive_seed(seed, "pool", 0))?;
    let mut net = ActorCritic::new(cfg.arch(seed))?;
    let mut opt = AdamState::new(
        AdamConfig {
            lr: cfg.ppo.learning_rate,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
        net.store(),
    );
    let mut rng = seeding::rng(seed, "train", 0);

    let mut records = Vec::new();
    let mut timings = Vec::new();
    let mut error = None;
    for k in 1..=cfg.steps {
        let t0 = Instant::now();
        match step_once(cfg, &schedule, &mut pool, &mut net, &mut opt, &mut rng, k, steps_per_lane) {
            Ok(record) => {
                let seconds = t0.elapsed().as_secs_f64();
                if let Some(s) = sink.as_deref_mut() {
                    s.on_record(&record, seconds)?;
                    if cfg.checkpoint_every > 0 && k % cfg.checkpoint_every == 0 {
                        s.on_checkpoint(k, &net)?;
                    }
                }
                records.push(record);
                timings.push(seconds);
            }
            Err(e) => {
                let message = e.to_string();
                if let Some(s) = sink.as_deref_mut() {
                    s.on_error(&message)?;
                }
                error = Some(message);
                break;
            }
        }
    }
    Ok(RunArtifacts { seed, records, timings, error, net })
}

/// Streams one run's CSV and timing sidecar, flushing after every row.
pub struct DiskSink {
    csv: fs::File,
    timing: fs::File,
    dir: PathBuf,
    stem: String,
}

impl DiskSink {
    pub fn create(dir: &Path, stem: &str) -> Result<Self> {
        let mut csv = fs::File::create(dir.join(format!("{stem}.csv")))?;
        csv.write_all(report::run_header().as_bytes())?;
        csv.flush()?;
        let mut timing = fs::File::create(dir.join(format!("{stem}-timing.csv")))?;
        timing.write_all(report::timing_header().as_bytes())?;
        timing.flush()?;
        Ok(DiskSink {
            csv,
            timing,
            dir: dir.to_path_buf(),
            stem: stem.to_string(),
        })
    }
}

impl StepSink for DiskSink {
    fn on_record(&mut self, record: &RunRecord, seconds: f64) -> Result<()> {
        self.csv.write_all(report::format_record(record).as_bytes())?;
        self.csv.flush()?;
        self.timing
            .write_all(report::format_timing_row(record.step, seconds).as_bytes())?;
        self.timing.flush()?;
        Ok(())
    }

    fn on_error(&mut self, message: &str) -> Result<()> {
        self.csv.write_all(report::format_error_row(message).as_bytes())?;
        self.csv.flush()?;
        Ok(())
    }

    fn on_checkpoint(&mut self, step: usize, net: &ActorCritic) -> Result<()> {
        net.save(&self.dir.join(format!("{}-step{step:04}.ckpt.json", self.stem)))
    }
}

pub fn manifest_text(cfg: &ExperimentConfig) -> String {
    format!("# {MANIFEST_SCHEMA}\n# build = {}\n{}", build_hash(), cfg.to_text())
}

pub struct RunOutput {
    pub dir: PathBuf,
    pub csv_paths: Vec<PathBuf>,
    /// (seed, message) for every run that aborted mid-training.
    pub failures: Vec<(u64, String)>,
}

/// Fan a config out over its seed list: one CSV + timing sidecar per seed,
/// interval checkpoints on request, a final checkpoint per completed run,
/// and a re-runnable manifest for the whole batch.
pub fn run_to_disk(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(MANIFEST_FILE), manifest_text(cfg))?;

    let mut csv_paths = Vec::new();
    let mut failures = Vec::new();
    for seed in cfg.effective_seeds() {
        let stem = run_stem(cfg.mode, seed);
        let mut sink = DiskSink::create(&dir, &stem)?;
        let artifacts = run_single(cfg, seed, Some(&mut sink))?;
        if artifacts.error.is_none() {
            artifacts
                .net
                .save(&dir.join(format!("{stem}-final.ckpt.json")))?;
        }
        csv_paths.push(dir.join(format!("{stem}.csv")));
        if let Some(e) = artifacts.error {
            failures.push((seed, e));
        }
    }
    Ok(RunOutput { dir, csv_paths, failures })
}

/// Mean episode return of the current policy over `episodes` fresh episodes,
/// sampling actions stochastically. Forward passes run in Eval mode, so the
/// network is left untouched.
pub fn evaluate_policy(
    net: &mut ActorCritic,
    spec: &EnvSpec,
    episodes: usize,
    master_seed: u64,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Domain {
            op: "evaluate_policy",
            detail: "need at least one episode".to_string(),
        });
    }
    let mut env = spec.build()?;
    let mut rng = seeding::rng(master_seed, "eval-action", 0);
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut obs = env.reset(seeding::derive_seed(master_seed, "eval-episode", ep as u64));
        loop {
            let row = Tensor::new(vec![1, obs.len()], obs.clone())?;
            let (dists, _) = net.policy_values(&row, Mode::Eval)?;
            let action = dists[0].sample(&mut rng);
            let out = env.step(action)?;
            total += out.reward;
            if out.done {
                break;
            }
            obs = out.obs;
        }
    }
    Ok(total / episodes as f64)
}

/// Mean of the finite `reward_mean` entries among the last `window` rows.
pub fn final_window_mean(table: &RunTable, window: usize) -> f64 {
    let start = table.records.len().saturating_sub(window);
    let vals: Vec<f64> = table.records[start..]
        .iter()
        .map(|r| r.reward_mean)
        .filter(|v| v.is_finite())
        .collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

pub struct NamedTable {
    /// File stem, normally `<mode>-seed<seed>`.
    pub stem: String,
    pub table: RunTable,
}

fn series_with_band(label: &str, tables: &[&RunTable], get: fn(&RunRecord) -> f64) -> Series {
    let max_len = tables.iter().map(|t| t.records.len()).max().unwrap_or(0);
    let mut xs = Vec::with_capacity(max_len);
    let mut ys = Vec::with_capacity(max_len);
    let mut lo = Vec::with_capacity(max_len);
    let mut hi = Vec::with_capacity(max_len);
    for i in 0..max_len {
        let step = tables
            .iter()
            .find_map(|t| t.records.get(i).map(|r| r.step as f64))
            .unwrap_or(i as f64 + 1.0);
        let vals: Vec<f64> = tables
            .iter()
            .filter_map(|t| t.records.get(i).map(get))
            .filter(|v| v.is_finite())
            .collect();
        xs.push(step);
        if vals.is_empty() {
            ys.push(f64::NAN);
            lo.push(f64::NAN);
            hi.push(f64::NAN);
        } else {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            ys.push(mean);
            lo.push(mean - std);
            hi.push(mean + std);
        }
    }
    Series {
        label: label.to_string(),
        xs,
        ys,
        band: Some((lo, hi)),
    }
}

/// Comparison chart (reward and Δπ⁻ panels, mean ± std band across seeds
/// within each mode) plus a plain-text final-window summary table.
pub fn compare_report(inputs: &[NamedTable], window: usize) -> Result<(String, String)> {
    if inputs.is_empty() {
        return Err(Error::Csv("no run CSVs to compare".to_string()));
    }
    let mut groups: BTreeMap<String, Vec<&NamedTable>> = BTreeMap::new();
    for input in inputs {
        let mode = parse_run_stem(&input.stem)
            .map(|(m, _)| m.to_string())
            .unwrap_or_else(|| input.stem.clone());
        groups.entry(mode).or_default().push(input);
    }

    let mut reward = Panel {
        title: "episode reward".to_string(),
        x_label: "training step".to_string(),
        y_label: "mean episode reward".to_string(),
        series: Vec::new(),
    };
    let mut mismatch = Panel {
        title: "policy mismatch".to_string(),
        x_label: "training step".to_string(),
        y_label: "delta_pi_minus".to_string(),
        series: Vec::new(),
    };
    let mut summary = format!(
        "{:<14} {:>5} {:>22}\n",
        "mode", "runs", "final_window_reward"
    );
    for (mode, members) in &groups {
        let tables: Vec<&RunTable> = members.iter().map(|m| &m.table).collect();
        reward
            .series
            .push(series_with_band(mode, &tables, |r| r.reward_mean));
        mismatch
            .series
            .push(series_with_band(mode, &tables, |r| r.delta_pi_minus));
        let finals: Vec<f64> = tables
            .iter()
            .map(|t| final_window_mean(t, window))
            .filter(|v| v.is_finite())
            .collect();
        let overall = if finals.is_empty() {
            f64::NAN
        } else {
            finals.iter().sum::<f64>() / finals.len() as f64
        };
        summary.push_str(&format!("{:<14} {:>5} {:>22.6}\n", mode, members.len(), overall));
    }
    Ok((plot::render_chart(&[reward, mismatch]), summary))
}

/// Evenly spaced grid with exact endpoints.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 || hi < lo {
        return Err(Error::Domain {
            op: "linspace",
            detail: format!("bad grid [{lo}, {hi}] x {n}"),
        });
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect())
}

pub fn scan_csv(scan: &SaturationScan) -> String {
    let mut s = format!("# {SCAN_SCHEMA}\ndelta_r,r,effective_lo,effective_hi,clipped\n");
    for cell in &scan.cells {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            report::format_float(cell.delta_r),
            report::format_float(cell.r),
            report::format_float(cell.effective_lo),
            report::format_float(cell.effective_hi),
            u8::from(cell.clipped),
        ));
    }
    s
}

pub fn scan_svg(scan: &SaturationScan) -> String {
    let mut panel = Panel {
        title: format!("clip saturation (eps = {})", scan.eps),
        x_label: "base ratio r".to_string(),
        y_label: "guaranteed clipped".to_string(),
        series: Vec::new(),
    };
    for (level_idx, &level) in scan.levels.iter().enumerate() {
        let start = level_idx * scan.r_grid.len();
        let cells = &scan.cells[start..start + scan.r_grid.len()];
        panel.series.push(Series {
            label: format!("dr = {level}"),
            xs: scan.r_grid.clone(),
            ys: cells.iter().map(|c| f64::from(u8::from(c.clipped))).collect(),
            band: None,
        });
    }
    plot::render_chart(&[panel])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn tiny_cfg(mode: ModePlan) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.mode = mode;
        cfg.steps = 2;
        cfg.lanes = 2;
        cfg.rollout = 32;
        cfg.ppo.minibatch_size = 16;
        cfg.hidden = vec![8];
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn run_single_produces_complete_records() {
        let cfg = tiny_cfg(ModePlan::Bn);
        let art = run_single(&cfg, 11, None).unwrap();
        assert!(art.error.is_none());
        assert_eq!(art.records.len(), 2);
        assert_eq!(art.timings.len(), 2);
        for (i, r) in art.records.iter().enumerate() {
            assert_eq!(r.step, i + 1);
            assert_eq!(r.env_steps, (i + 1) * 32);
            // B = 32/16 = 2 minibatches per epoch, 3 plain epochs.
            assert_eq!(r.standard_updates, 6);
            assert_eq!(r.rectification_updates, 0);
            assert!(r.delta_pi_minus.is_finite() && r.delta_pi_minus >= 0.0);
            assert!(r.delta_pi_plus.is_finite());
            assert!((0.0..=1.0).contains(&r.clip_fraction));
            assert!(r.entropy > 0.0);
            assert!(r.loss_total.is_finite());
        }
        // PatchLoc budget is 20 env steps, so by 64 steps per lane the first
        // episodes are guaranteed to have finished.
        let last = &art.records[1];
        assert!(last.episodes > 0);
        assert!(last.reward_mean.is_finite());
        assert!(last.reward_std.is_finite());
    }

    #[test]
    fn run_single_is_deterministic() {
        let cfg = tiny_cfg(ModePlan::Bn);
        let a = run_single(&cfg, 5, None).unwrap();
        let b = run_single(&cfg, 5, None).unwrap();
        assert_eq!(a.csv(), b.csv());
        let c = run_single(&cfg, 6, None).unwrap();
        assert_ne!(a.csv(), c.csv(), "different seeds should differ");
    }

    #[test]
    fn pinned_eval_mode_has_zero_mismatch() {
        let cfg = tiny_cfg(ModePlan::Eval);
        let art = run_single(&cfg, 3, None).unwrap();
        for r in &art.records {
            assert_eq!(r.delta_pi_minus, 0.0);
            assert_eq!(r.delta_pi_plus, 0.0);
        }
    }

    #[test]
    fn nonorm_mode_has_exactly_zero_ratio_perturbation() {
        let cfg = tiny_cfg(ModePlan::Nonorm);
        let art = run_single(&cfg, 3, None).unwrap();
        for r in &art.records {
            assert_eq!(r.abs_dr_mean, 0.0);
            assert_eq!(r.abs_dr_max, 0.0);
            assert_eq!(r.delta_eps, 0.0);
        }
    }

    #[test]
    fn mdr_mode_splits_update_counts() {
        let cfg = tiny_cfg(ModePlan::BnMdr);
        // B = 2, (alpha1, alpha2) = (2, 1): one round of 4 + 2 updates keeps
        // the 6-update budget of three plain epochs.
        let art = run_single(&cfg, 4, None).unwrap();
        for r in &art.records {
            assert_eq!(r.standard_updates, 4);
            assert_eq!(r.rectification_updates, 2);
        }
    }

    #[test]
    fn training_failure_is_recorded_not_raised() {
        let mut cfg = tiny_cfg(ModePlan::Bn);
        cfg.steps = 6;
        cfg.ppo.learning_rate = 1e300;
        cfg.validate().unwrap();
        let art = run_single(&cfg, 1, None).unwrap();
        let err = art.error.as_ref().expect("a 1e300 learning rate must blow up");
        assert!(err.contains("aborted"), "{err}");
        assert!(art.records.len() < 6);
        assert!(art.csv().contains("# error: "));
    }

    #[test]
    fn run_to_disk_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(ModePlan::Bn);
        cfg.seeds = vec![1, 2];
        cfg.checkpoint_every = 1;
        cfg.out_dir = dir.path().join("out").to_string_lossy().into_owned();
        let out = run_to_disk(&cfg).unwrap();
        assert!(out.failures.is_empty());
        assert_eq!(out.csv_paths.len(), 2);
        for stem in ["bn-seed1", "bn-seed2"] {
            let csv = fs::read_to_string(out.dir.join(format!("{stem}.csv"))).unwrap();
            let table = report::parse_run_csv(&csv).unwrap();
            assert_eq!(table.records.len(), 2);
            assert!(table.error.is_none());
            assert!(out.dir.join(format!("{stem}-timing.csv")).exists());
            assert!(out.dir.join(format!("{stem}-step0001.ckpt.json")).exists());
            assert!(out.dir.join(format!("{stem}-step0002.ckpt.json")).exists());
            let ckpt = out.dir.join(format!("{stem}-final.ckpt.json"));
            ActorCritic::load(&ckpt).unwrap();
        }
        let manifest = fs::read_to_string(out.dir.join(MANIFEST_FILE)).unwrap();
        assert!(manifest.starts_with(&format!("# {MANIFEST_SCHEMA}\n")));
        assert!(manifest.contains(&format!("# build = {}", build_hash())));
        let parsed = ExperimentConfig::parse_str(&manifest).unwrap();
        assert_eq!(parsed, cfg, "manifest must round-trip the resolved config");
    }

    #[test]
    fn manifest_rerun_reproduces_csvs_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(ModePlan::BnMdr);
        cfg.out_dir = dir.path().join("a").to_string_lossy().into_owned();
        let first = run_to_disk(&cfg).unwrap();
        let manifest = fs::read_to_string(first.dir.join(MANIFEST_FILE)).unwrap();

        let mut again = ExperimentConfig::parse_str(&manifest).unwrap();
        again.out_dir = dir.path().join("b").to_string_lossy().into_owned();
        let second = run_to_disk(&again).unwrap();

        let a = fs::read(&first.csv_paths[0]).unwrap();
        let b = fs::read(&second.csv_paths[0]).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn disk_sink_flushes_error_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(ModePlan::Bn);
        cfg.steps = 6;
        cfg.ppo.learning_rate = 1e300;
        cfg.seeds = vec![9];
        cfg.out_dir = dir.path().to_string_lossy().into_owned();
        let out = run_to_disk(&cfg).unwrap();
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].0, 9);
        let csv = fs::read_to_string(&out.csv_paths[0]).unwrap();
        let table = report::parse_run_csv(&csv).unwrap();
        assert!(table.error.is_some());
        assert!(table.records.len() < 6);
        assert!(!dir.path().join("bn-seed9-final.ckpt.json").exists());
    }

    #[test]
    fn evaluate_policy_is_deterministic() {
        let cfg = tiny_cfg(ModePlan::Bn);
        let mut art = run_single(&cfg, 2, None).unwrap();
        let spec = cfg.env.clone();
        let a = evaluate_policy(&mut art.net, &spec, 4, 77).unwrap();
        let b = evaluate_policy(&mut art.net, &spec, 4, 77).unwrap();
        assert!(a.is_finite());
        assert_eq!(a, b);
    }

    #[test]
    fn run_stem_roundtrip() {
        let stem = run_stem(ModePlan::BnMdr, 12);
        assert_eq!(stem, "bn-mdr-seed12");
        assert_eq!(parse_run_stem(&stem), Some(("bn-mdr", 12)));
        assert_eq!(parse_run_stem("garbage"), None);
    }

    fn synthetic_table(offset: f64) -> RunTable {
        let records = (1..=10)
            .map(|k| RunRecord {
                step: k,
                env_steps: k * 512,
                reward_mean: offset + k as f64,
                reward_std: 0.5,
                episodes: 3,
                delta_pi_minus: 0.01 * k as f64,
                delta_pi_plus: 0.02,
                abs_dr_mean: 0.1,
                abs_dr_max: 0.2,
                delta_eps: 0.0,
                clip_fraction: 0.1,
                entropy: 1.0,
                loss_total: -0.1,
                loss_clip: 0.1,
                loss_value: 0.2,
                standard_updates: 6,
                rectification_updates: 0,
            })
            .collect();
        RunTable { records, error: None }
    }

    #[test]
    fn compare_report_groups_by_mode() {
        let inputs = vec![
            NamedTable { stem: "bn-seed1".into(), table: synthetic_table(0.0) },
            NamedTable { stem: "bn-seed2".into(), table: synthetic_table(2.0) },
            NamedTable { stem: "eval-seed1".into(), table: synthetic_table(5.0) },
        ];
        let (svg, summary) = compare_report(&inputs, 5).unwrap();
        assert!(svg.contains(">bn<") && svg.contains(">eval<"));
        assert!(svg.contains("<polygon"), "band for the two bn seeds");
        assert!(summary.contains("bn") && summary.contains("eval"));
        // bn finals: seeds average (8 + 10) / 2 over last 5 steps.
        assert!(summary.contains("9.000000"), "{summary}");
        assert!(compare_report(&[], 5).is_err());
    }

    #[test]
    fn final_window_mean_skips_nans() {
        let mut table = synthetic_table(0.0);
        table.records[9].reward_mean = f64::NAN;
        // Last 3 rows: 8, 9, NaN.
        let m = final_window_mean(&table, 3);
        assert!((m - 8.5).abs() < 1e-12);
    }

    #[test]
    fn linspace_hits_endpoints_exactly() {
        let g = linspace(0.5, 1.5, 101).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[100], 1.5);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(linspace(1.0, 1.0, 1).unwrap(), vec![1.0]);
        assert!(linspace(2.0, 1.0, 5).is_err());
    }

    #[test]
    fn scan_artifacts_have_expected_shape() {
        let grid = linspace(0.5, 1.5, 21).unwrap();
        let levels = [0.0, 0.05, 0.10, 0.15];
        let scan = diagnostics::clip_saturation_scan(&grid, &levels, 0.2).unwrap();
        let csv = scan_csv(&scan);
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "# scan-v1");
        assert_eq!(rows.len(), 2 + 21 * 4, "|grid| x |levels| data rows");
        let svg = scan_svg(&scan);
        assert!(svg.contains("dr = 0.15"));
        assert_eq!(svg.matches("<polyline").count() >= 4, true);
    }
}
