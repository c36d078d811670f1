//! Patch localization: find a target window in a procedurally generated
//! image by panning and zooming a viewport, then confirm.
//!
//! Observations concatenate three downsampled views (target patch, full
//! image, current viewport), so what the agent *sees* depends on where it
//! looks: policies that learn to zoom onto the salient blob shift the
//! observation distribution they induce, which is exactly the drift this
//! lab studies. Confirming (or exhausting the budget) scores the IoU of the
//! viewport against the target window; every step costs `step_cost`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rollout::{Environment, StepInfo, StepOut};
use crate::seeding;

pub const ACTIONS: usize = 7;
pub const ACT_UP: usize = 0;
pub const ACT_DOWN: usize = 1;
pub const ACT_LEFT: usize = 2;
pub const ACT_RIGHT: usize = 3;
pub const ACT_ZOOM_IN: usize = 4;
pub const ACT_ZOOM_OUT: usize = 5;
pub const ACT_CONFIRM: usize = 6;

const CHANNELS: usize = 3;
const MAX_ZOOM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchLocConfig {
    /// Side length of the square world image.
    pub image: usize,
    /// Side length of each downsampled view.
    pub view: usize,
    /// Steps before the episode auto-confirms.
    pub budget: usize,
    pub step_cost: f64,
}

impl Default for PatchLocConfig {
    fn default() -> Self {
        PatchLocConfig { image: 64, view: 16, budget: 20, step_cost: 0.01 }
    }
}

impl PatchLocConfig {
    pub fn validate(&self) -> Result<()> {
        let h = self.image;
        if h < 16 || h % 16 != 0 {
            return Err(Error::Config(format!("patchloc image side {h} must be a positive multiple of 16")));
        }
        for z in 0..=MAX_ZOOM {
            let s = h >> z;
            if s % self.view != 0 {
                return Err(Error::Config(format!(
                    "view {} must divide every window size (zoom {z} window is {s})",
                    self.view
                )));
            }
        }
        if self.budget == 0 {
            return Err(Error::Config("patchloc budget must be positive".to_string()));
        }
        if !(0.0..=0.5).contains(&self.step_cost) {
            return Err(Error::Config(format!("patchloc step_cost {} out of [0, 0.5]", self.step_cost)));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        3 * self.view * self.view * CHANNELS
    }
}

pub struct PatchLocEnv {
    cfg: PatchLocConfig,
    world: Vec<f64>,
    cx: usize,
    cy: usize,
    zoom: usize,
    steps: usize,
    target_x: usize,
    target_y: usize,
    target_zoom: usize,
    done: bool,
}

impl PatchLocEnv {
    pub fn new(cfg: PatchLocConfig) -> Result<Self> {
        cfg.validate()?;
        let mut env = PatchLocEnv {
            cfg,
            world: vec![0.0; cfg.image * cfg.image * CHANNELS],
            cx: cfg.image / 2,
            cy: cfg.image / 2,
            zoom: 0,
            steps: 0,
            target_x: cfg.image / 2,
            target_y: cfg.image / 2,
            target_zoom: 1,
            done: true,
        };
        env.generate(0);
        Ok(env)
    }

    fn window_size(&self, zoom: usize) -> usize {
        self.cfg.image >> zoom
    }

    fn stride(&self, zoom: usize) -> usize {
        self.window_size(zoom) / 4
    }

    fn center_bounds(&self, zoom: usize) -> (usize, usize) {
        let half = self.window_size(zoom) / 2;
        (half, self.cfg.image - half)
    }

    fn clamp_center(&self, c: usize, zoom: usize) -> usize {
        let (lo, hi) = self.center_bounds(zoom);
        c.clamp(lo, hi)
    }

    /// Build the world and pick a target window whose center lies on the
    /// movement lattice of its zoom level (so a perfect IoU is reachable).
    fn generate(&mut self, seed: u64) {
        let h = self.cfg.image;
        let hf = h as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive_seed(seed, "patchloc-world", 0));
        // smooth per-channel gradient base
        let grads: Vec<(f64, f64, f64)> = (0..CHANNELS)
            .map(|_| (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(0.2..0.5)))
            .collect();
        for y in 0..h {
            for x in 0..h {
                for c in 0..CHANNELS {
                    let (gx, gy, off) = grads[c];
                    self.world[(y * h + x) * CHANNELS + c] = off + gx * x as f64 / hf + gy * y as f64 / hf;
                }
            }
        }
        // distractor blobs
        for _ in 0..3 {
            let bx = rng.gen_range(0.0..hf);
            let by = rng.gen_range(0.0..hf);
            let sigma: f64 = rng.gen_range(hf / 20.0..hf / 8.0);
            let amps: Vec<f64> = (0..CHANNELS).map(|_| rng.gen_range(0.05..0.35)).collect();
            self.splat(bx, by, sigma, &amps);
        }
        // salient blob: bright in all channels
        let blob_x = rng.gen_range(0.15 * hf..0.85 * hf);
        let blob_y = rng.gen_range(0.15 * hf..0.85 * hf);
        let sigma = rng.gen_range(hf / 14.0..hf / 10.0);
        self.splat(blob_x, blob_y, sigma, &[0.55, 0.5, 0.45]);
        // pixel noise, then clamp into [0, 1]
        for v in &mut self.world {
            *v = (*v + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0);
        }
        // target centered on the salient blob, snapped to its zoom lattice
        self.target_zoom = if rng.gen_bool(0.5) { 1 } else { 2 };
        let stride = self.stride(self.target_zoom) as f64;
        let start = (h / 2) as f64;
        let tz = self.target_zoom;
        let snap = |env: &Self, c: f64| -> usize {
            let snapped = start + ((c - start) / stride).round() * stride;
            env.clamp_center(snapped.max(0.0) as usize, tz)
        };
        self.target_x = snap(self, blob_x);
        self.target_y = snap(self, blob_y);
        self.cx = h / 2;
        self.cy = h / 2;
        self.zoom = 0;
        self.steps = 0;
        self.done = false;
    }

    fn splat(&mut self, bx: f64, by: f64, sigma: f64, amps: &[f64]) {
        let h = self.cfg.image;
        for y in 0..h {
            for x in 0..h {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                let g = (-d2 / (2.0 * sigma * sigma)).exp();
                for (c, amp) in amps.iter().enumerate() {
                    self.world[(y * h + x) * CHANNELS + c] += amp * g;
                }
            }
        }
    }

    /// Block-mean downsample of the window at (cx, cy, size) to view^2.
    fn render_view(&self, cx: usize, cy: usize, size: usize, out: &mut Vec<f64>) {
        let h = self.cfg.image;
        let v = self.cfg.view;
        let block = size / v;
        let x0 = cx - size / 2;
        let y0 = cy - size / 2;
        let inv = 1.0 / (block * block) as f64;
        for vy in 0..v {
            for vx in 0..v {
                for c in 0..CHANNELS {
                    let mut acc = 0.0;
                    for dy in 0..block {
                        for dx in 0..block {
                            let y = y0 + vy * block + dy;
                            let x = x0 + vx * block + dx;
                            acc += self.world[(y * h + x) * CHANNELS + c];
                        }
                    }
                    out.push(acc * inv);
                }
            }
        }
    }

    fn observation(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cfg.obs_dim());
        let target_size = self.window_size(self.target_zoom);
        self.render_view(self.target_x, self.target_y, target_size, &mut out);
        let h = self.cfg.image;
        self.render_view(h / 2, h / 2, h, &mut out);
        self.render_view(self.cx, self.cy, self.window_size(self.zoom), &mut out);
        out
    }

    pub fn iou(&self) -> f64 {
        let a = self.window_size(self.zoom);
        let b = self.window_size(self.target_zoom);
        rect_iou(
            self.cx as f64,
            self.cy as f64,
            a as f64,
            self.target_x as f64,
            self.target_y as f64,
            b as f64,
        )
    }

    pub fn state(&self) -> (usize, usize, usize) {
        (self.cx, self.cy, self.zoom)
    }

    pub fn target(&self) -> (usize, usize, usize) {
        (self.target_x, self.target_y, self.target_zoom)
    }
}

/// IoU of two axis-aligned squares given by center and side length.
pub fn rect_iou(ax: f64, ay: f64, asz: f64, bx: f64, by: f64, bsz: f64) -> f64 {
    let ix = (ax + asz / 2.0).min(bx + bsz / 2.0) - (ax - asz / 2.0).max(bx - bsz / 2.0);
    let iy = (ay + asz / 2.0).min(by + bsz / 2.0) - (ay - asz / 2.0).max(by - bsz / 2.0);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = asz * asz + bsz * bsz - inter;
    inter / union
}

impl Environment for PatchLocEnv {
    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    fn action_count(&self) -> usize {
        ACTIONS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.generate(seed);
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepOut> {
        if action >= ACTIONS {
            return Err(Error::InvalidAction { action, count: ACTIONS });
        }
        if self.done {
            return Err(Error::Env("step on finished patchloc episode (reset required)".to_string()));
        }
        self.steps += 1;
        let stride = self.stride(self.zoom);
        let mut reward = -self.cfg.step_cost;
        match action {
            ACT_UP => self.cy = self.clamp_center(self.cy.saturating_sub(stride), self.zoom),
            ACT_DOWN => self.cy = self.clamp_center(self.cy + stride, self.zoom),
            ACT_LEFT => self.cx = self.clamp_center(self.cx.saturating_sub(stride), self.zoom),
            ACT_RIGHT => self.cx = self.clamp_center(self.cx + stride, self.zoom),
            ACT_ZOOM_IN => {
                if self.zoom < MAX_ZOOM {
                    self.zoom += 1;
                }
            }
            ACT_ZOOM_OUT => {
                if self.zoom > 0 {
                    self.zoom -= 1;
                    self.cx = self.clamp_center(self.cx, self.zoom);
                    self.cy = self.clamp_center(self.cy, self.zoom);
                }
            }
            ACT_CONFIRM => {}
            _ => unreachable!(),
        }
        let confirm = action == ACT_CONFIRM || self.steps >= self.cfg.budget;
        if confirm {
            reward += self.iou();
            self.done = true;
        }
        Ok(StepOut {
            obs: self.observation(),
            reward,
            done: confirm,
            info: StepInfo { truncated: false },
        })
    }

    /// Scripted near-optimal play: zoom to the target level, walk the
    /// lattice to the target center, confirm.
    fn oracle_action(&self) -> Option<usize> {
        let a = if self.zoom < self.target_zoom {
            ACT_ZOOM_IN
        } else if self.zoom > self.target_zoom {
            ACT_ZOOM_OUT
        } else if self.cx < self.target_x {
            ACT_RIGHT
        } else if self.cx > self.target_x {
            ACT_LEFT
        } else if self.cy < self.target_y {
            ACT_DOWN
        } else if self.cy > self.target_y {
            ACT_UP
        } else {
            ACT_CONFIRM
        };
        Some(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> PatchLocEnv {
        PatchLocEnv::new(PatchLocConfig::default()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(PatchLocConfig { image: 60, ..Default::default() }.validate().is_err());
        assert!(PatchLocConfig { view: 13, ..Default::default() }.validate().is_err());
        assert!(PatchLocConfig { budget: 0, ..Default::default() }.validate().is_err());
        assert!(PatchLocConfig::default().validate().is_ok());
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let mut a = env();
        let mut b = env();
        assert_eq!(a.reset(42), b.reset(42));
        assert_eq!(a.target(), b.target());
        assert_ne!(a.reset(42), a.reset(43), "different seeds should differ");
    }

    #[test]
    fn observations_are_bounded_and_sized() {
        let mut e = env();
        let obs = e.reset(7);
        assert_eq!(obs.len(), 2304);
        assert!(obs.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let out = e.step(ACT_RIGHT).unwrap();
        assert_eq!(out.obs.len(), 2304);
        assert!((out.reward + 0.01).abs() < 1e-15, "plain move costs exactly step_cost");
    }

    #[test]
    fn confirm_scores_iou_and_terminates() {
        let mut e = env();
        e.reset(3);
        let out = e.step(ACT_CONFIRM).unwrap();
        assert!(out.done);
        // full-image viewport always contains the target window
        let tz = e.target().2;
        let want = if tz == 1 { 0.25 } else { 0.0625 };
        assert!((out.reward - (want - 0.01)).abs() < 1e-12, "reward {} vs {}", out.reward, want - 0.01);
        assert!(e.step(ACT_CONFIRM).is_err(), "stepping a finished episode is an error");
    }

    #[test]
    fn budget_exhaustion_autoconfirms() {
        let mut e = env();
        e.reset(5);
        for k in 1..20 {
            let out = e.step(if k % 2 == 0 { ACT_LEFT } else { ACT_RIGHT }).unwrap();
            assert!(!out.done, "step {k} should not end the episode");
        }
        let out = e.step(ACT_RIGHT).unwrap();
        assert!(out.done, "budget step must terminate");
        assert!(!out.info.truncated, "budget end is a true terminal here");
        assert!(out.reward > -0.011, "final reward includes the IoU, got {}", out.reward);
    }

    #[test]
    fn zoom_and_moves_stay_in_bounds() {
        let mut e = env();
        e.reset(1);
        for _ in 0..3 {
            e.step(ACT_ZOOM_IN).unwrap();
        }
        assert_eq!(e.state().2, 2, "zoom saturates at 2");
        for _ in 0..12 {
            e.reset(1);
            break;
        }
        e.reset(1);
        for _ in 0..10 {
            e.step(ACT_LEFT).unwrap();
        }
        let (cx, _, zoom) = e.state();
        assert_eq!(cx, 32, "zoom-0 window cannot pan");
        assert_eq!(zoom, 0);
    }

    #[test]
    fn iou_hand_values() {
        assert!((rect_iou(32.0, 32.0, 64.0, 32.0, 32.0, 32.0) - 0.25).abs() < 1e-15);
        assert!((rect_iou(16.0, 16.0, 32.0, 16.0, 16.0, 32.0) - 1.0).abs() < 1e-15);
        assert_eq!(rect_iou(8.0, 8.0, 16.0, 40.0, 40.0, 16.0), 0.0);
        // offset by half a window: inter 16*32, union 2*1024-512
        let got = rect_iou(32.0, 32.0, 32.0, 48.0, 32.0, 32.0);
        assert!((got - 512.0 / 1536.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_achieves_perfect_iou_within_budget() {
        let mut e = env();
        for seed in 0..25u64 {
            let mut _obs = e.reset(seed);
            let mut total = 0.0;
            let mut steps = 0;
            loop {
                let a = e.oracle_action().unwrap();
                let out = e.step(a).unwrap();
                total += out.reward;
                steps += 1;
                if out.done {
                    break;
                }
                assert!(steps <= 20, "oracle exceeded budget on seed {seed}");
            }
            assert!(
                total > 1.0 - 0.01 * 16.0,
                "seed {seed}: oracle total {total} (steps {steps})"
            );
            assert!((e.iou() - 1.0).abs() < 1e-12, "seed {seed}: oracle iou {}", e.iou());
        }
    }

    #[test]
    fn target_lattice_is_reachable() {
        let mut e = env();
        for seed in 0..50u64 {
            e.reset(seed);
            let (tx, ty, tz) = e.target();
            let stride = e.stride(tz);
            let start = 32i64;
            assert_eq!((tx as i64 - start).rem_euclid(stride as i64), 0, "seed {seed} tx {tx}");
            assert_eq!((ty as i64 - start).rem_euclid(stride as i64), 0, "seed {seed} ty {ty}");
            let (lo, hi) = e.center_bounds(tz);
            assert!((lo..=hi).contains(&tx) && (lo..=hi).contains(&ty));
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn rewards_and_termination_bounds(seed in 0u64..10_000, actions in proptest::collection::vec(0usize..7, 25)) {
                let mut e = env();
                e.reset(seed);
                let mut steps = 0;
                for &a in &actions {
                    let out = e.step(a).unwrap();
                    steps += 1;
                    prop_assert!(out.reward >= -0.01 - 1e-12 && out.reward <= 1.0);
                    prop_assert!(out.obs.iter().all(|v| (0.0..=1.0).contains(v)));
                    if out.done {
                        break;
                    }
                }
                prop_assert!(steps <= 20, "episodes cannot outlive the budget");
            }
        }
    }
}
