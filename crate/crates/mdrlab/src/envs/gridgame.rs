//! Grid game: a 1-D platformer strip with gaps. Walk right, jump over
//! gaps, reach the goal cell.
//!
//! Levels are drawn from a finite seeded pool, so a small pool can be
//! memorized — the train/holdout split exists to expose that. Episodes
//! truncate at the horizon (with value bootstrap), fall into a gap on a bad
//! move (terminal, no reward), and pay a small shaping bonus for each newly
//! reached furthest cell.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rollout::{Environment, StepInfo, StepOut};
use crate::seeding;

pub const ACTIONS: usize = 3;
pub const ACT_LEFT: usize = 0;
pub const ACT_RIGHT: usize = 1;
pub const ACT_JUMP: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGameConfig {
    /// Number of cells; the goal is the last cell.
    pub length: usize,
    /// Half-width of the observation window around the agent.
    pub window: usize,
    pub horizon: usize,
    pub gap_rate: f64,
    /// Size of the level pool; 0 means a fresh layout every episode.
    pub levels: usize,
    pub level_seed: u64,
    /// Draw from the disjoint holdout pool instead of the train pool.
    pub holdout: bool,
    /// Reward per newly reached furthest cell.
    pub shaping: f64,
}

impl Default for GridGameConfig {
    fn default() -> Self {
        GridGameConfig {
            length: 48,
            window: 4,
            horizon: 240,
            gap_rate: 0.12,
            levels: 0,
            level_seed: 0,
            holdout: false,
            shaping: 0.005,
        }
    }
}

impl GridGameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length < 8 {
            return Err(Error::Config(format!("gridgame length {} too short", self.length)));
        }
        if self.window == 0 || self.window > self.length {
            return Err(Error::Config(format!("gridgame window {} out of range", self.window)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("gridgame horizon must be positive".to_string()));
        }
        if !(0.0..=0.4).contains(&self.gap_rate) {
            return Err(Error::Config(format!("gridgame gap_rate {} out of [0, 0.4]", self.gap_rate)));
        }
        if self.shaping < 0.0 || self.shaping > 0.02 {
            return Err(Error::Config(format!("gridgame shaping {} out of [0, 0.02]", self.shaping)));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        3 * (2 * self.window + 1) + 2
    }
}

pub struct GridGameEnv {
    cfg: GridGameConfig,
    /// true = gap, false = floor
    gaps: Vec<bool>,
    pos: usize,
    max_pos: usize,
    steps: usize,
    done: bool,
}

impl GridGameEnv {
    pub fn new(cfg: GridGameConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(GridGameEnv {
            gaps: vec![false; cfg.length],
            pos: 0,
            max_pos: 0,
            steps: 0,
            done: true,
            cfg,
        })
    }

    /// Gap cells are isolated: at least two floor cells separate any two
    /// gaps, so a jump (+2) from the cell before a gap always lands safely.
    fn generate_layout(&mut self, layout_seed: u64) {
        let l = self.cfg.length;
        let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);
        self.gaps = vec![false; l];
        for i in 4..l - 2 {
            let recent_gap = self.gaps[i - 1] || self.gaps[i - 2];
            if !recent_gap && rng.gen::<f64>() < self.cfg.gap_rate {
                self.gaps[i] = true;
            }
        }
    }

    fn layout_seed_for_episode(&self, episode_seed: u64) -> u64 {
        if self.cfg.levels == 0 {
            return seeding::derive_seed(episode_seed, "fresh-layout", 0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive_seed(episode_seed, "level-pick", 0));
        let idx = rng.gen_range(0..self.cfg.levels) as u64;
        let label = if self.cfg.holdout { "holdout-level" } else { "train-level" };
        seeding::derive_seed(self.cfg.level_seed, label, idx)
    }

    pub fn layout_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for &g in &self.gaps {
            h ^= g as u64 + 1;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    fn observation(&self) -> Vec<f64> {
        let l = self.cfg.length;
        let w = self.cfg.window as isize;
        let mut out = Vec::with_capacity(self.cfg.obs_dim());
        for d in -w..=w {
            let cell = self.pos as isize + d;
            if cell < 0 || cell >= l as isize {
                out.extend_from_slice(&[0.0, 0.0, 0.0]);
            } else {
                let c = cell as usize;
                out.push(if self.gaps[c] { 0.0 } else { 1.0 });
                out.push(if self.gaps[c] { 1.0 } else { 0.0 });
                out.push(if c == l - 1 { 1.0 } else { 0.0 });
            }
        }
        out.push(self.pos as f64 / l as f64);
        out.push(self.steps as f64 / self.cfg.horizon as f64);
        out
    }

    pub fn position(&self) -> usize {
        self.pos
    }
}

impl Environment for GridGameEnv {
    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    fn action_count(&self) -> usize {
        ACTIONS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.generate_layout(self.layout_seed_for_episode(seed));
        self.pos = 0;
        self.max_pos = 0;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepOut> {
        if action >= ACTIONS {
            return Err(Error::InvalidAction { action, count: ACTIONS });
        }
        if self.done {
            return Err(Error::Env("step on finished gridgame episode (reset required)".to_string()));
        }
        self.steps += 1;
        let l = self.cfg.length;
        let new_pos = match action {
            ACT_LEFT => self.pos.saturating_sub(1),
            ACT_RIGHT => (self.pos + 1).min(l - 1),
            ACT_JUMP => (self.pos + 2).min(l - 1),
            _ => unreachable!(),
        };
        self.pos = new_pos;
        let mut reward = 0.0;
        let mut done = false;
        let mut truncated = false;
        if self.gaps[new_pos] {
            done = true; // fell
        } else {
            if new_pos > self.max_pos {
                reward += self.cfg.shaping * (new_pos - self.max_pos) as f64;
                self.max_pos = new_pos;
            }
            if new_pos == l - 1 {
                reward += 1.0;
                done = true;
            } else if self.steps >= self.cfg.horizon {
                truncated = true;
            }
        }
        self.done = done || truncated;
        Ok(StepOut {
            obs: self.observation(),
            reward,
            done,
            info: StepInfo { truncated },
        })
    }

    /// Scripted baseline: jump iff the next cell is a gap, else walk right.
    fn oracle_action(&self) -> Option<usize> {
        let next = self.pos + 1;
        if next < self.cfg.length && self.gaps[next] {
            Some(ACT_JUMP)
        } else {
            Some(ACT_RIGHT)
        }
    }
}
