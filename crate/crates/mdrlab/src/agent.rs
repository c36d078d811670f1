//! Actor-critic network over a shared backbone, plus the categorical action
//! distribution and checkpointing.
//!
//! The backbone is `Linear -> [BatchNorm] -> Tanh -> [Dropout]` per hidden
//! layer; actor and critic heads read the same features, so BatchNorm
//! statistics are shared between policy and value function. The actor head
//! is initialized 100x smaller than the critic head so the initial policy is
//! near-uniform.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BatchNormLayer, Block, DropoutLayer, LinearLayer, Mode};
use crate::seeding;
use crate::tape::{log_softmax_row, Tape, ValueId};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_FORMAT: &str = "mdrlab-checkpoint-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchConfig {
    pub obs_dim: usize,
    pub action_count: usize,
    pub hidden: Vec<usize>,
    pub batchnorm: bool,
    /// Pin every BatchNorm layer to Eval mode regardless of requested mode.
    pub pinned_eval_bn: bool,
    pub bn_momentum: f64,
    /// Dropout rate after each activation; 0 disables the layers entirely.
    pub dropout: f64,
    pub init_seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOut {
    pub logits: ValueId,
    pub values: ValueId,
}

/// Rollback token for everything a forward pass may mutate besides
/// parameters: BatchNorm buffers and dropout mask streams.
#[derive(Debug, Clone)]
pub struct NetState {
    bn: Vec<(Vec<f64>, Vec<f64>)>,
    dropout: Vec<rand_chacha::ChaCha8Rng>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActorCritic {
    pub arch: ArchConfig,
    store: ParamStore,
    backbone: Vec<Block>,
    actor: LinearLayer,
    critic: LinearLayer,
    mode: Mode,
}

impl ActorCritic {
    pub fn new(arch: ArchConfig) -> Result<Self> {
        if arch.obs_dim == 0 || arch.action_count < 2 || arch.hidden.is_empty() {
            return Err(Error::Config(format!(
                "bad architecture: obs_dim {}, action_count {}, hidden {:?}",
                arch.obs_dim, arch.action_count, arch.hidden
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = seeding::rng(arch.init_seed, "net-init", 0);
        let mut backbone = Vec::new();
        let mut prev = arch.obs_dim;
        for (i, &h) in arch.hidden.iter().enumerate() {
            backbone.push(Block::Linear(LinearLayer::new(&mut store, prev, h, 1.0, &mut rng)));
            if arch.batchnorm {
                backbone.push(Block::BatchNorm(BatchNormLayer::new(
                    &mut store,
                    h,
                    arch.bn_momentum,
                    arch.pinned_eval_bn,
                )));
            }
            backbone.push(Block::Tanh);
            if arch.dropout > 0.0 {
                backbone.push(Block::Dropout(DropoutLayer::new(
                    arch.dropout,
                    seeding::derive_seed(arch.init_seed, "dropout-layer", i as u64),
                )?));
            }
            prev = h;
        }
        let actor = LinearLayer::new(&mut store, prev, arch.action_count, 0.01, &mut rng);
        let critic = LinearLayer::new(&mut store, prev, 1, 1.0, &mut rng);
        Ok(ActorCritic {
            arch,
            store,
            backbone,
            actor,
            critic,
            mode: Mode::Eval,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Effective mode of each mode-dependent layer under `self.mode`.
    pub fn layer_modes(&self) -> Vec<(String, Mode)> {
        let mut out = Vec::new();
        for (i, b) in self.backbone.iter().enumerate() {
            match b {
                Block::BatchNorm(bn) => out.push((format!("batchnorm[{i}]"), bn.effective_mode(self.mode))),
                Block::Dropout(_) => out.push((format!("dropout[{i}]"), self.mode)),
                _ => {}
            }
        }
        out
    }

    /// Full differentiable forward: logits `(m, A)` and values `(m, 1)`.
    pub fn forward(&mut self, tape: &mut Tape, obs: &Tensor, mode: Mode) -> Result<ForwardOut> {
        if obs.shape().len() != 2 || obs.shape()[1] != self.arch.obs_dim {
            return Err(Error::ShapeMismatch {
                op: "actor_critic",
                detail: format!("expected (m, {}), got {:?}", self.arch.obs_dim, obs.shape()),
            });
        }
        let mut x = tape.input(obs);
        for b in &mut self.backbone {
            x = b.forward(tape, &self.store, x, mode)?;
        }
        let logits = self.actor.forward(tape, &self.store, x)?;
        let values = self.critic.forward(tape, &self.store, x)?;
        Ok(ForwardOut { logits, values })
    }

    /// Non-differentiable forward on a throwaway tape: one distribution and
    /// one value per row. Mode-dependent side effects (buffer updates, mask
    /// draws) still happen exactly as in `forward`.
    pub fn policy_values(&mut self, obs: &Tensor, mode: Mode) -> Result<(Vec<CategoricalDistribution>, Vec<f64>)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, obs, mode)?;
        let rows = obs.shape()[0];
        let a = self.arch.action_count;
        let logits = tape.value(out.logits);
        let dists = (0..rows)
            .map(|i| CategoricalDistribution::from_logits(&logits[i * a..(i + 1) * a]))
            .collect::<Result<Vec<_>>>()?;
        let values = tape.value(out.values).to_vec();
        Ok((dists, values))
    }

    pub fn state_snapshot(&self) -> NetState {
        let mut bn = Vec::new();
        let mut dropout = Vec::new();
        for b in &self.backbone {
            match b {
                Block::BatchNorm(l) => bn.push(l.buffers()),
                Block::Dropout(l) => dropout.push(l.rng_snapshot()),
                _ => {}
            }
        }
        NetState { bn, dropout }
    }

    pub fn state_restore(&mut self, state: &NetState) {
        let mut bi = 0;
        let mut di = 0;
        for b in &mut self.backbone {
            match b {
                Block::BatchNorm(l) => {
                    l.restore_buffers(state.bn[bi].0.clone(), state.bn[bi].1.clone());
                    bi += 1;
                }
                Block::Dropout(l) => {
                    l.rng_restore(state.dropout[di].clone());
                    di += 1;
                }
                _ => {}
            }
        }
    }

    pub fn bn_buffers(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.backbone
            .iter()
            .filter_map(|b| match b {
                Block::BatchNorm(l) => Some(l.buffers()),
                _ => None,
            })
            .collect()
    }

    // ── Checkpointing ───────────────────────────────────────────────────

    pub fn to_checkpoint_string(&self) -> Result<String> {
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.to_string(),
            net: self.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_string()?)?;
        Ok(())
    }

    pub fn from_checkpoint_str(s: &str) -> Result<Self> {
        let doc: CheckpointDoc =
            serde_json::from_str(s).map_err(|e| Error::Checkpoint(format!("parse failure: {e}")))?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "format {:?} not supported (expected {CHECKPOINT_FORMAT:?})",
                doc.format
            )));
        }
        doc.net.validate()?;
        Ok(doc.net)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_checkpoint_str(&text)
    }

    /// Structural and numerical sanity checks on a deserialized network.
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Checkpoint(msg));
        for id in self.store.ids() {
            if let Some(i) = self.store.get(id).data().iter().position(|v| !v.is_finite()) {
                return bad(format!("parameter {} has non-finite element {i}", id.0));
            }
        }
        let n = self.store.len();
        let mut prev = self.arch.obs_dim;
        for b in &self.backbone {
            match b {
                Block::Linear(l) => {
                    if l.w.index() >= n || l.b.index() >= n {
                        return bad("linear layer references missing parameter".to_string());
                    }
                    if self.store.get(l.w).shape() != [l.in_dim, l.out_dim] || l.in_dim != prev {
                        return bad(format!(
                            "linear layer shape mismatch: {:?} vs ({}, {})",
                            self.store.get(l.w).shape(),
                            l.in_dim,
                            l.out_dim
                        ));
                    }
                    prev = l.out_dim;
                }
                Block::BatchNorm(l) => {
                    if l.gamma.index() >= n || l.beta.index() >= n {
                        return bad("batchnorm layer references missing parameter".to_string());
                    }
                    if l.dim != prev || l.running_mean.len() != l.dim || l.running_var.len() != l.dim {
                        return bad(format!("batchnorm buffer length {} vs dim {}", l.running_mean.len(), l.dim));
                    }
                    if l.running_var.iter().any(|&v| !v.is_finite() || v < 0.0)
                        || l.running_mean.iter().any(|v| !v.is_finite())
                    {
                        return bad("batchnorm buffers must be finite with nonnegative variance".to_string());
                    }
                    if !(0.0..=1.0).contains(&l.momentum) {
                        return bad(format!("batchnorm momentum {} out of range", l.momentum));
                    }
                }
                Block::Dropout(l) => {
                    if !(0.0..1.0).contains(&l.rate) {
                        return bad(format!("dropout rate {} out of range", l.rate));
                    }
                }
                Block::Tanh => {}
            }
        }
        for head in [&self.actor, &self.critic] {
            if head.w.index() >= n || head.b.index() >= n || head.in_dim != prev {
                return bad("head layer inconsistent with backbone output".to_string());
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    net: ActorCritic,
}

// ── Categorical distribution ────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDistribution {
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl CategoricalDistribution {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Domain {
                op: "categorical",
                detail: "empty logits".to_string(),
            });
        }
        if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("categorical logits (element {i})"),
            });
        }
        Ok(CategoricalDistribution {
            logits: logits.to_vec(),
            log_probs: log_softmax_row(logits),
        })
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|lp| lp.exp()).collect()
    }

    pub fn log_prob(&self, action: usize) -> Result<f64> {
        self.log_probs.get(action).copied().ok_or(Error::InvalidAction {
            action,
            count: self.logits.len(),
        })
    }

    /// Inverse-CDF sample; consumes exactly one uniform draw.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, lp) in self.log_probs.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                return i;
            }
        }
        self.log_probs.len() - 1
    }

    /// Shannon entropy in nats; zero-probability actions contribute zero.
    pub fn entropy(&self) -> f64 {
        let mut h = 0.0;
        for lp in &self.log_probs {
            let p = lp.exp();
            if p > 0.0 {
                h -= p * lp;
            }
        }
        h
    }
}
