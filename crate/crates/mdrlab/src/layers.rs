//! Network layers, including the two mode-dependent ones this lab exists to
//! study: batch normalization and dropout.
//!
//! A layer's `forward` takes the effective [`Mode`] explicitly. BatchNorm
//! additionally supports `pinned_eval`, which forces the Eval path (frozen
//! running statistics, no buffer updates) regardless of the requested mode;
//! that is the "always-eval" ablation where the train/eval policy gap is
//! zero by construction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::tape::{Tape, ValueId};
use crate::tensor::{ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-feature first and second moments observed by a BatchNorm forward.
/// In Train mode these are the batch statistics; in Eval mode they are the
/// running statistics that stood in for them.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

// ── Linear ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    /// He-uniform weight init scaled by `gain`; zero bias.
    pub fn new(store: &mut ParamStore, in_dim: usize, out_dim: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt() * gain;
        let data: Vec<f64> = (0..in_dim * out_dim).map(|_| rng.gen_range(-limit..limit)).collect();
        let w = store.register(Tensor::new(vec![in_dim, out_dim], data).expect("finite init"));
        let b = store.register(Tensor::zeros(vec![out_dim]));
        LinearLayer { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: ValueId) -> Result<ValueId> {
        let rows = tape.shape(x)[0];
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let z = tape.matmul(x, w)?;
        let bb = tape.broadcast_rows(b, rows)?;
        tape.add(z, bb)
    }
}

// ── BatchNorm ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub pinned_eval: bool,
    pub dim: usize,
}

impl BatchNormLayer {
    pub fn new(store: &mut ParamStore, dim: usize, momentum: f64, pinned_eval: bool) -> Self {
        let gamma = store.register(Tensor::new(vec![dim], vec![1.0; dim]).expect("finite init"));
        let beta = store.register(Tensor::zeros(vec![dim]));
        BatchNormLayer {
            gamma,
            beta,
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum,
            eps: 1e-5,
            pinned_eval,
            dim,
        }
    }

    /// Mode actually used by `forward` given the requested mode.
    pub fn effective_mode(&self, requested: Mode) -> Mode {
        if self.pinned_eval {
            Mode::Eval
        } else {
            requested
        }
    }

    /// Normalize `x` (rows are samples). Train mode normalizes by batch
    /// statistics and updates the running buffers exactly once; Eval mode
    /// normalizes by the frozen running statistics and never mutates state.
    ///
    /// Both paths use the identical op sequence (subtract, divide by
    /// sqrt(var + eps), scale, shift), so when the running statistics equal
    /// the batch statistics the two modes produce bitwise-identical output.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        x: ValueId,
        mode: Mode,
    ) -> Result<(ValueId, BatchStats)> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::ShapeMismatch {
                op: "batchnorm",
                detail: format!("expected (m, {}), got {:?}", self.dim, shape),
            });
        }
        let rows = shape[0];
        let (mu, var, stats) = match self.effective_mode(mode) {
            Mode::Train => {
                if rows < 2 {
                    return Err(Error::ShapeMismatch {
                        op: "batchnorm",
                        detail: format!("train mode needs batch size >= 2, got {rows}"),
                    });
                }
                let mu = tape.mean_axis0(x)?;
                let var = tape.var_axis0(x)?;
                let stats = BatchStats {
                    mean: tape.value(mu).to_vec(),
                    var: tape.value(var).to_vec(),
                };
                let m = self.momentum;
                for j in 0..self.dim {
                    self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * stats.mean[j];
                    self.running_var[j] = (1.0 - m) * self.running_var[j] + m * stats.var[j];
                }
                (mu, var, stats)
            }
            Mode::Eval => {
                let mu = tape.constant(vec![self.dim], self.running_mean.clone())?;
                let var = tape.constant(vec![self.dim], self.running_var.clone())?;
                let stats = BatchStats {
                    mean: self.running_mean.clone(),
                    var: self.running_var.clone(),
                };
                (mu, var, stats)
            }
        };
        let mu_b = tape.broadcast_rows(mu, rows)?;
        let centered = tape.sub(x, mu_b)?;
        let var_eps = tape.add_scalar(var, self.eps)?;
        let std = tape.sqrt(var_eps)?;
        let std_b = tape.broadcast_rows(std, rows)?;
        let xhat = tape.div(centered, std_b)?;
        let gamma = tape.param(store, self.gamma);
        let gamma_b = tape.broadcast_rows(gamma, rows)?;
        let scaled = tape.mul(xhat, gamma_b)?;
        let beta = tape.param(store, self.beta);
        let beta_b = tape.broadcast_rows(beta, rows)?;
        let y = tape.add(scaled, beta_b)?;
        Ok((y, stats))
    }

    pub fn buffers(&self) -> (Vec<f64>, Vec<f64>) {
        (self.running_mean.clone(), self.running_var.clone())
    }

    pub fn restore_buffers(&mut self, mean: Vec<f64>, var: Vec<f64>) {
        self.running_mean = mean;
        self.running_var = var;
    }
}

// ── Dropout ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DropoutLayer {
    pub rate: f64,
    rng: ChaCha8Rng,
}

impl DropoutLayer {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(DropoutLayer {
            rate,
            rng: seeding::rng(seed, "dropout", 0),
        })
    }

    /// Inverted dropout: surviving activations are scaled by 1/(1-rate) so
    /// the expected output equals the input. Eval mode (or rate 0) returns
    /// the input node untouched.
    pub fn forward(&mut self, tape: &mut Tape, x: ValueId, mode: Mode) -> Result<ValueId> {
        if mode == Mode::Eval || self.rate == 0.0 {
            return Ok(x);
        }
        let shape = tape.shape(x).to_vec();
        let scale = 1.0 / (1.0 - self.rate);
        let numel: usize = shape.iter().product();
        let mask: Vec<f64> = (0..numel)
            .map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { scale })
            .collect();
        let mask = tape.constant(shape, mask)?;
        tape.mul(x, mask)
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = seeding::rng(seed, "dropout", 0);
    }

    pub fn rng_snapshot(&self) -> ChaCha8Rng {
        self.rng.clone()
    }

    pub fn rng_restore(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }
}

// ── Block ───────────────────────────────────────────────────────────────

/// One stage of a sequential backbone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Block {
    Linear(LinearLayer),
    BatchNorm(BatchNormLayer),
    Dropout(DropoutLayer),
    Tanh,
}

impl Block {
    pub fn forward(&mut self, tape: &mut Tape, store: &ParamStore, x: ValueId, mode: Mode) -> Result<ValueId> {
        match self {
            Block::Linear(l) => l.forward(tape, store, x),
            Block::BatchNorm(bn) => Ok(bn.forward(tape, store, x, mode)?.0),
            Block::Dropout(d) => d.forward(tape, x, mode),
            Block::Tanh => tape.tanh(x),
        }
    }
}
