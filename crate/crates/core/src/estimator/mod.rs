//! Single-layer LSTM state-of-charge estimator.
//!
//! A window of `N` normalized `[V, I, T]` frames is run through the cell
//! from zero hidden and cell state; the final hidden state feeds a sigmoid
//! head whose output is the SOC estimate.

mod bptt;
mod gradcheck;
mod io;
mod train;

pub use bptt::{backward, loss_and_gradient, ForwardCache};
pub use gradcheck::{gradient_check, gradient_check_with};
pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use train::{train, Optimizer, TrainConfig, TrainError, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{Frame, InputWindow, NormalizationBounds};

pub const INPUT_SIZE: usize = 3;
pub const DEFAULT_HIDDEN: usize = 16;
pub const DEFAULT_WINDOW: usize = 300;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("window has {got} rows, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("hidden size and window length must be at least 1")]
    ZeroSize,
    #[error("non-finite parameter in {0}")]
    NonFiniteWeight(&'static str),
    #[error("not a model file: {0}")]
    BadFormat(String),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Bounds(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Gate order used throughout: input, forget, candidate, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Candidate = 2,
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Candidate, Gate::Output];

    pub fn suffix(self) -> &'static str {
        ["i", "f", "g", "o"][self as usize]
    }
}

/// All trainable parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub hidden: usize,
    /// Input weights per gate, `H x 3` row-major.
    pub w: [Vec<f64>; 4],
    /// Recurrent weights per gate, `H x H` row-major.
    pub u: [Vec<f64>; 4],
    pub b: [Vec<f64>; 4],
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl LstmParams {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden,
            w: std::array::from_fn(|_| vec![0.0; hidden * INPUT_SIZE]),
            u: std::array::from_fn(|_| vec![0.0; hidden * hidden]),
            b: std::array::from_fn(|_| vec![0.0; hidden]),
            w_out: vec![0.0; hidden],
            b_out: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        4 * self.hidden * (INPUT_SIZE + self.hidden + 1) + self.hidden + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        (0..4)
            .flat_map(move |g| [&self.w[g][..], &self.u[g][..], &self.b[g][..]])
            .chain([&self.w_out[..], std::slice::from_ref(&self.b_out)])
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        let Self { w, u, b, w_out, b_out, .. } = self;
        w.iter_mut()
            .zip(u.iter_mut())
            .zip(b.iter_mut())
            .flat_map(|((w, u), b)| [&mut w[..], &mut u[..], &mut b[..]])
            .chain([&mut w_out[..], std::slice::from_mut(b_out)])
    }

    /// Flattened in gate order (`W, U, b` per gate), then the head.
    pub fn to_vec(&self) -> Vec<f64> {
        self.slices().flatten().copied().collect()
    }

    pub fn copy_from_slice(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat parameter length");
        let mut rest = flat;
        for s in self.slices_mut() {
            let (head, tail) = rest.split_at(s.len());
            s.copy_from_slice(head);
            rest = tail;
        }
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.slices_mut().flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.slices().flatten()
    }

    /// `self += other * scale`, element-wise.
    pub fn add_scaled(&mut self, other: &LstmParams, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub window: usize,
    pub params: LstmParams,
    pub bounds: NormalizationBounds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Exclusive end index of the source window in the trace.
    pub end_step: usize,
    /// Head output before clamping.
    pub soc_raw: f64,
    pub soc_est: f64,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LstmModel {
    pub fn zeros(hidden: usize, window: usize, bounds: NormalizationBounds) -> Result<Self, ModelError> {
        if hidden == 0 || window == 0 {
            return Err(ModelError::ZeroSize);
        }
        bounds.validate()?;
        Ok(Self {
            window,
            params: LstmParams::zeros(hidden),
            bounds,
        })
    }

    /// Every parameter drawn from `U(-1/sqrt(H), 1/sqrt(H))`.
    pub fn random(hidden: usize, window: usize, bounds: NormalizationBounds, seed: u64) -> Result<Self, ModelError> {
        let scale = 1.0 / (hidden as f64).sqrt();
        Self::random_scaled(hidden, window, bounds, seed, scale)
    }

    pub fn random_scaled(
        hidden: usize,
        window: usize,
        bounds: NormalizationBounds,
        seed: u64,
        scale: f64,
    ) -> Result<Self, ModelError> {
        let mut model = Self::zeros(hidden, window, bounds)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in model.params.iter_mut() {
            *p = rng.gen_range(-scale..=scale);
        }
        Ok(model)
    }

    pub fn hidden(&self) -> usize {
        self.params.hidden
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden() == 0 || self.window == 0 {
            return Err(ModelError::ZeroSize);
        }
        if !self.params.all_finite() {
            return Err(ModelError::NonFiniteWeight("parameters"));
        }
        self.bounds.validate()?;
        Ok(())
    }

    /// Runs the recurrence over `frames` and returns the head output. Any
    /// number of rows is accepted; inputs need not be finite or in `[0, 1]`.
    pub fn run(&self, frames: &[Frame]) -> f64 {
        let h_len = self.hidden();
        let p = &self.params;
        let mut h = vec![0.0; h_len];
        let mut c = vec![0.0; h_len];
        let mut z = [vec![0.0; h_len], vec![0.0; h_len], vec![0.0; h_len], vec![0.0; h_len]];
        for x in frames {
            gate_preactivations(p, x, &h, &mut z);
            for j in 0..h_len {
                let i = sigmoid(z[0][j]);
                let f = sigmoid(z[1][j]);
                let g = z[2][j].tanh();
                let o = sigmoid(z[3][j]);
                c[j] = f * c[j] + i * g;
                h[j] = o * c[j].tanh();
            }
        }
        head(p, &h)
    }

    pub fn forward(&self, window: &InputWindow) -> Result<Prediction, ModelError> {
        if window.frames.len() != self.window {
            return Err(ModelError::DimensionMismatch {
                expected: self.window,
                got: window.frames.len(),
            });
        }
        let soc_raw = self.run(&window.frames);
        Ok(Prediction {
            end_step: window.end_step,
            soc_raw,
            soc_est: soc_raw.clamp(0.0, 1.0),
        })
    }

    /// Predictions for a window sequence, in order.
    pub fn predict_all(&self, windows: &[InputWindow]) -> Result<Vec<Prediction>, ModelError> {
        windows.iter().map(|w| self.forward(w)).collect()
    }
}

/// `z[g] = W_g x + U_g h + b_g` for all four gates.
pub(crate) fn gate_preactivations(p: &LstmParams, x: &Frame, h: &[f64], z: &mut [Vec<f64>; 4]) {
    let n = p.hidden;
    for g in 0..4 {
        let (w, u, b) = (&p.w[g], &p.u[g], &p.b[g]);
        for j in 0..n {
            let wr = &w[j * INPUT_SIZE..(j + 1) * INPUT_SIZE];
            let mut acc = b[j] + wr[0] * x[0] + wr[1] * x[1] + wr[2] * x[2];
            let ur = &u[j * n..(j + 1) * n];
            for k in 0..n {
                acc += ur[k] * h[k];
            }
            z[g][j] = acc;
        }
    }
}

pub(crate) fn head(p: &LstmParams, h: &[f64]) -> f64 {
    let mut acc = p.b_out;
    for (w, v) in p.w_out.iter().zip(h) {
        acc += w * v;
    }
    sigmoid(acc)
}
