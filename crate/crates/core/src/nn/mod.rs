//! Minimal dense neural-network engine in f64 with hand-written backward
//! passes.
//!
//! Layers are free functions over flat slices (`ops`), the recurrent cell
//! carries its own state (`gru`), and `model` wires them into the three
//! sequence classifiers. Every backward pass is validated against central
//! finite differences; `gradcheck` holds the comparator those tests share.

pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
pub mod model;
pub mod ops;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("bad architecture: {0}")]
    BadConfig(String),
    #[error("input shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("validation set is empty")]
    EmptyVal,
    #[error("training labels are single-class")]
    SingleClass,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

/// One learnable buffer: values, accumulated gradient, and the optimizer's
/// first/second moment estimates.
#[derive(Debug, Clone)]
pub struct Param {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Param {
    pub fn new(w: Vec<f64>) -> Self {
        let n = w.len();
        Param {
            w,
            g: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn zeros(n: usize) -> Self {
        Param::new(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.g.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale_grad(&mut self, s: f64) {
        self.g.iter_mut().for_each(|g| *g *= s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer; `step` consumes the accumulated gradients of
/// every parameter it is given and advances the shared timestep.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0 }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        self.t += 1;
        let c = &self.cfg;
        let bias1 = 1.0 - c.beta1.powi(self.t as i32);
        let bias2 = 1.0 - c.beta2.powi(self.t as i32);
        for p in params {
            for i in 0..p.w.len() {
                let g = p.g[i];
                p.m[i] = c.beta1 * p.m[i] + (1.0 - c.beta1) * g;
                p.v[i] = c.beta2 * p.v[i] + (1.0 - c.beta2) * g * g;
                let mhat = p.m[i] / bias1;
                let vhat = p.v[i] / bias2;
                p.w[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
            }
        }
    }
}

/// Uniform init scaled by fan-in, deterministic in the caller's stream.
pub fn init_uniform(n: usize, fan_in: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}
