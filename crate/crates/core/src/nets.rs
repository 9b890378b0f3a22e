//! Conditioner networks: plain MLPs and masked autoregressive (MADE) networks.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{config, Result};
use crate::math;
use crate::numcore::{Matrix, ParamId, ParamStore, Rng, Stream, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
        }
    }
}

/// PyTorch-style default init: `U(-1/√fan_in, 1/√fan_in)`.
fn init_block(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize) -> Result<Matrix> {
    let bound = 1.0 / math::sqrt(fan_in.max(1) as f64);
    rng.stream(Stream::Init).uniform_matrix(rows, cols, -bound, bound)
}

/// Fully connected network with a hidden activation and identity output.
///
/// Weights are stored `in × out` so a batch `x` (n × in) maps to `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
    activation: Activation,
}

impl Mlp {
    /// `sizes` lists every layer width including input and output.
    /// With `zero_final`, the last affine map starts at zero so the network
    /// initially outputs exactly zero.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        sizes: &[usize],
        activation: Activation,
        zero_final: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return config(format!("{prefix}: MLP needs at least two positive layer sizes"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let last = sizes.len() - 2;
        for (l, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let (w, b) = if zero_final && l == last {
                (Matrix::zeros(fan_in, fan_out), Matrix::zeros(1, fan_out))
            } else {
                (
                    init_block(rng, fan_in, fan_out, fan_in)?,
                    init_block(rng, 1, fan_out, fan_in)?,
                )
            };
            weights.push(store.insert(format!("{prefix}.w{l}"), w, true));
            biases.push(store.insert(format!("{prefix}.b{l}"), b, true));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[ParamId] {
        &self.weights
    }

    pub fn biases(&self) -> &[ParamId] {
        &self.biases
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        let last = self.weights.len() - 1;
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.matmul(tape.param(store, w))?.add(tape.param(store, b))?;
            if l != last {
                h = self.activation.apply(h);
            }
        }
        Ok(h)
    }
}

/// Connectivity masks of a MADE network.
///
/// Every mask is stored `in × out`, matching the weight layout of [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct MadeMasks {
    /// Degree label of every unit, input layer first.
    pub degrees: Vec<Vec<usize>>,
    /// Input→hidden and hidden→hidden masks.
    pub hidden: Vec<Matrix>,
    /// Last hidden layer (or input, without hidden layers) → one output per dimension.
    pub output: Matrix,
}

/// Builds MADE masks with the fixed cyclic degree assignment.
///
/// Inputs carry degrees `1..=D`; hidden unit `k` (1-based) carries
/// `((k-1) mod max(D-1, 1)) + 1`. A hidden unit sees a previous unit when its
/// degree is at least as large; output `i` sees a unit of degree strictly
/// below `i`.
pub fn made_masks(dim: usize, hidden: &[usize]) -> MadeMasks {
    let cycle = dim.saturating_sub(1).max(1);
    let mut degrees: Vec<Vec<usize>> = Vec::with_capacity(hidden.len() + 1);
    degrees.push((1..=dim).collect());
    for &h in hidden {
        degrees.push((1..=h).map(|k| (k - 1) % cycle + 1).collect());
    }
    let mut masks = Vec::with_capacity(hidden.len());
    for pair in degrees.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let mut m = Matrix::zeros(prev.len(), next.len());
        for (j, &dj) in prev.iter().enumerate() {
            for (k, &dk) in next.iter().enumerate() {
                if dk >= dj {
                    m.set(j, k, 1.0);
                }
            }
        }
        masks.push(m);
    }
    let last = degrees.last().unwrap();
    let mut output = Matrix::zeros(last.len(), dim);
    for (k, &dk) in last.iter().enumerate() {
        for i in 1..=dim {
            if i > dk {
                output.set(k, i - 1, 1.0);
            }
        }
    }
    MadeMasks {
        degrees,
        hidden: masks,
        output,
    }
}

/// Masked autoregressive network producing `heads` parameters per dimension.
///
/// Output column `i * heads + h` is head `h` of dimension `i` and depends
/// only on inputs `0..i`.
#[derive(Clone, Debug, PartialEq)]
pub struct MadeNet {
    dim: usize,
    heads: usize,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
    masks: Vec<Matrix>,
    activation: Activation,
}

impl MadeNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        hidden: &[usize],
        heads: usize,
        activation: Activation,
        zero_final: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dim == 0 || heads == 0 || hidden.contains(&0) {
            return config(format!("{prefix}: MADE needs positive dim, heads and hidden sizes"));
        }
        let base = made_masks(dim, hidden);
        let mut masks = base.hidden.clone();
        // every head of dimension i shares that dimension's output mask
        let mut out_mask = Matrix::zeros(base.output.rows(), dim * heads);
        for k in 0..base.output.rows() {
            for i in 0..dim {
                for h in 0..heads {
                    out_mask.set(k, i * heads + h, base.output.get(k, i));
                }
            }
        }
        masks.push(out_mask);

        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(dim);
        sizes.extend_from_slice(hidden);
        sizes.push(dim * heads);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let last = sizes.len() - 2;
        for (l, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let (w, b) = if zero_final && l == last {
                (Matrix::zeros(fan_in, fan_out), Matrix::zeros(1, fan_out))
            } else {
                let w = init_block(rng, fan_in, fan_out, fan_in)?;
                (w.zip_map(&masks[l], |a, m| a * m), init_block(rng, 1, fan_out, fan_in)?)
            };
            weights.push(store.insert(format!("{prefix}.w{l}"), w, true));
            biases.push(store.insert(format!("{prefix}.b{l}"), b, true));
        }
        Ok(MadeNet {
            dim,
            heads,
            weights,
            biases,
            masks,
            activation,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn weights(&self) -> &[ParamId] {
        &self.weights
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let mask = tape.constant(self.masks[l].clone());
            let w = tape.param(store, self.weights[l]).mul(mask)?;
            h = h.matmul(w)?.add(tape.param(store, self.biases[l]))?;
            if l != last {
                h = self.activation.apply(h);
            }
        }
        Ok(h)
    }
}
