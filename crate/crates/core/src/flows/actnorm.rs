use alloc::format;

use super::Direction;
use crate::error::{config, Result};
use crate::math;
use crate::numcore::{Matrix, ParamId, ParamStore, Tape, Var};

/// Per-coordinate affine map with data-dependent initialization.
///
/// Forward: `x = z·exp(log_scale) + shift`. Inverse: `z = (x − shift)·exp(−log_scale)`.
/// Until initialized it is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ActNorm {
    dim: usize,
    shift: ParamId,
    log_scale: ParamId,
    initialized: bool,
}

impl ActNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        ActNorm {
            dim,
            shift: store.insert(format!("{prefix}.shift"), Matrix::zeros(1, dim), true),
            log_scale: store.insert(format!("{prefix}.log_scale"), Matrix::zeros(1, dim), true),
            initialized: false,
        }
    }

    pub fn shift(&self) -> ParamId {
        self.shift
    }

    pub fn log_scale(&self) -> ParamId {
        self.log_scale
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn set_initialized(&mut self, initialized: bool) {
        self.initialized = initialized;
    }

    /// Sets parameters so that `batch`, pushed in `direction`, comes out with
    /// per-coordinate mean 0 and standard deviation 1.
    pub fn initialize(&mut self, store: &mut ParamStore, batch: &Matrix, direction: Direction) -> Result<()> {
        if batch.cols() != self.dim || batch.rows() < 2 {
            return config("actnorm: initialization batch needs at least two rows of matching width");
        }
        let mean = batch.col_means();
        let mut std = Matrix::zeros(1, self.dim);
        for c in 0..self.dim {
            let m = mean.get(0, c);
            let var = batch.col(c).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / batch.rows() as f64;
            std.set(0, c, math::sqrt(var).max(1e-6));
        }
        match direction {
            Direction::Inverse => {
                store.set(self.shift, mean);
                store.set(self.log_scale, std.map(math::ln));
            }
            Direction::Forward => {
                let ls = std.map(|s| -math::ln(s));
                let shift = mean.zip_map(&ls, |m, l| -m * math::exp(l));
                store.set(self.shift, shift);
                store.set(self.log_scale, ls);
            }
        }
        self.initialized = true;
        Ok(())
    }

    pub fn apply<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: Var<'t>,
        direction: Direction,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let n = z.shape().0;
        let shift = tape.param(store, self.shift);
        let ls = tape.param(store, self.log_scale);
        let ld = ls.sum_rows().broadcast_to(n, 1)?;
        match direction {
            Direction::Forward => Ok((z.mul(ls.exp())?.add(shift)?, ld)),
            Direction::Inverse => Ok((z.sub(shift)?.mul(ls.neg().exp())?, ld.neg())),
        }
    }
}
