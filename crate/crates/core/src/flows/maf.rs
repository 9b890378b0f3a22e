use alloc::vec::Vec;

use super::coupling::DEFAULT_SCALE_BOUND;
use super::Direction;
use crate::error::Result;
use crate::nets::{Activation, MadeNet};
use crate::numcore::{Matrix, ParamStore, Rng, Tape, Var};

/// Masked affine autoregressive layer.
///
/// Inverse (data → base) is one parallel pass:
/// `u_i = (x_i − t_i(x_<i))·exp(−s_i(x_<i))`, log-det `−Σ s_i`.
/// Forward needs `D` sequential passes.
#[derive(Clone, Debug, PartialEq)]
pub struct Maf {
    dim: usize,
    net: MadeNet,
    scale_bound: f64,
}

impl Maf {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let net = MadeNet::new(
            store,
            &alloc::format!("{prefix}.net"),
            dim,
            hidden,
            2,
            Activation::Tanh,
            true,
            rng,
        )?;
        Ok(Maf {
            dim,
            net,
            scale_bound: DEFAULT_SCALE_BOUND,
        })
    }

    pub fn net(&self) -> &MadeNet {
        &self.net
    }

    fn heads<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let raw = self.net.forward(tape, store, x)?;
        let s_idx: Vec<usize> = (0..self.dim).map(|i| 2 * i).collect();
        let t_idx: Vec<usize> = (0..self.dim).map(|i| 2 * i + 1).collect();
        let b = self.scale_bound;
        let s = raw.select_cols(&s_idx)?.scale(1.0 / b).tanh().scale(b);
        Ok((s, raw.select_cols(&t_idx)?))
    }

    pub fn apply<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: Var<'t>,
        direction: Direction,
    ) -> Result<(Var<'t>, Var<'t>)> {
        match direction {
            Direction::Inverse => {
                let (s, t) = self.heads(tape, store, z)?;
                let u = z.sub(t)?.mul(s.neg().exp())?;
                Ok((u, s.sum_rows().neg()))
            }
            Direction::Forward => {
                let n = z.shape().0;
                let zero = tape.constant(Matrix::zeros(n, 1));
                let mut cols: Vec<Var<'t>> = (0..self.dim).map(|_| zero).collect();
                let mut s_cols = Vec::with_capacity(self.dim);
                for i in 0..self.dim {
                    let x = tape.concat_cols(&cols)?;
                    let (s, t) = self.heads(tape, store, x)?;
                    let si = s.col(i)?;
                    cols[i] = z.col(i)?.mul(si.exp())?.add(t.col(i)?)?;
                    s_cols.push(si);
                }
                let x = tape.concat_cols(&cols)?;
                let ld = tape.concat_cols(&s_cols)?.sum_rows();
                Ok((x, ld))
            }
        }
    }
}
