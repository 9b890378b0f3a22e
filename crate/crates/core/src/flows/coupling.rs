use alloc::vec::Vec;

use super::{assemble, check_mask, encode_conditioning, encoded_width, zero_logdet, Direction};
use crate::dists::CoordKind;
use crate::error::{config, Result};
use crate::nets::{Activation, Mlp};
use crate::numcore::{ParamStore, Rng, Tape, Var};

/// Bound on the log-scale head of affine layers.
pub const DEFAULT_SCALE_BOUND: f64 = 3.0;

/// Real NVP affine coupling.
///
/// Coordinates with `mask[i] == true` pass through and condition an MLP that
/// outputs a log-scale `s` and shift `t` for the others:
/// forward `x_u = z_u·exp(s) + t`, log-det `Σ s`.
/// `s` is soft-bounded as `s_max·tanh(raw / s_max)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineCoupling {
    mask: Vec<bool>,
    kinds: Vec<CoordKind>,
    net: Mlp,
    scale_bound: f64,
}

impl AffineCoupling {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        mask: Vec<bool>,
        kinds: Vec<CoordKind>,
        hidden: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        check_mask("affine_coupling", &mask, kinds.len())?;
        let cond: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let trans: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
        if trans.iter().any(|&i| kinds[i] == CoordKind::Circular) {
            return config("affine_coupling: cannot transform a circular coordinate");
        }
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(encoded_width(&cond, &kinds));
        sizes.extend_from_slice(hidden);
        sizes.push(2 * trans.len());
        let net = Mlp::new(store, &alloc::format!("{prefix}.net"), &sizes, Activation::Tanh, true, rng)?;
        Ok(AffineCoupling {
            mask,
            kinds,
            net,
            scale_bound: DEFAULT_SCALE_BOUND,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn apply<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: Var<'t>,
        direction: Direction,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let n = z.shape().0;
        let cond: Vec<usize> = (0..self.mask.len()).filter(|&i| self.mask[i]).collect();
        let trans: Vec<usize> = (0..self.mask.len()).filter(|&i| !self.mask[i]).collect();
        let m = trans.len();
        let raw = self
            .net
            .forward(tape, store, encode_conditioning(tape, z, &cond, &self.kinds)?)?;
        let b = self.scale_bound;
        let s = raw
            .select_cols(&(0..m).collect::<Vec<_>>())?
            .scale(1.0 / b)
            .tanh()
            .scale(b);
        let t = raw.select_cols(&(m..2 * m).collect::<Vec<_>>())?;
        let zu = z.select_cols(&trans)?;
        let (xu, ld) = match direction {
            Direction::Forward => (zu.mul(s.exp())?.add(t)?, s.sum_rows()),
            Direction::Inverse => (zu.sub(t)?.mul(s.neg().exp())?, s.sum_rows().neg()),
        };
        let mut cols = Vec::with_capacity(self.mask.len());
        let mut j = 0;
        for i in 0..self.mask.len() {
            if self.mask[i] {
                cols.push(z.col(i)?);
            } else {
                cols.push(xu.col(j)?);
                j += 1;
            }
        }
        let ld = if m == 0 { zero_logdet(tape, n) } else { ld };
        Ok((assemble(tape, &cols)?, ld))
    }
}
