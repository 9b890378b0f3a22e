//! Invertible layers and the composite flow model.
//!
//! Every layer maps a batch `n×D` to a batch `n×D` plus a per-sample
//! `n×1` log-|det Jacobian| of the direction that was applied.

mod actnorm;
mod coupling;
mod maf;
mod metropolis;
mod model;
mod permute;
mod radial;
mod rq_coupling;
pub mod spline;

use core::fmt;

pub use actnorm::ActNorm;
pub use coupling::AffineCoupling;
pub use maf::Maf;
pub use metropolis::Metropolis;
pub use model::FlowModel;
pub use permute::Permute;
pub use radial::{Planar, Radial};
pub use rq_coupling::RqCoupling;

use alloc::vec::Vec;

use crate::dists::CoordKind;
use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamStore, Tape, Var};

/// Forward maps base space to data space; inverse maps data to base.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Inverse => "inverse",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    ActNorm(ActNorm),
    Permute(Permute),
    AffineCoupling(AffineCoupling),
    Maf(Maf),
    RqCoupling(RqCoupling),
    Planar(Planar),
    Radial(Radial),
    Metropolis(Metropolis),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::ActNorm(_) => "actnorm",
            Layer::Permute(_) => "permute",
            Layer::AffineCoupling(_) => "affine_coupling",
            Layer::Maf(_) => "maf",
            Layer::RqCoupling(_) => "rq_coupling",
            Layer::Planar(_) => "planar",
            Layer::Radial(_) => "radial",
            Layer::Metropolis(_) => "metropolis",
        }
    }

    pub fn supports(&self, direction: Direction) -> bool {
        match self {
            Layer::Planar(_) | Layer::Radial(_) | Layer::Metropolis(_) => {
                direction == Direction::Forward
            }
            _ => true,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Layer::Metropolis(_))
    }

    /// Applies a deterministic layer. Stochastic layers go through
    /// [`Metropolis::apply`] instead and report a capability error here.
    pub fn apply<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: Var<'t>,
        direction: Direction,
    ) -> Result<(Var<'t>, Var<'t>)> {
        if !self.supports(direction) || self.is_stochastic() {
            return Err(Error::Capability {
                layer: self.name(),
                direction,
            });
        }
        match self {
            Layer::ActNorm(l) => l.apply(tape, store, z, direction),
            Layer::Permute(l) => l.apply(tape, z, direction),
            Layer::AffineCoupling(l) => l.apply(tape, store, z, direction),
            Layer::Maf(l) => l.apply(tape, store, z, direction),
            Layer::RqCoupling(l) => l.apply(tape, store, z, direction),
            Layer::Planar(l) => l.forward(tape, store, z),
            Layer::Radial(l) => l.forward(tape, store, z),
            Layer::Metropolis(_) => unreachable!(),
        }
    }

    /// Plain-matrix convenience wrapper around [`Layer::apply`].
    pub fn apply_values(&self, store: &ParamStore, z: &Matrix, direction: Direction) -> Result<(Matrix, Matrix)> {
        let tape = Tape::new();
        let (out, ld) = self.apply(&tape, store, tape.constant(z.clone()), direction)?;
        Ok(((*out.value()).clone(), (*ld.value()).clone()))
    }

    /// Coordinate kinds after this layer, given the kinds before it.
    pub fn map_kinds(&self, kinds: &[CoordKind]) -> Vec<CoordKind> {
        match self {
            Layer::Permute(p) => p.perm().iter().map(|&i| kinds[i]).collect(),
            _ => kinds.to_vec(),
        }
    }
}

/// Zero log-det column for `n` samples.
pub(crate) fn zero_logdet(tape: &Tape, n: usize) -> Var<'_> {
    tape.constant(Matrix::zeros(n, 1))
}

/// Reassembles `n×D` from per-column pieces in coordinate order.
pub(crate) fn assemble<'t>(tape: &'t Tape, columns: &[Var<'t>]) -> Result<Var<'t>> {
    tape.concat_cols(columns)
}

/// Validates a pass-through mask: same length as the data, at least one
/// coordinate on each side.
pub(crate) fn check_mask(layer: &str, mask: &[bool], dim: usize) -> Result<()> {
    if mask.len() != dim {
        return crate::error::config(alloc::format!(
            "{layer}: mask has {} entries for {dim} dimensions",
            mask.len()
        ));
    }
    if mask.iter().all(|&m| m) || mask.iter().all(|&m| !m) {
        return crate::error::config(alloc::format!(
            "{layer}: mask must pass through and transform at least one coordinate each"
        ));
    }
    Ok(())
}

/// Encodes conditioning columns for a conditioner net: gaussian coordinates
/// as-is, circular coordinates as a `(sin, cos)` pair.
pub(crate) fn encode_conditioning<'t>(
    tape: &'t Tape,
    z: Var<'t>,
    dims: &[usize],
    kinds: &[CoordKind],
) -> Result<Var<'t>> {
    let mut parts = Vec::with_capacity(2 * dims.len());
    for &d in dims {
        let c = z.col(d)?;
        match kinds[d] {
            CoordKind::Gaussian => parts.push(c),
            CoordKind::Circular => {
                parts.push(c.sin());
                parts.push(c.cos());
            }
        }
    }
    tape.concat_cols(&parts)
}

pub(crate) fn encoded_width(dims: &[usize], kinds: &[CoordKind]) -> usize {
    dims.iter()
        .map(|&d| if kinds[d] == CoordKind::Circular { 2 } else { 1 })
        .sum()
}
