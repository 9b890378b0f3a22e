use alloc::format;
use alloc::vec::Vec;

use super::spline::{knots_from_raw, rq_spline, SplineDomain};
use super::{assemble, check_mask, encode_conditioning, encoded_width, Direction};
use crate::dists::CoordKind;
use crate::error::{config, Result};
use crate::nets::{Activation, Mlp};
use crate::numcore::{ParamStore, Rng, Tape, Var};

/// Rational-quadratic spline coupling over mixed coordinates.
///
/// Transformed gaussian coordinates use a spline on `[-bound, bound]` with
/// identity tails; transformed circular coordinates use the periodic spline on
/// `[-π, π)`. Circular conditioning coordinates enter the conditioner as
/// `(sin, cos)`. The conditioner's last layer starts at zero, which makes the
/// layer start as the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct RqCoupling {
    mask: Vec<bool>,
    kinds: Vec<CoordKind>,
    bins: usize,
    bound: f64,
    net: Mlp,
}

fn domain_for(kind: CoordKind, bound: f64) -> SplineDomain {
    match kind {
        CoordKind::Gaussian => SplineDomain::Bounded {
            left: -bound,
            right: bound,
        },
        CoordKind::Circular => SplineDomain::Circular,
    }
}

impl RqCoupling {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        mask: Vec<bool>,
        kinds: Vec<CoordKind>,
        bins: usize,
        bound: f64,
        hidden: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        check_mask("rq_coupling", &mask, kinds.len())?;
        if bins < 2 {
            return config(format!("rq_coupling: need at least 2 bins, got {bins}"));
        }
        if !(bound > 0.0) || !bound.is_finite() {
            return config(format!("rq_coupling: bound must be positive, got {bound}"));
        }
        let cond: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let out: usize = (0..mask.len())
            .filter(|&i| !mask[i])
            .map(|i| domain_for(kinds[i], bound).raw_width(bins))
            .sum();
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(encoded_width(&cond, &kinds));
        sizes.extend_from_slice(hidden);
        sizes.push(out);
        let net = Mlp::new(store, &format!("{prefix}.net"), &sizes, Activation::Tanh, true, rng)?;
        let layer = RqCoupling {
            mask,
            kinds,
            bins,
            bound,
            net,
        };
        Ok(layer)
    }

    fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let cond = (0..self.mask.len()).filter(|&i| self.mask[i]).collect();
        let trans = (0..self.mask.len()).filter(|&i| !self.mask[i]).collect();
        (cond, trans)
    }

    fn domain(&self, dim: usize) -> SplineDomain {
        domain_for(self.kinds[dim], self.bound)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn apply<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: Var<'t>,
        direction: Direction,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (cond, trans) = self.split();
        let raw = self
            .net
            .forward(tape, store, encode_conditioning(tape, z, &cond, &self.kinds)?)?;
        let mut cols: Vec<Var<'t>> = Vec::with_capacity(self.mask.len());
        for i in 0..self.mask.len() {
            cols.push(z.col(i)?);
        }
        let mut ld: Option<Var<'t>> = None;
        let mut offset = 0;
        for &i in &trans {
            let domain = self.domain(i);
            let w = domain.raw_width(self.bins);
            let block = raw.select_cols(&(offset..offset + w).collect::<Vec<_>>())?;
            offset += w;
            let knots = knots_from_raw(block, self.bins, domain)?;
            let (y, l) = rq_spline(cols[i], &knots, domain, direction == Direction::Inverse)?;
            cols[i] = y;
            ld = Some(match ld {
                Some(acc) => acc.add(l)?,
                None => l,
            });
        }
        let ld = ld.expect("mask leaves at least one coordinate to transform");
        Ok((assemble(tape, &cols)?, ld))
    }
}
