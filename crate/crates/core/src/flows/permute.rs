use alloc::vec;
use alloc::vec::Vec;

use super::{zero_logdet, Direction};
use crate::error::{config, Result};
use crate::numcore::{Tape, Var};

/// Fixed coordinate permutation: forward output column `i` is input column `perm[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Permute {
    perm: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permute {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut inverse = vec![usize::MAX; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            if p >= perm.len() || inverse[p] != usize::MAX {
                return config("permute: not a permutation");
            }
            inverse[p] = i;
        }
        Ok(Permute { perm, inverse })
    }

    /// Reverses coordinate order.
    pub fn reverse(dim: usize) -> Self {
        Self::new((0..dim).rev().collect()).expect("reversal is a permutation")
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn apply<'t>(&self, tape: &'t Tape, z: Var<'t>, direction: Direction) -> Result<(Var<'t>, Var<'t>)> {
        let idx = match direction {
            Direction::Forward => &self.perm,
            Direction::Inverse => &self.inverse,
        };
        let n = z.shape().0;
        Ok((z.select_cols(idx)?, zero_logdet(tape, n)))
    }
}
