use alloc::format;
use alloc::vec::Vec;

use crate::dists::{BaseDist, CoordKind};
use crate::error::{config, Error, Result};
use crate::math;
use crate::numcore::{Matrix, ParamStore, Rng, Stream, Tape, Var};
use crate::targets::TargetDensity;

/// Metropolis–Hastings sampling layer for stochastic normalizing flows.
///
/// Targets the interpolation `log π̃_λ = (1−λ)·log q_ref + λ·log p̃`, where
/// `q_ref` is the model's base density and `p̃` the attached target. One
/// Gaussian random-walk proposal `z* = z + σ·ε` is made per sample.
///
/// The returned `Δ = log π̃_λ(z) − log π̃_λ(z′)` is zero on rejection and
/// enters the sample log-weight in the same slot as a log-det. The accept
/// decision is treated as a constant; gradients flow along the realized path.
#[derive(Clone, Debug, PartialEq)]
pub struct Metropolis {
    lambda: f64,
    step: f64,
    kinds: Vec<CoordKind>,
}

impl Metropolis {
    pub fn new(lambda: f64, step: f64, kinds: Vec<CoordKind>) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return config(format!("metropolis: lambda must lie in [0, 1], got {lambda}"));
        }
        if !(step > 0.0) || !step.is_finite() {
            return config(format!("metropolis: step size must be positive, got {step}"));
        }
        Ok(Metropolis { lambda, step, kinds })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    fn log_interp<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        base: &BaseDist,
        target: &TargetDensity,
        z: Var<'t>,
    ) -> Result<Var<'t>> {
        let q = base.log_prob_on(tape, store, z)?.scale(1.0 - self.lambda);
        let p = target.log_prob_on(tape, z)?.scale(self.lambda);
        q.add(p)
    }

    pub fn apply<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: Var<'t>,
        base: &BaseDist,
        target: Option<&TargetDensity>,
        rng: &mut Rng,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let target = target.ok_or_else(|| Error::Config("metropolis layer requires a target density".into()))?;
        let (n, d) = z.shape();
        if d != self.kinds.len() {
            return Err(Error::Shape {
                op: "metropolis",
                lhs: (n, d),
                rhs: (1, self.kinds.len()),
            });
        }
        let eps = rng.stream(Stream::Mcmc).normal_matrix(n, d)?;
        let moved = z.add(tape.constant(eps).scale(self.step))?;
        let mut cols = Vec::with_capacity(d);
        for (c, kind) in self.kinds.iter().enumerate() {
            let col = moved.col(c)?;
            cols.push(match kind {
                CoordKind::Gaussian => col,
                CoordKind::Circular => col.wrap_angle(),
            });
        }
        let proposal = tape.concat_cols(&cols)?;
        let lp_cur = self.log_interp(tape, store, base, target, z)?;
        let lp_prop = self.log_interp(tape, store, base, target, proposal)?;

        let mut accept = Matrix::zeros(n, 1);
        {
            let (cur, prop) = (lp_cur.value(), lp_prop.value());
            let mut s = rng.stream(Stream::Mcmc);
            for r in 0..n {
                let u = 1.0 - s.uniform01();
                if math::ln(u) < prop.get(r, 0) - cur.get(r, 0) {
                    accept.set(r, 0, 1.0);
                }
            }
        }
        let keep = tape.constant(accept.map(|a| 1.0 - a));
        let accept = tape.constant(accept);
        let z_new = proposal.mul(accept)?.add(z.mul(keep)?)?;
        let lp_new = lp_prop.mul(accept)?.add(lp_cur.mul(keep)?)?;
        Ok((z_new, lp_cur.sub(lp_new)?))
    }
}
