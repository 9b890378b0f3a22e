//! Forward-only residual maps.

use alloc::format;

use crate::error::Result;
use crate::numcore::{Matrix, ParamId, ParamStore, Rng, Stream, Tape, Var};

/// Planar flow `x = z + û·tanh(wᵀz + b)`.
///
/// `û = u + (m(wᵀu) − wᵀu)·w/‖w‖²` with `m(a) = −1 + softplus(a)` keeps
/// `wᵀû ≥ −1`, which makes the map invertible (though not in closed form).
#[derive(Clone, Debug, PartialEq)]
pub struct Planar {
    u: ParamId,
    w: ParamId,
    b: ParamId,
}

impl Planar {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut Rng) -> Result<Self> {
        let mut s = rng.stream(Stream::Init);
        let bound = 1.0 / crate::math::sqrt(dim as f64);
        let u = s.uniform_matrix(1, dim, -bound, bound)?;
        let w = s.uniform_matrix(1, dim, -bound, bound)?;
        Ok(Planar {
            u: store.insert(format!("{prefix}.u"), u, true),
            w: store.insert(format!("{prefix}.w"), w, true),
            b: store.insert(format!("{prefix}.b"), Matrix::zeros(1, 1), true),
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, z: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let u = tape.param(store, self.u);
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let wu = u.mul(w)?.sum();
        let m = wu.softplus().offset(-1.0);
        let w_norm = w.mul(w)?.sum();
        let u_hat = u.add(m.sub(wu)?.div(w_norm)?.mul(w)?)?;
        let act = z.mul(w)?.sum_rows().add(b)?.tanh();
        let x = z.add(act.mul(u_hat)?)?;
        let w_uhat = w.mul(u_hat)?.sum();
        let slope = act.mul(act)?.neg().offset(1.0);
        let ld = slope.mul(w_uhat)?.offset(1.0).log()?;
        Ok((x, ld))
    }
}

/// Radial flow `x = z + β·h(α, r)·(z − z₀)`, `h = 1/(α + r)`, `r = ‖z − z₀‖`.
///
/// `α = softplus(ã)` and `β = −α + softplus(b̃)` so `β ≥ −α` always holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Radial {
    dim: usize,
    center: ParamId,
    alpha_raw: ParamId,
    beta_raw: ParamId,
}

impl Radial {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut Rng) -> Result<Self> {
        let mut s = rng.stream(Stream::Init);
        let center = s.normal_matrix(1, dim)?;
        let a = s.uniform_matrix(1, 1, -0.5, 0.5)?;
        let b = s.uniform_matrix(1, 1, -0.5, 0.5)?;
        Ok(Radial {
            dim,
            center: store.insert(format!("{prefix}.center"), center, true),
            alpha_raw: store.insert(format!("{prefix}.alpha"), a, true),
            beta_raw: store.insert(format!("{prefix}.beta"), b, true),
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, z: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let alpha = tape.param(store, self.alpha_raw).softplus();
        let beta = tape.param(store, self.beta_raw).softplus().sub(alpha)?;
        let diff = z.sub(tape.param(store, self.center))?;
        let r = diff.mul(diff)?.sum_rows().pow(0.5)?;
        let h = r.add(alpha)?.pow(-1.0)?;
        let bh = h.mul(beta)?;
        let x = z.add(diff.mul(bh)?)?;
        // det = (1 + βh)^(D−1) · (1 + βh − βh²r)
        let first = bh.offset(1.0);
        let last = first.sub(bh.mul(h)?.mul(r)?)?;
        let ld = first
            .log()?
            .scale((self.dim - 1) as f64)
            .add(last.log()?)?;
        Ok((x, ld))
    }
}
