//! Base distributions and the von Mises density.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, HALF_LN_TAU, PI, TAU};
use crate::numcore::{Matrix, ParamId, ParamStore, Rng, Stream, Tape, Var};

/// Kind of a coordinate: unbounded real line or angle on `[-π, π)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordKind {
    Gaussian,
    Circular,
}

/// Reference densities a flow starts from.
#[derive(Clone, Debug, PartialEq)]
pub enum BaseDist {
    /// Diagonal Gaussian with (optionally trainable) `loc` and `log_scale`, both `1×D`.
    DiagGaussian {
        dim: usize,
        loc: ParamId,
        log_scale: ParamId,
    },
    /// Product of standard normals on gaussian dims and uniforms on `[-π, π)`
    /// on circular dims.
    UniformGaussianMix { kinds: Vec<CoordKind> },
}

impl BaseDist {
    /// Standard normal in `dim` dimensions; parameters live in `store`.
    pub fn diag_gaussian(store: &mut ParamStore, prefix: &str, dim: usize, trainable: bool) -> Self {
        let loc = store.insert(format!("{prefix}.loc"), Matrix::zeros(1, dim), trainable);
        let log_scale = store.insert(format!("{prefix}.log_scale"), Matrix::zeros(1, dim), trainable);
        BaseDist::DiagGaussian {
            dim,
            loc,
            log_scale,
        }
    }

    pub fn uniform_gaussian_mix(kinds: Vec<CoordKind>) -> Self {
        BaseDist::UniformGaussianMix { kinds }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseDist::DiagGaussian { dim, .. } => *dim,
            BaseDist::UniformGaussianMix { kinds } => kinds.len(),
        }
    }

    pub fn kinds(&self) -> Vec<CoordKind> {
        match self {
            BaseDist::DiagGaussian { dim, .. } => alloc::vec![CoordKind::Gaussian; *dim],
            BaseDist::UniformGaussianMix { kinds } => kinds.clone(),
        }
    }

    /// Draws `n` reparameterized samples and their log density.
    pub fn sample_on<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        n: usize,
        rng: &mut Rng,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let z = match self {
            BaseDist::DiagGaussian {
                dim,
                loc,
                log_scale,
            } => {
                let eps = tape.constant(rng.stream(Stream::Base).normal_matrix(n, *dim)?);
                let scale = tape.param(store, *log_scale).exp();
                eps.mul(scale)?.add(tape.param(store, *loc))?
            }
            BaseDist::UniformGaussianMix { kinds } => {
                if n == 0 || kinds.is_empty() {
                    return Err(Error::Config("base sample needs n >= 1 and dim >= 1".into()));
                }
                let mut m = Matrix::zeros(n, kinds.len());
                let mut s = rng.stream(Stream::Base);
                for r in 0..n {
                    for (c, kind) in kinds.iter().enumerate() {
                        let v = match kind {
                            CoordKind::Gaussian => s.normal(),
                            CoordKind::Circular => s.uniform(-PI, PI),
                        };
                        m.set(r, c, v);
                    }
                }
                tape.constant(m)
            }
        };
        let lp = self.log_prob_on(tape, store, z)?;
        Ok((z, lp))
    }

    /// Exact log density, `n×D → n×1`.
    pub fn log_prob_on<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let (n, d) = x.shape();
        if d != self.dim() {
            return Err(Error::Shape {
                op: "base_log_prob",
                lhs: (n, d),
                rhs: (1, self.dim()),
            });
        }
        match self {
            BaseDist::DiagGaussian { loc, log_scale, .. } => {
                let ls = tape.param(store, *log_scale);
                let u = x.sub(tape.param(store, *loc))?.mul(ls.neg().exp())?;
                let quad = u.mul(u)?.scale(-0.5);
                Ok(quad.sub(ls)?.offset(-HALF_LN_TAU).sum_rows())
            }
            BaseDist::UniformGaussianMix { kinds } => {
                let gauss: Vec<usize> = (0..d).filter(|&c| kinds[c] == CoordKind::Gaussian).collect();
                let n_circ = (d - gauss.len()) as f64;
                let constant = -(gauss.len() as f64) * HALF_LN_TAU - n_circ * math::ln(TAU);
                if gauss.is_empty() {
                    return Ok(tape.constant(Matrix::filled(n, 1, constant)));
                }
                let g = x.select_cols(&gauss)?;
                Ok(g.mul(g)?.scale(-0.5).sum_rows().offset(constant))
            }
        }
    }

    pub fn sample(&self, store: &ParamStore, n: usize, rng: &mut Rng) -> Result<(Matrix, Matrix)> {
        let tape = Tape::new();
        let (z, lp) = self.sample_on(&tape, store, n, rng)?;
        Ok(((*z.value()).clone(), (*lp.value()).clone()))
    }

    pub fn log_prob(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let tape = Tape::new();
        let lp = self.log_prob_on(&tape, store, tape.constant(x.clone()))?;
        Ok((*lp.value()).clone())
    }
}

/// von Mises log density `κ cos(φ − μ) − ln(2π I₀(κ))`, elementwise.
pub fn von_mises_log_prob_on<'t>(phi: Var<'t>, mu: Var<'t>, kappa: f64) -> Result<Var<'t>> {
    let norm = von_mises_log_normalizer(kappa)?;
    Ok(phi.sub(mu)?.cos().scale(kappa).offset(-norm))
}

/// Plain-matrix variant of [`von_mises_log_prob_on`].
pub fn von_mises_log_prob(phi: &Matrix, mu: &Matrix, kappa: f64) -> Result<Matrix> {
    let tape = Tape::new();
    let out = von_mises_log_prob_on(tape.constant(phi.clone()), tape.constant(mu.clone()), kappa)?;
    Ok((*out.value()).clone())
}

/// `ln(2π I₀(κ))`.
pub fn von_mises_log_normalizer(kappa: f64) -> Result<f64> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::Domain {
            op: "von_mises",
            detail: format!("concentration must be finite and >= 0, got {kappa}"),
        });
    }
    Ok(math::ln(TAU * math::bessel_i0(kappa)))
}

/// Scalar von Mises distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VonMises {
    pub mu: f64,
    pub kappa: f64,
}

impl VonMises {
    pub fn new(mu: f64, kappa: f64) -> Result<Self> {
        von_mises_log_normalizer(kappa)?;
        Ok(VonMises { mu, kappa })
    }

    pub fn log_prob(&self, phi: f64) -> f64 {
        self.kappa * math::cos(phi - self.mu) - math::ln(TAU * math::bessel_i0(self.kappa))
    }
}
