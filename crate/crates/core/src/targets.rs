//! Target densities for training and evaluation.
//!
//! Built-ins are registered by name: `cylinder` (gaussian × circular, the
//! conditional angle follows a von Mises around `slope·x`), `ring8` and
//! `two_modes` (plain 2D mixtures), plus a diagonal `gaussian` with a
//! configurable total mass.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dists::{von_mises_log_normalizer, CoordKind};
use crate::error::{config, Error, Result};
use crate::math::{self, HALF_LN_TAU, TAU};
use crate::numcore::{Matrix, Tape, Var};

pub const RING_MODES: usize = 8;
pub const RING_RADIUS: f64 = 2.5;
pub const RING_STD: f64 = 0.3;
pub const TWO_MODES_OFFSET: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub enum TargetDensity {
    /// `N(x | 0, 1) · vonMises(φ | slope·x, kappa)` on the cylinder.
    Cylinder { slope: f64, kappa: f64 },
    /// Eight equal-weight isotropic Gaussians evenly spaced on a circle.
    Ring8,
    /// Equal mixture of unit Gaussians at `(±2, 0)`.
    TwoModes,
    /// Diagonal Gaussian scaled to total mass `exp(log_mass)`.
    Gaussian {
        loc: Vec<f64>,
        scale: Vec<f64>,
        log_mass: f64,
    },
}

impl TargetDensity {
    /// The reference cylinder target: `slope = 3`, `kappa = 1`.
    pub fn cylinder() -> Self {
        TargetDensity::Cylinder {
            slope: 3.0,
            kappa: 1.0,
        }
    }

    pub fn standard_normal(dim: usize) -> Self {
        TargetDensity::Gaussian {
            loc: vec![0.0; dim],
            scale: vec![1.0; dim],
            log_mass: 0.0,
        }
    }

    /// Registry lookup with default parameters.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cylinder" => Ok(Self::cylinder()),
            "ring8" => Ok(TargetDensity::Ring8),
            "two_modes" => Ok(TargetDensity::TwoModes),
            "gaussian" => Ok(Self::standard_normal(2)),
            _ => config(format!(
                "unknown target {name:?} (expected cylinder, ring8, two_modes or gaussian)"
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TargetDensity::Cylinder { .. } => "cylinder",
            TargetDensity::Ring8 => "ring8",
            TargetDensity::TwoModes => "two_modes",
            TargetDensity::Gaussian { .. } => "gaussian",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TargetDensity::Cylinder { slope, kappa } => {
                if !slope.is_finite() {
                    return config("cylinder: slope must be finite");
                }
                von_mises_log_normalizer(*kappa).map(|_| ())
            }
            TargetDensity::Gaussian {
                loc,
                scale,
                log_mass,
            } => {
                if loc.is_empty() || loc.len() != scale.len() {
                    return config("gaussian: loc and scale must be non-empty and equally long");
                }
                if scale.iter().any(|&s| !(s > 0.0)) || !log_mass.is_finite() {
                    return config("gaussian: scales must be positive and log_mass finite");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetDensity::Gaussian { loc, .. } => loc.len(),
            _ => 2,
        }
    }

    pub fn kinds(&self) -> Vec<CoordKind> {
        match self {
            TargetDensity::Cylinder { .. } => vec![CoordKind::Gaussian, CoordKind::Circular],
            _ => vec![CoordKind::Gaussian; self.dim()],
        }
    }

    /// `ln ∫ p̃`; every built-in has a known total mass.
    pub fn log_normalizer(&self) -> Option<f64> {
        match self {
            TargetDensity::Gaussian { log_mass, .. } => Some(*log_mass),
            _ => Some(0.0),
        }
    }

    /// Unnormalized log density `ln p̃(x)`, `n×D → n×1`.
    pub fn log_prob_on<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let (n, d) = x.shape();
        if d != self.dim() {
            return Err(Error::Shape {
                op: "target_log_prob",
                lhs: (n, d),
                rhs: (1, self.dim()),
            });
        }
        match self {
            TargetDensity::Cylinder { slope, kappa } => {
                let xs = x.col(0)?;
                let phi = x.col(1)?;
                let gauss = xs.mul(xs)?.scale(-0.5).offset(-HALF_LN_TAU);
                let norm = von_mises_log_normalizer(*kappa)?;
                let vm = phi.sub(xs.scale(*slope))?.cos().scale(*kappa).offset(-norm);
                gauss.add(vm)
            }
            TargetDensity::Ring8 => {
                let inv_var = 1.0 / (RING_STD * RING_STD);
                let log_c = -math::ln(TAU * RING_STD * RING_STD) - math::ln(RING_MODES as f64);
                let centers: Vec<(f64, f64)> = (0..RING_MODES)
                    .map(|k| {
                        let a = TAU * k as f64 / RING_MODES as f64;
                        (RING_RADIUS * math::cos(a), RING_RADIUS * math::sin(a))
                    })
                    .collect();
                mixture(tape, x, &centers, inv_var, log_c)
            }
            TargetDensity::TwoModes => {
                let log_c = -math::ln(TAU) - math::ln(2.0);
                let centers = [(TWO_MODES_OFFSET, 0.0), (-TWO_MODES_OFFSET, 0.0)];
                mixture(tape, x, &centers, 1.0, log_c)
            }
            TargetDensity::Gaussian {
                loc,
                scale,
                log_mass,
            } => {
                let loc_v = tape.constant(Matrix::row_vector(loc));
                let inv = tape.constant(Matrix::row_vector(&scale.iter().map(|s| 1.0 / s).collect::<Vec<_>>()));
                let u = x.sub(loc_v)?.mul(inv)?;
                let c = log_mass - scale.iter().map(|&s| math::ln(s) + HALF_LN_TAU).sum::<f64>();
                Ok(u.mul(u)?.scale(-0.5).sum_rows().offset(c))
            }
        }
    }

    pub fn log_prob(&self, x: &Matrix) -> Result<Matrix> {
        let tape = Tape::new();
        let lp = self.log_prob_on(&tape, tape.constant(x.clone()))?;
        Ok((*lp.value()).clone())
    }
}

/// Equal-weight isotropic 2D mixture; `log_c` holds normalizer and weight.
fn mixture<'t>(tape: &'t Tape, x: Var<'t>, centers: &[(f64, f64)], inv_var: f64, log_c: f64) -> Result<Var<'t>> {
    let x0 = x.col(0)?;
    let x1 = x.col(1)?;
    let mut comps = Vec::with_capacity(centers.len());
    for &(a, b) in centers {
        let dx = x0.offset(-a);
        let dy = x1.offset(-b);
        comps.push(dx.mul(dx)?.add(dy.mul(dy)?)?.scale(-0.5 * inv_var).offset(log_c));
    }
    tape.concat_cols(&comps)?.logsumexp_rows()
}
