//! Monotonic rational-quadratic splines.
//!
//! A spline on `[left, right]` is described per sample by `K+1` knot
//! positions, `K+1` knot values and `K+1` knot derivatives. Inside the
//! interval the map is a ratio of quadratics in each bin; outside (bounded
//! domain) it is the identity. On the circular domain the interval is
//! `[-π, π)`, inputs are wrapped first and the two end derivatives coincide.
//!
//! The per-sample evaluation is registered as one tape operation whose local
//! Jacobian comes from forward-mode dual numbers, so gradients with respect to
//! the input and every knot quantity are exact.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, PI};
use crate::numcore::{Dual, Matrix, Tape, Var, VjpRule};

/// Smallest bin width or height, as a fraction of the interval length.
pub const MIN_BIN_FRACTION: f64 = 1e-3;
/// Smallest knot derivative.
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Softplus shift that maps a raw derivative of zero to a derivative of one.
fn derivative_shift() -> f64 {
    math::ln(math::exp(1.0 - MIN_DERIVATIVE) - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplineDomain {
    /// `[left, right]` with identity (unit-slope) tails outside.
    Bounded { left: f64, right: f64 },
    /// `[-π, π)` with periodic identification.
    Circular,
}

impl SplineDomain {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            SplineDomain::Bounded { left, right } => (left, right),
            SplineDomain::Circular => (-PI, PI),
        }
    }

    /// Raw conditioner outputs needed per transformed coordinate.
    pub fn raw_width(self, bins: usize) -> usize {
        match self {
            SplineDomain::Bounded { .. } => 3 * bins - 1,
            SplineDomain::Circular => 3 * bins,
        }
    }
}

/// Knot tensors for a batch, each `n × (K+1)`.
pub struct Knots<'t> {
    pub xs: Var<'t>,
    pub ys: Var<'t>,
    pub derivs: Var<'t>,
}

fn cumulative_knots<'t>(raw: Var<'t>, bins: usize, left: f64, right: f64) -> Result<Var<'t>> {
    let tape = raw.tape();
    let n = raw.shape().0;
    let widths = raw
        .softmax_rows()?
        .scale(1.0 - MIN_BIN_FRACTION * bins as f64)
        .offset(MIN_BIN_FRACTION);
    let cum = widths.cumsum_cols();
    let zero = tape.constant(Matrix::zeros(n, 1));
    Ok(tape.concat_cols(&[zero, cum])?.scale(right - left).offset(left))
}

/// Turns raw conditioner outputs (`n × raw_width`) into constrained knots.
///
/// Layout of `raw`: `K` width logits, `K` height logits, then the
/// unconstrained derivatives (`K-1` interior ones for a bounded domain,
/// `K` for the circular one, whose last knot reuses the first derivative).
/// All-zero raw outputs give the identity spline.
pub fn knots_from_raw<'t>(raw: Var<'t>, bins: usize, domain: SplineDomain) -> Result<Knots<'t>> {
    let (n, width) = raw.shape();
    if bins == 0 || width != domain.raw_width(bins) {
        return Err(Error::Shape {
            op: "spline_knots",
            lhs: (n, width),
            rhs: (n, domain.raw_width(bins)),
        });
    }
    let tape = raw.tape();
    let (left, right) = domain.bounds();
    let range = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
    let xs = cumulative_knots(raw.select_cols(&range(0, bins))?, bins, left, right)?;
    let ys = cumulative_knots(raw.select_cols(&range(bins, 2 * bins))?, bins, left, right)?;
    let d = raw
        .select_cols(&range(2 * bins, width))?
        .offset(derivative_shift())
        .softplus()
        .offset(MIN_DERIVATIVE);
    let derivs = match domain {
        SplineDomain::Bounded { .. } => {
            let one = tape.constant(Matrix::filled(n, 1, 1.0));
            tape.concat_cols(&[one, d, one])?
        }
        SplineDomain::Circular => {
            let mut idx = range(0, bins);
            idx.push(0);
            d.select_cols(&idx)?
        }
    };
    Ok(Knots { xs, ys, derivs })
}

type D7 = Dual<7>;

/// Index of the bin containing `v`: the last knot `k < K` with `knots[k] <= v`.
/// A value on an interior knot belongs to the bin on its right; the upper
/// edge belongs to the last bin.
fn find_bin(knots: &[f64], v: f64) -> usize {
    let bins = knots.len() - 1;
    let mut k = 0;
    while k + 1 < bins && knots[k + 1] <= v {
        k += 1;
    }
    k
}

/// Evaluates one bin. Dual slots: 0 input, 1-2 knot x, 3-4 knot y, 5-6 derivatives.
fn rq_bin(input: f64, kx: [f64; 2], ky: [f64; 2], kd: [f64; 2], inverse: bool) -> (D7, D7) {
    let inp = D7::var(input, 0);
    let x0 = D7::var(kx[0], 1);
    let x1 = D7::var(kx[1], 2);
    let y0 = D7::var(ky[0], 3);
    let y1 = D7::var(ky[1], 4);
    let d0 = D7::var(kd[0], 5);
    let d1 = D7::var(kd[1], 6);
    let w = x1 - x0;
    let h = y1 - y0;
    let s = h / w;
    let delta = d1 + d0 - s.scale(2.0);

    let log_slope = |xi: D7| -> D7 {
        let one_m = D7::constant(1.0) - xi;
        let t = xi * one_m;
        let den = s + delta * t;
        let num = s * s * (d1 * xi * xi + s * t * 2.0 + d0 * one_m * one_m);
        num.ln() - den.ln().scale(2.0)
    };

    if !inverse {
        let mut xi = (inp - x0) / w;
        xi.v = xi.v.clamp(0.0, 1.0);
        let t = xi * (D7::constant(1.0) - xi);
        let out = y0 + h * (s * xi * xi + d0 * t) / (s + delta * t);
        (out, log_slope(xi))
    } else {
        let dy = inp - y0;
        let a = h * (s - d0) + dy * delta;
        let b = h * d0 - dy * delta;
        let c = -(s * dy);
        let mut disc = b * b - a * c * 4.0;
        if disc.v < 0.0 {
            disc = D7::constant(0.0);
        }
        let mut xi = c.scale(2.0) / (-b - disc.sqrt());
        xi.v = xi.v.clamp(0.0, 1.0);
        let out = xi * w + x0;
        (out, -log_slope(xi))
    }
}

struct RowJacobian {
    bin: usize,
    dout: [f64; 7],
    dlog: [f64; 7],
}

struct SplineVjp {
    rows: Vec<Option<RowJacobian>>,
    knots: usize,
}

impl VjpRule for SplineVjp {
    fn vjp(&self, g: &Matrix, _inputs: &[Rc<Matrix>]) -> Vec<Option<Matrix>> {
        let n = self.rows.len();
        let mut gin = Matrix::zeros(n, 1);
        let mut gx = Matrix::zeros(n, self.knots);
        let mut gy = Matrix::zeros(n, self.knots);
        let mut gd = Matrix::zeros(n, self.knots);
        let last = self.knots - 1;
        for (r, row) in self.rows.iter().enumerate() {
            let (go, gl) = (g.get(r, 0), g.get(r, 1));
            let Some(j) = row else {
                gin.set(r, 0, go);
                continue;
            };
            let tot = |i: usize| go * j.dout[i] + gl * j.dlog[i];
            gin.set(r, 0, tot(0));
            let k = j.bin;
            // end knots are pinned to the domain edges
            for (slot, col) in [(1, k), (2, k + 1)] {
                if col != 0 && col != last {
                    gx.set(r, col, gx.get(r, col) + tot(slot));
                }
            }
            for (slot, col) in [(3, k), (4, k + 1)] {
                if col != 0 && col != last {
                    gy.set(r, col, gy.get(r, col) + tot(slot));
                }
            }
            for (slot, col) in [(5, k), (6, k + 1)] {
                gd.set(r, col, gd.get(r, col) + tot(slot));
            }
        }
        vec![Some(gin), Some(gx), Some(gy), Some(gd)]
    }
}

/// Applies the spline to a single column `input` (`n×1`).
///
/// Returns `(output, log|d output / d input|)`, both `n×1`. With `inverse`
/// the spline inverse is applied and the log-derivative is that of the
/// inverse map.
pub fn rq_spline<'t>(
    input: Var<'t>,
    knots: &Knots<'t>,
    domain: SplineDomain,
    inverse: bool,
) -> Result<(Var<'t>, Var<'t>)> {
    let tape: &Tape = input.tape();
    let iv = input.value();
    let (kx, ky, kd) = (knots.xs.value(), knots.ys.value(), knots.derivs.value());
    let n = iv.rows();
    let k1 = kx.cols();
    if iv.cols() != 1 || kx.rows() != n || ky.shape() != kx.shape() || kd.shape() != kx.shape() || k1 < 2 {
        return Err(Error::Shape {
            op: "rq_spline",
            lhs: iv.shape(),
            rhs: kx.shape(),
        });
    }
    let (left, right) = domain.bounds();
    let mut out = Matrix::zeros(n, 2);
    let mut rows = Vec::with_capacity(n);
    let mut xs = vec![0.0; k1];
    let mut ys = vec![0.0; k1];
    for r in 0..n {
        let mut v = iv.get(r, 0);
        if domain == SplineDomain::Circular {
            v = math::wrap_angle(v);
        } else if v < left || v > right {
            out.set(r, 0, v);
            rows.push(None);
            continue;
        }
        xs.copy_from_slice(kx.row(r));
        ys.copy_from_slice(ky.row(r));
        xs[0] = left;
        xs[k1 - 1] = right;
        ys[0] = left;
        ys[k1 - 1] = right;
        let bin = if inverse { find_bin(&ys, v) } else { find_bin(&xs, v) };
        let d = kd.row(r);
        let (o, l) = rq_bin(
            v,
            [xs[bin], xs[bin + 1]],
            [ys[bin], ys[bin + 1]],
            [d[bin], d[bin + 1]],
            inverse,
        );
        let mut value = o.v;
        if domain == SplineDomain::Circular && value >= PI {
            value -= 2.0 * PI;
        }
        out.set(r, 0, value);
        out.set(r, 1, l.v);
        rows.push(Some(RowJacobian {
            bin,
            dout: o.d,
            dlog: l.d,
        }));
    }
    let rule = SplineVjp { rows, knots: k1 };
    let both = tape.custom(
        &[input, knots.xs, knots.ys, knots.derivs],
        out,
        Box::new(rule),
    );
    Ok((both.col(0)?, both.col(1)?))
}
