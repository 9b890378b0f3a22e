//! Forward-mode dual numbers with a fixed number of tangent directions.
//!
//! Used to obtain exact local Jacobians of small scalar kernels (the spline
//! bin formulas) that are then registered as a single tape operation.

use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(v: f64) -> Self {
        Dual { v, d: [0.0; N] }
    }

    /// Seed for the `i`-th independent variable.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Dual { v, d }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in &mut d {
            *x *= dv;
        }
        Dual { v, d }
    }

    pub fn ln(self) -> Self {
        self.chain(math::ln(self.v), 1.0 / self.v)
    }

    /// Square root; the tangent is set to zero at the origin.
    pub fn sqrt(self) -> Self {
        let s = math::sqrt(self.v);
        self.chain(s, if s > 0.0 { 0.5 / s } else { 0.0 })
    }

    pub fn scale(self, k: f64) -> Self {
        self.chain(self.v * k, k)
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for (a, b) in self.d.iter_mut().zip(o.d) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(mut self, o: Self) -> Self {
        self.v -= o.v;
        for (a, b) in self.d.iter_mut().zip(o.d) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - q * o.d[i]) * inv;
        }
        Dual { v: q, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    fn add(mut self, o: f64) -> Self {
        self.v += o;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    fn sub(mut self, o: f64) -> Self {
        self.v -= o;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        self.scale(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        let x = Dual::<2>::var(3.0, 0);
        let y = Dual::<2>::var(2.0, 1);
        let f = x * y / (x + y);
        // f = xy/(x+y); df/dx = y²/(x+y)², df/dy = x²/(x+y)²
        assert!((f.v - 1.2).abs() < 1e-15);
        assert!((f.d[0] - 4.0 / 25.0).abs() < 1e-15);
        assert!((f.d[1] - 9.0 / 25.0).abs() < 1e-15);
        let g = (x * x).ln().sqrt();
        let expected = 1.0 / (3.0 * math::sqrt(2.0 * math::ln(3.0)));
        assert!((g.d[0] - expected).abs() < 1e-14);
    }
}
