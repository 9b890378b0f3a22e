//! Scalar math on top of `libm`, plus the special functions the densities need.

pub use core::f64::consts::PI;

pub const TAU: f64 = 2.0 * PI;
/// `0.5 * ln(2π)`.
pub const HALF_LN_TAU: f64 = 0.918_938_533_204_672_7;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}
#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}
#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}
#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}
#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}
#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}
#[inline]
pub fn pow(x: f64, p: f64) -> f64 {
    libm::pow(x, p)
}
#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}
#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + ln_1p(exp(-x))
    } else {
        ln_1p(exp(x))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Reduces an angle to `[-π, π)`.
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x - TAU * floor((x + PI) / TAU);
    // floor can land exactly on the upper edge through rounding
    if y >= PI {
        y -= TAU;
    }
    if y < -PI {
        y = -PI;
    }
    y
}

/// Modified Bessel function of the first kind, order zero.
///
/// Plain power series `Σ (κ²/4)^k / (k!)²`, stopped once a term drops below
/// `1e-17` of the running sum. Accurate for the moderate concentrations used
/// here (κ up to a few tens).
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
        k += 1.0;
    }
    sum
}
