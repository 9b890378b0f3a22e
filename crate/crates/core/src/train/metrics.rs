use crate::error::Result;
use crate::flows::FlowModel;
use crate::math;
use crate::numcore::Rng;
use crate::targets::TargetDensity;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// `mean(log q − log p)`; present when the target's normalizer is known.
    pub kl_estimate: Option<f64>,
    /// `(Σw)² / (n·Σw²)` with `w = p̃/q`.
    pub ess_fraction: f64,
}

/// Sample-based fit quality of `model` against `target`.
pub fn eval_metrics(model: &FlowModel, target: &TargetDensity, n: usize, rng: &mut Rng) -> Result<Metrics> {
    let (x, log_q) = model.sample(n, rng)?;
    let log_p = target.log_prob(&x)?;
    let log_w: alloc::vec::Vec<f64> = log_p
        .data()
        .iter()
        .zip(log_q.data())
        .map(|(p, q)| p - q)
        .collect();
    let kl_estimate = target
        .log_normalizer()
        .map(|lz| -log_w.iter().map(|lw| lw - lz).sum::<f64>() / n as f64);
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut s1, mut s2) = (0.0, 0.0);
    for lw in &log_w {
        let w = math::exp(lw - max);
        s1 += w;
        s2 += w * w;
    }
    Ok(Metrics {
        kl_estimate,
        ess_fraction: s1 * s1 / (n as f64 * s2),
    })
}
