use crate::error::{config, Result};
use crate::flows::FlowModel;
use crate::numcore::{Matrix, Rng, Tape, Var};
use crate::targets::TargetDensity;

/// Pathwise reverse-KL estimate `mean(log q(x) − log p̃(x))` over `n`
/// model samples. Differentiable through the reparameterized base draws.
pub fn reverse_kld<'t>(
    model: &FlowModel,
    target: &TargetDensity,
    tape: &'t Tape,
    n: usize,
    rng: &mut Rng,
) -> Result<Var<'t>> {
    if n < 1 {
        return config("reverse KL needs at least one sample");
    }
    let (x, log_q) = model.sample_on(tape, n, rng)?;
    let log_p = target.log_prob_on(tape, x)?;
    Ok(log_q.sub(log_p)?.mean())
}

/// Negative mean log-likelihood of `data` under the model.
pub fn forward_kld<'t>(model: &FlowModel, tape: &'t Tape, data: &Matrix) -> Result<Var<'t>> {
    if data.rows() < 1 {
        return config("forward KL needs at least one data point");
    }
    Ok(model.log_prob_on(tape, tape.constant(data.clone()))?.mean().neg())
}
