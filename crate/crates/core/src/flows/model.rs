use alloc::vec::Vec;

use super::{Direction, Layer};
use crate::dists::{BaseDist, CoordKind};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamStore, Rng, Tape, Var};
use crate::targets::TargetDensity;

/// Rows evaluated per tape when working on plain matrices.
const CHUNK: usize = 4096;

/// Base distribution, ordered layers (base → data) and their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    pub base: BaseDist,
    pub layers: Vec<Layer>,
    pub params: ParamStore,
    /// Target used by stochastic layers.
    pub target: Option<TargetDensity>,
}

impl FlowModel {
    pub fn new(base: BaseDist, layers: Vec<Layer>, params: ParamStore) -> Self {
        FlowModel {
            base,
            layers,
            params,
            target: None,
        }
    }

    pub fn with_target(mut self, target: TargetDensity) -> Self {
        self.target = Some(target);
        self
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Coordinate kinds in data space.
    pub fn output_kinds(&self) -> Vec<CoordKind> {
        self.layers
            .iter()
            .fold(self.base.kinds(), |k, l| l.map_kinds(&k))
    }

    pub fn is_invertible(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.supports(Direction::Inverse) && !l.is_stochastic())
    }

    /// Draws `n` samples; returns `(x, log_q)` where `log_q` is the base
    /// log density minus every forward log-det and every Metropolis `Δ`.
    pub fn sample_on<'t>(&self, tape: &'t Tape, n: usize, rng: &mut Rng) -> Result<(Var<'t>, Var<'t>)> {
        let (mut z, mut log_q) = self.base.sample_on(tape, &self.params, n, rng)?;
        for layer in &self.layers {
            let (next, ld) = match layer {
                Layer::Metropolis(mh) => {
                    mh.apply(tape, &self.params, z, &self.base, self.target.as_ref(), rng)?
                }
                _ => layer.apply(tape, &self.params, z, Direction::Forward)?,
            };
            z = next;
            log_q = log_q.sub(ld)?;
        }
        Ok((z, log_q))
    }

    /// Exact log density of data points, `n×D → n×1`.
    pub fn log_prob_on<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        if let Some(l) = self.layers.iter().find(|l| l.is_stochastic() || !l.supports(Direction::Inverse)) {
            return Err(Error::Capability {
                layer: l.name(),
                direction: Direction::Inverse,
            });
        }
        let (n, d) = x.shape();
        if d != self.dim() {
            return Err(Error::Shape {
                op: "model_log_prob",
                lhs: (n, d),
                rhs: (1, self.dim()),
            });
        }
        let mut z = x;
        let mut acc: Option<Var<'t>> = None;
        for layer in self.layers.iter().rev() {
            let (prev, ld) = layer.apply(tape, &self.params, z, Direction::Inverse)?;
            z = prev;
            acc = Some(match acc {
                Some(a) => a.add(ld)?,
                None => ld,
            });
        }
        let base = self.base.log_prob_on(tape, &self.params, z)?;
        match acc {
            Some(a) => base.add(a),
            None => Ok(base),
        }
    }

    pub fn log_prob(&self, x: &Matrix) -> Result<Matrix> {
        let mut parts = Vec::new();
        let mut start = 0;
        while start < x.rows() {
            let end = (start + CHUNK).min(x.rows());
            let tape = Tape::new();
            let lp = self.log_prob_on(&tape, tape.constant(x.slice_rows(start, end)))?;
            parts.push((*lp.value()).clone());
            start = end;
        }
        let refs: Vec<&Matrix> = parts.iter().collect();
        Matrix::concat_rows(&refs)
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<(Matrix, Matrix)> {
        if n == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        let mut xs = Vec::new();
        let mut lqs = Vec::new();
        let mut done = 0;
        while done < n {
            let m = CHUNK.min(n - done);
            let tape = Tape::new();
            let (x, lq) = self.sample_on(&tape, m, rng)?;
            xs.push((*x.value()).clone());
            lqs.push((*lq.value()).clone());
            done += m;
        }
        let xr: Vec<&Matrix> = xs.iter().collect();
        let lr: Vec<&Matrix> = lqs.iter().collect();
        Ok((Matrix::concat_rows(&xr)?, Matrix::concat_rows(&lr)?))
    }

    pub fn needs_data_init(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::ActNorm(a) if !a.is_initialized()))
    }

    /// Initializes ActNorm layers from a data batch, walking data → base.
    pub fn data_init_inverse(&mut self, x: &Matrix) -> Result<()> {
        let mut cur = x.clone();
        for i in (0..self.layers.len()).rev() {
            if let Layer::ActNorm(a) = &mut self.layers[i] {
                if !a.is_initialized() {
                    a.initialize(&mut self.params, &cur, Direction::Inverse)?;
                }
            }
            cur = self.layers[i].apply_values(&self.params, &cur, Direction::Inverse)?.0;
        }
        Ok(())
    }

    /// Initializes ActNorm layers from a base batch, walking base → data.
    /// Stochastic layers are skipped during the walk.
    pub fn data_init_forward(&mut self, z: &Matrix) -> Result<()> {
        let mut cur = z.clone();
        for i in 0..self.layers.len() {
            if self.layers[i].is_stochastic() {
                continue;
            }
            if let Layer::ActNorm(a) = &mut self.layers[i] {
                if !a.is_initialized() {
                    a.initialize(&mut self.params, &cur, Direction::Forward)?;
                }
            }
            cur = self.layers[i].apply_values(&self.params, &cur, Direction::Forward)?.0;
        }
        Ok(())
    }
}
