//! Independent numerical oracles shared by the integration tests:
//! central finite differences, determinants and trapezoid quadrature.
#![allow(dead_code)]

use flowkit_core::flows::{ActNorm, AffineCoupling, Layer, Maf, Permute, RqCoupling};
use flowkit_core::math;
use flowkit_core::numcore::{Matrix, ParamStore, Rng, Stream, Tape, Var};
use flowkit_core::{BaseDist, CoordKind, Direction, FlowModel, Result};

pub const FD_STEP: f64 = 1e-6;

/// Relative error with a small absolute floor for gradients near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Compares backprop gradients of `f` against central differences over
/// every trainable parameter entry; returns the worst relative error.
pub fn max_grad_error<F>(store: &ParamStore, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let root = f(&tape, store).unwrap();
    let grads = tape.backward(root).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = store.clone();
    for id in store.ids() {
        if !store.is_trainable(id) {
            continue;
        }
        let analytic = grads.get(id).cloned().unwrap_or_else(|| {
            let (r, c) = store.get(id).shape();
            Matrix::zeros(r, c)
        });
        for k in 0..store.get(id).data().len() {
            let orig = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let up = eval(&probe, &f);
            probe.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let down = eval(&probe, &f);
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(analytic.data()[k], numeric);
            if e > worst {
                worst = e;
            }
        }
    }
    worst
}

fn eval<F>(store: &ParamStore, f: &F) -> f64
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    f(&tape, store).unwrap().value().item()
}

/// Fixed random weights used to scalarize matrix outputs.
pub fn weights(seed: u64, rows: usize, cols: usize) -> Matrix {
    Rng::new(seed)
        .stream(Stream::Data)
        .uniform_matrix(rows, cols, -1.0, 1.0)
        .unwrap()
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut a = m.clone();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a.get(i, c).abs().partial_cmp(&a.get(j, c).abs()).unwrap())
            .unwrap();
        if a.get(p, c) == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..n {
                let t = a.get(c, k);
                a.set(c, k, a.get(p, k));
                a.set(p, k, t);
            }
            d = -d;
        }
        d *= a.get(c, c);
        for r in c + 1..n {
            let f = a.get(r, c) / a.get(c, c);
            for k in c..n {
                a.set(r, k, a.get(r, k) - f * a.get(c, k));
            }
        }
    }
    d
}

/// Central-difference Jacobian of a row map `R^D → R^D`, for one point.
/// Output differences on circular columns are wrapped to `[-π, π)`.
pub fn fd_jacobian(f: &dyn Fn(&Matrix) -> Matrix, x: &[f64], circular_out: &[bool]) -> Matrix {
    let d = x.len();
    let mut jac = Matrix::zeros(d, d);
    for j in 0..d {
        let mut up = x.to_vec();
        up[j] += FD_STEP;
        let mut down = x.to_vec();
        down[j] -= FD_STEP;
        let fu = f(&Matrix::row_vector(&up));
        let fd = f(&Matrix::row_vector(&down));
        for i in 0..d {
            let mut diff = fu.get(0, i) - fd.get(0, i);
            if circular_out[i] {
                diff = math::wrap_angle(diff);
            }
            jac.set(i, j, diff / (2.0 * FD_STEP));
        }
    }
    jac
}

/// Composite trapezoid weights on `points` equally spaced nodes.
pub fn trapezoid_nodes(lo: f64, hi: f64, points: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / (points - 1) as f64;
    let xs = (0..points).map(|i| lo + h * i as f64).collect();
    let ws = (0..points)
        .map(|i| if i == 0 || i == points - 1 { 0.5 * h } else { h })
        .collect();
    (xs, ws)
}

/// Trapezoid integral of `exp(log_density)` over a 2D box, evaluated in row blocks.
pub fn integrate_2d(
    log_density: &dyn Fn(&Matrix) -> Matrix,
    x_range: (f64, f64),
    y_range: (f64, f64),
    points: usize,
) -> f64 {
    let (xs, wx) = trapezoid_nodes(x_range.0, x_range.1, points);
    let (ys, wy) = trapezoid_nodes(y_range.0, y_range.1, points);
    let mut total = 0.0;
    for (j, &y) in ys.iter().enumerate() {
        let mut block = Matrix::zeros(points, 2);
        for (i, &x) in xs.iter().enumerate() {
            block.set(i, 0, x);
            block.set(i, 1, y);
        }
        let lp = log_density(&block);
        for i in 0..points {
            total += wx[i] * wy[j] * math::exp(lp.get(i, 0));
        }
    }
    total
}

/// Adds Gaussian noise of scale `sigma` to every parameter entry.
pub fn perturb(store: &mut ParamStore, sigma: f64, rng: &mut Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        let m = store.get_mut(id);
        let mut s = rng.stream(Stream::Init);
        for v in m.data_mut() {
            *v += sigma * s.normal();
        }
    }
}

/// Marks every ActNorm initialized so evaluation uses its raw parameters.
pub fn mark_initialized(model: &mut FlowModel) {
    for l in &mut model.layers {
        if let Layer::ActNorm(a) = l {
            a.set_initialized(true);
        }
    }
}

/// One of each invertible layer kind for `kinds`, indexed by `which`.
pub fn invertible_layer(
    which: usize,
    store: &mut ParamStore,
    prefix: &str,
    kinds: &[CoordKind],
    rng: &mut Rng,
) -> Option<Layer> {
    let d = kinds.len();
    let all_gauss = kinds.iter().all(|&k| k == CoordKind::Gaussian);
    let mask: Vec<bool> = (0..d).map(|i| i % 2 == which % 2).collect();
    let layer = match which % 5 {
        0 if all_gauss => Layer::ActNorm(ActNorm::new(store, prefix, d)),
        1 => Layer::Permute(Permute::reverse(d)),
        2 if d > 1 => {
            let trans_ok = (0..d).all(|i| mask[i] || kinds[i] == CoordKind::Gaussian);
            if !trans_ok {
                return None;
            }
            Layer::AffineCoupling(AffineCoupling::new(store, prefix, mask, kinds.to_vec(), &[8], rng).ok()?)
        }
        3 if all_gauss => Layer::Maf(Maf::new(store, prefix, d, &[8, 8], rng).ok()?),
        4 if d > 1 => Layer::RqCoupling(RqCoupling::new(store, prefix, mask, kinds.to_vec(), 5, 3.0, &[8], rng).ok()?),
        _ => return None,
    };
    Some(layer)
}

/// Random all-invertible model with `n_layers` layers over `kinds`, with
/// perturbed (non-identity) parameters.
pub fn random_model(kinds: &[CoordKind], n_layers: usize, sigma: f64, rng: &mut Rng) -> FlowModel {
    let mut store = ParamStore::new();
    let mut layers = Vec::new();
    let mut cur = kinds.to_vec();
    let mut attempt = rng.stream(Stream::Data).below(5);
    while layers.len() < n_layers {
        attempt += 1 + rng.stream(Stream::Data).below(3);
        let prefix = format!("layers.{}", layers.len());
        if let Some(l) = invertible_layer(attempt, &mut store, &prefix, &cur, rng) {
            cur = l.map_kinds(&cur);
            layers.push(l);
        }
    }
    perturb(&mut store, sigma, rng);
    let mut model = FlowModel::new(BaseDist::uniform_gaussian_mix(kinds.to_vec()), layers, store);
    mark_initialized(&mut model);
    model
}

pub fn apply(layer: &Layer, store: &ParamStore, z: &Matrix, dir: Direction) -> (Matrix, Matrix) {
    layer.apply_values(store, z, dir).unwrap()
}
