//! Round trips, log-det consistency and exact-density self-consistency.

mod common;

use common::*;
use flowkit_core::flows::{ActNorm, Layer, Permute, Planar, Radial};
use flowkit_core::math::{self, HALF_LN_TAU};
use flowkit_core::numcore::{Matrix, ParamStore, Rng, Stream};
use flowkit_core::{BaseDist, CoordKind, Direction, FlowModel};

const ROUND_TRIP_TOL: f64 = 1e-8;
const LOGDET_TOL: f64 = 1e-5;

fn points(kinds: &[CoordKind], n: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    let mut s = rng.stream(Stream::Data);
    let mut m = Matrix::zeros(n, kinds.len());
    for r in 0..n {
        for (c, k) in kinds.iter().enumerate() {
            let v = match k {
                CoordKind::Gaussian => s.uniform(-4.0, 4.0),
                CoordKind::Circular => s.uniform(-math::PI, math::PI),
            };
            m.set(r, c, v);
        }
    }
    m
}

fn max_diff(a: &Matrix, b: &Matrix, kinds: &[CoordKind]) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..a.rows() {
        for (c, k) in kinds.iter().enumerate() {
            let mut d = a.get(r, c) - b.get(r, c);
            if *k == CoordKind::Circular {
                d = math::wrap_angle(d);
            }
            worst = worst.max(d.abs());
        }
    }
    worst
}

fn run_layers(model: &FlowModel, x: &Matrix, dir: Direction) -> (Matrix, Matrix) {
    let mut cur = x.clone();
    let mut ld = Matrix::zeros(x.rows(), 1);
    let order: Vec<&Layer> = match dir {
        Direction::Forward => model.layers.iter().collect(),
        Direction::Inverse => model.layers.iter().rev().collect(),
    };
    for l in order {
        let (next, d) = l.apply_values(&model.params, &cur, dir).unwrap();
        cur = next;
        ld.add_assign(&d);
    }
    (cur, ld)
}

/// Checks round trip and log-det antisymmetry for one layer over `kinds`.
fn check_round_trip(layer: &Layer, store: &ParamStore, kinds: &[CoordKind], seed: u64) {
    let out_kinds = layer.map_kinds(kinds);
    let z = points(kinds, 64, seed);
    let (x, ld_f) = layer.apply_values(store, &z, Direction::Forward).unwrap();
    let (z2, ld_i) = layer.apply_values(store, &x, Direction::Inverse).unwrap();
    let rt = max_diff(&z, &z2, kinds);
    assert!(rt < ROUND_TRIP_TOL, "{} round trip {rt}", layer.name());
    let anti = ld_f.zip_map(&ld_i, |a, b| (a + b).abs()).data().iter().cloned().fold(0.0, f64::max);
    assert!(anti < ROUND_TRIP_TOL, "{} logdet antisymmetry {anti}", layer.name());

    let x0 = points(&out_kinds, 64, seed + 1);
    let (z0, _) = layer.apply_values(store, &x0, Direction::Inverse).unwrap();
    let (x1, _) = layer.apply_values(store, &z0, Direction::Forward).unwrap();
    let rt = max_diff(&x0, &x1, &out_kinds);
    assert!(rt < ROUND_TRIP_TOL, "{} inverse-then-forward {rt}", layer.name());
}

/// Compares the layer log-det with log|det J| of a finite-difference Jacobian.
fn check_logdet(layer: &Layer, store: &ParamStore, kinds: &[CoordKind], seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for dir in [Direction::Forward, Direction::Inverse] {
        if !layer.supports(dir) {
            continue;
        }
        let in_kinds = match dir {
            Direction::Forward => kinds.to_vec(),
            Direction::Inverse => layer.map_kinds(kinds),
        };
        let out_circ: Vec<bool> = match dir {
            Direction::Forward => layer.map_kinds(kinds),
            Direction::Inverse => kinds.to_vec(),
        }
        .iter()
        .map(|k| *k == CoordKind::Circular)
        .collect();
        let pts = points(&in_kinds, 8, seed);
        let f = |m: &Matrix| layer.apply_values(store, m, dir).unwrap().0;
        for r in 0..pts.rows() {
            let row = pts.row(r).to_vec();
            let (_, ld) = layer.apply_values(store, &Matrix::row_vector(&row), dir).unwrap();
            let jac = fd_jacobian(&f, &row, &out_circ);
            let fd = det(&jac).abs().ln();
            worst = worst.max((ld.item() - fd).abs());
        }
    }
    assert!(worst < LOGDET_TOL, "{} log-det vs FD Jacobian: {worst}", layer.name());
    worst
}

fn kind_sets() -> Vec<Vec<CoordKind>> {
    use CoordKind::*;
    vec![
        vec![Gaussian],
        vec![Gaussian, Gaussian],
        vec![Gaussian, Gaussian, Gaussian],
        vec![Gaussian, Circular],
        vec![Circular, Gaussian],
        vec![Gaussian, Circular, Gaussian],
    ]
}

#[test]
fn every_invertible_layer_round_trips() {
    let mut rng = Rng::new(11);
    let mut checked = 0;
    for (ks, kinds) in kind_sets().iter().enumerate() {
        for which in 0..10 {
            let mut store = ParamStore::new();
            let Some(layer) = invertible_layer(which, &mut store, "l", kinds, &mut rng) else {
                continue;
            };
            perturb(&mut store, 0.5, &mut rng);
            check_round_trip(&layer, &store, kinds, (ks * 10 + which) as u64);
            checked += 1;
        }
    }
    assert!(checked >= 30, "only {checked} layer configurations");
}

#[test]
fn logdet_matches_finite_difference_jacobian() {
    let mut rng = Rng::new(12);
    for (ks, kinds) in kind_sets().iter().enumerate() {
        for which in 0..10 {
            let mut store = ParamStore::new();
            let Some(layer) = invertible_layer(which, &mut store, "l", kinds, &mut rng) else {
                continue;
            };
            perturb(&mut store, 0.5, &mut rng);
            check_logdet(&layer, &store, kinds, 500 + (ks * 10 + which) as u64);
        }
    }
}

#[test]
fn forward_only_layers_logdet_matches_jacobian() {
    let mut rng = Rng::new(13);
    for d in 1..=3 {
        let kinds = vec![CoordKind::Gaussian; d];
        for trial in 0..4 {
            let mut store = ParamStore::new();
            let planar = Layer::Planar(Planar::new(&mut store, "p", d, &mut rng).unwrap());
            perturb(&mut store, 1.0, &mut rng);
            assert!(!planar.supports(Direction::Inverse));
            check_logdet(&planar, &store, &kinds, 900 + trial);

            let mut store = ParamStore::new();
            let radial = Layer::Radial(Radial::new(&mut store, "r", d, &mut rng).unwrap());
            perturb(&mut store, 1.0, &mut rng);
            check_logdet(&radial, &store, &kinds, 950 + trial);
        }
    }
}

#[test]
fn random_composite_models_round_trip() {
    let mut rng = Rng::new(14);
    let sets = kind_sets();
    for trial in 0..100 {
        let kinds = &sets[trial % sets.len()];
        let n_layers = 2 + trial % 5;
        let model = random_model(kinds, n_layers, 0.3, &mut rng);
        let out_kinds = model.output_kinds();
        let z = points(kinds, 32, trial as u64);
        let (x, ld_f) = run_layers(&model, &z, Direction::Forward);
        let (z2, ld_i) = run_layers(&model, &x, Direction::Inverse);
        let rt = max_diff(&z, &z2, kinds);
        assert!(rt < ROUND_TRIP_TOL, "trial {trial}: round trip {rt}");
        for r in 0..z.rows() {
            let a = (ld_f.get(r, 0) + ld_i.get(r, 0)).abs();
            assert!(a < ROUND_TRIP_TOL, "trial {trial}: logdet antisymmetry {a}");
        }
        let xs = points(&out_kinds, 32, 1000 + trial as u64);
        let (zs, _) = run_layers(&model, &xs, Direction::Inverse);
        let (xs2, _) = run_layers(&model, &zs, Direction::Forward);
        assert!(max_diff(&xs, &xs2, &out_kinds) < ROUND_TRIP_TOL, "trial {trial}");
    }
}

#[test]
fn sample_log_q_matches_log_prob() {
    let mut rng = Rng::new(15);
    for (t, kinds) in kind_sets().iter().enumerate() {
        let model = random_model(kinds, 4, 0.3, &mut rng);
        let (x, log_q) = model.sample(200, &mut Rng::new(t as u64)).unwrap();
        let lp = model.log_prob(&x).unwrap();
        for r in 0..x.rows() {
            let d = (log_q.get(r, 0) - lp.get(r, 0)).abs();
            assert!(d < 1e-8, "kinds {kinds:?}: row {r} differs by {d}");
        }
    }
}

#[test]
fn permute_twice_is_identity() {
    let store = ParamStore::new();
    let p = Layer::Permute(Permute::new(vec![2, 0, 3, 1]).unwrap());
    let z = points(&[CoordKind::Gaussian; 4], 10, 1);
    let (once, ld) = p.apply_values(&store, &z, Direction::Forward).unwrap();
    assert_ne!(once, z);
    assert!(ld.data().iter().all(|&v| v == 0.0));
    let rev = Layer::Permute(Permute::reverse(4));
    let (a, _) = rev.apply_values(&store, &z, Direction::Forward).unwrap();
    let (b, _) = rev.apply_values(&store, &a, Direction::Forward).unwrap();
    assert_eq!(b, z);
    assert!(Permute::new(vec![0, 0, 1]).is_err());
}

#[test]
fn freshly_built_couplings_are_identity() {
    let mut rng = Rng::new(16);
    for kinds in kind_sets() {
        for which in [2, 4, 7, 9] {
            let mut store = ParamStore::new();
            let Some(layer) = invertible_layer(which, &mut store, "l", &kinds, &mut rng) else {
                continue;
            };
            let z = points(&kinds, 50, 3);
            for dir in [Direction::Forward, Direction::Inverse] {
                let (x, ld) = layer.apply_values(&store, &z, dir).unwrap();
                assert!(max_diff(&x, &z, &kinds) < 1e-12, "{}", layer.name());
                assert!(ld.data().iter().all(|v| v.abs() < 1e-12), "{}", layer.name());
            }
        }
    }
}

#[test]
fn actnorm_log_prob_formula() {
    let mut store = ParamStore::new();
    let mut an = ActNorm::new(&mut store, "an", 2);
    store.set(an.shift(), Matrix::row_vector(&[0.5, -1.0]));
    store.set(an.log_scale(), Matrix::row_vector(&[0.3, -0.2]));
    an.set_initialized(true);
    let model = FlowModel::new(
        BaseDist::uniform_gaussian_mix(vec![CoordKind::Gaussian; 2]),
        vec![Layer::ActNorm(an)],
        store,
    );
    let x = Matrix::from_rows(&[&[1.0, 2.0], &[-0.3, 0.0]]);
    let lp = model.log_prob(&x).unwrap();
    let (b, s) = ([0.5, -1.0], [0.3, -0.2]);
    for r in 0..2 {
        let mut want = 0.0;
        for c in 0..2 {
            let z = (x.get(r, c) - b[c]) * (-s[c] as f64).exp();
            want += -0.5 * z * z - HALF_LN_TAU - s[c];
        }
        assert!((lp.get(r, 0) - want).abs() < 1e-12);
    }
}

#[test]
fn empty_model_is_the_base() {
    let kinds = vec![CoordKind::Gaussian, CoordKind::Circular];
    let base = BaseDist::uniform_gaussian_mix(kinds.clone());
    let model = FlowModel::new(base.clone(), vec![], ParamStore::new());
    let x = points(&kinds, 20, 4);
    assert_eq!(model.log_prob(&x).unwrap(), base.log_prob(&ParamStore::new(), &x).unwrap());
    let (s, lq) = model.sample(5, &mut Rng::new(1)).unwrap();
    assert_eq!(lq, base.log_prob(&ParamStore::new(), &s).unwrap());
}

#[test]
fn shift_flow_moves_the_mean() {
    let mut store = ParamStore::new();
    let mut an = ActNorm::new(&mut store, "an", 1);
    store.set(an.shift(), Matrix::scalar(3.0));
    an.set_initialized(true);
    let model = FlowModel::new(BaseDist::uniform_gaussian_mix(vec![CoordKind::Gaussian]), vec![Layer::ActNorm(an)], store);
    let (x, _) = model.sample(100_000, &mut Rng::new(9)).unwrap();
    // standard error 1/sqrt(1e5) ~ 3.2e-3
    assert!((x.mean() - 3.0).abs() < 0.016, "{}", x.mean());
}
