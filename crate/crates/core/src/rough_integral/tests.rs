use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::rng::{derive_seed, rng_from_seed};
use crate::rough_path::{lift_smooth, sample_bm_lift, Convention};

fn close(a: &[f64], b: &[f64], rel: f64) -> bool {
    let scale = a.iter().chain(b).fold(1.0_f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rel * scale)
}

fn random_rp(seed: u64, dim: usize, steps: usize) -> RoughPath {
    let mut rng = rng_from_seed(seed);
    let grid = TimeGrid::uniform(1.0, steps).unwrap();
    let values = (0..(steps + 1) * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let areas = (0..steps * dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    RoughPath::from_parts(grid, dim, values, areas).unwrap()
}

fn random_cp(seed: u64, grid: &TimeGrid, dx: usize, dy: usize) -> ControlledPath {
    let mut rng = rng_from_seed(seed);
    ControlledPath::from_fn(grid, dx, dy, |_, f, fp| {
        f.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        fp.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    })
    .unwrap()
}

fn random_partition(seed: u64, i: usize, j: usize) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let mut part = vec![i];
    part.extend((i + 1..j).filter(|_| rng.random_bool(0.5)));
    part.push(j);
    part
}

#[test]
fn constant_integrand_telescopes() {
    let rp = random_rp(1, 2, 12);
    let c = [0.5, -1.5, 2.0, 0.25];
    let cp = ControlledPath::constant(rp.grid(), 2, 2, &c).unwrap();
    let dy: Vec<f64> = rp.value(12).iter().zip(rp.value(0)).map(|(b, a)| b - a).collect();
    let expect = [c[0] * dy[0] + c[1] * dy[1], c[2] * dy[0] + c[3] * dy[1]];
    for seed in 0..10 {
        let part = random_partition(seed, 0, 12);
        assert!(close(&davie_sum(&cp, &rp, &part).unwrap(), &expect, 1e-13));
    }
}

#[test]
fn self_integral_is_partition_invariant() {
    let rp = random_rp(2, 3, 16);
    let cp = ControlledPath::identity_of(&rp);
    let inc = rp.increment(0, 16).unwrap();
    let y0 = rp.value(0);
    let expect: Vec<f64> = (0..9).map(|e| y0[e / 3] * inc.first[e % 3] + inc.second[e]).collect();
    for seed in 0..20 {
        let part = random_partition(seed, 0, 16);
        assert!(close(&davie_sum(&cp, &rp, &part).unwrap(), &expect, 1e-12));
    }
    let ri = rough_integral(&cp, &rp, (0, 16)).unwrap();
    assert_eq!(ri.refinement_trace.len(), 4);
    for t in &ri.refinement_trace {
        assert!(close(&t.value, &expect, 1e-12));
    }
}

#[test]
fn left_point_sum_matches_scalar_ito_identity() {
    // the lift is built from the same fine sums: one fine step per interval
    let grid = TimeGrid::uniform(1.0, 256).unwrap();
    let rp = sample_bm_lift(1, &grid, 1, 8, Convention::Ito).unwrap();
    let cp = ControlledPath::from_fn(&grid, 1, 1, |i, f, fp| {
        f[0] = rp.value(i)[0];
        fp[0] = 0.0;
    })
    .unwrap();
    let full: Vec<usize> = (0..=256).collect();
    let v = davie_sum(&cp, &rp, &full).unwrap()[0];
    let w = rp.values();
    let qv: f64 = w.windows(2).map(|x| (x[1] - x[0]).powi(2)).sum();
    let expect = (w[256] * w[256] - w[0] * w[0] - qv) / 2.0;
    assert!((v - expect).abs() <= 1e-9, "{v} vs {expect}");
}

#[test]
fn window_additivity() {
    let rp = random_rp(5, 2, 20);
    let cp = random_cp(6, rp.grid(), 2, 2);
    let a = rough_integral(&cp, &rp, (3, 9)).unwrap().value;
    let b = rough_integral(&cp, &rp, (9, 17)).unwrap().value;
    let ab = rough_integral(&cp, &rp, (3, 17)).unwrap().value;
    let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    assert!(close(&sum, &ab, 1e-12));
    let path = integral_path(&cp, &rp).unwrap();
    let via_path: Vec<f64> = (0..2).map(|k| path[17 * 2 + k] - path[3 * 2 + k]).collect();
    assert!(close(&via_path, &ab, 1e-12));
}

#[test]
fn argument_errors() {
    let rp = random_rp(5, 2, 8);
    let cp = random_cp(6, rp.grid(), 1, 2);
    assert!(davie_sum(&cp, &rp, &[0, 3, 3, 8]).is_err());
    assert!(davie_sum(&cp, &rp, &[4, 2]).is_err());
    assert!(davie_sum(&cp, &rp, &[0, 9]).is_err());
    assert!(rough_integral(&cp, &rp, (4, 4)).is_err());
    let other = random_rp(5, 1, 8);
    assert!(matches!(davie_sum(&cp, &other, &[0, 8]), Err(Error::IncompatibleOperands(_))));
}

#[test]
fn smooth_integrand_trace_converges_at_sewing_rate() {
    // F = ∇φ(Y), F′ = ∇²φ(Y) with φ(y) = sin(y₁) y₂²; the integral is φ(Y_T) − φ(Y_0)
    let phi = |y: &[f64]| y[0].sin() * y[1] * y[1];
    let grid = TimeGrid::uniform(1.0, 1024).unwrap();
    let path = |t: f64| vec![(3.0 * t).sin() + t, (2.0 * t).cos()];
    let rp = lift_smooth(path, &grid, 16).unwrap();
    let cp = ControlledPath::from_fn(&grid, 1, 2, |i, f, fp| {
        let y = rp.value(i);
        f[0] = y[0].cos() * y[1] * y[1];
        f[1] = 2.0 * y[0].sin() * y[1];
        fp[0] = -y[0].sin() * y[1] * y[1];
        fp[1] = 2.0 * y[0].cos() * y[1];
        fp[2] = 2.0 * y[0].cos() * y[1];
        fp[3] = 2.0 * y[0].sin();
    })
    .unwrap();
    let exact = phi(rp.value(1024)) - phi(rp.value(0));
    let ri = rough_integral(&cp, &rp, (0, 1024)).unwrap();
    let mut table = ConvergenceTable::new();
    for t in ri.refinement_trace.iter().take(8) {
        table.push(t.mesh, "error", (t.value[0] - exact).abs(), None);
    }
    let fit = table.fit("error").unwrap();
    assert!(fit.rate >= 3.0 * 0.4 - 1.0, "rate {}", fit.rate);
}

#[test]
fn fatnorm_of_constant_integrand() {
    let grid = TimeGrid::uniform(1.0, 6).unwrap();
    let c = [3.0, 4.0];
    let cp = ControlledPath::constant(&grid, 1, 2, &c).unwrap();
    let rp = random_rp(1, 2, 6);
    let ens = ControlledEnsemble::new(vec![cp.clone(), cp], vec![rp]).unwrap();
    let r = estimate_fatnorm(&ens, 0.4, 8.0).unwrap();
    assert!((r.f_norm - 5.0).abs() < 1e-12);
    assert_eq!(r.fprime_norm, 0.0);
    let single = ControlledEnsemble::new(vec![ens.sample(0).clone()], vec![ens.driver(0).clone()]).unwrap();
    assert!(matches!(estimate_fatnorm(&single, 0.4, 8.0), Err(Error::InsufficientData { .. })));
}

fn bm_ensemble(m: usize, steps: usize, ff: usize, seed: u64) -> Vec<RoughPath> {
    let grid = TimeGrid::uniform(1.0, steps).unwrap();
    (0..m)
        .map(|k| sample_bm_lift(1, &grid, ff, derive_seed(seed, 1, k as u64), Convention::Ito).unwrap())
        .collect()
}

#[test]
fn identity_integrand_has_zero_remainder() {
    let drivers = bm_ensemble(50, 8, 4, 3);
    let samples = drivers.iter().map(ControlledPath::identity_of).collect();
    let ens = ControlledEnsemble::new(samples, drivers).unwrap();
    let r = estimate_fatnorm(&ens, 0.4, 8.0).unwrap();
    assert_eq!(r.conditional_remainder_norm, 0.0);
    assert_eq!(r.fatnorm_total, r.f_norm + r.fprime_norm);
}

#[test]
fn squared_brownian_remainder_has_unit_norm() {
    let drivers = bm_ensemble(10_000, 16, 1, 4);
    let samples = drivers
        .iter()
        .map(|rp| {
            ControlledPath::from_fn(rp.grid(), 1, 1, |i, f, fp| {
                let w = rp.value(i)[0];
                f[0] = w * w;
                fp[0] = 2.0 * w;
            })
            .unwrap()
        })
        .collect();
    let ens = ControlledEnsemble::new(samples, drivers).unwrap();
    let r = estimate_fatnorm(&ens, 0.4, 8.0).unwrap();
    assert!(
        (r.conditional_remainder_norm - 1.0).abs() <= 3.0 * r.remainder_stderr,
        "{} ± {}",
        r.conditional_remainder_norm,
        r.remainder_stderr
    );
}

#[test]
fn moment_check_of_zero_and_constant_integrands() {
    let rp = random_rp(9, 2, 16);
    let zero = ControlledPath::constant(rp.grid(), 1, 2, &[0.0, 0.0]).unwrap();
    let ens = ControlledEnsemble::new(vec![zero.clone(), zero], vec![rp.clone()]).unwrap();
    let check = increment_moment_check(&ens, 8.0, 0.4).unwrap();
    assert!(check.table.records.iter().all(|r| r.value == 0.0));

    let c = 2.5;
    let cp = ControlledPath::constant(rp.grid(), 1, 2, &[c, 0.0]).unwrap();
    let ens = ControlledEnsemble::new(vec![cp.clone(), cp], vec![rp.clone()]).unwrap();
    let check = increment_moment_check(&ens, 8.0, 0.4).unwrap();
    let holder = rp.holder_stats(0.4).unwrap().first_level_holder;
    let mut span = 1;
    for rec in &check.table.records {
        let direct = (0..=16 - span)
            .map(|i| c * (rp.value(i + span)[0] - rp.value(i)[0]).abs() / (span as f64 / 16.0).powf(0.4))
            .fold(0.0, f64::max);
        assert!((rec.value - direct).abs() <= 1e-12 * direct.max(1.0));
        assert!(rec.value <= c * holder * (1.0 + 1e-12));
        span *= 2;
    }
}

#[test]
fn self_integral_moments_are_bounded_across_scales() {
    let drivers = bm_ensemble(2000, 16, 16, 6);
    let samples = drivers.iter().map(ControlledPath::identity_of).collect();
    let ens = ControlledEnsemble::new(samples, drivers).unwrap();
    let check = increment_moment_check(&ens, 8.0, 0.4).unwrap();
    assert!(check.bounded, "{:?}", check.table);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn davie_sum_is_linear(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64, steps in 2usize..16) {
        let rp = random_rp(seed, 2, steps);
        let f = random_cp(seed ^ 1, rp.grid(), 2, 2);
        let g = random_cp(seed ^ 2, rp.grid(), 2, 2);
        let part = random_partition(seed ^ 3, 0, steps);
        let lhs = davie_sum(&f.combine(a, &g, b).unwrap(), &rp, &part).unwrap();
        let (sf, sg) = (davie_sum(&f, &rp, &part).unwrap(), davie_sum(&g, &rp, &part).unwrap());
        let rhs: Vec<f64> = sf.iter().zip(&sg).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn self_integral_partition_invariance(seed in any::<u64>(), dim in 1usize..4, steps in 2usize..24) {
        let rp = random_rp(seed, dim, steps);
        let cp = ControlledPath::identity_of(&rp);
        let full: Vec<usize> = (0..=steps).collect();
        let reference = davie_sum(&cp, &rp, &full).unwrap();
        let part = random_partition(seed ^ 7, 0, steps);
        prop_assert!(close(&davie_sum(&cp, &rp, &part).unwrap(), &reference, 1e-12));
    }
}
