use super::*;
use crate::rough_path::lift_smooth;
use crate::stats::mean;

fn linear() -> LinearFilterParams {
    LinearFilterParams::scalar(-1.0, 1.0, 0.5, 0.3, 1.0, 0.25)
}

fn brownian_model(f: f64) -> FilterModel {
    FilterModel {
        signal: RsdeSpec::new(1, 1, 1)
            .brownian(|_, out| out[0] = 1.0)
            .rough(move |_, out| out[0] = f),
        observation: ObservationFn::new(1, 1, |_, out| out[0] = 0.0),
        initial: InitialLaw::Dirac(vec![0.0]),
    }
}

#[test]
fn without_coupling_the_signal_is_its_own_brownian_motion() {
    let model = brownian_model(0.0);
    let grid = TimeGrid::uniform(1.0, 8).unwrap();
    let so = simulate_signal_observation(&model, &grid, 4, 3).unwrap();
    let b = BrownianDraw::sample(1, &so.fine, derive_seed(3, stream::BROWNIAN, 0)).path();
    for k in 0..=32 {
        assert!((so.signal[k] - b[k]).abs() < 1e-14);
    }
    assert_ne!(so.signal, so.observation);
}

#[test]
fn pure_observation_coupling_copies_the_observation() {
    let model = FilterModel {
        signal: RsdeSpec::new(1, 0, 1).rough(|_, out| out[0] = 0.8),
        observation: ObservationFn::new(1, 1, |_, out| out[0] = 0.0),
        initial: InitialLaw::Dirac(vec![2.0]),
    };
    let grid = TimeGrid::uniform(1.0, 8).unwrap();
    let so = simulate_signal_observation(&model, &grid, 4, 5).unwrap();
    for k in 0..=32 {
        assert!((so.signal[k] - 2.0 - 0.8 * so.observation[k]).abs() < 1e-14);
    }
}

#[test]
fn linear_signal_observation_covariance() {
    let p = linear();
    let model = p.model().unwrap();
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let prods: Vec<(f64, f64, f64)> = (0..10_000u64)
        .map(|s| {
            let so = simulate_signal_observation(&model, &grid, 16, s).unwrap();
            let (x, y) = (*so.signal.last().unwrap(), *so.observation.last().unwrap());
            (x, y, x * y)
        })
        .collect();
    let xs: Vec<f64> = prods.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = prods.iter().map(|p| p.1).collect();
    let xy: Vec<f64> = prods.iter().map(|p| p.2).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let cov_samples: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    let (c, se) = mean_se(&cov_samples);
    // dX = −X dt + σ dB + f dY: Cov(X_1, Y_1) = f (1 − e^{−1})
    let exact = 0.3 * (1.0 - (-1.0_f64).exp());
    assert!((c - exact).abs() <= 3.0 * se, "{c} vs {exact} (se {se})");
    let var_samples: Vec<f64> = xs.iter().map(|x| (x - mx).powi(2)).collect();
    let (v, se) = mean_se(&var_samples);
    let e2 = (-2.0_f64).exp();
    let exact = e2 * 0.25 + (0.25 + 0.09) * (1.0 - e2) / 2.0;
    assert!((v - exact).abs() <= 3.0 * se, "{v} vs {exact} (se {se})");
    assert!(xy.iter().all(|v| v.is_finite()));
}

#[test]
fn hardwired_bracket_is_the_identity() {
    let fine = TimeGrid::uniform(1.0, 256).unwrap();
    let coarse = TimeGrid::uniform(1.0, 16).unwrap();
    let y = BrownianDraw::sample(2, &fine, 4).path();
    let rp = hardwire_bracket(&y, &fine, &coarse).unwrap();
    let br = rp.bracket();
    for i in 0..=16 {
        let t = coarse.time(i);
        let v = br.value(i);
        assert!((v[0] - t).abs() < 1e-14 && (v[3] - t).abs() < 1e-14);
        assert!(v[1].abs() < 1e-14 && v[2].abs() < 1e-14);
    }
    assert!(hardwire_bracket(&y, &fine, &TimeGrid::uniform(1.0, 7).unwrap()).is_err());
}

#[test]
fn hardwiring_only_touches_the_symmetric_part() {
    let fine = TimeGrid::uniform(1.0, 64).unwrap();
    let coarse = TimeGrid::uniform(1.0, 8).unwrap();
    let path = |t: f64| vec![t.sin(), (2.0 * t).cos()];
    let values: Vec<f64> = fine.times().iter().flat_map(|&t| path(t)).collect();
    let rp = hardwire_bracket(&values, &fine, &coarse).unwrap();
    let smooth = lift_smooth(path, &coarse, 8).unwrap();
    for i in 0..8 {
        let (a, b) = (rp.area(i), smooth.area(i));
        let anti = |m: &[f64]| 0.5 * (m[1] - m[2]);
        assert!((anti(a) - anti(b)).abs() < 1e-12);
    }
}

#[test]
fn hardwiring_perturbation_shrinks_under_refinement() {
    let coarse = TimeGrid::uniform(1.0, 8).unwrap();
    let mut rms = Vec::new();
    for ff in [16, 64, 256] {
        let fine = coarse.refine(ff).unwrap();
        let sq: Vec<f64> = (0..200)
            .map(|s| {
                let y = BrownianDraw::sample(1, &fine, derive_seed(1, 1, s)).path();
                let ito = lift_fine_path(&y, &fine, &coarse, Convention::Ito).unwrap();
                let hw = hardwire_bracket(&y, &fine, &coarse).unwrap();
                (0..8).map(|i| (ito.area(i)[0] - hw.area(i)[0]).powi(2)).sum::<f64>() / 8.0
            })
            .collect();
        rms.push(mean(&sq).sqrt());
    }
    assert!(rms[0] > rms[1] && rms[1] > rms[2], "{rms:?}");
    // halving the fine mesh twice should roughly halve the perturbation
    assert!(rms[2] < 0.75 * rms[0], "{rms:?}");
}

#[test]
fn zero_observation_gives_unit_weights_and_the_prior() {
    let model = brownian_model(0.5);
    let grid = TimeGrid::uniform(1.0, 8).unwrap();
    let fine = grid.refine(4).unwrap();
    let y = BrownianDraw::sample(1, &fine, 2).path();
    let rp = hardwire_bracket(&y, &fine, &grid).unwrap();
    let phis = [Phi::component(0), Phi::one()];
    let est = rough_filter(&model, &rp, &phis, 50, 4, 9).unwrap();
    let prior: Vec<Vec<f64>> = (0..50)
        .map(|j| {
            let bm = BrownianDraw::sample(1, &fine, derive_seed(9, stream::BROWNIAN, j));
            crate::rsde::solve_rsde(&model.signal, &rp, &bm, &[0.0]).unwrap().states().to_vec()
        })
        .collect();
    for i in 0..=8 {
        let xs: Vec<f64> = prior.iter().map(|p| p[i]).collect();
        let (m, _) = mean_se(&xs);
        assert!((est.unnormalised[0][i] - m).abs() < 1e-14);
        assert!((est.normalised[0][i] - pairwise_sum(&xs) / 50.0).abs() < 1e-14);
        assert_eq!(est.unnormalised[1][i], 1.0);
        assert_eq!(est.normalised[1][i], 1.0);
    }
}

#[test]
fn weights_start_at_one_and_stay_positive() {
    let model = linear().model().unwrap();
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let so = simulate_signal_observation(&model, &grid, 8, 1).unwrap();
    let rp = hardwire_bracket(&so.observation, &so.fine, &grid).unwrap();
    let sq = Phi::component_squared(0);
    let est = rough_filter(&model, &rp, &[Phi::one(), sq], 200, 8, 2).unwrap();
    assert_eq!(est.unnormalised[0][0], 1.0);
    assert!(est.unnormalised[0].iter().all(|v| *v > 0.0));
    assert!(est.normalised[1].iter().all(|v| *v >= 0.0));
    assert!(est.to_csv().starts_with("time,phi_id,unnormalised,normalised,stderr\n"));
}

#[test]
fn huge_log_weights_are_clipped_or_reported() {
    let model = FilterModel {
        observation: ObservationFn::new(1, 1, |_, out| out[0] = 1e3),
        ..brownian_model(0.0)
    };
    let grid = TimeGrid::uniform(1.0, 4).unwrap();
    let fine = grid.refine(2).unwrap();
    let rp = hardwire_bracket(&fine.times().to_vec(), &fine, &grid).unwrap();
    // I_t = 1e3 t − ½·1e6 t: very negative, every weight underflows
    assert!(matches!(
        rough_filter(&model, &rp, &[Phi::one()], 4, 2, 1),
        Err(Error::WeightOverflow { node: 1, .. })
    ));
    let model = FilterModel {
        observation: ObservationFn::new(1, 1, |_, out| out[0] = 30.0),
        ..brownian_model(0.0)
    };
    let y: Vec<f64> = fine.times().iter().map(|t| 100.0 * t).collect();
    let rp = hardwire_bracket(&y, &fine, &grid).unwrap();
    // I_1 = 3000 − 450
    let est = rough_filter(&model, &rp, &[Phi::one()], 4, 2, 1).unwrap();
    assert!(est.clipped > 0);
    assert!(est.normalised[0].iter().all(|v| (*v - 1.0).abs() < 1e-12));
}

#[test]
fn uninformative_oracle_is_the_prior() {
    // H = 0, f = 0: mean m0 e^{At}, variance e^{2At} P0 + σ²(1 − e^{2At})/(−2A)
    let p = LinearFilterParams::scalar(-0.7, 0.0, 0.4, 0.0, 1.5, 0.3);
    let grid = TimeGrid::uniform(2.0, 400).unwrap();
    let y = BrownianDraw::sample(1, &grid, 1).path();
    let k = kalman_bucy_oracle(&p, &grid, &y).unwrap();
    for i in 0..=400 {
        let t = grid.time(i);
        let e = (-0.7 * t).exp();
        assert!((k.mean(i)[0] - 1.5 * e).abs() < 1e-9);
        let var = e * e * 0.3 + 0.16 * (1.0 - e * e) / 1.4;
        assert!((k.covariance(i)[0] - var).abs() < 1e-9);
    }
}

#[test]
fn scalar_riccati_closed_form() {
    let p = LinearFilterParams::scalar(0.0, 2.0, 0.0, 0.0, 0.0, 0.5);
    let grid = TimeGrid::uniform(1.0, 200).unwrap();
    let y = vec![0.0; 201];
    let k = kalman_bucy_oracle(&p, &grid, &y).unwrap();
    for i in 0..=200 {
        let exact = 0.5 / (1.0 + 0.5 * 4.0 * grid.time(i));
        assert!((k.covariance(i)[0] - exact).abs() < 1e-10);
    }
}

#[test]
fn riccati_settles_at_the_algebraic_root() {
    let p = linear();
    let grid = TimeGrid::uniform(20.0, 4000).unwrap();
    let k = kalman_bucy_oracle(&p, &grid, &vec![0.0; 4001]).unwrap();
    let root = -1.0 + 1.25_f64.sqrt();
    assert!((k.covariance(4000)[0] - root).abs() <= 1e-6);
}

#[test]
fn riccati_blow_up_is_an_oracle_failure() {
    let p = LinearFilterParams::scalar(0.0, 1.0, 0.0, 0.0, 0.0, -2.0);
    let grid = TimeGrid::uniform(1.0, 100).unwrap();
    assert!(matches!(kalman_bucy_oracle(&p, &grid, &vec![0.0; 101]), Err(Error::OracleFailure(_))));
}

#[test]
fn step_halving_bound_is_small_and_even_factor_is_required() {
    let p = linear();
    let coarse = TimeGrid::uniform(1.0, 8).unwrap();
    let fine = coarse.refine(16).unwrap();
    let y = BrownianDraw::sample(1, &fine, 6).path();
    let o = kalman_with_bound(&p, &fine, &y, &coarse).unwrap();
    assert_eq!(o.bound[0], 0.0);
    assert!(o.bound.iter().all(|b| *b < 1e-2));
    assert!(kalman_with_bound(&p, &coarse.refine(3).unwrap(), &y[..25], &coarse).is_err());
}

#[test]
fn rough_filter_tracks_kalman_at_small_scale() {
    let grid = TimeGrid::uniform(1.0, 32).unwrap();
    let c = compare_with_kalman(&linear(), &grid, 16, 2000, 17).unwrap();
    assert!(c.passed(), "gap {} threshold {}", c.sup_gap(), c.threshold());
}

#[test]
fn unit_mass_over_observation_draws() {
    let model = linear().model().unwrap();
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let u = unit_mass_check(&model, &grid, 8, 4000, 3).unwrap();
    assert_eq!(u.mean[0], 1.0);
    assert!(u.max_abs_z() <= 3.0, "{:?}", u.mean);
}
