use super::*;
use crate::stats::mean;

fn cir() -> VarianceModel {
    VarianceModel::Cir {
        v0: 0.04,
        kappa: 1.5,
        theta: 0.04,
        xi: 0.3,
    }
}

#[test]
fn bachelier_limits() {
    assert_eq!(bachelier_call(1.2, 0.0, 1.0), 1.2 - 1.0);
    assert_eq!(bachelier_call(0.8, 0.0, 1.0), 0.0);
    let (m, s) = (0.3, 0.2);
    let k = m - 10.0 * s;
    assert!((bachelier_call(m, s, k) - (m - k)).abs() <= 1e-6 * s);
    // at the money: s φ(0)
    let atm = 0.2 / (2.0 * std::f64::consts::PI).sqrt();
    assert!((bachelier_call(m, s, m) - atm).abs() < 1e-15);
}

#[test]
fn oracle_reduces_to_bachelier_for_constant_variance() {
    let model = LsvModel::unit(0.0, VarianceModel::Constant { v: 0.09 }, 1.0);
    let fine = TimeGrid::uniform(2.0, 64).unwrap();
    let f = sample_factor(&model, &fine, 3);
    assert!((f.residual_variance - 0.18).abs() < 1e-14);
    let o = mixing_formula_oracle(&model, &f, &Payoff::Call { strike: 1.1 }).unwrap();
    assert!((o - bachelier_call(1.0, 0.18_f64.sqrt(), 1.1)).abs() < 1e-14);
    let lv = LsvModel::unit(0.0, VarianceModel::Constant { v: 0.09 }, 1.0).local_vol(|_, x| x);
    assert!(mixing_formula_oracle(&lv, &f, &Payoff::Identity).is_err());
}

#[test]
fn variance_paths_are_nonnegative() {
    let fine = TimeGrid::uniform(1.0, 512).unwrap();
    let harsh = VarianceModel::Cir {
        v0: 0.01,
        kappa: 0.5,
        theta: 0.01,
        xi: 1.0,
    };
    for s in 0..20 {
        let w = BrownianDraw::sample(1, &fine, s);
        assert!(harsh.path(&w).iter().all(|v| *v >= 0.0));
        let ou = VarianceModel::LognormalOu {
            v0: 0.04,
            kappa: 1.0,
            mu: 0.04_f64.ln(),
            xi: 0.5,
        };
        assert!(ou.path(&w).iter().all(|v| *v > 0.0));
    }
    assert!(VarianceModel::Constant { v: -1.0 }.validate().is_err());
}

#[test]
fn joint_simulation_special_cases() {
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let fine = grid.refine(8).unwrap();
    let zero = LsvModel::unit(0.3, cir(), 0.7).local_vol(|_, _| 0.0);
    assert!(simulate_lsv_joint(&zero, &grid, 8, 20, 1).unwrap().iter().all(|x| *x == 0.7));

    let full = LsvModel::unit(1.0, cir(), 0.0);
    let xs = simulate_lsv_joint(&full, &grid, 8, 20, 1).unwrap();
    for (j, x) in xs.iter().enumerate() {
        let f = sample_factor(&full, &fine, derive_seed(1, stream::TOWER, 2 * j as u64));
        assert_eq!(*x, *f.m.last().unwrap());
    }

    let flat = LsvModel::unit(0.0, VarianceModel::Constant { v: 0.25 }, 1.0);
    let xs = simulate_lsv_joint(&flat, &grid, 8, 10_000, 2).unwrap();
    let (m, se) = mean_se(&xs);
    assert!((m - 1.0).abs() <= 3.0 * se);
    let sq: Vec<f64> = xs.iter().map(|x| (x - 1.0).powi(2)).collect();
    let (v, se) = mean_se(&sq);
    assert!((v - 0.25).abs() <= 3.0 * se);
}

#[test]
fn bracket_recovers_constant_variance() {
    let model = LsvModel::unit(0.5, VarianceModel::Constant { v: 0.2 }, 0.0);
    let coarse = TimeGrid::uniform(1.0, 16).unwrap();
    let mut rms = Vec::new();
    for ff in [4, 16, 64] {
        let fine = coarse.refine(ff).unwrap();
        let sq: Vec<f64> = (0..200)
            .map(|s| {
                let f = sample_factor(&model, &fine, s);
                let rp = lift_fine_path(&f.m, &fine, &coarse, Convention::Ito).unwrap();
                let (v, floored) = bracket_derivative(&rp);
                assert_eq!(floored, 0);
                mean(&v.iter().map(|x| (x - 0.2).powi(2)).collect::<Vec<_>>())
            })
            .collect();
        rms.push(mean(&sq).sqrt());
    }
    assert!(rms[0] > rms[1] && rms[1] > rms[2], "{rms:?}");
    // quadrupling the fine factor halves the error
    assert!(rms[2] < 0.35 * rms[0], "{rms:?}");
}

#[test]
fn uncorrelated_conditional_price_is_bachelier() {
    let model = LsvModel::unit(0.0, VarianceModel::Constant { v: 0.16 }, 1.0);
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let rep = conditional_price_rough(&model, &Payoff::calls(&[0.9, 1.0, 1.2]), 5, 2000, &grid, 8, 4).unwrap();
    for d in &rep.draws {
        let k: f64 = d.payoff[5..].parse().unwrap();
        let exact = bachelier_call(1.0, 0.4, k);
        assert!((d.oracle.unwrap() - exact).abs() < 1e-14);
        // the rough route is Gaussian with the recovered variance, which is
        // exactly the variance behind the scheme bound
        let bound = d.scheme_bound.unwrap();
        assert!(bound < 0.02);
        assert!((d.rough - exact).abs() <= 3.0 * d.rough_se + bound, "{d:?}");
    }
}

#[test]
fn linear_payoff_is_the_conditional_mean() {
    let model = LsvModel::unit(0.7, cir(), 1.0);
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let rep = conditional_price_rough(&model, &[Payoff::Identity], 8, 1000, &grid, 8, 5).unwrap();
    for d in &rep.draws {
        assert!((d.rough - d.oracle.unwrap()).abs() <= 3.0 * d.rough_se, "{d:?}");
        assert_eq!(d.scheme_bound, Some(0.0));
    }
}

#[test]
fn correlated_cir_prices_match_the_mixing_formula() {
    let model = LsvModel::unit(0.7, cir(), 1.0);
    let grid = TimeGrid::uniform(1.0, 32).unwrap();
    let strikes = [0.9, 0.95, 1.0, 1.05, 1.1];
    let rep = conditional_price_rough(&model, &Payoff::calls(&strikes), 10, 2000, &grid, 8, 6).unwrap();
    assert!(rep.draw_pass_fraction().unwrap() >= 0.9, "{}", rep.draws_csv());
    assert!(rep.oracle_monotone());
    assert!(rep.tower_z().iter().all(|z| z.abs() <= 3.0), "{}", rep.to_csv());
    assert!(rep.to_csv().starts_with("strike,route,price,stderr,z\n"));
}

#[test]
fn invalid_models_are_rejected() {
    let grid = TimeGrid::uniform(1.0, 4).unwrap();
    let bad = LsvModel::unit(1.5, cir(), 0.0);
    assert!(conditional_price_rough(&bad, &[Payoff::Identity], 2, 2, &grid, 2, 1).is_err());
    let ok = LsvModel::unit(0.5, cir(), 0.0);
    assert!(conditional_price_rough(&ok, &[Payoff::Identity], 1, 2, &grid, 2, 1).is_err());
}
