use super::*;
use crate::rsde::Jacobian;

fn nonlinear() -> RsdeSpec {
    RsdeSpec::new(1, 1, 1)
        .drift(|e, out| out[0] = -e.x[0])
        .brownian(|_, out| out[0] = 0.3)
        .rough(|e, out| out[0] = 0.5 * e.x[0].sin())
        .jacobian(|e, out| out[0] = 0.5 * e.x[0].cos())
}

fn experiment(rsde: RsdeSpec, n: usize, ff: usize) -> RandomisationExperiment {
    RandomisationExperiment {
        rsde,
        driver: DriverSpec::Brownian { dim: 1 },
        x0: vec![1.0],
        grid: TimeGrid::uniform(1.0, n).unwrap(),
        fine_factor: ff,
        seed: 11,
    }
}

#[test]
fn without_rough_term_the_driver_is_irrelevant() {
    let spec = RsdeSpec::new(1, 1, 1).drift(|e, out| out[0] = -e.x[0]).brownian(|_, out| out[0] = 0.3);
    let exp = experiment(spec, 16, 4);
    let a = randomised_solution(&exp, 1, 5).unwrap();
    let b = randomised_solution(&exp, 2, 5).unwrap();
    assert_eq!(a.states(), b.states());
    let d = doubly_stochastic_solution(&exp, 3, 5).unwrap();
    assert_eq!(a.states(), d.states());
}

#[test]
fn additive_model_is_reproduced_exactly() {
    let spec = RsdeSpec::new(1, 0, 1).rough(|_, out| out[0] = 1.0);
    let exp = experiment(spec, 16, 8);
    let driver = exp.sample_driver(9).unwrap();
    let r = randomised_solution(&exp, 9, 1).unwrap();
    let d = doubly_stochastic_solution(&exp, 9, 1).unwrap();
    for i in 0..=16 {
        let ds = driver.lift.value(i)[0] - driver.lift.value(0)[0];
        assert!((r.state(i)[0] - 1.0 - ds).abs() < 1e-12);
        assert!((d.state(i)[0] - 1.0 - ds).abs() < 1e-12);
    }
    let report = pathwise_coupling_report(&exp, &[4, 8, 16], 20).unwrap();
    assert!(report.table.records.iter().all(|r| r.value <= 1e-12));
}

#[test]
fn constant_integrand_with_noise_matches_the_closed_form() {
    let spec = RsdeSpec::new(1, 1, 1)
        .brownian(|_, out| out[0] = 0.4)
        .rough(|_, out| out[0] = -0.7)
        .jacobian_mode(Jacobian::Zero);
    let exp = experiment(spec, 8, 4);
    let driver = exp.sample_driver(3).unwrap();
    let bm = exp.sample_brownian(4).unwrap();
    let r = randomised_from(&exp, &driver, &bm).unwrap();
    let d = doubly_from(&exp, &driver, &bm).unwrap();
    let b = bm.path();
    for i in 0..=8 {
        let expect = 1.0 + 0.4 * b[4 * i] - 0.7 * driver.fine_path[4 * i];
        assert!((r.state(i)[0] - expect).abs() < 1e-12);
        assert!((d.state(i)[0] - expect).abs() < 1e-12);
    }
}

#[test]
fn both_routes_are_seed_deterministic() {
    let exp = experiment(nonlinear(), 8, 4);
    assert_eq!(
        randomised_solution(&exp, 1, 2).unwrap().states(),
        randomised_solution(&exp, 1, 2).unwrap().states()
    );
    assert_eq!(
        doubly_stochastic_solution(&exp, 1, 2).unwrap().states(),
        doubly_stochastic_solution(&exp, 1, 2).unwrap().states()
    );
}

#[test]
fn later_driver_changes_do_not_affect_the_past() {
    let exp = experiment(nonlinear(), 16, 4);
    let noise = BrownianDraw::sample(1, &exp.fine_grid().unwrap(), 21);
    let mut inc = noise.increments().to_vec();
    for v in inc.iter_mut().skip(32) {
        *v = -3.0 * *v + 0.1;
    }
    let altered = BrownianDraw::from_increments(noise.grid(), 1, inc).unwrap();
    let bm = exp.sample_brownian(22).unwrap();
    let a = exp.driver_from_noise(noise).unwrap();
    let b = exp.driver_from_noise(altered).unwrap();
    let (ra, rb) = (randomised_from(&exp, &a, &bm).unwrap(), randomised_from(&exp, &b, &bm).unwrap());
    let (da, db) = (doubly_from(&exp, &a, &bm).unwrap(), doubly_from(&exp, &b, &bm).unwrap());
    // fine step 32 is coarse node 8
    for i in 0..=8 {
        assert_eq!(ra.state(i), rb.state(i));
        assert_eq!(da.state(i), db.state(i));
    }
    assert_ne!(ra.terminal(), rb.terminal());
}

#[test]
fn non_causal_equations_are_rejected() {
    let exp = experiment(nonlinear().causal(false), 8, 2);
    assert!(randomised_solution(&exp, 1, 1).is_err());
    let wrong = RandomisationExperiment {
        driver: DriverSpec::Brownian { dim: 2 },
        ..experiment(nonlinear(), 8, 2)
    };
    assert!(wrong.validate().is_err());
    assert!(pathwise_coupling_report(&experiment(nonlinear(), 8, 2), &[4, 8], 4).is_err());
}

#[test]
fn routes_couple_under_refinement() {
    let exp = experiment(nonlinear(), 8, 4);
    let report = pathwise_coupling_report(&exp, &[8, 16, 32, 64], 200).unwrap();
    let fit = report.fit.unwrap();
    assert!(report.strictly_decreasing, "{}", report.summary());
    assert!(fit.rate >= 0.4, "{}", report.summary());
}

#[test]
fn constant_test_function_has_no_gap() {
    let exp = experiment(nonlinear(), 8, 2);
    let rep = conditional_law_report(&exp, &[TestFn::one()], 3, 10).unwrap();
    for d in &rep.draws {
        assert_eq!(d.rough_mean, 1.0);
        assert_eq!(d.doubly_mean, 1.0);
        assert_eq!(d.z, 0.0);
    }
    assert_eq!(rep.pass_fraction[0].1, 1.0);
}

#[test]
fn additive_conditional_means_agree() {
    let spec = RsdeSpec::new(1, 1, 1)
        .brownian(|_, out| out[0] = 0.5)
        .rough(|_, out| out[0] = 1.0)
        .jacobian_mode(Jacobian::Zero);
    let exp = experiment(spec, 8, 2);
    let rep = conditional_law_report(&exp, &[TestFn::component(0)], 20, 400).unwrap();
    assert!(rep.pass_fraction[0].1 >= 0.95, "{}", rep.summary());
    for (i, d) in rep.draws.iter().enumerate() {
        let s = exp.sample_driver(derive_seed(exp.seed, stream::DRIVER, i as u64)).unwrap();
        let centre = 1.0 + s.lift.value(8)[0];
        assert!((d.rough_mean - centre).abs() <= 4.0 * d.rough_se);
    }
    assert!(rep.tower[0].z.abs() <= 3.0);
}

#[test]
fn diffusion_driver_uses_its_drift() {
    let driver = ItoDiffusionSpec::new(
        vec![0.0],
        1,
        |_, _, out| out[0] = 2.0,
        |_, _, out| out[0] = 0.0,
    );
    let spec = RsdeSpec::new(1, 0, 1).rough(|_, out| out[0] = 1.0);
    let exp = RandomisationExperiment {
        driver: DriverSpec::Diffusion(driver),
        ..experiment(spec, 8, 4)
    };
    let r = randomised_solution(&exp, 1, 1).unwrap();
    let d = doubly_stochastic_solution(&exp, 1, 1).unwrap();
    for i in 0..=8 {
        let expect = 1.0 + 2.0 * exp.grid.time(i);
        assert!((r.state(i)[0] - expect).abs() < 1e-12);
        assert!((d.state(i)[0] - expect).abs() < 1e-12);
    }
}
