use super::*;
use crate::rough_path::{lift_smooth, sample_bm_lift_with_draw};
use crate::rsde::{solve_rsde, RsdeSpec};

fn moments(value: impl Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> MomentCoefficient {
    MomentCoefficient {
        value: Arc::new(value),
        d_x: None,
        d_mean: None,
        d_var: None,
    }
}

fn structured(m: MomentCoefficient) -> RoughCoefficient {
    RoughCoefficient::Structured {
        moments: Some(m),
        kernel: None,
    }
}

fn interacting(a: f64, sigma: f64, c1: f64, c2: f64, x0: InitialLaw) -> MkvSpec {
    let mut m = moments(move |_, mean, _, out| out[0] = c1 + c2 * mean[0]);
    m.d_mean = Some(Arc::new(move |_, _, _, out| out[0] = c2));
    MkvSpec::new(1, 1, 1, x0)
        .drift(move |x, mu, out| out[0] = a * (mu.mean[0] - x[0]))
        .diffusion(move |_, _, out| out[0] = sigma)
        .rough(structured(m))
}

#[test]
fn empirical_moments_and_convolution() {
    let xs = [1.0, 2.0, 4.0, 5.0];
    let e = Empirical::new(1, &xs);
    assert_eq!(e.mean, vec![3.0]);
    assert_eq!(e.var, vec![2.5]);
    let mut out = [0.0];
    e.convolve(&[3.0], &|z, o| o[0] = z[0] * z[0], &mut out);
    assert_eq!(out[0], 2.5);
}

#[test]
fn mean_reverting_ensemble_at_its_mean_stays_put() {
    let spec = MkvSpec::new(1, 0, 0, InitialLaw::Dirac(vec![0.75])).drift(|x, mu, out| out[0] = mu.mean[0] - x[0]);
    let grid = TimeGrid::uniform(1.0, 8).unwrap();
    let ens = simulate_common_noise_particles(&spec, 64, &grid, 4, 1).unwrap();
    assert!(ens.states.iter().all(|v| *v == 0.75));
}

#[test]
fn independent_decay() {
    let spec = MkvSpec::new(1, 0, 0, InitialLaw::Dirac(vec![2.0])).drift(|x, _, out| out[0] = -x[0]);
    let grid = TimeGrid::uniform(1.0, 10).unwrap();
    let ens = simulate_common_noise_particles(&spec, 5, &grid, 100, 1).unwrap();
    for i in 0..=10 {
        let exact = 2.0 * (-grid.time(i)).exp();
        for p in 0..5 {
            assert!((ens.particle(i, p)[0] - exact).abs() < 2e-3);
        }
    }
}

#[test]
fn linear_model_mean_follows_the_common_noise() {
    let (sigma, f, n) = (0.5, 0.8, 400);
    let spec = MkvSpec::new(1, 1, 1, InitialLaw::Dirac(vec![0.0]))
        .drift(|x, mu, out| out[0] = 1.5 * (mu.mean[0] - x[0]))
        .diffusion(move |_, _, out| out[0] = sigma)
        .rough(structured(moments(move |_, _, _, out| out[0] = f)));
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let fine = grid.refine(16).unwrap();
    let w = BrownianDraw::sample(1, &fine, derive_seed(3, stream::DRIVER, 0));
    let ens = simulate_common_noise_particles(&spec, n, &grid, 16, 3).unwrap();
    let wt = w.path();
    let se = sigma * (1.0 / n as f64).sqrt();
    for i in 0..=16 {
        let m = ens.empirical(i).mean[0];
        assert!((m - f * wt[16 * i]).abs() <= 3.0 * se, "node {i}: {m}");
    }
}

#[test]
fn constant_rough_coefficient_shifts_every_particle() {
    let spec = MkvSpec::new(1, 0, 1, InitialLaw::gaussian_diag(vec![0.0], &[1.0]).unwrap()).rough(structured(moments(|_, _, _, out| out[0] = -0.6)));
    let grid = TimeGrid::uniform(1.0, 8).unwrap();
    let s = sample_bm_lift_with_draw(1, &grid, 4, 2, Convention::Ito).unwrap();
    let ens = solve_mkv_rsde_particles(&spec, &s.lift, 10, 4, 5).unwrap();
    for i in 0..=8 {
        let shift = -0.6 * (s.lift.value(i)[0] - s.lift.value(0)[0]);
        for p in 0..10 {
            assert!((ens.particle(i, p)[0] - ens.particle(0, p)[0] - shift).abs() < 1e-14);
        }
    }
}

#[test]
fn decoupled_particles_match_the_single_particle_solver() {
    let mut m = moments(|x, _, _, out| out[0] = x[0].sin() + 0.2 * x[0]);
    m.d_x = Some(Arc::new(|x, _, _, out| out[0] = x[0].cos() + 0.2));
    let spec = MkvSpec::new(1, 1, 1, InitialLaw::gaussian_diag(vec![0.5], &[0.1]).unwrap())
        .drift(|x, _, out| out[0] = -0.5 * x[0])
        .diffusion(|x, _, out| out[0] = 0.3 + 0.1 * x[0].cos())
        .rough(structured(m));
    let single = RsdeSpec::new(1, 1, 1)
        .drift(|e, out| out[0] = -0.5 * e.x[0])
        .brownian(|e, out| out[0] = 0.3 + 0.1 * e.x[0].cos())
        .rough(|e, out| out[0] = e.x[0].sin() + 0.2 * e.x[0])
        .jacobian(|e, out| out[0] = e.x[0].cos() + 0.2);
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let s = sample_bm_lift_with_draw(1, &grid, 8, 4, Convention::Ito).unwrap();
    let fine = s.draw.grid().clone();
    let noise = ParticleNoise::sample(&spec, 12, &fine, 77);
    let ens = solve_mkv_rsde_particles_with(&spec, &s.lift, &noise, &fine).unwrap();
    for p in 0..12 {
        let sol = solve_rsde(&single, &s.lift, &noise.draws[p], &noise.initial[p]).unwrap();
        for i in 0..=16 {
            assert_eq!(ens.particle(i, p), sol.state(i));
        }
    }
}

#[test]
fn mean_coupled_rough_term_closes_on_the_mean() {
    // f(x, μ) = mean μ: the mean solves dm = m d𝐘
    let mut m = moments(|_, mean, _, out| out[0] = mean[0]);
    m.d_mean = Some(Arc::new(|_, _, _, out| out[0] = 1.0));
    let spec = MkvSpec::new(1, 0, 1, InitialLaw::gaussian_diag(vec![1.0], &[0.2]).unwrap()).rough(structured(m));
    let grid = TimeGrid::uniform(1.0, 32).unwrap();
    let s = sample_bm_lift_with_draw(1, &grid, 4, 9, Convention::Ito).unwrap();
    let ens = solve_mkv_rsde_particles(&spec, &s.lift, 50, 4, 1).unwrap();
    let m0 = ens.empirical(0).mean[0];
    let scalar = RsdeSpec::new(1, 0, 1).rough(|e, out| out[0] = e.x[0]).jacobian(|_, out| out[0] = 1.0);
    let sol = solve_rsde(&scalar, &s.lift, &BrownianDraw::none(s.draw.grid()), &[m0]).unwrap();
    for i in 0..=32 {
        assert!((ens.empirical(i).mean[0] - sol.state(i)[0]).abs() < 1e-12);
    }
}

#[test]
fn variance_and_kernel_terms_match_finite_differences_of_the_ensemble() {
    // The particle-level Gubinelli derivative is the directional derivative
    // of x ↦ f(x_i, μ(x)) along the field (f_l)_l.
    let mut m = moments(|x, mean, var, out| out[0] = 0.3 * x[0] + mean[0] * var[0]);
    m.d_x = Some(Arc::new(|_, _, _, out| out[0] = 0.3));
    m.d_mean = Some(Arc::new(|_, _, var, out| out[0] = var[0]));
    m.d_var = Some(Arc::new(|_, mean, _, out| out[0] = mean[0]));
    let rough = RoughCoefficient::Structured {
        moments: Some(m),
        kernel: Some(KernelTerm {
            kernel: Arc::new(|z, o| o[0] = (-z[0] * z[0]).exp()),
            gradient: Arc::new(|z, o| o[0] = -2.0 * z[0] * (-z[0] * z[0]).exp()),
        }),
    };
    let x = [0.1, -0.4, 0.9, 1.3, -1.0];
    let n = x.len();
    let (mut fs, mut fps) = (vec![0.0; n], vec![0.0; n]);
    controlled_ensemble(&rough, 1, 1, &x, &mut fs, &mut fps).unwrap();
    let eps = 1e-6;
    let shifted = |s: f64| -> Vec<f64> {
        let xs: Vec<f64> = x.iter().zip(&fs).map(|(a, f)| a + s * f).collect();
        let e = Empirical::new(1, &xs);
        xs.iter()
            .map(|xi| {
                let mut o = [0.0];
                eval_rough(&rough, &[*xi], &e, &mut o);
                o[0]
            })
            .collect()
    };
    let (plus, minus) = (shifted(eps), shifted(-eps));
    for i in 0..n {
        let fd = (plus[i] - minus[i]) / (2.0 * eps);
        assert!((fd - fps[i]).abs() < 1e-7, "{i}: {fd} vs {}", fps[i]);
    }
}

#[test]
fn opaque_measure_dependence_is_rejected_by_the_rough_route() {
    let spec = MkvSpec::new(1, 0, 1, InitialLaw::Dirac(vec![0.0])).rough(RoughCoefficient::Opaque(Arc::new(|x, mu, out| out[0] = mu.mean[0].max(x[0]))));
    let grid = TimeGrid::uniform(1.0, 4).unwrap();
    let rp = lift_smooth(|t| vec![t], &grid, 2).unwrap();
    assert!(matches!(solve_mkv_rsde_particles(&spec, &rp, 4, 2, 1), Err(Error::PresetViolation(_))));
    assert!(simulate_common_noise_particles(&spec, 4, &grid, 2, 1).is_ok());
}

#[test]
fn permuting_particle_seeds_permutes_trajectories() {
    let spec = interacting(1.0, 0.5, 0.5, 0.5, InitialLaw::gaussian_diag(vec![0.0], &[0.5]).unwrap());
    let grid = TimeGrid::uniform(1.0, 8).unwrap();
    let fine = grid.refine(4).unwrap();
    let seeds: Vec<(u64, u64)> = (0..9).map(|i| (100 + i, 200 + i)).collect();
    let perm = [4, 7, 0, 2, 8, 1, 6, 3, 5];
    let permuted: Vec<(u64, u64)> = perm.iter().map(|&i| seeds[i]).collect();
    let (na, nb) = (ParticleNoise::from_seeds(&spec, &fine, &seeds), ParticleNoise::from_seeds(&spec, &fine, &permuted));
    let w = BrownianDraw::sample(1, &fine, 1);
    let rp = lift_brownian_draw(&w, &grid, Convention::Ito).unwrap().lift;
    let (a, b) = (
        simulate_common_noise_particles_with(&spec, &w, &na, &grid).unwrap(),
        simulate_common_noise_particles_with(&spec, &w, &nb, &grid).unwrap(),
    );
    let (ra, rb) = (
        solve_mkv_rsde_particles_with(&spec, &rp, &na, &fine).unwrap(),
        solve_mkv_rsde_particles_with(&spec, &rp, &nb, &fine).unwrap(),
    );
    for node in 0..=8 {
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(a.particle(node, i), b.particle(node, j));
            assert_eq!(ra.particle(node, i), rb.particle(node, j));
        }
    }
}

#[test]
fn frozen_ensemble_is_conserved() {
    let spec = MkvSpec::new(2, 0, 1, InitialLaw::gaussian_diag(vec![0.0, 1.0], &[1.0, 2.0]).unwrap());
    let grid = TimeGrid::uniform(1.0, 4).unwrap();
    let rp = lift_smooth(|t| vec![t], &grid, 2).unwrap();
    let ens = solve_mkv_rsde_particles(&spec, &rp, 6, 2, 3).unwrap();
    for i in 1..=4 {
        assert_eq!(ens.node(i), ens.node(0));
    }
}

#[test]
fn wasserstein_distances() {
    assert_eq!(wasserstein1(&[0.0, 1.0], &[1.0, 0.0]), 0.0);
    assert!((wasserstein1(&[0.0, 1.0, 2.0], &[0.5, 1.5, 2.5]) - 0.5).abs() < 1e-15);
    // {0, 1} vs {0, 0.5, 1}: ∫|F_a − F_b| = 0.5·(1/2 − 1/3) + 0.5·(2/3 − 1/2)
    assert!((wasserstein1(&[0.0, 1.0], &[0.0, 0.5, 1.0]) - 1.0 / 6.0).abs() < 1e-15);
    let a = [0.0, 0.0, 1.0, 1.0];
    let b = [0.5, 0.5, 1.5, 1.5];
    let sw = sliced_wasserstein1(&a, &b, 2, 32, 1);
    let again = sliced_wasserstein1(&a, &b, 2, 32, 1);
    assert_eq!(sw, again);
    assert!(sw > 0.0 && sw <= 0.5_f64.sqrt() + 1e-12);
}

#[test]
fn point_mass_conditional_laws_agree() {
    let spec = MkvSpec::new(1, 0, 1, InitialLaw::Dirac(vec![1.0]))
        .drift(|x, mu, out| out[0] = mu.mean[0] - x[0])
        .rough(structured(moments(|_, _, _, out| out[0] = 0.4)));
    let rep = conditional_mkv_check(&spec, &[4, 8], 3, &[8, 16], 1.0, 8, 2).unwrap();
    assert!(rep.rows.iter().all(|r| r.w1 < 1e-12), "{}", rep.rows_csv());
}

#[test]
fn decoupled_gaussian_laws_converge_in_the_particle_number() {
    let spec = MkvSpec::new(1, 1, 1, InitialLaw::Dirac(vec![0.0]))
        .diffusion(|_, _, out| out[0] = 1.0)
        .rough(structured(moments(|_, _, _, out| out[0] = 0.7)));
    let rep = conditional_mkv_check(&spec, &[50, 800], 8, &[4, 8], 1.0, 4, 5).unwrap();
    let (small, large) = (rep.median_w1(50, 8), rep.median_w1(800, 8));
    // N^{-1/2}: a factor 4 between the two particle counts
    assert!(large < 0.5 * small, "{small} vs {large}");
    let fit = rep.table.fit("median_w1_steps8").unwrap();
    // slope against N, not against a mesh
    assert!(fit.rate < -0.3 && fit.rate > -0.8, "{fit:?}");
}
