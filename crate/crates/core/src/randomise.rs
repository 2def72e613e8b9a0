//! Randomisation of the rough driver.
//!
//! Two ways of producing the same process:
//!
//! * **randomised**: sample a driver `S(ω″)`, Itô-lift it, and solve the rough
//!   SDE against the frozen lift with an independent Brownian motion `B(ω′)`;
//! * **doubly stochastic**: Euler–Maruyama for
//!   `dX = (b + f β) dt + σ dB + f γ dW` on the fine grid, i.e. `f dS` with
//!   `dS = β dt + γ dW` the driver's own increment.
//!
//! Both consume the same fine increments of `W` and `B` for equal seeds, so
//! they can be compared path by path as well as in conditional law.

use std::sync::Arc;

use rayon::prelude::*;

use crate::brownian::BrownianDraw;
use crate::convergence::ConvergenceTable;
use crate::error::{invalid, Result};
use crate::grid::TimeGrid;
use crate::rng::{derive_seed, stream};
use crate::rough_path::{lift_fine_path, simulate_ito_diffusion, Convention, ItoDiffusionSpec, RoughPath};
use crate::rsde::{check_state, em_update, solve_rsde, Eval, RsdeSpec, SolutionPath, Stepper};
use crate::stats::{fit_log_log, mean_se, pairwise_sum, z_score, RateFit};

#[derive(Debug, Clone)]
pub enum DriverSpec {
    /// `S = W`, a `dim`-dimensional Brownian motion from 0.
    Brownian { dim: usize },
    Diffusion(ItoDiffusionSpec),
}

impl DriverSpec {
    /// Dimension of `S`.
    pub fn dim(&self) -> usize {
        match self {
            Self::Brownian { dim } => *dim,
            Self::Diffusion(d) => d.dim,
        }
    }

    /// Dimension of `W`.
    pub fn noise_dim(&self) -> usize {
        match self {
            Self::Brownian { dim } => *dim,
            Self::Diffusion(d) => d.driving_dim,
        }
    }

    fn fine_path(&self, draw: &BrownianDraw) -> Result<Vec<f64>> {
        match self {
            Self::Brownian { .. } => Ok(draw.path()),
            Self::Diffusion(d) => simulate_ito_diffusion(d, draw),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomisationExperiment {
    pub rsde: RsdeSpec,
    pub driver: DriverSpec,
    pub x0: Vec<f64>,
    pub grid: TimeGrid,
    pub fine_factor: usize,
    pub seed: u64,
}

/// A driver sample: the fine `W` increments, the fine path of `S` and its
/// Itô lift on the coarse grid.
#[derive(Debug, Clone)]
pub struct DriverSample {
    pub noise: BrownianDraw,
    pub fine_path: Vec<f64>,
    pub lift: RoughPath,
}

impl RandomisationExperiment {
    pub fn validate(&self) -> Result<()> {
        self.rsde.validate()?;
        if !self.rsde.causal {
            return Err(invalid("randomisation needs an equation that is causal in the driver"));
        }
        if self.rsde.dim_y != self.driver.dim() {
            return Err(invalid(format!(
                "equation expects d_Y = {}, driver has dimension {}",
                self.rsde.dim_y,
                self.driver.dim()
            )));
        }
        if self.x0.len() != self.rsde.dim_x {
            return Err(invalid("initial state has the wrong dimension"));
        }
        if self.fine_factor == 0 {
            return Err(invalid("fine factor must be positive"));
        }
        Ok(())
    }

    pub fn fine_grid(&self) -> Result<TimeGrid> {
        self.grid.refine(self.fine_factor)
    }

    /// Samples `W(ω″)` from `outer_seed` and lifts the driver.
    pub fn sample_driver(&self, outer_seed: u64) -> Result<DriverSample> {
        let fine = self.fine_grid()?;
        let noise = BrownianDraw::sample(self.driver.noise_dim(), &fine, outer_seed);
        self.driver_from_noise(noise)
    }

    pub fn driver_from_noise(&self, noise: BrownianDraw) -> Result<DriverSample> {
        let fine_path = self.driver.fine_path(&noise)?;
        let lift = lift_fine_path(&fine_path, noise.grid(), &self.grid, Convention::Ito)?;
        Ok(DriverSample { noise, fine_path, lift })
    }

    pub fn sample_brownian(&self, inner_seed: u64) -> Result<BrownianDraw> {
        Ok(BrownianDraw::sample(self.rsde.dim_b, &self.fine_grid()?, inner_seed))
    }
}

/// `X^𝐘` with `𝐘` the lifted driver sample.
pub fn randomised_solution(exp: &RandomisationExperiment, outer_seed: u64, inner_seed: u64) -> Result<SolutionPath> {
    exp.validate()?;
    let driver = exp.sample_driver(outer_seed)?;
    let bm = exp.sample_brownian(inner_seed)?;
    randomised_from(exp, &driver, &bm)
}

pub fn randomised_from(exp: &RandomisationExperiment, driver: &DriverSample, bm: &BrownianDraw) -> Result<SolutionPath> {
    solve_rsde(&exp.rsde, &driver.lift, bm, &exp.x0)
}

/// Direct Euler–Maruyama of the doubly stochastic equation, on the same
/// seeds as [`randomised_solution`].
pub fn doubly_stochastic_solution(exp: &RandomisationExperiment, outer_seed: u64, inner_seed: u64) -> Result<SolutionPath> {
    exp.validate()?;
    let driver = exp.sample_driver(outer_seed)?;
    let bm = exp.sample_brownian(inner_seed)?;
    doubly_from(exp, &driver, &bm)
}

pub fn doubly_from(exp: &RandomisationExperiment, driver: &DriverSample, bm: &BrownianDraw) -> Result<SolutionPath> {
    let spec = &exp.rsde;
    let (dx, ds) = (spec.dim_x, exp.driver.dim());
    let fine = driver.noise.grid();
    let ff = exp.grid.refinement_factor(fine)?;
    if spec.brownian.is_some() && bm.grid() != fine {
        return Err(invalid("Brownian draw and driver noise live on different grids"));
    }
    let mut st = Stepper::new(spec);
    let n = exp.grid.steps();
    let mut states = Vec::with_capacity((n + 1) * dx);
    states.extend_from_slice(&exp.x0);
    let mut z = exp.x0.clone();
    let mut zs = exp.x0.clone();
    let mut ds_k = vec![0.0; ds];
    let no_noise: [f64; 0] = [];
    for k in 0..fine.steps() {
        let u = k / ff;
        zs.copy_from_slice(&z);
        let e = Eval {
            t: fine.time(k),
            node: u,
            x: &zs,
            y: &driver.fine_path[k * ds..(k + 1) * ds],
        };
        let db = if spec.brownian.is_some() { bm.increment(k) } else { &no_noise };
        st.em_substep(&e, fine.dt(k), db, &mut z)?;
        if let Some(rough) = &spec.rough {
            rough(&e, &mut st.f);
            if !st.f.iter().all(|v| v.is_finite()) {
                return Err(crate::Error::CallbackFailure {
                    which: "rough coefficient",
                    time: e.t,
                    state: zs.clone(),
                });
            }
            for a in 0..ds {
                ds_k[a] = driver.fine_path[(k + 1) * ds + a] - driver.fine_path[k * ds + a];
            }
            // f dS = f β dt + f γ dW
            em_update(dx, ds, None, Some(&st.f), 0.0, &ds_k, &mut z);
        }
        if (k + 1) % ff == 0 {
            check_state((k + 1) / ff, fine.time(k + 1), &z, spec.divergence_bound)?;
            states.extend_from_slice(&z);
        }
    }
    Ok(SolutionPath::new(exp.grid.clone(), dx, states, None))
}

/// Scalar test function applied to terminal states.
#[derive(Clone)]
pub struct TestFn {
    pub name: String,
    pub f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for TestFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TestFn({})", self.name)
    }
}

impl TestFn {
    pub fn new(name: &str, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.to_string(),
            f: Arc::new(f),
        }
    }

    pub fn one() -> Self {
        Self::new("one", |_| 1.0)
    }

    pub fn component(k: usize) -> Self {
        Self::new(&format!("x{}", k + 1), move |x| x[k])
    }

    pub fn component_squared(k: usize) -> Self {
        Self::new(&format!("x{}^2", k + 1), move |x| x[k] * x[k])
    }
}

/// Per-level pathwise gaps between the two routes.
#[derive(Debug, Clone)]
pub struct PathwiseReport {
    /// Rows `(mesh, "rms_sup_gap", value, stderr)`.
    pub table: ConvergenceTable,
    pub fit: Option<RateFit>,
    pub strictly_decreasing: bool,
}

impl PathwiseReport {
    pub fn to_csv(&self) -> String {
        self.table.to_csv("mesh", true)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.table.records {
            s.push_str(&format!(
                "mesh {:e}: rms sup gap {:e} (se {:e})\n",
                r.scale,
                r.value,
                r.stderr.unwrap_or(0.0)
            ));
        }
        match &self.fit {
            Some(f) => s.push_str(&format!("fitted rate {:.4} (residual {:.4})\n", f.rate, f.residual)),
            None => s.push_str("fitted rate unavailable (gaps vanish)\n"),
        }
        s.push_str(&format!("strictly decreasing: {}\n", self.strictly_decreasing));
        s
    }
}

/// Runs both routes on coupled seeds over a ladder of coarse step counts
/// (each a divisor of the largest) with the experiment's fine factor. The
/// grids of all levels come from the horizon of `exp.grid`.
pub fn pathwise_coupling_report(exp: &RandomisationExperiment, ladder: &[usize], samples: usize) -> Result<PathwiseReport> {
    exp.validate()?;
    if ladder.len() < 3 {
        return Err(invalid("pathwise coupling needs at least three mesh levels"));
    }
    if samples == 0 {
        return Err(invalid("need at least one sample pair"));
    }
    let horizon = exp.grid.horizon();
    let finest = *ladder.iter().max().unwrap();
    let finest_fine = TimeGrid::uniform(horizon, finest * exp.fine_factor)?;
    let levels: Vec<RandomisationExperiment> = ladder
        .iter()
        .map(|&n| {
            Ok(RandomisationExperiment {
                grid: TimeGrid::uniform(horizon, n)?,
                ..exp.clone()
            })
        })
        .collect::<Result<_>>()?;
    let gaps: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let w = BrownianDraw::sample(exp.driver.noise_dim(), &finest_fine, derive_seed(exp.seed, stream::DRIVER, k as u64));
            let b = BrownianDraw::sample(exp.rsde.dim_b, &finest_fine, derive_seed(exp.seed, stream::BROWNIAN, k as u64));
            levels
                .iter()
                .map(|lv| {
                    let fine = lv.fine_grid()?;
                    let driver = lv.driver_from_noise(w.coarsen(&fine)?)?;
                    let bm = b.coarsen(&fine)?;
                    let r = randomised_from(lv, &driver, &bm)?;
                    let d = doubly_from(lv, &driver, &bm)?;
                    Ok(r.sup_distance(&d))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut table = ConvergenceTable::new();
    let mut rms = Vec::new();
    for (l, lv) in levels.iter().enumerate() {
        let sq: Vec<f64> = gaps.iter().map(|g| g[l] * g[l]).collect();
        let (m, se) = mean_se(&sq);
        let r = m.sqrt();
        let se_r = if r > 0.0 { se / (2.0 * r) } else { 0.0 };
        table.push(lv.grid.mesh(), "rms_sup_gap", r, Some(se_r));
        rms.push((lv.grid.mesh(), r));
    }
    rms.sort_by(|a, b| b.0.total_cmp(&a.0));
    let strictly_decreasing = rms.windows(2).all(|w| w[1].1 < w[0].1);
    let (xs, ys): (Vec<f64>, Vec<f64>) = rms.into_iter().unzip();
    Ok(PathwiseReport {
        table,
        fit: fit_log_log(&xs, &ys),
        strictly_decreasing,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawComparison {
    pub outer: usize,
    pub phi: String,
    pub rough_mean: f64,
    pub rough_se: f64,
    pub doubly_mean: f64,
    pub doubly_se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerCheck {
    pub phi: String,
    pub outer_mean: f64,
    pub outer_se: f64,
    pub joint_mean: f64,
    pub joint_se: f64,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct ConditionalLawReport {
    pub draws: Vec<DrawComparison>,
    /// Fraction of outer draws with `|z| ≤ 3`, per test function.
    pub pass_fraction: Vec<(String, f64)>,
    pub tower: Vec<TowerCheck>,
}

impl ConditionalLawReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("outer,phi,rough_mean,rough_se,doubly_mean,doubly_se,z\n");
        for d in &self.draws {
            s.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e},{:e}\n",
                d.outer, d.phi, d.rough_mean, d.rough_se, d.doubly_mean, d.doubly_se, d.z
            ));
        }
        s
    }

    pub fn tower_csv(&self) -> String {
        let mut s = String::from("phi,outer_mean,outer_se,joint_mean,joint_se,z\n");
        for t in &self.tower {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e}\n",
                t.phi, t.outer_mean, t.outer_se, t.joint_mean, t.joint_se, t.z
            ));
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (phi, f) in &self.pass_fraction {
            s.push_str(&format!("phi {phi}: |z| <= 3 for {:.1}% of outer draws\n", 100.0 * f));
        }
        for t in &self.tower {
            s.push_str(&format!("tower phi {}: z = {:.3}\n", t.phi, t.z));
        }
        s
    }
}

fn phi_stats(terminals: &[Vec<f64>], phi: &TestFn) -> (f64, f64) {
    let vals: Vec<f64> = terminals.iter().map(|x| (phi.f)(x)).collect();
    mean_se(&vals)
}

/// For each of `outer` driver draws, compares the conditional means of the
/// test functions under `inner` randomised solves against `inner`
/// doubly stochastic solves with independent Brownian noise, and checks the
/// tower property against `inner` joint samples.
pub fn conditional_law_report(
    exp: &RandomisationExperiment,
    phis: &[TestFn],
    outer: usize,
    inner: usize,
) -> Result<ConditionalLawReport> {
    exp.validate()?;
    if outer == 0 || inner < 2 {
        return Err(invalid("need at least one outer and two inner draws"));
    }
    let mut draws = Vec::new();
    let mut per_phi_means: Vec<Vec<f64>> = vec![Vec::new(); phis.len()];
    for i in 0..outer {
        let driver = exp.sample_driver(derive_seed(exp.seed, stream::DRIVER, i as u64))?;
        let rough_seed = derive_seed(exp.seed, stream::BROWNIAN, i as u64);
        let doubly_seed = derive_seed(exp.seed, stream::BROWNIAN_ALT, i as u64);
        let rough: Vec<Vec<f64>> = (0..inner)
            .into_par_iter()
            .map(|j| {
                let bm = exp.sample_brownian(derive_seed(rough_seed, stream::BROWNIAN, j as u64))?;
                Ok(randomised_from(exp, &driver, &bm)?.terminal().to_vec())
            })
            .collect::<Result<_>>()?;
        let doubly: Vec<Vec<f64>> = (0..inner)
            .into_par_iter()
            .map(|j| {
                let bm = exp.sample_brownian(derive_seed(doubly_seed, stream::BROWNIAN_ALT, j as u64))?;
                Ok(doubly_from(exp, &driver, &bm)?.terminal().to_vec())
            })
            .collect::<Result<_>>()?;
        for (p, phi) in phis.iter().enumerate() {
            let (rm, rse) = phi_stats(&rough, phi);
            let (dm, dse) = phi_stats(&doubly, phi);
            per_phi_means[p].push(rm);
            draws.push(DrawComparison {
                outer: i,
                phi: phi.name.clone(),
                rough_mean: rm,
                rough_se: rse,
                doubly_mean: dm,
                doubly_se: dse,
                z: z_score(rm, rse, dm, dse),
            });
        }
    }
    let joint: Vec<Vec<f64>> = (0..inner)
        .into_par_iter()
        .map(|j| {
            let w = derive_seed(exp.seed, stream::TOWER, 2 * j as u64);
            let b = derive_seed(exp.seed, stream::TOWER, 2 * j as u64 + 1);
            Ok(doubly_stochastic_solution(exp, w, b)?.terminal().to_vec())
        })
        .collect::<Result<_>>()?;
    let mut tower = Vec::new();
    let mut pass_fraction = Vec::new();
    for (p, phi) in phis.iter().enumerate() {
        let (om, ose) = if outer > 1 {
            mean_se(&per_phi_means[p])
        } else {
            (per_phi_means[p][0], 0.0)
        };
        let (jm, jse) = phi_stats(&joint, phi);
        tower.push(TowerCheck {
            phi: phi.name.clone(),
            outer_mean: om,
            outer_se: ose,
            joint_mean: jm,
            joint_se: jse,
            z: z_score(om, ose, jm, jse),
        });
        let passed: Vec<f64> = draws
            .iter()
            .filter(|d| d.phi == phi.name)
            .map(|d| if d.z.abs() <= 3.0 { 1.0 } else { 0.0 })
            .collect();
        pass_fraction.push((phi.name.clone(), pairwise_sum(&passed) / outer as f64));
    }
    Ok(ConditionalLawReport {
        draws,
        pass_fraction,
        tower,
    })
}

#[cfg(test)]
mod tests;
