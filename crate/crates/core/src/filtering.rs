//! Filtering with correlated signal and observation noise.
//!
//! Under the reference measure the observation `Y` is a Brownian motion
//! independent of `B`, and the signal solves
//!
//! ```text
//! dX = b(t, X, Y) dt + σ(t, X, Y) dB + f(t, X, Y) dY.
//! ```
//!
//! Conditioning on `Y` freezes it into a rough path `𝐘` whose bracket is
//! fixed to `I·t`; the filter is then the ratio
//! `E[φ(X^𝐘_t) exp(I^𝐘_t)] / E[exp(I^𝐘_t)]` with `I^𝐘` the rough Girsanov
//! exponent of the observation function `h`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::brownian::BrownianDraw;
use crate::error::{invalid, mismatch, Error, Result};
use crate::grid::TimeGrid;
use crate::initial::InitialLaw;
use crate::rng::{derive_seed, stream};
use crate::rough_path::{lift_fine_path, Convention, RoughPath};
use crate::rsde::{check_state, girsanov_exponent, Eval, ObservationFn, RsdeSpec, SolutionPath, Stepper};
use crate::stats::{mean_se, pairwise_sum};

/// Log-weights above this are clipped before exponentiation.
pub const LOG_WEIGHT_CLIP: f64 = 700.0;

#[derive(Debug, Clone)]
pub struct FilterModel {
    /// Signal coefficients; `rough` is `f`, `gubbins` its `y`-Jacobian.
    pub signal: RsdeSpec,
    pub observation: ObservationFn,
    pub initial: InitialLaw,
}

impl FilterModel {
    pub fn validate(&self) -> Result<()> {
        self.signal.validate()?;
        self.initial.validate()?;
        let s = &self.signal;
        if self.observation.dim_x != s.dim_x || self.observation.dim_y != s.dim_y || self.initial.dim() != s.dim_x {
            return Err(invalid("signal, observation and initial law disagree on dimensions"));
        }
        Ok(())
    }
}

impl std::fmt::Debug for ObservationFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObservationFn")
            .field("dim_x", &self.dim_x)
            .field("dim_y", &self.dim_y)
            .finish_non_exhaustive()
    }
}

/// Signal and observation on the fine grid.
#[derive(Debug, Clone)]
pub struct SignalObservation {
    pub fine: TimeGrid,
    pub signal: Vec<f64>,
    pub observation: Vec<f64>,
}

impl SignalObservation {
    pub fn signal_at(&self, k: usize, dim: usize) -> &[f64] {
        &self.signal[k * dim..(k + 1) * dim]
    }
}

/// Euler–Maruyama of the signal on `grid.refine(fine_factor)`, with `Y`
/// drawn on the `OBSERVATION` stream, `B` on `BROWNIAN` and `X_0` on
/// `INITIAL`.
pub fn simulate_signal_observation(model: &FilterModel, grid: &TimeGrid, fine_factor: usize, seed: u64) -> Result<SignalObservation> {
    model.validate()?;
    let fine = grid.refine(fine_factor)?;
    let s = &model.signal;
    let (dx, dy) = (s.dim_x, s.dim_y);
    let y = BrownianDraw::sample(dy, &fine, derive_seed(seed, stream::OBSERVATION, 0));
    let b = BrownianDraw::sample(s.dim_b, &fine, derive_seed(seed, stream::BROWNIAN, 0));
    let x0 = model.initial.sample(derive_seed(seed, stream::INITIAL, 0));
    let observation = y.path();
    let mut st = Stepper::new(s);
    let mut z = x0.clone();
    let mut zs = x0;
    let mut signal = Vec::with_capacity((fine.steps() + 1) * dx);
    signal.extend_from_slice(&z);
    for k in 0..fine.steps() {
        zs.copy_from_slice(&z);
        let e = Eval {
            t: fine.time(k),
            node: k / fine_factor,
            x: &zs,
            y: &observation[k * dy..(k + 1) * dy],
        };
        st.em_substep(&e, fine.dt(k), b.increment(k), &mut z)?;
        if let Some(rough) = &s.rough {
            rough(&e, &mut st.f);
            if !st.f.iter().all(|v| v.is_finite()) {
                return Err(Error::CallbackFailure {
                    which: "rough coefficient",
                    time: e.t,
                    state: zs.clone(),
                });
            }
            let dyk = y.increment(k);
            for i in 0..dx {
                z[i] += (0..dy).map(|a| st.f[i * dy + a] * dyk[a]).sum::<f64>();
            }
        }
        check_state(k + 1, fine.time(k + 1), &z, s.divergence_bound)?;
        signal.extend_from_slice(&z);
    }
    Ok(SignalObservation { fine, signal, observation })
}

/// Lifts the fine observation with Itô sums, keeps the antisymmetric
/// part and replaces the symmetric part so that the bracket is `I·(t−s)`.
pub fn hardwire_bracket(fine_values: &[f64], fine: &TimeGrid, coarse: &TimeGrid) -> Result<RoughPath> {
    let geo = lift_fine_path(fine_values, fine, coarse, Convention::Stratonovich)?;
    let d = geo.dim();
    let mut areas = geo.areas().to_vec();
    for i in 0..coarse.steps() {
        let h = coarse.dt(i);
        for p in 0..d {
            areas[i * d * d + p * d + p] -= 0.5 * h;
        }
    }
    Ok(RoughPath::from_parts(coarse.clone(), d, geo.values().to_vec(), areas)?.mark_sampled())
}

/// Weighted estimates at the coarse nodes, indexed `[phi][node]`.
#[derive(Debug, Clone)]
pub struct FilterEstimate {
    pub times: Vec<f64>,
    pub phis: Vec<String>,
    pub unnormalised: Vec<Vec<f64>>,
    pub unnormalised_se: Vec<Vec<f64>>,
    pub normalised: Vec<Vec<f64>>,
    pub normalised_se: Vec<Vec<f64>>,
    /// Number of log-weights clipped at [`LOG_WEIGHT_CLIP`].
    pub clipped: usize,
}

impl FilterEstimate {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,phi_id,unnormalised,normalised,stderr\n");
        for (p, name) in self.phis.iter().enumerate() {
            for (i, t) in self.times.iter().enumerate() {
                s.push_str(&format!(
                    "{:e},{},{:e},{:e},{:e}\n",
                    t, name, self.unnormalised[p][i], self.normalised[p][i], self.normalised_se[p][i]
                ));
            }
        }
        s
    }
}

/// A named test function of the state.
pub type Phi = crate::randomise::TestFn;

/// One weighted sample: the solution and its log-weights at every node.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    pub solution: SolutionPath,
    pub log_weights: Vec<f64>,
}

fn filter_sample(model: &FilterModel, rp: &RoughPath, fine: &TimeGrid, seed: u64, j: usize) -> Result<WeightedSample> {
    let bm = BrownianDraw::sample(model.signal.dim_b, fine, derive_seed(seed, stream::BROWNIAN, j as u64));
    let x0 = model.initial.sample(derive_seed(seed, stream::INITIAL, j as u64));
    let solution = crate::rsde::solve_rsde(&model.signal, rp, &bm, &x0)?;
    let log_weights = girsanov_exponent(&model.observation, &solution, rp)?;
    Ok(WeightedSample { solution, log_weights })
}

/// The weighted ensemble behind [`rough_filter`].
pub fn filter_ensemble(model: &FilterModel, rp: &RoughPath, samples: usize, fine_factor: usize, seed: u64) -> Result<Vec<WeightedSample>> {
    model.validate()?;
    if rp.dim() != model.signal.dim_y {
        return Err(mismatch("observation path dimension differs from the model"));
    }
    if samples < 2 {
        return Err(invalid("the filter needs at least two samples"));
    }
    let fine = rp.grid().refine(fine_factor)?;
    (0..samples)
        .into_par_iter()
        .map(|j| filter_sample(model, rp, &fine, seed, j))
        .collect()
}

/// Monte Carlo estimate of the rough Kallianpur–Striebel ratio with
/// `samples` solves against the frozen `rp`.
pub fn rough_filter(model: &FilterModel, rp: &RoughPath, phis: &[Phi], samples: usize, fine_factor: usize, seed: u64) -> Result<FilterEstimate> {
    let ensemble = filter_ensemble(model, rp, samples, fine_factor, seed)?;
    estimate_from_ensemble(&ensemble, rp.grid(), phis)
}

pub fn estimate_from_ensemble(ensemble: &[WeightedSample], grid: &TimeGrid, phis: &[Phi]) -> Result<FilterEstimate> {
    let m = ensemble.len();
    let n = grid.steps();
    let mut clipped = 0;
    let mut est = FilterEstimate {
        times: grid.times().to_vec(),
        phis: phis.iter().map(|p| p.name.clone()).collect(),
        unnormalised: vec![vec![0.0; n + 1]; phis.len()],
        unnormalised_se: vec![vec![0.0; n + 1]; phis.len()],
        normalised: vec![vec![0.0; n + 1]; phis.len()],
        normalised_se: vec![vec![0.0; n + 1]; phis.len()],
        clipped: 0,
    };
    let mut lw = vec![0.0; m];
    let mut w = vec![0.0; m];
    let mut vals = vec![0.0; m];
    for i in 0..=n {
        for (j, s) in ensemble.iter().enumerate() {
            let l = s.log_weights[i];
            if l.is_nan() {
                return Err(Error::WeightOverflow { sample: j, node: i });
            }
            lw[j] = if l > LOG_WEIGHT_CLIP {
                clipped += 1;
                LOG_WEIGHT_CLIP
            } else {
                l
            };
        }
        let shift = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = shift.exp();
        if !scale.is_finite() || scale == 0.0 {
            let j = lw.iter().position(|&l| l == shift).unwrap_or(0);
            return Err(Error::WeightOverflow { sample: j, node: i });
        }
        for j in 0..m {
            w[j] = (lw[j] - shift).exp();
        }
        let wsum = pairwise_sum(&w);
        for (p, phi) in phis.iter().enumerate() {
            for (j, s) in ensemble.iter().enumerate() {
                vals[j] = (phi.f)(s.solution.state(i)) * w[j];
            }
            let (um, use_) = mean_se(&vals);
            est.unnormalised[p][i] = um * scale;
            est.unnormalised_se[p][i] = use_ * scale;
            let r = pairwise_sum(&vals) / wsum;
            for (j, s) in ensemble.iter().enumerate() {
                let dev = (phi.f)(s.solution.state(i)) - r;
                vals[j] = (w[j] * dev).powi(2);
            }
            est.normalised[p][i] = r;
            est.normalised_se[p][i] = pairwise_sum(&vals).sqrt() / wsum;
        }
    }
    if clipped > 0 {
        log::warn!("{clipped} log-weights clipped at {LOG_WEIGHT_CLIP}");
    }
    est.clipped = clipped;
    Ok(est)
}

/// Linear-Gaussian model `dX = AX dt + σ dB + f dY`, `h(x) = Hx`,
/// `X_0 ~ N(m0, P0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFilterParams {
    pub a: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

impl LinearFilterParams {
    pub fn scalar(a: f64, h: f64, sigma: f64, f: f64, m0: f64, p0: f64) -> Self {
        let m = |v| DMatrix::from_element(1, 1, v);
        Self {
            a: m(a),
            h: m(h),
            sigma: m(sigma),
            f: m(f),
            m0: DVector::from_element(1, m0),
            p0: m(p0),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.sigma.ncols(), self.h.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        let (dx, _, dy) = self.dims();
        let ok = self.a.ncols() == dx
            && self.h.ncols() == dx
            && self.sigma.nrows() == dx
            && self.f.shape() == (dx, dy)
            && self.m0.len() == dx
            && self.p0.shape() == (dx, dx);
        if !ok || dx == 0 {
            return Err(invalid("linear filter matrices have inconsistent shapes"));
        }
        Ok(())
    }

    /// The model as callbacks for the rough filter.
    pub fn model(&self) -> Result<FilterModel> {
        self.validate()?;
        let (dx, db, dy) = self.dims();
        let row_major = |m: &DMatrix<f64>| -> Vec<f64> { m.transpose().iter().copied().collect() };
        let (a, sig, f, h) = (row_major(&self.a), row_major(&self.sigma), row_major(&self.f), row_major(&self.h));
        let h2 = h.clone();
        let signal = RsdeSpec::new(dx, db, dy)
            .drift(move |e, out| {
                for i in 0..dx {
                    out[i] = (0..dx).map(|j| a[i * dx + j] * e.x[j]).sum();
                }
            })
            .brownian(move |_, out| out.copy_from_slice(&sig))
            .rough(move |_, out| out.copy_from_slice(&f))
            .jacobian_mode(crate::rsde::Jacobian::Zero);
        let observation = ObservationFn::new(dx, dy, move |e, out| {
            for p in 0..dy {
                out[p] = (0..dx).map(|j| h[p * dx + j] * e.x[j]).sum();
            }
        })
        .dh_dx(move |_, out| out.copy_from_slice(&h2));
        let chol = self
            .p0
            .clone()
            .cholesky()
            .map(|c| row_major(&c.l()))
            .or_else(|| self.p0.iter().all(|v| *v == 0.0).then(|| vec![0.0; dx * dx]))
            .ok_or_else(|| invalid("P0 must be positive definite or zero"))?;
        Ok(FilterModel {
            signal,
            observation,
            initial: InitialLaw::Gaussian {
                mean: self.m0.iter().copied().collect(),
                chol,
            },
        })
    }
}

/// Posterior mean and covariance at the nodes of the observation grid.
#[derive(Debug, Clone)]
pub struct KalmanPath {
    pub grid: TimeGrid,
    pub dim: usize,
    pub means: Vec<f64>,
    pub covariances: Vec<f64>,
}

impl KalmanPath {
    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn covariance(&self, k: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.covariances[k * dd..(k + 1) * dd]
    }
}

/// Correlated-noise Kalman–Bucy filter
///
/// ```text
/// dP = AP + PAᵀ + σσᵀ − PHᵀHP
/// dm = (A − PHᵀH) m dt + (PHᵀ + f) dY
/// ```
///
/// integrated by classical Runge–Kutta with `Y` linear between nodes.
pub fn kalman_bucy_oracle(params: &LinearFilterParams, grid: &TimeGrid, observation: &[f64]) -> Result<KalmanPath> {
    params.validate()?;
    let (dx, _, dy) = params.dims();
    let n = grid.steps();
    if observation.len() != (n + 1) * dy {
        return Err(mismatch("observation values do not match the grid"));
    }
    let q = &params.sigma * params.sigma.transpose();
    let ht = params.h.transpose();
    let hth = &ht * &params.h;
    let rhs = |m: &DVector<f64>, p: &DMatrix<f64>, ydot: &DVector<f64>| {
        let dp = &params.a * p + p * params.a.transpose() + &q - p * &hth * p;
        let dm = (&params.a - p * &hth) * m + (p * &ht + &params.f) * ydot;
        (dm, dp)
    };
    let mut m = params.m0.clone();
    let mut p = params.p0.clone();
    let mut means = Vec::with_capacity((n + 1) * dx);
    let mut covariances = Vec::with_capacity((n + 1) * dx * dx);
    let push = |m: &DVector<f64>, p: &DMatrix<f64>, means: &mut Vec<f64>, covs: &mut Vec<f64>| {
        means.extend(m.iter());
        covs.extend(p.transpose().iter());
    };
    push(&m, &p, &mut means, &mut covariances);
    for k in 0..n {
        let h = grid.dt(k);
        let ydot = DVector::from_iterator(dy, (0..dy).map(|a| (observation[(k + 1) * dy + a] - observation[k * dy + a]) / h));
        let (m1, p1) = rhs(&m, &p, &ydot);
        let (m2, p2) = rhs(&(&m + &m1 * (h / 2.0)), &(&p + &p1 * (h / 2.0)), &ydot);
        let (m3, p3) = rhs(&(&m + &m2 * (h / 2.0)), &(&p + &p2 * (h / 2.0)), &ydot);
        let (m4, p4) = rhs(&(&m + &m3 * h), &(&p + &p3 * h), &ydot);
        m += (m1 + m2 * 2.0 + m3 * 2.0 + m4) * (h / 6.0);
        p += (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (h / 6.0);
        p = (&p + p.transpose()) * 0.5;
        let broken = !m.iter().chain(p.iter()).all(|v| v.is_finite()) || (0..dx).any(|i| p[(i, i)] < 0.0) || p.norm() > 1e12;
        if broken {
            return Err(Error::OracleFailure(format!("Riccati solution broke down at t = {}", grid.time(k + 1))));
        }
        push(&m, &p, &mut means, &mut covariances);
    }
    Ok(KalmanPath {
        grid: grid.clone(),
        dim: dx,
        means,
        covariances,
    })
}

/// Oracle at the nodes of `coarse` with the step-halving difference
/// `|m_h − m_{2h}|` as its discretization bound.
#[derive(Debug, Clone)]
pub struct OracleWithBound {
    pub path: KalmanPath,
    /// `[node][component]` flattened.
    pub bound: Vec<f64>,
}

pub fn kalman_with_bound(params: &LinearFilterParams, fine: &TimeGrid, observation: &[f64], coarse: &TimeGrid) -> Result<OracleWithBound> {
    let ff = coarse.refinement_factor(fine)?;
    if ff % 2 != 0 {
        return Err(invalid("step halving needs an even refinement factor"));
    }
    let (dx, _, dy) = params.dims();
    let full = kalman_bucy_oracle(params, fine, observation)?;
    let half_grid = coarse.refine(ff / 2)?;
    let sub: Vec<f64> = (0..=half_grid.steps())
        .flat_map(|k| observation[2 * k * dy..(2 * k + 1) * dy].iter().copied())
        .collect();
    let half = kalman_bucy_oracle(params, &half_grid, &sub)?;
    let n = coarse.steps();
    let mut means = Vec::with_capacity((n + 1) * dx);
    let mut covs = Vec::with_capacity((n + 1) * dx * dx);
    let mut bound = Vec::with_capacity((n + 1) * dx);
    for i in 0..=n {
        means.extend_from_slice(full.mean(i * ff));
        covs.extend_from_slice(full.covariance(i * ff));
        for c in 0..dx {
            bound.push((full.mean(i * ff)[c] - half.mean(i * ff / 2)[c]).abs());
        }
    }
    Ok(OracleWithBound {
        path: KalmanPath {
            grid: coarse.clone(),
            dim: dx,
            means,
            covariances: covs,
        },
        bound,
    })
}

/// Node-wise comparison of the rough filter mean with the oracle.
#[derive(Debug, Clone)]
pub struct KalmanComparison {
    pub times: Vec<f64>,
    pub filter_mean: Vec<f64>,
    pub filter_se: Vec<f64>,
    pub oracle_mean: Vec<f64>,
    pub oracle_bound: Vec<f64>,
    pub unit_mass: Vec<f64>,
    pub unit_mass_se: Vec<f64>,
}

impl KalmanComparison {
    pub fn sup_gap(&self) -> f64 {
        self.filter_mean
            .iter()
            .zip(&self.oracle_mean)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `3·(max SE + max oracle bound)`.
    pub fn threshold(&self) -> f64 {
        let se = self.filter_se.iter().copied().fold(0.0, f64::max);
        let b = self.oracle_bound.iter().copied().fold(0.0, f64::max);
        3.0 * (se + b)
    }

    pub fn passed(&self) -> bool {
        self.sup_gap() <= self.threshold()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,filter_mean,filter_se,oracle_mean,oracle_bound,gap\n");
        for i in 0..self.times.len() {
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e}\n",
                self.times[i],
                self.filter_mean[i],
                self.filter_se[i],
                self.oracle_mean[i],
                self.oracle_bound[i],
                (self.filter_mean[i] - self.oracle_mean[i]).abs()
            ));
        }
        s
    }
}

/// Scalar linear benchmark: simulate an observation, filter it with
/// `samples` rough solves and compare with the Kalman–Bucy mean.
pub fn compare_with_kalman(
    params: &LinearFilterParams,
    grid: &TimeGrid,
    fine_factor: usize,
    samples: usize,
    seed: u64,
) -> Result<KalmanComparison> {
    let (dx, _, _) = params.dims();
    if dx != 1 {
        return Err(invalid("the Kalman comparison is scalar"));
    }
    let model = params.model()?;
    let so = simulate_signal_observation(&model, grid, fine_factor, seed)?;
    let rp = hardwire_bracket(&so.observation, &so.fine, grid)?;
    let oracle = kalman_with_bound(params, &so.fine, &so.observation, grid)?;
    let est = rough_filter(
        &model,
        &rp,
        &[Phi::component(0), Phi::one()],
        samples,
        fine_factor,
        derive_seed(seed, stream::BROWNIAN_ALT, 0),
    )?;
    Ok(KalmanComparison {
        times: grid.times().to_vec(),
        filter_mean: est.normalised[0].clone(),
        filter_se: est.normalised_se[0].clone(),
        oracle_mean: oracle.path.means.clone(),
        oracle_bound: oracle.bound,
        unit_mass: est.unnormalised[1].clone(),
        unit_mass_se: est.unnormalised_se[1].clone(),
    })
}

/// `E[exp(I_t)]` averaged jointly over observation and signal noise; one
/// signal solve per observation draw.
#[derive(Debug, Clone)]
pub struct UnitMassCheck {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

impl UnitMassCheck {
    pub fn max_abs_z(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.se)
            .map(|(m, s)| if *s > 0.0 { (m - 1.0).abs() / s } else if *m == 1.0 { 0.0 } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,mean,stderr\n");
        for i in 0..self.times.len() {
            s.push_str(&format!("{:e},{:e},{:e}\n", self.times[i], self.mean[i], self.se[i]));
        }
        s
    }
}

pub fn unit_mass_check(model: &FilterModel, grid: &TimeGrid, fine_factor: usize, draws: usize, seed: u64) -> Result<UnitMassCheck> {
    model.validate()?;
    if draws < 2 {
        return Err(invalid("need at least two draws"));
    }
    let fine = grid.refine(fine_factor)?;
    let dy = model.signal.dim_y;
    let weights: Vec<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map(|j| {
            let y = BrownianDraw::sample(dy, &fine, derive_seed(seed, stream::OBSERVATION, j as u64));
            let rp = hardwire_bracket(&y.path(), &fine, grid)?;
            let s = filter_sample(model, &rp, &fine, seed, j)?;
            Ok(s.log_weights.iter().map(|l| l.min(LOG_WEIGHT_CLIP).exp()).collect())
        })
        .collect::<Result<_>>()?;
    let n = grid.steps();
    let mut mean = Vec::with_capacity(n + 1);
    let mut se = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let col: Vec<f64> = weights.iter().map(|w| w[i]).collect();
        let (m, s) = mean_se(&col);
        mean.push(m);
        se.push(s);
    }
    Ok(UnitMassCheck {
        times: grid.times().to_vec(),
        mean,
        se,
    })
}

#[cfg(test)]
mod tests;
