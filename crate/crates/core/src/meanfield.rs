//! Mean-field particle systems with common noise.
//!
//! Route A simulates
//!
//! ```text
//! dX^i = b(X^i, μ^N) dt + σ(X^i, μ^N) dB^i + f(X^i, μ^N) dW
//! ```
//!
//! by Euler–Maruyama with a shared `W`. Route B freezes `W` into its Itô lift
//! `𝐘` and solves the particle system as a rough SDE, which needs the
//! Gubinelli derivative of `f` along the whole ensemble:
//!
//! ```text
//! F'_i = D_x g·f_i + ∂_m g·f̄ + ∂_v g·(2/N) Σ_l (x_l − m) f_l
//!        + (1/N) Σ_l ∇κ(x_i − x_l)·(f_i − f_l)
//! ```
//!
//! for `f(x, μ) = g(x, mean μ, var μ) + (κ ∗ μ)(x)`. Only this structured
//! form is accepted by the rough route. Derivatives that are not supplied
//! are zero and the corresponding terms are skipped.
//!
//! All ensemble reductions are order-free sums, so permuting the particles
//! permutes the trajectories bit for bit.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::brownian::BrownianDraw;
use crate::convergence::ConvergenceTable;
use crate::error::{invalid, mismatch, Error, Result};
use crate::grid::TimeGrid;
use crate::initial::InitialLaw;
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::rough_integral::davie_term;
use crate::rough_path::{lift_brownian_draw, Convention, RoughPath};
use crate::rsde::{check_state, em_update, gubinelli_from_jacobian, DEFAULT_DIVERGENCE_BOUND};
use crate::stats::{mean_se, median, order_free_sum};

/// Snapshot of the empirical measure of an ensemble.
#[derive(Debug, Clone)]
pub struct Empirical<'a> {
    pub dim: usize,
    pub states: &'a [f64],
    pub mean: Vec<f64>,
    /// Componentwise population variance.
    pub var: Vec<f64>,
}

impl<'a> Empirical<'a> {
    pub fn new(dim: usize, states: &'a [f64]) -> Self {
        let n = states.len() / dim;
        let mut col = vec![0.0; n];
        let mut mean = vec![0.0; dim];
        let mut var = vec![0.0; dim];
        for j in 0..dim {
            for i in 0..n {
                col[i] = states[i * dim + j];
            }
            mean[j] = order_free_sum(&mut col) / n as f64;
            for i in 0..n {
                col[i] = (states[i * dim + j] - mean[j]).powi(2);
            }
            var[j] = order_free_sum(&mut col) / n as f64;
        }
        Self { dim, states, mean, var }
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    /// `out = (1/N) Σ_l κ(x − x_l)`, with `κ` writing `out.len()` values.
    pub fn convolve(&self, x: &[f64], kernel: &(dyn Fn(&[f64], &mut [f64]) + Send + Sync), out: &mut [f64]) {
        let (n, m) = (self.len(), out.len());
        let mut z = vec![0.0; self.dim];
        let mut val = vec![0.0; m];
        let mut terms = vec![0.0; n * m];
        for l in 0..n {
            for j in 0..self.dim {
                z[j] = x[j] - self.states[l * self.dim + j];
            }
            kernel(&z, &mut val);
            for c in 0..m {
                terms[c * n + l] = val[c];
            }
        }
        for c in 0..m {
            out[c] = order_free_sum(&mut terms[c * n..(c + 1) * n]) / n as f64;
        }
    }
}

/// `(x, μ, out)`.
pub type FieldFn = Arc<dyn Fn(&[f64], &Empirical, &mut [f64]) + Send + Sync>;
/// `(x, mean, var, out)`.
pub type MomentFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(z, out)`.
pub type KernelFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `g(x, mean, var)` with optional Jacobians, each laid out `[k][a][j]`.
#[derive(Clone)]
pub struct MomentCoefficient {
    pub value: MomentFn,
    pub d_x: Option<MomentFn>,
    pub d_mean: Option<MomentFn>,
    pub d_var: Option<MomentFn>,
}

/// `(κ ∗ μ)(x)` with `∇κ` laid out `[k][a][j]`.
#[derive(Clone)]
pub struct KernelTerm {
    pub kernel: KernelFn,
    pub gradient: KernelFn,
}

#[derive(Clone)]
pub enum RoughCoefficient {
    Structured {
        moments: Option<MomentCoefficient>,
        kernel: Option<KernelTerm>,
    },
    /// Arbitrary measure dependence: usable by route A only.
    Opaque(FieldFn),
}

#[derive(Clone)]
pub struct MkvSpec {
    pub dim_x: usize,
    pub dim_b: usize,
    pub dim_y: usize,
    pub drift: Option<FieldFn>,
    /// `d_X × d_B`.
    pub diffusion: Option<FieldFn>,
    /// `d_X × d_Y`.
    pub rough: Option<RoughCoefficient>,
    pub initial: InitialLaw,
    pub divergence_bound: f64,
}

impl std::fmt::Debug for MkvSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MkvSpec")
            .field("dim_x", &self.dim_x)
            .field("dim_b", &self.dim_b)
            .field("dim_y", &self.dim_y)
            .field("drift", &self.drift.is_some())
            .field("diffusion", &self.diffusion.is_some())
            .field("rough", &self.rough.is_some())
            .field("initial", &self.initial)
            .finish()
    }
}

impl MkvSpec {
    pub fn new(dim_x: usize, dim_b: usize, dim_y: usize, initial: InitialLaw) -> Self {
        Self {
            dim_x,
            dim_b,
            dim_y,
            drift: None,
            diffusion: None,
            rough: None,
            initial,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
        }
    }

    pub fn drift(mut self, b: impl Fn(&[f64], &Empirical, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(b));
        self
    }

    pub fn diffusion(mut self, s: impl Fn(&[f64], &Empirical, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.diffusion = Some(Arc::new(s));
        self
    }

    pub fn rough(mut self, f: RoughCoefficient) -> Self {
        self.rough = Some(f);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.initial.validate()?;
        if self.dim_x == 0 || self.initial.dim() != self.dim_x {
            return Err(invalid("state dimension must be positive and match the initial law"));
        }
        if self.rough.is_some() && self.dim_y == 0 || self.diffusion.is_some() && self.dim_b == 0 {
            return Err(invalid("noise coefficients need positive noise dimensions"));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(invalid("divergence bound must be positive"));
        }
        Ok(())
    }
}

/// Value and Gubinelli derivative of the structured rough coefficient.
struct RoughScratch {
    jac: Vec<f64>,
    dm: Vec<f64>,
    dv: Vec<f64>,
    grad: Vec<f64>,
    z: Vec<f64>,
    tmp: Vec<f64>,
}

impl RoughScratch {
    fn new(dx: usize, dy: usize) -> Self {
        Self {
            jac: vec![0.0; dx * dy * dx],
            dm: vec![0.0; dx * dy * dx],
            dv: vec![0.0; dx * dy * dx],
            grad: vec![0.0; dx * dy * dx],
            z: vec![0.0; dx],
            tmp: vec![0.0; dx * dy * dy],
        }
    }
}

fn eval_rough(rough: &RoughCoefficient, x: &[f64], emp: &Empirical, out: &mut [f64]) {
    match rough {
        RoughCoefficient::Opaque(f) => f(x, emp, out),
        RoughCoefficient::Structured { moments, kernel } => {
            out.fill(0.0);
            if let Some(m) = moments {
                (m.value)(x, &emp.mean, &emp.var, out);
            }
            if let Some(k) = kernel {
                let mut conv = vec![0.0; out.len()];
                emp.convolve(x, &*k.kernel, &mut conv);
                if moments.is_some() {
                    for (o, c) in out.iter_mut().zip(&conv) {
                        *o += c;
                    }
                } else {
                    out.copy_from_slice(&conv);
                }
            }
        }
    }
}

/// Ensemble states at the coarse nodes, `[node][particle][component]`.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub grid: TimeGrid,
    pub n: usize,
    pub dim: usize,
    pub states: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn node(&self, i: usize) -> &[f64] {
        let w = self.n * self.dim;
        &self.states[i * w..(i + 1) * w]
    }

    pub fn particle(&self, node: usize, i: usize) -> &[f64] {
        &self.node(node)[i * self.dim..(i + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.node(self.grid.steps())
    }

    pub fn empirical(&self, node: usize) -> Empirical<'_> {
        Empirical::new(self.dim, self.node(node))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,particle");
        for j in 0..self.dim {
            s.push_str(&format!(",x{}", j + 1));
        }
        s.push('\n');
        for node in 0..=self.grid.steps() {
            for i in 0..self.n {
                s.push_str(&format!("{:e},{}", self.grid.time(node), i));
                for v in self.particle(node, i) {
                    s.push_str(&format!(",{v:e}"));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Idiosyncratic noise and initial states of every particle.
#[derive(Debug, Clone)]
pub struct ParticleNoise {
    pub draws: Vec<BrownianDraw>,
    pub initial: Vec<Vec<f64>>,
}

impl ParticleNoise {
    /// Particle `i` uses `PARTICLE_NOISE` and `PARTICLE_INITIAL` seeds `i`
    /// under `base`, so smaller ensembles are prefixes of larger ones.
    pub fn sample(spec: &MkvSpec, n: usize, fine: &TimeGrid, base: u64) -> Self {
        Self::from_seeds(
            spec,
            fine,
            &(0..n as u64)
                .map(|i| (derive_seed(base, stream::PARTICLE_NOISE, i), derive_seed(base, stream::PARTICLE_INITIAL, i)))
                .collect::<Vec<_>>(),
        )
    }

    /// `(noise seed, initial seed)` per particle.
    pub fn from_seeds(spec: &MkvSpec, fine: &TimeGrid, seeds: &[(u64, u64)]) -> Self {
        let (draws, initial) = seeds
            .par_iter()
            .map(|&(b, x)| (BrownianDraw::sample(spec.dim_b, fine, b), spec.initial.sample(x)))
            .unzip();
        Self { draws, initial }
    }

    pub fn len(&self) -> usize {
        self.initial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initial.is_empty()
    }
}

fn check_noise(spec: &MkvSpec, noise: &ParticleNoise, fine: &TimeGrid) -> Result<()> {
    if noise.len() < 2 {
        return Err(invalid("the particle system needs at least two particles"));
    }
    if noise.initial.iter().any(|x| x.len() != spec.dim_x) {
        return Err(mismatch("initial states have the wrong dimension"));
    }
    if spec.diffusion.is_some() && noise.draws.iter().any(|d| d.grid() != fine || d.dim() != spec.dim_b) {
        return Err(mismatch("idiosyncratic noise does not live on the fine grid"));
    }
    Ok(())
}

/// One Euler–Maruyama substep for every particle, coefficients frozen at `cur`.
fn em_ensemble(spec: &MkvSpec, cur: &[f64], next: &mut [f64], noise: &ParticleNoise, k: usize, h: f64, common: Option<&[f64]>) -> Result<()> {
    let (dx, db, dy) = (spec.dim_x, spec.dim_b, spec.dim_y);
    let emp = Empirical::new(dx, cur);
    next.copy_from_slice(cur);
    next.par_chunks_mut(dx)
        .enumerate()
        .with_min_len(64)
        .try_for_each_init(
            || (vec![0.0; dx], vec![0.0; dx * db], vec![0.0; dx * dy]),
            |(b, sig, f), (i, z)| {
                let x = &cur[i * dx..(i + 1) * dx];
                if let Some(drift) = &spec.drift {
                    drift(x, &emp, b);
                }
                if let Some(s) = &spec.diffusion {
                    s(x, &emp, sig);
                }
                let bad = |v: &[f64]| !v.iter().all(|c| c.is_finite());
                if bad(b) || bad(sig) {
                    return Err(Error::CallbackFailure {
                        which: "mean-field coefficient",
                        time: f64::NAN,
                        state: x.to_vec(),
                    });
                }
                let dbk = if spec.diffusion.is_some() { noise.draws[i].increment(k) } else { &[][..] };
                em_update(dx, db, spec.drift.is_some().then_some(&b[..]), spec.diffusion.is_some().then_some(&sig[..]), h, dbk, z);
                if let (Some(rough), Some(dw)) = (&spec.rough, common) {
                    eval_rough(rough, x, &emp, f);
                    if bad(f) {
                        return Err(Error::CallbackFailure {
                            which: "mean-field rough coefficient",
                            time: f64::NAN,
                            state: x.to_vec(),
                        });
                    }
                    em_update(dx, dy, None, Some(&f[..]), 0.0, dw, z);
                }
                Ok(())
            },
        )
}

fn check_ensemble(step: usize, time: f64, states: &[f64], dx: usize, bound: f64) -> Result<()> {
    states.chunks(dx).try_for_each(|z| check_state(step, time, z, bound))
}

/// Route A: joint Euler–Maruyama with the common noise `w` on the fine grid,
/// recorded at the nodes of `grid`.
pub fn simulate_common_noise_particles_with(spec: &MkvSpec, w: &BrownianDraw, noise: &ParticleNoise, grid: &TimeGrid) -> Result<ParticleEnsemble> {
    spec.validate()?;
    let fine = w.grid();
    let ff = grid.refinement_factor(fine)?;
    check_noise(spec, noise, fine)?;
    if spec.rough.is_some() && w.dim() != spec.dim_y {
        return Err(mismatch("common noise dimension differs from d_Y"));
    }
    let (n, dx) = (noise.len(), spec.dim_x);
    let mut cur: Vec<f64> = noise.initial.concat();
    let mut next = cur.clone();
    let mut states = Vec::with_capacity((grid.steps() + 1) * n * dx);
    states.extend_from_slice(&cur);
    for k in 0..fine.steps() {
        let dw = spec.rough.is_some().then(|| w.increment(k));
        em_ensemble(spec, &cur, &mut next, noise, k, fine.dt(k), dw)?;
        std::mem::swap(&mut cur, &mut next);
        check_ensemble(k + 1, fine.time(k + 1), &cur, dx, spec.divergence_bound)?;
        if (k + 1) % ff == 0 {
            states.extend_from_slice(&cur);
        }
    }
    Ok(ParticleEnsemble {
        grid: grid.clone(),
        n,
        dim: dx,
        states,
    })
}

/// Route A with `W` drawn on the `DRIVER` stream and particle noise under
/// the `PARTICLE_NOISE` stream of `seed`.
pub fn simulate_common_noise_particles(spec: &MkvSpec, n: usize, grid: &TimeGrid, fine_factor: usize, seed: u64) -> Result<ParticleEnsemble> {
    let fine = grid.refine(fine_factor)?;
    let w = BrownianDraw::sample(spec.dim_y, &fine, derive_seed(seed, stream::DRIVER, 0));
    let noise = ParticleNoise::sample(spec, n, &fine, derive_seed(seed, stream::PARTICLE_NOISE, 0));
    simulate_common_noise_particles_with(spec, &w, &noise, grid)
}

/// Route B: Davie steps for the whole ensemble against the frozen `rp`,
/// Euler–Maruyama substeps for drift and idiosyncratic noise.
pub fn solve_mkv_rsde_particles_with(spec: &MkvSpec, rp: &RoughPath, noise: &ParticleNoise, fine: &TimeGrid) -> Result<ParticleEnsemble> {
    spec.validate()?;
    let grid = rp.grid();
    let ff = grid.refinement_factor(fine)?;
    check_noise(spec, noise, fine)?;
    if matches!(spec.rough, Some(RoughCoefficient::Opaque(_))) {
        return Err(Error::PresetViolation(
            "the rough route needs a structured measure dependence (moments or a convolution kernel)".into(),
        ));
    }
    if spec.rough.is_some() && rp.dim() != spec.dim_y {
        return Err(mismatch("rough path dimension differs from d_Y"));
    }
    let (n, dx, dy) = (noise.len(), spec.dim_x, spec.dim_y);
    let mut cur: Vec<f64> = noise.initial.concat();
    let mut next = cur.clone();
    let mut fs = vec![0.0; n * dx * dy];
    let mut fps = vec![0.0; n * dx * dy * dy];
    let mut dyv = vec![0.0; dy];
    let mut states = Vec::with_capacity((grid.steps() + 1) * n * dx);
    states.extend_from_slice(&cur);
    for u in 0..grid.steps() {
        if let Some(rough) = &spec.rough {
            controlled_ensemble(rough, dx, dy, &cur, &mut fs, &mut fps)?;
        }
        for k in u * ff..(u + 1) * ff {
            if spec.drift.is_none() && spec.diffusion.is_none() {
                break;
            }
            em_ensemble(spec, &cur, &mut next, noise, k, fine.dt(k), None)?;
            std::mem::swap(&mut cur, &mut next);
        }
        if spec.rough.is_some() {
            for p in 0..dy {
                dyv[p] = rp.value(u + 1)[p] - rp.value(u)[p];
            }
            let area = rp.area(u);
            cur.par_chunks_mut(dx).enumerate().with_min_len(64).for_each(|(i, z)| {
                davie_term(
                    dx,
                    dy,
                    &fs[i * dx * dy..(i + 1) * dx * dy],
                    &fps[i * dx * dy * dy..(i + 1) * dx * dy * dy],
                    &dyv,
                    area,
                    z,
                );
            });
        }
        check_ensemble(u + 1, grid.time(u + 1), &cur, dx, spec.divergence_bound)?;
        states.extend_from_slice(&cur);
    }
    Ok(ParticleEnsemble {
        grid: grid.clone(),
        n,
        dim: dx,
        states,
    })
}

/// Route B with particle noise under the `PARTICLE_NOISE` stream of `seed`.
pub fn solve_mkv_rsde_particles(spec: &MkvSpec, rp: &RoughPath, n: usize, fine_factor: usize, seed: u64) -> Result<ParticleEnsemble> {
    let fine = rp.grid().refine(fine_factor)?;
    let noise = ParticleNoise::sample(spec, n, &fine, derive_seed(seed, stream::PARTICLE_NOISE, 0));
    solve_mkv_rsde_particles_with(spec, rp, &noise, &fine)
}

/// Fills `F_i` and `F'_i` for every particle at the states `x`.
fn controlled_ensemble(rough: &RoughCoefficient, dx: usize, dy: usize, x: &[f64], fs: &mut [f64], fps: &mut [f64]) -> Result<()> {
    let RoughCoefficient::Structured { moments, kernel } = rough else {
        unreachable!("opaque coefficients are rejected before stepping")
    };
    let n = x.len() / dx;
    let emp = Empirical::new(dx, x);
    let (w, w2) = (dx * dy, dx * dy * dy);
    fs.par_chunks_mut(w).enumerate().with_min_len(64).for_each(|(i, f)| {
        eval_rough(rough, &x[i * dx..(i + 1) * dx], &emp, f);
    });
    if !fs.iter().all(|v| v.is_finite()) {
        return Err(Error::CallbackFailure {
            which: "mean-field rough coefficient",
            time: f64::NAN,
            state: Vec::new(),
        });
    }
    // ensemble averages entering the measure terms, `[j][b]`
    let need_mean = moments.as_ref().is_some_and(|m| m.d_mean.is_some());
    let need_var = moments.as_ref().is_some_and(|m| m.d_var.is_some());
    let mut fbar = vec![0.0; w];
    let mut fcov = vec![0.0; w];
    let mut col = vec![0.0; n];
    for jb in 0..w {
        let j = jb / dy;
        if need_mean {
            for l in 0..n {
                col[l] = fs[l * w + jb];
            }
            fbar[jb] = order_free_sum(&mut col) / n as f64;
        }
        if need_var {
            for l in 0..n {
                col[l] = (x[l * dx + j] - emp.mean[j]) * fs[l * w + jb];
            }
            fcov[jb] = 2.0 * order_free_sum(&mut col) / n as f64;
        }
    }
    let fs: &[f64] = fs;
    fps.par_chunks_mut(w2)
        .enumerate()
        .with_min_len(16)
        .for_each_init(
            || RoughScratch::new(dx, dy),
            |s, (i, fp)| {
                let xi = &x[i * dx..(i + 1) * dx];
                let fi = &fs[i * w..(i + 1) * w];
                fp.fill(0.0);
                if let Some(m) = moments {
                    if let Some(d) = &m.d_x {
                        d(xi, &emp.mean, &emp.var, &mut s.jac);
                        gubinelli_from_jacobian(dx, dx, dy, &s.jac, fi, fp);
                    }
                    if let Some(d) = &m.d_mean {
                        d(xi, &emp.mean, &emp.var, &mut s.dm);
                        gubinelli_from_jacobian(dx, dx, dy, &s.dm, &fbar, &mut s.tmp);
                        fp.iter_mut().zip(&s.tmp).for_each(|(a, b)| *a += b);
                    }
                    if let Some(d) = &m.d_var {
                        d(xi, &emp.mean, &emp.var, &mut s.dv);
                        gubinelli_from_jacobian(dx, dx, dy, &s.dv, &fcov, &mut s.tmp);
                        fp.iter_mut().zip(&s.tmp).for_each(|(a, b)| *a += b);
                    }
                }
                if let Some(k) = kernel {
                    let mut terms = vec![0.0; n * w2];
                    let mut diff = vec![0.0; w];
                    for l in 0..n {
                        for j in 0..dx {
                            s.z[j] = xi[j] - x[l * dx + j];
                        }
                        (k.gradient)(&s.z, &mut s.grad);
                        for (c, d) in diff.iter_mut().enumerate() {
                            *d = fi[c] - fs[l * w + c];
                        }
                        gubinelli_from_jacobian(dx, dx, dy, &s.grad, &diff, &mut s.tmp);
                        for c in 0..w2 {
                            terms[c * n + l] = s.tmp[c];
                        }
                    }
                    for c in 0..w2 {
                        fp[c] += order_free_sum(&mut terms[c * n..(c + 1) * n]) / n as f64;
                    }
                }
            },
        );
    if !fps.iter().all(|v| v.is_finite()) {
        return Err(Error::CallbackFailure {
            which: "mean-field rough derivative",
            time: f64::NAN,
            state: Vec::new(),
        });
    }
    Ok(())
}

/// Wasserstein-1 distance between two empirical laws on the line.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect();
        return crate::stats::pairwise_sum(&d) / a.len() as f64;
    }
    // ∫ |F_a − F_b| over the merged support
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut prev = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    total
}

/// Sliced Wasserstein-1 over `projections` seeded directions; equals
/// [`wasserstein1`] in one dimension.
pub fn sliced_wasserstein1(a: &[f64], b: &[f64], dim: usize, projections: usize, seed: u64) -> f64 {
    if dim == 1 {
        return wasserstein1(a, b);
    }
    let dists: Vec<f64> = (0..projections as u64)
        .map(|p| {
            let mut rng = rng_from_seed(derive_seed(seed, stream::PROJECTION, p));
            let mut dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|v| *v /= norm);
            let proj = |s: &[f64]| -> Vec<f64> { s.chunks(dim).map(|x| x.iter().zip(&dir).map(|(u, v)| u * v).sum()).collect() };
            wasserstein1(&proj(a), &proj(b))
        })
        .collect();
    crate::stats::pairwise_sum(&dists) / projections as f64
}

pub const SLICED_PROJECTIONS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct McKeanRow {
    pub outer: usize,
    pub particles: usize,
    pub steps: usize,
    pub w1: f64,
}

#[derive(Debug, Clone)]
pub struct McKeanReport {
    pub rows: Vec<McKeanRow>,
    /// Median over outer draws: `("median_w1_steps{N}", scale = particles)`
    /// and `("median_w1_particles{n}", scale = mesh)`.
    pub table: ConvergenceTable,
}

impl McKeanReport {
    pub fn median_w1(&self, particles: usize, steps: usize) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.particles == particles && r.steps == steps)
            .map(|r| r.w1)
            .collect();
        median(&v)
    }

    pub fn rows_csv(&self) -> String {
        let mut s = String::from("outer,particles,steps,w1\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{:e}\n", r.outer, r.particles, r.steps, r.w1));
        }
        s
    }
}

/// Compares the terminal conditional laws of the two routes for `outer`
/// draws of `W`, across particle counts and coarse step counts (all on
/// `[0, horizon]` with the same fine factor).
pub fn conditional_mkv_check(
    spec: &MkvSpec,
    particle_ladder: &[usize],
    outer: usize,
    step_ladder: &[usize],
    horizon: f64,
    fine_factor: usize,
    seed: u64,
) -> Result<McKeanReport> {
    spec.validate()?;
    if particle_ladder.len() < 2 || step_ladder.len() < 2 {
        return Err(invalid("both ladders need at least two entries"));
    }
    if outer == 0 {
        return Err(invalid("need at least one outer draw"));
    }
    let finest = *step_ladder.iter().max().unwrap();
    let finest_fine = TimeGrid::uniform(horizon, finest * fine_factor)?;
    let n_max = *particle_ladder.iter().max().unwrap();
    let mut rows = Vec::new();
    for k in 0..outer {
        let w = BrownianDraw::sample(spec.dim_y.max(1), &finest_fine, derive_seed(seed, stream::DRIVER, k as u64));
        for &steps in step_ladder {
            let grid = TimeGrid::uniform(horizon, steps)?;
            let fine = grid.refine(fine_factor)?;
            let wl = w.coarsen(&fine)?;
            let lift = lift_brownian_draw(&wl, &grid, Convention::Ito)?.lift;
            let noise_a = ParticleNoise::sample(spec, n_max, &fine, derive_seed(seed, stream::PARTICLE_NOISE, k as u64));
            let noise_b = ParticleNoise::sample(spec, n_max, &fine, derive_seed(seed, stream::BROWNIAN_ALT, k as u64));
            for &n in particle_ladder {
                let prefix = |p: &ParticleNoise| ParticleNoise {
                    draws: if spec.diffusion.is_some() { p.draws[..n].to_vec() } else { Vec::new() },
                    initial: p.initial[..n].to_vec(),
                };
                let a = simulate_common_noise_particles_with(spec, &wl, &prefix(&noise_a), &grid)?;
                let b = solve_mkv_rsde_particles_with(spec, &lift, &prefix(&noise_b), &fine)?;
                let w1 = sliced_wasserstein1(a.terminal(), b.terminal(), spec.dim_x, SLICED_PROJECTIONS, seed);
                rows.push(McKeanRow {
                    outer: k,
                    particles: n,
                    steps,
                    w1,
                });
            }
        }
    }
    let mut report = McKeanReport {
        rows,
        table: ConvergenceTable::new(),
    };
    for &steps in step_ladder {
        for &n in particle_ladder {
            let vals: Vec<f64> = report.rows.iter().filter(|r| r.particles == n && r.steps == steps).map(|r| r.w1).collect();
            let (_, se) = mean_se(&vals);
            let med = median(&vals);
            report.table.push(n as f64, &format!("median_w1_steps{steps}"), med, se.is_finite().then_some(se));
            report.table.push(horizon / steps as f64, &format!("median_w1_particles{n}"), med, se.is_finite().then_some(se));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
