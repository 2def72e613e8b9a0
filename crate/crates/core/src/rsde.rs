//! Rough SDEs
//!
//! ```text
//! dX_t = b(t, X_t) dt + σ(t, X_t) dB_t + (f, f′)(t, X_t) d𝐘_t
//! ```
//!
//! solved by a one-step Davie scheme. On each coarse interval `[u, v]` of the
//! rough path grid, drift and Brownian terms are advanced by Euler–Maruyama
//! substeps on the (possibly finer) grid of the [`BrownianDraw`], then the
//! rough increment `F δY + F′ : 𝕐` with `F = f(u, X_u)` and
//! `F′ = Df·f + f′` evaluated at `X_u` is added once.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::brownian::BrownianDraw;
use crate::convergence::ConvergenceTable;
use crate::rng::{derive_seed, stream};
use crate::rough_path::{sample_bm_lift_with_draw, Convention};
use crate::stats::mean_se;
use crate::error::{invalid, mismatch, Error, Result};
use crate::grid::TimeGrid;
use crate::rough_integral::{davie_term, integral_path, ControlledPath};
use crate::rough_path::RoughPath;

/// Point at which a coefficient is evaluated. `y` is the current value of the
/// rough driver (the latest coarse node at or before `t`), so coefficients
/// cannot look ahead; `node` is the index of that coarse node.
#[derive(Debug, Clone, Copy)]
pub struct Eval<'a> {
    pub t: f64,
    pub node: usize,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

/// Writes a vector, matrix or 3-tensor (row-major) into the output slice.
pub type Coefficient = Arc<dyn Fn(&Eval, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum Jacobian {
    /// `Df[k][a][j] = ∂f[k][a] / ∂x_j`, shape `d_X × d_Y × d_X`.
    Analytic(Coefficient),
    /// Central differences with step `ε^{1/3} (1 + |x_j|)`.
    FiniteDifference,
    /// `f` does not depend on the state.
    Zero,
}

pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e12;

#[derive(Clone)]
pub struct RsdeSpec {
    pub dim_x: usize,
    pub dim_b: usize,
    pub dim_y: usize,
    pub drift: Option<Coefficient>,
    pub brownian: Option<Coefficient>,
    pub rough: Option<Coefficient>,
    pub gubbins: Option<Coefficient>,
    pub jacobian: Jacobian,
    pub causal: bool,
    pub divergence_bound: f64,
}

impl fmt::Debug for RsdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RsdeSpec")
            .field("dim_x", &self.dim_x)
            .field("dim_b", &self.dim_b)
            .field("dim_y", &self.dim_y)
            .field("drift", &self.drift.is_some())
            .field("brownian", &self.brownian.is_some())
            .field("rough", &self.rough.is_some())
            .field("gubbins", &self.gubbins.is_some())
            .field("causal", &self.causal)
            .finish_non_exhaustive()
    }
}

impl RsdeSpec {
    /// All coefficients zero.
    pub fn new(dim_x: usize, dim_b: usize, dim_y: usize) -> Self {
        Self {
            dim_x,
            dim_b,
            dim_y,
            drift: None,
            brownian: None,
            rough: None,
            gubbins: None,
            jacobian: Jacobian::FiniteDifference,
            causal: true,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
        }
    }

    pub fn drift(mut self, b: impl Fn(&Eval, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(b));
        self
    }

    pub fn brownian(mut self, sigma: impl Fn(&Eval, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.brownian = Some(Arc::new(sigma));
        self
    }

    pub fn rough(mut self, f: impl Fn(&Eval, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.rough = Some(Arc::new(f));
        self
    }

    pub fn gubbins(mut self, fp: impl Fn(&Eval, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.gubbins = Some(Arc::new(fp));
        self
    }

    pub fn jacobian(mut self, df: impl Fn(&Eval, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.jacobian = Jacobian::Analytic(Arc::new(df));
        self
    }

    pub fn jacobian_mode(mut self, j: Jacobian) -> Self {
        self.jacobian = j;
        self
    }

    /// Declares whether the coefficients read the driver only up to the
    /// current time. Coefficients capturing future driver values must say so.
    pub fn causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    pub fn divergence_bound(mut self, bound: f64) -> Self {
        self.divergence_bound = bound;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.dim_x == 0 {
            return Err(invalid("state dimension must be positive"));
        }
        if self.brownian.is_some() && self.dim_b == 0 {
            return Err(invalid("Brownian coefficient given with d_B = 0"));
        }
        if (self.rough.is_some() || self.gubbins.is_some()) && self.dim_y == 0 {
            return Err(invalid("rough coefficient given with d_Y = 0"));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(invalid("divergence bound must be positive"));
        }
        Ok(())
    }
}

/// States on the coarse grid together with the along-solution controlled
/// pair `(f, Df·f + f′)(t_i, X_i)` when a rough coefficient is present.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    grid: TimeGrid,
    dim: usize,
    states: Vec<f64>,
    controlled: Option<ControlledPath>,
}

impl SolutionPath {
    pub(crate) fn new(grid: TimeGrid, dim: usize, states: Vec<f64>, controlled: Option<ControlledPath>) -> Self {
        Self {
            grid,
            dim,
            states,
            controlled,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.grid.steps())
    }

    pub fn controlled(&self) -> Option<&ControlledPath> {
        self.controlled.as_ref()
    }

    /// Largest `|X_i − Z_i|` over nodes and components.
    pub fn sup_distance(&self, other: &SolutionPath) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// CSV rows `time,x_1,...,x_d`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for k in 0..self.dim {
            out.push_str(&format!(",x{}", k + 1));
        }
        out.push('\n');
        for i in 0..=self.grid.steps() {
            out.push_str(&format!("{:e}", self.grid.time(i)));
            for x in self.state(i) {
                out.push_str(&format!(",{x:e}"));
            }
            out.push('\n');
        }
        out
    }
}

fn check_finite(which: &'static str, out: &[f64], e: &Eval) -> Result<()> {
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::CallbackFailure {
            which,
            time: e.t,
            state: e.x.to_vec(),
        })
    }
}

/// Scratch space for one solve, so that the time loop does not allocate.
pub(crate) struct Stepper<'s> {
    pub spec: &'s RsdeSpec,
    pub b: Vec<f64>,
    pub sig: Vec<f64>,
    pub f: Vec<f64>,
    pub fp: Vec<f64>,
    pub gub: Vec<f64>,
    pub jac: Vec<f64>,
    pub xs: Vec<f64>,
    pub fplus: Vec<f64>,
    pub fminus: Vec<f64>,
}

impl<'s> Stepper<'s> {
    pub fn new(spec: &'s RsdeSpec) -> Self {
        let (dx, db, dy) = (spec.dim_x, spec.dim_b, spec.dim_y);
        Self {
            spec,
            b: vec![0.0; dx],
            sig: vec![0.0; dx * db],
            f: vec![0.0; dx * dy],
            fp: vec![0.0; dx * dy * dy],
            gub: vec![0.0; dx * dy * dy],
            jac: vec![0.0; dx * dy * dx],
            xs: vec![0.0; dx],
            fplus: vec![0.0; dx * dy],
            fminus: vec![0.0; dx * dy],
        }
    }

    /// One Euler–Maruyama substep `z += b h + σ ΔB` with coefficients at `e`.
    pub fn em_substep(&mut self, e: &Eval, h: f64, db: &[f64], z: &mut [f64]) -> Result<()> {
        let spec = self.spec;
        let (dx, dbn) = (spec.dim_x, spec.dim_b);
        if let Some(drift) = &spec.drift {
            drift(e, &mut self.b);
            check_finite("drift", &self.b, e)?;
        }
        if let Some(sigma) = &spec.brownian {
            sigma(e, &mut self.sig);
            check_finite("brownian coefficient", &self.sig, e)?;
        }
        em_update(dx, dbn, spec.drift.is_some().then_some(&self.b[..]), spec.brownian.is_some().then_some(&self.sig[..]), h, db, z);
        Ok(())
    }

    /// Fills `f` and `fp = Df·f + f′` at `e`.
    pub fn controlled_pair(&mut self, e: &Eval) -> Result<()> {
        let spec = self.spec;
        let Some(rough) = &spec.rough else {
            self.f.fill(0.0);
            self.fp.fill(0.0);
            if let Some(g) = &spec.gubbins {
                g(e, &mut self.fp);
                check_finite("rough gubbins", &self.fp, e)?;
            }
            return Ok(());
        };
        let (dx, dy) = (spec.dim_x, spec.dim_y);
        rough(e, &mut self.f);
        check_finite("rough coefficient", &self.f, e)?;
        let have_jac = match &spec.jacobian {
            Jacobian::Zero => false,
            Jacobian::Analytic(df) => {
                df(e, &mut self.jac);
                check_finite("rough jacobian", &self.jac, e)?;
                true
            }
            Jacobian::FiniteDifference => {
                let step0 = f64::EPSILON.cbrt();
                self.xs.copy_from_slice(e.x);
                for j in 0..dx {
                    let h = step0 * (1.0 + e.x[j].abs());
                    self.xs[j] = e.x[j] + h;
                    rough(&Eval { x: &self.xs, ..*e }, &mut self.fplus);
                    self.xs[j] = e.x[j] - h;
                    rough(&Eval { x: &self.xs, ..*e }, &mut self.fminus);
                    self.xs[j] = e.x[j];
                    // actual spacing, robust to rounding of x ± h
                    let span = (e.x[j] + h) - (e.x[j] - h);
                    for ka in 0..dx * dy {
                        self.jac[ka * dx + j] = (self.fplus[ka] - self.fminus[ka]) / span;
                    }
                }
                check_finite("rough jacobian", &self.jac, e)?;
                true
            }
        };
        if have_jac {
            gubinelli_from_jacobian(dx, dx, dy, &self.jac, &self.f, &mut self.fp);
        } else {
            self.fp.fill(0.0);
        }
        if let Some(g) = &spec.gubbins {
            g(e, &mut self.gub);
            check_finite("rough gubbins", &self.gub, e)?;
            for (a, b) in self.fp.iter_mut().zip(&self.gub) {
                *a += b;
            }
        }
        Ok(())
    }
}

/// `z[i] += b[i] h + Σ_j σ[i][j] ΔB_j`.
#[inline]
pub(crate) fn em_update(dx: usize, dbn: usize, b: Option<&[f64]>, sig: Option<&[f64]>, h: f64, db: &[f64], z: &mut [f64]) {
    for i in 0..dx {
        let mut acc = match b {
            Some(b) => b[i] * h,
            None => 0.0,
        };
        if let Some(sig) = sig {
            for j in 0..dbn {
                acc += sig[i * dbn + j] * db[j];
            }
        }
        z[i] += acc;
    }
}

/// `fp[k][a][b] = Σ_j jac[k][a][j] f[j][b]` for `rows` values of `k` and
/// `j < dx`.
#[inline]
pub(crate) fn gubinelli_from_jacobian(rows: usize, dx: usize, dy: usize, jac: &[f64], f: &[f64], fp: &mut [f64]) {
    for ka in 0..rows * dy {
        for b in 0..dy {
            let mut acc = 0.0;
            for j in 0..dx {
                acc += jac[ka * dx + j] * f[j * dy + b];
            }
            fp[ka * dy + b] = acc;
        }
    }
}

pub(crate) fn check_state(step: usize, time: f64, z: &[f64], bound: f64) -> Result<()> {
    if z.iter().all(|v| v.is_finite() && v.abs() <= bound) {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            time,
            state: z.to_vec(),
        })
    }
}

/// Checks that `bm` refines the grid of `rp` and returns the factor.
pub(crate) fn fine_factor(spec: &RsdeSpec, rp: &RoughPath, bm: &BrownianDraw) -> Result<usize> {
    if rp.dim() != spec.dim_y && (spec.rough.is_some() || spec.gubbins.is_some()) {
        return Err(mismatch(format!("equation expects d_Y = {}, driver has {}", spec.dim_y, rp.dim())));
    }
    if bm.dim() != spec.dim_b && spec.brownian.is_some() {
        return Err(mismatch(format!("equation expects d_B = {}, draw has {}", spec.dim_b, bm.dim())));
    }
    rp.grid().refinement_factor(bm.grid())
}

pub fn solve_rsde(spec: &RsdeSpec, rp: &RoughPath, bm: &BrownianDraw, x0: &[f64]) -> Result<SolutionPath> {
    spec.validate()?;
    if x0.len() != spec.dim_x {
        return Err(invalid(format!("initial state has {} components, expected {}", x0.len(), spec.dim_x)));
    }
    let ff = fine_factor(spec, rp, bm)?;
    let (dx, dy) = (spec.dim_x, spec.dim_y);
    let grid = rp.grid();
    let fine = bm.grid();
    let n = grid.steps();
    let has_rough = spec.rough.is_some() || spec.gubbins.is_some();
    let mut st = Stepper::new(spec);
    let mut states = Vec::with_capacity((n + 1) * dx);
    states.extend_from_slice(x0);
    let (mut cf, mut cfp) = if has_rough {
        (Vec::with_capacity((n + 1) * dx * dy), Vec::with_capacity((n + 1) * dx * dy * dy))
    } else {
        (Vec::new(), Vec::new())
    };
    let mut xu = x0.to_vec();
    let mut z = x0.to_vec();
    let mut zs = x0.to_vec();
    let mut dyv = vec![0.0; rp.dim()];
    for u in 0..n {
        let y = rp.value(u);
        if has_rough {
            st.controlled_pair(&Eval {
                t: grid.time(u),
                node: u,
                x: &xu,
                y,
            })?;
            cf.extend_from_slice(&st.f);
            cfp.extend_from_slice(&st.fp);
        }
        z.copy_from_slice(&xu);
        if spec.drift.is_some() || spec.brownian.is_some() {
            for k in u * ff..(u + 1) * ff {
                zs.copy_from_slice(&z);
                let e = Eval {
                    t: fine.time(k),
                    node: u,
                    x: &zs,
                    y,
                };
                st.em_substep(&e, fine.dt(k), bm.increment(k), &mut z)?;
            }
        }
        if has_rough {
            for p in 0..rp.dim() {
                dyv[p] = rp.value(u + 1)[p] - y[p];
            }
            davie_term(dx, dy, &st.f, &st.fp, &dyv, rp.area(u), &mut z);
        }
        check_state(u + 1, grid.time(u + 1), &z, spec.divergence_bound)?;
        states.extend_from_slice(&z);
        xu.copy_from_slice(&z);
    }
    let controlled = if has_rough {
        st.controlled_pair(&Eval {
            t: grid.time(n),
            node: n,
            x: &xu,
            y: rp.value(n),
        })?;
        cf.extend_from_slice(&st.f);
        cfp.extend_from_slice(&st.fp);
        Some(ControlledPath::new(grid.clone(), dx, dy, cf, cfp)?)
    } else {
        None
    };
    Ok(SolutionPath::new(grid.clone(), dx, states, controlled))
}

/// `(t, node, out)` for exogenous coefficient processes.
pub type ProcessFn = Arc<dyn Fn(f64, usize, &mut [f64]) + Send + Sync>;

/// A rough Itô process `X = x0 + ∫A dt + ∫Σ dB + ∫(F, F′) d𝐘` with
/// coefficients that do not depend on `X`.
#[derive(Clone)]
pub struct RoughItoSpec {
    pub dim_x: usize,
    pub dim_b: usize,
    pub dim_y: usize,
    pub drift: Option<ProcessFn>,
    pub diffusion: Option<ProcessFn>,
    pub integrand: Option<ProcessFn>,
    pub integrand_deriv: Option<ProcessFn>,
}

impl RoughItoSpec {
    pub fn new(dim_x: usize, dim_b: usize, dim_y: usize) -> Self {
        Self {
            dim_x,
            dim_b,
            dim_y,
            drift: None,
            diffusion: None,
            integrand: None,
            integrand_deriv: None,
        }
    }

    pub fn drift(mut self, a: impl Fn(f64, usize, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(a));
        self
    }

    pub fn diffusion(mut self, s: impl Fn(f64, usize, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.diffusion = Some(Arc::new(s));
        self
    }

    pub fn integrand(
        mut self,
        f: impl Fn(f64, usize, &mut [f64]) + Send + Sync + 'static,
        fprime: impl Fn(f64, usize, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.integrand = Some(Arc::new(f));
        self.integrand_deriv = Some(Arc::new(fprime));
        self
    }

    fn to_rsde(&self) -> RsdeSpec {
        let wrap = |p: &ProcessFn| -> Coefficient {
            let p = p.clone();
            Arc::new(move |e: &Eval, out: &mut [f64]| p(e.t, e.node, out))
        };
        RsdeSpec {
            dim_x: self.dim_x,
            dim_b: self.dim_b,
            dim_y: self.dim_y,
            drift: self.drift.as_ref().map(wrap),
            brownian: self.diffusion.as_ref().map(wrap),
            rough: self.integrand.as_ref().map(wrap),
            gubbins: self.integrand_deriv.as_ref().map(wrap),
            jacobian: Jacobian::Zero,
            causal: true,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
        }
    }
}

pub fn solve_rough_ito(spec: &RoughItoSpec, rp: &RoughPath, bm: &BrownianDraw, x0: &[f64]) -> Result<SolutionPath> {
    solve_rsde(&spec.to_rsde(), rp, bm, x0)
}

/// `h(t, x, y) ∈ ℝ^{d_Y}` with Jacobians `D_x h` (`d_Y × d_X`) and
/// `D_y h` (`d_Y × d_Y`); missing Jacobians are zero.
#[derive(Clone)]
pub struct ObservationFn {
    pub dim_x: usize,
    pub dim_y: usize,
    pub h: Coefficient,
    pub dh_dx: Option<Coefficient>,
    pub dh_dy: Option<Coefficient>,
}

impl ObservationFn {
    pub fn new(dim_x: usize, dim_y: usize, h: impl Fn(&Eval, &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            dim_x,
            dim_y,
            h: Arc::new(h),
            dh_dx: None,
            dh_dy: None,
        }
    }

    pub fn dh_dx(mut self, d: impl Fn(&Eval, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.dh_dx = Some(Arc::new(d));
        self
    }

    pub fn dh_dy(mut self, d: impl Fn(&Eval, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.dh_dy = Some(Arc::new(d));
        self
    }
}

/// `I_t = ∫_0^t (h, D_x h·f + D_y h)(s, X_s, Y_s) d𝐘_s − ½ ∫_0^t |h|² ds`
/// at every node, with the Lebesgue part by the trapezoid rule.
pub fn girsanov_exponent(obs: &ObservationFn, sol: &SolutionPath, rp: &RoughPath) -> Result<Vec<f64>> {
    let (dx, dy) = (obs.dim_x, obs.dim_y);
    if sol.dim() != dx || rp.dim() != dy {
        return Err(mismatch("observation function does not match the solution or driver"));
    }
    if sol.grid() != rp.grid() {
        return Err(mismatch("solution and driver live on different grids"));
    }
    let grid = rp.grid();
    let n = grid.steps();
    let zeros = vec![0.0; dx * dy];
    let mut hv = vec![0.0; dy];
    let mut jx = vec![0.0; dy * dx];
    let mut jy = vec![0.0; dy * dy];
    let mut sq = vec![0.0; n + 1];
    let cp = ControlledPath::from_fn(grid, 1, dy, |i, f, fp| {
        let e = Eval {
            t: grid.time(i),
            node: i,
            x: sol.state(i),
            y: rp.value(i),
        };
        (obs.h)(&e, &mut hv);
        f.copy_from_slice(&hv);
        sq[i] = hv.iter().map(|v| v * v).sum();
        fp.fill(0.0);
        if let Some(d) = &obs.dh_dx {
            d(&e, &mut jx);
            let fsig = sol.controlled().map_or(&zeros[..], |c| c.value(i));
            gubinelli_from_jacobian(1, dx, dy, &jx, fsig, fp);
        }
        if let Some(d) = &obs.dh_dy {
            d(&e, &mut jy);
            for (a, b) in fp.iter_mut().zip(&jy) {
                *a += b;
            }
        }
    })?;
    if !sq.iter().all(|v| v.is_finite()) {
        return Err(Error::CallbackFailure {
            which: "observation function",
            time: f64::NAN,
            state: Vec::new(),
        });
    }
    let mut out = integral_path(&cp, rp)?;
    let mut lebesgue = 0.0;
    for i in 0..n {
        lebesgue += 0.25 * (sq[i] + sq[i + 1]) * grid.dt(i);
        out[i + 1] -= lebesgue;
    }
    Ok(out)
}

/// Terminal RMS error of `dX = X d𝐘`, `X_0 = 1`, against the closed form
/// `exp(δY − [𝐘]/2)` of the lift actually used, on the dyadic ladder
/// `2^levels` over `[0, 1]` with a shared fine grid of `fine_steps` steps.
/// Sample `k` uses the Brownian draw with seed `derive_seed(seed, DRIVER, k)`.
pub fn geometric_closed_form_table(
    convention: Convention,
    levels: &[u32],
    fine_steps: usize,
    samples: usize,
    seed: u64,
) -> Result<ConvergenceTable> {
    let spec = RsdeSpec::new(1, 0, 1)
        .rough(|e, out| out[0] = e.x[0])
        .jacobian(|_, out| out[0] = 1.0);
    let mut table = ConvergenceTable::new();
    for &level in levels {
        let n = 1usize << level;
        if n > fine_steps || fine_steps % n != 0 {
            return Err(invalid(format!("level {level} does not divide {fine_steps} fine steps")));
        }
        let grid = TimeGrid::uniform(1.0, n)?;
        let sq: Vec<f64> = (0..samples)
            .into_par_iter()
            .map(|k| {
                let s = sample_bm_lift_with_draw(1, &grid, fine_steps / n, derive_seed(seed, stream::DRIVER, k as u64), convention)?;
                let sol = solve_rsde(&spec, &s.lift, &BrownianDraw::none(s.draw.grid()), &[1.0])?;
                let exact = (s.lift.value(n)[0] - s.lift.bracket().value(n)[0] / 2.0).exp();
                Ok((sol.terminal()[0] - exact).powi(2))
            })
            .collect::<Result<_>>()?;
        let (m, se) = mean_se(&sq);
        // delta method for the square root
        let rms = m.sqrt();
        table.push(grid.mesh(), "terminal_rms", rms, Some(if rms > 0.0 { se / (2.0 * rms) } else { 0.0 }));
    }
    Ok(table)
}
