//! Conditional pricing under local stochastic volatility
//!
//! ```text
//! dX = ℓ(t, X) √V_t (√(1 − ρ_t²) dB + ρ_t dW)
//! ```
//!
//! with `V` adapted to `W`. Given `W`, the price solves a rough SDE driven by
//! the Itô lift of `M = ∫√V dW`, with the variance read back from the
//! bracket of the lift. All prices use the Bachelier (arithmetic) convention.

use std::sync::Arc;

use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::brownian::BrownianDraw;
use crate::error::{invalid, Result};
use crate::grid::TimeGrid;
use crate::rng::{derive_seed, stream};
use crate::rough_path::{lift_fine_path, Convention, RoughPath};
use crate::rsde::{check_state, solve_rsde, Jacobian, RsdeSpec};
use crate::stats::{mean_se, z_score};

pub type LocalVolFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type CorrelationFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Variance samplers, all driven by the same `W` as the price.
#[derive(Debug, Clone, PartialEq)]
pub enum VarianceModel {
    Constant { v: f64 },
    /// `dV = κ(θ − V) dt + ξ √V dW`, full truncation.
    Cir { v0: f64, kappa: f64, theta: f64, xi: f64 },
    /// `V = exp(L)`, `dL = κ(μ − L) dt + ξ dW`.
    LognormalOu { v0: f64, kappa: f64, mu: f64, xi: f64 },
}

impl VarianceModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant { v } => v >= 0.0 && v.is_finite(),
            Self::Cir { v0, kappa, theta, xi } => v0 >= 0.0 && kappa >= 0.0 && theta >= 0.0 && xi >= 0.0 && (v0 + kappa + theta + xi).is_finite(),
            Self::LognormalOu { v0, kappa, mu, xi } => v0 > 0.0 && kappa >= 0.0 && xi >= 0.0 && (v0 + kappa + mu + xi).is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid variance parameters {self:?}")))
        }
    }

    /// Nonnegative variance at every node of the noise grid.
    pub fn path(&self, w: &BrownianDraw) -> Vec<f64> {
        let g = w.grid();
        let n = g.steps();
        let mut out = Vec::with_capacity(n + 1);
        match *self {
            Self::Constant { v } => out.resize(n + 1, v),
            Self::Cir { v0, kappa, theta, xi } => {
                let mut v = v0;
                out.push(v0);
                for k in 0..n {
                    let vp = v.max(0.0);
                    v += kappa * (theta - vp) * g.dt(k) + xi * vp.sqrt() * w.increment(k)[0];
                    out.push(v.max(0.0));
                }
            }
            Self::LognormalOu { v0, kappa, mu, xi } => {
                let mut l = v0.ln();
                out.push(v0);
                for k in 0..n {
                    l += kappa * (mu - l) * g.dt(k) + xi * w.increment(k)[0];
                    out.push(l.exp());
                }
            }
        }
        out
    }
}

#[derive(Clone)]
pub struct LsvModel {
    pub local_vol: LocalVolFn,
    pub correlation: CorrelationFn,
    pub variance: VarianceModel,
    pub x0: f64,
    /// Whether `ℓ ≡ 1`, which makes the mixing formula exact.
    pub unit_local_vol: bool,
}

impl std::fmt::Debug for LsvModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LsvModel")
            .field("variance", &self.variance)
            .field("x0", &self.x0)
            .field("unit_local_vol", &self.unit_local_vol)
            .finish_non_exhaustive()
    }
}

impl LsvModel {
    /// `ℓ ≡ 1` and constant correlation.
    pub fn unit(rho: f64, variance: VarianceModel, x0: f64) -> Self {
        Self {
            local_vol: Arc::new(|_, _| 1.0),
            correlation: Arc::new(move |_| rho),
            variance,
            x0,
            unit_local_vol: true,
        }
    }

    pub fn local_vol(mut self, l: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.local_vol = Arc::new(l);
        self.unit_local_vol = false;
        self
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        self.variance.validate()?;
        if !self.x0.is_finite() {
            return Err(invalid("x0 must be finite"));
        }
        if grid.times().iter().any(|&t| !((self.correlation)(t).abs() <= 1.0)) {
            return Err(invalid("correlation must lie in [-1, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payoff {
    Call { strike: f64 },
    Identity,
}

impl Payoff {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Self::Call { strike } => (x - strike).max(0.0),
            Self::Identity => x,
        }
    }

    pub fn id(&self) -> String {
        match self {
            Self::Call { strike } => format!("call:{strike}"),
            Self::Identity => "identity".into(),
        }
    }

    pub fn strike(&self) -> f64 {
        match *self {
            Self::Call { strike } => strike,
            Self::Identity => f64::NAN,
        }
    }

    pub fn calls(strikes: &[f64]) -> Vec<Payoff> {
        strikes.iter().map(|&strike| Payoff::Call { strike }).collect()
    }
}

/// Bachelier call `(m−K)Φ((m−K)/s) + s φ((m−K)/s)`, `(m−K)⁺` at `s = 0`.
pub fn bachelier_call(m: f64, s: f64, strike: f64) -> f64 {
    if s <= 0.0 {
        return (m - strike).max(0.0);
    }
    let n = Normal::standard();
    let d = (m - strike) / s;
    (m - strike) * n.cdf(d) + s * n.pdf(d)
}

fn bachelier(m: f64, s: f64, payoff: &Payoff) -> f64 {
    match *payoff {
        Payoff::Call { strike } => bachelier_call(m, s, strike),
        Payoff::Identity => m,
    }
}

/// One outer draw: `W`, `V`, `M = ∫√V dW` on the fine grid and the lift of `M`.
#[derive(Debug, Clone)]
pub struct FactorDraw {
    pub w: BrownianDraw,
    pub variance: Vec<f64>,
    pub m: Vec<f64>,
    /// `∫ρ√V dW` on the fine grid.
    pub rho_m: f64,
    /// `∫(1 − ρ²) V dt` on the fine grid.
    pub residual_variance: f64,
}

pub fn sample_factor(model: &LsvModel, fine: &TimeGrid, seed: u64) -> FactorDraw {
    let w = BrownianDraw::sample(1, fine, seed);
    factor_from_noise(model, w)
}

pub fn factor_from_noise(model: &LsvModel, w: BrownianDraw) -> FactorDraw {
    let variance = model.variance.path(&w);
    let g = w.grid();
    let n = g.steps();
    let mut m = Vec::with_capacity(n + 1);
    m.push(0.0);
    let (mut rho_m, mut resid) = (0.0, 0.0);
    for k in 0..n {
        let sv = variance[k].sqrt();
        let dw = w.increment(k)[0];
        m.push(m[k] + sv * dw);
        let rho = (model.correlation)(g.time(k));
        rho_m += rho * sv * dw;
        resid += (1.0 - rho * rho) * variance[k] * g.dt(k);
    }
    FactorDraw {
        w,
        variance,
        m,
        rho_m,
        residual_variance: resid,
    }
}

/// Conditional law of `X_T` given `(W, V)` when `ℓ ≡ 1`:
/// `N(x0 + ∫ρ√V dW, ∫(1 − ρ²)V dt)`.
pub fn mixing_formula_oracle(model: &LsvModel, draw: &FactorDraw, payoff: &Payoff) -> Result<f64> {
    if !model.unit_local_vol {
        return Err(invalid("the mixing formula needs unit local volatility"));
    }
    Ok(bachelier(model.x0 + draw.rho_m, draw.residual_variance.sqrt(), payoff))
}

/// `∂_t[𝐘]` at the coarse nodes by symmetric differences, one-sided at the
/// ends, floored at zero. Returns the estimates and the number floored.
pub fn bracket_derivative(rp: &RoughPath) -> (Vec<f64>, usize) {
    let br = rp.bracket();
    let g = rp.grid();
    let n = g.steps();
    let mut floored = 0;
    let v = (0..=n)
        .map(|u| {
            let (a, b) = (u.saturating_sub(1), (u + 1).min(n));
            let est = (br.value(b)[0] - br.value(a)[0]) / (g.time(b) - g.time(a));
            if est < 0.0 {
                floored += 1;
                0.0
            } else {
                est
            }
        })
        .collect();
    if floored > 0 {
        log::warn!("{floored} negative bracket derivatives floored at zero");
    }
    (v, floored)
}

/// Joint Euler–Maruyama of `(V, X)` on `grid.refine(fine_factor)`. Sample
/// `j` uses `TOWER` seeds `2j` for `W` and `2j + 1` for `B`.
pub fn simulate_lsv_joint(model: &LsvModel, grid: &TimeGrid, fine_factor: usize, samples: usize, seed: u64) -> Result<Vec<f64>> {
    model.validate(grid)?;
    let fine = grid.refine(fine_factor)?;
    (0..samples)
        .into_par_iter()
        .map(|j| {
            let f = sample_factor(model, &fine, derive_seed(seed, stream::TOWER, 2 * j as u64));
            let b = BrownianDraw::sample(1, &fine, derive_seed(seed, stream::TOWER, 2 * j as u64 + 1));
            joint_terminal(model, &f, &b)
        })
        .collect()
}

pub fn joint_terminal(model: &LsvModel, f: &FactorDraw, b: &BrownianDraw) -> Result<f64> {
    let g = f.w.grid();
    let mut x = model.x0;
    for k in 0..g.steps() {
        let t = g.time(k);
        let rho = (model.correlation)(t);
        let s = (model.local_vol)(t, x) * f.variance[k].sqrt();
        x += s * ((1.0 - rho * rho).sqrt() * b.increment(k)[0] + rho * f.w.increment(k)[0]);
        check_state(k + 1, g.time(k + 1), &[x], crate::rsde::DEFAULT_DIVERGENCE_BOUND)?;
    }
    Ok(x)
}

/// The rough SDE for one frozen factor draw, with `v` the recovered
/// variance at the coarse nodes.
pub fn conditional_spec(model: &LsvModel, v: Vec<f64>) -> RsdeSpec {
    let (l1, r1, l2, r2) = (
        model.local_vol.clone(),
        model.correlation.clone(),
        model.local_vol.clone(),
        model.correlation.clone(),
    );
    RsdeSpec::new(1, 1, 1)
        .brownian(move |e, out| {
            let rho = r1(e.t);
            out[0] = l1(e.t, e.x[0]) * ((1.0 - rho * rho) * v[e.node]).sqrt();
        })
        .rough(move |e, out| out[0] = l2(e.t, e.x[0]) * r2(e.t))
        .jacobian_mode(if model.unit_local_vol { Jacobian::Zero } else { Jacobian::FiniteDifference })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawPrice {
    pub outer: usize,
    pub payoff: String,
    pub rough: f64,
    pub rough_se: f64,
    pub oracle: Option<f64>,
    /// Oracle difference between the recovered and the true variance.
    pub scheme_bound: Option<f64>,
}

impl DrawPrice {
    /// `|rough − oracle| ≤ 3 (SE + bound)`; `None` without an oracle.
    pub fn within_band(&self) -> Option<bool> {
        Some((self.rough - self.oracle?).abs() <= 3.0 * (self.rough_se + self.scheme_bound?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceRow {
    pub payoff: String,
    pub strike: f64,
    pub route: String,
    pub price: f64,
    pub stderr: f64,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct PriceReport {
    pub rows: Vec<PriceRow>,
    pub draws: Vec<DrawPrice>,
    pub floored: usize,
    pub outer: usize,
}

impl PriceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("strike,route,price,stderr,z\n");
        for r in &self.rows {
            let strike = if r.strike.is_nan() { r.payoff.clone() } else { format!("{:e}", r.strike) };
            s.push_str(&format!("{},{},{:e},{:e},{:e}\n", strike, r.route, r.price, r.stderr, r.z));
        }
        s
    }

    pub fn draws_csv(&self) -> String {
        let mut s = String::from("outer,payoff,rough,rough_se,oracle,scheme_bound\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for d in &self.draws {
            s.push_str(&format!(
                "{},{},{:e},{:e},{},{}\n",
                d.outer,
                d.payoff,
                d.rough,
                d.rough_se,
                opt(d.oracle),
                opt(d.scheme_bound)
            ));
        }
        s
    }

    /// Fraction of outer draws whose prices are all within band.
    pub fn draw_pass_fraction(&self) -> Option<f64> {
        let mut pass = vec![true; self.outer];
        for d in &self.draws {
            pass[d.outer] &= d.within_band()?;
        }
        Some(pass.iter().filter(|p| **p).count() as f64 / self.outer as f64)
    }

    pub fn tower_z(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| r.route == "rough").map(|r| r.z).collect()
    }

    /// Oracle prices nonincreasing in strike within every draw.
    pub fn oracle_monotone(&self) -> bool {
        (0..self.outer).all(|i| {
            let mut calls: Vec<(f64, f64)> = self
                .draws
                .iter()
                .filter(|d| d.outer == i && d.payoff.starts_with("call:"))
                .filter_map(|d| Some((d.payoff[5..].parse::<f64>().ok()?, d.oracle?)))
                .collect();
            calls.sort_by(|a, b| a.0.total_cmp(&b.0));
            calls.windows(2).all(|w| w[1].1 <= w[0].1)
        })
    }
}

/// Per outer draw, prices the payoffs with `inner` rough solves against the
/// lift of `M`; outer means are compared with `inner` joint samples.
pub fn conditional_price_rough(
    model: &LsvModel,
    payoffs: &[Payoff],
    outer: usize,
    inner: usize,
    grid: &TimeGrid,
    fine_factor: usize,
    seed: u64,
) -> Result<PriceReport> {
    model.validate(grid)?;
    if outer < 2 || inner < 2 {
        return Err(invalid("need at least two outer and two inner draws"));
    }
    let fine = grid.refine(fine_factor)?;
    let mut draws = Vec::with_capacity(outer * payoffs.len());
    let mut floored = 0;
    for i in 0..outer {
        let f = sample_factor(model, &fine, derive_seed(seed, stream::DRIVER, i as u64));
        let rp = lift_fine_path(&f.m, &fine, grid, Convention::Ito)?;
        let (v, fl) = bracket_derivative(&rp);
        floored += fl;
        let eff_resid: f64 = if model.unit_local_vol {
            (0..grid.steps())
                .map(|u| {
                    let rho = (model.correlation)(grid.time(u));
                    (1.0 - rho * rho) * v[u] * grid.dt(u)
                })
                .sum()
        } else {
            f64::NAN
        };
        let spec = conditional_spec(model, v);
        let inner_seed = derive_seed(seed, stream::BROWNIAN, i as u64);
        let terminals: Vec<f64> = (0..inner)
            .into_par_iter()
            .map(|j| {
                let b = BrownianDraw::sample(1, &fine, derive_seed(inner_seed, stream::BROWNIAN, j as u64));
                Ok(solve_rsde(&spec, &rp, &b, &[model.x0])?.terminal()[0])
            })
            .collect::<Result<_>>()?;
        for p in payoffs {
            let vals: Vec<f64> = terminals.iter().map(|x| p.eval(*x)).collect();
            let (m, se) = mean_se(&vals);
            let (oracle, bound) = if model.unit_local_vol {
                let o = mixing_formula_oracle(model, &f, p)?;
                let eff = bachelier(model.x0 + f.rho_m, eff_resid.sqrt(), p);
                (Some(o), Some((eff - o).abs()))
            } else {
                (None, None)
            };
            draws.push(DrawPrice {
                outer: i,
                payoff: p.id(),
                rough: m,
                rough_se: se,
                oracle,
                scheme_bound: bound,
            });
        }
    }
    let joint = simulate_lsv_joint(model, grid, fine_factor, inner, seed)?;
    let mut rows = Vec::new();
    for p in payoffs {
        let id = p.id();
        let per: Vec<&DrawPrice> = draws.iter().filter(|d| d.payoff == id).collect();
        let rough: Vec<f64> = per.iter().map(|d| d.rough).collect();
        let (rm, rse) = mean_se(&rough);
        let jv: Vec<f64> = joint.iter().map(|x| p.eval(*x)).collect();
        let (jm, jse) = mean_se(&jv);
        let z = z_score(rm, rse, jm, jse);
        rows.push(PriceRow {
            payoff: id.clone(),
            strike: p.strike(),
            route: "rough".into(),
            price: rm,
            stderr: rse,
            z,
        });
        rows.push(PriceRow {
            payoff: id.clone(),
            strike: p.strike(),
            route: "joint".into(),
            price: jm,
            stderr: jse,
            z,
        });
        if model.unit_local_vol {
            let oracle: Vec<f64> = per.iter().filter_map(|d| d.oracle).collect();
            let (om, ose) = mean_se(&oracle);
            rows.push(PriceRow {
                payoff: id,
                strike: p.strike(),
                route: "oracle".into(),
                price: om,
                stderr: ose,
                z: z_score(om, ose, jm, jse),
            });
        }
    }
    Ok(PriceReport {
        rows,
        draws,
        floored,
        outer,
    })
}

#[cfg(test)]
mod tests;
