use std::fmt;
use std::sync::Arc;

use super::RoughPath;
use crate::brownian::BrownianDraw;
use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    Ito,
    Stratonovich,
}

impl std::str::FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ito" => Ok(Self::Ito),
            "stratonovich" => Ok(Self::Stratonovich),
            other => Err(invalid(format!("unknown convention `{other}`"))),
        }
    }
}

/// `(t, state, out)`; writes a vector (drift) or a row-major matrix (diffusion).
pub type StateFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// An Itô diffusion `dS = β(t, S) dt + γ(t, S) dW` with `S ∈ ℝ^dim`,
/// `W ∈ ℝ^driving_dim` and `γ` a `dim × driving_dim` matrix.
#[derive(Clone)]
pub struct ItoDiffusionSpec {
    pub dim: usize,
    pub driving_dim: usize,
    pub drift: StateFn,
    pub diffusion: StateFn,
    pub initial: Vec<f64>,
}

impl fmt::Debug for ItoDiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ItoDiffusionSpec")
            .field("dim", &self.dim)
            .field("driving_dim", &self.driving_dim)
            .field("initial", &self.initial)
            .finish_non_exhaustive()
    }
}

impl ItoDiffusionSpec {
    pub fn new(
        initial: Vec<f64>,
        driving_dim: usize,
        drift: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim: initial.len(),
            driving_dim,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            initial,
        }
    }

    /// Plain `d`-dimensional Brownian motion started at 0.
    pub fn brownian(d: usize) -> Self {
        Self::new(
            vec![0.0; d],
            d,
            |_, _, out| out.fill(0.0),
            move |_, _, out| {
                out.fill(0.0);
                for a in 0..d {
                    out[a * d + a] = 1.0;
                }
            },
        )
    }
}

/// A sampled lift together with the fine path it was built from.
#[derive(Debug, Clone)]
pub struct SampledLift {
    pub lift: RoughPath,
    pub fine_values: Vec<f64>,
    pub draw: BrownianDraw,
}

/// Lifts a polygonal approximation of `path` with `quadrature_points`
/// straight pieces per grid interval.
pub fn lift_smooth(
    path: impl Fn(f64) -> Vec<f64>,
    grid: &TimeGrid,
    quadrature_points: usize,
) -> Result<RoughPath> {
    if quadrature_points < 2 {
        return Err(invalid("lift_smooth needs at least 2 quadrature points"));
    }
    let n = grid.steps();
    let y0 = path(grid.time(0));
    let d = y0.len();
    let mut values = Vec::with_capacity((n + 1) * d);
    values.extend_from_slice(&y0);
    let mut areas = vec![0.0; n * d * d];
    let mut left = y0;
    let mut off = vec![0.0; d];
    let mut delta = vec![0.0; d];
    for i in 0..n {
        let (s, t) = (grid.time(i), grid.time(i + 1));
        let h = (t - s) / quadrature_points as f64;
        let start = left.clone();
        let area = &mut areas[i * d * d..(i + 1) * d * d];
        off.fill(0.0);
        for k in 1..=quadrature_points {
            let right = if k == quadrature_points { path(t) } else { path(s + k as f64 * h) };
            check_len(&right, d)?;
            for p in 0..d {
                delta[p] = right[p] - left[p];
            }
            // exact iterated integral of a straight piece
            for p in 0..d {
                for q in 0..d {
                    area[p * d + q] += (off[p] + 0.5 * delta[p]) * delta[q];
                }
            }
            for p in 0..d {
                off[p] = right[p] - start[p];
            }
            left = right;
        }
        values.extend_from_slice(&left);
    }
    RoughPath::from_parts(grid.clone(), d, values, areas)
}

fn check_len(v: &[f64], d: usize) -> Result<()> {
    if v.len() != d {
        return Err(invalid(format!("path changed dimension from {d} to {}", v.len())));
    }
    Ok(())
}

/// Lifts a path known at the nodes of `fine`, a refinement of `coarse`, by
/// left-point Riemann sums; the Stratonovich lift is the geometric part of
/// the Itô one, which coincides with the trapezoidal sum.
pub fn lift_fine_path(
    fine_values: &[f64],
    fine: &TimeGrid,
    coarse: &TimeGrid,
    convention: Convention,
) -> Result<RoughPath> {
    let factor = coarse.refinement_factor(fine)?;
    let m = fine.steps();
    if fine_values.is_empty() || fine_values.len() % (m + 1) != 0 {
        return Err(invalid("fine values do not match the fine grid"));
    }
    let d = fine_values.len() / (m + 1);
    let n = coarse.steps();
    let mut values = Vec::with_capacity((n + 1) * d);
    let mut areas = vec![0.0; n * d * d];
    let mut off = vec![0.0; d];
    for i in 0..n {
        let base = &fine_values[i * factor * d..(i * factor + 1) * d];
        values.extend_from_slice(base);
        let area = &mut areas[i * d * d..(i + 1) * d * d];
        off.fill(0.0);
        for k in i * factor..(i + 1) * factor {
            let a = &fine_values[k * d..(k + 1) * d];
            let b = &fine_values[(k + 1) * d..(k + 2) * d];
            for p in 0..d {
                for q in 0..d {
                    area[p * d + q] += off[p] * (b[q] - a[q]);
                }
            }
            for p in 0..d {
                off[p] = b[p] - base[p];
            }
        }
    }
    values.extend_from_slice(&fine_values[m * d..]);
    let rp = RoughPath::from_parts(coarse.clone(), d, values, areas)?.mark_sampled();
    Ok(match convention {
        Convention::Ito => rp,
        Convention::Stratonovich => rp.geometrize(),
    })
}

/// Lifts the Brownian path generated by `draw` onto `coarse`.
pub fn lift_brownian_draw(draw: &BrownianDraw, coarse: &TimeGrid, convention: Convention) -> Result<SampledLift> {
    if draw.dim() == 0 {
        return Err(invalid("Brownian draw has dimension 0"));
    }
    let fine_values = draw.path();
    let lift = lift_fine_path(&fine_values, draw.grid(), coarse, convention)?;
    Ok(SampledLift {
        lift,
        fine_values,
        draw: draw.clone(),
    })
}

pub fn sample_bm_lift(
    d: usize,
    grid: &TimeGrid,
    fine_factor: usize,
    seed: u64,
    convention: Convention,
) -> Result<RoughPath> {
    Ok(sample_bm_lift_with_draw(d, grid, fine_factor, seed, convention)?.lift)
}

/// As [`sample_bm_lift`], also returning the fine Brownian increments.
pub fn sample_bm_lift_with_draw(
    d: usize,
    grid: &TimeGrid,
    fine_factor: usize,
    seed: u64,
    convention: Convention,
) -> Result<SampledLift> {
    if d == 0 {
        return Err(invalid("Brownian dimension must be positive"));
    }
    let fine = grid.refine(fine_factor)?;
    let draw = BrownianDraw::sample(d, &fine, seed);
    lift_brownian_draw(&draw, grid, convention)
}

/// Euler–Maruyama path of `spec` on the grid of `draw`, `(M+1)·dim` values.
pub fn simulate_ito_diffusion(spec: &ItoDiffusionSpec, draw: &BrownianDraw) -> Result<Vec<f64>> {
    let (ds, dw) = (spec.dim, spec.driving_dim);
    if draw.dim() != dw {
        return Err(invalid(format!("diffusion needs {dw} Brownian components, draw has {}", draw.dim())));
    }
    if spec.initial.len() != ds {
        return Err(invalid("initial state has the wrong dimension"));
    }
    let grid = draw.grid();
    let m = grid.steps();
    let mut out = Vec::with_capacity((m + 1) * ds);
    out.extend_from_slice(&spec.initial);
    let mut state = spec.initial.clone();
    let mut beta = vec![0.0; ds];
    let mut gamma = vec![0.0; ds * dw];
    for k in 0..m {
        let t = grid.time(k);
        (spec.drift)(t, &state, &mut beta);
        (spec.diffusion)(t, &state, &mut gamma);
        if beta.iter().chain(&gamma).any(|v| !v.is_finite()) {
            return Err(Error::CallbackFailure {
                which: "diffusion coefficient",
                time: t,
                state,
            });
        }
        let h = grid.dt(k);
        let dw_k = draw.increment(k);
        for i in 0..ds {
            let mut acc = beta[i] * h;
            for j in 0..dw {
                acc += gamma[i * dw + j] * dw_k[j];
            }
            state[i] += acc;
        }
        out.extend_from_slice(&state);
    }
    Ok(out)
}

/// Itô lift of an Euler–Maruyama sample of `spec`.
pub fn lift_ito_diffusion(
    spec: &ItoDiffusionSpec,
    grid: &TimeGrid,
    fine_factor: usize,
    seed: u64,
) -> Result<RoughPath> {
    let fine = grid.refine(fine_factor)?;
    let draw = BrownianDraw::sample(spec.driving_dim, &fine, seed);
    Ok(lift_diffusion_draw(spec, &draw, grid)?.lift)
}

/// Itô lift of the diffusion driven by a given fine Brownian draw.
pub fn lift_diffusion_draw(spec: &ItoDiffusionSpec, draw: &BrownianDraw, coarse: &TimeGrid) -> Result<SampledLift> {
    let fine_values = simulate_ito_diffusion(spec, draw)?;
    let lift = lift_fine_path(&fine_values, draw.grid(), coarse, Convention::Ito)?;
    Ok(SampledLift {
        lift,
        fine_values,
        draw: draw.clone(),
    })
}
