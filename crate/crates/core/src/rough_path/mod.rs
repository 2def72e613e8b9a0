//! Level-2 rough paths sampled on a [`TimeGrid`].
//!
//! A [`RoughPath`] stores the first level `Y_i` at every node and the second
//! level `𝕐_{t_i,t_{i+1}}` over every consecutive interval. Increments over
//! longer windows are *defined* by Chen's relation
//!
//! ```text
//! 𝕐_{s,u} = 𝕐_{s,t} + 𝕐_{t,u} + δY_{s,t} ⊗ δY_{t,u}
//! ```
//!
//! Matrices are flat, row-major `d × d` slices; entry `(p, q)` of `𝕐_{s,t}`
//! stands for `∫_s^t (Y^p_r − Y^p_s) dY^q_r`.

mod io;
mod lift;
mod moments;

pub use moments::{lift_moment_check, LiftMomentReport, MomentRow};
pub use io::{read_observation_csv, read_rough_path, write_rough_path};
pub use lift::{
    lift_brownian_draw, lift_diffusion_draw, lift_fine_path, lift_ito_diffusion, lift_smooth,
    sample_bm_lift, sample_bm_lift_with_draw, simulate_ito_diffusion, Convention,
    ItoDiffusionSpec, SampledLift, StateFn,
};

use crate::error::{invalid, mismatch, Result};
use crate::grid::TimeGrid;

pub const DEFAULT_ALPHA: f64 = 0.4;

/// First and second level increment over a window `[t_i, t_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoughPath {
    grid: TimeGrid,
    dim: usize,
    alpha: f64,
    sampled: bool,
    values: Vec<f64>,
    areas: Vec<f64>,
}

/// `[𝐘]_{0,t_i}` at every node, as flat symmetric `d × d` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct BracketPath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderStats {
    pub first_level_holder: f64,
    pub second_level_holder: f64,
    pub homogeneous_norm: f64,
    pub bracket_lip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distance {
    RhoAlpha,
    RhoAlpha1,
}

fn check_alpha(alpha: f64, sampled: bool) -> Result<()> {
    let upper_ok = if sampled { alpha < 0.5 } else { alpha <= 0.5 };
    if alpha > 1.0 / 3.0 && upper_ok {
        Ok(())
    } else if sampled {
        Err(invalid(format!("alpha must lie in (1/3, 1/2) for sampled lifts, got {alpha}")))
    } else {
        Err(invalid(format!("alpha must lie in (1/3, 1/2], got {alpha}")))
    }
}

fn frob(m: &[f64]) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `out = δY ⊗ δY − A − Aᵀ`, symmetric bit-for-bit.
fn bracket_increment(dim: usize, dy: &[f64], area: &[f64], out: &mut [f64]) {
    for p in 0..dim {
        for q in 0..dim {
            let s = area[p * dim + q] + area[q * dim + p];
            out[p * dim + q] = dy[p] * dy[q] - s;
        }
    }
}

impl RoughPath {
    /// Assembles a rough path from node values (`(N+1)·d`) and consecutive
    /// second-level increments (`N·d·d`).
    pub fn from_parts(grid: TimeGrid, dim: usize, values: Vec<f64>, areas: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("rough path dimension must be positive"));
        }
        let n = grid.steps();
        if values.len() != (n + 1) * dim {
            return Err(invalid(format!("expected {} node values, got {}", (n + 1) * dim, values.len())));
        }
        if areas.len() != n * dim * dim {
            return Err(invalid(format!("expected {} area entries, got {}", n * dim * dim, areas.len())));
        }
        Ok(Self {
            grid,
            dim,
            alpha: DEFAULT_ALPHA,
            sampled: false,
            values,
            areas,
        })
    }

    /// Sets the Hölder exponent carried as metadata.
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        check_alpha(alpha, self.sampled)?;
        self.alpha = alpha;
        Ok(self)
    }

    pub(crate) fn mark_sampled(mut self) -> Self {
        self.sampled = true;
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_sampled(&self) -> bool {
        self.sampled
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored `𝕐_{t_i,t_{i+1}}`.
    pub fn area(&self, i: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.areas[i * dd..(i + 1) * dd]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Chen increment over `[t_i, t_j]`.
    pub fn increment(&self, i: usize, j: usize) -> Result<Increment> {
        if i >= j || j > self.steps() {
            return Err(invalid(format!("need 0 <= i < j <= {}, got ({i}, {j})", self.steps())));
        }
        let mut first = vec![0.0; self.dim];
        let mut second = vec![0.0; self.dim * self.dim];
        self.increment_into(i, j, &mut first, &mut second);
        Ok(Increment { first, second })
    }

    /// Allocation-free Chen increment; `i < j` is the caller's contract.
    pub fn increment_into(&self, i: usize, j: usize, first: &mut [f64], second: &mut [f64]) {
        let d = self.dim;
        debug_assert!(i < j && j <= self.steps());
        if j == i + 1 {
            let (a, b) = (self.value(i), self.value(j));
            for p in 0..d {
                first[p] = b[p] - a[p];
            }
            second.copy_from_slice(self.area(i));
            return;
        }
        first.fill(0.0);
        second.fill(0.0);
        for k in i..j {
            let (a, b) = (self.value(k), self.value(k + 1));
            let area = self.area(k);
            // 𝕐_{s,u} = 𝕐_{s,t} + 𝕐_{t,u} + δY_{s,t} ⊗ δY_{t,u}
            for p in 0..d {
                for q in 0..d {
                    let dq = b[q] - a[q];
                    second[p * d + q] += area[p * d + q] + first[p] * dq;
                }
            }
            for p in 0..d {
                first[p] += b[p] - a[p];
            }
        }
    }

    pub fn bracket(&self) -> BracketPath {
        let d = self.dim;
        let dd = d * d;
        let n = self.steps();
        let mut values = vec![0.0; (n + 1) * dd];
        let mut dy = vec![0.0; d];
        let mut inc = vec![0.0; dd];
        for i in 0..n {
            for p in 0..d {
                dy[p] = self.value(i + 1)[p] - self.value(i)[p];
            }
            bracket_increment(d, &dy, self.area(i), &mut inc);
            for e in 0..dd {
                values[(i + 1) * dd + e] = values[i * dd + e] + inc[e];
            }
        }
        BracketPath {
            grid: self.grid.clone(),
            dim: d,
            values,
        }
    }

    /// The geometric part `𝐘° = (Y, 𝕐 + δ[𝐘]/2)`, computed on each interval as
    /// `Anti(𝕐) + δY ⊗ δY / 2` so that the symmetric part is exact.
    pub fn geometrize(&self) -> RoughPath {
        let d = self.dim;
        let n = self.steps();
        let mut areas = vec![0.0; self.areas.len()];
        for i in 0..n {
            let (a, b) = (self.value(i), self.value(i + 1));
            let src = self.area(i);
            let dst = &mut areas[i * d * d..(i + 1) * d * d];
            for p in 0..d {
                for q in 0..d {
                    let anti = 0.5 * (src[p * d + q] - src[q * d + p]);
                    dst[p * d + q] = anti + 0.5 * ((b[p] - a[p]) * (b[q] - a[q]));
                }
            }
        }
        RoughPath {
            grid: self.grid.clone(),
            dim: d,
            alpha: self.alpha,
            sampled: self.sampled,
            values: self.values.clone(),
            areas,
        }
    }

    /// The path stopped at node `i`: constant afterwards, zero second level.
    pub fn stopped_at(&self, i: usize) -> RoughPath {
        let d = self.dim;
        let mut values = self.values.clone();
        let mut areas = self.areas.clone();
        let last = self.value(i.min(self.steps())).to_vec();
        for k in i + 1..=self.steps() {
            values[k * d..(k + 1) * d].copy_from_slice(&last);
        }
        for k in i..self.steps() {
            areas[k * d * d..(k + 1) * d * d].fill(0.0);
        }
        RoughPath { values, areas, ..self.clone() }
    }

    /// Grid-restricted Hölder statistics.
    pub fn holder_stats(&self, alpha: f64) -> Result<HolderStats> {
        check_alpha(alpha, false)?;
        let d = self.dim;
        let n = self.steps();
        let bracket = self.bracket();
        let mut first = vec![0.0; d];
        let mut second = vec![0.0; d * d];
        let mut db = vec![0.0; d * d];
        let mut stats = HolderStats {
            first_level_holder: 0.0,
            second_level_holder: 0.0,
            homogeneous_norm: 0.0,
            bracket_lip: 0.0,
        };
        for i in 0..n {
            first.fill(0.0);
            second.fill(0.0);
            for j in i + 1..=n {
                self.extend(j - 1, &mut first, &mut second);
                let h = self.grid.time(j) - self.grid.time(i);
                stats.first_level_holder = stats.first_level_holder.max(frob(&first) / h.powf(alpha));
                stats.second_level_holder =
                    stats.second_level_holder.max(frob(&second) / h.powf(2.0 * alpha));
                for e in 0..d * d {
                    db[e] = bracket.values[j * d * d + e] - bracket.values[i * d * d + e];
                }
                stats.bracket_lip = stats.bracket_lip.max(frob(&db) / h);
            }
        }
        stats.homogeneous_norm = stats.first_level_holder.max(stats.second_level_holder.sqrt());
        Ok(stats)
    }

    /// Extends a running Chen increment by the interval `[t_k, t_{k+1}]`.
    fn extend(&self, k: usize, first: &mut [f64], second: &mut [f64]) {
        let d = self.dim;
        let (a, b) = (self.value(k), self.value(k + 1));
        let area = self.area(k);
        for p in 0..d {
            for q in 0..d {
                second[p * d + q] += area[p * d + q] + first[p] * (b[q] - a[q]);
            }
        }
        for p in 0..d {
            first[p] += b[p] - a[p];
        }
    }

    pub(crate) fn check_compatible(&self, other: &RoughPath) -> Result<()> {
        if self.dim != other.dim {
            return Err(mismatch(format!("dimensions {} and {}", self.dim, other.dim)));
        }
        if self.grid != other.grid {
            return Err(mismatch("rough paths live on different grids"));
        }
        Ok(())
    }
}

impl BracketPath {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `[𝐘]_{0,t_i}`.
    pub fn value(&self, i: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.values[i * dd..(i + 1) * dd]
    }

    /// `δ[𝐘]_{t_i,t_j}`.
    pub fn increment(&self, i: usize, j: usize) -> Vec<f64> {
        self.value(j).iter().zip(self.value(i)).map(|(b, a)| b - a).collect()
    }
}

/// Grid-restricted `ρ_α` or `ρ_{α,1}` distance.
pub fn rough_distance(a: &RoughPath, b: &RoughPath, alpha: f64, variant: Distance) -> Result<f64> {
    a.check_compatible(b)?;
    check_alpha(alpha, false)?;
    match variant {
        Distance::RhoAlpha => Ok(rho_alpha(a, b, alpha)),
        Distance::RhoAlpha1 => {
            let geo = rho_alpha(&a.geometrize(), &b.geometrize(), alpha);
            let (ba, bb) = (a.bracket(), b.bracket());
            let d = a.dim;
            let n = a.steps();
            let mut lip: f64 = 0.0;
            let mut diff = vec![0.0; d * d];
            for i in 0..n {
                for j in i + 1..=n {
                    for e in 0..d * d {
                        let da = ba.values[j * d * d + e] - ba.values[i * d * d + e];
                        let db = bb.values[j * d * d + e] - bb.values[i * d * d + e];
                        diff[e] = da - db;
                    }
                    lip = lip.max(frob(&diff) / (a.grid.time(j) - a.grid.time(i)));
                }
            }
            Ok(geo + lip)
        }
    }
}

fn rho_alpha(a: &RoughPath, b: &RoughPath, alpha: f64) -> f64 {
    let d = a.dim;
    let n = a.steps();
    let (mut fa, mut sa) = (vec![0.0; d], vec![0.0; d * d]);
    let (mut fb, mut sb) = (vec![0.0; d], vec![0.0; d * d]);
    let mut df = vec![0.0; d];
    let mut ds = vec![0.0; d * d];
    let (mut first, mut second): (f64, f64) = (0.0, 0.0);
    for i in 0..n {
        fa.fill(0.0);
        sa.fill(0.0);
        fb.fill(0.0);
        sb.fill(0.0);
        for j in i + 1..=n {
            a.extend(j - 1, &mut fa, &mut sa);
            b.extend(j - 1, &mut fb, &mut sb);
            let h = a.grid.time(j) - a.grid.time(i);
            for p in 0..d {
                df[p] = fa[p] - fb[p];
            }
            for e in 0..d * d {
                ds[e] = sa[e] - sb[e];
            }
            first = first.max(frob(&df) / h.powf(alpha));
            second = second.max(frob(&ds) / h.powf(2.0 * alpha));
        }
    }
    first + second
}
