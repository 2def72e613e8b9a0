//! Controlled paths and their rough integrals.
//!
//! A [`ControlledPath`] carries `F_i ∈ ℝ^{d_X × d_Y}` and its Gubinelli
//! derivative `F′_i ∈ ℝ^{d_X × d_Y × d_Y}` at every node. Slot order is
//! `F[k][a]` and `F′[k][a][b]`, where `a` is the integration slot and `b`
//! the direction of the driver increment, so that
//!
//! ```text
//! δF[k][a] ≈ Σ_b F′[k][a][b] δY^b
//! ∫ F dY  ≈ Σ_[u,v] Σ_a F[k][a] δY^a + Σ_{a,b} F′[k][a][b] 𝕐[b][a]
//! ```

use rayon::prelude::*;

use crate::convergence::ConvergenceTable;
use crate::error::{invalid, mismatch, Error, Result};
use crate::grid::TimeGrid;
use crate::rough_path::RoughPath;
use crate::stats::{median, pairwise_sum};

#[derive(Debug, Clone, PartialEq)]
pub struct ControlledPath {
    grid: TimeGrid,
    dim_x: usize,
    dim_y: usize,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl ControlledPath {
    pub fn new(grid: TimeGrid, dim_x: usize, dim_y: usize, values: Vec<f64>, derivs: Vec<f64>) -> Result<Self> {
        let nodes = grid.steps() + 1;
        if dim_x == 0 || dim_y == 0 {
            return Err(invalid("controlled path dimensions must be positive"));
        }
        if values.len() != nodes * dim_x * dim_y || derivs.len() != nodes * dim_x * dim_y * dim_y {
            return Err(invalid(format!(
                "controlled path of shape ({dim_x}, {dim_y}) on {nodes} nodes got {} values and {} derivatives",
                values.len(),
                derivs.len()
            )));
        }
        Ok(Self {
            grid,
            dim_x,
            dim_y,
            values,
            derivs,
        })
    }

    /// `F ≡ c` (a `d_X × d_Y` matrix), `F′ ≡ 0`.
    pub fn constant(grid: &TimeGrid, dim_x: usize, dim_y: usize, c: &[f64]) -> Result<Self> {
        if c.len() != dim_x * dim_y {
            return Err(invalid("constant integrand has the wrong shape"));
        }
        let nodes = grid.steps() + 1;
        Self::new(
            grid.clone(),
            dim_x,
            dim_y,
            c.repeat(nodes),
            vec![0.0; nodes * dim_x * dim_y * dim_y],
        )
    }

    /// The path `Y` itself as an integrand, so that `∫ F dY` is the matrix
    /// `∫ Y ⊗ dY` flattened into `d_X = d²` components:
    /// `F[(p,q)][c] = Y^p δ_{qc}` and `F′[(p,q)][c][b] = δ_{pb} δ_{qc}`.
    pub fn identity_of(rp: &RoughPath) -> Self {
        let d = rp.dim();
        let dx = d * d;
        let nodes = rp.steps() + 1;
        let mut values = vec![0.0; nodes * dx * d];
        let mut derivs = vec![0.0; nodes * dx * d * d];
        for i in 0..nodes {
            let y = rp.value(i);
            for p in 0..d {
                for q in 0..d {
                    let k = p * d + q;
                    values[(i * dx + k) * d + q] = y[p];
                    derivs[((i * dx + k) * d + q) * d + p] = 1.0;
                }
            }
        }
        Self {
            grid: rp.grid().clone(),
            dim_x: dx,
            dim_y: d,
            values,
            derivs,
        }
    }

    /// Builds `(F_i, F′_i)` node by node.
    pub fn from_fn(
        grid: &TimeGrid,
        dim_x: usize,
        dim_y: usize,
        mut node: impl FnMut(usize, &mut [f64], &mut [f64]),
    ) -> Result<Self> {
        let nodes = grid.steps() + 1;
        let (sv, sd) = (dim_x * dim_y, dim_x * dim_y * dim_y);
        let mut values = vec![0.0; nodes * sv];
        let mut derivs = vec![0.0; nodes * sd];
        for i in 0..nodes {
            node(i, &mut values[i * sv..(i + 1) * sv], &mut derivs[i * sd..(i + 1) * sd]);
        }
        Self::new(grid.clone(), dim_x, dim_y, values, derivs)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_y(&self) -> usize {
        self.dim_y
    }

    pub fn value(&self, i: usize) -> &[f64] {
        let s = self.dim_x * self.dim_y;
        &self.values[i * s..(i + 1) * s]
    }

    pub fn deriv(&self, i: usize) -> &[f64] {
        let s = self.dim_x * self.dim_y * self.dim_y;
        &self.derivs[i * s..(i + 1) * s]
    }

    /// `a·self + b·other`, node-wise on both levels.
    pub fn combine(&self, a: f64, other: &ControlledPath, b: f64) -> Result<Self> {
        if self.grid != other.grid || self.dim_x != other.dim_x || self.dim_y != other.dim_y {
            return Err(mismatch("controlled paths of different shape"));
        }
        let lin = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| a * u + b * v).collect();
        Ok(Self {
            values: lin(&self.values, &other.values),
            derivs: lin(&self.derivs, &other.derivs),
            ..self.clone()
        })
    }

    /// `R^F_{t_i,t_j} = δF − F′_{t_i} δY`, a `d_X × d_Y` matrix.
    pub fn remainder(&self, rp: &RoughPath, i: usize, j: usize) -> Result<Vec<f64>> {
        self.check(rp)?;
        if i >= j || j > self.grid.steps() {
            return Err(invalid(format!("bad window ({i}, {j})")));
        }
        let mut out = vec![0.0; self.dim_x * self.dim_y];
        let dy: Vec<f64> = rp.value(j).iter().zip(rp.value(i)).map(|(b, a)| b - a).collect();
        self.remainder_into(&dy, i, j, &mut out);
        Ok(out)
    }

    fn remainder_into(&self, dy: &[f64], i: usize, j: usize, out: &mut [f64]) {
        let d = self.dim_y;
        let (fi, fj, fp) = (self.value(i), self.value(j), self.deriv(i));
        for e in 0..self.dim_x * d {
            let mut lin = 0.0;
            for b in 0..d {
                lin += fp[e * d + b] * dy[b];
            }
            out[e] = fj[e] - fi[e] - lin;
        }
    }

    fn check(&self, rp: &RoughPath) -> Result<()> {
        if rp.dim() != self.dim_y {
            return Err(mismatch(format!("integrand expects d_Y = {}, driver has {}", self.dim_y, rp.dim())));
        }
        if rp.grid() != &self.grid {
            return Err(mismatch("integrand and driver live on different grids"));
        }
        Ok(())
    }

    /// Adds the Davie term `F_u δY + F′_u : 𝕐` at node `u` to `out`.
    pub(crate) fn add_davie_term(&self, u: usize, dy: &[f64], area: &[f64], out: &mut [f64]) {
        davie_term(self.dim_x, self.dim_y, self.value(u), self.deriv(u), dy, area, out);
    }
}

/// `out[k] += Σ_a F[k][a] δY^a + Σ_{a,b} F′[k][a][b] 𝕐[b][a]`.
#[inline]
pub(crate) fn davie_term(dx: usize, dy_dim: usize, f: &[f64], fp: &[f64], dy: &[f64], area: &[f64], out: &mut [f64]) {
    let d = dy_dim;
    for k in 0..dx {
        let mut acc = 0.0;
        for a in 0..d {
            acc += f[k * d + a] * dy[a];
        }
        for a in 0..d {
            for b in 0..d {
                acc += fp[(k * d + a) * d + b] * area[b * d + a];
            }
        }
        out[k] += acc;
    }
}

/// Compensated Riemann sum over the partition (increasing node indices).
pub fn davie_sum(cp: &ControlledPath, rp: &RoughPath, partition: &[usize]) -> Result<Vec<f64>> {
    cp.check(rp)?;
    if partition.len() < 2 {
        return Err(invalid("partition needs at least two points"));
    }
    if partition.windows(2).any(|w| w[1] <= w[0]) || *partition.last().unwrap() > rp.steps() {
        return Err(invalid("partition must be strictly increasing within the grid"));
    }
    let d = rp.dim();
    let mut first = vec![0.0; d];
    let mut second = vec![0.0; d * d];
    let mut out = vec![0.0; cp.dim_x];
    for w in partition.windows(2) {
        rp.increment_into(w[0], w[1], &mut first, &mut second);
        cp.add_davie_term(w[0], &first, &second, &mut out);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub stride: usize,
    pub mesh: f64,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoughIntegral {
    pub value: Vec<f64>,
    /// Davie sums on dyadically coarsened partitions, finest first.
    pub refinement_trace: Vec<TraceEntry>,
}

/// The full-grid Davie sum over `[t_i, t_j]` plus its dyadic coarsenings.
pub fn rough_integral(cp: &ControlledPath, rp: &RoughPath, window: (usize, usize)) -> Result<RoughIntegral> {
    let (i, j) = window;
    if i >= j {
        return Err(invalid(format!("empty window ({i}, {j})")));
    }
    let mut trace = Vec::new();
    let mut stride = 1;
    while stride < j - i || stride == 1 {
        let mut part: Vec<usize> = (i..j).step_by(stride).collect();
        part.push(j);
        let mesh = part
            .windows(2)
            .map(|w| rp.grid().time(w[1]) - rp.grid().time(w[0]))
            .fold(0.0, f64::max);
        trace.push(TraceEntry {
            stride,
            mesh,
            value: davie_sum(cp, rp, &part)?,
        });
        stride *= 2;
    }
    Ok(RoughIntegral {
        value: trace[0].value.clone(),
        refinement_trace: trace,
    })
}

/// `∫_0^{t_i} F dY` at every node, `(N+1)·d_X` values.
pub fn integral_path(cp: &ControlledPath, rp: &RoughPath) -> Result<Vec<f64>> {
    cp.check(rp)?;
    let (dx, d) = (cp.dim_x, rp.dim());
    let n = rp.steps();
    let mut out = vec![0.0; (n + 1) * dx];
    let mut first = vec![0.0; d];
    let mut acc = vec![0.0; dx];
    for u in 0..n {
        for p in 0..d {
            first[p] = rp.value(u + 1)[p] - rp.value(u)[p];
        }
        cp.add_davie_term(u, &first, rp.area(u), &mut acc);
        out[(u + 1) * dx..(u + 2) * dx].copy_from_slice(&acc);
    }
    Ok(out)
}

/// Monte Carlo family of controlled paths, each paired with its driver (or
/// all sharing one driver).
#[derive(Debug, Clone)]
pub struct ControlledEnsemble {
    samples: Vec<ControlledPath>,
    drivers: Vec<RoughPath>,
}

impl ControlledEnsemble {
    pub fn new(samples: Vec<ControlledPath>, drivers: Vec<RoughPath>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if drivers.len() != 1 && drivers.len() != samples.len() {
            return Err(mismatch(format!("{} drivers for {} samples", drivers.len(), samples.len())));
        }
        let first = &samples[0];
        for (k, s) in samples.iter().enumerate() {
            if s.grid != first.grid || s.dim_x != first.dim_x || s.dim_y != first.dim_y {
                return Err(mismatch(format!("sample {k} differs in grid or shape")));
            }
            s.check(&drivers[k.min(drivers.len() - 1)])?;
        }
        Ok(Self { samples, drivers })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, k: usize) -> &ControlledPath {
        &self.samples[k]
    }

    pub fn driver(&self, k: usize) -> &RoughPath {
        &self.drivers[k.min(self.drivers.len() - 1)]
    }

    fn grid(&self) -> &TimeGrid {
        &self.samples[0].grid
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeminormReport {
    pub p: f64,
    pub alpha: f64,
    pub f_norm: f64,
    pub fprime_norm: f64,
    pub conditional_remainder_norm: f64,
    pub fatnorm_total: f64,
    /// Monte Carlo standard error of the remainder term at its maximising pair.
    pub remainder_stderr: f64,
}

impl SeminormReport {
    pub fn to_text(&self) -> String {
        format!(
            "p = {:e}\nalpha = {:e}\nf_norm = {:e}\nfprime_norm = {:e}\nconditional_remainder_norm = {:e}\nfatnorm_total = {:e}\nremainder_stderr = {:e}\n",
            self.p,
            self.alpha,
            self.f_norm,
            self.fprime_norm,
            self.conditional_remainder_norm,
            self.fatnorm_total,
            self.remainder_stderr
        )
    }
}

fn lp_norm(per_sample: &[f64], p: f64) -> f64 {
    let pow: Vec<f64> = per_sample.iter().map(|x| x.powf(p)).collect();
    (pairwise_sum(&pow) / pow.len() as f64).powf(1.0 / p)
}

fn frob(m: &[f64]) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `sup_t ‖G_t‖_p + sup_{s<t} ‖G_t − G_s‖_p / |t − s|^α` for a node-indexed
/// field of `size`-vectors.
fn sup_holder(
    ens: &ControlledEnsemble,
    size: usize,
    field: impl Fn(&ControlledPath, usize) -> &[f64],
    alpha: f64,
    p: f64,
) -> f64 {
    let grid = ens.grid();
    let n = grid.steps();
    let m = ens.len();
    let mut buf = vec![0.0; m];
    let mut sup_val: f64 = 0.0;
    for i in 0..=n {
        for (k, s) in ens.samples.iter().enumerate() {
            buf[k] = frob(field(s, i));
        }
        sup_val = sup_val.max(lp_norm(&buf, p));
    }
    let mut diff = vec![0.0; size];
    let mut sup_inc: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..=n {
            for (k, s) in ens.samples.iter().enumerate() {
                let (a, b) = (field(s, i), field(s, j));
                for e in 0..size {
                    diff[e] = b[e] - a[e];
                }
                buf[k] = frob(&diff);
            }
            sup_inc = sup_inc.max(lp_norm(&buf, p) / (grid.time(j) - grid.time(i)).powf(alpha));
        }
    }
    sup_val + sup_inc
}

/// Empirical `(α; p)` seminorms of a controlled ensemble. The conditional
/// expectation in the remainder term is replaced by the cross-sample mean.
pub fn estimate_fatnorm(ens: &ControlledEnsemble, alpha: f64, p: f64) -> Result<SeminormReport> {
    if ens.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: ens.len(),
        });
    }
    if p < 2.0 {
        return Err(invalid(format!("moment exponent p must be >= 2, got {p}")));
    }
    let first = &ens.samples[0];
    let (dx, dy) = (first.dim_x, first.dim_y);
    let f_norm = sup_holder(ens, dx * dy, |s, i| s.value(i), alpha, p);
    let fprime_norm = sup_holder(ens, dx * dy * dy, |s, i| s.deriv(i), alpha, p);

    let grid = ens.grid();
    let n = grid.steps();
    let m = ens.len();
    let size = dx * dy;
    let mut rem = vec![0.0; m * size];
    let mut col = vec![0.0; m];
    let mut mean = vec![0.0; size];
    let mut var = vec![0.0; size];
    let mut dyv = vec![0.0; dy];
    let (mut best, mut best_se) = (0.0_f64, 0.0);
    for i in 0..n {
        for j in i + 1..=n {
            for (k, s) in ens.samples.iter().enumerate() {
                let rp = ens.driver(k);
                for b in 0..dy {
                    dyv[b] = rp.value(j)[b] - rp.value(i)[b];
                }
                s.remainder_into(&dyv, i, j, &mut rem[k * size..(k + 1) * size]);
            }
            for e in 0..size {
                for k in 0..m {
                    col[k] = rem[k * size + e];
                }
                mean[e] = pairwise_sum(&col) / m as f64;
                for k in 0..m {
                    col[k] = (col[k] - mean[e]).powi(2);
                }
                var[e] = pairwise_sum(&col) / (m - 1) as f64;
            }
            let scale = (grid.time(j) - grid.time(i)).powf(2.0 * alpha);
            let norm = frob(&mean);
            let ratio = norm / scale;
            if ratio > best {
                best = ratio;
                // delta method for the norm of a mean vector
                let se2: f64 = (0..size).map(|e| (mean[e] / norm).powi(2) * var[e] / m as f64).sum();
                best_se = se2.sqrt() / scale;
            }
        }
    }
    Ok(SeminormReport {
        p,
        alpha,
        f_norm,
        fprime_norm,
        conditional_remainder_norm: best,
        fatnorm_total: f_norm + fprime_norm + best,
        remainder_stderr: best_se,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentCheck {
    /// Rows `(span, "moment_ratio", max ratio)` for dyadic spans `2^k` steps.
    pub table: ConvergenceTable,
    pub median: f64,
    /// Every ratio lies within a factor 2 of the median.
    pub bounded: bool,
}

/// `max_i (E|∫_{t_i}^{t_{i+2^k}} F dY|^p)^{1/p} / |t_{i+2^k} − t_i|^α` per
/// dyadic span.
pub fn increment_moment_check(ens: &ControlledEnsemble, p: f64, alpha: f64) -> Result<MomentCheck> {
    if alpha * p <= 1.0 {
        log::warn!("alpha * p = {} <= 1; moment bounds need alpha * p > 1", alpha * p);
    }
    let paths: Vec<Vec<f64>> = (0..ens.len())
        .into_par_iter()
        .map(|k| integral_path(ens.sample(k), ens.driver(k)))
        .collect::<Result<_>>()?;
    let grid = ens.grid();
    let n = grid.steps();
    let dx = ens.samples[0].dim_x;
    let mut table = ConvergenceTable::new();
    let mut buf = vec![0.0; ens.len()];
    let mut diff = vec![0.0; dx];
    let mut span = 1;
    let mut ratios = Vec::new();
    while span <= n {
        let mut worst: f64 = 0.0;
        let mut widest: f64 = 0.0;
        for i in 0..=n - span {
            let j = i + span;
            for (k, path) in paths.iter().enumerate() {
                for e in 0..dx {
                    diff[e] = path[j * dx + e] - path[i * dx + e];
                }
                buf[k] = frob(&diff);
            }
            let h = grid.time(j) - grid.time(i);
            widest = widest.max(h);
            worst = worst.max(lp_norm(&buf, p) / h.powf(alpha));
        }
        table.push(widest, "moment_ratio", worst, None);
        ratios.push(worst);
        span *= 2;
    }
    let med = median(&ratios);
    let bounded = ratios.iter().all(|&r| r <= 2.0 * med && 2.0 * r >= med);
    Ok(MomentCheck {
        table,
        median: med,
        bounded,
    })
}

#[cfg(test)]
mod tests;
