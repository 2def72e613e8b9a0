use rayon::prelude::*;

use super::lift::sample_bm_lift;
use super::Convention;
use crate::error::{invalid, Result};
use crate::grid::TimeGrid;
use crate::rng::{derive_seed, stream};
use crate::stats::mean_se;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub check: &'static str,
    pub entry: String,
    pub estimate: f64,
    pub expected: f64,
    pub stderr: f64,
    pub z: f64,
}

/// Moment statistics of sampled Brownian lifts.
#[derive(Debug, Clone)]
pub struct LiftMomentReport {
    pub rows: Vec<MomentRow>,
}

impl LiftMomentReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,entry,estimate,expected,stderr,z\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e}\n",
                r.check, r.entry, r.estimate, r.expected, r.stderr, r.z
            ));
        }
        s
    }
}

/// Samples `samples` Brownian lifts and checks, entry by entry,
///
/// * `E δW = 0` and `E δW⊗δW = I (t − s)`, pooled over the coarse
///   intervals after scaling by `(t − s)^{-1/2}` and `(t − s)^{-1}`;
/// * `E [𝐖]_T = I T` for the bracket of the lift.
pub fn lift_moment_check(dim: usize, grid: &TimeGrid, fine_factor: usize, samples: usize, seed: u64) -> Result<LiftMomentReport> {
    if samples < 2 || dim == 0 {
        return Err(invalid("need a positive dimension and at least two samples"));
    }
    let n = grid.steps();
    let horizon = grid.horizon();
    // per sample: [first (n·d) | second (n·d²) | bracket at T (d²)]
    let per_sample: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let rp = sample_bm_lift(dim, grid, fine_factor, derive_seed(seed, stream::DRIVER, k as u64), Convention::Ito)?;
            let mut v = Vec::with_capacity(n * (dim + dim * dim) + dim * dim);
            for i in 0..n {
                let h = grid.dt(i);
                for p in 0..dim {
                    v.push((rp.value(i + 1)[p] - rp.value(i)[p]) / h.sqrt());
                }
            }
            for i in 0..n {
                let h = grid.dt(i);
                for p in 0..dim {
                    for q in 0..dim {
                        let dp = rp.value(i + 1)[p] - rp.value(i)[p];
                        let dq = rp.value(i + 1)[q] - rp.value(i)[q];
                        v.push(dp * dq / h);
                    }
                }
            }
            v.extend(rp.bracket().value(n).iter().map(|b| b / horizon));
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let pooled = |offset: usize, stride: usize, entry: usize, count: usize| -> Vec<f64> {
        per_sample
            .iter()
            .flat_map(|v| (0..count).map(move |i| v[offset + i * stride + entry]))
            .collect()
    };
    let mut push = |check: &'static str, entry: String, vals: Vec<f64>, expected: f64| {
        let (m, se) = mean_se(&vals);
        rows.push(MomentRow {
            check,
            entry,
            estimate: m,
            expected,
            stderr: se,
            z: if se > 0.0 { (m - expected) / se } else { 0.0 },
        });
    };
    for p in 0..dim {
        push("increment_mean", format!("{}", p + 1), pooled(0, dim, p, n), 0.0);
    }
    let second = n * dim;
    for p in 0..dim {
        for q in 0..dim {
            let e = p * dim + q;
            let expected = if p == q { 1.0 } else { 0.0 };
            push("increment_covariance", format!("{}{}", p + 1, q + 1), pooled(second, dim * dim, e, n), expected);
        }
    }
    let bracket = second + n * dim * dim;
    for p in 0..dim {
        for q in 0..dim {
            let expected = if p == q { 1.0 } else { 0.0 };
            let vals = pooled(bracket, 0, p * dim + q, 1);
            push("bracket_mean", format!("{}{}", p + 1, q + 1), vals, expected);
        }
    }
    Ok(LiftMomentReport { rows })
}
