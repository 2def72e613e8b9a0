use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::grid::TimeGrid;
use crate::rng::rng_from_seed;

/// Increments of a `dim`-dimensional Brownian motion on a (possibly refined)
/// grid, reproducible from `seed`.
///
/// Increment `k` (over `[t_k, t_{k+1}]`) occupies `increments[k*dim..(k+1)*dim]`
/// and is distributed `N(0, (t_{k+1} - t_k) I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianDraw {
    grid: TimeGrid,
    dim: usize,
    increments: Vec<f64>,
    seed: u64,
}

impl BrownianDraw {
    pub fn sample(dim: usize, grid: &TimeGrid, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let n = grid.steps();
        let mut increments = Vec::with_capacity(n * dim);
        for k in 0..n {
            let s = grid.dt(k).sqrt();
            for _ in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                increments.push(s * z);
            }
        }
        Self {
            grid: grid.clone(),
            dim,
            increments,
            seed,
        }
    }

    /// A zero-dimensional draw, for equations without a Brownian term.
    pub fn none(grid: &TimeGrid) -> Self {
        Self {
            grid: grid.clone(),
            dim: 0,
            increments: Vec::new(),
            seed: 0,
        }
    }

    pub fn from_increments(grid: &TimeGrid, dim: usize, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != grid.steps() * dim {
            return Err(invalid(format!(
                "expected {} increments, got {}",
                grid.steps() * dim,
                increments.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            dim,
            increments,
            seed: 0,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Sums consecutive blocks of `factor` increments, giving the same path
    /// observed on `coarse` (which `self.grid()` must refine by `factor`).
    pub fn coarsen(&self, coarse: &TimeGrid) -> Result<Self> {
        let factor = coarse.refinement_factor(&self.grid)?;
        let d = self.dim;
        let mut increments = vec![0.0; coarse.steps() * d];
        for i in 0..coarse.steps() {
            for k in i * factor..(i + 1) * factor {
                for a in 0..d {
                    increments[i * d + a] += self.increments[k * d + a];
                }
            }
        }
        Ok(Self {
            grid: coarse.clone(),
            dim: d,
            increments,
            seed: self.seed,
        })
    }

    /// Cumulative path values starting at 0, `(N + 1) * dim` entries.
    pub fn path(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; (self.grid.steps() + 1) * d];
        for k in 0..self.grid.steps() {
            for a in 0..d {
                out[(k + 1) * d + a] = out[k * d + a] + self.increments[k * d + a];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_se;

    #[test]
    fn reproducible_from_seed() {
        let g = TimeGrid::uniform(1.0, 64).unwrap();
        assert_eq!(BrownianDraw::sample(2, &g, 11), BrownianDraw::sample(2, &g, 11));
        assert_ne!(BrownianDraw::sample(2, &g, 11), BrownianDraw::sample(2, &g, 12));
    }

    #[test]
    fn coarsening_keeps_the_path_at_coarse_nodes() {
        let fine = TimeGrid::uniform(1.0, 32).unwrap();
        let coarse = TimeGrid::uniform(1.0, 8).unwrap();
        let d = BrownianDraw::sample(2, &fine, 4);
        let c = d.coarsen(&coarse).unwrap();
        let (pf, pc) = (d.path(), c.path());
        for i in 0..=8 {
            for a in 0..2 {
                assert!((pf[i * 4 * 2 + a] - pc[i * 2 + a]).abs() < 1e-14);
            }
        }
        assert!(d.coarsen(&TimeGrid::uniform(1.0, 5).unwrap()).is_err());
    }

    #[test]
    fn increments_have_the_step_variance() {
        let g = TimeGrid::uniform(2.0, 4000).unwrap();
        let d = BrownianDraw::sample(1, &g, 3);
        let sq: Vec<f64> = d.increments().iter().map(|x| x * x / g.dt(0)).collect();
        let (m, se) = mean_se(&sq);
        assert!((m - 1.0).abs() < 4.0 * se, "{m} ± {se}");
    }
}
