use crate::error::{invalid, mismatch, Result};

/// A strictly increasing partition `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid `t_i = i T / N`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(invalid("grid needs at least one step"));
        }
        let n = steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|i| i as f64 * horizon / n).collect();
        times[steps] = horizon;
        Ok(Self { times })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(invalid("grid needs at least two nodes"));
        }
        if times[0] != 0.0 {
            return Err(invalid(format!("grid must start at 0, got {}", times[0])));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(invalid(format!("grid not strictly increasing at {} -> {}", w[0], w[1])));
            }
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// Number of intervals `N`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.steps()]
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    pub fn mesh(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Splits every interval into `factor` equal pieces. Coarse nodes are
    /// kept bit-exactly, so node `i` of `self` is node `i * factor` of the
    /// result.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("refinement factor must be at least 1"));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let mut times = Vec::with_capacity(self.steps() * factor + 1);
        for w in self.times.windows(2) {
            let h = (w[1] - w[0]) / factor as f64;
            times.push(w[0]);
            for k in 1..factor {
                times.push(w[0] + k as f64 * h);
            }
        }
        times.push(self.horizon());
        Ok(Self { times })
    }

    /// The integer `f` such that `fine` equals `self.refine(f)` on the coarse
    /// nodes.
    pub fn refinement_factor(&self, fine: &TimeGrid) -> Result<usize> {
        let n = self.steps();
        let m = fine.steps();
        if m % n != 0 {
            return Err(mismatch(format!("{m} fine steps do not refine {n} coarse steps")));
        }
        let f = m / n;
        let tol = 1e-9 * self.mesh();
        for i in 0..=n {
            if (fine.times[i * f] - self.times[i]).abs() > tol {
                return Err(mismatch(format!(
                    "fine node {} at {} does not match coarse node {} at {}",
                    i * f,
                    fine.times[i * f],
                    i,
                    self.times[i]
                )));
            }
        }
        Ok(f)
    }

    /// Index of the last node `<= t` (clamped to `[0, N]`).
    pub fn locate(&self, t: f64) -> usize {
        match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => (i - 1).min(self.steps()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_of_four_steps() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn minimal_grid() {
        let g = TimeGrid::uniform(2.0, 1).unwrap();
        assert_eq!(g.times(), &[0.0, 2.0]);
        assert_eq!(g.mesh(), 2.0);
    }

    #[test]
    fn dyadic_mesh() {
        let g = TimeGrid::uniform(1.0, 1 << 10).unwrap();
        assert_eq!(g.mesh(), 2f64.powi(-10));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(TimeGrid::uniform(0.0, 4).is_err());
        assert!(TimeGrid::uniform(-1.0, 4).is_err());
        assert!(TimeGrid::uniform(1.0, 0).is_err());
        assert!(TimeGrid::from_times(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::from_times(vec![0.1, 1.0]).is_err());
    }

    #[test]
    fn refinement_keeps_coarse_nodes() {
        let g = TimeGrid::from_times(vec![0.0, 0.3, 1.0]).unwrap();
        let f = g.refine(4).unwrap();
        assert_eq!(f.steps(), 8);
        assert_eq!(f.time(4), 0.3);
        assert_eq!(g.refinement_factor(&f).unwrap(), 4);
        assert!(g.refinement_factor(&TimeGrid::uniform(1.0, 8).unwrap()).is_err());
    }

    #[test]
    fn locate_finds_left_node() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.locate(0.0), 0);
        assert_eq!(g.locate(0.3), 1);
        assert_eq!(g.locate(0.5), 2);
        assert_eq!(g.locate(1.0), 4);
        assert_eq!(g.locate(7.0), 4);
    }
}
