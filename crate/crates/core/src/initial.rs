//! Initial laws for signal and particle states.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Dirac(Vec<f64>),
    /// `mean + L ξ` with `L` lower triangular, row-major `d × d`.
    Gaussian { mean: Vec<f64>, chol: Vec<f64> },
}

impl InitialLaw {
    /// Gaussian with diagonal covariance.
    pub fn gaussian_diag(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        let d = mean.len();
        if variances.len() != d || variances.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("variances must be nonnegative, one per component"));
        }
        let mut chol = vec![0.0; d * d];
        for i in 0..d {
            chol[i * d + i] = variances[i].sqrt();
        }
        Ok(Self::Gaussian { mean, chol })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Dirac(x) => x.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn mean(&self) -> &[f64] {
        match self {
            Self::Dirac(x) => x,
            Self::Gaussian { mean, .. } => mean,
        }
    }

    /// Covariance matrix, row-major.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim();
        match self {
            Self::Dirac(_) => vec![0.0; d * d],
            Self::Gaussian { chol, .. } => {
                let mut c = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        c[i * d + j] = (0..d).map(|k| chol[i * d + k] * chol[j * d + k]).sum();
                    }
                }
                c
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Dirac(x) if x.iter().all(|v| v.is_finite()) => Ok(()),
            Self::Gaussian { mean, chol } if chol.len() == mean.len() * mean.len() && chol.iter().chain(mean).all(|v| v.is_finite()) => Ok(()),
            _ => Err(invalid("initial law has non-finite or mis-sized parameters")),
        }
    }

    /// Deterministic draw from `seed`. A Dirac law ignores the seed.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        match self {
            Self::Dirac(x) => x.clone(),
            Self::Gaussian { mean, chol } => {
                let d = mean.len();
                let mut rng = rng_from_seed(seed);
                let xi: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                (0..d)
                    .map(|i| mean[i] + (0..=i).map(|k| chol[i * d + k] * xi[k]).sum::<f64>())
                    .collect()
            }
        }
    }
}
