//! Experiment configuration files.
//!
//! ```toml
//! experiment = "filter"
//! seed = 7
//!
//! [model]
//! preset = "linear-filter"
//! params = { A = -1.0, sigma = 0.5 }
//!
//! [grid]
//! horizon = 1.0
//! steps = 64
//! fine_factor = 64
//!
//! [monte_carlo]
//! samples = 10000
//! ```
//!
//! Every table rejects unknown keys. Validation happens in [`Plan::new`],
//! before anything is computed or written.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use roughrand::presets::{self, Family};
use roughrand::{Convention, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    LiftStats,
    Integrate,
    SolveRsde,
    RandomisePathwise,
    RandomiseLaw,
    Filter,
    Price,
    Meanfield,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::LiftStats => "lift-stats",
            Experiment::Integrate => "integrate",
            Experiment::SolveRsde => "solve-rsde",
            Experiment::RandomisePathwise => "randomise-pathwise",
            Experiment::RandomiseLaw => "randomise-law",
            Experiment::Filter => "filter",
            Experiment::Price => "price",
            Experiment::Meanfield => "meanfield",
        }
    }

    fn family(self) -> Option<Family> {
        match self {
            Experiment::LiftStats | Experiment::Integrate => None,
            Experiment::SolveRsde | Experiment::RandomisePathwise | Experiment::RandomiseLaw => Some(Family::Rsde),
            Experiment::Filter => Some(Family::Filter),
            Experiment::Price => Some(Family::Lsv),
            Experiment::Meanfield => Some(Family::Mkv),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub monte_carlo: MonteCarloSection,
    #[serde(default)]
    pub ladder: LadderSection,
    #[serde(default)]
    pub lift: LiftSection,
    pub price: Option<PriceSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub horizon: f64,
    pub steps: usize,
    pub fine_factor: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            horizon: 1.0,
            steps: 64,
            fine_factor: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSection {
    /// Inner sample count `M`.
    pub samples: usize,
    /// Outer draw count `K`.
    pub outer: usize,
    /// Moment exponent.
    pub p: f64,
    /// Hölder exponent.
    pub alpha: f64,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        MonteCarloSection {
            samples: 1000,
            outer: 20,
            p: 2.0,
            alpha: 0.4,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSection {
    /// Coarse step counts.
    pub steps: Option<Vec<usize>>,
    /// Particle counts.
    pub particles: Option<Vec<usize>>,
    /// Dyadic levels `k` with `2^k` coarse steps.
    pub levels: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConventionName {
    Ito,
    Stratonovich,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiftSection {
    pub dim: usize,
    pub convention: ConventionName,
    /// Rough path CSV to use instead of a sampled lift.
    pub input: Option<PathBuf>,
}

impl Default for LiftSection {
    fn default() -> Self {
        LiftSection {
            dim: 2,
            convention: ConventionName::Ito,
            input: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSection {
    pub strikes: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

pub fn parse(text: &str) -> Result<Config, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct Plan {
    pub experiment: Experiment,
    pub config: Config,
    pub seed: u64,
    pub output: PathBuf,
    pub grid: TimeGrid,
    pub convention: Convention,
}

pub const DEFAULT_SEED: u64 = 1;

impl Plan {
    pub fn new(experiment: Experiment, mut config: Config, seed: Option<u64>, output: Option<PathBuf>) -> Result<Self, ConfigError> {
        if let Some(e) = config.experiment {
            if e != experiment {
                return err(format!("config is for `{}`, not `{}`", e.name(), experiment.name()));
            }
        }
        config.experiment = Some(experiment);
        if seed.is_some() {
            config.seed = seed;
        }
        let seed = config.seed.unwrap_or(DEFAULT_SEED);
        config.seed = Some(seed);
        if output.is_some() {
            config.output = output;
        }
        let output = config.output.clone().unwrap_or_else(|| PathBuf::from("out"));
        config.output = Some(output.clone());

        let g = &config.grid;
        if g.fine_factor == 0 {
            return err("grid.fine_factor must be positive");
        }
        let grid = TimeGrid::uniform(g.horizon, g.steps).map_err(|e| ConfigError(format!("grid: {e}")))?;
        let mc = &config.monte_carlo;
        if mc.samples < 2 {
            return err("monte_carlo.samples must be at least 2");
        }
        if mc.outer == 0 {
            return err("monte_carlo.outer must be positive");
        }
        if !(mc.alpha > 1.0 / 3.0 && mc.alpha <= 0.5) {
            return err("monte_carlo.alpha must lie in (1/3, 1/2]");
        }
        if !(mc.p >= 2.0 && mc.p.is_finite()) {
            return err("monte_carlo.p must be at least 2");
        }
        if config.lift.dim == 0 {
            return err("lift.dim must be positive");
        }
        let convention = match config.lift.convention {
            ConventionName::Ito => Convention::Ito,
            ConventionName::Stratonovich => Convention::Stratonovich,
        };

        match (experiment.family(), &config.model) {
            (Some(f), None) => return err(format!("`{}` needs a [model] with a {} preset", experiment.name(), f.label())),
            (Some(f), Some(m)) => {
                let built = match f {
                    Family::Rsde => presets::rsde(&m.preset, &m.params).map(|_| ()),
                    Family::Filter => presets::filter(&m.preset, &m.params).map(|_| ()),
                    Family::Lsv => presets::lsv(&m.preset, &m.params).map(|_| ()),
                    Family::Mkv => presets::mkv(&m.preset, &m.params).map(|_| ()),
                };
                built.map_err(|e| ConfigError(format!("model: {e}")))?;
            }
            (None, Some(_)) => return err(format!("`{}` takes no [model]", experiment.name())),
            (None, None) => {}
        }

        let ladder = &config.ladder;
        match experiment {
            Experiment::RandomisePathwise => {
                let steps = ladder.steps.as_deref().unwrap_or_default();
                if steps.len() < 3 {
                    return err("randomise-pathwise needs ladder.steps with at least three levels");
                }
                let max = *steps.iter().max().unwrap();
                if steps.iter().any(|s| *s == 0 || max % s != 0) {
                    return err("ladder.steps must divide the largest step count");
                }
            }
            Experiment::Meanfield => {
                let (Some(steps), Some(parts)) = (&ladder.steps, &ladder.particles) else {
                    return err("meanfield needs ladder.steps and ladder.particles");
                };
                if steps.len() < 2 || parts.len() < 2 {
                    return err("ladder.steps and ladder.particles need at least two entries each");
                }
                if steps.contains(&0) || parts.iter().any(|n| *n < 2) {
                    return err("ladder entries must be positive (at least two particles)");
                }
            }
            Experiment::SolveRsde => {
                if let Some(levels) = &ladder.levels {
                    let m = config.model.as_ref().expect("checked above");
                    if m.preset != "geometric" || !m.params.is_empty() {
                        return err("ladder.levels is only available for the `geometric` preset at its default parameters");
                    }
                    if levels.len() < 3 || levels.iter().any(|l| *l > 16) {
                        return err("ladder.levels needs at least three levels, each at most 16");
                    }
                    if config.grid.horizon != 1.0 {
                        return err("the closed-form ladder runs on [0, 1]; set grid.horizon = 1");
                    }
                    if config.lift.input.is_some() {
                        return err("ladder.levels samples its own lifts; drop lift.input");
                    }
                }
            }
            Experiment::Price => match &config.price {
                Some(p) if !p.strikes.is_empty() && p.strikes.iter().all(|k| k.is_finite()) => {}
                _ => return err("price needs [price] with a nonempty list of finite strikes"),
            },
            _ => {}
        }
        if config.lift.input.is_some() && experiment != Experiment::SolveRsde {
            return err("lift.input is only used by solve-rsde");
        }

        Ok(Plan {
            experiment,
            config,
            seed,
            output,
            grid,
            convention,
        })
    }

    pub fn preset(&self) -> (&str, &BTreeMap<String, f64>) {
        let m = self.config.model.as_ref().expect("validated");
        (&m.preset, &m.params)
    }

    /// The effective configuration as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(&self.config).unwrap_or_else(|e| format!("# unserialisable config: {e}\n"))
    }
}
