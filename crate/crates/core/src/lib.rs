//! Rough-path numerics: level-2 rough paths, rough stochastic integrals and
//! rough SDEs, together with harnesses that randomise the rough driver by a
//! sampled Itô lift and compare against direct simulation.

pub mod brownian;
pub mod convergence;
pub mod error;
pub mod filtering;
pub mod grid;
pub mod initial;
pub mod meanfield;
pub mod presets;
pub mod randomise;
pub mod rng;
pub mod rough_integral;
pub mod rough_path;
pub mod rsde;
pub mod stats;
pub mod volpricing;

pub use brownian::BrownianDraw;
pub use convergence::ConvergenceTable;
pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use rough_path::{Convention, RoughPath};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/rough_paths.md")]
    mod rough_paths {}
    #[doc = include_str!("../../../book/src/integration.md")]
    mod integration {}
    #[doc = include_str!("../../../book/src/rsde.md")]
    mod rsde {}
    #[doc = include_str!("../../../book/src/randomisation.md")]
    mod randomisation {}
    #[doc = include_str!("../../../book/src/filtering.md")]
    mod filtering {}
    #[doc = include_str!("../../../book/src/pricing.md")]
    mod pricing {}
    #[doc = include_str!("../../../book/src/mean_field.md")]
    mod mean_field {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
