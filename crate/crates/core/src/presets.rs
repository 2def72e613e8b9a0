//! Named models with scalar parameters.
//!
//! Configuration files cannot carry closures, so every coefficient that is
//! reachable from a config goes through this registry. Each preset has a
//! fixed parameter schema; unspecified parameters take their defaults and
//! unknown ones are rejected.
//!
//! ```
//! use std::collections::BTreeMap;
//! use roughrand::presets::{self, Family};
//!
//! let info = presets::find("nonlinear-test").unwrap();
//! assert_eq!(info.family, Family::Rsde);
//! let mut params = BTreeMap::new();
//! params.insert("sigma".to_string(), 0.2);
//! let model = presets::rsde(info.name, &params).unwrap();
//! assert_eq!(model.x0, vec![1.0]);
//! assert!(presets::rsde("nonlinear-test", &[("typo".to_string(), 1.0)].into()).is_err());
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::filtering::LinearFilterParams;
use crate::initial::InitialLaw;
use crate::meanfield::{KernelTerm, MkvSpec, MomentCoefficient, RoughCoefficient};
use crate::rsde::RsdeSpec;
use crate::volpricing::{LsvModel, VarianceModel};

pub type Params = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// A rough SDE with an initial value.
    Rsde,
    /// A linear-Gaussian filtering model.
    Filter,
    /// A local-stochastic-volatility model.
    Lsv,
    /// A McKean–Vlasov equation with common rough noise.
    Mkv,
}

impl Family {
    pub fn label(self) -> &'static str {
        match self {
            Family::Rsde => "rsde",
            Family::Filter => "filter",
            Family::Lsv => "lsv",
            Family::Mkv => "mkv",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: f64,
    pub doc: &'static str,
}

#[derive(Debug, Clone, Copy)]
pub struct PresetInfo {
    pub name: &'static str,
    pub family: Family,
    pub equation: &'static str,
    pub params: &'static [ParamSpec],
}

const fn p(name: &'static str, default: f64, doc: &'static str) -> ParamSpec {
    ParamSpec { name, default, doc }
}

const REGISTRY: &[PresetInfo] = &[
    PresetInfo {
        name: "geometric",
        family: Family::Rsde,
        equation: "dX = c X dY",
        params: &[p("c", 1.0, "rough coefficient"), p("x0", 1.0, "initial value")],
    },
    PresetInfo {
        name: "additive",
        family: Family::Rsde,
        equation: "dX = sigma dB + c dY",
        params: &[
            p("sigma", 0.3, "Brownian volatility"),
            p("c", 0.5, "rough coefficient"),
            p("x0", 1.0, "initial value"),
        ],
    },
    PresetInfo {
        name: "nonlinear-test",
        family: Family::Rsde,
        equation: "dX = -a X dt + sigma dB + c sin(X) dY",
        params: &[
            p("a", 1.0, "mean reversion"),
            p("sigma", 0.3, "Brownian volatility"),
            p("c", 0.5, "rough amplitude"),
            p("x0", 1.0, "initial value"),
        ],
    },
    PresetInfo {
        name: "linear-filter",
        family: Family::Filter,
        equation: "dX = A X dt + sigma dB + f dY, observation h(x) = H x",
        params: &[
            p("A", -1.0, "signal drift"),
            p("H", 1.0, "observation gain"),
            p("sigma", 0.5, "signal noise"),
            p("f", 0.3, "observation feedback"),
            p("m0", 1.0, "initial mean"),
            p("p0", 0.25, "initial variance"),
        ],
    },
    PresetInfo {
        name: "lsv-cir",
        family: Family::Lsv,
        equation: "dX = sqrt(V) (rho dW + sqrt(1 - rho^2) dB), dV = kappa (theta - V) dt + xi sqrt(V) dW",
        params: &[
            p("rho", 0.7, "spot-variance correlation"),
            p("v0", 0.04, "initial variance"),
            p("kappa", 1.5, "variance mean reversion"),
            p("theta", 0.04, "long-run variance"),
            p("xi", 0.3, "vol of variance"),
            p("x0", 1.0, "initial spot"),
        ],
    },
    PresetInfo {
        name: "lsv-constant",
        family: Family::Lsv,
        equation: "dX = sqrt(v) (rho dW + sqrt(1 - rho^2) dB)",
        params: &[
            p("rho", 0.0, "spot-variance correlation"),
            p("v", 0.04, "variance"),
            p("x0", 1.0, "initial spot"),
        ],
    },
    PresetInfo {
        name: "lsv-lognormal",
        family: Family::Lsv,
        equation: "dX = sqrt(V) (rho dW + sqrt(1 - rho^2) dB), d log V = kappa (mu - log V) dt + xi dW",
        params: &[
            p("rho", 0.7, "spot-variance correlation"),
            p("v0", 0.04, "initial variance"),
            p("kappa", 1.0, "mean reversion of log V"),
            p("mu", -3.2188758248682006, "long-run log variance"),
            p("xi", 0.5, "vol of log variance"),
            p("x0", 1.0, "initial spot"),
        ],
    },
    PresetInfo {
        name: "mkv-interacting",
        family: Family::Mkv,
        equation: "dX = a (E[X] - X) dt + sigma dB + (c1 + c2 E[X]) dY",
        params: &[
            p("a", 1.0, "attraction to the mean"),
            p("sigma", 0.5, "idiosyncratic volatility"),
            p("c1", 0.5, "rough intercept"),
            p("c2", 0.5, "rough mean loading"),
            p("m0", 0.0, "initial mean"),
            p("v0", 0.25, "initial variance"),
        ],
    },
    PresetInfo {
        name: "mkv-decoupled",
        family: Family::Mkv,
        equation: "dX = -a X dt + sigma dB + c sin(X) dY",
        params: &[
            p("a", 1.0, "mean reversion"),
            p("sigma", 0.3, "idiosyncratic volatility"),
            p("c", 0.5, "rough amplitude"),
            p("m0", 1.0, "initial mean"),
            p("v0", 0.0, "initial variance"),
        ],
    },
    PresetInfo {
        name: "mkv-kernel",
        family: Family::Mkv,
        equation: "dX = a (E[X] - X) dt + sigma dB + (c1 + c2 E[exp(-(X - X')^2 / ell^2)]) dY",
        params: &[
            p("a", 1.0, "attraction to the mean"),
            p("sigma", 0.5, "idiosyncratic volatility"),
            p("c1", 0.5, "rough intercept"),
            p("c2", 0.5, "kernel loading"),
            p("ell", 1.0, "kernel width"),
            p("m0", 0.0, "initial mean"),
            p("v0", 0.25, "initial variance"),
        ],
    },
];

pub fn registry() -> &'static [PresetInfo] {
    REGISTRY
}

pub fn find(name: &str) -> Option<&'static PresetInfo> {
    REGISTRY.iter().find(|p| p.name == name)
}

/// Text listing of all presets with their parameter schemas.
pub fn list_presets() -> String {
    let mut s = String::new();
    for info in REGISTRY {
        let _ = writeln!(s, "{} [{}]", info.name, info.family.label());
        let _ = writeln!(s, "    {}", info.equation);
        for p in info.params {
            let _ = writeln!(s, "    {:<6} = {:<10} {}", p.name, p.default, p.doc);
        }
    }
    s
}

struct Resolved {
    values: BTreeMap<&'static str, f64>,
}

impl Resolved {
    fn get(&self, k: &str) -> f64 {
        self.values[k]
    }
}

fn resolve(name: &str, family: Family, params: &Params) -> Result<Resolved> {
    let info = find(name).ok_or_else(|| invalid(format!("unknown preset `{name}`")))?;
    if info.family != family {
        return Err(invalid(format!("preset `{name}` is a {} model, not {}", info.family.label(), family.label())));
    }
    for (k, v) in params {
        if !info.params.iter().any(|p| p.name == k) {
            return Err(invalid(format!("unknown parameter `{k}` for preset `{name}`")));
        }
        if !v.is_finite() {
            return Err(invalid(format!("parameter `{k}` must be finite")));
        }
    }
    let values = info
        .params
        .iter()
        .map(|p| (p.name, params.get(p.name).copied().unwrap_or(p.default)))
        .collect();
    Ok(Resolved { values })
}

fn gaussian(m0: f64, v0: f64) -> Result<InitialLaw> {
    if v0 < 0.0 {
        return Err(invalid("initial variance must be nonnegative"));
    }
    if v0 == 0.0 {
        Ok(InitialLaw::Dirac(vec![m0]))
    } else {
        InitialLaw::gaussian_diag(vec![m0], &[v0])
    }
}

pub struct RsdeModel {
    pub spec: RsdeSpec,
    pub x0: Vec<f64>,
}

pub fn rsde(name: &str, params: &Params) -> Result<RsdeModel> {
    let r = resolve(name, Family::Rsde, params)?;
    let x0 = vec![r.get("x0")];
    let spec = match name {
        "geometric" => {
            let c = r.get("c");
            RsdeSpec::new(1, 0, 1)
                .rough(move |e, out| out[0] = c * e.x[0])
                .jacobian(move |_, out| out[0] = c)
        }
        "additive" => {
            let (sigma, c) = (r.get("sigma"), r.get("c"));
            RsdeSpec::new(1, 1, 1)
                .brownian(move |_, out| out[0] = sigma)
                .rough(move |_, out| out[0] = c)
                .jacobian(|_, out| out[0] = 0.0)
        }
        "nonlinear-test" => {
            let (a, sigma, c) = (r.get("a"), r.get("sigma"), r.get("c"));
            RsdeSpec::new(1, 1, 1)
                .drift(move |e, out| out[0] = -a * e.x[0])
                .brownian(move |_, out| out[0] = sigma)
                .rough(move |e, out| out[0] = c * e.x[0].sin())
                .jacobian(move |e, out| out[0] = c * e.x[0].cos())
        }
        _ => unreachable!("registry and builders disagree on `{name}`"),
    };
    Ok(RsdeModel { spec, x0 })
}

pub fn filter(name: &str, params: &Params) -> Result<LinearFilterParams> {
    let r = resolve(name, Family::Filter, params)?;
    let lp = LinearFilterParams::scalar(r.get("A"), r.get("H"), r.get("sigma"), r.get("f"), r.get("m0"), r.get("p0"));
    lp.validate()?;
    Ok(lp)
}

pub fn lsv(name: &str, params: &Params) -> Result<LsvModel> {
    let r = resolve(name, Family::Lsv, params)?;
    let variance = match name {
        "lsv-cir" => VarianceModel::Cir {
            v0: r.get("v0"),
            kappa: r.get("kappa"),
            theta: r.get("theta"),
            xi: r.get("xi"),
        },
        "lsv-constant" => VarianceModel::Constant { v: r.get("v") },
        "lsv-lognormal" => VarianceModel::LognormalOu {
            v0: r.get("v0"),
            kappa: r.get("kappa"),
            mu: r.get("mu"),
            xi: r.get("xi"),
        },
        _ => unreachable!("registry and builders disagree on `{name}`"),
    };
    variance.validate()?;
    let rho = r.get("rho");
    if !(-1.0..=1.0).contains(&rho) {
        return Err(invalid("rho must lie in [-1, 1]"));
    }
    Ok(LsvModel::unit(rho, variance, r.get("x0")))
}

pub fn mkv(name: &str, params: &Params) -> Result<MkvSpec> {
    let r = resolve(name, Family::Mkv, params)?;
    let initial = gaussian(r.get("m0"), r.get("v0"))?;
    let sigma = r.get("sigma");
    let a = r.get("a");
    let spec = match name {
        "mkv-interacting" => {
            let (c1, c2) = (r.get("c1"), r.get("c2"));
            let rough = MomentCoefficient {
                value: Arc::new(move |_, mean, _, out| out[0] = c1 + c2 * mean[0]),
                d_x: None,
                d_mean: Some(Arc::new(move |_, _, _, out| out[0] = c2)),
                d_var: None,
            };
            MkvSpec::new(1, 1, 1, initial)
                .drift(move |x, mu, out| out[0] = a * (mu.mean[0] - x[0]))
                .diffusion(move |_, _, out| out[0] = sigma)
                .rough(RoughCoefficient::Structured {
                    moments: Some(rough),
                    kernel: None,
                })
        }
        "mkv-decoupled" => {
            let c = r.get("c");
            let rough = MomentCoefficient {
                value: Arc::new(move |x, _, _, out| out[0] = c * x[0].sin()),
                d_x: Some(Arc::new(move |x, _, _, out| out[0] = c * x[0].cos())),
                d_mean: None,
                d_var: None,
            };
            MkvSpec::new(1, 1, 1, initial)
                .drift(move |x, _, out| out[0] = -a * x[0])
                .diffusion(move |_, _, out| out[0] = sigma)
                .rough(RoughCoefficient::Structured {
                    moments: Some(rough),
                    kernel: None,
                })
        }
        "mkv-kernel" => {
            let (c1, c2, ell) = (r.get("c1"), r.get("c2"), r.get("ell"));
            if ell <= 0.0 {
                return Err(invalid("kernel width must be positive"));
            }
            let intercept = MomentCoefficient {
                value: Arc::new(move |_, _, _, out| out[0] = c1),
                d_x: None,
                d_mean: None,
                d_var: None,
            };
            let l2 = ell * ell;
            MkvSpec::new(1, 1, 1, initial)
                .drift(move |x, mu, out| out[0] = a * (mu.mean[0] - x[0]))
                .diffusion(move |_, _, out| out[0] = sigma)
                .rough(RoughCoefficient::Structured {
                    moments: Some(intercept),
                    kernel: Some(KernelTerm {
                        kernel: Arc::new(move |z, o| o[0] = c2 * (-z[0] * z[0] / l2).exp()),
                        gradient: Arc::new(move |z, o| o[0] = -2.0 * c2 * z[0] / l2 * (-z[0] * z[0] / l2).exp()),
                    }),
                })
        }
        _ => unreachable!("registry and builders disagree on `{name}`"),
    };
    spec.validate()?;
    Ok(spec)
}
