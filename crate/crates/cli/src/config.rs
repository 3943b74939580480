//! Run configuration files (JSON, versioned).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qttbs_core::assembly::{ContractSpec, GridSpec, MarketParams};
use qttbs_core::cross::CrossConfig;
use qttbs_core::engine::{default_domain, PricingConfig};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub market: Option<MarketSection>,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub contract: Option<ContractSpec>,
    #[serde(default)]
    pub pricing: Option<PricingConfig>,
    #[serde(default)]
    pub cross: Option<CrossConfig>,
    #[serde(default)]
    pub reference: Option<Reference>,
    #[serde(default)]
    pub query: Option<QuerySection>,
    #[serde(default)]
    pub outputs: OutputSection,
    #[serde(default)]
    pub bench: Option<BenchSection>,
}

/// Either a full market, or the built-in reference basket (`reference_assets`)
/// with optional overrides.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub reference_assets: Option<usize>,
    pub spots: Option<Vec<f64>>,
    pub strike: Option<f64>,
    pub rate: Option<f64>,
    pub vols: Option<Vec<f64>>,
    pub correlation: Option<Vec<Vec<f64>>>,
    pub maturity: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Timestepping,
    Spacetime,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cores {
    Uniform(usize),
    PerDim(Vec<usize>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub method: Method,
    pub cores: Cores,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub time_cores: Option<usize>,
    pub domain: Domain,
}

/// Spatial box of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    /// Bounds in log-price.
    LogBounds { lower: Vec<f64>, upper: Vec<f64> },
    /// Bounds in price.
    SpotBounds { lower: Vec<f64>, upper: Vec<f64> },
    /// `[lower K, upper K]` on every axis.
    StrikeMultiples { lower: f64, upper: f64 },
    /// `log S0 +- width sigma sqrt(T)` per axis.
    Sigma { width: f64 },
    /// Coarse pre-solve that trims the `+-5 sigma sqrt(T)` box.
    Pilot {
        coarse_cores: usize,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
}

fn default_threshold() -> f64 {
    1e-4
}

/// What the computed prices are compared against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    ClosedForm,
    Quadrature {
        #[serde(default)]
        order: Option<usize>,
    },
    Fixture {
        name: String,
    },
    DenseFd,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySection {
    pub spots: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Defaults to `out`.
    pub dir: Option<PathBuf>,
    /// Surface cache; defaults to `<dir>/surface`.
    pub surface: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub suite: String,
    /// 1-based rows to run; all rows when absent.
    #[serde(default)]
    pub rows: Option<Vec<usize>>,
    /// Shrink every row (fewer cores and steps) for a quick smoke run.
    #[serde(default)]
    pub smoke: bool,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version: expected {}, found {}",
                SCHEMA_VERSION, cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn out_dir(&self, cli: Option<&Path>) -> PathBuf {
        cli.map(Path::to_path_buf)
            .or_else(|| self.outputs.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn surface_dir(&self, out: &Path) -> PathBuf {
        self.outputs.surface.clone().unwrap_or_else(|| out.join("surface"))
    }
}

impl MarketSection {
    pub fn resolve(&self) -> Result<MarketParams, CliError> {
        let missing = |f: &str| CliError::Validation(format!("market.{}: missing", f));
        let mut m = match self.reference_assets {
            Some(d) => {
                let k = self.strike.ok_or_else(|| missing("strike"))?;
                MarketParams::reference_basket(d, k).map_err(|e| CliError::Validation(format!("market.reference_assets: {}", e)))?
            }
            None => MarketParams {
                spots: self.spots.clone().ok_or_else(|| missing("spots"))?,
                strike: self.strike.ok_or_else(|| missing("strike"))?,
                rate: self.rate.ok_or_else(|| missing("rate"))?,
                vols: self.vols.clone().ok_or_else(|| missing("vols"))?,
                correlation: match &self.correlation {
                    Some(c) => c.clone(),
                    None if self.spots.as_ref().map(Vec::len) == Some(1) => vec![vec![1.0]],
                    None => return Err(missing("correlation")),
                },
                maturity: self.maturity.ok_or_else(|| missing("maturity"))?,
            },
        };
        if self.reference_assets.is_some() {
            if let Some(v) = &self.spots {
                m.spots = v.clone();
            }
            if let Some(v) = self.rate {
                m.rate = v;
            }
            if let Some(v) = &self.vols {
                m.vols = v.clone();
            }
            if let Some(v) = &self.correlation {
                m.correlation = v.clone();
            }
            if let Some(v) = self.maturity {
                m.maturity = v;
            }
        }
        m.validate().map_err(|e| CliError::Validation(format!("market: {}", e)))?;
        Ok(m)
    }
}

impl GridSection {
    pub fn cores_for(&self, d: usize) -> Result<Vec<usize>, CliError> {
        match &self.cores {
            Cores::Uniform(c) => Ok(vec![*c; d]),
            Cores::PerDim(v) if v.len() == d => Ok(v.clone()),
            Cores::PerDim(v) => Err(CliError::Validation(format!(
                "grid.cores: {} entries for a {}-asset market",
                v.len(),
                d
            ))),
        }
    }

    /// Bounds for every domain kind except `pilot`, which needs a solve.
    pub fn static_bounds(&self, mkt: &MarketParams) -> Result<Option<(Vec<f64>, Vec<f64>)>, CliError> {
        let d = mkt.dim();
        let bad = |m: String| CliError::Validation(format!("grid.domain: {}", m));
        let check_len = |v: &[f64], name: &str| {
            if v.len() == d {
                Ok(())
            } else {
                Err(bad(format!("{} needs {} entries", name, d)))
            }
        };
        Ok(Some(match &self.domain {
            Domain::LogBounds { lower, upper } => {
                check_len(lower, "lower")?;
                check_len(upper, "upper")?;
                (lower.clone(), upper.clone())
            }
            Domain::SpotBounds { lower, upper } => {
                check_len(lower, "lower")?;
                check_len(upper, "upper")?;
                if lower.iter().chain(upper).any(|v| !(*v > 0.0)) {
                    return Err(bad("spot bounds must be > 0".into()));
                }
                (lower.iter().map(|v| v.ln()).collect(), upper.iter().map(|v| v.ln()).collect())
            }
            Domain::StrikeMultiples { lower, upper } => {
                if !(*lower > 0.0) || !(upper > lower) {
                    return Err(bad("need 0 < lower < upper".into()));
                }
                (vec![(mkt.strike * lower).ln(); d], vec![(mkt.strike * upper).ln(); d])
            }
            Domain::Sigma { width } => {
                if !(*width > 0.0) || !width.is_finite() {
                    return Err(bad("width must be > 0".into()));
                }
                default_domain(mkt, *width)
            }
            Domain::Pilot { coarse_cores, threshold } => {
                if !(2..=6).contains(coarse_cores) || !(*threshold > 0.0) {
                    return Err(bad("pilot needs coarse_cores in 2..=6 and threshold > 0".into()));
                }
                return Ok(None);
            }
        }))
    }

    pub fn build(&self, cores: Vec<usize>, lower: Vec<f64>, upper: Vec<f64>) -> Result<GridSpec, CliError> {
        let g = match self.method {
            Method::Timestepping => {
                let steps = self.steps.ok_or_else(|| CliError::Validation("grid.steps: missing for time stepping".into()))?;
                GridSpec::timestepping(cores, lower, upper, steps)
            }
            Method::Spacetime => {
                let ct = self
                    .time_cores
                    .ok_or_else(|| CliError::Validation("grid.time_cores: missing for space-time".into()))?;
                GridSpec::spacetime(cores, lower, upper, ct)
            }
        };
        g.map_err(|e| CliError::Validation(format!("grid: {}", e)))
    }
}
