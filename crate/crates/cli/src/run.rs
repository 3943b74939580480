//! The `price`, `greeks` and `query` commands.

use std::path::{Path, PathBuf};

use serde::Serialize;

use qttbs_core::assembly::{ContractSpec, Exercise, GridSpec, MarketParams, PayoffKind};
use qttbs_core::cross::CrossConfig;
use qttbs_core::engine::{
    greeks, interpolate, pilot_domain, price_spacetime, price_timestepping, query_price, PriceSurface, PricingConfig,
    StepRecord,
};
use qttbs_core::oracles::{
    bs_closed_form, dense_fd_solve, fixture, gauss_hermite_basket, OptionKind, QuadratureConfig, DENSE_FD_LIMIT,
};

use crate::config::{Method, Reference, RunConfig};
use crate::error::CliError;

/// Everything a command needs, resolved and validated.
#[derive(Clone, Debug)]
pub struct Job {
    pub market: MarketParams,
    pub grid: GridSpec,
    pub method: Method,
    pub contract: ContractSpec,
    pub pricing: PricingConfig,
    pub cross: CrossConfig,
    pub reference: Option<Reference>,
    /// `None` when the config has no query section.
    pub queries: Option<Vec<Vec<f64>>>,
    pub out: PathBuf,
    pub surface_dir: PathBuf,
}

fn invalid(field: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {}", field, e))
}

/// `from_cache` reads pilot bounds back from a cached surface of the same
/// market and contract instead of repeating the coarse solve.
pub fn resolve(cfg: &RunConfig, out: Option<&Path>, seed: Option<u64>, from_cache: bool) -> Result<Job, CliError> {
    let market = cfg
        .market
        .as_ref()
        .ok_or_else(|| invalid("market", "missing"))?
        .resolve()?;
    let d = market.dim();
    let contract = cfg.contract.clone().ok_or_else(|| invalid("contract", "missing"))?;
    contract.validate(d).map_err(|e| invalid("contract", e))?;
    let gs = cfg.grid.as_ref().ok_or_else(|| invalid("grid", "missing"))?;
    if gs.method == Method::Spacetime && contract.exercise == Exercise::American {
        return Err(invalid("contract.exercise", "american contracts need the time-stepping method"));
    }
    let pricing = cfg.pricing.unwrap_or(match gs.method {
        Method::Timestepping => PricingConfig::default(),
        Method::Spacetime => PricingConfig::spacetime(),
    });
    pricing.validate().map_err(|e| invalid("pricing", e))?;
    let mut cross = cfg.cross.unwrap_or_default();
    if let Some(s) = seed.or(cfg.seed) {
        cross.seed = s;
    }
    cross.validate().map_err(|e| invalid("cross", e))?;
    let cores = gs.cores_for(d)?;
    let out = cfg.out_dir(out);
    let surface_dir = cfg.surface_dir(&out);
    let cached = if from_cache { PriceSurface::load(&surface_dir).ok() } else { None };
    let (lower, upper) = match gs.static_bounds(&market)? {
        Some(b) => b,
        None if cached.as_ref().is_some_and(|s| s.market == market && s.contract == contract && s.grid.cores == cores) => {
            let g = &cached.expect("checked").grid;
            (g.lower.clone(), g.upper.clone())
        }
        None => {
            let (coarse, thr) = match gs.domain {
                crate::config::Domain::Pilot { coarse_cores, threshold } => (coarse_cores, threshold),
                _ => unreachable!("only pilot domains need a solve"),
            };
            let p = pilot_domain(&market, &contract, coarse, thr, &cross)?;
            (p.lower, p.upper)
        }
    };
    let grid = gs.build(cores, lower, upper)?;
    let queries = cfg.query.as_ref().map(|q| q.spots.clone());
    for (i, q) in queries.iter().flatten().enumerate() {
        if q.len() != d || q.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid(&format!("query.spots[{}]", i), format!("need {} positive prices", d)));
        }
    }
    if let Some(r) = &cfg.reference {
        check_reference(r, &market, &grid, gs.method, &contract)?;
    }
    Ok(Job {
        market,
        grid,
        method: gs.method,
        contract,
        pricing,
        cross,
        reference: cfg.reference.clone(),
        queries,
        out,
        surface_dir,
    })
}

fn check_reference(r: &Reference, mkt: &MarketParams, grid: &GridSpec, method: Method, c: &ContractSpec) -> Result<(), CliError> {
    let european = c.exercise == Exercise::European;
    match r {
        Reference::ClosedForm if mkt.dim() != 1 || !european => {
            Err(invalid("reference", "closed form needs a single-asset european contract"))
        }
        Reference::Quadrature { .. } if !european => Err(invalid("reference", "quadrature prices european contracts only")),
        Reference::DenseFd if method != Method::Timestepping => {
            Err(invalid("reference", "dense_fd compares time-stepping runs only"))
        }
        Reference::DenseFd if grid.spatial_modes().len() > DENSE_FD_LIMIT.trailing_zeros() as usize => Err(invalid(
            "reference",
            format!("dense_fd needs at most {} grid points", DENSE_FD_LIMIT),
        )),
        Reference::Fixture { name } => {
            let f = fixture(name).map_err(|e| invalid("reference.name", e))?;
            if f.kind != c.kind || f.spots != mkt.spots || f.strike != mkt.strike || !european {
                return Err(invalid("reference.name", format!("fixture {} describes a different contract", name)));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

pub fn build_surface(job: &Job) -> Result<PriceSurface, CliError> {
    let s = match job.method {
        Method::Timestepping => price_timestepping(&job.market, &job.grid, &job.contract, &job.pricing, &job.cross)?,
        Method::Spacetime => price_spacetime(&job.market, &job.grid, &job.contract, &job.pricing, &job.cross)?,
    };
    Ok(s)
}

/// The surface written by `price` for this same market, grid and contract.
pub fn load_cached(job: &Job) -> Result<PriceSurface, CliError> {
    let dir = &job.surface_dir;
    if !dir.join("surface.json").exists() {
        return Err(CliError::Validation(format!(
            "outputs.surface: no cached surface in {}, run `qttbs price` first",
            dir.display()
        )));
    }
    let s = PriceSurface::load(dir).map_err(|e| CliError::Validation(format!("outputs.surface: {}", e)))?;
    if s.market != job.market || s.grid != job.grid || s.contract != job.contract {
        return Err(CliError::Validation(format!(
            "outputs.surface: the surface in {} was built for a different market, grid or contract",
            dir.display()
        )));
    }
    Ok(s)
}

fn option_kind(c: &ContractSpec) -> OptionKind {
    match c.kind {
        PayoffKind::BasketCall => OptionKind::Call,
        PayoffKind::BasketPut | PayoffKind::WorstOfPut => OptionKind::Put,
    }
}

/// Reference value for each point in `spots`, where the reference defines one.
struct Oracle<'a> {
    job: &'a Job,
    dense: Option<qttbs_core::oracles::DenseSurface>,
}

impl<'a> Oracle<'a> {
    fn new(job: &'a Job) -> Result<Self, CliError> {
        let dense = match job.reference {
            Some(Reference::DenseFd) => Some(dense_fd_solve(&job.market, &job.grid, &job.contract, job.pricing.theta)?),
            _ => None,
        };
        Ok(Oracle { job, dense })
    }

    fn price(&self, spots: &[f64]) -> Result<Option<f64>, CliError> {
        let m = &self.job.market;
        Ok(match &self.job.reference {
            None => None,
            Some(Reference::ClosedForm) => {
                Some(bs_closed_form(spots[0], m.strike, m.rate, m.vols[0], m.maturity, option_kind(&self.job.contract)).price)
            }
            Some(Reference::Quadrature { order }) => {
                let mut at = m.clone();
                at.spots = spots.to_vec();
                let q = order.map(|o| QuadratureConfig { order: o }).unwrap_or_else(|| QuadratureConfig::default_for(m.dim()));
                Some(gauss_hermite_basket(&at, &self.job.contract, q)?.price)
            }
            Some(Reference::Fixture { name }) if spots == m.spots.as_slice() => Some(fixture(name)?.price),
            Some(Reference::Fixture { .. }) => None,
            Some(Reference::DenseFd) => {
                let d = self.dense.as_ref().expect("built with the job");
                Some(interpolate(&self.job.grid, spots, |js| Ok(d.at(js)))?)
            }
        })
    }

    /// Mean and max absolute error over every grid node.
    fn grid_errors(&self, s: &PriceSurface) -> Result<Option<(f64, f64)>, CliError> {
        let m = &self.job.market;
        match (&self.job.reference, &self.dense) {
            (Some(Reference::ClosedForm), _) => {
                let kind = option_kind(&self.job.contract);
                Ok(Some(s.grid_errors(|x| bs_closed_form(x[0], m.strike, m.rate, m.vols[0], m.maturity, kind).price)?))
            }
            (Some(Reference::DenseFd), Some(d)) => {
                let q = s.solution.to_dense()?;
                let (mut sum, mut max) = (0.0, 0.0f64);
                for (a, b) in q.iter().zip(d.values.iter()) {
                    sum += (a - b).abs();
                    max = max.max((a - b).abs());
                }
                Ok(Some((sum / q.len() as f64, max)))
            }
            _ => Ok(None),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PricePoint {
    pub spots: Vec<f64>,
    pub price: f64,
    pub clamped: bool,
    pub reference: Option<f64>,
    pub abs_error: Option<f64>,
    pub rel_error: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PriceSummary {
    pub method: Method,
    pub build_time_s: f64,
    pub payoff_mse: f64,
    pub max_solution_bond: usize,
    pub grid_mean_abs_error: Option<f64>,
    pub grid_max_abs_error: Option<f64>,
    pub points: Vec<PricePoint>,
}

fn points_for(job: &Job) -> Vec<Vec<f64>> {
    let mut pts = vec![job.market.spots.clone()];
    pts.extend(job.queries.iter().flatten().cloned());
    pts
}

fn price_points(surface: &PriceSurface, oracle: &Oracle, spots: &[Vec<f64>]) -> Result<Vec<PricePoint>, CliError> {
    spots
        .iter()
        .map(|s| {
            let q = query_price(surface, s).map_err(|e| invalid("query", e))?;
            let reference = oracle.price(s)?;
            let abs_error = reference.map(|r| (q.price - r).abs());
            Ok(PricePoint {
                spots: s.clone(),
                price: q.price,
                clamped: q.clamped,
                reference,
                abs_error,
                rel_error: reference.zip(abs_error).map(|(r, e)| e / r.abs().max(1e-300)),
            })
        })
        .collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{}", x)).collect::<Vec<_>>().join(";")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{:e}", x)).unwrap_or_default()
}

fn write_points(path: &Path, points: &[PricePoint]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["spots", "price", "clamped", "reference", "abs_error", "rel_error"])?;
    for p in points {
        w.write_record([
            join(&p.spots),
            format!("{}", p.price),
            p.clamped.to_string(),
            opt(p.reference),
            opt(p.abs_error),
            opt(p.rel_error),
        ])?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| CliError::Output(e.to_string()))?).expect("utf8");
    std::fs::write(path, &text)?;
    Ok(text)
}

fn write_steps(path: &Path, steps: &[StepRecord]) -> Result<(), CliError> {
    let mut text = String::from(StepRecord::CSV_HEADER);
    text.push('\n');
    for r in steps {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn price(job: &Job) -> Result<PriceSummary, CliError> {
    std::fs::create_dir_all(&job.out)?;
    let surface = build_surface(job)?;
    surface.save(&job.surface_dir)?;
    let oracle = Oracle::new(job)?;
    let points = price_points(&surface, &oracle, &points_for(job))?;
    let errs = oracle.grid_errors(&surface)?;
    let text = write_points(&job.out.join("prices.csv"), &points)?;
    print!("{}", text);
    write_steps(&job.out.join("steps.csv"), &surface.steps)?;
    let mut solves = String::from("report,");
    solves.push_str(qttbs_core::solve::SolveReport::CSV_HEADER);
    solves.push('\n');
    for (i, r) in surface.reports.iter().enumerate() {
        for line in r.to_csv().lines().skip(1) {
            solves.push_str(&format!("{},{}\n", i + 1, line));
        }
    }
    std::fs::write(job.out.join("sweeps.csv"), solves)?;
    let summary = PriceSummary {
        method: job.method,
        build_time_s: surface.build_time_s,
        payoff_mse: surface.payoff_mse,
        max_solution_bond: surface.solution.max_bond(),
        grid_mean_abs_error: errs.map(|e| e.0),
        grid_max_abs_error: errs.map(|e| e.1),
        points,
    };
    write_json(&job.out.join("summary.json"), &summary)?;
    if let Some((mean, max)) = errs {
        println!("# grid_mean_abs_error={:e} grid_max_abs_error={:e}", mean, max);
    }
    println!("# build_time_s={:.3} max_solution_bond={}", surface.build_time_s, summary.max_solution_bond);
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::Output(e.to_string()))?;
    std::fs::write(path, s)?;
    Ok(())
}

pub fn query(job: &Job) -> Result<Vec<PricePoint>, CliError> {
    std::fs::create_dir_all(&job.out)?;
    let surface = load_cached(job)?;
    let oracle = Oracle::new(job)?;
    let spots = job.queries.clone().unwrap_or_else(|| vec![job.market.spots.clone()]);
    let points = price_points(&surface, &oracle, &spots)?;
    let text = write_points(&job.out.join("query.csv"), &points)?;
    print!("{}", text);
    Ok(points)
}

#[derive(Clone, Debug, Serialize)]
pub struct GreeksSummary {
    pub build_time_s: f64,
    pub greeks_time_s: f64,
    /// Over interior nodes, single-asset closed-form reference only.
    pub delta_mae: Option<f64>,
    pub gamma_mae: Option<f64>,
}

/// Greek grids are written when the grid has at most this many nodes.
const GRID_DUMP_LIMIT: usize = 1 << 16;

pub fn greeks_cmd(job: &Job) -> Result<GreeksSummary, CliError> {
    std::fs::create_dir_all(&job.out)?;
    let surface = load_cached(job)?;
    let g = greeks(&surface)?;
    let d = job.grid.dim();
    let m = &job.market;
    let closed = matches!(job.reference, Some(Reference::ClosedForm));
    let kind = option_kind(&job.contract);

    let mut w = csv::Writer::from_path(job.out.join("greeks_points.csv"))?;
    let mut header = vec!["spots".to_string(), "price".into()];
    header.extend((0..d).map(|i| format!("delta_{}", i)));
    header.extend((0..d).map(|i| format!("gamma_{}", i)));
    w.write_record(&header)?;
    for s in points_for(job) {
        let p = query_price(&surface, &s).map_err(|e| invalid("query", e))?;
        let (dl, gm) = g.at(&s)?;
        let mut row = vec![join(&s), format!("{}", p.price)];
        row.extend(dl.iter().chain(&gm).map(|v| format!("{}", v)));
        w.write_record(&row)?;
    }
    w.flush()?;

    let sizes: Vec<usize> = (0..d).map(|k| job.grid.points(k)).collect();
    let total: usize = sizes.iter().product();
    let (mut de, mut ge, mut count) = (0.0, 0.0, 0usize);
    if total <= GRID_DUMP_LIMIT {
        let mut w = csv::Writer::from_path(job.out.join("greeks_grid.csv"))?;
        let mut header: Vec<String> = (0..d).map(|i| format!("spot_{}", i)).collect();
        header.push("price".into());
        header.extend((0..d).map(|i| format!("delta_{}", i)));
        header.extend((0..d).map(|i| format!("gamma_{}", i)));
        if closed {
            header.extend(["delta_exact".to_string(), "gamma_exact".into()]);
        }
        w.write_record(&header)?;
        let values = surface.solution.to_dense()?;
        let dl: Vec<_> = g.delta.iter().map(|t| t.to_dense()).collect::<Result<_, _>>()?;
        let gm: Vec<_> = g.gamma.iter().map(|t| t.to_dense()).collect::<Result<_, _>>()?;
        for f in 0..total {
            let mut js = vec![0; d];
            let mut rem = f;
            for k in (0..d).rev() {
                js[k] = rem % sizes[k];
                rem /= sizes[k];
            }
            let s: Vec<f64> = js.iter().enumerate().map(|(k, &j)| job.grid.node(k, j).exp()).collect();
            let mut row: Vec<String> = s.iter().map(|v| format!("{}", v)).collect();
            row.push(format!("{}", values[f]));
            row.extend(dl.iter().chain(&gm).map(|t| format!("{}", t[f])));
            if closed {
                let q = bs_closed_form(s[0], m.strike, m.rate, m.vols[0], m.maturity, kind);
                row.push(format!("{}", q.delta));
                row.push(format!("{}", q.gamma));
                if js[0] > 0 && js[0] + 1 < sizes[0] {
                    de += (dl[0][f] - q.delta).abs();
                    ge += (gm[0][f] - q.gamma).abs();
                    count += 1;
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    let summary = GreeksSummary {
        build_time_s: surface.build_time_s,
        greeks_time_s: g.elapsed_s,
        delta_mae: (count > 0).then(|| de / count as f64),
        gamma_mae: (count > 0).then(|| ge / count as f64),
    };
    write_json(&job.out.join("greeks_summary.json"), &summary)?;
    println!(
        "greeks_time_s={:.6} build_time_s={:.3} delta_mae={} gamma_mae={}",
        summary.greeks_time_s,
        summary.build_time_s,
        opt(summary.delta_mae),
        opt(summary.gamma_mae)
    );
    Ok(summary)
}
