//! Pricing drivers: implicit time stepping (European and American), the
//! all-at-once space-time solve, Greeks, pilot domains and point queries.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{
    eliminated_step_matrices, explicit_step_matrix, interior_mask, kron_slots, payoff_qtt, spacetime_matrix, spacetime_rhs,
    face_value, owning_face, spatial_operator, BoundaryAssembler, ContractSpec, Exercise, GridSpec, Layout, MarketParams,
    TimeGrid,
};
use crate::build::{derivative_mpo, exp_qtt};
use crate::cross::{elementwise_max, validation_indices, CrossConfig, Floor};
use crate::error::{QttError, Result};
use crate::solve::{solve, SolveConfig, SolveMode, SolveReport};
use crate::tt::io::{load_vector, save_vector};
use crate::tt::{QttVector, TruncationPolicy};

/// Settings of a pricing run beyond the cross approximation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PricingConfig {
    pub solve: SolveConfig,
    /// Time steps solved with MALS before switching to ALS.
    pub mals_steps: usize,
    /// Recompression of the right-hand side of every step.
    pub rhs_truncation: TruncationPolicy,
    /// Recompression of the solution after every step (and projection).
    pub solution_truncation: TruncationPolicy,
    /// 1 is fully implicit, 0.5 Crank-Nicolson.
    pub theta: f64,
    /// Held-out samples for the per-step cross approximations.
    pub step_validation_samples: usize,
    /// Points sampled after each American projection to measure `V - payoff`.
    pub projection_samples: usize,
    /// Cross rank for the boundary faces built at every step.
    pub boundary_rank: usize,
    /// Cross rank for the American projection, before rounding back.
    pub projection_rank: usize,
}

impl Default for PricingConfig {
    fn default() -> Self {
        PricingConfig {
            solve: SolveConfig {
                mals_truncation: TruncationPolicy::relative(1e-8).with_cap(32),
                ..SolveConfig::default()
            },
            mals_steps: 2,
            rhs_truncation: TruncationPolicy::relative(1e-8).with_cap(32),
            solution_truncation: TruncationPolicy::relative(1e-8).with_cap(32),
            theta: 1.0,
            step_validation_samples: 64,
            projection_samples: 500,
            boundary_rank: 32,
            projection_rank: 64,
        }
    }
}

impl PricingConfig {
    /// Space-time defaults: MALS, two sweeps.
    pub fn spacetime() -> Self {
        let d = Self::default();
        PricingConfig {
            solve: SolveConfig {
                mode: SolveMode::Mals,
                sweeps: 2,
                ..d.solve
            },
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solve.validate()?;
        self.rhs_truncation.validate()?;
        self.solution_truncation.validate()?;
        if self.boundary_rank == 0 || self.projection_rank == 0 {
            return Err(QttError::Invalid("cross ranks must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(QttError::Invalid(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        Ok(())
    }
}

/// Telemetry of one time step.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub tau: f64,
    pub relative_residual: f64,
    pub rhs_bond: usize,
    pub solution_bond: usize,
    pub solve_s: f64,
    pub boundary_s: f64,
    pub projection_s: f64,
    /// Smallest sampled `V - payoff` after the projection and rounding.
    pub exercise_margin: Option<f64>,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str =
        "step,tau,relative_residual,rhs_bond,solution_bond,solve_s,boundary_s,projection_s,exercise_margin";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{},{},{:.6},{:.6},{:.6},{}",
            self.step,
            self.tau,
            self.relative_residual,
            self.rhs_bond,
            self.solution_bond,
            self.solve_s,
            self.boundary_s,
            self.projection_s,
            self.exercise_margin.map(|m| format!("{:e}", m)).unwrap_or_default()
        )
    }
}

/// A solved price grid with everything needed to query it later.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriceSurface {
    /// Values at `tau = T` on the spatial grid.
    #[serde(skip, default = "placeholder")]
    pub solution: QttVector,
    /// All time layers, time cores first (space-time runs only).
    #[serde(skip)]
    pub spacetime: Option<QttVector>,
    pub grid: GridSpec,
    pub market: MarketParams,
    pub contract: ContractSpec,
    pub reports: Vec<SolveReport>,
    pub steps: Vec<StepRecord>,
    pub payoff_mse: f64,
    pub build_time_s: f64,
}

/// Stand-in until the cores are read from their own file.
fn placeholder() -> QttVector {
    QttVector::zeros(&[1])
}

const SURFACE_FILE: &str = "surface.qtt";
const META_FILE: &str = "surface.json";
const SPACETIME_FILE: &str = "spacetime.qtt";

impl PriceSurface {
    pub fn value_at(&self, js: &[usize]) -> Result<f64> {
        if js.len() != self.grid.dim() || js.iter().enumerate().any(|(k, &j)| j >= self.grid.points(k)) {
            return Err(QttError::Shape("node index outside the grid".into()));
        }
        self.solution.eval_at(&self.grid.digits_of(js))
    }

    /// Mean and max absolute error over all nodes against `exact(spots)`.
    /// Materializes the grid, so only for small problems.
    pub fn grid_errors(&self, exact: impl Fn(&[f64]) -> f64) -> Result<(f64, f64)> {
        let dense = self.solution.to_dense()?;
        let d = self.grid.dim();
        let sizes: Vec<usize> = (0..d).map(|k| self.grid.points(k)).collect();
        let (mut sum, mut max) = (0.0, 0.0f64);
        for (f, v) in dense.iter().enumerate() {
            let mut rem = f;
            let mut s = vec![0.0; d];
            for k in (0..d).rev() {
                s[k] = self.grid.node(k, rem % sizes[k]).exp();
                rem /= sizes[k];
            }
            let e = (v - exact(&s)).abs();
            sum += e;
            max = max.max(e);
        }
        Ok((sum / dense.len() as f64, max))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_vector(&dir.join(SURFACE_FILE), &self.solution)?;
        if let Some(st) = &self.spacetime {
            save_vector(&dir.join(SPACETIME_FILE), st)?;
        }
        let meta = serde_json::to_string_pretty(self).map_err(|e| QttError::Format(e.to_string()))?;
        std::fs::write(dir.join(META_FILE), meta)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = std::fs::read_to_string(dir.join(META_FILE))?;
        let mut s: PriceSurface = serde_json::from_str(&meta).map_err(|e| QttError::Format(e.to_string()))?;
        s.solution = load_vector(&dir.join(SURFACE_FILE))?;
        let st = dir.join(SPACETIME_FILE);
        if st.exists() {
            s.spacetime = Some(load_vector(&st)?);
        }
        if s.solution.mode_sizes() != s.grid.spatial_modes() {
            return Err(QttError::Format("cached surface does not match its grid".into()));
        }
        Ok(s)
    }
}

fn checked(mkt: &MarketParams, grid: &GridSpec, contract: &ContractSpec, cfg: &PricingConfig, cross: &CrossConfig) -> Result<()> {
    mkt.validate()?;
    grid.validate()?;
    contract.validate(grid.dim())?;
    cfg.validate()?;
    cross.validate()?;
    if mkt.dim() != grid.dim() {
        return Err(QttError::Invalid(format!(
            "market has {} assets but the grid has {} dimensions",
            mkt.dim(),
            grid.dim()
        )));
    }
    Ok(())
}

/// `sum_i w_i e^{x_i}` on the spatial grid; rank 2.
fn basket_qtt(grid: &GridSpec, weights: &[f64]) -> Result<QttVector> {
    let mut total = QttVector::zeros(&grid.spatial_modes());
    for i in 0..grid.dim() {
        total = total.add(&coordinate_exp(grid, i, 1.0)?.scale(weights[i]))?;
    }
    total.round(TruncationPolicy::relative(1e-14))
}

/// `exp(alpha x_i)` as a function on the whole spatial grid; rank 1.
fn coordinate_exp(grid: &GridSpec, i: usize, alpha: f64) -> Result<QttVector> {
    let mut out: Option<QttVector> = None;
    for k in 0..grid.dim() {
        let part = if k == i {
            exp_qtt(alpha, grid.interval(k), grid.cores[k])?
        } else {
            QttVector::ones(&vec![2; grid.cores[k]])
        };
        out = Some(match out {
            None => part,
            Some(o) => o.concat(&part),
        });
    }
    Ok(out.expect("at least one dimension"))
}

/// Converts a solved put into the call by parity when the contract asks for it.
fn apply_parity(w: QttVector, grid: &GridSpec, mkt: &MarketParams, contract: &ContractSpec) -> Result<QttVector> {
    if !contract.uses_parity() {
        return Ok(w);
    }
    let forward = basket_qtt(grid, &contract.weights(grid.dim()))?;
    let bond = QttVector::ones(&grid.spatial_modes()).scale(mkt.strike * mkt.discount(mkt.maturity));
    w.add(&forward)?.sub(&bond)?.round(TruncationPolicy::relative(1e-13))
}

fn min_margin(w: &QttVector, payoff: &QttVector, samples: usize, seed: u64) -> Result<f64> {
    let mut m = f64::INFINITY;
    for idx in validation_indices(&w.mode_sizes(), samples, seed) {
        m = m.min(w.eval_at(&idx)? - payoff.eval_at(&idx)?);
    }
    Ok(m)
}

/// Implicit time stepping in time-to-maturity. Each step overwrites the
/// boundary rows of the right-hand side with Dirichlet data, solves with
/// ALS/MALS from the previous solution and, for American contracts, takes
/// the pointwise maximum with the payoff by cross approximation.
pub fn price_timestepping(
    mkt: &MarketParams,
    grid: &GridSpec,
    contract: &ContractSpec,
    cfg: &PricingConfig,
    cross: &CrossConfig,
) -> Result<PriceSurface> {
    checked(mkt, grid, contract, cfg, cross)?;
    let steps = match (grid.time, grid.layout) {
        (TimeGrid::Steps { count }, Layout::Faces) => count,
        _ => return Err(QttError::Invalid("time stepping needs a steps grid with the faces layout".into())),
    };
    let start = Instant::now();
    let solved = contract.solved_contract();
    let dt = grid.dt(mkt.maturity);
    let l = spatial_operator(mkt, grid)?;
    let mask = interior_mask(grid)?;
    let (a, coupling) = eliminated_step_matrices(&l, &mask, dt, cfg.theta)?;
    let explicit = if cfg.theta < 1.0 {
        Some(explicit_step_matrix(&l, &mask, dt, cfg.theta)?)
    } else {
        None
    };
    let payoff_out = payoff_qtt(&solved, grid, mkt, cross)?;
    let payoff = payoff_out.tensor;
    let step_cross = CrossConfig {
        max_rank: cfg.boundary_rank,
        validation_sample_count: cfg.step_validation_samples,
        ..*cross
    };
    let boundary = BoundaryAssembler::new(&solved, grid, mkt, &step_cross)?;
    let american = solved.exercise == Exercise::American;

    let mut w = payoff.clone();
    let mut reports = Vec::with_capacity(steps);
    let mut records = Vec::with_capacity(steps);
    for step in 0..steps {
        let tau = (step + 1) as f64 * dt;
        let t0 = Instant::now();
        let carried = match &explicit {
            Some(e) => e.apply(&w)?,
            None => w.clone(),
        };
        let b = boundary.impose_eliminated(&carried, tau, &coupling, cfg.rhs_truncation)?;
        let boundary_s = t0.elapsed().as_secs_f64();
        let mode = if step < cfg.mals_steps { SolveMode::Mals } else { SolveMode::Als };
        let solve_cfg = SolveConfig { mode, ..cfg.solve };
        let t1 = Instant::now();
        // previous solution with refreshed boundary rows, which also
        // carries the rank the boundary data needs
        let (x, report) = solve(&a, &b, Some(&b), &solve_cfg)?;
        let solve_s = t1.elapsed().as_secs_f64();
        let t2 = Instant::now();
        let (x, margin) = if american {
            let seed = cross.seed.wrapping_add(step as u64 + 1);
            let proj_cfg = CrossConfig {
                seed,
                max_rank: cfg.projection_rank,
                ..step_cross
            };
            let proj = elementwise_max(&x, Floor::Vector(&payoff), &proj_cfg)?;
            let x = proj.tensor.round(cfg.solution_truncation)?;
            let m = min_margin(&x, &payoff, cfg.projection_samples, seed ^ 0x5eed)?;
            (x, Some(m))
        } else {
            (x.round(cfg.solution_truncation)?, None)
        };
        records.push(StepRecord {
            step: step + 1,
            tau,
            relative_residual: report.final_residual,
            rhs_bond: b.max_bond(),
            solution_bond: x.max_bond(),
            solve_s,
            boundary_s,
            projection_s: if american { t2.elapsed().as_secs_f64() } else { 0.0 },
            exercise_margin: margin,
        });
        reports.push(report);
        w = x;
    }
    let solution = apply_parity(w, grid, mkt, contract)?;
    Ok(PriceSurface {
        solution,
        spacetime: None,
        grid: grid.clone(),
        market: mkt.clone(),
        contract: contract.clone(),
        reports,
        steps: records,
        payoff_mse: payoff_out.validation_mse,
        build_time_s: start.elapsed().as_secs_f64(),
    })
}

/// One global solve over all time layers (European contracts only).
pub fn price_spacetime(
    mkt: &MarketParams,
    grid: &GridSpec,
    contract: &ContractSpec,
    cfg: &PricingConfig,
    cross: &CrossConfig,
) -> Result<PriceSurface> {
    checked(mkt, grid, contract, cfg, cross)?;
    if contract.exercise == Exercise::American {
        return Err(QttError::Invalid(
            "exercise: space-time pricing supports european contracts only".into(),
        ));
    }
    let ct = match (grid.time, grid.layout) {
        (TimeGrid::Cores { count }, Layout::Interior) => count,
        _ => return Err(QttError::Invalid("space-time needs time cores and the interior layout".into())),
    };
    let start = Instant::now();
    let a = spacetime_matrix(mkt, grid)?;
    let b = spacetime_rhs(contract, grid, mkt, cross)?.round(cfg.rhs_truncation)?;
    let (x, report) = solve(&a, &b, None, &cfg.solve)?;
    let last = x.fix_leading(&vec![1; ct])?;
    let solution = apply_parity(last, grid, mkt, contract)?;
    let payoff_mse = payoff_qtt(&contract.solved_contract(), grid, mkt, &CrossConfig {
        validation_sample_count: cfg.step_validation_samples,
        ..*cross
    })?
    .validation_mse;
    Ok(PriceSurface {
        solution,
        spacetime: Some(x),
        grid: grid.clone(),
        market: mkt.clone(),
        contract: contract.clone(),
        reports: vec![report],
        steps: Vec::new(),
        payoff_mse,
        build_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Delta and Gamma per asset on the price grid.
///
/// Centered differences need both neighbours, so values on the first and
/// last node of each axis are not meaningful.
#[derive(Clone, Debug)]
pub struct GreeksSurface {
    pub delta: Vec<QttVector>,
    pub gamma: Vec<QttVector>,
    pub grid: GridSpec,
    pub elapsed_s: f64,
}

impl GreeksSurface {
    pub fn delta_at(&self, i: usize, js: &[usize]) -> Result<f64> {
        self.delta[i].eval_at(&self.grid.digits_of(js))
    }

    pub fn gamma_at(&self, i: usize, js: &[usize]) -> Result<f64> {
        self.gamma[i].eval_at(&self.grid.digits_of(js))
    }

    /// Interpolated `(delta, gamma)` per asset at `spots`.
    pub fn at(&self, spots: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.grid.dim();
        let mut delta = Vec::with_capacity(d);
        let mut gamma = Vec::with_capacity(d);
        for i in 0..d {
            delta.push(interpolate(&self.grid, spots, |js| self.delta_at(i, js))?);
            gamma.push(interpolate(&self.grid, spots, |js| self.gamma_at(i, js))?);
        }
        Ok((delta, gamma))
    }
}

/// `Delta_i = e^{-x_i} dV/dx_i` and `Gamma_i = e^{-2 x_i} (d2V/dx_i2 - dV/dx_i)`.
pub fn greeks(surface: &PriceSurface) -> Result<GreeksSurface> {
    let start = Instant::now();
    let grid = &surface.grid;
    let v = &surface.solution;
    let policy = TruncationPolicy::relative(1e-12);
    let mut delta = Vec::with_capacity(grid.dim());
    let mut gamma = Vec::with_capacity(grid.dim());
    for i in 0..grid.dim() {
        let d1 = derivative_mpo(1, grid.cores[i], grid.dx(i))?;
        let d2 = derivative_mpo(2, grid.cores[i], grid.dx(i))?;
        let vx = kron_slots(&[(i, &d1)], &grid.cores)?.apply(v)?.round(policy)?;
        let vxx = kron_slots(&[(i, &d2)], &grid.cores)?.apply(v)?.round(policy)?;
        let inv = coordinate_exp(grid, i, -1.0)?;
        let inv2 = coordinate_exp(grid, i, -2.0)?;
        delta.push(inv.hadamard(&vx)?.round(policy)?);
        gamma.push(inv2.hadamard(&vxx.sub(&vx)?)?.round(policy)?);
    }
    Ok(GreeksSurface {
        delta,
        gamma,
        grid: grid.clone(),
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// Error of a right-hand side rounded to one rank cap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSample {
    pub cap: usize,
    pub bond: usize,
    pub mse: f64,
    /// `mse / K^2`.
    pub normalized_mse: f64,
}

/// Builds the payoff (plus, with `with_boundary`, the face data of the first
/// step) once at the rank of `cross`, rounds it to every cap in `caps` and
/// measures the mean squared error against direct evaluation on `samples`
/// random nodes, or on every node when `samples` is `None`.
#[allow(clippy::too_many_arguments)]
pub fn rhs_rank_sweep(
    mkt: &MarketParams,
    grid: &GridSpec,
    contract: &ContractSpec,
    cross: &CrossConfig,
    caps: &[usize],
    with_boundary: bool,
    samples: Option<usize>,
    seed: u64,
) -> Result<Vec<RankSample>> {
    checked(mkt, grid, contract, &PricingConfig::default(), cross)?;
    if grid.layout != Layout::Faces {
        return Err(QttError::Invalid("rank sweep needs the faces layout".into()));
    }
    if caps.iter().any(|&c| c == 0) {
        return Err(QttError::Invalid("rank caps must be >= 1".into()));
    }
    let solved = contract.solved_contract();
    let loose = CrossConfig {
        truncation: TruncationPolicy::relative(1e-12),
        ..*cross
    };
    let payoff = payoff_qtt(&solved, grid, mkt, &loose)?.tensor;
    let tau = grid.dt(mkt.maturity);
    let full = if with_boundary {
        BoundaryAssembler::new(&solved, grid, mkt, &loose)?.impose(&payoff, tau, TruncationPolicy::relative(1e-12))?
    } else {
        payoff
    };
    let d = grid.dim();
    let weights = solved.weights(d);
    let last: Vec<usize> = (0..d).map(|k| grid.points(k) - 1).collect();
    let exact = |js: &[usize]| {
        let xs: Vec<f64> = js.iter().enumerate().map(|(k, &j)| grid.node(k, j)).collect();
        if with_boundary {
            if let Some(face) = owning_face(js, &last) {
                return face_value(&solved, mkt, &weights, tau, &xs, face);
            }
        }
        let s: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        solved.payoff(&s, mkt.strike, &weights)
    };
    let modes = grid.spatial_modes();
    let points: Vec<(Vec<usize>, f64)> = match samples {
        Some(n) => validation_indices(&modes, n, seed)
            .into_iter()
            .map(|digits| {
                let v = exact(&grid.split_digits(&digits));
                (digits, v)
            })
            .collect(),
        None => {
            let total: usize = modes.iter().product();
            if total > 1 << 24 {
                return Err(QttError::DenseTooLarge(total));
            }
            let sizes: Vec<usize> = (0..d).map(|k| grid.points(k)).collect();
            (0..total)
                .map(|f| {
                    let mut rem = f;
                    let mut js = vec![0; d];
                    for k in (0..d).rev() {
                        js[k] = rem % sizes[k];
                        rem /= sizes[k];
                    }
                    (grid.digits_of(&js), exact(&js))
                })
                .collect()
        }
    };
    let k2 = mkt.strike * mkt.strike;
    let mut out = Vec::with_capacity(caps.len());
    for &cap in caps {
        let t = full.round(TruncationPolicy::relative(1e-12).with_cap(cap))?;
        let mut sum = 0.0;
        if samples.is_none() {
            let dense = t.to_dense()?;
            for (f, (_, v)) in points.iter().enumerate() {
                sum += (dense[f] - v).powi(2);
            }
        } else {
            for (digits, v) in &points {
                sum += (t.eval_at(digits)? - v).powi(2);
            }
        }
        let mse = sum / points.len() as f64;
        out.push(RankSample {
            cap,
            bond: t.max_bond(),
            mse,
            normalized_mse: mse / k2,
        });
    }
    Ok(out)
}

/// Bounds chosen by a coarse solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// The coarse solution never exceeded the threshold; the bounds are the
    /// initial `+-5 sigma sqrt(T)` box.
    pub fallback: bool,
}

/// Initial box around the log-spots.
pub fn default_domain(mkt: &MarketParams, width: f64) -> (Vec<f64>, Vec<f64>) {
    let d = mkt.dim();
    let half: Vec<f64> = (0..d).map(|i| width * mkt.vols[i] * mkt.maturity.sqrt()).collect();
    let x = mkt.log_spots();
    (
        (0..d).map(|i| x[i] - half[i]).collect(),
        (0..d).map(|i| x[i] + half[i]).collect(),
    )
}

/// Two-stage domain selection: price on a coarse grid over the
/// `+-5 sigma sqrt(T)` box, keep the index range per axis where
/// `|V| > threshold * K` somewhere on the slice, pad by two coarse cells.
pub fn pilot_domain(
    mkt: &MarketParams,
    contract: &ContractSpec,
    coarse_cores: usize,
    threshold: f64,
    cross: &CrossConfig,
) -> Result<PilotDomain> {
    mkt.validate()?;
    let d = mkt.dim();
    if !(2..=6).contains(&coarse_cores) || coarse_cores * d > 24 {
        return Err(QttError::Invalid("pilot grid must have 2..=6 cores per axis and at most 2^24 nodes".into()));
    }
    let (lo, hi) = default_domain(mkt, 5.0);
    let steps = 1 << coarse_cores;
    let grid = GridSpec::timestepping(vec![coarse_cores; d], lo.clone(), hi.clone(), steps)?;
    let surface = price_timestepping(mkt, &grid, contract, &PricingConfig::default(), cross)?;
    let dense = surface.solution.to_dense()?;
    let n = 1usize << coarse_cores;
    let thr = threshold * mkt.strike;
    let mut jmin = vec![usize::MAX; d];
    let mut jmax = vec![0usize; d];
    let mut any = false;
    for (f, v) in dense.iter().enumerate() {
        if v.abs() <= thr {
            continue;
        }
        any = true;
        let mut rem = f;
        for k in (0..d).rev() {
            let j = rem % n;
            rem /= n;
            jmin[k] = jmin[k].min(j);
            jmax[k] = jmax[k].max(j);
        }
    }
    if !any {
        return Ok(PilotDomain {
            lower: lo,
            upper: hi,
            fallback: true,
        });
    }
    let x = mkt.log_spots();
    let mut lower = Vec::with_capacity(d);
    let mut upper = Vec::with_capacity(d);
    for k in 0..d {
        let dx = grid.dx(k);
        let a = grid.node(k, jmin[k].saturating_sub(2)).min(x[k] - 2.0 * dx);
        let b = grid.node(k, (jmax[k] + 2).min(n - 1)).max(x[k] + 2.0 * dx);
        lower.push(a.max(lo[k]));
        upper.push(b.min(hi[k]));
    }
    Ok(PilotDomain {
        lower,
        upper,
        fallback: false,
    })
}

/// An interpolated price; `clamped` is set when a negative value was raised to zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub price: f64,
    pub clamped: bool,
}

/// Multilinear interpolation between the `2^d` grid nodes around `spots`.
pub fn query_price(surface: &PriceSurface, spots: &[f64]) -> Result<Quote> {
    let acc = interpolate(&surface.grid, spots, |js| surface.value_at(js))?;
    Ok(Quote {
        price: acc.max(0.0),
        clamped: acc < 0.0,
    })
}

/// Multilinear interpolation of `f` (a function of node indices) at `spots`.
pub fn interpolate(grid: &GridSpec, spots: &[f64], f: impl Fn(&[usize]) -> Result<f64>) -> Result<f64> {
    let d = grid.dim();
    if spots.len() != d {
        return Err(QttError::Invalid(format!("expected {} spots, got {}", d, spots.len())));
    }
    let mut cell = Vec::with_capacity(d);
    for (i, &s) in spots.iter().enumerate() {
        if !(s > 0.0) || !s.is_finite() {
            return Err(QttError::Invalid(format!("spot {} must be finite and > 0", i)));
        }
        let loc = grid
            .locate(i, s.ln())
            .ok_or_else(|| QttError::Invalid(format!("spot {} ({}) lies outside the grid", i, s)))?;
        cell.push(loc);
    }
    let mut acc = 0.0;
    let mut js = vec![0usize; d];
    for corner in 0..1usize << d {
        let mut weight = 1.0;
        for k in 0..d {
            let up = (corner >> (d - 1 - k)) & 1;
            let (j, t) = cell[k];
            js[k] = j + up;
            weight *= if up == 1 { t } else { 1.0 - t };
        }
        if weight != 0.0 {
            acc += weight * f(&js)?;
        }
    }
    Ok(acc)
}
