//! Discretization of the multi-asset Black-Scholes equation in log prices.
//!
//! Time runs backwards from maturity (`tau = T - t`). Spatial derivatives use
//! centered differences on a uniform grid per asset, so every one-dimensional
//! factor is a Toeplitz tridiagonal matrix with an exact rank-3 QTT form.
//!
//! Two grid layouts are supported. [`Layout::Faces`] places the first and
//! last node of each axis on the domain boundary and is used by time
//! stepping, where boundary rows are overwritten by Dirichlet data.
//! [`Layout::Interior`] keeps only interior nodes; boundary values enter the
//! right-hand side through the stencil (space-time formulation).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::build::{basis_qtt, insert_register, tridiagonal_mpo, v_left, v_right, BasisEnd, Interval};
use crate::cross::{tt_cross, CrossConfig, CrossOutput, FnEvaluator};
use crate::error::{QttError, Result};
use crate::tt::linalg::cholesky;
use crate::tt::{QttOperator, QttVector, TruncationPolicy};

/// Tolerance used when recompressing exactly representable operators.
const EXACT: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub spots: Vec<f64>,
    pub strike: f64,
    pub rate: f64,
    pub vols: Vec<f64>,
    pub correlation: Vec<Vec<f64>>,
    pub maturity: f64,
}

impl MarketParams {
    pub fn single(spot: f64, strike: f64, rate: f64, vol: f64, maturity: f64) -> Self {
        MarketParams {
            spots: vec![spot],
            strike,
            rate,
            vols: vec![vol],
            correlation: vec![vec![1.0]],
            maturity,
        }
    }

    /// The synthetic five-asset market used by the basket benchmarks,
    /// truncated to its first `d` assets.
    pub fn reference_basket(d: usize, strike: f64) -> Result<Self> {
        const SPOTS: [f64; 5] = [10.0, 11.0, 12.0, 13.0, 14.0];
        const VOLS: [f64; 5] = [0.25, 0.15, 0.20, 0.10, 0.15];
        const RHO: [[f64; 5]; 5] = [
            [1.0, 0.4, 0.3, 0.2, 0.1],
            [0.4, 1.0, 0.2, 0.3, 0.4],
            [0.3, 0.2, 1.0, 0.1, 0.2],
            [0.2, 0.3, 0.1, 1.0, 0.3],
            [0.1, 0.4, 0.2, 0.3, 1.0],
        ];
        if d == 0 || d > 5 {
            return Err(QttError::Invalid(format!("reference market has 1..=5 assets, asked for {}", d)));
        }
        Ok(MarketParams {
            spots: SPOTS[..d].to_vec(),
            strike,
            rate: 0.05,
            vols: VOLS[..d].to_vec(),
            correlation: RHO[..d].iter().map(|row| row[..d].to_vec()).collect(),
            maturity: 1.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.spots.len()
    }

    pub fn drift(&self, i: usize) -> f64 {
        self.rate - 0.5 * self.vols[i] * self.vols[i]
    }

    pub fn log_spots(&self) -> Vec<f64> {
        self.spots.iter().map(|s| s.ln()).collect()
    }

    pub fn discount(&self, tau: f64) -> f64 {
        (-self.rate * tau).exp()
    }

    pub fn correlation_matrix(&self) -> Array2<f64> {
        let d = self.dim();
        Array2::from_shape_fn((d, d), |(i, j)| self.correlation[i][j])
    }

    /// Lower Cholesky factor of the correlation matrix.
    pub fn correlation_cholesky(&self) -> Result<Array2<f64>> {
        cholesky(&self.correlation_matrix())
            .map_err(|_| QttError::Invalid("correlation: matrix is not positive definite".into()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(QttError::Invalid("spots: need at least one asset".into()));
        }
        if self.vols.len() != d {
            return Err(QttError::Invalid(format!("vols: expected {} entries, got {}", d, self.vols.len())));
        }
        if self.spots.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(QttError::Invalid("spots: must be finite and > 0".into()));
        }
        if self.vols.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(QttError::Invalid("vols: must be finite and > 0".into()));
        }
        if !(self.strike > 0.0) || !self.strike.is_finite() {
            return Err(QttError::Invalid("strike: must be finite and > 0".into()));
        }
        if !(self.maturity > 0.0) || !self.maturity.is_finite() {
            return Err(QttError::Invalid("maturity: must be finite and > 0".into()));
        }
        if !self.rate.is_finite() {
            return Err(QttError::Invalid("rate: must be finite".into()));
        }
        if self.correlation.len() != d || self.correlation.iter().any(|row| row.len() != d) {
            return Err(QttError::Invalid(format!("correlation: expected a {}x{} matrix", d, d)));
        }
        for i in 0..d {
            if (self.correlation[i][i] - 1.0).abs() > 1e-12 {
                return Err(QttError::Invalid("correlation: diagonal must be 1".into()));
            }
            for j in 0..d {
                let v = self.correlation[i][j];
                if !v.is_finite() || v.abs() > 1.0 {
                    return Err(QttError::Invalid("correlation: entries must lie in [-1, 1]".into()));
                }
                if (v - self.correlation[j][i]).abs() > 1e-12 {
                    return Err(QttError::Invalid("correlation: matrix must be symmetric".into()));
                }
            }
        }
        self.correlation_cholesky().map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Node `j` sits at `lo + j dx` with `dx = (hi - lo) / (n - 1)`.
    Faces,
    /// Node `j` sits at `lo + (j + 1) dx` with `dx = (hi - lo) / (n + 1)`.
    Interior,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TimeGrid {
    /// Sequential implicit steps.
    Steps { count: usize },
    /// `2^count` time layers held in QTT cores ahead of the spatial cores.
    Cores { count: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cores per spatial dimension.
    pub cores: Vec<usize>,
    /// Log-price bounds per dimension.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub time: TimeGrid,
    pub layout: Layout,
}

impl GridSpec {
    pub fn timestepping(cores: Vec<usize>, lower: Vec<f64>, upper: Vec<f64>, steps: usize) -> Result<Self> {
        let g = GridSpec {
            cores,
            lower,
            upper,
            time: TimeGrid::Steps { count: steps },
            layout: Layout::Faces,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn spacetime(cores: Vec<usize>, lower: Vec<f64>, upper: Vec<f64>, time_cores: usize) -> Result<Self> {
        let g = GridSpec {
            cores,
            lower,
            upper,
            time: TimeGrid::Cores { count: time_cores },
            layout: Layout::Interior,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.cores.len();
        if d == 0 {
            return Err(QttError::Invalid("grid: need at least one dimension".into()));
        }
        if self.lower.len() != d || self.upper.len() != d {
            return Err(QttError::Invalid("grid: bounds must have one entry per dimension".into()));
        }
        if self.cores.iter().any(|&c| !(2..=20).contains(&c)) {
            return Err(QttError::Invalid("grid: cores per dimension must lie in 2..=20".into()));
        }
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                return Err(QttError::Invalid(format!("grid: bad bounds [{}, {}]", lo, hi)));
            }
        }
        match self.time {
            TimeGrid::Steps { count } if count == 0 => {
                return Err(QttError::Invalid("grid: time steps must be >= 1".into()))
            }
            TimeGrid::Cores { count } if !(2..=20).contains(&count) => {
                return Err(QttError::Invalid("grid: time cores must lie in 2..=20".into()))
            }
            _ => {}
        }
        if self.layout == Layout::Faces && matches!(self.time, TimeGrid::Cores { .. }) {
            return Err(QttError::Invalid("grid: space-time grids use the interior layout".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.cores.len()
    }

    pub fn points(&self, i: usize) -> usize {
        1 << self.cores[i]
    }

    pub fn dx(&self, i: usize) -> f64 {
        let n = self.points(i) as f64;
        let w = self.upper[i] - self.lower[i];
        match self.layout {
            Layout::Faces => w / (n - 1.0),
            Layout::Interior => w / (n + 1.0),
        }
    }

    /// Log-price of node `j` along dimension `i`.
    pub fn node(&self, i: usize, j: usize) -> f64 {
        match self.layout {
            Layout::Faces => self.lower[i] + j as f64 * self.dx(i),
            Layout::Interior => self.lower[i] + (j + 1) as f64 * self.dx(i),
        }
    }

    pub fn nodes(&self, i: usize) -> Vec<f64> {
        (0..self.points(i)).map(|j| self.node(i, j)).collect()
    }

    /// Sampling interval whose `exp_qtt` entries land on the nodes of dimension `i`.
    pub fn interval(&self, i: usize) -> Interval {
        let lo = self.node(i, 0);
        Interval {
            lo,
            hi: lo + self.points(i) as f64 * self.dx(i),
        }
    }

    pub fn spatial_cores(&self) -> usize {
        self.cores.iter().sum()
    }

    pub fn spatial_modes(&self) -> Vec<usize> {
        vec![2; self.spatial_cores()]
    }

    /// First spatial core of each dimension.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.cores
            .iter()
            .map(|&c| {
                let o = acc;
                acc += c;
                o
            })
            .collect()
    }

    pub fn time_cores(&self) -> usize {
        match self.time {
            TimeGrid::Steps { .. } => 0,
            TimeGrid::Cores { count } => count,
        }
    }

    pub fn steps(&self) -> usize {
        match self.time {
            TimeGrid::Steps { count } => count,
            TimeGrid::Cores { count } => 1 << count,
        }
    }

    pub fn dt(&self, maturity: f64) -> f64 {
        maturity / self.steps() as f64
    }

    /// Per-dimension node indices from spatial digits.
    pub fn split_digits(&self, digits: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim());
        let mut pos = 0;
        for &c in &self.cores {
            out.push(bits_value(&digits[pos..pos + c]));
            pos += c;
        }
        out
    }

    pub fn digits_of(&self, js: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.spatial_cores());
        for (&j, &c) in js.iter().zip(&self.cores) {
            out.extend((0..c).map(|b| (j >> (c - 1 - b)) & 1));
        }
        out
    }

    /// Bracketing node and linear weight for log-price `x` along dimension `i`.
    pub fn locate(&self, i: usize, x: f64) -> Option<(usize, f64)> {
        let n = self.points(i);
        let dx = self.dx(i);
        let t = (x - self.node(i, 0)) / dx;
        let slack = 1e-9;
        if !t.is_finite() || t < -slack || t > (n - 1) as f64 + slack {
            return None;
        }
        let t = t.clamp(0.0, (n - 1) as f64);
        let j = (t.floor() as usize).min(n - 2);
        Some((j, t - j as f64))
    }
}

fn bits_value(bits: &[usize]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    BasketPut,
    BasketCall,
    WorstOfPut,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exercise {
    European,
    American,
}

/// How a basket call is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallMethod {
    /// Solve the put and add `sum w_i S_i - K e^{-r tau}`.
    Parity,
    /// Solve the call with its own boundary data.
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractSpec {
    pub kind: PayoffKind,
    pub exercise: Exercise,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_call_method")]
    pub call_method: CallMethod,
}

fn default_call_method() -> CallMethod {
    CallMethod::Parity
}

impl ContractSpec {
    pub fn new(kind: PayoffKind, exercise: Exercise) -> Self {
        ContractSpec {
            kind,
            exercise,
            weights: None,
            call_method: CallMethod::Parity,
        }
    }

    pub fn european(kind: PayoffKind) -> Self {
        Self::new(kind, Exercise::European)
    }

    pub fn with_call_method(mut self, m: CallMethod) -> Self {
        self.call_method = m;
        self
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if let Some(w) = &self.weights {
            if self.kind == PayoffKind::WorstOfPut {
                return Err(QttError::Invalid("weights: worst-of contracts take no weights".into()));
            }
            if w.len() != d || w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(QttError::Invalid(format!("weights: need {} positive entries", d)));
            }
        }
        if self.kind == PayoffKind::BasketCall
            && self.exercise == Exercise::American
            && self.call_method == CallMethod::Parity
        {
            return Err(QttError::Invalid(
                "call_method: american calls need direct boundaries, parity only holds for europeans".into(),
            ));
        }
        Ok(())
    }

    pub fn weights(&self, d: usize) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; d])
    }

    /// The contract actually handed to the PDE solver.
    pub fn solved_contract(&self) -> ContractSpec {
        if self.kind == PayoffKind::BasketCall && self.call_method == CallMethod::Parity {
            ContractSpec {
                kind: PayoffKind::BasketPut,
                ..self.clone()
            }
        } else {
            self.clone()
        }
    }

    pub fn uses_parity(&self) -> bool {
        self.kind == PayoffKind::BasketCall && self.call_method == CallMethod::Parity
    }

    /// Payoff for asset prices `s`.
    pub fn payoff(&self, s: &[f64], strike: f64, weights: &[f64]) -> f64 {
        match self.kind {
            PayoffKind::BasketPut => (strike - dotw(weights, s)).max(0.0),
            PayoffKind::BasketCall => (dotw(weights, s) - strike).max(0.0),
            PayoffKind::WorstOfPut => (strike - s.iter().cloned().fold(f64::INFINITY, f64::min)).max(0.0),
        }
    }
}

fn dotw(w: &[f64], s: &[f64]) -> f64 {
    w.iter().zip(s).map(|(a, b)| a * b).sum()
}

/// One of the `2d` boundary hyperplanes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Face {
    pub dim: usize,
    pub upper: bool,
}

/// The face whose data a boundary node receives. Lower faces beat upper
/// ones, and among faces of the same side the later dimension wins.
/// `last[k]` is the index of the upper boundary along dimension `k`.
pub fn owning_face(idx: &[usize], last: &[usize]) -> Option<Face> {
    if let Some(k) = (0..idx.len()).rev().find(|&k| idx[k] == 0) {
        return Some(Face { dim: k, upper: false });
    }
    (0..idx.len())
        .rev()
        .find(|&k| idx[k] == last[k])
        .map(|k| Face { dim: k, upper: true })
}

/// Dirichlet value at a boundary node with log-prices `xs`, owned by `face`.
pub fn face_value(contract: &ContractSpec, mkt: &MarketParams, weights: &[f64], tau: f64, xs: &[f64], face: Face) -> f64 {
    let disc = mkt.strike * mkt.discount(tau);
    let basket = || xs.iter().zip(weights).map(|(x, w)| w * x.exp()).sum::<f64>();
    match (contract.kind, face.upper) {
        (PayoffKind::BasketPut, true) | (PayoffKind::WorstOfPut, true) => 0.0,
        (PayoffKind::BasketPut, false) => (disc - basket()).max(0.0),
        (PayoffKind::BasketCall, true) => basket() - disc,
        (PayoffKind::BasketCall, false) => (basket() - disc).max(0.0),
        (PayoffKind::WorstOfPut, false) => (disc - xs[face.dim].exp()).max(0.0),
    }
}

fn face_is_zero(contract: &ContractSpec, face: Face) -> bool {
    face.upper && contract.kind != PayoffKind::BasketCall
}

fn all_faces(d: usize) -> Vec<Face> {
    (0..d)
        .map(|k| Face { dim: k, upper: true })
        .chain((0..d).map(|k| Face { dim: k, upper: false }))
        .collect()
}

/// Kronecker product placing `slots` at their dimensions and identities elsewhere.
pub(crate) fn kron_slots(slots: &[(usize, &QttOperator)], cores: &[usize]) -> Result<QttOperator> {
    let mut out: Vec<ndarray::Array4<f64>> = Vec::new();
    for (k, &c) in cores.iter().enumerate() {
        match slots.iter().find(|(dim, _)| *dim == k) {
            Some((_, op)) => {
                if op.num_cores() != c {
                    return Err(QttError::Shape("operator slot has the wrong core count".into()));
                }
                out.extend(op.cores().iter().cloned());
            }
            None => out.extend(QttOperator::identity(&vec![2; c]).into_cores()),
        }
    }
    QttOperator::from_cores(out)
}

fn check_dims(mkt: &MarketParams, grid: &GridSpec) -> Result<()> {
    mkt.validate()?;
    grid.validate()?;
    if mkt.dim() != grid.dim() {
        return Err(QttError::Invalid(format!(
            "market has {} assets but the grid has {} dimensions",
            mkt.dim(),
            grid.dim()
        )));
    }
    Ok(())
}

/// The discrete generator `L` (diffusion, correlation, drift and discounting)
/// with zero padding outside the grid.
pub fn spatial_operator(mkt: &MarketParams, grid: &GridSpec) -> Result<QttOperator> {
    check_dims(mkt, grid)?;
    let d = grid.dim();
    let exact = TruncationPolicy::relative(EXACT);
    let mut total: Option<QttOperator> = None;
    let mut push = |op: QttOperator| -> Result<()> {
        total = Some(match total.take() {
            None => op,
            Some(t) => t.add(&op)?.round(exact)?,
        });
        Ok(())
    };
    for i in 0..d {
        let dx = grid.dx(i);
        let diff = 0.5 * mkt.vols[i] * mkt.vols[i] / (dx * dx);
        let drift = mkt.drift(i) / (2.0 * dx);
        let reaction = if i == 0 { mkt.rate } else { 0.0 };
        let t = tridiagonal_mpo(-2.0 * diff - reaction, diff + drift, diff - drift, grid.cores[i])?;
        push(kron_slots(&[(i, &t)], &grid.cores)?)?;
    }
    for i in 0..d {
        for k in i + 1..d {
            let coef = mkt.correlation[i][k] * mkt.vols[i] * mkt.vols[k];
            if coef == 0.0 {
                continue;
            }
            let di = first_difference(grid.cores[i], grid.dx(i))?;
            let dk = first_difference(grid.cores[k], grid.dx(k))?;
            push(kron_slots(&[(i, &di), (k, &dk)], &grid.cores)?.scale(coef))?;
        }
    }
    Ok(total.expect("at least one dimension"))
}

fn first_difference(c: usize, dx: f64) -> Result<QttOperator> {
    let h = 1.0 / (2.0 * dx);
    tridiagonal_mpo(0.0, h, -h, c)
}

/// `A = I - dt L`.
pub fn timestepping_matrix(l: &QttOperator, dt: f64) -> Result<QttOperator> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(QttError::Invalid("time step must be finite and >= 0".into()));
    }
    let id = QttOperator::identity(&l.row_modes());
    id.sub(&l.scale(dt))?.round(TruncationPolicy::relative(EXACT))
}

/// 0/1 vector that is one on interior nodes of a faces-layout grid.
pub fn interior_mask(grid: &GridSpec) -> Result<QttVector> {
    let mut out: Option<QttVector> = None;
    for &c in &grid.cores {
        let m = v_left(c)?.hadamard(&v_right(c)?)?.round(TruncationPolicy::relative(EXACT))?;
        out = Some(match out {
            None => m,
            Some(o) => o.concat(&m),
        });
    }
    Ok(out.expect("at least one dimension"))
}

/// Left-hand operator of one theta-step with Dirichlet rows:
/// `I - theta dt E L`, where `E` keeps interior rows only. Boundary rows
/// reduce to the identity, so boundary entries of the solution equal the
/// boundary entries of the right-hand side.
pub fn dirichlet_step_matrix(l: &QttOperator, mask: &QttVector, dt: f64, theta: f64) -> Result<QttOperator> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(QttError::Invalid(format!("theta must lie in [0, 1], got {}", theta)));
    }
    let exact = TruncationPolicy::relative(EXACT);
    let el = QttOperator::from_diagonal(mask).compose(l)?.round(exact)?;
    timestepping_matrix(&el, theta * dt)
}

/// Same step with the boundary columns eliminated. Returns `(A, C)` with
/// `A = I - theta dt E L E` and `C = theta dt E L`. For a right-hand side
/// `b = E u + g` whose boundary part is `g`, the Dirichlet step solves
/// `A x = b + C g`. `A` keeps the definite symmetric part of the interior
/// block, which Galerkin sweeps rely on at fine grids.
pub fn eliminated_step_matrices(l: &QttOperator, mask: &QttVector, dt: f64, theta: f64) -> Result<(QttOperator, QttOperator)> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(QttError::Invalid(format!("theta must lie in [0, 1], got {}", theta)));
    }
    let exact = TruncationPolicy::relative(EXACT);
    let e = QttOperator::from_diagonal(mask);
    let el = e.compose(l)?.round(exact)?;
    let ele = el.compose(&e)?.round(exact)?;
    let a = timestepping_matrix(&ele, theta * dt)?;
    Ok((a, el.scale(theta * dt)))
}

/// Right-hand operator of one theta-step, `E (I + (1 - theta) dt L)`.
pub fn explicit_step_matrix(l: &QttOperator, mask: &QttVector, dt: f64, theta: f64) -> Result<QttOperator> {
    let exact = TruncationPolicy::relative(EXACT);
    let e = QttOperator::from_diagonal(mask);
    if theta == 1.0 {
        return Ok(e);
    }
    let id = QttOperator::identity(&l.row_modes());
    let inner = id.add(&l.scale((1.0 - theta) * dt))?.round(exact)?;
    e.compose(&inner)?.round(exact)
}

/// Block lower-bidiagonal space-time operator `L_t (x) I + I (x) (I - dt L)`
/// on an interior-layout grid; time cores come first.
pub fn spacetime_matrix(mkt: &MarketParams, grid: &GridSpec) -> Result<QttOperator> {
    check_dims(mkt, grid)?;
    let ct = match grid.time {
        TimeGrid::Cores { count } => count,
        TimeGrid::Steps { .. } => return Err(QttError::Invalid("space-time needs time cores".into())),
    };
    if grid.layout != Layout::Interior {
        return Err(QttError::Invalid("space-time needs the interior layout".into()));
    }
    let dt = grid.dt(mkt.maturity);
    let b = timestepping_matrix(&spatial_operator(mkt, grid)?, dt)?;
    let lt = tridiagonal_mpo(0.0, 0.0, -1.0, ct)?;
    let ix = QttOperator::identity(&grid.spatial_modes());
    let it = QttOperator::identity(&vec![2; ct]);
    lt.kron(&ix)
        .add(&it.kron(&b))?
        .round(TruncationPolicy::relative(EXACT))
}

/// Exponentials of the node coordinates, per dimension.
fn exp_tables(grid: &GridSpec) -> Vec<Vec<f64>> {
    (0..grid.dim()).map(|i| grid.nodes(i).iter().map(|x| x.exp()).collect()).collect()
}

/// Payoff sampled on the spatial grid by cross approximation.
pub fn payoff_qtt(contract: &ContractSpec, grid: &GridSpec, mkt: &MarketParams, cfg: &CrossConfig) -> Result<CrossOutput> {
    check_dims(mkt, grid)?;
    contract.validate(grid.dim())?;
    let tables = exp_tables(grid);
    let w = contract.weights(grid.dim());
    let k = mkt.strike;
    let f = |digits: &[usize]| {
        let js = grid.split_digits(digits);
        let s: Vec<f64> = js.iter().enumerate().map(|(i, &j)| tables[i][j]).collect();
        contract.payoff(&s, k, &w)
    };
    tt_cross(&FnEvaluator(f), &grid.spatial_modes(), cfg, None)
}

/// Builds the Dirichlet data that `impose_boundaries` adds at every step.
/// Geometry and tables are computed once and reused across time levels.
pub struct BoundaryAssembler<'a> {
    contract: ContractSpec,
    grid: &'a GridSpec,
    mkt: &'a MarketParams,
    cfg: CrossConfig,
    mask: QttVector,
    eraser: QttOperator,
    weights: Vec<f64>,
    faces: Vec<Face>,
}

impl<'a> BoundaryAssembler<'a> {
    pub fn new(contract: &ContractSpec, grid: &'a GridSpec, mkt: &'a MarketParams, cfg: &CrossConfig) -> Result<Self> {
        check_dims(mkt, grid)?;
        contract.validate(grid.dim())?;
        if grid.layout != Layout::Faces {
            return Err(QttError::Invalid("boundary overwrite needs the faces layout".into()));
        }
        let contract = contract.solved_contract();
        let mask = interior_mask(grid)?;
        let faces = all_faces(grid.dim())
            .into_iter()
            .filter(|f| !face_is_zero(&contract, *f))
            .collect();
        Ok(BoundaryAssembler {
            weights: contract.weights(grid.dim()),
            eraser: QttOperator::from_diagonal(&mask),
            contract,
            grid,
            mkt,
            cfg: *cfg,
            mask,
            faces,
        })
    }

    pub fn mask(&self) -> &QttVector {
        &self.mask
    }

    pub fn eraser(&self) -> &QttOperator {
        &self.eraser
    }

    /// Sum of the face terms at time-to-maturity `tau`: boundary values on
    /// boundary nodes, zero in the interior.
    pub fn boundary(&self, tau: f64) -> Result<QttVector> {
        let grid = self.grid;
        let d = grid.dim();
        let last: Vec<usize> = (0..d).map(|k| grid.points(k) - 1).collect();
        let mut total = QttVector::zeros(&grid.spatial_modes());
        for &face in &self.faces {
            let fixed = if face.upper { last[face.dim] } else { 0 };
            let term = if d == 1 {
                let v = face_value(&self.contract, self.mkt, &self.weights, tau, &[grid.node(0, fixed)], face);
                let end = if face.upper { BasisEnd::Last } else { BasisEnd::First };
                basis_qtt(end, grid.cores[0])?.scale(v)
            } else {
                let others: Vec<usize> = (0..d).filter(|&k| k != face.dim).collect();
                let sub_cores: Vec<usize> = others.iter().map(|&k| grid.cores[k]).collect();
                let modes = vec![2; sub_cores.iter().sum()];
                let f = |digits: &[usize]| {
                    let mut idx = vec![fixed; d];
                    let mut pos = 0;
                    for (&k, &c) in others.iter().zip(&sub_cores) {
                        idx[k] = bits_value(&digits[pos..pos + c]);
                        pos += c;
                    }
                    if owning_face(&idx, &last) != Some(face) {
                        return 0.0;
                    }
                    let xs: Vec<f64> = idx.iter().enumerate().map(|(k, &j)| grid.node(k, j)).collect();
                    face_value(&self.contract, self.mkt, &self.weights, tau, &xs, face)
                };
                let sub = tt_cross(&FnEvaluator(f), &modes, &self.cfg, None)?.tensor;
                let position = grid.offsets()[face.dim];
                insert_register(&sub, position, grid.cores[face.dim], face.upper as usize)?
            };
            total = total.add(&term)?;
        }
        total.round(self.cfg.truncation)
    }

    /// `E w + boundary(tau)`, recompressed with `policy`.
    pub fn impose(&self, w: &QttVector, tau: f64, policy: TruncationPolicy) -> Result<QttVector> {
        let erased = self.eraser.apply(w)?;
        erased.add(&self.boundary(tau)?)?.round(policy)
    }

    /// `E w + g + C g` with `g = boundary(tau)`: the right-hand side that goes
    /// with the eliminated step operator `C` from [`eliminated_step_matrices`].
    pub fn impose_eliminated(&self, w: &QttVector, tau: f64, coupling: &QttOperator, policy: TruncationPolicy) -> Result<QttVector> {
        let g = self.boundary(tau)?;
        let lifted = coupling.apply(&g)?;
        let erased = self.eraser.apply(w)?;
        erased.add(&g)?.add(&lifted)?.round(policy)
    }
}

/// Overwrite every boundary node of `w` with the Dirichlet data at `tau`.
pub fn impose_boundaries(
    w: &QttVector,
    tau: f64,
    contract: &ContractSpec,
    grid: &GridSpec,
    mkt: &MarketParams,
    cfg: &CrossConfig,
) -> Result<QttVector> {
    if !(0.0..=mkt.maturity * (1.0 + 1e-12)).contains(&tau) {
        return Err(QttError::Invalid(format!("tau {} outside [0, T]", tau)));
    }
    let asm = BoundaryAssembler::new(contract, grid, mkt, cfg)?;
    if w.mode_sizes() != grid.spatial_modes() {
        return Err(QttError::Shape("solution does not match the grid".into()));
    }
    asm.impose(w, tau, cfg.truncation)
}

/// Right-hand side of the space-time system: the payoff in the first time
/// layer plus the contributions of boundary (ghost) nodes reached by the
/// stencil of interior rows, for every time layer.
pub fn spacetime_rhs(contract: &ContractSpec, grid: &GridSpec, mkt: &MarketParams, cfg: &CrossConfig) -> Result<QttVector> {
    check_dims(mkt, grid)?;
    contract.validate(grid.dim())?;
    if contract.exercise == Exercise::American {
        return Err(QttError::Invalid(
            "exercise: space-time pricing supports european contracts only".into(),
        ));
    }
    let ct = match (grid.time, grid.layout) {
        (TimeGrid::Cores { count }, Layout::Interior) => count,
        _ => return Err(QttError::Invalid("space-time needs time cores and the interior layout".into())),
    };
    let solved = contract.solved_contract();
    let d = grid.dim();
    let dt = grid.dt(mkt.maturity);
    let weights = solved.weights(d);
    let payoff = payoff_qtt(&solved, grid, mkt, cfg)?.tensor;
    let mut total = basis_qtt(BasisEnd::First, ct)?.concat(&payoff);

    // extended index: 0 and n+1 are the boundary planes
    let last: Vec<usize> = (0..d).map(|k| grid.points(k) + 1).collect();
    let coord = |k: usize, e: usize| grid.lower[k] + e as f64 * grid.dx(k);
    let diff: Vec<f64> = (0..d)
        .map(|i| 0.5 * mkt.vols[i] * mkt.vols[i] / (grid.dx(i) * grid.dx(i)))
        .collect();
    let drift: Vec<f64> = (0..d).map(|i| mkt.drift(i) / (2.0 * grid.dx(i))).collect();

    for face in all_faces(d) {
        if face_is_zero(&solved, face) {
            continue;
        }
        let i = face.dim;
        let side: isize = if face.upper { 1 } else { -1 };
        let others: Vec<usize> = (0..d).filter(|&k| k != i).collect();
        let sub_cores: Vec<usize> = others.iter().map(|&k| grid.cores[k]).collect();
        let nsub: usize = sub_cores.iter().sum();
        let f = |digits: &[usize]| {
            let t = bits_value(&digits[..ct]);
            let tau = (t + 1) as f64 * dt;
            // interior row, in extended coordinates
            let mut row = vec![0usize; d];
            row[i] = if face.upper { grid.points(i) } else { 1 };
            let mut pos = ct;
            for (&k, &c) in others.iter().zip(&sub_cores) {
                row[k] = bits_value(&digits[pos..pos + c]) + 1;
                pos += c;
            }
            let mut acc = 0.0;
            let mut ghost = row.clone();
            ghost[i] = (row[i] as isize + side) as usize;
            let mut visit = |g: &[usize], coef: f64| {
                if owning_face(g, &last) == Some(face) {
                    let xs: Vec<f64> = g.iter().enumerate().map(|(k, &e)| coord(k, e)).collect();
                    acc += coef * face_value(&solved, mkt, &weights, tau, &xs, face);
                }
            };
            visit(&ghost, diff[i] + side as f64 * drift[i]);
            for &k in &others {
                let rho = mkt.correlation[i][k] * mkt.vols[i] * mkt.vols[k];
                if rho == 0.0 {
                    continue;
                }
                for s in [-1isize, 1] {
                    let mut g = ghost.clone();
                    g[k] = (row[k] as isize + s) as usize;
                    let coef = rho * (side * s) as f64 / (4.0 * grid.dx(i) * grid.dx(k));
                    visit(&g, coef);
                }
            }
            dt * acc
        };
        let sub = tt_cross(&FnEvaluator(f), &vec![2; ct + nsub], cfg, None)?.tensor;
        let position = ct + grid.offsets()[i];
        let term = insert_register(&sub, position, grid.cores[i], face.upper as usize)?;
        total = total.add(&term)?.round(cfg.truncation)?;
    }
    total.round(cfg.truncation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tt::DENSE_LIMIT;

    fn market2() -> MarketParams {
        MarketParams {
            spots: vec![10.0, 12.0],
            strike: 20.0,
            rate: 0.05,
            vols: vec![0.25, 0.15],
            correlation: vec![vec![1.0, 0.4], vec![0.4, 1.0]],
            maturity: 1.0,
        }
    }

    fn exact_cross() -> CrossConfig {
        CrossConfig {
            max_rank: 64,
            sweeps: 6,
            truncation: TruncationPolicy::relative(1e-13),
            ..CrossConfig::default()
        }
    }

    /// Dense generator with zero padding, assembled entry by entry.
    fn dense_generator(mkt: &MarketParams, grid: &GridSpec) -> Array2<f64> {
        let d = grid.dim();
        let n: usize = (0..d).map(|k| grid.points(k)).product();
        let mut a = Array2::zeros((n, n));
        let sizes: Vec<usize> = (0..d).map(|k| grid.points(k)).collect();
        let flat = |idx: &[isize]| -> Option<usize> {
            let mut f = 0usize;
            for (k, &j) in idx.iter().enumerate() {
                if j < 0 || j >= sizes[k] as isize {
                    return None;
                }
                f = f * sizes[k] + j as usize;
            }
            Some(f)
        };
        for row in 0..n {
            let mut idx = vec![0isize; d];
            let mut rem = row;
            for k in (0..d).rev() {
                idx[k] = (rem % sizes[k]) as isize;
                rem /= sizes[k];
            }
            let mut add = |off: &[(usize, isize)], v: f64| {
                let mut j = idx.clone();
                for &(k, s) in off {
                    j[k] += s;
                }
                if let Some(col) = flat(&j) {
                    a[[row, col]] += v;
                }
            };
            add(&[], -mkt.rate);
            for i in 0..d {
                let dx = grid.dx(i);
                let s2 = mkt.vols[i] * mkt.vols[i];
                add(&[], -s2 / (dx * dx));
                add(&[(i, 1)], 0.5 * s2 / (dx * dx) + mkt.drift(i) / (2.0 * dx));
                add(&[(i, -1)], 0.5 * s2 / (dx * dx) - mkt.drift(i) / (2.0 * dx));
                for k in i + 1..d {
                    let c = mkt.correlation[i][k] * mkt.vols[i] * mkt.vols[k] / (4.0 * dx * grid.dx(k));
                    add(&[(i, 1), (k, 1)], c);
                    add(&[(i, 1), (k, -1)], -c);
                    add(&[(i, -1), (k, 1)], -c);
                    add(&[(i, -1), (k, -1)], c);
                }
            }
        }
        a
    }

    fn max_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn generator_matches_dense_assembly() {
        let m1 = MarketParams::single(65.0, 65.0, 0.08, 0.3, 0.25);
        let g1 = GridSpec::timestepping(vec![4], vec![3.0], vec![5.2], 8).unwrap();
        let l = spatial_operator(&m1, &g1).unwrap();
        assert!(max_rel(&l.to_dense().unwrap(), &dense_generator(&m1, &g1)) < 1e-12);
        assert_eq!(l.max_bond(), 3);

        let m2 = market2();
        for c in [2, 3, 4] {
            let g2 = GridSpec::timestepping(vec![c, c], vec![1.0, 1.5], vec![3.5, 3.2], 8).unwrap();
            let l = spatial_operator(&m2, &g2).unwrap();
            assert!(max_rel(&l.to_dense().unwrap(), &dense_generator(&m2, &g2)) < 1e-12, "c={}", c);
            assert!(l.max_bond() <= 7);
        }
    }

    #[test]
    fn generator_rank_bounds() {
        for d in 1..=5 {
            let mkt = MarketParams::reference_basket(d, 30.0).unwrap();
            let c = 4;
            let g = GridSpec::timestepping(vec![c; d], vec![1.0; d], vec![3.5; d], 4).unwrap();
            let l = spatial_operator(&mkt, &g).unwrap();
            assert!(l.max_bond() <= d * (d + 5) / 2, "d={} bond={}", d, l.max_bond());
            let a = timestepping_matrix(&l, 0.01).unwrap();
            assert!(a.max_bond() <= 1 + d * (d + 5) / 2);
        }
    }

    #[test]
    fn permuting_assets_permutes_the_operator() {
        let m = market2();
        let swapped = MarketParams {
            spots: vec![12.0, 10.0],
            vols: vec![0.15, 0.25],
            ..m.clone()
        };
        let g = GridSpec::timestepping(vec![3, 3], vec![1.0, 1.5], vec![3.5, 3.2], 4).unwrap();
        let gs = GridSpec::timestepping(vec![3, 3], vec![1.5, 1.0], vec![3.2, 3.5], 4).unwrap();
        let a = spatial_operator(&m, &g).unwrap().to_dense().unwrap();
        let b = spatial_operator(&swapped, &gs).unwrap().to_dense().unwrap();
        let p = |f: usize| (f % 8) * 8 + f / 8;
        let err = (0..64)
            .flat_map(|r| (0..64).map(move |c| (r, c)))
            .map(|(r, c)| (a[[r, c]] - b[[p(r), p(c)]]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9);
    }

    #[test]
    fn dirichlet_rows_are_identity() {
        let m = market2();
        let g = GridSpec::timestepping(vec![3, 3], vec![1.0, 1.5], vec![3.5, 3.2], 4).unwrap();
        let l = spatial_operator(&m, &g).unwrap();
        let mask = interior_mask(&g).unwrap();
        let a = dirichlet_step_matrix(&l, &mask, 0.1, 1.0).unwrap().to_dense().unwrap();
        let ld = l.to_dense().unwrap();
        let md = mask.to_dense().unwrap();
        for r in 0..64 {
            for c in 0..64 {
                let want = if r == c { 1.0 } else { 0.0 } - 0.1 * md[r] * ld[[r, c]];
                assert!((a[[r, c]] - want).abs() < 1e-9);
            }
        }
        let zero_dt = timestepping_matrix(&l, 0.0).unwrap().to_dense().unwrap();
        assert!(max_rel(&zero_dt, &Array2::eye(64)) < 1e-14);
    }

    #[test]
    fn eliminated_step_solves_the_dirichlet_system() {
        let m = market2();
        let g = GridSpec::timestepping(vec![3, 3], vec![1.0, 1.5], vec![3.5, 3.2], 4).unwrap();
        let l = spatial_operator(&m, &g).unwrap();
        let mask = interior_mask(&g).unwrap();
        let full = dirichlet_step_matrix(&l, &mask, 0.3, 0.5).unwrap().to_dense().unwrap();
        let (a, c) = eliminated_step_matrices(&l, &mask, 0.3, 0.5).unwrap();
        let b = ndarray::Array1::from_iter((0..64).map(|i| ((i * 7) % 11) as f64 - 4.0));
        let want = crate::tt::linalg::solve_dense(&full, &b).unwrap();
        let g = &b * &mask.to_dense().unwrap().mapv(|m| 1.0 - m);
        let rb = &b + &c.to_dense().unwrap().dot(&g);
        let got = crate::tt::linalg::solve_dense(&a.to_dense().unwrap(), &rb).unwrap();
        let err = (&got - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10 * want.iter().fold(1.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn spacetime_operator_structure() {
        let m = MarketParams::single(65.0, 65.0, 0.08, 0.3, 0.25);
        let g = GridSpec::spacetime(vec![3], vec![3.0], vec![5.2], 3).unwrap();
        let a = spacetime_matrix(&m, &g).unwrap();
        assert_eq!(a.max_bond(), 4);
        let dense = a.to_dense().unwrap();
        let dt = 0.25 / 8.0;
        let dx = g.dx(0);
        let al = 0.045 / (dx * dx);
        let be = m.drift(0) / (2.0 * dx);
        let c0 = 1.0 + 2.0 * al * dt + m.rate * dt;
        let cp = -dt * (al + be);
        let cm = -dt * (al - be);
        for t in 0..8 {
            for j in 0..8 {
                let r = t * 8 + j;
                assert!((dense[[r, r]] - c0).abs() < 1e-10);
                if j + 1 < 8 {
                    assert!((dense[[r, r + 1]] - cp).abs() < 1e-10);
                    assert!((dense[[r + 1, r]] - cm).abs() < 1e-10);
                }
                if t > 0 {
                    assert!((dense[[r, r - 8]] + 1.0).abs() < 1e-12);
                }
            }
        }
        let row_nnz = (0..64).map(|r| dense.row(r).iter().filter(|v| v.abs() > 1e-12).count()).max();
        assert_eq!(row_nnz, Some(4));

        let m2 = market2();
        let g2 = GridSpec::spacetime(vec![3, 3], vec![1.0, 1.5], vec![3.5, 3.2], 3).unwrap();
        assert!(spacetime_matrix(&m2, &g2).unwrap().max_bond() <= 11);
    }

    #[test]
    fn payoff_matches_direct_evaluation() {
        let m = market2();
        let g = GridSpec::timestepping(vec![5, 5], vec![1.0, 1.5], vec![3.5, 3.2], 4).unwrap();
        let c = ContractSpec::european(PayoffKind::BasketPut);
        let out = payoff_qtt(&c, &g, &m, &exact_cross()).unwrap();
        let dense = out.tensor.to_dense().unwrap();
        let mut err = 0.0f64;
        for j0 in 0..32 {
            for j1 in 0..32 {
                let s = [g.node(0, j0).exp(), g.node(1, j1).exp()];
                let want = (20.0 - s[0] - s[1]).max(0.0);
                err = err.max((dense[j0 * 32 + j1] - want).abs());
            }
        }
        assert!(err < 1e-6, "err={}", err);

        // deep out of the money everywhere
        let far = GridSpec::timestepping(vec![3, 3], vec![4.0, 4.0], vec![5.0, 5.0], 4).unwrap();
        let z = payoff_qtt(&c, &far, &m, &exact_cross()).unwrap().tensor;
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn boundaries_overwrite_faces_only() {
        let m = market2();
        let g = GridSpec::timestepping(vec![3, 3], vec![1.0, 1.5], vec![3.5, 3.2], 4).unwrap();
        let c = ContractSpec::european(PayoffKind::BasketPut);
        let w = QttVector::ones(&g.spatial_modes()).scale(7.0);
        let tau = 0.4;
        let out = impose_boundaries(&w, tau, &c, &g, &m, &exact_cross()).unwrap().to_dense().unwrap();
        let disc = 20.0 * (-0.05f64 * tau).exp();
        for j0 in 0..8 {
            for j1 in 0..8 {
                let v = out[j0 * 8 + j1];
                let s = [g.node(0, j0).exp(), g.node(1, j1).exp()];
                let want = if j0 == 0 || j1 == 0 {
                    (disc - s[0] - s[1]).max(0.0)
                } else if j0 == 7 || j1 == 7 {
                    0.0
                } else {
                    7.0
                };
                assert!((v - want).abs() < 1e-8, "({},{}) {} vs {}", j0, j1, v, want);
            }
        }
        // idempotent at fixed tau
        let again = impose_boundaries(&QttVector::tt_svd(out.as_slice().unwrap(), &g.spatial_modes(), TruncationPolicy::exact()).unwrap(), tau, &c, &g, &m, &exact_cross())
            .unwrap()
            .to_dense()
            .unwrap();
        assert!(again.iter().zip(out.iter()).all(|(a, b)| (a - b).abs() < 1e-8));
    }

    #[test]
    fn worst_of_lower_faces_are_flat() {
        let m = market2();
        let g = GridSpec::timestepping(vec![3, 3], vec![1.0, 1.5], vec![3.5, 3.2], 4).unwrap();
        let c = ContractSpec::european(PayoffKind::WorstOfPut);
        let asm = BoundaryAssembler::new(&c, &g, &m, &exact_cross()).unwrap();
        let b = asm.boundary(0.0).unwrap();
        assert!(b.max_bond() <= 3);
        let d = b.to_dense().unwrap();
        assert!((d[3] - (20.0 - 1.0f64.exp())).abs() < 1e-10);
        assert!((d[3 * 8] - (20.0 - 1.5f64.exp())).abs() < 1e-10);
        assert!(d[7 * 8 + 3].abs() < 1e-12);
    }

    /// Dense space-time right-hand side for one asset.
    #[test]
    fn spacetime_rhs_one_asset() {
        let m = MarketParams::single(65.0, 65.0, 0.08, 0.3, 0.25);
        let g = GridSpec::spacetime(vec![3], vec![(65.0f64 / 3.0).ln()], vec![(195.0f64).ln()], 3).unwrap();
        let call = ContractSpec::european(PayoffKind::BasketCall).with_call_method(CallMethod::Direct);
        let b = spacetime_rhs(&call, &g, &m, &exact_cross()).unwrap().to_dense().unwrap();
        let dt = 0.25 / 8.0;
        let dx = g.dx(0);
        let al = 0.045 / (dx * dx);
        let be = m.drift(0) / (2.0 * dx);
        let cp = -dt * (al + be);
        for t in 0..8 {
            let tau = (t + 1) as f64 * dt;
            for j in 0..8 {
                let mut want = 0.0;
                if t == 0 {
                    want += (g.node(0, j).exp() - 65.0).max(0.0);
                }
                if j == 7 {
                    want -= cp * (195.0 - 65.0 * (-0.08 * tau).exp());
                }
                assert!((b[t * 8 + j] - want).abs() < 1e-6 * want.abs().max(1.0), "t={} j={}", t, j);
            }
        }
        let put = ContractSpec::european(PayoffKind::WorstOfPut);
        let am = ContractSpec::new(PayoffKind::BasketPut, Exercise::American);
        assert!(spacetime_rhs(&am, &g, &m, &exact_cross()).is_err());
        assert!(spacetime_rhs(&put, &g, &m, &exact_cross()).is_ok());
    }

    #[test]
    fn validation_names_the_field() {
        let mut m = market2();
        m.correlation = vec![vec![1.0, 0.99], vec![0.2, 1.0]];
        let e = m.validate().unwrap_err().to_string();
        assert!(e.contains("correlation"));
        m.correlation = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(m.validate().is_err());
        let _ = DENSE_LIMIT;
    }
}
