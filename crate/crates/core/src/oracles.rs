//! Reference values independent of the tensor machinery: closed-form
//! Black-Scholes, Gauss-Hermite quadrature for baskets and worst-of puts,
//! and a sparse finite-difference solver on the same discretization as the
//! QTT pricer.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::assembly::{face_value, owning_face, ContractSpec, Exercise, GridSpec, Layout, MarketParams, PayoffKind, TimeGrid};
use crate::error::{QttError, Result};
use crate::tt::linalg::{symmetric_eigen, SparseLu};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    Call,
    Put,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BsQuote {
    pub price: f64,
    pub delta: f64,
    pub gamma: f64,
}

/// Black-Scholes price, delta and gamma of a European option.
pub fn bs_closed_form(s: f64, k: f64, r: f64, sigma: f64, t: f64, kind: OptionKind) -> BsQuote {
    let n = Normal::standard();
    let sq = sigma * t.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * t) / sq;
    let d2 = d1 - sq;
    let disc = k * (-r * t).exp();
    let gamma = n.pdf(d1) / (s * sq);
    match kind {
        OptionKind::Call => BsQuote {
            price: s * n.cdf(d1) - disc * n.cdf(d2),
            delta: n.cdf(d1),
            gamma,
        },
        OptionKind::Put => BsQuote {
            price: disc * n.cdf(-d2) - s * n.cdf(-d1),
            delta: n.cdf(d1) - 1.0,
            gamma,
        },
    }
}

/// Gauss-Hermite order per dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub order: usize,
}

impl QuadratureConfig {
    /// 32 nodes per dimension up to three assets, 16 beyond.
    pub fn default_for(d: usize) -> Self {
        QuadratureConfig {
            order: if d <= 3 { 32 } else { 16 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub price: f64,
    pub order: usize,
    /// |p(n + 4) - p(n)| / |p(n + 4)|
    pub relative_change: f64,
}

/// Nodes and weights for `int f(x) exp(-x^2) dx` (Golub-Welsch).
pub fn hermite_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(QttError::Invalid("quadrature order must be >= 1".into()));
    }
    let jac = Array2::from_shape_fn((n, n), |(i, j)| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let (vals, vecs) = symmetric_eigen(&jac)?;
    let root_pi = std::f64::consts::PI.sqrt();
    let w = (0..n).map(|k| root_pi * vecs[[0, k]] * vecs[[0, k]]).collect();
    Ok((vals.to_vec(), w))
}

fn quadrature_price(mkt: &MarketParams, contract: &ContractSpec, order: usize) -> Result<f64> {
    let d = mkt.dim();
    let chol = mkt.correlation_cholesky()?;
    let (x, w) = hermite_rule(order)?;
    let t = mkt.maturity;
    let weights = contract.weights(d);
    let z: Vec<f64> = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
    let wn: Vec<f64> = w.iter().map(|v| v / std::f64::consts::PI.sqrt()).collect();
    let drift: Vec<f64> = (0..d).map(|i| mkt.spots[i].ln() + mkt.drift(i) * t).collect();
    let vol: Vec<f64> = (0..d).map(|i| mkt.vols[i] * t.sqrt()).collect();
    // The last asset is integrated in closed form, the others on the tensor rule.
    let h = d - 1;
    let b = vol[h] * chol[[h, h]];
    let mut idx = vec![0usize; h];
    let mut s = vec![0.0; h];
    let mut acc = 0.0;
    loop {
        let mut weight = 1.0;
        for k in 0..h {
            weight *= wn[idx[k]];
        }
        for i in 0..h {
            let mut y = 0.0;
            for k in 0..=i {
                y += chol[[i, k]] * z[idx[k]];
            }
            s[i] = (drift[i] + vol[i] * y).exp();
        }
        let a = drift[h] + vol[h] * (0..h).map(|k| chol[[h, k]] * z[idx[k]]).sum::<f64>();
        acc += weight * last_asset_expectation(contract.kind, &s, mkt.strike, &weights, a, b);
        let mut k = h;
        loop {
            if k == 0 {
                return Ok(acc * mkt.discount(t));
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < order {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// `E[payoff]` over the last asset `S = exp(a + b Z)` with the other prices
/// fixed at `head`.
fn last_asset_expectation(kind: PayoffKind, head: &[f64], strike: f64, weights: &[f64], a: f64, b: f64) -> f64 {
    let n = Normal::standard();
    let mean = (a + 0.5 * b * b).exp();
    let z = |level: f64| (level.ln() - a) / b;
    let wl = weights[head.len()];
    let rest = strike - head.iter().zip(weights).map(|(s, w)| s * w).sum::<f64>();
    match kind {
        PayoffKind::BasketPut if rest <= 0.0 => 0.0,
        PayoffKind::BasketPut => {
            let zk = z(rest / wl);
            rest * n.cdf(zk) - wl * mean * n.cdf(zk - b)
        }
        PayoffKind::BasketCall if rest <= 0.0 => wl * mean - rest,
        PayoffKind::BasketCall => {
            let zk = z(rest / wl);
            wl * mean * n.cdf(b - zk) - rest * n.cdf(-zk)
        }
        PayoffKind::WorstOfPut => {
            let m = head.iter().cloned().fold(f64::INFINITY, f64::min);
            // S below min(m, K) pays K - S; S above m pays (K - m)^+.
            let zu = z(m.min(strike));
            let below = strike * n.cdf(zu) - mean * n.cdf(zu - b);
            let above = if m < strike { (strike - m) * n.cdf(-z(m)) } else { 0.0 };
            below + above
        }
    }
}

/// European basket or worst-of price by tensor Gauss-Hermite quadrature
/// after a Cholesky change of variables.
pub fn gauss_hermite_basket(mkt: &MarketParams, contract: &ContractSpec, quad: QuadratureConfig) -> Result<QuadratureResult> {
    mkt.validate()?;
    contract.validate(mkt.dim())?;
    if contract.exercise != Exercise::European {
        return Err(QttError::Invalid("quadrature prices european contracts only".into()));
    }
    if mkt.dim() > 5 {
        return Err(QttError::Invalid("quadrature supports at most 5 assets".into()));
    }
    let p = quadrature_price(mkt, contract, quad.order)?;
    let q = quadrature_price(mkt, contract, quad.order + 4)?;
    Ok(QuadratureResult {
        price: q,
        order: quad.order + 4,
        relative_change: (q - p).abs() / q.abs().max(f64::MIN_POSITIVE),
    })
}

/// Largest grid the sparse reference solver accepts.
pub const DENSE_FD_LIMIT: usize = 1 << 16;

/// Full-grid solution of the time-stepping scheme.
#[derive(Clone, Debug)]
pub struct DenseSurface {
    pub grid: GridSpec,
    /// Values at `tau = T`, flattened with dimension 0 slowest.
    pub values: Array1<f64>,
    /// Smallest `V - payoff` seen after any projection (American only).
    pub min_exercise_margin: Option<f64>,
}

impl DenseSurface {
    pub fn at(&self, js: &[usize]) -> f64 {
        let mut f = 0;
        for (k, &j) in js.iter().enumerate() {
            f = f * self.grid.points(k) + j;
        }
        self.values[f]
    }
}

fn unflatten(mut f: usize, sizes: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; sizes.len()];
    for k in (0..sizes.len()).rev() {
        idx[k] = f % sizes[k];
        f /= sizes[k];
    }
    idx
}

/// Sparse generator with zero padding, as `(row, col, value)` entries.
pub fn generator_entries(mkt: &MarketParams, grid: &GridSpec) -> Vec<(usize, usize, f64)> {
    let d = grid.dim();
    let sizes: Vec<usize> = (0..d).map(|k| grid.points(k)).collect();
    let n: usize = sizes.iter().product();
    let mut out = Vec::new();
    for row in 0..n {
        let idx = unflatten(row, &sizes);
        let mut push = |off: &[(usize, isize)], v: f64| {
            let mut f = 0usize;
            for k in 0..d {
                let j = idx[k] as isize + off.iter().filter(|o| o.0 == k).map(|o| o.1).sum::<isize>();
                if j < 0 || j >= sizes[k] as isize {
                    return;
                }
                f = f * sizes[k] + j as usize;
            }
            out.push((row, f, v));
        };
        let mut diag = -mkt.rate;
        for i in 0..d {
            let dx = grid.dx(i);
            let s2 = mkt.vols[i] * mkt.vols[i];
            diag -= s2 / (dx * dx);
            push(&[(i, 1)], 0.5 * s2 / (dx * dx) + mkt.drift(i) / (2.0 * dx));
            push(&[(i, -1)], 0.5 * s2 / (dx * dx) - mkt.drift(i) / (2.0 * dx));
            for k in i + 1..d {
                let c = mkt.correlation[i][k] * mkt.vols[i] * mkt.vols[k] / (4.0 * dx * grid.dx(k));
                push(&[(i, 1), (k, 1)], c);
                push(&[(i, 1), (k, -1)], -c);
                push(&[(i, -1), (k, 1)], -c);
                push(&[(i, -1), (k, -1)], c);
            }
        }
        push(&[], diag);
    }
    out
}

/// Theta-scheme time stepping on the full grid with Dirichlet rows, the
/// same scheme the QTT pricer runs. American contracts take the exact
/// pointwise maximum with the payoff after each step.
pub fn dense_fd_solve(mkt: &MarketParams, grid: &GridSpec, contract: &ContractSpec, theta: f64) -> Result<DenseSurface> {
    mkt.validate()?;
    grid.validate()?;
    contract.validate(grid.dim())?;
    let steps = match (grid.time, grid.layout) {
        (TimeGrid::Steps { count }, Layout::Faces) => count,
        _ => return Err(QttError::Invalid("reference solver needs a time-stepping grid".into())),
    };
    if mkt.dim() != grid.dim() {
        return Err(QttError::Invalid("market and grid dimensions differ".into()));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(QttError::Invalid("theta must lie in [0, 1]".into()));
    }
    let d = grid.dim();
    let sizes: Vec<usize> = (0..d).map(|k| grid.points(k)).collect();
    let n: usize = sizes.iter().product();
    if n > DENSE_FD_LIMIT {
        return Err(QttError::DenseTooLarge(n));
    }
    let solved = contract.solved_contract();
    let weights = solved.weights(d);
    let dt = grid.dt(mkt.maturity);
    let last: Vec<usize> = sizes.iter().map(|s| s - 1).collect();
    let nodes: Vec<Vec<usize>> = (0..n).map(|f| unflatten(f, &sizes)).collect();
    let xs: Vec<Vec<f64>> = nodes
        .iter()
        .map(|idx| idx.iter().enumerate().map(|(k, &j)| grid.node(k, j)).collect())
        .collect();
    let owner: Vec<_> = nodes.iter().map(|idx| owning_face(idx, &last)).collect();
    let payoff: Array1<f64> = xs
        .iter()
        .map(|x| {
            let s: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            solved.payoff(&s, mkt.strike, &weights)
        })
        .collect();

    let l = generator_entries(mkt, grid);
    let mut lhs: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
    lhs.extend(
        l.iter()
            .filter(|(r, _, _)| owner[*r].is_none())
            .map(|&(r, c, v)| (r, c, -theta * dt * v)),
    );
    let lu = SparseLu::new(n, &lhs)?;

    let mut w = payoff.clone();
    let mut margin: Option<f64> = None;
    for step in 0..steps {
        let tau = (step + 1) as f64 * dt;
        let mut b = Array1::zeros(n);
        for f in 0..n {
            if owner[f].is_none() {
                b[f] = w[f];
            }
        }
        if theta < 1.0 {
            for &(r, c, v) in &l {
                if owner[r].is_none() {
                    b[r] += (1.0 - theta) * dt * v * w[c];
                }
            }
        }
        for f in 0..n {
            if let Some(face) = owner[f] {
                b[f] = face_value(&solved, mkt, &weights, tau, &xs[f], face);
            }
        }
        w = lu.solve(&b)?;
        if solved.exercise == Exercise::American {
            w.zip_mut_with(&payoff, |a, p| *a = a.max(*p));
            let m = w.iter().zip(payoff.iter()).map(|(a, p)| a - p).fold(f64::INFINITY, f64::min);
            margin = Some(margin.map_or(m, |o: f64| o.min(m)));
        }
    }
    if contract.uses_parity() {
        let disc = mkt.strike * mkt.discount(mkt.maturity);
        for f in 0..n {
            let basket: f64 = xs[f].iter().zip(&weights).map(|(x, w)| w * x.exp()).sum();
            w[f] += basket - disc;
        }
    }
    Ok(DenseSurface {
        grid: grid.clone(),
        values: w,
        min_exercise_margin: margin,
    })
}

/// Reference values frozen from the oracles above, consumed by the tests.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Fixtures {
    pub version: u32,
    pub entries: Vec<FixtureEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub name: String,
    pub kind: PayoffKind,
    pub spots: Vec<f64>,
    pub strike: f64,
    pub price: f64,
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default)]
    pub relative_change: Option<f64>,
}

pub const FIXTURE_VERSION: u32 = 1;
const FIXTURE_JSON: &str = include_str!("../fixtures/reference_v1.json");

pub fn fixtures() -> Result<Fixtures> {
    let f: Fixtures = serde_json::from_str(FIXTURE_JSON).map_err(|e| QttError::Format(e.to_string()))?;
    if f.version != FIXTURE_VERSION {
        return Err(QttError::Format(format!(
            "fixture version {} does not match {}",
            f.version, FIXTURE_VERSION
        )));
    }
    Ok(f)
}

pub fn fixture(name: &str) -> Result<FixtureEntry> {
    fixtures()?
        .entries
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| QttError::Invalid(format!("no fixture named {}", name)))
}
