//! End-to-end acceptance checks. Each test prints one PASS/FAIL line with the
//! measured numbers, then asserts. They share one lock so their wall times
//! are not inflated by each other.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ndarray::Array2;

use qttbs::bench::{self, Overrides};
use qttbs_core::assembly::{
    spacetime_matrix, spatial_operator, CallMethod, ContractSpec, Exercise, GridSpec, MarketParams, PayoffKind,
};
use qttbs_core::build::{basis_qtt, eraser_mpo, exp_qtt, tridiagonal_mpo, v_left, v_right, BasisEnd, Interval};
use qttbs_core::cross::{validation_indices, CrossConfig};
use qttbs_core::engine::{default_domain, price_timestepping, query_price, PricingConfig};
use qttbs_core::oracles::{bs_closed_form, dense_fd_solve, fixture, gauss_hermite_basket, OptionKind, QuadratureConfig};
use qttbs_core::solve::SolveConfig;
use qttbs_core::TruncationPolicy;

static LOCK: Mutex<()> = Mutex::new(());

/// Prints the verdict line outside the test harness capture, then asserts.
fn verdict(n: usize, ok: bool, budget: Duration, start: Instant, detail: String) {
    let took = start.elapsed();
    let in_time = took <= budget;
    let pass = ok && in_time;
    let line = format!(
        "criterion {:>2} {}: {} ({:.1} s of {} s{})",
        n,
        if pass { "PASS" } else { "FAIL" },
        detail,
        took.as_secs_f64(),
        budget.as_secs(),
        if in_time { "" } else { ", over budget" }
    );
    let _ = writeln!(std::io::stderr(), "{}", line);
    assert!(pass, "{}", line);
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn tight_pricing() -> PricingConfig {
    let exact = TruncationPolicy::relative(1e-13);
    PricingConfig {
        rhs_truncation: exact,
        solution_truncation: exact,
        solve: SolveConfig {
            mals_truncation: exact,
            sweeps: 4,
            ..SolveConfig::default()
        },
        ..PricingConfig::default()
    }
}

fn tight_cross() -> CrossConfig {
    CrossConfig {
        max_rank: 64,
        sweeps: 6,
        truncation: TruncationPolicy::relative(1e-13),
        ..CrossConfig::default()
    }
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_01_construction_exactness() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut bonds_ok = true;
    for c in 2..=6 {
        let n = 1usize << c;
        let (a, b, g) = (-2.5, 1.25, 0.75);
        let t = tridiagonal_mpo(a, b, g, c).unwrap();
        let mut dense = Array2::zeros((n, n));
        for j in 0..n {
            dense[[j, j]] = a;
            if j + 1 < n {
                dense[[j, j + 1]] = b;
                dense[[j + 1, j]] = g;
            }
        }
        worst = worst.max(max_abs(&t.to_dense().unwrap(), &dense) / 2.5);
        bonds_ok &= t.bond_dims()[1..c].iter().all(|&r| r == 3);

        let iv = Interval::new(-1.0, 2.0).unwrap();
        let e = exp_qtt(0.7, iv, c).unwrap();
        bonds_ok &= e.max_bond() == 1;
        for (k, v) in e.to_dense().unwrap().iter().enumerate() {
            let want = (0.7 * (-1.0 + k as f64 * 3.0 / n as f64)).exp();
            worst = worst.max((v - want).abs() / want);
        }

        let (l, r) = (v_left(c).unwrap(), v_right(c).unwrap());
        bonds_ok &= l.bond_dims()[1..c].iter().all(|&b| b == 2) && r.bond_dims()[1..c].iter().all(|&b| b == 2);
        let (ld, rd) = (l.to_dense().unwrap(), r.to_dense().unwrap());
        for j in 0..n {
            worst = worst.max((ld[j] - if j == 0 { 0.0 } else { 1.0 }).abs());
            worst = worst.max((rd[j] - if j == n - 1 { 0.0 } else { 1.0 }).abs());
        }

        for (end, k) in [(BasisEnd::First, 0), (BasisEnd::Last, n - 1)] {
            let v = basis_qtt(end, c).unwrap();
            bonds_ok &= v.max_bond() == 1;
            for (j, x) in v.to_dense().unwrap().iter().enumerate() {
                worst = worst.max((x - if j == k { 1.0 } else { 0.0 }).abs());
            }
        }

        for d in 1..=2 {
            let e = eraser_mpo(d, c).unwrap().to_dense().unwrap();
            let total = n.pow(d as u32);
            for p in 0..total {
                let inside = (0..d).all(|k| {
                    let j = (p / n.pow((d - 1 - k) as u32)) % n;
                    j > 0 && j < n - 1
                });
                for q in 0..total {
                    let want = if p == q && inside { 1.0 } else { 0.0 };
                    worst = worst.max((e[[p, q]] - want).abs());
                }
            }
        }
    }
    verdict(
        1,
        worst <= 1e-12 && bonds_ok,
        secs(5),
        start,
        format!("max relative deviation {:.1e} <= 1e-12, bonds 3/1/2/1 exact: {}", worst, bonds_ok),
    );
}

#[test]
fn criterion_02_operator_rank_bounds() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut measured = Vec::new();
    let mut ok = true;
    for d in 1..=5usize {
        let m = MarketParams::reference_basket(d, 30.0).unwrap();
        let (lo, hi) = default_domain(&m, 5.0);
        let g = GridSpec::timestepping(vec![6; d], lo, hi, 8).unwrap();
        let b = spatial_operator(&m, &g).unwrap().max_bond();
        let bound = [3, 7, 12, 18, d * (d + 5) / 2][d - 1];
        ok &= b <= bound;
        measured.push(format!("L{}={}<={}", d, b, bound));
    }
    for d in 1..=2usize {
        let m = MarketParams::reference_basket(d, 30.0).unwrap();
        let (lo, hi) = default_domain(&m, 5.0);
        let g = GridSpec::spacetime(vec![5; d], lo, hi, 5).unwrap();
        let b = spacetime_matrix(&m, &g).unwrap().max_bond();
        ok &= if d == 1 { b == 4 } else { b <= 11 };
        measured.push(format!("A{}={}{}", d, b, if d == 1 { "==4" } else { "<=11" }));
    }
    verdict(2, ok, secs(30), start, measured.join(" "));
}

#[test]
fn criterion_03_dense_oracle_equivalence() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut pricing = tight_pricing();
    pricing.mals_steps = usize::MAX;
    let cases = [
        (MarketParams::single(65.0, 65.0, 0.08, 0.3, 0.25), 10usize, PayoffKind::BasketPut),
        (MarketParams::reference_basket(2, 21.0).unwrap(), 6, PayoffKind::BasketPut),
        (MarketParams::reference_basket(2, 10.0).unwrap(), 6, PayoffKind::WorstOfPut),
    ];
    for (m, c, kind) in cases {
        let d = m.dim();
        let (lo, hi) = default_domain(&m, 5.0);
        let g = GridSpec::timestepping(vec![c; d], lo, hi, 16).unwrap();
        let contract = ContractSpec::european(kind);
        let s = price_timestepping(&m, &g, &contract, &pricing, &tight_cross()).unwrap();
        let r = dense_fd_solve(&m, &g, &contract, 1.0).unwrap();
        let q = s.solution.to_dense().unwrap();
        worst = worst.max(q.iter().zip(r.values.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    verdict(3, worst <= 1e-8, secs(120), start, format!("max |qtt - dense| {:.2e} <= 1e-8", worst));
}

#[test]
fn criterion_04_timestepping_one_asset() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let o = Overrides::default();
    let (_, mean8, max8) = bench::ts_1d(8, 128, &o).unwrap();
    let (_, mean9, _) = bench::ts_1d(9, 256, &o).unwrap();
    verdict(
        4,
        mean8 <= 1e-3 && max8 <= 1e-2 && mean9 <= 5e-4,
        secs(120),
        start,
        format!(
            "(8, 128) mean {:.2e} <= 1e-3, max {:.2e} <= 1e-2; (9, 256) mean {:.2e} <= 5e-4",
            mean8, max8, mean9
        ),
    );
}

#[test]
fn criterion_05_spacetime_one_asset() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let o = Overrides::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for (total, bound) in [(12, 5e-3), (14, 2e-3), (16, 1e-3)] {
        let (_, mean, _) = bench::st_1d(total, &o).unwrap();
        ok &= mean <= bound;
        parts.push(format!("{} cores mean {:.2e} <= {:.0e}", total, mean, bound));
    }
    verdict(5, ok, secs(180), start, parts.join(", "));
}

#[test]
fn criterion_06_greeks_one_asset() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let e = bench::greeks_1d(10, &Overrides::default()).unwrap();
    let ratio = e.greeks_s / e.build_s;
    verdict(
        6,
        e.delta_mae <= 2.5e-3 && e.gamma_mae <= 1e-3 && ratio <= 0.05,
        secs(60),
        start,
        format!(
            "delta MAE {:.2e} <= 2.5e-3, gamma MAE {:.2e} <= 1e-3, greeks/build {:.3} <= 0.05",
            e.delta_mae, e.gamma_mae, ratio
        ),
    );
}

#[test]
fn criterion_07a_basket_three_assets() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let r = bench::basket_run(PayoffKind::BasketPut, Exercise::European, 3, 34.0, 8, bench::BASKET_STEPS, &Overrides::default())
        .unwrap();
    verdict(
        7,
        r.rel_error <= 0.02,
        secs(600),
        start,
        format!("d=3 K=34 c=8 price {:.5} vs {:.5}, rel error {:.2e} <= 2e-2", r.price, r.reference, r.rel_error),
    );
}

#[test]
fn criterion_07b_basket_four_assets() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let r = bench::basket_run(PayoffKind::BasketPut, Exercise::European, 4, 47.0, 7, bench::BASKET_STEPS, &Overrides::default())
        .unwrap();
    verdict(
        7,
        r.rel_error <= 0.03,
        secs(1800),
        start,
        format!("d=4 K=47 c=7 price {:.5} vs {:.5}, rel error {:.2e} <= 3e-2", r.price, r.reference, r.rel_error),
    );
}

#[test]
fn criterion_08_american_properties() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let strike = 21.0;
    let m = MarketParams::reference_basket(2, strike).unwrap();
    let (lo, hi) = default_domain(&m, 5.0);
    let g = GridSpec::timestepping(vec![6, 6], lo, hi, 32).unwrap();
    let pricing = PricingConfig {
        rhs_truncation: TruncationPolicy::relative(1e-10),
        solution_truncation: TruncationPolicy::relative(1e-10),
        ..tight_pricing()
    };
    let eur = price_timestepping(&m, &g, &ContractSpec::european(PayoffKind::BasketPut), &pricing, &tight_cross()).unwrap();
    let am = price_timestepping(
        &m,
        &g,
        &ContractSpec::new(PayoffKind::BasketPut, Exercise::American),
        &pricing,
        &tight_cross(),
    )
    .unwrap();
    let floor = -1e-6 * strike;
    let mut violations = 0;
    let mut gap = f64::INFINITY;
    for js in validation_indices(&[64, 64], 500, 11) {
        let diff = am.value_at(&js).unwrap() - eur.value_at(&js).unwrap();
        gap = gap.min(diff);
        if diff < floor {
            violations += 1;
        }
    }
    let margin = am.steps.iter().map(|s| s.exercise_margin.unwrap()).fold(f64::INFINITY, f64::min);

    let one = MarketParams::single(65.0, 65.0, 0.08, 0.3, 0.25);
    let g1 = GridSpec::timestepping(vec![8], vec![(65.0f64 / 3.0).ln()], vec![195.0f64.ln()], 64).unwrap();
    let put = ContractSpec::new(PayoffKind::BasketPut, Exercise::American);
    let q = price_timestepping(&one, &g1, &put, &tight_pricing(), &tight_cross()).unwrap();
    let r = dense_fd_solve(&one, &g1, &put, 1.0).unwrap();
    let qd = q.solution.to_dense().unwrap();
    let diff = qd.iter().zip(r.values.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = r.values.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let at_spot = query_price(&q, &[65.0]).unwrap().price;
    let ref_spot = qttbs_core::engine::interpolate(&g1, &[65.0], |js| Ok(r.at(js))).unwrap();
    let rel_spot = (at_spot - ref_spot).abs() / ref_spot;
    let rel_grid = diff / scale;
    verdict(
        8,
        violations == 0 && margin >= floor && rel_spot <= 5e-3 && rel_grid <= 5e-3,
        secs(300),
        start,
        format!(
            "american - european min {:.2e} with {} of 500 below -1e-6 K, exercise margin {:.2e}, 1-asset put vs dense rel {:.2e} at spot, {:.2e} over grid (<= 5e-3)",
            gap, violations, margin, rel_spot, rel_grid
        ),
    );
}

#[test]
fn criterion_09_rhs_rank_study() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (m, g, c) = bench::rank_study_setup(8).unwrap();
    let o = Overrides::default();
    let s = bench::rank_study(&m, &g, &c, &[4, 8, 12, 16], true, Some(bench::RANK_SAMPLES), &o).unwrap();
    let monotone = s.windows(2).all(|w| w[1].mse <= w[0].mse);
    let at12 = s[2].mse;
    let list: Vec<String> = s.iter().map(|x| format!("chi {} mse {:.2e}", x.cap, x.mse)).collect();
    verdict(
        9,
        monotone && at12 <= 2e-3,
        secs(300),
        start,
        format!("{}; monotone {}, chi 12 <= 2e-3", list.join(", "), monotone),
    );
}

#[test]
fn criterion_10_put_call_parity() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let m = MarketParams::single(65.0, 65.0, 0.08, 0.3, 0.25);
    let (lo, hi) = bench::one_asset_bounds();
    let g = GridSpec::timestepping(vec![8], lo, hi, 128).unwrap();
    let (p, x) = (PricingConfig::default(), CrossConfig::default());
    let call = ContractSpec::european(PayoffKind::BasketCall).with_call_method(CallMethod::Direct);
    let c = price_timestepping(&m, &g, &call, &p, &x).unwrap();
    let put = price_timestepping(&m, &g, &ContractSpec::european(PayoffKind::BasketPut), &p, &x).unwrap();
    let exact = |kind| move |s: &[f64]| bs_closed_form(s[0], 65.0, 0.08, 0.3, 0.25, kind).price;
    let (mc, _) = c.grid_errors(exact(OptionKind::Call)).unwrap();
    let (mp, _) = put.grid_errors(exact(OptionKind::Put)).unwrap();
    let bound = 2.0 * (mc + mp);
    let disc = 65.0 * (-0.08f64 * 0.25).exp();
    let mut worst = 0.0f64;
    for k in 0..100 {
        let s = 65.0 / 2.0 * 4.0f64.powf(k as f64 / 99.0);
        let cv = query_price(&c, &[s]).unwrap().price;
        let pv = query_price(&put, &[s]).unwrap().price;
        worst = worst.max((cv - pv - (s - disc)).abs());
    }
    verdict(
        10,
        worst <= bound,
        secs(60),
        start,
        format!("max parity gap over 100 spots in [K/2, 2K] {:.2e} <= {:.2e}", worst, bound),
    );
}

#[test]
fn criterion_11_repricing_shifted_spots() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    // The finer grid needs bond 40 to hold the surface to 1% away from the spot.
    let o = Overrides {
        pricing: Some(bench::capped_pricing(40)),
        ..Overrides::default()
    };
    let r = bench::basket_run(PayoffKind::BasketPut, Exercise::European, 3, 33.0, 10, bench::BASKET_STEPS, &o).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, f) in [("base", 1.0), ("down 10%", 0.9), ("up 10%", 1.1)] {
        let spots: Vec<f64> = [10.0, 11.0, 12.0].iter().map(|s| s * f).collect();
        let got = query_price(&r.surface, &spots).unwrap().price;
        let mut mkt = MarketParams::reference_basket(3, 33.0).unwrap();
        mkt.spots = spots;
        let want = gauss_hermite_basket(&mkt, &ContractSpec::european(PayoffKind::BasketPut), QuadratureConfig { order: 48 })
            .unwrap()
            .price;
        let rel = (got - want).abs() / want;
        ok &= rel <= 0.025;
        parts.push(format!("{} {:.4} vs {:.4} rel {:.2e}", name, got, want, rel));
    }
    verdict(11, ok, secs(900), start, format!("{} (each <= 2.5e-2)", parts.join(", ")));
}

#[test]
fn criterion_12_worst_of() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let o = Overrides::default();
    let r = bench::basket_run(PayoffKind::WorstOfPut, Exercise::European, 3, 10.0, 8, bench::BASKET_STEPS, &o).unwrap();
    let m = MarketParams::reference_basket(3, 10.0).unwrap();
    let (lo, hi) = default_domain(&m, 5.0);
    let g = GridSpec::timestepping(vec![8; 3], lo, hi, bench::BASKET_STEPS).unwrap();
    let s = bench::rank_study(&m, &g, &ContractSpec::european(PayoffKind::WorstOfPut), &[12, 24], false, None, &o).unwrap();
    let reference = fixture("worstof_put_d3_k10").unwrap().price;
    verdict(
        12,
        r.rel_error <= 0.02 && s[1].mse < s[0].mse,
        secs(600),
        start,
        format!(
            "price {:.5} vs {:.5} rel {:.2e} <= 2e-2; payoff mse chi 24 {:.2e} < chi 12 {:.2e}",
            r.price, reference, r.rel_error, s[1].mse, s[0].mse
        ),
    );
}
