//! Regenerates `fixtures/reference_v1.json` from the oracles.
//!
//! cargo run --release -p qttbs-core --example gen_fixtures > crates/core/fixtures/reference_v1.json

use qttbs_core::assembly::{ContractSpec, MarketParams, PayoffKind};
use qttbs_core::oracles::{bs_closed_form, gauss_hermite_basket, FixtureEntry, Fixtures, OptionKind, QuadratureConfig, FIXTURE_VERSION};

fn quad(name: &str, kind: PayoffKind, d: usize, strike: f64, scale: f64, order: usize) -> FixtureEntry {
    let mut mkt = MarketParams::reference_basket(d, strike).unwrap();
    for s in &mut mkt.spots {
        *s *= scale;
    }
    let q = gauss_hermite_basket(&mkt, &ContractSpec::european(kind), QuadratureConfig { order }).unwrap();
    eprintln!("{:<28} {:>12.8} order {} change {:.2e}", name, q.price, q.order, q.relative_change);
    FixtureEntry {
        name: name.into(),
        kind,
        spots: mkt.spots.clone(),
        strike,
        price: q.price,
        order: Some(q.order),
        relative_change: Some(q.relative_change),
    }
}

fn main() {
    let call = bs_closed_form(65.0, 65.0, 0.08, 0.3, 0.25, OptionKind::Call);
    let mut entries = vec![FixtureEntry {
        name: "bs_call_k65".into(),
        kind: PayoffKind::BasketCall,
        spots: vec![65.0],
        strike: 65.0,
        price: call.price,
        order: None,
        relative_change: None,
    }];
    let put = PayoffKind::BasketPut;
    let wo = PayoffKind::WorstOfPut;
    entries.push(quad("basket_put_d3_k34", put, 3, 34.0, 1.0, 96));
    entries.push(quad("basket_put_d4_k47", put, 4, 47.0, 1.0, 48));
    entries.push(quad("basket_put_d5_k62", put, 5, 62.0, 1.0, 28));
    entries.push(quad("basket_put_d3_k33", put, 3, 33.0, 1.0, 96));
    entries.push(quad("basket_put_d3_k33_down10", put, 3, 33.0, 0.9, 96));
    entries.push(quad("basket_put_d3_k33_up10", put, 3, 33.0, 1.1, 96));
    entries.push(quad("worstof_put_d3_k10", wo, 3, 10.0, 1.0, 200));
    entries.push(quad("worstof_put_d4_k10", wo, 4, 10.0, 1.0, 80));
    entries.push(quad("worstof_put_d5_k10", wo, 5, 10.0, 1.0, 44));
    let f = Fixtures {
        version: FIXTURE_VERSION,
        entries,
    };
    println!("{}", serde_json::to_string_pretty(&f).unwrap());
}
