//! Noisy measurements with Laplace noise scaled by the configuration's
//! validity constant, tracked in a privacy ledger.

use anyhow::Result;
use convlab::dp::{measure, MeasureOptions, PrivacyLedger, PrivacyParams};
use convlab::events::canonical_fixture_fig2;
use convlab::queries::{evaluate, QuerySpec, SlicePredicate};
use convlab::validity::classify;
use convlab::{Configuration, EnforcementPoint, Relation, Rule};

fn main() -> Result<()> {
    let d = canonical_fixture_fig2();
    let ledger = PrivacyLedger::new();
    let by_advertiser = vec![SlicePredicate::new("advertiser", "A1"), SlicePredicate::new("advertiser", "A2")];
    let queries = [
        QuerySpec::sliced_count(by_advertiser.clone()),
        QuerySpec::capped_value_sum(100.0, by_advertiser),
        QuerySpec::distinct_users(),
    ];

    let cfg = Configuration::new(Rule::FirstTouch, Relation::Impression, EnforcementPoint::Post, 2)?;
    let class = classify(&cfg.rule, cfg.relation, cfg.enforcement);
    let c0 = class.c0().expect("FTA per impression post-attribution is valid");
    println!("{} is {class}", cfg.describe());

    for (k, q) in queries.iter().enumerate() {
        let exact = evaluate(q, &convlab::bounding::run(&d, &cfg)?, &d)?;
        let m = measure(&d, &cfg, q, &PrivacyParams::new(0.5, c0, 42)?, MeasureOptions::default())?;
        let total = ledger.record(format!("query {k}"), m.epsilon_spent)?;
        println!(
            "{:?}: exact {exact:?} noisy {:?} (scale {}, fingerprint {}, epsilon so far {total})",
            q.kind, m.values, m.noise_scale, m.config_fingerprint
        );
    }

    // Invalid configurations are refused unless explicitly overridden.
    let bad = Configuration::new(Rule::Uniform, Relation::UserPublisher, EnforcementPoint::Post, 1)?;
    let err = measure(&d, &bad, &queries[0], &PrivacyParams::new(1.0, 1.0, 0)?, MeasureOptions::default());
    println!("\n{}", err.unwrap_err());
    Ok(())
}
