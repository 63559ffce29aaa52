//! Exhaustive empirical sensitivity: every removal neighbour plus a pool of
//! addition candidates, reporting the neighbour that moves the output most.

use anyhow::Result;
use convlab::adjacency::{adjacency_units, sensitivity_report, NeighborPool};
use convlab::events::canonical_fixture_fig2;
use convlab::{Configuration, EnforcementPoint, Relation, Rule};

const POOL: &str = r#"{"kind":"impression","id":"x1","t":0,"user":"U","publisher":"P9","advertiser":"A1","engagement":"click","unit":"early"}
{"kind":"impression","id":"x2","t":4,"user":"U","publisher":"P8","advertiser":"A1","engagement":"view","unit":"middle"}
"#;

fn main() -> Result<()> {
    let d = canonical_fixture_fig2();
    let pool = NeighborPool::parse_str(POOL)?;
    for rule in [Rule::LastTouch, Rule::FirstTouch, Rule::Uniform] {
        let cfg = Configuration::new(rule, Relation::Impression, EnforcementPoint::Post, 2)?;
        let report = sensitivity_report(&d, &cfg, &pool)?;
        let worst = report.worst.as_ref().map(|w| w.kind.to_string()).unwrap_or_default();
        println!(
            "{:<48} sensitivity {:>6.3} over {} neighbours, worst: {worst}",
            cfg.describe(),
            report.value,
            report.neighbors
        );
    }

    println!("\nunits of the user x advertiser relation:");
    for unit in adjacency_units(&d, Relation::UserAdvertiser) {
        let ids: Vec<&str> = unit
            .impressions
            .iter()
            .map(|i| i.as_str())
            .chain(unit.conversions.iter().map(|c| c.as_str()))
            .collect();
        println!("  {} -> {}", unit.key, ids.join(" "));
    }
    Ok(())
}
