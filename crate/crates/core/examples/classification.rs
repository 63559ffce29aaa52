//! Expected classification of every configuration, and an empirical check of
//! a few cells against random datasets and constructions.
//!
//! Pass a trial count to override the default of 200.

use anyhow::Result;
use convlab::validity::{check_validity, classify, table_rules, CheckOptions};
use convlab::{Configuration, EnforcementPoint, Relation};

fn main() -> Result<()> {
    let trials = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let rules = table_rules();
    for enforcement in [EnforcementPoint::Post, EnforcementPoint::Pre] {
        println!("[{enforcement}]");
        for relation in Relation::SCOPED {
            let row: Vec<String> = rules
                .iter()
                .map(|r| match classify(r, relation, enforcement).c0() {
                    Some(c0) => format!("+{c0}"),
                    None => "-".into(),
                })
                .collect();
            println!("  {:<28} {}", relation.as_str(), row.join(" "));
        }
    }

    let opts = CheckOptions { trials, ..CheckOptions::default() };
    for (rule, relation) in [(&rules[1], Relation::Impression), (&rules[2], Relation::Impression), (&rules[0], Relation::UserPublisher)] {
        let cfg = Configuration::new(rule.clone(), relation, EnforcementPoint::Post, 1)?;
        let c0 = classify(rule, relation, EnforcementPoint::Post).c0().unwrap_or(4.0);
        let report = check_validity(&cfg, c0, &opts)?;
        println!(
            "\n{} at C0={c0}: {:?}, max l1/r {:.4}",
            cfg.describe(),
            report.verdict,
            report.max_ratio
        );
        if let Some(w) = &report.witness {
            println!("  witness {:?} with l1 {:.4}", w.source, w.l1);
        }
    }
    Ok(())
}
