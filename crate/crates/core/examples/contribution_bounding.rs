//! The three bounding modes on the two-advertiser fixture, with LTA and a
//! contribution bound of 2.

use anyhow::Result;
use convlab::bounding::run;
use convlab::events::canonical_fixture_fig2;
use convlab::{AttributedDataset, Configuration, EnforcementPoint, Relation, Rule};

fn show(a: &AttributedDataset) -> String {
    if a.is_empty() {
        return "Empty".into();
    }
    let pairs: Vec<String> = a.iter().map(|(i, c, w)| format!("({i}, {c}; {w})")).collect();
    pairs.join(" ")
}

fn main() -> Result<()> {
    let d = canonical_fixture_fig2();
    let none = Configuration::new(Rule::LastTouch, Relation::Conversion, EnforcementPoint::None, 1)?;
    println!("{:<48} {}", none.describe(), show(&run(&d, &none)?));
    for enforcement in [EnforcementPoint::Post, EnforcementPoint::Pre, EnforcementPoint::EventAdmission] {
        for relation in Relation::SCOPED {
            let cfg = Configuration::new(Rule::LastTouch, relation, enforcement, 2)?;
            let label = format!("{enforcement} / {relation}");
            println!("{label:<48} {}", show(&run(&d, &cfg)?));
        }
    }

    // Multi-touch weights share the budget fractionally.
    let uni = Configuration::new(Rule::Uniform, Relation::Impression, EnforcementPoint::Post, 1)?;
    println!("\n{}\n{}", uni.describe(), run(&d, &uni)?.to_jsonl());
    Ok(())
}
