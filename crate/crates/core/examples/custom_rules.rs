//! Building rules from JSON specs: a positional table, an engagement-weighted
//! priority rule, and a caller-supplied positional function.

use anyhow::Result;
use convlab::attribution::{make_rule, AttributionRuleSpec, EngagementWeights, Positional, Priority};
use convlab::events::{canonical_credit_path, Engagement};
use convlab::{Impression, Rule};

fn main() -> Result<()> {
    let d = canonical_credit_path();
    let c = &d.conversions[0];
    let path: Vec<&Impression> = d.impressions.iter().collect();

    let spec: AttributionRuleSpec = serde_json::from_str(
        r#"{"rule": "POS", "vectors": {"4": [0.1, 0.2, 0.3, 0.4]}}"#,
    )?;
    let table = make_rule(&spec)?;
    println!("{:<28} {:?}", table.label(), table.attribute(&path, c)?);

    // Clicks count three times as much as views.
    let ipa = Rule::ImpressionPriority(Priority::Engagement(EngagementWeights { click: 3.0, view: 1.0 }));
    println!("{:<28} {:?}", ipa.label(), ipa.attribute(&path, c)?);
    let views = path.iter().filter(|i| i.engagement == Engagement::View).count();
    println!("  ({views} view on the path)");

    // Half of the credit to the last touch, the rest spread evenly.
    let tail_heavy = Rule::Positional(Positional::custom(|m| {
        let mut w = vec![0.5 / m as f64; m];
        w[m - 1] += 0.5;
        w
    }));
    println!("{:<28} {:?}", tail_heavy.label(), tail_heavy.attribute(&path, c)?);
    println!("  probed shape: {:?}", tail_heavy.shape());

    let broken: AttributionRuleSpec = serde_json::from_str(r#"{"rule": "EXP", "half_life": -1}"#)?;
    println!("rejected: {}", make_rule(&broken).unwrap_err());
    Ok(())
}
