//! Credit division across a four-impression path under the built-in rules.
//!
//! ```text
//! cargo run --example table1_credit
//! ```

use anyhow::Result;
use convlab::events::canonical_credit_path;
use convlab::{Impression, Rule};

fn main() -> Result<()> {
    let d = canonical_credit_path();
    let conversion = &d.conversions[0];
    let path: Vec<&Impression> = d.impressions.iter().collect();

    print!("{:<20}", "rule");
    for i in &path {
        print!("{:>12}", i.publisher.as_str());
    }
    println!();
    for rule in Rule::builtins() {
        let w = rule.attribute(&path, conversion)?;
        print!("{:<20}", rule.label());
        for x in w {
            print!("{x:>12.4}");
        }
        println!();
    }
    Ok(())
}
