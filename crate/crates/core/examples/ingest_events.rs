//! Reads a JSON-lines event log (a path argument, or a small built-in log),
//! validates it and prints a summary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;

use anyhow::{Context, Result};
use convlab::events::{parse_events, parse_events_str, validate_dataset};

const SAMPLE: &str = r#"{"kind":"conversion","id":"c1","t":12,"user":"alice","advertiser":"shoes.example","conv_type":"purchase","value":80}
{"kind":"impression","id":"i1","t":3,"user":"alice","publisher":"news.example","advertiser":"shoes.example","engagement":"view","meta":{"campaign":"spring"}}
{"kind":"impression","id":"i2","t":9,"user":"alice","publisher":"blog.example","advertiser":"shoes.example","engagement":"click"}
{"kind":"conversion","id":"c2","t":20,"user":"bob","advertiser":"shoes.example","conv_type":"signup"}
"#;

fn main() -> Result<()> {
    let d = match std::env::args().nth(1) {
        Some(path) => {
            let file = File::open(&path).with_context(|| format!("opening {path}"))?;
            parse_events(BufReader::new(file)).with_context(|| format!("parsing {path}"))?
        }
        None => parse_events_str(SAMPLE)?,
    };
    let problems = validate_dataset(&d);
    println!(
        "{} impressions, {} conversions, {} problems",
        d.impressions.len(),
        d.conversions.len(),
        problems.len()
    );
    let mut per_publisher: BTreeMap<&str, usize> = BTreeMap::new();
    for i in &d.impressions {
        *per_publisher.entry(i.publisher.as_str()).or_default() += 1;
    }
    for (publisher, n) in per_publisher {
        println!("  {publisher}: {n}");
    }
    println!("\ncanonical form:\n{}", d.to_jsonl());
    Ok(())
}
