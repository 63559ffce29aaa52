//! Adversarial adjacent pairs for invalid post-attribution configurations,
//! showing how the distance grows with the construction size `p`.

use anyhow::Result;
use convlab::validity::{construction_distance, CounterexampleId, CounterexampleKind, MultitouchBase};
use convlab::{Configuration, EnforcementPoint, Rule};

fn main() -> Result<()> {
    use CounterexampleKind as K;
    let cases = [
        (Rule::LastTouch, K::LtaUserPubAdv),
        (Rule::FirstTouch, K::AnyruleUserPub),
        (Rule::Uniform, K::UniImpression),
        (Rule::ExpDecay { half_life: 1.0 }, K::ExpImpression),
        (Rule::UShaped, K::UshapedImpression),
        (Rule::Uniform, K::MultitouchUserPubAdv(MultitouchBase::Uniform)),
    ];
    println!("{:<48} {:>8} {:>8} {:>8} {:>8}", "construction", "p=5", "p=10", "p=20", "p=40");
    for (rule, kind) in cases {
        let cfg = Configuration::new(rule, kind.relation(), EnforcementPoint::Post, 1)?;
        print!("{:<48}", format!("{kind} under {}", cfg.rule.label()));
        for p in [5, 10, 20, 40] {
            let (l1, _, _) = construction_distance(&cfg, CounterexampleId::new(kind, p))?;
            print!(" {l1:>8.4}");
        }
        println!();
    }

    let cfg = Configuration::new(Rule::Uniform, K::UniImpression.relation(), EnforcementPoint::Post, 1)?;
    let (_, d, d_prime) = construction_distance(&cfg, CounterexampleId::new(K::UniImpression, 3))?;
    println!("\nuni_impression p=3, D:\n{}D':\n{}", d.to_jsonl(), d_prime.to_jsonl());
    Ok(())
}
