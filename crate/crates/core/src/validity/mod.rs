//! The validity lab: randomized checks of the `ℓ1 <= C0 * r` bound, the
//! adversarial constructions that break it, and the full classification
//! table.

pub mod classification;
pub mod constructions;
pub mod random;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::adjacency::{sensitivity_report, AdjacencyError};
use crate::attribution::{Positional, Priority, Rule, Shape};
use crate::bounding::{l1_distance, run, BoundingError, Configuration, EnforcementPoint, Relation};
use crate::events::Dataset;

pub use classification::{classify, Classification, InvalidityReason};
pub use constructions::{
    construct_counterexample, heaviest_publisher, CounterexampleId, CounterexampleKind,
    MultitouchBase,
};
pub use random::{addition_pool, random_dataset, SizeParams};

/// Slack on the `ℓ1 <= c0 * r` comparison.
pub const VIOLATION_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ValidityError {
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Bounding(#[from] BoundingError),
    #[error(transparent)]
    Adjacency(#[from] AdjacencyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ValidObserved,
    InvalidWitnessed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum WitnessSource {
    RandomTrial { trial: usize, neighbor: String },
    Construction { id: CounterexampleId },
}

/// An adjacent pair whose attributed outputs are `l1` apart.
#[derive(Debug, Clone)]
pub struct Witness {
    pub source: WitnessSource,
    pub d: Dataset,
    pub d_prime: Dataset,
    pub l1: f64,
}

/// Distance reached by one construction at the largest `p` evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstructionResult {
    pub id: CounterexampleId,
    pub l1: f64,
    pub exceeded: bool,
}

#[derive(Debug, Clone)]
pub struct ValidityReport {
    pub rule: String,
    pub relation: Relation,
    pub enforcement: EnforcementPoint,
    pub r: u32,
    pub verdict: Verdict,
    pub c0_claimed: f64,
    /// Largest observed ℓ1 divided by `r`, over random trials and
    /// constructions.
    pub max_ratio: f64,
    pub trials: usize,
    pub random_violations: usize,
    pub constructions: Vec<ConstructionResult>,
    pub witness: Option<Witness>,
}

impl ValidityReport {
    pub fn to_json(&self, witness_path: Option<&str>) -> serde_json::Value {
        json!({
            "rule": self.rule,
            "relation": self.relation,
            "enforcement": self.enforcement,
            "r": self.r,
            "verdict": self.verdict,
            "c0_claimed": self.c0_claimed,
            "max_ratio": self.max_ratio,
            "trials": self.trials,
            "random_violations": self.random_violations,
            "constructions": self.constructions,
            "witness": self.witness.as_ref().map(|w| json!({
                "source": w.source,
                "l1": w.l1,
                "path": witness_path,
            })),
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub trials: usize,
    pub size: SizeParams,
    pub seed: u64,
    /// Largest `p` tried for constructions.
    pub p_ceiling: usize,
    pub constructions: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            size: SizeParams::default(),
            seed: 0,
            p_ceiling: 256,
            constructions: true,
        }
    }
}

/// Constructions that target `cfg`, the rule-specific one first. Only
/// post-attribution enforcement has any.
pub fn registered_constructions(cfg: &Configuration) -> Vec<CounterexampleKind> {
    use CounterexampleKind as K;
    if cfg.enforcement != EnforcementPoint::Post {
        return Vec::new();
    }
    let mut kinds = match cfg.relation {
        Relation::Impression => vec![K::UniImpression, K::ExpImpression, K::UshapedImpression],
        Relation::UserPublisher => vec![K::AnyruleUserPub, K::LtaUserPubAdv],
        Relation::UserPublisherAdvertiser => vec![
            K::LtaUserPubAdv,
            K::MultitouchUserPubAdv(MultitouchBase::Uniform),
            K::MultitouchUserPubAdv(MultitouchBase::ExpEqualTime),
            K::MultitouchUserPubAdv(MultitouchBase::UShaped),
        ],
        _ => Vec::new(),
    };
    let preferred = match (cfg.relation, cfg.rule.shape()) {
        (Relation::Impression, Shape::TimeDecay) => Some(K::ExpImpression),
        (Relation::Impression, Shape::UShaped) => Some(K::UshapedImpression),
        (Relation::UserPublisherAdvertiser, Shape::Uniform) => {
            Some(K::MultitouchUserPubAdv(MultitouchBase::Uniform))
        }
        (Relation::UserPublisherAdvertiser, Shape::TimeDecay) => {
            Some(K::MultitouchUserPubAdv(MultitouchBase::ExpEqualTime))
        }
        (Relation::UserPublisherAdvertiser, Shape::UShaped) => {
            Some(K::MultitouchUserPubAdv(MultitouchBase::UShaped))
        }
        _ => None,
    };
    if let Some(p) = preferred {
        kinds.retain(|k| *k != p);
        kinds.insert(0, p);
    }
    kinds
}

/// ℓ1 distance between the attributed outputs of a construction's pair.
pub fn construction_distance(
    cfg: &Configuration,
    id: CounterexampleId,
) -> Result<(f64, Dataset, Dataset), ValidityError> {
    let (d, d_prime) = construct_counterexample(id, Some(&cfg.rule))?;
    let l1 = l1_distance(&run(&d, cfg)?, &run(&d_prime, cfg)?);
    Ok((l1, d, d_prime))
}

/// Smallest `p` at which `kind` exceeds `c0 * r`, searched by doubling and
/// then bisection, or the result at the ceiling when it never does.
fn search_construction(
    cfg: &Configuration,
    kind: CounterexampleKind,
    c0: f64,
    ceiling: usize,
) -> Result<(ConstructionResult, Option<Witness>), ValidityError> {
    let bound = c0 * f64::from(cfg.r) + VIOLATION_SLACK;
    let eval = |p: usize| construction_distance(cfg, CounterexampleId::new(kind, p));
    let mut lo: Option<usize> = None;
    let mut p = kind.min_p();
    let mut last;
    let ceiling = ceiling.max(kind.min_p());
    loop {
        let (l1, d, d_prime) = eval(p)?;
        if l1 > bound {
            let mut hi = (p, l1, d, d_prime);
            if let Some(mut low) = lo {
                while hi.0 - low > 1 {
                    let mid = low + (hi.0 - low) / 2;
                    let (l1, d, d_prime) = eval(mid)?;
                    if l1 > bound {
                        hi = (mid, l1, d, d_prime);
                    } else {
                        low = mid;
                    }
                }
            }
            let id = CounterexampleId::new(kind, hi.0);
            let result = ConstructionResult {
                id,
                l1: hi.1,
                exceeded: true,
            };
            let witness = Witness {
                source: WitnessSource::Construction { id },
                d: hi.2,
                d_prime: hi.3,
                l1: hi.1,
            };
            return Ok((result, Some(witness)));
        }
        last = Some(ConstructionResult {
            id: CounterexampleId::new(kind, p),
            l1,
            exceeded: false,
        });
        lo = Some(p);
        if p >= ceiling {
            break;
        }
        p = (p * 2).min(ceiling);
    }
    Ok((last.expect("at least one evaluation"), None))
}

struct TrialOutcome {
    l1: f64,
    violation: Option<Witness>,
}

fn run_trial(
    cfg: &Configuration,
    c0: f64,
    opts: &CheckOptions,
    trial: usize,
) -> Result<TrialOutcome, ValidityError> {
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    rng.set_stream(trial as u64);
    let d = random_dataset(&mut rng, &opts.size);
    let pool = addition_pool(&mut rng, &d, cfg.relation, &opts.size);
    let report = sensitivity_report(&d, cfg, &pool)?;
    let bound = c0 * f64::from(cfg.r) + VIOLATION_SLACK;
    let violation = match report.worst {
        Some(w) if w.l1 > bound => Some(Witness {
            source: WitnessSource::RandomTrial {
                trial,
                neighbor: w.kind.to_string(),
            },
            d,
            d_prime: w.dataset,
            l1: w.l1,
        }),
        _ => None,
    };
    Ok(TrialOutcome {
        l1: report.value,
        violation,
    })
}

/// Checks `ℓ1 <= c0 * r` on `opts.trials` random datasets, exhaustively over
/// removal neighbours plus a generated addition pool, and on every
/// registered construction. The verdict is `invalid_witnessed` exactly when
/// some adjacent pair exceeds the bound; the witness prefers a construction.
pub fn check_validity(
    cfg: &Configuration,
    c0: f64,
    opts: &CheckOptions,
) -> Result<ValidityReport, ValidityError> {
    if opts.trials == 0 {
        return Err(ValidityError::Domain("trials must be at least 1".into()));
    }
    let outcomes: Vec<TrialOutcome> = (0..opts.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, c0, opts, t))
        .collect::<Result<_, _>>()?;
    let r = f64::from(cfg.r);
    let mut max_l1 = outcomes.iter().map(|o| o.l1).fold(0.0, f64::max);
    let random_violations = outcomes.iter().filter(|o| o.violation.is_some()).count();
    let mut witness = outcomes.into_iter().find_map(|o| o.violation);

    let mut constructions = Vec::new();
    if opts.constructions {
        let mut found = None;
        for kind in registered_constructions(cfg) {
            let (result, w) = search_construction(cfg, kind, c0, opts.p_ceiling)?;
            max_l1 = max_l1.max(result.l1);
            constructions.push(result);
            if let Some(w) = w {
                found = Some(w);
                break;
            }
        }
        if found.is_some() {
            witness = found;
        }
    }
    Ok(ValidityReport {
        rule: cfg.rule.label(),
        relation: cfg.relation,
        enforcement: cfg.enforcement,
        r: cfg.r,
        verdict: if witness.is_some() {
            Verdict::InvalidWitnessed
        } else {
            Verdict::ValidObserved
        },
        c0_claimed: c0,
        max_ratio: max_l1 / r,
        trials: opts.trials,
        random_violations,
        constructions,
        witness,
    })
}

/// The rules of the classification table: the five built-ins plus the
/// first-touch and uniform members of the POS and IPA families.
pub fn table_rules() -> Vec<Rule> {
    let mut rules = Rule::builtins();
    rules.push(Rule::Positional(Positional::Instance(Shape::FirstTouch)));
    rules.push(Rule::Positional(Positional::Instance(Shape::Uniform)));
    rules.push(Rule::ImpressionPriority(Priority::Instance(Shape::FirstTouch)));
    rules.push(Rule::ImpressionPriority(Priority::Instance(Shape::Uniform)));
    rules
}

#[derive(Debug, Clone)]
pub struct TableOptions {
    pub check: CheckOptions,
    pub r: u32,
    /// Constant an invalid cell must be shown to exceed.
    pub invalid_threshold: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            check: CheckOptions::default(),
            r: 1,
            invalid_threshold: 4.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TableCell {
    pub rule: String,
    pub relation: Relation,
    pub enforcement: EnforcementPoint,
    pub expected: Classification,
    pub report: Option<ValidityReport>,
}

impl TableCell {
    /// Whether the empirical verdict agrees with the expected class. Cells
    /// without a check agree trivially.
    pub fn agrees(&self) -> bool {
        match (&self.expected, &self.report) {
            (Classification::Valid { .. }, Some(r)) => r.verdict == Verdict::ValidObserved,
            (Classification::Invalid { .. }, Some(r)) => r.verdict == Verdict::InvalidWitnessed,
            (_, None) => true,
            _ => false,
        }
    }

    pub fn observed(&self) -> Option<Verdict> {
        self.report.as_ref().map(|r| r.verdict)
    }
}

/// Every `(rule, relation, enforcement)` cell for post and pre enforcement
/// plus the conversion row, each checked against its classification: valid
/// cells at their constant, invalid cells against `invalid_threshold`.
pub fn classification_table(
    rules: &[Rule],
    relations: &[Relation],
    opts: &TableOptions,
) -> Result<Vec<TableCell>, ValidityError> {
    let mut plan: Vec<(Rule, Relation, EnforcementPoint)> = Vec::new();
    for rule in rules {
        for enforcement in [EnforcementPoint::Post, EnforcementPoint::Pre] {
            for &relation in relations.iter().filter(|r| **r != Relation::Conversion) {
                plan.push((rule.clone(), relation, enforcement));
            }
        }
        if relations.contains(&Relation::Conversion) {
            plan.push((rule.clone(), Relation::Conversion, EnforcementPoint::None));
        }
    }
    let mut cells = Vec::with_capacity(plan.len());
    for (index, (rule, relation, enforcement)) in plan.into_iter().enumerate() {
        let expected = classify(&rule, relation, enforcement);
        let c0 = match &expected {
            Classification::Valid { c0 } => Some(*c0),
            Classification::Invalid { .. } => Some(opts.invalid_threshold),
            _ => None,
        };
        let report = match c0 {
            Some(c0) => {
                let cfg = Configuration::new(rule.clone(), relation, enforcement, opts.r)?;
                let check = CheckOptions {
                    seed: opts.check.seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                    ..opts.check.clone()
                };
                Some(check_validity(&cfg, c0, &check)?)
            }
            None => None,
        };
        cells.push(TableCell {
            rule: rule.label(),
            relation,
            enforcement,
            expected,
            report,
        });
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(trials: usize) -> CheckOptions {
        CheckOptions {
            trials,
            ..CheckOptions::default()
        }
    }

    #[test]
    fn first_touch_impression_is_two_valid() {
        let cfg = Configuration::new(Rule::FirstTouch, Relation::Impression, EnforcementPoint::Post, 3).unwrap();
        let report = check_validity(&cfg, 2.0, &quick(200)).unwrap();
        assert_eq!(report.verdict, Verdict::ValidObserved);
        assert!(report.max_ratio <= 2.0 + 1e-9);
        assert!(report.witness.is_none());
    }

    #[test]
    fn conversion_relation_is_one_valid() {
        for rule in Rule::builtins() {
            let cfg = Configuration::new(rule, Relation::Conversion, EnforcementPoint::None, 1).unwrap();
            let report = check_validity(&cfg, 1.0, &quick(200)).unwrap();
            assert_eq!(report.verdict, Verdict::ValidObserved, "{}", report.rule);
        }
    }

    #[test]
    fn uniform_impression_witness_is_smallest_p() {
        let cfg = Configuration::new(Rule::Uniform, Relation::Impression, EnforcementPoint::Post, 1).unwrap();
        let report = check_validity(&cfg, 10.0, &quick(20)).unwrap();
        assert_eq!(report.verdict, Verdict::InvalidWitnessed);
        // Independent oracle: the first p with 1 + sum_{j=2}^{p} 2/j > 10.
        let mut total = 1.0;
        let mut p = 1;
        while total <= 10.0 {
            p += 1;
            total += 2.0 / p as f64;
        }
        let w = report.witness.unwrap();
        assert_eq!(
            w.source,
            WitnessSource::Construction {
                id: CounterexampleId::new(CounterexampleKind::UniImpression, p)
            }
        );
        assert!((w.l1 - total).abs() < 1e-6);
    }

    #[test]
    fn zero_trials_is_an_error() {
        let cfg = Configuration::new(Rule::Uniform, Relation::User, EnforcementPoint::Post, 1).unwrap();
        assert!(check_validity(&cfg, 1.0, &quick(0)).is_err());
    }

    #[test]
    fn preferred_construction_comes_first() {
        let cfg = Configuration::new(Rule::UShaped, Relation::Impression, EnforcementPoint::Post, 1).unwrap();
        assert_eq!(registered_constructions(&cfg)[0], CounterexampleKind::UshapedImpression);
        let cfg = Configuration::new(Rule::UShaped, Relation::Impression, EnforcementPoint::Pre, 1).unwrap();
        assert!(registered_constructions(&cfg).is_empty());
    }
}
