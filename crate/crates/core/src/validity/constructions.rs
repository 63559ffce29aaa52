//! Adversarial adjacent dataset pairs that blow up the ℓ1 distance of
//! specific post-attribution configurations at contribution bound 1.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ValidityError;
use crate::attribution::Rule;
use crate::bounding::{run_unbounded, Relation};
use crate::events::{Conversion, Dataset, Impression};

const USER: &str = "U";
const ADVERTISER: &str = "A";

/// Which impression layout a multi-touch construction on distinct
/// publishers reuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultitouchBase {
    Uniform,
    ExpEqualTime,
    UShaped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "base")]
pub enum CounterexampleKind {
    LtaUserPubAdv,
    AnyruleUserPub,
    UniImpression,
    ExpImpression,
    UshapedImpression,
    MultitouchUserPubAdv(MultitouchBase),
}

impl CounterexampleKind {
    pub fn min_p(self) -> usize {
        match self {
            CounterexampleKind::LtaUserPubAdv | CounterexampleKind::AnyruleUserPub => 2,
            CounterexampleKind::UniImpression | CounterexampleKind::ExpImpression => 1,
            CounterexampleKind::UshapedImpression => 4,
            CounterexampleKind::MultitouchUserPubAdv(MultitouchBase::UShaped) => 4,
            CounterexampleKind::MultitouchUserPubAdv(_) => 1,
        }
    }

    /// The relation under which the constructed pair is adjacent.
    pub fn relation(self) -> Relation {
        match self {
            CounterexampleKind::AnyruleUserPub => Relation::UserPublisher,
            CounterexampleKind::UniImpression
            | CounterexampleKind::ExpImpression
            | CounterexampleKind::UshapedImpression => Relation::Impression,
            CounterexampleKind::LtaUserPubAdv | CounterexampleKind::MultitouchUserPubAdv(_) => {
                Relation::UserPublisherAdvertiser
            }
        }
    }

    pub fn name(self) -> String {
        match self {
            CounterexampleKind::LtaUserPubAdv => "lta_user_pub_adv".into(),
            CounterexampleKind::AnyruleUserPub => "anyrule_user_pub".into(),
            CounterexampleKind::UniImpression => "uni_impression".into(),
            CounterexampleKind::ExpImpression => "exp_impression".into(),
            CounterexampleKind::UshapedImpression => "ushaped_impression".into(),
            CounterexampleKind::MultitouchUserPubAdv(base) => {
                let base = match base {
                    MultitouchBase::Uniform => "uniform",
                    MultitouchBase::ExpEqualTime => "exp_equal_time",
                    MultitouchBase::UShaped => "u_shaped",
                };
                format!("multitouch_user_pub_adv[{base}]")
            }
        }
    }
}

impl fmt::Display for CounterexampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CounterexampleId {
    pub kind: CounterexampleKind,
    pub p: usize,
}

impl CounterexampleId {
    pub fn new(kind: CounterexampleKind, p: usize) -> Self {
        Self { kind, p }
    }
}

impl fmt::Display for CounterexampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(p={})", self.kind, self.p)
    }
}

/// Emits events in sequence. Ids carry a zero-padded sequence prefix so the
/// `(timestamp, id)` order equals emission order even when every event
/// shares one timestamp.
struct Builder {
    seq: u64,
    equal_time: bool,
    impressions: Vec<Impression>,
    conversions: Vec<Conversion>,
}

impl Builder {
    fn new(equal_time: bool) -> Self {
        Self {
            seq: 0,
            equal_time,
            impressions: Vec::new(),
            conversions: Vec::new(),
        }
    }

    fn next(&mut self, name: &str) -> (String, u64) {
        self.seq += 1;
        let t = if self.equal_time { 0 } else { self.seq };
        (format!("e{:07}.{name}", self.seq), t)
    }

    fn impression(&mut self, name: &str, publisher: &str, advertiser: &str) -> String {
        let (id, t) = self.next(name);
        self.impressions
            .push(Impression::new(id.clone(), t, USER, publisher, advertiser));
        id
    }

    fn conversion(&mut self, name: &str, advertiser: &str) {
        let (id, t) = self.next(name);
        self.conversions.push(Conversion::new(id, t, USER, advertiser));
    }

    fn finish(self) -> Dataset {
        Dataset::new(self.impressions, self.conversions).expect("constructed ids are unique")
    }
}

fn without(d: &Dataset, drop: impl Fn(&Impression) -> bool) -> Dataset {
    Dataset {
        impressions: d.impressions.iter().filter(|i| !drop(i)).cloned().collect(),
        conversions: d.conversions.clone(),
    }
}

/// `i_1..i_p`, with `conversions_after(j)` conversions right after `i_j`.
/// The neighbour drops `i_1`.
fn staircase(
    p: usize,
    distinct_publishers: bool,
    equal_time: bool,
    conversions_after: impl Fn(usize) -> usize,
) -> (Dataset, Dataset) {
    let mut b = Builder::new(equal_time);
    let mut first = String::new();
    for j in 1..=p {
        let publisher = if distinct_publishers { format!("P{j}") } else { "P".to_owned() };
        let id = b.impression(&format!("i{j}"), &publisher, ADVERTISER);
        if j == 1 {
            first = id;
        }
        for k in 1..=conversions_after(j) {
            b.conversion(&format!("c{j}.{k}"), ADVERTISER);
        }
    }
    let d = b.finish();
    let d_prime = without(&d, |i| i.id.as_str() == first);
    (d, d_prime)
}

fn lta_user_pub_adv(p: usize) -> (Dataset, Dataset) {
    let mut b = Builder::new(false);
    let shared = format!("P{p}");
    for k in 1..p {
        b.impression(&format!("i{}", 2 * k - 1), &format!("P{k}"), ADVERTISER);
        b.impression(&format!("i{}", 2 * k), &shared, ADVERTISER);
        b.conversion(&format!("c{k}"), ADVERTISER);
    }
    let d = b.finish();
    let d_prime = without(&d, |i| i.publisher.as_str() == shared);
    (d, d_prime)
}

/// One advertiser `A{j}_{k}` per publisher pair `j < k`, each seeing an
/// impression on `P{j}`, then on `P{k}`, then a conversion.
fn pair_blocks(p: usize, keep: impl Fn(usize, usize) -> bool) -> Dataset {
    let mut b = Builder::new(false);
    for j in 1..=p {
        for k in j + 1..=p {
            if !keep(j, k) {
                continue;
            }
            let adv = format!("A{j}_{k}");
            b.impression(&format!("i{j}_{k}.a"), &format!("P{j}"), &adv);
            b.impression(&format!("i{j}_{k}.b"), &format!("P{k}"), &adv);
            b.conversion(&format!("c{j}_{k}"), &adv);
        }
    }
    b.finish()
}

/// Runs `rule` unbounded over all publisher pairs and returns the publisher
/// index with the largest total weight (smallest index on ties) and that
/// weight.
pub fn heaviest_publisher(rule: &Rule, p: usize) -> Result<(usize, f64), ValidityError> {
    let dummy = pair_blocks(p, |_, _| true);
    let attributed = run_unbounded(&dummy, rule)?;
    let publisher_of: BTreeMap<&str, &str> = dummy
        .impressions
        .iter()
        .map(|i| (i.id.as_str(), i.publisher.as_str()))
        .collect();
    let mut totals = vec![0.0; p + 1];
    for (i, _, w) in attributed.iter() {
        let publisher = publisher_of[i.as_str()];
        let index: usize = publisher[1..].parse().expect("publisher names are P<index>");
        totals[index] += w;
    }
    let mut best = 1;
    for j in 2..=p {
        if totals[j] > totals[best] {
            best = j;
        }
    }
    Ok((best, totals[best]))
}

fn anyrule_user_pub(rule: &Rule, p: usize) -> Result<(Dataset, Dataset), ValidityError> {
    let (ell, _) = heaviest_publisher(rule, p)?;
    let d = pair_blocks(p, |j, k| j == ell || k == ell);
    let target = format!("P{ell}");
    let d_prime = without(&d, |i| i.publisher.as_str() == target);
    Ok((d, d_prime))
}

fn u_shaped_conversions(j: usize) -> usize {
    if j >= 4 {
        j - 2
    } else {
        0
    }
}

/// Builds the adjacent pair `(D, D')` for `id`. `anyrule_user_pub` needs the
/// rule to locate its target publisher; the other kinds ignore it.
pub fn construct_counterexample(
    id: CounterexampleId,
    rule: Option<&Rule>,
) -> Result<(Dataset, Dataset), ValidityError> {
    let CounterexampleId { kind, p } = id;
    if p < kind.min_p() {
        return Err(ValidityError::Domain(format!(
            "{kind} needs p >= {}, got {p}",
            kind.min_p()
        )));
    }
    Ok(match kind {
        CounterexampleKind::LtaUserPubAdv => lta_user_pub_adv(p),
        CounterexampleKind::AnyruleUserPub => {
            let rule = rule.ok_or_else(|| {
                ValidityError::Domain("anyrule_user_pub needs an attribution rule".into())
            })?;
            anyrule_user_pub(rule, p)?
        }
        CounterexampleKind::UniImpression => staircase(p, false, false, |j| j),
        CounterexampleKind::ExpImpression => staircase(p, false, true, |j| j),
        CounterexampleKind::UshapedImpression => staircase(p, false, false, u_shaped_conversions),
        CounterexampleKind::MultitouchUserPubAdv(base) => match base {
            MultitouchBase::Uniform => staircase(p, true, false, |j| j),
            MultitouchBase::ExpEqualTime => staircase(p, true, true, |j| j),
            MultitouchBase::UShaped => staircase(p, true, false, u_shaped_conversions),
        },
    })
}
