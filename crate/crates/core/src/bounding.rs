//! Attribution systems: the unbounded baseline, post-attribution capping,
//! pre-attribution capping, and per-event admission, plus the attributed
//! dataset metric.
//!
//! An impression is eligible for a conversion when it shares the
//! conversion's user and advertiser and strictly precedes it in the global
//! `(timestamp, id)` order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{AttributionError, Rule};
use crate::events::{
    AdvertiserId, Conversion, ConversionId, Dataset, EventRef, Impression, ImpressionId,
    PublisherId, UserId,
};

/// Slack used whenever a real-valued budget is compared with a charge.
pub const BUDGET_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundingError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("the conversion relation has no contribution bounding scope")]
    NoScope,
    #[error(transparent)]
    Attribution(#[from] AttributionError),
}

/// The six adjacency relations, which double as contribution bounding
/// scopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Impression,
    Conversion,
    UserPublisher,
    UserAdvertiser,
    #[serde(alias = "user_pub_adv")]
    UserPublisherAdvertiser,
    User,
}

impl Relation {
    pub const ALL: [Relation; 6] = [
        Relation::Impression,
        Relation::User,
        Relation::UserPublisher,
        Relation::UserAdvertiser,
        Relation::UserPublisherAdvertiser,
        Relation::Conversion,
    ];

    /// The five relations that carry a bounding scope.
    pub const SCOPED: [Relation; 5] = [
        Relation::Impression,
        Relation::User,
        Relation::UserPublisher,
        Relation::UserAdvertiser,
        Relation::UserPublisherAdvertiser,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Impression => "impression",
            Relation::Conversion => "conversion",
            Relation::UserPublisher => "user_publisher",
            Relation::UserAdvertiser => "user_advertiser",
            Relation::UserPublisherAdvertiser => "user_publisher_advertiser",
            Relation::User => "user",
        }
    }

    /// Whether conversions belong to this relation's units.
    pub fn covers_conversions(self) -> bool {
        matches!(
            self,
            Relation::Conversion | Relation::UserAdvertiser | Relation::User
        )
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = BoundingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| BoundingError::Config(format!("unknown relation {s:?}")))
    }
}

/// Contribution bounding scope of one event.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScopeKey {
    Impression(ImpressionId),
    Conversion(ConversionId),
    UserPublisher(UserId, PublisherId),
    UserAdvertiser(UserId, AdvertiserId),
    UserPubAdv(UserId, PublisherId, AdvertiserId),
    User(UserId),
}

impl fmt::Display for ScopeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScopeKey::Impression(i) => write!(f, "impression:{i}"),
            ScopeKey::Conversion(c) => write!(f, "conversion:{c}"),
            ScopeKey::UserPublisher(u, p) => write!(f, "user_publisher:{u}/{p}"),
            ScopeKey::UserAdvertiser(u, a) => write!(f, "user_advertiser:{u}/{a}"),
            ScopeKey::UserPubAdv(u, p, a) => write!(f, "user_publisher_advertiser:{u}/{p}/{a}"),
            ScopeKey::User(u) => write!(f, "user:{u}"),
        }
    }
}

/// Scope of an impression, which is also the scope of any pair it is in.
pub fn scope_key(relation: Relation, i: &Impression) -> Result<ScopeKey, BoundingError> {
    Ok(match relation {
        Relation::Impression => ScopeKey::Impression(i.id.clone()),
        Relation::Conversion => return Err(BoundingError::NoScope),
        Relation::UserPublisher => ScopeKey::UserPublisher(i.user.clone(), i.publisher.clone()),
        Relation::UserAdvertiser => ScopeKey::UserAdvertiser(i.user.clone(), i.advertiser.clone()),
        Relation::UserPublisherAdvertiser => {
            ScopeKey::UserPubAdv(i.user.clone(), i.publisher.clone(), i.advertiser.clone())
        }
        Relation::User => ScopeKey::User(i.user.clone()),
    })
}

/// Scope of a conversion, or `None` when conversions are not part of the
/// relation's units.
pub fn conversion_scope_key(relation: Relation, c: &Conversion) -> Option<ScopeKey> {
    match relation {
        Relation::Conversion => Some(ScopeKey::Conversion(c.id.clone())),
        Relation::UserAdvertiser => Some(ScopeKey::UserAdvertiser(c.user.clone(), c.advertiser.clone())),
        Relation::User => Some(ScopeKey::User(c.user.clone())),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnforcementPoint {
    None,
    #[serde(alias = "pre_attribution")]
    Pre,
    #[serde(alias = "post_attribution")]
    Post,
    EventAdmission,
}

impl EnforcementPoint {
    pub fn as_str(self) -> &'static str {
        match self {
            EnforcementPoint::None => "none",
            EnforcementPoint::Pre => "pre",
            EnforcementPoint::Post => "post",
            EnforcementPoint::EventAdmission => "event_admission",
        }
    }
}

impl fmt::Display for EnforcementPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnforcementPoint {
    type Err = BoundingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| BoundingError::Config(format!("unknown enforcement point {s:?}")))
    }
}

/// Rule, relation, enforcement point and integral contribution bound.
#[derive(Debug, Clone)]
pub struct Configuration {
    pub rule: Rule,
    pub relation: Relation,
    pub enforcement: EnforcementPoint,
    pub r: u32,
}

impl Configuration {
    /// Checks `r >= 1` and that enforcement is `none` exactly for the
    /// conversion relation.
    pub fn new(
        rule: Rule,
        relation: Relation,
        enforcement: EnforcementPoint,
        r: u32,
    ) -> Result<Self, BoundingError> {
        if r == 0 {
            return Err(BoundingError::Config("contribution bound r must be at least 1".into()));
        }
        match (relation, enforcement) {
            (Relation::Conversion, EnforcementPoint::None) => {}
            (Relation::Conversion, e) => {
                return Err(BoundingError::Config(format!(
                    "the conversion relation takes no enforcement, got {e}"
                )))
            }
            (rel, EnforcementPoint::None) => {
                return Err(BoundingError::Config(format!(
                    "relation {rel} needs an enforcement point (pre, post or event_admission)"
                )))
            }
            _ => {}
        }
        Ok(Self {
            rule,
            relation,
            enforcement,
            r,
        })
    }

    /// Stable description used for fingerprints and reports.
    pub fn describe(&self) -> String {
        format!(
            "rule={};relation={};enforcement={};r={}",
            self.rule.label(),
            self.relation,
            self.enforcement,
            self.r
        )
    }
}

/// Weighted `(impression, conversion)` pairs. Only positive weights are
/// stored; iteration is ordered by `(conversion id, impression id)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttributedDataset {
    weights: BTreeMap<(ConversionId, ImpressionId), f64>,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    impression: String,
    conversion: String,
    weight: f64,
}

impl AttributedDataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from `(impression, conversion, weight)` triples, dropping
    /// non-positive weights. Later duplicates overwrite earlier ones.
    pub fn from_pairs<I, C>(pairs: impl IntoIterator<Item = (I, C, f64)>) -> Self
    where
        I: Into<String>,
        C: Into<String>,
    {
        let mut out = Self::new();
        for (i, c, w) in pairs {
            out.insert(ImpressionId::new(i), ConversionId::new(c), w);
        }
        out
    }

    /// Stores `w` for the pair; a non-positive weight removes it.
    pub fn insert(&mut self, i: ImpressionId, c: ConversionId, w: f64) {
        if w > 0.0 {
            self.weights.insert((c, i), w);
        } else {
            self.weights.remove(&(c, i));
        }
    }

    pub fn weight(&self, i: &str, c: &str) -> f64 {
        self.weights
            .get(&(ConversionId::new(c), ImpressionId::new(i)))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `(impression, conversion, weight)` in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&ImpressionId, &ConversionId, f64)> {
        self.weights.iter().map(|((c, i), w)| (i, c, *w))
    }

    /// The stored pairs as `(impression, conversion)` string tuples.
    pub fn pair_ids(&self) -> Vec<(String, String)> {
        self.iter().map(|(i, c, _)| (i.0.clone(), c.0.clone())).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.values().sum()
    }

    /// JSON lines of `{impression, conversion, weight}`, weights rounded to
    /// 12 significant digits.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, c, w) in self.iter() {
            let record = PairRecord {
                impression: i.0.clone(),
                conversion: c.0.clone(),
                weight: round_significant(w, 12),
            };
            out.push_str(&serde_json::to_string(&record).expect("pair records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut out = Self::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let r: PairRecord = serde_json::from_str(line)?;
            out.insert(ImpressionId(r.impression), ConversionId(r.conversion), r.weight);
        }
        Ok(out)
    }
}

/// Rounds to `digits` significant decimal digits.
pub fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .expect("scientific notation parses")
}

/// ℓ1 distance over the union of stored pairs.
pub fn l1_distance(a: &AttributedDataset, b: &AttributedDataset) -> f64 {
    let mut total = 0.0;
    let mut left = a.weights.iter().peekable();
    let mut right = b.weights.iter().peekable();
    loop {
        match (left.peek(), right.peek()) {
            (Some((ka, wa)), Some((kb, wb))) => match ka.cmp(kb) {
                std::cmp::Ordering::Less => {
                    total += **wa;
                    left.next();
                }
                std::cmp::Ordering::Greater => {
                    total += **wb;
                    right.next();
                }
                std::cmp::Ordering::Equal => {
                    total += (**wa - **wb).abs();
                    left.next();
                    right.next();
                }
            },
            (Some((_, wa)), None) => {
                total += **wa;
                left.next();
            }
            (None, Some((_, wb))) => {
                total += **wb;
                right.next();
            }
            (None, None) => break,
        }
    }
    total
}

/// Per-(user, advertiser) lists of impression indices, each sorted in the
/// global order because the dataset's impression list is.
struct Timeline<'a> {
    d: &'a Dataset,
    by_pair: HashMap<(&'a UserId, &'a AdvertiserId), Vec<usize>>,
}

impl<'a> Timeline<'a> {
    fn new(d: &'a Dataset) -> Self {
        let mut by_pair: HashMap<_, Vec<usize>> = HashMap::new();
        for (idx, i) in d.impressions.iter().enumerate() {
            by_pair.entry((&i.user, &i.advertiser)).or_default().push(idx);
        }
        Self { d, by_pair }
    }

    /// Indices of impressions eligible for `c`, oldest first.
    fn eligible(&self, c: &'a Conversion) -> &[usize] {
        match self.by_pair.get(&(&c.user, &c.advertiser)) {
            Some(list) => {
                let key = c.order_key();
                let n = list.partition_point(|&k| self.d.impressions[k].order_key() < key);
                &list[..n]
            }
            None => &[],
        }
    }
}

/// Dense slot numbering of the scopes touched by a dataset.
struct Scopes {
    slots: HashMap<ScopeKey, usize>,
    of_impression: Vec<usize>,
}

impl Scopes {
    fn new(d: &Dataset, relation: Relation) -> Result<Self, BoundingError> {
        let mut slots = HashMap::new();
        let mut of_impression = Vec::with_capacity(d.impressions.len());
        for i in &d.impressions {
            let key = scope_key(relation, i)?;
            let n = slots.len();
            of_impression.push(*slots.entry(key).or_insert(n));
        }
        Ok(Self {
            slots,
            of_impression,
        })
    }

    fn slot_for(&mut self, key: ScopeKey) -> usize {
        let n = self.slots.len();
        *self.slots.entry(key).or_insert(n)
    }
}

fn refs<'a>(d: &'a Dataset, idx: &[usize]) -> Vec<&'a Impression> {
    idx.iter().map(|&k| &d.impressions[k]).collect()
}

fn require(cfg: &Configuration, enforcement: EnforcementPoint) -> Result<(), BoundingError> {
    if cfg.enforcement != enforcement {
        return Err(BoundingError::Config(format!(
            "runner for {enforcement} called with enforcement {}",
            cfg.enforcement
        )));
    }
    if cfg.relation == Relation::Conversion {
        return Err(BoundingError::Config(
            "the conversion relation takes no enforcement".into(),
        ));
    }
    if cfg.r == 0 {
        return Err(BoundingError::Config("contribution bound r must be at least 1".into()));
    }
    Ok(())
}

/// Attribution over every eligible impression, with no bound.
pub fn run_unbounded(d: &Dataset, rule: &Rule) -> Result<AttributedDataset, BoundingError> {
    let timeline = Timeline::new(d);
    let mut out = AttributedDataset::new();
    for c in &d.conversions {
        let eligible = timeline.eligible(c);
        if eligible.is_empty() {
            continue;
        }
        let weights = rule.attribute(&refs(d, eligible), c)?;
        for (&k, w) in eligible.iter().zip(weights) {
            out.insert(d.impressions[k].id.clone(), c.id.clone(), w);
        }
    }
    Ok(out)
}

/// Post-attribution enforcement: each scope holds a budget of `r` that
/// emitted pair weights are charged against.
pub fn run_post_attribution(
    d: &Dataset,
    cfg: &Configuration,
) -> Result<AttributedDataset, BoundingError> {
    require(cfg, EnforcementPoint::Post)?;
    let timeline = Timeline::new(d);
    let scopes = Scopes::new(d, cfg.relation)?;
    let mut budget = vec![f64::from(cfg.r); scopes.slots.len()];
    let mut out = AttributedDataset::new();
    for c in &d.conversions {
        let eligible = timeline.eligible(c);
        if eligible.is_empty() {
            continue;
        }
        let weights = cfg.rule.attribute(&refs(d, eligible), c)?;
        for (&k, w) in eligible.iter().zip(weights) {
            if w <= 0.0 {
                continue;
            }
            let b = &mut budget[scopes.of_impression[k]];
            if *b >= w - BUDGET_SLACK {
                out.insert(d.impressions[k].id.clone(), c.id.clone(), w);
                *b -= w;
            }
        }
    }
    Ok(out)
}

/// Pre-attribution enforcement: every conversion charges one unit to each
/// distinct scope among its eligible impressions; impressions of exhausted
/// scopes never enter the rule.
pub fn run_pre_attribution(
    d: &Dataset,
    cfg: &Configuration,
) -> Result<AttributedDataset, BoundingError> {
    require(cfg, EnforcementPoint::Pre)?;
    let timeline = Timeline::new(d);
    let scopes = Scopes::new(d, cfg.relation)?;
    let mut budget = vec![cfg.r; scopes.slots.len()];
    // Marks which scopes were charged for the current conversion.
    let mut charged_for = vec![usize::MAX; scopes.slots.len()];
    let mut alive = vec![false; scopes.slots.len()];
    let mut out = AttributedDataset::new();
    for (n, c) in d.conversions.iter().enumerate() {
        let eligible = timeline.eligible(c);
        for &k in eligible {
            let s = scopes.of_impression[k];
            if charged_for[s] != n {
                charged_for[s] = n;
                alive[s] = budget[s] >= 1;
                if alive[s] {
                    budget[s] -= 1;
                }
            }
        }
        let admitted: Vec<usize> = eligible
            .iter()
            .copied()
            .filter(|&k| alive[scopes.of_impression[k]])
            .collect();
        if admitted.is_empty() {
            continue;
        }
        let weights = cfg.rule.attribute(&refs(d, &admitted), c)?;
        for (&k, w) in admitted.iter().zip(weights) {
            out.insert(d.impressions[k].id.clone(), c.id.clone(), w);
        }
    }
    Ok(out)
}

/// Event admission: one chronological pass admits each event while its
/// scope has budget left, then attribution runs unbounded over the admitted
/// events. Conversions only consume budget for relations whose units
/// contain them.
pub fn run_event_admission(
    d: &Dataset,
    cfg: &Configuration,
) -> Result<AttributedDataset, BoundingError> {
    require(cfg, EnforcementPoint::EventAdmission)?;
    let mut scopes = Scopes::new(d, cfg.relation)?;
    let conversion_slots: Vec<Option<usize>> = d
        .conversions
        .iter()
        .map(|c| conversion_scope_key(cfg.relation, c).map(|key| scopes.slot_for(key)))
        .collect();
    let mut budget = vec![cfg.r; scopes.slots.len()];
    let mut keep_impression = vec![false; d.impressions.len()];
    let mut keep_conversion = vec![false; d.conversions.len()];
    let (mut next_i, mut next_c) = (0, 0);
    for event in d.events() {
        match event {
            EventRef::Impression(_) => {
                let s = scopes.of_impression[next_i];
                if budget[s] >= 1 {
                    budget[s] -= 1;
                    keep_impression[next_i] = true;
                }
                next_i += 1;
            }
            EventRef::Conversion(_) => {
                keep_conversion[next_c] = match conversion_slots[next_c] {
                    Some(s) if budget[s] >= 1 => {
                        budget[s] -= 1;
                        true
                    }
                    Some(_) => false,
                    None => true,
                };
                next_c += 1;
            }
        }
    }
    let timeline = Timeline::new(d);
    let mut out = AttributedDataset::new();
    for (c, _) in d.conversions.iter().zip(&keep_conversion).filter(|(_, keep)| **keep) {
        let admitted: Vec<usize> = timeline
            .eligible(c)
            .iter()
            .copied()
            .filter(|&k| keep_impression[k])
            .collect();
        if admitted.is_empty() {
            continue;
        }
        let weights = cfg.rule.attribute(&refs(d, &admitted), c)?;
        for (&k, w) in admitted.iter().zip(weights) {
            out.insert(d.impressions[k].id.clone(), c.id.clone(), w);
        }
    }
    Ok(out)
}

/// Runs the attribution system selected by `cfg.enforcement`.
pub fn run(d: &Dataset, cfg: &Configuration) -> Result<AttributedDataset, BoundingError> {
    match cfg.enforcement {
        EnforcementPoint::None => {
            if cfg.relation != Relation::Conversion {
                return Err(BoundingError::Config(format!(
                    "relation {} needs an enforcement point",
                    cfg.relation
                )));
            }
            run_unbounded(d, &cfg.rule)
        }
        EnforcementPoint::Pre => run_pre_attribution(d, cfg),
        EnforcementPoint::Post => run_post_attribution(d, cfg),
        EnforcementPoint::EventAdmission => run_event_admission(d, cfg),
    }
}
