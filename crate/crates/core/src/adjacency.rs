//! Adjacency units, neighbour generation, and the exhaustive sensitivity
//! oracle.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;

use rayon::prelude::*;
use thiserror::Error;

use crate::bounding::{
    conversion_scope_key, l1_distance, run, scope_key, BoundingError, Configuration, Relation,
    ScopeKey,
};
use crate::events::{
    parse_record, Conversion, ConversionId, Dataset, Event, EventsError, Impression, ImpressionId,
};

#[derive(Debug, Error)]
pub enum AdjacencyError {
    #[error("unit {0} is not part of the dataset")]
    StaleUnit(String),
    #[error("pool id {0:?} collides with an existing event")]
    PoolIdCollision(String),
    #[error("pool group {unit:?}: {message}")]
    PoolGroup { unit: String, message: String },
    #[error("pool line {0} has no `unit` field")]
    MissingUnit(usize),
    #[error(transparent)]
    Events(#[from] EventsError),
    #[error(transparent)]
    Bounding(#[from] BoundingError),
}

/// The events one privacy unit contributes to a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyUnit {
    pub relation: Relation,
    pub key: ScopeKey,
    pub impressions: BTreeSet<ImpressionId>,
    pub conversions: BTreeSet<ConversionId>,
}

impl AdjacencyUnit {
    pub fn len(&self) -> usize {
        self.impressions.len() + self.conversions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn unit_key_of_impression(relation: Relation, i: &Impression) -> Option<ScopeKey> {
    scope_key(relation, i).ok()
}

/// All units of `relation` present in `d`, ordered by key.
pub fn adjacency_units(d: &Dataset, relation: Relation) -> Vec<AdjacencyUnit> {
    let mut units: BTreeMap<ScopeKey, AdjacencyUnit> = BTreeMap::new();
    fn entry(
        units: &mut BTreeMap<ScopeKey, AdjacencyUnit>,
        relation: Relation,
        key: ScopeKey,
    ) -> &mut AdjacencyUnit {
        units.entry(key.clone()).or_insert_with(|| AdjacencyUnit {
            relation,
            key,
            impressions: BTreeSet::new(),
            conversions: BTreeSet::new(),
        })
    }
    for i in &d.impressions {
        if let Some(key) = unit_key_of_impression(relation, i) {
            entry(&mut units, relation, key).impressions.insert(i.id.clone());
        }
    }
    for c in &d.conversions {
        if let Some(key) = conversion_scope_key(relation, c) {
            entry(&mut units, relation, key).conversions.insert(c.id.clone());
        }
    }
    units.into_values().collect()
}

/// `d` without the unit's events.
pub fn remove_unit(d: &Dataset, unit: &AdjacencyUnit) -> Result<Dataset, AdjacencyError> {
    let imps: Vec<Impression> = d
        .impressions
        .iter()
        .filter(|i| !unit.impressions.contains(&i.id))
        .cloned()
        .collect();
    let convs: Vec<Conversion> = d
        .conversions
        .iter()
        .filter(|c| !unit.conversions.contains(&c.id))
        .cloned()
        .collect();
    if d.impressions.len() - imps.len() != unit.impressions.len()
        || d.conversions.len() - convs.len() != unit.conversions.len()
    {
        return Err(AdjacencyError::StaleUnit(unit.key.to_string()));
    }
    Ok(Dataset {
        impressions: imps,
        conversions: convs,
    })
}

/// Candidate events for one addition neighbour, all from a single unit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoolGroup {
    pub unit: String,
    pub impressions: Vec<Impression>,
    pub conversions: Vec<Conversion>,
}

/// Candidate units for addition neighbours.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborPool {
    pub groups: Vec<PoolGroup>,
}

impl NeighborPool {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Parses a pool file: event records carrying a `unit` field; records
    /// with the same `unit` form one group, in first-appearance order.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, AdjacencyError> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, PoolGroup> = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(EventsError::from)?;
            if line.trim().is_empty() {
                continue;
            }
            let record = parse_record(&line, idx + 1)?;
            let unit = record
                .unit()
                .ok_or(AdjacencyError::MissingUnit(idx + 1))?
                .to_owned();
            let group = groups.entry(unit.clone()).or_insert_with(|| {
                order.push(unit.clone());
                PoolGroup {
                    unit,
                    ..PoolGroup::default()
                }
            });
            match record.into_event() {
                Event::Impression(i) => group.impressions.push(i),
                Event::Conversion(c) => group.conversions.push(c),
            }
        }
        Ok(Self {
            groups: order
                .into_iter()
                .map(|u| groups.remove(&u).expect("group recorded"))
                .collect(),
        })
    }

    pub fn parse_str(text: &str) -> Result<Self, AdjacencyError> {
        Self::parse(text.as_bytes())
    }

    pub fn to_jsonl(&self) -> String {
        use crate::events::EventRecord;
        let mut out = String::new();
        for g in &self.groups {
            let records = g
                .impressions
                .iter()
                .map(|i| EventRecord::from_impression(i, Some(g.unit.clone())))
                .chain(
                    g.conversions
                        .iter()
                        .map(|c| EventRecord::from_conversion(c, Some(g.unit.clone()))),
                );
            for r in records {
                out.push_str(&serde_json::to_string(&r).expect("records serialize"));
                out.push('\n');
            }
        }
        out
    }
}

/// `d` plus one pool group. The group's events must all belong to one unit
/// of `relation` that `d` does not already contain, and their ids must be
/// new.
pub fn add_group(d: &Dataset, group: &PoolGroup, relation: Relation) -> Result<Dataset, AdjacencyError> {
    let bad = |message: String| AdjacencyError::PoolGroup {
        unit: group.unit.clone(),
        message,
    };
    if group.impressions.is_empty() && group.conversions.is_empty() {
        return Err(bad("group is empty".into()));
    }
    let existing: HashSet<&str> = d
        .impressions
        .iter()
        .map(|i| i.id.as_str())
        .chain(d.conversions.iter().map(|c| c.id.as_str()))
        .collect();
    for id in group
        .impressions
        .iter()
        .map(|i| i.id.as_str())
        .chain(group.conversions.iter().map(|c| c.id.as_str()))
    {
        if existing.contains(id) {
            return Err(AdjacencyError::PoolIdCollision(id.to_owned()));
        }
    }
    let mut keys = BTreeSet::new();
    for i in &group.impressions {
        keys.insert(scope_key(relation, i).map_err(|_| {
            bad(format!("impressions are not units of the {relation} relation"))
        })?);
    }
    for c in &group.conversions {
        match conversion_scope_key(relation, c) {
            Some(key) => {
                keys.insert(key);
            }
            None => return Err(bad(format!("conversions are not units of the {relation} relation"))),
        }
    }
    if keys.len() != 1 {
        return Err(bad(format!("events span {} units of the {relation} relation", keys.len())));
    }
    let key = keys.into_iter().next().expect("one key");
    if adjacency_units(d, relation).iter().any(|u| u.key == key) {
        return Err(bad(format!("unit {key} already has events in the dataset")));
    }
    let mut imps = d.impressions.clone();
    imps.extend(group.impressions.iter().cloned());
    let mut convs = d.conversions.clone();
    convs.extend(group.conversions.iter().cloned());
    Ok(Dataset::new(imps, convs)?)
}

/// How a neighbour was obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NeighborKind {
    Removed(String),
    Added(String),
}

impl std::fmt::Display for NeighborKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NeighborKind::Removed(k) => write!(f, "remove {k}"),
            NeighborKind::Added(k) => write!(f, "add pool unit {k}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorstNeighbor {
    pub kind: NeighborKind,
    pub dataset: Dataset,
    pub l1: f64,
}

#[derive(Debug, Clone)]
pub struct SensitivityReport {
    /// Maximum ℓ1 distance over all neighbours, 0 when there are none.
    pub value: f64,
    pub neighbors: usize,
    pub worst: Option<WorstNeighbor>,
}

/// Every removal neighbour and every pool addition, exhaustively.
pub fn neighbors(
    d: &Dataset,
    relation: Relation,
    pool: &NeighborPool,
) -> Result<Vec<(NeighborKind, Dataset)>, AdjacencyError> {
    let mut out = Vec::new();
    for unit in adjacency_units(d, relation) {
        out.push((NeighborKind::Removed(unit.key.to_string()), remove_unit(d, &unit)?));
    }
    for group in &pool.groups {
        out.push((NeighborKind::Added(group.unit.clone()), add_group(d, group, relation)?));
    }
    Ok(out)
}

/// Maximum ℓ1 distance between the attributed outputs of `d` and its
/// neighbours, together with the neighbour that attains it. Ties resolve to
/// the first neighbour in enumeration order.
pub fn sensitivity_report(
    d: &Dataset,
    cfg: &Configuration,
    pool: &NeighborPool,
) -> Result<SensitivityReport, AdjacencyError> {
    let base = run(d, cfg)?;
    let candidates = neighbors(d, cfg.relation, pool)?;
    let distances: Vec<f64> = candidates
        .par_iter()
        .map(|(_, nd)| run(nd, cfg).map(|a| l1_distance(&base, &a)))
        .collect::<Result<_, _>>()?;
    let mut best: Option<usize> = None;
    for (k, l1) in distances.iter().enumerate() {
        if best.is_none_or(|b| *l1 > distances[b]) {
            best = Some(k);
        }
    }
    let n = candidates.len();
    let worst = best.map(|k| {
        let (kind, dataset) = candidates.into_iter().nth(k).expect("index in range");
        WorstNeighbor {
            kind,
            dataset,
            l1: distances[k],
        }
    });
    Ok(SensitivityReport {
        value: worst.as_ref().map_or(0.0, |w| w.l1),
        neighbors: n,
        worst,
    })
}

pub fn empirical_sensitivity(
    d: &Dataset,
    cfg: &Configuration,
    pool: &NeighborPool,
) -> Result<f64, AdjacencyError> {
    Ok(sensitivity_report(d, cfg, pool)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::Rule;
    use crate::bounding::EnforcementPoint;
    use crate::events::{canonical_fixture_fig2, validate_dataset};

    fn ids<T: AsRef<str>>(set: impl IntoIterator<Item = T>) -> Vec<String> {
        set.into_iter().map(|s| s.as_ref().to_owned()).collect()
    }

    #[test]
    fn units_per_relation() {
        let d = canonical_fixture_fig2();
        assert_eq!(adjacency_units(&d, Relation::Impression).len(), 5);
        assert_eq!(adjacency_units(&d, Relation::Conversion).len(), 5);
        let user = adjacency_units(&d, Relation::User);
        assert_eq!(user.len(), 1);
        assert_eq!(user[0].len(), 10);
        let ua = adjacency_units(&d, Relation::UserAdvertiser);
        assert_eq!(ua.len(), 2);
        assert_eq!(ids(ua[0].impressions.iter().map(|i| i.as_str())), ["i1", "i2", "i3", "i4"]);
        assert_eq!(ids(ua[0].conversions.iter().map(|c| c.as_str())), ["c1", "c2", "c3", "c4"]);
        assert_eq!(ids(ua[1].impressions.iter().map(|i| i.as_str())), ["i5"]);
        assert_eq!(ids(ua[1].conversions.iter().map(|c| c.as_str())), ["c5"]);
        assert!(adjacency_units(&d, Relation::UserPublisher).iter().all(|u| u.conversions.is_empty()));
    }

    #[test]
    fn removals() {
        let d = canonical_fixture_fig2();
        let first = &adjacency_units(&d, Relation::Impression)[0];
        let minus = remove_unit(&d, first).unwrap();
        assert_eq!(minus.impressions.len(), 4);
        assert!(validate_dataset(&minus).is_empty());

        let user = &adjacency_units(&d, Relation::User)[0];
        assert!(remove_unit(&d, user).unwrap().is_empty());

        let ua = &adjacency_units(&d, Relation::UserAdvertiser)[1];
        let minus = remove_unit(&d, ua).unwrap();
        assert!(minus.impression(&"i5".into()).is_none());
        assert!(minus.conversion(&"c5".into()).is_none());
        assert_eq!(minus.len(), 8);

        assert!(matches!(remove_unit(&minus, ua), Err(AdjacencyError::StaleUnit(_))));
    }

    fn fixture_cfg(relation: Relation, r: u32) -> Configuration {
        Configuration::new(Rule::LastTouch, relation, EnforcementPoint::Post, r).unwrap()
    }

    #[test]
    fn empty_dataset_has_zero_sensitivity() {
        let s = empirical_sensitivity(&Dataset::empty(), &fixture_cfg(Relation::Impression, 1), &NeighborPool::empty());
        assert_eq!(s.unwrap(), 0.0);
    }

    #[test]
    fn fixture_impression_removals() {
        // Base output is {(i2,c1),(i4,c4),(i5,c5)}. Without i2, c1 moves to
        // i1; without i4, c4 moves to i3; without i5, c5 is unattributed.
        let d = canonical_fixture_fig2();
        let cfg = fixture_cfg(Relation::Impression, 1);
        let base = run(&d, &cfg).unwrap();
        assert_eq!(base.pair_ids().len(), 3);
        let expected = [("i1", 0.0), ("i2", 2.0), ("i3", 0.0), ("i4", 2.0), ("i5", 1.0)];
        for (unit, (id, l1)) in adjacency_units(&d, Relation::Impression).iter().zip(expected) {
            assert_eq!(unit.key, ScopeKey::Impression(id.into()));
            let other = run(&remove_unit(&d, unit).unwrap(), &cfg).unwrap();
            assert_eq!(l1_distance(&base, &other), l1, "{id}");
        }
        let report = sensitivity_report(&d, &cfg, &NeighborPool::empty()).unwrap();
        assert_eq!(report.value, 2.0);
        assert_eq!(report.neighbors, 5);
        assert_eq!(report.worst.unwrap().kind, NeighborKind::Removed("impression:i2".into()));
    }

    #[test]
    fn pool_parsing_and_additions() {
        let text = r#"{"kind":"impression","id":"n1","t":0,"user":"U","publisher":"P9","advertiser":"A1","engagement":"click","unit":"g1"}
{"kind":"impression","id":"n2","t":11,"user":"W","publisher":"P1","advertiser":"A1","engagement":"view","unit":"g2"}
{"kind":"conversion","id":"n3","t":12,"user":"W","advertiser":"A1","conv_type":"purchase","value":3,"unit":"g2"}
"#;
        let pool = NeighborPool::parse_str(text).unwrap();
        assert_eq!(pool.groups.len(), 2);
        assert_eq!(NeighborPool::parse_str(&pool.to_jsonl()).unwrap(), pool);

        let d = canonical_fixture_fig2();
        let plus = add_group(&d, &pool.groups[0], Relation::Impression).unwrap();
        assert_eq!(plus.impressions[0].id.as_str(), "n1");
        assert!(add_group(&d, &pool.groups[1], Relation::UserAdvertiser).is_ok());
        assert!(add_group(&d, &pool.groups[1], Relation::Impression).is_err());
        // (U, A1) already exists.
        let bad = PoolGroup {
            unit: "dup".into(),
            impressions: vec![Impression::new("n9", 3, "U", "P1", "A1")],
            conversions: vec![],
        };
        assert!(matches!(add_group(&d, &bad, Relation::UserAdvertiser), Err(AdjacencyError::PoolGroup { .. })));
        let collide = PoolGroup {
            unit: "c".into(),
            impressions: vec![Impression::new("i1", 3, "V", "P1", "A1")],
            conversions: vec![],
        };
        assert!(matches!(add_group(&d, &collide, Relation::User), Err(AdjacencyError::PoolIdCollision(_))));

        let cfg = fixture_cfg(Relation::Impression, 1);
        let only_first = NeighborPool { groups: vec![pool.groups[0].clone()] };
        let report = sensitivity_report(&d, &cfg, &only_first).unwrap();
        assert_eq!(report.neighbors, 6);
        assert_eq!(report.value, 2.0);
    }

    #[test]
    fn missing_unit_field() {
        let text = r#"{"kind":"impression","id":"n1","t":0,"user":"U","publisher":"P9","advertiser":"A1","engagement":"click"}"#;
        assert!(matches!(NeighborPool::parse_str(text), Err(AdjacencyError::MissingUnit(1))));
    }

    #[test]
    fn conversion_relation_is_one_valid() {
        let d = canonical_fixture_fig2();
        for rule in Rule::builtins() {
            let cfg = Configuration::new(rule, Relation::Conversion, EnforcementPoint::None, 1).unwrap();
            assert!(empirical_sensitivity(&d, &cfg, &NeighborPool::empty()).unwrap() <= 1.0);
        }
    }
}
