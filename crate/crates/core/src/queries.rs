//! Measurement queries over attributed datasets and their sensitivities.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounding::AttributedDataset;
use crate::events::{Conversion, Dataset, Impression};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("invalid query: {0}")]
    Invalid(String),
    #[error("attributed pair ({impression}, {conversion}) refers to an event missing from the dataset")]
    Dangling { impression: String, conversion: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    SlicedCount,
    CappedValueSum,
    DistinctUsers,
}

/// `field == equals` over the joined attributes of a pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicePredicate {
    pub field: String,
    pub equals: String,
}

impl SlicePredicate {
    pub fn new(field: impl Into<String>, equals: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            equals: equals.into(),
        }
    }

    pub fn matches(&self, i: &Impression, c: &Conversion) -> bool {
        lookup(&self.field, i, c) == Some(self.equals.as_str())
    }
}

/// Attribute lookup for a pair. Impression fields win over conversion
/// fields, and built-in fields win over metadata.
pub fn lookup<'a>(field: &str, i: &'a Impression, c: &'a Conversion) -> Option<&'a str> {
    match field {
        "publisher" => Some(i.publisher.as_str()),
        "advertiser" => Some(i.advertiser.as_str()),
        "user" => Some(i.user.as_str()),
        "engagement" => Some(i.engagement.as_str()),
        "conv_type" => Some(c.conv_type.as_str()),
        _ => i
            .metadata
            .get(field)
            .or_else(|| c.metadata.get(field))
            .map(String::as_str),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub kind: QueryKind,
    /// Empty means a single slice matching every pair.
    #[serde(default)]
    pub slices: Vec<SlicePredicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    /// Must be set when one pair can fall into several slices.
    #[serde(default)]
    pub overlapping: bool,
}

impl QuerySpec {
    pub fn sliced_count(slices: Vec<SlicePredicate>) -> Self {
        Self {
            kind: QueryKind::SlicedCount,
            slices,
            cap: None,
            overlapping: false,
        }
    }

    pub fn capped_value_sum(cap: f64, slices: Vec<SlicePredicate>) -> Self {
        Self {
            kind: QueryKind::CappedValueSum,
            slices,
            cap: Some(cap),
            overlapping: false,
        }
    }

    pub fn distinct_users() -> Self {
        Self {
            kind: QueryKind::DistinctUsers,
            slices: Vec::new(),
            cap: None,
            overlapping: false,
        }
    }

    pub fn with_overlapping(mut self, overlapping: bool) -> Self {
        self.overlapping = overlapping;
        self
    }

    /// Output dimension.
    pub fn dimension(&self) -> usize {
        self.slices.len().max(1)
    }

    /// Largest number of slices a single pair can match: per field, the
    /// largest number of predicates sharing one value, summed over fields.
    pub fn max_overlap(&self) -> usize {
        if self.slices.is_empty() {
            return 1;
        }
        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for s in &self.slices {
            *counts.entry((s.field.as_str(), s.equals.as_str())).or_default() += 1;
        }
        let mut per_field: BTreeMap<&str, usize> = BTreeMap::new();
        for ((field, _), n) in counts {
            let best = per_field.entry(field).or_default();
            *best = (*best).max(n);
        }
        per_field.values().sum()
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        match (self.kind, self.cap) {
            (QueryKind::CappedValueSum, Some(v)) if v > 0.0 && v.is_finite() => {}
            (QueryKind::CappedValueSum, Some(v)) => {
                return Err(QueryError::Invalid(format!("cap must be positive, got {v}")))
            }
            (QueryKind::CappedValueSum, None) => {
                return Err(QueryError::Invalid("capped_value_sum requires cap".into()))
            }
            (_, Some(_)) => {
                return Err(QueryError::Invalid("cap only applies to capped_value_sum".into()))
            }
            (_, None) => {}
        }
        if self.kind == QueryKind::DistinctUsers && !self.slices.is_empty() {
            return Err(QueryError::Invalid("distinct_users does not take slices".into()));
        }
        if self.max_overlap() > 1 && !self.overlapping {
            return Err(QueryError::Invalid(format!(
                "slices overlap (a pair can match {} of them); set \"overlapping\": true",
                self.max_overlap()
            )));
        }
        Ok(())
    }
}

/// ℓ1 sensitivity of the query with respect to the attributed dataset: 1
/// for counts, `V` for capped sums, 1 for distinct users, each multiplied by
/// the slice overlap.
pub fn sensitivity_of(q: &QuerySpec) -> f64 {
    let base = match q.kind {
        QueryKind::SlicedCount | QueryKind::DistinctUsers => 1.0,
        QueryKind::CappedValueSum => q.cap.unwrap_or(f64::NAN),
    };
    base * q.max_overlap() as f64
}

/// Noiseless query answer.
pub fn evaluate(q: &QuerySpec, a: &AttributedDataset, d: &Dataset) -> Result<Vec<f64>, QueryError> {
    q.validate()?;
    let impressions: BTreeMap<&str, &Impression> =
        d.impressions.iter().map(|i| (i.id.as_str(), i)).collect();
    let conversions: BTreeMap<&str, &Conversion> =
        d.conversions.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut values = vec![0.0; q.dimension()];
    let mut users = BTreeSet::new();
    for (iid, cid, w) in a.iter() {
        let (Some(i), Some(c)) = (impressions.get(iid.as_str()), conversions.get(cid.as_str())) else {
            return Err(QueryError::Dangling {
                impression: iid.0.clone(),
                conversion: cid.0.clone(),
            });
        };
        let contribution = match q.kind {
            QueryKind::SlicedCount => w,
            QueryKind::CappedValueSum => w * c.value.min(q.cap.expect("validated")),
            QueryKind::DistinctUsers => {
                users.insert(c.user.as_str());
                continue;
            }
        };
        if q.slices.is_empty() {
            values[0] += contribution;
        } else {
            for (k, s) in q.slices.iter().enumerate() {
                if s.matches(i, c) {
                    values[k] += contribution;
                }
            }
        }
    }
    if q.kind == QueryKind::DistinctUsers {
        values[0] = users.len() as f64;
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::Rule;
    use crate::bounding::{run_post_attribution, Configuration, EnforcementPoint, Relation};
    use crate::events::canonical_fixture_fig2;

    fn per_advertiser() -> QuerySpec {
        QuerySpec::sliced_count(vec![
            SlicePredicate::new("advertiser", "A1"),
            SlicePredicate::new("advertiser", "A2"),
        ])
    }

    #[test]
    fn per_advertiser_count_on_impression_row() {
        let d = canonical_fixture_fig2();
        let cfg = Configuration::new(Rule::LastTouch, Relation::Impression, EnforcementPoint::Post, 2).unwrap();
        let a = run_post_attribution(&d, &cfg).unwrap();
        assert_eq!(evaluate(&per_advertiser(), &a, &d).unwrap(), vec![3.0, 1.0]);
    }

    #[test]
    fn empty_attribution_is_zero() {
        let d = canonical_fixture_fig2();
        let a = AttributedDataset::new();
        assert_eq!(evaluate(&per_advertiser(), &a, &d).unwrap(), vec![0.0, 0.0]);
        assert_eq!(evaluate(&QuerySpec::distinct_users(), &a, &d).unwrap(), vec![0.0]);
        assert_eq!(evaluate(&QuerySpec::capped_value_sum(5.0, vec![]), &a, &d).unwrap(), vec![0.0]);
    }

    #[test]
    fn cap_applies_per_pair() {
        let d = Dataset::new(
            vec![Impression::new("i", 1, "U", "P", "A")],
            vec![Conversion::new("c", 2, "U", "A").with_value(250.0)],
        )
        .unwrap();
        let a = AttributedDataset::from_pairs([("i", "c", 1.0)]);
        let q = QuerySpec::capped_value_sum(100.0, vec![]);
        assert_eq!(evaluate(&q, &a, &d).unwrap(), vec![100.0]);
    }

    #[test]
    fn sensitivities() {
        assert_eq!(sensitivity_of(&per_advertiser()), 1.0);
        assert_eq!(sensitivity_of(&QuerySpec::capped_value_sum(7.0, vec![])), 7.0);
        assert_eq!(sensitivity_of(&QuerySpec::distinct_users()), 1.0);
        let overlapping = QuerySpec::sliced_count(vec![
            SlicePredicate::new("publisher", "P1"),
            SlicePredicate::new("publisher", "P2"),
            SlicePredicate::new("geo", "US"),
        ])
        .with_overlapping(true);
        assert_eq!(overlapping.max_overlap(), 2);
        assert_eq!(sensitivity_of(&overlapping), 2.0);
    }

    #[test]
    fn validation() {
        let mut q = QuerySpec::sliced_count(vec![
            SlicePredicate::new("publisher", "P1"),
            SlicePredicate::new("geo", "US"),
        ]);
        assert!(q.validate().is_err());
        q.overlapping = true;
        assert!(q.validate().is_ok());
        assert!(QuerySpec::capped_value_sum(0.0, vec![]).validate().is_err());
        let mut du = QuerySpec::distinct_users();
        du.slices.push(SlicePredicate::new("publisher", "P1"));
        assert!(du.validate().is_err());
        let parsed: QuerySpec =
            serde_json::from_str(r#"{"kind":"sliced_count","slices":[{"field":"publisher","equals":"P1"}]}"#).unwrap();
        assert_eq!(parsed.slices.len(), 1);
    }

    #[test]
    fn dangling_pair_is_reported() {
        let d = canonical_fixture_fig2();
        let a = AttributedDataset::from_pairs([("ghost", "c1", 1.0)]);
        assert!(matches!(evaluate(&per_advertiser(), &a, &d), Err(QueryError::Dangling { .. })));
    }

    #[test]
    fn metadata_lookup_prefers_impression() {
        let i = Impression::new("i", 1, "U", "P", "A").with_meta("geo", "FR");
        let c = Conversion::new("c", 2, "U", "A").with_meta("geo", "DE").with_meta("campaign", "k");
        assert_eq!(lookup("geo", &i, &c), Some("FR"));
        assert_eq!(lookup("campaign", &i, &c), Some("k"));
        assert_eq!(lookup("conv_type", &i, &c), Some("purchase"));
        assert_eq!(lookup("missing", &i, &c), None);
    }
}
