//! Attribution rules: pure functions from a time-sorted impression sequence
//! and a conversion to a weight vector in the probability simplex.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Conversion, Engagement, Impression};

/// Tolerance for the outputs of the built-in rules.
pub const BUILTIN_SIMPLEX_TOL: f64 = 1e-9;
/// Tolerance for user-supplied positional or priority vectors.
pub const USER_SIMPLEX_TOL: f64 = 1e-6;

/// Weights aligned with the input impression sequence.
pub type WeightVector = Vec<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttributionError {
    #[error("attribution input has no impressions")]
    EmptyInput,
    #[error("impression {impression} does not share user and advertiser with conversion {conversion}")]
    Mismatch { impression: String, conversion: String },
    #[error("impression {impression} is later than conversion {conversion}")]
    LateImpression { impression: String, conversion: String },
    #[error("impressions are not sorted oldest first (position {0})")]
    Unsorted(usize),
    #[error("configuration error: {0}")]
    Config(String),
}

/// The position pattern a rule follows. Classification of the POS and IPA
/// families depends on it, since validity is decided per instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    LastTouch,
    FirstTouch,
    Uniform,
    TimeDecay,
    UShaped,
    Undetermined,
}

impl Shape {
    pub fn as_str(self) -> &'static str {
        match self {
            Shape::LastTouch => "last_touch",
            Shape::FirstTouch => "first_touch",
            Shape::Uniform => "uniform",
            Shape::TimeDecay => "time_decay",
            Shape::UShaped => "u_shaped",
            Shape::Undetermined => "undetermined",
        }
    }

    /// Canonical vector of length `m` for the positional shapes.
    pub fn positional_vector(self, m: usize) -> Option<WeightVector> {
        match self {
            Shape::LastTouch => Some(one_hot(m, m.checked_sub(1)?)),
            Shape::FirstTouch if m > 0 => Some(one_hot(m, 0)),
            Shape::Uniform if m > 0 => Some(vec![1.0 / m as f64; m]),
            Shape::UShaped if m > 0 => Some(u_shaped(m)),
            _ => None,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

type PositionalFn = Arc<dyn Fn(usize) -> WeightVector + Send + Sync>;
type PriorityFn = Arc<dyn Fn(&[&Impression]) -> WeightVector + Send + Sync>;

/// Parameter family of a POS rule: the vector `v_m` for each length `m`.
#[derive(Clone)]
pub enum Positional {
    /// The canonical vectors of a positional shape, for every `m`.
    Instance(Shape),
    /// Tabulated vectors; lengths missing from the table fail at call time.
    Table(BTreeMap<usize, WeightVector>),
    Custom(PositionalFn),
}

impl Positional {
    pub fn custom(f: impl Fn(usize) -> WeightVector + Send + Sync + 'static) -> Self {
        Positional::Custom(Arc::new(f))
    }

    fn vector(&self, m: usize) -> Result<WeightVector, AttributionError> {
        match self {
            Positional::Instance(shape) => shape.positional_vector(m).ok_or_else(|| {
                AttributionError::Config(format!("{shape} is not a positional shape"))
            }),
            Positional::Table(table) => table.get(&m).cloned().ok_or_else(|| {
                AttributionError::Config(format!("POS table has no vector for m = {m}"))
            }),
            Positional::Custom(f) => Ok(f(m)),
        }
    }

    fn shape(&self) -> Shape {
        match self {
            Positional::Instance(shape) => *shape,
            Positional::Table(table) => probe_shape(table.iter().map(|(m, v)| (*m, v.clone()))),
            Positional::Custom(f) => probe_shape((1..=32).map(|m| (m, f(m)))),
        }
    }
}

impl fmt::Debug for Positional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Positional::Instance(s) => f.debug_tuple("Instance").field(s).finish(),
            Positional::Table(t) => f.debug_tuple("Table").field(t).finish(),
            Positional::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Relative weight of each engagement kind for an engagement-priority rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngagementWeights {
    pub click: f64,
    pub view: f64,
}

/// Parameter of an IPA rule: a prioritisation over the impression sequence
/// that never looks at the conversion.
#[derive(Clone)]
pub enum Priority {
    Instance(Shape),
    Table(BTreeMap<usize, WeightVector>),
    /// Weight proportional to the engagement kind of each impression.
    Engagement(EngagementWeights),
    /// Caller-supplied function with the shape it claims to follow.
    Custom { shape: Shape, f: PriorityFn },
}

impl Priority {
    pub fn custom(
        shape: Shape,
        f: impl Fn(&[&Impression]) -> WeightVector + Send + Sync + 'static,
    ) -> Self {
        Priority::Custom {
            shape,
            f: Arc::new(f),
        }
    }

    fn vector(&self, impressions: &[&Impression]) -> Result<WeightVector, AttributionError> {
        let m = impressions.len();
        match self {
            Priority::Instance(shape) => shape.positional_vector(m).ok_or_else(|| {
                AttributionError::Config(format!("{shape} is not a priority shape"))
            }),
            Priority::Table(table) => table.get(&m).cloned().ok_or_else(|| {
                AttributionError::Config(format!("IPA table has no vector for m = {m}"))
            }),
            Priority::Engagement(w) => {
                let raw: Vec<f64> = impressions
                    .iter()
                    .map(|i| match i.engagement {
                        Engagement::Click => w.click,
                        Engagement::View => w.view,
                    })
                    .collect();
                let total: f64 = raw.iter().sum();
                if !(total > 0.0 && total.is_finite()) {
                    return Err(AttributionError::Config(
                        "engagement weights give zero total priority".into(),
                    ));
                }
                Ok(raw.into_iter().map(|x| x / total).collect())
            }
            Priority::Custom { f, .. } => Ok(f(impressions)),
        }
    }

    fn shape(&self) -> Shape {
        match self {
            Priority::Instance(shape) => *shape,
            Priority::Table(table) => probe_shape(table.iter().map(|(m, v)| (*m, v.clone()))),
            Priority::Engagement(w) if w.click == w.view && w.click > 0.0 => Shape::Uniform,
            Priority::Engagement(_) => Shape::Undetermined,
            Priority::Custom { shape, .. } => *shape,
        }
    }
}

impl fmt::Debug for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Priority::Instance(s) => f.debug_tuple("Instance").field(s).finish(),
            Priority::Table(t) => f.debug_tuple("Table").field(t).finish(),
            Priority::Engagement(w) => f.debug_tuple("Engagement").field(w).finish(),
            Priority::Custom { shape, .. } => {
                f.debug_struct("Custom").field("shape", shape).finish_non_exhaustive()
            }
        }
    }
}

/// An attribution rule handle.
#[derive(Debug, Clone)]
pub enum Rule {
    LastTouch,
    FirstTouch,
    Uniform,
    ExpDecay { half_life: f64 },
    UShaped,
    Positional(Positional),
    ImpressionPriority(Priority),
}

impl Rule {
    /// The five parameter-free-ish built-ins, EXP at half-life 1.
    pub fn builtins() -> Vec<Rule> {
        vec![
            Rule::LastTouch,
            Rule::FirstTouch,
            Rule::Uniform,
            Rule::ExpDecay { half_life: 1.0 },
            Rule::UShaped,
        ]
    }

    pub fn kind(&self) -> RuleKind {
        match self {
            Rule::LastTouch => RuleKind::Lta,
            Rule::FirstTouch => RuleKind::Fta,
            Rule::Uniform => RuleKind::Uni,
            Rule::ExpDecay { .. } => RuleKind::Exp,
            Rule::UShaped => RuleKind::Us,
            Rule::Positional(_) => RuleKind::Pos,
            Rule::ImpressionPriority(_) => RuleKind::Ipa,
        }
    }

    /// Short human label, e.g. `EXP(half_life=1)` or `POS(first_touch)`.
    pub fn label(&self) -> String {
        match self {
            Rule::ExpDecay { half_life } => format!("EXP(half_life={half_life})"),
            Rule::Positional(Positional::Instance(s)) => format!("POS({s})"),
            Rule::Positional(Positional::Table(t)) => format!("POS(table:{:?})", t),
            Rule::Positional(Positional::Custom(_)) => "POS(custom)".into(),
            Rule::ImpressionPriority(Priority::Instance(s)) => format!("IPA({s})"),
            Rule::ImpressionPriority(Priority::Table(t)) => format!("IPA(table:{:?})", t),
            Rule::ImpressionPriority(Priority::Engagement(w)) => {
                format!("IPA(click={},view={})", w.click, w.view)
            }
            Rule::ImpressionPriority(Priority::Custom { shape, .. }) => {
                format!("IPA(custom:{shape})")
            }
            other => other.kind().as_str().to_owned(),
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            Rule::LastTouch => Shape::LastTouch,
            Rule::FirstTouch => Shape::FirstTouch,
            Rule::Uniform => Shape::Uniform,
            Rule::ExpDecay { .. } => Shape::TimeDecay,
            Rule::UShaped => Shape::UShaped,
            Rule::Positional(p) => p.shape(),
            Rule::ImpressionPriority(p) => p.shape(),
        }
    }

    /// Attributes one conversion over its eligible impressions.
    pub fn attribute(
        &self,
        impressions: &[&Impression],
        conversion: &Conversion,
    ) -> Result<WeightVector, AttributionError> {
        check_input(impressions, conversion)?;
        let m = impressions.len();
        let weights = match self {
            Rule::LastTouch => one_hot(m, m - 1),
            Rule::FirstTouch => one_hot(m, 0),
            Rule::Uniform => vec![1.0 / m as f64; m],
            Rule::ExpDecay { half_life } => exp_decay(impressions, conversion, *half_life)?,
            Rule::UShaped => u_shaped(m),
            Rule::Positional(p) => checked_user_vector(p.vector(m)?, m, "POS")?,
            Rule::ImpressionPriority(p) => checked_user_vector(p.vector(impressions)?, m, "IPA")?,
        };
        Ok(weights)
    }
}

fn check_input(impressions: &[&Impression], c: &Conversion) -> Result<(), AttributionError> {
    if impressions.is_empty() {
        return Err(AttributionError::EmptyInput);
    }
    for (k, i) in impressions.iter().enumerate() {
        if i.user != c.user || i.advertiser != c.advertiser {
            return Err(AttributionError::Mismatch {
                impression: i.id.0.clone(),
                conversion: c.id.0.clone(),
            });
        }
        if i.timestamp > c.timestamp {
            return Err(AttributionError::LateImpression {
                impression: i.id.0.clone(),
                conversion: c.id.0.clone(),
            });
        }
        if k > 0 && impressions[k - 1].order_key() >= i.order_key() {
            return Err(AttributionError::Unsorted(k));
        }
    }
    Ok(())
}

fn one_hot(m: usize, hot: usize) -> WeightVector {
    let mut w = vec![0.0; m];
    w[hot] = 1.0;
    w
}

fn u_shaped(m: usize) -> WeightVector {
    match m {
        1 => vec![1.0],
        2 => vec![0.5, 0.5],
        _ => {
            let mut w = vec![0.2 / (m - 2) as f64; m];
            w[0] = 0.4;
            w[m - 1] = 0.4;
            w
        }
    }
}

fn exp_decay(
    impressions: &[&Impression],
    c: &Conversion,
    half_life: f64,
) -> Result<WeightVector, AttributionError> {
    if !(half_life > 0.0 && half_life.is_finite()) {
        return Err(AttributionError::Config(format!(
            "EXP half_life must be positive, got {half_life}"
        )));
    }
    let decay = |age: u64| 0.5f64.powf(age as f64 / half_life);
    let raw: Vec<f64> = impressions.iter().map(|i| decay(c.timestamp - i.timestamp)).collect();
    let total = raw.iter().fold(0.0, |acc, x| acc + x);
    if total >= f64::MIN_POSITIVE {
        return Ok(raw.into_iter().map(|x| x / total).collect());
    }
    // Every raw weight underflowed. Measuring ages from the most recent
    // impression gives the same normalised vector without the underflow.
    let newest = impressions[impressions.len() - 1].timestamp;
    let raw: Vec<f64> = impressions.iter().map(|i| decay(newest - i.timestamp)).collect();
    let total = raw.iter().fold(0.0, |acc, x| acc + x);
    Ok(raw.into_iter().map(|x| x / total).collect())
}

fn checked_user_vector(
    w: WeightVector,
    m: usize,
    family: &str,
) -> Result<WeightVector, AttributionError> {
    if w.len() != m {
        return Err(AttributionError::Config(format!(
            "{family} vector for m = {m} has length {}",
            w.len()
        )));
    }
    if !in_simplex(&w, USER_SIMPLEX_TOL) {
        return Err(AttributionError::Config(format!(
            "{family} vector for m = {m} is not in the simplex: {w:?}"
        )));
    }
    Ok(w)
}

/// Non-negative entries summing to 1 within `tol`.
pub fn in_simplex(w: &[f64], tol: f64) -> bool {
    !w.is_empty()
        && w.iter().all(|x| x.is_finite() && *x >= -tol)
        && (w.iter().sum::<f64>() - 1.0).abs() <= tol
}

fn probe_shape(vectors: impl Iterator<Item = (usize, WeightVector)>) -> Shape {
    const CANDIDATES: [Shape; 4] = [
        Shape::FirstTouch,
        Shape::LastTouch,
        Shape::Uniform,
        Shape::UShaped,
    ];
    let mut alive = CANDIDATES.to_vec();
    let mut any = false;
    for (m, v) in vectors {
        any = true;
        alive.retain(|shape| {
            shape.positional_vector(m).is_some_and(|expected| {
                expected.len() == v.len()
                    && expected
                        .iter()
                        .zip(&v)
                        .all(|(a, b)| (a - b).abs() <= USER_SIMPLEX_TOL)
            })
        });
    }
    match alive.first() {
        Some(shape) if any => *shape,
        _ => Shape::Undetermined,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleKind {
    #[serde(rename = "LTA")]
    Lta,
    #[serde(rename = "FTA")]
    Fta,
    #[serde(rename = "UNI")]
    Uni,
    #[serde(rename = "EXP")]
    Exp,
    #[serde(rename = "US", alias = "U-S")]
    Us,
    #[serde(rename = "POS")]
    Pos,
    #[serde(rename = "IPA")]
    Ipa,
}

impl RuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::Lta => "LTA",
            RuleKind::Fta => "FTA",
            RuleKind::Uni => "UNI",
            RuleKind::Exp => "EXP",
            RuleKind::Us => "US",
            RuleKind::Pos => "POS",
            RuleKind::Ipa => "IPA",
        }
    }
}

impl std::str::FromStr for RuleKind {
    type Err = AttributionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "LTA" => RuleKind::Lta,
            "FTA" => RuleKind::Fta,
            "UNI" => RuleKind::Uni,
            "EXP" => RuleKind::Exp,
            "US" | "U-S" => RuleKind::Us,
            "POS" => RuleKind::Pos,
            "IPA" => RuleKind::Ipa,
            other => return Err(AttributionError::Config(format!("unknown rule {other:?}"))),
        })
    }
}

/// Serializable rule description, e.g. `{"rule":"EXP","half_life":1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionRuleSpec {
    #[serde(alias = "kind")]
    pub rule: RuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_life: Option<f64>,
    /// POS or IPA vectors keyed by sequence length.
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "pos_vectors")]
    pub vectors: Option<BTreeMap<usize, WeightVector>>,
    /// Named POS or IPA instance such as `first_touch` or `uniform`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<Shape>,
    /// IPA only: priority proportional to engagement kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engagement: Option<EngagementWeights>,
}

impl AttributionRuleSpec {
    pub fn new(rule: RuleKind) -> Self {
        Self {
            rule,
            half_life: None,
            vectors: None,
            instance: None,
            engagement: None,
        }
    }
}

/// Builds a rule handle from its description.
pub fn make_rule(spec: &AttributionRuleSpec) -> Result<Rule, AttributionError> {
    let forbid = |present: bool, field: &str| {
        if present {
            Err(AttributionError::Config(format!(
                "{field} is not a parameter of {}",
                spec.rule.as_str()
            )))
        } else {
            Ok(())
        }
    };
    if spec.rule != RuleKind::Exp {
        forbid(spec.half_life.is_some(), "half_life")?;
    }
    if !matches!(spec.rule, RuleKind::Pos | RuleKind::Ipa) {
        forbid(spec.vectors.is_some(), "vectors")?;
        forbid(spec.instance.is_some(), "instance")?;
    }
    if spec.rule != RuleKind::Ipa {
        forbid(spec.engagement.is_some(), "engagement")?;
    }
    let positional_instance = |shape: Shape| match shape {
        Shape::FirstTouch | Shape::LastTouch | Shape::Uniform | Shape::UShaped => Ok(shape),
        other => Err(AttributionError::Config(format!(
            "{other} is not a positional instance"
        ))),
    };
    let rule = match spec.rule {
        RuleKind::Lta => Rule::LastTouch,
        RuleKind::Fta => Rule::FirstTouch,
        RuleKind::Uni => Rule::Uniform,
        RuleKind::Us => Rule::UShaped,
        RuleKind::Exp => match spec.half_life {
            Some(h) if h > 0.0 && h.is_finite() => Rule::ExpDecay { half_life: h },
            Some(h) => {
                return Err(AttributionError::Config(format!(
                    "EXP half_life must be positive, got {h}"
                )))
            }
            None => return Err(AttributionError::Config("EXP requires half_life".into())),
        },
        RuleKind::Pos => match (&spec.vectors, spec.instance) {
            (Some(table), None) => Rule::Positional(Positional::Table(table.clone())),
            (None, Some(shape)) => Rule::Positional(Positional::Instance(positional_instance(shape)?)),
            _ => {
                return Err(AttributionError::Config(
                    "POS requires exactly one of vectors or instance".into(),
                ))
            }
        },
        RuleKind::Ipa => match (&spec.vectors, spec.instance, spec.engagement) {
            (Some(table), None, None) => Rule::ImpressionPriority(Priority::Table(table.clone())),
            (None, Some(shape), None) => {
                Rule::ImpressionPriority(Priority::Instance(positional_instance(shape)?))
            }
            (None, None, Some(w)) => {
                if !(w.click >= 0.0 && w.view >= 0.0 && w.click.is_finite() && w.view.is_finite())
                {
                    return Err(AttributionError::Config(
                        "engagement weights must be finite and non-negative".into(),
                    ));
                }
                Rule::ImpressionPriority(Priority::Engagement(w))
            }
            _ => {
                return Err(AttributionError::Config(
                    "IPA requires exactly one of vectors, instance or engagement".into(),
                ))
            }
        },
    };
    Ok(rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::canonical_credit_path;

    fn path() -> (Vec<Impression>, Conversion) {
        let d = canonical_credit_path();
        (d.impressions, d.conversions[0].clone())
    }

    fn run(rule: &Rule) -> WeightVector {
        let (imps, c) = path();
        let refs: Vec<&Impression> = imps.iter().collect();
        rule.attribute(&refs, &c).unwrap()
    }

    fn spec(json: &str) -> AttributionRuleSpec {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn credit_path_rows() {
        assert_eq!(run(&Rule::LastTouch), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(run(&Rule::FirstTouch), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(run(&Rule::Uniform), vec![0.25; 4]);
        let exp = run(&Rule::ExpDecay { half_life: 1.0 });
        for (got, want) in exp.iter().zip([0.0667, 0.1333, 0.2667, 0.5333]) {
            assert!((got - want).abs() < 1e-3, "{exp:?}");
        }
        // 2^k / 15 exactly.
        for (k, got) in exp.iter().enumerate() {
            assert!((got - f64::from(1u32 << k) / 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn u_shaped_vectors() {
        assert_eq!(u_shaped(1), vec![1.0]);
        assert_eq!(u_shaped(2), vec![0.5, 0.5]);
        assert_eq!(u_shaped(4), vec![0.4, 0.1, 0.1, 0.4]);
        assert!(in_simplex(&u_shaped(7), BUILTIN_SIMPLEX_TOL));
    }

    #[test]
    fn single_impression_gets_full_credit() {
        let i = Impression::new("i", 3, "U", "P", "A");
        let c = Conversion::new("c", 9, "U", "A");
        for rule in Rule::builtins() {
            assert_eq!(rule.attribute(&[&i], &c).unwrap(), vec![1.0], "{rule:?}");
        }
    }

    #[test]
    fn pos_first_touch_acts_like_fta() {
        let pos = make_rule(&spec(r#"{"rule":"POS","instance":"first_touch"}"#)).unwrap();
        assert_eq!(run(&pos), run(&Rule::FirstTouch));
        assert_eq!(pos.shape(), Shape::FirstTouch);
    }

    #[test]
    fn pos_table_is_checked_at_call_time() {
        let pos = make_rule(&spec(r#"{"rule":"POS","vectors":{"4":[0.5,0.5,0.5,0.0]}}"#)).unwrap();
        let (imps, c) = path();
        let refs: Vec<&Impression> = imps.iter().collect();
        assert!(matches!(pos.attribute(&refs, &c), Err(AttributionError::Config(_))));
        assert!(matches!(pos.attribute(&refs[..2], &c), Err(AttributionError::Config(_))));

        let coarse = make_rule(&spec(r#"{"rule":"POS","vectors":{"4":[0.3333333,0.3333333,0.3333334,0]}}"#))
            .unwrap();
        assert!(coarse.attribute(&refs, &c).is_ok());
    }

    #[test]
    fn exp_half_life_is_validated() {
        assert!(make_rule(&spec(r#"{"rule":"EXP","half_life":0}"#)).is_err());
        assert!(make_rule(&spec(r#"{"rule":"EXP","half_life":-2}"#)).is_err());
        assert!(make_rule(&spec(r#"{"rule":"EXP"}"#)).is_err());
        assert!(make_rule(&spec(r#"{"rule":"LTA","half_life":1}"#)).is_err());
        let rule = make_rule(&spec(r#"{"rule":"EXP","half_life":1}"#)).unwrap();
        assert!(matches!(rule, Rule::ExpDecay { half_life } if half_life == 1.0));
    }

    #[test]
    fn exp_survives_underflow() {
        let a = Impression::new("a", 0, "U", "P", "A");
        let b = Impression::new("b", 10, "U", "P", "A");
        let c = Conversion::new("c", 1_000_000, "U", "A");
        let w = Rule::ExpDecay { half_life: 1.0 }.attribute(&[&a, &b], &c).unwrap();
        assert!(in_simplex(&w, BUILTIN_SIMPLEX_TOL), "{w:?}");
        assert!(w[1] > w[0]);
    }

    #[test]
    fn exp_equal_times_is_uniform() {
        let imps: Vec<Impression> = (0..5)
            .map(|k| Impression::new(format!("i{k}"), 7, "U", "P", "A"))
            .collect();
        let refs: Vec<&Impression> = imps.iter().collect();
        let c = Conversion::new("z", 7, "U", "A");
        assert_eq!(
            Rule::ExpDecay { half_life: 3.0 }.attribute(&refs, &c).unwrap(),
            Rule::Uniform.attribute(&refs, &c).unwrap()
        );
    }

    #[test]
    fn input_preconditions() {
        let c = Conversion::new("c", 5, "U", "A");
        assert_eq!(Rule::Uniform.attribute(&[], &c), Err(AttributionError::EmptyInput));
        let other_user = Impression::new("i", 1, "V", "P", "A");
        assert!(matches!(
            Rule::Uniform.attribute(&[&other_user], &c),
            Err(AttributionError::Mismatch { .. })
        ));
        let late = Impression::new("i", 6, "U", "P", "A");
        assert!(matches!(
            Rule::Uniform.attribute(&[&late], &c),
            Err(AttributionError::LateImpression { .. })
        ));
        let a = Impression::new("a", 2, "U", "P", "A");
        let b = Impression::new("b", 1, "U", "P", "A");
        assert_eq!(Rule::Uniform.attribute(&[&a, &b], &c), Err(AttributionError::Unsorted(1)));
    }

    #[test]
    fn ipa_engagement_ignores_conversion() {
        let rule = make_rule(&spec(r#"{"rule":"IPA","engagement":{"click":3,"view":1}}"#)).unwrap();
        let (imps, c) = path();
        let refs: Vec<&Impression> = imps.iter().collect();
        let w = rule.attribute(&refs, &c).unwrap();
        assert_eq!(w, vec![0.3, 0.3, 0.1, 0.3]);
        let later = Conversion::new("c9", 90, "U", "A").with_value(3.0);
        assert_eq!(rule.attribute(&refs, &later).unwrap(), w);
        assert_eq!(rule.shape(), Shape::Undetermined);
    }

    #[test]
    fn shapes_are_probed_from_tables() {
        let table = |json: &str| make_rule(&spec(json)).unwrap().shape();
        assert_eq!(table(r#"{"rule":"POS","vectors":{"1":[1],"2":[0,1],"3":[0,0,1]}}"#), Shape::LastTouch);
        assert_eq!(table(r#"{"rule":"POS","vectors":{"2":[0.5,0.5],"3":[0.3333333,0.3333333,0.3333333]}}"#), Shape::Uniform);
        assert_eq!(table(r#"{"rule":"IPA","vectors":{"2":[0.7,0.3]}}"#), Shape::Undetermined);
        let custom = Rule::Positional(Positional::custom(|m| one_hot(m, 0)));
        assert_eq!(custom.shape(), Shape::FirstTouch);
    }

    #[test]
    fn spec_rejects_bad_combinations() {
        assert!(make_rule(&spec(r#"{"rule":"POS"}"#)).is_err());
        assert!(make_rule(&spec(r#"{"rule":"POS","instance":"time_decay"}"#)).is_err());
        assert!(make_rule(&spec(r#"{"rule":"UNI","instance":"uniform"}"#)).is_err());
        assert!(serde_json::from_str::<AttributionRuleSpec>(r#"{"rule":"XYZ"}"#).is_err());
        assert_eq!(spec(r#"{"kind":"U-S"}"#).rule, RuleKind::Us);
    }
}
