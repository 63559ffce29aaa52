//! Event data model: impressions, conversions, and the chronologically
//! ordered [`Dataset`] every attribution system consumes.
//!
//! Events are totally ordered by `(timestamp, id)`. Ids are unique across
//! both event kinds, so the order is strict and an impression "comes before"
//! a conversion exactly when its key is smaller.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

id_type!(
    /// Opaque impression identifier.
    ImpressionId
);
id_type!(
    /// Opaque conversion identifier.
    ConversionId
);
id_type!(UserId);
id_type!(PublisherId);
id_type!(AdvertiserId);

/// Integer time in abstract units.
pub type Timestamp = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engagement {
    Click,
    View,
}

impl Engagement {
    pub fn as_str(self) -> &'static str {
        match self {
            Engagement::Click => "click",
            Engagement::View => "view",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversionType {
    Purchase,
    Signup,
    AddToCart,
    Other,
}

impl ConversionType {
    pub fn as_str(self) -> &'static str {
        match self {
            ConversionType::Purchase => "purchase",
            ConversionType::Signup => "signup",
            ConversionType::AddToCart => "add_to_cart",
            ConversionType::Other => "other",
        }
    }
}

pub type Metadata = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct Impression {
    pub id: ImpressionId,
    pub timestamp: Timestamp,
    pub user: UserId,
    pub publisher: PublisherId,
    pub advertiser: AdvertiserId,
    pub engagement: Engagement,
    pub metadata: Metadata,
}

impl Impression {
    /// Click impression with empty metadata.
    pub fn new(
        id: impl Into<String>,
        timestamp: Timestamp,
        user: impl Into<String>,
        publisher: impl Into<String>,
        advertiser: impl Into<String>,
    ) -> Self {
        Self {
            id: ImpressionId::new(id),
            timestamp,
            user: UserId::new(user),
            publisher: PublisherId::new(publisher),
            advertiser: AdvertiserId::new(advertiser),
            engagement: Engagement::Click,
            metadata: Metadata::new(),
        }
    }

    pub fn with_engagement(mut self, engagement: Engagement) -> Self {
        self.engagement = engagement;
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn order_key(&self) -> (Timestamp, &str) {
        (self.timestamp, self.id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub id: ConversionId,
    pub timestamp: Timestamp,
    pub user: UserId,
    pub advertiser: AdvertiserId,
    pub conv_type: ConversionType,
    pub value: f64,
    pub metadata: Metadata,
}

impl Conversion {
    /// Purchase conversion of value 0 with empty metadata.
    pub fn new(
        id: impl Into<String>,
        timestamp: Timestamp,
        user: impl Into<String>,
        advertiser: impl Into<String>,
    ) -> Self {
        Self {
            id: ConversionId::new(id),
            timestamp,
            user: UserId::new(user),
            advertiser: AdvertiserId::new(advertiser),
            conv_type: ConversionType::Purchase,
            value: 0.0,
            metadata: Metadata::new(),
        }
    }

    pub fn with_value(mut self, value: f64) -> Self {
        self.value = value;
        self
    }

    pub fn with_type(mut self, conv_type: ConversionType) -> Self {
        self.conv_type = conv_type;
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn order_key(&self) -> (Timestamp, &str) {
        (self.timestamp, self.id.as_str())
    }
}

/// Borrowed view of either event kind, in global chronological order.
#[derive(Debug, Clone, Copy)]
pub enum EventRef<'a> {
    Impression(&'a Impression),
    Conversion(&'a Conversion),
}

impl<'a> EventRef<'a> {
    pub fn order_key(&self) -> (Timestamp, &'a str) {
        match self {
            EventRef::Impression(i) => (i.timestamp, i.id.as_str()),
            EventRef::Conversion(c) => (c.timestamp, c.id.as_str()),
        }
    }
}

#[derive(Debug, Error)]
pub enum EventsError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("conversion {id:?} has invalid value {value}")]
    InvalidValue { id: String, value: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable event log. Both lists are sorted by `(timestamp, id)` and ids
/// are unique across them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub impressions: Vec<Impression>,
    pub conversions: Vec<Conversion>,
}

impl Dataset {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Sorts both lists and checks id uniqueness and conversion values.
    pub fn new(
        mut impressions: Vec<Impression>,
        mut conversions: Vec<Conversion>,
    ) -> Result<Self, EventsError> {
        let mut seen = HashSet::with_capacity(impressions.len() + conversions.len());
        for id in impressions
            .iter()
            .map(|i| i.id.as_str())
            .chain(conversions.iter().map(|c| c.id.as_str()))
        {
            if !seen.insert(id) {
                return Err(EventsError::DuplicateId(id.to_owned()));
            }
        }
        if let Some(c) = conversions
            .iter()
            .find(|c| !(c.value.is_finite() && c.value >= 0.0))
        {
            return Err(EventsError::InvalidValue {
                id: c.id.0.clone(),
                value: c.value,
            });
        }
        impressions.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        conversions.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        Ok(Self {
            impressions,
            conversions,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.impressions.is_empty() && self.conversions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.impressions.len() + self.conversions.len()
    }

    /// All events merged in `(timestamp, id)` order.
    pub fn events(&self) -> Vec<EventRef<'_>> {
        let mut out = Vec::with_capacity(self.len());
        let (mut a, mut b) = (0, 0);
        while a < self.impressions.len() || b < self.conversions.len() {
            let take_impression = match (self.impressions.get(a), self.conversions.get(b)) {
                (Some(i), Some(c)) => i.order_key() < c.order_key(),
                (Some(_), None) => true,
                _ => false,
            };
            if take_impression {
                out.push(EventRef::Impression(&self.impressions[a]));
                a += 1;
            } else {
                out.push(EventRef::Conversion(&self.conversions[b]));
                b += 1;
            }
        }
        out
    }

    pub fn impression(&self, id: &ImpressionId) -> Option<&Impression> {
        self.impressions.iter().find(|i| &i.id == id)
    }

    pub fn conversion(&self, id: &ConversionId) -> Option<&Conversion> {
        self.conversions.iter().find(|c| &c.id == id)
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.impressions.iter().any(|i| i.id.as_str() == id)
            || self.conversions.iter().any(|c| c.id.as_str() == id)
    }

    /// Serializes as JSON lines in global chronological order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in self.events() {
            let record = match event {
                EventRef::Impression(i) => EventRecord::from_impression(i, None),
                EventRef::Conversion(c) => EventRecord::from_conversion(c, None),
            };
            out.push_str(&serde_json::to_string(&record).expect("event records serialize"));
            out.push('\n');
        }
        out
    }
}

/// One line of the JSON-lines event format. `unit` is only meaningful in
/// neighbor pool files and ignored elsewhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventRecord {
    Impression {
        id: String,
        t: Timestamp,
        user: String,
        publisher: String,
        advertiser: String,
        engagement: Engagement,
        #[serde(default)]
        meta: Metadata,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
    },
    Conversion {
        id: String,
        t: Timestamp,
        user: String,
        advertiser: String,
        conv_type: ConversionType,
        #[serde(default)]
        value: f64,
        #[serde(default)]
        meta: Metadata,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
    },
}

/// A parsed record, split by kind.
#[derive(Debug, Clone)]
pub enum Event {
    Impression(Impression),
    Conversion(Conversion),
}

impl EventRecord {
    pub fn from_impression(i: &Impression, unit: Option<String>) -> Self {
        EventRecord::Impression {
            id: i.id.0.clone(),
            t: i.timestamp,
            user: i.user.0.clone(),
            publisher: i.publisher.0.clone(),
            advertiser: i.advertiser.0.clone(),
            engagement: i.engagement,
            meta: i.metadata.clone(),
            unit,
        }
    }

    pub fn from_conversion(c: &Conversion, unit: Option<String>) -> Self {
        EventRecord::Conversion {
            id: c.id.0.clone(),
            t: c.timestamp,
            user: c.user.0.clone(),
            advertiser: c.advertiser.0.clone(),
            conv_type: c.conv_type,
            value: c.value,
            meta: c.metadata.clone(),
            unit,
        }
    }

    pub fn unit(&self) -> Option<&str> {
        match self {
            EventRecord::Impression { unit, .. } | EventRecord::Conversion { unit, .. } => {
                unit.as_deref()
            }
        }
    }

    pub fn into_event(self) -> Event {
        match self {
            EventRecord::Impression {
                id,
                t,
                user,
                publisher,
                advertiser,
                engagement,
                meta,
                ..
            } => Event::Impression(Impression {
                id: ImpressionId(id),
                timestamp: t,
                user: UserId(user),
                publisher: PublisherId(publisher),
                advertiser: AdvertiserId(advertiser),
                engagement,
                metadata: meta,
            }),
            EventRecord::Conversion {
                id,
                t,
                user,
                advertiser,
                conv_type,
                value,
                meta,
                ..
            } => Event::Conversion(Conversion {
                id: ConversionId(id),
                timestamp: t,
                user: UserId(user),
                advertiser: AdvertiserId(advertiser),
                conv_type,
                value,
                metadata: meta,
            }),
        }
    }
}

/// Parses one non-blank line. `line` is 1-based and only used for errors.
pub fn parse_record(text: &str, line: usize) -> Result<EventRecord, EventsError> {
    serde_json::from_str::<EventRecord>(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => EventsError::Schema {
                line,
                message: e.to_string(),
            },
            _ => EventsError::Malformed {
                line,
                message: e.to_string(),
            },
        }
    })
}

/// Reads a JSON-lines event stream into a sorted [`Dataset`]. Blank lines
/// are skipped; input order is irrelevant.
pub fn parse_events<R: BufRead>(reader: R) -> Result<Dataset, EventsError> {
    let mut impressions = Vec::new();
    let mut conversions = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, idx + 1)?.into_event() {
            Event::Impression(i) => impressions.push(i),
            Event::Conversion(c) => conversions.push(c),
        }
    }
    Dataset::new(impressions, conversions)
}

pub fn parse_events_str(text: &str) -> Result<Dataset, EventsError> {
    parse_events(text.as_bytes())
}

/// Lists every broken dataset invariant; empty means the dataset is valid.
pub fn validate_dataset(d: &Dataset) -> Vec<String> {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for id in d
        .impressions
        .iter()
        .map(|i| i.id.as_str())
        .chain(d.conversions.iter().map(|c| c.id.as_str()))
    {
        if !seen.insert(id) {
            violations.push(format!("duplicate id {id:?}"));
        }
    }
    for (idx, pair) in d.impressions.windows(2).enumerate() {
        if pair[0].order_key() >= pair[1].order_key() {
            violations.push(format!(
                "ordering violated at index {} of impressions ({:?} before {:?})",
                idx + 1,
                pair[0].id.as_str(),
                pair[1].id.as_str()
            ));
        }
    }
    for (idx, pair) in d.conversions.windows(2).enumerate() {
        if pair[0].order_key() >= pair[1].order_key() {
            violations.push(format!(
                "ordering violated at index {} of conversions ({:?} before {:?})",
                idx + 1,
                pair[0].id.as_str(),
                pair[1].id.as_str()
            ));
        }
    }
    for c in &d.conversions {
        if !(c.value.is_finite() && c.value >= 0.0) {
            violations.push(format!("conversion {:?} has negative or non-finite value", c.id.as_str()));
        }
    }
    violations
}

/// One user converting on two advertisers after impressions on five
/// publishers. Reproduces both capping examples: conversions `c1..c3` follow
/// `i2`, `c4` follows `i4`, and `c5` on the second advertiser follows `i5`.
pub fn canonical_fixture_fig2() -> Dataset {
    let impressions = vec![
        Impression::new("i1", 1, "U", "P1", "A1"),
        Impression::new("i2", 2, "U", "P2", "A1"),
        Impression::new("i3", 6, "U", "P3", "A1").with_engagement(Engagement::View),
        Impression::new("i4", 7, "U", "P4", "A1"),
        Impression::new("i5", 9, "U", "P5", "A2"),
    ];
    let conversions = vec![
        Conversion::new("c1", 3, "U", "A1").with_value(20.0),
        Conversion::new("c2", 4, "U", "A1").with_value(35.0),
        Conversion::new("c3", 5, "U", "A1")
            .with_type(ConversionType::AddToCart)
            .with_value(0.0),
        Conversion::new("c4", 8, "U", "A1").with_value(120.0),
        Conversion::new("c5", 10, "U", "A2")
            .with_type(ConversionType::Signup)
            .with_value(0.0),
    ];
    Dataset::new(impressions, conversions).expect("fixture is valid")
}

/// Four equally spaced impressions on four publishers (the third a view)
/// followed by one conversion at `t = 5`.
pub fn canonical_credit_path() -> Dataset {
    let impressions = vec![
        Impression::new("i1", 1, "U", "publisher1", "A"),
        Impression::new("i2", 2, "U", "publisher2", "A"),
        Impression::new("i3", 3, "U", "publisher3", "A").with_engagement(Engagement::View),
        Impression::new("i4", 4, "U", "publisher4", "A"),
    ];
    let conversions = vec![Conversion::new("c1", 5, "U", "A").with_value(50.0)];
    Dataset::new(impressions, conversions).expect("fixture is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE_STREAM: &str = r#"{"kind":"conversion","id":"c5","t":10,"user":"U","advertiser":"A2","conv_type":"signup","value":0,"meta":{}}
{"kind":"impression","id":"i1","t":1,"user":"U","publisher":"P1","advertiser":"A1","engagement":"click","meta":{}}
{"kind":"impression","id":"i2","t":2,"user":"U","publisher":"P2","advertiser":"A1","engagement":"click","meta":{}}
{"kind":"conversion","id":"c1","t":3,"user":"U","advertiser":"A1","conv_type":"purchase","value":20,"meta":{}}
{"kind":"conversion","id":"c2","t":4,"user":"U","advertiser":"A1","conv_type":"purchase","value":35}
{"kind":"conversion","id":"c3","t":5,"user":"U","advertiser":"A1","conv_type":"add_to_cart"}

{"kind":"impression","id":"i3","t":6,"user":"U","publisher":"P3","advertiser":"A1","engagement":"view"}
{"kind":"impression","id":"i4","t":7,"user":"U","publisher":"P4","advertiser":"A1","engagement":"click"}
{"kind":"conversion","id":"c4","t":8,"user":"U","advertiser":"A1","conv_type":"purchase","value":120.0}
{"kind":"impression","id":"i5","t":9,"user":"U","publisher":"P5","advertiser":"A2","engagement":"click","meta":{}}
"#;

    #[test]
    fn empty_stream_gives_empty_dataset() {
        let d = parse_events_str("").unwrap();
        assert!(d.impressions.is_empty());
        assert!(d.conversions.is_empty());
    }

    #[test]
    fn equal_timestamps_break_ties_by_id() {
        let text = r#"{"kind":"impression","id":"b","t":4,"user":"U","publisher":"P","advertiser":"A","engagement":"view"}
{"kind":"impression","id":"a","t":4,"user":"U","publisher":"P","advertiser":"A","engagement":"click"}"#;
        let d = parse_events_str(text).unwrap();
        let ids: Vec<_> = d.impressions.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn stream_parses_to_fixture() {
        let d = parse_events_str(FIXTURE_STREAM).unwrap();
        assert_eq!(d, canonical_fixture_fig2());
        assert!(validate_dataset(&d).is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "\n{\"kind\":\"impression\",\"id\":\"a\",\"t\":1,";
        match parse_events_str(text) {
            Err(EventsError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_schema_error() {
        let text = r#"{"kind":"conversion","id":"c","t":1,"user":"U","conv_type":"other"}"#;
        assert!(matches!(
            parse_events_str(text),
            Err(EventsError::Schema { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_kind_is_schema_error() {
        let text = r#"{"kind":"pageview","id":"c","t":1}"#;
        assert!(matches!(parse_events_str(text), Err(EventsError::Schema { .. })));
    }

    #[test]
    fn duplicate_id_across_kinds_is_rejected() {
        let text = r#"{"kind":"impression","id":"x","t":1,"user":"U","publisher":"P","advertiser":"A","engagement":"click"}
{"kind":"conversion","id":"x","t":2,"user":"U","advertiser":"A","conv_type":"other"}"#;
        assert!(matches!(parse_events_str(text), Err(EventsError::DuplicateId(id)) if id == "x"));
    }

    #[test]
    fn negative_value_is_rejected() {
        let text = r#"{"kind":"conversion","id":"c","t":1,"user":"U","advertiser":"A","conv_type":"other","value":-1}"#;
        assert!(matches!(parse_events_str(text), Err(EventsError::InvalidValue { .. })));
    }

    #[test]
    fn validate_reports_duplicates_and_ordering() {
        let mut d = canonical_fixture_fig2();
        assert!(validate_dataset(&d).is_empty());
        d.impressions.push(d.impressions[0].clone());
        let v = validate_dataset(&d);
        assert!(v.iter().any(|m| m.starts_with("duplicate id")));
        assert!(v.iter().any(|m| m.starts_with("ordering violated at index 5")));

        let mut d = canonical_fixture_fig2();
        d.conversions.swap(0, 1);
        assert_eq!(validate_dataset(&d).len(), 1);
        assert!(validate_dataset(&d)[0].starts_with("ordering violated at index 1"));
    }

    #[test]
    fn merged_events_are_chronological() {
        let d = canonical_fixture_fig2();
        let ids: Vec<_> = d.events().iter().map(|e| e.order_key().1).collect();
        assert_eq!(
            ids,
            ["i1", "i2", "c1", "c2", "c3", "i3", "i4", "c4", "i5", "c5"]
        );
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let d = canonical_fixture_fig2();
        assert_eq!(parse_events_str(&d.to_jsonl()).unwrap(), d);
    }
}
