//! Which configurations are valid, with which constant, and why the others
//! are not.

use std::fmt;

use serde::Serialize;

use crate::attribution::{Rule, Shape};
use crate::bounding::{EnforcementPoint, Relation};

/// Why a configuration has no finite validity constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidityReason {
    AnyRuleUserPublisher,
    LastTouchUserPubAdv,
    UniformImpression,
    TimeDecayImpression,
    UShapedImpression,
    MultiTouchUserPubAdv,
}

impl fmt::Display for InvalidityReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvalidityReason::AnyRuleUserPublisher => {
                "post-attribution bounding per user x publisher is invalid for every rule: removing one publisher's impressions moves credit on conversions across many advertisers"
            }
            InvalidityReason::LastTouchUserPubAdv => {
                "last-touch with post-attribution bounding per user x publisher x advertiser is invalid: one publisher's unit can reassign credit on many conversions"
            }
            InvalidityReason::UniformImpression => {
                "uniform attribution with post-attribution bounding per impression is invalid: the distance grows logarithmically with the number of impressions"
            }
            InvalidityReason::TimeDecayImpression => {
                "exponential time-decay attribution with post-attribution bounding per impression is invalid: with equal timestamps it reduces to uniform attribution"
            }
            InvalidityReason::UShapedImpression => {
                "U-shaped attribution with post-attribution bounding per impression is invalid: the distance grows logarithmically with the number of impressions"
            }
            InvalidityReason::MultiTouchUserPubAdv => {
                "multi-touch attribution with post-attribution bounding per user x publisher x advertiser is invalid: impressions on distinct publishers behave like per-impression units"
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Classification {
    /// Adjacent datasets stay within `c0 * r`.
    Valid { c0: f64 },
    Invalid { reason: InvalidityReason },
    /// A POS or IPA instance whose shape could not be recognised, in a cell
    /// where the verdict depends on the rule.
    Undetermined { shape: Shape },
    /// Event admission has no classification.
    NotCovered,
    /// The relation and enforcement point cannot be combined.
    Inconsistent { message: String },
}

impl Classification {
    pub fn c0(&self) -> Option<f64> {
        match self {
            Classification::Valid { c0 } => Some(*c0),
            _ => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Classification::Valid { .. })
    }

    pub fn is_invalid(&self) -> bool {
        matches!(self, Classification::Invalid { .. })
    }

    /// Human-readable reason for refusing to measure under this cell, or
    /// `None` when measuring is allowed.
    pub fn refusal(&self) -> Option<String> {
        match self {
            Classification::Valid { .. } => None,
            Classification::Invalid { reason } => Some(reason.to_string()),
            Classification::Undetermined { shape } => Some(format!(
                "the validity of this rule instance (shape {shape}) is not determined for this relation"
            )),
            Classification::NotCovered => Some(
                "event-admission enforcement has no validity classification".to_owned(),
            ),
            Classification::Inconsistent { message } => Some(message.clone()),
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classification::Valid { c0 } => write!(f, "valid (C0 = {c0})"),
            Classification::Invalid { .. } => f.write_str("invalid"),
            Classification::Undetermined { .. } => f.write_str("undetermined"),
            Classification::NotCovered => f.write_str("not covered"),
            Classification::Inconsistent { .. } => f.write_str("inconsistent"),
        }
    }
}

/// Classification at contribution bound `r` of any value.
///
/// Pre-attribution enforcement is valid for every rule. Its constant is 1
/// when the unit also owns the conversions (user, user x advertiser) and 2
/// otherwise, since removing a single impression can move a whole unit of
/// last-touch credit from one impression to another.
pub fn classify(rule: &Rule, relation: Relation, enforcement: EnforcementPoint) -> Classification {
    use EnforcementPoint as E;
    use Relation as R;
    match (relation, enforcement) {
        (R::Conversion, E::None) => return Classification::Valid { c0: 1.0 },
        (R::Conversion, e) => {
            return Classification::Inconsistent {
                message: format!("the conversion relation takes no enforcement, got {e}"),
            }
        }
        (r, E::None) => {
            return Classification::Inconsistent {
                message: format!("relation {r} needs an enforcement point"),
            }
        }
        (_, E::EventAdmission) => return Classification::NotCovered,
        (R::User | R::UserAdvertiser, E::Pre) => return Classification::Valid { c0: 1.0 },
        (_, E::Pre) => return Classification::Valid { c0: 2.0 },
        (R::User | R::UserAdvertiser, E::Post) => return Classification::Valid { c0: 1.0 },
        (R::UserPublisher, E::Post) => {
            return Classification::Invalid {
                reason: InvalidityReason::AnyRuleUserPublisher,
            }
        }
        _ => {}
    }
    let shape = rule.shape();
    match (relation, shape) {
        (_, Shape::Undetermined) => Classification::Undetermined { shape },
        (R::Impression, Shape::FirstTouch | Shape::LastTouch) => Classification::Valid { c0: 2.0 },
        (R::Impression, Shape::Uniform) => Classification::Invalid {
            reason: InvalidityReason::UniformImpression,
        },
        (R::Impression, Shape::TimeDecay) => Classification::Invalid {
            reason: InvalidityReason::TimeDecayImpression,
        },
        (R::Impression, Shape::UShaped) => Classification::Invalid {
            reason: InvalidityReason::UShapedImpression,
        },
        (_, Shape::FirstTouch) => Classification::Valid { c0: 2.0 },
        (_, Shape::LastTouch) => Classification::Invalid {
            reason: InvalidityReason::LastTouchUserPubAdv,
        },
        (_, Shape::Uniform | Shape::TimeDecay | Shape::UShaped) => Classification::Invalid {
            reason: InvalidityReason::MultiTouchUserPubAdv,
        },
    }
}
