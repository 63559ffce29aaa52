//! `convlab` is a differentially private ad-conversion measurement engine.
//!
//! The pipeline has four stages:
//!
//! 1. [`events`] parses a JSON-lines log of impressions and conversions.
//! 2. [`attribution`] splits each conversion's unit credit across the
//!    earlier same-user, same-advertiser impressions.
//! 3. [`bounding`] caps how much any one privacy unit can contribute, either
//!    after attribution, before it, or at event admission.
//! 4. [`queries`] and [`dp`] aggregate the attributed pairs and add Laplace
//!    noise calibrated to `C0 * r * sensitivity / epsilon`.
//!
//! [`adjacency`] and [`validity`] form a lab for checking which
//! configurations actually keep adjacent datasets within `C0 * r` of each
//! other, with exhaustive neighbour enumeration and adversarial
//! constructions for the ones that do not.
//!
//! ```
//! use convlab::attribution::Rule;
//! use convlab::bounding::{run_post_attribution, Configuration, EnforcementPoint, Relation};
//! use convlab::events::canonical_fixture_fig2;
//!
//! let cfg = Configuration::new(Rule::LastTouch, Relation::User, EnforcementPoint::Post, 2).unwrap();
//! let attributed = run_post_attribution(&canonical_fixture_fig2(), &cfg).unwrap();
//! assert_eq!(attributed.len(), 2);
//! ```

pub mod adjacency;
pub mod attribution;
pub mod bounding;
pub mod cli;
pub mod dp;
pub mod events;
pub mod queries;
pub mod validity;

pub use attribution::{make_rule, AttributionRuleSpec, Rule};
pub use bounding::{AttributedDataset, Configuration, EnforcementPoint, Relation};
pub use events::{Conversion, Dataset, Impression};
