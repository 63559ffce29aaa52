//! Small random datasets and addition pools for the validity checker.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::adjacency::{NeighborPool, PoolGroup};
use crate::bounding::Relation;
use crate::events::{ConversionType, Conversion, Dataset, Engagement, Impression};

/// Bounds for random datasets: small enough for exhaustive neighbour
/// enumeration, rich enough that every scope type sees collisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeParams {
    pub max_users: usize,
    pub max_publishers: usize,
    pub max_advertisers: usize,
    pub max_impressions: usize,
    pub max_conversions: usize,
    pub max_time: u64,
    /// Success probability of the geometric impression count.
    pub impression_p: f64,
    /// Success probability of the geometric conversion count.
    pub conversion_p: f64,
    /// Addition groups generated per dataset.
    pub pool_groups: usize,
}

impl Default for SizeParams {
    fn default() -> Self {
        Self {
            max_users: 2,
            max_publishers: 4,
            max_advertisers: 3,
            max_impressions: 10,
            max_conversions: 8,
            max_time: 100,
            impression_p: 0.15,
            conversion_p: 0.2,
            pool_groups: 3,
        }
    }
}

fn geometric<R: Rng + ?Sized>(rng: &mut R, p: f64, cap: usize) -> usize {
    let draw = Geometric::new(p).expect("probability in (0, 1]").sample(rng);
    (draw as usize).min(cap)
}

fn pick<R: Rng + ?Sized>(rng: &mut R, prefix: &str, n: usize) -> String {
    format!("{prefix}{}", rng.random_range(1..=n))
}

fn engagement<R: Rng + ?Sized>(rng: &mut R) -> Engagement {
    if rng.random_bool(0.5) {
        Engagement::Click
    } else {
        Engagement::View
    }
}

fn conv_type<R: Rng + ?Sized>(rng: &mut R) -> ConversionType {
    match rng.random_range(0..4) {
        0 => ConversionType::Purchase,
        1 => ConversionType::Signup,
        2 => ConversionType::AddToCart,
        _ => ConversionType::Other,
    }
}

struct Universe {
    users: usize,
    publishers: usize,
    advertisers: usize,
    max_time: u64,
}

impl Universe {
    fn impression<R: Rng + ?Sized>(&self, rng: &mut R, id: String, user: String, publisher: String, advertiser: String) -> Impression {
        Impression::new(id, rng.random_range(0..=self.max_time), user, publisher, advertiser)
            .with_engagement(engagement(rng))
    }

    fn conversion<R: Rng + ?Sized>(&self, rng: &mut R, id: String, user: String, advertiser: String) -> Conversion {
        Conversion::new(id, rng.random_range(0..=self.max_time), user, advertiser)
            .with_type(conv_type(rng))
            .with_value(f64::from(rng.random_range(0..=200u32)))
    }
}

/// Draws one dataset. Counts are geometric and capped; every attribute is
/// uniform over its range.
pub fn random_dataset<R: Rng + ?Sized>(rng: &mut R, size: &SizeParams) -> Dataset {
    let u = Universe {
        users: rng.random_range(1..=size.max_users),
        publishers: rng.random_range(1..=size.max_publishers),
        advertisers: rng.random_range(1..=size.max_advertisers),
        max_time: size.max_time,
    };
    let n_imp = geometric(rng, size.impression_p, size.max_impressions);
    let n_conv = geometric(rng, size.conversion_p, size.max_conversions);
    let impressions = (0..n_imp)
        .map(|k| {
            let (user, publisher, advertiser) = (
                pick(rng, "U", u.users),
                pick(rng, "P", u.publishers),
                pick(rng, "A", u.advertisers),
            );
            u.impression(rng, format!("i{k}"), user, publisher, advertiser)
        })
        .collect();
    let conversions = (0..n_conv)
        .map(|k| {
            let (user, advertiser) = (pick(rng, "U", u.users), pick(rng, "A", u.advertisers));
            u.conversion(rng, format!("c{k}"), user, advertiser)
        })
        .collect();
    Dataset::new(impressions, conversions).expect("generated ids are unique")
}

/// Addition candidates for `relation`. Every group is one unit whose key
/// does not occur in `d`: a wholly new user for the user relation, a
/// `(user, publisher)` pair absent from `d` for user x publisher, and so on.
pub fn addition_pool<R: Rng + ?Sized>(
    rng: &mut R,
    d: &Dataset,
    relation: Relation,
    size: &SizeParams,
) -> NeighborPool {
    let users: BTreeSet<&str> = d
        .impressions
        .iter()
        .map(|i| i.user.as_str())
        .chain(d.conversions.iter().map(|c| c.user.as_str()))
        .collect();
    let mut users: Vec<String> = users.into_iter().map(str::to_owned).collect();
    if users.is_empty() {
        users.push("U1".into());
    }
    let u = Universe {
        users: users.len(),
        publishers: size.max_publishers,
        advertisers: size.max_advertisers,
        max_time: size.max_time,
    };
    let existing_user = |rng: &mut R| users[rng.random_range(0..users.len())].clone();
    let mut groups = Vec::new();
    for g in 0..size.pool_groups {
        let unit = format!("g{g}");
        let id = |kind: &str, k: usize| format!("x{g}.{kind}{k}");
        let mut group = PoolGroup {
            unit,
            ..PoolGroup::default()
        };
        match relation {
            Relation::Impression => {
                let (user, p, a) = (existing_user(rng), pick(rng, "P", u.publishers), pick(rng, "A", u.advertisers));
                group.impressions.push(u.impression(rng, id("i", 0), user, p, a));
            }
            Relation::Conversion => {
                let (user, a) = (existing_user(rng), pick(rng, "A", u.advertisers));
                group.conversions.push(u.conversion(rng, id("c", 0), user, a));
            }
            Relation::User => {
                let user = format!("N{g}");
                for k in 0..rng.random_range(1..=4) {
                    let (p, a) = (pick(rng, "P", u.publishers), pick(rng, "A", u.advertisers));
                    group.impressions.push(u.impression(rng, id("i", k), user.clone(), p, a));
                }
                for k in 0..rng.random_range(0..=3) {
                    let a = pick(rng, "A", u.advertisers);
                    group.conversions.push(u.conversion(rng, id("c", k), user.clone(), a));
                }
            }
            Relation::UserPublisher => {
                let user = existing_user(rng);
                let taken = |p: &str| d.impressions.iter().any(|i| i.user.as_str() == user && i.publisher.as_str() == p);
                let publisher = free_name(rng, "P", u.publishers, &format!("Q{g}"), taken);
                for k in 0..rng.random_range(1..=3) {
                    let a = pick(rng, "A", u.advertisers);
                    group.impressions.push(u.impression(rng, id("i", k), user.clone(), publisher.clone(), a));
                }
            }
            Relation::UserPublisherAdvertiser => {
                let user = existing_user(rng);
                let advertiser = pick(rng, "A", u.advertisers);
                let taken = |p: &str| {
                    d.impressions.iter().any(|i| {
                        i.user.as_str() == user && i.publisher.as_str() == p && i.advertiser.as_str() == advertiser
                    })
                };
                let publisher = free_name(rng, "P", u.publishers, &format!("Q{g}"), taken);
                for k in 0..rng.random_range(1..=3) {
                    group.impressions.push(u.impression(rng, id("i", k), user.clone(), publisher.clone(), advertiser.clone()));
                }
            }
            Relation::UserAdvertiser => {
                let user = existing_user(rng);
                let taken = |a: &str| {
                    d.impressions.iter().any(|i| i.user.as_str() == user && i.advertiser.as_str() == a)
                        || d.conversions.iter().any(|c| c.user.as_str() == user && c.advertiser.as_str() == a)
                };
                let advertiser = free_name(rng, "A", u.advertisers, &format!("B{g}"), taken);
                for k in 0..rng.random_range(1..=3) {
                    let p = pick(rng, "P", u.publishers);
                    group.impressions.push(u.impression(rng, id("i", k), user.clone(), p, advertiser.clone()));
                }
                for k in 0..rng.random_range(0..=2) {
                    group.conversions.push(u.conversion(rng, id("c", k), user.clone(), advertiser.clone()));
                }
            }
        }
        groups.push(group);
    }
    // Groups of the same relation can collide with each other's keys; each
    // is added on its own, so only freshness against `d` matters.
    NeighborPool { groups }
}

/// A name `prefix1..prefixN` not yet taken, or `fallback` when all are.
fn free_name<R: Rng + ?Sized>(
    rng: &mut R,
    prefix: &str,
    n: usize,
    fallback: &str,
    taken: impl Fn(&str) -> bool,
) -> String {
    let free: Vec<String> = (1..=n)
        .map(|k| format!("{prefix}{k}"))
        .filter(|name| !taken(name))
        .collect();
    if free.is_empty() {
        fallback.to_owned()
    } else {
        free[rng.random_range(0..free.len())].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjacency::add_group;
    use crate::events::validate_dataset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn datasets_respect_size_params() {
        let size = SizeParams::default();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut saw_full = false;
        for _ in 0..500 {
            let d = random_dataset(&mut rng, &size);
            assert!(validate_dataset(&d).is_empty());
            assert!(d.impressions.len() <= 10 && d.conversions.len() <= 8);
            assert!(d.impressions.iter().all(|i| i.timestamp <= 100));
            let users: BTreeSet<_> = d.impressions.iter().map(|i| &i.user).collect();
            assert!(users.len() <= 2);
            saw_full |= d.impressions.len() == 10;
        }
        assert!(saw_full);
    }

    #[test]
    fn pool_groups_are_addable() {
        let size = SizeParams::default();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..200 {
            let d = random_dataset(&mut rng, &size);
            for relation in Relation::ALL {
                let pool = addition_pool(&mut rng, &d, relation, &size);
                assert_eq!(pool.groups.len(), size.pool_groups);
                for g in &pool.groups {
                    add_group(&d, g, relation).unwrap_or_else(|e| panic!("{relation}: {e}"));
                }
            }
        }
    }
}
