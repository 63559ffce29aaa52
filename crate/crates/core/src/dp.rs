//! The end-to-end measurement system: attribution, contribution bounding, a
//! query, and Laplace noise of scale `C0 * r * Δ(f) / ε`.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bounding::{run, BoundingError, Configuration};
use crate::events::Dataset;
use crate::queries::{evaluate, sensitivity_of, QueryError, QuerySpec};
use crate::validity::classify;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("refusing to measure under {config}: {reason}")]
    Refused { config: String, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Bounding(#[from] BoundingError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

/// Inverse CDF of the zero-mean Laplace distribution with scale `b`, for
/// `u` in `(0, 1)`.
pub fn laplace_inverse_cdf(u: f64, b: f64) -> f64 {
    if u < 0.5 {
        b * (2.0 * u).ln()
    } else {
        -b * (2.0 * (1.0 - u)).ln()
    }
}

/// One Laplace draw by inversion. A uniform draw of exactly 0 is rejected
/// and redrawn.
pub fn laplace_sample<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64, DpError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(DpError::Domain(format!("Laplace scale must be positive, got {scale}")));
    }
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return Ok(laplace_inverse_cdf(u, scale));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub c0: f64,
    pub seed: u64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, c0: f64, seed: u64) -> Result<Self, DpError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(DpError::Domain(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(c0 >= 1.0 && c0.is_finite()) {
            return Err(DpError::Domain(format!("c0 must be at least 1, got {c0}")));
        }
        Ok(Self { epsilon, c0, seed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyMeasurement {
    pub values: Vec<f64>,
    pub noise_scale: f64,
    pub epsilon_spent: f64,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeasureOptions {
    /// Measure even when the configuration is not known to be valid, using
    /// the caller's `c0` as is.
    pub unsafe_allow_invalid: bool,
}

/// `c0 * r * sensitivity / epsilon`, evaluated in that order.
pub fn noise_scale(c0: f64, r: u32, sensitivity: f64, epsilon: f64) -> f64 {
    c0 * f64::from(r) * sensitivity / epsilon
}

/// First 16 hex digits of the SHA-256 of the configuration description.
pub fn config_fingerprint(cfg: &Configuration) -> String {
    let digest = Sha256::digest(cfg.describe().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// RNG for one measurement: seeded by `seed`, on a stream derived from the
/// configuration fingerprint and the query.
pub fn measurement_rng(seed: u64, fingerprint: &str, q: &QuerySpec) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(fingerprint.as_bytes());
    hasher.update(serde_json::to_string(q).expect("query specs serialize").as_bytes());
    let digest = hasher.finalize();
    let mut stream = [0u8; 8];
    stream.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(u64::from_le_bytes(stream));
    rng
}

/// Runs the configured attribution system, evaluates `q`, and perturbs each
/// coordinate with independent Laplace noise.
pub fn measure(
    d: &Dataset,
    cfg: &Configuration,
    q: &QuerySpec,
    p: &PrivacyParams,
    opts: MeasureOptions,
) -> Result<NoisyMeasurement, DpError> {
    let p = PrivacyParams::new(p.epsilon, p.c0, p.seed)?;
    let class = classify(&cfg.rule, cfg.relation, cfg.enforcement);
    match (class.c0(), class.refusal()) {
        (Some(c0), _) if c0 != p.c0 => {
            return Err(DpError::Config(format!(
                "c0 = {} does not match the constant {c0} of {}",
                p.c0,
                cfg.describe()
            )))
        }
        (None, Some(reason)) if !opts.unsafe_allow_invalid => {
            return Err(DpError::Refused {
                config: cfg.describe(),
                reason,
            })
        }
        _ => {}
    }
    q.validate()?;
    let attributed = run(d, cfg)?;
    let exact = evaluate(q, &attributed, d)?;
    let scale = noise_scale(p.c0, cfg.r, sensitivity_of(q), p.epsilon);
    let fingerprint = config_fingerprint(cfg);
    let mut rng = measurement_rng(p.seed, &fingerprint, q);
    let values = exact
        .into_iter()
        .map(|v| laplace_sample(scale, &mut rng).map(|z| v + z))
        .collect::<Result<_, _>>()?;
    Ok(NoisyMeasurement {
        values,
        noise_scale: scale,
        epsilon_spent: p.epsilon,
        config_fingerprint: fingerprint,
    })
}

/// Basic sequential composition.
pub fn compose(spent: &[f64]) -> Result<f64, DpError> {
    if let Some(bad) = spent.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(DpError::Domain(format!("epsilon entries must be positive, got {bad}")));
    }
    Ok(spent.iter().sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub label: String,
    pub epsilon: f64,
}

/// Append-only privacy accounting log shared between concurrent
/// measurements. Writes are serialized behind a mutex.
#[derive(Debug, Default)]
pub struct PrivacyLedger {
    entries: Mutex<Vec<LedgerEntry>>,
}

impl PrivacyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a spend and returns the running total.
    pub fn record(&self, label: impl Into<String>, epsilon: f64) -> Result<f64, DpError> {
        compose(&[epsilon])?;
        let mut entries = self.entries.lock().expect("ledger lock poisoned");
        entries.push(LedgerEntry {
            label: label.into(),
            epsilon,
        });
        compose(&entries.iter().map(|e| e.epsilon).collect::<Vec<_>>())
    }

    pub fn total(&self) -> f64 {
        let entries = self.entries.lock().expect("ledger lock poisoned");
        entries.iter().map(|e| e.epsilon).sum()
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.entries.lock().expect("ledger lock poisoned").clone()
    }
}
