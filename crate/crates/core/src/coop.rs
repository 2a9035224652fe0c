//! Cooperation analysis: how far a local model has drifted from the global
//! one, and what cooperation level a client should declare as a result.

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::dqn::argmax;
use crate::error::{Error, Result};
use crate::nn::{kl_divergence, softmax, Mlp, ParamVector};

/// A threshold that is either fixed or calibrated from an attack-free run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Threshold {
    #[default]
    Auto,
    Fixed(f64),
}

impl Threshold {
    pub fn value(self) -> Option<f64> {
        match self {
            Threshold::Auto => None,
            Threshold::Fixed(v) => Some(v),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Auto => s.serialize_str("auto"),
            Threshold::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Threshold;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("\"auto\" or a non-negative number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Threshold, E> {
                if v == "auto" {
                    Ok(Threshold::Auto)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Threshold, E> {
                if v >= 0.0 && v.is_finite() {
                    Ok(Threshold::Fixed(v))
                } else {
                    Err(E::invalid_value(de::Unexpected::Float(v), &self))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Threshold, E> {
                self.visit_f64(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Threshold, E> {
                self.visit_f64(v as f64)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoopConfig {
    /// KL above which a client counts as at risk.
    pub kl_threshold: Threshold,
    /// KL at which the similarity score bottoms out.
    pub kl_cap: Threshold,
    /// Parameter distance at which the deviation score bottoms out.
    pub deviation_cap: Threshold,
    pub weight_similarity: f64,
    pub weight_validation: f64,
    pub weight_deviation: f64,
    pub probe_size: usize,
    pub temperature: f64,
    /// Rounds averaged for the measured cooperation level.
    pub window: usize,
    /// Median update similarity at which server-side trust reaches zero,
    /// as a positive magnitude.
    pub trust_margin: f64,
}

impl Default for CoopConfig {
    fn default() -> Self {
        Self {
            kl_threshold: Threshold::Auto,
            kl_cap: Threshold::Auto,
            deviation_cap: Threshold::Auto,
            weight_similarity: 0.5,
            weight_validation: 0.3,
            weight_deviation: 0.2,
            probe_size: 64,
            temperature: 1.0,
            window: 3,
            trust_margin: 0.1,
        }
    }
}

impl CoopConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.weight_similarity, self.weight_validation, self.weight_deviation];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("coop.weights", "must be finite and non-negative"));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("coop.weights", "must sum to 1"));
        }
        if self.probe_size == 0 {
            return Err(Error::invalid("coop.probe_size", "must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("coop.temperature", "must be positive"));
        }
        if self.window == 0 {
            return Err(Error::invalid("coop.window", "must be positive"));
        }
        if !(self.trust_margin > 0.0 && self.trust_margin.is_finite()) {
            return Err(Error::invalid("coop.trust_margin", "must be positive"));
        }
        Ok(())
    }

    /// Thresholds with every `Auto` entry filled from `calibrated`.
    pub fn resolve(&self, calibrated: Option<Thresholds>) -> Result<Thresholds> {
        let pick = |t: Threshold, from: fn(&Thresholds) -> f64, name| match (t, calibrated) {
            (Threshold::Fixed(v), _) => Ok(v),
            (Threshold::Auto, Some(c)) => Ok(from(&c)),
            (Threshold::Auto, None) => Err(Error::invalid(name, "auto threshold needs calibration")),
        };
        Ok(Thresholds {
            kl_threshold: pick(self.kl_threshold, |c| c.kl_threshold, "coop.kl_threshold")?,
            kl_cap: pick(self.kl_cap, |c| c.kl_cap, "coop.kl_cap")?,
            deviation_cap: pick(self.deviation_cap, |c| c.deviation_cap, "coop.deviation_cap")?,
        })
    }

    pub fn needs_calibration(&self) -> bool {
        [self.kl_threshold, self.kl_cap, self.deviation_cap].contains(&Threshold::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub kl_threshold: f64,
    pub kl_cap: f64,
    pub deviation_cap: f64,
}

/// Linear-interpolation percentile, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile input"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Risk threshold at the 90th percentile of attack-free KL, caps at four
/// times the 90th percentile of the KL and distance samples.
pub fn calibrate(kls: &[f64], distances: &[f64]) -> Result<Thresholds> {
    let kl90 = percentile(kls, 0.9)?;
    let d90 = percentile(distances, 0.9)?;
    let floor = 1e-9;
    Ok(Thresholds {
        kl_threshold: kl90.max(floor),
        kl_cap: (4.0 * kl90).max(floor),
        deviation_cap: (4.0 * d90).max(floor),
    })
}

/// Mean KL(local || global) of the tempered softmax over Q-values on the
/// probe states.
pub fn kl_probe(local: &Mlp, global: &Mlp, states: &[&[f64]], temperature: f64) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Empty("probe states"));
    }
    let mut total = 0.0;
    for s in states {
        let p = softmax(&local.forward(s)?, temperature);
        let q = softmax(&global.forward(s)?, temperature);
        total += kl_divergence(&p, &q)?;
    }
    Ok(total / states.len() as f64)
}

/// `1 - min(|global - local| / cap, 1)`.
pub fn deviation_score(local: &ParamVector, global: &ParamVector, cap: f64) -> Result<f64> {
    if !(cap > 0.0) {
        return Err(Error::invalid("deviation cap", "must be positive"));
    }
    let d = local.l2_distance(global)?;
    Ok(1.0 - (d / cap).min(1.0))
}

/// Fraction of probe states on which both models pick the same greedy action.
pub fn validation_score(local: &Mlp, global: &Mlp, states: &[&[f64]]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Empty("validation states"));
    }
    let mut agree = 0usize;
    for s in states {
        if argmax(&local.forward(s)?) == argmax(&global.forward(s)?) {
            agree += 1;
        }
    }
    Ok(agree as f64 / states.len() as f64)
}

/// Weighted combination of similarity, validation and deviation scores,
/// clipped to [0, 1]. Non-increasing in `kl`.
pub fn cooperation_level(kl: f64, validation: f64, deviation: f64, kl_cap: f64, cfg: &CoopConfig) -> f64 {
    let similarity = 1.0 - (kl.max(0.0) / kl_cap).min(1.0);
    let c = cfg.weight_similarity * similarity
        + cfg.weight_validation * validation.clamp(0.0, 1.0)
        + cfg.weight_deviation * deviation.clamp(0.0, 1.0);
    c.clamp(0.0, 1.0)
}

/// Fraction of clients whose KL exceeds `threshold`.
pub fn risk_level(kls: &[f64], threshold: f64) -> Result<f64> {
    if kls.is_empty() {
        return Err(Error::Empty("risk input"));
    }
    Ok(kls.iter().filter(|&&k| k > threshold).count() as f64 / kls.len() as f64)
}

/// Mean over the last `window` rounds of the per-round average applied
/// cooperation level.
pub fn measured_cooperation(log: &[Vec<f64>], window: usize) -> Result<f64> {
    let start = log.len().saturating_sub(window.max(1));
    let recent = &log[start..];
    if recent.is_empty() {
        return Err(Error::Empty("cooperation log"));
    }
    let mut total = 0.0;
    for round in recent {
        if round.is_empty() {
            return Err(Error::Empty("cooperation log round"));
        }
        total += round.iter().sum::<f64>() / round.len() as f64;
    }
    Ok(total / recent.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientCoop {
    pub kl: f64,
    pub distance: f64,
    pub deviation: f64,
    pub validation: f64,
    pub cooperation: f64,
}

/// Full local analysis of one client.
pub fn analyze(
    local: &Mlp,
    global: &Mlp,
    states: &[&[f64]],
    thresholds: &Thresholds,
    cfg: &CoopConfig,
) -> Result<ClientCoop> {
    let kl = kl_probe(local, global, states, cfg.temperature)?;
    let distance = local.params().l2_distance(global.params())?;
    let deviation = deviation_score(local.params(), global.params(), thresholds.deviation_cap)?;
    let validation = validation_score(local, global, states)?;
    let cooperation = cooperation_level(kl, validation, deviation, thresholds.kl_cap, cfg);
    Ok(ClientCoop { kl, distance, deviation, validation, cooperation })
}
