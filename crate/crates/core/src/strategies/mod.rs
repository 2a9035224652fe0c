//! Personalization strategies and the mapping from one cooperation level to
//! each strategy's tuning parameters.

mod cluster;
mod distill;

pub use cluster::{cluster_aggregate, cluster_assign, ClusterMember, Clustering, Distance};
pub use distill::{distill_loss_grad, distill_step, DistillDirection, DistillLoss};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::dqn::{DqnAgent, ReplayBuffer};
use crate::error::{Error, Result};
use crate::nn::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    #[serde(rename = "fedavg")]
    FedAvg,
    Clustering,
    ParamDecoupling,
    Interpolation,
    MultiTask,
    LocalAdaptation,
    MemeDistillation,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::FedAvg,
        StrategyKind::Clustering,
        StrategyKind::ParamDecoupling,
        StrategyKind::Interpolation,
        StrategyKind::MultiTask,
        StrategyKind::LocalAdaptation,
        StrategyKind::MemeDistillation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::FedAvg => "fedavg",
            StrategyKind::Clustering => "clustering",
            StrategyKind::ParamDecoupling => "param-decoupling",
            StrategyKind::Interpolation => "interpolation",
            StrategyKind::MultiTask => "multi-task",
            StrategyKind::LocalAdaptation => "local-adaptation",
            StrategyKind::MemeDistillation => "meme-distillation",
        }
    }

    /// Whether the server groups uploads before averaging.
    pub fn clusters(self) -> bool {
        matches!(self, StrategyKind::Clustering | StrategyKind::MemeDistillation)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("strategy", format!("unknown strategy {s:?}")))
    }
}

/// Per-client cooperation chosen from local analysis, or one fixed level
/// for everyone.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CooperationMode {
    #[default]
    Choice,
    Fixed(f64),
}

impl Serialize for CooperationMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CooperationMode::Choice => s.serialize_str("choice"),
            CooperationMode::Fixed(c) => s.serialize_f64(*c),
        }
    }
}

impl<'de> Deserialize<'de> for CooperationMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = CooperationMode;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"choice\" or a number in [0, 1]")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<CooperationMode, E> {
                if v == "choice" {
                    Ok(CooperationMode::Choice)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<CooperationMode, E> {
                if (0.0..=1.0).contains(&v) {
                    Ok(CooperationMode::Fixed(v))
                } else {
                    Err(E::invalid_value(de::Unexpected::Float(v), &self))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<CooperationMode, E> {
                self.visit_f64(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<CooperationMode, E> {
                self.visit_f64(v as f64)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub cooperation: CooperationMode,
    /// Fine-tuning steps after adopting the global model at zero cooperation.
    pub max_adaptation_steps: usize,
    pub distill_temperature: f64,
    /// Cooperation level from which distillation runs in both directions.
    pub mutual_threshold: f64,
    pub kmeans_iterations: usize,
    pub cluster_distance: Distance,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::MemeDistillation,
            cooperation: CooperationMode::Choice,
            max_adaptation_steps: 20,
            distill_temperature: 2.0,
            mutual_threshold: 0.5,
            kmeans_iterations: 50,
            cluster_distance: Distance::Cosine,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if let CooperationMode::Fixed(c) = self.cooperation {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::invalid("strategy.cooperation", "must lie in [0, 1]"));
            }
        }
        if !(self.distill_temperature > 0.0) || !self.distill_temperature.is_finite() {
            return Err(Error::invalid("strategy.distill_temperature", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mutual_threshold) {
            return Err(Error::invalid("strategy.mutual_threshold", "must lie in [0, 1]"));
        }
        if self.kmeans_iterations == 0 {
            return Err(Error::invalid("strategy.kmeans_iterations", "must be positive"));
        }
        Ok(())
    }
}

/// Every strategy's tuning parameter at one cooperation level.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningState {
    pub cooperation: f64,
    pub clusters: usize,
    pub public_layers: Vec<bool>,
    pub alpha: f64,
    /// Row-stochastic mixing matrix for multi-task cloud models.
    pub mixing: Vec<Vec<f64>>,
    pub adaptation_steps: usize,
    pub distill_lambda: f64,
}

fn check_level(c: f64) -> Result<()> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(Error::invalid("cooperation level", format!("{c} is outside [0, 1]")))
    }
}

/// Number of clusters for `n` clients at level `c`: one at full cooperation,
/// one per client at none.
pub fn cluster_count(c: f64, n: usize) -> usize {
    let k = 1.0 + (n.saturating_sub(1)) as f64 * (1.0 - c);
    (k.round() as usize).clamp(1, n.max(1))
}

/// The first `ceil(c * layers)` layers are shared.
pub fn public_layer_mask(c: f64, layers: usize) -> Vec<bool> {
    let shared = ((c * layers as f64).ceil() as usize).min(layers);
    (0..layers).map(|l| l < shared).collect()
}

pub fn adaptation_steps(c: f64, max_steps: usize) -> usize {
    (max_steps as f64 * (1.0 - c)).round() as usize
}

pub fn map_cooperation(c: f64, clients: usize, layers: usize, max_adaptation_steps: usize) -> Result<TuningState> {
    check_level(c)?;
    if clients == 0 {
        return Err(Error::Empty("clients"));
    }
    let uniform = 1.0 / clients as f64;
    let mixing = (0..clients)
        .map(|i| (0..clients).map(|j| c * uniform + if i == j { 1.0 - c } else { 0.0 }).collect())
        .collect();
    Ok(TuningState {
        cooperation: c,
        clusters: cluster_count(c, clients),
        public_layers: public_layer_mask(c, layers),
        alpha: c,
        mixing,
        adaptation_steps: adaptation_steps(c, max_adaptation_steps),
        distill_lambda: c,
    })
}

/// Public layers from `global`, private layers from `local`.
pub fn decoupled_merge(local: &ParamVector, global: &ParamVector, public_layers: &[bool]) -> Result<ParamVector> {
    if !local.is_compatible(global) {
        return Err(Error::LayoutMismatch("decoupled_merge"));
    }
    if public_layers.len() != local.layer_count() {
        return Err(Error::DimensionMismatch {
            context: "public layer mask",
            expected: local.layer_count(),
            actual: public_layers.len(),
        });
    }
    let mut out = local.clone();
    for (layer, _) in public_layers.iter().enumerate().filter(|(_, p)| **p) {
        let range = local.layer_range(layer);
        out.values_mut()[range.clone()].copy_from_slice(&global.values()[range]);
    }
    Ok(out)
}

/// `(1 - alpha) * local + alpha * global`, exact at both endpoints.
pub fn interpolate_models(local: &ParamVector, global: &ParamVector, alpha: f64) -> Result<ParamVector> {
    check_level(alpha)?;
    if !local.is_compatible(global) {
        return Err(Error::LayoutMismatch("interpolate_models"));
    }
    if alpha == 0.0 {
        return Ok(local.clone());
    }
    if alpha == 1.0 {
        return Ok(global.clone());
    }
    let mut out = local.scale(1.0 - alpha);
    out.add_scaled(alpha, global)?;
    Ok(out)
}

/// `cloud_i = sum_j mixing[i][j] * models[j]`, one output per row. Rows
/// must be stochastic.
pub fn cloud_models(models: &[&ParamVector], mixing: &[Vec<f64>]) -> Result<Vec<ParamVector>> {
    if models.is_empty() {
        return Err(Error::Empty("cloud models"));
    }
    mixing
        .iter()
        .map(|row| {
            if row.len() != models.len() {
                return Err(Error::DimensionMismatch {
                    context: "mixing columns",
                    expected: models.len(),
                    actual: row.len(),
                });
            }
            if row.iter().any(|w| !(*w >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("mixing", "rows must be non-negative and sum to 1"));
            }
            // A pure one-hot row copies exactly.
            if let Some(j) = row.iter().position(|w| *w == 1.0) {
                if !models[j].is_compatible(models[0]) {
                    return Err(Error::LayoutMismatch("cloud_models"));
                }
                return Ok(models[j].clone());
            }
            let mut out = models[0].zeros_like();
            for (m, w) in models.iter().zip(row) {
                if *w != 0.0 {
                    out.add_scaled(*w, m)?;
                } else if !m.is_compatible(&out) {
                    return Err(Error::LayoutMismatch("cloud_models"));
                }
            }
            Ok(out)
        })
        .collect()
}

/// Adopts `received` and fine-tunes it for `steps` TD steps on the local
/// buffer. Returns the number of steps actually taken.
pub fn local_adaptation<R: Rng + ?Sized>(
    agent: &mut DqnAgent,
    received: &ParamVector,
    buffer: &ReplayBuffer,
    steps: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<usize> {
    agent.set_params(received.clone())?;
    let mut taken = 0;
    for _ in 0..steps {
        if agent.train_step(buffer, batch_size, rng)?.is_none() {
            break;
        }
        taken += 1;
    }
    Ok(taken)
}
