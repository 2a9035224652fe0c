//! Adversarial participants: model poisoning, data poisoning and
//! free-riding.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dqn::{ReplayBuffer, Transition, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    ModelPoison,
    DataPoison,
    FreeRider,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::ModelPoison, AttackKind::DataPoison, AttackKind::FreeRider];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::ModelPoison => "model-poison",
            AttackKind::DataPoison => "data-poison",
            AttackKind::FreeRider => "free-rider",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("attack kind", format!("unknown kind {s:?}")))
    }
}

/// Which clients attack, how, and when.
///
/// Without `stages` every attacker is active from `activation_round` on.
/// With `stages`, stage `s` covers rounds `[s * rounds_per_stage,
/// (s + 1) * rounds_per_stage)` and activates the first `stages[s]`
/// attacker ids (the last stage extends to the end of the run).
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub attackers: BTreeSet<usize>,
    pub gamma: f64,
    pub flip_probability: f64,
    pub activation_round: usize,
    pub stages: Vec<usize>,
    pub rounds_per_stage: usize,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, attackers: impl IntoIterator<Item = usize>) -> Self {
        Self {
            kind,
            attackers: attackers.into_iter().collect(),
            gamma: 1.0,
            flip_probability: 0.5,
            activation_round: 0,
            stages: Vec::new(),
            rounds_per_stage: 0,
        }
    }

    pub fn none() -> Self {
        Self::new(AttackKind::ModelPoison, [])
    }

    pub fn validate(&self, clients: usize) -> Result<()> {
        if let Some(&id) = self.attackers.iter().find(|&&id| id >= clients) {
            return Err(Error::invalid(
                "attack.attackers",
                format!("attacker id {id} out of range for {clients} clients"),
            ));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid("attack.gamma", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::invalid("attack.flip_probability", "must lie in [0, 1]"));
        }
        if !self.stages.is_empty() {
            if self.rounds_per_stage == 0 {
                return Err(Error::invalid("attack.rounds_per_stage", "must be positive with stages"));
            }
            if let Some(&s) = self.stages.iter().find(|&&s| s > self.attackers.len()) {
                return Err(Error::invalid(
                    "attack.stages",
                    format!("stage needs {s} attackers but only {} are listed", self.attackers.len()),
                ));
            }
        }
        Ok(())
    }

    /// Attackers active in `round`, ascending.
    pub fn active(&self, round: usize) -> Vec<usize> {
        if self.stages.is_empty() {
            if round < self.activation_round {
                return Vec::new();
            }
            return self.attackers.iter().copied().collect();
        }
        let stage = (round / self.rounds_per_stage).min(self.stages.len() - 1);
        self.attackers.iter().copied().take(self.stages[stage]).collect()
    }

    pub fn is_active(&self, client: usize, round: usize) -> bool {
        self.active(round).contains(&client)
    }
}

/// Sign-flipped, scaled update: `-gamma * update`.
pub fn poison_model(update: &ParamVector, gamma: f64) -> ParamVector {
    update.scale(-gamma)
}

/// The zero update of the same layout.
pub fn free_ride(update: &ParamVector) -> ParamVector {
    update.zeros_like()
}

/// Corrupts each transition independently with probability `p`: its reward
/// is negated and its action replaced by a different, uniformly chosen one.
/// Returns how many transitions were corrupted.
pub fn poison_transitions<'a, R: Rng + ?Sized>(
    transitions: impl IntoIterator<Item = &'a mut Transition>,
    p: f64,
    rng: &mut R,
) -> usize {
    let mut corrupted = 0;
    for t in transitions {
        if rng.random::<f64>() < p {
            t.reward = -t.reward;
            let other = rng.random_range(0..NUM_ACTIONS - 1);
            t.action = if other >= t.action { other + 1 } else { other };
            corrupted += 1;
        }
    }
    corrupted
}

pub fn poison_data<R: Rng + ?Sized>(buffer: &mut ReplayBuffer, p: f64, rng: &mut R) -> usize {
    poison_transitions(buffer.iter_mut(), p, rng)
}
