//! Scenario files: TOML with `run`, `env`, `dqn`, `coop`, `strategy` and
//! `attack` sections. Every section and key is optional.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::{AttackKind, AttackSpec};
use crate::cellnet::EnvConfig;
use crate::coop::{CoopConfig, Thresholds};
use crate::dqn::DqnConfig;
use crate::engine::{ExperimentPlan, RunConfig};
use crate::error::{Error, Result};
use crate::strategies::StrategyConfig;

/// Attackers given either as a count (ids `0..n`) or as explicit ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Attackers {
    Count(usize),
    Ids(Vec<usize>),
}

impl Default for Attackers {
    fn default() -> Self {
        Attackers::Count(0)
    }
}

impl Attackers {
    pub fn ids(&self) -> BTreeSet<usize> {
        match self {
            Attackers::Count(n) => (0..*n).collect(),
            Attackers::Ids(ids) => ids.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub kind: AttackKind,
    pub attackers: Attackers,
    pub gamma: f64,
    pub flip_probability: f64,
    pub activation_round: usize,
    pub stages: Vec<usize>,
    pub rounds_per_stage: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self::from_spec(&AttackSpec::none())
    }
}

impl AttackSection {
    pub fn from_spec(spec: &AttackSpec) -> Self {
        Self {
            kind: spec.kind,
            attackers: Attackers::Ids(spec.attackers.iter().copied().collect()),
            gamma: spec.gamma,
            flip_probability: spec.flip_probability,
            activation_round: spec.activation_round,
            stages: spec.stages.clone(),
            rounds_per_stage: spec.rounds_per_stage,
        }
    }

    pub fn to_spec(&self) -> AttackSpec {
        AttackSpec {
            kind: self.kind,
            attackers: self.attackers.ids(),
            gamma: self.gamma,
            flip_probability: self.flip_probability,
            activation_round: self.activation_round,
            stages: self.stages.clone(),
            rounds_per_stage: self.rounds_per_stage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub run: RunConfig,
    pub env: EnvConfig,
    pub dqn: DqnConfig,
    pub coop: CoopConfig,
    pub strategy: StrategyConfig,
    pub attack: AttackSection,
}

/// A parsed scenario plus the keys that were filled from defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub config: ScenarioConfig,
    pub defaulted: Vec<String>,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<LoadedScenario> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let given: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let defaulted = defaulted_keys(&config, &given)?;
        Ok(LoadedScenario { config, defaulted })
    }

    pub fn load(path: &Path) -> Result<LoadedScenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_plan(plan: &ExperimentPlan) -> Self {
        Self {
            run: plan.run.clone(),
            env: plan.env.clone(),
            dqn: plan.dqn.clone(),
            coop: plan.coop.clone(),
            strategy: plan.strategy.clone(),
            attack: AttackSection::from_spec(&plan.attack),
        }
    }

    pub fn to_plan(&self) -> Result<ExperimentPlan> {
        let plan = ExperimentPlan {
            run: self.run.clone(),
            env: self.env.clone(),
            dqn: self.dqn.clone(),
            coop: self.coop.clone(),
            strategy: self.strategy.clone(),
            attack: self.attack.to_spec(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// `section.key = value` for every key the file left out.
fn defaulted_keys(config: &ScenarioConfig, given: &toml::Table) -> Result<Vec<String>> {
    let resolved = toml::Table::try_from(config).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    for (section, values) in &resolved {
        let Some(values) = values.as_table() else {
            continue;
        };
        let present = given.get(section).and_then(|v| v.as_table());
        for (key, value) in values {
            if present.is_none_or(|t| !t.contains_key(key)) {
                out.push(format!("{section}.{key} = {value}"));
            }
        }
    }
    Ok(out)
}

/// Human-readable run metadata. The body is the resolved scenario, so the
/// file can be fed back to `run` to reproduce the experiment.
pub fn metadata_text(config: &ScenarioConfig, thresholds: &Thresholds, defaulted: &[String]) -> Result<String> {
    let mut text = String::new();
    let _ = writeln!(text, "# seed = {}", config.run.seed);
    let _ = writeln!(text, "# kl_threshold = {}", thresholds.kl_threshold);
    let _ = writeln!(text, "# kl_cap = {}", thresholds.kl_cap);
    let _ = writeln!(text, "# deviation_cap = {}", thresholds.deviation_cap);
    if defaulted.is_empty() {
        text.push_str("# no defaults applied\n");
    } else {
        text.push_str("# defaults applied:\n");
        for d in defaulted {
            let _ = writeln!(text, "#   {d}");
        }
    }
    text.push('\n');
    text.push_str(&config.to_toml()?);
    Ok(text)
}
