//! Round-by-round federated simulation over the shared cellular network.

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::attack::{free_ride, poison_model, poison_transitions, AttackKind, AttackSpec};
use crate::cellnet::{EnvConfig, NetworkState, SleepMode, OBS_DIM};
use crate::coop::{analyze, calibrate, measured_cooperation, risk_level, ClientCoop, CoopConfig, Thresholds};
use crate::dqn::{DqnAgent, DqnConfig, EpsilonSchedule, ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::nn::{weighted_mean, Mlp, ParamVector};
use crate::rng::{stream, Purpose, SimRng};
use crate::strategies::{
    adaptation_steps, cloud_models, cluster_aggregate, cluster_count, decoupled_merge, distill_step,
    interpolate_models, local_adaptation, public_layer_mask, ClusterMember, CooperationMode, DistillDirection,
    StrategyConfig, StrategyKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub clients: usize,
    pub rounds: usize,
    pub env_steps_per_round: usize,
    pub train_steps_per_round: usize,
    /// Share of final rounds averaged into the converged metrics.
    pub convergence_fraction: f64,
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            clients: 6,
            rounds: 30,
            env_steps_per_round: 96,
            train_steps_per_round: 96,
            convergence_fraction: 0.2,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub run: RunConfig,
    pub env: EnvConfig,
    pub dqn: DqnConfig,
    pub coop: CoopConfig,
    pub strategy: StrategyConfig,
    pub attack: AttackSpec,
}

impl ExperimentPlan {
    pub fn new(run: RunConfig) -> Self {
        Self {
            run,
            env: EnvConfig::default(),
            dqn: DqnConfig::default(),
            coop: CoopConfig::default(),
            strategy: StrategyConfig::default(),
            attack: AttackSpec::none(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.clients == 0 {
            return Err(Error::invalid("run.clients", "need at least one client"));
        }
        if self.run.rounds == 0 {
            return Err(Error::invalid("run.rounds", "need at least one round"));
        }
        if self.run.env_steps_per_round == 0 {
            return Err(Error::invalid("run.env_steps_per_round", "must be positive"));
        }
        if !(self.run.convergence_fraction > 0.0 && self.run.convergence_fraction <= 1.0) {
            return Err(Error::invalid("run.convergence_fraction", "must lie in (0, 1]"));
        }
        self.env.validate()?;
        self.dqn.validate()?;
        self.coop.validate()?;
        self.strategy.validate()?;
        self.attack.validate(self.run.clients)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub agent: DqnAgent,
    /// Shared-knowledge model exchanged under meme distillation.
    pub meme: Mlp,
    pub buffer: ReplayBuffer,
    /// The model most recently received from the server; risk and
    /// cooperation are judged against it.
    pub anchor: Mlp,
    /// Declared cooperation level, applied to local training and tuning.
    pub cooperation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean over the round's steps, bit/s.
    pub system_throughput: f64,
    /// Delivered bits over consumed joules for the whole round.
    pub energy_efficiency: f64,
    pub risk_level: f64,
    /// Windowed mean of the weights applied in aggregation.
    pub cooperation_level: f64,
    pub mean_benign_reward: f64,
    pub attackers_active: usize,
    pub benign: Vec<bool>,
    pub client_cooperation: Vec<f64>,
    pub client_kl: Vec<f64>,
    pub client_distance: Vec<f64>,
    pub client_reward: Vec<f64>,
    pub applied_weights: Vec<f64>,
    pub clusters: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub system_throughput: f64,
    pub energy_efficiency: f64,
    pub mean_benign_reward: f64,
    pub risk_level: f64,
    pub cooperation_level: f64,
}

impl Summary {
    /// Means over the last `ceil(fraction * len)` records (at least one).
    pub fn converged(records: &[RoundRecord], fraction: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("round records"));
        }
        let n = ((records.len() as f64 * fraction).ceil() as usize).clamp(1, records.len());
        let tail = &records[records.len() - n..];
        let mean = |f: fn(&RoundRecord) -> f64| tail.iter().map(f).sum::<f64>() / n as f64;
        Ok(Self {
            system_throughput: mean(|r| r.system_throughput),
            energy_efficiency: mean(|r| r.energy_efficiency),
            mean_benign_reward: mean(|r| r.mean_benign_reward),
            risk_level: mean(|r| r.risk_level),
            cooperation_level: mean(|r| r.cooperation_level),
        })
    }
}

/// Per-client mean reward over the converged window.
pub fn converged_client_rewards(records: &[RoundRecord], fraction: f64) -> Vec<f64> {
    if records.is_empty() {
        return Vec::new();
    }
    let n = ((records.len() as f64 * fraction).ceil() as usize).clamp(1, records.len());
    let tail = &records[records.len() - n..];
    (0..tail[0].client_reward.len()).map(|i| tail.iter().map(|r| r.client_reward[i]).sum::<f64>() / n as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub thresholds: Thresholds,
    pub records: Vec<RoundRecord>,
    pub summary: Summary,
    pub final_models: Vec<ParamVector>,
}

fn install<R: Send>(pool: &Option<ThreadPool>, op: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(op),
        None => op(),
    }
}

/// Server-side trust from pairwise cosine similarity of the updates.
/// Each client's score is the median of its row of the similarity matrix,
/// self-similarity included; trust falls linearly from 1 at a median of 0
/// to 0 at a median of `-margin`.
pub fn correlation_trust(deltas: &[ParamVector], margin: f64) -> Result<Vec<f64>> {
    let n = deltas.len();
    let mut sims = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = deltas[i].cosine_similarity(&deltas[j])?;
            sims[i][j] = s;
            sims[j][i] = s;
        }
    }
    Ok(sims
        .into_iter()
        .map(|mut row| {
            row.sort_by(f64::total_cmp);
            let m = if n % 2 == 1 { row[n / 2] } else { 0.5 * (row[n / 2 - 1] + row[n / 2]) };
            (1.0 + m / margin).clamp(0.0, 1.0)
        })
        .collect())
}

pub struct Simulation {
    plan: ExperimentPlan,
    thresholds: Thresholds,
    env: NetworkState,
    clients: Vec<ClientState>,
    schedule: EpsilonSchedule,
    applied_log: Vec<Vec<f64>>,
    round: usize,
    pool: Option<ThreadPool>,
}

impl Simulation {
    pub fn new(plan: ExperimentPlan, thresholds: Thresholds) -> Result<Self> {
        plan.validate()?;
        let seed = plan.run.seed;
        let n = plan.run.clients;
        let env = NetworkState::new(
            &plan.env,
            n,
            &mut stream(seed, Purpose::Topology, &[]),
            &mut stream(seed, Purpose::Environment, &[u64::MAX]),
        )?;
        let initial =
            Mlp::new(&plan.dqn.layer_sizes(OBS_DIM), plan.dqn.activation, &mut stream(seed, Purpose::Init, &[]))?;
        let start = match plan.strategy.cooperation {
            CooperationMode::Choice => 1.0,
            CooperationMode::Fixed(c) => c,
        };
        let clients = (0..n)
            .map(|id| ClientState {
                id,
                agent: DqnAgent::from_net(initial.clone(), &plan.dqn),
                meme: initial.clone(),
                buffer: ReplayBuffer::new(plan.dqn.buffer_capacity),
                anchor: initial.clone(),
                cooperation: start,
            })
            .collect();
        let total = (plan.run.rounds * plan.run.env_steps_per_round) as u64;
        let schedule = EpsilonSchedule::from_config(&plan.dqn, total);
        let pool = match plan.run.workers {
            0 => None,
            w => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(w)
                    .build()
                    .map_err(|e| Error::invalid("run.workers", e.to_string()))?,
            ),
        };
        Ok(Self { plan, thresholds, env, clients, schedule, applied_log: Vec::new(), round: 0, pool })
    }

    pub fn plan(&self) -> &ExperimentPlan {
        &self.plan
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn env(&self) -> &NetworkState {
        &self.env
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let r = self.round;
        let seed = self.plan.run.seed;
        let n = self.clients.len();
        let steps = self.plan.run.env_steps_per_round;
        let active = self.plan.attack.active(r);
        let attack_kind = self.plan.attack.kind;
        let benign: Vec<bool> = (0..n).map(|i| !active.contains(&i)).collect();

        let epsilon = self.schedule.value((r * steps) as u64);
        for c in &mut self.clients {
            c.agent.epsilon = epsilon;
        }

        // Interaction with the shared network.
        let mut rngs: Vec<SimRng> = (0..n).map(|i| stream(seed, Purpose::Client, &[i as u64, r as u64])).collect();
        let mut env_rng = stream(seed, Purpose::Environment, &[r as u64]);
        let mut fresh: Vec<Vec<Transition>> = vec![Vec::with_capacity(steps); n];
        let mut reward_sum = vec![0.0; n];
        let mut throughput_sum = 0.0;
        let mut energy_sum = 0.0;
        let dt = self.plan.env.step_seconds();
        let mut obs = self.env.observations();
        for _ in 0..steps {
            let mut actions = Vec::with_capacity(n);
            for (c, rng) in self.clients.iter().zip(&mut rngs) {
                actions.push(c.agent.select_action(&obs[c.id], rng)?);
            }
            let modes: Vec<SleepMode> = actions.iter().map(|&a| SleepMode::from_index(a).unwrap()).collect();
            let out = self.env.step(&modes, &mut env_rng)?;
            for i in 0..n {
                reward_sum[i] += out.rewards[i];
                fresh[i].push(Transition {
                    state: obs[i].clone(),
                    action: actions[i],
                    reward: out.rewards[i],
                    next_state: out.observations[i].clone(),
                    terminal: false,
                });
            }
            throughput_sum += out.system_throughput;
            energy_sum += out.total_energy();
            obs = out.observations;
        }

        if attack_kind == AttackKind::DataPoison {
            for &i in &active {
                let mut rng = stream(seed, Purpose::Attack, &[i as u64, r as u64]);
                poison_transitions(fresh[i].iter_mut(), self.plan.attack.flip_probability, &mut rng);
            }
        }
        for (c, tx) in self.clients.iter_mut().zip(fresh) {
            c.buffer.extend(tx);
        }

        // Local training and analysis.
        let plan = &self.plan;
        let starts: Vec<ParamVector> = self.clients.iter().map(|c| shared_model(c, plan).clone()).collect();
        let thresholds = self.thresholds;
        let analyses: Vec<ClientCoop> = install(&self.pool, || {
            self.clients
                .par_iter_mut()
                .zip(rngs.par_iter_mut())
                .map(|(c, rng)| {
                    train_local(c, plan, rng)?;
                    let recent = c.buffer.recent(plan.coop.probe_size);
                    let states: Vec<&[f64]> = recent.iter().map(|t| t.state.as_slice()).collect();
                    analyze(c.agent.q_net(), &c.anchor, &states, &thresholds, &plan.coop)
                })
                .collect::<Result<_>>()
        })?;

        for (c, a) in self.clients.iter_mut().zip(&analyses) {
            c.cooperation = match plan.strategy.cooperation {
                CooperationMode::Fixed(level) => level,
                CooperationMode::Choice => a.cooperation,
            };
        }

        // Uploads.
        let mut uploads = Vec::with_capacity(n);
        let mut deltas = Vec::with_capacity(n);
        let mut private = Vec::with_capacity(n);
        for (c, base) in self.clients.iter().zip(&starts) {
            let model = shared_model(c, plan);
            private.push(model.clone());
            let delta = model.sub(base)?;
            let poisoned = match attack_kind {
                _ if benign[c.id] => None,
                AttackKind::ModelPoison => Some(poison_model(&delta, plan.attack.gamma)),
                AttackKind::FreeRider => Some(free_ride(&delta)),
                AttackKind::DataPoison => None,
            };
            match poisoned {
                Some(d) => {
                    uploads.push(base.add(&d)?);
                    deltas.push(d);
                }
                None => {
                    uploads.push(model.clone());
                    deltas.push(delta);
                }
            }
        }

        // Server.
        let declared: Vec<f64> = self.clients.iter().map(|c| c.cooperation).collect();
        let weights: Vec<f64> = match plan.strategy.cooperation {
            CooperationMode::Fixed(_) => declared.clone(),
            CooperationMode::Choice => correlation_trust(&deltas, plan.coop.trust_margin)?
                .into_iter()
                .zip(&declared)
                .map(|(t, c)| t.min(*c))
                .collect(),
        };
        let level = weights.iter().sum::<f64>() / n as f64;
        let mut server_rng = stream(seed, Purpose::Server, &[r as u64]);
        let (received, clusters) = aggregate(
            plan,
            Uploads { models: &uploads, deltas: &deltas, private: &private },
            &weights,
            &declared,
            level,
            &mut server_rng,
        )?;

        // Client-side tuning.
        install(&self.pool, || {
            self.clients
                .par_iter_mut()
                .zip(received.into_par_iter())
                .map(|(c, model)| apply_received(c, model, plan, r))
                .collect::<Result<Vec<()>>>()
        })?;

        let kls: Vec<f64> = analyses.iter().map(|a| a.kl).collect();
        let risk = risk_level(&kls, self.thresholds.kl_threshold)?;
        self.applied_log.push(weights.clone());
        let cooperation_level = measured_cooperation(&self.applied_log, plan.coop.window)?;
        let client_reward: Vec<f64> = reward_sum.iter().map(|s| s / steps as f64).collect();
        let benign_rewards: Vec<f64> =
            client_reward.iter().zip(&benign).filter(|(_, b)| **b).map(|(r, _)| *r).collect();
        let mean_benign_reward = if benign_rewards.is_empty() {
            0.0
        } else {
            benign_rewards.iter().sum::<f64>() / benign_rewards.len() as f64
        };

        self.round += 1;
        Ok(RoundRecord {
            round: r,
            system_throughput: throughput_sum / steps as f64,
            energy_efficiency: if energy_sum > 0.0 { throughput_sum * dt / energy_sum } else { 0.0 },
            risk_level: risk,
            cooperation_level,
            mean_benign_reward,
            attackers_active: active.len(),
            benign,
            client_cooperation: declared,
            client_kl: kls,
            client_distance: analyses.iter().map(|a| a.distance).collect(),
            client_reward,
            applied_weights: weights,
            clusters,
        })
    }
}

fn train_local(c: &mut ClientState, plan: &ExperimentPlan, rng: &mut SimRng) -> Result<()> {
    let batch_size = plan.dqn.batch_size;
    let steps = plan.run.train_steps_per_round;
    let level = c.cooperation;
    if plan.strategy.kind != StrategyKind::MemeDistillation || level == 1.0 {
        for _ in 0..steps {
            if c.agent.train_step(&c.buffer, batch_size, rng)?.is_none() {
                break;
            }
        }
        if plan.strategy.kind == StrategyKind::MemeDistillation {
            c.meme.set_params(c.agent.params().clone())?;
        }
        return Ok(());
    }
    let direction =
        if level >= plan.strategy.mutual_threshold { DistillDirection::Mutual } else { DistillDirection::ToMeme };
    for _ in 0..steps {
        let Some(batch) = c.buffer.sample(batch_size, rng) else {
            break;
        };
        distill_step(&mut c.agent, &mut c.meme, &batch, level, plan.strategy.distill_temperature, direction)?;
    }
    Ok(())
}

/// The model a client contributes: its meme under meme distillation,
/// otherwise its local Q-network.
fn shared_model<'a>(c: &'a ClientState, plan: &ExperimentPlan) -> &'a ParamVector {
    match plan.strategy.kind {
        StrategyKind::MemeDistillation => c.meme.params(),
        _ => c.agent.params(),
    }
}

struct Uploads<'a> {
    models: &'a [ParamVector],
    deltas: &'a [ParamVector],
    /// What each client actually holds; differs from `models` only for
    /// poisoning attackers. Used when the server has nothing to send back,
    /// so that no client is handed its own upload.
    private: &'a [ParamVector],
}

/// Server-side aggregation. Returns the model sent to each client and the
/// cluster labels (all zero for strategies that do not cluster).
fn aggregate(
    plan: &ExperimentPlan,
    up: Uploads<'_>,
    weights: &[f64],
    declared: &[f64],
    level: f64,
    rng: &mut SimRng,
) -> Result<(Vec<ParamVector>, Vec<usize>)> {
    let uploads = up.models;
    let n = uploads.len();
    let weighted: Vec<(&ParamVector, f64)> =
        uploads.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(u, w)| (u, *w)).collect();
    let global = if weighted.is_empty() { None } else { Some(weighted_mean(&weighted)?) };
    let global_or_own = |i: usize| global.clone().unwrap_or_else(|| up.private[i].clone());

    match plan.strategy.kind {
        StrategyKind::FedAvg | StrategyKind::Interpolation | StrategyKind::LocalAdaptation => {
            Ok(((0..n).map(global_or_own).collect(), vec![0; n]))
        }
        StrategyKind::Clustering | StrategyKind::MemeDistillation => {
            let members: Vec<ClusterMember> = (0..n)
                .map(|i| ClusterMember { delta: &up.deltas[i], model: &uploads[i], weight: weights[i] })
                .collect();
            let k = cluster_count(level, n);
            let clustering =
                cluster_aggregate(&members, k, plan.strategy.cluster_distance, plan.strategy.kmeans_iterations, rng)?;
            let received =
                (0..n).map(|i| clustering.model_for(i).cloned().unwrap_or_else(|| global_or_own(i))).collect();
            Ok((received, clustering.assignment))
        }
        StrategyKind::ParamDecoupling => {
            let layers = uploads[0].layer_count();
            let masks: Vec<Vec<bool>> = declared.iter().map(|&c| public_layer_mask(c, layers)).collect();
            let mut layer_globals = Vec::with_capacity(layers);
            for l in 0..layers {
                let sharers: Vec<(&ParamVector, f64)> =
                    (0..n).filter(|&i| masks[i][l] && weights[i] > 0.0).map(|i| (&uploads[i], weights[i])).collect();
                layer_globals.push(if sharers.is_empty() { None } else { Some(weighted_mean(&sharers)?) });
            }
            let received = (0..n)
                .map(|i| {
                    let mut out = up.private[i].clone();
                    for (l, g) in layer_globals.iter().enumerate() {
                        if let (true, Some(g)) = (masks[i][l], g) {
                            let range = out.layer_range(l);
                            out.values_mut()[range.clone()].copy_from_slice(&g.values()[range]);
                        }
                    }
                    out
                })
                .collect();
            Ok((received, vec![0; n]))
        }
        StrategyKind::MultiTask => {
            // Row i mixes the weighted uploads (share c_i) with the client's
            // own model (share 1 - c_i).
            let total: f64 = weights.iter().sum();
            let mixing: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let share = if total > 0.0 { declared[i] } else { 0.0 };
                    let mut row: Vec<f64> =
                        weights.iter().map(|w| if total > 0.0 { share * w / total } else { 0.0 }).collect();
                    row.extend((0..n).map(|j| if i == j { 1.0 - share } else { 0.0 }));
                    row
                })
                .collect();
            let refs: Vec<&ParamVector> = uploads.iter().chain(up.private).collect();
            Ok((cloud_models(&refs, &mixing)?, vec![0; n]))
        }
    }
}

fn apply_received(c: &mut ClientState, model: ParamVector, plan: &ExperimentPlan, round: usize) -> Result<()> {
    let level = c.cooperation;
    match plan.strategy.kind {
        StrategyKind::MemeDistillation => {
            let merged = interpolate_models(c.meme.params(), &model, level)?;
            c.meme.set_params(merged)?;
            if level == 1.0 {
                c.agent.set_params(model.clone())?;
            }
        }
        _ if level == 0.0 => {}
        StrategyKind::FedAvg | StrategyKind::Clustering | StrategyKind::MultiTask => {
            c.agent.set_params(model.clone())?;
        }
        StrategyKind::Interpolation => {
            let merged = interpolate_models(c.agent.params(), &model, level)?;
            c.agent.set_params(merged)?;
        }
        StrategyKind::ParamDecoupling => {
            let mask = public_layer_mask(level, model.layer_count());
            let merged = decoupled_merge(c.agent.params(), &model, &mask)?;
            c.agent.set_params(merged)?;
        }
        StrategyKind::LocalAdaptation => {
            let steps = adaptation_steps(level, plan.strategy.max_adaptation_steps);
            let mut rng = stream(plan.run.seed, Purpose::Adaptation, &[c.id as u64, round as u64]);
            local_adaptation(&mut c.agent, &model, &c.buffer, steps, plan.dqn.batch_size, &mut rng)?;
        }
    }
    c.anchor.set_params(model)
}

/// Thresholds from one attack-free round of the same plan.
pub fn calibrate_thresholds(plan: &ExperimentPlan) -> Result<Thresholds> {
    let mut dry = plan.clone();
    dry.attack = AttackSpec::none();
    let placeholder = Thresholds { kl_threshold: 1.0, kl_cap: 1.0, deviation_cap: 1.0 };
    let mut sim = Simulation::new(dry, placeholder)?;
    let record = sim.run_round()?;
    calibrate(&record.client_kl, &record.client_distance)
}

pub fn resolve_thresholds(plan: &ExperimentPlan) -> Result<Thresholds> {
    if plan.coop.needs_calibration() {
        plan.coop.resolve(Some(calibrate_thresholds(plan)?))
    } else {
        plan.coop.resolve(None)
    }
}

pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    let thresholds = resolve_thresholds(plan)?;
    let mut sim = Simulation::new(plan.clone(), thresholds)?;
    let mut records = Vec::with_capacity(plan.run.rounds);
    for _ in 0..plan.run.rounds {
        records.push(sim.run_round()?);
    }
    let summary = Summary::converged(&records, plan.run.convergence_fraction)?;
    Ok(ExperimentResult {
        thresholds,
        records,
        summary,
        final_models: sim.clients.iter().map(|c| c.agent.params().clone()).collect(),
    })
}
