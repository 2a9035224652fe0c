//! Simplified downlink model of one always-on macro cell (MBS) overlaid
//! with small cells (SBSs) that choose a sleep mode every decision epoch.
//!
//! Radio: log-distance path loss plus thermal noise, no fading or
//! interference. Each cell splits its bandwidth equally among attached UEs
//! and a UE receives `min(share capacity, demand)`. A sleeping SBS hands its
//! UEs to the MBS, whose finite capacity turns overload into dropped
//! traffic.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension of [`NetworkState::observe`] vectors.
pub const OBS_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SleepMode {
    Active = 0,
    Sleep = 1,
    DeepSleep = 2,
}

impl SleepMode {
    pub const ALL: [SleepMode; 3] = [SleepMode::Active, SleepMode::Sleep, SleepMode::DeepSleep];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Typical residential daily load: trough at 05:00, peak at 21:00.
pub const RESIDENTIAL_LOAD: [f64; 24] = [
    0.55, 0.40, 0.28, 0.18, 0.12, 0.10, 0.13, 0.20, 0.30, 0.38, 0.44, 0.50, 0.55, 0.57, 0.58, 0.60, 0.65, 0.72, 0.80,
    0.88, 0.95, 1.00, 0.90, 0.72,
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficProfile {
    hourly_load: Vec<f64>,
    pub peak_rate_per_ue: f64,
    pub jitter_sigma: f64,
}

impl TrafficProfile {
    /// Normalizes `hourly_load` so its maximum is exactly 1.
    pub fn new(hourly_load: &[f64], peak_rate_per_ue: f64, jitter_sigma: f64) -> Result<Self> {
        if hourly_load.len() != 24 {
            return Err(Error::invalid("env.hourly_load", format!("needs 24 entries, got {}", hourly_load.len())));
        }
        if hourly_load.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("env.hourly_load", "entries must be finite and >= 0"));
        }
        let max = hourly_load.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(Error::invalid("env.hourly_load", "at least one entry must be positive"));
        }
        if !(peak_rate_per_ue >= 0.0) || !(jitter_sigma >= 0.0) {
            return Err(Error::invalid("env", "peak rate and jitter sigma must be >= 0"));
        }
        Ok(Self { hourly_load: hourly_load.iter().map(|v| v / max).collect(), peak_rate_per_ue, jitter_sigma })
    }

    pub fn hourly_load(&self) -> &[f64] {
        &self.hourly_load
    }

    /// Load factor at a fractional hour, linearly interpolated and wrapping
    /// at midnight.
    pub fn load_at(&self, hour: f64) -> f64 {
        let h = hour.rem_euclid(24.0);
        let i = h.floor() as usize % 24;
        let frac = h - h.floor();
        let (a, b) = (self.hourly_load[i], self.hourly_load[(i + 1) % 24]);
        a + frac * (b - a)
    }
}

/// Demand in bit/s of one UE at `hour`. Consumes one draw from `rng` when
/// jitter is enabled and none otherwise.
pub fn traffic_demand<R: Rng + ?Sized>(profile: &TrafficProfile, scale: f64, hour: f64, rng: &mut R) -> f64 {
    let base = profile.peak_rate_per_ue * scale * profile.load_at(hour);
    if profile.jitter_sigma == 0.0 {
        return base;
    }
    // Mean-one lognormal.
    let sigma = profile.jitter_sigma;
    let jitter = LogNormal::new(-0.5 * sigma * sigma, sigma).expect("finite sigma").sample(rng);
    base * jitter
}

/// Log-distance path loss in dB; distances below 1 m are clamped.
pub fn path_loss_db(distance_m: f64) -> f64 {
    30.5 + 36.7 * distance_m.max(1.0).log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// UEs per SBS, cycled when shorter than the SBS count.
    pub ues_per_sbs: Vec<usize>,
    /// Traffic scale per SBS, cycled like `ues_per_sbs`.
    pub traffic_scale: Vec<f64>,
    pub macro_ues: usize,
    pub sbs_distance_m: f64,
    pub ue_radius_m: f64,
    pub hourly_load: Vec<f64>,
    pub peak_rate_per_ue_bps: f64,
    pub jitter_sigma: f64,
    /// Bandwidth of each SBS.
    pub bandwidth_hz: f64,
    pub mbs_bandwidth_hz: f64,
    pub noise_dbm: f64,
    pub sbs_tx_power_w: f64,
    pub mbs_tx_power_w: f64,
    pub sbs_active_power_w: f64,
    pub sbs_load_power_w: f64,
    pub sleep_power_factor: f64,
    pub deep_sleep_power_factor: f64,
    /// Extra energy for waking up from Sleep / DeepSleep, as multiples of
    /// `sbs_active_power_w * step`.
    pub wake_energy_factor: [f64; 2],
    pub mbs_active_power_w: f64,
    pub mbs_load_power_w: f64,
    pub step_minutes: f64,
    pub start_hour: f64,
    pub w_throughput: f64,
    pub w_energy: f64,
    pub w_drop: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            ues_per_sbs: vec![4, 6, 3, 5, 7, 4],
            traffic_scale: vec![1.0, 0.7, 1.3, 0.85, 1.15, 0.6],
            macro_ues: 10,
            sbs_distance_m: 400.0,
            ue_radius_m: 40.0,
            hourly_load: RESIDENTIAL_LOAD.to_vec(),
            peak_rate_per_ue_bps: 8e6,
            jitter_sigma: 0.2,
            bandwidth_hz: 10e6,
            mbs_bandwidth_hz: 10e6,
            noise_dbm: -90.0,
            sbs_tx_power_w: 1.0,
            mbs_tx_power_w: 20.0,
            sbs_active_power_w: 10.0,
            sbs_load_power_w: 5.0,
            sleep_power_factor: 0.3,
            deep_sleep_power_factor: 0.05,
            wake_energy_factor: [0.2, 1.0],
            mbs_active_power_w: 100.0,
            mbs_load_power_w: 50.0,
            step_minutes: 15.0,
            start_hour: 0.0,
            w_throughput: 0.6,
            w_energy: 0.3,
            w_drop: 0.1,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ues_per_sbs.is_empty() || self.traffic_scale.is_empty() {
            return Err(Error::invalid("env", "ues_per_sbs and traffic_scale must be non-empty"));
        }
        if self.traffic_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("env.traffic_scale", "scales must be positive"));
        }
        let positive = [
            ("env.bandwidth_hz", self.bandwidth_hz),
            ("env.mbs_bandwidth_hz", self.mbs_bandwidth_hz),
            ("env.step_minutes", self.step_minutes),
            ("env.sbs_distance_m", self.sbs_distance_m),
            ("env.ue_radius_m", self.ue_radius_m),
            ("env.sbs_active_power_w", self.sbs_active_power_w),
            ("env.mbs_active_power_w", self.mbs_active_power_w),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        let non_negative = [
            ("env.sbs_load_power_w", self.sbs_load_power_w),
            ("env.mbs_load_power_w", self.mbs_load_power_w),
            ("env.sleep_power_factor", self.sleep_power_factor),
            ("env.deep_sleep_power_factor", self.deep_sleep_power_factor),
            ("env.wake_energy_factor", self.wake_energy_factor[0]),
            ("env.wake_energy_factor", self.wake_energy_factor[1]),
            ("env.sbs_tx_power_w", self.sbs_tx_power_w),
            ("env.mbs_tx_power_w", self.mbs_tx_power_w),
            ("env.w_throughput", self.w_throughput),
            ("env.w_energy", self.w_energy),
            ("env.w_drop", self.w_drop),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) {
                return Err(Error::invalid(name, "must be non-negative"));
            }
        }
        if !(0.0..24.0).contains(&self.start_hour) {
            return Err(Error::invalid("env.start_hour", "must lie in [0, 24)"));
        }
        TrafficProfile::new(&self.hourly_load, self.peak_rate_per_ue_bps, self.jitter_sigma)?;
        Ok(())
    }

    pub fn profile(&self) -> Result<TrafficProfile> {
        TrafficProfile::new(&self.hourly_load, self.peak_rate_per_ue_bps, self.jitter_sigma)
    }

    pub fn step_seconds(&self) -> f64 {
        self.step_minutes * 60.0
    }

    /// Energy of one awake step at full load. Savings are measured against
    /// it, so a wake-up step saves a negative amount.
    pub fn reference_energy(&self) -> f64 {
        (self.sbs_active_power_w + self.sbs_load_power_w) * self.step_seconds()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// A serving cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Macro,
    Small(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallCell {
    pub position: Position,
    pub mode: SleepMode,
    pub ues: Vec<usize>,
    pub traffic_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ue {
    pub position: Position,
    /// Home SBS; `None` for macro-only UEs.
    pub home: Option<usize>,
    /// Demand for the upcoming step, bit/s.
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    /// Delivered bit/s to each SBS's home UEs, wherever they were served.
    pub sbs_throughput: Vec<f64>,
    pub sbs_energy: Vec<f64>,
    pub mbs_energy: f64,
    pub system_throughput: f64,
    pub energy_efficiency: f64,
    pub observations: Vec<Vec<f64>>,
}

impl StepOutcome {
    pub fn total_energy(&self) -> f64 {
        self.sbs_energy.iter().sum::<f64>() + self.mbs_energy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    config: EnvConfig,
    profile: TrafficProfile,
    pub mbs: Position,
    pub sbs: Vec<SmallCell>,
    pub ues: Vec<Ue>,
    /// Hour of day in [0, 24).
    pub clock: f64,
    /// MBS resource utilization during the last step.
    pub mbs_load: f64,
    demand_norm: f64,
    max_ues: usize,
}

fn point_in_annulus<R: Rng + ?Sized>(center: Position, r_min: f64, r_max: f64, rng: &mut R) -> Position {
    // Area-uniform radius.
    let u: f64 = rng.random();
    let r = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
    let theta = rng.random::<f64>() * 2.0 * PI;
    Position { x: center.x + r * theta.cos(), y: center.y + r * theta.sin() }
}

impl NetworkState {
    /// Places `num_sbs` small cells evenly on a ring around the MBS and
    /// drops UEs with `topology_rng`; initial demands come from
    /// `traffic_rng`. All SBSs start Active.
    pub fn new<R: Rng + ?Sized>(
        config: &EnvConfig,
        num_sbs: usize,
        topology_rng: &mut R,
        traffic_rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if num_sbs == 0 {
            return Err(Error::invalid("num_sbs", "need at least one SBS"));
        }
        let profile = config.profile()?;
        let mbs = Position { x: 0.0, y: 0.0 };
        let mut sbs = Vec::with_capacity(num_sbs);
        let mut ues = Vec::new();
        for i in 0..num_sbs {
            let angle = 2.0 * PI * i as f64 / num_sbs as f64;
            let position = Position { x: config.sbs_distance_m * angle.cos(), y: config.sbs_distance_m * angle.sin() };
            let count = config.ues_per_sbs[i % config.ues_per_sbs.len()];
            let mut ids = Vec::with_capacity(count);
            for _ in 0..count {
                ids.push(ues.len());
                ues.push(Ue {
                    position: point_in_annulus(position, 5.0, config.ue_radius_m, topology_rng),
                    home: Some(i),
                    demand: 0.0,
                });
            }
            sbs.push(SmallCell {
                position,
                mode: SleepMode::Active,
                ues: ids,
                traffic_scale: config.traffic_scale[i % config.traffic_scale.len()],
            });
        }
        for _ in 0..config.macro_ues {
            ues.push(Ue {
                position: point_in_annulus(mbs, 20.0, 0.6 * config.sbs_distance_m, topology_rng),
                home: None,
                demand: 0.0,
            });
        }
        let max_ues = sbs.iter().map(|c| c.ues.len()).max().unwrap_or(0).max(1);
        let max_scale = sbs.iter().map(|c| c.traffic_scale).fold(0.0, f64::max);
        // Headroom for lognormal jitter.
        let demand_norm = (max_ues as f64 * config.peak_rate_per_ue_bps * max_scale * 1.5).max(1.0);
        let mut state = Self {
            config: config.clone(),
            profile,
            mbs,
            sbs,
            ues,
            clock: config.start_hour,
            mbs_load: 0.0,
            demand_norm,
            max_ues,
        };
        state.draw_demands(traffic_rng);
        Ok(state)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn profile(&self) -> &TrafficProfile {
        &self.profile
    }

    pub fn num_sbs(&self) -> usize {
        self.sbs.len()
    }

    fn draw_demands<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let hour = self.clock;
        for ue in &mut self.ues {
            let scale = ue.home.map_or(1.0, |h| self.sbs[h].traffic_scale);
            ue.demand = traffic_demand(&self.profile, scale, hour, rng);
        }
    }

    /// Zeroes demand everywhere (useful for degenerate scenarios).
    pub fn set_demands(&mut self, demand: f64) {
        for ue in &mut self.ues {
            ue.demand = demand;
        }
    }

    pub fn serving_cell(&self, ue: usize) -> Cell {
        match self.ues[ue].home {
            Some(h) if self.sbs[h].mode == SleepMode::Active => Cell::Small(h),
            _ => Cell::Macro,
        }
    }

    fn cell_position_and_power(&self, cell: Cell) -> (Position, f64) {
        match cell {
            Cell::Macro => (self.mbs, self.config.mbs_tx_power_w),
            Cell::Small(i) => (self.sbs[i].position, self.config.sbs_tx_power_w),
        }
    }

    pub fn snr(&self, cell: Cell, ue: usize) -> f64 {
        let (pos, power) = self.cell_position_and_power(cell);
        let pl = path_loss_db(pos.distance(&self.ues[ue].position));
        power * 10f64.powf(-pl / 10.0) / dbm_to_watts(self.config.noise_dbm)
    }

    /// Full-bandwidth Shannon capacity of `ue` on `cell`, bit/s.
    pub fn link_capacity(&self, cell: Cell, ue: usize) -> f64 {
        let bandwidth = match cell {
            Cell::Macro => self.config.mbs_bandwidth_hz,
            Cell::Small(_) => self.config.bandwidth_hz,
        };
        bandwidth * (1.0 + self.snr(cell, ue)).log2()
    }

    pub fn attached(&self, cell: Cell) -> Vec<usize> {
        (0..self.ues.len()).filter(|&u| self.serving_cell(u) == cell).collect()
    }

    /// Delivered rate of `ue` on `cell` under the current attachment:
    /// equal bandwidth share, capped by demand.
    pub fn ue_rate(&self, cell: Cell, ue: usize) -> f64 {
        let n = self.attached(cell).len().max(1);
        (self.link_capacity(cell, ue) / n as f64).min(self.ues[ue].demand)
    }

    /// Per-UE delivered rates and per-cell utilization (MBS last).
    fn serve(&self) -> (Vec<f64>, Vec<f64>, f64) {
        let n_sbs = self.sbs.len();
        let mut counts = vec![0usize; n_sbs + 1];
        let cells: Vec<Cell> = (0..self.ues.len()).map(|u| self.serving_cell(u)).collect();
        for c in &cells {
            match c {
                Cell::Small(i) => counts[*i] += 1,
                Cell::Macro => counts[n_sbs] += 1,
            }
        }
        let mut delivered = vec![0.0; self.ues.len()];
        let mut util = vec![0.0; n_sbs];
        let mut mbs_util = 0.0;
        for (u, cell) in cells.iter().enumerate() {
            let idx = match cell {
                Cell::Small(i) => *i,
                Cell::Macro => n_sbs,
            };
            let cap = self.link_capacity(*cell, u);
            let rate = (cap / counts[idx] as f64).min(self.ues[u].demand);
            delivered[u] = rate;
            let used = if cap > 0.0 { rate / cap } else { 0.0 };
            match cell {
                Cell::Small(i) => util[*i] += used,
                Cell::Macro => mbs_util += used,
            }
        }
        (delivered, util, mbs_util)
    }

    /// Applies one joint sleep decision, serves the current demand,
    /// advances the clock and draws the next step's demand.
    pub fn step<R: Rng + ?Sized>(&mut self, actions: &[SleepMode], rng: &mut R) -> Result<StepOutcome> {
        if actions.len() != self.sbs.len() {
            return Err(Error::DimensionMismatch {
                context: "NetworkState::step actions",
                expected: self.sbs.len(),
                actual: actions.len(),
            });
        }
        let cfg = &self.config;
        let dt = cfg.step_seconds();
        let previous: Vec<SleepMode> = self.sbs.iter().map(|c| c.mode).collect();
        for (cell, mode) in self.sbs.iter_mut().zip(actions) {
            cell.mode = *mode;
        }
        let (delivered, util, mbs_util) = self.serve();
        let e_ref = cfg.reference_energy();

        let mut rewards = Vec::with_capacity(self.sbs.len());
        let mut sbs_throughput = Vec::with_capacity(self.sbs.len());
        let mut sbs_energy = Vec::with_capacity(self.sbs.len());
        for (i, cell) in self.sbs.iter().enumerate() {
            let energy = match cell.mode {
                SleepMode::Active => {
                    let wake = match previous[i] {
                        SleepMode::Active => 0.0,
                        SleepMode::Sleep => cfg.wake_energy_factor[0],
                        SleepMode::DeepSleep => cfg.wake_energy_factor[1],
                    };
                    (cfg.sbs_active_power_w * (1.0 + wake) + cfg.sbs_load_power_w * util[i].min(1.0)) * dt
                }
                SleepMode::Sleep => cfg.sleep_power_factor * cfg.sbs_active_power_w * dt,
                SleepMode::DeepSleep => cfg.deep_sleep_power_factor * cfg.sbs_active_power_w * dt,
            };
            let demand: f64 = cell.ues.iter().map(|&u| self.ues[u].demand).sum();
            let served: f64 = cell.ues.iter().map(|&u| delivered[u]).sum();
            let (satisfaction, drop) = if demand > 0.0 {
                let dropped = if cell.mode == SleepMode::Active { 0.0 } else { demand - served };
                (served / demand, dropped / demand)
            } else {
                (0.0, 0.0)
            };
            let saving = 1.0 - energy / e_ref;
            rewards.push(cfg.w_throughput * satisfaction + cfg.w_energy * saving - cfg.w_drop * drop);
            sbs_throughput.push(served);
            sbs_energy.push(energy);
        }
        let mbs_energy = (cfg.mbs_active_power_w + cfg.mbs_load_power_w * mbs_util.min(1.0)) * dt;
        let system_throughput: f64 = delivered.iter().sum();
        let total_energy = sbs_energy.iter().sum::<f64>() + mbs_energy;
        let energy_efficiency = system_throughput * dt / total_energy;

        self.mbs_load = mbs_util.min(1.0);
        self.clock = (self.clock + cfg.step_minutes / 60.0).rem_euclid(24.0);
        self.draw_demands(rng);
        let observations = (0..self.sbs.len()).map(|i| self.observe(i)).collect();
        Ok(StepOutcome {
            rewards,
            sbs_throughput,
            sbs_energy,
            mbs_energy,
            system_throughput,
            energy_efficiency,
            observations,
        })
    }

    /// `[sin hour, cos hour, own demand, own UE count, mode one-hot (3),
    /// MBS load]`, every entry in [-1, 1].
    pub fn observe(&self, sbs_id: usize) -> Vec<f64> {
        let cell = &self.sbs[sbs_id];
        let angle = 2.0 * PI * self.clock / 24.0;
        let demand: f64 = cell.ues.iter().map(|&u| self.ues[u].demand).sum();
        let mut obs = vec![
            angle.sin(),
            angle.cos(),
            (demand / self.demand_norm).min(1.0),
            cell.ues.len() as f64 / self.max_ues as f64,
            0.0,
            0.0,
            0.0,
            self.mbs_load,
        ];
        obs[4 + cell.mode.index()] = 1.0;
        obs
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.sbs.len()).map(|i| self.observe(i)).collect()
    }
}
