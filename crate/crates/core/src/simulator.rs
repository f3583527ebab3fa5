//! Exact event-driven simulation of the polymerization process.
//!
//! Two dynamics are supported:
//!
//! * [`SimulationMode::Full`]: every size grows and fragments.
//! * [`SimulationMode::Truncated`]: polymers reaching the nucleus size `n_c`
//!   are frozen; the size-`n_c` count only ever increases and each increment
//!   is recorded as a nucleation event.
//!
//! The engine keeps two Fenwick trees keyed by polymer size. Growth weights
//! are stored without the common factor `u_1 / N`, which is applied when an
//! event is drawn, so a change of the monomer count touches one leaf only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelParams};
use crate::state::{SystemState, Transition, TransitionError};
use crate::sumtree::SumTree;

/// Safety net on the number of events of a single trajectory.
pub const DEFAULT_EVENT_BUDGET: u64 = 1_000_000_000;
/// Default number of samples of the mass curve.
pub const DEFAULT_CURVE_POINTS: usize = 512;
/// Default slack `epsilon` of the seeded initial-condition gate.
pub const DEFAULT_SEED_EPSILON: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("total mass N = {n} is smaller than the nucleus size {n_c}")]
    MassTooSmall { n: u64, n_c: usize },
    #[error("invalid initial condition: {0}")]
    InitialCondition(String),
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("total event rate is not finite ({0})")]
    RateOverflow(f64),
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    Full,
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    PureMonomers,
    /// Counts of sizes `2, 3, ..., n_c - 1`; the remaining mass is monomers.
    Seeded {
        counts: Vec<u64>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_epsilon() -> f64 {
    DEFAULT_SEED_EPSILON
}

impl InitialCondition {
    /// Builds the initial state, enforcing a finite-`N` reading of the
    /// initial-state condition for seeded starts:
    /// `u_k <= N / Phi(N)^(k-1-eps)` for `2 <= k <= k_c` and
    /// `sum_{k_c < k < n_c} u_k <= Phi(N)^eps`.
    pub fn build(&self, params: &ModelParams, n: u64) -> Result<SystemState, SimulationError> {
        match self {
            InitialCondition::PureMonomers => Ok(SystemState::pure_monomers(n)),
            InitialCondition::Seeded { counts, epsilon } => {
                if counts.len() > params.n_c - 2 {
                    return Err(SimulationError::InitialCondition(format!(
                        "seeded counts cover sizes 2..{}, at most {} entries allowed",
                        counts.len() + 1,
                        params.n_c - 2
                    )));
                }
                let seeded_mass: u64 = counts.iter().enumerate().map(|(i, &c)| (i as u64 + 2) * c).sum();
                if seeded_mass > n {
                    return Err(SimulationError::InitialCondition(format!(
                        "seeded mass {seeded_mass} exceeds N = {n}"
                    )));
                }
                let k_c = params.k_c()?;
                let phi = params.phi(n);
                let mut upper_sum = 0u64;
                for (i, &c) in counts.iter().enumerate() {
                    let k = i + 2;
                    if k <= k_c {
                        let bound = n as f64 / phi.powf(k as f64 - 1.0 - epsilon);
                        if c as f64 > bound {
                            return Err(SimulationError::InitialCondition(format!(
                                "u_{k} = {c} exceeds N / Phi(N)^(k-1-eps) = {bound:.3}"
                            )));
                        }
                    } else {
                        upper_sum += c;
                    }
                }
                let bound = phi.powf(*epsilon);
                if upper_sum as f64 > bound {
                    return Err(SimulationError::InitialCondition(format!(
                        "sum of u_k for k_c < k < n_c is {upper_sum}, exceeds Phi(N)^eps = {bound:.3}"
                    )));
                }
                let mut all = vec![n - seeded_mass];
                all.extend_from_slice(counts);
                Ok(SystemState::from_counts(&all))
            }
        }
    }
}

/// When a trajectory stops. Rescaled times are in units of `Psi(N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopRule {
    /// At the first polymer of size `n_c`.
    FirstNucleation,
    /// When the mass in polymers of size `>= n_c` reaches `delta * N`.
    Lag { delta: f64 },
    FixedHorizon { t: f64 },
    FixedRescaledHorizon { t: f64 },
    /// After exactly this many events.
    EventBudget { events: u64 },
    /// Truncated mode only: at the first nucleation after rescaled time `t`,
    /// so that every inter-nucleation gap starting before `t` is observed.
    StreamWindow { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveGrid {
    pub points: usize,
    /// Grid end in units of `Psi(N)`.
    pub rescaled_span: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassAudit {
    EveryEvent,
    Sampled { every: u64 },
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverSet {
    /// Threshold of the lag-time observer.
    #[serde(default)]
    pub lag_delta: Option<f64>,
    #[serde(default)]
    pub half_time: bool,
    #[serde(default)]
    pub mass_curve: Option<CurveGrid>,
    /// Occupation integrals behind the balance functionals.
    #[serde(default)]
    pub balance: bool,
    #[serde(default = "default_audit")]
    pub mass_audit: MassAudit,
}

fn default_audit() -> MassAudit {
    MassAudit::Sampled { every: 4096 }
}

impl Default for ObserverSet {
    fn default() -> Self {
        ObserverSet { lag_delta: None, half_time: false, mass_curve: None, balance: false, mass_audit: default_audit() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: SimulationMode,
    pub init: InitialCondition,
    pub stop: StopRule,
    #[serde(default)]
    pub observers: ObserverSet,
    #[serde(default = "default_budget")]
    pub event_budget: u64,
}

fn default_budget() -> u64 {
    DEFAULT_EVENT_BUDGET
}

impl RunConfig {
    pub fn new(mode: SimulationMode, stop: StopRule) -> Self {
        RunConfig {
            mode,
            init: InitialCondition::PureMonomers,
            stop,
            observers: ObserverSet::default(),
            event_budget: DEFAULT_EVENT_BUDGET,
        }
    }

    pub fn with_observers(mut self, observers: ObserverSet) -> Self {
        self.observers = observers;
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.event_budget = budget;
        self
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let positive = |what: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(SimulationError::Config(format!("{what} must be positive, got {x}")))
            }
        };
        match self.stop {
            StopRule::Lag { delta } => {
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(SimulationError::Config(format!("lag delta {delta} not in (0, 1)")));
                }
            }
            StopRule::FixedHorizon { t } | StopRule::FixedRescaledHorizon { t } => positive("horizon", t)?,
            StopRule::StreamWindow { t } => {
                positive("stream window", t)?;
                if self.mode != SimulationMode::Truncated {
                    return Err(SimulationError::Config("stream_window needs truncated mode".into()));
                }
            }
            StopRule::FirstNucleation | StopRule::EventBudget { .. } => {}
        }
        if let Some(delta) = self.observers.lag_delta {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(SimulationError::Config(format!("lag delta {delta} not in (0, 1)")));
            }
        }
        if let Some(grid) = self.observers.mass_curve {
            if grid.points < 2 {
                return Err(SimulationError::Config("mass curve needs at least 2 points".into()));
            }
            positive("mass curve span", grid.rescaled_span)?;
        }
        if let MassAudit::Sampled { every: 0 } = self.observers.mass_audit {
            return Err(SimulationError::Config("mass audit period must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassPoint {
    pub t: f64,
    /// Mass in polymers of size `>= n_c`.
    pub stable_mass: u64,
    /// Mass in polymers of size `>= 2`.
    pub polymerized_mass: u64,
}

/// Occupation integrals for `k = 1..=n_c-2` (stored at index `k - 1`):
/// `first[k] = int X_1^(k+1) X_(n_c-k-1) du` and
/// `second[k] = int X_1^k X_(n_c-k) du`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceAccumulators {
    pub n_c: usize,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl BalanceAccumulators {
    pub fn new(n_c: usize) -> Self {
        BalanceAccumulators { n_c, first: vec![0.0; n_c - 2], second: vec![0.0; n_c - 2] }
    }

    /// Adds `dt` worth of occupation of the state whose counts are `counts`
    /// (indexed by size, index 0 unused).
    pub fn accumulate(&mut self, counts: &[u64], dt: f64) {
        if dt <= 0.0 {
            return;
        }
        let x = |k: usize| counts.get(k).copied().unwrap_or(0) as f64;
        let x1 = x(1);
        let mut x1_pow = x1; // X_1^k
        for k in 1..=self.n_c - 2 {
            self.first[k - 1] += x1_pow * x1 * x(self.n_c - k - 1) * dt;
            self.second[k - 1] += x1_pow * x(self.n_c - k) * dt;
            x1_pow *= x1;
        }
    }
}

/// Observables of one simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub n: u64,
    pub mode: SimulationMode,
    /// Scale `Psi(N)` used for rescaled quantities.
    pub psi: f64,
    pub first_nucleation_time: Option<f64>,
    /// Times of the size-`n_c` count increments (truncated mode).
    pub nucleation_event_times: Vec<f64>,
    pub lag_time: Option<f64>,
    pub half_time: Option<f64>,
    pub mass_curve: Vec<MassPoint>,
    pub balance: Option<BalanceAccumulators>,
    pub event_count: u64,
    pub end_time: f64,
    /// The safety event budget ran out before the stop rule fired.
    pub truncated: bool,
    /// No transition was enabled before the stop rule fired.
    pub absorbed: bool,
    pub mass_checks: u64,
    pub mass_violations: u64,
    pub max_stable_mass: u64,
    /// `u_1, u_2, ...` at the end of the run.
    pub final_counts: Vec<u64>,
}

/// Adds the occupation of `state` over `dt` to the record's balance integrals.
pub fn accumulate_balance(record: &mut TrajectoryRecord, state: &SystemState, dt: f64) {
    if let Some(acc) = record.balance.as_mut() {
        acc.accumulate(state.raw(), dt);
    }
}

/// Scaled balance functional
/// `[(lambda_{n_c-k-1} / N) A - mu_{n_c-k} Phi(N) B] / (N Phi(N))^k`.
/// A record without balance integrals yields 0.
pub fn delta_k(record: &TrajectoryRecord, params: &ModelParams, n: u64, k: usize) -> f64 {
    assert!(k >= 1 && k <= params.n_c - 2, "balance index k = {k} outside 1..=n_c-2");
    let Some(acc) = record.balance.as_ref() else {
        return 0.0;
    };
    let n_f = n as f64;
    let phi = params.phi(n);
    let raw = params.lambda(params.n_c - k - 1) / n_f * acc.first[k - 1]
        - params.mu(params.n_c - k) * phi * acc.second[k - 1];
    raw / (n_f * phi).powi(k as i32)
}

/// Enumerated rate table of a state; a slow reference for [`step`].
#[derive(Debug, Clone)]
pub struct RateTable {
    entries: Vec<(Transition, f64)>,
    total: f64,
}

impl RateTable {
    pub fn new(state: &SystemState, params: &ModelParams) -> Self {
        let entries = crate::state::enumerate_transitions(state, params);
        let total = entries.iter().map(|(_, r)| r).sum();
        RateTable { entries, total }
    }

    pub fn entries(&self) -> &[(Transition, f64)] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Transition whose cumulative-rate interval contains `u`, `0 <= u < total`.
    pub fn select(&self, u: f64) -> Option<Transition> {
        let mut acc = 0.0;
        for &(t, r) in &self.entries {
            acc += r;
            if u < acc {
                return Some(t);
            }
        }
        self.entries.last().map(|&(t, _)| t)
    }
}

/// The state has no enabled transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("absorbing state: no transition is enabled")]
pub struct Absorbing;

/// One exact jump-chain step: an `Exp(total)` waiting time and a transition
/// drawn proportionally to its rate.
pub fn step<R: Rng + ?Sized>(table: &RateTable, rng: &mut R) -> Result<(f64, Transition), Absorbing> {
    if !(table.total > 0.0) {
        return Err(Absorbing);
    }
    let dt: f64 = Exp1.sample(rng);
    let u = rng.random::<f64>() * table.total;
    let t = table.select(u).ok_or(Absorbing)?;
    Ok((dt / table.total, t))
}

/// Event engine holding the state and its rate trees.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    params: &'a ModelParams,
    mode: SimulationMode,
    n: u64,
    inv_n: f64,
    state: SystemState,
    growth: SumTree,
    fragmentation: SumTree,
    /// `mu_k^N` for `k < n_c` (index `k`).
    sub_nucleus_frag: Vec<f64>,
    stable_frag: f64,
    stable_mass: u64,
    buf: Vec<usize>,
}

impl<'a> Simulator<'a> {
    pub fn new(params: &'a ModelParams, mode: SimulationMode, state: SystemState) -> Result<Self, SimulationError> {
        params.validate()?;
        let n = state.total_mass();
        let n_c = params.n_c;
        if n < n_c as u64 {
            return Err(SimulationError::MassTooSmall { n, n_c });
        }
        let phi = params.phi(n);
        let mut sub_nucleus_frag = vec![0.0; n_c];
        for (k, rate) in sub_nucleus_frag.iter_mut().enumerate().skip(2) {
            *rate = phi * params.mu(k);
        }
        if sub_nucleus_frag.iter().any(|r| !r.is_finite()) {
            return Err(SimulationError::RateOverflow(phi));
        }
        if mode == SimulationMode::Truncated && state.max_size() > n_c {
            return Err(SimulationError::InitialCondition("truncated mode holds sizes up to n_c only".into()));
        }
        let capacity = params.k_max_tracked.max(n_c + 2).max(state.max_size() + 2);
        let stable_mass = (n_c..=state.max_size()).map(|k| k as u64 * state.count(k)).sum();
        let mut sim = Simulator {
            params,
            mode,
            n,
            inv_n: 1.0 / n as f64,
            state,
            growth: SumTree::new(capacity),
            fragmentation: SumTree::new(capacity),
            sub_nucleus_frag,
            stable_frag: params.mu(n_c),
            stable_mass,
            buf: Vec::with_capacity(8),
        };
        for k in 1..=sim.state.max_size() {
            sim.refresh(k);
        }
        Ok(sim)
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn mode(&self) -> SimulationMode {
        self.mode
    }

    pub fn stable_mass(&self) -> u64 {
        self.stable_mass
    }

    pub fn polymerized_mass(&self) -> u64 {
        self.n - self.state.monomers()
    }

    fn monomer_factor(&self) -> f64 {
        self.state.monomers() as f64 * self.inv_n
    }

    pub fn total_rate(&self) -> f64 {
        self.monomer_factor() * self.growth.total() + self.fragmentation.total()
    }

    fn is_active(&self, k: usize) -> bool {
        self.mode == SimulationMode::Full || k < self.params.n_c
    }

    /// Recomputes the tree leaves of size `k` from the counts.
    fn refresh(&mut self, k: usize) {
        let uk = self.state.count(k) as f64;
        let active = self.is_active(k);
        let g = if !active || (k == 1 && self.state.monomers() < 2) { 0.0 } else { self.params.lambda(k) * uk };
        self.growth.set(k, g);
        if k >= 2 {
            let rate = if k < self.params.n_c { self.sub_nucleus_frag[k] } else { self.stable_frag };
            self.fragmentation.set(k, if active { rate * uk } else { 0.0 });
        }
    }

    /// Draws the waiting time and the next transition without applying it.
    pub fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Option<(f64, Transition)>, SimulationError> {
        let factor = self.monomer_factor();
        let growth_part = factor * self.growth.total();
        let total = growth_part + self.fragmentation.total();
        if !total.is_finite() {
            return Err(SimulationError::RateOverflow(total));
        }
        if total <= 0.0 {
            return Ok(None);
        }
        let dt = <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / total;
        let u = rng.random::<f64>() * total;
        let transition = if u < growth_part {
            self.growth.find(u / factor).map(Transition::Growth)
        } else {
            self.fragmentation.find(u - growth_part).map(Transition::Fragmentation)
        };
        Ok(transition.map(|t| (dt, t)))
    }

    /// Applies `transition`, drawing the fragmentation outcome from `rng`.
    pub fn apply<R: Rng + ?Sized>(&mut self, transition: Transition, rng: &mut R) -> Result<(), TransitionError> {
        let n_c = self.params.n_c;
        match transition {
            Transition::Growth(k) => {
                self.state.apply_growth(k)?;
                if k + 1 == n_c {
                    self.stable_mass += n_c as u64;
                } else if k >= n_c {
                    self.stable_mass += 1;
                }
                self.refresh(1);
                self.refresh(k);
                self.refresh(k + 1);
            }
            Transition::Fragmentation(k) => {
                let uk = self.state.count(k);
                if k < 2 || uk == 0 {
                    return Err(TransitionError::NothingToFragment(k));
                }
                let mut buf = std::mem::take(&mut self.buf);
                self.params.fragmentation.sample_into(k, rng, &mut buf);
                *self.state.slot(k) -= 1;
                if k >= n_c {
                    self.stable_mass -= k as u64;
                }
                self.refresh(k);
                for &s in &buf {
                    *self.state.slot(s) += 1;
                    if s >= n_c {
                        self.stable_mass += s as u64;
                    }
                }
                for &s in &buf {
                    self.refresh(s);
                }
                self.buf = buf;
            }
        }
        Ok(())
    }
}

struct Observers {
    psi: f64,
    lag_threshold: Option<f64>,
    half_time: bool,
    curve: Option<(CurveGrid, usize)>,
    audit: MassAudit,
}

impl Observers {
    fn grid_time(&self, grid: &CurveGrid, i: usize) -> f64 {
        grid.rescaled_span * self.psi * i as f64 / (grid.points - 1) as f64
    }
}

/// Simulates one trajectory of the process with total mass `n`.
pub fn run(params: &ModelParams, n: u64, config: &RunConfig, seed: u64) -> Result<TrajectoryRecord, SimulationError> {
    config.validate()?;
    let state = config.init.build(params, n)?;
    let mut sim = Simulator::new(params, config.mode, state)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_c = params.n_c;
    let psi = params.psi(n);

    let lag_delta = match config.stop {
        StopRule::Lag { delta } => Some(delta),
        _ => config.observers.lag_delta,
    };
    let mut obs = Observers {
        psi,
        lag_threshold: lag_delta.map(|d| d * n as f64),
        half_time: config.observers.half_time,
        curve: config.observers.mass_curve.map(|g| (g, 0)),
        audit: config.observers.mass_audit,
    };
    let horizon = match config.stop {
        StopRule::FixedHorizon { t } => Some(t),
        StopRule::FixedRescaledHorizon { t } => Some(t * psi),
        _ => None,
    };
    let stream_end = match config.stop {
        StopRule::StreamWindow { t } => Some(t * psi),
        _ => None,
    };

    let mut record = TrajectoryRecord {
        seed,
        n,
        mode: config.mode,
        psi,
        first_nucleation_time: None,
        nucleation_event_times: Vec::new(),
        lag_time: None,
        half_time: None,
        mass_curve: Vec::new(),
        balance: config.observers.balance.then(|| BalanceAccumulators::new(n_c)),
        event_count: 0,
        end_time: 0.0,
        truncated: false,
        absorbed: false,
        mass_checks: 0,
        mass_violations: 0,
        max_stable_mass: sim.stable_mass(),
        final_counts: Vec::new(),
    };

    let mut t = 0.0;
    check_thresholds(&sim, &mut obs, &mut record, t);
    loop {
        if let StopRule::EventBudget { events } = config.stop {
            if record.event_count >= events {
                break;
            }
        }
        if record.event_count >= config.event_budget {
            record.truncated = true;
            break;
        }
        let proposal = sim.propose(&mut rng)?;
        let Some((dt, transition)) = proposal else {
            // Absorbed: the state stays frozen up to any horizon.
            match horizon {
                Some(h) => {
                    observe_interval(&sim, &mut obs, &mut record, t, h - t);
                    t = h;
                }
                None => record.absorbed = true,
            }
            break;
        };
        if let Some(h) = horizon {
            if t + dt > h {
                observe_interval(&sim, &mut obs, &mut record, t, h - t);
                t = h;
                break;
            }
        }
        observe_interval(&sim, &mut obs, &mut record, t, dt);
        t += dt;
        sim.apply(transition, &mut rng)?;
        record.event_count += 1;
        audit(&sim, &obs, &mut record);

        if transition == Transition::Growth(n_c - 1) {
            if record.first_nucleation_time.is_none() {
                record.first_nucleation_time = Some(t);
            }
            if config.mode == SimulationMode::Truncated {
                record.nucleation_event_times.push(t);
            }
        }
        record.max_stable_mass = record.max_stable_mass.max(sim.stable_mass());
        check_thresholds(&sim, &mut obs, &mut record, t);

        let done = match config.stop {
            StopRule::FirstNucleation => record.first_nucleation_time.is_some(),
            StopRule::Lag { .. } => record.lag_time.is_some(),
            StopRule::StreamWindow { .. } => {
                let end = stream_end.unwrap_or(f64::INFINITY);
                record.nucleation_event_times.last().is_some_and(|&last| last > end)
            }
            _ => false,
        };
        if done {
            break;
        }
    }
    // Remaining grid points up to a horizon carry the final state.
    if horizon.is_some() {
        fill_curve_until(&sim, &mut obs, &mut record, t, true);
    }
    record.end_time = t;
    record.final_counts = sim.state().counts().to_vec();
    Ok(record)
}

fn check_thresholds(sim: &Simulator<'_>, obs: &mut Observers, record: &mut TrajectoryRecord, t: f64) {
    if record.lag_time.is_none() {
        if let Some(threshold) = obs.lag_threshold {
            if sim.stable_mass() as f64 >= threshold {
                record.lag_time = Some(t);
            }
        }
    }
    if obs.half_time && record.half_time.is_none() && 2 * sim.polymerized_mass() >= record.n {
        record.half_time = Some(t);
    }
}

fn audit(sim: &Simulator<'_>, obs: &Observers, record: &mut TrajectoryRecord) {
    let due = match obs.audit {
        MassAudit::EveryEvent => true,
        MassAudit::Sampled { every } => record.event_count.is_multiple_of(every),
        MassAudit::Off => false,
    };
    if due {
        record.mass_checks += 1;
        if sim.state().check_mass().is_err() {
            record.mass_violations += 1;
        }
        debug_assert_eq!(record.mass_violations, 0, "mass conservation violated");
    }
}

fn observe_interval(sim: &Simulator<'_>, obs: &mut Observers, record: &mut TrajectoryRecord, t: f64, dt: f64) {
    if let Some(acc) = record.balance.as_mut() {
        acc.accumulate(sim.state().raw(), dt);
    }
    fill_curve_until(sim, obs, record, t + dt, false);
}

/// Records grid points strictly before `until` (or up to and including it
/// when `inclusive`) with the current state.
fn fill_curve_until(sim: &Simulator<'_>, obs: &mut Observers, record: &mut TrajectoryRecord, until: f64, inclusive: bool) {
    let Some((grid, mut next)) = obs.curve else {
        return;
    };
    while next < grid.points {
        let gt = obs.grid_time(&grid, next);
        if gt > until || (!inclusive && gt == until) {
            break;
        }
        record.mass_curve.push(MassPoint {
            t: gt,
            stable_mass: sim.stable_mass(),
            polymerized_mass: sim.polymerized_mass(),
        });
        next += 1;
    }
    obs.curve = Some((grid, next));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fragmentation::FragmentationSpec;
    use crate::model::ScalingFunction;
    use std::collections::HashMap;

    fn reference(n_c: usize) -> ModelParams {
        ModelParams::uniform(n_c, 1.0, 1.0, ScalingFunction::power(1.0), FragmentationSpec::Uniform).unwrap()
    }

    fn table_params(phi_value: f64) -> ModelParams {
        let mut p = reference(4);
        p.phi = ScalingFunction::Table { values: vec![phi_value], k_c: Some(1) };
        p
    }

    #[test]
    fn step_on_single_transition_and_absorbing_state() {
        let p = table_params(10.0);
        let table = RateTable::new(&SystemState::from_counts(&[10, 0, 0, 0]), &p);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(step(&table, &mut rng).unwrap().1, Transition::Growth(1));
        }
        let absorbing = RateTable::new(&SystemState::from_counts(&[1]), &p);
        assert_eq!(step(&absorbing, &mut rng), Err(Absorbing));
    }

    #[test]
    fn step_fragmentation_probability() {
        // P(frag2) = 10 / 17.2 from the hand-enumerated table.
        let p = table_params(10.0);
        let table = RateTable::new(&SystemState::from_counts(&[8, 1, 0, 0]), &p);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 200_000;
        let hits = (0..draws)
            .filter(|_| step(&table, &mut rng).unwrap().1 == Transition::Fragmentation(2))
            .count();
        let expected = 10.0 / 17.2;
        let se = (expected * (1.0 - expected) / draws as f64).sqrt();
        assert!(((hits as f64 / draws as f64) - expected).abs() < 4.0 * se);
    }

    #[test]
    fn tree_engine_matches_enumerated_rates() {
        let p = table_params(10.0);
        let state = SystemState::from_counts(&[8, 1, 0, 0]);
        let sim = Simulator::new(&p, SimulationMode::Full, state.clone()).unwrap();
        let table = RateTable::new(&state, &p);
        assert!((sim.total_rate() - table.total()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut freq: HashMap<Transition, usize> = HashMap::new();
        let draws = 100_000;
        for _ in 0..draws {
            let (_, t) = sim.propose(&mut rng).unwrap().unwrap();
            *freq.entry(t).or_default() += 1;
        }
        for &(t, r) in table.entries() {
            let p_exact = r / table.total();
            let got = freq.get(&t).copied().unwrap_or(0) as f64 / draws as f64;
            let se = (p_exact * (1.0 - p_exact) / draws as f64).sqrt();
            assert!((got - p_exact).abs() < 3.0 * se, "{t:?}: {got} vs {p_exact}");
        }
    }

    #[test]
    fn minimal_mass_nucleates_with_no_monomers_left() {
        let p = reference(4);
        let cfg = RunConfig::new(SimulationMode::Full, StopRule::FirstNucleation)
            .with_observers(ObserverSet { mass_audit: MassAudit::EveryEvent, ..Default::default() });
        for seed in 0..50 {
            let rec = run(&p, 4, &cfg, seed).unwrap();
            assert!(rec.first_nucleation_time.is_some());
            assert_eq!(rec.final_counts, vec![0, 0, 0, 1]);
            assert_eq!(rec.mass_violations, 0);
            assert_eq!(rec.mass_checks, rec.event_count);
        }
    }

    #[test]
    fn truncated_nucleations_form_a_counting_path() {
        let p = reference(4);
        let cfg = RunConfig::new(SimulationMode::Truncated, StopRule::FixedRescaledHorizon { t: 3.0 });
        let rec = run(&p, 60, &cfg, 5).unwrap();
        assert!(rec.nucleation_event_times.windows(2).all(|w| w[0] <= w[1]));
        let last = *rec.final_counts.get(3).unwrap_or(&0);
        assert_eq!(last as usize, rec.nucleation_event_times.len());
        assert!(rec.final_counts.len() <= 4);
    }

    #[test]
    fn identical_seeds_give_identical_records() {
        let p = reference(4);
        let cfg = RunConfig::new(SimulationMode::Full, StopRule::FixedRescaledHorizon { t: 0.5 }).with_observers(
            ObserverSet {
                lag_delta: Some(0.1),
                half_time: true,
                mass_curve: Some(CurveGrid { points: 32, rescaled_span: 0.5 }),
                balance: true,
                mass_audit: MassAudit::EveryEvent,
            },
        );
        let a = run(&p, 100, &cfg, 99).unwrap();
        let b = run(&p, 100, &cfg, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mass_curve.len(), 32);
        let c = run(&p, 100, &cfg, 100).unwrap();
        assert_ne!(a.event_count, c.event_count);
    }

    #[test]
    fn fixed_horizon_ends_exactly_at_horizon() {
        let p = reference(4);
        let cfg = RunConfig::new(SimulationMode::Full, StopRule::FixedHorizon { t: 2.5 });
        let rec = run(&p, 50, &cfg, 1).unwrap();
        assert_eq!(rec.end_time, 2.5);
        assert!(!rec.truncated);
    }

    #[test]
    fn event_budget_stop_and_safeguard() {
        let p = reference(4);
        let rec = run(&p, 50, &RunConfig::new(SimulationMode::Full, StopRule::EventBudget { events: 100 }), 1).unwrap();
        assert_eq!(rec.event_count, 100);
        assert!(!rec.truncated);
        let cfg = RunConfig::new(SimulationMode::Full, StopRule::FirstNucleation).with_budget(10);
        let rec = run(&p, 500, &cfg, 1).unwrap();
        assert!(rec.truncated);
        assert_eq!(rec.event_count, 10);
        assert_eq!(rec.first_nucleation_time, None);
    }

    #[test]
    fn balance_increments_on_frozen_monomers() {
        let mut acc = BalanceAccumulators::new(4);
        let counts = [0u64, 10, 0, 0, 0];
        acc.accumulate(&counts, 0.5);
        // k = 1: X_1^2 X_2 = 0, X_1 X_3 = 0; k = 2: X_1^3 X_1 = 10^4, X_1^2 X_2 = 0.
        assert_eq!(acc.first, vec![0.0, 5000.0]);
        assert_eq!(acc.second, vec![0.0, 0.0]);
        let before = acc.clone();
        acc.accumulate(&counts, 0.0);
        assert_eq!(acc, before);
    }

    #[test]
    fn delta_of_empty_and_frozen_records() {
        let p = reference(4);
        let cfg = RunConfig::new(SimulationMode::Truncated, StopRule::EventBudget { events: 0 });
        let mut rec = run(&p, 100, &cfg, 1).unwrap();
        assert_eq!(delta_k(&rec, &p, 100, 1), 0.0);
        rec.balance = Some(BalanceAccumulators::new(4));
        accumulate_balance(&mut rec, &SystemState::pure_monomers(100), 3.0);
        assert_eq!(delta_k(&rec, &p, 100, 1), 0.0);
    }

    #[test]
    fn seeded_initial_condition_gate() {
        let p = ModelParams::uniform(5, 1.0, 1.0, ScalingFunction::power(0.5), FragmentationSpec::Uniform).unwrap();
        // N = 10^4: Phi = 100, k_c = 2; u_2 <= 10^4 / 100^0.9 ~ 158.5, u_3 + u_4 <= 100^0.1 ~ 1.58.
        let ok = InitialCondition::Seeded { counts: vec![150, 1, 0], epsilon: 0.1 };
        let state = ok.build(&p, 10_000).unwrap();
        assert_eq!(state.monomers(), 10_000 - 300 - 3);
        let too_many_dimers = InitialCondition::Seeded { counts: vec![200], epsilon: 0.1 };
        assert!(too_many_dimers.build(&p, 10_000).is_err());
        let too_many_large = InitialCondition::Seeded { counts: vec![0, 1, 1], epsilon: 0.1 };
        assert!(too_many_large.build(&p, 10_000).is_err());
        let stable = InitialCondition::Seeded { counts: vec![0, 0, 0, 1], epsilon: 0.1 };
        assert!(stable.build(&p, 10_000).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::new(SimulationMode::Full, StopRule::Lag { delta: 1.5 }).validate().is_err());
        assert!(RunConfig::new(SimulationMode::Full, StopRule::StreamWindow { t: 1.0 }).validate().is_err());
        assert!(RunConfig::new(SimulationMode::Truncated, StopRule::StreamWindow { t: 1.0 }).validate().is_ok());
        let p = reference(4);
        let err = run(&p, 3, &RunConfig::new(SimulationMode::Full, StopRule::FirstNucleation), 0).unwrap_err();
        assert!(matches!(err, SimulationError::MassTooSmall { .. }));
    }

    #[test]
    fn stream_window_overshoots_to_next_nucleation() {
        let p = reference(4);
        let cfg = RunConfig::new(SimulationMode::Truncated, StopRule::StreamWindow { t: 1.0 });
        let rec = run(&p, 40, &cfg, 8).unwrap();
        let psi = p.psi(40);
        let last = *rec.nucleation_event_times.last().unwrap();
        assert!(last > psi);
        assert!(rec.nucleation_event_times[..rec.nucleation_event_times.len() - 1].iter().all(|&t| t <= psi));
    }

    #[test]
    fn lag_and_half_time_observers() {
        // A large nucleus-free seed with cheap fragmentation lets stable mass build up quickly.
        let p = ModelParams::new(
            3,
            vec![5.0, 5.0],
            vec![1.0, 0.05],
            ScalingFunction::Table { values: vec![1.0], k_c: Some(1) },
            FragmentationSpec::Uniform,
        )
        .unwrap();
        let cfg = RunConfig::new(SimulationMode::Full, StopRule::Lag { delta: 0.5 })
            .with_observers(ObserverSet { half_time: true, mass_audit: MassAudit::EveryEvent, ..Default::default() });
        let rec = run(&p, 200, &cfg, 4).unwrap();
        let lag = rec.lag_time.unwrap();
        assert!(rec.first_nucleation_time.unwrap() <= lag);
        assert!(rec.half_time.unwrap() <= lag);
        assert_eq!(rec.mass_violations, 0);
    }
}
