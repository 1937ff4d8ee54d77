//! Priority-guided co-tuning of the communications in one overlap group.
//!
//! Every communication climbs from its minimum resources (NC, NT, C) in
//! multiplicative steps sized by its own relative improvement. The loop
//! always advances the communication whose last step cost the least
//! computation time per microsecond of communication time saved (the
//! priority `H`). A communication stops when a step makes it slower, when
//! the comm stream finishes before the compute stream, or when it runs out of
//! resources to grow.

use serde::{Deserialize, Serialize};

use crate::commperf::{comm_time, ParamTable, SubspaceKey};
use crate::error::{Error, Result};
use crate::model::{
    CommConfig, CommOp, GpuSpec, Workload, CHUNK_GRANULARITY, MIB, NC_MIN, NT_LADDER, NT_MAX, NT_MIN,
};
use crate::simulator::{profile, Measurement};

/// Priority every communication starts with.
pub const INITIAL_PRIORITY: f64 = 0.01;

/// Anything that can run the overlap group under a set of configs and
/// report per-comm times and the X, Y, Z totals.
pub trait Profiler {
    fn profile(&mut self, configs: &[CommConfig]) -> Result<Measurement>;
}

impl<F> Profiler for F
where
    F: FnMut(&[CommConfig]) -> Result<Measurement>,
{
    fn profile(&mut self, configs: &[CommConfig]) -> Result<Measurement> {
        self(configs)
    }
}

/// Profiles by simulation.
pub struct SimProfiler<'a> {
    pub workload: &'a Workload,
    pub params: &'a ParamTable,
}

impl Profiler for SimProfiler<'_> {
    fn profile(&mut self, configs: &[CommConfig]) -> Result<Measurement> {
        profile(self.workload, configs, self.params)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Priority {
    Value(f64),
    /// The step did not shorten the communication.
    AlreadyOptimal,
}

/// `H = (Y' − Y) / (x_old − x_new)`; lower means tune first.
pub fn compute_h(y: f64, y_new: f64, x_old: f64, x_new: f64) -> Priority {
    if x_old <= x_new {
        Priority::AlreadyOptimal
    } else {
        Priority::Value((y_new - y) / (x_old - x_new))
    }
}

/// Resource bounds for one communication.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLimits {
    pub nc_max: u32,
    pub chunk_min: u64,
    pub chunk_max: u64,
}

impl ResourceLimits {
    pub fn for_op(op: &CommOp, gpu: &GpuSpec) -> Self {
        ResourceLimits {
            nc_max: op.max_channels(gpu),
            chunk_min: op.bounds.chunk_size_min,
            chunk_max: op.bounds.chunk_size_max,
        }
    }

    /// Minimum NC, NT and C inside `cfg`'s subspace.
    pub fn minimum(&self, cfg: &CommConfig) -> CommConfig {
        CommConfig {
            num_channels: NC_MIN,
            num_threads: NT_MIN,
            chunk_size: self.chunk_min,
            ..*cfg
        }
    }

    pub fn is_minimum(&self, cfg: &CommConfig) -> bool {
        *cfg == self.minimum(cfg)
    }
}

/// Grows NC, NT and C by a factor `1 + lr`, at least one discrete step each,
/// clamped to the limits.
pub fn grow(cfg: &CommConfig, lr: f64, limits: &ResourceLimits) -> CommConfig {
    let factor = 1.0 + lr.max(0.0);

    let nc_scaled = (f64::from(cfg.num_channels) * factor).round() as u32;
    let num_channels = nc_scaled
        .max(cfg.num_channels + 1)
        .min(limits.nc_max)
        .max(cfg.num_channels.min(limits.nc_max));

    let nt_target = f64::from(cfg.num_threads) * factor;
    let nt_scaled = NT_LADDER
        .iter()
        .copied()
        .find(|&nt| f64::from(nt) >= nt_target)
        .unwrap_or(NT_MAX);
    let nt_next = NT_LADDER
        .iter()
        .copied()
        .find(|&nt| nt > cfg.num_threads)
        .unwrap_or(NT_MAX);
    let num_threads = nt_scaled.max(nt_next);

    let granules = (cfg.chunk_size as f64 * factor / CHUNK_GRANULARITY as f64).round() as u64;
    let chunk_size = (granules * CHUNK_GRANULARITY)
        .max(cfg.chunk_size + CHUNK_GRANULARITY)
        .min(limits.chunk_max)
        .max(cfg.chunk_size.min(limits.chunk_max));

    CommConfig {
        num_channels,
        num_threads,
        chunk_size,
        ..*cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestSeen {
    pub config: CommConfig,
    pub makespan: f64,
}

/// Tuning state of one communication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommTuneState {
    pub limits: ResourceLimits,
    /// s_j: the config currently in force.
    pub accepted: CommConfig,
    /// x of `accepted` once the climb has started.
    pub x_accepted: Option<f64>,
    /// s'_j: the next config to measure; `None` until the climb starts.
    pub candidate: Option<CommConfig>,
    pub priority: f64,
    pub done: bool,
    pub best_seen: Option<BestSeen>,
}

impl CommTuneState {
    pub fn new(accepted: CommConfig, limits: ResourceLimits) -> Self {
        CommTuneState {
            limits,
            accepted,
            x_accepted: None,
            candidate: None,
            priority: INITIAL_PRIORITY,
            done: false,
            best_seen: None,
        }
    }
}

/// What the profiler reported for a candidate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMeasurement {
    /// x of the tuned communication under the candidate.
    pub comm_time: f64,
    /// When the comm stream finishes. Equal to X when every communication is
    /// ready at t = 0; later when some wait on computation.
    pub comm_finish: f64,
    pub total_compute: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    /// The candidate made the communication slower; reverted.
    Regression,
    /// The comm stream finished before the compute stream.
    CommUnderCompute,
    /// The candidate did not change the communication time; reverted.
    NoGain,
    /// No parameter can grow any further.
    ResourceCap,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Step {
    Next { candidate: CommConfig, lr: f64 },
    Done { config: CommConfig, reason: DoneReason },
}

/// One resource-efficient step for a single communication.
///
/// Without a candidate the climb starts at the minimum resources. Otherwise
/// `measured` describes the candidate: a slower communication ends the climb
/// and falls back to the best config seen, communication below computation
/// ends it at the candidate, and anything else grows the candidate by the
/// relative improvement `(x_prev − x_new) / x_new`.
pub fn step_resource(state: &CommTuneState, measured: Option<&StepMeasurement>) -> Step {
    let Some(candidate) = state.candidate else {
        return Step::Next {
            candidate: state.limits.minimum(&state.accepted),
            lr: 0.0,
        };
    };
    let m = measured.expect("a pending candidate needs its measurement");

    if let Some(x_prev) = state.x_accepted {
        if m.comm_time > x_prev {
            let config = state.best_seen.map_or(state.accepted, |b| b.config);
            return Step::Done {
                config,
                reason: DoneReason::Regression,
            };
        }
    }
    if m.comm_finish < m.total_compute {
        return Step::Done {
            config: candidate,
            reason: DoneReason::CommUnderCompute,
        };
    }
    let lr = state
        .x_accepted
        .map_or(0.0, |x_prev| ((x_prev - m.comm_time) / m.comm_time).max(0.0));
    let next = grow(&candidate, lr, &state.limits);
    if next == candidate {
        return Step::Done {
            config: candidate,
            reason: DoneReason::ResourceCap,
        };
    }
    Step::Next { candidate: next, lr }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorityEntry {
    pub comm_id: String,
    pub h: f64,
    pub done: bool,
}

/// One profiler call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    /// `None` for the initial probe.
    pub comm_id: Option<String>,
    pub candidate: Option<CommConfig>,
    pub x_j: Option<f64>,
    #[serde(rename = "X")]
    pub total_comm: f64,
    #[serde(rename = "Y")]
    pub total_compute: f64,
    pub comm_finish: f64,
    #[serde(rename = "Z")]
    pub makespan: f64,
    /// Priorities at selection time.
    pub h_table: Vec<PriorityEntry>,
    pub decision: Option<Decision>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Accepted {
        h: f64,
        lr: f64,
        next: CommConfig,
    },
    Done {
        reason: DoneReason,
        /// The config kept for this communication.
        kept: CommConfig,
        /// The config in force before the measured candidate (s_j).
        previous: CommConfig,
        /// The measured candidate (s'_j).
        candidate: CommConfig,
    },
    /// Re-measured an older config of the comm after a regression.
    Reverted {
        kept: CommConfig,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Termination {
    pub reason: DoneReason,
    pub config: CommConfig,
    /// x of the kept config.
    pub comm_time: f64,
    /// Lowest x the climb reached.
    pub fastest: f64,
    /// The measured candidate that was turned down, and its x.
    pub rejected: Option<(CommConfig, f64)>,
}

/// A measured step on which the comm stream went from finishing after the
/// compute stream to finishing before it, or back.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub before: (f64, f64),
    pub after: (f64, f64),
}

impl Crossing {
    /// `|ΔX| + |ΔY|` of the step.
    pub fn effect(&self) -> f64 {
        (self.after.0 - self.before.0).abs() + (self.after.1 - self.before.1).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub configs: Vec<CommConfig>,
    pub initial: Option<Measurement>,
    pub measurement: Option<Measurement>,
    pub profile_calls: usize,
    pub budget_exhausted: bool,
    /// The climb ended worse than the starting configs, which were restored.
    pub restored_initial: bool,
    /// Where the climb itself ended; differs from `configs` only when the
    /// starting configs were restored.
    pub climb_configs: Vec<CommConfig>,
    pub climb_measurement: Option<Measurement>,
    pub terminations: Vec<Option<Termination>>,
    pub last_crossing: Option<Crossing>,
    pub log: Vec<LogRecord>,
}

fn h_table(workload: &Workload, states: &[CommTuneState]) -> Vec<PriorityEntry> {
    workload
        .comm_ops
        .iter()
        .zip(states)
        .map(|(op, s)| PriorityEntry {
            comm_id: op.id.clone(),
            h: s.priority,
            done: s.done,
        })
        .collect()
}

/// Not-done communication with the lowest priority; ties go to the lowest index.
fn select(states: &[CommTuneState]) -> Option<usize> {
    states
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.done)
        .min_by(|(i, a), (j, b)| a.priority.total_cmp(&b.priority).then(i.cmp(j)))
        .map(|(i, _)| i)
}

fn crossed(before: &Measurement, after: &Measurement) -> bool {
    (before.comm_finish >= before.total_compute) != (after.comm_finish >= after.total_compute)
}

/// Tunes every communication of `workload`, starting from `initial`, with at
/// most `budget` profiler calls (the initial probe included).
pub fn tune<P: Profiler>(
    workload: &Workload,
    initial: &[CommConfig],
    profiler: &mut P,
    budget: usize,
) -> Result<TuneOutcome> {
    workload.check_configs(initial)?;
    let n = workload.comm_ops.len();
    let mut outcome = TuneOutcome {
        configs: initial.to_vec(),
        initial: None,
        measurement: None,
        profile_calls: 0,
        budget_exhausted: false,
        restored_initial: false,
        climb_configs: initial.to_vec(),
        climb_measurement: None,
        terminations: vec![None; n],
        last_crossing: None,
        log: Vec::new(),
    };
    if n == 0 {
        return Ok(outcome);
    }
    if budget == 0 {
        outcome.budget_exhausted = true;
        return Ok(outcome);
    }

    let mut states: Vec<CommTuneState> = workload
        .comm_ops
        .iter()
        .zip(initial)
        .map(|(op, cfg)| CommTuneState::new(*cfg, ResourceLimits::for_op(op, &workload.gpu)))
        .collect();
    let mut configs = initial.to_vec();
    let mut current = profiler.profile(&configs)?;
    outcome.profile_calls = 1;
    outcome.log.push(LogRecord {
        iter: 0,
        comm_id: None,
        candidate: None,
        x_j: None,
        total_comm: current.total_comm,
        total_compute: current.total_compute,
        comm_finish: current.comm_finish,
        makespan: current.makespan,
        h_table: h_table(workload, &states),
        decision: None,
    });
    let initial_measurement = current.clone();

    while let Some(j) = select(&states) {
        let table = h_table(workload, &states);
        let state = &mut states[j];

        if state.candidate.is_none() {
            if let Step::Next { candidate, .. } = step_resource(state, None) {
                state.candidate = Some(candidate);
            }
        }
        let candidate = state.candidate.expect("climb started");

        // Communication already below computation: growing j cannot help.
        if state.x_accepted.is_some() && current.comm_finish < current.total_compute {
            state.done = true;
            outcome.terminations[j] = Some(Termination {
                reason: DoneReason::CommUnderCompute,
                config: state.accepted,
                comm_time: current.comm_times[j],
                fastest: current.comm_times[j],
                rejected: None,
            });
            continue;
        }

        let measured = if candidate == configs[j] {
            current.clone()
        } else {
            if outcome.profile_calls >= budget {
                outcome.budget_exhausted = true;
                break;
            }
            let mut trial = configs.clone();
            trial[j] = candidate;
            let m = profiler.profile(&trial)?;
            outcome.profile_calls += 1;
            outcome.log.push(LogRecord {
                iter: outcome.profile_calls - 1,
                comm_id: Some(workload.comm_ops[j].id.clone()),
                candidate: Some(candidate),
                x_j: Some(m.comm_times[j]),
                total_comm: m.total_comm,
                total_compute: m.total_compute,
                comm_finish: m.comm_finish,
                makespan: m.makespan,
                h_table: table.clone(),
                decision: None,
            });
            m
        };
        let x_new = measured.comm_times[j];
        let step = step_resource(
            state,
            Some(&StepMeasurement {
                comm_time: x_new,
                comm_finish: measured.comm_finish,
                total_compute: measured.total_compute,
            }),
        );
        let fresh = candidate != configs[j];
        if fresh && crossed(&current, &measured) {
            outcome.last_crossing = Some(Crossing {
                before: (current.comm_finish, current.total_compute),
                after: (measured.comm_finish, measured.total_compute),
            });
        }

        let (step, h) = match step {
            Step::Next { .. } => match state.x_accepted {
                Some(x_old) => match compute_h(current.total_compute, measured.total_compute, x_old, x_new) {
                    Priority::Value(h) => (step, Some(h)),
                    Priority::AlreadyOptimal => (
                        Step::Done {
                            config: state.accepted,
                            reason: DoneReason::NoGain,
                        },
                        None,
                    ),
                },
                None => (step, None),
            },
            done => (done, None),
        };

        match step {
            Step::Next { candidate: next, lr } => {
                if let Some(h) = h {
                    state.priority = h;
                }
                state.accepted = candidate;
                state.x_accepted = Some(x_new);
                state.candidate = Some(next);
                if state.best_seen.is_none_or(|b| measured.makespan < b.makespan) {
                    state.best_seen = Some(BestSeen {
                        config: candidate,
                        makespan: measured.makespan,
                    });
                }
                configs[j] = candidate;
                current = measured;
                if fresh {
                    if let Some(last) = outcome.log.last_mut() {
                        last.decision = Some(Decision::Accepted {
                            h: state.priority,
                            lr,
                            next,
                        });
                    }
                }
            }
            Step::Done { mut config, reason } => {
                let previous = configs[j];
                let fastest_before = state.x_accepted.unwrap_or(current.comm_times[j]);
                // The step that brought communication under computation may
                // overshoot; keep whichever side of the crossing is faster.
                if reason == DoneReason::CommUnderCompute
                    && fresh
                    && current.comm_finish >= current.total_compute
                    && measured.makespan > current.makespan
                {
                    config = previous;
                }
                state.done = true;
                let rejected = (config != candidate).then_some((candidate, x_new));
                let comm_time = if config == candidate {
                    configs[j] = candidate;
                    current = measured;
                    x_new
                } else if config == configs[j] {
                    current.comm_times[j]
                } else {
                    // An older config of this comm had the lowest makespan.
                    if outcome.profile_calls >= budget {
                        outcome.budget_exhausted = true;
                        break;
                    }
                    let mut trial = configs.clone();
                    trial[j] = config;
                    current = profiler.profile(&trial)?;
                    outcome.profile_calls += 1;
                    outcome.log.push(LogRecord {
                        iter: outcome.profile_calls - 1,
                        comm_id: Some(workload.comm_ops[j].id.clone()),
                        candidate: Some(config),
                        x_j: Some(current.comm_times[j]),
                        total_comm: current.total_comm,
                        total_compute: current.total_compute,
                        comm_finish: current.comm_finish,
                        makespan: current.makespan,
                        h_table: table.clone(),
                        decision: Some(Decision::Reverted { kept: config }),
                    });
                    configs[j] = config;
                    current.comm_times[j]
                };
                state.accepted = configs[j];
                outcome.terminations[j] = Some(Termination {
                    reason,
                    config: configs[j],
                    comm_time,
                    fastest: if rejected.is_some() { fastest_before } else { x_new },
                    rejected,
                });
                if fresh {
                    if let Some(last) = outcome
                        .log
                        .iter_mut()
                        .rev()
                        .find(|r| r.candidate == Some(candidate))
                    {
                        last.decision = Some(Decision::Done {
                            reason,
                            kept: configs[j],
                            previous,
                            candidate,
                        });
                    }
                }
            }
        }
    }

    outcome.climb_configs = configs.clone();
    outcome.climb_measurement = Some(current.clone());
    if current.makespan > initial_measurement.makespan {
        configs = initial.to_vec();
        current = initial_measurement.clone();
        outcome.restored_initial = true;
    }
    outcome.configs = configs;
    outcome.initial = Some(initial_measurement);
    outcome.measurement = Some(current);
    Ok(outcome)
}

/// The (A, P, T) whose standalone time at minimum resources is lowest.
pub fn select_subspace(op: &CommOp, gpu: &GpuSpec, params: &ParamTable) -> Result<SubspaceKey> {
    let mut best: Option<(f64, SubspaceKey)> = None;
    for (key, _) in params.iter() {
        let cfg = CommConfig {
            algorithm: key.algorithm,
            protocol: key.protocol,
            transport: key.transport,
            num_channels: NC_MIN,
            num_threads: NT_MIN,
            chunk_size: op.bounds.chunk_size_min,
        };
        let x = comm_time(op, &cfg, gpu, params)?;
        if best.is_none_or(|(bx, _)| x < bx) {
            best = Some((x, *key));
        }
    }
    best.map(|(_, k)| k)
        .ok_or_else(|| Error::UnknownSubspace("no subspaces defined".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartMode {
    /// Minimum resources in the selected subspace.
    Min,
    /// NC = 8, NT = 512, C = 2 MiB, clamped to the op's bounds.
    NcclDefault,
}

pub fn initial_configs(
    workload: &Workload,
    params: &ParamTable,
    start: StartMode,
) -> Result<Vec<CommConfig>> {
    workload
        .comm_ops
        .iter()
        .map(|op| {
            let key = select_subspace(op, &workload.gpu, params)?;
            let min = op.min_config(key.algorithm, key.protocol, key.transport);
            Ok(match start {
                StartMode::Min => min,
                StartMode::NcclDefault => CommConfig {
                    num_channels: 8.min(op.max_channels(&workload.gpu)),
                    num_threads: 512,
                    chunk_size: (2 * MIB).clamp(op.bounds.chunk_size_min, op.bounds.chunk_size_max),
                    ..min
                },
            })
        })
        .collect()
}

/// Which terminal state a tuned overlap group is in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Every comm at minimum resources and the comm stream done by Y.
    MinimalResources,
    /// The comm stream ends after Y and every comm above its minimum can no
    /// longer get faster.
    CommOptimal,
    /// The comm finish and Y are within one step's effect of each other.
    Balanced,
}

/// Checks a finished tuning run against the three terminal states. The comm
/// stream's finish time stands in for X; the two agree whenever every
/// communication is ready at t = 0.
pub fn check_boundary(
    workload: &Workload,
    outcome: &TuneOutcome,
) -> std::result::Result<BoundaryCondition, String> {
    let m = outcome
        .climb_measurement
        .as_ref()
        .ok_or_else(|| "no final measurement".to_string())?;
    let (x, y) = (m.comm_finish, m.total_compute);
    let limits: Vec<ResourceLimits> = workload
        .comm_ops
        .iter()
        .map(|op| ResourceLimits::for_op(op, &workload.gpu))
        .collect();

    let all_minimal = outcome
        .climb_configs
        .iter()
        .zip(&limits)
        .all(|(c, l)| l.is_minimum(c));
    if all_minimal && x <= y {
        return Ok(BoundaryCondition::MinimalResources);
    }

    if x > y {
        let optimal = outcome
            .climb_configs
            .iter()
            .zip(&limits)
            .enumerate()
            .all(|(j, (c, l))| {
                if l.is_minimum(c) {
                    return true;
                }
                match &outcome.terminations[j] {
                    Some(t) => match t.reason {
                        DoneReason::Regression | DoneReason::NoGain => {
                            t.rejected.is_some_and(|(_, xr)| xr >= t.fastest)
                        }
                        DoneReason::ResourceCap => grow(c, 0.0, l) == *c,
                        DoneReason::CommUnderCompute => false,
                    },
                    None => false,
                }
            });
        if optimal {
            return Ok(BoundaryCondition::CommOptimal);
        }
    }

    if let Some(crossing) = outcome.last_crossing {
        let gap = (x - y).abs();
        if gap <= crossing.effect() * (1.0 + 1e-9) {
            return Ok(BoundaryCondition::Balanced);
        }
    }
    Err(format!(
        "comm finish = {x}, Y = {y}: not minimal, not comm-optimal, and no crossing step bounds the gap"
    ))
}
