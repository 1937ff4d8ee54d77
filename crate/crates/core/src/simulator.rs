//! Event-driven co-simulation of one compute stream and one comm stream.
//!
//! Compute ops run in order, one wave at a time, and never wait for
//! communication. Comm op `j` starts once comm `j − 1` has finished and its
//! `ready_after` compute op has completed. A wave samples the communication
//! in flight at its start instant and keeps that contention until it ends.
//! When a comm and a wave start at the same instant the wave already sees
//! the comm.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::commperf::{comm_time, mem_footprint, ParamTable};
use crate::contention::{wave_capacity, wave_time, ActiveComm};
use crate::error::Result;
use crate::model::{CommConfig, Workload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Compute,
    Comm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub stream: Stream,
    pub op_id: String,
    pub start: f64,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveRecord {
    /// Index into `compute_ops`.
    pub op: usize,
    pub start: f64,
    pub duration: f64,
    pub blocks: u64,
    /// Index of the comm op in flight when the wave started.
    pub comm: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// y_i, µs.
    pub comp_times: Vec<f64>,
    /// x_j, µs.
    pub comm_times: Vec<f64>,
    /// Y = Σ y_i.
    pub total_compute: f64,
    /// X = Σ x_j.
    pub total_comm: f64,
    /// When the last communication ends; equals X when every comm is ready at t = 0.
    pub comm_finish: f64,
    /// Z: completion of the later stream.
    pub makespan: f64,
    pub timeline: Vec<TimelineEntry>,
    pub waves: Vec<WaveRecord>,
}

/// The projection of a simulation the tuner consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub comm_times: Vec<f64>,
    pub total_comm: f64,
    pub total_compute: f64,
    pub comm_finish: f64,
    pub makespan: f64,
}

impl From<&SimResult> for Measurement {
    fn from(r: &SimResult) -> Self {
        Measurement {
            comm_times: r.comm_times.clone(),
            total_comm: r.total_comm,
            total_compute: r.total_compute,
            comm_finish: r.comm_finish,
            makespan: r.makespan,
        }
    }
}

struct Wave {
    start: f64,
    end: f64,
    blocks: u64,
    comm: Option<usize>,
}

struct RunningComm {
    index: usize,
    start: f64,
    base: f64,
    rate: f64,
    segment_start: f64,
    work_at_segment: f64,
    end: f64,
}

impl RunningComm {
    /// Switches progress rate at `t`, re-projecting the end time.
    fn set_rate(&mut self, t: f64, rate: f64) {
        if rate == self.rate {
            return;
        }
        self.work_at_segment += (t - self.segment_start) * self.rate;
        self.segment_start = t;
        self.rate = rate;
        self.end = t + (self.base - self.work_at_segment).max(0.0) / rate;
    }

    fn duration(&self) -> f64 {
        if self.rate == 1.0 && self.work_at_segment == 0.0 {
            self.base
        } else {
            self.end - self.start
        }
    }
}

pub fn simulate(workload: &Workload, configs: &[CommConfig], params: &ParamTable) -> Result<SimResult> {
    workload.check_configs(configs)?;
    let gpu = &workload.gpu;
    let computes = &workload.compute_ops;
    let comms = &workload.comm_ops;

    let mut base = Vec::with_capacity(comms.len());
    let mut active = Vec::with_capacity(comms.len());
    let mut dependency = Vec::with_capacity(comms.len());
    for (op, cfg) in comms.iter().zip(configs) {
        base.push(comm_time(op, cfg, gpu, params)?);
        active.push(ActiveComm {
            num_channels: cfg.num_channels,
            footprint: mem_footprint(cfg, gpu, params)?,
        });
        dependency.push(op.ready_after.as_ref().map(|id| {
            computes
                .iter()
                .position(|c| &c.id == id)
                .expect("validated dependency")
        }));
    }
    let busy_rate = 1.0 / (1.0 + gpu.compute_on_comm_slowdown);

    let mut comp_times = vec![0.0; computes.len()];
    let mut comm_times = vec![0.0; comms.len()];
    let mut completed_at: Vec<Option<f64>> = vec![None; computes.len()];
    let mut timeline = Vec::new();
    let mut waves = Vec::new();

    let mut t = 0.0_f64;
    let mut op_index = 0;
    let mut remaining = computes.first().map_or(0, |op| op.total_blocks);
    let mut op_start = 0.0;
    let mut wave: Option<Wave> = None;
    let mut next_comm = 0;
    let mut running: Option<RunningComm> = None;
    let mut compute_end = 0.0_f64;
    let mut comm_end = 0.0_f64;

    loop {
        if let Some(w) = wave.take_if(|w| w.end <= t) {
            let duration = w.end - w.start;
            waves.push(WaveRecord {
                op: op_index,
                start: w.start,
                duration,
                blocks: w.blocks,
                comm: w.comm,
            });
            comp_times[op_index] += duration;
            remaining -= w.blocks;
            if remaining == 0 {
                completed_at[op_index] = Some(t);
                timeline.push(TimelineEntry {
                    stream: Stream::Compute,
                    op_id: computes[op_index].id.clone(),
                    start: op_start,
                    duration: comp_times[op_index],
                });
                compute_end = t;
                op_index += 1;
                if let Some(op) = computes.get(op_index) {
                    remaining = op.total_blocks;
                    op_start = t;
                } else if let Some(r) = running.as_mut() {
                    r.set_rate(t, 1.0);
                }
            }
        }

        if let Some(r) = running.take_if(|r| r.end <= t) {
            let duration = r.duration();
            comm_times[r.index] = duration;
            timeline.push(TimelineEntry {
                stream: Stream::Comm,
                op_id: comms[r.index].id.clone(),
                start: r.start,
                duration,
            });
            comm_end = r.end;
            next_comm += 1;
        }

        if running.is_none() && next_comm < comms.len() {
            let ready = dependency[next_comm].is_none_or(|k| completed_at[k].is_some());
            if ready {
                let rate = if op_index < computes.len() { busy_rate } else { 1.0 };
                let b = base[next_comm];
                running = Some(RunningComm {
                    index: next_comm,
                    start: t,
                    base: b,
                    rate,
                    segment_start: t,
                    work_at_segment: 0.0,
                    end: if rate == 1.0 { t + b } else { t + b / rate },
                });
            }
        }

        if wave.is_none() && op_index < computes.len() {
            let op = &computes[op_index];
            let comm = running.as_ref().map(|r| r.index);
            let contention = comm.map(|j| active[j]);
            let blocks = remaining.min(wave_capacity(op, contention.as_ref(), gpu)?);
            let duration = wave_time(op, blocks, contention.as_ref(), gpu)?;
            wave = Some(Wave {
                start: t,
                end: t + duration,
                blocks,
                comm,
            });
        }

        let next = match (&wave, &running) {
            (Some(w), Some(r)) => w.end.min(r.end),
            (Some(w), None) => w.end,
            (None, Some(r)) => r.end,
            (None, None) => break,
        };
        t = next;
    }

    let total_compute = comp_times.iter().sum();
    let total_comm = comm_times.iter().sum();
    Ok(SimResult {
        comp_times,
        comm_times,
        total_compute,
        total_comm,
        comm_finish: comm_end,
        makespan: compute_end.max(comm_end),
        timeline,
        waves,
    })
}

/// Per-comm times and the X, Y, Z totals of one simulation.
pub fn profile(workload: &Workload, configs: &[CommConfig], params: &ParamTable) -> Result<Measurement> {
    simulate(workload, configs, params).map(|r| Measurement::from(&r))
}

/// One Chrome trace "complete" event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub name: String,
    pub cat: String,
    pub ph: String,
    pub ts: f64,
    pub dur: f64,
    pub pid: u32,
    pub tid: u32,
}

pub const COMPUTE_TRACK: u32 = 1;
pub const COMM_TRACK: u32 = 2;
pub const WAVE_TRACK: u32 = 3;

/// One event per op on the compute and comm tracks; with `include_waves`,
/// one event per wave on a third track.
pub fn export_trace(result: &SimResult, workload: &Workload, include_waves: bool) -> Vec<TraceEvent> {
    let mut events: Vec<TraceEvent> = result
        .timeline
        .iter()
        .map(|e| {
            let (cat, tid) = match e.stream {
                Stream::Compute => ("compute", COMPUTE_TRACK),
                Stream::Comm => ("comm", COMM_TRACK),
            };
            TraceEvent {
                name: e.op_id.clone(),
                cat: cat.into(),
                ph: "X".into(),
                ts: e.start,
                dur: e.duration,
                pid: 1,
                tid,
            }
        })
        .collect();
    if include_waves {
        events.extend(result.waves.iter().map(|w| TraceEvent {
            name: format!("{} ({} blocks)", workload.compute_ops[w.op].id, w.blocks),
            cat: "wave".into(),
            ph: "X".into(),
            ts: w.start,
            dur: w.duration,
            pid: 1,
            tid: WAVE_TRACK,
        }));
    }
    events.sort_by(|a, b| a.ts.total_cmp(&b.ts).then(a.tid.cmp(&b.tid)));
    events
}

pub fn write_trace(events: &[TraceEvent], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut file, events)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}
