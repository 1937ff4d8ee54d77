//! Domain types shared by the cost model, the simulator, the tuner and the
//! oracle. Times are microseconds, sizes are bytes and bandwidths are
//! bytes per microsecond everywhere.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * KIB;

/// Threads-per-channel values the tuner and the validator accept.
pub const NT_LADDER: [u32; 10] = [64, 128, 192, 256, 320, 384, 448, 512, 576, 640];
pub const NT_MIN: u32 = NT_LADDER[0];
pub const NT_MAX: u32 = NT_LADDER[NT_LADDER.len() - 1];
pub const NC_MIN: u32 = 1;
/// Chunk sizes are multiples of this granularity.
pub const CHUNK_GRANULARITY: u64 = KIB;

/// The modeled device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpuSpec {
    pub num_sms: u32,
    pub peak_mem_bw: f64,
    pub link_bw: f64,
    pub comm_bw_cap_fraction: f64,
    /// Reverse interference: a comm overlapping compute waves is stretched by `1 + δ`.
    #[serde(default)]
    pub compute_on_comm_slowdown: f64,
    /// When false, channels do not take SMs away from computation.
    #[serde(default = "default_true")]
    pub comm_sm_occupancy: bool,
}

fn default_true() -> bool {
    true
}

impl Default for GpuSpec {
    /// 64 SMs, 600 GB/s of global memory bandwidth and a 24 GB/s interconnect,
    /// expressed in bytes/µs.
    fn default() -> Self {
        GpuSpec {
            num_sms: 64,
            peak_mem_bw: 600_000.0,
            link_bw: 24_000.0,
            comm_bw_cap_fraction: 0.6,
            compute_on_comm_slowdown: 0.0,
            comm_sm_occupancy: true,
        }
    }
}

impl GpuSpec {
    /// Global bandwidth ceiling for a communication's footprint, `φ·B̄`.
    pub fn comm_bw_cap(&self) -> f64 {
        self.comm_bw_cap_fraction * self.peak_mem_bw
    }

    fn check(&self) -> Result<()> {
        if self.num_sms < 2 {
            return Err(Error::invalid("gpu.num_sms", "must be at least 2"));
        }
        if !(self.peak_mem_bw.is_finite() && self.peak_mem_bw > 0.0) {
            return Err(Error::invalid("gpu.peak_mem_bw", "must be positive"));
        }
        if !(self.link_bw.is_finite() && self.link_bw > 0.0) {
            return Err(Error::invalid("gpu.link_bw", "must be positive"));
        }
        let phi = self.comm_bw_cap_fraction;
        if !(phi > 0.0 && phi < 1.0) {
            return Err(Error::invalid(
                "gpu.comm_bw_cap_fraction",
                "must lie strictly between 0 and 1",
            ));
        }
        let delta = self.compute_on_comm_slowdown;
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::invalid(
                "gpu.compute_on_comm_slowdown",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// One computation operator, described by its four cost parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeOp {
    pub id: String,
    /// μ: thread blocks the kernel launches.
    pub total_blocks: u64,
    /// TB: blocks resident on one SM at a time.
    pub blocks_per_sm: u32,
    /// D: global memory traffic per block.
    pub bytes_per_block: f64,
    /// θ: compute time of one wave, excluding memory traffic.
    pub base_wave_time: f64,
}

impl ComputeOp {
    fn check(&self, path: &str) -> Result<()> {
        if self.total_blocks < 1 {
            return Err(Error::invalid(
                format!("{path}.total_blocks"),
                "must be at least 1",
            ));
        }
        if self.blocks_per_sm < 1 {
            return Err(Error::invalid(
                format!("{path}.blocks_per_sm"),
                "must be at least 1",
            ));
        }
        if !(self.bytes_per_block.is_finite() && self.bytes_per_block >= 0.0) {
            return Err(Error::invalid(
                format!("{path}.bytes_per_block"),
                "must be finite and non-negative",
            ));
        }
        if !(self.base_wave_time.is_finite() && self.base_wave_time >= 0.0) {
            return Err(Error::invalid(
                format!("{path}.base_wave_time"),
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Collective {
    AllReduce,
    AllGather,
    ReduceScatter,
    AllToAll,
}

impl Collective {
    /// Bytes moved per message byte. AllReduce is a reduce-scatter followed by
    /// an all-gather, so it moves the message twice.
    pub fn traffic_factor(self) -> u64 {
        match self {
            Collective::AllReduce => 2,
            _ => 1,
        }
    }
}

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {} `{}`", stringify!($name), other)),
                }
            }
        }
    };
}

string_enum!(Algorithm { Ring => "RING", Tree => "TREE" });
string_enum!(Protocol { Simple => "SIMPLE", Ll => "LL", Ll128 => "LL128" });
string_enum!(Transport { P2p => "P2P", Shm => "SHM", Net => "NET" });

/// Per-op resource bounds for the tunable parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommBounds {
    pub num_channels_max: u32,
    pub chunk_size_min: u64,
    pub chunk_size_max: u64,
}

impl Default for CommBounds {
    fn default() -> Self {
        CommBounds {
            num_channels_max: 32,
            chunk_size_min: 16 * KIB,
            chunk_size_max: 4 * MIB,
        }
    }
}

/// One communication operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommOp {
    pub id: String,
    pub collective: Collective,
    pub message_bytes: u64,
    /// Earliest start: the named compute op must have completed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ready_after: Option<String>,
    #[serde(default)]
    pub bounds: CommBounds,
}

impl CommOp {
    /// Bytes actually moved through the interconnect.
    pub fn traffic_bytes(&self) -> u64 {
        self.message_bytes * self.collective.traffic_factor()
    }

    /// Largest channel count usable on `gpu`; one SM always stays with computation.
    pub fn max_channels(&self, gpu: &GpuSpec) -> u32 {
        self.bounds.num_channels_max.min(gpu.num_sms - 1)
    }

    /// The minimum-resource configuration inside the given subspace.
    pub fn min_config(&self, algorithm: Algorithm, protocol: Protocol, transport: Transport) -> CommConfig {
        CommConfig {
            algorithm,
            protocol,
            transport,
            num_channels: NC_MIN,
            num_threads: NT_MIN,
            chunk_size: self.bounds.chunk_size_min,
        }
    }

    fn check(&self, path: &str, compute_ids: &HashSet<&str>) -> Result<()> {
        if self.message_bytes < 1 {
            return Err(Error::invalid(
                format!("{path}.message_bytes"),
                "must be at least 1",
            ));
        }
        if let Some(dep) = &self.ready_after {
            if !compute_ids.contains(dep.as_str()) {
                return Err(Error::invalid(
                    format!("{path}.ready_after"),
                    format!("no compute op named `{dep}`"),
                ));
            }
        }
        let b = &self.bounds;
        if b.num_channels_max < NC_MIN {
            return Err(Error::invalid(
                format!("{path}.bounds.num_channels_max"),
                "num_channels bound must be at least 1",
            ));
        }
        for (name, value) in [
            ("chunk_size_min", b.chunk_size_min),
            ("chunk_size_max", b.chunk_size_max),
        ] {
            if value < CHUNK_GRANULARITY || value % CHUNK_GRANULARITY != 0 {
                return Err(Error::invalid(
                    format!("{path}.bounds.{name}"),
                    "chunk_size bound must be a positive multiple of 1 KiB",
                ));
            }
        }
        if b.chunk_size_min > b.chunk_size_max {
            return Err(Error::invalid(
                format!("{path}.bounds.chunk_size_min"),
                "chunk_size bounds are inverted",
            ));
        }
        Ok(())
    }
}

/// One communication's tunable tuple (A, P, T, NC, NT, C).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CommConfig {
    pub algorithm: Algorithm,
    pub protocol: Protocol,
    pub transport: Transport,
    pub num_channels: u32,
    pub num_threads: u32,
    pub chunk_size: u64,
}

impl CommConfig {
    /// Checks the resource parameters against `op`'s bounds on `gpu`.
    pub fn check(&self, op: &CommOp, gpu: &GpuSpec) -> Result<()> {
        let nc_max = op.max_channels(gpu);
        if self.num_channels < NC_MIN || self.num_channels > nc_max {
            return Err(Error::invalid(
                format!("configs[{}].num_channels", op.id),
                format!("{} outside [{NC_MIN}, {nc_max}]", self.num_channels),
            ));
        }
        if !NT_LADDER.contains(&self.num_threads) {
            return Err(Error::invalid(
                format!("configs[{}].num_threads", op.id),
                format!("{} is not on the thread ladder", self.num_threads),
            ));
        }
        let b = &op.bounds;
        if self.chunk_size < b.chunk_size_min
            || self.chunk_size > b.chunk_size_max
            || !self.chunk_size.is_multiple_of(CHUNK_GRANULARITY)
        {
            return Err(Error::invalid(
                format!("configs[{}].chunk_size", op.id),
                format!(
                    "{} must be a multiple of 1 KiB in [{}, {}]",
                    self.chunk_size, b.chunk_size_min, b.chunk_size_max
                ),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for CommConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{} nc={} nt={} c={}",
            self.algorithm,
            self.protocol,
            self.transport,
            self.num_channels,
            self.num_threads,
            self.chunk_size
        )
    }
}

/// Units header carried by every workload file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Units {
    pub time: String,
    pub size: String,
    pub bandwidth: String,
}

impl Default for Units {
    fn default() -> Self {
        Units {
            time: "us".into(),
            size: "bytes".into(),
            bandwidth: "bytes/us".into(),
        }
    }
}

/// A compute stream and a comm stream, each executed strictly in list order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    #[serde(default)]
    pub units: Units,
    pub gpu: GpuSpec,
    pub compute_ops: Vec<ComputeOp>,
    pub comm_ops: Vec<CommOp>,
}

impl Workload {
    pub fn new(gpu: GpuSpec, compute_ops: Vec<ComputeOp>, comm_ops: Vec<CommOp>) -> Self {
        Workload {
            units: Units::default(),
            gpu,
            compute_ops,
            comm_ops,
        }
    }

    /// Checks every invariant, reporting the first violation.
    pub fn check(&self) -> Result<()> {
        if self.units != Units::default() {
            return Err(Error::invalid(
                "units",
                "expected time=us, size=bytes, bandwidth=bytes/us",
            ));
        }
        self.gpu.check()?;
        if self.compute_ops.is_empty() && self.comm_ops.is_empty() {
            return Err(Error::invalid("compute_ops", "workload has no operators"));
        }
        let mut ids = HashSet::new();
        for (i, op) in self.compute_ops.iter().enumerate() {
            let path = format!("compute_ops[{i}]");
            op.check(&path)?;
            if !ids.insert(op.id.as_str()) {
                return Err(Error::invalid(
                    format!("{path}.id"),
                    format!("duplicate id `{}`", op.id),
                ));
            }
        }
        let compute_ids = ids.clone();
        for (j, op) in self.comm_ops.iter().enumerate() {
            let path = format!("comm_ops[{j}]");
            op.check(&path, &compute_ids)?;
            if !ids.insert(op.id.as_str()) {
                return Err(Error::invalid(
                    format!("{path}.id"),
                    format!("duplicate id `{}`", op.id),
                ));
            }
        }
        Ok(())
    }

    /// Checks one config per comm op, in comm order.
    pub fn check_configs(&self, configs: &[CommConfig]) -> Result<()> {
        if configs.len() != self.comm_ops.len() {
            return Err(Error::invalid(
                "configs",
                format!("expected {} configs, got {}", self.comm_ops.len(), configs.len()),
            ));
        }
        for (cfg, op) in configs.iter().zip(&self.comm_ops) {
            cfg.check(op, &self.gpu)?;
        }
        Ok(())
    }

    pub fn comm_index(&self, id: &str) -> Option<usize> {
        self.comm_ops.iter().position(|op| op.id == id)
    }

    pub fn from_json(text: &str) -> Result<Workload> {
        validate(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("workload serializes")
    }
}

/// Returns the workload unchanged if every invariant holds.
pub fn validate(workload: Workload) -> Result<Workload> {
    workload.check()?;
    Ok(workload)
}
