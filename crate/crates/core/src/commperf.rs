//! Synthetic communication performance model.
//!
//! A communication costs latency, per-channel setup and pipelined chunk
//! overhead, plus a transfer whose bandwidth grows with the channel count
//! until it hits the interconnect ceiling. Its global-memory footprint grows with channels
//! and chunk size and saturates below the device peak.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{Algorithm, CommConfig, CommOp, GpuSpec, Protocol, Transport, KIB, NT_MAX};

/// Text of the shipped coefficient table.
pub const DEFAULT_PARAMS: &str = include_str!("../data/subspace_params.json");

/// Implementation-related parameters (A, P, T); each key owns one subspace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubspaceKey {
    pub algorithm: Algorithm,
    pub protocol: Protocol,
    pub transport: Transport,
}

impl SubspaceKey {
    pub fn of(cfg: &CommConfig) -> Self {
        SubspaceKey {
            algorithm: cfg.algorithm,
            protocol: cfg.protocol,
            transport: cfg.transport,
        }
    }
}

impl fmt::Display for SubspaceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.algorithm, self.protocol, self.transport)
    }
}

impl FromStr for SubspaceKey {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split('/').collect();
        let [a, p, t] = parts.as_slice() else {
            return Err(format!("subspace key `{s}` is not ALGORITHM/PROTOCOL/TRANSPORT"));
        };
        Ok(SubspaceKey {
            algorithm: a.parse()?,
            protocol: p.parse()?,
            transport: t.parse()?,
        })
    }
}

/// Coefficients of one subspace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceParams {
    /// α, µs.
    pub base_latency: f64,
    /// Bandwidth one channel sustains at full thread efficiency, bytes/µs.
    pub per_channel_bw: f64,
    /// Cost of one pipelined chunk step, µs.
    pub per_chunk_overhead: f64,
    /// ζ: setup cost per channel, µs.
    pub per_channel_setup: f64,
    /// κ: global-memory traffic per byte of channel bandwidth.
    pub mem_coeff: f64,
    /// Chunk size at which the footprint reaches half its channel maximum, bytes.
    pub chunk_knee: f64,
    /// η₀: thread efficiency at zero threads; reaches 1 at the top of the ladder.
    pub nt_floor: f64,
}

impl SubspaceParams {
    fn check(&self, key: &str) -> Result<()> {
        let nonneg = [
            ("base_latency", self.base_latency),
            ("per_chunk_overhead", self.per_chunk_overhead),
            ("per_channel_setup", self.per_channel_setup),
            ("mem_coeff", self.mem_coeff),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(
                    format!("params.{key}.{name}"),
                    "must be finite and non-negative",
                ));
            }
        }
        if !(self.per_channel_bw.is_finite() && self.per_channel_bw > 0.0) {
            return Err(Error::invalid(
                format!("params.{key}.per_channel_bw"),
                "must be positive",
            ));
        }
        if !(self.nt_floor > 0.0 && self.nt_floor <= 1.0) {
            return Err(Error::invalid(
                format!("params.{key}.nt_floor"),
                "must lie in (0, 1]",
            ));
        }
        if !(self.chunk_knee.is_finite() && self.chunk_knee >= KIB as f64) {
            return Err(Error::invalid(
                format!("params.{key}.chunk_knee"),
                "must be at least 1 KiB",
            ));
        }
        Ok(())
    }

    /// η(NT) = η₀ + (1 − η₀)·NT/640.
    pub fn thread_efficiency(&self, num_threads: u32) -> f64 {
        self.nt_floor + (1.0 - self.nt_floor) * f64::from(num_threads) / f64::from(NT_MAX)
    }
}

/// All subspaces known to the model, keyed by (A, P, T).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTable {
    entries: BTreeMap<SubspaceKey, SubspaceParams>,
}

impl ParamTable {
    pub fn new(entries: impl IntoIterator<Item = (SubspaceKey, SubspaceParams)>) -> Result<Self> {
        let table = ParamTable {
            entries: entries.into_iter().collect(),
        };
        for (key, p) in &table.entries {
            p.check(&key.to_string())?;
        }
        Ok(table)
    }

    /// The coefficients shipped with the crate.
    pub fn shipped() -> Self {
        Self::from_json(DEFAULT_PARAMS).expect("shipped subspace params are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: ParamTable = serde_json::from_str(text)?;
        Self::new(table.entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &SubspaceKey) -> Result<&SubspaceParams> {
        self.entries
            .get(key)
            .ok_or_else(|| Error::UnknownSubspace(key.to_string()))
    }

    pub fn for_config(&self, cfg: &CommConfig) -> Result<&SubspaceParams> {
        self.get(&SubspaceKey::of(cfg))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SubspaceKey, &SubspaceParams)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Serialize for ParamTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let as_strings: BTreeMap<String, &SubspaceParams> =
            self.entries.iter().map(|(k, v)| (k.to_string(), v)).collect();
        as_strings.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParamTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, SubspaceParams>::deserialize(deserializer)?;
        let mut entries = BTreeMap::new();
        for (k, v) in raw {
            let key: SubspaceKey = k.parse().map_err(serde::de::Error::custom)?;
            entries.insert(key, v);
        }
        Ok(ParamTable { entries })
    }
}

/// Execution time of `op` under `cfg`, standalone, in µs.
pub fn comm_time(op: &CommOp, cfg: &CommConfig, gpu: &GpuSpec, params: &ParamTable) -> Result<f64> {
    Ok(comm_time_in(
        op.traffic_bytes(),
        cfg,
        gpu,
        params.for_config(cfg)?,
    ))
}

/// `comm_time` for an explicit byte count and subspace.
pub fn comm_time_in(bytes: u64, cfg: &CommConfig, gpu: &GpuSpec, p: &SubspaceParams) -> f64 {
    let nc = u64::from(cfg.num_channels);
    let chunks = bytes.div_ceil(nc * cfg.chunk_size);
    let eff_bw = (nc as f64 * p.per_channel_bw * p.thread_efficiency(cfg.num_threads)).min(gpu.link_bw);
    p.base_latency
        + p.per_channel_setup * nc as f64
        + chunks as f64 * p.per_chunk_overhead
        + bytes as f64 / eff_bw
}

/// Global memory bandwidth a running communication takes from computation.
pub fn mem_footprint(cfg: &CommConfig, gpu: &GpuSpec, params: &ParamTable) -> Result<f64> {
    Ok(mem_footprint_in(cfg, gpu, params.for_config(cfg)?))
}

pub fn mem_footprint_in(cfg: &CommConfig, gpu: &GpuSpec, p: &SubspaceParams) -> f64 {
    let c = cfg.chunk_size as f64;
    let demand = p.mem_coeff * f64::from(cfg.num_channels) * (c / (c + p.chunk_knee)) * p.per_channel_bw;
    demand.min(gpu.comm_bw_cap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Collective, CommBounds, MIB, NT_LADDER};
    use proptest::prelude::*;

    fn flat(alpha: f64, c_over: f64, zeta: f64, b_chan: f64) -> SubspaceParams {
        SubspaceParams {
            base_latency: alpha,
            per_channel_bw: b_chan,
            per_chunk_overhead: c_over,
            per_channel_setup: zeta,
            mem_coeff: 0.5,
            chunk_knee: 50_000.0,
            nt_floor: 1.0,
        }
    }

    fn cfg(nc: u32, nt: u32, c: u64) -> CommConfig {
        CommConfig {
            algorithm: Algorithm::Ring,
            protocol: Protocol::Simple,
            transport: Transport::P2p,
            num_channels: nc,
            num_threads: nt,
            chunk_size: c,
        }
    }

    fn gpu(link_bw: f64) -> GpuSpec {
        GpuSpec {
            link_bw,
            peak_mem_bw: 1000.0,
            ..GpuSpec::default()
        }
    }

    #[test]
    fn comm_time_worked_examples() {
        let p = flat(10.0, 1.0, 0.0, 100.0);
        let g = gpu(1000.0);
        assert_eq!(comm_time_in(1_000_000, &cfg(4, 128, 50_000), &g, &p), 2515.0);
        assert_eq!(comm_time_in(1_000_000, &cfg(4, 128, 1_000_000), &g, &p), 2511.0);

        // NC=16 hits the link ceiling: 1 MB at 1000 B/µs.
        let x16 = comm_time_in(1_000_000, &cfg(16, 128, 50_000), &g, &p);
        assert_eq!(x16, 10.0 + 2.0 + 1000.0);
        let x32 = comm_time_in(1_000_000, &cfg(32, 128, 50_000), &g, &p);
        assert_eq!(x32, 10.0 + 1.0 + 1000.0);
    }

    #[test]
    fn footprint_worked_examples() {
        let mut p = flat(0.0, 0.0, 0.0, 100.0);
        p.chunk_knee = 65_536.0;
        let g = GpuSpec {
            peak_mem_bw: 1000.0,
            comm_bw_cap_fraction: 0.6,
            ..GpuSpec::default()
        };
        assert_eq!(mem_footprint_in(&cfg(4, 64, 65_536), &g, &p), 100.0);

        p.mem_coeff = 0.0;
        assert_eq!(mem_footprint_in(&cfg(31, 640, 4 * MIB), &g, &p), 0.0);

        p.mem_coeff = 0.5;
        assert_eq!(mem_footprint_in(&cfg(63, 64, 1 << 40), &g, &p), 600.0);
    }

    #[test]
    fn unknown_subspace() {
        let table =
            ParamTable::new([(SubspaceKey::of(&cfg(1, 64, 1024)), flat(1.0, 1.0, 1.0, 1.0))]).unwrap();
        let op = CommOp {
            id: "c".into(),
            collective: Collective::AllGather,
            message_bytes: 10,
            ready_after: None,
            bounds: CommBounds::default(),
        };
        let tree = CommConfig {
            algorithm: Algorithm::Tree,
            ..cfg(1, 64, 1024)
        };
        assert!(matches!(
            comm_time(&op, &tree, &GpuSpec::default(), &table),
            Err(Error::UnknownSubspace(k)) if k == "TREE/SIMPLE/P2P"
        ));
    }

    #[test]
    fn shipped_table_round_trips() {
        let table = ParamTable::shipped();
        assert!(table.len() >= 2);
        let text = serde_json::to_string(&table).unwrap();
        assert_eq!(ParamTable::from_json(&text).unwrap(), table);
    }

    #[test]
    fn bad_coefficients_rejected() {
        let text = r#"{"RING/SIMPLE/P2P": {"base_latency": 1, "per_channel_bw": 0, "per_chunk_overhead": 0,
            "per_channel_setup": 0, "mem_coeff": 0, "chunk_knee": 2048, "nt_floor": 0.5}}"#;
        assert!(ParamTable::from_json(text).is_err());
        assert!(ParamTable::from_json(r#"{"RING/SIMPLE": {}}"#).is_err());
    }

    #[test]
    fn allreduce_moves_twice_the_bytes() {
        let table = ParamTable::shipped();
        let g = GpuSpec::default();
        let mk = |collective| CommOp {
            id: "c".into(),
            collective,
            message_bytes: 8 * MIB,
            ready_after: None,
            bounds: CommBounds::default(),
        };
        let c = cfg(4, 128, 64 * 1024);
        let p = table.for_config(&c).unwrap();
        assert_eq!(
            comm_time(&mk(Collective::AllReduce), &c, &g, &table).unwrap(),
            comm_time_in(16 * MIB, &c, &g, p)
        );
        assert_eq!(
            comm_time(&mk(Collective::AllGather), &c, &g, &table).unwrap(),
            comm_time_in(8 * MIB, &c, &g, p)
        );
    }

    fn shipped_params() -> SubspaceParams {
        *ParamTable::shipped().for_config(&cfg(1, 64, 1024)).unwrap()
    }

    proptest! {
        // Below the link ceiling more channels never hurt.
        #[test]
        fn nc_non_increasing_below_cap(mib in 1u64..64, c_kib in 16u64..4096) {
            let p = shipped_params();
            let g = GpuSpec::default();
            let bytes = mib * MIB;
            let c = c_kib * KIB;
            for nc in 1..32u32 {
                let bw_next = f64::from(nc + 1) * p.per_channel_bw * p.thread_efficiency(128);
                if bw_next > g.link_bw {
                    break;
                }
                let a = comm_time_in(bytes, &cfg(nc, 128, c), &g, &p);
                let b = comm_time_in(bytes, &cfg(nc + 1, 128, c), &g, &p);
                prop_assert!(b <= a, "nc {} -> {}: {} -> {}", nc, nc + 1, a, b);
            }
        }

        // Once capped, and with a single chunk per channel, only ζ·NC moves.
        #[test]
        fn nc_non_decreasing_past_cap(mib in 1u64..4) {
            let p = shipped_params();
            let g = GpuSpec::default();
            let bytes = mib * MIB;
            let c = 4 * MIB;
            let mut prev: Option<f64> = None;
            for nc in 1..=32u32 {
                let capped = f64::from(nc) * p.per_channel_bw * p.thread_efficiency(128) >= g.link_bw;
                let x = comm_time_in(bytes, &cfg(nc, 128, c), &g, &p);
                if capped {
                    if let Some(px) = prev {
                        prop_assert!(x >= px);
                    }
                    prev = Some(x);
                }
            }
        }

        #[test]
        fn chunk_size_amortizes(mib in 1u64..64, nc in 1u32..32) {
            let p = shipped_params();
            let g = GpuSpec::default();
            let bytes = mib * MIB;
            let mut prev = f64::INFINITY;
            for c_kib in (16..=4096u64).step_by(16) {
                let x = comm_time_in(bytes, &cfg(nc, 128, c_kib * KIB), &g, &p);
                prop_assert!(x <= prev);
                prev = x;
            }
            let eff_bw = (f64::from(nc) * p.per_channel_bw * p.thread_efficiency(128)).min(g.link_bw);
            let limit = p.base_latency + p.per_channel_setup * f64::from(nc)
                + p.per_chunk_overhead + bytes as f64 / eff_bw;
            let huge = comm_time_in(bytes, &cfg(nc, 128, bytes), &g, &p);
            prop_assert!((huge - limit).abs() <= 1e-9 * limit);
        }

        #[test]
        fn footprint_bounded_and_monotone(nc in 1u32..63, c_kib in 1u64..8192, kappa in 0.0f64..50.0) {
            let mut p = shipped_params();
            p.mem_coeff = kappa;
            let g = GpuSpec::default();
            let v = mem_footprint_in(&cfg(nc, 64, c_kib * KIB), &g, &p);
            prop_assert!(v >= 0.0 && v < g.peak_mem_bw);
            prop_assert!(mem_footprint_in(&cfg(nc + 1, 64, c_kib * KIB), &g, &p) >= v);
            prop_assert!(mem_footprint_in(&cfg(nc, 64, (c_kib + 1) * KIB), &g, &p) >= v);
        }

        #[test]
        fn threads_have_bounded_effect(mib in 1u64..64, nc in 1u32..32, c_kib in 16u64..4096) {
            let p = shipped_params();
            let g = GpuSpec::default();
            let bytes = mib * MIB;
            let bound = (1.0 - p.nt_floor) / p.nt_floor;
            let base = cfg(nc, NT_LADDER[0], c_kib * KIB);
            let x0 = comm_time_in(bytes, &base, &g, &p);
            let v0 = mem_footprint_in(&base, &g, &p);
            for nt in NT_LADDER {
                let c = CommConfig { num_threads: nt, ..base };
                let x = comm_time_in(bytes, &c, &g, &p);
                prop_assert!(((x - x0) / x0).abs() <= bound + 1e-12);
                prop_assert_eq!(mem_footprint_in(&c, &g, &p), v0);
            }
        }
    }
}
