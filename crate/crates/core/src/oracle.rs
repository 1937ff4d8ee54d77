//! Baselines for the tuner: exhaustive joint search over a per-comm grid and
//! the naive strategy that tunes one communication at a time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commperf::ParamTable;
use crate::error::{Error, Result};
use crate::model::{CommConfig, Workload, KIB};
use crate::simulator::{profile, simulate};
use crate::tuner::{grow, select_subspace, ResourceLimits};

/// Default grid axes.
pub const GRID_CHANNELS: [u32; 5] = [1, 2, 4, 8, 16];
pub const GRID_CHUNKS: [u64; 4] = [64 * KIB, 256 * KIB, 1024 * KIB, 2048 * KIB];
pub const GRID_THREADS: u32 = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub configs: Vec<CommConfig>,
    #[serde(rename = "Z")]
    pub makespan: f64,
    pub evaluations: usize,
}

/// Axes of a per-comm grid; every comm uses its own selected subspace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub channels: Vec<u32>,
    pub chunks: Vec<u64>,
    pub threads: Vec<u32>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            channels: GRID_CHANNELS.to_vec(),
            chunks: GRID_CHUNKS.to_vec(),
            threads: vec![GRID_THREADS],
        }
    }
}

impl GridSpec {
    /// Points per comm before clamping.
    pub fn points(&self) -> u128 {
        (self.channels.len() * self.chunks.len() * self.threads.len()) as u128
    }

    /// Per-comm config lists. Values are clamped to each op's bounds and
    /// duplicates dropped, so a grid can be smaller than `points()`.
    pub fn expand(&self, workload: &Workload, params: &ParamTable) -> Result<Vec<Vec<CommConfig>>> {
        workload
            .comm_ops
            .iter()
            .map(|op| {
                let key = select_subspace(op, &workload.gpu, params)?;
                let base = op.min_config(key.algorithm, key.protocol, key.transport);
                let limits = ResourceLimits::for_op(op, &workload.gpu);
                let mut grid = Vec::new();
                for &nc in &self.channels {
                    for &c in &self.chunks {
                        for &nt in &self.threads {
                            let cfg = CommConfig {
                                num_channels: nc.clamp(1, limits.nc_max),
                                num_threads: nt,
                                chunk_size: c.clamp(limits.chunk_min, limits.chunk_max),
                                ..base
                            };
                            if !grid.contains(&cfg) {
                                grid.push(cfg);
                            }
                        }
                    }
                }
                Ok(grid)
            })
            .collect()
    }
}

/// Product of the grid sizes, saturating.
pub fn grid_size(grids: &[Vec<CommConfig>]) -> u128 {
    grids
        .iter()
        .fold(1u128, |acc, g| acc.saturating_mul(g.len() as u128))
}

fn decode(mut index: u128, grids: &[Vec<CommConfig>]) -> Vec<CommConfig> {
    let mut configs = vec![grids[0][0]; grids.len()];
    for (j, grid) in grids.iter().enumerate().rev() {
        let len = grid.len() as u128;
        configs[j] = grid[(index % len) as usize];
        index /= len;
    }
    configs
}

/// Simulates every joint assignment and returns the one with the lowest
/// makespan; ties go to the earliest assignment in grid order (last comm
/// varies fastest).
pub fn exhaustive(
    workload: &Workload,
    grids: &[Vec<CommConfig>],
    params: &ParamTable,
    limit: u128,
) -> Result<SearchResult> {
    workload.check()?;
    if grids.len() != workload.comm_ops.len() {
        return Err(Error::invalid(
            "grid",
            format!(
                "{} comm grids for {} comm ops",
                grids.len(),
                workload.comm_ops.len()
            ),
        ));
    }
    let size = grid_size(grids);
    if size > limit {
        return Err(Error::GridTooLarge { size, limit });
    }
    if let Some(j) = grids.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("grid[{j}]"), "empty"));
    }
    if grids.is_empty() {
        let z = simulate(workload, &[], params)?.makespan;
        return Ok(SearchResult {
            configs: Vec::new(),
            makespan: z,
            evaluations: 1,
        });
    }

    let scores: Vec<Result<f64>> = (0..size)
        .into_par_iter()
        .map(|i| simulate(workload, &decode(i, grids), params).map(|r| r.makespan))
        .collect();
    let mut best: Option<(f64, u128)> = None;
    for (i, z) in scores.into_iter().enumerate() {
        let z = z?;
        if best.is_none_or(|(bz, _)| z < bz) {
            best = Some((z, i as u128));
        }
    }
    let (makespan, index) = best.expect("non-empty grid");
    Ok(SearchResult {
        configs: decode(index, grids),
        makespan,
        evaluations: size as usize,
    })
}

/// Tunes each communication in index order to its own fastest config, then
/// freezes it. Every comm climbs from its minimum with the same growth rule
/// as the tuner but stops only when the communication stops getting faster
/// or cannot grow; computation time plays no part.
pub fn sequential_naive(workload: &Workload, params: &ParamTable) -> Result<SearchResult> {
    workload.check()?;
    let mut configs = crate::tuner::initial_configs(workload, params, crate::tuner::StartMode::Min)?;
    let mut current = profile(workload, &configs, params)?;
    let mut evaluations = 1;

    for j in 0..configs.len() {
        let limits = ResourceLimits::for_op(&workload.comm_ops[j], &workload.gpu);
        let mut lr = 0.0;
        loop {
            let candidate = grow(&configs[j], lr, &limits);
            if candidate == configs[j] {
                break;
            }
            let mut trial = configs.clone();
            trial[j] = candidate;
            let m = profile(workload, &trial, params)?;
            evaluations += 1;
            let (x_prev, x_new) = (current.comm_times[j], m.comm_times[j]);
            if x_new >= x_prev {
                break;
            }
            lr = (x_prev - x_new) / x_new;
            configs = trial;
            current = m;
        }
    }
    Ok(SearchResult {
        configs,
        makespan: current.makespan,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Collective, CommBounds, CommOp, ComputeOp, GpuSpec, MIB};
    use crate::workloads::{gen_fig4_scenario, gen_fsdp};

    fn one_comm() -> Workload {
        Workload::new(
            GpuSpec::default(),
            vec![ComputeOp {
                id: "k".into(),
                total_blocks: 2048,
                blocks_per_sm: 2,
                bytes_per_block: 131072.0,
                base_wave_time: 20.0,
            }],
            vec![CommOp {
                id: "c".into(),
                collective: Collective::AllReduce,
                message_bytes: 16 * MIB,
                ready_after: None,
                bounds: CommBounds::default(),
            }],
        )
    }

    #[test]
    fn two_point_grid_picks_the_lower() {
        let w = one_comm();
        let params = ParamTable::shipped();
        let grids = GridSpec::default().expand(&w, &params).unwrap();
        let slow = grids[0][0];
        let fast = grids[0][grids[0].len() - 1];
        let z = |c: CommConfig| simulate(&w, &[c], &params).unwrap().makespan;
        assert!(z(fast) < z(slow));
        let r = exhaustive(&w, &[vec![slow, fast]], &params, 10).unwrap();
        assert_eq!(r.evaluations, 2);
        assert_eq!(r.configs, vec![fast]);
        assert_eq!(r.makespan, z(fast));
    }

    #[test]
    fn joint_grid_matches_sequential_enumeration() {
        let w = gen_fig4_scenario();
        let params = ParamTable::shipped();
        let grids: Vec<Vec<CommConfig>> = GridSpec {
            channels: GRID_CHANNELS.to_vec(),
            chunks: vec![1024 * KIB],
            threads: vec![128],
        }
        .expand(&w, &params)
        .unwrap();
        assert_eq!(grid_size(&grids), 25);
        let r = exhaustive(&w, &grids, &params, 1000).unwrap();
        assert_eq!(r.evaluations, 25);
        let mut best = (f64::INFINITY, vec![]);
        for a in &grids[0] {
            for b in &grids[1] {
                let z = simulate(&w, &[*a, *b], &params).unwrap().makespan;
                if z < best.0 {
                    best = (z, vec![*a, *b]);
                }
            }
        }
        assert_eq!(r.makespan, best.0);
        assert_eq!(r.configs, best.1);
    }

    #[test]
    fn oversized_grid_is_refused() {
        let w = gen_fsdp(3, 1);
        let params = ParamTable::shipped();
        let grids = GridSpec::default().expand(&w, &params).unwrap();
        assert!(matches!(
            exhaustive(&w, &grids, &params, 1_000_000),
            Err(Error::GridTooLarge {
                size: 64_000_000,
                limit: 1_000_000
            })
        ));
    }

    #[test]
    fn exhaustive_is_deterministic() {
        let w = gen_fig4_scenario();
        let params = ParamTable::shipped();
        let grids = GridSpec::default().expand(&w, &params).unwrap();
        let a = exhaustive(&w, &grids, &params, 1000).unwrap();
        let b = exhaustive(&w, &grids, &params, 1000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn naive_without_comms() {
        let w = Workload::new(GpuSpec::default(), one_comm().compute_ops, vec![]);
        let r = sequential_naive(&w, &ParamTable::shipped()).unwrap();
        assert!(r.configs.is_empty());
    }

    #[test]
    fn naive_single_comm_reaches_standalone_optimum() {
        let w = one_comm();
        let params = ParamTable::shipped();
        let r = sequential_naive(&w, &params).unwrap();
        let op = &w.comm_ops[0];
        let x = |c: &CommConfig| crate::commperf::comm_time(op, c, &w.gpu, &params).unwrap();
        let limits = ResourceLimits::for_op(op, &w.gpu);
        let cfg = r.configs[0];
        // One more step along the trajectory does not help.
        let next = grow(&cfg, 0.0, &limits);
        assert!(next == cfg || x(&next) >= x(&cfg));
        assert!(x(&cfg) < x(&limits.minimum(&cfg)));
    }

    #[test]
    fn exhaustive_bounds_naive_on_grid_points() {
        let w = gen_fig4_scenario();
        let params = ParamTable::shipped();
        let grids = GridSpec::default().expand(&w, &params).unwrap();
        let best = exhaustive(&w, &grids, &params, 1000).unwrap();
        for a in grids[0].iter().step_by(3) {
            for b in grids[1].iter().step_by(3) {
                assert!(best.makespan <= simulate(&w, &[*a, *b], &params).unwrap().makespan);
            }
        }
    }
}
