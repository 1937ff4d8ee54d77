//! Computation cost under an active communication: channels steal SMs, which
//! adds waves, and the communication's memory traffic slows each wave.

use crate::error::{Error, Result};
use crate::model::{ComputeOp, GpuSpec};

/// The communication in flight when a wave starts. `None` stands for no
/// communication.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveComm {
    pub num_channels: u32,
    /// Global memory bandwidth the communication consumes, bytes/µs.
    pub footprint: f64,
}

/// SMs left for computation.
fn free_sms(active: Option<&ActiveComm>, gpu: &GpuSpec) -> Result<u64> {
    let taken = match active {
        Some(a) if gpu.comm_sm_occupancy => a.num_channels,
        _ => 0,
    };
    if taken >= gpu.num_sms {
        return Err(Error::SmExhaustion {
            channels: taken,
            sms: gpu.num_sms,
        });
    }
    Ok(u64::from(gpu.num_sms - taken))
}

/// Blocks that fit in one wave: `(λ − NC)·TB`.
pub fn wave_capacity(op: &ComputeOp, active: Option<&ActiveComm>, gpu: &GpuSpec) -> Result<u64> {
    Ok(free_sms(active, gpu)? * u64::from(op.blocks_per_sm))
}

/// Waves needed to run the whole op under `active`: `⌈μ / ((λ − NC)·TB)⌉`.
pub fn wave_count(op: &ComputeOp, active: Option<&ActiveComm>, gpu: &GpuSpec) -> Result<u64> {
    Ok(op.total_blocks.div_ceil(wave_capacity(op, active, gpu)?))
}

/// Duration of one wave holding `blocks_in_wave` blocks: `θ + blocks·D / (B̄ − V)`.
pub fn wave_time(
    op: &ComputeOp,
    blocks_in_wave: u64,
    active: Option<&ActiveComm>,
    gpu: &GpuSpec,
) -> Result<f64> {
    let footprint = active.map_or(0.0, |a| a.footprint);
    let available = gpu.peak_mem_bw - footprint;
    if available <= 0.0 {
        return Err(Error::BandwidthExhaustion {
            peak: gpu.peak_mem_bw,
            footprint,
        });
    }
    Ok(op.base_wave_time + blocks_in_wave as f64 * op.bytes_per_block / available)
}

/// One `(f, g)` term: `g` waves of `f` µs each.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaveTerm {
    pub wave_time: f64,
    pub waves: u64,
}

/// `y = Σ f·g`.
pub fn comp_time_static(terms: &[WaveTerm]) -> f64 {
    terms.iter().map(|t| t.wave_time * t.waves as f64).sum()
}

/// Computation time when consecutive runs of waves execute under the given
/// communications. The shares must consume the op's blocks exactly: every
/// wave non-empty and nothing left over.
pub fn comp_time_assigned(
    op: &ComputeOp,
    gpu: &GpuSpec,
    assignment: &[(Option<ActiveComm>, u64)],
) -> Result<f64> {
    let mut remaining = op.total_blocks;
    let mut total = 0.0;
    for (active, waves) in assignment {
        let capacity = wave_capacity(op, active.as_ref(), gpu)?;
        for _ in 0..*waves {
            if remaining == 0 {
                return Err(Error::PartitionMismatch {
                    covered: op.total_blocks + capacity,
                    total: op.total_blocks,
                });
            }
            let blocks = remaining.min(capacity);
            total += wave_time(op, blocks, active.as_ref(), gpu)?;
            remaining -= blocks;
        }
    }
    if remaining > 0 {
        return Err(Error::PartitionMismatch {
            covered: op.total_blocks - remaining,
            total: op.total_blocks,
        });
    }
    Ok(total)
}

/// Time of the op with no communication in flight.
pub fn standalone_time(op: &ComputeOp, gpu: &GpuSpec) -> Result<f64> {
    let waves = wave_count(op, None, gpu)?;
    comp_time_assigned(op, gpu, &[(None, waves)])
}
