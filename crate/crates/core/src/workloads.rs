//! Workload generators: overlap patterns of common parallelism strategies,
//! two fixed scenarios for contention studies, and seeded random instances.
//!
//! Every generator uses [`GpuSpec::default`] and draws from the ranges listed
//! on it with a ChaCha8 stream seeded by `seed`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Collective, CommBounds, CommOp, ComputeOp, GpuSpec, Workload, KIB, MIB};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Byte count in `[lo, hi]`, rounded down to 4 KiB.
fn bytes_between(rng: &mut ChaCha8Rng, lo: u64, hi: u64) -> u64 {
    (rng.gen_range(lo..=hi) / (4 * KIB)).max(1) * 4 * KIB
}

fn compute(
    id: String,
    total_blocks: u64,
    blocks_per_sm: u32,
    bytes_per_block: f64,
    base_wave_time: f64,
) -> ComputeOp {
    ComputeOp {
        id,
        total_blocks,
        blocks_per_sm,
        bytes_per_block,
        base_wave_time,
    }
}

fn comm(id: String, collective: Collective, message_bytes: u64, ready_after: Option<String>) -> CommOp {
    CommOp {
        id,
        collective,
        message_bytes,
        ready_after,
        bounds: CommBounds::default(),
    }
}

/// A transformer-layer sized kernel: 1024–4096 blocks, 2 per SM,
/// 64–192 KiB per block, 10–40 µs per wave.
fn layer_kernel(rng: &mut ChaCha8Rng, id: String) -> ComputeOp {
    compute(
        id,
        rng.gen_range(1024..=4096),
        2,
        rng.gen_range(64.0..192.0) * KIB as f64,
        rng.gen_range(10.0..40.0),
    )
}

/// Fully-sharded data parallelism: per layer, an AllGather of the layer's
/// parameters (ready once the previous layer has computed), the layer's
/// kernel, and a ReduceScatter of its gradients. Messages are 4–24 MiB.
/// `M = layers`, `N = 2·layers`.
pub fn gen_fsdp(layers: usize, seed: u64) -> Workload {
    assert!(layers >= 1, "need at least one layer");
    let mut rng = rng(seed);
    let mut compute_ops = Vec::new();
    let mut comm_ops = Vec::new();
    for l in 0..layers {
        let previous = l.checked_sub(1).map(|p| format!("layer{p}"));
        comm_ops.push(comm(
            format!("allgather{l}"),
            Collective::AllGather,
            bytes_between(&mut rng, 4 * MIB, 24 * MIB),
            previous,
        ));
        compute_ops.push(layer_kernel(&mut rng, format!("layer{l}")));
        comm_ops.push(comm(
            format!("reducescatter{l}"),
            Collective::ReduceScatter,
            bytes_between(&mut rng, 4 * MIB, 24 * MIB),
            Some(format!("layer{l}")),
        ));
    }
    Workload::new(GpuSpec::default(), compute_ops, comm_ops)
}

/// Tensor parallelism with the batch split in two: the AllReduce of one
/// half overlaps the other half's kernel. Messages are 2–16 MiB.
/// `M = 2·layers`, `N = 2·layers`.
pub fn gen_tp_domino(layers: usize, seed: u64) -> Workload {
    assert!(layers >= 1, "need at least one layer");
    let mut rng = rng(seed);
    let mut compute_ops = Vec::new();
    let mut comm_ops = Vec::new();
    for l in 0..layers {
        for half in ["a", "b"] {
            let id = format!("layer{l}{half}");
            compute_ops.push(layer_kernel(&mut rng, id.clone()));
            comm_ops.push(comm(
                format!("allreduce{l}{half}"),
                Collective::AllReduce,
                bytes_between(&mut rng, 2 * MIB, 16 * MIB),
                Some(id),
            ));
        }
    }
    Workload::new(GpuSpec::default(), compute_ops, comm_ops)
}

/// Expert parallelism over two micro-batches: each micro-batch's attention
/// is followed by an AlltoAll dispatch, its expert kernel by an AlltoAll
/// combine, and the two micro-batches interleave. Messages are 2–12 MiB.
/// `M = 4·layers`, `N = 4·layers`.
pub fn gen_ep_dualbatch(layers: usize, seed: u64) -> Workload {
    assert!(layers >= 1, "need at least one layer");
    let mut rng = rng(seed);
    let mut compute_ops = Vec::new();
    let mut comm_ops = Vec::new();
    for l in 0..layers {
        for stage in ["attn", "expert"] {
            for mb in 0..2 {
                let id = format!("{stage}{l}_{mb}");
                compute_ops.push(layer_kernel(&mut rng, id.clone()));
                let what = if stage == "attn" { "dispatch" } else { "combine" };
                comm_ops.push(comm(
                    format!("{what}{l}_{mb}"),
                    Collective::AllToAll,
                    bytes_between(&mut rng, 2 * MIB, 12 * MIB),
                    Some(id),
                ));
            }
        }
    }
    Workload::new(GpuSpec::default(), compute_ops, comm_ops)
}

/// Two AllReduces running under seven MatMuls. Comm A is small and runs
/// first; comm B carries a large message, so raising its channel count buys
/// much more communication time per unit of added computation.
pub fn gen_fig4_scenario() -> Workload {
    let compute_ops = (0..7)
        .map(|i| compute(format!("matmul{i}"), 2048, 2, 96.0 * KIB as f64, 20.0))
        .collect();
    let comm_ops = vec![
        comm("allreduce_a".into(), Collective::AllReduce, 2 * MIB, None),
        comm("allreduce_b".into(), Collective::AllReduce, 24 * MIB, None),
    ];
    Workload::new(GpuSpec::default(), compute_ops, comm_ops)
}

/// One FFN kernel running entirely inside a 32 MiB AllReduce, for sweeps
/// of a single communication's parameters.
pub fn gen_fig3_scenario() -> Workload {
    Workload::new(
        GpuSpec::default(),
        vec![compute("ffn".into(), 1024, 2, 128.0 * KIB as f64, 20.0)],
        vec![comm("allreduce".into(), Collective::AllReduce, 32 * MIB, None)],
    )
}

/// `copies` identical (kernel, AllReduce) pairs, all ready at t = 0. The
/// communication dominates, so each comm is tuned to its own optimum.
pub fn gen_replicated(copies: usize) -> Workload {
    let compute_ops = (0..copies)
        .map(|i| compute(format!("kernel{i}"), 2048, 2, 128.0 * KIB as f64, 20.0))
        .collect();
    let comm_ops = (0..copies)
        .map(|i| comm(format!("allreduce{i}"), Collective::AllReduce, 16 * MIB, None))
        .collect();
    Workload::new(GpuSpec::default(), compute_ops, comm_ops)
}

/// Random instance with `m` compute and `n` comm ops.
///
/// Compute: 256–4096 blocks, 1, 2 or 4 per SM, 32–256 KiB per block,
/// 5–50 µs per wave. Comm: any collective, 1–32 MiB; with probability 1/3
/// it waits for a compute op drawn from the first half of the stream.
pub fn gen_random(m: usize, n: usize, seed: u64) -> Workload {
    assert!(m + n >= 1, "need at least one op");
    let mut rng = rng(seed);
    let compute_ops: Vec<ComputeOp> = (0..m)
        .map(|i| {
            compute(
                format!("op{i}"),
                rng.gen_range(256..=4096),
                [1, 2, 4][rng.gen_range(0..3)],
                rng.gen_range(32.0..256.0) * KIB as f64,
                rng.gen_range(5.0..50.0),
            )
        })
        .collect();
    let collectives = [
        Collective::AllReduce,
        Collective::AllGather,
        Collective::ReduceScatter,
        Collective::AllToAll,
    ];
    let comm_ops = (0..n)
        .map(|j| {
            let collective = collectives[rng.gen_range(0..collectives.len())];
            let bytes = bytes_between(&mut rng, MIB, 32 * MIB);
            let ready_after =
                (m > 0 && rng.gen_range(0..3) == 0).then(|| format!("op{}", rng.gen_range(0..m.div_ceil(2))));
            comm(format!("comm{j}"), collective, bytes, ready_after)
        })
        .collect();
    Workload::new(GpuSpec::default(), compute_ops, comm_ops)
}
