use lagom::commperf::ParamTable;
use lagom::model::Workload;
use lagom::oracle::sequential_naive;
use lagom::simulator::simulate;
use lagom::tuner::{check_boundary, initial_configs, tune, Decision, SimProfiler, StartMode, TuneOutcome};
use lagom::workloads;
use proptest::prelude::*;

fn run(w: &Workload, start: StartMode, budget: usize) -> TuneOutcome {
    let params = ParamTable::shipped();
    let initial = initial_configs(w, &params, start).unwrap();
    let mut profiler = SimProfiler {
        workload: w,
        params: &params,
    };
    tune(w, &initial, &mut profiler, budget).unwrap()
}

fn first_h(out: &TuneOutcome, comm: &str) -> f64 {
    out.log
        .iter()
        .filter(|r| r.comm_id.as_deref() == Some(comm))
        .find_map(|r| match r.decision {
            Some(Decision::Accepted { h, .. }) => Some(h),
            _ => None,
        })
        .expect("comm took an accepted step")
}

#[test]
fn larger_message_has_cheaper_first_step() {
    let w = workloads::gen_fig4_scenario();
    let out = run(&w, StartMode::Min, 1000);
    let (a, b) = (first_h(&out, "allreduce_a"), first_h(&out, "allreduce_b"));
    assert!(b < a, "H_b = {b}, H_a = {a}");
}

#[test]
fn two_allreduces_beat_or_match_naive() {
    let w = workloads::gen_fig4_scenario();
    let out = run(&w, StartMode::Min, 1000);
    let naive = sequential_naive(&w, &ParamTable::shipped()).unwrap();
    assert!(out.measurement.unwrap().makespan <= naive.makespan);
}

#[test]
fn parallelism_patterns_reach_a_boundary() {
    for seed in 0..4 {
        for w in [
            workloads::gen_fsdp(3, seed),
            workloads::gen_tp_domino(2, seed),
            workloads::gen_ep_dualbatch(1, seed),
        ] {
            for start in [StartMode::Min, StartMode::NcclDefault] {
                let out = run(&w, start, 1000);
                assert!(!out.budget_exhausted);
                check_boundary(&w, &out).unwrap();
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tuning_random_workloads(m in 0usize..5, n in 0usize..4, seed in 0u64..10_000, nccl in any::<bool>()) {
        prop_assume!(m + n > 0);
        let w = workloads::gen_random(m, n, seed);
        let start = if nccl { StartMode::NcclDefault } else { StartMode::Min };
        let out = run(&w, start, 1000);
        prop_assert!(!out.budget_exhausted);
        prop_assert_eq!(out.profile_calls, out.log.len());
        if n > 0 {
            let (z0, z) = (out.initial.as_ref().unwrap().makespan, out.measurement.as_ref().unwrap().makespan);
            prop_assert!(z <= z0);
            prop_assert!(check_boundary(&w, &out).is_ok(), "{:?}", check_boundary(&w, &out));
            let replay = simulate(&w, &out.configs, &ParamTable::shipped()).unwrap();
            prop_assert_eq!(replay.makespan, z);
        }
        prop_assert_eq!(run(&w, start, 1000), out);
    }

    #[test]
    fn budget_caps_profile_calls(seed in 0u64..1000, budget in 1usize..6) {
        let w = workloads::gen_random(2, 2, seed);
        let out = run(&w, StartMode::Min, budget);
        prop_assert!(out.profile_calls <= budget);
        let full = run(&w, StartMode::Min, 1000);
        prop_assert_eq!(out.budget_exhausted, full.profile_calls > budget);
    }
}
