//! Command-line front end. Every command reads JSON inputs, writes a JSON or
//! CSV report to stdout (or `--out`), and maps failures onto fixed exit codes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::commperf::{comm_time, ParamTable, DEFAULT_PARAMS};
use crate::error::{Error, Result};
use crate::model::{CommConfig, Workload, KIB, MIB};
use crate::oracle::{exhaustive, sequential_naive, GridSpec};
use crate::simulator::{export_trace, simulate, write_trace, SimResult};
use crate::tuner::{check_boundary, initial_configs, tune, SimProfiler, StartMode, TuneOutcome};
use crate::workloads;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_BUDGET: u8 = 4;
pub const EXIT_GRID: u8 = 5;

/// Environment variable naming a default subspace coefficient file.
pub const PARAMS_ENV: &str = "LAGOM_PARAMS";

#[derive(Parser, Debug)]
#[command(
    name = "lagom",
    version,
    about = "Simulate and co-tune overlapped communication and computation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a workload under fixed communication configs.
    Simulate(SimulateArgs),
    /// Tune every communication of a workload.
    Tune(TuneArgs),
    /// Exhaustive search over a per-comm grid.
    Oracle(OracleArgs),
    /// Tuner, naive sequential tuning and exhaustive search side by side (CSV).
    Compare(CompareArgs),
    /// Vary one parameter of one communication (CSV).
    Sweep(SweepArgs),
    /// Write a generated workload.
    Gen(GenArgs),
}

#[derive(Args, Debug)]
pub struct Inputs {
    /// Workload JSON.
    #[arg(long)]
    pub workload: PathBuf,
    /// Subspace coefficient JSON; defaults to $LAGOM_PARAMS, then the shipped table.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// JSON array of comm configs, in comm-op order.
    #[arg(long)]
    pub configs: PathBuf,
    /// Chrome trace output.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Add one trace event per wave.
    #[arg(long)]
    pub waves: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Start {
    Min,
    NcclDefault,
}

impl From<Start> for StartMode {
    fn from(s: Start) -> Self {
        match s {
            Start::Min => StartMode::Min,
            Start::NcclDefault => StartMode::NcclDefault,
        }
    }
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, value_enum, default_value = "min")]
    pub start: Start,
    /// Maximum profiler calls, the initial probe included.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub budget: u64,
    /// Iteration log, one JSON record per profiler call.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Also write the tuned configs as a JSON array usable by `simulate`.
    #[arg(long)]
    pub configs_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Grid axes, e.g. `nc=1,2,4,8,16;c=64K,256K,1M,2M;nt=128`. Missing axes
    /// keep their defaults.
    #[arg(long)]
    pub grid: Option<String>,
    /// Largest joint grid to evaluate.
    #[arg(long, default_value_t = 1_000_000)]
    pub limit: u128,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 1_000_000)]
    pub limit: u128,
    #[arg(long, value_enum, default_value = "min")]
    pub start: Start,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub budget: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Nc,
    C,
    Nt,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Id of the communication to vary.
    #[arg(long)]
    pub comm: String,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Values: comma list of numbers and inclusive ranges `lo..hi` or
    /// `lo..hi:step`; `K` and `M` suffixes multiply by 1024 and 1024².
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    pub values: String,
    #[arg(long, default_value_t = 8)]
    pub base_nc: u32,
    #[arg(long, default_value = "1M")]
    pub base_c: String,
    #[arg(long, default_value_t = 128)]
    pub base_nt: u32,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(subcommand)]
    pub kind: GenKind,
    /// Write the workload here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum GenKind {
    /// AllGather / layer / ReduceScatter per layer.
    Fsdp {
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        layers: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Two half-batches per layer, each with an AllReduce.
    TpDomino {
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        layers: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dispatch and combine AlltoAlls over two interleaved micro-batches.
    EpDualbatch {
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        layers: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Two AllReduces under seven MatMuls.
    Fig4,
    /// One FFN kernel under a 32 MiB AllReduce.
    Fig3,
    /// Identical (kernel, AllReduce) pairs.
    Replicated {
        #[arg(long, default_value_t = 1)]
        copies: usize,
    },
    /// Random instance.
    Random {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn utf8(bytes: &[u8], path: &Path) -> Result<String> {
    String::from_utf8(bytes.to_vec()).map_err(|_| Error::invalid(path.display().to_string(), "not UTF-8"))
}

/// Loaded inputs plus their digests for the report header.
struct Loaded {
    workload: Workload,
    params: ParamTable,
    digests: BTreeMap<String, String>,
}

fn load(inputs: &Inputs) -> Result<Loaded> {
    let mut digests = BTreeMap::new();
    let bytes = read(&inputs.workload)?;
    digests.insert("workload".into(), sha256_hex(&bytes));
    let workload = Workload::from_json(&utf8(&bytes, &inputs.workload)?)?;

    let params_path = inputs.params.clone().or_else(|| {
        std::env::var_os(PARAMS_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
    });
    let params = match params_path {
        Some(path) => {
            let bytes = read(&path)?;
            digests.insert("params".into(), sha256_hex(&bytes));
            ParamTable::from_json(&utf8(&bytes, &path)?)?
        }
        None => {
            digests.insert(
                "params".into(),
                format!("shipped:{}", sha256_hex(DEFAULT_PARAMS.as_bytes())),
            );
            ParamTable::shipped()
        }
    };
    Ok(Loaded {
        workload,
        params,
        digests,
    })
}

fn header(command: &str, digests: &BTreeMap<String, String>) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("tool".into(), json!("lagom"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("command".into(), json!(command));
    m.insert("inputs".into(), json!(digests));
    m
}

fn emit(out: Option<&Path>, stdout: &mut dyn Write, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes)?,
        None => stdout.write_all(bytes)?,
    }
    Ok(())
}

fn emit_json(out: Option<&Path>, stdout: &mut dyn Write, report: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    emit(out, stdout, text.as_bytes())
}

fn totals(x: f64, y: f64, finish: f64, z: f64) -> Value {
    json!({ "X": x, "Y": y, "comm_finish": finish, "Z": z })
}

fn sim_summary(workload: &Workload, configs: &[CommConfig], r: &SimResult) -> Value {
    let compute: Vec<Value> = workload
        .compute_ops
        .iter()
        .zip(&r.comp_times)
        .map(|(op, y)| json!({ "id": op.id, "time": y }))
        .collect();
    let comm: Vec<Value> = workload
        .comm_ops
        .iter()
        .zip(&r.comm_times)
        .zip(configs)
        .map(|((op, x), cfg)| json!({ "id": op.id, "time": x, "config": cfg }))
        .collect();
    json!({
        "totals": totals(r.total_comm, r.total_compute, r.comm_finish, r.makespan),
        "compute": compute,
        "comm": comm,
    })
}

fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<u8> {
    let mut loaded = load(&args.inputs)?;
    let bytes = read(&args.configs)?;
    loaded.digests.insert("configs".into(), sha256_hex(&bytes));
    let configs: Vec<CommConfig> = serde_json::from_str(&utf8(&bytes, &args.configs)?)?;
    let r = simulate(&loaded.workload, &configs, &loaded.params)?;
    if let Some(path) = &args.trace {
        write_trace(&export_trace(&r, &loaded.workload, args.waves), path)?;
    }
    let mut report = header("simulate", &loaded.digests);
    if let Value::Object(body) = sim_summary(&loaded.workload, &configs, &r) {
        report.extend(body);
    }
    emit_json(args.inputs.out.as_deref(), stdout, &report)?;
    Ok(EXIT_OK)
}

fn run_tune(loaded: &Loaded, start: Start, budget: u64) -> Result<TuneOutcome> {
    let initial = initial_configs(&loaded.workload, &loaded.params, start.into())?;
    let mut profiler = SimProfiler {
        workload: &loaded.workload,
        params: &loaded.params,
    };
    tune(&loaded.workload, &initial, &mut profiler, budget as usize)
}

fn measured_totals(m: Option<&crate::simulator::Measurement>) -> Value {
    m.map_or(Value::Null, |m| {
        totals(m.total_comm, m.total_compute, m.comm_finish, m.makespan)
    })
}

fn cmd_tune(args: &TuneArgs, stdout: &mut dyn Write) -> Result<u8> {
    let loaded = load(&args.inputs)?;
    let outcome = run_tune(&loaded, args.start, args.budget)?;

    if let Some(path) = &args.log {
        let mut text = String::new();
        for record in &outcome.log {
            text.push_str(&serde_json::to_string(record)?);
            text.push('\n');
        }
        std::fs::write(path, text)?;
    }
    if let Some(path) = &args.configs_out {
        let mut text = serde_json::to_string_pretty(&outcome.configs)?;
        text.push('\n');
        std::fs::write(path, text)?;
    }

    let boundary = if outcome.climb_measurement.is_some() {
        match check_boundary(&loaded.workload, &outcome) {
            Ok(condition) => json!({ "ok": true, "condition": condition }),
            Err(reason) => json!({ "ok": false, "reason": reason }),
        }
    } else {
        Value::Null
    };
    let mut report = header("tune", &loaded.digests);
    report.extend(
        json!({
            "start": match args.start { Start::Min => "min", Start::NcclDefault => "nccl-default" },
            "budget": args.budget,
            "profile_calls": outcome.profile_calls,
            "budget_exhausted": outcome.budget_exhausted,
            "restored_initial": outcome.restored_initial,
            "configs": outcome.configs,
            "initial": measured_totals(outcome.initial.as_ref()),
            "final": measured_totals(outcome.measurement.as_ref()),
            "boundary": boundary,
            "terminations": workload_keyed(&loaded.workload, &outcome),
        })
        .as_object()
        .expect("object")
        .clone(),
    );
    emit_json(args.inputs.out.as_deref(), stdout, &report)?;
    Ok(if outcome.budget_exhausted {
        EXIT_BUDGET
    } else {
        EXIT_OK
    })
}

fn workload_keyed(workload: &Workload, outcome: &TuneOutcome) -> Value {
    let map: serde_json::Map<String, Value> = workload
        .comm_ops
        .iter()
        .zip(&outcome.terminations)
        .map(|(op, t)| {
            (
                op.id.clone(),
                serde_json::to_value(t).expect("termination serializes"),
            )
        })
        .collect();
    Value::Object(map)
}

/// Parses one number with an optional `K` or `M` suffix.
fn parse_scaled(s: &str) -> std::result::Result<u64, String> {
    let s = s.trim();
    let (digits, scale) = match s.chars().last() {
        Some('K' | 'k') => (&s[..s.len() - 1], KIB),
        Some('M' | 'm') => (&s[..s.len() - 1], MIB),
        _ => (s, 1),
    };
    digits
        .trim()
        .parse::<u64>()
        .map_err(|_| format!("`{s}` is not a non-negative integer"))?
        .checked_mul(scale)
        .ok_or_else(|| format!("`{s}` overflows"))
}

/// Expands a comma list of values and inclusive ranges.
pub fn parse_values(list: &str) -> std::result::Result<Vec<u64>, String> {
    let mut values = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item.split_once("..") {
            Some((lo, rest)) => {
                let (hi, step) = match rest.split_once(':') {
                    Some((hi, step)) => (hi, parse_scaled(step)?),
                    None => (rest, 1),
                };
                let (lo, hi) = (parse_scaled(lo)?, parse_scaled(hi)?);
                if step == 0 {
                    return Err(format!("`{item}` has a zero step"));
                }
                if lo > hi {
                    return Err(format!("`{item}` is an empty range"));
                }
                values.extend((lo..=hi).step_by(step as usize));
            }
            None => values.push(parse_scaled(item)?),
        }
    }
    Ok(values)
}

/// Parses `nc=..;c=..;nt=..` on top of the default grid.
pub fn parse_grid(spec: &str) -> std::result::Result<GridSpec, String> {
    let mut grid = GridSpec::default();
    for part in spec.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (axis, list) = part
            .split_once('=')
            .ok_or_else(|| format!("`{part}` is not of the form axis=values"))?;
        let values = parse_values(list)?;
        if values.is_empty() {
            return Err(format!("axis `{axis}` has no values"));
        }
        let narrow = |v: &[u64]| -> std::result::Result<Vec<u32>, String> {
            v.iter()
                .map(|&x| u32::try_from(x).map_err(|_| format!("{x} is too large for `{axis}`")))
                .collect()
        };
        match axis.trim() {
            "nc" => grid.channels = narrow(&values)?,
            "nt" => grid.threads = narrow(&values)?,
            "c" => grid.chunks = values,
            other => return Err(format!("unknown grid axis `{other}`")),
        }
    }
    Ok(grid)
}

fn grid_from(spec: Option<&str>) -> Result<GridSpec> {
    match spec {
        Some(s) => parse_grid(s).map_err(|reason| Error::invalid("--grid", reason)),
        None => Ok(GridSpec::default()),
    }
}

fn cmd_oracle(args: &OracleArgs, stdout: &mut dyn Write) -> Result<u8> {
    let loaded = load(&args.inputs)?;
    let grid = grid_from(args.grid.as_deref())?;
    let grids = grid.expand(&loaded.workload, &loaded.params)?;
    let started = Instant::now();
    let best = exhaustive(&loaded.workload, &grids, &loaded.params, args.limit)?;
    let wall = started.elapsed().as_secs_f64();
    let mut report = header("oracle", &loaded.digests);
    report.extend(
        json!({
            "grid": grid,
            "limit": args.limit.to_string(),
            "configs": best.configs,
            "Z": best.makespan,
            "evaluations": best.evaluations,
            "wall_time_s": wall,
        })
        .as_object()
        .expect("object")
        .clone(),
    );
    emit_json(args.inputs.out.as_deref(), stdout, &report)?;
    Ok(EXIT_OK)
}

fn cmd_compare(args: &CompareArgs, stdout: &mut dyn Write) -> Result<u8> {
    let loaded = load(&args.inputs)?;
    let grid = grid_from(args.grid.as_deref())?;
    let grids = grid.expand(&loaded.workload, &loaded.params)?;
    let best = exhaustive(&loaded.workload, &grids, &loaded.params, args.limit)?;
    let tuned = run_tune(&loaded, args.start, args.budget)?;
    let naive = sequential_naive(&loaded.workload, &loaded.params)?;
    let tuned_z = match &tuned.measurement {
        Some(m) => m.makespan,
        None => simulate(&loaded.workload, &tuned.configs, &loaded.params)?.makespan,
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    let rows: [(&str, f64, usize); 3] = [
        ("exhaustive", best.makespan, best.evaluations),
        ("tune", tuned_z, tuned.profile_calls),
        ("naive", naive.makespan, naive.evaluations),
    ];
    w.write_record(["method", "Z", "evaluations"])
        .map_err(csv_error)?;
    for (method, z, evals) in rows {
        w.serialize((method, z, evals)).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    emit(args.inputs.out.as_deref(), stdout, &bytes)?;
    Ok(if tuned.budget_exhausted {
        EXIT_BUDGET
    } else {
        EXIT_OK
    })
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

#[derive(Serialize)]
struct SweepRow {
    value: u64,
    x_comm: f64,
    #[serde(rename = "Y")]
    total_compute: f64,
    #[serde(rename = "Z")]
    makespan: f64,
}

fn cmd_sweep(args: &SweepArgs, stdout: &mut dyn Write) -> Result<u8> {
    let loaded = load(&args.inputs)?;
    let w = &loaded.workload;
    let j = w
        .comm_index(&args.comm)
        .ok_or_else(|| Error::invalid("--comm", format!("no comm op `{}`", args.comm)))?;
    let values = parse_values(&args.values).map_err(|reason| Error::invalid("--values", reason))?;
    let base_c = parse_scaled(&args.base_c).map_err(|reason| Error::invalid("--base-c", reason))?;

    let mut configs = initial_configs(w, &loaded.params, StartMode::Min)?;
    let base = CommConfig {
        num_channels: args.base_nc,
        num_threads: args.base_nt,
        chunk_size: base_c,
        ..configs[j]
    };

    let mut out = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    out.write_record(["value", "x_comm", "Y", "Z"])
        .map_err(csv_error)?;
    for value in values {
        let narrow =
            || u32::try_from(value).map_err(|_| Error::invalid("--values", format!("{value} is too large")));
        configs[j] = match args.param {
            SweepParam::Nc => CommConfig {
                num_channels: narrow()?,
                ..base
            },
            SweepParam::Nt => CommConfig {
                num_threads: narrow()?,
                ..base
            },
            SweepParam::C => CommConfig {
                chunk_size: value,
                ..base
            },
        };
        let r = simulate(w, &configs, &loaded.params)?;
        debug_assert_eq!(
            r.comm_times[j],
            comm_time(&w.comm_ops[j], &configs[j], &w.gpu, &loaded.params)?
        );
        out.serialize(SweepRow {
            value,
            x_comm: r.comm_times[j],
            total_compute: r.total_compute,
            makespan: r.makespan,
        })
        .map_err(csv_error)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    emit(args.inputs.out.as_deref(), stdout, &bytes)?;
    Ok(EXIT_OK)
}

fn cmd_gen(args: &GenArgs, stdout: &mut dyn Write) -> Result<u8> {
    let workload = match args.kind {
        GenKind::Fsdp { layers, seed } => workloads::gen_fsdp(layers as usize, seed),
        GenKind::TpDomino { layers, seed } => workloads::gen_tp_domino(layers as usize, seed),
        GenKind::EpDualbatch { layers, seed } => workloads::gen_ep_dualbatch(layers as usize, seed),
        GenKind::Fig4 => workloads::gen_fig4_scenario(),
        GenKind::Fig3 => workloads::gen_fig3_scenario(),
        GenKind::Replicated { copies } => workloads::gen_replicated(copies),
        GenKind::Random { m, n, seed } => {
            if m + n == 0 {
                return Err(Error::invalid("--m/--n", "need at least one op"));
            }
            workloads::gen_random(m, n, seed)
        }
    };
    let workload = crate::model::validate(workload)?;
    let mut text = workload.to_json();
    text.push('\n');
    emit(args.out.as_deref(), stdout, text.as_bytes())?;
    Ok(EXIT_OK)
}

/// Runs a parsed command and returns its exit code.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<u8> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, stdout),
        Command::Tune(a) => cmd_tune(a, stdout),
        Command::Oracle(a) => cmd_oracle(a, stdout),
        Command::Compare(a) => cmd_compare(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::Gen(a) => cmd_gen(a, stdout),
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::GridTooLarge { .. } => EXIT_GRID,
        _ => EXIT_INVALID,
    }
}

/// Machine-readable description of an error, printed to stderr.
pub fn error_report(err: &Error) -> Value {
    let kind = match err {
        Error::InvalidWorkload { .. } => "invalid_workload",
        Error::UnknownSubspace(_) => "unknown_subspace",
        Error::SmExhaustion { .. } => "sm_exhaustion",
        Error::BandwidthExhaustion { .. } => "bandwidth_exhaustion",
        Error::PartitionMismatch { .. } => "partition_mismatch",
        Error::GridTooLarge { .. } => "grid_too_large",
        Error::Io(_) => "io",
        Error::Json(_) => "parse",
    };
    let mut report = json!({ "error": kind, "message": err.to_string() });
    match err {
        Error::InvalidWorkload { field, .. } => report["field"] = json!(field),
        Error::Json(e) => {
            report["line"] = json!(e.line());
            report["column"] = json!(e.column());
        }
        Error::GridTooLarge { size, limit } => {
            report["size"] = json!(size.to_string());
            report["limit"] = json!(limit.to_string());
        }
        _ => {}
    }
    report
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { EXIT_OK });
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("{}", error_report(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_lists() {
        assert_eq!(parse_values("").unwrap(), Vec::<u64>::new());
        assert_eq!(parse_values("1,2,4").unwrap(), vec![1, 2, 4]);
        assert_eq!(parse_values("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_values("64..320:64").unwrap(), vec![64, 128, 192, 256, 320]);
        assert_eq!(parse_values("64K, 1M").unwrap(), vec![64 * KIB, MIB]);
        assert_eq!(
            parse_values("16K..64K:16K").unwrap(),
            vec![16 * KIB, 32 * KIB, 48 * KIB, 64 * KIB]
        );
        assert!(parse_values("4..1").is_err());
        assert!(parse_values("1..4:0").is_err());
        assert!(parse_values("x").is_err());
        assert!(parse_values("-3").is_err());
    }

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid("").unwrap(), GridSpec::default());
        let g = parse_grid("nc=1,2; c=64K").unwrap();
        assert_eq!(g.channels, vec![1, 2]);
        assert_eq!(g.chunks, vec![64 * KIB]);
        assert_eq!(g.threads, GridSpec::default().threads);
        assert!(parse_grid("nc=").is_err());
        assert!(parse_grid("q=1").is_err());
        assert!(parse_grid("nc").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::GridTooLarge { size: 2, limit: 1 }), EXIT_GRID);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), EXIT_IO);
        assert_eq!(exit_code(&Error::invalid("f", "r")), EXIT_INVALID);
        let json_err = serde_json::from_str::<Value>("{\n  \"a\": }").unwrap_err();
        let report = error_report(&Error::Json(json_err));
        assert_eq!(report["error"], "parse");
        assert_eq!(report["line"], 2);
    }

    #[test]
    fn digest_is_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
