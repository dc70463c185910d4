//! Command-line front end for cpekit.
//!
//! Exit codes: 0 success, 1 computational failure (e.g. an LMI that cannot be
//! certified), 2 validation error. Every run writes a machine-readable
//! `result.json` next to its artifacts; artifact files are written to a
//! temporary name and renamed so no partial files are left behind.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use cpekit::bench::{
    crossover_threshold, flop_costs, save_bench_csv, timed_rank_bench, BenchScenario, FlopModel,
};
use cpekit::control::{mpc_step, synthesize_gain, BehavioralBasis, GainArtifact, MpcProblem};
use cpekit::design::{design_signals, verify_design, DesignRequest};
use cpekit::hankel::CompositionMode;
use cpekit::ident::{
    check_convergence_conditions, ls_identify, run_adaptive, run_distributed,
    save_error_traces_csv, ConvergenceReport, DistributedGains, DistributedState,
    IdentifierGains, IdentifierState,
};
use cpekit::informativity::{check_cpe, AlphaPolicy};
use cpekit::linalg::default_rel_tol;
use cpekit::traj::{
    builtin_system, load_bundle, load_io_record_csv, load_trajectory_csv, save_bundle,
    save_io_record_csv, simulate_lti, GraphTopology, IoRecord, LtiSystem, Trajectory,
    TrajectoryBundle,
};
use cpekit::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cpekit",
    about = "Certify, design, and exploit collectively exciting experiment data",
    version
)]
struct Cli {
    /// Default RNG seed for all subcommands.
    #[arg(long, global = true, env = "CPEKIT_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads for independent seeds/trials (repro sweeps only).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a CPE signal family whose members are provably non-PE.
    Design(DesignArgs),
    /// Check PE/CPE conditions and transformation relations of a bundle.
    Check(CheckArgs),
    /// Roll out a linear system along an input file.
    Simulate(SimulateArgs),
    /// Identification front ends.
    #[command(subcommand)]
    Identify(IdentifyCmd),
    /// Data-driven state-feedback gain synthesis.
    Gain(GainArgs),
    /// Hankel-basis receding-horizon control.
    Mpc(MpcArgs),
    /// Flop-model accounting and wall-clock rank benchmarks.
    Bench(BenchArgs),
    /// One-command reproduction of the benchmark studies.
    Repro(ReproArgs),
}

#[derive(Args)]
struct DesignArgs {
    /// mosaic | cumulative | hybrid
    #[arg(long)]
    mode: String,
    /// Signal dimension m.
    #[arg(short = 'm', long)]
    dim: usize,
    /// Excitation order L.
    #[arg(short = 'L', long)]
    order: usize,
    /// Member lengths: per member (mosaic), [T0] (cumulative),
    /// [T0, tails...] (hybrid).
    #[arg(long, value_delimiter = ',')]
    lengths: Vec<usize>,
    /// Member count (defaults: mosaic = #lengths, cumulative = 2,
    /// hybrid = shared + #tails).
    #[arg(long)]
    members: Option<usize>,
    /// Composition weights (default all ones).
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Summed member count for hybrid mode.
    #[arg(long, default_value_t = 2)]
    shared: usize,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// mosaic | cumulative | hybrid | single
    #[arg(long)]
    mode: String,
    #[arg(short = 'L', long)]
    order: usize,
    /// Bundle manifest.json produced by `design`.
    #[arg(long)]
    bundle: PathBuf,
    /// Override the stored weights.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// fixed | randomized
    #[arg(long, default_value = "fixed")]
    policy: String,
    #[arg(long, default_value_t = 32)]
    trials: usize,
    #[arg(long, default_value_t = 2)]
    shared: usize,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in system name (voltage_converter | batch_reactor).
    #[arg(long, conflicts_with = "matrices")]
    system: Option<String>,
    /// JSON file {"a": [[..]], "b": [[..]]}.
    #[arg(long)]
    matrices: Option<PathBuf>,
    /// Input trajectory CSV.
    #[arg(long)]
    input: PathBuf,
    /// Initial state, comma-separated.
    #[arg(long, value_delimiter = ',')]
    x0: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum IdentifyCmd {
    /// One-shot least squares on composed records.
    Ls(IdentifyLsArgs),
    /// Online adaptive identifier along a rollout.
    Adaptive(IdentifyAdaptiveArgs),
    /// Multi-agent consensus identifier.
    Distributed(IdentifyDistributedArgs),
}

#[derive(Args)]
struct IdentifyLsArgs {
    /// Record CSVs (comma-separated), as written by `simulate`.
    #[arg(long, value_delimiter = ',')]
    records: Vec<PathBuf>,
    #[arg(short = 'n', long)]
    state_dim: usize,
    #[arg(short = 'm', long)]
    input_dim: usize,
    #[arg(long)]
    mode: String,
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 2)]
    shared: usize,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifyAdaptiveArgs {
    #[arg(long)]
    system: String,
    /// Input trajectory CSV; generated randomly when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    xi: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifyDistributedArgs {
    #[arg(long)]
    system: String,
    #[arg(long, default_value_t = 5)]
    agents: usize,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    xi: f64,
    #[arg(long, default_value_t = 0.25)]
    gamma: f64,
    /// path | cycle | complete
    #[arg(long, default_value = "path")]
    topology: String,
    /// Per-agent sinusoid frequencies (rad/step); random inputs if omitted.
    #[arg(long, value_delimiter = ',')]
    freqs: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args)]
struct GainArgs {
    #[arg(long, value_delimiter = ',')]
    records: Vec<PathBuf>,
    #[arg(short = 'n', long)]
    state_dim: usize,
    #[arg(short = 'm', long)]
    input_dim: usize,
    #[arg(long)]
    mode: String,
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 2)]
    shared: usize,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args)]
struct MpcArgs {
    #[arg(long)]
    system: String,
    #[arg(long, value_delimiter = ',')]
    records: Vec<PathBuf>,
    #[arg(long)]
    mode: String,
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 2)]
    shared: usize,
    #[arg(long, default_value_t = 5)]
    horizon: usize,
    #[arg(long, default_value_t = 3.0)]
    q_scale: f64,
    #[arg(long, default_value_t = 0.01)]
    r_scale: f64,
    #[arg(long, value_delimiter = ',')]
    x0: Vec<f64>,
    #[arg(long, default_value_t = 40)]
    steps: usize,
    /// Symmetric input bound |u_i| <= value.
    #[arg(long)]
    bound: Option<f64>,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(short = 'm', long)]
    dim: usize,
    #[arg(short = 'L', long)]
    order: usize,
    /// Trial lengths for the flop model and matched timing scenarios.
    #[arg(long, value_delimiter = ',')]
    lengths: Vec<usize>,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReproArgs {
    /// ls-batch-reactor | distributed-voltage | gain-batch-reactor |
    /// mpc-batch-reactor | complexity
    script: String,
    /// Max process-noise standard deviation for ls-batch-reactor.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Seeds per sweep point.
    #[arg(long, default_value_t = 100)]
    seeds: usize,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

fn parse_mode(name: &str, shared: usize) -> Result<CompositionMode> {
    match name {
        "single" => Ok(CompositionMode::Single),
        "mosaic" => Ok(CompositionMode::Mosaic),
        "cumulative" => Ok(CompositionMode::Cumulative),
        "hybrid" => Ok(CompositionMode::Hybrid { shared }),
        other => Err(Error::InvalidInput(format!(
            "unknown mode '{other}' (expected mosaic|cumulative|hybrid|single)"
        ))),
    }
}

/// Write atomically: temp file in the same directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    write_atomic(path, &serde_json::to_string_pretty(value).map_err(io_err)?)
}

fn io_err(e: serde_json::Error) -> Error {
    Error::Parse(e.to_string())
}

fn load_system(name: Option<&str>, matrices: Option<&Path>) -> Result<LtiSystem> {
    match (name, matrices) {
        (Some(n), None) => builtin_system(n),
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p)?;
            let v: Value = serde_json::from_str(&text).map_err(io_err)?;
            let to_mat = |key: &str| -> Result<DMatrix<f64>> {
                let rows = v[key]
                    .as_array()
                    .ok_or_else(|| Error::Parse(format!("matrices file missing '{key}'")))?;
                let data: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|r| {
                        r.as_array()
                            .map(|xs| xs.iter().filter_map(Value::as_f64).collect())
                            .ok_or_else(|| Error::Parse(format!("'{key}' must be a 2-d array")))
                    })
                    .collect::<Result<_>>()?;
                if data.is_empty() || data.iter().any(|r| r.len() != data[0].len()) {
                    return Err(Error::Parse(format!("'{key}' rows must be equal length")));
                }
                Ok(DMatrix::from_fn(data.len(), data[0].len(), |i, j| data[i][j]))
            };
            LtiSystem::new(to_mat("a")?, to_mat("b")?)
        }
        _ => Err(Error::InvalidInput("provide exactly one of --system/--matrices".into())),
    }
}

fn load_records(paths: &[PathBuf], n: usize, m: usize) -> Result<Vec<IoRecord>> {
    if paths.is_empty() {
        return Err(Error::InvalidInput("no record files given".into()));
    }
    paths.iter().map(|p| load_io_record_csv(p, n, m)).collect()
}

fn ones(len: usize) -> Vec<f64> {
    vec![1.0; len]
}

fn cmd_design(seed: u64, a: &DesignArgs) -> Result<Value> {
    let mode = parse_mode(&a.mode, a.shared)?;
    let member_count = a.members.unwrap_or(match mode {
        CompositionMode::Mosaic => a.lengths.len(),
        CompositionMode::Cumulative => 2,
        CompositionMode::Hybrid { shared } => shared + a.lengths.len().saturating_sub(1),
        CompositionMode::Single => 1,
    });
    let mut lengths = a.lengths.clone();
    if matches!(mode, CompositionMode::Mosaic) {
        lengths.sort_unstable();
    } else if matches!(mode, CompositionMode::Hybrid { .. }) && lengths.len() > 1 {
        lengths[1..].sort_unstable();
    }
    let req = DesignRequest {
        dim_m: a.dim,
        order_l: a.order,
        member_count,
        mode,
        lengths,
        weights: a.weights.clone().unwrap_or_else(|| ones(member_count)),
        rng_seed: seed,
    };
    let (bundle, ledger) = design_signals(&req)?;
    let (ok, report) = verify_design(&bundle, &req)?;
    save_bundle(&bundle, &a.out)?;
    write_json(&a.out.join("ledger.json"), &serde_json::to_value(&ledger).map_err(io_err)?)?;
    println!(
        "designed {} members, composite rank {} of {}, verdict {}",
        bundle.len(),
        report.rank_report.numeric_rank,
        a.dim * a.order,
        ok
    );
    Ok(json!({
        "request": serde_json::to_value(&req).map_err(io_err)?,
        "mode": mode.tag(),
        "verdict": ok,
        "report": serde_json::to_value(&report).map_err(io_err)?,
        "bundle_manifest": a.out.join("manifest.json"),
    }))
}

fn cmd_check(seed: u64, a: &CheckArgs) -> Result<Value> {
    let mode = parse_mode(&a.mode, a.shared)?;
    let mut bundle = load_bundle(&a.bundle)?;
    if let Some(w) = &a.weights {
        bundle = bundle.with_weights(w.clone())?;
    }
    let policy = match a.policy.as_str() {
        "fixed" => AlphaPolicy::Fixed,
        "randomized" => AlphaPolicy::Randomized { trials: a.trials, seed },
        other => return Err(Error::InvalidInput(format!("unknown policy '{other}'"))),
    };
    let rows = bundle.dim() * a.order;
    let cols: usize = bundle.members().iter().map(|t| t.len().saturating_sub(a.order - 1)).sum();
    let report = check_cpe(&bundle, a.order, mode, &policy, default_rel_tol(rows, cols))?;
    println!(
        "{} CPE of order {}: verdict {}, rank {}, members PE {:?}",
        mode.tag(),
        a.order,
        report.verdict,
        report.rank_report.numeric_rank,
        report.per_member_pe
    );
    let value = serde_json::to_value(&report).map_err(io_err)?;
    write_json(&a.out, &value)?;
    Ok(value)
}

fn cmd_simulate(seed: u64, a: &SimulateArgs) -> Result<Value> {
    let sys = load_system(a.system.as_deref(), a.matrices.as_deref())?;
    let input = load_trajectory_csv(&a.input, "u")?;
    let x0 = DVector::from_vec(a.x0.clone());
    let rec = simulate_lti(&sys, &x0, &input, a.noise, seed)?;
    save_io_record_csv(&rec, &a.out)?;
    println!("simulated {} steps -> {}", rec.steps(), a.out.display());
    Ok(json!({
        "steps": rec.steps(),
        "state_dim": rec.state_dim(),
        "input_dim": rec.input_dim(),
        "noise": a.noise,
        "record": a.out,
    }))
}

fn cmd_identify_ls(a: &IdentifyLsArgs) -> Result<Value> {
    let mode = parse_mode(&a.mode, a.shared)?;
    let records = load_records(&a.records, a.state_dim, a.input_dim)?;
    let weights = a.weights.clone().unwrap_or_else(|| ones(records.len()));
    let res = ls_identify(&records, mode, &weights, 1e-9)?;
    let g_rows: Vec<Vec<f64>> =
        (0..res.g_hat.nrows()).map(|i| res.g_hat.row(i).iter().copied().collect()).collect();
    println!(
        "least squares: unique {}, residual {:.3e}, data rank {}",
        res.unique, res.residual, res.data_rank
    );
    let value = json!({
        "g_hat": g_rows,
        "unique": res.unique,
        "residual": res.residual,
        "data_rank": res.data_rank,
        "mode": mode.tag(),
        "weights": weights,
    });
    write_json(&a.out, &value)?;
    Ok(value)
}

fn cmd_identify_adaptive(seed: u64, a: &IdentifyAdaptiveArgs) -> Result<Value> {
    let sys = builtin_system(&a.system)?;
    let input = match &a.input {
        Some(p) => load_trajectory_csv(p, "u")?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Trajectory::new(
                DMatrix::from_fn(sys.input_dim(), a.steps, |_, _| rng.gen_range(-1.0..1.0)),
                "u",
            )?
        }
    };
    let gains = IdentifierGains::new(a.alpha, a.xi)?;
    let d = sys.state_dim() * (sys.state_dim() + sys.input_dim());
    let state0 = IdentifierState::new(DVector::zeros(d), gains);
    let x0 = DVector::zeros(sys.state_dim());
    let trace = run_adaptive(&sys, &x0, &input, state0, a.noise, seed)?;
    save_error_traces_csv(&[trace.clone()], &a.out)?;
    println!(
        "adaptive identifier: initial error {:.4}, final error {:.3e} ({} steps)",
        trace[0],
        trace.last().unwrap(),
        trace.len() - 1
    );
    Ok(json!({
        "initial_error": trace[0],
        "final_error": trace.last().unwrap(),
        "steps": trace.len() - 1,
        "alpha": a.alpha,
        "xi": a.xi,
        "trace": a.out,
    }))
}

fn agent_inputs(
    sys: &LtiSystem,
    agents: usize,
    steps: usize,
    freqs: Option<&[f64]>,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    match freqs {
        Some(fs) => {
            if fs.len() != agents {
                return Err(Error::InvalidInput("need one frequency per agent".into()));
            }
            (0..agents)
                .map(|i| {
                    Trajectory::new(
                        DMatrix::from_fn(sys.input_dim(), steps, |_, k| {
                            (fs[i] * k as f64).sin()
                        }),
                        format!("u{i}"),
                    )
                })
                .collect()
        }
        None => (0..agents)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000 + i as u64));
                Trajectory::new(
                    DMatrix::from_fn(sys.input_dim(), steps, |_, _| rng.gen_range(-1.0..1.0)),
                    format!("u{i}"),
                )
            })
            .collect(),
    }
}

fn cmd_identify_distributed(seed: u64, a: &IdentifyDistributedArgs) -> Result<Value> {
    let sys = builtin_system(&a.system)?;
    let topology = match a.topology.as_str() {
        "path" => GraphTopology::path(a.agents)?,
        "cycle" => GraphTopology::cycle(a.agents)?,
        "complete" => GraphTopology::complete(a.agents)?,
        other => return Err(Error::InvalidInput(format!("unknown topology '{other}'"))),
    };
    let inputs = agent_inputs(&sys, a.agents, a.steps, a.freqs.as_deref(), seed)?;
    let bundle = TrajectoryBundle::new(inputs.clone(), ones(a.agents), 0)?;
    let gains = DistributedGains { alpha: a.alpha, xi: a.xi, gamma: a.gamma };
    let conditions: ConvergenceReport = check_convergence_conditions(
        &gains,
        Some(&topology),
        &bundle,
        (a.steps / 2).max(sys.state_dim() + 1),
        sys.state_dim() + 1,
    )?;
    let d = sys.state_dim() * (sys.state_dim() + sys.input_dim());
    let state0 = DistributedState::new(vec![DVector::zeros(d); a.agents], gains, topology)?;
    let x0s = vec![DVector::zeros(sys.state_dim()); a.agents];
    let traces = run_distributed(&sys, &x0s, &inputs, state0, a.noise, seed)?;
    save_error_traces_csv(&traces, &a.out)?;
    let finals: Vec<f64> = traces.iter().map(|t| *t.last().unwrap()).collect();
    println!(
        "distributed identifier: {} agents, final errors {:?}",
        a.agents,
        finals.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()
    );
    Ok(json!({
        "agents": a.agents,
        "final_errors": finals,
        "conditions": serde_json::to_value(&conditions).map_err(io_err)?,
        "traces": a.out,
    }))
}

fn cmd_gain(a: &GainArgs) -> Result<Value> {
    let mode = parse_mode(&a.mode, a.shared)?;
    let records = load_records(&a.records, a.state_dim, a.input_dim)?;
    let weights = a.weights.clone().unwrap_or_else(|| ones(records.len()));
    let res = synthesize_gain(&records, mode, &weights, 1e-9)?;
    let artifact = GainArtifact::from_result(&res, mode, &weights);
    println!(
        "gain synthesized: estimated closed-loop radius {:.4}, excitation ok {}",
        res.radius_estimate, res.excitation_ok
    );
    let value = serde_json::to_value(&artifact).map_err(io_err)?;
    write_json(&a.out, &value)?;
    Ok(value)
}

fn cmd_mpc(a: &MpcArgs) -> Result<Value> {
    let sys = builtin_system(&a.system)?;
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let mode = parse_mode(&a.mode, a.shared)?;
    let records = load_records(&a.records, n, m)?;
    let weights = a.weights.clone().unwrap_or_else(|| ones(records.len()));
    let basis = BehavioralBasis::from_records(&records, a.horizon + n, mode, &weights)?;
    if a.x0.len() != n {
        return Err(Error::InvalidInput(format!("--x0 must have {n} entries")));
    }
    let mut problem = MpcProblem::new(
        a.horizon,
        DMatrix::identity(n, n) * a.q_scale,
        DMatrix::identity(m, m) * a.r_scale,
        DVector::zeros(n),
        basis,
        vec![(DVector::zeros(m), DVector::zeros(n)); n],
    )?;
    if let Some(b) = a.bound {
        problem.input_bounds =
            Some((DVector::from_element(m, -b), DVector::from_element(m, b)));
    }
    let x0 = DVector::from_vec(a.x0.clone());
    let warmup = Trajectory::new(DMatrix::zeros(m, n), "warmup")?;
    let rec = cpekit::control::mpc_run(&sys, &x0, &warmup, &problem, a.steps)?;
    save_io_record_csv(&rec, &a.out)?;
    let final_norm = rec.state().sample(rec.steps()).norm();
    println!(
        "MPC: {} steps, |x| {:.3e} -> {:.3e} ({})",
        a.steps,
        x0.norm(),
        final_norm,
        a.out.display()
    );
    Ok(json!({
        "mode": mode.tag(),
        "horizon": a.horizon,
        "steps": a.steps,
        "initial_norm": x0.norm(),
        "final_norm": final_norm,
        "record": a.out,
    }))
}

fn cmd_bench(seed: u64, a: &BenchArgs) -> Result<Value> {
    let model = FlopModel::from_lengths(a.dim, a.order, &a.lengths)?;
    let costs = flop_costs(&model);
    // A minimal per-trial PE check uses mL columns.
    let k_th = crossover_threshold(model.total_columns(), a.dim * a.order)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = a.dim * a.order;
    let total = model.total_columns();
    let blocks: Vec<DMatrix<f64>> = model
        .column_counts
        .iter()
        .map(|&c| DMatrix::from_fn(rows, c, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let mosaic = {
        let mut m = DMatrix::zeros(rows, total);
        let mut at = 0;
        for b in &blocks {
            m.view_mut((0, at), (rows, b.ncols())).copy_from(b);
            at += b.ncols();
        }
        m
    };
    let min_cols = blocks.iter().map(|b| b.ncols()).min().unwrap();
    let cumulative = blocks
        .iter()
        .fold(DMatrix::zeros(rows, min_cols), |acc, b| acc + b.columns(0, min_cols));
    let hybrid = {
        let mut m = DMatrix::zeros(rows, total - min_cols);
        m.view_mut((0, 0), (rows, min_cols))
            .copy_from(&(blocks[0].columns(0, min_cols) + blocks[1].columns(0, min_cols)));
        let mut at = min_cols;
        for b in &blocks[2..] {
            m.view_mut((0, at), (rows, b.ncols())).copy_from(b);
            at += b.ncols();
        }
        m
    };
    let scenarios = vec![
        BenchScenario { mode: "cumulative".into(), matrix: cumulative },
        BenchScenario { mode: "hybrid".into(), matrix: hybrid },
        BenchScenario { mode: "mosaic".into(), matrix: mosaic },
    ];
    let table = timed_rank_bench(&scenarios, 7)?;
    save_bench_csv(&table, &a.out)?;
    println!(
        "flop model: repeated {} vs composed {}; K_th = {k_th}; timing rows {}",
        costs.pe_repeated,
        costs.mcpe,
        table.rows.len()
    );
    Ok(json!({
        "flop": serde_json::to_value(&costs).map_err(io_err)?,
        "columns": model.column_counts,
        "total_columns": model.total_columns(),
        "k_threshold": k_th,
        "timings": serde_json::to_value(&table).map_err(io_err)?,
        "csv": a.out,
    }))
}

fn reactor_truth(sys: &LtiSystem) -> DMatrix<f64> {
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let mut g = DMatrix::zeros(n, n + m);
    g.view_mut((0, 0), (n, n)).copy_from(sys.a());
    g.view_mut((0, n), (n, m)).copy_from(sys.b());
    g
}

fn reactor_bundle(mode: CompositionMode, seed: u64) -> Result<TrajectoryBundle> {
    let (member_count, lengths) = match mode {
        CompositionMode::Mosaic => (5, vec![9, 10, 11, 12, 13]),
        CompositionMode::Cumulative => (2, vec![14]),
        CompositionMode::Hybrid { .. } => (4, vec![18, 10, 12]),
        CompositionMode::Single => return Err(Error::Unsupported("single-mode design".into())),
    };
    let req = DesignRequest {
        dim_m: 2,
        order_l: 5,
        member_count,
        mode,
        lengths,
        weights: ones(member_count),
        rng_seed: seed,
    };
    Ok(design_signals(&req)?.0)
}

fn repro_ls(seed: u64, jobs: usize, noise_max: f64, seeds: usize, out: &Path) -> Result<Value> {
    let sys = builtin_system("batch_reactor")?;
    let truth = reactor_truth(&sys);
    let sigmas: Vec<f64> = (0..6).map(|i| noise_max * i as f64 / 5.0).collect();
    let modes = [
        ("mosaic", CompositionMode::Mosaic),
        ("cumulative", CompositionMode::Cumulative),
        ("hybrid", CompositionMode::Hybrid { shared: 2 }),
    ];
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); modes.len()];
    for (mi, (_, mode)) in modes.iter().enumerate() {
        let bundle = reactor_bundle(*mode, seed)?;
        for &sigma in &sigmas {
            let worker = |range: std::ops::Range<usize>| -> Result<f64> {
                let mut total = 0.0;
                for s in range {
                    let records: Vec<IoRecord> = bundle
                        .members()
                        .iter()
                        .enumerate()
                        .map(|(i, u)| {
                            simulate_lti(
                                &sys,
                                &DVector::zeros(4),
                                u,
                                sigma,
                                seed + (s as u64) * 131 + i as u64,
                            )
                        })
                        .collect::<Result<_>>()?;
                    let res = ls_identify(&records, *mode, bundle.weights(), 1e-9)?;
                    total += (&res.g_hat - &truth).norm();
                }
                Ok(total)
            };
            let total = if jobs > 1 {
                let chunk = seeds.div_ceil(jobs);
                std::thread::scope(|scope| {
                    let handles: Vec<_> = (0..jobs)
                        .map(|j| {
                            let lo = (j * chunk).min(seeds);
                            let hi = ((j + 1) * chunk).min(seeds);
                            scope.spawn(move || worker(lo..hi))
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().unwrap()).sum::<Result<f64>>()
                })?
            } else {
                worker(0..seeds)?
            };
            columns[mi].push(total / seeds as f64);
        }
    }
    let mut csv = String::from("sigma,mean_err_mosaic,mean_err_cumulative,mean_err_hybrid\n");
    for (i, &sigma) in sigmas.iter().enumerate() {
        csv.push_str(&format!(
            "{sigma},{:?},{:?},{:?}\n",
            columns[0][i], columns[1][i], columns[2][i]
        ));
    }
    let csv_path = out.join("ls_error_vs_noise.csv");
    write_atomic(&csv_path, &csv)?;
    println!("wrote {}", csv_path.display());
    Ok(json!({
        "sigmas": sigmas,
        "mean_errors": { "mosaic": columns[0], "cumulative": columns[1], "hybrid": columns[2] },
        "seeds": seeds,
        "csv": csv_path,
    }))
}

fn log_linear_fit(trace: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = trace
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 1e-13)
        .map(|(k, &e)| (k as f64, e.ln()))
        .collect();
    let n = pts.len() as f64;
    let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    (sxy / sxx, (sxy * sxy) / (sxx * syy))
}

fn repro_distributed(seed: u64, out: &Path) -> Result<Value> {
    let sys = builtin_system("voltage_converter")?;
    let freqs = [0.002, 0.0045, 0.009, 0.05, 0.3];
    let inputs = agent_inputs(&sys, 5, 5000, Some(&freqs), seed)?;
    let gains = DistributedGains { alpha: 1.0, xi: 2.0, gamma: 0.25 };
    let topology = GraphTopology::path(5)?;
    let state0 = DistributedState::new(vec![DVector::zeros(6); 5], gains, topology)?;
    let x0s = vec![DVector::zeros(2); 5];
    let traces = run_distributed(&sys, &x0s, &inputs, state0, 0.0, seed)?;
    let csv_path = out.join("distributed_traces.csv");
    std::fs::create_dir_all(out)?;
    save_error_traces_csv(&traces, &csv_path)?;
    let (slope, r2) = log_linear_fit(&traces[0][1..]);
    let finals: Vec<f64> = traces.iter().map(|t| *t.last().unwrap()).collect();
    println!(
        "distributed repro: final errors {:?}, decay slope {slope:.2e}, R2 {r2:.3}",
        finals.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()
    );
    Ok(json!({
        "final_errors": finals,
        "decay_slope": slope,
        "decay_r2": r2,
        "frequencies": freqs,
        "csv": csv_path,
    }))
}

fn repro_gain(seed: u64, out: &Path) -> Result<Value> {
    let sys = builtin_system("batch_reactor")?;
    let mut summary = Vec::new();
    for (label, mode) in [
        ("mosaic", CompositionMode::Mosaic),
        ("cumulative", CompositionMode::Cumulative),
        ("hybrid", CompositionMode::Hybrid { shared: 2 }),
    ] {
        let bundle = reactor_bundle(mode, seed)?;
        let records: Vec<IoRecord> = bundle
            .members()
            .iter()
            .map(|u| simulate_lti(&sys, &DVector::zeros(4), u, 0.0, 0))
            .collect::<Result<_>>()?;
        let res = synthesize_gain(&records, mode, bundle.weights(), 1e-9)?;
        let artifact = GainArtifact::from_result(&res, mode, bundle.weights());
        let path = out.join(format!("gain_{label}.json"));
        write_json(&path, &serde_json::to_value(&artifact).map_err(io_err)?)?;
        println!("{label}: closed-loop radius {:.4} -> {}", res.radius_estimate, path.display());
        summary.push(json!({ "mode": label, "radius": res.radius_estimate, "file": path }));
    }
    Ok(json!({ "gains": summary }))
}

fn repro_mpc(seed: u64, out: &Path) -> Result<Value> {
    let sys = builtin_system("batch_reactor")?;
    let (n, m, horizon) = (4usize, 2usize, 5usize);
    let x0 = DVector::from_vec(vec![1.0, -0.8, 0.6, 0.4]);
    let mut rows = Vec::new();
    let mut timing_csv = String::from("mode,rows,cols,median_seconds\n");
    for (label, mode) in [
        ("cumulative", CompositionMode::Cumulative),
        ("hybrid", CompositionMode::Hybrid { shared: 2 }),
        ("mosaic", CompositionMode::Mosaic),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
        let records: Vec<IoRecord> = (0..10)
            .map(|_| {
                let u = Trajectory::new(
                    DMatrix::from_fn(m, 30, |_, _| rng.gen_range(-1.0..1.0)),
                    "u",
                )?;
                simulate_lti(&sys, &DVector::zeros(n), &u, 0.0, 0)
            })
            .collect::<Result<_>>()?;
        let basis = BehavioralBasis::from_records(&records, horizon + n, mode, &ones(10))?;
        let shape = (basis.stacked().nrows(), basis.cols());
        let mut problem = MpcProblem::new(
            horizon,
            DMatrix::identity(n, n) * 3.0,
            DMatrix::identity(m, m) * 1e-2,
            DVector::zeros(n),
            basis,
            vec![(DVector::zeros(m), DVector::zeros(n)); n],
        )?;
        let mut us: Vec<DVector<f64>> = vec![DVector::zeros(m); n];
        let mut xs: Vec<DVector<f64>> = vec![x0.clone()];
        for _ in 0..n {
            let x_next = sys.a() * xs.last().unwrap() + sys.b() * us.last().unwrap();
            xs.push(x_next);
        }
        let mut times = Vec::new();
        for _ in 0..40 {
            let last = us.len();
            problem.history =
                (0..n).map(|t| (us[last - n + t].clone(), xs[last - n + t].clone())).collect();
            let t0 = Instant::now();
            let step = mpc_step(&problem)?;
            times.push(t0.elapsed().as_secs_f64());
            let x_next = sys.a() * xs.last().unwrap() + sys.b() * &step.u_next;
            us.push(step.u_next);
            xs.push(x_next);
        }
        times.sort_by(|a, b| a.total_cmp(b));
        let median = times[times.len() / 2];
        let final_norm = xs.last().unwrap().norm();
        let rec = IoRecord::new(
            Trajectory::from_samples(&us, "u")?,
            Trajectory::from_samples(&xs, "x")?,
        )?;
        std::fs::create_dir_all(out)?;
        let rec_path = out.join(format!("mpc_{label}.csv"));
        save_io_record_csv(&rec, &rec_path)?;
        timing_csv.push_str(&format!("{label},{},{},{:?}\n", shape.0, shape.1, median));
        println!(
            "{label}: final |x| {final_norm:.3e}, median QP {:.2} ms -> {}",
            median * 1e3,
            rec_path.display()
        );
        rows.push(json!({
            "mode": label,
            "final_norm": final_norm,
            "median_qp_seconds": median,
            "record": rec_path,
        }));
    }
    let timing_path = out.join("mpc_timings.csv");
    write_atomic(&timing_path, &timing_csv)?;
    Ok(json!({ "runs": rows, "timings_csv": timing_path }))
}

fn repro_complexity(seed: u64, out: &Path) -> Result<Value> {
    let args = BenchArgs {
        dim: 2,
        order: 5,
        lengths: vec![7, 7, 6, 6, 5],
        out: out.join("complexity.csv"),
    };
    std::fs::create_dir_all(out)?;
    cmd_bench(seed, &args)
}

fn cmd_repro(seed: u64, jobs: usize, a: &ReproArgs) -> Result<Value> {
    std::fs::create_dir_all(&a.out)?;
    match a.script.as_str() {
        "ls-batch-reactor" => repro_ls(seed, jobs.max(1), a.noise, a.seeds, &a.out),
        "distributed-voltage" => repro_distributed(seed, &a.out),
        "gain-batch-reactor" => repro_gain(seed, &a.out),
        "mpc-batch-reactor" => repro_mpc(seed, &a.out),
        "complexity" => repro_complexity(seed, &a.out),
        other => Err(Error::InvalidInput(format!(
            "unknown repro script '{other}' (ls-batch-reactor, distributed-voltage, \
             gain-batch-reactor, mpc-batch-reactor, complexity)"
        ))),
    }
}

/// Result JSON destination for each subcommand.
fn result_path(cmd: &Command) -> PathBuf {
    let sibling = |p: &Path, name: &str| -> PathBuf {
        match p.extension() {
            Some(_) => p.with_file_name(format!(
                "{}_result.json",
                p.file_stem().unwrap_or_default().to_string_lossy()
            )),
            None => p.join(name),
        }
    };
    match cmd {
        Command::Design(a) => sibling(&a.out, "result.json"),
        Command::Check(a) => sibling(&a.out, "result.json"),
        Command::Simulate(a) => sibling(&a.out, "result.json"),
        Command::Identify(IdentifyCmd::Ls(a)) => sibling(&a.out, "result.json"),
        Command::Identify(IdentifyCmd::Adaptive(a)) => sibling(&a.out, "result.json"),
        Command::Identify(IdentifyCmd::Distributed(a)) => sibling(&a.out, "result.json"),
        Command::Gain(a) => sibling(&a.out, "result.json"),
        Command::Mpc(a) => sibling(&a.out, "result.json"),
        Command::Bench(a) => sibling(&a.out, "result.json"),
        Command::Repro(a) => a.out.join("result.json"),
    }
}

fn run(cli: &Cli) -> Result<Value> {
    match &cli.command {
        Command::Design(a) => cmd_design(cli.seed, a),
        Command::Check(a) => cmd_check(cli.seed, a),
        Command::Simulate(a) => cmd_simulate(cli.seed, a),
        Command::Identify(IdentifyCmd::Ls(a)) => cmd_identify_ls(a),
        Command::Identify(IdentifyCmd::Adaptive(a)) => cmd_identify_adaptive(cli.seed, a),
        Command::Identify(IdentifyCmd::Distributed(a)) => cmd_identify_distributed(cli.seed, a),
        Command::Gain(a) => cmd_gain(a),
        Command::Mpc(a) => cmd_mpc(a),
        Command::Bench(a) => cmd_bench(cli.seed, a),
        Command::Repro(a) => cmd_repro(cli.seed, cli.jobs, a),
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_)
        | Error::DimensionMismatch(_)
        | Error::InsufficientLength(_)
        | Error::Parse(_)
        | Error::Io(_) => 2,
        Error::DesignInfeasible(_)
        | Error::Unsupported(_)
        | Error::Infeasible(_)
        | Error::Degenerate(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result_file = result_path(&cli.command);
    match run(&cli) {
        Ok(value) => {
            let wrapped = json!({ "status": "ok", "seed": cli.seed, "result": value });
            if let Err(e) = write_json(&result_file, &wrapped) {
                eprintln!("error: failed to write {}: {e}", result_file.display());
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code_for(&e);
            eprintln!("error: {e}");
            if code == 1 {
                // Diagnostic JSON for computational failures.
                let diag = json!({ "status": "failed", "seed": cli.seed, "error": e.to_string() });
                let _ = write_json(&result_file, &diag);
            }
            ExitCode::from(code)
        }
    }
}
