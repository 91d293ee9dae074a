//! Batch experiment front-end for the scheduling engines.
//!
//! Six subcommands cover the full loop: `generate` seeded instances,
//! `run` an engine producing trace + dual JSON, `verify` the stored dual
//! certificate, `ratio` one CSV row of costs/bounds/ratios, `sweep` a
//! CSV table over seed and parameter lists on a worker pool, and
//! `adversary` the adaptive lower-bound constructions. Every output is
//! reproducible byte-for-byte from the flags and seeds (wall-clock
//! timing is opt-in), and exit codes distinguish success (0),
//! verification violations (1), and usage errors (2).

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rejectsched::energy_min::{
    greedy_assign, smoothness_lambda_estimate, EnergyDuals, Grids, GreedyCommitter, Power,
};
use rejectsched::flow_energy::{simulate_flow_energy, EnergyFlowResult};
use rejectsched::flowtime::{simulate_flow, FlowResult};
use rejectsched::instance::{
    gen_random, parse_instance, serialize_instance, Instance, Model, ScheduleTrace,
};
use rejectsched::oracle::{
    brute_force_energy_opt, brute_force_flow_opt, dual_lower_bound_flow,
    dual_lower_bound_flow_energy, lb1_adversary, lb2_adversary, rejected_ids, OracleError,
};
use rejectsched::verify::{
    verify_energy_config_duals, verify_flow_duals, verify_flow_energy_duals,
};

/// Fixed CSV schema shared by `ratio` and `sweep`.
const CSV_HEADER: [&str; 13] = [
    "instance_id",
    "engine",
    "eps",
    "alpha",
    "n",
    "m",
    "alg_cost",
    "dual_lb",
    "opt",
    "ratio_vs_opt",
    "ratio_vs_duallb",
    "rejected_frac",
    "runtime_ms",
];

#[derive(Parser)]
#[command(
    name = "rejectsched",
    version,
    about = "Online scheduling with rejection: generate, run, verify, ratio, sweep, adversary"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded random instance as JSON.
    Generate(GenerateArgs),
    /// Run an engine on an instance file, writing trace + duals JSON.
    Run(RunArgs),
    /// Check the dual certificate stored in a run's output file.
    Verify(VerifyArgs),
    /// Emit one CSV row of costs, lower bounds, and ratios.
    Ratio(RatioArgs),
    /// Emit a CSV table over seeds and parameter lists (worker pool).
    Sweep(SweepArgs),
    /// Drive an adaptive lower-bound adversary and write its transcript.
    Adversary(AdversaryArgs),
}

/// Engine selector; also fixes the instance model it accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Engine {
    /// Total flow time with count-budgeted rejection.
    Flow,
    /// Weighted flow time plus energy with speed scaling.
    #[value(name = "flow_energy")]
    FlowEnergy,
    /// Deadline-constrained energy minimization on speed/time grids.
    Energy,
}

impl Engine {
    fn as_str(self) -> &'static str {
        match self {
            Engine::Flow => "flow",
            Engine::FlowEnergy => "flow_energy",
            Engine::Energy => "energy",
        }
    }

    fn model(self) -> Model {
        match self {
            Engine::Flow => Model::Flow,
            Engine::FlowEnergy => Model::FlowEnergy,
            Engine::Energy => Model::EnergyDeadline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AdversaryKind {
    Lb1,
    Lb2,
}

#[derive(Args)]
struct GenerateArgs {
    /// Engine family the instance targets (fixes the model).
    #[arg(long, value_enum)]
    engine: Engine,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of jobs.
    #[arg(long)]
    n: usize,
    /// Number of machines.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Processing-volume range (uniform per job and machine).
    #[arg(long, default_value_t = 0.5)]
    p_min: f64,
    #[arg(long, default_value_t = 3.0)]
    p_max: f64,
    /// Weight range (the flow model forces weights to 1).
    #[arg(long, default_value_t = 0.5)]
    w_min: f64,
    #[arg(long, default_value_t = 2.0)]
    w_max: f64,
    /// Releases are uniform on [0, horizon].
    #[arg(long, default_value_t = 8.0)]
    horizon: f64,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Instance JSON file.
    instance: PathBuf,
    #[arg(long, value_enum)]
    engine: Engine,
    /// Rejection budget ε (required by flow and flow_energy).
    #[arg(long)]
    eps: Option<f64>,
    /// Speed/time grid config JSON (energy engine).
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Smoothness scale λ (energy; estimated when omitted).
    #[arg(long)]
    lambda: Option<f64>,
    /// Smoothness shift μ (energy; defaults to (α−1)/α).
    #[arg(long)]
    mu: Option<f64>,
    /// Seed for the λ estimator.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Result JSON produced by `run` with the same engine.
    result: PathBuf,
    #[arg(long, value_enum)]
    engine: Engine,
    /// Interior sample points per event interval (flow_energy).
    #[arg(long, default_value_t = 8)]
    grid_points: usize,
    /// Configuration budget: exhaustive below it, sampled at it (energy).
    #[arg(long, default_value_t = 10_000)]
    max_configs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RatioArgs {
    /// Instance JSON file.
    instance: PathBuf,
    #[arg(long, value_enum)]
    engine: Engine,
    #[arg(long)]
    eps: Option<f64>,
    /// Brute-force budget: job cap for flow, strategy-combination cap
    /// for energy. The `opt` column is left empty beyond it.
    #[arg(long)]
    max_brute: Option<usize>,
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Record wall-clock runtime_ms instead of the reproducible 0.
    #[arg(long)]
    measure_runtime: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Engine to sweep (required unless --adversary is given).
    #[arg(long, value_enum)]
    engine: Option<Engine>,
    /// Comma-separated ε list (flow, flow_energy, lb1).
    #[arg(long)]
    eps: Option<String>,
    /// Comma-separated α list (flow_energy, energy, lb2).
    #[arg(long)]
    alpha: Option<String>,
    /// Seeds 0..count, one instance each.
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    /// Jobs per generated instance.
    #[arg(long, default_value_t = 6)]
    n: usize,
    /// Machines per generated instance.
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long)]
    max_brute: Option<usize>,
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Run a lower-bound adversary instead of random instances.
    #[arg(long, value_enum)]
    adversary: Option<AdversaryKind>,
    /// Comma-separated batch lengths for the lb1 adversary.
    #[arg(long = "L")]
    big_l: Option<String>,
    /// Record wall-clock runtime_ms instead of the reproducible 0.
    #[arg(long)]
    measure_runtime: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AdversaryArgs {
    /// Which construction to run.
    #[arg(value_enum)]
    which: AdversaryKind,
    /// Rejection budget ε with integer 1/ε (lb1).
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    /// Long-job length L (lb1).
    #[arg(long = "L", default_value_t = 4.0)]
    big_l: f64,
    /// Power exponent α ≥ 2 (lb2).
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(2..))]
    alpha: u32,
    /// Speed/time grid config for the lb2 engine (horizon stays 3^{α+1}).
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Speed/time grid configuration file: `{"speeds":[...], "time_step":s,
/// "eps_disc":e}`. `eps_disc` is the discretization-loss budget the grid
/// was designed for; it is carried through to outputs as metadata, while
/// alignment itself is enforced exactly by the grid validator.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridConfig {
    speeds: Vec<f64>,
    time_step: f64,
    #[serde(default = "default_eps_disc")]
    eps_disc: f64,
}

fn default_eps_disc() -> f64 {
    0.1
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { speeds: vec![1.0, 2.0], time_step: 0.25, eps_disc: default_eps_disc() }
    }
}

/// Everything `run --engine energy` writes; `verify --engine energy`
/// reads it back whole.
#[derive(Serialize, Deserialize)]
struct EnergyRunFile {
    instance: Instance,
    grids: Grids,
    powers: Vec<Power>,
    trace: ScheduleTrace,
    duals: EnergyDuals,
}

/// One line of the fixed CSV schema; `None` prints as an empty cell.
#[derive(Debug, Clone)]
struct Row {
    instance_id: String,
    engine: &'static str,
    eps: Option<f64>,
    alpha: Option<f64>,
    n: usize,
    m: usize,
    alg_cost: f64,
    dual_lb: Option<f64>,
    opt: Option<f64>,
    ratio_vs_opt: Option<f64>,
    ratio_vs_duallb: Option<f64>,
    rejected_frac: f64,
    runtime_ms: u128,
}

impl Row {
    fn record(&self) -> Vec<String> {
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.instance_id.clone(),
            self.engine.to_string(),
            num(self.eps),
            num(self.alpha),
            self.n.to_string(),
            self.m.to_string(),
            self.alg_cost.to_string(),
            num(self.dual_lb),
            num(self.opt),
            num(self.ratio_vs_opt),
            num(self.ratio_vs_duallb),
            self.rejected_frac.to_string(),
            self.runtime_ms.to_string(),
        ]
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Ratio(a) => cmd_ratio(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Adversary(a) => cmd_adversary(a),
    }
}

// ---- shared plumbing ----

fn read_instance(path: &Path) -> Result<Instance> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_instance(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_grid_config(path: Option<&Path>) -> Result<GridConfig> {
    let Some(path) = path else { return Ok(GridConfig::default()) };
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: GridConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if !(cfg.eps_disc.is_finite() && cfg.eps_disc >= 0.0) {
        bail!("eps_disc must be a non-negative number, got {}", cfg.eps_disc);
    }
    Ok(cfg)
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_out(out, &text)
}

fn csv_table(rows: &[Row]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(CSV_HEADER)?;
    for row in rows {
        writer.write_record(row.record())?;
    }
    let bytes = writer.into_inner().map_err(|e| anyhow!("flushing csv: {e}"))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn require_model(inst: &Instance, engine: Engine) -> Result<()> {
    if inst.model != engine.model() {
        bail!(
            "instance model {:?} does not fit engine {}",
            inst.model,
            engine.as_str()
        );
    }
    Ok(())
}

fn require_eps(eps: Option<f64>, engine: Engine) -> Result<f64> {
    eps.ok_or_else(|| anyhow!("--eps is required for the {} engine", engine.as_str()))
}

fn elapsed_ms(start: Instant, measure: bool) -> u128 {
    if measure {
        start.elapsed().as_millis()
    } else {
        0
    }
}

fn parse_list(text: &str, flag: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("{flag} expects comma-separated numbers, got {s:?}"))
        })
        .collect::<Result<_>>()?;
    if vals.is_empty() {
        bail!("{flag} must list at least one value");
    }
    Ok(vals)
}

/// Dual-infeasibility is a verification failure (exit 1), not a usage
/// error.
fn is_violation(err: &anyhow::Error) -> bool {
    matches!(
        err.downcast_ref::<OracleError>(),
        Some(OracleError::InfeasibleDuals { .. })
    )
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(text) = env::var("REJECTSCHED_THREADS") {
        let threads: usize = text
            .trim()
            .parse()
            .ok()
            .filter(|&k| k > 0)
            .ok_or_else(|| anyhow!("REJECTSCHED_THREADS must be a positive integer, got {text:?}"))?;
        builder = builder.num_threads(threads);
    }
    builder.build().map_err(|e| anyhow!("building worker pool: {e}"))
}

/// Grid, per-machine power functions, and smoothness parameters for the
/// energy engine on one instance.
struct EnergySetup {
    grids: Grids,
    powers: Vec<Power>,
    lambda: f64,
    mu: f64,
}

fn energy_setup(
    inst: &Instance,
    cfg: &GridConfig,
    lambda: Option<f64>,
    mu: Option<f64>,
    seed: u64,
) -> Result<EnergySetup> {
    let alpha = inst
        .alpha
        .ok_or_else(|| anyhow!("energy instance carries no power exponent alpha"))?;
    let grids = Grids::for_instance(cfg.speeds.clone(), cfg.time_step, inst)?;
    let powers = vec![Power::Monomial { alpha }; inst.machines];
    let mu = mu.unwrap_or((alpha - 1.0) / alpha);
    if !(0.0..1.0).contains(&mu) {
        bail!("mu must lie in [0, 1), got {mu}");
    }
    let lambda = match lambda {
        Some(l) if l > 0.0 => l,
        Some(l) => bail!("lambda must be positive, got {l}"),
        None => smoothness_lambda_estimate(&powers[0], 20_000, seed, mu),
    };
    Ok(EnergySetup { grids, powers, lambda, mu })
}

// ---- commands ----

fn cmd_generate(a: GenerateArgs) -> Result<ExitCode> {
    let inst = gen_random(
        a.seed,
        a.n,
        a.m,
        (a.p_min, a.p_max),
        (a.w_min, a.w_max),
        a.horizon,
        a.engine.model(),
    )?;
    write_out(a.out.as_deref(), &serialize_instance(&inst))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let inst = read_instance(&a.instance)?;
    require_model(&inst, a.engine)?;
    match a.engine {
        Engine::Flow => {
            let eps = require_eps(a.eps, a.engine)?;
            let res = simulate_flow(&inst, eps)?;
            write_json(a.out.as_deref(), &res)?;
        }
        Engine::FlowEnergy => {
            let eps = require_eps(a.eps, a.engine)?;
            let res = simulate_flow_energy(&inst, eps)?;
            write_json(a.out.as_deref(), &res)?;
        }
        Engine::Energy => {
            let cfg = read_grid_config(a.grid.as_deref())?;
            let setup = energy_setup(&inst, &cfg, a.lambda, a.mu, a.seed)?;
            let (trace, duals) =
                greedy_assign(&inst, &setup.grids, &setup.powers, setup.lambda, setup.mu)?;
            let file = EnergyRunFile {
                instance: inst,
                grids: setup.grids,
                powers: setup.powers,
                trace,
                duals,
            };
            write_json(a.out.as_deref(), &file)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: VerifyArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&a.result)
        .with_context(|| format!("reading {}", a.result.display()))?;
    let parse_ctx = || format!("parsing {}", a.result.display());
    let report = match a.engine {
        Engine::Flow => {
            let res: FlowResult = serde_json::from_str(&text).with_context(parse_ctx)?;
            verify_flow_duals(&res, res.epsilon)
        }
        Engine::FlowEnergy => {
            let res: EnergyFlowResult = serde_json::from_str(&text).with_context(parse_ctx)?;
            verify_flow_energy_duals(&res, res.epsilon, res.alpha, res.gamma, a.grid_points)
        }
        Engine::Energy => {
            let file: EnergyRunFile = serde_json::from_str(&text).with_context(parse_ctx)?;
            verify_energy_config_duals(
                &file.duals,
                &file.instance,
                &file.grids,
                &file.powers,
                a.max_configs,
            )
        }
    };
    write_json(a.out.as_deref(), &report)?;
    if report.certified() {
        eprintln!("certified: {} checks passed", report.checked_count);
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "violations: {} of {} checks failed",
            report.violations.len(),
            report.checked_count
        );
        Ok(ExitCode::from(1))
    }
}

fn cmd_ratio(a: RatioArgs) -> Result<ExitCode> {
    let inst = read_instance(&a.instance)?;
    require_model(&inst, a.engine)?;
    let id = a
        .instance
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "instance".to_string());
    let built = match a.engine {
        Engine::Flow => flow_row(
            id,
            &inst,
            require_eps(a.eps, a.engine)?,
            a.max_brute.unwrap_or(8),
            a.measure_runtime,
        ),
        Engine::FlowEnergy => {
            flow_energy_row(id, &inst, require_eps(a.eps, a.engine)?, a.measure_runtime)
        }
        Engine::Energy => {
            let cfg = read_grid_config(a.grid.as_deref())?;
            let setup = energy_setup(&inst, &cfg, a.lambda, a.mu, a.seed)?;
            energy_row(id, &inst, &setup, a.max_brute.unwrap_or(10_000_000), a.measure_runtime)
        }
    };
    match built {
        Ok(row) => {
            write_out(a.out.as_deref(), &csv_table(&[row])?)?;
            Ok(ExitCode::SUCCESS)
        }
        Err(err) if is_violation(&err) => {
            eprintln!("error: {err:#}");
            Ok(ExitCode::from(1))
        }
        Err(err) => Err(err),
    }
}

fn flow_row(id: String, inst: &Instance, eps: f64, cap: usize, measure: bool) -> Result<Row> {
    let start = Instant::now();
    let res = simulate_flow(inst, eps)?;
    let dual = dual_lower_bound_flow(&res)?;
    let opt = match brute_force_flow_opt(inst, cap) {
        Ok(v) => Some(v),
        Err(OracleError::TooLarge { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let alg = res.total_flow;
    Ok(Row {
        instance_id: id,
        engine: Engine::Flow.as_str(),
        eps: Some(eps),
        alpha: None,
        n: inst.jobs.len(),
        m: inst.machines,
        alg_cost: alg,
        dual_lb: Some(dual),
        opt,
        ratio_vs_opt: opt.filter(|&o| o > 0.0).map(|o| alg / o),
        ratio_vs_duallb: (dual > 0.0).then(|| alg / dual),
        rejected_frac: res.rejected_fraction,
        runtime_ms: elapsed_ms(start, measure),
    })
}

fn flow_energy_row(id: String, inst: &Instance, eps: f64, measure: bool) -> Result<Row> {
    let start = Instant::now();
    let res = simulate_flow_energy(inst, eps)?;
    let dual = dual_lower_bound_flow_energy(&res)?;
    let alg = res.objective;
    Ok(Row {
        instance_id: id,
        engine: Engine::FlowEnergy.as_str(),
        eps: Some(eps),
        alpha: Some(res.alpha),
        n: inst.jobs.len(),
        m: inst.machines,
        alg_cost: alg,
        dual_lb: Some(dual),
        opt: None,
        ratio_vs_opt: None,
        ratio_vs_duallb: (dual > 0.0).then(|| alg / dual),
        rejected_frac: res.rejected_weight_fraction,
        runtime_ms: elapsed_ms(start, measure),
    })
}

fn energy_row(
    id: String,
    inst: &Instance,
    setup: &EnergySetup,
    cap: usize,
    measure: bool,
) -> Result<Row> {
    let start = Instant::now();
    let (trace, duals) =
        greedy_assign(inst, &setup.grids, &setup.powers, setup.lambda, setup.mu)?;
    let opt = match brute_force_energy_opt(inst, &setup.grids, &setup.powers, cap) {
        Ok(v) => Some(v),
        Err(OracleError::CombinationBudget { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let alg = trace.objective;
    let dual = duals.objective();
    Ok(Row {
        instance_id: id,
        engine: Engine::Energy.as_str(),
        eps: None,
        alpha: inst.alpha,
        n: inst.jobs.len(),
        m: inst.machines,
        alg_cost: alg,
        dual_lb: Some(dual),
        opt,
        ratio_vs_opt: opt.filter(|&o| o > 0.0).map(|o| alg / o),
        ratio_vs_duallb: (dual > 0.0).then(|| alg / dual),
        rejected_frac: 0.0,
        runtime_ms: elapsed_ms(start, measure),
    })
}

/// One unit of sweep work; tasks are enumerated in output order and the
/// pool's results are merged back by that index.
enum SweepTask {
    Flow { seed: u64, eps: f64 },
    FlowEnergy { seed: u64, eps: f64, alpha: f64 },
    Energy { seed: u64, alpha: f64, lambda: f64 },
    Lb1 { eps: f64, l: f64 },
    Lb2 { alpha: u32 },
}

struct SweepCtx {
    n: usize,
    m: usize,
    max_brute: Option<usize>,
    grid_cfg: GridConfig,
    measure: bool,
}

fn cmd_sweep(a: SweepArgs) -> Result<ExitCode> {
    let grid_cfg = read_grid_config(a.grid.as_deref())?;
    let ctx = SweepCtx {
        n: a.n,
        m: a.m,
        max_brute: a.max_brute,
        grid_cfg,
        measure: a.measure_runtime,
    };

    let mut tasks = Vec::new();
    match a.adversary {
        Some(AdversaryKind::Lb1) => {
            let eps_list = parse_list(a.eps.as_deref().unwrap_or("1"), "--eps")?;
            let l_list = parse_list(a.big_l.as_deref().unwrap_or("4,16,64"), "--L")?;
            for &eps in &eps_list {
                check_lb1_eps(eps)?;
                for &l in &l_list {
                    tasks.push(SweepTask::Lb1 { eps, l });
                }
            }
        }
        Some(AdversaryKind::Lb2) => {
            for &alpha in &parse_list(a.alpha.as_deref().unwrap_or("2,3"), "--alpha")? {
                let a_int = alpha.round() as u32;
                if (alpha - a_int as f64).abs() > 1e-9 || a_int < 2 {
                    bail!("lb2 needs integer alpha ≥ 2, got {alpha}");
                }
                tasks.push(SweepTask::Lb2 { alpha: a_int });
            }
        }
        None => {
            let engine = a
                .engine
                .ok_or_else(|| anyhow!("--engine is required unless --adversary is given"))?;
            match engine {
                Engine::Flow => {
                    let eps_list = parse_list(a.eps.as_deref().unwrap_or("1"), "--eps")?;
                    for seed in 0..a.seeds {
                        for &eps in &eps_list {
                            tasks.push(SweepTask::Flow { seed, eps });
                        }
                    }
                }
                Engine::FlowEnergy => {
                    let eps_list = parse_list(a.eps.as_deref().unwrap_or("1"), "--eps")?;
                    let alphas = parse_list(a.alpha.as_deref().unwrap_or("2"), "--alpha")?;
                    for seed in 0..a.seeds {
                        for &eps in &eps_list {
                            for &alpha in &alphas {
                                tasks.push(SweepTask::FlowEnergy { seed, eps, alpha });
                            }
                        }
                    }
                }
                Engine::Energy => {
                    let alphas = parse_list(a.alpha.as_deref().unwrap_or("2"), "--alpha")?;
                    // One λ estimate per exponent, shared by every seed.
                    let lambdas: Vec<f64> = alphas
                        .iter()
                        .map(|&alpha| {
                            let mu = (alpha - 1.0) / alpha;
                            smoothness_lambda_estimate(
                                &Power::Monomial { alpha },
                                20_000,
                                42,
                                mu,
                            )
                        })
                        .collect();
                    for seed in 0..a.seeds {
                        for (&alpha, &lambda) in alphas.iter().zip(&lambdas) {
                            tasks.push(SweepTask::Energy { seed, alpha, lambda });
                        }
                    }
                }
            }
        }
    }

    let pool = worker_pool()?;
    let built: Result<Vec<(usize, Row)>> = pool.install(|| {
        tasks
            .par_iter()
            .enumerate()
            .map(|(idx, task)| run_sweep_task(task, &ctx).map(|row| (idx, row)))
            .collect()
    });
    let mut indexed = match built {
        Ok(rows) => rows,
        Err(err) if is_violation(&err) => {
            eprintln!("error: {err:#}");
            return Ok(ExitCode::from(1));
        }
        Err(err) => return Err(err),
    };
    indexed.sort_by_key(|&(idx, _)| idx);
    let rows: Vec<Row> = indexed.into_iter().map(|(_, row)| row).collect();
    write_out(a.out.as_deref(), &csv_table(&rows)?)?;
    Ok(ExitCode::SUCCESS)
}

fn run_sweep_task(task: &SweepTask, ctx: &SweepCtx) -> Result<Row> {
    match *task {
        SweepTask::Flow { seed, eps } => {
            let inst =
                gen_random(seed, ctx.n, ctx.m, (0.5, 3.0), (1.0, 1.0), 8.0, Model::Flow)?;
            flow_row(
                format!("{seed:06}"),
                &inst,
                eps,
                ctx.max_brute.unwrap_or(8),
                ctx.measure,
            )
        }
        SweepTask::FlowEnergy { seed, eps, alpha } => {
            let mut inst = gen_random(
                seed,
                ctx.n,
                ctx.m,
                (0.5, 3.0),
                (0.5, 2.0),
                8.0,
                Model::FlowEnergy,
            )?;
            inst.alpha = Some(alpha);
            flow_energy_row(format!("{seed:06}"), &inst, eps, ctx.measure)
        }
        SweepTask::Energy { seed, alpha, lambda } => {
            let mut inst = gen_random(
                seed,
                ctx.n,
                ctx.m,
                (0.5, 3.0),
                (0.5, 2.0),
                8.0,
                Model::EnergyDeadline,
            )?;
            inst.alpha = Some(alpha);
            let setup = EnergySetup {
                grids: Grids::for_instance(
                    ctx.grid_cfg.speeds.clone(),
                    ctx.grid_cfg.time_step,
                    &inst,
                )?,
                powers: vec![Power::Monomial { alpha }; inst.machines],
                lambda,
                mu: (alpha - 1.0) / alpha,
            };
            energy_row(
                format!("{seed:06}"),
                &inst,
                &setup,
                ctx.max_brute.unwrap_or(10_000_000),
                ctx.measure,
            )
        }
        SweepTask::Lb1 { eps, l } => {
            let start = Instant::now();
            let t = lb1_adversary(eps, l, |inst| simulate_flow(inst, eps))?;
            let n = t.jobs.len();
            Ok(Row {
                instance_id: format!("lb1-L{:04}", l.round() as u64),
                engine: Engine::Flow.as_str(),
                eps: Some(eps),
                alpha: None,
                n,
                m: 1,
                alg_cost: t.algorithm_cost,
                dual_lb: None,
                opt: Some(t.adversary_cost),
                ratio_vs_opt: Some(t.ratio),
                ratio_vs_duallb: None,
                rejected_frac: rejected_ids(&t).len() as f64 / n as f64,
                runtime_ms: elapsed_ms(start, ctx.measure),
            })
        }
        SweepTask::Lb2 { alpha } => {
            let start = Instant::now();
            let mut engine = lb2_committer(alpha, &ctx.grid_cfg)?;
            let t = lb2_adversary(alpha, &mut engine)?;
            Ok(Row {
                instance_id: format!("lb2-a{alpha}"),
                engine: Engine::Energy.as_str(),
                eps: None,
                alpha: Some(alpha as f64),
                n: t.jobs.len(),
                m: 1,
                alg_cost: t.algorithm_cost,
                dual_lb: None,
                opt: Some(t.adversary_cost),
                ratio_vs_opt: Some(t.ratio),
                ratio_vs_duallb: None,
                rejected_frac: 0.0,
                runtime_ms: elapsed_ms(start, ctx.measure),
            })
        }
    }
}

fn check_lb1_eps(eps: f64) -> Result<()> {
    let k = 1.0 / eps;
    if !(eps > 0.0 && (k - k.round()).abs() <= 1e-9 && k.round() >= 1.0) {
        bail!("lb1 needs 1/eps to be a positive integer, got eps = {eps}");
    }
    Ok(())
}

/// Greedy energy engine on the lb2 window geometry: the time step keeps
/// every chained volume `(d−r)/3` on the grid and the horizon covers the
/// outermost deadline `3^{α+1}`.
fn lb2_committer(alpha: u32, cfg: &GridConfig) -> Result<GreedyCommitter> {
    let step = 3f64.powi(-(alpha as i32 - 1));
    let horizon = 3f64.powi(alpha as i32 + 1);
    let grids = Grids::new(cfg.speeds.clone(), step, horizon)?;
    Ok(GreedyCommitter::new(1, grids, vec![Power::Monomial { alpha: alpha as f64 }])?)
}

fn cmd_adversary(a: AdversaryArgs) -> Result<ExitCode> {
    let transcript = match a.which {
        AdversaryKind::Lb1 => {
            check_lb1_eps(a.eps)?;
            if !(a.big_l >= 1.0 && a.big_l.is_finite()) {
                bail!("lb1 needs L ≥ 1, got {}", a.big_l);
            }
            lb1_adversary(a.eps, a.big_l, |inst| simulate_flow(inst, a.eps))?
        }
        AdversaryKind::Lb2 => {
            let cfg = read_grid_config(a.grid.as_deref())?;
            let mut engine = lb2_committer(a.alpha, &cfg)?;
            lb2_adversary(a.alpha, &mut engine)?
        }
    };
    write_json(a.out.as_deref(), &transcript)?;
    Ok(ExitCode::SUCCESS)
}
