use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use acttail::allocation::{allocate_alphas, AllocationConfig, AllocationPlan, ProjDims};
use acttail::harness::{self, StackSpec, StackView};
use acttail::sparsify::{timed_project, write_timing_csv};
use acttail::spectral::{self, SpectrumLine, DEFAULT_K_FRACTION};
use acttail::tensor_store::{encode_f64_tensors, encode_matrices, load_tensor_file_with_report, TensorRef};
use acttail::theory::{self, CheckName, SuiteOptions};
use acttail::{synth_powerlaw_matrix, ProjKey, ProjKind};

#[derive(Parser, Debug)]
#[command(name = "acttail", version, about = "Heavy-tail spectral analysis and TopK sparsity allocation")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to ACTTAIL_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for outputs whose path is not given explicitly.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// JSON file of defaults, keyed by flag name.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    log_level: Option<log::LevelFilter>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit Hill exponents to every 2-D tensor of a weights file.
    Analyze(AnalyzeArgs),
    /// Turn a spectra file into a sparsity plan.
    Allocate(AllocateArgs),
    /// Compare dense, uniform and planned sparsity on a layer stack.
    SparsifyEval(EvalArgs),
    /// Run numerical checks of the scaling laws.
    VerifyTheory(TheoryArgs),
    /// Write a synthetic layer stack.
    Synth(SynthArgs),
    /// Sparsity x seed grid on a synthetic stack.
    Sweep(SweepArgs),
    /// Per-projection alpha and sparsity table.
    Report(ReportArgs),
    /// Time the masked matvec against the dense one.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    weights: PathBuf,
    #[arg(long)]
    k_fraction: Option<f64>,
    /// Also write the eigenvalues to a tensor-format sidecar.
    #[arg(long)]
    keep_spectra: bool,
    #[arg(long)]
    spectra_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct AllocateArgs {
    spectra: PathBuf,
    #[arg(long)]
    global_sparsity: Option<f64>,
    #[arg(long)]
    s1: Option<f64>,
    #[arg(long)]
    s2: Option<f64>,
    #[arg(long)]
    clamp: Option<f64>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    weights: PathBuf,
    plan: PathBuf,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    #[arg(long, value_delimiter = ',')]
    checks: Vec<CheckName>,
    #[arg(long)]
    trials: Option<usize>,
    /// Exponent grid for the karamata, weak-lp and k-rule checks.
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct StackArgs {
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    alpha_attn: Option<f64>,
    #[arg(long)]
    alpha_mlp: Option<f64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[arg(long, value_delimiter = ',')]
    s_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    spectra: PathBuf,
    plan: PathBuf,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    d_out: Option<usize>,
    #[arg(long)]
    d_in: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    k_list: Vec<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug)]
struct CliError(String);

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn fail<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Ok,
    Partial,
    TheoryFailed,
}

/// Config-file values, keyed by flag name with dashes.
#[derive(Debug, Default)]
struct Config(Map<String, Value>);

impl Config {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
        match serde_json::from_str::<Value>(&text)? {
            Value::Object(map) => Ok(Self(map.into_iter().map(|(k, v)| (k.replace('_', "-"), v)).collect())),
            _ => fail(format!("{}: config must be a JSON object", path.display())),
        }
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> CliResult<Option<T>> {
        match self.0.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| CliError(format!("config key `{key}`: {e}"))),
        }
    }

    /// Flag value if given, else the config value.
    fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    /// List flag if non-empty, else the config value as an array or a
    /// comma-separated string.
    fn pick_list(&self, flag: Vec<String>, key: &str) -> CliResult<Vec<String>> {
        if !flag.is_empty() {
            return Ok(flag);
        }
        Ok(match self.0.get(key) {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::String(s)) => s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect(),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect(),
            Some(other) => vec![other.to_string()],
        })
    }
}

fn parse_list<T: std::str::FromStr>(items: Vec<String>, key: &str) -> CliResult<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    items
        .iter()
        .map(|s| s.parse::<T>().map_err(|e| CliError(format!("--{key} `{s}`: {e}"))))
        .collect()
}

fn strings<T: ToString>(xs: &[T]) -> Vec<String> {
    xs.iter().map(ToString::to_string).collect()
}

/// Where a subcommand's primary output goes.
#[derive(Debug, Clone)]
enum Sink {
    Stdout,
    File(PathBuf),
}

impl Sink {
    fn resolve(out: Option<String>, cfg: &Config, out_dir: &Path, default_name: &str) -> CliResult<Self> {
        Ok(match cfg.pick(out, "out")? {
            Some(s) if s == "-" => Sink::Stdout,
            Some(s) => Sink::File(PathBuf::from(s)),
            None => Sink::File(out_dir.join(default_name)),
        })
    }

    fn write(&self, bytes: &[u8]) -> CliResult<()> {
        match self {
            Sink::Stdout => {
                let mut out = io::stdout().lock();
                out.write_all(bytes)?;
                out.flush()?;
            }
            Sink::File(path) => write_file(path, bytes)?,
        }
        Ok(())
    }

    /// Companion file next to the primary output; none for stdout.
    fn sibling(&self, extension: &str) -> Option<PathBuf> {
        match self {
            Sink::Stdout => None,
            Sink::File(path) => Some(path.with_extension(extension)),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

struct Ctx {
    cfg: Config,
    seed: u64,
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(2),
        Ok(Status::TheoryFailed) => ExitCode::from(3),
        Err(CliError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult<Status> {
    let cfg = Config::load(cli.config.as_deref())?;
    let level = match cfg.pick(cli.log_level.map(|l| l.to_string()), "log-level")? {
        Some(s) => s.parse::<log::LevelFilter>().map_err(|_| CliError(format!("bad log level `{s}`")))?,
        None => log::LevelFilter::Warn,
    };
    env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).init();

    let threads = match cfg.pick(cli.threads, "threads")? {
        Some(n) => Some(n),
        None => match std::env::var("ACTTAIL_THREADS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| CliError(format!("ACTTAIL_THREADS `{v}` is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }

    let ctx = Ctx {
        seed: cfg.pick(cli.seed, "seed")?.unwrap_or(0),
        out_dir: cfg.pick(cli.out_dir, "out-dir")?.unwrap_or_else(|| PathBuf::from(".")),
        cfg,
    };
    match cli.command {
        Command::Analyze(a) => cmd_analyze(&ctx, a),
        Command::Allocate(a) => cmd_allocate(&ctx, a),
        Command::SparsifyEval(a) => cmd_sparsify_eval(&ctx, a),
        Command::VerifyTheory(a) => cmd_verify_theory(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
        Command::Bench(a) => cmd_bench(&ctx, a),
    }
}

fn cmd_analyze(ctx: &Ctx, a: AnalyzeArgs) -> CliResult<Status> {
    let k_fraction = ctx.cfg.pick(a.k_fraction, "k-fraction")?.unwrap_or(DEFAULT_K_FRACTION);
    if !(k_fraction > 0.0 && k_fraction < 1.0) {
        return fail(format!("--k-fraction must lie in (0, 1), got {k_fraction}"));
    }
    let keep = a.keep_spectra || ctx.cfg.get::<bool>("keep-spectra")?.unwrap_or(false);
    let sink = Sink::resolve(a.out, &ctx.cfg, &ctx.out_dir, "spectra.jsonl")?;

    let loaded = load_tensor_file_with_report(&a.weights).map_err(|e| CliError(format!("{}: {e}", a.weights.display())))?;
    if loaded.matrices.is_empty() {
        log::warn!("{}: no 2-D tensors", a.weights.display());
    }
    let outcomes = spectral::analyze_all(&loaded.matrices, k_fraction)?;
    let mut buf = Vec::new();
    spectral::write_jsonl(&mut buf, &outcomes)?;
    sink.write(&buf)?;

    if keep {
        let path = match ctx.cfg.pick(a.spectra_out, "spectra-out")? {
            Some(p) => p,
            None => sink.sibling("eig.safetensors").unwrap_or_else(|| ctx.out_dir.join("spectra.eig.safetensors")),
        };
        let refs: Vec<TensorRef<'_>> = outcomes
            .iter()
            .filter_map(|o| o.as_ref().ok())
            .map(|r| TensorRef { name: &r.name, shape: vec![r.eigenvalues.len()], values: &r.eigenvalues })
            .collect();
        write_file(&path, &encode_f64_tensors(&refs)?)?;
    }

    let failures: Vec<_> = outcomes.iter().filter_map(|o| o.as_ref().err()).collect();
    for f in &failures {
        log::warn!("`{}`: {}", f.name, f.reason);
    }
    Ok(if failures.is_empty() { Status::Ok } else { Status::Partial })
}

fn read_spectra(path: &Path) -> CliResult<Vec<SpectrumLine>> {
    let file = fs::File::open(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    Ok(spectral::read_jsonl(BufReader::new(file)).map_err(|e| CliError(format!("{}: {e}", path.display())))?)
}

/// Fitted `(key, α)` pairs and dimensions from a spectra file. Failed fits
/// and tensors outside the seven block projections are dropped with a
/// warning.
fn usable_spectra(lines: &[SpectrumLine]) -> (Vec<(ProjKey, f64)>, std::collections::BTreeMap<ProjKey, ProjDims>) {
    let mut alphas = Vec::new();
    let mut dims = std::collections::BTreeMap::new();
    for line in lines {
        if line.proj == ProjKind::Other {
            log::warn!("skipping `{}`: not a block projection", line.name);
            continue;
        }
        let Some(alpha) = line.alpha.filter(|_| !line.is_failure()) else {
            log::warn!("skipping `{}`: no fitted exponent", line.name);
            continue;
        };
        alphas.push((line.key(), alpha));
        dims.insert(line.key(), ProjDims { d_in: line.n, params: line.n * line.d_out });
    }
    (alphas, dims)
}

fn cmd_allocate(ctx: &Ctx, a: AllocateArgs) -> CliResult<Status> {
    let Some(s) = ctx.cfg.pick(a.global_sparsity, "global-sparsity")? else {
        return fail("--global-sparsity is required");
    };
    if !(0.0..1.0).contains(&s) {
        return fail(format!("--global-sparsity must lie in [0, 1), got {s}"));
    }
    let defaults = AllocationConfig::with_target(s);
    let cfg = AllocationConfig {
        global_sparsity: s,
        s1: ctx.cfg.pick(a.s1, "s1")?.unwrap_or(defaults.s1),
        s2: ctx.cfg.pick(a.s2, "s2")?.unwrap_or(defaults.s2),
        clamp_max: ctx.cfg.pick(a.clamp, "clamp")?.unwrap_or(defaults.clamp_max),
    };
    let sink = Sink::resolve(a.out, &ctx.cfg, &ctx.out_dir, "plan.json")?;
    let (alphas, dims) = usable_spectra(&read_spectra(&a.spectra)?);
    let plan = allocate_alphas(&alphas, &dims, &cfg)?;
    let mut buf = Vec::new();
    plan.write_json(&mut buf)?;
    sink.write(&buf)?;
    eprintln!("eta = {}  achieved_S = {}", plan.eta, plan.achieved_s);
    Ok(Status::Ok)
}

fn read_plan(path: &Path) -> CliResult<AllocationPlan> {
    let text = fs::read_to_string(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    Ok(AllocationPlan::from_json(&text).map_err(|e| CliError(format!("{}: {e}", path.display())))?)
}

fn cmd_sparsify_eval(ctx: &Ctx, a: EvalArgs) -> CliResult<Status> {
    let batch = ctx.cfg.pick(a.batch, "batch")?.unwrap_or(harness::DEFAULT_BATCH);
    if batch == 0 {
        return fail("--batch must be at least 1");
    }
    let sink = Sink::resolve(a.out, &ctx.cfg, &ctx.out_dir, "eval.csv")?;
    let stack = load_tensor_file_with_report(&a.weights)
        .map_err(|e| CliError(format!("{}: {e}", a.weights.display())))?
        .matrices;
    let plan = read_plan(&a.plan)?;

    let weight_keys: BTreeSet<ProjKey> = stack.iter().map(|w| w.key()).collect();
    let plan_keys: BTreeSet<ProjKey> = plan.entries.iter().map(|e| e.key()).collect();
    if weight_keys != plan_keys {
        let missing = strings(&weight_keys.difference(&plan_keys).collect::<Vec<_>>());
        let extra = strings(&plan_keys.difference(&weight_keys).collect::<Vec<_>>());
        return fail(format!(
            "plan and weights disagree; missing from plan: [{}]; not in weights: [{}]",
            missing.join(", "),
            extra.join(", ")
        ));
    }
    let view = StackView::new(&stack)?;
    let inputs = harness::gaussian_inputs(batch, view.d_model(), ctx.seed);
    let rows = harness::evaluate_plan(&stack, &plan, &inputs, ctx.seed)?;
    emit_results(&sink, &rows)?;
    Ok(Status::Ok)
}

fn emit_results(sink: &Sink, rows: &[harness::ExperimentResult]) -> CliResult<()> {
    let mut csv = Vec::new();
    harness::write_results_csv(&mut csv, rows)?;
    sink.write(&csv)?;
    if let Some(path) = sink.sibling("json") {
        let mut json = Vec::new();
        harness::write_results_json(&mut json, rows)?;
        write_file(&path, &json)?;
    }
    Ok(())
}

fn cmd_verify_theory(ctx: &Ctx, a: TheoryArgs) -> CliResult<Status> {
    let checks: Vec<CheckName> = if a.checks.is_empty() {
        let from_cfg = ctx.cfg.pick_list(Vec::new(), "checks")?;
        if from_cfg.is_empty() {
            CheckName::ALL.to_vec()
        } else {
            parse_list(from_cfg, "checks")?
        }
    } else {
        a.checks
    };
    let alphas: Vec<f64> = parse_list(ctx.cfg.pick_list(strings(&a.alphas), "alphas")?, "alphas")?;
    let opts = SuiteOptions {
        trials: ctx.cfg.pick(a.trials, "trials")?,
        alphas: (!alphas.is_empty()).then_some(alphas),
        seed: ctx.seed,
    };
    if opts.trials == Some(0) {
        return fail("--trials must be at least 1");
    }
    let sink = Sink::resolve(a.out, &ctx.cfg, &ctx.out_dir, "theory.jsonl")?;
    let reports = theory::run_suite(&checks, &opts)?;
    let mut buf = Vec::new();
    theory::write_jsonl(&mut buf, &reports)?;
    sink.write(&buf)?;
    if let Some(path) = sink.sibling("md") {
        write_file(&path, theory::markdown_summary(&reports).as_bytes())?;
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.pass).collect();
    for r in &failed {
        log::warn!("{} failed: predicted {}, measured {}, parameters {:?}", r.check_name, r.predicted, r.measured, r.parameters);
    }
    Ok(if failed.is_empty() { Status::Ok } else { Status::TheoryFailed })
}

fn stack_spec(ctx: &Ctx, a: &StackArgs) -> CliResult<StackSpec> {
    let layers = ctx.cfg.pick(a.layers, "layers")?.unwrap_or(2);
    let d_model = ctx.cfg.pick(a.d_model, "d-model")?.unwrap_or(64);
    let alpha_attn = ctx.cfg.pick(a.alpha_attn, "alpha-attn")?.unwrap_or(2.5);
    let alpha_mlp = ctx.cfg.pick(a.alpha_mlp, "alpha-mlp")?.unwrap_or(4.0);
    for (flag, v) in [("--alpha-attn", alpha_attn), ("--alpha-mlp", alpha_mlp)] {
        if !(v > 2.0) || !v.is_finite() {
            return fail(format!("{flag} must be > 2, got {v}"));
        }
    }
    let spec = StackSpec::two_tier(layers, d_model, alpha_attn, alpha_mlp, ctx.seed);
    spec.validate()?;
    Ok(spec)
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> CliResult<Status> {
    let spec = stack_spec(ctx, &a.stack)?;
    let sink = Sink::resolve(a.out, &ctx.cfg, &ctx.out_dir, "stack.safetensors")?;
    let stack = harness::build_stack(&spec)?;
    sink.write(&encode_matrices(&stack)?)?;
    Ok(Status::Ok)
}

fn cmd_sweep(ctx: &Ctx, a: SweepArgs) -> CliResult<Status> {
    let spec = stack_spec(ctx, &a.stack)?;
    let mut s_grid: Vec<f64> = parse_list(ctx.cfg.pick_list(strings(&a.s_grid), "s-grid")?, "s-grid")?;
    if s_grid.is_empty() {
        s_grid = vec![0.6, 0.7, 0.8];
    }
    let mut seeds: Vec<u64> = parse_list(ctx.cfg.pick_list(strings(&a.seeds), "seeds")?, "seeds")?;
    if seeds.is_empty() {
        seeds = vec![ctx.seed];
    }
    let batch = ctx.cfg.pick(a.batch, "batch")?.unwrap_or(harness::DEFAULT_BATCH);
    let sink = Sink::resolve(a.out, &ctx.cfg, &ctx.out_dir, "sweep.csv")?;

    let stack = harness::build_stack(&spec)?;
    let outcomes = spectral::analyze_all(&stack, DEFAULT_K_FRACTION)?;
    let alphas = outcomes
        .iter()
        .map(|o| o.as_ref().map(|r| (r.source, r.alpha)).map_err(|f| CliError(format!("`{}`: {}", f.name, f.reason))))
        .collect::<CliResult<Vec<_>>>()?;
    let rows = harness::sweep(&stack, &alphas, &s_grid, &seeds, batch)?;
    for v in harness::monotonicity_violations(&rows) {
        log::warn!("non-monotone degradation: {v}");
    }
    emit_results(&sink, &rows)?;
    Ok(Status::Ok)
}

fn cmd_report(ctx: &Ctx, a: ReportArgs) -> CliResult<Status> {
    let sink = Sink::resolve(a.out, &ctx.cfg, &ctx.out_dir, "alpha_sparsity.tsv")?;
    let (alphas, _) = usable_spectra(&read_spectra(&a.spectra)?);
    let plan = read_plan(&a.plan)?;
    let rows = harness::alpha_sparsity_rows(&alphas, &plan)?;
    let mut buf = Vec::new();
    harness::write_alpha_sparsity_tsv(&mut buf, &rows)?;
    sink.write(&buf)?;
    Ok(Status::Ok)
}

fn cmd_bench(ctx: &Ctx, a: BenchArgs) -> CliResult<Status> {
    let d_out = ctx.cfg.pick(a.d_out, "d-out")?.unwrap_or(2048);
    let d_in = ctx.cfg.pick(a.d_in, "d-in")?.unwrap_or(2048);
    let alpha = ctx.cfg.pick(a.alpha, "alpha")?.unwrap_or(3.0);
    let repeats = ctx.cfg.pick(a.repeats, "repeats")?.unwrap_or(9);
    let mut k_list: Vec<usize> = parse_list(ctx.cfg.pick_list(strings(&a.k_list), "k-list")?, "k-list")?;
    if k_list.is_empty() {
        k_list = [1.0, 0.5, 0.3, 0.2, 0.1].iter().map(|f| ((f * d_in as f64) as usize).max(1)).collect();
    }
    if let Some(k) = k_list.iter().find(|&&k| k > d_in) {
        return fail(format!("--k-list entry {k} exceeds d_in = {d_in}"));
    }
    let sink = Sink::resolve(a.out, &ctx.cfg, &ctx.out_dir, "timing.csv")?;
    let w = synth_powerlaw_matrix(d_out, d_in, alpha, ctx.seed)?;
    let h = harness::gaussian_inputs(1, d_in, ctx.seed).remove(0);
    let rows = timed_project(&w, &h, &k_list, repeats)?;
    let mut buf = Vec::new();
    write_timing_csv(&mut buf, &rows)?;
    sink.write(&buf)?;
    Ok(Status::Ok)
}
