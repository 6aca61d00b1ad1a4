//! `chartbmc`: validate, simulate and bounded-check chart models.
//!
//! Exit codes for `verify`: 0 safe up to the bound, 2 violated, 3 unknown,
//! 1 error. Every other command exits 0 on success and 1 on error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chartbmc::bmc::{self, CheckOptions, Mode, Property, Verdict};
use chartbmc::conformance::{self, ConformanceReport};
use chartbmc::model::{Model, ModelError};
use chartbmc::solver::default_command;
use chartbmc::sos::{self, Stimulus, Trace};
use chartbmc::ssos::SolverFeasibility;
use chartbmc::sts::{build_sts, BuildOptions, StsModel};
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigInt;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "chartbmc", version, about = "Bounded invariant checking for hierarchical state machines")]
struct Cli {
    /// TOML file with defaults for `solver`, `timeout`, `bound`, `mode`, `out`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a model.
    Validate { model: PathBuf },
    /// Run the concrete interpreter.
    Simulate(SimulateArgs),
    /// Build the symbolic transition system and dump it as JSON.
    Sts(StsArgs),
    /// Write a standalone SMT-LIB script.
    Emit(EmitArgs),
    /// Bounded check of an invariant.
    Verify(VerifyArgs),
    /// Cross-check the symbolic engine against the interpreter.
    Conformance(ConformanceArgs),
}

#[derive(Args)]
struct SimulateArgs {
    model: PathBuf,
    /// Comma-separated event names.
    #[arg(long, value_delimiter = ',', conflicts_with = "random")]
    events: Vec<String>,
    /// Number of random traces.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long, default_value_t = 10)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Input values for random traces, `lo..hi` inclusive.
    #[arg(long, default_value = "0..3")]
    input_domain: String,
    #[arg(long, value_enum, default_value_t = TraceFormat::Text)]
    trace_format: TraceFormat,
}

#[derive(Args)]
struct StsArgs {
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    solver: Option<String>,
    /// Keep one derivation per transition in the dump.
    #[arg(long)]
    certificates: bool,
}

#[derive(Args)]
struct PropArgs {
    /// Invariant text, e.g. `0 <= cent and cent <= 99`.
    #[arg(long, conflicts_with = "prop_file")]
    prop: Option<String>,
    #[arg(long)]
    prop_file: Option<PathBuf>,
}

#[derive(Args)]
struct EmitArgs {
    model: PathBuf,
    #[command(flatten)]
    prop: PropArgs,
    #[arg(long)]
    bound: Option<usize>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    solver: Option<String>,
    /// Output file; defaults to `<out>/query.smt2`.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    model: PathBuf,
    #[command(flatten)]
    prop: PropArgs,
    #[arg(long)]
    bound: Option<usize>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    solver: Option<String>,
    /// Seconds for the whole check.
    #[arg(long)]
    timeout: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the standalone script for the same query.
    #[arg(long)]
    emit_smt: bool,
    #[arg(long)]
    certificates: bool,
    #[arg(long, value_enum, default_value_t = TraceFormat::Text)]
    trace_format: TraceFormat,
}

#[derive(Args)]
struct ConformanceArgs {
    model: PathBuf,
    #[arg(long, default_value_t = 5)]
    t1_samples: usize,
    #[arg(long, default_value_t = 1000)]
    t2_traces: usize,
    #[arg(long, default_value_t = 10)]
    t2_len: usize,
    /// `lo..hi` inclusive; skipped when the model is outside the guard.
    #[arg(long)]
    prop1_domain: Option<String>,
    #[arg(long, default_value = "0..3")]
    input_domain: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TraceFormat {
    Text,
    Json,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    solver: Option<String>,
    timeout: Option<u64>,
    bound: Option<usize>,
    mode: Option<Mode>,
    out: Option<PathBuf>,
}

const DEFAULT_BOUND: usize = 20;
const DEFAULT_OUT: &str = "chartbmc-out";

/// Command-line flags, then the config file, then built-in defaults.
struct RunConfig {
    solver: String,
    timeout: Option<Duration>,
    bound: usize,
    mode: Mode,
    out: PathBuf,
}

impl RunConfig {
    fn resolve(
        file: &FileConfig,
        solver: Option<String>,
        timeout: Option<u64>,
        bound: Option<usize>,
        mode: Option<Mode>,
        out: Option<PathBuf>,
    ) -> Result<Self> {
        let timeout = timeout.or(file.timeout);
        if timeout == Some(0) {
            bail!("timeout must be positive");
        }
        Ok(RunConfig {
            solver: solver.or_else(|| file.solver.clone()).unwrap_or_else(default_command),
            timeout: timeout.map(Duration::from_secs),
            bound: bound.or(file.bound).unwrap_or(DEFAULT_BOUND),
            mode: mode.or(file.mode).unwrap_or(Mode::Incremental),
            out: out.or_else(|| file.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into()),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => FileConfig::default(),
    };
    match cli.cmd {
        Cmd::Validate { model } => validate(&model),
        Cmd::Simulate(a) => simulate(a).map(|_| ExitCode::SUCCESS),
        Cmd::Sts(a) => sts(a, &file).map(|_| ExitCode::SUCCESS),
        Cmd::Emit(a) => emit(a, &file).map(|_| ExitCode::SUCCESS),
        Cmd::Verify(a) => verify(a, &file),
        Cmd::Conformance(a) => conformance(a, &file),
    }
}

fn load(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Model::from_json(&text).map_err(|e| match e {
        ModelError::Invalid(ds) => {
            let lines: Vec<String> = ds.iter().map(|d| d.to_string()).collect();
            anyhow::anyhow!("{} is invalid:\n{}", path.display(), lines.join("\n"))
        }
        other => anyhow::anyhow!("{}: {other}", path.display()),
    })
}

fn validate(path: &Path) -> Result<ExitCode> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match Model::from_json(&text) {
        Ok(m) => {
            let s = m.stats();
            println!(
                "ok: {} states ({} leaves), {} junctions, {} transitions, {} events, {} variables",
                s.states,
                s.leaves,
                s.junctions,
                s.transitions,
                m.events.len(),
                m.vars.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(ModelError::Invalid(ds)) => {
            for d in ds {
                println!("{d}");
            }
            Ok(ExitCode::from(1))
        }
        Err(e) => {
            println!("{e}");
            Ok(ExitCode::from(1))
        }
    }
}

fn parse_domain(text: &str) -> Result<Vec<BigInt>> {
    let (lo, hi) = text.split_once("..").with_context(|| format!("expected lo..hi, got {text}"))?;
    let lo: i64 = lo.trim().parse().with_context(|| format!("bad bound {lo}"))?;
    let hi: i64 = hi.trim().parse().with_context(|| format!("bad bound {hi}"))?;
    if lo > hi {
        bail!("empty domain {text}");
    }
    Ok((lo..=hi).map(BigInt::from).collect())
}

fn print_trace(m: &Model, t: &Trace, format: TraceFormat) {
    match format {
        TraceFormat::Text => print!("{}", t.dump(m)),
        TraceFormat::Json => {
            let steps: Vec<serde_json::Value> = t
                .configs
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let data: serde_json::Map<String, serde_json::Value> = m
                        .vars
                        .iter()
                        .zip(&c.env.0)
                        .map(|(v, x)| (v.name.clone(), serde_json::Value::String(x.to_string())))
                        .collect();
                    serde_json::json!({
                        "step": i,
                        "event": (i > 0).then(|| m.events[t.stimuli[i - 1].event.0].clone()),
                        "state": m.point_paths(&c.control),
                        "data": data,
                    })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&steps).expect("json"));
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let m = load(&a.model)?;
    if let Some(n) = a.random {
        use rand::SeedableRng;
        let domain = parse_domain(&a.input_domain)?;
        let mut rng = rand::rngs::StdRng::seed_from_u64(a.seed);
        for i in 0..n {
            if n > 1 {
                println!("# trace {i}");
            }
            let t = sos::random_trace(&m, &mut rng, a.len, &domain)?;
            print_trace(&m, &t, a.trace_format);
        }
        return Ok(());
    }
    let stimuli = a
        .events
        .iter()
        .map(|e| m.event(e.trim()).map(Stimulus::event).with_context(|| format!("unknown event {e}")))
        .collect::<Result<Vec<_>>>()?;
    let configs = sos::run(&m, &stimuli)?;
    print_trace(&m, &Trace { configs, stimuli }, a.trace_format);
    Ok(())
}

fn build(m: &Model, solver: &str, certificates: bool) -> Result<StsModel> {
    let mut feas = SolverFeasibility::open(solver, m);
    let sts = build_sts(m, &mut feas, BuildOptions { certificates, ..BuildOptions::default() })?;
    for d in &feas.diagnostics {
        eprintln!("warning: feasibility check degraded: {d}");
    }
    Ok(sts)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sts(a: StsArgs, file: &FileConfig) -> Result<()> {
    let cfg = RunConfig::resolve(file, a.solver, None, None, None, a.out)?;
    let m = load(&a.model)?;
    let sts = build(&m, &cfg.solver, a.certificates)?;
    let path = cfg.out.join("sts.json");
    write(&path, &sts.to_json())?;
    println!("points={} transitions={}", sts.points.len(), sts.transitions.len());
    println!("wrote {}", path.display());
    Ok(())
}

fn property(p: &PropArgs) -> Result<Property> {
    let text = match (&p.prop, &p.prop_file) {
        (Some(t), _) => t.clone(),
        (None, Some(f)) => fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?,
        (None, None) => bail!("one of --prop or --prop-file is required"),
    };
    Property::parse(&text).map_err(|e| anyhow::anyhow!("property: {e}"))
}

fn emit(a: EmitArgs, file: &FileConfig) -> Result<()> {
    let cfg = RunConfig::resolve(file, a.solver, None, a.bound, a.mode, a.out)?;
    let m = load(&a.model)?;
    let prop = property(&a.prop)?;
    let sts = build(&m, &cfg.solver, false)?;
    prop.check_against(&sts)?;
    let path = a.output.unwrap_or_else(|| cfg.out.join("query.smt2"));
    write(&path, &bmc::emit_smtlib(&sts, &prop, cfg.bound, cfg.mode))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn verify(a: VerifyArgs, file: &FileConfig) -> Result<ExitCode> {
    let cfg = RunConfig::resolve(file, a.solver, a.timeout, a.bound, a.mode, a.out)?;
    let m = load(&a.model)?;
    let prop = property(&a.prop)?;
    let sts = build(&m, &cfg.solver, a.certificates)?;
    println!("points={} transitions={}", sts.points.len(), sts.transitions.len());
    if a.emit_smt {
        let path = cfg.out.join("query.smt2");
        write(&path, &bmc::emit_smtlib(&sts, &prop, cfg.bound, cfg.mode))?;
    }
    if a.certificates {
        let mut text = String::new();
        for (i, t) in sts.transitions.iter().enumerate() {
            text.push_str(&format!("# transition {i}\n{}", t.certificate.as_deref().unwrap_or_default()));
        }
        write(&cfg.out.join("certificates.txt"), &text)?;
    }
    let opts = CheckOptions { max_k: cfg.bound, mode: cfg.mode, solver: cfg.solver.clone(), timeout: cfg.timeout };
    let verdict = bmc::check(&m, &sts, &prop, &opts)?;
    println!("{verdict}");
    if let Verdict::Violated(cex) = &verdict {
        let path = cfg.out.join("counterexample.json");
        write(&path, &cex.to_json())?;
        match a.trace_format {
            TraceFormat::Text => print!("{}", cex.dump(&sts)),
            TraceFormat::Json => println!("{}", cex.to_json()),
        }
        println!("wrote {}", path.display());
    }
    println!("{}", verdict.line());
    Ok(ExitCode::from(match verdict {
        Verdict::SafeUpTo(_) => 0,
        Verdict::Violated(_) => 2,
        Verdict::Unknown { .. } => 3,
    }))
}

fn conformance(a: ConformanceArgs, file: &FileConfig) -> Result<ExitCode> {
    let cfg = RunConfig::resolve(file, a.solver, None, None, None, a.out)?;
    let m = load(&a.model)?;
    let sts = build(&m, &cfg.solver, false)?;
    let inputs = parse_domain(&a.input_domain)?;
    let t1 = conformance::theorem1(&m, &sts, a.t1_samples, &cfg.solver)?;
    let t2 = conformance::theorem2(&m, &sts, a.t2_traces, a.t2_len, a.seed, &inputs)?;
    let prop1 = match &a.prop1_domain {
        Some(d) => Some(conformance::prop1_small(&m, &sts, &parse_domain(d)?)?),
        None => None,
    };
    println!(
        "theorem1: {} ({} transitions, {} failures)",
        if t1.passed() { "pass" } else { "FAIL" },
        t1.transitions.len(),
        t1.failures()
    );
    println!(
        "theorem2: {} ({} steps, coverage {:.1}%, {} uncovered, {} ambiguous, {} mismatched)",
        if t2.passed() { "pass" } else { "FAIL" },
        t2.steps,
        100.0 * t2.coverage(),
        t2.uncovered.len(),
        t2.ambiguous.len(),
        t2.mismatches.len()
    );
    if let Some(p) = &prop1 {
        println!(
            "prop1: {} ({} concrete, {} symbolic triples)",
            if p.passed() { "pass" } else { "FAIL" },
            p.concrete_triples,
            p.symbolic_triples
        );
    }
    let ok = t1.passed() && t2.passed() && prop1.as_ref().is_none_or(|p| p.passed());
    let report = ConformanceReport { model: a.model.display().to_string(), theorem1: t1, theorem2: t2, prop1 };
    let path = cfg.out.join("conformance.json");
    write(&path, &serde_json::to_string_pretty(&report).expect("json"))?;
    println!("wrote {}", path.display());
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
