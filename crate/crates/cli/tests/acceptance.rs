//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero only if a criterion outside `KNOWN_RED` fails.
//!
//! The primary solver is `$CHARTBMC_SOLVER` (default `z3 -in`); the second
//! solver for the cross-check is `$CHARTBMC_SOLVER2` (default
//! `yices-smt2 --incremental`).

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use chartbmc::bmc::{emit_smtlib, Mode, Property};
use chartbmc::conformance::{mutate_guard, mutate_update, prop1_small, theorem1, theorem2};
use chartbmc::model::{EventId, Model};
use chartbmc::solver::default_command;
use chartbmc::sos::{self, Stimulus};
use chartbmc::ssos::SolverFeasibility;
use chartbmc::sts::{build_sts, BuildOptions, StsModel};
use num_bigint::BigInt;
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde_json::Value;

const CENT_BUDGET: Duration = Duration::from_secs(120);
const CENT_SAFE_BUDGET: Duration = Duration::from_secs(30 * 60);
const SEC_BUDGET: Duration = Duration::from_secs(30 * 60);
const DRIVER_BUDGET: Duration = Duration::from_secs(60);
const CENT_SAFE_BOUND: usize = 250;
const SEC_DIAMETER: usize = 200;
const DRIVER_BOUND: usize = 50;
const T1_SAMPLES: usize = 5;
const T2_TRACES: usize = 1000;
const T2_LEN: usize = 10;
const SEED: u64 = 7;
const CROSS_SCRIPTS: usize = 20;

/// Criteria expected to fail, with the reason printed next to them.
const KNOWN_RED: &[(u32, &str)] = &[(
    3,
    "the first configuration with sec = 2 is 1 START + 200 TIC = 201 steps from the initial \
     configuration (BFS agrees), so no counterexample exists at k <= 200",
)];

const DRIVER_INVARIANT: &str = "attempts >= 0 and attempts <= 3 and timer >= 0 and (driver == 0 or driver == 1) \
     and (not active(\"Identify.Confirmed\") or driver == 1) and (not active(\"Fault.Locked\") or attempts >= 3)";

fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/models")
}

fn model_text(name: &str) -> String {
    std::fs::read_to_string(models_dir().join(format!("{name}.json"))).unwrap()
}

fn load(name: &str) -> (Model, StsModel) {
    let m = Model::from_json(&model_text(name)).unwrap();
    let mut feas = SolverFeasibility::open(&default_command(), &m);
    let sts = build_sts(&m, &mut feas, BuildOptions::default()).unwrap();
    (m, sts)
}

struct Verify {
    kind: String,
    k: Option<usize>,
    cex: Option<Value>,
    elapsed: Duration,
}

/// Runs `chartbmc verify` and reads its VERDICT line and counterexample.
fn verify(model: &str, prop: &str, bound: usize, mode: &str) -> Result<Verify, String> {
    let out = std::env::temp_dir().join(format!("chartbmc-acc-{}-{}", std::process::id(), rand::random::<u32>()));
    let t = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_chartbmc"))
        .arg("verify")
        .arg(models_dir().join(format!("{model}.json")))
        .args(["--prop", prop, "--bound", &bound.to_string(), "--mode", mode, "--solver", &default_command()])
        .arg("--out")
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let stdout = String::from_utf8_lossy(&o.stdout);
    let line = stdout
        .lines()
        .find(|l| l.starts_with("VERDICT "))
        .ok_or_else(|| format!("no VERDICT line; stderr: {}", String::from_utf8_lossy(&o.stderr)))?;
    let mut parts = line.split_whitespace().skip(1);
    let kind = parts.next().unwrap_or_default().to_string();
    let k = parts.next().and_then(|s| s.strip_prefix("k=")).and_then(|s| s.parse().ok());
    let cex = std::fs::read_to_string(out.join("counterexample.json")).ok().map(|s| serde_json::from_str(&s).unwrap());
    let _ = std::fs::remove_dir_all(&out);
    Ok(Verify { kind, k, cex, elapsed })
}

/// BFS length of the shortest violation, if any.
fn bfs(m: &Model, prop: &str, bound: usize, inputs: &[BigInt]) -> Option<usize> {
    let p = m.resolve_cond(&Property::parse(prop).unwrap().formula).unwrap();
    sos::bfs_shortest_violation(m, &p, bound, inputs).unwrap().map(|t| t.len())
}

/// Replays a counterexample's event sequence on the interpreter, independently
/// of the checker's own replay.
fn replay_value(m: &Model, cex: &Value, var: &str) -> Option<BigInt> {
    let steps = cex["steps"].as_array()?;
    let stimuli: Vec<Stimulus> =
        steps.iter().skip(1).map(|s| Stimulus::event(m.event(s["event"].as_str().unwrap()).unwrap())).collect();
    let configs = sos::run(m, &stimuli).ok()?;
    let at = cex["violating_step"].as_u64()? as usize;
    Some(configs.get(at)?.env.get(m.var(var)?).clone())
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type MinK = Vec<(String, Option<usize>, Option<usize>)>;

fn crit1(ks: &mut MinK) -> Outcome {
    let (m, _) = load("stopwatch");
    let mut notes = vec![];
    let mut pass = true;
    for x in [25, 50, 75, 98] {
        let prop = format!("0 <= cent and cent <= {x}");
        let oracle = bfs(&m, &prop, 120, &[]);
        match verify("stopwatch", &prop, 120, "incremental") {
            Ok(v) => {
                ks.push((format!("cent<={x}"), v.k.filter(|_| v.kind == "Violated"), oracle));
                let ok = v.kind == "Violated" && v.k.is_some() && v.k == oracle && v.elapsed <= CENT_BUDGET;
                pass &= ok;
                notes.push(format!("X={x}: k={} bfs={} {:.1}s", show(v.k), show(oracle), v.elapsed.as_secs_f64()));
            }
            Err(e) => {
                pass = false;
                notes.push(format!("X={x}: {e}"));
            }
        }
    }
    outcome(pass, notes.join("; "))
}

fn crit2() -> Outcome {
    match verify("stopwatch", "0 <= cent and cent <= 99", CENT_SAFE_BOUND, "incremental") {
        Ok(v) => outcome(
            v.kind == "SafeUpTo" && v.k == Some(CENT_SAFE_BOUND) && v.elapsed <= CENT_SAFE_BUDGET,
            format!("{} k={} in {:.1}s", v.kind, show(v.k), v.elapsed.as_secs_f64()),
        ),
        Err(e) => outcome(false, e),
    }
}

/// Runs one bound past the diameter so that the report shows where the
/// violation actually is; only a verdict within the diameter passes.
fn crit3(ks: &mut MinK) -> Outcome {
    let (m, _) = load("stopwatch");
    let prop = "0 <= sec and sec <= 1";
    let oracle = bfs(&m, prop, SEC_DIAMETER + 1, &[]);
    match verify("stopwatch", prop, SEC_DIAMETER + 1, "incremental") {
        Ok(v) => {
            ks.push(("sec<=1".into(), v.k.filter(|_| v.kind == "Violated"), oracle));
            let sec = v.cex.as_ref().and_then(|c| replay_value(&m, c, "sec"));
            let within = v.kind == "Violated" && v.k.is_some_and(|k| k <= SEC_DIAMETER);
            let pass = within && sec == Some(BigInt::from(2)) && v.elapsed <= SEC_BUDGET;
            outcome(
                pass,
                format!(
                    "{} k={} (bfs={}), replayed sec={}, {:.1}s",
                    v.kind,
                    show(v.k),
                    show(oracle),
                    sec.map_or("-".into(), |s| s.to_string()),
                    v.elapsed.as_secs_f64()
                ),
            )
        }
        Err(e) => outcome(false, e),
    }
}

fn crit4() -> Outcome {
    let inputs: Vec<BigInt> = (-2..=2).map(BigInt::from).collect();
    let mut notes = vec![];
    let mut pass = true;
    for name in ["stopwatch", "toggle", "cascade"] {
        let (m, sts) = load(name);
        let t1 = theorem1(&m, &sts, T1_SAMPLES, &default_command()).unwrap();
        let t2 = theorem2(&m, &sts, T2_TRACES, T2_LEN, SEED, &inputs).unwrap();
        pass &= t1.passed() && t2.passed() && t2.coverage() == 1.0;
        notes.push(format!("{name}: T1 {} failures, T2 {}/{} covered", t1.failures(), t2.covered, t2.steps));
        let detected = |mutant: Option<(usize, StsModel)>| {
            mutant.is_some_and(|(_, bad)| {
                !theorem1(&m, &bad, T1_SAMPLES, &default_command()).unwrap().passed()
                    || !theorem2(&m, &bad, T2_TRACES, T2_LEN, SEED, &inputs).unwrap().passed()
            })
        };
        if name == "toggle" {
            let g = detected(mutate_guard(&sts));
            let u = detected(mutate_update(&sts));
            pass &= g && u;
            notes.push(format!("mutants detected: guard={g} update={u}"));
        }
    }
    outcome(pass, notes.join("; "))
}

fn crit5() -> Outcome {
    let (m, sts) = load("toggle");
    let domain: Vec<BigInt> = (0..=3).map(BigInt::from).collect();
    let r = prop1_small(&m, &sts, &domain).unwrap();
    outcome(
        r.passed(),
        format!(
            "concrete={} symbolic={} only_concrete={} only_symbolic={}",
            r.concrete_triples,
            r.symbolic_triples,
            r.only_concrete.len(),
            r.only_symbolic.len()
        ),
    )
}

fn crit6() -> Outcome {
    let (m, sts) = load("cascade");
    let counting = m.point_from_paths(&["Counting"]).unwrap();
    let n = sts.transitions_from(&counting, EventId(0)).count();
    // Oracle: each junction path adds a different +-1 +-2 +-4 to acc, so
    // exhaustive concrete stepping must show exactly as many distinct deltas.
    let acc = m.var("acc").unwrap();
    let active = sos::step(&m, &Stimulus::event(EventId(0)), &sos::Configuration::initial(&m)).unwrap();
    let mut deltas = std::collections::BTreeSet::new();
    for start in -8..=8 {
        for a in -1..=1 {
            for b in -1..=1 {
                let mut c = active.clone();
                c.env.set(acc, BigInt::from(start));
                let s = Stimulus { event: EventId(0), inputs: vec![BigInt::from(a), BigInt::from(b)] };
                let after = sos::step(&m, &s, &c).unwrap();
                deltas.insert(after.env.get(acc) - BigInt::from(start));
            }
        }
    }
    outcome(n == 8 && deltas.len() == n, format!("branches={n}, distinct concrete paths={}", deltas.len()))
}

fn crit7() -> Outcome {
    let (m, _) = load("driver");
    // Sanity oracle: the invariant holds on random runs with boundary inputs.
    let p = m.resolve_cond(&Property::parse(DRIVER_INVARIANT).unwrap().formula).unwrap();
    let inputs: Vec<BigInt> = [-1, 0, 1, 4711, 4712].into_iter().map(BigInt::from).collect();
    let mut rng = StdRng::seed_from_u64(SEED);
    let mut sim_ok = true;
    for _ in 0..500 {
        let tr = sos::random_trace(&m, &mut rng, DRIVER_BOUND, &inputs).unwrap();
        sim_ok &= tr.configs.iter().all(|c| sos::holds(&m, &p, c));
    }
    match verify("driver", DRIVER_INVARIANT, DRIVER_BOUND, "incremental") {
        Ok(v) => outcome(
            sim_ok && v.kind == "SafeUpTo" && v.k == Some(DRIVER_BOUND) && v.elapsed <= DRIVER_BUDGET,
            format!("{} k={} in {:.2}s, random runs consistent={sim_ok}", v.kind, show(v.k), v.elapsed.as_secs_f64()),
        ),
        Err(e) => outcome(false, e),
    }
}

/// Answers (`sat`/`unsat`/`unknown` lines) of one script under one solver.
fn run_script(cmd: &str, script: &str) -> Result<Vec<String>, String> {
    use std::io::Write;
    let mut parts = cmd.split_whitespace();
    let mut child = Command::new(parts.next().ok_or("empty solver command")?)
        .args(parts)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| format!("{cmd}: {e}"))?;
    child.stdin.take().unwrap().write_all(script.as_bytes()).map_err(|e| e.to_string())?;
    let o = child.wait_with_output().map_err(|e| e.to_string())?;
    Ok(String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(str::trim)
        .filter(|l| matches!(*l, "sat" | "unsat" | "unknown"))
        .map(String::from)
        .collect())
}

fn crit8() -> Outcome {
    let second = std::env::var("CHARTBMC_SOLVER2").unwrap_or_else(|_| "yices-smt2 --incremental".into());
    let cases: &[(&str, &str, usize, Mode)] = &[
        ("stopwatch", "cent <= 25", 26, Mode::Fixed),
        ("stopwatch", "cent <= 25", 27, Mode::Fixed),
        ("stopwatch", "cent <= 10", 11, Mode::Fixed),
        ("stopwatch", "cent <= 10", 12, Mode::Incremental),
        ("stopwatch", "0 <= sec and sec <= 0", 100, Mode::Fixed),
        ("stopwatch", "0 <= sec and sec <= 0", 101, Mode::Fixed),
        ("stopwatch", "0 <= cent and cent <= 99", 40, Mode::Incremental),
        ("stopwatch", "not active(\"Run.Lap\")", 3, Mode::Incremental),
        ("toggle", "x <= 0", 1, Mode::Fixed),
        ("toggle", "x <= 0", 2, Mode::Fixed),
        ("toggle", "x <= 1", 6, Mode::Incremental),
        ("toggle", "x > 0", 0, Mode::Fixed),
        ("cascade", "acc <= 5", 2, Mode::Fixed),
        ("cascade", "acc <= 5", 3, Mode::Incremental),
        ("cascade", "acc >= -9", 4, Mode::Fixed),
        ("driver", DRIVER_INVARIANT, 20, Mode::Fixed),
        ("driver", DRIVER_INVARIANT, 10, Mode::Incremental),
        ("driver", "timer <= 20", 22, Mode::Fixed),
        ("driver", "timer <= 20", 23, Mode::Fixed),
        ("driver", "not active(\"Identify.Confirmed\")", 4, Mode::Incremental),
    ];
    assert_eq!(cases.len(), CROSS_SCRIPTS);
    let mut loaded: std::collections::BTreeMap<&str, StsModel> = Default::default();
    let (mut agree, mut sat, mut unsat) = (0, 0, 0);
    let mut notes = vec![];
    for (model, prop, k, mode) in cases {
        let sts = loaded.entry(model).or_insert_with(|| load(model).1);
        let script = emit_smtlib(sts, &Property::parse(prop).unwrap(), *k, *mode);
        let a = run_script(&default_command(), &script);
        let b = run_script(&second, &script);
        match (a, b) {
            (Ok(a), Ok(b)) if a == b && !a.is_empty() && !a.iter().any(|r| r == "unknown") => {
                agree += 1;
                if a.last().map(String::as_str) == Some("sat") {
                    sat += 1;
                } else {
                    unsat += 1;
                }
            }
            (a, b) => notes.push(format!("{model} \"{prop}\" k={k}: {a:?} vs {b:?}")),
        }
    }
    let pass = agree == CROSS_SCRIPTS && sat > 0 && unsat > 0;
    let mut detail = format!("{agree}/{CROSS_SCRIPTS} agree ({sat} sat, {unsat} unsat)");
    if !notes.is_empty() {
        detail = format!("{detail}; {}", notes.join("; "));
    }
    outcome(pass, detail)
}

/// Uses the incremental verdicts already obtained for criteria 1 and 3.
fn crit9(ks: &MinK) -> Outcome {
    let pass = ks.len() == 5 && ks.iter().all(|(_, k, b)| k.is_some() && k == b);
    let detail: Vec<String> = ks.iter().map(|(n, k, b)| format!("{n}: k={} bfs={}", show(*k), show(*b))).collect();
    outcome(pass, detail.join("; "))
}

fn show(k: Option<usize>) -> String {
    k.map_or("none".into(), |k| k.to_string())
}

fn main() {
    let start = Instant::now();
    println!("acceptance: solver `{}`", default_command());
    let mut unexpected = 0;
    let mut report = |n: u32, name: &str, o: Outcome| {
        let red = KNOWN_RED.iter().find(|(c, _)| *c == n);
        println!("{} criterion {n}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if let (false, Some((_, why))) = (o.pass, red) {
            println!("    known red: {why}");
        }
        if !o.pass && red.is_none() {
            unexpected += 1;
        }
    };
    let mut ks = vec![];
    report(1, "stopwatch 0<=cent<=X violated at BFS length", crit1(&mut ks));
    report(2, "stopwatch 0<=cent<=99 SafeUpTo(250)", crit2());
    report(3, "stopwatch 0<=sec<=1 violated within 200", crit3(&mut ks));
    report(4, "theorems 1 and 2 with mutants", crit4());
    report(5, "proposition 1 on toggle 0..3", crit5());
    report(6, "cascade 8 branches", crit6());
    report(7, "driver invariant SafeUpTo(50)", crit7());
    report(8, "cross-solver agreement", crit8());
    report(9, "incremental k equals BFS length", crit9(&ks));
    println!("acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    if unexpected > 0 {
        eprintln!("{unexpected} criteria failed");
        std::process::exit(1);
    }
}
