//! Bounded invariant checking over an [`StsModel`].
//!
//! SSA copies are named `v@i` for data and control variables and `ev@i` for
//! the event chosen at step `i`. Step `i` relates copies `i` and `i + 1`.
//! Incremental mode asks one query per bound, so the first satisfiable bound
//! is the shortest counterexample. Each query guards `not phi@k` behind a
//! fresh literal `!viol@k` and checks under that assumption. Once bound `k` is
//! unsat, `phi@k` is entailed by the unrolling and is kept as a lemma for
//! later bounds. Every counterexample is replayed on the concrete interpreter
//! before it is returned.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{parse_cond, Cond, Env, ParseError};
use crate::model::{ControlPoint, Model, StateId};
use crate::smt;
use crate::solver::{symbol, SatResult, SolverError, SolverModel, SolverSession, Sort};
use crate::sos::{holds, run_from, Configuration, SosError, Stimulus};
use crate::sts::{Formula, StepVar, StsModel, EVENT_SELECTOR};

/// An invariant `φ` over data variables and `active("path")` atoms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Property {
    pub name: String,
    pub formula: Cond<String>,
}

impl Property {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Ok(Property { name: text.trim().to_string(), formula: parse_cond(text)? })
    }

    /// Checks that every identifier names a data variable and every activity
    /// atom a state.
    pub fn check_against(&self, sts: &StsModel) -> Result<(), BmcError> {
        let mut bad = vec![];
        self.formula.visit_vars(&mut |v: &String| {
            if !sts.data.iter().any(|d| &d.name == v) {
                bad.push(format!("unknown variable \"{v}\""));
            }
        });
        self.formula.visit_active(&mut |p| {
            if sts.control_index(p).is_none() {
                bad.push(format!("unknown state \"{p}\""));
            }
        });
        if bad.is_empty() {
            Ok(())
        } else {
            Err(BmcError::Property(bad.join("; ")))
        }
    }

    /// `φ̂@i` as an SMT-LIB term.
    pub fn at(&self, i: usize) -> String {
        smt::cond(&self.formula, &mut |v: &String| at(v, i), &mut |p| at(p, i))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Incremental,
    Fixed,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "incremental" => Ok(Mode::Incremental),
            "fixed" => Ok(Mode::Fixed),
            other => Err(format!("unknown mode \"{other}\" (expected incremental or fixed)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CexStep {
    pub step: usize,
    /// `None` at step 0.
    pub event: Option<String>,
    pub state: Vec<String>,
    #[serde(serialize_with = "crate::lang::ser_numbers")]
    pub data: BTreeMap<String, BigInt>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CounterExample {
    pub property: String,
    pub length: usize,
    pub violating_step: usize,
    pub steps: Vec<CexStep>,
}

impl CounterExample {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Same line format as [`crate::sos::Trace::dump`]; data in declaration
    /// order.
    pub fn dump(&self, sts: &StsModel) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let data: Vec<String> = sts.data.iter().map(|d| format!("{}={}", d.name, s.data[&d.name])).collect();
            let _ = writeln!(
                out,
                "step {}: event={} state={{{}}} data={{{}}}",
                s.step,
                s.event.as_deref().unwrap_or("-"),
                s.state.join(","),
                data.join(",")
            );
        }
        out
    }

    /// The events and input values that drive a concrete replay.
    pub fn stimuli(&self, m: &Model) -> Result<Vec<Stimulus>, BmcError> {
        let inputs: Vec<String> = m.inputs().map(|v| m.vars[v.0].name.clone()).collect();
        self.steps[1..]
            .iter()
            .map(|s| {
                let name = s.event.as_deref().unwrap_or_default();
                let event = m.event(name).ok_or_else(|| BmcError::Malformed(format!("unknown event {name}")))?;
                Ok(Stimulus { event, inputs: inputs.iter().map(|n| s.data[n].clone()).collect() })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    SafeUpTo(usize),
    Violated(Box<CounterExample>),
    /// `k` is the largest bound known safe, if any.
    Unknown { reason: String, k: Option<usize> },
}

impl Verdict {
    pub fn kind(&self) -> &'static str {
        match self {
            Verdict::SafeUpTo(_) => "SafeUpTo",
            Verdict::Violated(_) => "Violated",
            Verdict::Unknown { .. } => "Unknown",
        }
    }

    /// `VERDICT <kind> k=<n>`; `n` is the safe bound, the counterexample
    /// length, or the last completed bound (`none` before the first).
    pub fn line(&self) -> String {
        let k = match self {
            Verdict::SafeUpTo(k) => k.to_string(),
            Verdict::Violated(c) => c.length.to_string(),
            Verdict::Unknown { k, .. } => k.map_or("none".into(), |k| k.to_string()),
        };
        format!("VERDICT {} k={k}", self.kind())
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::SafeUpTo(k) => write!(f, "SafeUpTo({k})"),
            Verdict::Violated(c) => write!(f, "Violated(k={})", c.length),
            Verdict::Unknown { reason, k } => match k {
                Some(k) => write!(f, "Unknown({reason}, k={k})"),
                None => write!(f, "Unknown({reason})"),
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum BmcError {
    #[error("property: {0}")]
    Property(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("malformed solver model: {0}")]
    Malformed(String),
    #[error("counterexample replay diverges at step {step}: expected {expected}, got {got}")]
    ReplayMismatch { step: usize, expected: String, got: String },
    #[error("replay: {0}")]
    Replay(#[from] SosError),
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub max_k: usize,
    pub mode: Mode,
    pub solver: String,
    /// Wall-clock budget for the whole check.
    pub timeout: Option<Duration>,
}

impl CheckOptions {
    pub fn new(max_k: usize) -> Self {
        CheckOptions { max_k, mode: Mode::Incremental, solver: crate::solver::default_command(), timeout: None }
    }
}

/// Activation literal for the violation query at bound `k`. `!` cannot occur
/// in model identifiers, so it never clashes with a state or variable copy.
pub fn violation_literal(k: usize) -> String {
    symbol(&format!("!viol@{k}"))
}

fn at(name: &str, i: usize) -> String {
    symbol(&format!("{name}@{i}"))
}

fn step_term(f: &Formula, i: usize) -> String {
    smt::cond(f, &mut |v: &StepVar| at(&v.name, i + usize::from(v.next)), &mut |p| match p.strip_suffix('\'') {
        Some(base) => at(base, i + 1),
        None => at(p, i),
    })
}

/// Constants of copy `i`: control variables, data variables, then `ev@i`
/// when step `i` has a successor.
pub fn declarations(sts: &StsModel, i: usize, with_event: bool) -> Vec<(String, Sort)> {
    let mut out: Vec<(String, Sort)> = sts.control_vars.iter().map(|c| (at(c, i), Sort::Bool)).collect();
    out.extend(sts.data.iter().map(|d| (at(&d.name, i), Sort::Int)));
    if with_event {
        out.push((at(EVENT_SELECTOR, i), Sort::Int));
    }
    out
}

/// `Î` at copy 0, one assertion per conjunct.
pub fn encode_initial(sts: &StsModel) -> Vec<String> {
    match sts.initial_formula() {
        Cond::And(cs) => cs.iter().map(|c| step_term(c, 0)).collect(),
        c => vec![step_term(&c, 0)],
    }
}

/// `|T|` implications and one assertion holding the event range and the
/// progress disjunction.
pub fn encode_step(sts: &StsModel, i: usize) -> Vec<String> {
    let mut out: Vec<String> = sts.transitions.iter().map(|t| step_term(&sts.phi_transition(t), i)).collect();
    let ev = at(EVENT_SELECTOR, i);
    let progress: Vec<String> = sts.transitions.iter().map(|t| step_term(&sts.antecedent(t), i)).collect();
    out.push(format!("(and (<= 0 {ev}) (< {ev} {}) {})", sts.events.len(), smt::or(&progress)));
    out
}

/// `⋁_{i=0..k} ¬φ̂@i`.
pub fn encode_violation(prop: &Property, k: usize) -> String {
    let ds: Vec<String> = (0..=k).map(|i| format!("(not {})", prop.at(i))).collect();
    smt::or(&ds)
}

/// A standalone SMT-LIB script. Fixed mode ends in one `check-sat` and
/// `get-model`; incremental mode has one `check-sat-assuming` per bound.
pub fn emit_smtlib(sts: &StsModel, prop: &Property, k: usize, mode: Mode) -> String {
    let mut out = String::new();
    out.push_str("(set-option :produce-models true)\n(set-logic QF_LIA)\n");
    let declare = |out: &mut String, i: usize, with_event: bool| {
        for (n, s) in declarations(sts, i, with_event) {
            let _ = writeln!(out, "(declare-const {n} {})", s.smt());
        }
    };
    let assert_all = |out: &mut String, terms: Vec<String>| {
        for t in terms {
            let _ = writeln!(out, "(assert {t})");
        }
    };
    match mode {
        Mode::Fixed => {
            for i in 0..=k {
                declare(&mut out, i, i < k);
            }
            assert_all(&mut out, encode_initial(sts));
            for i in 0..k {
                assert_all(&mut out, encode_step(sts, i));
            }
            let _ = writeln!(out, "(assert {})", encode_violation(prop, k));
            out.push_str("(check-sat)\n(get-model)\n");
        }
        Mode::Incremental => {
            declare(&mut out, 0, false);
            assert_all(&mut out, encode_initial(sts));
            for j in 0..=k {
                if j > 0 {
                    let _ = writeln!(out, "(declare-const {} Int)", at(EVENT_SELECTOR, j - 1));
                    declare(&mut out, j, false);
                    assert_all(&mut out, encode_step(sts, j - 1));
                }
                let v = violation_literal(j);
                let phi = prop.at(j);
                let _ = writeln!(out, "(declare-const {v} Bool)\n(assert (=> {v} (not {phi})))");
                let _ = writeln!(out, "(check-sat-assuming ({v}))\n(assert {phi})");
            }
        }
    }
    out.push_str("(exit)\n");
    out
}

/// Bounded check; `m` is the concrete model used for replay.
pub fn check(m: &Model, sts: &StsModel, prop: &Property, opts: &CheckOptions) -> Result<Verdict, BmcError> {
    check_observed(m, sts, prop, opts, &mut |_, _| {})
}

/// As [`check`], reporting each answered bound.
pub fn check_observed(
    m: &Model,
    sts: &StsModel,
    prop: &Property,
    opts: &CheckOptions,
    on_bound: &mut dyn FnMut(usize, SatResult),
) -> Result<Verdict, BmcError> {
    prop.check_against(sts)?;
    let deadline = opts.timeout.map(|t| Instant::now() + t);
    let remaining = || deadline.map(|d| d.saturating_duration_since(Instant::now()).max(Duration::from_millis(1)));
    let mut s = SolverSession::open(&opts.solver)?;
    let unknown = |reason: String, k: Option<usize>| Ok(Verdict::Unknown { reason, k });
    match opts.mode {
        Mode::Incremental => {
            declare_copy(&mut s, sts, 0, false)?;
            for a in encode_initial(sts) {
                s.assert(&a)?;
            }
            for k in 0..=opts.max_k {
                let last = k.checked_sub(1);
                if let Some(prev) = last {
                    s.declare(&at(EVENT_SELECTOR, prev), Sort::Int)?;
                    declare_copy(&mut s, sts, k, false)?;
                    for a in encode_step(sts, prev) {
                        s.assert(&a)?;
                    }
                }
                let v = violation_literal(k);
                s.declare(&v, Sort::Bool)?;
                let phi = prop.at(k);
                s.assert(&format!("(=> {v} (not {phi}))"))?;
                let answer = s.check_sat_assuming(&[v], remaining())?;
                on_bound(k, answer);
                match answer {
                    SatResult::Unsat => s.assert(&phi)?,
                    SatResult::Sat => {
                        let model = s.get_model()?;
                        let _ = s.close();
                        let cex = reconstruct(sts, prop, &model, k)?;
                        replay(m, prop, &cex)?;
                        return Ok(Verdict::Violated(Box::new(cex)));
                    }
                    SatResult::Unknown => {
                        let reason = if s.state() == crate::solver::SessionState::Failed { "timeout" } else { "solver answered unknown" };
                        return unknown(reason.into(), last);
                    }
                }
            }
            let _ = s.close();
            Ok(Verdict::SafeUpTo(opts.max_k))
        }
        Mode::Fixed => {
            let k = opts.max_k;
            for i in 0..=k {
                declare_copy(&mut s, sts, i, i < k)?;
            }
            for a in encode_initial(sts) {
                s.assert(&a)?;
            }
            for i in 0..k {
                for a in encode_step(sts, i) {
                    s.assert(&a)?;
                }
            }
            s.assert(&encode_violation(prop, k))?;
            let answer = s.check_sat(remaining())?;
            on_bound(k, answer);
            match answer {
                SatResult::Unsat => {
                    let _ = s.close();
                    Ok(Verdict::SafeUpTo(k))
                }
                SatResult::Sat => {
                    let model = s.get_model()?;
                    let _ = s.close();
                    let cex = reconstruct(sts, prop, &model, k)?;
                    replay(m, prop, &cex)?;
                    Ok(Verdict::Violated(Box::new(cex)))
                }
                SatResult::Unknown => {
                    let reason = if s.state() == crate::solver::SessionState::Failed { "timeout" } else { "solver answered unknown" };
                    unknown(reason.into(), None)
                }
            }
        }
    }
}

fn declare_copy(s: &mut SolverSession, sts: &StsModel, i: usize, with_event: bool) -> Result<(), SolverError> {
    for (n, sort) in declarations(sts, i, with_event) {
        s.declare(&n, sort)?;
    }
    Ok(())
}

/// Decodes a solver model into a trace of `k` steps. Fails loudly if the
/// model is not a run of the STS.
pub fn reconstruct(sts: &StsModel, prop: &Property, model: &SolverModel, k: usize) -> Result<CounterExample, BmcError> {
    let missing = |n: &str| BmcError::Malformed(format!("no value for {n}"));
    let mut steps = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let mut cp = ControlPoint::empty();
        for (j, c) in sts.control_vars.iter().enumerate() {
            let n = at(c, i);
            if model.bool(&n).ok_or_else(|| missing(&n))? {
                cp.0.insert(StateId(j));
            }
        }
        if !sts.points.contains(&cp) {
            return Err(BmcError::Malformed(format!("step {i}: unreachable control point {}", sts.render_point(&cp))));
        }
        let mut data = BTreeMap::new();
        for d in &sts.data {
            let n = at(&d.name, i);
            data.insert(d.name.clone(), model.int(&n).ok_or_else(|| missing(&n))?.clone());
        }
        let event = if i == 0 {
            None
        } else {
            let n = at(EVENT_SELECTOR, i - 1);
            let code = model.int(&n).ok_or_else(|| missing(&n))?;
            let idx = usize::try_from(code).ok().filter(|c| *c < sts.events.len());
            let idx = idx.ok_or_else(|| BmcError::Malformed(format!("{n} = {code} is not an event code")))?;
            Some(sts.events[idx].clone())
        };
        let state = cp.iter().map(|s| sts.control_vars[s.0].clone()).collect();
        steps.push(CexStep { step: i, event, state, data });
    }
    let violating_step = steps
        .iter()
        .position(|s| !eval_on_step(&prop.formula, s))
        .ok_or_else(|| BmcError::Malformed("no step violates the property".into()))?;
    Ok(CounterExample { property: prop.name.clone(), length: k, violating_step, steps })
}

fn eval_on_step(f: &Cond<String>, s: &CexStep) -> bool {
    f.eval(&|v: &String| s.data[v].clone(), &|p: &str| s.state.iter().any(|q| q == p))
}

/// Runs the counterexample's stimuli from its step-0 configuration and
/// requires every configuration to match, and `φ` to fail at the violating
/// step.
pub fn replay(m: &Model, prop: &Property, cex: &CounterExample) -> Result<(), BmcError> {
    let config_of = |s: &CexStep| -> Result<Configuration, BmcError> {
        let control = m.point_from_paths(&s.state).map_err(BmcError::Malformed)?;
        let env = Env(m.vars.iter().map(|v| s.data[&v.name].clone()).collect());
        Ok(Configuration { control, env })
    };
    let start = config_of(&cex.steps[0])?;
    let trace = run_from(m, start, &cex.stimuli(m)?)?;
    for (i, (got, s)) in trace.iter().zip(&cex.steps).enumerate() {
        let want = config_of(s)?;
        if got != &want {
            return Err(BmcError::ReplayMismatch {
                step: i,
                expected: format!("{} {}", m.render_point(&want.control), m.render_env(&want.env)),
                got: format!("{} {}", m.render_point(&got.control), m.render_env(&got.env)),
            });
        }
    }
    let phi = m.resolve_cond(&prop.formula).map_err(BmcError::Property)?;
    if holds(m, &phi, &trace[cex.violating_step]) {
        return Err(BmcError::ReplayMismatch {
            step: cex.violating_step,
            expected: "a configuration violating the property".into(),
            got: "one satisfying it".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::ssos::NoPruning;
    use crate::sts::{build_sts, BuildOptions};

    fn toggle() -> StsModel {
        let m = Model::from_json(models::TOGGLE).unwrap();
        build_sts(&m, &mut NoPruning, BuildOptions::default()).unwrap()
    }

    #[test]
    fn initial_assertions() {
        assert_eq!(encode_initial(&toggle()), ["(not A@0)", "(not B@0)", "(= x@0 0)"]);
    }

    #[test]
    fn step_assertion_count_is_uniform() {
        let sts = toggle();
        let s0 = encode_step(&sts, 0);
        let s5 = encode_step(&sts, 5);
        assert_eq!(s0.len(), sts.transitions.len() + 1);
        assert_eq!(s5.len(), s0.len());
        assert_eq!(s0[0].replace("@0", "@5").replace("@1", "@6"), s5[0]);
        assert!(s0.last().unwrap().starts_with("(and (<= 0 ev@0) (< ev@0 1) (or "));
    }

    #[test]
    fn violation_disjunction() {
        let p = Property::parse("cent <= 98").unwrap();
        assert_eq!(encode_violation(&p, 0), "(not (<= cent@0 98))");
        let p = Property::parse("active(\"Run\") implies cent >= 0").unwrap();
        assert_eq!(encode_violation(&p, 2).matches("(not (=> Run@").count(), 3);
    }

    #[test]
    fn toggle_script_declarations() {
        let sts = toggle();
        let p = Property::parse("x <= 0").unwrap();
        let text = emit_smtlib(&sts, &p, 1, Mode::Fixed);
        let decls: Vec<&str> =
            text.lines().filter_map(|l| l.strip_prefix("(declare-const ")).map(|l| l.split(' ').next().unwrap()).collect();
        assert_eq!(decls, ["A@0", "B@0", "x@0", "ev@0", "A@1", "B@1", "x@1"]);
        let k0 = emit_smtlib(&sts, &p, 0, Mode::Fixed);
        assert!(!k0.contains("ev@0"));
    }

    #[test]
    fn property_resolution_errors() {
        let sts = toggle();
        assert!(Property::parse("y > 0").unwrap().check_against(&sts).is_err());
        assert!(Property::parse("active(\"C\")").unwrap().check_against(&sts).is_err());
        assert!(Property::parse("active(\"A\") or x >= 0").unwrap().check_against(&sts).is_ok());
    }

    #[test]
    fn verdict_lines() {
        assert_eq!(Verdict::SafeUpTo(250).line(), "VERDICT SafeUpTo k=250");
        assert_eq!(Verdict::Unknown { reason: "timeout".into(), k: None }.line(), "VERDICT Unknown k=none");
    }
}
