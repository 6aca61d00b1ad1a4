//! Executable checks that the symbolic layers agree with the concrete one.
//!
//! An [`Interpretation`] gives every symbol of an episode an integer. `β`
//! turns a symbolic environment into a concrete one under it and `B`
//! evaluates a path condition. The theorem harnesses compare single symbolic
//! transitions with single concrete steps, in both directions.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use num_bigint::BigInt;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use thiserror::Error;

use crate::lang::{Cond, Env, Expr, PathCondition, Sym, SymEnv, SymbolMap, VarId};
use crate::model::{ControlPoint, EventId, Model};
use crate::smt;
use crate::solver::{SatResult, SolverError, SolverSession, Sort};
use crate::sos::{random_trace, step, Configuration, SosError, Stimulus};
use crate::sts::{StsModel, SymbolicTransition};

/// `D0`: integer values for symbols.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interpretation(pub BTreeMap<Sym, BigInt>);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConformanceError {
    #[error("symbol {0:?} has no value")]
    Uncovered(Sym),
    #[error("prop1 tractability guard: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Step(#[from] SosError),
    #[error("solver: {0}")]
    Solver(String),
}

impl From<SolverError> for ConformanceError {
    fn from(e: SolverError) -> Self {
        ConformanceError::Solver(e.to_string())
    }
}

impl Interpretation {
    /// `D0 ∘ g⁻¹` for a concrete environment, plus the fresh step-1 symbols
    /// of the input variables when `inputs` is given.
    pub fn from_env(m: &Model, g: &SymbolMap, env: &Env, inputs: Option<&[BigInt]>) -> Self {
        let mut map: BTreeMap<Sym, BigInt> =
            (0..g.vars).map(|i| (g.sym(VarId(i)), env.get(VarId(i)).clone())).collect();
        if let Some(ins) = inputs {
            for (v, x) in m.inputs().zip(ins) {
                map.insert(g.fresh(v, 1), x.clone());
            }
        }
        Interpretation(map)
    }

    fn value(&self, s: &Sym) -> Option<BigInt> {
        self.0.get(s).cloned()
    }

    fn render(&self, names: &[String]) -> BTreeMap<String, BigInt> {
        self.0.iter().map(|(s, v)| (s.render(names), v.clone())).collect()
    }
}

fn uncovered_in_expr(e: &Expr<Sym>, d0: &Interpretation) -> Option<Sym> {
    let mut miss = None;
    e.visit_vars(&mut |s| {
        if !d0.0.contains_key(s) {
            miss.get_or_insert(*s);
        }
    });
    miss
}

/// `β(Δ, D0)`.
pub fn beta(delta: &SymEnv, d0: &Interpretation) -> Result<Env, ConformanceError> {
    delta
        .0
        .iter()
        .map(|e| e.try_eval(&|s| d0.value(s)).ok_or_else(|| ConformanceError::Uncovered(uncovered_in_expr(e, d0).expect("missing"))))
        .collect::<Result<Vec<_>, _>>()
        .map(Env)
}

/// `B[[c]](D0)`.
pub fn eval_sym_cond(c: &Cond<Sym>, d0: &Interpretation) -> Result<bool, ConformanceError> {
    let mut miss = None;
    c.visit_vars(&mut |s| {
        if !d0.0.contains_key(s) {
            miss.get_or_insert(*s);
        }
    });
    if let Some(s) = miss {
        return Err(ConformanceError::Uncovered(s));
    }
    Ok(c.eval(&|s| d0.value(s).expect("covered"), &|_| false))
}

pub fn eval_pc(pc: &PathCondition, d0: &Interpretation) -> Result<bool, ConformanceError> {
    eval_sym_cond(&pc.as_cond(), d0)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Failure {
    #[serde(rename = "D0", serialize_with = "crate::lang::ser_numbers")]
    pub d0: BTreeMap<String, BigInt>,
    pub expected: String,
    pub got: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TransitionReport {
    pub transition: usize,
    pub samples: usize,
    pub failures: Vec<Failure>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Theorem1Report {
    pub transitions: Vec<TransitionReport>,
}

impl Theorem1Report {
    pub fn passed(&self) -> bool {
        self.transitions.iter().all(|t| t.failures.is_empty() && t.samples > 0)
    }

    pub fn failures(&self) -> usize {
        self.transitions.iter().map(|t| t.failures.len()).sum()
    }
}

fn episode_map(m: &Model) -> SymbolMap {
    SymbolMap::new(0, m.vars.len())
}

/// Every symbol a transition of episode 0 may mention.
fn episode_symbols(m: &Model) -> Vec<Sym> {
    let g = episode_map(m);
    let mut out: Vec<Sym> = (0..m.vars.len()).map(|i| g.sym(VarId(i))).collect();
    out.extend(m.inputs().map(|v| g.fresh(v, 1)));
    out
}

fn show(m: &Model, c: &Configuration) -> String {
    format!("{} {}", m.render_point(&c.control), m.render_env(&c.env))
}

/// Concrete endpoint predicted by a transition under `d0`.
fn predicted(t: &SymbolicTransition, d0: &Interpretation) -> Result<Configuration, ConformanceError> {
    Ok(Configuration { control: t.target.clone(), env: beta(&t.update, d0)? })
}

/// Concrete step from `(t.source, β(g, D0))` on `t.event` with the sampled
/// inputs.
fn concrete(m: &Model, t: &SymbolicTransition, d0: &Interpretation) -> Result<Configuration, ConformanceError> {
    let g = episode_map(m);
    let env = beta(&SymEnv::identity(&g), d0)?;
    let inputs: Vec<BigInt> = m.inputs().map(|v| d0.0[&g.fresh(v, 1)].clone()).collect();
    let src = Configuration { control: t.source.clone(), env };
    Ok(step(m, &Stimulus { event: t.event, inputs }, &src)?)
}

/// Theorem 1: for each transition, up to `samples` interpretations that
/// satisfy its guard (a solver witness, then ±1 perturbations kept only when
/// the guard still holds) must drive the concrete step to the transition's
/// target and `β(Δ′, D0)`.
pub fn theorem1(m: &Model, sts: &StsModel, samples: usize, solver: &str) -> Result<Theorem1Report, ConformanceError> {
    let syms = episode_symbols(m);
    let names = m.var_names();
    let mut s = SolverSession::open(solver)?;
    for sym in &syms {
        s.declare(&sym.render(names), Sort::Int)?;
    }
    let mut report = Theorem1Report::default();
    for (id, t) in sts.transitions.iter().enumerate() {
        s.push()?;
        s.assert(&smt::cond(&t.guard, &mut |v: &Sym| v.render(names), &mut |p| p.to_string()))?;
        let witness = match s.check_sat(None)? {
            SatResult::Sat => {
                let model = s.get_model()?;
                let mut d0 = Interpretation::default();
                for sym in &syms {
                    let v = model.int(&sym.render(names)).cloned().unwrap_or_default();
                    d0.0.insert(*sym, v);
                }
                Some(d0)
            }
            _ => None,
        };
        s.pop()?;
        let mut entry = TransitionReport { transition: id, samples: 0, failures: vec![] };
        if let Some(w) = witness {
            for d0 in perturbations(&w, &syms, &t.guard, samples)? {
                entry.samples += 1;
                let want = predicted(t, &d0)?;
                let got = concrete(m, t, &d0)?;
                if got != want {
                    entry.failures.push(Failure { d0: d0.render(names), expected: show(m, &want), got: show(m, &got) });
                }
            }
        }
        report.transitions.push(entry);
    }
    let _ = s.close();
    Ok(report)
}

/// The witness, then single-symbol ±1 moves and their combinations in a
/// fixed order, filtered by the guard, without duplicates.
fn perturbations(
    w: &Interpretation,
    syms: &[Sym],
    guard: &Cond<Sym>,
    n: usize,
) -> Result<Vec<Interpretation>, ConformanceError> {
    let mut out = vec![w.clone()];
    let mut seen = HashSet::from([format!("{:?}", w.0)]);
    let mut frontier = vec![w.clone()];
    while out.len() < n && !frontier.is_empty() {
        let mut next = vec![];
        for base in &frontier {
            for s in syms {
                for delta in [1, -1] {
                    let mut d = base.clone();
                    *d.0.get_mut(s).expect("total") += delta;
                    if !seen.insert(format!("{:?}", d.0)) {
                        continue;
                    }
                    if eval_sym_cond(guard, &d)? {
                        next.push(d.clone());
                        if out.len() < n {
                            out.push(d);
                        }
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StepDefect {
    pub trace: usize,
    pub step: usize,
    pub source: String,
    pub event: String,
    /// Matching transition ids (empty when uncovered).
    pub matches: Vec<usize>,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Theorem2Report {
    pub steps: usize,
    pub covered: usize,
    pub uncovered: Vec<StepDefect>,
    pub ambiguous: Vec<StepDefect>,
    pub mismatches: Vec<StepDefect>,
    /// Transition ids matched at least once.
    pub transitions_hit: BTreeSet<usize>,
}

impl Theorem2Report {
    pub fn passed(&self) -> bool {
        self.uncovered.is_empty() && self.ambiguous.is_empty() && self.mismatches.is_empty()
    }

    pub fn coverage(&self) -> f64 {
        if self.steps == 0 {
            1.0
        } else {
            self.covered as f64 / self.steps as f64
        }
    }
}

/// Theorem 2: each concrete step of `traces` random traces of length `len`
/// must be matched by exactly one transition whose endpoint agrees. Inputs
/// are drawn from `input_domain`.
pub fn theorem2(
    m: &Model,
    sts: &StsModel,
    traces: usize,
    len: usize,
    seed: u64,
    input_domain: &[BigInt],
) -> Result<Theorem2Report, ConformanceError> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut report = Theorem2Report::default();
    let g = episode_map(m);
    for n in 0..traces {
        let tr = random_trace(m, &mut rng, len, input_domain)?;
        for (i, s) in tr.stimuli.iter().enumerate() {
            report.steps += 1;
            let (src, dst) = (&tr.configs[i], &tr.configs[i + 1]);
            let inputs: Vec<BigInt> = if s.inputs.is_empty() {
                m.inputs().map(|v| src.env.get(v).clone()).collect()
            } else {
                s.inputs.clone()
            };
            let d0 = Interpretation::from_env(m, &g, &src.env, Some(&inputs));
            let mut matches = vec![];
            for (id, t) in sts.transitions.iter().enumerate() {
                if t.source == src.control && t.event == s.event && eval_sym_cond(&t.guard, &d0)? {
                    matches.push(id);
                }
            }
            let defect = |detail: String, matches: Vec<usize>| StepDefect {
                trace: n,
                step: i,
                source: show(m, src),
                event: m.events[s.event.0].clone(),
                matches,
                detail,
            };
            match matches.as_slice() {
                [] => report.uncovered.push(defect("no transition matches".into(), vec![])),
                [id] => {
                    let want = predicted(&sts.transitions[*id], &d0)?;
                    if &want == dst {
                        report.covered += 1;
                        report.transitions_hit.insert(*id);
                    } else {
                        report.mismatches.push(defect(format!("expected {}, got {}", show(m, dst), show(m, &want)), matches));
                    }
                }
                _ => report.ambiguous.push(defect(format!("{} transitions match", matches.len()), matches)),
            }
        }
    }
    Ok(report)
}

/// Closure as a partition: for `samples` random interpretations per
/// (point, event), exactly one transition's guard holds. Returns the
/// offending (point, event, matches) triples.
pub fn partition_defects(
    m: &Model,
    sts: &StsModel,
    samples: usize,
    seed: u64,
    range: std::ops::RangeInclusive<i64>,
) -> Result<Vec<(String, String, usize)>, ConformanceError> {
    let mut rng = StdRng::seed_from_u64(seed);
    let syms = episode_symbols(m);
    let mut out = vec![];
    for cp in &sts.points {
        for e in 0..sts.events.len() {
            for _ in 0..samples {
                let d0 = Interpretation(syms.iter().map(|s| (*s, BigInt::from(rng.gen_range(range.clone())))).collect());
                let mut n = 0;
                for t in sts.transitions_from(cp, EventId(e)) {
                    if eval_sym_cond(&t.guard, &d0)? {
                        n += 1;
                    }
                }
                if n != 1 {
                    out.push((sts.render_point(cp), sts.events[e].clone(), n));
                }
            }
        }
    }
    Ok(out)
}

/// `(source point, D, event, inputs) → (target point, D′)`.
type Triple = (ControlPoint, Vec<BigInt>, usize, Vec<BigInt>, ControlPoint, Vec<BigInt>);

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Prop1Report {
    pub concrete_triples: usize,
    pub symbolic_triples: usize,
    pub points_equal: bool,
    /// Rendered triples found on one side only.
    pub only_concrete: Vec<String>,
    pub only_symbolic: Vec<String>,
}

impl Prop1Report {
    pub fn passed(&self) -> bool {
        self.points_equal && self.only_concrete.is_empty() && self.only_symbolic.is_empty()
    }
}

pub const PROP1_MAX_VARS: usize = 2;
pub const PROP1_MAX_DOMAIN: usize = 4;

fn valuations(n: usize, domain: &[BigInt]) -> Vec<Vec<BigInt>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                domain.iter().map(move |x| {
                    let mut v = v.clone();
                    v.push(x.clone());
                    v
                })
            })
            .collect();
    }
    out
}

/// Proposition 1 on a tiny domain: the concrete step relation, computed by
/// brute force over the control points it reaches from `Or_∅`, equals the
/// relation obtained by instantiating every symbolic transition.
pub fn prop1_small(m: &Model, sts: &StsModel, domain: &[BigInt]) -> Result<Prop1Report, ConformanceError> {
    if m.vars.len() > PROP1_MAX_VARS || domain.len() > PROP1_MAX_DOMAIN {
        return Err(ConformanceError::TooLarge(format!(
            "{} variables over {} values (limits {PROP1_MAX_VARS} and {PROP1_MAX_DOMAIN})",
            m.vars.len(),
            domain.len()
        )));
    }
    let n_inputs = m.inputs().count();
    let datas = valuations(m.vars.len(), domain);
    let input_vals = valuations(n_inputs, domain);

    let mut concrete = BTreeSet::<Triple>::new();
    let mut points = BTreeSet::from([ControlPoint::empty()]);
    let mut todo = vec![ControlPoint::empty()];
    while let Some(cp) = todo.pop() {
        for d in &datas {
            for e in 0..m.events.len() {
                for ins in &input_vals {
                    let src = Configuration { control: cp.clone(), env: Env(d.clone()) };
                    let stim = Stimulus { event: EventId(e), inputs: ins.clone() };
                    let dst = step(m, &stim, &src)?;
                    if points.insert(dst.control.clone()) {
                        todo.push(dst.control.clone());
                    }
                    concrete.insert((cp.clone(), d.clone(), e, ins.clone(), dst.control, dst.env.0));
                }
            }
        }
    }

    let g = episode_map(m);
    let mut symbolic = BTreeSet::<Triple>::new();
    for t in &sts.transitions {
        for d in &datas {
            for ins in &input_vals {
                let d0 = Interpretation::from_env(m, &g, &Env(d.clone()), Some(ins));
                if eval_sym_cond(&t.guard, &d0)? {
                    let after = beta(&t.update, &d0)?;
                    symbolic.insert((t.source.clone(), d.clone(), t.event.0, ins.clone(), t.target.clone(), after.0));
                }
            }
        }
    }
    let render = |x: &Triple| {
        let vals = |v: &[BigInt]| v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "{} [{}] {} [{}] -> {} [{}]",
            m.render_point(&x.0),
            vals(&x.1),
            m.events[x.2],
            vals(&x.3),
            m.render_point(&x.4),
            vals(&x.5)
        )
    };
    Ok(Prop1Report {
        concrete_triples: concrete.len(),
        symbolic_triples: symbolic.len(),
        points_equal: points.iter().cloned().collect::<Vec<_>>() == sts.points,
        only_concrete: concrete.difference(&symbolic).map(render).collect(),
        only_symbolic: symbolic.difference(&concrete).map(render).collect(),
    })
}

/// Mutation fixture: the first transition with a non-trivial guard gets the
/// guard negated. `None` if every guard is `⊤`.
pub fn mutate_guard(sts: &StsModel) -> Option<(usize, StsModel)> {
    let id = sts.transitions.iter().position(|t| !t.guard.is_true())?;
    let mut out = sts.clone();
    let t = &mut out.transitions[id];
    t.guard = Cond::not(t.guard.clone());
    Some((id, out))
}

/// Mutation fixture: adds 1 to the first internal variable's update in the
/// first transition.
pub fn mutate_update(sts: &StsModel) -> Option<(usize, StsModel)> {
    let v = (0..sts.data.len()).find(|i| !sts.is_input(VarId(*i)))?;
    let mut out = sts.clone();
    let t = out.transitions.first_mut()?;
    let e = t.update.get(VarId(v)).clone();
    t.update.set(VarId(v), Expr::Add(Box::new(e), Box::new(Expr::constant(1))));
    Some((0, out))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConformanceReport {
    pub model: String,
    pub theorem1: Theorem1Report,
    pub theorem2: Theorem2Report,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prop1: Option<Prop1Report>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{parse_action, parse_cond, sym_exec_action};
    use crate::models;

    fn xy() -> (Vec<String>, SymbolMap) {
        (vec!["x".into(), "y".into()], SymbolMap::new(0, 2))
    }

    fn interp(g: &SymbolMap, x: i64, y: i64) -> Interpretation {
        Interpretation(BTreeMap::from([(g.sym(VarId(0)), x.into()), (g.sym(VarId(1)), y.into())]))
    }

    #[test]
    fn beta_substitutes() {
        let (_, g) = xy();
        let mut delta = SymEnv::identity(&g);
        delta.set(VarId(0), Expr::Add(Box::new(Expr::Var(g.sym(VarId(0)))), Box::new(Expr::constant(1))));
        assert_eq!(beta(&delta, &interp(&g, 4, 7)).unwrap().0, vec![BigInt::from(5), BigInt::from(7)]);
        assert_eq!(beta(&SymEnv::identity(&g), &interp(&g, 2, 3)).unwrap().0, vec![BigInt::from(2), BigInt::from(3)]);
        delta.set(VarId(0), Expr::constant(0));
        assert_eq!(beta(&delta, &interp(&g, 9, 9)).unwrap().0[0], BigInt::from(0));
    }

    #[test]
    fn beta_reports_uncovered() {
        let (_, g) = xy();
        let d0 = Interpretation(BTreeMap::from([(g.sym(VarId(0)), BigInt::from(1))]));
        assert_eq!(beta(&SymEnv::identity(&g), &d0), Err(ConformanceError::Uncovered(g.sym(VarId(1)))));
    }

    #[test]
    fn eval_pc_examples() {
        let (_, g) = xy();
        let lt = Cond::Cmp(crate::lang::CmpOp::Lt, Expr::Var(g.sym(VarId(0))), Expr::constant(10));
        let eq = Cond::Cmp(crate::lang::CmpOp::Eq, Expr::Var(g.sym(VarId(1))), Expr::constant(0));
        assert!(eval_pc(&PathCondition::top(), &interp(&g, 100, 100)).unwrap());
        assert!(eval_pc(&PathCondition::top().with(lt.clone()), &interp(&g, 4, 1)).unwrap());
        assert!(!eval_pc(&PathCondition::top().with(lt).with(eq), &interp(&g, 4, 1)).unwrap());
    }

    #[test]
    fn beta_commutes_with_actions() {
        let (names, g) = xy();
        let a = parse_action("x := x + 2 * y; y := x - 1").unwrap().map_vars(&mut |v: &String| {
            VarId(names.iter().position(|n| n == v).unwrap())
        });
        let d0 = interp(&g, 3, -2);
        let lhs = beta(&sym_exec_action(&a, &SymEnv::identity(&g)), &d0).unwrap();
        let rhs = crate::lang::exec_action(&a, &beta(&SymEnv::identity(&g), &d0).unwrap());
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn prop1_guard() {
        let m = Model::from_json(models::STOPWATCH).unwrap();
        let sts = crate::sts::build_sts(&m, &mut crate::ssos::NoPruning, Default::default()).unwrap();
        assert!(matches!(prop1_small(&m, &sts, &[0.into()]), Err(ConformanceError::TooLarge(_))));
    }

    #[test]
    fn perturbations_respect_guard() {
        let (names, g) = xy();
        let guard = parse_cond("x < 2").unwrap().map_vars(&mut |v: &String| {
            g.sym(VarId(names.iter().position(|n| n == v).unwrap()))
        });
        let syms = vec![g.sym(VarId(0)), g.sym(VarId(1))];
        let ps = perturbations(&interp(&g, 1, 0), &syms, &guard, 5).unwrap();
        assert_eq!(ps.len(), 5);
        assert!(ps.iter().all(|d| eval_sym_cond(&guard, d).unwrap()));
    }
}
