//! Symbolic event processing: every derivation of one top-level step.
//!
//! The rules mirror [`crate::sos`] one for one. Where the concrete
//! interpreter evaluates a condition, the symbolic engine forks: one branch
//! appends `SB[[c]](Δ)` to the path condition, the other its negation.
//! Branches whose path condition is unsatisfiable are dropped. A condition
//! that simplifies to a constant does not fork and adds nothing.

use std::collections::HashMap;

use crate::lang::{sym_eval_cond, sym_exec_action, Action, Cond, Expr, PathCondition, Sym, SymEnv, SymbolMap, VarId};
use crate::model::{CTransition, CompKind, ControlPoint, Dest, EventId, JunctionId, Level, Model, StateId};
use crate::smt;
use crate::solver::{SatResult, SolverSession, Sort};
use crate::sos::{SosError, Tv};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolicConfiguration {
    pub control: ControlPoint,
    pub delta: SymEnv,
    pub pc: PathCondition,
    pub g: SymbolMap,
}

impl SymbolicConfiguration {
    /// `(P, ⟨Δ₀ = g, pc₀ = ⊤⟩)` at a control point.
    pub fn initial(m: &Model, control: ControlPoint, episode: u32) -> Self {
        let g = SymbolMap::new(episode, m.vars.len());
        SymbolicConfiguration { control, delta: SymEnv::identity(&g), pc: PathCondition::top(), g }
    }
}

/// One line of a derivation: a rule applied at a nesting depth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivationLine {
    pub depth: usize,
    pub rule: &'static str,
    /// Conjunct this rule added to the path condition, rendered; `⊤` if none.
    pub pc_delta: String,
    pub judgment: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolicStepResult {
    pub control: ControlPoint,
    pub delta: SymEnv,
    pub pc: PathCondition,
    pub tv: Tv,
    pub derivation: Option<Vec<DerivationLine>>,
}

/// `RULE [pc-delta] judgment`, indented two spaces per level.
pub fn render_derivation(lines: &[DerivationLine]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&"  ".repeat(l.depth));
        out.push_str(&format!("{} [{}] {}\n", l.rule, l.pc_delta, l.judgment));
    }
    out
}

/// Decides path-condition satisfiability for pruning.
pub trait Feasibility {
    fn feasible(&mut self, pc: &PathCondition) -> SatResult;
}

/// Never prunes anything a constant check cannot decide.
pub struct NoPruning;

impl Feasibility for NoPruning {
    fn feasible(&mut self, pc: &PathCondition) -> SatResult {
        syntactic(pc).unwrap_or(SatResult::Unknown)
    }
}

fn syntactic(pc: &PathCondition) -> Option<SatResult> {
    match pc.as_cond().simplify() {
        Cond::Bool(true) => Some(SatResult::Sat),
        Cond::Bool(false) => Some(SatResult::Unsat),
        _ => None,
    }
}

/// Feasibility through an SMT solver, one `push`/`pop` frame per query.
/// A solver failure turns every later answer into `unknown` and is recorded
/// in [`SolverFeasibility::diagnostics`].
pub struct SolverFeasibility {
    session: Option<SolverSession>,
    declared: std::collections::HashSet<Sym>,
    cache: HashMap<Vec<Cond<Sym>>, SatResult>,
    names: Vec<String>,
    pub diagnostics: Vec<String>,
}

impl SolverFeasibility {
    pub fn open(cmd: &str, m: &Model) -> Self {
        let mut diagnostics = vec![];
        let session = match SolverSession::open(cmd) {
            Ok(s) => Some(s),
            Err(e) => {
                diagnostics.push(e.to_string());
                None
            }
        };
        SolverFeasibility {
            session,
            declared: Default::default(),
            cache: HashMap::new(),
            names: m.var_names().to_vec(),
            diagnostics,
        }
    }

    fn query(&mut self, pc: &PathCondition) -> Result<SatResult, crate::solver::SolverError> {
        let Some(s) = self.session.as_mut() else { return Ok(SatResult::Unknown) };
        let c = pc.as_cond();
        let mut syms = vec![];
        c.visit_vars(&mut |v: &Sym| syms.push(*v));
        for v in syms {
            if self.declared.insert(v) {
                s.declare(&v.render(&self.names), Sort::Int)?;
            }
        }
        let names = &self.names;
        let term = smt::cond(&c, &mut |v: &Sym| v.render(names), &mut |p| format!("|active {p}|"));
        s.push()?;
        s.assert(&term)?;
        let r = s.check_sat(None)?;
        s.pop()?;
        Ok(r)
    }
}

impl Feasibility for SolverFeasibility {
    fn feasible(&mut self, pc: &PathCondition) -> SatResult {
        if let Some(r) = syntactic(pc) {
            return r;
        }
        if let Some(r) = self.cache.get(pc.conjuncts()) {
            return *r;
        }
        let r = match self.query(pc) {
            Ok(r) => r,
            Err(e) => {
                self.diagnostics.push(e.to_string());
                self.session = None;
                SatResult::Unknown
            }
        };
        self.cache.insert(pc.conjuncts().to_vec(), r);
        r
    }
}

/// All feasible SSOS derivations of `e` from `sc`. Input variables are
/// rebound to fresh step-1 symbols first.
pub fn sym_process_event(
    m: &Model,
    e: EventId,
    sc: &SymbolicConfiguration,
    feas: &mut dyn Feasibility,
    certificates: bool,
) -> Result<Vec<SymbolicStepResult>, SosError> {
    let mut delta = sc.delta.clone();
    for v in m.inputs() {
        delta.set(v, Expr::Var(sc.g.fresh(v, 1)));
    }
    let st = Branch {
        cp: sc.control.clone(),
        delta,
        pc: sc.pc.clone(),
        visits: vec![0; m.junctions.len()],
        depth: 0,
        log: certificates.then(Vec::new),
    };
    let mut eng = Engine { m, e, feas };
    let mut st = st;
    eng.log(&mut st, "STEP", None, format!("{} ⊢ {}", m.events[e.0], m.render_point(&sc.control)));
    let out = eng.or_level(st, Level::Top)?;
    Ok(out
        .into_iter()
        .map(|b| {
            debug_assert!(m.check_activity(&b.cp).is_ok());
            SymbolicStepResult { control: b.cp, delta: b.delta, pc: b.pc, tv: Tv::No, derivation: b.log }
        })
        .collect())
}

#[derive(Clone)]
struct Branch {
    cp: ControlPoint,
    delta: SymEnv,
    pc: PathCondition,
    visits: Vec<usize>,
    depth: usize,
    log: Option<Vec<DerivationLine>>,
}

type Res<T> = Result<Vec<T>, SosError>;

struct Engine<'a> {
    m: &'a Model,
    e: EventId,
    feas: &'a mut dyn Feasibility,
}

impl Engine<'_> {
    fn log(&self, b: &mut Branch, rule: &'static str, added: Option<&Cond<Sym>>, judgment: String) {
        if let Some(log) = b.log.as_mut() {
            let pc_delta = match added {
                Some(c) => crate::lang::render_cond(c, self.m.var_names()),
                None => "⊤".into(),
            };
            log.push(DerivationLine { depth: b.depth, rule, pc_delta, judgment });
        }
    }

    fn name(&self, s: StateId) -> &str {
        &self.m.info(s).path
    }

    /// Splits on `c`: `(branch, outcome)` for each feasible outcome.
    fn fork(&mut self, b: Branch, c: &Cond<VarId>) -> Vec<(Branch, bool)> {
        let sc = sym_eval_cond(c, &b.delta).simplify();
        if let Cond::Bool(v) = sc {
            return vec![(b, v)];
        }
        let mut out = vec![];
        for (outcome, conj) in [(true, sc.clone()), (false, Cond::not(sc).simplify())] {
            let pc = b.pc.with(conj.clone());
            if self.feas.feasible(&pc) == SatResult::Unsat {
                continue;
            }
            let mut nb = b.clone();
            nb.pc = pc;
            let rule = if outcome { "COND-T" } else { "COND-F" };
            let names = self.m.var_names();
            let text = c.map_vars(&mut |v: &VarId| names[v.0].clone()).to_string();
            self.log(&mut nb, rule, Some(&conj), text);
            out.push((nb, outcome));
        }
        out
    }

    fn exec(&self, b: &mut Branch, a: &Action<VarId>, rule: &'static str) {
        if !a.is_empty() {
            b.delta = sym_exec_action(a, &b.delta);
            let names = self.m.var_names();
            self.log(b, rule, None, a.map_vars(&mut |v: &VarId| names[v.0].clone()).to_string());
        }
    }

    fn or_level(&mut self, mut b: Branch, level: Level) -> Res<Branch> {
        let m = self.m;
        let active = m.children(level).iter().copied().find(|c| b.cp.contains(*c));
        match active {
            None => {
                let defaults = match level {
                    Level::Top => &m.top_defaults,
                    Level::State(s) => match &m.info(s).comp {
                        CompKind::Or { defaults, .. } => defaults,
                        _ => unreachable!("or_level on a non-Or state"),
                    },
                };
                self.log(&mut b, "OR-INIT", None, format!("{level:?}"));
                b.depth += 1;
                let mut out = vec![];
                for (mut nb, tv) in self.list(b, defaults)? {
                    if let Tv::Fire { dest, action } = tv {
                        self.exec(&mut nb, &action, "TRANS-ACT");
                        out.extend(self.enter(nb, dest)?);
                    } else {
                        out.push(nb);
                    }
                }
                Ok(out.into_iter().map(|b| up(b, 1)).collect())
            }
            Some(s) => {
                self.log(&mut b, "OR", None, format!("active {}", self.name(s)));
                b.depth += 1;
                Ok(self.state(b, s)?.into_iter().map(|b| up(b, 1)).collect())
            }
        }
    }

    fn state(&mut self, mut b: Branch, s: StateId) -> Res<Branch> {
        let m = self.m;
        let info = m.info(s);
        self.log(&mut b, "STATE", None, info.path.clone());
        b.depth += 1;
        let mut out = vec![];
        for (mut nb, tv) in self.list(b, &info.outer)? {
            if let Tv::Fire { dest, action } = tv {
                self.log(&mut nb, "t-FIRE", None, format!("{} → {}", info.path, self.name(dest)));
                self.exit(&mut nb, s);
                self.exec(&mut nb, &action, "TRANS-ACT");
                out.extend(self.enter(nb, dest)?);
                continue;
            }
            self.log(&mut nb, "t-NO", None, format!("outer of {}", info.path));
            self.exec(&mut nb, &info.during, "DURING");
            for (mut ib, itv) in self.list(nb, &info.inner)? {
                if let Tv::Fire { dest, action } = itv {
                    if m.info(dest).parent != Some(s) {
                        return Err(SosError::Stuck(format!("inner transition of {} leaves its composition", info.path)));
                    }
                    self.log(&mut ib, "t-FIRE-INNER", None, format!("{} → {}", info.path, self.name(dest)));
                    self.exit_children(&mut ib, s);
                    self.exec(&mut ib, &action, "TRANS-ACT");
                    out.extend(self.enter(ib, dest)?);
                    continue;
                }
                match &info.comp {
                    CompKind::Leaf => out.push(ib),
                    CompKind::Or { .. } => out.extend(self.or_level(ib, Level::State(s))?),
                    CompKind::And { children } => {
                        self.log(&mut ib, "AND", None, info.path.clone());
                        let mut acc = vec![ib];
                        for c in children {
                            let mut next = vec![];
                            for cb in acc {
                                next.extend(self.state(cb, *c)?);
                            }
                            acc = next;
                        }
                        out.extend(acc);
                    }
                }
            }
        }
        Ok(out.into_iter().map(|b| up(b, 1)).collect())
    }

    /// Processes a transition list from index `i`.
    fn list(&mut self, b: Branch, ts: &[CTransition]) -> Res<(Branch, Tv)> {
        self.list_from(b, ts, 0)
    }

    fn list_from(&mut self, b: Branch, ts: &[CTransition], i: usize) -> Res<(Branch, Tv)> {
        let Some(t) = ts.get(i) else { return Ok(vec![(b, Tv::No)]) };
        if t.event.is_some_and(|e| e != self.e) {
            return self.list_from(b, ts, i + 1);
        }
        let mut out = vec![];
        for (mut nb, enabled) in self.fork(b, &t.cond) {
            if !enabled {
                out.extend(self.list_from(nb, ts, i + 1)?);
                continue;
            }
            self.exec(&mut nb, &t.cond_act, "COND-ACT");
            match t.dest {
                Dest::State(d) => out.push((nb, Tv::Fire { dest: d, action: t.trans_act.clone() })),
                Dest::Junction(j) => {
                    for (jb, tv) in self.junction(nb, j)? {
                        match tv {
                            Tv::Fire { dest, action } => {
                                out.push((jb, Tv::Fire { dest, action: t.trans_act.then(&action) }))
                            }
                            Tv::End => out.push((jb, Tv::End)),
                            Tv::No => out.extend(self.list_from(jb, ts, i + 1)?),
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn junction(&mut self, mut b: Branch, j: JunctionId) -> Res<(Branch, Tv)> {
        let m = self.m;
        b.visits[j.0] += 1;
        if b.visits[j.0] > m.junctions.len() {
            return Err(SosError::JunctionCycle(m.junctions[j.0].name.clone()));
        }
        let ts = &m.junctions[j.0].transitions;
        if ts.is_empty() {
            self.log(&mut b, "J-END", None, m.junctions[j.0].name.clone());
            return Ok(vec![(b, Tv::End)]);
        }
        self.log(&mut b, "JUNCTION", None, m.junctions[j.0].name.clone());
        b.depth += 1;
        let out = self.list(b, ts)?;
        Ok(out
            .into_iter()
            .map(|(ob, tv)| {
                let mut ob = up(ob, 1);
                if tv == Tv::No {
                    self.log(&mut ob, "J-NO", None, m.junctions[j.0].name.clone());
                }
                (ob, tv)
            })
            .collect())
    }

    fn enter(&mut self, mut b: Branch, s: StateId) -> Res<Branch> {
        let info = self.m.info(s);
        b.cp.0.insert(s);
        self.log(&mut b, "ENTER", None, info.path.clone());
        self.exec(&mut b, &info.entry, "ENTRY");
        match &info.comp {
            CompKind::Leaf => Ok(vec![b]),
            CompKind::Or { defaults, .. } => {
                let mut out = vec![];
                for (mut nb, tv) in self.list(b, defaults)? {
                    if let Tv::Fire { dest, action } = tv {
                        self.exec(&mut nb, &action, "TRANS-ACT");
                        out.extend(self.enter(nb, dest)?);
                    } else {
                        out.push(nb);
                    }
                }
                Ok(out)
            }
            CompKind::And { children } => {
                let mut acc = vec![b];
                for c in children {
                    let mut next = vec![];
                    for cb in acc {
                        next.extend(self.enter(cb, *c)?);
                    }
                    acc = next;
                }
                Ok(acc)
            }
        }
    }

    fn exit(&self, b: &mut Branch, s: StateId) {
        self.exit_children(b, s);
        let info = self.m.info(s);
        self.exec(b, &info.exit, "EXIT");
        b.cp.0.remove(&s);
        self.log(b, "EXITED", None, info.path.clone());
    }

    fn exit_children(&self, b: &mut Branch, s: StateId) {
        for c in self.m.children(Level::State(s)).iter().rev() {
            if b.cp.contains(*c) {
                self.exit(b, *c);
            }
        }
    }
}

fn up(mut b: Branch, n: usize) -> Branch {
    b.depth = b.depth.saturating_sub(n);
    b
}
