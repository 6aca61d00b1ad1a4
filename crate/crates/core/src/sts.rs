//! Symbolic transition system at top-level step granularity.
//!
//! Every reachable control point is explored from `Or_∅` by running one
//! symbolic step per event with `Δ₀ = g` and `pc = ⊤`; each feasible branch
//! becomes one [`SymbolicTransition`]. Branches that leave the control point
//! unchanged are kept, so for every point, event and data valuation exactly
//! one transition applies.
//!
//! Formulas here are step-relative: [`StepVar`] names a data variable (or
//! the event selector `ev`) in the current or next step, and a control
//! literal is written `Active(path)` for the current step and
//! `Active(path')` for the next one.

use std::collections::{BTreeMap, HashSet, VecDeque};

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{parse_cond, parse_expr, render_cond, CmpOp, Cond, Expr, Sym, SymEnv, VarId};
use crate::model::{ControlPoint, EventId, Model, Role, StateId};
use crate::sos::SosError;
use crate::ssos::{render_derivation, sym_process_event, Feasibility, SymbolicConfiguration};

/// Name of the per-step event selector.
pub const EVENT_SELECTOR: &str = "ev";
pub const DEFAULT_MAX_POINTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StepVar {
    pub name: String,
    pub next: bool,
}

impl std::fmt::Display for StepVar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", self.name, if self.next { "'" } else { "" })
    }
}

pub type Formula = Cond<StepVar>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolicTransition {
    pub source: ControlPoint,
    pub event: EventId,
    /// pc₁² over step-entry symbols; `⊤` when nothing was added.
    pub guard: Cond<Sym>,
    pub update: SymEnv,
    pub target: ControlPoint,
    /// Position among the branches of `(source, event)`.
    pub branch: usize,
    pub certificate: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataVar {
    pub name: String,
    pub role: Role,
    pub initial: Option<BigInt>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StsModel {
    pub events: Vec<String>,
    /// Control variables in preorder; `StateId(i)` names `control_vars[i]`.
    pub control_vars: Vec<String>,
    pub data: Vec<DataVar>,
    /// Reachable control points, sorted; includes `Or_∅`.
    pub points: Vec<ControlPoint>,
    /// Sorted by source point, event, branch.
    pub transitions: Vec<SymbolicTransition>,
}

#[derive(Debug, Error)]
pub enum StsError {
    #[error("more than {0} control points")]
    TooManyPoints(usize),
    #[error(transparent)]
    Step(#[from] SosError),
    #[error("malformed STS dump: {0}")]
    Dump(String),
}

#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    pub max_points: usize,
    pub certificates: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { max_points: DEFAULT_MAX_POINTS, certificates: false }
    }
}

impl StsModel {
    pub fn initial_point(&self) -> ControlPoint {
        ControlPoint::empty()
    }

    pub fn data_names(&self) -> Vec<String> {
        self.data.iter().map(|d| d.name.clone()).collect()
    }

    pub fn is_input(&self, v: VarId) -> bool {
        self.data[v.0].role == Role::Input
    }

    pub fn control_index(&self, path: &str) -> Option<StateId> {
        self.control_vars.iter().position(|p| p == path).map(StateId)
    }

    pub fn render_point(&self, cp: &ControlPoint) -> String {
        let paths: Vec<&str> = cp.iter().map(|s| self.control_vars[s.0].as_str()).collect();
        format!("{{{}}}", paths.join(","))
    }

    pub fn transitions_from<'a>(&'a self, cp: &'a ControlPoint, e: EventId) -> impl Iterator<Item = &'a SymbolicTransition> {
        self.transitions.iter().filter(move |t| &t.source == cp && t.event == e)
    }

    /// `Φ_Or`: positive literals for the active set, negative for the rest.
    pub fn phi_or(&self, cp: &ControlPoint, next: bool) -> Formula {
        phi_or(cp, &self.control_vars, next)
    }

    /// `Φ_Δ` over internal variables: `v' = update(v)`.
    pub fn phi_delta(&self, update: &SymEnv) -> Formula {
        Cond::and(
            self.data
                .iter()
                .enumerate()
                .filter(|(_, d)| d.role == Role::Internal)
                .map(|(i, d)| {
                    Cond::Cmp(
                        CmpOp::Eq,
                        Expr::Var(StepVar { name: d.name.clone(), next: true }),
                        self.step_expr(update.get(VarId(i))),
                    )
                })
                .collect(),
        )
    }

    /// `Φ_source ∧ ev = code ∧ guard`.
    pub fn antecedent(&self, t: &SymbolicTransition) -> Formula {
        let mut parts = vec![self.phi_or(&t.source, false)];
        parts.push(Cond::Cmp(
            CmpOp::Eq,
            Expr::Var(StepVar { name: EVENT_SELECTOR.into(), next: false }),
            Expr::constant(t.event.0),
        ));
        if !t.guard.is_true() {
            parts.push(self.step_cond(&t.guard));
        }
        flatten_and(parts)
    }

    /// `(Φ_source ∧ ev = code ∧ guard) ⇒ (Φ_target' ∧ Φ_Δ')`.
    pub fn phi_transition(&self, t: &SymbolicTransition) -> Formula {
        let consequent = flatten_and(vec![self.phi_or(&t.target, true), self.phi_delta(&t.update)]);
        Cond::Implies(Box::new(self.antecedent(t)), Box::new(consequent))
    }

    /// `Î = Φ_{Or_∅} ∧ Φ_{Δ₀}`, declared initials only.
    pub fn initial_formula(&self) -> Formula {
        let mut parts = vec![self.phi_or(&ControlPoint::empty(), false)];
        for d in &self.data {
            if let Some(v) = &d.initial {
                parts.push(Cond::Cmp(
                    CmpOp::Eq,
                    Expr::Var(StepVar { name: d.name.clone(), next: false }),
                    Expr::Const(v.clone()),
                ));
            }
        }
        flatten_and(parts)
    }

    /// Step-entry symbols become current copies; fresh input symbols (step 1)
    /// become next-step copies.
    fn step_var(&self, s: &Sym) -> StepVar {
        StepVar { name: self.data[s.var.0].name.clone(), next: s.step > 0 }
    }

    pub fn step_expr(&self, e: &Expr<Sym>) -> Expr<StepVar> {
        e.map_vars(&mut |s| self.step_var(s))
    }

    pub fn step_cond(&self, c: &Cond<Sym>) -> Formula {
        c.map_vars(&mut |s| self.step_var(s))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.dump()).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, StsError> {
        let d: StsDump = serde_json::from_str(text).map_err(|e| StsError::Dump(e.to_string()))?;
        d.load()
    }

    fn dump(&self) -> StsDump {
        let names = self.data_names();
        let paths = |cp: &ControlPoint| cp.iter().map(|s| self.control_vars[s.0].clone()).collect::<Vec<_>>();
        StsDump {
            events: self.events.clone(),
            control_vars: self.control_vars.clone(),
            data: self
                .data
                .iter()
                .map(|d| DataDump {
                    name: d.name.clone(),
                    role: match d.role {
                        Role::Internal => "internal".into(),
                        Role::Input => "input".into(),
                    },
                    initial: d.initial.as_ref().map(|v| v.to_string()),
                })
                .collect(),
            points: self.points.iter().map(paths).collect(),
            transitions: self
                .transitions
                .iter()
                .enumerate()
                .map(|(id, t)| TransitionDump {
                    id,
                    source: paths(&t.source),
                    event: self.events[t.event.0].clone(),
                    event_code: t.event.0,
                    branch: t.branch,
                    guard: render_cond(&t.guard, &names),
                    update: t.update.render(&names).into_iter().collect(),
                    target: paths(&t.target),
                    certificate: t.certificate.clone(),
                })
                .collect(),
        }
    }
}

fn flatten_and(parts: Vec<Formula>) -> Formula {
    Cond::And(parts).simplify()
}

pub fn phi_or(cp: &ControlPoint, vars: &[String], next: bool) -> Formula {
    Cond::and(
        vars.iter()
            .enumerate()
            .map(|(i, v)| {
                let lit = Cond::Active(if next { format!("{v}'") } else { v.clone() });
                if cp.contains(StateId(i)) {
                    lit
                } else {
                    Cond::not(lit)
                }
            })
            .collect(),
    )
}

/// Worklist enumeration of all symbolic transitions reachable from `Or_∅`.
pub fn build_sts(m: &Model, feas: &mut dyn Feasibility, opts: BuildOptions) -> Result<StsModel, StsError> {
    let mut seen: HashSet<ControlPoint> = HashSet::from([ControlPoint::empty()]);
    let mut queue = VecDeque::from([ControlPoint::empty()]);
    let mut transitions = vec![];
    while let Some(cp) = queue.pop_front() {
        for e in 0..m.events.len() {
            let sc = SymbolicConfiguration::initial(m, cp.clone(), 0);
            let results = sym_process_event(m, EventId(e), &sc, feas, opts.certificates)?;
            for (branch, r) in results.into_iter().enumerate() {
                if seen.insert(r.control.clone()) {
                    if seen.len() > opts.max_points {
                        return Err(StsError::TooManyPoints(opts.max_points));
                    }
                    queue.push_back(r.control.clone());
                }
                transitions.push(SymbolicTransition {
                    source: cp.clone(),
                    event: EventId(e),
                    guard: r.pc.as_cond(),
                    update: r.delta,
                    target: r.control,
                    branch,
                    certificate: r.derivation.as_deref().map(render_derivation),
                });
            }
        }
    }
    transitions.sort_by(|a, b| (&a.source, a.event, a.branch).cmp(&(&b.source, b.event, b.branch)));
    let mut points: Vec<ControlPoint> = seen.into_iter().collect();
    points.sort();
    Ok(StsModel {
        events: m.events.clone(),
        control_vars: m.states.iter().map(|s| s.path.clone()).collect(),
        data: m
            .vars
            .iter()
            .map(|v| DataVar { name: v.name.clone(), role: v.role, initial: v.initial.clone() })
            .collect(),
        points,
        transitions,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StsDump {
    events: Vec<String>,
    control_vars: Vec<String>,
    data: Vec<DataDump>,
    points: Vec<Vec<String>>,
    transitions: Vec<TransitionDump>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataDump {
    name: String,
    role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionDump {
    id: usize,
    source: Vec<String>,
    event: String,
    event_code: usize,
    branch: usize,
    guard: String,
    update: BTreeMap<String, String>,
    target: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    certificate: Option<String>,
}

impl StsDump {
    fn load(self) -> Result<StsModel, StsError> {
        let bad = |m: String| StsError::Dump(m);
        let data: Vec<DataVar> = self
            .data
            .iter()
            .map(|d| {
                let role = match d.role.as_str() {
                    "internal" => Role::Internal,
                    "input" => Role::Input,
                    other => return Err(bad(format!("unknown role {other}"))),
                };
                let initial = match &d.initial {
                    Some(t) => Some(t.parse().map_err(|_| bad(format!("bad initial {t}")))?),
                    None => None,
                };
                Ok(DataVar { name: d.name.clone(), role, initial })
            })
            .collect::<Result<_, _>>()?;
        let names: Vec<String> = data.iter().map(|d| d.name.clone()).collect();
        let point = |paths: &[String]| -> Result<ControlPoint, StsError> {
            let mut cp = ControlPoint::empty();
            for p in paths {
                let i = self.control_vars.iter().position(|c| c == p).ok_or_else(|| bad(format!("unknown state {p}")))?;
                cp.0.insert(StateId(i));
            }
            Ok(cp)
        };
        let sym = |name: &String| Sym::parse(name, &names).ok_or_else(|| bad(format!("unknown symbol {name}")));
        let mut transitions = vec![];
        for t in &self.transitions {
            if t.event_code >= self.events.len() || self.events[t.event_code] != t.event {
                return Err(bad(format!("transition {}: event code mismatch", t.id)));
            }
            let guard = parse_cond(&t.guard).map_err(|e| bad(format!("transition {}: {e}", t.id)))?;
            let guard = try_map_cond(&guard, &sym)?;
            let mut update = Vec::with_capacity(names.len());
            for n in &names {
                let text = t.update.get(n).ok_or_else(|| bad(format!("transition {}: no update for {n}", t.id)))?;
                let e = parse_expr(text).map_err(|e| bad(format!("transition {}: {e}", t.id)))?;
                update.push(try_map_expr(&e, &sym)?);
            }
            transitions.push(SymbolicTransition {
                source: point(&t.source)?,
                event: EventId(t.event_code),
                guard,
                update: SymEnv(update),
                target: point(&t.target)?,
                branch: t.branch,
                certificate: t.certificate.clone(),
            });
        }
        let points = self.points.iter().map(|p| point(p)).collect::<Result<_, _>>()?;
        Ok(StsModel { events: self.events, control_vars: self.control_vars, data, points, transitions })
    }
}

fn try_map_expr<E>(e: &Expr<String>, f: &impl Fn(&String) -> Result<Sym, E>) -> Result<Expr<Sym>, E> {
    let mut err = None;
    let out = e.map_vars(&mut |v| match f(v) {
        Ok(s) => s,
        Err(x) => {
            err.get_or_insert(x);
            Sym { var: VarId(0), episode: 0, step: 0 }
        }
    });
    err.map_or(Ok(out), Err)
}

fn try_map_cond<E>(c: &Cond<String>, f: &impl Fn(&String) -> Result<Sym, E>) -> Result<Cond<Sym>, E> {
    let mut err = None;
    let out = c.map_vars(&mut |v| match f(v) {
        Ok(s) => s,
        Err(x) => {
            err.get_or_insert(x);
            Sym { var: VarId(0), episode: 0, step: 0 }
        }
    });
    err.map_or(Ok(out), Err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::ssos::NoPruning;

    fn toggle() -> (Model, StsModel) {
        let m = Model::from_json(models::TOGGLE).unwrap();
        let sts = build_sts(&m, &mut NoPruning, BuildOptions::default()).unwrap();
        (m, sts)
    }

    #[test]
    fn toggle_counts() {
        let (_, sts) = toggle();
        assert_eq!(sts.points.len(), 3);
        assert_eq!(sts.transitions.len(), 4);
        assert_eq!(sts.render_point(&sts.transitions[0].source), "{}");
    }

    #[test]
    fn phi_or_literals() {
        let vars = vec!["A".to_string(), "B".to_string()];
        assert_eq!(phi_or(&ControlPoint::empty(), &vars, false).to_string(), "not active(\"A\") and not active(\"B\")");
        let a = ControlPoint([StateId(0)].into_iter().collect());
        assert_eq!(phi_or(&a, &vars, true).to_string(), "active(\"A'\") and not active(\"B'\")");
    }

    #[test]
    fn phi_transition_shape() {
        let (m, sts) = toggle();
        let a = m.point_from_paths(&["A"]).unwrap();
        let fire = sts.transitions_from(&a, EventId(0)).next().unwrap();
        assert_eq!(
            sts.phi_transition(fire).to_string(),
            "(active(\"A\") and not active(\"B\") and (ev = 0) and (x < 10)) implies \
             (not active(\"A'\") and active(\"B'\") and (x' = x + 1))"
        );
    }

    #[test]
    fn json_round_trip() {
        let (_, sts) = toggle();
        let back = StsModel::from_json(&sts.to_json()).unwrap();
        assert_eq!(back, sts);
    }

    #[test]
    fn initial_formula_binds_declared_initials() {
        let (_, sts) = toggle();
        assert_eq!(sts.initial_formula().to_string(), "not active(\"A\") and not active(\"B\") and (x = 0)");
    }
}
