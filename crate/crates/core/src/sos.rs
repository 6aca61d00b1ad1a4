//! Concrete event processing `e ⊢ (P, D) → (P', D'), tv`.
//!
//! One call to [`process_event`] is one complete top-level step. For the
//! active state of an Or level the order is: outer transitions, then the
//! during action, then inner transitions, then the substates. Junction
//! traversal is depth-first in list order; a junction whose transitions are
//! all disabled hands control back to the previous list (no rollback of
//! condition actions already run), and a junction with an empty list ends the
//! traversal with `End`, which the enclosing layer treats like `No`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use num_bigint::BigInt;
use rand::Rng;
use thiserror::Error;

use crate::lang::{eval_cond, exec_action_in_place, Action, Cond, Env, VarId};
use crate::model::{CTransition, CompKind, ControlPoint, Dest, EventId, JunctionId, Level, Model, StateId};

/// Transition value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tv {
    Fire { dest: StateId, action: Action<VarId> },
    No,
    End,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub control: ControlPoint,
    pub env: Env,
}

impl Configuration {
    /// `Or_∅` with the declared initial data.
    pub fn initial(m: &Model) -> Self {
        Configuration { control: ControlPoint::empty(), env: m.initial_env() }
    }
}

/// What the environment supplies for one step: an event and, for models with
/// input variables, one value per input (in declaration order). An empty
/// `inputs` keeps the current values.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Stimulus {
    pub event: EventId,
    pub inputs: Vec<BigInt>,
}

impl Stimulus {
    pub fn event(event: EventId) -> Self {
        Stimulus { event, inputs: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SosError {
    #[error("junction cycle: \"{0}\" visited too often in one step")]
    JunctionCycle(String),
    #[error("stuck configuration: {0}")]
    Stuck(String),
    #[error("expected {expected} input values, got {got}")]
    InputArity { expected: usize, got: usize },
}

/// Processes one event. The returned value describes the top level, which
/// absorbs any `Fire` it handles and therefore always reports `No`.
pub fn process_event(m: &Model, e: EventId, c: &Configuration) -> Result<(Configuration, Tv), SosError> {
    let mut st = Stepper { m, e, cp: c.control.clone(), env: c.env.clone(), visits: HashMap::new() };
    st.or_level(Level::Top)?;
    let out = Configuration { control: st.cp, env: st.env };
    debug_assert!(m.check_activity(&out.control).is_ok(), "{:?}", m.check_activity(&out.control));
    Ok((out, Tv::No))
}

/// Applies the stimulus' input values, then processes its event.
pub fn step(m: &Model, s: &Stimulus, c: &Configuration) -> Result<Configuration, SosError> {
    let mut c = c.clone();
    if !s.inputs.is_empty() {
        let inputs: Vec<VarId> = m.inputs().collect();
        if inputs.len() != s.inputs.len() {
            return Err(SosError::InputArity { expected: inputs.len(), got: s.inputs.len() });
        }
        for (v, x) in inputs.into_iter().zip(&s.inputs) {
            c.env.set(v, x.clone());
        }
    }
    Ok(process_event(m, s.event, &c)?.0)
}

/// Trace of length `|stimuli| + 1` from the initial configuration.
pub fn run(m: &Model, stimuli: &[Stimulus]) -> Result<Vec<Configuration>, SosError> {
    run_from(m, Configuration::initial(m), stimuli)
}

pub fn run_from(m: &Model, start: Configuration, stimuli: &[Stimulus]) -> Result<Vec<Configuration>, SosError> {
    let mut out = vec![start];
    for s in stimuli {
        let next = step(m, s, out.last().expect("nonempty"))?;
        out.push(next);
    }
    Ok(out)
}

/// Evaluates a property (data plus `active(..)` atoms) on a configuration.
pub fn holds(m: &Model, prop: &Cond<VarId>, c: &Configuration) -> bool {
    prop.eval(&|v: &VarId| c.env.get(*v).clone(), &|path: &str| {
        m.state(path).is_some_and(|s| c.control.contains(s))
    })
}

/// A concrete run together with the stimuli that produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub configs: Vec<Configuration>,
    pub stimuli: Vec<Stimulus>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.stimuli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimuli.is_empty()
    }

    /// One line per configuration:
    /// `step i: event=<e> state={...} data={v=n,...}`.
    pub fn dump(&self, m: &Model) -> String {
        let mut out = String::new();
        for (i, c) in self.configs.iter().enumerate() {
            let ev = if i == 0 { "-" } else { m.events[self.stimuli[i - 1].event.0].as_str() };
            let _ = writeln!(
                out,
                "step {i}: event={ev} state={} data={}",
                m.render_point(&c.control),
                m.render_env(&c.env)
            );
        }
        out
    }
}

/// Breadth-first search over stimuli for a shortest trace of at most `bound`
/// steps whose last configuration violates `prop`. Inputs range over
/// `input_domain`; it is ignored for models without inputs.
pub fn bfs_shortest_violation(
    m: &Model,
    prop: &Cond<VarId>,
    bound: usize,
    input_domain: &[BigInt],
) -> Result<Option<Trace>, SosError> {
    let stimuli = all_stimuli(m, input_domain);
    let init = Configuration::initial(m);
    let mut nodes: Vec<(Configuration, Option<(usize, usize)>)> = vec![(init.clone(), None)];
    if !holds(m, prop, &init) {
        return Ok(Some(rebuild(&nodes, &stimuli, 0)));
    }
    let mut seen: HashSet<Configuration> = HashSet::from([init]);
    let mut frontier = VecDeque::from([0usize]);
    for _depth in 0..bound {
        let mut next = VecDeque::new();
        while let Some(idx) = frontier.pop_front() {
            for (k, s) in stimuli.iter().enumerate() {
                let succ = step(m, s, &nodes[idx].0)?;
                if seen.contains(&succ) {
                    continue;
                }
                seen.insert(succ.clone());
                let bad = !holds(m, prop, &succ);
                nodes.push((succ, Some((idx, k))));
                if bad {
                    return Ok(Some(rebuild(&nodes, &stimuli, nodes.len() - 1)));
                }
                next.push_back(nodes.len() - 1);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(None)
}

fn all_stimuli(m: &Model, input_domain: &[BigInt]) -> Vec<Stimulus> {
    let n_inputs = m.inputs().count();
    let mut combos: Vec<Vec<BigInt>> = vec![vec![]];
    if n_inputs > 0 {
        for _ in 0..n_inputs {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    input_domain.iter().map(move |x| {
                        let mut c = c.clone();
                        c.push(x.clone());
                        c
                    })
                })
                .collect();
        }
    }
    (0..m.events.len())
        .flat_map(|e| combos.iter().map(move |c| Stimulus { event: EventId(e), inputs: c.clone() }))
        .collect()
}

fn rebuild(nodes: &[(Configuration, Option<(usize, usize)>)], stimuli: &[Stimulus], mut idx: usize) -> Trace {
    let mut configs = vec![nodes[idx].0.clone()];
    let mut used = vec![];
    while let Some((parent, k)) = nodes[idx].1 {
        used.push(stimuli[k].clone());
        configs.push(nodes[parent].0.clone());
        idx = parent;
    }
    configs.reverse();
    used.reverse();
    Trace { configs, stimuli: used }
}

/// A uniformly random trace of `len` steps.
pub fn random_trace(m: &Model, rng: &mut impl Rng, len: usize, input_domain: &[BigInt]) -> Result<Trace, SosError> {
    let n_inputs = m.inputs().count();
    let stimuli: Vec<Stimulus> = (0..len)
        .map(|_| Stimulus {
            event: EventId(rng.gen_range(0..m.events.len())),
            inputs: (0..n_inputs).map(|_| input_domain[rng.gen_range(0..input_domain.len())].clone()).collect(),
        })
        .collect();
    let configs = run(m, &stimuli)?;
    Ok(Trace { configs, stimuli })
}

struct Stepper<'m> {
    m: &'m Model,
    e: EventId,
    cp: ControlPoint,
    env: Env,
    visits: HashMap<JunctionId, usize>,
}

impl Stepper<'_> {
    fn or_level(&mut self, level: Level) -> Result<(), SosError> {
        let m = self.m;
        match m.children(level).iter().copied().find(|c| self.cp.contains(*c)) {
            None => {
                let defaults = match level {
                    Level::Top => &m.top_defaults,
                    Level::State(s) => match &m.info(s).comp {
                        CompKind::Or { defaults, .. } => defaults,
                        _ => unreachable!("or_level on a non-Or state"),
                    },
                };
                if let Tv::Fire { dest, action } = self.list(defaults)? {
                    exec_action_in_place(&action, &mut self.env);
                    self.enter(dest)?;
                }
                Ok(())
            }
            Some(active) => self.state(active),
        }
    }

    fn state(&mut self, s: StateId) -> Result<(), SosError> {
        let info = self.m.info(s);
        if let Tv::Fire { dest, action } = self.list(&info.outer)? {
            self.exit(s);
            exec_action_in_place(&action, &mut self.env);
            return self.enter(dest);
        }
        exec_action_in_place(&info.during, &mut self.env);
        if let Tv::Fire { dest, action } = self.list(&info.inner)? {
            if self.m.info(dest).parent != Some(s) {
                return Err(SosError::Stuck(format!("inner transition of {} leaves its composition", info.path)));
            }
            self.exit_children(s);
            exec_action_in_place(&action, &mut self.env);
            return self.enter(dest);
        }
        match &info.comp {
            CompKind::Leaf => Ok(()),
            CompKind::Or { .. } => self.or_level(Level::State(s)),
            CompKind::And { children } => {
                for c in children {
                    self.state(*c)?;
                }
                Ok(())
            }
        }
    }

    fn list(&mut self, ts: &[CTransition]) -> Result<Tv, SosError> {
        for t in ts {
            if t.event.is_some_and(|e| e != self.e) || !eval_cond(&t.cond, &self.env) {
                continue;
            }
            exec_action_in_place(&t.cond_act, &mut self.env);
            match t.dest {
                Dest::State(d) => return Ok(Tv::Fire { dest: d, action: t.trans_act.clone() }),
                Dest::Junction(j) => match self.junction(j)? {
                    Tv::Fire { dest, action } => {
                        return Ok(Tv::Fire { dest, action: t.trans_act.then(&action) })
                    }
                    Tv::End => return Ok(Tv::End),
                    Tv::No => continue,
                },
            }
        }
        Ok(Tv::No)
    }

    fn junction(&mut self, j: JunctionId) -> Result<Tv, SosError> {
        let m = self.m;
        let count = self.visits.entry(j).or_default();
        *count += 1;
        if *count > m.junctions.len() {
            return Err(SosError::JunctionCycle(m.junctions[j.0].name.clone()));
        }
        let ts = &m.junctions[j.0].transitions;
        if ts.is_empty() {
            return Ok(Tv::End);
        }
        self.list(ts)
    }

    fn enter(&mut self, s: StateId) -> Result<(), SosError> {
        let info = self.m.info(s);
        self.cp.0.insert(s);
        exec_action_in_place(&info.entry, &mut self.env);
        match &info.comp {
            CompKind::Leaf => Ok(()),
            CompKind::Or { defaults, .. } => {
                if let Tv::Fire { dest, action } = self.list(defaults)? {
                    exec_action_in_place(&action, &mut self.env);
                    self.enter(dest)?;
                }
                Ok(())
            }
            CompKind::And { children } => {
                for c in children {
                    self.enter(*c)?;
                }
                Ok(())
            }
        }
    }

    fn exit(&mut self, s: StateId) {
        self.exit_children(s);
        exec_action_in_place(&self.m.info(s).exit, &mut self.env);
        self.cp.0.remove(&s);
    }

    fn exit_children(&mut self, s: StateId) {
        let children: Vec<StateId> = self.m.children(Level::State(s)).to_vec();
        for c in children.into_iter().rev() {
            if self.cp.contains(c) {
                self.exit(c);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_cond;
    use crate::models;

    fn model(text: &str) -> Model {
        Model::from_json(text).unwrap()
    }

    fn ev(m: &Model, names: &[&str]) -> Vec<Stimulus> {
        names.iter().map(|n| Stimulus::event(m.event(n).unwrap())).collect()
    }

    fn prop(m: &Model, text: &str) -> Cond<VarId> {
        m.resolve_cond(&parse_cond(text).unwrap()).unwrap()
    }

    #[test]
    fn toggle_fires_and_updates() {
        let m = model(models::TOGGLE);
        let at_a = Configuration { control: m.point_from_paths(&["A"]).unwrap(), env: Env(vec![0.into()]) };
        let (next, tv) = process_event(&m, EventId(0), &at_a).unwrap();
        assert_eq!(next.control, m.point_from_paths(&["B"]).unwrap());
        assert_eq!(next.env.0, vec![BigInt::from(1)]);
        assert_eq!(tv, Tv::No);
    }

    #[test]
    fn unmatched_event_keeps_control() {
        let src = r#"{ "events": ["E", "F"], "data": [{"name": "x"}], "top": { "kind": "or",
            "defaults": [{"dest": "A"}], "states": {
            "A": { "during": "x := x + 5", "outer": [{"event": "E", "dest": "B"}] }, "B": {} } } }"#;
        let m = model(src);
        let at_a = Configuration { control: m.point_from_paths(&["A"]).unwrap(), env: Env(vec![0.into()]) };
        let (next, tv) = process_event(&m, m.event("F").unwrap(), &at_a).unwrap();
        assert_eq!(next.control, at_a.control);
        assert_eq!(next.env.0, vec![BigInt::from(5)]);
        assert_eq!(tv, Tv::No);
    }

    #[test]
    fn stopwatch_start_enters_running() {
        let m = model(models::STOPWATCH);
        let trace = run(&m, &ev(&m, &["START"])).unwrap();
        assert_eq!(m.render_point(&trace[1].control), "{Run,Run.Running}");
    }

    #[test]
    fn stopwatch_hundred_ticks_carry_into_seconds() {
        let m = model(models::STOPWATCH);
        let mut names = vec!["START"];
        names.extend(std::iter::repeat_n("TIC", 100));
        let trace = run(&m, &ev(&m, &names)).unwrap();
        let last = trace.last().unwrap();
        assert_eq!(last.env.get(m.var("cent").unwrap()), &BigInt::from(0));
        assert_eq!(last.env.get(m.var("sec").unwrap()), &BigInt::from(1));
        assert_eq!(trace.len(), 102);
    }

    #[test]
    fn empty_event_list_is_initial_only() {
        let m = model(models::STOPWATCH);
        assert_eq!(run(&m, &[]).unwrap(), vec![Configuration::initial(&m)]);
    }

    #[test]
    fn toggle_two_events() {
        // The first E activates the chart; the second fires A -> B.
        let m = model(models::TOGGLE);
        let xs: Vec<BigInt> = run(&m, &ev(&m, &["E", "E", "E"])).unwrap().iter().map(|c| c.env.0[0].clone()).collect();
        assert_eq!(xs, [0, 0, 1, 0].map(BigInt::from));
    }

    #[test]
    fn dead_end_junction_keeps_condition_actions() {
        let src = r#"{ "events": ["E"], "data": [{"name": "x"}], "top": { "kind": "or",
            "defaults": [{"dest": "P"}], "states": { "P": {
                "inner": [{"event": "E", "condAct": "x := x + 1", "dest": "J"}],
                "junctions": { "J": [] } } } } }"#;
        let m = model(src);
        let trace = run(&m, &ev(&m, &["E", "E"])).unwrap();
        assert_eq!(trace[2].env.0, vec![BigInt::from(1)]);
        assert_eq!(m.render_point(&trace[2].control), "{P}");
    }

    #[test]
    fn junction_cycle_is_reported() {
        let src = r#"{ "events": ["E"], "top": { "kind": "or", "defaults": [{"dest": "P"}], "states": {
            "P": { "inner": [{"dest": "J"}], "junctions": { "J": [{"dest": "J"}] } } } } }"#;
        let m = model(src);
        let err = run(&m, &ev(&m, &["E", "E"])).unwrap_err();
        assert_eq!(err, SosError::JunctionCycle("J".into()));
    }

    #[test]
    fn and_children_run_in_order() {
        let src = r#"{ "events": ["E"], "data": [{"name": "x"}], "top": { "kind": "or",
            "defaults": [{"dest": "P"}], "states": { "P": { "composition": { "kind": "and", "states": {
                "L": { "during": "x := x * 2" }, "R": { "during": "x := x + 1" } } } } } } }"#;
        let m = model(src);
        let trace = run(&m, &ev(&m, &["E", "E", "E"])).unwrap();
        assert_eq!(m.render_point(&trace[1].control), "{P,P.L,P.R}");
        // (0*2)+1 = 1, then (1*2)+1 = 3
        assert_eq!(trace[3].env.0, vec![BigInt::from(3)]);
    }

    #[test]
    fn exit_runs_innermost_first() {
        let src = r#"{ "events": ["E"], "data": [{"name": "x"}], "top": { "kind": "or",
            "defaults": [{"dest": "P"}], "states": {
            "P": { "exit": "x := x * 10", "outer": [{"event": "E", "dest": "Q"}],
                   "composition": { "kind": "or", "defaults": [{"dest": "C"}], "states": {
                       "C": { "exit": "x := x + 1" } } } },
            "Q": {} } } }"#;
        let m = model(src);
        let trace = run(&m, &ev(&m, &["E", "E"])).unwrap();
        assert_eq!(trace[2].env.0, vec![BigInt::from(10)]);
    }

    #[test]
    fn bfs_toggle() {
        let m = model(models::TOGGLE);
        let t = bfs_shortest_violation(&m, &prop(&m, "x <= 0"), 5, &[]).unwrap().unwrap();
        assert_eq!(t.len(), 2);
        assert!(bfs_shortest_violation(&m, &prop(&m, "x <= 1"), 5, &[]).unwrap().is_none());
    }

    #[test]
    fn bfs_stopwatch_cent() {
        let m = model(models::STOPWATCH);
        let t = bfs_shortest_violation(&m, &prop(&m, "0 <= cent and cent <= 25"), 40, &[]).unwrap().unwrap();
        assert_eq!(t.len(), 27);
        assert_eq!(t.configs.last().unwrap().env.get(m.var("cent").unwrap()), &BigInt::from(26));
        assert!(bfs_shortest_violation(&m, &prop(&m, "cent <= 99"), 120, &[]).unwrap().is_none());
    }

    #[test]
    fn trace_dump_format() {
        let m = model(models::TOGGLE);
        let stimuli = ev(&m, &["E"]);
        let configs = run(&m, &stimuli).unwrap();
        let dump = Trace { configs, stimuli }.dump(&m);
        assert_eq!(dump, "step 0: event=- state={} data={x=0}\nstep 1: event=E state={A} data={x=0}\n");
    }
}
