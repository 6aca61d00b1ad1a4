use std::collections::{BTreeSet, HashMap};
use std::fmt;

use num_bigint::BigInt;

use super::{join_path, validate, Composition, ModelError, Program, Role, StateDef, Transition};
use crate::lang::{Action, Cond, Expr, VarId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JunctionId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub usize);

/// A composition level: the top-level Or, or the composition inside a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Level {
    Top,
    State(StateId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dest {
    State(StateId),
    Junction(JunctionId),
}

/// A transition with every name resolved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CTransition {
    pub event: Option<EventId>,
    pub cond: Cond<VarId>,
    pub cond_act: Action<VarId>,
    pub trans_act: Action<VarId>,
    pub dest: Dest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CompKind {
    Leaf,
    Or { children: Vec<StateId>, defaults: Vec<CTransition> },
    And { children: Vec<StateId> },
}

#[derive(Clone, Debug)]
pub struct StateInfo {
    pub name: String,
    pub path: String,
    pub parent: Option<StateId>,
    pub entry: Action<VarId>,
    pub during: Action<VarId>,
    pub exit: Action<VarId>,
    pub comp: CompKind,
    pub inner: Vec<CTransition>,
    pub outer: Vec<CTransition>,
    pub junctions: Vec<JunctionId>,
}

#[derive(Clone, Debug)]
pub struct JunctionInfo {
    pub name: String,
    pub owner: StateId,
    pub transitions: Vec<CTransition>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarInfo {
    pub name: String,
    pub role: Role,
    pub initial: Option<BigInt>,
}

/// The set of active states. The empty point is `Or_∅`.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ControlPoint(pub BTreeSet<StateId>);

impl ControlPoint {
    pub fn empty() -> Self {
        ControlPoint::default()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, s: StateId) -> bool {
        self.0.contains(&s)
    }

    pub fn iter(&self) -> impl Iterator<Item = StateId> + '_ {
        self.0.iter().copied()
    }
}

/// A validated program in index form, ready for the interpreters.
#[derive(Clone, Debug)]
pub struct Model {
    pub program: Program,
    /// Preorder; `StateId(i)` is the i-th control variable.
    pub states: Vec<StateInfo>,
    pub junctions: Vec<JunctionInfo>,
    pub vars: Vec<VarInfo>,
    pub events: Vec<String>,
    pub top_children: Vec<StateId>,
    pub top_defaults: Vec<CTransition>,
    var_names: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelStats {
    pub states: usize,
    pub leaves: usize,
    pub junctions: usize,
    pub transitions: usize,
}

impl Model {
    pub fn compile(p: &Program) -> Result<Model, ModelError> {
        let diags = validate(p);
        if !diags.is_empty() {
            return Err(ModelError::Invalid(diags));
        }
        Ok(Compiler::new(p).run())
    }

    pub fn from_json(text: &str) -> Result<Model, ModelError> {
        Model::compile(&super::parse_model(text)?)
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn var(&self, name: &str) -> Option<VarId> {
        self.var_names.iter().position(|n| n == name).map(VarId)
    }

    pub fn event(&self, name: &str) -> Option<EventId> {
        self.events.iter().position(|n| n == name).map(EventId)
    }

    pub fn state(&self, path: &str) -> Option<StateId> {
        self.states.iter().position(|s| s.path == path).map(StateId)
    }

    pub fn info(&self, s: StateId) -> &StateInfo {
        &self.states[s.0]
    }

    pub fn inputs(&self) -> impl Iterator<Item = VarId> + '_ {
        self.vars.iter().enumerate().filter(|(_, v)| v.role == Role::Input).map(|(i, _)| VarId(i))
    }

    pub fn has_inputs(&self) -> bool {
        self.inputs().next().is_some()
    }

    pub fn children(&self, level: Level) -> &[StateId] {
        match level {
            Level::Top => &self.top_children,
            Level::State(s) => match &self.states[s.0].comp {
                CompKind::Leaf => &[],
                CompKind::Or { children, .. } | CompKind::And { children } => children,
            },
        }
    }

    /// Parent level of a state.
    pub fn level_of(&self, s: StateId) -> Level {
        self.states[s.0].parent.map_or(Level::Top, Level::State)
    }

    /// Declared initials; undeclared values default to 0.
    pub fn initial_env(&self) -> crate::lang::Env {
        crate::lang::Env(self.vars.iter().map(|v| v.initial.clone().unwrap_or_default()).collect())
    }

    pub fn stats(&self) -> ModelStats {
        let mut transitions = self.top_defaults.len();
        for s in &self.states {
            transitions += s.inner.len() + s.outer.len();
            if let CompKind::Or { defaults, .. } = &s.comp {
                transitions += defaults.len();
            }
        }
        transitions += self.junctions.iter().map(|j| j.transitions.len()).sum::<usize>();
        ModelStats {
            states: self.states.len(),
            leaves: self.states.iter().filter(|s| s.comp == CompKind::Leaf).count(),
            junctions: self.junctions.len(),
            transitions,
        }
    }

    /// Checks the activity invariant: a state is active only under an active
    /// parent, an active Or (or a non-empty top level) has exactly one active
    /// child, an active And has all of its children active.
    pub fn check_activity(&self, cp: &ControlPoint) -> Result<(), String> {
        let top_active = self.top_children.iter().filter(|c| cp.contains(**c)).count();
        if top_active > 1 {
            return Err("more than one active state at the top level".into());
        }
        for s in cp.iter() {
            let info = self.states.get(s.0).ok_or_else(|| format!("unknown state id {}", s.0))?;
            if let Some(p) = info.parent {
                if !cp.contains(p) {
                    return Err(format!("{} is active under an inactive parent", info.path));
                }
            }
            match &info.comp {
                CompKind::Leaf => {}
                CompKind::Or { children, .. } => {
                    let n = children.iter().filter(|c| cp.contains(**c)).count();
                    if n > 1 {
                        return Err(format!("{} has {n} active substates", info.path));
                    }
                }
                CompKind::And { children } => {
                    if children.iter().any(|c| !cp.contains(*c)) {
                        return Err(format!("{} is an active And with an inactive substate", info.path));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads the activity markers of `p`.
    pub fn control_point_of(&self, p: &Program) -> ControlPoint {
        let mut out = ControlPoint::empty();
        fn walk(m: &Model, prefix: &str, comp: &Composition, out: &mut ControlPoint) {
            let active: Vec<&str> = match comp {
                Composition::Or { active, .. } => active.iter().map(|a| a.as_str()).collect(),
                Composition::And { active: true, states } => states.iter().map(|(n, _)| n.as_str()).collect(),
                Composition::And { active: false, .. } => vec![],
            };
            for (name, sd) in comp.states() {
                if !active.contains(&name.as_str()) {
                    continue;
                }
                let path = join_path(prefix, name);
                if let Some(id) = m.state(&path) {
                    out.0.insert(id);
                }
                if let Some(c) = &sd.composition {
                    walk(m, &path, c, out);
                }
            }
        }
        walk(self, "", &p.top, &mut out);
        out
    }

    /// The program with activity markers set according to `cp`.
    pub fn mark(&self, cp: &ControlPoint) -> Program {
        let mut p = self.program.deactivated();
        fn walk(m: &Model, prefix: &str, comp: &mut Composition, cp: &ControlPoint, enclosing: bool) {
            let mut any_active = false;
            let mut active_name = None;
            for (name, sd) in comp.states_mut().iter_mut() {
                let path = join_path(prefix, name);
                let on = m.state(&path).is_some_and(|id| cp.contains(id));
                if on {
                    any_active = true;
                    active_name = Some(name.clone());
                }
                if let Some(c) = &mut sd.composition {
                    walk(m, &path, c, cp, on);
                }
            }
            match comp {
                Composition::Or { active, .. } => *active = active_name,
                Composition::And { active, .. } => *active = enclosing && any_active,
            }
        }
        walk(self, "", &mut p.top, cp, true);
        p
    }

    pub fn render_point(&self, cp: &ControlPoint) -> String {
        let paths: Vec<&str> = cp.iter().map(|s| self.states[s.0].path.as_str()).collect();
        format!("{{{}}}", paths.join(","))
    }

    pub fn point_paths(&self, cp: &ControlPoint) -> Vec<String> {
        cp.iter().map(|s| self.states[s.0].path.clone()).collect()
    }

    pub fn point_from_paths<S: AsRef<str>>(&self, paths: &[S]) -> Result<ControlPoint, String> {
        let mut cp = ControlPoint::empty();
        for p in paths {
            let id = self.state(p.as_ref()).ok_or_else(|| format!("unknown state \"{}\"", p.as_ref()))?;
            cp.0.insert(id);
        }
        Ok(cp)
    }

    /// Resolves a property or guard text over data variable names; activity
    /// atoms must name existing states.
    pub fn resolve_cond(&self, c: &Cond<String>) -> Result<Cond<VarId>, String> {
        let mut missing = None;
        let out = c.map_vars(&mut |n: &String| match self.var(n) {
            Some(v) => v,
            None => {
                missing.get_or_insert_with(|| n.clone());
                VarId(usize::MAX)
            }
        });
        if let Some(n) = missing {
            return Err(format!("unknown variable \"{n}\""));
        }
        let mut bad = None;
        out.visit_active(&mut |p| {
            if self.state(p).is_none() {
                bad.get_or_insert_with(|| p.to_string());
            }
        });
        match bad {
            Some(p) => Err(format!("unknown state \"{p}\" in active(..)")),
            None => Ok(out),
        }
    }

    pub fn resolve_expr(&self, e: &Expr<String>) -> Result<Expr<VarId>, String> {
        let mut missing = None;
        let out = e.map_vars(&mut |n: &String| match self.var(n) {
            Some(v) => v,
            None => {
                missing.get_or_insert_with(|| n.clone());
                VarId(usize::MAX)
            }
        });
        match missing {
            Some(n) => Err(format!("unknown variable \"{n}\"")),
            None => Ok(out),
        }
    }

    pub fn render_env(&self, env: &crate::lang::Env) -> String {
        let items: Vec<String> =
            self.var_names.iter().zip(&env.0).map(|(n, v)| format!("{n}={v}")).collect();
        format!("{{{}}}", items.join(","))
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

struct Compiler<'a> {
    p: &'a Program,
    states: Vec<StateInfo>,
    junctions: Vec<JunctionInfo>,
    vars: HashMap<&'a str, VarId>,
    events: HashMap<&'a str, EventId>,
}

impl<'a> Compiler<'a> {
    fn new(p: &'a Program) -> Self {
        Compiler {
            p,
            states: Vec::new(),
            junctions: Vec::new(),
            vars: p.data.iter().enumerate().map(|(i, d)| (d.name.as_str(), VarId(i))).collect(),
            events: p.events.iter().enumerate().map(|(i, e)| (e.as_str(), EventId(i))).collect(),
        }
    }

    fn run(mut self) -> Model {
        // Pass 1 allocates ids in preorder; pass 2 resolves transitions.
        let top_children = self.allocate(&self.p.top, "", None);
        self.resolve_comp(&self.p.top, "", None);
        let top_defaults = match &self.p.top {
            Composition::Or { defaults, .. } => self.list(defaults, Level::Top),
            Composition::And { .. } => unreachable!("validated"),
        };
        let vars: Vec<VarInfo> = self
            .p
            .data
            .iter()
            .map(|d| VarInfo { name: d.name.clone(), role: d.role, initial: d.initial.clone() })
            .collect();
        Model {
            program: self.p.clone(),
            var_names: vars.iter().map(|v| v.name.clone()).collect(),
            vars,
            events: self.p.events.clone(),
            states: self.states,
            junctions: self.junctions,
            top_children,
            top_defaults,
        }
    }

    fn allocate(&mut self, comp: &'a Composition, prefix: &str, parent: Option<StateId>) -> Vec<StateId> {
        let mut ids = Vec::new();
        for (name, sd) in comp.states() {
            let id = StateId(self.states.len());
            ids.push(id);
            let path = join_path(prefix, name);
            self.states.push(StateInfo {
                name: name.clone(),
                path: path.clone(),
                parent,
                entry: self.action(&sd.entry),
                during: self.action(&sd.during),
                exit: self.action(&sd.exit),
                comp: CompKind::Leaf,
                inner: vec![],
                outer: vec![],
                junctions: vec![],
            });
            for (j, _) in &sd.junctions {
                let jid = JunctionId(self.junctions.len());
                self.junctions.push(JunctionInfo { name: j.clone(), owner: id, transitions: vec![] });
                self.states[id.0].junctions.push(jid);
            }
            let children = match &sd.composition {
                Some(c) => self.allocate(c, &path, Some(id)),
                None => vec![],
            };
            self.states[id.0].comp = match &sd.composition {
                None => CompKind::Leaf,
                Some(Composition::Or { .. }) => CompKind::Or { children, defaults: vec![] },
                Some(Composition::And { .. }) => CompKind::And { children },
            };
        }
        ids
    }

    fn resolve_comp(&mut self, comp: &'a Composition, prefix: &str, owner: Option<StateId>) {
        let level = owner.map_or(Level::Top, Level::State);
        for (name, sd) in comp.states() {
            let path = join_path(prefix, name);
            let id = StateId(self.states.iter().position(|s| s.path == path).expect("allocated"));
            self.resolve_state(sd, id);
            let outer = self.list(&sd.outer, level);
            self.states[id.0].outer = outer;
        }
    }

    fn resolve_state(&mut self, sd: &'a StateDef, id: StateId) {
        let here = Level::State(id);
        let inner = self.list(&sd.inner, here);
        self.states[id.0].inner = inner;
        for (k, (_, list)) in sd.junctions.iter().enumerate() {
            let jid = self.states[id.0].junctions[k];
            let ts = self.list(list, here);
            self.junctions[jid.0].transitions = ts;
        }
        if let Some(c) = &sd.composition {
            if let Composition::Or { defaults, .. } = c {
                let ds = self.list(defaults, here);
                if let CompKind::Or { defaults, .. } = &mut self.states[id.0].comp {
                    *defaults = ds;
                }
            }
            let path = self.states[id.0].path.clone();
            self.resolve_comp(c, &path, Some(id));
        }
    }

    fn action(&self, a: &Action) -> Action<VarId> {
        a.map_vars(&mut |n: &String| self.vars[n.as_str()])
    }

    fn list(&self, list: &[Transition], level: Level) -> Vec<CTransition> {
        list.iter()
            .map(|t| CTransition {
                event: t.event.as_ref().map(|e| self.events[e.as_str()]),
                cond: t.cond.map_vars(&mut |n: &String| self.vars[n.as_str()]),
                cond_act: self.action(&t.cond_act),
                trans_act: self.action(&t.trans_act),
                dest: self.dest(&t.dest, level),
            })
            .collect()
    }

    fn dest(&self, d: &str, level: Level) -> Dest {
        let (children, prefix): (Vec<StateId>, String) = match level {
            Level::Top => (
                self.states.iter().enumerate().filter(|(_, s)| s.parent.is_none()).map(|(i, _)| StateId(i)).collect(),
                String::new(),
            ),
            Level::State(s) => (
                self.states.iter().enumerate().filter(|(_, x)| x.parent == Some(s)).map(|(i, _)| StateId(i)).collect(),
                self.states[s.0].path.clone(),
            ),
        };
        for c in children {
            let info = &self.states[c.0];
            if info.name == d || info.path == d || join_path(&prefix, d) == info.path {
                return Dest::State(c);
            }
        }
        if let Level::State(s) = level {
            for j in &self.states[s.0].junctions {
                if self.junctions[j.0].name == d {
                    return Dest::Junction(*j);
                }
            }
        }
        unreachable!("destination \"{d}\" survived validation unresolved")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    const NESTED: &str = r#"{ "events": ["E"], "data": [{"name": "x", "initial": 3}],
        "top": { "kind": "or", "defaults": [{"dest": "A"}], "states": {
            "A": { "outer": [{"event": "E", "dest": "B"}] },
            "B": { "composition": { "kind": "or", "defaults": [{"dest": "C"}], "states": { "C": {} } } } } } }"#;

    #[test]
    fn preorder_ids_and_resolution() {
        let m = Model::compile(&parse_model(NESTED).unwrap()).unwrap();
        let paths: Vec<_> = m.states.iter().map(|s| s.path.as_str()).collect();
        assert_eq!(paths, ["A", "B", "B.C"]);
        assert_eq!(m.states[0].outer[0].dest, Dest::State(StateId(1)));
        assert_eq!(m.states[2].parent, Some(StateId(1)));
        assert_eq!(m.initial_env().0, vec![BigInt::from(3)]);
        assert_eq!(m.stats(), ModelStats { states: 3, leaves: 2, junctions: 0, transitions: 3 });
    }

    #[test]
    fn mark_and_read_back() {
        let m = Model::compile(&parse_model(NESTED).unwrap()).unwrap();
        let cp = m.point_from_paths(&["B", "B.C"]).unwrap();
        assert!(m.check_activity(&cp).is_ok());
        let marked = m.mark(&cp);
        assert_eq!(m.control_point_of(&marked), cp);
        assert!(crate::model::validate(&marked).is_empty());
        assert!(m.control_point_of(&m.program).is_empty());
        assert_eq!(m.render_point(&cp), "{B,B.C}");
    }

    #[test]
    fn activity_violations() {
        let m = Model::compile(&parse_model(NESTED).unwrap()).unwrap();
        assert!(m.check_activity(&m.point_from_paths(&["A", "B"]).unwrap()).is_err());
        assert!(m.check_activity(&m.point_from_paths(&["B.C"]).unwrap()).is_err());
    }

    #[test]
    fn property_resolution() {
        let m = Model::compile(&parse_model(NESTED).unwrap()).unwrap();
        let c = crate::lang::parse_cond("active(\"B.C\") implies x >= 0").unwrap();
        assert!(m.resolve_cond(&c).is_ok());
        let bad = crate::lang::parse_cond("active(\"Q\")").unwrap();
        assert!(m.resolve_cond(&bad).is_err());
        let unknown = crate::lang::parse_cond("y > 0").unwrap();
        assert!(m.resolve_cond(&unknown).unwrap_err().contains("\"y\""));
    }
}
