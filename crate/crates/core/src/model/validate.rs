use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{join_path, Composition, Program, Role, StateDef, Transition};
use crate::lang::{is_ident, Action, Cond};

/// Name of the per-step event selector in the SMT encoding.
pub(crate) const RESERVED: &[&str] = &["ev"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DiagKind {
    BadIdent(String),
    Duplicate(String),
    Unresolved(String),
    Ambiguous(String),
    UnknownEvent(String),
    InputAssigned(String),
    /// A state destination where none is legal (And levels, leaf inner lists).
    IllegalDestination(String),
    /// `active(..)` inside a program condition.
    ActivityAtom(String),
    PathMismatch { expected: String, found: String },
    Reserved(String),
    /// Inconsistent activity markers.
    Activity(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    /// Location in the AST, e.g. `top.states.Run.inner[0].dest`.
    pub path: String,
    pub kind: DiagKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match &self.kind {
            DiagKind::BadIdent(n) => format!("malformed identifier \"{n}\""),
            DiagKind::Duplicate(n) => format!("duplicate name \"{n}\""),
            DiagKind::Unresolved(n) => format!("unresolved identifier \"{n}\""),
            DiagKind::Ambiguous(n) => format!("destination \"{n}\" names both a state and a junction"),
            DiagKind::UnknownEvent(n) => format!("event \"{n}\" is not in the alphabet"),
            DiagKind::InputAssigned(n) => format!("input assigned: \"{n}\""),
            DiagKind::IllegalDestination(n) => format!("state destination \"{n}\" is not allowed here"),
            DiagKind::ActivityAtom(n) => format!("activity atom active(\"{n}\") outside a property"),
            DiagKind::PathMismatch { expected, found } => {
                format!("composition path \"{found}\" should be \"{expected}\"")
            }
            DiagKind::Reserved(n) => format!("\"{n}\" is reserved"),
            DiagKind::Activity(m) => format!("inconsistent activity: {m}"),
        };
        write!(f, "{}: {msg}", self.path)
    }
}

/// Checks every structural invariant of a program. The result is empty iff
/// the program is well formed.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut v = Validator { p, diags: Vec::new(), vars: HashMap::new(), events: HashSet::new() };
    v.run();
    v.diags
}

struct Validator<'a> {
    p: &'a Program,
    diags: Vec<Diagnostic>,
    vars: HashMap<&'a str, Role>,
    events: HashSet<&'a str>,
}

/// What a transition list may target.
struct Scope<'a> {
    /// Child states of the level, as (local name, full path).
    states: Vec<(&'a str, String)>,
    junctions: Vec<&'a str>,
    states_allowed: bool,
}

impl<'a> Validator<'a> {
    fn push(&mut self, path: impl Into<String>, kind: DiagKind) {
        self.diags.push(Diagnostic { path: path.into(), kind });
    }

    fn run(&mut self) {
        let p = self.p;
        let state_paths: HashSet<String> = p.control_variables().into_iter().collect();
        for (i, e) in p.events.iter().enumerate() {
            let at = format!("events[{i}]");
            if !is_ident(e) {
                self.push(&at, DiagKind::BadIdent(e.clone()));
            }
            if !self.events.insert(e) {
                self.push(&at, DiagKind::Duplicate(e.clone()));
            }
        }
        for (i, d) in p.data.iter().enumerate() {
            let at = format!("data[{i}]");
            if !is_ident(&d.name) {
                self.push(&at, DiagKind::BadIdent(d.name.clone()));
            }
            if RESERVED.contains(&d.name.as_str()) {
                self.push(&at, DiagKind::Reserved(d.name.clone()));
            }
            if state_paths.contains(&d.name) || self.vars.insert(&d.name, d.role).is_some() {
                self.push(&at, DiagKind::Duplicate(d.name.clone()));
            }
        }
        match &p.top {
            Composition::Or { .. } => self.composition(&p.top, "", "top", None),
            Composition::And { .. } => {
                self.push("top", DiagKind::IllegalDestination("top-level And".into()))
            }
        }
        self.activity(&p.top, "top", true);
    }

    fn scope(&self, comp: Option<&'a Composition>, prefix: &str, owner: Option<&'a StateDef>) -> Scope<'a> {
        Scope {
            states: comp
                .map(|c| c.states().iter().map(|(n, _)| (n.as_str(), join_path(prefix, n))).collect())
                .unwrap_or_default(),
            junctions: owner.map(|sd| sd.junctions.iter().map(|(j, _)| j.as_str()).collect()).unwrap_or_default(),
            states_allowed: matches!(comp, Some(Composition::Or { .. })),
        }
    }

    /// `prefix` is the path of the state owning `comp` ("" at the top).
    fn composition(&mut self, comp: &'a Composition, prefix: &str, at: &str, owner: Option<&'a StateDef>) {
        let scope = self.scope(Some(comp), prefix, owner);
        if let Composition::Or { path, defaults, .. } = comp {
            if owner.is_some() && !path.is_empty() && path != prefix {
                self.push(at, DiagKind::PathMismatch { expected: prefix.to_string(), found: path.clone() });
            }
            self.list(defaults, &scope, &format!("{at}.defaults"));
        }
        let mut seen = HashSet::new();
        for (name, sd) in comp.states() {
            let here = format!("{at}.states.{name}");
            if !is_ident(name) {
                self.push(&here, DiagKind::BadIdent(name.clone()));
            }
            if !seen.insert(name.as_str()) {
                self.push(&here, DiagKind::Duplicate(name.clone()));
            }
            self.list(&sd.outer, &scope, &format!("{here}.outer"));
            self.state(sd, &join_path(prefix, name), &here);
        }
    }

    fn state(&mut self, sd: &'a StateDef, path: &str, at: &str) {
        self.action(&sd.entry, &format!("{at}.entry"));
        self.action(&sd.during, &format!("{at}.during"));
        self.action(&sd.exit, &format!("{at}.exit"));
        let scope = self.scope(sd.composition.as_ref(), path, Some(sd));
        self.list(&sd.inner, &scope, &format!("{at}.inner"));
        let mut seen = HashSet::new();
        for (j, list) in &sd.junctions {
            let here = format!("{at}.junctions.{j}");
            if !is_ident(j) {
                self.push(&here, DiagKind::BadIdent(j.clone()));
            }
            if !seen.insert(j.as_str()) {
                self.push(&here, DiagKind::Duplicate(j.clone()));
            }
            self.list(list, &scope, &here);
        }
        if let Some(c) = &sd.composition {
            self.composition(c, path, &format!("{at}.composition"), Some(sd));
        }
    }

    fn list(&mut self, list: &'a [Transition], scope: &Scope<'a>, at: &str) {
        for (i, t) in list.iter().enumerate() {
            let here = format!("{at}[{i}]");
            if let Some(e) = &t.event {
                if !self.events.contains(e.as_str()) {
                    self.push(format!("{here}.event"), DiagKind::UnknownEvent(e.clone()));
                }
            }
            self.cond(&t.cond, &format!("{here}.cond"));
            self.action(&t.cond_act, &format!("{here}.condAct"));
            self.action(&t.trans_act, &format!("{here}.transAct"));
            let is_state = scope.states.iter().any(|(n, p)| *n == t.dest || *p == t.dest);
            let is_junction = scope.junctions.contains(&t.dest.as_str());
            let dest_at = format!("{here}.dest");
            match (is_state, is_junction) {
                (true, true) => self.push(dest_at, DiagKind::Ambiguous(t.dest.clone())),
                (true, false) if !scope.states_allowed => {
                    self.push(dest_at, DiagKind::IllegalDestination(t.dest.clone()))
                }
                (false, false) => self.push(dest_at, DiagKind::Unresolved(t.dest.clone())),
                _ => {}
            }
        }
    }

    fn action(&mut self, a: &Action, at: &str) {
        for (lhs, rhs) in &a.assigns {
            match self.vars.get(lhs.as_str()) {
                None => self.push(at, DiagKind::Unresolved(lhs.clone())),
                Some(Role::Input) => self.push(at, DiagKind::InputAssigned(lhs.clone())),
                Some(Role::Internal) => {}
            }
            let mut missing = Vec::new();
            rhs.visit_vars(&mut |v: &String| {
                if !self.vars.contains_key(v.as_str()) {
                    missing.push(v.clone());
                }
            });
            for m in missing {
                self.push(at, DiagKind::Unresolved(m));
            }
        }
    }

    fn cond(&mut self, c: &Cond<String>, at: &str) {
        let mut missing = Vec::new();
        c.visit_vars(&mut |v: &String| {
            if !self.vars.contains_key(v.as_str()) {
                missing.push(v.clone());
            }
        });
        for m in missing {
            self.push(at, DiagKind::Unresolved(m));
        }
        let mut atoms = Vec::new();
        c.visit_active(&mut |p| atoms.push(p.to_string()));
        for a in atoms {
            self.push(at, DiagKind::ActivityAtom(a));
        }
    }

    /// Activity markers: an active Or has exactly one active child (named by
    /// `active`), an inactive composition has no active descendants, an active
    /// And has every child active.
    fn activity(&mut self, comp: &Composition, at: &str, enclosing_active: bool) {
        let active_children: Vec<&str> = match comp {
            Composition::Or { active: Some(a), states, .. } => {
                if !states.iter().any(|(n, _)| n == a) {
                    self.push(at, DiagKind::Activity(format!("active substate \"{a}\" does not exist")));
                }
                if !enclosing_active {
                    self.push(at, DiagKind::Activity("active Or inside an inactive state".into()));
                }
                vec![a.as_str()]
            }
            Composition::Or { active: None, .. } => vec![],
            Composition::And { active, states } => {
                if *active && !enclosing_active {
                    self.push(at, DiagKind::Activity("active And inside an inactive state".into()));
                }
                if *active {
                    states.iter().map(|(n, _)| n.as_str()).collect()
                } else {
                    vec![]
                }
            }
        };
        for (name, sd) in comp.states() {
            if let Some(c) = &sd.composition {
                let child_active = active_children.contains(&name.as_str());
                let here = format!("{at}.states.{name}.composition");
                let is_active = match c {
                    Composition::Or { active, .. } => active.is_some(),
                    Composition::And { active, .. } => *active,
                };
                if child_active && !is_active && c.states().iter().len() > 0 {
                    if let Composition::And { .. } = c {
                        self.push(&here, DiagKind::Activity("active state with inactive And".into()));
                    }
                }
                self.activity(c, &here, child_active);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    fn diags(src: &str) -> Vec<Diagnostic> {
        match parse_model(src) {
            Ok(_) => vec![],
            Err(e) => e.diagnostics().to_vec(),
        }
    }

    #[test]
    fn unresolved_destination_is_named() {
        let d = diags(
            r#"{ "events": ["E"], "top": { "kind": "or", "defaults": [{"dest": "A"}],
                "states": { "A": { "outer": [{"event": "E", "dest": "Zzz"}] } } } }"#,
        );
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagKind::Unresolved("Zzz".into()));
        assert_eq!(d[0].path, "top.states.A.outer[0].dest");
    }

    #[test]
    fn and_nested_in_or_is_legal() {
        let d = diags(
            r#"{ "top": { "kind": "or", "defaults": [{"dest": "P"}], "states": {
                "P": { "composition": { "kind": "and", "states": { "L": {}, "R": {} } } } } } }"#,
        );
        assert!(d.is_empty(), "{d:?}");
    }

    #[test]
    fn input_assignment_is_rejected() {
        let d = diags(
            r#"{ "data": [{"name": "u", "role": "input"}],
                "top": { "kind": "or", "states": { "A": { "entry": "u := 1" } } } }"#,
        );
        assert_eq!(d[0].kind, DiagKind::InputAssigned("u".into()));
        assert!(d[0].to_string().contains("input assigned"));
    }

    #[test]
    fn duplicates_and_clashes() {
        let d = diags(
            r#"{ "events": ["E", "E"], "data": [{"name": "A"}, {"name": "x"}, {"name": "x"}],
                "top": { "kind": "or", "states": { "A": {}, "A": {} } } }"#,
        );
        let kinds: Vec<_> = d.iter().map(|d| d.kind.clone()).collect();
        assert!(kinds.contains(&DiagKind::Duplicate("E".into())));
        assert!(kinds.contains(&DiagKind::Duplicate("A".into())));
        assert!(kinds.contains(&DiagKind::Duplicate("x".into())));
    }

    #[test]
    fn junction_scope_is_the_owning_state() {
        // `J` belongs to P, so it is visible to P's children but not to the top level.
        let ok = r#"{ "events": ["E"], "top": { "kind": "or", "defaults": [{"dest": "P"}], "states": {
            "P": { "composition": { "kind": "or", "defaults": [{"dest": "J"}], "states": { "C": {} } },
                   "junctions": { "J": [{"dest": "C"}] } } } } }"#;
        assert!(diags(ok).is_empty());
        let bad = r#"{ "top": { "kind": "or", "defaults": [{"dest": "J"}], "states": {
            "P": { "junctions": { "J": [] } } } } }"#;
        assert_eq!(diags(bad)[0].kind, DiagKind::Unresolved("J".into()));
    }

    #[test]
    fn state_destination_inside_and_is_illegal() {
        let d = diags(
            r#"{ "top": { "kind": "or", "defaults": [{"dest": "P"}], "states": {
                "P": { "composition": { "kind": "and", "states": {
                    "L": { "outer": [{"dest": "R"}] }, "R": {} } } } } } }"#,
        );
        assert_eq!(d[0].kind, DiagKind::IllegalDestination("R".into()));
    }

    #[test]
    fn reserved_and_unknown_event() {
        let d = diags(
            r#"{ "data": [{"name": "ev"}], "top": { "kind": "or", "defaults": [{"event": "GO", "dest": "A"}],
                "states": { "A": {} } } }"#,
        );
        let kinds: Vec<_> = d.iter().map(|d| d.kind.clone()).collect();
        assert!(kinds.contains(&DiagKind::Reserved("ev".into())));
        assert!(kinds.contains(&DiagKind::UnknownEvent("GO".into())));
    }
}
