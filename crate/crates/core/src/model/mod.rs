//! Program syntax: Or/And compositions, state definitions, transitions and
//! junction tables, together with the compiled, index-based [`Model`] the
//! interpreters run on.

mod compile;
mod json;
mod validate;

use num_bigint::BigInt;
use thiserror::Error;

use crate::lang::{Action, Cond};

pub use compile::{
    CTransition, CompKind, ControlPoint, Dest, EventId, JunctionId, JunctionInfo, Level, Model,
    ModelStats, StateId, StateInfo, VarInfo,
};
pub use json::{parse_model, to_json};
pub use validate::{validate, DiagKind, Diagnostic};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Role {
    #[default]
    Internal,
    Input,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataDecl {
    pub name: String,
    pub initial: Option<BigInt>,
    pub role: Role,
}

/// `(e_t, c, a_c, a_t, d)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    /// `None` is the wildcard trigger.
    pub event: Option<String>,
    pub cond: Cond<String>,
    pub cond_act: Action,
    pub trans_act: Action,
    /// A state (local name or full path) or a junction in scope.
    pub dest: String,
}

impl Transition {
    pub fn to(dest: impl Into<String>) -> Self {
        Transition {
            event: None,
            cond: Cond::Bool(true),
            cond_act: Action::default(),
            trans_act: Action::default(),
            dest: dest.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct StateDef {
    pub entry: Action,
    pub during: Action,
    pub exit: Action,
    pub composition: Option<Composition>,
    pub inner: Vec<Transition>,
    pub outer: Vec<Transition>,
    /// Junction table, in source order. Duplicate keys are kept so that
    /// validation can report them.
    pub junctions: Vec<(String, Vec<Transition>)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Composition {
    Or {
        /// Active substate `s_a`; `None` when the composition is inactive.
        active: Option<String>,
        path: String,
        defaults: Vec<Transition>,
        states: Vec<(String, StateDef)>,
    },
    And {
        active: bool,
        states: Vec<(String, StateDef)>,
    },
}

impl Composition {
    pub fn states(&self) -> &[(String, StateDef)] {
        match self {
            Composition::Or { states, .. } | Composition::And { states, .. } => states,
        }
    }

    fn states_mut(&mut self) -> &mut Vec<(String, StateDef)> {
        match self {
            Composition::Or { states, .. } | Composition::And { states, .. } => states,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub events: Vec<String>,
    pub data: Vec<DataDecl>,
    /// Always an Or composition.
    pub top: Composition,
}

impl Program {
    /// One Boolean control variable per state, named by its dotted path, in
    /// preorder.
    pub fn control_variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        fn walk(prefix: &str, comp: &Composition, out: &mut Vec<String>) {
            for (name, sd) in comp.states() {
                let path = join_path(prefix, name);
                out.push(path.clone());
                if let Some(c) = &sd.composition {
                    walk(&path, c, out);
                }
            }
        }
        walk("", &self.top, &mut out);
        out
    }

    /// Removes every activity marker.
    pub fn deactivated(&self) -> Program {
        let mut p = self.clone();
        fn clear(comp: &mut Composition) {
            match comp {
                Composition::Or { active, .. } => *active = None,
                Composition::And { active, .. } => *active = false,
            }
            for (_, sd) in comp.states_mut() {
                if let Some(c) = &mut sd.composition {
                    clear(c);
                }
            }
        }
        clear(&mut p.top);
        p
    }
}

pub(crate) fn join_path(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("schema violation at line {line}, column {column}: {message}")]
    Schema { line: usize, column: usize, message: String },
    #[error("invalid text at {path}: {message}")]
    Text { path: String, message: String },
    #[error("invalid model: {}", format_diags(.0))]
    Invalid(Vec<Diagnostic>),
}

fn format_diags(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

impl ModelError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            ModelError::Invalid(d) => d,
            _ => &[],
        }
    }
}
