//! The bundled JSON model format.
//!
//! ```text
//! { "events": [name...],
//!   "data":   [{"name", "initial"?, "role"? ("internal" | "input")}...],
//!   "top":    orNode }
//! orNode     = {"kind": "or", "path"?, "defaults": [transition...], "states": {name: stateDef}}
//! andNode    = {"kind": "and", "states": {name: stateDef}}
//! stateDef   = {"entry"?, "during"?, "exit"?, "composition"?: orNode | andNode,
//!               "inner"?: [transition...], "outer"?: [transition...],
//!               "junctions"?: {name: [transition...]}}
//! transition = {"event"?, "cond"?, "condAct"?, "transAct"?, "dest"}
//! ```
//!
//! Object keys keep their source order; list order is transition priority.

use std::fmt;
use std::marker::PhantomData;

use num_bigint::BigInt;
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Composition, DataDecl, ModelError, Program, Role, StateDef, Transition};
use crate::lang::{parse_action, parse_cond, Action, Cond};

/// An order-preserving JSON object that keeps duplicate keys.
#[derive(Debug, Default)]
struct Entries<T>(Vec<(String, T)>);

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Entries<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V<T>(PhantomData<T>);
        impl<'de, T: Deserialize<'de>> Visitor<'de> for V<T> {
            type Value = Entries<T>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, T>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        d.deserialize_map(V(PhantomData))
    }
}

impl<T: Serialize> Serialize for Entries<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawProgram {
    #[serde(default)]
    events: Vec<String>,
    #[serde(default)]
    data: Vec<RawData>,
    top: RawComposition,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    role: Option<RawRole>,
}

#[derive(Debug, Deserialize, Serialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum RawRole {
    Internal,
    Input,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawComposition {
    Or {
        #[serde(default, skip_serializing_if = "String::is_empty")]
        path: String,
        #[serde(default)]
        defaults: Vec<RawTransition>,
        states: Entries<RawState>,
    },
    And {
        states: Entries<RawState>,
    },
}

#[derive(Debug, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
struct RawState {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    entry: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    during: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    exit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    composition: Option<RawComposition>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    inner: Vec<RawTransition>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    outer: Vec<RawTransition>,
    #[serde(default, skip_serializing_if = "entries_empty")]
    junctions: Entries<Vec<RawTransition>>,
}

fn entries_empty<T>(e: &Entries<T>) -> bool {
    e.0.is_empty()
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawTransition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    event: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cond: Option<String>,
    #[serde(default, rename = "condAct", skip_serializing_if = "Option::is_none")]
    cond_act: Option<String>,
    #[serde(default, rename = "transAct", skip_serializing_if = "Option::is_none")]
    trans_act: Option<String>,
    dest: String,
}

/// Parses and validates a JSON model.
pub fn parse_model(json_text: &str) -> Result<Program, ModelError> {
    let raw: RawProgram = serde_json::from_str(json_text).map_err(|e| {
        let (line, column, message) = (e.line(), e.column(), e.to_string());
        if e.is_data() {
            ModelError::Schema { line, column, message }
        } else {
            ModelError::Syntax { line, column, message }
        }
    })?;
    let program = convert_program(raw)?;
    let diags = super::validate(&program);
    if diags.is_empty() {
        Ok(program)
    } else {
        Err(ModelError::Invalid(diags))
    }
}

/// Serializes a program back into the JSON model format. Activity markers
/// are not part of the format and are dropped.
pub fn to_json(p: &Program) -> String {
    serde_json::to_string_pretty(&raw_program(p)).expect("serializable")
}

fn convert_program(raw: RawProgram) -> Result<Program, ModelError> {
    let data = raw
        .data
        .into_iter()
        .map(|d| DataDecl {
            name: d.name,
            initial: d.initial.map(BigInt::from),
            role: match d.role {
                Some(RawRole::Input) => Role::Input,
                _ => Role::Internal,
            },
        })
        .collect();
    Ok(Program { events: raw.events, data, top: convert_comp(raw.top, "top")? })
}

fn convert_comp(raw: RawComposition, at: &str) -> Result<Composition, ModelError> {
    Ok(match raw {
        RawComposition::Or { path, defaults, states } => Composition::Or {
            active: None,
            path,
            defaults: convert_list(defaults, &format!("{at}.defaults"))?,
            states: convert_states(states, at)?,
        },
        RawComposition::And { states } => {
            Composition::And { active: false, states: convert_states(states, at)? }
        }
    })
}

fn convert_states(
    states: Entries<RawState>,
    at: &str,
) -> Result<Vec<(String, StateDef)>, ModelError> {
    states
        .0
        .into_iter()
        .map(|(name, s)| {
            let here = format!("{at}.states.{name}");
            let sd = StateDef {
                entry: text_action(&s.entry, &format!("{here}.entry"))?,
                during: text_action(&s.during, &format!("{here}.during"))?,
                exit: text_action(&s.exit, &format!("{here}.exit"))?,
                composition: s
                    .composition
                    .map(|c| convert_comp(c, &format!("{here}.composition")))
                    .transpose()?,
                inner: convert_list(s.inner, &format!("{here}.inner"))?,
                outer: convert_list(s.outer, &format!("{here}.outer"))?,
                junctions: s
                    .junctions
                    .0
                    .into_iter()
                    .map(|(j, ts)| {
                        let list = convert_list(ts, &format!("{here}.junctions.{j}"))?;
                        Ok((j, list))
                    })
                    .collect::<Result<_, ModelError>>()?,
            };
            Ok((name, sd))
        })
        .collect()
}

fn convert_list(list: Vec<RawTransition>, at: &str) -> Result<Vec<Transition>, ModelError> {
    list.into_iter()
        .enumerate()
        .map(|(i, t)| {
            let here = format!("{at}[{i}]");
            Ok(Transition {
                event: t.event,
                cond: match &t.cond {
                    Some(c) => parse_cond(c).map_err(|e| ModelError::Text {
                        path: format!("{here}.cond"),
                        message: e.to_string(),
                    })?,
                    None => Cond::Bool(true),
                },
                cond_act: text_action(t.cond_act.as_deref().unwrap_or(""), &format!("{here}.condAct"))?,
                trans_act: text_action(
                    t.trans_act.as_deref().unwrap_or(""),
                    &format!("{here}.transAct"),
                )?,
                dest: t.dest,
            })
        })
        .collect()
}

fn text_action(text: &str, path: &str) -> Result<Action, ModelError> {
    parse_action(text)
        .map_err(|e| ModelError::Text { path: path.to_string(), message: e.to_string() })
}

fn raw_program(p: &Program) -> RawProgram {
    RawProgram {
        events: p.events.clone(),
        data: p
            .data
            .iter()
            .map(|d| RawData {
                name: d.name.clone(),
                initial: d.initial.as_ref().map(|n| i64::try_from(n).expect("initial value fits i64")),
                role: (d.role == Role::Input).then_some(RawRole::Input),
            })
            .collect(),
        top: raw_comp(&p.top),
    }
}

fn raw_comp(c: &Composition) -> RawComposition {
    match c {
        Composition::Or { path, defaults, states, .. } => RawComposition::Or {
            path: path.clone(),
            defaults: defaults.iter().map(raw_transition).collect(),
            states: raw_states(states),
        },
        Composition::And { states, .. } => RawComposition::And { states: raw_states(states) },
    }
}

fn raw_states(states: &[(String, StateDef)]) -> Entries<RawState> {
    Entries(
        states
            .iter()
            .map(|(name, sd)| {
                (
                    name.clone(),
                    RawState {
                        entry: sd.entry.to_string(),
                        during: sd.during.to_string(),
                        exit: sd.exit.to_string(),
                        composition: sd.composition.as_ref().map(raw_comp),
                        inner: sd.inner.iter().map(raw_transition).collect(),
                        outer: sd.outer.iter().map(raw_transition).collect(),
                        junctions: Entries(
                            sd.junctions
                                .iter()
                                .map(|(j, ts)| (j.clone(), ts.iter().map(raw_transition).collect()))
                                .collect(),
                        ),
                    },
                )
            })
            .collect(),
    )
}

fn raw_transition(t: &Transition) -> RawTransition {
    let opt = |a: &Action| (!a.is_empty()).then(|| a.to_string());
    RawTransition {
        event: t.event.clone(),
        cond: (!t.cond.is_true()).then(|| t.cond.to_string()),
        cond_act: opt(&t.cond_act),
        trans_act: opt(&t.trans_act),
        dest: t.dest.clone(),
    }
}
