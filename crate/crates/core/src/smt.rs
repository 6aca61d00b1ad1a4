//! SMT-LIB term rendering for expressions and conditions.

use num_bigint::BigInt;
use num_traits::Signed;

use crate::lang::{CmpOp, Cond, Expr};

pub fn int(n: &BigInt) -> String {
    if n.is_negative() {
        format!("(- {})", n.abs())
    } else {
        n.to_string()
    }
}

pub fn expr<V>(e: &Expr<V>, name: &mut dyn FnMut(&V) -> String) -> String {
    match e {
        Expr::Const(n) => int(n),
        Expr::Var(v) => name(v),
        Expr::Add(a, b) => format!("(+ {} {})", expr(a, name), expr(b, name)),
        Expr::Sub(a, b) => format!("(- {} {})", expr(a, name), expr(b, name)),
        Expr::Neg(a) => format!("(- {})", expr(a, name)),
        Expr::Mul(k, a) => format!("(* {} {})", int(k), expr(a, name)),
    }
}

/// `active` renders an `active("path")` atom; program conditions never
/// contain one.
pub fn cond<V>(c: &Cond<V>, name: &mut dyn FnMut(&V) -> String, active: &mut dyn FnMut(&str) -> String) -> String {
    match c {
        Cond::Bool(b) => b.to_string(),
        Cond::Cmp(op, a, b) => {
            let (a, b) = (expr(a, name), expr(b, name));
            match op {
                CmpOp::Ne => format!("(not (= {a} {b}))"),
                _ => format!("({} {a} {b})", op.symbol()),
            }
        }
        Cond::Not(a) => format!("(not {})", cond(a, name, active)),
        Cond::And(cs) => nary("and", "true", cs, name, active),
        Cond::Or(cs) => nary("or", "false", cs, name, active),
        Cond::Implies(a, b) => format!("(=> {} {})", cond(a, name, active), cond(b, name, active)),
        Cond::Active(p) => active(p),
    }
}

fn nary<V>(
    op: &str,
    unit: &str,
    cs: &[Cond<V>],
    name: &mut dyn FnMut(&V) -> String,
    active: &mut dyn FnMut(&str) -> String,
) -> String {
    match cs {
        [] => unit.to_string(),
        [c] => cond(c, name, active),
        _ => {
            let parts: Vec<String> = cs.iter().map(|c| cond(c, name, active)).collect();
            format!("({op} {})", parts.join(" "))
        }
    }
}

/// `(and a b ...)` over already rendered terms.
pub fn and(terms: &[String]) -> String {
    match terms {
        [] => "true".into(),
        [t] => t.clone(),
        _ => format!("(and {})", terms.join(" ")),
    }
}

pub fn or(terms: &[String]) -> String {
    match terms {
        [] => "false".into(),
        [t] => t.clone(),
        _ => format!("(or {})", terms.join(" ")),
    }
}
