//! Linear integer expressions and quantifier-free conditions.
//!
//! Both trees are generic over the variable type so the same structure
//! serves program text (`String`), compiled programs ([`VarId`]) and
//! symbolic values ([`Sym`](super::Sym)).

use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Zero};

/// Index of a data variable in a compiled model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr<V> {
    Const(BigInt),
    Var(V),
    Add(Box<Expr<V>>, Box<Expr<V>>),
    Sub(Box<Expr<V>>, Box<Expr<V>>),
    Neg(Box<Expr<V>>),
    /// Constant multiplier; keeps the language linear.
    Mul(BigInt, Box<Expr<V>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn holds(self, lhs: &BigInt, rhs: &BigInt) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Cond<V> {
    Bool(bool),
    Cmp(CmpOp, Expr<V>, Expr<V>),
    Not(Box<Cond<V>>),
    And(Vec<Cond<V>>),
    Or(Vec<Cond<V>>),
    Implies(Box<Cond<V>>, Box<Cond<V>>),
    /// `active("Run.Running")`; only legal in properties.
    Active(String),
}

impl<V> Expr<V> {
    pub fn var(v: V) -> Self {
        Expr::Var(v)
    }

    pub fn constant(n: impl Into<BigInt>) -> Self {
        Expr::Const(n.into())
    }

    pub fn as_const(&self) -> Option<&BigInt> {
        match self {
            Expr::Const(n) => Some(n),
            _ => None,
        }
    }

    /// Replaces every variable by the expression `f` returns for it.
    pub fn subst<W>(&self, f: &mut impl FnMut(&V) -> Expr<W>) -> Expr<W> {
        match self {
            Expr::Const(n) => Expr::Const(n.clone()),
            Expr::Var(v) => f(v),
            Expr::Add(a, b) => Expr::Add(Box::new(a.subst(f)), Box::new(b.subst(f))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.subst(f)), Box::new(b.subst(f))),
            Expr::Neg(a) => Expr::Neg(Box::new(a.subst(f))),
            Expr::Mul(k, a) => Expr::Mul(k.clone(), Box::new(a.subst(f))),
        }
    }

    pub fn map_vars<W>(&self, f: &mut impl FnMut(&V) -> W) -> Expr<W> {
        self.subst(&mut |v| Expr::Var(f(v)))
    }

    /// Evaluates under a partial valuation; `None` if some variable is unbound.
    pub fn try_eval(&self, val: &impl Fn(&V) -> Option<BigInt>) -> Option<BigInt> {
        Some(match self {
            Expr::Const(n) => n.clone(),
            Expr::Var(v) => val(v)?,
            Expr::Add(a, b) => a.try_eval(val)? + b.try_eval(val)?,
            Expr::Sub(a, b) => a.try_eval(val)? - b.try_eval(val)?,
            Expr::Neg(a) => -a.try_eval(val)?,
            Expr::Mul(k, a) => k * a.try_eval(val)?,
        })
    }

    pub fn eval(&self, val: &impl Fn(&V) -> BigInt) -> BigInt {
        match self {
            Expr::Const(n) => n.clone(),
            Expr::Var(v) => val(v),
            Expr::Add(a, b) => a.eval(val) + b.eval(val),
            Expr::Sub(a, b) => a.eval(val) - b.eval(val),
            Expr::Neg(a) => -a.eval(val),
            Expr::Mul(k, a) => k * a.eval(val),
        }
    }

    pub fn visit_vars<'a>(&'a self, f: &mut impl FnMut(&'a V)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => f(v),
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
            Expr::Neg(a) | Expr::Mul(_, a) => a.visit_vars(f),
        }
    }
}

impl<V: Clone> Expr<V> {
    /// Constant folding and flattening of sums.
    ///
    /// The result is a left-nested chain `t1 ± t2 ± ... ± c` where the `ti`
    /// are non-constant terms in source order and `c` is the folded constant
    /// (omitted when zero).
    pub fn simplify(&self) -> Expr<V> {
        let mut terms = Vec::new();
        let mut constant = BigInt::zero();
        collect_terms(self, true, &mut terms, &mut constant);
        let mut out: Option<Expr<V>> = None;
        for (positive, term) in terms {
            out = Some(match out {
                None if positive => term,
                None => match term {
                    Expr::Mul(k, inner) => Expr::Mul(-k, inner),
                    other => Expr::Neg(Box::new(other)),
                },
                Some(acc) if positive => Expr::Add(Box::new(acc), Box::new(term)),
                Some(acc) => Expr::Sub(Box::new(acc), Box::new(term)),
            });
        }
        match out {
            None => Expr::Const(constant),
            Some(acc) if constant.is_zero() => acc,
            Some(acc) if constant > BigInt::zero() => {
                Expr::Add(Box::new(acc), Box::new(Expr::Const(constant)))
            }
            Some(acc) => Expr::Sub(Box::new(acc), Box::new(Expr::Const(-constant))),
        }
    }
}

fn collect_terms<V: Clone>(
    e: &Expr<V>,
    positive: bool,
    terms: &mut Vec<(bool, Expr<V>)>,
    constant: &mut BigInt,
) {
    match e {
        Expr::Const(n) => {
            if positive {
                *constant += n
            } else {
                *constant -= n
            }
        }
        Expr::Var(_) => terms.push((positive, e.clone())),
        Expr::Add(a, b) => {
            collect_terms(a, positive, terms, constant);
            collect_terms(b, positive, terms, constant);
        }
        Expr::Sub(a, b) => {
            collect_terms(a, positive, terms, constant);
            collect_terms(b, !positive, terms, constant);
        }
        Expr::Neg(a) => collect_terms(a, !positive, terms, constant),
        Expr::Mul(k, a) => {
            let inner = a.simplify();
            match inner {
                Expr::Const(n) => collect_terms(&Expr::Const(k * n), positive, terms, constant),
                _ if k.is_zero() => {}
                _ if k.is_one() => collect_terms(&inner, positive, terms, constant),
                _ if *k == -BigInt::one() => collect_terms(&inner, !positive, terms, constant),
                Expr::Mul(j, b) => terms.push((positive, Expr::Mul(k * j, b))),
                Expr::Var(_) if k < &BigInt::zero() => {
                    terms.push((!positive, Expr::Mul(-k, Box::new(inner))))
                }
                other => terms.push((positive, Expr::Mul(k.clone(), Box::new(other)))),
            }
        }
    }
}

impl<V> Cond<V> {
    pub fn not(c: Cond<V>) -> Self {
        Cond::Not(Box::new(c))
    }

    pub fn and(mut cs: Vec<Cond<V>>) -> Self {
        match cs.len() {
            0 => Cond::Bool(true),
            1 => cs.pop().unwrap(),
            _ => Cond::And(cs),
        }
    }

    pub fn or(mut cs: Vec<Cond<V>>) -> Self {
        match cs.len() {
            0 => Cond::Bool(false),
            1 => cs.pop().unwrap(),
            _ => Cond::Or(cs),
        }
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Cond::Bool(true))
    }

    pub fn subst<W>(&self, f: &mut impl FnMut(&V) -> Expr<W>) -> Cond<W> {
        match self {
            Cond::Bool(b) => Cond::Bool(*b),
            Cond::Cmp(op, a, b) => Cond::Cmp(*op, a.subst(f), b.subst(f)),
            Cond::Not(c) => Cond::Not(Box::new(c.subst(f))),
            Cond::And(cs) => Cond::And(cs.iter().map(|c| c.subst(f)).collect()),
            Cond::Or(cs) => Cond::Or(cs.iter().map(|c| c.subst(f)).collect()),
            Cond::Implies(a, b) => Cond::Implies(Box::new(a.subst(f)), Box::new(b.subst(f))),
            Cond::Active(p) => Cond::Active(p.clone()),
        }
    }

    pub fn map_vars<W>(&self, f: &mut impl FnMut(&V) -> W) -> Cond<W> {
        self.subst(&mut |v| Expr::Var(f(v)))
    }

    /// Evaluates under a partial valuation; activity atoms are answered by `active`.
    pub fn try_eval(
        &self,
        val: &impl Fn(&V) -> Option<BigInt>,
        active: &impl Fn(&str) -> bool,
    ) -> Option<bool> {
        Some(match self {
            Cond::Bool(b) => *b,
            Cond::Cmp(op, a, b) => op.holds(&a.try_eval(val)?, &b.try_eval(val)?),
            Cond::Not(c) => !c.try_eval(val, active)?,
            Cond::And(cs) => {
                for c in cs {
                    if !c.try_eval(val, active)? {
                        return Some(false);
                    }
                }
                true
            }
            Cond::Or(cs) => {
                for c in cs {
                    if c.try_eval(val, active)? {
                        return Some(true);
                    }
                }
                false
            }
            Cond::Implies(a, b) => !a.try_eval(val, active)? || b.try_eval(val, active)?,
            Cond::Active(p) => active(p),
        })
    }

    pub fn eval(&self, val: &impl Fn(&V) -> BigInt, active: &impl Fn(&str) -> bool) -> bool {
        match self {
            Cond::Bool(b) => *b,
            Cond::Cmp(op, a, b) => op.holds(&a.eval(val), &b.eval(val)),
            Cond::Not(c) => !c.eval(val, active),
            Cond::And(cs) => cs.iter().all(|c| c.eval(val, active)),
            Cond::Or(cs) => cs.iter().any(|c| c.eval(val, active)),
            Cond::Implies(a, b) => !a.eval(val, active) || b.eval(val, active),
            Cond::Active(p) => active(p),
        }
    }

    pub fn visit_vars<'a>(&'a self, f: &mut impl FnMut(&'a V)) {
        match self {
            Cond::Bool(_) | Cond::Active(_) => {}
            Cond::Cmp(_, a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
            Cond::Not(c) => c.visit_vars(f),
            Cond::And(cs) | Cond::Or(cs) => cs.iter().for_each(|c| c.visit_vars(f)),
            Cond::Implies(a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
        }
    }

    pub fn visit_active<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        match self {
            Cond::Active(p) => f(p),
            Cond::Bool(_) | Cond::Cmp(..) => {}
            Cond::Not(c) => c.visit_active(f),
            Cond::And(cs) | Cond::Or(cs) => cs.iter().for_each(|c| c.visit_active(f)),
            Cond::Implies(a, b) => {
                a.visit_active(f);
                b.visit_active(f);
            }
        }
    }
}

impl<V: Clone + PartialEq> Cond<V> {
    /// Semantics-preserving constant folding and flattening; idempotent.
    pub fn simplify(&self) -> Cond<V> {
        match self {
            Cond::Bool(b) => Cond::Bool(*b),
            Cond::Active(p) => Cond::Active(p.clone()),
            Cond::Cmp(op, a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (a.as_const(), b.as_const()) {
                    (Some(x), Some(y)) => Cond::Bool(op.holds(x, y)),
                    _ if a == b => Cond::Bool(matches!(op, CmpOp::Eq | CmpOp::Le | CmpOp::Ge)),
                    _ => Cond::Cmp(*op, a, b),
                }
            }
            Cond::Not(c) => match c.simplify() {
                Cond::Bool(b) => Cond::Bool(!b),
                Cond::Not(inner) => *inner,
                other => Cond::Not(Box::new(other)),
            },
            Cond::And(cs) => {
                let mut out = Vec::new();
                for c in cs {
                    match c.simplify() {
                        Cond::Bool(true) => {}
                        Cond::Bool(false) => return Cond::Bool(false),
                        Cond::And(inner) => out.extend(inner),
                        other => out.push(other),
                    }
                }
                Cond::and(out)
            }
            Cond::Or(cs) => {
                let mut out = Vec::new();
                for c in cs {
                    match c.simplify() {
                        Cond::Bool(false) => {}
                        Cond::Bool(true) => return Cond::Bool(true),
                        Cond::Or(inner) => out.extend(inner),
                        other => out.push(other),
                    }
                }
                Cond::or(out)
            }
            Cond::Implies(a, b) => match (a.simplify(), b.simplify()) {
                (Cond::Bool(false), _) | (_, Cond::Bool(true)) => Cond::Bool(true),
                (Cond::Bool(true), b) => b,
                (a, Cond::Bool(false)) => Cond::not(a).simplify(),
                (a, b) => Cond::Implies(Box::new(a), Box::new(b)),
            },
        }
    }
}

fn expr_is_atomic<V>(e: &Expr<V>) -> bool {
    match e {
        Expr::Var(_) => true,
        Expr::Const(n) => n >= &BigInt::zero(),
        _ => false,
    }
}

impl<V: fmt::Display> fmt::Display for Expr<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(n) => write!(f, "{n}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                let op = if matches!(self, Expr::Add(..)) { "+" } else { "-" };
                match **a {
                    Expr::Add(..) | Expr::Sub(..) | Expr::Neg(_) => write!(f, "{a}")?,
                    _ => write_operand(f, a)?,
                }
                write!(f, " {op} ")?;
                write_operand(f, b)
            }
            Expr::Neg(a) => {
                write!(f, "-")?;
                if matches!(**a, Expr::Var(_)) {
                    write!(f, "{a}")
                } else {
                    write!(f, "({a})")
                }
            }
            Expr::Mul(k, a) => {
                if k < &BigInt::zero() {
                    write!(f, "({k}) * ")?;
                } else {
                    write!(f, "{k} * ")?;
                }
                write_operand(f, a)
            }
        }
    }
}

fn write_operand<V: fmt::Display>(f: &mut fmt::Formatter<'_>, e: &Expr<V>) -> fmt::Result {
    if expr_is_atomic(e) {
        write!(f, "{e}")
    } else {
        write!(f, "({e})")
    }
}

impl<V: fmt::Display> fmt::Display for Cond<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cond::Bool(b) => write!(f, "{b}"),
            Cond::Cmp(op, a, b) => write!(f, "{a} {} {b}", op.symbol()),
            Cond::Active(p) => write!(f, "active(\"{p}\")"),
            Cond::Not(c) => {
                write!(f, "not ")?;
                write_cond_operand(f, c)
            }
            Cond::And(cs) | Cond::Or(cs) => {
                if cs.is_empty() {
                    return write!(f, "{}", matches!(self, Cond::And(_)));
                }
                if cs.len() == 1 {
                    return write!(f, "{}", cs[0]);
                }
                let sep = if matches!(self, Cond::And(_)) { " and " } else { " or " };
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        write!(f, "{sep}")?;
                    }
                    write_cond_operand(f, c)?;
                }
                Ok(())
            }
            Cond::Implies(a, b) => {
                write_cond_operand(f, a)?;
                write!(f, " implies ")?;
                write_cond_operand(f, b)
            }
        }
    }
}

fn write_cond_operand<V: fmt::Display>(f: &mut fmt::Formatter<'_>, c: &Cond<V>) -> fmt::Result {
    match c {
        Cond::Bool(_) | Cond::Active(_) | Cond::Not(_) => write!(f, "{c}"),
        Cond::And(cs) | Cond::Or(cs) if cs.is_empty() => write!(f, "{c}"),
        Cond::And(cs) | Cond::Or(cs) if cs.len() == 1 => write_cond_operand(f, &cs[0]),
        _ => write!(f, "({c})"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr<&'static str> {
        Expr::Var("x")
    }

    #[test]
    fn simplify_drops_additive_identity() {
        let e = Expr::Add(Box::new(x()), Box::new(Expr::constant(0)));
        assert_eq!(e.simplify(), x());
    }

    #[test]
    fn simplify_folds_constant_comparison() {
        let c: Cond<&str> = Cond::Cmp(
            CmpOp::Lt,
            Expr::Mul(BigInt::from(2), Box::new(Expr::constant(3))),
            Expr::constant(10),
        );
        assert_eq!(c.simplify(), Cond::Bool(true));
    }

    #[test]
    fn simplify_keeps_fixpoint() {
        let e = Expr::Add(Box::new(x()), Box::new(Expr::constant(1)));
        assert_eq!(e.simplify(), e);
        assert_eq!(e.simplify().simplify(), e.simplify());
    }

    #[test]
    fn simplify_merges_constants_across_nesting() {
        let e = Expr::Add(
            Box::new(Expr::Add(Box::new(x()), Box::new(Expr::constant(1)))),
            Box::new(Expr::constant(1)),
        );
        assert_eq!(e.simplify().to_string(), "x + 2");
        let e = Expr::Sub(Box::new(Expr::constant(3)), Box::new(x()));
        assert_eq!(e.simplify().to_string(), "-x + 3");
    }

    #[test]
    fn display_parenthesizes_nested_operands() {
        let e = Expr::Sub(
            Box::new(x()),
            Box::new(Expr::Add(Box::new(x()), Box::new(Expr::constant(1)))),
        );
        assert_eq!(e.to_string(), "x - (x + 1)");
        let c: Cond<&str> = Cond::And(vec![
            Cond::Cmp(CmpOp::Eq, x(), Expr::constant(0)),
            Cond::Or(vec![Cond::Bool(false), Cond::Active("A.B".into())]),
        ]);
        assert_eq!(c.to_string(), "(x = 0) and (false or active(\"A.B\"))");
    }
}
