//! The action language: concrete execution of actions and conditions over
//! environments, and their symbolic counterparts over symbolic environments.

mod expr;
mod parse;

use std::fmt;

use num_bigint::BigInt;
use thiserror::Error;

pub use expr::{CmpOp, Cond, Expr, VarId};
pub use parse::{is_ident, parse_action, parse_cond, parse_expr, ParseError};

/// A sequence of assignments executed left to right.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Action<V = String> {
    pub assigns: Vec<(V, Expr<V>)>,
}

impl<V> Default for Action<V> {
    fn default() -> Self {
        Action { assigns: Vec::new() }
    }
}

impl<V> Action<V> {
    pub fn is_empty(&self) -> bool {
        self.assigns.is_empty()
    }

    pub fn map_vars<W>(&self, f: &mut impl FnMut(&V) -> W) -> Action<W> {
        Action {
            assigns: self.assigns.iter().map(|(v, e)| (f(v), e.map_vars(f))).collect(),
        }
    }

    /// Sequential composition `self; other`.
    pub fn then(&self, other: &Action<V>) -> Action<V>
    where
        V: Clone,
    {
        let mut assigns = self.assigns.clone();
        assigns.extend(other.assigns.iter().cloned());
        Action { assigns }
    }
}

impl<V: fmt::Display> fmt::Display for Action<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (v, e)) in self.assigns.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v} := {e}")?;
        }
        Ok(())
    }
}

/// Concrete environment: one integer per data variable, indexed by [`VarId`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Env(pub Vec<BigInt>);

impl Env {
    pub fn zeros(n: usize) -> Self {
        Env(vec![BigInt::from(0); n])
    }

    pub fn get(&self, v: VarId) -> &BigInt {
        &self.0[v.0]
    }

    pub fn set(&mut self, v: VarId, value: BigInt) {
        self.0[v.0] = value;
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `e ⊢ (a, D) ↪ D'`.
pub fn exec_action(a: &Action<VarId>, d: &Env) -> Env {
    let mut out = d.clone();
    exec_action_in_place(a, &mut out);
    out
}

pub fn exec_action_in_place(a: &Action<VarId>, d: &mut Env) {
    for (v, e) in &a.assigns {
        let value = e.eval(&|w: &VarId| d.get(*w).clone());
        d.set(*v, value);
    }
}

/// `e ⊢ (c, D) → ⊤ | ⊥`. Activity atoms never appear in program conditions.
pub fn eval_cond(c: &Cond<VarId>, d: &Env) -> bool {
    c.eval(&|w: &VarId| d.get(*w).clone(), &|_| false)
}

/// A symbol: the value of variable `var` at step `step` of a symbolic
/// execution episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sym {
    pub var: VarId,
    pub episode: u32,
    pub step: u32,
}

impl Sym {
    /// `<var>_<episode>_<step>`.
    pub fn render(&self, names: &[String]) -> String {
        format!("{}_{}_{}", names[self.var.0], self.episode, self.step)
    }

    /// Inverse of [`Sym::render`].
    pub fn parse(text: &str, names: &[String]) -> Option<Sym> {
        let mut parts = text.rsplitn(3, '_');
        let step = parts.next()?.parse().ok()?;
        let episode = parts.next()?.parse().ok()?;
        let name = parts.next()?;
        let var = names.iter().position(|n| n == name)?;
        Some(Sym { var: VarId(var), episode, step })
    }
}

/// The bijection `g` between program variables and the symbols of one
/// episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SymbolMap {
    pub episode: u32,
    pub vars: usize,
}

impl SymbolMap {
    pub fn new(episode: u32, vars: usize) -> Self {
        SymbolMap { episode, vars }
    }

    pub fn sym(&self, v: VarId) -> Sym {
        Sym { var: v, episode: self.episode, step: 0 }
    }

    /// `g⁻¹`; only step-0 symbols of this episode are in the image of `g`.
    pub fn var_of(&self, s: Sym) -> Option<VarId> {
        (s.episode == self.episode && s.step == 0 && s.var.0 < self.vars).then_some(s.var)
    }

    /// A symbol for `v` that is fresh at `step`.
    pub fn fresh(&self, v: VarId, step: u32) -> Sym {
        Sym { var: v, episode: self.episode, step }
    }
}

/// Symbolic environment Δ: one symbolic expression per data variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SymEnv(pub Vec<Expr<Sym>>);

impl SymEnv {
    /// Δ₀ = g.
    pub fn identity(g: &SymbolMap) -> Self {
        SymEnv((0..g.vars).map(|i| Expr::Var(g.sym(VarId(i)))).collect())
    }

    pub fn get(&self, v: VarId) -> &Expr<Sym> {
        &self.0[v.0]
    }

    pub fn set(&mut self, v: VarId, e: Expr<Sym>) {
        self.0[v.0] = e;
    }

    pub fn render(&self, names: &[String]) -> Vec<(String, String)> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, e)| (names[i].clone(), render_expr(e, names)))
            .collect()
    }
}

pub fn render_expr(e: &Expr<Sym>, names: &[String]) -> String {
    e.map_vars(&mut |s| s.render(names)).to_string()
}

pub fn render_cond(c: &Cond<Sym>, names: &[String]) -> String {
    c.map_vars(&mut |s| s.render(names)).to_string()
}

/// `SA[[a]](Δ)`: substitutes the current images into each right-hand side.
pub fn sym_exec_action(a: &Action<VarId>, delta: &SymEnv) -> SymEnv {
    let mut out = delta.clone();
    for (v, e) in &a.assigns {
        let image = e.subst(&mut |w: &VarId| out.get(*w).clone()).simplify();
        out.set(*v, image);
    }
    out
}

/// `SB[[c]](Δ)`: purely syntactic substitution.
pub fn sym_eval_cond(c: &Cond<VarId>, delta: &SymEnv) -> Cond<Sym> {
    c.subst(&mut |w: &VarId| delta.get(*w).clone())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("path condition does not extend the earlier one")]
pub struct NotAnExtension;

/// Path condition: an ordered conjunction that only ever grows.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct PathCondition {
    conjuncts: Vec<Cond<Sym>>,
}

impl PathCondition {
    /// pc₀ = ⊤.
    pub fn top() -> Self {
        PathCondition::default()
    }

    pub fn conjuncts(&self) -> &[Cond<Sym>] {
        &self.conjuncts
    }

    pub fn conjoin(&mut self, c: Cond<Sym>) {
        self.conjuncts.push(c);
    }

    pub fn with(&self, c: Cond<Sym>) -> Self {
        let mut out = self.clone();
        out.conjoin(c);
        out
    }

    pub fn as_cond(&self) -> Cond<Sym> {
        Cond::and(self.conjuncts.clone())
    }

    pub fn extends(&self, before: &PathCondition) -> bool {
        self.conjuncts.starts_with(&before.conjuncts)
    }
}

/// pc₁²: the conjunction of everything `after` appended to `before`
/// (⊤ when nothing was added).
pub fn added_conjunct(
    before: &PathCondition,
    after: &PathCondition,
) -> Result<Cond<Sym>, NotAnExtension> {
    if !after.extends(before) {
        return Err(NotAnExtension);
    }
    Ok(Cond::and(after.conjuncts[before.conjuncts.len()..].to_vec()))
}

/// Serializes values that fit in 64 bits as JSON numbers, others as
/// decimal strings.
pub(crate) fn ser_numbers<S: serde::Serializer>(
    data: &std::collections::BTreeMap<String, BigInt>,
    s: S,
) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(data.len()))?;
    for (k, v) in data {
        match i64::try_from(v) {
            Ok(n) => map.serialize_entry(k, &n)?,
            Err(_) => map.serialize_entry(k, &v.to_string())?,
        }
    }
    map.end()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    fn compile(a: &str) -> Action<VarId> {
        let names = names();
        parse_action(a)
            .unwrap()
            .map_vars(&mut |v: &String| VarId(names.iter().position(|n| n == v).unwrap()))
    }

    fn compile_cond(c: &str) -> Cond<VarId> {
        let names = names();
        parse_cond(c)
            .unwrap()
            .map_vars(&mut |v: &String| VarId(names.iter().position(|n| n == v).unwrap()))
    }

    fn env(x: i64, y: i64) -> Env {
        Env(vec![x.into(), y.into()])
    }

    #[test]
    fn exec_action_examples() {
        assert_eq!(exec_action(&compile("x := x + 1"), &env(4, 0)), env(5, 0));
        assert_eq!(exec_action(&compile(""), &env(4, 0)), env(4, 0));
        assert_eq!(exec_action(&compile("x := x + 1; y := x"), &env(0, 9)), env(1, 1));
    }

    #[test]
    fn eval_cond_examples() {
        assert!(eval_cond(&compile_cond("x < 10"), &env(4, 0)));
        assert!(eval_cond(&compile_cond("true"), &env(-7, 3)));
        assert!(!eval_cond(&compile_cond("x = 0 and y > 1"), &env(0, 1)));
    }

    #[test]
    fn sym_exec_action_examples() {
        let g = SymbolMap::new(0, 2);
        let d0 = SymEnv::identity(&g);
        let r = |d: &SymEnv| d.render(&names());
        let d1 = sym_exec_action(&compile("x := x + 1"), &d0);
        assert_eq!(r(&d1)[0].1, "x_0_0 + 1");
        let mut shifted = d0.clone();
        shifted.set(VarId(0), Expr::Add(Box::new(Expr::Var(g.sym(VarId(0)))), Box::new(Expr::constant(5))));
        assert_eq!(r(&sym_exec_action(&compile("x := 0"), &shifted))[0].1, "0");
        let d2 = sym_exec_action(&compile("x := x + 1; y := x"), &d0);
        assert_eq!(r(&d2), vec![("x".into(), "x_0_0 + 1".into()), ("y".into(), "x_0_0 + 1".into())]);
    }

    #[test]
    fn sym_eval_cond_examples() {
        let g = SymbolMap::new(0, 2);
        let d1 = sym_exec_action(&compile("x := x + 1"), &SymEnv::identity(&g));
        assert_eq!(render_cond(&sym_eval_cond(&compile_cond("x < 10"), &d1), &names()), "x_0_0 + 1 < 10");
        assert_eq!(sym_eval_cond(&compile_cond("true"), &d1), Cond::Bool(true));
        let same = sym_exec_action(&compile("y := x"), &SymEnv::identity(&g));
        assert_eq!(render_cond(&sym_eval_cond(&compile_cond("x = y"), &same), &names()), "x_0_0 = x_0_0");
    }

    #[test]
    fn added_conjunct_examples() {
        let x = Expr::Var(Sym { var: VarId(0), episode: 0, step: 0 });
        let y = Expr::Var(Sym { var: VarId(1), episode: 0, step: 0 });
        let lt = Cond::Cmp(CmpOp::Lt, x.clone(), Expr::constant(10));
        let ge = Cond::Cmp(CmpOp::Ge, x, Expr::constant(5));
        let eq = Cond::Cmp(CmpOp::Eq, y, Expr::constant(0));

        let top = PathCondition::top();
        assert_eq!(added_conjunct(&top, &top.with(lt.clone())).unwrap(), lt);
        assert_eq!(added_conjunct(&top, &top).unwrap(), Cond::Bool(true));
        let before = top.with(lt.clone());
        let after = before.with(ge.clone()).with(eq.clone());
        assert_eq!(added_conjunct(&before, &after).unwrap(), Cond::And(vec![ge, eq]));
        assert_eq!(added_conjunct(&after, &before), Err(NotAnExtension));
    }

    #[test]
    fn symbol_names_round_trip() {
        let names = vec!["disp_cent".to_string(), "x".to_string()];
        let s = Sym { var: VarId(0), episode: 3, step: 12 };
        assert_eq!(s.render(&names), "disp_cent_3_12");
        assert_eq!(Sym::parse("disp_cent_3_12", &names), Some(s));
        assert_eq!(Sym::parse("nope_1_1", &names), None);
    }
}
