use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lp::{LpProblem, LpRow, Relation};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable<T> {
    pub name: String,
    pub kind: VarKind,
    pub lo: T,
    pub hi: T,
}

/// Sparse linear expression plus a constant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr<T> {
    pub terms: BTreeMap<VarId, T>,
    pub constant: T,
}

impl<T: Scalar> LinExpr<T> {
    pub fn new() -> Self {
        Self { terms: BTreeMap::new(), constant: T::zero() }
    }

    pub fn var(v: VarId) -> Self {
        Self::new().plus(v, T::one())
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (VarId, T)>) -> Self {
        terms.into_iter().fold(Self::new(), |e, (v, c)| e.plus(v, c))
    }

    /// Adds `coef * v`, merging with an existing term.
    pub fn plus(mut self, v: VarId, coef: T) -> Self {
        self.add_term(v, coef);
        self
    }

    pub fn add_term(&mut self, v: VarId, coef: T) {
        let e = self.terms.entry(v).or_insert(T::zero());
        *e += coef;
    }

    pub fn with_constant(mut self, c: T) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, values: &[T]) -> T {
        self.terms.iter().fold(self.constant, |acc, (v, c)| acc + *c * values[v.0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint<T> {
    pub expr: LinExpr<T>,
    pub rel: Relation,
    pub rhs: T,
}

/// Maximization problem over continuous and binary variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MipModel<T> {
    vars: Vec<Variable<T>>,
    constraints: Vec<Constraint<T>>,
    objective: LinExpr<T>,
}

impl<T: Scalar> Default for MipModel<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> MipModel<T> {
    pub fn new() -> Self {
        Self { vars: Vec::new(), constraints: Vec::new(), objective: LinExpr::new() }
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lo: T, hi: T) -> Result<VarId> {
        let name = name.into();
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Model(format!("variable {name} has unbounded range [{lo}, {hi}]")));
        }
        if lo > hi {
            return Err(Error::Model(format!("variable {name} has empty range [{lo}, {hi}]")));
        }
        self.vars.push(Variable { name, kind: VarKind::Continuous, lo, hi });
        Ok(VarId(self.vars.len() - 1))
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.vars.push(Variable { name: name.into(), kind: VarKind::Binary, lo: T::zero(), hi: T::one() });
        VarId(self.vars.len() - 1)
    }

    /// Binary variable whose value is already known.
    pub fn add_fixed_binary(&mut self, name: impl Into<String>, value: bool) -> VarId {
        let v = self.add_binary(name);
        let b = if value { T::one() } else { T::zero() };
        self.vars[v.0].lo = b;
        self.vars[v.0].hi = b;
        v
    }

    pub fn add_constraint(&mut self, expr: LinExpr<T>, rel: Relation, rhs: T) -> Result<()> {
        for (v, c) in &expr.terms {
            if v.0 >= self.vars.len() {
                return Err(Error::Model(format!("constraint references undeclared variable {}", v.0)));
            }
            if !c.is_finite() {
                return Err(Error::Model(format!(
                    "non-finite coefficient on {}",
                    self.vars[v.0].name
                )));
            }
        }
        if !rhs.is_finite() || !expr.constant.is_finite() {
            return Err(Error::Model("non-finite constraint right-hand side".into()));
        }
        self.constraints.push(Constraint { expr, rel, rhs });
        Ok(())
    }

    pub fn set_objective(&mut self, expr: LinExpr<T>) {
        self.objective = expr;
    }

    pub fn set_bounds(&mut self, v: VarId, lo: T, hi: T) {
        self.vars[v.0].lo = lo;
        self.vars[v.0].hi = hi;
    }

    pub fn var(&self, v: VarId) -> &Variable<T> {
        &self.vars[v.0]
    }

    pub fn vars(&self) -> &[Variable<T>] {
        &self.vars
    }

    pub fn constraints(&self) -> &[Constraint<T>] {
        &self.constraints
    }

    pub fn objective(&self) -> &LinExpr<T> {
        &self.objective
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn binaries(&self) -> Vec<VarId> {
        (0..self.vars.len())
            .filter(|&i| self.vars[i].kind == VarKind::Binary)
            .map(VarId)
            .collect()
    }

    /// Binaries whose bounds still allow both values.
    pub fn free_binaries(&self) -> Vec<VarId> {
        self.binaries()
            .into_iter()
            .filter(|v| self.vars[v.0].lo < self.vars[v.0].hi)
            .collect()
    }

    /// The same model with every binary re-typed continuous (bounds kept
    /// inside `[0, 1]`).
    pub fn lp_relaxation(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.vars {
            v.kind = VarKind::Continuous;
        }
        out
    }

    /// Copy with binaries fixed, or `None` if a fixing contradicts the bounds.
    pub fn with_fixings(&self, fixings: &[(VarId, bool)]) -> Option<Self> {
        let mut out = self.clone();
        for &(v, b) in fixings {
            let val = if b { T::one() } else { T::zero() };
            let var = &mut out.vars[v.0];
            if val < var.lo || val > var.hi {
                return None;
            }
            var.lo = val;
            var.hi = val;
        }
        Some(out)
    }

    /// LP over the continuous relaxation, plus the objective constant.
    pub fn to_lp(&self) -> (LpProblem<T>, T) {
        let n = self.vars.len();
        let mut objective = vec![T::zero(); n];
        for (v, c) in &self.objective.terms {
            objective[v.0] += *c;
        }
        let rows = self
            .constraints
            .iter()
            .map(|c| LpRow {
                coeffs: c.expr.terms.iter().filter(|(_, a)| **a != T::zero()).map(|(v, a)| (v.0, *a)).collect(),
                rel: c.rel,
                rhs: c.rhs - c.expr.constant,
            })
            .collect();
        let problem = LpProblem {
            objective,
            lo: self.vars.iter().map(|v| v.lo).collect(),
            hi: self.vars.iter().map(|v| v.hi).collect(),
            rows,
        };
        (problem, self.objective.constant)
    }

    /// Largest constraint, bound or integrality violation of a full
    /// assignment.
    pub fn max_violation(&self, values: &[T]) -> T {
        let mut worst = T::zero();
        for (v, x) in self.vars.iter().zip(values) {
            worst = worst.max(v.lo - *x).max(*x - v.hi);
            if v.kind == VarKind::Binary {
                worst = worst.max(x.min(T::one() - *x).abs());
            }
        }
        for c in &self.constraints {
            let lhs = c.expr.eval(values);
            let d = match c.rel {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(d);
        }
        worst
    }

    pub fn objective_value(&self, values: &[T]) -> T {
        self.objective.eval(values)
    }

    /// Export in the CPLEX LP text format.
    pub fn to_lp_format(&self) -> String {
        let names: Vec<String> = self.vars.iter().enumerate().map(|(i, v)| lp_name(&v.name, i)).collect();
        let num = |v: T| format!("{}", v.as_f64());
        let expr = |e: &LinExpr<T>| -> String {
            let mut s = String::new();
            for (k, (v, c)) in e.terms.iter().enumerate() {
                let c = c.as_f64();
                if k == 0 {
                    let _ = write!(s, "{} {}", c, names[v.0]);
                } else if c < 0.0 {
                    let _ = write!(s, " - {} {}", -c, names[v.0]);
                } else {
                    let _ = write!(s, " + {} {}", c, names[v.0]);
                }
            }
            if s.is_empty() {
                s.push('0');
            }
            s
        };
        let mut out = String::new();
        if self.objective.constant != T::zero() {
            let _ = writeln!(out, "\\ objective constant {}", num(self.objective.constant));
        }
        out.push_str("Maximize\n");
        let _ = writeln!(out, " obj: {}", expr(&self.objective));
        out.push_str("Subject To\n");
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = writeln!(
                out,
                " c{i}: {} {} {}",
                expr(&c.expr),
                c.rel.symbol(),
                num(c.rhs - c.expr.constant)
            );
        }
        out.push_str("Bounds\n");
        for (i, v) in self.vars.iter().enumerate() {
            if v.lo == v.hi {
                let _ = writeln!(out, " {} = {}", names[i], num(v.lo));
            } else {
                let _ = writeln!(out, " {} <= {} <= {}", num(v.lo), names[i], num(v.hi));
            }
        }
        let bins: Vec<&str> = self
            .vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| names[i].as_str())
            .collect();
        if !bins.is_empty() {
            out.push_str("Binary\n");
            for b in bins {
                let _ = writeln!(out, " {b}");
            }
        }
        out.push_str("End\n");
        out
    }
}

fn lp_name(name: &str, idx: usize) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if clean.is_empty() || clean.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        format!("v{idx}_{clean}")
    } else {
        format!("{clean}#{idx}").replace('#', "_")
    }
}
