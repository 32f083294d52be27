//! Bounded-variable primal simplex on a dense tableau.
//!
//! Problems are stated as `maximize c^T x` subject to sparse rows
//! `sum a_ij x_j (<=|=|>=) b_i` and finite bounds `lo <= x <= hi`. Every row
//! receives a slack whose bounds encode the relation, so the working system
//! is `A x + s = b`. Rows violated at the starting vertex get an artificial
//! variable; phase 1 drives the artificials to zero and phase 2 optimizes the
//! real objective.
//!
//! Pricing is Dantzig's largest reduced cost. After [`STALL_FACTOR`] times
//! the number of columns consecutive degenerate pivots the solver switches to
//! Bland's rule until it makes progress again. The tableau is rebuilt from the
//! original data every [`REFACTOR_PERIOD`] pivots and before an optimum is
//! reported; an optimum that fails the rebuilt primal/dual check is either
//! resumed or reported as [`LpStatus::NumericalFailure`], never as optimal.

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

/// Consecutive degenerate pivots (per column) before switching to Bland's rule.
pub const STALL_FACTOR: usize = 10;
/// Pivots between tableau rebuilds.
pub const REFACTOR_PERIOD: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow<T> {
    /// Sparse `(column, coefficient)` pairs; columns must be distinct.
    pub coeffs: Vec<(usize, T)>,
    pub rel: Relation,
    pub rhs: T,
}

/// `maximize objective^T x` over the rows and the box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem<T> {
    pub objective: Vec<T>,
    pub lo: Vec<T>,
    pub hi: Vec<T>,
    pub rows: Vec<LpRow<T>>,
}

impl<T: Scalar> LpProblem<T> {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lo.len() != n || self.hi.len() != n {
            return dim_err(format!(
                "objective has {n} entries, bounds have {} and {}",
                self.lo.len(),
                self.hi.len()
            ));
        }
        for j in 0..n {
            if !self.lo[j].is_finite() || !self.hi[j].is_finite() || !self.objective[j].is_finite() {
                return Err(Error::Model(format!("variable {j} has non-finite data")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::Model(format!("row {i} has a non-finite right-hand side")));
            }
            let mut seen = std::collections::BTreeSet::new();
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return dim_err(format!("row {i} references column {j} of {n}"));
                }
                if !a.is_finite() {
                    return Err(Error::Model(format!("row {i} has a non-finite coefficient")));
                }
                if !seen.insert(j) {
                    return Err(Error::Model(format!("row {i} repeats column {j}")));
                }
            }
        }
        Ok(())
    }

    pub fn objective_at(&self, x: &[T]) -> T {
        self.objective.iter().zip(x).fold(T::zero(), |acc, (c, v)| acc + *c * *v)
    }

    /// Largest violation of a row or bound at `x`.
    pub fn max_violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for j in 0..self.num_vars() {
            worst = worst.max(self.lo[j] - x[j]).max(x[j] - self.hi[j]);
        }
        for row in &self.rows {
            let lhs = row.coeffs.iter().fold(T::zero(), |acc, (j, a)| acc + *a * x[*j]);
            let v = match row.rel {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpTolerances {
    pub feas_tol: f64,
    pub pivot_tol: f64,
}

impl LpTolerances {
    pub fn for_scalar<T: Scalar>() -> Self {
        Self { feas_tol: T::FEAS_TOL, pivot_tol: T::PIVOT_TOL }
    }

    pub fn tightened(self) -> Self {
        Self { feas_tol: self.feas_tol / 10.0, pivot_tol: self.pivot_tol / 10.0 }
    }
}

impl Default for LpTolerances {
    fn default() -> Self {
        Self::for_scalar::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<T> {
    pub status: LpStatus,
    pub x: Vec<T>,
    pub objective_value: T,
    pub iterations: usize,
}

/// Anything that can solve an [`LpProblem`]; branch-and-bound and the
/// estimators only depend on this contract.
pub trait LpSolver<T: Scalar>: Send + Sync {
    fn solve(&self, problem: &LpProblem<T>, tols: &LpTolerances) -> Result<LpSolution<T>>;
}

/// The in-crate dense simplex.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenseSimplex;

impl<T: Scalar> LpSolver<T> for DenseSimplex {
    fn solve(&self, problem: &LpProblem<T>, tols: &LpTolerances) -> Result<LpSolution<T>> {
        solve_lp(problem, tols)
    }
}

pub fn solve_lp<T: Scalar>(p: &LpProblem<T>, tols: &LpTolerances) -> Result<LpSolution<T>> {
    p.validate()?;
    let n = p.num_vars();
    let feas = T::lit(tols.feas_tol);
    let fixed_eps = T::lit(tols.pivot_tol);
    let fail = |iterations| LpSolution {
        status: LpStatus::NumericalFailure,
        x: p.lo.clone(),
        objective_value: T::nan(),
        iterations,
    };
    let infeasible = |iterations| LpSolution {
        status: LpStatus::Infeasible,
        x: p.lo.clone(),
        objective_value: T::neg_infinity(),
        iterations,
    };

    for j in 0..n {
        if p.lo[j] > p.hi[j] + feas {
            return Ok(infeasible(0));
        }
    }

    // presolve: substitute fixed columns
    let mut col_map = vec![usize::MAX; n];
    let mut free_cols = Vec::new();
    for j in 0..n {
        if p.hi[j] - p.lo[j] > fixed_eps {
            col_map[j] = free_cols.len();
            free_cols.push(j);
        }
    }
    let fixed_value = |j: usize| p.lo[j];
    let mut rows: Vec<(Vec<(usize, T)>, Relation, T)> = Vec::with_capacity(p.rows.len());
    for row in &p.rows {
        let mut rhs = row.rhs;
        let mut coeffs = Vec::with_capacity(row.coeffs.len());
        let mut scale = row.rhs.abs();
        for &(j, a) in &row.coeffs {
            if a == T::zero() {
                continue;
            }
            if col_map[j] == usize::MAX {
                let v = fixed_value(j);
                rhs -= a * v;
                scale = scale.max((a * v).abs());
            } else {
                coeffs.push((col_map[j], a));
            }
        }
        if coeffs.is_empty() {
            let tol = feas * (T::one() + scale);
            let ok = match row.rel {
                Relation::Le => rhs >= -tol,
                Relation::Ge => rhs <= tol,
                Relation::Eq => rhs.abs() <= tol,
            };
            if !ok {
                return Ok(infeasible(0));
            }
            continue;
        }
        rows.push((coeffs, row.rel, rhs));
    }

    let lo: Vec<T> = free_cols.iter().map(|&j| p.lo[j]).collect();
    let hi: Vec<T> = free_cols.iter().map(|&j| p.hi[j]).collect();
    let c: Vec<T> = free_cols.iter().map(|&j| p.objective[j]).collect();
    let mut tab = Tableau::new(&rows, lo, hi, *tols);
    let outcome = tab.run(&c);
    let iterations = tab.iterations;
    let reduced = match outcome {
        Outcome::Optimal => tab.structural_values(),
        Outcome::Infeasible => return Ok(infeasible(iterations)),
        Outcome::Unbounded => {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                x: p.lo.clone(),
                objective_value: T::infinity(),
                iterations,
            })
        }
        Outcome::Failure => return Ok(fail(iterations)),
    };

    let mut x = vec![T::zero(); n];
    for j in 0..n {
        x[j] = if col_map[j] == usize::MAX { fixed_value(j) } else { reduced[col_map[j]] };
        x[j] = x[j].max(p.lo[j]).min(p.hi[j]);
    }
    // residual check on the original rows
    for row in &p.rows {
        let mut lhs = T::zero();
        let mut scale = row.rhs.abs();
        for &(j, a) in &row.coeffs {
            lhs += a * x[j];
            scale = scale.max((a * x[j]).abs());
        }
        let tol = feas * (T::one() + scale) * T::lit(10.0);
        let bad = match row.rel {
            Relation::Le => lhs - row.rhs > tol,
            Relation::Ge => row.rhs - lhs > tol,
            Relation::Eq => (lhs - row.rhs).abs() > tol,
        };
        if bad {
            return Ok(fail(iterations));
        }
    }
    Ok(LpSolution { status: LpStatus::Optimal, objective_value: p.objective_at(&x), x, iterations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic,
    AtLower,
    AtUpper,
}

enum Outcome {
    Optimal,
    Infeasible,
    Unbounded,
    Failure,
}

struct Tableau<T> {
    m: usize,
    n: usize,
    ncols: usize,
    /// Original system `[A | I | art]` in dense row-major form and its rhs.
    orig: Vec<T>,
    rhs: Vec<T>,
    /// `B^{-1} [A | I | art]`.
    tab: Vec<T>,
    lo: Vec<T>,
    hi: Vec<T>,
    x: Vec<T>,
    state: Vec<State>,
    basis: Vec<usize>,
    d: Vec<T>,
    tols: LpTolerances,
    iterations: usize,
    since_refactor: usize,
}

impl<T: Scalar> Tableau<T> {
    fn new(rows: &[(Vec<(usize, T)>, Relation, T)], lo: Vec<T>, hi: Vec<T>, tols: LpTolerances) -> Self {
        let m = rows.len();
        let n = lo.len();
        let inf = T::infinity();
        let mut x = Vec::with_capacity(n + m);
        let mut state = Vec::with_capacity(n + m);
        for j in 0..n {
            x.push(lo[j]);
            state.push(State::AtLower);
        }
        let mut all_lo = lo;
        let mut all_hi = hi;
        let mut art_rows = Vec::new();
        let mut basis = vec![0; m];
        let feas = T::lit(tols.feas_tol);
        for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
            let act = coeffs.iter().fold(T::zero(), |acc, (j, a)| acc + *a * x[*j]);
            let s = *rhs - act;
            let (slo, shi) = match rel {
                Relation::Le => (T::zero(), inf),
                Relation::Ge => (-inf, T::zero()),
                Relation::Eq => (T::zero(), T::zero()),
            };
            all_lo.push(slo);
            all_hi.push(shi);
            if s >= slo - feas && s <= shi + feas {
                x.push(s);
                state.push(State::Basic);
                basis[i] = n + i;
            } else {
                x.push(T::zero());
                state.push(if *rel == Relation::Ge { State::AtUpper } else { State::AtLower });
                art_rows.push((i, s));
            }
        }
        let k = art_rows.len();
        let ncols = n + m + k;
        let mut orig = vec![T::zero(); m * ncols];
        let mut rhs = vec![T::zero(); m];
        for (i, (coeffs, _, b)) in rows.iter().enumerate() {
            for &(j, a) in coeffs {
                orig[i * ncols + j] = a;
            }
            orig[i * ncols + n + i] = T::one();
            rhs[i] = *b;
        }
        for (a, &(i, s)) in art_rows.iter().enumerate() {
            let col = n + m + a;
            orig[i * ncols + col] = if s >= T::zero() { T::one() } else { -T::one() };
            all_lo.push(T::zero());
            all_hi.push(inf);
            x.push(s.abs());
            state.push(State::Basic);
            basis[i] = col;
        }
        Self {
            m,
            n,
            ncols,
            tab: orig.clone(),
            orig,
            rhs,
            lo: all_lo,
            hi: all_hi,
            x,
            state,
            basis,
            d: vec![T::zero(); ncols],
            tols,
            iterations: 0,
            since_refactor: 0,
        }
    }

    fn structural_values(&self) -> Vec<T> {
        self.x[..self.n].to_vec()
    }

    fn first_art(&self) -> usize {
        self.n + self.m
    }

    fn run(&mut self, c: &[T]) -> Outcome {
        if !self.refactor() {
            return Outcome::Failure;
        }
        let nart = self.ncols - self.first_art();
        if nart > 0 {
            let mut c1 = vec![T::zero(); self.ncols];
            for v in c1.iter_mut().skip(self.first_art()) {
                *v = -T::one();
            }
            match self.optimize(&c1) {
                Outcome::Optimal => {}
                Outcome::Unbounded | Outcome::Failure => return Outcome::Failure,
                Outcome::Infeasible => return Outcome::Infeasible,
            }
            let art_sum = self.x[self.first_art()..].iter().fold(T::zero(), |a, v| a + *v);
            let scale = self.rhs.iter().fold(T::one(), |a, v| a.max(v.abs()));
            if art_sum > T::lit(self.tols.feas_tol) * scale {
                return Outcome::Infeasible;
            }
            for j in self.first_art()..self.ncols {
                self.hi[j] = T::zero();
                if self.state[j] != State::Basic {
                    self.x[j] = T::zero();
                    self.state[j] = State::AtLower;
                }
            }
        }
        let mut c2 = vec![T::zero(); self.ncols];
        c2[..self.n].copy_from_slice(c);
        self.optimize(&c2)
    }

    /// Rebuilds `tab` as `B^{-1}` times the original system and recomputes
    /// the basic values. Returns false on a singular basis.
    fn refactor(&mut self) -> bool {
        let (m, ncols) = (self.m, self.ncols);
        let piv_tol = T::lit(self.tols.pivot_tol);
        self.tab.copy_from_slice(&self.orig);
        let mut beta = self.rhs.clone();
        let mut assigned = vec![false; m];
        let mut new_basis = vec![usize::MAX; m];
        let old_basis = self.basis.clone();
        for &col in &old_basis {
            let mut best = None;
            let mut best_abs = T::zero();
            for r in 0..m {
                if !assigned[r] {
                    let v = self.tab[r * ncols + col].abs();
                    if v > best_abs {
                        best_abs = v;
                        best = Some(r);
                    }
                }
            }
            let r = match best {
                Some(r) if best_abs > piv_tol => r,
                _ => return false,
            };
            assigned[r] = true;
            new_basis[r] = col;
            eliminate(&mut self.tab, &mut beta, m, ncols, r, col);
        }
        self.basis = new_basis;
        for r in 0..m {
            let mut v = beta[r];
            let row = &self.tab[r * ncols..(r + 1) * ncols];
            for j in 0..ncols {
                if self.state[j] != State::Basic && row[j] != T::zero() {
                    v -= row[j] * self.x[j];
                }
            }
            self.x[self.basis[r]] = v;
        }
        self.since_refactor = 0;
        true
    }

    fn compute_reduced_costs(&mut self, c: &[T]) {
        let ncols = self.ncols;
        self.d.copy_from_slice(c);
        for r in 0..self.m {
            let cb = c[self.basis[r]];
            if cb == T::zero() {
                continue;
            }
            let row = &self.tab[r * ncols..(r + 1) * ncols];
            for j in 0..ncols {
                self.d[j] -= cb * row[j];
            }
        }
        for r in 0..self.m {
            self.d[self.basis[r]] = T::zero();
        }
    }

    fn max_primal_violation(&self) -> T {
        let mut worst = T::zero();
        for r in 0..self.m {
            let b = self.basis[r];
            let v = self.x[b];
            let tol_scale = T::one() + v.abs();
            worst = worst.max((self.lo[b] - v) / tol_scale).max((v - self.hi[b]) / tol_scale);
        }
        worst
    }

    fn entering(&self, bland: bool) -> Option<(usize, T)> {
        let dtol = T::lit(self.tols.pivot_tol);
        let mut best: Option<(usize, T)> = None;
        let mut best_score = T::zero();
        for j in 0..self.ncols {
            let dir = match self.state[j] {
                State::Basic => continue,
                _ if self.hi[j] - self.lo[j] <= T::zero() => continue,
                State::AtLower if self.d[j] > dtol => T::one(),
                State::AtUpper if self.d[j] < -dtol => -T::one(),
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            let score = self.d[j].abs();
            if score > best_score {
                best_score = score;
                best = Some((j, dir));
            }
        }
        best
    }

    fn optimize(&mut self, c: &[T]) -> Outcome {
        let max_iter = 50 * (self.m + self.ncols) + 10_000;
        let stall_limit = STALL_FACTOR * self.ncols.max(1);
        let piv_tol = T::lit(self.tols.pivot_tol);
        let degenerate_step = T::lit(1e-12);
        let mut degenerate = 0usize;
        let mut verifications = 0;
        self.compute_reduced_costs(c);
        loop {
            if self.iterations >= max_iter {
                return Outcome::Failure;
            }
            if self.since_refactor >= REFACTOR_PERIOD {
                if !self.refactor() {
                    return Outcome::Failure;
                }
                self.compute_reduced_costs(c);
            }
            let bland = degenerate >= stall_limit;
            let Some((j, dir)) = self.entering(bland) else {
                // candidate optimum: verify on a fresh factorization
                if !self.refactor() {
                    return Outcome::Failure;
                }
                self.compute_reduced_costs(c);
                if self.max_primal_violation() > T::lit(self.tols.feas_tol) * T::lit(10.0) {
                    return Outcome::Failure;
                }
                if self.entering(false).is_none() {
                    return Outcome::Optimal;
                }
                verifications += 1;
                if verifications > 3 {
                    return Outcome::Failure;
                }
                continue;
            };
            self.iterations += 1;

            // ratio test
            let ncols = self.ncols;
            let mut step = self.hi[j] - self.lo[j];
            let mut leave: Option<(usize, bool)> = None;
            let mut leave_alpha = T::zero();
            for r in 0..self.m {
                let alpha = dir * self.tab[r * ncols + j];
                if alpha.abs() <= piv_tol {
                    continue;
                }
                let b = self.basis[r];
                let (limit, to_lower) = if alpha > T::zero() {
                    if self.lo[b] == T::neg_infinity() {
                        continue;
                    }
                    (((self.x[b] - self.lo[b]) / alpha).max(T::zero()), true)
                } else {
                    if self.hi[b] == T::infinity() {
                        continue;
                    }
                    (((self.hi[b] - self.x[b]) / -alpha).max(T::zero()), false)
                };
                let better = match leave {
                    None => limit < step || (limit == step && step.is_infinite()),
                    Some((lr, _)) => {
                        if limit < step - degenerate_step {
                            true
                        } else if limit <= step + degenerate_step {
                            if bland {
                                b < self.basis[lr]
                            } else {
                                alpha.abs() > leave_alpha.abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    step = if leave.is_none() { limit } else { step.min(limit) };
                    leave = Some((r, to_lower));
                    leave_alpha = alpha;
                }
            }
            if step.is_infinite() {
                return Outcome::Unbounded;
            }
            if step <= degenerate_step {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            // move
            for r in 0..self.m {
                let a = self.tab[r * ncols + j];
                if a != T::zero() {
                    let b = self.basis[r];
                    self.x[b] -= dir * step * a;
                }
            }
            self.x[j] += dir * step;
            match leave {
                None => {
                    // bound flip
                    self.state[j] = if dir > T::zero() { State::AtUpper } else { State::AtLower };
                    self.x[j] = if dir > T::zero() { self.hi[j] } else { self.lo[j] };
                }
                Some((r, to_lower)) => {
                    let b = self.basis[r];
                    self.state[b] = if to_lower { State::AtLower } else { State::AtUpper };
                    self.x[b] = if to_lower { self.lo[b] } else { self.hi[b] };
                    self.state[j] = State::Basic;
                    self.basis[r] = j;
                    self.pivot(r, j);
                    self.since_refactor += 1;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let ncols = self.ncols;
        let p = self.tab[r * ncols + j];
        let inv = T::one() / p;
        let nz: Vec<usize> = (0..ncols).filter(|&k| self.tab[r * ncols + k] != T::zero()).collect();
        for &k in &nz {
            self.tab[r * ncols + k] *= inv;
        }
        self.tab[r * ncols + j] = T::one();
        let (before, rest) = self.tab.split_at_mut(r * ncols);
        let (prow, after) = rest.split_at_mut(ncols);
        for row in before.chunks_exact_mut(ncols).chain(after.chunks_exact_mut(ncols)) {
            let f = row[j];
            if f == T::zero() {
                continue;
            }
            for &k in &nz {
                row[k] -= f * prow[k];
            }
            row[j] = T::zero();
        }
        let f = self.d[j];
        if f != T::zero() {
            for &k in &nz {
                self.d[k] -= f * prow[k];
            }
            self.d[j] = T::zero();
        }
    }
}

/// Gauss-Jordan step making column `col` the unit vector `e_r`.
fn eliminate<T: Scalar>(tab: &mut [T], beta: &mut [T], m: usize, ncols: usize, r: usize, col: usize) {
    let inv = T::one() / tab[r * ncols + col];
    let nz: Vec<usize> = (0..ncols).filter(|&k| tab[r * ncols + k] != T::zero()).collect();
    for &k in &nz {
        tab[r * ncols + k] *= inv;
    }
    tab[r * ncols + col] = T::one();
    beta[r] *= inv;
    let br = beta[r];
    for i in 0..m {
        if i == r {
            continue;
        }
        let f = tab[i * ncols + col];
        if f == T::zero() {
            continue;
        }
        for &k in &nz {
            let v = tab[r * ncols + k];
            tab[i * ncols + k] -= f * v;
        }
        tab[i * ncols + col] = T::zero();
        beta[i] -= f * br;
    }
}
