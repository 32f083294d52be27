//! Best-first branch-and-bound over the LP relaxation.
//!
//! Nodes are ordered by their LP bound (largest first, ties by creation
//! order) and solved lazily when popped. A node's bound is the minimum of its
//! parent's bound and its own LP value. Branching picks the most fractional
//! binary, lowest id on ties. Each LP solution is handed to the
//! [`BranchContext`], which may turn it into a true feasible value (for
//! LipMIP: the exact gradient norm at the LP's input point) and may rebuild the
//! node model with tighter bounds.
//!
//! The incumbent only increases and the global upper bound
//! `max(incumbent, best open bound, best pruned bound)` only decreases, so a
//! run stopped for any reason still reports a certified sandwich.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lp::{DenseSimplex, LpSolution, LpSolver, LpStatus, LpTolerances};
use crate::mip::{build_lipmip_model, BranchContext, LipschitzContext, LipschitzQuery, MipModel, NodeModel, VarId};
use crate::network::ReLUNetwork;
use crate::scalar::Scalar;

pub const PRUNE_TOL: f64 = 1e-9;
pub const EPS_GAP: f64 = 1e-9;
pub const INT_TOL: f64 = 1e-6;
/// Gap below which a stopped run is reported as exact.
pub const EXACT_GAP: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Relative gap at which to stop; 0 solves to optimality.
    pub target_gap: f64,
    pub timeout_seconds: f64,
    pub node_limit: usize,
    /// Forces single-threaded execution.
    pub deterministic: bool,
    pub threads: usize,
    /// Re-run interval propagation with branched neurons forced on or off.
    pub bound_tightening: bool,
    pub record_events: bool,
    pub lp_tolerances: LpTolerances,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            target_gap: 0.0,
            timeout_seconds: f64::INFINITY,
            node_limit: usize::MAX,
            deterministic: true,
            threads: 1,
            bound_tightening: true,
            record_events: false,
            lp_tolerances: LpTolerances::default(),
        }
    }
}

impl SolveOptions {
    pub fn with_gap(mut self, gap: f64) -> Self {
        self.target_gap = gap;
        self
    }

    fn effective_threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads.max(1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MipStatus {
    Exact,
    GapReached,
    Timeout,
    NodeLimit,
    Infeasible,
    NumericalFailure,
}

impl MipStatus {
    pub fn name(self) -> &'static str {
        match self {
            MipStatus::Exact => "exact",
            MipStatus::GapReached => "gap_reached",
            MipStatus::Timeout => "timeout",
            MipStatus::NodeLimit => "node_limit",
            MipStatus::Infeasible => "infeasible",
            MipStatus::NumericalFailure => "numerical_failure",
        }
    }
}

/// One processed node, for the optional event log.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEvent<T> {
    pub node: u64,
    pub depth: usize,
    pub bound: T,
    pub incumbent: T,
    pub upper_bound: T,
}

#[derive(Debug, Clone)]
pub struct MipResult<T> {
    pub upper_bound: T,
    pub incumbent_value: T,
    pub incumbent_point: Vec<T>,
    pub gap: T,
    pub status: MipStatus,
    pub nodes_explored: usize,
    pub wall_time: f64,
    pub events: Vec<NodeEvent<T>>,
}

impl<T: Scalar> MipResult<T> {
    /// The event log as CSV with header `node,depth,bound,incumbent,upper_bound`.
    pub fn events_csv(&self) -> String {
        let mut s = String::from("node,depth,bound,incumbent,upper_bound\n");
        for e in &self.events {
            s.push_str(&format!("{},{},{},{},{}\n", e.node, e.depth, e.bound, e.incumbent, e.upper_bound));
        }
        s
    }
}

pub fn relative_gap<T: Scalar>(upper: T, incumbent: T) -> T {
    if !incumbent.is_finite() {
        return T::infinity();
    }
    let d = (upper - incumbent).max(T::zero());
    d / incumbent.abs().max(T::lit(EPS_GAP))
}

struct Node<T> {
    id: u64,
    depth: usize,
    bound: T,
    fixings: Vec<(VarId, bool)>,
}

impl<T: Scalar> PartialEq for Node<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Node<T> {}

impl<T: Scalar> PartialOrd for Node<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Node<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .partial_cmp(&other.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.id.cmp(&self.id))
    }
}

enum NodeOutcome<T> {
    Infeasible,
    /// No LP solve succeeded; the node model is kept for branching.
    Failed(MipModel<T>),
    Solved { model: MipModel<T>, solution: LpSolution<T>, value: T },
}

enum LpAttempt<T> {
    Infeasible,
    Failed,
    Solved(LpSolution<T>, T),
}

fn solve_relaxation<T: Scalar, S: LpSolver<T> + ?Sized>(model: &MipModel<T>, solver: &S, tols: &LpTolerances) -> LpAttempt<T> {
    let (lp, constant) = model.lp_relaxation().to_lp();
    let mut attempt = *tols;
    for _ in 0..2 {
        let sol = match solver.solve(&lp, &attempt) {
            Ok(s) => s,
            Err(_) => return LpAttempt::Failed,
        };
        match sol.status {
            LpStatus::Optimal => {
                let value = sol.objective_value + constant;
                return LpAttempt::Solved(sol, value);
            }
            LpStatus::Infeasible => return LpAttempt::Infeasible,
            LpStatus::Unbounded | LpStatus::NumericalFailure => attempt = attempt.tightened(),
        }
    }
    LpAttempt::Failed
}

fn solve_node<T: Scalar, S: LpSolver<T> + ?Sized>(
    root: &MipModel<T>,
    ctx: &dyn BranchContext<T>,
    node: &Node<T>,
    solver: &S,
    tols: &LpTolerances,
) -> NodeOutcome<T> {
    let plain = || root.with_fixings(&node.fixings);
    let (model, rebuilt) = match ctx.node_model(&node.fixings) {
        NodeModel::Infeasible => return NodeOutcome::Infeasible,
        NodeModel::Rebuilt(m) => (m, true),
        NodeModel::Unchanged => match plain() {
            Some(m) => (m, false),
            None => return NodeOutcome::Infeasible,
        },
    };
    match solve_relaxation(&model, solver, tols) {
        LpAttempt::Infeasible => NodeOutcome::Infeasible,
        LpAttempt::Solved(solution, value) => NodeOutcome::Solved { model, solution, value },
        LpAttempt::Failed if rebuilt => match plain() {
            None => NodeOutcome::Infeasible,
            Some(fallback) => match solve_relaxation(&fallback, solver, tols) {
                LpAttempt::Infeasible => NodeOutcome::Infeasible,
                LpAttempt::Solved(solution, value) => NodeOutcome::Solved { model: fallback, solution, value },
                LpAttempt::Failed => NodeOutcome::Failed(model),
            },
        },
        LpAttempt::Failed => NodeOutcome::Failed(model),
    }
}

/// Free binary of `model` fractional at `x` with the best branching key,
/// lowest id on ties.
fn branching_var<T: Scalar>(model: &MipModel<T>, ctx: &dyn BranchContext<T>, x: &[T]) -> Option<VarId> {
    let tol = T::lit(INT_TOL);
    let mut best: Option<(u32, T, VarId)> = None;
    for v in model.free_binaries() {
        let f = x[v.0];
        let frac = f.min(T::one() - f);
        if frac <= tol {
            continue;
        }
        let (class, score) = ctx.branch_key(v, frac);
        if best.is_none_or(|(bc, bs, _)| class < bc || (class == bc && score > bs)) {
            best = Some((class, score, v));
        }
    }
    best.map(|(_, _, v)| v)
}

pub fn solve_mip<T: Scalar>(model: &MipModel<T>, ctx: &dyn BranchContext<T>, opts: &SolveOptions) -> Result<MipResult<T>> {
    solve_mip_with(model, ctx, opts, &DenseSimplex)
}

pub fn solve_mip_with<T: Scalar, S: LpSolver<T> + ?Sized>(
    model: &MipModel<T>,
    ctx: &dyn BranchContext<T>,
    opts: &SolveOptions,
    solver: &S,
) -> Result<MipResult<T>> {
    if !(opts.target_gap >= 0.0) {
        return Err(Error::Input(format!("target gap {} must be non-negative", opts.target_gap)));
    }
    let start = Instant::now();
    let threads = opts.effective_threads();
    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Input(format!("cannot start {threads} threads: {e}")))?,
        )
    } else {
        None
    };
    let prune = |bound: T, inc: T| bound <= inc + T::lit(PRUNE_TOL) * inc.abs().max(T::lit(EPS_GAP));

    let mut heap = BinaryHeap::new();
    heap.push(Node { id: 0, depth: 0, bound: T::infinity(), fixings: Vec::new() });
    let mut next_id = 1u64;
    let mut inc = T::neg_infinity();
    let mut inc_point: Vec<T> = Vec::new();
    let mut pruned_max = T::neg_infinity();
    // bounds of fully fixed nodes whose LP could not be solved
    let mut unresolved = T::neg_infinity();
    let mut ub_prev = T::infinity();
    let mut nodes = 0usize;
    let mut events = Vec::new();
    let status;
    let mut feasible = false;

    let global_ub = |heap: &BinaryHeap<Node<T>>, inc: T, pruned: T, prev: T| {
        let open = heap.peek().map_or(T::neg_infinity(), |n| n.bound);
        open.max(pruned).max(inc).min(prev).max(inc)
    };

    loop {
        let ub = global_ub(&heap, inc, pruned_max.max(unresolved), ub_prev);
        ub_prev = ub;
        if heap.is_empty() {
            status = if unresolved > T::neg_infinity() && !prune(unresolved, inc) {
                MipStatus::NumericalFailure
            } else if feasible {
                MipStatus::Exact
            } else {
                MipStatus::Infeasible
            };
            break;
        }
        if inc.is_finite() {
            let gap = relative_gap(ub, inc);
            if gap <= T::lit(opts.target_gap) {
                status = if gap <= T::lit(EXACT_GAP) { MipStatus::Exact } else { MipStatus::GapReached };
                break;
            }
        }
        if start.elapsed().as_secs_f64() >= opts.timeout_seconds {
            status = MipStatus::Timeout;
            break;
        }
        if nodes >= opts.node_limit {
            status = MipStatus::NodeLimit;
            break;
        }

        let mut batch = Vec::with_capacity(threads);
        while batch.len() < threads {
            let Some(node) = heap.pop() else { break };
            if inc.is_finite() && prune(node.bound, inc) {
                pruned_max = pruned_max.max(node.bound);
                continue;
            }
            batch.push(node);
        }
        if batch.is_empty() {
            continue;
        }
        let tols = opts.lp_tolerances;
        let outcomes: Vec<NodeOutcome<T>> = match &pool {
            Some(pool) => pool.install(|| batch.par_iter().map(|n| solve_node(model, ctx, n, solver, &tols)).collect()),
            None => batch.iter().map(|n| solve_node(model, ctx, n, solver, &tols)).collect(),
        };

        for (node, outcome) in batch.into_iter().zip(outcomes) {
            nodes += 1;
            let (node_model, sol, value) = match outcome {
                NodeOutcome::Infeasible => continue,
                NodeOutcome::Failed(node_model) => {
                    // split without an LP bound; children inherit the parent's
                    let half = vec![T::lit(0.5); node_model.num_vars()];
                    match branching_var(&node_model, ctx, &half) {
                        Some(var) => {
                            for val in [true, false] {
                                let mut fixings = node.fixings.clone();
                                fixings.push((var, val));
                                heap.push(Node { id: next_id, depth: node.depth + 1, bound: node.bound, fixings });
                                next_id += 1;
                            }
                        }
                        None => unresolved = unresolved.max(node.bound),
                    }
                    continue;
                }
                NodeOutcome::Solved { model, solution, value } => (model, solution, value),
            };
            feasible = true;
            let bound = node.bound.min(value);
            if let Some((v, point)) = ctx.evaluate(&sol.x) {
                if v > inc {
                    inc = v;
                    inc_point = point;
                }
            }
            let branch = branching_var(&node_model, ctx, &sol.x);
            if branch.is_none() && value > inc {
                // integral LP solution: a feasible point of the MIP itself
                inc = value;
                inc_point = ctx.point(&sol.x);
            }
            if opts.record_events {
                let ub = global_ub(&heap, inc, pruned_max.max(unresolved), ub_prev).max(bound.min(ub_prev));
                events.push(NodeEvent { node: node.id, depth: node.depth, bound, incumbent: inc, upper_bound: ub });
            }
            match branch {
                None => {
                    pruned_max = pruned_max.max(bound.min(value));
                }
                Some(_) if prune(bound, inc) => {
                    pruned_max = pruned_max.max(bound);
                }
                Some(var) => {
                    for val in [true, false] {
                        let mut fixings = node.fixings.clone();
                        fixings.push((var, val));
                        heap.push(Node { id: next_id, depth: node.depth + 1, bound, fixings });
                        next_id += 1;
                    }
                }
            }
        }
    }

    let upper_bound = global_ub(&heap, inc, pruned_max.max(unresolved), ub_prev);
    let (upper_bound, gap) = match status {
        MipStatus::Infeasible => (T::neg_infinity(), T::zero()),
        _ => (upper_bound, relative_gap(upper_bound, inc)),
    };
    Ok(MipResult {
        upper_bound,
        incumbent_value: inc,
        incumbent_point: inc_point,
        gap,
        status,
        nodes_explored: nodes,
        wall_time: start.elapsed().as_secs_f64(),
        events,
    })
}

/// Certified upper bound from the LP relaxation of `model`.
pub fn solve_liplp<T: Scalar>(model: &MipModel<T>, tols: &LpTolerances) -> Result<T> {
    let (lp, constant) = model.lp_relaxation().to_lp();
    let mut attempt = *tols;
    for _ in 0..2 {
        let sol = DenseSimplex.solve(&lp, &attempt)?;
        match sol.status {
            LpStatus::Optimal => return Ok(sol.objective_value + constant),
            LpStatus::Infeasible => return Err(Error::Model("LP relaxation is infeasible".into())),
            _ => attempt = attempt.tightened(),
        }
    }
    Err(Error::Model("LP relaxation failed numerically".into()))
}

/// LipMIP end to end: build the model for `query` and solve it.
pub fn lipmip<T: Scalar>(net: &ReLUNetwork<T>, query: &LipschitzQuery<T>, opts: &SolveOptions) -> Result<MipResult<T>> {
    let built = build_lipmip_model(net, query)?;
    let ctx = LipschitzContext::new(net, query, &built, opts.bound_tightening);
    solve_mip(&built.model, &ctx, opts)
}

/// LipLP end to end.
pub fn liplp<T: Scalar>(net: &ReLUNetwork<T>, query: &LipschitzQuery<T>, tols: &LpTolerances) -> Result<T> {
    let built = build_lipmip_model(net, query)?;
    solve_liplp(&built.model, tols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::Hyperbox;
    use crate::lp::{solve_lp, LpProblem, Relation};
    use crate::mip::{LinExpr, PlainContext};
    use crate::norms::InputNorm;
    use ndarray::array;

    fn knapsack() -> MipModel<f64> {
        // max 5a + 4b + 3c  s.t. 2a + 3b + c <= 5 (a, b, c binary) -> 9? enumerate
        let mut m = MipModel::new();
        let a = m.add_binary("a");
        let b = m.add_binary("b");
        let c = m.add_binary("c");
        m.add_constraint(LinExpr::from_terms([(a, 2.0), (b, 3.0), (c, 1.0)]), Relation::Le, 5.0).unwrap();
        m.set_objective(LinExpr::from_terms([(a, 5.0), (b, 4.0), (c, 3.0)]));
        m
    }

    #[test]
    fn small_knapsack_matches_enumeration() {
        let m = knapsack();
        let mut best = f64::NEG_INFINITY;
        for mask in 0..8 {
            let x: Vec<f64> = (0..3).map(|k| ((mask >> k) & 1) as f64).collect();
            if m.max_violation(&x) <= 0.0 {
                best = best.max(m.objective_value(&x));
            }
        }
        let r = solve_mip(&m, &PlainContext, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, MipStatus::Exact);
        assert!((r.incumbent_value - best).abs() < 1e-9);
        assert!((r.upper_bound - best).abs() < 1e-6);
    }

    /// Fails on every problem with fewer than `min_fixed` fixed columns.
    struct FlakySolver {
        min_fixed: usize,
    }

    impl LpSolver<f64> for FlakySolver {
        fn solve(&self, p: &LpProblem<f64>, tols: &LpTolerances) -> Result<LpSolution<f64>> {
            let fixed = p.lo.iter().zip(&p.hi).filter(|(l, h)| l == h).count();
            if fixed < self.min_fixed {
                return Err(Error::Model("flaky".into()));
            }
            solve_lp(p, tols)
        }
    }

    #[test]
    fn failed_nodes_are_split_without_a_bound() {
        let m = knapsack();
        let want = solve_mip(&m, &PlainContext, &SolveOptions::default()).unwrap().incumbent_value;
        let r = solve_mip_with(&m, &PlainContext, &SolveOptions::default(), &FlakySolver { min_fixed: 2 }).unwrap();
        assert_eq!(r.status, MipStatus::Exact);
        assert!((r.incumbent_value - want).abs() < 1e-9);
    }

    #[test]
    fn unsolvable_leaves_keep_the_bound_open() {
        let r = solve_mip_with(&knapsack(), &PlainContext, &SolveOptions::default(), &FlakySolver { min_fixed: 4 }).unwrap();
        assert_eq!(r.status, MipStatus::NumericalFailure);
        assert!(r.upper_bound.is_infinite());
    }

    #[test]
    fn infeasible_model() {
        let mut m = MipModel::<f64>::new();
        let a = m.add_binary("a");
        m.add_constraint(LinExpr::var(a), Relation::Ge, 2.0).unwrap();
        let r = solve_mip(&m, &PlainContext, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, MipStatus::Infeasible);
    }

    #[test]
    fn all_fixed_model_solves_at_root() {
        let net = ReLUNetwork::<f64>::affine_scalar(&[1.0, -3.0], 50.0).unwrap();
        let q = LipschitzQuery::scalar(Hyperbox::unit(2), InputNorm::Linf);
        let r = lipmip(&net, &q, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, MipStatus::Exact);
        assert_eq!(r.nodes_explored, 1);
        assert!((r.incumbent_value - 4.0).abs() < 1e-9);
    }

    #[test]
    fn identity_network_reaches_two() {
        let net = ReLUNetwork::<f64>::identity(1000.0);
        let q = LipschitzQuery::scalar(Hyperbox::new(array![-1.0], array![1.0]).unwrap(), InputNorm::Linf);
        let r = lipmip(&net, &q, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, MipStatus::Exact);
        assert!((r.incumbent_value - 2.0).abs() < 1e-6);
        assert!((r.upper_bound - 2.0).abs() < 1e-6);
    }

    #[test]
    fn event_log_is_monotone() {
        let net = crate::network::random_he::<f64>(&[3, 6, 6, 1], 5).unwrap();
        let q = LipschitzQuery::scalar(Hyperbox::unit(3), InputNorm::Linf);
        let opts = SolveOptions { record_events: true, ..Default::default() };
        let r = lipmip(&net, &q, &opts).unwrap();
        assert!(!r.events.is_empty());
        for w in r.events.windows(2) {
            assert!(w[1].incumbent >= w[0].incumbent);
            assert!(w[1].upper_bound <= w[0].upper_bound);
        }
        assert!(r.events_csv().starts_with("node,depth,bound,incumbent,upper_bound\n"));
    }

    #[test]
    fn negative_gap_rejected() {
        let r = solve_mip(&knapsack(), &PlainContext, &SolveOptions::default().with_gap(-1.0));
        assert!(r.is_err());
    }
}
