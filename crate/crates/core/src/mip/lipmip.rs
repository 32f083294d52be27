//! The mixed-integer program whose optimum is the local Lipschitz constant.
//!
//! The forward pass `x -> Z_i -> relu(Z_i)` and the backward pass
//! `Y_{d+1} -> Lambda_d Y_{d+1} -> W_d^T (...) -> ... -> g` share one
//! indicator per neuron, so every feasible point is a single activation
//! pattern together with the gradient that pattern induces. The objective is
//! the dual input norm of `g`.

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1};

use super::encode::{
    encode_abs, encode_affine, encode_cross_norm_ball, encode_l1_ball, encode_linf_ball, encode_max, encode_relu,
    encode_switch, EncodingContext, Indicator,
};
use super::model::{LinExpr, MipModel, VarId};
use crate::error::{dim_err, Error, Result};
use crate::interval::{propagate_forced, BackwardSeed, Forcing, Hyperbox, PropagationResult};
use crate::lp::{solve_lp, LpProblem, LpRow, LpStatus, LpTolerances, Relation};
use crate::network::{ReLUNetwork, ZeroRule};
use crate::norms::{induced_norm, InputNorm, OutputNorm};
use crate::scalar::Scalar;

/// Extra linear constraint `coeffs^T x (rel) rhs` on the input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputConstraint<T> {
    pub coeffs: Vec<T>,
    pub rel: Relation,
    pub rhs: T,
}

impl<T: Scalar> InputConstraint<T> {
    pub fn holds(&self, x: ArrayView1<'_, T>, tol: T) -> bool {
        let lhs = self.coeffs.iter().zip(x.iter()).fold(T::zero(), |a, (c, v)| a + *c * *v);
        match self.rel {
            Relation::Le => lhs <= self.rhs + tol,
            Relation::Ge => lhs >= self.rhs - tol,
            Relation::Eq => (lhs - self.rhs).abs() <= tol,
        }
    }
}

/// Domain and norms of a Lipschitz query.
#[derive(Debug, Clone)]
pub struct LipschitzQuery<T> {
    pub domain: Hyperbox<T>,
    pub extra: Vec<InputConstraint<T>>,
    pub input_norm: InputNorm,
    /// `Abs` for scalar networks; `L1`, `Linf` or `Cross` otherwise.
    pub output_norm: OutputNorm,
}

impl<T: Scalar> LipschitzQuery<T> {
    pub fn scalar(domain: Hyperbox<T>, input_norm: InputNorm) -> Self {
        Self { domain, extra: Vec::new(), input_norm, output_norm: OutputNorm::Abs }
    }

    pub fn vector(domain: Hyperbox<T>, input_norm: InputNorm, output_norm: OutputNorm) -> Self {
        Self { domain, extra: Vec::new(), input_norm, output_norm }
    }

    pub fn seed(&self) -> BackwardSeed<T> {
        match self.output_norm {
            OutputNorm::Abs => BackwardSeed::Head,
            other => BackwardSeed::DualBall(other),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LipMipModel<T> {
    pub model: MipModel<T>,
    pub x_vars: Vec<VarId>,
    /// Indicator of neuron `j` of hidden layer `i` at `[i][j]`.
    pub indicators: Vec<Vec<Indicator>>,
    pub z_vars: Vec<VarId>,
    pub gradient_vars: Vec<VarId>,
    pub bounds: PropagationResult<T>,
}

/// Builds the LipMIP model. Indicators that interval analysis fixes still get
/// a pinned binary variable, so models rebuilt with extra forcings number
/// their variables identically.
pub fn build_lipmip_model<T: Scalar>(net: &ReLUNetwork<T>, query: &LipschitzQuery<T>) -> Result<LipMipModel<T>> {
    build_forced(net, query, &[], true)?
        .ok_or_else(|| Error::Model("unforced model cannot be infeasible".into()))
}

/// Same as [`build_lipmip_model`] with some neurons forced on or off;
/// `None` when the forcing is inconsistent with the domain.
pub fn build_forced<T: Scalar>(
    net: &ReLUNetwork<T>,
    query: &LipschitzQuery<T>,
    forced: &[Forcing],
    keep_fixed_binaries: bool,
) -> Result<Option<LipMipModel<T>>> {
    let n0 = net.input_dim();
    let m = net.output_dim();
    if query.domain.dim() != n0 {
        return dim_err(format!("domain has dimension {}, network expects {n0}", query.domain.dim()));
    }
    if query.output_norm == OutputNorm::Abs && m != 1 {
        return Err(Error::Input(format!(
            "output norm 'abs' needs a scalar network, this one has {m} outputs"
        )));
    }
    for (k, c) in query.extra.iter().enumerate() {
        if c.coeffs.len() != n0 {
            return dim_err(format!("input constraint {k} has {} coefficients, expected {n0}", c.coeffs.len()));
        }
    }
    let Some(prop) = propagate_forced(net, &query.domain, &query.seed(), forced)? else {
        return Ok(None);
    };
    let mut ctx = EncodingContext { model: MipModel::new(), keep_fixed_binaries };

    let mut x_vars = Vec::with_capacity(n0);
    for k in 0..n0 {
        x_vars.push(ctx.model.add_continuous(format!("x[{k}]"), query.domain.lo[k], query.domain.hi[k])?);
    }
    for c in &query.extra {
        let e = LinExpr::from_terms(x_vars.iter().copied().zip(c.coeffs.iter().copied()));
        ctx.model.add_constraint(e, c.rel, c.rhs)?;
    }

    let mut prev = x_vars.clone();
    let mut indicators = Vec::with_capacity(net.depth());
    for (i, layer) in net.layers().iter().enumerate() {
        let zb = &prop.pre_activation_boxes[i];
        let zs = encode_affine(
            &mut ctx,
            &prev,
            layer.weight.view(),
            Some(layer.bias.view()),
            Some((zb.lo.as_slice().expect("contiguous"), zb.hi.as_slice().expect("contiguous"))),
            &format!("z{}", i + 1),
        )?;
        let mut inds = Vec::with_capacity(zs.len());
        let mut posts = Vec::with_capacity(zs.len());
        for (j, &z) in zs.iter().enumerate() {
            let tri = prop.activation_boolboxes[i].v[j];
            let (a, y) = encode_relu(&mut ctx, z, Some(tri), &format!("h{}[{j}]", i + 1))?;
            inds.push(a);
            posts.push(y);
        }
        indicators.push(inds);
        prev = posts;
    }

    let head = net.head();
    let nd = head.ncols();
    let (z_vars, top) = match query.output_norm {
        OutputNorm::Abs => {
            let mut ys = Vec::with_capacity(nd);
            for k in 0..nd {
                let c = head[[0, k]];
                ys.push(ctx.model.add_continuous(format!("y{}[{k}]", net.depth() + 1), c, c)?);
            }
            (Vec::new(), ys)
        }
        norm => {
            let zs = match norm {
                OutputNorm::L1 => encode_linf_ball(&mut ctx, m)?,
                OutputNorm::Linf => encode_l1_ball(&mut ctx, m)?,
                _ => encode_cross_norm_ball(&mut ctx, m)?,
            };
            let seed = &prop.gradient_boxes[net.depth()];
            let ys = encode_affine(
                &mut ctx,
                &zs,
                head.t(),
                None,
                Some((seed.lo.as_slice().expect("contiguous"), seed.hi.as_slice().expect("contiguous"))),
                &format!("y{}", net.depth() + 1),
            )?;
            (zs, ys)
        }
    };

    let mut v = top;
    for i in (0..net.depth()).rev() {
        let sb = &prop.switched_boxes[i];
        let mut s = Vec::with_capacity(v.len());
        for (j, &vj) in v.iter().enumerate() {
            s.push(encode_switch(
                &mut ctx,
                vj,
                indicators[i][j],
                Some((sb.lo[j], sb.hi[j])),
                &format!("s{}[{j}]", i + 1),
            )?);
        }
        let gb = &prop.gradient_boxes[i];
        v = encode_affine(
            &mut ctx,
            &s,
            net.layers()[i].weight.t(),
            None,
            Some((gb.lo.as_slice().expect("contiguous"), gb.hi.as_slice().expect("contiguous"))),
            &format!("y{}", i),
        )?;
    }
    let gradient_vars = v;

    let abs: Vec<VarId> = gradient_vars
        .iter()
        .enumerate()
        .map(|(k, &g)| encode_abs(&mut ctx, g, &format!("abs[{k}]")))
        .collect::<Result<_>>()?;
    let objective = match query.input_norm {
        InputNorm::Linf => LinExpr::from_terms(abs.iter().map(|&a| (a, T::one()))),
        InputNorm::L1 => LinExpr::var(encode_max(&mut ctx, &abs, "max")?),
    };
    ctx.model.set_objective(objective);

    Ok(Some(LipMipModel { model: ctx.model, x_vars, indicators, z_vars, gradient_vars, bounds: prop }))
}

/// Result of specializing a model to a branch-and-bound node.
#[derive(Debug, Clone)]
pub enum NodeModel<T> {
    /// Use the root model with the fixings applied as bounds.
    Unchanged,
    Infeasible,
    Rebuilt(MipModel<T>),
}

/// Problem structure branch-and-bound can exploit beyond the bare model.
pub trait BranchContext<T: Scalar>: Sync {
    /// True objective value of a feasible point derived from an LP solution,
    /// with the point to report.
    fn evaluate(&self, _lp_x: &[T]) -> Option<(T, Vec<T>)> {
        None
    }

    /// The part of an LP solution worth reporting as an incumbent point.
    fn point(&self, lp_x: &[T]) -> Vec<T> {
        lp_x.to_vec()
    }

    fn node_model(&self, _fixings: &[(VarId, bool)]) -> NodeModel<T> {
        NodeModel::Unchanged
    }

    /// Key of a fractional binary `v` with fractionality `frac`: the lowest class is branched on first, the
    /// highest score within it.
    fn branch_key(&self, _v: VarId, frac: T) -> (u32, T) {
        (0, frac)
    }
}

/// A context that knows nothing about the model.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlainContext;

impl<T: Scalar> BranchContext<T> for PlainContext {}

/// Incumbents from exact gradient evaluation and node-level bound
/// tightening for LipMIP models.
pub struct LipschitzContext<'a, T> {
    net: &'a ReLUNetwork<T>,
    query: &'a LipschitzQuery<T>,
    x_vars: Vec<VarId>,
    indicators: Vec<Vec<Indicator>>,
    neuron_of: BTreeMap<VarId, (usize, usize)>,
    tighten: bool,
}

impl<'a, T: Scalar> LipschitzContext<'a, T> {
    pub fn new(net: &'a ReLUNetwork<T>, query: &'a LipschitzQuery<T>, built: &LipMipModel<T>, tighten: bool) -> Self {
        let mut neuron_of = BTreeMap::new();
        for (i, layer) in built.indicators.iter().enumerate() {
            for (j, ind) in layer.iter().enumerate() {
                if let Some(v) = ind.var() {
                    neuron_of.insert(v, (i, j));
                }
            }
        }
        Self { net, query, x_vars: built.x_vars.clone(), indicators: built.indicators.clone(), neuron_of, tighten }
    }

    /// Exact `||J||` at `x` for the chain-rule Jacobian with `relu'(0) = 0`.
    pub fn value_at(&self, x: ArrayView1<'_, T>) -> Result<T> {
        let jac = self.net.chain_rule_jacobian(x, &ZeroRule::AlwaysZero)?;
        Ok(induced_norm(jac.view(), self.query.input_norm, self.query.output_norm))
    }

    /// Rounds the indicators of an LP solution to an activation pattern and
    /// looks for an input in the closed region of that pattern, maximizing
    /// the smallest signed pre-activation.
    fn repair(&self, lp_x: &[T]) -> Option<(T, Vec<T>)> {
        let half = T::lit(0.5);
        let pattern: Vec<Vec<bool>> = self
            .indicators
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|ind| match ind.var() {
                        Some(v) => lp_x[v.0] >= half,
                        None => ind.fixed().unwrap_or(false),
                    })
                    .collect()
            })
            .collect();
        let maps = self.net.region_maps(&pattern).ok()?;
        let n = self.x_vars.len();
        let d = &self.query.domain;
        let mut rows = Vec::new();
        for ((a, c), mask) in maps.iter().zip(&pattern) {
            for (j, &on) in mask.iter().enumerate() {
                let s = if on { T::one() } else { -T::one() };
                let mut coeffs: Vec<(usize, T)> = a
                    .row(j)
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != T::zero())
                    .map(|(k, v)| (k, s * *v))
                    .collect();
                coeffs.push((n, -T::one()));
                rows.push(LpRow { coeffs, rel: Relation::Ge, rhs: -s * c[j] });
            }
        }
        for ec in &self.query.extra {
            let coeffs = ec.coeffs.iter().copied().enumerate().filter(|(_, v)| *v != T::zero()).collect();
            rows.push(LpRow { coeffs, rel: ec.rel, rhs: ec.rhs });
        }
        let mut lo = d.lo.to_vec();
        let mut hi = d.hi.to_vec();
        let mut objective = vec![T::zero(); n];
        lo.push(-T::one());
        hi.push(T::one());
        objective.push(T::one());
        let sol = solve_lp(&LpProblem { objective, lo, hi, rows }, &LpTolerances::for_scalar::<T>()).ok()?;
        let tol = T::lit(1e-9);
        if sol.status != LpStatus::Optimal || sol.x[n] < -tol {
            return None;
        }
        let x = Array1::from_shape_fn(n, |k| sol.x[k].max(d.lo[k]).min(d.hi[k]));
        if !self.query.extra.iter().all(|c| c.holds(x.view(), tol)) {
            return None;
        }
        let trace = self.net.forward_trace(x.view()).ok()?;
        for (z, mask) in trace.pre_activations.iter().zip(&pattern) {
            if z.iter().zip(mask).any(|(&zj, &on)| if on { zj < -tol } else { zj > tol }) {
                return None;
            }
        }
        let jac = self.net.jacobian_for_pattern(&pattern).ok()?;
        Some((induced_norm(jac.view(), self.query.input_norm, self.query.output_norm), x.to_vec()))
    }
}

impl<T: Scalar> BranchContext<T> for LipschitzContext<'_, T> {
    fn evaluate(&self, lp_x: &[T]) -> Option<(T, Vec<T>)> {
        let d = &self.query.domain;
        let x = Array1::from_shape_fn(self.x_vars.len(), |k| lp_x[self.x_vars[k].0].max(d.lo[k]).min(d.hi[k]));
        let tol = T::lit(1e-9);
        let direct = if self.query.extra.iter().all(|c| c.holds(x.view(), tol)) {
            self.value_at(x.view()).ok().map(|v| (v, x.to_vec()))
        } else {
            None
        };
        match (direct, self.repair(lp_x)) {
            (Some(a), Some(b)) => Some(if b.0 > a.0 { b } else { a }),
            (a, b) => a.or(b),
        }
    }

    fn point(&self, lp_x: &[T]) -> Vec<T> {
        let d = &self.query.domain;
        (0..self.x_vars.len())
            .map(|k| lp_x[self.x_vars[k].0].max(d.lo[k]).min(d.hi[k]))
            .collect()
    }

    fn node_model(&self, fixings: &[(VarId, bool)]) -> NodeModel<T> {
        if !self.tighten {
            return NodeModel::Unchanged;
        }
        let forced: Vec<Forcing> = fixings
            .iter()
            .filter_map(|(v, b)| self.neuron_of.get(v).map(|&n| (n, *b)))
            .collect();
        if forced.is_empty() {
            return NodeModel::Unchanged;
        }
        match build_forced(self.net, self.query, &forced, true) {
            Ok(Some(built)) => match built.model.with_fixings(fixings) {
                Some(m) => NodeModel::Rebuilt(m),
                None => NodeModel::Infeasible,
            },
            Ok(None) => NodeModel::Infeasible,
            Err(_) => NodeModel::Unchanged,
        }
    }

    /// Neurons of deeper layers first, most fractional within a layer;
    /// auxiliary binaries of the output norm last.
    fn branch_key(&self, v: VarId, frac: T) -> (u32, T) {
        match self.neuron_of.get(&v) {
            Some(&(layer, _)) => ((self.net.depth() - layer) as u32, frac),
            None => (u32::MAX, frac),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::random_he;
    use ndarray::array;

    fn unit_query(n: usize, norm: InputNorm) -> LipschitzQuery<f64> {
        LipschitzQuery::scalar(Hyperbox::unit(n), norm)
    }

    /// Full assignment for input `x` under the `AlwaysZero` rule: inputs and
    /// indicators are pinned, the equalities then determine every continuous
    /// variable, and the abs signs follow from the gradient.
    fn assignment(built: &LipMipModel<f64>, net: &ReLUNetwork<f64>, x: &Array1<f64>) -> Vec<f64> {
        let pattern = net.pattern_at(x.view(), 0.0).unwrap().resolve(&ZeroRule::AlwaysZero).unwrap();
        let mut m = built.model.clone();
        for (k, &v) in built.x_vars.iter().enumerate() {
            m.set_bounds(v, x[k], x[k]);
        }
        let mut fix = Vec::new();
        for (i, layer) in built.indicators.iter().enumerate() {
            for (j, ind) in layer.iter().enumerate() {
                if let Some(v) = ind.var() {
                    fix.push((v, pattern[i][j]));
                }
            }
        }
        let solve = |m: &MipModel<f64>| {
            let (lp, _) = m.lp_relaxation().to_lp();
            let sol = crate::lp::solve_lp(&lp, &Default::default()).unwrap();
            assert_eq!(sol.status, crate::lp::LpStatus::Optimal);
            sol.x
        };
        let m = m.with_fixings(&fix).expect("pattern consistent with bounds");
        let first = solve(&m);
        let mut signs = Vec::new();
        for (k, &g) in built.gradient_vars.iter().enumerate() {
            let name = format!("s_abs[{k}]");
            if let Some(i) = m.vars().iter().position(|v| v.name == name) {
                if m.var(VarId(i)).lo < m.var(VarId(i)).hi {
                    signs.push((VarId(i), first[g.0] < 0.0));
                }
            }
        }
        solve(&m.with_fixings(&signs).unwrap())
    }

    #[test]
    fn objective_matches_gradient_norm_on_samples() {
        let net = random_he::<f64>(&[3, 5, 4, 1], 9).unwrap();
        let q = unit_query(3, InputNorm::Linf);
        let built = build_lipmip_model(&net, &q).unwrap();
        let mut rng = crate::rng::SplitMix64::new(4);
        for _ in 0..20 {
            let x = Array1::from_shape_fn(3, |_| rng.next_f64());
            let vals = assignment(&built, &net, &x);
            assert!(built.model.max_violation(&vals) < 1e-9);
            let obj = built.model.objective_value(&vals);
            let jac = net.chain_rule_jacobian(x.view(), &ZeroRule::AlwaysZero).unwrap();
            let want: f64 = jac.row(0).iter().map(|v| v.abs()).sum();
            assert!((obj - want).abs() < 1e-9 * (1.0 + want), "{obj} vs {want}");
        }
    }

    #[test]
    fn model_size_is_linear() {
        for arch in [[4usize, 8, 8, 1], [6, 10, 10, 1]] {
            let net = random_he::<f64>(&arch, 1).unwrap();
            let built = build_lipmip_model(&net, &unit_query(arch[0], InputNorm::Linf)).unwrap();
            let units = net.total_neurons() + arch[0];
            assert!(built.model.num_constraints() <= 20 * units);
            let built = build_lipmip_model(&net, &unit_query(arch[0], InputNorm::L1)).unwrap();
            assert!(built.model.num_constraints() <= 20 * units);
        }
    }

    #[test]
    fn affine_model_has_no_free_binaries() {
        let net = ReLUNetwork::affine_scalar(&[1.0, -2.0], 10.0).unwrap();
        let built = build_lipmip_model(&net, &unit_query(2, InputNorm::Linf)).unwrap();
        assert!(built.model.free_binaries().is_empty());
    }

    #[test]
    fn abs_output_requires_scalar_network() {
        let net = random_he::<f64>(&[2, 3, 2], 1).unwrap();
        assert!(build_lipmip_model(&net, &unit_query(2, InputNorm::Linf)).is_err());
        let q = LipschitzQuery::vector(Hyperbox::unit(2), InputNorm::Linf, OutputNorm::Cross);
        let built = build_lipmip_model(&net, &q).unwrap();
        assert_eq!(built.z_vars.len(), 2);
    }

    #[test]
    fn forcing_keeps_numbering() {
        let net = ReLUNetwork::<f64>::identity(1000.0);
        let q = LipschitzQuery::scalar(Hyperbox::new(array![-1.0], array![1.0]).unwrap(), InputNorm::Linf);
        let root = build_lipmip_model(&net, &q).unwrap();
        let forced = build_forced(&net, &q, &[((0, 0), true)], true).unwrap().unwrap();
        assert_eq!(root.model.num_vars(), forced.model.num_vars());
        let a0 = root.indicators[0][0].var().unwrap();
        assert_eq!(forced.indicators[0][0], Indicator::Fixed(true, Some(a0)));
        assert!(build_forced(&net, &q, &[((0, 2), false)], true).unwrap().is_none());
    }
}
