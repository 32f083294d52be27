//! Linear encodings of the affine, conditional, switch, absolute value and
//! max operators. Big-M constants come from the bounds of the input variables,
//! so every variable handed to an encoder must carry finite bounds.

use ndarray::{ArrayView1, ArrayView2};

use super::model::{LinExpr, MipModel, VarId};
use crate::error::{dim_err, Error, Result};
use crate::interval::Tri;
use crate::lp::Relation;
use crate::scalar::Scalar;

/// Value of an activation indicator: known in advance, or a binary variable.
///
/// When the context keeps fixed binaries, a known indicator still owns a
/// binary variable whose bounds pin it, so variable numbering does not depend
/// on which indicators interval analysis managed to fix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Indicator {
    Fixed(bool, Option<VarId>),
    Var(VarId),
}

impl Indicator {
    pub fn var(self) -> Option<VarId> {
        match self {
            Indicator::Fixed(_, v) => v,
            Indicator::Var(v) => Some(v),
        }
    }

    pub fn fixed(self) -> Option<bool> {
        match self {
            Indicator::Fixed(b, _) => Some(b),
            Indicator::Var(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncodingContext<T> {
    pub model: MipModel<T>,
    pub keep_fixed_binaries: bool,
}

impl<T: Scalar> Default for EncodingContext<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> EncodingContext<T> {
    pub fn new() -> Self {
        Self { model: MipModel::new(), keep_fixed_binaries: false }
    }

    pub fn bounds(&self, v: VarId) -> (T, T) {
        let var = self.model.var(v);
        (var.lo, var.hi)
    }

    fn fixed_indicator(&mut self, value: bool, name: &str) -> Indicator {
        let var = self.keep_fixed_binaries.then(|| self.model.add_fixed_binary(name, value));
        Indicator::Fixed(value, var)
    }

    fn constrain(&mut self, terms: &[(VarId, T)], rel: Relation, rhs: T) -> Result<()> {
        self.model.add_constraint(LinExpr::from_terms(terms.iter().copied()), rel, rhs)
    }
}

/// Fresh variables `out = W in + b`. Output bounds are taken from `out_bounds`
/// when given, otherwise from interval arithmetic on the input bounds.
pub fn encode_affine<T: Scalar>(
    ctx: &mut EncodingContext<T>,
    inputs: &[VarId],
    w: ArrayView2<'_, T>,
    b: Option<ArrayView1<'_, T>>,
    out_bounds: Option<(&[T], &[T])>,
    name: &str,
) -> Result<Vec<VarId>> {
    if w.ncols() != inputs.len() {
        return dim_err(format!("matrix has {} columns for {} inputs", w.ncols(), inputs.len()));
    }
    if let Some(b) = b {
        if b.len() != w.nrows() {
            return dim_err(format!("bias has {} entries for {} rows", b.len(), w.nrows()));
        }
    }
    if let Some((lo, hi)) = out_bounds {
        if lo.len() != w.nrows() || hi.len() != w.nrows() {
            return dim_err("output bounds do not match the matrix");
        }
    }
    let mut outs = Vec::with_capacity(w.nrows());
    for r in 0..w.nrows() {
        let bias = b.map_or(T::zero(), |b| b[r]);
        let (lo, hi) = match out_bounds {
            Some((lo, hi)) => (lo[r], hi[r]),
            None => {
                let (mut lo, mut hi) = (bias, bias);
                for (k, &v) in inputs.iter().enumerate() {
                    let (l, u) = ctx.bounds(v);
                    let a = w[[r, k]];
                    if a >= T::zero() {
                        lo += a * l;
                        hi += a * u;
                    } else {
                        lo += a * u;
                        hi += a * l;
                    }
                }
                (lo, hi)
            }
        };
        let y = ctx.model.add_continuous(format!("{name}[{r}]"), lo, hi)?;
        let mut e = LinExpr::var(y);
        for (k, &v) in inputs.iter().enumerate() {
            if w[[r, k]] != T::zero() {
                e.add_term(v, -w[[r, k]]);
            }
        }
        ctx.model.add_constraint(e, Relation::Eq, bias)?;
        outs.push(y);
    }
    Ok(outs)
}

/// Indicator `a` in `C(x)`: 1 if `x > 0`, 0 if `x < 0`, either at `x = 0`.
pub fn encode_conditional<T: Scalar>(ctx: &mut EncodingContext<T>, x: VarId, name: &str) -> Result<Indicator> {
    let (l, u) = ctx.bounds(x);
    let tri = if l > T::zero() {
        Tri::One
    } else if u < T::zero() {
        Tri::Zero
    } else {
        Tri::Unknown
    };
    encode_conditional_tri(ctx, x, tri, name)
}

/// Conditional with the sign abstraction supplied by the caller (for
/// instance a neuron forced on or off).
pub fn encode_conditional_tri<T: Scalar>(ctx: &mut EncodingContext<T>, x: VarId, tri: Tri, name: &str) -> Result<Indicator> {
    let (l, u) = ctx.bounds(x);
    if l > u {
        return Err(Error::Model(format!("conditional {name}: empty range [{l}, {u}]")));
    }
    match tri {
        Tri::One => Ok(ctx.fixed_indicator(true, name)),
        Tri::Zero => Ok(ctx.fixed_indicator(false, name)),
        Tri::Unknown => {
            let a = ctx.model.add_binary(name);
            // x >= l (1 - a),  x <= u a
            ctx.constrain(&[(x, T::one()), (a, l)], Relation::Ge, l)?;
            ctx.constrain(&[(x, T::one()), (a, -u)], Relation::Le, T::zero())?;
            Ok(Indicator::Var(a))
        }
    }
}

/// `y = x * a`. The output range defaults to `[min(l, 0), max(u, 0)]` and is
/// intersected with `out_bounds` when given.
pub fn encode_switch<T: Scalar>(
    ctx: &mut EncodingContext<T>,
    x: VarId,
    a: Indicator,
    out_bounds: Option<(T, T)>,
    name: &str,
) -> Result<VarId> {
    let (l, u) = ctx.bounds(x);
    let z = T::zero();
    let (lh, uh) = (l.min(z), u.max(z));
    let (mut ylo, mut yhi) = match a {
        Indicator::Fixed(true, _) => (l, u),
        Indicator::Fixed(false, _) => (z, z),
        Indicator::Var(_) => (lh, uh),
    };
    if let Some((lo, hi)) = out_bounds {
        ylo = ylo.max(lo);
        yhi = yhi.min(hi).max(ylo);
    }
    let y = ctx.model.add_continuous(name, ylo, yhi)?;
    match a {
        Indicator::Fixed(true, _) => ctx.constrain(&[(y, T::one()), (x, -T::one())], Relation::Eq, z)?,
        Indicator::Fixed(false, _) => ctx.constrain(&[(y, T::one())], Relation::Eq, z)?,
        Indicator::Var(av) => {
            // y >= x - u (1 - a);  y <= x - l (1 - a);  y >= lh a;  y <= uh a
            ctx.constrain(&[(y, T::one()), (x, -T::one()), (av, -u)], Relation::Ge, -u)?;
            ctx.constrain(&[(y, T::one()), (x, -T::one()), (av, -l)], Relation::Le, -l)?;
            ctx.constrain(&[(y, T::one()), (av, -lh)], Relation::Ge, z)?;
            ctx.constrain(&[(y, T::one()), (av, -uh)], Relation::Le, z)?;
        }
    }
    Ok(y)
}

/// `relu(x)` as a conditional followed by a switch, with output range
/// `[max(l, 0), max(u, 0)]`.
pub fn encode_relu<T: Scalar>(ctx: &mut EncodingContext<T>, x: VarId, tri: Option<Tri>, name: &str) -> Result<(Indicator, VarId)> {
    let a = match tri {
        Some(t) => encode_conditional_tri(ctx, x, t, &format!("a_{name}"))?,
        None => encode_conditional(ctx, x, &format!("a_{name}"))?,
    };
    let (l, u) = ctx.bounds(x);
    let y = encode_switch(ctx, x, a, Some((l.max(T::zero()), u.max(T::zero()))), name)?;
    Ok((a, y))
}

/// `y = |x|` with one binary (`a = 1` selects the negative branch) and four
/// inequalities:
///
/// ```text
/// y >= x,   y >= -x,   y <= x - 2 l a,   y <= -x + 2 u (1 - a)
/// ```
///
/// If the sign of `x` is known the result is the single equality `y = x` or
/// `y = -x`.
pub fn encode_abs<T: Scalar>(ctx: &mut EncodingContext<T>, x: VarId, name: &str) -> Result<VarId> {
    let (l, u) = ctx.bounds(x);
    let z = T::zero();
    let two = T::lit(2.0);
    if l >= z {
        ctx.fixed_indicator(false, &format!("s_{name}"));
        let y = ctx.model.add_continuous(name, l, u)?;
        ctx.constrain(&[(y, T::one()), (x, -T::one())], Relation::Eq, z)?;
        return Ok(y);
    }
    if u <= z {
        ctx.fixed_indicator(true, &format!("s_{name}"));
        let y = ctx.model.add_continuous(name, -u, -l)?;
        ctx.constrain(&[(y, T::one()), (x, T::one())], Relation::Eq, z)?;
        return Ok(y);
    }
    let a = ctx.model.add_binary(format!("s_{name}"));
    let y = ctx.model.add_continuous(name, z, (-l).max(u))?;
    ctx.constrain(&[(y, T::one()), (x, -T::one())], Relation::Ge, z)?;
    ctx.constrain(&[(y, T::one()), (x, T::one())], Relation::Ge, z)?;
    ctx.constrain(&[(y, T::one()), (x, -T::one()), (a, two * l)], Relation::Le, z)?;
    ctx.constrain(&[(y, T::one()), (x, T::one()), (a, two * u)], Relation::Le, two * u)?;
    Ok(y)
}

/// `t = max(x_1, ..., x_k)` folded left to right as `t' = t + relu(x - t)`,
/// one binary per fold. With `a = 1` meaning the new operand wins:
///
/// ```text
/// t' >= t,   t' >= x,   t' <= t + (u_x - l_t) a,   t' <= x + (u_t - l_x)(1 - a)
/// ```
pub fn encode_max<T: Scalar>(ctx: &mut EncodingContext<T>, xs: &[VarId], name: &str) -> Result<VarId> {
    let Some((&first, rest)) = xs.split_first() else {
        return Err(Error::Model("max of an empty list".into()));
    };
    let mut t = first;
    for (k, &x) in rest.iter().enumerate() {
        let (lt, ut) = ctx.bounds(t);
        let (lx, ux) = ctx.bounds(x);
        let fold = format!("{name}_{}", k + 1);
        let out = ctx.model.add_continuous(fold.clone(), lt.max(lx), ut.max(ux))?;
        if lx >= ut {
            ctx.fixed_indicator(true, &format!("m_{fold}"));
            ctx.constrain(&[(out, T::one()), (x, -T::one())], Relation::Eq, T::zero())?;
        } else if ux <= lt {
            ctx.fixed_indicator(false, &format!("m_{fold}"));
            ctx.constrain(&[(out, T::one()), (t, -T::one())], Relation::Eq, T::zero())?;
        } else {
            let a = ctx.model.add_binary(format!("m_{fold}"));
            ctx.constrain(&[(out, T::one()), (t, -T::one())], Relation::Ge, T::zero())?;
            ctx.constrain(&[(out, T::one()), (x, -T::one())], Relation::Ge, T::zero())?;
            ctx.constrain(&[(out, T::one()), (t, -T::one()), (a, -(ux - lt))], Relation::Le, T::zero())?;
            ctx.constrain(&[(out, T::one()), (x, -T::one()), (a, ut - lx)], Relation::Le, ut - lx)?;
        }
        t = out;
    }
    Ok(t)
}

/// `z = z+ - z-` with `z+, z- >= 0`, `sum z+ <= 1`, `sum z- <= 1` and
/// `sum z+ >= sum z-`: the convex hull of `{e_i} ∪ {e_i - e_j}`.
pub fn encode_cross_norm_ball<T: Scalar>(ctx: &mut EncodingContext<T>, m: usize) -> Result<Vec<VarId>> {
    let (zs, plus, minus) = split_vars(ctx, m)?;
    let o = T::one();
    ctx.model.add_constraint(LinExpr::from_terms(plus.iter().map(|&v| (v, o))), Relation::Le, o)?;
    ctx.model.add_constraint(LinExpr::from_terms(minus.iter().map(|&v| (v, o))), Relation::Le, o)?;
    let balance = LinExpr::from_terms(plus.iter().map(|&v| (v, o)).chain(minus.iter().map(|&v| (v, -o))));
    ctx.model.add_constraint(balance, Relation::Ge, T::zero())?;
    Ok(zs)
}

/// The l1 unit ball `sum |z_i| <= 1` via the same positive/negative split.
pub fn encode_l1_ball<T: Scalar>(ctx: &mut EncodingContext<T>, m: usize) -> Result<Vec<VarId>> {
    let (zs, plus, minus) = split_vars(ctx, m)?;
    let o = T::one();
    let total = LinExpr::from_terms(plus.iter().chain(minus.iter()).map(|&v| (v, o)));
    ctx.model.add_constraint(total, Relation::Le, o)?;
    Ok(zs)
}

/// The l-inf unit ball: `z` in `[-1, 1]^m`.
pub fn encode_linf_ball<T: Scalar>(ctx: &mut EncodingContext<T>, m: usize) -> Result<Vec<VarId>> {
    (0..m).map(|i| ctx.model.add_continuous(format!("z[{i}]"), -T::one(), T::one())).collect()
}

type SplitVars = (Vec<VarId>, Vec<VarId>, Vec<VarId>);

fn split_vars<T: Scalar>(ctx: &mut EncodingContext<T>, m: usize) -> Result<SplitVars> {
    let o = T::one();
    let mut zs = Vec::with_capacity(m);
    let mut plus = Vec::with_capacity(m);
    let mut minus = Vec::with_capacity(m);
    for i in 0..m {
        let z = ctx.model.add_continuous(format!("z[{i}]"), -o, o)?;
        let p = ctx.model.add_continuous(format!("zp[{i}]"), T::zero(), o)?;
        let n = ctx.model.add_continuous(format!("zn[{i}]"), T::zero(), o)?;
        ctx.model
            .add_constraint(LinExpr::var(z).plus(p, -o).plus(n, o), Relation::Eq, T::zero())?;
        zs.push(z);
        plus.push(p);
        minus.push(n);
    }
    Ok((zs, plus, minus))
}
