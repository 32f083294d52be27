//! Hyperbox and boolean-hyperbox bound propagation.
//!
//! The forward pass bounds every pre-activation `Z_i` and abstracts each
//! activation indicator as a tri-state [`Tri`]. The backward pass pushes a box
//! over `Y_{d+1}` (the head row, or `H^T z` for a dual vector `z`) through the
//! switch and transposed affine operators, ending with a box over the
//! gradient. Maximizing a dual norm over that box is FastLip.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{dim_err, Error, Result};
use crate::network::ReLUNetwork;
use crate::norms::{InputNorm, OutputNorm};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperbox<T> {
    pub lo: Array1<T>,
    pub hi: Array1<T>,
}

impl<T: Scalar> Hyperbox<T> {
    pub fn new(lo: Array1<T>, hi: Array1<T>) -> Result<Self> {
        if lo.len() != hi.len() {
            return dim_err(format!("box bounds have lengths {} and {}", lo.len(), hi.len()));
        }
        for (i, (l, u)) in lo.iter().zip(hi.iter()).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::Model(format!("box coordinate {i} is unbounded")));
            }
            if l > u {
                return Err(Error::Input(format!("box coordinate {i}: lower {l} exceeds upper {u}")));
            }
        }
        Ok(Self { lo, hi })
    }

    /// `center ± radius` in every coordinate.
    pub fn cube(center: ArrayView1<'_, T>, radius: T) -> Result<Self> {
        if !(radius >= T::zero()) {
            return Err(Error::Input(format!("cube radius {radius} must be non-negative")));
        }
        Self::new(center.mapv(|c| c - radius), center.mapv(|c| c + radius))
    }

    pub fn unit(dim: usize) -> Self {
        Self { lo: Array1::zeros(dim), hi: Array1::ones(dim) }
    }

    pub fn point(x: ArrayView1<'_, T>) -> Self {
        Self { lo: x.to_owned(), hi: x.to_owned() }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Array1<T> {
        let half = T::lit(0.5);
        (&self.lo + &self.hi).mapv(|v| v * half)
    }

    pub fn radius(&self) -> Array1<T> {
        let half = T::lit(0.5);
        (&self.hi - &self.lo).mapv(|v| v * half)
    }

    pub fn contains(&self, x: ArrayView1<'_, T>, tol: T) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(v, (l, u))| *v >= *l - tol && *v <= *u + tol)
    }

    pub fn contains_box(&self, other: &Hyperbox<T>, tol: T) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|i| other.lo[i] >= self.lo[i] - tol && other.hi[i] <= self.hi[i] + tol)
    }

    /// Largest absolute value in each coordinate.
    pub fn magnitude(&self) -> Array1<T> {
        Array1::from_shape_fn(self.dim(), |i| self.lo[i].abs().max(self.hi[i].abs()))
    }
}

/// One entry of a boolean hyperbox: the indicator is 1, 0, or unknown (`?`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tri {
    One,
    Zero,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolBox {
    pub v: Vec<Tri>,
}

impl BoolBox {
    pub fn unknown_count(&self) -> usize {
        self.v.iter().filter(|t| **t == Tri::Unknown).count()
    }
}

/// `c' = W c + b`, `r' = |W| r`.
pub fn push_affine<T: Scalar>(h: &Hyperbox<T>, w: ArrayView2<'_, T>, b: Option<ArrayView1<'_, T>>) -> Result<Hyperbox<T>> {
    if w.ncols() != h.dim() {
        return dim_err(format!("matrix has {} columns, box has dimension {}", w.ncols(), h.dim()));
    }
    let mut c = w.dot(&h.center());
    if let Some(b) = b {
        if b.len() != w.nrows() {
            return dim_err(format!("bias has {} entries, matrix has {} rows", b.len(), w.nrows()));
        }
        c += &b;
    }
    let r = w.mapv(|v| v.abs()).dot(&h.radius());
    Ok(Hyperbox { lo: &c - &r, hi: &c + &r })
}

/// Strict sign tests; a box touching zero maps to `?`.
pub fn push_conditional<T: Scalar>(h: &Hyperbox<T>) -> BoolBox {
    BoolBox {
        v: h.lo
            .iter()
            .zip(h.hi.iter())
            .map(|(l, u)| {
                if *l > T::zero() {
                    Tri::One
                } else if *u < T::zero() {
                    Tri::Zero
                } else {
                    Tri::Unknown
                }
            })
            .collect(),
    }
}

/// Box of `x * a` for `x` in `h` and `a` in `bb`.
pub fn push_switch<T: Scalar>(h: &Hyperbox<T>, bb: &BoolBox) -> Result<Hyperbox<T>> {
    if bb.v.len() != h.dim() {
        return dim_err(format!("boolean box has {} entries, box has {}", bb.v.len(), h.dim()));
    }
    let z = T::zero();
    let mut lo = h.lo.clone();
    let mut hi = h.hi.clone();
    for (i, t) in bb.v.iter().enumerate() {
        match t {
            Tri::One => {}
            Tri::Zero => {
                lo[i] = z;
                hi[i] = z;
            }
            Tri::Unknown => {
                lo[i] = lo[i].min(z);
                hi[i] = hi[i].max(z);
            }
        }
    }
    Ok(Hyperbox { lo, hi })
}

/// Box of `relu(x)` for `x` in `h`, i.e. the switch box intersected with the
/// sign information the conditional carries.
pub fn push_relu<T: Scalar>(h: &Hyperbox<T>) -> Hyperbox<T> {
    let z = T::zero();
    Hyperbox { lo: h.lo.mapv(|v| v.max(z)), hi: h.hi.mapv(|v| v.max(z)) }
}

/// Starting point of the backward pass.
#[derive(Debug, Clone)]
pub enum BackwardSeed<T> {
    /// Scalar network: `Y_{d+1}` is exactly the head row.
    Head,
    /// Vector network with `z` ranging over the dual ball of an output norm.
    DualBall(OutputNorm),
    /// Arbitrary box over `Y_{d+1}`.
    Box(Hyperbox<T>),
}

/// Box over `{H^T z : z in the dual ball of `norm`}`.
pub fn dual_ball_seed<T: Scalar>(head: ArrayView2<'_, T>, norm: OutputNorm) -> Hyperbox<T> {
    let n = head.ncols();
    let m = head.nrows();
    let mut lo = Array1::zeros(n);
    let mut hi = Array1::zeros(n);
    for k in 0..n {
        let col = head.column(k);
        match norm {
            OutputNorm::Abs | OutputNorm::L1 => {
                let s = col.iter().fold(T::zero(), |a, v| a + v.abs());
                lo[k] = -s;
                hi[k] = s;
            }
            OutputNorm::Linf => {
                let s = col.iter().fold(T::zero(), |a, v| a.max(v.abs()));
                lo[k] = -s;
                hi[k] = s;
            }
            OutputNorm::Cross => {
                // extreme points of the cross-norm dual polytope, plus 0
                let (mut l, mut u) = (T::zero(), T::zero());
                for g in crate::norms::cross_norm_generators::<T>(m) {
                    let v = g.iter().zip(col.iter()).fold(T::zero(), |a, (x, y)| a + *x * *y);
                    l = l.min(v);
                    u = u.max(v);
                }
                lo[k] = l;
                hi[k] = u;
            }
        }
    }
    Hyperbox { lo, hi }
}

/// Neuron `(layer, index)` forced on (`true`) or off.
pub type Forcing = ((usize, usize), bool);

#[derive(Debug, Clone)]
pub struct PropagationResult<T> {
    /// Bounds on `Z_i`, one per hidden layer.
    pub pre_activation_boxes: Vec<Hyperbox<T>>,
    /// Abstraction of the activation indicators, one per hidden layer.
    pub activation_boolboxes: Vec<BoolBox>,
    /// Bounds on `relu(Z_i)`.
    pub post_activation_boxes: Vec<Hyperbox<T>>,
    /// `gradient_boxes[i]` (dimension `n_i`) bounds the backward vector
    /// entering the switch of hidden layer `i` (1-based, `i = d` is the seed);
    /// `gradient_boxes[0]` bounds the gradient itself.
    pub gradient_boxes: Vec<Hyperbox<T>>,
    /// `switched_boxes[i - 1]` bounds `Lambda_i * gradient_boxes[i]`.
    pub switched_boxes: Vec<Hyperbox<T>>,
}

impl<T: Scalar> PropagationResult<T> {
    pub fn gradient_box(&self) -> &Hyperbox<T> {
        &self.gradient_boxes[0]
    }
}

pub fn propagate<T: Scalar>(net: &ReLUNetwork<T>, x: &Hyperbox<T>, seed: &BackwardSeed<T>) -> Result<PropagationResult<T>> {
    propagate_forced(net, x, seed, &[])?
        .ok_or_else(|| Error::Model("propagation without forcing cannot be infeasible".into()))
}

/// Propagation with some neurons forced on or off. A neuron forced on has
/// its pre-activation box clipped to `[max(l, 0), u]`, one forced off to
/// `[l, min(u, 0)]`. Returns `None` when a forcing empties a box.
pub fn propagate_forced<T: Scalar>(
    net: &ReLUNetwork<T>,
    x: &Hyperbox<T>,
    seed: &BackwardSeed<T>,
    forced: &[Forcing],
) -> Result<Option<PropagationResult<T>>> {
    if x.dim() != net.input_dim() {
        return dim_err(format!(
            "domain has dimension {}, network expects {}",
            x.dim(),
            net.input_dim()
        ));
    }
    let z = T::zero();
    let depth = net.depth();
    let mut pre = Vec::with_capacity(depth);
    let mut bools = Vec::with_capacity(depth);
    let mut post = Vec::with_capacity(depth);
    let mut h = x.clone();
    for (li, layer) in net.layers().iter().enumerate() {
        let mut zb = push_affine(&h, layer.weight.view(), Some(layer.bias.view()))?;
        let mut bb = push_conditional(&zb);
        for &((fl, fj), on) in forced {
            if fl != li {
                continue;
            }
            if fj >= zb.dim() {
                return dim_err(format!("forced neuron ({fl}, {fj}) out of range"));
            }
            if on {
                zb.lo[fj] = zb.lo[fj].max(z);
                bb.v[fj] = Tri::One;
            } else {
                zb.hi[fj] = zb.hi[fj].min(z);
                bb.v[fj] = Tri::Zero;
            }
            if zb.lo[fj] > zb.hi[fj] {
                return Ok(None);
            }
        }
        let a = push_relu(&zb);
        let a = push_switch(&a, &bb)?;
        h = a.clone();
        pre.push(zb);
        bools.push(bb);
        post.push(a);
    }

    let head = net.head();
    let y_top = match seed {
        BackwardSeed::Head => {
            if head.nrows() != 1 {
                return Err(Error::Input(format!(
                    "the exact head seed needs a scalar network, head has {} rows",
                    head.nrows()
                )));
            }
            Hyperbox::point(head.row(0))
        }
        BackwardSeed::DualBall(norm) => dual_ball_seed(head.view(), *norm),
        BackwardSeed::Box(b) => {
            if b.dim() != head.ncols() {
                return dim_err(format!("seed box has dimension {}, expected {}", b.dim(), head.ncols()));
            }
            b.clone()
        }
    };
    let mut grads = vec![y_top];
    let mut switched = Vec::with_capacity(depth);
    for li in (0..depth).rev() {
        let s = push_switch(grads.last().expect("nonempty"), &bools[li])?;
        let g = push_affine(&s, net.layers()[li].weight.t(), None)?;
        switched.push(s);
        grads.push(g);
    }
    grads.reverse();
    switched.reverse();
    Ok(Some(PropagationResult {
        pre_activation_boxes: pre,
        activation_boolboxes: bools,
        post_activation_boxes: post,
        gradient_boxes: grads,
        switched_boxes: switched,
    }))
}

/// Maximum of the dual input norm over a gradient box.
pub fn max_dual_norm_over_box<T: Scalar>(b: &Hyperbox<T>, norm: InputNorm) -> T {
    norm.dual_norm(b.magnitude().view())
}

/// FastLip upper bound on `L^alpha(f, X)` for a scalar network.
pub fn fastlip<T: Scalar>(net: &ReLUNetwork<T>, x: &Hyperbox<T>, norm: InputNorm) -> Result<T> {
    let seed = if net.output_dim() == 1 { BackwardSeed::Head } else { BackwardSeed::DualBall(OutputNorm::Linf) };
    let res = propagate(net, x, &seed)?;
    Ok(max_dual_norm_over_box(res.gradient_box(), norm))
}

/// FastLip for an arbitrary output norm, seeding the backward pass with the
/// dual ball of `output`.
pub fn fastlip_vector<T: Scalar>(net: &ReLUNetwork<T>, x: &Hyperbox<T>, input: InputNorm, output: OutputNorm) -> Result<T> {
    let seed = if net.output_dim() == 1 && output != OutputNorm::Cross {
        BackwardSeed::Head
    } else {
        BackwardSeed::DualBall(output)
    };
    let res = propagate(net, x, &seed)?;
    Ok(max_dual_norm_over_box(res.gradient_box(), input))
}

/// Elementwise `|W|`.
pub fn abs_matrix<T: Scalar>(w: &Array2<T>) -> Array2<T> {
    w.mapv(|v| v.abs())
}
