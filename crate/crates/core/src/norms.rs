//! Input/output norm selection and the closed-form norm evaluations shared by
//! the estimators, the brute-force oracle and the branch-and-bound heuristic.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Norm on the input space.
///
/// `Linf` gives the usual `L^inf(f, X)`, which for scalar networks is the
/// maximal l1 norm of the gradient; `L1` gives the maximal l-inf norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputNorm {
    L1,
    Linf,
}

impl InputNorm {
    /// Norm of a gradient row under the dual of this norm.
    pub fn dual_norm<T: Scalar>(self, v: ArrayView1<'_, T>) -> T {
        match self {
            InputNorm::Linf => v.iter().fold(T::zero(), |acc, x| acc + x.abs()),
            InputNorm::L1 => v.iter().fold(T::zero(), |acc, x| acc.max(x.abs())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputNorm::L1 => "l1",
            InputNorm::Linf => "linf",
        }
    }
}

impl fmt::Display for InputNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(InputNorm::L1),
            "linf" | "inf" => Ok(InputNorm::Linf),
            other => Err(Error::Input(format!(
                "unknown input norm '{other}' (expected l1 or linf)"
            ))),
        }
    }
}

/// Norm on the output space. `Abs` is only meaningful for scalar networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutputNorm {
    Abs,
    L1,
    Linf,
    Cross,
}

impl OutputNorm {
    pub fn name(self) -> &'static str {
        match self {
            OutputNorm::Abs => "abs",
            OutputNorm::L1 => "l1",
            OutputNorm::Linf => "linf",
            OutputNorm::Cross => "cross",
        }
    }

    /// Evaluates the norm itself on a vector of the output space.
    pub fn eval<T: Scalar>(self, v: ArrayView1<'_, T>) -> T {
        match self {
            OutputNorm::Abs | OutputNorm::Linf => {
                v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
            }
            OutputNorm::L1 => v.iter().fold(T::zero(), |acc, x| acc + x.abs()),
            OutputNorm::Cross => cross_norm_value(v),
        }
    }

    /// Vertices of the unit ball of the dual norm, up to sign.
    ///
    /// Every induced matrix norm `||J||_{a,b}` equals the maximum over these
    /// vertices `z` of `||J^T z||_{a*}`, since the objective is convex in `z`.
    pub fn dual_ball_vertices<T: Scalar>(self, m: usize) -> Vec<Vec<T>> {
        let unit = |i: usize| {
            let mut v = vec![T::zero(); m];
            v[i] = T::one();
            v
        };
        match self {
            OutputNorm::Abs | OutputNorm::Linf => (0..m).map(unit).collect(),
            OutputNorm::L1 => {
                assert!(m <= 20, "sign-vector enumeration limited to 20 outputs");
                // sign vectors with the first entry fixed to +1 (the norm is symmetric)
                let count = if m == 0 { 0 } else { 1usize << (m - 1) };
                (0..count)
                    .map(|mask| {
                        (0..m)
                            .map(|i| {
                                if i > 0 && (mask >> (i - 1)) & 1 == 1 {
                                    -T::one()
                                } else {
                                    T::one()
                                }
                            })
                            .collect()
                    })
                    .collect()
            }
            OutputNorm::Cross => cross_norm_generators(m),
        }
    }
}

impl fmt::Display for OutputNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OutputNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "abs" => Ok(OutputNorm::Abs),
            "l1" => Ok(OutputNorm::L1),
            "linf" | "inf" => Ok(OutputNorm::Linf),
            "cross" => Ok(OutputNorm::Cross),
            other => Err(Error::Input(format!(
                "unknown output norm '{other}' (expected abs, l1, linf or cross)"
            ))),
        }
    }
}

/// Generators `{e_i} ∪ {e_i - e_j : i != j}` of the cross-norm dual polytope.
pub fn cross_norm_generators<T: Scalar>(m: usize) -> Vec<Vec<T>> {
    let mut out = Vec::with_capacity(m * m);
    for i in 0..m {
        let mut e = vec![T::zero(); m];
        e[i] = T::one();
        out.push(e);
    }
    for i in 0..m {
        for j in 0..m {
            if i != j {
                let mut e = vec![T::zero(); m];
                e[i] = T::one();
                e[j] = -T::one();
                out.push(e);
            }
        }
    }
    out
}

/// `||v||_x = max(max_i |v_i|, max_{i != j} |v_i - v_j|)`.
pub fn cross_norm_value<T: Scalar>(v: ArrayView1<'_, T>) -> T {
    let mut best = T::zero();
    let mut hi = T::neg_infinity();
    let mut lo = T::infinity();
    for &x in v.iter() {
        best = best.max(x.abs());
        hi = hi.max(x);
        lo = lo.min(x);
    }
    if v.len() >= 2 {
        best = best.max(hi - lo);
    }
    best
}

/// Induced norm `||J||_{a,b} = sup_{||y||_a <= 1} ||J y||_b` of an `m x n`
/// Jacobian, by enumeration of the dual-ball vertices of `b`.
pub fn induced_norm<T: Scalar>(jac: ArrayView2<'_, T>, input: InputNorm, output: OutputNorm) -> T {
    let m = jac.nrows();
    if m == 1 && matches!(output, OutputNorm::Abs | OutputNorm::L1 | OutputNorm::Linf) {
        return input.dual_norm(jac.row(0));
    }
    let mut best = T::zero();
    for z in output.dual_ball_vertices::<T>(m) {
        // row vector z^T J
        let mut acc = ndarray::Array1::<T>::zeros(jac.ncols());
        for (i, zi) in z.iter().enumerate() {
            if *zi != T::zero() {
                acc.scaled_add(*zi, &jac.row(i));
            }
        }
        best = best.max(input.dual_norm(acc.view()));
    }
    best
}

/// Convenience wrapper for owned Jacobians.
pub fn jacobian_norm<T: Scalar>(jac: &Array2<T>, input: InputNorm, output: OutputNorm) -> T {
    induced_norm(jac.view(), input, output)
}
