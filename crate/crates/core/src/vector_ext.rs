//! Lipschitz constants of vector-valued networks under linear output norms,
//! and the untargeted robustness radius they certify.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView1;

use crate::bnb::{lipmip, MipResult, MipStatus, SolveOptions};
use crate::error::{dim_err, Error, Result};
use crate::interval::Hyperbox;
use crate::mip::LipschitzQuery;
use crate::network::ReLUNetwork;
use crate::norms::{InputNorm, OutputNorm};
use crate::scalar::Scalar;

pub use crate::norms::{cross_norm_generators, cross_norm_value};

/// Output norm named by the ball its dual variable ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinearNorm {
    /// `l1` output norm; the dual variable lives in the `l_inf` box.
    L1Dual,
    /// `l_inf` output norm; the dual variable lives in the `l1` ball.
    LinfDual,
    CrossNorm,
}

impl LinearNorm {
    pub fn output_norm(self) -> OutputNorm {
        match self {
            LinearNorm::L1Dual => OutputNorm::L1,
            LinearNorm::LinfDual => OutputNorm::Linf,
            LinearNorm::CrossNorm => OutputNorm::Cross,
        }
    }

    pub fn name(self) -> &'static str {
        self.output_norm().name()
    }
}

impl TryFrom<OutputNorm> for LinearNorm {
    type Error = Error;

    fn try_from(n: OutputNorm) -> Result<Self> {
        match n {
            OutputNorm::L1 => Ok(LinearNorm::L1Dual),
            OutputNorm::Linf => Ok(LinearNorm::LinfDual),
            OutputNorm::Cross => Ok(LinearNorm::CrossNorm),
            OutputNorm::Abs => Err(Error::Input("'abs' is not a vector output norm; use l1, linf or cross".into())),
        }
    }
}

impl FromStr for LinearNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" => Ok(LinearNorm::L1Dual),
            "linf" => Ok(LinearNorm::LinfDual),
            "cross" => Ok(LinearNorm::CrossNorm),
            other => Err(Error::Input(format!("unknown output norm `{other}`; valid: l1, linf, cross"))),
        }
    }
}

impl fmt::Display for LinearNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `L^{(alpha, beta)}(f, X)` for a network with at least two outputs.
pub fn lipmip_vector<T: Scalar>(
    net: &ReLUNetwork<T>,
    domain: &Hyperbox<T>,
    input: InputNorm,
    output: LinearNorm,
    opts: &SolveOptions,
) -> Result<MipResult<T>> {
    if net.output_dim() < 2 {
        return Err(Error::Input(format!(
            "vector Lipschitz constants need at least two outputs, network has {}",
            net.output_dim()
        )));
    }
    lipmip(net, &LipschitzQuery::vector(domain.clone(), input, output.output_norm()), opts)
}

/// The scalar network `f_i - f_j`.
pub fn pairwise_network<T: Scalar>(net: &ReLUNetwork<T>, i: usize, j: usize) -> Result<ReLUNetwork<T>> {
    let m = net.output_dim();
    if i >= m || j >= m || i == j {
        return Err(Error::Input(format!("need two distinct labels below {m}, got {i} and {j}")));
    }
    let h = net.head();
    let row = &h.row(i) - &h.row(j);
    net.with_head(row.insert_axis(ndarray::Axis(0)).to_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiusStatus {
    Certified,
    /// The network is constant on the domain; every point keeps the label.
    Unbounded,
    /// The top two logits tie at `x`; nothing can be certified.
    Tied,
}

#[derive(Debug, Clone)]
pub struct RobustnessCertificate<T> {
    pub label: usize,
    pub radius: T,
    /// Smallest `|f_i(x) - f_j(x)|` over `j != label`.
    pub margin: T,
    /// Certified upper bound on `L^{(alpha, cross)}(f, X)` used as divisor.
    pub lipschitz: T,
    pub status: RadiusStatus,
    pub solve_status: Option<MipStatus>,
}

fn argmax_unique<T: Scalar>(v: ArrayView1<'_, T>) -> (usize, bool) {
    let mut best = 0;
    for k in 1..v.len() {
        if v[k] > v[best] {
            best = k;
        }
    }
    let tied = (0..v.len()).any(|k| k != best && v[k] == v[best]);
    (best, !tied)
}

/// Every `y` in `X` with `||x - y||_alpha < radius` has the same predicted
/// label as `x`. A zero Lipschitz constant gives `+inf`; a tied argmax
/// gives radius 0.
pub fn robustness_radius<T: Scalar>(
    net: &ReLUNetwork<T>,
    x: ArrayView1<'_, T>,
    domain: &Hyperbox<T>,
    input: InputNorm,
    opts: &SolveOptions,
) -> Result<RobustnessCertificate<T>> {
    if x.len() != net.input_dim() {
        return dim_err(format!("point has dimension {}, network expects {}", x.len(), net.input_dim()));
    }
    if !domain.contains(x, T::zero()) {
        return Err(Error::Input("the point lies outside the domain".into()));
    }
    let out = net.forward(x)?;
    let (label, unique) = argmax_unique(out.view());
    let margin = (0..out.len())
        .filter(|&j| j != label)
        .map(|j| (out[label] - out[j]).abs())
        .fold(T::infinity(), T::min);
    if !unique {
        return Ok(RobustnessCertificate {
            label,
            radius: T::zero(),
            margin: T::zero(),
            lipschitz: T::nan(),
            status: RadiusStatus::Tied,
            solve_status: None,
        });
    }
    let r = lipmip_vector(net, domain, input, LinearNorm::CrossNorm, opts)?;
    if matches!(r.status, MipStatus::Infeasible | MipStatus::NumericalFailure) {
        return Err(Error::Model(format!("cross-norm Lipschitz solve ended with status {}", r.status.name())));
    }
    let l = r.upper_bound;
    let (radius, status) = if l <= T::zero() {
        (T::infinity(), RadiusStatus::Unbounded)
    } else {
        (margin / l, RadiusStatus::Certified)
    };
    Ok(RobustnessCertificate { label, radius, margin, lipschitz: l, status, solve_status: Some(r.status) })
}
