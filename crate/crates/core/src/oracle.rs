//! Brute-force ground truth by enumerating linear regions.
//!
//! Neurons are visited depth-first in layer order. Fixing the signs of all
//! neurons in earlier layers makes every pre-activation of the current layer
//! affine in `x`, so each partial pattern is a polyhedron
//! `{x in X : s_k (a_k^T x + c_k) >= eps}` whose non-emptiness is one LP.
//! Infeasible prefixes are pruned; every surviving leaf is a full-dimensional
//! region with an `eps`-deep witness point and a constant Jacobian.

use ndarray::{Array1, Array2};

use crate::error::{dim_err, Error, Result};
use crate::interval::{propagate, BackwardSeed, Hyperbox, PropagationResult};
use crate::lp::{solve_lp, LpProblem, LpRow, LpStatus, LpTolerances, Relation};
use crate::network::ReLUNetwork;
use crate::norms::{induced_norm, InputNorm, OutputNorm};
use crate::scalar::Scalar;

pub const DEFAULT_NEURON_CAP: usize = 24;
pub const DEFAULT_INTERIOR_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Minimum signed pre-activation at a region witness.
    pub interior_eps: f64,
    pub neuron_cap: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { interior_eps: DEFAULT_INTERIOR_EPS, neuron_cap: DEFAULT_NEURON_CAP }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionCertificate<T> {
    /// `true` for ON, per hidden layer.
    pub pattern: Vec<Vec<bool>>,
    pub witness: Array1<T>,
    /// Constant `m x n_0` Jacobian of the network on the region.
    pub jacobian: Array2<T>,
}

impl<T: Scalar> RegionCertificate<T> {
    pub fn value(&self, input: InputNorm, output: OutputNorm) -> T {
        induced_norm(self.jacobian.view(), input, output)
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult<T> {
    pub value: T,
    pub regions: usize,
    pub best: Option<RegionCertificate<T>>,
}

struct Search<'a, T: Scalar> {
    net: &'a ReLUNetwork<T>,
    domain: &'a Hyperbox<T>,
    bounds: PropagationResult<T>,
    eps: T,
    tols: LpTolerances,
    rows: Vec<LpRow<T>>,
    pattern: Vec<Vec<bool>>,
}

impl<T: Scalar> Search<'_, T> {
    fn feasible_point(&self) -> Result<Option<Array1<T>>> {
        let n = self.domain.dim();
        let p = LpProblem {
            objective: vec![T::zero(); n],
            lo: self.domain.lo.to_vec(),
            hi: self.domain.hi.to_vec(),
            rows: self.rows.clone(),
        };
        let mut tols = self.tols;
        for _ in 0..2 {
            let sol = solve_lp(&p, &tols)?;
            match sol.status {
                LpStatus::Optimal => return Ok(Some(Array1::from(sol.x))),
                LpStatus::Infeasible => return Ok(None),
                _ => tols = tols.tightened(),
            }
        }
        Err(Error::Model("region feasibility LP failed numerically".into()))
    }

    /// Visits neuron `j` of layer `layer` given the affine map `(a, c)` of
    /// that layer's pre-activations on the current partial region.
    fn dfs(
        &mut self,
        layer: usize,
        j: usize,
        a: &Array2<T>,
        c: &Array1<T>,
        witness: &Array1<T>,
        visit: &mut dyn FnMut(RegionCertificate<T>),
    ) -> Result<()> {
        let depth = self.net.depth();
        if j == a.nrows() {
            if layer + 1 == depth {
                let jacobian = self.net.jacobian_for_pattern(&self.pattern)?;
                visit(RegionCertificate { pattern: self.pattern.clone(), witness: witness.clone(), jacobian });
                return Ok(());
            }
            // affine map of the next layer on this region
            let mask = &self.pattern[layer];
            let mut da = a.clone();
            let mut dc = c.clone();
            for (r, on) in mask.iter().enumerate() {
                if !on {
                    da.row_mut(r).fill(T::zero());
                    dc[r] = T::zero();
                }
            }
            let next = &self.net.layers()[layer + 1];
            let na = next.weight.dot(&da);
            let nc = next.weight.dot(&dc) + &next.bias;
            self.pattern.push(Vec::with_capacity(na.nrows()));
            self.dfs(layer + 1, 0, &na, &nc, witness, visit)?;
            self.pattern.pop();
            return Ok(());
        }
        let (zlo, zhi) = {
            let zb = &self.bounds.pre_activation_boxes[layer];
            (zb.lo[j], zb.hi[j])
        };
        let row = a.row(j);
        for on in [true, false] {
            if (on && zhi < self.eps) || (!on && zlo > -self.eps) {
                continue;
            }
            let s = if on { T::one() } else { -T::one() };
            // s (row^T x + c_j) >= eps
            let slack = s * (row.dot(witness) + c[j]);
            self.rows.push(LpRow {
                coeffs: row.iter().enumerate().filter(|(_, v)| **v != T::zero()).map(|(k, v)| (k, s * *v)).collect(),
                rel: Relation::Ge,
                rhs: self.eps - s * c[j],
            });
            let point = if slack >= self.eps { Some(witness.clone()) } else { self.feasible_point()? };
            if let Some(w) = point {
                self.pattern[layer].push(on);
                self.dfs(layer, j + 1, a, c, &w, visit)?;
                self.pattern[layer].pop();
            }
            self.rows.pop();
        }
        Ok(())
    }
}

/// Calls `visit` once per full-dimensional region of `net` meeting `domain`
/// in an `interior_eps`-deep point.
pub fn enumerate_regions_with<T: Scalar>(
    net: &ReLUNetwork<T>,
    domain: &Hyperbox<T>,
    opts: &OracleOptions,
    visit: &mut dyn FnMut(RegionCertificate<T>),
) -> Result<()> {
    if net.total_neurons() > opts.neuron_cap {
        return Err(Error::Capability(format!(
            "network has {} hidden neurons; region enumeration is capped at {}",
            net.total_neurons(),
            opts.neuron_cap
        )));
    }
    if domain.dim() != net.input_dim() {
        return dim_err(format!(
            "domain has dimension {}, network expects {}",
            domain.dim(),
            net.input_dim()
        ));
    }
    if !(opts.interior_eps > 0.0) {
        return Err(Error::Input("interior_eps must be positive".into()));
    }
    let seed = if net.output_dim() == 1 { BackwardSeed::Head } else { BackwardSeed::DualBall(OutputNorm::Linf) };
    let bounds = propagate(net, domain, &seed)?;
    let mut search = Search {
        net,
        domain,
        bounds,
        eps: T::lit(opts.interior_eps),
        tols: LpTolerances::for_scalar::<T>(),
        rows: Vec::new(),
        pattern: vec![Vec::new()],
    };
    let first = &net.layers()[0];
    let start = domain.center();
    search.dfs(0, 0, &first.weight.clone(), &first.bias.clone(), &start, visit)
}

pub fn enumerate_regions<T: Scalar>(net: &ReLUNetwork<T>, domain: &Hyperbox<T>, opts: &OracleOptions) -> Result<Vec<RegionCertificate<T>>> {
    let mut out = Vec::new();
    enumerate_regions_with(net, domain, opts, &mut |r| out.push(r))?;
    Ok(out)
}

/// Largest region-wise `||J||_{alpha, beta}` over the domain.
pub fn exact_lipschitz_bruteforce<T: Scalar>(
    net: &ReLUNetwork<T>,
    domain: &Hyperbox<T>,
    input: InputNorm,
    output: OutputNorm,
    opts: &OracleOptions,
) -> Result<OracleResult<T>> {
    let mut best: Option<(T, RegionCertificate<T>)> = None;
    let mut regions = 0usize;
    enumerate_regions_with(net, domain, opts, &mut |r| {
        regions += 1;
        let v = r.value(input, output);
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, r));
        }
    })?;
    Ok(match best {
        Some((value, cert)) => OracleResult { value, regions, best: Some(cert) },
        None => OracleResult { value: T::zero(), regions: 0, best: None },
    })
}
