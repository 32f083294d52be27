//! A common interface over the Lipschitz estimators: sampling lower bounds,
//! the naive layer-norm product, interval propagation, the LP relaxation and
//! the exact mixed-integer program.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2};

use crate::bnb::{lipmip, liplp, MipStatus, SolveOptions};
use crate::error::{dim_err, Error, Result};
use crate::interval::{fastlip_vector, Hyperbox};
use crate::mip::LipschitzQuery;
use crate::network::{ReLUNetwork, ZeroRule};
use crate::norms::{induced_norm, InputNorm, OutputNorm};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

pub const CSV_HEADER: &str = "method,value,guarantee,gap,time_s,rel_err,samples,nodes";
pub const POWER_ITERATIONS: usize = 200;
pub const POWER_REL_TOL: f64 = 1e-10;
/// Seed of the start vector for power iteration.
const POWER_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    RandomLb,
    NaiveUb,
    FastLip,
    LipLp,
    LipMip,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::RandomLb, Method::NaiveUb, Method::FastLip, Method::LipLp, Method::LipMip];

    pub fn name(self) -> &'static str {
        match self {
            Method::RandomLb => "randomlb",
            Method::NaiveUb => "naiveub",
            Method::FastLip => "fastlip",
            Method::LipLp => "liplp",
            Method::LipMip => "lipmip",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::Input(format!("unknown method `{s}`; valid methods: {}", Self::valid_names())))
    }
}

/// Comma-separated method list.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let methods: Vec<Method> = s.split(',').map(str::parse).collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::Input("no methods given".into()));
    }
    Ok(methods)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Guarantee {
    LowerBound,
    UpperBound,
    Exact,
    /// Certified upper bound within the given relative gap of a feasible
    /// value.
    GappedUpper(f64),
}

impl Guarantee {
    pub fn name(self) -> &'static str {
        match self {
            Guarantee::LowerBound => "lower_bound",
            Guarantee::UpperBound => "upper_bound",
            Guarantee::Exact => "exact",
            Guarantee::GappedUpper(_) => "gapped_upper",
        }
    }

    pub fn gap(self) -> Option<f64> {
        match self {
            Guarantee::GappedUpper(g) => Some(g),
            Guarantee::Exact => Some(0.0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub method: Method,
    pub value: f64,
    pub guarantee: Guarantee,
    pub wall_time_seconds: f64,
    /// `(value - lipmip) / lipmip` when compared against LipMIP.
    pub rel_err: Option<f64>,
    pub samples: Option<usize>,
    pub nodes: Option<usize>,
    /// Best feasible value when the solve stopped early.
    pub lower: Option<f64>,
    pub status: Option<MipStatus>,
}

impl EstimateRecord {
    fn new(method: Method, value: f64, guarantee: Guarantee, start: Instant) -> Self {
        Self {
            method,
            value,
            guarantee,
            wall_time_seconds: start.elapsed().as_secs_f64(),
            rel_err: None,
            samples: None,
            nodes: None,
            lower: None,
            status: None,
        }
    }

    pub fn timed_out(&self) -> bool {
        matches!(self.status, Some(MipStatus::Timeout | MipStatus::NodeLimit))
    }

    /// One CSV row matching [`CSV_HEADER`]. The time column stays empty
    /// unless `with_time` is set, so that repeated runs are byte-identical.
    pub fn csv_row(&self, with_time: bool) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        [
            self.method.name().to_string(),
            format!("{}", self.value),
            self.guarantee.name().to_string(),
            opt(self.guarantee.gap().map(|g| format!("{g}"))),
            if with_time { format!("{:.6}", self.wall_time_seconds) } else { String::new() },
            opt(self.rel_err.map(|r| format!("{r}"))),
            opt(self.samples.map(|s| s.to_string())),
            opt(self.nodes.map(|n| n.to_string())),
        ]
        .join(",")
    }
}

/// Header plus one row per record.
pub fn to_csv(records: &[EstimateRecord], with_time: bool) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row(with_time));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct EstimatorOptions {
    pub samples: usize,
    pub seed: u64,
    pub solve: SolveOptions,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self { samples: 1000, seed: 0, solve: SolveOptions::default() }
    }
}

fn check_query<T: Scalar>(net: &ReLUNetwork<T>, domain: &Hyperbox<T>, output: OutputNorm) -> Result<()> {
    if domain.dim() != net.input_dim() {
        return dim_err(format!("domain has dimension {}, network expects {}", domain.dim(), net.input_dim()));
    }
    if output == OutputNorm::Abs && net.output_dim() != 1 {
        return Err(Error::Input(format!(
            "output norm 'abs' needs a scalar network, this one has {} outputs",
            net.output_dim()
        )));
    }
    Ok(())
}

/// Largest chain-rule Jacobian norm over `n_samples` uniform points of the
/// domain. Points are drawn coordinate by coordinate, so a run with more
/// samples extends the sequence of a run with fewer.
pub fn random_lb<T: Scalar>(
    net: &ReLUNetwork<T>,
    domain: &Hyperbox<T>,
    input: InputNorm,
    output: OutputNorm,
    n_samples: usize,
    seed: u64,
) -> Result<EstimateRecord> {
    let start = Instant::now();
    check_query(net, domain, output)?;
    if n_samples == 0 {
        return Err(Error::Input("random_lb needs at least one sample".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut best = T::zero();
    let n = domain.dim();
    for _ in 0..n_samples {
        let x = Array1::from_shape_fn(n, |k| {
            let (lo, hi) = (domain.lo[k].as_f64(), domain.hi[k].as_f64());
            T::lit(rng.uniform(lo, hi)).max(domain.lo[k]).min(domain.hi[k])
        });
        let jac = net.chain_rule_jacobian(x.view(), &ZeroRule::AlwaysZero)?;
        best = best.max(induced_norm(jac.view(), input, output));
    }
    let mut r = EstimateRecord::new(Method::RandomLb, best.as_f64(), Guarantee::LowerBound, start);
    r.samples = Some(n_samples);
    Ok(r)
}

/// Largest singular value by power iteration on `W^T W`.
pub fn spectral_norm(w: &Array2<f64>) -> f64 {
    let n = w.ncols();
    if n == 0 || w.nrows() == 0 {
        return 0.0;
    }
    let mut rng = SplitMix64::new(POWER_SEED);
    let mut v = Array1::from_shape_fn(n, |_| rng.uniform(0.5, 1.5));
    v /= v.dot(&v).sqrt();
    let mut sigma = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let wv = w.dot(&v);
        let next = w.t().dot(&wv);
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let s = wv.dot(&wv).sqrt();
        v = next / norm;
        let done = (s - sigma).abs() <= POWER_REL_TOL * s;
        sigma = s;
        if done {
            break;
        }
    }
    sigma.max(w.dot(&v).dot(&w.dot(&v)).sqrt())
}

/// Factor with `||y||_b <= c ||y||_2` for `y` in `R^m`.
fn output_factor(output: OutputNorm, m: usize) -> f64 {
    match output {
        OutputNorm::Abs | OutputNorm::Linf => 1.0,
        OutputNorm::L1 => (m as f64).sqrt(),
        OutputNorm::Cross => 2.0,
    }
}

/// Product of the spectral norms of every layer and the head, scaled by
/// `sqrt(n_0)` for the input norm and by the `l2` equivalence constant of the
/// output norm.
pub fn naive_ub<T: Scalar>(net: &ReLUNetwork<T>, _input: InputNorm, output: OutputNorm) -> Result<EstimateRecord> {
    let start = Instant::now();
    if output == OutputNorm::Abs && net.output_dim() != 1 {
        return Err(Error::Input("output norm 'abs' needs a scalar network".into()));
    }
    let f = |a: &Array2<T>| a.mapv(|v| v.as_f64());
    let mut prod = spectral_norm(&f(net.head()));
    for layer in net.layers() {
        prod *= spectral_norm(&f(&layer.weight));
    }
    let value = prod * (net.input_dim() as f64).sqrt() * output_factor(output, net.output_dim());
    Ok(EstimateRecord::new(Method::NaiveUb, value, Guarantee::UpperBound, start))
}

pub fn fastlip<T: Scalar>(
    net: &ReLUNetwork<T>,
    domain: &Hyperbox<T>,
    input: InputNorm,
    output: OutputNorm,
) -> Result<EstimateRecord> {
    let start = Instant::now();
    check_query(net, domain, output)?;
    let v = fastlip_vector(net, domain, input, output)?;
    Ok(EstimateRecord::new(Method::FastLip, v.as_f64(), Guarantee::UpperBound, start))
}

fn query<T: Scalar>(domain: &Hyperbox<T>, input: InputNorm, output: OutputNorm) -> LipschitzQuery<T> {
    LipschitzQuery::vector(domain.clone(), input, output)
}

pub fn liplp_estimate<T: Scalar>(
    net: &ReLUNetwork<T>,
    domain: &Hyperbox<T>,
    input: InputNorm,
    output: OutputNorm,
    opts: &SolveOptions,
) -> Result<EstimateRecord> {
    let start = Instant::now();
    check_query(net, domain, output)?;
    let v = liplp(net, &query(domain, input, output), &opts.lp_tolerances)?;
    Ok(EstimateRecord::new(Method::LipLp, v.as_f64(), Guarantee::UpperBound, start))
}

/// Exact when the search closes; otherwise the certified upper bound with the
/// gap to the best feasible value.
pub fn lipmip_estimate<T: Scalar>(
    net: &ReLUNetwork<T>,
    domain: &Hyperbox<T>,
    input: InputNorm,
    output: OutputNorm,
    opts: &SolveOptions,
) -> Result<EstimateRecord> {
    let start = Instant::now();
    check_query(net, domain, output)?;
    let r = lipmip(net, &query(domain, input, output), opts)?;
    let (value, guarantee) = match r.status {
        MipStatus::Exact => (r.incumbent_value.as_f64(), Guarantee::Exact),
        MipStatus::GapReached | MipStatus::Timeout | MipStatus::NodeLimit => {
            (r.upper_bound.as_f64(), Guarantee::GappedUpper(r.gap.as_f64()))
        }
        MipStatus::NumericalFailure if r.upper_bound.is_finite() && r.incumbent_value.is_finite() => {
            (r.upper_bound.as_f64(), Guarantee::GappedUpper(r.gap.as_f64()))
        }
        MipStatus::Infeasible => return Err(Error::Model("the Lipschitz program is infeasible".into())),
        MipStatus::NumericalFailure => {
            return Err(Error::Model(format!("LP failed numerically after {} nodes without usable bounds", r.nodes_explored)))
        }
    };
    let mut rec = EstimateRecord::new(Method::LipMip, value, guarantee, start);
    rec.nodes = Some(r.nodes_explored);
    rec.lower = Some(r.incumbent_value.as_f64());
    rec.status = Some(r.status);
    Ok(rec)
}

pub fn estimate<T: Scalar>(
    net: &ReLUNetwork<T>,
    domain: &Hyperbox<T>,
    input: InputNorm,
    output: OutputNorm,
    method: Method,
    opts: &EstimatorOptions,
) -> Result<EstimateRecord> {
    match method {
        Method::RandomLb => random_lb(net, domain, input, output, opts.samples, opts.seed),
        Method::NaiveUb => {
            check_query(net, domain, output)?;
            naive_ub(net, input, output)
        }
        Method::FastLip => fastlip(net, domain, input, output),
        Method::LipLp => liplp_estimate(net, domain, input, output, &opts.solve),
        Method::LipMip => lipmip_estimate(net, domain, input, output, &opts.solve),
    }
}

/// Runs every method in order and fills `rel_err` against the LipMIP value
/// when LipMIP is among them.
pub fn compare<T: Scalar>(
    net: &ReLUNetwork<T>,
    domain: &Hyperbox<T>,
    input: InputNorm,
    output: OutputNorm,
    methods: &[Method],
    opts: &EstimatorOptions,
) -> Result<Vec<EstimateRecord>> {
    let mut records: Vec<EstimateRecord> =
        methods.iter().map(|&m| estimate(net, domain, input, output, m, opts)).collect::<Result<_>>()?;
    let reference = records.iter().find(|r| r.method == Method::LipMip).map(|r| r.value);
    if let Some(exact) = reference.filter(|v| *v != 0.0) {
        for r in &mut records {
            r.rel_err = Some((r.value - exact) / exact);
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{random_he, Layer};
    use ndarray::array;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        let err = "clever".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("randomlb, naiveub, fastlip, liplp, lipmip"), "{err}");
        assert_eq!(parse_methods("lipmip,FastLip").unwrap(), vec![Method::LipMip, Method::FastLip]);
    }

    #[test]
    fn random_lb_on_affine_is_exact() {
        let net = ReLUNetwork::<f64>::affine_scalar(&[1.5, -2.0, 0.5], 0.3).unwrap();
        let dom = Hyperbox::unit(3);
        let r = random_lb(&net, &dom, InputNorm::Linf, OutputNorm::Abs, 5, 1).unwrap();
        assert_eq!(r.value, 4.0);
        assert_eq!(r.guarantee, Guarantee::LowerBound);
        assert!(random_lb(&net, &dom, InputNorm::Linf, OutputNorm::Abs, 0, 1).is_err());
    }

    #[test]
    fn random_lb_is_monotone_in_samples() {
        let net = random_he::<f64>(&[3, 6, 6, 1], 4).unwrap();
        let dom = Hyperbox::unit(3);
        let mut last = 0.0;
        for n in [1, 5, 20, 100] {
            let v = random_lb(&net, &dom, InputNorm::Linf, OutputNorm::Abs, n, 9).unwrap().value;
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn naive_ub_hand_example() {
        let w = Array2::from_diag(&array![2.0, 2.0, 2.0, 2.0]);
        let net = ReLUNetwork::new(vec![Layer { weight: w, bias: Array1::zeros(4) }], array![[1.0, 0.0, 0.0, 0.0]]).unwrap();
        let r = naive_ub(&net, InputNorm::Linf, OutputNorm::Abs).unwrap();
        assert!((r.value - 4.0).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn naive_ub_identity_layers_give_sqrt_dim() {
        let eye = Array2::<f64>::eye(9);
        let layers = vec![
            Layer { weight: eye.clone(), bias: Array1::zeros(9) },
            Layer { weight: eye.clone(), bias: Array1::zeros(9) },
        ];
        let head = Array2::from_shape_fn((1, 9), |(_, j)| if j == 0 { 1.0 } else { 0.0 });
        let net = ReLUNetwork::new(layers, head).unwrap();
        let r = naive_ub(&net, InputNorm::Linf, OutputNorm::Abs).unwrap();
        assert!((r.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_closed_form() {
        // singular values of [[3, 0], [4, 5]] are sqrt(45) and sqrt(5)
        let s = spectral_norm(&array![[3.0, 0.0], [4.0, 5.0]]);
        assert!((s - 45f64.sqrt()).abs() < 1e-9, "{s}");
    }

    #[test]
    fn compare_fills_relative_error() {
        let net = random_he::<f64>(&[2, 4, 1], 2).unwrap();
        let dom = Hyperbox::unit(2);
        let recs = compare(&net, &dom, InputNorm::Linf, OutputNorm::Abs, &Method::ALL, &Default::default()).unwrap();
        assert_eq!(recs.len(), 5);
        let exact = recs.iter().find(|r| r.method == Method::LipMip).unwrap();
        assert_eq!(exact.guarantee, Guarantee::Exact);
        assert_eq!(exact.rel_err, Some(0.0));
        for r in &recs {
            match r.guarantee {
                Guarantee::LowerBound => assert!(r.rel_err.unwrap() <= 0.0),
                Guarantee::UpperBound => assert!(r.rel_err.unwrap() >= -1e-9),
                _ => {}
            }
        }
        let only = compare(&net, &dom, InputNorm::Linf, OutputNorm::Abs, &[Method::NaiveUb], &Default::default()).unwrap();
        assert_eq!(only[0].rel_err, None);
    }

    #[test]
    fn csv_layout() {
        let net = ReLUNetwork::<f64>::affine_scalar(&[1.0, -1.0], 0.0).unwrap();
        let r = fastlip(&net, &Hyperbox::unit(2), InputNorm::Linf, OutputNorm::Abs).unwrap();
        assert_eq!(r.csv_row(false), "fastlip,2,upper_bound,,,,,");
        let csv = to_csv(&[r], false);
        assert!(csv.starts_with("method,value,guarantee,gap,time_s,rel_err,samples,nodes\n"));
    }
}
