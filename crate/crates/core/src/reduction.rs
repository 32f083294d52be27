//! Graph to network reduction: a ReLU network whose largest gradient norm
//! over `[-2, 2]^n` is the maximum independent set size of a graph.
//!
//! Each vertex gets a saturating gadget `psi(t) = relu(t + 1) - relu(t - 1) - 1`
//! built from two neurons. A second layer scores vertex `i` by
//! `I_i = psi_i - sum_{j ~ i} psi_j - (d_i + 1 - eps)` and the head averages
//! `relu(I_i)` with weights `1 / (d_i + 1)`.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::bnb::{lipmip, MipStatus, SolveOptions};
use crate::error::{Error, Result};
use crate::interval::Hyperbox;
use crate::mip::LipschitzQuery;
use crate::network::{Layer, ReLUNetwork};
use crate::norms::InputNorm;
use crate::rng::SplitMix64;

pub const MAX_BRUTE_FORCE_VERTICES: usize = 24;
pub const MATCH_TOL: f64 = 1e-6;
/// Half-width of the evaluation box.
pub const DOMAIN_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Edges are unordered; `(i, j)` and `(j, i)` are the same edge and may
    /// not both appear.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Input(format!("edge ({i}, {j}) has an endpoint outside 0..{n}")));
            }
            if i == j {
                return Err(Error::Input(format!("self-loop at vertex {i}")));
            }
            if !set.insert((i.min(j), i.max(j))) {
                return Err(Error::Input(format!("duplicate edge ({i}, {j})")));
            }
        }
        Ok(Self { n, edges: set })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, edges: BTreeSet::new() }
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self { n, edges }
    }

    pub fn path(n: usize) -> Self {
        let edges = (1..n).map(|i| (i - 1, i)).collect();
        Self { n, edges }
    }

    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Input(format!("a cycle needs at least 3 vertices, got {n}")));
        }
        let e: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::new(n, &e)
    }

    pub fn petersen() -> Self {
        let mut e = Vec::new();
        for i in 0..5 {
            e.push((i, (i + 1) % 5));
            e.push((i, i + 5));
            e.push((5 + i, 5 + (i + 2) % 5));
        }
        Self::new(10, &e).expect("petersen graph is simple")
    }

    /// Erdos-Renyi `G(n, p)` drawn with [`SplitMix64`], one draw per pair in
    /// lexicographic order.
    pub fn random_gnp(n: usize, p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Input(format!("edge probability {p} is outside [0, 1]")));
        }
        let mut rng = SplitMix64::new(seed);
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.next_f64() < p {
                    edges.insert((i, j));
                }
            }
        }
        Ok(Self { n, edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(i, j)| if i == v { Some(j) } else if j == v { Some(i) } else { None })
            .collect()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(i, j)| i == v || j == v).count()
    }

    /// Parses `n m` followed by `m` lines `u v`. Lines starting with `#` are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| Error::Parse("graph file is empty".into()))?;
        let head = parse_pair(header, hl)?;
        let (n, m) = head;
        let mut edges = Vec::with_capacity(m);
        for (k, l) in lines {
            edges.push(parse_pair(l, k)?);
        }
        if edges.len() != m {
            return Err(Error::Parse(format!("header declares {m} edges, found {}", edges.len())));
        }
        Self::new(n, &edges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n, self.edges.len());
        for (i, j) in &self.edges {
            s.push_str(&format!("{i} {j}\n"));
        }
        s
    }

    fn adjacency_masks(&self) -> Vec<u32> {
        let mut adj = vec![0u32; self.n];
        for &(i, j) in &self.edges {
            adj[i] |= 1 << j;
            adj[j] |= 1 << i;
        }
        adj
    }
}

fn parse_pair(line: &str, lineno: usize) -> Result<(usize, usize)> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 2 {
        return Err(Error::Parse(format!("line {lineno}: expected two integers, got `{line}`")));
    }
    let p = |t: &str| t.parse::<usize>().map_err(|_| Error::Parse(format!("line {lineno}: `{t}` is not a vertex index")));
    Ok((p(toks[0])?, p(toks[1])?))
}

fn default_eps(n: usize) -> f64 {
    1.0 / (n as f64 + 2.0)
}

fn check_eps(n: usize, eps: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::Input("graph has no vertices".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Input(format!("eps must lie in (0, 1), got {eps}")));
    }
    Ok(())
}

/// First layer: neurons `2k` and `2k+1` compute `x_k + 1` and `x_k - 1`.
fn gadget_layer(dim: usize) -> Layer<f64> {
    let mut w = Array2::zeros((2 * dim, dim));
    let mut b = Array1::zeros(2 * dim);
    for k in 0..dim {
        w[[2 * k, k]] = 1.0;
        w[[2 * k + 1, k]] = 1.0;
        b[2 * k] = 1.0;
        b[2 * k + 1] = -1.0;
    }
    Layer { weight: w, bias: b }
}

/// Second layer from `I_i = sum_k c[i][k] psi_k + constant[i]`.
fn scoring_layer(coeffs: &Array2<f64>, constant: &Array1<f64>) -> Layer<f64> {
    let (rows, dim) = coeffs.dim();
    let mut w = Array2::zeros((rows, 2 * dim));
    let mut b = constant.clone();
    for i in 0..rows {
        for k in 0..dim {
            let c = coeffs[[i, k]];
            w[[i, 2 * k]] = c;
            w[[i, 2 * k + 1]] = -c;
            b[i] -= c;
        }
    }
    Layer { weight: w, bias: b }
}

fn neighborhood_coeffs(g: &Graph, dim: usize) -> Array2<f64> {
    let mut c = Array2::zeros((g.n, dim));
    for i in 0..g.n {
        c[[i, i]] = 1.0;
    }
    for (i, j) in g.edges() {
        c[[i, j]] = -1.0;
        c[[j, i]] = -1.0;
    }
    c
}

fn head_weights(g: &Graph) -> Array2<f64> {
    Array2::from_shape_fn((1, g.n), |(_, i)| 1.0 / (g.degree(i) as f64 + 1.0))
}

/// The gadget network with `n` inputs; its `L^inf` over `[-2, 2]^n` is the
/// maximum independent set size. `eps` defaults to `1 / (n + 2)`.
pub fn build_mis_network(g: &Graph, eps: Option<f64>) -> Result<ReLUNetwork<f64>> {
    let eps = eps.unwrap_or_else(|| default_eps(g.n));
    check_eps(g.n, eps)?;
    let coeffs = neighborhood_coeffs(g, g.n);
    let constant = Array1::from_shape_fn(g.n, |i| -(g.degree(i) as f64 + 1.0 - eps));
    ReLUNetwork::new(vec![gadget_layer(g.n), scoring_layer(&coeffs, &constant)], head_weights(g))
}

/// Variant with an extra input `x_n` whose partial derivative counts the
/// active scores, so the `L^1` value (largest `|df/dx_k|`) is the maximum
/// independent set size. Scores are
/// `I_i = psi_i + (d_i + 1) psi_n - sum_{j ~ i} psi_j - 2 (d_i + 1 - eps)`.
pub fn build_mis_network_l1(g: &Graph, eps: Option<f64>) -> Result<ReLUNetwork<f64>> {
    let eps = eps.unwrap_or_else(|| default_eps(g.n));
    check_eps(g.n, eps)?;
    let mut coeffs = neighborhood_coeffs(g, g.n + 1);
    for i in 0..g.n {
        coeffs[[i, g.n]] = g.degree(i) as f64 + 1.0;
    }
    let constant = Array1::from_shape_fn(g.n, |i| -2.0 * (g.degree(i) as f64 + 1.0 - eps));
    ReLUNetwork::new(vec![gadget_layer(g.n + 1), scoring_layer(&coeffs, &constant)], head_weights(g))
}

/// Exact maximum independent set size by branching on a highest-degree
/// vertex.
pub fn brute_force_mis(g: &Graph) -> Result<usize> {
    if g.n > MAX_BRUTE_FORCE_VERTICES {
        return Err(Error::Capability(format!(
            "graph has {} vertices; exact search is capped at {MAX_BRUTE_FORCE_VERTICES}",
            g.n
        )));
    }
    let adj = g.adjacency_masks();
    Ok(mis_rec(&adj, (1u32 << g.n) - 1) as usize)
}

fn mis_rec(adj: &[u32], live: u32) -> u32 {
    if live == 0 {
        return 0;
    }
    let mut best_v = 0;
    let mut best_d = -1i32;
    let mut rest = live;
    while rest != 0 {
        let v = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        let d = (adj[v] & live).count_ones() as i32;
        if d > best_d {
            best_d = d;
            best_v = v;
        }
    }
    if best_d <= 0 {
        return live.count_ones();
    }
    let v = best_v;
    let take = 1 + mis_rec(adj, live & !(1 << v) & !adj[v]);
    let skip = mis_rec(adj, live & !(1 << v));
    take.max(skip)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport {
    pub mis: usize,
    pub lipmip_value: f64,
    pub upper_bound: f64,
    pub status: MipStatus,
    pub matched: bool,
}

impl ReductionReport {
    /// `MIS=<k> LipMIP=<value> MATCH|MISMATCH`.
    pub fn summary(&self) -> String {
        format!(
            "MIS={} LipMIP={:.6} {}",
            self.mis,
            self.lipmip_value,
            if self.matched { "MATCH" } else { "MISMATCH" }
        )
    }
}

fn verify(g: &Graph, net: &ReLUNetwork<f64>, norm: InputNorm, opts: &SolveOptions) -> Result<ReductionReport> {
    let mis = brute_force_mis(g)?;
    let domain = Hyperbox::new(
        Array1::from_elem(net.input_dim(), -DOMAIN_RADIUS),
        Array1::from_elem(net.input_dim(), DOMAIN_RADIUS),
    )?;
    let r = lipmip(net, &LipschitzQuery::scalar(domain, norm), opts)?;
    let matched = r.status == MipStatus::Exact && (r.incumbent_value - mis as f64).abs() <= MATCH_TOL;
    Ok(ReductionReport { mis, lipmip_value: r.incumbent_value, upper_bound: r.upper_bound, status: r.status, matched })
}

/// Compares LipMIP `L^inf` of [`build_mis_network`] with [`brute_force_mis`].
pub fn verify_reduction(g: &Graph, opts: &SolveOptions) -> Result<ReductionReport> {
    verify(g, &build_mis_network(g, None)?, InputNorm::Linf, opts)
}

/// Compares LipMIP `L^1` of [`build_mis_network_l1`] with [`brute_force_mis`].
pub fn verify_reduction_l1(g: &Graph, opts: &SolveOptions) -> Result<ReductionReport> {
    verify(g, &build_mis_network_l1(g, None)?, InputNorm::L1, opts)
}
