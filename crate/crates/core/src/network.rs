//! Feedforward ReLU networks: evaluation, activation patterns, chain-rule
//! Jacobians with configurable tie handling, He initialization and the JSON
//! network file.
//!
//! A network with `d` hidden layers computes
//!
//! ```text
//! Z_1 = W_1 x + b_1,   Z_i = W_i relu(Z_{i-1}) + b_i,   f(x) = H relu(Z_d)
//! ```
//!
//! where the head `H` is an `m x n_d` matrix (a single row for scalar networks).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::Deserialize;

use crate::error::{dim_err, Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Default tie tolerance for diagnostic pattern queries.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReLUNetwork<T> {
    layers: Vec<Layer<T>>,
    head: Array2<T>,
}

/// Sign state of one hidden neuron at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    On,
    Off,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    pub layers: Vec<Vec<Activation>>,
}

impl ActivationPattern {
    /// `(layer, neuron)` positions of tied neurons.
    pub fn ties(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (j, a) in layer.iter().enumerate() {
                if *a == Activation::Tie {
                    out.push((l, j));
                }
            }
        }
        out
    }

    pub fn has_ties(&self) -> bool {
        self.layers.iter().flatten().any(|a| *a == Activation::Tie)
    }

    /// Resolves ties with `rule` into a 0/1 pattern.
    pub fn resolve(&self, rule: &ZeroRule) -> Result<Vec<Vec<bool>>> {
        if let ZeroRule::PerNeuron(map) = rule {
            let ties = self.ties();
            if ties.len() != map.len() || ties.iter().any(|k| !map.contains_key(k)) {
                return Err(Error::Input(format!(
                    "per-neuron rule covers {:?} but tied neurons are {:?}",
                    map.keys().collect::<Vec<_>>(),
                    ties
                )));
            }
        }
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                layer
                    .iter()
                    .enumerate()
                    .map(|(j, a)| match a {
                        Activation::On => true,
                        Activation::Off => false,
                        Activation::Tie => match rule {
                            ZeroRule::AlwaysZero => false,
                            ZeroRule::AlwaysOne => true,
                            ZeroRule::PerNeuron(map) => map[&(l, j)],
                        },
                    })
                    .collect()
            })
            .collect())
    }
}

/// Which element of the ReLU subdifferential `[0, 1]` the chain rule uses at
/// an exactly-zero pre-activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ZeroRule {
    /// The convention of the mainstream autodiff frameworks.
    AlwaysZero,
    AlwaysOne,
    /// Explicit choice per tied neuron, keyed by `(layer, neuron)`.
    PerNeuron(BTreeMap<(usize, usize), bool>),
}

/// Pre-activations of every hidden layer plus the network output.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub pre_activations: Vec<Array1<T>>,
    pub output: Array1<T>,
}

#[inline]
pub fn relu<T: Scalar>(v: &Array1<T>) -> Array1<T> {
    v.mapv(|z| if z > T::zero() { z } else { T::zero() })
}

impl<T: Scalar> ReLUNetwork<T> {
    pub fn new(layers: Vec<Layer<T>>, head: Array2<T>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Input("a network needs at least one hidden layer".into()));
        }
        let mut prev = layers[0].weight.ncols();
        if prev == 0 {
            return Err(Error::Input("input dimension must be positive".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weight.ncols() != prev {
                return dim_err(format!(
                    "layer {i} weight has {} columns, expected {prev}",
                    layer.weight.ncols()
                ));
            }
            if layer.weight.nrows() == 0 {
                return Err(Error::Input(format!("layer {i} has no neurons")));
            }
            if layer.bias.len() != layer.weight.nrows() {
                return dim_err(format!(
                    "layer {i} bias has {} entries, expected {}",
                    layer.bias.len(),
                    layer.weight.nrows()
                ));
            }
            let finite = layer.weight.iter().chain(layer.bias.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::Input(format!("layer {i} has non-finite parameters")));
            }
            prev = layer.weight.nrows();
        }
        if head.ncols() != prev {
            return dim_err(format!("head has {} columns, expected {prev}", head.ncols()));
        }
        if head.nrows() == 0 {
            return Err(Error::Input("head must have at least one row".into()));
        }
        if !head.iter().all(|v| v.is_finite()) {
            return Err(Error::Input("head has non-finite entries".into()));
        }
        Ok(Self { layers, head })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn head(&self) -> &Array2<T> {
        &self.head
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.head.nrows()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.weight.nrows()).collect()
    }

    pub fn total_neurons(&self) -> usize {
        self.hidden_sizes().iter().sum()
    }

    /// Layer sizes `[n_0, n_1, ..., n_d, m]`.
    pub fn arch(&self) -> Vec<usize> {
        let mut a = vec![self.input_dim()];
        a.extend(self.hidden_sizes());
        a.push(self.output_dim());
        a
    }

    /// Same hidden layers with a different head.
    pub fn with_head(&self, head: Array2<T>) -> Result<Self> {
        Self::new(self.layers.clone(), head)
    }

    pub fn cast<U: Scalar>(&self) -> ReLUNetwork<U> {
        let conv = |v: &T| U::lit(v.as_f64());
        ReLUNetwork {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { weight: l.weight.map(conv), bias: l.bias.map(conv) })
                .collect(),
            head: self.head.map(conv),
        }
    }

    fn check_input(&self, x: ArrayView1<'_, T>) -> Result<()> {
        if x.len() != self.input_dim() {
            return dim_err(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_dim()
            ));
        }
        Ok(())
    }

    pub fn forward_trace(&self, x: ArrayView1<'_, T>) -> Result<ForwardTrace<T>> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.depth());
        let mut h = x.to_owned();
        for layer in &self.layers {
            let z = layer.weight.dot(&h) + &layer.bias;
            h = relu(&z);
            pre.push(z);
        }
        let output = self.head.dot(&h);
        Ok(ForwardTrace { pre_activations: pre, output })
    }

    pub fn forward(&self, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
        Ok(self.forward_trace(x)?.output)
    }

    /// ON iff `Z > tie_tol`, OFF iff `Z < -tie_tol`, TIE otherwise.
    pub fn pattern_at(&self, x: ArrayView1<'_, T>, tie_tol: T) -> Result<ActivationPattern> {
        if tie_tol < T::zero() {
            return Err(Error::Input("tie tolerance must be non-negative".into()));
        }
        let trace = self.forward_trace(x)?;
        Ok(ActivationPattern {
            layers: trace
                .pre_activations
                .iter()
                .map(|z| {
                    z.iter()
                        .map(|&v| {
                            if v > tie_tol {
                                Activation::On
                            } else if v < -tie_tol {
                                Activation::Off
                            } else {
                                Activation::Tie
                            }
                        })
                        .collect()
                })
                .collect(),
        })
    }

    /// Jacobian `H D_d W_d ... D_1 W_1` for a fixed 0/1 activation pattern.
    pub fn jacobian_for_pattern(&self, pattern: &[Vec<bool>]) -> Result<Array2<T>> {
        if pattern.len() != self.depth() {
            return dim_err(format!(
                "pattern has {} layers, network has {}",
                pattern.len(),
                self.depth()
            ));
        }
        let mut acc: Option<Array2<T>> = None;
        for (i, (layer, mask)) in self.layers.iter().zip(pattern).enumerate() {
            if mask.len() != layer.weight.nrows() {
                return dim_err(format!("pattern layer {i} has wrong width"));
            }
            let mut m = match acc {
                None => layer.weight.clone(),
                Some(prev) => layer.weight.dot(&prev),
            };
            for (r, on) in mask.iter().enumerate() {
                if !on {
                    m.row_mut(r).fill(T::zero());
                }
            }
            acc = Some(m);
        }
        Ok(self.head.dot(&acc.expect("at least one layer")))
    }

    /// Pre-activations of every hidden layer as affine maps `(A_i, c_i)` of
    /// the input, valid on the closed region where the network follows
    /// `pattern`.
    pub fn region_maps(&self, pattern: &[Vec<bool>]) -> Result<Vec<(Array2<T>, Array1<T>)>> {
        if pattern.len() != self.depth() {
            return dim_err(format!("pattern has {} layers, network has {}", pattern.len(), self.depth()));
        }
        let mut maps: Vec<(Array2<T>, Array1<T>)> = Vec::with_capacity(self.depth());
        for (i, layer) in self.layers.iter().enumerate() {
            let map = match maps.last() {
                None => (layer.weight.clone(), layer.bias.clone()),
                Some((a, c)) => {
                    let mut a = a.clone();
                    let mut c = c.clone();
                    for (r, on) in pattern[i - 1].iter().enumerate() {
                        if !on {
                            a.row_mut(r).fill(T::zero());
                            c[r] = T::zero();
                        }
                    }
                    (layer.weight.dot(&a), layer.weight.dot(&c) + &layer.bias)
                }
            };
            if pattern[i].len() != map.0.nrows() {
                return dim_err(format!("pattern layer {i} has wrong width"));
            }
            maps.push(map);
        }
        Ok(maps)
    }

    /// Chain-rule Jacobian (`m x n_0`) at `x`, with ties detected exactly
    /// (`tie_tol = 0`) and resolved by `rule`.
    pub fn chain_rule_jacobian(&self, x: ArrayView1<'_, T>, rule: &ZeroRule) -> Result<Array2<T>> {
        let pattern = self.pattern_at(x, T::zero())?;
        let mask = pattern.resolve(rule)?;
        self.jacobian_for_pattern(&mask)
    }

    /// The univariate identity `I(x) = 2x - relu(x) + relu(-x)`.
    ///
    /// Neurons 0 and 1 are `relu(x)` and `relu(-x)`. The ReLU-free `2x` term is
    /// realized by an always-on neuron `relu(x + shift)` with head weight 2,
    /// and the constant `-2 shift` by a neuron with zero weight and bias
    /// `shift`. The representation is exact for `x > -shift`.
    pub fn identity(shift: T) -> Self {
        let z = T::zero();
        let o = T::one();
        let two = o + o;
        let weight = Array2::from_shape_vec((4, 1), vec![o, -o, o, z]).expect("shape");
        let bias = Array1::from(vec![z, z, shift, shift]);
        let head = Array2::from_shape_vec((1, 4), vec![-o, o, two, -two]).expect("shape");
        Self::new(vec![Layer { weight, bias }], head).expect("valid identity network")
    }

    /// Scalar network computing `w^T x + bias` wherever `w^T x + bias > 0`,
    /// through a single always-on neuron.
    pub fn affine_scalar(w: &[T], bias: T) -> Result<Self> {
        let weight = Array2::from_shape_vec((1, w.len()), w.to_vec())
            .map_err(|e| Error::Input(e.to_string()))?;
        let head = Array2::from_elem((1, 1), T::one());
        Self::new(vec![Layer { weight, bias: Array1::from(vec![bias]) }], head)
    }

    /// Vector network computing `A x + A 1 shift` for `x > -shift`, via an
    /// identity hidden layer shifted to stay on.
    pub fn affine_vector(a: Array2<T>, shift: T) -> Result<Self> {
        let n = a.ncols();
        let weight = Array2::eye(n);
        let bias = Array1::from_elem(n, shift);
        Self::new(vec![Layer { weight, bias }], a)
    }

    pub fn to_json_string(&self) -> String {
        fn num<T: Scalar>(v: T) -> String {
            serde_json::to_string(&v.as_f64()).expect("finite number")
        }
        fn vector<T: Scalar>(v: impl Iterator<Item = T>) -> String {
            let parts: Vec<String> = v.map(num).collect();
            format!("[{}]", parts.join(", "))
        }
        fn matrix<T: Scalar>(m: &Array2<T>, indent: &str) -> String {
            let rows: Vec<String> = m
                .rows()
                .into_iter()
                .map(|r| format!("{indent}  {}", vector(r.iter().copied())))
                .collect();
            format!("[\n{}\n{indent}]", rows.join(",\n"))
        }
        let mut s = String::new();
        s.push_str("{\n");
        let _ = writeln!(s, "  \"format_version\": {FORMAT_VERSION},");
        let arch: Vec<String> = self.arch().iter().map(|a| a.to_string()).collect();
        let _ = writeln!(s, "  \"arch\": [{}],", arch.join(", "));
        s.push_str("  \"weights\": [\n");
        let ws: Vec<String> = self
            .layers
            .iter()
            .map(|l| format!("    {}", matrix(&l.weight, "    ")))
            .collect();
        s.push_str(&ws.join(",\n"));
        s.push_str("\n  ],\n  \"biases\": [\n");
        let bs: Vec<String> = self
            .layers
            .iter()
            .map(|l| format!("    {}", vector(l.bias.iter().copied())))
            .collect();
        s.push_str(&bs.join(",\n"));
        s.push_str("\n  ],\n");
        let _ = writeln!(s, "  \"head\": {}", matrix(&self.head, "  "));
        s.push_str("}\n");
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: NetworkFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        raw.into_network()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    format_version: u32,
    arch: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    head: Vec<Vec<f64>>,
}

fn parse_matrix<T: Scalar>(rows: &[Vec<f64>], shape: (usize, usize), field: &str) -> Result<Array2<T>> {
    if rows.len() != shape.0 {
        return Err(Error::Parse(format!(
            "{field}: expected {} rows, found {}",
            shape.0,
            rows.len()
        )));
    }
    let mut data = Vec::with_capacity(shape.0 * shape.1);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != shape.1 {
            return Err(Error::Parse(format!(
                "{field}[{r}]: expected {} entries, found {}",
                shape.1,
                row.len()
            )));
        }
        data.extend(row.iter().map(|v| T::lit(*v)));
    }
    Ok(Array2::from_shape_vec(shape, data).expect("shape checked"))
}

impl NetworkFile {
    fn into_network<T: Scalar>(self) -> Result<ReLUNetwork<T>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "format_version: unsupported value {}",
                self.format_version
            )));
        }
        let arch = &self.arch;
        if arch.len() < 3 {
            return Err(Error::Parse(format!(
                "arch: need at least 3 entries (input, hidden..., output), found {}",
                arch.len()
            )));
        }
        if let Some(pos) = arch.iter().position(|&a| a == 0) {
            return Err(Error::Parse(format!("arch[{pos}]: sizes must be positive")));
        }
        let depth = arch.len() - 2;
        if self.weights.len() != depth {
            return Err(Error::Parse(format!(
                "weights: expected {depth} matrices, found {}",
                self.weights.len()
            )));
        }
        if self.biases.len() != depth {
            return Err(Error::Parse(format!(
                "biases: expected {depth} vectors, found {}",
                self.biases.len()
            )));
        }
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let weight = parse_matrix(&self.weights[i], (arch[i + 1], arch[i]), &format!("weights[{i}]"))?;
            if self.biases[i].len() != arch[i + 1] {
                return Err(Error::Parse(format!(
                    "biases[{i}]: expected {} entries, found {}",
                    arch[i + 1],
                    self.biases[i].len()
                )));
            }
            let bias = Array1::from(self.biases[i].iter().map(|v| T::lit(*v)).collect::<Vec<_>>());
            layers.push(Layer { weight, bias });
        }
        let head = parse_matrix(&self.head, (arch[depth + 1], arch[depth]), "head")?;
        ReLUNetwork::new(layers, head).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// He-initialized network for `arch = [n_0, n_1, ..., n_d, m]`.
///
/// Every weight (hidden layers and head) is drawn from `N(0, 2 / fan_in)` using
/// [`SplitMix64`] seeded with `seed`, layer by layer in row-major order, head
/// last. Biases are zero.
pub fn random_he<T: Scalar>(arch: &[usize], seed: u64) -> Result<ReLUNetwork<T>> {
    if arch.is_empty() {
        return Err(Error::Input("architecture is empty".into()));
    }
    if arch.len() < 3 {
        return Err(Error::Input(format!(
            "architecture {arch:?} has no hidden layer; need [input, hidden..., output]"
        )));
    }
    if arch.iter().any(|&a| a == 0) {
        return Err(Error::Input(format!("architecture {arch:?} has a zero-sized layer")));
    }
    let mut rng = SplitMix64::new(seed);
    let mut draw = |rows: usize, cols: usize| {
        let std = (2.0 / cols as f64).sqrt();
        let data: Vec<T> = (0..rows * cols).map(|_| T::lit(std * rng.normal())).collect();
        Array2::from_shape_vec((rows, cols), data).expect("shape")
    };
    let depth = arch.len() - 2;
    let mut layers = Vec::with_capacity(depth);
    for i in 0..depth {
        let weight = draw(arch[i + 1], arch[i]);
        layers.push(Layer { weight, bias: Array1::zeros(arch[i + 1]) });
    }
    let head = draw(arch[depth + 1], arch[depth]);
    ReLUNetwork::new(layers, head)
}
