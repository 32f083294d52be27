#![allow(dead_code)]

use lipcert::lp::{LpProblem, Relation};
use lipcert::network::{random_he, Layer, ReLUNetwork};
use lipcert::rng::SplitMix64;
use ndarray::{Array1, Array2};

pub fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// He network with biases drawn uniformly from `[-0.5, 0.5]`, which puts it
/// in general position almost surely.
pub fn biased_network(arch: &[usize], seed: u64) -> ReLUNetwork<f64> {
    let net = random_he::<f64>(arch, seed).unwrap();
    let mut rng = SplitMix64::new(seed ^ 0xb1a5);
    let layers = net
        .layers()
        .iter()
        .map(|l| Layer { weight: l.weight.clone(), bias: l.bias.mapv(|_| rng.uniform(-0.5, 0.5)) })
        .collect();
    ReLUNetwork::new(layers, net.head().clone()).unwrap()
}

pub fn uniform_point(rng: &mut SplitMix64, lo: &Array1<f64>, hi: &Array1<f64>) -> Array1<f64> {
    Array1::from_iter(lo.iter().zip(hi).map(|(&l, &h)| rng.uniform(l, h)))
}

/// Central finite-difference Jacobian of `net` at `x`.
pub fn finite_difference_jacobian(net: &ReLUNetwork<f64>, x: &Array1<f64>, h: f64) -> Array2<f64> {
    let n = x.len();
    let m = net.output_dim();
    let mut jac = Array2::zeros((m, n));
    for k in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let d = (net.forward(xp.view()).unwrap() - net.forward(xm.view()).unwrap()) / (2.0 * h);
        jac.column_mut(k).assign(&d);
    }
    jac
}

/// Smallest `|z|` over every hidden pre-activation at `x`.
pub fn min_abs_preactivation(net: &ReLUNetwork<f64>, x: &Array1<f64>) -> f64 {
    let t = net.forward_trace(x.view()).unwrap();
    t.pre_activations.iter().flatten().fold(f64::INFINITY, |a, v| a.min(v.abs()))
}

fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                if f != 0.0 {
                    for k in c..n {
                        a[r][k] -= f * a[c][k];
                    }
                    b[r] -= f * b[c];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn combinations(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), f);
}

/// Optimum of a bounded LP by enumerating every basic solution; `None` when
/// no vertex is feasible.
pub fn lp_vertex_enumeration(p: &LpProblem<f64>, tol: f64) -> Option<f64> {
    let n = p.num_vars();
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in &p.rows {
        let mut a = vec![0.0; n];
        for &(j, c) in &row.coeffs {
            a[j] = c;
        }
        planes.push((a, row.rhs));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), p.lo[j]));
        planes.push((e, p.hi[j]));
    }
    let mut best: Option<f64> = None;
    combinations(planes.len(), n, &mut |idx| {
        let a = idx.iter().map(|&i| planes[i].0.clone()).collect();
        let b = idx.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = solve_square(a, b) {
            if p.max_violation(&x) <= tol {
                let v = p.objective_at(&x);
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
    });
    best
}

/// `max |y^T v|` over `{p - q : p, q >= 0, sum p <= 1, sum q <= 1, sum p >= sum q}`.
pub fn cross_polytope_lp(v: &[f64], solve: impl Fn(&LpProblem<f64>) -> Option<f64>) -> f64 {
    let m = v.len();
    let all_p: Vec<(usize, f64)> = (0..m).map(|i| (i, 1.0)).collect();
    let all_q: Vec<(usize, f64)> = (0..m).map(|i| (m + i, 1.0)).collect();
    let mut diff = all_p.clone();
    diff.extend(all_q.iter().map(|&(j, _)| (j, -1.0)));
    let rows = vec![
        lipcert::lp::LpRow { coeffs: all_p, rel: Relation::Le, rhs: 1.0 },
        lipcert::lp::LpRow { coeffs: all_q, rel: Relation::Le, rhs: 1.0 },
        lipcert::lp::LpRow { coeffs: diff, rel: Relation::Ge, rhs: 0.0 },
    ];
    let mut best = f64::NEG_INFINITY;
    for sign in [1.0, -1.0] {
        let mut objective: Vec<f64> = v.iter().map(|x| sign * x).collect();
        objective.extend(v.iter().map(|x| -sign * x));
        let p = LpProblem { objective, lo: vec![0.0; 2 * m], hi: vec![1.0; 2 * m], rows: rows.clone() };
        best = best.max(solve(&p).expect("the polytope contains 0"));
    }
    best
}
