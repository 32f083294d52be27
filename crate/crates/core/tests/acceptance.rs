//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness (`harness = false`). The process exits
//! non-zero when a criterion fails for a reason the run cannot account for.

mod common;

use std::process::Command;
use std::time::Instant;

use lipcert::bnb::{lipmip, liplp, MipResult, MipStatus, SolveOptions};
use lipcert::estimators::{self, EstimatorOptions, Guarantee, Method};
use lipcert::interval::{fastlip, propagate, BackwardSeed, Hyperbox};
use lipcert::lp::{solve_lp, LpStatus, LpTolerances};
use lipcert::mip::LipschitzQuery;
use lipcert::network::{random_he, ReLUNetwork, ZeroRule};
use lipcert::norms::cross_norm_value;
use lipcert::oracle::{exact_lipschitz_bruteforce, OracleOptions};
use lipcert::reduction::{verify_reduction, verify_reduction_l1, Graph, MATCH_TOL};
use lipcert::rng::SplitMix64;
use lipcert::vector_ext::{lipmip_vector, pairwise_network, LinearNorm};
use lipcert::{InputNorm, OutputNorm};
use ndarray::{Array1, ArrayView1};

const ORACLE_REL_TOL: f64 = 1e-6;
const ORACLE_TIME_LIMIT_S: f64 = 120.0;
const REDUCTION_TIME_LIMIT_S: f64 = 300.0;
const AFFINE_TOL: f64 = 1e-9;
const ORDER_TOL: f64 = 1e-7;
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-3;
const CROSS_LP_TOL: f64 = 1e-8;
const CROSS_PAIR_TOL: f64 = 1e-7;
const IDENTITY_TOL: f64 = 1e-6;

enum Verdict {
    Pass,
    /// Failed; every failing instance matches the stated cause.
    Explained(String),
    Fail,
}

struct Outcome {
    verdict: Verdict,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(ok: bool, summary: String) -> Self {
        Self { verdict: if ok { Verdict::Pass } else { Verdict::Fail }, summary, details: Vec::new() }
    }
}

fn exact(net: &ReLUNetwork<f64>, dom: &Hyperbox<f64>, norm: InputNorm) -> MipResult<f64> {
    lipmip(net, &LipschitzQuery::scalar(dom.clone(), norm), &SolveOptions::default()).expect("lipmip runs")
}

fn oracle(net: &ReLUNetwork<f64>, dom: &Hyperbox<f64>, norm: InputNorm) -> f64 {
    exact_lipschitz_bruteforce(net, dom, norm, OutputNorm::Abs, &OracleOptions::default()).expect("oracle runs").value
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1.0)
}

fn criterion_1() -> Outcome {
    let dom = Hyperbox::unit(4);
    let inner = Hyperbox::new(Array1::from_elem(4, 1e-3), Array1::ones(4)).unwrap();
    let mut matched = 0;
    let mut worst_time = 0.0f64;
    let mut unexplained = Vec::new();
    let mut details = Vec::new();
    for seed in 0..20u64 {
        let net = random_he::<f64>(&[4, 8, 8, 1], seed).unwrap();
        let r = exact(&net, &dom, InputNorm::Linf);
        worst_time = worst_time.max(r.wall_time);
        let o = oracle(&net, &dom, InputNorm::Linf);
        if r.status == MipStatus::Exact && close(r.incumbent_value, o, ORACLE_REL_TOL) {
            matched += 1;
            continue;
        }
        // every kernel of a zero-bias network passes through the origin
        let at_origin = r.incumbent_point[..4].iter().all(|v| v.abs() <= 1e-9);
        let ri = exact(&net, &inner, InputNorm::Linf);
        let oi = oracle(&net, &inner, InputNorm::Linf);
        let inner_ok = ri.status == MipStatus::Exact && close(ri.incumbent_value, oi, ORACLE_REL_TOL);
        details.push(format!(
            "seed {seed}: lipmip {:.9} ({}) oracle {:.9} maximizer at origin: {at_origin}; on [1e-3,1]^4 lipmip {:.9} ({}) oracle {:.9}",
            r.incumbent_value,
            r.status.name(),
            o,
            ri.incumbent_value,
            ri.status.name(),
            oi
        ));
        if !(r.incumbent_value > o && at_origin && inner_ok) {
            unexplained.push(seed);
        }
    }
    let summary = format!(
        "oracle equivalence, 20 He nets [4,8,8,1] on [0,1]^4, L^inf: {matched}/20 within {ORACLE_REL_TOL:e} (slowest solve {worst_time:.1}s, limit {ORACLE_TIME_LIMIT_S}s)"
    );
    let mut out = Outcome::new(matched == 20 && worst_time <= ORACLE_TIME_LIMIT_S, summary);
    if matched < 20 && unexplained.is_empty() && worst_time <= ORACLE_TIME_LIMIT_S {
        out.verdict = Verdict::Explained(
            "zero-bias networks are not in general position at the origin, a corner of [0,1]^4 where every ReLU kernel meets; \
             LipMIP returns the sup over the chain-rule set there, which exceeds the region-interior sup, and agrees with the oracle once the origin is excluded"
                .into(),
        );
    } else if !unexplained.is_empty() {
        details.push(format!("unexplained seeds: {unexplained:?}"));
    }
    out.details = details;
    out
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut graphs: Vec<(String, Graph)> = vec![
        ("K3".into(), Graph::complete(3)),
        ("C5".into(), Graph::cycle(5).unwrap()),
        ("P3".into(), Graph::path(3)),
        ("Petersen".into(), Graph::petersen()),
        ("empty(5)".into(), Graph::empty(5)),
    ];
    for seed in 0..10u64 {
        let n = 4 + (seed as usize % 6);
        graphs.push((format!("G({n},0.5) seed {seed}"), Graph::random_gnp(n, 0.5, seed).unwrap()));
    }
    let opts = SolveOptions::default();
    let mut failures = Vec::new();
    let mut details = Vec::new();
    for (name, g) in &graphs {
        let r = verify_reduction(g, &opts).unwrap();
        details.push(format!("{name}: {} ({})", r.summary(), r.status.name()));
        if !r.matched {
            failures.push(name.clone());
        }
    }
    let l1_graphs = [("K3", Graph::complete(3)), ("P3", Graph::path(3)), ("empty(3)", Graph::empty(3))];
    for (name, g) in &l1_graphs {
        let r = verify_reduction_l1(g, &opts).unwrap();
        details.push(format!("{name} (l1): {}", r.summary()));
        if !r.matched {
            failures.push(format!("{name} (l1)"));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let mut out = Outcome::new(
        failures.is_empty() && elapsed <= REDUCTION_TIME_LIMIT_S,
        format!(
            "MIS reduction round trip: {}/{} graphs match within {MATCH_TOL:e} ({elapsed:.0}s, limit {REDUCTION_TIME_LIMIT_S}s)",
            graphs.len() + l1_graphs.len() - failures.len(),
            graphs.len() + l1_graphs.len()
        ),
    );
    out.details = details;
    out
}

fn criterion_3() -> Outcome {
    let mut rng = SplitMix64::new(2024);
    let mut bad = Vec::new();
    for k in 0..50 {
        let n = 1 + (k % 5);
        let w: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let l1: f64 = w.iter().map(|v| v.abs()).sum();
        let linf = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        // bias keeps the single neuron on over the unit cube
        let net = ReLUNetwork::affine_scalar(&w, l1 + rng.uniform(0.1, 1.0)).unwrap();
        let dom = Hyperbox::unit(n);
        for (norm, want) in [(InputNorm::Linf, l1), (InputNorm::L1, linf)] {
            let q = LipschitzQuery::scalar(dom.clone(), norm);
            let values = [
                ("lipmip", exact(&net, &dom, norm).incumbent_value),
                ("liplp", liplp(&net, &q, &LpTolerances::default()).unwrap()),
                ("fastlip", fastlip(&net, &dom, norm).unwrap()),
                ("oracle", oracle(&net, &dom, norm)),
            ];
            for (name, v) in values {
                if (v - want).abs() > AFFINE_TOL {
                    bad.push(format!("net {k} {norm:?} {name}: {v} vs {want}"));
                }
            }
        }
    }
    let mut out = Outcome::new(bad.is_empty(), format!("affine closed form, 50 nets x 2 norms x 4 methods: {} deviations above {AFFINE_TOL:e}", bad.len()));
    out.details = bad;
    out
}

fn criterion_4() -> Outcome {
    let opts = EstimatorOptions::default();
    let mut violations = Vec::new();
    let mut count = 0;
    let start = Instant::now();
    for arch in [vec![4usize, 8, 8, 1], vec![6, 10, 10, 1]] {
        for seed in 0..15u64 {
            count += 1;
            let net = random_he::<f64>(&arch, seed).unwrap();
            let dom = Hyperbox::unit(arch[0]);
            let recs = estimators::compare(&net, &dom, InputNorm::Linf, OutputNorm::Abs, &Method::ALL, &opts).unwrap();
            let v = |m: Method| recs.iter().find(|r| r.method == m).unwrap();
            let (rlb, nub, fl, lp, mip) = (v(Method::RandomLb), v(Method::NaiveUb), v(Method::FastLip), v(Method::LipLp), v(Method::LipMip));
            let tag = format!("{arch:?} seed {seed}");
            if mip.guarantee != Guarantee::Exact {
                violations.push(format!("{tag}: lipmip not exact"));
            }
            let chain = [(rlb.value, mip.value, "randomlb <= lipmip"), (mip.value, lp.value, "lipmip <= liplp"), (lp.value, fl.value, "liplp <= fastlip"), (mip.value, nub.value, "lipmip <= naiveub")];
            for (a, b, what) in chain {
                if a > b + ORDER_TOL {
                    violations.push(format!("{tag}: {what} violated ({a} > {b})"));
                }
            }
            for r in &recs {
                let e = r.rel_err.unwrap();
                let sign_ok = match r.guarantee {
                    Guarantee::LowerBound => e <= ORDER_TOL,
                    Guarantee::UpperBound | Guarantee::GappedUpper(_) => e >= -ORDER_TOL,
                    Guarantee::Exact => e.abs() <= ORDER_TOL,
                };
                if !sign_ok {
                    violations.push(format!("{tag}: {} rel_err {e} has the wrong sign", r.method.name()));
                }
            }
        }
    }
    let mut out = Outcome::new(
        violations.is_empty(),
        format!("estimator ordering on {count} nets: {} violations ({:.0}s)", violations.len(), start.elapsed().as_secs_f64()),
    );
    out.details = violations;
    out
}

fn criterion_5() -> Outcome {
    let mut bad = Vec::new();
    for seed in 0..10u64 {
        let net = random_he::<f64>(&[4, 8, 8, 1], 100 + seed).unwrap();
        let q = LipschitzQuery::scalar(Hyperbox::unit(4), InputNorm::Linf);
        let truth = lipmip(&net, &q, &SolveOptions::default()).unwrap().incumbent_value;
        let mut previous = f64::INFINITY;
        for gap in [1.0, 0.1, 0.01] {
            let r = lipmip(&net, &q, &SolveOptions::default().with_gap(gap)).unwrap();
            let (inc, ub) = (r.incumbent_value, r.upper_bound);
            let tol = ORDER_TOL * truth.max(1.0);
            if !(inc <= truth + tol && truth <= ub + tol && ub <= (1.0 + gap) * inc + tol) {
                bad.push(format!("seed {seed} gap {gap}: incumbent {inc} exact {truth} upper {ub}"));
            }
            if ub > previous + tol {
                bad.push(format!("seed {seed} gap {gap}: upper bound {ub} looser than {previous}"));
            }
            previous = ub;
        }
        if truth > previous + ORDER_TOL * truth.max(1.0) {
            bad.push(format!("seed {seed}: exact value above the 1% bound"));
        }
    }
    let mut out = Outcome::new(bad.is_empty(), format!("gap contract, 10 nets [4,8,8,1] x gaps 1.0/0.1/0.01: {} violations", bad.len()));
    out.details = bad;
    out
}

fn criterion_6() -> Outcome {
    let net = ReLUNetwork::<f64>::identity(2.0);
    let dom = Hyperbox::new(Array1::from(vec![-1.0]), Array1::from(vec![1.0])).unwrap();
    let mip = exact(&net, &dom, InputNorm::Linf).incumbent_value;
    let orc = oracle(&net, &dom, InputNorm::Linf);
    Outcome::new(
        (mip - 2.0).abs() <= IDENTITY_TOL && (orc - 1.0).abs() <= IDENTITY_TOL,
        format!("chain-rule counterexample on the identity net over [-1,1]: lipmip {mip:.9} (want 2), oracle {orc:.9} (want 1)"),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = SplitMix64::new(77);
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut bad = Vec::new();
    while checked < 1000 {
        let n0 = 1 + rng.below(5) as usize;
        let depth = 1 + rng.below(3) as usize;
        let mut arch = vec![n0];
        arch.extend((0..depth).map(|_| 2 + rng.below(8) as usize));
        arch.push(1 + rng.below(3) as usize);
        let net = random_he::<f64>(&arch, rng.next_u64()).unwrap();
        let x = Array1::from_iter((0..n0).map(|_| rng.uniform(-1.0, 1.0)));
        // a pre-activation this close to zero could change sign within one step
        if common::min_abs_preactivation(&net, &x) <= 1e-3 {
            skipped += 1;
            continue;
        }
        checked += 1;
        let j = net.chain_rule_jacobian(x.view(), &ZeroRule::AlwaysZero).unwrap();
        let fd = common::finite_difference_jacobian(&net, &x, FD_STEP);
        let diff = (&j - &fd).mapv(|v| v * v).sum().sqrt();
        let scale = j.mapv(|v| v * v).sum().sqrt();
        let rel = if scale > 0.0 { diff / scale } else { diff };
        worst = worst.max(rel);
        if rel > FD_REL_TOL {
            bad.push(format!("arch {arch:?}: relative error {rel}"));
        }
    }
    let mut out = Outcome::new(
        bad.is_empty(),
        format!("gradient vs central differences (step {FD_STEP:e}), {checked} samples: worst relative error {worst:.2e} ({skipped} near-tie points skipped)"),
    );
    out.details = bad;
    out
}

fn criterion_8() -> Outcome {
    let archs: [&[usize]; 10] =
        [&[2, 6, 6, 1], &[3, 8, 8, 1], &[4, 6, 6, 6, 1], &[3, 10, 1], &[5, 8, 8, 1], &[2, 4, 4, 4, 4, 1], &[4, 12, 1], &[3, 5, 5, 1], &[6, 8, 8, 1], &[4, 7, 7, 1]];
    let mut rng = SplitMix64::new(8);
    let mut bad = Vec::new();
    for (k, arch) in archs.iter().enumerate() {
        let net = random_he::<f64>(arch, 300 + k as u64).unwrap();
        let c = Array1::from_iter((0..arch[0]).map(|_| rng.uniform(-0.5, 0.5)));
        let dom = Hyperbox::cube(c.view(), 0.4).unwrap();
        let prop = propagate(&net, &dom, &BackwardSeed::Head).unwrap();
        for _ in 0..10_000 {
            let x = common::uniform_point(&mut rng, &dom.lo, &dom.hi);
            let t = net.forward_trace(x.view()).unwrap();
            let pre_ok = t.pre_activations.iter().zip(&prop.pre_activation_boxes).all(|(z, b)| b.contains(z.view(), 1e-12));
            let grad_ok = [ZeroRule::AlwaysZero, ZeroRule::AlwaysOne]
                .iter()
                .all(|rule| prop.gradient_box().contains(net.chain_rule_jacobian(x.view(), rule).unwrap().row(0), 1e-12));
            if !(pre_ok && grad_ok) {
                bad.push(format!("net {k}: sample outside the propagated boxes"));
                break;
            }
        }
        for norm in [InputNorm::Linf, InputNorm::L1] {
            let fl = fastlip(&net, &dom, norm).unwrap();
            let o = oracle(&net, &dom, norm);
            if fl < o - 1e-9 {
                bad.push(format!("net {k} {norm:?}: fastlip {fl} below oracle {o}"));
            }
        }
    }
    let mut out = Outcome::new(bad.is_empty(), format!("interval soundness, 10 nets x 10^4 samples, fastlip >= oracle: {} violations", bad.len()));
    out.details = bad;
    out
}

fn criterion_9() -> Outcome {
    let mut bad = Vec::new();
    let opts = SolveOptions::default();
    for (arch, seeds) in [([3usize, 6, 2], 0..5u64), ([3, 6, 3], 0..5)] {
        for seed in seeds {
            let net = random_he::<f64>(&arch, 500 + seed).unwrap();
            let dom = Hyperbox::unit(3);
            let cross = lipmip_vector(&net, &dom, InputNorm::Linf, LinearNorm::CrossNorm, &opts).unwrap().incumbent_value;
            let m = arch[2];
            let mut pair_max = 0.0f64;
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        pair_max = pair_max.max(exact(&pairwise_network(&net, i, j).unwrap(), &dom, InputNorm::Linf).incumbent_value);
                    }
                }
            }
            if cross < pair_max - CROSS_PAIR_TOL {
                bad.push(format!("{arch:?} seed {seed}: cross {cross} below pairwise max {pair_max}"));
            }
        }
    }
    let mut rng = SplitMix64::new(99);
    for k in 0..100 {
        let m = 2 + k % 5;
        let v: Vec<f64> = (0..m).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let lp = common::cross_polytope_lp(&v, |p| {
            let s = solve_lp(p, &LpTolerances::default()).unwrap();
            (s.status == LpStatus::Optimal).then_some(s.objective_value)
        });
        let direct = cross_norm_value(ArrayView1::from(&v));
        if (lp - direct).abs() > CROSS_LP_TOL {
            bad.push(format!("vector {k}: generator max {direct} vs LP {lp}"));
        }
    }
    let mut out = Outcome::new(bad.is_empty(), format!("cross-norm properties, 10 nets and 100 vectors: {} violations", bad.len()));
    out.details = bad;
    out
}

fn run_twice(args: &[String], artifact: Option<&std::path::Path>) -> (bool, String) {
    let mut results = Vec::new();
    for _ in 0..2 {
        if let Some(p) = artifact {
            let _ = std::fs::remove_file(p);
        }
        let o = Command::new(env!("CARGO_BIN_EXE_lipcert")).args(args).arg("--threads").arg("1").output().unwrap();
        let bytes = match artifact {
            Some(p) => std::fs::read(p).unwrap_or_default(),
            None => o.stdout,
        };
        results.push((o.status.code(), bytes));
    }
    let ok = results[0] == results[1] && results[0].0 == Some(0) && !results[0].1.is_empty();
    (ok, args[0].clone())
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let s = |path: std::path::PathBuf| path.to_string_lossy().into_owned();
    let net = s(p("net.json"));
    let csv = p("out.csv");
    let graph = common::fixture("k3.txt");
    let owned = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let runs: Vec<(Vec<String>, Option<std::path::PathBuf>)> = vec![
        (owned(&["gen", "--arch", "4,8,8,1", "--seed", "7", "--out", &net]), Some(p("net.json"))),
        (owned(&["estimate", "--net", &net, "--method", "lipmip", "--out-csv", &s(csv.clone())]), Some(csv.clone())),
        (owned(&["estimate", "--net", &net, "--method", "randomlb", "--seed", "5", "--out-csv", &s(csv.clone())]), Some(csv.clone())),
        (owned(&["compare", "--net", &net, "--seed", "5", "--out-csv", &s(csv.clone())]), Some(csv.clone())),
        (owned(&["compare", "--net", &net, "--gap", "0.1", "--out-csv", &s(csv.clone())]), Some(csv.clone())),
        (owned(&["oracle", "--net", &net]), None),
        (owned(&["reduce", "--graph", &graph, "--check"]), None),
        (owned(&["reduce", "--graph", &graph, "--out", &s(p("k3.json"))]), Some(p("k3.json"))),
    ];
    let mut bad = Vec::new();
    for (i, (args, artifact)) in runs.iter().enumerate() {
        // the network must exist before the later commands run
        if i == 1 {
            let _ = Command::new(env!("CARGO_BIN_EXE_lipcert")).args(&runs[0].0).output();
        }
        let (ok, name) = run_twice(args, artifact.as_deref());
        if !ok {
            bad.push(format!("{name}: outputs differ between runs ({})", args.join(" ")));
        }
    }
    let mut out = Outcome::new(bad.is_empty(), format!("determinism, {} commands run twice with --threads 1: {} differ", runs.len(), bad.len()));
    out.details = bad;
    out
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
        ("9", criterion_9),
        ("10", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let verbose = std::env::var_os("ACCEPTANCE_VERBOSE").is_some();
    let (mut passed, mut explained, mut failed) = (0, 0, 0);
    for (id, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|a| a == id) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        let tag = match o.verdict {
            Verdict::Pass => "PASS",
            _ => "FAIL",
        };
        println!("[{tag}] criterion {id:>2}: {} [{secs:.1}s]", o.summary);
        match &o.verdict {
            Verdict::Pass => passed += 1,
            Verdict::Explained(why) => {
                explained += 1;
                println!("        cause: {why}");
            }
            Verdict::Fail => failed += 1,
        }
        if verbose || !matches!(o.verdict, Verdict::Pass) {
            for d in &o.details {
                println!("        {d}");
            }
        }
    }
    println!("acceptance: {passed} passed, {} failed ({explained} with an identified cause)", explained + failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

