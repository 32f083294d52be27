//! Command-line front end.
//!
//! [`run`] parses arguments, dispatches to a subcommand and returns the
//! process exit code: 0 on success, 1 on other failures, 2 on input errors,
//! 3 when a solve stopped early with valid bounds, 4 when a request exceeds
//! a capability limit.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;

use crate::bnb::{MipStatus, SolveOptions};
use crate::error::{Error, Result};
use crate::estimators::{self, EstimateRecord, EstimatorOptions, Method, CSV_HEADER};
use crate::interval::Hyperbox;
use crate::network::{random_he, ReLUNetwork};
use crate::norms::{InputNorm, OutputNorm};
use crate::oracle::{exact_lipschitz_bruteforce, OracleOptions, DEFAULT_NEURON_CAP};
use crate::reduction::{build_mis_network, build_mis_network_l1, verify_reduction, verify_reduction_l1, Graph};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_TIMEOUT: i32 = 3;
pub const EXIT_CAPABILITY: i32 = 4;

/// Input domain as written on the command line.
///
/// `cube:C,R` is the box of radius `R` around `C`; `box:L,U` has corners `L`
/// and `U`. A single number for `C`, `L` or `U` is broadcast to every input
/// coordinate; otherwise the components are listed in order, e.g.
/// `cube:0.1,0.2,0.05` or `box:0,0,1,2`.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Cube { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

fn parse_numbers(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse(format!("'{t}' is not a finite number")))
        })
        .collect()
}

impl FromStr for DomainSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("domain '{s}' must look like cube:C,R or box:L,U")))?;
        let nums = parse_numbers(rest)?;
        match kind.trim().to_ascii_lowercase().as_str() {
            "cube" => {
                if nums.len() < 2 {
                    return Err(Error::Parse(format!("cube domain '{s}' needs a center and a radius")));
                }
                let radius = nums[nums.len() - 1];
                if radius <= 0.0 {
                    return Err(Error::Input(format!("cube radius must be positive, got {radius}")));
                }
                Ok(DomainSpec::Cube { center: nums[..nums.len() - 1].to_vec(), radius })
            }
            "box" => {
                if nums.len() < 2 || nums.len() % 2 != 0 {
                    return Err(Error::Parse(format!("box domain '{s}' needs as many lower as upper values")));
                }
                let (lo, hi) = nums.split_at(nums.len() / 2);
                if lo.iter().zip(hi).any(|(l, u)| l > u) {
                    return Err(Error::Input(format!("box domain '{s}' has a lower corner above the upper one")));
                }
                Ok(DomainSpec::Box { lo: lo.to_vec(), hi: hi.to_vec() })
            }
            other => Err(Error::Parse(format!("unknown domain kind '{other}' (expected cube or box)"))),
        }
    }
}

fn broadcast(v: &[f64], dim: usize, what: &str) -> Result<Array1<f64>> {
    match v.len() {
        1 => Ok(Array1::from_elem(dim, v[0])),
        n if n == dim => Ok(Array1::from(v.to_vec())),
        n => Err(Error::Dimension(format!("domain {what} has {n} components, network expects {dim}"))),
    }
}

impl DomainSpec {
    pub fn resolve(&self, dim: usize) -> Result<Hyperbox<f64>> {
        match self {
            DomainSpec::Cube { center, radius } => Hyperbox::cube(broadcast(center, dim, "center")?.view(), *radius),
            DomainSpec::Box { lo, hi } => Hyperbox::new(broadcast(lo, dim, "lower corner")?, broadcast(hi, dim, "upper corner")?),
        }
    }
}

fn parse_arch(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<usize>()
                .map_err(|_| Error::Parse(format!("architecture '{s}': '{t}' is not a layer size")))
        })
        .collect()
}

#[derive(Debug, Parser)]
#[command(name = "lipcert", version, about = "Exact and certified local Lipschitz constants of ReLU networks")]
pub struct Cli {
    /// Worker threads for branch and bound; 1 is deterministic.
    #[arg(long, global = true, env = "LIPCERT_THREADS", default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a He-initialized network with zero biases.
    Gen {
        /// Layer sizes, input first, e.g. 2,4,1.
        #[arg(long)]
        arch: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one estimator.
    Estimate {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, default_value = "lipmip")]
        method: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run several estimators and report errors relative to LipMIP.
    Compare {
        #[command(flatten)]
        query: QueryArgs,
        /// Comma-separated method names.
        #[arg(long, default_value = "randomlb,naiveub,fastlip,liplp,lipmip")]
        methods: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Exact value by enumerating linear regions (small networks only).
    Oracle {
        #[command(flatten)]
        query: QueryArgs,
        /// Refuse networks with more hidden neurons than this.
        #[arg(long, default_value_t = DEFAULT_NEURON_CAP)]
        neuron_cap: usize,
    },
    /// Build the independent-set network of a graph, or check it against brute force.
    Reduce {
        #[arg(long)]
        graph: PathBuf,
        /// Write the network here.
        #[arg(long, required_unless_present = "check")]
        out: Option<PathBuf>,
        /// Solve LipMIP on the network and compare with the exact independence number.
        #[arg(long)]
        check: bool,
        /// `linf` for the L^inf network, `l1` for the L^1 network.
        #[arg(long, default_value = "linf")]
        norm: String,
        #[arg(long)]
        timeout: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub net: PathBuf,
    /// cube:C,R or box:L,U.
    #[arg(long, default_value = "box:0,1")]
    pub domain: String,
    /// Input norm: linf or l1.
    #[arg(long, default_value = "linf")]
    pub norm: String,
    /// Output norm: abs, l1, linf or cross. Defaults to abs for scalar networks
    /// and linf otherwise.
    #[arg(long)]
    pub output_norm: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Relative integrality gap at which LipMIP may stop.
    #[arg(long, default_value_t = 0.0)]
    pub gap: f64,
    /// Seconds before LipMIP stops with its current bounds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Append rows to this CSV file, writing the header if it is new.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// Fill the time_s column; without it rows are reproducible byte for byte.
    #[arg(long)]
    pub timing: bool,
}

struct Query {
    net: ReLUNetwork<f64>,
    domain: Hyperbox<f64>,
    input: InputNorm,
    output: OutputNorm,
}

impl QueryArgs {
    fn load(&self) -> Result<Query> {
        let net = ReLUNetwork::<f64>::load(&self.net)?;
        let domain = self.domain.parse::<DomainSpec>()?.resolve(net.input_dim())?;
        let input = self.norm.parse()?;
        let output = match &self.output_norm {
            Some(s) => s.parse()?,
            None if net.output_dim() == 1 => OutputNorm::Abs,
            None => OutputNorm::Linf,
        };
        Ok(Query { net, domain, input, output })
    }
}

fn solve_options(threads: usize, gap: f64, timeout: Option<f64>) -> Result<SolveOptions> {
    if !(gap >= 0.0 && gap.is_finite()) {
        return Err(Error::Input(format!("gap must be a non-negative number, got {gap}")));
    }
    if timeout.is_some_and(|t| !(t > 0.0)) {
        return Err(Error::Input("timeout must be positive".into()));
    }
    if threads == 0 {
        return Err(Error::Input("threads must be at least 1".into()));
    }
    let mut opts = SolveOptions::default().with_gap(gap);
    opts.timeout_seconds = timeout.unwrap_or(f64::INFINITY);
    opts.threads = threads;
    opts.deterministic = threads == 1;
    Ok(opts)
}

impl RunArgs {
    fn options(&self, threads: usize) -> Result<EstimatorOptions> {
        Ok(EstimatorOptions { samples: self.samples, seed: self.seed, solve: solve_options(threads, self.gap, self.timeout)? })
    }
}

fn append_csv(path: &Path, records: &[EstimateRecord], with_time: bool) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{CSV_HEADER}")?;
    }
    for r in records {
        writeln!(f, "{}", r.csv_row(with_time))?;
    }
    Ok(())
}

fn print_record(out: &mut dyn Write, r: &EstimateRecord, with_time: bool) -> Result<()> {
    writeln!(out, "method: {}", r.method.name())?;
    writeln!(out, "value: {}", r.value)?;
    writeln!(out, "guarantee: {}", r.guarantee.name())?;
    if let Some(g) = r.guarantee.gap() {
        writeln!(out, "gap: {g}")?;
    }
    if let Some(s) = r.status {
        writeln!(out, "status: {}", s.name())?;
    }
    if let Some(l) = r.lower {
        writeln!(out, "lower: {l}")?;
        writeln!(out, "upper: {}", r.value)?;
    }
    if let Some(n) = r.nodes {
        writeln!(out, "nodes: {n}")?;
    }
    if let Some(n) = r.samples {
        writeln!(out, "samples: {n}")?;
    }
    if with_time {
        writeln!(out, "time_s: {:.6}", r.wall_time_seconds)?;
    }
    Ok(())
}

fn exit_for(recs: &[EstimateRecord]) -> i32 {
    if recs.iter().any(|r| r.status == Some(MipStatus::NumericalFailure)) {
        EXIT_FAILURE
    } else if recs.iter().any(EstimateRecord::timed_out) {
        EXIT_TIMEOUT
    } else {
        EXIT_OK
    }
}

fn cmd_gen(out: &mut dyn Write, arch: &str, seed: u64, path: &Path) -> Result<i32> {
    let arch = parse_arch(arch)?;
    let net = random_he::<f64>(&arch, seed)?;
    net.save(path)?;
    writeln!(out, "wrote {} ({} hidden neurons)", path.display(), net.total_neurons())?;
    for (i, l) in net.layers().iter().enumerate() {
        writeln!(out, "layer {}: {}x{}", i + 1, l.weight.nrows(), l.weight.ncols())?;
    }
    writeln!(out, "head: {}x{}", net.head().nrows(), net.head().ncols())?;
    Ok(EXIT_OK)
}

fn cmd_estimate(out: &mut dyn Write, threads: usize, q: &QueryArgs, method: &str, run: &RunArgs) -> Result<i32> {
    let method: Method = method.parse()?;
    let query = q.load()?;
    let opts = run.options(threads)?;
    let rec = estimators::estimate(&query.net, &query.domain, query.input, query.output, method, &opts)?;
    print_record(out, &rec, run.timing)?;
    if let Some(p) = &run.out_csv {
        append_csv(p, std::slice::from_ref(&rec), run.timing)?;
    }
    Ok(exit_for(std::slice::from_ref(&rec)))
}

fn cmd_compare(out: &mut dyn Write, threads: usize, q: &QueryArgs, methods: &str, run: &RunArgs) -> Result<i32> {
    let methods = estimators::parse_methods(methods)?;
    let query = q.load()?;
    let opts = run.options(threads)?;
    let recs = estimators::compare(&query.net, &query.domain, query.input, query.output, &methods, &opts)?;
    out.write_all(estimators::to_csv(&recs, run.timing).as_bytes())?;
    if let Some(p) = &run.out_csv {
        append_csv(p, &recs, run.timing)?;
    }
    Ok(exit_for(&recs))
}

fn cmd_oracle(out: &mut dyn Write, q: &QueryArgs, neuron_cap: usize) -> Result<i32> {
    let query = q.load()?;
    let opts = OracleOptions { neuron_cap, ..OracleOptions::default() };
    let r = exact_lipschitz_bruteforce(&query.net, &query.domain, query.input, query.output, &opts)?;
    writeln!(out, "value: {}", r.value)?;
    writeln!(out, "regions: {}", r.regions)?;
    if let Some(best) = &r.best {
        let w: Vec<String> = best.witness.iter().map(|v| v.to_string()).collect();
        writeln!(out, "witness: {}", w.join(","))?;
    }
    Ok(EXIT_OK)
}

fn cmd_reduce(
    out: &mut dyn Write,
    threads: usize,
    graph: &Path,
    dest: Option<&Path>,
    check: bool,
    norm: &str,
    timeout: Option<f64>,
) -> Result<i32> {
    let g = Graph::load(graph)?;
    let norm: InputNorm = norm.parse()?;
    if let Some(p) = dest {
        let net = match norm {
            InputNorm::Linf => build_mis_network(&g, None)?,
            InputNorm::L1 => build_mis_network_l1(&g, None)?,
        };
        net.save(p)?;
        writeln!(out, "wrote {} ({} vertices, {} edges)", p.display(), g.n(), g.num_edges())?;
    }
    if !check {
        return Ok(EXIT_OK);
    }
    let opts = solve_options(threads, 0.0, timeout)?;
    let report = match norm {
        InputNorm::Linf => verify_reduction(&g, &opts)?,
        InputNorm::L1 => verify_reduction_l1(&g, &opts)?,
    };
    writeln!(out, "{}", report.summary())?;
    Ok(match report.status {
        MipStatus::Timeout | MipStatus::NodeLimit => EXIT_TIMEOUT,
        _ if report.matched => EXIT_OK,
        _ => EXIT_FAILURE,
    })
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Input(_) | Error::Parse(_) | Error::Dimension(_) | Error::Io(_) => EXIT_INPUT,
        Error::Capability(_) => EXIT_CAPABILITY,
        Error::Model(_) => EXIT_FAILURE,
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let threads = cli.threads;
    match &cli.command {
        Command::Gen { arch, seed, out: path } => cmd_gen(out, arch, *seed, path),
        Command::Estimate { query, method, run } => cmd_estimate(out, threads, query, method, run),
        Command::Compare { query, methods, run } => cmd_compare(out, threads, query, methods, run),
        Command::Oracle { query, neuron_cap } => cmd_oracle(out, query, *neuron_cap),
        Command::Reduce { graph, out: dest, check, norm, timeout } => {
            cmd_reduce(out, threads, graph, dest.as_deref(), *check, norm, *timeout)
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_grammar() {
        let d: DomainSpec = "cube:0,1".parse().unwrap();
        let b = d.resolve(2).unwrap();
        assert_eq!(b.lo.to_vec(), vec![-1.0, -1.0]);
        assert_eq!(b.hi.to_vec(), vec![1.0, 1.0]);
        let d: DomainSpec = "cube:0.5,1.5,0.25".parse().unwrap();
        assert_eq!(d.resolve(2).unwrap().lo.to_vec(), vec![0.25, 1.25]);
        assert!(d.resolve(3).is_err());
        let d: DomainSpec = "box:0,-1,1,2".parse().unwrap();
        let b = d.resolve(2).unwrap();
        assert_eq!((b.lo.to_vec(), b.hi.to_vec()), (vec![0.0, -1.0], vec![1.0, 2.0]));
        for bad in ["cube:1", "cube:0,0", "box:1,0", "box:0,1,2", "ball:0,1", "cube:0,x", "nope"] {
            assert!(bad.parse::<DomainSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn arch_parsing() {
        assert_eq!(parse_arch("2, 4,1").unwrap(), vec![2, 4, 1]);
        assert!(matches!(parse_arch("2,,1"), Err(Error::Parse(_))));
    }

    #[test]
    fn usage_errors_exit_with_input_code() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(run(["lipcert", "frobnicate"], &mut out, &mut err), EXIT_INPUT);
        assert_eq!(run(["lipcert", "gen", "--arch", "2,,1", "--out", "/nonexistent/x.json"], &mut out, &mut err), EXIT_INPUT);
        assert!(String::from_utf8(err).unwrap().contains("parse error"));
    }
}
