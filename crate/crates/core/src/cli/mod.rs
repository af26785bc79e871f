//! The `submult` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 a requested
//! assertion or property check failed (the report is still written).

pub mod verify;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::BigRational;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::asm::{
    decimal12, measure_asm, measure_asm_sampled, measure_sub_sampled, AsmReport, PairSource,
    SampledPair,
};
use crate::circle::{format_ratio, parse_ratio, UnitPoint};
use crate::constructions::{
    case4_witness, cycle_matrix, miller_moreno, q8_generators, q_set, random_det_one_diagonal,
    sr_sample, tadpole, tadpole_generators, tadpole_mul, LambdaMode, MillerMorenoParams,
    QSetParams, SrParams, SrSampler, TadpoleSampler,
};
use crate::error::{Error, Result};
use crate::groups::{close_with, ClosureDoc, ClosureOptions, GroupClosure};
use crate::linalg::UMatrix;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_VIOLATION: u8 = 2;

/// Environment variable for the default worker count.
pub const WORKERS_ENV: &str = "SUBMULT_WORKERS";

/// Closures with at most this many ordered pairs are measured exhaustively.
pub const EXHAUSTIVE_PAIR_BUDGET: u64 = 1_000_000;
pub const DEFAULT_SAMPLES: u64 = 10_000;
/// `qset` refuses to scan past this without an explicit `--q-max`.
pub const QSET_SCAN_LIMIT: u64 = 1_000_000;

#[derive(Parser, Debug)]
#[command(name = "submult", version, about = "Spectral submultiplicativity of matrix groups and semigroups")]
pub struct Cli {
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Measure ε* for a builtin construction or a group file
    Measure(MeasureArgs),
    /// Enumerate the prime set Q(p)
    Qset(QsetArgs),
    /// Run a named property suite
    Verify(VerifyArgs),
    /// Turn a measurement report into CSV of unit-circle points
    Plotdata(PlotArgs),
    /// Emit a construction's matrices as JSON
    Build(BuildArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Human,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write to this file instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Omit the timestamp so repeated runs are byte-identical
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    Tadpole,
    MillerMoreno,
    Q8,
    Cyclic,
    Sr,
}

#[derive(Args, Debug)]
pub struct MeasureArgs {
    #[arg(long, value_enum, conflicts_with_all = ["group", "pair"], required_unless_present_any = ["group", "pair"])]
    pub builtin: Option<Builtin>,
    /// JSON closure document (`{"generators": [...]}`)
    #[arg(long, conflicts_with = "pair")]
    pub group: Option<PathBuf>,
    /// JSON object with matrices `a` and `b` (as written by `build case4`)
    #[arg(long)]
    pub pair: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub p: u64,
    #[arg(long, default_value_t = 7)]
    pub q: u64,
    /// Order of β₁ for miller-moreno
    #[arg(long, default_value_t = 1)]
    pub beta_order: u64,
    /// Radius for sr
    #[arg(long, default_value_t = 0.5)]
    pub r: f64,
    /// Matrix dimension for sr
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    /// Sample this many pairs instead of enumerating
    #[arg(long)]
    pub pairs: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tadpole weights as exact multiples of 1/N instead of real angles
    #[arg(long)]
    pub exact_den: Option<u64>,
    /// Exit 2 if ε* exceeds this value
    #[arg(long)]
    pub assert_le: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub max_elements: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct QsetArgs {
    #[arg(long)]
    pub p: u64,
    /// ε_p as a rational "n/d" in (0, 1/(2p))
    #[arg(long, required_unless_present = "delta", conflicts_with = "delta")]
    pub epsilon: Option<String>,
    /// δ_p = 1/(2p) - ε_p as a rational "n/d"
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long)]
    pub q_max: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    LemmaSpectrum,
    TadpoleClosure,
    TadpoleBound,
    MmGap,
    SrBound,
    Conversions,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    #[arg(long)]
    pub p: Option<u64>,
    #[arg(long)]
    pub q: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub beta_order: u64,
    #[arg(long, default_value_t = 100)]
    pub trials: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub pairs: u64,
    #[arg(long, default_value_t = 100_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0.5)]
    pub r: f64,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub max_elements: usize,
    /// Override the suite tolerance (lemma-spectrum, tadpole-bound,
    /// sr-bound, conversions)
    #[arg(long, allow_negative_numbers = true)]
    pub tolerance: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Report written by `measure`
    pub report: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Construction {
    Tadpole,
    MillerMoreno,
    Q8,
    Cyclic,
    Case4,
    Sr,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[arg(value_enum)]
    pub construction: Construction,
    #[arg(long, default_value_t = 3)]
    pub p: u64,
    #[arg(long, default_value_t = 7)]
    pub q: u64,
    #[arg(long, default_value_t = 1)]
    pub beta_order: u64,
    /// Head shift of A for case4
    #[arg(long, default_value_t = 1)]
    pub k: u64,
    #[arg(long, default_value_t = 0.5)]
    pub r: f64,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Close the generators and record the element count
    #[arg(long)]
    pub closure: bool,
    #[arg(long, default_value_t = 100_000)]
    pub max_elements: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

pub fn run(cli: Cli) -> Result<u8> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::InvalidParams("--workers must be at least 1".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Measure(a) => cmd_measure(&a),
        Command::Qset(a) => cmd_qset(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Plotdata(a) => cmd_plotdata(&a),
        Command::Build(a) => cmd_build(&a),
    })
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Error::InvalidParams(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn read_file(path: &PathBuf) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))
}

// ---- measure -------------------------------------------------------------

/// Uniformly random ordered pairs from a closure.
struct RandomClosurePairs<'a>(&'a GroupClosure);

impl PairSource for RandomClosurePairs<'_> {
    fn pair(&self, _index: u64, rng: &mut ChaCha8Rng) -> Result<SampledPair> {
        let n = self.0.len();
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        Ok(SampledPair {
            a: self.0.elements[i].clone(),
            b: self.0.elements[j].clone(),
            label_a: json!(i),
            label_b: json!(j),
        })
    }
}

/// A single fixed pair.
struct FixedPair(UMatrix, UMatrix);

impl PairSource for FixedPair {
    fn pair(&self, _index: u64, _rng: &mut ChaCha8Rng) -> Result<SampledPair> {
        Ok(SampledPair {
            a: self.0.clone(),
            b: self.1.clone(),
            label_a: json!("a"),
            label_b: json!("b"),
        })
    }
}

#[derive(serde::Deserialize)]
struct PairDoc {
    a: UMatrix,
    b: UMatrix,
}

fn measure_closure(
    gens: &[UMatrix],
    args: &MeasureArgs,
    notes: &mut Vec<String>,
) -> Result<AsmReport> {
    let opts = ClosureOptions {
        max_elements: args.max_elements,
        ..ClosureOptions::default()
    };
    let g = close_with(gens, &opts)?;
    measure_group(g, args, notes)
}

fn measure_group(g: GroupClosure, args: &MeasureArgs, notes: &mut Vec<String>) -> Result<AsmReport> {
    if !g.complete {
        return Err(Error::InvalidParams(format!(
            "closure exceeded --max-elements {}; raise the budget",
            args.max_elements
        )));
    }
    notes.push(format!("closure order {}", g.len()));
    let total = (g.len() as u64).pow(2);
    match args.pairs {
        Some(n) => measure_asm_sampled(&RandomClosurePairs(&g), n, args.seed),
        None if total <= EXHAUSTIVE_PAIR_BUDGET => measure_asm(&g),
        None => {
            notes.push(format!(
                "{total} pairs exceed the exhaustive budget; sampled {DEFAULT_SAMPLES} instead"
            ));
            measure_asm_sampled(&RandomClosurePairs(&g), DEFAULT_SAMPLES, args.seed)
        }
    }
}

pub fn measure_report(args: &MeasureArgs) -> Result<AsmReport> {
    let mut notes = Vec::new();
    let mut report = if let Some(path) = &args.pair {
        let doc: PairDoc = serde_json::from_str(&read_file(path)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        notes.push(format!("pair file {}", path.display()));
        measure_asm_sampled(&FixedPair(doc.a, doc.b), 1, args.seed)?
    } else if let Some(path) = &args.group {
        let doc: ClosureDoc = serde_json::from_str(&read_file(path)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let opts = ClosureOptions {
            max_elements: args.max_elements,
            ..ClosureOptions::default()
        };
        notes.push(format!("group file {}", path.display()));
        measure_group(doc.rebuild(&opts)?, args, &mut notes)?
    } else {
        match args.builtin.expect("clap requires builtin or group") {
            Builtin::Q8 => {
                notes.push("builtin q8".into());
                measure_closure(&q8_generators(), args, &mut notes)?
            }
            Builtin::Cyclic => {
                notes.push(format!("builtin cyclic p={}", args.p));
                measure_closure(&[cycle_matrix(args.p as usize)?], args, &mut notes)?
            }
            Builtin::MillerMoreno => {
                let params = MillerMorenoParams::default_instance(args.p, args.q)?
                    .with_beta_orders(vec![args.beta_order])?;
                notes.push(format!(
                    "builtin miller-moreno p={} q={} beta_order={} theta={:?}",
                    args.p, args.q, args.beta_order, params.theta_exponents[0]
                ));
                let (x, y) = miller_moreno(&params)?;
                measure_closure(&[x, y], args, &mut notes)?
            }
            Builtin::Tadpole => {
                let sampler = TadpoleSampler {
                    p: args.p,
                    exact_den: args.exact_den,
                };
                // validates p
                tadpole(&crate::constructions::TadpoleParams::identity(args.p.max(1)))?;
                notes.push(format!("builtin tadpole p={}", args.p));
                measure_asm_sampled(&sampler, args.pairs.unwrap_or(DEFAULT_SAMPLES), args.seed)?
            }
            Builtin::Sr => {
                let params = SrParams {
                    n: args.n,
                    r: args.r,
                    lambda_mode: LambdaMode::Sampled,
                };
                params.validate()?;
                notes.push(format!(
                    "builtin sr n={} r={} bound={}",
                    args.n,
                    args.r,
                    decimal12(params.bound())
                ));
                measure_sub_sampled(&SrSampler(params), args.pairs.unwrap_or(DEFAULT_SAMPLES), args.seed)?
            }
        }
    };
    report.notes.extend(notes);
    if !args.output.deterministic {
        report.generated_at = Some(timestamp());
    }
    Ok(report)
}

fn mode_summary(r: &AsmReport) -> (String, u64) {
    match &r.mode {
        crate::asm::Mode::Exhaustive { pairs, .. } => ("exhaustive".into(), *pairs),
        crate::asm::Mode::Sampled { pairs, .. } => ("sampled".into(), *pairs),
    }
}

fn epsilon_text(r: &AsmReport) -> String {
    match r.epsilon_star.exact() {
        Some(q) => format_ratio(q),
        None => decimal12(r.epsilon()),
    }
}

fn render_report(r: &AsmReport, format: Format) -> String {
    let (mode, pairs) = mode_summary(r);
    let quantity = serde_json::to_value(&r.quantity).expect("serializes");
    let quantity = quantity.as_str().unwrap_or_default().to_string();
    match format {
        Format::Json => to_json(r),
        Format::Csv => format!(
            "quantity,epsilon_star,decimal,exact,lower_bound,mode,pairs\n{},{},{},{},{},{},{}\n",
            quantity,
            epsilon_text(r),
            decimal12(r.epsilon()),
            r.exact,
            r.lower_bound,
            mode,
            pairs
        ),
        Format::Human => {
            let mut s = format!(
                "{} epsilon* = {} ({}){}\n{} over {} pairs\n",
                quantity,
                epsilon_text(r),
                decimal12(r.epsilon()),
                if r.lower_bound { ", lower bound" } else { "" },
                mode,
                pairs
            );
            for n in &r.notes {
                s.push_str(&format!("note: {n}\n"));
            }
            s
        }
    }
}

fn cmd_measure(args: &MeasureArgs) -> Result<u8> {
    let report = measure_report(args)?;
    emit(&args.output.out, &render_report(&report, args.output.format))?;
    if let Some(bound) = args.assert_le {
        if report.epsilon() > bound {
            eprintln!(
                "assertion failed: epsilon* = {} > {bound}",
                decimal12(report.epsilon())
            );
            return Ok(EXIT_VIOLATION);
        }
    }
    Ok(EXIT_OK)
}

// ---- qset ----------------------------------------------------------------

fn parse_rational(flag: &str, s: &str) -> Result<BigRational> {
    parse_ratio(s).ok_or_else(|| Error::InvalidParams(format!("--{flag}: expected a rational n/d, got {s:?}")))
}

fn cmd_qset(args: &QsetArgs) -> Result<u8> {
    let epsilon = match (&args.epsilon, &args.delta) {
        (Some(e), _) => parse_rational("epsilon", e)?,
        (None, Some(d)) => {
            let half = BigRational::new(1.into(), (2 * args.p).into());
            half - parse_rational("delta", d)?
        }
        (None, None) => unreachable!("clap requires one of --epsilon, --delta"),
    };
    let params = QSetParams::new(args.p, epsilon)?;
    let cutoff = params.cutoff();
    let cutoff_small = num_traits::ToPrimitive::to_u64(&cutoff).filter(|&c| c <= QSET_SCAN_LIMIT);
    match (cutoff_small, args.q_max) {
        (None, None) => {
            return Err(Error::InvalidParams(format!(
                "cutoff floor(1/(2 delta_p)) = {cutoff} is too large to scan; pass --q-max"
            )))
        }
        (None, Some(m)) => eprintln!(
            "warning: cutoff is {cutoff}; scanning only q <= {m}, so the list may be incomplete"
        ),
        (Some(c), Some(m)) if m < c => eprintln!(
            "warning: cutoff is {c}; scanning only q <= {m}, so the list may be incomplete"
        ),
        _ => {}
    }
    let report = q_set(&params, args.q_max)?;
    let text = match args.output.format {
        Format::Json => to_json(&report),
        Format::Csv => {
            let mut s = String::from("q,member,witness_k\n");
            for v in &report.verdicts {
                let w = v.witness_k.map(|k| k.to_string()).unwrap_or_default();
                s.push_str(&format!("{},{},{}\n", v.q, v.member, w));
            }
            s
        }
        Format::Human => format!(
            "Q({}) with epsilon_p = {}, delta_p = {}: {:?}\ncutoff {} ({})\n",
            report.p,
            report.epsilon_p,
            report.delta_p,
            report.primes,
            report.cutoff,
            if report.complete { "complete" } else { "partial scan" }
        ),
    };
    emit(&args.output.out, &text)?;
    Ok(EXIT_OK)
}

// ---- verify --------------------------------------------------------------

fn cmd_verify(args: &VerifyArgs) -> Result<u8> {
    let mut report = verify::run_suite(args)?;
    if !args.output.deterministic {
        report.generated_at = Some(timestamp());
    }
    let text = match args.output.format {
        Format::Json => to_json(&report),
        Format::Csv => format!(
            "suite,passed\n{},{}\n",
            serde_json::to_value(report.suite).expect("serializes").as_str().unwrap_or_default(),
            report.passed
        ),
        Format::Human => format!(
            "{}: {}\n{}\n",
            serde_json::to_value(report.suite).expect("serializes").as_str().unwrap_or_default(),
            if report.passed { "PASS" } else { "FAIL" },
            serde_json::to_string(&report.evidence).expect("serializes")
        ),
    };
    emit(&args.output.out, &text)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_VIOLATION })
}

// ---- plotdata ------------------------------------------------------------

fn csv_point(set: &str, z: &UnitPoint) -> String {
    let exactness = if z.is_exact() { "exact" } else { "approx" };
    format!("{set},{},{exactness}\n", z.turn())
}

/// CSV rows `set_name,angle,exactness` for the witness pair of a report;
/// angles are in turns, in `[0, 1)`.
pub fn plot_csv(report: &AsmReport) -> String {
    let mut s = String::from("set_name,angle,exactness\n");
    if let Some(w) = &report.witness_sets {
        for (name, pts) in [
            ("sigma_a", &w.sigma_a),
            ("sigma_b", &w.sigma_b),
            ("product_set", &w.product_set),
        ] {
            for z in pts {
                s.push_str(&csv_point(name, z));
            }
        }
    }
    s
}

fn cmd_plotdata(args: &PlotArgs) -> Result<u8> {
    let text = read_file(&args.report)?;
    let report: AsmReport = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", args.report.display())))?;
    emit(&args.out, &plot_csv(&report))?;
    Ok(EXIT_OK)
}

// ---- build ---------------------------------------------------------------

fn closure_doc(gens: Vec<UMatrix>, args: &BuildArgs) -> Result<serde_json::Value> {
    let doc = if args.closure {
        let opts = ClosureOptions {
            max_elements: args.max_elements,
            ..ClosureOptions::default()
        };
        close_with(&gens, &opts)?.to_doc()
    } else {
        ClosureDoc {
            generators: gens,
            element_count: None,
            complete: None,
            cayley: None,
        }
    };
    Ok(serde_json::to_value(doc).expect("serializes"))
}

fn cmd_build(args: &BuildArgs) -> Result<u8> {
    let value = match args.construction {
        Construction::Tadpole => closure_doc(tadpole_generators(args.p)?, args)?,
        Construction::MillerMoreno => {
            let params = MillerMorenoParams::default_instance(args.p, args.q)?
                .with_beta_orders(vec![args.beta_order])?;
            let (x, y) = miller_moreno(&params)?;
            closure_doc(vec![x, y], args)?
        }
        Construction::Q8 => closure_doc(q8_generators(), args)?,
        Construction::Cyclic => closure_doc(vec![cycle_matrix(args.p as usize)?], args)?,
        Construction::Case4 => {
            let mut rng = crate::asm::chunk_rng(args.seed, 0);
            let d = random_det_one_diagonal(args.p, Some(args.p * args.p * 4), &mut rng);
            let (a, b) = case4_witness(&d, args.k)?;
            let ab = tadpole_mul(&a, &b)?;
            json!({
                "params_a": a,
                "params_b": b,
                "params_ab": ab,
                "a": tadpole(&a)?,
                "b": tadpole(&b)?,
                "ab": tadpole(&ab)?,
            })
        }
        Construction::Sr => {
            let params = SrParams {
                n: args.n,
                r: args.r,
                lambda_mode: LambdaMode::Sampled,
            };
            params.validate()?;
            let mut rng = crate::asm::chunk_rng(args.seed, 0);
            let e = sr_sample(&params, &mut rng);
            let m = e.matrix();
            json!({
                "params": params,
                "element": e,
                "matrix": m,
            })
        }
    };
    emit(&args.out, &to_json(&value))?;
    Ok(EXIT_OK)
}
