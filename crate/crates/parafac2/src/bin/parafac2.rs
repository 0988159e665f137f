//! Command-line front end: dataset simulation, model fitting, evaluation
//! against ground truth, and canned benchmark suites with CSV output.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 3 on
//! numeric failures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use parafac2::io;
use parafac2::metrics::{
    cosine_sim_b, cwsnr, fms, fms_single_mode, triple_cosine, FactorMode,
};
use parafac2::prox::ProxSpec;
use parafac2::simgen::{SimSpec, Setup};
use parafac2::solver::{fit, Algorithm, FitReport, InitRun, SolveOptions};
use parafac2::tensor::{reconstruct, relative_sse, Parafac2Model, RaggedTensor};
use parafac2::Error;

#[derive(Parser)]
#[command(name = "parafac2", version, about = "Constrained PARAFAC2 via AO-ADMM")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a simulated dataset with ground truth.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset directory.
    Fit(FitArgs),
    /// Score a fitted model against ground truth.
    Evaluate(EvaluateArgs),
    /// Run a canned experiment suite and collect a results CSV.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SetupArg {
    Shift,
    NnCrossproduct,
    Unimodal,
    SmoothPoly,
    PiecewiseTv,
    CwsnrShift,
    Sm1,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation family.
    #[arg(long, value_enum)]
    setup: SetupArg,
    /// Number of components in the ground truth.
    #[arg(long, short = 'r')]
    rank: usize,
    /// Dimensions IxJxK; J may be a range like 50-100 for ragged setups.
    #[arg(long)]
    dims: Option<String>,
    /// Relative noise level.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Blend strength column 1 into the others (nn-crossproduct only).
    #[arg(long)]
    mix_c: bool,
    /// Freeze per-slice width noise (unimodal only).
    #[arg(long)]
    pf2_exact: bool,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AlgoArg {
    Aoadmm,
    AoadmmCp,
    Als,
    FlexHals,
}

impl AlgoArg {
    fn to_algorithm(self) -> Algorithm {
        match self {
            AlgoArg::Aoadmm => Algorithm::AoAdmm,
            AlgoArg::AoadmmCp => Algorithm::AoAdmmCp,
            AlgoArg::Als => Algorithm::Als,
            AlgoArg::FlexHals => Algorithm::FlexHals,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Dataset directory (tensor format).
    data: PathBuf,
    #[arg(long, value_enum)]
    algo: AlgoArg,
    #[arg(long, short = 'r')]
    rank: usize,
    /// Comma list of MODE=KIND[:param], e.g. A=nn,B=tv:0.1,C=nn.
    #[arg(long, default_value = "")]
    constraints: String,
    /// Comma list of MODE=strength ridge penalties, e.g. A=0.1,C=0.1.
    #[arg(long, default_value = "")]
    ridge: String,
    #[arg(long, default_value_t = 1)]
    n_init: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_outer: Option<usize>,
    /// Extra scaling of the evolving-mode penalty parameters.
    #[arg(long)]
    rho_b_scale: Option<f64>,
    /// Cap on inner iterations for the evolving-mode block.
    #[arg(long)]
    inner_b_max: Option<usize>,
    /// Plain ALS iterations used to warm-start AO-ADMM.
    #[arg(long)]
    als_warmstart: Option<usize>,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Fitted model directory.
    model: PathBuf,
    /// Ground-truth model directory.
    #[arg(long)]
    truth: PathBuf,
    /// Noisy dataset directory; enables Rel. SSE and the cwSNR/SIM table.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output JSON path.
    #[arg(short, long)]
    out: PathBuf,
    /// Optional CSV with per-slice, per-component cwSNR and SIM rows.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    Setup1,
    Setup2,
    Setup3,
    Setup3b,
    Setup4,
    Setup5,
    Setup6,
    Sm1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    /// Scaled-down defaults that finish on a workstation.
    Desk,
    /// The published experiment sizes.
    Paper,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long, value_enum)]
    suite: SuiteArg,
    #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the number of datasets.
    #[arg(long)]
    replicates: Option<usize>,
    /// Override the number of initializations per fit.
    #[arg(long)]
    n_init: Option<usize>,
    /// Override the outer iteration cap.
    #[arg(long)]
    max_outer: Option<usize>,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(threads) = std::env::var("P2_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: P2_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Fit(a) => cmd_fit(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Benchmark(a) => cmd_benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_)
        | Error::Dimension(_)
        | Error::UnsupportedConstraint(_)
        | Error::Io(_)
        | Error::Serde(_) => 2,
        Error::NotPositiveDefinite { .. }
        | Error::Numeric(_)
        | Error::NonFinite { .. }
        | Error::Generation(_)
        | Error::AllInitsDiverged => 3,
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Numeric(format!("csv error: {other:?}")),
    }
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    version: &'a str,
    command: &'a str,
    argv: Vec<String>,
    config: T,
}

fn write_manifest<T: Serialize>(dir: &Path, command: &str, config: &T) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    io::write_json(
        &dir.join("manifest.json"),
        &Manifest {
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: std::env::args().collect(),
            config,
        },
    )
}

/// Parses "IxJxK" where J may be "lo-hi".
fn parse_dims(text: &str) -> Result<(usize, usize, usize, usize), Error> {
    let bad = || Error::InvalidArgument(format!("cannot parse dimensions '{text}'"));
    let parts: Vec<&str> = text.split('x').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let i = parts[0].parse().map_err(|_| bad())?;
    let k = parts[2].parse().map_err(|_| bad())?;
    let (j_min, j_max) = match parts[1].split_once('-') {
        Some((lo, hi)) => (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?),
        None => {
            let j = parts[1].parse().map_err(|_| bad())?;
            (j, j)
        }
    };
    Ok((i, j_min, j_max, k))
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let setup = match args.setup {
        SetupArg::Shift => Setup::Shift,
        SetupArg::NnCrossproduct => Setup::NnCrossProduct { mix_c: args.mix_c },
        SetupArg::Unimodal => Setup::UnimodalGauss { pf2_exact: args.pf2_exact },
        SetupArg::SmoothPoly => Setup::SmoothPoly,
        SetupArg::PiecewiseTv => Setup::PiecewiseTv,
        SetupArg::CwsnrShift => Setup::CwsnrShift,
        SetupArg::Sm1 => Setup::Sm1,
    };
    let mut spec = SimSpec::defaults(setup, args.seed);
    spec.rank = args.rank;
    if let Some(dims) = &args.dims {
        let (i, j_min, j_max, k) = parse_dims(dims)?;
        spec.i = i;
        spec.j_min = j_min;
        spec.j_max = j_max;
        spec.k = k;
    }
    if let Some(eta) = args.eta {
        spec.eta = eta;
    }
    let instance = spec.generate()?;
    write_manifest(&args.out, "simulate", &spec)?;
    io::write_tensor(&args.out, &instance.noisy)?;
    io::write_model(&args.out.join("truth"), &instance.truth)?;
    io::write_json(&args.out.join("sim.json"), &spec)?;
    println!(
        "wrote {} slices + truth to {}",
        instance.noisy.nslices(),
        args.out.display()
    );
    Ok(())
}

/// Constraint kinds that need a dimension before they become a `ProxSpec`.
#[derive(Debug, Clone, PartialEq)]
enum ConstraintKind {
    None,
    NonNegative,
    Tv(f64),
    Graph(f64),
    Unimodal,
    UnimodalNonNegative,
}

impl ConstraintKind {
    fn parse(text: &str) -> Result<Self, Error> {
        let (kind, param) = match text.split_once(':') {
            Some((k, p)) => (k, Some(p)),
            None => (text, None),
        };
        let need = |p: Option<&str>| -> Result<f64, Error> {
            p.ok_or_else(|| Error::InvalidArgument(format!("constraint '{text}' needs a strength")))?
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad strength in '{text}'")))
        };
        match kind {
            "none" => Ok(Self::None),
            "nn" => Ok(Self::NonNegative),
            "tv" => Ok(Self::Tv(need(param)?)),
            "graph" => Ok(Self::Graph(need(param)?)),
            "unimodal" => match param {
                None => Ok(Self::Unimodal),
                Some("nn") => Ok(Self::UnimodalNonNegative),
                Some(other) => Err(Error::InvalidArgument(format!(
                    "unknown unimodal variant '{other}'"
                ))),
            },
            other => Err(Error::InvalidArgument(format!("unknown constraint kind '{other}'"))),
        }
    }

    /// Materializes the kind for a mode whose vectors have length `dim`;
    /// `dim` is None when the mode is ragged.
    fn to_spec(&self, dim: Option<usize>) -> Result<ProxSpec, Error> {
        Ok(match self {
            Self::None => ProxSpec::None,
            Self::NonNegative => ProxSpec::NonNegative,
            Self::Tv(s) => ProxSpec::TotalVariation(*s),
            Self::Graph(s) => {
                let n = dim.ok_or_else(|| {
                    Error::UnsupportedConstraint(
                        "graph regularization needs a fixed mode size (data is ragged)".into(),
                    )
                })?;
                ProxSpec::GraphLaplacian { laplacian: path_laplacian(n), strength: *s }
            }
            Self::Unimodal => ProxSpec::Unimodal,
            Self::UnimodalNonNegative => ProxSpec::UnimodalNonNegative,
        })
    }
}

/// Laplacian of the path graph: neighboring indices have similarity 1.
fn path_laplacian(n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let deg = if i == 0 || i + 1 == n { 1.0 } else { 2.0 };
        l[(i, i)] = if n == 1 { 0.0 } else { deg };
        if i + 1 < n {
            l[(i, i + 1)] = -1.0;
            l[(i + 1, i)] = -1.0;
        }
    }
    l
}

fn parse_mode_list(text: &str) -> Result<BTreeMap<char, String>, Error> {
    let mut out = BTreeMap::new();
    for item in text.split(',').filter(|s| !s.is_empty()) {
        let (mode, value) = item.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("expected MODE=VALUE, found '{item}'"))
        })?;
        let mode = match mode {
            "A" => 'A',
            "B" => 'B',
            "C" => 'C',
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown mode '{other}' (expected A, B, or C)"
                )))
            }
        };
        if out.insert(mode, value.to_string()).is_some() {
            return Err(Error::InvalidArgument(format!("mode {mode} specified twice")));
        }
    }
    Ok(out)
}

fn build_options(
    data: &RaggedTensor,
    rank: usize,
    algo: Algorithm,
    constraints: &str,
    ridge: &str,
    seed: u64,
) -> Result<SolveOptions, Error> {
    let mut opts = SolveOptions::new(rank, algo);
    opts.seed = seed;
    let cols = data.col_counts();
    let j_fixed = if cols.iter().all(|&j| j == cols[0]) { Some(cols[0]) } else { None };
    for (mode, value) in parse_mode_list(constraints)? {
        let kind = ConstraintKind::parse(&value)?;
        match mode {
            'A' => opts.spec_a = kind.to_spec(Some(data.nrows()))?,
            'B' => opts.spec_b = kind.to_spec(j_fixed)?,
            'C' => opts.spec_c = kind.to_spec(Some(data.nslices()))?,
            _ => unreachable!(),
        }
    }
    for (mode, value) in parse_mode_list(ridge)? {
        let strength: f64 = value
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad ridge strength '{value}'")))?;
        match mode {
            'A' => opts.ridge_a = strength,
            'B' => opts.ridge_b = strength,
            'C' => opts.ridge_c = strength,
            _ => unreachable!(),
        }
    }
    Ok(opts)
}

/// One multi-start fit driven seed by seed so that per-init models stay
/// available (for degeneracy screening) and partial reports survive failures.
struct MultiRun {
    selected: Option<usize>,
    runs: Vec<InitRun>,
    models: Vec<Option<Parafac2Model>>,
    /// First per-init error, kept so configuration mistakes (for example an
    /// unsupported constraint) surface with the right exit code.
    first_error: Option<Error>,
}

fn run_inits(
    data: &RaggedTensor,
    opts: &SolveOptions,
    n_init: usize,
    exclude: impl Fn(&Parafac2Model) -> bool,
) -> Result<MultiRun, Error> {
    opts.validate()?;
    let mut runs = Vec::with_capacity(n_init);
    let mut models = Vec::with_capacity(n_init);
    let mut best: Option<(usize, f64, bool)> = None;
    let mut first_error: Option<Error> = None;
    for i in 0..n_init as u64 {
        let seed = opts.seed.wrapping_add(i);
        let mut o = opts.clone();
        o.seed = seed;
        match fit(data, &o) {
            Ok((model, rep)) => {
                if !exclude(&model) {
                    let qualified = rep.converged && rep.feasible;
                    let better = match &best {
                        None => true,
                        Some((_, bl, bq)) => {
                            (qualified && !bq) || (qualified == *bq && rep.final_loss < *bl)
                        }
                    };
                    if better {
                        best = Some((runs.len(), rep.final_loss, qualified));
                    }
                }
                runs.push(InitRun { seed, selected: false, report: Some(rep), error: None });
                models.push(Some(model));
            }
            Err(e) => {
                runs.push(InitRun {
                    seed,
                    selected: false,
                    report: None,
                    error: Some(e.to_string()),
                });
                models.push(None);
                first_error.get_or_insert(e);
            }
        }
    }
    let selected = best.map(|(idx, _, _)| idx);
    if let Some(idx) = selected {
        runs[idx].selected = true;
    }
    Ok(MultiRun { selected, runs, models, first_error })
}

#[derive(Serialize)]
struct FitReportFile<'a> {
    selected: Option<usize>,
    runs: &'a [InitRun],
}

fn cmd_fit(args: FitArgs) -> Result<(), Error> {
    let data = io::read_tensor(&args.data)?;
    let mut opts = build_options(
        &data,
        args.rank,
        args.algo.to_algorithm(),
        &args.constraints,
        &args.ridge,
        args.seed,
    )?;
    if let Some(m) = args.max_outer {
        opts.max_outer = m;
    }
    if let Some(s) = args.rho_b_scale {
        opts.rho_b_scale = s;
    }
    if let Some(m) = args.inner_b_max {
        opts.inner_b.max_inner = m;
    }
    if let Some(w) = args.als_warmstart {
        opts.als_warmstart_iters = w;
    }
    if args.n_init == 0 {
        return Err(Error::InvalidArgument("n_init must be >= 1".into()));
    }
    opts.validate()?;
    write_manifest(&args.out, "fit", &FitConfigEcho::from(&args))?;
    let multi = run_inits(&data, &opts, args.n_init, |_| false)?;
    io::write_json(
        &args.out.join("report.json"),
        &FitReportFile { selected: multi.selected, runs: &multi.runs },
    )?;
    match multi.selected {
        Some(idx) => {
            let model = multi.models[idx].as_ref().expect("selected run has a model");
            io::write_model(&args.out, model)?;
            let rep = multi.runs[idx].report.as_ref().expect("selected run has a report");
            println!(
                "selected init seed={} loss={:.6e} rel_sse={:.6e} converged={} feasible={}",
                multi.runs[idx].seed, rep.final_loss, rep.final_rel_sse, rep.converged, rep.feasible
            );
            Ok(())
        }
        None => Err(multi.first_error.unwrap_or(Error::AllInitsDiverged)),
    }
}

#[derive(Serialize)]
struct FitConfigEcho {
    data: PathBuf,
    algo: String,
    rank: usize,
    constraints: String,
    ridge: String,
    n_init: usize,
    seed: u64,
    max_outer: Option<usize>,
    rho_b_scale: Option<f64>,
    inner_b_max: Option<usize>,
    als_warmstart: Option<usize>,
}

impl From<&FitArgs> for FitConfigEcho {
    fn from(a: &FitArgs) -> Self {
        Self {
            data: a.data.clone(),
            algo: format!("{:?}", a.algo),
            rank: a.rank,
            constraints: a.constraints.clone(),
            ridge: a.ridge.clone(),
            n_init: a.n_init,
            seed: a.seed,
            max_outer: a.max_outer,
            rho_b_scale: a.rho_b_scale,
            inner_b_max: a.inner_b_max,
            als_warmstart: a.als_warmstart,
        }
    }
}

#[derive(Serialize)]
struct MetricsFile {
    fms: f64,
    fms_a: f64,
    fms_b: f64,
    fms_c: f64,
    pairs: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rel_sse: Option<f64>,
    tc: f64,
    tc_slice_averaged: bool,
    degenerate: bool,
}

fn evaluate_pair(
    truth: &Parafac2Model,
    est: &Parafac2Model,
    data: Option<&RaggedTensor>,
) -> Result<MetricsFile, Error> {
    let joint = fms(truth, est)?;
    let fa = fms_single_mode(truth, est, FactorMode::Subject, false)?.fms;
    let fb = fms_single_mode(truth, est, FactorMode::Evolving, false)?.fms;
    let fc = fms_single_mode(truth, est, FactorMode::Strength, false)?.fms;
    let ragged = est.b[0].nrows() != est.b[1.min(est.b.len() - 1)].nrows();
    let (tc, degenerate) = triple_cosine(est, ragged)?;
    let rel_sse = data.map(|x| relative_sse(est, x)).transpose()?;
    Ok(MetricsFile {
        fms: joint.fms,
        fms_a: fa,
        fms_b: fb,
        fms_c: fc,
        pairs: joint.pairs,
        rel_sse,
        tc,
        tc_slice_averaged: ragged,
        degenerate,
    })
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let est = io::read_model(&args.model)?;
    let truth = io::read_model(&args.truth)?;
    let data = args.data.as_ref().map(|p| io::read_tensor(p)).transpose()?;
    let metrics = evaluate_pair(&truth, &est, data.as_ref())?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    io::write_json(&args.out, &metrics)?;
    if let Some(csv_path) = &args.csv {
        let data = data.as_ref().ok_or_else(|| {
            Error::InvalidArgument("--csv needs --data to derive the noise tensor".into())
        })?;
        let clean = reconstruct(&truth);
        let noise = RaggedTensor::new(
            (0..data.nslices())
                .map(|k| data.slice(k) - clean.slice(k))
                .collect(),
        )?;
        let snr = cwsnr(&truth, &noise)?;
        let joint = fms(&truth, &est)?;
        let sim = cosine_sim_b(&truth, &est, &joint.pairs)?;
        let mut w = csv::Writer::from_path(csv_path).map_err(csv_err)?;
        w.write_record(["k", "component_truth", "component_est", "cwsnr_db", "sim"]).map_err(csv_err)?;
        for k in 0..data.nslices() {
            for (i, &(r, s)) in joint.pairs.iter().enumerate() {
                w.write_record(&[
                    k.to_string(),
                    r.to_string(),
                    s.to_string(),
                    format!("{}", snr[(k, r)]),
                    format!("{}", sim[(k, i)]),
                ]).map_err(csv_err)?;
            }
        }
        w.flush()?;
    }
    println!("fms={:.4} tc={:.3} degenerate={}", metrics.fms, metrics.tc, metrics.degenerate);
    Ok(())
}

// ---------------------------------------------------------------------------
// Benchmark suites
// ---------------------------------------------------------------------------

/// One algorithm/constraint variant inside a suite.
struct Variant {
    algo: Algorithm,
    label: &'static str,
    constraints: String,
    ridge: String,
    rho_b_scale: f64,
    inner_b_max: Option<usize>,
    als_warmstart: usize,
}

impl Variant {
    fn new(algo: Algorithm, label: &'static str, constraints: &str, ridge: &str) -> Self {
        Self {
            algo,
            label,
            constraints: constraints.to_string(),
            ridge: ridge.to_string(),
            rho_b_scale: 1.0,
            inner_b_max: None,
            als_warmstart: 0,
        }
    }

    /// The convergence aids used for the unimodality experiments: a one-pass
    /// ALS warm start, 10x evolving-mode penalties, inner cap 20.
    fn with_unimodal_aids(mut self) -> Self {
        self.rho_b_scale = 10.0;
        self.inner_b_max = Some(20);
        self.als_warmstart = 1;
        self
    }
}

struct SuitePlan {
    datasets: usize,
    n_init: usize,
    max_outer: usize,
    /// (spec template, label suffix) per dataset condition, e.g. noise grid.
    conditions: Vec<(SimSpec, String)>,
    variants: Vec<Variant>,
    /// Drop datasets on which every screening-algorithm init is degenerate.
    degeneracy_screen: bool,
    /// Also emit the per-column cwSNR/SIM table.
    cwsnr_table: bool,
}

#[derive(Serialize)]
struct ResultRow {
    suite: String,
    condition: String,
    dataset: usize,
    algo: String,
    fms: f64,
    fms_a: f64,
    fms_b: f64,
    fms_c: f64,
    rel_sse: f64,
    tc: f64,
    degenerate: bool,
    iterations: usize,
    wall_ms: u64,
    converged: bool,
    feasible: bool,
}

#[derive(Serialize)]
struct CwsnrRow {
    condition: String,
    dataset: usize,
    algo: String,
    k: usize,
    component: usize,
    cwsnr_db: f64,
    sim: f64,
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            10f64.powf(lo.log10() + t * (hi.log10() - lo.log10()))
        })
        .collect()
}

fn suite_plan(suite: SuiteArg, scale: ScaleArg, seed: u64) -> SuitePlan {
    let desk = scale == ScaleArg::Desk;
    let spec = |setup: Setup| SimSpec::defaults(setup, seed);
    match suite {
        SuiteArg::Setup1 => SuitePlan {
            datasets: if desk { 3 } else { 50 },
            n_init: if desk { 3 } else { 10 },
            max_outer: if desk { 500 } else { 2000 },
            conditions: vec![(
                {
                    let mut s = spec(Setup::Shift);
                    if desk {
                        s.i = 20;
                        s.j_min = 24;
                        s.j_max = 24;
                        s.k = 15;
                    }
                    s
                },
                "eta=0.33".into(),
            )],
            variants: vec![
                Variant::new(Algorithm::AoAdmm, "aoadmm-nn", "A=nn,B=nn,C=nn", ""),
                Variant::new(Algorithm::FlexHals, "hals-nn", "A=nn,B=nn,C=nn", ""),
                Variant::new(Algorithm::Als, "als", "A=nn,C=nn", ""),
            ],
            degeneracy_screen: false,
            cwsnr_table: false,
        },
        SuiteArg::Setup2 => {
            let etas = if desk {
                vec![0.5, 1.2, 2.5]
            } else {
                log_spaced(0.5, 2.5, 10)
            };
            SuitePlan {
                datasets: if desk { 2 } else { 50 },
                n_init: if desk { 3 } else { 20 },
                max_outer: if desk { 500 } else { 6000 },
                conditions: etas
                    .into_iter()
                    .map(|eta| {
                        let mut s = spec(Setup::NnCrossProduct { mix_c: false });
                        if desk {
                            s.i = 20;
                            s.j_min = 20;
                            s.j_max = 30;
                            s.k = 6;
                        }
                        s.eta = eta;
                        (s, format!("eta={eta:.3}"))
                    })
                    .collect(),
                variants: vec![
                    Variant::new(Algorithm::AoAdmm, "aoadmm-nn", "A=nn,B=nn,C=nn", ""),
                    Variant::new(Algorithm::FlexHals, "hals-nn", "A=nn,B=nn,C=nn", ""),
                    Variant::new(Algorithm::Als, "als", "A=nn,C=nn", ""),
                ],
                degeneracy_screen: true,
                cwsnr_table: false,
            }
        }
        SuiteArg::Setup3 | SuiteArg::Setup3b => {
            let exact = suite == SuiteArg::Setup3b;
            SuitePlan {
                datasets: if desk { 3 } else { 50 },
                n_init: if desk { 3 } else { 20 },
                max_outer: if desk { 500 } else { 2000 },
                conditions: vec![(
                    spec(Setup::UnimodalGauss { pf2_exact: exact }),
                    format!("pf2_exact={exact}"),
                )],
                variants: vec![
                    Variant::new(
                        Algorithm::AoAdmm,
                        "aoadmm-unimodal-nn",
                        "A=nn,B=unimodal:nn,C=nn",
                        "",
                    )
                    .with_unimodal_aids(),
                    Variant::new(Algorithm::AoAdmm, "aoadmm-nn", "A=nn,B=nn,C=nn", "")
                        .with_unimodal_aids(),
                    Variant::new(Algorithm::FlexHals, "hals-nn", "A=nn,B=nn,C=nn", ""),
                    Variant::new(Algorithm::Als, "als", "A=nn,C=nn", ""),
                ],
                degeneracy_screen: true,
                cwsnr_table: false,
            }
        }
        SuiteArg::Setup4 => {
            let strengths = log_spaced(1.0, 1000.0, 4);
            let mut variants = Vec::new();
            for &s in &strengths {
                variants.push(Variant::new(
                    Algorithm::AoAdmm,
                    "aoadmm-graph-ridge",
                    Box::leak(format!("B=graph:{s},C=nn").into_boxed_str()),
                    "A=0.1,C=0.1",
                ));
                variants.push(Variant::new(
                    Algorithm::AoAdmm,
                    "aoadmm-graph-noridge",
                    Box::leak(format!("B=graph:{s},C=nn").into_boxed_str()),
                    "",
                ));
            }
            variants.push(Variant::new(Algorithm::Als, "als", "C=nn", ""));
            SuitePlan {
                datasets: if desk { 2 } else { 20 },
                n_init: if desk { 2 } else { 20 },
                max_outer: if desk { 300 } else { 5000 },
                conditions: vec![(
                    {
                        let mut s = spec(Setup::SmoothPoly);
                        if desk {
                            s.i = 10;
                            s.j_min = 60;
                            s.j_max = 60;
                            s.k = 8;
                        }
                        s
                    },
                    "eta=0.5".into(),
                )],
                variants,
                degeneracy_screen: false,
                cwsnr_table: false,
            }
        }
        SuiteArg::Setup5 => {
            let strengths = log_spaced(0.001, 10.0, 5);
            let mut variants = Vec::new();
            for &s in &strengths {
                variants.push(Variant::new(
                    Algorithm::AoAdmm,
                    "aoadmm-tv-ridge",
                    Box::leak(format!("B=tv:{s},C=nn").into_boxed_str()),
                    "A=0.1,C=0.1",
                ));
                variants.push(Variant::new(
                    Algorithm::AoAdmm,
                    "aoadmm-tv-noridge",
                    Box::leak(format!("B=tv:{s},C=nn").into_boxed_str()),
                    "",
                ));
            }
            variants.push(Variant::new(Algorithm::Als, "als", "C=nn", ""));
            SuitePlan {
                datasets: if desk { 2 } else { 20 },
                n_init: if desk { 2 } else { 20 },
                max_outer: if desk { 300 } else { 5000 },
                conditions: vec![(
                    {
                        let mut s = spec(Setup::PiecewiseTv);
                        if desk {
                            s.i = 10;
                            s.j_min = 40;
                            s.j_max = 50;
                            s.k = 8;
                        }
                        s
                    },
                    "eta=0.5".into(),
                )],
                variants,
                degeneracy_screen: false,
                cwsnr_table: false,
            }
        }
        SuiteArg::Setup6 => {
            let etas = if desk { vec![0.33, 0.5] } else { vec![0.1, 0.33, 0.5] };
            SuitePlan {
                datasets: if desk { 2 } else { 5 },
                n_init: if desk { 3 } else { 50 },
                max_outer: if desk { 500 } else { 2000 },
                conditions: etas
                    .into_iter()
                    .map(|eta| {
                        let mut s = spec(Setup::CwsnrShift);
                        if desk {
                            s.i = 15;
                            s.j_min = 20;
                            s.j_max = 20;
                            s.k = 20;
                        }
                        s.eta = eta;
                        (s, format!("eta={eta}"))
                    })
                    .collect(),
                variants: vec![
                    Variant::new(Algorithm::AoAdmm, "aoadmm-nn", "A=nn,B=nn,C=nn", ""),
                    Variant::new(Algorithm::Als, "als", "A=nn,C=nn", ""),
                ],
                degeneracy_screen: false,
                cwsnr_table: true,
            }
        }
        SuiteArg::Sm1 => {
            let js = if desk { vec![10, 40] } else { vec![10, 100, 1000] };
            let etas = if desk { vec![0.33] } else { vec![0.33, 0.5] };
            let mut conditions = Vec::new();
            for &j in &js {
                for &eta in &etas {
                    let mut s = spec(Setup::Sm1);
                    s.j_min = j;
                    s.j_max = j;
                    if desk {
                        s.i = 15;
                        s.k = 12;
                    }
                    s.eta = eta;
                    conditions.push((s, format!("J={j},eta={eta}")));
                }
            }
            SuitePlan {
                datasets: if desk { 2 } else { 10 },
                n_init: if desk { 2 } else { 10 },
                max_outer: if desk { 300 } else { 2000 },
                conditions,
                variants: vec![
                    Variant::new(Algorithm::AoAdmm, "aoadmm-cmf", "A=nn,B=nn,C=nn", ""),
                    Variant::new(Algorithm::AoAdmmCp, "aoadmm-cp", "A=nn,B=nn,C=nn", ""),
                ],
                degeneracy_screen: false,
                cwsnr_table: false,
            }
        }
    }
}

fn model_is_degenerate(model: &Parafac2Model) -> bool {
    let ragged = model.b[0].nrows() != model.b[1.min(model.b.len() - 1)].nrows();
    triple_cosine(model, ragged).map(|(_, d)| d).unwrap_or(false)
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<(), Error> {
    let mut plan = suite_plan(args.suite, args.scale, args.seed);
    if let Some(n) = args.replicates {
        plan.datasets = n;
    }
    if let Some(n) = args.n_init {
        plan.n_init = n;
    }
    if let Some(n) = args.max_outer {
        plan.max_outer = n;
    }
    write_manifest(&args.out, "benchmark", &BenchConfigEcho::from(&args))?;

    let mut rows: Vec<ResultRow> = Vec::new();
    let mut snr_rows: Vec<CwsnrRow> = Vec::new();
    let mut skipped = 0usize;

    for (cond_idx, (template, label)) in plan.conditions.iter().enumerate() {
        for d in 0..plan.datasets {
            let mut spec = template.clone();
            spec.seed = args
                .seed
                .wrapping_add((cond_idx * plan.datasets + d) as u64)
                .wrapping_mul(2654435761);
            let instance = spec.generate()?;
            let data = &instance.noisy;

            // Degeneracy screen: drop the dataset entirely when every ALS
            // init is degenerate.
            if plan.degeneracy_screen {
                let als = plan
                    .variants
                    .iter()
                    .find(|v| v.algo == Algorithm::Als)
                    .expect("screened suites include an ALS variant");
                let opts = variant_options(data, &spec, als, &plan)?;
                let multi = run_inits(data, &opts, plan.n_init, model_is_degenerate)?;
                if multi.selected.is_none() {
                    log::warn!("dataset {label}/{d}: all screened inits degenerate, skipping");
                    skipped += 1;
                    continue;
                }
            }

            for variant in &plan.variants {
                let opts = match variant_options(data, &spec, variant, &plan) {
                    Ok(o) => o,
                    Err(Error::UnsupportedConstraint(msg)) => {
                        log::warn!("{}: skipping variant {}: {msg}", label, variant.label);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let exclude: Box<dyn Fn(&Parafac2Model) -> bool> =
                    if plan.degeneracy_screen && variant.algo == Algorithm::Als {
                        Box::new(model_is_degenerate)
                    } else {
                        Box::new(|_| false)
                    };
                let multi = match run_inits(data, &opts, plan.n_init, &exclude) {
                    Ok(m) => m,
                    Err(Error::UnsupportedConstraint(msg)) => {
                        log::warn!("{}: skipping variant {}: {msg}", label, variant.label);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let Some(idx) = multi.selected else {
                    log::warn!("{}/{}: no usable init for {}", label, d, variant.label);
                    continue;
                };
                let model = multi.models[idx].as_ref().unwrap();
                let rep: &FitReport = multi.runs[idx].report.as_ref().unwrap();
                let m = evaluate_pair(&instance.truth, model, Some(data))?;
                rows.push(ResultRow {
                    suite: format!("{:?}", args.suite).to_lowercase(),
                    condition: label.clone(),
                    dataset: d,
                    algo: variant.label.to_string(),
                    fms: m.fms,
                    fms_a: m.fms_a,
                    fms_b: m.fms_b,
                    fms_c: m.fms_c,
                    rel_sse: m.rel_sse.unwrap_or(f64::NAN),
                    tc: m.tc,
                    degenerate: m.degenerate,
                    iterations: rep.iterations,
                    wall_ms: rep.wall_ms,
                    converged: rep.converged,
                    feasible: rep.feasible,
                });
                if plan.cwsnr_table {
                    let noise = RaggedTensor::new(
                        (0..data.nslices())
                            .map(|k| data.slice(k) - instance.clean.slice(k))
                            .collect(),
                    )?;
                    let snr = cwsnr(&instance.truth, &noise)?;
                    let joint = fms(&instance.truth, model)?;
                    let sim = cosine_sim_b(&instance.truth, model, &joint.pairs)?;
                    for k in 0..data.nslices() {
                        for (i, &(r, _)) in joint.pairs.iter().enumerate() {
                            snr_rows.push(CwsnrRow {
                                condition: label.clone(),
                                dataset: d,
                                algo: variant.label.to_string(),
                                k,
                                component: r,
                                cwsnr_db: snr[(k, r)],
                                sim: sim[(k, i)],
                            });
                        }
                    }
                }
            }
        }
    }

    let mut w = csv::Writer::from_path(args.out.join("results.csv")).map_err(csv_err)?;
    for row in &rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    if plan.cwsnr_table {
        let mut w = csv::Writer::from_path(args.out.join("cwsnr_sim.csv")).map_err(csv_err)?;
        for row in &snr_rows {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;
    }
    println!(
        "wrote {} result rows ({} datasets skipped as degenerate) to {}",
        rows.len(),
        skipped,
        args.out.display()
    );
    Ok(())
}

fn variant_options(
    data: &RaggedTensor,
    spec: &SimSpec,
    variant: &Variant,
    plan: &SuitePlan,
) -> Result<SolveOptions, Error> {
    let mut opts = build_options(
        data,
        spec.rank,
        variant.algo,
        &variant.constraints,
        &variant.ridge,
        spec.seed ^ 0x5eed,
    )?;
    opts.max_outer = plan.max_outer;
    opts.rho_b_scale = variant.rho_b_scale;
    if let Some(m) = variant.inner_b_max {
        opts.inner_b.max_inner = m;
    }
    opts.als_warmstart_iters = variant.als_warmstart;
    Ok(opts)
}

#[derive(Serialize)]
struct BenchConfigEcho {
    suite: String,
    scale: String,
    seed: u64,
    replicates: Option<usize>,
    n_init: Option<usize>,
    max_outer: Option<usize>,
}

impl From<&BenchmarkArgs> for BenchConfigEcho {
    fn from(a: &BenchmarkArgs) -> Self {
        Self {
            suite: format!("{:?}", a.suite).to_lowercase(),
            scale: format!("{:?}", a.scale).to_lowercase(),
            seed: a.seed,
            replicates: a.replicates,
            n_init: a.n_init,
            max_outer: a.max_outer,
        }
    }
}
