//! `helmsort` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input, 3 numerical failure
//! (including failed validation checks).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use helmsort::bilinear::{self, BilinearTech};
use helmsort::counterfactual::{self, CounterfactualConfig};
use helmsort::flow::{self, FlowRegime};
use helmsort::helmholtz::{self, Solver, SolverOptions};
use helmsort::inference::{self, CalibrationOptions, Moments, SynthesisConfig, TechParams, WorkerRecord};
use helmsort::oracle::{self, DiscreteInstance};
use helmsort::scenario::{self, Scenario};
use helmsort::validation;

#[derive(Debug, Parser)]
#[command(name = "helmsort", version, about = "Decompose technological change into earnings and reallocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Input file: technology, scenario or instance JSON depending on the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for all randomness.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory; results go to stdout when omitted where possible.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    solver: Option<SolverArg>,
    /// Curl penalty of the penalized solver.
    #[arg(long, global = true)]
    psi: Option<f64>,
    /// Lattice points per axis.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Penalized,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form decomposition of a bilinear technology (`{"sigma": .., "dsigma": ..}`).
    Sylvester,
    /// Grid decomposition of a scenario.
    Decompose,
    /// Cognitive skill-biased change on a skill density estimated from records.
    Counterfactual {
        /// Records CSV (`occupation,earnings,q_ratio`); synthetic records when omitted.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Parameters JSON (`{"alpha": .., "beta": .., "delta": ..}`).
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        gamma_dot: f64,
        #[arg(long, default_value_t = 0.1)]
        delta_dot: f64,
    },
    /// Fit (alpha, beta, delta) to occupation moments.
    Calibrate {
        #[arg(long)]
        records: Option<PathBuf>,
        /// Target moments JSON; the reference moments when omitted.
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Start point JSON.
        #[arg(long)]
        start: Option<PathBuf>,
    },
    /// Infer skills for each record.
    Infer {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Integrate a path of bilinear technologies (scenario with a `path` block).
    Flow {
        /// Decompose on the scenario grid at every step instead of in closed form.
        #[arg(long)]
        grid: bool,
        /// Compare the endpoint with a discrete assignment of this many workers.
        #[arg(long)]
        oracle_sample: Option<usize>,
    },
    /// Exact assignment for an instance JSON.
    Assign,
    /// Run the acceptance checks and print a pass/fail table.
    Validate {
        /// Run only these criteria (1-12).
        #[arg(long, value_delimiter = ',')]
        criterion: Vec<u8>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Input(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<helmsort::Error> for Failure {
    fn from(e: helmsort::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Sylvester => sylvester(cli),
        Command::Decompose => decompose(cli),
        Command::Counterfactual { records, params, gamma_dot, delta_dot } => {
            counterfactual(cli, records.as_deref(), params.as_deref(), *gamma_dot, *delta_dot)
        }
        Command::Calibrate { records, targets, start } => {
            calibrate(cli, records.as_deref(), targets.as_deref(), start.as_deref())
        }
        Command::Infer { records, params } => infer(cli, records, params.as_deref()),
        Command::Flow { grid, oracle_sample } => flow_cmd(cli, *grid, *oracle_sample),
        Command::Assign => assign(cli),
        Command::Validate { criterion } => validate(cli, criterion),
    }
}

fn require_config(cli: &Cli) -> Result<&Path, Failure> {
    cli.config.as_deref().ok_or_else(|| Failure::Usage("--config is required for this command".into()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

/// Writes `name` under `--out`, or to stdout when no directory is given.
fn emit(cli: &Cli, name: &str, bytes: &[u8]) -> Outcome {
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), bytes)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
        }
    }
    Ok(())
}

/// Writes `name` under `--out`, defaulting to the working directory.
fn emit_file(cli: &Cli, name: &str, bytes: &[u8]) -> Outcome {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(name), bytes)?;
    Ok(())
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_vec_pretty(value)?;
    s.push(b'\n');
    Ok(s)
}

/// Converts a CSV table to the requested format; returns the file name and contents.
fn table(cli: &Cli, stem: &str, csv_bytes: Vec<u8>) -> Result<(String, Vec<u8>), Failure> {
    match cli.format {
        Format::Csv => Ok((format!("{stem}.csv"), csv_bytes)),
        Format::Json => {
            let mut rdr = csv::Reader::from_reader(csv_bytes.as_slice());
            let headers = rdr.headers()?.clone();
            let mut rows = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                let obj: serde_json::Map<String, Value> = headers
                    .iter()
                    .zip(rec.iter())
                    .map(|(h, v)| {
                        let val = v.parse::<f64>().map(|x| json!(x)).unwrap_or_else(|_| json!(v));
                        (h.to_string(), val)
                    })
                    .collect();
                rows.push(Value::Object(obj));
            }
            Ok((format!("{stem}.json"), json_bytes(&rows)?))
        }
    }
}

fn solver_options(cli: &Cli, base: SolverOptions) -> Result<SolverOptions, Failure> {
    let mut opts = base;
    if let Some(s) = cli.solver {
        opts.solver = match s {
            SolverArg::Penalized => Solver::Penalized,
            SolverArg::Direct => Solver::Direct,
        };
    }
    if let Some(psi) = cli.psi {
        if !(psi > 0.0 && psi.is_finite()) {
            return Err(Failure::Input(format!("--psi must be positive, got {psi}")));
        }
        opts.psi = Some(psi);
    }
    Ok(opts)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TechFile {
    sigma: Vec<Vec<f64>>,
    dsigma: Vec<Vec<f64>>,
}

fn sylvester(cli: &Cli) -> Outcome {
    let tech: TechFile = read_json(require_config(cli)?)?;
    let tech = BilinearTech::from_rows(&tech.sigma, &tech.dsigma)?;
    let dec = bilinear::decompose(&tech);
    let report = json!({
        "R": bilinear::to_rows(&dec.realloc),
        "W": bilinear::to_rows(&dec.earnings_slope),
        "theta": dec.theta,
    });
    emit(cli, "sylvester.json", &json_bytes(&report)?)
}

fn load_scenario(cli: &Cli) -> Result<Scenario, Failure> {
    let mut s = Scenario::load(require_config(cli)?)?;
    if let Some(n) = cli.n {
        s.grid.n = n;
    }
    Ok(s)
}

fn decompose(cli: &Cli) -> Outcome {
    let s = load_scenario(cli)?;
    let input = s.build_input()?;
    let opts = solver_options(cli, s.solver_options()?)?;
    let res = helmholtz::decompose(&input, &opts)?;
    let mut buf = Vec::new();
    scenario::write_fields(&input, &res, &mut buf)?;
    let (name, bytes) = table(cli, "fields", buf)?;
    emit_file(cli, &name, &bytes)?;
    emit_file(cli, "diagnostics.json", &json_bytes(&res.diagnostics)?)
}

fn load_records(path: &Path) -> Result<Vec<WorkerRecord>, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(inference::read_records(std::io::BufReader::new(file))?)
}

fn load_params(path: Option<&Path>) -> Result<TechParams, Failure> {
    let p = match path {
        Some(p) => read_json::<TechParams>(p)?,
        None => inference::REFERENCE_PARAMS,
    };
    p.validate()?;
    Ok(p)
}

fn counterfactual(
    cli: &Cli,
    records: Option<&Path>,
    params: Option<&Path>,
    gamma_dot: f64,
    delta_dot: f64,
) -> Outcome {
    let params = load_params(params)?;
    let records = match records {
        Some(p) => load_records(p)?,
        None => {
            let mut cfg = SynthesisConfig::new(50, 40, cli.seed.wrapping_add(1));
            cfg.exact_moments = true;
            inference::synthesize_records(&params, &cfg)?
        }
    };
    let mut cfg = CounterfactualConfig::new(params, gamma_dot, delta_dot);
    if let Some(n) = cli.n {
        cfg.n = n;
    }
    cfg.solver = solver_options(cli, cfg.solver)?;
    let res = counterfactual::run_from_records(&records, &cfg)?;

    let mut buf = Vec::new();
    scenario::write_fields(&res.input, &res.decomposition, &mut buf)?;
    let (name, bytes) = table(cli, "fields", buf)?;
    emit_file(cli, &name, &bytes)?;
    let mut buf = Vec::new();
    counterfactual::write_surface(&res, &mut buf)?;
    let (name, bytes) = table(cli, "surface", buf)?;
    emit_file(cli, &name, &bytes)?;
    let summary = json!({
        "params": params,
        "gamma_dot": gamma_dot,
        "delta_dot": delta_dot,
        "bandwidth": res.bandwidth,
        "rotation": res.rotation,
        "counterclockwise": res.rotation.counterclockwise(),
        "diagnostics": res.decomposition.diagnostics,
    });
    emit_file(cli, "counterfactual.json", &json_bytes(&summary)?)
}

fn calibrate(cli: &Cli, records: Option<&Path>, targets: Option<&Path>, start: Option<&Path>) -> Outcome {
    let records = match records {
        Some(p) => load_records(p)?,
        None => inference::synthesize_records(
            &inference::REFERENCE_PARAMS,
            &SynthesisConfig::new(50, 200, cli.seed.wrapping_add(1)),
        )?,
    };
    let targets: Moments = match targets {
        Some(p) => read_json(p)?,
        None => inference::REFERENCE_MOMENTS,
    };
    let mut opts = CalibrationOptions::default();
    if let Some(p) = start {
        opts.start = read_json(p)?;
    }
    let res = inference::calibrate(&records, &targets, &opts)?;
    emit(cli, "calibration.json", &json_bytes(&res)?)
}

fn infer(cli: &Cli, records: &Path, params: Option<&Path>) -> Outcome {
    let params = load_params(params)?;
    let records = load_records(records)?;
    let skills = inference::infer_all(&records, &params)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["occupation", "earnings", "q_ratio", "manual", "cognitive"])?;
    for (r, s) in records.iter().zip(&skills) {
        w.write_record([
            r.occupation.clone(),
            r.earnings.to_string(),
            r.q_ratio.to_string(),
            s.manual.to_string(),
            s.cognitive.to_string(),
        ])?;
    }
    let buf = w.into_inner().map_err(|e| Failure::Input(e.to_string()))?;
    let (name, bytes) = table(cli, "skills", buf)?;
    emit(cli, &name, &bytes)?;
    if cli.out.is_some() {
        let moments = inference::occupation_moments(&records, &params)?;
        emit(cli, "moments.json", &json_bytes(&moments)?)?;
    }
    Ok(())
}

fn flow_cmd(cli: &Cli, grid: bool, oracle_sample: Option<usize>) -> Outcome {
    let s = load_scenario(cli)?;
    let spec = s.path.as_ref().ok_or_else(|| Failure::Input("scenario has no \"path\" block".into()))?;
    let path = spec.build()?;
    let regime = if grid {
        let g = s.grid.build()?;
        FlowRegime::Grid { density: s.density_field(&g)?, options: solver_options(cli, s.solver_options()?)? }
    } else {
        FlowRegime::Bilinear
    };
    let traj = flow::integrate_flow(&path, &regime, &[])?;
    let mut buf = Vec::new();
    scenario::write_trajectory(&traj, &mut buf)?;
    let (name, bytes) = table(cli, "trajectory", buf)?;
    emit_file(cli, &name, &bytes)?;
    if let Some(m) = oracle_sample {
        let cmp = flow::compare_with_oracle(&path, &traj, m, cli.seed.wrapping_add(2))?;
        emit_file(cli, "oracle.json", &json_bytes(&cmp)?)?;
    }
    Ok(())
}

fn assign(cli: &Cli) -> Outcome {
    let inst: DiscreteInstance = read_json(require_config(cli)?)?;
    let sol = oracle::solve_assignment(&inst.output)?;
    emit(cli, "assignment.json", &json_bytes(&sol)?)
}

fn validate(cli: &Cli, only: &[u8]) -> Outcome {
    if let Some(bad) = only.iter().find(|&&id| !(1..=12).contains(&id)) {
        return Err(Failure::Usage(format!("no criterion {bad}; expected 1-12")));
    }
    let ids: Vec<u8> = if only.is_empty() { (1..=12).collect() } else { only.to_vec() };
    let mut outcomes = Vec::new();
    for id in ids {
        let o = validation::run_criterion(id, cli.seed);
        println!("{}", o.line());
        outcomes.push(o);
    }
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("validation.json"), json_bytes(&outcomes)?)?;
    }
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("failing criteria: {}", failed.join(", "))))
    }
}
