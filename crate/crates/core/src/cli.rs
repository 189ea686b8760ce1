//! Command-line front end.
//!
//! Every subcommand is a `cmd_*` function returning the rendered primary
//! output together with a short human summary, so the same code path is used
//! by the binary and by tests. [`main_with_args`] does the printing and maps
//! errors to exit codes: 0 success, 1 domain failure, 2 usage or parse
//! failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::diagnostics::{self, ContractionReport, ErgodicCheck, InvariantMeasureEstimate, PositivityReport};
use crate::error::{Error, Result};
use crate::exact;
use crate::filter::{Belief, CostFunction, LogBase};
use crate::model::{self, PomdpModel, ValidationReport};
use crate::policy::PolicyFunction;
use crate::simulate::{self, AverageCostEstimate};
use crate::solver::{
    self, build_all_kernels, build_grid, grid_costs, policy_kernel, BeliefGrid, GridPolicy, PiaOptions, PiaReport,
    SolutionRecord,
};

pub const DEFAULT_GRID_RES: usize = 20;

const MODEL_SCHEMA: &str = "\
MODEL FILE
  UTF-8 JSON with four keys; dimensions are inferred from the arrays.

    {
      \"states\":       [\"near\", \"far\"],          labels, M entries (optional)
      \"observations\": [\"ping\", \"quiet\"],        labels, L entries (optional)
      \"transition\":   [[0.9, 0.1], [0.1, 0.9]],   M x M, rows sum to 1
      \"sensors\": [                               one object per sensor
        {\"name\": \"radar\", \"emission\": [[0.95, 0.05], [0.5, 0.5]]}
      ]                                            each emission is M x L
    }

  Row sums must be within 1e-9 of one; rows are renormalized on load.

POLICIES
  const:<a>        always use sensor a
  threshold:<t>    two-state models only: sensor 0 when belief[0] >= t, else sensor 1
  file:<path>      policy CSV written by `solve` or `--export-policy`
  pia              solve on the grid first and use the result (compare, evaluate)

FILES
  policy CSV       ordinal,belief_0..belief_{M-1},action
  solution JSON    {g, log_base, resolution, residual, iterations, fallback_used}
  entropy CSV      n,exact,oracle,cesaro_average,log_base
  evaluate CSV     method,value,half_width,log_base
  compare CSV      rank,policy,grid_g,mc_mean,mc_half_width,log_base

EXIT STATUS
  0 success, 1 domain failure (invalid model, solver failure), 2 usage or parse error";

#[derive(Debug, Parser)]
#[command(
    name = "obsched",
    version,
    about = "Sensor scheduling for hidden Markov models under an estimation-entropy cost",
    after_long_help = MODEL_SCHEMA
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a model file for shape and stochasticity defects.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Run policy iteration on the belief grid; `--out DIR` receives
    /// policy.csv and solution.json.
    Solve(RunConfig),
    /// Average cost of one policy on the grid and by simulation.
    Evaluate(RunConfig),
    /// Exact conditional entropies for n = 0..horizon and their Cesàro average.
    Entropy(RunConfig),
    /// Drift contraction, invariant measure, and gain consistency reports.
    Diagnose(RunConfig),
    /// Rank several policies by grid gain and simulation.
    Compare(RunConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostKind {
    Entropy,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitPolicy {
    /// Sensor 0 everywhere.
    Const0,
    /// One-step lookahead on the exact belief update.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMethod {
    Both,
    Grid,
    Mc,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySource {
    Constant(usize),
    Threshold(f64),
    File(PathBuf),
    Pia,
}

impl FromStr for PolicySource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "pia" {
            return Ok(PolicySource::Pia);
        }
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| format!("expected const:<a>, threshold:<θ>, file:<path> or pia, got {s:?}"))?;
        match kind {
            "const" => arg
                .parse()
                .map(PolicySource::Constant)
                .map_err(|_| format!("bad sensor index {arg:?}")),
            "threshold" => match arg.parse::<f64>() {
                Ok(t) if t.is_finite() => Ok(PolicySource::Threshold(t)),
                _ => Err(format!("bad threshold {arg:?}")),
            },
            "file" if !arg.is_empty() => Ok(PolicySource::File(PathBuf::from(arg))),
            _ => Err(format!("unknown policy kind {kind:?}")),
        }
    }
}

impl std::fmt::Display for PolicySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicySource::Constant(a) => write!(f, "const:{a}"),
            PolicySource::Threshold(t) => write!(f, "threshold:{t}"),
            PolicySource::File(p) => write!(f, "file:{}", p.display()),
            PolicySource::Pia => write!(f, "pia"),
        }
    }
}

/// Options shared by the numeric subcommands. Flags a subcommand does not
/// use are accepted and ignored.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Model JSON file (schema under --help).
    #[arg(long)]
    pub model: PathBuf,
    /// Grid resolution r; cells are the beliefs k/r [default: 20, or the
    /// policy file's own grid when evaluating one].
    #[arg(long)]
    pub grid_res: Option<usize>,
    #[arg(long, value_enum, default_value_t = CostKind::Entropy)]
    pub cost: CostKind,
    /// Logarithm base for entropy: 2 (bits) or e (nats).
    #[arg(long, default_value = "2")]
    pub log_base: LogBase,
    /// Depth of the exact observation tree (entropy).
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    /// Simulated steps per chain, burn-in included.
    #[arg(long, default_value_t = 100_000)]
    pub steps: usize,
    /// Discarded steps per chain [default: steps / 10].
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Independent simulation chains; chain k uses seed + k.
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// const:<a> | threshold:<θ> | file:<path> | pia; repeat for compare.
    #[arg(long)]
    pub policy: Vec<PolicySource>,
    /// Initial belief as comma-separated probabilities [default: uniform].
    #[arg(long, value_delimiter = ',')]
    pub x0: Option<Vec<f64>>,
    /// Output file (directory for solve); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    /// Starting schedule for policy iteration.
    #[arg(long, value_enum, default_value_t = InitPolicy::Const0)]
    pub init: InitPolicy,
    #[arg(long, default_value_t = solver::pia::DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    /// Also write the evaluated schedule as a policy CSV.
    #[arg(long)]
    pub export_policy: Option<PathBuf>,
    /// Which evaluations to run (evaluate, compare).
    #[arg(long, value_enum, default_value_t = EvalMethod::Both)]
    pub method: EvalMethod,
    /// Weight u = 1 + θ·h for the drift check (diagnose).
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    /// Random simplex points added to the grid in the drift check (diagnose).
    #[arg(long, default_value_t = diagnostics::DEFAULT_RANDOM_POINTS)]
    pub random_points: usize,
}

#[derive(Debug, Parser)]
struct ConfigOnly {
    #[command(flatten)]
    config: RunConfig,
}

impl RunConfig {
    /// Parses flags as the subcommands do, without a subcommand name.
    pub fn from_args<I, T>(args: I) -> std::result::Result<Self, clap::Error>
    where
        I: IntoIterator<Item = T>,
        T: Into<OsString> + Clone,
    {
        let argv = std::iter::once(OsString::from("obsched")).chain(args.into_iter().map(Into::into));
        ConfigOnly::try_parse_from(argv).map(|c| c.config)
    }

    pub fn cost_function(&self) -> CostFunction {
        match self.cost {
            CostKind::Entropy => CostFunction::entropy(self.log_base),
            CostKind::Quadratic => CostFunction::Quadratic,
        }
    }

    fn cost_label(&self) -> &'static str {
        match self.cost {
            CostKind::Entropy => "entropy",
            CostKind::Quadratic => "quadratic",
        }
    }

    /// Unit attached to printed values.
    fn unit(&self) -> &'static str {
        match self.cost {
            CostKind::Entropy => self.log_base.unit(),
            CostKind::Quadratic => "(quadratic)",
        }
    }

    pub fn resolution(&self) -> usize {
        self.grid_res.unwrap_or(DEFAULT_GRID_RES)
    }

    fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or_else(|| simulate::default_burn_in(self.steps))
    }

    /// Loads the model and checks every numeric flag before any work starts.
    fn prepare(&self) -> Result<Prepared> {
        if self.grid_res == Some(0) {
            return Err(Error::InvalidResolution);
        }
        if self.chains == 0 {
            return Err(Error::InvalidArgument("--chains must be at least 1".into()));
        }
        if self.steps <= self.burn_in() {
            return Err(Error::InvalidArgument(format!(
                "--steps {} must exceed --burn-in {}",
                self.steps,
                self.burn_in()
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("--max-iters must be at least 1".into()));
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "--theta must be ≥ 0, got {}",
                self.theta
            )));
        }
        let model = model::load_model(&self.model)?;
        let x0 = match &self.x0 {
            None => Belief::uniform(model.num_states()),
            Some(v) => {
                if v.len() != model.num_states() {
                    return Err(Error::DimensionMismatch {
                        expected: model.num_states(),
                        actual: v.len(),
                    });
                }
                Belief::new(v.clone())?
            }
        };
        for p in &self.policy {
            if let PolicySource::Threshold(_) = p {
                if model.num_states() != 2 {
                    return Err(Error::InvalidPolicy(format!(
                        "threshold policies need a two-state model, this one has {}",
                        model.num_states()
                    )));
                }
            }
        }
        Ok(Prepared {
            cost: self.cost_function(),
            model,
            x0,
        })
    }

    fn pia_options(&self) -> PiaOptions {
        PiaOptions {
            max_iters: self.max_iters,
            ..PiaOptions::default()
        }
    }
}

struct Prepared {
    model: PomdpModel,
    cost: CostFunction,
    x0: Belief,
}

/// Rendered primary output plus a one-screen summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub body: String,
    pub summary: String,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for row in rows {
        w.write_record(&row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// validate

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateOutcome {
    pub report: ValidationReport,
    pub text: String,
}

impl ValidateOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.is_clean() {
            0
        } else {
            1
        }
    }
}

/// Parse errors propagate (exit 2); invariant violations come back in the
/// report (exit 1).
pub fn cmd_validate(path: &Path) -> Result<ValidateOutcome> {
    let text = fs::read_to_string(path)?;
    let model = model::parse_model(&text)?;
    let report = model::validate_model(&model);
    let text = if report.is_clean() {
        format!(
            "ok: {} states, {} observations, {} sensors\n",
            model.num_states(),
            model.num_observations(),
            model.num_sensors()
        )
    } else {
        report.violations.iter().map(|v| format!("{v}\n")).collect()
    };
    Ok(ValidateOutcome { report, text })
}

// ---------------------------------------------------------------------------
// solve

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub report: PiaReport,
    pub grid: Arc<BeliefGrid>,
    pub solution: SolutionRecord,
    pub solution_json: String,
    pub policy_csv: String,
    pub summary: String,
}

fn run_pia(cfg: &RunConfig, prep: &Prepared) -> Result<(Arc<BeliefGrid>, PiaReport)> {
    let grid = Arc::new(build_grid(prep.model.num_states(), cfg.resolution())?);
    let kernels = build_all_kernels(&prep.model, &grid)?;
    let init = match cfg.init {
        InitPolicy::Const0 => GridPolicy::constant(grid.len(), 0),
        InitPolicy::Greedy => solver::greedy_policy(&prep.model, &grid, &prep.cost),
    };
    let report = solver::policy_iteration_with_kernels(&grid, &kernels, &init, &prep.cost, &cfg.pia_options())?;
    Ok((grid, report))
}

/// Policy iteration on the grid. With `--out DIR` the policy and solution
/// are written to `DIR/policy.csv` and `DIR/solution.json`.
pub fn cmd_solve(cfg: &RunConfig) -> Result<SolveOutcome> {
    let prep = cfg.prepare()?;
    let (grid, report) = run_pia(cfg, &prep)?;
    let solution = SolutionRecord::from_report(&report, &grid, cfg.log_base);
    let mut solution_json = solution.to_json();
    solution_json.push('\n');
    let policy_csv = solver::policy_csv_string(&grid, &report.policy);

    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "g = {} {} ({} cost, log base {}), grid r = {} with {} cells",
        report.g(),
        cfg.unit(),
        cfg.cost_label(),
        cfg.log_base,
        grid.resolution(),
        grid.len()
    );
    let _ = writeln!(
        summary,
        "{} policy iteration(s), stopped by {:?}; residual {:.3e}{}",
        report.iterations.len(),
        report.termination,
        report.solution.residual,
        if report.solution.fallback_used {
            ", iterative fallback used"
        } else {
            ""
        }
    );
    if !report.solution.is_unichain() {
        let _ = writeln!(
            summary,
            "grid chain has {} closed classes; g is the gain from the cell nearest uniform",
            report.solution.recurrent_classes
        );
    }

    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        write_file(&dir.join("policy.csv"), &policy_csv)?;
        write_file(&dir.join("solution.json"), &solution_json)?;
    }
    if let Some(path) = &cfg.export_policy {
        write_file(path, &policy_csv)?;
    }
    Ok(SolveOutcome {
        report,
        grid,
        solution,
        solution_json,
        policy_csv,
        summary,
    })
}

// ---------------------------------------------------------------------------
// policies

/// Turns a policy source into an evaluable rule, running policy iteration
/// for `pia`.
fn resolve_policy(src: &PolicySource, cfg: &RunConfig, prep: &Prepared) -> Result<PolicyFunction> {
    let m = prep.model.num_states();
    let policy = match src {
        PolicySource::Constant(a) => PolicyFunction::Constant(*a),
        PolicySource::Threshold(t) => PolicyFunction::threshold(*t),
        PolicySource::File(path) => {
            let file = fs::File::open(path)?;
            let (grid, table) = solver::read_policy_csv(std::io::BufReader::new(file))?;
            if grid.num_states() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: grid.num_states(),
                });
            }
            PolicyFunction::grid(Arc::new(grid), table)
        }
        PolicySource::Pia => {
            let (grid, report) = run_pia(cfg, prep)?;
            PolicyFunction::grid(grid, report.policy)
        }
    };
    policy.check(m, prep.model.num_sensors())?;
    Ok(policy)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridEvaluation {
    pub g: f64,
    pub resolution: usize,
    pub residual: f64,
    pub recurrent_classes: usize,
    pub fallback_used: bool,
}

struct Evaluator<'a> {
    cfg: &'a RunConfig,
    prep: &'a Prepared,
    grid: Arc<BeliefGrid>,
    kernels: Vec<solver::ActionKernel>,
    costs: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(cfg: &'a RunConfig, prep: &'a Prepared) -> Result<Self> {
        let grid = Arc::new(build_grid(prep.model.num_states(), cfg.resolution())?);
        Self::on_grid(cfg, prep, grid)
    }

    fn on_grid(cfg: &'a RunConfig, prep: &'a Prepared, grid: Arc<BeliefGrid>) -> Result<Self> {
        let kernels = if cfg.method == EvalMethod::Mc {
            Vec::new()
        } else {
            build_all_kernels(&prep.model, &grid)?
        };
        let costs = grid_costs(&grid, &prep.cost);
        Ok(Evaluator {
            cfg,
            prep,
            grid,
            kernels,
            costs,
        })
    }

    fn grid(&self, policy: &PolicyFunction) -> Result<Option<GridEvaluation>> {
        if self.cfg.method == EvalMethod::Mc {
            return Ok(None);
        }
        let table = policy.to_grid_policy(&self.grid);
        table.check(&self.grid, self.prep.model.num_sensors())?;
        let kernel = policy_kernel(&self.kernels, &table);
        let s = solver::solve_poisson(&kernel, &self.costs, self.grid.uniform_ordinal())?;
        Ok(Some(GridEvaluation {
            g: s.g,
            resolution: self.grid.resolution(),
            residual: s.residual,
            recurrent_classes: s.recurrent_classes,
            fallback_used: s.fallback_used,
        }))
    }

    fn monte_carlo(&self, policy: &PolicyFunction) -> Result<Option<AverageCostEstimate>> {
        if self.cfg.method == EvalMethod::Grid {
            return Ok(None);
        }
        simulate::estimate_average_cost(
            &self.prep.model,
            policy,
            &self.prep.x0,
            self.cfg.steps,
            self.cfg.burn_in(),
            self.cfg.chains,
            self.cfg.seed,
            &self.prep.cost,
        )
        .map(Some)
    }
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateReport {
    pub policy: String,
    pub cost: &'static str,
    pub log_base: LogBase,
    pub seed: u64,
    pub grid: Option<GridEvaluation>,
    pub monte_carlo: Option<AverageCostEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOutcome {
    pub report: EvaluateReport,
    pub rendered: Rendered,
}

/// Grid gain and/or simulation estimate of one policy (default `const:0`).
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluateOutcome> {
    let prep = cfg.prepare()?;
    let src = match cfg.policy.as_slice() {
        [] => PolicySource::Constant(0),
        [one] => one.clone(),
        _ => {
            return Err(Error::InvalidArgument(
                "evaluate takes a single --policy; use compare for several".into(),
            ))
        }
    };
    let policy = resolve_policy(&src, cfg, &prep)?;
    let ev = match (&policy, cfg.grid_res) {
        (PolicyFunction::Grid { grid, .. }, None) => Evaluator::on_grid(cfg, &prep, grid.clone())?,
        _ => Evaluator::new(cfg, &prep)?,
    };
    if let Some(path) = &cfg.export_policy {
        write_file(
            path,
            &solver::policy_csv_string(&ev.grid, &policy.to_grid_policy(&ev.grid)),
        )?;
    }
    let report = EvaluateReport {
        policy: src.to_string(),
        cost: cfg.cost_label(),
        log_base: cfg.log_base,
        seed: cfg.seed,
        grid: ev.grid(&policy)?,
        monte_carlo: ev.monte_carlo(&policy)?,
    };

    let body = match cfg.format {
        OutputFormat::Json => to_json(&report),
        OutputFormat::Csv => {
            let base = cfg.log_base.to_string();
            let mut rows = Vec::new();
            if let Some(g) = &report.grid {
                rows.push(vec!["grid".into(), g.g.to_string(), String::new(), base.clone()]);
            }
            if let Some(mc) = &report.monte_carlo {
                rows.push(vec![
                    "monte_carlo".into(),
                    mc.mean.to_string(),
                    mc.half_width.to_string(),
                    base.clone(),
                ]);
            }
            csv_string(&["method", "value", "half_width", "log_base"], rows)
        }
    };
    let mut summary = format!(
        "policy {} ({} cost, log base {})\n",
        report.policy, report.cost, cfg.log_base
    );
    if let Some(g) = &report.grid {
        let _ = writeln!(summary, "  grid (r={}):   g = {} {}", g.resolution, g.g, cfg.unit());
    }
    if let Some(mc) = &report.monte_carlo {
        let _ = writeln!(
            summary,
            "  monte carlo:  {} ± {} {} (95%, {} chains x {} steps, burn-in {})",
            mc.mean,
            mc.half_width,
            cfg.unit(),
            mc.chains,
            mc.total_steps,
            mc.burn_in
        );
    }
    Ok(EvaluateOutcome {
        report,
        rendered: Rendered { body, summary },
    })
}

// ---------------------------------------------------------------------------
// entropy

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyRow {
    pub n: usize,
    /// Expected cost of the belief after `n` observations.
    pub exact: f64,
    /// Forward-joint chain-rule value (entropy cost only).
    pub oracle: Option<f64>,
    /// Running average of `exact` over `0..=n`.
    pub cesaro_average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReport {
    pub policy: String,
    pub cost: &'static str,
    pub log_base: LogBase,
    pub horizon: usize,
    pub rows: Vec<EntropyRow>,
    pub cesaro_average: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyOutcome {
    pub report: EntropyReport,
    pub rendered: Rendered,
}

/// Exact `H(S_n | Z_0^{n−1})` table by tree enumeration.
pub fn cmd_entropy(cfg: &RunConfig) -> Result<EntropyOutcome> {
    let prep = cfg.prepare()?;
    let src = cfg.policy.first().cloned().unwrap_or(PolicySource::Constant(0));
    let policy = resolve_policy(&src, cfg, &prep)?;
    let ces = exact::cesaro_estimation_entropy(&prep.model, &policy, &prep.x0, cfg.horizon + 1, &prep.cost)?;
    let rows = (0..=cfg.horizon)
        .map(|n| {
            let oracle = match prep.cost {
                CostFunction::Entropy { log_base } => Some(exact::conditional_entropy_oracle(
                    &prep.model,
                    &policy,
                    &prep.x0,
                    n,
                    log_base,
                )?),
                CostFunction::Quadratic => None,
            };
            Ok(EntropyRow {
                n,
                exact: ces.terms[n],
                oracle,
                cesaro_average: ces.partial_averages[n],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EntropyReport {
        policy: src.to_string(),
        cost: cfg.cost_label(),
        log_base: cfg.log_base,
        horizon: cfg.horizon,
        rows,
        cesaro_average: ces.average,
    };
    let body = match cfg.format {
        OutputFormat::Json => to_json(&report),
        OutputFormat::Csv => {
            let base = cfg.log_base.to_string();
            csv_string(
                &["n", "exact", "oracle", "cesaro_average", "log_base"],
                report.rows.iter().map(|r| {
                    vec![
                        r.n.to_string(),
                        r.exact.to_string(),
                        opt_num(r.oracle),
                        r.cesaro_average.to_string(),
                        base.clone(),
                    ]
                }),
            )
        }
    };
    let mut summary = format!(
        "policy {} ({} cost, log base {}), horizon {}\n",
        report.policy, report.cost, cfg.log_base, cfg.horizon
    );
    for r in &report.rows {
        let _ = writeln!(summary, "  n = {:>3}  {:.12}", r.n, r.exact);
    }
    let _ = writeln!(
        summary,
        "Cesàro average over n = 0..{}: {} {}",
        cfg.horizon,
        report.cesaro_average,
        cfg.unit()
    );
    Ok(EntropyOutcome {
        report,
        rendered: Rendered { body, summary },
    })
}

// ---------------------------------------------------------------------------
// diagnose

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnoseReport {
    pub policy: String,
    pub cost: &'static str,
    pub log_base: LogBase,
    pub resolution: usize,
    pub contraction: ContractionReport,
    pub invariant_measure: InvariantMeasureEstimate,
    pub gain_check: Option<ErgodicCheck>,
    pub gain_check_error: Option<String>,
    pub positivity: PositivityReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseOutcome {
    pub report: DiagnoseReport,
    pub rendered: Rendered,
}

/// Drift contraction with `u = 1 + θ·h`, grid invariant measure, and
/// Poisson gain versus `Σ μ c`. Solver failures are reported, not fatal.
pub fn cmd_diagnose(cfg: &RunConfig) -> Result<DiagnoseOutcome> {
    let prep = cfg.prepare()?;
    let src = cfg.policy.first().cloned().unwrap_or(PolicySource::Constant(0));
    let policy = resolve_policy(&src, cfg, &prep)?;
    let grid = Arc::new(build_grid(prep.model.num_states(), cfg.resolution())?);
    let weight = diagnostics::WeightFunction::entropy(cfg.theta)?;
    let contraction =
        diagnostics::check_contraction(&prep.model, &policy, &weight, &grid, cfg.random_points, cfg.seed)?;
    let kernels = build_all_kernels(&prep.model, &grid)?;
    let kernel = policy_kernel(&kernels, &policy.to_grid_policy(&grid));
    let invariant_measure = diagnostics::estimate_invariant_measure(&kernel);
    let costs = grid_costs(&grid, &prep.cost);
    let (gain_check, gain_check_error) =
        match diagnostics::ergodic_check_on_kernel(&kernel, &costs, grid.uniform_ordinal()) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let report = DiagnoseReport {
        policy: src.to_string(),
        cost: cfg.cost_label(),
        log_base: cfg.log_base,
        resolution: grid.resolution(),
        contraction,
        invariant_measure,
        gain_check,
        gain_check_error,
        positivity: diagnostics::model_positivity_report(&prep.model),
    };
    let body = to_json(&report);

    let mut s = format!(
        "policy {} ({} cost, log base {}), grid r = {}\n",
        report.policy, report.cost, cfg.log_base, report.resolution
    );
    let c = &report.contraction;
    let _ = writeln!(
        s,
        "drift check, u = 1 + {}·h: worst ratio {} over {} points; {}",
        cfg.theta, c.worst_ratio, c.points_checked, c.verdict
    );
    let mu = &report.invariant_measure;
    let _ = writeln!(
        s,
        "invariant measure: {} after {} iterations (TV gap {:.3e}), {} closed class(es){}",
        if mu.converged { "converged" } else { "not converged" },
        mu.iterations,
        mu.tv_gap,
        mu.recurrent_classes,
        if mu.unique { "" } else { ", not unique" }
    );
    match (&report.gain_check, &report.gain_check_error) {
        (Some(g), _) => {
            let _ = writeln!(
                s,
                "gain check: Poisson g = {}, Σ μ·c = {}, gap {:.3e} {}",
                g.g_poisson,
                g.integral_mu_c,
                g.gap,
                cfg.unit()
            );
        }
        (None, Some(e)) => {
            let _ = writeln!(s, "gain check failed: {e}");
        }
        (None, None) => {}
    }
    let p = &report.positivity;
    let _ = writeln!(
        s,
        "Q {}; strictly positive sensors: {:?}",
        match p.primitive_power {
            Some(k) => format!("primitive (Q^{k} > 0)"),
            None => "not primitive".to_string(),
        },
        p.sensors_strictly_positive
    );
    Ok(DiagnoseOutcome {
        report,
        rendered: Rendered { body, summary: s },
    })
}

// ---------------------------------------------------------------------------
// compare

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub rank: usize,
    pub policy: String,
    pub grid_g: Option<f64>,
    pub mc_mean: Option<f64>,
    pub mc_half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub cost: &'static str,
    pub log_base: LogBase,
    pub resolution: usize,
    pub seed: u64,
    pub rows: Vec<CompareRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOutcome {
    pub report: CompareReport,
    pub rendered: Rendered,
}

/// Ranks policies by grid gain (simulated mean when the grid is skipped).
/// Without `--policy`, compares every constant sensor and `pia`.
pub fn cmd_compare(cfg: &RunConfig) -> Result<CompareOutcome> {
    let prep = cfg.prepare()?;
    let sources: Vec<PolicySource> = if cfg.policy.is_empty() {
        (0..prep.model.num_sensors())
            .map(PolicySource::Constant)
            .chain(std::iter::once(PolicySource::Pia))
            .collect()
    } else {
        cfg.policy.clone()
    };
    let ev = Evaluator::new(cfg, &prep)?;
    let mut rows = sources
        .iter()
        .map(|src| {
            let policy = resolve_policy(src, cfg, &prep)?;
            let grid = ev.grid(&policy)?;
            let mc = ev.monte_carlo(&policy)?;
            Ok(CompareRow {
                rank: 0,
                policy: src.to_string(),
                grid_g: grid.map(|g| g.g),
                mc_mean: mc.as_ref().map(|m| m.mean),
                mc_half_width: mc.map(|m| m.half_width),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let key = |r: &CompareRow| r.grid_g.or(r.mc_mean).unwrap_or(f64::INFINITY);
    rows.sort_by(|a, b| key(a).total_cmp(&key(b)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    let report = CompareReport {
        cost: cfg.cost_label(),
        log_base: cfg.log_base,
        resolution: cfg.resolution(),
        seed: cfg.seed,
        rows,
    };
    let body = match cfg.format {
        OutputFormat::Json => to_json(&report),
        OutputFormat::Csv => {
            let base = cfg.log_base.to_string();
            csv_string(
                &["rank", "policy", "grid_g", "mc_mean", "mc_half_width", "log_base"],
                report.rows.iter().map(|r| {
                    vec![
                        r.rank.to_string(),
                        r.policy.clone(),
                        opt_num(r.grid_g),
                        opt_num(r.mc_mean),
                        opt_num(r.mc_half_width),
                        base.clone(),
                    ]
                }),
            )
        }
    };
    let mut s = format!(
        "{} cost, log base {} ({}), grid r = {}\n{:>4}  {:<24} {:>14} {:>14} {:>12}\n",
        report.cost,
        cfg.log_base,
        cfg.unit(),
        cfg.resolution(),
        "rank",
        "policy",
        "grid g",
        "mc mean",
        "± 95%"
    );
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:>4}  {:<24} {:>14} {:>14} {:>12}",
            r.rank,
            r.policy,
            cell(r.grid_g),
            cell(r.mc_mean),
            cell(r.mc_half_width)
        );
    }
    Ok(CompareOutcome {
        report,
        rendered: Rendered { body, summary: s },
    })
}

// ---------------------------------------------------------------------------
// entry point

/// Exit status for an error: 2 for bad input or flags, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_)
        | Error::Parse(_)
        | Error::InvalidPolicy(_)
        | Error::InvalidArgument(_)
        | Error::InvalidResolution
        | Error::DimensionMismatch { .. }
        | Error::SensorOutOfRange { .. } => 2,
        _ => 1,
    }
}

/// Body goes to `--out` (summary to stdout) or to stdout (summary to stderr).
fn emit(out: Option<&Path>, r: &Rendered) -> Result<()> {
    match out {
        Some(path) => {
            write_file(path, &r.body)?;
            print!("{}", r.summary);
        }
        None => {
            eprint!("{}", r.summary);
            print!("{}", r.body);
        }
    }
    Ok(())
}

fn run(command: &Command) -> Result<i32> {
    match command {
        Command::Validate { model } => {
            let outcome = cmd_validate(model)?;
            print!("{}", outcome.text);
            Ok(outcome.exit_code())
        }
        Command::Solve(cfg) => {
            let o = cmd_solve(cfg)?;
            if cfg.out.is_some() {
                print!("{}", o.summary);
            } else {
                eprint!("{}", o.summary);
                print!("{}", o.solution_json);
            }
            Ok(0)
        }
        Command::Evaluate(cfg) => emit(cfg.out.as_deref(), &cmd_evaluate(cfg)?.rendered).map(|_| 0),
        Command::Entropy(cfg) => emit(cfg.out.as_deref(), &cmd_entropy(cfg)?.rendered).map(|_| 0),
        Command::Diagnose(cfg) => emit(cfg.out.as_deref(), &cmd_diagnose(cfg)?.rendered).map(|_| 0),
        Command::Compare(cfg) => emit(cfg.out.as_deref(), &cmd_compare(cfg)?.rendered).map(|_| 0),
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
