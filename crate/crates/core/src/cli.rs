//! Command-line front end: one subcommand per pipeline stage plus `run`,
//! which chains them from a JSON config.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    compare_distributions, fidelity, husimi_q, husimi_spin, reconstruct_density, sse_phase_histogram, wigner, GridSpec,
    Histogram, SsePhaseConfig,
};
use crate::dynamics::{simulate_trajectory, steady_state, DensityOperator, Scheme, TrajectoryConfig};
use crate::error::{Error, Result};
use crate::io::{fmt_float, read_json, write_json};
use crate::limit_cycle::{default_initial_state, find_limit_cycle, CycleOptions, LimitCycle, LimitCycleJson};
use crate::models::{LindbladModel, ModelConfig, PRESETS};
use crate::operator::{make_annihilation, make_generator_basis, Ket, KetJson, Operator, C64};
use crate::phase_equation::{
    add_perturbation, build_phase_sde, stationary_distribution, PhaseSDE, PhaseScheme, PhaseSdeJson, PhaseSimConfig,
};
use crate::prc::{prc_direct_curve, prc_table, PRCTable, PrcMethod, PrcOptions, DEFAULT_EPS};

#[derive(Parser, Debug)]
#[command(name = "qphase", version, about = "Phase reduction for monitored quantum limit-cycle oscillators")]
pub struct Cli {
    /// Worker threads (default: QPHASE_THREADS or all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// List or dump catalog models.
    Model {
        #[command(subcommand)]
        action: ModelAction,
    },
    /// Find the deterministic limit cycle.
    LimitCycle(LimitCycleArgs),
    /// Phase response curves.
    Prc(PrcArgs),
    /// Build the phase SDE from a cycle and its PRC table.
    BuildSde(BuildSdeArgs),
    /// Simulate SSE trajectories and write homodyne currents.
    SimulateSse(SimulateSseArgs),
    /// Stationary phase histogram of a phase SDE.
    SimulatePhase(SimulatePhaseArgs),
    /// Density operator from a phase histogram.
    Reconstruct(ReconstructArgs),
    /// Wigner or Husimi function of a density operator.
    Wigner(WignerArgs),
    /// Uhlmann fidelity of two density operators.
    Fidelity(FidelityArgs),
    /// Run the pipeline from a config file.
    Run(RunArgs),
}

#[derive(Subcommand, Debug)]
pub enum ModelAction {
    List,
    /// Print the operators of a preset name or a config file.
    Show { model: String },
}

#[derive(Args, Debug)]
pub struct LimitCycleArgs {
    /// Model config JSON or preset name.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 512)]
    pub n_grid: usize,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_relax: Option<f64>,
    /// Initial state (ket JSON with re/im arrays).
    #[arg(long)]
    pub psi0: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BasisKind {
    Sun,
}

#[derive(Args, Debug)]
pub struct PrcArgs {
    #[arg(long)]
    pub lc: PathBuf,
    #[arg(long, value_enum, default_value = "sun")]
    pub basis: BasisKind,
    /// Perturbation operator JSON; with --direct the PRC of this operator.
    #[arg(long)]
    pub hp: Option<PathBuf>,
    #[arg(long, requires = "hp")]
    pub direct: bool,
    #[arg(long, default_value_t = 64)]
    pub n_theta: usize,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, value_enum, default_value = "chart")]
    pub method: MethodArg,
    #[arg(long)]
    pub richardson: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Chart,
    Generator,
}

impl From<MethodArg> for PrcMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Chart => PrcMethod::Chart,
            MethodArg::Generator => PrcMethod::Generator,
        }
    }
}

#[derive(Args, Debug)]
pub struct BuildSdeArgs {
    #[arg(long)]
    pub lc: PathBuf,
    #[arg(long)]
    pub prc: PathBuf,
    #[arg(long)]
    pub perturb: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0, requires = "perturb")]
    pub eps: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Ito,
    Stratonovich,
}

#[derive(Args, Debug)]
pub struct SimulateSseArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub dt: f64,
    #[arg(long)]
    pub t_end: f64,
    #[arg(long, default_value_t = 1)]
    pub n_traj: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "ito")]
    pub scheme: SchemeArg,
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    /// Append Re/Im state amplitudes to each row.
    #[arg(long)]
    pub amplitudes: bool,
    #[arg(long)]
    pub psi0: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulatePhaseArgs {
    #[arg(long)]
    pub sde: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub n_traj: usize,
    /// Defaults to 200 / omega.
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Defaults to 0.02 / max|drift|.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub n_bins: usize,
    #[arg(long, value_enum, default_value = "ito")]
    pub scheme: SchemeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub hist: PathBuf,
    #[arg(long)]
    pub lc: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum QuasiKind {
    Wigner,
    Husimi,
    SpinHusimi,
}

#[derive(Args, Debug)]
pub struct WignerArgs {
    #[arg(long)]
    pub rho: PathBuf,
    #[arg(long, value_enum, default_value = "wigner")]
    pub kind: QuasiKind,
    /// Half-width of the square x-p window.
    #[arg(long)]
    pub range: Option<f64>,
    #[arg(long, default_value_t = 201)]
    pub points: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FidelityArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    pub config: PathBuf,
    /// Reuse lc.json (and prc.csv) already present in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Overrides the config's output_dir.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Exit status: 0 ok, 1 numeric failure, 2 usage or config error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::Parse(_)
        | Error::UnknownModel(_)
        | Error::InvalidParameter(_)
        | Error::InvalidDimension(_)
        | Error::DimensionMismatch { .. }
        | Error::GridMismatch(_)
        | Error::BinningMismatch(..)
        | Error::NonHermitian(_) => 2,
        _ => 1,
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e}");
        return 2;
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("QPHASE_THREADS") {
            Ok(s) => Some(
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidParameter(format!("QPHASE_THREADS='{s}' is not a count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Model { action } => cmd_model(action),
        Command::LimitCycle(a) => cmd_limit_cycle(a),
        Command::Prc(a) => cmd_prc(a),
        Command::BuildSde(a) => cmd_build_sde(a),
        Command::SimulateSse(a) => cmd_simulate_sse(a),
        Command::SimulatePhase(a) => cmd_simulate_phase(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Wigner(a) => cmd_wigner(a),
        Command::Fidelity(a) => cmd_fidelity(a),
        Command::Run(a) => run_pipeline(&a.config, a.resume, a.out_dir.as_deref()).map(|_| ()),
    }
}

/// A preset name or the path of a model config file.
pub fn load_model_config(spec: &str) -> Result<ModelConfig> {
    let path = Path::new(spec);
    if path.exists() {
        read_json(path)
    } else if PRESETS.contains(&spec) {
        ModelConfig::preset(spec)
    } else {
        Err(Error::InvalidParameter(format!("'{spec}' is neither a file nor a preset model")))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn load_lc(path: &Path) -> Result<LimitCycle> {
    LimitCycle::from_json(&read_json::<LimitCycleJson>(path)?)
}

pub fn load_operator(path: &Path) -> Result<Operator> {
    read_json(path)
}

/// Reads an operator JSON as a density operator; validation is left to the
/// consumer so that tiny negative eigenvalues can be clipped.
pub fn load_density(path: &Path) -> Result<DensityOperator> {
    let op: Operator = read_json(path)?;
    let tr = op.trace();
    if (tr.re - 1.0).abs() > 1e-6 || tr.im.abs() > 1e-6 || op.hermiticity_error() > 1e-8 {
        return Err(Error::InvalidParameter(format!(
            "{}: not a unit-trace Hermitian matrix",
            path.display()
        )));
    }
    Ok(DensityOperator::new_unchecked(op.into_matrix()))
}

pub fn save_density(path: &Path, rho: &DensityOperator) -> Result<()> {
    write_json(path, &Operator::new(rho.matrix().clone())?)
}

fn initial_state(path: Option<&Path>, n: usize) -> Result<Ket> {
    match path {
        Some(p) => {
            let k = Ket::try_from(&read_json::<KetJson>(p)?)?;
            if k.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: k.dim(),
                });
            }
            Ok(k)
        }
        None => default_initial_state(n),
    }
}

fn cmd_model(action: ModelAction) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match action {
        ModelAction::List => {
            for name in PRESETS {
                let cfg = ModelConfig::preset(name)?;
                writeln!(out, "{name}\t{}\t{}", cfg.model, serde_json::to_string(&cfg.params)?)?;
            }
        }
        ModelAction::Show { model } => {
            let m = LindbladModel::from_config(&load_model_config(&model)?)?;
            serde_json::to_writer_pretty(&mut out, &m)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn cmd_limit_cycle(a: LimitCycleArgs) -> Result<()> {
    let model = LindbladModel::from_config(&load_model_config(&a.model)?)?;
    let psi0 = initial_state(a.psi0.as_deref(), model.n)?;
    let opts = CycleOptions {
        n_grid: a.n_grid,
        dt: a.dt,
        t_relax: a.t_relax,
        ..Default::default()
    };
    let lc = find_limit_cycle(&model, &psi0, &opts)?;
    write_json(&a.out, &lc.to_json())?;
    eprintln!("T = {}, omega = {}", fmt_float(lc.period()), fmt_float(lc.omega()));
    Ok(())
}

fn cmd_prc(a: PrcArgs) -> Result<()> {
    let lc = load_lc(&a.lc)?;
    let opts = PrcOptions {
        eps: a.eps,
        method: a.method.into(),
        richardson: a.richardson,
        isochron_periods: None,
    };
    if a.direct {
        let hp = load_operator(a.hp.as_deref().expect("clap enforces --hp"))?;
        let (theta, z) = prc_direct_curve(&lc, &hp, a.n_theta, &opts)?;
        let mut w = csv::Writer::from_writer(create(&a.out)?);
        w.write_record(["theta", "Z"])?;
        for (t, v) in theta.iter().zip(&z) {
            w.write_record([fmt_float(*t), fmt_float(*v)])?;
        }
        w.flush()?;
        return Ok(());
    }
    let basis = make_generator_basis(lc.model().n)?;
    let table = prc_table(&lc, &basis, a.n_theta, &opts)?;
    match a.hp {
        // with --hp but no --direct: the generator combination for Hp
        Some(hp) => {
            let hp = load_operator(&hp)?;
            let f = crate::lie_decomp::perturbation_coeffs(&hp, &basis)?;
            let z = table.combine(f.as_slice())?;
            let mut w = csv::Writer::from_writer(create(&a.out)?);
            w.write_record(["theta", "Z"])?;
            for (t, v) in table.theta.iter().zip(&z) {
                w.write_record([fmt_float(*t), fmt_float(*v)])?;
            }
            w.flush()?;
        }
        None => table.write_csv(create(&a.out)?)?,
    }
    Ok(())
}

fn warn_eps(eps: f64) {
    if eps > 0.2 {
        eprintln!("warning: perturbation strength {eps} is not small; the phase equation assumes eps << 1");
    }
}

fn cmd_build_sde(a: BuildSdeArgs) -> Result<()> {
    let lc = load_lc(&a.lc)?;
    let model = lc.model().clone();
    let basis = make_generator_basis(model.n)?;
    let table = PRCTable::read_csv(open(&a.prc)?, DEFAULT_EPS)?;
    let mut sde = build_phase_sde(&lc, &table, &model, &basis)?;
    if let Some(p) = a.perturb {
        warn_eps(a.eps);
        let hp = load_operator(&p)?;
        sde = add_perturbation(&sde, &hp, a.eps, &table, &basis)?;
    }
    write_json(&a.out, &sde.to_json())
}

fn scheme_of(s: SchemeArg) -> Scheme {
    match s {
        SchemeArg::Ito => Scheme::ItoEuler,
        SchemeArg::Stratonovich => Scheme::StratonovichHeun,
    }
}

fn phase_scheme_of(s: SchemeArg) -> PhaseScheme {
    match s {
        SchemeArg::Ito => PhaseScheme::Ito,
        SchemeArg::Stratonovich => PhaseScheme::Stratonovich,
    }
}

fn cmd_simulate_sse(a: SimulateSseArgs) -> Result<()> {
    let model = LindbladModel::from_config(&load_model_config(&a.model)?)?;
    let psi0 = initial_state(a.psi0.as_deref(), model.n)?;
    if a.n_traj == 0 {
        return Err(Error::InvalidParameter("n_traj must be positive".into()));
    }
    let mut cfg = TrajectoryConfig::new(a.dt, a.t_end, a.seed, scheme_of(a.scheme));
    cfg.record_every = a.record_every;
    cfg.record_states = a.amplitudes;
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    let mut header = vec!["traj".to_string(), "t".into(), "k".into(), "J".into()];
    if a.amplitudes {
        for i in 0..model.n {
            header.push(format!("re{i}"));
            header.push(format!("im{i}"));
        }
    }
    w.write_record(&header)?;
    for idx in 0..a.n_traj as u64 {
        cfg.trajectory_index = idx;
        let traj = simulate_trajectory(&psi0, &model, &cfg)?;
        for (i, (t, js)) in traj.times.iter().zip(&traj.currents).enumerate() {
            for (k, j) in js.iter().enumerate() {
                let mut row = vec![idx.to_string(), fmt_float(*t), k.to_string(), fmt_float(*j)];
                if a.amplitudes {
                    for z in traj.states[i].amplitudes().iter() {
                        row.push(fmt_float(z.re));
                        row.push(fmt_float(z.im));
                    }
                }
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// dt with dt * max|drift| = 0.02.
pub fn default_phase_dt(sde: &PhaseSDE) -> f64 {
    0.02 / sde.max_drift().max(1e-12)
}

fn cmd_simulate_phase(a: SimulatePhaseArgs) -> Result<()> {
    let sde = PhaseSDE::from_json(&read_json::<PhaseSdeJson>(&a.sde)?)?;
    let t_end = a.t_end.unwrap_or(200.0 / sde.omega().abs().max(1e-12));
    let mut cfg = PhaseSimConfig::new(a.n_traj, t_end, a.dt.unwrap_or_else(|| default_phase_dt(&sde)), a.seed, a.n_bins);
    cfg.scheme = phase_scheme_of(a.scheme);
    let h = stationary_distribution(&sde, &cfg)?;
    h.write_csv(create(&a.out)?)
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<()> {
    let h = Histogram::read_csv(open(&a.hist)?)?;
    let lc = load_lc(&a.lc)?;
    save_density(&a.out, &reconstruct_density(&h, &lc)?)
}

fn cmd_wigner(a: WignerArgs) -> Result<()> {
    let rho = load_density(&a.rho)?;
    let mut spec = GridSpec::default_for(rho.dim());
    if let Some(r) = a.range {
        spec.x_min = -r;
        spec.x_max = r;
        spec.p_min = -r;
        spec.p_max = r;
    }
    spec.nx = a.points;
    spec.np = a.points;
    let grid = match a.kind {
        QuasiKind::Wigner => wigner(&rho, &spec)?,
        QuasiKind::Husimi => husimi_q(&rho, &spec)?,
        QuasiKind::SpinHusimi => husimi_spin(&rho, a.points, a.points)?,
    };
    if grid.truncation_warning {
        eprintln!("warning: top Fock level population exceeds 1e-3; the transform is truncation-limited");
    }
    grid.write_csv(create(&a.out)?)
}

fn cmd_fidelity(a: FidelityArgs) -> Result<()> {
    let f = fidelity(&load_density(&a.a)?, &load_density(&a.b)?)?;
    println!("{}", fmt_float(f));
    Ok(())
}

/// Named or explicit perturbation Hamiltonian.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HpSpec {
    /// "drive": i (a^dag - a) on the truncated Fock space.
    Named(String),
    Matrix(Operator),
}

impl HpSpec {
    pub fn resolve(&self, n: usize) -> Result<Operator> {
        match self {
            HpSpec::Matrix(op) => Ok(op.clone()),
            HpSpec::Named(s) if s == "drive" => {
                let a = make_annihilation(n)?;
                Operator::hermitian((a.matrix().adjoint() - a.matrix()) * C64::new(0.0, 1.0))
            }
            HpSpec::Named(s) => Err(Error::InvalidParameter(format!("unknown perturbation '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub hp: HpSpec,
    pub eps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    LimitCycle,
    Prc,
    Sde,
    Phase,
    Sse,
    Reconstruct,
    Wigner,
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::LimitCycle, Stage::Prc, Stage::Sde, Stage::Phase, Stage::Reconstruct]
}

fn default_n_grid() -> usize {
    256
}

fn default_n_theta() -> usize {
    64
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_n_bins() -> usize {
    64
}

fn default_phase_traj() -> usize {
    10_000
}

fn default_periods() -> f64 {
    200.0
}

fn default_sse_traj() -> usize {
    100
}

fn default_sse_periods() -> f64 {
    100.0
}

fn default_stride() -> usize {
    50
}

/// Pipeline configuration (config.json for `run`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    #[serde(default = "default_n_grid")]
    pub n_grid: usize,
    #[serde(default)]
    pub cycle_dt: Option<f64>,
    #[serde(default = "default_n_theta")]
    pub n_theta: usize,
    #[serde(default = "default_eps")]
    pub prc_eps: f64,
    #[serde(default)]
    pub prc_method: Option<PrcMethod>,
    #[serde(default = "default_n_bins")]
    pub n_bins: usize,
    #[serde(default = "default_phase_traj")]
    pub phase_n_traj: usize,
    /// Phase-equation run length in periods.
    #[serde(default = "default_periods")]
    pub phase_periods: f64,
    #[serde(default)]
    pub phase_dt: Option<f64>,
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default = "default_sse_traj")]
    pub sse_n_traj: usize,
    #[serde(default = "default_sse_periods")]
    pub sse_periods: f64,
    #[serde(default)]
    pub sse_dt: Option<f64>,
    #[serde(default = "default_stride")]
    pub sse_stride: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.n_grid < 16 || self.n_theta == 0 || self.n_bins == 0 {
            return bad("n_grid >= 16, n_theta >= 1 and n_bins >= 1 are required");
        }
        if self.phase_n_traj == 0 || !(self.phase_periods > 0.0) || self.sse_n_traj == 0 || !(self.sse_periods > 0.0) {
            return bad("trajectory counts and run lengths must be positive");
        }
        if self.sse_stride == 0 {
            return bad("sse_stride must be positive");
        }
        let has = |s| self.stages.contains(&s);
        let needs_lc = [Stage::Prc, Stage::Sde, Stage::Phase, Stage::Sse, Stage::Reconstruct]
            .iter()
            .any(|s| has(*s));
        if needs_lc && !has(Stage::LimitCycle) {
            return bad("stages after limit_cycle need the limit_cycle stage");
        }
        if (has(Stage::Sde) && !has(Stage::Prc)) || (has(Stage::Phase) && !has(Stage::Sde)) {
            return bad("stages must form a prefix chain limit_cycle -> prc -> sde -> phase");
        }
        if has(Stage::Reconstruct) && !has(Stage::Phase) && !has(Stage::Sse) {
            return bad("reconstruct needs a phase or sse stage");
        }
        if let Some(p) = &self.perturbation {
            if !(p.eps >= 0.0) {
                return bad("perturbation eps must be nonnegative");
            }
        }
        Ok(())
    }
}

/// Summary written to report.json.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Report {
    pub status: String,
    pub model: String,
    pub completed: Vec<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub metrics: BTreeMap<String, f64>,
}

/// Runs a pipeline config; artifacts of completed stages are kept when a
/// later stage fails, and report.json names the failing stage.
pub fn run_pipeline(config: &Path, resume: bool, out_dir: Option<&Path>) -> Result<Report> {
    let cfg: RunConfig = read_json(config)?;
    cfg.validate()?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&dir)?;
    let mut report = Report {
        status: "ok".into(),
        model: cfg.model.model.clone(),
        ..Default::default()
    };
    let mut current = None;
    let result = run_stages(&cfg, &dir, resume, &mut report, &mut current);
    if let Err(e) = &result {
        report.status = "failed".into();
        report.failed_stage = current;
        report.error = Some(e.to_string());
    }
    write_json(&dir.join("report.json"), &report)?;
    result.map(|_| report)
}

fn run_stages(
    cfg: &RunConfig,
    dir: &Path,
    resume: bool,
    report: &mut Report,
    current: &mut Option<Stage>,
) -> Result<()> {
    let has = |s| cfg.stages.contains(&s);
    let model = LindbladModel::from_config(&cfg.model)?;
    let lc_path = dir.join("lc.json");
    let prc_path = dir.join("prc.csv");

    let lc = if has(Stage::LimitCycle) {
        *current = Some(Stage::LimitCycle);
        let lc = if resume && lc_path.exists() {
            let lc = load_lc(&lc_path)?;
            if lc.model().config != cfg.model || lc.n_grid() != cfg.n_grid {
                return Err(Error::InvalidParameter(format!(
                    "{} was computed for a different model or grid",
                    lc_path.display()
                )));
            }
            lc
        } else {
            let opts = CycleOptions {
                n_grid: cfg.n_grid,
                dt: cfg.cycle_dt,
                ..Default::default()
            };
            let lc = find_limit_cycle(&model, &default_initial_state(model.n)?, &opts)?;
            write_json(&lc_path, &lc.to_json())?;
            lc
        };
        report.metrics.insert("T".into(), lc.period());
        report.metrics.insert("omega".into(), lc.omega());
        report.metrics.insert("floquet_multiplier".into(), lc.floquet_multiplier());
        report.completed.push(Stage::LimitCycle);
        Some(lc)
    } else {
        None
    };

    let basis = make_generator_basis(model.n)?;
    let table = match (&lc, has(Stage::Prc)) {
        (Some(lc), true) => {
            *current = Some(Stage::Prc);
            let table = if resume && prc_path.exists() {
                PRCTable::read_csv(open(&prc_path)?, cfg.prc_eps)?
            } else {
                let opts = PrcOptions {
                    eps: cfg.prc_eps,
                    method: cfg.prc_method.unwrap_or(PrcMethod::Chart),
                    richardson: false,
                    isochron_periods: None,
                };
                let t = prc_table(lc, &basis, cfg.n_theta, &opts)?;
                t.write_csv(create(&prc_path)?)?;
                t
            };
            report.completed.push(Stage::Prc);
            Some(table)
        }
        _ => None,
    };

    let sde = match (&lc, &table, has(Stage::Sde)) {
        (Some(lc), Some(table), true) => {
            *current = Some(Stage::Sde);
            let mut sde = build_phase_sde(lc, table, &model, &basis)?;
            if let Some(p) = &cfg.perturbation {
                warn_eps(p.eps);
                sde = add_perturbation(&sde, &p.hp.resolve(model.n)?, p.eps, table, &basis)?;
            }
            write_json(&dir.join("sde.json"), &sde.to_json())?;
            report.completed.push(Stage::Sde);
            Some(sde)
        }
        _ => None,
    };

    let uniform = 1.0 / std::f64::consts::TAU;
    let phase_hist = match (&lc, &sde, has(Stage::Phase)) {
        (Some(lc), Some(sde), true) => {
            *current = Some(Stage::Phase);
            let sim = PhaseSimConfig::new(
                cfg.phase_n_traj,
                cfg.phase_periods * lc.period(),
                cfg.phase_dt.unwrap_or_else(|| default_phase_dt(sde)),
                cfg.seed,
                cfg.n_bins,
            );
            let h = stationary_distribution(sde, &sim)?;
            h.write_csv(create(&dir.join("hist.csv"))?)?;
            report.metrics.insert("phase_max_density".into(), h.max_density());
            report.metrics.insert("max_over_uniform".into(), h.max_density() / uniform);
            report.completed.push(Stage::Phase);
            Some(h)
        }
        _ => None,
    };

    let sse_hist = match (&lc, has(Stage::Sse)) {
        (Some(lc), true) => {
            *current = Some(Stage::Sse);
            let sim_model = match &cfg.perturbation {
                Some(p) => model.with_perturbation(&p.hp.resolve(model.n)?, p.eps)?,
                None => model.clone(),
            };
                        let sc = SsePhaseConfig {
                n_traj: cfg.sse_n_traj,
                t_end: cfg.sse_periods * lc.period(),
                dt: cfg.sse_dt.unwrap_or(1e-3),
                seed: cfg.seed,
                n_bins: cfg.n_bins,
                stride: cfg.sse_stride,
                discard: 0.2,
                scheme: Scheme::ItoEuler,
                isochron_periods: 0,
            };
            let h = sse_phase_histogram(lc, &sim_model, &lc.state_at(0.0), &sc)?;
            h.write_csv(create(&dir.join("sse_hist.csv"))?)?;
            report.metrics.insert("sse_max_density".into(), h.max_density());
            if let Some(p) = &phase_hist {
                report.metrics.insert("tv_sse_phase".into(), compare_distributions(&h, p)?);
            }
            report.completed.push(Stage::Sse);
            Some(h)
        }
        _ => None,
    };

    if let (Some(lc), true) = (&lc, has(Stage::Reconstruct)) {
        *current = Some(Stage::Reconstruct);
        let h = phase_hist.as_ref().or(sse_hist.as_ref()).expect("validated stage chain");
        let rho = reconstruct_density(h, lc)?;
        save_density(&dir.join("rho.json"), &rho)?;
        let ss = steady_state(&model)?;
        save_density(&dir.join("rho_steady.json"), &ss)?;
        report.metrics.insert("fidelity".into(), fidelity(&rho, &ss)?);
        report.completed.push(Stage::Reconstruct);
        if has(Stage::Wigner) {
            *current = Some(Stage::Wigner);
            let spec = GridSpec::default_for(model.n);
            let quasi = |r: &DensityOperator| match model.config.model.as_str() {
                "qvdp" => wigner(r, &spec),
                _ => husimi_spin(r, 101, 201),
            };
            quasi(&rho)?.write_csv(create(&dir.join("wigner_re.csv"))?)?;
            quasi(&ss)?.write_csv(create(&dir.join("wigner_steady.csv"))?)?;
            report.completed.push(Stage::Wigner);
        }
    }
    *current = None;
    Ok(())
}
