//! The `pathid` command line.
//!
//! Every subcommand reads its parameters from an experiment block of a setup
//! file (`--setup`, `--experiment`) and lets flags override them. Angles are
//! degrees here and radians everywhere in the core crate. Results go to
//! stdout or, with `--out`, to a file that only appears once it is complete.
//!
//! Exit codes: 0 success, 1 usage, 2 parse error, 3 numeric failure.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pathid_core::chain::Stage;
use pathid_core::fringe::{phase_grid, simulate_fringe};
use pathid_core::io::{read_records_csv, write_records_csv, KetJson, ReconstructionJson};
use pathid_core::measurement::dominance_ratio;
use pathid_core::rng::derive_seed;
use pathid_core::setup::{Experiment, ExperimentKind};
use pathid_core::{
    bootstrap_fidelity, build_density, build_state, coherence_satisfied, crosstalk_matrix,
    crystal_emission, expected_counts, mle_reconstruct, parse_setup, simulate_counts, solve_qhq,
    visibility, CoherenceGeometry, Complex64, DistinguishabilityModel, FidelityEstimate,
    JonesVector, MeasurementSetting, MleOptions, Oam, PlateKind, SetupDocument, TomographyDesign,
    WaveplateSetting,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Parse(String),
    Numeric(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Parse(_) => EXIT_PARSE,
            Failure::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Parse(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<pathid_core::Error> for Failure {
    fn from(e: pathid_core::Error) -> Self {
        use pathid_core::Error;
        match e {
            Error::Parse(_) | Error::Json(_) | Error::Csv(_) => Failure::Parse(e.to_string()),
            Error::Io(_) => Failure::Usage(e.to_string()),
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

#[derive(Debug, Parser)]
#[command(
    name = "pathid",
    version,
    about = "Simulate and analyse OAM-entangled photon-pair sources built by path identity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct Common {
    /// Setup description file.
    #[arg(long, value_name = "FILE")]
    setup: Option<PathBuf>,
    /// Experiment block to run; defaults to the first block of the matching kind.
    #[arg(long, value_name = "NAME")]
    experiment: Option<String>,
    /// Seed for every random draw; required when anything is sampled.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the result here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the pair amplitudes of the setup's chain.
    BuildState {
        #[command(flatten)]
        common: Common,
    },
    /// Scan one phase shifter and fit the fringe visibility.
    PhaseScan {
        #[command(flatten)]
        common: Common,
        /// Pairwise coherence of the crystals.
        #[arg(long)]
        gamma: Option<f64>,
        /// Counts per unit time at unit pair rate.
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        time: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        /// Index of the scanned phase stage; defaults to the first one.
        #[arg(long)]
        stage: Option<usize>,
    },
    /// Simulate (or import) tomography counts and reconstruct the state.
    Tomography {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        time: Option<f64>,
        /// Use mean counts instead of Poisson draws and skip the bootstrap.
        #[arg(long)]
        noiseless: bool,
        #[arg(long)]
        resamples: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
        /// Reconstruct from this counts CSV instead of simulating.
        #[arg(long, value_name = "FILE")]
        counts: Option<PathBuf>,
        /// Also write the counts used as CSV.
        #[arg(long, value_name = "FILE")]
        counts_out: Option<PathBuf>,
        /// Exit with status 3 if the reconstruction does not converge.
        #[arg(long)]
        require_convergence: bool,
    },
    /// Computational-basis crosstalk map.
    SpiralSpectrum {
        #[command(flatten)]
        common: Common,
        /// Largest |ℓ| in the map.
        #[arg(long)]
        range: Option<u32>,
        /// Only this crystal (0-based, in pump order) instead of the whole chain.
        #[arg(long)]
        crystal: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Waveplate angles for a target relative phase.
    QhqSolve {
        #[command(flatten)]
        common: Common,
        /// Horizontal input amplitude, e.g. `1` or `0.5+0.5i`.
        #[arg(long, allow_hyphen_values = true)]
        input_h: Option<Complex64>,
        #[arg(long, allow_hyphen_values = true)]
        input_v: Option<Complex64>,
        /// Target relative phase in degrees.
        #[arg(long, allow_hyphen_values = true)]
        target_deg: Option<f64>,
    },
    /// Check the pump/down-conversion path-length condition (lengths in mm).
    CoherenceCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lpa: Option<f64>,
        #[arg(long)]
        lpb: Option<f64>,
        #[arg(long)]
        lspdc: Option<f64>,
        #[arg(long)]
        lcoh: Option<f64>,
    },
}

/// Runs `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("pathid: {f}");
            f.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Outcome<()> {
    match command {
        Command::BuildState { common } => build_state_cmd(&common),
        Command::PhaseScan {
            common,
            gamma,
            rate,
            time,
            points,
            stage,
        } => phase_scan(&common, gamma, rate, time, points, stage),
        Command::Tomography {
            common,
            gamma,
            rate,
            time,
            noiseless,
            resamples,
            max_iter,
            counts,
            counts_out,
            require_convergence,
        } => tomography(
            &common,
            TomographyFlags {
                gamma,
                rate,
                time,
                noiseless,
                resamples,
                max_iter,
                counts,
                counts_out,
                require_convergence,
            },
        ),
        Command::SpiralSpectrum {
            common,
            range,
            crystal,
            gamma,
        } => spiral_spectrum(&common, range, crystal, gamma),
        Command::QhqSolve {
            common,
            input_h,
            input_v,
            target_deg,
        } => qhq_solve(&common, input_h, input_v, target_deg),
        Command::CoherenceCheck {
            common,
            lpa,
            lpb,
            lspdc,
            lcoh,
        } => coherence_check(&common, [lpa, lpb, lspdc, lcoh]),
    }
}

// ---------------------------------------------------------------------------
// Setup and parameters

fn load_setup(path: &Path) -> Outcome<SetupDocument> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    parse_setup(&text).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))
}

fn require_setup(common: &Common) -> Outcome<SetupDocument> {
    match &common.setup {
        Some(p) => load_setup(p),
        None => Err(Failure::Usage("--setup is required".into())),
    }
}

fn optional_setup(common: &Common) -> Outcome<Option<SetupDocument>> {
    common.setup.as_deref().map(load_setup).transpose()
}

/// The block named by `--experiment`, else the first of `kind`, else none.
fn select<'a>(
    doc: Option<&'a SetupDocument>,
    common: &Common,
    kind: ExperimentKind,
) -> Outcome<Option<&'a Experiment>> {
    match (&common.experiment, doc) {
        (None, None) => Ok(None),
        (None, Some(d)) => Ok(d.first_of(kind)),
        (Some(_), None) => Err(Failure::Usage("--experiment needs --setup".into())),
        (Some(name), Some(d)) => {
            let e = d
                .experiment(name)
                .ok_or_else(|| Failure::Usage(format!("no experiment named {name:?}")))?;
            if e.kind != kind {
                return Err(Failure::Usage(format!(
                    "experiment {name:?} is a {} block, not {}",
                    e.kind.name(),
                    kind.name()
                )));
            }
            Ok(Some(e))
        }
    }
}

/// Flag value, else block value, else default.
struct Params<'a>(Option<&'a Experiment>);

impl Params<'_> {
    fn float(&self, key: &str, flag: Option<f64>) -> Option<f64> {
        flag.or_else(|| self.0.and_then(|e| e.get(key)).and_then(|v| v.as_f64()))
    }

    fn int(&self, key: &str, flag: Option<i64>) -> Option<i64> {
        flag.or_else(|| self.0.and_then(|e| e.get(key)).and_then(|v| v.as_i64()))
    }

    fn flag(&self, key: &str, flag: bool) -> bool {
        flag || matches!(
            self.0.and_then(|e| e.get(key)),
            Some(pathid_core::setup::Value::Bool(true))
        )
    }

    fn modes(&self) -> Option<Vec<Oam>> {
        match self.0.and_then(|e| e.get("modes")) {
            Some(pathid_core::setup::Value::IntList(v)) => {
                Some(v.iter().map(|&l| l as Oam).collect())
            }
            _ => None,
        }
    }

    fn complex(&self, key: &str, flag: Option<Complex64>) -> Option<Complex64> {
        flag.or_else(|| match self.0.and_then(|e| e.get(key)) {
            Some(pathid_core::setup::Value::Complex(c)) => Some(*c),
            Some(v) => v.as_f64().map(|x| Complex64::new(x, 0.0)),
            None => None,
        })
    }

    fn seed(&self, flag: Option<u64>) -> Outcome<u64> {
        if let Some(s) = flag {
            return Ok(s);
        }
        match self.int("seed", None) {
            Some(s) => u64::try_from(s)
                .map_err(|_| Failure::Usage(format!("seed {s} must be non-negative"))),
            None => Err(Failure::Usage(
                "--seed is required for a stochastic run".into(),
            )),
        }
    }
}

fn positive(name: &str, v: f64) -> Outcome<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Failure::Usage(format!("{name} = {v} must be positive")))
    }
}

fn coherence(gamma: f64) -> Outcome<f64> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(gamma)
    } else {
        Err(Failure::Usage(format!("gamma = {gamma} outside [0, 1]")))
    }
}

fn chain_of(doc: &SetupDocument) -> Outcome<pathid_core::ChainConfig> {
    doc.chain().map_err(|e| Failure::Parse(e.to_string()))
}

// ---------------------------------------------------------------------------
// Output

/// Writes to stdout, or atomically to `path` via a sibling temporary file.
fn emit(text: &[u8], path: Option<&Path>) -> Outcome<()> {
    let Some(path) = path else {
        let mut out = std::io::stdout().lock();
        return out
            .write_all(text)
            .and_then(|_| out.flush())
            .map_err(|e| Failure::Usage(format!("cannot write stdout: {e}")));
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| Failure::Usage(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(text).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(value).expect("plain data serializes");
    s.push(b'\n');
    s
}

fn csv_rows<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Outcome<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Failure::Numeric(format!("csv output: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| Failure::Numeric(format!("csv output: {e}")))
}

fn pair(c: Complex64) -> [f64; 2] {
    [c.re, c.im]
}

// ---------------------------------------------------------------------------
// build-state

#[derive(Serialize)]
struct AmplitudeRow {
    signal: Oam,
    idler: Oam,
    re: f64,
    im: f64,
}

fn build_state_cmd(common: &Common) -> Outcome<()> {
    let doc = require_setup(common)?;
    let ket = build_state(&chain_of(&doc)?)?;
    let text = match common.format {
        Format::Json => json(&KetJson::from(&ket)),
        Format::Csv => csv_rows(ket.iter().map(|((s, i), c)| AmplitudeRow {
            signal: s,
            idler: i,
            re: c.re,
            im: c.im,
        }))?,
    };
    emit(&text, common.out.as_deref())
}

// ---------------------------------------------------------------------------
// phase-scan

#[derive(Serialize)]
struct FringeSample {
    phase_deg: f64,
    counts: u64,
}

#[derive(Serialize)]
struct FringeReport {
    experiment: Option<String>,
    seed: u64,
    gamma: f64,
    rate: f64,
    time: f64,
    stage: usize,
    signal: Oam,
    idler: Oam,
    samples: Vec<FringeSample>,
    visibility: f64,
    visibility_err: f64,
    amplitude: f64,
    amplitude_err: f64,
    phase_deg: f64,
    phase_err_deg: f64,
}

#[derive(Serialize)]
struct FringeRow {
    phase_deg: f64,
    counts: u64,
    fitted: f64,
    visibility: f64,
    visibility_err: f64,
}

fn phase_scan(
    common: &Common,
    gamma: Option<f64>,
    rate: Option<f64>,
    time: Option<f64>,
    points: Option<usize>,
    stage: Option<usize>,
) -> Outcome<()> {
    let doc = require_setup(common)?;
    let exp = select(Some(&doc), common, ExperimentKind::PhaseScan)?;
    let p = Params(exp);
    let seed = p.seed(common.seed)?;
    let gamma = coherence(p.float("gamma", gamma).unwrap_or(1.0))?;
    let rate = positive("rate", p.float("rate", rate).unwrap_or(500.0))?;
    let time = positive("time", p.float("time", time).unwrap_or(1.0))?;
    let points = match points {
        Some(n) => n as i64,
        None => p.int("points", None).unwrap_or(24),
    };
    if points < 4 {
        return Err(Failure::Usage(format!("{points} points; at least 4 needed")));
    }
    let signal = p.int("signal", None).unwrap_or(0) as Oam;
    let idler = p.int("idler", None).unwrap_or(0) as Oam;

    let chain = chain_of(&doc)?;
    let stage = match stage.map(|s| s as i64).or_else(|| p.int("stage", None)) {
        Some(s) => usize::try_from(s)
            .map_err(|_| Failure::Usage(format!("stage {s} must be non-negative")))?,
        None => chain
            .stages()
            .iter()
            .position(|s| matches!(s, Stage::PhaseShifter(_)))
            .ok_or_else(|| Failure::Usage("setup has no phase stage to scan".into()))?,
    };
    if !matches!(chain.stages().get(stage), Some(Stage::PhaseShifter(_))) {
        return Err(Failure::Usage(format!("stage {stage} is not a phase stage")));
    }
    let model = DistinguishabilityModel::uniform(chain.crystal_count(), gamma)?;
    let setting = MeasurementSetting::computational(signal, idler);
    let grid = phase_grid(points as usize);
    let counts = simulate_fringe(&chain, &model, stage, &grid, &setting, rate, time, seed)?;
    let samples: Vec<(f64, f64)> = counts.iter().map(|&(p, n)| (p, n as f64)).collect();
    let fit = visibility(&samples)?;

    let text = match common.format {
        Format::Json => json(&FringeReport {
            experiment: exp.map(|e| e.name.clone()),
            seed,
            gamma,
            rate,
            time,
            stage,
            signal,
            idler,
            samples: counts
                .iter()
                .map(|&(phi, n)| FringeSample {
                    phase_deg: phi.to_degrees(),
                    counts: n,
                })
                .collect(),
            visibility: fit.visibility,
            visibility_err: fit.visibility_err,
            amplitude: fit.amplitude,
            amplitude_err: fit.amplitude_err,
            phase_deg: fit.phase.to_degrees(),
            phase_err_deg: fit.phase_err.to_degrees(),
        }),
        Format::Csv => csv_rows(counts.iter().map(|&(phi, n)| FringeRow {
            phase_deg: phi.to_degrees(),
            counts: n,
            fitted: fit.amplitude * (1.0 + fit.visibility * (phi + fit.phase).cos()),
            visibility: fit.visibility,
            visibility_err: fit.visibility_err,
        }))?,
    };
    emit(&text, common.out.as_deref())
}

// ---------------------------------------------------------------------------
// tomography

struct TomographyFlags {
    gamma: Option<f64>,
    rate: Option<f64>,
    time: Option<f64>,
    noiseless: bool,
    resamples: Option<usize>,
    max_iter: Option<usize>,
    counts: Option<PathBuf>,
    counts_out: Option<PathBuf>,
    require_convergence: bool,
}

#[derive(Serialize)]
struct TomographyReport {
    experiment: Option<String>,
    seed: Option<u64>,
    gamma: f64,
    noiseless: bool,
    total_counts: u64,
    /// `F = mean ± stddev` at three decimals.
    report: String,
    fidelity: FidelityEstimate,
    target: KetJson,
    reconstruction: ReconstructionJson,
}

#[derive(Serialize)]
struct DensityRow {
    row_signal: Oam,
    row_idler: Oam,
    col_signal: Oam,
    col_idler: Oam,
    re: f64,
    im: f64,
}

fn tomography(common: &Common, flags: TomographyFlags) -> Outcome<()> {
    let doc = require_setup(common)?;
    let exp = select(Some(&doc), common, ExperimentKind::Tomography)?;
    let p = Params(exp);
    let gamma = coherence(p.float("gamma", flags.gamma).unwrap_or(1.0))?;
    let noiseless = p.flag("noiseless", flags.noiseless);
    let chain = chain_of(&doc)?;
    let target = build_state(&chain)?;

    let mut options = MleOptions::default();
    if let Some(n) = flags.max_iter.map(|n| n as i64).or_else(|| p.int("max_iter", None)) {
        options.max_iter = usize::try_from(n)
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Usage(format!("max_iter {n} must be positive")))?;
    }
    if let Some(tol) = p.float("tol", None) {
        options.tol = positive("tol", tol)?;
    }
    let resamples = match flags.resamples {
        Some(n) => n as i64,
        None => p.int("resamples", None).unwrap_or(100),
    };

    let (records, design) = match &flags.counts {
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            let records = read_records_csv(file)
                .map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
            if records.is_empty() {
                return Err(Failure::Parse(format!("{}: no records", path.display())));
            }
            let design =
                TomographyDesign::new(records.iter().map(|r| r.setting.clone()).collect())?;
            (records, design)
        }
        None => {
            let modes = p.modes().unwrap_or_else(|| support_modes(&target));
            let design = TomographyDesign::standard(&modes)?;
            let rate = positive("rate", p.float("rate", flags.rate).unwrap_or(1e4))?;
            let time = positive("time", p.float("time", flags.time).unwrap_or(1.0))?;
            let model = DistinguishabilityModel::uniform(chain.crystal_count(), gamma)?;
            let rho = build_density(&chain, &model)?;
            let records = if noiseless {
                expected_counts(&rho, &design, rate, time)?
            } else {
                simulate_counts(&rho, &design, rate, time, p.seed(common.seed)?)?
            };
            (records, design)
        }
    };
    if let Some(path) = &flags.counts_out {
        let mut buf = Vec::new();
        write_records_csv(&records, &mut buf)?;
        emit(&buf, Some(path))?;
    }

    let mut result = mle_reconstruct(&records, &design, target.space(), &options)?;
    if !result.converged {
        let msg = format!(
            "reconstruction did not converge in {} iterations",
            result.iterations
        );
        if flags.require_convergence {
            return Err(Failure::Numeric(msg));
        }
        eprintln!("pathid: warning: {msg}");
    }
    let f = result.rho.fidelity(&target)?;
    let (estimate, seed) = if noiseless {
        (
            FidelityEstimate {
                mean: f,
                stddev: 0.0,
                resamples: 0,
            },
            None,
        )
    } else {
        let seed = p.seed(common.seed)?;
        let resamples = usize::try_from(resamples)
            .map_err(|_| Failure::Usage(format!("resamples {resamples} must be positive")))?;
        // Independent of the stream that drew the counts.
        let est = bootstrap_fidelity(
            &records,
            &design,
            &target,
            resamples,
            derive_seed(seed, 1),
            &options,
        )?;
        (
            FidelityEstimate {
                mean: f,
                stddev: est.stddev,
                resamples: est.resamples,
            },
            Some(seed),
        )
    };
    result.fidelity = Some(estimate);
    let export = ReconstructionJson::from(&result);

    let text = match common.format {
        Format::Json => json(&TomographyReport {
            experiment: exp.map(|e| e.name.clone()),
            seed,
            gamma,
            noiseless,
            total_counts: records.iter().map(|r| r.counts).sum(),
            report: format!("F = {:.3} ± {:.3}", estimate.mean, estimate.stddev),
            fidelity: estimate,
            target: KetJson::from(&target),
            reconstruction: export,
        }),
        Format::Csv => {
            let basis = &export.basis;
            csv_rows(export.rho.iter().enumerate().flat_map(|(r, row)| {
                row.iter().enumerate().map(move |(c, z)| DensityRow {
                    row_signal: basis[r].0,
                    row_idler: basis[r].1,
                    col_signal: basis[c].0,
                    col_idler: basis[c].1,
                    re: z[0],
                    im: z[1],
                })
            }))?
        }
    };
    emit(&text, common.out.as_deref())
}

/// Signal modes carrying amplitude, ascending.
fn support_modes(ket: &pathid_core::BiphotonKet) -> Vec<Oam> {
    let mut modes: Vec<Oam> = ket
        .iter()
        .filter(|(_, c)| c.norm_sqr() > 1e-24)
        .flat_map(|((s, i), _)| [s, i])
        .collect();
    modes.sort_unstable();
    modes.dedup();
    modes
}

// ---------------------------------------------------------------------------
// spiral-spectrum

#[derive(Serialize)]
struct SpectrumReport {
    experiment: Option<String>,
    crystal: Option<usize>,
    modes: Vec<Oam>,
    /// Row `ℓs`, column `ℓi`, largest entry 1.
    matrix: Vec<Vec<f64>>,
    dominance_ratio: Option<f64>,
}

#[derive(Serialize)]
struct SpectrumRow {
    signal: Oam,
    idler: Oam,
    relative_rate: f64,
}

fn spiral_spectrum(
    common: &Common,
    range: Option<u32>,
    crystal: Option<usize>,
    gamma: Option<f64>,
) -> Outcome<()> {
    let doc = require_setup(common)?;
    let exp = select(Some(&doc), common, ExperimentKind::SpiralSpectrum)?;
    let p = Params(exp);
    let chain = chain_of(&doc)?;
    let space = chain.space();
    let range = match range.map(i64::from).or_else(|| p.int("range", None)) {
        Some(r) => u32::try_from(r)
            .map_err(|_| Failure::Usage(format!("range {r} must be non-negative")))?,
        None => space.truncation(),
    };
    let crystal = match crystal.map(|c| c as i64).or_else(|| p.int("crystal", None)) {
        Some(c) => Some(
            usize::try_from(c)
                .ok()
                .filter(|&c| c < chain.crystal_count())
                .ok_or_else(|| {
                    Failure::Usage(format!(
                        "crystal {c} outside 0..{}",
                        chain.crystal_count()
                    ))
                })?,
        ),
        None => None,
    };
    let rho = match crystal {
        Some(k) => {
            let spec = chain
                .stages()
                .iter()
                .filter_map(|s| match s {
                    Stage::Crystal(c) => Some(c),
                    _ => None,
                })
                .nth(k)
                .expect("index checked against crystal_count");
            crystal_emission(spec, space)?.normalize()?.to_density()?
        }
        None => {
            let gamma = coherence(p.float("gamma", gamma).unwrap_or(1.0))?;
            build_density(
                &chain,
                &DistinguishabilityModel::uniform(chain.crystal_count(), gamma)?,
            )?
        }
    };
    let modes: Vec<Oam> = (-(range as Oam)..=range as Oam).collect();
    let m = crosstalk_matrix(&rho, &modes)?;
    let ratio = dominance_ratio(&m);

    let text = match common.format {
        Format::Json => json(&SpectrumReport {
            experiment: exp.map(|e| e.name.clone()),
            crystal,
            matrix: (0..m.nrows())
                .map(|r| m.row(r).iter().copied().collect())
                .collect(),
            modes: modes.clone(),
            dominance_ratio: ratio.is_finite().then_some(ratio),
        }),
        Format::Csv => {
            let m = &m;
            let modes = &modes;
            csv_rows((0..modes.len()).flat_map(|r| {
                (0..modes.len()).map(move |c| SpectrumRow {
                    signal: modes[r],
                    idler: modes[c],
                    relative_rate: m[(r, c)],
                })
            }))?
        }
    };
    emit(&text, common.out.as_deref())
}

// ---------------------------------------------------------------------------
// qhq-solve

#[derive(Serialize)]
struct PlateRow {
    position: &'static str,
    kind: &'static str,
    angle_deg: f64,
}

#[derive(Serialize)]
struct QhqReport {
    experiment: Option<String>,
    input_h: [f64; 2],
    input_v: [f64; 2],
    target_deg: f64,
    plates: Vec<PlateRow>,
    output_h: [f64; 2],
    output_v: [f64; 2],
    global_phase_deg: f64,
    relative_phase_deg: f64,
}

fn plate(position: &'static str, s: &WaveplateSetting) -> PlateRow {
    PlateRow {
        position,
        kind: match s.kind {
            PlateKind::Quarter => "quarter",
            PlateKind::Half => "half",
        },
        angle_deg: s.angle.to_degrees(),
    }
}

fn qhq_solve(
    common: &Common,
    input_h: Option<Complex64>,
    input_v: Option<Complex64>,
    target_deg: Option<f64>,
) -> Outcome<()> {
    let doc = optional_setup(common)?;
    let exp = select(doc.as_ref(), common, ExperimentKind::Qhq)?;
    let p = Params(exp);
    let h = p.complex("input_h", input_h).unwrap_or(Complex64::new(1.0, 0.0));
    let v = p.complex("input_v", input_v).unwrap_or(Complex64::new(0.0, 0.0));
    let target = match target_deg {
        Some(d) => d.to_radians(),
        None => p
            .float("target", None)
            .ok_or_else(|| Failure::Usage("--target-deg is required".into()))?,
    };
    if !target.is_finite() {
        return Err(Failure::Usage("target phase must be finite".into()));
    }
    let input = JonesVector::new(h, v);
    if !(input.norm_sqr() > 0.0 && input.norm_sqr().is_finite()) {
        return Err(Failure::Usage("input polarization must be nonzero".into()));
    }
    let sol = solve_qhq(&input, target)?;
    let plates = vec![
        plate("in", &sol.q_in),
        plate("middle", &sol.h_mid),
        plate("out", &sol.q_out),
    ];
    let text = match common.format {
        Format::Json => json(&QhqReport {
            experiment: exp.map(|e| e.name.clone()),
            input_h: pair(h),
            input_v: pair(v),
            target_deg: target.to_degrees(),
            plates,
            output_h: pair(sol.output.h),
            output_v: pair(sol.output.v),
            global_phase_deg: sol.global_phase.to_degrees(),
            relative_phase_deg: sol.output.relative_phase().to_degrees(),
        }),
        Format::Csv => csv_rows(plates)?,
    };
    emit(&text, common.out.as_deref())
}

// ---------------------------------------------------------------------------
// coherence-check

#[derive(Serialize)]
struct CoherenceReport {
    satisfied: bool,
    margin_mm: f64,
    path_difference_mm: f64,
    lpa_mm: f64,
    lpb_mm: f64,
    lspdc_mm: f64,
    lcoh_mm: f64,
}

fn coherence_check(common: &Common, flags: [Option<f64>; 4]) -> Outcome<()> {
    let doc = optional_setup(common)?;
    let exp = select(doc.as_ref(), common, ExperimentKind::Coherence)?;
    let p = Params(exp);
    let mut v = [0.0; 4];
    for (k, (key, flag)) in ["lpa", "lpb", "lspdc", "lcoh"].iter().zip(flags).enumerate() {
        v[k] = p
            .float(key, flag)
            .ok_or_else(|| Failure::Usage(format!("--{key} is required")))?;
    }
    let geom = CoherenceGeometry::new(v[0], v[1], v[2], v[3])
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let report = CoherenceReport {
        satisfied: coherence_satisfied(&geom),
        margin_mm: geom.margin(),
        path_difference_mm: geom.path_difference(),
        lpa_mm: v[0],
        lpb_mm: v[1],
        lspdc_mm: v[2],
        lcoh_mm: v[3],
    };
    let text = match common.format {
        Format::Json => json(&report),
        Format::Csv => csv_rows([report])?,
    };
    emit(&text, common.out.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> SetupDocument {
        parse_setup(
            "crystal amp=1\nphase 0deg\ncrystal amp=1\n\n\
             [experiment phase-scan a]\nseed=4\nrate=250\n\n\
             [experiment qhq q]\ninput_h=1\ntarget=90deg\n",
        )
        .unwrap()
    }

    fn common(experiment: Option<&str>) -> Common {
        Common {
            setup: None,
            experiment: experiment.map(String::from),
            seed: None,
            out: None,
            format: Format::Json,
        }
    }

    #[test]
    fn flags_override_blocks() {
        let d = doc();
        let e = select(Some(&d), &common(None), ExperimentKind::PhaseScan).unwrap();
        let p = Params(e);
        assert_eq!(p.float("rate", None), Some(250.0));
        assert_eq!(p.float("rate", Some(10.0)), Some(10.0));
        assert_eq!(p.float("time", None), None);
        assert_eq!(p.seed(None).unwrap(), 4);
        assert_eq!(p.seed(Some(8)).unwrap(), 8);
        assert!(Params(None).seed(None).is_err());
    }

    #[test]
    fn block_angles_stay_radians() {
        let d = doc();
        let e = select(Some(&d), &common(Some("q")), ExperimentKind::Qhq).unwrap();
        let t = Params(e).float("target", None).unwrap();
        assert!((t - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn experiment_kind_must_match() {
        let d = doc();
        let err = select(Some(&d), &common(Some("q")), ExperimentKind::PhaseScan).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
        assert!(select(Some(&d), &common(Some("zz")), ExperimentKind::Qhq).is_err());
        assert!(select(None, &common(Some("q")), ExperimentKind::Qhq).is_err());
        assert!(select(None, &common(None), ExperimentKind::Qhq)
            .unwrap()
            .is_none());
    }

    #[test]
    fn core_errors_map_to_exit_codes() {
        let parse: Failure = pathid_core::Error::from(parse_setup("").unwrap_err()).into();
        assert_eq!(parse.exit_code(), EXIT_PARSE);
        let numeric: Failure = pathid_core::Error::Incomplete {
            rank: 2,
            required: 4,
        }
        .into();
        assert_eq!(numeric.exit_code(), EXIT_NUMERIC);
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        emit(b"first version, longer", Some(&path)).unwrap();
        emit(b"second", Some(&path)).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(emit(b"x", Some(&dir.path().join("missing/x.txt"))).is_err());
    }

    #[test]
    fn support_modes_cover_both_photons() {
        let d = parse_setup("crystal amp=1\nspp +4\ncrystal amp=1\n").unwrap();
        let ket = build_state(&d.chain().unwrap()).unwrap();
        assert_eq!(support_modes(&ket), vec![0, 2]);
    }
}
