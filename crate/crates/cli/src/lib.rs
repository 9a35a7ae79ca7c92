//! `exflow` command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or validation error,
//! 4 refusal (irregular rhythm, unconverted beamspace predictions).

mod cmds;
mod data;
mod eval;

use clap::{Args, Parser, Subcommand, ValueEnum};
use exflow::metrics::MaskParams;
use exflow::timing::{TimingError, DEFAULT_MAX_CV};
use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_REFUSED: i32 = 4;

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "EXFLOW_OUT";

#[derive(Debug, Parser)]
#[command(name = "exflow", version, about = "Beamspace echocardiography toolkit")]
pub struct CliConfig {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Clone, Args)]
pub struct Settings {
    /// Output directory.
    #[arg(short, long, global = true, env = OUT_ENV, default_value = "exflow-out")]
    pub out: PathBuf,
    /// Cartesian grid size in pixels per side.
    #[arg(long, global = true, default_value_t = 256)]
    pub grid: usize,
    /// Interleave slack as a multiple of the median frame spacing.
    #[arg(long, global = true, default_value_t = 1.5)]
    pub slack: f64,
    /// Largest RR coefficient of variation accepted for gating.
    #[arg(long = "max-cv", global = true, default_value_t = DEFAULT_MAX_CV)]
    pub max_cv: f64,
    /// Power threshold of the velocity mask.
    #[arg(long = "tau-power", global = true, default_value_t = MaskParams::default().tau_power)]
    pub tau_power: f64,
    /// B-mode threshold of the velocity mask.
    #[arg(long = "tau-bmode", global = true, default_value_t = MaskParams::default().tau_bmode)]
    pub tau_bmode: f64,
    /// Use strict threshold comparisons in the velocity mask.
    #[arg(long = "strict-thresholds", global = true)]
    pub strict: bool,
    /// Seed for phantoms and fold assignment.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = 5)]
    pub folds: usize,
    /// Worker threads; 0 uses every core.
    #[arg(short, long, global = true, default_value_t = 0)]
    pub jobs: usize,
}

impl Settings {
    pub fn mask_params(&self) -> MaskParams {
        MaskParams {
            tau_power: self.tau_power,
            tau_bmode: self.tau_bmode,
            strict: self.strict,
            ..MaskParams::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    /// Compute in beamspace, then scan-convert.
    Beamspace,
    /// Scan-convert first, then compute.
    Cartesian,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a per-stream table of an exam or recording.
    Inspect { input: PathBuf },
    /// Scan-convert imaging streams to PGM frames with validity masks.
    Convert {
        input: PathBuf,
        /// Export every n-th frame.
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
    /// Detect R-peaks and pair interleaved streams.
    Align { input: PathBuf },
    /// Reassemble ECG-gated 3D sub-sectors into one wide-sector cycle.
    Stitch {
        input: PathBuf,
        /// R-peak CSV to use instead of detection.
        #[arg(long)]
        peaks: Option<PathBuf>,
    },
    /// Turn contours into label maps and strain curves, meshes into volume curves.
    Rasterize {
        input: PathBuf,
        /// Replicate the annotated beat onto every frame.
        #[arg(long)]
        propagate: bool,
    },
    /// Score predictions against the recordings' own streams.
    Evaluate {
        input: PathBuf,
        /// 1 tissue Doppler, 2 color Doppler, 3 segmentation.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        task: u8,
        /// `baseline`, or a directory of prediction recordings.
        #[arg(long, default_value = "baseline")]
        pred: String,
        /// Where the inline baseline is computed.
        #[arg(long, value_enum, default_value_t = DomainArg::Cartesian)]
        domain: DomainArg,
        /// Scan-convert beamspace predictions before scoring.
        #[arg(long)]
        convert: bool,
    },
    /// Write synthetic exams with analytic truth.
    Phantom(cmds::PhantomArgs),
    /// Write temporal-mean baseline predictions.
    Baseline {
        input: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        task: u8,
        /// Grid of the written predictions.
        #[arg(long, value_enum, default_value_t = DomainArg::Cartesian)]
        domain: DomainArg,
    },
    /// Assign patient-level folds and report recording filters.
    Folds {
        input: PathBuf,
        /// Store the fold in each exam.json.
        #[arg(long)]
        write: bool,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Refused(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Data(_) => EXIT_DATA,
            Self::Refused(_) => EXIT_REFUSED,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage: {m}"),
            Self::Data(m) => write!(f, "{m}"),
            Self::Refused(m) => write!(f, "refused: {m}"),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::Data(e.to_string())
            }
        }
    )*};
}

data_error!(
    exflow::container::ContainerError,
    exflow::metrics::MetricsError,
    exflow::geometry::GeometryError,
    exflow::annotations::AnnotationError,
    exflow::phantom::PhantomError,
    std::io::Error
);

impl From<TimingError> for CliError {
    fn from(e: TimingError) -> Self {
        match e {
            TimingError::IrregularRhythm { .. } => Self::Refused(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Parse `argv` (program name first) and run; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match CliConfig::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(&cfg) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("exflow: {e}");
            e.code()
        }
    }
}

pub fn execute(cfg: &CliConfig) -> Result<()> {
    let s = &cfg.settings;
    if s.grid < 2 {
        return Err(CliError::Usage("--grid must be at least 2".into()));
    }
    if s.folds < 2 {
        return Err(CliError::Usage("--folds must be at least 2".into()));
    }
    if !(s.slack >= 0.0) || !(s.max_cv >= 0.0) {
        return Err(CliError::Usage("--slack and --max-cv must be non-negative".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(s.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    pool.install(|| match &cfg.command {
        Command::Inspect { input } => cmds::inspect(input),
        Command::Convert { input, every } => cmds::convert(s, input, *every),
        Command::Align { input } => cmds::align(s, input),
        Command::Stitch { input, peaks } => cmds::stitch(s, input, peaks.as_deref()),
        Command::Rasterize { input, propagate } => cmds::rasterize(s, input, *propagate),
        Command::Evaluate {
            input,
            task,
            pred,
            domain,
            convert,
        } => eval::evaluate(s, input, *task, pred, *domain, *convert),
        Command::Phantom(args) => cmds::phantom(s, args),
        Command::Baseline { input, task, domain } => eval::baseline(s, input, *task, *domain),
        Command::Folds { input, write } => cmds::folds(s, input, *write),
    })
}
