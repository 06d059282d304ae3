//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use honest_esp::bands::{KacRiceForm, Side};
use honest_esp::panel::{AssignmentColumn, CsvSchema};
use honest_esp::sim::{AttKind, BandMethod, CovKind};

pub use crate::ops::{BandChoice, InfForm};

#[derive(Debug, Parser)]
#[command(name = "honest-esp", version, about = "Honest event-study inference for difference-in-differences")]
pub struct Cli {
    /// key=value file supplying defaults for any long flag of the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pointwise estimate and covariance.
    Estimate(EstimateArgs),
    /// One band (pointwise, Bonferroni or simultaneous).
    Bands(BandsArgs),
    /// Full honest event study: bands, reference band, relevance and equivalence tests.
    Report(ReportArgs),
    /// Monte Carlo studies.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// JSON-over-HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Long-format panel CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub unit: String,
    #[arg(long)]
    pub time: String,
    #[arg(long)]
    pub outcome: String,
    /// Binary treatment column.
    #[arg(long, conflicts_with = "group", required_unless_present = "group")]
    pub treat: Option<String>,
    /// Cohort column for staggered adoption (never-treated: inf, never, NA or empty).
    #[arg(long)]
    pub group: Option<String>,
    /// Comma-separated time-invariant covariates.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Continuous time per event-time unit.
    #[arg(long, default_value_t = 1.0)]
    pub time_scale: f64,
}

impl InputArgs {
    pub fn schema(&self) -> CsvSchema {
        let assignment = match (&self.treat, &self.group) {
            (Some(t), _) => AssignmentColumn::Treat(t.clone()),
            (None, Some(g)) => AssignmentColumn::Group(g.clone()),
            (None, None) => unreachable!("clap requires --treat or --group"),
        };
        CsvSchema {
            unit: self.unit.clone(),
            time: self.time.clone(),
            outcome: self.outcome.clone(),
            assignment,
            covariates: self.covariates.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    Sup,
    Inf,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Sup => Side::Sup,
            SideArg::Inf => Side::Inf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormArg {
    Corrected,
    Printed,
}

impl From<FormArg> for KacRiceForm {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Corrected => KacRiceForm::Corrected,
            FormArg::Printed => KacRiceForm::Printed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InferenceArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 1000)]
    pub b: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = FormArg::Corrected)]
    pub kac_rice_form: FormArg,
}

#[derive(Debug, Args)]
pub struct BandsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = BandChoice::ParamBoot)]
    pub method: BandChoice,
    #[arg(long, value_enum, default_value_t = SideArg::Sup)]
    pub side: SideArg,
    #[arg(long, value_enum, default_value_t = InfForm::TwoSided)]
    pub inf_form: InfForm,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Grid start; defaults to 0 (sup, open) or −T_pre (inf).
    #[arg(long, allow_hyphen_values = true)]
    pub grid_lo: Option<f64>,
    /// Grid end; defaults to T_post (sup) or 0 (inf).
    #[arg(long, allow_hyphen_values = true)]
    pub grid_hi: Option<f64>,
    /// Grid size; defaults to 100 (sup) or 101 (inf).
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefBandKindArg {
    Anticipation,
    Trend,
    Union,
}

#[derive(Debug, Clone, Args)]
pub struct RefBandArgs {
    #[arg(long, value_enum, default_value_t = RefBandKindArg::Anticipation)]
    pub refband: RefBandKindArg,
    /// Anticipation time t_A (also ends the equivalence window).
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub t_a: f64,
    /// Lower anticipation multiplier; defaults to t_{1−α/2, n−1}.
    #[arg(long)]
    pub s_l: Option<f64>,
    /// Upper anticipation multiplier; defaults to t_{1−α/2, n−1}.
    #[arg(long)]
    pub s_u: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub m_l: f64,
    #[arg(long, default_value_t = 0.5)]
    pub m_u: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = BandChoice::ParamBoot)]
    pub method: BandChoice,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[command(flatten)]
    pub refband: RefBandArgs,
    #[arg(long, default_value_t = 100)]
    pub post_grid: usize,
    #[arg(long, default_value_t = 101)]
    pub pre_grid: usize,
    #[arg(long, default_value_t = 201)]
    pub plot_grid: usize,
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Plot-data CSV path.
    #[arg(long)]
    pub plot_csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Mean uniform estimation error over replicates, per design cell.
    Accuracy(AccuracyArgs),
    /// Post-period rejection rates over an effect grid.
    Power(PowerArgs),
    /// Pre-anticipation validation rates over a reference-band width grid.
    Validation(ValidationArgs),
    /// One simulated panel in long CSV format (unit,time,outcome,treat).
    Panel(PanelArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DgpArgs {
    #[arg(long, default_value = "ATT1", value_parser = parse_att)]
    pub att: AttKind,
    #[arg(long, default_value = "Cov1", value_parser = parse_cov)]
    pub cov: CovKind,
    /// Overrides the kernel variance (2).
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct AccuracyArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    /// Sample sizes (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub n: Vec<usize>,
    /// Numbers of time points (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "11")]
    pub t: Vec<usize>,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BiasArg {
    /// No bias: classical zero-effect test.
    None,
    /// Differential trend Δ_DT(t) = slope·t with a trend reference band.
    Dt,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 11)]
    pub t: usize,
    #[arg(long, value_enum, default_value_t = BiasArg::None)]
    pub bias: BiasArg,
    /// Trend-band multiplier M (with --bias dt).
    #[arg(long, default_value_t = 0.5)]
    pub m: f64,
    #[arg(long, default_value_t = 0.4, allow_hyphen_values = true)]
    pub dt_slope: f64,
    /// Effect sizes a (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4", allow_hyphen_values = true)]
    pub effects: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_band_method, default_value = "SCB-PB,SCB-MB,SCB-KR,Naive,Bonferroni")]
    pub methods: Vec<BandMethod>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000)]
    pub b: usize,
}

#[derive(Debug, Args)]
pub struct ValidationArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 11)]
    pub t: usize,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub a: f64,
    #[arg(long, default_value_t = -4.0, allow_hyphen_values = true)]
    pub t_a: f64,
    /// Reference-band half widths S (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "1,1.25,1.5,1.75,2")]
    pub s_values: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_band_method, default_value = "SCB-PB,SCB-MB,Naive,Bonferroni")]
    pub methods: Vec<BandMethod>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000)]
    pub b: usize,
}

#[derive(Debug, Args)]
pub struct PanelArgs {
    #[arg(long, default_value = "ATT1", value_parser = parse_att)]
    pub att: AttKind,
    #[arg(long, default_value = "Cov1", value_parser = parse_cov)]
    pub cov: CovKind,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 11)]
    pub t: usize,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub a: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub dt_slope: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080, value_parser = clap::value_parser!(u16).range(1024..))]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

fn parse_att(s: &str) -> Result<AttKind, String> {
    s.parse().map_err(|e: honest_esp::Error| e.to_string())
}

fn parse_cov(s: &str) -> Result<CovKind, String> {
    s.parse().map_err(|e: honest_esp::Error| e.to_string())
}

fn parse_band_method(s: &str) -> Result<BandMethod, String> {
    s.parse().map_err(|e: honest_esp::Error| e.to_string())
}
