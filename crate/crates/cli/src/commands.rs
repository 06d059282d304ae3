//! Subcommand implementations. Each returns the bytes it would write.

use std::io::Write;
use std::path::Path;

use honest_esp::honest::{plot_data, write_plot_csv, HonestConfig, RefBandSpec};
use honest_esp::panel::{load_csv, write_csv, CsvSchema};
use honest_esp::sim::{
    generate_panel, run_accuracy_study, run_power_study, run_validation_study, write_accuracy_csv, PowerStudy, PowerTest,
    SimConfig, ValidationStudy,
};
use serde::Serialize;

use crate::args::{
    AccuracyArgs, BandsArgs, BiasArg, Command, EstimateArgs, Format, InputArgs, PanelArgs, PowerArgs, RefBandArgs,
    RefBandKindArg, ReportArgs, SimulateCommand, ValidationArgs,
};
use crate::dataset::Dataset;
use crate::error::{CliError, CliResult};
use crate::ops::{compute_band, compute_report, to_json, BandsRequest};

/// Bytes destined for a file (or stdout when `path` is `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub path: Option<std::path::PathBuf>,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn new(path: Option<&Path>, bytes: Vec<u8>) -> Self {
        Self {
            path: path.map(Path::to_path_buf),
            bytes,
        }
    }

    pub fn write(&self, stdout: &mut dyn Write) -> CliResult<()> {
        match &self.path {
            Some(p) => std::fs::write(p, &self.bytes)?,
            None => stdout.write_all(&self.bytes)?,
        }
        Ok(())
    }
}

pub fn load_dataset(input: &InputArgs) -> CliResult<Dataset> {
    let panel = load_csv(&input.input, &input.schema())?;
    Ok(Dataset::new(panel, input.time_scale)?)
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Serialize)]
struct EstimateRow {
    event_time: i64,
    t: f64,
    beta: f64,
    variance: f64,
    se: f64,
}

pub fn cmd_estimate(args: &EstimateArgs) -> CliResult<Vec<Artifact>> {
    let ds = load_dataset(&args.input)?;
    let resp = ds.estimate_response();
    let bytes = match args.out.format {
        Format::Json => to_json(&resp)?,
        Format::Csv => csv_bytes(resp.estimate.event_times.iter().enumerate().map(|(j, &e)| EstimateRow {
            event_time: e,
            t: e as f64 * resp.time_scale,
            beta: resp.estimate.beta[j],
            variance: resp.covariance.cov[(j, j)],
            se: resp.se[j],
        }))?,
    };
    Ok(vec![Artifact::new(args.out.output.as_deref(), bytes)])
}

pub fn cmd_bands(args: &BandsArgs) -> CliResult<Vec<Artifact>> {
    let ds = load_dataset(&args.input)?;
    let req = BandsRequest {
        method: args.method,
        side: args.side.into(),
        alpha: args.inference.alpha,
        replicates: args.inference.b,
        seed: args.inference.seed,
        kac_rice_form: args.inference.kac_rice_form.into(),
        inf_form: args.inf_form,
        grid_lo: args.grid_lo,
        grid_hi: args.grid_hi,
        grid_size: args.grid_size,
    };
    let resp = compute_band(&ds.fit, &req)?;
    let bytes = match args.out.format {
        Format::Json => to_json(&resp)?,
        Format::Csv => {
            let b = &resp.band;
            csv_bytes((0..b.len()).map(|j| (b.grid[j], b.estimate[j], b.lower[j], b.upper[j])))
                .map(|body| [b"t,estimate,lower,upper\n".to_vec(), body].concat())?
        }
    };
    Ok(vec![Artifact::new(args.out.output.as_deref(), bytes)])
}

pub fn refband_spec(args: &RefBandArgs) -> RefBandSpec {
    let anticipation = RefBandSpec::Anticipation {
        t_a: args.t_a,
        s_l: args.s_l,
        s_u: args.s_u,
    };
    let trend = RefBandSpec::Trend {
        m_l: args.m_l,
        m_u: args.m_u,
    };
    match args.refband {
        RefBandKindArg::Anticipation => anticipation,
        RefBandKindArg::Trend => trend,
        RefBandKindArg::Union => RefBandSpec::Union {
            members: vec![anticipation, trend],
        },
    }
}

pub fn report_config(args: &ReportArgs) -> CliResult<HonestConfig> {
    let method = args.method.crit_method().ok_or_else(|| {
        CliError::Usage("report needs a simultaneous method: param-boot, mult-boot or kac-rice".into())
    })?;
    Ok(HonestConfig {
        alpha: args.inference.alpha,
        method,
        replicates: args.inference.b,
        seed: args.inference.seed,
        kac_rice_form: args.inference.kac_rice_form.into(),
        refband: refband_spec(&args.refband),
        t_a: Some(args.refband.t_a),
        post_grid_size: args.post_grid,
        pre_grid_size: args.pre_grid,
        plot_grid_size: args.plot_grid,
    })
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<Vec<Artifact>> {
    let cfg = report_config(args)?;
    let ds = load_dataset(&args.input)?;
    let report = compute_report(&ds.fit, &cfg)?;
    let mut out = vec![Artifact::new(args.output.as_deref(), to_json(&report)?)];
    if let Some(p) = &args.plot_csv {
        let mut buf = Vec::new();
        write_plot_csv(&plot_data(&ds.fit, &report)?, &mut buf)?;
        out.push(Artifact::new(Some(p), buf));
    }
    Ok(out)
}

fn base_config(dgp: &crate::args::DgpArgs, n: usize, t: usize) -> SimConfig {
    SimConfig {
        n,
        t,
        att: dgp.att,
        cov: dgp.cov,
        sigma2: dgp.sigma2,
        reps: dgp.reps,
        seed: dgp.seed,
        ..SimConfig::default()
    }
}

pub fn cmd_accuracy(args: &AccuracyArgs) -> CliResult<Vec<Artifact>> {
    let cells: Vec<SimConfig> = args
        .n
        .iter()
        .flat_map(|&n| args.t.iter().map(move |&t| (n, t)))
        .map(|(n, t)| SimConfig {
            a: args.a,
            ..base_config(&args.dgp, n, t)
        })
        .collect();
    let table = run_accuracy_study(&cells)?;
    let bytes = match args.dgp.out.format {
        Format::Json => to_json(&table)?,
        Format::Csv => {
            let mut buf = Vec::new();
            write_accuracy_csv(&table, &mut buf)?;
            buf
        }
    };
    Ok(vec![Artifact::new(args.dgp.out.output.as_deref(), bytes)])
}

fn curve_bytes(pc: &honest_esp::sim::PowerCurve, format: Format) -> CliResult<Vec<u8>> {
    Ok(match format {
        Format::Json => to_json(pc)?,
        Format::Csv => {
            let mut buf = Vec::new();
            pc.write_csv(&mut buf)?;
            buf
        }
    })
}

pub fn cmd_power(args: &PowerArgs) -> CliResult<Vec<Artifact>> {
    let (test, dt_slope) = match args.bias {
        BiasArg::None => (PowerTest::Classical, 0.0),
        BiasArg::Dt => (PowerTest::Relevance { m: args.m }, args.dt_slope),
    };
    let base = SimConfig {
        dt_slope,
        ..base_config(&args.dgp, args.n, args.t)
    };
    let mut study = PowerStudy::new(base, args.effects.clone(), test);
    study.methods = args.methods.clone();
    study.alpha = args.alpha;
    study.boot_replicates = args.b;
    let pc = run_power_study(&study)?;
    Ok(vec![Artifact::new(args.dgp.out.output.as_deref(), curve_bytes(&pc, args.dgp.out.format)?)])
}

pub fn cmd_validation(args: &ValidationArgs) -> CliResult<Vec<Artifact>> {
    let base = SimConfig {
        a: args.a,
        t_a: args.t_a,
        ..base_config(&args.dgp, args.n, args.t)
    };
    let mut study = ValidationStudy::new(base, args.s_values.clone());
    study.methods = args.methods.clone();
    study.alpha = args.alpha;
    study.boot_replicates = args.b;
    let pc = run_validation_study(&study)?;
    Ok(vec![Artifact::new(args.dgp.out.output.as_deref(), curve_bytes(&pc, args.dgp.out.format)?)])
}

/// Writes one simulated panel; times are integer event labels (grid step 20/(T − 1)).
pub fn cmd_panel(args: &PanelArgs) -> CliResult<Vec<Artifact>> {
    let cfg = SimConfig {
        n: args.n,
        t: args.t,
        att: args.att,
        cov: args.cov,
        sigma2: args.sigma2,
        a: args.a,
        dt_slope: args.dt_slope,
        seed: args.seed,
        ..SimConfig::default()
    };
    let (panel, _) = generate_panel(&cfg, args.seed)?;
    let mut buf = Vec::new();
    write_csv(&panel, &mut buf, &CsvSchema::binary("unit", "time", "outcome", "treat"))?;
    Ok(vec![Artifact::new(args.output.as_deref(), buf)])
}

/// Runs every command except `serve`.
pub fn execute(command: &Command) -> CliResult<Vec<Artifact>> {
    match command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Bands(a) => cmd_bands(a),
        Command::Report(a) => cmd_report(a),
        Command::Simulate(SimulateCommand::Accuracy(a)) => cmd_accuracy(a),
        Command::Simulate(SimulateCommand::Power(a)) => cmd_power(a),
        Command::Simulate(SimulateCommand::Validation(a)) => cmd_validation(a),
        Command::Simulate(SimulateCommand::Panel(a)) => cmd_panel(a),
        Command::Serve(_) => Err(CliError::Usage("serve is not a batch command".into())),
    }
}
