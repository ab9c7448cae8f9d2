//! Command-line surface tying simulation to analysis.
//!
//! Subcommand families: `simulate` produces datasets, `analyze` reduces them,
//! `fit` applies one named model to a table, `stabilize` applies the
//! high-power treatment to a stored emitter, `report figure` runs a preset
//! simulate-and-reduce chain and writes plot-ready tables under stable names.
//! Every run resolves its configuration, writes the resolved form next to the
//! outputs, and closes with a manifest listing every emitted file by hash.
//! Commands never modify their input files.
//!
//! Exit codes: 0 on success; 1 on a failed run, with a machine-readable error
//! record on stderr (and `error.json` when the output directory exists);
//! 2 on a usage error such as an unknown subcommand.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand_distr::Distribution;
use serde::Serialize;
use serde_json::json;

use crate::config::{
    load_config, save_config, CountingMode, ExperimentConfig, PulseConfig, SchemeName,
};
use crate::correlator::{correlate, g2, G2Analysis};
use crate::dataset::{
    load_ple_trace, load_table, load_time_tags, save_ple_trace, save_record, save_table,
    save_time_tags, DatasetManifest, PLE_TRACE_VERSION, RECORD_VERSION,
    TABLE_VERSION, TAG_STREAM_VERSION,
};
use crate::emitter::Emitter;
use crate::error::{Error, Result};
use crate::fit::{
    fit_double_gaussian, fit_exponential_decay, fit_lorentzian, fit_multi_lorentzian,
    fit_poisson_mean, fit_power_broadening, fit_saturation, saturation_rho, Weighting,
};
use crate::physics::lifetime_limited_fwhm;
use crate::rng::{domain, task_rng};
use crate::stats::{
    compare_schemes, convergence_curve, histogram, sweep_line_stats, Histogram1D, SweepLineStats,
};
use crate::stream::{
    pulsed_decay_histogram, Drive, PhotonStream, PhotonStreamConfig, TimeTag,
};
use crate::survey::{run_g2_survey, run_survey, SurveyResult};
use crate::sweep::{run_sweep, PleTrace, SweepDirection, SweepPlan};

#[derive(Parser, Debug)]
#[command(name = "sivsim", version, about = "Emitter-array simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration document (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; created if absent.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads for concurrent tasks.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Format of emitted tables.
    #[arg(long, global = true, value_enum, default_value_t = TableFormat::Csv)]
    format: TableFormat,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        #[command(subcommand)]
        what: SimulateCmd,
    },
    /// Apply the high-power blue treatment to a stored emitter.
    Stabilize(StabilizeArgs),
    /// Reduce a dataset to physical quantities.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCmd,
    },
    /// Fit one named model to a two-column table.
    Fit(FitArgs),
    /// Run a preset simulate-and-reduce chain.
    Report {
        #[command(subcommand)]
        what: ReportCmd,
    },
}

#[derive(Subcommand, Debug)]
enum SimulateCmd {
    /// Resonant-excitation sweep; writes the scan trace.
    Ple,
    /// Two-channel photon stream for coincidence analysis; writes time tags.
    Hbt {
        /// Replicate the first configured emitter this many times.
        #[arg(long = "n-emitters", value_name = "N")]
        n_emitters: Option<usize>,
    },
    /// Many-site array scan; writes per-site records.
    Survey,
    /// Pulsed-excitation decay histogram.
    Lifetime,
}

#[derive(Args, Debug)]
struct StabilizeArgs {
    /// Stored emitter record; defaults to the first configured emitter.
    #[arg(long, value_name = "PATH")]
    emitter: Option<PathBuf>,
    /// Exposure power, e.g. `6mW` (plain numbers are mW).
    #[arg(long)]
    power: String,
    /// Exposure duration, e.g. `2h` (plain numbers are hours).
    #[arg(long)]
    duration: String,
}

#[derive(Subcommand, Debug)]
enum AnalyzeCmd {
    /// Per-sweep line statistics and the averaged-spectrum fit.
    Ple {
        /// Scan trace (base path or either half of the pair).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// One-way passes averaged into one single sweep.
        #[arg(long, default_value_t = 4)]
        window: usize,
    },
    /// Coincidence histogram and dip analysis of a time-tag stream.
    G2 {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Signal fraction used for the background correction; estimated
        /// from the stream rate and configured background when omitted.
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Occupancy statistics over per-site survey records.
    Survey {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FitModel {
    Lorentzian,
    MultiLorentzian,
    Exponential,
    Saturation,
    PowerBroadening,
    DoubleGaussian,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum WeightingArg {
    Counts,
    None,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Model to fit.
    #[arg(value_enum)]
    model: FitModel,
    /// Input table.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Column holding the abscissa; defaults to the first column.
    #[arg(long)]
    x: Option<String>,
    /// Column holding the ordinate; defaults to the second column.
    #[arg(long)]
    y: Option<String>,
    /// Peak count for the multi-peak model.
    #[arg(long, default_value_t = 2)]
    peaks: usize,
    #[arg(long, value_enum, default_value_t = WeightingArg::Counts)]
    weighting: WeightingArg,
}

#[derive(Subcommand, Debug)]
enum ReportCmd {
    /// Preset layouts; each writes tables keyed to its name.
    Figure {
        #[arg(value_enum)]
        id: FigureId,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FigureId {
    /// Pass-by-pass sweep timeline.
    #[value(name = "1e")]
    F1e,
    /// Saturation curve.
    #[value(name = "2c")]
    F2c,
    /// Array occupancy statistics.
    #[value(name = "2d")]
    F2d,
    /// Excited-state decay.
    #[value(name = "2e")]
    F2e,
    /// Averaged sweep spectrum.
    #[value(name = "3a")]
    F3a,
    /// Per-single-sweep line parameters.
    #[value(name = "3c")]
    F3c,
    /// Averaging convergence of the fitted width.
    #[value(name = "3d")]
    F3d,
    /// Width and center histograms under both schemes.
    #[value(name = "3ef")]
    F3ef,
    /// Multi-emitter pillar: spectrum and correlation set.
    #[value(name = "4")]
    F4,
}

/// Parses and runs `argv`, returning the process exit code.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let command_line = argv
        .iter()
        .map(|s| s.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let out = cli.common.out.clone();
    match execute(cli, command_line) {
        Ok(()) => 0,
        Err(err) => {
            let record = json!({"error": {"kind": error_kind(&err), "message": err.to_string()}});
            eprintln!("{record}");
            if out.is_dir() {
                let _ = fs::write(
                    out.join("error.json"),
                    format!("{}\n", serde_json::to_string_pretty(&record).unwrap()),
                );
            }
            1
        }
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::InvalidParameter { .. } => "invalid-parameter",
        Error::InsufficientData(_) => "insufficient-data",
        Error::NoPeak(_) => "no-peak",
        Error::PeakSeeding { .. } => "peak-seeding",
        Error::FitFailure(_) => "fit-failure",
        Error::Normalization(_) => "normalization",
        Error::EmptyStream(_) => "empty-stream",
        Error::OutOfRange(_) => "out-of-range",
        Error::Schema(_) => "schema",
        Error::Parse { .. } => "parse",
        Error::Corrupt { .. } => "corrupt",
        Error::VersionMismatch { .. } => "version-mismatch",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    format: TableFormat,
    manifest: DatasetManifest,
}

impl Ctx {
    fn track(&mut self, rel: &str, format: &str, version: u32) -> Result<()> {
        self.manifest.record(&self.out, rel, format, version)
    }

    /// Writes named columns in the selected table format.
    fn add_table(
        &mut self,
        stem: &str,
        meta: serde_json::Value,
        cols: &[(&str, &[f64])],
    ) -> Result<()> {
        match self.format {
            TableFormat::Csv => {
                let rel = format!("{stem}.csv");
                save_table(&self.out.join(&rel), &meta, cols)?;
                self.track(&rel, "table", TABLE_VERSION)
            }
            TableFormat::Json => {
                let rel = format!("{stem}.json");
                let columns: Vec<serde_json::Value> = cols
                    .iter()
                    .map(|(name, values)| json!({"name": name, "values": values}))
                    .collect();
                let payload = json!({"meta": meta, "columns": columns});
                save_record(&self.out.join(&rel), "table", &payload)?;
                self.track(&rel, "table", RECORD_VERSION)
            }
        }
    }

    fn add_record<T: Serialize>(&mut self, stem: &str, kind: &str, payload: &T) -> Result<()> {
        let rel = format!("{stem}.json");
        save_record(&self.out.join(&rel), kind, payload)?;
        self.track(&rel, kind, RECORD_VERSION)
    }

    fn add_trace(&mut self, stem: &str, trace: &PleTrace) -> Result<()> {
        let (csv, json) = save_ple_trace(&self.out.join(stem), trace)?;
        for p in [&csv, &json] {
            let rel = p.file_name().unwrap().to_string_lossy().into_owned();
            self.track(&rel, "ple-trace", PLE_TRACE_VERSION)?;
        }
        Ok(())
    }

    /// Independent child seed for one sub-measurement of a run.
    fn subseed(&self, tag: u64) -> u64 {
        task_rng(self.cfg.master_seed, domain::MISC, tag).gen()
    }
}

fn execute(cli: Cli, command_line: String) -> Result<()> {
    if let Some(n) = cli.common.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let mut cfg = match &cli.common.config {
        Some(path) => load_config(path)?,
        None => {
            let seed = cli.common.seed.ok_or_else(|| {
                Error::Schema("pass --config PATH or at least --seed N".into())
            })?;
            ExperimentConfig::with_seed(seed)
        }
    };
    if let Some(seed) = cli.common.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    fs::create_dir_all(&cli.common.out)?;
    let manifest = DatasetManifest::new(command_line, cfg.master_seed, cfg.content_hash());
    let mut ctx = Ctx {
        cfg,
        out: cli.common.out,
        format: cli.common.format,
        manifest,
    };
    save_config(&ctx.out.join("config.json"), &ctx.cfg)?;
    ctx.track("config.json", "config", 1)?;

    match cli.command {
        Command::Simulate { what } => match what {
            SimulateCmd::Ple => simulate_ple(&mut ctx)?,
            SimulateCmd::Hbt { n_emitters } => simulate_hbt(&mut ctx, n_emitters)?,
            SimulateCmd::Survey => simulate_survey(&mut ctx)?,
            SimulateCmd::Lifetime => simulate_lifetime(&mut ctx)?,
        },
        Command::Stabilize(args) => stabilize(&mut ctx, &args)?,
        Command::Analyze { what } => match what {
            AnalyzeCmd::Ple { input, window } => analyze_ple(&mut ctx, &input, window)?,
            AnalyzeCmd::G2 { input, rho } => analyze_g2(&mut ctx, &input, rho)?,
            AnalyzeCmd::Survey { input } => analyze_survey(&mut ctx, &input)?,
        },
        Command::Fit(args) => fit_table(&mut ctx, &args)?,
        Command::Report { what } => match what {
            ReportCmd::Figure { id } => report_figure(&mut ctx, id)?,
        },
    }

    ctx.manifest.save(&ctx.out)?;
    ctx.manifest.verify(&ctx.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

fn sweep_summary(plan: &SweepPlan) -> serde_json::Value {
    json!({
        "one_way_duration_s": plan.one_way_duration_s(),
        "round_trip_duration_s": plan.round_trip_duration_s(),
        "total_duration_s": plan.total_duration_s(),
        "n_passes": plan.n_passes,
        "n_points": plan.n_points,
        "live_time_s": plan.live_time_s(),
    })
}

fn simulate_ple(ctx: &mut Ctx) -> Result<()> {
    let plan = ctx.cfg.sweep_plan()?;
    let mut emitters = ctx.cfg.emitters()?;
    let trace = run_sweep(&mut emitters, &ctx.cfg.background(), &plan, ctx.cfg.master_seed)?;
    ctx.add_trace("scan", &trace)?;
    ctx.add_record("sweep_summary", "sweep-summary", &sweep_summary(&plan))
}

fn hbt_stream(ctx: &Ctx, emitters: Vec<Emitter>, drive: Drive, seed: u64) -> Result<Vec<TimeTag>> {
    let mut scfg = PhotonStreamConfig::new(ctx.cfg.drive.hbt_duration_s, drive);
    scfg.scheme = ctx.cfg.drive_scheme()?;
    scfg.background = ctx.cfg.background();
    let stream = PhotonStream::new(emitters, scfg, seed)?;
    Ok(stream.collect_all())
}

fn configured_drive(ctx: &Ctx, laser_hz: f64) -> Drive {
    match ctx.cfg.drive.off_resonant_fraction {
        Some(s) => Drive::OffResonant {
            saturation_fraction: s,
        },
        None => Drive::Resonant {
            laser_hz,
            power_nw: ctx.cfg.drive.power_nw,
        },
    }
}

fn simulate_hbt(ctx: &mut Ctx, n_emitters: Option<usize>) -> Result<()> {
    let mut specs = ctx.cfg.pillar.emitters.clone();
    if let Some(n) = n_emitters {
        if n == 0 {
            return Err(Error::Schema("--n-emitters must be at least 1".into()));
        }
        let first = specs
            .first()
            .ok_or_else(|| Error::Schema("pillar.emitters must not be empty".into()))?
            .clone();
        specs = vec![first; n];
    }
    let emitters: Vec<Emitter> = specs.iter().map(|s| s.build()).collect::<Result<_>>()?;
    let drive = configured_drive(ctx, ctx.cfg.sweep.center_hz);
    let tags = hbt_stream(ctx, emitters, drive, ctx.cfg.master_seed)?;
    let header = save_time_tags(
        &ctx.out.join("tags.csv"),
        &tags,
        ctx.cfg.drive.hbt_duration_s,
        Some(ctx.cfg.master_seed),
        Some(ctx.cfg.content_hash()),
    )?;
    ctx.track("tags.csv", "time-tags", TAG_STREAM_VERSION)?;
    ctx.add_record("stream_summary", "stream-summary", &header)
}

fn survey_site_columns(result: &SurveyResult) -> Vec<(&'static str, Vec<f64>)> {
    let sites = &result.sites;
    vec![
        ("site", sites.iter().map(|s| s.site as f64).collect()),
        (
            "true_emitters",
            sites.iter().map(|s| s.true_emitters as f64).collect(),
        ),
        (
            "measured_rate_cps",
            sites.iter().map(|s| s.measured_rate_cps).collect(),
        ),
        (
            "estimated_emitters",
            sites.iter().map(|s| s.estimated_emitters as f64).collect(),
        ),
        (
            "g2_zero",
            sites
                .iter()
                .map(|s| s.g2_zero.unwrap_or(f64::NAN))
                .collect(),
        ),
    ]
}

fn run_configured_survey(ctx: &Ctx) -> Result<(SurveyResult, &'static str)> {
    let section = &ctx.cfg.survey;
    match section.counting {
        CountingMode::Dip => Ok((
            run_g2_survey(&section.g2_config(), ctx.cfg.master_seed)?,
            "dip",
        )),
        CountingMode::Rate => Ok((
            run_survey(&section.rate_config(), ctx.cfg.master_seed)?,
            "rate",
        )),
    }
}

fn simulate_survey(ctx: &mut Ctx) -> Result<()> {
    let (result, mode) = run_configured_survey(ctx)?;
    let cols = survey_site_columns(&result);
    let borrowed: Vec<(&str, &[f64])> = cols.iter().map(|(n, v)| (*n, v.as_slice())).collect();
    ctx.add_table(
        "survey_sites",
        json!({"counting": mode, "n_sites": result.sites.len()}),
        &borrowed,
    )?;
    ctx.add_record("survey_result", "survey-result", &result)
}

fn simulate_lifetime(ctx: &mut Ctx) -> Result<()> {
    let pcfg = ctx.cfg.lifetime.pulsed();
    let mut rng = task_rng(ctx.cfg.master_seed, domain::LIFETIME, 0);
    let (time_s, counts) = pulsed_decay_histogram(&pcfg, &mut rng)?;
    ctx.add_table(
        "decay",
        json!({
            "n_photons": pcfg.n_photons,
            "irf_sigma_s": pcfg.irf_sigma_s,
            "background_fraction": pcfg.background_fraction,
        }),
        &[("time_s", &time_s), ("counts", &counts)],
    )
}

// ---------------------------------------------------------------------------
// stabilize

fn parse_quantity(
    text: &str,
    flag: &str,
    units: &[(&str, f64)],
    default_scale: f64,
) -> Result<f64> {
    let lower = text.trim().to_ascii_lowercase();
    let (digits, scale) = units
        .iter()
        .find_map(|(suffix, scale)| lower.strip_suffix(suffix).map(|d| (d, *scale)))
        .unwrap_or((lower.as_str(), default_scale));
    let value: f64 = digits.trim().parse().map_err(|_| {
        Error::Schema(format!("could not parse {flag} value `{text}`"))
    })?;
    if !(value >= 0.0) {
        return Err(Error::Schema(format!("{flag} must be >= 0, got `{text}`")));
    }
    Ok(value * scale)
}

/// Accepts `6`, `6mW`, `250uW`, `0.006W`; plain numbers are milliwatts.
fn parse_power_mw(text: &str) -> Result<f64> {
    parse_quantity(
        text,
        "--power",
        &[("mw", 1.0), ("uw", 1e-3), ("nw", 1e-6), ("w", 1e3)],
        1.0,
    )
}

/// Accepts `2`, `2h`, `30min`, `900s`; plain numbers are hours.
fn parse_duration_h(text: &str) -> Result<f64> {
    parse_quantity(
        text,
        "--duration",
        &[("min", 1.0 / 60.0), ("h", 1.0), ("s", 1.0 / 3600.0)],
        1.0,
    )
}

fn stabilize(ctx: &mut Ctx, args: &StabilizeArgs) -> Result<()> {
    let mut emitter = match &args.emitter {
        Some(path) => crate::dataset::load_record::<Emitter>(path, "emitter")?,
        None => ctx
            .cfg
            .pillar
            .emitters
            .first()
            .ok_or_else(|| Error::Schema("pillar.emitters must not be empty".into()))?
            .build()?,
    };
    let power_mw = parse_power_mw(&args.power)?;
    let duration_h = parse_duration_h(&args.duration)?;
    let before = emitter.config.dynamics.clone();
    let applied = emitter.stabilize(power_mw, duration_h);
    ctx.add_record("emitter", "emitter", &emitter)?;
    ctx.add_record(
        "stabilize_result",
        "stabilize-result",
        &json!({
            "applied": applied,
            "exposure_power_mw": power_mw,
            "exposure_duration_h": duration_h,
            "stabilized": emitter.stabilized,
            "dynamics_before": before,
            "dynamics_after": emitter.config.dynamics,
        }),
    )
}

// ---------------------------------------------------------------------------
// analyze

fn line_columns(stats: &SweepLineStats) -> Vec<(&'static str, Vec<f64>)> {
    let s = &stats.singles;
    vec![
        ("single", s.iter().map(|l| l.index as f64).collect()),
        (
            "ok",
            s.iter().map(|l| if l.ok { 1.0 } else { 0.0 }).collect(),
        ),
        (
            "center_hz",
            s.iter().map(|l| l.center_hz.unwrap_or(f64::NAN)).collect(),
        ),
        (
            "fwhm_hz",
            s.iter().map(|l| l.fwhm_hz.unwrap_or(f64::NAN)).collect(),
        ),
        (
            "peak_rate_per_power_cps_per_nw",
            s.iter()
                .map(|l| l.peak_rate_per_power_cps_per_nw.unwrap_or(f64::NAN))
                .collect(),
        ),
    ]
}

/// Per-point mean and standard error across passes, as live-time rates.
fn spectrum_columns(trace: &PleTrace) -> Vec<(&'static str, Vec<f64>)> {
    let n = trace.n_passes() as f64;
    let mean = trace.averaged();
    let mut se = vec![0.0; mean.len()];
    if trace.n_passes() > 1 {
        for (j, se_j) in se.iter_mut().enumerate() {
            let var = trace
                .counts
                .iter()
                .map(|row| (row[j] - mean[j]).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            *se_j = (var / n).sqrt();
        }
    }
    let live = trace.live_time_s;
    vec![
        ("detuning_hz", trace.detunings_hz.clone()),
        ("mean_rate_cps", mean.iter().map(|c| c / live).collect()),
        ("std_error_cps", se.iter().map(|c| c / live).collect()),
        ("mean_counts", mean),
    ]
}

fn analyze_ple(ctx: &mut Ctx, input: &Path, window: usize) -> Result<()> {
    let trace = load_ple_trace(input)?;
    let stats = sweep_line_stats(&trace, window)?;
    let lines = line_columns(&stats);
    let borrowed: Vec<(&str, &[f64])> = lines.iter().map(|(n, v)| (*n, v.as_slice())).collect();
    ctx.add_table(
        "ple_lines",
        json!({"window": window, "n_singles": stats.n_singles}),
        &borrowed,
    )?;
    let spectrum = spectrum_columns(&trace);
    let borrowed: Vec<(&str, &[f64])> = spectrum.iter().map(|(n, v)| (*n, v.as_slice())).collect();
    ctx.add_table("ple_spectrum", json!({"n_passes": trace.n_passes()}), &borrowed)?;
    ctx.add_record("ple_line_stats", "ple-line-stats", &stats)?;
    let fit = fit_lorentzian(
        &trace.detunings_hz,
        &trace.averaged(),
        &Weighting::PoissonCounts,
    )?;
    ctx.add_record("ple_average_fit", "fit-result", &fit)
}

/// Signal fraction inferred from the stream rate and configured background.
fn estimate_rho(ctx: &Ctx, total_rate_cps: f64) -> f64 {
    let power = match ctx.cfg.drive.off_resonant_fraction {
        Some(_) => 0.0,
        None => ctx.cfg.drive.power_nw,
    };
    let bg = ctx.cfg.background().rate(power);
    if total_rate_cps <= 0.0 {
        return 1.0;
    }
    ((total_rate_cps - bg) / total_rate_cps).clamp(1e-3, 1.0)
}

fn analyze_g2(ctx: &mut Ctx, input: &Path, rho_arg: Option<f64>) -> Result<()> {
    let (tags, header) = load_time_tags(input)?;
    let hist = correlate(&tags, ctx.cfg.drive.correlator())?;
    let rho = rho_arg.unwrap_or_else(|| {
        estimate_rho(ctx, header.rate_channel_1_cps + header.rate_channel_2_cps)
    });
    let analysis = g2(&hist, rho)?;
    ctx.add_table(
        "g2_curve",
        json!({"rho": rho, "bin_s": hist.bin_s}),
        &[
            ("lag_s", &analysis.lag_s),
            ("g2_raw", &analysis.g2_raw),
            ("g2_corrected", &analysis.g2_corrected),
        ],
    )?;
    ctx.add_record("g2_analysis", "g2-analysis", &analysis)
}

fn analyze_survey(ctx: &mut Ctx, input: &Path) -> Result<()> {
    let (_meta, cols) = load_table(input)?;
    let estimated = cols
        .iter()
        .find(|(name, _)| name == "estimated_emitters")
        .ok_or_else(|| {
            Error::Schema("input table has no `estimated_emitters` column".into())
        })?;
    let counts: Vec<u64> = estimated
        .1
        .iter()
        .map(|v| v.round().max(0.0) as u64)
        .collect();
    let fit = fit_poisson_mean(&counts)?;
    let categories = [0.0, 1.0, 2.0, 3.0];
    let observed: Vec<f64> = fit.observed.iter().map(|&c| c as f64).collect();
    ctx.add_table(
        "occupancy_hist",
        json!({"last_category_is_open": true}),
        &[
            ("emitters", &categories),
            ("observed_sites", &observed),
            ("expected_sites", &fit.expected),
        ],
    )?;
    ctx.add_record("occupancy_fit", "occupancy-fit", &fit)
}

// ---------------------------------------------------------------------------
// fit

fn fit_table(ctx: &mut Ctx, args: &FitArgs) -> Result<()> {
    let (_meta, cols) = load_table(&args.input)?;
    let pick = |sel: &Option<String>, default_idx: usize| -> Result<(String, Vec<f64>)> {
        match sel {
            Some(name) => cols
                .iter()
                .find(|(n, _)| n == name)
                .map(|(n, v)| (n.clone(), v.clone()))
                .ok_or_else(|| Error::Schema(format!("input table has no `{name}` column"))),
            None => cols
                .get(default_idx)
                .map(|(n, v)| (n.clone(), v.clone()))
                .ok_or_else(|| {
                    Error::Schema(format!(
                        "input table has {} columns, need at least {}",
                        cols.len(),
                        default_idx + 1
                    ))
                }),
        }
    };
    let (x_name, x) = pick(&args.x, 0)?;
    let (y_name, y) = pick(&args.y, 1)?;
    let weighting = match args.weighting {
        WeightingArg::Counts => Weighting::PoissonCounts,
        WeightingArg::None => Weighting::Unweighted,
    };
    let fit = match args.model {
        FitModel::Lorentzian => fit_lorentzian(&x, &y, &weighting)?,
        FitModel::MultiLorentzian => fit_multi_lorentzian(&x, &y, args.peaks, &weighting)?,
        FitModel::Exponential => fit_exponential_decay(&x, &y, &weighting)?,
        FitModel::Saturation => fit_saturation(&x, &y, &weighting)?,
        FitModel::PowerBroadening => fit_power_broadening(&x, &y)?,
        FitModel::DoubleGaussian => fit_double_gaussian(&x, &y, &weighting)?,
    };
    let model_name = format!("{:?}", args.model).to_ascii_lowercase();
    ctx.add_record(
        "fit_result",
        "fit-result",
        &json!({"model": model_name, "x": x_name, "y": y_name, "fit": fit}),
    )
}

// ---------------------------------------------------------------------------
// report

fn report_figure(ctx: &mut Ctx, id: FigureId) -> Result<()> {
    match id {
        FigureId::F1e => report_1e(ctx),
        FigureId::F2c => report_2c(ctx),
        FigureId::F2d => report_2d(ctx),
        FigureId::F2e => report_2e(ctx),
        FigureId::F3a => report_3a(ctx),
        FigureId::F3c => report_3c(ctx),
        FigureId::F3d => report_3d(ctx),
        FigureId::F3ef => report_3ef(ctx),
        FigureId::F4 => report_4(ctx),
    }
}

fn run_configured_sweep(ctx: &Ctx, scheme: SchemeName, tag: u64) -> Result<(PleTrace, SweepPlan)> {
    let pulses = PulseConfig {
        scheme,
        ..ctx.cfg.pulses.clone()
    };
    let plan = ctx
        .cfg
        .sweep
        .plan(ctx.cfg.drive.power_nw, pulses.drive_scheme()?);
    plan.validate()?;
    let mut emitters = ctx.cfg.emitters()?;
    let trace = run_sweep(&mut emitters, &ctx.cfg.background(), &plan, ctx.subseed(tag))?;
    Ok((trace, plan))
}

fn report_1e(ctx: &mut Ctx) -> Result<()> {
    let (trace, plan) = run_configured_sweep(ctx, ctx.cfg.pulses.scheme, 0x1e)?;
    let n = trace.n_passes();
    let pass: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let direction: Vec<f64> = trace
        .directions
        .iter()
        .map(|d| match d {
            SweepDirection::Up => 1.0,
            SweepDirection::Down => -1.0,
        })
        .collect();
    let mean: Vec<f64> = trace
        .counts
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64 / trace.live_time_s)
        .collect();
    let peak: Vec<f64> = trace
        .counts
        .iter()
        .map(|row| row.iter().cloned().fold(0.0, f64::max) / trace.live_time_s)
        .collect();
    ctx.add_table(
        "fig1e_passes",
        json!({"figure": "1e"}),
        &[
            ("pass", &pass),
            ("start_time_s", &trace.start_times_s),
            ("direction", &direction),
            ("mean_rate_cps", &mean),
            ("peak_rate_cps", &peak),
        ],
    )?;
    ctx.add_trace("fig1e_trace", &trace)?;
    ctx.add_record("fig1e_timing", "sweep-summary", &sweep_summary(&plan))
}

fn report_2c(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx
        .cfg
        .pillar
        .emitters
        .first()
        .ok_or_else(|| Error::Schema("pillar.emitters must not be empty".into()))?;
    let transition = spec.transition()?;
    let powers: Vec<f64> = if ctx.cfg.drive.powers_nw.is_empty() {
        (0..12)
            .map(|i| 1.0 * (200.0f64 / 1.0).powf(i as f64 / 11.0))
            .collect()
    } else {
        ctx.cfg.drive.powers_nw.clone()
    };
    let dwell_s = 5.0;
    let bg = ctx.cfg.background();
    let mut rng = task_rng(ctx.cfg.master_seed, domain::MISC, 0x2c);
    let rates: Vec<f64> = powers
        .iter()
        .map(|&p| {
            let expected = (spec.brightness * transition.saturation_rate(p) + bg.rate(p)) * dwell_s;
            let noisy: f64 = if expected > 0.0 {
                rand_distr::Poisson::new(expected).map(|d| d.sample(&mut rng)).unwrap_or(expected)
            } else {
                0.0
            };
            noisy / dwell_s
        })
        .collect();
    let fit = fit_saturation(&powers, &rates, &Weighting::PoissonCounts)?;
    let s_max = fit.value("max_rate").unwrap_or(f64::NAN);
    let p_sat = fit.value("saturation_power").unwrap_or(f64::NAN);
    let linear = fit.value("linear_background").unwrap_or(0.0);
    let fitted: Vec<f64> = powers
        .iter()
        .map(|&p| s_max * p / (p + p_sat) + linear * p)
        .collect();
    ctx.add_table(
        "fig2c_saturation",
        json!({"figure": "2c", "dwell_s": dwell_s}),
        &[
            ("power_nw", &powers),
            ("rate_cps", &rates),
            ("fitted_rate_cps", &fitted),
        ],
    )?;
    ctx.add_record(
        "fig2c_fit",
        "fit-result",
        &json!({"fit": fit, "rho_at_p_sat": saturation_rho(&fit, p_sat)}),
    )
}

fn report_2d(ctx: &mut Ctx) -> Result<()> {
    let (result, mode) = run_configured_survey(ctx)?;
    let cols = survey_site_columns(&result);
    let borrowed: Vec<(&str, &[f64])> = cols.iter().map(|(n, v)| (*n, v.as_slice())).collect();
    ctx.add_table(
        "fig2d_sites",
        json!({"figure": "2d", "counting": mode}),
        &borrowed,
    )?;
    let fit = &result.occupancy;
    let categories = [0.0, 1.0, 2.0, 3.0];
    let observed: Vec<f64> = fit.observed.iter().map(|&c| c as f64).collect();
    ctx.add_table(
        "fig2d_occupancy",
        json!({"figure": "2d", "last_category_is_open": true}),
        &[
            ("emitters", &categories),
            ("observed_sites", &observed),
            ("expected_sites", &fit.expected),
        ],
    )?;
    ctx.add_record("fig2d_result", "survey-result", &result)
}

fn report_2e(ctx: &mut Ctx) -> Result<()> {
    let pcfg = ctx.cfg.lifetime.pulsed();
    let mut rng = task_rng(ctx.cfg.master_seed, domain::LIFETIME, 0);
    let (time_s, counts) = pulsed_decay_histogram(&pcfg, &mut rng)?;
    let fit = fit_exponential_decay(&time_s, &counts, &Weighting::PoissonCounts)?;
    let tau = fit.value("lifetime").unwrap_or(f64::NAN);
    ctx.add_table(
        "fig2e_decay",
        json!({"figure": "2e", "n_photons": pcfg.n_photons}),
        &[("time_s", &time_s), ("counts", &counts)],
    )?;
    ctx.add_record(
        "fig2e_fit",
        "lifetime-fit",
        &json!({
            "fit": fit,
            "lifetime_s": tau,
            "lifetime_limit_fwhm_hz": if tau > 0.0 { lifetime_limited_fwhm(tau) } else { f64::NAN },
        }),
    )
}

fn report_3a(ctx: &mut Ctx) -> Result<()> {
    let (trace, _plan) = run_configured_sweep(ctx, ctx.cfg.pulses.scheme, 0x3a)?;
    let spectrum = spectrum_columns(&trace);
    let borrowed: Vec<(&str, &[f64])> = spectrum.iter().map(|(n, v)| (*n, v.as_slice())).collect();
    ctx.add_table(
        "fig3a_spectrum",
        json!({"figure": "3a", "n_passes": trace.n_passes()}),
        &borrowed,
    )?;
    ctx.add_trace("fig3a_trace", &trace)?;
    let fit = fit_lorentzian(
        &trace.detunings_hz,
        &trace.averaged(),
        &Weighting::PoissonCounts,
    )?;
    ctx.add_record("fig3a_fit", "fit-result", &fit)
}

fn report_3c(ctx: &mut Ctx) -> Result<()> {
    let (trace, _plan) = run_configured_sweep(ctx, ctx.cfg.pulses.scheme, 0x3c)?;
    let stats = sweep_line_stats(&trace, 4)?;
    let lines = line_columns(&stats);
    let borrowed: Vec<(&str, &[f64])> = lines.iter().map(|(n, v)| (*n, v.as_slice())).collect();
    ctx.add_table(
        "fig3c_linewidth",
        json!({"figure": "3c", "window": 4}),
        &borrowed,
    )?;
    ctx.add_record("fig3c_stats", "ple-line-stats", &stats)
}

fn report_3d(ctx: &mut Ctx) -> Result<()> {
    let (trace, _plan) = run_configured_sweep(ctx, ctx.cfg.pulses.scheme, 0x3d)?;
    let stats = sweep_line_stats(&trace, 4)?;
    let n = stats.n_singles;
    let step = (n / 10).max(1);
    let ks: Vec<usize> = (1..=10).map(|i| (i * step).min(n)).collect();
    let mut ks = ks;
    ks.dedup();
    let curve = convergence_curve(&trace, 4, &ks, 50, ctx.cfg.master_seed)?;
    let k: Vec<f64> = curve.k.iter().map(|&v| v as f64).collect();
    ctx.add_table(
        "fig3d_convergence",
        json!({"figure": "3d", "n_shuffles": curve.n_shuffles}),
        &[
            ("k", &k),
            ("cumulative_fwhm_hz", &curve.cumulative_fwhm_hz),
            ("resampled_fwhm_hz", &curve.resampled_fwhm_hz),
            ("resampled_sd_hz", &curve.resampled_sd_hz),
        ],
    )?;
    ctx.add_record("fig3d_curve", "convergence-curve", &curve)
}

fn hist_columns(h: &Histogram1D) -> [(&'static str, Vec<f64>); 3] {
    let n = h.counts.len();
    [
        ("bin_lo", h.edges[..n].to_vec()),
        ("bin_hi", h.edges[1..].to_vec()),
        ("count", h.counts.iter().map(|&c| c as f64).collect()),
    ]
}

fn report_3ef(ctx: &mut Ctx) -> Result<()> {
    let (trace_a, _) = run_configured_sweep(ctx, SchemeName::Crf, 0x3e0)?;
    let (trace_b, _) = run_configured_sweep(ctx, SchemeName::Cr515, 0x3e1)?;
    let stats_a = sweep_line_stats(&trace_a, 4)?;
    let stats_b = sweep_line_stats(&trace_b, 4)?;
    for (tag, stats) in [("crf", &stats_a), ("cr515", &stats_b)] {
        let fwhm_hist = histogram(&stats.fwhms_hz(), None)?;
        let cols = hist_columns(&fwhm_hist);
        let borrowed: Vec<(&str, &[f64])> = cols.iter().map(|(n, v)| (*n, v.as_slice())).collect();
        ctx.add_table(
            &format!("fig3e_fwhm_{tag}"),
            json!({"figure": "3e", "scheme": tag}),
            &borrowed,
        )?;
        let center_hist = histogram(&stats.centers_relative_hz(), None)?;
        let cols = hist_columns(&center_hist);
        let borrowed: Vec<(&str, &[f64])> = cols.iter().map(|(n, v)| (*n, v.as_slice())).collect();
        ctx.add_table(
            &format!("fig3f_center_{tag}"),
            json!({"figure": "3f", "scheme": tag}),
            &borrowed,
        )?;
    }
    ctx.add_record(
        "fig3ef_comparison",
        "scheme-comparison",
        &compare_schemes(&stats_a, &stats_b),
    )
}

fn report_4(ctx: &mut Ctx) -> Result<()> {
    let mut specs = ctx.cfg.pillar.emitters.clone();
    if specs.len() < 3 {
        let base = specs
            .first()
            .ok_or_else(|| Error::Schema("pillar.emitters must not be empty".into()))?
            .clone();
        specs = [-1.2e9, 0.0, 1.2e9]
            .iter()
            .map(|&d| {
                let mut s = base.clone();
                s.static_detuning_hz = d;
                s
            })
            .collect();
    }
    let spread = specs
        .iter()
        .map(|s| s.static_detuning_hz.abs())
        .fold(0.0, f64::max);

    // Scan wide enough to hold every line, with the pass count kept modest.
    let mut sweep = ctx.cfg.sweep.clone();
    sweep.span_hz = sweep.span_hz.max(2.0 * spread + 1.6e9);
    sweep.n_points = sweep.n_points.max(81);
    sweep.n_passes = sweep.n_passes.min(8);
    let plan = sweep.plan(ctx.cfg.drive.power_nw, ctx.cfg.drive_scheme()?);
    plan.validate()?;
    let mut emitters: Vec<Emitter> = specs.iter().map(|s| s.build()).collect::<Result<_>>()?;
    let trace = run_sweep(
        &mut emitters,
        &ctx.cfg.background(),
        &plan,
        ctx.subseed(0x40),
    )?;
    let averaged = trace.averaged();
    let fit = fit_multi_lorentzian(
        &trace.detunings_hz,
        &averaged,
        specs.len(),
        &Weighting::PoissonCounts,
    )?;
    let mut centers: Vec<f64> = (1..=specs.len())
        .filter_map(|i| fit.value(&format!("center_{i}")))
        .collect();
    centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let spectrum = spectrum_columns(&trace);
    let borrowed: Vec<(&str, &[f64])> = spectrum.iter().map(|(n, v)| (*n, v.as_slice())).collect();
    ctx.add_table("fig4_spectrum", json!({"figure": "4"}), &borrowed)?;
    ctx.add_trace("fig4_trace", &trace)?;
    ctx.add_record("fig4_fit", "fit-result", &fit)?;

    // Correlation under broadband drive sees every emitter at once.
    let s = ctx.cfg.drive.off_resonant_fraction.unwrap_or(0.5);
    let fresh = |s: &[crate::config::EmitterSpec]| -> Result<Vec<Emitter>> {
        s.iter().map(|spec| spec.build()).collect()
    };
    let bundle_g2 = |ctx: &Ctx, tags: &[TimeTag]| -> Result<G2Analysis> {
        let hist = correlate(tags, ctx.cfg.drive.correlator())?;
        let duration = ctx.cfg.drive.hbt_duration_s;
        let rate = tags.len() as f64 / duration;
        g2(&hist, estimate_rho(ctx, rate))
    };
    let tags = hbt_stream(
        ctx,
        fresh(&specs)?,
        Drive::OffResonant {
            saturation_fraction: s,
        },
        ctx.subseed(0x41),
    )?;
    let off_resonant = bundle_g2(ctx, &tags)?;

    // Then each line alone under narrow-band drive at its fitted center.
    let mut per_line = Vec::with_capacity(centers.len());
    for (i, &center) in centers.iter().enumerate() {
        let tags = hbt_stream(
            ctx,
            fresh(&specs)?,
            Drive::Resonant {
                laser_hz: trace.center_hz + center,
                power_nw: ctx.cfg.drive.power_nw,
            },
            ctx.subseed(0x42 + i as u64),
        )?;
        per_line.push(bundle_g2(ctx, &tags)?);
    }

    let mut cols: Vec<(String, Vec<f64>)> = vec![
        ("lag_s".into(), off_resonant.lag_s.clone()),
        ("g2_off_resonant".into(), off_resonant.g2_corrected.clone()),
    ];
    for (i, line) in per_line.iter().enumerate() {
        cols.push((format!("g2_line_{i}"), line.g2_corrected.clone()));
    }
    let borrowed: Vec<(&str, &[f64])> = cols.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
    ctx.add_table("fig4_g2", json!({"figure": "4"}), &borrowed)?;
    ctx.add_record(
        "fig4_summary",
        "g2-summary",
        &json!({
            "off_resonant": off_resonant,
            "lines": per_line,
            "line_centers_hz": centers,
        }),
    )
}
