//! `menucast`: ingest POS exports, fit, forecast, tune and evaluate per-item models.

mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::Duration;
use clap::{Args, Parser, Subcommand};
use log::info;
use menucast_core::evaluate::{evaluate_suite, EvalConfig, Method};
use menucast_core::forecast::{plot_data, write_plot_csv, DEFAULT_ALPHA, DEFAULT_SAMPLES};
use menucast_core::ingest::{ingest_item, item_ids, read_line_items, IngestSummary};
use menucast_core::seed::derive;
use menucast_core::tuning::{stepwise_cv, TuneGrids};
use menucast_core::{
    fit_map, in_sample_coverage, sample_predictive, synth, FitReport, Likelihood, ModelSpec, OpenDayCalendar,
    PriorFamily, SalesSeries,
};
use rayon::prelude::*;
use serde::Serialize;

use config::{parse_grid, parse_likelihood, parse_methods, parse_prior, FileConfig};

#[derive(Parser, Debug)]
#[command(name = "menucast", version, about = "Daily menu-item sales forecasting from POS data")]
struct Cli {
    /// TOML file with run settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-item parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a POS line-item CSV into one daily series per item.
    Ingest(IngestArgs),
    /// Fit a model per item and write the fit report and plot data.
    Fit(ModelArgs),
    /// Fit and forecast the days after each series.
    Forecast(ForecastArgs),
    /// Step-wise cross-validated tuning of the shrinkage parameters.
    Tune(TuneArgs),
    /// Rolling-origin evaluation against naive baselines.
    Evaluate(EvaluateArgs),
    /// Write synthetic POS data and series.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// POS export with columns item_id,timestamp[,quantity].
    #[arg(long)]
    input: Option<PathBuf>,
    /// Items to keep (repeatable); all items by default.
    #[arg(long = "item")]
    items: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// A series CSV or a directory of them (item id = file stem).
    #[arg(long)]
    series: Option<PathBuf>,
    #[arg(long = "item")]
    items: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// normal or negbinom.
    #[arg(long)]
    likelihood: Option<String>,
    /// lasso or horseshoe.
    #[arg(long)]
    prior: Option<String>,
    /// Spline degree.
    #[arg(long)]
    degree: Option<usize>,
    /// Days between candidate change points.
    #[arg(long)]
    knot_spacing: Option<i64>,
    #[arg(long)]
    tau1: Option<f64>,
    #[arg(long)]
    tau2: Option<f64>,
    #[arg(long)]
    tau3: Option<f64>,
    /// Intervals are at level 1 - alpha.
    #[arg(long)]
    alpha: Option<f64>,
    /// Monte-Carlo replicates.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Days to forecast after the last observation.
    #[arg(long)]
    horizon: Option<usize>,
    /// Also write every Monte-Carlo replicate.
    #[arg(long)]
    write_samples: bool,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    /// Comma-separated candidates.
    #[arg(long)]
    grid_tau1: Option<String>,
    #[arg(long)]
    grid_tau2: Option<String>,
    #[arg(long)]
    grid_tau3: Option<String>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    /// Comma-separated subset of NORMAL,NEGBINOM,naive,seasonal-naive.
    #[arg(long)]
    methods: Option<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// suite (benchmark series) or level-shift.
    #[arg(long)]
    kind: Option<String>,
    /// Number of series.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Settings shared by the model-based commands after merging file and flags.
#[derive(Debug, Clone)]
struct ModelSettings {
    series: PathBuf,
    items: Vec<String>,
    out: PathBuf,
    likelihood: Likelihood,
    prior: PriorFamily,
    degree: usize,
    knot_spacing: i64,
    taus: [Option<f64>; 3],
    alpha: f64,
    samples: usize,
    seed: u64,
}

impl ModelSettings {
    fn resolve(a: &ModelArgs, file: &FileConfig, seed: u64) -> Result<Self> {
        let likelihood = a.likelihood.clone().or_else(|| file.likelihood.clone());
        let prior = a.prior.clone().or_else(|| file.prior.clone());
        Ok(Self {
            series: a
                .series
                .clone()
                .or_else(|| file.series.clone())
                .ok_or_else(|| anyhow!("no series given (--series or `series` in the config)"))?,
            items: pick_items(&a.items, file),
            out: a.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
            likelihood: likelihood.as_deref().map(parse_likelihood).transpose()?.unwrap_or(Likelihood::NegBinom),
            prior: prior.as_deref().map(parse_prior).transpose()?.unwrap_or(PriorFamily::Lasso),
            degree: a.degree.or(file.degree).unwrap_or(1),
            knot_spacing: a.knot_spacing.or(file.knot_spacing).unwrap_or(30),
            taus: [a.tau1.or(file.tau1), a.tau2.or(file.tau2), a.tau3.or(file.tau3)],
            alpha: a.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA),
            samples: a.samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES),
            seed,
        })
    }

    /// Standard settings for `n` observations with any overrides applied.
    fn spec(&self, likelihood: Likelihood, n: usize) -> ModelSpec {
        let mut spec = ModelSpec::standard(likelihood, n);
        spec.prior.family = self.prior;
        spec.degree = self.degree;
        spec.knot_spacing = self.knot_spacing;
        let [t1, t2, t3] = self.taus;
        spec.prior.tau1 = t1.unwrap_or(spec.prior.tau1);
        spec.prior.tau2 = t2.unwrap_or(spec.prior.tau2);
        spec.prior.tau3 = t3.unwrap_or(spec.prior.tau3);
        spec
    }

    fn fixed_taus(&self) -> Result<Option<(f64, f64, f64)>> {
        match self.taus {
            [None, None, None] => Ok(None),
            [Some(a), Some(b), Some(c)] => Ok(Some((a, b, c))),
            _ => bail!("evaluate needs all of tau1, tau2 and tau3, or none of them"),
        }
    }
}

fn pick_items(flags: &[String], file: &FileConfig) -> Vec<String> {
    if flags.is_empty() {
        file.items.clone().unwrap_or_default()
    } else {
        flags.to_vec()
    }
}

/// Item ids are opaque; file names keep only portable characters.
fn file_stem(item: &str) -> String {
    item.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct ItemFailure {
    item_id: String,
    reason: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Reads a single series file or every `*.csv` in a directory, sorted by name.
/// Selected items that are not found become failures.
fn load_series(path: &Path, items: &[String]) -> Result<(Vec<SalesSeries>, Vec<ItemFailure>)> {
    let mut files: Vec<PathBuf> = if path.is_dir() {
        fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect()
    } else {
        vec![path.to_path_buf()]
    };
    files.sort();
    let mut series = Vec::new();
    let mut failures = Vec::new();
    for f in files {
        let id = f
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("bad file name {}", f.display()))?
            .to_string();
        if !items.is_empty() && !items.contains(&id) {
            continue;
        }
        let file = File::open(&f).with_context(|| format!("opening {}", f.display()))?;
        match SalesSeries::read_csv(id.clone(), BufReader::new(file)) {
            Ok(s) => series.push(s),
            Err(e) => failures.push(ItemFailure {
                item_id: id,
                reason: format!("{}: {e}", f.display()),
            }),
        }
    }
    for it in items {
        if !series.iter().any(|s| s.item_id() == it) && !failures.iter().any(|f| &f.item_id == it) {
            failures.push(ItemFailure {
                item_id: it.clone(),
                reason: format!("no records for item '{it}'"),
            });
        }
    }
    Ok((series, failures))
}

/// Runs `job` for every series in parallel, keeping input order.
fn per_item<F>(series: &[SalesSeries], failures: &mut Vec<ItemFailure>, job: F)
where
    F: Fn(&SalesSeries) -> Result<()> + Sync,
{
    let results: Vec<Result<()>> = series.par_iter().map(&job).collect();
    for (s, r) in series.iter().zip(results) {
        if let Err(e) = r {
            failures.push(ItemFailure {
                item_id: s.item_id().to_string(),
                reason: format!("{e:#}"),
            });
        }
    }
}

fn finish(out: &Path, failures: &[ItemFailure]) -> Result<bool> {
    write_json(&out.join("failures.json"), &failures)?;
    for f in failures {
        eprintln!("failed: {}: {}", f.item_id, f.reason);
    }
    Ok(failures.is_empty())
}

fn cmd_ingest(a: &IngestArgs, file: &FileConfig) -> Result<bool> {
    let input = a
        .input
        .clone()
        .or_else(|| file.input.clone())
        .ok_or_else(|| anyhow!("no input given (--input or `input` in the config)"))?;
    let out = a.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let reader = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
    let items = read_line_items(BufReader::new(reader)).with_context(|| format!("reading {}", input.display()))?;
    let calendar = OpenDayCalendar::from_items(&items);
    let mut selected = pick_items(&a.items, file);
    if selected.is_empty() {
        selected = item_ids(&items);
        selected.sort();
    }
    let series_dir = out.join("series");
    fs::create_dir_all(&series_dir)?;
    let results: Vec<Result<IngestSummary>> = selected
        .par_iter()
        .map(|id| {
            let (series, summary) = ingest_item(&items, &calendar, id)?;
            let mut w = create(&series_dir.join(format!("{}.csv", file_stem(id))))?;
            series.write_csv(&mut w)?;
            w.flush()?;
            Ok(summary)
        })
        .collect();
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in selected.iter().zip(results) {
        match r {
            Ok(s) => summaries.push(s),
            Err(e) => failures.push(ItemFailure {
                item_id: id.clone(),
                reason: format!("{e:#}"),
            }),
        }
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        line_items: usize,
        open_days: usize,
        items: &'a [IngestSummary],
    }
    write_json(
        &out.join("ingest_summary.json"),
        &Summary {
            line_items: items.len(),
            open_days: calendar.len(),
            items: &summaries,
        },
    )?;
    info!("ingested {} items into {}", summaries.len(), series_dir.display());
    finish(&out, &failures)
}

#[derive(Serialize)]
struct FitOutput {
    #[serde(flatten)]
    report: FitReport,
    alpha: f64,
    n_samples: usize,
    seed: u64,
    in_sample_coverage: f64,
}

fn cmd_fit(a: &ModelArgs, file: &FileConfig, seed: u64) -> Result<bool> {
    let s = ModelSettings::resolve(a, file, seed)?;
    let (series, mut failures) = load_series(&s.series, &s.items)?;
    fs::create_dir_all(&s.out)?;
    per_item(&series, &mut failures, |item| {
        let id = item.item_id();
        let est = fit_map(item, &s.spec(s.likelihood, item.n_observed()))?;
        let seed = derive(s.seed, &format!("plot:{id}"), &[]);
        let points = plot_data(&est, item, s.alpha, s.samples, seed)?;
        let coverage = in_sample_coverage(&est, item, s.alpha, s.samples, seed)?;
        let stem = file_stem(id);
        write_json(
            &s.out.join(format!("{stem}.fit.json")),
            &FitOutput {
                report: est.report(id),
                alpha: s.alpha,
                n_samples: s.samples,
                seed,
                in_sample_coverage: coverage,
            },
        )?;
        let mut w = create(&s.out.join(format!("{stem}.plot.csv")))?;
        write_plot_csv(&points, &mut w)?;
        w.flush()?;
        Ok(())
    });
    finish(&s.out, &failures)
}

fn cmd_forecast(a: &ForecastArgs, file: &FileConfig, seed: u64) -> Result<bool> {
    let s = ModelSettings::resolve(&a.model, file, seed)?;
    let horizon = a.horizon.or(file.horizon).unwrap_or(14);
    if horizon == 0 {
        bail!("horizon must be at least one day");
    }
    let (series, mut failures) = load_series(&s.series, &s.items)?;
    fs::create_dir_all(&s.out)?;
    per_item(&series, &mut failures, |item| {
        let id = item.item_id();
        let est = fit_map(item, &s.spec(s.likelihood, item.n_observed()))?;
        let last = item.last_date();
        let dates: Vec<_> = (1..=horizon as i64).map(|h| last + Duration::days(h)).collect();
        let seed = derive(s.seed, &format!("forecast:{id}"), &[]);
        let bundle = sample_predictive(&est, &dates, s.samples, s.alpha, seed)?;
        let stem = file_stem(id);
        let mut w = create(&s.out.join(format!("{stem}.forecast.csv")))?;
        bundle.write_csv(&mut w)?;
        w.flush()?;
        write_json(&s.out.join(format!("{stem}.forecast.json")), &bundle)?;
        if a.write_samples {
            let mut w = create(&s.out.join(format!("{stem}.samples.csv")))?;
            bundle.write_samples_csv(&mut w)?;
            w.flush()?;
        }
        Ok(())
    });
    finish(&s.out, &failures)
}

fn cmd_tune(a: &TuneArgs, file: &FileConfig, seed: u64) -> Result<bool> {
    let s = ModelSettings::resolve(&a.model, file, seed)?;
    let folds = a.folds.or(file.tune.folds).unwrap_or(6);
    let test_size = a.test_size.or(file.tune.test_size).unwrap_or(14);
    let mut grids = TuneGrids::default();
    for (flag, from_file, target) in [
        (&a.grid_tau1, &file.tune.grid_tau1, &mut grids.tau1),
        (&a.grid_tau2, &file.tune.grid_tau2, &mut grids.tau2),
        (&a.grid_tau3, &file.tune.grid_tau3, &mut grids.tau3),
    ] {
        if let Some(g) = flag {
            *target = parse_grid(g)?;
        } else if let Some(g) = from_file {
            *target = g.clone();
        }
    }
    let (series, mut failures) = load_series(&s.series, &s.items)?;
    fs::create_dir_all(&s.out)?;
    per_item(&series, &mut failures, |item| {
        let spec = s.spec(s.likelihood, item.n_observed());
        let result = stepwise_cv(item, &spec, &grids, folds, test_size)?;
        write_json(&s.out.join(format!("{}.tune.json", file_stem(item.item_id()))), &result)
    });
    finish(&s.out, &failures)
}

fn cmd_evaluate(a: &EvaluateArgs, file: &FileConfig, seed: u64) -> Result<bool> {
    let s = ModelSettings::resolve(&a.model, file, seed)?;
    let methods = match (&a.methods, &file.evaluate.methods) {
        (Some(m), _) => parse_methods(&m.split(',').map(|x| x.trim().to_string()).collect::<Vec<_>>())?,
        (None, Some(m)) => parse_methods(m)?,
        (None, None) => Method::ALL.to_vec(),
    };
    let cfg = EvalConfig {
        n_folds: a.folds.or(file.evaluate.folds).unwrap_or(15),
        test_size: a.test_size.or(file.evaluate.test_size).unwrap_or(14),
        alpha: s.alpha,
        n_samples: s.samples,
        seed: s.seed,
        methods,
        prior: s.prior,
        degree: s.degree,
        knot_spacing: s.knot_spacing,
        taus: s.fixed_taus()?,
        ..EvalConfig::default()
    };
    let (series, mut failures) = load_series(&s.series, &s.items)?;
    fs::create_dir_all(&s.out)?;
    let suite = evaluate_suite(&series, &cfg);
    let mut w = create(&s.out.join("eval_folds.csv"))?;
    suite.write_folds_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&s.out.join("eval_summary.csv"))?;
    suite.write_summary_csv(&mut w)?;
    w.flush()?;
    let text = suite.render_text();
    fs::write(s.out.join("eval_report.txt"), &text)?;
    print!("{text}");
    for f in &suite.failures {
        let method = f.method.map(|m| format!(" {m}")).unwrap_or_default();
        let fold = f.fold.map(|x| format!(" fold {x}")).unwrap_or_default();
        failures.push(ItemFailure {
            item_id: f.item_id.clone(),
            reason: format!("{}{method}{fold}: {}", f.item_id, f.reason),
        });
    }
    finish(&s.out, &failures)
}

fn cmd_synth(a: &SynthArgs, file: &FileConfig, seed: u64) -> Result<bool> {
    let kind = a.kind.clone().or_else(|| file.synth.kind.clone()).unwrap_or_else(|| "suite".into());
    let n = a.n.or(file.synth.n).unwrap_or(20);
    let out = a.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let generated = match kind.as_str() {
        "suite" => synth::benchmark_suite(n, seed)?,
        "level-shift" => (0..n)
            .map(|i| {
                let mut s = synth::level_shift_series(derive(seed, "level-shift-item", &[i as u64]))?;
                s.series = SalesSeries::new(
                    format!("shift{:02}", i + 1),
                    s.series.first_date(),
                    s.series.values().to_vec(),
                )?;
                Ok(s)
            })
            .collect::<menucast_core::Result<Vec<_>>>()?,
        other => bail!("unknown synthetic kind '{other}' (expected suite or level-shift)"),
    };
    let series: Vec<SalesSeries> = generated.iter().map(|g| g.series.clone()).collect();
    let series_dir = out.join("series");
    fs::create_dir_all(&series_dir)?;
    for s in &series {
        let mut w = create(&series_dir.join(format!("{}.csv", file_stem(s.item_id()))))?;
        s.write_csv(&mut w)?;
        w.flush()?;
    }
    let items = synth::to_line_items(&series, seed)?;
    let mut w = create(&out.join("pos.csv"))?;
    synth::write_line_items(&items, &mut w)?;
    w.flush()?;
    #[derive(Serialize)]
    struct Truth<'a> {
        item_id: &'a str,
        spec: &'a synth::SynthSpec,
        means: &'a [f64],
    }
    let truth: Vec<Truth> = generated
        .iter()
        .map(|g| Truth {
            item_id: g.series.item_id(),
            spec: &g.spec,
            means: &g.means,
        })
        .collect();
    write_json(&out.join("truth.json"), &truth)?;
    info!("wrote {} synthetic series to {}", series.len(), out.display());
    Ok(true)
}

fn run(cli: &Cli) -> Result<bool> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    if let Some(w) = cli.workers.or(file.workers) {
        rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global()?;
    }
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, &file),
        Command::Fit(a) => cmd_fit(a, &file, seed),
        Command::Forecast(a) => cmd_forecast(a, &file, seed),
        Command::Tune(a) => cmd_tune(a, &file, seed),
        Command::Evaluate(a) => cmd_evaluate(a, &file, seed),
        Command::Synth(a) => cmd_synth(a, &file, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
