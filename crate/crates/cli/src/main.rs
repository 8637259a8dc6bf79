//! `salescast`: ingest transactions, fit and transfer forecasting models, and
//! run the evaluation scenarios from the command line.

mod artifacts;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use salescast::evaluation::{run_all, run_scenario, RunConfig, ScenarioConfig, ScenarioId, ScenarioOutcome};
use salescast::fitting::{fit, FitConfig};
use salescast::model::AdditiveModel;
use salescast::pipeline::{
    aggregate_daily, clean_transactions, log2_transform, parse_transactions, CleaningConfig, CleaningReport, MalformedRow,
    ZeroPolicy,
};
use salescast::series::DailySeries;
use salescast::synthetic::{generate_branch, six_branch_specs};
use salescast::transfer::{adapt, changepoint_weight_profile, zero_shot_forecast, zero_shot_model, AdaptConfig};

use artifacts::{sibling, write_atomic, write_json, Run};

#[derive(Debug)]
pub enum CliError {
    /// Bad input, configuration or arguments: exit code 2.
    Input(String),
    /// Everything else: exit code 1.
    Internal(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError::Internal(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<salescast::Error> for CliError {
    fn from(e: salescast::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "salescast", version, about = "Daily sales forecasting with transferable additive models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a transaction CSV and aggregate it to a daily series.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Cleaning configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Entity id; defaults to the input file stem.
        #[arg(long)]
        entity: Option<String>,
        /// Daily-series CSV to write; the cleaning report goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model on a daily-series CSV.
    Fit {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        fit_config: Option<PathBuf>,
        /// Map zero-sales days to log2(y + OFFSET) instead of treating them as gaps.
        #[arg(long)]
        log_offset: Option<f64>,
        #[arg(long)]
        entity: Option<String>,
        /// Model JSON to write; diagnostics go next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict a date range with a saved model.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        from: NaiveDate,
        #[arg(long)]
        to: NaiveDate,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the trend and seasonal components of a saved model.
    Components {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        from: NaiveDate,
        #[arg(long)]
        to: NaiveDate,
        #[arg(long)]
        out: PathBuf,
    },
    /// Move a model to another entity, as-is or adapted to target data.
    Transfer {
        /// Source model JSON.
        #[arg(long)]
        source: PathBuf,
        #[arg(long, value_enum)]
        mode: TransferModeArg,
        /// Target entity id; defaults to the target series file stem.
        #[arg(long)]
        target: Option<String>,
        /// Target daily-series CSV (observation space), required for `adapt`.
        #[arg(long)]
        series: Option<PathBuf>,
        #[arg(long)]
        adapt_config: Option<PathBuf>,
        #[arg(long)]
        log_offset: Option<f64>,
        /// With `--from/--to` a forecast CSV is written, otherwise model JSON.
        #[arg(long, requires = "to")]
        from: Option<NaiveDate>,
        #[arg(long, requires = "from")]
        to: Option<NaiveDate>,
        /// Also write the changepoint weight profile (`date,weight`) here.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run evaluation scenarios over a directory of series or the synthetic preset.
    Scenario {
        /// Directory of daily-series CSVs, one per entity (file stem = entity id).
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        data: Option<PathBuf>,
        /// Use the six-branch synthetic preset with this seed.
        #[arg(long)]
        synthetic: Option<u64>,
        #[arg(long, value_parser = ["1a", "1b", "2", "3", "all"], default_value = "all")]
        scenario: String,
        #[arg(long)]
        fit_config: Option<PathBuf>,
        #[arg(long)]
        adapt_config: Option<PathBuf>,
        #[arg(long, value_parser = ["1", "6", "12"], default_value = "12")]
        horizon: String,
        #[arg(long)]
        log_offset: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the six-branch synthetic preset as daily-series CSVs.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the noise level of every branch.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum TransferModeArg {
    ZeroShot,
    Adapt,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("salescast: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Ingest { input, config, entity, out } => cmd_ingest(&input, config.as_deref(), entity, &out),
        Command::Fit { series, fit_config, log_offset, entity, out } => {
            cmd_fit(&series, fit_config.as_deref(), zero_policy(log_offset)?, entity, &out)
        }
        Command::Forecast { model, from, to, out } => cmd_forecast(&model, (from, to), &out),
        Command::Components { model, from, to, out } => cmd_components(&model, (from, to), &out),
        Command::Transfer { source, mode, target, series, adapt_config, log_offset, from, to, weights, out } => {
            cmd_transfer(TransferArgs {
                source,
                mode,
                target,
                series,
                adapt_config,
                zero_policy: zero_policy(log_offset)?,
                range: from.zip(to),
                weights,
                out,
            })
        }
        Command::Scenario { data, synthetic, scenario, fit_config, adapt_config, horizon, log_offset, out } => {
            cmd_scenario(ScenarioArgs {
                data,
                synthetic,
                scenario,
                fit_config,
                adapt_config,
                horizon: horizon.parse().expect("validated by clap"),
                zero_policy: zero_policy(log_offset)?,
                out,
            })
        }
        Command::Synth { seed, sigma, out } => cmd_synth(seed, sigma, &out),
    }
}

fn zero_policy(offset: Option<f64>) -> CliResult<ZeroPolicy> {
    match offset {
        None => Ok(ZeroPolicy::Gap),
        Some(c) if c > 0.0 && c.is_finite() => Ok(ZeroPolicy::Offset(c)),
        Some(c) => Err(CliError::input(format!("--log-offset must be positive, got {c}"))),
    }
}

fn parse_json<T: DeserializeOwned>(bytes: &[u8], path: &Path) -> CliResult<T> {
    serde_json::from_slice(bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_config<T: DeserializeOwned + Default>(run: &mut Run, path: Option<&Path>) -> CliResult<T> {
    match path {
        Some(p) => {
            let bytes = run.read(p)?;
            parse_json(&bytes, p)
        }
        None => Ok(T::default()),
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "entity".into())
}

fn load_series(run: &mut Run, path: &Path, entity: String) -> CliResult<DailySeries> {
    let bytes = run.read(path)?;
    DailySeries::read_csv(entity, bytes.as_slice()).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_model(run: &mut Run, path: &Path) -> CliResult<AdditiveModel> {
    let bytes = run.read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::input(format!("{}: not UTF-8", path.display())))?;
    AdditiveModel::from_json(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn date_range(range: (NaiveDate, NaiveDate)) -> CliResult<Vec<NaiveDate>> {
    if range.0 > range.1 {
        return Err(CliError::input(format!("empty date range {}..{}", range.0, range.1)));
    }
    Ok(range.0.iter_days().take_while(|d| *d <= range.1).collect())
}

fn write_with<F>(run: &mut Run, path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> salescast::Result<()>,
{
    write_atomic(path, |w| f(w).map_err(|e| CliError::internal(format!("write {}: {e}", path.display()))))?;
    run.wrote(path);
    Ok(())
}

fn write_json_output<T: Serialize>(run: &mut Run, path: &Path, value: &T) -> CliResult<()> {
    write_json(path, value)?;
    run.wrote(path);
    Ok(())
}

#[derive(Serialize)]
struct IngestReport {
    entity_id: String,
    #[serde(flatten)]
    cleaning: CleaningReport,
    n_days: usize,
    n_observed_days: usize,
    malformed_rows: Vec<MalformedRow>,
}

fn cmd_ingest(input: &Path, config: Option<&Path>, entity: Option<String>, out: &Path) -> CliResult<()> {
    let mut run = Run::new("ingest");
    let cfg: CleaningConfig = load_config(&mut run, config)?;
    cfg.validate()?;
    let entity = entity.unwrap_or_else(|| file_stem(input));
    run.config(&(&cfg, &entity))?;
    let raw = run.read(input)?;
    let parsed = parse_transactions(raw.as_slice(), &cfg.columns.clone().unwrap_or_default())?;
    for m in &parsed.malformed {
        eprintln!("warning: {}: line {}: {}", input.display(), m.line, m.reason);
    }
    let (records, mut report) = clean_transactions(parsed.records, &cfg);
    let (series, negative_days) = aggregate_daily(&entity, &records, &cfg)?;
    report.n_negative_days_removed = negative_days;
    write_with(&mut run, out, |w| series.write_csv(w))?;
    let report = IngestReport {
        entity_id: entity,
        cleaning: report,
        n_days: series.len(),
        n_observed_days: series.n_observed(),
        malformed_rows: parsed.malformed,
    };
    write_json_output(&mut run, &sibling(out, "report.json"), &report)?;
    run.finish(&sibling(out, "manifest.json"))
}

fn cmd_fit(series: &Path, config: Option<&Path>, policy: ZeroPolicy, entity: Option<String>, out: &Path) -> CliResult<()> {
    let mut run = Run::new("fit");
    let cfg: FitConfig = load_config(&mut run, config)?;
    cfg.validate()?;
    let entity = entity.unwrap_or_else(|| file_stem(series));
    run.config(&(&cfg, &policy, &entity))?;
    let s = load_series(&mut run, series, entity)?;
    let (model, diag) = fit(&log2_transform(&s, policy)?, &cfg)?;
    let text = model.to_json()?;
    write_with(&mut run, out, |w| Ok(w.write_all(text.as_bytes())?))?;
    write_json_output(&mut run, &sibling(out, "diagnostics.json"), &diag)?;
    eprintln!(
        "fitted {} on {} days, {} parameters, objective {:.6e}, gradient {:.2e}",
        model.entity_id, diag.n_rows, diag.n_params, diag.objective_value, diag.gradient_inf_norm
    );
    run.finish(&sibling(out, "manifest.json"))
}

fn cmd_forecast(model: &Path, range: (NaiveDate, NaiveDate), out: &Path) -> CliResult<()> {
    let mut run = Run::new("forecast");
    let dates = date_range(range)?;
    run.config(&range)?;
    let model = load_model(&mut run, model)?;
    let forecast = model.predict(&dates);
    write_with(&mut run, out, |w| forecast.write_csv(w))?;
    run.finish(&sibling(out, "manifest.json"))
}

fn cmd_components(model: &Path, range: (NaiveDate, NaiveDate), out: &Path) -> CliResult<()> {
    let mut run = Run::new("components");
    let dates = date_range(range)?;
    run.config(&range)?;
    let model = load_model(&mut run, model)?;
    let comps = model.components(&dates);
    write_with(&mut run, out, |w| comps.write_csv(w))?;
    run.finish(&sibling(out, "manifest.json"))
}

struct TransferArgs {
    source: PathBuf,
    mode: TransferModeArg,
    target: Option<String>,
    series: Option<PathBuf>,
    adapt_config: Option<PathBuf>,
    zero_policy: ZeroPolicy,
    range: Option<(NaiveDate, NaiveDate)>,
    weights: Option<PathBuf>,
    out: PathBuf,
}

fn cmd_transfer(args: TransferArgs) -> CliResult<()> {
    let mut run = Run::new("transfer");
    let source = load_model(&mut run, &args.source)?;
    let target = args
        .target
        .clone()
        .or_else(|| args.series.as_deref().map(file_stem))
        .ok_or_else(|| CliError::input("--target or --series is required to name the target entity"))?;
    let dates = args.range.map(date_range).transpose()?;
    let cfg: AdaptConfig = load_config(&mut run, args.adapt_config.as_deref())?;
    cfg.validate()?;
    run.config(&(args.mode, &target, &cfg, &args.zero_policy, args.range))?;

    let model = match args.mode {
        TransferModeArg::ZeroShot => {
            if args.series.is_some() {
                return Err(CliError::input("--series is only used with --mode adapt"));
            }
            zero_shot_model(&source, &target)
        }
        TransferModeArg::Adapt => {
            let path = args.series.as_deref().ok_or_else(|| CliError::input("--mode adapt requires --series"))?;
            let series = load_series(&mut run, path, target.clone())?;
            let (model, diag) = adapt(&source, &log2_transform(&series, args.zero_policy)?, &cfg)?;
            if dates.is_none() {
                write_json_output(&mut run, &sibling(&args.out, "diagnostics.json"), &diag)?;
            }
            model
        }
    };

    match &dates {
        Some(dates) => {
            let forecast = match args.mode {
                TransferModeArg::ZeroShot => zero_shot_forecast(&source, &target, dates),
                TransferModeArg::Adapt => model.predict(dates),
            };
            write_with(&mut run, &args.out, |w| forecast.write_csv(w))?;
        }
        None => {
            let text = model.to_json()?;
            write_with(&mut run, &args.out, |w| Ok(w.write_all(text.as_bytes())?))?;
        }
    }
    if let Some(path) = &args.weights {
        let profile = changepoint_weight_profile(&model);
        write_with(&mut run, path, |w| {
            writeln!(w, "date,weight")?;
            for cw in &profile {
                writeln!(w, "{},{}", cw.date, cw.weight)?;
            }
            Ok(())
        })?;
    }
    run.finish(&sibling(&args.out, "manifest.json"))
}

struct ScenarioArgs {
    data: Option<PathBuf>,
    synthetic: Option<u64>,
    scenario: String,
    fit_config: Option<PathBuf>,
    adapt_config: Option<PathBuf>,
    horizon: u32,
    zero_policy: ZeroPolicy,
    out: PathBuf,
}

#[derive(Serialize)]
struct ScenarioRunConfig<'a> {
    data: Option<&'a Path>,
    synthetic: Option<u64>,
    scenario: &'a str,
    horizon: u32,
    fit: &'a FitConfig,
    adapt: &'a AdaptConfig,
    zero_policy: ZeroPolicy,
}

fn load_data_dir(run: &mut Run, dir: &Path) -> CliResult<BTreeMap<String, DailySeries>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::input(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.len() < 2 {
        return Err(CliError::input(format!(
            "{} holds {} series CSVs; at least two entities are needed",
            dir.display(),
            paths.len()
        )));
    }
    let mut map = BTreeMap::new();
    for p in paths {
        let id = file_stem(&p);
        map.insert(id.clone(), load_series(run, &p, id)?);
    }
    Ok(map)
}

fn cmd_scenario(args: ScenarioArgs) -> CliResult<()> {
    let mut run = Run::new("scenario");
    let fit_cfg: FitConfig = load_config(&mut run, args.fit_config.as_deref())?;
    let adapt_cfg: AdaptConfig = load_config(&mut run, args.adapt_config.as_deref())?;
    run.config(&ScenarioRunConfig {
        data: args.data.as_deref(),
        synthetic: args.synthetic,
        scenario: &args.scenario,
        horizon: args.horizon,
        fit: &fit_cfg,
        adapt: &adapt_cfg,
        zero_policy: args.zero_policy,
    })?;
    let entities = match (&args.data, args.synthetic) {
        (Some(dir), _) => load_data_dir(&mut run, dir)?,
        (None, Some(seed)) => salescast::synthetic::six_branch_preset(seed),
        (None, None) => unreachable!("clap requires --data or --synthetic"),
    };
    let cfg = RunConfig { fit: fit_cfg, adapt: adapt_cfg, zero_policy: args.zero_policy };
    let outcomes = if args.scenario == "all" {
        run_all(&entities, args.horizon, &cfg)?
    } else {
        let id: ScenarioId = args.scenario.parse()?;
        vec![run_scenario(&entities, &ScenarioConfig::standard(id).with_horizon(args.horizon), &cfg)?]
    };
    for outcome in &outcomes {
        write_outcome(&mut run, &args.out, outcome)?;
    }
    run.finish(&args.out.join("manifest.json"))
}

fn write_outcome(run: &mut Run, out: &Path, outcome: &ScenarioOutcome) -> CliResult<()> {
    let dir = out.join(format!("scenario_{}", outcome.scenario.id));
    write_json_output(run, &dir.join("report.json"), outcome)?;
    if let Some(m) = &outcome.matrix {
        write_with(run, &dir.join("matrix.csv"), |w| m.matrix.write_csv(w))?;
    }
    if let Some(m) = &outcome.zero_shot_matrix {
        write_with(run, &dir.join("zero_shot_matrix.csv"), |w| m.matrix.write_csv(w))?;
    }
    let test_end = outcome.scenario.test_window().1;
    for (key, model) in &outcome.models {
        let from = model.training_window.0;
        let dates: Vec<NaiveDate> = from.iter_days().take_while(|d| *d <= test_end).collect();
        let comps = model.components(&dates);
        let name = key.replace("->", "_to_");
        write_with(run, &dir.join("components").join(format!("{name}.csv")), |w| comps.write_csv(w))?;
    }
    eprintln!("scenario {}:", outcome.scenario.id);
    for (entity, o) in &outcome.entities {
        match o.report() {
            Some(r) => eprintln!(
                "  {entity:<12} MAPE {:>7.2}%  baseline {:>7.2}%{}",
                r.mape_mean,
                r.baseline_mape,
                r.source_entity.as_ref().map(|s| format!("  (best source {s})")).unwrap_or_default()
            ),
            None => eprintln!("  {entity:<12} infeasible: {o:?}"),
        }
    }
    Ok(())
}

fn cmd_synth(seed: u64, sigma: Option<f64>, out: &Path) -> CliResult<()> {
    let mut run = Run::new("synth");
    let mut specs = six_branch_specs(seed);
    if let Some(s) = sigma {
        for spec in &mut specs {
            spec.noise_sigma = s;
        }
    }
    run.config(&specs)?;
    for spec in &specs {
        let series = generate_branch(spec)?;
        write_with(&mut run, &out.join(format!("{}.csv", spec.entity_id)), |w| series.write_csv(w))?;
    }
    write_json_output(&mut run, &out.join("specs.json"), &specs)?;
    run.finish(&out.join("manifest.json"))
}
