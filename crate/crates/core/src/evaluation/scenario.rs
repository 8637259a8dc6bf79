//! Scenario definitions and the runner that fits, transfers and scores models
//! across a set of entities.
//!
//! | id | training (source)  | adaptation (target) | transfer   |
//! |----|--------------------|---------------------|------------|
//! | 1a | one calendar year  | –                   | no         |
//! | 1b | all history to end | –                   | no         |
//! | 2  | all history to end | –                   | zero shot  |
//! | 3  | all history to end | one calendar year   | adapted    |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::seasonal_naive;
use super::matrix::{MatrixSummary, TransferMatrix};
use super::metrics::{last_day_of_month, monthly_average_mape, percentage_change, rmse, MonthlyMape};
use crate::error::{Error, Result};
use crate::fitting::{fit, FitConfig};
use crate::model::{AdditiveModel, Forecast};
use crate::pipeline::{log2_transform, ZeroPolicy};
use crate::series::DailySeries;
use crate::transfer::{adapt, zero_shot_forecast, AdaptConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    #[serde(rename = "1a")]
    S1a,
    #[serde(rename = "1b")]
    S1b,
    #[serde(rename = "2")]
    S2,
    #[serde(rename = "3")]
    S3,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 4] = [ScenarioId::S1a, ScenarioId::S1b, ScenarioId::S2, ScenarioId::S3];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioId::S1a => "1a",
            ScenarioId::S1b => "1b",
            ScenarioId::S2 => "2",
            ScenarioId::S3 => "3",
        }
    }

    pub fn is_transfer(&self) -> bool {
        matches!(self, ScenarioId::S2 | ScenarioId::S3)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1a" => Ok(ScenarioId::S1a),
            "1b" => Ok(ScenarioId::S1b),
            "2" => Ok(ScenarioId::S2),
            "3" => Ok(ScenarioId::S3),
            other => Err(Error::Config(format!("unknown scenario `{other}` (expected 1a, 1b, 2 or 3)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainWindow {
    /// One calendar year.
    Year(i32),
    /// Everything up to and including the end of this year.
    Until(i32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: ScenarioId,
    pub train: TrainWindow,
    pub adapt_year: Option<i32>,
    pub test_year: i32,
    pub horizon_months: u32,
}

fn year_bounds(year: i32) -> (NaiveDate, NaiveDate) {
    (
        NaiveDate::from_ymd_opt(year, 1, 1).unwrap(),
        NaiveDate::from_ymd_opt(year, 12, 31).unwrap(),
    )
}

impl ScenarioConfig {
    /// Windows for a 2017 test year: 1a trains on 2016, 1b and 2 on
    /// everything through 2016, 3 on everything through 2015 and adapts on
    /// 2016.
    pub fn standard(id: ScenarioId) -> Self {
        let (train, adapt_year) = match id {
            ScenarioId::S1a => (TrainWindow::Year(2016), None),
            ScenarioId::S1b | ScenarioId::S2 => (TrainWindow::Until(2016), None),
            ScenarioId::S3 => (TrainWindow::Until(2015), Some(2016)),
        };
        Self { id, train, adapt_year, test_year: 2017, horizon_months: 12 }
    }

    pub fn with_horizon(mut self, months: u32) -> Self {
        self.horizon_months = months;
        self
    }

    pub fn with_train(mut self, train: TrainWindow) -> Self {
        self.train = train;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if ![1, 6, 12].contains(&self.horizon_months) {
            return Err(Error::Config(format!("horizon must be 1, 6 or 12 months, got {}", self.horizon_months)));
        }
        match (self.id, self.adapt_year) {
            (ScenarioId::S3, None) => return Err(Error::Config("scenario 3 needs an adaptation year".into())),
            (ScenarioId::S1a | ScenarioId::S1b | ScenarioId::S2, Some(_)) => {
                return Err(Error::Config(format!("scenario {} takes no adaptation window", self.id)))
            }
            _ => {}
        }
        let train_end = match self.train {
            TrainWindow::Year(y) | TrainWindow::Until(y) => y,
        };
        let before_test = self.adapt_year.unwrap_or(train_end);
        if train_end >= self.test_year || before_test >= self.test_year || self.adapt_year.is_some_and(|a| a <= train_end) {
            return Err(Error::Config("windows must be ordered train < adapt < test".into()));
        }
        Ok(())
    }

    pub fn train_window(&self, series_start: NaiveDate) -> (NaiveDate, NaiveDate) {
        match self.train {
            TrainWindow::Year(y) => year_bounds(y),
            TrainWindow::Until(y) => (series_start.min(year_bounds(y).1), year_bounds(y).1),
        }
    }

    pub fn adapt_window(&self) -> Option<(NaiveDate, NaiveDate)> {
        self.adapt_year.map(year_bounds)
    }

    pub fn test_window(&self) -> (NaiveDate, NaiveDate) {
        let start = year_bounds(self.test_year).0;
        (start, last_day_of_month(self.test_year, self.horizon_months))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: DailySeries,
    pub adapt: Option<DailySeries>,
    pub test: DailySeries,
    pub train_window: (NaiveDate, NaiveDate),
    pub test_window: (NaiveDate, NaiveDate),
}

fn covered(series: &DailySeries, window: (NaiveDate, NaiveDate), what: &str) -> Result<DailySeries> {
    let infeasible = |reason: String| Error::ScenarioInfeasible { entity: series.entity_id.clone(), reason };
    if series.start_date > window.0 {
        return Err(infeasible(format!(
            "{what} window {}..{} not covered: series starts {}",
            window.0, window.1, series.start_date
        )));
    }
    if series.end_date() < window.1 {
        return Err(infeasible(format!(
            "{what} window {}..{} not covered: series ends {}",
            window.0, window.1,
            series.end_date()
        )));
    }
    series
        .slice(window.0, window.1)
        .filter(|s| s.n_observed() > 0)
        .ok_or_else(|| infeasible(format!("{what} window {}..{} has no observations", window.0, window.1)))
}

/// Cuts a series into the scenario's disjoint training, adaptation and test
/// windows.
pub fn split_train_test(series: &DailySeries, scenario: &ScenarioConfig) -> Result<Split> {
    scenario.validate()?;
    let train_window = scenario.train_window(series.start_date);
    let test_window = scenario.test_window();
    Ok(Split {
        train: covered(series, train_window, "training")?,
        adapt: scenario.adapt_window().map(|w| covered(series, w, "adaptation")).transpose()?,
        test: covered(series, test_window, "test")?,
        train_window,
        test_window,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub entity_id: String,
    pub scenario: ScenarioId,
    /// Source entity of the reported model (the best one for transfer scenarios).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_entity: Option<String>,
    pub train_window: (NaiveDate, NaiveDate),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapt_window: Option<(NaiveDate, NaiveDate)>,
    pub test_window: (NaiveDate, NaiveDate),
    /// Percent, one entry per test month; `None` for months without data.
    pub mape_monthly: Vec<Option<f64>>,
    pub mape_mean: f64,
    pub mape_pooled: f64,
    pub rmse: f64,
    pub n_excluded_days: usize,
    pub baseline_mape: f64,
    /// Percent change of `mape_mean` relative to each named reference.
    pub comparisons: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EntityOutcome {
    Report(Box<EvaluationReport>),
    Infeasible { reason: String },
}

impl EntityOutcome {
    pub fn report(&self) -> Option<&EvaluationReport> {
        match self {
            EntityOutcome::Report(r) => Some(r),
            EntityOutcome::Infeasible { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub matrix: TransferMatrix,
    pub summary: MatrixSummary,
}

impl From<TransferMatrix> for MatrixReport {
    fn from(matrix: TransferMatrix) -> Self {
        let summary = matrix.summary();
        Self { matrix, summary }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario: ScenarioConfig,
    pub entities: BTreeMap<String, EntityOutcome>,
    /// Scenario 2: zero-shot errors. Scenario 3: adapted errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixReport>,
    /// Scenario 3 only: zero-shot errors of the same source models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_shot_matrix: Option<MatrixReport>,
    /// Fitted models: per entity for 1a/1b, per source for 2/3, and the
    /// best adapted model per target under `"<source>-><target>"` for 3.
    #[serde(skip)]
    pub models: BTreeMap<String, AdditiveModel>,
}

impl ScenarioOutcome {
    pub fn report(&self, entity: &str) -> Option<&EvaluationReport> {
        self.entities.get(entity).and_then(EntityOutcome::report)
    }

    /// Adds `other`'s scenario as a comparison reference to every report
    /// both outcomes have.
    pub fn compare_with(&mut self, other: &ScenarioOutcome) {
        let key = format!("scenario_{}", other.scenario.id);
        for (entity, outcome) in self.entities.iter_mut() {
            if let (EntityOutcome::Report(r), Some(o)) = (outcome, other.report(entity)) {
                if let Ok(change) = percentage_change(r.mape_mean, o.mape_mean) {
                    r.comparisons.insert(key.clone(), change);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub adapt: AdaptConfig,
    pub zero_policy: ZeroPolicy,
}

fn dates_in(window: (NaiveDate, NaiveDate)) -> Vec<NaiveDate> {
    window.0.iter_days().take_while(|d| *d <= window.1).collect()
}

struct Scored {
    monthly: MonthlyMape,
    rmse: f64,
}

fn score(actual: &DailySeries, forecast: &Forecast, window: (NaiveDate, NaiveDate)) -> Result<Scored> {
    Ok(Scored {
        monthly: monthly_average_mape(actual, forecast, window)?,
        rmse: rmse(actual, forecast)?,
    })
}

fn build_report(
    entity: &DailySeries,
    scenario: &ScenarioConfig,
    source_entity: Option<String>,
    train_window: (NaiveDate, NaiveDate),
    forecast: &Forecast,
) -> Result<EvaluationReport> {
    let test_window = scenario.test_window();
    let test = covered(entity, test_window, "test")?;
    let scored = score(&test, forecast, test_window)?;
    let history = entity
        .slice(entity.start_date, test_window.0.pred_opt().unwrap())
        .ok_or_else(|| Error::ScenarioInfeasible {
            entity: entity.entity_id.clone(),
            reason: "no history before the test window for the baseline".into(),
        })?;
    let naive = seasonal_naive(&history, test_window)?;
    let baseline = monthly_average_mape(&test, &naive, test_window)?;
    let mut comparisons = BTreeMap::new();
    if let Ok(change) = percentage_change(scored.monthly.mean, baseline.mean) {
        comparisons.insert("baseline".to_string(), change);
    }
    Ok(EvaluationReport {
        entity_id: entity.entity_id.clone(),
        scenario: scenario.id,
        source_entity,
        train_window,
        adapt_window: scenario.adapt_window(),
        test_window,
        mape_monthly: scored.monthly.months.iter().map(|m| m.mape).collect(),
        mape_mean: scored.monthly.mean,
        mape_pooled: scored.monthly.pooled,
        rmse: scored.rmse,
        n_excluded_days: scored.monthly.n_excluded,
        baseline_mape: baseline.mean,
        comparisons,
    })
}

fn fit_on(series: &DailySeries, window: (NaiveDate, NaiveDate), cfg: &RunConfig) -> Result<AdditiveModel> {
    let train = covered(series, window, "training")?;
    Ok(fit(&log2_transform(&train, cfg.zero_policy)?, &cfg.fit)?.0)
}

fn infeasible(err: &Error) -> EntityOutcome {
    EntityOutcome::Infeasible { reason: err.to_string() }
}

/// Runs one scenario over all entities. Entities that cannot be evaluated are
/// reported as infeasible; the rest proceed. Results are ordered by entity id
/// (and source-major within matrices) regardless of evaluation order.
pub fn run_scenario(
    entities: &BTreeMap<String, DailySeries>,
    scenario: &ScenarioConfig,
    cfg: &RunConfig,
) -> Result<ScenarioOutcome> {
    scenario.validate()?;
    cfg.fit.validate()?;
    cfg.adapt.validate()?;
    if scenario.id.is_transfer() {
        run_transfer(entities, scenario, cfg)
    } else {
        run_isolated(entities, scenario, cfg)
    }
}

fn run_isolated(
    entities: &BTreeMap<String, DailySeries>,
    scenario: &ScenarioConfig,
    cfg: &RunConfig,
) -> Result<ScenarioOutcome> {
    let results: Vec<(String, Result<(AdditiveModel, EvaluationReport)>)> = entities
        .par_iter()
        .map(|(id, series)| {
            let res = (|| {
                let split = split_train_test(series, scenario)?;
                let model = fit_on(series, split.train_window, cfg)?;
                let forecast = model.predict(&dates_in(split.test_window));
                let report = build_report(series, scenario, None, split.train_window, &forecast)?;
                Ok((model, report))
            })();
            (id.clone(), res)
        })
        .collect();
    let mut outcome = ScenarioOutcome {
        scenario: scenario.clone(),
        entities: BTreeMap::new(),
        matrix: None,
        zero_shot_matrix: None,
        models: BTreeMap::new(),
    };
    for (id, res) in results {
        match res {
            Ok((model, report)) => {
                outcome.models.insert(id.clone(), model);
                outcome.entities.insert(id, EntityOutcome::Report(Box::new(report)));
            }
            Err(e) => {
                outcome.entities.insert(id, infeasible(&e));
            }
        }
    }
    Ok(outcome)
}

struct Cell {
    source: usize,
    target: usize,
    forecast: Forecast,
    zero_shot: Option<Forecast>,
    adapted: Option<AdditiveModel>,
}

fn run_transfer(
    entities: &BTreeMap<String, DailySeries>,
    scenario: &ScenarioConfig,
    cfg: &RunConfig,
) -> Result<ScenarioOutcome> {
    let ids: Vec<String> = entities.keys().cloned().collect();
    let series: Vec<&DailySeries> = entities.values().collect();
    let test_window = scenario.test_window();
    let test_dates = dates_in(test_window);

    let sources: Vec<Result<(AdditiveModel, (NaiveDate, NaiveDate))>> = series
        .par_iter()
        .map(|s| {
            let window = scenario.train_window(s.start_date);
            Ok((fit_on(s, window, cfg)?, window))
        })
        .collect();

    // Per-target data: test actuals plus the log2 adaptation slice.
    let targets: Vec<Result<(DailySeries, Option<DailySeries>)>> = series
        .par_iter()
        .map(|s| {
            let test = covered(s, test_window, "test")?;
            let adapt = match scenario.adapt_window() {
                Some(w) => Some(log2_transform(&covered(s, w, "adaptation")?, cfg.zero_policy)?),
                None => None,
            };
            Ok((test, adapt))
        })
        .collect();

    let pairs: Vec<(usize, usize)> = (0..ids.len())
        .flat_map(|s| (0..ids.len()).map(move |t| (s, t)))
        .filter(|(s, t)| s != t)
        .filter(|(s, t)| sources[*s].is_ok() && targets[*t].is_ok())
        .collect();

    let cells: Vec<Result<Cell>> = pairs
        .par_iter()
        .map(|&(s, t)| {
            let (model, _) = sources[s].as_ref().unwrap();
            let (_, adapt_slice) = targets[t].as_ref().unwrap();
            let zero_shot = zero_shot_forecast(model, &ids[t], &test_dates);
            Ok(match adapt_slice {
                Some(slice) => {
                    let (adapted, _) = adapt(model, slice, &cfg.adapt)?;
                    Cell {
                        source: s,
                        target: t,
                        forecast: adapted.predict(&test_dates),
                        zero_shot: Some(zero_shot),
                        adapted: Some(adapted),
                    }
                }
                None => Cell { source: s, target: t, forecast: zero_shot, zero_shot: None, adapted: None },
            })
        })
        .collect();

    let mut matrix = TransferMatrix::new(ids.clone(), ids.clone());
    let mut zs_matrix = scenario.adapt_window().map(|_| TransferMatrix::new(ids.clone(), ids.clone()));
    let mut forecasts: BTreeMap<(usize, usize), Cell> = BTreeMap::new();
    let mut first_cell_error: Option<String> = None;
    for cell in cells {
        match cell {
            Ok(cell) => {
                let (test, _) = targets[cell.target].as_ref().unwrap();
                let m = monthly_average_mape(test, &cell.forecast, test_window)?;
                matrix.cells[cell.target][cell.source] = Some(m.mean);
                if let (Some(zm), Some(zf)) = (zs_matrix.as_mut(), cell.zero_shot.as_ref()) {
                    zm.cells[cell.target][cell.source] = Some(monthly_average_mape(test, zf, test_window)?.mean);
                }
                forecasts.insert((cell.source, cell.target), cell);
            }
            Err(e) => {
                first_cell_error.get_or_insert_with(|| e.to_string());
            }
        }
    }

    let summary = matrix.summary();
    let mut outcome = ScenarioOutcome {
        scenario: scenario.clone(),
        entities: BTreeMap::new(),
        matrix: None,
        zero_shot_matrix: zs_matrix.map(MatrixReport::from),
        models: BTreeMap::new(),
    };
    for (s, src) in sources.iter().enumerate() {
        if let Ok((model, _)) = src {
            outcome.models.insert(ids[s].clone(), model.clone());
        }
    }
    for (t, id) in ids.iter().enumerate() {
        let entry = match (&targets[t], summary.best_per_target[t]) {
            (Err(e), _) => infeasible(e),
            (Ok(_), None) => EntityOutcome::Infeasible {
                reason: first_cell_error.clone().unwrap_or_else(|| "no feasible source model".into()),
            },
            (Ok(_), Some(s)) => {
                let cell = &forecasts[&(s, t)];
                let train_window = sources[s].as_ref().unwrap().1;
                match build_report(series[t], scenario, Some(ids[s].clone()), train_window, &cell.forecast) {
                    Ok(r) => {
                        if let Some(m) = &cell.adapted {
                            outcome.models.insert(format!("{}->{}", ids[s], ids[t]), m.clone());
                        }
                        EntityOutcome::Report(Box::new(r))
                    }
                    Err(e) => infeasible(&e),
                }
            }
        };
        outcome.entities.insert(id.clone(), entry);
    }
    outcome.matrix = Some(MatrixReport { matrix, summary });
    Ok(outcome)
}

/// Runs every scenario and cross-links the reports: each report gains a
/// comparison against each other scenario's report for the same entity.
pub fn run_all(entities: &BTreeMap<String, DailySeries>, horizon_months: u32, cfg: &RunConfig) -> Result<Vec<ScenarioOutcome>> {
    let mut outcomes = ScenarioId::ALL
        .iter()
        .map(|&id| run_scenario(entities, &ScenarioConfig::standard(id).with_horizon(horizon_months), cfg))
        .collect::<Result<Vec<_>>>()?;
    for i in 0..outcomes.len() {
        for j in 0..outcomes.len() {
            if i != j {
                let other = outcomes[j].clone();
                outcomes[i].compare_with(&other);
            }
        }
    }
    Ok(outcomes)
}
