//! Estimating an [`AdditiveModel`] from a log2 daily series.
//!
//! With the changepoint offsets bound to `γ_j = −s_j·δ_j` the model is linear
//! in `(k, m, δ, seasonal coefficients)`, so fitting is a single penalised
//! least-squares solve over the design matrix built here.

use std::time::Instant;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    fourier_features, AdditiveModel, ChangepointGrid, LineageEntry, SeasonalityBlock, TimeScale,
    TrendParams, MONTHLY_PERIOD, WEEKLY_PERIOD, YEARLY_PERIOD,
};
use crate::ridge::RidgeProblem;
use crate::series::DailySeries;

pub const MIN_OBSERVATIONS: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalitySpec {
    pub name: String,
    pub period_days: f64,
    pub order: usize,
}

impl SeasonalitySpec {
    pub fn new(name: impl Into<String>, period_days: f64, order: usize) -> Self {
        Self { name: name.into(), period_days, order }
    }

    pub fn weekly() -> Self {
        Self::new("weekly", WEEKLY_PERIOD, 3)
    }

    pub fn monthly() -> Self {
        Self::new("monthly", MONTHLY_PERIOD, 5)
    }

    pub fn yearly() -> Self {
        Self::new("yearly", YEARLY_PERIOD, 10)
    }
}

impl From<&SeasonalityBlock> for SeasonalitySpec {
    fn from(b: &SeasonalityBlock) -> Self {
        Self::new(b.name.clone(), b.period_days, b.order)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub n_changepoints: usize,
    /// Fraction of the training span that may contain changepoints.
    pub changepoint_range: f64,
    pub lambda_delta: f64,
    pub lambda_season: f64,
    pub seasonalities: Vec<SeasonalitySpec>,
    /// Fit changepoint offsets as free parameters instead of binding them
    /// for continuity.
    pub free_gamma: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_changepoints: 25,
            changepoint_range: 0.8,
            lambda_delta: 1.0,
            lambda_season: 0.1,
            seasonalities: vec![SeasonalitySpec::weekly(), SeasonalitySpec::yearly()],
            free_gamma: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.changepoint_range > 0.0 && self.changepoint_range <= 1.0) {
            return Err(Error::Config(format!(
                "changepoint_range must be in (0, 1], got {}",
                self.changepoint_range
            )));
        }
        if !(self.lambda_delta >= 0.0 && self.lambda_season >= 0.0) {
            return Err(Error::Config("penalties must be non-negative".into()));
        }
        for s in &self.seasonalities {
            if s.order == 0 || !(s.period_days > 0.0) {
                return Err(Error::Config(format!(
                    "seasonality `{}` needs order >= 1 and a positive period",
                    s.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub objective_value: f64,
    pub gradient_inf_norm: f64,
    pub n_rows: usize,
    pub n_params: usize,
    pub condition_estimate: f64,
    pub elapsed_seconds: f64,
}

/// Uniform changepoint locations `s_j = j·range/(n+1)`, `j = 1..=n`, in
/// scaled time over the window.
pub fn place_changepoints(window: (NaiveDate, NaiveDate), cfg: &FitConfig) -> Result<Vec<f64>> {
    let days = (window.1 - window.0).num_days() + 1;
    if days < cfg.n_changepoints as i64 + 2 {
        return Err(Error::Config(format!(
            "window of {days} days is too short for {} changepoints",
            cfg.n_changepoints
        )));
    }
    let n = cfg.n_changepoints;
    Ok((1..=n)
        .map(|j| j as f64 * cfg.changepoint_range / (n + 1) as f64)
        .collect())
}

/// Column structure of the design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub locations: Vec<f64>,
    pub seasonalities: Vec<SeasonalitySpec>,
    pub free_gamma: bool,
}

impl DesignSpec {
    pub fn of_model(model: &AdditiveModel) -> Self {
        Self {
            locations: model.trend.grid.locations.clone(),
            seasonalities: model.seasonalities.iter().map(SeasonalitySpec::from).collect(),
            free_gamma: model.trend.gamma_free,
        }
    }

    pub fn n_trend_cols(&self) -> usize {
        2 + self.locations.len() * if self.free_gamma { 2 } else { 1 }
    }

    pub fn n_cols(&self) -> usize {
        self.n_trend_cols() + self.seasonalities.iter().map(|s| 2 * s.order).sum::<usize>()
    }

    /// Column index of `δ_j`.
    pub fn delta_col(&self, j: usize) -> usize {
        2 + j
    }

    /// Columns of each seasonality block.
    pub fn block_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = self.n_trend_cols();
        self.seasonalities
            .iter()
            .map(|s| {
                let r = start..start + 2 * s.order;
                start = r.end;
                r
            })
            .collect()
    }

    fn fill_row(&self, row: &mut [f64], t: f64, days: f64) {
        row[0] = t;
        row[1] = 1.0;
        let n = self.locations.len();
        for (j, &s) in self.locations.iter().enumerate() {
            let on = t >= s;
            if self.free_gamma {
                row[2 + j] = if on { t } else { 0.0 };
                row[2 + n + j] = if on { 1.0 } else { 0.0 };
            } else {
                row[2 + j] = if on { t - s } else { 0.0 };
            }
        }
        let mut col = self.n_trend_cols();
        for spec in &self.seasonalities {
            for f in fourier_features(days, spec.period_days, spec.order) {
                row[col] = f;
                col += 1;
            }
        }
    }

    /// Parameter vector of `model` in this column order.
    pub fn params_of(&self, model: &AdditiveModel) -> DVector<f64> {
        let mut theta = Vec::with_capacity(self.n_cols());
        theta.push(model.trend.k);
        theta.push(model.trend.m);
        theta.extend_from_slice(&model.trend.grid.deltas);
        if self.free_gamma {
            theta.extend_from_slice(&model.trend.gammas);
        }
        for b in &model.seasonalities {
            theta.extend_from_slice(&b.coefficients);
        }
        DVector::from_vec(theta)
    }

    pub fn trend_from(&self, theta: &DVector<f64>) -> Result<TrendParams> {
        let n = self.locations.len();
        let deltas = theta.rows(2, n).iter().copied().collect();
        let grid = ChangepointGrid::new(self.locations.clone(), deltas)?;
        Ok(if self.free_gamma {
            TrendParams {
                k: theta[0],
                m: theta[1],
                grid,
                gammas: theta.rows(2 + n, n).iter().copied().collect(),
                gamma_free: true,
            }
        } else {
            TrendParams::continuous(theta[0], theta[1], grid)
        })
    }

    pub fn blocks_from(&self, theta: &DVector<f64>) -> Vec<SeasonalityBlock> {
        self.seasonalities
            .iter()
            .zip(self.block_ranges())
            .map(|(s, r)| SeasonalityBlock {
                name: s.name.clone(),
                period_days: s.period_days,
                order: s.order,
                coefficients: theta.rows(r.start, r.len()).iter().copied().collect(),
            })
            .collect()
    }
}

/// One row per date: `[t, 1, changepoint columns, Fourier features...]`.
/// With bound offsets the changepoint column is `a_j(t)·(t − s_j)`.
pub fn build_design_matrix(dates: &[NaiveDate], spec: &DesignSpec, timescale: &TimeScale) -> DMatrix<f64> {
    let p = spec.n_cols();
    let mut row = vec![0.0; p];
    let mut data = Vec::with_capacity(dates.len() * p);
    for &date in dates {
        let days = timescale.days_since_origin(date);
        spec.fill_row(&mut row, days / timescale.span_days, days);
        data.extend_from_slice(&row);
    }
    DMatrix::from_row_slice(dates.len(), p, &data)
}

pub(crate) fn observed_rows(series: &DailySeries) -> (Vec<NaiveDate>, DVector<f64>) {
    let (dates, ys): (Vec<_>, Vec<_>) = series.observations().unzip();
    (dates, DVector::from_vec(ys))
}

pub(crate) fn diagnostics(problem: &RidgeProblem<'_>, theta: &DVector<f64>, condition: f64, start: Instant) -> FitDiagnostics {
    FitDiagnostics {
        objective_value: problem.objective(theta),
        gradient_inf_norm: problem.gradient(theta).amax(),
        n_rows: problem.design.nrows(),
        n_params: problem.design.ncols(),
        condition_estimate: condition,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    }
}

/// Fits a model to a log2 series. Gap days contribute no rows.
pub fn fit(series: &DailySeries, cfg: &FitConfig) -> Result<(AdditiveModel, FitDiagnostics)> {
    let start = Instant::now();
    cfg.validate()?;
    if !series.is_log_space {
        return Err(Error::Data(format!("series {} must be log2-transformed before fitting", series.entity_id)));
    }
    let (dates, y) = observed_rows(series);
    if dates.len() < MIN_OBSERVATIONS {
        return Err(Error::Data(format!(
            "series {} has {} observations; at least {MIN_OBSERVATIONS} are required",
            series.entity_id,
            dates.len()
        )));
    }
    let window = (dates[0], dates[dates.len() - 1]);
    let timescale = TimeScale::new(window.0, (window.1 - window.0).num_days() as f64)?;
    let spec = DesignSpec {
        locations: place_changepoints(window, cfg)?,
        seasonalities: cfg.seasonalities.clone(),
        free_gamma: cfg.free_gamma,
    };
    let design = build_design_matrix(&dates, &spec, &timescale);

    let mut penalty = vec![0.0; spec.n_cols()];
    penalty[2..spec.n_trend_cols()].fill(cfg.lambda_delta);
    penalty[spec.n_trend_cols()..].fill(cfg.lambda_season);
    let prior = vec![0.0; spec.n_cols()];
    let problem = RidgeProblem { design: &design, target: &y, penalty: &penalty, prior: &prior };
    let sol = problem.solve()?;

    let model = AdditiveModel {
        entity_id: series.entity_id.clone(),
        timescale,
        trend: spec.trend_from(&sol.theta)?,
        seasonalities: spec.blocks_from(&sol.theta),
        log_space: true,
        log_offset: series.log_offset,
        training_window: window,
        lineage: vec![LineageEntry::Fit { entity_id: series.entity_id.clone(), window }],
    };
    let diag = diagnostics(&problem, &sol.theta, sol.condition_estimate, start);
    Ok((model, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Days;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn log_series(start: NaiveDate, ys: Vec<f64>) -> DailySeries {
        let mut s = DailySeries::new("b", start, ys.into_iter().map(Some).collect());
        s.is_log_space = true;
        s
    }

    #[test]
    fn changepoints_uniform() {
        let cfg = FitConfig { n_changepoints: 3, changepoint_range: 0.8, ..Default::default() };
        let s = place_changepoints((d("2016-01-01"), d("2016-12-31")), &cfg).unwrap();
        let expected = [0.2, 0.4, 0.6];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let none = FitConfig { n_changepoints: 0, ..Default::default() };
        assert!(place_changepoints((d("2016-01-01"), d("2016-01-02")), &none).unwrap().is_empty());
    }

    #[test]
    fn changepoints_need_room() {
        let cfg = FitConfig { n_changepoints: 10, ..Default::default() };
        assert!(matches!(
            place_changepoints((d("2016-01-01"), d("2016-01-10")), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn design_line_only() {
        let ts = TimeScale::new(d("2016-01-01"), 10.0).unwrap();
        let spec = DesignSpec { locations: vec![], seasonalities: vec![], free_gamma: false };
        let a = build_design_matrix(&[d("2016-01-01"), d("2016-01-06")], &spec, &ts);
        assert_eq!(a.ncols(), 2);
        assert_eq!(a.row(1).iter().copied().collect::<Vec<_>>(), vec![0.5, 1.0]);
    }

    #[test]
    fn design_changepoint_column() {
        let ts = TimeScale::new(d("2016-01-01"), 100.0).unwrap();
        let spec = DesignSpec { locations: vec![0.5], seasonalities: vec![], free_gamma: false };
        let a = build_design_matrix(&[d("2016-01-01") + Days::new(75), d("2016-01-01") + Days::new(20)], &spec, &ts);
        assert!((a[(0, 2)] - 0.25).abs() < 1e-15);
        assert_eq!(a[(1, 2)], 0.0);
    }

    #[test]
    fn fit_recovers_line() {
        let n = 400;
        let ys: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64 + 1.0).collect();
        let (model, diag) = fit(&log_series(d("2016-01-01"), ys), &FitConfig::default()).unwrap();
        assert!((model.trend.k - 2.0).abs() < 1e-6, "k = {}", model.trend.k);
        assert!((model.trend.m - 1.0).abs() < 1e-6, "m = {}", model.trend.m);
        assert!(model.trend.grid.deltas.iter().all(|d| d.abs() < 1e-6));
        assert!(diag.gradient_inf_norm <= 1e-6 * (1.0 + diag.objective_value.abs()));
    }

    #[test]
    fn fit_requires_log_space_and_enough_rows() {
        let mut s = log_series(d("2016-01-01"), vec![1.0; 30]);
        s.is_log_space = false;
        assert!(matches!(fit(&s, &FitConfig::default()), Err(Error::Data(_))));
        let short = log_series(d("2016-01-01"), vec![1.0; 13]);
        let cfg = FitConfig { n_changepoints: 0, ..Default::default() };
        assert!(matches!(fit(&short, &cfg), Err(Error::Data(_))));
    }

    #[test]
    fn fit_skips_gaps() {
        let mut s = log_series(d("2016-01-01"), (0..60).map(|i| 0.01 * i as f64).collect());
        for i in (0..60).step_by(7) {
            s.values[i] = None;
        }
        let cfg = FitConfig { n_changepoints: 2, ..Default::default() };
        let (_, diag) = fit(&s, &cfg).unwrap();
        assert_eq!(diag.n_rows, s.n_observed());
    }

    #[test]
    fn fit_is_deterministic() {
        let ys: Vec<f64> = (0..500).map(|i| ((i * 7919) % 97) as f64 / 50.0 + 0.003 * i as f64).collect();
        let s = log_series(d("2015-01-01"), ys);
        let (a, _) = fit(&s, &FitConfig::default()).unwrap();
        let (b, _) = fit(&s, &FitConfig::default()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn fit_config_json_roundtrip() {
        let cfg = FitConfig { n_changepoints: 7, free_gamma: true, ..Default::default() };
        let back: FitConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial: FitConfig = serde_json::from_str(r#"{"n_changepoints": 3}"#).unwrap();
        assert_eq!(partial.changepoint_range, 0.8);
    }

    #[test]
    fn fit_with_free_gamma() {
        let ys: Vec<f64> = (0..300).map(|i| if i < 150 { 1.0 } else { 2.0 }).collect();
        let cfg = FitConfig { n_changepoints: 4, free_gamma: true, seasonalities: vec![], ..Default::default() };
        let (model, _) = fit(&log_series(d("2016-01-01"), ys), &cfg).unwrap();
        assert!(model.trend.gamma_free);
        assert_eq!(model.trend.gammas.len(), 4);
    }

    proptest! {
        #[test]
        fn changepoints_within_range(n in 0usize..40, range in 0.01..1.0f64) {
            let cfg = FitConfig { n_changepoints: n, changepoint_range: range, ..Default::default() };
            let s = place_changepoints((d("2012-01-01"), d("2017-12-31")), &cfg).unwrap();
            prop_assert_eq!(s.len(), n);
            for w in s.windows(2) { prop_assert!(w[0] < w[1]); }
            for x in s { prop_assert!(x > 0.0 && x <= range + 1e-12); }
        }
    }
}
