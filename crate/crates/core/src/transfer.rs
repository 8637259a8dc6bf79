//! Moving a fitted model to another entity: as-is (zero shot) or re-fitted on
//! a window of target data while anchored to the source parameters.

use std::time::Instant;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{build_design_matrix, diagnostics, observed_rows, DesignSpec, FitDiagnostics, MIN_OBSERVATIONS};
use crate::model::{AdditiveModel, Forecast, LineageEntry, TimeScale, TransferMode};
use crate::ridge::RidgeProblem;
use crate::series::DailySeries;

pub use crate::model::TransferRecord;

/// Anchoring on the level `m` is this much weaker than on other parameters.
pub const LEVEL_ANCHOR_FACTOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub n_new_changepoints: usize,
    /// Quadratic pull of shared parameters towards the source model.
    pub lambda_anchor: f64,
    pub adapt_seasonality: bool,
    pub adapt_level: bool,
    /// Ridge penalty on the new changepoints' rate adjustments.
    pub lambda_delta: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            n_new_changepoints: 5,
            lambda_anchor: 10.0,
            adapt_seasonality: true,
            adapt_level: true,
            lambda_delta: 1.0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_anchor >= 0.0 && self.lambda_delta >= 0.0) {
            return Err(Error::Config("lambda_anchor and lambda_delta must be non-negative".into()));
        }
        Ok(())
    }
}

fn transfer_record(source: &AdditiveModel, target_entity: &str, mode: TransferMode, adapt_window: Option<(NaiveDate, NaiveDate)>) -> LineageEntry {
    LineageEntry::Transfer(TransferRecord {
        source_entity: source.entity_id.clone(),
        target_entity: target_entity.to_string(),
        mode,
        adapt_window,
    })
}

/// The source model relabelled for `target_entity`, parameters untouched.
pub fn zero_shot_model(source: &AdditiveModel, target_entity: &str) -> AdditiveModel {
    let mut model = source.clone();
    model.entity_id = target_entity.to_string();
    model
        .lineage
        .push(transfer_record(source, target_entity, TransferMode::ZeroShot, None));
    model
}

/// Forecast for a target entity using the source model unchanged.
pub fn zero_shot_forecast(source: &AdditiveModel, target_entity: &str, dates: &[NaiveDate]) -> Forecast {
    let mut forecast = source.predict(dates);
    forecast.entity_id = target_entity.to_string();
    forecast
        .lineage
        .push(transfer_record(source, target_entity, TransferMode::ZeroShot, None));
    forecast
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Slope,
    Level,
    OldChange,
    NewChange,
    Seasonal,
}

/// Re-fits `source` on a log2 target window.
///
/// The time scale is stretched to cover the window (an exact
/// re-parameterisation of the source trend), `n_new_changepoints` fresh
/// changepoints are spread uniformly inside the window, and the objective is
/// `Σ(y − ŷ)² + λ_anchor‖θ_shared − θ_source‖² + λ_δ‖δ_new‖²`.
pub fn adapt(source: &AdditiveModel, target: &DailySeries, cfg: &AdaptConfig) -> Result<(AdditiveModel, FitDiagnostics)> {
    let start = Instant::now();
    cfg.validate()?;
    if !target.is_log_space {
        return Err(Error::Data(format!("target {} must be log2-transformed before adapting", target.entity_id)));
    }
    let (dates, y) = observed_rows(target);
    if dates.len() < MIN_OBSERVATIONS {
        return Err(Error::Data(format!(
            "adaptation window for {} has {} observations; at least {MIN_OBSERVATIONS} are required",
            target.entity_id,
            dates.len()
        )));
    }
    let window = (dates[0], dates[dates.len() - 1]);
    if window.0 <= source.training_window.0 {
        return Err(Error::Data(format!(
            "adaptation window starts {} but must start after the source training start {}",
            window.0, source.training_window.0
        )));
    }

    let t0 = source.timescale.t0;
    let old_end = t0 + Days::new(source.timescale.span_days.round() as u64);
    let end = old_end.max(window.1);
    let span = (end - t0).num_days() as f64;
    let timescale = TimeScale::new(t0, span)?;
    let ratio = span / source.timescale.span_days;
    let src_trend = source.trend.rescaled(ratio);

    let (ua, ub) = (timescale.scaled(window.0), timescale.scaled(window.1));
    let n_new = cfg.n_new_changepoints;
    let new_locs: Vec<f64> = (1..=n_new)
        .map(|j| ua + j as f64 * (ub - ua) / (n_new + 1) as f64)
        .filter(|s| !src_trend.grid.locations.contains(s))
        .collect();

    // Merge old and new changepoints, remembering their origin.
    let mut cps: Vec<(f64, bool, f64, f64)> = src_trend
        .grid
        .locations
        .iter()
        .zip(&src_trend.grid.deltas)
        .zip(&src_trend.gammas)
        .map(|((&s, &d), &g)| (s, false, d, g))
        .chain(new_locs.iter().map(|&s| (s, true, 0.0, 0.0)))
        .collect();
    cps.sort_by(|a, b| a.0.total_cmp(&b.0));

    let spec = DesignSpec {
        locations: cps.iter().map(|c| c.0).collect(),
        seasonalities: source.seasonalities.iter().map(Into::into).collect(),
        free_gamma: source.trend.gamma_free,
    };
    let n_cp = cps.len();
    let mut prior = vec![src_trend.k, src_trend.m];
    let mut roles = vec![Role::Slope, Role::Level];
    prior.extend(cps.iter().map(|c| c.2));
    roles.extend(cps.iter().map(|c| if c.1 { Role::NewChange } else { Role::OldChange }));
    if spec.free_gamma {
        prior.extend(cps.iter().map(|c| c.3));
        roles.extend(cps.iter().map(|c| if c.1 { Role::NewChange } else { Role::OldChange }));
    }
    for b in &source.seasonalities {
        prior.extend_from_slice(&b.coefficients);
        roles.extend(std::iter::repeat_n(Role::Seasonal, b.coefficients.len()));
    }
    debug_assert_eq!(prior.len(), spec.n_cols());
    debug_assert_eq!(2 + n_cp * if spec.free_gamma { 2 } else { 1 }, spec.n_trend_cols());

    let fixed = |r: Role| match r {
        Role::Level => !cfg.adapt_level,
        Role::Seasonal => !cfg.adapt_seasonality,
        _ => false,
    };
    let weight = |r: Role| match r {
        Role::Slope | Role::OldChange | Role::Seasonal => cfg.lambda_anchor,
        Role::Level => cfg.lambda_anchor * LEVEL_ANCHOR_FACTOR,
        Role::NewChange => cfg.lambda_delta,
    };

    let full = build_design_matrix(&dates, &spec, &timescale);
    let free_cols: Vec<usize> = (0..roles.len()).filter(|&i| !fixed(roles[i])).collect();
    let mut target_y = y.clone();
    for (i, role) in roles.iter().enumerate() {
        if fixed(*role) {
            target_y -= full.column(i) * prior[i];
        }
    }
    let design = full.select_columns(&free_cols);
    let penalty: Vec<f64> = free_cols.iter().map(|&i| weight(roles[i])).collect();
    let free_prior: Vec<f64> = free_cols.iter().map(|&i| prior[i]).collect();
    let problem = RidgeProblem { design: &design, target: &target_y, penalty: &penalty, prior: &free_prior };
    let sol = problem.solve()?;

    let mut theta = nalgebra::DVector::from_vec(prior);
    for (j, &i) in free_cols.iter().enumerate() {
        theta[i] = sol.theta[j];
    }

    let mut lineage = source.lineage.clone();
    lineage.push(transfer_record(source, &target.entity_id, TransferMode::Adapted, Some(window)));
    let model = AdditiveModel {
        entity_id: target.entity_id.clone(),
        timescale,
        trend: spec.trend_from(&theta)?,
        seasonalities: spec.blocks_from(&theta),
        log_space: true,
        log_offset: source.log_offset,
        training_window: (source.training_window.0, end),
        lineage,
    };
    let diag = diagnostics(&problem, &sol.theta, sol.condition_estimate, start);
    Ok((model, diag))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangepointWeight {
    pub date: NaiveDate,
    pub weight: f64,
}

/// `|δ_j|` for every changepoint, ordered by date.
pub fn changepoint_weight_profile(model: &AdditiveModel) -> Vec<ChangepointWeight> {
    let ts = &model.timescale;
    model
        .trend
        .grid
        .locations
        .iter()
        .zip(&model.trend.grid.deltas)
        .map(|(&s, &d)| ChangepointWeight {
            date: ts.t0 + Days::new((s * ts.span_days).round().max(0.0) as u64),
            weight: d.abs(),
        })
        .collect()
}
