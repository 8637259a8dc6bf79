use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Forecast;
use crate::series::DailySeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapeResult {
    pub percent: f64,
    pub n_used: usize,
    /// Forecast days skipped because the actual was a gap, non-positive, or
    /// the forecast itself was unavailable.
    pub n_excluded: usize,
}

fn require_observation_space(actual: &DailySeries) -> Result<()> {
    if actual.is_log_space {
        return Err(Error::Data(format!(
            "metrics compare observation-space values; {} is in log space",
            actual.entity_id
        )));
    }
    Ok(())
}

/// Pairs of (actual, forecast) on common days plus the exclusion count.
fn paired(actual: &DailySeries, forecast: &Forecast, require_positive: bool) -> (Vec<(f64, f64)>, usize) {
    let in_range = |d: NaiveDate| d >= actual.start_date && d <= actual.end_date();
    let mut pairs = Vec::with_capacity(forecast.points.len());
    let mut excluded = 0;
    for p in forecast.points.iter().filter(|p| in_range(p.date)) {
        match actual.get(p.date) {
            Some(y) if !require_positive || y > 0.0 => pairs.push((y, p.yhat)),
            _ => excluded += 1,
        }
    }
    excluded += forecast
        .unavailable
        .iter()
        .filter(|&&d| in_range(d) && actual.get(d).is_some())
        .count();
    (pairs, excluded)
}

/// `100/n · Σ |y − ŷ| / y` over common days with `y > 0`.
pub fn mape(actual: &DailySeries, forecast: &Forecast) -> Result<MapeResult> {
    require_observation_space(actual)?;
    let (pairs, n_excluded) = paired(actual, forecast, true);
    if pairs.is_empty() {
        return Err(Error::Evaluation(format!(
            "no common valid days between actual {} and forecast",
            actual.entity_id
        )));
    }
    let sum: f64 = pairs.iter().map(|(y, f)| (y - f).abs() / y).sum();
    Ok(MapeResult {
        percent: 100.0 * sum / pairs.len() as f64,
        n_used: pairs.len(),
        n_excluded,
    })
}

pub fn rmse(actual: &DailySeries, forecast: &Forecast) -> Result<f64> {
    require_observation_space(actual)?;
    let (pairs, _) = paired(actual, forecast, false);
    if pairs.is_empty() {
        return Err(Error::Evaluation(format!(
            "no common days between actual {} and forecast",
            actual.entity_id
        )));
    }
    let mse = pairs.iter().map(|(y, f)| (y - f).powi(2)).sum::<f64>() / pairs.len() as f64;
    Ok(mse.sqrt())
}

/// `(perf1 / perf2 − 1) · 100`.
pub fn percentage_change(perf1: f64, perf2: f64) -> Result<f64> {
    if !(perf2 > 0.0) {
        return Err(Error::UndefinedComparison(perf2));
    }
    Ok((perf1 / perf2 - 1.0) * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthMape {
    pub year: i32,
    pub month: u32,
    /// `None` when the month had no valid day.
    pub mape: Option<f64>,
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyMape {
    pub months: Vec<MonthMape>,
    /// Mean of the monthly values over months with data.
    pub mean: f64,
    /// MAPE pooled over every valid day of the window.
    pub pooled: f64,
    pub n_excluded: usize,
}

impl MonthlyMape {
    pub fn skipped_months(&self) -> impl Iterator<Item = &MonthMape> {
        self.months.iter().filter(|m| m.mape.is_none())
    }
}

pub fn last_day_of_month(year: i32, month: u32) -> NaiveDate {
    let (y, m) = if month == 12 { (year + 1, 1) } else { (year, month + 1) };
    NaiveDate::from_ymd_opt(y, m, 1).unwrap() - Days::new(1)
}

/// MAPE per calendar month of `window`, then averaged with equal weight per
/// month. `window` must start on the first and end on the last day of a month.
pub fn monthly_average_mape(actual: &DailySeries, forecast: &Forecast, window: (NaiveDate, NaiveDate)) -> Result<MonthlyMape> {
    require_observation_space(actual)?;
    let (from, to) = window;
    if from.day() != 1 || to != last_day_of_month(to.year(), to.month()) || from > to {
        return Err(Error::Config(format!("test window {from}..{to} must span whole calendar months")));
    }
    let mut months = Vec::new();
    let mut pooled_sum = 0.0;
    let mut pooled_n = 0usize;
    let mut n_excluded = 0;
    let mut cursor = from;
    while cursor <= to {
        let month_end = last_day_of_month(cursor.year(), cursor.month());
        let sub = Forecast {
            entity_id: forecast.entity_id.clone(),
            points: forecast
                .points
                .iter()
                .filter(|p| p.date >= cursor && p.date <= month_end)
                .cloned()
                .collect(),
            unavailable: forecast
                .unavailable
                .iter()
                .copied()
                .filter(|d| *d >= cursor && *d <= month_end)
                .collect(),
            lineage: Vec::new(),
        };
        let (pairs, excluded) = paired(actual, &sub, true);
        n_excluded += excluded;
        let sum: f64 = pairs.iter().map(|(y, f)| (y - f).abs() / y).sum();
        pooled_sum += sum;
        pooled_n += pairs.len();
        months.push(MonthMape {
            year: cursor.year(),
            month: cursor.month(),
            mape: (!pairs.is_empty()).then(|| 100.0 * sum / pairs.len() as f64),
            n_used: pairs.len(),
        });
        cursor = month_end + Days::new(1);
    }
    let valid: Vec<f64> = months.iter().filter_map(|m| m.mape).collect();
    if valid.is_empty() {
        return Err(Error::Evaluation(format!(
            "no valid days for {} in {from}..{to}",
            actual.entity_id
        )));
    }
    Ok(MonthlyMape {
        mean: valid.iter().sum::<f64>() / valid.len() as f64,
        pooled: 100.0 * pooled_sum / pooled_n as f64,
        months,
        n_excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ForecastPoint;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn forecast(start: NaiveDate, values: &[f64]) -> Forecast {
        Forecast {
            entity_id: "b".into(),
            points: values
                .iter()
                .enumerate()
                .map(|(i, &v)| ForecastPoint { date: start + Days::new(i as u64), yhat: v, yhat_log: v.log2() })
                .collect(),
            unavailable: vec![],
            lineage: vec![],
        }
    }

    fn actual(start: NaiveDate, values: &[f64]) -> DailySeries {
        DailySeries::new("b", start, values.iter().map(|&v| Some(v)).collect())
    }

    #[test]
    fn perfect_forecast() {
        let a = actual(d("2017-01-01"), &[5.0, 6.0]);
        let f = forecast(d("2017-01-01"), &[5.0, 6.0]);
        let m = mape(&a, &f).unwrap();
        assert_eq!((m.percent, m.n_excluded), (0.0, 0));
        assert_eq!(rmse(&a, &f).unwrap(), 0.0);
    }

    #[test]
    fn mape_hand_value() {
        let m = mape(&actual(d("2017-01-01"), &[100.0, 200.0]), &forecast(d("2017-01-01"), &[110.0, 180.0])).unwrap();
        assert!((m.percent - 10.0).abs() < 1e-12);
    }

    #[test]
    fn mape_excludes_zero_and_gaps() {
        let mut a = actual(d("2017-01-01"), &[100.0, 0.0, 50.0]);
        a.values.push(None);
        let m = mape(&a, &forecast(d("2017-01-01"), &[90.0, 3.0, 50.0, 7.0])).unwrap();
        assert_eq!(m.n_used, 2);
        assert_eq!(m.n_excluded, 2);
        assert!((m.percent - 5.0).abs() < 1e-12);
    }

    #[test]
    fn mape_without_overlap_errors() {
        let res = mape(&actual(d("2017-01-01"), &[1.0]), &forecast(d("2018-01-01"), &[1.0]));
        assert!(matches!(res, Err(Error::Evaluation(_))));
    }

    #[test]
    fn rmse_hand_value() {
        let r = rmse(&actual(d("2017-01-01"), &[10.0, 10.0]), &forecast(d("2017-01-01"), &[13.0, 6.0])).unwrap();
        assert!((r - (12.5f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn percentage_change_values() {
        assert!((percentage_change(9.63, 21.27).unwrap() - (-54.72)).abs() < 0.005);
        assert_eq!(percentage_change(3.0, 3.0).unwrap(), 0.0);
        assert!((percentage_change(40.98, 21.27).unwrap() - 92.66).abs() < 0.01);
        assert!(matches!(percentage_change(1.0, 0.0), Err(Error::UndefinedComparison(_))));
    }

    fn year_series(f: impl Fn(NaiveDate) -> f64) -> (DailySeries, Forecast) {
        let start = d("2017-01-01");
        let a: Vec<f64> = (0..365).map(|_| 100.0).collect();
        let fc: Vec<f64> = (0..365).map(|i| f(start + Days::new(i))).collect();
        (actual(start, &a), forecast(start, &fc))
    }

    #[test]
    fn constant_error_every_month() {
        let (a, f) = year_series(|_| 110.0);
        let m = monthly_average_mape(&a, &f, (d("2017-01-01"), d("2017-12-31"))).unwrap();
        assert_eq!(m.months.len(), 12);
        for mm in &m.months {
            assert!((mm.mape.unwrap() - 10.0).abs() < 1e-9);
        }
        assert!((m.mean - 10.0).abs() < 1e-9);
        assert!((m.mean - m.pooled).abs() < 1e-9);
    }

    #[test]
    fn january_only_error() {
        let (a, f) = year_series(|d| if d.month() == 1 { 110.0 } else { 100.0 });
        let m = monthly_average_mape(&a, &f, (d("2017-01-01"), d("2017-12-31"))).unwrap();
        assert!((m.mean - 10.0 / 12.0).abs() < 1e-9);
    }

    #[test]
    fn empty_month_is_skipped() {
        let (mut a, f) = year_series(|_| 110.0);
        for i in 31..59 {
            a.values[i] = None;
        }
        let m = monthly_average_mape(&a, &f, (d("2017-01-01"), d("2017-12-31"))).unwrap();
        assert_eq!(m.skipped_months().count(), 1);
        assert!((m.mean - 10.0).abs() < 1e-9);
    }

    #[test]
    fn partial_month_window_rejected() {
        let (a, f) = year_series(|_| 100.0);
        assert!(monthly_average_mape(&a, &f, (d("2017-01-02"), d("2017-12-31"))).is_err());
    }
}
