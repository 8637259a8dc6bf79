use chrono::{Datelike, Days, NaiveDate};

use crate::error::{Error, Result};
use crate::model::{Forecast, ForecastPoint};
use crate::series::DailySeries;

/// Search radius (days) for a same-weekday stand-in when the source day is missing.
pub const FALLBACK_RADIUS: i64 = 3;

/// The same calendar day one year earlier; February 29 maps to February 28.
pub fn previous_year_date(date: NaiveDate) -> NaiveDate {
    let (month, day) = if date.month() == 2 && date.day() == 29 { (2, 28) } else { (date.month(), date.day()) };
    NaiveDate::from_ymd_opt(date.year() - 1, month, day).unwrap()
}

/// Seasonal naïve forecast: each day takes last year's value for the same
/// calendar date. When that day is missing, the day within ±3 days of it that
/// falls on the forecast day's weekday is used; failing that the day is
/// reported as unavailable.
pub fn seasonal_naive(history: &DailySeries, window: (NaiveDate, NaiveDate)) -> Result<Forecast> {
    let mut points = Vec::new();
    let mut unavailable = Vec::new();
    let mut date = window.0;
    while date <= window.1 {
        let src = previous_year_date(date);
        let value = history.get(src).or_else(|| {
            (-FALLBACK_RADIUS..=FALLBACK_RADIUS)
                .filter(|&o| o != 0)
                .map(|o| src.checked_add_signed(chrono::Duration::days(o)).unwrap())
                .find(|c| c.weekday() == date.weekday())
                .and_then(|c| history.get(c))
        });
        match value {
            Some(v) => {
                let yhat = if history.is_log_space { v.exp2() - history.log_offset } else { v };
                points.push(ForecastPoint { date, yhat, yhat_log: yhat.log2() })
            }
            None => unavailable.push(date),
        }
        date = date + Days::new(1);
    }
    if points.is_empty() {
        return Err(Error::Evaluation(format!(
            "seasonal naive: no source day available for {} in {}..{}",
            history.entity_id, window.0, window.1
        )));
    }
    Ok(Forecast {
        entity_id: history.entity_id.clone(),
        points,
        unavailable,
        lineage: Vec::new(),
    })
}
