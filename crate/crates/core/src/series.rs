//! Calendar-indexed daily series.
//!
//! A [`DailySeries`] stores one slot per calendar day between its first and
//! last date. Closed or removed days are kept as explicit gaps (`None`), so
//! the date of every slot is implied by `start_date` and its index.

use std::io::{Read, Write};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    pub entity_id: String,
    pub start_date: NaiveDate,
    pub values: Vec<Option<f64>>,
    pub is_log_space: bool,
    pub is_normalized: bool,
    /// Offset added before the log transform; zero unless zeros were offset.
    #[serde(default)]
    pub log_offset: f64,
}

impl DailySeries {
    pub fn new(entity_id: impl Into<String>, start_date: NaiveDate, values: Vec<Option<f64>>) -> Self {
        Self {
            entity_id: entity_id.into(),
            start_date,
            values,
            is_log_space: false,
            is_normalized: false,
            log_offset: 0.0,
        }
    }

    /// Builds a calendar-complete series from dated observations. Dates may
    /// arrive in any order; missing days become gaps. Duplicate dates are an
    /// error.
    pub fn from_observations(
        entity_id: impl Into<String>,
        observations: impl IntoIterator<Item = (NaiveDate, f64)>,
    ) -> Result<Self> {
        let entity_id = entity_id.into();
        let mut obs: Vec<(NaiveDate, f64)> = observations.into_iter().collect();
        if obs.is_empty() {
            return Err(Error::EmptySeries(format!("no observations for {entity_id}")));
        }
        obs.sort_by_key(|(d, _)| *d);
        let start = obs[0].0;
        let end = obs[obs.len() - 1].0;
        let len = (end - start).num_days() as usize + 1;
        let mut values = vec![None; len];
        for (date, value) in obs {
            let idx = (date - start).num_days() as usize;
            if values[idx].is_some() {
                return Err(Error::Format(format!("duplicate date {date} in series {entity_id}")));
            }
            values[idx] = Some(value);
        }
        Ok(Self::new(entity_id, start, values))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end_date(&self) -> NaiveDate {
        self.date_at(self.values.len().saturating_sub(1))
    }

    pub fn date_at(&self, idx: usize) -> NaiveDate {
        self.start_date + Days::new(idx as u64)
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        let offset = (date - self.start_date).num_days();
        if offset < 0 {
            return None;
        }
        self.values.get(offset as usize).copied().flatten()
    }

    /// Non-gap `(date, value)` pairs in date order.
    pub fn observations(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(move |(i, v)| v.map(|v| (self.date_at(i), v)))
    }

    pub fn n_observed(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn first_observed(&self) -> Option<NaiveDate> {
        self.observations().next().map(|(d, _)| d)
    }

    pub fn last_observed(&self) -> Option<NaiveDate> {
        self.values
            .iter()
            .rposition(Option::is_some)
            .map(|i| self.date_at(i))
    }

    /// Restricts the series to `[from, to]` (inclusive), clipped to the
    /// series' own range. Returns `None` when the two ranges do not overlap.
    pub fn slice(&self, from: NaiveDate, to: NaiveDate) -> Option<DailySeries> {
        if self.is_empty() {
            return None;
        }
        let lo = from.max(self.start_date);
        let hi = to.min(self.end_date());
        if lo > hi {
            return None;
        }
        let a = (lo - self.start_date).num_days() as usize;
        let b = (hi - self.start_date).num_days() as usize;
        Some(DailySeries {
            entity_id: self.entity_id.clone(),
            start_date: lo,
            values: self.values[a..=b].to_vec(),
            is_log_space: self.is_log_space,
            is_normalized: self.is_normalized,
            log_offset: self.log_offset,
        })
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> DailySeries {
        DailySeries {
            values: self.values.iter().map(|v| v.map(&f)).collect(),
            ..self.clone()
        }
    }

    /// Writes `date,value`, omitting gap days.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "value"])?;
        for (date, value) in self.observations() {
            w.write_record([date.to_string(), value.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(entity_id: impl Into<String>, reader: R) -> Result<DailySeries> {
        let entity_id = entity_id.into();
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "date" || &headers[1] != "value" {
            return Err(Error::Format(format!(
                "daily-series CSV must start with header `date,value`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut obs = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let date: NaiveDate = rec[0]
                .parse()
                .map_err(|e| Error::Format(format!("row {}: bad date `{}`: {e}", line + 2, &rec[0])))?;
            let value: f64 = rec[1]
                .parse()
                .map_err(|e| Error::Format(format!("row {}: bad value `{}`: {e}", line + 2, &rec[1])))?;
            obs.push((date, value));
        }
        DailySeries::from_observations(entity_id, obs)
    }
}
