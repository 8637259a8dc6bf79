//! Transaction ingest, cleaning, daily aggregation and the variance-stabilising
//! log2 transform.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{Days, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::DailySeries;

/// Share of malformed rows above which a transaction file is rejected outright.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub timestamp: NaiveDateTime,
    pub item_text: String,
    /// Negative for corrections.
    pub unit_price: f64,
    pub quantity: i64,
    pub is_tip: bool,
}

impl TransactionRecord {
    pub fn amount(&self) -> f64 {
        self.unit_price * self.quantity as f64
    }

    /// The business day a sale belongs to. Sales before `cutoff_hour` count
    /// toward the previous day.
    pub fn business_day(&self, cutoff_hour: u32) -> NaiveDate {
        let date = self.timestamp.date();
        if self.timestamp.hour() < cutoff_hour {
            date - Days::new(1)
        } else {
            date
        }
    }
}

/// Header names for each transaction field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub timestamp: String,
    pub item_text: String,
    pub unit_price: String,
    pub quantity: String,
    pub is_tip: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            item_text: "item_text".into(),
            unit_price: "unit_price".into(),
            quantity: "quantity".into(),
            is_tip: "is_tip".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedRow {
    /// 1-based line number in the input, counting the header.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedTransactions {
    pub records: Vec<TransactionRecord>,
    pub malformed: Vec<MalformedRow>,
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    raw.parse::<NaiveDateTime>()
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S").ok())
        .or_else(|| NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M").ok())
}

fn parse_row(fields: &[&str; 5]) -> std::result::Result<TransactionRecord, String> {
    let [ts, item, price, qty, tip] = *fields;
    let timestamp = parse_timestamp(ts).ok_or_else(|| format!("bad timestamp `{ts}`"))?;
    let unit_price: f64 = price.parse().map_err(|_| format!("bad unit_price `{price}`"))?;
    if !unit_price.is_finite() {
        return Err(format!("non-finite unit_price `{price}`"));
    }
    let quantity: i64 = qty.parse().map_err(|_| format!("bad quantity `{qty}`"))?;
    if quantity == 0 {
        return Err("quantity must be non-zero".into());
    }
    let is_tip = match tip {
        "true" => true,
        "false" => false,
        other => return Err(format!("bad is_tip `{other}`")),
    };
    Ok(TransactionRecord {
        timestamp,
        item_text: item.to_string(),
        unit_price,
        quantity,
        is_tip,
    })
}

/// Parses a transaction CSV. Malformed rows are returned alongside the good
/// ones; more than [`MAX_MALFORMED_FRACTION`] of them fails the whole file.
pub fn parse_transactions<R: Read>(raw: R, schema: &ColumnMapping) -> Result<ParsedTransactions> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(raw);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("header is missing column `{name}`")))
    };
    let idx = [
        col(&schema.timestamp)?,
        col(&schema.item_text)?,
        col(&schema.unit_price)?,
        col(&schema.quantity)?,
        col(&schema.is_tip)?,
    ];

    let mut out = ParsedTransactions::default();
    let mut total = 0usize;
    for (i, row) in reader.records().enumerate() {
        total += 1;
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.malformed.push(MalformedRow { line, reason: e.to_string() });
                continue;
            }
        };
        let fields = idx.map(|j| row.get(j));
        if fields.iter().any(Option::is_none) {
            out.malformed.push(MalformedRow {
                line,
                reason: format!("expected at least {} fields, found {}", idx.iter().max().unwrap() + 1, row.len()),
            });
            continue;
        }
        match parse_row(&fields.map(Option::unwrap)) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.malformed.push(MalformedRow { line, reason }),
        }
    }

    if total > 0 && out.malformed.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(Error::CorruptInput {
            malformed: out.malformed.len(),
            total,
            examples: out
                .malformed
                .iter()
                .take(5)
                .map(|m| format!("line {}: {}", m.line, m.reason))
                .collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    /// Hour of day at which the business day rolls over.
    pub cutoff_hour: u32,
    pub drop_tips: bool,
    pub drop_negative_days: bool,
    /// Records whose calendar date falls outside `[valid_from, valid_to]` are
    /// treated as timestamp noise.
    pub valid_from: Option<NaiveDate>,
    pub valid_to: Option<NaiveDate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub columns: Option<ColumnMapping>,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            cutoff_hour: 6,
            drop_tips: true,
            drop_negative_days: true,
            valid_from: None,
            valid_to: None,
            columns: None,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cutoff_hour >= 12 {
            return Err(Error::Config(format!(
                "cutoff_hour must be in [0, 12), got {}",
                self.cutoff_hour
            )));
        }
        if let (Some(a), Some(b)) = (self.valid_from, self.valid_to) {
            if a > b {
                return Err(Error::Config(format!("validity window is empty: {a} > {b}")));
            }
        }
        Ok(())
    }

    fn in_window(&self, ts: &NaiveDateTime) -> bool {
        let d = ts.date();
        self.valid_from.is_none_or(|f| d >= f) && self.valid_to.is_none_or(|t| d <= t)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub n_input: usize,
    pub n_retained: usize,
    pub n_dropped_noise: usize,
    pub n_dropped_tips: usize,
    /// Days, not records.
    pub n_negative_days_removed: usize,
    pub fraction_dropped: f64,
}

pub fn clean_transactions(
    records: Vec<TransactionRecord>,
    cfg: &CleaningConfig,
) -> (Vec<TransactionRecord>, CleaningReport) {
    let mut report = CleaningReport {
        n_input: records.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(records.len());
    for rec in records {
        if !cfg.in_window(&rec.timestamp) {
            report.n_dropped_noise += 1;
        } else if cfg.drop_tips && rec.is_tip {
            report.n_dropped_tips += 1;
        } else {
            kept.push(rec);
        }
    }
    report.n_retained = kept.len();
    report.fraction_dropped = if report.n_input == 0 {
        0.0
    } else {
        (report.n_dropped_noise + report.n_dropped_tips) as f64 / report.n_input as f64
    };
    (kept, report)
}

/// Sums `unit_price × quantity` per business day.
///
/// Returns the series and the number of negative-total days turned into gaps.
/// Each day is summed in a canonical order so the result does not depend on
/// the order of `records`.
pub fn aggregate_daily(
    entity_id: &str,
    records: &[TransactionRecord],
    cfg: &CleaningConfig,
) -> Result<(DailySeries, usize)> {
    if records.is_empty() {
        return Err(Error::EmptySeries(format!("no transactions to aggregate for {entity_id}")));
    }
    let mut per_day: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
    for rec in records {
        per_day.entry(rec.business_day(cfg.cutoff_hour)).or_default().push(rec.amount());
    }
    let start = *per_day.keys().next().unwrap();
    let end = *per_day.keys().next_back().unwrap();
    let mut values = vec![None; (end - start).num_days() as usize + 1];
    let mut negative_days = 0;
    for (day, mut amounts) in per_day {
        amounts.sort_by(f64::total_cmp);
        let total: f64 = amounts.iter().sum();
        let idx = (day - start).num_days() as usize;
        if total < 0.0 && cfg.drop_negative_days {
            negative_days += 1;
        } else {
            values[idx] = Some(total);
        }
    }
    Ok((DailySeries::new(entity_id, start, values), negative_days))
}

/// How recorded zero-sales days enter the log transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPolicy {
    /// Zeros become gaps (treated like closed days).
    #[default]
    Gap,
    /// Add this many currency units before taking the log.
    Offset(f64),
}

pub fn log2_transform(series: &DailySeries, policy: ZeroPolicy) -> Result<DailySeries> {
    if series.is_log_space {
        return Err(Error::Data(format!("series {} is already in log space", series.entity_id)));
    }
    let eps = match policy {
        ZeroPolicy::Gap => 0.0,
        ZeroPolicy::Offset(e) if e >= 0.0 && e.is_finite() => e,
        ZeroPolicy::Offset(e) => return Err(Error::Config(format!("log offset must be >= 0, got {e}"))),
    };
    let mut values = Vec::with_capacity(series.len());
    for (i, v) in series.values.iter().enumerate() {
        values.push(match *v {
            None => None,
            Some(x) if x == 0.0 && policy == ZeroPolicy::Gap => None,
            Some(x) if x + eps <= 0.0 => {
                return Err(Error::Domain { date: series.date_at(i), value: x });
            }
            Some(x) => Some((x + eps).log2()),
        });
    }
    Ok(DailySeries {
        values,
        is_log_space: true,
        log_offset: eps,
        ..series.clone()
    })
}

pub fn exp2_inverse(series: &DailySeries) -> Result<DailySeries> {
    if !series.is_log_space {
        return Err(Error::Data(format!("series {} is not in log space", series.entity_id)));
    }
    let eps = series.log_offset;
    Ok(DailySeries {
        is_log_space: false,
        log_offset: 0.0,
        ..series.map_values(|v| v.exp2() - eps)
    })
}

/// Divides by the series maximum. Returns the scaled series and the scale.
pub fn normalize(series: &DailySeries) -> Result<(DailySeries, f64)> {
    if series.is_log_space {
        return Err(Error::Data("normalization applies to observation-space series".into()));
    }
    let scale = series
        .observations()
        .map(|(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::DegenerateScale(format!(
            "series {} has maximum {scale}",
            series.entity_id
        )));
    }
    let mut out = series.map_values(|v| v / scale);
    out.is_normalized = true;
    Ok((out, scale))
}
