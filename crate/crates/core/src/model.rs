//! The additive model: a piecewise-linear trend with changepoints plus
//! Fourier seasonality blocks, all evaluated in log2 space.

use std::f64::consts::PI;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub const WEEKLY_PERIOD: f64 = 7.0;
pub const MONTHLY_PERIOD: f64 = 30.4375;
pub const YEARLY_PERIOD: f64 = 365.25;

/// Maps calendar dates to the model's scaled time: `t0` maps to 0 and
/// `t0 + span_days` maps to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScale {
    pub t0: NaiveDate,
    pub span_days: f64,
}

impl TimeScale {
    pub fn new(t0: NaiveDate, span_days: f64) -> Result<Self> {
        if !(span_days > 0.0 && span_days.is_finite()) {
            return Err(Error::Config(format!("time scale span must be positive, got {span_days}")));
        }
        Ok(Self { t0, span_days })
    }

    pub fn days_since_origin(&self, date: NaiveDate) -> f64 {
        (date - self.t0).num_days() as f64
    }

    pub fn scaled(&self, date: NaiveDate) -> f64 {
        self.days_since_origin(date) / self.span_days
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChangepointGrid {
    /// Scaled times, strictly increasing.
    pub locations: Vec<f64>,
    /// Growth-rate adjustment at each location.
    pub deltas: Vec<f64>,
}

impl ChangepointGrid {
    pub fn new(locations: Vec<f64>, deltas: Vec<f64>) -> Result<Self> {
        if locations.len() != deltas.len() {
            return Err(Error::Config(format!(
                "{} changepoint locations but {} deltas",
                locations.len(),
                deltas.len()
            )));
        }
        if locations.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("changepoint locations must be strictly increasing".into()));
        }
        Ok(Self { locations, deltas })
    }

    pub fn zeros(locations: Vec<f64>) -> Result<Self> {
        let n = locations.len();
        Self::new(locations, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// `a(t)`: entry j is 1 once `t` has reached changepoint j.
    pub fn indicator(&self, t: f64) -> Vec<u8> {
        self.locations.iter().map(|&s| u8::from(t >= s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendParams {
    /// Base growth rate, log2 units per unit of scaled time.
    pub k: f64,
    /// Offset, log2 units.
    pub m: f64,
    pub grid: ChangepointGrid,
    /// Offset adjustment at each changepoint.
    pub gammas: Vec<f64>,
    /// When false, `gammas[j] == -s_j * delta_j` so the trend is continuous.
    pub gamma_free: bool,
}

impl TrendParams {
    /// Trend with offsets bound to keep it continuous at every changepoint.
    pub fn continuous(k: f64, m: f64, grid: ChangepointGrid) -> Self {
        let gammas = grid
            .locations
            .iter()
            .zip(&grid.deltas)
            .map(|(s, d)| -s * d)
            .collect();
        Self { k, m, grid, gammas, gamma_free: false }
    }

    pub fn line(k: f64, m: f64) -> Self {
        Self::continuous(k, m, ChangepointGrid::default())
    }

    /// `(k + a(t)·δ)·t + (m + a(t)·γ)`
    pub fn value(&self, t: f64) -> f64 {
        let mut rate = self.k;
        let mut offset = self.m;
        for ((&s, &delta), &gamma) in self.grid.locations.iter().zip(&self.grid.deltas).zip(&self.gammas) {
            if t >= s {
                rate += delta;
                offset += gamma;
            }
        }
        rate * t + offset
    }

    /// Growth rate in effect at `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.k
            + self
                .grid
                .locations
                .iter()
                .zip(&self.grid.deltas)
                .filter(|(s, _)| t >= **s)
                .map(|(_, d)| d)
                .sum::<f64>()
    }

    /// Re-expresses the trend on a time scale whose span is `ratio` times the
    /// current one. The trend as a function of calendar date is unchanged.
    pub fn rescaled(&self, ratio: f64) -> TrendParams {
        let locations = self.grid.locations.iter().map(|s| s / ratio).collect();
        let deltas = self.grid.deltas.iter().map(|d| d * ratio).collect();
        TrendParams {
            k: self.k * ratio,
            m: self.m,
            grid: ChangepointGrid { locations, deltas },
            gammas: self.gammas.clone(),
            gamma_free: self.gamma_free,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalityBlock {
    pub name: String,
    pub period_days: f64,
    pub order: usize,
    /// `[a_1, b_1, a_2, b_2, ...]` multiplying `[cos, sin]` of each harmonic.
    pub coefficients: Vec<f64>,
}

impl SeasonalityBlock {
    pub fn zeros(name: impl Into<String>, period_days: f64, order: usize) -> Self {
        Self {
            name: name.into(),
            period_days,
            order,
            coefficients: vec![0.0; 2 * order],
        }
    }

    pub fn value_at(&self, days_since_origin: f64) -> f64 {
        fourier_features(days_since_origin, self.period_days, self.order)
            .iter()
            .zip(&self.coefficients)
            .map(|(x, c)| x * c)
            .sum()
    }
}

/// `[cos(2πn·d/P), sin(2πn·d/P)]` for `n = 1..=order`, `d` in days.
pub fn fourier_features(days_since_origin: f64, period_days: f64, order: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * order);
    // Reduce first so phases stay exact for large day counts.
    let phase = days_since_origin.rem_euclid(period_days) / period_days;
    for n in 1..=order {
        let x = 2.0 * PI * n as f64 * phase;
        out.push(x.cos());
        out.push(x.sin());
    }
    out
}

pub fn block_features(date: NaiveDate, block: &SeasonalityBlock, t0: NaiveDate) -> Vec<f64> {
    fourier_features((date - t0).num_days() as f64, block.period_days, block.order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    ZeroShot,
    Adapted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub source_entity: String,
    pub target_entity: String,
    pub mode: TransferMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapt_window: Option<(NaiveDate, NaiveDate)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LineageEntry {
    Fit {
        entity_id: String,
        window: (NaiveDate, NaiveDate),
    },
    Transfer(TransferRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelFile", try_from = "ModelFile")]
pub struct AdditiveModel {
    pub entity_id: String,
    pub timescale: TimeScale,
    pub trend: TrendParams,
    pub seasonalities: Vec<SeasonalityBlock>,
    /// Always true for fitted models: the model predicts log2 sales.
    pub log_space: bool,
    pub log_offset: f64,
    pub training_window: (NaiveDate, NaiveDate),
    pub lineage: Vec<LineageEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub date: NaiveDate,
    pub yhat: f64,
    pub yhat_log: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub entity_id: String,
    pub points: Vec<ForecastPoint>,
    /// Requested dates with no forecast value.
    #[serde(default)]
    pub unavailable: Vec<NaiveDate>,
    #[serde(default)]
    pub lineage: Vec<LineageEntry>,
}

impl Forecast {
    pub fn get(&self, date: NaiveDate) -> Option<&ForecastPoint> {
        self.points
            .binary_search_by_key(&date, |p| p.date)
            .ok()
            .map(|i| &self.points[i])
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "yhat", "yhat_log"])?;
        for p in &self.points {
            w.write_record([p.date.to_string(), p.yhat.to_string(), p.yhat_log.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentDecomposition {
    pub dates: Vec<NaiveDate>,
    pub trend: Vec<f64>,
    /// One series per seasonality block, in model order.
    pub seasonal: Vec<(String, Vec<f64>)>,
    pub total_log: Vec<f64>,
    pub total: Vec<f64>,
}

impl ComponentDecomposition {
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.seasonal
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// `date,trend,weekly,monthly,yearly,total_log,total`. Blocks with other
    /// names only show up in the totals; absent blocks are written as zero.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "trend", "weekly", "monthly", "yearly", "total_log", "total"])?;
        let named = |name: &str, i: usize| self.block(name).map_or(0.0, |v| v[i]);
        for (i, date) in self.dates.iter().enumerate() {
            w.write_record([
                date.to_string(),
                self.trend[i].to_string(),
                named("weekly", i).to_string(),
                named("monthly", i).to_string(),
                named("yearly", i).to_string(),
                self.total_log[i].to_string(),
                self.total[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl AdditiveModel {
    pub fn n_params(&self) -> usize {
        2 + self.trend.grid.len() * if self.trend.gamma_free { 2 } else { 1 }
            + self.seasonalities.iter().map(|b| 2 * b.order).sum::<usize>()
    }

    fn observation(&self, log_value: f64) -> f64 {
        log_value.exp2() - self.log_offset
    }

    pub fn predict_log(&self, date: NaiveDate) -> f64 {
        let d = self.timescale.days_since_origin(date);
        let mut total = self.trend.value(d / self.timescale.span_days);
        for block in &self.seasonalities {
            total += block.value_at(d);
        }
        total
    }

    pub fn predict(&self, dates: &[NaiveDate]) -> Forecast {
        let points = dates
            .iter()
            .map(|&date| {
                let yhat_log = self.predict_log(date);
                ForecastPoint { date, yhat: self.observation(yhat_log), yhat_log }
            })
            .collect();
        Forecast {
            entity_id: self.entity_id.clone(),
            points,
            unavailable: Vec::new(),
            lineage: self.lineage.clone(),
        }
    }

    pub fn components(&self, dates: &[NaiveDate]) -> ComponentDecomposition {
        let days: Vec<f64> = dates.iter().map(|&d| self.timescale.days_since_origin(d)).collect();
        let trend: Vec<f64> = days
            .iter()
            .map(|d| self.trend.value(d / self.timescale.span_days))
            .collect();
        let seasonal: Vec<(String, Vec<f64>)> = self
            .seasonalities
            .iter()
            .map(|b| (b.name.clone(), days.iter().map(|&d| b.value_at(d)).collect()))
            .collect();
        let total_log: Vec<f64> = (0..dates.len())
            .map(|i| {
                let mut total = trend[i];
                for (_, s) in &seasonal {
                    total += s[i];
                }
                total
            })
            .collect();
        let total = total_log.iter().map(|&v| self.observation(v)).collect();
        ComponentDecomposition {
            dates: dates.to_vec(),
            trend,
            seasonal,
            total_log,
            total,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// On-disk model layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    entity_id: String,
    t0: NaiveDate,
    span_days: f64,
    k: f64,
    m: f64,
    changepoints: Vec<ChangepointFile>,
    seasonalities: Vec<SeasonalityBlock>,
    log_space: bool,
    #[serde(default, skip_serializing_if = "is_zero")]
    log_offset: f64,
    training_window: (NaiveDate, NaiveDate),
    lineage: Vec<LineageEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChangepointFile {
    s: f64,
    delta: f64,
    /// Present only for models fitted with free offsets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl From<AdditiveModel> for ModelFile {
    fn from(m: AdditiveModel) -> Self {
        let free = m.trend.gamma_free;
        let changepoints = m
            .trend
            .grid
            .locations
            .iter()
            .zip(&m.trend.grid.deltas)
            .zip(&m.trend.gammas)
            .map(|((&s, &delta), &g)| ChangepointFile { s, delta, gamma: free.then_some(g) })
            .collect();
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            entity_id: m.entity_id,
            t0: m.timescale.t0,
            span_days: m.timescale.span_days,
            k: m.trend.k,
            m: m.trend.m,
            changepoints,
            seasonalities: m.seasonalities,
            log_space: m.log_space,
            log_offset: m.log_offset,
            training_window: m.training_window,
            lineage: m.lineage,
        }
    }
}

impl TryFrom<ModelFile> for AdditiveModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", f.version)));
        }
        for b in &f.seasonalities {
            if b.coefficients.len() != 2 * b.order || b.order == 0 || !(b.period_days > 0.0) {
                return Err(Error::Format(format!("malformed seasonality block `{}`", b.name)));
            }
        }
        let gamma_free = f.changepoints.iter().any(|c| c.gamma.is_some());
        if gamma_free && f.changepoints.iter().any(|c| c.gamma.is_none()) {
            return Err(Error::Format("either all or no changepoints may carry gamma".into()));
        }
        let grid = ChangepointGrid::new(
            f.changepoints.iter().map(|c| c.s).collect(),
            f.changepoints.iter().map(|c| c.delta).collect(),
        )?;
        let trend = if gamma_free {
            TrendParams {
                k: f.k,
                m: f.m,
                grid,
                gammas: f.changepoints.iter().map(|c| c.gamma.unwrap()).collect(),
                gamma_free: true,
            }
        } else {
            TrendParams::continuous(f.k, f.m, grid)
        };
        Ok(AdditiveModel {
            entity_id: f.entity_id,
            timescale: TimeScale::new(f.t0, f.span_days)?,
            trend,
            seasonalities: f.seasonalities,
            log_space: f.log_space,
            log_offset: f.log_offset,
            training_window: f.training_window,
            lineage: f.lineage,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Days;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn grid(locs: &[f64], deltas: &[f64]) -> ChangepointGrid {
        ChangepointGrid::new(locs.to_vec(), deltas.to_vec()).unwrap()
    }

    fn sample_model() -> AdditiveModel {
        let mut weekly = SeasonalityBlock::zeros("weekly", WEEKLY_PERIOD, 3);
        weekly.coefficients = vec![0.3, -0.1, 0.05, 0.2, -0.07, 0.01];
        let mut yearly = SeasonalityBlock::zeros("yearly", YEARLY_PERIOD, 2);
        yearly.coefficients = vec![0.2, 0.1, -0.05, 0.03];
        AdditiveModel {
            entity_id: "b1".into(),
            timescale: TimeScale::new(d("2016-01-01"), 365.0).unwrap(),
            trend: TrendParams::continuous(0.4, 10.0, grid(&[0.25, 0.5, 0.75], &[0.3, -0.8, 0.1])),
            seasonalities: vec![weekly, yearly],
            log_space: true,
            log_offset: 0.0,
            training_window: (d("2016-01-01"), d("2016-12-31")),
            lineage: vec![LineageEntry::Fit {
                entity_id: "b1".into(),
                window: (d("2016-01-01"), d("2016-12-31")),
            }],
        }
    }

    #[test]
    fn indicator_before_all_changepoints() {
        assert_eq!(grid(&[0.1, 0.2], &[1.0, 1.0]).indicator(0.0), vec![0, 0]);
    }

    #[test]
    fn indicator_thresholds() {
        let g = grid(&[0.25, 0.5, 0.75], &[0.0; 3]);
        assert_eq!(g.indicator(0.6), vec![1, 1, 0]);
        assert_eq!(g.indicator(0.5), vec![1, 1, 0]);
    }

    #[test]
    fn grid_rejects_unordered() {
        assert!(ChangepointGrid::new(vec![0.5, 0.5], vec![0.0, 0.0]).is_err());
        assert!(ChangepointGrid::new(vec![0.5], vec![]).is_err());
    }

    #[test]
    fn trend_pure_line() {
        assert_eq!(TrendParams::line(2.0, 1.0).value(0.5), 2.0);
    }

    #[test]
    fn trend_single_changepoint() {
        let p = TrendParams::continuous(0.0, 0.0, grid(&[0.5], &[1.0]));
        assert_eq!(p.gammas, vec![-0.5]);
        assert_eq!(p.value(0.5), 0.0);
        assert_eq!(p.value(1.0), 0.5);
        assert_eq!(p.rate_at(0.7), 1.0);
    }

    #[test]
    fn rescaling_preserves_trend() {
        let p = sample_model().trend;
        let r = p.rescaled(1.7);
        for i in 0..50 {
            let t = i as f64 / 40.0;
            assert!((p.value(t) - r.value(t / 1.7)).abs() < 1e-12);
        }
    }

    #[test]
    fn fourier_at_origin_and_period() {
        assert_eq!(fourier_features(0.0, 7.0, 3), vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let f = fourier_features(7.0, 7.0, 1);
        assert_eq!(f, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_seasonality_predicts_exp2_trend() {
        let mut m = sample_model();
        for b in &mut m.seasonalities {
            b.coefficients.iter_mut().for_each(|c| *c = 0.0);
        }
        let dates: Vec<_> = (0..30).map(|i| d("2016-02-01") + Days::new(i)).collect();
        let f = m.predict(&dates);
        for p in &f.points {
            let t = m.timescale.scaled(p.date);
            assert_eq!(p.yhat_log, m.trend.value(t));
            assert_eq!(p.yhat, m.trend.value(t).exp2());
        }
        let c = m.components(&dates);
        assert!(c.block("weekly").unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predict_is_pure() {
        let m = sample_model();
        let dates: Vec<_> = (0..400).map(|i| d("2015-12-01") + Days::new(i)).collect();
        let before = m.clone();
        assert_eq!(m.predict(&dates), m.predict(&dates));
        assert_eq!(m, before);
    }

    #[test]
    fn extrapolation_is_linear() {
        let m = sample_model();
        let dates: Vec<_> = (0..60).map(|i| d("2017-06-01") + Days::new(i)).collect();
        let c = m.components(&dates);
        for w in c.trend.windows(3) {
            assert!((w[2] - 2.0 * w[1] + w[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn components_write_fixed_header() {
        let m = sample_model();
        let c = m.components(&[d("2016-03-01")]);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("date,trend,weekly,monthly,yearly,total_log,total\n"));
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[3], "0");
    }

    #[test]
    fn json_layout_and_roundtrip() {
        let m = sample_model();
        let text = m.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in [
            "version", "entity_id", "t0", "span_days", "k", "m", "changepoints",
            "seasonalities", "log_space", "training_window", "lineage",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["changepoints"][0].get("gamma").is_none());
        assert_eq!(AdditiveModel::from_json(&text).unwrap(), m);
    }

    #[test]
    fn json_roundtrip_free_gamma() {
        let mut m = sample_model();
        m.trend.gamma_free = true;
        m.trend.gammas = vec![0.1, 0.2, -0.3];
        let back = AdditiveModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn json_rejects_bad_version() {
        let text = sample_model().to_json().unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(AdditiveModel::from_json(&text).is_err());
    }

    proptest! {
        #[test]
        fn trend_continuous_at_changepoints(
            k in -5.0..5.0f64,
            m in -5.0..5.0f64,
            raw in proptest::collection::vec((0.01..1.0f64, -5.0..5.0f64), 1..8),
        ) {
            let mut locs: Vec<f64> = raw.iter().map(|r| r.0).collect();
            locs.sort_by(f64::total_cmp);
            locs.dedup();
            let deltas = raw.iter().take(locs.len()).map(|r| r.1).collect();
            let p = TrendParams::continuous(k, m, ChangepointGrid::new(locs.clone(), deltas).unwrap());
            for s in locs {
                prop_assert!((p.value(s - 1e-9) - p.value(s + 1e-9)).abs() < 1e-6);
            }
        }

        #[test]
        fn zero_deltas_give_plain_line(k in -5.0..5.0f64, m in -5.0..5.0f64, t in -1.0..2.0f64) {
            let p = TrendParams::continuous(k, m, ChangepointGrid::zeros(vec![0.2, 0.4, 0.9]).unwrap());
            prop_assert_eq!(p.value(t), k * t + m);
        }

        #[test]
        fn fourier_periodic(day in -2000i64..4000, order in 1usize..6) {
            for period in [WEEKLY_PERIOD, MONTHLY_PERIOD, YEARLY_PERIOD] {
                let a = fourier_features(day as f64, period, order);
                let b = fourier_features(day as f64 + period, period, order);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-12);
                    prop_assert!(x.abs() <= 1.0);
                }
            }
        }

        #[test]
        fn components_sum_to_prediction(offset in 0u64..1500, coef in -1.0..1.0f64) {
            let mut m = sample_model();
            m.seasonalities[0].coefficients[1] = coef;
            let dates: Vec<_> = (0..20).map(|i| d("2015-06-01") + Days::new(offset + i)).collect();
            let c = m.components(&dates);
            let f = m.predict(&dates);
            for (i, p) in f.points.iter().enumerate() {
                let sum = c.trend[i] + c.seasonal.iter().map(|(_, s)| s[i]).sum::<f64>();
                prop_assert!((sum - p.yhat_log).abs() < 1e-12);
                prop_assert_eq!(c.total_log[i], p.yhat_log);
            }
            let weekly = c.block("weekly").unwrap();
            for i in 0..13 {
                prop_assert!((weekly[i] - weekly[i + 7]).abs() < 1e-12);
            }
        }
    }
}
