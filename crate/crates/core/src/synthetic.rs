//! Synthetic multi-branch daily sales.
//!
//! A branch is a deterministic skeleton (level × compound growth × weekday
//! multiplier × yearly swing) times multiplicative log-normal noise. In log2
//! space the skeleton is a piecewise-linear trend plus a 7-day and a
//! 365.25-day periodic function, so noiseless series lie inside the model
//! class.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::YEARLY_PERIOD;
use crate::series::DailySeries;

pub const DEFAULT_NOISE_SIGMA: f64 = 0.08;
pub const PRESET_END: &str = "2017-12-31";

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeBreak {
    pub date: NaiveDate,
    /// Growth per year in effect from `date` on.
    pub growth_per_year: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub entity_id: String,
    pub base_level: f64,
    pub growth_per_year: f64,
    /// Multipliers Monday..Sunday.
    pub weekly_pattern: [f64; 7],
    pub yearly_amplitude: f64,
    /// Position in the year (days) of the yearly peak.
    pub yearly_phase: f64,
    #[serde(default)]
    pub regime_breaks: Vec<RegimeBreak>,
    /// Standard deviation of the natural-log noise.
    pub noise_sigma: f64,
    #[serde(default)]
    pub closed_weekday: Option<Weekday>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub seed: u64,
}

/// Log2 contributions of each deterministic part of a branch on one day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonLog2 {
    pub trend: f64,
    pub weekly: f64,
    pub yearly: f64,
}

impl SkeletonLog2 {
    pub fn total(&self) -> f64 {
        self.trend + self.weekly + self.yearly
    }
}

impl BranchSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_level > 0.0) {
            return Err(Error::Config(format!("{}: base_level must be positive", self.entity_id)));
        }
        if self.weekly_pattern.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config(format!("{}: weekly multipliers must be positive", self.entity_id)));
        }
        if !(self.yearly_amplitude.abs() < 1.0) {
            return Err(Error::Config(format!("{}: yearly amplitude must be below 1", self.entity_id)));
        }
        if (self.end - self.start).num_days() + 1 < 730 {
            return Err(Error::Config(format!("{}: span must cover at least two years", self.entity_id)));
        }
        if self.growth_per_year <= -1.0 || self.regime_breaks.iter().any(|b| b.growth_per_year <= -1.0) {
            return Err(Error::Config(format!("{}: growth must exceed -100%", self.entity_id)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("{}: noise sigma must be non-negative", self.entity_id)));
        }
        Ok(())
    }

    /// Deterministic part of the series on `date`, in log2 units.
    pub fn skeleton_log2(&self, date: NaiveDate) -> SkeletonLog2 {
        let mut breaks = self.regime_breaks.clone();
        breaks.sort_by_key(|b| b.date);
        let mut log_growth = 0.0;
        let mut seg_start = self.start;
        let mut rate = self.growth_per_year;
        for b in breaks.iter().filter(|b| b.date > self.start && b.date <= date) {
            log_growth += (1.0 + rate).log2() * (b.date - seg_start).num_days() as f64 / YEARLY_PERIOD;
            seg_start = b.date;
            rate = b.growth_per_year;
        }
        log_growth += (1.0 + rate).log2() * (date - seg_start).num_days() as f64 / YEARLY_PERIOD;

        let weekly = self.weekly_pattern[date.weekday().num_days_from_monday() as usize].log2();
        let pos = (date - epoch()).num_days() as f64;
        let yearly = (1.0 + self.yearly_amplitude * (2.0 * PI * (pos - self.yearly_phase) / YEARLY_PERIOD).cos()).log2();
        SkeletonLog2 {
            trend: self.base_level.log2() + log_growth,
            weekly,
            yearly,
        }
    }
}

/// Generates the branch's daily series. Deterministic in `spec.seed`; the
/// noise draw for a day does not depend on whether the day is closed.
pub fn generate_branch(spec: &BranchSpec) -> Result<DailySeries> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let n = (spec.end - spec.start).num_days() as u64 + 1;
    let values = (0..n)
        .map(|i| {
            let date = spec.start + Days::new(i);
            let eps = noise.sample(&mut rng);
            if spec.closed_weekday == Some(date.weekday()) {
                None
            } else {
                Some(spec.skeleton_log2(date).total().exp2() * eps.exp())
            }
        })
        .collect();
    Ok(DailySeries::new(spec.entity_id.clone(), spec.start, values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchOverride {
    pub entity_id: String,
    pub start: NaiveDate,
    pub base_level: f64,
    pub growth_per_year: f64,
    /// Multiplicative tweaks to the chain's weekday pattern.
    pub weekly_tweak: [f64; 7],
    #[serde(default)]
    pub regime_breaks: Vec<RegimeBreak>,
    #[serde(default)]
    pub closed_weekday: Option<Weekday>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPreset {
    pub label: String,
    pub weekly_pattern: [f64; 7],
    pub yearly_amplitude: f64,
    pub yearly_phase: f64,
    pub branches: Vec<BranchOverride>,
}

impl ChainPreset {
    pub fn branch_specs(&self, end: NaiveDate, noise_sigma: f64, seed: u64) -> Vec<BranchSpec> {
        self.branches
            .iter()
            .map(|b| {
                let mut weekly = self.weekly_pattern;
                for (w, t) in weekly.iter_mut().zip(b.weekly_tweak) {
                    *w *= t;
                }
                BranchSpec {
                    entity_id: b.entity_id.clone(),
                    base_level: b.base_level,
                    growth_per_year: b.growth_per_year,
                    weekly_pattern: weekly,
                    yearly_amplitude: self.yearly_amplitude,
                    yearly_phase: self.yearly_phase,
                    regime_breaks: b.regime_breaks.clone(),
                    noise_sigma,
                    closed_weekday: b.closed_weekday,
                    start: b.start,
                    end,
                    seed: seed_for(seed, &b.entity_id),
                }
            })
            .collect()
    }
}

fn seed_for(seed: u64, entity_id: &str) -> u64 {
    // FNV-1a over the id, mixed with the run seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in entity_id.bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// Two chains of three branches. Chain α peaks Friday/Saturday with a quiet
/// Sunday; chain β peaks Friday and Sunday with a Saturday dip and trades at
/// a higher level.
pub fn six_branch_chains() -> Vec<ChainPreset> {
    vec![
        ChainPreset {
            label: "alpha".into(),
            weekly_pattern: [0.85, 0.90, 0.95, 1.05, 1.35, 1.45, 0.60],
            yearly_amplitude: 0.15,
            yearly_phase: 190.0,
            branches: vec![
                BranchOverride {
                    entity_id: "b1".into(),
                    start: ymd(2012, 1, 1),
                    base_level: 1500.0,
                    growth_per_year: 0.04,
                    weekly_tweak: [1.0, 1.02, 0.98, 1.0, 1.03, 0.97, 1.0],
                    regime_breaks: vec![],
                    closed_weekday: None,
                },
                BranchOverride {
                    entity_id: "b2".into(),
                    start: ymd(2013, 1, 1),
                    base_level: 1250.0,
                    growth_per_year: 0.02,
                    weekly_tweak: [0.97, 1.0, 1.02, 1.01, 1.0, 1.02, 0.96],
                    regime_breaks: vec![],
                    closed_weekday: None,
                },
                BranchOverride {
                    entity_id: "b3".into(),
                    start: ymd(2014, 1, 1),
                    base_level: 1000.0,
                    growth_per_year: -0.03,
                    weekly_tweak: [1.03, 0.98, 1.0, 0.99, 0.97, 1.0, 1.04],
                    regime_breaks: vec![],
                    closed_weekday: None,
                },
            ],
        },
        ChainPreset {
            label: "beta".into(),
            weekly_pattern: [0.80, 0.85, 0.90, 1.00, 1.35, 0.90, 1.40],
            yearly_amplitude: 0.25,
            yearly_phase: 15.0,
            branches: vec![
                BranchOverride {
                    entity_id: "b4".into(),
                    start: ymd(2013, 1, 1),
                    base_level: 4500.0,
                    growth_per_year: 0.05,
                    weekly_tweak: [1.0, 1.0, 0.98, 1.02, 1.0, 1.03, 0.98],
                    regime_breaks: vec![RegimeBreak { date: ymd(2016, 3, 1), growth_per_year: -0.10 }],
                    closed_weekday: None,
                },
                BranchOverride {
                    entity_id: "b5".into(),
                    start: ymd(2013, 1, 1),
                    base_level: 6000.0,
                    growth_per_year: -0.02,
                    weekly_tweak: [0.98, 1.02, 1.0, 1.0, 0.97, 1.0, 1.03],
                    regime_breaks: vec![],
                    closed_weekday: None,
                },
                BranchOverride {
                    entity_id: "b6".into(),
                    start: ymd(2013, 1, 1),
                    base_level: 3500.0,
                    growth_per_year: 0.06,
                    weekly_tweak: [1.0, 0.97, 1.01, 1.0, 1.02, 0.98, 1.0],
                    regime_breaks: vec![],
                    closed_weekday: Some(Weekday::Mon),
                },
            ],
        },
    ]
}

pub fn six_branch_specs(seed: u64) -> Vec<BranchSpec> {
    let end: NaiveDate = PRESET_END.parse().unwrap();
    six_branch_chains()
        .iter()
        .flat_map(|c| c.branch_specs(end, DEFAULT_NOISE_SIGMA, seed))
        .collect()
}

/// The six-branch preset, keyed by entity id (`b1`..`b6`).
pub fn six_branch_preset(seed: u64) -> BTreeMap<String, DailySeries> {
    six_branch_specs(seed)
        .iter()
        .map(|spec| {
            let series = generate_branch(spec).expect("preset specs are valid");
            (spec.entity_id.clone(), series)
        })
        .collect()
}
