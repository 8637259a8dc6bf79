use chrono::{Datelike, NaiveDate, Weekday};

use salescast::series::DailySeries;
use salescast::synthetic::{generate_branch, six_branch_preset, six_branch_specs, BranchSpec};

fn d(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

fn months(series: &DailySeries) -> i32 {
    let (a, b) = (series.start_date, series.end_date());
    (b.year() - a.year()) * 12 + b.month() as i32 - a.month() as i32 + 1
}

/// Mean log value per weekday over 2017, centered.
fn weekly_profile(series: &DailySeries) -> Vec<f64> {
    let mut sum = [0.0; 7];
    let mut n = [0usize; 7];
    for (date, v) in series.observations().filter(|(x, _)| x.year() == 2017) {
        let i = date.weekday().num_days_from_monday() as usize;
        sum[i] += v.ln();
        n[i] += 1;
    }
    let means: Vec<f64> = (0..7).map(|i| if n[i] > 0 { sum[i] / n[i] as f64 } else { f64::NAN }).collect();
    let observed: Vec<f64> = means.iter().copied().filter(|x| x.is_finite()).collect();
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    means.iter().map(|x| x - mean).collect()
}

/// Pearson r over the weekdays both profiles observe.
fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = a.iter().zip(b).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| (*x, *y)).collect();
    let n = pairs.len() as f64;
    let (ma, mb) = (pairs.iter().map(|p| p.0).sum::<f64>() / n, pairs.iter().map(|p| p.1).sum::<f64>() / n);
    let cov: f64 = pairs.iter().map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = pairs.iter().map(|(x, _)| (x - ma).powi(2)).sum();
    let vb: f64 = pairs.iter().map(|(_, y)| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn preset_layout() {
    let preset = six_branch_preset(1);
    let got: Vec<i32> = preset.values().map(months).collect();
    assert_eq!(got, vec![72, 60, 48, 60, 60, 60]);
    assert!(preset.values().all(|s| s.end_date() == d("2017-12-31")));
    assert_eq!(preset.keys().cloned().collect::<Vec<_>>(), ["b1", "b2", "b3", "b4", "b5", "b6"]);
}

#[test]
fn weekly_profiles_cluster_by_chain() {
    let preset = six_branch_preset(3);
    let profiles: Vec<Vec<f64>> = preset.values().map(weekly_profile).collect();
    let chain = |i: usize| i / 3;
    let mut within = f64::INFINITY;
    let mut across = f64::NEG_INFINITY;
    for i in 0..6 {
        for j in (i + 1)..6 {
            let r = pearson(&profiles[i], &profiles[j]);
            if chain(i) == chain(j) {
                within = within.min(r);
            } else {
                across = across.max(r);
            }
        }
    }
    assert!(within > across, "weakest within-chain r {within}, strongest cross-chain r {across}");
}

#[test]
fn chain_weekly_shapes() {
    let preset = six_branch_preset(2);
    let day = |p: &[f64], w: Weekday| p[w.num_days_from_monday() as usize];
    for id in ["b1", "b2", "b3"] {
        let p = weekly_profile(&preset[id]);
        let top = [Weekday::Fri, Weekday::Sat];
        for w in [Weekday::Mon, Weekday::Tue, Weekday::Wed, Weekday::Thu, Weekday::Sun] {
            assert!(top.iter().all(|&t| day(&p, t) > day(&p, w)), "{id}: {w}");
        }
        assert!(p.iter().all(|&x| x >= day(&p, Weekday::Sun)), "{id}: Sunday is not the low");
    }
    for id in ["b4", "b5", "b6"] {
        let p = weekly_profile(&preset[id]);
        let top = [Weekday::Fri, Weekday::Sun];
        for w in [Weekday::Tue, Weekday::Wed, Weekday::Thu, Weekday::Sat] {
            assert!(top.iter().all(|&t| day(&p, t) > day(&p, w)), "{id}: {w}");
        }
        assert!(day(&p, Weekday::Sat) < day(&p, Weekday::Thu), "{id}: no Saturday dip");
    }
    assert!(preset["b6"].observations().all(|(x, _)| x.weekday() != Weekday::Mon));
}

#[test]
fn seeds_change_noise_not_skeleton() {
    let a = six_branch_specs(10);
    let b = six_branch_specs(11);
    for (sa, sb) in a.iter().zip(&b) {
        let mut stripped = sb.clone();
        stripped.seed = sa.seed;
        assert_eq!(sa, &stripped);
        let (ga, ga2, gb) = (generate_branch(sa).unwrap(), generate_branch(sa).unwrap(), generate_branch(sb).unwrap());
        assert_eq!(ga, ga2);
        assert_ne!(ga.values, gb.values);
        let date = d("2017-06-15");
        assert_eq!(sa.skeleton_log2(date), sb.skeleton_log2(date));
    }
    assert_eq!(six_branch_preset(10), six_branch_preset(10));
}

#[test]
fn flat_spec_is_constant() {
    let spec = BranchSpec {
        entity_id: "c".into(),
        base_level: 250.0,
        growth_per_year: 0.0,
        weekly_pattern: [1.0; 7],
        yearly_amplitude: 0.0,
        yearly_phase: 0.0,
        regime_breaks: vec![],
        noise_sigma: 0.0,
        closed_weekday: None,
        start: d("2015-01-01"),
        end: d("2016-12-31"),
        seed: 0,
    };
    let s = generate_branch(&spec).unwrap();
    assert_eq!(s.len(), 731);
    assert!(s.observations().all(|(_, v)| (v - 250.0).abs() < 1e-9));
    let short = BranchSpec { end: d("2015-06-30"), ..spec.clone() };
    assert!(generate_branch(&short).is_err());
    let bad = BranchSpec { weekly_pattern: [1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0], ..spec };
    assert!(generate_branch(&bad).is_err());
}
