use chrono::{Days, NaiveDate, NaiveDateTime, NaiveTime};
use proptest::prelude::*;

use salescast::pipeline::{
    aggregate_daily, clean_transactions, exp2_inverse, log2_transform, normalize, parse_transactions, CleaningConfig,
    ColumnMapping, TransactionRecord, ZeroPolicy,
};
use salescast::series::DailySeries;

fn base() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2016, 3, 1).unwrap().and_time(NaiveTime::MIN)
}

prop_compose! {
    fn record()(minute in 0i64..(60 * 24 * 30), cents in -2000i64..5000, qty in prop_oneof![-3i64..=-1, 1i64..=5], tip in proptest::bool::weighted(0.1)) -> TransactionRecord {
        TransactionRecord {
            timestamp: base() + chrono::Duration::minutes(minute),
            item_text: "item".into(),
            unit_price: cents as f64 / 100.0,
            quantity: qty,
            is_tip: tip,
        }
    }
}

fn positive_series() -> impl Strategy<Value = DailySeries> {
    prop::collection::vec(prop::option::weighted(0.9, 1e-3..1e6f64), 1..200).prop_map(|values| {
        DailySeries::new("p", NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(), values)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_is_order_independent(records in prop::collection::vec(record(), 1..200), seed in any::<u64>()) {
        let cfg = CleaningConfig::default();
        let (a, _) = aggregate_daily("b", &records, &cfg).unwrap();
        let mut shuffled = records.clone();
        // Deterministic Fisher–Yates driven by the seed.
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let (b, _) = aggregate_daily("b", &shuffled, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn aggregation_conserves_totals(records in prop::collection::vec(record(), 1..200)) {
        let cfg = CleaningConfig { drop_negative_days: false, ..Default::default() };
        let (series, negative) = aggregate_daily("b", &records, &cfg).unwrap();
        prop_assert_eq!(negative, 0);
        let total: f64 = series.observations().map(|(_, v)| v).sum();
        let expected: f64 = records.iter().map(|r| r.unit_price * r.quantity as f64).sum();
        prop_assert!((total - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn negative_days_become_gaps(records in prop::collection::vec(record(), 1..200)) {
        let (series, negative) = aggregate_daily("b", &records, &CleaningConfig::default()).unwrap();
        prop_assert!(series.observations().all(|(_, v)| v >= 0.0));
        let (kept, _) = aggregate_daily("b", &records, &CleaningConfig { drop_negative_days: false, ..Default::default() }).unwrap();
        let n_neg = kept.observations().filter(|(_, v)| *v < 0.0).count();
        prop_assert_eq!(negative, n_neg);
    }

    #[test]
    fn cleaning_counts_partition_input(records in prop::collection::vec(record(), 0..200), lo in 0u64..15, len in 0u64..20) {
        let from = base().date() + Days::new(lo);
        let cfg = CleaningConfig { valid_from: Some(from), valid_to: Some(from + Days::new(len)), ..Default::default() };
        let n = records.len();
        let (kept, report) = clean_transactions(records, &cfg);
        prop_assert_eq!(report.n_input, n);
        prop_assert_eq!(report.n_retained, kept.len());
        prop_assert_eq!(report.n_input, report.n_retained + report.n_dropped_noise + report.n_dropped_tips);
        prop_assert!((0.0..=1.0).contains(&report.fraction_dropped));
    }

    #[test]
    fn log_roundtrip(series in positive_series()) {
        let back = exp2_inverse(&log2_transform(&series, ZeroPolicy::Gap).unwrap()).unwrap();
        for (a, b) in series.values.iter().zip(&back.values) {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0)),
                (None, None) => {}
                _ => prop_assert!(false, "gap pattern changed"),
            }
        }
        prop_assert!(!back.is_log_space);
    }

    #[test]
    fn normalize_is_idempotent(series in positive_series()) {
        prop_assume!(series.n_observed() > 0);
        let (once, scale) = normalize(&series).unwrap();
        let (twice, scale2) = normalize(&once).unwrap();
        prop_assert_eq!(scale2, 1.0);
        prop_assert_eq!(&once.values, &twice.values);
        prop_assert!(once.observations().all(|(_, v)| v > 0.0 && v <= 1.0));
        prop_assert!(scale > 0.0);
    }
}

#[test]
fn csv_to_daily_series() {
    let text = "timestamp,item_text,unit_price,quantity,is_tip\n\
                2016-03-01T19:42:00,Pizza,9.50,2,false\n\
                2016-03-01T20:00:00,Beer,4.00,1,false\n\
                2016-03-02T01:30:00,Beer,4.00,1,false\n\
                2016-03-02T12:00:00,Tip,1.00,1,true\n\
                2016-03-03T12:00:00,Refund,-5.00,1,false\n\
                2016-03-04T12:00:00,Salad,6.00,1,false\n";
    let parsed = parse_transactions(text.as_bytes(), &ColumnMapping::default()).unwrap();
    assert!(parsed.malformed.is_empty());
    let cfg = CleaningConfig::default();
    let (records, report) = clean_transactions(parsed.records, &cfg);
    assert_eq!(report.n_dropped_tips, 1);
    let (series, negative) = aggregate_daily("b", &records, &cfg).unwrap();
    assert_eq!(negative, 1);
    let d = |s: &str| s.parse::<NaiveDate>().unwrap();
    assert_eq!(series.get(d("2016-03-01")), Some(27.0));
    assert_eq!(series.get(d("2016-03-02")), None);
    assert_eq!(series.get(d("2016-03-03")), None);
    assert_eq!(series.get(d("2016-03-04")), Some(6.0));

    let mut buf = Vec::new();
    series.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf.clone()).unwrap(), "date,value\n2016-03-01,27\n2016-03-04,6\n");
    assert_eq!(DailySeries::read_csv("b", buf.as_slice()).unwrap(), series);
}

#[test]
fn zero_offset_policy_keeps_zero_days() {
    let s = DailySeries::new("z", NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(), vec![Some(0.0), Some(3.0), None]);
    let logged = log2_transform(&s, ZeroPolicy::Offset(1.0)).unwrap();
    assert_eq!(logged.values, vec![Some(0.0), Some(2.0), None]);
    assert_eq!(exp2_inverse(&logged).unwrap().values, s.values);
    let gapped = log2_transform(&s, ZeroPolicy::Gap).unwrap();
    assert_eq!(gapped.values[0], None);
}
