//! Property suites over the data-handling layers: cleaning, normalization,
//! windowing, and split generation.

use chrono::NaiveDate;
use proptest::prelude::*;

use indexlab_core::ingest::{clean, series_as_records, RawRecord};
use indexlab_core::preprocess::{
    denormalize, fit_normalizer, make_windows, normalize, rolling_splits,
};

fn day(offset: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(offset)
}

fn raw_record(date_offset: Option<i64>, close: f64, line: usize) -> RawRecord {
    RawRecord {
        date: date_offset.map(day),
        date_reformatted: false,
        raw_date: date_offset.map(|o| day(o).to_string()).unwrap_or_else(|| "garbage".into()),
        close: if close.is_nan() { None } else { Some(close) },
        source_line: line,
    }
}

// Dirty record generator: some invalid dates, duplicate offsets, NaN and
// non-positive closes, in arbitrary order.
fn arb_records() -> impl Strategy<Value = Vec<RawRecord>> {
    prop::collection::vec(
        (
            prop_oneof![3 => (0i64..40).prop_map(Some), 1 => Just(None)],
            prop_oneof![
                4 => 1.0f64..1000.0,
                1 => Just(f64::NAN),
                1 => -10.0f64..0.0,
            ],
        ),
        1..60,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (offset, close))| raw_record(offset, close, i + 2))
            .collect()
    })
}

proptest! {
    #[test]
    fn clean_output_sorted_and_counts_reconcile(records in arb_records()) {
        match clean("X", &records) {
            Ok((series, report)) => {
                let dates = series.dates();
                prop_assert!(dates.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(series.closes().iter().all(|c| c.is_finite() && *c > 0.0));
                prop_assert_eq!(
                    report.rows_read,
                    series.len() + report.rows_dropped_nan + report.rows_dropped_duplicate_date
                );
                prop_assert!(series.len() >= 2);
            }
            Err(_) => {
                // acceptable only when fewer than two valid unique rows exist
                let mut seen = std::collections::HashSet::new();
                let valid_unique = records
                    .iter()
                    .filter(|r| r.is_valid())
                    .filter(|r| seen.insert(r.date.unwrap()))
                    .count();
                prop_assert!(valid_unique < 2);
            }
        }
    }

    #[test]
    fn clean_is_idempotent(records in arb_records()) {
        if let Ok((series, _)) = clean("X", &records) {
            let (again, report) = clean("X", &series_as_records(&series)).unwrap();
            prop_assert_eq!(series, again);
            prop_assert_eq!(report.rows_dropped_nan, 0);
            prop_assert_eq!(report.rows_dropped_duplicate_date, 0);
            prop_assert_eq!(report.rows_date_reformatted, 0);
        }
    }

    #[test]
    fn normalize_round_trips_and_preserves_order(
        values in prop::collection::vec(1.0f64..10_000.0, 2..200)
    ) {
        if let Ok(params) = fit_normalizer(&values) {
            let normalized = normalize(&values, &params);
            // round trip
            let back = denormalize(&normalized, &params);
            for (orig, restored) in values.iter().zip(&back) {
                prop_assert!(((orig - restored) / orig).abs() < 1e-9);
            }
            // fitting set lands in [-1, 1] with ~zero mean
            prop_assert!(normalized.iter().all(|v| (-1.0..=1.0).contains(v)));
            let mean = normalized.iter().sum::<f64>() / normalized.len() as f64;
            prop_assert!(mean.abs() < 1e-12, "normalized mean {}", mean);
            // strictly increasing map
            for (a, b) in values.iter().zip(values.iter().skip(1)) {
                let (na, nb) = (normalize(&[*a], &params)[0], normalize(&[*b], &params)[0]);
                if a < b {
                    prop_assert!(na < nb);
                } else if a > b {
                    prop_assert!(na > nb);
                }
            }
        }
    }

    #[test]
    fn windows_flatten_back_to_series(
        values in prop::collection::vec(-100.0f64..100.0, 3..80),
        window in 1usize..10,
    ) {
        let dates: Vec<NaiveDate> = (0..values.len() as i64).map(day).collect();
        if window < values.len() {
            let data = make_windows(&values, &dates, window).unwrap();
            prop_assert_eq!(data.n_samples(), values.len() - window);
            prop_assert_eq!(&data.targets[..], &values[window..]);
            for (i, row) in data.features.iter().enumerate() {
                prop_assert_eq!(&row[..], &values[i..i + window]);
            }
        } else {
            prop_assert!(make_windows(&values, &dates, window).is_err());
        }
    }

    #[test]
    fn rolling_split_tests_tile_the_tail(
        n in 2usize..400,
        initial in 1usize..100,
        horizon in 1usize..40,
    ) {
        match rolling_splits(n, initial, horizon) {
            Ok(splits) => {
                prop_assert!(initial + horizon <= n);
                prop_assert!(!splits.is_empty());
                let mut expected_start = initial;
                for split in &splits {
                    prop_assert_eq!(split.train.start, 0);
                    prop_assert_eq!(split.train.end, split.test.start);
                    prop_assert_eq!(split.test.start, expected_start);
                    prop_assert_eq!(split.test.len(), horizon);
                    prop_assert!(split.test.end <= n);
                    expected_start = split.test.end;
                }
                // no room for another full test window
                prop_assert!(expected_start + horizon > n);
            }
            Err(_) => prop_assert!(initial + horizon > n || initial == 0),
        }
    }
}
