//! Seeded synthetic price series for tests and demos.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::PriceSeries;
use crate::rng::seeded_rng;

// Box-Muller standard normal draw.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `n` consecutive business days (Mon-Fri) starting at or after `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut days = Vec::with_capacity(n);
    let mut d = start;
    while days.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            days.push(d);
        }
        d = d.succ_opt().expect("date overflow");
    }
    days
}

/// Sine wave around a level plus Gaussian noise.
pub fn sine_series(
    name: &str,
    n: usize,
    start: NaiveDate,
    level: f64,
    amplitude: f64,
    period: f64,
    noise_sd: f64,
    seed: u64,
) -> PriceSeries {
    let mut rng = seeded_rng(seed);
    let dates = business_days(start, n);
    let obs = dates
        .into_iter()
        .enumerate()
        .map(|(t, date)| {
            let signal = level + amplitude * (2.0 * std::f64::consts::PI * t as f64 / period).sin();
            let noise = gauss(&mut rng) * noise_sd;
            (date, signal + noise)
        })
        .collect();
    PriceSeries::new(name, obs).expect("synthetic series is valid")
}

/// Two-regime series: a calm level before `shift_at`, then a jump to a
/// higher level with a different oscillation. The kind of break a model
/// trained only on the first regime cannot anticipate.
pub fn regime_shift_series(name: &str, n: usize, shift_at: usize, seed: u64) -> PriceSeries {
    let mut rng = seeded_rng(seed);
    let dates = business_days(NaiveDate::from_ymd_opt(2018, 1, 2).expect("valid date"), n);
    let obs = dates
        .into_iter()
        .enumerate()
        .map(|(t, date)| {
            let x = t as f64;
            let value = if t < shift_at {
                100.0 + 8.0 * (2.0 * std::f64::consts::PI * x / 60.0).sin()
            } else {
                150.0 + 12.0 * (2.0 * std::f64::consts::PI * x / 40.0 + 1.0).sin()
            };
            let noise = gauss(&mut rng) * 0.8;
            (date, value + noise)
        })
        .collect();
    PriceSeries::new(name, obs).expect("synthetic series is valid")
}
