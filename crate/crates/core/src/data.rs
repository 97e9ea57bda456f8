//! Hourly records, the day-ahead feature vector, normalization, dataset
//! splitting and a synthetic load generator.
//!
//! Feature layout for a target day `D+1` (see [`layout`]):
//!
//! | slice      | content                                                 |
//! |------------|---------------------------------------------------------|
//! | `0..24`    | load of day `D`, hours 0-23                             |
//! | `24..48`   | load of day `D-6` (same weekday as `D+1`, one week back) |
//! | `48..50`   | mean actual temperature of day `D`, and its square      |
//! | `50..122`  | forecast temperature of `D+1` per hour, then squares, then cubes |
//! | `122..126` | season one-hot (winter, spring, summer, autumn)         |
//! | `126..129` | holiday, weekend, daylight saving flags                 |
//! | `129..133` | yearly sinusoids: hour-of-year sin/cos, day-of-year sin/cos |

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::HOURS_PER_DAY;

pub const FEATURE_DIM: usize = 133;
/// Longest run of missing hours that is filled by interpolation.
pub const MAX_INTERPOLATED_GAP: i64 = 3;

/// Index map of the feature vector.
pub mod layout {
    use core::ops::Range;

    pub const PREV_DAY_LOAD: Range<usize> = 0..24;
    pub const PREV_WEEK_LOAD: Range<usize> = 24..48;
    pub const PAST_TEMP: Range<usize> = 48..50;
    pub const FORECAST_TEMP: Range<usize> = 50..74;
    pub const FORECAST_TEMP_SQ: Range<usize> = 74..98;
    pub const FORECAST_TEMP_CUBE: Range<usize> = 98..122;
    pub const SEASON: Range<usize> = 122..126;
    pub const HOLIDAY: usize = 126;
    pub const WEEKEND: usize = 127;
    pub const DST: usize = 128;
    pub const YEAR_SINUSOIDS: Range<usize> = 129..133;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(NaiveDateTime),
    #[error("timestamp {0} is earlier than its predecessor")]
    NonMonotone(NaiveDateTime),
    #[error("timestamp {0} is not on the hour")]
    NotHourly(NaiveDateTime),
    #[error("gap of {missing} hours after {after} exceeds the interpolation limit")]
    Gap { after: NaiveDateTime, missing: i64 },
    #[error("negative load {load} at {at}")]
    NegativeLoad { at: NaiveDateTime, load: f64 },
    #[error("insufficient history for target day {0}")]
    InsufficientHistory(NaiveDate),
    #[error("channel {0} has zero standard deviation")]
    ZeroStd(usize),
    #[error("need at least 10 examples, found {0}")]
    TooFewExamples(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyRecord {
    pub timestamp: NaiveDateTime,
    pub load: f64,
    pub temp_actual: f64,
    pub temp_forecast: f64,
    pub is_holiday: bool,
}

/// Features of one target day and its 24 actual loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub date: NaiveDate,
    pub x: Vec<f64>,
    pub y_train: Vec<f64>,
}

/// Check ordering and spacing, and fill gaps of at most
/// [`MAX_INTERPOLATED_GAP`] hours by linear interpolation.
pub fn fill_gaps(records: &[HourlyRecord]) -> Result<Vec<HourlyRecord>, DataError> {
    let mut out: Vec<HourlyRecord> = Vec::with_capacity(records.len());
    for r in records {
        if r.timestamp.minute() != 0 || r.timestamp.second() != 0 || r.timestamp.nanosecond() != 0 {
            return Err(DataError::NotHourly(r.timestamp));
        }
        if r.load < 0.0 {
            return Err(DataError::NegativeLoad {
                at: r.timestamp,
                load: r.load,
            });
        }
        if let Some(prev) = out.last().copied() {
            let step = (r.timestamp - prev.timestamp).num_hours();
            if step == 0 {
                return Err(DataError::DuplicateTimestamp(r.timestamp));
            }
            if step < 0 {
                return Err(DataError::NonMonotone(r.timestamp));
            }
            let missing = step - 1;
            if missing > MAX_INTERPOLATED_GAP {
                return Err(DataError::Gap {
                    after: prev.timestamp,
                    missing,
                });
            }
            for k in 1..step {
                let w = k as f64 / step as f64;
                let lerp = |a: f64, b: f64| a + w * (b - a);
                out.push(HourlyRecord {
                    timestamp: prev.timestamp + Duration::hours(k),
                    load: lerp(prev.load, r.load),
                    temp_actual: lerp(prev.temp_actual, r.temp_actual),
                    temp_forecast: lerp(prev.temp_forecast, r.temp_forecast),
                    is_holiday: prev.is_holiday && r.is_holiday,
                });
            }
        }
        out.push(*r);
    }
    Ok(out)
}

/// Meteorological season of `date`: 0 winter (Dec-Feb), 1 spring, 2 summer,
/// 3 autumn.
pub fn season(date: NaiveDate) -> usize {
    (date.month() as usize % 12) / 3
}

fn nth_weekday(year: i32, month: u32, weekday: Weekday, n: u8) -> NaiveDate {
    NaiveDate::from_weekday_of_month_opt(year, month, weekday, n).expect("valid calendar date")
}

/// US rule: from the second Sunday of March up to the first Sunday of
/// November.
pub fn is_daylight_saving(date: NaiveDate) -> bool {
    let start = nth_weekday(date.year(), 3, Weekday::Sun, 2);
    let end = nth_weekday(date.year(), 11, Weekday::Sun, 1);
    date >= start && date < end
}

pub fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Feature vector for the day starting at `records[target]`, which must be
/// hour 0 with a full week of history and a full target day in `records`.
pub fn build_features(records: &[HourlyRecord], target: usize) -> Result<TrainingExample, DataError> {
    let day = HOURS_PER_DAY;
    let date = records
        .get(target)
        .map(|r| r.timestamp.date())
        .ok_or(DataError::Dimension {
            expected: target + day,
            found: records.len(),
        })?;
    if target < 7 * day || records[target].timestamp.hour() != 0 || target + day > records.len() {
        return Err(DataError::InsufficientHistory(date));
    }
    // hourly contiguity of the window
    let first = records[target - 7 * day].timestamp;
    if records[target + day - 1].timestamp - first != Duration::hours(8 * day as i64 - 1) {
        return Err(DataError::InsufficientHistory(date));
    }

    let mut x = Vec::with_capacity(FEATURE_DIM);
    let prev_day = &records[target - day..target];
    x.extend(prev_day.iter().map(|r| r.load));
    x.extend(records[target - 7 * day..target - 6 * day].iter().map(|r| r.load));
    let t_bar = prev_day.iter().map(|r| r.temp_actual).sum::<f64>() / day as f64;
    x.push(t_bar);
    x.push(t_bar * t_bar);
    let next = &records[target..target + day];
    x.extend(next.iter().map(|r| r.temp_forecast));
    x.extend(next.iter().map(|r| r.temp_forecast * r.temp_forecast));
    x.extend(next.iter().map(|r| r.temp_forecast * r.temp_forecast * r.temp_forecast));
    let mut one_hot = [0.0; 4];
    one_hot[season(date)] = 1.0;
    x.extend(one_hot);
    x.push(if next[0].is_holiday { 1.0 } else { 0.0 });
    x.push(if is_weekend(date) { 1.0 } else { 0.0 });
    x.push(if is_daylight_saving(date) { 1.0 } else { 0.0 });
    let d_year = date.ordinal0() as f64;
    let h_year = d_year * day as f64 + next[0].timestamp.hour() as f64;
    let hour_phase = TAU * h_year / (365.0 * day as f64);
    let day_phase = TAU * d_year / 365.0;
    x.extend([
        libm::sin(hour_phase),
        libm::cos(hour_phase),
        libm::sin(day_phase),
        libm::cos(day_phase),
    ]);
    debug_assert_eq!(x.len(), FEATURE_DIM);
    Ok(TrainingExample {
        date,
        x,
        y_train: next.iter().map(|r| r.load).collect(),
    })
}

/// One example per complete day with a week of history, in date order.
pub fn build_dataset(records: &[HourlyRecord]) -> Result<Vec<TrainingExample>, DataError> {
    let start = records
        .iter()
        .position(|r| r.timestamp.hour() == 0)
        .unwrap_or(records.len());
    let mut out = Vec::new();
    let mut target = start + 7 * HOURS_PER_DAY;
    while target + HOURS_PER_DAY <= records.len() {
        out.push(build_features(records, target)?);
        target += HOURS_PER_DAY;
    }
    Ok(out)
}

/// Mean and population standard deviation of `values`.
pub fn channel_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

pub fn normalize(value: f64, mean: f64, std: f64) -> f64 {
    (value - mean) / std
}

pub fn denormalize(value: f64, mean: f64, std: f64) -> f64 {
    value * std + mean
}

/// Per-channel feature statistics and the pooled load statistics, fitted on
/// the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub load_mean: f64,
    pub load_std: f64,
}

impl NormStats {
    pub fn fit(train: &[TrainingExample]) -> Result<Self, DataError> {
        let dim = train.first().map(|e| e.x.len()).unwrap_or(0);
        if train.is_empty() {
            return Err(DataError::TooFewExamples(0));
        }
        let mut feature_mean = Vec::with_capacity(dim);
        let mut feature_std = Vec::with_capacity(dim);
        let mut column = vec![0.0; train.len()];
        for j in 0..dim {
            for (c, e) in column.iter_mut().zip(train) {
                *c = e.x[j];
            }
            let (m, s) = channel_stats(&column);
            if s <= 0.0 {
                return Err(DataError::ZeroStd(j));
            }
            feature_mean.push(m);
            feature_std.push(s);
        }
        let loads: Vec<f64> = train.iter().flat_map(|e| e.y_train.iter().copied()).collect();
        let (load_mean, load_std) = channel_stats(&loads);
        if load_std <= 0.0 {
            return Err(DataError::ZeroStd(dim));
        }
        Ok(NormStats {
            feature_mean,
            feature_std,
            load_mean,
            load_std,
        })
    }

    pub fn normalize_features(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(v, (m, s))| normalize(*v, *m, *s))
            .collect()
    }

    pub fn normalize_load(&self, y: f64) -> f64 {
        normalize(y, self.load_mean, self.load_std)
    }

    pub fn denormalize_load(&self, y: f64) -> f64 {
        denormalize(y, self.load_mean, self.load_std)
    }

    /// Variance in MW² of a normalized-unit variance.
    pub fn denormalize_variance(&self, sigma2: f64) -> f64 {
        sigma2 * self.load_std * self.load_std
    }

    pub fn normalize_example(&self, e: &TrainingExample) -> TrainingExample {
        TrainingExample {
            date: e.date,
            x: self.normalize_features(&e.x),
            y_train: e.y_train.iter().map(|y| self.normalize_load(*y)).collect(),
        }
    }
}

/// Positions of the examples in each partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Chronological 80/20 into a training pool and a test set; the pool is
/// shuffled with `seed` and divided 80/20 into training and validation.
pub fn split_indices(n: usize, seed: u64) -> Result<SplitIndices, DataError> {
    if n < 10 {
        return Err(DataError::TooFewExamples(n));
    }
    let pool = n * 4 / 5;
    let mut order: Vec<usize> = (0..pool).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = pool * 4 / 5;
    Ok(SplitIndices {
        validation: order[n_train..].to_vec(),
        train: {
            order.truncate(n_train);
            order
        },
        test: (pool..n).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

pub fn split<T: Clone>(examples: &[T], seed: u64) -> Result<Split<T>, DataError> {
    let idx = split_indices(examples.len(), seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| examples[i].clone()).collect();
    Ok(Split {
        train: pick(&idx.train),
        validation: pick(&idx.validation),
        test: pick(&idx.test),
    })
}

/// Shape of the synthetic load series. Every amplitude is in MW unless noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub start_year: i32,
    pub base_mw: f64,
    /// Fraction of base; peaks in mid-winter and mid-summer.
    pub seasonal_amp: f64,
    /// Fraction of base removed on weekend days.
    pub weekend_dip: f64,
    /// Fractions of base for the first two daily harmonics.
    pub daily_amp: [f64; 2],
    /// MW per °C² of distance from the comfort temperature.
    pub temp_coupling: f64,
    pub comfort_temp: f64,
    /// Fraction of base removed on holidays.
    pub holiday_dip: f64,
    /// Stationary standard deviation of the AR(1) load noise.
    pub noise_std: f64,
    pub noise_ar: f64,
    pub temp_mean: f64,
    pub temp_seasonal_amp: f64,
    pub temp_daily_amp: f64,
    pub temp_noise_std: f64,
    /// Standard deviation of the day-ahead temperature forecast error.
    pub forecast_err_std: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            start_year: 2012,
            base_mw: 1000.0,
            seasonal_amp: 0.03,
            weekend_dip: 0.07,
            daily_amp: [0.09, 0.05],
            temp_coupling: 0.5,
            comfort_temp: 16.0,
            holiday_dip: 0.07,
            noise_std: 30.0,
            noise_ar: 0.9,
            temp_mean: 12.0,
            temp_seasonal_amp: 12.0,
            temp_daily_amp: 4.0,
            temp_noise_std: 2.5,
            forecast_err_std: 1.5,
        }
    }
}

impl SynthProfile {
    /// Only the calendar shape: weekly and daily harmonics on a flat base.
    pub fn calendar_only(self) -> Self {
        SynthProfile {
            seasonal_amp: 0.0,
            temp_coupling: 0.0,
            holiday_dip: 0.0,
            noise_std: 0.0,
            ..self
        }
    }
}

/// New Year, Memorial Day, Independence Day, Labor Day, Thanksgiving and
/// Christmas.
pub fn is_holiday(date: NaiveDate) -> bool {
    let (y, m, d) = (date.year(), date.month(), date.day());
    let last_monday_may = {
        let mut last = nth_weekday(y, 5, Weekday::Mon, 1);
        while (last + Duration::days(7)).month() == 5 {
            last += Duration::days(7);
        }
        last
    };
    (m == 1 && d == 1)
        || (m == 7 && d == 4)
        || (m == 12 && d == 25)
        || date == last_monday_may
        || date == nth_weekday(y, 9, Weekday::Mon, 1)
        || date == nth_weekday(y, 11, Weekday::Thu, 4)
}

/// Hourly synthetic series of `n_years` calendar years starting on 1 January
/// of `profile.start_year`.
///
/// Load is a flat base shaped by seasonal, weekly and daily factors, plus a
/// quadratic temperature response, holiday dips and AR(1) Gaussian noise.
/// Temperatures follow a seasonal and diurnal sinusoid with AR(1) weather
/// noise; the forecast adds independent Gaussian error.
pub fn synth_generate(seed: u64, n_years: u32, profile: &SynthProfile) -> Vec<HourlyRecord> {
    let p = profile;
    let start = NaiveDate::from_ymd_opt(p.start_year, 1, 1).expect("valid start year");
    let end = NaiveDate::from_ymd_opt(p.start_year + n_years as i32, 1, 1).expect("valid end year");
    let hours = (end - start).num_hours() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let innov = libm::sqrt(1.0 - p.noise_ar * p.noise_ar);
    let (mut load_noise, mut temp_noise) = (0.0, 0.0);
    let t0 = start.and_hms_opt(0, 0, 0).expect("midnight");
    let mut out = Vec::with_capacity(hours);
    for k in 0..hours {
        let ts = t0 + Duration::hours(k as i64);
        let date = ts.date();
        let hour = ts.hour() as f64;
        let year_phase = TAU * date.ordinal0() as f64 / 365.25;

        let z1 = std_normal.sample(&mut rng);
        let z2 = std_normal.sample(&mut rng);
        let z3 = std_normal.sample(&mut rng);
        temp_noise = 0.95 * temp_noise + libm::sqrt(1.0 - 0.95 * 0.95) * z1;
        load_noise = p.noise_ar * load_noise + innov * z2;

        let temp = p.temp_mean - p.temp_seasonal_amp * libm::cos(year_phase - TAU * 15.0 / 365.25)
            - p.temp_daily_amp * libm::cos(TAU * (hour - 3.0) / 24.0)
            + p.temp_noise_std * temp_noise;
        let temp_forecast = temp + p.forecast_err_std * z3;

        let day_phase = TAU * hour / 24.0;
        let daily = -p.daily_amp[0] * libm::cos(day_phase - TAU * 2.0 / 24.0)
            - p.daily_amp[1] * libm::cos(2.0 * day_phase - TAU * 2.0 / 24.0);
        let weekend = if is_weekend(date) { -p.weekend_dip } else { 0.0 };
        let seasonal = p.seasonal_amp * libm::cos(2.0 * year_phase);
        let holiday = is_holiday(date);
        let holiday_term = if holiday { -p.holiday_dip } else { 0.0 };
        let dt = temp - p.comfort_temp;
        let load = p.base_mw * (1.0 + seasonal + weekend + daily + holiday_term)
            + p.temp_coupling * dt * dt
            + p.noise_std * load_noise;
        out.push(HourlyRecord {
            timestamp: ts,
            load: load.max(0.0),
            temp_actual: temp,
            temp_forecast,
            is_holiday: holiday,
        });
    }
    out
}
