//! Daily time-series dataset: one row per day with outcome count, exposure,
//! mediator, and calendar/meteorology confounders. Includes validation and a
//! deterministic synthetic-data generator for warm-season series.

pub mod calendar;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng;
pub use calendar::{Date, Weekday};

/// One observation day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub date: Date,
    /// Outcome count (e.g. daily ED visits). Kept signed so that
    /// validation, not the type system, reports bad values.
    pub y: i64,
    /// Exposure (daily max temperature, degC).
    pub x: f64,
    /// Mediator (daily 8-hr max ozone, ppm).
    pub m: f64,
    /// Specific humidity, g/kg.
    pub humidity: f64,
    pub weekday: Weekday,
    pub holiday: bool,
    pub year: i32,
    pub doy: u32,
}

impl DayRecord {
    /// Build a record, deriving `weekday`, `year`, and `doy` from the date.
    pub fn new(date: Date, y: i64, x: f64, m: f64, humidity: f64, holiday: bool) -> Self {
        DayRecord {
            date,
            y,
            x,
            m,
            humidity,
            weekday: date.weekday(),
            holiday,
            year: date.year,
            doy: date.day_of_year(),
        }
    }
}

/// Ordered daily series; rows strictly increasing in date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    pub rows: Vec<DayRecord>,
}

impl TimeSeriesDataset {
    /// Sorts rows by date and rejects duplicate dates.
    pub fn from_rows(mut rows: Vec<DayRecord>) -> Result<Self> {
        rows.sort_by_key(|r| r.date);
        for w in rows.windows(2) {
            if w[0].date == w[1].date {
                return Err(Error::Validation(format!(
                    "duplicate date {}",
                    w[0].date
                )));
            }
        }
        Ok(TimeSeriesDataset { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn exposures(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.x).collect()
    }

    pub fn mediators(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.m).collect()
    }

    pub fn counts(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y as f64).collect()
    }

    /// Distinct years in row order of first appearance, sorted.
    pub fn year_levels(&self) -> Vec<i32> {
        let mut years: Vec<i32> = self.rows.iter().map(|r| r.year).collect();
        years.sort_unstable();
        years.dedup();
        years
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    /// Zero-based index into the dataset rows.
    pub row: usize,
    pub field: String,
    pub message: String,
}

/// Outcome of `validate`; the dataset is accepted iff `errors` is empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<ValidationIssue>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_accepted(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, row: usize, field: &str, message: String) {
        self.errors.push(ValidationIssue {
            row,
            field: field.into(),
            message,
        });
    }
}

/// The one tolerated jump between adjacent rows: the off-season boundary
/// of a warm-season (May-October) series.
fn is_season_boundary(prev: Date, next: Date) -> bool {
    prev.month == 10
        && prev.day == 31
        && next == Date::new(prev.year + 1, 5, 1)
}

/// Check every dataset invariant; failures are reported, never panicked.
///
/// Missing days are rejected rather than imputed: adjacent rows must be
/// consecutive calendar days, except across the May-October off-season
/// gap. Series with other windows must be pre-filled upstream.
pub fn validate(ds: &TimeSeriesDataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut prev: Option<Date> = None;
    for (i, r) in ds.rows.iter().enumerate() {
        if let Some(p) = prev {
            if r.date <= p {
                report.error(
                    i,
                    "date",
                    format!("dates not strictly increasing at {}", r.date),
                );
            } else if r.date != p.succ() && !is_season_boundary(p, r.date) {
                report.error(
                    i,
                    "date",
                    format!("missing days between {} and {}", p, r.date),
                );
            }
        }
        prev = Some(r.date);
        if r.y < 0 {
            report.error(i, "y", format!("negative count {}", r.y));
        }
        if !r.x.is_finite() {
            report.error(i, "x", "non-finite exposure".into());
        }
        if !r.m.is_finite() {
            report.error(i, "m", "non-finite mediator".into());
        } else if r.m < 0.0 {
            report.error(i, "m", format!("negative mediator {}", r.m));
        }
        if !r.humidity.is_finite() {
            report.error(i, "humidity", "non-finite humidity".into());
        }
        if r.doy != r.date.day_of_year() {
            report.error(
                i,
                "doy",
                format!("doy {} inconsistent with date {}", r.doy, r.date),
            );
        }
        if r.weekday != r.date.weekday() {
            report.error(i, "weekday", format!("weekday inconsistent with {}", r.date));
        }
        if r.year != r.date.year {
            report.error(i, "year", format!("year inconsistent with {}", r.date));
        }
    }
    if ds.len() < 100 {
        report.warnings.push(format!(
            "only {} days; df=6 splines need a longer series",
            ds.len()
        ));
    }
    report
}

/// Tuning knobs for the synthetic warm-season generator. Defaults target
/// summary moments typical of a 12-year urban warm-season series: exposure
/// mean 29.01 degC (SD 4.12), humidity 9.33 g/kg (SD 1.50), mediator
/// 0.048 ppm (SD 0.009).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub temp_mean: f64,
    pub temp_sd: f64,
    /// Amplitude of the within-season sinusoid on temperature, degC.
    pub seasonal_amplitude: f64,
    pub humidity_mean: f64,
    pub humidity_sd: f64,
    /// Correlation between exposure and humidity innovations.
    pub exposure_humidity_corr: f64,
    pub ozone_mean: f64,
    pub ozone_sd: f64,
    /// Loading of standardized temperature on standardized ozone.
    pub ozone_temp_loading: f64,
    /// Quadratic temperature term on standardized ozone.
    pub ozone_temp_curvature: f64,
    /// Residual SD fraction of ozone (of `ozone_sd`).
    pub ozone_noise_frac: f64,
    /// log of baseline daily count.
    pub count_log_mean: f64,
    /// log-RR per degC.
    pub count_temp_coef: f64,
    /// log-RR per ppm mediator.
    pub count_ozone_coef: f64,
    /// Negative-binomial size for the generated counts.
    pub count_nb_size: f64,
    pub start_year: i32,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            temp_mean: 29.01,
            temp_sd: 4.12,
            seasonal_amplitude: 6.0,
            humidity_mean: 9.33,
            humidity_sd: 1.50,
            exposure_humidity_corr: 0.4,
            ozone_mean: 0.048,
            ozone_sd: 0.009,
            ozone_temp_loading: 0.70,
            ozone_temp_curvature: 0.12,
            ozone_noise_frac: 0.65,
            count_log_mean: 7.34, // exp ~ 1541 daily visits
            count_temp_coef: 0.002,
            count_ozone_coef: 1.2,
            count_nb_size: 400.0,
            start_year: 2005,
        }
    }
}

const SEASON_DAYS: u32 = 184; // May 1 .. Oct 31

fn warm_season_dates(t: usize, start_year: i32) -> Vec<Date> {
    let mut dates = Vec::with_capacity(t);
    let mut year = start_year;
    'outer: loop {
        let mut d = Date::new(year, 5, 1);
        for _ in 0..SEASON_DAYS {
            dates.push(d);
            if dates.len() == t {
                break 'outer;
            }
            d = d.succ();
        }
        year += 1;
    }
    dates
}

/// US-style fixed holidays inside the warm season: last Monday of May,
/// July 4, first Monday of September.
fn synth_holiday(date: Date) -> bool {
    match date.month {
        5 => date.weekday() == Weekday::Mon && date.day + 7 > 31,
        7 => date.day == 4,
        9 => date.weekday() == Weekday::Mon && date.day <= 7,
        _ => false,
    }
}

/// Deterministic synthetic dataset of `t` warm-season days.
pub fn synthesize_dataset(t: usize, seed: u64, params: &SynthParams) -> Result<TimeSeriesDataset> {
    if t == 0 {
        return Err(Error::argument("dataset length must be positive"));
    }
    let p = params;
    if p.temp_sd <= 0.0 || p.humidity_sd <= 0.0 || p.ozone_sd <= 0.0 {
        return Err(Error::argument("noise SDs must be positive"));
    }
    if !(-1.0..=1.0).contains(&p.exposure_humidity_corr) {
        return Err(Error::argument("exposure-humidity correlation outside [-1, 1]"));
    }
    let dates = warm_season_dates(t, p.start_year);
    let mut rng = rng::substream(seed, 0xDA7A);

    // Seasonal sinusoid over the 184-day season, centered so it adds no mean.
    // Mean of sin over [0, pi] is 2/pi; variance is 1/2 - 4/pi^2.
    let seasonal_mean = 2.0 / core::f64::consts::PI;
    let seasonal_var = 0.5 - 4.0 / (core::f64::consts::PI * core::f64::consts::PI);
    let amp = p.seasonal_amplitude;
    let resid_var = (p.temp_sd * p.temp_sd - amp * amp * seasonal_var).max(0.01);
    let resid_sd = math::sqrt(resid_var);

    let mut rows = Vec::with_capacity(t);
    for date in dates {
        let season_pos = (date.season_day_index() as f64 + 0.5) / SEASON_DAYS as f64;
        let seasonal = libm::sin(core::f64::consts::PI * season_pos) - seasonal_mean;
        let zt: f64 = rng.sample(StandardNormal);
        let x = p.temp_mean + amp * seasonal + resid_sd * zt;
        let zx = (x - p.temp_mean) / p.temp_sd;

        let zh_indep: f64 = rng.sample(StandardNormal);
        let rho = p.exposure_humidity_corr;
        let zh = rho * zx + math::sqrt((1.0 - rho * rho).max(0.0)) * zh_indep;
        let humidity = p.humidity_mean + p.humidity_sd * zh;

        let loading2 = p.ozone_temp_loading * p.ozone_temp_loading
            + p.ozone_temp_curvature * p.ozone_temp_curvature * 2.0
            + p.ozone_noise_frac * p.ozone_noise_frac;
        let scale = 1.0 / math::sqrt(loading2.max(1e-12));
        let zo: f64 = rng.sample(StandardNormal);
        let m_raw = p.ozone_temp_loading * zx
            + p.ozone_temp_curvature * (zx * zx - 1.0)
            + p.ozone_noise_frac * zo;
        let m = (p.ozone_mean + p.ozone_sd * scale * m_raw).max(1e-4);

        let holiday = synth_holiday(date);
        let weekday = date.weekday();
        let weekday_effect = match weekday {
            Weekday::Sat => -0.03,
            Weekday::Sun => -0.05,
            Weekday::Mon => 0.02,
            _ => 0.0,
        };
        let log_mu = p.count_log_mean
            + p.count_temp_coef * (x - p.temp_mean)
            + p.count_ozone_coef * (m - p.ozone_mean)
            + weekday_effect
            + if holiday { -0.04 } else { 0.0 };
        let mu = math::exp(log_mu);
        let y = sample_negative_binomial(&mut rng, mu, p.count_nb_size)?;
        rows.push(DayRecord::new(date, y as i64, x, m, humidity, holiday));
    }
    TimeSeriesDataset::from_rows(rows)
}

/// Mean/size-parameterized negative binomial via the gamma-Poisson mixture;
/// infinite size degenerates to Poisson.
pub fn sample_negative_binomial<R: Rng + ?Sized>(rng: &mut R, mean: f64, size: f64) -> Result<u64> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::numeric(format!("count mean {mean} out of range")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let lambda = if size.is_finite() {
        if size <= 0.0 {
            return Err(Error::argument("negative-binomial size must be positive"));
        }
        let gamma = Gamma::new(size, mean / size)
            .map_err(|e| Error::numeric(format!("gamma sampler: {e}")))?;
        gamma.sample(rng)
    } else {
        mean
    };
    if lambda == 0.0 {
        return Ok(0);
    }
    let pois =
        Poisson::new(lambda).map_err(|e| Error::numeric(format!("poisson sampler: {e}")))?;
    Ok(pois.sample(rng) as u64)
}
