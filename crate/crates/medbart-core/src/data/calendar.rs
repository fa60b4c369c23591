//! Proleptic-Gregorian civil dates without a clock or timezone.

use core::fmt;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Weekday {
    Mon,
    Tue,
    Wed,
    Thu,
    Fri,
    Sat,
    Sun,
}

impl Weekday {
    pub const ALL: [Weekday; 7] = [
        Weekday::Mon,
        Weekday::Tue,
        Weekday::Wed,
        Weekday::Thu,
        Weekday::Fri,
        Weekday::Sat,
        Weekday::Sun,
    ];

    /// 0 = Monday .. 6 = Sunday.
    pub fn code(self) -> u8 {
        match self {
            Weekday::Mon => 0,
            Weekday::Tue => 1,
            Weekday::Wed => 2,
            Weekday::Thu => 3,
            Weekday::Fri => 4,
            Weekday::Sat => 5,
            Weekday::Sun => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Weekday> {
        Weekday::ALL.get(code as usize).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Weekday::Mon => "mon",
            Weekday::Tue => "tue",
            Weekday::Wed => "wed",
            Weekday::Thu => "thu",
            Weekday::Fri => "fri",
            Weekday::Sat => "sat",
            Weekday::Sun => "sun",
        }
    }
}

/// Calendar date (year, month 1-12, day 1-31).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Date {
    pub year: i32,
    pub month: u32,
    pub day: u32,
}

impl Date {
    /// Panics on out-of-range month/day; use `checked_new` for user input.
    pub fn new(year: i32, month: u32, day: u32) -> Date {
        Self::checked_new(year, month, day).expect("invalid calendar date")
    }

    pub fn checked_new(year: i32, month: u32, day: u32) -> Option<Date> {
        if !(1..=12).contains(&month) || day == 0 || day > days_in_month(year, month) {
            return None;
        }
        Some(Date { year, month, day })
    }

    /// Days since 1970-01-01 (may be negative).
    pub fn to_epoch_days(self) -> i64 {
        days_from_civil(self.year, self.month, self.day)
    }

    pub fn from_epoch_days(days: i64) -> Date {
        let (year, month, day) = civil_from_days(days);
        Date { year, month, day }
    }

    pub fn weekday(self) -> Weekday {
        // 1970-01-01 was a Thursday (code 3).
        let code = (self.to_epoch_days() + 3).rem_euclid(7) as u8;
        Weekday::from_code(code).unwrap()
    }

    /// 1-based ordinal day within the year.
    pub fn day_of_year(self) -> u32 {
        (self.to_epoch_days() - days_from_civil(self.year, 1, 1)) as u32 + 1
    }

    /// 0-based index within a May 1 .. Oct 31 season.
    pub fn season_day_index(self) -> u32 {
        (self.to_epoch_days() - days_from_civil(self.year, 5, 1)).max(0) as u32
    }

    pub fn succ(self) -> Date {
        Date::from_epoch_days(self.to_epoch_days() + 1)
    }
}

impl fmt::Display for Date {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year, self.month, self.day)
    }
}

pub fn is_leap_year(y: i32) -> bool {
    (y % 4 == 0 && y % 100 != 0) || y % 400 == 0
}

pub fn days_in_month(y: i32, m: u32) -> u32 {
    match m {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            if is_leap_year(y) {
                29
            } else {
                28
            }
        }
        _ => 0,
    }
}

// Civil-from-days and days-from-civil follow the classic era-based
// formulation over 400-year cycles.
fn days_from_civil(y: i32, m: u32, d: u32) -> i64 {
    let y = i64::from(y) - i64::from(m <= 2);
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400; // [0, 399]
    let mp = i64::from((m + 9) % 12); // March = 0
    let doy = (153 * mp + 2) / 5 + i64::from(d) - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn civil_from_days(z: i64) -> (i32, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = z - era * 146_097; // [0, 146096]
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    ((y + i64::from(m <= 2)) as i32, m, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Datelike;

    #[test]
    fn epoch_roundtrip() {
        for days in [-1_000_000i64, -1, 0, 1, 365, 10_957, 1_000_000] {
            let d = Date::from_epoch_days(days);
            assert_eq!(d.to_epoch_days(), days);
        }
    }

    #[test]
    fn known_dates() {
        assert_eq!(Date::new(1970, 1, 1).to_epoch_days(), 0);
        assert_eq!(Date::new(1970, 1, 1).weekday(), Weekday::Thu);
        assert_eq!(Date::new(2005, 5, 1).day_of_year(), 121);
        assert_eq!(Date::new(2008, 5, 1).day_of_year(), 122); // leap year
        assert_eq!(Date::new(2016, 10, 31).day_of_year(), 305);
    }

    #[test]
    fn checked_new_rejects_bad_dates() {
        assert!(Date::checked_new(2021, 2, 29).is_none());
        assert!(Date::checked_new(2020, 2, 29).is_some());
        assert!(Date::checked_new(2021, 13, 1).is_none());
        assert!(Date::checked_new(2021, 6, 31).is_none());
    }

    /// Calendar oracle: derived weekday/doy agree with chrono on 1000
    /// pseudo-random dates.
    #[test]
    fn agrees_with_chrono_oracle() {
        let mut state = 0x1234_5678_u64;
        for _ in 0..1000 {
            state = crate::rng::splitmix64(state);
            let days = (state % 40_000) as i64 - 5_000; // ~1956..2079
            let d = Date::from_epoch_days(days);
            let oracle = chrono::NaiveDate::from_num_days_from_ce_opt(
                719_163 + days as i32, // chrono day 1 = 0001-01-01
            )
            .unwrap();
            assert_eq!(d.year, oracle.year());
            assert_eq!(d.month, oracle.month());
            assert_eq!(d.day, oracle.day());
            assert_eq!(u32::from(d.weekday().code()), oracle.weekday().num_days_from_monday());
            assert_eq!(d.day_of_year(), oracle.ordinal());
        }
    }
}
