//! Simulation clock. Times are hours since midnight of the epoch day.

use chrono::Weekday;
use serde::{Deserialize, Serialize};

pub const HOURS_PER_DAY: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DayKind {
    /// Monday = 0 … Friday = 4.
    Weekday(usize),
    Weekend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    /// Day of week of the epoch day; 0 = Monday.
    pub epoch_weekday: u8,
}

impl Default for Calendar {
    fn default() -> Self {
        Self { epoch_weekday: 0 }
    }
}

impl Calendar {
    pub fn starting_on(day: Weekday) -> Self {
        Self { epoch_weekday: day.num_days_from_monday() as u8 }
    }

    /// Whole days since the epoch.
    pub fn day_index(&self, t: f64) -> i64 {
        ((t + 1e-9) / HOURS_PER_DAY).floor() as i64
    }

    pub fn hour_of_day(&self, t: f64) -> f64 {
        let h = t - self.day_index(t) as f64 * HOURS_PER_DAY;
        if h < 0.0 {
            0.0
        } else {
            h
        }
    }

    /// 0 = Monday … 6 = Sunday.
    pub fn weekday(&self, t: f64) -> usize {
        (self.day_index(t) + self.epoch_weekday as i64).rem_euclid(7) as usize
    }

    pub fn day_kind(&self, t: f64) -> DayKind {
        match self.weekday(t) {
            d @ 0..=4 => DayKind::Weekday(d),
            _ => DayKind::Weekend,
        }
    }

    /// Index of the calendar week containing `t` (weeks start on Monday).
    pub fn week_index(&self, t: f64) -> i64 {
        (self.day_index(t) + self.epoch_weekday as i64).div_euclid(7)
    }

    /// Index of the `step`-hour slot within the day.
    pub fn slot_of_day(&self, t: f64, step: f64) -> usize {
        ((self.hour_of_day(t) + 1e-9) / step).floor() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn epoch_monday() {
        let c = Calendar::default();
        assert_eq!(c.day_kind(10.0), DayKind::Weekday(0));
        assert_eq!(c.day_kind(5.0 * 24.0 + 10.0), DayKind::Weekend);
        assert_eq!(c.day_kind(7.0 * 24.0), DayKind::Weekday(0));
        assert_eq!(c.week_index(7.0 * 24.0 + 1.0), 1);
        assert_eq!(c.slot_of_day(24.0 + 8.25, 0.25), 33);
    }

    #[test]
    fn epoch_wednesday() {
        let c = Calendar::starting_on(Weekday::Wed);
        assert_eq!(c.day_kind(1.0), DayKind::Weekday(2));
        assert_eq!(c.day_kind(3.0 * 24.0 + 1.0), DayKind::Weekend);
        assert_eq!(c.week_index(4.0 * 24.0 + 1.0), 0); // Sunday
        assert_eq!(c.week_index(5.0 * 24.0 + 1.0), 1); // Monday
    }

    proptest! {
        #[test]
        fn weekday_partition_is_exhaustive(t in 0.0f64..5000.0, wd in 0u8..7) {
            let c = Calendar { epoch_weekday: wd };
            let d = c.weekday(t);
            prop_assert!(d < 7);
            match c.day_kind(t) {
                DayKind::Weekday(k) => prop_assert!(k == d && k < 5),
                DayKind::Weekend => prop_assert!(d >= 5),
            }
        }
    }
}
