//! Receding-horizon comfort control.

pub mod closed_loop;
pub mod ocp;

pub use closed_loop::{benchmark_scenarios, run_closed_loop, BenchmarkRow, ClosedLoopResult, ClosedLoopSetup, MeasurementNoise};
pub use ocp::{cost, cost_and_gradient, solve_ocp, thermal_vector, OcpConfig, OcpProblem, OcpSolution, ThermalModel};

use serde::{Deserialize, Serialize};

use crate::calendar::{Calendar, DayKind};
use crate::error::{invalid, Result};

/// Soft comfort penalty: quadratic outside `[lower, upper]`, zero inside.
pub fn penalty(tz: f64, lower: f64, upper: f64) -> f64 {
    if tz > upper {
        0.5 * (tz - upper).powi(2)
    } else if tz < lower {
        0.5 * (tz - lower).powi(2)
    } else {
        0.0
    }
}

pub fn penalty_derivative(tz: f64, lower: f64, upper: f64) -> f64 {
    if tz > upper {
        tz - upper
    } else if tz < lower {
        tz - lower
    } else {
        0.0
    }
}

/// Instantaneous distance outside the band, K.
pub fn violation(tz: f64, band: &Band) -> f64 {
    (tz - band.upper).max(0.0) + (band.lower - tz).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComfortMode {
    Comfort,
    PreComfort,
    Economy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComfortSchedule {
    pub comfort: Band,
    pub pre_comfort: Band,
    pub economy: Band,
    /// Persons at or above which a zone counts as occupied.
    pub threshold: f64,
    /// Daytime window `[day_start, day_end)`, hours.
    pub day_start: f64,
    pub day_end: f64,
}

impl Default for ComfortSchedule {
    fn default() -> Self {
        Self {
            comfort: Band { lower: 21.0, upper: 24.0 },
            pre_comfort: Band { lower: 19.0, upper: 25.0 },
            economy: Band { lower: 17.0, upper: 28.0 },
            threshold: 0.5,
            day_start: 6.0,
            day_end: 18.0,
        }
    }
}

impl ComfortSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("comfort", self.comfort), ("pre_comfort", self.pre_comfort), ("economy", self.economy)] {
            if !(b.lower < b.upper) {
                return Err(invalid("schedule", format!("mode '{name}': lower bound {} must be below upper bound {}", b.lower, b.upper)));
            }
        }
        let inside = |a: Band, b: Band| b.lower <= a.lower && a.upper <= b.upper;
        if !inside(self.comfort, self.pre_comfort) || !inside(self.pre_comfort, self.economy) {
            return Err(invalid("schedule", "bands must nest: comfort within pre_comfort within economy"));
        }
        if !(0.0 <= self.day_start && self.day_start < self.day_end && self.day_end <= 24.0) {
            return Err(invalid("schedule", "day window must satisfy 0 <= day_start < day_end <= 24"));
        }
        Ok(())
    }

    pub fn band(&self, mode: ComfortMode) -> Band {
        match mode {
            ComfortMode::Comfort => self.comfort,
            ComfortMode::PreComfort => self.pre_comfort,
            ComfortMode::Economy => self.economy,
        }
    }

    /// Mode at time `t` given the occupancy believed present then.
    pub fn mode(&self, calendar: &Calendar, t: f64, occupancy: f64, policy: ModePolicy) -> ComfortMode {
        let h = calendar.hour_of_day(t);
        let daytime = h + 1e-9 >= self.day_start && h + 1e-9 < self.day_end;
        if calendar.day_kind(t) == DayKind::Weekend || !daytime {
            return ComfortMode::Economy;
        }
        match policy {
            ModePolicy::Static => ComfortMode::Comfort,
            ModePolicy::OccupancyAdaptive if occupancy >= self.threshold => ComfortMode::Comfort,
            ModePolicy::OccupancyAdaptive => ComfortMode::PreComfort,
        }
    }
}

/// Bands on `times[j]` for the occupancy values `occupancy[j]`.
pub fn schedule_mode(
    schedule: &ComfortSchedule,
    calendar: &Calendar,
    times: &[f64],
    occupancy: &[f64],
    scenario: Scenario,
) -> Vec<Band> {
    times
        .iter()
        .zip(occupancy)
        .map(|(t, o)| schedule.band(schedule.mode(calendar, *t, *o, scenario.mode_policy())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OccupancySource {
    None,
    GroundTruth,
    Lfm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModePolicy {
    /// Comfort for the whole daytime window.
    Static,
    /// Pre-comfort by day unless occupancy is expected.
    OccupancyAdaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    None,
    Exact,
    Lfm,
    ExactPreComfort,
    LfmPreComfort,
}

impl Scenario {
    pub const ALL: [Scenario; 5] =
        [Scenario::None, Scenario::Exact, Scenario::Lfm, Scenario::ExactPreComfort, Scenario::LfmPreComfort];

    pub fn occupancy_source(self) -> OccupancySource {
        match self {
            Scenario::None => OccupancySource::None,
            Scenario::Exact | Scenario::ExactPreComfort => OccupancySource::GroundTruth,
            Scenario::Lfm | Scenario::LfmPreComfort => OccupancySource::Lfm,
        }
    }

    pub fn mode_policy(self) -> ModePolicy {
        match self {
            Scenario::ExactPreComfort | Scenario::LfmPreComfort => ModePolicy::OccupancyAdaptive,
            _ => ModePolicy::Static,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Scenario::None => "none",
            Scenario::Exact => "exact",
            Scenario::Lfm => "lfm",
            Scenario::ExactPreComfort => "exact_precomfort",
            Scenario::LfmPreComfort => "lfm_precomfort",
        }
    }

    pub fn parse(s: &str) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|c| c.tag() == s.to_ascii_lowercase().replace(['-', '+', ' '], "_"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn penalty_examples() {
        assert_eq!(penalty(22.0, 21.0, 24.0), 0.0);
        assert_eq!(penalty(25.0, 21.0, 24.0), 0.5);
        assert_eq!(penalty(19.0, 21.0, 24.0), 2.0);
        assert_eq!(penalty_derivative(24.0, 21.0, 24.0), 0.0);
        assert!(penalty_derivative(24.0 + 1e-9, 21.0, 24.0).abs() < 1e-8);
    }

    #[test]
    fn schedule_examples() {
        let s = ComfortSchedule::default();
        let cal = Calendar::default();
        let sat_noon = 5.0 * 24.0 + 12.0;
        let tue_10 = 24.0 + 10.0;
        for sc in Scenario::ALL {
            assert_eq!(schedule_mode(&s, &cal, &[sat_noon], &[3.0], sc)[0], Band { lower: 17.0, upper: 28.0 });
        }
        assert_eq!(schedule_mode(&s, &cal, &[tue_10], &[0.3], Scenario::LfmPreComfort)[0], Band { lower: 19.0, upper: 25.0 });
        assert_eq!(schedule_mode(&s, &cal, &[tue_10], &[2.0], Scenario::LfmPreComfort)[0], Band { lower: 21.0, upper: 24.0 });
        assert_eq!(schedule_mode(&s, &cal, &[tue_10], &[0.0], Scenario::None)[0], Band { lower: 21.0, upper: 24.0 });
        assert_eq!(s.mode(&cal, 24.0 + 18.0, 5.0, ModePolicy::Static), ComfortMode::Economy);
        assert_eq!(s.mode(&cal, 24.0 + 6.0, 5.0, ModePolicy::Static), ComfortMode::Comfort);
    }

    #[test]
    fn schedule_validation_names_mode() {
        let mut s = ComfortSchedule::default();
        s.pre_comfort = Band { lower: 26.0, upper: 25.0 };
        assert!(s.validate().unwrap_err().to_string().contains("pre_comfort"));
        assert!(ComfortSchedule::default().validate().is_ok());
    }

    #[test]
    fn scenario_tags_roundtrip() {
        for s in Scenario::ALL {
            assert_eq!(Scenario::parse(s.tag()), Some(s));
        }
        assert_eq!(Scenario::parse("LFM+PreComfort"), Some(Scenario::LfmPreComfort));
    }

    proptest! {
        #[test]
        fn penalty_zero_iff_inside(t in 0.0f64..40.0, lo in 15.0f64..22.0, w in 0.1f64..8.0) {
            let hi = lo + w;
            let p = penalty(t, lo, hi);
            prop_assert_eq!(p == 0.0, (lo..=hi).contains(&t));
            prop_assert!(p >= 0.0);
        }

        #[test]
        fn penalty_is_c1(lo in 15.0f64..22.0, w in 0.1f64..8.0) {
            let hi = lo + w;
            let e = 1e-7;
            for b in [lo, hi] {
                prop_assert!((penalty(b + e, lo, hi) - penalty(b - e, lo, hi)).abs() < 1e-12);
                prop_assert!((penalty_derivative(b + e, lo, hi) - penalty_derivative(b - e, lo, hi)).abs() < 1e-6);
            }
        }
    }
}
