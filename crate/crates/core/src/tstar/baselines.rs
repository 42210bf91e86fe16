//! Point-forecast baselines.

use super::archive::ArchiveEntry;
use crate::features::SeasonalProfile;
use crate::timegrid::{hour_of, QUARTERS_PER_HOUR};

/// Training mean for the (day-of-week, hour, quarter) key, with the profile's fallbacks.
pub fn baseline_historical_average(profile: &SeasonalProfile, dow: u8, hour: u8, quarter: u8) -> f64 {
    profile.lookup(dow, hour, Some(quarter)).0
}

pub fn baseline_myopic(last: u32) -> f64 {
    last as f64
}

/// Stage-1 hourly mean split evenly over the four quarters.
pub fn baseline_hourly_split(archive: &[Option<ArchiveEntry>], quarter: usize) -> Option<f64> {
    archive
        .get(hour_of(quarter))
        .copied()
        .flatten()
        .map(|e| e.mu / QUARTERS_PER_HOUR as f64)
}
