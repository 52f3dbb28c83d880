//! Calendar helpers over local-clock epoch seconds.

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Fraction of the day elapsed, in `[0, 1)`.
pub fn day_fraction(timestamp: i64) -> f64 {
    timestamp.rem_euclid(SECONDS_PER_DAY) as f64 / SECONDS_PER_DAY as f64
}

/// Hour bin in `0..24`.
pub fn hour_of_day(timestamp: i64) -> usize {
    (timestamp.rem_euclid(SECONDS_PER_DAY) / 3600) as usize
}

/// Day of week with Monday = 0. The epoch (1970-01-01) was a Thursday.
pub fn day_of_week(timestamp: i64) -> usize {
    (timestamp.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7) as usize
}
