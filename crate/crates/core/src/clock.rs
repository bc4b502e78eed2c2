//! Timestamps for event logs and workspace commits.
//!
//! Replay runs must produce byte-identical artifacts, so every timestamp the
//! pipeline writes goes through a [`Clock`]. The logical clock derives the
//! time from a sequence number instead of the wall clock.

use std::time::{Duration, SystemTime, UNIX_EPOCH};

use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

pub trait Clock: Send + Sync {
    /// Timestamp for the `seq`-th event of a log.
    fn timestamp(&self, seq: u64) -> SystemTime;

    fn rfc3339(&self, seq: u64) -> String {
        format_rfc3339(self.timestamp(seq))
    }
}

/// Wall-clock time; the sequence number is ignored.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn timestamp(&self, _seq: u64) -> SystemTime {
        SystemTime::now()
    }
}

/// `epoch + seq` seconds. Used whenever the gateway runs in replay mode.
#[derive(Debug, Clone, Copy)]
pub struct LogicalClock {
    epoch: SystemTime,
}

impl LogicalClock {
    /// 2025-01-01T00:00:00Z
    pub const DEFAULT_EPOCH_SECS: u64 = 1_735_689_600;

    pub fn new() -> Self {
        Self {
            epoch: UNIX_EPOCH + Duration::from_secs(Self::DEFAULT_EPOCH_SECS),
        }
    }
}

impl Default for LogicalClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for LogicalClock {
    fn timestamp(&self, seq: u64) -> SystemTime {
        self.epoch + Duration::from_secs(seq)
    }
}

pub fn format_rfc3339(t: SystemTime) -> String {
    let dt = OffsetDateTime::from(t);
    // Second precision keeps commit dates and log lines aligned.
    let dt = dt.replace_nanosecond(0).unwrap_or(dt);
    dt.format(&Rfc3339).unwrap_or_else(|_| "1970-01-01T00:00:00Z".to_string())
}

pub fn unix_seconds(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logical_clock_is_deterministic() {
        let c = LogicalClock::new();
        assert_eq!(c.rfc3339(0), "2025-01-01T00:00:00Z");
        assert_eq!(c.rfc3339(61), "2025-01-01T00:01:01Z");
        assert_eq!(c.rfc3339(5), LogicalClock::new().rfc3339(5));
    }
}
