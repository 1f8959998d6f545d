use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::config::ProtocolConfig;
use crate::domain::{Group, TestKind};

/// Alternating assignment by enrollment order: even positions go to group A.
pub fn assign_group(cohort_position: usize) -> Group {
    if cohort_position.is_multiple_of(2) {
        Group::A
    } else {
        Group::B
    }
}

/// Retention-test timing, anchored at the end of Posttest-1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub day0: DateTime<Utc>,
    pub day3_due: DateTime<Utc>,
    pub day7_due: DateTime<Utc>,
    pub tolerance_hours: i64,
}

impl Schedule {
    pub fn starting(day0: DateTime<Utc>, config: &ProtocolConfig) -> Self {
        Schedule {
            day0,
            day3_due: day0 + Duration::hours(config.posttest2_offset_hours),
            day7_due: day0 + Duration::hours(config.posttest3_offset_hours),
            tolerance_hours: config.retention_tolerance_hours,
        }
    }

    pub fn due_time(&self, kind: TestKind) -> Option<DateTime<Utc>> {
        match kind {
            TestKind::Posttest2 => Some(self.day3_due),
            TestKind::Posttest3 => Some(self.day7_due),
            _ => None,
        }
    }

    /// Inclusive window `[due - tolerance, due + tolerance]`.
    pub fn window(&self, kind: TestKind) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        let due = self.due_time(kind)?;
        let tol = Duration::hours(self.tolerance_hours);
        Some((due - tol, due + tol))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuePosttest {
    pub kind: TestKind,
    /// Seconds past the end of the window; absent when on time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub late_by_seconds: Option<i64>,
}

impl DuePosttest {
    pub fn is_late(&self) -> bool {
        self.late_by_seconds.is_some()
    }
}

/// Retention tests that may be taken at `now`, in protocol order.
///
/// A test becomes due when its window opens and stays due until completed;
/// past the window it is flagged late rather than withheld.
pub fn due_posttests(schedule: &Schedule, completed: &[TestKind], now: DateTime<Utc>) -> Vec<DuePosttest> {
    [TestKind::Posttest2, TestKind::Posttest3]
        .into_iter()
        .filter(|kind| !completed.contains(kind))
        .filter_map(|kind| {
            let (open, close) = schedule.window(kind)?;
            if now < open {
                return None;
            }
            let late_by_seconds = (now > close).then(|| (now - close).num_seconds());
            Some(DuePosttest { kind, late_by_seconds })
        })
        .collect()
}
