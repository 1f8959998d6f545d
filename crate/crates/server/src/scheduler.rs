use std::sync::Arc;
use std::time::Duration;

use lbt_core::clock::Clock;
use lbt_core::service::Platform;

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DueSummary {
    pub due: usize,
    pub late: usize,
}

/// Counts retention tests that are due, and how many of those are late.
pub fn due_summary(platform: &Platform, clock: &dyn Clock) -> DueSummary {
    let now = clock.now();
    let mut out = DueSummary::default();
    for id in platform.participant_ids() {
        for item in platform.due_posttests(&id, now).unwrap_or_default() {
            out.due += 1;
            if item.due.is_late() {
                out.late += 1;
            }
        }
    }
    out
}

/// Logs the due summary every `period`.
pub fn spawn(platform: Arc<Platform>, clock: Arc<dyn Clock>, period: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let (p, c) = (platform.clone(), clock.clone());
            if let Ok(s) = tokio::task::spawn_blocking(move || due_summary(&p, c.as_ref())).await {
                if s.due > 0 {
                    tracing::info!(due = s.due, late = s.late, "retention tests due");
                }
            }
        }
    })
}
