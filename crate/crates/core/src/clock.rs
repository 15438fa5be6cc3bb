//! Logical simulation time.
//!
//! Time starts at a fixed epoch and advances one tick (one second of
//! simulated time) per operation. Wall-clock time never reaches any output.

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::iso20022::MessageStamp;

/// Ticks reserved for each transaction of a scenario, so that transactions
/// have disjoint time ranges regardless of execution order.
pub const TICKS_PER_TRANSACTION: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub fn epoch() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
    }

    pub fn as_datetime(&self) -> DateTime<Utc> {
        Self::epoch() + Duration::seconds(self.0 as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimClock {
    next: u64,
}

impl Default for SimClock {
    fn default() -> Self {
        Self::starting_at(0)
    }
}

impl SimClock {
    pub fn starting_at(tick: u64) -> Self {
        Self { next: tick }
    }

    /// Clock for the `index`-th transaction of a run (setup uses region 0).
    pub fn for_transaction(index: usize) -> Self {
        Self::starting_at((index as u64 + 1) * TICKS_PER_TRANSACTION)
    }

    pub fn tick(&mut self) -> SimTime {
        let t = SimTime(self.next);
        self.next += 1;
        t
    }

    /// Issues a fresh message id and creation time.
    pub fn stamp(&mut self) -> MessageStamp {
        let t = self.tick();
        MessageStamp {
            msg_id: format!("SIM{:016}", t.0),
            creation_time: t.as_datetime(),
        }
    }
}
