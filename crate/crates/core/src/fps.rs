//! Simulated Faster Payments rail.
//!
//! Sending banks keep unacknowledged messages in their outbox, so the rail
//! itself holds no durable state: after a restart it re-collects outboxes and
//! redelivers, which receiving banks absorb because settlement is keyed by
//! message id.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::api::WireError;
use crate::bank::{BankApi, FpsMessage, FpsOutcome};
use crate::fault::FaultInjector;
use crate::ids::{BankId, MsgId, Tick};

pub type BankSet = BTreeMap<BankId, Arc<dyn BankApi>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Transit {
    due: Tick,
    msg: FpsMessage,
    /// Receiver verdict awaiting acknowledgement to the sender.
    outcome: Option<FpsOutcome>,
}

#[derive(Debug, Default)]
struct Queue {
    transit: Vec<Transit>,
    known: BTreeSet<MsgId>,
}

/// What one pump did.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PumpReport {
    pub collected: usize,
    pub delivered: usize,
    pub settled: usize,
    pub rejected: usize,
    pub duplicates: usize,
}

#[derive(Debug)]
pub struct FpsNetwork {
    delay: Tick,
    faults: FaultInjector,
    queue: Mutex<Queue>,
}

impl FpsNetwork {
    /// Messages sent at tick `t` become deliverable at `t + delay`.
    pub fn new(delay: Tick, faults: FaultInjector) -> Self {
        Self {
            delay,
            faults,
            queue: Mutex::new(Queue::default()),
        }
    }

    /// Loses everything in transit, as a crashed rail would. Senders still
    /// hold the messages in their outboxes, so the next pump resends them.
    pub fn reset(&self) {
        *self.queue.lock().unwrap() = Queue::default();
    }

    pub fn in_transit(&self) -> usize {
        self.queue.lock().unwrap().transit.len()
    }

    /// Picks up newly sent messages, then delivers and acknowledges all
    /// messages due at or before `now`.
    pub fn pump(&self, now: Tick, banks: &BankSet) -> PumpReport {
        let mut report = PumpReport::default();
        let mut q = self.queue.lock().unwrap();
        let mut outstanding = BTreeSet::new();
        let mut unreachable = BTreeSet::new();
        for (id, bank) in banks {
            let Ok(outbox) = bank.fps_outbox() else {
                unreachable.insert(id.clone());
                continue;
            };
            for msg in outbox {
                outstanding.insert(msg.msg_id.clone());
                if !q.known.insert(msg.msg_id.clone()) {
                    continue;
                }
                report.collected += 1;
                let due = now + self.delay + self.faults.delay();
                let copies = if self.faults.duplicate_delivery() { 2 } else { 1 };
                report.duplicates += copies - 1;
                for _ in 0..copies {
                    q.transit.push(Transit {
                        due,
                        msg: msg.clone(),
                        outcome: None,
                    });
                }
            }
        }
        // Stable: equal due ticks keep send order.
        q.transit.sort_by_key(|t| t.due);
        let mut remaining = Vec::with_capacity(q.transit.len());
        for mut t in std::mem::take(&mut q.transit) {
            if t.due > now {
                remaining.push(t);
                continue;
            }
            if t.outcome.is_none() {
                match deliver(banks, &t.msg) {
                    Ok(outcome) => {
                        report.delivered += 1;
                        t.outcome = Some(outcome);
                    }
                    Err(_) => {
                        remaining.push(t);
                        continue;
                    }
                }
            }
            let outcome = t.outcome.expect("delivered");
            match banks.get(&t.msg.from_bank).map(|b| b.fps_ack(&t.msg.msg_id, outcome)) {
                Some(Err(e)) if e.is_unavailable() => remaining.push(t),
                _ => match outcome {
                    FpsOutcome::Settled => report.settled += 1,
                    FpsOutcome::Rejected => report.rejected += 1,
                },
            }
        }
        q.transit = remaining;
        // Forget ids that left every outbox so the set stays bounded.
        let live: BTreeSet<MsgId> = q.transit.iter().map(|t| t.msg.msg_id.clone()).collect();
        let keep_all = !unreachable.is_empty();
        q.known.retain(|id| keep_all || live.contains(id) || outstanding.contains(id));
        report
    }

    /// Pumps with an ever-later clock until nothing is in transit.
    pub fn drain(&self, mut now: Tick, banks: &BankSet) -> PumpReport {
        let mut total = PumpReport::default();
        for _ in 0..64 {
            let r = self.pump(now, banks);
            total.collected += r.collected;
            total.delivered += r.delivered;
            total.settled += r.settled;
            total.rejected += r.rejected;
            total.duplicates += r.duplicates;
            if self.in_transit() == 0 {
                break;
            }
            now = self
                .queue
                .lock()
                .unwrap()
                .transit
                .iter()
                .map(|t| t.due)
                .min()
                .unwrap_or(now)
                .max(now + 1);
        }
        total
    }
}

/// Delivers to the addressed bank. Unknown banks reject; only an unavailable
/// receiver leaves the message in transit.
fn deliver(banks: &BankSet, msg: &FpsMessage) -> Result<FpsOutcome, ()> {
    match banks.get(&msg.to_bank) {
        None => Ok(FpsOutcome::Rejected),
        Some(bank) => match bank.fps_deliver(msg) {
            Ok(outcome) => Ok(outcome),
            Err(e) if e.is_unavailable() => Err(()),
            Err(_) => Ok(FpsOutcome::Rejected),
        },
    }
}
