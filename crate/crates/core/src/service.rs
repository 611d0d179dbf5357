//! Journal-backed service state.
//!
//! [`Journaled`] pairs an event-sourced state with its journal behind one
//! lock. Writers validate against the current state, journal the resulting
//! event, then apply it; readers see only applied state. After any journaled
//! event a crash fault may fire, after which the instance refuses all calls.

use std::fmt::Debug;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::api::WireError;
use crate::clock::LogicalClock;
use crate::fault::{FaultInjector, InjectionPoint};
use crate::ids::Tick;
use crate::journal::{Journal, JournalError, JournalEvent, Storage};

pub trait EventSourced: Default + Clone + Serialize + Debug + Send + Sync {
    type Event: Serialize + DeserializeOwned + Debug;
    type Error: WireError + From<JournalError>;

    fn apply(&mut self, event: &Self::Event, ts: Tick) -> Result<(), Self::Error>;

    fn replay(events: &[JournalEvent]) -> Result<Self, JournalError> {
        let mut state = Self::default();
        for ev in events {
            let decoded: Self::Event = ev.decode()?;
            state.apply(&decoded, ev.ts).map_err(|e| JournalError::Decode {
                seq: ev.seq,
                reason: e.to_string(),
            })?;
        }
        Ok(state)
    }
}

#[derive(Debug)]
struct Inner<S> {
    state: S,
    journal: Journal,
}

#[derive(Debug)]
pub struct Journaled<S: EventSourced> {
    name: String,
    clock: LogicalClock,
    faults: FaultInjector,
    inner: RwLock<Inner<S>>,
    crashed: AtomicBool,
}

impl<S: EventSourced> Journaled<S> {
    pub fn recover(
        name: impl Into<String>,
        storage: Arc<dyn Storage>,
        clock: LogicalClock,
        faults: FaultInjector,
    ) -> Result<Self, S::Error> {
        let (journal, events) = Journal::open(storage)?;
        let state = S::replay(&events)?;
        Ok(Self {
            name: name.into(),
            clock,
            faults,
            inner: RwLock::new(Inner { state, journal }),
            crashed: AtomicBool::new(false),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn now(&self) -> Tick {
        self.clock.now()
    }

    pub fn clock(&self) -> &LogicalClock {
        &self.clock
    }

    pub fn faults(&self) -> &FaultInjector {
        &self.faults
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed.load(Ordering::SeqCst)
    }

    /// Marks the instance dead if a crash is armed at `point`.
    pub fn crash_point(&self, point: &InjectionPoint) -> Result<(), S::Error> {
        if self.faults.crash_here(&self.name, point) {
            self.crashed.store(true, Ordering::SeqCst);
            return Err(S::Error::unavailable(format!("{} crashed", self.name)));
        }
        Ok(())
    }

    pub fn head_hash(&self) -> String {
        self.inner.read().unwrap().journal.head_hash().to_string()
    }

    pub fn storage(&self) -> Arc<dyn Storage> {
        self.inner.read().unwrap().journal.storage().clone()
    }

    pub fn export(&self) -> S {
        self.inner.read().unwrap().state.clone()
    }

    fn live(&self) -> Result<(), S::Error> {
        if self.is_crashed() {
            Err(S::Error::unavailable(format!("{} crashed", self.name)))
        } else {
            Ok(())
        }
    }

    pub fn read<T>(&self, f: impl FnOnce(&S) -> Result<T, S::Error>) -> Result<T, S::Error> {
        self.live()?;
        f(&self.inner.read().unwrap().state)
    }

    /// Validates against current state, then journals and applies the event
    /// (if any) under the write lock.
    pub fn write<T>(&self, f: impl FnOnce(&S) -> Result<(Option<S::Event>, T), S::Error>) -> Result<T, S::Error> {
        self.live()?;
        let mut inner = self.inner.write().unwrap();
        let (event, out) = f(&inner.state)?;
        let Some(event) = event else {
            return Ok(out);
        };
        let ts = self.clock.now();
        let written = inner.journal.append_typed(ts, &event)?;
        inner.state.apply(&event, ts)?;
        drop(inner);
        self.crash_point(&InjectionPoint::AfterEvent { kind: written.kind })?;
        Ok(out)
    }

    /// Journals an event that needs no validation.
    pub fn record(&self, event: S::Event) -> Result<(), S::Error> {
        self.write(|_| Ok((Some(event), ())))
    }
}
