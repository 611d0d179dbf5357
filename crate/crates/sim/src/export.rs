//! State exports and replay from journals.
//!
//! A state directory holds one `<service>.jsonl` journal per service (the
//! service name with `:` written as `.`) and, when written by a run,
//! `state.json` with the canonical export of the live services.

use std::collections::BTreeMap;
use std::path::Path;

use cbdc_core::bank::BankState;
use cbdc_core::ecosystem::EcoState;
use cbdc_core::journal::{canonical_json, read_events, JournalError, JournalEvent};
use cbdc_core::ledger::CoreState;
use cbdc_core::pip::PipState;
use cbdc_core::service::EventSourced;
use cbdc_core::BankId;
use serde::Serialize;
use thiserror::Error;

pub const STATE_FILE: &str = "state.json";

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{service}: chain broken at seq {seq}")]
    ChainBroken { service: String, seq: u64 },
    #[error("{service}: {reason}")]
    Journal { service: String, reason: String },
    #[error("unrecognised journal {0}")]
    UnknownService(String),
    #[error("no core journal in {0}")]
    NoCore(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

/// Every service's state plus the raw journals it was built from.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StateExport {
    pub core: CoreState,
    pub banks: BTreeMap<BankId, BankState>,
    pub ecosystems: BTreeMap<String, EcoState>,
    pub pips: BTreeMap<String, PipState>,
    #[serde(skip)]
    pub journals: BTreeMap<String, String>,
}

pub fn journal_file(service: &str) -> String {
    format!("{}.jsonl", service.replace(':', "."))
}

fn service_of(file_stem: &str) -> String {
    file_stem.replacen('.', ":", 1)
}

/// Canonical (sorted keys, no whitespace) JSON of any serializable value.
pub fn canonical<T: Serialize>(value: &T) -> String {
    canonical_json(&serde_json::to_value(value).expect("export serializes"))
}

fn io_error(path: &Path, e: std::io::Error) -> ReplayError {
    ReplayError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn journal_error(service: &str, e: JournalError) -> ReplayError {
    match e {
        JournalError::ChainBroken(seq) => ReplayError::ChainBroken {
            service: service.to_string(),
            seq,
        },
        e => ReplayError::Journal {
            service: service.to_string(),
            reason: e.to_string(),
        },
    }
}

/// Verifies and decodes one journal.
pub fn parse_journal(service: &str, content: &str) -> Result<Vec<JournalEvent>, ReplayError> {
    read_events(content).map_err(|e| journal_error(service, e))
}

fn fold<S: EventSourced>(service: &str, events: &[JournalEvent]) -> Result<S, ReplayError> {
    S::replay(events).map_err(|e| journal_error(service, e))
}

impl StateExport {
    /// The canonical JSON of the state (journals excluded).
    pub fn canonical(&self) -> String {
        canonical(self)
    }

    /// Rebuilds every service's state by folding its journal.
    pub fn replay(journals: BTreeMap<String, String>) -> Result<Self, ReplayError> {
        let mut events = BTreeMap::new();
        for (service, content) in &journals {
            events.insert(service.clone(), parse_journal(service, content)?);
        }
        let mut out = Self::from_events(&events)?;
        out.journals = journals;
        Ok(out)
    }

    /// Folds already decoded journals. The result carries no raw journals.
    pub fn from_events(events: &BTreeMap<String, Vec<JournalEvent>>) -> Result<Self, ReplayError> {
        let mut out = StateExport::default();
        let mut saw_core = false;
        for (service, evs) in events {
            match service.split_once(':') {
                None if service == "core" => {
                    out.core = fold(service, evs)?;
                    saw_core = true;
                }
                Some(("bank", id)) => {
                    out.banks.insert(BankId::from(id), fold(service, evs)?);
                }
                Some(("eco", _)) => {
                    out.ecosystems.insert(service.clone(), fold(service, evs)?);
                }
                Some(("pip", _)) => {
                    out.pips.insert(service.clone(), fold(service, evs)?);
                }
                _ => return Err(ReplayError::UnknownService(service.clone())),
            }
        }
        if !saw_core {
            return Err(ReplayError::NoCore("journal set".into()));
        }
        Ok(out)
    }

    /// Equal service states, ignoring the raw journals.
    pub fn same_state(&self, other: &StateExport) -> bool {
        self.core == other.core && self.banks == other.banks && self.ecosystems == other.ecosystems && self.pips == other.pips
    }

    /// Reads every `*.jsonl` journal in `dir`.
    pub fn load_journals(dir: &Path) -> Result<BTreeMap<String, String>, ReplayError> {
        let mut journals = BTreeMap::new();
        let entries = std::fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| io_error(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let content = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
            journals.insert(service_of(stem), content);
        }
        if !journals.contains_key("core") {
            return Err(ReplayError::NoCore(dir.display().to_string()));
        }
        Ok(journals)
    }

    pub fn replay_dir(dir: &Path) -> Result<Self, ReplayError> {
        Self::replay(Self::load_journals(dir)?)
    }

    /// Writes the journals and `state.json` into `dir`. Journals already
    /// backed by files in `dir` are rewritten with identical content.
    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (service, content) in &self.journals {
            let path = dir.join(journal_file(service));
            let same = std::fs::read_to_string(&path).is_ok_and(|c| &c == content);
            if !same {
                std::fs::write(path, content)?;
            }
        }
        std::fs::write(dir.join(STATE_FILE), self.canonical() + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names_round_trip_service_names() {
        for s in ["core", "bank:BANK_A", "eco:ECO1", "pip:PIP1"] {
            let f = journal_file(s);
            assert!(!f.contains(':'));
            assert_eq!(service_of(f.trim_end_matches(".jsonl")), s);
        }
    }

    #[test]
    fn an_empty_core_journal_replays_to_the_default_state() {
        let export = StateExport::replay([("core".to_string(), String::new())].into()).unwrap();
        assert_eq!(export.core, CoreState::default());
        assert!(StateExport::replay(BTreeMap::new()).is_err());
        let odd = [("core".to_string(), String::new()), ("ledger2".to_string(), String::new())];
        assert!(matches!(StateExport::replay(odd.into()), Err(ReplayError::UnknownService(_))));
    }
}
