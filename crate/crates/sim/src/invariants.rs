//! Global invariants over a quiesced state export. Violations are data: each
//! names the invariant, the service and what was found.

use std::collections::{BTreeMap, BTreeSet};

use aho_corasick::AhoCorasick;
use cbdc_core::bank::{FpsStatus, HoldState};
use cbdc_core::ecosystem::{InstructionState, PlanState};
use cbdc_core::journal::{verify_chain, ChainStatus, JournalEvent};
use cbdc_core::ledger::{LedgerAccount, TxState};
use cbdc_core::AccountId;
use serde::Serialize;

use crate::export::{parse_journal, ReplayError, StateExport, STATE_FILE};

pub const CONSERVATION: &str = "CONSERVATION";
pub const BALANCE_SHEET: &str = "BALANCE_SHEET";
pub const DOUBLE_ENTRY: &str = "DOUBLE_ENTRY";
pub const PSEUDONYMITY: &str = "PSEUDONYMITY";
pub const LINKAGE: &str = "LINKAGE";
pub const JOURNAL_CHAIN: &str = "JOURNAL_CHAIN";
pub const INTERMEDIATION: &str = "INTERMEDIATION";
pub const SAGA_TERMINAL: &str = "SAGA_TERMINAL";
pub const PIPELINE_ORDER: &str = "PIPELINE_ORDER";

pub const ALL: [&str; 9] = [
    CONSERVATION,
    BALANCE_SHEET,
    DOUBLE_ENTRY,
    PSEUDONYMITY,
    LINKAGE,
    JOURNAL_CHAIN,
    INTERMEDIATION,
    SAGA_TERMINAL,
    PIPELINE_ORDER,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub invariant: &'static str,
    pub service: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InvariantResult {
    pub name: &'static str,
    pub pass: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

struct Found(Vec<Violation>);

impl Found {
    fn add(&mut self, invariant: &'static str, service: impl Into<String>, detail: impl Into<String>) {
        self.0.push(Violation {
            invariant,
            service: service.into(),
            detail: detail.into(),
        });
    }
}

/// Runs every check.
pub fn verify(export: &StateExport) -> Vec<Violation> {
    let mut found = Found(Vec::new());
    let events: BTreeMap<&String, Result<Vec<JournalEvent>, ReplayError>> = export
        .journals
        .iter()
        .map(|(service, content)| (service, parse_journal(service, content)))
        .collect();
    money(export, &mut found);
    double_entry(export, &mut found);
    journals(export, &events, &mut found);
    privacy(export, &mut found);
    intermediation(export, &mut found);
    terminal(export, &mut found);
    pipeline(&events, &mut found);
    found.0
}

/// Checks a saved state directory: every journal chain, then the state
/// rebuilt from the journals, then `state.json` (if present) against it.
/// A broken chain stops the check there, since nothing after it can be
/// trusted.
pub fn verify_dir(dir: &std::path::Path) -> Result<Vec<Violation>, ReplayError> {
    let journals = StateExport::load_journals(dir)?;
    let mut found = Found(Vec::new());
    for (service, content) in &journals {
        if let ChainStatus::Broken { first_bad_seq } = verify_chain(content) {
            found.add(JOURNAL_CHAIN, service.clone(), format!("chain broken at seq {first_bad_seq}"));
        }
    }
    if !found.0.is_empty() {
        return Ok(found.0);
    }
    let rebuilt = StateExport::replay(journals)?;
    if let Ok(saved) = std::fs::read_to_string(dir.join(STATE_FILE)) {
        if saved.trim_end() != rebuilt.canonical() {
            found.add(JOURNAL_CHAIN, STATE_FILE, "saved state differs from the journals");
        }
    }
    found.0.extend(verify(&rebuilt));
    Ok(found.0)
}

/// One result per invariant, in [`ALL`] order.
pub fn summarize(violations: &[Violation]) -> Vec<InvariantResult> {
    ALL.iter()
        .map(|name| {
            let v: Vec<String> = violations
                .iter()
                .filter(|v| v.invariant == *name)
                .map(|v| format!("{}: {}", v.service, v.detail))
                .collect();
            InvariantResult {
                name,
                pass: v.is_empty(),
                violations: v,
            }
        })
        .collect()
}

fn money(x: &StateExport, found: &mut Found) {
    let core = &x.core;
    let cbdc: i128 = core
        .accounts
        .values()
        .map(|a| i128::from(a.balance.minor_units()) + i128::from(a.earmarked.minor_units()))
        .sum();
    let mut deposits: i128 = 0;
    let mut cash: i128 = 0;
    for b in x.banks.values() {
        cash += i128::from(b.cash_injected.minor_units());
        for a in b.accounts.values() {
            deposits += i128::from(a.balance.minor_units()) + i128::from(a.earmarked.minor_units());
        }
        for m in b.outbound.values().filter(|m| m.status == FpsStatus::Sent) {
            deposits += i128::from(m.amount.minor_units());
        }
    }
    if deposits + cbdc != cash {
        found.add(
            CONSERVATION,
            "system",
            format!("deposits {deposits} + cbdc {cbdc} != cash injected {cash}"),
        );
    }
    let reserves: i128 = core.reserves.values().map(|r| i128::from(r.balance.minor_units())).sum();
    let outstanding = i128::from(core.cbdc_outstanding.minor_units());
    let injected = i128::from(core.reserves_injected.minor_units());
    if reserves + outstanding != injected {
        found.add(
            BALANCE_SHEET,
            "core",
            format!("reserves {reserves} + outstanding {outstanding} != injected {injected}"),
        );
    }
}

fn double_entry(x: &StateExport, found: &mut Found) {
    let core = &x.core;
    let mut committed: BTreeMap<&AccountId, i128> = BTreeMap::new();
    let mut held: BTreeMap<&AccountId, i128> = BTreeMap::new();
    let mut reserve_moves: i128 = 0;
    for tx in core.transactions.values() {
        let sum: i128 = tx.legs.iter().map(|l| i128::from(l.delta.minor_units())).sum();
        if sum != 0 {
            found.add(DOUBLE_ENTRY, "core", format!("{} legs sum to {sum}", tx.tx_id));
        }
        for leg in &tx.legs {
            let d = i128::from(leg.delta.minor_units());
            match (&leg.account, tx.state) {
                (LedgerAccount::Cbdc(a), TxState::Committed) => *committed.entry(a).or_default() += d,
                (LedgerAccount::Cbdc(a), TxState::Prepared) if d < 0 => *held.entry(a).or_default() -= d,
                (LedgerAccount::Reserve(_), TxState::Committed) => reserve_moves += d,
                _ => {}
            }
        }
    }
    let mut total: i128 = 0;
    for (id, a) in &core.accounts {
        let on_books = i128::from(a.balance.minor_units()) + i128::from(a.earmarked.minor_units());
        total += on_books;
        let posted = committed.get(id).copied().unwrap_or(0);
        if on_books != posted {
            found.add(DOUBLE_ENTRY, "core", format!("{id} holds {on_books}, postings give {posted}"));
        }
        let expect_held = held.get(id).copied().unwrap_or(0);
        if i128::from(a.earmarked.minor_units()) != expect_held {
            found.add(
                DOUBLE_ENTRY,
                "core",
                format!("{id} earmarks {}, prepared debits {expect_held}", a.earmarked),
            );
        }
    }
    if total != i128::from(core.cbdc_outstanding.minor_units()) {
        found.add(
            DOUBLE_ENTRY,
            "core",
            format!("accounts sum to {total}, outstanding is {}", core.cbdc_outstanding),
        );
    }
    let reserves: i128 = core.reserves.values().map(|r| i128::from(r.balance.minor_units())).sum();
    if reserves != i128::from(core.reserves_injected.minor_units()) + reserve_moves {
        found.add(
            DOUBLE_ENTRY,
            "core",
            format!("reserves {reserves} differ from injections plus postings"),
        );
    }
    for (bank, state) in &x.banks {
        let mut holds: BTreeMap<&AccountId, i128> = BTreeMap::new();
        for h in state.holds.values().filter(|h| h.state == HoldState::Prepared) {
            *holds.entry(&h.account_id).or_default() += i128::from(h.amount.minor_units());
        }
        for (id, a) in &state.accounts {
            let expect = holds.get(id).copied().unwrap_or(0);
            if i128::from(a.earmarked.minor_units()) != expect {
                found.add(
                    DOUBLE_ENTRY,
                    format!("bank:{bank}"),
                    format!("{id} earmarks {}, open holds {expect}", a.earmarked),
                );
            }
        }
    }
}

type Parsed<'a> = BTreeMap<&'a String, Result<Vec<JournalEvent>, ReplayError>>;

fn journals(x: &StateExport, events: &Parsed, found: &mut Found) {
    let mut decoded = BTreeMap::new();
    for (service, parsed) in events {
        match parsed {
            Ok(evs) => {
                decoded.insert((*service).clone(), evs.clone());
            }
            Err(ReplayError::ChainBroken { seq, .. }) => {
                found.add(JOURNAL_CHAIN, (*service).clone(), format!("chain broken at seq {seq}"))
            }
            Err(e) => found.add(JOURNAL_CHAIN, (*service).clone(), e.to_string()),
        }
    }
    // The journals must reproduce the exported state.
    if x.journals.is_empty() || decoded.len() != events.len() {
        return;
    }
    let replayed = match StateExport::from_events(&decoded) {
        Ok(r) => r,
        Err(e) => return found.add(JOURNAL_CHAIN, "system", e.to_string()),
    };
    let mut differ = Vec::new();
    if x.core != replayed.core {
        differ.push("core".to_string());
    }
    for (id, s) in &x.banks {
        if replayed.banks.get(id) != Some(s) {
            differ.push(format!("bank:{id}"));
        }
    }
    for (n, s) in &x.ecosystems {
        if replayed.ecosystems.get(n) != Some(s) {
            differ.push(n.clone());
        }
    }
    for (n, s) in &x.pips {
        if replayed.pips.get(n) != Some(s) {
            differ.push(n.clone());
        }
    }
    for service in differ {
        found.add(JOURNAL_CHAIN, service, "journal does not reproduce the exported state");
    }
}

/// Identity material the PIPs hold: user ids, legal names and onboarding
/// document values.
fn identity_needles(x: &StateExport) -> BTreeSet<String> {
    let mut needles = BTreeSet::new();
    for pip in x.pips.values() {
        for u in pip.users.values() {
            needles.insert(u.user_id.to_string());
            needles.insert(u.legal_name.clone());
            needles.extend(u.documents.values().cloned());
        }
    }
    needles.retain(|n| n.len() >= 3);
    needles
}

fn pseudonyms(x: &StateExport) -> BTreeSet<String> {
    x.pips
        .values()
        .flat_map(|p| p.mappings.values().map(|m| m.pseudonym.to_string()))
        .chain(x.core.pseudonyms.keys().map(|p| p.to_string()))
        .collect()
}

fn automaton(patterns: &[&str]) -> AhoCorasick {
    AhoCorasick::new(patterns).expect("identity patterns build an automaton")
}

/// Seq of the journal line holding byte `offset`.
fn seq_at(journal: &str, offset: usize) -> Option<u64> {
    let start = journal[..offset].rfind('\n').map_or(0, |i| i + 1);
    let end = journal[offset..].find('\n').map_or(journal.len(), |i| offset + i);
    serde_json::from_str::<serde_json::Value>(&journal[start..end]).ok()?["seq"].as_u64()
}

fn plain<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("state serializes")
}

fn privacy(x: &StateExport, found: &mut Found) {
    let needles: Vec<String> = identity_needles(x).into_iter().collect();
    if needles.is_empty() {
        return;
    }
    let idents: Vec<&str> = needles.iter().map(String::as_str).collect();
    let identity = automaton(&idents);
    let core_journal = x.journals.get("core").map(String::as_str).unwrap_or("");
    let core_state = plain(&x.core);
    let mut reported = BTreeSet::new();
    for m in identity.find_overlapping_iter(core_journal) {
        let n = idents[m.pattern().as_usize()];
        if reported.insert(n) {
            let seq = seq_at(core_journal, m.start()).map_or("?".to_string(), |s| s.to_string());
            found.add(PSEUDONYMITY, "core", format!("journal seq {seq} contains identity data {n:?}"));
        }
    }
    for m in identity.find_overlapping_iter(&core_state) {
        let n = idents[m.pattern().as_usize()];
        if reported.insert(n) {
            found.add(PSEUDONYMITY, "core", format!("state contains identity data {n:?}"));
        }
    }

    // Only a PIP may hold identity and pseudonym side by side.
    let pseudos: Vec<String> = pseudonyms(x).into_iter().collect();
    let pseudo_patterns: Vec<&str> = pseudos.iter().map(String::as_str).collect();
    let pseudonym = automaton(&pseudo_patterns);
    let mut artifacts: Vec<(String, std::borrow::Cow<str>)> = Vec::new();
    for (service, content) in &x.journals {
        if !service.starts_with("pip:") {
            artifacts.push((format!("{service} journal"), content.as_str().into()));
        }
    }
    artifacts.push(("core state".into(), core_state.into()));
    for (id, b) in &x.banks {
        artifacts.push((format!("bank:{id} state"), plain(b).into()));
    }
    for (n, e) in &x.ecosystems {
        artifacts.push((format!("{n} state"), plain(e).into()));
    }
    for (name, text) in &artifacts {
        let Some(p) = pseudonym.find(text.as_ref()) else {
            continue;
        };
        if let Some(i) = identity.find(text.as_ref()) {
            let (p, i) = (pseudo_patterns[p.pattern().as_usize()], idents[i.pattern().as_usize()]);
            found.add(LINKAGE, name.clone(), format!("holds pseudonym {p} and identity data {i:?}"));
        }
    }
}

fn intermediation(x: &StateExport, found: &mut Found) {
    let mut mapped: BTreeMap<String, Vec<(&str, &str, Option<&AccountId>)>> = BTreeMap::new();
    for (pip_name, pip) in &x.pips {
        for m in pip.mappings.values() {
            mapped
                .entry(m.pseudonym.to_string())
                .or_default()
                .push((pip_name.as_str(), m.user_id.as_str(), m.account_id.as_ref()));
        }
    }
    for (id, a) in &x.core.accounts {
        match mapped.get(a.pseudonym.as_str()).map(Vec::as_slice) {
            Some([(_, _, Some(acct))]) if *acct == id => {}
            Some([_]) => found.add(INTERMEDIATION, "core", format!("{id} disagrees with its PIP mapping")),
            Some(_) => found.add(INTERMEDIATION, "core", format!("{id} is mapped by several PIPs")),
            None => found.add(INTERMEDIATION, "core", format!("{id} has no PIP mapping")),
        }
    }
    for (eco, state) in &x.ecosystems {
        for (user, linked) in &state.directory {
            for c in &linked.cbdc {
                let ok = x.pips.get(&c.pip).is_some_and(|p| {
                    p.mappings
                        .get(user)
                        .is_some_and(|m| m.account_id.as_ref() == Some(&c.account_id))
                });
                if !ok {
                    found.add(
                        INTERMEDIATION,
                        eco.clone(),
                        format!("directory links {} to {user} without {} holding that mapping", c.account_id, c.pip),
                    );
                }
            }
        }
    }
}

fn terminal(x: &StateExport, found: &mut Found) {
    for (eco, state) in &x.ecosystems {
        for (id, plan) in &state.plans {
            if !matches!(plan.state, PlanState::Committed | PlanState::Compensated) {
                found.add(SAGA_TERMINAL, eco.clone(), format!("plan {id} is {:?}", plan.state));
            }
        }
        for (id, r) in &state.instructions {
            if !r.state.is_terminal() || r.state == InstructionState::Failed {
                found.add(SAGA_TERMINAL, eco.clone(), format!("instruction {id} is {:?}", r.state));
            }
        }
    }
    for tx in x.core.transactions.values().filter(|t| t.state == TxState::Prepared) {
        found.add(SAGA_TERMINAL, "core", format!("{} still prepared", tx.tx_id));
    }
    for (bank, state) in &x.banks {
        for h in state.holds.values().filter(|h| h.state == HoldState::Prepared) {
            found.add(SAGA_TERMINAL, format!("bank:{bank}"), format!("hold {} still open", h.hold_id));
        }
        for m in state.outbound.values().filter(|m| m.status == FpsStatus::Sent) {
            found.add(SAGA_TERMINAL, format!("bank:{bank}"), format!("FPS {} unacknowledged", m.msg_id));
        }
    }
}

fn instruction_of(payload: &serde_json::Value) -> Option<&str> {
    payload["instruction_id"]
        .as_str()
        .or_else(|| payload["instruction"]["instruction_id"].as_str())
        .or_else(|| payload["plan"]["instruction_id"].as_str())
}

/// Admission stages must be journaled in order for every instruction,
/// whoever submitted it; a program firing precedes its instruction.
fn pipeline(events: &Parsed, found: &mut Found) {
    for (service, parsed) in events.iter().filter(|(s, _)| s.starts_with("eco:")) {
        let Ok(events) = parsed else {
            continue;
        };
        let mut stage: BTreeMap<String, u8> = BTreeMap::new();
        let mut fired: BTreeSet<String> = BTreeSet::new();
        for ev in events {
            let rank = match ev.kind.as_str() {
                "instruction_received" => 1,
                "instruction_validated" => 2,
                "policy_checked" => 3,
                "aml_screened" => 4,
                "plan_created" => 5,
                "instruction_rejected" => 0,
                "program_fired" => {
                    let id = ev.payload["instruction_id"].as_str().unwrap_or_default().to_string();
                    if stage.contains_key(&id) {
                        found.add(PIPELINE_ORDER, (*service).clone(), format!("seq {}: {id} fired after admission", ev.seq));
                    }
                    fired.insert(id);
                    continue;
                }
                _ => continue,
            };
            let Some(id) = instruction_of(&ev.payload).map(str::to_string) else {
                found.add(PIPELINE_ORDER, (*service).clone(), format!("seq {}: {} names no instruction", ev.seq, ev.kind));
                continue;
            };
            let last = stage.get(&id).copied();
            let ok = match (rank, last) {
                (1, None) => true,
                (0, Some(l)) => (1..5).contains(&l),
                (r, Some(l)) => r == l + 1 && l != 0,
                _ => false,
            };
            if !ok {
                found.add(
                    PIPELINE_ORDER,
                    (*service).clone(),
                    format!("seq {}: {} for {id} out of order", ev.seq, ev.kind),
                );
            }
            stage.insert(id, if rank == 0 { 0 } else { rank });
        }
    }
}
