//! End-to-end run over real HTTP: every service behind its own loopback
//! server, the PIP's callers on several threads, money checked afterwards
//! from the services' own journals.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cbdc_core::bank::{Bank, BankApi, BankConfig};
use cbdc_core::ecosystem::standards::WirePayee;
use cbdc_core::ecosystem::{EcoConfig, Ecosystem, InstructionState};
use cbdc_core::fault::FaultInjector;
use cbdc_core::fps::{BankSet, FpsNetwork};
use cbdc_core::journal::{MemoryStorage, Storage};
use cbdc_core::ledger::{CoreConfig, CoreLedger};
use cbdc_core::pip::{Onboarding, PaymentRequest, Pip, PipApi, PipConfig};
use cbdc_core::{BankId, LogicalClock, Money, Role, UserId};
use cbdc_http::routes::{bank_router, core_router, eco_router, pip_router};
use cbdc_http::{ApiKeys, HttpBank, HttpCore, HttpEco, HttpPip, Server};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::export::StateExport;
use crate::invariants::{self, InvariantResult};
use crate::system::{bank_service, APP, CORE, ECO, FPS, OPERATOR, PIP, PIP_ID};

#[derive(Debug, Error)]
pub enum SmokeError {
    #[error("cannot start {service}: {reason}")]
    Start { service: String, reason: String },
    #[error("setting up {0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmokeConfig {
    pub seed: u64,
    pub payments: usize,
    pub threads: usize,
    pub users: usize,
}

impl Default for SmokeConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            payments: 1_000,
            threads: 8,
            users: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SmokeReport {
    pub payments: usize,
    pub committed: usize,
    pub rejected: usize,
    pub errors: usize,
    pub elapsed_ms: u128,
    pub invariants: Vec<InvariantResult>,
}

impl SmokeReport {
    pub fn pass(&self) -> bool {
        self.errors == 0 && self.committed + self.rejected == self.payments && self.invariants.iter().all(|i| i.pass)
    }

    pub fn elapsed(&self) -> Duration {
        Duration::from_millis(self.elapsed_ms as u64)
    }
}

const KEYS: [(&str, &str); 6] = [
    ("k-core-pip", PIP),
    ("k-eco", ECO),
    ("k-ops", OPERATOR),
    ("k-fps", FPS),
    ("k-app", APP),
    ("k-pip", PIP),
];

fn keys() -> ApiKeys {
    KEYS.iter().fold(ApiKeys::new(), |k, (key, caller)| k.with(*key, *caller))
}

fn key_of(caller: &str) -> &'static str {
    KEYS.iter().find(|(_, c)| *c == caller).map(|(k, _)| *k).expect("every caller has a key")
}

struct Stack {
    _servers: Vec<Server>,
    storages: BTreeMap<String, Arc<MemoryStorage>>,
    core_url: String,
    bank_urls: BTreeMap<BankId, String>,
    pip_url: String,
}

impl Stack {
    fn banks(&self, caller: &str) -> BankSet {
        self.bank_urls
            .iter()
            .map(|(id, url)| {
                let api: Arc<dyn BankApi> = Arc::new(HttpBank::new(id.clone(), url.clone(), key_of(caller)));
                (id.clone(), api)
            })
            .collect()
    }

    fn journals(&self) -> BTreeMap<String, String> {
        self.storages
            .iter()
            .map(|(s, st)| (s.clone(), st.load().unwrap_or_default()))
            .collect()
    }
}

fn start(service: &str, e: impl ToString) -> SmokeError {
    SmokeError::Start {
        service: service.to_string(),
        reason: e.to_string(),
    }
}

fn boot(cfg: &SmokeConfig, users: &[UserId], banks: &[BankId]) -> Result<Stack, SmokeError> {
    let clock = LogicalClock::new();
    let faults = FaultInjector::none();
    let mut servers = Vec::new();
    let mut storages = BTreeMap::new();
    let mut storage = |name: &str| {
        let s = MemoryStorage::new();
        storages.insert(name.to_string(), s.clone());
        s
    };

    let core_cfg = CoreConfig::default()
        .with_caller(PIP, Role::Pip)
        .with_caller(ECO, Role::Ecosystem)
        .with_caller(OPERATOR, Role::Operator);
    let core = CoreLedger::recover(core_cfg, storage(CORE), clock.clone(), faults.clone()).map_err(|e| start(CORE, e))?;
    let server = Server::spawn(core_router(Arc::new(core), keys())).map_err(|e| start(CORE, e))?;
    let core_url = server.url();
    servers.push(server);

    let bank_cfg = BankConfig::default()
        .with_caller(ECO, Role::Ecosystem)
        .with_caller(PIP, Role::Pip)
        .with_caller(OPERATOR, Role::Operator)
        .with_caller(FPS, Role::Network);
    let mut bank_urls = BTreeMap::new();
    for id in banks {
        let name = bank_service(id);
        let bank = Bank::recover(id.clone(), bank_cfg.clone(), storage(&name), clock.clone(), faults.clone())
            .map_err(|e| start(&name, e))?;
        let server = Server::spawn(bank_router(Arc::new(bank), keys())).map_err(|e| start(&name, e))?;
        bank_urls.insert(id.clone(), server.url());
        servers.push(server);
    }
    let mut stack = Stack {
        _servers: Vec::new(),
        storages: BTreeMap::new(),
        core_url,
        bank_urls,
        pip_url: String::new(),
    };

    let mut eco_cfg = EcoConfig::new(ECO)
        .with_caller(PIP, Role::Pip)
        .with_caller(OPERATOR, Role::Operator);
    for u in users {
        eco_cfg.identity.verdicts.insert(u.clone(), true);
    }
    let eco = Ecosystem::recover(
        eco_cfg,
        storage(ECO),
        clock.clone(),
        faults.clone(),
        Arc::new(HttpCore::new(stack.core_url.clone(), key_of(ECO))),
        stack.banks(ECO),
    )
    .map_err(|e| start(ECO, e))?;
    let server = Server::spawn(eco_router(Arc::new(eco), keys())).map_err(|e| start(ECO, e))?;
    let eco_url = server.url();
    servers.push(server);

    let pip_cfg = PipConfig::new(PIP_ID, format!("pip-key-{}", cfg.seed).into_bytes(), cfg.seed)
        .with_caller(APP, Role::Operator)
        .with_caller(OPERATOR, Role::Operator);
    let pip = Pip::recover(
        pip_cfg,
        storage(PIP),
        clock,
        faults,
        Arc::new(HttpCore::new(stack.core_url.clone(), "k-core-pip")),
        Arc::new(HttpEco::new(eco_url, key_of(PIP))),
        stack.banks(PIP),
    )
    .map_err(|e| start(PIP, e))?;
    let server = Server::spawn(pip_router(Arc::new(pip), keys())).map_err(|e| start(PIP, e))?;
    stack.pip_url = server.url();
    servers.push(server);

    stack._servers = servers;
    stack.storages = storages;
    Ok(stack)
}

fn setup(err: impl std::fmt::Display) -> SmokeError {
    SmokeError::Setup(err.to_string())
}

/// Opens a deposit and a CBDC account for every user, through the same HTTP
/// surfaces an operator would use.
fn lay_down(stack: &Stack, users: &[UserId], banks: &[BankId], deposit: i64) -> Result<(), SmokeError> {
    let core = HttpCore::new(stack.core_url.clone(), key_of(OPERATOR));
    for b in banks {
        core.inject_reserves(b, Money::pence(deposit * users.len() as i64)).map_err(setup)?;
    }
    let pip = HttpPip::new(stack.pip_url.clone(), key_of(APP));
    for (i, u) in users.iter().enumerate() {
        let bank_id = &banks[i % banks.len()];
        let bank = HttpBank::new(bank_id.clone(), stack.bank_urls[bank_id].clone(), key_of(OPERATOR));
        let account = bank.open_account(u.as_str()).map_err(setup)?;
        bank.inject_cash(&account, Money::pence(deposit)).map_err(setup)?;
        bank.grant_consent(PIP, u.as_str()).map_err(setup)?;
        pip.onboard_user(&Onboarding {
            user_id: u.clone(),
            legal_name: format!("{u} Example"),
            documents: [("passport".to_string(), format!("PASSPORT-{u}"))].into(),
        })
        .map_err(setup)?;
        pip.open_cbdc_account(u).map_err(setup)?;
    }
    Ok(())
}

/// Sends `cfg.payments` payments with random rails and payees from
/// `cfg.threads` client threads, settles interbank messages, then checks
/// every invariant over the journals.
pub fn run_smoke(cfg: &SmokeConfig) -> Result<SmokeReport, SmokeError> {
    assert!(cfg.users >= 2 && cfg.threads > 0);
    let users: Vec<UserId> = (0..cfg.users).map(|i| UserId::new(format!("User{:02}", i + 1))).collect();
    let banks: Vec<BankId> = vec!["BANK_A".into(), "BANK_B".into()];
    let stack = boot(cfg, &users, &banks)?;
    lay_down(&stack, &users, &banks, 200_000)?;

    let committed = AtomicUsize::new(0);
    let rejected = AtomicUsize::new(0);
    let errors = AtomicUsize::new(0);
    let started = Instant::now();
    std::thread::scope(|scope| {
        for t in 0..cfg.threads {
            let share = cfg.payments / cfg.threads + usize::from(t < cfg.payments % cfg.threads);
            let (users, pip_url) = (&users, stack.pip_url.clone());
            let (committed, rejected, errors) = (&committed, &rejected, &errors);
            scope.spawn(move || {
                let pip = HttpPip::new(pip_url, key_of(APP));
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((t as u64 + 1) << 32));
                for n in 0..share {
                    let from = users.choose(&mut rng).expect("users");
                    let mut to = users.choose(&mut rng).expect("users");
                    while to == from {
                        to = users.choose(&mut rng).expect("users");
                    }
                    let rail = if rng.random_bool(0.5) { "cbdc" } else { "bank" };
                    let req = PaymentRequest {
                        payee: WirePayee {
                            rail: Some(rail.into()),
                            user: Some(to.to_string()),
                            ..Default::default()
                        },
                        amount: Money::pence(rng.random_range(1..=5_000)).to_string(),
                        preferred_rail: Some("auto".into()),
                        memo: None,
                        client_token: Some(format!("h{t}-{n}")),
                    };
                    match pip.submit_payment(from, &req) {
                        Ok(st) if st.state == InstructionState::Committed => committed.fetch_add(1, Ordering::Relaxed),
                        Ok(st) if st.state == InstructionState::Rejected => rejected.fetch_add(1, Ordering::Relaxed),
                        _ => errors.fetch_add(1, Ordering::Relaxed),
                    };
                }
            });
        }
    });
    let fps = FpsNetwork::new(0, FaultInjector::none());
    fps.drain(0, &stack.banks(FPS));
    let elapsed_ms = started.elapsed().as_millis();

    let violations = match StateExport::replay(stack.journals()) {
        Ok(export) => invariants::verify(&export),
        Err(e) => vec![invariants::Violation {
            invariant: invariants::JOURNAL_CHAIN,
            service: "system".into(),
            detail: e.to_string(),
        }],
    };
    Ok(SmokeReport {
        payments: cfg.payments,
        committed: committed.into_inner(),
        rejected: rejected.into_inner(),
        errors: errors.into_inner(),
        elapsed_ms,
        invariants: invariants::summarize(&violations),
    })
}
