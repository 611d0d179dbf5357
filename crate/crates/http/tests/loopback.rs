//! Every service behind its own loopback server, wired together only through
//! the HTTP clients.

use std::collections::BTreeMap;
use std::sync::Arc;

use cbdc_core::bank::{Bank, BankApi, BankConfig, BankError, FpsOutcome};
use cbdc_core::ecosystem::standards::WirePayee;
use cbdc_core::ecosystem::{EcoConfig, EcoError, Ecosystem, EcosystemApi, InstructionState};
use cbdc_core::fault::FaultInjector;
use cbdc_core::fps::{BankSet, FpsNetwork};
use cbdc_core::journal::MemoryStorage;
use cbdc_core::ledger::{CoreConfig, CoreError, CoreLedger, CoreLedgerApi, FundingRequest, TransferRequest};
use cbdc_core::pip::{Onboarding, PaymentRequest, Pip, PipApi, PipConfig, PipError};
use cbdc_core::{LogicalClock, Money, Page, Role, WireError};
use cbdc_http::routes::{bank_router, core_router, eco_router, pip_router};
use cbdc_http::{ApiKeys, HttpBank, HttpCore, HttpEco, HttpPip, Server};

struct Stack {
    _servers: Vec<Server>,
    core_url: String,
    bank_urls: BTreeMap<&'static str, String>,
    eco_url: String,
    pip_url: String,
}

fn keys() -> ApiKeys {
    ApiKeys::new()
        .with("k-pip", "pip:PIP1")
        .with("k-eco", "eco:ECO1")
        .with("k-ops", "harness")
        .with("k-fps", "fps")
        .with("k-app", "app")
}

fn stack() -> Stack {
    let clock = LogicalClock::new();
    let faults = FaultInjector::none();
    let mut servers = Vec::new();

    let core_cfg = CoreConfig::default()
        .with_caller("pip:PIP1", Role::Pip)
        .with_caller("eco:ECO1", Role::Ecosystem)
        .with_caller("harness", Role::Operator);
    let core = Arc::new(CoreLedger::recover(core_cfg, MemoryStorage::new(), clock.clone(), faults.clone()).unwrap());
    servers.push(Server::spawn(core_router(core, keys())).unwrap());
    let core_url = servers[0].url();

    let bank_cfg = BankConfig::default()
        .with_caller("eco:ECO1", Role::Ecosystem)
        .with_caller("pip:PIP1", Role::Pip)
        .with_caller("harness", Role::Operator)
        .with_caller("fps", Role::Network);
    let mut bank_urls = BTreeMap::new();
    for id in ["BANK_A", "BANK_B"] {
        let b = Arc::new(
            Bank::recover(id.into(), bank_cfg.clone(), MemoryStorage::new(), clock.clone(), faults.clone()).unwrap(),
        );
        let s = Server::spawn(bank_router(b, keys())).unwrap();
        bank_urls.insert(id, s.url());
        servers.push(s);
    }
    let bank_set = |key: &str| -> BankSet {
        bank_urls
            .iter()
            .map(|(id, url)| {
                let api: Arc<dyn BankApi> = Arc::new(HttpBank::new((*id).into(), url.clone(), key));
                ((*id).into(), api)
            })
            .collect()
    };

    let mut eco_cfg = EcoConfig::new("eco:ECO1")
        .with_caller("pip:PIP1", Role::Pip)
        .with_caller("harness", Role::Operator);
    for u in ["User1", "User2", "User4"] {
        eco_cfg.identity.verdicts.insert(u.into(), true);
    }
    let eco = Arc::new(
        Ecosystem::recover(
            eco_cfg,
            MemoryStorage::new(),
            clock.clone(),
            faults.clone(),
            Arc::new(HttpCore::new(core_url.clone(), "k-eco")),
            bank_set("k-eco"),
        )
        .unwrap(),
    );
    let s = Server::spawn(eco_router(eco, keys())).unwrap();
    let eco_url = s.url();
    servers.push(s);

    let pip = Arc::new(
        Pip::recover(
            PipConfig::new("PIP1", b"loopback".to_vec(), 3).with_caller("app", Role::Operator),
            MemoryStorage::new(),
            clock,
            faults,
            Arc::new(HttpCore::new(core_url.clone(), "k-pip")),
            Arc::new(HttpEco::new(eco_url.clone(), "k-pip")),
            bank_set("k-pip"),
        )
        .unwrap(),
    );
    let s = Server::spawn(pip_router(pip, keys())).unwrap();
    let pip_url = s.url();
    servers.push(s);

    Stack {
        _servers: servers,
        core_url,
        bank_urls,
        eco_url,
        pip_url,
    }
}

fn person(user: &str) -> Onboarding {
    Onboarding {
        user_id: user.into(),
        legal_name: format!("{user} Example"),
        documents: [("passport".to_string(), format!("P-{user}"))].into(),
    }
}

fn to_user(user: &str, pence: i64, token: &str) -> PaymentRequest {
    PaymentRequest {
        payee: WirePayee {
            rail: Some("cbdc".into()),
            user: Some(user.into()),
            ..Default::default()
        },
        amount: Money::pence(pence).to_string(),
        preferred_rail: Some("auto".into()),
        memo: None,
        client_token: Some(token.into()),
    }
}

#[test]
fn payments_flow_through_every_surface() {
    let s = stack();
    let ops_core = HttpCore::new(&s.core_url, "k-ops");
    let bank_a = HttpBank::new("BANK_A".into(), &s.bank_urls["BANK_A"], "k-ops");
    let pip = HttpPip::new(&s.pip_url, "k-app");

    let a1 = bank_a.open_account("User1").unwrap();
    bank_a.inject_cash(&a1, Money::pence(5_000)).unwrap();
    bank_a.grant_consent("pip:PIP1", "User1").unwrap();

    for u in ["User1", "User2", "User4"] {
        pip.onboard_user(&person(u)).unwrap();
    }
    assert!(matches!(pip.onboard_user(&person("Mallory")), Err(PipError::KycFailed(_))));
    assert!(matches!(pip.onboard_user(&person("User1")), Err(PipError::DuplicateUser(_))));
    let c1 = pip.open_cbdc_account(&"User1".into()).unwrap();
    pip.open_cbdc_account(&"User2".into()).unwrap();

    // Bank-only money moves to a CBDC-only payee via defunding at the core.
    ops_core.inject_reserves(&"BANK_A".into(), Money::pence(5_000)).unwrap();
    let st = pip.submit_payment(&"User1".into(), &to_user("User2", 1_200, "t1")).unwrap();
    assert_eq!(st.state, InstructionState::Committed, "{st:?}");
    let again = pip.submit_payment(&"User1".into(), &to_user("User2", 1_200, "t1")).unwrap();
    assert_eq!(again.instruction_id, st.instruction_id);

    let p2 = pip.get_portfolio(&"User2".into()).unwrap();
    assert_eq!(p2.total(), Money::pence(1_200));
    let p1 = pip.get_portfolio(&"User1".into()).unwrap();
    assert_eq!(p1.total(), Money::pence(3_800));
    assert_eq!(p1.cbdc[0].account_id, c1);

    let eco = HttpEco::new(&s.eco_url, "k-ops");
    let by_id = eco.payment_status(&st.instruction_id).unwrap();
    assert_eq!(by_id.state, InstructionState::Committed);
    let report = eco.conservation_report().unwrap();
    assert!(report.balance_sheet_holds && report.money_holds, "{report:?}");

    let core = HttpCore::new(&s.core_url, "k-eco");
    assert_eq!(core.get_balance(&c1).unwrap(), Money::ZERO);
    let txs = core.list_transactions(&p2.cbdc[0].account_id, Page { page: 1, size: 10 }).unwrap();
    assert_eq!(txs.len(), 1);
    let totals = core.totals().unwrap();
    assert_eq!(totals.cbdc_outstanding, Money::pence(1_200));
}

#[test]
fn errors_keep_codes_and_variants_across_the_wire() {
    let s = stack();
    let core = HttpCore::new(&s.core_url, "k-eco");
    let missing = core.get_balance(&"cb-999999".into());
    assert!(matches!(missing, Err(CoreError::UnknownAccount(_))), "{missing:?}");
    let t = TransferRequest {
        instruction_id: "x".into(),
        from: "cb-000001".into(),
        to: "cb-000002".into(),
        amount: Money::pence(1),
    };
    assert!(matches!(core.transfer(&t), Err(CoreError::UnknownAccount(_))));
    let f = FundingRequest {
        instruction_id: "f".into(),
        bank_id: "BANK_Z".into(),
        account_id: "cb-000001".into(),
        amount: Money::pence(1),
    };
    assert_eq!(core.fund(&f).unwrap_err().code(), "UNKNOWN_BANK");

    // Only the PIP may open CBDC accounts.
    let opened = core.open_account(&"ab".repeat(32).into());
    assert!(matches!(opened, Err(CoreError::Unauthorized)), "{opened:?}");

    let fps_view = HttpBank::new("BANK_A".into(), &s.bank_urls["BANK_A"], "k-fps");
    assert!(fps_view.fps_outbox().unwrap().is_empty());
    let unknown = fps_view.fps_ack(&"m-1".into(), FpsOutcome::Settled);
    assert!(unknown.is_err());

    let eco = HttpEco::new(&s.eco_url, "k-ops");
    let nothing = eco.payment_status(&"nope".into());
    assert!(matches!(nothing, Err(EcoError::UnknownInstruction(_))), "{nothing:?}");
}

#[test]
fn unknown_keys_are_refused() {
    let s = stack();
    let core = HttpCore::new(&s.core_url, "wrong");
    let err = core.totals().unwrap_err();
    assert_eq!(err.code(), "UNAUTHORIZED");
    let bank = HttpBank::new("BANK_B".into(), &s.bank_urls["BANK_B"], "");
    assert!(matches!(bank.totals(), Err(BankError::Unauthorized)));

    let resp = ureq::get(format!("{}/cbdc/totals", s.core_url))
        .config()
        .http_status_as_error(false)
        .build()
        .call()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 401);
}

#[test]
fn malformed_json_gets_an_error_body() {
    let s = stack();
    let mut resp = ureq::post(format!("{}/eco/payments", s.eco_url))
        .header("x-api-key", "k-eco")
        .header("content-type", "application/json")
        .config()
        .http_status_as_error(false)
        .build()
        .send("{not json")
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let body: serde_json::Value = resp.body_mut().read_json().unwrap();
    assert_eq!(body["code"], "BAD_REQUEST");
    assert!(body["message"].is_string());
}

#[test]
fn a_dead_server_reads_as_unavailable() {
    let url = {
        let s = stack();
        s.core_url.clone()
    };
    let core = HttpCore::new(url, "k-eco");
    let err = core.totals().unwrap_err();
    assert!(err.is_unavailable(), "{err:?}");
}

#[test]
fn fps_moves_money_between_http_banks() {
    let s = stack();
    let ops_a = HttpBank::new("BANK_A".into(), &s.bank_urls["BANK_A"], "k-ops");
    let ops_b = HttpBank::new("BANK_B".into(), &s.bank_urls["BANK_B"], "k-ops");
    let a = ops_a.open_account("User1").unwrap();
    let b = ops_b.open_account("User3").unwrap();
    ops_a.inject_cash(&a, Money::pence(900)).unwrap();
    ops_a.grant_consent("eco:ECO1", "User1").unwrap();

    let eco_a = HttpBank::new("BANK_A".into(), &s.bank_urls["BANK_A"], "k-eco");
    let pay = cbdc_core::bank::PaymentInitiation {
        instruction_id: "p-1".into(),
        from_account: a.clone(),
        beneficiary: cbdc_core::bank::BankAccountRef {
            bank_id: "BANK_B".into(),
            account_id: b.clone(),
        },
        amount: Money::pence(300),
    };
    eco_a.ob_initiate_payment(&pay).unwrap();

    let mut fps_banks: BankSet = BTreeMap::new();
    for (id, url) in &s.bank_urls {
        fps_banks.insert((*id).into(), Arc::new(HttpBank::new((*id).into(), url.clone(), "k-fps")));
    }
    let net = FpsNetwork::new(0, FaultInjector::none());
    net.drain(0, &fps_banks);
    assert_eq!(ops_b.totals().unwrap().deposits, Money::pence(300));
    assert_eq!(ops_a.totals().unwrap().deposits, Money::pence(600));
}
