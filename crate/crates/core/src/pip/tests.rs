use std::collections::BTreeSet;

use super::*;
use crate::bank::{Bank, BankConfig, LocalBank};
use crate::ecosystem::{EcoConfig, Ecosystem, InstructionState, LocalEco};
use crate::journal::MemoryStorage;
use crate::ledger::{CoreConfig, CoreLedger, FundingRequest, LocalCore};

const PIP: &str = "pip:PIP1";
const PIP2: &str = "pip:PIP2";
const ECO: &str = "eco:ECO1";
const OPS: &str = "harness";
const APP: &str = "app";

struct Rig {
    clock: LogicalClock,
    core: Arc<CoreLedger>,
    eco: Arc<Ecosystem>,
    banks: BTreeMap<&'static str, Arc<Bank>>,
    pip: Arc<Pip>,
    pip_storage: Arc<MemoryStorage>,
    rebuild: Box<dyn Fn(Arc<MemoryStorage>) -> Pip>,
}

fn rig() -> Rig {
    let clock = LogicalClock::new();
    let faults = FaultInjector::none();
    let core_cfg = CoreConfig::default()
        .with_caller(PIP, Role::Pip)
        .with_caller(PIP2, Role::Pip)
        .with_caller(ECO, Role::Ecosystem)
        .with_caller(OPS, Role::Operator);
    let core = Arc::new(CoreLedger::recover(core_cfg, MemoryStorage::new(), clock.clone(), faults.clone()).unwrap());
    let bank_cfg = BankConfig::default()
        .with_caller(ECO, Role::Ecosystem)
        .with_caller(OPS, Role::Operator)
        .with_caller(PIP, Role::Pip);
    let mut banks = BTreeMap::new();
    let mut eco_banks: BankSet = BTreeMap::new();
    let mut pip_banks: BankSet = BTreeMap::new();
    for id in ["BANK_A", "BANK_B"] {
        let b = Arc::new(
            Bank::recover(id.into(), bank_cfg.clone(), MemoryStorage::new(), clock.clone(), faults.clone()).unwrap(),
        );
        eco_banks.insert(id.into(), Arc::new(LocalBank::new(id.into(), b.clone(), ECO)));
        pip_banks.insert(id.into(), Arc::new(LocalBank::new(id.into(), b.clone(), PIP)));
        banks.insert(id, b);
    }
    let mut eco_cfg = EcoConfig::new(ECO)
        .with_caller(PIP, Role::Pip)
        .with_caller(PIP2, Role::Pip);
    for u in ["User1", "User2", "User3", "User4", "User5", "Fresh"] {
        eco_cfg.identity.verdicts.insert(u.into(), true);
    }
    let eco = Arc::new(
        Ecosystem::recover(
            eco_cfg,
            MemoryStorage::new(),
            clock.clone(),
            faults.clone(),
            Arc::new(LocalCore::new(core.clone(), ECO)),
            eco_banks,
        )
        .unwrap(),
    );
    let rebuild = {
        let (clock, core, eco) = (clock.clone(), core.clone(), eco.clone());
        move |storage: Arc<MemoryStorage>| {
            Pip::recover(
                PipConfig::new("PIP1", b"pip-secret".to_vec(), 7).with_caller(APP, Role::Operator),
                storage,
                clock.clone(),
                FaultInjector::none(),
                Arc::new(LocalCore::new(core.clone(), PIP)),
                Arc::new(LocalEco::new(eco.clone(), PIP)),
                pip_banks.clone(),
            )
            .unwrap()
        }
    };
    let pip_storage = MemoryStorage::new();
    Rig {
        clock,
        core,
        eco,
        banks,
        pip: Arc::new(rebuild(pip_storage.clone())),
        pip_storage,
        rebuild: Box::new(rebuild),
    }
}

fn person(user: &str) -> Onboarding {
    Onboarding {
        user_id: user.into(),
        legal_name: format!("{user} Example"),
        documents: [("passport".to_string(), format!("P-{user}"))].into(),
    }
}

impl Rig {
    fn bank_account(&self, bank: &'static str, user: &str, pence: i64) -> AccountId {
        let b = &self.banks[bank];
        let a = b.open_account(OPS, user).unwrap();
        if pence > 0 {
            b.inject_cash(OPS, &a, Money::pence(pence)).unwrap();
        }
        b.grant_consent(OPS, PIP, user).unwrap();
        a
    }

    /// Reference topology: User1 at Bank A and CBDC, User2 CBDC only,
    /// User3 Bank B only, User4 Bank B and CBDC, User5 CBDC only.
    fn fig2(&self) {
        self.bank_account("BANK_A", "User1", 0);
        self.bank_account("BANK_B", "User3", 0);
        self.bank_account("BANK_B", "User4", 0);
        for u in ["User1", "User2", "User3", "User4", "User5"] {
            self.pip.onboard_user(APP, &person(u)).unwrap();
        }
        for u in ["User1", "User2", "User4", "User5"] {
            self.pip.open_cbdc_account(APP, &u.into()).unwrap();
        }
    }

    fn cbdc_seed(&self, user: &str, pence: i64) {
        let account = self.pip.export().mappings[&UserId::from(user)].account_id.clone().unwrap();
        self.core.inject_reserves(OPS, &"BANK_A".into(), Money::pence(pence)).unwrap();
        self.core
            .fund(
                ECO,
                &FundingRequest {
                    instruction_id: format!("seed-{user}").into(),
                    bank_id: "BANK_A".into(),
                    account_id: account,
                    amount: Money::pence(pence),
                },
            )
            .unwrap();
    }

    fn portfolio(&self, user: &str) -> Portfolio {
        self.pip.get_portfolio(APP, &user.into()).unwrap()
    }

    fn cbdc_of(&self, user: &str) -> i64 {
        self.portfolio(user).cbdc.iter().map(|h| h.balance.minor_units()).sum()
    }
}

fn pay_to(user: &str, pence: i64, token: Option<&str>) -> PaymentRequest {
    PaymentRequest {
        payee: WirePayee {
            rail: Some("cbdc".into()),
            user: Some(user.into()),
            ..Default::default()
        },
        amount: Money::pence(pence).to_string(),
        preferred_rail: Some("auto".into()),
        memo: None,
        client_token: token.map(str::to_string),
    }
}

#[test]
fn onboarding_outcomes() {
    let r = rig();
    assert_eq!(r.pip.onboard_user(APP, &person("User1")).unwrap().as_str(), "User1");
    assert_eq!(r.pip.export().users[&UserId::from("User1")].kyc_status, KycStatus::Passed);
    assert!(matches!(r.pip.onboard_user(APP, &person("Mallory")), Err(PipError::KycFailed(_))));
    assert!(matches!(r.pip.onboard_user(APP, &person("User1")), Err(PipError::DuplicateUser(_))));
    assert!(matches!(r.pip.onboard_user(APP, &person("Mallory")), Err(PipError::DuplicateUser(_))));
    assert!(matches!(r.pip.onboard_user("stranger", &person("User2")), Err(PipError::Unauthorized)));
}

#[test]
fn failed_or_unknown_users_are_not_onboarded() {
    let r = rig();
    let _ = r.pip.onboard_user(APP, &person("Mallory"));
    for u in ["Mallory", "Nobody"] {
        let user = UserId::from(u);
        assert!(matches!(r.pip.derive_pseudonym(APP, &user), Err(PipError::UserNotOnboarded(_))));
        assert!(matches!(r.pip.open_cbdc_account(APP, &user), Err(PipError::UserNotOnboarded(_))));
        assert!(matches!(
            r.pip.submit_payment(APP, &user, &pay_to("User1", 1, None)),
            Err(PipError::UserNotOnboarded(_))
        ));
        assert!(matches!(r.pip.get_portfolio(APP, &user), Err(PipError::UserNotOnboarded(_))));
    }
    assert!(r.pip.export().mappings.is_empty());
}

#[test]
fn pseudonym_is_keyed_digest_of_user_and_salt() {
    let salt = salt_at(7, 0);
    assert_eq!(salt, salt_at(7, 0));
    assert_ne!(salt, salt_at(7, 1));
    assert_ne!(salt, salt_at(8, 0));
    let p = derive_pseudonym(b"k", &"User1".into(), &salt);
    assert_eq!(p, derive_pseudonym(b"k", &"User1".into(), &salt));
    assert_ne!(p, derive_pseudonym(b"k2", &"User1".into(), &salt));
    assert!(p.is_well_formed());
    // Independent digest of the concatenation.
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(b"k");
    h.update(b"User1");
    h.update(salt);
    assert_eq!(p.as_str(), hex::encode(h.finalize()));
}

#[test]
fn derived_mapping_is_stable_and_journaled_here_only() {
    let r = rig();
    r.fig2();
    let user = UserId::from("User2");
    let first = r.pip.derive_pseudonym(APP, &user).unwrap();
    assert_eq!(r.pip.derive_pseudonym(APP, &user).unwrap(), first);
    let m = &r.pip.export().mappings[&user];
    assert_eq!(first, derive_pseudonym(b"pip-secret", &user, &hex::decode(&m.salt).unwrap()));
    assert!(r.pip_storage.load().unwrap().contains(first.as_str()));
    // The core knows the pseudonym but never the user.
    let core_journal = r.core.storage().load().unwrap();
    assert!(core_journal.contains(first.as_str()));
    for u in ["User1", "User2", "User3", "User4", "User5", "Example", "passport"] {
        assert!(!core_journal.contains(u), "{u} leaked into the core journal");
    }
}

#[test]
fn fixture_population_has_distinct_unrevealing_pseudonyms() {
    let r = rig();
    let key = b"pip-secret";
    let mut seen = BTreeSet::new();
    for n in 0..2000u64 {
        let user = UserId::new(format!("user{n:05}"));
        let name = format!("Person {n}");
        let p = derive_pseudonym(key, &user, &salt_at(7, n));
        assert!(!p.as_str().contains(user.as_str()) && !p.as_str().contains(&name));
        seen.insert(p);
    }
    assert_eq!(seen.len(), 2000);
    drop(r);
}

#[test]
fn user1_pays_user4_through_the_pip() {
    let r = rig();
    r.fig2();
    r.cbdc_seed("User1", 1000);
    let s = r.pip.submit_payment(APP, &"User1".into(), &pay_to("User4", 400, None)).unwrap();
    assert_eq!(s.state, InstructionState::Committed);
    assert_eq!(s.instruction_id.as_str(), "PIP1-ins-00000001");
    assert_eq!((r.cbdc_of("User1"), r.cbdc_of("User4")), (600, 400));
}

#[test]
fn a_second_pip_serves_its_own_users_on_the_same_rail() {
    let r = rig();
    r.fig2();
    r.cbdc_seed("User1", 1000);
    let pip2 = Pip::recover(
        PipConfig::new("PIP2", b"other-secret".to_vec(), 11).with_caller(APP, Role::Operator),
        MemoryStorage::new(),
        r.clock.clone(),
        FaultInjector::none(),
        Arc::new(LocalCore::new(r.core.clone(), PIP2)),
        Arc::new(LocalEco::new(r.eco.clone(), PIP2)),
        BTreeMap::new(),
    )
    .unwrap();
    pip2.onboard_user(APP, &person("Fresh")).unwrap();
    pip2.open_cbdc_account(APP, &"Fresh".into()).unwrap();

    let s = r.pip.submit_payment(APP, &"User1".into(), &pay_to("Fresh", 300, None)).unwrap();
    assert_eq!(s.state, InstructionState::Committed);
    let back = pip2.submit_payment(APP, &"Fresh".into(), &pay_to("User1", 100, None)).unwrap();
    assert_eq!(back.state, InstructionState::Committed);
    assert!(back.instruction_id.as_str().starts_with("PIP2-"));

    let fresh: i64 = pip2.get_portfolio(APP, &"Fresh".into()).unwrap().cbdc.iter().map(|h| h.balance.minor_units()).sum();
    assert_eq!((r.cbdc_of("User1"), fresh), (800, 200));
    // Neither provider learns the other's customers.
    assert!(matches!(r.pip.get_portfolio(APP, &"Fresh".into()), Err(PipError::UserNotOnboarded(_))));
    assert!(matches!(pip2.get_portfolio(APP, &"User1".into()), Err(PipError::UserNotOnboarded(_))));
    assert!(!r.pip.export().users.contains_key(&UserId::from("Fresh")));
    assert_eq!(pip2.export().users.keys().map(|u| u.as_str()).collect::<Vec<_>>(), ["Fresh"]);
}

#[test]
fn client_retry_posts_once() {
    let r = rig();
    r.fig2();
    r.cbdc_seed("User1", 1000);
    let req = pay_to("User2", 250, Some("tok-1"));
    let a = r.pip.submit_payment(APP, &"User1".into(), &req).unwrap();
    let b = r.pip.submit_payment(APP, &"User1".into(), &req).unwrap();
    assert_eq!(a.instruction_id, b.instruction_id);
    assert!(b.replayed);
    assert_eq!((r.cbdc_of("User1"), r.cbdc_of("User2")), (750, 250));
    let changed = pay_to("User2", 251, Some("tok-1"));
    assert!(matches!(
        r.pip.submit_payment(APP, &"User1".into(), &changed),
        Err(PipError::Ecosystem(EcoError::IdempotencyConflict(_)))
    ));
    // Without a token every submission is a new payment.
    let untokened = pay_to("User2", 100, None);
    r.pip.submit_payment(APP, &"User1".into(), &untokened).unwrap();
    r.pip.submit_payment(APP, &"User1".into(), &untokened).unwrap();
    assert_eq!(r.cbdc_of("User2"), 450);
}

#[test]
fn portfolios_follow_topology() {
    let r = rig();
    r.fig2();
    let p5 = r.portfolio("User5");
    assert_eq!((p5.cbdc.len(), p5.bank.len()), (1, 0));
    let p3 = r.portfolio("User3");
    assert_eq!((p3.cbdc.len(), p3.bank.len()), (0, 1));
    let p1 = r.portfolio("User1");
    assert_eq!((p1.cbdc.len(), p1.bank.len()), (1, 1));
    r.bank_account("BANK_A", "Fresh", 0);
    r.pip.onboard_user(APP, &person("Fresh")).unwrap();
    r.pip.open_cbdc_account(APP, &"Fresh".into()).unwrap();
    let fresh = r.portfolio("Fresh");
    assert!(fresh.cbdc.iter().all(|h| h.balance.is_zero()) && fresh.bank.iter().all(|h| h.balance.is_zero()));
    assert_eq!(fresh.total(), Money::ZERO);
}

#[test]
fn portfolio_reads_bank_balances_through_consent() {
    let r = rig();
    r.bank_account("BANK_B", "User3", 900);
    // An account the user never consented to share stays invisible.
    r.banks["BANK_A"].open_account(OPS, "User3").unwrap();
    r.pip.onboard_user(APP, &person("User3")).unwrap();
    let p = r.portfolio("User3");
    assert_eq!(p.bank.len(), 1);
    assert_eq!((p.bank[0].bank_id.as_str(), p.bank[0].balance.minor_units()), ("BANK_B", 900));
}

#[test]
fn recovered_pip_continues_from_journal() {
    let r = rig();
    r.fig2();
    r.clock.advance_to(5);
    let live = r.pip.export();
    let again = (r.rebuild)(r.pip_storage.clone());
    assert_eq!(again.export(), live);
    again.onboard_user(APP, &person("Fresh")).unwrap();
    let p = again.derive_pseudonym(APP, &"Fresh".into()).unwrap();
    let m = &again.export().mappings[&UserId::from("Fresh")];
    assert_eq!(m.salt, hex::encode(salt_at(7, 4)));
    assert_eq!(m.created_at, 5);
    assert_eq!(p, derive_pseudonym(b"pip-secret", &"Fresh".into(), &salt_at(7, 4)));
}

#[test]
fn error_bodies_round_trip() {
    for e in [
        PipError::DuplicateUser("u".into()),
        PipError::KycFailed("u".into()),
        PipError::UserNotOnboarded("u".into()),
        PipError::Core(CoreError::DuplicatePseudonym("p".into())),
        PipError::Ecosystem(EcoError::IdempotencyConflict("i".into())),
        PipError::Unavailable("down".into()),
    ] {
        assert_eq!(PipError::from_body(e.to_body()), e);
    }
}
