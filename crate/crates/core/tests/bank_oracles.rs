//! Mock banks and the FPS rail against replay oracles.

use std::collections::BTreeMap;
use std::sync::Arc;

use cbdc_core::bank::{Bank, BankAccountRef, BankApi, BankConfig, BankError, BankEvent, LocalBank, PaymentInitiation};
use cbdc_core::fault::{FaultInjector, FaultKind, FaultSpec, InjectionPoint};
use cbdc_core::fps::{BankSet, FpsNetwork};
use cbdc_core::journal::{read_events, MemoryStorage, Storage};
use cbdc_core::node::Node;
use cbdc_core::{AccountId, BankId, LogicalClock, Money, Role, WireError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ECO: &str = "eco";
const OPS: &str = "ops";

fn config() -> BankConfig {
    BankConfig::default()
        .with_caller(ECO, Role::Ecosystem)
        .with_caller(OPS, Role::Operator)
        .with_caller("fps", Role::Network)
}

fn bank(id: &str, storage: Arc<MemoryStorage>, faults: FaultInjector) -> Bank {
    Bank::recover(id.into(), config(), storage, LogicalClock::new(), faults).unwrap()
}

#[test]
fn crash_between_prepare_and_commit_debits_once() {
    let storage = MemoryStorage::new();
    let faults = FaultInjector::none();
    let node = {
        let (storage, faults) = (storage.clone(), faults.clone());
        Node::start("bank:BANK_A", move || {
            Bank::recover("BANK_A".into(), config(), storage.clone(), LogicalClock::new(), faults.clone())
                .map_err(|e| e.to_string())
        })
        .unwrap()
    };
    let b = node.current();
    let acct = b.open_account(OPS, "User1").unwrap();
    b.inject_cash(OPS, &acct, Money::pence(1000)).unwrap();
    faults.arm(FaultSpec {
        target: "bank:BANK_A".into(),
        point: InjectionPoint::AfterEvent {
            kind: "hold_placed".into(),
        },
        kind: FaultKind::Crash,
        times: 1,
    });
    let client = LocalBank::new("BANK_A".into(), node.clone(), ECO);
    let lost = client.prepare_debit(&"i1#0".into(), &acct, Money::pence(400));
    assert!(lost.unwrap_err().is_unavailable());
    assert_eq!(node.restarts(), 1);
    // The coordinator retries with the same key, then commits.
    let hold = client.prepare_debit(&"i1#0".into(), &acct, Money::pence(400)).unwrap();
    assert!(hold.replayed);
    client.commit_debit(&hold.hold_id).unwrap();
    assert!(matches!(
        client.commit_debit(&hold.hold_id),
        Err(BankError::WrongState { .. })
    ));
    // Journal fold: one hold, one commit, and the balance it implies.
    let events = read_events(&storage.load().unwrap()).unwrap();
    let decoded: Vec<BankEvent> = events.iter().map(|e| e.decode().unwrap()).collect();
    let holds = decoded.iter().filter(|e| matches!(e, BankEvent::HoldPlaced { .. })).count();
    let commits = decoded.iter().filter(|e| matches!(e, BankEvent::HoldCommitted { .. })).count();
    assert_eq!((holds, commits), (1, 1));
    assert_eq!(client.ob_get_balance(&acct).unwrap(), Money::pence(600));
    assert_eq!(node.current().export().accounts[&acct].earmarked, Money::ZERO);
}

struct TwoBanks {
    banks: BTreeMap<BankId, Arc<Bank>>,
    rail_view: BankSet,
    accounts: Vec<BankAccountRef>,
}

fn two_banks(faults: &FaultInjector) -> TwoBanks {
    let mut banks = BTreeMap::new();
    let mut rail_view: BankSet = BTreeMap::new();
    let mut accounts = Vec::new();
    for id in ["BANK_A", "BANK_B"] {
        let b = Arc::new(bank(id, MemoryStorage::new(), faults.clone()));
        for n in 0..3 {
            let a = b.open_account(OPS, &format!("{id}-cust{n}")).unwrap();
            b.inject_cash(OPS, &a, Money::pence(2_000)).unwrap();
            accounts.push(BankAccountRef {
                bank_id: id.into(),
                account_id: a,
            });
        }
        rail_view.insert(id.into(), Arc::new(LocalBank::new(id.into(), b.clone(), "fps")));
        banks.insert(BankId::from(id), b);
    }
    TwoBanks {
        banks,
        rail_view,
        accounts,
    }
}

impl TwoBanks {
    fn balance(&self, r: &BankAccountRef) -> i64 {
        self.banks[&r.bank_id].ob_get_balance(OPS, &r.account_id).unwrap().minor_units()
    }

    fn holds_identity(&self) -> bool {
        let (mut held, mut injected) = (0, 0);
        for b in self.banks.values() {
            let t = b.totals().unwrap();
            held += t.deposits.minor_units() + t.earmarked.minor_units() + t.fps_outbound_pending.minor_units();
            injected += t.cash_injected.minor_units();
        }
        held == injected
    }
}

#[test]
fn random_two_bank_traffic_matches_replay_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let faults = FaultInjector::none();
    let sys = two_banks(&faults);
    let rail = FpsNetwork::new(2, faults.clone());
    let mut oracle: BTreeMap<BankAccountRef, i64> = sys.accounts.iter().map(|a| (a.clone(), 2_000)).collect();
    let ghost = BankAccountRef {
        bank_id: "BANK_B".into(),
        account_id: AccountId::from("BANK_B-999999"),
    };
    let mut now = 0;
    for i in 0..400 {
        now += 1;
        if rng.random_bool(0.1) {
            faults.arm(FaultSpec {
                target: "fps".into(),
                point: InjectionPoint::FpsTransit,
                kind: if rng.random_bool(0.5) {
                    FaultKind::DuplicateDelivery
                } else {
                    FaultKind::Delay {
                        ticks: rng.random_range(1..5),
                    }
                },
                times: 1,
            });
        }
        let from = sys.accounts[rng.random_range(0..sys.accounts.len())].clone();
        let to = if rng.random_bool(0.05) {
            ghost.clone()
        } else {
            sys.accounts[rng.random_range(0..sys.accounts.len())].clone()
        };
        let amount = rng.random_range(1..800);
        let req = PaymentInitiation {
            instruction_id: format!("p{i}").into(),
            from_account: from.account_id.clone(),
            beneficiary: to.clone(),
            amount: Money::pence(amount),
        };
        let result = sys.banks[&from.bank_id].ob_initiate_payment(ECO, &req);
        match result {
            Ok(_) if from == to => unreachable!("same-account payments are refused"),
            Ok(_) => {
                *oracle.get_mut(&from).unwrap() -= amount;
                // Unknown beneficiaries bounce back to the payer.
                let credited = if to == ghost { &from } else { &to };
                *oracle.get_mut(credited).unwrap() += amount;
            }
            // Credits still in transit are not yet spendable.
            Err(BankError::InsufficientFunds(_)) => assert!(sys.balance(&from) < amount),
            Err(BankError::SameAccount) => assert_eq!(from, to),
            // Intra-bank beneficiaries are checked on the spot.
            Err(BankError::UnknownAccount(_)) => assert!(to == ghost && from.bank_id == ghost.bank_id),
            Err(e) => panic!("{e}"),
        }
        // A replayed initiation never posts twice.
        if rng.random_bool(0.1) {
            let _ = sys.banks[&from.bank_id].ob_initiate_payment(ECO, &req);
        }
        rail.pump(now, &sys.rail_view);
        assert!(sys.holds_identity(), "conservation broken at step {i}");
    }
    rail.drain(now, &sys.rail_view);
    assert_eq!(rail.in_transit(), 0);
    for (account, expected) in &oracle {
        assert_eq!(sys.balance(account), *expected, "{account:?}");
    }
    for b in sys.banks.values() {
        assert_eq!(b.totals().unwrap().fps_outbound_pending, Money::ZERO);
    }
}

#[test]
fn recovered_banks_equal_live_banks() {
    let faults = FaultInjector::none();
    let storage = MemoryStorage::new();
    let live = bank("BANK_A", storage.clone(), faults.clone());
    let a = live.open_account(OPS, "x").unwrap();
    let b = live.open_account(OPS, "y").unwrap();
    live.inject_cash(OPS, &a, Money::pence(900)).unwrap();
    let h = live.prepare_debit(ECO, &"h".into(), &a, Money::pence(100)).unwrap();
    live.credit(ECO, &"c".into(), &b, Money::pence(50)).unwrap();
    live.abort_debit(ECO, &h.hold_id).unwrap();
    let replayed = bank("BANK_A", storage, faults);
    assert_eq!(replayed.export(), live.export());
    assert_eq!(replayed.head_hash(), live.head_hash());
}
