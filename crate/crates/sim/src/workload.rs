//! Seeded random workloads: many users, two banks, one PIP, a mix of
//! account opening, funding, defunding and payments on both rails. No money
//! enters after boot, so the totals at the end must equal the topology's.

use cbdc_core::{BankId, UserId};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::{Action, BankSetup, Expect, Scenario, Step, Topology, UserSetup};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadConfig {
    pub seed: u64,
    pub ops: usize,
    pub users: usize,
    pub ops_per_tick: usize,
    /// Opening deposit per user, in pence.
    pub deposit: i64,
    /// Largest single amount, in pence.
    pub max_amount: i64,
}

impl WorkloadConfig {
    pub fn new(seed: u64, ops: usize) -> Self {
        Self {
            seed,
            ops,
            users: 20,
            ops_per_tick: 10,
            deposit: 500_000,
            max_amount: 20_000,
        }
    }
}

const BANKS: [&str; 2] = ["BANK_A", "BANK_B"];

fn user_id(i: usize) -> UserId {
    UserId::new(format!("User{:02}", i + 1))
}

/// Users alternate between the two banks; every fifth starts without a
/// CBDC account and opens one during the run.
fn topology(cfg: &WorkloadConfig) -> Topology {
    let reserves = cfg.deposit * cfg.users as i64;
    Topology {
        banks: BANKS
            .iter()
            .map(|b| BankSetup {
                id: BankId::from(*b),
                reserves,
            })
            .collect(),
        users: (0..cfg.users)
            .map(|i| UserSetup {
                bank: Some(BankId::from(BANKS[i % 2])),
                deposit: cfg.deposit,
                cbdc: i % 5 != 4,
                ..UserSetup::new(user_id(i).as_str())
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Fund,
    Defund,
    CbdcPay,
    BankPay,
    CrossRail,
}

const MIX: [(Kind, u32); 5] = [
    (Kind::Fund, 15),
    (Kind::Defund, 10),
    (Kind::CbdcPay, 27),
    (Kind::BankPay, 31),
    (Kind::CrossRail, 17),
];

fn pick_kind(rng: &mut ChaCha8Rng) -> Kind {
    let total: u32 = MIX.iter().map(|(_, w)| w).sum();
    let mut roll = rng.random_range(0..total);
    for (kind, weight) in MIX {
        if roll < weight {
            return kind;
        }
        roll -= weight;
    }
    unreachable!("roll is below the total weight")
}

/// Builds a scenario of `cfg.ops` operations. The same config always gives
/// the same scenario.
pub fn generate(cfg: &WorkloadConfig) -> Scenario {
    assert!(cfg.users >= 2 && cfg.ops_per_tick > 0 && cfg.max_amount > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scenario = Scenario::new(format!("workload-{}", cfg.seed), cfg.seed, topology(cfg));
    let users: Vec<UserId> = (0..cfg.users).map(user_id).collect();
    let late: Vec<&UserId> = scenario.topology.users.iter().filter(|u| !u.cbdc).map(|u| &u.id).collect();
    // Late openers open somewhere in the first tenth of the run.
    let window = (cfg.ops / 10).max(late.len() + 1);
    let mut opens: Vec<(usize, UserId)> = late.iter().map(|u| (rng.random_range(0..window), (*u).clone())).collect();
    opens.sort();

    let mut steps = Vec::with_capacity(cfg.ops);
    let mut payments = 0usize;
    for n in 0..cfg.ops {
        let tick = (n / cfg.ops_per_tick) as u64 + 1;
        let action = if let Some(pos) = opens.iter().position(|(at, _)| *at <= n) {
            Action::OpenCbdc { user: opens.remove(pos).1 }
        } else {
            let from = users.choose(&mut rng).expect("users").clone();
            let pence = rng.random_range(1..=cfg.max_amount);
            match pick_kind(&mut rng) {
                Kind::Fund => Action::Fund { user: from, pence },
                Kind::Defund => Action::Defund { user: from, pence },
                kind => {
                    let mut to = users.choose(&mut rng).expect("users").clone();
                    while to == from {
                        to = users.choose(&mut rng).expect("users").clone();
                    }
                    let (rail, prefer) = match kind {
                        Kind::CbdcPay => ("cbdc", "cbdc"),
                        Kind::BankPay => ("bank", "bank"),
                        _ if rng.random_bool(0.5) => ("cbdc", "bank"),
                        _ => ("bank", "cbdc"),
                    };
                    payments += 1;
                    Action::Pay {
                        from,
                        to,
                        pence,
                        rail: Some(rail.into()),
                        prefer: Some(prefer.into()),
                        token: Some(format!("t{payments}")),
                    }
                }
            }
        };
        steps.push(Step {
            tick,
            action,
            expect: Expect::default(),
        });
    }
    scenario.steps = steps;
    scenario
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    #[test]
    fn same_seed_same_workload() {
        let cfg = WorkloadConfig::new(42, 500);
        assert_eq!(generate(&cfg), generate(&cfg));
        assert_ne!(generate(&cfg), generate(&WorkloadConfig::new(43, 500)));
    }

    #[test]
    fn every_kind_of_operation_appears() {
        let s = generate(&WorkloadConfig::new(1, 2_000));
        assert_eq!(s.steps.len(), 2_000);
        let names: BTreeSet<&str> = s.steps.iter().map(|st| st.action.name()).collect();
        for n in ["open_cbdc", "fund", "defund", "pay"] {
            assert!(names.contains(n), "{n} missing");
        }
        let rails: BTreeSet<(String, String)> = s
            .steps
            .iter()
            .filter_map(|st| match &st.action {
                Action::Pay { rail, prefer, .. } => Some((rail.clone()?, prefer.clone()?)),
                _ => None,
            })
            .collect();
        assert_eq!(rails.len(), 4, "{rails:?}");
        let opens = s.steps.iter().filter(|st| st.action.name() == "open_cbdc").count();
        assert_eq!(opens, s.topology.users.iter().filter(|u| !u.cbdc).count());
    }

    #[test]
    fn ticks_advance_and_the_scenario_round_trips() {
        let s = generate(&WorkloadConfig::new(9, 95));
        assert_eq!(s.last_tick(), 10);
        assert!(s.steps.windows(2).all(|w| w[0].tick <= w[1].tick));
        assert_eq!(Scenario::parse(&s.to_jsonl()).unwrap(), s);
    }
}
