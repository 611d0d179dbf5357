//! Declarative programs: a trigger, an optional condition and one action.
//!
//! Evaluation is pure: given the program, the tick and a balance snapshot of
//! the owner's accounts it decides whether to act and what instruction to
//! emit. Fetching snapshots and running emitted instructions through the
//! payment pipeline is the ecosystem's job.

use serde::{Deserialize, Serialize};

use super::standards::{validate, Rail, WireInstruction, WirePayee, WirePayer};
use crate::bank::BankAccountRef;
use crate::ids::{AccountId, InstructionId, ProgramId, Tick, UserId};
use crate::money::{Money, CURRENCY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Trigger {
    OnTick,
    OnBalanceChange,
    OnSchedule { interval: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CbdcBalance,
    BankBalance,
    /// Amount of a payment arriving at the owner; only meaningful for reject.
    IncomingAmount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Gt,
    Lt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub metric: Metric,
    pub op: Comparison,
    pub threshold: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayTemplate {
    pub payee: WirePayee,
    pub amount: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preferred_rail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memo: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    /// Moves everything above `target_balance` on `from_rail` to the owner's
    /// account on `to_rail`.
    Sweep {
        from_rail: Rail,
        to_rail: Rail,
        target_balance: Money,
    },
    Pay {
        template: PayTemplate,
    },
    /// Refuses incoming payments to the owner's accounts while the condition
    /// holds.
    Reject,
}

/// The owner's accounts a program may read and move value between.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramAccounts {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cbdc: Option<AccountId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<BankAccountRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramSpec {
    pub owner: UserId,
    pub trigger: Trigger,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    pub action: Action,
    pub accounts: ProgramAccounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub program_id: ProgramId,
    pub spec: ProgramSpec,
    pub registered_at: Tick,
}

/// Balances of a program's accounts at one tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cbdc: Option<Money>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<Money>,
}

impl Snapshot {
    pub fn on(&self, rail: Rail) -> Option<Money> {
        match rail {
            Rail::Cbdc => self.cbdc,
            Rail::Bank => self.bank,
        }
    }
}

pub fn program_id(n: u64) -> ProgramId {
    ProgramId::new(format!("prog-{n:06}"))
}

pub fn generated_instruction_id(program: &ProgramId, tick: Tick) -> InstructionId {
    InstructionId::new(format!("prg-{program}-{tick}"))
}

/// Shape checks that need no ledger access. Returns the reason on failure.
pub fn check(spec: &ProgramSpec) -> Result<(), String> {
    if let Trigger::OnSchedule { interval: 0 } = spec.trigger {
        return Err("schedule interval must be positive".into());
    }
    let has = |rail: Rail| match rail {
        Rail::Cbdc => spec.accounts.cbdc.is_some(),
        Rail::Bank => spec.accounts.bank.is_some(),
    };
    if let Some(c) = &spec.condition {
        match c.metric {
            Metric::IncomingAmount if spec.action != Action::Reject => {
                return Err("incoming_amount is only available to reject programs".into())
            }
            Metric::CbdcBalance if !has(Rail::Cbdc) => return Err("condition reads an unlisted cbdc account".into()),
            Metric::BankBalance if !has(Rail::Bank) => return Err("condition reads an unlisted bank account".into()),
            _ => {}
        }
    }
    match &spec.action {
        Action::Sweep { from_rail, to_rail, .. } => {
            if from_rail == to_rail {
                return Err("sweep needs two different rails".into());
            }
            if !has(*from_rail) || !has(*to_rail) {
                return Err("sweep needs an account on both rails".into());
            }
        }
        Action::Pay { template } => {
            let probe = pay_instruction(&spec.owner, template, "probe".into());
            if let Err(v) = validate(&probe) {
                let codes: Vec<_> = v.iter().map(|x| format!("{}:{}", x.code, x.field)).collect();
                return Err(format!("template violates the data standard: {}", codes.join(",")));
            }
        }
        Action::Reject => {
            if !has(Rail::Cbdc) && !has(Rail::Bank) {
                return Err("reject needs at least one account".into());
            }
        }
    }
    Ok(())
}

/// Programs take effect from the tick after registration.
pub fn is_due(p: &Program, tick: Tick, observed: &Snapshot, current: &Snapshot) -> bool {
    if tick <= p.registered_at {
        return false;
    }
    match p.spec.trigger {
        Trigger::OnTick => true,
        Trigger::OnBalanceChange => observed != current,
        Trigger::OnSchedule { interval } => (tick - p.registered_at) % interval == 0,
    }
}

/// Strict comparison; a metric with no value never satisfies it.
pub fn holds(condition: Option<&Condition>, snapshot: &Snapshot, incoming: Option<Money>) -> bool {
    let Some(c) = condition else { return true };
    let value = match c.metric {
        Metric::CbdcBalance => snapshot.cbdc,
        Metric::BankBalance => snapshot.bank,
        Metric::IncomingAmount => incoming,
    };
    match (value, c.op) {
        (Some(v), Comparison::Gt) => v > c.threshold,
        (Some(v), Comparison::Lt) => v < c.threshold,
        (None, _) => false,
    }
}

fn pay_instruction(owner: &UserId, t: &PayTemplate, id: InstructionId) -> WireInstruction {
    WireInstruction {
        instruction_id: Some(id.to_string()),
        payer: Some(WirePayer {
            user: Some(owner.to_string()),
            preferred_rail: t.preferred_rail.clone(),
        }),
        payee: Some(t.payee.clone()),
        amount: Some(t.amount.clone()),
        currency: Some(CURRENCY.to_string()),
        memo: t.memo.clone(),
    }
}

fn own_payee(accounts: &ProgramAccounts, rail: Rail) -> Option<WirePayee> {
    match rail {
        Rail::Cbdc => accounts.cbdc.as_ref().map(|a| WirePayee {
            rail: Some("cbdc".into()),
            account_id: Some(a.to_string()),
            ..Default::default()
        }),
        Rail::Bank => accounts.bank.as_ref().map(|r| WirePayee {
            rail: Some("bank".into()),
            bank_id: Some(r.bank_id.to_string()),
            account_id: Some(r.account_id.to_string()),
            ..Default::default()
        }),
    }
}

/// The instruction a due program emits at `tick`, if its condition holds
/// and the action has something to do.
pub fn action_instruction(p: &Program, tick: Tick, snapshot: &Snapshot) -> Option<WireInstruction> {
    if !holds(p.spec.condition.as_ref(), snapshot, None) {
        return None;
    }
    let id = generated_instruction_id(&p.program_id, tick);
    match &p.spec.action {
        Action::Sweep {
            from_rail,
            to_rail,
            target_balance,
        } => {
            let balance = snapshot.on(*from_rail)?;
            if balance <= *target_balance {
                return None;
            }
            let amount = balance.checked_sub(*target_balance).ok()?;
            Some(WireInstruction {
                instruction_id: Some(id.to_string()),
                payer: Some(WirePayer {
                    user: Some(p.spec.owner.to_string()),
                    preferred_rail: Some(from_rail.as_str().to_string()),
                }),
                payee: Some(own_payee(&p.spec.accounts, *to_rail)?),
                amount: Some(amount.to_string()),
                currency: Some(CURRENCY.to_string()),
                memo: Some(format!("sweep {}", p.program_id)),
            })
        }
        Action::Pay { template } => Some(pay_instruction(&p.spec.owner, template, id)),
        Action::Reject => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep(target: i64) -> Program {
        Program {
            program_id: program_id(1),
            spec: ProgramSpec {
                owner: "User1".into(),
                trigger: Trigger::OnTick,
                condition: None,
                action: Action::Sweep {
                    from_rail: Rail::Cbdc,
                    to_rail: Rail::Bank,
                    target_balance: Money::pence(target),
                },
                accounts: ProgramAccounts {
                    cbdc: Some("cb-000001".into()),
                    bank: Some(BankAccountRef {
                        bank_id: "BANK_A".into(),
                        account_id: "BANK_A-000001".into(),
                    }),
                },
            },
            registered_at: 0,
        }
    }

    fn snap(cbdc: i64) -> Snapshot {
        Snapshot {
            cbdc: Some(Money::pence(cbdc)),
            bank: Some(Money::ZERO),
        }
    }

    #[test]
    fn sweep_moves_excess() {
        let w = action_instruction(&sweep(5000), 3, &snap(8000)).unwrap();
        assert_eq!(w.amount.as_deref(), Some("30.00"));
        assert_eq!(w.instruction_id.as_deref(), Some("prg-prog-000001-3"));
        let p = validate(&w).unwrap();
        assert_eq!(p.payee.rail, Rail::Bank);
        assert_eq!(p.payer.preferred_rail, super::super::standards::RailPreference::Cbdc);
    }

    #[test]
    fn sweep_at_target_is_idle() {
        assert!(action_instruction(&sweep(5000), 3, &snap(5000)).is_none());
        assert!(action_instruction(&sweep(5000), 3, &snap(4999)).is_none());
    }

    #[test]
    fn registration_checks() {
        let mut p = sweep(5000);
        assert!(check(&p.spec).is_ok());
        p.spec.trigger = Trigger::OnSchedule { interval: 0 };
        assert!(check(&p.spec).is_err());
        let mut p = sweep(5000);
        p.spec.accounts.bank = None;
        assert!(check(&p.spec).is_err());
        let mut p = sweep(5000);
        p.spec.condition = Some(Condition {
            metric: Metric::IncomingAmount,
            op: Comparison::Gt,
            threshold: Money::ZERO,
        });
        assert!(check(&p.spec).is_err());
        p.spec.action = Action::Pay {
            template: PayTemplate {
                payee: WirePayee {
                    rail: Some("cbdc".into()),
                    user: Some("User2".into()),
                    ..Default::default()
                },
                amount: "1.5".into(),
                preferred_rail: None,
                memo: None,
            },
        };
        p.spec.condition = None;
        assert!(check(&p.spec).unwrap_err().contains("MALFORMED_AMOUNT"));
    }

    #[test]
    fn triggers() {
        let mut p = sweep(0);
        p.registered_at = 10;
        let s = snap(1);
        assert!(!is_due(&p, 10, &s, &s));
        assert!(is_due(&p, 11, &s, &s));
        p.spec.trigger = Trigger::OnSchedule { interval: 3 };
        let due: Vec<_> = (10..20).filter(|t| is_due(&p, *t, &s, &s)).collect();
        assert_eq!(due, [13, 16, 19]);
        p.spec.trigger = Trigger::OnBalanceChange;
        assert!(!is_due(&p, 11, &s, &s));
        assert!(is_due(&p, 11, &s, &snap(2)));
    }

    #[test]
    fn conditions_are_strict() {
        let c = Condition {
            metric: Metric::CbdcBalance,
            op: Comparison::Gt,
            threshold: Money::pence(5000),
        };
        assert!(!holds(Some(&c), &snap(5000), None));
        assert!(holds(Some(&c), &snap(5001), None));
        let lt = Condition { op: Comparison::Lt, ..c };
        assert!(!holds(Some(&lt), &snap(5000), None));
        let incoming = Condition {
            metric: Metric::IncomingAmount,
            ..c
        };
        assert!(!holds(Some(&incoming), &snap(0), None));
        assert!(holds(Some(&incoming), &snap(0), Some(Money::pence(5001))));
    }
}
