//! Common payment policy: per-transaction and per-user-per-day limits.
//!
//! Limits are inclusive. Daily windows use the logical clock.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::standards::{PaymentInstruction, Rail};
use crate::ids::{Tick, UserId, TICKS_PER_DAY};
use crate::money::{checked_sum, Money};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    PerTransaction,
    PerUserPerDay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub rule_id: String,
    pub scope: Scope,
    pub limit: Money,
    /// Empty means every rail.
    #[serde(default)]
    pub rails: BTreeSet<Rail>,
}

impl PolicyRule {
    fn applies(&self, instr: &PaymentInstruction) -> bool {
        self.rails.is_empty()
            || self.rails.contains(&instr.payee.rail)
            || instr.payer.preferred_rail.rails().iter().any(|r| self.rails.contains(r))
    }
}

/// A committed payment as seen by daily limits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpendRecord {
    pub user: UserId,
    pub at: Tick,
    pub amount: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum PolicyVerdict {
    Allow,
    Deny { rule_id: String },
}

pub fn day_of(tick: Tick) -> u64 {
    tick / TICKS_PER_DAY
}

/// First rule (in configured order) the instruction breaks, if any.
pub fn enforce(rules: &[PolicyRule], instr: &PaymentInstruction, now: Tick, history: &[SpendRecord]) -> PolicyVerdict {
    for rule in rules.iter().filter(|r| r.applies(instr)) {
        let total = match rule.scope {
            Scope::PerTransaction => Some(instr.amount),
            Scope::PerUserPerDay => checked_sum(
                history
                    .iter()
                    .filter(|h| h.user == instr.payer.user && day_of(h.at) == day_of(now))
                    .map(|h| h.amount)
                    .chain([instr.amount]),
            )
            .ok(),
        };
        // An overflowing sum is certainly over any limit.
        if total.is_none_or(|t| t > rule.limit) {
            return PolicyVerdict::Deny {
                rule_id: rule.rule_id.clone(),
            };
        }
    }
    PolicyVerdict::Allow
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecosystem::standards::{Payee, PayeeTarget, Payer, RailPreference};

    fn instr(user: &str, pence: i64) -> PaymentInstruction {
        PaymentInstruction {
            instruction_id: "i".into(),
            payer: Payer {
                user: user.into(),
                preferred_rail: RailPreference::Cbdc,
            },
            payee: Payee {
                rail: Rail::Cbdc,
                target: PayeeTarget::User { user: "User2".into() },
            },
            amount: Money::pence(pence),
            memo: String::new(),
        }
    }

    fn rule(id: &str, scope: Scope, limit: i64) -> PolicyRule {
        PolicyRule {
            rule_id: id.into(),
            scope,
            limit: Money::pence(limit),
            rails: BTreeSet::new(),
        }
    }

    #[test]
    fn per_transaction_limit_is_inclusive() {
        let rules = [rule("txn", Scope::PerTransaction, 1_000_000)];
        assert_eq!(enforce(&rules, &instr("User1", 1_000_000), 0, &[]), PolicyVerdict::Allow);
        assert_eq!(
            enforce(&rules, &instr("User1", 1_000_001), 0, &[]),
            PolicyVerdict::Deny { rule_id: "txn".into() }
        );
    }

    #[test]
    fn daily_limit_folds_history() {
        let rules = [rule("day", Scope::PerUserPerDay, 1_000_000)];
        let mut history = Vec::new();
        let mut verdicts = Vec::new();
        for i in 0..3 {
            let ins = instr("User1", 400_000);
            let v = enforce(&rules, &ins, 100 + i, &history);
            if v == PolicyVerdict::Allow {
                history.push(SpendRecord {
                    user: ins.payer.user.clone(),
                    at: 100 + i,
                    amount: ins.amount,
                });
            }
            verdicts.push(v);
        }
        // Oracle: running sums 400k, 800k, 1.2M against 1M.
        let expected: Vec<_> = [400_000, 800_000, 1_200_000]
            .iter()
            .map(|s| {
                if *s <= 1_000_000 {
                    PolicyVerdict::Allow
                } else {
                    PolicyVerdict::Deny { rule_id: "day".into() }
                }
            })
            .collect();
        assert_eq!(verdicts, expected);
    }

    #[test]
    fn daily_window_resets_and_is_per_user() {
        let rules = [rule("day", Scope::PerUserPerDay, 500)];
        let history = [SpendRecord {
            user: "User1".into(),
            at: TICKS_PER_DAY - 1,
            amount: Money::pence(500),
        }];
        assert_ne!(enforce(&rules, &instr("User1", 1), TICKS_PER_DAY - 1, &history), PolicyVerdict::Allow);
        assert_eq!(enforce(&rules, &instr("User1", 1), TICKS_PER_DAY, &history), PolicyVerdict::Allow);
        assert_eq!(enforce(&rules, &instr("User2", 1), TICKS_PER_DAY - 1, &history), PolicyVerdict::Allow);
    }

    #[test]
    fn rail_scoped_rule_only_hits_matching_rails() {
        let mut r = rule("bank-only", Scope::PerTransaction, 10);
        r.rails.insert(Rail::Bank);
        let rules = [r];
        assert_eq!(enforce(&rules, &instr("User1", 11), 0, &[]), PolicyVerdict::Allow);
        let mut auto = instr("User1", 11);
        auto.payer.preferred_rail = RailPreference::Auto;
        assert!(matches!(enforce(&rules, &auto, 0, &[]), PolicyVerdict::Deny { .. }));
    }
}
