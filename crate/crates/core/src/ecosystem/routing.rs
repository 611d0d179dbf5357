//! Rail selection and transfer-plan construction.
//!
//! Selection looks only at which rails hold enough funds, never at balance
//! magnitudes, so scaling every balance and the amount together cannot
//! change the outcome.

use serde::{Deserialize, Serialize};

use super::standards::{Rail, RailPreference};
use crate::bank::BankAccountRef;
use crate::ids::{AccountId, BankId, InstructionId};
use crate::money::Money;

/// Where value sits on one rail.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "rail", rename_all = "snake_case")]
pub enum Coordinates {
    Cbdc { account_id: AccountId },
    Bank { bank_id: BankId, account_id: AccountId },
}

impl Coordinates {
    pub fn rail(&self) -> Rail {
        match self {
            Coordinates::Cbdc { .. } => Rail::Cbdc,
            Coordinates::Bank { .. } => Rail::Bank,
        }
    }

    pub fn bank(r: &BankAccountRef) -> Self {
        Coordinates::Bank {
            bank_id: r.bank_id.clone(),
            account_id: r.account_id.clone(),
        }
    }

    pub fn account_id(&self) -> &AccountId {
        match self {
            Coordinates::Cbdc { account_id } | Coordinates::Bank { account_id, .. } => account_id,
        }
    }
}

/// A payer's funding options with current balances.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FundingOptions {
    pub cbdc: Option<(AccountId, Money)>,
    pub bank: Option<(BankAccountRef, Money)>,
}

impl FundingOptions {
    fn on(&self, rail: Rail) -> Option<(Coordinates, Money)> {
        match rail {
            Rail::Cbdc => self.cbdc.as_ref().map(|(a, m)| {
                (
                    Coordinates::Cbdc {
                        account_id: a.clone(),
                    },
                    *m,
                )
            }),
            Rail::Bank => self.bank.as_ref().map(|(r, m)| (Coordinates::bank(r), *m)),
        }
    }
}

/// Rails to try, best first.
pub fn candidates(pref: RailPreference, payee_rail: Rail) -> [Rail; 2] {
    match pref {
        RailPreference::Cbdc => [Rail::Cbdc, Rail::Bank],
        RailPreference::Bank => [Rail::Bank, Rail::Cbdc],
        RailPreference::Auto => [payee_rail, payee_rail.other()],
    }
}

/// First candidate holding at least `amount` that is not the payee account.
pub fn select_source(
    pref: RailPreference,
    payer: &FundingOptions,
    payee: &Coordinates,
    amount: Money,
) -> Option<Coordinates> {
    candidates(pref, payee.rail())
        .into_iter()
        .filter_map(|rail| payer.on(rail))
        .find(|(coords, balance)| *balance >= amount && coords != payee)
        .map(|(coords, _)| coords)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StepOp {
    CoreTransfer {
        from: AccountId,
        to: AccountId,
        amount: Money,
    },
    /// Reserves of `bank_id` become CBDC in `account_id`.
    CoreFund {
        bank_id: BankId,
        account_id: AccountId,
        amount: Money,
    },
    /// CBDC in `account_id` becomes reserves of `bank_id`.
    CoreDefund {
        bank_id: BankId,
        account_id: AccountId,
        amount: Money,
    },
    BankPayment {
        from: BankAccountRef,
        to: BankAccountRef,
        amount: Money,
    },
    BankHold {
        at: BankAccountRef,
        amount: Money,
    },
    BankCommitHold {
        bank_id: BankId,
        hold_step: usize,
    },
    BankAbortHold {
        bank_id: BankId,
        hold_step: usize,
    },
    BankCredit {
        to: BankAccountRef,
        amount: Money,
    },
}

impl StepOp {
    pub fn service(&self) -> String {
        match self {
            StepOp::CoreTransfer { .. } | StepOp::CoreFund { .. } | StepOp::CoreDefund { .. } => "core".to_string(),
            StepOp::BankPayment { from, .. } => crate::bank::service_name(&from.bank_id),
            StepOp::BankHold { at, .. } => crate::bank::service_name(&at.bank_id),
            StepOp::BankCredit { to, .. } => crate::bank::service_name(&to.bank_id),
            StepOp::BankCommitHold { bank_id, .. } | StepOp::BankAbortHold { bank_id, .. } => {
                crate::bank::service_name(bank_id)
            }
        }
    }

    pub fn operation(&self) -> &'static str {
        match self {
            StepOp::CoreTransfer { .. } => "transfer",
            StepOp::CoreFund { .. } => "fund",
            StepOp::CoreDefund { .. } => "defund",
            StepOp::BankPayment { .. } => "ob_initiate_payment",
            StepOp::BankHold { .. } => "prepare_debit",
            StepOp::BankCommitHold { .. } => "commit_debit",
            StepOp::BankAbortHold { .. } => "abort_debit",
            StepOp::BankCredit { .. } => "credit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prepare,
    Commit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub op: StepOp,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compensation: Option<StepOp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferPlan {
    pub plan_id: String,
    pub instruction_id: InstructionId,
    pub source: Coordinates,
    pub destination: Coordinates,
    pub amount: Money,
    pub steps: Vec<PlanStep>,
}

impl TransferPlan {
    pub fn route(&self) -> String {
        format!("{}->{}", self.source.rail().as_str(), self.destination.rail().as_str())
    }
}

fn step(op: StepOp, phase: Phase, compensation: Option<StepOp>) -> PlanStep {
    PlanStep { op, phase, compensation }
}

/// Builds the saga for moving `amount` from `source` to `destination`.
pub fn build_plan(
    plan_id: String,
    instruction_id: InstructionId,
    source: Coordinates,
    destination: Coordinates,
    amount: Money,
) -> TransferPlan {
    use Coordinates::*;
    let steps = match (&source, &destination) {
        (Cbdc { account_id: from }, Cbdc { account_id: to }) => vec![step(
            StepOp::CoreTransfer {
                from: from.clone(),
                to: to.clone(),
                amount,
            },
            Phase::Prepare,
            None,
        )],
        (Bank { bank_id: fb, account_id: fa }, Bank { bank_id: tb, account_id: ta }) => vec![step(
            StepOp::BankPayment {
                from: BankAccountRef {
                    bank_id: fb.clone(),
                    account_id: fa.clone(),
                },
                to: BankAccountRef {
                    bank_id: tb.clone(),
                    account_id: ta.clone(),
                },
                amount,
            },
            Phase::Prepare,
            None,
        )],
        (Bank { bank_id, account_id: from }, Cbdc { account_id: to }) => vec![
            step(
                StepOp::BankHold {
                    at: BankAccountRef {
                        bank_id: bank_id.clone(),
                        account_id: from.clone(),
                    },
                    amount,
                },
                Phase::Prepare,
                Some(StepOp::BankAbortHold {
                    bank_id: bank_id.clone(),
                    hold_step: 0,
                }),
            ),
            step(
                StepOp::CoreFund {
                    bank_id: bank_id.clone(),
                    account_id: to.clone(),
                    amount,
                },
                Phase::Prepare,
                Some(StepOp::CoreDefund {
                    bank_id: bank_id.clone(),
                    account_id: to.clone(),
                    amount,
                }),
            ),
            step(
                StepOp::BankCommitHold {
                    bank_id: bank_id.clone(),
                    hold_step: 0,
                },
                Phase::Commit,
                None,
            ),
        ],
        (Cbdc { account_id: from }, Bank { bank_id, account_id: to }) => vec![
            step(
                StepOp::CoreDefund {
                    bank_id: bank_id.clone(),
                    account_id: from.clone(),
                    amount,
                },
                Phase::Prepare,
                Some(StepOp::CoreFund {
                    bank_id: bank_id.clone(),
                    account_id: from.clone(),
                    amount,
                }),
            ),
            step(
                StepOp::BankCredit {
                    to: BankAccountRef {
                        bank_id: bank_id.clone(),
                        account_id: to.clone(),
                    },
                    amount,
                },
                Phase::Commit,
                None,
            ),
        ],
    };
    TransferPlan {
        plan_id,
        instruction_id,
        source,
        destination,
        amount,
        steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cbdc(a: &str) -> Coordinates {
        Coordinates::Cbdc { account_id: a.into() }
    }

    fn bank(b: &str, a: &str) -> Coordinates {
        Coordinates::Bank {
            bank_id: b.into(),
            account_id: a.into(),
        }
    }

    fn opts(cbdc: Option<i64>, bank: Option<i64>) -> FundingOptions {
        FundingOptions {
            cbdc: cbdc.map(|m| ("cb-000001".into(), Money::pence(m))),
            bank: bank.map(|m| {
                (
                    BankAccountRef {
                        bank_id: "BANK_B".into(),
                        account_id: "BANK_B-000001".into(),
                    },
                    Money::pence(m),
                )
            }),
        }
    }

    #[test]
    fn cbdc_to_cbdc_is_single_step() {
        let payee = cbdc("cb-000002");
        let src = select_source(RailPreference::Auto, &opts(Some(1000), None), &payee, Money::pence(400)).unwrap();
        let plan = build_plan("p".into(), "i".into(), src, payee, Money::pence(400));
        assert_eq!(plan.steps.len(), 1);
        assert_eq!(plan.steps[0].op.operation(), "transfer");
    }

    #[test]
    fn bank_only_payer_to_cbdc_payee_is_three_steps() {
        let payee = cbdc("cb-000002");
        let src = select_source(RailPreference::Auto, &opts(None, Some(1000)), &payee, Money::pence(400)).unwrap();
        let plan = build_plan("p".into(), "i".into(), src, payee, Money::pence(400));
        assert_eq!(plan.route(), "bank->cbdc");
        let ops: Vec<_> = plan.steps.iter().map(|s| (s.op.operation(), s.phase)).collect();
        assert_eq!(
            ops,
            [
                ("prepare_debit", Phase::Prepare),
                ("fund", Phase::Prepare),
                ("commit_debit", Phase::Commit)
            ]
        );
        assert!(plan.steps[..2].iter().all(|s| s.compensation.is_some()));
    }

    #[test]
    fn insufficient_everywhere_has_no_route() {
        let payee = cbdc("cb-000002");
        assert_eq!(select_source(RailPreference::Auto, &opts(Some(300), Some(300)), &payee, Money::pence(400)), None);
    }

    #[test]
    fn own_account_is_never_the_source() {
        let payee = cbdc("cb-000001");
        let src = select_source(RailPreference::Cbdc, &opts(Some(1000), Some(1000)), &payee, Money::pence(1));
        assert_eq!(src.unwrap().rail(), Rail::Bank);
    }

    #[test]
    fn preference_order() {
        let payee = bank("BANK_A", "BANK_A-000001");
        let both = opts(Some(1000), Some(1000));
        let pick = |p| select_source(p, &both, &payee, Money::pence(1)).unwrap().rail();
        assert_eq!(pick(RailPreference::Cbdc), Rail::Cbdc);
        assert_eq!(pick(RailPreference::Bank), Rail::Bank);
        assert_eq!(pick(RailPreference::Auto), Rail::Bank);
    }

    proptest! {
        #[test]
        fn selection_is_scale_invariant(
            c in proptest::option::of(0i64..10_000),
            b in proptest::option::of(0i64..10_000),
            amount in 1i64..10_000,
            k in 1i64..1000,
            pref in 0usize..3,
            payee_cbdc in any::<bool>(),
        ) {
            let pref = [RailPreference::Cbdc, RailPreference::Bank, RailPreference::Auto][pref];
            let payee = if payee_cbdc { cbdc("cb-000009") } else { bank("BANK_A", "BANK_A-000009") };
            let base = select_source(pref, &opts(c, b), &payee, Money::pence(amount)).map(|s| s.rail());
            let scaled = select_source(
                pref,
                &opts(c.map(|x| x * k), b.map(|x| x * k)),
                &payee,
                Money::pence(amount * k),
            )
            .map(|s| s.rail());
            prop_assert_eq!(base, scaled);
        }
    }
}
