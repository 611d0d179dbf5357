//! Plan execution: prepare steps in order, then a journaled decision, then
//! either the commit steps or the compensations of completed prepare steps in
//! reverse.
//!
//! The same loop serves live execution and crash recovery. Each iteration
//! reads the plan's journaled progress and performs exactly one next action,
//! journaling a write-ahead record before every participant call. Calls are
//! keyed `<instruction>#<step>` (`:comp` for compensations), so re-issuing a
//! call whose outcome was lost is harmless.

use serde::{Deserialize, Serialize};

use super::routing::{Phase, StepOp};
use super::{EcoError, EcoEvent, Ecosystem, PlanRecord};
use crate::api::{with_retries, WireError};
use crate::bank::BankError;
use crate::fault::InjectionPoint;
use crate::ids::{HoldId, InstructionId};
use crate::ledger::{FundingRequest, TransferRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanState {
    Planning,
    /// Every prepare step succeeded and the commit decision is journaled.
    Prepared,
    Committed,
    Compensated,
    /// A commit step or compensation failed for a business reason.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Decision {
    Commit,
    Compensate { failed_step: usize, code: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepOutcome {
    /// Participant reference (transaction, hold, payment or credit id).
    Done { reference: String },
    Failed { code: String, message: String },
}

impl StepOutcome {
    pub fn is_done(&self) -> bool {
        matches!(self, StepOutcome::Done { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Next {
    Forward(usize),
    Compensate(usize),
    Decide(Decision),
    Finish(PlanState, Option<String>),
    Done,
}

fn next_action(p: &PlanRecord) -> Next {
    if matches!(p.state, PlanState::Committed | PlanState::Compensated | PlanState::Failed) {
        return Next::Done;
    }
    let steps = &p.plan.steps;
    let indices = |phase: Phase| (0..steps.len()).filter(move |i| steps[*i].phase == phase);
    match &p.decision {
        None => {
            for i in indices(Phase::Prepare) {
                match p.steps.get(&i) {
                    None => return Next::Forward(i),
                    Some(StepOutcome::Failed { code, .. }) => {
                        return Next::Decide(Decision::Compensate {
                            failed_step: i,
                            code: code.clone(),
                        })
                    }
                    Some(StepOutcome::Done { .. }) => {}
                }
            }
            Next::Decide(Decision::Commit)
        }
        Some(Decision::Commit) => {
            for i in indices(Phase::Commit) {
                match p.steps.get(&i) {
                    None => return Next::Forward(i),
                    Some(StepOutcome::Failed { code, message }) => {
                        return Next::Finish(
                            PlanState::Failed,
                            Some(format!("STEP_UNRECOVERABLE: step {i} {code}: {message}")),
                        )
                    }
                    Some(StepOutcome::Done { .. }) => {}
                }
            }
            Next::Finish(PlanState::Committed, None)
        }
        Some(Decision::Compensate { .. }) => {
            let prepared: Vec<usize> = indices(Phase::Prepare)
                .filter(|i| p.steps.get(i).is_some_and(StepOutcome::is_done) && steps[*i].compensation.is_some())
                .collect();
            for i in prepared.into_iter().rev() {
                match p.compensations.get(&i) {
                    None => return Next::Compensate(i),
                    Some(StepOutcome::Failed { code, message }) => {
                        return Next::Finish(
                            PlanState::Failed,
                            Some(format!("STEP_UNRECOVERABLE: compensation {i} {code}: {message}")),
                        )
                    }
                    Some(StepOutcome::Done { .. }) => {}
                }
            }
            Next::Finish(PlanState::Compensated, None)
        }
    }
}

pub(super) fn step_key(instruction: &InstructionId, step: usize, compensation: bool) -> InstructionId {
    let suffix = if compensation { ":comp" } else { "" };
    InstructionId::new(format!("{instruction}#{step}{suffix}"))
}

/// A participant answer: business outcome, or the participant is down.
type Call = Result<StepOutcome, String>;

fn settle<E: WireError>(r: Result<String, E>) -> Call {
    match r {
        Ok(reference) => Ok(StepOutcome::Done { reference }),
        Err(e) if e.is_unavailable() => Err(e.to_string()),
        Err(e) => Ok(StepOutcome::Failed {
            code: e.code().to_string(),
            message: e.to_string(),
        }),
    }
}

impl Ecosystem {
    /// Drives a plan until it is terminal or a participant stays unavailable.
    pub(super) fn drive(&self, plan_id: &str) -> Result<(), EcoError> {
        loop {
            let record = self.svc.read(|s| {
                s.plans
                    .get(plan_id)
                    .cloned()
                    .ok_or_else(|| EcoError::BadRequest(format!("unknown plan {plan_id}")))
            })?;
            match next_action(&record) {
                Next::Done => return Ok(()),
                Next::Forward(i) => {
                    self.run_step(&record, i, false)?;
                    self.crash_point(InjectionPoint::StepJournaled { step: i })?;
                }
                Next::Compensate(i) => {
                    self.run_step(&record, i, true)?;
                    self.crash_point(InjectionPoint::CompensationJournaled { step: i })?;
                }
                Next::Decide(decision) => {
                    self.svc.record(EcoEvent::DecisionRecorded {
                        plan_id: plan_id.to_string(),
                        decision,
                    })?;
                    self.crash_point(InjectionPoint::DecisionJournaled)?;
                }
                Next::Finish(state, failure) => {
                    self.svc.record(EcoEvent::PlanFinished {
                        plan_id: plan_id.to_string(),
                        state,
                        failure,
                    })?;
                }
            }
        }
    }

    fn run_step(&self, record: &PlanRecord, i: usize, compensation: bool) -> Result<(), EcoError> {
        let plan_id = record.plan.plan_id.clone();
        self.svc.record(EcoEvent::StepStarted {
            plan_id: plan_id.clone(),
            step: i,
            compensation,
        })?;
        let step = &record.plan.steps[i];
        let op = if compensation {
            step.compensation.as_ref().expect("only steps with compensations are compensated")
        } else {
            &step.op
        };
        let key = step_key(&record.plan.instruction_id, i, compensation);
        let outcome = self.call(record, op, key).map_err(EcoError::Unavailable)?;
        self.crash_point(if compensation {
            InjectionPoint::CompensationCalled { step: i }
        } else {
            InjectionPoint::StepCalled { step: i }
        })?;
        self.svc.record(EcoEvent::StepCompleted {
            plan_id,
            step: i,
            compensation,
            outcome,
        })
    }

    fn call(&self, record: &PlanRecord, op: &StepOp, key: InstructionId) -> Call {
        let attempts = self.config.step_attempts;
        let bank = |id: &crate::ids::BankId| {
            self.banks.get(id).cloned().ok_or_else(|| StepOutcome::Failed {
                code: "UNKNOWN_BANK".into(),
                message: format!("no route to bank {id}"),
            })
        };
        let hold_of = |hold_step: usize| match record.steps.get(&hold_step) {
            Some(StepOutcome::Done { reference }) => Some(HoldId::new(reference.clone())),
            _ => None,
        };
        match op {
            StepOp::CoreTransfer { from, to, amount } => {
                let req = TransferRequest {
                    instruction_id: key,
                    from: from.clone(),
                    to: to.clone(),
                    amount: *amount,
                };
                settle(with_retries(attempts, || self.core.transfer(&req).map(|r| r.tx_id.to_string())))
            }
            StepOp::CoreFund {
                bank_id,
                account_id,
                amount,
            }
            | StepOp::CoreDefund {
                bank_id,
                account_id,
                amount,
            } => {
                let req = FundingRequest {
                    instruction_id: key,
                    bank_id: bank_id.clone(),
                    account_id: account_id.clone(),
                    amount: *amount,
                };
                let fund = matches!(op, StepOp::CoreFund { .. });
                settle(with_retries(attempts, || {
                    let r = if fund { self.core.fund(&req) } else { self.core.defund(&req) };
                    r.map(|r| r.tx_id.to_string())
                }))
            }
            StepOp::BankPayment { from, to, amount } => {
                let b = match bank(&from.bank_id) {
                    Ok(b) => b,
                    Err(failed) => return Ok(failed),
                };
                let req = crate::bank::PaymentInitiation {
                    instruction_id: key,
                    from_account: from.account_id.clone(),
                    beneficiary: to.clone(),
                    amount: *amount,
                };
                settle(with_retries(attempts, || b.ob_initiate_payment(&req).map(|r| r.payment_id)))
            }
            StepOp::BankHold { at, amount } => {
                let b = match bank(&at.bank_id) {
                    Ok(b) => b,
                    Err(failed) => return Ok(failed),
                };
                settle(with_retries(attempts, || {
                    b.prepare_debit(&key, &at.account_id, *amount)
                        .map(|r| r.hold_id.to_string())
                }))
            }
            StepOp::BankCommitHold { bank_id, hold_step } | StepOp::BankAbortHold { bank_id, hold_step } => {
                let b = match bank(bank_id) {
                    Ok(b) => b,
                    Err(failed) => return Ok(failed),
                };
                let Some(hold) = hold_of(*hold_step) else {
                    return Ok(StepOutcome::Failed {
                        code: "UNKNOWN_HOLD".into(),
                        message: format!("step {hold_step} placed no hold"),
                    });
                };
                let commit = matches!(op, StepOp::BankCommitHold { .. });
                let target = if commit { "committed" } else { "aborted" };
                settle(with_retries(attempts, || {
                    let r = if commit { b.commit_debit(&hold) } else { b.abort_debit(&hold) };
                    match r {
                        // A retry after a lost reply finds the hold already
                        // in the state we wanted.
                        Err(BankError::WrongState { state, .. }) if state == target => Ok(hold.to_string()),
                        other => other.map(|()| hold.to_string()),
                    }
                }))
            }
            StepOp::BankCredit { to, amount } => {
                let b = match bank(&to.bank_id) {
                    Ok(b) => b,
                    Err(failed) => return Ok(failed),
                };
                settle(with_retries(attempts, || {
                    b.credit(&key, &to.account_id, *amount).map(|r| r.credit_id)
                }))
            }
        }
    }
}
