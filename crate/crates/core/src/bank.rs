//! A mock commercial bank.
//!
//! Deposit accounts are identified (the owner is a customer reference in the
//! clear). The bank exposes Open-Banking-style reads and payment initiation,
//! an internal hold API used as the bank leg of cross-rail sagas, credits for
//! inbound cross-rail value, and the sending/receiving ends of the FPS rail.
//!
//! The bank does not track its own reserves; those live at the core ledger.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::{ErrorBody, Role, WireError};
use crate::clock::LogicalClock;
use crate::fault::FaultInjector;
use crate::ids::{AccountId, BankId, HoldId, InstructionId, MsgId, Tick};
use crate::journal::{JournalError, Storage};
use crate::money::{checked_sum, Money, MoneyError};
use crate::node::{Crashable, ServiceHandle};
use crate::service::{EventSourced, Journaled};

pub fn service_name(bank: &BankId) -> String {
    format!("bank:{bank}")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BankError {
    #[error("caller is not authorized for this operation")]
    Unauthorized,
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("account {0} is closed")]
    AccountClosed(String),
    #[error("insufficient funds in {0}")]
    InsufficientFunds(String),
    #[error("amount must be positive")]
    NonPositiveAmount,
    #[error("source and destination are the same account")]
    SameAccount,
    #[error("account {0} has a non-zero balance")]
    NonZeroBalance(String),
    #[error("unknown hold {0}")]
    UnknownHold(String),
    #[error("hold {hold} is {state}")]
    WrongState { hold: String, state: String },
    #[error("instruction {0} was already used for a different request")]
    IdempotencyConflict(String),
    #[error("message addressed to bank {0}")]
    WrongBank(String),
    #[error("unknown FPS message {0}")]
    UnknownMessage(String),
    #[error("arithmetic overflow")]
    Overflow,
    #[error("{0}")]
    StorageFailure(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("{0}")]
    BadRequest(String),
}

impl From<MoneyError> for BankError {
    fn from(e: MoneyError) -> Self {
        match e {
            MoneyError::Overflow => BankError::Overflow,
            MoneyError::NegativeResult => BankError::InsufficientFunds(String::new()),
            other => BankError::BadRequest(other.to_string()),
        }
    }
}

impl From<JournalError> for BankError {
    fn from(e: JournalError) -> Self {
        BankError::StorageFailure(e.to_string())
    }
}

impl WireError for BankError {
    fn code(&self) -> &'static str {
        match self {
            BankError::Unauthorized => "UNAUTHORIZED",
            BankError::UnknownAccount(_) => "UNKNOWN_ACCOUNT",
            BankError::AccountClosed(_) => "ACCOUNT_CLOSED",
            BankError::InsufficientFunds(_) => "INSUFFICIENT_FUNDS",
            BankError::NonPositiveAmount => "NON_POSITIVE_AMOUNT",
            BankError::SameAccount => "SAME_ACCOUNT",
            BankError::NonZeroBalance(_) => "NON_ZERO_BALANCE",
            BankError::UnknownHold(_) => "UNKNOWN_HOLD",
            BankError::WrongState { .. } => "WRONG_STATE",
            BankError::IdempotencyConflict(_) => "IDEMPOTENCY_CONFLICT",
            BankError::WrongBank(_) => "WRONG_BANK",
            BankError::UnknownMessage(_) => "UNKNOWN_MESSAGE",
            BankError::Overflow => "OVERFLOW",
            BankError::StorageFailure(_) => "STORAGE_FAILURE",
            BankError::Unavailable(_) => "UNAVAILABLE",
            BankError::BadRequest(_) => "BAD_REQUEST",
        }
    }

    fn to_body(&self) -> ErrorBody {
        let mut body = ErrorBody::new(self.code(), self.to_string());
        body.subject = match self {
            BankError::UnknownAccount(s)
            | BankError::AccountClosed(s)
            | BankError::InsufficientFunds(s)
            | BankError::NonZeroBalance(s)
            | BankError::UnknownHold(s)
            | BankError::IdempotencyConflict(s)
            | BankError::WrongBank(s)
            | BankError::UnknownMessage(s) => Some(s.clone()),
            BankError::WrongState { hold, .. } => Some(hold.clone()),
            _ => None,
        };
        if let BankError::WrongState { state, .. } = self {
            body.state = Some(state.clone());
        }
        body
    }

    fn from_body(body: ErrorBody) -> Self {
        let s = body.subject();
        match body.code.as_str() {
            "UNAUTHORIZED" => BankError::Unauthorized,
            "UNKNOWN_ACCOUNT" => BankError::UnknownAccount(s),
            "ACCOUNT_CLOSED" => BankError::AccountClosed(s),
            "INSUFFICIENT_FUNDS" => BankError::InsufficientFunds(s),
            "NON_POSITIVE_AMOUNT" => BankError::NonPositiveAmount,
            "SAME_ACCOUNT" => BankError::SameAccount,
            "NON_ZERO_BALANCE" => BankError::NonZeroBalance(s),
            "UNKNOWN_HOLD" => BankError::UnknownHold(s),
            "WRONG_STATE" => BankError::WrongState {
                hold: s,
                state: body.state.unwrap_or_default(),
            },
            "IDEMPOTENCY_CONFLICT" => BankError::IdempotencyConflict(s),
            "WRONG_BANK" => BankError::WrongBank(s),
            "UNKNOWN_MESSAGE" => BankError::UnknownMessage(s),
            "OVERFLOW" => BankError::Overflow,
            "STORAGE_FAILURE" => BankError::StorageFailure(body.message),
            "UNAVAILABLE" => BankError::Unavailable(body.message),
            _ => BankError::BadRequest(body.message),
        }
    }

    fn unavailable(message: impl Into<String>) -> Self {
        BankError::Unavailable(message.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepositAccount {
    pub account_id: AccountId,
    /// Bank-local customer reference.
    pub owner: String,
    pub balance: Money,
    pub earmarked: Money,
    pub status: AccountStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldState {
    Prepared,
    Committed,
    Aborted,
}

impl HoldState {
    fn as_str(self) -> &'static str {
        match self {
            HoldState::Prepared => "prepared",
            HoldState::Committed => "committed",
            HoldState::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hold {
    pub hold_id: HoldId,
    pub instruction_id: InstructionId,
    pub account_id: AccountId,
    pub amount: Money,
    pub state: HoldState,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BankAccountRef {
    pub bank_id: BankId,
    pub account_id: AccountId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpsStatus {
    Sent,
    Settled,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FpsMessage {
    pub msg_id: MsgId,
    pub from_bank: BankId,
    pub from_account: AccountId,
    pub to_bank: BankId,
    pub to_account: AccountId,
    pub amount: Money,
    pub status: FpsStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpsOutcome {
    Settled,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentInitiation {
    pub instruction_id: InstructionId,
    pub from_account: AccountId,
    pub beneficiary: BankAccountRef,
    pub amount: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentRecord {
    pub payment_id: String,
    pub initiation: PaymentInitiation,
    /// Set when the beneficiary is at another bank.
    pub msg_id: Option<MsgId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentReceipt {
    pub payment_id: String,
    pub msg_id: Option<MsgId>,
    pub replayed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldReceipt {
    pub hold_id: HoldId,
    pub replayed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreditRecord {
    pub credit_id: String,
    pub instruction_id: InstructionId,
    pub account_id: AccountId,
    pub amount: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreditReceipt {
    pub credit_id: String,
    pub replayed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboundRecord {
    pub msg: FpsMessage,
    pub outcome: FpsOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankTotals {
    pub deposits: Money,
    pub earmarked: Money,
    pub cash_injected: Money,
    /// Sent FPS value not yet acknowledged by the rail.
    pub fps_outbound_pending: Money,
}

/// The bank API as seen by ecosystems, PIPs and the FPS rail.
pub trait BankApi: Send + Sync {
    fn bank_id(&self) -> &BankId;
    fn ob_get_accounts(&self, customer: &str) -> Result<Vec<DepositAccount>, BankError>;
    fn ob_get_balance(&self, account: &AccountId) -> Result<Money, BankError>;
    fn ob_initiate_payment(&self, req: &PaymentInitiation) -> Result<PaymentReceipt, BankError>;
    fn prepare_debit(&self, instruction_id: &InstructionId, account: &AccountId, amount: Money) -> Result<HoldReceipt, BankError>;
    fn commit_debit(&self, hold: &HoldId) -> Result<(), BankError>;
    fn abort_debit(&self, hold: &HoldId) -> Result<(), BankError>;
    fn credit(&self, instruction_id: &InstructionId, account: &AccountId, amount: Money) -> Result<CreditReceipt, BankError>;
    fn fps_deliver(&self, msg: &FpsMessage) -> Result<FpsOutcome, BankError>;
    fn fps_outbox(&self) -> Result<Vec<FpsMessage>, BankError>;
    fn fps_ack(&self, msg: &MsgId, outcome: FpsOutcome) -> Result<(), BankError>;
    fn totals(&self) -> Result<BankTotals, BankError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum BankEvent {
    BankInitialized {
        bank_id: BankId,
    },
    AccountOpened {
        account_id: AccountId,
        owner: String,
        caller: String,
    },
    AccountClosed {
        account_id: AccountId,
        caller: String,
    },
    CashInjected {
        account_id: AccountId,
        amount: Money,
        caller: String,
    },
    ConsentGranted {
        grantee: String,
        customer: String,
        caller: String,
    },
    PaymentPosted {
        payment: PaymentRecord,
        caller: String,
    },
    HoldPlaced {
        hold: Hold,
        caller: String,
    },
    HoldCommitted {
        hold_id: HoldId,
        caller: String,
    },
    HoldAborted {
        hold_id: HoldId,
        caller: String,
    },
    CreditPosted {
        credit: CreditRecord,
        caller: String,
    },
    FpsReceived {
        msg: FpsMessage,
        outcome: FpsOutcome,
    },
    FpsAcknowledged {
        msg_id: MsgId,
        outcome: FpsOutcome,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankState {
    pub bank_id: Option<BankId>,
    pub accounts: BTreeMap<AccountId, DepositAccount>,
    pub customers: BTreeMap<String, Vec<AccountId>>,
    /// Grantee caller name → customers whose accounts it may read.
    pub consents: BTreeMap<String, BTreeSet<String>>,
    pub holds: BTreeMap<HoldId, Hold>,
    pub holds_by_instruction: BTreeMap<InstructionId, HoldId>,
    pub payments: BTreeMap<InstructionId, PaymentRecord>,
    pub credits: BTreeMap<InstructionId, CreditRecord>,
    pub outbound: BTreeMap<MsgId, FpsMessage>,
    pub inbound: BTreeMap<MsgId, InboundRecord>,
    pub cash_injected: Money,
    pub next_account: u64,
    pub next_hold: u64,
    pub next_payment: u64,
    pub next_credit: u64,
}

impl BankState {
    fn id(&self) -> &BankId {
        self.bank_id.as_ref().expect("bank initialized")
    }

    fn account(&self, id: &AccountId) -> Result<&DepositAccount, BankError> {
        self.accounts
            .get(id)
            .ok_or_else(|| BankError::UnknownAccount(id.to_string()))
    }

    fn open(&self, id: &AccountId) -> Result<&DepositAccount, BankError> {
        let a = self.account(id)?;
        if a.status == AccountStatus::Closed {
            return Err(BankError::AccountClosed(id.to_string()));
        }
        Ok(a)
    }

    fn account_mut(&mut self, id: &AccountId) -> Result<&mut DepositAccount, BankError> {
        self.accounts
            .get_mut(id)
            .ok_or_else(|| BankError::UnknownAccount(id.to_string()))
    }

    fn adjust(&mut self, id: &AccountId, credit: Money, debit: Money) -> Result<(), BankError> {
        let a = self.account_mut(id)?;
        a.balance = a.balance.checked_add(credit)?.checked_sub(debit)?;
        Ok(())
    }

    pub fn totals(&self) -> Result<BankTotals, MoneyError> {
        Ok(BankTotals {
            deposits: checked_sum(self.accounts.values().map(|a| a.balance))?,
            earmarked: checked_sum(self.accounts.values().map(|a| a.earmarked))?,
            cash_injected: self.cash_injected,
            fps_outbound_pending: checked_sum(
                self.outbound
                    .values()
                    .filter(|m| m.status == FpsStatus::Sent)
                    .map(|m| m.amount),
            )?,
        })
    }
}

impl EventSourced for BankState {
    type Event = BankEvent;
    type Error = BankError;

    fn apply(&mut self, event: &BankEvent, _ts: Tick) -> Result<(), BankError> {
        match event {
            BankEvent::BankInitialized { bank_id } => self.bank_id = Some(bank_id.clone()),
            BankEvent::AccountOpened { account_id, owner, .. } => {
                self.accounts.insert(
                    account_id.clone(),
                    DepositAccount {
                        account_id: account_id.clone(),
                        owner: owner.clone(),
                        balance: Money::ZERO,
                        earmarked: Money::ZERO,
                        status: AccountStatus::Open,
                    },
                );
                self.customers.entry(owner.clone()).or_default().push(account_id.clone());
                self.next_account += 1;
            }
            BankEvent::AccountClosed { account_id, .. } => {
                self.account_mut(account_id)?.status = AccountStatus::Closed;
            }
            BankEvent::CashInjected { account_id, amount, .. } => {
                self.adjust(account_id, *amount, Money::ZERO)?;
                self.cash_injected = self.cash_injected.checked_add(*amount)?;
            }
            BankEvent::ConsentGranted { grantee, customer, .. } => {
                self.consents.entry(grantee.clone()).or_default().insert(customer.clone());
            }
            BankEvent::PaymentPosted { payment, .. } => {
                let p = &payment.initiation;
                self.adjust(&p.from_account, Money::ZERO, p.amount)?;
                match &payment.msg_id {
                    None => self.adjust(&p.beneficiary.account_id, p.amount, Money::ZERO)?,
                    Some(msg_id) => {
                        let msg = FpsMessage {
                            msg_id: msg_id.clone(),
                            from_bank: self.id().clone(),
                            from_account: p.from_account.clone(),
                            to_bank: p.beneficiary.bank_id.clone(),
                            to_account: p.beneficiary.account_id.clone(),
                            amount: p.amount,
                            status: FpsStatus::Sent,
                        };
                        self.outbound.insert(msg_id.clone(), msg);
                    }
                }
                self.payments.insert(p.instruction_id.clone(), payment.clone());
                self.next_payment += 1;
            }
            BankEvent::HoldPlaced { hold, .. } => {
                let a = self.account_mut(&hold.account_id)?;
                a.balance = a.balance.checked_sub(hold.amount)?;
                a.earmarked = a.earmarked.checked_add(hold.amount)?;
                self.holds_by_instruction
                    .insert(hold.instruction_id.clone(), hold.hold_id.clone());
                self.holds.insert(hold.hold_id.clone(), hold.clone());
                self.next_hold += 1;
            }
            BankEvent::HoldCommitted { hold_id, .. } | BankEvent::HoldAborted { hold_id, .. } => {
                let committed = matches!(event, BankEvent::HoldCommitted { .. });
                let hold = self
                    .holds
                    .get(hold_id)
                    .cloned()
                    .ok_or_else(|| BankError::UnknownHold(hold_id.to_string()))?;
                let a = self.account_mut(&hold.account_id)?;
                a.earmarked = a.earmarked.checked_sub(hold.amount)?;
                if !committed {
                    a.balance = a.balance.checked_add(hold.amount)?;
                }
                self.holds.get_mut(hold_id).expect("present").state = if committed {
                    HoldState::Committed
                } else {
                    HoldState::Aborted
                };
            }
            BankEvent::CreditPosted { credit, .. } => {
                self.adjust(&credit.account_id, credit.amount, Money::ZERO)?;
                self.credits.insert(credit.instruction_id.clone(), credit.clone());
                self.next_credit += 1;
            }
            BankEvent::FpsReceived { msg, outcome } => {
                if *outcome == FpsOutcome::Settled {
                    self.adjust(&msg.to_account, msg.amount, Money::ZERO)?;
                }
                self.inbound.insert(
                    msg.msg_id.clone(),
                    InboundRecord {
                        msg: msg.clone(),
                        outcome: *outcome,
                    },
                );
            }
            BankEvent::FpsAcknowledged { msg_id, outcome } => {
                let msg = self
                    .outbound
                    .get_mut(msg_id)
                    .ok_or_else(|| BankError::UnknownMessage(msg_id.to_string()))?;
                msg.status = match outcome {
                    FpsOutcome::Settled => FpsStatus::Settled,
                    FpsOutcome::Rejected => FpsStatus::Rejected,
                };
                if *outcome == FpsOutcome::Rejected {
                    let (from, amount) = (msg.from_account.clone(), msg.amount);
                    self.adjust(&from, amount, Money::ZERO)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankConfig {
    pub callers: BTreeMap<String, Role>,
}

impl BankConfig {
    pub fn with_caller(mut self, name: impl Into<String>, role: Role) -> Self {
        self.callers.insert(name.into(), role);
        self
    }
}

#[derive(Debug)]
pub struct Bank {
    bank_id: BankId,
    config: BankConfig,
    svc: Journaled<BankState>,
}

impl Bank {
    pub fn recover(
        bank_id: BankId,
        config: BankConfig,
        storage: Arc<dyn Storage>,
        clock: LogicalClock,
        faults: FaultInjector,
    ) -> Result<Self, BankError> {
        let svc = Journaled::<BankState>::recover(service_name(&bank_id), storage, clock, faults)?;
        match svc.export().bank_id {
            None => svc.record(BankEvent::BankInitialized {
                bank_id: bank_id.clone(),
            })?,
            Some(existing) if existing != bank_id => {
                return Err(BankError::BadRequest(format!("journal belongs to bank {existing}")))
            }
            Some(_) => {}
        }
        Ok(Self { bank_id, config, svc })
    }

    pub fn id(&self) -> &BankId {
        &self.bank_id
    }

    pub fn is_crashed(&self) -> bool {
        self.svc.is_crashed()
    }

    pub fn head_hash(&self) -> String {
        self.svc.head_hash()
    }

    pub fn storage(&self) -> Arc<dyn Storage> {
        self.svc.storage()
    }

    pub fn export(&self) -> BankState {
        self.svc.export()
    }

    fn role(&self, caller: &str) -> Option<Role> {
        self.config.callers.get(caller).copied()
    }

    fn authorize(&self, caller: &str, allowed: &[Role]) -> Result<(), BankError> {
        match self.role(caller) {
            Some(r) if allowed.contains(&r) => Ok(()),
            _ => Err(BankError::Unauthorized),
        }
    }

    /// Ecosystems and operators read everything; PIPs need customer consent.
    fn may_read(&self, s: &BankState, caller: &str, customer: &str) -> Result<(), BankError> {
        match self.role(caller) {
            Some(Role::Ecosystem | Role::Operator) => Ok(()),
            Some(Role::Pip) if s.consents.get(caller).is_some_and(|c| c.contains(customer)) => Ok(()),
            _ => Err(BankError::Unauthorized),
        }
    }

    pub fn open_account(&self, caller: &str, owner: &str) -> Result<AccountId, BankError> {
        self.authorize(caller, &[Role::Operator])?;
        self.svc.write(|s| {
            let account_id = AccountId::new(format!("{}-{:06}", self.bank_id, s.next_account + 1));
            let ev = BankEvent::AccountOpened {
                account_id: account_id.clone(),
                owner: owner.to_string(),
                caller: caller.to_string(),
            };
            Ok((Some(ev), account_id))
        })
    }

    pub fn close_account(&self, caller: &str, account: &AccountId) -> Result<(), BankError> {
        self.authorize(caller, &[Role::Operator])?;
        self.svc.write(|s| {
            let a = s.open(account)?;
            if !a.balance.is_zero() || !a.earmarked.is_zero() {
                return Err(BankError::NonZeroBalance(account.to_string()));
            }
            let ev = BankEvent::AccountClosed {
                account_id: account.clone(),
                caller: caller.to_string(),
            };
            Ok((Some(ev), ()))
        })
    }

    /// Harness cash injection: the only way deposits enter the system.
    pub fn inject_cash(&self, caller: &str, account: &AccountId, amount: Money) -> Result<(), BankError> {
        self.authorize(caller, &[Role::Operator])?;
        self.svc.write(|s| {
            let a = s.open(account)?;
            a.balance.checked_add(amount)?;
            s.cash_injected.checked_add(amount)?;
            let ev = BankEvent::CashInjected {
                account_id: account.clone(),
                amount,
                caller: caller.to_string(),
            };
            Ok((Some(ev), ()))
        })
    }

    pub fn grant_consent(&self, caller: &str, grantee: &str, customer: &str) -> Result<(), BankError> {
        self.authorize(caller, &[Role::Operator])?;
        self.svc.write(|s| {
            if s.consents.get(grantee).is_some_and(|c| c.contains(customer)) {
                return Ok((None, ()));
            }
            let ev = BankEvent::ConsentGranted {
                grantee: grantee.to_string(),
                customer: customer.to_string(),
                caller: caller.to_string(),
            };
            Ok((Some(ev), ()))
        })
    }

    pub fn ob_get_accounts(&self, caller: &str, customer: &str) -> Result<Vec<DepositAccount>, BankError> {
        self.svc.read(|s| {
            self.may_read(s, caller, customer)?;
            Ok(s.customers
                .get(customer)
                .into_iter()
                .flatten()
                .map(|id| s.accounts[id].clone())
                .collect())
        })
    }

    pub fn ob_get_balance(&self, caller: &str, account: &AccountId) -> Result<Money, BankError> {
        self.svc.read(|s| {
            let a = s.account(account)?;
            self.may_read(s, caller, &a.owner)?;
            Ok(a.balance)
        })
    }

    pub fn ob_initiate_payment(&self, caller: &str, req: &PaymentInitiation) -> Result<PaymentReceipt, BankError> {
        self.authorize(caller, &[Role::Ecosystem])?;
        if req.amount.is_zero() {
            return Err(BankError::NonPositiveAmount);
        }
        if req.beneficiary.bank_id == self.bank_id && req.beneficiary.account_id == req.from_account {
            return Err(BankError::SameAccount);
        }
        self.svc.write(|s| {
            if let Some(existing) = s.payments.get(&req.instruction_id) {
                if existing.initiation != *req {
                    return Err(BankError::IdempotencyConflict(req.instruction_id.to_string()));
                }
                let receipt = PaymentReceipt {
                    payment_id: existing.payment_id.clone(),
                    msg_id: existing.msg_id.clone(),
                    replayed: true,
                };
                return Ok((None, receipt));
            }
            let from = s.open(&req.from_account)?;
            if from.balance < req.amount {
                return Err(BankError::InsufficientFunds(req.from_account.to_string()));
            }
            let n = s.next_payment + 1;
            let msg_id = if req.beneficiary.bank_id == self.bank_id {
                let to = s.open(&req.beneficiary.account_id)?;
                to.balance.checked_add(req.amount)?;
                None
            } else {
                Some(MsgId::new(format!("fps-{}-{n:08}", self.bank_id)))
            };
            let payment = PaymentRecord {
                payment_id: format!("pay-{}-{n:08}", self.bank_id),
                initiation: req.clone(),
                msg_id: msg_id.clone(),
            };
            let receipt = PaymentReceipt {
                payment_id: payment.payment_id.clone(),
                msg_id,
                replayed: false,
            };
            let ev = BankEvent::PaymentPosted {
                payment,
                caller: caller.to_string(),
            };
            Ok((Some(ev), receipt))
        })
    }

    pub fn prepare_debit(
        &self,
        caller: &str,
        instruction_id: &InstructionId,
        account: &AccountId,
        amount: Money,
    ) -> Result<HoldReceipt, BankError> {
        self.authorize(caller, &[Role::Ecosystem])?;
        if amount.is_zero() {
            return Err(BankError::NonPositiveAmount);
        }
        self.svc.write(|s| {
            if let Some(hold_id) = s.holds_by_instruction.get(instruction_id) {
                let h = &s.holds[hold_id];
                if h.account_id != *account || h.amount != amount {
                    return Err(BankError::IdempotencyConflict(instruction_id.to_string()));
                }
                let receipt = HoldReceipt {
                    hold_id: hold_id.clone(),
                    replayed: true,
                };
                return Ok((None, receipt));
            }
            let a = s.open(account)?;
            if a.balance < amount {
                return Err(BankError::InsufficientFunds(account.to_string()));
            }
            let hold_id = HoldId::new(format!("hold-{}-{:08}", self.bank_id, s.next_hold + 1));
            let ev = BankEvent::HoldPlaced {
                hold: Hold {
                    hold_id: hold_id.clone(),
                    instruction_id: instruction_id.clone(),
                    account_id: account.clone(),
                    amount,
                    state: HoldState::Prepared,
                },
                caller: caller.to_string(),
            };
            Ok((Some(ev), HoldReceipt { hold_id, replayed: false }))
        })
    }

    fn finish_hold(&self, caller: &str, hold_id: &HoldId, commit: bool) -> Result<(), BankError> {
        self.authorize(caller, &[Role::Ecosystem])?;
        self.svc.write(|s| {
            let h = s
                .holds
                .get(hold_id)
                .ok_or_else(|| BankError::UnknownHold(hold_id.to_string()))?;
            if h.state != HoldState::Prepared {
                return Err(BankError::WrongState {
                    hold: hold_id.to_string(),
                    state: h.state.as_str().to_string(),
                });
            }
            let ev = if commit {
                BankEvent::HoldCommitted {
                    hold_id: hold_id.clone(),
                    caller: caller.to_string(),
                }
            } else {
                BankEvent::HoldAborted {
                    hold_id: hold_id.clone(),
                    caller: caller.to_string(),
                }
            };
            Ok((Some(ev), ()))
        })
    }

    pub fn commit_debit(&self, caller: &str, hold_id: &HoldId) -> Result<(), BankError> {
        self.finish_hold(caller, hold_id, true)
    }

    pub fn abort_debit(&self, caller: &str, hold_id: &HoldId) -> Result<(), BankError> {
        self.finish_hold(caller, hold_id, false)
    }

    /// Inbound cross-rail value (the bank leg of a CBDC → bank payment).
    pub fn credit(
        &self,
        caller: &str,
        instruction_id: &InstructionId,
        account: &AccountId,
        amount: Money,
    ) -> Result<CreditReceipt, BankError> {
        self.authorize(caller, &[Role::Ecosystem])?;
        if amount.is_zero() {
            return Err(BankError::NonPositiveAmount);
        }
        self.svc.write(|s| {
            if let Some(c) = s.credits.get(instruction_id) {
                if c.account_id != *account || c.amount != amount {
                    return Err(BankError::IdempotencyConflict(instruction_id.to_string()));
                }
                let receipt = CreditReceipt {
                    credit_id: c.credit_id.clone(),
                    replayed: true,
                };
                return Ok((None, receipt));
            }
            let a = s.open(account)?;
            a.balance.checked_add(amount)?;
            let credit = CreditRecord {
                credit_id: format!("cr-{}-{:08}", self.bank_id, s.next_credit + 1),
                instruction_id: instruction_id.clone(),
                account_id: account.clone(),
                amount,
            };
            let receipt = CreditReceipt {
                credit_id: credit.credit_id.clone(),
                replayed: false,
            };
            let ev = BankEvent::CreditPosted {
                credit,
                caller: caller.to_string(),
            };
            Ok((Some(ev), receipt))
        })
    }

    /// Receiving end of FPS. Settles at most once per message id; an
    /// undeliverable message is recorded as rejected so the sender can be
    /// re-credited.
    pub fn fps_deliver(&self, caller: &str, msg: &FpsMessage) -> Result<FpsOutcome, BankError> {
        self.authorize(caller, &[Role::Network])?;
        if msg.to_bank != self.bank_id {
            return Err(BankError::WrongBank(msg.to_bank.to_string()));
        }
        if msg.amount.is_zero() {
            return Err(BankError::NonPositiveAmount);
        }
        self.svc.write(|s| {
            if let Some(seen) = s.inbound.get(&msg.msg_id) {
                return Ok((None, seen.outcome));
            }
            let outcome = match s.open(&msg.to_account) {
                Ok(a) => {
                    a.balance.checked_add(msg.amount)?;
                    FpsOutcome::Settled
                }
                Err(_) => FpsOutcome::Rejected,
            };
            let ev = BankEvent::FpsReceived {
                msg: msg.clone(),
                outcome,
            };
            Ok((Some(ev), outcome))
        })
    }

    pub fn fps_outbox(&self, caller: &str) -> Result<Vec<FpsMessage>, BankError> {
        self.authorize(caller, &[Role::Network, Role::Operator])?;
        self.svc.read(|s| {
            Ok(s.outbound
                .values()
                .filter(|m| m.status == FpsStatus::Sent)
                .cloned()
                .collect())
        })
    }

    /// Sending end: records the rail's verdict, returning funds on rejection.
    pub fn fps_ack(&self, caller: &str, msg_id: &MsgId, outcome: FpsOutcome) -> Result<(), BankError> {
        self.authorize(caller, &[Role::Network])?;
        self.svc.write(|s| {
            let msg = s
                .outbound
                .get(msg_id)
                .ok_or_else(|| BankError::UnknownMessage(msg_id.to_string()))?;
            if msg.status != FpsStatus::Sent {
                return Ok((None, ()));
            }
            let ev = BankEvent::FpsAcknowledged {
                msg_id: msg_id.clone(),
                outcome,
            };
            Ok((Some(ev), ()))
        })
    }

    pub fn totals(&self) -> Result<BankTotals, BankError> {
        self.svc.read(|s| Ok(s.totals()?))
    }
}

impl Crashable for Bank {
    fn is_crashed(&self) -> bool {
        Bank::is_crashed(self)
    }
}

/// In-process client bound to one caller identity.
#[derive(Debug, Clone)]
pub struct LocalBank<S> {
    bank_id: BankId,
    service: S,
    caller: String,
}

impl<S> LocalBank<S> {
    pub fn new(bank_id: BankId, service: S, caller: impl Into<String>) -> Self {
        Self {
            bank_id,
            service,
            caller: caller.into(),
        }
    }
}

impl<S: ServiceHandle<Bank>> BankApi for LocalBank<S> {
    fn bank_id(&self) -> &BankId {
        &self.bank_id
    }
    fn ob_get_accounts(&self, customer: &str) -> Result<Vec<DepositAccount>, BankError> {
        self.service.call(|b| b.ob_get_accounts(&self.caller, customer))
    }
    fn ob_get_balance(&self, account: &AccountId) -> Result<Money, BankError> {
        self.service.call(|b| b.ob_get_balance(&self.caller, account))
    }
    fn ob_initiate_payment(&self, req: &PaymentInitiation) -> Result<PaymentReceipt, BankError> {
        self.service.call(|b| b.ob_initiate_payment(&self.caller, req))
    }
    fn prepare_debit(&self, instruction_id: &InstructionId, account: &AccountId, amount: Money) -> Result<HoldReceipt, BankError> {
        self.service.call(|b| b.prepare_debit(&self.caller, instruction_id, account, amount))
    }
    fn commit_debit(&self, hold: &HoldId) -> Result<(), BankError> {
        self.service.call(|b| b.commit_debit(&self.caller, hold))
    }
    fn abort_debit(&self, hold: &HoldId) -> Result<(), BankError> {
        self.service.call(|b| b.abort_debit(&self.caller, hold))
    }
    fn credit(&self, instruction_id: &InstructionId, account: &AccountId, amount: Money) -> Result<CreditReceipt, BankError> {
        self.service.call(|b| b.credit(&self.caller, instruction_id, account, amount))
    }
    fn fps_deliver(&self, msg: &FpsMessage) -> Result<FpsOutcome, BankError> {
        self.service.call(|b| b.fps_deliver(&self.caller, msg))
    }
    fn fps_outbox(&self) -> Result<Vec<FpsMessage>, BankError> {
        self.service.call(|b| b.fps_outbox(&self.caller))
    }
    fn fps_ack(&self, msg: &MsgId, outcome: FpsOutcome) -> Result<(), BankError> {
        self.service.call(|b| b.fps_ack(&self.caller, msg, outcome))
    }
    fn totals(&self) -> Result<BankTotals, BankError> {
        self.service.call(|b| b.totals())
    }
}
