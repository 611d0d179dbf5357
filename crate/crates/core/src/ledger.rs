//! The central bank's core ledger.
//!
//! Holds pseudonymous CBDC accounts and bank reserve accounts and nothing
//! else: no user identities, no programs, no policy. Every mutation is
//! journaled before it is applied, and the whole state is a fold over the
//! journal.
//!
//! Value moves three ways:
//! - `transfer` / `prepare_transfer` + `commit` between CBDC accounts,
//! - `fund`: a bank's reserves become CBDC in an account,
//! - `defund`: CBDC in an account becomes the bank's reserves again.
//!
//! so `Σ reserves + cbdc_outstanding` only changes through reserve injection.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::{ErrorBody, Page, Role, WireError};
use crate::clock::LogicalClock;
use crate::fault::FaultInjector;
use crate::ids::{AccountId, BankId, InstructionId, PseudonymId, Tick, TransactionId};
use crate::journal::{JournalError, Storage};
use crate::node::ServiceHandle;
use crate::service::{EventSourced, Journaled};
use crate::money::{checked_sum, money_add, Delta, Money, MoneyError};

pub const SERVICE: &str = "core";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("an account already exists for pseudonym {0}")]
    DuplicatePseudonym(String),
    #[error("pseudonym must be 64 lowercase hex characters")]
    MalformedPseudonym,
    #[error("account {0} has a non-zero balance")]
    NonZeroBalance(String),
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
    #[error("unknown transaction {0}")]
    UnknownTransaction(String),
    #[error("transaction {tx} is {state}")]
    WrongState { tx: String, state: String },
    #[error("insufficient reserves for bank {0}")]
    InsufficientReserves(String),
    #[error("unknown bank {0}")]
    UnknownBank(String),
    #[error("instruction {0} was already used for a different request")]
    IdempotencyConflict(String),
    #[error("caller is not authorized for this operation")]
    Unauthorized,
    #[error("arithmetic overflow")]
    Overflow,
    #[error("{0}")]
    StorageFailure(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("{0}")]
    BadRequest(String),
}

impl From<MoneyError> for CoreError {
    fn from(e: MoneyError) -> Self {
        match e {
            MoneyError::Overflow => CoreError::Overflow,
            // Callers check balances first; reaching this is a bug surfaced as a refusal.
            MoneyError::NegativeResult => CoreError::InsufficientFunds(String::new()),
            other => CoreError::BadRequest(other.to_string()),
        }
    }
}

impl From<JournalError> for CoreError {
    fn from(e: JournalError) -> Self {
        match e {
            JournalError::StorageFailure(m) => CoreError::StorageFailure(m),
            other => CoreError::StorageFailure(other.to_string()),
        }
    }
}

impl WireError for CoreError {
    fn code(&self) -> &'static str {
        match self {
            CoreError::DuplicatePseudonym(_) => "DUPLICATE_PSEUDONYM",
            CoreError::MalformedPseudonym => "MALFORMED_PSEUDONYM",
            CoreError::NonZeroBalance(_) => "NON_ZERO_BALANCE",
            CoreError::UnknownAccount(_) => "UNKNOWN_ACCOUNT",
            CoreError::AccountClosed(_) => "ACCOUNT_CLOSED",
            CoreError::InsufficientFunds(_) => "INSUFFICIENT_FUNDS",
            CoreError::NonPositiveAmount => "NON_POSITIVE_AMOUNT",
            CoreError::SameAccount => "SAME_ACCOUNT",
            CoreError::UnknownTransaction(_) => "UNKNOWN_TRANSACTION",
            CoreError::WrongState { .. } => "WRONG_STATE",
            CoreError::InsufficientReserves(_) => "INSUFFICIENT_RESERVES",
            CoreError::UnknownBank(_) => "UNKNOWN_BANK",
            CoreError::IdempotencyConflict(_) => "IDEMPOTENCY_CONFLICT",
            CoreError::Unauthorized => "UNAUTHORIZED",
            CoreError::Overflow => "OVERFLOW",
            CoreError::StorageFailure(_) => "STORAGE_FAILURE",
            CoreError::Unavailable(_) => "UNAVAILABLE",
            CoreError::BadRequest(_) => "BAD_REQUEST",
        }
    }

    fn to_body(&self) -> ErrorBody {
        let mut body = ErrorBody::new(self.code(), self.to_string());
        body.subject = match self {
            CoreError::DuplicatePseudonym(s)
            | CoreError::NonZeroBalance(s)
            | CoreError::UnknownAccount(s)
            | CoreError::AccountClosed(s)
            | CoreError::InsufficientFunds(s)
            | CoreError::UnknownTransaction(s)
            | CoreError::InsufficientReserves(s)
            | CoreError::UnknownBank(s)
            | CoreError::IdempotencyConflict(s) => Some(s.clone()),
            CoreError::WrongState { tx, .. } => Some(tx.clone()),
            _ => None,
        };
        if let CoreError::WrongState { state, .. } = self {
            body.state = Some(state.clone());
        }
        body
    }

    fn from_body(body: ErrorBody) -> Self {
        let s = body.subject();
        match body.code.as_str() {
            "DUPLICATE_PSEUDONYM" => CoreError::DuplicatePseudonym(s),
            "MALFORMED_PSEUDONYM" => CoreError::MalformedPseudonym,
            "NON_ZERO_BALANCE" => CoreError::NonZeroBalance(s),
            "UNKNOWN_ACCOUNT" => CoreError::UnknownAccount(s),
            "ACCOUNT_CLOSED" => CoreError::AccountClosed(s),
            "INSUFFICIENT_FUNDS" => CoreError::InsufficientFunds(s),
            "NON_POSITIVE_AMOUNT" => CoreError::NonPositiveAmount,
            "SAME_ACCOUNT" => CoreError::SameAccount,
            "UNKNOWN_TRANSACTION" => CoreError::UnknownTransaction(s),
            "WRONG_STATE" => CoreError::WrongState {
                tx: s,
                state: body.state.unwrap_or_default(),
            },
            "INSUFFICIENT_RESERVES" => CoreError::InsufficientReserves(s),
            "UNKNOWN_BANK" => CoreError::UnknownBank(s),
            "IDEMPOTENCY_CONFLICT" => CoreError::IdempotencyConflict(s),
            "UNAUTHORIZED" => CoreError::Unauthorized,
            "OVERFLOW" => CoreError::Overflow,
            "STORAGE_FAILURE" => CoreError::StorageFailure(body.message),
            "UNAVAILABLE" => CoreError::Unavailable(body.message),
            _ => CoreError::BadRequest(body.message),
        }
    }

    fn unavailable(message: impl Into<String>) -> Self {
        CoreError::Unavailable(message.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CbdcAccount {
    pub account_id: AccountId,
    pub pseudonym: PseudonymId,
    /// Spendable balance; excludes earmarked funds.
    pub balance: Money,
    pub earmarked: Money,
    pub status: AccountStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReserveAccount {
    pub bank_id: BankId,
    pub balance: Money,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Transfer,
    Fund,
    Defund,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxState {
    Prepared,
    Committed,
    Aborted,
}

impl TxState {
    pub fn as_str(self) -> &'static str {
        match self {
            TxState::Prepared => "prepared",
            TxState::Committed => "committed",
            TxState::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerAccount {
    Cbdc(AccountId),
    Reserve(BankId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub account: LedgerAccount,
    pub delta: Delta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreTransaction {
    pub tx_id: TransactionId,
    pub instruction_id: InstructionId,
    pub kind: TxKind,
    pub legs: Vec<Posting>,
    pub state: TxState,
    /// Prepared through the two-phase API rather than posted directly.
    pub two_phase: bool,
    pub created_at: Tick,
}

impl CoreTransaction {
    pub fn amount(&self) -> Money {
        self.legs
            .iter()
            .map(|p| p.delta.minor_units())
            .find(|d| *d > 0)
            .map_or(Money::ZERO, Money::pence)
    }

    pub fn postings_sum(&self) -> i128 {
        self.legs.iter().map(|p| p.delta.minor_units() as i128).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRequest {
    pub instruction_id: InstructionId,
    pub from: AccountId,
    pub to: AccountId,
    pub amount: Money,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FundingDirection {
    Fund,
    Defund,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FundingRequest {
    pub instruction_id: InstructionId,
    pub bank_id: BankId,
    pub account_id: AccountId,
    pub amount: Money,
}

/// Outcome of an idempotent write. `replayed` means the instruction had
/// already been processed and nothing new was posted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_id: TransactionId,
    pub replayed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreTotals {
    pub reserves: Money,
    pub cbdc_outstanding: Money,
    pub cbdc_balances: Money,
    pub cbdc_earmarked: Money,
    pub reserves_injected: Money,
}

/// The core ledger API as seen by PIPs and ecosystems.
pub trait CoreLedgerApi: Send + Sync {
    fn open_account(&self, pseudonym: &PseudonymId) -> Result<AccountId, CoreError>;
    fn close_account(&self, account: &AccountId) -> Result<(), CoreError>;
    fn transfer(&self, req: &TransferRequest) -> Result<Receipt, CoreError>;
    fn prepare_transfer(&self, req: &TransferRequest) -> Result<Receipt, CoreError>;
    fn commit(&self, tx: &TransactionId) -> Result<(), CoreError>;
    fn abort(&self, tx: &TransactionId) -> Result<(), CoreError>;
    fn fund(&self, req: &FundingRequest) -> Result<Receipt, CoreError>;
    fn defund(&self, req: &FundingRequest) -> Result<Receipt, CoreError>;
    fn get_balance(&self, account: &AccountId) -> Result<Money, CoreError>;
    fn list_transactions(&self, account: &AccountId, page: Page) -> Result<Vec<CoreTransaction>, CoreError>;
    fn totals(&self) -> Result<CoreTotals, CoreError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum CoreEvent {
    AccountOpened {
        account_id: AccountId,
        pseudonym: PseudonymId,
        caller: String,
    },
    AccountClosed {
        account_id: AccountId,
        caller: String,
    },
    ReservesInjected {
        bank_id: BankId,
        amount: Money,
        caller: String,
    },
    TransactionPosted {
        tx: CoreTransaction,
        caller: String,
    },
    TransactionCommitted {
        tx_id: TransactionId,
        caller: String,
    },
    TransactionAborted {
        tx_id: TransactionId,
        caller: String,
    },
}

/// Everything the core ledger knows. Serializes canonically for state export.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreState {
    pub accounts: BTreeMap<AccountId, CbdcAccount>,
    /// Includes closed accounts: pseudonyms are never reused.
    pub pseudonyms: BTreeMap<PseudonymId, AccountId>,
    pub reserves: BTreeMap<BankId, ReserveAccount>,
    pub transactions: BTreeMap<TransactionId, CoreTransaction>,
    pub instructions: BTreeMap<InstructionId, TransactionId>,
    /// Committed transactions per CBDC account, in commit order.
    pub history: BTreeMap<AccountId, Vec<TransactionId>>,
    pub cbdc_outstanding: Money,
    pub reserves_injected: Money,
    pub next_account: u64,
    pub next_tx: u64,
}

impl CoreState {
    fn account_mut(&mut self, id: &AccountId) -> Result<&mut CbdcAccount, CoreError> {
        self.accounts
            .get_mut(id)
            .ok_or_else(|| CoreError::UnknownAccount(id.to_string()))
    }

    fn open_account(&self, id: &AccountId) -> Result<&CbdcAccount, CoreError> {
        let acct = self
            .accounts
            .get(id)
            .ok_or_else(|| CoreError::UnknownAccount(id.to_string()))?;
        if acct.status == AccountStatus::Closed {
            return Err(CoreError::AccountClosed(id.to_string()));
        }
        Ok(acct)
    }

    fn apply_posting(&mut self, posting: &Posting) -> Result<(), CoreError> {
        match &posting.account {
            LedgerAccount::Cbdc(id) => {
                let acct = self.account_mut(id)?;
                acct.balance = money_add(acct.balance, posting.delta.minor_units())?;
            }
            LedgerAccount::Reserve(bank) => {
                let r = self
                    .reserves
                    .get_mut(bank)
                    .ok_or_else(|| CoreError::UnknownBank(bank.to_string()))?;
                r.balance = money_add(r.balance, posting.delta.minor_units())?;
            }
        }
        Ok(())
    }

    fn record_commit(&mut self, tx_id: &TransactionId) {
        let tx = &self.transactions[tx_id];
        let touched: BTreeSet<AccountId> = tx
            .legs
            .iter()
            .filter_map(|p| match &p.account {
                LedgerAccount::Cbdc(a) => Some(a.clone()),
                LedgerAccount::Reserve(_) => None,
            })
            .collect();
        for a in touched {
            self.history.entry(a).or_default().push(tx_id.clone());
        }
    }

    fn outstanding_delta(tx: &CoreTransaction) -> i64 {
        match tx.kind {
            TxKind::Transfer => 0,
            TxKind::Fund => tx.amount().minor_units(),
            TxKind::Defund => -tx.amount().minor_units(),
        }
    }

    pub fn totals(&self) -> Result<CoreTotals, MoneyError> {
        let open = self.accounts.values();
        Ok(CoreTotals {
            reserves: checked_sum(self.reserves.values().map(|r| r.balance))?,
            cbdc_outstanding: self.cbdc_outstanding,
            cbdc_balances: checked_sum(open.clone().map(|a| a.balance))?,
            cbdc_earmarked: checked_sum(open.map(|a| a.earmarked))?,
            reserves_injected: self.reserves_injected,
        })
    }
}

impl EventSourced for CoreState {
    type Event = CoreEvent;
    type Error = CoreError;

    /// Applies a journaled event. Validation happened before journaling, so
    /// failures here mean the journal is inconsistent.
    fn apply(&mut self, event: &CoreEvent, _ts: Tick) -> Result<(), CoreError> {
        match event {
            CoreEvent::AccountOpened {
                account_id,
                pseudonym,
                ..
            } => {
                self.accounts.insert(
                    account_id.clone(),
                    CbdcAccount {
                        account_id: account_id.clone(),
                        pseudonym: pseudonym.clone(),
                        balance: Money::ZERO,
                        earmarked: Money::ZERO,
                        status: AccountStatus::Open,
                    },
                );
                self.pseudonyms.insert(pseudonym.clone(), account_id.clone());
                self.next_account += 1;
            }
            CoreEvent::AccountClosed { account_id, .. } => {
                self.account_mut(account_id)?.status = AccountStatus::Closed;
            }
            CoreEvent::ReservesInjected { bank_id, amount, .. } => {
                let r = self.reserves.entry(bank_id.clone()).or_insert_with(|| ReserveAccount {
                    bank_id: bank_id.clone(),
                    balance: Money::ZERO,
                });
                r.balance = r.balance.checked_add(*amount)?;
                self.reserves_injected = self.reserves_injected.checked_add(*amount)?;
            }
            CoreEvent::TransactionPosted { tx, .. } => {
                self.next_tx += 1;
                self.instructions.insert(tx.instruction_id.clone(), tx.tx_id.clone());
                self.transactions.insert(tx.tx_id.clone(), tx.clone());
                match tx.state {
                    TxState::Committed => {
                        for leg in &tx.legs {
                            self.apply_posting(leg)?;
                        }
                        self.cbdc_outstanding =
                            money_add(self.cbdc_outstanding, Self::outstanding_delta(tx))?;
                        self.record_commit(&tx.tx_id);
                    }
                    TxState::Prepared => {
                        // Earmark the debit leg; nothing else moves yet.
                        for leg in tx.legs.iter().filter(|l| l.delta.minor_units() < 0) {
                            if let LedgerAccount::Cbdc(id) = &leg.account {
                                let acct = self.account_mut(id)?;
                                let amt = Money::pence(-leg.delta.minor_units());
                                acct.balance = acct.balance.checked_sub(amt)?;
                                acct.earmarked = acct.earmarked.checked_add(amt)?;
                            }
                        }
                    }
                    TxState::Aborted => {}
                }
            }
            CoreEvent::TransactionCommitted { tx_id, .. } => {
                let tx = self
                    .transactions
                    .get(tx_id)
                    .cloned()
                    .ok_or_else(|| CoreError::UnknownTransaction(tx_id.to_string()))?;
                for leg in &tx.legs {
                    let d = leg.delta.minor_units();
                    match &leg.account {
                        LedgerAccount::Cbdc(id) if d < 0 => {
                            let acct = self.account_mut(id)?;
                            acct.earmarked = acct.earmarked.checked_sub(Money::pence(-d))?;
                        }
                        _ => self.apply_posting(leg)?,
                    }
                }
                self.cbdc_outstanding = money_add(self.cbdc_outstanding, Self::outstanding_delta(&tx))?;
                self.transactions.get_mut(tx_id).expect("present").state = TxState::Committed;
                self.record_commit(tx_id);
            }
            CoreEvent::TransactionAborted { tx_id, .. } => {
                let tx = self
                    .transactions
                    .get(tx_id)
                    .cloned()
                    .ok_or_else(|| CoreError::UnknownTransaction(tx_id.to_string()))?;
                for leg in tx.legs.iter().filter(|l| l.delta.minor_units() < 0) {
                    if let LedgerAccount::Cbdc(id) = &leg.account {
                        let acct = self.account_mut(id)?;
                        let amt = Money::pence(-leg.delta.minor_units());
                        acct.earmarked = acct.earmarked.checked_sub(amt)?;
                        acct.balance = acct.balance.checked_add(amt)?;
                    }
                }
                self.transactions.get_mut(tx_id).expect("present").state = TxState::Aborted;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreConfig {
    /// Caller name → role. Unknown callers are refused.
    pub callers: BTreeMap<String, Role>,
}

impl CoreConfig {
    pub fn with_caller(mut self, name: impl Into<String>, role: Role) -> Self {
        self.callers.insert(name.into(), role);
        self
    }
}

/// The core ledger service. All writes go through one lock, which is the
/// single commit queue; reads share it.
#[derive(Debug)]
pub struct CoreLedger {
    config: CoreConfig,
    svc: Journaled<CoreState>,
}

impl CoreLedger {
    /// Rebuilds the ledger from whatever `storage` already holds.
    pub fn recover(
        config: CoreConfig,
        storage: Arc<dyn Storage>,
        clock: LogicalClock,
        faults: FaultInjector,
    ) -> Result<Self, CoreError> {
        Ok(Self {
            config,
            svc: Journaled::recover(SERVICE, storage, clock, faults)?,
        })
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

    pub fn export(&self) -> CoreState {
        self.svc.export()
    }

    fn write<T>(
        &self,
        f: impl FnOnce(&CoreState) -> Result<(Option<CoreEvent>, T), CoreError>,
    ) -> Result<T, CoreError> {
        self.svc.write(f)
    }

    fn read<T>(&self, f: impl FnOnce(&CoreState) -> Result<T, CoreError>) -> Result<T, CoreError> {
        self.svc.read(f)
    }

    fn authorize(&self, caller: &str, allowed: &[Role]) -> Result<(), CoreError> {
        match self.config.callers.get(caller) {
            Some(role) if allowed.contains(role) => Ok(()),
            _ => Err(CoreError::Unauthorized),
        }
    }

    pub fn open_account(&self, caller: &str, pseudonym: &PseudonymId) -> Result<AccountId, CoreError> {
        self.authorize(caller, &[Role::Pip])?;
        if !pseudonym.is_well_formed() {
            return Err(CoreError::MalformedPseudonym);
        }
        self.write(|s| {
            if s.pseudonyms.contains_key(pseudonym) {
                return Err(CoreError::DuplicatePseudonym(pseudonym.to_string()));
            }
            let account_id = AccountId::new(format!("cb-{:06}", s.next_account + 1));
            let ev = CoreEvent::AccountOpened {
                account_id: account_id.clone(),
                pseudonym: pseudonym.clone(),
                caller: caller.to_string(),
            };
            Ok((Some(ev), account_id))
        })
    }

    pub fn close_account(&self, caller: &str, account: &AccountId) -> Result<(), CoreError> {
        self.authorize(caller, &[Role::Pip])?;
        self.write(|s| {
            let acct = s.open_account(account)?;
            if !acct.balance.is_zero() || !acct.earmarked.is_zero() {
                return Err(CoreError::NonZeroBalance(account.to_string()));
            }
            let ev = CoreEvent::AccountClosed {
                account_id: account.clone(),
                caller: caller.to_string(),
            };
            Ok((Some(ev), ()))
        })
    }

    pub fn inject_reserves(&self, caller: &str, bank: &BankId, amount: Money) -> Result<(), CoreError> {
        self.authorize(caller, &[Role::Operator])?;
        self.write(|s| {
            let current = s.reserves.get(bank).map_or(Money::ZERO, |r| r.balance);
            current.checked_add(amount)?;
            s.reserves_injected.checked_add(amount)?;
            let ev = CoreEvent::ReservesInjected {
                bank_id: bank.clone(),
                amount,
                caller: caller.to_string(),
            };
            Ok((Some(ev), ()))
        })
    }

    /// Returns the original receipt if `instruction_id` was already used for
    /// an identical request, or an error if it was used for something else.
    fn replay_check(
        s: &CoreState,
        instruction_id: &InstructionId,
        kind: TxKind,
        two_phase: bool,
        legs: &[Posting],
    ) -> Result<Option<Receipt>, CoreError> {
        let Some(tx_id) = s.instructions.get(instruction_id) else {
            return Ok(None);
        };
        let tx = &s.transactions[tx_id];
        if tx.kind == kind && tx.two_phase == two_phase && tx.legs == legs {
            Ok(Some(Receipt {
                tx_id: tx_id.clone(),
                replayed: true,
            }))
        } else {
            Err(CoreError::IdempotencyConflict(instruction_id.to_string()))
        }
    }

    fn post(
        &self,
        caller: &str,
        instruction_id: &InstructionId,
        kind: TxKind,
        two_phase: bool,
        legs: Vec<Posting>,
        check: impl FnOnce(&CoreState) -> Result<(), CoreError>,
    ) -> Result<Receipt, CoreError> {
        let ts = self.svc.now();
        self.write(|s| {
            if let Some(r) = Self::replay_check(s, instruction_id, kind, two_phase, &legs)? {
                return Ok((None, r));
            }
            check(s)?;
            let tx_id = TransactionId::new(format!("tx-{:08}", s.next_tx + 1));
            let tx = CoreTransaction {
                tx_id: tx_id.clone(),
                instruction_id: instruction_id.clone(),
                kind,
                legs,
                state: if two_phase { TxState::Prepared } else { TxState::Committed },
                two_phase,
                created_at: ts,
            };
            let ev = CoreEvent::TransactionPosted {
                tx,
                caller: caller.to_string(),
            };
            Ok((Some(ev), Receipt { tx_id, replayed: false }))
        })
    }

    fn transfer_inner(&self, caller: &str, req: &TransferRequest, two_phase: bool) -> Result<Receipt, CoreError> {
        self.authorize(caller, &[Role::Ecosystem, Role::Pip])?;
        if req.amount.is_zero() {
            return Err(CoreError::NonPositiveAmount);
        }
        if req.from == req.to {
            return Err(CoreError::SameAccount);
        }
        let legs = vec![
            Posting {
                account: LedgerAccount::Cbdc(req.from.clone()),
                delta: req.amount.negated(),
            },
            Posting {
                account: LedgerAccount::Cbdc(req.to.clone()),
                delta: req.amount.as_delta(),
            },
        ];
        self.post(caller, &req.instruction_id, TxKind::Transfer, two_phase, legs, |s| {
            let from = s.open_account(&req.from)?;
            let to = s.open_account(&req.to)?;
            if from.balance < req.amount {
                return Err(CoreError::InsufficientFunds(req.from.to_string()));
            }
            to.balance.checked_add(to.earmarked)?.checked_add(req.amount)?;
            Ok(())
        })
    }

    pub fn transfer(&self, caller: &str, req: &TransferRequest) -> Result<Receipt, CoreError> {
        self.transfer_inner(caller, req, false)
    }

    pub fn prepare_transfer(&self, caller: &str, req: &TransferRequest) -> Result<Receipt, CoreError> {
        self.transfer_inner(caller, req, true)
    }

    fn finish(&self, caller: &str, tx_id: &TransactionId, commit: bool) -> Result<(), CoreError> {
        self.authorize(caller, &[Role::Ecosystem, Role::Pip])?;
        self.write(|s| {
            let tx = s
                .transactions
                .get(tx_id)
                .ok_or_else(|| CoreError::UnknownTransaction(tx_id.to_string()))?;
            if tx.state != TxState::Prepared {
                return Err(CoreError::WrongState {
                    tx: tx_id.to_string(),
                    state: tx.state.as_str().to_string(),
                });
            }
            if commit {
                for leg in tx.legs.iter().filter(|l| l.delta.minor_units() > 0) {
                    if let LedgerAccount::Cbdc(id) = &leg.account {
                        let to = s.open_account(id)?;
                        to.balance.checked_add(to.earmarked)?.checked_add(Money::pence(leg.delta.minor_units()))?;
                    }
                }
            }
            let ev = if commit {
                CoreEvent::TransactionCommitted {
                    tx_id: tx_id.clone(),
                    caller: caller.to_string(),
                }
            } else {
                CoreEvent::TransactionAborted {
                    tx_id: tx_id.clone(),
                    caller: caller.to_string(),
                }
            };
            Ok((Some(ev), ()))
        })
    }

    pub fn commit(&self, caller: &str, tx_id: &TransactionId) -> Result<(), CoreError> {
        self.finish(caller, tx_id, true)
    }

    pub fn abort(&self, caller: &str, tx_id: &TransactionId) -> Result<(), CoreError> {
        self.finish(caller, tx_id, false)
    }

    fn funding(&self, caller: &str, req: &FundingRequest, direction: FundingDirection) -> Result<Receipt, CoreError> {
        self.authorize(caller, &[Role::Ecosystem, Role::Pip])?;
        if req.amount.is_zero() {
            return Err(CoreError::NonPositiveAmount);
        }
        let (reserve_delta, account_delta, kind) = match direction {
            FundingDirection::Fund => (req.amount.negated(), req.amount.as_delta(), TxKind::Fund),
            FundingDirection::Defund => (req.amount.as_delta(), req.amount.negated(), TxKind::Defund),
        };
        let legs = vec![
            Posting {
                account: LedgerAccount::Reserve(req.bank_id.clone()),
                delta: reserve_delta,
            },
            Posting {
                account: LedgerAccount::Cbdc(req.account_id.clone()),
                delta: account_delta,
            },
        ];
        self.post(caller, &req.instruction_id, kind, false, legs, |s| {
            let reserve = s
                .reserves
                .get(&req.bank_id)
                .ok_or_else(|| CoreError::UnknownBank(req.bank_id.to_string()))?;
            let acct = s.open_account(&req.account_id)?;
            match direction {
                FundingDirection::Fund => {
                    if reserve.balance < req.amount {
                        return Err(CoreError::InsufficientReserves(req.bank_id.to_string()));
                    }
                    acct.balance.checked_add(acct.earmarked)?.checked_add(req.amount)?;
                    s.cbdc_outstanding.checked_add(req.amount)?;
                }
                FundingDirection::Defund => {
                    if acct.balance < req.amount {
                        return Err(CoreError::InsufficientFunds(req.account_id.to_string()));
                    }
                    reserve.balance.checked_add(req.amount)?;
                }
            }
            Ok(())
        })
    }

    pub fn fund(&self, caller: &str, req: &FundingRequest) -> Result<Receipt, CoreError> {
        self.funding(caller, req, FundingDirection::Fund)
    }

    pub fn defund(&self, caller: &str, req: &FundingRequest) -> Result<Receipt, CoreError> {
        self.funding(caller, req, FundingDirection::Defund)
    }

    pub fn get_account(&self, account: &AccountId) -> Result<CbdcAccount, CoreError> {
        self.read(|s| {
            s.accounts
                .get(account)
                .cloned()
                .ok_or_else(|| CoreError::UnknownAccount(account.to_string()))
        })
    }

    pub fn get_balance(&self, account: &AccountId) -> Result<Money, CoreError> {
        self.get_account(account).map(|a| a.balance)
    }

    pub fn get_transaction(&self, tx: &TransactionId) -> Result<CoreTransaction, CoreError> {
        self.read(|s| {
            s.transactions
                .get(tx)
                .cloned()
                .ok_or_else(|| CoreError::UnknownTransaction(tx.to_string()))
        })
    }

    pub fn list_transactions(&self, account: &AccountId, page: Page) -> Result<Vec<CoreTransaction>, CoreError> {
        if page.page == 0 || page.size == 0 {
            return Err(CoreError::BadRequest("page and page size start at 1".into()));
        }
        self.read(|s| {
            if !s.accounts.contains_key(account) {
                return Err(CoreError::UnknownAccount(account.to_string()));
            }
            let ids = s.history.get(account).map(Vec::as_slice).unwrap_or(&[]);
            Ok(page
                .slice(ids)
                .iter()
                .map(|id| s.transactions[id].clone())
                .collect())
        })
    }

    pub fn totals(&self) -> Result<CoreTotals, CoreError> {
        self.read(|s| Ok(s.totals()?))
    }
}

/// In-process client bound to one caller identity.
#[derive(Debug, Clone)]
pub struct LocalCore<S> {
    service: S,
    caller: String,
}

impl<S> LocalCore<S> {
    pub fn new(service: S, caller: impl Into<String>) -> Self {
        Self {
            service,
            caller: caller.into(),
        }
    }
}

impl<S: ServiceHandle<CoreLedger>> CoreLedgerApi for LocalCore<S> {
    fn open_account(&self, pseudonym: &PseudonymId) -> Result<AccountId, CoreError> {
        self.service.call(|c| c.open_account(&self.caller, pseudonym))
    }
    fn close_account(&self, account: &AccountId) -> Result<(), CoreError> {
        self.service.call(|c| c.close_account(&self.caller, account))
    }
    fn transfer(&self, req: &TransferRequest) -> Result<Receipt, CoreError> {
        self.service.call(|c| c.transfer(&self.caller, req))
    }
    fn prepare_transfer(&self, req: &TransferRequest) -> Result<Receipt, CoreError> {
        self.service.call(|c| c.prepare_transfer(&self.caller, req))
    }
    fn commit(&self, tx: &TransactionId) -> Result<(), CoreError> {
        self.service.call(|c| c.commit(&self.caller, tx))
    }
    fn abort(&self, tx: &TransactionId) -> Result<(), CoreError> {
        self.service.call(|c| c.abort(&self.caller, tx))
    }
    fn fund(&self, req: &FundingRequest) -> Result<Receipt, CoreError> {
        self.service.call(|c| c.fund(&self.caller, req))
    }
    fn defund(&self, req: &FundingRequest) -> Result<Receipt, CoreError> {
        self.service.call(|c| c.defund(&self.caller, req))
    }
    fn get_balance(&self, account: &AccountId) -> Result<Money, CoreError> {
        self.service.call(|c| c.get_balance(account))
    }
    fn list_transactions(&self, account: &AccountId, page: Page) -> Result<Vec<CoreTransaction>, CoreError> {
        self.service.call(|c| c.list_transactions(account, page))
    }
    fn totals(&self) -> Result<CoreTotals, CoreError> {
        self.service.call(|c| c.totals())
    }
}

impl crate::node::Crashable for CoreLedger {
    fn is_crashed(&self) -> bool {
        CoreLedger::is_crashed(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::InjectionPoint;
    use crate::journal::MemoryStorage;

    const PIP: &str = "pip:PIP1";
    const ECO: &str = "eco:ECO1";
    const OPS: &str = "harness";

    fn ledger() -> CoreLedger {
        let config = CoreConfig::default()
            .with_caller(PIP, Role::Pip)
            .with_caller(ECO, Role::Ecosystem)
            .with_caller(OPS, Role::Operator);
        CoreLedger::recover(config, MemoryStorage::new(), LogicalClock::new(), FaultInjector::none()).unwrap()
    }

    fn pseudonym(n: u8) -> PseudonymId {
        PseudonymId::new(format!("{:064x}", n as u64 + 1))
    }

    fn funded(l: &CoreLedger, n: u8, pence: i64) -> AccountId {
        let a = l.open_account(PIP, &pseudonym(n)).unwrap();
        if pence > 0 {
            l.inject_reserves(OPS, &BankId::from("BANK_A"), Money::pence(pence)).unwrap();
            l.fund(ECO, &FundingRequest {
                instruction_id: format!("seed-{n}").into(),
                bank_id: "BANK_A".into(),
                account_id: a.clone(),
                amount: Money::pence(pence),
            })
            .unwrap();
        }
        a
    }

    fn xfer(id: &str, from: &AccountId, to: &AccountId, pence: i64) -> TransferRequest {
        TransferRequest {
            instruction_id: id.into(),
            from: from.clone(),
            to: to.clone(),
            amount: Money::pence(pence),
        }
    }

    #[test]
    fn open_creates_empty_account() {
        let l = ledger();
        let a = l.open_account(PIP, &pseudonym(1)).unwrap();
        assert_eq!(l.get_balance(&a).unwrap(), Money::ZERO);
        assert_eq!(l.get_account(&a).unwrap().status, AccountStatus::Open);
    }

    #[test]
    fn duplicate_pseudonym_refused() {
        let l = ledger();
        l.open_account(PIP, &pseudonym(1)).unwrap();
        assert!(matches!(l.open_account(PIP, &pseudonym(1)), Err(CoreError::DuplicatePseudonym(_))));
    }

    #[test]
    fn malformed_pseudonym_refused() {
        let l = ledger();
        assert_eq!(l.open_account(PIP, &"user1".into()), Err(CoreError::MalformedPseudonym));
    }

    #[test]
    fn close_requires_zero_and_tombstones_pseudonym() {
        let l = ledger();
        let a = funded(&l, 1, 5);
        assert!(matches!(l.close_account(PIP, &a), Err(CoreError::NonZeroBalance(_))));
        let b = l.open_account(PIP, &pseudonym(2)).unwrap();
        l.close_account(PIP, &b).unwrap();
        assert_eq!(l.get_account(&b).unwrap().status, AccountStatus::Closed);
        assert!(matches!(l.open_account(PIP, &pseudonym(2)), Err(CoreError::DuplicatePseudonym(_))));
        assert!(matches!(l.close_account(PIP, &b), Err(CoreError::AccountClosed(_))));
        assert!(matches!(l.close_account(PIP, &"cb-999999".into()), Err(CoreError::UnknownAccount(_))));
    }

    #[test]
    fn transfer_moves_value() {
        let l = ledger();
        let a1 = funded(&l, 1, 1000);
        let a2 = funded(&l, 2, 0);
        let r = l.transfer(ECO, &xfer("i1", &a1, &a2, 400)).unwrap();
        assert!(!r.replayed);
        assert_eq!(l.get_balance(&a1).unwrap(), Money::pence(600));
        assert_eq!(l.get_balance(&a2).unwrap(), Money::pence(400));
    }

    #[test]
    fn transfer_rejections() {
        let l = ledger();
        let a1 = funded(&l, 1, 100);
        let a2 = funded(&l, 2, 0);
        assert_eq!(l.transfer(ECO, &xfer("i0", &a1, &a2, 0)), Err(CoreError::NonPositiveAmount));
        assert!(matches!(l.transfer(ECO, &xfer("i1", &a1, &a2, 101)), Err(CoreError::InsufficientFunds(_))));
        assert!(matches!(
            l.transfer(ECO, &xfer("i2", &a1, &"cb-404".into(), 1)),
            Err(CoreError::UnknownAccount(_))
        ));
        assert_eq!(l.transfer(ECO, &xfer("i3", &a1, &a1, 1)), Err(CoreError::SameAccount));
        assert_eq!(l.transfer("stranger", &xfer("i4", &a1, &a2, 1)), Err(CoreError::Unauthorized));
    }

    #[test]
    fn transfer_is_idempotent_on_instruction() {
        let l = ledger();
        let a1 = funded(&l, 1, 1000);
        let a2 = funded(&l, 2, 0);
        let first = l.transfer(ECO, &xfer("i1", &a1, &a2, 400)).unwrap();
        let again = l.transfer(ECO, &xfer("i1", &a1, &a2, 400)).unwrap();
        assert_eq!(again.tx_id, first.tx_id);
        assert!(again.replayed);
        assert_eq!(l.get_balance(&a1).unwrap(), Money::pence(600));
        assert!(matches!(
            l.transfer(ECO, &xfer("i1", &a1, &a2, 300)),
            Err(CoreError::IdempotencyConflict(_))
        ));
    }

    #[test]
    fn prepare_commit_abort() {
        let l = ledger();
        let a1 = funded(&l, 1, 1000);
        let a2 = funded(&l, 2, 0);
        let p = l.prepare_transfer(ECO, &xfer("p1", &a1, &a2, 400)).unwrap();
        let acct = l.get_account(&a1).unwrap();
        assert_eq!((acct.balance, acct.earmarked), (Money::pence(600), Money::pence(400)));
        l.abort(ECO, &p.tx_id).unwrap();
        let acct = l.get_account(&a1).unwrap();
        assert_eq!((acct.balance, acct.earmarked), (Money::pence(1000), Money::ZERO));
        assert_eq!(
            l.commit(ECO, &p.tx_id),
            Err(CoreError::WrongState { tx: p.tx_id.to_string(), state: "aborted".into() })
        );

        let q = l.prepare_transfer(ECO, &xfer("p2", &a1, &a2, 250)).unwrap();
        l.commit(ECO, &q.tx_id).unwrap();
        let acct = l.get_account(&a1).unwrap();
        assert_eq!((acct.balance, acct.earmarked), (Money::pence(750), Money::ZERO));
        assert_eq!(l.get_balance(&a2).unwrap(), Money::pence(250));
        assert!(matches!(l.abort(ECO, &q.tx_id), Err(CoreError::WrongState { .. })));
        assert!(matches!(l.commit(ECO, &"tx-nope".into()), Err(CoreError::UnknownTransaction(_))));
    }

    #[test]
    fn earmarked_funds_block_close() {
        let l = ledger();
        let a1 = funded(&l, 1, 10);
        let a2 = funded(&l, 2, 0);
        l.prepare_transfer(ECO, &xfer("p", &a1, &a2, 10)).unwrap();
        assert_eq!(l.get_balance(&a1).unwrap(), Money::ZERO);
        assert!(matches!(l.close_account(PIP, &a1), Err(CoreError::NonZeroBalance(_))));
    }

    #[test]
    fn fund_and_defund_move_reserves() {
        let l = ledger();
        let bank = BankId::from("BANK_A");
        l.inject_reserves(OPS, &bank, Money::pence(1_000_000)).unwrap();
        let a = l.open_account(PIP, &pseudonym(1)).unwrap();
        let req = FundingRequest {
            instruction_id: "f1".into(),
            bank_id: bank.clone(),
            account_id: a.clone(),
            amount: Money::pence(500),
        };
        l.fund(ECO, &req).unwrap();
        let s = l.export();
        assert_eq!(s.reserves[&bank].balance, Money::pence(999_500));
        assert_eq!(l.get_balance(&a).unwrap(), Money::pence(500));
        assert_eq!(s.cbdc_outstanding, Money::pence(500));

        let back = FundingRequest { instruction_id: "d1".into(), amount: Money::pence(200), ..req.clone() };
        l.defund(ECO, &back).unwrap();
        let t = l.totals().unwrap();
        assert_eq!(t.reserves, Money::pence(999_700));
        assert_eq!(t.cbdc_outstanding, Money::pence(300));
        assert!(matches!(
            l.defund(ECO, &FundingRequest { instruction_id: "d2".into(), amount: Money::pence(301), ..req }),
            Err(CoreError::InsufficientFunds(_))
        ));
    }

    #[test]
    fn fund_without_reserves_refused() {
        let l = ledger();
        let bank = BankId::from("BANK_B");
        l.inject_reserves(OPS, &bank, Money::ZERO).unwrap();
        let a = l.open_account(PIP, &pseudonym(1)).unwrap();
        let req = FundingRequest {
            instruction_id: "f1".into(),
            bank_id: bank,
            account_id: a,
            amount: Money::pence(1),
        };
        assert!(matches!(l.fund(ECO, &req), Err(CoreError::InsufficientReserves(_))));
        let unknown = FundingRequest { bank_id: "BANK_Z".into(), ..req };
        assert!(matches!(l.fund(ECO, &unknown), Err(CoreError::UnknownBank(_))));
    }

    #[test]
    fn listing_is_paginated_in_commit_order() {
        let l = ledger();
        let a1 = funded(&l, 1, 1000);
        let a2 = funded(&l, 2, 0);
        assert_eq!(l.list_transactions(&a2, Page::first(10)).unwrap().len(), 0);
        let mut ids = Vec::new();
        for i in 0..5 {
            ids.push(l.transfer(ECO, &xfer(&format!("t{i}"), &a1, &a2, 10)).unwrap().tx_id);
        }
        let sizes: Vec<usize> = (1..=3)
            .map(|p| l.list_transactions(&a2, Page::new(p, 2)).unwrap().len())
            .collect();
        assert_eq!(sizes, [2, 2, 1]);
        let all: Vec<_> = (1..=3)
            .flat_map(|p| l.list_transactions(&a2, Page::new(p, 2)).unwrap())
            .map(|t| t.tx_id)
            .collect();
        assert_eq!(all, ids);
        assert!(matches!(l.list_transactions(&"cb-x".into(), Page::first(1)), Err(CoreError::UnknownAccount(_))));
    }

    #[test]
    fn one_credit_is_one_listed_transaction() {
        let l = ledger();
        let a1 = funded(&l, 1, 400);
        let a2 = funded(&l, 2, 0);
        l.transfer(ECO, &xfer("t", &a1, &a2, 400)).unwrap();
        assert_eq!(l.get_balance(&a2).unwrap(), Money::pence(400));
        assert_eq!(l.list_transactions(&a2, Page::first(10)).unwrap().len(), 1);
    }

    #[test]
    fn roles_are_enforced() {
        let l = ledger();
        assert_eq!(l.open_account(ECO, &pseudonym(1)), Err(CoreError::Unauthorized));
        assert_eq!(
            l.inject_reserves(PIP, &"BANK_A".into(), Money::pence(1)),
            Err(CoreError::Unauthorized)
        );
    }

    #[test]
    fn recovery_reproduces_state() {
        let storage = MemoryStorage::new();
        let config = CoreConfig::default()
            .with_caller(PIP, Role::Pip)
            .with_caller(ECO, Role::Ecosystem)
            .with_caller(OPS, Role::Operator);
        let l = CoreLedger::recover(config.clone(), storage.clone(), LogicalClock::new(), FaultInjector::none()).unwrap();
        let a1 = funded(&l, 1, 1000);
        let a2 = funded(&l, 2, 0);
        l.prepare_transfer(ECO, &xfer("p", &a1, &a2, 300)).unwrap();
        l.transfer(ECO, &xfer("t", &a1, &a2, 100)).unwrap();
        let live = l.export();
        let again = CoreLedger::recover(config, storage, LogicalClock::new(), FaultInjector::none()).unwrap();
        assert_eq!(again.export(), live);
        assert_eq!(again.head_hash(), l.head_hash());
    }

    #[test]
    fn crash_after_event_keeps_the_write() {
        let faults = FaultInjector::new(vec![crate::fault::FaultSpec {
            target: SERVICE.into(),
            point: InjectionPoint::AfterEvent { kind: "transaction_posted".into() },
            kind: crate::fault::FaultKind::Crash,
            times: 1,
        }]);
        let config = CoreConfig::default()
            .with_caller(PIP, Role::Pip)
            .with_caller(ECO, Role::Ecosystem)
            .with_caller(OPS, Role::Operator);
        let storage = MemoryStorage::new();
        let l = CoreLedger::recover(config.clone(), storage.clone(), LogicalClock::new(), faults.clone()).unwrap();
        l.inject_reserves(OPS, &"BANK_A".into(), Money::pence(50)).unwrap();
        let a = l.open_account(PIP, &pseudonym(1)).unwrap();
        let req = FundingRequest {
            instruction_id: "f".into(),
            bank_id: "BANK_A".into(),
            account_id: a.clone(),
            amount: Money::pence(50),
        };
        assert!(matches!(l.fund(ECO, &req), Err(CoreError::Unavailable(_))));
        assert!(l.is_crashed());
        assert!(matches!(l.get_balance(&a), Err(CoreError::Unavailable(_))));
        let restarted = CoreLedger::recover(config, storage, LogicalClock::new(), faults).unwrap();
        let r = restarted.fund(ECO, &req).unwrap();
        assert!(r.replayed);
        assert_eq!(restarted.get_balance(&a).unwrap(), Money::pence(50));
    }

    #[test]
    fn error_bodies_round_trip() {
        let errors = [
            CoreError::UnknownAccount("cb-1".into()),
            CoreError::WrongState { tx: "tx-1".into(), state: "committed".into() },
            CoreError::NonPositiveAmount,
            CoreError::Unavailable("down".into()),
        ];
        for e in errors {
            let back = CoreError::from_body(e.to_body());
            assert_eq!(back.code(), e.code());
            if let CoreError::WrongState { .. } = e {
                assert_eq!(back, e);
            }
        }
    }
}
