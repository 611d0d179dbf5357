//! Payment Interface Provider.
//!
//! The PIP is the only party that knows both a user's identity and the
//! pseudonym their CBDC account is registered under. Everything the core
//! ledger sees is derived here with a keyed digest, and the mapping lives
//! only in this service's journal.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::{ErrorBody, Role, WireError};
use crate::bank::{AccountStatus, BankAccountRef, BankError};
use crate::clock::LogicalClock;
use crate::ecosystem::identity::{KycRequest, KycVerdict};
use crate::ecosystem::standards::{WireInstruction, WirePayee, WirePayer};
use crate::ecosystem::{EcoError, EcosystemApi, LinkRequest, PaymentStatus};
use crate::fault::FaultInjector;
use crate::fps::BankSet;
use crate::journal::{sha256_hex, JournalError, Storage};
use crate::ledger::{CoreError, CoreLedgerApi};
use crate::money::Money;
use crate::node::Crashable;
use crate::service::{EventSourced, Journaled};
use crate::ids::{AccountId, BankId, InstructionId, PseudonymId, Tick, UserId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipError {
    #[error("user {0} is already registered")]
    DuplicateUser(String),
    #[error("identity verification failed for {0}")]
    KycFailed(String),
    #[error("user {0} has not completed onboarding")]
    UserNotOnboarded(String),
    #[error("caller is not authorized for this operation")]
    Unauthorized,
    #[error(transparent)]
    Core(CoreError),
    #[error(transparent)]
    Ecosystem(EcoError),
    #[error(transparent)]
    Bank(BankError),
    #[error("{0}")]
    StorageFailure(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("{0}")]
    BadRequest(String),
}

impl From<JournalError> for PipError {
    fn from(e: JournalError) -> Self {
        PipError::StorageFailure(e.to_string())
    }
}

/// Upstream outages surface as the PIP being unavailable, so clients see a
/// single retryable code.
macro_rules! upstream {
    ($variant:ident, $ty:ty) => {
        impl From<$ty> for PipError {
            fn from(e: $ty) -> Self {
                if e.is_unavailable() {
                    PipError::Unavailable(e.to_string())
                } else {
                    PipError::$variant(e)
                }
            }
        }
    };
}
upstream!(Core, CoreError);
upstream!(Ecosystem, EcoError);
upstream!(Bank, BankError);

const CORE_CODES: &[&str] = &[
    "DUPLICATE_PSEUDONYM",
    "MALFORMED_PSEUDONYM",
    "ACCOUNT_CLOSED",
    "INSUFFICIENT_FUNDS",
    "INSUFFICIENT_RESERVES",
    "UNKNOWN_ACCOUNT",
];

impl WireError for PipError {
    fn code(&self) -> &'static str {
        match self {
            PipError::DuplicateUser(_) => "DUPLICATE_USER",
            PipError::KycFailed(_) => "KYC_FAILED",
            PipError::UserNotOnboarded(_) => "USER_NOT_ONBOARDED",
            PipError::Unauthorized => "UNAUTHORIZED",
            PipError::Core(e) => e.code(),
            PipError::Ecosystem(e) => e.code(),
            PipError::Bank(e) => e.code(),
            PipError::StorageFailure(_) => "STORAGE_FAILURE",
            PipError::Unavailable(_) => "UNAVAILABLE",
            PipError::BadRequest(_) => "BAD_REQUEST",
        }
    }

    fn to_body(&self) -> ErrorBody {
        match self {
            PipError::Core(e) => e.to_body(),
            PipError::Ecosystem(e) => e.to_body(),
            PipError::Bank(e) => e.to_body(),
            PipError::DuplicateUser(s)
            | PipError::KycFailed(s)
            | PipError::UserNotOnboarded(s) => {
                let mut b = ErrorBody::new(self.code(), self.to_string());
                b.subject = Some(s.clone());
                b
            }
            _ => ErrorBody::new(self.code(), self.to_string()),
        }
    }

    fn from_body(body: ErrorBody) -> Self {
        let s = body.subject();
        match body.code.as_str() {
            "DUPLICATE_USER" => PipError::DuplicateUser(s),
            "KYC_FAILED" => PipError::KycFailed(s),
            "USER_NOT_ONBOARDED" => PipError::UserNotOnboarded(s),
            "UNAUTHORIZED" => PipError::Unauthorized,
            "STORAGE_FAILURE" => PipError::StorageFailure(body.message),
            "UNAVAILABLE" => PipError::Unavailable(body.message),
            "BAD_REQUEST" => PipError::BadRequest(body.message),
            c if CORE_CODES.contains(&c) => PipError::Core(CoreError::from_body(body)),
            _ => PipError::Ecosystem(EcoError::from_body(body)),
        }
    }

    fn unavailable(message: impl Into<String>) -> Self {
        PipError::Unavailable(message.into())
    }

    fn http_status(&self) -> u16 {
        match self {
            PipError::Core(e) => e.http_status(),
            PipError::Ecosystem(e) => e.http_status(),
            PipError::Bank(e) => e.http_status(),
            PipError::KycFailed(_) => 403,
            other => match other.code() {
                "UNAUTHORIZED" => 401,
                "USER_NOT_ONBOARDED" => 404,
                "UNAVAILABLE" | "STORAGE_FAILURE" => 503,
                "BAD_REQUEST" => 400,
                _ => 409,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KycStatus {
    Pending,
    Passed,
    Failed,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Onboarding {
    pub user_id: UserId,
    pub legal_name: String,
    /// Fixture blobs keyed by document type.
    #[serde(default)]
    pub documents: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub legal_name: String,
    pub documents: BTreeMap<String, String>,
    pub kyc_status: KycStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudonymMapping {
    pub user_id: UserId,
    pub pseudonym: PseudonymId,
    /// 16 bytes, hex.
    pub salt: String,
    pub created_at: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub account_id: Option<AccountId>,
}

/// What a user asks their PIP to pay.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentRequest {
    pub payee: WirePayee,
    pub amount: String,
    /// `cbdc`, `bank` or `auto`.
    #[serde(default)]
    pub preferred_rail: Option<String>,
    #[serde(default)]
    pub memo: Option<String>,
    /// Retry token chosen by the client; equal tokens mean the same payment.
    #[serde(default)]
    pub client_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CbdcHolding {
    pub account_id: AccountId,
    pub balance: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankHolding {
    pub bank_id: BankId,
    pub account_id: AccountId,
    pub balance: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Portfolio {
    pub user_id: UserId,
    pub cbdc: Vec<CbdcHolding>,
    pub bank: Vec<BankHolding>,
}

impl Portfolio {
    pub fn total(&self) -> Money {
        self.cbdc
            .iter()
            .map(|h| h.balance)
            .chain(self.bank.iter().map(|h| h.balance))
            .fold(Money::ZERO, |a, b| a.checked_add(b).unwrap_or(a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum PipEvent {
    UserOnboarded {
        profile: UserProfile,
    },
    PseudonymDerived {
        mapping: PseudonymMapping,
    },
    CbdcAccountOpened {
        user_id: UserId,
        account_id: AccountId,
    },
    PaymentAccepted {
        user_id: UserId,
        client_token: String,
        instruction_id: InstructionId,
        request: PaymentRequest,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PipState {
    pub users: BTreeMap<UserId, UserProfile>,
    pub mappings: BTreeMap<UserId, PseudonymMapping>,
    /// `(user, client token)` to the instruction id it was assigned.
    pub tokens: BTreeMap<UserId, BTreeMap<String, (InstructionId, PaymentRequest)>>,
    pub next_instruction: u64,
}

impl EventSourced for PipState {
    type Event = PipEvent;
    type Error = PipError;

    fn apply(&mut self, event: &PipEvent, _ts: Tick) -> Result<(), PipError> {
        match event {
            PipEvent::UserOnboarded { profile } => {
                self.users.insert(profile.user_id.clone(), profile.clone());
            }
            PipEvent::PseudonymDerived { mapping } => {
                self.mappings.insert(mapping.user_id.clone(), mapping.clone());
            }
            PipEvent::CbdcAccountOpened { user_id, account_id } => {
                let m = self
                    .mappings
                    .get_mut(user_id)
                    .ok_or_else(|| PipError::UserNotOnboarded(user_id.to_string()))?;
                m.account_id = Some(account_id.clone());
            }
            PipEvent::PaymentAccepted {
                user_id,
                client_token,
                instruction_id,
                request,
            } => {
                self.tokens
                    .entry(user_id.clone())
                    .or_default()
                    .insert(client_token.clone(), (instruction_id.clone(), request.clone()));
                self.next_instruction += 1;
            }
        }
        Ok(())
    }
}

impl PipState {
    fn passed(&self, user: &UserId) -> Result<&UserProfile, PipError> {
        match self.users.get(user) {
            Some(p) if p.kyc_status == KycStatus::Passed => Ok(p),
            _ => Err(PipError::UserNotOnboarded(user.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipConfig {
    /// Service and caller name, e.g. `pip:PIP1`.
    pub name: String,
    /// Short id used in instruction ids.
    pub pip_id: String,
    pub secret_key: Vec<u8>,
    /// Seeds the salt stream.
    pub seed: u64,
    pub callers: BTreeMap<String, Role>,
}

impl PipConfig {
    pub fn new(pip_id: &str, secret_key: impl Into<Vec<u8>>, seed: u64) -> Self {
        Self {
            name: format!("pip:{pip_id}"),
            pip_id: pip_id.to_string(),
            secret_key: secret_key.into(),
            seed,
            callers: BTreeMap::new(),
        }
    }

    pub fn with_caller(mut self, name: &str, role: Role) -> Self {
        self.callers.insert(name.to_string(), role);
        self
    }
}

/// Keyed pseudonym: lowercase hex SHA-256 over key, user id and salt.
pub fn derive_pseudonym(secret_key: &[u8], user: &UserId, salt: &[u8]) -> PseudonymId {
    let mut bytes = Vec::with_capacity(secret_key.len() + user.as_str().len() + salt.len());
    bytes.extend_from_slice(secret_key);
    bytes.extend_from_slice(user.as_str().as_bytes());
    bytes.extend_from_slice(salt);
    PseudonymId::new(sha256_hex(&bytes))
}

/// The `n`th salt of the stream seeded with `seed`. Addressing by position
/// lets a recovered PIP continue the stream without storing RNG state.
pub fn salt_at(seed: u64, n: u64) -> [u8; 16] {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_word_pos(u128::from(n) * 4);
    let mut salt = [0u8; 16];
    rng.fill_bytes(&mut salt);
    salt
}

pub trait PipApi: Send + Sync {
    fn onboard_user(&self, req: &Onboarding) -> Result<UserId, PipError>;
    fn open_cbdc_account(&self, user: &UserId) -> Result<AccountId, PipError>;
    fn submit_payment(&self, user: &UserId, req: &PaymentRequest) -> Result<PaymentStatus, PipError>;
    fn get_portfolio(&self, user: &UserId) -> Result<Portfolio, PipError>;
}

pub struct Pip {
    config: PipConfig,
    svc: Journaled<PipState>,
    core: Arc<dyn CoreLedgerApi>,
    eco: Arc<dyn EcosystemApi>,
    banks: BankSet,
    user_locks: Mutex<BTreeMap<UserId, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for Pip {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pip").field("name", &self.config.name).finish()
    }
}

impl Pip {
    /// `core`, `eco` and `banks` must be clients acting as this PIP.
    pub fn recover(
        config: PipConfig,
        storage: Arc<dyn Storage>,
        clock: LogicalClock,
        faults: FaultInjector,
        core: Arc<dyn CoreLedgerApi>,
        eco: Arc<dyn EcosystemApi>,
        banks: BankSet,
    ) -> Result<Self, PipError> {
        let svc = Journaled::recover(config.name.clone(), storage, clock, faults)?;
        Ok(Self {
            config,
            svc,
            core,
            eco,
            banks,
            user_locks: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn export(&self) -> PipState {
        self.svc.export()
    }

    pub fn head_hash(&self) -> String {
        self.svc.head_hash()
    }

    pub fn storage(&self) -> Arc<dyn Storage> {
        self.svc.storage()
    }

    pub fn is_crashed(&self) -> bool {
        self.svc.is_crashed()
    }

    fn authorize(&self, caller: &str) -> Result<(), PipError> {
        match self.config.callers.get(caller) {
            Some(Role::Operator) => Ok(()),
            _ => Err(PipError::Unauthorized),
        }
    }

    fn lock_user(&self, user: &UserId) -> Arc<Mutex<()>> {
        self.user_locks.lock().unwrap().entry(user.clone()).or_default().clone()
    }

    /// Bank accounts the user has consented to share with this PIP.
    fn consented_accounts(&self, user: &UserId) -> Result<Vec<BankAccountRef>, PipError> {
        let mut out = Vec::new();
        for (bank_id, bank) in &self.banks {
            match bank.ob_get_accounts(user.as_str()) {
                Ok(accounts) => out.extend(accounts.into_iter().filter(|a| a.status == AccountStatus::Open).map(|a| BankAccountRef {
                    bank_id: bank_id.clone(),
                    account_id: a.account_id,
                })),
                Err(e) if e.is_unavailable() => return Err(e.into()),
                // No consent or no relationship with this bank.
                Err(_) => {}
            }
        }
        Ok(out)
    }

    pub fn onboard_user(&self, caller: &str, req: &Onboarding) -> Result<UserId, PipError> {
        self.authorize(caller)?;
        if req.user_id.as_str().is_empty() {
            return Err(PipError::BadRequest("user_id is required".into()));
        }
        let lock = self.lock_user(&req.user_id);
        let _guard = lock.lock().unwrap();
        if self.svc.read(|s| Ok(s.users.contains_key(&req.user_id)))? {
            return Err(PipError::DuplicateUser(req.user_id.to_string()));
        }
        let verdict = self.eco.identity_verify(&KycRequest {
            user_id: req.user_id.clone(),
            legal_name: req.legal_name.clone(),
            documents: req.documents.clone(),
        })?;
        let kyc_status = match verdict {
            KycVerdict::Pass => KycStatus::Passed,
            KycVerdict::Fail => KycStatus::Failed,
        };
        let profile = UserProfile {
            user_id: req.user_id.clone(),
            legal_name: req.legal_name.clone(),
            documents: req.documents.clone(),
            kyc_status,
        };
        self.svc.record(PipEvent::UserOnboarded { profile })?;
        if kyc_status == KycStatus::Failed {
            return Err(PipError::KycFailed(req.user_id.to_string()));
        }
        let bank = self.consented_accounts(&req.user_id)?;
        self.eco.link_accounts(&LinkRequest {
            user_id: req.user_id.clone(),
            cbdc: None,
            bank,
        })?;
        Ok(req.user_id.clone())
    }

    /// Derives (or reuses) the user's pseudonym and journals the mapping.
    pub fn derive_pseudonym(&self, caller: &str, user: &UserId) -> Result<PseudonymId, PipError> {
        self.authorize(caller)?;
        let lock = self.lock_user(user);
        let _guard = lock.lock().unwrap();
        self.mapping(user).map(|m| m.pseudonym)
    }

    fn mapping(&self, user: &UserId) -> Result<PseudonymMapping, PipError> {
        self.svc.write(|s| {
            s.passed(user)?;
            if let Some(m) = s.mappings.get(user) {
                return Ok((None, m.clone()));
            }
            let salt = salt_at(self.config.seed, s.mappings.len() as u64);
            let mapping = PseudonymMapping {
                user_id: user.clone(),
                pseudonym: derive_pseudonym(&self.config.secret_key, user, &salt),
                salt: hex::encode(salt),
                created_at: self.svc.now(),
                account_id: None,
            };
            Ok((Some(PipEvent::PseudonymDerived { mapping: mapping.clone() }), mapping))
        })
    }

    pub fn open_cbdc_account(&self, caller: &str, user: &UserId) -> Result<AccountId, PipError> {
        self.authorize(caller)?;
        let lock = self.lock_user(user);
        let _guard = lock.lock().unwrap();
        let mapping = self.mapping(user)?;
        let account_id = match mapping.account_id {
            Some(a) => a,
            None => {
                let a = self.core.open_account(&mapping.pseudonym)?;
                self.svc.record(PipEvent::CbdcAccountOpened {
                    user_id: user.clone(),
                    account_id: a.clone(),
                })?;
                a
            }
        };
        let bank = self.consented_accounts(user)?;
        self.eco.link_accounts(&LinkRequest {
            user_id: user.clone(),
            cbdc: Some(account_id.clone()),
            bank,
        })?;
        Ok(account_id)
    }

    pub fn submit_payment(&self, caller: &str, user: &UserId, req: &PaymentRequest) -> Result<PaymentStatus, PipError> {
        self.authorize(caller)?;
        let lock = self.lock_user(user);
        let _guard = lock.lock().unwrap();
        let amount = Money::parse_decimal(&req.amount).map_err(|e| PipError::BadRequest(e.to_string()))?;
        if amount.is_zero() {
            return Err(PipError::Ecosystem(EcoError::BadRequest("amount must be positive".into())));
        }
        let instruction_id = self.svc.write(|s| {
            s.passed(user)?;
            if let Some(token) = &req.client_token {
                if let Some((id, earlier)) = s.tokens.get(user).and_then(|t| t.get(token)) {
                    if earlier != req {
                        return Err(PipError::Ecosystem(EcoError::IdempotencyConflict(id.to_string())));
                    }
                    return Ok((None, id.clone()));
                }
            }
            let id = InstructionId::new(format!("{}-ins-{:08}", self.config.pip_id, s.next_instruction + 1));
            let ev = PipEvent::PaymentAccepted {
                user_id: user.clone(),
                client_token: req.client_token.clone().unwrap_or_else(|| id.to_string()),
                instruction_id: id.clone(),
                request: req.clone(),
            };
            Ok((Some(ev), id))
        })?;
        let wire = WireInstruction {
            instruction_id: Some(instruction_id.to_string()),
            payer: Some(WirePayer {
                user: Some(user.to_string()),
                preferred_rail: Some(req.preferred_rail.clone().unwrap_or_else(|| "auto".into())),
            }),
            payee: Some(req.payee.clone()),
            amount: Some(req.amount.clone()),
            currency: Some("GBP".into()),
            memo: req.memo.clone(),
        };
        Ok(self.eco.submit_payment(&wire)?)
    }

    pub fn get_portfolio(&self, caller: &str, user: &UserId) -> Result<Portfolio, PipError> {
        self.authorize(caller)?;
        let account = self.svc.read(|s| {
            s.passed(user)?;
            Ok(s.mappings.get(user).and_then(|m| m.account_id.clone()))
        })?;
        let mut cbdc = Vec::new();
        if let Some(account_id) = account {
            let balance = self.core.get_balance(&account_id)?;
            cbdc.push(CbdcHolding { account_id, balance });
        }
        let mut bank = Vec::new();
        for r in self.consented_accounts(user)? {
            let balance = self.banks[&r.bank_id].ob_get_balance(&r.account_id)?;
            bank.push(BankHolding {
                bank_id: r.bank_id,
                account_id: r.account_id,
                balance,
            });
        }
        Ok(Portfolio {
            user_id: user.clone(),
            cbdc,
            bank,
        })
    }
}

impl Crashable for Pip {
    fn is_crashed(&self) -> bool {
        Pip::is_crashed(self)
    }
}

/// In-process client bound to one caller identity.
#[derive(Debug, Clone)]
pub struct LocalPip<S> {
    service: S,
    caller: String,
}

impl<S> LocalPip<S> {
    pub fn new(service: S, caller: impl Into<String>) -> Self {
        Self {
            service,
            caller: caller.into(),
        }
    }
}

impl<S: crate::node::ServiceHandle<Pip>> PipApi for LocalPip<S> {
    fn onboard_user(&self, req: &Onboarding) -> Result<UserId, PipError> {
        self.service.call(|p| p.onboard_user(&self.caller, req))
    }
    fn open_cbdc_account(&self, user: &UserId) -> Result<AccountId, PipError> {
        self.service.call(|p| p.open_cbdc_account(&self.caller, user))
    }
    fn submit_payment(&self, user: &UserId, req: &PaymentRequest) -> Result<PaymentStatus, PipError> {
        self.service.call(|p| p.submit_payment(&self.caller, user, req))
    }
    fn get_portfolio(&self, user: &UserId) -> Result<Portfolio, PipError> {
        self.service.call(|p| p.get_portfolio(&self.caller, user))
    }
}

#[cfg(test)]
mod tests;
