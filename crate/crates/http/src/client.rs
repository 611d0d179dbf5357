//! Blocking clients. Each implements the same trait as the matching
//! in-process client, so services can be wired over HTTP or in memory.

use std::time::Duration;

use cbdc_core::bank::{
    BankApi, BankError, BankTotals, CreditReceipt, DepositAccount, FpsMessage, FpsOutcome, HoldReceipt,
    PaymentInitiation, PaymentReceipt,
};
use cbdc_core::ecosystem::identity::{KycRequest, KycVerdict};
use cbdc_core::ecosystem::programs::ProgramSpec;
use cbdc_core::ecosystem::standards::WireInstruction;
use cbdc_core::ecosystem::{ConservationReport, EcoError, EcosystemApi, LinkRequest, PaymentStatus, ProgramFiring};
use cbdc_core::ledger::{
    CoreError, CoreLedgerApi, CoreTotals, CoreTransaction, FundingDirection, FundingRequest, Receipt, TransferRequest,
};
use cbdc_core::money::Amount;
use cbdc_core::pip::{Onboarding, PaymentRequest, PipApi, PipError, Portfolio};
use cbdc_core::{
    AccountId, BankId, ErrorBody, HoldId, InstructionId, Money, MsgId, Page, ProgramId, PseudonymId, Tick,
    TransactionId, UserId, WireError,
};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::routes::{
    AccountCreated, CashInjection, Consent, Delivered, Done, Evaluate, FpsAck, Funding, HoldRequest, OpenCbdcAccount,
    OpenDeposit, ProgramCreated, ReserveInjection, UserCreated, Verdict,
};
use crate::API_KEY_HEADER;

/// Escapes one path segment.
fn seg(s: &str) -> String {
    utf8_percent_encode(s, NON_ALPHANUMERIC).to_string()
}

/// Base URL, API key and a pooled agent.
#[derive(Debug, Clone)]
pub struct Transport {
    base: String,
    key: String,
    agent: ureq::Agent,
}

impl Transport {
    pub fn new(base: impl Into<String>, key: impl Into<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build();
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            key: key.into(),
            agent: ureq::Agent::new_with_config(config),
        }
    }

    fn finish<R: DeserializeOwned, E: WireError>(
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<R, E> {
        let resp = result.map_err(|e| E::unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let mut body = resp.into_body();
        if status < 300 {
            return body
                .read_json::<R>()
                .map_err(|e| E::from_body(ErrorBody::new("BAD_REQUEST", format!("undecodable response: {e}"))));
        }
        match body.read_json::<ErrorBody>() {
            Ok(b) => Err(E::from_body(b)),
            Err(_) if status >= 500 => Err(E::unavailable(format!("HTTP {status}"))),
            Err(_) => Err(E::from_body(ErrorBody::new("BAD_REQUEST", format!("HTTP {status}")))),
        }
    }

    pub fn get<R: DeserializeOwned, E: WireError>(&self, path: &str) -> Result<R, E> {
        let url = format!("{}{path}", self.base);
        Self::finish(self.agent.get(&url).header(API_KEY_HEADER, &self.key).call())
    }

    pub fn delete<R: DeserializeOwned, E: WireError>(&self, path: &str) -> Result<R, E> {
        let url = format!("{}{path}", self.base);
        Self::finish(self.agent.delete(&url).header(API_KEY_HEADER, &self.key).call())
    }

    pub fn post<B: Serialize, R: DeserializeOwned, E: WireError>(&self, path: &str, body: &B) -> Result<R, E> {
        let url = format!("{}{path}", self.base);
        Self::finish(self.agent.post(&url).header(API_KEY_HEADER, &self.key).send_json(body))
    }
}

/// Core ledger over HTTP.
#[derive(Debug, Clone)]
pub struct HttpCore(pub Transport);

impl HttpCore {
    pub fn new(base: impl Into<String>, key: impl Into<String>) -> Self {
        Self(Transport::new(base, key))
    }

    /// Harness operation: adds central bank reserves for a bank.
    pub fn inject_reserves(&self, bank_id: &BankId, amount: Money) -> Result<(), CoreError> {
        let body = ReserveInjection {
            bank_id: bank_id.clone(),
            amount,
        };
        self.0.post::<_, Done, _>("/cbdc/reserves", &body).map(|_| ())
    }

    fn funding(&self, req: &FundingRequest, direction: FundingDirection) -> Result<Receipt, CoreError> {
        let body = Funding {
            instruction_id: req.instruction_id.clone(),
            bank_id: req.bank_id.clone(),
            account_id: req.account_id.clone(),
            amount: req.amount,
            direction,
        };
        self.0.post("/cbdc/funding", &body)
    }
}

impl CoreLedgerApi for HttpCore {
    fn open_account(&self, pseudonym: &PseudonymId) -> Result<AccountId, CoreError> {
        let body = OpenCbdcAccount {
            pseudonym: pseudonym.clone(),
        };
        self.0
            .post::<_, AccountCreated, _>("/cbdc/accounts", &body)
            .map(|r| r.account_id)
    }
    fn close_account(&self, account: &AccountId) -> Result<(), CoreError> {
        self.0
            .delete::<Done, _>(&format!("/cbdc/accounts/{}", seg(account.as_str())))
            .map(|_| ())
    }
    fn transfer(&self, req: &TransferRequest) -> Result<Receipt, CoreError> {
        self.0.post("/cbdc/payments", req)
    }
    fn prepare_transfer(&self, req: &TransferRequest) -> Result<Receipt, CoreError> {
        self.0.post("/cbdc/payments/prepare", req)
    }
    fn commit(&self, tx: &TransactionId) -> Result<(), CoreError> {
        self.0
            .post::<_, Done, _>(&format!("/cbdc/payments/{}/commit", seg(tx.as_str())), &Done {})
            .map(|_| ())
    }
    fn abort(&self, tx: &TransactionId) -> Result<(), CoreError> {
        self.0
            .post::<_, Done, _>(&format!("/cbdc/payments/{}/abort", seg(tx.as_str())), &Done {})
            .map(|_| ())
    }
    fn fund(&self, req: &FundingRequest) -> Result<Receipt, CoreError> {
        self.funding(req, FundingDirection::Fund)
    }
    fn defund(&self, req: &FundingRequest) -> Result<Receipt, CoreError> {
        self.funding(req, FundingDirection::Defund)
    }
    fn get_balance(&self, account: &AccountId) -> Result<Money, CoreError> {
        self.0
            .get::<Amount, _>(&format!("/cbdc/accounts/{}/balance", seg(account.as_str())))
            .map(|a| a.amount)
    }
    fn list_transactions(&self, account: &AccountId, page: Page) -> Result<Vec<CoreTransaction>, CoreError> {
        self.0.get(&format!(
            "/cbdc/accounts/{}/transactions?page={}&size={}",
            seg(account.as_str()),
            page.page,
            page.size
        ))
    }
    fn totals(&self) -> Result<CoreTotals, CoreError> {
        self.0.get("/cbdc/totals")
    }
}

/// One bank over HTTP.
#[derive(Debug, Clone)]
pub struct HttpBank {
    bank_id: BankId,
    t: Transport,
}

impl HttpBank {
    pub fn new(bank_id: BankId, base: impl Into<String>, key: impl Into<String>) -> Self {
        Self {
            bank_id,
            t: Transport::new(base, key),
        }
    }

    pub fn open_account(&self, owner: &str) -> Result<AccountId, BankError> {
        let body = OpenDeposit {
            owner: owner.to_string(),
        };
        self.t
            .post::<_, AccountCreated, _>("/admin/accounts", &body)
            .map(|r| r.account_id)
    }

    pub fn inject_cash(&self, account: &AccountId, amount: Money) -> Result<(), BankError> {
        let body = CashInjection {
            account: account.clone(),
            amount,
        };
        self.t.post::<_, Done, _>("/admin/cash", &body).map(|_| ())
    }

    pub fn grant_consent(&self, grantee: &str, customer: &str) -> Result<(), BankError> {
        let body = Consent {
            grantee: grantee.to_string(),
            customer: customer.to_string(),
        };
        self.t.post::<_, Done, _>("/admin/consents", &body).map(|_| ())
    }
}

impl BankApi for HttpBank {
    fn bank_id(&self) -> &BankId {
        &self.bank_id
    }
    fn ob_get_accounts(&self, customer: &str) -> Result<Vec<DepositAccount>, BankError> {
        self.t.get(&format!("/ob/customers/{}/accounts", seg(customer)))
    }
    fn ob_get_balance(&self, account: &AccountId) -> Result<Money, BankError> {
        self.t
            .get::<Amount, _>(&format!("/ob/accounts/{}/balances", seg(account.as_str())))
            .map(|a| a.amount)
    }
    fn ob_initiate_payment(&self, req: &PaymentInitiation) -> Result<PaymentReceipt, BankError> {
        self.t.post("/ob/payment-initiations", req)
    }
    fn prepare_debit(&self, instruction_id: &InstructionId, account: &AccountId, amount: Money) -> Result<HoldReceipt, BankError> {
        let body = HoldRequest {
            instruction_id: instruction_id.clone(),
            account: account.clone(),
            amount,
        };
        self.t.post("/internal/holds", &body)
    }
    fn commit_debit(&self, hold: &HoldId) -> Result<(), BankError> {
        self.t
            .post::<_, Done, _>(&format!("/internal/holds/{}/commit", seg(hold.as_str())), &Done {})
            .map(|_| ())
    }
    fn abort_debit(&self, hold: &HoldId) -> Result<(), BankError> {
        self.t
            .post::<_, Done, _>(&format!("/internal/holds/{}/abort", seg(hold.as_str())), &Done {})
            .map(|_| ())
    }
    fn credit(&self, instruction_id: &InstructionId, account: &AccountId, amount: Money) -> Result<CreditReceipt, BankError> {
        let body = HoldRequest {
            instruction_id: instruction_id.clone(),
            account: account.clone(),
            amount,
        };
        self.t.post("/internal/credits", &body)
    }
    fn fps_deliver(&self, msg: &FpsMessage) -> Result<FpsOutcome, BankError> {
        self.t
            .post::<_, Delivered, _>("/internal/fps/deliver", msg)
            .map(|d| d.outcome)
    }
    fn fps_outbox(&self) -> Result<Vec<FpsMessage>, BankError> {
        self.t.get("/internal/fps/outbox")
    }
    fn fps_ack(&self, msg: &MsgId, outcome: FpsOutcome) -> Result<(), BankError> {
        let body = FpsAck {
            msg_id: msg.clone(),
            outcome,
        };
        self.t.post::<_, Done, _>("/internal/fps/ack", &body).map(|_| ())
    }
    fn totals(&self) -> Result<BankTotals, BankError> {
        self.t.get("/internal/totals")
    }
}

/// Ecosystem over HTTP.
#[derive(Debug, Clone)]
pub struct HttpEco(pub Transport);

impl HttpEco {
    pub fn new(base: impl Into<String>, key: impl Into<String>) -> Self {
        Self(Transport::new(base, key))
    }
}

impl EcosystemApi for HttpEco {
    fn submit_payment(&self, wire: &WireInstruction) -> Result<PaymentStatus, EcoError> {
        self.0.post("/eco/payments", wire)
    }
    fn payment_status(&self, id: &InstructionId) -> Result<PaymentStatus, EcoError> {
        self.0.get(&format!("/eco/payments/{}", seg(id.as_str())))
    }
    fn register_program(&self, spec: &ProgramSpec) -> Result<ProgramId, EcoError> {
        self.0
            .post::<_, ProgramCreated, _>("/eco/programs", spec)
            .map(|r| r.program_id)
    }
    fn deregister_program(&self, id: &ProgramId) -> Result<(), EcoError> {
        self.0
            .delete::<Done, _>(&format!("/eco/programs/{}", seg(id.as_str())))
            .map(|_| ())
    }
    fn evaluate_programs(&self, tick: Tick) -> Result<Vec<ProgramFiring>, EcoError> {
        self.0.post("/eco/programs/evaluate", &Evaluate { tick })
    }
    fn identity_verify(&self, req: &KycRequest) -> Result<KycVerdict, EcoError> {
        self.0
            .post::<_, Verdict, _>("/eco/identity/verify", req)
            .map(|v| v.verdict)
    }
    fn link_accounts(&self, req: &LinkRequest) -> Result<(), EcoError> {
        self.0.post::<_, Done, _>("/eco/directory/link", req).map(|_| ())
    }
    fn unlink_accounts(&self, req: &LinkRequest) -> Result<(), EcoError> {
        self.0.post::<_, Done, _>("/eco/directory/unlink", req).map(|_| ())
    }
    fn conservation_report(&self) -> Result<ConservationReport, EcoError> {
        self.0.get("/eco/conservation")
    }
}

/// PIP over HTTP.
#[derive(Debug, Clone)]
pub struct HttpPip(pub Transport);

impl HttpPip {
    pub fn new(base: impl Into<String>, key: impl Into<String>) -> Self {
        Self(Transport::new(base, key))
    }
}

impl PipApi for HttpPip {
    fn onboard_user(&self, req: &Onboarding) -> Result<UserId, PipError> {
        self.0.post::<_, UserCreated, _>("/pip/users", req).map(|r| r.user_id)
    }
    fn open_cbdc_account(&self, user: &UserId) -> Result<AccountId, PipError> {
        self.0
            .post::<_, AccountCreated, _>(&format!("/pip/users/{}/cbdc-account", seg(user.as_str())), &Done {})
            .map(|r| r.account_id)
    }
    fn submit_payment(&self, user: &UserId, req: &PaymentRequest) -> Result<PaymentStatus, PipError> {
        self.0.post(&format!("/pip/users/{}/payments", seg(user.as_str())), req)
    }
    fn get_portfolio(&self, user: &UserId) -> Result<Portfolio, PipError> {
        self.0.get(&format!("/pip/users/{}/portfolio", seg(user.as_str())))
    }
}
