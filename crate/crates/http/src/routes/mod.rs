//! One router per service. Request and response bodies that are not core
//! types live here so clients and servers share them.

use cbdc_core::bank::FpsOutcome;
use cbdc_core::ecosystem::identity::KycVerdict;
use cbdc_core::ledger::FundingDirection;
use cbdc_core::{AccountId, BankId, InstructionId, Money, MsgId, ProgramId, PseudonymId, Tick, UserId};
use serde::{Deserialize, Serialize};

mod bank;
mod core;
mod eco;
mod pip;

pub use self::bank::router as bank_router;
pub use self::core::router as core_router;
pub use self::eco::router as eco_router;
pub use self::pip::router as pip_router;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenCbdcAccount {
    pub pseudonym: PseudonymId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountCreated {
    pub account_id: AccountId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Funding {
    pub instruction_id: InstructionId,
    pub bank_id: BankId,
    pub account_id: AccountId,
    pub amount: Money,
    pub direction: FundingDirection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReserveInjection {
    pub bank_id: BankId,
    pub amount: Money,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageQuery {
    pub page: Option<usize>,
    pub size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldRequest {
    pub instruction_id: InstructionId,
    pub account: AccountId,
    pub amount: Money,
}

/// Same shape as a hold request; credits are keyed the same way.
pub type CreditRequest = HoldRequest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivered {
    pub outcome: FpsOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FpsAck {
    pub msg_id: MsgId,
    pub outcome: FpsOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenDeposit {
    pub owner: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CashInjection {
    pub account: AccountId,
    pub amount: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consent {
    pub grantee: String,
    pub customer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramCreated {
    pub program_id: ProgramId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluate {
    pub tick: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub verdict: KycVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserCreated {
    pub user_id: UserId,
}

/// Body of successful calls that return nothing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Done {}
