//! The ecosystem layer: common standards and policy, shared services, rail
//! routing with atomic cross-rail execution, and programmable payments.
//!
//! Every payment, manual or program-generated, runs the same pipeline:
//! validate → policy → AML → resolve/program gate → route → execute. Each
//! stage is journaled before the next begins, so an instruction can be
//! resumed from its last recorded stage after a crash.

pub mod aml;
pub mod config;
pub mod identity;
pub mod policy;
pub mod programs;
pub mod routing;
mod saga;
pub mod standards;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::{ErrorBody, Role, WireError};
use crate::bank::BankAccountRef;
use crate::clock::LogicalClock;
use crate::fault::{FaultInjector, InjectionPoint};
use crate::fps::BankSet;
use crate::ids::{AccountId, BankId, InstructionId, ProgramId, Tick, UserId};
use crate::journal::{JournalError, Storage};
use crate::ledger::CoreLedgerApi;
use crate::money::{checked_sum, Money, MoneyError};
use crate::node::{Crashable, ServiceHandle};
use crate::service::{EventSourced, Journaled};

use aml::{AmlConfig, AmlVerdict};
use identity::{IdentityFixture, KycRequest, KycVerdict};
use policy::{PolicyRule, PolicyVerdict, SpendRecord};
use programs::{Action, Program, ProgramSpec, Snapshot};
use routing::{Coordinates, TransferPlan};
use standards::{PayeeTarget, PaymentInstruction, Rail, Violation, WireInstruction};

pub use saga::{Decision, PlanState, StepOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EcoError {
    #[error("caller is not authorized for this operation")]
    Unauthorized,
    #[error("instruction {0} was already used for a different payment")]
    IdempotencyConflict(String),
    #[error("unknown instruction {0}")]
    UnknownInstruction(String),
    #[error("unknown program {0}")]
    UnknownProgram(String),
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("program references accounts its owner does not control: {0}")]
    UnauthorizedAccounts(String),
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("{0}")]
    StorageFailure(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("{0}")]
    BadRequest(String),
}

impl From<JournalError> for EcoError {
    fn from(e: JournalError) -> Self {
        EcoError::StorageFailure(e.to_string())
    }
}

impl From<MoneyError> for EcoError {
    fn from(e: MoneyError) -> Self {
        EcoError::BadRequest(e.to_string())
    }
}

impl WireError for EcoError {
    fn code(&self) -> &'static str {
        match self {
            EcoError::Unauthorized => "UNAUTHORIZED",
            EcoError::IdempotencyConflict(_) => "IDEMPOTENCY_CONFLICT",
            EcoError::UnknownInstruction(_) => "UNKNOWN_INSTRUCTION",
            EcoError::UnknownProgram(_) => "UNKNOWN_PROGRAM",
            EcoError::UnknownUser(_) => "UNKNOWN_USER",
            EcoError::UnauthorizedAccounts(_) => "UNAUTHORIZED_ACCOUNTS",
            EcoError::InvalidProgram(_) => "INVALID_PROGRAM",
            EcoError::StorageFailure(_) => "STORAGE_FAILURE",
            EcoError::Unavailable(_) => "UNAVAILABLE",
            EcoError::BadRequest(_) => "BAD_REQUEST",
        }
    }

    fn to_body(&self) -> ErrorBody {
        let mut body = ErrorBody::new(self.code(), self.to_string());
        body.subject = match self {
            EcoError::IdempotencyConflict(s)
            | EcoError::UnknownInstruction(s)
            | EcoError::UnknownProgram(s)
            | EcoError::UnknownUser(s)
            | EcoError::UnauthorizedAccounts(s)
            | EcoError::InvalidProgram(s) => Some(s.clone()),
            _ => None,
        };
        body
    }

    fn from_body(body: ErrorBody) -> Self {
        let s = body.subject();
        match body.code.as_str() {
            "UNAUTHORIZED" => EcoError::Unauthorized,
            "IDEMPOTENCY_CONFLICT" => EcoError::IdempotencyConflict(s),
            "UNKNOWN_INSTRUCTION" => EcoError::UnknownInstruction(s),
            "UNKNOWN_PROGRAM" => EcoError::UnknownProgram(s),
            "UNKNOWN_USER" => EcoError::UnknownUser(s),
            "UNAUTHORIZED_ACCOUNTS" => EcoError::UnauthorizedAccounts(s),
            "INVALID_PROGRAM" => EcoError::InvalidProgram(s),
            "STORAGE_FAILURE" => EcoError::StorageFailure(body.message),
            "UNAVAILABLE" => EcoError::Unavailable(body.message),
            _ => EcoError::BadRequest(body.message),
        }
    }

    fn unavailable(message: impl Into<String>) -> Self {
        EcoError::Unavailable(message.into())
    }

    fn http_status(&self) -> u16 {
        match self {
            EcoError::UnauthorizedAccounts(_) => 403,
            EcoError::InvalidProgram(_) => 400,
            other => match other.code() {
                "UNAUTHORIZED" => 401,
                c if c.starts_with("UNKNOWN_") => 404,
                "UNAVAILABLE" | "STORAGE_FAILURE" => 503,
                "BAD_REQUEST" => 400,
                _ => 409,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Source {
    Manual { caller: String },
    Program { program_id: ProgramId, tick: Tick },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Policy,
    Aml,
    Resolve,
    Program,
    Route,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionState {
    /// Admission in progress.
    Received,
    Rejected,
    Executing,
    Committed,
    Compensated,
    /// Needs manual intervention.
    Failed,
}

impl InstructionState {
    pub fn is_terminal(self) -> bool {
        !matches!(self, InstructionState::Received | InstructionState::Executing)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub stage: Stage,
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub wire: WireInstruction,
    pub source: Source,
    pub received_at: Tick,
    pub state: InstructionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<PaymentInstruction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aml: Option<AmlVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<Rejection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub plan: TransferPlan,
    pub state: PlanState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    /// Forward step index → outcome.
    #[serde(default)]
    pub steps: BTreeMap<usize, StepOutcome>,
    /// Step index whose compensation ran → outcome.
    #[serde(default)]
    pub compensations: BTreeMap<usize, StepOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Status relayed to submitters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentStatus {
    pub instruction_id: InstructionId,
    pub state: InstructionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<Rejection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default)]
    pub replayed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedCbdc {
    pub account_id: AccountId,
    /// PIP that opened the account.
    pub pip: String,
}

/// Accounts a directory user controls, as registered by PIPs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedAccounts {
    pub pips: BTreeSet<String>,
    pub cbdc: Vec<LinkedCbdc>,
    pub bank: Vec<BankAccountRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRequest {
    pub user_id: UserId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cbdc: Option<AccountId>,
    #[serde(default)]
    pub bank: Vec<BankAccountRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramRecord {
    pub program: Program,
    pub active: bool,
    /// Balances seen at the last evaluation (or registration).
    pub observed: Snapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_fired: Option<(Tick, InstructionId)>,
}

/// One program's outcome for one tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramFiring {
    pub program_id: ProgramId,
    pub tick: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<WireInstruction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<PaymentStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub reserves: Money,
    pub cbdc_outstanding: Money,
    pub reserves_injected: Money,
    pub cbdc_balances: Money,
    pub cbdc_earmarked: Money,
    pub deposits: Money,
    pub deposits_earmarked: Money,
    pub fps_in_flight: Money,
    pub cash_injected: Money,
    /// Σ reserves + CBDC outstanding = reserves injected.
    pub balance_sheet_holds: bool,
    /// Σ deposits (incl. holds) + FPS in flight + Σ CBDC (incl. earmarks) =
    /// cash injected.
    pub money_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EcoEvent {
    InstructionReceived {
        instruction_id: InstructionId,
        wire: WireInstruction,
        source: Source,
    },
    InstructionValidated {
        instruction: PaymentInstruction,
    },
    InstructionRejected {
        instruction_id: InstructionId,
        rejection: Rejection,
    },
    PolicyChecked {
        instruction_id: InstructionId,
        verdict: PolicyVerdict,
    },
    AmlScreened {
        instruction_id: InstructionId,
        verdict: AmlVerdict,
    },
    PlanCreated {
        plan: TransferPlan,
    },
    StepStarted {
        plan_id: String,
        step: usize,
        compensation: bool,
    },
    StepCompleted {
        plan_id: String,
        step: usize,
        compensation: bool,
        outcome: StepOutcome,
    },
    DecisionRecorded {
        plan_id: String,
        decision: Decision,
    },
    PlanFinished {
        plan_id: String,
        state: PlanState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        failure: Option<String>,
    },
    ProgramRegistered {
        program: Program,
        observed: Snapshot,
        caller: String,
    },
    ProgramDeregistered {
        program_id: ProgramId,
        caller: String,
    },
    ProgramObserved {
        program_id: ProgramId,
        observed: Snapshot,
    },
    ProgramFired {
        program_id: ProgramId,
        tick: Tick,
        instruction_id: InstructionId,
    },
    AccountsLinked {
        link: LinkRequest,
        caller: String,
    },
    AccountsUnlinked {
        link: LinkRequest,
        caller: String,
    },
    KycVerified {
        user_id: UserId,
        verdict: KycVerdict,
        caller: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcoState {
    pub instructions: BTreeMap<InstructionId, InstructionRecord>,
    pub plans: BTreeMap<String, PlanRecord>,
    pub directory: BTreeMap<UserId, LinkedAccounts>,
    pub programs: BTreeMap<ProgramId, ProgramRecord>,
    pub spend: Vec<SpendRecord>,
    pub kyc: BTreeMap<UserId, KycVerdict>,
    pub next_plan: u64,
    pub next_program: u64,
}

impl EcoState {
    fn record_mut(&mut self, id: &InstructionId) -> Result<&mut InstructionRecord, EcoError> {
        self.instructions
            .get_mut(id)
            .ok_or_else(|| EcoError::UnknownInstruction(id.to_string()))
    }

    fn plan_mut(&mut self, id: &str) -> Result<&mut PlanRecord, EcoError> {
        self.plans
            .get_mut(id)
            .ok_or_else(|| EcoError::BadRequest(format!("unknown plan {id}")))
    }

    fn reject(&mut self, id: &InstructionId, rejection: Rejection) -> Result<(), EcoError> {
        let r = self.record_mut(id)?;
        r.state = InstructionState::Rejected;
        r.rejection = Some(rejection);
        Ok(())
    }

    pub fn status(&self, id: &InstructionId) -> Option<PaymentStatus> {
        let r = self.instructions.get(id)?;
        let plan = r.plan_id.as_ref().and_then(|p| self.plans.get(p));
        Some(PaymentStatus {
            instruction_id: id.clone(),
            state: r.state,
            rejection: r.rejection.clone(),
            plan_id: r.plan_id.clone(),
            route: plan.map(|p| p.plan.route()),
            failure: plan.and_then(|p| p.failure.clone()),
            replayed: false,
        })
    }

    pub fn pending(&self) -> Vec<InstructionId> {
        self.instructions
            .iter()
            .filter(|(_, r)| !r.state.is_terminal())
            .map(|(id, _)| id.clone())
            .collect()
    }
}

impl EventSourced for EcoState {
    type Event = EcoEvent;
    type Error = EcoError;

    fn apply(&mut self, event: &EcoEvent, ts: Tick) -> Result<(), EcoError> {
        match event {
            EcoEvent::InstructionReceived {
                instruction_id,
                wire,
                source,
            } => {
                self.instructions.insert(
                    instruction_id.clone(),
                    InstructionRecord {
                        wire: wire.clone(),
                        source: source.clone(),
                        received_at: ts,
                        state: InstructionState::Received,
                        normalized: None,
                        policy: None,
                        aml: None,
                        rejection: None,
                        plan_id: None,
                    },
                );
            }
            EcoEvent::InstructionValidated { instruction } => {
                self.record_mut(&instruction.instruction_id)?.normalized = Some(instruction.clone());
            }
            EcoEvent::InstructionRejected {
                instruction_id,
                rejection,
            } => self.reject(instruction_id, rejection.clone())?,
            EcoEvent::PolicyChecked {
                instruction_id,
                verdict,
            } => {
                self.record_mut(instruction_id)?.policy = Some(verdict.clone());
                if let PolicyVerdict::Deny { rule_id } = verdict {
                    let rejection = Rejection {
                        stage: Stage::Policy,
                        code: "POLICY_DENIED".into(),
                        detail: rule_id.clone(),
                    };
                    self.reject(instruction_id, rejection)?;
                }
            }
            EcoEvent::AmlScreened {
                instruction_id,
                verdict,
            } => {
                self.record_mut(instruction_id)?.aml = Some(*verdict);
                if let AmlVerdict::Flagged(reason) = verdict {
                    let rejection = Rejection {
                        stage: Stage::Aml,
                        code: "AML_FLAGGED".into(),
                        detail: serde_json::to_value(reason)
                            .ok()
                            .and_then(|v| v.as_str().map(str::to_string))
                            .unwrap_or_default(),
                    };
                    self.reject(instruction_id, rejection)?;
                }
            }
            EcoEvent::PlanCreated { plan } => {
                let r = self.record_mut(&plan.instruction_id)?;
                r.plan_id = Some(plan.plan_id.clone());
                r.state = InstructionState::Executing;
                self.plans.insert(
                    plan.plan_id.clone(),
                    PlanRecord {
                        plan: plan.clone(),
                        state: PlanState::Planning,
                        decision: None,
                        steps: BTreeMap::new(),
                        compensations: BTreeMap::new(),
                        failure: None,
                    },
                );
                self.next_plan += 1;
            }
            EcoEvent::StepStarted { plan_id, .. } => {
                self.plan_mut(plan_id)?;
            }
            EcoEvent::StepCompleted {
                plan_id,
                step,
                compensation,
                outcome,
            } => {
                let p = self.plan_mut(plan_id)?;
                let map = if *compensation { &mut p.compensations } else { &mut p.steps };
                map.insert(*step, outcome.clone());
            }
            EcoEvent::DecisionRecorded { plan_id, decision } => {
                let p = self.plan_mut(plan_id)?;
                p.decision = Some(decision.clone());
                if *decision == Decision::Commit {
                    p.state = PlanState::Prepared;
                }
            }
            EcoEvent::PlanFinished {
                plan_id,
                state,
                failure,
            } => {
                let p = self.plan_mut(plan_id)?;
                p.state = *state;
                p.failure = failure.clone();
                let instruction_id = p.plan.instruction_id.clone();
                let amount = p.plan.amount;
                let r = self.record_mut(&instruction_id)?;
                r.state = match state {
                    PlanState::Committed => InstructionState::Committed,
                    PlanState::Compensated => InstructionState::Compensated,
                    _ => InstructionState::Failed,
                };
                if *state == PlanState::Committed {
                    if let Some(n) = &r.normalized {
                        let user = n.payer.user.clone();
                        self.spend.push(SpendRecord { user, at: ts, amount });
                    }
                }
            }
            EcoEvent::ProgramRegistered { program, observed, .. } => {
                self.programs.insert(
                    program.program_id.clone(),
                    ProgramRecord {
                        program: program.clone(),
                        active: true,
                        observed: *observed,
                        last_fired: None,
                    },
                );
                self.next_program += 1;
            }
            EcoEvent::ProgramDeregistered { program_id, .. } => {
                if let Some(p) = self.programs.get_mut(program_id) {
                    p.active = false;
                }
            }
            EcoEvent::ProgramObserved { program_id, observed } => {
                if let Some(p) = self.programs.get_mut(program_id) {
                    p.observed = *observed;
                }
            }
            EcoEvent::ProgramFired {
                program_id,
                tick,
                instruction_id,
            } => {
                if let Some(p) = self.programs.get_mut(program_id) {
                    p.last_fired = Some((*tick, instruction_id.clone()));
                }
            }
            EcoEvent::AccountsLinked { link, caller } => {
                let entry = self.directory.entry(link.user_id.clone()).or_default();
                entry.pips.insert(caller.clone());
                if let Some(a) = &link.cbdc {
                    if !entry.cbdc.iter().any(|c| &c.account_id == a) {
                        entry.cbdc.push(LinkedCbdc {
                            account_id: a.clone(),
                            pip: caller.clone(),
                        });
                    }
                }
                for b in &link.bank {
                    if !entry.bank.contains(b) {
                        entry.bank.push(b.clone());
                    }
                }
            }
            EcoEvent::AccountsUnlinked { link, .. } => {
                if let Some(entry) = self.directory.get_mut(&link.user_id) {
                    entry.cbdc.retain(|c| Some(&c.account_id) != link.cbdc.as_ref());
                    entry.bank.retain(|b| !link.bank.contains(b));
                }
            }
            EcoEvent::KycVerified { user_id, verdict, .. } => {
                self.kyc.insert(user_id.clone(), *verdict);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcoConfig {
    pub name: String,
    #[serde(default)]
    pub policy: Vec<PolicyRule>,
    #[serde(default)]
    pub aml: AmlConfig,
    #[serde(default)]
    pub identity: IdentityFixture,
    #[serde(default)]
    pub callers: BTreeMap<String, Role>,
    /// Attempts per participant call before the plan is parked.
    #[serde(default = "default_attempts")]
    pub step_attempts: usize,
}

fn default_attempts() -> usize {
    3
}

impl EcoConfig {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            policy: Vec::new(),
            aml: AmlConfig::default(),
            identity: IdentityFixture::default(),
            callers: BTreeMap::new(),
            step_attempts: default_attempts(),
        }
    }

    pub fn with_caller(mut self, name: impl Into<String>, role: Role) -> Self {
        self.callers.insert(name.into(), role);
        self
    }
}

/// The ecosystem API as seen by PIPs and the harness.
pub trait EcosystemApi: Send + Sync {
    fn submit_payment(&self, wire: &WireInstruction) -> Result<PaymentStatus, EcoError>;
    fn payment_status(&self, id: &InstructionId) -> Result<PaymentStatus, EcoError>;
    fn register_program(&self, spec: &ProgramSpec) -> Result<ProgramId, EcoError>;
    fn deregister_program(&self, id: &ProgramId) -> Result<(), EcoError>;
    fn evaluate_programs(&self, tick: Tick) -> Result<Vec<ProgramFiring>, EcoError>;
    fn identity_verify(&self, req: &KycRequest) -> Result<KycVerdict, EcoError>;
    fn link_accounts(&self, req: &LinkRequest) -> Result<(), EcoError>;
    fn unlink_accounts(&self, req: &LinkRequest) -> Result<(), EcoError>;
    fn conservation_report(&self) -> Result<ConservationReport, EcoError>;
}

pub struct Ecosystem {
    config: EcoConfig,
    svc: Journaled<EcoState>,
    core: Arc<dyn CoreLedgerApi>,
    banks: BankSet,
    /// Serializes admission and execution: one plan at a time.
    exec: Mutex<()>,
}

impl std::fmt::Debug for Ecosystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ecosystem").field("name", &self.config.name).finish()
    }
}

impl Ecosystem {
    /// Rebuilds state from the journal. Call [`Ecosystem::resume_pending`]
    /// afterwards to finish work interrupted by a crash.
    pub fn recover(
        config: EcoConfig,
        storage: Arc<dyn Storage>,
        clock: LogicalClock,
        faults: FaultInjector,
        core: Arc<dyn CoreLedgerApi>,
        banks: BankSet,
    ) -> Result<Self, EcoError> {
        let svc = Journaled::recover(config.name.clone(), storage, clock, faults)?;
        Ok(Self {
            config,
            svc,
            core,
            banks,
            exec: Mutex::new(()),
        })
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn config(&self) -> &EcoConfig {
        &self.config
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

    pub fn export(&self) -> EcoState {
        self.svc.export()
    }

    fn role(&self, caller: &str) -> Option<Role> {
        self.config.callers.get(caller).copied()
    }

    fn authorize(&self, caller: &str, allowed: &[Role]) -> Result<Role, EcoError> {
        match self.role(caller) {
            Some(r) if allowed.contains(&r) => Ok(r),
            _ => Err(EcoError::Unauthorized),
        }
    }

    fn crash_point(&self, point: InjectionPoint) -> Result<(), EcoError> {
        self.svc.crash_point(&point)
    }

    pub fn payment_status(&self, caller: &str, id: &InstructionId) -> Result<PaymentStatus, EcoError> {
        self.authorize(caller, &[Role::Pip, Role::Operator])?;
        self.svc
            .read(|s| s.status(id).ok_or_else(|| EcoError::UnknownInstruction(id.to_string())))
    }

    pub fn submit_payment(&self, caller: &str, wire: &WireInstruction) -> Result<PaymentStatus, EcoError> {
        self.authorize(caller, &[Role::Pip, Role::Operator])?;
        let source = Source::Manual {
            caller: caller.to_string(),
        };
        let _guard = self.exec.lock().unwrap();
        self.admit(wire, source)
    }

    fn admit(&self, wire: &WireInstruction, source: Source) -> Result<PaymentStatus, EcoError> {
        let id = match wire.instruction_id.as_deref().map(str::trim) {
            Some(s) if !s.is_empty() => InstructionId::from(s),
            _ => {
                return Err(EcoError::BadRequest(
                    "MISSING_FIELD: instruction_id is required for idempotent submission".into(),
                ))
            }
        };
        let replayed = self.svc.write(|s| match s.instructions.get(&id) {
            Some(r) if r.wire == *wire => Ok((None, true)),
            Some(_) => Err(EcoError::IdempotencyConflict(id.to_string())),
            None => Ok((
                Some(EcoEvent::InstructionReceived {
                    instruction_id: id.clone(),
                    wire: wire.clone(),
                    source: source.clone(),
                }),
                false,
            )),
        })?;
        self.advance(&id)?;
        let mut status = self
            .svc
            .read(|s| s.status(&id).ok_or_else(|| EcoError::UnknownInstruction(id.to_string())))?;
        status.replayed = replayed;
        Ok(status)
    }

    /// Moves an instruction through the remaining pipeline stages and drives
    /// its plan to a terminal state.
    fn advance(&self, id: &InstructionId) -> Result<(), EcoError> {
        loop {
            let record = self.svc.read(|s| {
                s.instructions
                    .get(id)
                    .cloned()
                    .ok_or_else(|| EcoError::UnknownInstruction(id.to_string()))
            })?;
            if record.state.is_terminal() {
                return Ok(());
            }
            if let Some(plan_id) = &record.plan_id {
                return self.drive(plan_id);
            }
            let Some(instr) = record.normalized.clone() else {
                let event = match standards::validate(&record.wire) {
                    Ok(instruction) => EcoEvent::InstructionValidated { instruction },
                    Err(violations) => EcoEvent::InstructionRejected {
                        instruction_id: id.clone(),
                        rejection: Rejection {
                            stage: Stage::Validate,
                            code: violations[0].code.clone(),
                            detail: describe(&violations),
                        },
                    },
                };
                self.svc.record(event)?;
                continue;
            };
            if record.policy.is_none() {
                let verdict = self.svc.read(|s| Ok(policy::enforce(&self.config.policy, &instr, self.svc.now(), &s.spend)))?;
                self.svc.record(EcoEvent::PolicyChecked {
                    instruction_id: id.clone(),
                    verdict,
                })?;
                continue;
            }
            if record.aml.is_none() {
                self.svc.record(EcoEvent::AmlScreened {
                    instruction_id: id.clone(),
                    verdict: aml::screen(&self.config.aml, &instr),
                })?;
                continue;
            }
            let event = match self.route(&instr, &record.source)? {
                Ok(plan) => EcoEvent::PlanCreated { plan },
                Err(rejection) => EcoEvent::InstructionRejected {
                    instruction_id: id.clone(),
                    rejection,
                },
            };
            let planned = matches!(event, EcoEvent::PlanCreated { .. });
            self.svc.record(event)?;
            if planned {
                self.crash_point(InjectionPoint::PlanJournaled)?;
            }
        }
    }

    /// Resolves both parties, applies reject programs and picks the source
    /// rail. The outer error is a transport failure; the inner one a
    /// business rejection.
    fn route(&self, instr: &PaymentInstruction, source: &Source) -> Result<Result<TransferPlan, Rejection>, EcoError> {
        let reject = |stage, code: &str, detail: String| {
            Ok(Err(Rejection {
                stage,
                code: code.to_string(),
                detail,
            }))
        };
        let (payer, payee, owners, plan_no) = self.svc.read(|s| {
            Ok((
                s.directory.get(&instr.payer.user).cloned(),
                resolve_payee(&s.directory, &instr.payee.rail, &instr.payee.target),
                s.programs
                    .values()
                    .filter(|p| p.active && p.program.spec.action == Action::Reject)
                    .map(|p| p.program.clone())
                    .collect::<Vec<_>>(),
                s.next_plan + 1,
            ))
        })?;
        let Some(payer) = payer else {
            return reject(Stage::Resolve, "UNKNOWN_PAYER", instr.payer.user.to_string());
        };
        let submitting_pip = match source {
            Source::Manual { caller } if self.role(caller) == Some(Role::Pip) => Some(caller.as_str()),
            _ => None,
        };
        if let Some(pip) = submitting_pip {
            if !payer.pips.contains(pip) {
                return reject(Stage::Resolve, "UNKNOWN_PAYER", instr.payer.user.to_string());
            }
        }
        let Some(payee) = payee else {
            return reject(Stage::Resolve, "UNKNOWN_PAYEE", describe_target(&instr.payee.target));
        };

        let now = self.svc.now();
        for program in owners.iter().filter(|p| now > p.registered_at) {
            if !owns(&program.spec.accounts, &payee) {
                continue;
            }
            let snapshot = self.snapshot(&program.spec.accounts)?;
            if programs::holds(program.spec.condition.as_ref(), &snapshot, Some(instr.amount)) {
                return reject(Stage::Program, "PROGRAM_REJECTED", program.program_id.to_string());
            }
        }

        let cbdc = payer
            .cbdc
            .iter()
            .find(|c| submitting_pip.is_none_or(|p| c.pip == p))
            .map(|c| c.account_id.clone());
        let options = routing::FundingOptions {
            cbdc: match cbdc {
                Some(a) => Some((a.clone(), self.cbdc_balance(&a)?)),
                None => None,
            },
            bank: match payer.bank.first() {
                Some(r) => Some((r.clone(), self.bank_balance(r)?)),
                None => None,
            },
        };
        match routing::select_source(instr.payer.preferred_rail, &options, &payee, instr.amount) {
            None => reject(Stage::Route, "NO_VIABLE_ROUTE", instr.amount.to_string()),
            Some(src) => Ok(Ok(routing::build_plan(
                format!("plan-{plan_no:08}"),
                instr.instruction_id.clone(),
                src,
                payee,
                instr.amount,
            ))),
        }
    }

    /// Absent accounts read as `None`; closed or unknown accounts likewise.
    fn cbdc_balance(&self, account: &AccountId) -> Result<Money, EcoError> {
        match crate::api::with_retries(self.config.step_attempts, || self.core.get_balance(account)) {
            Ok(m) => Ok(m),
            Err(e) if e.is_unavailable() => Err(EcoError::Unavailable(e.to_string())),
            Err(_) => Ok(Money::ZERO),
        }
    }

    fn bank_balance(&self, r: &BankAccountRef) -> Result<Money, EcoError> {
        let Some(bank) = self.banks.get(&r.bank_id) else {
            return Ok(Money::ZERO);
        };
        match crate::api::with_retries(self.config.step_attempts, || bank.ob_get_balance(&r.account_id)) {
            Ok(m) => Ok(m),
            Err(e) if e.is_unavailable() => Err(EcoError::Unavailable(e.to_string())),
            Err(_) => Ok(Money::ZERO),
        }
    }

    /// Balances read from the authoritative ledgers, never from local state.
    fn snapshot(&self, accounts: &programs::ProgramAccounts) -> Result<Snapshot, EcoError> {
        Ok(Snapshot {
            cbdc: match &accounts.cbdc {
                Some(a) => Some(self.cbdc_balance(a)?),
                None => None,
            },
            bank: match &accounts.bank {
                Some(r) => Some(self.bank_balance(r)?),
                None => None,
            },
        })
    }

    /// Finishes every instruction left mid-flight, e.g. after a restart.
    /// Returns how many were still not terminal afterwards.
    pub fn resume_pending(&self) -> usize {
        let _guard = self.exec.lock().unwrap();
        let Ok(pending) = self.svc.read(|s| Ok(s.pending())) else {
            return 0;
        };
        pending.iter().filter(|id| self.advance(id).is_err()).count()
    }

    pub fn register_program(&self, caller: &str, spec: &ProgramSpec) -> Result<ProgramId, EcoError> {
        self.authorize(caller, &[Role::Pip, Role::Operator])?;
        programs::check(spec).map_err(EcoError::InvalidProgram)?;
        let _guard = self.exec.lock().unwrap();
        let entry = self
            .svc
            .read(|s| Ok(s.directory.get(&spec.owner).cloned()))?
            .ok_or_else(|| EcoError::UnknownUser(spec.owner.to_string()))?;
        if self.role(caller) == Some(Role::Pip) && !entry.pips.contains(caller) {
            return Err(EcoError::UnauthorizedAccounts(spec.owner.to_string()));
        }
        if let Some(a) = &spec.accounts.cbdc {
            if !entry.cbdc.iter().any(|c| &c.account_id == a) {
                return Err(EcoError::UnauthorizedAccounts(a.to_string()));
            }
        }
        if let Some(r) = &spec.accounts.bank {
            if !entry.bank.contains(r) {
                return Err(EcoError::UnauthorizedAccounts(r.account_id.to_string()));
            }
        }
        let observed = self.snapshot(&spec.accounts)?;
        self.svc.write(|s| {
            let program_id = programs::program_id(s.next_program + 1);
            let program = Program {
                program_id: program_id.clone(),
                spec: spec.clone(),
                registered_at: self.svc.now(),
            };
            let ev = EcoEvent::ProgramRegistered {
                program,
                observed,
                caller: caller.to_string(),
            };
            Ok((Some(ev), program_id))
        })
    }

    pub fn deregister_program(&self, caller: &str, id: &ProgramId) -> Result<(), EcoError> {
        self.authorize(caller, &[Role::Pip, Role::Operator])?;
        let _guard = self.exec.lock().unwrap();
        self.svc.write(|s| {
            let p = s
                .programs
                .get(id)
                .filter(|p| p.active)
                .ok_or_else(|| EcoError::UnknownProgram(id.to_string()))?;
            let owner_pips = s.directory.get(&p.program.spec.owner).map(|d| &d.pips);
            if self.role(caller) == Some(Role::Pip) && !owner_pips.is_some_and(|ps| ps.contains(caller)) {
                return Err(EcoError::Unauthorized);
            }
            let ev = EcoEvent::ProgramDeregistered {
                program_id: id.clone(),
                caller: caller.to_string(),
            };
            Ok((Some(ev), ()))
        })
    }

    /// Runs every active program once for `tick`, in ascending program id
    /// order. Balances are read once per account at the start of the tick.
    pub fn evaluate_programs(&self, caller: &str, tick: Tick) -> Result<Vec<ProgramFiring>, EcoError> {
        self.authorize(caller, &[Role::Operator])?;
        let _guard = self.exec.lock().unwrap();
        let records: Vec<ProgramRecord> = self.svc.read(|s| {
            Ok(s.programs
                .values()
                .filter(|p| p.active && p.program.spec.action != Action::Reject)
                .cloned()
                .collect())
        })?;
        let mut cbdc_seen: BTreeMap<AccountId, Money> = BTreeMap::new();
        let mut bank_seen: BTreeMap<(BankId, AccountId), Money> = BTreeMap::new();
        let mut firings = Vec::new();
        for rec in records {
            let p = &rec.program;
            let mut firing = ProgramFiring {
                program_id: p.program_id.clone(),
                tick,
                instruction: None,
                status: None,
                error: None,
            };
            // Already fired this tick (evaluation re-run after a restart).
            if let Some((t, id)) = &rec.last_fired {
                if *t == tick {
                    let wire = self.svc.read(|s| Ok(s.instructions.get(id).map(|r| r.wire.clone())))?;
                    if let Some(wire) = wire {
                        firing.status = Some(self.admit(&wire, program_source(p, tick))?);
                        firing.instruction = Some(wire);
                    }
                    firings.push(firing);
                    continue;
                }
            }
            let snapshot = match self.cached_snapshot(&p.spec.accounts, &mut cbdc_seen, &mut bank_seen) {
                Ok(s) => s,
                Err(e) => {
                    firing.error = Some(e.to_string());
                    firings.push(firing);
                    continue;
                }
            };
            let due = programs::is_due(p, tick, &rec.observed, &snapshot);
            if snapshot != rec.observed && tick > p.registered_at {
                self.svc.record(EcoEvent::ProgramObserved {
                    program_id: p.program_id.clone(),
                    observed: snapshot,
                })?;
            }
            if !due {
                continue;
            }
            let Some(wire) = programs::action_instruction(p, tick, &snapshot) else {
                continue;
            };
            self.svc.record(EcoEvent::ProgramFired {
                program_id: p.program_id.clone(),
                tick,
                instruction_id: programs::generated_instruction_id(&p.program_id, tick),
            })?;
            firing.status = Some(self.admit(&wire, program_source(p, tick))?);
            firing.instruction = Some(wire);
            firings.push(firing);
        }
        Ok(firings)
    }

    fn cached_snapshot(
        &self,
        accounts: &programs::ProgramAccounts,
        cbdc_seen: &mut BTreeMap<AccountId, Money>,
        bank_seen: &mut BTreeMap<(BankId, AccountId), Money>,
    ) -> Result<Snapshot, EcoError> {
        let cbdc = match &accounts.cbdc {
            None => None,
            Some(a) => Some(match cbdc_seen.get(a) {
                Some(m) => *m,
                None => {
                    let m = self.cbdc_balance(a)?;
                    cbdc_seen.insert(a.clone(), m);
                    m
                }
            }),
        };
        let bank = match &accounts.bank {
            None => None,
            Some(r) => {
                let key = (r.bank_id.clone(), r.account_id.clone());
                Some(match bank_seen.get(&key) {
                    Some(m) => *m,
                    None => {
                        let m = self.bank_balance(r)?;
                        bank_seen.insert(key, m);
                        m
                    }
                })
            }
        };
        Ok(Snapshot { cbdc, bank })
    }

    pub fn identity_verify(&self, caller: &str, req: &KycRequest) -> Result<KycVerdict, EcoError> {
        self.authorize(caller, &[Role::Pip, Role::Operator])?;
        let verdict = self.config.identity.verify(req);
        self.svc.record(EcoEvent::KycVerified {
            user_id: req.user_id.clone(),
            verdict,
            caller: caller.to_string(),
        })?;
        Ok(verdict)
    }

    pub fn link_accounts(&self, caller: &str, req: &LinkRequest) -> Result<(), EcoError> {
        self.authorize(caller, &[Role::Pip])?;
        self.svc.write(|s| {
            let current = s.directory.get(&req.user_id);
            let new_cbdc = req
                .cbdc
                .as_ref()
                .is_some_and(|a| !current.is_some_and(|c| c.cbdc.iter().any(|x| &x.account_id == a)));
            let new_bank = req.bank.iter().any(|b| !current.is_some_and(|c| c.bank.contains(b)));
            let new_pip = !current.is_some_and(|c| c.pips.contains(caller));
            if !(new_cbdc || new_bank || new_pip) {
                return Ok((None, ()));
            }
            let ev = EcoEvent::AccountsLinked {
                link: req.clone(),
                caller: caller.to_string(),
            };
            Ok((Some(ev), ()))
        })
    }

    pub fn unlink_accounts(&self, caller: &str, req: &LinkRequest) -> Result<(), EcoError> {
        self.authorize(caller, &[Role::Pip])?;
        self.svc.write(|s| {
            let entry = s
                .directory
                .get(&req.user_id)
                .ok_or_else(|| EcoError::UnknownUser(req.user_id.to_string()))?;
            if !entry.pips.contains(caller) {
                return Err(EcoError::Unauthorized);
            }
            let ev = EcoEvent::AccountsUnlinked {
                link: req.clone(),
                caller: caller.to_string(),
            };
            Ok((Some(ev), ()))
        })
    }

    /// Totals read from the ledgers. Only meaningful once the system is
    /// quiescent (no plan mid-flight, FPS drained).
    pub fn conservation_report(&self) -> Result<ConservationReport, EcoError> {
        let unavailable = |e: &dyn std::fmt::Display| EcoError::Unavailable(e.to_string());
        let core = self.core.totals().map_err(|e| unavailable(&e))?;
        let mut banks = Vec::new();
        for b in self.banks.values() {
            banks.push(b.totals().map_err(|e| unavailable(&e))?);
        }
        let deposits = checked_sum(banks.iter().map(|t| t.deposits))?;
        let deposits_earmarked = checked_sum(banks.iter().map(|t| t.earmarked))?;
        let fps_in_flight = checked_sum(banks.iter().map(|t| t.fps_outbound_pending))?;
        let cash_injected = checked_sum(banks.iter().map(|t| t.cash_injected))?;
        let sheet = core.reserves.checked_add(core.cbdc_outstanding)?;
        let money = checked_sum([
            deposits,
            deposits_earmarked,
            fps_in_flight,
            core.cbdc_balances,
            core.cbdc_earmarked,
        ])?;
        Ok(ConservationReport {
            reserves: core.reserves,
            cbdc_outstanding: core.cbdc_outstanding,
            reserves_injected: core.reserves_injected,
            cbdc_balances: core.cbdc_balances,
            cbdc_earmarked: core.cbdc_earmarked,
            deposits,
            deposits_earmarked,
            fps_in_flight,
            cash_injected,
            balance_sheet_holds: sheet == core.reserves_injected,
            money_holds: money == cash_injected,
        })
    }
}

fn program_source(p: &Program, tick: Tick) -> Source {
    Source::Program {
        program_id: p.program_id.clone(),
        tick,
    }
}

fn describe(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("{}:{}", v.code, v.field))
        .collect::<Vec<_>>()
        .join(",")
}

fn describe_target(t: &PayeeTarget) -> String {
    match t {
        PayeeTarget::User { user } => user.to_string(),
        PayeeTarget::Account { account_id, .. } => account_id.to_string(),
    }
}

fn resolve_payee(directory: &BTreeMap<UserId, LinkedAccounts>, rail: &Rail, target: &PayeeTarget) -> Option<Coordinates> {
    match (rail, target) {
        (Rail::Cbdc, PayeeTarget::Account { account_id, .. }) => Some(Coordinates::Cbdc {
            account_id: account_id.clone(),
        }),
        (Rail::Bank, PayeeTarget::Account { bank_id, account_id }) => Some(Coordinates::Bank {
            bank_id: bank_id.clone()?,
            account_id: account_id.clone(),
        }),
        (Rail::Cbdc, PayeeTarget::User { user }) => directory.get(user)?.cbdc.first().map(|c| Coordinates::Cbdc {
            account_id: c.account_id.clone(),
        }),
        (Rail::Bank, PayeeTarget::User { user }) => directory.get(user)?.bank.first().map(Coordinates::bank),
    }
}

fn owns(accounts: &programs::ProgramAccounts, c: &Coordinates) -> bool {
    match c {
        Coordinates::Cbdc { account_id } => accounts.cbdc.as_ref() == Some(account_id),
        Coordinates::Bank { bank_id, account_id } => accounts
            .bank
            .as_ref()
            .is_some_and(|r| &r.bank_id == bank_id && &r.account_id == account_id),
    }
}

impl Crashable for Ecosystem {
    fn is_crashed(&self) -> bool {
        Ecosystem::is_crashed(self)
    }
}

/// In-process client bound to one caller identity.
#[derive(Debug, Clone)]
pub struct LocalEco<S> {
    service: S,
    caller: String,
}

impl<S> LocalEco<S> {
    pub fn new(service: S, caller: impl Into<String>) -> Self {
        Self {
            service,
            caller: caller.into(),
        }
    }
}

impl<S: ServiceHandle<Ecosystem>> EcosystemApi for LocalEco<S> {
    fn submit_payment(&self, wire: &WireInstruction) -> Result<PaymentStatus, EcoError> {
        self.service.call(|e| e.submit_payment(&self.caller, wire))
    }
    fn payment_status(&self, id: &InstructionId) -> Result<PaymentStatus, EcoError> {
        self.service.call(|e| e.payment_status(&self.caller, id))
    }
    fn register_program(&self, spec: &ProgramSpec) -> Result<ProgramId, EcoError> {
        self.service.call(|e| e.register_program(&self.caller, spec))
    }
    fn deregister_program(&self, id: &ProgramId) -> Result<(), EcoError> {
        self.service.call(|e| e.deregister_program(&self.caller, id))
    }
    fn evaluate_programs(&self, tick: Tick) -> Result<Vec<ProgramFiring>, EcoError> {
        self.service.call(|e| e.evaluate_programs(&self.caller, tick))
    }
    fn identity_verify(&self, req: &KycRequest) -> Result<KycVerdict, EcoError> {
        self.service.call(|e| e.identity_verify(&self.caller, req))
    }
    fn link_accounts(&self, req: &LinkRequest) -> Result<(), EcoError> {
        self.service.call(|e| e.link_accounts(&self.caller, req))
    }
    fn unlink_accounts(&self, req: &LinkRequest) -> Result<(), EcoError> {
        self.service.call(|e| e.unlink_accounts(&self.caller, req))
    }
    fn conservation_report(&self) -> Result<ConservationReport, EcoError> {
        self.service.call(|e| e.conservation_report())
    }
}
