//! Runs a scenario against a freshly booted system and builds the report.

use std::collections::BTreeMap;

use cbdc_core::ecosystem::standards::WirePayee;
use cbdc_core::ecosystem::{EcosystemApi, InstructionState, PaymentStatus, ProgramFiring};
use cbdc_core::fault::{FaultSpec, FiredFault};
use cbdc_core::pip::{Onboarding, PaymentRequest, PipApi};
use cbdc_core::{BankId, InstructionId, Money, ProgramId, Tick, UserId, WireError};
use serde::Serialize;
use thiserror::Error;

use crate::export::StateExport;
use crate::invariants::{self, InvariantResult};
use crate::scenario::{Action, Expect, Scenario, ScenarioError, Step};
use crate::system::{BootError, StorageMode, System, SystemConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Boot(#[from] BootError),
    #[error("step {step} (tick {tick}, {action}): {detail}")]
    ExpectationFailed {
        step: usize,
        tick: Tick,
        action: String,
        detail: String,
    },
    #[error("invariant {name} violated: {detail}")]
    InvariantViolated { name: String, detail: String },
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
    pub faults: Vec<FaultSpec>,
    pub storage: StorageMode,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct UserBalance {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cbdc: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bank: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub cash_injected: i64,
    pub deposits: i64,
    pub cbdc: i64,
    pub reserves_injected: i64,
    pub reserves: i64,
    pub cbdc_outstanding: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Digest {
    pub events: u64,
    pub head: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstructionOutcome {
    pub state: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub route: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Firing {
    pub tick: Tick,
    pub program_id: ProgramId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instruction_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amount: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<ProgramFiring> for Firing {
    fn from(f: ProgramFiring) -> Self {
        Firing {
            tick: f.tick,
            program_id: f.program_id,
            instruction_id: f.instruction.as_ref().and_then(|w| w.instruction_id.clone()),
            amount: f.instruction.as_ref().and_then(|w| w.amount.clone()),
            state: f.status.map(|s| state_name(s.state)),
            error: f.error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub step: usize,
    pub tick: Tick,
    pub action: String,
    pub detail: String,
}

/// Everything a run produced. Serializes canonically, so equal runs give
/// byte-identical reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub steps: usize,
    pub final_tick: Tick,
    pub balances: BTreeMap<UserId, UserBalance>,
    pub reserves: BTreeMap<BankId, i64>,
    pub totals: Totals,
    pub digests: BTreeMap<String, Digest>,
    pub invariants: Vec<InvariantResult>,
    pub instructions: BTreeMap<InstructionId, InstructionOutcome>,
    pub firings: Vec<Firing>,
    pub faults_fired: Vec<FiredFault>,
    pub restarts: BTreeMap<String, u64>,
    pub failures: Vec<Failure>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        let mut s = serde_json::to_string_pretty(&value).expect("report serializes");
        s.push('\n');
        s
    }

    /// Balances of a user; all `None` for an unknown user.
    pub fn balance(&self, user: &str) -> UserBalance {
        self.balances.get(&UserId::from(user)).cloned().unwrap_or_default()
    }

    pub fn invariants_hold(&self) -> bool {
        self.invariants.iter().all(|i| i.pass)
    }

    /// First failing expectation, else first violated invariant.
    pub fn verdict(&self) -> Result<(), RunError> {
        if let Some(f) = self.failures.first() {
            return Err(RunError::ExpectationFailed {
                step: f.step,
                tick: f.tick,
                action: f.action.clone(),
                detail: f.detail.clone(),
            });
        }
        if let Some(i) = self.invariants.iter().find(|i| !i.pass) {
            return Err(RunError::InvariantViolated {
                name: i.name.to_string(),
                detail: i.violations.join("; "),
            });
        }
        Ok(())
    }
}

/// A finished run: the report and the live system it ran on.
pub struct Run {
    pub report: Report,
    pub system: System,
}

impl std::fmt::Debug for Run {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Run").field("report", &self.report.scenario).finish()
    }
}

pub fn state_name(state: InstructionState) -> String {
    serde_json::to_value(state)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// What a step returned.
#[derive(Debug, Default)]
struct Outcome {
    status: Option<PaymentStatus>,
    error: Option<(String, String)>,
    unavailable: bool,
}

impl Outcome {
    fn from_result<T, E: WireError>(r: Result<T, E>, status: impl FnOnce(T) -> Option<PaymentStatus>) -> Self {
        match r {
            Ok(v) => Outcome {
                status: status(v),
                ..Default::default()
            },
            Err(e) => Outcome {
                status: None,
                error: Some((e.code().to_string(), e.to_string())),
                unavailable: e.is_unavailable(),
            },
        }
    }
}

fn payment(sys: &System, from: &UserId, to: &UserId, pence: i64, rail: &str, prefer: &str, token: Option<String>) -> Outcome {
    let req = PaymentRequest {
        payee: WirePayee {
            rail: Some(rail.to_string()),
            user: Some(to.to_string()),
            ..Default::default()
        },
        amount: Money::pence(pence).to_string(),
        preferred_rail: Some(prefer.to_string()),
        memo: None,
        client_token: token,
    };
    Outcome::from_result(sys.pip_app().submit_payment(from, &req), Some)
}

/// How often a step is re-sent after its target crashed under it. Payments
/// carry a client token, so a re-send is the same payment.
const CLIENT_ATTEMPTS: usize = 4;

fn execute(sys: &System, step: usize, action: &Action) -> Outcome {
    let mut out = execute_once(sys, step, action);
    for _ in 1..CLIENT_ATTEMPTS {
        if !out.unavailable {
            break;
        }
        out = execute_once(sys, step, action);
    }
    out
}

fn default_token(step: usize) -> Option<String> {
    Some(format!("s{step}"))
}

fn execute_once(sys: &System, step: usize, action: &Action) -> Outcome {
    match action {
        Action::Tick => Outcome::default(),
        Action::Onboard { user, legal_name } => {
            let req = Onboarding {
                user_id: user.clone(),
                legal_name: legal_name.clone().unwrap_or_else(|| format!("{user} Example")),
                documents: [("passport".to_string(), format!("PASSPORT-{user}"))].into(),
            };
            Outcome::from_result(sys.pip_app().onboard_user(&req), |_| None)
        }
        Action::OpenCbdc { user } => Outcome::from_result(sys.pip_app().open_cbdc_account(user), |_| None),
        Action::InjectCash { user, pence } => Outcome::from_result(sys.inject_cash(user, *pence), |_| None),
        Action::InjectReserves { bank, pence } => Outcome::from_result(sys.inject_reserves(bank, *pence), |_| None),
        Action::Fund { user, pence } => payment(sys, user, user, *pence, "cbdc", "bank", default_token(step)),
        Action::Defund { user, pence } => payment(sys, user, user, *pence, "bank", "cbdc", default_token(step)),
        Action::Pay {
            from,
            to,
            pence,
            rail,
            prefer,
            token,
        } => {
            let rail = rail.clone().unwrap_or_else(|| {
                if sys.cbdc_of(to).is_some() {
                    "cbdc".into()
                } else {
                    "bank".into()
                }
            });
            let prefer = prefer.as_deref().unwrap_or("auto");
            payment(sys, from, to, *pence, &rail, prefer, token.clone().or_else(|| default_token(step)))
        }
        Action::RegisterProgram(p) => {
            let spec = sys.program_spec(p);
            Outcome::from_result(sys.eco_ops().register_program(&spec), |_| None)
        }
        Action::DeregisterProgram { program_id } => {
            Outcome::from_result(sys.eco_ops().deregister_program(program_id), |_| None)
        }
        Action::Restart { service } => match sys.restart(service) {
            Ok(()) => Outcome::default(),
            Err(e) => Outcome {
                error: Some(("BAD_REQUEST".into(), e)),
                ..Default::default()
            },
        },
    }
}

fn check(sys: &System, expect: &Expect, out: &Outcome) -> Vec<String> {
    let mut problems = Vec::new();
    match (&expect.error, &out.error) {
        (Some(want), Some((got, _))) if want != got => problems.push(format!("error {got}, expected {want}")),
        (Some(want), None) => problems.push(format!("succeeded, expected error {want}")),
        (None, Some((code, msg))) if expect.state.is_some() || expect.rejection.is_some() || expect.route.is_some() => {
            problems.push(format!("failed with {code}: {msg}"))
        }
        _ => {}
    }
    if let Some(st) = &out.status {
        if let Some(want) = &expect.state {
            let got = state_name(st.state);
            if &got != want {
                let why = st
                    .rejection
                    .as_ref()
                    .map(|r| format!(" ({})", r.code))
                    .or_else(|| st.failure.as_ref().map(|f| format!(" ({f})")))
                    .unwrap_or_default();
                problems.push(format!("state {got}{why}, expected {want}"));
            }
        }
        if let Some(want) = &expect.rejection {
            let got = st.rejection.as_ref().map(|r| r.code.as_str()).unwrap_or("none");
            if got != want {
                problems.push(format!("rejection {got}, expected {want}"));
            }
        }
        if let Some(want) = &expect.route {
            let got = st.route.as_deref().unwrap_or("none");
            if got != want {
                problems.push(format!("route {got}, expected {want}"));
            }
        }
    }
    for (user, want) in &expect.balances {
        let (cbdc, bank) = sys.balance_of(user);
        if want.cbdc.is_some() && want.cbdc != cbdc {
            problems.push(format!("{user} CBDC {cbdc:?}, expected {:?}", want.cbdc));
        }
        if want.bank.is_some() && want.bank != bank {
            problems.push(format!("{user} bank {bank:?}, expected {:?}", want.bank));
        }
    }
    problems
}

fn digest(journal: &str) -> Digest {
    let events = journal.lines().filter(|l| !l.trim().is_empty()).count() as u64;
    let head = journal
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .and_then(|v| v["hash"].as_str().map(str::to_string))
        .unwrap_or_else(|| cbdc_core::journal::GENESIS_HASH.to_string());
    Digest { events, head }
}

fn balances(sys: &System) -> BTreeMap<UserId, UserBalance> {
    sys.topology()
        .users
        .iter()
        .map(|u| {
            let (cbdc, bank) = sys.balance_of(&u.id);
            (u.id.clone(), UserBalance { cbdc, bank })
        })
        .collect()
}

fn totals(export: &StateExport) -> Totals {
    let mut t = Totals::default();
    for b in export.banks.values() {
        t.cash_injected += b.cash_injected.minor_units();
        t.deposits += b.accounts.values().map(|a| a.balance.minor_units() + a.earmarked.minor_units()).sum::<i64>();
    }
    t.cbdc = export
        .core
        .accounts
        .values()
        .map(|a| a.balance.minor_units() + a.earmarked.minor_units())
        .sum();
    t.reserves_injected = export.core.reserves_injected.minor_units();
    t.reserves = export.core.reserves.values().map(|r| r.balance.minor_units()).sum();
    t.cbdc_outstanding = export.core.cbdc_outstanding.minor_units();
    t
}

/// Builds the report for a quiesced system.
pub fn report(sys: &System, scenario: &Scenario, seed: u64, firings: Vec<Firing>, failures: Vec<Failure>) -> Report {
    let export = sys.export();
    let violations = invariants::verify(&export);
    let mut instructions = BTreeMap::new();
    for eco in export.ecosystems.values() {
        for (id, r) in &eco.instructions {
            let route = r
                .plan_id
                .as_ref()
                .and_then(|p| eco.plans.get(p))
                .map(|p| p.plan.route());
            instructions.insert(
                id.clone(),
                InstructionOutcome {
                    state: state_name(r.state),
                    route,
                    rejection: r.rejection.as_ref().map(|x| x.code.clone()),
                },
            );
        }
    }
    Report {
        scenario: scenario.name.clone(),
        seed,
        steps: scenario.steps.len(),
        final_tick: sys.clock.now(),
        balances: balances(sys),
        reserves: export
            .core
            .reserves
            .iter()
            .map(|(id, r)| (id.clone(), r.balance.minor_units()))
            .collect(),
        totals: totals(&export),
        digests: export.journals.iter().map(|(s, j)| (s.clone(), digest(j))).collect(),
        invariants: invariants::summarize(&violations),
        instructions,
        firings,
        faults_fired: sys.faults.fired(),
        restarts: sys.restarts(),
        failures,
    }
}

fn run_steps(sys: &System, steps: &[Step], firings: &mut Vec<Firing>, failures: &mut Vec<Failure>) {
    for (i, step) in steps.iter().enumerate() {
        firings.extend(sys.advance_to(step.tick).into_iter().map(Firing::from));
        let out = execute(sys, i + 1, &step.action);
        for detail in check(sys, &step.expect, &out) {
            failures.push(Failure {
                step: i + 1,
                tick: step.tick,
                action: step.action.name().to_string(),
                detail,
            });
        }
    }
}

/// Boots cold, runs every step on the logical clock, quiesces, then checks
/// invariants. Expectation failures and violations are in the report; see
/// [`Report::verdict`].
pub fn run_scenario(scenario: &Scenario, options: RunOptions) -> Result<Run, RunError> {
    let seed = options.seed.unwrap_or(scenario.seed);
    let mut config = SystemConfig::new(scenario.topology.clone(), seed);
    config.rules = scenario.rules.clone();
    config.faults = options.faults;
    config.storage = options.storage;
    let system = System::boot(config)?;
    let mut firings = Vec::new();
    let mut failures = Vec::new();
    run_steps(&system, &scenario.steps, &mut firings, &mut failures);
    system.quiesce();
    let report = report(&system, scenario, seed, firings, failures);
    Ok(Run { report, system })
}
