//! Scenario files: JSON lines. An optional header line names the scenario,
//! its seed and topology; every other line is one step. Blank lines and lines
//! starting with `#` are skipped.
//!
//! ```text
//! {"name":"fund-then-pay","seed":7}
//! {"tick":1,"action":"inject_cash","params":{"user":"User1","pence":500}}
//! {"tick":1,"action":"inject_reserves","params":{"bank":"BANK_A","pence":500}}
//! {"tick":2,"action":"fund","params":{"user":"User1","pence":500},"expect":{"state":"committed"}}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use cbdc_core::ecosystem::aml::AmlConfig;
use cbdc_core::ecosystem::policy::PolicyRule;
use cbdc_core::ecosystem::programs::{Action as ProgramAction, Condition, Trigger};
use cbdc_core::fault::FaultSpec;
use cbdc_core::ids::{BankId, ProgramId, Tick, UserId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankSetup {
    pub id: BankId,
    /// Reserves injected at boot, in pence.
    #[serde(default)]
    pub reserves: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSetup {
    pub id: UserId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legal_name: Option<String>,
    /// Bank holding the user's deposit account, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<BankId>,
    #[serde(default)]
    pub deposit: i64,
    /// Whether the PIP opens a CBDC account at boot.
    #[serde(default)]
    pub cbdc: bool,
    /// Identity fixture verdict.
    #[serde(default = "yes")]
    pub kyc: bool,
}

fn yes() -> bool {
    true
}

impl UserSetup {
    pub fn new(id: &str) -> Self {
        Self {
            id: id.into(),
            legal_name: None,
            bank: None,
            deposit: 0,
            cbdc: false,
            kyc: true,
        }
    }

    pub fn legal_name(&self) -> String {
        self.legal_name.clone().unwrap_or_else(|| format!("{} Example", self.id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub banks: Vec<BankSetup>,
    pub users: Vec<UserSetup>,
}

impl Topology {
    /// Two banks and five users: User1 at Bank A and the central bank, User2
    /// at the central bank only, User3 at Bank B only, User4 at Bank B and
    /// the central bank, User5 at the central bank only. Nothing is funded.
    pub fn reference() -> Self {
        let user = |id: &str, bank: Option<&str>, cbdc: bool| UserSetup {
            bank: bank.map(BankId::from),
            cbdc,
            ..UserSetup::new(id)
        };
        Topology {
            banks: vec![
                BankSetup {
                    id: "BANK_A".into(),
                    reserves: 0,
                },
                BankSetup {
                    id: "BANK_B".into(),
                    reserves: 0,
                },
            ],
            users: vec![
                user("User1", Some("BANK_A"), true),
                user("User2", None, true),
                user("User3", Some("BANK_B"), false),
                user("User4", Some("BANK_B"), true),
                user("User5", None, true),
            ],
        }
    }

    pub fn user(&self, id: &UserId) -> Option<&UserSetup> {
        self.users.iter().find(|u| &u.id == id)
    }
}

impl Default for Topology {
    fn default() -> Self {
        Self::reference()
    }
}

/// Program as written in a scenario: the owner's accounts are filled in by
/// the harness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramParams {
    pub owner: UserId,
    pub trigger: Trigger,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    pub action: ProgramAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "params", rename_all = "snake_case")]
pub enum Action {
    /// Moves the clock only.
    Tick,
    Onboard {
        user: UserId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        legal_name: Option<String>,
    },
    OpenCbdc {
        user: UserId,
    },
    InjectCash {
        user: UserId,
        pence: i64,
    },
    InjectReserves {
        bank: BankId,
        pence: i64,
    },
    /// Bank deposit → own CBDC account.
    Fund {
        user: UserId,
        pence: i64,
    },
    /// Own CBDC account → bank deposit.
    Defund {
        user: UserId,
        pence: i64,
    },
    Pay {
        from: UserId,
        to: UserId,
        pence: i64,
        /// Payee rail; defaults to CBDC when the payee holds CBDC.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rail: Option<String>,
        /// Payer preference: `cbdc`, `bank` or `auto` (default).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prefer: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token: Option<String>,
    },
    RegisterProgram(ProgramParams),
    DeregisterProgram {
        program_id: ProgramId,
    },
    /// Crash and recover a service between steps.
    Restart {
        service: String,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Tick => "tick",
            Action::Onboard { .. } => "onboard",
            Action::OpenCbdc { .. } => "open_cbdc",
            Action::InjectCash { .. } => "inject_cash",
            Action::InjectReserves { .. } => "inject_reserves",
            Action::Fund { .. } => "fund",
            Action::Defund { .. } => "defund",
            Action::Pay { .. } => "pay",
            Action::RegisterProgram(_) => "register_program",
            Action::DeregisterProgram { .. } => "deregister_program",
            Action::Restart { .. } => "restart",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceExpect {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cbdc: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<i64>,
}

/// Checks run right after a step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    /// Terminal instruction state, e.g. `committed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    /// Rejection code of a rejected instruction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
    /// Error code returned by the call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub balances: BTreeMap<UserId, BalanceExpect>,
}

impl Expect {
    pub fn is_empty(&self) -> bool {
        *self == Expect::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub tick: Tick,
    #[serde(flatten)]
    pub action: Action,
    #[serde(default, skip_serializing_if = "Expect::is_empty")]
    pub expect: Expect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    name: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    topology: Option<Topology>,
    #[serde(default, skip_serializing_if = "Rules::is_empty")]
    rules: Rules,
}

/// Ecosystem policy and AML settings for a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rules {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policy: Vec<PolicyRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aml: Option<AmlConfig>,
}

impl Rules {
    pub fn is_empty(&self) -> bool {
        *self == Rules::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub topology: Topology,
    pub rules: Rules,
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn new(name: impl Into<String>, seed: u64, topology: Topology) -> Self {
        Self {
            name: name.into(),
            seed,
            topology,
            rules: Rules::default(),
            steps: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut header: Option<Header> = None;
        let mut steps: Vec<Step> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |reason: String| ScenarioError::Parse { line, reason };
            let value: serde_json::Value = serde_json::from_str(trimmed).map_err(|e| err(e.to_string()))?;
            if value.get("action").is_none() {
                if header.is_some() || !steps.is_empty() {
                    return Err(err("header must be the first entry".into()));
                }
                header = Some(serde_json::from_value(value).map_err(|e| err(e.to_string()))?);
                continue;
            }
            let step: Step = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
            if let Some(prev) = steps.last() {
                if step.tick < prev.tick {
                    return Err(err(format!("tick {} goes back from {}", step.tick, prev.tick)));
                }
            }
            steps.push(step);
        }
        let header = header.unwrap_or(Header {
            name: String::new(),
            seed: 0,
            topology: None,
            rules: Rules::default(),
        });
        Ok(Scenario {
            name: header.name,
            seed: header.seed,
            topology: header.topology.unwrap_or_default(),
            rules: header.rules,
            steps,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            name: self.name.clone(),
            seed: self.seed,
            topology: Some(self.topology.clone()),
            rules: self.rules.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    pub fn last_tick(&self) -> Tick {
        self.steps.last().map_or(0, |s| s.tick)
    }
}

/// Fault plan files hold one [`FaultSpec`] per line.
pub fn parse_fault_plan(text: &str) -> Result<Vec<FaultSpec>, ScenarioError> {
    let mut specs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let spec = serde_json::from_str(trimmed).map_err(|e| ScenarioError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        specs.push(spec);
    }
    Ok(specs)
}

pub fn load_fault_plan(path: &Path) -> Result<Vec<FaultSpec>, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_fault_plan(&text)
}
