//! In-process wiring of every service on one logical clock. Each service
//! lives in a [`Node`], so a crash fault (or an explicit restart) rebuilds it
//! from its journal and callers carry on against the new instance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use cbdc_core::bank::{Bank, BankConfig, BankError, LocalBank};
use cbdc_core::ecosystem::programs::{ProgramAccounts, ProgramSpec};
use cbdc_core::ecosystem::{EcoConfig, Ecosystem, LocalEco, ProgramFiring};
use cbdc_core::fault::{FaultInjector, FaultSpec};
use cbdc_core::fps::{BankSet, FpsNetwork};
use cbdc_core::journal::{FileStorage, MemoryStorage, Storage};
use cbdc_core::ledger::{CoreConfig, CoreError, CoreLedger, LocalCore};
use cbdc_core::node::{Node, ServiceHandle};
use cbdc_core::pip::{LocalPip, Onboarding, Pip, PipApi, PipConfig};
use cbdc_core::{AccountId, BankId, LogicalClock, Money, Role, Tick, UserId};
use thiserror::Error;

use crate::export::{journal_file, StateExport};
use crate::scenario::{Rules, Topology};

pub const CORE: &str = "core";
pub const ECO: &str = "eco:ECO1";
pub const PIP: &str = "pip:PIP1";
pub const PIP_ID: &str = "PIP1";
pub const OPERATOR: &str = "harness";
pub const FPS: &str = "fps";
/// Caller the harness uses when acting for users at the PIP.
pub const APP: &str = "app";

pub fn bank_service(id: &BankId) -> String {
    format!("bank:{id}")
}

#[derive(Debug, Error)]
pub enum BootError {
    #[error("cannot open journal {path}: {reason}")]
    Storage { path: String, reason: String },
    #[error("{service} failed to start: {reason}")]
    Start { service: String, reason: String },
    #[error("topology: {0}")]
    Topology(String),
}

#[derive(Debug, Clone, Default)]
pub enum StorageMode {
    #[default]
    Memory,
    /// One `<service>.jsonl` file per service in this directory.
    Dir(PathBuf),
}

#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub topology: Topology,
    pub rules: Rules,
    pub seed: u64,
    pub faults: Vec<FaultSpec>,
    /// FPS transit time in ticks.
    pub fps_delay: Tick,
    pub storage: StorageMode,
}

impl SystemConfig {
    pub fn new(topology: Topology, seed: u64) -> Self {
        Self {
            topology,
            rules: Rules::default(),
            seed,
            faults: Vec::new(),
            fps_delay: 1,
            storage: StorageMode::Memory,
        }
    }
}

type CoreNode = Arc<Node<CoreLedger>>;
type BankNode = Arc<Node<Bank>>;
type EcoNode = Arc<Node<Ecosystem>>;
type PipNode = Arc<Node<Pip>>;

pub struct System {
    pub clock: LogicalClock,
    pub faults: FaultInjector,
    pub core: CoreNode,
    pub banks: BTreeMap<BankId, BankNode>,
    pub eco: EcoNode,
    pub pip: PipNode,
    pub fps: FpsNetwork,
    fps_view: BankSet,
    topology: Topology,
    deposits: BTreeMap<UserId, (BankId, AccountId)>,
    cbdc: Mutex<BTreeMap<UserId, AccountId>>,
    storages: BTreeMap<String, Arc<dyn Storage>>,
}

impl std::fmt::Debug for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("System").field("services", &self.storages.keys()).finish()
    }
}

fn open_storage(mode: &StorageMode, service: &str) -> Result<Arc<dyn Storage>, BootError> {
    match mode {
        StorageMode::Memory => Ok(MemoryStorage::new()),
        StorageMode::Dir(dir) => {
            let path = dir.join(journal_file(service));
            FileStorage::open(&path)
                .map(|s| s as Arc<dyn Storage>)
                .map_err(|e| BootError::Storage {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })
        }
    }
}

fn started<T>(service: &str, r: Result<Arc<Node<T>>, String>) -> Result<Arc<Node<T>>, BootError> {
    r.map_err(|reason| BootError::Start {
        service: service.to_string(),
        reason,
    })
}

fn topology_error(e: impl std::fmt::Display) -> BootError {
    BootError::Topology(e.to_string())
}

impl System {
    /// Starts every service cold and lays down the topology: reserves, bank
    /// accounts with consent for the PIP, onboarding and CBDC accounts.
    pub fn boot(config: SystemConfig) -> Result<Self, BootError> {
        let clock = LogicalClock::new();
        let faults = FaultInjector::new(config.faults.clone());
        let mut storages = BTreeMap::new();

        let core_storage = open_storage(&config.storage, CORE)?;
        storages.insert(CORE.to_string(), core_storage.clone());
        let core = {
            let (clock, faults) = (clock.clone(), faults.clone());
            let cfg = CoreConfig::default()
                .with_caller(PIP, Role::Pip)
                .with_caller(ECO, Role::Ecosystem)
                .with_caller(OPERATOR, Role::Operator);
            started(
                CORE,
                Node::start(CORE, move || {
                    CoreLedger::recover(cfg.clone(), core_storage.clone(), clock.clone(), faults.clone())
                        .map_err(|e| e.to_string())
                }),
            )?
        };

        let bank_cfg = BankConfig::default()
            .with_caller(ECO, Role::Ecosystem)
            .with_caller(PIP, Role::Pip)
            .with_caller(OPERATOR, Role::Operator)
            .with_caller(FPS, Role::Network);
        let mut banks = BTreeMap::new();
        for b in &config.topology.banks {
            let name = bank_service(&b.id);
            let storage = open_storage(&config.storage, &name)?;
            storages.insert(name.clone(), storage.clone());
            let (clock, faults, cfg, id) = (clock.clone(), faults.clone(), bank_cfg.clone(), b.id.clone());
            let node = started(
                &name,
                Node::start(name.clone(), move || {
                    Bank::recover(id.clone(), cfg.clone(), storage.clone(), clock.clone(), faults.clone())
                        .map_err(|e| e.to_string())
                }),
            )?;
            banks.insert(b.id.clone(), node);
        }
        let view = |caller: &str| -> BankSet {
            banks
                .iter()
                .map(|(id, n)| {
                    let api: Arc<dyn cbdc_core::bank::BankApi> = Arc::new(LocalBank::new(id.clone(), n.clone(), caller));
                    (id.clone(), api)
                })
                .collect()
        };

        let mut eco_cfg = EcoConfig::new(ECO)
            .with_caller(PIP, Role::Pip)
            .with_caller(OPERATOR, Role::Operator);
        eco_cfg.policy = config.rules.policy.clone();
        if let Some(aml) = &config.rules.aml {
            eco_cfg.aml = aml.clone();
        }
        for u in &config.topology.users {
            eco_cfg.identity.verdicts.insert(u.id.clone(), u.kyc);
        }
        let eco_storage = open_storage(&config.storage, ECO)?;
        storages.insert(ECO.to_string(), eco_storage.clone());
        let eco = {
            let (clock, faults, eco_banks) = (clock.clone(), faults.clone(), view(ECO));
            let core_client = Arc::new(LocalCore::new(core.clone(), ECO));
            started(
                ECO,
                Node::start_with_hook(
                    ECO,
                    move || {
                        Ecosystem::recover(
                            eco_cfg.clone(),
                            eco_storage.clone(),
                            clock.clone(),
                            faults.clone(),
                            core_client.clone(),
                            eco_banks.clone(),
                        )
                        .map_err(|e| e.to_string())
                    },
                    |e| {
                        e.resume_pending();
                    },
                ),
            )?
        };

        let pip_storage = open_storage(&config.storage, PIP)?;
        storages.insert(PIP.to_string(), pip_storage.clone());
        let pip = {
            let (clock, faults, pip_banks) = (clock.clone(), faults.clone(), view(PIP));
            let core_client = Arc::new(LocalCore::new(core.clone(), PIP));
            let eco_client = Arc::new(LocalEco::new(eco.clone(), PIP));
            let cfg = PipConfig::new(PIP_ID, format!("pip-key-{}", config.seed).into_bytes(), config.seed)
                .with_caller(APP, Role::Operator)
                .with_caller(OPERATOR, Role::Operator);
            started(
                PIP,
                Node::start(PIP, move || {
                    Pip::recover(
                        cfg.clone(),
                        pip_storage.clone(),
                        clock.clone(),
                        faults.clone(),
                        core_client.clone(),
                        eco_client.clone(),
                        pip_banks.clone(),
                    )
                    .map_err(|e| e.to_string())
                }),
            )?
        };

        let mut sys = System {
            fps: FpsNetwork::new(config.fps_delay, faults.clone()),
            fps_view: view(FPS),
            clock,
            faults,
            core,
            banks,
            eco,
            pip,
            topology: config.topology.clone(),
            deposits: BTreeMap::new(),
            cbdc: Mutex::new(BTreeMap::new()),
            storages,
        };
        sys.lay_down()?;
        Ok(sys)
    }

    fn lay_down(&mut self) -> Result<(), BootError> {
        let topology = self.topology.clone();
        for b in &topology.banks {
            if b.reserves > 0 {
                self.inject_reserves(&b.id, b.reserves).map_err(topology_error)?;
            }
        }
        for u in &topology.users {
            if let Some(bank) = &u.bank {
                let node = self
                    .banks
                    .get(bank)
                    .ok_or_else(|| BootError::Topology(format!("{} banks at unknown {bank}", u.id)))?;
                let account = node
                    .call(|b: &Bank| b.open_account(OPERATOR, u.id.as_str()))
                    .map_err(topology_error)?;
                node.call(|b: &Bank| b.grant_consent(OPERATOR, PIP, u.id.as_str()))
                    .map_err(topology_error)?;
                self.deposits.insert(u.id.clone(), (bank.clone(), account));
                if u.deposit > 0 {
                    self.inject_cash(&u.id, u.deposit).map_err(topology_error)?;
                }
            }
        }
        for u in &topology.users {
            let onboarding = Onboarding {
                user_id: u.id.clone(),
                legal_name: u.legal_name(),
                documents: [("passport".to_string(), format!("PASSPORT-{}", u.id))].into(),
            };
            let onboarded = self.pip_app().onboard_user(&onboarding);
            if u.kyc {
                onboarded.map_err(topology_error)?;
                if u.cbdc {
                    self.pip_app().open_cbdc_account(&u.id).map_err(topology_error)?;
                }
            }
        }
        Ok(())
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn services(&self) -> impl Iterator<Item = &String> {
        self.storages.keys()
    }

    pub fn pip_app(&self) -> LocalPip<PipNode> {
        LocalPip::new(self.pip.clone(), APP)
    }

    pub fn eco_ops(&self) -> LocalEco<EcoNode> {
        LocalEco::new(self.eco.clone(), OPERATOR)
    }

    pub fn eco_as(&self, caller: &str) -> LocalEco<EcoNode> {
        LocalEco::new(self.eco.clone(), caller)
    }

    pub fn core_as(&self, caller: &str) -> LocalCore<CoreNode> {
        LocalCore::new(self.core.clone(), caller)
    }

    pub fn bank_as(&self, id: &BankId, caller: &str) -> Option<LocalBank<BankNode>> {
        self.banks.get(id).map(|n| LocalBank::new(id.clone(), n.clone(), caller))
    }

    pub fn inject_reserves(&self, bank: &BankId, pence: i64) -> Result<(), CoreError> {
        let amount = Money::from_pence(pence).map_err(|e| CoreError::BadRequest(e.to_string()))?;
        self.core.call(|c: &CoreLedger| c.inject_reserves(OPERATOR, bank, amount))
    }

    pub fn inject_cash(&self, user: &UserId, pence: i64) -> Result<(), BankError> {
        let (bank, account) = self
            .deposits
            .get(user)
            .ok_or_else(|| BankError::UnknownAccount(format!("{user} has no bank account")))?;
        let amount = Money::from_pence(pence).map_err(|e| BankError::BadRequest(e.to_string()))?;
        self.banks[bank].call(|b: &Bank| b.inject_cash(OPERATOR, account, amount))
    }

    pub fn deposit_of(&self, user: &UserId) -> Option<&(BankId, AccountId)> {
        self.deposits.get(user)
    }

    pub fn cbdc_of(&self, user: &UserId) -> Option<AccountId> {
        let mut cache = self.cbdc.lock().unwrap();
        if let Some(a) = cache.get(user) {
            return Some(a.clone());
        }
        let account = self.pip.current().export().mappings.get(user)?.account_id.clone()?;
        cache.insert(user.clone(), account.clone());
        Some(account)
    }

    /// CBDC and bank balance of a user, in pence, where the user has them.
    pub fn balance_of(&self, user: &UserId) -> (Option<i64>, Option<i64>) {
        let cbdc = self
            .cbdc_of(user)
            .and_then(|a| self.core.current().get_balance(&a).ok())
            .map(Money::minor_units);
        let bank = self
            .deposits
            .get(user)
            .and_then(|(b, a)| self.banks[b].current().ob_get_balance(OPERATOR, a).ok())
            .map(Money::minor_units);
        (cbdc, bank)
    }

    /// Fills in the owner's accounts for a program.
    pub fn program_spec(&self, p: &crate::scenario::ProgramParams) -> ProgramSpec {
        ProgramSpec {
            owner: p.owner.clone(),
            trigger: p.trigger.clone(),
            condition: p.condition,
            action: p.action.clone(),
            accounts: ProgramAccounts {
                cbdc: self.cbdc_of(&p.owner),
                bank: self.deposit_of(&p.owner).map(|(b, a)| cbdc_core::bank::BankAccountRef {
                    bank_id: b.clone(),
                    account_id: a.clone(),
                }),
            },
        }
    }

    /// Moves the clock to `tick`, one tick at a time: each tick pumps the FPS
    /// rail, then evaluates programs.
    pub fn advance_to(&self, tick: Tick) -> Vec<ProgramFiring> {
        let mut firings = Vec::new();
        let mut now = self.clock.now();
        while now < tick {
            now += 1;
            self.clock.advance_to(now);
            self.fps.pump(now, &self.fps_view);
            match cbdc_core::ecosystem::EcosystemApi::evaluate_programs(&self.eco_ops(), now) {
                Ok(f) => firings.extend(f),
                Err(e) => firings.push(ProgramFiring {
                    program_id: "-".into(),
                    tick: now,
                    instruction: None,
                    status: None,
                    error: Some(e.to_string()),
                }),
            }
        }
        firings
    }

    /// Lets the FPS rail finish and any interrupted plan complete, moving
    /// the clock only as far as the rail needs. Programs are not evaluated.
    pub fn quiesce(&self) {
        self.eco.current().resume_pending();
        for _ in 0..256 {
            let pending = self.fps.in_transit() > 0
                || self.banks.values().any(|b| {
                    b.current()
                        .export()
                        .outbound
                        .values()
                        .any(|m| m.status == cbdc_core::bank::FpsStatus::Sent)
                });
            if !pending {
                break;
            }
            let now = self.clock.tick();
            self.fps.pump(now, &self.fps_view);
        }
    }

    /// Simulates a crash of `service` and recovers it from its journal.
    pub fn restart(&self, service: &str) -> Result<(), String> {
        match service {
            CORE => self.core.restart().map(drop),
            ECO => self.eco.restart().map(drop),
            PIP => self.pip.restart().map(drop),
            FPS => {
                self.fps.reset();
                Ok(())
            }
            other => {
                let node = self
                    .banks
                    .iter()
                    .find(|(id, _)| bank_service(id) == other)
                    .map(|(_, n)| n)
                    .ok_or_else(|| format!("no service {other}"))?;
                node.restart().map(drop)
            }
        }
    }

    pub fn restarts(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        out.insert(CORE.to_string(), self.core.restarts());
        out.insert(ECO.to_string(), self.eco.restarts());
        out.insert(PIP.to_string(), self.pip.restarts());
        for (id, n) in &self.banks {
            out.insert(bank_service(id), n.restarts());
        }
        out
    }

    pub fn storage(&self, service: &str) -> Option<&Arc<dyn Storage>> {
        self.storages.get(service)
    }

    pub fn export(&self) -> StateExport {
        let mut journals = BTreeMap::new();
        for (name, s) in &self.storages {
            journals.insert(name.clone(), s.load().unwrap_or_default());
        }
        StateExport {
            core: self.core.current().export(),
            banks: self
                .banks
                .iter()
                .map(|(id, n)| (id.clone(), n.current().export()))
                .collect(),
            ecosystems: [(ECO.to_string(), self.eco.current().export())].into(),
            pips: [(PIP.to_string(), self.pip.current().export())].into(),
            journals,
        }
    }

    /// Writes every journal and the canonical state export to `dir`.
    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        self.export().save(dir)
    }
}
