//! Acceptance checks, one line each. Run with `cargo test --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use aho_corasick::AhoCorasick;
use cbdc_core::ecosystem::{EcosystemApi, InstructionState};
use cbdc_core::fault::{FaultKind, FaultSpec, InjectionPoint};
use cbdc_core::fault::FaultInjector;
use cbdc_core::journal::{read_events, MemoryStorage};
use cbdc_core::ledger::{CoreConfig, CoreError, CoreLedger, FundingRequest, TransferRequest};
use cbdc_core::pip::PipApi;
use cbdc_core::{AccountId, BankId, InstructionId, LogicalClock, Money, PseudonymId, Role};
use cbdc_sim::export::canonical;
use cbdc_sim::scenario::{Action, Step};
use cbdc_sim::smoke::{run_smoke, SmokeConfig};
use cbdc_sim::system::{CORE, ECO, PIP};
use cbdc_sim::workload::{generate, WorkloadConfig};
use cbdc_sim::{run_scenario, Run, RunOptions, Scenario, StateExport, Topology};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORKLOAD_SEED: u64 = 20_240_601;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn all_invariants_hold(run: &Run) -> Result<(), String> {
    run.report.verdict().map_err(|e| e.to_string())
}

// 1 ------------------------------------------------------------------------

struct Workload {
    run: Run,
    scenario: Scenario,
}

fn conservation_suite() -> (Check, Option<Workload>) {
    let scenario = generate(&WorkloadConfig::new(WORKLOAD_SEED, 10_000));
    let started = Instant::now();
    let run = match run_scenario(&scenario, RunOptions::default()) {
        Ok(run) => run,
        Err(e) => return (Err(e.to_string()), None),
    };
    let elapsed = started.elapsed();
    let check = (|| {
        // Nothing enters after boot, so the topology alone fixes both totals.
        let cash: i64 = scenario.topology.users.iter().map(|u| u.deposit).sum();
        let reserves: i64 = scenario.topology.banks.iter().map(|b| b.reserves).sum();
        let extra = scenario
            .steps
            .iter()
            .filter(|s| matches!(s.action, Action::InjectCash { .. } | Action::InjectReserves { .. }))
            .count();
        ensure(extra == 0, || format!("{extra} injections after boot"))?;
        let t = &run.report.totals;
        ensure(t.deposits + t.cbdc == cash, || {
            format!("deposits {} + cbdc {} != initial {cash}", t.deposits, t.cbdc)
        })?;
        ensure(t.reserves + t.cbdc_outstanding == reserves, || {
            format!("reserves {} + outstanding {} != initial {reserves}", t.reserves, t.cbdc_outstanding)
        })?;
        all_invariants_hold(&run)?;

        let mut routes: BTreeMap<String, usize> = BTreeMap::new();
        for i in run.report.instructions.values().filter(|i| i.state == "committed") {
            *routes.entry(i.route.clone().unwrap_or_default()).or_default() += 1;
        }
        ensure(routes.len() == 4, || format!("routes exercised: {routes:?}"))?;
        let export = run.system.export();
        let fps: usize = export.banks.values().map(|b| b.inbound.len()).sum();
        ensure(fps > 0, || "no interbank payment crossed the FPS".into())?;
        let opens = scenario.steps.iter().filter(|s| s.action.name() == "open_cbdc").count();
        ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
        Ok(format!(
            "{} ops ({} opens, {} committed, {} FPS), totals exact, {:.1}s",
            scenario.steps.len(),
            opens,
            routes.values().sum::<usize>(),
            fps,
            elapsed.as_secs_f64()
        ))
    })();
    (check, Some(Workload { run, scenario }))
}

// 2 ------------------------------------------------------------------------

/// User3 (Bank B only) pays User2 (CBDC only): a bank hold, a CBDC issue
/// against Bank B's reserves, then the hold is taken.
fn canonical_cross_rail(reserves: i64) -> Scenario {
    let mut s = Scenario::new("canonical-cross-rail", 1, Topology::reference());
    let step = |tick, action| Step {
        tick,
        action,
        expect: Default::default(),
    };
    s.steps = vec![
        step(1, Action::InjectReserves { bank: "BANK_B".into(), pence: reserves }),
        step(1, Action::InjectCash { user: "User3".into(), pence: 3_000 }),
        step(
            2,
            Action::Pay {
                from: "User3".into(),
                to: "User2".into(),
                pence: 1_200,
                rail: Some("cbdc".into()),
                prefer: Some("bank".into()),
                token: None,
            },
        ),
    ];
    s
}

fn crash(target: &str, point: InjectionPoint) -> FaultSpec {
    FaultSpec {
        target: target.into(),
        point,
        kind: FaultKind::Crash,
        times: 1,
    }
}

fn after(target: &str, kind: &str) -> FaultSpec {
    crash(target, InjectionPoint::AfterEvent { kind: kind.into() })
}

fn atomicity_fault_sweep() -> Check {
    // Enough reserves: the plan commits. Too few: issuing CBDC fails and the
    // hold is released.
    let commit = canonical_cross_rail(100_000);
    let compensate = canonical_cross_rail(500);
    let mut cases: Vec<(&Scenario, FaultSpec, bool)> = Vec::new();
    for p in InjectionPoint::forward_boundaries(3) {
        cases.push((&commit, crash(ECO, p), true));
    }
    for p in InjectionPoint::compensation_boundaries(1) {
        cases.push((&compensate, crash(ECO, p), false));
    }
    for kind in ["hold_placed", "hold_committed"] {
        cases.push((&commit, after("bank:BANK_B", kind), true));
    }
    cases.push((&commit, after(CORE, "transaction_posted"), true));
    cases.push((&compensate, after("bank:BANK_B", "hold_aborted"), false));

    let mut failures = Vec::new();
    for (scenario, fault, commits) in &cases {
        let label = format!("{} {:?}", fault.target, fault.point);
        let run = match run_scenario(scenario, RunOptions {
            faults: vec![fault.clone()],
            ..Default::default()
        }) {
            Ok(run) => run,
            Err(e) => {
                failures.push(format!("{label}: {e}"));
                continue;
            }
        };
        let r = &run.report;
        let outcome = (|| {
            ensure(r.faults_fired.len() == 1, || "fault never fired".into())?;
            let states: Vec<&str> = r.instructions.values().map(|i| i.state.as_str()).collect();
            let want = if *commits { "committed" } else { "compensated" };
            ensure(states == [want], || format!("ended {states:?}, expected {want}"))?;
            // All or nothing: the whole 12.00 moved, or none of it.
            let (payer, payee) = if *commits { (1_800, 1_200) } else { (3_000, 0) };
            let (u3, u2) = (r.balance("User3").bank, r.balance("User2").cbdc);
            ensure(u3 == Some(payer) && u2 == Some(payee), || format!("User3 {u3:?}, User2 {u2:?}"))?;
            all_invariants_hold(&run)
        })();
        if let Err(e) = outcome {
            failures.push(format!("{label}: {e}"));
        }
    }
    if failures.is_empty() {
        Ok(format!("{}/{} injection points settle all-or-nothing", cases.len(), cases.len()))
    } else {
        Err(format!("{}/{} failed: {}", failures.len(), cases.len(), failures.join("; ")))
    }
}

// 3 ------------------------------------------------------------------------

fn pseudonymity_scan(w: &Workload) -> Check {
    // Identity material as the harness handed it to the PIP.
    let mut identity: BTreeSet<String> = BTreeSet::new();
    for u in &w.scenario.topology.users {
        identity.insert(u.id.to_string());
        identity.insert(u.legal_name());
        identity.insert(format!("PASSPORT-{}", u.id));
    }
    let identity: Vec<String> = identity.into_iter().collect();
    let export = w.run.system.export();
    let pseudonyms: Vec<String> = export.core.pseudonyms.keys().map(|p| p.to_string()).collect();
    ensure(!pseudonyms.is_empty(), || "no pseudonyms issued".into())?;

    let ident = AhoCorasick::new(&identity).map_err(|e| e.to_string())?;
    let pseudo = AhoCorasick::new(&pseudonyms).map_err(|e| e.to_string())?;
    let core_journal = &export.journals[CORE];
    let core_state = canonical(&export.core);
    for (name, text) in [("core journal", core_journal.as_str()), ("core state", core_state.as_str())] {
        if let Some(m) = ident.find(text) {
            return Err(format!("{name} holds {:?}", identity[m.pattern().as_usize()]));
        }
    }

    let mut artifacts: Vec<(String, String)> =
        export.journals.iter().map(|(s, j)| (format!("{s} journal"), j.clone())).collect();
    artifacts.push(("core state".into(), core_state));
    for (id, b) in &export.banks {
        artifacts.push((format!("bank:{id} state"), canonical(b)));
    }
    for (n, e) in &export.ecosystems {
        artifacts.push((format!("{n} state"), canonical(e)));
    }
    for (n, p) in &export.pips {
        artifacts.push((format!("{n} state"), canonical(p)));
    }
    let joining: Vec<&str> = artifacts
        .iter()
        .filter(|(_, text)| ident.is_match(text.as_str()) && pseudo.is_match(text.as_str()))
        .map(|(name, _)| name.as_str())
        .collect();
    let pip_journal = format!("{PIP} journal");
    ensure(joining.contains(&pip_journal.as_str()), || "the PIP journal joins nothing".into())?;
    ensure(joining.iter().all(|n| n.starts_with("pip:")), || format!("joined outside the PIP: {joining:?}"))?;
    Ok(format!(
        "{} identity strings, {} pseudonyms: none in core journal or state; joined only in {:?}",
        identity.len(),
        pseudonyms.len(),
        joining
    ))
}

// 4 ------------------------------------------------------------------------

fn money_snapshot(x: &StateExport) -> String {
    let core: BTreeMap<_, _> = x.core.accounts.iter().map(|(id, a)| (id, (a.balance, a.earmarked))).collect();
    let reserves: BTreeMap<_, _> = x.core.reserves.iter().map(|(id, r)| (id, r.balance)).collect();
    let banks: BTreeMap<_, BTreeMap<_, _>> = x
        .banks
        .iter()
        .map(|(id, b)| (id, b.accounts.iter().map(|(a, d)| (a, (d.balance, d.earmarked))).collect()))
        .collect();
    canonical(&(core, reserves, banks, x.core.transactions.len()))
}

fn idempotent_replay(w: &Workload) -> Check {
    let sys = &w.run.system;
    let before = sys.export();
    let committed: Vec<InstructionId> = before.ecosystems[ECO]
        .instructions
        .iter()
        .filter(|(_, r)| r.state == InstructionState::Committed)
        .map(|(id, _)| id.clone())
        .collect();
    let mut order = committed.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(4));

    let eco = sys.eco_as(PIP);
    for id in &order {
        let wire = &before.ecosystems[ECO].instructions[id].wire;
        let st = eco.submit_payment(wire).map_err(|e| format!("{id}: {e}"))?;
        ensure(st.state == InstructionState::Committed && st.replayed, || format!("{id}: {st:?}"))?;
    }
    // The same payments again from the client side, by retry token.
    let wanted: BTreeSet<&InstructionId> = committed.iter().collect();
    let mut by_token = Vec::new();
    for (user, tokens) in &before.pips[PIP].tokens {
        for (token, (id, req)) in tokens {
            if wanted.contains(id) {
                by_token.push((user.clone(), token.clone(), id.clone(), req.clone()));
            }
        }
    }
    by_token.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let pip = sys.pip_app();
    for (user, token, id, req) in &by_token {
        let st = pip.submit_payment(user, req).map_err(|e| format!("{token}: {e}"))?;
        ensure(&st.instruction_id == id, || format!("{token} became {}", st.instruction_id))?;
    }
    sys.quiesce();
    let after = sys.export();
    ensure(money_snapshot(&before) == money_snapshot(&after), || "balances moved".into())?;
    for service in before.journals.keys().filter(|s| !s.starts_with("eco:") && !s.starts_with("pip:")) {
        ensure(before.journals[service] == after.journals[service], || format!("{service} journal grew"))?;
    }
    Ok(format!(
        "{} committed ids resubmitted to the ecosystem and {} by client token, shuffled; no balance changed",
        order.len(),
        by_token.len()
    ))
}

// 5 ------------------------------------------------------------------------

fn twice(scenario: &Scenario, faults: Vec<FaultSpec>) -> Result<(), String> {
    let runs: Vec<Run> = (0..2)
        .map(|_| {
            run_scenario(scenario, RunOptions {
                faults: faults.clone(),
                ..Default::default()
            })
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure(runs[0].report.to_json() == runs[1].report.to_json(), || format!("{}: reports differ", scenario.name))?;
    ensure(runs[0].system.export().journals == runs[1].system.export().journals, || {
        format!("{}: journals differ", scenario.name)
    })
}

fn determinism() -> Check {
    let workload = generate(&WorkloadConfig::new(WORKLOAD_SEED + 1, 2_000));
    twice(&workload, Vec::new())?;
    let faults = vec![
        crash(ECO, InjectionPoint::StepCalled { step: 1 }),
        after("bank:BANK_B", "hold_placed"),
    ];
    twice(&canonical_cross_rail(100_000), faults)?;
    let sweep = Scenario::load(&scenarios_dir().join("sweep-30.jsonl")).map_err(|e| e.to_string())?;
    twice(&sweep, Vec::new())?;
    Ok("workload, faulted cross-rail and sweep runs: byte-identical reports and journals".into())
}

// 6 ------------------------------------------------------------------------

/// Event kinds the ecosystem journaled for one instruction, in order.
fn trail(eco_journal: &str, id: &str) -> Result<Vec<String>, String> {
    let events = read_events(eco_journal).map_err(|e| e.to_string())?;
    let mut plan: Option<String> = None;
    let mut kinds = Vec::new();
    for ev in events {
        let p = &ev.payload;
        let mine = p["instruction_id"].as_str() == Some(id)
            || p["instruction"]["instruction_id"].as_str() == Some(id)
            || p["plan"]["instruction_id"].as_str() == Some(id)
            || (plan.is_some() && p["plan_id"].as_str() == plan.as_deref());
        if !mine {
            continue;
        }
        if ev.kind == "plan_created" {
            plan = p["plan"]["plan_id"].as_str().map(str::to_string);
        }
        kinds.push(ev.kind);
    }
    Ok(kinds)
}

fn programmability() -> Check {
    let scenario = Scenario::load(&scenarios_dir().join("sweep-30.jsonl")).map_err(|e| e.to_string())?;
    let run = run_scenario(&scenario, RunOptions::default()).map_err(|e| e.to_string())?;
    all_invariants_hold(&run)?;

    // Worked by hand from the scenario: balance seen at each tick, any excess
    // over 50.00 swept; bank-rail payments over 60.00 are refused.
    //   t4  8000 -> sweep 30.00     t6  6200 -> 12.00    t11 10000 -> 50.00
    //   t16 5000 -> nothing         t21 5001 -> 0.01
    //   t25..t28 12000 -> 70.00 refused each tick
    //   t28 manual defund 30.00     t29 9000 -> 40.00    t30 5000 -> nothing
    let oracle: Vec<(u64, &str, &str)> = vec![
        (4, "30.00", "committed"),
        (6, "12.00", "committed"),
        (11, "50.00", "committed"),
        (21, "0.01", "committed"),
        (25, "70.00", "rejected"),
        (26, "70.00", "rejected"),
        (27, "70.00", "rejected"),
        (28, "70.00", "rejected"),
        (29, "40.00", "committed"),
    ];
    let stream: Vec<(u64, &str, &str)> = run
        .report
        .firings
        .iter()
        .map(|f| (f.tick, f.amount.as_deref().unwrap_or(""), f.state.as_deref().unwrap_or("")))
        .collect();
    ensure(stream == oracle, || format!("stream {stream:?}"))?;
    ensure(run.report.final_tick == 30, || format!("ended at tick {}", run.report.final_tick))?;

    // Generated and manual instructions go through the same admission path.
    let export = run.system.export();
    let journal = &export.journals[ECO];
    let fired = |tick: u64| run.report.firings.iter().find(|f| f.tick == tick).and_then(|f| f.instruction_id.clone());
    let manual_for = |state: &str| {
        run.report
            .instructions
            .iter()
            .filter(|(id, i)| !id.as_str().starts_with("prg-") && i.state == state && i.route.as_deref() == Some("cbdc->bank"))
            .map(|(id, _)| id.to_string())
            .last()
    };
    let manual_rejected = export.ecosystems[ECO]
        .instructions
        .iter()
        .find(|(id, r)| !id.as_str().starts_with("prg-") && r.state == InstructionState::Rejected)
        .map(|(id, _)| id.to_string());
    let pairs = [
        (fired(29), manual_for("committed"), "committed"),
        (fired(27), manual_rejected, "rejected"),
    ];
    for (generated, manual, what) in pairs {
        let (g, m) = (generated.ok_or("missing firing")?, manual.ok_or("missing manual payment")?);
        let gt = trail(journal, &g)?;
        let mt = trail(journal, &m)?;
        ensure(gt.first().map(String::as_str) == Some("program_fired"), || format!("{g}: {gt:?}"))?;
        ensure(gt[1..] == mt[..], || format!("{what}: generated {gt:?} vs manual {mt:?}"))?;
        let rg = &export.ecosystems[ECO].instructions[&InstructionId::from(g.as_str())].rejection;
        let rm = &export.ecosystems[ECO].instructions[&InstructionId::from(m.as_str())].rejection;
        ensure(rg.as_ref().map(|r| &r.code) == rm.as_ref().map(|r| &r.code), || format!("{rg:?} vs {rm:?}"))?;
    }
    Ok(format!("{} firings over 30 ticks match the oracle; same journal trail and gate as manual payments", stream.len()))
}

// 7 ------------------------------------------------------------------------

fn ledger_oracle() -> Check {
    let (pip, eco, ops) = ("pip:PIP1", "eco:ECO1", "harness");
    let cfg = CoreConfig::default()
        .with_caller(pip, Role::Pip)
        .with_caller(eco, Role::Ecosystem)
        .with_caller(ops, Role::Operator);
    let l = CoreLedger::recover(cfg, MemoryStorage::new(), LogicalClock::new(), FaultInjector::none())
        .map_err(|e| e.to_string())?;
    let bank = BankId::from("BANK_A");
    l.inject_reserves(ops, &bank, Money::pence(100_000)).map_err(|e| e.to_string())?;
    let mut oracle: BTreeMap<AccountId, i64> = BTreeMap::new();
    let mut accounts = Vec::new();
    for n in 0..10u64 {
        let a = l
            .open_account(pip, &PseudonymId::new(format!("{:064x}", 0xacce_0000 + n)))
            .map_err(|e| e.to_string())?;
        let req = FundingRequest {
            instruction_id: format!("seed-{n}").into(),
            bank_id: bank.clone(),
            account_id: a.clone(),
            amount: Money::pence(10_000),
        };
        l.fund(eco, &req).map_err(|e| e.to_string())?;
        oracle.insert(a.clone(), 10_000);
        accounts.push(a);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut moved, mut refused) = (0, 0);
    for i in 0..1_000 {
        let from = accounts[rng.random_range(0..10)].clone();
        let to = accounts[rng.random_range(0..10)].clone();
        let pence = rng.random_range(1..=6_000);
        let req = TransferRequest {
            instruction_id: format!("x{i}").into(),
            from: from.clone(),
            to: to.clone(),
            amount: Money::pence(pence),
        };
        let got = l.transfer(eco, &req);
        if from == to {
            ensure(got.is_err(), || format!("transfer {i} to self accepted"))?;
            refused += 1;
        } else if oracle[&from] >= pence {
            got.map_err(|e| format!("transfer {i}: {e}"))?;
            *oracle.get_mut(&from).unwrap() -= pence;
            *oracle.get_mut(&to).unwrap() += pence;
            moved += 1;
        } else {
            ensure(matches!(got, Err(CoreError::InsufficientFunds(_))), || format!("transfer {i}: {got:?}"))?;
            refused += 1;
        }
    }
    for (a, want) in &oracle {
        let got = l.get_balance(a).map_err(|e| e.to_string())?.minor_units();
        ensure(got == *want, || format!("{a}: ledger {got}, oracle {want}"))?;
    }
    let outstanding = l.export().cbdc_outstanding.minor_units();
    ensure(outstanding == 100_000, || format!("outstanding {outstanding}"))?;
    Ok(format!("1000 transfers ({moved} moved, {refused} refused) equal the map oracle"))
}

// 8 ------------------------------------------------------------------------

const CHARACTERISTICS: [&str; 4] = [
    "reliable and resilient",
    "fast and efficient",
    "innovative and open to competition",
    "interoperab",
];

fn source_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).into_iter().flatten().flatten() {
        let path = entry.path();
        if path.is_dir() && path.file_name().is_some_and(|n| n != "target") {
            source_files(&path, out);
        } else if path.extension().is_some_and(|e| e == "rs") {
            out.push(path);
        }
    }
}

fn traceability() -> Check {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let readme = std::fs::read_to_string(root.join("README.md")).map_err(|e| format!("README.md: {e}"))?;
    let mut files = Vec::new();
    source_files(&root.join("crates"), &mut files);
    let sources: String = files.iter().filter_map(|f| std::fs::read_to_string(f).ok()).collect();

    let mut mapped = 0;
    for c in CHARACTERISTICS {
        let row = readme
            .lines()
            .find(|l| l.starts_with('|') && l.to_lowercase().contains(c))
            .ok_or_else(|| format!("no traceability row for {c:?}"))?;
        let names: Vec<&str> = row.split('`').skip(1).step_by(2).collect();
        ensure(!names.is_empty(), || format!("{c:?} names no test"))?;
        for n in &names {
            let test_name = n.rsplit("::").next().unwrap_or(n);
            ensure(sources.contains(&format!("fn {test_name}(")), || format!("{c:?}: no test fn {n}"))?;
        }
        mapped += names.len();
    }

    let cfg = SmokeConfig::default();
    let report = run_smoke(&cfg).map_err(|e| e.to_string())?;
    ensure(report.pass(), || format!("smoke failed: {report:?}"))?;
    ensure(report.elapsed() < Duration::from_secs(30), || format!("smoke took {:?}", report.elapsed()))?;
    Ok(format!(
        "4 characteristics -> {mapped} tests; smoke {} payments over HTTP in {:.1}s",
        report.payments,
        report.elapsed().as_secs_f64()
    ))
}

// --------------------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let mut results: Vec<(u8, &str, Check)> = Vec::new();
    let (c1, workload) = catch_unwind(conservation_suite).unwrap_or_else(|_| (Err("panicked".into()), None));
    results.push((1, "conservation", c1));
    results.push((2, "atomicity fault sweep", guarded(atomicity_fault_sweep)));
    let need = || Err::<String, String>("needs the criterion 1 run".into());
    results.push((3, "pseudonymity", workload.as_ref().map_or_else(need, |w| guarded(|| pseudonymity_scan(w)))));
    results.push((4, "idempotency", workload.as_ref().map_or_else(need, |w| guarded(|| idempotent_replay(w)))));
    results.push((5, "determinism", guarded(determinism)));
    results.push((6, "programmability", guarded(programmability)));
    results.push((7, "ledger oracle", guarded(ledger_oracle)));
    results.push((8, "traceability", guarded(traceability)));

    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("PASS {n} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n} {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
