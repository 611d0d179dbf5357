//! Fault injection hooks.
//!
//! Services consult a shared [`FaultInjector`] at named points. A crash fault
//! makes the service stop answering right after the point is reached; the
//! harness then rebuilds it from its journal.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

/// Published enumeration of injection points.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "at", rename_all = "snake_case")]
pub enum InjectionPoint {
    /// Coordinator: plan written, no step called yet.
    PlanJournaled,
    /// Coordinator: step call returned, outcome not yet journaled.
    StepCalled { step: usize },
    /// Coordinator: step outcome journaled.
    StepJournaled { step: usize },
    /// Coordinator: commit/compensate decision journaled.
    DecisionJournaled,
    CompensationCalled { step: usize },
    CompensationJournaled { step: usize },
    /// Participant: an event of this kind was journaled, response not yet sent.
    AfterEvent { kind: String },
    /// FPS network transit (duplicate delivery, delay).
    FpsTransit,
}

impl InjectionPoint {
    /// Step boundaries on the forward (no failure) path of a plan with `steps` steps.
    pub fn forward_boundaries(steps: usize) -> Vec<InjectionPoint> {
        let mut points = vec![InjectionPoint::PlanJournaled];
        for step in 0..steps {
            points.push(InjectionPoint::StepCalled { step });
            points.push(InjectionPoint::StepJournaled { step });
        }
        points.push(InjectionPoint::DecisionJournaled);
        points
    }

    /// Boundaries on the compensation path when prepare step `failing` fails.
    pub fn compensation_boundaries(failing: usize) -> Vec<InjectionPoint> {
        let mut points = vec![InjectionPoint::PlanJournaled];
        for step in 0..=failing {
            points.push(InjectionPoint::StepCalled { step });
            points.push(InjectionPoint::StepJournaled { step });
        }
        points.push(InjectionPoint::DecisionJournaled);
        for step in (0..failing).rev() {
            points.push(InjectionPoint::CompensationCalled { step });
            points.push(InjectionPoint::CompensationJournaled { step });
        }
        points
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FaultKind {
    Crash,
    DuplicateDelivery,
    Delay { ticks: u64 },
}

fn one() -> u32 {
    1
}

/// One entry of a fault plan file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    /// Service name: `core`, `bank:<id>`, the ecosystem name (`eco:<id>`),
    /// `pip:<id>` or `fps`.
    pub target: String,
    pub point: InjectionPoint,
    pub kind: FaultKind,
    /// How many times the fault fires before disarming.
    #[serde(default = "one")]
    pub times: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiredFault {
    pub target: String,
    pub point: InjectionPoint,
    pub kind: FaultKind,
}

#[derive(Debug, Default)]
struct Armed {
    specs: Vec<FaultSpec>,
    fired: Vec<FiredFault>,
}

/// Shared, cloneable set of armed faults.
#[derive(Debug, Clone, Default)]
pub struct FaultInjector(Arc<Mutex<Armed>>);

impl FaultInjector {
    pub fn new(specs: Vec<FaultSpec>) -> Self {
        Self(Arc::new(Mutex::new(Armed {
            specs,
            fired: Vec::new(),
        })))
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn arm(&self, spec: FaultSpec) {
        self.0.lock().unwrap().specs.push(spec);
    }

    fn take(&self, target: &str, point: &InjectionPoint, want: impl Fn(&FaultKind) -> bool) -> Option<FaultKind> {
        let mut armed = self.0.lock().unwrap();
        let idx = armed
            .specs
            .iter()
            .position(|s| s.times > 0 && s.target == target && &s.point == point && want(&s.kind))?;
        let spec = &mut armed.specs[idx];
        spec.times -= 1;
        let kind = spec.kind.clone();
        armed.fired.push(FiredFault {
            target: target.to_string(),
            point: point.clone(),
            kind: kind.clone(),
        });
        Some(kind)
    }

    /// True if a crash is armed for `target` at `point`; consumes one firing.
    pub fn crash_here(&self, target: &str, point: &InjectionPoint) -> bool {
        self.take(target, point, |k| *k == FaultKind::Crash).is_some()
    }

    pub fn duplicate_delivery(&self) -> bool {
        self.take("fps", &InjectionPoint::FpsTransit, |k| *k == FaultKind::DuplicateDelivery)
            .is_some()
    }

    /// Extra transit delay for the next FPS message, if armed.
    pub fn delay(&self) -> u64 {
        match self.take("fps", &InjectionPoint::FpsTransit, |k| matches!(k, FaultKind::Delay { .. })) {
            Some(FaultKind::Delay { ticks }) => ticks,
            _ => 0,
        }
    }

    pub fn fired(&self) -> Vec<FiredFault> {
        self.0.lock().unwrap().fired.clone()
    }

    pub fn pending(&self) -> Vec<FaultSpec> {
        self.0
            .lock()
            .unwrap()
            .specs
            .iter()
            .filter(|s| s.times > 0)
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crash_fires_once_per_arming() {
        let f = FaultInjector::new(vec![FaultSpec {
            target: "ecosystem".into(),
            point: InjectionPoint::StepCalled { step: 1 },
            kind: FaultKind::Crash,
            times: 1,
        }]);
        assert!(!f.crash_here("ecosystem", &InjectionPoint::StepCalled { step: 0 }));
        assert!(!f.crash_here("core", &InjectionPoint::StepCalled { step: 1 }));
        assert!(f.crash_here("ecosystem", &InjectionPoint::StepCalled { step: 1 }));
        assert!(!f.crash_here("ecosystem", &InjectionPoint::StepCalled { step: 1 }));
        assert_eq!(f.fired().len(), 1);
    }

    #[test]
    fn fault_spec_json_shape() {
        let spec: FaultSpec = serde_json::from_str(
            r#"{"target":"fps","point":{"at":"fps_transit"},"kind":{"type":"delay","ticks":3}}"#,
        )
        .unwrap();
        assert_eq!(spec.times, 1);
        let f = FaultInjector::new(vec![spec]);
        assert_eq!(f.delay(), 3);
        assert_eq!(f.delay(), 0);
    }

    #[test]
    fn boundary_enumeration_sizes() {
        assert_eq!(InjectionPoint::forward_boundaries(3).len(), 8);
        assert_eq!(InjectionPoint::compensation_boundaries(1).len(), 8);
    }
}
