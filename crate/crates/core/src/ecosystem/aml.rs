//! AML screening stub: a payee denylist and a large-value threshold.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::standards::{PayeeTarget, PaymentInstruction};
use crate::money::Money;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmlConfig {
    /// Payee account ids or directory user ids.
    #[serde(default)]
    pub denylist: BTreeSet<String>,
    /// Amounts at or above this are flagged.
    pub threshold: Money,
}

impl Default for AmlConfig {
    fn default() -> Self {
        Self {
            denylist: BTreeSet::new(),
            threshold: Money::pence(i64::MAX),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AmlReason {
    Denylist,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum AmlVerdict {
    Clear,
    Flagged(AmlReason),
}

pub fn screen(cfg: &AmlConfig, instr: &PaymentInstruction) -> AmlVerdict {
    let payee = match &instr.payee.target {
        PayeeTarget::Account { account_id, .. } => account_id.as_str(),
        PayeeTarget::User { user } => user.as_str(),
    };
    if cfg.denylist.contains(payee) {
        AmlVerdict::Flagged(AmlReason::Denylist)
    } else if instr.amount >= cfg.threshold {
        AmlVerdict::Flagged(AmlReason::Threshold)
    } else {
        AmlVerdict::Clear
    }
}
