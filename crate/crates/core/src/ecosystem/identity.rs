//! Identity-provider stub: KYC verdicts come from a fixture table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::UserId;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KycRequest {
    pub user_id: UserId,
    pub legal_name: String,
    #[serde(default)]
    pub documents: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KycVerdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityFixture {
    /// user_id → true (pass) / false (fail). Unlisted users fail.
    #[serde(default)]
    pub verdicts: BTreeMap<UserId, bool>,
}

impl IdentityFixture {
    pub fn verify(&self, req: &KycRequest) -> KycVerdict {
        match self.verdicts.get(&req.user_id) {
            Some(true) => KycVerdict::Pass,
            _ => KycVerdict::Fail,
        }
    }
}
