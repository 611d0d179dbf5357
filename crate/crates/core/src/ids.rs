//! Opaque identifier newtypes.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

id_type!(
    /// A user's identity as known to their PIP and banks. Never reaches the core ledger.
    UserId
);
id_type!(BankId);
id_type!(PipId);
id_type!(
    /// An account at either the core ledger or a bank; the issuing service defines the format.
    AccountId
);
id_type!(
    /// 64 lowercase hex characters derived by a PIP from a keyed digest.
    PseudonymId
);
id_type!(
    /// Caller-supplied idempotency key for one logical payment.
    InstructionId
);
id_type!(TransactionId);
id_type!(ProgramId);
id_type!(HoldId);
id_type!(MsgId);

impl PseudonymId {
    pub fn is_well_formed(&self) -> bool {
        self.0.len() == 64 && self.0.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
    }
}

/// A logical clock reading. The harness advances it; nothing reads wall time.
pub type Tick = u64;

/// Ticks in one policy day.
pub const TICKS_PER_DAY: Tick = 86_400;
