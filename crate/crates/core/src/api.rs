//! Transport-neutral pieces shared by every service API: the JSON error body,
//! caller roles, and the mapping between error enums and stable codes.

use serde::{Deserialize, Serialize};

/// JSON error body: `{"code": "...", "message": "..."}` plus optional detail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    /// Identifier the error refers to (account, transaction, rule...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    /// Current state for `WRONG_STATE` errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
}

impl ErrorBody {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
            subject: None,
            state: None,
        }
    }

    pub fn subject(&self) -> String {
        self.subject.clone().unwrap_or_default()
    }
}

/// Error enums that cross a service boundary.
pub trait WireError: std::error::Error + Sized {
    fn code(&self) -> &'static str;
    fn to_body(&self) -> ErrorBody;
    fn from_body(body: ErrorBody) -> Self;
    /// Transport failure or a crashed peer. Always safe to retry.
    fn unavailable(message: impl Into<String>) -> Self;

    fn is_unavailable(&self) -> bool {
        self.code() == "UNAVAILABLE"
    }

    /// HTTP status used when serving this error.
    fn http_status(&self) -> u16 {
        match self.code() {
            "UNAUTHORIZED" => 401,
            "FORBIDDEN" => 403,
            c if c.starts_with("UNKNOWN_") || c == "USER_NOT_ONBOARDED" => 404,
            "UNAVAILABLE" | "STORAGE_FAILURE" => 503,
            "BAD_REQUEST" | "MALFORMED_PSEUDONYM" | "NON_POSITIVE_AMOUNT" | "OVERFLOW" => 400,
            _ => 409,
        }
    }
}

/// What an authenticated caller may do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Pip,
    Ecosystem,
    /// Harness/operator: reserve and cash injection, account provisioning.
    Operator,
    /// The interbank rail delivering and acknowledging FPS messages.
    Network,
}

/// Calls `f` until it returns something other than an unavailable error, at
/// most `attempts` times.
pub fn with_retries<T, E: WireError>(attempts: usize, mut f: impl FnMut() -> Result<T, E>) -> Result<T, E> {
    let mut last = None;
    for _ in 0..attempts.max(1) {
        match f() {
            Err(e) if e.is_unavailable() => last = Some(e),
            other => return other,
        }
    }
    Err(last.expect("at least one attempt"))
}

/// One page of a listing; pages are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub page: usize,
    pub size: usize,
}

impl Page {
    pub const DEFAULT_SIZE: usize = 50;

    pub fn new(page: usize, size: usize) -> Self {
        Self { page, size }
    }

    pub fn first(size: usize) -> Self {
        Self { page: 1, size }
    }

    pub fn slice<'a, T>(&self, items: &'a [T]) -> &'a [T] {
        if self.page == 0 || self.size == 0 {
            return &[];
        }
        let start = (self.page - 1).saturating_mul(self.size).min(items.len());
        let end = start.saturating_add(self.size).min(items.len());
        &items[start..end]
    }
}
