//! The common data standard for payment instructions.
//!
//! Callers submit a loosely typed [`WireInstruction`]; [`validate`] either
//! normalizes it into a [`PaymentInstruction`] or returns every violation
//! found, each with a stable code and the offending field.

use serde::{Deserialize, Serialize};

use crate::ids::{AccountId, BankId, InstructionId, UserId};
use crate::money::{Money, MoneyError, CURRENCY};

pub const MAX_MEMO_CHARS: usize = 140;
pub const MAX_ID_CHARS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rail {
    Cbdc,
    Bank,
}

impl Rail {
    pub fn as_str(self) -> &'static str {
        match self {
            Rail::Cbdc => "cbdc",
            Rail::Bank => "bank",
        }
    }

    pub fn other(self) -> Rail {
        match self {
            Rail::Cbdc => Rail::Bank,
            Rail::Bank => Rail::Cbdc,
        }
    }

    fn parse(s: &str) -> Option<Rail> {
        match s {
            "cbdc" => Some(Rail::Cbdc),
            "bank" => Some(Rail::Bank),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RailPreference {
    Cbdc,
    Bank,
    Auto,
}

impl RailPreference {
    pub fn parse(s: &str) -> Option<RailPreference> {
        match s {
            "cbdc" => Some(RailPreference::Cbdc),
            "bank" => Some(RailPreference::Bank),
            "auto" => Some(RailPreference::Auto),
            _ => None,
        }
    }

    /// Rails the payer may be debited on.
    pub fn rails(self) -> &'static [Rail] {
        match self {
            RailPreference::Cbdc => &[Rail::Cbdc],
            RailPreference::Bank => &[Rail::Bank],
            RailPreference::Auto => &[Rail::Cbdc, Rail::Bank],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WirePayer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preferred_rail: Option<String>,
}

/// Payee coordinates: an account on a rail, or a directory user on a rail.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WirePayee {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub account_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireInstruction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payer: Option<WirePayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payee: Option<WirePayee>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub currency: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memo: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payer {
    pub user: UserId,
    pub preferred_rail: RailPreference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PayeeTarget {
    Account {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bank_id: Option<BankId>,
        account_id: AccountId,
    },
    User {
        user: UserId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payee {
    pub rail: Rail,
    pub target: PayeeTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentInstruction {
    pub instruction_id: InstructionId,
    pub payer: Payer,
    pub payee: Payee,
    pub amount: Money,
    pub memo: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub field: String,
}

impl Violation {
    fn new(code: &str, field: &str) -> Self {
        Self {
            code: code.to_string(),
            field: field.to_string(),
        }
    }
}

fn required<'a>(v: &'a Option<String>, field: &str, out: &mut Vec<Violation>) -> Option<&'a str> {
    match v.as_deref().map(str::trim) {
        Some(s) if !s.is_empty() => {
            if s.chars().count() > MAX_ID_CHARS {
                out.push(Violation::new("FIELD_TOO_LONG", field));
                return None;
            }
            Some(s)
        }
        _ => {
            out.push(Violation::new("MISSING_FIELD", field));
            None
        }
    }
}

/// Applies the data standard. Collects all violations rather than stopping
/// at the first.
pub fn validate(w: &WireInstruction) -> Result<PaymentInstruction, Vec<Violation>> {
    let mut v = Vec::new();
    let instruction_id = required(&w.instruction_id, "instruction_id", &mut v);

    let empty_payer = WirePayer::default();
    let payer = w.payer.as_ref().unwrap_or(&empty_payer);
    let user = required(&payer.user, "payer.user", &mut v);
    let preferred_rail = match payer.preferred_rail.as_deref() {
        None => Some(RailPreference::Auto),
        Some(s) => RailPreference::parse(s).or_else(|| {
            v.push(Violation::new("UNKNOWN_RAIL", "payer.preferred_rail"));
            None
        }),
    };

    let empty_payee = WirePayee::default();
    let payee = w.payee.as_ref().unwrap_or(&empty_payee);
    let rail = required(&payee.rail, "payee.rail", &mut v).and_then(|s| {
        Rail::parse(s).or_else(|| {
            v.push(Violation::new("UNKNOWN_RAIL", "payee.rail"));
            None
        })
    });
    let target = match (&payee.user, &payee.account_id) {
        (Some(_), Some(_)) => {
            v.push(Violation::new("AMBIGUOUS_PAYEE", "payee"));
            None
        }
        (Some(_), None) => required(&payee.user, "payee.user", &mut v).map(|u| PayeeTarget::User { user: u.into() }),
        (None, Some(_)) => {
            let account = required(&payee.account_id, "payee.account_id", &mut v);
            let bank_id = match rail {
                Some(Rail::Bank) => required(&payee.bank_id, "payee.bank_id", &mut v).map(BankId::from),
                _ => None,
            };
            match (account, rail) {
                (Some(a), Some(Rail::Cbdc)) => Some(PayeeTarget::Account {
                    bank_id: None,
                    account_id: a.into(),
                }),
                (Some(a), Some(Rail::Bank)) => bank_id.map(|b| PayeeTarget::Account {
                    bank_id: Some(b),
                    account_id: a.into(),
                }),
                _ => None,
            }
        }
        (None, None) => {
            v.push(Violation::new("MISSING_FIELD", "payee.account_id"));
            None
        }
    };

    let amount = required(&w.amount, "amount", &mut v).and_then(|s| match Money::parse_decimal(s) {
        Ok(m) if m.is_zero() => {
            v.push(Violation::new("NON_POSITIVE_AMOUNT", "amount"));
            None
        }
        Ok(m) => Some(m),
        Err(MoneyError::Overflow) => {
            v.push(Violation::new("AMOUNT_OUT_OF_RANGE", "amount"));
            None
        }
        Err(_) => {
            v.push(Violation::new("MALFORMED_AMOUNT", "amount"));
            None
        }
    });
    if let Some(c) = required(&w.currency, "currency", &mut v) {
        if c != CURRENCY {
            v.push(Violation::new("UNSUPPORTED_CURRENCY", "currency"));
        }
    }
    let memo = w.memo.clone().unwrap_or_default();
    if memo.chars().count() > MAX_MEMO_CHARS {
        v.push(Violation::new("MEMO_TOO_LONG", "memo"));
    }

    match (instruction_id, user, preferred_rail, rail, target, amount) {
        (Some(id), Some(user), Some(preferred_rail), Some(rail), Some(target), Some(amount)) if v.is_empty() => {
            Ok(PaymentInstruction {
                instruction_id: id.into(),
                payer: Payer {
                    user: user.into(),
                    preferred_rail,
                },
                payee: Payee { rail, target },
                amount,
                memo,
            })
        }
        _ => Err(v),
    }
}

impl PaymentInstruction {
    /// The wire form that validates back to `self`.
    pub fn to_wire(&self) -> WireInstruction {
        let (user, bank_id, account_id) = match &self.payee.target {
            PayeeTarget::User { user } => (Some(user.to_string()), None, None),
            PayeeTarget::Account { bank_id, account_id } => {
                (None, bank_id.as_ref().map(|b| b.to_string()), Some(account_id.to_string()))
            }
        };
        WireInstruction {
            instruction_id: Some(self.instruction_id.to_string()),
            payer: Some(WirePayer {
                user: Some(self.payer.user.to_string()),
                preferred_rail: Some(
                    match self.payer.preferred_rail {
                        RailPreference::Cbdc => "cbdc",
                        RailPreference::Bank => "bank",
                        RailPreference::Auto => "auto",
                    }
                    .to_string(),
                ),
            }),
            payee: Some(WirePayee {
                rail: Some(self.payee.rail.as_str().to_string()),
                user,
                bank_id,
                account_id,
            }),
            amount: Some(self.amount.to_string()),
            currency: Some(CURRENCY.to_string()),
            memo: if self.memo.is_empty() { None } else { Some(self.memo.clone()) },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn good() -> WireInstruction {
        WireInstruction {
            instruction_id: Some("ins-1".into()),
            payer: Some(WirePayer {
                user: Some("User1".into()),
                preferred_rail: Some("auto".into()),
            }),
            payee: Some(WirePayee {
                rail: Some("cbdc".into()),
                user: Some("User4".into()),
                ..Default::default()
            }),
            amount: Some("4.00".into()),
            currency: Some("GBP".into()),
            memo: Some("rent".into()),
        }
    }

    fn codes(w: &WireInstruction) -> Vec<String> {
        validate(w).unwrap_err().into_iter().map(|v| v.code).collect()
    }

    #[test]
    fn well_formed_normalizes() {
        let p = validate(&good()).unwrap();
        assert_eq!(p.amount, Money::pence(400));
        assert_eq!(p.payer.preferred_rail, RailPreference::Auto);
        assert_eq!(p.payee.target, PayeeTarget::User { user: "User4".into() });
    }

    #[test]
    fn one_decimal_is_malformed() {
        let mut w = good();
        w.amount = Some("12.5".into());
        assert_eq!(codes(&w), ["MALFORMED_AMOUNT"]);
    }

    #[test]
    fn foreign_currency_rejected() {
        let mut w = good();
        w.currency = Some("EUR".into());
        assert_eq!(codes(&w), ["UNSUPPORTED_CURRENCY"]);
    }

    #[test]
    fn all_violations_reported() {
        let w = WireInstruction {
            amount: Some("0.00".into()),
            ..Default::default()
        };
        let v = validate(&w).unwrap_err();
        let fields: Vec<_> = v.iter().map(|x| (x.code.as_str(), x.field.as_str())).collect();
        assert_eq!(
            fields,
            [
                ("MISSING_FIELD", "instruction_id"),
                ("MISSING_FIELD", "payer.user"),
                ("MISSING_FIELD", "payee.rail"),
                ("MISSING_FIELD", "payee.account_id"),
                ("NON_POSITIVE_AMOUNT", "amount"),
                ("MISSING_FIELD", "currency"),
            ]
        );
    }

    #[test]
    fn bank_payee_needs_bank_id() {
        let mut w = good();
        w.payee = Some(WirePayee {
            rail: Some("bank".into()),
            account_id: Some("BANK_B-000001".into()),
            ..Default::default()
        });
        assert_eq!(codes(&w), ["MISSING_FIELD"]);
        w.payee.as_mut().unwrap().bank_id = Some("BANK_B".into());
        assert!(validate(&w).is_ok());
    }

    #[test]
    fn rails_and_payee_shape() {
        let mut w = good();
        w.payer.as_mut().unwrap().preferred_rail = Some("cash".into());
        w.payee.as_mut().unwrap().account_id = Some("cb-000001".into());
        assert_eq!(codes(&w), ["UNKNOWN_RAIL", "AMBIGUOUS_PAYEE"]);
        let mut w = good();
        w.memo = Some("x".repeat(MAX_MEMO_CHARS + 1));
        assert_eq!(codes(&w), ["MEMO_TOO_LONG"]);
    }

    proptest! {
        #[test]
        fn normalized_round_trips_through_wire(pence in 1i64..1_000_000_000, cbdc in any::<bool>()) {
            let mut w = good();
            w.amount = Some(Money::pence(pence).to_string());
            if !cbdc {
                w.payee = Some(WirePayee {
                    rail: Some("bank".into()),
                    bank_id: Some("BANK_A".into()),
                    account_id: Some("BANK_A-000001".into()),
                    ..Default::default()
                });
            }
            let p = validate(&w).unwrap();
            prop_assert_eq!(validate(&p.to_wire()).unwrap(), p);
        }
    }
}
