//! Services of a two-tier CBDC architecture: a pseudonymous central-bank core
//! ledger, mock commercial banks with Open-Banking-style APIs, an ecosystem
//! layer that routes and atomically executes payments across both forms of
//! money and hosts programmable payments, and a PIP that onboards users and
//! pseudonymises them towards the core ledger.

pub mod api;
pub mod bank;
pub mod clock;
pub mod ecosystem;
pub mod fault;
pub mod fps;
pub mod ids;
pub mod journal;
pub mod ledger;
pub mod money;
pub mod node;
pub mod pip;
pub mod service;

pub use api::{ErrorBody, Page, Role, WireError};
pub use clock::LogicalClock;
pub use ids::*;
pub use money::{Delta, Money, MoneyError};
