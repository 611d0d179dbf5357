//! HTTP/JSON surfaces for every service and blocking clients that implement
//! the same API traits as the in-process clients.
//!
//! Callers authenticate with a static API key in the `x-api-key` header; the
//! server maps the key to a caller name and the service decides what that
//! caller's role allows. Errors are `{code, message}` bodies with the
//! service's stable codes.

pub mod client;
pub mod routes;
pub mod server;

pub use client::{HttpBank, HttpCore, HttpEco, HttpPip, Transport};
pub use server::{ApiKeys, Server};

/// Header carrying the caller's API key.
pub const API_KEY_HEADER: &str = "x-api-key";
