use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::HeaderMap;
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use cbdc_core::node::ServiceHandle;
use cbdc_core::pip::{Onboarding, PaymentRequest, Pip};
use cbdc_core::UserId;

use super::{AccountCreated, UserCreated};
use crate::server::{serve, JsonBody, ApiKeys, AppState, Shared};

pub fn router<H>(svc: H, keys: ApiKeys) -> Router
where
    H: ServiceHandle<Pip> + 'static,
{
    Router::new()
        .route("/pip/users", post(onboard::<H>))
        .route("/pip/users/{id}/cbdc-account", post(open::<H>))
        .route("/pip/users/{id}/payments", post(pay::<H>))
        .route("/pip/users/{id}/portfolio", get(portfolio::<H>))
        .with_state(Arc::new(AppState { svc, keys }))
}

async fn onboard<H: ServiceHandle<Pip> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(req): JsonBody<Onboarding>,
) -> Response {
    serve(s, h, move |svc, caller| {
        svc.call(|p| p.onboard_user(caller, &req)).map(|user_id| UserCreated { user_id })
    })
    .await
}

async fn open<H: ServiceHandle<Pip> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(user): Path<UserId>,
) -> Response {
    serve(s, h, move |svc, caller| {
        svc.call(|p| p.open_cbdc_account(caller, &user)).map(|account_id| AccountCreated { account_id })
    })
    .await
}

async fn pay<H: ServiceHandle<Pip> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(user): Path<UserId>,
    JsonBody(req): JsonBody<PaymentRequest>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|p| p.submit_payment(caller, &user, &req))).await
}

async fn portfolio<H: ServiceHandle<Pip> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(user): Path<UserId>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|p| p.get_portfolio(caller, &user))).await
}
