use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::HeaderMap;
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use cbdc_core::bank::{Bank, FpsMessage, PaymentInitiation};
use cbdc_core::money::Amount;
use cbdc_core::node::ServiceHandle;
use cbdc_core::{AccountId, HoldId};

use super::{AccountCreated, CashInjection, Consent, CreditRequest, Delivered, Done, FpsAck, HoldRequest, OpenDeposit};
use crate::server::{serve, JsonBody, ApiKeys, AppState, Shared};

/// Open Banking reads and payment initiation under `/ob`, saga and rail
/// endpoints under `/internal`, harness provisioning under `/admin`.
pub fn router<H>(svc: H, keys: ApiKeys) -> Router
where
    H: ServiceHandle<Bank> + 'static,
{
    Router::new()
        .route("/ob/customers/{id}/accounts", get(accounts::<H>))
        .route("/ob/accounts/{id}/balances", get(balance::<H>))
        .route("/ob/payment-initiations", post(initiate::<H>))
        .route("/internal/holds", post(hold::<H>))
        .route("/internal/holds/{id}/commit", post(commit::<H>))
        .route("/internal/holds/{id}/abort", post(abort::<H>))
        .route("/internal/credits", post(credit::<H>))
        .route("/internal/fps/deliver", post(deliver::<H>))
        .route("/internal/fps/outbox", get(outbox::<H>))
        .route("/internal/fps/ack", post(ack::<H>))
        .route("/internal/totals", get(totals::<H>))
        .route("/admin/accounts", post(open::<H>))
        .route("/admin/cash", post(cash::<H>))
        .route("/admin/consents", post(consent::<H>))
        .with_state(Arc::new(AppState { svc, keys }))
}

async fn accounts<H: ServiceHandle<Bank> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(customer): Path<String>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|b| b.ob_get_accounts(caller, &customer))).await
}

async fn balance<H: ServiceHandle<Bank> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(id): Path<AccountId>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|b| b.ob_get_balance(caller, &id)).map(Amount::from)).await
}

async fn initiate<H: ServiceHandle<Bank> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(req): JsonBody<PaymentInitiation>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|b| b.ob_initiate_payment(caller, &req))).await
}

async fn hold<H: ServiceHandle<Bank> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(req): JsonBody<HoldRequest>,
) -> Response {
    serve(s, h, move |svc, caller| {
        svc.call(|b| b.prepare_debit(caller, &req.instruction_id, &req.account, req.amount))
    })
    .await
}

async fn commit<H: ServiceHandle<Bank> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(id): Path<HoldId>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|b| b.commit_debit(caller, &id)).map(|()| Done {})).await
}

async fn abort<H: ServiceHandle<Bank> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(id): Path<HoldId>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|b| b.abort_debit(caller, &id)).map(|()| Done {})).await
}

async fn credit<H: ServiceHandle<Bank> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(req): JsonBody<CreditRequest>,
) -> Response {
    serve(s, h, move |svc, caller| {
        svc.call(|b| b.credit(caller, &req.instruction_id, &req.account, req.amount))
    })
    .await
}

async fn deliver<H: ServiceHandle<Bank> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(msg): JsonBody<FpsMessage>,
) -> Response {
    serve(s, h, move |svc, caller| {
        svc.call(|b| b.fps_deliver(caller, &msg)).map(|outcome| Delivered { outcome })
    })
    .await
}

async fn outbox<H: ServiceHandle<Bank> + 'static>(State(s): State<Shared<H>>, h: HeaderMap) -> Response {
    serve(s, h, move |svc, caller| svc.call(|b| b.fps_outbox(caller))).await
}

async fn ack<H: ServiceHandle<Bank> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(body): JsonBody<FpsAck>,
) -> Response {
    serve(s, h, move |svc, caller| {
        svc.call(|b| b.fps_ack(caller, &body.msg_id, body.outcome)).map(|()| Done {})
    })
    .await
}

async fn totals<H: ServiceHandle<Bank> + 'static>(State(s): State<Shared<H>>, h: HeaderMap) -> Response {
    serve(s, h, move |svc, _| svc.call(|b| b.totals())).await
}

async fn open<H: ServiceHandle<Bank> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(body): JsonBody<OpenDeposit>,
) -> Response {
    serve(s, h, move |svc, caller| {
        svc.call(|b| b.open_account(caller, &body.owner)).map(|account_id| AccountCreated { account_id })
    })
    .await
}

async fn cash<H: ServiceHandle<Bank> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(body): JsonBody<CashInjection>,
) -> Response {
    serve(s, h, move |svc, caller| {
        svc.call(|b| b.inject_cash(caller, &body.account, body.amount)).map(|()| Done {})
    })
    .await
}

async fn consent<H: ServiceHandle<Bank> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(body): JsonBody<Consent>,
) -> Response {
    serve(s, h, move |svc, caller| {
        svc.call(|b| b.grant_consent(caller, &body.grantee, &body.customer)).map(|()| Done {})
    })
    .await
}
