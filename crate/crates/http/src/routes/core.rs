use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::response::Response;
use axum::routing::{delete, get, post};
use axum::Router;
use cbdc_core::ledger::{CoreLedger, FundingDirection, FundingRequest, TransferRequest};
use cbdc_core::money::Amount;
use cbdc_core::node::ServiceHandle;
use cbdc_core::{AccountId, Page, TransactionId};

use super::{AccountCreated, Done, Funding, OpenCbdcAccount, PageQuery, ReserveInjection};
use crate::server::{serve, JsonBody, ApiKeys, AppState, Shared};


pub fn router<H>(svc: H, keys: ApiKeys) -> Router
where
    H: ServiceHandle<CoreLedger> + 'static,
{
    Router::new()
        .route("/cbdc/accounts", post(open::<H>))
        .route("/cbdc/accounts/{id}", delete(close::<H>))
        .route("/cbdc/accounts/{id}/balance", get(balance::<H>))
        .route("/cbdc/accounts/{id}/transactions", get(transactions::<H>))
        .route("/cbdc/payments", post(transfer::<H>))
        .route("/cbdc/payments/prepare", post(prepare::<H>))
        .route("/cbdc/payments/{tx}/commit", post(commit::<H>))
        .route("/cbdc/payments/{tx}/abort", post(abort::<H>))
        .route("/cbdc/funding", post(funding::<H>))
        .route("/cbdc/reserves", post(reserves::<H>))
        .route("/cbdc/totals", get(totals::<H>))
        .with_state(Arc::new(AppState { svc, keys }))
}

async fn open<H: ServiceHandle<CoreLedger> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(body): JsonBody<OpenCbdcAccount>,
) -> Response {
    serve(s, h, move |svc, caller| {
        svc.call(|c| c.open_account(caller, &body.pseudonym))
            .map(|account_id| AccountCreated { account_id })
    })
    .await
}

async fn close<H: ServiceHandle<CoreLedger> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(id): Path<AccountId>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|c| c.close_account(caller, &id)).map(|()| Done {})).await
}

async fn balance<H: ServiceHandle<CoreLedger> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(id): Path<AccountId>,
) -> Response {
    serve(s, h, move |svc, _| svc.call(|c| c.get_balance(&id)).map(Amount::from)).await
}

async fn transactions<H: ServiceHandle<CoreLedger> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(id): Path<AccountId>,
    Query(q): Query<PageQuery>,
) -> Response {
    let page = Page::new(q.page.unwrap_or(1), q.size.unwrap_or(Page::DEFAULT_SIZE));
    serve(s, h, move |svc, _| svc.call(|c| c.list_transactions(&id, page))).await
}

async fn transfer<H: ServiceHandle<CoreLedger> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(req): JsonBody<TransferRequest>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|c| c.transfer(caller, &req))).await
}

async fn prepare<H: ServiceHandle<CoreLedger> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(req): JsonBody<TransferRequest>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|c| c.prepare_transfer(caller, &req))).await
}

async fn commit<H: ServiceHandle<CoreLedger> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(tx): Path<TransactionId>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|c| c.commit(caller, &tx)).map(|()| Done {})).await
}

async fn abort<H: ServiceHandle<CoreLedger> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(tx): Path<TransactionId>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|c| c.abort(caller, &tx)).map(|()| Done {})).await
}

async fn funding<H: ServiceHandle<CoreLedger> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(body): JsonBody<Funding>,
) -> Response {
    serve(s, h, move |svc, caller| {
        let req = FundingRequest {
            instruction_id: body.instruction_id,
            bank_id: body.bank_id,
            account_id: body.account_id,
            amount: body.amount,
        };
        svc.call(|c| match body.direction {
            FundingDirection::Fund => c.fund(caller, &req),
            FundingDirection::Defund => c.defund(caller, &req),
        })
    })
    .await
}

async fn reserves<H: ServiceHandle<CoreLedger> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(body): JsonBody<ReserveInjection>,
) -> Response {
    serve(s, h, move |svc, caller| {
        svc.call(|c| c.inject_reserves(caller, &body.bank_id, body.amount))
            .map(|()| Done {})
    })
    .await
}

async fn totals<H: ServiceHandle<CoreLedger> + 'static>(State(s): State<Shared<H>>, h: HeaderMap) -> Response {
    serve(s, h, move |svc, _| svc.call(|c| c.totals())).await
}
