use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::HeaderMap;
use axum::response::Response;
use axum::routing::{delete, get, post};
use axum::Router;
use cbdc_core::ecosystem::identity::KycRequest;
use cbdc_core::ecosystem::programs::ProgramSpec;
use cbdc_core::ecosystem::standards::WireInstruction;
use cbdc_core::ecosystem::{Ecosystem, LinkRequest};
use cbdc_core::node::ServiceHandle;
use cbdc_core::{InstructionId, ProgramId};

use super::{Done, Evaluate, ProgramCreated, Verdict};
use crate::server::{serve, JsonBody, ApiKeys, AppState, Shared};

pub fn router<H>(svc: H, keys: ApiKeys) -> Router
where
    H: ServiceHandle<Ecosystem> + 'static,
{
    Router::new()
        .route("/eco/payments", post(submit::<H>))
        .route("/eco/payments/{id}", get(status::<H>))
        .route("/eco/programs", post(register::<H>))
        .route("/eco/programs/{id}", delete(deregister::<H>))
        .route("/eco/programs/evaluate", post(evaluate::<H>))
        .route("/eco/identity/verify", post(verify::<H>))
        .route("/eco/directory/link", post(link::<H>))
        .route("/eco/directory/unlink", post(unlink::<H>))
        .route("/eco/conservation", get(conservation::<H>))
        .with_state(Arc::new(AppState { svc, keys }))
}

async fn submit<H: ServiceHandle<Ecosystem> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(wire): JsonBody<WireInstruction>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|e| e.submit_payment(caller, &wire))).await
}

async fn status<H: ServiceHandle<Ecosystem> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(id): Path<InstructionId>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|e| e.payment_status(caller, &id))).await
}

async fn register<H: ServiceHandle<Ecosystem> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(spec): JsonBody<ProgramSpec>,
) -> Response {
    serve(s, h, move |svc, caller| {
        svc.call(|e| e.register_program(caller, &spec)).map(|program_id| ProgramCreated { program_id })
    })
    .await
}

async fn deregister<H: ServiceHandle<Ecosystem> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    Path(id): Path<ProgramId>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|e| e.deregister_program(caller, &id)).map(|()| Done {})).await
}

async fn evaluate<H: ServiceHandle<Ecosystem> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(body): JsonBody<Evaluate>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|e| e.evaluate_programs(caller, body.tick))).await
}

async fn verify<H: ServiceHandle<Ecosystem> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(req): JsonBody<KycRequest>,
) -> Response {
    serve(s, h, move |svc, caller| {
        svc.call(|e| e.identity_verify(caller, &req)).map(|verdict| Verdict { verdict })
    })
    .await
}

async fn link<H: ServiceHandle<Ecosystem> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(req): JsonBody<LinkRequest>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|e| e.link_accounts(caller, &req)).map(|()| Done {})).await
}

async fn unlink<H: ServiceHandle<Ecosystem> + 'static>(
    State(s): State<Shared<H>>,
    h: HeaderMap,
    JsonBody(req): JsonBody<LinkRequest>,
) -> Response {
    serve(s, h, move |svc, caller| svc.call(|e| e.unlink_accounts(caller, &req)).map(|()| Done {})).await
}

async fn conservation<H: ServiceHandle<Ecosystem> + 'static>(State(s): State<Shared<H>>, h: HeaderMap) -> Response {
    serve(s, h, move |svc, _| svc.call(|e| e.conservation_report())).await
}
