use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const STUDENT: &str = include_str!("../../../problems/student.fop");

async fn call(app: &Router, method: Method, uri: &str, body: Body) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json").body(body).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let code = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (code, v)
}

fn status_of(state: &Value, pred: &str, elem: &str) -> String {
    state["atoms"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["pred"] == pred && a["tuple"] == json!([elem]))
        .map(|a| a["status"].as_str().unwrap().to_string())
        .unwrap()
}

async fn open(app: &Router, query: &str) -> (String, Value) {
    let (code, v) = call(app, Method::POST, &format!("/sessions{query}"), Body::from(STUDENT)).await;
    assert_eq!(code, StatusCode::CREATED);
    (v["id"].as_str().unwrap().to_string(), v["state"].clone())
}

#[tokio::test]
async fn session_lifecycle() {
    let app = foprop_service::router();
    let (id, state) = open(&app, "").await;
    assert_eq!(status_of(&state, "Selected", "m1"), "forced");
    assert_eq!(status_of(&state, "Selected", "c2"), "forbidden");
    assert_eq!(status_of(&state, "Selected", "c4"), "free");
    assert_eq!(state["inconsistent"], false);

    let assign = json!({ "atom": { "pred": "Selected", "tuple": ["c4"] }, "value": "t" });
    let (code, v) = call(&app, Method::POST, &format!("/sessions/{id}/assign"), Body::from(assign.to_string())).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(status_of(&v["state"], "Selected", "c4"), "user");
    assert_eq!(v["state"]["delta"].as_array().unwrap().len(), 1);

    let clash = json!({ "atom": { "pred": "Selected", "tuple": ["m2"] }, "value": "t" });
    let (_, v) = call(&app, Method::POST, &format!("/sessions/{id}/assign"), Body::from(clash.to_string())).await;
    assert_eq!(v["state"]["inconsistent"], true);

    for body in [json!({ "index": 1 }), json!({ "atom": { "pred": "Selected", "tuple": ["c4"] } })] {
        let (code, _) = call(&app, Method::POST, &format!("/sessions/{id}/retract"), Body::from(body.to_string())).await;
        assert_eq!(code, StatusCode::OK);
    }
    let (_, again) = call(&app, Method::GET, &format!("/sessions/{id}"), Body::empty()).await;
    let (_, twice) = call(&app, Method::GET, &format!("/sessions/{id}"), Body::empty()).await;
    assert_eq!(again, twice);
    assert_eq!(again["state"]["atoms"], state["atoms"]);

    let (code, _) = call(&app, Method::DELETE, &format!("/sessions/{id}"), Body::empty()).await;
    assert_eq!(code, StatusCode::NO_CONTENT);
    let (code, _) = call(&app, Method::GET, &format!("/sessions/{id}"), Body::empty()).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn errors() {
    let app = foprop_service::router();
    let (code, v) = call(&app, Method::POST, "/sessions", Body::from("vocabulary { P/1 ")).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("line"));

    let (id, _) = open(&app, "").await;
    let bad = json!({ "atom": { "pred": "Nope", "tuple": ["c4"] }, "value": "t" });
    let (code, _) = call(&app, Method::POST, &format!("/sessions/{id}/assign"), Body::from(bad.to_string())).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    let (code, _) = call(&app, Method::POST, &format!("/sessions/{id}/retract"), Body::from(json!({ "index": 3 }).to_string())).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    let (code, _) = call(&app, Method::GET, "/sessions/not-a-session", Body::empty()).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = foprop_service::router();
    let (a, _) = open(&app, "").await;
    let (b, before) = open(&app, "?oracle=true").await;
    let assign = json!({ "atom": { "pred": "Selected", "tuple": ["c4"] }, "value": "f" });
    call(&app, Method::POST, &format!("/sessions/{a}/assign"), Body::from(assign.to_string())).await;
    let (_, after) = call(&app, Method::GET, &format!("/sessions/{b}"), Body::empty()).await;
    assert_eq!(after["state"], before);
    assert_eq!(status_of(&before, "Selected", "c3"), "forced");
}
