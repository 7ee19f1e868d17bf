//! HTTP test client and the scripted scenario shared by the API tests and
//! the acceptance suite.
#![allow(dead_code)]

#[path = "../../../core/tests/support/mod.rs"]
pub mod support;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use b2d_core::domain::{
    CardId, DeliverableContext, ElementType, Orientation, RequirementField, SelectionSet, SessionId,
};
use b2d_core::events::EventRecord;
use b2d_core::providers::mock::MockProviders;
use b2d_core::providers::Providers;
use b2d_core::store::FsStore;
use b2d_core::{Engine, PipelineError};
use b2d_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub struct TestServer {
    pub dir: tempfile::TempDir,
    pub mock: Arc<MockProviders>,
    pub engine: Arc<Engine>,
    pub app: Router,
}

pub fn engine(seed: u64) -> (tempfile::TempDir, Arc<MockProviders>, Arc<Engine>) {
    let dir = tempfile::tempdir().unwrap();
    let mock = Arc::new(MockProviders::new(seed));
    let store = Arc::new(FsStore::open(dir.path()).unwrap());
    let engine = Arc::new(Engine::new(Providers::from_mock(mock.clone()), store, support::test_config()));
    (dir, mock, engine)
}

pub fn server(seed: u64) -> TestServer {
    let (dir, mock, engine) = engine(seed);
    let app = router(AppState::new(engine.clone()));
    TestServer { dir, mock, engine, app }
}

pub struct Raw {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub bytes: Vec<u8>,
}

impl TestServer {
    pub async fn raw(&self, method: &str, uri: &str, body: Option<Value>) -> Raw {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(serde_json::to_vec(&v).unwrap())
            }
            None => Body::empty(),
        };
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let content_type = resp.headers().get("content-type").map(|v| v.to_str().unwrap().to_owned());
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        Raw { status, content_type, bytes }
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let raw = self.raw(method, uri, body).await;
        let value = if raw.bytes.is_empty() { Value::Null } else { serde_json::from_slice(&raw.bytes).unwrap() };
        (raw.status, value)
    }

    /// Asserts a 2xx answer and returns its body.
    pub async fn ok(&self, method: &str, uri: &str, body: Option<Value>) -> Value {
        let (status, value) = self.call(method, uri, body).await;
        assert!(status.is_success(), "{method} {uri} -> {status}: {value}");
        value
    }

    pub async fn poll(&self, job_id: &str) -> Value {
        for _ in 0..2000 {
            let job = self.ok("GET", &format!("/jobs/{job_id}"), None).await;
            if matches!(job["state"].as_str(), Some("done" | "failed")) {
                return job;
            }
            tokio::time::sleep(Duration::from_millis(2)).await;
        }
        panic!("job {job_id} did not finish");
    }

    /// Starts a job, waits for it and returns the final handle.
    pub async fn job(&self, method: &str, uri: &str, body: Option<Value>) -> Value {
        let (status, handle) = self.call(method, uri, body).await;
        assert_eq!(status, StatusCode::ACCEPTED, "{method} {uri}: {handle}");
        self.poll(handle["job_id"].as_str().unwrap()).await
    }

    /// Like [`TestServer::job`] but requires `done` and returns the result.
    pub async fn job_result(&self, method: &str, uri: &str, body: Option<Value>) -> Value {
        let job = self.job(method, uri, body).await;
        assert_eq!(job["state"], "done", "{method} {uri}: {job}");
        job["result"].clone()
    }
}

/// Id of the requirement entry whose text equals `text`, anywhere in `value`.
pub fn find_entry(value: &Value, text: &str) -> Option<String> {
    match value {
        Value::Object(m) if m.get("text").and_then(Value::as_str) == Some(text) && m.contains_key("field") => {
            m.get("id").and_then(Value::as_str).map(str::to_owned)
        }
        Value::Object(m) => m.values().find_map(|v| find_entry(v, text)),
        Value::Array(a) => a.iter().find_map(|v| find_entry(v, text)),
        _ => None,
    }
}

pub fn stable(events: &[EventRecord]) -> Vec<(String, Value)> {
    events.iter().map(|r| (r.kind.clone(), r.stable_detail())).collect()
}

const MANUAL_ENTRY: &str = "No photos of people";
const EDITED_ENTRY: &str = "No stock photography";
const ADDED_OBJECT: &str = "a frosted glass serum bottle";
const EDITED_OBJECT: &str = "a frosted glass serum bottle on wet stone";

fn id_of(v: &Value) -> String {
    v["id"].as_str().unwrap().to_owned()
}

/// Drives one session through every endpoint. Returns its id.
pub async fn http_scenario(srv: &TestServer) -> String {
    let s = srv
        .ok(
            "POST",
            "/sessions",
            Some(json!({
                "brief_text": support::BRIEFS[0].1,
                "output_language": "English",
                "deliverable_format": "signage",
                "orientation": "portrait"
            })),
        )
        .await;
    let id = id_of(&s);
    let base = format!("/sessions/{id}");
    srv.job_result("POST", &format!("{base}/requirements/extract"), None).await;
    let candidates =
        srv.job_result("POST", &format!("{base}/requirements/target_audience/recommend"), Some(json!({"n": 2}))).await;
    let entries = format!("{base}/requirements/entries");
    srv.ok("POST", &entries, Some(json!({"candidate": candidates[0]}))).await;
    let set = srv.ok("POST", &entries, Some(json!({"field": "restrictions", "text": MANUAL_ENTRY}))).await;
    let entry = find_entry(&set, MANUAL_ENTRY).unwrap();
    srv.ok("PATCH", &format!("{entries}/{entry}"), Some(json!({"text": EDITED_ENTRY}))).await;
    srv.ok("DELETE", &format!("{entries}/{entry}"), None).await;
    srv.ok(
        "PUT",
        &format!("{base}/context"),
        Some(json!({"deliverable_format": "signage", "orientation": "landscape"})),
    )
    .await;

    let mut cards = std::collections::BTreeMap::new();
    for ty in ElementType::ALL {
        let got =
            srv.job_result("POST", &format!("{base}/elements/{}/recommend", ty.label()), Some(json!({"n": 2}))).await;
        cards.insert(ty, got.as_array().unwrap().iter().map(id_of).collect::<Vec<_>>());
    }
    let added = id_of(
        &srv.ok("POST", &format!("{base}/elements/Object/add"), Some(json!({"rough_prompt": ADDED_OBJECT}))).await,
    );
    srv.job_result("POST", &format!("{base}/elements/{added}/enhance"), None).await;
    srv.job_result("POST", &format!("{base}/elements/{added}/edit"), Some(json!({"rough_prompt": EDITED_OBJECT})))
        .await;
    srv.job_result("POST", &format!("{base}/elements/{added}/regenerate"), None).await;
    srv.ok("DELETE", &format!("{base}/elements/{}", cards[&ElementType::Object][1]), None).await;
    srv.ok(
        "POST",
        &format!("{base}/elements/{}/select", cards[&ElementType::Background][0]),
        Some(json!({"selected": true})),
    )
    .await;
    let selection = json!({
        "composition_id": cards[&ElementType::Composition][0],
        "object_id": added,
        "background_id": cards[&ElementType::Background][0],
        "typography_id": cards[&ElementType::Typography][1],
        "text_ids": cards[&ElementType::Text],
    });
    srv.ok("PUT", &format!("{base}/selection"), Some(selection)).await;
    let first = srv.job("POST", &format!("{base}/integrate"), None).await;
    assert_eq!(first["state"], "done", "{first}");
    srv.job_result("POST", &format!("{base}/regenerate-design"), None).await;

    srv.ok("GET", &base, None).await;
    let history = srv.ok("GET", &format!("{base}/history"), None).await;
    srv.ok("GET", &format!("{base}/events"), None).await;
    srv.ok("GET", &format!("{base}/metrics"), None).await;
    srv.ok("GET", &format!("/jobs/{}", first["job_id"].as_str().unwrap()), None).await;
    let hash = history[0]["artifact"]["image_ref"]["content_hash"].as_str().unwrap();
    assert_eq!(srv.raw("GET", &format!("/images/{hash}"), None).await.status, StatusCode::OK);
    srv.ok("POST", &format!("{base}/close"), None).await;
    id
}

/// The same steps as [`http_scenario`], calling the engine directly.
pub fn direct_scenario(e: &Engine) -> Result<SessionId, PipelineError> {
    let ctx =
        DeliverableContext { deliverable_format: Some("signage".into()), orientation: Some(Orientation::Portrait) };
    let id = e.create_session(support::BRIEFS[0].1, "English", ctx)?.id;
    e.extract_requirements(&id, None)?;
    let candidates = e.recommend_requirements(&id, RequirementField::TargetAudience, 2)?;
    e.accept_candidate(&id, candidates[0].clone())?;
    let set = e.add_manual_entry(&id, RequirementField::Restrictions, MANUAL_ENTRY)?;
    let entry = find_entry(&serde_json::to_value(&set).unwrap(), MANUAL_ENTRY).unwrap();
    e.edit_entry(&id, &entry.clone().into(), EDITED_ENTRY)?;
    e.delete_entry(&id, &entry.into())?;
    e.update_context(
        &id,
        DeliverableContext { deliverable_format: Some("signage".into()), orientation: Some(Orientation::Landscape) },
    )?;

    let mut cards = std::collections::BTreeMap::new();
    for ty in ElementType::ALL {
        let got = e.recommend_and_preview(&id, ty, 2)?;
        cards.insert(ty, got.into_iter().map(|c| c.id).collect::<Vec<CardId>>());
    }
    let added = e.add_manual_card(&id, ElementType::Object, ADDED_OBJECT)?.id;
    e.enhance_and_preview(&id, &added)?;
    e.edit_rough(&id, &added, EDITED_OBJECT)?;
    e.regenerate_preview(&id, &added)?;
    e.delete_card(&id, &cards[&ElementType::Object][1])?;
    e.set_selected(&id, &cards[&ElementType::Background][0], true)?;
    e.set_selection(
        &id,
        SelectionSet {
            composition_id: Some(cards[&ElementType::Composition][0].clone()),
            object_id: Some(added),
            background_id: Some(cards[&ElementType::Background][0].clone()),
            typography_id: Some(cards[&ElementType::Typography][1].clone()),
            text_ids: cards[&ElementType::Text].clone(),
        },
    )?;
    e.integrate_and_generate(&id)?;
    e.regenerate_design(&id)?;
    e.metrics(&id)?;
    e.close_session(&id)?;
    Ok(id)
}
