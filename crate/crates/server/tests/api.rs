use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use whynot_core::catalog::{Catalog, Category, Course, RequirementSet};
use whynot_core::llm_gateway::Gateway;
use whynot_core::scheduler::{check_schedule, ScheduleDocument};
use whynot_server::{router, AppState};

fn fixed_clock() -> u64 {
    1_700_000_000_000
}

fn app_with(catalog: Result<Catalog, String>, data_dir: Option<&Path>) -> Router {
    let state = AppState::new(catalog, Gateway::disabled(), data_dir.map(Path::to_path_buf)).with_clock(fixed_clock);
    state.restore_sessions().unwrap();
    router(Arc::new(state), None)
}

fn app() -> Router {
    app_with(Ok(Catalog::sample()), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(&body.to_string())).await
}

async fn create(app: &Router) -> (String, Value) {
    let (status, v) = call(app, "POST", "/api/session", None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    (v["session_id"].as_str().unwrap().to_string(), v)
}

fn schedule_of(v: &Value) -> ScheduleDocument {
    serde_json::from_value(v.clone()).unwrap()
}

fn placements(doc: &ScheduleDocument) -> BTreeSet<(String, usize)> {
    doc.semesters
        .iter()
        .enumerate()
        .flat_map(|(s, cs)| cs.iter().map(move |c| (c.code.clone(), s)))
        .collect()
}

fn kinds(history: &Value) -> Vec<String> {
    history
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["kind"].as_str().unwrap().to_string())
        .collect()
}

fn toy(courses: &[(&str, Category)], sems: usize, max: u32, cat_min: &[(Category, u32)], required: &[&str]) -> Catalog {
    Catalog::new(
        courses
            .iter()
            .map(|(code, category)| Course {
                code: code.to_string(),
                title: format!("Course {code}"),
                credits: 3,
                prerequisites: Vec::new(),
                category: *category,
            })
            .collect(),
        RequirementSet {
            num_semesters: sems,
            total_credit_min: 0,
            category_credit_min: cat_min.iter().copied().collect(),
            semester_credit_min: 0,
            semester_credit_max: max,
            required_courses: required.iter().map(|s| s.to_string()).collect(),
        },
    )
    .unwrap()
}

#[tokio::test]
async fn create_returns_valid_eight_semester_schedule() {
    let app = app();
    let (_, v) = create(&app).await;
    assert_eq!(v["status"], "ok");
    let doc = schedule_of(&v["schedule"]);
    assert_eq!(doc.semesters.len(), 8);
    assert!(check_schedule(&doc.to_schedule(), &Catalog::sample()).is_empty());
    let card = &v["schedule"]["semesters"][0][0];
    assert!(card["code"].is_string() && card["title"].is_string() && card["credits"].is_u64());
}

#[tokio::test]
async fn create_reports_infeasible_catalog() {
    let app = app_with(Ok(toy(&[("A 1", Category::Core)], 1, 2, &[], &["A 1"])), None);
    let (_, v) = create(&app).await;
    assert_eq!(v["status"], "infeasible");
    assert!(v.get("schedule").is_none());
    let id = v["session_id"].as_str().unwrap();
    let (status, e) = post(&app, &format!("/api/session/{id}/query"), json!({"text": "Why A 1?"})).await;
    assert_eq!(status, StatusCode::CONFLICT, "{e}");
}

#[tokio::test]
async fn create_without_catalog_is_unavailable() {
    let app = app_with(Err("no such file".into()), None);
    let (status, v) = call(&app, "POST", "/api/session", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(v["error"].as_str().unwrap().contains("no such file"));
}

#[tokio::test]
async fn malformed_bodies_are_rejected() {
    let app = app();
    assert_eq!(call(&app, "POST", "/api/session", Some("{nope")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", "/api/session", Some("[1]")).await.0, StatusCode::BAD_REQUEST);
    let (id, _) = create(&app).await;
    let q = format!("/api/session/{id}/query");
    assert_eq!(call(&app, "POST", &q, Some("{}")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", &q, Some("text")).await.0, StatusCode::BAD_REQUEST);
    let (_, r) = post(&app, &q, json!({"text": "Why VPC Z88?"})).await;
    let c = format!("/api/session/{id}/query/{}/confirm", r["query_token"].as_str().unwrap());
    assert_eq!(post(&app, &c, json!({"confirmed": "yes"})).await.0, StatusCode::BAD_REQUEST);
    // The token survives a rejected request.
    assert_eq!(post(&app, &c, json!({"confirmed": false})).await.0, StatusCode::OK);
}

#[tokio::test]
async fn next_schedule_differs_from_the_first() {
    let app = app();
    let (id, first) = create(&app).await;
    let (status, v) = call(&app, "POST", &format!("/api/session/{id}/schedules/next"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    let a = schedule_of(&first["schedule"]);
    let b = schedule_of(&v["schedule"]);
    assert!(check_schedule(&b.to_schedule(), &Catalog::sample()).is_empty());
    assert!(!placements(&a).symmetric_difference(&placements(&b)).collect::<Vec<_>>().is_empty());
}

#[tokio::test]
async fn forced_catalog_is_exhausted_at_once() {
    let app = app_with(Ok(toy(&[("A 1", Category::Core)], 1, 15, &[], &["A 1"])), None);
    let (id, _) = create(&app).await;
    let uri = format!("/api/session/{id}/schedules/next");
    let (status, v) = call(&app, "POST", &uri, None).await;
    assert_eq!((status, v), (StatusCode::OK, json!({"status": "exhausted"})));
    assert_eq!(call(&app, "POST", &uri, None).await.1, json!({"status": "exhausted"}));
}

#[tokio::test]
async fn unknown_session_is_not_found() {
    let app = app();
    for (m, uri) in [
        ("POST", "/api/session/nope/schedules/next"),
        ("GET", "/api/session/nope/history"),
    ] {
        assert_eq!(call(&app, m, uri, None).await.0, StatusCode::NOT_FOUND);
    }
    let (status, _) = post(&app, "/api/session/nope/query", json!({"text": "Why VPC Z88?"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post(&app, "/api/session/nope/query/t/confirm", json!({"confirmed": true})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn instead_of_query_is_parsed_and_restated() {
    let app = app();
    let (id, first) = create(&app).await;
    let doc = schedule_of(&first["schedule"]);
    let sem = doc.semesters.iter().position(|s| s.iter().any(|c| c.code == "YNP H57")).unwrap();
    let (status, v) = post(
        &app,
        &format!("/api/session/{id}/query"),
        json!({"text": "Why not XOX R89 instead of YNP H57?"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(
        v["items"],
        json!([
            {"course": "XOX R89", "semester": {"current_of": "YNP H57"}, "condition": "positive"},
            {"course": "YNP H57", "semester": {"current_of": "YNP H57"}, "condition": "negative"},
        ])
    );
    assert_eq!(v["complexity"], 2);
    assert_eq!(v["source"], "grammar");
    let text = v["restatement"].as_str().unwrap();
    assert!(text.contains("XOX R89") && text.contains("YNP H57"), "{text}");
    assert!(text.contains(&format!("semester {}", sem + 1)), "{text}");
    assert!(!v["query_token"].as_str().unwrap().is_empty());
}

#[tokio::test]
async fn parse_errors_are_structured() {
    let app = app();
    let (id, _) = create(&app).await;
    let uri = format!("/api/session/{id}/query");
    let (status, v) = post(&app, &uri, json!({"text": "Why not BASKET WEAVING?"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["kind"], "unknown_course");
    assert_eq!(v["mention"], "BASKET WEAVING");
    let (status, v) = post(&app, &uri, json!({"text": "Why not R89?"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["kind"], "ambiguous_course");
    assert_eq!(v["candidates"], json!(["WJW R89", "XOX R89"]));
    let (status, v) = post(&app, &uri, json!({"text": "Tell me a joke"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["kind"], "no_match");
    // Nothing was left pending, and only the session's opening events exist.
    let (_, h) = call(&app, "GET", &format!("/api/session/{id}/history"), None).await;
    assert_eq!(kinds(&h), ["session_created", "schedule_generated"]);
}

#[tokio::test]
async fn confirmed_prerequisite_foil_is_explained() {
    let app = app();
    let (id, _) = create(&app).await;
    let (_, q) = post(&app, &format!("/api/session/{id}/query"), json!({"text": "Why not WJW R89 in semester 1?"})).await;
    let token = q["query_token"].as_str().unwrap();
    let uri = format!("/api/session/{id}/query/{token}/confirm");
    let (status, v) = post(&app, &uri, json!({"confirmed": true})).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["status"], "explained");
    let e = &v["explanation"];
    assert_eq!(e["constraint_ids"], json!(["prereq/WJW R89/XOX R89/0"]));
    assert_eq!(e["clause_labels"], json!(["XOX R89 must be completed before WJW R89"]));
    assert_eq!(e["categories"], json!(["Prerequisite"]));
    assert_eq!(e["minimal"], true);
    assert_eq!(e["mode"], "template");
    assert_eq!(
        e["text"],
        "WJW R89 cannot be scheduled because its prerequisite XOX R89 has not been completed."
    );
    let (status, _) = post(&app, &uri, json!({"confirmed": true})).await;
    assert_eq!(status, StatusCode::NOT_FOUND, "tokens are single-use");

    let (_, h) = call(&app, "GET", &format!("/api/session/{id}/history"), None).await;
    assert_eq!(
        kinds(&h),
        ["session_created", "schedule_generated", "query_submitted", "query_confirmed", "explanation_returned"]
    );
    let seqs: Vec<u64> = h.as_array().unwrap().iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (0..5).collect::<Vec<_>>());
    assert_eq!(h[2]["payload"]["text"], "Why not WJW R89 in semester 1?");
    assert_eq!(h[2]["payload"]["restatement"], q["restatement"]);
    assert_eq!(h[4]["payload"]["explanation"], *e);
}

#[tokio::test]
async fn confirmed_feasible_foil_returns_alternative() {
    let electives = toy(
        &[("E 1", Category::CSElective), ("E 2", Category::CSElective)],
        2,
        15,
        &[(Category::CSElective, 3)],
        &[],
    );
    let app = app_with(Ok(electives.clone()), None);
    let (id, first) = create(&app).await;
    let doc = schedule_of(&first["schedule"]);
    let shown = placements(&doc);
    let other = ["E 1", "E 2"].into_iter().find(|c| !shown.iter().any(|(p, _)| p == c));
    let missing = other.expect("a single elective meets the minimum, so the solver places one");
    let (status, q) = post(
        &app,
        &format!("/api/session/{id}/query"),
        json!({"text": format!("Why not {missing} in semester 2?")}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{q}");
    let token = q["query_token"].as_str().unwrap();
    let (status, v) = post(&app, &format!("/api/session/{id}/query/{token}/confirm"), json!({"confirmed": true})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "alternative");
    let alt = schedule_of(&v["alternative_schedule"]);
    assert!(placements(&alt).contains(&(missing.to_string(), 1)));
    assert!(check_schedule(&alt.to_schedule(), &electives).is_empty());
}

#[tokio::test]
async fn explanation_is_unreachable_without_confirmation() {
    let app = app();
    let (id, _) = create(&app).await;
    let (status, _) = post(&app, &format!("/api/session/{id}/query/made-up/confirm"), json!({"confirmed": true})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (_, q) = post(&app, &format!("/api/session/{id}/query"), json!({"text": "Why VPC Z88?"})).await;
    let token = q["query_token"].as_str().unwrap();
    let uri = format!("/api/session/{id}/query/{token}/confirm");
    assert_eq!(post(&app, &uri, json!({"confirmed": false})).await.1, json!({"status": "discarded"}));
    assert_eq!(post(&app, &uri, json!({"confirmed": true})).await.0, StatusCode::NOT_FOUND);
    // A token from one session means nothing in another.
    let (other, _) = create(&app).await;
    let (_, q) = post(&app, &format!("/api/session/{id}/query"), json!({"text": "Why VPC Z88?"})).await;
    let token = q["query_token"].as_str().unwrap();
    let (status, _) = post(&app, &format!("/api/session/{other}/query/{token}/confirm"), json!({"confirmed": true})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, h) = call(&app, "GET", &format!("/api/session/{id}/history"), None).await;
    let k = kinds(&h);
    assert!(!k.iter().any(|k| k == "explanation_returned" || k == "alternative_returned"), "{k:?}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_confirms_consume_a_token_once() {
    let app = app();
    let (id, _) = create(&app).await;
    let (_, q) = post(&app, &format!("/api/session/{id}/query"), json!({"text": "Why VPC Z88?"})).await;
    let uri = format!("/api/session/{id}/query/{}/confirm", q["query_token"].as_str().unwrap());
    let tasks: Vec<_> = (0..4)
        .map(|_| {
            let (app, uri) = (app.clone(), uri.clone());
            tokio::spawn(async move { post(&app, &uri, json!({"confirmed": true})).await.0 })
        })
        .collect();
    let mut codes = Vec::new();
    for t in tasks {
        codes.push(t.await.unwrap());
    }
    assert_eq!(codes.iter().filter(|c| **c == StatusCode::OK).count(), 1, "{codes:?}");
    assert_eq!(codes.iter().filter(|c| **c == StatusCode::NOT_FOUND).count(), 3, "{codes:?}");
}

#[tokio::test]
async fn fresh_history_has_two_events() {
    let app = app();
    let (id, v) = create(&app).await;
    let (status, h) = call(&app, "GET", &format!("/api/session/{id}/history"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(kinds(&h), ["session_created", "schedule_generated"]);
    assert_eq!(h[1]["payload"]["schedule"], v["schedule"]);
    assert_eq!(h[0]["timestamp_ms"], fixed_clock());
}

#[tokio::test]
async fn history_is_identical_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(Ok(Catalog::sample()), Some(dir.path()));
    let (id, _) = create(&app).await;
    call(&app, "POST", &format!("/api/session/{id}/schedules/next"), None).await;
    let (_, q1) = post(&app, &format!("/api/session/{id}/query"), json!({"text": "Why not WJW R89 in semester 1?"})).await;
    let t1 = q1["query_token"].as_str().unwrap();
    post(&app, &format!("/api/session/{id}/query/{t1}/confirm"), json!({"confirmed": true})).await;
    let (_, q2) = post(&app, &format!("/api/session/{id}/query"), json!({"text": "Why VPC Z88?"})).await;
    let t2 = q2["query_token"].as_str().unwrap().to_string();
    let (_, before) = call(&app, "GET", &format!("/api/session/{id}/history"), None).await;
    assert!(dir.path().join("sessions").join(format!("{id}.jsonl")).is_file());
    drop(app);

    let app = app_with(Ok(Catalog::sample()), Some(dir.path()));
    let (status, after) = call(&app, "GET", &format!("/api/session/{id}/history"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after, before);

    // The pending question survives; the used one stays used.
    let uri = |t: &str| format!("/api/session/{id}/query/{t}/confirm");
    assert_eq!(post(&app, &uri(t1), json!({"confirmed": true})).await.0, StatusCode::NOT_FOUND);
    let (status, v) = post(&app, &uri(&t2), json!({"confirmed": true})).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["explanation"]["constraint_ids"], json!(["required/VPC Z88"]));

    // Enumeration resumes past both schedules already shown.
    let (_, h) = call(&app, "GET", &format!("/api/session/{id}/history"), None).await;
    let shown: Vec<_> = h
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["kind"] == "schedule_generated")
        .map(|e| placements(&schedule_of(&e["payload"]["schedule"])))
        .collect();
    assert_eq!(shown.len(), 2);
    let (_, v) = call(&app, "POST", &format!("/api/session/{id}/schedules/next"), None).await;
    let third = placements(&schedule_of(&v["schedule"]));
    assert!(shown.iter().all(|s| *s != third));
}

#[tokio::test]
async fn static_files_are_served_from_root() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>hello</p>").unwrap();
    let state = AppState::new(Ok(Catalog::sample()), Gateway::disabled(), None);
    let app = router(Arc::new(state), Some(dir.path()));
    let (status, body) = call(&app, "GET", "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, Value::String("<p>hello</p>".into()));
    let (status, _) = call(&app, "GET", "/", None).await;
    assert_eq!(status, StatusCode::OK);
}
