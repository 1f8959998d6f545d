use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Duration, TimeZone, Utc};
use http_body_util::BodyExt;
use lbt_core::clock::SimulatedClock;
use lbt_core::llm::mock::SyntheticProvider;
use lbt_core::llm::{Backoff, LlmGateway};
use lbt_core::materials::QuestionBank;
use lbt_core::service::{Platform, PlatformConfig};
use lbt_core::store::{EventStore, FileStore, MemoryStore};
use lbt_server::{router, AppState, SIM_TIME_HEADER};
use serde_json::{json, Value};
use tower::ServiceExt;

const ADMIN: &str = "admin-secret";

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 3, 9, 0, 0).unwrap()
}

fn platform(store: Arc<dyn EventStore>) -> Arc<Platform> {
    let bank_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/sample_bank.json");
    let bank = QuestionBank::load(&bank_path).unwrap();
    let config = PlatformConfig {
        seed: 17,
        ..PlatformConfig::default()
    };
    let gateway = LlmGateway::single("default", Arc::new(SyntheticProvider::new(17)), Backoff::NONE);
    Arc::new(Platform::new(config, bank, gateway, store).unwrap())
}

fn app_with(platform: Arc<Platform>, test_mode: bool) -> Router {
    router(AppState {
        platform,
        clock: Arc::new(SimulatedClock::new(t0())),
        test_mode,
        admin_token: Some(ADMIN.into()),
    })
}

fn app(test_mode: bool) -> Router {
    app_with(platform(Arc::new(MemoryStore::new())), test_mode)
}

struct Reply {
    status: StatusCode,
    text: String,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }
}

async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, at: Option<DateTime<Utc>>, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    if let Some(at) = at {
        req = req.header(SIM_TIME_HEADER, at.to_rfc3339());
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    Reply {
        status,
        text: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

/// A participant as seen through the API.
struct Learner<'a> {
    app: &'a Router,
    id: String,
    token: String,
    now: DateTime<Utc>,
}

impl<'a> Learner<'a> {
    async fn enroll(app: &'a Router, name: &str, language: &str, now: DateTime<Utc>) -> Learner<'a> {
        let r = call(
            app,
            "POST",
            "/participants",
            None,
            Some(now),
            Some(json!({"display_name": name, "native_language": language})),
        )
        .await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
        let v = r.json();
        Learner {
            app,
            id: v["participant"]["id"].as_str().unwrap().into(),
            token: v["token"].as_str().unwrap().into(),
            now,
        }
    }

    async fn send(&self, method: &str, path: &str, body: Option<Value>) -> Reply {
        let uri = format!("/participants/{}{path}", self.id);
        call(self.app, method, &uri, Some(&self.token), Some(self.now), body).await
    }

    async fn ok(&self, method: &str, path: &str, body: Option<Value>) -> Value {
        let r = self.send(method, path, body).await;
        assert!(r.status.is_success(), "{method} {path}: {} {}", r.status, r.text);
        if r.text.is_empty() {
            Value::Null
        } else {
            r.json()
        }
    }

    async fn survey(&self, stage: &str) {
        let form = self.ok("GET", &format!("/surveys/{stage}"), None).await;
        let n = form["questions"].as_array().unwrap().len();
        let answers: Vec<String> = (0..n).map(|i| format!("answer {i}")).collect();
        let r = self.send("POST", &format!("/surveys/{stage}"), Some(json!({"answers": answers}))).await;
        assert_eq!(r.status, StatusCode::NO_CONTENT, "{}", r.text);
    }

    async fn answer_zeroes(&self, test: &Value) -> Value {
        let n = test["test"]["questions"].as_array().unwrap().len();
        self.ok("POST", "/answers", Some(json!({"answers": vec![0; n]}))).await
    }

    /// Runs one round from start to Posttest-1 through the API.
    async fn round(&mut self, round: usize) {
        self.now += Duration::minutes(1);
        let pretest = self.ok("POST", "/rounds", None).await;
        assert_eq!(pretest["round"], round);
        assert_eq!(pretest["test"]["questions"].as_array().unwrap().len(), 30);
        assert!(pretest["test"]["questions"][0].get("correct_index").is_none());
        self.now += Duration::minutes(5);
        let graded = self.answer_zeroes(&pretest).await;
        assert_eq!(graded["feedback"].as_array().unwrap().len(), 3);

        let view = self.ok("GET", "", None).await;
        let r = &view["rounds"][round];
        let condition = r["condition"].as_str().unwrap().to_owned();
        for item in r["study"].as_array().unwrap() {
            let item_id = item["item_id"].as_str().unwrap();
            let keyword = item["keyword"].as_str().unwrap();
            assert!(item.get("corrections").is_none());
            let wrong = json!({"item_id": item_id, "replacements": [{"incorrect": keyword, "correct": "zzz"}]});
            let mut last = Value::Null;
            for _ in 0..5 {
                self.now += Duration::seconds(5);
                last = self.ok("POST", "/corrections", Some(wrong.clone())).await;
            }
            assert_eq!(last["status"], "revealed");
            self.now += Duration::seconds(10);
            let text = json!({"item_id": item_id, "text": format!("{keyword} is the wrong word here.")});
            if condition == "proposed" {
                let turn = self.ok("POST", "/turns", Some(text.clone())).await;
                assert!(turn["status"] == "question" || turn.get("error").is_some(), "{turn}");
                self.now += Duration::seconds(181);
                let late = self.ok("POST", "/turns", Some(text)).await;
                assert_eq!(late["status"], "expired");
            } else {
                let r = self.send("POST", "/notes", Some(text)).await;
                assert_eq!(r.status, StatusCode::NO_CONTENT);
                assert_eq!(self.send("POST", "/turns", Some(json!({"item_id": item_id, "text": "hi"}))).await.status, StatusCode::CONFLICT);
                self.now += Duration::seconds(181);
            }
        }
        self.now += Duration::minutes(1);
        let post1 = self.ok("POST", "/study/finish", None).await;
        assert_eq!(post1["test"]["kind"], "posttest1");
        let graded = self.answer_zeroes(&post1).await;
        assert_eq!(graded["feedback"][0]["entries"][0].get("explanation"), None);
        self.survey(if condition == "proposed" { "after_proposed" } else { "after_baseline" }).await;
    }

    async fn retention(&mut self, kind: &str) {
        let due = self.ok("GET", "/due", None).await;
        let due = due.as_array().unwrap();
        assert_eq!(due.len(), 2, "{due:?}");
        assert!(due.iter().all(|d| d["kind"] == kind));
        for round in 0..2 {
            let test = self.ok("POST", "/posttests", Some(json!({"round": round, "kind": kind}))).await;
            assert_eq!(test["test"]["kind"], kind);
            self.now += Duration::minutes(3);
            let n = test["test"]["questions"].as_array().unwrap().len();
            self.ok("POST", "/answers", Some(json!({"round": round, "answers": vec![1; n]}))).await;
        }
        self.survey("after_retention").await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn two_learners_complete_the_protocol_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let store: Arc<dyn EventStore> = Arc::new(FileStore::open(&log).unwrap());
    let platform = platform(store);
    let app = app_with(platform.clone(), true);

    let mut learners = vec![
        Learner::enroll(&app, "Aiko", "japanese", t0()).await,
        Learner::enroll(&app, "Ben", "english", t0() + Duration::minutes(2)).await,
    ];
    assert_eq!(learners[0].id, "p001");
    for l in &mut learners {
        let view = l.ok("GET", "", None).await;
        assert_eq!(view["available_surveys"], json!(["pre_experiment"]));
        l.survey("pre_experiment").await;
        l.round(0).await;
        l.round(1).await;
    }
    let day0 = learners.iter().map(|l| l.now).max().unwrap();
    for (kind, hours) in [("posttest2", 72), ("posttest3", 168)] {
        for l in &mut learners {
            l.now = day0 + Duration::hours(hours);
            l.retention(kind).await;
        }
    }
    let view = learners[0].ok("GET", "", None).await;
    assert!(view["rounds"].as_array().unwrap().iter().all(|r| r["phase"] == "done"));

    let csv = call(&app, "GET", "/admin/analytics?format=csv", Some(ADMIN), None, None).await;
    assert_eq!(csv.status, StatusCode::OK, "{}", csv.text);
    assert_eq!(csv.text.lines().count(), 1 + 2 * 26);
    let jsonl = call(&app, "GET", "/admin/analytics?format=jsonl", Some(ADMIN), None, None).await;
    assert_eq!(jsonl.text.lines().count(), 2 * 26);

    let events = learners[1].send("GET", "/events", None).await;
    assert_eq!(events.status, StatusCode::OK);
    assert!(events.text.lines().all(|l| l.contains("\"session_id\":\"p002\"")));
    let all = call(&app, "GET", "/admin/events", Some(ADMIN), None, None).await;
    assert_eq!(all.text.lines().count(), std::fs::read_to_string(&log).unwrap().lines().count());
    assert!(!all.text.contains(&learners[0].token));

    // A restarted service sees the same state.
    let reopened = self::platform(Arc::new(FileStore::open(&log).unwrap()));
    assert_eq!(reopened.all_states(), platform.all_states());
}

#[tokio::test]
async fn tokens_guard_participant_routes() {
    let app = app(true);
    let a = Learner::enroll(&app, "A", "english", t0()).await;
    let b = Learner::enroll(&app, "B", "english", t0()).await;
    assert_eq!(call(&app, "GET", "/participants/p001", None, None, None).await.status, StatusCode::UNAUTHORIZED);
    assert_eq!(
        call(&app, "GET", "/participants/p001", Some(&b.token), None, None).await.status,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(call(&app, "GET", "/participants/p001", Some(&a.token), None, None).await.status, StatusCode::OK);
    assert_eq!(call(&app, "GET", "/participants/p001", Some(ADMIN), None, None).await.status, StatusCode::OK);
    assert_eq!(call(&app, "GET", "/admin/events", Some(&a.token), None, None).await.status, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&app, "GET", "/admin/analytics", None, None, None).await.status, StatusCode::UNAUTHORIZED);
    let missing = call(&app, "GET", "/participants/p999", Some(ADMIN), None, None).await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
    assert_eq!(missing.json()["error"], "not_found");
}

#[tokio::test]
async fn simulated_time_needs_test_mode() {
    let app = app(false);
    let r = call(
        &app,
        "POST",
        "/participants",
        None,
        Some(t0()),
        Some(json!({"display_name": "x", "native_language": "english"})),
    )
    .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(r.json()["message"].as_str().unwrap().contains(SIM_TIME_HEADER));
    let r = call(&app, "POST", "/participants", None, None, Some(json!({"display_name": "x", "native_language": "english"}))).await;
    assert_eq!(r.status, StatusCode::CREATED);
}

#[tokio::test]
async fn protocol_violations_are_conflicts() {
    let app = app(true);
    let mut l = Learner::enroll(&app, "A", "japanese", t0()).await;
    let r = l.send("POST", "/study/finish", None).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["error"], "conflict");
    assert_eq!(l.send("GET", "/surveys/after_proposed", None).await.status, StatusCode::CONFLICT);
    assert_eq!(l.send("GET", "/surveys/nonsense", None).await.status, StatusCode::NOT_FOUND);
    l.ok("POST", "/rounds", None).await;
    assert_eq!(l.send("POST", "/rounds", None).await.status, StatusCode::CONFLICT);
    l.now += Duration::minutes(1);
    let r = l.send("POST", "/answers", Some(json!({"answers": [0, 1]}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST, "{}", r.text);
    let r = l.send("POST", "/posttests", Some(json!({"round": 0, "kind": "posttest2"}))).await;
    assert_eq!(r.status, StatusCode::CONFLICT, "{}", r.text);
    let r = call(&app, "GET", "/admin/analytics?format=xml", Some(ADMIN), None, None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = call(&app, "GET", "/admin/analytics", Some(ADMIN), None, None).await;
    assert_eq!(r.status, StatusCode::CONFLICT, "{}", r.text);
}

#[tokio::test]
async fn health_is_open() {
    let r = call(&app(false), "GET", "/health", None, None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["status"], "ok");
}
