use std::fs;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use proptest::prelude::*;
use serde_json::{json, Value};
use tower::ServiceExt;

use spkeval::design::{design_experiment, read_plan, write_plan, ExperimentPlan, Inventory};
use spkeval::io::parse_responses;
use spkeval::perceptual::{unfold, Decision};
use spkeval::serve::{router, stimulus_token, AppState, SessionStore};
use spkeval::{SpeakerId, Stimulus, Style};

fn inventory(n_talkers: usize) -> Inventory {
    let mut stimuli = Vec::new();
    for t in 0..n_talkers {
        let spk = SpeakerId::new(format!("Spk{t:02}")).unwrap();
        for i in 0..7 {
            stimuli.push(Stimulus::new(format!("Spk{t:02}_read{i}"), spk.clone(), Style::Read).unwrap());
            stimuli.push(Stimulus::new(format!("Spk{t:02}_conv{i}"), spk.clone(), Style::Conversation).unwrap());
        }
    }
    Inventory::new(stimuli).unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    plan: ExperimentPlan,
    app: AppState,
}

impl Fixture {
    fn new(n_talkers: usize, listeners: usize, subset: usize, seed: u64) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let inv = inventory(n_talkers);
        let plan = design_experiment(&inv, listeners, subset, seed).unwrap();
        write_plan(&plan, &dir.path().join("plan")).unwrap();
        let plan = read_plan(&dir.path().join("plan")).unwrap();
        let stimuli = dir.path().join("stimuli");
        fs::create_dir(&stimuli).unwrap();
        for s in &inv.stimuli {
            fs::write(stimuli.join(format!("{}.wav", s.id)), format!("RIFF{}", s.id)).unwrap();
        }
        let app = Self::open(dir.path(), &plan);
        Fixture { dir, plan, app }
    }

    fn open(dir: &Path, plan: &ExperimentPlan) -> AppState {
        AppState {
            store: Arc::new(SessionStore::open(plan, &dir.join("responses.tsv")).unwrap()),
            stimuli_dir: dir.join("stimuli"),
            static_dir: None,
        }
    }

    fn reopen(&mut self) {
        self.app = Self::open(self.dir.path(), &self.plan);
    }

    fn log(&self) -> String {
        fs::read_to_string(self.dir.path().join("responses.tsv")).unwrap()
    }
}

async fn call(app: &AppState, req: Request<Body>) -> (StatusCode, Vec<u8>, Option<String>) {
    let resp = router(app.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string());
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body, ctype)
}

async fn get(app: &AppState, uri: &str) -> (StatusCode, Vec<u8>) {
    let (s, b, _) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, b)
}

async fn post(app: &AppState, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::post("/response")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b, _) = call(app, req).await;
    (s, b)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn answer(trial: &Value, listener: &str, decision: &str, confidence: i64) -> String {
    json!({
        "listener_id": listener,
        "trial_id": trial["trial_id"],
        "order": trial["order"],
        "decision": decision,
        "confidence": confidence,
    })
    .to_string()
}

#[tokio::test]
async fn session_lists_remaining_trials() {
    let f = Fixture::new(6, 2, 3, 1);
    let (s, b) = get(&f.app, "/session/L001").await;
    assert_eq!(s, StatusCode::OK);
    let v = json_of(&b);
    assert_eq!(v["total"], 18);
    assert_eq!(v["trials"].as_array().unwrap().len(), 18);
    assert_eq!(v["completed"], false);
    let (s, _) = get(&f.app, "/session/nobody").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = get(&f.app, "/progress/nobody").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn response_is_logged_once() {
    let f = Fixture::new(6, 1, 3, 2);
    let (_, b) = get(&f.app, "/session/L001").await;
    let trial = json_of(&b)["trials"][0].clone();
    let body = answer(&trial, "L001", "same", 4);
    let (s, b) = post(&f.app, &body).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    assert_eq!(json_of(&b)["responses_received"], 1);

    let log = f.log();
    let rows = parse_responses(log.as_bytes()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].trial_id, trial["trial_id"].as_str().unwrap());
    assert_eq!(rows[0].decision, Decision::Same);
    assert_eq!(unfold(&rows[0]), 4.0);
    assert!(log.lines().nth(1).unwrap().contains("\tsame\t4\t"));

    let (s, _) = post(&f.app, &body).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(f.log(), log);
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let f = Fixture::new(6, 1, 3, 3);
    let (_, b) = get(&f.app, "/session/L001").await;
    let trial = json_of(&b)["trials"][0].clone();
    let before = f.log();
    for body in [
        answer(&trial, "L001", "same", 6),
        answer(&trial, "L001", "same", -1),
        answer(&trial, "L001", "maybe", 2),
        "{not json".to_string(),
        json!({"listener_id": "L001"}).to_string(),
    ] {
        let (s, _) = post(&f.app, &body).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
    }
    let flipped = json!({
        "listener_id": "L001",
        "trial_id": trial["trial_id"],
        "order": if trial["order"] == "AB" { "BA" } else { "AB" },
        "decision": "diff",
        "confidence": 1,
    });
    assert_eq!(post(&f.app, &flipped.to_string()).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&f.app, &answer(&trial, "L999", "same", 2)).await.0, StatusCode::NOT_FOUND);
    let mut unknown = trial.clone();
    unknown["trial_id"] = json!("no-such-trial");
    assert_eq!(post(&f.app, &answer(&unknown, "L001", "same", 2)).await.0, StatusCode::NOT_FOUND);
    assert_eq!(f.log(), before);
}

#[tokio::test]
async fn completed_session_is_empty() {
    let f = Fixture::new(6, 1, 2, 4);
    let (_, b) = get(&f.app, "/session/L001").await;
    let trials = json_of(&b)["trials"].as_array().unwrap().clone();
    for (i, t) in trials.iter().enumerate() {
        let (s, _) = post(&f.app, &answer(t, "L001", if i % 2 == 0 { "same" } else { "diff" }, 3)).await;
        assert_eq!(s, StatusCode::OK);
    }
    let v = json_of(&get(&f.app, "/session/L001").await.1);
    assert_eq!(v["completed"], true);
    assert!(v["trials"].as_array().unwrap().is_empty());
    let p = json_of(&get(&f.app, "/progress/L001").await.1);
    assert_eq!(p["cursor"], 12);
    assert_eq!(p["completed"], true);
}

#[tokio::test]
async fn cursor_tracks_first_unanswered_trial() {
    let f = Fixture::new(6, 1, 2, 5);
    let trials = json_of(&get(&f.app, "/session/L001").await.1)["trials"].clone();
    post(&f.app, &answer(&trials[1], "L001", "same", 2)).await;
    let p = json_of(&get(&f.app, "/progress/L001").await.1);
    assert_eq!(p["cursor"], 0);
    post(&f.app, &answer(&trials[0], "L001", "same", 2)).await;
    let p = json_of(&get(&f.app, "/progress/L001").await.1);
    assert_eq!(p["cursor"], 2);
    assert_eq!(p["responses_received"], 2);
}

#[tokio::test]
async fn stimuli_are_served_by_token() {
    let f = Fixture::new(6, 1, 2, 6);
    let t = &f.plan.listeners[0].trials[0].trial;
    let token = stimulus_token(f.plan.seed, &t.stim_a.id);
    let (s, body, ctype) = call(
        &f.app,
        Request::get(format!("/stimulus/{token}")).body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("audio/wav"));
    assert_eq!(body, format!("RIFF{}", t.stim_a.id).into_bytes());
    let (s, _) = get(&f.app, &format!("/stimulus/{}", t.stim_a.id)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn restart_rebuilds_state_and_drops_torn_row() {
    let mut f = Fixture::new(6, 2, 2, 7);
    let trials = json_of(&get(&f.app, "/session/L002").await.1)["trials"].clone();
    for i in 0..3 {
        post(&f.app, &answer(&trials[i], "L002", "diff", 5)).await;
    }
    let before = json_of(&get(&f.app, "/progress/L002").await.1);
    let complete = f.log();
    // a write cut short by a crash
    let mut torn = complete.clone();
    torn.push_str("L002\tL002-t0");
    fs::write(f.dir.path().join("responses.tsv"), &torn).unwrap();

    f.reopen();
    assert_eq!(f.log(), complete);
    assert_eq!(json_of(&get(&f.app, "/progress/L002").await.1), before);
    assert_eq!(post(&f.app, &answer(&trials[0], "L002", "diff", 5)).await.0, StatusCode::CONFLICT);
    assert_eq!(post(&f.app, &answer(&trials[3], "L002", "same", 0)).await.0, StatusCode::OK);
    assert_eq!(parse_responses(f.log().as_bytes()).unwrap().len(), 4);
}

#[tokio::test]
async fn static_assets_are_optional() {
    let mut f = Fixture::new(6, 1, 2, 8);
    assert_eq!(get(&f.app, "/").await.0, StatusCode::NOT_FOUND);
    let ui = f.dir.path().join("ui");
    fs::create_dir(&ui).unwrap();
    fs::write(ui.join("index.html"), "<html></html>").unwrap();
    f.app.static_dir = Some(ui);
    let (s, body, ctype) = call(&f.app, Request::get("/").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"<html></html>");
    assert!(ctype.unwrap().starts_with("text/html"));
}

fn contains(haystack: &[u8], needle: &str) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle.as_bytes())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn client_payloads_hide_speakers_and_labels(
        seed in any::<u64>(),
        talkers in 3usize..8,
        listeners in 1usize..3,
        answers in prop::collection::vec((any::<bool>(), 0i64..=6), 0..10),
    ) {
        let subset = 2 + (seed % (talkers as u64 - 1)) as usize;
        let f = Fixture::new(talkers, listeners, subset, seed);
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let mut payloads: Vec<Vec<u8>> = Vec::new();
        rt.block_on(async {
            for l in &f.plan.listeners {
                let id = l.listener_id.as_str();
                let (_, session) = get(&f.app, &format!("/session/{id}")).await;
                let trials = json_of(&session)["trials"].as_array().unwrap().clone();
                payloads.push(session);
                for (i, (same, conf)) in answers.iter().enumerate() {
                    let t = &trials[i % trials.len()];
                    let (_, b) = post(&f.app, &answer(t, id, if *same { "same" } else { "diff" }, *conf)).await;
                    payloads.push(b);
                }
                payloads.push(get(&f.app, &format!("/session/{id}")).await.1);
                payloads.push(get(&f.app, &format!("/progress/{id}")).await.1);
            }
        });
        let inv = inventory(talkers);
        for p in &payloads {
            for spk in &inv.speakers {
                prop_assert!(!contains(p, spk.as_str()), "{}", String::from_utf8_lossy(p));
            }
            prop_assert!(!contains(p, "tar"), "{}", String::from_utf8_lossy(p));
            prop_assert!(!contains(p, "non"), "{}", String::from_utf8_lossy(p));
        }
    }
}

#[tokio::test]
async fn scripted_session_round_trip() {
    let f = Fixture::new(6, 1, 2, 12);
    let trials = json_of(&get(&f.app, "/session/L001").await.1)["trials"].as_array().unwrap().clone();
    assert_eq!(trials.len(), 12);
    let mut entered = Vec::new();
    for (i, t) in trials.iter().enumerate() {
        let decision = if i % 3 == 0 { "diff" } else { "same" };
        let confidence = (i % 6) as i64;
        let body = answer(t, "L001", decision, confidence);
        assert_eq!(post(&f.app, &body).await.0, StatusCode::OK);
        let after = f.log();
        // double submit
        assert_eq!(post(&f.app, &body).await.0, StatusCode::CONFLICT);
        assert_eq!(f.log(), after);
        let sign = if decision == "same" { 1.0 } else { -1.0 };
        entered.push((t["trial_id"].as_str().unwrap().to_string(), sign * confidence as f64));
    }
    let rows = parse_responses(f.log().as_bytes()).unwrap();
    assert_eq!(rows.len(), 12);
    let mut seen = std::collections::HashSet::new();
    for (r, (tid, value)) in rows.iter().zip(&entered) {
        assert!(seen.insert((r.listener_id.clone(), r.trial_id.clone(), r.order)));
        assert_eq!(&r.trial_id, tid);
        assert_eq!(unfold(r), *value);
        assert!(r.timestamp.is_some());
    }
}
