use std::future::IntoFuture;
use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

use semcam::crowd::{default_rater, planted_units, LatentRater};
use semcam::models::{ModelArtifact, ONE_HOT_START};
use semcam::pipeline::{self, generate_clips, simulate_document, train_models, ClipRecord, PipelineConfig, Split};
use semcam::shot::{find_preset, preset_catalog, wrap_degrees, ActorPath, ShotParameters, ShotType};
use semcam::space::ScoreMatrix;
use semcam_director::{app, ServiceState, VERSION_HEADER};

struct Fixture {
    dir: tempfile::TempDir,
    clips: Vec<ClipRecord>,
    split: Split,
    d2p: ModelArtifact,
}

#[derive(Clone, Copy)]
enum Kind {
    /// Noise-free scores from a rater whose descriptors ignore the shot
    /// type, so P2D and D2P invert each other on the continuous parameters.
    Exact,
    /// The default rater plus seeded score noise; full-rank prior.
    Noisy,
}

fn exact_rater() -> LatentRater {
    let mut rater = default_rater(1);
    // six descriptors of six parameters keep the D2P inputs full rank
    let drop = rater.descriptor_index("enjoyable").unwrap();
    rater.descriptors.remove(drop);
    rater.w_true.remove(drop);
    for row in &mut rater.w_true {
        row[ONE_HOT_START..].iter_mut().for_each(|w| *w = 0.0);
    }
    rater
}

/// Shots drawn independently of their type, so the one-hot block is not
/// confounded with the parameters the way preset variations are.
fn random_clips(rng: &mut ChaCha8Rng, n: usize) -> Vec<ClipRecord> {
    (0..n)
        .map(|i| ClipRecord {
            clip_id: format!("clip-{i:04}"),
            preset: "random".into(),
            params: ShotParameters::from_array([
                rng.random_range(2.0..30.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-180.0..180.0),
                rng.random_range(-30.0..30.0),
                rng.random_range(5.0..80.0),
                rng.random_range(-1.0..1.0),
            ]),
            shot_type: ShotType::ALL[rng.random_range(0..5)],
            multiples: [0.0; 6],
            extrapolated: false,
            seed: 7,
            probe: None,
        })
        .collect()
}

fn build(kind: Kind) -> Fixture {
    let mut config = PipelineConfig::default();
    let rater = match kind {
        Kind::Exact => {
            config.lambda_min = 1e-9;
            exact_rater()
        }
        Kind::Noisy => default_rater(1),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let clips = match kind {
        Kind::Exact => random_clips(&mut rng, 150),
        Kind::Noisy => generate_clips(&planted_units(), 150, 1).unwrap(),
    };
    let values = DMatrix::from_fn(clips.len(), rater.descriptors.len(), |i, j| {
        let noise = match kind {
            Kind::Exact => 0.0,
            Kind::Noisy => rng.random::<f64>() - 0.5,
        };
        rater.latent_score(&clips[i].params, clips[i].shot_type)[j] + noise
    });
    let ids = clips.iter().map(|c| c.clip_id.clone()).collect();
    let scores = ScoreMatrix::new(ids, rater.descriptors.clone(), values).unwrap();
    let trained = train_models(&clips, &scores, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    pipeline::write_json(&dir.path().join("d2p.json"), &trained.d2p).unwrap();
    pipeline::write_json(&dir.path().join("p2d.json"), &trained.p2d).unwrap();
    Fixture {
        dir,
        clips,
        split: trained.split,
        d2p: trained.d2p,
    }
}

fn fixture_of(kind: Kind) -> &'static Fixture {
    static EXACT: OnceLock<Fixture> = OnceLock::new();
    static NOISY: OnceLock<Fixture> = OnceLock::new();
    match kind {
        Kind::Exact => EXACT.get_or_init(|| build(kind)),
        Kind::Noisy => NOISY.get_or_init(|| build(kind)),
    }
}

fn fixture() -> &'static Fixture {
    fixture_of(Kind::Exact)
}

fn router_of(kind: Kind) -> Router {
    app(Arc::new(ServiceState::load(fixture_of(kind).dir.path()).unwrap()))
}

fn router() -> Router {
    router_of(Kind::Exact)
}

async fn call(router: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn post(router: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, text) = call(router, "POST", uri, &body.to_string()).await;
    (s, serde_json::from_str(&text).unwrap())
}

fn assert_error(status: StatusCode, body: &Value, want: StatusCode) {
    assert_eq!(status, want, "{body}");
    assert_eq!(body["code"], want.as_u16());
    assert!(body["error"].as_str().is_some_and(|e| !e.is_empty()));
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn mu() -> Vec<f64> {
    fixture().d2p.prior.mu.clone()
}

fn names() -> Vec<String> {
    fixture().d2p.metadata.descriptors.clone()
}

#[tokio::test]
async fn presets_mirror_the_catalog() {
    let r = router();
    let req = Request::get("/presets").body(Body::empty()).unwrap();
    let resp = r.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "application/json");
    assert!(resp.headers().contains_key(VERSION_HEADER));
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    let parsed: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 6);
    assert_eq!(parsed, serde_json::to_value(preset_catalog()).unwrap());
    let (_, again) = call(&r, "GET", "/presets", "").await;
    assert_eq!(again.as_bytes(), &body[..]);
}

#[tokio::test]
async fn version_is_the_artifact_hash() {
    use sha2::Digest;
    let dir = fixture().dir.path();
    let mut h = sha2::Sha256::new();
    h.update(std::fs::read(dir.join("d2p.json")).unwrap());
    h.update(std::fs::read(dir.join("p2d.json")).unwrap());
    let (s, text) = call(&router(), "GET", "/version", "").await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["version"], hex::encode(h.finalize()));
    assert_eq!(v["descriptors"].as_array().unwrap().len(), names().len());
}

#[tokio::test]
async fn complete_without_locks_returns_the_prior_mean() {
    let (s, body) = post(&router(), "/descriptors/complete", json!({"values": {}, "locked": []})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(floats(&body["values"]), mu());
    assert_eq!(floats(&body["sigma"]), fixture().d2p.prior.std_devs());
    let (s, body) = post(&router(), "/descriptors/complete", json!({})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(floats(&body["values"]), mu());
}

#[tokio::test]
async fn complete_with_everything_locked_echoes() {
    let names = names();
    let values: serde_json::Map<String, Value> =
        names.iter().enumerate().map(|(i, n)| (n.clone(), json!(20.0 + i as f64 * 0.5))).collect();
    let (s, body) = post(&router(), "/descriptors/complete", json!({"values": values, "locked": names})).await;
    assert_eq!(s, StatusCode::OK);
    let want: Vec<f64> = (0..names.len()).map(|i| 20.0 + i as f64 * 0.5).collect();
    assert_eq!(floats(&body["values"]), want);
}

/// Conditional mean through the precision matrix instead of the covariance
/// blocks the service uses.
fn precision_oracle(locked: usize, value: f64) -> Vec<f64> {
    let prior = &fixture_of(Kind::Noisy).d2p.prior;
    let lambda = prior.covariance().try_inverse().unwrap();
    let free: Vec<usize> = (0..7).filter(|&i| i != locked).collect();
    let l11 = DMatrix::from_fn(6, 6, |a, b| lambda[(free[a], free[b])]);
    let l12 = DVector::from_fn(6, |a, _| lambda[(free[a], locked)]);
    let shift = l11.try_inverse().unwrap() * l12 * (value - prior.mu[locked]);
    let mut out = prior.mu.clone();
    out[locked] = value;
    for (a, &f) in free.iter().enumerate() {
        out[f] -= shift[a];
    }
    out
}

#[tokio::test]
async fn complete_one_locked_matches_the_oracle() {
    let f = fixture_of(Kind::Noisy);
    let prior = &f.d2p.prior;
    let r = router_of(Kind::Noisy);
    for (i, name) in f.d2p.metadata.descriptors.iter().enumerate() {
        let v = prior.mu[i] + 2.0 * prior.std_dev(i);
        // unlocked values are slider positions and do not condition
        let other = &f.d2p.metadata.descriptors[(i + 1) % 7];
        let (s, body) = post(&r, "/descriptors/complete", json!({"values": {name: v, other: 99.0}, "locked": [name]})).await;
        assert_eq!(s, StatusCode::OK);
        let got = floats(&body["values"]);
        assert_eq!(got[i], v);
        for (g, w) in got.iter().zip(precision_oracle(i, v)) {
            assert!((g - w).abs() < 1e-9, "{name}: {g} vs {w}");
        }
        assert_eq!(body["locked"], json!([name]));
    }
}

#[tokio::test]
async fn complete_rejects_bad_requests() {
    let r = router();
    let (s, b) = post(&r, "/descriptors/complete", json!({"values": {"sleepy": 1.0}, "locked": []})).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST);
    assert!(b["error"].as_str().unwrap().contains("sleepy"));
    let (s, b) = post(&r, "/descriptors/complete", json!({"values": {}, "locked": ["sleepy"]})).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST);
    let (s, b) = post(&r, "/descriptors/complete", json!({"values": {}, "locked": ["calm"]})).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST);
    let (s, b) = post(&r, "/descriptors/complete", json!({"values": {}, "extra": 1})).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST);

    let (s, text) = call(&r, "POST", "/descriptors/complete", r#"{"values": {"calm": NaN}, "locked": ["calm"]}"#).await;
    assert_error(s, &serde_json::from_str(&text).unwrap(), StatusCode::BAD_REQUEST);
    let (s, text) = call(&r, "POST", "/descriptors/complete", "{not json").await;
    assert_error(s, &serde_json::from_str(&text).unwrap(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn inconsistent_duplicate_keys_conflict() {
    let r = router();
    let names = names();
    let mut entries: Vec<String> = names.iter().map(|n| format!("\"{n}\": 25")).collect();
    entries.push("\"calm\": 30".into());
    let body = format!(r#"{{"values": {{{}}}, "locked": {}}}"#, entries.join(", "), serde_json::to_string(&names).unwrap());
    let (s, text) = call(&r, "POST", "/descriptors/complete", &body).await;
    assert_error(s, &serde_json::from_str(&text).unwrap(), StatusCode::CONFLICT);

    // repeating a key with the same value is harmless
    let body = r#"{"values": {"calm": 26, "calm": 26}, "locked": ["calm", "calm"]}"#;
    let (s, text) = call(&r, "POST", "/descriptors/complete", body).await;
    assert_eq!(s, StatusCode::OK, "{text}");
}

fn train_centroid() -> [f64; 6] {
    let f = fixture();
    let train: Vec<&ClipRecord> = f.clips.iter().filter(|c| f.split.train.contains(&c.clip_id)).collect();
    let mut sum = [0.0; 6];
    for c in &train {
        for (s, v) in sum.iter_mut().zip(c.params.to_array()) {
            *s += v;
        }
    }
    sum.map(|s| s / train.len() as f64)
}

#[tokio::test]
async fn generate_at_the_prior_mean_gives_the_training_centroid() {
    let (s, body) = post(&router(), "/shots/generate", json!({"descriptors": mu()})).await;
    assert_eq!(s, StatusCode::OK);
    let shot: ShotParameters = serde_json::from_value(body["shot"].clone()).unwrap();
    for (g, w) in shot.to_array().iter().zip(train_centroid()) {
        assert!((g - w).abs() < 1e-9, "{g} vs {w}");
    }
    assert!(body["shot_type"].is_string());
    assert_eq!(body["flags"]["clamped"], false);
    assert!(body["flags"]["tie_broken"].is_boolean());
}

#[tokio::test]
async fn extreme_establishing_pulls_the_camera_back() {
    let r = router();
    let i = names().iter().position(|n| n == "establishing").unwrap();
    let prior = &fixture().d2p.prior;
    let (_, completed) = post(
        &r,
        "/descriptors/complete",
        json!({"values": {"establishing": prior.mu[i] + 2.0 * prior.std_dev(i)}, "locked": ["establishing"]}),
    )
    .await;
    let (_, high) = post(&r, "/shots/generate", json!({"descriptors": completed["values"]})).await;
    let (_, mean) = post(&r, "/shots/generate", json!({"descriptors": mu()})).await;
    assert!(high["shot"]["rho"].as_f64().unwrap() > mean["shot"]["rho"].as_f64().unwrap());
}

#[tokio::test]
async fn generate_rejects_malformed_vectors() {
    let r = router();
    let (s, b) = post(&r, "/shots/generate", json!({"descriptors": [1.0, 2.0]})).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST);
    let (s, b) = post(&r, "/shots/generate", json!({"descriptors": ["a", 1, 1, 1, 1, 1, 1]})).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST);
    let (s, text) = call(&r, "POST", "/shots/generate", r#"{"descriptors": [NaN, 1, 1, 1, 1, 1, 1]}"#).await;
    assert_error(s, &serde_json::from_str(&text).unwrap(), StatusCode::BAD_REQUEST);
    let (s, b) = post(&r, "/shots/generate", json!({"descriptors": null})).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn predict_inverts_generate() {
    let r = router();
    let f = fixture();
    let scores: Vec<ClipRecord> = f.clips.iter().filter(|c| f.split.train.contains(&c.clip_id) && c.shot_type == ShotType::Orbit).cloned().collect();
    let mut centroid = [0.0; 6];
    for c in &scores {
        for (s, v) in centroid.iter_mut().zip(c.params.to_array()) {
            *s += v / scores.len() as f64;
        }
    }
    // the model is exact on training clips, so it is exact at their mean
    let (s, body) = post(&r, "/descriptors/predict", json!({"shot": ShotParameters::from_array(centroid), "shot_type": "orbit"})).await;
    assert_eq!(s, StatusCode::OK);
    let rater = exact_rater();
    let mut want = vec![0.0; names().len()];
    for c in &scores {
        for (w, v) in want.iter_mut().zip(rater.latent_score(&c.params, c.shot_type)) {
            *w += v / scores.len() as f64;
        }
    }
    for (g, w) in floats(&body["values"]).iter().zip(want) {
        assert!((g - w).abs() < 1e-3, "{g} vs {w}");
    }

    let prior = &fixture().d2p.prior;
    for (i, name) in names().iter().enumerate() {
        let v = prior.mu[i] + prior.std_dev(i);
        let (_, completed) = post(&r, "/descriptors/complete", json!({"values": {name: v}, "locked": [name]})).await;
        let (_, generated) = post(&r, "/shots/generate", json!({"descriptors": completed["values"]})).await;
        assert_eq!(generated["flags"]["clamped"], false);
        let (_, predicted) = post(&r, "/descriptors/predict", json!({"shot": generated["shot"], "shot_type": generated["shot_type"]})).await;
        for (g, w) in floats(&predicted["values"]).iter().zip(floats(&completed["values"])) {
            assert!((g - w).abs() < 1e-3, "{name}: {g} vs {w}");
        }
    }
}

#[tokio::test]
async fn predict_rejects_unknown_shot_types() {
    let r = router();
    let shot = find_preset("Orbit").unwrap().params;
    let (s, b) = post(&r, "/descriptors/predict", json!({"shot": shot, "shot_type": "crane"})).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST);
    let (s, b) = post(&r, "/descriptors/predict", json!({"shot": {"rho": 5.0}, "shot_type": "orbit"})).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST);
    let mut bad = shot;
    bad.phi = 120.0;
    let (s, b) = post(&r, "/descriptors/predict", json!({"shot": bad, "shot_type": "orbit"})).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn simulate_orbit_sweeps_three_hundred_degrees() {
    let shot = find_preset("Orbit").unwrap().params;
    let (s, text) = call(&router(), "POST", "/trajectory/simulate", &json!({"shot": shot, "duration": 15.0, "dt": 0.1}).to_string()).await;
    assert_eq!(s, StatusCode::OK);
    let want = serde_json::to_string(&simulate_document(&shot, &ActorPath::default_run(), 15.0, 0.1).unwrap()).unwrap();
    assert_eq!(text, want);

    let doc: Value = serde_json::from_str(&text).unwrap();
    let samples = doc["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 151);
    let bearing = |s: &Value| {
        let (c, a) = (floats(&s["cam"]), floats(&s["actor"]));
        (c[1] - a[1]).atan2(c[0] - a[0]).to_degrees()
    };
    // the default run is a straight line, so bearing change is all orbit
    let swept: f64 = samples.windows(2).map(|w| wrap_degrees(bearing(&w[1]) - bearing(&w[0]))).sum();
    assert!((swept - 300.0).abs() < 1e-6, "{swept}");
}

#[tokio::test]
async fn simulate_accepts_a_custom_actor_path() {
    let shot = find_preset("Follow 0").unwrap().params;
    let records: Vec<Value> = (0..=50).map(|i| json!({"t": i as f64 * 0.1, "actor": [i as f64 * 0.2, 0.0, 0.0]})).collect();
    let (s, doc) = post(&router(), "/trajectory/simulate", json!({"shot": shot, "duration": 5.0, "dt": 0.5, "actor_path": records})).await;
    assert_eq!(s, StatusCode::OK);
    let samples = doc["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 11);
    assert!((floats(&samples[10]["actor"])[0] - 10.0).abs() < 1e-9);
}

#[tokio::test]
async fn simulate_errors() {
    let r = router();
    let orbit = find_preset("Orbit").unwrap().params;
    for (duration, dt) in [(15.0, 0.0), (15.0, -0.1), (-1.0, 0.1), (1e6, 0.1)] {
        let (s, b) = post(&r, "/trajectory/simulate", json!({"shot": orbit, "duration": duration, "dt": dt})).await;
        assert_error(s, &b, StatusCode::BAD_REQUEST);
    }
    let (s, b) = post(&r, "/trajectory/simulate", json!({"shot": orbit})).await;
    assert_error(s, &b, StatusCode::BAD_REQUEST);

    // closing at 3 m/s from 2 m away reaches the actor
    let collapsing = ShotParameters::from_array([2.0, 3.0, 0.0, 0.0, 20.0, 0.0]);
    let (s, b) = post(&r, "/trajectory/simulate", json!({"shot": collapsing, "duration": 15.0, "dt": 0.1})).await;
    assert_error(s, &b, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn unknown_routes_use_the_error_shape() {
    let (s, text) = call(&router(), "GET", "/nope", "").await;
    assert_error(s, &serde_json::from_str(&text).unwrap(), StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_requests_agree() {
    let r = router();
    let shot = find_preset("Fly-by").unwrap().params;
    let requests = [
        ("/descriptors/complete", json!({"values": {"calm": 27.0, "nervous": 22.0}, "locked": ["calm", "nervous"]})),
        ("/trajectory/simulate", json!({"shot": shot, "duration": 15.0, "dt": 0.05})),
        ("/shots/generate", json!({"descriptors": mu()})),
        ("/descriptors/predict", json!({"shot": shot, "shot_type": "flyby"})),
    ];
    for (uri, body) in requests {
        let mut handles = Vec::new();
        for _ in 0..32 {
            let (r, body) = (r.clone(), body.to_string());
            handles.push(tokio::spawn(async move { call(&r, "POST", uri, &body).await }));
        }
        let mut results = Vec::new();
        for h in handles {
            results.push(h.await.unwrap());
        }
        assert_eq!(results[0].0, StatusCode::OK, "{uri}: {}", results[0].1);
        assert!(results.iter().all(|x| *x == results[0]), "{uri}");
    }
}

#[tokio::test]
async fn serves_over_a_real_socket() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(axum::serve(listener, router()).into_future());
    let raw = tokio::task::spawn_blocking(move || {
        let mut s = std::net::TcpStream::connect(addr).unwrap();
        s.write_all(b"GET /presets HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        out
    })
    .await
    .unwrap();
    assert!(raw.starts_with("HTTP/1.1 200"), "{raw}");
    assert!(raw.contains("Fly-by"));
}

#[test]
fn loading_reports_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let err = ServiceState::load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("d2p.json"), "{err}");
    std::fs::write(dir.path().join("d2p.json"), "{}").unwrap();
    std::fs::write(dir.path().join("p2d.json"), "{}").unwrap();
    assert!(ServiceState::load(dir.path()).is_err());
}

