//! HTTP service over trained D2P/P2D artifacts and the shot simulator.
//!
//! State is loaded once at startup and never mutated, so every response is a
//! pure function of the loaded models and the request body.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::{DeserializeOwned, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use semcam::models::{complete_descriptors, d2p, p2d, GaussianPrior, LinearModel, ModelArtifact};
use semcam::pipeline::simulate_document;
use semcam::shot::{preset_catalog, ActorPath, ActorRecord, ClampRanges, ShotParameters, ShotPreset, ShotType};

pub const D2P_FILE: &str = "d2p.json";
pub const P2D_FILE: &str = "p2d.json";
pub const VERSION_HEADER: &str = "x-model-version";

/// Everything the handlers read. Built once, shared behind an `Arc`.
#[derive(Debug)]
pub struct ServiceState {
    pub d2p: LinearModel,
    pub p2d: LinearModel,
    pub prior: GaussianPrior,
    pub descriptors: Vec<String>,
    pub presets: Vec<ShotPreset>,
    pub actor: ActorPath,
    /// Hex SHA-256 over the D2P then the P2D artifact bytes.
    pub version: String,
}

impl ServiceState {
    /// Loads `d2p.json` and `p2d.json` from `dir`.
    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read(&path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
        };
        let (d2p_bytes, p2d_bytes) = (read(D2P_FILE)?, read(P2D_FILE)?);
        let parse = |name: &str, bytes: &[u8]| -> anyhow::Result<ModelArtifact> {
            let text = std::str::from_utf8(bytes).map_err(|e| anyhow::anyhow!("{name}: {e}"))?;
            ModelArtifact::from_json(text).map_err(|e| anyhow::anyhow!("{name}: {e}"))
        };
        let d2p_a = parse(D2P_FILE, &d2p_bytes)?;
        let p2d_a = parse(P2D_FILE, &p2d_bytes)?;
        let mut hasher = Sha256::new();
        hasher.update(&d2p_bytes);
        hasher.update(&p2d_bytes);
        let version = hex::encode(hasher.finalize());
        Self::from_artifacts(&d2p_a, &p2d_a, version)
    }

    pub fn from_artifacts(d2p_a: &ModelArtifact, p2d_a: &ModelArtifact, version: String) -> anyhow::Result<Self> {
        let d2p = d2p_a.model()?;
        let p2d = p2d_a.model()?;
        let descriptors = d2p_a.metadata.descriptors.clone();
        if descriptors.len() != d2p.n_inputs() || p2d.n_outputs() != d2p.n_inputs() {
            anyhow::bail!(
                "artifacts disagree: {} descriptor names, D2P takes {}, P2D yields {}",
                descriptors.len(),
                d2p.n_inputs(),
                p2d.n_outputs()
            );
        }
        if p2d_a.metadata.descriptors != descriptors {
            anyhow::bail!("D2P and P2D artifacts list different descriptors");
        }
        d2p_a.prior.validate()?;
        Ok(ServiceState {
            d2p,
            p2d,
            prior: d2p_a.prior.clone(),
            descriptors,
            presets: preset_catalog(),
            actor: ActorPath::default_run(),
            version,
        })
    }

    fn index_of(&self, name: &str) -> Result<usize, ApiError> {
        self.descriptors
            .iter()
            .position(|d| d == name)
            .ok_or_else(|| ApiError::bad_request(format!("unknown descriptor `{name}`")))
    }
}

pub fn app(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/version", get(version))
        .route("/presets", get(presets))
        .route("/descriptors/complete", post(complete))
        .route("/descriptors/predict", post(predict))
        .route("/shots/generate", post(generate))
        .route("/trajectory/simulate", post(simulate))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such endpoint") })
        .with_state(state)
}

// ------------------------------------------------------------------ errors

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    code: u16,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<semcam::Error> for ApiError {
    fn from(e: semcam::Error) -> Self {
        let status = match e {
            semcam::Error::CollapsedDistance { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            semcam::Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: &self.message,
            code: self.status.as_u16(),
        };
        let text = serde_json::to_string(&body).expect("error body serializes");
        (self.status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn json_text(state: &ServiceState, text: String) -> Response {
    let mut resp = ([(header::CONTENT_TYPE, "application/json")], text).into_response();
    if let Ok(v) = HeaderValue::from_str(&state.version) {
        resp.headers_mut().insert(VERSION_HEADER, v);
    }
    resp
}

fn json<T: Serialize>(state: &ServiceState, value: &T) -> ApiResult {
    let text = serde_json::to_string(value).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(json_text(state, text))
}

/// Bodies are parsed by hand so malformed JSON, NaN literals and unknown
/// fields all come back as `{"error", "code": 400}`.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

// ---------------------------------------------------------------- handlers

#[derive(Serialize)]
struct VersionBody<'a> {
    version: &'a str,
    descriptors: &'a [String],
}

async fn version(State(state): State<Arc<ServiceState>>) -> ApiResult {
    json(
        &state,
        &VersionBody {
            version: &state.version,
            descriptors: &state.descriptors,
        },
    )
}

async fn presets(State(state): State<Arc<ServiceState>>) -> ApiResult {
    json(&state, &state.presets)
}

/// Object entries in document order, duplicates kept.
#[derive(Debug, Default)]
struct Entries(Vec<(String, f64)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Entries;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object of descriptor values")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, f64>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CompleteRequest {
    #[serde(default)]
    values: Entries,
    #[serde(default)]
    locked: Vec<String>,
}

#[derive(Serialize)]
struct DescriptorVector<'a> {
    descriptors: &'a [String],
    values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    locked: Option<Vec<String>>,
}

/// Locked descriptors keep their values; the rest take the conditional mean
/// under the prior.
async fn complete(State(state): State<Arc<ServiceState>>, body: Bytes) -> ApiResult {
    let req: CompleteRequest = parse_body(&body)?;
    let mut values: Vec<Option<f64>> = vec![None; state.descriptors.len()];
    for (name, v) in &req.values.0 {
        let i = state.index_of(name)?;
        if !v.is_finite() {
            return Err(ApiError::bad_request(format!("value for `{name}` is not finite")));
        }
        match values[i] {
            Some(prev) if prev != *v => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    format!("`{name}` given twice with different values ({prev} and {v})"),
                ))
            }
            _ => values[i] = Some(*v),
        }
    }
    let mut locked = vec![false; state.descriptors.len()];
    for name in &req.locked {
        locked[state.index_of(name)?] = true;
    }
    let mut known = Vec::new();
    for (i, is_locked) in locked.iter().enumerate() {
        if *is_locked {
            let v = values[i]
                .ok_or_else(|| ApiError::bad_request(format!("locked descriptor `{}` has no value", state.descriptors[i])))?;
            known.push((i, v));
        }
    }
    let full = complete_descriptors(&state.prior, &known)?;
    json(
        &state,
        &DescriptorVector {
            descriptors: &state.descriptors,
            values: full,
            sigma: Some(state.prior.std_devs()),
            locked: Some(known.iter().map(|&(i, _)| state.descriptors[i].clone()).collect()),
        },
    )
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateRequest {
    descriptors: Vec<f64>,
}

async fn generate(State(state): State<Arc<ServiceState>>, body: Bytes) -> ApiResult {
    let req: GenerateRequest = parse_body(&body)?;
    if req.descriptors.len() != state.descriptors.len() {
        return Err(ApiError::bad_request(format!(
            "expected {} descriptor values, got {}",
            state.descriptors.len(),
            req.descriptors.len()
        )));
    }
    let shot = d2p(&state.d2p, &req.descriptors, &ClampRanges::default())?;
    json(&state, &shot)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictRequest {
    shot: ShotParameters,
    shot_type: String,
}

async fn predict(State(state): State<Arc<ServiceState>>, body: Bytes) -> ApiResult {
    let req: PredictRequest = parse_body(&body)?;
    let shot_type: ShotType = req.shot_type.parse()?;
    req.shot.validate()?;
    let values = p2d(&state.p2d, &req.shot, shot_type)?;
    json(
        &state,
        &DescriptorVector {
            descriptors: &state.descriptors,
            values,
            sigma: None,
            locked: None,
        },
    )
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateRequest {
    shot: ShotParameters,
    duration: f64,
    dt: f64,
    /// Same records as an actor path file; the default run when absent.
    #[serde(default)]
    actor_path: Option<Vec<ActorRecord>>,
}

/// Serialized exactly as `semcam simulate` writes its trajectory file.
async fn simulate(State(state): State<Arc<ServiceState>>, body: Bytes) -> ApiResult {
    let req: SimulateRequest = parse_body(&body)?;
    let custom;
    let actor = match &req.actor_path {
        Some(records) => {
            custom = ActorPath::from_records(records)?;
            &custom
        }
        None => &state.actor,
    };
    let doc = simulate_document(&req.shot, actor, req.duration, req.dt)?;
    let text = serde_json::to_string(&doc).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(json_text(&state, text))
}
