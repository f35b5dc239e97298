//! JSON HTTP API over the patient store and the core library.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get, post, put};
use axum::{Json, Router};
use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tdm_core::estimator::{map_estimate, IndividualEstimate};
use tdm_core::forecast::{
    apply_regimen, predict_at_times, predict_observed, prediction_error, recommend_dose, Band, DoseRecommendation,
    Exposure, Regimen, TargetRange,
};
use tdm_core::pk::{Event, EventTimeline};
use tdm_core::synth::TROUGH_H;
use tower_http::services::ServeDir;

use crate::models::{ModelEntry, ModelSummary, Registry};
use crate::store::{prepared_timeline, Change, DayCovariates, FieldError, PatientSnapshot, Store, StoreError};

/// Hours covered by a what-if regimen when `n_doses` is not given.
pub const DEFAULT_WHATIF_HORIZON_H: f64 = 72.0;
pub const MAX_WHATIF_DOSES: u32 = 500;
pub const MAX_CURVE_POINTS: usize = 10_000;

type CacheKey = (String, u64, String);

pub struct App {
    pub store: Store,
    pub models: Registry,
    pub target: TargetRange,
    pub token: Option<String>,
    cache: Mutex<HashMap<CacheKey, Arc<IndividualEstimate>>>,
}

pub type AppState = Arc<App>;

impl App {
    pub fn new(store: Store, models: Registry, token: Option<String>) -> Self {
        Self {
            store,
            models,
            target: TargetRange::default(),
            token,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Number of cached MAP estimates.
    pub fn cached_estimates(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn model(&self, requested: Option<&str>, snap: &PatientSnapshot) -> Result<(String, ModelEntry), ApiError> {
        let id = requested.unwrap_or(&snap.model);
        self.models
            .get(id)
            .map(|e| (id.to_string(), e.clone()))
            .ok_or_else(|| ApiError::invalid(vec![FieldError::new("model", format!("unknown model {id}"))]))
    }

    /// MAP estimate on every current observation, cached per (patient version, model).
    fn estimate(
        &self,
        snap: &PatientSnapshot,
        model_id: &str,
        entry: &ModelEntry,
    ) -> Result<Arc<IndividualEstimate>, ApiError> {
        let key = (snap.patient_id.clone(), snap.version, model_id.to_string());
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let tl = prepared_timeline(&snap.timeline).map_err(ApiError::core)?;
        let est = Arc::new(map_estimate(&tl, &entry.model, tl.n_observed()).map_err(ApiError::core)?);
        let mut cache = self.cache.lock().expect("cache lock");
        cache.retain(|(p, v, _), _| p != &snap.patient_id || *v == snap.version);
        cache.insert(key, est.clone());
        Ok(est)
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub current_version: Option<u64>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error,
                message: message.into(),
                fields: Vec::new(),
                current_version: None,
            },
        }
    }

    fn invalid(fields: Vec<FieldError>) -> Self {
        let mut e = Self::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "validation",
            StoreError::Invalid(fields.clone()).to_string(),
        );
        e.body.fields = fields;
        e
    }

    fn core(err: tdm_core::Error) -> Self {
        let message = err.to_string();
        Self::invalid(vec![FieldError::new("request", message)])
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "not_found", message),
            StoreError::Exists(_) => Self::new(StatusCode::CONFLICT, "exists", message),
            StoreError::Conflict { current, .. } => {
                let mut err = Self::new(StatusCode::CONFLICT, "conflict", message);
                err.body.current_version = Some(current);
                err
            }
            StoreError::Invalid(fields) => Self::invalid(fields),
            StoreError::Io(_) | StoreError::Corrupt(_) => {
                log::error!("{message}");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// JSON body decoded with the path of the first offending field.
fn decode<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "body".to_string() } else { path };
        ApiError::invalid(vec![FieldError::new(field, e.into_inner().to_string())])
    })?;
    de.end()
        .map_err(|e| ApiError::invalid(vec![FieldError::new("body", e.to_string())]))?;
    Ok(value)
}

fn query<T>(q: Result<Query<T>, axum::extract::rejection::QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v)
        .map_err(|e| ApiError::invalid(vec![FieldError::new("query", e.body_text())]))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Dose,
    Observation,
}

/// Wire form of an event; `type` decides which optional fields apply.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventInput {
    #[serde(rename = "type")]
    pub kind: EventKind,
    pub time: f64,
    #[serde(default)]
    pub amount: Option<f64>,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub mdv: Option<bool>,
}

impl EventInput {
    fn into_event(self, at: &str, errors: &mut Vec<FieldError>) -> Option<Event> {
        let field = |name: &str| format!("{at}.{name}");
        match self.kind {
            EventKind::Dose => {
                if self.value.is_some() {
                    errors.push(FieldError::new(field("value"), "not allowed on a dose"));
                }
                if self.mdv.is_some() {
                    errors.push(FieldError::new(field("mdv"), "not allowed on a dose"));
                }
                match self.amount {
                    Some(amount) => Some(Event::Dose {
                        time: self.time,
                        amount,
                    }),
                    None => {
                        errors.push(FieldError::new(field("amount"), "required for a dose"));
                        None
                    }
                }
            }
            EventKind::Observation => {
                if self.amount.is_some() {
                    errors.push(FieldError::new(field("amount"), "not allowed on an observation"));
                }
                Some(Event::Observation {
                    time: self.time,
                    value: self.value,
                    mdv: self.mdv.unwrap_or(false),
                })
            }
        }
    }
}

fn to_events(inputs: Vec<EventInput>) -> Result<Vec<Event>, ApiError> {
    let mut errors = Vec::new();
    let events: Vec<Event> = inputs
        .into_iter()
        .enumerate()
        .filter_map(|(i, e)| e.into_event(&format!("events[{i}]"), &mut errors))
        .collect();
    if errors.is_empty() {
        Ok(events)
    } else {
        Err(ApiError::invalid(errors))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreatePatient {
    pub patient_id: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_offset")]
    pub pod_offset: i64,
    #[serde(default)]
    pub transplant_date: Option<NaiveDate>,
    #[serde(default)]
    pub covariates: Vec<DayCovariates>,
    #[serde(default)]
    pub events: Vec<EventInput>,
}

fn default_offset() -> i64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddEvents {
    pub version: u64,
    #[serde(default)]
    pub events: Vec<EventInput>,
    #[serde(default)]
    pub covariates: Vec<DayCovariates>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditEvent {
    pub version: u64,
    pub event: EventInput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelQuery {
    pub model: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastQuery {
    pub model: Option<String>,
    pub time: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveQuery {
    pub model: Option<String>,
    /// Defaults to the first event.
    pub start: Option<f64>,
    /// Defaults to the next morning trough.
    pub end: Option<f64>,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_step() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub dose_mg: f64,
    pub interval_h: f64,
    pub start_time: f64,
    #[serde(default)]
    pub n_doses: Option<u32>,
    #[serde(default)]
    pub model: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct PatientView {
    pub patient_id: String,
    pub model: String,
    pub version: u64,
    pub pod_offset: i64,
    pub transplant_date: Option<NaiveDate>,
    pub n_obs: usize,
    pub events: Vec<Event>,
    pub covariates: Vec<DayCovariates>,
}

impl From<&PatientSnapshot> for PatientView {
    fn from(s: &PatientSnapshot) -> Self {
        let tl = &s.timeline;
        Self {
            patient_id: s.patient_id.clone(),
            model: s.model.clone(),
            version: s.version,
            pod_offset: tl.pod_offset(),
            transplant_date: tl.transplant_date,
            n_obs: tl.n_observed(),
            events: tl.events().to_vec(),
            covariates: tl
                .covariates()
                .iter()
                .map(|(&pod, r)| DayCovariates {
                    pod,
                    alb: r.alb,
                    asat: r.asat,
                    weight: r.weight,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ObservationFit {
    /// 1-based ordinal among the patient's observations.
    pub index: usize,
    pub time: f64,
    pub pod: u32,
    pub observed: f64,
    /// Population prediction (η = 0).
    pub pred: f64,
    /// Individual prediction at the current estimate.
    pub ipred: f64,
    pub pe_percent: f64,
}

#[derive(Debug, Serialize)]
pub struct EstimateResponse {
    pub patient_id: String,
    pub model: String,
    pub version: u64,
    /// `a-priori` without observations, `bayesian` otherwise.
    pub kind: &'static str,
    pub n_obs: usize,
    pub eta_names: Vec<String>,
    pub eta: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub observations: Vec<ObservationFit>,
}

#[derive(Debug, Serialize)]
pub struct TroughPoint {
    pub time: f64,
    pub pod: u32,
    pub concentration: f64,
    pub band: Band,
    pub exposure: Exposure,
}

#[derive(Debug, Serialize)]
pub struct WhatIfResponse {
    pub patient_id: String,
    pub model: String,
    pub version: u64,
    pub n_obs: usize,
    pub eta: Vec<f64>,
    pub regimen: Regimen,
    pub troughs: Vec<TroughPoint>,
    /// Scaling of the regimen dose toward the band midpoint at the last trough.
    pub recommendation: DoseRecommendation,
}

#[derive(Debug, Serialize)]
pub struct ForecastResponse {
    pub patient_id: String,
    pub model: String,
    pub version: u64,
    pub n_obs: usize,
    pub time: f64,
    pub pod: u32,
    pub a_priori: f64,
    pub bayesian: f64,
    pub band: Band,
}

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub time: f64,
    pub pod: u32,
    pub a_priori: f64,
    pub ipred: f64,
    pub band: Band,
}

#[derive(Debug, Serialize)]
pub struct CurveResponse {
    pub patient_id: String,
    pub model: String,
    pub version: u64,
    pub n_obs: usize,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub version: &'static str,
}

fn kind(n_obs: usize) -> &'static str {
    if n_obs == 0 {
        "a-priori"
    } else {
        "bayesian"
    }
}

/// First 06:00 strictly after the last event (or after t = 0 without events).
pub fn next_trough_time(tl: &EventTimeline) -> f64 {
    let last = tl.events().last().map_or(0.0, Event::time);
    let day = (last / 24.0).floor();
    let same_day = day * 24.0 + TROUGH_H;
    if same_day > last {
        same_day
    } else {
        same_day + 24.0
    }
}

pub fn estimate_response(
    snap: &PatientSnapshot,
    model_id: &str,
    entry: &ModelEntry,
    est: &IndividualEstimate,
) -> tdm_core::Result<EstimateResponse> {
    let tl = prepared_timeline(&snap.timeline)?;
    let observed = tl.observed();
    let observations = if observed.is_empty() {
        Vec::new()
    } else {
        let pred = predict_observed(&tl, &entry.model, &vec![0.0; entry.model.n_eta()])?;
        let ipred = predict_observed(&tl, &entry.model, &est.eta_hat)?;
        observed
            .iter()
            .enumerate()
            .map(|(i, &(time, obs))| {
                Ok(ObservationFit {
                    index: i + 1,
                    time,
                    pod: u32::try_from(tl.pod_at(time)).unwrap_or(0),
                    observed: obs,
                    pred: pred[i],
                    ipred: ipred[i],
                    pe_percent: prediction_error(ipred[i], obs)?,
                })
            })
            .collect::<tdm_core::Result<_>>()?
    };
    Ok(EstimateResponse {
        patient_id: snap.patient_id.clone(),
        model: model_id.to_string(),
        version: snap.version,
        kind: kind(est.n_obs_used),
        n_obs: est.n_obs_used,
        eta_names: entry.model.eta_map().iter().map(|t| t.name().to_string()).collect(),
        eta: est.eta_hat.clone(),
        objective: est.objective,
        converged: est.converged,
        observations,
    })
}

pub fn whatif_response(
    snap: &PatientSnapshot,
    model_id: &str,
    entry: &ModelEntry,
    est: &IndividualEstimate,
    regimen: Regimen,
    target: &TargetRange,
) -> tdm_core::Result<WhatIfResponse> {
    let tl = apply_regimen(&prepared_timeline(&snap.timeline)?, &regimen)?;
    let times = regimen.trough_times();
    let points = predict_at_times(&tl, &entry.model, &est.eta_hat, &times)?;
    let last = *times.last().expect("n_doses >= 1");
    let recommendation = recommend_dose(&tl, &entry.model, est, target, last)?;
    Ok(WhatIfResponse {
        patient_id: snap.patient_id.clone(),
        model: model_id.to_string(),
        version: snap.version,
        n_obs: est.n_obs_used,
        eta: est.eta_hat.clone(),
        regimen,
        troughs: points
            .into_iter()
            .map(|p| {
                let band = target.band_at(p.pod);
                TroughPoint {
                    time: p.time,
                    pod: p.pod,
                    concentration: p.concentration,
                    band,
                    exposure: band.classify(p.concentration),
                }
            })
            .collect(),
        recommendation,
    })
}

pub fn forecast_response(
    snap: &PatientSnapshot,
    model_id: &str,
    entry: &ModelEntry,
    est: &IndividualEstimate,
    time: f64,
    target: &TargetRange,
) -> tdm_core::Result<ForecastResponse> {
    let tl = prepared_timeline(&snap.timeline)?;
    let zero = vec![0.0; entry.model.n_eta()];
    let a = predict_at_times(&tl, &entry.model, &zero, &[time])?[0];
    let b = predict_at_times(&tl, &entry.model, &est.eta_hat, &[time])?[0];
    Ok(ForecastResponse {
        patient_id: snap.patient_id.clone(),
        model: model_id.to_string(),
        version: snap.version,
        n_obs: est.n_obs_used,
        time,
        pod: a.pod,
        a_priori: a.concentration,
        bayesian: b.concentration,
        band: target.band_at(a.pod),
    })
}

/// `start + k·step` for every k that stays at or below `end`.
pub fn curve_times(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| start + k as f64 * step).collect()
}

pub fn curve_response(
    snap: &PatientSnapshot,
    model_id: &str,
    entry: &ModelEntry,
    est: &IndividualEstimate,
    times: &[f64],
    target: &TargetRange,
) -> tdm_core::Result<CurveResponse> {
    let tl = prepared_timeline(&snap.timeline)?;
    let zero = vec![0.0; entry.model.n_eta()];
    let a = predict_at_times(&tl, &entry.model, &zero, times)?;
    let b = predict_at_times(&tl, &entry.model, &est.eta_hat, times)?;
    Ok(CurveResponse {
        patient_id: snap.patient_id.clone(),
        model: model_id.to_string(),
        version: snap.version,
        n_obs: est.n_obs_used,
        points: a
            .iter()
            .zip(&b)
            .map(|(a, b)| CurvePoint {
                time: a.time,
                pod: a.pod,
                a_priori: a.concentration,
                ipred: b.concentration,
                band: target.band_at(a.pod),
            })
            .collect(),
    })
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok",
        version: env!("CARGO_PKG_VERSION"),
    })
}

async fn list_models(State(app): State<AppState>) -> Json<Vec<ModelSummary>> {
    Json(app.models.summaries())
}

async fn list_patients(State(app): State<AppState>) -> Json<Vec<String>> {
    Json(app.store.ids())
}

async fn create_patient(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<PatientView>), ApiError> {
    let req: CreatePatient = decode(&body)?;
    let model = req.model.unwrap_or_else(|| app.models.default_id().to_string());
    if app.models.get(&model).is_none() {
        return Err(ApiError::invalid(vec![FieldError::new(
            "model",
            format!("unknown model {model}"),
        )]));
    }
    let change = Change::Create {
        patient_id: req.patient_id,
        model,
        pod_offset: req.pod_offset,
        transplant_date: req.transplant_date,
        covariates: req.covariates,
        events: to_events(req.events)?,
    };
    let snap = blocking(move || Ok(app.store.create(change)?)).await?;
    Ok((StatusCode::CREATED, Json(PatientView::from(&*snap))))
}

async fn get_patient(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<PatientView>, ApiError> {
    Ok(Json(PatientView::from(&*app.store.get(&id)?)))
}

async fn add_events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<PatientView>, ApiError> {
    app.store.get(&id)?;
    let req: AddEvents = decode(&body)?;
    let events = to_events(req.events)?;
    let snap = blocking(move || Ok(app.store.add_events(&id, req.version, events, req.covariates)?)).await?;
    Ok(Json(PatientView::from(&*snap)))
}

async fn edit_event(
    State(app): State<AppState>,
    Path((id, index)): Path<(String, usize)>,
    body: Bytes,
) -> Result<Json<PatientView>, ApiError> {
    app.store.get(&id)?;
    let req: EditEvent = decode(&body)?;
    let mut errors = Vec::new();
    let event = req.event.into_event("event", &mut errors);
    let Some(event) = event.filter(|_| errors.is_empty()) else {
        return Err(ApiError::invalid(errors));
    };
    let snap = blocking(move || Ok(app.store.edit_event(&id, req.version, index, event)?)).await?;
    Ok(Json(PatientView::from(&*snap)))
}

async fn get_estimate(
    State(app): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<ModelQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<EstimateResponse>, ApiError> {
    let snap = app.store.get(&id)?;
    let q = query(q)?;
    blocking(move || {
        let (model_id, entry) = app.model(q.model.as_deref(), &snap)?;
        let est = app.estimate(&snap, &model_id, &entry)?;
        estimate_response(&snap, &model_id, &entry, &est).map_err(ApiError::core)
    })
    .await
    .map(Json)
}

async fn post_whatif(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<WhatIfResponse>, ApiError> {
    let snap = app.store.get(&id)?;
    let req: WhatIfRequest = decode(&body)?;
    let mut errs = Vec::new();
    if !(req.dose_mg.is_finite() && req.dose_mg > 0.0) {
        errs.push(FieldError::new("dose_mg", "must be > 0"));
    }
    if !(req.interval_h.is_finite() && req.interval_h > 0.0) {
        errs.push(FieldError::new("interval_h", "must be > 0"));
    }
    if !(req.start_time.is_finite() && req.start_time >= 0.0) {
        errs.push(FieldError::new("start_time", "must be >= 0"));
    }
    if let Some(n) = req.n_doses {
        if n == 0 || n > MAX_WHATIF_DOSES {
            errs.push(FieldError::new(
                "n_doses",
                format!("must be between 1 and {MAX_WHATIF_DOSES}"),
            ));
        }
    }
    if !errs.is_empty() {
        return Err(ApiError::invalid(errs));
    }
    let n_doses = req
        .n_doses
        .unwrap_or_else(|| ((DEFAULT_WHATIF_HORIZON_H / req.interval_h).ceil() as u32).clamp(1, MAX_WHATIF_DOSES));
    let regimen = Regimen {
        dose_mg: req.dose_mg,
        interval_h: req.interval_h,
        start_time: req.start_time,
        n_doses,
    };
    blocking(move || {
        let (model_id, entry) = app.model(req.model.as_deref(), &snap)?;
        let est = app.estimate(&snap, &model_id, &entry)?;
        whatif_response(&snap, &model_id, &entry, &est, regimen, &app.target).map_err(ApiError::core)
    })
    .await
    .map(Json)
}

async fn get_forecast(
    State(app): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<ForecastQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<ForecastResponse>, ApiError> {
    let snap = app.store.get(&id)?;
    let q = query(q)?;
    let time = q.time.unwrap_or_else(|| next_trough_time(&snap.timeline));
    if !(time.is_finite() && time >= 0.0) {
        return Err(ApiError::invalid(vec![FieldError::new("time", "must be >= 0")]));
    }
    blocking(move || {
        let (model_id, entry) = app.model(q.model.as_deref(), &snap)?;
        let est = app.estimate(&snap, &model_id, &entry)?;
        forecast_response(&snap, &model_id, &entry, &est, time, &app.target).map_err(ApiError::core)
    })
    .await
    .map(Json)
}

async fn get_curve(
    State(app): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<CurveQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<CurveResponse>, ApiError> {
    let snap = app.store.get(&id)?;
    let q = query(q)?;
    let start = q
        .start
        .unwrap_or_else(|| snap.timeline.events().first().map_or(0.0, Event::time));
    let end = q.end.unwrap_or_else(|| next_trough_time(&snap.timeline));
    let mut errors = Vec::new();
    if !(start.is_finite() && start >= 0.0) {
        errors.push(FieldError::new("start", "must be >= 0"));
    }
    if !(end.is_finite() && end >= start) {
        errors.push(FieldError::new("end", "must be >= start"));
    }
    if !(q.step.is_finite() && q.step > 0.0) {
        errors.push(FieldError::new("step", "must be > 0"));
    } else if errors.is_empty() && (end - start) / q.step >= MAX_CURVE_POINTS as f64 {
        errors.push(FieldError::new("step", format!("more than {MAX_CURVE_POINTS} points")));
    }
    if !errors.is_empty() {
        return Err(ApiError::invalid(errors));
    }
    let times = curve_times(start, end, q.step);
    blocking(move || {
        let (model_id, entry) = app.model(q.model.as_deref(), &snap)?;
        let est = app.estimate(&snap, &model_id, &entry)?;
        curve_response(&snap, &model_id, &entry, &est, &times, &app.target).map_err(ApiError::core)
    })
    .await
    .map(Json)
}

async fn require_token(State(app): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or wrong bearer token",
            )
            .into_response();
        }
    }
    next.run(req).await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(app: AppState) -> Router {
    let protected = Router::new()
        .route("/api/models", get(list_models))
        .route("/api/patients", get(list_patients).post(create_patient))
        .route("/api/patients/{id}", get(get_patient))
        .route("/api/patients/{id}/events", post(add_events))
        .route("/api/patients/{id}/events/{index}", put(edit_event))
        .route("/api/patients/{id}/estimate", get(get_estimate))
        .route("/api/patients/{id}/whatif", post(post_whatif))
        .route("/api/patients/{id}/forecast", get(get_forecast))
        .route("/api/patients/{id}/curve", get(get_curve))
        .route_layer(middleware::from_fn_with_state(app.clone(), require_token));
    Router::new()
        .route("/api/health", get(health))
        .merge(protected)
        .route("/api/{*rest}", any(not_found))
        .fallback(not_found)
        .with_state(app)
}

/// Serves the files under `dir` (the console build) for every path outside `/api`.
pub fn with_assets(router: Router, dir: &std::path::Path) -> Router {
    router.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn next_trough_is_the_following_morning() {
        let tl =
            |t: f64| EventTimeline::new("p", vec![Event::Dose { time: t, amount: 1.0 }], BTreeMap::new(), 1).unwrap();
        assert_eq!(next_trough_time(&tl(18.5)), 30.0);
        assert_eq!(next_trough_time(&tl(5.0)), 6.0);
        assert_eq!(next_trough_time(&tl(6.0)), 30.0);
    }
}
