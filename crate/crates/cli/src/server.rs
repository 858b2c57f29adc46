//! HTTP service around one loaded decomposer and an optional predictor.
//!
//! Uploaded images and job outputs live under the store directory:
//! `images/{id}/blurry.png`, `images/{id}/proposals/{k}/` and
//! `images/{id}/jobs/{job}/`. Loaded models are never mutated.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use blurdecomp_core::guidance::direction_color;
use blurdecomp_core::{BlurryImage, GuidanceConfig, Image, MotionGuidance, SharpSequence, DEFAULT_GAMMA};
use blurdecomp_nets::evalkit::reversal_similarity;
use blurdecomp_nets::{Decomposer, Predictor};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::commands::{annotation_guidance, check_divisible, check_guidance};
use crate::error::{CliError, Result};

pub const ADDR_ENV: &str = "BLURDECOMP_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const MAX_PROPOSALS: usize = 16;

struct ImageEntry {
    blurry: Arc<BlurryImage>,
    jobs: HashMap<String, Arc<SharpSequence>>,
    last_job: Option<String>,
    next_job: u64,
}

pub struct AppState {
    model: Arc<Decomposer>,
    predictor: Option<Arc<Predictor>>,
    store: PathBuf,
    images: RwLock<HashMap<String, ImageEntry>>,
    next_image: AtomicU64,
}

impl AppState {
    pub fn new(model: Decomposer, predictor: Option<Predictor>, store: &Path) -> Result<Self> {
        if let Some(p) = &predictor {
            check_guidance(&model.config().guidance, &p.config().guidance)?;
        }
        std::fs::create_dir_all(store.join("images"))?;
        let mut images = HashMap::new();
        let mut max_id = 0;
        // Earlier uploads stay addressable after a restart; their job outputs
        // remain on disk but are not reloaded for reversal scoring.
        for entry in std::fs::read_dir(store.join("images"))? {
            let entry = entry?;
            let id = entry.file_name().to_string_lossy().into_owned();
            let Ok(n) = u64::from_str_radix(&id, 16) else { continue };
            let Ok(image) = Image::load_png(entry.path().join("blurry.png")) else {
                continue;
            };
            max_id = max_id.max(n + 1);
            images.insert(
                id,
                ImageEntry {
                    blurry: Arc::new(blurry_from(image)),
                    jobs: HashMap::new(),
                    last_job: None,
                    next_job: count_dirs(&entry.path().join("jobs")),
                },
            );
        }
        Ok(Self {
            model: Arc::new(model),
            predictor: predictor.map(Arc::new),
            store: store.to_path_buf(),
            images: RwLock::new(images),
            next_image: AtomicU64::new(max_id),
        })
    }

    pub fn guidance(&self) -> GuidanceConfig {
        self.model.config().guidance
    }

    fn image_dir(&self, id: &str) -> PathBuf {
        self.store.join("images").join(id)
    }

    fn blurry(&self, id: &str) -> Result<Arc<BlurryImage>> {
        let images = self.images.read().unwrap();
        images
            .get(id)
            .map(|e| e.blurry.clone())
            .ok_or_else(|| CliError::NotFound(format!("unknown image id {id:?}")))
    }
}

fn count_dirs(p: &Path) -> u64 {
    std::fs::read_dir(p).map(|d| d.count() as u64).unwrap_or(0)
}

fn blurry_from(image: Image) -> BlurryImage {
    BlurryImage {
        image,
        gamma: DEFAULT_GAMMA,
        source_frames: 1,
    }
}

impl IntoResponse for CliError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = json!({"error": {"status": self.status(), "kind": self.kind(), "message": self.to_string()}});
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, CliError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/images", post(upload))
        .route("/images/{id}", get(image_info))
        .route("/images/{id}/blurry.png", get(blurry_png))
        .route("/images/{id}/guidance-proposals", get(proposals))
        .route("/images/{id}/proposals/{k}/{file}", get(proposal_file))
        .route("/images/{id}/decompose", post(decompose))
        .route("/images/{id}/jobs/{job}", get(job_info))
        .route("/images/{id}/jobs/{job}/frames/{t}", get(job_frame))
        .route("/images/{id}/jobs/{job}/guidance.png", get(job_guidance))
        .layer(middleware::from_fn_with_state(state.clone(), guidance_header))
        .with_state(state)
}

/// Every response names the guidance configuration it was produced under.
async fn guidance_header(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let mut res = next.run(req).await;
    if let Ok(v) = HeaderValue::from_str(&serde_json::to_string(&state.guidance()).unwrap_or_default()) {
        res.headers_mut().insert("x-guidance-config", v);
    }
    res
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "guidance": state.guidance(),
        "t": state.model.config().t,
        "predictor": state.predictor.is_some(),
    }))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn read_file(p: &Path) -> ApiResult<Vec<u8>> {
    std::fs::read(p).map_err(|_| CliError::NotFound(format!("{} not found", p.display())))
}

fn check_segment(s: &str) -> ApiResult<()> {
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
        return Err(CliError::NotFound(format!("invalid path segment {s:?}")));
    }
    Ok(())
}

async fn upload(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let image = Image::decode_png(&body).map_err(|e| CliError::Usage(format!("body is not a PNG image: {e}")))?;
    let (h, w) = image.dims();
    check_divisible(h, w)?;
    let id = format!("{:08x}", state.next_image.fetch_add(1, Ordering::SeqCst));
    let dir = state.image_dir(&id);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("blurry.png"), &body)?;
    state.images.write().unwrap().insert(
        id.clone(),
        ImageEntry {
            blurry: Arc::new(blurry_from(image)),
            jobs: HashMap::new(),
            last_job: None,
            next_job: 0,
        },
    );
    Ok(Json(json!({
        "id": id,
        "height": h,
        "width": w,
        "url": format!("/images/{id}"),
        "guidance": state.guidance(),
    })))
}

async fn image_info(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let images = state.images.read().unwrap();
    let e = images
        .get(&id)
        .ok_or_else(|| CliError::NotFound(format!("unknown image id {id:?}")))?;
    let (h, w) = e.blurry.image.dims();
    let mut jobs: Vec<&String> = e.jobs.keys().collect();
    jobs.sort();
    Ok(Json(json!({
        "id": id,
        "height": h,
        "width": w,
        "jobs": jobs,
        "last_job": e.last_job,
        "guidance": state.guidance(),
    })))
}

async fn blurry_png(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    state.blurry(&id)?;
    Ok(png(read_file(&state.image_dir(&id).join("blurry.png"))?))
}

#[derive(Deserialize)]
struct ProposalQuery {
    n: Option<usize>,
    seed: Option<u64>,
}

fn legend(config: &GuidanceConfig) -> Vec<Value> {
    (0..=config.num_directions as u8)
        .map(|l| {
            let c = direction_color(config, l);
            json!({
                "label": l,
                "angle_degrees": config.label_angle(l).map(f64::to_degrees),
                "code": config.code(l),
                "color": c.map(|v| (v * 255.0).round() as u8),
                "opposite": config.opposite(l),
            })
        })
        .collect()
}

async fn proposals(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ProposalQuery>,
) -> ApiResult<Json<Value>> {
    let blurry = state.blurry(&id)?;
    let pred = state
        .predictor
        .clone()
        .ok_or_else(|| CliError::Mismatch("no guidance predictor is loaded".into()))?;
    let n = q.n.unwrap_or(3);
    if n == 0 || n > MAX_PROPOSALS {
        return Err(CliError::Usage(format!("n must be in 1..={MAX_PROPOSALS}, got {n}")));
    }
    let seed = q.seed.unwrap_or(0);
    let samples = tokio::task::spawn_blocking(move || pred.predict_multimodal(&blurry, n, seed))
        .await
        .map_err(|e| CliError::Usage(format!("inference task failed: {e}")))??;
    let dir = state.image_dir(&id).join("proposals");
    let mut out = Vec::new();
    for (k, g) in samples.iter().enumerate() {
        let d = dir.join(k.to_string());
        std::fs::create_dir_all(&d)?;
        std::fs::write(d.join("labels.png"), g.encode_png()?)?;
        g.to_color_image().save_png(d.join("color.png"))?;
        out.push(json!({
            "k": k,
            "labels_url": format!("/images/{id}/proposals/{k}/labels.png"),
            "color_url": format!("/images/{id}/proposals/{k}/color.png"),
            "moving_pixels": g.count_moving(),
        }));
    }
    Ok(Json(json!({
        "id": id,
        "n": n,
        "seed": seed,
        "guidance": state.guidance(),
        "legend": legend(&state.guidance()),
        "proposals": out,
    })))
}

async fn proposal_file(
    State(state): State<Arc<AppState>>,
    UrlPath((id, k, file)): UrlPath<(String, usize, String)>,
) -> ApiResult<Response> {
    state.blurry(&id)?;
    if file != "labels.png" && file != "color.png" {
        return Err(CliError::NotFound(format!("unknown proposal file {file:?}")));
    }
    Ok(png(read_file(
        &state.image_dir(&id).join("proposals").join(k.to_string()).join(file),
    )?))
}

#[derive(Deserialize)]
struct DecomposeQuery {
    /// Job to score reversal similarity against; defaults to the last job.
    compare: Option<String>,
    /// Direction count the client painted with.
    directions: Option<usize>,
}

async fn decompose(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<DecomposeQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let blurry = state.blurry(&id)?;
    let gconf = state.guidance();
    if let Some(n) = q.directions {
        if n != gconf.num_directions {
            return Err(CliError::Mismatch(format!(
                "request uses {n} directions, the loaded checkpoint {}",
                gconf.num_directions
            )));
        }
    }
    let (h, w) = blurry.image.dims();
    let is_png = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("image/png"));
    let (guidance, source) = if is_png {
        let g = MotionGuidance::decode_png(&body, gconf).map_err(|e| match e {
            blurdecomp_core::Error::Domain(m) => CliError::Mismatch(m),
            other => CliError::Usage(format!("guidance map: {other}")),
        })?;
        if g.dims() != (h, w) {
            return Err(CliError::Usage(format!(
                "guidance map is {}x{}, image is {h}x{w}",
                g.height(),
                g.width()
            )));
        }
        (g, "label_map")
    } else {
        let text = std::str::from_utf8(&body)
            .map_err(|_| CliError::InvalidAnnotation("annotation body is not UTF-8".into()))?;
        (annotation_guidance(text, &gconf, h, w)?, "annotation")
    };
    if let Some(c) = &q.compare {
        check_segment(c)?;
    }

    let model = state.model.clone();
    let (b, g) = (blurry.clone(), guidance.clone());
    let seq = tokio::task::spawn_blocking(move || model.decompose(&b, &g))
        .await
        .map_err(|e| CliError::Usage(format!("inference task failed: {e}")))??;
    let seq = Arc::new(seq);

    let (job, previous) = {
        let mut images = state.images.write().unwrap();
        let e = images
            .get_mut(&id)
            .ok_or_else(|| CliError::NotFound(format!("unknown image id {id:?}")))?;
        let against = match &q.compare {
            Some(c) => Some((
                c.clone(),
                e.jobs
                    .get(c)
                    .cloned()
                    .ok_or_else(|| CliError::NotFound(format!("unknown job {c:?} for image {id}")))?,
            )),
            None => e
                .last_job
                .as_ref()
                .and_then(|j| e.jobs.get(j).map(|s| (j.clone(), s.clone()))),
        };
        let job = format!("job-{}", e.next_job);
        e.next_job += 1;
        e.jobs.insert(job.clone(), seq.clone());
        e.last_job = Some(job.clone());
        (job, against)
    };

    let dir = state.image_dir(&id).join("jobs").join(&job);
    std::fs::create_dir_all(&dir)?;
    for (t, f) in seq.frames().iter().enumerate() {
        f.save_png(dir.join(format!("frame_{t:03}.png")))?;
    }
    guidance.save(dir.join("guidance.png"))?;
    if !is_png {
        std::fs::write(dir.join("annotation.txt"), &body)?;
    }
    let reversal = match previous {
        Some((other, prev)) => {
            let r = reversal_similarity(&seq, &prev)?;
            json!({"against": other, "reversed_psnr": r.reversed_psnr, "aligned_psnr": r.aligned_psnr})
        }
        None => Value::Null,
    };
    let frames: Vec<String> = (0..seq.len())
        .map(|t| format!("/images/{id}/jobs/{job}/frames/{t}"))
        .collect();
    let record = json!({
        "image": id,
        "job": job,
        "source": source,
        "t": seq.len(),
        "frames": frames,
        "guidance_url": format!("/images/{id}/jobs/{job}/guidance.png"),
        "moving_pixels": guidance.count_moving(),
        "guidance": gconf,
        "model": state.model.config(),
        "reversal": reversal,
    });
    std::fs::write(dir.join("job.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    Ok(Json(record))
}

fn job_dir(state: &AppState, id: &str, job: &str) -> ApiResult<PathBuf> {
    state.blurry(id)?;
    check_segment(job)?;
    let d = state.image_dir(id).join("jobs").join(job);
    if !d.is_dir() {
        return Err(CliError::NotFound(format!("unknown job {job:?} for image {id}")));
    }
    Ok(d)
}

async fn job_info(
    State(state): State<Arc<AppState>>,
    UrlPath((id, job)): UrlPath<(String, String)>,
) -> ApiResult<Json<Value>> {
    let d = job_dir(&state, &id, &job)?;
    Ok(Json(serde_json::from_slice(&read_file(&d.join("job.json"))?)?))
}

async fn job_frame(
    State(state): State<Arc<AppState>>,
    UrlPath((id, job, t)): UrlPath<(String, String, usize)>,
) -> ApiResult<Response> {
    let d = job_dir(&state, &id, &job)?;
    Ok(png(read_file(&d.join(format!("frame_{t:03}.png")))?))
}

async fn job_guidance(
    State(state): State<Arc<AppState>>,
    UrlPath((id, job)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    let d = job_dir(&state, &id, &job)?;
    Ok(png(read_file(&d.join("guidance.png"))?))
}

pub async fn serve(state: Arc<AppState>, addr: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
