//! HTTP front end: `POST /score`, `GET /healthz`, `GET /stats`.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use relevance::serve::{latency_summary, CacheStats, FlopTotals, LatencySummary, ScoreCache, ScoreRequest};
use serde::Serialize;

use crate::scorer::AnyScorer;

/// Request bodies above this many bytes are refused with 413.
pub const DEFAULT_BODY_LIMIT: usize = 8 << 20;

/// Latency samples kept for percentiles.
const LATENCY_WINDOW: usize = 10_000;

#[derive(Debug)]
pub struct AppState {
    pub scorer: AnyScorer,
    pub cache: Option<ScoreCache>,
    log: Mutex<Log>,
}

#[derive(Debug, Default)]
struct Log {
    requests: u64,
    latencies: VecDeque<Duration>,
    last_hits: usize,
    last_candidates: usize,
}

impl AppState {
    pub fn new(scorer: AnyScorer, cache: Option<ScoreCache>) -> Self {
        Self {
            scorer,
            cache,
            log: Mutex::new(Log::default()),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Stats {
    pub requests: u64,
    pub checkpoint: String,
    pub tau: f64,
    pub cache_enabled: bool,
    pub cache: CacheStats,
    /// Score hits over lookups since start.
    pub hit_rate: f64,
    /// Share of the most recent request's candidates served from cache.
    pub last_request_hit_rate: f64,
    pub latency: LatencySummary,
    pub flops: FlopTotals,
    /// `1 − executed/padded` attention multiply-adds since start.
    pub flop_savings_ratio: f64,
}

pub fn router(state: Arc<AppState>, body_limit: usize) -> Router {
    Router::new()
        .route("/score", post(score))
        .route("/healthz", get(|| async { "ok" }))
        .route("/stats", get(stats))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

fn error(status: StatusCode, message: String) -> Response {
    (status, Json(serde_json::json!({ "error": message }))).into_response()
}

async fn score(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let request: ScoreRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let worker = Arc::clone(&state);
    let outcome = tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        let r = worker.scorer.score(worker.cache.as_ref(), &request);
        (r, start.elapsed())
    })
    .await;
    match outcome {
        Ok((Ok(resp), elapsed)) => {
            let mut log = state.log.lock();
            log.requests += 1;
            if log.latencies.len() == LATENCY_WINDOW {
                log.latencies.pop_front();
            }
            log.latencies.push_back(elapsed);
            log.last_hits = resp.cache_hits.iter().filter(|&&h| h).count();
            log.last_candidates = resp.cache_hits.len();
            drop(log);
            Json(resp).into_response()
        }
        Ok((Err(e @ (relevance::Error::Input(_) | relevance::Error::Config(_))), _)) => {
            error(StatusCode::BAD_REQUEST, e.to_string())
        }
        Ok((Err(e), _)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("scoring task failed: {e}")),
    }
}

pub fn snapshot_stats(state: &AppState) -> Stats {
    let log = state.log.lock();
    let samples: Vec<Duration> = log.latencies.iter().copied().collect();
    let cache = state.cache.as_ref().map(ScoreCache::stats).unwrap_or_default();
    let flops = state.scorer.flops();
    Stats {
        requests: log.requests,
        checkpoint: state.scorer.checkpoint_id().to_string(),
        tau: state.scorer.tau(),
        cache_enabled: state.cache.is_some(),
        hit_rate: cache.hit_rate(),
        cache,
        last_request_hit_rate: if log.last_candidates == 0 {
            0.0
        } else {
            log.last_hits as f64 / log.last_candidates as f64
        },
        latency: latency_summary(&samples),
        flop_savings_ratio: flops.savings_ratio(),
        flops,
    }
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<Stats> {
    Json(snapshot_stats(&state))
}

/// Serves until ctrl-c.
pub async fn run(addr: &str, state: Arc<AppState>, body_limit: usize) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state, body_limit))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
