//! The HTTP edge and the per-repository workers behind it.
//!
//! Deliveries are authenticated and deduplicated on the request path, then
//! queued to the worker owning the repository. Each worker runs its
//! repository's workflows one event at a time, so actions for one repository
//! happen in arrival order while repositories proceed independently.

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use anyhow::Context as _;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::Router;
use forgebot::clock::Clock;
use forgebot::engine::{action_log_line, tick_event, RepoRuntime, Schedule};
use forgebot::gateway::{Admission, Channel, Gateway, GatewaySecrets, RawDelivery};
use forgebot::{Config, Engine, Event, ForgePort, RepoId};
use tokio::net::TcpListener;
use tokio::sync::watch;

pub const BUILD: &str = concat!("forgebot ", env!("CARGO_PKG_VERSION"));

/// Routes events to the worker owning their repository.
#[derive(Clone)]
pub struct Dispatcher {
    routes: Arc<BTreeMap<RepoId, usize>>,
    senders: Arc<Mutex<Vec<mpsc::Sender<Event>>>>,
}

impl Dispatcher {
    /// Queues `event`. False once the dispatcher is closed or when no worker
    /// owns the repository.
    pub fn route(&self, event: Event) -> bool {
        let Some(&index) = self.routes.get(&event.repo) else {
            return false;
        };
        let senders = self.senders.lock().expect("dispatcher lock poisoned");
        senders.get(index).is_some_and(|tx| tx.send(event).is_ok())
    }

    /// Stops accepting events. Workers exit once their queues are empty.
    pub fn close(&self) {
        self.senders.lock().expect("dispatcher lock poisoned").clear();
    }
}

/// One thread per configured repository.
pub struct Workers {
    dispatcher: Dispatcher,
    handles: Vec<JoinHandle<()>>,
}

impl Workers {
    pub fn spawn(runtimes: Vec<RepoRuntime>, forge: Arc<dyn ForgePort>, clock: Arc<dyn Clock>) -> Self {
        let mut routes = BTreeMap::new();
        let mut senders = Vec::new();
        let mut handles = Vec::new();
        for (index, mut runtime) in runtimes.into_iter().enumerate() {
            let repo = runtime.repo_config().repo_id();
            routes.insert(repo.clone(), index);
            if let Some(mirror) = runtime.repo_config().mirror_id() {
                routes.insert(mirror, index);
            }
            let (tx, rx) = mpsc::channel::<Event>();
            senders.push(tx);
            let forge = Arc::clone(&forge);
            let clock = Arc::clone(&clock);
            let handle = std::thread::Builder::new()
                .name(format!("worker {}", repo.full_name()))
                .spawn(move || {
                    for event in rx {
                        let now = clock.now();
                        let _span = tracing::info_span!("event", repo = %event.repo, delivery = %event.delivery_id).entered();
                        for run in runtime.dispatch(forge.as_ref(), now, &event) {
                            for applied in &run.actions {
                                tracing::info!(
                                    "{}",
                                    action_log_line(now, &event.repo, &run.workflow, &applied.action, &applied.result)
                                );
                            }
                        }
                    }
                    tracing::debug!(repo = %repo, "worker drained");
                })
                .expect("spawn worker thread");
            handles.push(handle);
        }
        let dispatcher = Dispatcher { routes: Arc::new(routes), senders: Arc::new(Mutex::new(senders)) };
        Workers { dispatcher, handles }
    }

    pub fn dispatcher(&self) -> Dispatcher {
        self.dispatcher.clone()
    }

    /// Closes the queues and waits for every queued event to be processed.
    pub fn drain(self) {
        self.dispatcher.close();
        for handle in self.handles {
            if handle.join().is_err() {
                tracing::error!("a worker panicked while draining");
            }
        }
    }
}

pub struct AppState {
    pub gateway: Gateway,
    pub dispatcher: Dispatcher,
    pub clock: Arc<dyn Clock>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { BUILD }))
        .route("/webhook/github", post(github))
        .route("/webhook/gitlab", post(gitlab))
        .route("/runner/complete", post(runner))
        .with_state(state)
}

async fn github(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> (StatusCode, String) {
    ingest(&state, Channel::GitHub, &headers, body)
}

async fn gitlab(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> (StatusCode, String) {
    ingest(&state, Channel::GitLab, &headers, body)
}

async fn runner(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> (StatusCode, String) {
    ingest(&state, Channel::Runner, &headers, body)
}

fn ingest(state: &AppState, channel: Channel, headers: &HeaderMap, body: Bytes) -> (StatusCode, String) {
    let headers = headers.iter().filter_map(|(k, v)| Some((k.as_str(), v.to_str().ok()?.to_owned())));
    let delivery = RawDelivery::new(channel, headers, body.to_vec(), state.clock.now());
    match state.gateway.ingest(&delivery) {
        Ok(Admission::Accepted(event)) => {
            let id = event.delivery_id.clone();
            if state.dispatcher.route(event) {
                (StatusCode::ACCEPTED, format!("queued {id}"))
            } else {
                (StatusCode::SERVICE_UNAVAILABLE, "shutting down".into())
            }
        }
        Ok(Admission::Duplicate) => (StatusCode::ACCEPTED, "duplicate".into()),
        Ok(Admission::Ignored) => (StatusCode::ACCEPTED, "ignored".into()),
        Ok(Admission::Unauthorized) => (StatusCode::UNAUTHORIZED, "bad signature".into()),
        Err(e) => {
            tracing::warn!(error = %e, "undecodable delivery");
            (StatusCode::BAD_REQUEST, e.to_string())
        }
    }
}

/// Feeds due ClockTicks to the workers until `stop` flips.
async fn run_schedule(
    mut schedule: Schedule,
    repos: Vec<RepoId>,
    dispatcher: Dispatcher,
    clock: Arc<dyn Clock>,
    every: Duration,
    mut stop: watch::Receiver<bool>,
) {
    let mut interval = tokio::time::interval(every);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        tokio::select! {
            _ = interval.tick() => {
                let now = clock.now();
                for name in schedule.due(now) {
                    for repo in &repos {
                        dispatcher.route(tick_event(repo, &name, now));
                    }
                }
            }
            _ = stop.changed() => return,
        }
    }
}

pub struct ServeOptions {
    /// How often the scheduler checks for due entries.
    pub tick_every: Duration,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { tick_every: Duration::from_secs(60) }
    }
}

/// Serves until `shutdown` resolves, then stops taking requests, drains the
/// repository queues and returns.
pub async fn serve(
    config: Arc<Config>,
    forge: Arc<dyn ForgePort>,
    secrets: GatewaySecrets,
    clock: Arc<dyn Clock>,
    listener: TcpListener,
    options: ServeOptions,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let gateway = Gateway::new(secrets, config.all_repos(), config.ledger_capacity);
    let engine = Engine::new(Arc::clone(&config), Arc::clone(&forge), clock.now());
    let (_, forge, runtimes, schedule, _) = engine.into_parts();
    let repos: Vec<RepoId> = runtimes.iter().map(|r| r.repo_config().repo_id()).collect();
    let workers = Workers::spawn(runtimes, forge, Arc::clone(&clock));

    let (stop_tx, stop_rx) = watch::channel(false);
    let scheduler = tokio::spawn(run_schedule(
        schedule,
        repos,
        workers.dispatcher(),
        Arc::clone(&clock),
        options.tick_every,
        stop_rx,
    ));

    let state = Arc::new(AppState { gateway, dispatcher: workers.dispatcher(), clock });
    tracing::info!(addr = %listener.local_addr()?, build = BUILD, "listening");
    let served = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;

    let _ = stop_tx.send(true);
    let _ = scheduler.await;
    tracing::info!("draining repository queues");
    tokio::task::spawn_blocking(move || workers.drain()).await.context("joining workers")?;
    served.context("server error")?;
    tracing::info!("shutdown complete");
    Ok(())
}

/// Resolves on SIGINT or SIGTERM.
pub async fn termination() {
    let interrupt = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(e) => {
                tracing::warn!(error = %e, "cannot listen for SIGTERM");
                std::future::pending::<()>().await
            }
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = interrupt => {}
        _ = terminate => {}
    }
    tracing::info!("termination requested");
}
