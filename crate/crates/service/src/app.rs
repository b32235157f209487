//! Shared state and HTTP handlers.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::routing::{any, get, post};
use axum::{Json, Router};
use learnpath_core::background::{impute_background, load_background, normalize_grades, BackgroundProfile};
use learnpath_core::concept_map::{load_concept_map, ConceptMap};
use learnpath_core::ingest::load_question_bank;
use learnpath_core::rl::{Learner, QTable};
use learnpath_core::strategies::{is_trainable, layer_of, StrategyFactory, TrainingData, REGISTRY, REINFORCEMENT_LEARNING};
use learnpath_core::{
    InteractionEvent, Outcome, QuestionBank, RecommendContext, Recommendation, SessionId, SessionState, Strategy,
    StrategyError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tower_http::services::{ServeDir, ServeFile};

use crate::api::*;
use crate::config::ServiceConfig;
use crate::error::{ApiError, ApiJson};
use crate::store::{EventStore, SessionRecord};

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("question bank: {0}")]
    Bank(#[from] learnpath_core::ingest::BankError),
    #[error("concept map: {0}")]
    Map(#[from] learnpath_core::concept_map::ConceptMapError),
    #[error("background: {0}")]
    Background(#[from] learnpath_core::background::BackgroundError),
    #[error("store: {0}")]
    Store(#[from] crate::store::StoreError),
    #[error("strategy `{name}`: {source}")]
    Build {
        name: &'static str,
        #[source]
        source: learnpath_core::strategies::BuildError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A published model. Sessions hold on to the one they started with.
#[derive(Clone)]
pub struct Snapshot {
    pub strategy: Arc<dyn Strategy>,
    pub version: u64,
}

pub struct ApiSession {
    pub state: SessionState,
    pub snapshot: Snapshot,
    rng: ChaCha8Rng,
    expires_at: Instant,
}

pub struct AppState {
    pub config: ServiceConfig,
    pub bank: QuestionBank,
    pub map: ConceptMap,
    pub profiles: Vec<BackgroundProfile>,
    factory: StrategyFactory,
    snapshots: RwLock<BTreeMap<&'static str, Snapshot>>,
    sessions: Mutex<HashMap<SessionId, Arc<tokio::sync::Mutex<ApiSession>>>>,
    store: Mutex<EventStore>,
    training: AtomicBool,
    session_counter: AtomicU64,
}

/// Held while a model is being trained; releases the flag on drop.
pub struct TrainingGuard<'a>(&'a AtomicBool);

impl Drop for TrainingGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

fn qtable_path(model_dir: &Path) -> PathBuf {
    model_dir.join("qtable.json")
}

/// Highest `{name}-v{n}.json` already on disk.
fn latest_version(model_dir: &Path, name: &str) -> u64 {
    let prefix = format!("{name}-v");
    std::fs::read_dir(model_dir)
        .into_iter()
        .flatten()
        .filter_map(Result::ok)
        .filter_map(|e| {
            let file = e.file_name().into_string().ok()?;
            file.strip_prefix(&prefix)?.strip_suffix(".json")?.parse::<u64>().ok()
        })
        .max()
        .unwrap_or(0)
}

impl AppState {
    /// Loads the data files, replays the event log and builds every strategy.
    /// Trainable models get a version one past the newest snapshot on disk.
    pub fn load(config: ServiceConfig) -> Result<Self, StartupError> {
        let bank = QuestionBank::new(load_question_bank(config.resolve(&config.bank))?);
        let (map, warnings) = load_concept_map(config.resolve(&config.concept_nodes), config.resolve(&config.concept_arcs))?;
        for w in warnings {
            tracing::warn!("concept map: {w:?}");
        }
        let profiles = match &config.background {
            Some(p) => impute_background(&normalize_grades(&load_background(config.resolve(p))?, &config.grade_scales)?)?,
            None => Vec::new(),
        };
        let model_dir = config.resolve(&config.model_dir);
        std::fs::create_dir_all(&model_dir).map_err(|source| StartupError::Io {
            path: model_dir.clone(),
            source,
        })?;
        let store = EventStore::open(&config.resolve(&config.event_log), &config.resolve(&config.session_log))?;

        let epsilon = config.strategies.reinforcement_learning.epsilon;
        let learner = match QTable::load(qtable_path(&model_dir)) {
            Ok(table) => Learner::with_table(table, epsilon),
            Err(_) => Learner::new(epsilon),
        };
        let factory = StrategyFactory::with_learner(config.strategies.clone(), learner);

        let state = Self {
            config,
            bank,
            map,
            profiles,
            factory,
            snapshots: RwLock::new(BTreeMap::new()),
            sessions: Mutex::new(HashMap::new()),
            store: Mutex::new(store),
            training: AtomicBool::new(false),
            session_counter: AtomicU64::new(0),
        };
        for (name, _) in REGISTRY {
            let (strategy, seen) = state.build(name).map_err(|source| StartupError::Build { name, source })?;
            let version = if is_trainable(name) {
                let v = latest_version(&model_dir, name) + 1;
                state.write_snapshot(name, v, strategy.as_ref(), seen)?;
                v
            } else {
                1
            };
            state.snapshots.write().unwrap().insert(name, Snapshot { strategy, version });
        }
        Ok(state)
    }

    /// Builds from the current log; also returns how many events it saw.
    fn build(&self, name: &str) -> Result<(Arc<dyn Strategy>, usize), learnpath_core::strategies::BuildError> {
        let events = self.store.lock().unwrap().events().to_vec();
        let strategy = self.factory.build(
            name,
            TrainingData {
                bank: &self.bank,
                map: &self.map,
                events: &events,
                profiles: &self.profiles,
            },
        )?;
        Ok((strategy, events.len()))
    }

    /// `models/{name}-v{version}.json`, recording the length of the event-log
    /// prefix the model was fitted on.
    fn write_snapshot(&self, name: &str, version: u64, strategy: &dyn Strategy, events: usize) -> Result<(), StartupError> {
        let dir = self.config.resolve(&self.config.model_dir);
        let io = |path: PathBuf| move |source| StartupError::Io { path, source };
        let body = serde_json::json!({
            "strategy": name,
            "version": version,
            "events": events,
            "model": strategy.snapshot(),
        });
        let path = dir.join(format!("{name}-v{version}.json"));
        std::fs::write(&path, body.to_string()).map_err(io(path.clone()))?;
        if name == REINFORCEMENT_LEARNING {
            let table = self.factory.learner().lock().unwrap().table.clone();
            let path = qtable_path(&dir);
            table.save(&path).map_err(io(path.clone()))?;
        }
        Ok(())
    }

    pub fn snapshot(&self, name: &str) -> Option<Snapshot> {
        self.snapshots.read().unwrap().get(name).cloned()
    }

    pub fn model_version(&self, name: &str) -> Option<u64> {
        self.snapshots.read().unwrap().get(name).map(|s| s.version)
    }

    /// Claims the single training slot, or `None` when it is taken.
    pub fn try_begin_training(&self) -> Option<TrainingGuard<'_>> {
        self.training
            .compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed)
            .ok()
            .map(|_| TrainingGuard(&self.training))
    }

    pub fn event_count(&self) -> usize {
        self.store.lock().unwrap().events().len()
    }

    fn ttl(&self) -> Duration {
        Duration::from_secs(self.config.session_ttl_secs)
    }

    /// Refits `name` from the full event log and publishes it under the next
    /// version. Blocking; call off the async runtime.
    pub fn retrain(&self, name: &str) -> Result<u64, ApiError> {
        let name = REGISTRY
            .iter()
            .map(|(n, _)| *n)
            .find(|n| *n == name)
            .ok_or_else(|| ApiError::UnknownStrategy(name.to_owned()))?;
        if !is_trainable(name) {
            return Err(ApiError::NotTrainable(name.to_owned()));
        }
        let _guard = self.try_begin_training().ok_or(ApiError::TrainingInProgress)?;
        let (strategy, seen) = self.build(name).map_err(|e| ApiError::Internal(e.to_string()))?;
        let version = self.model_version(name).unwrap_or(0) + 1;
        self.write_snapshot(name, version, strategy.as_ref(), seen)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        self.snapshots.write().unwrap().insert(name, Snapshot { strategy, version });
        tracing::info!(strategy = name, version, "model published");
        Ok(version)
    }

    /// Drops sessions idle for twice the TTL. Between one and two TTLs an
    /// expired session still answers 410 rather than 404.
    fn sweep(&self) {
        let cutoff = Instant::now().checked_sub(self.ttl()).unwrap_or_else(Instant::now);
        self.sessions.lock().unwrap().retain(|_, s| match s.try_lock() {
            Ok(s) => s.expires_at > cutoff,
            Err(_) => true,
        });
    }

    fn session(&self, id: &SessionId) -> Option<Arc<tokio::sync::Mutex<ApiSession>>> {
        self.sessions.lock().unwrap().get(id).cloned()
    }

    pub fn active_sessions(&self) -> usize {
        let now = Instant::now();
        self.sessions
            .lock()
            .unwrap()
            .values()
            .filter(|s| s.try_lock().map_or(true, |s| !s.state.finished && s.expires_at > now))
            .count()
    }
}

/// Asks the session's strategy for the next question and serves it. `Ok(None)`
/// when the topic has nothing left.
fn serve_next(app: &AppState, session: &mut ApiSession, prior: &[InteractionEvent]) -> Result<Option<Recommendation>, ApiError> {
    let pool = app.bank.pool_for(&session.state);
    let ctx = RecommendContext {
        bank: &app.bank,
        session: &session.state,
        pool: &pool,
        prior_events: prior,
    };
    let rec = match session.snapshot.strategy.recommend(&ctx, &mut session.rng) {
        Ok(rec) => rec,
        Err(StrategyError::EmptyPool) => return Ok(None),
        Err(e) => return Err(ApiError::Internal(e.to_string())),
    };
    if !pool.iter().any(|q| q.id == rec.question_id) {
        return Err(ApiError::Internal(format!(
            "strategy {} picked {} outside the pool",
            session.state.strategy_name, rec.question_id
        )));
    }
    session
        .state
        .serve(rec.question_id.clone())
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Some(rec))
}

fn question_view(app: &AppState, session: &ApiSession) -> Result<QuestionView, ApiError> {
    let id = session
        .state
        .pending()
        .ok_or_else(|| ApiError::Internal("no question pending".into()))?;
    let q = app
        .bank
        .get(id)
        .ok_or_else(|| ApiError::Internal(format!("question {id} left the bank")))?;
    Ok(QuestionView::new(q, session.state.asked.len()))
}

fn summary(state: &SessionState) -> SessionSummary {
    SessionSummary {
        score: state.correct_count(),
        answered: state.events.len(),
        outcomes: state
            .events
            .iter()
            .map(|e| AnsweredQuestion {
                question_id: e.question_id.clone(),
                outcome: e.outcome,
            })
            .collect(),
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::Internal(e.to_string())
}

type Shared = Arc<AppState>;

async fn create_session(
    State(app): State<Shared>,
    ApiJson(req): ApiJson<CreateSession>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    if req.user_id.trim().is_empty() {
        return Err(ApiError::InvalidRequest("user_id must not be empty".into()));
    }
    let strategy = req.strategy.unwrap_or_else(|| app.config.default_strategy.clone());
    if layer_of(&strategy).is_none() {
        return Err(ApiError::UnknownStrategy(strategy));
    }
    let available = app.bank.topic(&req.topic).len();
    if available == 0 {
        return Err(ApiError::UnknownTopic(req.topic));
    }
    let length = req.length.unwrap_or(learnpath_core::domain::DEFAULT_SESSION_LENGTH);
    if length == 0 {
        return Err(ApiError::InvalidRequest("length must be positive".into()));
    }
    if available < length {
        return Err(ApiError::InsufficientQuestions {
            topic: req.topic,
            available,
            requested: length,
        });
    }
    app.sweep();

    let snapshot = app.snapshot(&strategy).ok_or_else(|| ApiError::UnknownStrategy(strategy.clone()))?;
    let session_id = SessionId::new(uuid::Uuid::new_v4().to_string());
    let seed = app
        .config
        .seed
        .wrapping_add(app.session_counter.fetch_add(1, Ordering::Relaxed));
    let mut session = ApiSession {
        state: SessionState::new(session_id.clone(), req.user_id.clone(), req.topic.clone(), strategy.clone())
            .with_length(length),
        snapshot,
        rng: ChaCha8Rng::seed_from_u64(seed),
        expires_at: Instant::now() + app.ttl(),
    };
    let prior = app.store.lock().unwrap().prior_events(&session.state.user_id, &session_id);
    let rec = serve_next(&app, &mut session, &prior)?
        .ok_or_else(|| ApiError::Internal("strategy returned nothing for a non-empty topic".into()))?;
    let question = question_view(&app, &session)?;

    app.store
        .lock()
        .unwrap()
        .append_session(&SessionRecord::Started {
            session_id: session_id.clone(),
            user_id: session.state.user_id.clone(),
            topic: session.state.topic.clone(),
            strategy: strategy.clone(),
            model_version: session.snapshot.version,
            seed,
            length,
            timestamp: now_ms(),
        })
        .map_err(internal)?;
    let body = SessionCreated {
        session_id: session_id.clone(),
        strategy,
        model_version: session.snapshot.version,
        length,
        question,
        recommendation: RecommendationView::from(&rec),
    };
    app.sessions
        .lock()
        .unwrap()
        .insert(session_id, Arc::new(tokio::sync::Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn answer(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
    ApiJson(req): ApiJson<AnswerRequest>,
) -> Result<Json<AnswerResponse>, ApiError> {
    let session_id = SessionId::new(id);
    let handle = app
        .session(&session_id)
        .ok_or_else(|| ApiError::SessionNotFound(session_id.to_string()))?;
    let mut session = handle.lock().await;
    if session.state.finished {
        return Err(ApiError::SessionFinished(session_id.to_string()));
    }
    if Instant::now() >= session.expires_at {
        return Err(ApiError::SessionExpired(session_id.to_string()));
    }
    let expected = session
        .state
        .pending()
        .cloned()
        .ok_or_else(|| ApiError::Internal("no question pending".into()))?;
    if expected != req.question_id {
        return Err(ApiError::QuestionMismatch {
            expected,
            got: req.question_id,
        });
    }
    let question = app.bank.get(&expected).ok_or_else(|| internal("pending question left the bank"))?;
    let outcome = match (req.choice_index, req.dont_know, req.skip) {
        (Some(i), false, false) if i < question.options.len() => {
            if question.is_correct_choice(i) {
                Outcome::Correct
            } else {
                Outcome::Wrong
            }
        }
        (Some(i), false, false) => {
            return Err(ApiError::InvalidRequest(format!(
                "choice_index {i} out of range for {} options",
                question.options.len()
            )))
        }
        (None, true, false) => Outcome::DontKnow,
        (None, false, true) => Outcome::Skipped,
        _ => {
            return Err(ApiError::InvalidRequest(
                "set exactly one of choice_index, dont_know or skip".into(),
            ))
        }
    };
    let timestamp = now_ms().max(session.state.last_event().map_or(i64::MIN, |e| e.timestamp));
    let event = InteractionEvent {
        user_id: session.state.user_id.clone(),
        session_id: session_id.clone(),
        question_id: expected,
        outcome,
        elapsed_ms: req.elapsed_ms,
        click_count: req.click_count,
        timestamp,
    };
    app.store.lock().unwrap().append_event(event.clone()).map_err(internal)?;
    session.state.record(event.clone()).map_err(internal)?;
    session.expires_at = Instant::now() + app.ttl();

    let prior = app.store.lock().unwrap().prior_events(&session.state.user_id, &session_id);
    let session = &mut *session;
    {
        let pool = app.bank.pool_for(&session.state);
        let ctx = RecommendContext {
            bank: &app.bank,
            session: &session.state,
            pool: &pool,
            prior_events: &prior,
        };
        session.snapshot.strategy.observe(&ctx, &event);
    }

    let correct = outcome.is_attempt().then(|| outcome.is_correct());
    let next = if session.state.finished {
        None
    } else {
        let rec = serve_next(&app, session, &prior)?;
        if rec.is_none() {
            session.state.close_exhausted();
        }
        rec
    };
    let Some(rec) = next else {
        {
            let pool = app.bank.pool_for(&session.state);
            let ctx = RecommendContext {
                bank: &app.bank,
                session: &session.state,
                pool: &pool,
                prior_events: &prior,
            };
            session.snapshot.strategy.finish(&ctx);
        }
        app.store
            .lock()
            .unwrap()
            .append_session(&SessionRecord::Finished {
                session_id,
                answered: session.state.events.len(),
                correct: session.state.correct_count(),
                timestamp: now_ms(),
            })
            .map_err(internal)?;
        return Ok(Json(AnswerResponse {
            correct,
            outcome,
            finished: true,
            next_question: None,
            recommendation: None,
            summary: Some(summary(&session.state)),
        }));
    };
    Ok(Json(AnswerResponse {
        correct,
        outcome,
        finished: false,
        next_question: Some(question_view(&app, session)?),
        recommendation: Some(RecommendationView::from(&rec)),
        summary: None,
    }))
}

async fn strategies(State(app): State<Shared>) -> Json<Vec<StrategyInfo>> {
    Json(
        REGISTRY
            .iter()
            .map(|(name, layer)| StrategyInfo {
                name: (*name).to_owned(),
                layer: *layer,
                trainable: is_trainable(name),
                model_version: app.model_version(name).unwrap_or(0),
            })
            .collect(),
    )
}

async fn topics(State(app): State<Shared>) -> Json<Vec<TopicInfo>> {
    Json(
        app.bank
            .topics()
            .into_iter()
            .map(|t| TopicInfo {
                topic: t.to_owned(),
                questions: app.bank.topic(t).len(),
            })
            .collect(),
    )
}

async fn retrain(State(app): State<Shared>, ApiJson(req): ApiJson<RetrainRequest>) -> Result<Json<RetrainResponse>, ApiError> {
    let name = req.strategy.clone();
    let model_version = tokio::task::spawn_blocking(move || app.retrain(&name))
        .await
        .map_err(internal)??;
    Ok(Json(RetrainResponse {
        strategy: req.strategy,
        model_version,
    }))
}

async fn health(State(app): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        questions: app.bank.len(),
        topics: app.bank.topics().len(),
        active_sessions: app.active_sessions(),
        events: app.event_count(),
    })
}

async fn api_not_found() -> ApiError {
    ApiError::NotFound
}

/// The REST API under `/api`, and the UI bundle from `static_dir` everywhere
/// else, with `index.html` as the fallback for client-side routes.
pub fn router(app: Shared) -> Router {
    let static_dir = app.config.resolve(&app.config.static_dir);
    let ui = ServeDir::new(&static_dir).fallback(ServeFile::new(static_dir.join("index.html")));
    Router::new()
        .route("/api/health", get(health))
        .route("/api/strategies", get(strategies))
        .route("/api/topics", get(topics))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/answer", post(answer))
        .route("/api/admin/retrain", post(retrain))
        .route("/api/{*rest}", any(api_not_found))
        .fallback_service(ui)
        .with_state(app)
}
