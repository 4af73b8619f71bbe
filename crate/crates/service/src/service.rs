//! Write paths and background jobs.
//!
//! All writes go through one mutex around the [`Store`]: an event is
//! journaled first and applied to the in-memory state second, so readers
//! only ever see states that replay would also produce.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard};
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use epiwatch_core::classifier::{Classifier, HashingVectorizer, LabeledMessage, Relevance};
use epiwatch_core::drift::DriftReport;
use epiwatch_core::ingest::{parse_line, Annotator, Message};
use epiwatch_core::labeling::{Judgment, LabelTask};
use epiwatch_core::linear::{LinearModel, SvmHyperparams};
use epiwatch_core::ranking::{
    expand_context, extract_rank_features, fit_lda, rank_scored, topic_tokens, CandidateIndex, ExpandedContext, ExpansionParams,
    FeatureSet, LdaParams, RankFeatures, Stopwords, TopicModel, UserContext,
};
use epiwatch_core::series::{normalized_text_hash, DateRange};
use epiwatch_core::surveillance::{run_surveillance, Algorithm, Alert};
use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

use crate::error::{Result, ServiceError};
use crate::events::{AlertEvent, ContextEvent, LabelEvent, MessageBatch, StoredMessage};
use crate::state::{JudgeOutcome, State};
use crate::store::{FaultInjector, JournalCounts, Store, StoreOptions, DEFAULT_SEGMENT_BYTES};

/// A trained ranker: weights over the feature subset they were fit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerWeights {
    pub features: FeatureSet,
    pub model: LinearModel<f64>,
}

impl RankerWeights {
    pub fn score(&self, f: &RankFeatures) -> f64 {
        self.model.margin(&f.to_vector(self.features)).unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store_dir: PathBuf,
    /// Bearer token for write routes; `None` leaves them open.
    pub token: Option<String>,
    pub segment_bytes: u64,
    pub algorithms: Vec<Algorithm>,
    /// Fewest labels (with both classes present) before a model is trained.
    pub min_training: usize,
    pub svm: SvmHyperparams,
    pub vectorizer: HashingVectorizer,
    pub ranker: Option<RankerWeights>,
    /// Run retraining and surveillance in the background after writes.
    pub background_jobs: bool,
    pub fault: FaultInjector,
}

impl ServiceConfig {
    pub fn new(store_dir: impl Into<PathBuf>) -> Self {
        Self {
            store_dir: store_dir.into(),
            token: None,
            segment_bytes: DEFAULT_SEGMENT_BYTES,
            algorithms: Algorithm::standard_grid(),
            min_training: 20,
            svm: SvmHyperparams::default(),
            vectorizer: HashingVectorizer::default(),
            ranker: None,
            background_jobs: true,
            fault: FaultInjector::disarmed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: usize,
    pub errors: Vec<LineError>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextRequest {
    pub id: Option<String>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub conditions: Vec<String>,
    #[serde(default)]
    pub locations: Vec<String>,
    #[serde(default = "default_true")]
    pub expand: bool,
    #[serde(default = "default_topics")]
    pub topics: usize,
}

fn default_true() -> bool {
    true
}

fn default_topics() -> usize {
    10
}

/// Minimum corpus size for fitting a topic model during expansion.
const MIN_LDA_DOCS: usize = 30;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedContext {
    pub id: String,
    pub context: ExpandedContext,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedTweet {
    pub id: String,
    #[serde(with = "rfc3339")]
    pub timestamp: DateTime<Utc>,
    pub text: String,
    pub score: f64,
    pub features: RankFeatures,
}

mod rfc3339 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedTweets {
    pub alert_id: String,
    pub context_id: Option<String>,
    pub window: Option<DateRange>,
    pub ranker: String,
    pub tweets: Vec<RankedTweet>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub state_hash: String,
    pub model_version: Option<String>,
    pub messages: usize,
    pub alerts: usize,
    pub labels: usize,
    pub open_tasks: usize,
    pub contexts: usize,
    pub retrain_pending: bool,
    pub journals: JournalCounts,
}

struct Inner {
    cfg: ServiceConfig,
    annotator: Annotator,
    store: Mutex<Store>,
    state: RwLock<State>,
    model: RwLock<Option<Arc<Classifier<f64>>>>,
    retrain_wake: Notify,
    surveil_wake: Notify,
    surveil_dirty: AtomicBool,
}

/// Shared handle; cheap to clone.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Service {
    /// Opens the store, repairing torn journal tails, and loads the live model.
    pub fn open(cfg: ServiceConfig) -> Result<Self> {
        let opts = StoreOptions {
            segment_bytes: cfg.segment_bytes,
            fault: cfg.fault.clone(),
        };
        let (store, state) = Store::open(&cfg.store_dir, opts)?;
        let model = match state.current_model() {
            Some(e) => Some(Arc::new(Store::load_model(store.root(), e)?)),
            None => None,
        };
        Ok(Self {
            inner: Arc::new(Inner {
                cfg,
                annotator: Annotator::builtin(),
                store: Mutex::new(store),
                state: RwLock::new(state),
                model: RwLock::new(model),
                retrain_wake: Notify::new(),
                surveil_wake: Notify::new(),
                surveil_dirty: AtomicBool::new(false),
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.cfg
    }

    pub fn annotator(&self) -> &Annotator {
        &self.inner.annotator
    }

    pub fn state(&self) -> RwLockReadGuard<'_, State> {
        self.inner.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn update<R>(&self, f: impl FnOnce(&mut State) -> R) -> R {
        let mut st = self.inner.state.write().unwrap_or_else(|e| e.into_inner());
        f(&mut st)
    }

    pub fn model(&self) -> Option<Arc<Classifier<f64>>> {
        self.inner.model.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn health(&self) -> Health {
        let journals = lock(&self.inner.store).journal_records();
        let st = self.state();
        Health {
            status: "ok".into(),
            state_hash: st.state_hash(),
            model_version: st.current_model().map(|m| m.version().to_string()),
            messages: st.messages.len(),
            alerts: st.alerts.len(),
            labels: st.labels.len(),
            open_tasks: st.queue.open_tasks().count(),
            contexts: st.contexts.len(),
            retrain_pending: st.retrain_pending(),
            journals,
        }
    }

    fn annotate(&self, m: Message, model: Option<&Classifier<f64>>) -> StoredMessage {
        let a = self.inner.annotator.annotate(&m);
        let mut conditions: Vec<String> = a.condition_ids().into_iter().map(str::to_string).collect();
        conditions.sort();
        conditions.dedup();
        let (relevance, margin) = match model {
            Some(c) => {
                let (r, s) = c.classify(&m);
                (Some(r), Some(s))
            }
            None => (None, None),
        };
        StoredMessage {
            relevance,
            margin,
            model_version: model.map(|c| c.version.clone()),
            filter_passed: a.filter.passed(),
            conditions,
            country: a.country().map(str::to_string),
            text_hash: normalized_text_hash(&m.text),
            message: m,
        }
    }

    /// Parses a JSON-lines body, classifies it with one model snapshot and
    /// stores the new messages as a single journal record.
    pub fn ingest(&self, body: &str) -> Result<IngestReport> {
        let mut report = IngestReport::default();
        let mut parsed: Vec<Message> = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match parse_line(line) {
                Ok(m) => parsed.push(m),
                Err(reason) => {
                    report.rejected += 1;
                    report.errors.push(LineError { line: i + 1, reason });
                }
            }
        }
        if parsed.is_empty() {
            let msg = if report.rejected > 0 {
                format!("no valid records; first error on line {}: {}", report.errors[0].line, report.errors[0].reason)
            } else {
                "empty body".to_string()
            };
            return Err(ServiceError::BadRequest(msg));
        }
        let model = self.model();
        let mut store = lock(&self.inner.store);
        let fresh: Vec<Message> = {
            let st = self.state();
            let mut seen = BTreeSet::new();
            parsed
                .into_iter()
                .filter(|m| {
                    let new = !st.messages.contains_key(&m.id) && seen.insert(m.id.clone());
                    report.duplicates += usize::from(!new);
                    new
                })
                .collect()
        };
        report.accepted = fresh.len();
        if fresh.is_empty() {
            return Ok(report);
        }
        let batch = MessageBatch {
            messages: fresh.into_iter().map(|m| self.annotate(m, model.as_deref())).collect(),
        };
        store.append_messages(&batch)?;
        self.update(|st| st.apply_messages(batch));
        drop(store);
        self.inner.surveil_dirty.store(true, Ordering::SeqCst);
        self.inner.surveil_wake.notify_one();
        Ok(report)
    }

    /// Records a judgment; resolution and the retrain trigger are part of
    /// the same journal record.
    pub fn judge(&self, task_id: &str, worker_id: &str, label: Relevance, expert: bool) -> Result<JudgeOutcome> {
        if worker_id.trim().is_empty() {
            return Err(ServiceError::BadRequest("worker_id must not be empty".into()));
        }
        let mut store = lock(&self.inner.store);
        self.state().check_judgment(task_id)?;
        let e = LabelEvent::Judged {
            task_id: task_id.to_string(),
            judgment: Judgment {
                worker_id: worker_id.to_string(),
                label,
                timestamp: Utc::now(),
                expert,
            },
        };
        store.append_label(&e)?;
        let out = self.update(|st| st.apply_label(e))?.expect("judgments report an outcome");
        drop(store);
        if out.retrain_queued {
            tracing::info!(task = %out.task_id, "task resolved, retrain queued");
            self.inner.retrain_wake.notify_one();
        }
        Ok(out)
    }

    pub fn import_labels(&self, labels: Vec<LabeledMessage>) -> Result<()> {
        self.write_label(LabelEvent::Imported { labels })
    }

    pub fn create_tasks(&self, tasks: Vec<LabelTask>, temporary: Vec<LabeledMessage>) -> Result<()> {
        self.write_label(LabelEvent::TasksCreated { tasks, temporary })
    }

    fn write_label(&self, e: LabelEvent) -> Result<()> {
        let mut store = lock(&self.inner.store);
        store.append_label(&e)?;
        self.update(|st| st.apply_label(e))?;
        Ok(())
    }

    pub fn record_drift(&self, r: DriftReport) -> Result<()> {
        let mut store = lock(&self.inner.store);
        store.append_drift(&r)?;
        self.update(|st| st.apply_drift(r));
        Ok(())
    }

    /// Journals the artifact and swaps it in as the live model.
    pub fn publish_model(&self, c: Classifier<f64>, labels_generation: u64) -> Result<String> {
        let mut store = lock(&self.inner.store);
        let e = store.publish_model(&c, labels_generation)?;
        let version = c.version.clone();
        self.update(|st| st.apply_model(e));
        *self.inner.model.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(c));
        tracing::info!(%version, "model published");
        Ok(version)
    }

    /// Trains on the current label set if it changed since the live model
    /// and is large enough. Returns the new version.
    pub fn retrain_now(&self) -> Result<Option<String>> {
        let (data, generation) = {
            let st = self.state();
            if !st.retrain_pending() {
                return Ok(None);
            }
            (st.labels.training_set(), st.labels_generation)
        };
        let both = data.iter().any(|l| l.label == Relevance::Relevant) && data.iter().any(|l| l.label == Relevance::Irrelevant);
        if data.len() < self.inner.cfg.min_training || !both {
            tracing::debug!(labels = data.len(), "not enough labels to retrain");
            return Ok(None);
        }
        let c = Classifier::<f64>::train(self.inner.cfg.vectorizer, &data, &self.inner.cfg.svm)?;
        self.publish_model(c, generation).map(Some)
    }

    /// Runs every configured algorithm over every series and journals the
    /// alerts not already known. Returns how many were added.
    pub fn run_surveillance(&self) -> Result<usize> {
        self.inner.surveil_dirty.store(false, Ordering::SeqCst);
        let series = self.state().all_series();
        let mut found: Vec<Alert> = Vec::new();
        for s in series.values() {
            for algo in &self.inner.cfg.algorithms {
                match run_surveillance(s, algo) {
                    Ok(a) => found.extend(a),
                    Err(epiwatch_core::Error::InsufficientHistory { .. } | epiwatch_core::Error::SeriesTooShort { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
        let mut store = lock(&self.inner.store);
        let mut seen = BTreeSet::new();
        let alerts: Vec<Alert> = {
            let st = self.state();
            found
                .into_iter()
                .filter(|a| {
                    let id = a.id();
                    !st.alerts.contains_key(&id) && seen.insert(id)
                })
                .collect()
        };
        if alerts.is_empty() {
            return Ok(0);
        }
        let n = alerts.len();
        let e = AlertEvent::Appended { alerts };
        store.append_alerts(&e)?;
        self.update(|st| st.apply_alerts(e));
        tracing::info!(new = n, "surveillance appended alerts");
        Ok(n)
    }

    /// Expands (optionally) and saves a user context.
    pub fn save_context(&self, req: ContextRequest) -> Result<SavedContext> {
        let range = DateRange::new(req.start, req.end)?;
        let base = UserContext::new(req.id.clone().unwrap_or_default(), range, &req.conditions, &req.locations)?;
        let context = if req.expand {
            let corpus: Vec<Message> = {
                let st = self.state();
                st.messages
                    .values()
                    .filter(|m| range.contains(m.message.date()) && m.relevance != Some(Relevance::Irrelevant))
                    .map(|m| m.message.clone())
                    .collect()
            };
            let tm = fit_topics(&corpus, req.topics);
            expand_context(&base, tm.as_ref(), &corpus, &self.inner.annotator, &ExpansionParams::default())
        } else {
            ExpandedContext::unexpanded(base)
        };
        let id = match req.id {
            Some(id) if !id.trim().is_empty() => id,
            _ => {
                let key = serde_json::to_vec(&context.base)?;
                format!("ctx-{}", &crate::store::sha256_hex(&key)[..12])
            }
        };
        let mut context = context;
        context.base.id = id.clone();
        let mut store = lock(&self.inner.store);
        let e = ContextEvent::Saved { id: id.clone(), context: context.clone() };
        store.append_context(&e)?;
        self.update(|st| st.apply_context(e));
        Ok(SavedContext { id, context })
    }

    /// Messages from the seven days ending at the alert, inside the context
    /// range, not classified irrelevant and matching an expanded term,
    /// ranked by the configured weights (all ones by default).
    pub fn ranked_tweets(&self, alert_id: &str, context_id: Option<&str>, n: usize) -> Result<RankedTweets> {
        let st = self.state();
        let alert = st
            .alerts
            .get(alert_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown alert {alert_id:?}")))?;
        let week = DateRange {
            start: alert.date - Duration::days(6),
            end: alert.date,
        };
        let context = match context_id {
            Some(id) => st
                .contexts
                .get(id)
                .cloned()
                .ok_or_else(|| ServiceError::NotFound(format!("unknown context {id:?}")))?,
            None => ExpandedContext::unexpanded(UserContext::new(
                alert_id,
                week,
                [alert.context.disease.as_str()],
                [alert.context.country.as_str()],
            )?),
        };
        let cr = context.base.range();
        let window = (week.start.max(cr.start) <= week.end.min(cr.end)).then(|| DateRange {
            start: week.start.max(cr.start),
            end: week.end.min(cr.end),
        });
        let ranker = self.inner.cfg.ranker.as_ref();
        let mut tweets = Vec::new();
        if let Some(w) = window {
            let pool = st
                .messages
                .values()
                .filter(|m| w.contains(m.message.date()) && m.relevance != Some(Relevance::Irrelevant))
                .map(|m| &m.message);
            let index = CandidateIndex::build(pool, &self.inner.annotator);
            let docs = index.retrieve(&context, w);
            let scored: Vec<(String, f64)> = docs
                .iter()
                .map(|d| {
                    let f = extract_rank_features(d, &context);
                    let s = match ranker {
                        Some(r) => r.score(&f),
                        None => f.as_array().iter().filter(|on| **on).count() as f64,
                    };
                    (d.message.id.clone(), s)
                })
                .collect();
            for (id, score) in rank_scored(scored).into_iter().take(n) {
                let d = docs.iter().find(|d| d.message.id == id).expect("ranked id came from docs");
                tweets.push(RankedTweet {
                    id,
                    timestamp: d.message.timestamp,
                    text: d.message.text.clone(),
                    score,
                    features: extract_rank_features(d, &context),
                });
            }
        }
        Ok(RankedTweets {
            alert_id: alert_id.to_string(),
            context_id: context_id.map(str::to_string),
            window,
            ranker: if ranker.is_some() { "trained" } else { "unit" }.into(),
            tweets,
        })
    }

    /// Starts the retrain and surveillance loops on the current runtime.
    pub fn spawn_jobs(&self) {
        let svc = self.clone();
        tokio::spawn(async move {
            loop {
                if svc.state().retrain_pending() {
                    let s = svc.clone();
                    match tokio::task::spawn_blocking(move || s.retrain_now()).await {
                        Ok(Err(e)) => tracing::error!(error = %e, "retrain failed"),
                        Err(e) => tracing::error!(error = %e, "retrain task panicked"),
                        Ok(Ok(_)) => {}
                    }
                }
                svc.inner.retrain_wake.notified().await;
            }
        });
        // catch up on anything ingested while no service was running
        self.inner.surveil_dirty.store(true, Ordering::SeqCst);
        self.inner.surveil_wake.notify_one();
        let svc = self.clone();
        tokio::spawn(async move {
            loop {
                svc.inner.surveil_wake.notified().await;
                // let a burst of ingests settle before recomputing
                tokio::time::sleep(StdDuration::from_millis(250)).await;
                if !svc.inner.surveil_dirty.load(Ordering::SeqCst) {
                    continue;
                }
                let s = svc.clone();
                match tokio::task::spawn_blocking(move || s.run_surveillance()).await {
                    Ok(Err(e)) => tracing::error!(error = %e, "surveillance failed"),
                    Err(e) => tracing::error!(error = %e, "surveillance task panicked"),
                    Ok(Ok(_)) => {}
                }
            }
        });
    }
}

fn fit_topics(corpus: &[Message], topics: usize) -> Option<TopicModel> {
    if corpus.len() < MIN_LDA_DOCS || topics == 0 {
        return None;
    }
    let stop = Stopwords::builtin();
    let docs: Vec<Vec<String>> = corpus.iter().map(|m| topic_tokens(&m.text, &stop)).collect();
    let p = LdaParams {
        topics,
        iterations: 200,
        ..LdaParams::default()
    };
    match fit_lda(&docs, &p) {
        Ok(tm) => Some(tm),
        Err(e) => {
            tracing::warn!(error = %e, "topic model skipped; expanding by hashtags only");
            None
        }
    }
}
