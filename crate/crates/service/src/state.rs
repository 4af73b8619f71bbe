//! In-memory state rebuilt from the journals, and the read-side queries.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use epiwatch_core::classifier::LabeledMessage;
use epiwatch_core::drift::DriftReport;
use epiwatch_core::labeling::{reconcile_temporary, LabelQueue, LabelStore, LabelTask, TaskStatus, WorkerRecord};
use epiwatch_core::ranking::ExpandedContext;
use epiwatch_core::series::{build_all, build_series, DateRange, DiseaseContext, SeriesOptions, SeriesRecord, TimeSeries};
use epiwatch_core::surveillance::Alert;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::events::{AlertEvent, ContextEvent, LabelEvent, MessageBatch, ModelEvent, StoredMessage};
use crate::store::sha256_hex;

#[derive(Debug, Clone)]
pub struct State {
    pub messages: BTreeMap<String, StoredMessage>,
    pub queue: LabelQueue,
    pub labels: LabelStore,
    /// Bumped whenever the label set changes.
    pub labels_generation: u64,
    pub models: Vec<ModelEvent>,
    pub contexts: BTreeMap<String, ExpandedContext>,
    pub alerts: BTreeMap<String, Alert>,
    pub drift: Vec<DriftReport>,
}

impl Default for State {
    fn default() -> Self {
        Self {
            messages: BTreeMap::new(),
            queue: LabelQueue::new(),
            labels: LabelStore::new(),
            labels_generation: 0,
            models: Vec::new(),
            contexts: BTreeMap::new(),
            alerts: BTreeMap::new(),
            drift: Vec::new(),
        }
    }
}

/// What a judgment did to its task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub task_id: String,
    pub status: TaskStatus,
    pub judgments: usize,
    /// Tasks resolved by this judgment (usually 0 or 1).
    pub resolved: usize,
    pub retrain_queued: bool,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    messages: &'a BTreeMap<String, StoredMessage>,
    tasks: Vec<&'a LabelTask>,
    workers: BTreeMap<&'a String, &'a WorkerRecord>,
    labels: &'a LabelStore,
    labels_generation: u64,
    models: &'a [ModelEvent],
    contexts: &'a BTreeMap<String, ExpandedContext>,
    alerts: &'a BTreeMap<String, Alert>,
    drift: &'a [DriftReport],
}

impl State {
    pub fn apply_messages(&mut self, b: MessageBatch) {
        for m in b.messages {
            self.messages.entry(m.message.id.clone()).or_insert(m);
        }
    }

    /// Applies a label event. A judgment the queue rejects means the journal
    /// disagrees with itself, since the live path checks first.
    pub fn apply_label(&mut self, e: LabelEvent) -> Result<Option<JudgeOutcome>> {
        match e {
            LabelEvent::Imported { labels } => {
                for l in labels {
                    self.labels.insert(l);
                }
                self.labels_generation += 1;
                Ok(None)
            }
            LabelEvent::TasksCreated { tasks, temporary } => {
                self.queue.push(tasks);
                // a temporary label never displaces a human one
                let mut changed = false;
                for l in temporary {
                    if self.labels.get(&l.message.id).is_none() {
                        self.labels.insert(l);
                        changed = true;
                    }
                }
                self.labels_generation += u64::from(changed);
                self.absorb_resolved();
                Ok(None)
            }
            LabelEvent::Judged { task_id, judgment } => {
                self.queue
                    .judge(&task_id, judgment)
                    .map_err(|e| ServiceError::Corrupt {
                        path: "labels.jsonl".into(),
                        detail: e.to_string(),
                    })?;
                let resolved = self.absorb_resolved();
                let task = self.queue.task(&task_id).expect("judged task exists");
                Ok(Some(JudgeOutcome {
                    task_id,
                    status: task.status,
                    judgments: task.judgments.len(),
                    resolved,
                    retrain_queued: resolved > 0,
                }))
            }
        }
    }

    fn absorb_resolved(&mut self) -> usize {
        let out = self.queue.resolve();
        let n = out.resolved.len();
        let (known, fresh): (Vec<LabeledMessage>, Vec<LabeledMessage>) =
            out.resolved.into_iter().partition(|l| self.labels.get(&l.message.id).is_some());
        reconcile_temporary(&known, &mut self.labels);
        for l in fresh {
            self.labels.insert(l);
        }
        if n > 0 {
            self.labels_generation += 1;
        }
        n
    }

    /// Checks a judgment would be accepted, without changing anything.
    pub fn check_judgment(&self, task_id: &str) -> Result<()> {
        let t = self
            .queue
            .task(task_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown task {task_id:?}")))?;
        if t.status != TaskStatus::Open && !t.is_gold {
            return Err(ServiceError::Conflict(format!("task {task_id:?} is already {:?}", t.status).to_lowercase()));
        }
        Ok(())
    }

    pub fn apply_model(&mut self, e: ModelEvent) {
        self.models.push(e);
    }

    pub fn apply_context(&mut self, e: ContextEvent) {
        let ContextEvent::Saved { id, context } = e;
        self.contexts.insert(id, context);
    }

    pub fn apply_alerts(&mut self, e: AlertEvent) {
        let AlertEvent::Appended { alerts } = e;
        for a in alerts {
            self.alerts.entry(a.id()).or_insert(a);
        }
    }

    pub fn apply_drift(&mut self, r: DriftReport) {
        self.drift.push(r);
    }

    pub fn current_model(&self) -> Option<&ModelEvent> {
        self.models.last()
    }

    /// Labels changed since the live model was trained.
    pub fn retrain_pending(&self) -> bool {
        let trained = self.models.last().map_or(0, |m| {
            let ModelEvent::Published { labels_generation, .. } = m;
            *labels_generation
        });
        self.labels_generation > trained
    }

    /// Hex sha256 over a canonical serialization of everything replayable.
    pub fn state_hash(&self) -> String {
        let snap = Snapshot {
            messages: &self.messages,
            tasks: self.queue.tasks().collect(),
            workers: self.queue.workers().iter().collect(),
            labels: &self.labels,
            labels_generation: self.labels_generation,
            models: &self.models,
            contexts: &self.contexts,
            alerts: &self.alerts,
            drift: &self.drift,
        };
        sha256_hex(&serde_json::to_vec(&snap).expect("state serializes"))
    }

    /// Span of message dates, if any messages exist.
    pub fn date_span(&self) -> Option<DateRange> {
        let mut dates = self.messages.values().map(|m| m.message.date());
        let first = dates.next()?;
        let (lo, hi) = dates.fold((first, first), |(lo, hi), d| (lo.min(d), hi.max(d)));
        Some(DateRange { start: lo, end: hi })
    }

    fn series_records(&self) -> Vec<SeriesRecord> {
        self.messages
            .values()
            .filter(|m| m.counts_as_relevant() && !m.conditions.is_empty())
            .filter_map(|m| {
                Some(SeriesRecord {
                    date: m.message.date(),
                    conditions: m.conditions.clone(),
                    country: m.country.clone()?,
                    text_hash: m.text_hash,
                })
            })
            .collect()
    }

    pub fn series(&self, ctx: &DiseaseContext, range: Option<DateRange>) -> Option<TimeSeries> {
        let range = range.or_else(|| self.date_span())?;
        Some(build_series(&self.series_records(), ctx, range, SeriesOptions::default()))
    }

    pub fn all_series(&self) -> BTreeMap<DiseaseContext, TimeSeries> {
        match self.date_span() {
            Some(r) => build_all(&self.series_records(), r, SeriesOptions::default()),
            None => BTreeMap::new(),
        }
    }

    pub fn query_alerts(&self, q: &AlertQuery) -> Result<AlertPage> {
        q.validate()?;
        let matching = |a: &Alert, skip: Facet| {
            (skip == Facet::Disease || q.disease.as_ref().is_none_or(|d| &a.context.disease == d))
                && (skip == Facet::Country || q.country.as_ref().is_none_or(|c| &a.context.country == c))
                && (skip == Facet::Algorithm || q.algorithm.as_ref().is_none_or(|g| &a.algorithm == g))
                && q.from.is_none_or(|f| a.date >= f)
                && q.to.is_none_or(|t| a.date <= t)
        };
        let mut facets = Facets::default();
        for a in self.alerts.values() {
            if matching(a, Facet::Disease) {
                *facets.disease.entry(a.context.disease.clone()).or_default() += 1;
            }
            if matching(a, Facet::Country) {
                *facets.country.entry(a.context.country.clone()).or_default() += 1;
            }
            if matching(a, Facet::Algorithm) {
                *facets.algorithm.entry(a.algorithm.clone()).or_default() += 1;
            }
        }
        let mut hits: Vec<(&String, &Alert)> = self.alerts.iter().filter(|(_, a)| matching(a, Facet::None)).collect();
        hits.sort_by(|x, y| y.1.date.cmp(&x.1.date).then_with(|| x.0.cmp(y.0)));
        let total = hits.len();
        let page_size = q.page_size();
        let page = q.page.unwrap_or(1);
        let alerts = hits
            .into_iter()
            .skip((page - 1) * page_size)
            .take(page_size)
            .map(|(id, a)| AlertView { id: id.clone(), alert: a.clone() })
            .collect();
        Ok(AlertPage {
            total,
            page,
            page_size,
            pages: total.div_ceil(page_size),
            alerts,
            facets,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Facet {
    None,
    Disease,
    Country,
    Algorithm,
}

pub const DEFAULT_PAGE_SIZE: usize = 20;
pub const MAX_PAGE_SIZE: usize = 500;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertQuery {
    pub disease: Option<String>,
    pub country: Option<String>,
    pub algorithm: Option<String>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    /// 1-based.
    pub page: Option<usize>,
    pub page_size: Option<usize>,
}

impl AlertQuery {
    fn page_size(&self) -> usize {
        self.page_size.unwrap_or(DEFAULT_PAGE_SIZE)
    }

    pub fn validate(&self) -> Result<()> {
        if let (Some(f), Some(t)) = (self.from, self.to) {
            if t < f {
                return Err(ServiceError::BadRequest(format!("date range ends ({t}) before it starts ({f})")));
            }
        }
        if self.page == Some(0) {
            return Err(ServiceError::BadRequest("page numbers start at 1".into()));
        }
        if !(1..=MAX_PAGE_SIZE).contains(&self.page_size()) {
            return Err(ServiceError::BadRequest(format!("page_size must be in 1..={MAX_PAGE_SIZE}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertView {
    pub id: String,
    #[serde(flatten)]
    pub alert: Alert,
}

/// Counts per value, each over the alerts matching every other filter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Facets {
    pub disease: BTreeMap<String, usize>,
    pub country: BTreeMap<String, usize>,
    pub algorithm: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertPage {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub pages: usize,
    pub alerts: Vec<AlertView>,
    pub facets: Facets,
}
