//! Crowd labeling queue: gold questions, worker trust, majority aggregation
//! and reconciliation of temporary model labels.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{LabelSource, LabeledMessage, Relevance};
use crate::error::{Error, Result};
use crate::ingest::Message;

pub const DEFAULT_MIN_WORKERS: usize = 3;
pub const DEFAULT_TRUST_THRESHOLD: f64 = 0.8;
pub const DEFAULT_AGREEMENT: f64 = 0.65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Resolved,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub worker_id: String,
    pub label: Relevance,
    #[serde(with = "crate::ingest::ts_seconds")]
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub expert: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTask {
    pub task_id: String,
    pub message: Message,
    pub is_gold: bool,
    pub gold_label: Option<Relevance>,
    pub judgments: Vec<Judgment>,
    pub status: TaskStatus,
    pub min_workers: usize,
    pub aggregated: Option<Relevance>,
}

impl LabelTask {
    pub fn new(message: Message, min_workers: usize) -> Self {
        Self {
            task_id: format!("t-{}", message.id),
            message,
            is_gold: false,
            gold_label: None,
            judgments: Vec::new(),
            status: TaskStatus::Open,
            min_workers,
            aggregated: None,
        }
    }

    pub fn gold(message: Message, label: Relevance, ordinal: usize, min_workers: usize) -> Self {
        Self {
            task_id: format!("g{ordinal}-{}", message.id),
            is_gold: true,
            gold_label: Some(label),
            ..Self::new(message, min_workers)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRecord {
    pub worker_id: String,
    pub gold_seen: u32,
    pub gold_correct: u32,
    pub trusted: bool,
}

impl WorkerRecord {
    pub fn new(worker_id: impl Into<String>) -> Self {
        Self {
            worker_id: worker_id.into(),
            gold_seen: 0,
            gold_correct: 0,
            trusted: true,
        }
    }

    pub fn gold_accuracy(&self) -> Option<f64> {
        (self.gold_seen > 0).then(|| f64::from(self.gold_correct) / f64::from(self.gold_seen))
    }
}

/// Workers with no gold exposure stay trusted.
pub fn compute_trust(w: &WorkerRecord, threshold: f64) -> WorkerRecord {
    let trusted = w.gold_accuracy().is_none_or(|a| a >= threshold);
    WorkerRecord { trusted, ..w.clone() }
}

/// Builds a labeling batch with `round(gold_ratio · n)` gold tasks placed at
/// seeded uniform positions. Gold messages are drawn from the pool with
/// replacement.
pub fn create_batch(
    messages: &[Message],
    gold_pool: &[(Message, Relevance)],
    gold_ratio: f64,
    min_workers: usize,
    seed: u64,
) -> Result<Vec<LabelTask>> {
    if !(0.0..=0.5).contains(&gold_ratio) {
        return Err(Error::InvalidParameter(format!("gold_ratio = {gold_ratio} outside [0, 0.5]")));
    }
    if min_workers == 0 {
        return Err(Error::InvalidParameter("min_workers must be at least 1".into()));
    }
    let n_gold = (gold_ratio * messages.len() as f64).round() as usize;
    if n_gold > 0 && gold_pool.is_empty() {
        return Err(Error::EmptyGoldPool(gold_ratio));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = messages.len() + n_gold;
    let mut gold_slots = rand::seq::index::sample(&mut rng, total, n_gold).into_vec();
    gold_slots.sort_unstable();
    let mut slots = gold_slots.into_iter().peekable();
    let mut plain = messages.iter();
    let mut out = Vec::with_capacity(total);
    for pos in 0..total {
        if slots.peek() == Some(&pos) {
            slots.next();
            let (m, label) = gold_pool.choose(&mut rng).expect("nonempty pool");
            out.push(LabelTask::gold(m.clone(), *label, pos, min_workers));
        } else {
            let m = plain.next().expect("slot count matches");
            out.push(LabelTask::new(m.clone(), min_workers));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregationOutcome {
    pub resolved: Vec<LabeledMessage>,
    pub discarded: usize,
    /// Tasks still short of trusted judgments.
    pub pending: usize,
}

/// Result of aggregating a single task.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskDecision {
    Resolved { label: Relevance, source: LabelSource, share: f64 },
    Discarded { share: f64 },
    Pending { trusted: usize },
}

/// Majority share among trusted judgments, or `None` if there are none.
fn majority(labels: impl IntoIterator<Item = Relevance>) -> Option<(Relevance, f64)> {
    let (mut rel, mut irr) = (0usize, 0usize);
    for l in labels {
        match l {
            Relevance::Relevant => rel += 1,
            Relevance::Irrelevant => irr += 1,
        }
    }
    let n = rel + irr;
    if n == 0 {
        return None;
    }
    let (label, top) = if rel >= irr { (Relevance::Relevant, rel) } else { (Relevance::Irrelevant, irr) };
    Some((label, top as f64 / n as f64))
}

pub fn decide_task(
    task: &LabelTask,
    workers: &HashMap<String, WorkerRecord>,
    agreement_threshold: f64,
) -> TaskDecision {
    // Latest expert judgment wins outright.
    if let Some(j) = task.judgments.iter().filter(|j| j.expert).max_by_key(|j| j.timestamp) {
        return TaskDecision::Resolved {
            label: j.label,
            source: LabelSource::Expert,
            share: 1.0,
        };
    }
    let trusted: Vec<Relevance> = task
        .judgments
        .iter()
        .filter(|j| workers.get(&j.worker_id).is_none_or(|w| w.trusted))
        .map(|j| j.label)
        .collect();
    if trusted.len() < task.min_workers {
        return TaskDecision::Pending { trusted: trusted.len() };
    }
    let (label, share) = majority(trusted).expect("min_workers >= 1");
    if share > agreement_threshold {
        TaskDecision::Resolved {
            label,
            source: LabelSource::Crowd,
            share,
        }
    } else {
        TaskDecision::Discarded { share }
    }
}

/// Aggregates non-gold tasks. Judgments from workers marked untrusted in
/// `workers` are ignored; unknown workers count as trusted.
pub fn aggregate_labels(
    tasks: &[LabelTask],
    workers: &HashMap<String, WorkerRecord>,
    agreement_threshold: f64,
) -> AggregationOutcome {
    let mut out = AggregationOutcome::default();
    for task in tasks.iter().filter(|t| !t.is_gold) {
        match decide_task(task, workers, agreement_threshold) {
            TaskDecision::Resolved { label, source, .. } => {
                out.resolved.push(LabeledMessage::new(task.message.clone(), label, source))
            }
            TaskDecision::Discarded { .. } => out.discarded += 1,
            TaskDecision::Pending { .. } => out.pending += 1,
        }
    }
    out
}

/// Units where every annotator agreed, as a percentage of units judged.
pub fn percent_agreement(units: &[Vec<Relevance>]) -> f64 {
    let judged: Vec<&Vec<Relevance>> = units.iter().filter(|u| !u.is_empty()).collect();
    if judged.is_empty() {
        return 0.0;
    }
    let agreements = judged.iter().filter(|u| u.iter().all(|l| *l == u[0])).count();
    100.0 * agreements as f64 / judged.len() as f64
}

/// Labels keyed by message id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelStore {
    entries: BTreeMap<String, LabeledMessage>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconcileOutcome {
    pub flipped: usize,
    pub replaced: usize,
    pub unknown: usize,
    pub retrain: bool,
}

impl LabelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, l: LabeledMessage) -> Option<LabeledMessage> {
        self.entries.insert(l.message.id.clone(), l)
    }

    pub fn get(&self, id: &str) -> Option<&LabeledMessage> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledMessage> {
        self.entries.values()
    }

    pub fn temporary_count(&self) -> usize {
        self.iter().filter(|l| l.source.is_temporary()).count()
    }

    /// All labels in id order, for training.
    pub fn training_set(&self) -> Vec<LabeledMessage> {
        self.entries.values().cloned().collect()
    }
}

/// Replaces temporary labels with resolved crowd or expert labels. Resolved
/// ids absent from the store are counted as unknown and otherwise ignored.
pub fn reconcile_temporary(resolved: &[LabeledMessage], store: &mut LabelStore) -> ReconcileOutcome {
    let mut out = ReconcileOutcome::default();
    for r in resolved {
        match store.entries.get_mut(&r.message.id) {
            None => out.unknown += 1,
            Some(existing) => {
                if existing.source.is_temporary() && existing.label != r.label {
                    out.flipped += 1;
                }
                existing.label = r.label;
                existing.source = r.source.clone();
                out.replaced += 1;
            }
        }
    }
    out.retrain = out.flipped > 0;
    out
}

/// Stateful queue holding tasks and worker records.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LabelQueue {
    tasks: BTreeMap<String, LabelTask>,
    order: Vec<String>,
    workers: HashMap<String, WorkerRecord>,
    pub trust_threshold: f64,
    pub agreement_threshold: f64,
}

impl LabelQueue {
    pub fn new() -> Self {
        Self {
            trust_threshold: DEFAULT_TRUST_THRESHOLD,
            agreement_threshold: DEFAULT_AGREEMENT,
            ..Self::default()
        }
    }

    /// Adds tasks; a task id already present is left untouched.
    pub fn push(&mut self, tasks: impl IntoIterator<Item = LabelTask>) {
        for t in tasks {
            if !self.tasks.contains_key(&t.task_id) {
                self.order.push(t.task_id.clone());
                self.tasks.insert(t.task_id.clone(), t);
            }
        }
    }

    pub fn task(&self, id: &str) -> Option<&LabelTask> {
        self.tasks.get(id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &LabelTask> {
        self.order.iter().map(|id| &self.tasks[id])
    }

    pub fn open_tasks(&self) -> impl Iterator<Item = &LabelTask> {
        self.tasks().filter(|t| t.status == TaskStatus::Open)
    }

    pub fn worker(&self, id: &str) -> Option<&WorkerRecord> {
        self.workers.get(id)
    }

    pub fn workers(&self) -> &HashMap<String, WorkerRecord> {
        &self.workers
    }

    /// Records a judgment and, for gold tasks, updates the worker's trust.
    /// Returns the task's status afterwards.
    pub fn judge(&mut self, task_id: &str, j: Judgment) -> Result<TaskDecision> {
        let task = self
            .tasks
            .get_mut(task_id)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown task {task_id:?}")))?;
        if task.status != TaskStatus::Open && !task.is_gold {
            return Err(Error::InvalidParameter(format!("task {task_id:?} is no longer open")));
        }
        if !j.expert {
            let rec = self
                .workers
                .entry(j.worker_id.clone())
                .or_insert_with(|| WorkerRecord::new(j.worker_id.clone()));
            if let Some(gold) = task.gold_label {
                rec.gold_seen += 1;
                rec.gold_correct += u32::from(gold == j.label);
                *rec = compute_trust(rec, self.trust_threshold);
            }
        }
        task.judgments.push(j);
        let task = &self.tasks[task_id];
        if task.is_gold {
            return Ok(TaskDecision::Pending { trusted: 0 });
        }
        Ok(decide_task(task, &self.workers, self.agreement_threshold))
    }

    /// Resolves every open non-gold task whose trusted judgments suffice.
    pub fn resolve(&mut self) -> AggregationOutcome {
        let mut out = AggregationOutcome::default();
        for id in &self.order {
            let task = self.tasks.get_mut(id).expect("ordered id present");
            if task.is_gold || task.status != TaskStatus::Open {
                continue;
            }
            match decide_task(task, &self.workers, self.agreement_threshold) {
                TaskDecision::Resolved { label, source, .. } => {
                    task.status = TaskStatus::Resolved;
                    task.aggregated = Some(label);
                    out.resolved.push(LabeledMessage::new(task.message.clone(), label, source));
                }
                TaskDecision::Discarded { .. } => {
                    task.status = TaskStatus::Discarded;
                    out.discarded += 1;
                }
                TaskDecision::Pending { .. } => out.pending += 1,
            }
        }
        out
    }

    /// Mean gold accuracy over workers with gold exposure.
    pub fn mean_gold_accuracy(&self) -> Option<f64> {
        let accs: Vec<f64> = self.workers.values().filter_map(WorkerRecord::gold_accuracy).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use Relevance::{Irrelevant as I, Relevant as R};

    fn ts(s: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_300_000_000 + s, 0).unwrap()
    }

    fn msg(id: &str) -> Message {
        Message::new(id, ts(0), "text")
    }

    fn judgment(w: &str, l: Relevance, s: i64) -> Judgment {
        Judgment {
            worker_id: w.into(),
            label: l,
            timestamp: ts(s),
            expert: false,
        }
    }

    fn task_with(labels: &[Relevance], min_workers: usize) -> LabelTask {
        let mut t = LabelTask::new(msg("m"), min_workers);
        t.judgments = labels.iter().enumerate().map(|(i, &l)| judgment(&format!("w{i}"), l, i as i64)).collect();
        t
    }

    #[test]
    fn batch_gold_counts() {
        let msgs: Vec<Message> = (0..90).map(|i| msg(&format!("m{i}"))).collect();
        let pool = vec![(msg("g1"), R), (msg("g2"), I)];
        let b = create_batch(&msgs, &pool, 0.1, 3, 7).unwrap();
        assert_eq!(b.len(), 99);
        assert_eq!(b.iter().filter(|t| t.is_gold).count(), 9);
        assert!(b.iter().filter(|t| t.is_gold).all(|t| t.gold_label.is_some()));
        let plain: Vec<&str> = b.iter().filter(|t| !t.is_gold).map(|t| t.message.id.as_str()).collect();
        let expected: Vec<String> = (0..90).map(|i| format!("m{i}")).collect();
        assert_eq!(plain, expected);
        assert!(b.iter().all(|t| t.min_workers == 3));

        assert_eq!(create_batch(&msgs, &pool, 0.0, 3, 7).unwrap().len(), 90);
        assert!(matches!(create_batch(&msgs, &[], 0.1, 3, 7), Err(Error::EmptyGoldPool(_))));
        assert!(create_batch(&msgs, &pool, 0.6, 3, 7).is_err());
        assert_eq!(create_batch(&msgs, &pool, 0.1, 3, 7).unwrap(), b);
    }

    #[test]
    fn trust_rules() {
        let w = WorkerRecord { gold_seen: 10, gold_correct: 9, ..WorkerRecord::new("a") };
        assert!(compute_trust(&w, 0.8).trusted);
        let w = WorkerRecord { gold_seen: 10, gold_correct: 7, ..WorkerRecord::new("a") };
        assert!(!compute_trust(&w, 0.8).trusted);
        assert!(compute_trust(&WorkerRecord::new("new"), 0.8).trusted);
        let w = WorkerRecord { gold_seen: 5, gold_correct: 4, ..WorkerRecord::new("a") };
        assert!(compute_trust(&w, 0.8).trusted);
    }

    #[test]
    fn majority_rule_examples() {
        let none = HashMap::new();
        let agg = aggregate_labels(&[task_with(&[R, R, I], 3)], &none, 0.65);
        assert_eq!(agg.resolved.len(), 1);
        assert_eq!(agg.resolved[0].label, R);
        assert_eq!(agg.resolved[0].source, LabelSource::Crowd);

        let agg = aggregate_labels(&[task_with(&[R, I], 2)], &none, 0.65);
        assert_eq!((agg.resolved.len(), agg.discarded), (0, 1));

        match decide_task(&task_with(&[I, I, I], 3), &none, 0.65) {
            TaskDecision::Resolved { label, share, .. } => {
                assert_eq!(label, I);
                assert_eq!(share, 1.0);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(aggregate_labels(&[task_with(&[R, R], 3)], &none, 0.65).pending, 1);
    }

    #[test]
    fn expert_bypasses_crowd() {
        let mut t = task_with(&[R, R, R], 3);
        t.judgments.push(Judgment { expert: true, ..judgment("doc", I, 99) });
        let agg = aggregate_labels(&[t], &HashMap::new(), 0.65);
        assert_eq!(agg.resolved[0].label, I);
        assert_eq!(agg.resolved[0].source, LabelSource::Expert);
    }

    #[test]
    fn untrusted_judgments_are_dropped() {
        let t = task_with(&[R, R, I, I], 2);
        let mut workers = HashMap::new();
        for w in ["w2", "w3"] {
            workers.insert(w.to_string(), WorkerRecord { trusted: false, ..WorkerRecord::new(w) });
        }
        let agg = aggregate_labels(&[t], &workers, 0.65);
        assert_eq!(agg.resolved[0].label, R);
    }

    #[test]
    fn agreement_fixture() {
        let mut units = vec![vec![R, R]; 114];
        units.extend(vec![vec![R, I]; 16]);
        let pct = percent_agreement(&units);
        assert!((pct - 87.69).abs() < 0.005, "{pct}");
        assert_eq!(format!("{pct:.2}"), "87.69");
        assert_eq!(percent_agreement(&[]), 0.0);
    }

    fn temp(id: &str, l: Relevance) -> LabeledMessage {
        LabeledMessage::new(msg(id), l, LabelSource::Temporary { model_version: "m-1".into() })
    }

    #[test]
    fn reconcile_examples() {
        let mut store = LabelStore::new();
        store.insert(temp("a", R));
        store.insert(temp("b", I));
        let out = reconcile_temporary(&[LabeledMessage::new(msg("a"), I, LabelSource::Crowd)], &mut store);
        assert_eq!(out.flipped, 1);
        assert!(out.retrain);
        assert_eq!(store.get("a").unwrap().source, LabelSource::Crowd);

        let out = reconcile_temporary(
            &[
                LabeledMessage::new(msg("b"), I, LabelSource::Crowd),
                LabeledMessage::new(msg("zz"), I, LabelSource::Crowd),
            ],
            &mut store,
        );
        assert_eq!((out.flipped, out.unknown, out.retrain), (0, 1, false));
        assert_eq!(store.temporary_count(), 0);
        assert_eq!(reconcile_temporary(&[], &mut store), ReconcileOutcome::default());
    }

    #[test]
    fn queue_flow_with_gold() {
        let mut q = LabelQueue::new();
        let mut gold = LabelTask::gold(msg("g"), R, 0, 3);
        gold.task_id = "gold".into();
        q.push([gold, LabelTask::new(msg("x"), 3)]);
        q.judge("gold", judgment("bad", I, 0)).unwrap();
        q.judge("gold", judgment("good", R, 0)).unwrap();
        assert!(!q.worker("bad").unwrap().trusted);
        for (i, w) in ["good", "w2", "w3"].iter().enumerate() {
            q.judge("t-x", judgment(w, I, i as i64)).unwrap();
        }
        q.judge("t-x", judgment("bad", R, 5)).unwrap();
        let out = q.resolve();
        assert_eq!(out.resolved.len(), 1);
        assert_eq!(out.resolved[0].label, I);
        assert_eq!(q.task("t-x").unwrap().status, TaskStatus::Resolved);
        assert!(q.judge("t-x", judgment("w4", I, 9)).is_err());
        assert!(q.judge("nope", judgment("w4", I, 9)).is_err());
        assert_eq!(q.mean_gold_accuracy(), Some(0.5));
    }

    fn labels() -> impl Strategy<Value = Vec<Relevance>> {
        prop::collection::vec(prop::bool::ANY.prop_map(Relevance::from_sign), 1..9)
    }

    proptest! {
        #[test]
        fn arrival_order_does_not_matter(ls in labels(), seed in any::<u64>()) {
            let t = task_with(&ls, 1);
            let mut shuffled = t.clone();
            shuffled.judgments.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let none = HashMap::new();
            prop_assert_eq!(decide_task(&t, &none, 0.65), decide_task(&shuffled, &none, 0.65));
        }

        #[test]
        fn removing_untrusted_keeps_unanimous(n_trusted in 1usize..5, bad in labels(), l in prop::bool::ANY) {
            let l = Relevance::from_sign(l);
            let mut t = task_with(&vec![l; n_trusted], n_trusted);
            let mut workers = HashMap::new();
            for (i, b) in bad.iter().enumerate() {
                let id = format!("bad{i}");
                t.judgments.push(judgment(&id, *b, 50));
                workers.insert(id.clone(), WorkerRecord { trusted: false, ..WorkerRecord::new(id) });
            }
            let out = aggregate_labels(&[t], &workers, 0.65);
            prop_assert_eq!(out.resolved.len(), 1);
            prop_assert_eq!(out.resolved[0].label, l);
        }

        #[test]
        fn resolved_never_temporary(ls in labels()) {
            let out = aggregate_labels(&[task_with(&ls, 1)], &HashMap::new(), 0.65);
            prop_assert!(out.resolved.iter().all(|l| !l.source.is_temporary()));
        }
    }
}
