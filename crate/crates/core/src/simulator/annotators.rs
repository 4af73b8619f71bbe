//! Simulated crowd workers for replaying the labeling workflow.

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::Relevance;
use crate::error::Result;
use crate::labeling::{Judgment, LabelQueue, LabelTask, TaskStatus};

/// Matches the crowd's observed gold accuracy.
pub const DEFAULT_ANNOTATOR_ACCURACY: f64 = 0.92;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedAnnotator {
    pub worker_id: String,
    pub accuracy: f64,
}

impl SimulatedAnnotator {
    pub fn new(worker_id: impl Into<String>, accuracy: f64) -> Self {
        Self {
            worker_id: worker_id.into(),
            accuracy: accuracy.clamp(0.0, 1.0),
        }
    }

    /// `n` workers named `w1..wn` sharing one accuracy.
    pub fn crowd(n: usize, accuracy: f64) -> Vec<Self> {
        (1..=n).map(|i| Self::new(format!("w{i}"), accuracy)).collect()
    }

    pub fn judge(&self, truth: Relevance, rng: &mut impl Rng) -> Relevance {
        if rng.random_bool(self.accuracy) {
            truth
        } else {
            truth.flipped()
        }
    }
}

/// Every annotator judges every open task once, in queue order. Gold tasks
/// use their gold label as truth; other tasks ask `truth`, and tasks it
/// cannot answer are skipped. Returns the number of judgments recorded.
pub fn replay_queue(
    queue: &mut LabelQueue,
    annotators: &[SimulatedAnnotator],
    truth: impl Fn(&LabelTask) -> Option<Relevance>,
    start: DateTime<Utc>,
    seed: u64,
) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let todo: Vec<(String, Relevance)> = queue
        .tasks()
        .filter(|t| t.status == TaskStatus::Open)
        .filter_map(|t| t.gold_label.or_else(|| truth(t)).map(|l| (t.task_id.clone(), l)))
        .collect();
    let mut n = 0usize;
    for (task_id, label) in todo {
        for a in annotators {
            let j = Judgment {
                worker_id: a.worker_id.clone(),
                label: a.judge(label, &mut rng),
                timestamp: start + Duration::seconds(n as i64),
                expert: false,
            };
            queue.judge(&task_id, j)?;
            n += 1;
        }
    }
    Ok(n)
}
