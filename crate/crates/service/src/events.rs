//! Journal record types. Each variant is one transaction.

use epiwatch_core::classifier::{LabeledMessage, Relevance};
use epiwatch_core::ingest::Message;
use epiwatch_core::labeling::{Judgment, LabelTask};
use epiwatch_core::ranking::ExpandedContext;
use epiwatch_core::surveillance::Alert;
use serde::{Deserialize, Serialize};

/// A message with the annotations and classification computed at ingest,
/// so replay never depends on which model was live at the time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredMessage {
    pub message: Message,
    pub relevance: Option<Relevance>,
    pub margin: Option<f64>,
    pub model_version: Option<String>,
    pub filter_passed: bool,
    pub conditions: Vec<String>,
    pub country: Option<String>,
    pub text_hash: u64,
}

impl StoredMessage {
    /// Counts toward series: classified relevant, or keyword-passed when no
    /// model was available.
    pub fn counts_as_relevant(&self) -> bool {
        match self.relevance {
            Some(r) => r == Relevance::Relevant,
            None => self.filter_passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageBatch {
    pub messages: Vec<StoredMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LabelEvent {
    /// Labels brought in from outside (expert files, an offline training run).
    Imported { labels: Vec<LabeledMessage> },
    /// New tasks, with the model's temporary labels for the selected messages.
    TasksCreated {
        tasks: Vec<LabelTask>,
        #[serde(default)]
        temporary: Vec<LabeledMessage>,
    },
    /// One judgment; resolution follows deterministically on apply.
    Judged { task_id: String, judgment: Judgment },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ModelEvent {
    Published {
        version: String,
        file: String,
        sha256: String,
        /// Label generation the model was trained on.
        #[serde(default)]
        labels_generation: u64,
    },
}

impl ModelEvent {
    pub fn version(&self) -> &str {
        let Self::Published { version, .. } = self;
        version
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ContextEvent {
    Saved { id: String, context: ExpandedContext },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AlertEvent {
    Appended { alerts: Vec<Alert> },
}
