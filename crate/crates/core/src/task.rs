use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Emotion classes in the column order used by every report.
pub const EMOTIONS: [&str; 6] = ["joy", "sadness", "anger", "surprise", "disgust", "fear"];

/// Approximate positive-sample proportions per emotion on the reference
/// corpus; the synthetic generator uses them as its default priors.
pub const REFERENCE_EMOTION_PRIORS: [f64; 6] = [0.52, 0.25, 0.21, 0.10, 0.17, 0.08];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Negative vs non-negative sentiment, single logit.
    Sent2,
    /// Sentiment rounded onto seven ordinal classes.
    Sent7,
    /// Six-way multi-label emotion presence.
    Emotion,
    /// Binary polarity from an external corpus with `binary_label`.
    BinaryExt,
}

impl TaskKind {
    pub fn num_labels(self) -> usize {
        match self {
            TaskKind::Sent2 | TaskKind::BinaryExt => 1,
            TaskKind::Sent7 => 7,
            TaskKind::Emotion => 6,
        }
    }

    /// Classes reported on: one per logit, or seven one-vs-rest classes.
    pub fn class_names(self) -> Vec<String> {
        match self {
            TaskKind::Emotion => EMOTIONS.iter().map(|s| s.to_string()).collect(),
            TaskKind::Sent2 | TaskKind::BinaryExt => vec!["non_negative".to_string()],
            TaskKind::Sent7 => (-3..=3).map(|v| format!("sentiment{v:+}")).collect(),
        }
    }

    pub fn is_multiclass(self) -> bool {
        matches!(self, TaskKind::Sent7)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Sent2 => "sent2",
            TaskKind::Sent7 => "sent7",
            TaskKind::Emotion => "emotion",
            TaskKind::BinaryExt => "binary-ext",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sent2" => Ok(TaskKind::Sent2),
            "sent7" => Ok(TaskKind::Sent7),
            "emotion" => Ok(TaskKind::Emotion),
            "binary-ext" => Ok(TaskKind::BinaryExt),
            other => Err(format!(
                "unknown task `{other}` (expected sent2, sent7, emotion or binary-ext)"
            )),
        }
    }
}

/// A named task. The name keys adapters and heads, so two tasks of the same
/// kind (two external polarity corpora, say) can coexist in one fusion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, kind: TaskKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn of_kind(kind: TaskKind) -> Self {
        Self::new(kind.as_str(), kind)
    }
}
