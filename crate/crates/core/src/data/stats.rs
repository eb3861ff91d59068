use serde::{Deserialize, Serialize};

use super::{task_label, Label, RawExample, Result};
use crate::task::TaskKind;

/// Per-class positive/negative counts over one split. Multiclass tasks are
/// counted one-vs-rest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl ClassStats {
    pub fn total(&self) -> usize {
        self.positives.first().map_or(0, |p| p + self.negatives[0])
    }

    pub fn proportions(&self) -> Vec<f64> {
        let n = self.total().max(1) as f64;
        self.positives.iter().map(|&p| p as f64 / n).collect()
    }
}

pub fn class_statistics(corpus: &[RawExample], task: TaskKind) -> Result<ClassStats> {
    let classes = task.class_names().len();
    let mut positives = vec![0usize; classes];
    for ex in corpus {
        match task_label(ex, task)? {
            Label::MultiHot(v) => positives
                .iter_mut()
                .zip(v)
                .for_each(|(p, b)| *p += usize::from(b)),
            Label::Class(c) => positives[c] += 1,
        }
    }
    let negatives = positives.iter().map(|p| corpus.len() - p).collect();
    Ok(ClassStats {
        positives,
        negatives,
    })
}
