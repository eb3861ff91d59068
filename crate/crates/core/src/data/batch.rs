use super::vocab::{Vocabulary, CLS, PAD, SEP};
use super::{task_label, DataError, RawExample, Result};
use crate::task::TaskKind;

/// Label of one example for one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Label {
    /// One {0,1} entry per logit.
    MultiHot(Vec<u8>),
    /// Single class id.
    Class(usize),
}

/// `[CLS] tokens… [SEP]` padded to `max_len`, with the attention mask.
/// Tokens beyond `max_len − 2` are dropped.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> (Vec<usize>, Vec<u8>) {
    assert!(max_len >= 2, "max_len must leave room for [CLS] and [SEP]");
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(
        text.split_whitespace()
            .take(max_len - 2)
            .map(|t| vocab.id(t)),
    );
    ids.push(SEP);
    let real = ids.len();
    ids.resize(max_len, PAD);
    let mut mask = vec![1u8; real];
    mask.resize(max_len, 0);
    (ids, mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub token_ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchLabels {
    /// Row-major `[B×C]` targets in {0, 1}.
    MultiHot {
        classes: usize,
        values: Vec<f64>,
    },
    Class(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    /// Row-major `[B×L]`.
    pub token_ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
    pub segment_ids: Vec<usize>,
    pub labels: BatchLabels,
}

impl Batch {
    pub fn from_examples(examples: &[&EncodedExample]) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| DataError::Contract("empty batch".into()))?;
        let seq_len = first.token_ids.len();
        let mut token_ids = Vec::with_capacity(examples.len() * seq_len);
        let mut attention_mask = Vec::with_capacity(examples.len() * seq_len);
        for ex in examples {
            if ex.token_ids.len() != seq_len {
                return Err(DataError::Contract("ragged batch".into()));
            }
            token_ids.extend_from_slice(&ex.token_ids);
            attention_mask.extend_from_slice(&ex.attention_mask);
        }
        let labels = match &first.label {
            Label::MultiHot(v) => {
                let classes = v.len();
                let mut values = Vec::with_capacity(examples.len() * classes);
                for ex in examples {
                    match &ex.label {
                        Label::MultiHot(l) if l.len() == classes => {
                            values.extend(l.iter().map(|&b| f64::from(b)))
                        }
                        _ => return Err(DataError::Contract("mixed label kinds in batch".into())),
                    }
                }
                BatchLabels::MultiHot { classes, values }
            }
            Label::Class(_) => BatchLabels::Class(
                examples
                    .iter()
                    .map(|ex| match ex.label {
                        Label::Class(c) => Ok(c),
                        _ => Err(DataError::Contract("mixed label kinds in batch".into())),
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Self {
            batch_size: examples.len(),
            seq_len,
            segment_ids: vec![0; token_ids.len()],
            token_ids,
            attention_mask,
            labels,
        })
    }
}

impl Batch {
    /// Drops trailing columns that are padding in every row.
    pub fn trim_padding(mut self) -> Self {
        let (b, l) = (self.batch_size, self.seq_len);
        let keep = (0..l)
            .rev()
            .find(|&j| (0..b).any(|i| self.attention_mask[i * l + j] != 0))
            .map_or(1, |j| j + 1);
        if keep == l {
            return self;
        }
        let cut = |v: &[usize]| -> Vec<usize> {
            (0..b)
                .flat_map(|i| v[i * l..i * l + keep].to_vec())
                .collect()
        };
        self.token_ids = cut(&self.token_ids);
        self.segment_ids = cut(&self.segment_ids);
        self.attention_mask = (0..b)
            .flat_map(|i| self.attention_mask[i * l..i * l + keep].to_vec())
            .collect();
        self.seq_len = keep;
        self
    }
}

/// A tokenized split for one task.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub task: TaskKind,
    pub examples: Vec<EncodedExample>,
}

impl Dataset {
    pub fn encode(
        corpus: &[RawExample],
        task: TaskKind,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self> {
        let examples = corpus
            .iter()
            .map(|ex| {
                let (token_ids, attention_mask) = tokenize(&ex.text, vocab, max_len);
                Ok(EncodedExample {
                    token_ids,
                    attention_mask,
                    label: task_label(ex, task)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { task, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Batches following `order`, the last one possibly short.
    pub fn batches<'a>(
        &'a self,
        order: &'a [usize],
        batch_size: usize,
    ) -> impl Iterator<Item = Result<Batch>> + 'a {
        order.chunks(batch_size.max(1)).map(move |chunk| {
            let refs: Vec<&EncodedExample> = chunk.iter().map(|&i| &self.examples[i]).collect();
            Batch::from_examples(&refs)
        })
    }
}
