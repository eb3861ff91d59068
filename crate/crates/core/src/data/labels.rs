use super::{DataError, RawExample, Result};
use crate::data::Label;
use crate::task::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Negative,
    NonNegative,
}

fn check_range(what: &str, x: f64, lo: f64, hi: f64) -> Result<()> {
    if (lo..=hi).contains(&x) {
        Ok(())
    } else {
        Err(DataError::Contract(format!(
            "{what} {x} outside [{lo}, {hi}]"
        )))
    }
}

pub fn binarize_sentiment(s: f64) -> Result<Polarity> {
    check_range("sentiment", s, -3.0, 3.0)?;
    Ok(if s < 0.0 {
        Polarity::Negative
    } else {
        Polarity::NonNegative
    })
}

/// Rounds half away from zero, clamps to [−3, 3] and shifts to {0..6}.
pub fn discretize_sentiment_7(s: f64) -> Result<usize> {
    check_range("sentiment", s, -3.0, 3.0)?;
    Ok((s.round().clamp(-3.0, 3.0) + 3.0) as usize)
}

/// An emotion is present iff its intensity is strictly positive.
pub fn binarize_emotions(e: &[f64; 6]) -> Result<[u8; 6]> {
    let mut out = [0u8; 6];
    for (o, &x) in out.iter_mut().zip(e) {
        check_range("emotion intensity", x, 0.0, 3.0)?;
        *o = u8::from(x > 0.0);
    }
    Ok(out)
}

/// Derives the training label of `ex` for `task`.
pub fn task_label(ex: &RawExample, task: TaskKind) -> Result<Label> {
    let missing = |field: &str| {
        DataError::Contract(format!(
            "example `{}` has no `{field}` needed by task {task}",
            ex.id
        ))
    };
    match task {
        TaskKind::Sent2 => {
            let s = ex.sentiment.ok_or_else(|| missing("sentiment"))?;
            let p = binarize_sentiment(s)?;
            Ok(Label::MultiHot(vec![u8::from(p == Polarity::NonNegative)]))
        }
        TaskKind::Sent7 => {
            let s = ex.sentiment.ok_or_else(|| missing("sentiment"))?;
            Ok(Label::Class(discretize_sentiment_7(s)?))
        }
        TaskKind::Emotion => {
            let e = ex.emotions.as_ref().ok_or_else(|| missing("emotions"))?;
            Ok(Label::MultiHot(binarize_emotions(e)?.to_vec()))
        }
        TaskKind::BinaryExt => match (ex.binary_label, ex.sentiment) {
            (Some(b), _) => Ok(Label::MultiHot(vec![b])),
            (None, Some(s)) => {
                let p = binarize_sentiment(s)?;
                Ok(Label::MultiHot(vec![u8::from(p == Polarity::NonNegative)]))
            }
            (None, None) => Err(missing("binary_label")),
        },
    }
}
