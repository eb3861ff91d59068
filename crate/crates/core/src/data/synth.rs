use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, RawExample, Result};
use crate::task::{EMOTIONS, REFERENCE_EMOTION_PRIORS};

/// Shape of the generated text.
///
/// Every emotion owns `markers_per_class` marker tokens (`joy_0`, `joy_1`,
/// …). A positive example carries one of its class's markers with
/// probability `marker_rate`; a negative one with `false_marker_rate`.
/// The remaining words are drawn uniformly from `noise_vocab` filler tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub class_priors: [f64; 6],
    pub noise_vocab: usize,
    pub markers_per_class: usize,
    pub min_noise: usize,
    pub max_noise: usize,
    pub marker_rate: f64,
    pub false_marker_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            class_priors: REFERENCE_EMOTION_PRIORS,
            noise_vocab: 200,
            markers_per_class: 3,
            min_noise: 3,
            max_noise: 7,
            marker_rate: 0.8,
            false_marker_rate: 0.1,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::Contract(m));
        if let Some(p) = self.class_priors.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return bad(format!("class prior {p} outside (0, 1)"));
        }
        for (name, r) in [
            ("marker_rate", self.marker_rate),
            ("false_marker_rate", self.false_marker_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} {r} outside [0, 1]"));
            }
        }
        if self.noise_vocab == 0 || self.markers_per_class == 0 {
            return bad("noise_vocab and markers_per_class must be positive".into());
        }
        if self.min_noise > self.max_noise {
            return bad("min_noise exceeds max_noise".into());
        }
        Ok(())
    }
}

/// Deterministic imbalanced emotion corpus; the same `(seed, n, spec)`
/// always produces the same examples.
pub fn synth_corpus(seed: u64, n: usize, spec: &SynthSpec) -> Result<Vec<RawExample>> {
    if n == 0 {
        return Err(DataError::Contract(
            "synthetic corpus size must be positive".into(),
        ));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let mut corpus = Vec::with_capacity(n);
    for i in 0..n {
        let mut emotions = [0.0; 6];
        let mut words: Vec<String> = Vec::new();
        for (k, e) in emotions.iter_mut().enumerate() {
            let positive = rng.random::<f64>() < spec.class_priors[k];
            if positive {
                *e = f64::from(rng.random_range(1..=9u32)) / 3.0;
            }
            let rate = if positive {
                spec.marker_rate
            } else {
                spec.false_marker_rate
            };
            if rng.random::<f64>() < rate {
                let j = rng.random_range(0..spec.markers_per_class);
                words.push(format!("{}_{j}", EMOTIONS[k]));
            }
        }
        let filler = rng.random_range(spec.min_noise..=spec.max_noise);
        for _ in 0..filler {
            words.push(format!("w{:03}", rng.random_range(0..spec.noise_vocab)));
        }
        words.shuffle(&mut rng);

        // Joy pulls sentiment up, the stronger of sadness/anger pulls it down.
        let raw = emotions[0] - emotions[1].max(emotions[2]) + noise.sample(&mut rng);
        let sentiment = (raw.clamp(-3.0, 3.0) * 100.0).round() / 100.0;
        corpus.push(RawExample {
            id: format!("synth-{i:06}"),
            text: words.join(" "),
            sentiment: Some(sentiment),
            emotions: Some(emotions),
            binary_label: None,
        });
    }
    Ok(corpus)
}

/// Re-labels a generated corpus in the binary schema (`binary_label` =
/// non-negative sentiment).
pub fn to_binary_style(corpus: &[RawExample]) -> Vec<RawExample> {
    corpus
        .iter()
        .map(|ex| RawExample {
            id: ex.id.clone(),
            text: ex.text.clone(),
            sentiment: None,
            emotions: None,
            binary_label: ex.sentiment.map(|s| u8::from(s >= 0.0)),
        })
        .collect()
}
