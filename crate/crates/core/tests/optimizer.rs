//! AdamW on a parameter store against a scalar reference, and the
//! learning-rate schedule.

use fuseformer::model::ParamStore;
use fuseformer::optim::{lr_schedule, AdamW, AdamWConfig};
use fuseformer::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One coordinate of AdamW, written out from the update rule.
struct Scalar {
    p: f64,
    m: f64,
    v: f64,
}

impl Scalar {
    fn step(&mut self, g: f64, t: i32, lr: f64, c: &AdamWConfig, decay: bool) {
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * g;
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * g * g;
        let m_hat = self.m / (1.0 - c.beta1.powi(t));
        let v_hat = self.v / (1.0 - c.beta2.powi(t));
        let wd = if decay { c.weight_decay } else { 0.0 };
        self.p -= lr * (m_hat / (v_hat.sqrt() + c.eps) + wd * self.p);
    }
}

const NAMES: [(&str, bool); 4] = [
    ("heads.t.linear1.weight", true),
    ("heads.t.linear1.bias", false),
    ("encoder.layers.0.attention.norm.weight", false),
    ("fusion.layers.0.query.weight", true),
];

#[test]
fn store_updates_match_scalar_reference_on_100_problems() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = AdamWConfig {
            beta1: rng.random_range(0.5..0.95),
            beta2: rng.random_range(0.9..0.9999),
            eps: 1e-8,
            weight_decay: rng.random_range(0.0..0.1),
        };
        let mut store = ParamStore::new();
        let mut refs: Vec<Vec<Scalar>> = Vec::new();
        for (name, _) in NAMES {
            let n = rng.random_range(1..6);
            let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            refs.push(data.iter().map(|&p| Scalar { p, m: 0.0, v: 0.0 }).collect());
            let id = store
                .insert(name, Tensor::new(vec![n], data).unwrap())
                .unwrap();
            store.get_mut(id).set_requires_grad(true);
        }
        let frozen = store
            .insert(
                "encoder.embeddings.word.weight",
                Tensor::new(vec![2], vec![0.5, -0.5]).unwrap(),
            )
            .unwrap();

        let mut opt = AdamW::new(cfg);
        let steps = rng.random_range(1..20);
        for t in 1..=steps {
            let lr = rng.random_range(1e-4..1e-1);
            for (id, (_, decay)) in NAMES.iter().enumerate() {
                let g: Vec<f64> = (0..store.get(id).numel())
                    .map(|_| rng.random_range(-2.0..2.0))
                    .collect();
                for (s, &gi) in refs[id].iter_mut().zip(&g) {
                    s.step(gi, t, lr, &cfg, *decay);
                }
                store.get_mut(id).set_grad(Some(g));
            }
            store.get_mut(frozen).set_grad(Some(vec![1.0, 1.0]));
            opt.step(&mut store, lr).unwrap();
        }
        assert_eq!(opt.steps_taken(), steps as u64);
        for (id, r) in refs.iter().enumerate() {
            for (got, want) in store.get(id).data().iter().zip(r) {
                assert!(
                    (got - want.p).abs() <= 1e-12 * (1.0 + want.p.abs()),
                    "seed {seed}: {got} vs {}",
                    want.p
                );
            }
        }
        assert_eq!(store.get(frozen).data(), &[0.5, -0.5]);
    }
}

#[test]
fn parameters_without_gradient_are_untouched() {
    let mut store = ParamStore::new();
    let id = store
        .insert(
            "heads.t.linear1.weight",
            Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(),
        )
        .unwrap();
    store.get_mut(id).set_requires_grad(true);
    AdamW::new(AdamWConfig::default())
        .step(&mut store, 0.1)
        .unwrap();
    assert_eq!(store.get(id).data(), &[1.0, 2.0]);
}

#[test]
fn schedule_without_warmup_decays_linearly_to_zero() {
    let total = 37;
    for s in 0..=total {
        let want = 2e-5 * (total - s) as f64 / total as f64;
        assert!((lr_schedule(s, total, 2e-5, 0) - want).abs() < 1e-20);
    }
    assert_eq!(lr_schedule(total + 5, total, 2e-5, 0), 0.0);
}

proptest! {
    #[test]
    fn schedule_is_bounded_and_peaks_after_warmup(total in 1usize..500, warmup in 0usize..100, step in 0usize..600) {
        let lr = lr_schedule(step, total, 1.0, warmup);
        prop_assert!((0.0..=1.0).contains(&lr));
        if warmup > 0 && warmup < total {
            prop_assert_eq!(lr_schedule(warmup, total, 1.0, warmup), 1.0);
            if step < warmup {
                prop_assert!(lr <= lr_schedule(step + 1, total, 1.0, warmup));
            } else if step < total {
                prop_assert!(lr >= lr_schedule(step + 1, total, 1.0, warmup));
            }
        }
    }
}
