#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use optmark::{FiniteDistribution, StateSet, Support};

/// Random base distribution on `k` synthetic states with weights in (0.05, 1].
pub fn random_base(rng: &mut ChaCha8Rng, k: usize) -> FiniteDistribution {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..=1.0)).collect();
    FiniteDistribution::from_weights(Support::synthetic(k), &w).unwrap()
}

/// Random region containing at least one state and missing at least one.
pub fn random_region(rng: &mut ChaCha8Rng, base: &FiniteDistribution) -> StateSet {
    let k = base.support().len();
    let p = rng.random_range(0.05..0.95);
    let mut ids: Vec<usize> = (0..k).filter(|_| rng.random_bool(p)).collect();
    if ids.is_empty() {
        ids.push(rng.random_range(0..k));
    }
    if ids.len() == k {
        ids.remove(rng.random_range(0..k));
    }
    StateSet::from_ids(base.support(), ids).unwrap()
}

/// Uniform base over ten states scored 0.05, 0.15, ..., 0.95.
pub fn ten_state_reference() -> (FiniteDistribution, optmark::ScoreFunction) {
    let base = FiniteDistribution::uniform(Support::synthetic(10)).unwrap();
    let scores = (0..10).map(|i| 0.05 + 0.1 * i as f64).collect();
    let score = optmark::ScoreFunction::table(base.support(), scores).unwrap();
    (base, score)
}
