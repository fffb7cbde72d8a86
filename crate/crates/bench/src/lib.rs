//! Seeded fixtures shared by the benchmarks.

use chrono::{DateTime, Utc};
use copilot_sim::control::QpProblem;
use copilot_sim::memory::{MemoryStore, NewEntry};
use copilot_sim::policy::default_baseline;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Box-constrained QP with an SPD Hessian `MᵀM + n·I` and a box that cuts
/// through the unconstrained minimum, so some bounds are active.
pub fn random_qp(n: usize, rng: &mut impl Rng) -> QpProblem {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = m.transpose() * &m + DMatrix::identity(n, n) * n as f64;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let lower = DVector::from_fn(n, |_, _| rng.random_range(-1.0..0.0));
    let upper = DVector::from_fn(n, |i, _| lower[i] + rng.random_range(0.1..1.0));
    QpProblem::new(h, g, lower, upper).expect("generated problem is valid")
}

const WORDS: &[&str] = &[
    "go", "faster", "slow", "down", "keep", "gap", "turn", "smoothly", "late", "meeting", "comfortable", "relaxed",
    "speed", "up", "brake", "gently", "lane", "change", "quickly", "careful", "rain", "night", "enjoy", "ride",
];

pub fn random_sentence(rng: &mut impl Rng) -> String {
    let n = rng.random_range(2..7);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// In-memory store with `n` random entries.
pub fn filled_store(n: usize, seed: u64) -> MemoryStore {
    let mut r = rng(seed);
    let mut store = MemoryStore::in_memory("bench");
    let t0 = DateTime::<Utc>::UNIX_EPOCH;
    for i in 0..n {
        store
            .insert(NewEntry {
                instruction: random_sentence(&mut r),
                scene: "weather: sunny; traffic: moderate; road: straight".into(),
                policy: default_baseline(),
                feedback: Some(random_sentence(&mut r)),
                created_at: t0 + chrono::Duration::seconds(i as i64),
            })
            .expect("in-memory insert");
    }
    store
}
