//! Reproducible inputs for the benchmarks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "the", "trip", "to", "Paris", "was", "lovely,", "and", "we", "plan", "another", "visit", "soon.", "Dear",
    "team", "please", "find", "attached", "report", "for", "review.",
];

/// `n` words of filler text.
pub fn document(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| *WORDS.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// `doc` with roughly one word in `every` replaced, dropped or doubled.
pub fn revise(doc: &str, every: u32, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for w in doc.split(' ') {
        match rng.random_range(0..every * 3) {
            0 => {}
            1 => out.push(*WORDS.choose(&mut rng).unwrap()),
            2 => out.extend([w, w]),
            _ => out.push(w),
        }
    }
    out.join(" ")
}
