#![allow(dead_code)]

use szo::numerics::{Real, RngState};
use szo::optimizer::xavier_init;
use szo::sflstm::{ModelParams, Variant};

/// Seeded text with word and sentence structure over a ~40 symbol alphabet.
pub fn synthetic_text(len: usize, seed: u64) -> Vec<u8> {
    const WORDS: [&str; 24] = [
        "the", "of", "and", "a", "to", "in", "is", "was", "that", "for", "river", "stone", "city", "north",
        "ancient", "music", "king", "water", "light", "garden", "seven", "under", "between", "quietly",
    ];
    let mut rng = RngState::new(seed);
    let mut out = Vec::with_capacity(len + 16);
    let mut capital = true;
    while out.len() < len {
        let w = WORDS[rng.below(WORDS.len())].as_bytes();
        if capital {
            out.push(w[0].to_ascii_uppercase());
            out.extend_from_slice(&w[1..]);
        } else {
            out.extend_from_slice(w);
        }
        capital = false;
        match rng.below(12) {
            0 => {
                out.extend_from_slice(b". ");
                capital = true;
            }
            1 => out.extend_from_slice(b", "),
            2 => out.push(b'\n'),
            _ => out.push(b' '),
        }
    }
    out.truncate(len);
    out
}

/// Xavier weights with jittered biases, so no activation sits at a special
/// value.
pub fn random_params<T: Real>(n: usize, m: usize, variant: Variant, tau: f64, seed: u64) -> ModelParams<T> {
    let mut p = ModelParams::zeros(n, m, variant, tau).unwrap();
    xavier_init(&mut p, &mut RngState::new(seed));
    let mut rng = RngState::with_stream(seed, 9);
    for g in p.weights.gates.iter_mut() {
        for v in g.bias.as_mut_slice() {
            *v += T::of(rng.uniform_in(-0.3, 0.3));
        }
    }
    p
}

pub fn random_stream(len: usize, batch: usize, vocab: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = RngState::with_stream(seed, 7);
    (0..len).map(|_| (0..batch).map(|_| rng.below(vocab)).collect()).collect()
}
