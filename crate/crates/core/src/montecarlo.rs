//! Reproducible parallel shot loops.
//!
//! Each shot draws from its own ChaCha8 stream keyed by (seed, shot index), and
//! shots are grouped into fixed-size chunks whose partial results are merged in
//! chunk order. Results are therefore bit-identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Shots per parallel work unit.
pub const CHUNK_SHOTS: u64 = 256;

/// Random stream of one shot.
pub fn shot_rng(seed: u64, shot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot);
    rng
}

/// Folds every shot into a per-chunk accumulator and merges the chunks in order.
pub fn fold_shots<A, I, F, M>(shots: u64, seed: u64, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &mut ChaCha8Rng, u64) + Sync,
    M: Fn(A, A) -> A,
{
    let chunks = shots.div_ceil(CHUNK_SHOTS);
    let partials: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let end = ((c + 1) * CHUNK_SHOTS).min(shots);
            for shot in c * CHUNK_SHOTS..end {
                let mut rng = shot_rng(seed, shot);
                fold(&mut acc, &mut rng, shot);
            }
            acc
        })
        .collect();
    partials.into_iter().fold(init(), merge)
}
