//! Synthetic timelines shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tkg_core::data::FactStore;

pub const PLANTED_ENTITIES: usize = 50;
pub const PLANTED_RELATIONS: usize = 4;
pub const EPISODE: usize = 12;

/// 60 timestamps split 48/6/6. Each episode of 12 timestamps draws a
/// random perfect matching of the 50 entities; within the episode pair
/// `(a, b)` is linked by relation `(offset + k) mod 4` at step `k`, so
/// `(a, r, b, t)` implies `(a, r + 1 mod 4, b, t + 1)`.
pub fn planted_store(seed: u64) -> FactStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut timeline = Vec::with_capacity(60);
    let mut ids: Vec<u32> = (0..PLANTED_ENTITIES as u32).collect();
    for _episode in 0..60 / EPISODE {
        ids.shuffle(&mut rng);
        let pairs: Vec<(u32, u32, u32)> = ids
            .chunks(2)
            .map(|c| {
                (
                    c[0],
                    c[1],
                    rand::Rng::gen_range(&mut rng, 0..PLANTED_RELATIONS as u32),
                )
            })
            .collect();
        for k in 0..EPISODE as u32 {
            timeline.push(
                pairs
                    .iter()
                    .map(|&(a, b, off)| (a, (off + k) % PLANTED_RELATIONS as u32, b))
                    .collect(),
            );
        }
    }
    FactStore::from_timeline(PLANTED_ENTITIES, PLANTED_RELATIONS, timeline, 48, 6)
        .expect("valid timeline")
        .add_inverse_quadruples()
        .expect("fresh store")
}

/// 5 entities, 2 relations, 10 timestamps with the same facts at every
/// timestamp; all splits share them.
pub fn repeating_store(train: usize, valid: usize) -> FactStore {
    let facts = vec![(0, 0, 1), (1, 1, 2), (2, 0, 3), (3, 1, 4), (4, 0, 0)];
    let timeline = vec![facts; 10];
    FactStore::from_timeline(5, 2, timeline, train, valid)
        .expect("valid timeline")
        .add_inverse_quadruples()
        .expect("fresh store")
}

/// Random facts over `n` entities and `r` relations with `per_step` facts
/// at each of `steps` timestamps.
pub fn random_store(seed: u64, n: usize, r: usize, steps: usize, per_step: usize) -> FactStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let timeline = (0..steps)
        .map(|_| {
            (0..per_step)
                .map(|_| {
                    use rand::Rng;
                    (
                        rng.gen_range(0..n as u32),
                        rng.gen_range(0..r as u32),
                        rng.gen_range(0..n as u32),
                    )
                })
                .collect()
        })
        .collect();
    FactStore::from_timeline(n, r, timeline, steps, 0)
        .expect("valid timeline")
        .add_inverse_quadruples()
        .expect("fresh store")
}
