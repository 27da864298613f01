#![allow(dead_code)]

use pcmi_core::dataset::RephrasingInstance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn phrase(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> String {
    (0..len)
        .map(|_| {
            // Cubed uniform skews towards low ids, so a few words are frequent.
            let r: f64 = rng.random();
            format!("w{}", (r * r * r * vocab as f64) as usize)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Instances whose `g` is `prefix + k + suffix`, with random Zipf-ish words.
pub fn knowledge_copy_corpus(n: usize, seed: u64) -> Vec<RephrasingInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let k_len = rng.random_range(8..20);
            let k = phrase(&mut rng, 300, k_len);
            let pre_len = rng.random_range(0..4);
            let pre = phrase(&mut rng, 300, pre_len);
            let suf_len = rng.random_range(0..4);
            let suf = phrase(&mut rng, 300, suf_len);
            let h = vec![phrase(&mut rng, 300, 8), phrase(&mut rng, 300, 8)];
            RephrasingInstance {
                id: format!("syn:{i}"),
                h,
                g: format!("{pre} {k} {suf}").trim().to_string(),
                k,
                entity: format!("entity{}", i % 7),
                match_score: 1.0,
            }
        })
        .collect()
}
