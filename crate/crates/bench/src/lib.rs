//! Shared inputs for the benchmarks.

use spanguard_core::datasets::{generate_synthetic, SyntheticConfig};
use spanguard_core::RagExample;

/// One synthetic example with roughly `context_tokens` context tokens.
pub fn example(context_tokens: usize) -> RagExample {
    generate_synthetic(&SyntheticConfig {
        records: 1,
        context_tokens: context_tokens..context_tokens + 1,
        seed: 42,
        ..Default::default()
    })
    .remove(0)
    .example
}

/// `windows x tokens` support rows with a fixed pseudo-random pattern.
pub fn rows(windows: usize, tokens: usize) -> Vec<Vec<f64>> {
    let mut x: u64 = 0x9e37_79b9_7f4a_7c15;
    (0..windows)
        .map(|_| {
            (0..tokens)
                .map(|_| {
                    x ^= x << 13;
                    x ^= x >> 7;
                    x ^= x << 17;
                    (x >> 11) as f64 / (1u64 << 53) as f64
                })
                .collect()
        })
        .collect()
}
