//! Independent per-item seeds derived from one run seed.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of a stream seeded with `base`. Neighbouring
/// indices give unrelated seeds, so items can be processed in any order.
pub fn sequence_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index)
}

/// Seed for a named sub-stream (e.g. "augment", "sample") of a run.
pub fn stream_seed(base: u64, stream: &str) -> u64 {
    stream
        .bytes()
        .fold(splitmix64(base), |acc, b| splitmix64(acc ^ b as u64))
}
