//! Seed plumbing. Every random decision in the crate flows from one root
//! seed, split per subsystem so a component can be replayed on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Derive a subsystem seed from the root seed and a label.
///
/// FNV-1a over the label, mixed with the root seed. Hand-rolled so the
/// mapping is stable across toolchain versions (std's hashers are not).
pub fn subseed(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ root.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Deterministic stream for the given root seed and subsystem label.
pub fn stream(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(root, label))
}

/// One standard-normal draw via Box-Muller.
///
/// Consumes exactly two uniforms per call and discards the second output of
/// the pair; the fixed consumption pattern keeps replay deterministic.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..=1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Normal draw truncated to two standard deviations, rescaled by `std`.
pub fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f32 {
    loop {
        let z = normal(rng);
        if z.abs() <= 2.0 {
            return (z * std) as f32;
        }
    }
}
