//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, tag, a, b)` plus a position inside the
//! stream, so the value assigned to a parameter never depends on how many
//! other parameters were drawn before it or on the order blocks are solved.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Families of draws that must never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    SourceWeight = 1,
    SourceBias = 2,
    TargetWeight = 3,
    TargetBias = 4,
    TargetMask = 5,
    Trial = 6,
    Sample = 7,
    Perturbation = 8,
    Network = 9,
}

/// Opens the stream addressed by `(seed, tag, a, b)`.
///
/// `a` keys the ChaCha key (typically a layer index), `b` selects the stream
/// number (typically a row index or trial index).
pub fn stream(seed: u64, tag: StreamTag, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(tag as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(b);
    rng
}

/// Draws from `U[-half, half]`; a zero half-range yields exactly zero.
#[inline]
pub fn symmetric<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.gen_range(-half..=half)
    }
}

/// Draws from `U[0, 1)`.
#[inline]
pub fn unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen::<f64>()
}
