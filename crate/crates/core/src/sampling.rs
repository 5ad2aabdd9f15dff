//! Low-discrepancy sampling of an input box.
//!
//! Points follow the additive recurrence `u_n = frac(s + n·α)` where the
//! components of `α` are powers of the inverse of the generalized golden
//! ratio (the unique positive root of `x^{d+1} = x + 1`) and `s` is a seeded
//! random shift. A prefix of the sequence is always a prefix of a longer run.

use crate::netcore::Domain;
use crate::rng::{self, StreamTag};

pub struct QuasiRandom {
    alpha: Vec<f64>,
    shift: Vec<f64>,
    n: u64,
}

fn generalized_golden(d: usize) -> f64 {
    let mut x: f64 = 2.0;
    for _ in 0..64 {
        x = (1.0 + x).powf(1.0 / (d as f64 + 1.0));
    }
    x
}

impl QuasiRandom {
    pub fn new(dim: usize, seed: u64) -> Self {
        let phi = generalized_golden(dim);
        let alpha = (1..=dim).map(|i| (1.0 / phi.powi(i as i32)).fract()).collect();
        let mut r = rng::stream(seed, StreamTag::Sample, dim as u64, 0);
        let shift = (0..dim).map(|_| rng::unit(&mut r)).collect();
        Self { alpha, shift, n: 0 }
    }

    /// Next point of the unit cube.
    pub fn next_unit(&mut self) -> Vec<f64> {
        self.n += 1;
        let n = self.n as f64;
        self.alpha
            .iter()
            .zip(&self.shift)
            .map(|(a, s)| (s + n * a).fract())
            .collect()
    }

    /// Next point of `domain`.
    pub fn next_in(&mut self, domain: &Domain) -> Vec<f64> {
        self.next_unit()
            .into_iter()
            .zip(domain.low.iter().zip(&domain.high))
            .map(|(u, (l, h))| l + u * (h - l))
            .collect()
    }
}

/// Corners of the box, capped at `limit` points (taken in binary order).
pub fn corners(domain: &Domain, limit: usize) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let total = if d >= 63 { usize::MAX } else { 1usize << d };
    (0..total.min(limit))
        .map(|mask| {
            (0..d)
                .map(|i| if mask >> i & 1 == 1 { domain.high[i] } else { domain.low[i] })
                .collect()
        })
        .collect()
}

/// Number of box corners placed ahead of the quasi-random points.
pub const MAX_CORNERS: usize = 256;

/// `n` points of the domain: up to [`MAX_CORNERS`] box corners followed by
/// quasi-random points. Shorter runs are prefixes of longer ones.
pub fn domain_points(domain: &Domain, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut pts = corners(domain, MAX_CORNERS.min(n));
    let mut q = QuasiRandom::new(domain.dim(), seed);
    while pts.len() < n {
        pts.push(q.next_in(domain));
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_stay_in_box_and_repeat() {
        let dom = Domain { low: vec![-1.0, 0.0, 2.0], high: vec![1.0, 0.5, 3.0] };
        let a = domain_points(&dom, 200, 4);
        let b = domain_points(&dom, 200, 4);
        assert_eq!(a, b);
        for p in &a {
            for i in 0..3 {
                assert!(p[i] >= dom.low[i] && p[i] <= dom.high[i]);
            }
        }
        let longer = domain_points(&dom, 400, 4);
        assert_eq!(&longer[..50], &a[..50]);
    }

    #[test]
    fn corners_of_square() {
        let c = corners(&Domain::unit(2), 10);
        assert_eq!(c.len(), 4);
        assert!(c.contains(&vec![1.0, -1.0]));
    }

    #[test]
    fn sequence_fills_the_interval() {
        let mut q = QuasiRandom::new(1, 0);
        let mut bins = [0usize; 10];
        for _ in 0..1000 {
            bins[(q.next_unit()[0] * 10.0) as usize] += 1;
        }
        assert!(bins.iter().all(|&b| (95..=105).contains(&b)), "{bins:?}");
    }
}
