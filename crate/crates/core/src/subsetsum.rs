//! Random subset-sum approximation.
//!
//! Given a target `z`, candidates `X_1..X_m` and a tolerance `ε`, find
//! `S ⊆ [m]` with `|z − Σ_{k∈S} X_k| ≤ ε`. Both solvers follow one contract:
//! among subsets within tolerance pick the smallest cardinality, then the
//! smaller residual, then the lexicographically smallest index set; if none
//! is within tolerance return the subset of globally minimal residual (same
//! tie-breaking after the residual) with `achieved = false`.
//!
//! Residuals are always computed by summing the chosen candidates in
//! ascending index order starting from zero, so a solution's residual can be
//! reproduced bit-for-bit from its indices.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamTag};

pub const EXHAUSTIVE_LIMIT: usize = 25;
pub const MITM_LIMIT: usize = 44;

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSumProblem {
    pub target: f64,
    pub candidates: Vec<f64>,
    pub tolerance: f64,
    pub max_subset_size: Option<usize>,
}

impl SubsetSumProblem {
    pub fn new(target: f64, candidates: Vec<f64>, tolerance: f64) -> Self {
        Self { target, candidates, tolerance, max_subset_size: None }
    }

    pub fn with_max_subset_size(mut self, cap: Option<usize>) -> Self {
        self.max_subset_size = cap;
        self
    }

    fn cap(&self) -> usize {
        self.max_subset_size.unwrap_or(usize::MAX).min(self.candidates.len())
    }

    fn check(&self, limit: usize) -> Result<()> {
        if self.candidates.len() > limit {
            return Err(Error::SubsetSize { m: self.candidates.len(), limit });
        }
        if !(self.tolerance >= 0.0) || !self.target.is_finite() {
            return Err(Error::Config(format!(
                "subset-sum tolerance {} / target {} invalid",
                self.tolerance, self.target
            )));
        }
        if self.candidates.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("non-finite subset-sum candidate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSolution {
    pub indices: Vec<usize>,
    pub residual: f64,
    pub achieved: bool,
}

/// `|z − Σ_{k∈indices} X_k|` with the sum taken in ascending index order.
pub fn residual(target: f64, candidates: &[f64], indices: &[usize]) -> f64 {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let mut sum = 0.0;
    for k in sorted {
        sum += candidates[k];
    }
    (target - sum).abs()
}

fn mask_sum(candidates: &[f64], mut mask: u64) -> f64 {
    let mut sum = 0.0;
    while mask != 0 {
        let k = mask.trailing_zeros() as usize;
        sum += candidates[k];
        mask &= mask - 1;
    }
    sum
}

fn mask_indices(mut mask: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(mask.count_ones() as usize);
    while mask != 0 {
        out.push(mask.trailing_zeros() as usize);
        mask &= mask - 1;
    }
    out
}

/// Lexicographic order of the sorted index lists encoded by two masks.
fn lex_less(a: u64, b: u64) -> bool {
    let diff = a ^ b;
    if diff == 0 {
        return false;
    }
    let d = diff.trailing_zeros();
    let above = if d >= 63 { 0 } else { !0u64 << (d + 1) };
    if a & (1 << d) != 0 {
        // `a` continues with d; `b` continues with something larger or ends.
        b & above != 0
    } else {
        a & above == 0
    }
}

#[derive(Clone, Copy)]
struct Pick {
    mask: u64,
    card: u32,
    residual: f64,
}

impl Pick {
    /// Order used among subsets within tolerance.
    fn better_achieved(&self, other: &Pick) -> bool {
        (self.card, self.residual) < (other.card, other.residual)
            || (self.card == other.card
                && self.residual == other.residual
                && lex_less(self.mask, other.mask))
    }

    /// Order used when nothing is within tolerance.
    fn better_global(&self, other: &Pick) -> bool {
        (self.residual, self.card) < (other.residual, other.card)
            || (self.residual == other.residual
                && self.card == other.card
                && lex_less(self.mask, other.mask))
    }
}

fn solution(pick: Pick, achieved: bool) -> SubsetSolution {
    SubsetSolution { indices: mask_indices(pick.mask), residual: pick.residual, achieved }
}

/// Enumerates all `2^m` subsets depth-first in index order.
pub fn solve_exhaustive(p: &SubsetSumProblem) -> Result<SubsetSolution> {
    p.check(EXHAUSTIVE_LIMIT)?;
    let cap = p.cap() as u32;
    let mut best_ok: Option<Pick> = None;
    let mut best_any: Option<Pick> = None;

    // Explicit stack of (next index, mask, partial sum).
    let m = p.candidates.len();
    let mut stack: Vec<(usize, u64, f64)> = vec![(0, 0, 0.0)];
    while let Some((k, mask, sum)) = stack.pop() {
        if k == m {
            let card = mask.count_ones();
            let pick = Pick { mask, card, residual: (p.target - sum).abs() };
            if pick.residual <= p.tolerance
                && best_ok.map_or(true, |b| pick.better_achieved(&b))
            {
                best_ok = Some(pick);
            }
            if best_any.map_or(true, |b| pick.better_global(&b)) {
                best_any = Some(pick);
            }
            continue;
        }
        stack.push((k + 1, mask, sum));
        if mask.count_ones() < cap {
            stack.push((k + 1, mask | (1 << k), sum + p.candidates[k]));
        }
    }
    Ok(match best_ok {
        Some(b) => solution(b, true),
        None => solution(best_any.expect("the empty set is always enumerated"), false),
    })
}

/// Half-sums grouped by cardinality and sorted by value.
struct Half {
    by_card: Vec<Vec<(f64, u64)>>,
}

impl Half {
    fn build(candidates: &[f64], offset: usize, len: usize, cap: usize) -> Self {
        let mut by_card: Vec<Vec<(f64, u64)>> = vec![Vec::new(); len.min(cap) + 1];
        for local in 0u64..(1u64 << len) {
            let card = local.count_ones() as usize;
            if card > cap {
                continue;
            }
            let mask = local << offset;
            by_card[card].push((mask_sum(candidates, mask), mask));
        }
        for group in &mut by_card {
            group.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        Self { by_card }
    }

    fn merged(&self) -> Vec<(f64, u64)> {
        let mut all: Vec<(f64, u64)> = self.by_card.iter().flatten().copied().collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all
    }
}

fn lower_bound(sorted: &[(f64, u64)], value: f64) -> usize {
    sorted.partition_point(|e| e.0 < value)
}

/// Slack between an approximate split sum and the canonical one.
fn window(candidates: &[f64]) -> f64 {
    1e-12 * (1.0 + candidates.iter().map(|x| x.abs()).sum::<f64>())
}

/// Meet-in-the-middle solver with the same contract as [`solve_exhaustive`].
pub fn solve_mitm(p: &SubsetSumProblem) -> Result<SubsetSolution> {
    p.check(MITM_LIMIT)?;
    let x = &p.candidates;
    let m = x.len();
    let cap = p.cap();
    let h = m / 2;
    let left = Half::build(x, 0, h, cap);
    let right = Half::build(x, h, m - h, cap);
    let w = window(x);
    let canonical = |mask: u64| -> Pick {
        Pick { mask, card: mask.count_ones(), residual: (p.target - mask_sum(x, mask)).abs() }
    };

    // Within tolerance: scan cardinalities upward, stop at the first hit.
    for c in 0..=cap {
        let mut best: Option<Pick> = None;
        for (c1, lgroup) in left.by_card.iter().enumerate() {
            if c1 > c || c - c1 >= right.by_card.len() {
                continue;
            }
            let rgroup = &right.by_card[c - c1];
            for &(ls, lm) in lgroup {
                let lo = p.target - ls - p.tolerance - w;
                let hi = p.target - ls + p.tolerance + w;
                let start = lower_bound(rgroup, lo);
                for &(rs, rm) in &rgroup[start..] {
                    if rs > hi {
                        break;
                    }
                    let pick = canonical(lm | rm);
                    if pick.residual <= p.tolerance
                        && best.map_or(true, |b| pick.better_achieved(&b))
                    {
                        best = Some(pick);
                    }
                }
            }
        }
        if let Some(b) = best {
            return Ok(solution(b, true));
        }
    }

    // Nothing within tolerance: global minimum residual.
    let nearest = |group: &[(f64, u64)], want: f64, f: &mut dyn FnMut(f64, u64)| {
        let i = lower_bound(group, want);
        for j in [i.wrapping_sub(1), i] {
            if let Some(&(s, mk)) = group.get(j) {
                f(s, mk);
            }
        }
    };
    let capped = cap < m;
    let right_all = if capped { Vec::new() } else { right.merged() };
    let groups_for = |c1: usize| -> Vec<&[(f64, u64)]> {
        if capped {
            right.by_card.iter().take(cap - c1 + 1).map(Vec::as_slice).collect()
        } else {
            vec![right_all.as_slice()]
        }
    };

    let mut approx_best = f64::INFINITY;
    for (c1, lgroup) in left.by_card.iter().enumerate() {
        let groups = groups_for(c1);
        for &(ls, _) in lgroup {
            let want = p.target - ls;
            for g in &groups {
                nearest(g, want, &mut |rs, _| {
                    approx_best = approx_best.min((want - rs).abs());
                });
            }
        }
    }
    let bound = approx_best + 2.0 * w;
    let mut best: Option<Pick> = None;
    for (c1, lgroup) in left.by_card.iter().enumerate() {
        let groups = groups_for(c1);
        for &(ls, lm) in lgroup {
            let want = p.target - ls;
            for g in &groups {
                let start = lower_bound(g, want - bound);
                for &(rs, rm) in &g[start..] {
                    if rs > want + bound {
                        break;
                    }
                    let pick = canonical(lm | rm);
                    if best.map_or(true, |b| pick.better_global(&b)) {
                        best = Some(pick);
                    }
                }
            }
        }
    }
    Ok(solution(best.expect("the empty set is always a candidate"), false))
}

/// Dispatches to the exhaustive solver for small pools and to
/// meet-in-the-middle otherwise; both return identical answers.
pub fn solve(p: &SubsetSumProblem) -> Result<SubsetSolution> {
    if p.candidates.len() <= 12 {
        solve_exhaustive(p)
    } else {
        solve_mitm(p)
    }
}

/// Whether any subset (respecting the cardinality cap) is within tolerance.
pub fn exists(p: &SubsetSumProblem) -> Result<bool> {
    p.check(MITM_LIMIT)?;
    let x = &p.candidates;
    let m = x.len();
    let cap = p.cap();
    if cap < m {
        return Ok(solve_mitm(p)?.achieved);
    }
    let h = m / 2;
    let left = Half::build(x, 0, h, cap);
    let right = Half::build(x, h, m - h, cap).merged();
    let w = window(x);
    for &(ls, lm) in left.by_card.iter().flatten() {
        let want = p.target - ls;
        let start = lower_bound(&right, want - p.tolerance - w);
        for &(rs, rm) in &right[start..] {
            if rs > want + p.tolerance + w {
                break;
            }
            if (p.target - mask_sum(x, lm | rm)).abs() <= p.tolerance {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Greedy baseline: repeatedly add the unused candidate that most reduces
/// the residual.
pub fn solve_greedy(p: &SubsetSumProblem) -> SubsetSolution {
    let mut chosen: Vec<usize> = Vec::new();
    let mut used = vec![false; p.candidates.len()];
    let cap = p.cap();
    let mut res = residual(p.target, &p.candidates, &chosen);
    while chosen.len() < cap && res > p.tolerance {
        let mut best: Option<(usize, f64)> = None;
        for k in (0..p.candidates.len()).filter(|&k| !used[k]) {
            let mut trial = chosen.clone();
            trial.push(k);
            let r = residual(p.target, &p.candidates, &trial);
            if r < res && best.map_or(true, |(_, br)| r < br) {
                best = Some((k, r));
            }
        }
        match best {
            Some((k, r)) => {
                used[k] = true;
                chosen.push(k);
                res = r;
            }
            None => break,
        }
    }
    chosen.sort_unstable();
    SubsetSolution { achieved: res <= p.tolerance, residual: res, indices: chosen }
}

/// Candidate distributions for Monte-Carlo experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// `U[-1, 1]`.
    Uniform,
    /// `U[-1, 1] · U[0, 1]`.
    Product,
    /// `U[-1, 1] · U[-1, 1]`.
    ProductSym,
}

impl Distribution {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Distribution::Uniform => rng::symmetric(rng, 1.0),
            Distribution::Product => rng::symmetric(rng, 1.0) * rng::unit(rng),
            Distribution::ProductSym => rng::symmetric(rng, 1.0) * rng::symmetric(rng, 1.0),
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distribution::Uniform => "uniform",
            Distribution::Product => "product",
            Distribution::ProductSym => "product_sym",
        })
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Distribution::Uniform),
            "product" => Ok(Distribution::Product),
            "product_sym" => Ok(Distribution::ProductSym),
            _ => Err(Error::Config(format!("unknown distribution `{s}`"))),
        }
    }
}

/// Monte-Carlo experiment settings. Trial `t` draws `z ~ U[-t_range, t_range]`
/// and then candidates from its own stream, so the pool of size `m` is a
/// prefix of the pool of size `m + 1` and rates are exactly monotone in `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experiment {
    pub dist: Distribution,
    pub z_range: f64,
    pub trials: usize,
    pub seed: u64,
    pub max_subset_size: Option<usize>,
}

impl Experiment {
    pub fn new(dist: Distribution, trials: usize, seed: u64) -> Self {
        Self { dist, z_range: 1.0, trials, seed, max_subset_size: None }
    }

    fn trial(&self, t: usize, m: usize) -> (f64, Vec<f64>) {
        let mut r = rng::stream(self.seed, StreamTag::Trial, self.dist as u64, t as u64);
        let z = rng::symmetric(&mut r, self.z_range);
        let xs = (0..m).map(|_| self.dist.sample(&mut r)).collect();
        (z, xs)
    }

    /// Number of trials in which some subset is within `eps`.
    pub fn successes(&self, m: usize, eps: f64) -> Result<usize> {
        let mut hits = 0;
        for t in 0..self.trials {
            let (z, xs) = self.trial(t, m);
            let p = SubsetSumProblem::new(z, xs, eps).with_max_subset_size(self.max_subset_size);
            if exists(&p)? {
                hits += 1;
            }
        }
        Ok(hits)
    }

    pub fn success_rate(&self, m: usize, eps: f64) -> Result<f64> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        Ok(self.successes(m, eps)? as f64 / self.trials as f64)
    }

    /// Smallest pool size reaching `target_rate`, searched up to
    /// [`MITM_LIMIT`].
    pub fn min_m_for(&self, eps: f64, target_rate: f64) -> Result<usize> {
        if !(target_rate > 0.0 && target_rate < 1.0) {
            return Err(Error::Config(format!("target rate {target_rate} not in (0, 1)")));
        }
        let ok = |m: usize| -> Result<bool> { Ok(self.success_rate(m, eps)? >= target_rate) };
        if ok(0)? {
            return Ok(0);
        }
        // Exponential probe, then bisection; rates are monotone in m.
        let mut lo = 0;
        let mut hi = 1;
        while !ok(hi)? {
            lo = hi;
            if hi == MITM_LIMIT {
                return Err(Error::Unattainable { cap: MITM_LIMIT, target: target_rate });
            }
            hi = (hi * 2).min(MITM_LIMIT);
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if ok(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }
}

/// One row of a subset-sum benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub distribution: Distribution,
    pub m: usize,
    pub eps: f64,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
}

pub const BENCH_CSV_HEADER: &str = "distribution,m,eps,trials,successes,rate";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.distribution, self.m, self.eps, self.trials, self.successes, self.rate
        )
    }
}

pub fn bench(exp: &Experiment, ms: &[usize], eps_grid: &[f64]) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &eps in eps_grid {
        for &m in ms {
            let successes = exp.successes(m, eps)?;
            rows.push(BenchRow {
                distribution: exp.dist,
                m,
                eps,
                trials: exp.trials,
                successes,
                rate: successes as f64 / exp.trials.max(1) as f64,
            });
        }
    }
    Ok(rows)
}

/// A random variable of the form `α·U[c−h, c+h] + (1−α)·G` with `|X| ≤ B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformContainment {
    pub alpha: f64,
    pub c: f64,
    pub h: f64,
    pub bound: f64,
}

impl UniformContainment {
    pub fn new(alpha: f64, c: f64, h: f64, bound: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {alpha} not in (0, 1]")));
        }
        if !(h > 0.0) || !(bound > 0.0) {
            return Err(Error::Config("h and B must be positive".into()));
        }
        Ok(Self { alpha, c, h, bound })
    }

    /// `U[-1, 1]` itself.
    pub fn uniform() -> Self {
        Self { alpha: 1.0, c: 0.0, h: 1.0, bound: 1.0 }
    }

    /// Pool size sufficient for `|z| ≤ t` at error `eps` with failure
    /// probability `delta`:
    /// `C·max{1, t/h}/α · ln(B / min{δ/max{1, t/h}, ε/max{t, h}})`.
    pub fn pool_size(&self, c_const: f64, eps: f64, delta: f64, t: f64) -> usize {
        let stretch = (t / self.h).max(1.0);
        let floor = (delta / stretch).min(eps / t.max(self.h));
        let m = c_const * stretch / self.alpha * (self.bound / floor).ln();
        m.max(0.0).ceil() as usize
    }
}
