//! Error measurement, manifest audits and mode comparisons.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::construct::{self, candidate_value, ConstructConfig};
use crate::error::{Error, Result};
use crate::manifest::{CandidateRule, Mode};
use crate::netcore::{Domain, Network};
use crate::sampling;
use crate::subsetsum;
use crate::ticket::{Ticket, TicketStats};

/// Largest `‖f(x) − g(x)‖₁` over `n` domain points (corners first, then a
/// quasi-random sequence). A lower bound on the true sup-norm distance.
pub fn sup_distance<F, G>(domain: &Domain, n: usize, seed: u64, mut f: F, mut g: G) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut worst: f64 = 0.0;
    for x in sampling::domain_points(domain, n, seed) {
        let (a, b) = (f(&x)?, g(&x)?);
        if a.len() != b.len() {
            return Err(Error::Shape(format!("outputs of size {} and {}", a.len(), b.len())));
        }
        let d: f64 = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum();
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Sampled sup-norm error of a ticket against its target.
pub fn sup_error(target: &Network, ticket: &Ticket, n: usize, seed: u64) -> Result<f64> {
    if target.input_dim() != ticket.source.input_dim() || target.output_dim() != ticket.source.output_dim() {
        return Err(Error::Shape(format!(
            "target maps {} → {} but ticket maps {} → {}",
            target.input_dim(),
            target.output_dim(),
            ticket.source.input_dim(),
            ticket.source.output_dim()
        )));
    }
    let eval = ticket.evaluator();
    sup_distance(target.domain(), n, seed, |x| target.forward(x), |x| eval.forward(x))
}

/// One audit finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFlag {
    /// Index into the manifest's blocks, or `None` for ticket-wide findings.
    pub block: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Sampled sup-norm error, when a target was given.
    pub sup_error: Option<f64>,
    pub samples: usize,
    /// Worst residual of the blocks in each source layer (0 if none).
    pub layer_worst_residual: Vec<f64>,
    pub stats: TicketStats,
    pub attempted: usize,
    pub achieved: usize,
    pub failed: usize,
    pub seed: u64,
    /// Source regenerated from the init plan matches the ticket bit for bit.
    pub source_reproduced: bool,
    /// Mirror pairs whose second-layer weights were checked to cancel.
    pub cancellation_pairs: usize,
    pub flags: Vec<AuditFlag>,
}

impl VerificationReport {
    pub fn clean(&self) -> bool {
        self.flags.is_empty() && self.source_reproduced
    }
}

fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn source_matches(ticket: &Ticket) -> Result<bool> {
    let Some(plan) = &ticket.init_plan else { return Ok(false) };
    let fresh = plan.build()?;
    if fresh.depth() != ticket.source.depth() {
        return Ok(false);
    }
    Ok(fresh.layers().iter().zip(ticket.source.layers()).all(|(a, b)| {
        a.activation == b.activation
            && a.weights.rows() == b.weights.rows()
            && bits_equal(a.weights.as_slice(), b.weights.as_slice())
            && bits_equal(&a.bias, &b.bias)
    }))
}

/// Recomputes every block of the manifest from source values and masks.
pub fn audit(ticket: &Ticket) -> Result<VerificationReport> {
    let manifest = ticket
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Manifest("ticket carries no construction manifest".into()))?;
    let depth = ticket.depth();
    let source_reproduced = source_matches(ticket)?;
    let mut flags = Vec::new();
    if !source_reproduced {
        flags.push(AuditFlag {
            block: None,
            message: "source differs from the network regenerated from the init plan".into(),
        });
    }

    // Constant neurons produce the same output everywhere; read them at the center.
    let trace = ticket.forward_trace(&ticket.source.domain().center())?;
    let mut worst = vec![0.0f64; depth];
    let mut pairs = 0;
    let mut achieved = 0;
    for (idx, b) in manifest.blocks.iter().enumerate() {
        let mut problems = Vec::new();
        if b.layer == 0 || b.layer > depth {
            flags.push(AuditFlag { block: Some(idx), message: format!("layer {} out of range", b.layer) });
            continue;
        }
        let s = b.layer - 1;
        let layer = ticket.source.layer(s);
        let w = &layer.weights;
        let needs_prev = matches!(b.candidate, CandidateRule::Product { .. } | CandidateRule::ProductPair { .. });
        let needs_consts = matches!(b.candidate, CandidateRule::Constant | CandidateRule::ConstantPair { .. });
        if (needs_prev || needs_consts) && s == 0 {
            flags.push(AuditFlag { block: Some(idx), message: "rule needs a previous layer".into() });
            continue;
        }
        let w_prev = (s > 0).then(|| &ticket.source.layer(s - 1).weights);
        let consts: &[f64] = if s > 0 { &trace[s - 1] } else { &[] };
        let off = b.candidate.offset().unwrap_or(0);
        let in_range = b.row < w.rows()
            && b.pool.iter().all(|&k| k + off < w.cols())
            && match b.candidate {
                CandidateRule::Product { input, .. } | CandidateRule::ProductPair { input, .. } => {
                    w_prev.is_some_and(|p| input < p.cols())
                }
                _ => true,
            };
        if !in_range {
            flags.push(AuditFlag { block: Some(idx), message: "indices out of range".into() });
            continue;
        }

        let cands: Vec<f64> = b
            .pool
            .iter()
            .map(|&k| candidate_value(&b.candidate, w, w_prev, consts, b.row, k))
            .collect();
        let positions: Option<Vec<usize>> =
            b.selected.iter().map(|k| b.pool.iter().position(|p| p == k)).collect();
        match positions {
            None => problems.push("selected neuron outside the pool".to_string()),
            Some(pos) => {
                let r = subsetsum::residual(b.target, &cands, &pos);
                if !((r - b.residual).abs() <= 1e-12) {
                    problems.push(format!("residual {r:e} recomputed, {:e} recorded", b.residual));
                }
                if b.achieved && !(r <= b.tolerance) {
                    problems.push(format!("marked achieved with residual {r:e} above {:e}", b.tolerance));
                }
            }
        }

        let mask = &ticket.masks[s];
        for &k in &b.selected {
            for kk in std::iter::once(k).chain(b.candidate.offset().map(|o| k + o)) {
                if !mask.weight(b.row, kk) {
                    problems.push(format!("weight ({}, {kk}) not kept", b.row));
                }
                if let CandidateRule::Product { input, .. } | CandidateRule::ProductPair { input, .. } = b.candidate {
                    if !ticket.masks[s - 1].weight(kk, input) {
                        problems.push(format!("lower weight ({kk}, {input}) not kept"));
                    }
                }
            }
            if let Some(o) = b.candidate.offset() {
                pairs += 1;
                if w[(b.row, k)] + w[(b.row, k + o)] != 0.0 {
                    problems.push(format!("mirror pair ({k}, {}) does not cancel", k + o));
                }
            }
        }

        if b.achieved {
            achieved += 1;
        }
        worst[s] = worst[s].max(b.residual);
        if !problems.is_empty() {
            flags.push(AuditFlag { block: Some(idx), message: format!("{}: {}", b.coordinates(), problems.join("; ")) });
        }
    }

    let attempted = manifest.blocks.len();
    Ok(VerificationReport {
        sup_error: None,
        samples: 0,
        layer_worst_residual: worst,
        stats: ticket.stats(),
        attempted,
        achieved,
        failed: attempted - achieved,
        seed: manifest.seed,
        source_reproduced,
        cancellation_pairs: pairs,
        flags,
    })
}

/// Audit plus sampled error against the target.
pub fn verify(target: &Network, ticket: &Ticket, samples: usize, seed: u64) -> Result<VerificationReport> {
    let mut report = audit(ticket)?;
    report.sup_error = Some(sup_error(target, ticket, samples, seed)?);
    report.samples = samples;
    report.seed = seed;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub mode: Mode,
    pub error: f64,
    pub params: usize,
    pub max_width: usize,
    pub depth: usize,
    pub failed_blocks: usize,
    /// Construction time in seconds; the only column that varies between runs.
    pub wall_time: f64,
}

pub const COMPARISON_CSV_HEADER: &str = "mode,error,params,max_width,depth,failed_blocks,wall_time";

impl ComparisonRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:e},{},{},{},{},{:.3}",
            self.mode, self.error, self.params, self.max_width, self.depth, self.failed_blocks, self.wall_time
        )
    }
}

/// Builds both tickets for one target and tabulates them.
pub fn compare_modes(target: &Network, cfg: &ConstructConfig, samples: usize) -> Result<Vec<ComparisonRow>> {
    [Mode::LPlus1, Mode::TwoL]
        .into_iter()
        .map(|mode| {
            let start = Instant::now();
            let ticket = construct::construct(target, mode, cfg)?;
            let wall_time = start.elapsed().as_secs_f64();
            let stats = ticket.stats();
            let failed = ticket.manifest.as_ref().map_or(0, |m| m.failed_blocks().count());
            Ok(ComparisonRow {
                mode,
                error: sup_error(target, &ticket, samples, cfg.seed)?,
                params: stats.param_count,
                max_width: stats.max_width,
                depth: stats.depth,
                failed_blocks: failed,
                wall_time,
            })
        })
        .collect()
}
