//! Ticket construction.
//!
//! Two building blocks are combined:
//!
//! * a two-layer slab realizes one target layer. Its first layer is pruned to
//!   univariate neurons `φ₀(w_kj x_j)` (plus pure-bias neurons), which act as
//!   the identity near zero; its second layer picks, per target weight, a
//!   subset whose products `(m₊+m₋)·w_ik·w_kj` sum to the weight.
//! * a one-for-one layer realizes one target layer directly: the previous
//!   source layer holds `m` copies of every target input neuron, and each
//!   target weight is a subset sum of the source weights leaving those copies.
//!
//! The `2L` mode stacks one slab per target layer. The `L+1` mode uses one
//! slab for target layer 1, emitting `m` copies of each neuron, followed by
//! one-for-one layers. Biases in one-for-one layers come from carrier neurons
//! with a constant output.

use serde::{Deserialize, Serialize};

use crate::activation::{Activation, ActivationSpec, Linearization, G_DOMAIN_MAX};
use crate::budget::{error_budget, NormMethod};
use crate::error::{Error, Result};
use crate::init::{InitPlan, LayerInit, Scheme};
use crate::manifest::{BlockKind, BlockRecord, CandidateRule, ConstructionManifest, CopyPlanEntry, Mode};
use crate::netcore::{Layer, Matrix, Network};
use crate::subsetsum::{self, SubsetSumProblem};
use crate::ticket::{LayerMask, Ticket};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructConfig {
    pub eps: f64,
    pub delta: f64,
    /// Candidates per one-for-one block (copies kept per target neuron).
    pub pool: usize,
    /// Copies kept per neuron of the layer feeding the output layer in `L+1`
    /// mode, whose blocks cannot be retried on other rows; defaults to
    /// `2 · pool`.
    pub pool_output: Option<usize>,
    /// Candidates per sign-split half of a two-for-one block.
    pub pool_two_for_one: usize,
    /// Fresh candidate groups tried after the first one fails.
    pub retries: usize,
    pub seed: u64,
    /// Constant `C` of the width formulas (reporting only).
    pub c: f64,
    /// Exponent `γ` of the width formulas (reporting only).
    pub gamma: f64,
    /// Activation of the first source layer in `L+1` mode; defaults to the
    /// first target activation.
    pub first_activation: Option<Activation>,
    /// Tolerance on the pre-activation of bias carriers (target 1).
    pub carrier_tolerance: f64,
    pub max_subset_size: Option<usize>,
    /// Use mirrored (looks-linear) slabs even when `φ(0) = 0`; they are
    /// always used when the activation has a nonzero intercept.
    pub looks_linear: bool,
    pub norm: NormMethod,
    /// Fail with the block coordinates instead of returning a ticket with
    /// unachieved blocks.
    pub strict: bool,
}

impl Default for ConstructConfig {
    fn default() -> Self {
        Self {
            eps: 0.05,
            delta: 0.05,
            pool: 10,
            pool_output: None,
            pool_two_for_one: 15,
            retries: 3,
            seed: 0,
            c: 1.0,
            gamma: 0.1,
            first_activation: None,
            carrier_tolerance: 0.05,
            max_subset_size: None,
            looks_linear: false,
            norm: NormMethod::Interval,
            strict: false,
        }
    }
}

impl ConstructConfig {
    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("ε and δ must lie in (0, 1)".into()));
        }
        if self.pool == 0 || self.pool > subsetsum::MITM_LIMIT {
            return Err(Error::Config(format!("pool size {} out of range", self.pool)));
        }
        if self.output_pool() == 0 || self.output_pool() > subsetsum::MITM_LIMIT {
            return Err(Error::Config(format!("output pool size {} out of range", self.output_pool())));
        }
        if self.pool_two_for_one == 0 || 2 * self.pool_two_for_one > subsetsum::MITM_LIMIT {
            return Err(Error::Config(format!(
                "two-for-one pool size {} out of range",
                self.pool_two_for_one
            )));
        }
        if !(self.carrier_tolerance > 0.0) {
            return Err(Error::Config("carrier tolerance must be positive".into()));
        }
        Ok(())
    }

    fn groups(&self) -> usize {
        self.retries + 1
    }

    pub fn output_pool(&self) -> usize {
        self.pool_output.unwrap_or(2 * self.pool)
    }

    /// Subset size cap for a pool of `m` candidates: the configured cap, or
    /// 10 out of 20.
    pub fn subset_cap(&self, m: usize) -> Option<usize> {
        self.max_subset_size.or((m == 20).then_some(10))
    }
}

/// Computes candidate `X_k` of a block from source values.
///
/// `w` is the weight matrix of the block's layer, `w_prev` the one below and
/// `consts` the constant outputs of the previous layer (only read by the
/// constant rules).
pub fn candidate_value(
    rule: &CandidateRule,
    w: &Matrix,
    w_prev: Option<&Matrix>,
    consts: &[f64],
    row: usize,
    k: usize,
) -> f64 {
    match *rule {
        CandidateRule::Weight => w[(row, k)],
        CandidateRule::Constant => w[(row, k)] * consts[k],
        CandidateRule::ConstantPair { offset } => {
            w[(row, k)] * consts[k] + w[(row, k + offset)] * consts[k + offset]
        }
        CandidateRule::Product { input, gain } => {
            gain * w[(row, k)] * w_prev.expect("product rule needs the layer below")[(k, input)]
        }
        CandidateRule::ProductPair { input, gain, offset } => {
            let wp = w_prev.expect("product rule needs the layer below");
            gain * (w[(row, k)] * wp[(k, input)] + w[(row, k + offset)] * wp[(k + offset, input)])
                / 2.0
        }
    }
}

/// Outcome of [`retry_block`].
#[derive(Debug, Clone)]
pub struct Retried {
    pub attempt: usize,
    pub blocks: Vec<BlockRecord>,
    pub achieved: bool,
}

/// Worst `residual / tolerance` over a set of blocks.
fn worst_ratio(blocks: &[BlockRecord]) -> f64 {
    blocks
        .iter()
        .map(|b| if b.tolerance > 0.0 { b.residual / b.tolerance } else if b.residual == 0.0 { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max)
}

/// Solves a block on fresh candidate groups `0..attempts` until every
/// problem in it is within tolerance. If no group succeeds, the group with
/// the smallest worst residual-to-tolerance ratio is returned with
/// `achieved = false`.
pub fn retry_block<F>(attempts: usize, mut solve: F) -> Result<Retried>
where
    F: FnMut(usize) -> Result<Vec<BlockRecord>>,
{
    if attempts == 0 {
        return Err(Error::Config("at least one attempt is required".into()));
    }
    let mut best: Option<(f64, usize, Vec<BlockRecord>)> = None;
    for attempt in 0..attempts {
        let mut blocks = solve(attempt)?;
        for b in &mut blocks {
            b.attempt = attempt;
        }
        if blocks.iter().all(|b| b.achieved) {
            return Ok(Retried { attempt, blocks, achieved: true });
        }
        let ratio = worst_ratio(&blocks);
        if best.as_ref().map_or(true, |(r, _, _)| ratio < *r) {
            best = Some((ratio, attempt, blocks));
        }
    }
    let (_, attempt, blocks) = best.expect("attempts ≥ 1");
    Ok(Retried { attempt, blocks, achieved: false })
}

/// Neuron layout of the first layer of a slab.
#[derive(Debug, Clone, Copy)]
struct SlabLayout {
    /// Target inputs; region `n_in` holds pure-bias neurons.
    n_in: usize,
    pairs: bool,
    slots: usize,
    groups: usize,
    /// Offset of mirror partners (number of base neurons) when `pairs`.
    half: usize,
    width: usize,
}

impl SlabLayout {
    fn new(n_in: usize, pairs: bool, pool2: usize, groups: usize) -> Self {
        let slots = if pairs { pool2 } else { 2 * pool2 };
        let half = (n_in + 1) * groups * slots;
        Self { n_in, pairs, slots, groups, half, width: if pairs { 2 * half } else { half } }
    }

    fn group(&self, region: usize, group: usize) -> std::ops::Range<usize> {
        let start = (region * self.groups + group) * self.slots;
        start..start + self.slots
    }
}

/// A two-layer slab: source layers `first` and `first + 1` (0-based).
#[derive(Debug, Clone, Copy)]
struct Slab {
    first: usize,
    layout: SlabLayout,
    gain: f64,
}

/// Working state while masks are chosen.
struct Assembler<'a> {
    source: &'a Network,
    cfg: &'a ConstructConfig,
    masks: Vec<LayerMask>,
    consts: Vec<Vec<Option<f64>>>,
    blocks: Vec<BlockRecord>,
    copy_plan: Vec<CopyPlanEntry>,
    // Layers whose pure-bias neurons feed constant blocks.
    pure_bias: Vec<bool>,
}

impl<'a> Assembler<'a> {
    fn new(source: &'a Network, cfg: &'a ConstructConfig) -> Self {
        let masks = source
            .layers()
            .iter()
            .map(|l| LayerMask::empty(l.outputs(), l.inputs()))
            .collect();
        let consts = source.layers().iter().map(|l| vec![None; l.outputs()]).collect();
        let pure_bias = vec![false; source.depth()];
        Self { source, cfg, masks, consts, blocks: Vec::new(), copy_plan: Vec::new(), pure_bias }
    }

    fn w(&self, s: usize) -> &Matrix {
        &self.source.layer(s).weights
    }

    fn prev_consts(&self, s: usize) -> Vec<f64> {
        if s == 0 {
            return Vec::new();
        }
        self.consts[s - 1].iter().map(|c| c.unwrap_or(f64::NAN)).collect()
    }

    /// Solves one subset-sum problem over `pool` (ascending neuron indices).
    #[allow(clippy::too_many_arguments)]
    fn solve(
        &self,
        s: usize,
        row: usize,
        kind: BlockKind,
        sign: i8,
        rule: CandidateRule,
        target: f64,
        tolerance: f64,
        pool: Vec<usize>,
    ) -> Result<BlockRecord> {
        let w = self.w(s);
        let w_prev = (s > 0).then(|| self.w(s - 1));
        let consts = self.prev_consts(s);
        let candidates: Vec<f64> = pool
            .iter()
            .map(|&k| candidate_value(&rule, w, w_prev, &consts, row, k))
            .collect();
        let problem = SubsetSumProblem::new(target, candidates, tolerance)
            .with_max_subset_size(self.cfg.subset_cap(pool.len()));
        let sol = subsetsum::solve(&problem)?;
        Ok(BlockRecord {
            layer: s + 1,
            row,
            kind,
            sign,
            candidate: rule,
            target,
            tolerance,
            selected: sol.indices.iter().map(|&i| pool[i]).collect(),
            pool,
            residual: sol.residual,
            achieved: sol.achieved,
            attempt: 0,
        })
    }

    /// Keeps the parameters a block relies on.
    fn apply(&mut self, b: &BlockRecord) {
        let s = b.layer - 1;
        let offset = b.candidate.offset();
        for &k in &b.selected {
            let partners = std::iter::once(k).chain(offset.map(|o| k + o));
            for kk in partners {
                self.masks[s].keep_weight(b.row, kk);
                match b.candidate {
                    CandidateRule::Product { input, .. } | CandidateRule::ProductPair { input, .. } => {
                        self.masks[s - 1].keep_weight(kk, input);
                    }
                    CandidateRule::Constant | CandidateRule::ConstantPair { .. } if s > 0 && self.pure_bias[s - 1] => {
                        self.masks[s - 1].bias[kk] = true;
                    }
                    _ => {}
                }
            }
        }
    }

    fn commit(&mut self, retried: Retried) -> Result<()> {
        if !retried.achieved && self.cfg.strict {
            let b = retried.blocks.iter().find(|b| !b.achieved).expect("a failed block");
            return Err(Error::BlockFailure(b.coordinates()));
        }
        for b in &retried.blocks {
            self.apply(b);
        }
        self.blocks.extend(retried.blocks);
        Ok(())
    }

    /// Output of neuron `row` of layer `s` when all its kept inputs are
    /// constants, using the evaluator's arithmetic.
    fn row_constant(&self, s: usize, row: usize) -> f64 {
        let layer = self.source.layer(s);
        let mask = &self.masks[s];
        let mut h = 0.0;
        for c in 0..layer.inputs() {
            if mask.weight(row, c) {
                let x = self.consts[s - 1][c].expect("carrier inputs are constant");
                h += layer.weights[(row, c)] * x;
            }
        }
        if mask.bias[row] {
            h += layer.bias[row];
        }
        layer.activation.apply(h)
    }

    /// Marks the pure-bias neurons of a slab and records their outputs.
    fn init_bias_neurons(&mut self, slab: &Slab) {
        let l = slab.layout;
        let layer = self.source.layer(slab.first);
        self.pure_bias[slab.first] = true;
        for g in 0..l.groups {
            for k in l.group(l.n_in, g) {
                for kk in std::iter::once(k).chain(l.pairs.then(|| k + l.half)) {
                    self.consts[slab.first][kk] = Some(layer.activation.apply(0.0 + layer.bias[kk]));
                }
            }
        }
    }

    fn slab_weight_group(
        &self,
        slab: &Slab,
        row: usize,
        kind: BlockKind,
        input: usize,
        target: f64,
        tol: f64,
        g: usize,
    ) -> Result<Vec<BlockRecord>> {
        let l = slab.layout;
        let s = slab.first + 1;
        let neurons = l.group(input, g);
        if l.pairs {
            let rule = CandidateRule::ProductPair { input, gain: slab.gain, offset: l.half };
            return Ok(vec![self.solve(s, row, kind, 0, rule, target, tol, neurons.collect())?]);
        }
        let rule = CandidateRule::Product { input, gain: slab.gain };
        let w1 = self.w(slab.first);
        let plus: Vec<usize> = neurons.clone().filter(|&k| w1[(k, input)] > 0.0).collect();
        let minus: Vec<usize> = neurons.filter(|&k| w1[(k, input)] < 0.0).collect();
        Ok(vec![
            self.solve(s, row, kind, 1, rule, target, tol, plus)?,
            self.solve(s, row, kind, -1, rule, target, tol, minus)?,
        ])
    }

    fn slab_constant_group(
        &self,
        slab: &Slab,
        row: usize,
        kind: BlockKind,
        target: f64,
        tol: f64,
        g: usize,
    ) -> Result<Vec<BlockRecord>> {
        let l = slab.layout;
        let s = slab.first + 1;
        let neurons = l.group(l.n_in, g);
        let (rule, pool) = if l.pairs {
            (CandidateRule::ConstantPair { offset: l.half }, neurons.collect())
        } else {
            // Neurons with a zero constant output cannot contribute.
            let consts = &self.consts[slab.first];
            let pool = neurons.filter(|&k| consts[k] != Some(0.0)).collect();
            (CandidateRule::Constant, pool)
        };
        Ok(vec![self.solve(s, row, kind, 0, rule, target, tol, pool)?])
    }

    /// Solves the blocks realizing target neuron `i` of target layer `t`
    /// (1-based) on row `row` of the slab's second layer, each block taking
    /// its best group.
    #[allow(clippy::too_many_arguments)]
    fn slab_row_blocks(
        &self,
        slab: &Slab,
        target: &Layer,
        t: usize,
        row: usize,
        i: usize,
        tol: f64,
    ) -> Result<Vec<BlockRecord>> {
        let groups = slab.layout.groups;
        let mut blocks = Vec::new();
        for j in 0..slab.layout.n_in {
            let kind = BlockKind::Weight { target_layer: t, target_row: i, target_col: j };
            let z = target.weights[(i, j)];
            blocks.extend(retry_block(groups, |g| self.slab_weight_group(slab, row, kind, j, z, tol, g))?.blocks);
        }
        let kind = BlockKind::Bias { target_layer: t, target_row: i };
        let z = target.bias[i];
        blocks.extend(retry_block(groups, |g| self.slab_constant_group(slab, row, kind, z, tol, g))?.blocks);
        Ok(blocks)
    }

    fn slab_row(&mut self, slab: &Slab, target: &Layer, t: usize, row: usize, i: usize, tol: f64) -> Result<()> {
        let blocks = self.slab_row_blocks(slab, target, t, row, i, tol)?;
        let achieved = blocks.iter().all(|b| b.achieved);
        self.commit(Retried { attempt: 0, blocks, achieved })
    }

    /// A carrier on the slab's second layer built from pure-bias neurons.
    fn slab_carrier_blocks(&self, slab: &Slab, row: usize) -> Result<Vec<BlockRecord>> {
        let tol = self.cfg.carrier_tolerance;
        let r = retry_block(slab.layout.groups, |g| {
            self.slab_constant_group(slab, row, BlockKind::Carrier, 1.0, tol, g)
        })?;
        Ok(r.blocks)
    }

    /// Solves all blocks of a candidate row of a one-for-one layer without
    /// committing them.
    #[allow(clippy::too_many_arguments)]
    fn one_for_one_row(
        &self,
        s: usize,
        target: &Layer,
        t: usize,
        row: usize,
        i: usize,
        copies: &[Vec<usize>],
        carriers: &[usize],
        tol: f64,
    ) -> Result<Vec<BlockRecord>> {
        let mut blocks = Vec::with_capacity(copies.len() + 1);
        for (j, pool) in copies.iter().enumerate() {
            let kind = BlockKind::Weight { target_layer: t, target_row: i, target_col: j };
            blocks.push(self.solve(s, row, kind, 0, CandidateRule::Weight, target.weights[(i, j)], tol, pool.clone())?);
        }
        let kind = BlockKind::Bias { target_layer: t, target_row: i };
        blocks.push(self.solve(s, row, kind, 0, CandidateRule::Constant, target.bias[i], tol, carriers.to_vec())?);
        Ok(blocks)
    }

    /// Picks the `keep` best rows of `rows`, each solved by `solve_row`, ranked
    /// by worst residual-to-tolerance ratio and then by row index. With `stamp`
    /// each block's attempt becomes the row's candidate group.
    fn pick_rows<F>(&mut self, rows: std::ops::Range<usize>, keep: usize, stamp: bool, mut solve_row: F) -> Result<Vec<usize>>
    where
        F: FnMut(&Self, usize) -> Result<Vec<BlockRecord>>,
    {
        let base = rows.start;
        let mut scored = Vec::with_capacity(rows.len());
        for row in rows {
            let blocks = solve_row(self, row)?;
            scored.push((worst_ratio(&blocks), row, blocks));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(keep);
        scored.sort_by_key(|e| e.1);
        let mut kept = Vec::with_capacity(keep);
        for (_, row, mut blocks) in scored {
            let attempt = (row - base) / keep.max(1);
            let achieved = blocks.iter().all(|b| b.achieved);
            if stamp {
                for b in &mut blocks {
                    b.attempt = attempt;
                }
            }
            self.commit(Retried { attempt, blocks, achieved })?;
            kept.push(row);
        }
        Ok(kept)
    }

    fn finish(self) -> (Vec<LayerMask>, Vec<BlockRecord>, Vec<CopyPlanEntry>) {
        (self.masks, self.blocks, self.copy_plan)
    }
}

/// Linearization share and first-layer σ of a slab.
///
/// The activation error of one target input is at most
/// `P·ε″/(|m₊+m₋|σ)` for `P` selected neurons; with `σ = a(ε″)/M` this is
/// `P·M·g(ε″)/|m₊+m₋|`, which is set to `ε_t/(2 n_in)`.
fn slab_sigma(spec: &ActivationSpec, eps_t: f64, n_in: usize, neurons: usize, m_bound: f64) -> Result<f64> {
    if !spec.radius.is_finite() {
        return Ok(1.0);
    }
    let y = eps_t * spec.slope_sum().abs() / (2.0 * n_in.max(1) as f64 * neurons as f64 * m_bound);
    let e2 = if y >= spec.g(G_DOMAIN_MAX) {
        G_DOMAIN_MAX
    } else {
        match spec.invert_g(y)? {
            Linearization::Bounded(e) => e,
            Linearization::Unconstrained => return Ok(1.0),
        }
    };
    Ok((spec.radius_at(e2) / m_bound).min(1.0))
}

fn needs_pairs(act: Activation) -> bool {
    act.spec().d != 0.0
}

fn check_activation(act: Activation) -> Result<ActivationSpec> {
    let spec = act.spec();
    if spec.slope_sum() == 0.0 {
        return Err(Error::InvalidActivation(format!("{act}: m+ + m- is zero")));
    }
    Ok(spec)
}

fn first_half_init(rows: usize, cols: usize, act: Activation, sigma: f64, pairs: bool) -> LayerInit {
    LayerInit {
        rows,
        cols,
        activation: act,
        weight_half: sigma,
        bias_half: sigma,
        mirror_rows: pairs,
        mirror_cols: false,
    }
}

/// Mirrored columns make every mirror pair of the first half cancel the
/// constant part `d` of the activation.
fn second_half_init(rows: usize, cols: usize, act: Activation, half: f64, pairs: bool) -> LayerInit {
    LayerInit {
        rows,
        cols,
        activation: act,
        weight_half: half,
        bias_half: 0.0,
        mirror_rows: false,
        mirror_cols: pairs,
    }
}

struct Prepared {
    budget_eps: Vec<f64>,
    coord_max: Vec<f64>,
}

fn prepare(target: &Network, cfg: &ConstructConfig) -> Result<Prepared> {
    cfg.validate()?;
    for act in target.activations() {
        check_activation(act)?;
    }
    let budget = error_budget(target, cfg.eps, cfg.norm)?;
    budget.check()?;
    Ok(Prepared { budget_eps: budget.layer_eps, coord_max: budget.norms.coord_max })
}

fn assemble_ticket(
    source: Network,
    plan: InitPlan,
    masks: Vec<LayerMask>,
    manifest: ConstructionManifest,
) -> Result<Ticket> {
    let depth = source.depth();
    let mut ticket = Ticket::new(source, masks, vec![1.0; depth])?;
    ticket.init_plan = Some(plan);
    ticket.manifest = Some(manifest);
    Ok(ticket)
}

/// Depth `L+1` construction.
pub fn construct_l_plus_1(target: &Network, cfg: &ConstructConfig) -> Result<Ticket> {
    let prep = prepare(target, cfg)?;
    let arch = target.arch();
    let depth = target.depth();
    let groups = cfg.groups();
    let m = cfg.pool;
    // Copies kept of each neuron of target layer t < L, and the candidate
    // rows they are picked from.
    let keep = |t: usize| if t + 1 == depth { cfg.output_pool() } else { m };
    let candidates = |t: usize| keep(t) + m * cfg.retries;

    let phi0 = cfg.first_activation.unwrap_or(target.layer(0).activation);
    let spec0 = check_activation(phi0)?;
    let pairs = cfg.looks_linear || needs_pairs(phi0);
    let layout = SlabLayout::new(arch[0], pairs, cfg.pool_two_for_one, groups);
    let m_bound = prep.coord_max[0].max(1.0);
    let sigma = slab_sigma(&spec0, prep.budget_eps[0], arch[0], 2 * cfg.pool_two_for_one, m_bound)?;

    // Carriers are zero-input neurons when φ(0) ≠ 0, otherwise built.
    let carrier_rows = |t: usize| -> usize {
        let act = target.layer(t - 1).activation;
        if act.apply(0.0) != 0.0 {
            keep(t)
        } else {
            candidates(t)
        }
    };

    let mut layers = vec![first_half_init(layout.width, arch[0], phi0, sigma, pairs)];
    let l2_rows = if depth == 1 { arch[1] } else { arch[1] * candidates(1) + carrier_rows(1) };
    layers.push(second_half_init(
        l2_rows,
        layout.width,
        target.layer(0).activation,
        1.0 / (spec0.slope_sum().abs() * sigma),
        pairs,
    ));
    for t in 2..=depth {
        let rows = if t == depth { arch[t] } else { arch[t] * candidates(t) + carrier_rows(t) };
        layers.push(LayerInit {
            rows,
            cols: layers[t - 1].rows,
            activation: target.layer(t - 1).activation,
            weight_half: 1.0,
            bias_half: 0.0,
            mirror_rows: false,
            mirror_cols: false,
        });
    }
    let plan = InitPlan {
        scheme: Scheme::Construction,
        seed: cfg.seed,
        domain: target.domain().clone(),
        layers,
    };
    let source = plan.build()?;

    let mut asm = Assembler::new(&source, cfg);
    let slab = Slab { first: 0, layout, gain: spec0.slope_sum() };
    asm.init_bias_neurons(&slab);

    // Target layer 1 on source layer 2.
    let t1 = target.layer(0);
    let tol1 = prep.budget_eps[0] / 2.0;
    let mut copies: Vec<Vec<usize>> = Vec::new();
    let mut carriers: Vec<usize> = Vec::new();
    if depth == 1 {
        for i in 0..arch[1] {
            asm.slab_row(&slab, t1, 1, i, i, tol1)?;
            copies.push(vec![i]);
        }
    } else {
        let (k, n) = (keep(1), candidates(1));
        for i in 0..arch[1] {
            let kept = asm.pick_rows(i * n..(i + 1) * n, k, false, |a, row| a.slab_row_blocks(&slab, t1, 1, row, i, tol1))?;
            copies.push(kept);
        }
        let start = arch[1] * n;
        let phi_zero = t1.activation.apply(0.0);
        if phi_zero != 0.0 {
            carriers = (start..start + k).collect();
            for &c in &carriers {
                asm.consts[1][c] = Some(phi_zero);
            }
        } else {
            carriers = asm.pick_rows(start..start + n, k, false, |a, row| a.slab_carrier_blocks(&slab, row))?;
            for &c in &carriers {
                asm.consts[1][c] = Some(asm.row_constant(1, c));
            }
        }
    }
    asm.copy_plan.push(CopyPlanEntry { layer: 2, copies: copies.clone(), carriers: carriers.clone() });

    // Target layers 2..=L on source layers 3..=L+1.
    for t in 2..=depth {
        let s = t; // 0-based source layer index
        let tl = target.layer(t - 1);
        let tol = prep.budget_eps[t - 1];
        let last = t == depth;
        let mut next_copies = Vec::with_capacity(arch[t]);
        for i in 0..arch[t] {
            if last {
                let blocks = asm.one_for_one_row(s, tl, t, i, i, &copies, &carriers, tol)?;
                let achieved = blocks.iter().all(|b| b.achieved);
                asm.commit(Retried { attempt: 0, blocks, achieved })?;
                next_copies.push(vec![i]);
            } else {
                let region = i * candidates(t)..(i + 1) * candidates(t);
                let (cp, cr) = (copies.clone(), carriers.clone());
                let kept = asm.pick_rows(region, keep(t), true, |a, row| a.one_for_one_row(s, tl, t, row, i, &cp, &cr, tol))?;
                next_copies.push(kept);
            }
        }
        let mut next_carriers = Vec::new();
        if !last {
            let start = arch[t] * candidates(t);
            let phi_zero = tl.activation.apply(0.0);
            if phi_zero != 0.0 {
                next_carriers = (start..start + keep(t)).collect();
                for &c in &next_carriers {
                    asm.consts[s][c] = Some(phi_zero);
                }
            } else {
                let ctol = cfg.carrier_tolerance;
                let prev = carriers.clone();
                next_carriers = asm.pick_rows(start..start + candidates(t), keep(t), true, |a, row| {
                    Ok(vec![a.solve(s, row, BlockKind::Carrier, 0, CandidateRule::Constant, 1.0, ctol, prev.clone())?])
                })?;
                for &c in &next_carriers {
                    asm.consts[s][c] = Some(asm.row_constant(s, c));
                }
            }
        }
        asm.copy_plan.push(CopyPlanEntry { layer: s + 1, copies: next_copies.clone(), carriers: next_carriers.clone() });
        copies = next_copies;
        carriers = next_carriers;
    }

    let (masks, blocks, copy_plan) = asm.finish();
    let manifest = ConstructionManifest {
        seed: cfg.seed,
        mode: Mode::LPlus1,
        eps: cfg.eps,
        delta: cfg.delta,
        pool: cfg.pool,
        pool_output: cfg.output_pool(),
        pool_two_for_one: cfg.pool_two_for_one,
        retries: cfg.retries,
        layer_tolerances: prep.budget_eps,
        slab_sigmas: vec![(1, sigma)],
        blocks,
        copy_plan,
    };
    assemble_ticket(source, plan, masks, manifest)
}

/// Depth `2L` construction: one slab per target layer.
pub fn construct_2l(target: &Network, cfg: &ConstructConfig) -> Result<Ticket> {
    let prep = prepare(target, cfg)?;
    let arch = target.arch();
    let depth = target.depth();
    let groups = cfg.groups();
    let acts = target.activations();
    let pairs: Vec<bool> = acts.iter().map(|&a| cfg.looks_linear || needs_pairs(a)).collect();

    let mut layers = Vec::with_capacity(2 * depth);
    let mut slabs = Vec::with_capacity(depth);
    let mut sigmas = Vec::with_capacity(depth);
    let mut cols = arch[0];
    for t in 1..=depth {
        let act = acts[t - 1];
        let spec = act.spec();
        let layout = SlabLayout::new(arch[t - 1], pairs[t - 1], cfg.pool_two_for_one, groups);
        let m_bound = prep.coord_max[t - 1].max(1.0);
        let sigma = slab_sigma(&spec, prep.budget_eps[t - 1], arch[t - 1], 2 * cfg.pool_two_for_one, m_bound)?;
        let rows = arch[t];
        layers.push(first_half_init(layout.width, cols, act, sigma, pairs[t - 1]));
        layers.push(second_half_init(rows, layout.width, act, 1.0 / (spec.slope_sum().abs() * sigma), pairs[t - 1]));
        slabs.push(Slab { first: 2 * (t - 1), layout, gain: spec.slope_sum() });
        sigmas.push((2 * t - 1, sigma));
        cols = rows;
    }
    let plan = InitPlan {
        scheme: Scheme::Construction,
        seed: cfg.seed,
        domain: target.domain().clone(),
        layers,
    };
    let source = plan.build()?;

    let mut asm = Assembler::new(&source, cfg);
    for (t, slab) in (1..=depth).zip(&slabs) {
        asm.init_bias_neurons(slab);
        let tl = target.layer(t - 1);
        let tol = prep.budget_eps[t - 1] / 2.0;
        for i in 0..arch[t] {
            asm.slab_row(slab, tl, t, i, i, tol)?;
        }
        asm.copy_plan.push(CopyPlanEntry {
            layer: 2 * t,
            copies: (0..arch[t]).map(|i| vec![i]).collect(),
            carriers: Vec::new(),
        });
    }

    let (masks, blocks, copy_plan) = asm.finish();
    let manifest = ConstructionManifest {
        seed: cfg.seed,
        mode: Mode::TwoL,
        eps: cfg.eps,
        delta: cfg.delta,
        pool: cfg.pool,
        pool_output: cfg.output_pool(),
        pool_two_for_one: cfg.pool_two_for_one,
        retries: cfg.retries,
        layer_tolerances: prep.budget_eps,
        slab_sigmas: sigmas,
        blocks,
        copy_plan,
    };
    assemble_ticket(source, plan, masks, manifest)
}

pub fn construct(target: &Network, mode: Mode, cfg: &ConstructConfig) -> Result<Ticket> {
    match mode {
        Mode::LPlus1 => construct_l_plus_1(target, cfg),
        Mode::TwoL => construct_2l(target, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Domain, Role};

    fn single(w: f64, b: f64, act: Activation) -> Network {
        let layer = Layer::new(Matrix::from_rows(&[vec![w]]).unwrap(), vec![b], act).unwrap();
        Network::new(vec![layer], Domain::unit(1), Role::Target).unwrap()
    }

    #[test]
    fn retry_stops_at_first_success() {
        let mk = |achieved: bool, residual: f64| BlockRecord {
            layer: 2,
            row: 0,
            kind: BlockKind::Carrier,
            sign: 0,
            candidate: CandidateRule::Weight,
            target: 1.0,
            tolerance: 0.1,
            pool: vec![],
            selected: vec![],
            residual,
            achieved,
            attempt: 0,
        };
        let mut calls = 0;
        let r = retry_block(4, |_| {
            calls += 1;
            Ok(vec![mk(true, 0.0)])
        })
        .unwrap();
        assert_eq!((r.attempt, calls, r.achieved), (0, 1, true));

        let r = retry_block(3, |g| Ok(vec![mk(false, [0.5, 0.2, 0.9][g])])).unwrap();
        assert!(!r.achieved);
        assert_eq!(r.attempt, 1);
        assert!(retry_block(0, |_| Ok(vec![])).is_err());
    }

    #[test]
    fn forced_failure_is_reported_with_coordinates() {
        let target = single(1.0, 0.0, Activation::Relu);
        let cfg = ConstructConfig {
            pool_two_for_one: 1,
            retries: 1,
            strict: true,
            seed: 3,
            ..ConstructConfig::default()
        };
        match construct_2l(&target, &cfg) {
            Err(Error::BlockFailure(msg)) => assert!(msg.contains("weight (0, 0)"), "{msg}"),
            other => panic!("expected a block failure, got {other:?}"),
        }
    }

    #[test]
    fn zero_target_weight_keeps_nothing() {
        let target = single(0.0, 0.0, Activation::Relu);
        let t = construct_2l(&target, &ConstructConfig::default()).unwrap();
        let man = t.manifest.as_ref().unwrap();
        assert!(man.blocks.iter().all(|b| b.selected.is_empty() && b.residual == 0.0));
        assert_eq!(t.stats().param_count, 0);
    }

    #[test]
    fn two_for_one_weight_half_is_approximated() {
        let target = single(0.5, 0.0, Activation::Relu);
        let mut ok = 0;
        for seed in 0..20 {
            let cfg = ConstructConfig { seed, eps: 0.05, ..ConstructConfig::default() };
            let t = construct_2l(&target, &cfg).unwrap();
            if t.manifest.as_ref().unwrap().all_achieved() {
                ok += 1;
            }
        }
        assert!(ok >= 19, "{ok}");
    }

    #[test]
    fn depths() {
        let target = single(0.3, -0.2, Activation::Tanh);
        let cfg = ConstructConfig::default();
        assert_eq!(construct_l_plus_1(&target, &cfg).unwrap().depth(), 2);
        assert_eq!(construct_2l(&target, &cfg).unwrap().depth(), 2);
    }

    #[test]
    fn sigma_rule() {
        let relu = Activation::Relu.spec();
        assert_eq!(slab_sigma(&relu, 1e-3, 4, 30, 1.0).unwrap(), 1.0);
        let tanh = Activation::Tanh.spec();
        let s = slab_sigma(&tanh, 1e-3, 4, 30, 1.0).unwrap();
        assert!(s > 0.0 && s < 0.1);
        assert!(slab_sigma(&tanh, 1e-3, 4, 30, 2.0).unwrap() < s);
    }
}
