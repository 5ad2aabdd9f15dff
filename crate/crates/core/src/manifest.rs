//! Construction records stored alongside a ticket.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "l+1")]
    LPlus1,
    #[serde(rename = "2l")]
    TwoL,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::LPlus1 => "l+1",
            Mode::TwoL => "2l",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l+1" | "lplus1" | "l_plus_1" => Ok(Mode::LPlus1),
            "2l" | "two_l" => Ok(Mode::TwoL),
            _ => Err(Error::Config(format!("unknown construction mode `{s}`"))),
        }
    }
}

/// What a subset-sum block reconstructs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockKind {
    /// Target weight `w_{t, target_row, target_col}` of target layer `target_layer`.
    Weight { target_layer: usize, target_row: usize, target_col: usize },
    /// Target bias `b_{t, target_row}`.
    Bias { target_layer: usize, target_row: usize },
    /// Constant pre-activation of a bias carrier.
    Carrier,
}

/// How candidate `X_k` is computed from source values. `W` is the weight
/// matrix of the block's source layer (1-based `layer`), `W⁻` the one below,
/// and `c_k` the constant output of neuron `k` of the previous layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CandidateRule {
    /// `X_k = W[row][k]`.
    Weight,
    /// `X_k = W[row][k] · c_k`.
    Constant,
    /// `X_k = W[row][k] · c_k + W[row][k′] · c_{k′}` with `k′ = k + offset`.
    ConstantPair { offset: usize },
    /// `X_k = gain · W[row][k] · W⁻[k][input]`.
    Product { input: usize, gain: f64 },
    /// `X_k = gain · (W[row][k] · W⁻[k][input] + W[row][k′] · W⁻[k′][input]) / 2`.
    ProductPair { input: usize, gain: f64, offset: usize },
}

impl CandidateRule {
    /// Partner offset for mirrored rules.
    pub fn offset(&self) -> Option<usize> {
        match *self {
            CandidateRule::ConstantPair { offset } | CandidateRule::ProductPair { offset, .. } => {
                Some(offset)
            }
            _ => None,
        }
    }
}

/// One solved subset-sum problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    /// 1-based source layer whose weights hold `W[row][·]`.
    pub layer: usize,
    pub row: usize,
    #[serde(flatten)]
    pub kind: BlockKind,
    /// `+1` or `-1` for the sign-split halves of a two-for-one weight, `0`
    /// otherwise.
    pub sign: i8,
    pub candidate: CandidateRule,
    pub target: f64,
    pub tolerance: f64,
    /// Neuron indices of the previous layer forming the candidate pool, in
    /// ascending order; candidate `i` is built from `pool[i]`.
    pub pool: Vec<usize>,
    /// Chosen neuron indices, a subset of `pool`.
    pub selected: Vec<usize>,
    pub residual: f64,
    pub achieved: bool,
    /// Which group of fresh candidates produced this block, starting at 0.
    pub attempt: usize,
}

impl BlockRecord {
    pub fn coordinates(&self) -> String {
        match self.kind {
            BlockKind::Weight { target_layer, target_row, target_col } => format!(
                "source layer {}, row {}, target layer {target_layer} weight ({target_row}, {target_col})",
                self.layer, self.row
            ),
            BlockKind::Bias { target_layer, target_row } => format!(
                "source layer {}, row {}, target layer {target_layer} bias {target_row}",
                self.layer, self.row
            ),
            BlockKind::Carrier => format!("source layer {}, carrier row {}", self.layer, self.row),
        }
    }
}

/// Kept neurons of one ticket layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyPlanEntry {
    /// 1-based source layer.
    pub layer: usize,
    /// For each target neuron it represents, the source rows of its copies.
    pub copies: Vec<Vec<usize>>,
    /// Source rows acting as constant bias carriers.
    pub carriers: Vec<usize>,
}

impl CopyPlanEntry {
    pub fn copies_per_neuron(&self) -> Vec<usize> {
        self.copies.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionManifest {
    pub seed: u64,
    pub mode: Mode,
    pub eps: f64,
    pub delta: f64,
    /// Pool size of one-layer-for-one blocks.
    pub pool: usize,
    /// Copies feeding the output layer in `L+1` mode.
    pub pool_output: usize,
    /// Pool size of two-layer-for-one blocks.
    pub pool_two_for_one: usize,
    pub retries: usize,
    /// Per target layer parameter tolerance `ε_l`.
    pub layer_tolerances: Vec<f64>,
    /// First-layer σ of every two-for-one slab, keyed by its first source layer.
    pub slab_sigmas: Vec<(usize, f64)>,
    pub blocks: Vec<BlockRecord>,
    pub copy_plan: Vec<CopyPlanEntry>,
}

impl ConstructionManifest {
    pub fn failed_blocks(&self) -> impl Iterator<Item = &BlockRecord> {
        self.blocks.iter().filter(|b| !b.achieved)
    }

    pub fn all_achieved(&self) -> bool {
        self.blocks.iter().all(|b| b.achieved)
    }
}
