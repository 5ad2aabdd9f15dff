//! Source-network initializers.
//!
//! A source network is fully described by an [`InitPlan`]: per layer a shape,
//! an activation, uniform half-ranges for weights and biases and whether the
//! layer uses the mirrored block layout `[[M, −M], [−M, M]]`. Each row draws
//! from its own stream keyed by `(seed, layer, row)`, so the plan and seed
//! regenerate every value exactly.

use serde::{Deserialize, Serialize};

use crate::activation::{Activation, ActivationSpec};
use crate::error::{Error, Result};
use crate::netcore::{Domain, Layer, Matrix, Network, Role};
use crate::rng::{self, StreamTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Convenient,
    LooksLinear,
    FirstLayerScaled,
    Construction,
}

/// How one source layer is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerInit {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    /// Weights are `U[-weight_half, weight_half]`.
    pub weight_half: f64,
    /// Biases are `U[-bias_half, bias_half]`; zero means all biases vanish.
    pub bias_half: f64,
    /// Row `i + rows/2` carries the negated weights of row `i`.
    pub mirror_rows: bool,
    /// Column `j + cols/2` carries the negated weights of column `j`.
    pub mirror_cols: bool,
}

impl LayerInit {
    fn validate(&self, l: usize) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Shape(format!("layer {l} has an empty shape")));
        }
        if self.mirror_rows && self.rows % 2 != 0 {
            return Err(Error::Shape(format!(
                "looks-linear layer {l} needs an even width, got {}",
                self.rows
            )));
        }
        if self.mirror_cols && self.cols % 2 != 0 {
            return Err(Error::Shape(format!(
                "looks-linear layer {l} needs an even input width, got {}",
                self.cols
            )));
        }
        if !(self.weight_half > 0.0 && self.weight_half.is_finite())
            || !(self.bias_half >= 0.0 && self.bias_half.is_finite())
        {
            return Err(Error::Config(format!("layer {l} has an invalid half-range")));
        }
        Ok(())
    }

    /// Partner of neuron `k` under row mirroring.
    pub fn row_mirror(&self, k: usize) -> Option<usize> {
        self.mirror_rows.then(|| (k + self.rows / 2) % self.rows)
    }

    fn draw(&self, seed: u64, l: usize) -> Layer {
        let (r_base, c_base) = (
            if self.mirror_rows { self.rows / 2 } else { self.rows },
            if self.mirror_cols { self.cols / 2 } else { self.cols },
        );
        let mut w = Matrix::zeros(self.rows, self.cols);
        for i in 0..r_base {
            let mut s = rng::stream(seed, StreamTag::SourceWeight, l as u64, i as u64);
            for j in 0..c_base {
                let v = rng::symmetric(&mut s, self.weight_half);
                w[(i, j)] = v;
                if self.mirror_cols {
                    w[(i, j + c_base)] = -v;
                }
                if self.mirror_rows {
                    w[(i + r_base, j)] = -v;
                    if self.mirror_cols {
                        w[(i + r_base, j + c_base)] = v;
                    }
                }
            }
        }
        let bias = (0..self.rows)
            .map(|i| {
                let mut s = rng::stream(seed, StreamTag::SourceBias, l as u64, i as u64);
                rng::symmetric(&mut s, self.bias_half)
            })
            .collect();
        Layer { weights: w, bias, activation: self.activation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitPlan {
    pub scheme: Scheme,
    pub seed: u64,
    pub domain: Domain,
    pub layers: Vec<LayerInit>,
}

impl InitPlan {
    pub fn arch(&self) -> Vec<usize> {
        std::iter::once(self.layers.first().map_or(0, |l| l.cols))
            .chain(self.layers.iter().map(|l| l.rows))
            .collect()
    }

    /// `σ_l` of each layer, i.e. its weight half-range.
    pub fn sigmas(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.weight_half).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("an init plan needs at least one layer".into()));
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[1].cols != pair[0].rows {
                return Err(Error::Shape(format!(
                    "layer {} takes {} inputs but layer {} emits {}",
                    l + 2,
                    pair[1].cols,
                    l + 1,
                    pair[0].rows
                )));
            }
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate(l + 1)?;
        }
        Ok(())
    }

    /// Draws the source network.
    pub fn build(&self) -> Result<Network> {
        self.validate()?;
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, li)| li.draw(self.seed, l + 1))
            .collect();
        Network::new(layers, self.domain.clone(), Role::Source)
    }
}

fn check_arch(arch: &[usize], activations: &[Activation]) -> Result<()> {
    if arch.len() < 2 || arch.iter().any(|&n| n == 0) {
        return Err(Error::Shape(format!("invalid architecture {arch:?}")));
    }
    if activations.len() != arch.len() - 1 {
        return Err(Error::Shape(format!(
            "{} activations for {} layers",
            activations.len(),
            arch.len() - 1
        )));
    }
    Ok(())
}

/// Weights and first-layer biases `U[-1, 1]`, deeper biases zero.
pub fn convenient_plan(arch: &[usize], activations: &[Activation], seed: u64) -> Result<InitPlan> {
    check_arch(arch, activations)?;
    let layers = (1..arch.len())
        .map(|l| LayerInit {
            rows: arch[l],
            cols: arch[l - 1],
            activation: activations[l - 1],
            weight_half: 1.0,
            bias_half: if l == 1 { 1.0 } else { 0.0 },
            mirror_rows: false,
            mirror_cols: false,
        })
        .collect();
    Ok(InitPlan { scheme: Scheme::Convenient, seed, domain: Domain::unit(arch[0]), layers })
}

pub fn init_convenient(arch: &[usize], activations: &[Activation], seed: u64) -> Result<Network> {
    convenient_plan(arch, activations, seed)?.build()
}

/// Convenient ranges with every weight matrix in mirrored block form. All
/// widths must be even except the output width, whose rows are not mirrored.
pub fn looks_linear_plan(
    arch: &[usize],
    activations: &[Activation],
    seed: u64,
) -> Result<InitPlan> {
    let mut plan = convenient_plan(arch, activations, seed)?;
    let last = plan.layers.len() - 1;
    for (l, layer) in plan.layers.iter_mut().enumerate() {
        layer.mirror_cols = true;
        layer.mirror_rows = l != last;
    }
    plan.scheme = Scheme::LooksLinear;
    plan.validate()?;
    Ok(plan)
}

pub fn init_looks_linear(
    arch: &[usize],
    activations: &[Activation],
    seed: u64,
) -> Result<Network> {
    looks_linear_plan(arch, activations, seed)?.build()
}

/// Two-layer slab scaled for the identity approximation: first-layer
/// parameters `U[-σ, σ]`, second-layer weights `U[-1/(|m₊+m₋|σ), +]`, second
/// biases zero.
pub fn first_layer_scaled_plan(
    arch: &[usize],
    activations: &[Activation],
    spec: &ActivationSpec,
    sigma: f64,
    seed: u64,
) -> Result<InitPlan> {
    check_arch(arch, activations)?;
    if arch.len() != 3 {
        return Err(Error::Shape("the scaled scheme initializes exactly two layers".into()));
    }
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::Config(format!("σ = {sigma} not in (0, 1]")));
    }
    let slope = spec.slope_sum().abs();
    if slope == 0.0 {
        return Err(Error::InvalidActivation("m+ + m- must be nonzero".into()));
    }
    let mut plan = convenient_plan(arch, activations, seed)?;
    plan.layers[0].weight_half = sigma;
    plan.layers[0].bias_half = sigma;
    plan.layers[1].weight_half = 1.0 / (slope * sigma);
    plan.scheme = Scheme::FirstLayerScaled;
    Ok(plan)
}

pub fn init_first_layer_scaled(
    arch: &[usize],
    activations: &[Activation],
    spec: &ActivationSpec,
    sigma: f64,
    seed: u64,
) -> Result<Network> {
    first_layer_scaled_plan(arch, activations, spec, sigma, seed)?.build()
}

/// Divides layer `l` by `σ_l` and returns the scales `λ_l = 1/σ_l` that undo
/// it when stored on a ticket. Only positively homogeneous activations are
/// accepted.
pub fn rescale_to_convenient(net: &Network, sigmas: &[f64]) -> Result<(Network, Vec<f64>)> {
    if sigmas.len() != net.depth() {
        return Err(Error::Shape(format!(
            "{} scales for {} layers",
            sigmas.len(),
            net.depth()
        )));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::Config(format!("σ_l = {s} must be positive")));
    }
    if let Some(a) = net.activations().into_iter().find(|a| !a.is_homogeneous()) {
        return Err(Error::InvalidActivation(format!(
            "rescaling needs a positively homogeneous activation, got {a}"
        )));
    }
    let layers = net
        .layers()
        .iter()
        .zip(sigmas)
        .map(|(layer, &s)| {
            let mut out = layer.clone();
            out.weights.as_mut_slice().iter_mut().for_each(|w| *w /= s);
            out.bias.iter_mut().for_each(|b| *b /= s);
            out
        })
        .collect();
    let rescaled = Network::new(layers, net.domain().clone(), Role::Source)?;
    Ok((rescaled, sigmas.iter().map(|s| 1.0 / s).collect()))
}
