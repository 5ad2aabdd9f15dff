//! Masked subnetworks of a source network.

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::init::InitPlan;
use crate::manifest::ConstructionManifest;
use crate::netcore::Network;

/// Binary masks for one layer, row-major like the weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMask {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<bool>,
    pub bias: Vec<bool>,
}

impl LayerMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self { rows, cols, weights: vec![false; rows * cols], bias: vec![false; rows] }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self { rows, cols, weights: vec![true; rows * cols], bias: vec![true; rows] }
    }

    #[inline]
    pub fn weight(&self, r: usize, c: usize) -> bool {
        self.weights[r * self.cols + c]
    }

    #[inline]
    pub fn keep_weight(&mut self, r: usize, c: usize) {
        self.weights[r * self.cols + c] = true;
    }

    pub fn kept(&self) -> usize {
        self.weights.iter().filter(|b| **b).count() + self.bias.iter().filter(|b| **b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketStats {
    pub param_count: usize,
    pub max_width: usize,
    pub depth: usize,
}

/// A source network with masks and per-layer scales. Evaluation uses
/// `λ_l · θ` for kept parameters and zero otherwise; source values are never
/// modified.
#[derive(Debug, Clone, PartialEq)]
pub struct Ticket {
    pub source: Network,
    pub masks: Vec<LayerMask>,
    pub scales: Vec<f64>,
    pub init_plan: Option<InitPlan>,
    pub manifest: Option<ConstructionManifest>,
}

/// Kept entries of one layer in evaluation order.
struct SparseLayer {
    rows: Vec<Vec<(usize, f64)>>,
    bias: Vec<Option<f64>>,
    activation: Activation,
}

impl Ticket {
    pub fn new(source: Network, masks: Vec<LayerMask>, scales: Vec<f64>) -> Result<Self> {
        let t = Self { source, masks, scales, init_plan: None, manifest: None };
        t.validate()?;
        Ok(t)
    }

    /// Keeps every parameter with unit scales.
    pub fn dense(source: Network) -> Self {
        let masks = source
            .layers()
            .iter()
            .map(|l| LayerMask::full(l.outputs(), l.inputs()))
            .collect();
        let scales = vec![1.0; source.depth()];
        Self { source, masks, scales, init_plan: None, manifest: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.masks.len() != self.source.depth() || self.scales.len() != self.source.depth() {
            return Err(Error::Shape(format!(
                "{} masks and {} scales for a depth-{} source",
                self.masks.len(),
                self.scales.len(),
                self.source.depth()
            )));
        }
        for (l, (mask, layer)) in self.masks.iter().zip(self.source.layers()).enumerate() {
            if mask.rows != layer.outputs()
                || mask.cols != layer.inputs()
                || mask.weights.len() != mask.rows * mask.cols
                || mask.bias.len() != mask.rows
            {
                return Err(Error::Shape(format!("mask of layer {} does not match", l + 1)));
            }
        }
        if let Some(s) = self.scales.iter().find(|s| !s.is_finite()) {
            return Err(Error::Format(format!("non-finite scale {s}")));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.source.depth()
    }

    fn compile(&self) -> Vec<SparseLayer> {
        self.source
            .layers()
            .iter()
            .zip(&self.masks)
            .zip(&self.scales)
            .map(|((layer, mask), &lambda)| SparseLayer {
                rows: (0..layer.outputs())
                    .map(|i| {
                        let w = layer.weights.row(i);
                        (0..layer.inputs())
                            .filter(|&j| mask.weight(i, j))
                            .map(|j| (j, lambda * w[j]))
                            .collect()
                    })
                    .collect(),
                bias: (0..layer.outputs())
                    .map(|i| mask.bias[i].then(|| lambda * layer.bias[i]))
                    .collect(),
                activation: layer.activation,
            })
            .collect()
    }

    /// A reusable evaluator for many inputs.
    pub fn evaluator(&self) -> TicketEvaluator {
        TicketEvaluator { layers: self.compile(), input_dim: self.source.input_dim() }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.evaluator().forward(x)
    }

    /// All layer outputs of the masked network.
    pub fn forward_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.evaluator().trace(x)
    }

    /// Kept parameters, widest layer counted by neurons touching a kept
    /// parameter, and depth.
    pub fn stats(&self) -> TicketStats {
        let depth = self.depth();
        let mut max_width = 0;
        for l in 0..depth {
            let mask = &self.masks[l];
            let next = self.masks.get(l + 1);
            let alive = (0..mask.rows)
                .filter(|&i| {
                    mask.bias[i]
                        || (0..mask.cols).any(|j| mask.weight(i, j))
                        || next.is_some_and(|n| (0..n.rows).any(|r| n.weight(r, i)))
                })
                .count();
            max_width = max_width.max(alive);
        }
        TicketStats {
            param_count: self.masks.iter().map(LayerMask::kept).sum(),
            max_width,
            depth,
        }
    }

    /// The masked network materialized densely (pruned entries set to zero,
    /// scales folded in).
    pub fn materialize(&self) -> Result<Network> {
        let layers = self
            .source
            .layers()
            .iter()
            .zip(&self.masks)
            .zip(&self.scales)
            .map(|((layer, mask), &lambda)| {
                let mut out = layer.clone();
                for (w, &keep) in out.weights.as_mut_slice().iter_mut().zip(&mask.weights) {
                    *w = if keep { lambda * *w } else { 0.0 };
                }
                for (b, &keep) in out.bias.iter_mut().zip(&mask.bias) {
                    *b = if keep { lambda * *b } else { 0.0 };
                }
                out
            })
            .collect();
        Network::new(layers, self.source.domain().clone(), self.source.role())
    }
}

pub struct TicketEvaluator {
    layers: Vec<SparseLayer>,
    input_dim: usize,
}

impl TicketEvaluator {
    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "input has {} entries, ticket expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn step(layer: &SparseLayer, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(layer.rows.iter().zip(&layer.bias).map(|(row, b)| {
            let mut h = 0.0;
            for &(j, w) in row {
                h += w * x[j];
            }
            if let Some(b) = b {
                h += b;
            }
            layer.activation.apply(h)
        }));
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            Self::step(layer, &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(x)?;
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut next = Vec::new();
            Self::step(layer, &cur, &mut next);
            out.push(next.clone());
            cur = next;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::init_convenient;

    #[test]
    fn dense_ticket_is_bit_identical() {
        let acts = [Activation::Relu, Activation::Tanh, Activation::Linear];
        let net = init_convenient(&[3, 7, 5, 2], &acts, 8).unwrap();
        let t = Ticket::dense(net.clone());
        for i in 0..50 {
            let x = [0.1 * i as f64 - 2.0, 0.03 * i as f64, -0.5];
            let a = net.forward(&x).unwrap();
            let b = t.forward(&x).unwrap();
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn empty_mask_gives_constants() {
        let acts = [Activation::Sigmoid, Activation::Sigmoid];
        let net = init_convenient(&[2, 3, 1], &acts, 1).unwrap();
        let masks = vec![LayerMask::empty(3, 2), LayerMask::empty(1, 3)];
        let t = Ticket::new(net, masks, vec![1.0, 1.0]).unwrap();
        assert_eq!(t.forward(&[0.3, 0.9]).unwrap(), vec![0.5]);
        assert_eq!(t.stats().param_count, 0);
    }

    #[test]
    fn stats_count_kept_parameters_and_live_neurons() {
        let net = init_convenient(&[2, 4, 1], &[Activation::Relu; 2], 1).unwrap();
        let mut m1 = LayerMask::empty(4, 2);
        m1.keep_weight(0, 0);
        m1.keep_weight(1, 1);
        let mut m2 = LayerMask::empty(1, 4);
        m2.keep_weight(0, 2);
        let t = Ticket::new(net, vec![m1, m2], vec![1.0, 1.0]).unwrap();
        let s = t.stats();
        assert_eq!(s.param_count, 3);
        assert_eq!(s.max_width, 3);
        assert_eq!(s.depth, 2);
    }

    #[test]
    fn shape_mismatch() {
        let net = init_convenient(&[2, 4, 1], &[Activation::Relu; 2], 1).unwrap();
        assert!(Ticket::new(net.clone(), vec![LayerMask::empty(4, 2)], vec![1.0]).is_err());
        let t = Ticket::dense(net);
        assert!(t.forward(&[1.0]).is_err());
    }

    #[test]
    fn materialized_network_agrees() {
        let net = init_convenient(&[2, 4, 1], &[Activation::Relu; 2], 1).unwrap();
        let mut m1 = LayerMask::full(4, 2);
        m1.weights[3] = false;
        let t = Ticket::new(net, vec![m1, LayerMask::full(1, 4)], vec![1.0, 1.0]).unwrap();
        let dense = t.materialize().unwrap();
        let x = [0.4, -0.7];
        assert_eq!(dense.forward(&x).unwrap(), t.forward(&x).unwrap());
    }
}
