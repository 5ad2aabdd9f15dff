//! Dense feed-forward networks.
//!
//! Layer `l` maps `x^(l-1)` to `x^(l) = φ_l(W^(l) x^(l-1) + b^(l))`. Weights are
//! row-major with shape `(n_l, n_{l-1})`.

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged weight matrix".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// Maximum absolute row sum, `‖W‖_∞`.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|w| w.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::Shape(format!(
                "{} weight rows but {} biases",
                weights.rows(),
                bias.len()
            )));
        }
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::Shape("empty layer".into()));
        }
        Ok(Self { weights, bias, activation })
    }

    #[inline]
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    /// `φ(Wx + b)` written into `out`.
    pub fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.outputs()).map(|i| {
            let row = self.weights.row(i);
            let mut h = 0.0;
            for (w, xj) in row.iter().zip(x) {
                h += w * xj;
            }
            self.activation.apply(h + self.bias[i])
        }));
    }
}

/// Axis-aligned input box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Domain {
    /// `[-1, 1]^n`.
    pub fn unit(n: usize) -> Self {
        Self { low: vec![-1.0; n], high: vec![1.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.low.len() != self.high.len() {
            return Err(Error::Shape("domain bounds differ in length".into()));
        }
        for (l, h) in self.low.iter().zip(&self.high) {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::Shape(format!("invalid domain interval [{l}, {h}]")));
            }
        }
        Ok(())
    }

    /// `max_i max(|low_i|, |high_i|)`.
    pub fn max_abs(&self) -> f64 {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| l.abs().max(h.abs()))
            .fold(0.0, f64::max)
    }

    /// `sup_{x ∈ box} ‖x‖₁`.
    pub fn l1_sup(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| l.abs().max(h.abs())).sum()
    }

    pub fn center(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (l + h)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Target,
    Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    domain: Domain,
    role: Role,
}

impl Network {
    /// Builds a network, checking that layer shapes compose, the domain
    /// matches the input width, every value is finite and, for targets, that
    /// all parameters lie in `[-1, 1]`.
    pub fn new(layers: Vec<Layer>, domain: Domain, role: Role) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        domain.validate()?;
        if domain.dim() != layers[0].inputs() {
            return Err(Error::Shape(format!(
                "domain has {} dims but the first layer takes {} inputs",
                domain.dim(),
                layers[0].inputs()
            )));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].inputs() != pair[0].outputs() {
                return Err(Error::Shape(format!(
                    "layer {} takes {} inputs but layer {} emits {}",
                    l + 2,
                    pair[1].inputs(),
                    l + 1,
                    pair[0].outputs()
                )));
            }
        }
        for (l, layer) in layers.iter().enumerate() {
            let params = layer.weights.as_slice().iter().chain(&layer.bias);
            for &p in params {
                if !p.is_finite() {
                    return Err(Error::Format(format!("non-finite parameter in layer {}", l + 1)));
                }
                if role == Role::Target && p.abs() > 1.0 {
                    return Err(Error::Domain {
                        value: p,
                        reason: format!("target parameters must satisfy |θ| ≤ 1 (layer {})", l + 1),
                    });
                }
            }
        }
        Ok(Self { layers, domain, role })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l]
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// `[n_0, n_1, ..., n_L]`.
    pub fn arch(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    /// Largest Lipschitz constant over all layer activations.
    pub fn lipschitz(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.activation.spec().lipschitz)
            .fold(0.0, f64::max)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// All layer outputs `x^(1..=L)`.
    pub fn forward_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        Ok(self.forward_unchecked_trace(x))
    }

    pub(crate) fn forward_unchecked_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut trace: Vec<Vec<f64>> = Vec::with_capacity(self.depth());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut next = Vec::new();
            layer.forward_into(&cur, &mut next);
            trace.push(next.clone());
            cur = next;
        }
        trace
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Number of nonzero weights and biases.
    pub fn nonzero_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weights.as_slice().iter().filter(|w| **w != 0.0).count()
                    + l.bias.iter().filter(|b| **b != 0.0).count()
            })
            .sum()
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn with_role(mut self, role: Role) -> Result<Self> {
        if role == Role::Target {
            return Network::new(self.layers, self.domain, role);
        }
        self.role = role;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: Vec<Vec<f64>>, b: Vec<f64>, act: Activation) -> Network {
        let layer = Layer::new(Matrix::from_rows(&w).unwrap(), b, act).unwrap();
        let n = layer.inputs();
        Network::new(vec![layer], Domain::unit(n), Role::Target).unwrap()
    }

    #[test]
    fn forward_examples() {
        let id = single(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], Activation::Linear);
        assert_eq!(id.forward(&[0.3, -0.2]).unwrap(), vec![0.3, -0.2]);

        let relu = single(vec![vec![1.0, -1.0]], vec![0.5], Activation::Relu);
        assert_eq!(relu.forward(&[1.0, 2.0]).unwrap(), vec![0.0]);

        let sig = single(vec![vec![0.0]], vec![0.0], Activation::Sigmoid);
        assert_eq!(sig.forward(&[5.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn forward_shape_error() {
        let relu = single(vec![vec![1.0, -1.0]], vec![0.5], Activation::Relu);
        assert!(matches!(relu.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn nonzero_counts() {
        let zero = single(vec![vec![0.0, 0.0]], vec![0.0], Activation::Relu);
        assert_eq!(zero.nonzero_count(), 0);
        let net = single(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 1.0], Activation::Relu);
        assert_eq!(net.nonzero_count(), 3);
    }

    #[test]
    fn inf_norm() {
        let m = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!(m.inf_norm(), 2.0);
    }

    #[test]
    fn construction_invariants() {
        let l1 = Layer::new(Matrix::zeros(3, 2), vec![0.0; 3], Activation::Relu).unwrap();
        let bad = Layer::new(Matrix::zeros(1, 2), vec![0.0], Activation::Relu).unwrap();
        assert!(Network::new(vec![l1.clone(), bad], Domain::unit(2), Role::Source).is_err());
        assert!(Network::new(vec![l1.clone()], Domain::unit(3), Role::Source).is_err());
        assert!(Layer::new(Matrix::zeros(2, 2), vec![0.0], Activation::Relu).is_err());

        let mut big = Matrix::zeros(1, 1);
        big[(0, 0)] = 1.5;
        let layer = Layer::new(big, vec![0.0], Activation::Relu).unwrap();
        assert!(Network::new(vec![layer.clone()], Domain::unit(1), Role::Target).is_err());
        assert!(Network::new(vec![layer], Domain::unit(1), Role::Source).is_ok());

        let mut nan = Matrix::zeros(1, 1);
        nan[(0, 0)] = f64::NAN;
        let layer = Layer::new(nan, vec![0.0], Activation::Relu).unwrap();
        assert!(Network::new(vec![layer], Domain::unit(1), Role::Source).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let net = single(
            vec![vec![0.3, -0.7], vec![0.1, 0.9]],
            vec![0.2, -0.4],
            Activation::Tanh,
        );
        let a = net.forward(&[0.123, -0.456]).unwrap();
        let b = net.forward(&[0.123, -0.456]).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
