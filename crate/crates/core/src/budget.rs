//! Error budgets and width requirements.
//!
//! Perturbing every parameter of layer `l` by at most
//!
//! ```text
//! ε_l = ε/(n_l L) · [T^{L−l+1} (1 + M_{l−1}) (1 + ε/L) Π_{k=l+1}^{L−1} (‖W^(k)‖_∞ + ε/L)]^{−1}
//! ```
//!
//! keeps the sup-norm output deviation below `ε`, where `M_l` bounds
//! `‖x^(l)‖₁` on the domain and `T` is the largest Lipschitz constant.

use serde::{Deserialize, Serialize};

use crate::activation::{ActivationSpec, Linearization};
use crate::error::{Error, Result};
use crate::netcore::Network;
use crate::sampling;

/// Smallest per-parameter tolerance a construction accepts.
pub const UNDERFLOW_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    /// Interval propagation through the box; a guaranteed bound.
    Interval,
    /// Largest sampled norm times 1.05; not a guaranteed bound.
    Sampled { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms {
    /// `M_0..=M_L`.
    pub m: Vec<f64>,
    /// `‖W^(1)‖_∞..=‖W^(L)‖_∞`.
    pub w_inf: Vec<f64>,
    /// Per layer `0..=L`, the largest `|x_j^(l)|` on the domain.
    pub coord_max: Vec<f64>,
    pub sound: bool,
}

/// Interval image of every layer output over the domain box.
pub fn interval_bounds(net: &Network) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut lo = net.domain().low.clone();
    let mut hi = net.domain().high.clone();
    let mut out = vec![(lo.clone(), hi.clone())];
    for layer in net.layers() {
        let mut nlo = Vec::with_capacity(layer.outputs());
        let mut nhi = Vec::with_capacity(layer.outputs());
        for i in 0..layer.outputs() {
            let (mut a, mut b) = (layer.bias[i], layer.bias[i]);
            for (j, &w) in layer.weights.row(i).iter().enumerate() {
                if w >= 0.0 {
                    a += w * lo[j];
                    b += w * hi[j];
                } else {
                    a += w * hi[j];
                    b += w * lo[j];
                }
            }
            // Every registered activation is non-decreasing.
            nlo.push(layer.activation.apply(a));
            nhi.push(layer.activation.apply(b));
        }
        lo = nlo;
        hi = nhi;
        out.push((lo.clone(), hi.clone()));
    }
    out
}

pub fn layer_norms(net: &Network, method: NormMethod) -> LayerNorms {
    let w_inf = net.layers().iter().map(|l| l.weights.inf_norm()).collect();
    match method {
        NormMethod::Interval => {
            let bounds = interval_bounds(net);
            let abs = |(lo, hi): &(Vec<f64>, Vec<f64>)| -> Vec<f64> {
                lo.iter().zip(hi).map(|(a, b)| a.abs().max(b.abs())).collect()
            };
            let per: Vec<Vec<f64>> = bounds.iter().map(abs).collect();
            LayerNorms {
                m: per.iter().map(|v| v.iter().sum()).collect(),
                coord_max: per.iter().map(|v| v.iter().copied().fold(0.0, f64::max)).collect(),
                w_inf,
                sound: true,
            }
        }
        NormMethod::Sampled { samples, seed } => {
            let depth = net.depth();
            let mut m = vec![0.0f64; depth + 1];
            let mut coord_max = vec![0.0f64; depth + 1];
            for x in sampling::domain_points(net.domain(), samples.max(1), seed) {
                let trace = net.forward_unchecked_trace(&x);
                for (l, v) in std::iter::once(&x).chain(trace.iter()).enumerate() {
                    m[l] = m[l].max(v.iter().map(|a| a.abs()).sum());
                    coord_max[l] = coord_max[l].max(v.iter().map(|a| a.abs()).fold(0.0, f64::max));
                }
            }
            LayerNorms {
                m: m.into_iter().map(|v| 1.05 * v).collect(),
                coord_max: coord_max.into_iter().map(|v| 1.05 * v).collect(),
                w_inf,
                sound: false,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub eps: f64,
    /// `ε_1..=ε_L`.
    pub layer_eps: Vec<f64>,
    pub norms: LayerNorms,
    pub lipschitz: f64,
    pub depth: usize,
}

impl ErrorBudget {
    /// Fails with a budget underflow if any `ε_l` is below the floor.
    pub fn check(&self) -> Result<()> {
        for (l, &e) in self.layer_eps.iter().enumerate() {
            if !(e >= UNDERFLOW_FLOOR) {
                return Err(Error::BudgetUnderflow {
                    layer: l + 1,
                    tolerance: e,
                    floor: UNDERFLOW_FLOOR,
                });
            }
        }
        Ok(())
    }

    pub fn min_eps(&self) -> f64 {
        self.layer_eps.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Per-layer tolerances from precomputed norms.
pub fn budget_from_norms(
    widths: &[usize],
    norms: &LayerNorms,
    lipschitz: f64,
    eps: f64,
) -> Vec<f64> {
    let depth = widths.len();
    let lf = depth as f64;
    (1..=depth)
        .map(|l| {
            let mut bracket = lipschitz.powi((depth - l + 1) as i32)
                * (1.0 + norms.m[l - 1])
                * (1.0 + eps / lf);
            for k in (l + 1)..depth {
                bracket *= norms.w_inf[k - 1] + eps / lf;
            }
            eps / (widths[l - 1] as f64 * lf) / bracket
        })
        .collect()
}

pub fn error_budget(net: &Network, eps: f64, method: NormMethod) -> Result<ErrorBudget> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("ε = {eps} not in (0, 1)")));
    }
    let norms = layer_norms(net, method);
    let widths: Vec<usize> = net.layers().iter().map(|l| l.outputs()).collect();
    let lipschitz = net.lipschitz();
    let layer_eps = budget_from_norms(&widths, &norms, lipschitz, eps);
    Ok(ErrorBudget { eps, layer_eps, norms, lipschitz, depth: net.depth() })
}

/// Inputs of the first-layer scaling rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabScaling {
    pub eps: f64,
    pub n0: usize,
    /// Bound `M` on `|x_j|`.
    pub m_bound: f64,
    pub delta: f64,
    pub n_t1: usize,
    pub c: f64,
    /// Target Lipschitz constant `T_t`.
    pub lipschitz: f64,
}

/// `σ = min{1, a(ε″)/M}` with
/// `ε″ = g^{-1}(ε′ / (C T n₀ (M/|m₊+m₋|) ln(n₀ / min{δ′/n_{t,1}, ε′/(T M)})))`.
pub fn sigma_eps2(spec: &ActivationSpec, p: &SlabScaling) -> Result<(f64, Linearization)> {
    if !(p.eps > 0.0 && p.eps < 1.0 && p.delta > 0.0 && p.delta < 1.0) {
        return Err(Error::Config("ε′ and δ′ must lie in (0, 1)".into()));
    }
    if !spec.radius.is_finite() {
        return Ok((1.0, Linearization::Unconstrained));
    }
    let n0 = p.n0 as f64;
    let floor = (p.delta / p.n_t1 as f64).min(p.eps / (p.lipschitz * p.m_bound));
    let y = p.eps
        / (p.c * p.lipschitz * n0 * (p.m_bound / spec.slope_sum().abs()) * (n0 / floor).ln());
    let lin = spec.invert_g(y)?;
    let Linearization::Bounded(e2) = lin else {
        return Ok((1.0, lin));
    };
    Ok(((spec.radius_at(e2) / p.m_bound).min(1.0), lin))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthMode {
    TwoForOne,
    OneForOne,
    Full,
}

impl std::str::FromStr for WidthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_for_one" | "2l" => Ok(WidthMode::TwoForOne),
            "one_for_one" => Ok(WidthMode::OneForOne),
            "full" | "full_l_plus_1" | "l+1" => Ok(WidthMode::Full),
            _ => Err(Error::Config(format!("unknown width mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidthInputs {
    /// Target architecture `[n_0, ..., n_L]`.
    pub arch: Vec<usize>,
    pub eps: f64,
    pub delta: f64,
    pub c: f64,
    pub gamma: f64,
    pub lipschitz: f64,
    pub m_bound: f64,
    /// Nonzero target parameters `N_t`; defaults to the dense count.
    pub nonzero: Option<usize>,
    /// Per-layer `ε_l`; defaults to `ε/(n_l L)`.
    pub layer_eps: Option<Vec<f64>>,
    /// Copy multiplicity for the one-for-one form; defaults to the full-mode `ρ`.
    pub rho: Option<f64>,
}

impl WidthInputs {
    pub fn new(arch: Vec<usize>, eps: f64, delta: f64) -> Self {
        Self {
            arch,
            eps,
            delta,
            c: 1.0,
            gamma: 0.1,
            lipschitz: 1.0,
            m_bound: 1.0,
            nonzero: None,
            layer_eps: None,
            rho: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthReport {
    pub mode: WidthMode,
    /// Required source widths, one per source layer.
    pub widths: Vec<usize>,
    /// The same before rounding up.
    pub raw: Vec<f64>,
    pub rho: Option<usize>,
    pub rho_raw: Option<f64>,
    pub c: f64,
    pub gamma: f64,
    pub delta: f64,
}

pub fn width_bounds(inp: &WidthInputs, mode: WidthMode) -> Result<WidthReport> {
    let arch = &inp.arch;
    if arch.len() < 2 || arch.iter().any(|&n| n == 0) {
        return Err(Error::Shape(format!("invalid architecture {arch:?}")));
    }
    if !(inp.c > 0.0 && inp.gamma > 0.0) {
        return Err(Error::Config("C and γ must be positive".into()));
    }
    if !(inp.eps > 0.0 && inp.delta > 0.0) {
        return Err(Error::Config("ε and δ must be positive".into()));
    }
    let depth = arch.len() - 1;
    let n = |l: usize| arch[l] as f64;
    let (c, t, m) = (inp.c, inp.lipschitz, inp.m_bound);
    let layer_eps: Vec<f64> = match &inp.layer_eps {
        Some(v) if v.len() == depth => v.clone(),
        Some(_) => return Err(Error::Shape("one ε_l per target layer expected".into())),
        None => (1..=depth).map(|l| inp.eps / (n(l) * depth as f64)).collect(),
    };
    let nonzero = inp.nonzero.unwrap_or_else(|| {
        (1..=depth).map(|l| arch[l] * arch[l - 1] + arch[l]).sum()
    }) as f64;
    let min_eps = layer_eps.iter().copied().fold(f64::INFINITY, f64::min);
    let rho_full = c * nonzero.powf(1.0 + inp.gamma) * (1.0 / min_eps.min(inp.delta)).ln();

    // Hidden layer of a two-for-one slab realizing target layer l.
    let slab = |l: usize| -> f64 {
        let floor = (inp.eps / (t * m)).min(inp.delta / n(l));
        c * n(l - 1) * (n(l - 1) / floor).ln()
    };

    let (raw, rho_raw) = match mode {
        WidthMode::TwoForOne => {
            let raw = (1..=depth).flat_map(|l| [slab(l), n(l)]).collect();
            (raw, None)
        }
        WidthMode::OneForOne => {
            let rho = inp.rho.unwrap_or(rho_full);
            let mut raw = vec![slab(1)];
            for l in 1..depth {
                let floor = (inp.eps / (m * t)).min(inp.delta / (rho * n(l + 1)));
                raw.push(c * n(l) * (n(l) / floor).ln());
            }
            raw.push(n(depth));
            (raw, Some(rho))
        }
        WidthMode::Full => {
            let mut raw = vec![slab(1)];
            for l in 1..depth {
                raw.push(c * n(l) * (1.0 / layer_eps[l].min(inp.delta / rho_full)).ln());
            }
            raw.push(n(depth));
            (raw, Some(rho_full))
        }
    };
    Ok(WidthReport {
        mode,
        widths: raw.iter().map(|w: &f64| (w.ceil() as usize).max(1)).collect(),
        raw,
        rho: rho_raw.map(|r: f64| (r.ceil() as usize).max(1)),
        rho_raw,
        c,
        gamma: inp.gamma,
        delta: inp.delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::netcore::{Domain, Layer, Matrix, Role};

    fn net(layers: Vec<(Vec<Vec<f64>>, Vec<f64>, Activation)>, n0: usize) -> Network {
        let layers = layers
            .into_iter()
            .map(|(w, b, a)| Layer::new(Matrix::from_rows(&w).unwrap(), b, a).unwrap())
            .collect();
        Network::new(layers, Domain::unit(n0), Role::Target).unwrap()
    }

    #[test]
    fn inf_norm_and_interval_norms() {
        let n = net(
            vec![(vec![vec![1.0, -1.0], vec![0.5, 0.5]], vec![0.0, 0.0], Activation::Linear)],
            2,
        );
        let norms = layer_norms(&n, NormMethod::Interval);
        assert_eq!(norms.w_inf, vec![2.0]);

        let id = net(vec![(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0; 2], Activation::Linear)], 2);
        let exact = layer_norms(&id, NormMethod::Interval);
        assert_eq!(exact.m, vec![2.0, 2.0]);
        let sampled = layer_norms(&id, NormMethod::Sampled { samples: 500, seed: 1 });
        assert!(!sampled.sound);
        assert!(exact.m[1] >= sampled.m[1] / 1.05);

        let sig = net(
            vec![(vec![vec![1.0], vec![-1.0], vec![0.3]], vec![0.1, 0.2, 0.3], Activation::Sigmoid)],
            1,
        );
        assert!(layer_norms(&sig, NormMethod::Interval).m[1] <= 3.0);
    }

    #[test]
    fn single_layer_budget() {
        // n₁ = 2, M₀ = 1 on [-1/2, 1/2]^2 would give 1; use [-1,1]^1 input.
        let n = net(vec![(vec![vec![1.0], vec![0.5]], vec![0.0, 0.0], Activation::Relu)], 1);
        let b = error_budget(&n, 0.1, NormMethod::Interval).unwrap();
        assert!((b.layer_eps[0] - 0.05 / 2.2).abs() < 1e-15);
        assert!((b.layer_eps[0] - 0.022727).abs() < 1e-6);
    }

    #[test]
    fn two_layer_budget() {
        let norms = LayerNorms {
            m: vec![1.0, 1.0, 1.0],
            w_inf: vec![1.0, 1.0],
            coord_max: vec![1.0; 3],
            sound: true,
        };
        let e = budget_from_norms(&[1, 1], &norms, 1.0, 0.1);
        assert!((e[0] - 0.05 / 2.1).abs() < 1e-15);
        assert!((e[1] - 0.05 / 2.1).abs() < 1e-15);
        assert!((e[0] - 0.02381).abs() < 1e-5);
    }

    #[test]
    fn budget_shrinks_with_eps() {
        let n = net(
            vec![
                (vec![vec![0.5, -0.2], vec![0.1, 0.9]], vec![0.1, -0.3], Activation::Tanh),
                (vec![vec![1.0, -1.0]], vec![0.2], Activation::Linear),
            ],
            2,
        );
        let mut prev = vec![f64::INFINITY; 2];
        for eps in [0.5, 0.1, 0.01, 0.001] {
            let b = error_budget(&n, eps, NormMethod::Interval).unwrap();
            for l in 0..2 {
                assert!(b.layer_eps[l] < prev[l] && b.layer_eps[l] <= eps);
            }
            prev = b.layer_eps;
        }
    }

    #[test]
    fn underflow_is_reported() {
        let norms = LayerNorms { m: vec![1e6; 2], w_inf: vec![1.0], coord_max: vec![1.0; 2], sound: true };
        let b = ErrorBudget {
            eps: 1e-9,
            layer_eps: budget_from_norms(&[1000], &norms, 1.0, 1e-9),
            norms,
            lipschitz: 1.0,
            depth: 1,
        };
        assert!(matches!(b.check(), Err(Error::BudgetUnderflow { layer: 1, .. })));
    }

    #[test]
    fn sigma_rules() {
        let p = SlabScaling {
            eps: 0.01,
            n0: 4,
            m_bound: 1.0,
            delta: 0.01,
            n_t1: 4,
            c: 1.0,
            lipschitz: 1.0,
        };
        let (s, lin) = sigma_eps2(&Activation::Relu.spec(), &p).unwrap();
        assert_eq!((s, lin), (1.0, Linearization::Unconstrained));

        let tanh = Activation::Tanh.spec();
        let (s, lin) = sigma_eps2(&tanh, &p).unwrap();
        let Linearization::Bounded(e2) = lin else { panic!() };
        // y = 0.01 / (4 · 0.5 · ln(4/0.0025)).
        let y = 0.01 / (4.0 * 0.5 * (1600.0f64).ln());
        assert!((tanh.g(e2) - y).abs() < 1e-12);
        assert!((s - tanh.radius_at(e2)).abs() < 1e-15);

        let (s2, _) = sigma_eps2(&tanh, &SlabScaling { m_bound: 2.0, ..p }).unwrap();
        assert!(s2 <= s);
    }

    #[test]
    fn width_examples() {
        let mut inp = WidthInputs::new(vec![4, 4, 1], 0.01, 0.04);
        let r = width_bounds(&inp, WidthMode::TwoForOne).unwrap();
        assert!((r.raw[0] - 4.0 * 400.0f64.ln()).abs() < 1e-9);
        assert_eq!(r.widths[0], 24);

        inp = WidthInputs::new(vec![4, 4, 1], 0.05, 0.05);
        inp.nonzero = Some(100);
        inp.layer_eps = Some(vec![0.01, 0.01]);
        let r = width_bounds(&inp, WidthMode::Full).unwrap();
        assert!((r.rho_raw.unwrap() - 100f64.powf(1.1) * 100f64.ln()).abs() < 1e-9);
        assert_eq!(r.rho, Some(730));
    }

    #[test]
    fn widths_monotone_in_eps() {
        let mut prev = vec![0usize; 4];
        for eps in [0.2, 0.1, 0.05, 0.01] {
            let r = width_bounds(&WidthInputs::new(vec![3, 5, 2], eps, 0.05), WidthMode::Full)
                .unwrap();
            for (a, b) in r.widths.iter().zip(&prev) {
                assert!(a >= b);
            }
            prev = r.widths;
        }
    }
}
