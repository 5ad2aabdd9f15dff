//! Activation registry and the piecewise-linear machinery around it.
//!
//! Every registered activation `φ` admits constants `(m₊, m₋, d)` and a
//! radius `a(ε)` such that `|φ(x) − (μ±(x)·x + d)| ≤ ε` whenever `|x| ≤ a(ε)`,
//! where `μ±(x)` is `m₊` for `x ≥ 0` and `m₋` otherwise. From this the
//! identity can be rebuilt as `x ≈ (φ(x) − φ(−x)) / (m₊ + m₋)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Activation tag as stored in model files: `relu`, `lrelu:<α>`, `tanh`,
/// `sigmoid` or `linear`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(alpha) => {
                if x >= 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Positive homogeneity: `φ(λx) = λφ(x)` for `λ > 0`.
    pub fn is_homogeneous(self) -> bool {
        matches!(
            self,
            Activation::Relu | Activation::LeakyRelu(_) | Activation::Linear
        )
    }

    pub fn spec(self) -> ActivationSpec {
        ActivationSpec::of(self)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::LeakyRelu(alpha) => write!(f, "lrelu:{alpha}"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Linear => f.write_str("linear"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(tag: &str) -> Result<Self> {
        match tag {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            _ => {
                let alpha = tag
                    .strip_prefix("lrelu:")
                    .and_then(|a| a.parse::<f64>().ok())
                    .ok_or_else(|| Error::UnknownActivation(tag.to_string()))?;
                // α ≤ 0 would make m₊ + m₋ ≤ 1 degenerate or non-monotone.
                if !(alpha.is_finite() && alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::UnknownActivation(tag.to_string()));
                }
                Ok(Activation::LeakyRelu(alpha))
            }
        }
    }
}

impl Serialize for Activation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Activation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tag = String::deserialize(d)?;
        tag.parse().map_err(serde::de::Error::custom)
    }
}

/// Validity radius of the linearization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    /// The linearization is exact on all of ℝ.
    Unbounded,
    /// `a(ε) = min{(k·ε)^{1/3}, cap}`.
    CubeRoot { k: f64, cap: f64 },
}

impl Radius {
    pub fn at(self, eps: f64) -> f64 {
        match self {
            Radius::Unbounded => f64::INFINITY,
            Radius::CubeRoot { k, cap } => (k * eps).cbrt().min(cap),
        }
    }

    pub fn is_finite(self) -> bool {
        !matches!(self, Radius::Unbounded)
    }
}

/// Result of inverting `g(ε) = ε / a(ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Linearization {
    /// `a = ∞`: any error share is met without restricting the input range.
    Unconstrained,
    /// The activation error `ε″` to plan for.
    Bounded(f64),
}

/// Largest activation error for which `g` is inverted.
pub const G_DOMAIN_MAX: f64 = 1.0;

const BISECTION_TOL: f64 = 1e-12;

/// Constants describing how an activation behaves near zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationSpec {
    pub activation: Activation,
    /// Global Lipschitz constant.
    pub lipschitz: f64,
    pub m_plus: f64,
    pub m_minus: f64,
    pub d: f64,
    pub radius: Radius,
}

impl ActivationSpec {
    pub fn of(activation: Activation) -> Self {
        match activation {
            Activation::Relu => Self {
                activation,
                lipschitz: 1.0,
                m_plus: 1.0,
                m_minus: 0.0,
                d: 0.0,
                radius: Radius::Unbounded,
            },
            Activation::LeakyRelu(alpha) => Self {
                activation,
                lipschitz: 1.0,
                m_plus: 1.0,
                m_minus: alpha,
                d: 0.0,
                radius: Radius::Unbounded,
            },
            Activation::Tanh => Self {
                activation,
                lipschitz: 1.0,
                m_plus: 1.0,
                m_minus: 1.0,
                d: 0.0,
                radius: Radius::CubeRoot { k: 3.0, cap: PI / 2.0 },
            },
            Activation::Sigmoid => Self {
                activation,
                lipschitz: 0.25,
                m_plus: 0.25,
                m_minus: 0.25,
                d: 0.5,
                radius: Radius::CubeRoot { k: 48.0, cap: PI },
            },
            Activation::Linear => Self {
                activation,
                lipschitz: 1.0,
                m_plus: 1.0,
                m_minus: 1.0,
                d: 0.0,
                radius: Radius::Unbounded,
            },
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.activation.apply(x)
    }

    pub fn phi0(&self) -> f64 {
        self.eval(0.0)
    }

    /// `m₊ + m₋`, never zero for registered activations.
    pub fn slope_sum(&self) -> f64 {
        self.m_plus + self.m_minus
    }

    pub fn radius_at(&self, eps: f64) -> f64 {
        self.radius.at(eps)
    }

    /// Slope of the piecewise-linear approximation at `x`.
    #[inline]
    pub fn mu(&self, x: f64) -> f64 {
        if x >= 0.0 {
            self.m_plus
        } else {
            self.m_minus
        }
    }

    /// `|φ(x) − (μ±(x)·x + d)|`.
    pub fn linearization_error(&self, x: f64) -> f64 {
        (self.eval(x) - (self.mu(x) * x + self.d)).abs()
    }

    /// `g(ε) = ε / a(ε)`; identically zero when the radius is unbounded.
    pub fn g(&self, eps: f64) -> f64 {
        match self.radius {
            Radius::Unbounded => 0.0,
            r => eps / r.at(eps),
        }
    }

    /// Residual of the identity reconstruction `x ≈ (φ(x) − φ(−x))/(m₊ + m₋)`.
    ///
    /// Since `μ(x) + μ(−x) = m₊ + m₋`, the residual equals
    /// `|e(x) − e(−x)|/(m₊ + m₋)` with `e(y) = φ(y) − μ(y)·y − d`, which is
    /// evaluated instead to avoid cancellation (it is exactly zero for
    /// piecewise-linear activations).
    pub fn identity_residual(&self, x: f64, eps: f64) -> Result<f64> {
        let radius = self.radius_at(eps);
        if x.abs() > radius {
            return Err(Error::Radius { x, radius });
        }
        let e = |y: f64| self.eval(y) - (self.mu(y) * y + self.d);
        Ok(((e(x) - e(-x)) / self.slope_sum()).abs())
    }

    /// Inverts `g` by bisection on `]0, G_DOMAIN_MAX]`.
    pub fn invert_g(&self, y: f64) -> Result<Linearization> {
        if !self.radius.is_finite() {
            return Ok(Linearization::Unconstrained);
        }
        let y_max = self.g(G_DOMAIN_MAX);
        if !(y > 0.0 && y <= y_max) {
            return Err(Error::Domain {
                value: y,
                reason: format!("g is inverted on ]0, {y_max}]"),
            });
        }
        let (mut lo, mut hi) = (0.0_f64, G_DOMAIN_MAX);
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            let gm = self.g(mid);
            if (gm - y).abs() <= BISECTION_TOL {
                return Ok(Linearization::Bounded(mid));
            }
            if mid == lo || mid == hi {
                break;
            }
            if gm < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Linearization::Bounded(0.5 * (lo + hi)))
    }

    /// Checks a user-supplied candidate linearization and refuses it unless
    /// `m₊ + m₋ ≠ 0` and the approximation holds on a dense grid for each
    /// probe error.
    pub fn validate_candidate<F: Fn(f64) -> f64>(
        name: &str,
        phi: F,
        m_plus: f64,
        m_minus: f64,
        d: f64,
        radius: Radius,
    ) -> Result<()> {
        if m_plus + m_minus == 0.0 {
            return Err(Error::InvalidActivation(format!(
                "{name}: m+ + m- must be nonzero"
            )));
        }
        for eps in [1e-1, 1e-2, 1e-3] {
            let a = match radius {
                // Probe an unbounded claim on a wide window.
                Radius::Unbounded => 10.0,
                r => r.at(eps),
            };
            let n = 10_000;
            for i in 0..=n {
                let x = -a + 2.0 * a * (i as f64) / (n as f64);
                let mu = if x >= 0.0 { m_plus } else { m_minus };
                if (phi(x) - (mu * x + d)).abs() > eps {
                    return Err(Error::InvalidActivation(format!(
                        "{name}: linearization violated at x = {x} for eps = {eps}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Looks up the spec for a textual tag.
pub fn spec_for(tag: &str) -> Result<ActivationSpec> {
    Ok(tag.parse::<Activation>()?.spec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(a: f64, n: usize) -> impl Iterator<Item = f64> {
        (0..=n).map(move |i| -a + 2.0 * a * (i as f64) / (n as f64))
    }

    #[test]
    fn registry_constants() {
        let relu = spec_for("relu").unwrap();
        assert_eq!((relu.m_plus, relu.m_minus, relu.d), (1.0, 0.0, 0.0));
        assert_eq!(relu.radius_at(0.1), f64::INFINITY);

        let sig = spec_for("sigmoid").unwrap();
        assert_eq!((sig.m_plus, sig.m_minus, sig.d), (0.25, 0.25, 0.5));
        assert_eq!(sig.radius_at(0.001), (0.048f64).cbrt());
        assert_eq!(sig.radius_at(10.0), PI);

        let tanh = spec_for("tanh").unwrap();
        let a = tanh.radius_at(0.003);
        assert!((a - 0.009f64.cbrt()).abs() < 1e-15);
        assert!((a - 0.2080).abs() < 1e-4);
        assert!(a < PI / 2.0);

        let lrelu = spec_for("lrelu:0.1").unwrap();
        assert_eq!((lrelu.m_plus, lrelu.m_minus), (1.0, 0.1));
        assert_eq!(spec_for("linear").unwrap().slope_sum(), 2.0);
    }

    #[test]
    fn unknown_tags_rejected() {
        for tag in ["swish", "shifted_relu", "abs", "lrelu:", "lrelu:x", "lrelu:-0.5", ""] {
            assert!(matches!(spec_for(tag), Err(Error::UnknownActivation(_))), "{tag}");
        }
    }

    #[test]
    fn tag_round_trip() {
        for tag in ["relu", "lrelu:0.1", "tanh", "sigmoid", "linear"] {
            assert_eq!(tag.parse::<Activation>().unwrap().to_string(), tag);
        }
    }

    #[test]
    fn lipschitz_constants() {
        assert_eq!(Activation::Sigmoid.spec().lipschitz, 0.25);
        for a in [Activation::Relu, Activation::Tanh, Activation::Linear] {
            assert_eq!(a.spec().lipschitz, 1.0);
        }
    }

    #[test]
    fn identity_residual_examples() {
        let relu = Activation::Relu.spec();
        assert_eq!(relu.identity_residual(0.7, 0.0).unwrap(), 0.0);

        let tanh = Activation::Tanh.spec();
        let r = tanh.identity_residual(0.1, 0.01).unwrap();
        // direct evaluation: 0.1 - tanh(0.1)
        assert!((r - 3.3200e-4).abs() < 1e-7, "{r}");
        assert!(r <= 0.1f64.powi(3) / 3.0);

        let lrelu = Activation::LeakyRelu(0.1).spec();
        assert_eq!(lrelu.identity_residual(-0.5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn identity_residual_outside_radius() {
        let tanh = Activation::Tanh.spec();
        let a = tanh.radius_at(1e-3);
        assert!(matches!(
            tanh.identity_residual(a * 1.01, 1e-3),
            Err(Error::Radius { .. })
        ));
    }

    #[test]
    fn linearization_grid() {
        for act in [Activation::Tanh, Activation::Sigmoid] {
            let spec = act.spec();
            for eps in [1e-1, 1e-2, 1e-3] {
                let a = spec.radius_at(eps);
                let worst = grid(a, 10_000)
                    .map(|x| spec.linearization_error(x))
                    .fold(0.0, f64::max);
                assert!(worst <= eps, "{act} eps={eps} worst={worst}");
            }
        }
    }

    #[test]
    fn invert_g_examples() {
        assert_eq!(
            Activation::Relu.spec().invert_g(0.3).unwrap(),
            Linearization::Unconstrained
        );

        // Closed form for the cube-root branch: g(ε) = ε^{2/3} / k^{1/3}.
        let closed = |k: f64, y: f64| (y * k.cbrt()).powf(1.5);
        let Linearization::Bounded(e) = Activation::Tanh.spec().invert_g(0.01).unwrap() else {
            panic!()
        };
        assert!((e - closed(3.0, 0.01)).abs() < 1e-9, "{e}");
        assert!((e - 1.732e-3).abs() < 1e-6);

        let Linearization::Bounded(e) = Activation::Sigmoid.spec().invert_g(0.01).unwrap()
        else {
            panic!()
        };
        assert!((e - closed(48.0, 0.01)).abs() < 1e-9);
        assert!((e - 6.928e-3).abs() < 1e-6, "{e}");
    }

    #[test]
    fn invert_g_round_trip_and_domain() {
        for act in [Activation::Tanh, Activation::Sigmoid] {
            let spec = act.spec();
            for i in 1..=200 {
                let y = spec.g(G_DOMAIN_MAX) * (i as f64) / 200.0;
                let Linearization::Bounded(e) = spec.invert_g(y).unwrap() else {
                    panic!()
                };
                assert!((spec.g(e) - y).abs() <= 1e-9);
            }
            assert!(matches!(spec.invert_g(0.0), Err(Error::Domain { .. })));
            assert!(matches!(spec.invert_g(-1.0), Err(Error::Domain { .. })));
            assert!(matches!(spec.invert_g(10.0), Err(Error::Domain { .. })));
        }
    }

    #[test]
    fn g_monotone_with_zero_limit() {
        for act in [Activation::Tanh, Activation::Sigmoid] {
            let spec = act.spec();
            let mut prev = 0.0;
            for i in 1..1000 {
                let g = spec.g(i as f64 * 1e-3);
                assert!(g > prev);
                prev = g;
            }
            assert!(spec.g(1e-30) < 1e-15);
        }
    }

    #[test]
    fn counterexamples_refused() {
        let shifted = |x: f64| (x - 1.0).max(0.0);
        for (mp, mm, d) in [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.5, 0.5, 0.0)] {
            assert!(ActivationSpec::validate_candidate(
                "shifted_relu", shifted, mp, mm, d, Radius::Unbounded
            )
            .is_err());
        }
        let abs = |x: f64| x.abs();
        assert!(
            ActivationSpec::validate_candidate("abs", abs, 1.0, -1.0, 0.0, Radius::Unbounded)
                .is_err()
        );
        // Registered activations pass their own check.
        let tanh = Activation::Tanh.spec();
        ActivationSpec::validate_candidate("tanh", f64::tanh, 1.0, 1.0, 0.0, tanh.radius).unwrap();
    }
}
