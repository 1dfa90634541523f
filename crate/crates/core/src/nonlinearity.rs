//! Singular drifts, their Lipschitz regularizations and the associated
//! potentials.
//!
//! `f` is either `-ln x` or `x^{-α}` on `x > 0` and `+∞` elsewhere. The
//! regularization at level `n` is `f^n(x) = f(x⁺ + 1/n)`. `F` and `F^n` are
//! antiderivatives of `-f` and `-f^n`, and the potentials integrate them over
//! `[0, 1]` with the midpoint rule of the transform grid. Infinity is an
//! ordinary value here: `exp(-U)` maps it to a zero density.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::GridField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NonlinSpec {
    Log,
    Power { alpha: f64 },
}

/// Regularization level `n ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct RegLevel(u32);

impl RegLevel {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("regularization level must be at least 1".into()));
        }
        Ok(Self(n))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// `1/n`.
    pub fn shift(self) -> f64 {
        1.0 / f64::from(self.0)
    }
}

impl TryFrom<u32> for RegLevel {
    type Error = Error;
    fn try_from(n: u32) -> Result<Self> {
        Self::new(n)
    }
}

impl From<RegLevel> for u32 {
    fn from(n: RegLevel) -> u32 {
        n.0
    }
}

impl std::fmt::Display for NonlinSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NonlinSpec::Log => write!(f, "log"),
            NonlinSpec::Power { alpha } => write!(f, "power(alpha={alpha})"),
        }
    }
}

impl NonlinSpec {
    pub fn power(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!("power exponent must be positive, got {alpha}")));
        }
        Ok(NonlinSpec::Power { alpha })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NonlinSpec::Log => Ok(()),
            NonlinSpec::Power { alpha } => Self::power(alpha).map(|_| ()),
        }
    }

    /// Exponent `α`, or `None` for the logarithm.
    pub fn alpha(&self) -> Option<f64> {
        match *self {
            NonlinSpec::Log => None,
            NonlinSpec::Power { alpha } => Some(alpha),
        }
    }

    /// Short label used in result tables.
    pub fn label(&self) -> String {
        match *self {
            NonlinSpec::Log => "log".into(),
            NonlinSpec::Power { alpha } => format!("power{alpha}"),
        }
    }

    /// The singular drift `f(x)`; `+∞` for `x ≤ 0`.
    pub fn f(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::INFINITY;
        }
        match *self {
            NonlinSpec::Log => -x.ln(),
            NonlinSpec::Power { alpha } => x.powf(-alpha),
        }
    }

    /// `f^n(x) = f(x⁺ + 1/n)`.
    #[inline]
    pub fn f_reg(&self, n: RegLevel, x: f64) -> f64 {
        let y = x.max(0.0) + n.shift();
        match *self {
            NonlinSpec::Log => -y.ln(),
            NonlinSpec::Power { alpha } => y.powf(-alpha),
        }
    }

    /// `F(x)` on `x ≥ 0`, antiderivative of `-f`. Negative arguments map to
    /// `+∞`, matching the potential's convention off the cone.
    pub fn antiderivative(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::INFINITY;
        }
        match *self {
            NonlinSpec::Log => {
                if x == 0.0 {
                    1.0
                } else {
                    x * x.ln() - x + 1.0
                }
            }
            NonlinSpec::Power { alpha } if alpha == 1.0 => {
                if x == 0.0 {
                    f64::INFINITY
                } else {
                    -x.ln()
                }
            }
            NonlinSpec::Power { alpha } => {
                if x == 0.0 {
                    if alpha > 1.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                } else {
                    x.powf(1.0 - alpha) / (alpha - 1.0)
                }
            }
        }
    }

    /// `F^n(x)`, finite everywhere with `d/dx F^n = -f^n`.
    #[inline]
    pub fn antiderivative_reg(&self, n: RegLevel, x: f64) -> f64 {
        let eps = n.shift();
        let xp = x.max(0.0);
        let xm = (-x).max(0.0);
        match *self {
            NonlinSpec::Log => (x + eps) * (xp + eps).ln() - xp + 1.0 - eps,
            NonlinSpec::Power { alpha } if alpha == 1.0 => -(xp + eps).ln() + f64::from(n.get()) * xm,
            NonlinSpec::Power { alpha } => {
                (xp + eps).powf(1.0 - alpha) / (alpha - 1.0) + f64::from(n.get()).powf(alpha) * xm
            }
        }
    }

    /// Lipschitz constant of `f^n`: `n` for the logarithm, `α n^{α+1}` for
    /// the power.
    pub fn lipschitz(&self, n: RegLevel) -> f64 {
        let n = f64::from(n.get());
        match *self {
            NonlinSpec::Log => n,
            NonlinSpec::Power { alpha } => alpha * n.powf(alpha + 1.0),
        }
    }

    /// `U^n(x) = ∫₀¹ F^n(x(θ)) dθ`.
    pub fn potential_reg(&self, n: RegLevel, x: &GridField) -> f64 {
        x.integrate(|v| self.antiderivative_reg(n, v))
    }

    /// `U(x)`: `+∞` off the cone or when `F(x(θ))` is not integrable at grid
    /// resolution.
    pub fn potential(&self, x: &GridField) -> f64 {
        if x.values().iter().any(|&v| v < 0.0) {
            return f64::INFINITY;
        }
        x.integrate(|v| self.antiderivative(v))
    }

    /// `Ũ^n(x) = ∫₀^{1/2} F^n(x(θ)) dθ`; needs an even grid.
    pub fn half_potential_reg(&self, n: RegLevel, x: &GridField) -> Result<f64> {
        let m = x.len();
        if m % 2 != 0 {
            return Err(Error::Config(format!("half-interval potential needs an even grid, got M = {m}")));
        }
        let s: f64 = x.values()[..m / 2].iter().map(|&v| self.antiderivative_reg(n, v)).sum();
        Ok(s / m as f64)
    }
}
