//! ELU and the rectifier baselines it is compared against.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ELU_ALPHA: f64 = 1.0;
pub const DEFAULT_LRELU_ALPHA: f64 = 0.1;

/// Hidden-unit activation function.
///
/// Constructed through [`Activation::elu`] / [`Activation::leaky_relu`] or by
/// parsing the textual tags `elu`, `relu`, `lrelu`, `srelu` with an optional
/// `:alpha` suffix, so the alpha ranges are always validated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    /// `x` for `x > 0`, `α(exp(x) − 1)` otherwise.
    Elu { alpha: f64 },
    /// `max(0, x)`
    Relu,
    /// `max(αx, x)` with `0 < α < 1`.
    LeakyRelu { alpha: f64 },
    /// `max(−1, x)`
    ShiftedRelu,
}

impl Activation {
    pub fn elu(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("ELU alpha must be > 0, got {alpha}")));
        }
        Ok(Activation::Elu { alpha })
    }

    pub fn leaky_relu(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("LReLU alpha must be in (0, 1), got {alpha}")));
        }
        Ok(Activation::LeakyRelu { alpha })
    }

    /// The four kinds compared in the experiments, at their default slopes.
    pub fn all_defaults() -> [Activation; 4] {
        [
            Activation::Elu { alpha: DEFAULT_ELU_ALPHA },
            Activation::Relu,
            Activation::LeakyRelu { alpha: DEFAULT_LRELU_ALPHA },
            Activation::ShiftedRelu,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Elu { .. } => "elu",
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "lrelu",
            Activation::ShiftedRelu => "srelu",
        }
    }

    /// Same kind with a different alpha; ignored by kinds without one.
    pub fn with_alpha(self, alpha: f64) -> Result<Self> {
        match self {
            Activation::Elu { .. } => Activation::elu(alpha),
            Activation::LeakyRelu { .. } => Activation::leaky_relu(alpha),
            other => Ok(other),
        }
    }

    pub fn forward(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::NonFinite { context: "activation forward", value: x });
        }
        Ok(self.apply(x))
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::NonFinite { context: "activation derivative", value: x });
        }
        Ok(self.apply_derivative(x))
    }

    /// Unchecked forward for inner loops.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Elu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * (x.exp() - 1.0)
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::ShiftedRelu => {
                if x > -1.0 {
                    x
                } else {
                    -1.0
                }
            }
        }
    }

    /// Unchecked derivative. At a kink the left branch is used; the ELU
    /// negative branch is evaluated as `f(x) + α`.
    #[inline]
    pub fn apply_derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Elu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha * (x.exp() - 1.0) + alpha
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::ShiftedRelu => {
                if x > -1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Value approached as the net input goes to −∞, if bounded.
    pub fn saturation_limit(&self) -> Option<f64> {
        match *self {
            Activation::Elu { alpha } => Some(-alpha),
            Activation::Relu => Some(0.0),
            Activation::LeakyRelu { .. } => None,
            Activation::ShiftedRelu => Some(-1.0),
        }
    }

    pub fn apply_slice(&self, xs: &[f64]) -> Result<Vec<f64>> {
        xs.iter().map(|&x| self.forward(x)).collect()
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Elu { alpha } | Activation::LeakyRelu { alpha } => {
                write!(f, "{}:{}", self.name(), alpha)
            }
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, alpha) = match s.split_once(':') {
            Some((n, a)) => {
                let alpha: f64 = a
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad alpha in activation `{s}`")))?;
                (n.trim(), Some(alpha))
            }
            None => (s.trim(), None),
        };
        match (name.to_ascii_lowercase().as_str(), alpha) {
            ("elu", a) => Activation::elu(a.unwrap_or(DEFAULT_ELU_ALPHA)),
            ("lrelu", a) => Activation::leaky_relu(a.unwrap_or(DEFAULT_LRELU_ALPHA)),
            ("relu", None) => Ok(Activation::Relu),
            ("srelu", None) => Ok(Activation::ShiftedRelu),
            ("relu" | "srelu", Some(_)) => Err(Error::Config(format!("`{name}` takes no alpha"))),
            _ => Err(Error::Config(format!(
                "unknown activation `{s}` (expected elu, relu, lrelu or srelu)"
            ))),
        }
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.to_string()
    }
}
