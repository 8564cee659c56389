//! Activation catalog with certified affine segments.

mod polynomial;
mod space_filling;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use polynomial::{enumerate_rational_polynomials, Polynomial, PolynomialEnumerator, Rational};
pub use space_filling::{SpaceFillingActivation, SpaceFillingConfig, Window};

/// Relative guard applied to strict segment containment.
pub const CONTAINMENT_GUARD: f64 = 1e-12;

/// Closed-form activation functions. Serialized as `{"kind": "...", ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu { slope: f64 },
    /// Same function as the leaky ReLU; the slope is regarded as trainable
    /// elsewhere but is a fixed hyperparameter here.
    Prelu { slope: f64 },
    Elu { scale: f64 },
    Isrlu { scale: f64 },
    /// Piecewise linear unit: identity on `[-c, c]`, slope `alpha` outside.
    Plu { alpha: f64, c: f64 },
    Sqnl,
    SpaceFilling(Arc<SpaceFillingActivation>),
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Relu => write!(f, "relu"),
            ActivationKind::LeakyRelu { slope } => write!(f, "leaky_relu({slope})"),
            ActivationKind::Prelu { slope } => write!(f, "prelu({slope})"),
            ActivationKind::Elu { scale } => write!(f, "elu({scale})"),
            ActivationKind::Isrlu { scale } => write!(f, "isrlu({scale})"),
            ActivationKind::Plu { alpha, c } => write!(f, "plu({alpha}, {c})"),
            ActivationKind::Sqnl => write!(f, "sqnl"),
            ActivationKind::SpaceFilling(_) => write!(f, "space_filling"),
        }
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Activation(format!("{name} must be finite, got {v}")))
    }
}

impl ActivationKind {
    /// Checks the hyperparameters. Every accepted kind is continuous and
    /// nonpolynomial.
    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationKind::Relu | ActivationKind::Sqnl => Ok(()),
            ActivationKind::LeakyRelu { slope } | ActivationKind::Prelu { slope } => {
                finite("slope", slope)?;
                if slope == 1.0 {
                    return Err(Error::Activation(
                        "slope 1 makes the activation the identity".into(),
                    ));
                }
                Ok(())
            }
            ActivationKind::Elu { scale } => finite("scale", scale),
            ActivationKind::Isrlu { scale } => {
                finite("scale", scale)?;
                if scale <= 0.0 {
                    return Err(Error::Activation("isrlu scale must be positive".into()));
                }
                Ok(())
            }
            ActivationKind::Plu { alpha, c } => {
                finite("alpha", alpha)?;
                finite("c", c)?;
                if c <= 0.0 {
                    return Err(Error::Activation("plu c must be positive".into()));
                }
                if alpha == 1.0 {
                    return Err(Error::Activation("plu alpha 1 is the identity".into()));
                }
                Ok(())
            }
            ActivationKind::SpaceFilling(_) => Ok(()),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            ActivationKind::Relu => s.max(0.0),
            ActivationKind::LeakyRelu { slope } | ActivationKind::Prelu { slope } => {
                if s >= 0.0 {
                    s
                } else {
                    slope * s
                }
            }
            ActivationKind::Elu { scale } => {
                if s >= 0.0 {
                    s
                } else {
                    scale * s.exp_m1()
                }
            }
            ActivationKind::Isrlu { scale } => {
                if s >= 0.0 {
                    s
                } else {
                    s / (1.0 + scale * s * s).sqrt()
                }
            }
            ActivationKind::Plu { alpha, c } => {
                if s > c {
                    alpha * (s - c) + c
                } else if s < -c {
                    alpha * (s + c) - c
                } else {
                    s
                }
            }
            ActivationKind::Sqnl => {
                if s <= -2.0 {
                    -1.0
                } else if s <= 0.0 {
                    s + s * s / 4.0
                } else if s <= 2.0 {
                    s - s * s / 4.0
                } else {
                    1.0
                }
            }
            ActivationKind::SpaceFilling(ref sf) => sf.eval(s),
        }
    }

    /// Right derivative.
    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            ActivationKind::Relu => {
                if s >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu { slope } | ActivationKind::Prelu { slope } => {
                if s >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            ActivationKind::Elu { scale } => {
                if s >= 0.0 {
                    1.0
                } else {
                    scale * s.exp()
                }
            }
            ActivationKind::Isrlu { scale } => {
                if s >= 0.0 {
                    1.0
                } else {
                    (1.0 + scale * s * s).powf(-1.5)
                }
            }
            ActivationKind::Plu { alpha, c } => {
                if s >= c || s < -c {
                    alpha
                } else {
                    1.0
                }
            }
            ActivationKind::Sqnl => {
                if s >= 2.0 || s < -2.0 {
                    0.0
                } else if s >= 0.0 {
                    1.0 - s / 2.0
                } else {
                    1.0 + s / 2.0
                }
            }
            ActivationKind::SpaceFilling(ref sf) => sf.derivative(s),
        }
    }

    /// Global Lipschitz constant, when one is known in closed form.
    pub fn lipschitz(&self) -> Option<f64> {
        match *self {
            ActivationKind::Relu | ActivationKind::Isrlu { .. } | ActivationKind::Sqnl => Some(1.0),
            ActivationKind::LeakyRelu { slope } | ActivationKind::Prelu { slope } => {
                Some(slope.abs().max(1.0))
            }
            ActivationKind::Elu { scale } => Some(scale.abs().max(1.0)),
            ActivationKind::Plu { alpha, .. } => Some(alpha.abs().max(1.0)),
            ActivationKind::SpaceFilling(_) => None,
        }
    }

    /// `Some(true)` if nondecreasing on all of R; `None` if unknown.
    pub fn is_monotone(&self) -> Option<bool> {
        match *self {
            ActivationKind::Relu | ActivationKind::Sqnl | ActivationKind::Isrlu { .. } => Some(true),
            ActivationKind::LeakyRelu { slope } | ActivationKind::Prelu { slope } => Some(slope >= 0.0),
            ActivationKind::Elu { scale } => Some(scale >= 0.0),
            ActivationKind::Plu { alpha, .. } => Some(alpha >= 0.0),
            ActivationKind::SpaceFilling(_) => None,
        }
    }

    /// Canonical unit-radius window inside a maximal affine piece.
    pub fn default_segment(&self, want_constant: bool) -> Result<AffineSegment> {
        let none = || Error::NoSuchSegment {
            kind: self.to_string(),
            constant: want_constant,
        };
        let seg = match (self, want_constant) {
            (ActivationKind::Relu, false) => AffineSegment::new(1.0, 1.0, 1.0, 0.0),
            (ActivationKind::Relu, true) => AffineSegment::new(-1.0, 1.0, 0.0, 0.0),
            (
                ActivationKind::LeakyRelu { slope } | ActivationKind::Prelu { slope },
                constant,
            ) => {
                if !constant {
                    AffineSegment::new(1.0, 1.0, 1.0, 0.0)
                } else if *slope == 0.0 {
                    AffineSegment::new(-1.0, 1.0, 0.0, 0.0)
                } else {
                    return Err(none());
                }
            }
            (ActivationKind::Elu { scale } | ActivationKind::Isrlu { scale }, constant) => {
                if !constant {
                    AffineSegment::new(1.0, 1.0, 1.0, 0.0)
                } else if matches!(self, ActivationKind::Elu { .. }) && *scale == 0.0 {
                    AffineSegment::new(-1.0, 1.0, 0.0, 0.0)
                } else {
                    return Err(none());
                }
            }
            (ActivationKind::Plu { alpha, c }, constant) => {
                if constant {
                    if *alpha != 0.0 {
                        return Err(none());
                    }
                    AffineSegment::new(c + 1.0, 1.0, 0.0, *c)
                } else if *c >= 1.0 {
                    AffineSegment::new(0.0, 1.0, 1.0, 0.0)
                } else if *alpha != 0.0 {
                    AffineSegment::new(c + 1.0, 1.0, *alpha, c - alpha * c)
                } else {
                    AffineSegment::new(0.0, *c, 1.0, 0.0)
                }
            }
            (ActivationKind::Sqnl, true) => AffineSegment::new(3.0, 1.0, 0.0, 1.0),
            (ActivationKind::Sqnl, false) => return Err(none()),
            (ActivationKind::SpaceFilling(sf), constant) => {
                let seg = sf.base().default_segment(constant)?;
                if sf.overlaps_modified_region(seg.lower(), seg.upper()) {
                    return Err(none());
                }
                seg
            }
        };
        Ok(seg)
    }
}

/// Open interval `(center - radius, center + radius)` on which the
/// activation equals `s -> slope * s + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineSegment {
    pub center: f64,
    pub radius: f64,
    pub slope: f64,
    pub offset: f64,
}

impl AffineSegment {
    pub fn new(center: f64, radius: f64, slope: f64, offset: f64) -> Self {
        AffineSegment {
            center,
            radius,
            slope,
            offset,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.center.is_finite()
            && self.radius.is_finite()
            && self.radius > 0.0
            && self.slope.is_finite()
            && self.offset.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid segment {self:?}")))
        }
    }

    pub fn is_constant(&self) -> bool {
        self.slope == 0.0
    }

    pub fn lower(&self) -> f64 {
        self.center - self.radius
    }

    pub fn upper(&self) -> f64 {
        self.center + self.radius
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.slope * s + self.offset
    }

    /// Signed distance to the boundary, shrunk by the containment guard.
    /// Positive iff `s` is strictly inside.
    pub fn margin(&self, s: f64) -> f64 {
        self.radius * (1.0 - CONTAINMENT_GUARD) - (s - self.center).abs()
    }

    pub fn contains(&self, s: f64) -> bool {
        self.margin(s) > 0.0
    }

    /// Largest deviation from the affine rule over `samples` evenly spaced
    /// interior points.
    pub fn max_deviation(&self, act: &ActivationKind, samples: usize) -> f64 {
        (1..=samples)
            .map(|i| {
                let t = i as f64 / (samples + 1) as f64;
                let s = self.lower() + 2.0 * self.radius * t;
                (act.eval(s) - self.eval(s)).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Shared catalog used by tests, benches and the CLI.
pub fn catalog() -> Vec<ActivationKind> {
    vec![
        ActivationKind::Relu,
        ActivationKind::LeakyRelu { slope: 0.01 },
        ActivationKind::Prelu { slope: 0.25 },
        ActivationKind::Elu { scale: 1.0 },
        ActivationKind::Isrlu { scale: 1.0 },
        ActivationKind::Plu { alpha: 0.1, c: 1.0 },
        ActivationKind::Sqnl,
    ]
}
