//! Space-filling modification of a continuous activation.
//!
//! Starting from a base activation `sigma`, the builder produces
//! `sigma_tilde = sigma_bar + phi` where
//!
//! * `sigma_bar` equals `sigma` outside `[a - eta/2, a + 3 eta/2]`, is
//!   constant (`v`) on the plateau `[a, a + eta]` and interpolates linearly
//!   on the two side bands;
//! * `phi` vanishes off `(a, a + eta)`, carries `p_k * eps / (2 k ||p_k||)`
//!   on the k-th carrier band `[a + eta(1 - 4^{1-k}), a + eta(1 - 2 * 4^{-k})]`
//!   (rescaled to `[0, 1]`), and is affine on the transition bands in
//!   between.
//!
//! A width-one, depth-one network with this activation reproduces `p_k`
//! exactly on `[0, 1]`, so its image is dense in `C([0, 1])`.
//!
//! Band positions are computed from `u = (a + eta) - s`. When `eta` is a
//! power of two and `a + eta` has few significant bits, `u` and the band
//! coordinate are exact, which is what keeps the read-out accurate for
//! high band indices. Only the first `bands` polynomials are stored; past
//! the last carrier band `phi` ramps linearly to zero at `a + eta`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::polynomial::{Polynomial, PolynomialEnumerator};
use super::ActivationKind;
use crate::error::{Error, Result};
use crate::net::{Architecture, Layer, Parameters};

pub const DEFAULT_BANDS: usize = 64;
const OSCILLATION_GRID: usize = 1000;

/// Plateau window `(start, start + length)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: f64,
    pub length: f64,
}

/// Serialized form; the activation is rebuilt from it on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceFillingConfig {
    pub base: ActivationKind,
    pub interval: (f64, f64),
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Window>,
    #[serde(default = "default_bands")]
    pub bands: usize,
}

fn default_bands() -> usize {
    DEFAULT_BANDS
}

#[derive(Clone, Debug)]
struct Band {
    poly: Polynomial,
    norm: f64,
    scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "SpaceFillingConfig", into = "SpaceFillingConfig")]
pub struct SpaceFillingActivation {
    config: SpaceFillingConfig,
    start: f64,
    length: f64,
    plateau: f64,
    left_anchor: f64,
    right_anchor: f64,
    bands: Vec<Band>,
}

impl PartialEq for SpaceFillingActivation {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
    }
}

impl From<SpaceFillingActivation> for SpaceFillingConfig {
    fn from(sf: SpaceFillingActivation) -> Self {
        sf.config
    }
}

impl TryFrom<SpaceFillingConfig> for SpaceFillingActivation {
    type Error = Error;

    fn try_from(config: SpaceFillingConfig) -> Result<Self> {
        SpaceFillingActivation::from_config(config)
    }
}

/// Upper bound on the oscillation of `act` over `[lo, hi]`: grid range plus
/// the Lipschitz slack between grid points.
fn oscillation_bound(act: &ActivationKind, lo: f64, hi: f64) -> f64 {
    let lip = act.lipschitz().unwrap_or(f64::INFINITY);
    let step = (hi - lo) / OSCILLATION_GRID as f64;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..=OSCILLATION_GRID {
        let v = act.eval(lo + step * i as f64);
        min = min.min(v);
        max = max.max(v);
    }
    max - min + lip * step
}

fn check_window(base: &ActivationKind, lo: f64, hi: f64, eps: f64, w: Window) -> Result<()> {
    let (left, right) = (w.start - w.length / 2.0, w.start + 1.5 * w.length);
    if !(w.length > 0.0 && left > lo && right < hi) {
        return Err(Error::InvalidArgument(format!(
            "plateau window {w:?} with side bands does not fit strictly inside ({lo}, {hi})"
        )));
    }
    let osc = oscillation_bound(base, left, right);
    if !(osc < eps / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "base oscillation {osc:e} over the modified region is not below eps/2 = {:e}",
            eps / 2.0
        )));
    }
    Ok(())
}

/// Dyadic window: power-of-two length, start on the half-length grid,
/// halved until the base oscillates by less than eps/2 over it.
fn place_window(base: &ActivationKind, lo: f64, hi: f64, eps: f64) -> Result<Window> {
    let mut length = 2f64.powi(((hi - lo) / 4.0).log2().floor() as i32);
    for _ in 0..80 {
        let half = length / 2.0;
        let start = ((lo / half).floor() + 2.0) * half;
        let w = Window { start, length };
        if check_window(base, lo, hi, eps, w).is_ok() {
            return Ok(w);
        }
        length /= 2.0;
    }
    Err(Error::InvalidArgument(format!(
        "no plateau window found inside ({lo}, {hi}) for eps = {eps}"
    )))
}

impl SpaceFillingActivation {
    /// Builds the activation on the open interval `interval` with uniform
    /// distance below `epsilon` from `base`. The plateau window is placed
    /// automatically.
    pub fn build(base: ActivationKind, interval: (f64, f64), epsilon: f64) -> Result<Self> {
        Self::from_config(SpaceFillingConfig {
            base,
            interval,
            epsilon,
            window: None,
            bands: DEFAULT_BANDS,
        })
    }

    /// As [`build`](Self::build) with an explicit plateau window.
    pub fn with_window(
        base: ActivationKind,
        interval: (f64, f64),
        epsilon: f64,
        window: Window,
    ) -> Result<Self> {
        Self::from_config(SpaceFillingConfig {
            base,
            interval,
            epsilon,
            window: Some(window),
            bands: DEFAULT_BANDS,
        })
    }

    pub fn from_config(config: SpaceFillingConfig) -> Result<Self> {
        let (lo, hi) = config.interval;
        let eps = config.epsilon;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "interval ({lo}, {hi}) must be a nonempty open interval"
            )));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
        }
        if config.bands == 0 {
            return Err(Error::InvalidArgument("at least one band is required".into()));
        }
        if matches!(config.base, ActivationKind::SpaceFilling(_)) {
            return Err(Error::InvalidArgument("base must be a closed-form activation".into()));
        }
        config.base.validate()?;
        let window = match config.window {
            Some(w) => {
                check_window(&config.base, lo, hi, eps, w)?;
                w
            }
            None => place_window(&config.base, lo, hi, eps)?,
        };
        let base = &config.base;
        let (start, length) = (window.start, window.length);
        let plateau = base.eval(start + length / 2.0);
        let left_anchor = base.eval(start - length / 2.0);
        let right_anchor = base.eval(start + 1.5 * length);
        let bands = PolynomialEnumerator::new()
            .take(config.bands)
            .enumerate()
            .map(|(i, poly)| {
                let k = (i + 1) as f64;
                let norm = poly.sup_norm();
                Band {
                    scale: eps / (2.0 * k * norm),
                    norm,
                    poly,
                }
            })
            .collect();
        Ok(SpaceFillingActivation {
            config,
            start,
            length,
            plateau,
            left_anchor,
            right_anchor,
            bands,
        })
    }

    pub fn config(&self) -> &SpaceFillingConfig {
        &self.config
    }

    pub fn base(&self) -> &ActivationKind {
        &self.config.base
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon
    }

    pub fn window(&self) -> Window {
        Window {
            start: self.start,
            length: self.length,
        }
    }

    /// Constant value of the modified base on the plateau.
    pub fn plateau_value(&self) -> f64 {
        self.plateau
    }

    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn polynomial(&self, k: usize) -> Result<&Polynomial> {
        self.band(k).map(|b| &b.poly)
    }

    /// Sup norm of `p_k` on [0, 1].
    pub fn polynomial_norm(&self, k: usize) -> Result<f64> {
        self.band(k).map(|b| b.norm)
    }

    fn band(&self, k: usize) -> Result<&Band> {
        if k == 0 || k > self.bands.len() {
            return Err(Error::IndexOutOfRange {
                index: k,
                max: self.bands.len(),
            });
        }
        Ok(&self.bands[k - 1])
    }

    fn end(&self) -> f64 {
        self.start + self.length
    }

    fn modified_lo(&self) -> f64 {
        self.start - self.length / 2.0
    }

    fn modified_hi(&self) -> f64 {
        self.start + 1.5 * self.length
    }

    /// Whether `[lo, hi]` meets the region where the activation differs from
    /// its base.
    pub fn overlaps_modified_region(&self, lo: f64, hi: f64) -> bool {
        hi > self.modified_lo() && lo < self.modified_hi()
    }

    /// Plateau-modified base (without the carrier function).
    pub fn plateau_base(&self, s: f64) -> f64 {
        let (lo, hi) = (self.modified_lo(), self.modified_hi());
        if s <= lo || s >= hi {
            self.config.base.eval(s)
        } else if s < self.start {
            let t = (s - lo) / (self.start - lo);
            self.left_anchor + t * (self.plateau - self.left_anchor)
        } else if s > self.end() {
            let t = (s - self.end()) / (hi - self.end());
            self.plateau + t * (self.right_anchor - self.plateau)
        } else {
            self.plateau
        }
    }

    /// The `j >= 0` with `length 2^-(j+1) < u <= length 2^-j`, for
    /// `u = end - s` in `(0, length]`. Even `j = 2k - 2` is carrier band k,
    /// odd `j = 2k - 1` is transition band k.
    fn locate(&self, u: f64) -> i32 {
        let mut j = (self.length / u).log2().floor() as i32;
        let scaled = |j: i32| self.length * 2f64.powi(-j);
        while j > 0 && u > scaled(j) {
            j -= 1;
        }
        while u <= scaled(j + 1) {
            j += 1;
        }
        j.max(0)
    }

    /// The carrier function `phi`.
    pub fn carrier(&self, s: f64) -> f64 {
        if !(s > self.start && s < self.end()) {
            return 0.0;
        }
        let u = self.end() - s;
        let j = self.locate(u);
        let k = (j / 2 + 1) as usize;
        let n = self.bands.len();
        if j % 2 == 0 {
            if k > n {
                return self.tail(u);
            }
            let band = &self.bands[k - 1];
            // u in (length 2^{1-2k}, length 2^{2-2k}]
            let x = 2.0 - u * 2f64.powi(2 * k as i32 - 1) / self.length;
            band.poly.eval(x) * band.scale
        } else {
            if k >= n {
                return self.tail(u);
            }
            let (cur, next) = (&self.bands[k - 1], &self.bands[k]);
            let left = cur.poly.eval(1.0) * cur.scale;
            let right = next.poly.eval(0.0) * next.scale;
            // u in (length 4^{-k}, length 2^{1-2k}]
            let lambda = (self.length * 2f64.powi(1 - 2 * k as i32) - u)
                / (self.length * 2f64.powi(-2 * k as i32));
            left + lambda * (right - left)
        }
    }

    fn tail(&self, u: f64) -> f64 {
        let n = self.bands.len();
        let last = &self.bands[n - 1];
        let top = self.length * 2f64.powi(1 - 2 * n as i32);
        last.poly.eval(1.0) * last.scale * (u / top).min(1.0)
    }

    pub fn eval(&self, s: f64) -> f64 {
        if s > self.start && s < self.end() {
            self.plateau + self.carrier(s)
        } else {
            self.plateau_base(s)
        }
    }

    /// Right derivative (band boundaries resolved like [`carrier`](Self::carrier)).
    pub fn derivative(&self, s: f64) -> f64 {
        let (lo, hi) = (self.modified_lo(), self.modified_hi());
        if s < lo || s >= hi {
            return self.config.base.derivative(s);
        }
        if s < self.start {
            return (self.plateau - self.left_anchor) / (self.start - lo);
        }
        if s >= self.end() {
            return (self.right_anchor - self.plateau) / (hi - self.end());
        }
        let u = self.end() - s;
        let j = self.locate(u);
        let k = (j / 2 + 1) as usize;
        let n = self.bands.len();
        let tail_slope = || {
            let last = &self.bands[n - 1];
            -last.poly.eval(1.0) * last.scale / (self.length * 2f64.powi(1 - 2 * n as i32))
        };
        if j % 2 == 0 {
            if k > n {
                return tail_slope();
            }
            let band = &self.bands[k - 1];
            let width = self.length * 2f64.powi(1 - 2 * k as i32);
            let x = 2.0 - u / width;
            band.poly.eval_derivative(x) * band.scale / width
        } else {
            if k >= n {
                return tail_slope();
            }
            let (cur, next) = (&self.bands[k - 1], &self.bands[k]);
            let left = cur.poly.eval(1.0) * cur.scale;
            let right = next.poly.eval(0.0) * next.scale;
            (right - left) / (self.length * 2f64.powi(-2 * k as i32))
        }
    }

    /// One-hidden-layer, width-one architecture using this activation.
    pub fn readout_architecture(self: &Arc<Self>) -> Architecture {
        Architecture::new(1, vec![1], vec![ActivationKind::SpaceFilling(Arc::clone(self))])
            .expect("valid width-one architecture")
    }

    /// Parameters of the width-one network that reproduces `p_k` on [0, 1].
    pub fn readout_params(&self, k: usize) -> Result<Parameters> {
        let band = self.band(k)?;
        let k_i = k as i32;
        let a1 = self.length * 2f64.powi(1 - 2 * k_i);
        let b1 = self.end() - self.length * 2f64.powi(2 - 2 * k_i);
        let a2 = 1.0 / band.scale;
        let b2 = -a2 * self.plateau;
        Ok(Parameters::from_layers_unchecked(vec![
            Layer::from_rows(&[vec![a1]], vec![b1]),
            Layer::from_rows(&[vec![a2]], vec![b2]),
        ]))
    }

    /// `(s, sigma_tilde(s))` samples over `[lo, hi]`, for plotting.
    pub fn sample(&self, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
        let n = n.max(2);
        (0..n)
            .map(|i| {
                let s = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                (s, self.eval(s))
            })
            .collect()
    }
}
