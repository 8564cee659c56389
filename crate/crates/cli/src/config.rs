use std::path::{Path, PathBuf};

use serde::Deserialize;
use spurmin::activation::ActivationKind;
use spurmin::{AffineSegment, Architecture, Error, LossSpec, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    #[serde(default = "one")]
    pub input_dim: usize,
    pub widths: Vec<usize>,
    /// One entry per hidden layer, or a single entry used for all of them.
    pub activations: Vec<ActivationKind>,
}

fn one() -> usize {
    1
}

impl ArchSpec {
    pub fn build(&self) -> Result<Architecture> {
        let acts = if self.activations.len() == 1 {
            vec![self.activations[0].clone(); self.widths.len()]
        } else {
            self.activations.clone()
        };
        Architecture::new(self.input_dim, self.widths.clone(), acts)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageOptions {
    pub points: Vec<f64>,
    pub n: usize,
    pub weight_range: (f64, f64),
    pub bias_range: (f64, f64),
    /// Keep rows with entries above 1e3 in magnitude.
    pub full: bool,
}

impl Default for ImageOptions {
    fn default() -> Self {
        ImageOptions {
            points: vec![-1.0, 0.0, 2.0],
            n: 100_000,
            weight_range: spurmin::geometry::DEFAULT_WEIGHT_RANGE,
            bias_range: spurmin::geometry::DEFAULT_BIAS_RANGE,
            full: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceFillOptions {
    pub base: ActivationKind,
    pub interval: (f64, f64),
    pub epsilon: f64,
    pub samples: usize,
}

impl Default for SpaceFillOptions {
    fn default() -> Self {
        SpaceFillOptions {
            base: ActivationKind::Sqnl,
            interval: (5.0, 6.0),
            epsilon: 0.1,
            samples: 2001,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectOptions {
    pub target: Vec<f64>,
    /// Path parameter `rho` of the scan `((1-t) rho, 1, t rho)`.
    pub rho: f64,
    pub t_range: (f64, f64),
    pub steps: usize,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        ProjectOptions {
            target: vec![0.0, 1.0, 0.0],
            rho: 0.5,
            t_range: (0.45, 0.55),
            steps: 11,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub architecture: Option<ArchSpec>,
    /// Per hidden layer; `null` entries use the activation's default segment.
    pub segments: Option<Vec<Option<AffineSegment>>>,
    /// Build the constant-segment variant at this hidden layer (1-based).
    pub constant_layer: Option<usize>,
    pub loss: Option<LossSpec>,
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n_samples: Option<usize>,
    pub restarts: Option<usize>,
    pub scale: Option<f64>,
    /// Family members drawn by `verify`.
    pub family_size: Option<usize>,
    pub image: ImageOptions,
    pub space_fill: SpaceFillOptions,
    pub project: ProjectOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Errors name the offending field path.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Parse(format!("config field `{path}`: {}", e.into_inner()))
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn loss(&self) -> LossSpec {
        self.loss.unwrap_or_default()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples.unwrap_or(1000)
    }

    pub fn restarts(&self) -> usize {
        self.restarts.unwrap_or(200)
    }

    pub fn scale(&self) -> f64 {
        self.scale.unwrap_or(0.1)
    }

    pub fn family_size(&self) -> usize {
        self.family_size.unwrap_or(100)
    }

    /// The configured architecture, or `fallback` when none is given.
    pub fn architecture_or(&self, fallback: impl FnOnce() -> Architecture) -> Result<Architecture> {
        match &self.architecture {
            Some(a) => a.build(),
            None => Ok(fallback()),
        }
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("no dataset given (use --data or the `data` field)".into()))
    }
}
