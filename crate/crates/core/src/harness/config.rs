use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, LossSurface, MlpLoss, MlpSpec, MlpSurface};
use crate::error::{Error, Result};
use crate::landscapes::{
    make_blobs, make_quadratic, Gauss2Mixture, MixtureSurface, QuadraticSpec, QuadraticSurface, SyntheticDataset,
};
use crate::optimizers::{k_sweep, AlphaRefresh, LrSchedule, OptimizerConfig, Rule, ScaleStrategy};
use crate::oracle::OracleConfig;
use crate::param::ParamVector;
use crate::probes::SharpnessMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Blobs {
        classes: usize,
        samples: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        batch_size: usize,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        batch_size: usize,
    },
}

fn default_spread() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceConfig {
    /// Two-component Gaussian mixture over `(mu, sigma)`.
    Mixture {
        #[serde(default)]
        mixture: Gauss2Mixture,
    },
    /// `0.5 (x - c)' diag(d) (x - c)`.
    Quadratic {
        diag: Vec<f64>,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// Random rotation of uniformly drawn eigenvalues.
    RandomQuadratic {
        dim: usize,
        eig_range: (f64, f64),
        seed: u64,
    },
    Mlp {
        layer_widths: Vec<usize>,
        activation: Activation,
        loss: MlpLoss,
        data: DataConfig,
    },
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        SurfaceConfig::Mixture { mixture: Gauss2Mixture::default() }
    }
}

/// A constructed surface.
#[derive(Debug, Clone)]
pub enum Surface {
    Mixture(MixtureSurface),
    Quadratic(QuadraticSurface),
    Mlp(MlpSurface),
}

impl Surface {
    pub fn as_dyn(&self) -> &dyn LossSurface {
        match self {
            Surface::Mixture(s) => s,
            Surface::Quadratic(s) => s,
            Surface::Mlp(s) => s,
        }
    }

    pub fn as_dyn_mut(&mut self) -> &mut dyn LossSurface {
        match self {
            Surface::Mixture(s) => s,
            Surface::Quadratic(s) => s,
            Surface::Mlp(s) => s,
        }
    }

    pub fn mlp(&self) -> Option<&MlpSurface> {
        match self {
            Surface::Mlp(m) => Some(m),
            _ => None,
        }
    }

    /// Mixture: `(-6, 10)`. Quadratic: all ones. MLP: seeded Glorot init.
    pub fn default_start(&self, seed: u64) -> ParamVector {
        match self {
            Surface::Mixture(_) => ParamVector::from_raw(vec![-6.0, 10.0]),
            Surface::Quadratic(q) => ParamVector::from_raw(vec![1.0; q.spec.dim()]),
            Surface::Mlp(m) => m.spec().init(seed),
        }
    }
}

impl SurfaceConfig {
    pub fn build(&self) -> Result<Surface> {
        Ok(match self {
            SurfaceConfig::Mixture { mixture } => Surface::Mixture(MixtureSurface::new(*mixture)?),
            SurfaceConfig::Quadratic { diag, center } => {
                let mut spec = QuadraticSpec::diagonal(diag)?;
                if let Some(c) = center {
                    spec = QuadraticSpec::new(spec.h, c.clone(), 0.0)?;
                }
                Surface::Quadratic(QuadraticSurface::new(spec))
            }
            SurfaceConfig::RandomQuadratic { dim, eig_range, seed } => {
                Surface::Quadratic(QuadraticSurface::new(make_quadratic(*dim, *eig_range, *seed)?))
            }
            SurfaceConfig::Mlp { layer_widths, activation, loss, data } => {
                let spec = MlpSpec::new(layer_widths.clone(), *activation, *loss)?;
                let data = self.dataset(data, spec.input_dim())?;
                Surface::Mlp(MlpSurface::new(spec, &data)?)
            }
        })
    }

    fn dataset(&self, data: &DataConfig, dims: usize) -> Result<SyntheticDataset> {
        match data {
            DataConfig::Blobs { classes, samples, spread, batch_size, seed } => {
                make_blobs(*classes, dims, *samples, *spread, *seed)?.with_batch_size(*batch_size)
            }
            DataConfig::Csv { path, batch_size } => SyntheticDataset::load_csv(path, 0)?.with_batch_size(*batch_size),
        }
    }

    pub fn is_mlp(&self) -> bool {
        matches!(self, SurfaceConfig::Mlp { .. })
    }
}

fn default_resolution() -> (usize, usize) {
    (101, 101)
}

fn default_directions() -> usize {
    250
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeRequest {
    /// Loss over the plane of `g0` and the orthogonal part of `g1`. Ranges default to `[-2 rho_m, 2 rho_m]`.
    Grid {
        #[serde(default = "default_resolution")]
        resolution: (usize, usize),
        #[serde(default)]
        x_range: Option<(f64, f64)>,
        #[serde(default)]
        y_range: Option<(f64, f64)>,
    },
    Gap {
        rho_ms: Vec<f64>,
    },
    /// The alpha probe curve, using the optimizer's `rho_m`, `alpha_range` and `alpha_samples`.
    Alpha {
        #[serde(default)]
        normalize: bool,
    },
    Sharpness {
        radii: Vec<f64>,
        #[serde(default = "default_directions")]
        n_directions: usize,
        mode: SharpnessMode,
        #[serde(default = "yes")]
        spectrum: bool,
    },
}

impl ProbeRequest {
    pub fn name(&self) -> &'static str {
        match self {
            ProbeRequest::Grid { .. } => "grid",
            ProbeRequest::Gap { .. } => "gap",
            ProbeRequest::Alpha { .. } => "alpha",
            ProbeRequest::Sharpness { .. } => "sharpness",
        }
    }
}

/// One experiment, as read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub surface: SurfaceConfig,
    pub optimizer: OptimizerConfig,
    /// Initial parameters; defaults depend on the surface.
    pub start: Option<Vec<f64>>,
    /// Trajectory length (analytic surfaces: one epoch per iteration).
    pub iterations: usize,
    /// Training length in passes over the dataset.
    pub epochs: usize,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub snapshot_every: usize,
    pub probes: Vec<ProbeRequest>,
    /// Parameters to probe instead of `start`.
    pub checkpoint: Option<PathBuf>,
    pub oracle: OracleConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            surface: SurfaceConfig::default(),
            optimizer: OptimizerConfig::default(),
            start: None,
            iterations: 400,
            epochs: 10,
            snapshot_every: 0,
            probes: Vec::new(),
            checkpoint: None,
            oracle: OracleConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Parses one experiment. Errors carry the line and column of the offending token.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// A single experiment object or an array of them.
    pub fn batch_from_json(text: &str) -> Result<Vec<Self>> {
        if text.trim_start().starts_with('[') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
        } else {
            Ok(vec![Self::from_json(text)?])
        }
    }

    pub fn load(path: &Path) -> Result<Vec<Self>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::batch_from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `--seed`, which also reseeds the optimizer and the oracle batch.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.optimizer.seed = seed;
        self.oracle.seed = seed;
        self
    }

    /// Hard errors as `Config`; soft warnings returned.
    pub fn validate(&self) -> Result<Vec<String>> {
        let warnings = self.optimizer.validate().map_err(|e| Error::Config(format!("optimizer: {e}")))?;
        self.oracle.validate().map_err(|e| Error::Config(format!("oracle: {e}")))?;
        for p in &self.probes {
            match p {
                ProbeRequest::Grid { resolution, .. } if resolution.0 < 2 || resolution.1 < 2 => {
                    return Err(Error::Config("probe grid: resolution must be at least 2x2".into()));
                }
                ProbeRequest::Sharpness { n_directions: 0, .. } => {
                    return Err(Error::Config("probe sharpness: n_directions must be >= 1".into()));
                }
                _ => {}
            }
        }
        Ok(warnings)
    }

    /// Builds the surface and the initial parameters.
    pub fn instantiate(&self) -> Result<(Surface, ParamVector)> {
        let surface = self.surface.build().map_err(|e| Error::Config(format!("surface: {e}")))?;
        let start = match &self.start {
            Some(s) => ParamVector::new(s.clone()).map_err(|e| Error::Config(format!("start: {e}")))?,
            None => surface.default_start(self.seed),
        };
        start.check_dim(surface.as_dyn().dim()).map_err(|e| Error::Config(format!("start: {e}")))?;
        Ok((surface, start))
    }

    /// The 2D mixture run from `(-6, 10)`: 400 steps, lr 5, momentum 0.9, rho 6, rho_m 18.
    ///
    /// The alpha search spans `[0, 4]` with 21 samples; with `[0, 2]` the probe
    /// circle of radius 18 never turns far enough to leave the sharp basin.
    pub fn mixture_trajectory(rule: Rule) -> Self {
        Self {
            name: format!("mixture_{rule}"),
            surface: SurfaceConfig::default(),
            optimizer: OptimizerConfig {
                rule,
                k: 1,
                rho: 6.0,
                rho_m: 18.0,
                alpha_range: 4.0,
                alpha_samples: 21,
                alpha_refresh: AlphaRefresh::PerEpoch,
                initial_alpha: 1.0,
                fixed_alpha: 1.0,
                scale_strategy: ScaleStrategy::GK,
                lr_schedule: LrSchedule::Constant,
                lr0: 5.0,
                momentum: 0.9,
                weight_decay: 0.0,
                seed: 0,
            },
            start: Some(vec![-6.0, 10.0]),
            iterations: 400,
            ..Self::default()
        }
    }

    /// Copies with `k` ascent steps of radius `rho_star / k` each.
    pub fn k_sweep(&self, rho_star: f64, ks: &[usize]) -> Vec<Self> {
        k_sweep(&self.optimizer, rho_star, ks)
            .into_iter()
            .map(|optimizer| Self { name: format!("{}_k{}", self.name, optimizer.k), optimizer, ..self.clone() })
            .collect()
    }
}

pub(crate) fn config_error(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

pub(crate) fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg.into()))
    }
}
