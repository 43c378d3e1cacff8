//! JSON experiment configuration.

use serde::{Deserialize, Serialize};

use fluctlab::kac::{self, Ensemble, IrreversibilityWindows, Window};
use fluctlab::lattice::{ModelParams, Protocol};
use fluctlab::qkac::{BlochMacro, ScatterField};
use fluctlab::FluctError;

/// One experiment run: the `experiment` tag selects the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(flatten)]
    pub experiment: Experiment,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn name(&self) -> &'static str {
        self.experiment.name()
    }
}

pub const EXPERIMENT_NAMES: [&str; 14] = [
    "steady-state",
    "scgf-scan",
    "rate-function",
    "jarzynski",
    "current-sign-scan",
    "current-histogram",
    "ifr-check",
    "dv-rate",
    "kac-lln",
    "kac-irreversibility",
    "kac-entropy-track",
    "qkac-trajectory",
    "qkac-lln",
    "qkac-exercise",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Experiment {
    SteadyState {
        model: ModelConfig,
    },
    ScgfScan {
        model: ModelConfig,
        lambdas: Grid,
        #[serde(default)]
        bond: usize,
    },
    RateFunction {
        model: ModelConfig,
        lambdas: Grid,
        currents: Grid,
        #[serde(default)]
        bond: usize,
    },
    Jarzynski {
        protocol: ProtocolConfig,
        #[serde(default)]
        samples: usize,
    },
    CurrentSignScan {
        model: ModelConfig,
        drives: Grid,
        betas: Grid,
    },
    CurrentHistogram {
        model: ModelConfig,
        #[serde(default)]
        bond: usize,
        horizon: f64,
        samples: usize,
        #[serde(default = "default_min_count")]
        min_count: u64,
    },
    IfrCheck {
        model: ModelConfig,
        horizon: f64,
        samples: usize,
    },
    DvRate {
        model: ModelConfig,
        /// Particle number of the shell; `L / 2` when absent.
        #[serde(default)]
        particles: Option<usize>,
    },
    KacLln {
        sites: usize,
        m0: f64,
        rho: f64,
        steps: usize,
        runs: usize,
        #[serde(default)]
        ensemble: EnsembleKind,
    },
    KacIrreversibility {
        sites: usize,
        steps: usize,
        windows: WindowsConfig,
    },
    KacEntropyTrack {
        sites: usize,
        m0: f64,
        rho: f64,
        steps: usize,
        #[serde(default)]
        direction: DirectionKind,
        #[serde(default)]
        ensemble: EnsembleKind,
    },
    QkacTrajectory {
        m0: f64,
        m: [f64; 3],
        h: [f64; 3],
        steps: usize,
    },
    QkacLln {
        sites: usize,
        m0: f64,
        m: [f64; 3],
        h: [f64; 3],
        steps: usize,
    },
    QkacExercise {
        m0: f64,
        m: [f64; 3],
        h: [f64; 3],
        steps: usize,
    },
}

fn default_min_count() -> u64 {
    30
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        let idx = match self {
            Experiment::SteadyState { .. } => 0,
            Experiment::ScgfScan { .. } => 1,
            Experiment::RateFunction { .. } => 2,
            Experiment::Jarzynski { .. } => 3,
            Experiment::CurrentSignScan { .. } => 4,
            Experiment::CurrentHistogram { .. } => 5,
            Experiment::IfrCheck { .. } => 6,
            Experiment::DvRate { .. } => 7,
            Experiment::KacLln { .. } => 8,
            Experiment::KacIrreversibility { .. } => 9,
            Experiment::KacEntropyTrack { .. } => 10,
            Experiment::QkacTrajectory { .. } => 11,
            Experiment::QkacLln { .. } => 12,
            Experiment::QkacExercise { .. } => 13,
        };
        EXPERIMENT_NAMES[idx]
    }
}

/// Lattice-gas parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "L")]
    pub sites: usize,
    #[serde(rename = "B", default)]
    pub field: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub delta: f64,
}

impl ModelConfig {
    pub fn params(&self) -> Result<ModelParams, FluctError> {
        let p = ModelParams::free(self.sites)
            .with_field(self.field)
            .with_coupling(self.kappa)
            .with_beta(self.beta)
            .with_potential(self.a)
            .with_drive(self.delta);
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub start: f64,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub horizon: f64,
    pub segments: Vec<SegmentConfig>,
}

impl ProtocolConfig {
    pub fn protocol(&self) -> Result<Protocol, FluctError> {
        let segments = self
            .segments
            .iter()
            .map(|s| Ok((s.start, s.model.params()?)))
            .collect::<Result<Vec<_>, FluctError>>()?;
        Protocol::new(segments, self.horizon)
    }
}

/// Either explicit values or `points` evenly spaced values from `start` to `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Linspace {
        start: f64,
        stop: f64,
        points: usize,
    },
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::Values(v) => v.clone(),
            Grid::Linspace {
                start,
                stop,
                points,
            } => match points {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..*n)
                    .map(|k| start + (stop - start) * k as f64 / (*n - 1) as f64)
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleKind {
    #[default]
    Microcanonical,
    Canonical,
}

impl From<EnsembleKind> for Ensemble {
    fn from(k: EnsembleKind) -> Self {
        match k {
            EnsembleKind::Microcanonical => Ensemble::Microcanonical,
            EnsembleKind::Canonical => Ensemble::Canonical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionKind {
    #[default]
    Forward,
    Backward,
}

impl From<DirectionKind> for kac::Direction {
    fn from(d: DirectionKind) -> Self {
        match d {
            DirectionKind::Forward => kac::Direction::Forward,
            DirectionKind::Backward => kac::Direction::Backward,
        }
    }
}

/// Explicit closed intervals, or intervals of half-width `delta` around
/// `m0`, `m0 (1 - 2 rho)^t` and `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowsConfig {
    Explicit {
        initial: [f64; 2],
        evolved: [f64; 2],
        scatterers: [f64; 2],
    },
    Centered {
        m0: f64,
        rho: f64,
        delta: f64,
    },
}

impl WindowsConfig {
    pub fn windows(&self, steps: usize) -> Result<IrreversibilityWindows, FluctError> {
        match *self {
            WindowsConfig::Explicit {
                initial,
                evolved,
                scatterers,
            } => Ok(IrreversibilityWindows {
                initial: Window::new(initial[0], initial[1])?,
                evolved: Window::new(evolved[0], evolved[1])?,
                scatterers: Window::new(scatterers[0], scatterers[1])?,
            }),
            WindowsConfig::Centered { m0, rho, delta } => {
                IrreversibilityWindows::centered(m0, rho, steps, delta)
            }
        }
    }
}

pub fn bloch_inputs(
    m0: f64,
    m: [f64; 3],
    h: [f64; 3],
) -> Result<(BlochMacro, ScatterField), FluctError> {
    Ok((BlochMacro::new(m0, m)?, ScatterField::new(h)?))
}
