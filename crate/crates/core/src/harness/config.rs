use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensembles::{ProductStateSpec, StateKind};
use crate::error::{Error, Result};
use crate::model::{Boundary, SpinModelSpec, DEFAULT_MAX_SITES};
use crate::tensor::TensorKind;

/// Chain family instantiated at every size of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelFamily {
    /// Nearest-neighbour couplings drawn uniformly from `[j1_min, j1_max]` with the run seed.
    Random {
        #[serde(default = "default_j1_min")]
        j1_min: f64,
        #[serde(default = "default_j1_max")]
        j1_max: f64,
        #[serde(default = "default_j2")]
        j2: f64,
        #[serde(default)]
        boundary: Boundary,
    },
    Ferromagnetic,
    Uniform {
        j1: f64,
        #[serde(default)]
        j2: f64,
        #[serde(default)]
        boundary: Boundary,
    },
    /// A single fully specified chain; `sizes` must be `[n_sites]`.
    Explicit {
        spec: SpinModelSpec,
    },
}

fn default_j1_min() -> f64 {
    0.8
}

fn default_j1_max() -> f64 {
    1.2
}

fn default_j2() -> f64 {
    0.4
}

impl Default for ModelFamily {
    fn default() -> Self {
        ModelFamily::Random {
            j1_min: default_j1_min(),
            j1_max: default_j1_max(),
            j2: default_j2(),
            boundary: Boundary::Open,
        }
    }
}

impl ModelFamily {
    pub fn instantiate(&self, n_sites: usize, seed: u64) -> Result<SpinModelSpec> {
        let spec = match self {
            ModelFamily::Random {
                j1_min,
                j1_max,
                j2,
                boundary,
            } => SpinModelSpec::random(n_sites, seed, (*j1_min, *j1_max), *j2, *boundary),
            ModelFamily::Ferromagnetic => SpinModelSpec::ferromagnetic(n_sites),
            ModelFamily::Uniform { j1, j2, boundary } => {
                SpinModelSpec::uniform(n_sites, *j1, *j2, *boundary)
            }
            ModelFamily::Explicit { spec } => {
                if spec.n_sites != n_sites {
                    return Err(Error::Config(format!(
                        "explicit model has {} sites, size {n_sites} requested",
                        spec.n_sites
                    )));
                }
                spec.clone()
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Short file-name-safe name of a tensor family.
pub fn tensor_label(kind: &TensorKind) -> String {
    match kind {
        TensorKind::Dipole { site } => format!("dipole{site}"),
        TensorKind::Quadrupole { i, j } => format!("quadrupole{i}-{j}"),
        TensorKind::Scalar { i, j } => format!("scalar{i}-{j}"),
        TensorKind::Identity => "identity".to_string(),
    }
}

/// One component `T^(k)_q` of a tensor family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    #[serde(flatten)]
    pub tensor: TensorKind,
    #[serde(default)]
    pub q: i32,
}

impl OperatorSpec {
    pub fn label(&self) -> String {
        format!("{}_q{}", tensor_label(&self.tensor), self.q)
    }

    fn max_site(&self) -> Option<usize> {
        match &self.tensor {
            TensorKind::Dipole { site } => Some(*site),
            TensorKind::Quadrupole { i, j } | TensorKind::Scalar { i, j } => Some(*i.max(j)),
            TensorKind::Identity => None,
        }
    }
}

/// Charge targets per site, plus the energy fallback used when no density is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Targets {
    #[serde(default)]
    pub energy_density: Option<f64>,
    /// Position inside the spectrum, `0` at the ground state and `1` at the top.
    #[serde(default = "default_fraction")]
    pub energy_fraction: f64,
    #[serde(default)]
    pub m_density: f64,
}

fn default_fraction() -> f64 {
    0.5
}

impl Default for Targets {
    fn default() -> Self {
        Targets {
            energy_density: None,
            energy_fraction: default_fraction(),
            m_density: 0.0,
        }
    }
}

/// Binning used by the ETH diagnostics; energies in the units of the couplings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EthSettings {
    #[serde(default = "default_energy_bin")]
    pub energy_bin: f64,
    #[serde(default = "default_spin_bin")]
    pub spin_bin: f64,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    /// Half-width of the local fit window, as a fraction of the bandwidth.
    #[serde(default = "default_window")]
    pub fit_window: f64,
}

fn default_energy_bin() -> f64 {
    0.5
}

fn default_spin_bin() -> f64 {
    1.0
}

fn default_min_count() -> usize {
    crate::tensor::DEFAULT_MIN_BIN_COUNT
}

fn default_window() -> f64 {
    0.1
}

impl Default for EthSettings {
    fn default() -> Self {
        EthSettings {
            energy_bin: default_energy_bin(),
            spin_bin: default_spin_bin(),
            min_count: default_min_count(),
            fit_window: default_window(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelFamily,
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub operators: Vec<OperatorSpec>,
    #[serde(default)]
    pub state: Option<StateKind>,
    #[serde(default)]
    pub targets: Targets,
    #[serde(default)]
    pub eth: EthSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_max_sites")]
    pub max_sites: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_max_sites() -> usize {
    DEFAULT_MAX_SITES
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::Config("sizes must not be empty".into()));
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "sizes must be strictly ascending, got {:?}",
                self.sizes
            )));
        }
        let smallest = self.sizes[0];
        let largest = *self.sizes.last().expect("non-empty");
        if smallest < 2 {
            return Err(Error::Config("every size needs at least 2 sites".into()));
        }
        if largest > self.max_sites {
            return Err(Error::Config(format!(
                "size {largest} exceeds max_sites = {}",
                self.max_sites
            )));
        }
        if let ModelFamily::Explicit { spec } = &self.model {
            if self.sizes != [spec.n_sites] {
                return Err(Error::Config(format!(
                    "explicit model fixes sizes = [{}]",
                    spec.n_sites
                )));
            }
        }
        for op in &self.operators {
            if op.q.unsigned_abs() > op.tensor.rank() {
                return Err(Error::Config(format!(
                    "{}: |q| exceeds rank {}",
                    op.label(),
                    op.tensor.rank()
                )));
            }
            if let Some(site) = op.max_site() {
                if site >= smallest {
                    return Err(Error::Config(format!(
                        "{}: site {site} outside the {smallest}-site chain",
                        op.label()
                    )));
                }
            }
            if let TensorKind::Quadrupole { i, j } | TensorKind::Scalar { i, j } = &op.tensor {
                if i == j {
                    return Err(Error::Config(format!("{}: sites must differ", op.label())));
                }
            }
        }
        if !self.targets.m_density.is_finite() || self.targets.m_density.abs() > 0.5 {
            return Err(Error::Config(
                "targets.m_density must lie in [-1/2, 1/2]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.targets.energy_fraction) {
            return Err(Error::Config(
                "targets.energy_fraction must lie in [0, 1]".into(),
            ));
        }
        let e = &self.eth;
        if !(e.energy_bin > 0.0 && e.spin_bin > 0.0 && e.fit_window > 0.0) {
            return Err(Error::Config(
                "eth bin widths and fit window must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The configured operators; experiments that average something need at least one.
    pub fn require_operators(&self) -> Result<&[OperatorSpec]> {
        if self.operators.is_empty() {
            Err(Error::Config("no [[operators]] configured".into()))
        } else {
            Ok(&self.operators)
        }
    }

    pub fn model_for(&self, n_sites: usize) -> Result<SpinModelSpec> {
        self.model.instantiate(n_sites, self.rng_seed)
    }

    /// State used by the thermalization sweep: the configured one, or a product state
    /// at the configured charge densities.
    pub fn sweep_state(&self) -> StateKind {
        self.state.clone().unwrap_or_else(|| {
            StateKind::Product(ProductStateSpec {
                m_density: self.targets.m_density,
                energy_density: self.targets.energy_density,
                phi: 1.0,
                seed: self.rng_seed,
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::from_toml_str("sizes = [6, 8]").unwrap();
        assert_eq!(c.max_sites, 14);
        assert!(c.operators.is_empty());
        assert!(c.require_operators().is_err());
        assert_eq!(c.model, ModelFamily::default());
        let a = c.model_for(8).unwrap();
        assert_eq!(a, SpinModelSpec::default_random(8, 0));
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
            sizes = [8, 10]
            rng_seed = 3
            output_dir = "results"
            cache_dir = "cache"

            [model]
            family = "uniform"
            j1 = 1.0
            j2 = 0.25
            boundary = "periodic"

            [[operators]]
            kind = "quadrupole"
            i = 3
            j = 4
            q = 1

            [[operators]]
            kind = "identity"

            [state]
            kind = "anomalous_b"
            c = 1.2

            [targets]
            energy_density = -0.1
            m_density = 0.1

            [eth]
            energy_bin = 0.25
        "#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.operators[0].q, 1);
        assert_eq!(c.operators[1].tensor, TensorKind::Identity);
        assert!(matches!(c.state, Some(StateKind::AnomalousB { c, m_bar: None, .. }) if c == 1.2));
        assert_eq!(c.model_for(8).unwrap().boundary, Boundary::Periodic);
        assert_eq!(c.eth.spin_bin, 1.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "sizes = []",
            "sizes = [10, 8]",
            "sizes = [16]",
            "sizes = [8]\n[[operators]]\nkind = \"dipole\"\nsite = 8",
            "sizes = [8]\n[[operators]]\nkind = \"dipole\"\nsite = 1\nq = 2",
            "sizes = [8]\nunknown = 1",
            "sizes = [8]\n[targets]\nm_density = 0.7",
        ] {
            let e = ExperimentConfig::from_toml_str(text).unwrap_err();
            assert_eq!(e.exit_code(), 1, "{text}");
        }
        let e = ExperimentConfig::load(Path::new("/nonexistent/missing.conf")).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }
}
