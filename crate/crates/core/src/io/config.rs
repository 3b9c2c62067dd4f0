//! TOML run configuration shared by every CLI subcommand.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calibration::{generate_synthetic, Backend, BackendKind, CalibOptions, OptimizerOptions, TimeSettings};
use crate::closed_form::IntegrationConfig;
use crate::deam::TreeConfig;
use crate::error::{Error, Result};
use crate::fem::{Domain2D, MeshSpec};
use crate::heston::PricingContext;
use crate::io::quotes::{google_dataset, preprocess_quotes, read_quotes_file, QuoteSet, GOOGLE_RATE, GOOGLE_SPOT};
use crate::io::synthetic::{SYNTHETIC_MATURITIES, SYNTHETIC_RATE, SYNTHETIC_SPOT};
use crate::params::{CalibBox, CalibParams, ParamBox, Style};
use crate::rbm::{GreedyConfig, ReducedModel, TrainingSet};

/// Where the observed quotes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Quote CSV at `data.path`.
    File,
    /// Bundled Google table.
    Google,
    /// Synthetic ladder priced at `data.theta` with the configured backend.
    Synthetic,
}

/// Observed data. Spot and rate default per source: the synthetic ladder
/// uses `S0 = 1`, `r = 5%`, the Google table its quoting day's values;
/// quote files need both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    pub spot: Option<f64>,
    pub rate: Option<f64>,
    pub theta: Option<CalibParams>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { source: DataSource::Synthetic, path: None, spot: None, rate: None, theta: Some(CalibParams::new(0.7, -0.8, 0.3, 1.4, 0.3)) }
    }
}

impl DataConfig {
    pub fn spot(&self) -> Result<f64> {
        match (self.spot, self.source) {
            (Some(s), _) => Ok(s),
            (None, DataSource::Synthetic) => Ok(SYNTHETIC_SPOT),
            (None, DataSource::Google) => Ok(GOOGLE_SPOT),
            (None, DataSource::File) => Err(Error::InvalidParameter("data.spot is required for quote files".into())),
        }
    }

    pub fn rate(&self) -> Result<f64> {
        match (self.rate, self.source) {
            (Some(r), _) => Ok(r),
            (None, DataSource::Synthetic) => Ok(SYNTHETIC_RATE),
            (None, DataSource::Google) => Ok(GOOGLE_RATE),
            (None, DataSource::File) => Err(Error::InvalidParameter("data.rate is required for quote files".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Starting point; the box midpoint when absent.
    pub x0: Option<CalibParams>,
    pub bounds: CalibBox,
    pub optimizer: OptimizerOptions,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { x0: None, bounds: CalibBox::calibration_default(), optimizer: OptimizerOptions::default() }
    }
}

/// Reduced-basis training: a tensor grid over `(xi, rho, gamma, kappa, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Explicit box; otherwise the calibration box over the first four
    /// coordinates and `data.rate +- rate_halfwidth` for the rate.
    pub bounds: Option<ParamBox>,
    pub rate_halfwidth: f64,
    pub per_axis: usize,
    pub n_max: usize,
    pub tol: f64,
    pub error_steps: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let g = GreedyConfig::default();
        Self { bounds: None, rate_halfwidth: 1e-3, per_axis: 3, n_max: g.n_max, tol: g.tol, error_steps: g.error_steps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub output: PathBuf,
    /// Reduced-model container read by the reduced backends and written by
    /// `build-basis`.
    pub model: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { output: PathBuf::from("out"), model: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub domain: Domain2D,
    pub mesh: MeshSpec,
    pub time: TimeSettings,
    pub data: DataConfig,
    pub calibration: CalibrationConfig,
    pub training: TrainingConfig,
    pub tree: TreeConfig,
    pub integration: IntegrationConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::DetailedAm,
            domain: Domain2D::standard(),
            mesh: MeshSpec::graded(32, 32),
            time: TimeSettings::default(),
            data: DataConfig::default(),
            calibration: CalibrationConfig::default(),
            training: TrainingConfig::default(),
            tree: TreeConfig::default(),
            integration: IntegrationConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Parse(format!("run configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(format!("run configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        Domain2D::new(self.domain.nu_min, self.domain.nu_max, self.domain.x_min, self.domain.x_max)?;
        if self.mesh.n_nu == 0 || self.mesh.n_x == 0 {
            return Err(Error::InvalidParameter("mesh needs at least one cell per axis".into()));
        }
        if self.time.min_steps == 0 || !(0.0..=1.0).contains(&self.time.theta) {
            return Err(Error::InvalidParameter(format!(
                "time grid needs min_steps >= 1 and theta in [0, 1], got {} and {}",
                self.time.min_steps, self.time.theta
            )));
        }
        let (spot, rate) = (self.data.spot()?, self.data.rate()?);
        if !(spot > 0.0) || !(rate >= 0.0) {
            return Err(Error::InvalidParameter("data.spot must be positive and data.rate nonnegative".into()));
        }
        match self.data.source {
            DataSource::File if self.data.path.is_none() => {
                return Err(Error::InvalidParameter("data.source = \"file\" needs data.path".into()))
            }
            DataSource::Synthetic if self.data.theta.is_none() => {
                return Err(Error::InvalidParameter("data.source = \"synthetic\" needs data.theta".into()))
            }
            _ => {}
        }
        let b = &self.calibration.bounds;
        CalibBox::new(b.lower, b.upper)?;
        if let Some(x0) = self.calibration.x0 {
            if !b.contains(&x0.to_array()) {
                return Err(Error::InvalidParameter(format!("calibration.x0 {:?} outside the bounds", x0.to_array())));
            }
        }
        if self.training.per_axis == 0 || self.training.n_max == 0 {
            return Err(Error::InvalidParameter("training needs per_axis and n_max >= 1".into()));
        }
        self.training_box()?;
        self.tree.validate()?;
        self.integration.validate()?;
        Ok(())
    }

    pub fn training_box(&self) -> Result<ParamBox> {
        if let Some(b) = self.training.bounds {
            return ParamBox::new(b.lower, b.upper);
        }
        let (mut lo, mut hi) = (self.calibration.bounds.lower, self.calibration.bounds.upper);
        let (w, r) = (self.training.rate_halfwidth, self.data.rate()?);
        lo[4] = (r - w).max(0.0);
        hi[4] = r + w;
        ParamBox::new(lo, hi)
    }

    pub fn training_set(&self) -> Result<TrainingSet> {
        TrainingSet::tensor(&self.training_box()?, self.training.per_axis)
    }

    pub fn greedy(&self) -> GreedyConfig {
        GreedyConfig { n_max: self.training.n_max, tol: self.training.tol, error_steps: self.training.error_steps }
    }

    pub fn pricing_context(&self) -> Result<Arc<PricingContext>> {
        PricingContext::new(self.domain, self.mesh)
    }

    /// Backend for `self.backend`; reduced kinds need `model`, detailed
    /// kinds build the finite element context.
    pub fn build_backend(&self, model: Option<Arc<ReducedModel>>) -> Result<Backend> {
        let kind = self.backend;
        if kind == BackendKind::DasClosedForm {
            Backend::closed_form(self.integration)
        } else if kind.needs_reduced_model() {
            let model = model.ok_or_else(|| Error::InvalidParameter(format!("{kind} needs a reduced model (paths.model)")))?;
            Backend::reduced(kind, model, self.time)
        } else {
            Backend::detailed(kind, self.pricing_context()?, self.time)
        }
    }

    /// Same configuration with every source-dependent default written out.
    pub fn resolved(&self) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.data.spot = Some(self.data.spot()?);
        cfg.data.rate = Some(self.data.rate()?);
        Ok(cfg)
    }

    /// Detailed backend producing synthetic observations: American puts
    /// unless the configured backend prices European quotes directly.
    pub fn synthetic_backend(&self) -> Result<Backend> {
        let kind = if self.backend.style() == Style::European && !self.backend.is_das() {
            BackendKind::DetailedEu
        } else {
            BackendKind::DetailedAm
        };
        Backend::detailed(kind, self.pricing_context()?, self.time)
    }

    /// Observed quotes, preprocessed; synthetic data is priced here.
    pub fn load_quotes(&self) -> Result<QuoteSet> {
        let (spot, rate) = (self.data.spot()?, self.data.rate()?);
        match self.data.source {
            DataSource::File => {
                let path = self.data.path.as_ref().expect("validated");
                preprocess_quotes(&read_quotes_file(path)?, spot, rate)
            }
            DataSource::Google => {
                let set = google_dataset()?;
                Ok(QuoteSet { spot, rate, ..set })
            }
            DataSource::Synthetic => {
                let theta = self.data.theta.expect("validated");
                let set = generate_synthetic(&theta, rate, &self.synthetic_backend()?)?;
                Ok(QuoteSet { spot, ..set })
            }
        }
    }

    /// Quoted maturities, without pricing synthetic data.
    pub fn data_maturities(&self) -> Result<Vec<f64>> {
        match self.data.source {
            DataSource::Synthetic => Ok(SYNTHETIC_MATURITIES.to_vec()),
            _ => Ok(self.load_quotes()?.maturities()),
        }
    }

    pub fn calib_options(&self) -> CalibOptions {
        CalibOptions {
            x0: self.calibration.x0,
            bounds: self.calibration.bounds,
            optimizer: self.calibration.optimizer,
            tree: self.tree,
            weights: None,
        }
    }
}
