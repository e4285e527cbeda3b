use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{read_csv_matrix, sample_transitions, Dataset, DynamicsModel};
use crate::error::{Error, Result};
use crate::geometry::{RegionSet, SafetySpec};

pub const DEFAULT_SIGMA_F: f64 = 1.0;
pub const DEFAULT_LAMBDA: f64 = 1e-5;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_NUM_FREQUENCIES: usize = 6;
pub const DEFAULT_LATTICE_RESOLUTION: usize = 100;
pub const DEFAULT_NUM_SAMPLES: usize = 1000;
pub const DEFAULT_OPTIMISER: &str = "SimplexOptimiser";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Yaml,
    Json,
}

impl Format {
    /// Guesses the format from a file extension (anything but `.json` is YAML).
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Yaml,
        }
    }
}

/// Where transition samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleSource {
    Inline(Vec<Vec<f64>>),
    Csv(PathBuf),
}

impl SampleSource {
    fn load(&self) -> Result<Vec<Vec<f64>>> {
        match self {
            SampleSource::Inline(rows) => Ok(rows.clone()),
            SampleSource::Csv(p) => read_csv_matrix(p),
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let SampleSource::Csv(p) = self {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn broadcast(&self, n: usize, key: &str) -> Result<Vec<f64>> {
        let v = match self {
            ScalarOrList::Scalar(s) => vec![*s; n],
            ScalarOrList::List(l) if l.len() == 1 => vec![l[0]; n],
            ScalarOrList::List(l) if l.len() == n => l.clone(),
            ScalarOrList::List(l) => {
                return Err(Error::Config(format!("`{key}` has {} entries, expected 1 or {n}", l.len())))
            }
        };
        if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::Config(format!("`{key}` entries must be positive and finite")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum SetSpec {
    One(String),
    Many(Vec<String>),
}

impl SetSpec {
    fn parse(&self) -> Result<RegionSet> {
        match self {
            SetSpec::One(s) => RegionSet::parse(s),
            SetSpec::Many(v) if v.is_empty() => Err(Error::InvalidSet("empty set list".into())),
            SetSpec::Many(v) => RegionSet::parse_many(v),
        }
    }

    fn from_set(set: &RegionSet) -> SetSpec {
        match set {
            RegionSet::Multi(_) => SetSpec::Many(set.to_literals()),
            _ => SetSpec::One(set.to_string()),
        }
    }
}

/// On-disk document layout. Every key is optional here; requirements are
/// checked when converting to [`Configuration`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    x_samples: Option<SampleSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    xp_samples: Option<SampleSource>,
    #[serde(rename = "X_bounds", skip_serializing_if = "Option::is_none")]
    x_bounds: Option<SetSpec>,
    #[serde(rename = "X_init", skip_serializing_if = "Option::is_none")]
    x_init: Option<SetSpec>,
    #[serde(rename = "X_unsafe", skip_serializing_if = "Option::is_none")]
    x_unsafe: Option<SetSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_l: Option<ScalarOrList>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    set_scaling: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_frequencies: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lattice_resolution: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    feature_sigma_l: Option<ScalarOrList>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimiser: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    time_horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    system_dynamics: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_std: Option<ScalarOrList>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verify: Option<bool>,
}

/// A fully validated run configuration with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub x_samples: Option<SampleSource>,
    pub xp_samples: Option<SampleSource>,
    pub spec: SafetySpec,
    pub kernel: String,
    pub estimator: String,
    pub sigma_f: f64,
    pub sigma_l: Vec<f64>,
    pub lambda: f64,
    pub set_scaling: f64,
    pub num_frequencies: usize,
    pub lattice_resolution: usize,
    /// Feature-map lengthscales in torus units.
    pub feature_sigma_l: Vec<f64>,
    pub optimiser: String,
    pub epsilon: f64,
    pub b_bar: Option<f64>,
    pub kappa: Option<f64>,
    pub seed: u64,
    pub pad: f64,
    pub system_dynamics: Option<Vec<String>>,
    /// Per-dimension standard deviation of the additive Gaussian noise used
    /// when samples are generated from `system_dynamics`.
    pub noise_std: Vec<f64>,
    pub num_samples: usize,
    pub verify: bool,
}

fn require<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::MissingKey(key.to_string()))
}

fn non_negative(v: f64, key: &str) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{key}` must be finite and non-negative, got {v}")))
    }
}

fn positive(v: f64, key: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{key}` must be finite and positive, got {v}")))
    }
}

impl Configuration {
    pub fn parse(text: &str, format: Format) -> Result<Configuration> {
        let raw: RawConfig = match format {
            Format::Yaml => serde_yaml::from_str(text).map_err(|e| Error::Config(e.to_string()))?,
            Format::Json => serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?,
        };
        Configuration::from_raw(raw)
    }

    /// Reads a config file; relative CSV paths resolve against its directory.
    pub fn from_path(path: &Path) -> Result<Configuration> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        let mut cfg = Configuration::parse(&text, Format::from_path(path))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for src in [&mut cfg.x_samples, &mut cfg.xp_samples].into_iter().flatten() {
            src.resolve(base);
        }
        Ok(cfg)
    }

    fn from_raw(raw: RawConfig) -> Result<Configuration> {
        let domain = require(raw.x_bounds, "X_bounds")?.parse()?;
        let initial = require(raw.x_init, "X_init")?.parse()?;
        let unsafe_set = require(raw.x_unsafe, "X_unsafe")?.parse()?;
        let spec = SafetySpec::new(domain, initial, unsafe_set, raw.time_horizon.unwrap_or(1))?;
        let n = spec.dim();

        match (&raw.x_samples, &raw.xp_samples, &raw.system_dynamics) {
            (Some(_), Some(_), _) | (None, None, Some(_)) => {}
            (Some(_), None, _) => return Err(Error::MissingKey("xp_samples".into())),
            (None, Some(_), _) => return Err(Error::MissingKey("x_samples".into())),
            (None, None, None) => return Err(Error::MissingKey("x_samples (or system_dynamics)".into())),
        }
        if let Some(d) = &raw.system_dynamics {
            if d.len() != n {
                return Err(Error::Config(format!(
                    "system_dynamics has {} expressions but the state has dimension {n}",
                    d.len()
                )));
            }
        }

        let kernel = raw.kernel.unwrap_or_else(|| "GaussianKernel".into());
        if kernel != "GaussianKernel" {
            return Err(Error::Config(format!("unsupported kernel `{kernel}` (only GaussianKernel)")));
        }
        let estimator = raw.estimator.unwrap_or_else(|| "KernelRidgeRegressor".into());
        if estimator != "KernelRidgeRegressor" {
            return Err(Error::Config(format!("unsupported estimator `{estimator}` (only KernelRidgeRegressor)")));
        }

        let num_frequencies = raw.num_frequencies.unwrap_or(DEFAULT_NUM_FREQUENCIES);
        if num_frequencies < 2 {
            return Err(Error::Config("`num_frequencies` must be at least 2".into()));
        }
        let lattice_resolution = raw.lattice_resolution.unwrap_or(DEFAULT_LATTICE_RESOLUTION);
        if lattice_resolution < 2 {
            return Err(Error::Config("`lattice_resolution` must be at least 2".into()));
        }
        let sigma_f = positive(raw.sigma_f.unwrap_or(DEFAULT_SIGMA_F), "sigma_f")?;
        let sigma_l = match &raw.sigma_l {
            Some(s) => s.broadcast(n, "sigma_l")?,
            None => vec![1.0; n],
        };
        let degree = (num_frequencies - 1) as f64;
        let feature_sigma_l = match &raw.feature_sigma_l {
            Some(s) => s.broadcast(n, "feature_sigma_l")?,
            None => vec![3.0 / (2.0 * std::f64::consts::PI * degree); n],
        };
        let epsilon = non_negative(raw.epsilon.unwrap_or(0.0), "epsilon")?;
        let b_bar = raw.b_bar.map(|v| positive(v, "b_bar")).transpose()?;
        let kappa = raw.kappa.map(|v| positive(v, "kappa")).transpose()?;
        if let Some(k) = kappa {
            if k < sigma_f {
                return Err(Error::Config(format!("`kappa` ({k}) must be at least sigma_f ({sigma_f})")));
            }
        }
        if epsilon > 0.0 {
            require(b_bar, "b_bar")?;
            require(kappa, "kappa")?;
        }
        let noise_std = match &raw.noise_std {
            Some(ScalarOrList::Scalar(s)) => vec![non_negative(*s, "noise_std")?; n],
            Some(ScalarOrList::List(l)) if l.len() == n || l.len() == 1 => {
                let v = if l.len() == 1 { vec![l[0]; n] } else { l.clone() };
                for x in &v {
                    non_negative(*x, "noise_std")?;
                }
                v
            }
            Some(ScalarOrList::List(l)) => {
                return Err(Error::Config(format!("`noise_std` has {} entries, expected 1 or {n}", l.len())))
            }
            None => vec![0.0; n],
        };
        let num_samples = raw.num_samples.unwrap_or(DEFAULT_NUM_SAMPLES);
        if num_samples == 0 {
            return Err(Error::Config("`num_samples` must be at least 1".into()));
        }
        let verify = raw.verify.unwrap_or(false);
        if verify && raw.system_dynamics.is_none() {
            return Err(Error::MissingKey("system_dynamics (required by verify)".into()));
        }

        Ok(Configuration {
            x_samples: raw.x_samples,
            xp_samples: raw.xp_samples,
            spec,
            kernel,
            estimator,
            sigma_f,
            sigma_l,
            lambda: non_negative(raw.lambda.unwrap_or(DEFAULT_LAMBDA), "lambda")?,
            set_scaling: non_negative(raw.set_scaling.unwrap_or(0.0), "set_scaling")?,
            num_frequencies,
            lattice_resolution,
            feature_sigma_l,
            optimiser: raw.optimiser.unwrap_or_else(|| DEFAULT_OPTIMISER.into()),
            epsilon,
            b_bar,
            kappa,
            seed: raw.seed.unwrap_or(DEFAULT_SEED),
            pad: non_negative(raw.pad.unwrap_or(0.0), "pad")?,
            system_dynamics: raw.system_dynamics,
            noise_std,
            num_samples,
            verify,
        })
    }

    fn to_raw(&self) -> RawConfig {
        RawConfig {
            x_samples: self.x_samples.clone(),
            xp_samples: self.xp_samples.clone(),
            x_bounds: Some(SetSpec::from_set(&self.spec.domain)),
            x_init: Some(SetSpec::from_set(&self.spec.initial)),
            x_unsafe: Some(SetSpec::from_set(&self.spec.unsafe_set)),
            kernel: Some(self.kernel.clone()),
            estimator: Some(self.estimator.clone()),
            sigma_f: Some(self.sigma_f),
            sigma_l: Some(ScalarOrList::List(self.sigma_l.clone())),
            lambda: Some(self.lambda),
            set_scaling: Some(self.set_scaling),
            num_frequencies: Some(self.num_frequencies),
            lattice_resolution: Some(self.lattice_resolution),
            feature_sigma_l: Some(ScalarOrList::List(self.feature_sigma_l.clone())),
            optimiser: Some(self.optimiser.clone()),
            time_horizon: Some(self.spec.horizon),
            epsilon: Some(self.epsilon),
            b_bar: self.b_bar,
            kappa: self.kappa,
            seed: Some(self.seed),
            pad: Some(self.pad),
            system_dynamics: self.system_dynamics.clone(),
            noise_std: self.system_dynamics.as_ref().map(|_| ScalarOrList::List(self.noise_std.clone())),
            num_samples: self.system_dynamics.as_ref().map(|_| self.num_samples),
            verify: Some(self.verify),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("config serializes")
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_raw()).expect("config serializes")
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(&self.to_raw()).expect("config serializes")
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Per-dimension maximum integer frequency of the barrier.
    pub fn degree(&self) -> usize {
        self.num_frequencies - 1
    }

    pub fn dynamics(&self) -> Result<Option<DynamicsModel>> {
        self.system_dynamics
            .as_ref()
            .map(|d| DynamicsModel::parse(d, Some(&self.noise_std)))
            .transpose()
    }

    /// Loads the configured samples, or generates them from the dynamics.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let data = match (&self.x_samples, &self.xp_samples) {
            (Some(x), Some(xp)) => Dataset::from_rows(&x.load()?, &xp.load()?)?,
            _ => {
                let model = self.dynamics()?.ok_or_else(|| Error::MissingKey("x_samples".into()))?;
                sample_transitions(&model, self.num_samples, &self.spec.domain, self.seed)?
            }
        };
        if data.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: data.dim() });
        }
        Ok(data)
    }
}
