//! Experiment configuration loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vaelens::attacks::{AttackMode, DEMO_STEPS};
use vaelens::data::{load_idx, synth_manifold, Dataset, ManifoldKind, Split};
use vaelens::geometry::MetricChoice;
use vaelens::vae::{Architecture, Likelihood, TrainConfig};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    #[serde(default = "yes")]
    pub log: bool,
}

fn yes() -> bool {
    true
}

impl Grid {
    pub fn log(count: usize, min: f64, max: f64) -> Self {
        Self { count, min, max, log: true }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if self.count == 0 {
            return Err(HarnessError::Config(format!("{what}: count must be at least 1")));
        }
        if !(self.min < self.max) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(HarnessError::Config(format!("{what}: need min < max, got [{}, {}]", self.min, self.max)));
        }
        if self.log && self.min <= 0.0 {
            return Err(HarnessError::Config(format!("{what}: log spacing needs min > 0")));
        }
        Ok(())
    }

    /// Grid points from `min` to `max` inclusive; a single point sits at `min`.
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                let t = i as f64 / last;
                if i == self.count - 1 {
                    self.max
                } else if self.log {
                    self.min * (self.max / self.min).powf(t)
                } else {
                    self.min + (self.max - self.min) * t
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Small,
}

/// Where the data comes from. `kind` is a synthetic manifold name or `idx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: String,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_test_n")]
    pub test_n: usize,
    #[serde(default = "default_ambient")]
    pub ambient_dim: usize,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Caps the training images read from `images`.
    pub limit: Option<usize>,
    /// Caps the test images; the full test split is used when absent.
    pub test_limit: Option<usize>,
}

fn default_n() -> usize {
    2000
}
fn default_test_n() -> usize {
    200
}
fn default_ambient() -> usize {
    32
}
fn default_noise() -> f64 {
    0.1
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: "noisy-circle".into(),
            n: default_n(),
            test_n: default_test_n(),
            ambient_dim: default_ambient(),
            noise_std: default_noise(),
            seed: 0,
            images: None,
            labels: None,
            test_images: None,
            test_labels: None,
            limit: None,
            test_limit: None,
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl DatasetSpec {
    pub fn is_image(&self) -> bool {
        self.kind == "idx"
    }

    /// Loads `(train, test)`. Relative IDX paths resolve against `base`.
    ///
    /// Synthetic data draws `n + test_n` points from one generator and holds
    /// out the last `test_n`. IDX data without a test file reuses the
    /// training images as the test set.
    pub fn load(&self, base: &Path) -> Result<(Dataset, Dataset)> {
        if self.is_image() {
            let images = self
                .images
                .as_ref()
                .ok_or_else(|| HarnessError::Config("dataset.images is required for kind = \"idx\"".into()))?;
            let labels = self.labels.as_ref().map(|l| resolve(base, l));
            let train = load_idx(&resolve(base, images), labels.as_deref(), self.limit)?;
            let test = match &self.test_images {
                Some(ti) => {
                    let tl = self.test_labels.as_ref().map(|l| resolve(base, l));
                    let mut t = load_idx(&resolve(base, ti), tl.as_deref(), self.test_limit)?;
                    t.split = Split::Test;
                    t
                }
                None => {
                    let mut t = train.clone();
                    if let Some(l) = self.test_limit {
                        t.truncate(l);
                    }
                    t.split = Split::Test;
                    t
                }
            };
            if test.input_dim != train.input_dim {
                return Err(HarnessError::Config(format!(
                    "train images have {} pixels but test images have {}",
                    train.input_dim, test.input_dim
                )));
            }
            Ok((train, test))
        } else {
            let kind = ManifoldKind::parse(&self.kind).map_err(|e| HarnessError::Config(e.to_string()))?;
            if self.test_n == 0 {
                return Err(HarnessError::Config("dataset.test_n must be at least 1".into()));
            }
            let mut train = synth_manifold(kind, self.n + self.test_n, self.ambient_dim, self.noise_std, self.seed)?;
            let test = train.split_off(self.n, Split::Test);
            if train.is_empty() {
                return Err(HarnessError::Config("dataset.n must be at least 1".into()));
            }
            Ok((train, test))
        }
    }
}

/// Training hyperparameters as they appear in the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub mixup_weight: f64,
    pub mixup_shape: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            beta: t.beta,
            mixup_weight: t.mixup_weight,
            mixup_shape: t.mixup_shape,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, beta: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            beta,
            mixup_weight: self.mixup_weight,
            mixup_shape: self.mixup_shape,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub deltas: Vec<f64>,
    pub directions: Vec<usize>,
    /// Write PGM grids of original and corrupted images when inputs are square images.
    pub images: bool,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self { deltas: DEMO_STEPS.to_vec(), directions: vec![1], images: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub profile: Profile,
    /// `gaussian` or `bernoulli`; chosen from the dataset kind when absent.
    pub likelihood: Option<String>,
    /// Learn a per-pixel decoder variance. Defaults to on for the gaussian
    /// likelihood and off for bernoulli.
    pub decoder_sigma: Option<bool>,
    pub train: TrainSection,
    pub beta_grid: Grid,
    pub delta_grid: Grid,
    pub eigen_directions: usize,
    pub attack_mode: String,
    pub metric_source: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub attack: AttackSection,
    pub histogram_bins: usize,
    /// Directory that relative dataset paths resolve against; set by the loader.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub const DESK_BETA_GRID: usize = 5;
pub const DESK_DELTA_GRID: usize = 10;
pub const PAPER_BETA_GRID: usize = 50;
pub const PAPER_DELTA_GRID: usize = 40;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            profile: Profile::Small,
            likelihood: None,
            decoder_sigma: None,
            train: TrainSection::default(),
            beta_grid: Grid::log(DESK_BETA_GRID, 0.01, 10.0),
            delta_grid: Grid::log(DESK_DELTA_GRID, 0.01, 10.0),
            eigen_directions: 5,
            attack_mode: "scaled".into(),
            metric_source: "encoder".into(),
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            attack: AttackSection::default(),
            histogram_bins: 30,
            base_dir: PathBuf::from("."),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Switches both grids to the full-scale 50-β / 40-δ log grids over [0.01, 10].
    pub fn paper_scale(&mut self) {
        self.beta_grid = Grid::log(PAPER_BETA_GRID, 0.01, 10.0);
        self.delta_grid = Grid::log(PAPER_DELTA_GRID, 0.01, 10.0);
    }

    pub fn validate(&self) -> Result<()> {
        self.beta_grid.validate("beta_grid")?;
        self.delta_grid.validate("delta_grid")?;
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        if self.eigen_directions == 0 {
            return Err(HarnessError::Config("eigen_directions must be at least 1".into()));
        }
        if self.histogram_bins == 0 {
            return Err(HarnessError::Config("histogram_bins must be at least 1".into()));
        }
        self.attack_mode()?;
        self.metric_source()?;
        self.likelihood()?;
        self.train.to_config(self.train.beta, 0).validate()?;
        if self.decoder_sigma == Some(true) && self.likelihood()? == Likelihood::Bernoulli {
            return Err(HarnessError::Config("decoder_sigma requires the gaussian likelihood".into()));
        }
        Ok(())
    }

    pub fn attack_mode(&self) -> Result<AttackMode> {
        AttackMode::parse(&self.attack_mode).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn metric_source(&self) -> Result<MetricChoice> {
        MetricChoice::parse(&self.metric_source).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Bernoulli for image data, gaussian for synthetic real-valued data, unless set.
    pub fn likelihood(&self) -> Result<Likelihood> {
        match &self.likelihood {
            Some(s) => Likelihood::parse(s).map_err(|e| HarnessError::Config(e.to_string())),
            None if self.dataset.is_image() => Ok(Likelihood::Bernoulli),
            None => Ok(Likelihood::Gaussian),
        }
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        let arch = match self.profile {
            Profile::Paper => Architecture::paper(input_dim),
            Profile::Small => Architecture::small(input_dim),
        };
        arch.with_decoder_sigma(self.decoder_sigma())
    }

    pub fn decoder_sigma(&self) -> bool {
        self.decoder_sigma.unwrap_or(matches!(self.likelihood(), Ok(Likelihood::Gaussian)))
    }

    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        self.dataset.load(&self.base_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_endpoints_and_spacing() {
        let g = Grid::log(50, 0.01, 10.0);
        let v = g.values();
        assert_eq!(v.len(), 50);
        assert_eq!(v[0], 0.01);
        assert_eq!(v[49], 10.0);
        let r = v[1] / v[0];
        for w in v.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-12);
        }
        assert_eq!(Grid::log(1, 0.5, 2.0).values(), vec![0.5]);
        let lin = Grid { count: 3, min: 0.0, max: 1.0, log: false };
        assert_eq!(lin.values(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::log(0, 0.1, 1.0).validate("g").is_err());
        assert!(Grid::log(3, 1.0, 1.0).validate("g").is_err());
        assert!(Grid::log(3, 0.0, 1.0).validate("g").is_err());
        assert!(Grid::log(3, 0.1, 1.0).validate("g").is_ok());
    }

    #[test]
    fn defaults_and_paper_scale() {
        let mut c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.beta_grid.count, 5);
        assert_eq!(c.delta_grid.count, 10);
        assert_eq!(c.eigen_directions, 5);
        assert_eq!(c.attack.deltas, vec![0.5233, 0.7443]);
        c.paper_scale();
        assert_eq!((c.beta_grid.count, c.delta_grid.count), (50, 40));
        assert_eq!(c.beta_grid.values()[0], 0.01);
        assert_eq!(*c.delta_grid.values().last().unwrap(), 10.0);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        let p = ExperimentConfig::from_toml(
            "seeds = [1, 2]\n[train]\nepochs = 3\n[dataset]\nkind = \"two-blobs\"\nn = 40\n",
        )
        .unwrap();
        assert_eq!(p.seeds, vec![1, 2]);
        assert_eq!(p.train.epochs, 3);
        assert_eq!(p.train.batch_size, 64);
        assert_eq!(p.dataset.n, 40);
        assert_eq!(p.dataset.test_n, 200);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            "seeds = []",
            "attack_mode = \"sideways\"",
            "metric_source = \"both\"",
            "[beta_grid]\ncount = 2\nmin = 1.0\nmax = 0.5",
            "unknown_key = 1",
            "likelihood = \"bernoulli\"\ndecoder_sigma = true",
        ] {
            assert!(ExperimentConfig::from_toml(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn likelihood_follows_dataset_kind() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.likelihood().unwrap(), Likelihood::Gaussian);
        assert!(c.decoder_sigma());
        c.dataset.kind = "idx".into();
        assert_eq!(c.likelihood().unwrap(), Likelihood::Bernoulli);
        assert!(!c.decoder_sigma());
        c.validate().unwrap();
    }

    #[test]
    fn synthetic_split_sizes() {
        let spec = DatasetSpec { n: 30, test_n: 7, ambient_dim: 4, ..DatasetSpec::default() };
        let (tr, te) = spec.load(Path::new(".")).unwrap();
        assert_eq!((tr.len(), te.len()), (30, 7));
        assert_eq!(te.split, Split::Test);
    }
}
