//! Run configuration as read from JSON and adjusted by command-line flags.

use std::path::{Path, PathBuf};

use jmf_core::jmfnet::{InitialEstimate, ModeNetConfig, TrainConfig};
use jmf_core::scenarios::{DatasetSizes, Scenario, ScenarioKind, ScenarioSpec};
use jmf_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Estimators the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "jmfnet")]
    JmfNet,
    /// The learned-gain filter that always assumes the first mode.
    #[serde(rename = "kalmannet-agnostic")]
    KalmanNetAgnostic,
    #[serde(rename = "imm")]
    Imm,
    #[serde(rename = "kf")]
    Kf,
    #[serde(rename = "ekf")]
    Ekf,
    #[serde(rename = "pf")]
    Pf,
    /// Recurrent regressor from observations to states with no model knowledge.
    #[serde(rename = "mf-gru")]
    MfGru,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::JmfNet => "jmfnet",
            Method::KalmanNetAgnostic => "kalmannet-agnostic",
            Method::Imm => "imm",
            Method::Kf => "kf",
            Method::Ekf => "ekf",
            Method::Pf => "pf",
            Method::MfGru => "mf-gru",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Method::JmfNet | Method::KalmanNetAgnostic | Method::MfGru)
    }

    /// Whether repeated runs with different seeds can differ.
    pub fn is_stochastic(self) -> bool {
        self.is_learned() || self == Method::Pf
    }
}

/// A scenario given either by short name or as a full spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioChoice {
    Name(String),
    Spec(ScenarioSpec),
}

impl Default for ScenarioChoice {
    fn default() -> Self {
        ScenarioChoice::Name("linear2".into())
    }
}

/// Hyperparameter the sensitivity command varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Seed,
    Lr,
    Batch,
    Clip,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Seed => "seed",
            SweepAxis::Lr => "lr",
            SweepAxis::Batch => "batch",
            SweepAxis::Clip => "clip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioChoice,
    /// Overrides the scenario's horizon.
    pub horizon: Option<usize>,
    /// Overrides the scenario's truncated-BPTT segment length.
    pub segment_len: Option<usize>,
    /// Overrides the scenario's dataset sizes.
    pub sizes: Option<DatasetSizes>,
    pub methods: Vec<Method>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub max_skip_fraction: f64,
    pub initial_estimate: InitialEstimate,
    pub mode_net: ModeNetConfig,
    /// Initialization seeds; each learned method is trained once per seed.
    pub seeds: Vec<u64>,
    /// Seeds the dataset streams.
    pub master_seed: u64,
    pub particles: usize,
    pub out: PathBuf,
    /// Reads datasets from here instead of generating them.
    pub data_dir: Option<PathBuf>,
    /// Reads checkpoints from here during evaluation (default `<out>/checkpoints`).
    pub checkpoint_dir: Option<PathBuf>,
    /// Evaluate classical filters on the test split only.
    pub test_only: bool,
    pub paper_scale: bool,
    pub workers: usize,
    pub sweep: Option<SweepSpec>,
    pub mismatch_levels: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            scenario: ScenarioChoice::default(),
            horizon: None,
            segment_len: None,
            sizes: None,
            methods: vec![Method::JmfNet],
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            clip_norm: t.clip_norm,
            max_skip_fraction: t.max_skip_fraction,
            initial_estimate: t.initial_estimate,
            mode_net: ModeNetConfig::default(),
            seeds: vec![0],
            master_seed: 0,
            particles: 1000,
            out: PathBuf::from("out"),
            data_dir: None,
            checkpoint_dir: None,
            test_only: false,
            paper_scale: false,
            workers: 1,
            sweep: None,
            mismatch_levels: vec![0.0, 0.1, 0.2],
        }
    }
}

/// Epoch count restored by `--paper-scale`.
pub const PAPER_EPOCHS: usize = 50;

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad configuration file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read configuration '{}': {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical JSON form, used for hashing and the manifest.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// Applies `--paper-scale`: full dataset sizes and epoch count.
    pub fn apply_paper_scale(&mut self) {
        self.paper_scale = true;
        self.sizes = Some(DatasetSizes::PAPER);
        self.epochs = PAPER_EPOCHS;
    }

    /// The scenario spec with every override applied.
    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        let mut spec = match &self.scenario {
            ScenarioChoice::Name(n) => ScenarioSpec::by_name(n)?,
            ScenarioChoice::Spec(s) => s.clone(),
        };
        if let Some(h) = self.horizon {
            spec.horizon = h;
        }
        if let Some(l) = self.segment_len {
            spec.segment_len = Some(l);
        }
        if let Some(s) = self.sizes {
            spec.sizes = s;
        }
        if self.paper_scale {
            spec.sizes = DatasetSizes::PAPER;
        }
        Ok(spec)
    }

    pub fn train_config(&self, segment_len: Option<usize>) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
            segment_len,
            initial_estimate: self.initial_estimate,
            max_skip_fraction: self.max_skip_fraction,
        }
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<Scenario> {
        let spec = self.scenario_spec()?;
        let sizes = spec.sizes;
        if sizes.train == 0 || sizes.val == 0 || sizes.test == 0 {
            return Err(Error::Config("every dataset split needs at least one trajectory".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("the seed list is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no method selected".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        if self.particles == 0 {
            return Err(Error::Config("particle count must be at least 1".into()));
        }
        self.train_config(spec.segment_len).validate()?;
        let scenario = spec.build()?;
        for &m in &self.methods {
            if m == Method::Kf && !scenario.linear {
                return Err(Error::Config(format!(
                    "method 'kf' needs a linear-Gaussian scenario; '{}' is not",
                    spec.name()
                )));
            }
        }
        Ok(scenario)
    }

    /// The quadratic scenario at mismatch level `m_q`, keeping other overrides.
    pub fn with_mismatch(&self, level: f64) -> Result<RunConfig> {
        let mut spec = self.scenario_spec()?;
        match &mut spec.kind {
            ScenarioKind::Quadratic(p) => p.mismatch = level,
            _ => {
                return Err(Error::Config(format!(
                    "mismatch sweeps need the quadratic scenario, not '{}'",
                    spec.name()
                )))
            }
        }
        let mut cfg = self.clone();
        cfg.scenario = ScenarioChoice::Spec(spec);
        Ok(cfg)
    }
}
