use std::path::{Path, PathBuf};

use buildloss_core::dataset::{FeatureConfig, ImputeConfig};
use buildloss_core::forest::{GradientBoostingConfig, RandomForestConfig};
use buildloss_core::geoplane::{DEFAULT_OVERLAP_BUDGET, MIN_OVERLAP_BUDGET};
use buildloss_core::losslab::{PairConfig, QuantizerConfig, ZScoreConfig};
use buildloss_core::seed::derive_seed;
use buildloss_core::ssl::{default_rules, DomainRule, SslConfig};
use buildloss_core::synthcity::SynthConfig;
use buildloss_core::LinkType;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::PipelineError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    O2i,
    I2i,
    Both,
}

impl Task {
    pub fn links(self) -> Vec<LinkType> {
        match self {
            Task::O2i => vec![LinkType::O2I],
            Task::I2i => vec![LinkType::I2I],
            Task::Both => vec![LinkType::O2I, LinkType::I2I],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sl,
    Ssl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Rf,
    GbLevel,
    GbLeaf,
    Voting,
}

/// How per-(building, band) labels become training rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    /// The majority class, one row of weight 1.
    Majority,
    /// One row per voted class, weighted by its vote share.
    Votes,
}

/// Input and output locations. Unset inputs default to the file the
/// producing stage writes into `out`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub buildings: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthStage {
    #[serde(flatten)]
    pub scenario: SynthConfig,
    /// Share of buildings whose measurements are withheld from the sample file.
    pub hidden_fraction: f64,
}

impl Default for SynthStage {
    fn default() -> Self {
        Self {
            scenario: SynthConfig::default(),
            hidden_fraction: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectStage {
    pub overlap_budget: usize,
}

impl Default for DetectStage {
    fn default() -> Self {
        Self {
            overlap_budget: DEFAULT_OVERLAP_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitStage {
    pub validation_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitStage {
    fn default() -> Self {
        Self {
            validation_fraction: 0.1,
            test_fraction: 0.2,
        }
    }
}

/// Everything a run depends on. Component seeds are derived from `seed`;
/// seeds written inside the component tables are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub task: Task,
    pub mode: Mode,
    pub model: ModelChoice,
    pub targets: Targets,
    pub current_year: i32,
    pub paths: Paths,
    pub synth: SynthStage,
    pub detect: DetectStage,
    pub pairs: PairConfig,
    pub quantizer: QuantizerConfig,
    pub zscore: ZScoreConfig,
    pub features: FeatureConfig,
    pub impute: ImputeConfig,
    pub split: SplitStage,
    pub forest: RandomForestConfig,
    pub boost: GradientBoostingConfig,
    pub ssl: SslConfig,
    pub rules: Vec<DomainRule>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            task: Task::Both,
            mode: Mode::Sl,
            model: ModelChoice::GbLevel,
            targets: Targets::Votes,
            current_year: 2026,
            paths: Paths {
                out: PathBuf::from("out"),
                ..Paths::default()
            },
            synth: SynthStage::default(),
            detect: DetectStage::default(),
            pairs: PairConfig::default(),
            quantizer: QuantizerConfig::default(),
            zscore: ZScoreConfig::default(),
            features: FeatureConfig::default(),
            impute: ImputeConfig::default(),
            split: SplitStage::default(),
            forest: RandomForestConfig::default(),
            boost: GradientBoostingConfig::default(),
            ssl: SslConfig::default(),
            rules: default_rules(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    /// Copy with every component seed derived from the global one.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let s = self.seed;
        c.synth.scenario.seed = derive_seed(s, "synth");
        c.quantizer.seed = derive_seed(s, "quantizer");
        c.impute.seed = derive_seed(s, "impute");
        c.impute.regressor.seed = derive_seed(s, "impute/regressor");
        c.impute.current_year = self.current_year;
        c.forest.seed = derive_seed(s, "forest");
        c.boost.seed = derive_seed(s, "boost");
        c
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.synth
            .scenario
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.ssl
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.synth.hidden_fraction) {
            return bad(format!(
                "hidden_fraction {} not in [0, 1)",
                self.synth.hidden_fraction
            ));
        }
        let s = &self.split;
        if !(s.validation_fraction >= 0.0
            && s.test_fraction >= 0.0
            && s.validation_fraction + s.test_fraction < 1.0)
        {
            return bad("split fractions must be non-negative and leave room for training".into());
        }
        if self.detect.overlap_budget < MIN_OVERLAP_BUDGET {
            return bad(format!(
                "overlap budget must be at least {MIN_OVERLAP_BUDGET}"
            ));
        }
        if !(self.pairs.d_min > 0.0 && self.pairs.d_max > self.pairs.d_min) {
            return bad("pair distances need 0 < d_min < d_max".into());
        }
        if self.quantizer.k_min < 2 || self.quantizer.k_max < self.quantizer.k_min {
            return bad("quantizer k range must satisfy 2 <= k_min <= k_max".into());
        }
        Ok(())
    }

    /// Hex digest over every setting except file locations.
    pub fn hash(&self) -> String {
        let mut c = self.resolved();
        c.paths = Paths::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn out_dir(&self) -> &Path {
        &self.paths.out
    }

    pub fn input(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.paths.out.join(default_name))
    }
}
