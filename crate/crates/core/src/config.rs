//! JSON run configuration shared by the CLI and the service.
//!
//! Precedence: built-in defaults < config file < command-line flags. The
//! `seed` key (or `--seed`) replaces both the synthetic-market seed and the
//! training seed, so one number pins a whole run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::BacktestConfig;
use crate::error::{Error, Result};
use crate::experiment::StrategyName;
use crate::market::{generate_universe, ingest_csv, EnvParams, MarketConfig, Universe};
use crate::policy::{PpoConfig, RiskSampler, TrainSetup};
use crate::reward::RewardConfig;
use crate::risk::{Lexicon, RiskHeadParams, RiskVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketSource {
    Synthetic(MarketConfig),
    Csv { path: PathBuf },
}

/// Optional pre-trained policies for the comparison; missing ones are
/// trained on the run's training split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointPaths {
    pub ppo: Option<PathBuf>,
    pub ppo_personalized: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskSettings {
    pub lexicon: Option<PathBuf>,
    pub head: Option<PathBuf>,
    /// The investor profile for training and backtests; neutral if absent.
    pub profile: Option<[f64; 5]>,
    /// Risk appetites of a synthetic user cohort.
    pub cohort: Option<Vec<f64>>,
}

impl RiskSettings {
    pub fn lexicon(&self) -> Result<Lexicon> {
        match &self.lexicon {
            Some(p) => Lexicon::load(p),
            None => Ok(Lexicon::default()),
        }
    }

    pub fn head(&self, lexicon: &Lexicon) -> Result<RiskHeadParams> {
        let head = match &self.head {
            Some(p) => RiskHeadParams::load(p)?,
            None => RiskHeadParams::from_lexicon(lexicon),
        };
        if head.feature_dim() != lexicon.dim() {
            return Err(Error::Dimension {
                context: "risk head width vs lexicon size",
                expected: lexicon.dim(),
                actual: head.feature_dim(),
            });
        }
        Ok(head)
    }

    pub fn profile(&self) -> Result<RiskVector> {
        self.profile.map_or(Ok(RiskVector::neutral()), RiskVector::new)
    }

    pub fn cohort(&self) -> Result<Option<Vec<RiskVector>>> {
        let Some(appetites) = &self.cohort else {
            return Ok(None);
        };
        if appetites.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config("cohort appetites must lie in [0, 1]".into()));
        }
        Ok(Some(appetites.iter().map(|&a| RiskVector::with_appetite(a)).collect()))
    }
}

fn default_run_id() -> String {
    "run".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_strategies() -> Vec<StrategyName> {
    StrategyName::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
    pub market: MarketSource,
    #[serde(default)]
    pub env: EnvParams,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub risk: RiskSettings,
    #[serde(default)]
    pub backtest: BacktestConfig,
    /// Leading share of the series used for training; the rest is the
    /// out-of-sample backtest period.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyName>,
    #[serde(default)]
    pub checkpoints: CheckpointPaths,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        // Relative data paths are resolved against the config's directory.
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.check_paths()?;
        Ok(cfg)
    }

    /// Every file the config refers to must exist.
    pub fn check_paths(&self) -> Result<()> {
        let mut paths: Vec<&PathBuf> = Vec::new();
        if let MarketSource::Csv { path } = &self.market {
            paths.push(path);
        }
        paths.extend(self.risk.lexicon.iter());
        paths.extend(self.risk.head.iter());
        paths.extend(self.checkpoints.ppo.iter());
        paths.extend(self.checkpoints.ppo_personalized.iter());
        match paths.into_iter().find(|p| !p.exists()) {
            Some(missing) => Err(Error::Config(format!("referenced file {} does not exist", missing.display()))),
            None => Ok(()),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let MarketSource::Csv { path } = &mut self.market {
            fix(path);
        }
        if let Some(p) = &mut self.risk.lexicon {
            fix(p);
        }
        if let Some(p) = &mut self.risk.head {
            fix(p);
        }
        for p in [&mut self.checkpoints.ppo, &mut self.checkpoints.ppo_personalized].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let MarketSource::Synthetic(m) = &self.market {
            m.validate()?;
        }
        self.reward.validate()?;
        self.ppo.validate()?;
        self.risk.profile()?;
        self.risk.cohort()?;
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!("train_fraction {} must be in (0, 1]", self.train_fraction)));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(Error::Config(format!("run_id `{}` must be a plain directory name", self.run_id)));
        }
        Ok(())
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, output_dir: Option<PathBuf>) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(dir) = output_dir {
            self.output_dir = dir;
        }
        self
    }

    /// Market config with the run seed applied.
    pub fn market_config(&self) -> Option<MarketConfig> {
        match &self.market {
            MarketSource::Synthetic(m) => {
                let mut m = m.clone();
                if let Some(seed) = self.seed {
                    m.seed = seed;
                }
                Some(m)
            }
            MarketSource::Csv { .. } => None,
        }
    }

    pub fn ppo_config(&self) -> PpoConfig {
        let mut p = self.ppo.clone();
        if let Some(seed) = self.seed {
            p.seed = seed;
        }
        p
    }

    pub fn universe(&self) -> Result<Universe> {
        match (&self.market, self.market_config()) {
            (_, Some(m)) => generate_universe(&m),
            (MarketSource::Csv { path }, None) => {
                let file = std::fs::File::open(path)
                    .map_err(|e| Error::Config(format!("cannot open price CSV {}: {e}", path.display())))?;
                ingest_csv(file)
            }
            (MarketSource::Synthetic(_), None) => unreachable!("synthetic markets always have a config"),
        }
    }

    /// Index splitting the universe into the training prefix and the
    /// out-of-sample suffix.
    pub fn split_index(&self, len: usize) -> usize {
        ((len as f64) * self.train_fraction).round() as usize
    }

    /// Training setup for the personalized (`risk_conditioned`) or the
    /// risk-blind policy. The blind policy drops the alignment term.
    pub fn train_setup(&self, risk_conditioned: bool) -> Result<TrainSetup> {
        let sampler = match self.risk.cohort()? {
            Some(members) if risk_conditioned => RiskSampler::Cohort { members },
            _ => RiskSampler::Fixed {
                risk: self.risk.profile()?,
            },
        };
        let mut reward = self.reward;
        if !risk_conditioned {
            reward.eta = 0.0;
        }
        Ok(TrainSetup {
            env: self.env,
            reward,
            ppo: self.ppo_config(),
            sampler,
            risk_conditioned,
        })
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }
}
