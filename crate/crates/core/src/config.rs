//! The run configuration: one TOML file covering every stage plus the seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::ModelConfig;
use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::math::sha256_hex;
use crate::retrieval::Mode;
use crate::synth::{DataConfig, Split};
use crate::training::TrainConfig;

/// Which clips (and their paired sequences) a stage uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSelection {
    All,
    Train,
    Val,
    Test,
}

impl SplitSelection {
    pub fn split(self) -> Option<Split> {
        match self {
            SplitSelection::All => None,
            SplitSelection::Train => Some(Split::Train),
            SplitSelection::Val => Some(Split::Val),
            SplitSelection::Test => Some(Split::Test),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Weight of the appearance rank in rank fusion.
    pub lambda2: f64,
    pub ks: Vec<usize>,
    pub train_split: SplitSelection,
    pub eval_split: SplitSelection,
    pub detection_mode: Mode,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            lambda2: 0.5,
            ks: vec![1, 5, 10],
            train_split: SplitSelection::Train,
            eval_split: SplitSelection::Test,
            detection_mode: Mode::Concat,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub flow: FlowParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub retrieval: RetrievalConfig,
}

impl RunConfig {
    /// The transductive 32-clip benchmark: 8 appearance-twin and 8
    /// motion-twin pairs, trained and evaluated on every clip.
    pub fn benchmark(seed: u64) -> Self {
        let mut c = Self {
            seed,
            ..Self::default()
        };
        c.train.epochs = 60;
        c.train.triplets_per_page = 8;
        c.retrieval.train_split = SplitSelection::All;
        c.retrieval.eval_split = SplitSelection::All;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.flow.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let r = &self.retrieval;
        if !(0.0..=1.0).contains(&r.lambda2) {
            return Err(Error::Config(format!("lambda2 must lie in [0, 1], got {}", r.lambda2)));
        }
        if r.ks.is_empty() || r.ks.contains(&0) {
            return Err(Error::Config("ks must be non-empty positive ranks".into()));
        }
        if r.detection_mode == Mode::RankFuse {
            return Err(Error::Config("detection needs an embedding mode (app, motion or concat)".into()));
        }
        Ok(())
    }

    /// Shortest clip the generator may emit: one full flow stack.
    pub fn min_frames(&self) -> usize {
        self.train.flow_l + 1
    }

    /// SHA-256 of the canonical (field-ordered JSON) form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        sha256_hex(json.as_bytes())
    }
}
