//! Triplet construction and stream training under strong (aligned) and
//! weak (multiple-instance) supervision.

mod data;
mod strong;
mod trainer;
mod weak;

use serde::{Deserialize, Serialize};

pub use data::{stack_start, TrainingData};
pub use strong::{build_triplets_strong, StrongSupervision, TripletSource};
pub use trainer::{
    load_stream_checkpoint, train_step, train_stream, train_weak, LogRow, MilRound, Routing, StepLosses,
    TrainOptions, TrainReport,
};
pub use weak::{
    bag_window, flip_count, flip_furthest, init_bags_weak, mil_label_inference, negative_bags, Bag, Polarity,
    WeakSupervision,
};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    Strong,
    Weak,
}

impl std::fmt::Display for Supervision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Supervision::Strong => "strong",
            Supervision::Weak => "weak",
        })
    }
}

impl std::str::FromStr for Supervision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strong" => Ok(Supervision::Strong),
            "weak" => Ok(Supervision::Weak),
            _ => Err(Error::Config(format!("unknown supervision {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    /// Frames per flow stack (`2L` input channels).
    pub flow_l: usize,
    /// Share of positives flipped per MIL round.
    pub mil_threshold: f64,
    pub lambda1: f64,
    /// Train the relation module and add its loss.
    pub relation: bool,
    pub relation_pairs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Strong-supervision epochs.
    pub epochs: usize,
    /// Triplets drawn per anchor page in one epoch.
    pub triplets_per_page: usize,
    pub mil_rounds: usize,
    pub mil_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            flow_l: 5,
            mil_threshold: 0.1,
            lambda1: 0.001,
            relation: true,
            relation_pairs: 5,
            lr: 1e-3,
            batch: 16,
            epochs: 20,
            triplets_per_page: 4,
            mil_rounds: 4,
            mil_epochs: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.margin, self.lr];
        if positive.iter().any(|v| !(*v > 0.0)) || !(self.lambda1 >= 0.0) {
            return Err(Error::Config("margin and lr must be positive, λ₁ non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.mil_threshold) {
            return Err(Error::Config("MIL threshold must lie in [0, 1)".into()));
        }
        if [self.flow_l, self.batch, self.triplets_per_page, self.mil_epochs].contains(&0) {
            return Err(Error::Config("L, batch, triplets_per_page and mil_epochs must be positive".into()));
        }
        if self.relation_pairs < 2 {
            return Err(Error::Config("relation module needs P ≥ 2".into()));
        }
        Ok(())
    }
}
