//! Label-less learning traffic control: entropy-based pseudo-labeling and
//! selection of unlabeled multimodal data at an edge node, and a simulator
//! that meters what the edge offloads to a remote cloud.

pub mod baselines;
pub mod classifier;
pub mod datagen;
pub mod edgesim;
pub mod llselect;
pub mod rng;
pub mod types;

pub use baselines::{Offload, Strategy, StrategyKind};
pub use classifier::{train, ModelSnapshot, TrainConfig};
pub use datagen::{generate, Dataset, SynthSpec};
pub use edgesim::{run_experiment, ChannelConfig, RoundReport, RunOutput, RunSummary, Schedule, SimConfig, SimError, SimState};
pub use llselect::{entropy, joint_entropy, LltcParams, ScoreBy};
pub use types::{
    make_distribution, CandidateSet, ClassDistribution, EntropyScore, LabelSource, LabeledSet, Modality, PseudoLabel,
    Sample, Schema, SelectionBatch, SizeModel, UnlabeledSet,
};
