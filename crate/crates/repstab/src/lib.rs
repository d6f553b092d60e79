//! Representation-stability adversarial text detection.
//!
//! The pipeline ranks words by importance, measures how much the sentence
//! embedding moves when each top-ranked word is masked, and classifies the
//! resulting sensitivity/importance traces with a BiLSTM detector.
//! Ranking-quality and correlation metrics close the loop.
//!
//! Everything numeric is generic over [`num::Float`] (`f32` or `f64`);
//! the aliases below fix the scalars used by the command-line pipeline.

pub mod autodiff;
pub mod cache;
pub mod config;
pub mod corpus;
pub mod detector;
pub mod encoder;
pub mod evaluation;
pub mod importance;
pub mod manifest;
pub mod num;
pub mod opt;
pub mod params;
pub mod pipeline;
pub mod sensitivity;
pub mod synth;

/// Scalar used by the CLI pipeline and its stored artifacts.
pub type PipelineFloat = f32;

/// Scalar used for statistics (correlation, ranking metrics) and for
/// gradient checks.
pub type StatFloat = f64;

/// Class of one corpus record or detector output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Adversarial,
}

impl Label {
    /// Class index used by the detector head (adversarial = 1).
    pub fn class_index(self) -> usize {
        match self {
            Label::Benign => 0,
            Label::Adversarial => 1,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Benign => f.write_str("benign"),
            Label::Adversarial => f.write_str("adversarial"),
        }
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benign" => Ok(Label::Benign),
            "adversarial" => Ok(Label::Adversarial),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}
