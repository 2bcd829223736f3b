//! The feedback bench: quality, compatibility and personalization experts.

pub mod external;
pub mod feedback;
pub mod quality;
pub mod vbpr;

pub use external::{ExternalScorer, ScoreRequest, ScoreResponse};
pub use feedback::{
    aggregate_and_label, build_preference_pairs, label_normalized, labels_of, minmax_norm,
    personalization_score, ExpertVerdict, ExpertWeights, Label, PreferencePair,
};
pub use quality::{QualityExpert, QualityRubric, ScorerFailure};
pub use vbpr::{bpr_loss, bpr_loss_and_grad, bpr_train, ranking_accuracy, BprConfig, BprTriple, VbprModel};
