//! Customer feature construction and rule-prior prediction fusion.

mod clean;
mod geo;
mod rules;
mod stats;

pub use clean::{posterior_clean, CleanOutcome, Cleaner, Judgment, LabeledPrediction, ScriptedCleaner};
pub use geo::{aggregate_demographics, calibrate_alpha, haversine, AffinityPrior, Aggregation, EARTH_RADIUS_KM};
pub use rules::{
    fuse_prediction, hash_embed, trend_delta, AlphaProvider, ConstantAlpha, FusionAudit, FusionConfig, FusionRule, RuleBase,
    Strictness, Transform, AUDIT_CSV_HEADER, EMBED_DIM,
};
pub use stats::{dual_tower_fuse, temporal_stats, zscore_fit_apply, DualTower, TemporalStats, Tower, ZScore};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("fusion weight {0} is out of range")]
    Beta(f64),
    #[error("rule base is empty")]
    EmptyRuleBase,
    #[error("rule {rule} has an embedding of a different length")]
    EmbeddingDim { rule: String },
    #[error("trend calibration needs {need} past predictions, got {have}")]
    History { have: usize, need: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
