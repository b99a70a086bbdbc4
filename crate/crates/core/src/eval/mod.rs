//! Concept evaluation: alignment with probe logits, rank stability across
//! counterfactual pairs, activation patching and diversity diagnostics.

mod align;
mod diversity;
mod hungarian;
mod patch;
mod pearson;
mod rank;

pub use align::{
    align_features, concept_alignment, concept_probes, eval_alignment, AlignmentReport, ConceptProbes, ConceptRow,
};
pub use diversity::{
    diversity_diag, diversity_from_differences, diversity_with_reference, lu_pivot_order, DiversityReport,
    RANK_THRESHOLD,
};
pub use hungarian::{hungarian, Assignment};
pub use patch::{activation_patch, activation_patch_shard, jsd, patch_metrics, PatchReport, DEFAULT_PATCH_SAMPLES};
pub use pearson::{pearson, Pearson};
pub use rank::{model_rank_fraction, percentile_ranks, rank_fraction, RankFractionReport, DEFAULT_THRESHOLDS};
