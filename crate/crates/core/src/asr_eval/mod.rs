//! Simulated ASR n-best lists, error metrics and LM rescoring experiments.

mod align;
mod nbest;
mod rescore;

pub use align::{align, entity_counts, eer, overall_eer, wer, Alignment, EditOp, EntityCounts};
pub use nbest::{
    load_nbest, save_nbest, simulate_corpus, simulate_nbest, simulate_turn, turn_seed, ConfusionTable, Hypothesis,
    NBestList, NoiseModel,
};
pub use rescore::{
    default_scale_grid, rescore, run_eval, score_choices, select, ErrorTotals, EvalReport, EvalSet, MixtureScorer,
    NlmScorer, NoLmScorer, Scorer, ScorerReport,
};
