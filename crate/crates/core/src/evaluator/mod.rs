//! Exact-match scoring, paraphrase consistency and oracle sweeps.

mod consistency;
mod report;

pub use consistency::{consistency, Consistency, GroupMember};
pub use report::{check_compatible, evaluate, evaluate_checkpoint, oracle_sweep, score, EvalReport, Prediction, Verdict};
