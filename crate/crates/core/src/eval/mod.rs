//! Recognition metrics, the gallery/probe protocol, fixed-combo baselines and
//! a brute-force oracle.

mod metrics;
mod oracle;
mod protocol;

pub use metrics::{average_precision, mean_average_precision, rank1, ScoreMatrix};
pub use oracle::{brute_force_oracle, brute_force_oracle_on, OracleResult};
pub use protocol::{
    evaluate_fixed_combo, evaluate_fixed_combo_with, evaluate_policy, evaluate_policy_subset_with,
    evaluate_policy_with, greedy_actions, mean_reward, modality_ablation, policy_mean_reward,
    AblationRow, ComboFrequency, EvalReport, ProtocolConfig, Split,
};
