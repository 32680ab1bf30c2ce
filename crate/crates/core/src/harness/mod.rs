//! Experiment orchestration: configuration, the full protocol, reports and
//! the gradient-check suite used by the command-line tool.

mod config;
mod experiment;
mod gradcheck_suite;
mod report;
mod svg;

pub use config::{parse_config, parse_override, DataSource, Episodes, ExperimentConfig};
pub use experiment::{
    agent_eval_seed, build_envs, derive_seed, load_data, run_experiment, run_experiment_into, AgentResult,
    EmbeddingRow, LeakFreeResult, ResultsTable, REFERENCE_MEANS, REFERENCE_SOLITON_LOSS, REFERENCE_TABLE_LOSSES,
};
pub use gradcheck_suite::{run_gradcheck_suite, GradCheckCase, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
pub use report::{emit_report, header_line, CSV_OUTPUTS};
pub use svg::{bar_chart, line_chart};
