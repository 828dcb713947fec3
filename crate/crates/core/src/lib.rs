//! Natural-language driving-style pipeline: reward programs, policy training,
//! statistical evaluation and a retrievable style store.

pub mod clips;
pub mod env;
pub mod fsutil;
pub mod idm;
pub mod llm;
pub mod orchestrator;
pub mod rewarddsl;
pub mod rl;
pub mod statseval;
pub mod styledb;
pub mod trajdata;

pub use orchestrator::{run_command, seed_database, PipelineConfig, PipelineData, PipelineOutcome, UserCommand};
pub use rewarddsl::{parse, pretty_print, Expr, RewardProgram};
pub use styledb::StyleDatabase;
