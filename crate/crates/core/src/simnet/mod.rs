//! The simulated federation: a synthetic world, a toy generative model,
//! node agents and the event loop that runs them against a ledger.

pub mod eval;
pub mod node;
pub mod schedule;
pub mod toy;
pub mod world;

pub use eval::{
    evaluate, evaluate_embedded, EvalContext, Evaluation, Extras, ReferenceSet, ScoreRow, GLOBAL_NODE_ID};
pub use node::{node_address, NodeAgent, NodeStrategy, StepEnv, StepOutput};
pub use schedule::{
    build_context, build_world, mean_bundle, run_experiment, run_with_context, ExperimentTrace,
    NodeSummary, SubmissionRecord,
};
pub use toy::{ToyConfig, ToyModel};
pub use world::{generate_world, NodeSplit, WorldConfig, WorldDataset};
