//! Interactive exploration of three-phase image pipelines in code space.
//!
//! Every pipeline configuration (one grid index per parameter, split
//! across the Veni, Vidi and Vici phases) maps bijectively to a single
//! natural number. The explorer evaluates the window of codes around the
//! current configuration and lets a human pick the next one.

pub mod codec;
pub mod explorer;
pub mod io;
pub mod pipeline;

pub use codec::{
    decode_config, encode_config, CodeScheme, Decoded, Infeasibility, Natural, ParamSchema, Phase,
    PhaseShares, Settings,
};
pub use explorer::{
    enumerate_window, init_session, run_batch, Candidate, CandidateStatus, Session, SessionConfig,
    Step, Termination, Trajectory,
};
pub use pipeline::{run_pipeline, ImageBuffer, PipelineStages, Stage, StageKind};
