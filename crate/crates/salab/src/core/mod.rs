//! Norms, stepsize schedules and the seeding contract shared by every module.

pub mod norm;
pub mod schedule;
pub mod seed;

pub use norm::{norm_equiv_constants, NormKind, NormSpec};
pub use schedule::{stepsize_at, StepSchedule};
pub use seed::{derive_stream, SeedSpec, StreamRng};
