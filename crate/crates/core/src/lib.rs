//! System-level simulator of a two-slice V2V radio cell with a recurrent
//! deep Q-learning slicing controller.
//!
//! The crate is organised bottom-up:
//!
//! - [`mobility`], [`channel`], [`traffic`]: the physical world (Manhattan
//!   grid fleet, WINNER+ B1 pathloss with Rayleigh fading, per-link queues).
//! - [`scheduler`]: per-TTI intra-slice resource block allocation and
//!   transmission.
//! - [`observation`], [`revenue`]: the per-cycle snapshot and reward.
//! - [`nn`], [`agent`]: an LSTM Q-network with backpropagation through time
//!   and the deep Q-learning controller built on it.
//! - [`baseline`]: the service-demand slicing reference.
//! - [`engine`], [`metrics`], [`config`]: orchestration, result files and
//!   configuration.

pub mod agent;
pub mod baseline;
pub mod channel;
pub mod config;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod mobility;
pub mod nn;
pub mod observation;
pub mod revenue;
pub mod rng;
pub mod scheduler;
pub mod selftest;
pub mod slice;
pub mod traffic;

pub use agent::{Agent, AgentHyper, SlicingAction, ACTION_COUNT};
pub use config::{Controller, SimConfig};
pub use engine::{CycleStats, World};
pub use error::{Error, Result};
pub use observation::Snapshot;
pub use scheduler::{SchedulerKind, SlicePartition};
pub use slice::SliceId;
