//! Trigger-action forge automation: a webhook gateway, typed forge clients, a
//! workflow engine, five workflows and a deterministic mock forge.

pub mod client;
pub mod clock;
pub mod config;
pub mod engine;
pub mod gateway;
pub mod graph;
pub mod mock;
pub mod model;
pub mod workflows;

pub use client::{ActionResult, ActionStatus, ForgeError, ForgePort, ForgeReads};
pub use config::Config;
pub use engine::{Engine, Transcript};
pub use model::{Action, Event, EventPayload, RepoId, Sha};
