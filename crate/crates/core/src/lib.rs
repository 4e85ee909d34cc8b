// SPDX-License-Identifier: Apache-2.0

//! Core of the tourcast server: frame math, world model, wire protocol,
//! the authoritative session, simulated marker tracking, menu geometry,
//! and the scenario/replay harness.

// `!(x > 0.0)` style guards are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod harness;
pub mod ids;
pub mod interactions;
pub mod pose;
pub mod protocol;
pub mod replica;
pub mod scene_graph;
pub mod session;
pub mod snapshot;
pub mod tracking;
pub mod ui_geometry;
pub mod world;

pub use config::SessionConfig;
pub use error::{DocumentError, FrameError};
pub use ids::{ClientId, EntityId};
pub use pose::{compose, to_local, Pose};
pub use protocol::{decode, encode, Body, Message};
pub use scene_graph::{EntityKind, FrameTree};
pub use session::{Outbound, Session, SessionEvent};
pub use snapshot::{Role, StateSnapshot};
pub use world::World;
