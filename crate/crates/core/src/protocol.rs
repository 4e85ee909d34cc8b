// SPDX-License-Identifier: Apache-2.0

//! Wire protocol: message schema, framing, ownership/role authorization and
//! local-transform replication.
//!
//! Every message is one UTF-8 JSON object per line (TCP) or per text frame
//! (WebSocket): `{"seq": u64, "sender": u32, "body": {"type": ..., ...}}`.
//! Poses on the wire are always local to the stated parent.

use std::collections::{BTreeMap, BTreeSet};

use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::error::FrameError;
use crate::ids::{ClientId, EntityId};
use crate::pose::Pose;
use crate::scene_graph::FrameTree;
pub use crate::snapshot::{CameraMode, Role, StateSnapshot};
use crate::world::Interaction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    pub seq: u64,
    pub sender: ClientId,
    pub body: Body,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityLocalPose {
    pub entity: EntityId,
    pub parent: EntityId,
    pub local: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum InteractionCommand {
    Text,
    Video,
    Scale { factor: f64 },
    Highlight { on: bool },
    Change { target: String },
    Lock,
    /// Reattach a locked OOI onto an empty tangible held next to it.
    Unlock { tangible: String },
    Delete,
}

impl InteractionCommand {
    /// The catalog interaction that must be enabled for this command.
    pub fn required(&self) -> Interaction {
        match self {
            InteractionCommand::Text => Interaction::Text,
            InteractionCommand::Video => Interaction::Video,
            InteractionCommand::Scale { .. } => Interaction::Scale,
            InteractionCommand::Highlight { .. } => Interaction::Highlight,
            InteractionCommand::Change { .. } => Interaction::Change,
            InteractionCommand::Lock
            | InteractionCommand::Unlock { .. }
            | InteractionCommand::Delete => Interaction::Lock,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PanelKind {
    Text,
    Video,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Body {
    Join { role: Role },
    Welcome { client: ClientId, role: Role, snapshot: Box<StateSnapshot> },
    MarkerPose { marker_id: String, pose: Pose },
    EntityLocalPose(EntityLocalPose),
    /// Request to pick up the nearest secondary. Without an explicit pose the
    /// server uses the tracked shovel pose relative to the Map-Hub.
    Pickup {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shovel_pose_on_map: Option<Pose>,
    },
    Release,
    SetScale { value: f64 },
    SetCameraMode { mode: CameraMode },
    VoiceToggle { on: bool },
    AudioFrame {
        #[serde(serialize_with = "ser_b64", deserialize_with = "de_b64")]
        data: Vec<u8>,
    },
    TeleportShort { secondary: ClientId, target: [f64; 3] },
    TeleportPoi { secondary: ClientId, poi_id: String },
    HandMap { secondary: ClientId, visible: bool },
    SelectOoi { ooi: EntityId },
    Menu { ooi: EntityId, interactions: Vec<Interaction> },
    Interaction { ooi: EntityId, command: InteractionCommand },
    Panel { ooi: EntityId, kind: PanelKind, content: String, pose: Pose },
    SpawnOoi { tangible: String, catalog_id: String },
    AttachOoi { tangible: String, ooi: EntityId },
    HighlightState { ooi: EntityId, on: bool },
    StateSnapshot { snapshot: Box<StateSnapshot> },
    QuerySnapshot,
    Notice { message: String },
    Error {
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        in_reply_to: Option<u64>,
    },
    Leave,
}

impl Body {
    pub fn type_name(&self) -> &'static str {
        match self {
            Body::Join { .. } => "Join",
            Body::Welcome { .. } => "Welcome",
            Body::MarkerPose { .. } => "MarkerPose",
            Body::EntityLocalPose(_) => "EntityLocalPose",
            Body::Pickup { .. } => "Pickup",
            Body::Release => "Release",
            Body::SetScale { .. } => "SetScale",
            Body::SetCameraMode { .. } => "SetCameraMode",
            Body::VoiceToggle { .. } => "VoiceToggle",
            Body::AudioFrame { .. } => "AudioFrame",
            Body::TeleportShort { .. } => "TeleportShort",
            Body::TeleportPoi { .. } => "TeleportPoi",
            Body::HandMap { .. } => "HandMap",
            Body::SelectOoi { .. } => "SelectOoi",
            Body::Menu { .. } => "Menu",
            Body::Interaction { .. } => "Interaction",
            Body::Panel { .. } => "Panel",
            Body::SpawnOoi { .. } => "SpawnOoi",
            Body::AttachOoi { .. } => "AttachOoi",
            Body::HighlightState { .. } => "HighlightState",
            Body::StateSnapshot { .. } => "StateSnapshot",
            Body::QuerySnapshot => "QuerySnapshot",
            Body::Notice { .. } => "Notice",
            Body::Error { .. } => "Error",
            Body::Leave => "Leave",
        }
    }

    /// Bodies only the server may originate.
    pub fn is_server_only(&self) -> bool {
        matches!(
            self,
            Body::Welcome { .. }
                | Body::Menu { .. }
                | Body::Panel { .. }
                | Body::HighlightState { .. }
                | Body::StateSnapshot { .. }
                | Body::Notice { .. }
                | Body::Error { .. }
        )
    }

    /// Bodies that only the primary may send.
    pub fn is_primary_only(&self) -> bool {
        matches!(
            self,
            Body::MarkerPose { .. }
                | Body::Pickup { .. }
                | Body::Release
                | Body::SetScale { .. }
                | Body::SetCameraMode { .. }
                | Body::VoiceToggle { .. }
                | Body::SelectOoi { .. }
                | Body::Interaction { .. }
                | Body::SpawnOoi { .. }
                | Body::AttachOoi { .. }
        )
    }
}

fn ser_b64<S: Serializer>(data: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(data))
}

fn de_b64<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
    let text = String::deserialize(d)?;
    base64::engine::general_purpose::STANDARD
        .decode(text.as_bytes())
        .map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("decode error at line {line}, column {column}: {message}")]
pub struct DecodeError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// Serializes a message to one JSON line (without the trailing newline).
pub fn encode(msg: &Message) -> Vec<u8> {
    serde_json::to_vec(msg).expect("messages always serialize")
}

pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    serde_json::from_slice(bytes).map_err(|e| DecodeError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Owner lookup for entities.
pub trait Ownership {
    fn owner_of(&self, entity: EntityId) -> Option<ClientId>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OwnershipTable(pub BTreeMap<EntityId, ClientId>);

impl OwnershipTable {
    pub fn from_tree(tree: &FrameTree) -> Self {
        OwnershipTable(tree.entities().map(|e| (e.id, e.owner)).collect())
    }
}

impl Ownership for OwnershipTable {
    fn owner_of(&self, entity: EntityId) -> Option<ClientId> {
        self.0.get(&entity).copied()
    }
}

impl Ownership for FrameTree {
    fn owner_of(&self, entity: EntityId) -> Option<ClientId> {
        self.get(entity).ok().map(|e| e.owner)
    }
}

/// Who holds which role; the part of session state authorization reads.
#[derive(Debug, Clone, Copy)]
pub struct Roles<'a> {
    pub primary: Option<ClientId>,
    pub secondaries: &'a BTreeSet<ClientId>,
}

impl Roles<'_> {
    pub fn role_of(&self, c: ClientId) -> Option<Role> {
        if self.primary == Some(c) {
            Some(Role::Primary)
        } else if self.secondaries.contains(&c) {
            Some(Role::Secondary)
        } else {
            None
        }
    }
}

pub const PRIMARY_ONLY: &str = "primary-only";
pub const NOT_OWNER: &str = "not owner";

/// Role and ownership check for a message arriving on `from`'s connection.
/// Content validation (ranges, thresholds, lifecycle) happens in the session.
pub fn authorize(
    table: &impl Ownership,
    roles: Roles<'_>,
    from: ClientId,
    msg: &Message,
) -> Result<(), String> {
    let role = roles.role_of(from);
    if msg.sender != from && !(role.is_none() && msg.sender == ClientId::SERVER) {
        return Err("sender mismatch".into());
    }
    let body = &msg.body;
    if body.is_server_only() {
        return Err("server-only message".into());
    }
    match body {
        Body::Join { .. } => {
            return if role.is_some() { Err("already joined".into()) } else { Ok(()) };
        }
        Body::Leave | Body::QuerySnapshot => return Ok(()),
        _ => {}
    }
    let Some(role) = role else {
        return Err("not joined".into());
    };
    if body.is_primary_only() {
        return if role == Role::Primary { Ok(()) } else { Err(PRIMARY_ONLY.into()) };
    }
    match body {
        Body::EntityLocalPose(p) => match table.owner_of(p.entity) {
            None => Err(format!("unknown entity {}", p.entity)),
            Some(owner) if owner == from => Ok(()),
            Some(_) => Err(NOT_OWNER.into()),
        },
        Body::TeleportShort { secondary, .. }
        | Body::TeleportPoi { secondary, .. }
        | Body::HandMap { secondary, .. } => {
            if role == Role::Secondary && *secondary == from {
                Ok(())
            } else {
                Err(NOT_OWNER.into())
            }
        }
        Body::AudioFrame { .. } => Ok(()),
        _ => unreachable!("every client body is classified above"),
    }
}

/// Expresses a tangible-attached OOI in the environment root's frame, the
/// form secondaries consume.
pub fn replicate_tangible_ooi(
    tree: &FrameTree,
    ooi: EntityId,
    env_root: EntityId,
) -> Result<EntityLocalPose, FrameError> {
    let local = tree.pose_in_frame(ooi, Some(env_root))?;
    Ok(EntityLocalPose { entity: ooi, parent: env_root, local })
}
