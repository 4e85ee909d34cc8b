// SPDX-License-Identifier: Apache-2.0

//! Session state snapshots and their canonical text form.
//!
//! Canonical serialization: JSON with object keys sorted, integers verbatim,
//! and floating-point values rounded to 9 significant digits. The SHA-256 of
//! that text is the state hash used by replay and the fuzz suites.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::ids::{ClientId, EntityId};
use crate::pose::Pose;
use crate::scene_graph::EntityKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Primary,
    Secondary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CameraMode {
    #[default]
    FollowSecondary,
    LockedToEnvironment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropKind {
    MapHub,
    PickupShovel,
    Tangible,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Attachment {
    Tangible { marker_id: String },
    LockedInEnvironment,
    StaticScene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityView {
    pub kind: EntityKind,
    pub parent: Option<EntityId>,
    pub local: Pose,
    pub owner: ClientId,
    pub visible: bool,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationView {
    pub marker_id: String,
    pub prop_kind: PropKind,
    pub anchor: EntityId,
    pub scaler: EntityId,
    pub tracked: bool,
    pub last_seen: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attached_ooi: Option<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OoiView {
    pub catalog_id: String,
    pub attachment: Attachment,
    pub highlighted: bool,
    pub scale_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvatarView {
    pub entity: EntityId,
    /// Pose in the city (environment-root) frame.
    pub city_pose: Pose,
}

/// Primary-side controls. Omitted from the views sent to secondaries unless
/// pickup notification is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlsView {
    pub pickup: Option<ClientId>,
    pub camera_mode: CameraMode,
    pub env_scale: f64,
    pub voice_on: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub primary: Option<ClientId>,
    pub secondaries: Vec<ClientId>,
    pub hand_map_visible: BTreeMap<ClientId, bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<ControlsView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub time: f64,
    pub tick: u64,
    pub env_root: EntityId,
    pub session: SessionView,
    pub entities: BTreeMap<EntityId, EntityView>,
    pub augmentation: Vec<AugmentationView>,
    pub oois: BTreeMap<EntityId, OoiView>,
    pub avatars: BTreeMap<ClientId, AvatarView>,
    /// Highlighted OOI → secondaries whose arrow is still showing.
    pub arrows: BTreeMap<EntityId, Vec<ClientId>>,
    pub pois: BTreeMap<String, EntityId>,
}

impl StateSnapshot {
    pub fn canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("snapshot serializes"))
    }

    pub fn hash(&self) -> String {
        hash_canonical(&self.canonical_json())
    }

    pub fn augmentation_by_marker(&self, marker_id: &str) -> Option<&AugmentationView> {
        self.augmentation.iter().find(|a| a.marker_id == marker_id)
    }
}

pub fn hash_canonical(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Renders a JSON value canonically (sorted keys, 9 significant digits).
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else {
                out.push_str(&format_sig9(n.as_f64().unwrap_or(0.0)));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string escapes")),
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("key escapes"));
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
    }
}

/// Rounds to 9 significant digits and prints the shortest decimal form.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        return "0".into();
    }
    format!("{rounded}")
}
