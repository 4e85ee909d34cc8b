// SPDX-License-Identifier: Apache-2.0

//! Client-side mirror of the server's replicated state.
//!
//! A replica snaps to whatever the server last sent: a snapshot replaces
//! everything, pose messages overwrite single entries. No prediction or
//! interpolation is done.

use std::collections::BTreeMap;

use crate::ids::{ClientId, EntityId};
use crate::pose::{compose, Pose};
use crate::protocol::{Body, EntityLocalPose};
use crate::snapshot::{Role, StateSnapshot};

#[derive(Debug, Clone, Default)]
pub struct ClientReplica {
    pub client: Option<ClientId>,
    pub role: Option<Role>,
    poses: BTreeMap<EntityId, (Option<EntityId>, Pose)>,
    anchors: BTreeMap<String, EntityId>,
    latest: Option<StateSnapshot>,
}

impl ClientReplica {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn latest(&self) -> Option<&StateSnapshot> {
        self.latest.as_ref()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.poses.keys().copied()
    }

    pub fn local(&self, id: EntityId) -> Option<(Option<EntityId>, Pose)> {
        self.poses.get(&id).copied()
    }

    fn load(&mut self, snapshot: &StateSnapshot) {
        self.poses = snapshot.entities.iter().map(|(id, e)| (*id, (e.parent, e.local))).collect();
        self.anchors = snapshot.augmentation.iter().map(|a| (a.marker_id.clone(), a.anchor)).collect();
        self.latest = Some(snapshot.clone());
    }

    /// Applies one server message. Returns true if replicated poses changed.
    pub fn apply(&mut self, body: &Body) -> bool {
        match body {
            Body::Welcome { client, role, snapshot } => {
                self.client = Some(*client);
                self.role = Some(*role);
                self.load(snapshot);
                true
            }
            Body::StateSnapshot { snapshot } => {
                self.load(snapshot);
                true
            }
            Body::EntityLocalPose(EntityLocalPose { entity, parent, local }) => {
                self.poses.insert(*entity, (Some(*parent), *local));
                true
            }
            Body::MarkerPose { marker_id, pose } => match self.anchors.get(marker_id) {
                Some(anchor) => {
                    self.poses.insert(*anchor, (None, *pose));
                    true
                }
                None => false,
            },
            _ => false,
        }
    }

    /// World pose in this replica's frame, or None if the chain is broken.
    pub fn world_pose(&self, id: EntityId) -> Option<Pose> {
        let mut chain = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            let (parent, local) = self.poses.get(&c)?;
            chain.push(*local);
            if chain.len() > self.poses.len() {
                return None;
            }
            cur = *parent;
        }
        Some(chain.iter().rev().fold(Pose::IDENTITY, |acc, l| compose(&acc, l)))
    }
}
