// SPDX-License-Identifier: Apache-2.0

//! Hierarchical frame tree.
//!
//! Every entity stores its pose relative to its parent. World poses are the
//! fold of [`compose`] along the root-to-entity path. Reparenting keeps the
//! world pose fixed and rewrites the local pose; scaler nodes under
//! augmentation anchors carry the offset and uniform scale applied to all
//! augmented content below them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::FrameError;
use crate::ids::{ClientId, EntityId};
use crate::pose::{compose, to_local, Pose};

const SCALER_UNIFORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Avatar,
    Ooi,
    AugAnchor,
    Scaler,
    EnvironmentRoot,
    Poi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub kind: EntityKind,
    pub parent: Option<EntityId>,
    pub local: Pose,
    pub owner: ClientId,
    pub visible: bool,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameTree {
    entities: BTreeMap<EntityId, Entity>,
    children: BTreeMap<EntityId, BTreeSet<EntityId>>,
    roots: BTreeSet<EntityId>,
    next_id: u64,
}

impl FrameTree {
    pub fn new() -> Self {
        FrameTree { next_id: 1, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn contains(&self, id: EntityId) -> bool {
        self.entities.contains_key(&id)
    }

    pub fn get(&self, id: EntityId) -> Result<&Entity, FrameError> {
        self.entities.get(&id).ok_or(FrameError::UnknownEntity(id))
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn roots(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.roots.iter().copied()
    }

    pub fn children(&self, id: EntityId) -> impl Iterator<Item = EntityId> + '_ {
        self.children.get(&id).into_iter().flatten().copied()
    }

    /// Next id that [`FrameTree::insert`] will hand out.
    pub fn next_id(&self) -> EntityId {
        EntityId(self.next_id)
    }

    pub fn insert(
        &mut self,
        kind: EntityKind,
        parent: Option<EntityId>,
        local: Pose,
        owner: ClientId,
        label: impl Into<String>,
    ) -> Result<EntityId, FrameError> {
        let id = EntityId(self.next_id);
        self.insert_with_id(id, kind, parent, local, owner, label)?;
        Ok(id)
    }

    /// Inserts under a caller-chosen id (used by replicas mirroring a server tree).
    pub fn insert_with_id(
        &mut self,
        id: EntityId,
        kind: EntityKind,
        parent: Option<EntityId>,
        local: Pose,
        owner: ClientId,
        label: impl Into<String>,
    ) -> Result<(), FrameError> {
        local.validate()?;
        if let Some(p) = parent {
            self.get(p)?;
        }
        if self.entities.contains_key(&id) {
            return Err(FrameError::Cycle { child: id, new_parent: parent.unwrap_or(id) });
        }
        self.entities.insert(
            id,
            Entity { id, kind, parent, local, owner, visible: true, label: label.into() },
        );
        self.link(id, parent);
        self.next_id = self.next_id.max(id.0 + 1);
        Ok(())
    }

    fn link(&mut self, id: EntityId, parent: Option<EntityId>) {
        match parent {
            Some(p) => {
                self.children.entry(p).or_default().insert(id);
            }
            None => {
                self.roots.insert(id);
            }
        }
    }

    fn unlink(&mut self, id: EntityId, parent: Option<EntityId>) {
        match parent {
            Some(p) => {
                if let Some(set) = self.children.get_mut(&p) {
                    set.remove(&id);
                    if set.is_empty() {
                        self.children.remove(&p);
                    }
                }
            }
            None => {
                self.roots.remove(&id);
            }
        }
    }

    /// Removes a leaf entity. Entities with children must be emptied first.
    pub fn remove(&mut self, id: EntityId) -> Result<Entity, FrameError> {
        let parent = self.get(id)?.parent;
        if self.children.get(&id).is_some_and(|c| !c.is_empty()) {
            return Err(FrameError::HasChildren(id));
        }
        self.unlink(id, parent);
        Ok(self.entities.remove(&id).expect("checked above"))
    }

    /// Removes an entity and all its descendants; returns the removed ids.
    pub fn remove_subtree(&mut self, id: EntityId) -> Result<Vec<EntityId>, FrameError> {
        self.get(id)?;
        let mut order = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            order.push(n);
            stack.extend(self.children(n));
        }
        for n in order.iter().rev() {
            self.remove(*n)?;
        }
        Ok(order)
    }

    pub fn set_local(&mut self, id: EntityId, local: Pose) -> Result<(), FrameError> {
        local.validate()?;
        self.entity_mut(id)?.local = local;
        Ok(())
    }

    pub fn set_visible(&mut self, id: EntityId, visible: bool) -> Result<(), FrameError> {
        self.entity_mut(id)?.visible = visible;
        Ok(())
    }

    pub fn set_owner(&mut self, id: EntityId, owner: ClientId) -> Result<(), FrameError> {
        self.entity_mut(id)?.owner = owner;
        Ok(())
    }

    pub fn set_label(&mut self, id: EntityId, label: impl Into<String>) -> Result<(), FrameError> {
        self.entity_mut(id)?.label = label.into();
        Ok(())
    }

    fn entity_mut(&mut self, id: EntityId) -> Result<&mut Entity, FrameError> {
        self.entities.get_mut(&id).ok_or(FrameError::UnknownEntity(id))
    }

    /// True if `ancestor` lies on the parent chain of `id` (or is `id`).
    pub fn is_ancestor_or_self(&self, ancestor: EntityId, id: EntityId) -> bool {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.entities.get(&c).and_then(|e| e.parent);
        }
        false
    }

    /// Root-to-entity fold of local poses.
    pub fn world_pose(&self, id: EntityId) -> Result<Pose, FrameError> {
        let mut chain = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            let e = self.get(c)?;
            chain.push(&e.local);
            cur = e.parent;
        }
        Ok(chain.iter().rev().fold(Pose::IDENTITY, |acc, local| compose(&acc, local)))
    }

    /// Pose of `id` expressed in the frame of `frame` (`None` is the world frame).
    pub fn pose_in_frame(&self, id: EntityId, frame: Option<EntityId>) -> Result<Pose, FrameError> {
        let world = self.world_pose(id)?;
        match frame {
            Some(f) => to_local(&world, &self.world_pose(f)?),
            None => Ok(world),
        }
    }

    /// Moves `id` under `new_parent` (or to the root set) keeping its world
    /// pose; returns the new local pose.
    pub fn reparent_preserving_world(
        &mut self,
        id: EntityId,
        new_parent: Option<EntityId>,
    ) -> Result<Pose, FrameError> {
        let world = self.world_pose(id)?;
        let parent_world = match new_parent {
            Some(p) => {
                self.get(p)?;
                if self.is_ancestor_or_self(id, p) {
                    return Err(FrameError::Cycle { child: id, new_parent: p });
                }
                self.world_pose(p)?
            }
            None => Pose::IDENTITY,
        };
        let local = to_local(&world, &parent_world)?;
        local.validate()?;
        self.set_parent_keep_local(id, new_parent)?;
        self.entity_mut(id)?.local = local;
        Ok(local)
    }

    /// Changes the parent without touching the stored local pose.
    pub fn set_parent_keep_local(
        &mut self,
        id: EntityId,
        new_parent: Option<EntityId>,
    ) -> Result<(), FrameError> {
        let old = self.get(id)?.parent;
        if let Some(p) = new_parent {
            self.get(p)?;
            if self.is_ancestor_or_self(id, p) {
                return Err(FrameError::Cycle { child: id, new_parent: p });
            }
        }
        if old == new_parent {
            return Ok(());
        }
        self.unlink(id, old);
        self.link(id, new_parent);
        self.entity_mut(id)?.parent = new_parent;
        Ok(())
    }

    /// The Scaler child of an augmentation anchor.
    pub fn scaler_of(&self, anchor: EntityId) -> Result<EntityId, FrameError> {
        self.get(anchor)?;
        self.children(anchor)
            .find(|c| self.entities[c].kind == EntityKind::Scaler)
            .ok_or(FrameError::NoScaler(anchor))
    }

    /// Sets the offset pose of an anchor's Scaler. Descendants keep their
    /// local poses and therefore move and scale with it.
    pub fn set_scaler(&mut self, anchor: EntityId, offset: Pose) -> Result<EntityId, FrameError> {
        if self.get(anchor)?.kind != EntityKind::AugAnchor {
            return Err(FrameError::NoScaler(anchor));
        }
        if !offset.is_uniform_scale(SCALER_UNIFORM_TOL) {
            return Err(FrameError::NonUniformScaler);
        }
        let scaler = self.scaler_of(anchor)?;
        self.set_local(scaler, offset)?;
        Ok(scaler)
    }

    /// Structural audit: parents exist, child sets mirror parent links,
    /// roots are exactly the parentless entities, and no cycles.
    pub fn check_invariants(&self) -> Result<(), String> {
        for e in self.entities.values() {
            match e.parent {
                Some(p) => {
                    if !self.entities.contains_key(&p) {
                        return Err(format!("{} has missing parent {}", e.id, p));
                    }
                    if !self.children.get(&p).is_some_and(|c| c.contains(&e.id)) {
                        return Err(format!("{} missing from children of {}", e.id, p));
                    }
                }
                None => {
                    if !self.roots.contains(&e.id) {
                        return Err(format!("{} is parentless but not a root", e.id));
                    }
                }
            }
            let mut steps = 0;
            let mut cur = e.parent;
            while let Some(c) = cur {
                steps += 1;
                if steps > self.entities.len() {
                    return Err(format!("cycle through {}", e.id));
                }
                cur = self.entities[&c].parent;
            }
            if e.local.validate().is_err() {
                return Err(format!("{} has an invalid local pose", e.id));
            }
        }
        let linked: usize = self.children.values().map(|c| c.len()).sum();
        if linked + self.roots.len() != self.entities.len() {
            return Err("child/root bookkeeping out of sync".into());
        }
        Ok(())
    }
}
