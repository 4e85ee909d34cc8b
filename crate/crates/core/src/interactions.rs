// SPDX-License-Identifier: Apache-2.0

//! OOI selection, the six interactions, and the tangible attach/lock lifecycle.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};

use crate::config::ArrowConfig;
use crate::ids::{ClientId, EntityId};
use crate::pose::Pose;
use crate::protocol::{Body, InteractionCommand, PanelKind};
use crate::scene_graph::EntityKind;
use crate::session::{OpResult, Outbound, Session, MARKER_NOT_TRACKED, NO_PICKUP};
use crate::snapshot::{Attachment, PropKind};
use crate::world::Interaction;

#[derive(Debug, Clone, PartialEq)]
pub struct OoiInstance {
    pub catalog_id: String,
    pub attachment: Attachment,
    pub highlighted: bool,
    /// Last factor applied by the Scale interaction.
    pub scale_factor: f64,
}

impl OoiInstance {
    pub fn new(catalog_id: &str, attachment: Attachment) -> Self {
        OoiInstance { catalog_id: catalog_id.to_string(), attachment, highlighted: false, scale_factor: 1.0 }
    }
}

/// True once the secondary is within `near_distance` of the OOI and facing
/// it within `facing_half_angle` degrees. A coincident avatar counts as facing.
pub fn arrow_dismissed(avatar: &Pose, ooi_pos: &Vector3<f64>, cfg: &ArrowConfig) -> bool {
    let to_ooi = ooi_pos - avatar.position;
    let dist = to_ooi.norm();
    if dist > cfg.near_distance {
        return false;
    }
    if dist == 0.0 {
        return true;
    }
    let cos = (avatar.forward().dot(&to_ooi) / dist).clamp(-1.0, 1.0);
    cos.acos().to_degrees() <= cfg.facing_half_angle
}

/// Where a text or video panel appears: `distance` in front of the avatar,
/// raised by `height`, turned to face it.
pub fn panel_pose(avatar: &Pose, distance: f64, height: f64) -> Pose {
    let position = avatar.position + avatar.forward() * distance + Vector3::y() * height;
    let rotation = avatar.rotation * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), PI);
    Pose::new(position, rotation, Vector3::repeat(1.0))
}

impl Session {
    fn primary_or_server(&self) -> ClientId {
        self.state.primary.unwrap_or(ClientId::SERVER)
    }

    fn ooi_instance(&self, ooi: EntityId) -> Result<&OoiInstance, String> {
        self.oois.get(&ooi).ok_or_else(|| format!("unknown ooi {ooi}"))
    }

    /// The OOI's enabled interactions in menu order.
    pub fn select_ooi(&self, ooi: EntityId) -> Result<Vec<Interaction>, String> {
        let inst = self.ooi_instance(ooi)?;
        let entry = self.world.entry(&inst.catalog_id).ok_or("catalog entry missing")?;
        Ok(entry.enabled_interactions.iter().copied().collect())
    }

    pub(crate) fn interaction(&mut self, ooi: EntityId, command: InteractionCommand) -> OpResult {
        let enabled = self.select_ooi(ooi)?;
        if !enabled.contains(&command.required()) {
            return Err("interaction disabled".into());
        }
        match command {
            InteractionCommand::Text => self.display(ooi, PanelKind::Text),
            InteractionCommand::Video => self.display(ooi, PanelKind::Video),
            InteractionCommand::Scale { factor } => self.scale_ooi(ooi, factor),
            InteractionCommand::Highlight { on } => self.set_highlight(ooi, on),
            InteractionCommand::Change { target } => {
                self.change_ooi(ooi, &target)?;
                Ok(self.snapshot_broadcast())
            }
            InteractionCommand::Lock => {
                self.lock_ooi(ooi)?;
                Ok(self.snapshot_broadcast())
            }
            InteractionCommand::Unlock { tangible } => {
                self.reattach_ooi(&tangible, ooi)?;
                Ok(self.snapshot_broadcast())
            }
            InteractionCommand::Delete => {
                self.delete_ooi(ooi)?;
                Ok(self.snapshot_broadcast())
            }
        }
    }

    /// Sends the OOI's text or video to the held secondary as a panel in
    /// front of them (and echoes it to the primary).
    fn display(&mut self, ooi: EntityId, kind: PanelKind) -> OpResult {
        let inst = self.ooi_instance(ooi)?;
        let entry = self.world.entry(&inst.catalog_id).ok_or("catalog entry missing")?;
        let content = match kind {
            PanelKind::Text => entry.text_content.clone(),
            PanelKind::Video => entry.video_ref.clone(),
        }
        .ok_or("content missing")?;
        let held = self.state.pickup.ok_or(NO_PICKUP)?;
        let avatar = self.avatars.get(&held).ok_or("no avatar")?.city_pose;
        let pose = panel_pose(&avatar, self.cfg.panel_distance, self.cfg.panel_height);
        let body = Body::Panel { ooi, kind, content, pose };
        let mut out = vec![self.server_msg(held, body.clone())];
        if let Some(p) = self.state.primary {
            out.push(self.server_msg(p, body));
        }
        Ok(out)
    }

    fn scale_ooi(&mut self, ooi: EntityId, factor: f64) -> OpResult {
        if !factor.is_finite() {
            return Err("scale factor must be finite".into());
        }
        let clamped = factor.clamp(self.cfg.ooi_scale_min, self.cfg.ooi_scale_max);
        let local = self.tree.get(ooi)?.local;
        self.tree.set_local(ooi, local.with_uniform_scale(clamped))?;
        if let Some(inst) = self.oois.get_mut(&ooi) {
            inst.scale_factor = clamped;
        }
        let mut out = Vec::new();
        if clamped != factor {
            let primary = self.state.primary;
            out.extend(self.notice(primary, format!("OOI scale clamped to {clamped}")));
        }
        Ok(out)
    }

    fn set_highlight(&mut self, ooi: EntityId, on: bool) -> OpResult {
        let secondaries: BTreeSet<ClientId> = self.state.secondaries.clone();
        let inst = self.oois.get_mut(&ooi).ok_or("unknown ooi")?;
        inst.highlighted = on;
        if on {
            self.arrows.insert(ooi, secondaries);
        } else {
            self.arrows.remove(&ooi);
        }
        let mut out = self.broadcast(Body::HighlightState { ooi, on });
        out.extend(self.snapshot_broadcast());
        Ok(out)
    }

    /// Swaps the catalog entry in place; pose, attachment and id are kept.
    pub fn change_ooi(&mut self, ooi: EntityId, target: &str) -> Result<(), String> {
        let inst = self.ooi_instance(ooi)?;
        let entry = self.world.entry(&inst.catalog_id).ok_or("catalog entry missing")?;
        if !entry.change_targets.iter().any(|t| t == target) {
            return Err(format!("change target {target:?} not listed"));
        }
        let name = self.world.entry(target).ok_or("unknown catalog id")?.display_name.clone();
        self.tree.set_label(ooi, name)?;
        self.oois.get_mut(&ooi).expect("checked").catalog_id = target.to_string();
        Ok(())
    }

    fn tangible(&self, marker_id: &str) -> Result<&crate::session::AugmentationEntity, String> {
        self.marker(marker_id)
            .filter(|m| m.prop_kind == PropKind::Tangible)
            .ok_or_else(|| format!("unknown tangible {marker_id:?}"))
    }

    /// Creates a catalog OOI on an empty, tracked tangible.
    pub fn spawn_ooi_on_tangible(&mut self, marker_id: &str, catalog_id: &str) -> Result<EntityId, String> {
        let entry = self
            .world
            .entry(catalog_id)
            .filter(|e| e.spawnable)
            .ok_or_else(|| format!("unknown catalog id {catalog_id:?}"))?;
        let name = entry.display_name.clone();
        let t = self.tangible(marker_id)?;
        if !self.marker_tracked(t) {
            return Err(MARKER_NOT_TRACKED.into());
        }
        if t.attached_ooi.is_some() {
            return Err("one OOI per tangible".into());
        }
        let scaler = t.scaler;
        let owner = self.primary_or_server();
        let id = self.tree.insert(EntityKind::Ooi, Some(scaler), Pose::IDENTITY, owner, name)?;
        self.oois.insert(
            id,
            OoiInstance::new(catalog_id, Attachment::Tangible { marker_id: marker_id.to_string() }),
        );
        self.marker_mut(marker_id).expect("checked").attached_ooi = Some(id);
        Ok(id)
    }

    /// Detaches an OOI from its tangible, leaving it fixed in the city.
    pub fn lock_ooi(&mut self, ooi: EntityId) -> Result<(), String> {
        let marker_id = match &self.ooi_instance(ooi)?.attachment {
            Attachment::Tangible { marker_id } => marker_id.clone(),
            Attachment::StaticScene => return Err("static scene OOI cannot be locked".into()),
            Attachment::LockedInEnvironment => return Err("OOI is already locked".into()),
        };
        self.tree.reparent_preserving_world(ooi, Some(self.env_root))?;
        self.oois.get_mut(&ooi).expect("checked").attachment = Attachment::LockedInEnvironment;
        if let Some(m) = self.marker_mut(&marker_id) {
            m.attached_ooi = None;
        }
        Ok(())
    }

    /// Attaches a locked OOI back onto an empty tangible held next to it.
    pub fn reattach_ooi(&mut self, marker_id: &str, ooi: EntityId) -> Result<(), String> {
        if self.ooi_instance(ooi)?.attachment != Attachment::LockedInEnvironment {
            return Err("OOI is not locked".into());
        }
        let t = self.tangible(marker_id)?;
        if !self.marker_tracked(t) {
            return Err(MARKER_NOT_TRACKED.into());
        }
        if t.attached_ooi.is_some() {
            return Err("one OOI per tangible".into());
        }
        let scaler = t.scaler;
        let gap = (self.tree.world_pose(scaler)?.position - self.tree.world_pose(ooi)?.position).norm();
        if gap > self.cfg.reattach_threshold {
            return Err("tangible too far from OOI".into());
        }
        self.tree.reparent_preserving_world(ooi, Some(scaler))?;
        self.oois.get_mut(&ooi).expect("checked").attachment =
            Attachment::Tangible { marker_id: marker_id.to_string() };
        self.marker_mut(marker_id).expect("checked").attached_ooi = Some(ooi);
        Ok(())
    }

    /// Removes a locked OOI. Its id is never reused.
    pub fn delete_ooi(&mut self, ooi: EntityId) -> Result<(), String> {
        match self.ooi_instance(ooi)?.attachment {
            Attachment::LockedInEnvironment => {}
            Attachment::Tangible { .. } => return Err("lock the OOI before deleting it".into()),
            Attachment::StaticScene => return Err("static scene OOI cannot be deleted".into()),
        }
        self.tree.remove(ooi)?;
        self.oois.remove(&ooi);
        self.arrows.remove(&ooi);
        Ok(())
    }

    /// Drops arrows for secondaries that reached and face their highlighted OOI.
    pub(crate) fn update_arrows(&mut self) -> Vec<Outbound> {
        if self.arrows.values().all(|s| s.is_empty()) {
            return Vec::new();
        }
        let mut changed = false;
        let oois: Vec<EntityId> = self.arrows.keys().copied().collect();
        for ooi in oois {
            let Some(target) = self.city_pose_of(ooi) else { continue };
            let waiting: Vec<ClientId> = self.arrows[&ooi].iter().copied().collect();
            for c in waiting {
                let Some(a) = self.avatars.get(&c) else { continue };
                if arrow_dismissed(&a.city_pose, &target.position, &self.cfg.arrow) {
                    self.arrows.get_mut(&ooi).expect("present").remove(&c);
                    changed = true;
                }
            }
        }
        if changed {
            self.snapshot_broadcast()
        } else {
            Vec::new()
        }
    }
}
