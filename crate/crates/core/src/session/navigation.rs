// SPDX-License-Identifier: Apache-2.0

//! Map-Hub / Pickup-Shovel lifecycle, camera modes, environment scale,
//! voice routing and secondary navigation.

use nalgebra::Vector3;

use super::{OpResult, Outbound, Session, MARKER_NOT_TRACKED, NO_PICKUP};
use crate::ids::ClientId;
use crate::pose::{compose, Pose};
use crate::protocol::{Body, Message};
use crate::snapshot::CameraMode;

/// Picks the candidate nearest to `point` among those strictly closer than
/// `threshold`; ties go to the lowest client id.
pub fn nearest_within(
    candidates: impl IntoIterator<Item = (ClientId, Vector3<f64>)>,
    point: &Vector3<f64>,
    threshold: f64,
) -> Option<ClientId> {
    candidates
        .into_iter()
        .map(|(c, p)| (c, (p - point).norm()))
        .filter(|(_, d)| *d < threshold)
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(c, _)| c)
}

impl Session {
    pub(super) fn pickup_request(&mut self, shovel_pose_on_map: Option<Pose>) -> OpResult {
        let shovel_on_map = match shovel_pose_on_map {
            Some(p) => p,
            None => {
                if !self.marker_tracked(self.map_hub()) {
                    return Err(MARKER_NOT_TRACKED.into());
                }
                self.tree.pose_in_frame(self.shovel().anchor, Some(self.map_hub().anchor))?
            }
        };
        match self.attempt_pickup(&shovel_on_map)? {
            Some(_) => Ok(self.primary_snapshot()),
            None => {
                let primary = self.state.primary;
                Ok(self.notice(primary, "no secondary within pickup threshold".into()))
            }
        }
    }

    /// Picks up the secondary whose Map-Hub avatar is nearest the shovel,
    /// if any lies within the pickup threshold (Map-Hub anchor frame).
    pub fn attempt_pickup(&mut self, shovel_pose_on_map: &Pose) -> Result<Option<ClientId>, String> {
        if self.state.pickup.is_some() {
            return Err("a secondary is already picked up".into());
        }
        if !self.marker_tracked(self.shovel()) {
            return Err(MARKER_NOT_TRACKED.into());
        }
        shovel_pose_on_map.validate()?;
        let map_anchor = self.map_hub().anchor;
        let mut candidates = Vec::new();
        for (c, a) in &self.avatars {
            candidates.push((*c, self.tree.pose_in_frame(a.entity, Some(map_anchor))?.position));
        }
        let picked = nearest_within(candidates, &shovel_pose_on_map.position, self.cfg.pickup_threshold);
        if let Some(c) = picked {
            self.pick(c)?;
        }
        Ok(picked)
    }

    fn pick(&mut self, c: ClientId) -> Result<(), String> {
        let anchor = self.shovel().anchor;
        self.tree.set_scaler(anchor, Pose::IDENTITY.with_uniform_scale(self.state.env_scale))?;
        self.tree.set_visible(self.env_root, true)?;
        self.state.pickup = Some(c);
        self.recenter_environment()?;
        Ok(())
    }

    pub(super) fn release(&mut self) -> Vec<Outbound> {
        if self.release_inner() {
            self.primary_snapshot()
        } else {
            let primary = self.state.primary;
            self.notice(primary, "nothing to release".into())
        }
    }

    /// Puts the held secondary back on the Map-Hub at its current city
    /// position. Returns false if nothing was held.
    pub(super) fn release_inner(&mut self) -> bool {
        let Some(c) = self.state.pickup.take() else {
            return false;
        };
        self.state.voice_on = false;
        let _ = self.tree.set_visible(self.env_root, false);
        let _ = self.place_avatar(c);
        true
    }

    pub(super) fn set_env_scale(&mut self, value: f64) -> OpResult {
        if self.state.pickup.is_none() {
            return Err(NO_PICKUP.into());
        }
        if !value.is_finite() {
            return Err("scale must be finite".into());
        }
        let clamped = value.clamp(self.cfg.env_scale_min, self.cfg.env_scale_max);
        let anchor = self.shovel().anchor;
        self.tree.set_scaler(anchor, Pose::IDENTITY.with_uniform_scale(clamped))?;
        self.state.env_scale = clamped;
        let mut out = self.primary_snapshot();
        if clamped != value {
            let primary = self.state.primary;
            out.extend(self.notice(primary, format!("environment scale clamped to {clamped}")));
        }
        Ok(out)
    }

    pub(super) fn set_camera_mode(&mut self, mode: CameraMode) -> OpResult {
        if self.state.pickup.is_none() {
            return Err(NO_PICKUP.into());
        }
        self.state.camera_mode = mode;
        if mode == CameraMode::FollowSecondary {
            self.recenter_environment()?;
        }
        Ok(self.primary_snapshot())
    }

    pub(super) fn toggle_voice(&mut self, on: bool) -> Vec<Outbound> {
        self.state.voice_on = on;
        self.primary_snapshot()
    }

    /// Voice frames travel primary ↔ held secondary while voice is on;
    /// everything else is dropped.
    pub(super) fn route_audio(&mut self, from: ClientId, seq: u64, data: Vec<u8>) -> Vec<Outbound> {
        let (Some(primary), Some(held)) = (self.state.primary, self.state.pickup) else {
            return Vec::new();
        };
        if !self.state.voice_on {
            return Vec::new();
        }
        let to = if from == primary {
            held
        } else if from == held {
            primary
        } else {
            return Vec::new();
        };
        vec![Outbound { to, msg: Message { seq, sender: from, body: Body::AudioFrame { data } } }]
    }

    pub(super) fn teleport_short(&mut self, c: ClientId, target: [f64; 3]) -> OpResult {
        let target = Vector3::from(target);
        if !target.iter().all(|v| v.is_finite()) {
            return Err("teleport target must be finite".into());
        }
        let current = self.avatars.get(&c).ok_or("no avatar")?.city_pose;
        if (target - current.position).norm() > self.cfg.short_teleport_limit {
            return Err("teleport beyond short-range limit".into());
        }
        self.set_city_pose(c, Pose { position: target, ..current })?;
        Ok(Vec::new())
    }

    pub(super) fn teleport_poi(&mut self, c: ClientId, poi_id: &str) -> OpResult {
        let spawn = self.world.poi(poi_id).ok_or_else(|| format!("unknown poi {poi_id:?}"))?.spawn_pose;
        if !self.state.hand_map_visible.get(&c).copied().unwrap_or(false) {
            return Err("map hidden".into());
        }
        self.set_city_pose(c, spawn)?;
        Ok(Vec::new())
    }

    pub(super) fn toggle_hand_map(&mut self, c: ClientId, visible: bool) -> OpResult {
        let flag = self.state.hand_map_visible.get_mut(&c).ok_or("no hand map")?;
        *flag = visible;
        Ok(Vec::new())
    }

    pub(super) fn set_city_pose(&mut self, c: ClientId, pose: Pose) -> Result<(), String> {
        pose.validate()?;
        self.avatars.get_mut(&c).ok_or("no avatar")?.city_pose = pose;
        if self.state.pickup == Some(c) && self.state.camera_mode == CameraMode::FollowSecondary {
            self.recenter_environment()
        } else {
            self.place_avatar(c)
        }
    }

    /// Parents the avatar under the Map-Hub or shovel scaler and derives its
    /// local pose from its city pose.
    pub(super) fn place_avatar(&mut self, c: ClientId) -> Result<(), String> {
        let a = self.avatars.get(&c).ok_or("no avatar")?.clone();
        let (parent, local) = if self.state.pickup == Some(c) {
            let env_local = self.tree.get(self.env_root)?.local;
            (self.shovel().scaler, compose(&env_local, &a.city_pose))
        } else {
            (self.map_hub().scaler, a.city_pose)
        };
        self.tree.set_parent_keep_local(a.entity, Some(parent))?;
        self.tree.set_local(a.entity, local)?;
        Ok(())
    }

    /// Shifts the environment under the shovel so the held avatar sits at the
    /// shovel-scaler origin.
    pub(super) fn recenter_environment(&mut self) -> Result<(), String> {
        let Some(c) = self.state.pickup else {
            return Ok(());
        };
        let city = self.avatars.get(&c).ok_or("no avatar")?.city_pose;
        let env = self.tree.get(self.env_root)?.local;
        let offset = -(env.rotation * env.scale.component_mul(&city.position));
        self.tree.set_local(self.env_root, Pose { position: offset, ..env })?;
        self.place_avatar(c)
    }
}
