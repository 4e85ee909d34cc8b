// SPDX-License-Identifier: Apache-2.0

//! The authoritative session.
//!
//! A [`Session`] owns the frame tree and all role state. It is driven by a
//! totally ordered stream of [`SessionEvent`]s (connects, messages,
//! disconnects and fixed-rate ticks) and answers each with the messages to
//! deliver. Given the same world, config and event stream it produces the
//! same outputs and the same canonical snapshot, which is what replay relies on.
//!
//! Primary-side layout of the tree:
//!
//! ```text
//! MapHub anchor ── Scaler (calibration offset, map_scale) ── secondary avatars
//! Shovel anchor ── Scaler (env_scale) ── EnvironmentRoot ── static OOIs, POIs, locked OOIs
//!                                 └──── held avatar
//! Tangible anchor ── Scaler (tangible scale) ── attached OOI
//! ```
//!
//! Secondaries see only the environment root's subtree, with avatars and
//! tangible OOIs expressed in the environment frame.

mod navigation;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::SessionConfig;
use crate::error::{DocumentError, FrameError};
use crate::ids::{ClientId, EntityId};
use crate::interactions::OoiInstance;
use crate::pose::{compose, Pose};
use crate::protocol::{authorize, replicate_tangible_ooi, Body, EntityLocalPose, Message, Roles};
use crate::scene_graph::{EntityKind, FrameTree};
use crate::snapshot::{
    Attachment, AugmentationView, AvatarView, CameraMode, ControlsView, EntityView, OoiView,
    PropKind, Role, SessionView, StateSnapshot,
};
use crate::world::World;

pub use navigation::nearest_within;

pub const MARKER_NOT_TRACKED: &str = "marker not tracked";
pub const NO_PICKUP: &str = "no secondary picked up";

/// Input to the session event loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum SessionEvent {
    Connect { client: ClientId },
    Message { from: ClientId, msg: Message },
    Disconnect { client: ClientId },
    Tick,
}

/// A message addressed to one client.
#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: ClientId,
    pub msg: Message,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub primary: Option<ClientId>,
    pub secondaries: BTreeSet<ClientId>,
    pub pickup: Option<ClientId>,
    pub camera_mode: CameraMode,
    pub env_scale: f64,
    pub voice_on: bool,
    pub hand_map_visible: BTreeMap<ClientId, bool>,
}

/// A tracked physical prop with its virtual anchor and scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationEntity {
    pub marker_id: String,
    pub prop_kind: PropKind,
    pub anchor: EntityId,
    pub scaler: EntityId,
    pub last_seen: Option<f64>,
    pub attached_ooi: Option<EntityId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Avatar {
    pub entity: EntityId,
    pub city_pose: Pose,
}

type PoseMap = BTreeMap<EntityId, (Option<EntityId>, Pose)>;

#[derive(Debug, Clone)]
pub struct Session {
    pub(crate) cfg: SessionConfig,
    pub(crate) world: World,
    pub(crate) tree: FrameTree,
    pub(crate) state: SessionState,
    pub(crate) env_root: EntityId,
    pub(crate) markers: Vec<AugmentationEntity>,
    pub(crate) oois: BTreeMap<EntityId, OoiInstance>,
    pub(crate) avatars: BTreeMap<ClientId, Avatar>,
    pub(crate) arrows: BTreeMap<EntityId, BTreeSet<ClientId>>,
    pois: BTreeMap<String, EntityId>,
    connections: BTreeSet<ClientId>,
    next_client: u32,
    last_seq: BTreeMap<ClientId, u64>,
    server_seq: u64,
    tick: u64,
    sent_primary: PoseMap,
    sent_secondary: PoseMap,
}

/// Result of one operation: messages to send, or a rejection reason.
pub(crate) type OpResult = Result<Vec<Outbound>, String>;

impl From<FrameError> for String {
    fn from(e: FrameError) -> Self {
        e.to_string()
    }
}

impl Session {
    pub fn new(world: World, cfg: SessionConfig) -> Result<Self, DocumentError> {
        cfg.validate()?;
        let mut tree = FrameTree::new();
        let server = ClientId::SERVER;
        let cal = world.calibration().clone();
        let mut markers = Vec::new();
        let frame = |e: FrameError| DocumentError::invalid("world", e.to_string());

        let mut add_prop = |tree: &mut FrameTree,
                            marker_id: &str,
                            kind: PropKind,
                            rest: Pose,
                            scaler: Pose|
         -> Result<(), DocumentError> {
            let anchor = tree
                .insert(EntityKind::AugAnchor, None, rest, server, marker_id)
                .map_err(frame)?;
            let scaler = tree
                .insert(EntityKind::Scaler, Some(anchor), scaler, server, format!("{marker_id}/scaler"))
                .map_err(frame)?;
            markers.push(AugmentationEntity {
                marker_id: marker_id.to_string(),
                prop_kind: kind,
                anchor,
                scaler,
                last_seen: None,
                attached_ooi: None,
            });
            Ok(())
        };
        add_prop(&mut tree, &cal.map_hub_marker, PropKind::MapHub, cal.map_hub_rest_pose, cal.scaler_pose())?;
        add_prop(
            &mut tree,
            &cal.shovel_marker,
            PropKind::PickupShovel,
            cal.shovel_rest_pose,
            Pose::IDENTITY.with_uniform_scale(cfg.env_scale_default),
        )?;
        for t in world.tangibles() {
            add_prop(
                &mut tree,
                &t.marker_id,
                PropKind::Tangible,
                t.rest_pose,
                Pose::IDENTITY.with_uniform_scale(t.scale),
            )?;
        }

        let shovel_scaler = markers[1].scaler;
        let env_root = tree
            .insert(EntityKind::EnvironmentRoot, Some(shovel_scaler), Pose::IDENTITY, server, "environment")
            .map_err(frame)?;
        tree.set_visible(env_root, false).map_err(frame)?;

        let mut oois = BTreeMap::new();
        for entry in world.catalog() {
            if let Some(pose) = entry.scene_pose {
                let id = tree
                    .insert(EntityKind::Ooi, Some(env_root), pose, server, entry.display_name.clone())
                    .map_err(frame)?;
                oois.insert(id, OoiInstance::new(&entry.catalog_id, Attachment::StaticScene));
            }
        }
        let mut pois = BTreeMap::new();
        for poi in world.pois() {
            let id = tree
                .insert(EntityKind::Poi, Some(env_root), poi.spawn_pose, server, poi.name.clone())
                .map_err(frame)?;
            pois.insert(poi.poi_id.clone(), id);
        }

        let mut session = Session {
            state: SessionState {
                primary: None,
                secondaries: BTreeSet::new(),
                pickup: None,
                camera_mode: CameraMode::FollowSecondary,
                env_scale: cfg.env_scale_default,
                voice_on: false,
                hand_map_visible: BTreeMap::new(),
            },
            cfg,
            world,
            tree,
            env_root,
            markers,
            oois,
            avatars: BTreeMap::new(),
            arrows: BTreeMap::new(),
            pois,
            connections: BTreeSet::new(),
            next_client: 1,
            last_seq: BTreeMap::new(),
            server_seq: 0,
            tick: 0,
            sent_primary: PoseMap::new(),
            sent_secondary: PoseMap::new(),
        };
        session.sync_sent_maps();
        Ok(session)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn tree(&self) -> &FrameTree {
        &self.tree
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn env_root(&self) -> EntityId {
        self.env_root
    }

    pub fn augmentation(&self) -> &[AugmentationEntity] {
        &self.markers
    }

    pub fn avatar(&self, c: ClientId) -> Option<&Avatar> {
        self.avatars.get(&c)
    }

    pub fn ooi(&self, id: EntityId) -> Option<&OoiInstance> {
        self.oois.get(&id)
    }

    pub fn oois(&self) -> &BTreeMap<EntityId, OoiInstance> {
        &self.oois
    }

    pub fn now(&self) -> f64 {
        self.tick as f64 * self.cfg.tick_dt()
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn role_of(&self, c: ClientId) -> Option<Role> {
        self.roles().role_of(c)
    }

    fn roles(&self) -> Roles<'_> {
        Roles { primary: self.state.primary, secondaries: &self.state.secondaries }
    }

    pub(crate) fn marker(&self, marker_id: &str) -> Option<&AugmentationEntity> {
        self.markers.iter().find(|m| m.marker_id == marker_id)
    }

    pub(crate) fn marker_mut(&mut self, marker_id: &str) -> Option<&mut AugmentationEntity> {
        self.markers.iter_mut().find(|m| m.marker_id == marker_id)
    }

    pub(crate) fn map_hub(&self) -> &AugmentationEntity {
        &self.markers[0]
    }

    pub(crate) fn shovel(&self) -> &AugmentationEntity {
        &self.markers[1]
    }

    /// A marker never reported is assumed at its rest pose; once reported it
    /// counts as tracked until `tracking_timeout` passes without a pose.
    pub fn marker_tracked(&self, m: &AugmentationEntity) -> bool {
        match m.last_seen {
            None => true,
            Some(t) => self.now() - t <= self.cfg.tracking_timeout + 1e-9,
        }
    }

    /// Dispatches one event.
    pub fn apply(&mut self, event: &SessionEvent) -> Vec<Outbound> {
        match event {
            SessionEvent::Connect { client } => {
                self.connect_as(*client);
                Vec::new()
            }
            SessionEvent::Message { from, msg } => self.handle(*from, msg.clone()),
            SessionEvent::Disconnect { client } => self.disconnect(*client),
            SessionEvent::Tick => self.tick(),
        }
    }

    /// Registers a new connection and returns its id.
    pub fn connect(&mut self) -> ClientId {
        let id = ClientId(self.next_client);
        self.connect_as(id);
        id
    }

    fn connect_as(&mut self, id: ClientId) {
        self.next_client = self.next_client.max(id.0 + 1);
        self.connections.insert(id);
    }

    pub fn is_connected(&self, c: ClientId) -> bool {
        self.connections.contains(&c)
    }

    pub fn disconnect(&mut self, c: ClientId) -> Vec<Outbound> {
        if !self.connections.remove(&c) {
            return Vec::new();
        }
        self.leave(c)
    }

    /// Handles one inbound message from connection `from`.
    pub fn handle(&mut self, from: ClientId, msg: Message) -> Vec<Outbound> {
        if !self.connections.contains(&from) {
            return Vec::new();
        }
        let last = self.last_seq.get(&from).copied();
        if last.is_some_and(|l| msg.seq <= l) {
            return Vec::new();
        }
        self.last_seq.insert(from, msg.seq);
        let seq = msg.seq;
        if let Err(reason) = authorize(&self.tree, self.roles(), from, &msg) {
            return vec![self.error_to(from, reason, seq)];
        }
        match self.dispatch(from, msg) {
            Ok(out) => out,
            Err(reason) => vec![self.error_to(from, reason, seq)],
        }
    }

    fn dispatch(&mut self, from: ClientId, msg: Message) -> OpResult {
        let seq = msg.seq;
        match msg.body {
            Body::Join { role } => self.join(from, role),
            Body::Leave => Ok(self.leave(from)),
            Body::QuerySnapshot => {
                let snapshot = Box::new(self.snapshot());
                Ok(vec![self.server_msg(from, Body::StateSnapshot { snapshot })])
            }
            Body::MarkerPose { marker_id, pose } => self.marker_pose(&marker_id, pose),
            Body::EntityLocalPose(p) => self.entity_local_pose(from, p),
            Body::Pickup { shovel_pose_on_map } => self.pickup_request(shovel_pose_on_map),
            Body::Release => Ok(self.release()),
            Body::SetScale { value } => self.set_env_scale(value),
            Body::SetCameraMode { mode } => self.set_camera_mode(mode),
            Body::VoiceToggle { on } => Ok(self.toggle_voice(on)),
            Body::AudioFrame { data } => Ok(self.route_audio(from, seq, data)),
            Body::TeleportShort { secondary, target } => self.teleport_short(secondary, target),
            Body::TeleportPoi { secondary, poi_id } => self.teleport_poi(secondary, &poi_id),
            Body::HandMap { secondary, visible } => self.toggle_hand_map(secondary, visible),
            Body::SelectOoi { ooi } => {
                let interactions = self.select_ooi(ooi)?;
                Ok(vec![self.server_msg(from, Body::Menu { ooi, interactions })])
            }
            Body::Interaction { ooi, command } => self.interaction(ooi, command),
            Body::SpawnOoi { tangible, catalog_id } => {
                self.spawn_ooi_on_tangible(&tangible, &catalog_id).map(|_| self.snapshot_broadcast())
            }
            Body::AttachOoi { tangible, ooi } => {
                self.reattach_ooi(&tangible, ooi).map(|_| self.snapshot_broadcast())
            }
            _ => Err("server-only message".into()),
        }
    }

    fn next_server_seq(&mut self) -> u64 {
        self.server_seq += 1;
        self.server_seq
    }

    pub(crate) fn server_msg(&mut self, to: ClientId, body: Body) -> Outbound {
        let seq = self.next_server_seq();
        Outbound { to, msg: Message { seq, sender: ClientId::SERVER, body } }
    }

    fn error_to(&mut self, to: ClientId, reason: String, in_reply_to: u64) -> Outbound {
        self.server_msg(to, Body::Error { reason, in_reply_to: Some(in_reply_to) })
    }

    pub(crate) fn notice(&mut self, to: Option<ClientId>, message: String) -> Vec<Outbound> {
        to.map(|c| vec![self.server_msg(c, Body::Notice { message })]).unwrap_or_default()
    }

    pub(crate) fn joined(&self) -> Vec<ClientId> {
        self.state.primary.into_iter().chain(self.state.secondaries.iter().copied()).collect()
    }

    pub(crate) fn broadcast(&mut self, body: Body) -> Vec<Outbound> {
        self.joined().into_iter().map(|c| self.server_msg(c, body.clone())).collect()
    }

    /// Full snapshot to the primary and environment views to secondaries.
    pub(crate) fn snapshot_broadcast(&mut self) -> Vec<Outbound> {
        let mut out = Vec::new();
        if let Some(p) = self.state.primary {
            let snapshot = Box::new(self.snapshot());
            out.push(self.server_msg(p, Body::StateSnapshot { snapshot }));
        }
        let secondaries: Vec<_> = self.state.secondaries.iter().copied().collect();
        if !secondaries.is_empty() {
            let view = self.secondary_view();
            for c in secondaries {
                let snapshot = Box::new(view.clone());
                out.push(self.server_msg(c, Body::StateSnapshot { snapshot }));
            }
        }
        self.sync_sent_maps();
        out
    }

    /// Snapshot only to the primary (pickup changes secondaries aren't told about).
    pub(crate) fn primary_snapshot(&mut self) -> Vec<Outbound> {
        if self.cfg.notify_secondary_pickup {
            return self.snapshot_broadcast();
        }
        let mut out = Vec::new();
        if let Some(p) = self.state.primary {
            let snapshot = Box::new(self.snapshot());
            out.push(self.server_msg(p, Body::StateSnapshot { snapshot }));
            self.sent_primary = self.primary_pose_map();
        }
        out
    }

    fn join(&mut self, from: ClientId, role: Role) -> OpResult {
        match role {
            Role::Primary => {
                if self.state.primary.is_some() {
                    return Err("role occupied".into());
                }
                self.state.primary = Some(from);
                let adopt: Vec<_> = self
                    .oois
                    .iter()
                    .filter(|(_, o)| o.attachment != Attachment::StaticScene)
                    .map(|(id, _)| *id)
                    .collect();
                for id in adopt {
                    self.tree.set_owner(id, from)?;
                }
                self.spawn_environment(from);
            }
            Role::Secondary => {
                self.spawn_environment(from);
                let spawn = self.world.calibration().spawn;
                let scaler = self.map_hub().scaler;
                let entity = self.tree.insert(
                    EntityKind::Avatar,
                    Some(scaler),
                    spawn,
                    from,
                    format!("avatar {from}"),
                )?;
                self.state.secondaries.insert(from);
                self.state.hand_map_visible.insert(from, false);
                self.avatars.insert(from, Avatar { entity, city_pose: spawn });
            }
        }
        let snapshot = Box::new(match role {
            Role::Primary => self.snapshot(),
            Role::Secondary => self.secondary_view(),
        });
        let welcome = self.server_msg(from, Body::Welcome { client: from, role, snapshot });
        let mut out = self.snapshot_broadcast();
        out.retain(|o| o.to != from);
        out.insert(0, welcome);
        Ok(out)
    }

    /// The environment instance `client` sees. One shared instance exists per
    /// session; on the primary side it hangs hidden under the shovel scaler
    /// until a secondary is picked up.
    pub fn spawn_environment(&mut self, client: ClientId) -> EntityId {
        if self.state.primary == Some(client) && self.state.pickup.is_none() {
            let _ = self.tree.set_visible(self.env_root, false);
        }
        self.env_root
    }

    fn leave(&mut self, c: ClientId) -> Vec<Outbound> {
        if self.state.primary == Some(c) {
            self.release_inner();
            self.state.primary = None;
            self.state.voice_on = false;
            let owned: Vec<_> = self.tree.entities().filter(|e| e.owner == c).map(|e| e.id).collect();
            for id in owned {
                let _ = self.tree.set_owner(id, ClientId::SERVER);
            }
        } else if self.state.secondaries.contains(&c) {
            if self.state.pickup == Some(c) {
                self.release_inner();
            }
            self.state.secondaries.remove(&c);
            self.state.hand_map_visible.remove(&c);
            if let Some(a) = self.avatars.remove(&c) {
                let _ = self.tree.remove(a.entity);
            }
            for set in self.arrows.values_mut() {
                set.remove(&c);
            }
        } else {
            return Vec::new();
        }
        let mut snaps = self.snapshot_broadcast();
        snaps.retain(|o| o.to != c);
        snaps
    }

    fn marker_pose(&mut self, marker_id: &str, pose: Pose) -> OpResult {
        pose.validate()?;
        let now = self.now();
        let anchor = {
            let m = self.marker_mut(marker_id).ok_or_else(|| format!("unknown marker {marker_id:?}"))?;
            m.last_seen = Some(now);
            m.anchor
        };
        self.tree.set_local(anchor, pose)?;
        Ok(Vec::new())
    }

    fn entity_local_pose(&mut self, from: ClientId, p: EntityLocalPose) -> OpResult {
        let entity = self.tree.get(p.entity)?;
        match entity.kind {
            EntityKind::Avatar => {
                if p.parent != self.env_root {
                    return Err("avatar poses must be relative to the environment root".into());
                }
                self.set_city_pose(from, p.local)?;
            }
            EntityKind::Ooi => {
                let inst = self.oois.get(&p.entity).ok_or("unknown ooi")?;
                if inst.attachment == Attachment::StaticScene {
                    return Err("static scene OOI cannot be moved".into());
                }
                if entity.parent != Some(p.parent) {
                    return Err("parent mismatch".into());
                }
                self.tree.set_local(p.entity, p.local)?;
            }
            _ => return Err("entity is not replicated by clients".into()),
        }
        Ok(Vec::new())
    }

    /// Advances the simulated clock one step: keeps the held avatar centred
    /// in follow mode, dismisses arrows, and emits coalesced pose updates.
    pub fn tick(&mut self) -> Vec<Outbound> {
        self.tick += 1;
        if self.state.pickup.is_some() && self.state.camera_mode == CameraMode::FollowSecondary {
            let _ = self.recenter_environment();
        }
        let mut out = self.update_arrows();
        out.extend(self.replicate_changes());
        out
    }

    fn replicate_changes(&mut self) -> Vec<Outbound> {
        let mut out = Vec::new();
        let primary_now = self.primary_pose_map();
        if let Some(p) = self.state.primary {
            for (id, (parent, local)) in &primary_now {
                if self.sent_primary.get(id) == Some(&(*parent, *local)) {
                    continue;
                }
                let body = match self.markers.iter().find(|m| m.anchor == *id) {
                    Some(m) => Body::MarkerPose { marker_id: m.marker_id.clone(), pose: *local },
                    None => match parent {
                        Some(parent) => Body::EntityLocalPose(EntityLocalPose {
                            entity: *id,
                            parent: *parent,
                            local: *local,
                        }),
                        None => continue,
                    },
                };
                out.push(self.server_msg(p, body));
            }
        }
        self.sent_primary = primary_now;

        let secondary_now = self.secondary_pose_map();
        let secondaries: Vec<_> = self.state.secondaries.iter().copied().collect();
        if !secondaries.is_empty() {
            let changed: Vec<_> = secondary_now
                .iter()
                .filter(|(id, v)| self.sent_secondary.get(id) != Some(v))
                .filter_map(|(id, (parent, local))| {
                    parent.map(|parent| EntityLocalPose { entity: *id, parent, local: *local })
                })
                .collect();
            for p in changed {
                for c in &secondaries {
                    out.push(self.server_msg(*c, Body::EntityLocalPose(p.clone())));
                }
            }
        }
        self.sent_secondary = secondary_now;
        out
    }

    fn sync_sent_maps(&mut self) {
        self.sent_primary = self.primary_pose_map();
        self.sent_secondary = self.secondary_pose_map();
    }

    fn primary_pose_map(&self) -> PoseMap {
        self.tree.entities().map(|e| (e.id, (e.parent, e.local))).collect()
    }

    /// Entity poses as secondaries see them: everything relative to the
    /// environment root, which is their world frame.
    pub fn secondary_pose_map(&self) -> PoseMap {
        let mut map = PoseMap::new();
        map.insert(self.env_root, (None, Pose::IDENTITY));
        let mut stack: Vec<EntityId> = self.tree.children(self.env_root).collect();
        while let Some(id) = stack.pop() {
            if let Ok(e) = self.tree.get(id) {
                map.insert(id, (e.parent, e.local));
                stack.extend(self.tree.children(id));
            }
        }
        for a in self.avatars.values() {
            map.insert(a.entity, (Some(self.env_root), a.city_pose));
        }
        for (id, inst) in &self.oois {
            if matches!(inst.attachment, Attachment::Tangible { .. }) {
                if let Ok(p) = replicate_tangible_ooi(&self.tree, *id, self.env_root) {
                    map.insert(*id, (Some(p.parent), p.local));
                }
            }
        }
        map
    }

    /// City-frame pose of an entity as replicated to secondaries.
    pub fn city_pose_of(&self, id: EntityId) -> Option<Pose> {
        let map = self.secondary_pose_map();
        let mut cur = Some(id);
        let mut chain = Vec::new();
        while let Some(c) = cur {
            let (parent, local) = map.get(&c)?;
            chain.push(*local);
            cur = *parent;
        }
        Some(chain.iter().rev().fold(Pose::IDENTITY, |acc, l| compose(&acc, l)))
    }

    fn base_snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            time: self.now(),
            tick: self.tick,
            env_root: self.env_root,
            session: SessionView {
                primary: self.state.primary,
                secondaries: self.state.secondaries.iter().copied().collect(),
                hand_map_visible: self.state.hand_map_visible.clone(),
                controls: Some(ControlsView {
                    pickup: self.state.pickup,
                    camera_mode: self.state.camera_mode,
                    env_scale: self.state.env_scale,
                    voice_on: self.state.voice_on,
                }),
            },
            entities: BTreeMap::new(),
            augmentation: Vec::new(),
            oois: self
                .oois
                .iter()
                .map(|(id, o)| {
                    (
                        *id,
                        OoiView {
                            catalog_id: o.catalog_id.clone(),
                            attachment: o.attachment.clone(),
                            highlighted: o.highlighted,
                            scale_factor: o.scale_factor,
                        },
                    )
                })
                .collect(),
            avatars: self
                .avatars
                .iter()
                .map(|(c, a)| (*c, AvatarView { entity: a.entity, city_pose: a.city_pose }))
                .collect(),
            arrows: self
                .arrows
                .iter()
                .map(|(id, set)| (*id, set.iter().copied().collect()))
                .collect(),
            pois: self.pois.clone(),
        }
    }

    /// Full authoritative snapshot (primary view; canonical for hashing).
    pub fn snapshot(&self) -> StateSnapshot {
        let mut s = self.base_snapshot();
        s.entities = self
            .tree
            .entities()
            .map(|e| {
                (
                    e.id,
                    EntityView {
                        kind: e.kind,
                        parent: e.parent,
                        local: e.local,
                        owner: e.owner,
                        visible: e.visible,
                        label: e.label.clone(),
                    },
                )
            })
            .collect();
        s.augmentation = self
            .markers
            .iter()
            .map(|m| AugmentationView {
                marker_id: m.marker_id.clone(),
                prop_kind: m.prop_kind,
                anchor: m.anchor,
                scaler: m.scaler,
                tracked: self.marker_tracked(m),
                last_seen: m.last_seen,
                attached_ooi: m.attached_ooi,
            })
            .collect();
        s
    }

    /// What a secondary is sent: the environment subtree in its own frame.
    pub fn secondary_view(&self) -> StateSnapshot {
        let mut s = self.base_snapshot();
        if !self.cfg.notify_secondary_pickup {
            s.session.controls = None;
        }
        for (id, (parent, local)) in self.secondary_pose_map() {
            let Ok(e) = self.tree.get(id) else { continue };
            s.entities.insert(
                id,
                EntityView {
                    kind: e.kind,
                    parent,
                    local,
                    owner: e.owner,
                    visible: true,
                    label: e.label.clone(),
                },
            );
        }
        s
    }

    pub fn state_hash(&self) -> String {
        self.snapshot().hash()
    }

    /// Audits every cross-module invariant; used by tests after each event.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.tree.check_invariants()?;
        let st = &self.state;
        if let Some(p) = st.primary {
            if st.secondaries.contains(&p) {
                return Err("primary is also a secondary".into());
            }
        }
        if let Some(c) = st.pickup {
            if !st.secondaries.contains(&c) {
                return Err("pickup is not a secondary".into());
            }
        }
        if !(st.env_scale >= self.cfg.env_scale_min && st.env_scale <= self.cfg.env_scale_max) {
            return Err(format!("env_scale {} out of range", st.env_scale));
        }
        if self.avatars.keys().copied().collect::<BTreeSet<_>>() != st.secondaries {
            return Err("avatar set differs from secondaries".into());
        }
        let (map_scaler, shovel_scaler) = (self.map_hub().scaler, self.shovel().scaler);
        for (c, a) in &self.avatars {
            let parent = self.tree.get(a.entity)?.parent;
            let expected = if st.pickup == Some(*c) { shovel_scaler } else { map_scaler };
            if parent != Some(expected) {
                return Err(format!("avatar of {c} has parent {parent:?}, expected {expected}"));
            }
            if self.tree.get(a.entity)?.owner != *c {
                return Err(format!("avatar of {c} not owned by it"));
            }
        }
        if let Some(c) = st.pickup {
            if st.camera_mode == CameraMode::FollowSecondary {
                let local = self.tree.get(self.avatars[&c].entity)?.local;
                if local.position.norm() >= 1e-6 {
                    return Err(format!("held avatar off-centre by {}", local.position.norm()));
                }
            }
        }
        let mut seen_markers = BTreeSet::new();
        for m in &self.markers {
            if !seen_markers.insert(&m.marker_id) {
                return Err(format!("duplicate marker {}", m.marker_id));
            }
            if let Some(o) = m.attached_ooi {
                match self.oois.get(&o).map(|i| &i.attachment) {
                    Some(Attachment::Tangible { marker_id }) if *marker_id == m.marker_id => {}
                    _ => return Err(format!("marker {} attachment mismatch", m.marker_id)),
                }
            }
        }
        for (id, inst) in &self.oois {
            let parent = self.tree.get(*id)?.parent;
            let ok = match &inst.attachment {
                Attachment::Tangible { marker_id } => {
                    let m = self.marker(marker_id).ok_or("ooi on unknown marker")?;
                    parent == Some(m.scaler) && m.attached_ooi == Some(*id)
                }
                Attachment::LockedInEnvironment | Attachment::StaticScene => parent == Some(self.env_root),
            };
            if !ok {
                return Err(format!("ooi {id} attachment inconsistent with parent {parent:?}"));
            }
        }
        for ooi in self.arrows.keys() {
            if !self.oois.get(ooi).is_some_and(|o| o.highlighted) {
                return Err(format!("arrows for non-highlighted ooi {ooi}"));
            }
        }
        let env_roots = self.tree.entities().filter(|e| e.kind == EntityKind::EnvironmentRoot).count();
        if env_roots != 1 {
            return Err(format!("{env_roots} environment roots"));
        }
        Ok(())
    }
}
