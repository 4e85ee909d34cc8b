// SPDX-License-Identifier: Apache-2.0

//! Checks shared by the integration suites and the acceptance runner.
//! Each returns a short summary on success and a reason on failure.

#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tourcast_core::harness::record::replay;
use tourcast_core::harness::{load_scenario_file, run_scenario};
use tourcast_core::pose::{approx_eq, compose, to_local, Pose};
use tourcast_core::protocol::{authorize, Body, InteractionCommand, Message, OwnershipTable, Roles};
use tourcast_core::replica::ClientReplica;
use tourcast_core::scene_graph::{EntityKind, FrameTree};
use tourcast_core::session::{Outbound, Session};
use tourcast_core::snapshot::{CameraMode, Role};
use tourcast_core::tracking::{load_script, TrackingSim};
use tourcast_core::ui_geometry::{radial_button_layout, LayoutSpec};
use tourcast_core::world::{map_hub_position, Poi, World, WorldDoc};
use tourcast_core::{ClientId, EntityId, SessionConfig};

pub type Check = Result<String, String>;
pub type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn test_city() -> World {
    World::from_json(&std::fs::read_to_string(fixture("test_city.json")).unwrap()).unwrap()
}

// ---------------------------------------------------------------- helpers

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    loop {
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if q.norm() > 0.1 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

pub fn random_pose(rng: &mut impl Rng, uniform: bool) -> Pose {
    let position = Vector3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
    let scale = if uniform {
        Vector3::repeat(rng.gen_range(0.2..3.0))
    } else {
        Vector3::new(rng.gen_range(0.2..3.0), rng.gen_range(0.2..3.0), rng.gen_range(0.2..3.0))
    };
    Pose::new(position, random_rotation(rng), scale)
}

/// Random forest whose nodes sit at depth ≤ `max_depth` (roots have depth 1).
pub fn random_tree(rng: &mut impl Rng, nodes: usize, max_depth: usize, uniform: bool) -> (FrameTree, Vec<EntityId>) {
    let mut tree = FrameTree::new();
    let mut ids: Vec<EntityId> = Vec::new();
    let mut depth: BTreeMap<EntityId, usize> = BTreeMap::new();
    for i in 0..nodes {
        let candidates: Vec<EntityId> = ids.iter().copied().filter(|id| depth[id] < max_depth).collect();
        let parent = if candidates.is_empty() || rng.gen_bool(0.15) {
            None
        } else {
            Some(candidates[rng.gen_range(0..candidates.len())])
        };
        let id = tree
            .insert(EntityKind::Ooi, parent, random_pose(rng, uniform), ClientId::SERVER, format!("n{i}"))
            .unwrap();
        depth.insert(id, parent.map_or(1, |p| depth[&p] + 1));
        ids.push(id);
    }
    (tree, ids)
}

pub fn matrix_oracle(tree: &FrameTree, id: EntityId) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    let mut cur = Some(id);
    while let Some(c) = cur {
        let e = tree.get(c).unwrap();
        m = e.local.to_matrix() * m;
        cur = e.parent;
    }
    m
}

fn within_world_tolerance(a: &Pose, b: &Pose) -> bool {
    let pos = (a.position - b.position).iter().all(|d| d.abs() < 1e-9);
    let rot = a.rotation.coords.dot(&b.rotation.coords).abs() >= 1.0 - 1e-9;
    let scale = a.scale.iter().zip(b.scale.iter()).all(|(x, y)| ((x - y) / y).abs() < 1e-9);
    pos && rot && scale
}

/// Test driver around an in-process session: keeps per-client sequence
/// numbers and mirrors every outbound message into a per-client replica.
pub struct Driver {
    pub s: Session,
    seqs: BTreeMap<ClientId, u64>,
    pub replicas: BTreeMap<ClientId, ClientReplica>,
}

impl Driver {
    pub fn new(world: World, cfg: SessionConfig) -> Self {
        Driver { s: Session::new(world, cfg).unwrap(), seqs: BTreeMap::new(), replicas: BTreeMap::new() }
    }

    pub fn deliver(&mut self, out: &[Outbound]) {
        for o in out {
            self.replicas.entry(o.to).or_default().apply(&o.msg.body);
        }
    }

    pub fn send(&mut self, from: ClientId, body: Body) -> Vec<Outbound> {
        let seq = self.seqs.entry(from).or_insert(0);
        *seq += 1;
        let out = self.s.handle(from, Message { seq: *seq, sender: from, body });
        self.deliver(&out);
        out
    }

    pub fn join(&mut self, role: Role) -> ClientId {
        let c = self.s.connect();
        let out = self.send(c, Body::Join { role });
        assert!(error_of(&out).is_none(), "join failed: {:?}", error_of(&out));
        c
    }

    pub fn tick(&mut self) {
        let out = self.s.tick();
        self.deliver(&out);
    }

    pub fn ooi_by_catalog(&self, id: &str) -> Option<EntityId> {
        self.s.oois().iter().find(|(_, o)| o.catalog_id == id).map(|(k, _)| *k)
    }
}

pub fn error_of(out: &[Outbound]) -> Option<String> {
    out.iter().find_map(|o| match &o.msg.body {
        Body::Error { reason, .. } => Some(reason.clone()),
        _ => None,
    })
}

/// World with POIs at chosen city x-positions, for placing avatars precisely.
pub fn world_with_pois(xs: &[f64]) -> World {
    let mut doc: WorldDoc = World::minimal().doc().clone();
    for (i, x) in xs.iter().enumerate() {
        doc.pois.push(Poi { poi_id: format!("p{i}"), name: format!("P{i}"), spawn_pose: Pose::from_position(*x, 0.0, 0.0) });
    }
    World::from_doc(doc).unwrap()
}

fn place_secondaries(d: &mut Driver, map_xs: &[f64]) -> Vec<ClientId> {
    let scale = d.s.world().calibration().map_scale;
    let mut cs = Vec::new();
    for i in 0..map_xs.len() {
        let c = d.join(Role::Secondary);
        d.send(c, Body::HandMap { secondary: c, visible: true });
        let out = d.send(c, Body::TeleportPoi { secondary: c, poi_id: format!("p{i}") });
        assert!(error_of(&out).is_none());
        let _ = scale;
        cs.push(c);
    }
    cs
}

// ---------------------------------------------------------------- criteria

pub fn frame_math() -> Check {
    let started = Instant::now();
    let mut r = rng(0x5eed_f4a3);

    // reparenting keeps every node's world pose
    let mut reparents = 0;
    while reparents < 1000 {
        let (mut tree, ids) = random_tree(&mut r, 10, 6, false);
        let before: Vec<Pose> = ids.iter().map(|id| tree.world_pose(*id).unwrap()).collect();
        let id = ids[r.gen_range(0..ids.len())];
        let target = if r.gen_bool(0.1) { None } else { Some(ids[r.gen_range(0..ids.len())]) };
        if target.is_some_and(|t| tree.is_ancestor_or_self(id, t)) {
            ensure!(tree.reparent_preserving_world(id, target).is_err(), "cycle not rejected");
            continue;
        }
        tree.reparent_preserving_world(id, target).map_err(|e| e.to_string())?;
        for (i, n) in ids.iter().enumerate() {
            let after = tree.world_pose(*n).unwrap();
            ensure!(within_world_tolerance(&after, &before[i]), "reparent moved {n}: {:?} vs {:?}", after, before[i]);
        }
        tree.check_invariants()?;
        reparents += 1;
    }

    // compose and to_local are inverses
    for _ in 0..1000 {
        let uniform = r.gen_bool(0.5);
        let parent = random_pose(&mut r, uniform);
        let world = random_pose(&mut r, false);
        let local = to_local(&world, &parent).map_err(|e| e.to_string())?;
        ensure!(within_world_tolerance(&compose(&parent, &local), &world), "compose∘to_local drifted");
        let l2 = random_pose(&mut r, false);
        let back = to_local(&compose(&parent, &l2), &parent).map_err(|e| e.to_string())?;
        ensure!(approx_eq(&back, &l2, 1e-9), "to_local∘compose drifted");
    }

    // world_pose matches the homogeneous matrix product (uniform scales)
    let mut oracle_cases = 0;
    for _ in 0..200 {
        let (tree, ids) = random_tree(&mut r, 12, 6, true);
        for id in ids {
            let got = tree.world_pose(id).unwrap().to_matrix();
            let want = matrix_oracle(&tree, id);
            let err = (got - want).abs().max();
            let mag = want.abs().max().max(1.0);
            ensure!(err <= 1e-9 * mag, "matrix oracle mismatch {err} at {id}");
            oracle_cases += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    ensure!(elapsed < 5.0, "frame-math suite took {elapsed:.2}s");
    Ok(format!("1000 reparents, 2000 round-trips, {oracle_cases} oracle nodes in {elapsed:.2}s"))
}

pub fn radial_layout() -> Check {
    let mut points = 0;
    for n in 1..=12usize {
        for radius in [5.0, 10.0, 12.0] {
            for (w, h) in [(1000.0, 500.0), (1920.0, 1080.0)] {
                let spec = LayoutSpec { radius_pct: radius, screen_w: w, screen_h: h, button_count: n };
                let got = radial_button_layout(&spec);
                ensure!(got.len() == n, "n={n}: {} points", got.len());
                let (a, b) = (radius * w / 100.0, radius * h / 100.0);
                for (i, (x, y)) in got.iter().enumerate() {
                    let ex = radius * w / 100.0 * (2.0 * i as f64 * std::f64::consts::PI / n as f64).cos();
                    let ey = radius * h / 100.0 * (2.0 * i as f64 * std::f64::consts::PI / n as f64).sin();
                    ensure!((x - ex).abs() <= 1e-9 && (y - ey).abs() <= 1e-9, "n={n} i={i} mismatch");
                    let on = (x / a).powi(2) + (y / b).powi(2);
                    ensure!((on - 1.0).abs() <= 1e-9, "n={n} i={i} off ellipse by {}", on - 1.0);
                    points += 1;
                }
            }
        }
    }
    Ok(format!("{points} points match formula and lie on the ellipse"))
}

pub fn pickup_boundary() -> Check {
    let cfg = SessionConfig::default();
    let t = cfg.pickup_threshold;
    let ms = World::minimal().calibration().map_scale;
    // minimal world: map anchor at origin, identity offset, so city x → map x·ms
    let at = |map_x: f64| map_x / ms;

    let mut picked = Vec::new();
    for factor in [0.99, 1.01] {
        let mut d = Driver::new(world_with_pois(&[at(factor * t)]), cfg.clone());
        let p = d.join(Role::Primary);
        place_secondaries(&mut d, &[factor * t]);
        d.send(p, Body::Pickup { shovel_pose_on_map: Some(Pose::IDENTITY) });
        picked.push(d.s.state().pickup.is_some());
    }
    ensure!(picked == [true, false], "0.99t/1.01t picked: {picked:?}");

    let mut d = Driver::new(world_with_pois(&[at(0.7 * t), at(0.3 * t)]), cfg.clone());
    let p = d.join(Role::Primary);
    let cs = place_secondaries(&mut d, &[0.7 * t, 0.3 * t]);
    d.send(p, Body::Pickup { shovel_pose_on_map: Some(Pose::IDENTITY) });
    ensure!(d.s.state().pickup == Some(cs[1]), "nearest (0.3t) not chosen");

    let mut d = Driver::new(world_with_pois(&[at(0.5 * t), at(-0.5 * t)]), cfg.clone());
    let p = d.join(Role::Primary);
    let cs = place_secondaries(&mut d, &[0.5 * t, -0.5 * t]);
    d.send(p, Body::Pickup { shovel_pose_on_map: Some(Pose::IDENTITY) });
    ensure!(d.s.state().pickup == Some(cs[0].min(cs[1])), "tie not broken by lowest id");

    // round trip
    let mut d = Driver::new(world_with_pois(&[at(0.2 * t)]), cfg);
    let p = d.join(Role::Primary);
    let c = place_secondaries(&mut d, &[0.2 * t])[0];
    let e = d.s.avatar(c).unwrap().entity;
    let city = d.s.avatar(c).unwrap().city_pose;
    let world = d.s.tree().world_pose(e).unwrap();
    d.send(p, Body::Pickup { shovel_pose_on_map: Some(Pose::IDENTITY) });
    ensure!(d.s.state().pickup == Some(c), "round-trip pickup failed");
    for _ in 0..5 {
        d.tick();
    }
    d.send(p, Body::Release);
    ensure!(approx_eq(&d.s.avatar(c).unwrap().city_pose, &city, 1e-6), "city pose changed");
    ensure!(approx_eq(&d.s.tree().world_pose(e).unwrap(), &world, 1e-6), "map pose changed");
    Ok("0.99t picked, 1.01t not, nearest wins, tie → lowest id, round trip within 1e-6".into())
}

pub fn camera_modes() -> Check {
    let world = test_city();
    let poi_ids: Vec<String> = world.pois().iter().map(|p| p.poi_id.clone()).collect();
    let mut d = Driver::new(world, SessionConfig::default());
    let p = d.join(Role::Primary);
    let c = d.join(Role::Secondary);
    d.send(c, Body::HandMap { secondary: c, visible: true });
    d.send(p, Body::Pickup { shovel_pose_on_map: Some(Pose::from_position(-0.1, 0.0, 0.05)) });
    ensure!(d.s.state().pickup == Some(c), "pickup failed");
    let mut r = rng(77);
    let mut worst: f64 = 0.0;
    let avatar = d.s.avatar(c).unwrap().entity;
    let teleport = |d: &mut Driver, r: &mut ChaCha8Rng| {
        if r.gen_bool(0.2) {
            let poi = poi_ids[r.gen_range(0..poi_ids.len())].clone();
            d.send(c, Body::TeleportPoi { secondary: c, poi_id: poi });
        } else {
            let cur = d.s.avatar(c).unwrap().city_pose.position;
            let dir = Vector3::new(r.gen_range(-1.0..1.0), 0.0, r.gen_range(-1.0..1.0)).normalize();
            let target = cur + dir * r.gen_range(0.0..9.9);
            d.send(c, Body::TeleportShort { secondary: c, target: target.into() });
        }
    };
    for i in 0..100 {
        teleport(&mut d, &mut r);
        if i % 10 == 0 {
            d.send(p, Body::SetScale { value: r.gen_range(0.0005..0.01) });
        }
        d.tick();
        let n = d.s.tree().get(avatar).unwrap().local.position.norm();
        worst = worst.max(n);
        ensure!(n < 1e-6, "follow mode: avatar off-centre by {n} after teleport {i}");
    }

    d.send(p, Body::SetCameraMode { mode: CameraMode::LockedToEnvironment });
    let env = d.s.env_root();
    let offset = d.s.tree().get(env).unwrap().local;
    for _ in 0..100 {
        teleport(&mut d, &mut r);
        d.tick();
        ensure!(d.s.tree().get(env).unwrap().local == offset, "locked mode: environment offset moved");
    }
    Ok(format!("100 follow teleports (max offset {worst:.1e}), 100 locked teleports with constant offset"))
}

/// Random client message drawn from realistic and hostile value pools.
pub fn random_body(r: &mut ChaCha8Rng, d: &Driver, clients: &[ClientId]) -> Body {
    let ids: Vec<EntityId> = d.s.tree().entities().map(|e| e.id).collect();
    let entity = |r: &mut ChaCha8Rng| {
        if r.gen_bool(0.9) && !ids.is_empty() {
            ids[r.gen_range(0..ids.len())]
        } else {
            EntityId(r.gen_range(0..500))
        }
    };
    let client = |r: &mut ChaCha8Rng| {
        if r.gen_bool(0.9) {
            clients[r.gen_range(0..clients.len())]
        } else {
            ClientId(r.gen_range(0..20))
        }
    };
    let float = |r: &mut ChaCha8Rng| match r.gen_range(0..10) {
        0 => f64::NAN,
        1 => f64::INFINITY,
        2 => -r.gen_range(0.0..1e6),
        3 => 0.0,
        _ => r.gen_range(-0.05..0.05) * 10f64.powi(r.gen_range(0..4)),
    };
    let pose = |r: &mut ChaCha8Rng| {
        if r.gen_bool(0.05) {
            Pose { position: Vector3::new(f64::NAN, 0.0, 0.0), ..Pose::IDENTITY }
        } else if r.gen_bool(0.05) {
            Pose { scale: Vector3::new(0.0, 1.0, 1.0), ..Pose::IDENTITY }
        } else {
            let mut p = random_pose(r, true);
            p.position *= 0.05;
            p
        }
    };
    let pick = |r: &mut ChaCha8Rng, xs: &[&str]| xs[r.gen_range(0..xs.len())].to_string();
    let markers = ["map_hub", "pickup_shovel", "tangible_1", "tangible_2", "tangible_3", "ghost"];
    let catalog = ["porta_nigra", "porta_nigra_church", "column", "statue", "marker_stone", "basilica", "dragon"];
    let pois = ["forum", "porta_nigra", "basilica", "harbour", "atlantis"];
    match r.gen_range(0..22) {
        0 => Body::Join { role: if r.gen_bool(0.5) { Role::Primary } else { Role::Secondary } },
        1 | 2 => Body::MarkerPose { marker_id: pick(r, &markers), pose: pose(r) },
        3 | 4 => Body::EntityLocalPose(tourcast_core::protocol::EntityLocalPose {
            entity: entity(r),
            parent: entity(r),
            local: pose(r),
        }),
        5 => Body::Pickup { shovel_pose_on_map: if r.gen_bool(0.5) { Some(pose(r)) } else { None } },
        6 => Body::Release,
        7 => Body::SetScale { value: float(r) },
        8 => Body::SetCameraMode {
            mode: if r.gen_bool(0.5) { CameraMode::FollowSecondary } else { CameraMode::LockedToEnvironment },
        },
        9 => Body::VoiceToggle { on: r.gen_bool(0.5) },
        10 => Body::AudioFrame { data: (0..r.gen_range(0..16)).map(|_| r.gen()).collect() },
        11 => Body::TeleportShort { secondary: client(r), target: [float(r), 0.0, float(r)] },
        12 => Body::TeleportPoi { secondary: client(r), poi_id: pick(r, &pois) },
        13 => Body::HandMap { secondary: client(r), visible: r.gen_bool(0.7) },
        14 => Body::SelectOoi { ooi: entity(r) },
        15 | 16 => {
            let command = match r.gen_range(0..8) {
                0 => InteractionCommand::Text,
                1 => InteractionCommand::Video,
                2 => InteractionCommand::Scale { factor: float(r) },
                3 => InteractionCommand::Highlight { on: r.gen_bool(0.6) },
                4 => InteractionCommand::Change { target: pick(r, &catalog) },
                5 => InteractionCommand::Lock,
                6 => InteractionCommand::Unlock { tangible: pick(r, &markers) },
                _ => InteractionCommand::Delete,
            };
            Body::Interaction { ooi: entity(r), command }
        }
        17 => Body::SpawnOoi { tangible: pick(r, &markers), catalog_id: pick(r, &catalog) },
        18 => Body::AttachOoi { tangible: pick(r, &markers), ooi: entity(r) },
        19 => Body::QuerySnapshot,
        20 => Body::Leave,
        _ => Body::Notice { message: "forged".into() },
    }
}

pub struct FuzzStats {
    pub messages: usize,
    pub unauthorized: usize,
    pub rejected: usize,
    pub accepted: usize,
}

/// Sends `n` random messages from random (often wrong) senders.
pub fn ownership_fuzz(n: usize, seed: u64) -> Result<FuzzStats, String> {
    let mut d = Driver::new(test_city(), SessionConfig::default());
    let p = d.join(Role::Primary);
    let s1 = d.join(Role::Secondary);
    let s2 = d.join(Role::Secondary);
    let lurker = d.s.connect();
    let clients = [p, s1, s2, lurker];
    d.send(s1, Body::HandMap { secondary: s1, visible: true });
    d.send(p, Body::Pickup { shovel_pose_on_map: Some(Pose::from_position(-0.1, 0.0, 0.05)) });

    let mut r = rng(seed);
    let mut seqs: BTreeMap<ClientId, u64> = BTreeMap::new();
    let mut stats = FuzzStats { messages: 0, unauthorized: 0, rejected: 0, accepted: 0 };
    let mut hash = d.s.state_hash();
    for i in 0..n {
        if r.gen_bool(0.02) {
            d.tick();
            hash = d.s.state_hash();
        }
        let from = clients[r.gen_range(0..clients.len())];
        let sender = match r.gen_range(0..20) {
            0 => clients[r.gen_range(0..clients.len())],
            1 => ClientId(0),
            _ => from,
        };
        let seq = seqs.entry(from).or_insert(0);
        if r.gen_bool(0.97) {
            *seq += 1;
        }
        let body = random_body(&mut r, &d, &clients);
        let msg = Message { seq: *seq, sender, body };
        let state = d.s.state();
        let roles = Roles { primary: state.primary, secondaries: &state.secondaries };
        let unauthorized = authorize(&OwnershipTable::from_tree(d.s.tree()), roles, from, &msg).is_err();
        let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| d.s.handle(from, msg.clone())))
            .map_err(|_| format!("panic on message {i}: {msg:?}"))?;
        d.deliver(&out);
        d.s.check_invariants().map_err(|e| format!("invariant broken by message {i} ({msg:?}): {e}"))?;
        let after = d.s.state_hash();
        let rejected = error_of(&out).is_some_and(|_| out.iter().all(|o| o.to == from));
        if unauthorized {
            stats.unauthorized += 1;
            ensure!(after == hash, "unauthorized message {i} mutated state: {msg:?}");
        }
        if rejected {
            stats.rejected += 1;
            ensure!(after == hash, "rejected message {i} mutated state: {msg:?}");
        } else {
            stats.accepted += 1;
        }
        hash = after;
        stats.messages += 1;
        // keep the session interesting: bring roles back if the fuzz removed them
        if d.s.state().primary.is_none() && r.gen_bool(0.05) {
            let c = d.s.connect();
            seqs.insert(c, 1);
            d.s.handle(c, Message { seq: 1, sender: c, body: Body::Join { role: Role::Primary } });
            hash = d.s.state_hash();
        }
    }
    Ok(stats)
}

pub fn ownership_enforcement() -> Check {
    let stats = ownership_fuzz(100_000, 0xf022)?;
    ensure!(stats.unauthorized > 10_000, "fuzz produced too few unauthorized messages ({})", stats.unauthorized);
    Ok(format!(
        "{} messages: {} unauthorized, {} rejected, 0 mutations, 0 panics",
        stats.messages, stats.unauthorized, stats.rejected
    ))
}

pub fn staged_tour() -> Check {
    let started = Instant::now();
    let loaded = load_scenario_file(&fixture("staged_tour.scenario.json")).map_err(|e| e.to_string())?;
    let run = run_scenario(&loaded).map_err(|e| e.to_string())?;
    ensure!(run.report.passed, "scenario failed: {:?}", run.report.failures);
    ensure!(run.report.simulated_seconds < 10.0, "took {} simulated seconds", run.report.simulated_seconds);
    let log = run.recorder.log_bytes();
    let first = replay(log.as_slice()).map_err(|e| e.to_string())?;
    let second = replay(log.as_slice()).map_err(|e| e.to_string())?;
    ensure!(first.hash == run.report.final_hash, "replay hash differs from live run");
    ensure!(first.hash == second.hash, "replays disagree");
    ensure!(first.snapshot.canonical_json() == run.recorder.session().snapshot().canonical_json(), "canonical text differs");
    let interactions: BTreeSet<&str> = loaded
        .scenario
        .steps
        .iter()
        .filter_map(|s| s.action.as_ref())
        .filter_map(|a| a.get("command").and_then(|c| c.get("kind")).or_else(|| a.get("type")))
        .filter_map(|v| v.as_str())
        .collect();
    for needed in [
        "TeleportShort", "TeleportPoi", "Pickup", "VoiceToggle", "Highlight", "Text", "Video", "SpawnOoi", "Scale",
        "Change", "Lock", "Unlock", "Delete", "Release",
    ] {
        ensure!(interactions.contains(needed), "scenario never exercises {needed}");
    }
    Ok(format!(
        "{} steps, {} assertions, {:.2}s simulated, {:.2}s wall, replay hash {}",
        run.report.steps,
        run.report.assertions,
        run.report.simulated_seconds,
        started.elapsed().as_secs_f64(),
        &first.hash[..12]
    ))
}

const LOSS_SCRIPT: &str = r#"{
  "schema": 1, "duration": 12,
  "markers": [
    {"marker_id": "map_hub", "waypoints": [{"t": 0, "pose": {"position": [0, 0, 0]}}]},
    {"marker_id": "pickup_shovel", "waypoints": [
      {"t": 0, "pose": {"position": [0.6, 0, 0]}},
      {"t": 0.5, "pose": {"position": [-0.1, 0, 0.04]}},
      {"t": 12, "pose": {"position": [-0.1, 0, 0.04]}}]},
    {"marker_id": "tangible_1", "waypoints": [
      {"t": 0, "pose": {"position": [0.4, 0, 0.3]}},
      {"t": 12, "pose": {"position": [0.5, 0, 0.4]}}]}
  ],
  "occlusions": [
    {"marker_id": "pickup_shovel", "start": 1.0, "duration": 3.0},
    {"marker_id": "tangible_1", "start": 6.0, "duration": 3.0}
  ]
}"#;

/// Steps the session and the tracking script together, feeding poses through the primary.
fn advance(d: &mut Driver, sim: &mut TrackingSim, p: ClientId, seconds: f64) {
    let dt = d.s.config().tick_dt();
    let steps = (seconds / dt).round() as usize;
    for _ in 0..steps {
        d.tick();
        for body in sim.step(dt) {
            d.send(p, body);
        }
        d.s.check_invariants().unwrap();
    }
}

pub fn tracking_loss() -> Check {
    let script = load_script(LOSS_SCRIPT).map_err(|e| e.to_string())?;
    let mut sim = TrackingSim::new(script);
    let mut d = Driver::new(test_city(), SessionConfig::default());
    let p = d.join(Role::Primary);
    let c = d.join(Role::Secondary);

    // shovel occluded from t=1: within the timeout pickup still works off the frozen pose
    advance(&mut d, &mut sim, p, 1.5);
    let frozen = d.s.tree().get(d.s.augmentation()[1].anchor).unwrap().local;
    let out = d.send(p, Body::Pickup { shovel_pose_on_map: None });
    ensure!(error_of(&out).is_none() && d.s.state().pickup == Some(c), "pickup during short loss failed: {:?}", error_of(&out));
    d.send(p, Body::Release);
    advance(&mut d, &mut sim, p, 2.0);
    ensure!(d.s.tree().get(d.s.augmentation()[1].anchor).unwrap().local == frozen, "anchor not frozen during loss");
    // t = 3.5: more than 2 s since the last shovel pose
    let h = d.s.state_hash();
    let out = d.send(p, Body::Pickup { shovel_pose_on_map: None });
    ensure!(error_of(&out).as_deref() == Some("marker not tracked"), "pickup after timeout: {:?}", error_of(&out));
    ensure!(d.s.state_hash() == h, "rejected pickup mutated state");

    // shovel back at t = 4
    advance(&mut d, &mut sim, p, 1.0);
    let out = d.send(p, Body::Pickup { shovel_pose_on_map: None });
    ensure!(d.s.state().pickup == Some(c), "pickup after recovery failed: {:?}", error_of(&out));

    // tangible manipulation: spawn, lock, then lose the tangible from t=6
    let out = d.send(p, Body::SpawnOoi { tangible: "tangible_1".into(), catalog_id: "column".into() });
    ensure!(error_of(&out).is_none(), "spawn failed: {:?}", error_of(&out));
    let col = d.ooi_by_catalog("column").unwrap();
    advance(&mut d, &mut sim, p, 1.2);
    d.send(p, Body::Interaction { ooi: col, command: InteractionCommand::Lock });
    advance(&mut d, &mut sim, p, 1.3);
    // t = 7.0: lost for 1 s, still inside the timeout
    ensure!(d.s.marker_tracked(&d.s.augmentation()[2]), "tangible reported lost too early");
    advance(&mut d, &mut sim, p, 1.5);
    // t ≈ 8.5: 2.5 s without a pose
    let h = d.s.state_hash();
    let out = d.send(p, Body::AttachOoi { tangible: "tangible_1".into(), ooi: col });
    ensure!(error_of(&out).as_deref() == Some("marker not tracked"), "reattach during loss: {:?}", error_of(&out));
    let out = d.send(p, Body::SpawnOoi { tangible: "tangible_1".into(), catalog_id: "statue".into() });
    ensure!(error_of(&out).as_deref() == Some("marker not tracked"), "spawn during loss: {:?}", error_of(&out));
    ensure!(d.s.state_hash() == h, "rejected actions mutated state");
    let snap = d.s.snapshot();
    ensure!(!snap.augmentation_by_marker("tangible_1").unwrap().tracked, "snapshot still reports tangible tracked");
    advance(&mut d, &mut sim, p, 1.0);
    ensure!(snap.augmentation_by_marker("pickup_shovel").unwrap().tracked, "shovel should be tracked");
    Ok("no crash; frozen anchors within 2 s; pickup/spawn/reattach rejected with \"marker not tracked\" after timeout".into())
}

fn compare_replica(d: &Driver, who: ClientId, secondary: bool) -> Result<(usize, f64), String> {
    let replica = d.replicas.get(&who).ok_or("no replica")?;
    let server_ids: Vec<EntityId> = if secondary {
        d.s.secondary_view().entities.keys().copied().collect()
    } else {
        d.s.tree().entities().map(|e| e.id).collect()
    };
    let replica_ids: BTreeSet<EntityId> = replica.entity_ids().collect();
    let mut worst: f64 = 0.0;
    for id in &server_ids {
        ensure!(replica_ids.contains(id), "client {who} is missing entity {id}");
        let server = if secondary { d.s.city_pose_of(*id).ok_or("no city pose")? } else { d.s.tree().world_pose(*id).unwrap() };
        let client = replica.world_pose(*id).ok_or_else(|| format!("client {who} cannot resolve {id}"))?;
        let err = (server.position - client.position).norm();
        worst = worst.max(err);
        ensure!(approx_eq(&server, &client, 1e-6), "client {who} disagrees on {id}: {err}");
    }
    ensure!(replica_ids.len() == server_ids.len(), "client {who} holds stale entities");
    Ok((server_ids.len(), worst))
}

pub fn sync_equivalence() -> Check {
    let mut d = Driver::new(test_city(), SessionConfig::default());
    let p = d.join(Role::Primary);
    let c = d.join(Role::Secondary);
    let c2 = d.join(Role::Secondary);
    d.send(c, Body::HandMap { secondary: c, visible: true });
    d.send(c, Body::TeleportPoi { secondary: c, poi_id: "porta_nigra".into() });
    let target = map_hub_position(d.s.world().calibration(), &d.s.avatar(c).unwrap().city_pose.position);
    d.send(p, Body::Pickup { shovel_pose_on_map: Some(Pose::from_position(target.x, 0.0, target.z)) });
    ensure!(d.s.state().pickup == Some(c), "pickup failed");
    ensure!(d.s.state().env_scale == 0.001, "env scale not 0.001");
    d.send(p, Body::MarkerPose { marker_id: "pickup_shovel".into(), pose: Pose::from_position(0.5, 0.8, 0.3) });
    d.send(p, Body::SpawnOoi { tangible: "tangible_1".into(), catalog_id: "column".into() });
    let col = d.ooi_by_catalog("column").unwrap();
    d.tick();

    // cross-frame case: tangible moved 0.1 m in the primary's frame → 100 m in the city
    let before = d.replicas[&c].world_pose(col).ok_or("secondary lacks OOI")?;
    let t1 = d.s.tree().get(d.s.augmentation()[2].anchor).unwrap().local;
    let moved = Pose { position: t1.position + Vector3::new(0.1, 0.0, 0.0), ..t1 };
    d.send(p, Body::MarkerPose { marker_id: "tangible_1".into(), pose: moved });
    d.tick();
    let after = d.replicas[&c].world_pose(col).unwrap();
    let shift = (after.position - before.position).norm();
    ensure!((shift - 100.0).abs() < 1e-6, "tangible shift of 0.1 m moved the OOI {shift} m in the city");

    // a stream of mixed updates, then drain
    let mut r = rng(4242);
    for i in 0..200 {
        match i % 5 {
            0 => {
                let cur = d.s.avatar(c).unwrap().city_pose.position;
                let target = cur + Vector3::new(r.gen_range(-5.0..5.0), 0.0, r.gen_range(-5.0..5.0));
                d.send(c, Body::TeleportShort { secondary: c, target: target.into() });
            }
            1 => {
                let pose = Pose::new(
                    Vector3::new(r.gen_range(0.3..0.6), r.gen_range(0.7..0.9), r.gen_range(0.2..0.4)),
                    random_rotation(&mut r),
                    Vector3::repeat(1.0),
                );
                d.send(p, Body::MarkerPose { marker_id: "tangible_1".into(), pose });
            }
            2 => {
                let pose = Pose::new(Vector3::new(r.gen_range(0.4..0.6), 0.8, 0.3), random_rotation(&mut r), Vector3::repeat(1.0));
                d.send(p, Body::MarkerPose { marker_id: "pickup_shovel".into(), pose });
            }
            3 => {
                let cur = d.s.avatar(c2).unwrap().city_pose.position;
                d.send(c2, Body::TeleportShort { secondary: c2, target: (cur + Vector3::new(1.0, 0.0, 0.0)).into() });
            }
            _ => d.tick(),
        }
    }
    d.send(p, Body::Interaction { ooi: col, command: InteractionCommand::Scale { factor: 3.0 } });
    d.tick();
    let (n_primary, e1) = compare_replica(&d, p, false)?;
    let (n_secondary, e2) = compare_replica(&d, c, true)?;
    let (_, e3) = compare_replica(&d, c2, true)?;
    Ok(format!(
        "primary {n_primary} entities, secondaries {n_secondary} entities; max error {:.1e}; 0.1 m tangible move = {shift:.6} m in city",
        e1.max(e2).max(e3)
    ))
}

/// One check per design-requirement row; each exercises the feature that row names.
pub fn dr_checks() -> Vec<Criterion> {
    vec![
        ("DR1.1", dr_voice),
        ("DR1.2", dr_pickup_shows_environment),
        ("DR1.3", dr_highlight_arrow),
        ("DR2.1", dr_interactions_and_oois),
        ("DR2.2", dr_text_video),
        ("DR2.3", dr_map_hub_and_shovel),
        ("DR2.4", dr_multiple_secondaries),
        ("DR3.1", dr_teleports),
        ("DR3.2", dr_camera_modes),
    ]
}

fn held() -> (Driver, ClientId, ClientId) {
    let mut d = Driver::new(test_city(), SessionConfig::default());
    let p = d.join(Role::Primary);
    let c = d.join(Role::Secondary);
    d.send(p, Body::Pickup { shovel_pose_on_map: Some(Pose::from_position(-0.1, 0.0, 0.05)) });
    assert_eq!(d.s.state().pickup, Some(c));
    (d, p, c)
}

pub fn dr_voice() -> Check {
    let (mut d, p, c) = held();
    d.send(p, Body::VoiceToggle { on: true });
    let out = d.send(p, Body::AudioFrame { data: b"guten tag".to_vec() });
    ensure!(out.len() == 1 && out[0].to == c, "primary audio not routed to held secondary");
    let out = d.send(c, Body::AudioFrame { data: b"hallo".to_vec() });
    ensure!(out.len() == 1 && out[0].to == p, "secondary audio not routed to primary");
    d.send(p, Body::VoiceToggle { on: false });
    ensure!(d.send(p, Body::AudioFrame { data: vec![1] }).is_empty(), "audio routed while voice off");
    Ok("voice toggle routes audio both ways".into())
}

pub fn dr_pickup_shows_environment() -> Check {
    let (d, _, c) = held();
    let env = d.s.tree().get(d.s.env_root()).unwrap();
    ensure!(env.visible, "environment hidden after pickup");
    let avatar = d.s.tree().get(d.s.avatar(c).unwrap().entity).unwrap();
    ensure!(avatar.parent == Some(d.s.augmentation()[1].scaler), "avatar not on the shovel");
    Ok("picked secondary sits on the shovel with its environment visible".into())
}

pub fn dr_highlight_arrow() -> Check {
    let (mut d, p, c) = held();
    let b = d.ooi_by_catalog("basilica").unwrap();
    d.send(p, Body::Interaction { ooi: b, command: InteractionCommand::Highlight { on: true } });
    ensure!(d.s.snapshot().arrows[&b] == vec![c], "arrow not created");
    d.send(c, Body::HandMap { secondary: c, visible: true });
    d.send(c, Body::TeleportPoi { secondary: c, poi_id: "basilica".into() });
    d.tick();
    ensure!(d.s.snapshot().arrows[&b].is_empty(), "arrow not dismissed");
    Ok("highlight creates an arrow that clears near and facing the OOI".into())
}

pub fn dr_interactions_and_oois() -> Check {
    let (mut d, p, _) = held();
    d.send(p, Body::SpawnOoi { tangible: "tangible_1".into(), catalog_id: "column".into() });
    let col = d.ooi_by_catalog("column").ok_or("spawn failed")?;
    for command in [
        InteractionCommand::Scale { factor: 2.0 },
        InteractionCommand::Change { target: "statue".into() },
        InteractionCommand::Lock,
        InteractionCommand::Delete,
    ] {
        let out = d.send(p, Body::Interaction { ooi: col, command: command.clone() });
        ensure!(error_of(&out).is_none(), "{command:?} rejected: {:?}", error_of(&out));
    }
    ensure!(d.s.ooi(col).is_none(), "OOI survived delete");
    Ok("tangible spawn, scale, change, lock, delete".into())
}

pub fn dr_text_video() -> Check {
    let (mut d, p, c) = held();
    let pn = d.ooi_by_catalog("porta_nigra").unwrap();
    for command in [InteractionCommand::Text, InteractionCommand::Video] {
        let out = d.send(p, Body::Interaction { ooi: pn, command });
        ensure!(out.iter().any(|o| o.to == c && matches!(o.msg.body, Body::Panel { .. })), "no panel for secondary");
    }
    Ok("text and video panels reach the held secondary".into())
}

pub fn dr_map_hub_and_shovel() -> Check {
    let mut d = Driver::new(test_city(), SessionConfig::default());
    let p = d.join(Role::Primary);
    ensure!(d.s.snapshot().augmentation.len() == 5, "augmentation entities missing");
    let c = d.join(Role::Secondary);
    let e = d.s.avatar(c).unwrap().entity;
    let on_map = d.s.tree().pose_in_frame(e, Some(d.s.augmentation()[0].anchor)).unwrap().position;
    let want = map_hub_position(d.s.world().calibration(), &d.s.avatar(c).unwrap().city_pose.position);
    ensure!((on_map - want).norm() < 1e-12, "avatar not at its map position");
    d.send(p, Body::Pickup { shovel_pose_on_map: Some(Pose::from_position(want.x, want.y, want.z)) });
    ensure!(d.s.state().pickup == Some(c), "shovel did not pick up");
    Ok("avatar shown on the Map-Hub and picked with the shovel".into())
}

pub fn dr_multiple_secondaries() -> Check {
    let mut d = Driver::new(test_city(), SessionConfig::default());
    d.join(Role::Primary);
    let cs: Vec<ClientId> = (0..3).map(|_| d.join(Role::Secondary)).collect();
    let map_scaler = d.s.augmentation()[0].scaler;
    for c in &cs {
        let e = d.s.avatar(*c).ok_or("avatar missing")?.entity;
        ensure!(d.s.tree().get(e).unwrap().parent == Some(map_scaler), "avatar {c} not on the Map-Hub");
    }
    Ok("three secondaries shown on the Map-Hub".into())
}

pub fn dr_teleports() -> Check {
    let mut d = Driver::new(test_city(), SessionConfig::default());
    let c = d.join(Role::Secondary);
    d.send(c, Body::TeleportShort { secondary: c, target: [3.0, 0.0, 0.0] });
    ensure!(d.s.avatar(c).unwrap().city_pose.position == Vector3::new(3.0, 0.0, 0.0), "short teleport failed");
    d.send(c, Body::HandMap { secondary: c, visible: true });
    d.send(c, Body::TeleportPoi { secondary: c, poi_id: "porta_nigra".into() });
    ensure!(d.s.avatar(c).unwrap().city_pose == d.s.world().poi("porta_nigra").unwrap().spawn_pose, "POI teleport failed");
    Ok("short and POI teleports".into())
}

pub fn dr_camera_modes() -> Check {
    let (mut d, p, c) = held();
    let e = d.s.avatar(c).unwrap().entity;
    d.send(c, Body::TeleportShort { secondary: c, target: [5.0, 0.0, 0.0] });
    ensure!(d.s.tree().get(e).unwrap().local.position.norm() < 1e-9, "follow mode left avatar off-centre");
    d.send(p, Body::SetCameraMode { mode: CameraMode::LockedToEnvironment });
    d.send(c, Body::TeleportShort { secondary: c, target: [8.0, 0.0, 0.0] });
    ensure!((d.s.tree().get(e).unwrap().local.position.norm() - 3.0).abs() < 1e-9, "locked mode did not move avatar");
    Ok("follow and locked camera modes".into())
}
