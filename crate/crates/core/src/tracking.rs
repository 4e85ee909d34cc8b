// SPDX-License-Identifier: Apache-2.0

//! Deterministic stand-in for camera-based marker tracking.
//!
//! A script lists timed waypoints per marker and occlusion intervals. Each
//! [`TrackingSim::step`] advances a fixed-step clock and yields one
//! `MarkerPose` body per marker that is currently visible. Positions and
//! scales are interpolated linearly, rotations by slerp; before the first
//! and after the last waypoint the nearest waypoint is held.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DocumentError;
use crate::pose::Pose;
use crate::protocol::Body;

pub const SCRIPT_SCHEMA: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerScript {
    pub marker_id: String,
    #[serde(default)]
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionEvent {
    pub marker_id: String,
    pub start: f64,
    pub duration: f64,
}

impl OcclusionEvent {
    pub fn covers(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingScript {
    pub schema: u64,
    #[serde(default)]
    pub duration: f64,
    #[serde(default)]
    pub markers: Vec<MarkerScript>,
    #[serde(default)]
    pub occlusions: Vec<OcclusionEvent>,
}

impl TrackingScript {
    pub fn empty() -> Self {
        TrackingScript { schema: SCRIPT_SCHEMA, duration: 0.0, markers: Vec::new(), occlusions: Vec::new() }
    }

    fn validate(&self) -> Result<(), DocumentError> {
        if self.schema != SCRIPT_SCHEMA {
            return Err(DocumentError::Schema { found: self.schema, expected: SCRIPT_SCHEMA });
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(DocumentError::invalid("duration", "must be a finite time >= 0"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, m) in self.markers.iter().enumerate() {
            if !seen.insert(&m.marker_id) {
                return Err(DocumentError::invalid(format!("markers[{i}].marker_id"), "duplicate marker"));
            }
            let mut prev: Option<f64> = None;
            for (j, w) in m.waypoints.iter().enumerate() {
                let path = format!("markers[{i}] ({}).waypoints[{j}]", m.marker_id);
                if !w.t.is_finite() || w.t < 0.0 {
                    return Err(DocumentError::invalid(format!("{path}.t"), "must be a finite time >= 0"));
                }
                match prev {
                    Some(p) if w.t == p => {
                        return Err(DocumentError::invalid(format!("{path}.t"), format!("duplicate timestamp {p}")));
                    }
                    Some(p) if w.t < p => {
                        return Err(DocumentError::invalid(format!("{path}.t"), "timestamps must increase"));
                    }
                    _ => {}
                }
                w.pose.validate().map_err(|e| DocumentError::invalid(format!("{path}.pose"), e.to_string()))?;
                prev = Some(w.t);
            }
        }
        for (i, o) in self.occlusions.iter().enumerate() {
            if !(o.start.is_finite() && o.start >= 0.0) {
                return Err(DocumentError::invalid(format!("occlusions[{i}].start"), "must be a finite time >= 0"));
            }
            if !(o.duration > 0.0 && o.duration.is_finite()) {
                return Err(DocumentError::invalid(format!("occlusions[{i}].duration"), "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Parses and validates a script. Syntax errors carry line and column.
pub fn load_script(json: &str) -> Result<TrackingScript, DocumentError> {
    let script: TrackingScript = serde_json::from_str(json)?;
    script.validate()?;
    Ok(script)
}

pub fn load_script_file(path: &Path) -> Result<TrackingScript, DocumentError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DocumentError::invalid(path.display().to_string(), e.to_string()))?;
    load_script(&text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackState {
    Tracked(Pose),
    Lost { since: f64 },
}

/// Pose of a waypoint track at time `t`.
pub fn sample(waypoints: &[Waypoint], t: f64) -> Option<Pose> {
    let first = waypoints.first()?;
    let last = waypoints.last()?;
    if t <= first.t {
        return Some(first.pose);
    }
    if t >= last.t {
        return Some(last.pose);
    }
    let k = waypoints.partition_point(|w| w.t <= t);
    let (a, b) = (&waypoints[k - 1], &waypoints[k]);
    let u = (t - a.t) / (b.t - a.t);
    Some(Pose {
        position: a.pose.position.lerp(&b.pose.position, u),
        rotation: a.pose.rotation.slerp(&b.pose.rotation, u),
        scale: a.pose.scale.lerp(&b.pose.scale, u),
    })
}

#[derive(Debug, Clone)]
pub struct TrackingSim {
    script: TrackingScript,
    time: f64,
    states: BTreeMap<String, TrackState>,
}

impl TrackingSim {
    pub fn new(script: TrackingScript) -> Self {
        let mut sim = TrackingSim { script, time: 0.0, states: BTreeMap::new() };
        sim.refresh();
        sim
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn script(&self) -> &TrackingScript {
        &self.script
    }

    /// Current state of a marker; markers absent from the script are lost.
    pub fn state(&self, marker_id: &str) -> TrackState {
        self.states.get(marker_id).copied().unwrap_or(TrackState::Lost { since: 0.0 })
    }

    pub fn states(&self) -> &BTreeMap<String, TrackState> {
        &self.states
    }

    fn refresh(&mut self) {
        let t = self.time;
        for m in &self.script.markers {
            let occluded = self.script.occlusions.iter().any(|o| o.marker_id == m.marker_id && o.covers(t));
            let next = match sample(&m.waypoints, t) {
                Some(p) if !occluded => TrackState::Tracked(p),
                _ => match self.states.get(&m.marker_id) {
                    Some(TrackState::Lost { since }) => TrackState::Lost { since: *since },
                    _ => TrackState::Lost { since: t },
                },
            };
            self.states.insert(m.marker_id.clone(), next);
        }
    }

    /// Advances the clock by `dt` and returns a `MarkerPose` body for every
    /// tracked marker at the new time, in marker-id order.
    pub fn step(&mut self, dt: f64) -> Vec<Body> {
        assert!(dt > 0.0, "tracking step must be positive");
        self.time += dt;
        self.refresh();
        self.states
            .iter()
            .filter_map(|(id, s)| match s {
                TrackState::Tracked(pose) => Some(Body::MarkerPose { marker_id: id.clone(), pose: *pose }),
                TrackState::Lost { .. } => None,
            })
            .collect()
    }
}
