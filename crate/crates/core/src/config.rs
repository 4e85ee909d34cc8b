// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::DocumentError;

/// Tunables of one session. Every field has a default so a config file may
/// list only what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Pickup radius on the Map-Hub, in map meters.
    pub pickup_threshold: f64,
    /// Maximum distance of a short teleport, in city meters.
    pub short_teleport_limit: f64,
    pub env_scale_min: f64,
    pub env_scale_max: f64,
    /// Environment scale applied when a secondary is picked up.
    pub env_scale_default: f64,
    pub ooi_scale_min: f64,
    pub ooi_scale_max: f64,
    /// Seconds after the last marker pose before a marker counts as lost.
    pub tracking_timeout: f64,
    /// Reattach radius in the primary's physical frame, meters.
    pub reattach_threshold: f64,
    pub arrow: ArrowConfig,
    /// Distance in front of the secondary at which text/video panels appear.
    pub panel_distance: f64,
    /// Height of panels above the avatar origin.
    pub panel_height: f64,
    pub tick_rate: f64,
    /// Send secondaries their pickup state (off by default).
    pub notify_secondary_pickup: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrowConfig {
    pub near_distance: f64,
    pub facing_half_angle: f64,
}

impl Default for ArrowConfig {
    fn default() -> Self {
        ArrowConfig { near_distance: 5.0, facing_half_angle: 30.0 }
    }
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            pickup_threshold: 0.03,
            short_teleport_limit: 10.0,
            env_scale_min: 0.0005,
            env_scale_max: 0.01,
            env_scale_default: 0.001,
            ooi_scale_min: 0.1,
            ooi_scale_max: 10.0,
            tracking_timeout: 2.0,
            reattach_threshold: 0.05,
            arrow: ArrowConfig::default(),
            panel_distance: 1.5,
            panel_height: 1.6,
            tick_rate: 30.0,
            notify_secondary_pickup: false,
        }
    }
}

impl SessionConfig {
    pub fn tick_dt(&self) -> f64 {
        1.0 / self.tick_rate
    }

    pub fn validate(&self) -> Result<(), DocumentError> {
        let positive = [
            ("pickup_threshold", self.pickup_threshold),
            ("short_teleport_limit", self.short_teleport_limit),
            ("env_scale_min", self.env_scale_min),
            ("ooi_scale_min", self.ooi_scale_min),
            ("tracking_timeout", self.tracking_timeout),
            ("reattach_threshold", self.reattach_threshold),
            ("arrow.near_distance", self.arrow.near_distance),
            ("arrow.facing_half_angle", self.arrow.facing_half_angle),
            ("panel_distance", self.panel_distance),
            ("tick_rate", self.tick_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DocumentError::invalid(name, "must be > 0"));
            }
        }
        if !(self.env_scale_max >= self.env_scale_min) {
            return Err(DocumentError::invalid("env_scale_max", "must be >= env_scale_min"));
        }
        if !(self.env_scale_min..=self.env_scale_max).contains(&self.env_scale_default) {
            return Err(DocumentError::invalid("env_scale_default", "outside [min, max]"));
        }
        if !(self.ooi_scale_max >= self.ooi_scale_min) {
            return Err(DocumentError::invalid("ooi_scale_max", "must be >= ooi_scale_min"));
        }
        if !self.panel_height.is_finite() {
            return Err(DocumentError::invalid("panel_height", "must be finite"));
        }
        Ok(())
    }
}
