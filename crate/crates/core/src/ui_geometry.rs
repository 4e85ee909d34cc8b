// SPDX-License-Identifier: Apache-2.0

//! Screen-space geometry for the OOI context menu.
//!
//! Buttons sit on the curve
//!
//! ```text
//! x_i = radius_pct · screen_w / 100 · cos(2πi / n)
//! y_i = radius_pct · screen_h / 100 · sin(2πi / n)
//! ```
//!
//! around the OOI's projected screen point. Because x and y are scaled by
//! width and height separately this is an ellipse on non-square screens.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

pub const DEFAULT_RADIUS_PCT: f64 = 12.0;
/// Buttons closer than this (pixels, chord distance) trigger a warning.
pub const DEFAULT_MIN_SPACING_PX: f64 = 48.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub radius_pct: f64,
    pub screen_w: f64,
    pub screen_h: f64,
    pub button_count: usize,
}

impl LayoutSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.radius_pct > 0.0 && self.radius_pct.is_finite()) {
            return Err("radius_pct must be > 0".into());
        }
        if !(self.screen_w > 0.0 && self.screen_h > 0.0 && self.screen_w.is_finite() && self.screen_h.is_finite()) {
            return Err("screen dimensions must be > 0".into());
        }
        if self.button_count == 0 {
            return Err("button_count must be >= 1".into());
        }
        Ok(())
    }

    pub fn semi_axes(&self) -> (f64, f64) {
        (self.radius_pct * self.screen_w / 100.0, self.radius_pct * self.screen_h / 100.0)
    }
}

/// Pixel offsets of each button from the OOI's screen anchor.
pub fn radial_button_layout(spec: &LayoutSpec) -> Vec<(f64, f64)> {
    let (a, b) = spec.semi_axes();
    let n = spec.button_count as f64;
    (0..spec.button_count)
        .map(|i| {
            let theta = 2.0 * i as f64 * PI / n;
            (a * theta.cos(), b * theta.sin())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialLayout {
    pub points: Vec<(f64, f64)>,
    /// Smallest distance between neighbouring buttons, if there are two or more.
    pub min_spacing: Option<f64>,
    pub warning: Option<String>,
}

/// Layout plus a crowding warning. Positions are never altered.
pub fn radial_layout_checked(spec: &LayoutSpec, min_spacing_px: f64) -> RadialLayout {
    let points = radial_button_layout(spec);
    let min_spacing = (points.len() >= 2)
        .then(|| {
            (0..points.len())
                .map(|i| {
                    let (p, q) = (points[i], points[(i + 1) % points.len()]);
                    (p.0 - q.0).hypot(p.1 - q.1)
                })
                .fold(f64::INFINITY, f64::min)
        });
    let warning = min_spacing
        .filter(|d| *d < min_spacing_px)
        .map(|d| format!("menu buttons only {d:.1} px apart (minimum {min_spacing_px} px)"));
    RadialLayout { points, min_spacing, warning }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScreenPoint {
    /// Pixel coordinates, origin top-left, y down.
    Visible { x: f64, y: f64 },
    BehindCamera,
}

/// Homogeneous projection of a world point into a `w × h` viewport.
/// Points with clip-space w ≤ 0 are reported as behind the camera.
pub fn project_to_screen(p: &Vector3<f64>, view_proj: &Matrix4<f64>, viewport: (f64, f64)) -> ScreenPoint {
    let clip = view_proj * Vector4::new(p.x, p.y, p.z, 1.0);
    if clip.w <= 0.0 {
        return ScreenPoint::BehindCamera;
    }
    let (nx, ny) = (clip.x / clip.w, clip.y / clip.w);
    ScreenPoint::Visible { x: (nx + 1.0) * 0.5 * viewport.0, y: (1.0 - ny) * 0.5 * viewport.1 }
}
