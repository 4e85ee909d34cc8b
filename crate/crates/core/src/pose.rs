// SPDX-License-Identifier: Apache-2.0

//! Rigid-plus-scale poses and the composition rules used by the frame tree.
//!
//! Convention: right-handed, Y-up, meters. A pose maps a point `p` expressed
//! in the child frame into the parent frame as `position + rotation * (scale ⊙ p)`.

use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::FrameError;

/// Tolerance on `|q| - 1` below which a quaternion is left untouched.
const UNIT_EPS: f64 = 1e-12;
/// Tolerance accepted on deserialized quaternions before they are rejected.
const WIRE_UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scale: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    #[serde(default)]
    position: [f64; 3],
    /// `[x, y, z, w]`
    #[serde(default = "no_rotation")]
    rotation: [f64; 4],
    #[serde(default = "unit_scale")]
    scale: [f64; 3],
}

fn no_rotation() -> [f64; 4] {
    [0.0, 0.0, 0.0, 1.0]
}

fn unit_scale() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.rotation.quaternion();
        PoseRepr {
            position: [p.position.x, p.position.y, p.position.z],
            rotation: [q.i, q.j, q.k, q.w],
            scale: [p.scale.x, p.scale.y, p.scale.z],
        }
    }
}

impl TryFrom<PoseRepr> for Pose {
    type Error = FrameError;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        let [x, y, z, w] = r.rotation;
        let q = Quaternion::new(w, x, y, z);
        let pose = Pose {
            position: Vector3::from(r.position),
            rotation: unit_from_wire(q)?,
            scale: Vector3::from(r.scale),
        };
        pose.validate()?;
        Ok(pose)
    }
}

fn unit_from_wire(q: Quaternion<f64>) -> Result<UnitQuaternion<f64>, FrameError> {
    if !q.coords.iter().all(|c| c.is_finite()) {
        return Err(FrameError::NonFinite);
    }
    let n = q.norm();
    if (n - 1.0).abs() > WIRE_UNIT_TOL {
        return Err(FrameError::NonUnitRotation(n));
    }
    if (n - 1.0).abs() > UNIT_EPS {
        Ok(UnitQuaternion::new_normalize(q))
    } else {
        Ok(UnitQuaternion::new_unchecked(q))
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let n = q.quaternion().norm();
    if (n - 1.0).abs() > UNIT_EPS {
        UnitQuaternion::new_normalize(*q.quaternion())
    } else {
        q
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        position: Vector3::new(0.0, 0.0, 0.0),
        rotation: UnitQuaternion::new_unchecked(Quaternion::new(1.0, 0.0, 0.0, 0.0)),
        scale: Vector3::new(1.0, 1.0, 1.0),
    };

    pub fn new(position: Vector3<f64>, rotation: UnitQuaternion<f64>, scale: Vector3<f64>) -> Self {
        Pose { position, rotation, scale }
    }

    pub fn from_position(x: f64, y: f64, z: f64) -> Self {
        Pose { position: Vector3::new(x, y, z), ..Self::IDENTITY }
    }

    pub fn with_rotation(mut self, rotation: UnitQuaternion<f64>) -> Self {
        self.rotation = rotation;
        self
    }

    pub fn with_uniform_scale(mut self, s: f64) -> Self {
        self.scale = Vector3::repeat(s);
        self
    }

    /// Checks finiteness and strictly positive scale.
    pub fn validate(&self) -> Result<(), FrameError> {
        let finite = self.position.iter().all(|c| c.is_finite())
            && self.scale.iter().all(|c| c.is_finite())
            && self.rotation.coords.iter().all(|c| c.is_finite());
        if !finite {
            return Err(FrameError::NonFinite);
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(FrameError::DegenerateScale);
        }
        Ok(())
    }

    /// Maps a point from this pose's child frame into its parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation * self.scale.component_mul(p)
    }

    /// Unit forward direction (+Z of the local frame).
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }

    /// Homogeneous `T * R * S` matrix of this pose.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = self.rotation.to_homogeneous();
        for c in 0..3 {
            for r in 0..3 {
                m[(r, c)] *= self.scale[c];
            }
            m[(c, 3)] = self.position[c];
        }
        m
    }

    pub fn is_uniform_scale(&self, tol: f64) -> bool {
        let s = self.scale;
        (s.x - s.y).abs() <= tol * s.x.abs() && (s.x - s.z).abs() <= tol * s.x.abs()
    }
}

/// World pose of a child given its parent's world pose and its own local pose.
///
/// Scale, then rotate, then translate. Scales multiply component-wise; the
/// result is exact for uniform parent scale and treats non-uniform parent
/// scale as axis-aligned (no shear).
pub fn compose(parent_world: &Pose, child_local: &Pose) -> Pose {
    Pose {
        position: parent_world.transform_point(&child_local.position),
        rotation: renormalize(parent_world.rotation * child_local.rotation),
        scale: parent_world.scale.component_mul(&child_local.scale),
    }
}

/// Expresses `world` relative to `new_parent_world`, the inverse of [`compose`].
pub fn to_local(world: &Pose, new_parent_world: &Pose) -> Result<Pose, FrameError> {
    let parent = new_parent_world;
    if parent.scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(FrameError::DegenerateScale);
    }
    let inv_rot = parent.rotation.inverse();
    let rel = inv_rot * (world.position - parent.position);
    Ok(Pose {
        position: rel.component_div(&parent.scale),
        rotation: renormalize(inv_rot * world.rotation),
        scale: world.scale.component_div(&parent.scale),
    })
}

/// Component-wise closeness used by frame invariants: position absolute
/// difference, quaternion `|dot| >= 1 - tol`, and relative scale error.
pub fn approx_eq(a: &Pose, b: &Pose, tol: f64) -> bool {
    let pos = (a.position - b.position).iter().all(|d| d.abs() <= tol);
    let rot = a.rotation.coords.dot(&b.rotation.coords).abs() >= 1.0 - tol;
    let scale = a
        .scale
        .iter()
        .zip(b.scale.iter())
        .all(|(x, y)| (x - y).abs() <= tol * y.abs().max(1.0));
    pos && rot && scale
}
