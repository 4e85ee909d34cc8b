// SPDX-License-Identifier: Apache-2.0

//! World file: the OOI catalog, POIs, map calibration and tangible set.
//!
//! The document is JSON with top-level keys `schema`, `catalog`, `pois`,
//! `calibration` and `tangibles`. See `docs/world-format.md`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::DocumentError;
use crate::pose::{compose, Pose};

pub const WORLD_SCHEMA: u64 = 1;

/// The six OOI interactions, in menu order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Interaction {
    Text,
    Video,
    Scale,
    Highlight,
    Change,
    Lock,
}

impl Interaction {
    pub const ALL: [Interaction; 6] = [
        Interaction::Text,
        Interaction::Video,
        Interaction::Scale,
        Interaction::Highlight,
        Interaction::Change,
        Interaction::Lock,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub catalog_id: String,
    pub display_name: String,
    pub enabled_interactions: BTreeSet<Interaction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub change_targets: Vec<String>,
    /// City-frame pose of the static scene instance, if the entry is part of the city.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_pose: Option<Pose>,
    /// Whether the entry appears in the tangible spawn list.
    #[serde(default = "yes")]
    pub spawnable: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Poi {
    pub poi_id: String,
    pub name: String,
    pub spawn_pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapCalibration {
    /// Offset from the Map-Hub marker's image center to the point on the
    /// physical map where the city origin lies. Scale must be 1.
    pub image_center_to_env_origin: Pose,
    /// Uniform scale of the Map-Hub scaler: map meters per city meter.
    pub map_scale: f64,
    /// City-frame pose where newly joined secondaries appear.
    #[serde(default)]
    pub spawn: Pose,
    #[serde(default = "default_map_marker")]
    pub map_hub_marker: String,
    #[serde(default = "default_shovel_marker")]
    pub shovel_marker: String,
    /// Physical pose assumed for the Map-Hub marker until it is first tracked.
    #[serde(default)]
    pub map_hub_rest_pose: Pose,
    #[serde(default = "default_shovel_rest")]
    pub shovel_rest_pose: Pose,
}

fn default_map_marker() -> String {
    "map_hub".into()
}

fn default_shovel_marker() -> String {
    "pickup_shovel".into()
}

fn default_shovel_rest() -> Pose {
    Pose::from_position(0.6, 0.0, 0.0)
}

impl MapCalibration {
    /// Local pose of the Map-Hub scaler: the calibration offset with `map_scale`.
    pub fn scaler_pose(&self) -> Pose {
        let o = &self.image_center_to_env_origin;
        Pose::new(o.position, o.rotation, Vector3::repeat(self.map_scale))
    }
}

/// Position on the Map-Hub (anchor frame, map meters) of a city-frame position.
pub fn map_hub_position(calibration: &MapCalibration, env_position: &Vector3<f64>) -> Vector3<f64> {
    calibration.scaler_pose().transform_point(env_position)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TangibleDef {
    pub marker_id: String,
    /// Uniform scale of the tangible's scaler; sets the physical size of attached OOIs.
    #[serde(default = "default_tangible_scale")]
    pub scale: f64,
    #[serde(default)]
    pub rest_pose: Pose,
}

fn default_tangible_scale() -> f64 {
    0.001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldDoc {
    pub schema: u64,
    #[serde(default)]
    pub catalog: Vec<CatalogEntry>,
    #[serde(default)]
    pub pois: Vec<Poi>,
    pub calibration: MapCalibration,
    #[serde(default)]
    pub tangibles: Vec<TangibleDef>,
}

/// A validated world document with id lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    doc: WorldDoc,
    catalog_index: BTreeMap<String, usize>,
    poi_index: BTreeMap<String, usize>,
}

impl World {
    pub fn from_json(source: &str) -> Result<Self, DocumentError> {
        let doc: WorldDoc = serde_json::from_str(source)?;
        Self::from_doc(doc)
    }

    pub fn from_doc(doc: WorldDoc) -> Result<Self, DocumentError> {
        if doc.schema != WORLD_SCHEMA {
            return Err(DocumentError::Schema { found: doc.schema, expected: WORLD_SCHEMA });
        }
        let mut catalog_index = BTreeMap::new();
        for (i, e) in doc.catalog.iter().enumerate() {
            let at = |field: &str| format!("catalog[{i}] ({}).{field}", e.catalog_id);
            if e.catalog_id.is_empty() {
                return Err(DocumentError::invalid(format!("catalog[{i}].catalog_id"), "empty id"));
            }
            if catalog_index.insert(e.catalog_id.clone(), i).is_some() {
                return Err(DocumentError::invalid(at("catalog_id"), "duplicate catalog id"));
            }
            if e.enabled_interactions.contains(&Interaction::Text) && e.text_content.is_none() {
                return Err(DocumentError::invalid(
                    at("text_content"),
                    "Text interaction enabled without text_content",
                ));
            }
            if e.enabled_interactions.contains(&Interaction::Video) && e.video_ref.is_none() {
                return Err(DocumentError::invalid(
                    at("video_ref"),
                    "Video interaction enabled without video_ref",
                ));
            }
        }
        for (i, e) in doc.catalog.iter().enumerate() {
            for t in &e.change_targets {
                if !catalog_index.contains_key(t) {
                    return Err(DocumentError::invalid(
                        format!("catalog[{i}] ({}).change_targets", e.catalog_id),
                        format!("unknown change target {t:?}"),
                    ));
                }
            }
        }
        let mut poi_index = BTreeMap::new();
        for (i, p) in doc.pois.iter().enumerate() {
            if poi_index.insert(p.poi_id.clone(), i).is_some() {
                return Err(DocumentError::invalid(
                    format!("pois[{i}].poi_id"),
                    format!("duplicate poi id {:?}", p.poi_id),
                ));
            }
        }
        let cal = &doc.calibration;
        if !(cal.map_scale > 0.0 && cal.map_scale.is_finite()) {
            return Err(DocumentError::invalid("calibration.map_scale", "must be > 0"));
        }
        if cal.image_center_to_env_origin.scale != Vector3::repeat(1.0) {
            return Err(DocumentError::invalid(
                "calibration.image_center_to_env_origin.scale",
                "offset scale must be 1; use map_scale",
            ));
        }
        let mut markers = BTreeSet::new();
        let all_markers = [&cal.map_hub_marker, &cal.shovel_marker]
            .into_iter()
            .chain(doc.tangibles.iter().map(|t| &t.marker_id));
        for (i, m) in all_markers.enumerate() {
            if !markers.insert(m.clone()) {
                return Err(DocumentError::invalid(
                    if i < 2 { "calibration".to_string() } else { format!("tangibles[{}]", i - 2) },
                    format!("duplicate marker id {m:?}"),
                ));
            }
        }
        for (i, t) in doc.tangibles.iter().enumerate() {
            if !(t.scale > 0.0 && t.scale.is_finite()) {
                return Err(DocumentError::invalid(format!("tangibles[{i}].scale"), "must be > 0"));
            }
        }
        Ok(World { doc, catalog_index, poi_index })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("world document serializes")
    }

    pub fn doc(&self) -> &WorldDoc {
        &self.doc
    }

    pub fn catalog(&self) -> &[CatalogEntry] {
        &self.doc.catalog
    }

    pub fn entry(&self, catalog_id: &str) -> Option<&CatalogEntry> {
        self.catalog_index.get(catalog_id).map(|&i| &self.doc.catalog[i])
    }

    pub fn pois(&self) -> &[Poi] {
        &self.doc.pois
    }

    pub fn poi(&self, poi_id: &str) -> Option<&Poi> {
        self.poi_index.get(poi_id).map(|&i| &self.doc.pois[i])
    }

    pub fn calibration(&self) -> &MapCalibration {
        &self.doc.calibration
    }

    pub fn tangibles(&self) -> &[TangibleDef] {
        &self.doc.tangibles
    }

    /// An empty world with default calibration and three tangibles.
    pub fn minimal() -> Self {
        let doc = WorldDoc {
            schema: WORLD_SCHEMA,
            catalog: Vec::new(),
            pois: Vec::new(),
            calibration: MapCalibration {
                image_center_to_env_origin: Pose::IDENTITY,
                map_scale: 0.001,
                spawn: Pose::IDENTITY,
                map_hub_marker: default_map_marker(),
                shovel_marker: default_shovel_marker(),
                map_hub_rest_pose: Pose::IDENTITY,
                shovel_rest_pose: default_shovel_rest(),
            },
            tangibles: (1..=3)
                .map(|i| TangibleDef {
                    marker_id: format!("tangible_{i}"),
                    scale: default_tangible_scale(),
                    rest_pose: Pose::from_position(0.6 + 0.1 * i as f64, 0.0, 0.2),
                })
                .collect(),
        };
        World::from_doc(doc).expect("minimal world is valid")
    }
}

/// Map position computed by composing the scaler pose with a point pose;
/// kept separate from [`map_hub_position`] so tests can cross-check.
pub fn map_hub_position_via_compose(calibration: &MapCalibration, env_position: &Vector3<f64>) -> Vector3<f64> {
    let p = Pose::from_position(env_position.x, env_position.y, env_position.z);
    compose(&calibration.scaler_pose(), &p).position
}
