// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};

/// Scene-graph node identifier. Allocated monotonically, never reused in a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct EntityId(pub u64);

/// Connection-scoped client identifier. `ClientId::SERVER` owns session-level entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl ClientId {
    pub const SERVER: ClientId = ClientId(0);
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Ids are numbers on the wire, but as JSON object keys they are strings.
/// Buffered deserialization (inside tagged enums) hands keys over as strings,
/// so both forms are accepted.
macro_rules! numeric_id_deserialize {
    ($ty:ident, $inner:ty) => {
        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                struct V;
                impl Visitor<'_> for V {
                    type Value = $ty;
                    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                        f.write_str("a non-negative integer id")
                    }
                    fn visit_u64<E: de::Error>(self, v: u64) -> Result<$ty, E> {
                        <$inner>::try_from(v).map($ty).map_err(|_| E::custom(format!("id {v} out of range")))
                    }
                    fn visit_i64<E: de::Error>(self, v: i64) -> Result<$ty, E> {
                        u64::try_from(v).map_err(|_| E::custom(format!("negative id {v}"))).and_then(|v| self.visit_u64(v))
                    }
                    fn visit_str<E: de::Error>(self, v: &str) -> Result<$ty, E> {
                        v.parse::<$inner>().map($ty).map_err(|_| E::custom(format!("bad id {v:?}")))
                    }
                }
                d.deserialize_any(V)
            }
        }
    };
}

numeric_id_deserialize!(EntityId, u64);
numeric_id_deserialize!(ClientId, u32);
