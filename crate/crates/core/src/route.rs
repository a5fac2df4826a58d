//! Point-level and segment-level routes.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::roadnet::EdgeId;

/// One matched edge per GPS point.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointRoute(pub Vec<EdgeId>);

/// A sequence of connected road segments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentRoute(pub Vec<EdgeId>);

impl PointRoute {
    /// Order-preserving removal of consecutive duplicates.
    pub fn collapse(&self) -> SegmentRoute {
        let mut out: Vec<EdgeId> = Vec::with_capacity(self.0.len());
        for &e in &self.0 {
            if out.last() != Some(&e) {
                out.push(e);
            }
        }
        SegmentRoute(out)
    }
}

impl Deref for PointRoute {
    type Target = [EdgeId];
    fn deref(&self) -> &[EdgeId] {
        &self.0
    }
}

impl Deref for SegmentRoute {
    type Target = [EdgeId];
    fn deref(&self) -> &[EdgeId] {
        &self.0
    }
}

impl From<Vec<EdgeId>> for PointRoute {
    fn from(v: Vec<EdgeId>) -> Self {
        Self(v)
    }
}

impl From<Vec<EdgeId>> for SegmentRoute {
    fn from(v: Vec<EdgeId>) -> Self {
        Self(v)
    }
}
