//! Coordinate normalization and training examples.

use trajmatch_core::roadnet::GeoBounds;
use trajmatch_core::GpsTrajectory;

use crate::ModelError;

/// Coordinates scaled into the unit square, `[lat, lon]` per point.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTrajectory {
    pub values: Vec<[f64; 2]>,
    /// `true` marks a padding position.
    pub pad_mask: Vec<bool>,
    /// Number of coordinates that fell outside the bounds and were clamped.
    pub clamped: usize,
}

impl NormalizedTrajectory {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Unpadded input built from raw unit-square values.
    pub fn from_values(values: Vec<[f64; 2]>) -> Self {
        let pad_mask = vec![false; values.len()];
        Self {
            values,
            pad_mask,
            clamped: 0,
        }
    }

    /// Appends `n` padding positions.
    pub fn padded(mut self, n: usize) -> Self {
        self.values.extend(std::iter::repeat_n([0.0, 0.0], n));
        self.pad_mask.extend(std::iter::repeat_n(true, n));
        self
    }
}

/// Maps every point into `[0, 1]²` using fixed network bounds.
pub fn normalize(traj: &GpsTrajectory, bounds: &GeoBounds) -> Result<NormalizedTrajectory, ModelError> {
    if !(bounds.lat_max > bounds.lat_min) {
        return Err(ModelError::DegenerateBounds("latitude"));
    }
    if !(bounds.lon_max > bounds.lon_min) {
        return Err(ModelError::DegenerateBounds("longitude"));
    }
    let mut clamped = 0;
    let mut scale = |v: f64, lo: f64, hi: f64| {
        let t = (v - lo) / (hi - lo);
        if !(0.0..=1.0).contains(&t) {
            clamped += 1;
        }
        t.clamp(0.0, 1.0)
    };
    let values = traj
        .points
        .iter()
        .map(|p| {
            [
                scale(p.lat, bounds.lat_min, bounds.lat_max),
                scale(p.lon, bounds.lon_min, bounds.lon_max),
            ]
        })
        .collect::<Vec<_>>();
    Ok(NormalizedTrajectory {
        pad_mask: vec![false; values.len()],
        values,
        clamped,
    })
}

/// A normalized input with one class label per position (edge id + 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: NormalizedTrajectory,
    pub labels: Vec<usize>,
}

impl Example {
    pub fn from_trajectory(traj: &GpsTrajectory, bounds: &GeoBounds) -> Result<Self, ModelError> {
        let truth = traj
            .truth
            .as_ref()
            .ok_or_else(|| ModelError::MissingTruth(traj.traj_id.clone()))?;
        Ok(Self {
            input: normalize(traj, bounds)?,
            labels: truth.iter().map(|&e| e + 1).collect(),
        })
    }
}

pub fn examples(corpus: &[GpsTrajectory], bounds: &GeoBounds) -> Result<Vec<Example>, ModelError> {
    corpus.iter().map(|t| Example::from_trajectory(t, bounds)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use trajmatch_core::LonLat;

    fn bounds() -> GeoBounds {
        GeoBounds {
            lat_min: 37.0,
            lat_max: 38.0,
            lon_min: 127.0,
            lon_max: 129.0,
        }
    }

    fn traj(points: Vec<LonLat>) -> GpsTrajectory {
        GpsTrajectory::new("t", points, None).unwrap()
    }

    #[test]
    fn corners_and_midpoint() {
        let t = traj(vec![
            LonLat::new(127.0, 37.0),
            LonLat::new(128.0, 37.5),
            LonLat::new(129.0, 38.0),
        ]);
        let n = normalize(&t, &bounds()).unwrap();
        assert_eq!(n.values, vec![[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]]);
        assert_eq!(n.clamped, 0);
        assert_eq!(n.pad_mask, vec![false; 3]);
    }

    #[test]
    fn outside_points_are_clamped_and_counted() {
        // roughly 10 m south of the box
        let t = traj(vec![
            LonLat::new(128.0, 36.99991),
            LonLat::new(128.0, 37.5),
            LonLat::new(128.0, 37.5),
        ]);
        let n = normalize(&t, &bounds()).unwrap();
        assert_eq!(n.values[0][0], 0.0);
        assert_eq!(n.clamped, 1);
    }

    #[test]
    fn degenerate_bounds() {
        let t = traj(vec![LonLat::new(128.0, 37.5); 3]);
        let mut b = bounds();
        b.lat_max = b.lat_min;
        assert!(matches!(normalize(&t, &b), Err(ModelError::DegenerateBounds(_))));
        let mut b = bounds();
        b.lon_min = b.lon_max;
        assert!(matches!(normalize(&t, &b), Err(ModelError::DegenerateBounds(_))));
    }
}
