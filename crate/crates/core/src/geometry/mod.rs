//! Signed distances between convex primitives, planar super-ellipse keep-out
//! regions, and self-collision pair bookkeeping.

mod primitive;
mod superellipse;

use std::collections::BTreeSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::stl::DistanceField;

pub use primitive::{
    axis_rotation, distance_lower_bound, point_distance, proximity, segment_distance, signed_distance, Primitive,
    Proximity,
};
pub use superellipse::{super_ellipse_value, SuperEllipse};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("body index {index} outside the body set of size {size}")]
    UnknownIndex { index: usize, size: usize },
}

/// Minimum signed distance over all body–obstacle pairs; `+∞` when either
/// list is empty.
pub fn min_clearance(bodies: &[Primitive], obstacles: &[Primitive]) -> f64 {
    let mut best = f64::INFINITY;
    for b in bodies {
        for o in obstacles {
            if distance_lower_bound(b, o) >= best {
                continue;
            }
            best = best.min(signed_distance(b, o));
        }
    }
    best
}

/// Static obstacle set usable as a distance field for `avoid` predicates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObstacleSet(pub Vec<Primitive>);

impl ObstacleSet {
    pub fn new(obstacles: Vec<Primitive>) -> Result<Self, GeometryError> {
        for o in &obstacles {
            o.validate()?;
        }
        Ok(Self(obstacles))
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.0
    }

    /// Point clearance; `+∞` for an empty set.
    pub fn point_clearance(&self, p: &Vector3<f64>) -> f64 {
        self.0
            .iter()
            .map(|o| point_distance(p, o))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn segment_clearance(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        self.0
            .iter()
            .map(|o| segment_distance(a, b, o))
            .fold(f64::INFINITY, f64::min)
    }
}

impl DistanceField for ObstacleSet {
    fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.point_clearance(p)
    }
}

/// Allowed-contact pairs over a body index set `0..size`; every other
/// off-diagonal pair is forbidden.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollisionPairs {
    size: usize,
    allowed: BTreeSet<(usize, usize)>,
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

impl CollisionPairs {
    pub fn new(size: usize, allowed: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GeometryError> {
        let mut set = BTreeSet::new();
        for (i, j) in allowed {
            for index in [i, j] {
                if index >= size {
                    return Err(GeometryError::UnknownIndex { index, size });
                }
            }
            if i != j {
                set.insert(ordered(i, j));
            }
        }
        Ok(Self { size, allowed: set })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed.contains(&ordered(i, j))
    }

    pub fn allowed(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.allowed.iter().copied()
    }

    /// Forbidden pairs with `i < j`; the relation is symmetric.
    pub fn forbidden(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.size {
            for j in i + 1..self.size {
                if !self.allowed.contains(&(i, j)) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// True iff every forbidden pair is strictly separated.
pub fn self_collision_free(bodies: &[Primitive], pairs: &CollisionPairs) -> Result<bool, GeometryError> {
    if bodies.len() != pairs.size() {
        return Err(GeometryError::UnknownIndex {
            index: pairs.size().max(bodies.len()) - 1,
            size: bodies.len().min(pairs.size()),
        });
    }
    Ok(pairs
        .forbidden()
        .into_iter()
        .all(|(i, j)| signed_distance(&bodies[i], &bodies[j]) > 0.0))
}

/// Minimum signed distance over forbidden pairs; `+∞` if there are none.
pub fn min_self_distance(bodies: &[Primitive], pairs: &CollisionPairs) -> Result<f64, GeometryError> {
    if bodies.len() != pairs.size() {
        return Err(GeometryError::UnknownIndex {
            index: pairs.size().max(bodies.len()) - 1,
            size: bodies.len().min(pairs.size()),
        });
    }
    Ok(pairs
        .forbidden()
        .into_iter()
        .map(|(i, j)| signed_distance(&bodies[i], &bodies[j]))
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: f64, r: f64) -> Primitive {
        Primitive::sphere(Vector3::new(x, 0.0, 0.0), r)
    }

    #[test]
    fn clearance_single_pair() {
        let d = min_clearance(&[sphere(0.0, 1.0)], &[sphere(10.0, 1.0)]);
        assert!((d - 8.0).abs() < 1e-12);
    }

    #[test]
    fn clearance_nearest_of_three() {
        let bodies = [sphere(0.0, 0.5), sphere(3.0, 0.5), sphere(6.0, 0.5)];
        let obstacles = [sphere(4.2, 0.5), sphere(-5.0, 1.0)];
        // exhaustive scan
        let mut expected = f64::INFINITY;
        for b in &bodies {
            for o in &obstacles {
                expected = expected.min(signed_distance(b, o));
            }
        }
        let d = min_clearance(&bodies, &obstacles);
        assert_eq!(d, expected);
        assert!((d - 0.2).abs() < 1e-12);
    }

    #[test]
    fn obstacle_set_clearances() {
        let set = ObstacleSet::new(vec![sphere(2.0, 0.5), sphere(-4.0, 1.0)]).unwrap();
        assert!((set.point_clearance(&Vector3::zeros()) - 1.5).abs() < 1e-12);
        let d = set.segment_clearance(&Vector3::new(0.0, 1.0, 0.0), &Vector3::new(3.0, 1.0, 0.0));
        assert!((d - 0.5).abs() < 1e-12);
        assert_eq!(ObstacleSet::default().point_clearance(&Vector3::zeros()), f64::INFINITY);
    }

    #[test]
    fn clearance_penetration_is_negative() {
        assert!(min_clearance(&[sphere(0.0, 1.0)], &[sphere(1.0, 1.0)]) < 0.0);
    }

    #[test]
    fn self_collision_cases() {
        let disjoint = [sphere(0.0, 0.25), sphere(1.0, 0.25)];
        let pairs = CollisionPairs::new(2, []).unwrap();
        assert!(self_collision_free(&disjoint, &pairs).unwrap());

        let overlapping = [sphere(0.0, 0.5), sphere(0.5, 0.5)];
        let allowed = CollisionPairs::new(2, [(1, 0)]).unwrap();
        assert!(self_collision_free(&overlapping, &allowed).unwrap());
        assert!(!self_collision_free(&overlapping, &pairs).unwrap());
    }

    #[test]
    fn pair_sets_are_complementary() {
        let pairs = CollisionPairs::new(4, [(0, 1), (2, 1)]).unwrap();
        assert_eq!(pairs.forbidden(), vec![(0, 2), (0, 3), (1, 3), (2, 3)]);
        assert!(pairs.is_allowed(1, 2) && pairs.is_allowed(2, 1));
        assert!(matches!(
            CollisionPairs::new(2, [(0, 5)]),
            Err(GeometryError::UnknownIndex { index: 5, size: 2 })
        ));
        assert!(self_collision_free(&[sphere(0.0, 1.0)], &pairs).is_err());
    }
}
