//! Planar coordinate math: node distances, bearings, and the angular cone
//! test that directional diffused forwarding uses to pick forwarders lying
//! toward a known target position.
//!
//! Coordinates are meters on a flat rectangle. Bearings are full-quadrant
//! angles from the two-argument arctangent, normalized into `(-pi, pi]`.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    /// A bearing between two identical points is undefined.
    #[error("coincident points have no bearing")]
    CoincidentPoints,
}

/// A node position in meters. Both coordinates are finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    /// Builds a position, rejecting NaN and infinities.
    pub fn new(x: f64, y: f64) -> Option<Self> {
        if x.is_finite() && y.is_finite() {
            Some(Self { x, y })
        } else {
            None
        }
    }
}

/// A full-quadrant direction, normalized into `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearing {
    radians: f64,
}

impl Bearing {
    pub fn radians(self) -> f64 {
        self.radians
    }

    fn from_radians(raw: f64) -> Self {
        Self {
            radians: normalize_angle(raw),
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
fn normalize_angle(raw: f64) -> f64 {
    let mut a = raw.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid can yield exactly -pi via the subtraction above only when
    // a == 2*pi fell through; map the open end onto +pi.
    if a <= -PI {
        a = PI;
    }
    a
}

/// Euclidean distance in meters between two positions.
pub fn distance(a: Position, b: Position) -> f64 {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    (dx * dx + dy * dy).sqrt()
}

/// Direction of the vector `to - from`.
///
/// Uses the two-argument arctangent so all four quadrants are distinguished.
/// Errors with [`GeometryError::CoincidentPoints`] when `from == to`.
pub fn bearing(from: Position, to: Position) -> Result<Bearing, GeometryError> {
    if from == to {
        return Err(GeometryError::CoincidentPoints);
    }
    Ok(Bearing::from_radians((to.y - from.y).atan2(to.x - from.x)))
}

/// Absolute angular difference between two bearings, wrapped into `[0, pi]`.
pub fn angular_difference(a: Bearing, b: Bearing) -> f64 {
    let d = (a.radians - b.radians).abs();
    if d > PI {
        2.0 * PI - d
    } else {
        d
    }
}

/// True iff `candidate` lies within the cone of half-angle `theta_t` around
/// the direction from `origin` to `target`.
///
/// The test is boundary-inclusive so exactly-aligned nodes are kept. A
/// candidate sitting on `origin` itself has a zero-length offset vector and
/// is treated as in-cone.
pub fn within_cone(
    origin: Position,
    target: Position,
    candidate: Position,
    theta_t: f64,
) -> Result<bool, GeometryError> {
    let to_target = bearing(origin, target)?;
    let to_candidate = match bearing(origin, candidate) {
        Ok(b) => b,
        Err(GeometryError::CoincidentPoints) => return Ok(true),
    };
    Ok(angular_difference(to_target, to_candidate) <= theta_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pos(x: f64, y: f64) -> Position {
        Position::new(x, y).unwrap()
    }

    #[test]
    fn distance_three_four_five() {
        assert_eq!(distance(pos(0.0, 0.0), pos(3.0, 4.0)), 5.0);
    }

    #[test]
    fn distance_identity_is_zero() {
        assert_eq!(distance(pos(7.0, 2.0), pos(7.0, 2.0)), 0.0);
    }

    #[test]
    fn distance_hand_computed() {
        // sqrt(9 + 16) = 5
        assert_eq!(distance(pos(-1.0, -1.0), pos(2.0, 3.0)), 5.0);
    }

    #[test]
    fn position_rejects_non_finite() {
        assert!(Position::new(f64::NAN, 0.0).is_none());
        assert!(Position::new(0.0, f64::INFINITY).is_none());
    }

    #[test]
    fn bearing_diagonal() {
        let b = bearing(pos(0.0, 0.0), pos(1.0, 1.0)).unwrap();
        assert!((b.radians() - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn bearing_negative_x_axis() {
        let b = bearing(pos(0.0, 0.0), pos(-1.0, 0.0)).unwrap();
        assert!((b.radians() - PI).abs() < 1e-12);
    }

    #[test]
    fn bearing_coincident_points() {
        assert_eq!(
            bearing(pos(0.0, 0.0), pos(0.0, 0.0)),
            Err(GeometryError::CoincidentPoints)
        );
    }

    #[test]
    fn cone_accepts_shallow_offset() {
        // bearing to (5,1) is atan(1/5) ~ 0.197 rad, well under pi/4
        assert!(within_cone(pos(0.0, 0.0), pos(10.0, 0.0), pos(5.0, 1.0), PI / 4.0).unwrap());
    }

    #[test]
    fn cone_rejects_perpendicular() {
        assert!(!within_cone(pos(0.0, 0.0), pos(10.0, 0.0), pos(0.0, 5.0), PI / 4.0).unwrap());
    }

    #[test]
    fn cone_boundary_inclusive() {
        // bearing to (5,5) is exactly pi/4
        assert!(within_cone(pos(0.0, 0.0), pos(10.0, 0.0), pos(5.0, 5.0), PI / 4.0).unwrap());
    }

    #[test]
    fn cone_of_coincident_candidate() {
        assert!(within_cone(pos(0.0, 0.0), pos(10.0, 0.0), pos(0.0, 0.0), 0.01).unwrap());
    }

    #[test]
    fn cone_errors_on_degenerate_axis() {
        assert_eq!(
            within_cone(pos(1.0, 1.0), pos(1.0, 1.0), pos(2.0, 2.0), 0.5),
            Err(GeometryError::CoincidentPoints)
        );
    }

    fn arb_pos() -> impl Strategy<Value = Position> {
        (-1.0e4..1.0e4f64, -1.0e4..1.0e4f64).prop_map(|(x, y)| pos(x, y))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn distance_symmetric(a in arb_pos(), b in arb_pos()) {
            prop_assert_eq!(distance(a, b), distance(b, a));
        }

        #[test]
        fn triangle_inequality(a in arb_pos(), b in arb_pos(), c in arb_pos()) {
            let lhs = distance(a, c);
            let rhs = distance(a, b) + distance(b, c);
            prop_assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-9);
        }

        #[test]
        fn reverse_bearing_differs_by_pi(a in arb_pos(), b in arb_pos()) {
            prop_assume!(a != b);
            let fwd = bearing(a, b).unwrap();
            let rev = bearing(b, a).unwrap();
            let diff = angular_difference(fwd, rev);
            prop_assert!((diff - PI).abs() < 1e-9, "diff {}", diff);
        }

        #[test]
        fn cone_monotone_in_theta(
            origin in arb_pos(),
            target in arb_pos(),
            cand in arb_pos(),
            theta in 0.01..PI,
            widen in 0.0..1.0f64,
        ) {
            prop_assume!(origin != target);
            let narrow = within_cone(origin, target, cand, theta).unwrap();
            let wider = theta + widen * (PI - theta);
            if narrow {
                prop_assert!(within_cone(origin, target, cand, wider).unwrap());
            }
        }

        #[test]
        fn bearing_always_normalized(a in arb_pos(), b in arb_pos()) {
            prop_assume!(a != b);
            let r = bearing(a, b).unwrap().radians();
            prop_assert!(r > -PI && r <= PI);
        }
    }
}
