//! Footprint feature vector: ellipse geometry plus the location and magnitude
//! of the maximum relative wind.

use core::f64::consts::{FRAC_PI_2, PI};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::mvee::Ellipse;
use crate::error::{invalid, Result};

/// Relative tolerance below which an ellipse is treated as a circle.
const CIRCLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintFeatures {
    pub t: i64,
    /// Semi-major axis (cells).
    pub a: f64,
    /// Semi-minor axis (cells).
    pub b: f64,
    /// Maximum relative wind on the Exp(1) scale.
    pub w: f64,
    /// Distance from storm centre to ellipse centre (cells).
    pub r_e: f64,
    /// Bearing of the ellipse centre from the storm centre.
    pub theta_e: f64,
    /// Distance from ellipse centre to the maximum (cells).
    pub r_w: f64,
    /// Bearing of the maximum from the ellipse centre.
    pub theta_w: f64,
    /// Orientation of the major axis relative to grid north.
    pub gamma: f64,
}

impl FootprintFeatures {
    /// Footprint size `Δ = A·B`.
    pub fn delta(&self) -> f64 {
        self.a * self.b
    }

    /// The ellipse implied by the features around a storm centre.
    pub fn ellipse(&self, storm_centre: [f64; 2]) -> Ellipse {
        let c = offset(storm_centre, self.r_e, self.theta_e);
        Ellipse::from_axes(c, self.a, self.b, self.gamma)
    }

    /// Location of the maximum implied by the features.
    pub fn max_location(&self, storm_centre: [f64; 2]) -> [f64; 2] {
        offset(offset(storm_centre, self.r_e, self.theta_e), self.r_w, self.theta_w)
    }
}

/// Wrap an angle into `[-π, π]`.
pub fn wrap_pi(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    } else if r < -PI {
        r += 2.0 * PI;
    }
    r
}

/// Wrap an axial angle into `[-π/2, π/2]`.
pub fn wrap_half_pi(a: f64) -> f64 {
    let mut r = a % PI;
    if r > FRAC_PI_2 {
        r -= PI;
    } else if r < -FRAC_PI_2 {
        r += PI;
    }
    r
}

/// Bearing of `(dx, dy)` measured from due south, counter-clockwise positive.
pub fn bearing(dx: f64, dy: f64) -> f64 {
    if dx == 0.0 && dy == 0.0 {
        return 0.0;
    }
    dx.atan2(-dy)
}

/// Point at distance `r` and bearing `theta` from `p`.
pub fn offset(p: [f64; 2], r: f64, theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [p[0] + r * s, p[1] - r * c]
}

/// Orientation of a major-axis direction relative to grid north.
pub fn orientation(u: [f64; 2]) -> f64 {
    wrap_half_pi((-u[0]).atan2(u[1]))
}

pub fn ellipse_to_features(
    ellipse: &Ellipse,
    storm_centre: [f64; 2],
    max_loc: [f64; 2],
    max_val: f64,
    t: i64,
) -> Result<FootprintFeatures> {
    if !ellipse.contains(max_loc) {
        return Err(invalid("location of the maximum lies outside the ellipse"));
    }
    let (a, b, u) = ellipse.axes();
    let gamma = if (a - b).abs() <= CIRCLE_TOL * a { 0.0 } else { orientation(u) };
    let (ex, ey) = (ellipse.c[0] - storm_centre[0], ellipse.c[1] - storm_centre[1]);
    let (wx, wy) = (max_loc[0] - ellipse.c[0], max_loc[1] - ellipse.c[1]);
    Ok(FootprintFeatures {
        t,
        a,
        b: b.min(a),
        w: max_val,
        r_e: ex.hypot(ey),
        theta_e: bearing(ex, ey),
        r_w: wx.hypot(wy),
        theta_w: bearing(wx, wy),
        gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_conventions() {
        let e = Ellipse::from_axes([3.0, 3.0], 1.0, 1.0, 0.4);
        let f = ellipse_to_features(&e, [3.0, 3.0], [3.0, 3.0], 2.0, 1).unwrap();
        assert_eq!((f.r_e, f.gamma), (0.0, 0.0));
        assert!((f.a - 1.0).abs() < 1e-12 && (f.b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bearing_datum() {
        let e = Ellipse::from_axes([3.0, 2.0], 2.0, 1.0, 0.0);
        let f = ellipse_to_features(&e, [3.0, 3.0], [3.0, 2.0], 2.0, 1).unwrap();
        assert!((f.r_e - 1.0).abs() < 1e-15);
        assert_eq!(f.theta_e, 0.0);
        assert!((bearing(1.0, 0.0) - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn rotated_ellipse_recovered() {
        let g = 30f64.to_radians();
        let e = Ellipse::from_axes([10.0, 10.0], 4.0, 2.0, g);
        let f = ellipse_to_features(&e, [0.0, 0.0], [11.0, 10.5], 3.0, 1).unwrap();
        assert!((f.a - 4.0).abs() < 1e-6 && (f.b - 2.0).abs() < 1e-6 && (f.gamma - g).abs() < 1e-6);
        let m = f.max_location([0.0, 0.0]);
        assert!((m[0] - 11.0).abs() < 1e-9 && (m[1] - 10.5).abs() < 1e-9);
        let back = f.ellipse([0.0, 0.0]);
        assert!((back.exx - e.exx).abs() < 1e-9 && (back.exy - e.exy).abs() < 1e-9);
    }

    #[test]
    fn outside_max_rejected() {
        let e = Ellipse::from_axes([0.0, 0.0], 2.0, 1.0, 0.0);
        assert!(ellipse_to_features(&e, [0.0, 0.0], [5.0, 0.0], 1.0, 1).is_err());
    }
}
