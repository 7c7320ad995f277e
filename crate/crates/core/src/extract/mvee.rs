//! Minimum-volume enclosing ellipses (Khachiyan's algorithm with away steps).

use alloc::vec::Vec;
use core::f64::consts::PI;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Membership slack used when testing points against an ellipse.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Ellipse `{s : (s−c)ᵀ E (s−c) ≤ 1}` in grid-cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub c: [f64; 2],
    /// Symmetric positive-definite shape matrix `[[exx, exy], [exy, eyy]]`.
    pub exx: f64,
    pub exy: f64,
    pub eyy: f64,
}

impl Ellipse {
    pub fn new(c: [f64; 2], exx: f64, exy: f64, eyy: f64) -> Result<Self> {
        let e = Self { c, exx, exy, eyy };
        if !(exx > 0.0 && e.det() > 0.0) || !c[0].is_finite() || !c[1].is_finite() {
            return Err(invalid("ellipse shape matrix must be positive definite"));
        }
        Ok(e)
    }

    /// Ellipse with semi-axes `a ≥ b` whose major axis points at angle
    /// `gamma` counter-clockwise from grid north.
    pub fn from_axes(c: [f64; 2], a: f64, b: f64, gamma: f64) -> Self {
        let (s, co) = gamma.sin_cos();
        let u = [-s, co];
        let v = [co, s];
        let (ia, ib) = (1.0 / (a * a), 1.0 / (b * b));
        Self {
            c,
            exx: ia * u[0] * u[0] + ib * v[0] * v[0],
            exy: ia * u[0] * u[1] + ib * v[0] * v[1],
            eyy: ia * u[1] * u[1] + ib * v[1] * v[1],
        }
    }

    pub fn det(&self) -> f64 {
        self.exx * self.eyy - self.exy * self.exy
    }

    pub fn quad_form(&self, p: [f64; 2]) -> f64 {
        let (dx, dy) = (p[0] - self.c[0], p[1] - self.c[1]);
        self.exx * dx * dx + 2.0 * self.exy * dx * dy + self.eyy * dy * dy
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.quad_form(p) <= 1.0 + MEMBERSHIP_TOL
    }

    /// Area `π·det(E)^(-1/2)`.
    pub fn area(&self) -> f64 {
        PI / self.det().sqrt()
    }

    /// Semi-axes `(A, B)` with `A ≥ B` and the unit direction of the major axis.
    pub fn axes(&self) -> (f64, f64, [f64; 2]) {
        let tr = 0.5 * (self.exx + self.eyy);
        let disc = (0.25 * (self.exx - self.eyy).powi(2) + self.exy * self.exy).sqrt();
        let (l_small, l_big) = (tr - disc, tr + disc);
        // eigenvector of the smaller eigenvalue
        let dir = if self.exy.abs() > 1e-300 {
            [l_small - self.eyy, self.exy]
        } else if self.exx <= self.eyy {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        };
        let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
        (1.0 / l_small.sqrt(), 1.0 / l_big.sqrt(), [dir[0] / norm, dir[1] / norm])
    }

    /// Axis-aligned bounding box `(x_min, x_max, y_min, y_max)`.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let d = self.det();
        let hx = (self.eyy / d).sqrt();
        let hy = (self.exx / d).sqrt();
        (self.c[0] - hx, self.c[0] + hx, self.c[1] - hy, self.c[1] + hy)
    }

    /// Point on the boundary at parameter `phi` (`c + A cos φ u + B sin φ v`).
    pub fn boundary_point(&self, phi: f64) -> [f64; 2] {
        let (a, b, u) = self.axes();
        let v = [-u[1], u[0]];
        let (s, co) = phi.sin_cos();
        [self.c[0] + a * co * u[0] + b * s * v[0], self.c[1] + a * co * u[1] + b * s * v[1]]
    }

    /// Integer cells `(x, y)` whose centres lie inside, clipped to `n_x × n_y`,
    /// in raster order.
    pub fn cells(&self, n_x: usize, n_y: usize) -> Vec<(usize, usize)> {
        let (x0, x1, y0, y1) = self.bounding_box();
        let xa = x0.floor().max(0.0) as i64;
        let xb = (x1.ceil() as i64).min(n_x as i64 - 1);
        let ya = y0.floor().max(0.0) as i64;
        let yb = (y1.ceil() as i64).min(n_y as i64 - 1);
        let mut out = Vec::new();
        for y in ya..=yb {
            for x in xa..=xb {
                if self.contains([x as f64, y as f64]) {
                    out.push((x as usize, y as usize));
                }
            }
        }
        out
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull vertices in counter-clockwise order (monotone chain).
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = points.to_vec();
    p.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap().then(a[1].partial_cmp(&b[1]).unwrap()));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: alloc::boxed::Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { alloc::boxed::Box::new(p.iter()) } else { alloc::boxed::Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

fn polygon_area(h: &[[f64; 2]]) -> f64 {
    let n = h.len();
    (0..n).map(|i| cross([0.0, 0.0], h[i], h[(i + 1) % n])).sum::<f64>().abs() * 0.5
}

/// Minimum-area ellipse enclosing `points`, to relative accuracy `tol`.
///
/// Interior points are discarded via the convex hull first. Degenerate
/// (collinear or fewer than three distinct) inputs are padded with eight
/// points on a circle of radius 0.5 around every point.
pub fn khachiyan_mvee(points: &[[f64; 2]], tol: f64) -> Result<Ellipse> {
    if points.is_empty() {
        return Err(invalid("cannot enclose an empty point set"));
    }
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(invalid("points must be finite"));
    }
    let mut hull = convex_hull(points);
    let scale = hull.iter().fold(0.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs())).max(1.0);
    if hull.len() < 3 || polygon_area(&hull) <= 1e-12 * scale * scale {
        let mut padded = Vec::with_capacity(points.len() * 8);
        for p in points {
            for k in 0..8 {
                let (s, c) = (k as f64 * PI / 4.0).sin_cos();
                padded.push([p[0] + 0.5 * c, p[1] + 0.5 * s]);
            }
        }
        hull = convex_hull(&padded);
    }
    solve(&hull, tol)
}

fn solve(p: &[[f64; 2]], tol: f64) -> Result<Ellipse> {
    let n = p.len();
    // centre the data for conditioning
    let mx = p.iter().map(|q| q[0]).sum::<f64>() / n as f64;
    let my = p.iter().map(|q| q[1]).sum::<f64>() / n as f64;
    let q: Vec<[f64; 3]> = p.iter().map(|v| [v[0] - mx, v[1] - my, 1.0]).collect();
    let d1 = 3.0; // lifted dimension d + 1
    let mut u = alloc::vec![1.0 / n as f64; n];
    let mut m = alloc::vec![0.0; n];
    const MAX_ITER: usize = 100_000;
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let mut x = [[0.0; 3]; 3];
        for (qi, &ui) in q.iter().zip(&u) {
            for r in 0..3 {
                for c in 0..3 {
                    x[r][c] += ui * qi[r] * qi[c];
                }
            }
        }
        let xi = inverse3(&x).ok_or_else(|| Error::Degenerate("singular ellipse moment matrix".into()))?;
        for (mi, qi) in m.iter_mut().zip(&q) {
            let mut acc = 0.0;
            for r in 0..3 {
                for c in 0..3 {
                    acc += qi[r] * xi[r][c] * qi[c];
                }
            }
            *mi = acc;
        }
        let (mut j, mut k) = (0, usize::MAX);
        for i in 0..n {
            if m[i] > m[j] {
                j = i;
            }
            if u[i] > 0.0 && (k == usize::MAX || m[i] < m[k]) {
                k = i;
            }
        }
        if m[j] <= d1 * (1.0 + tol) && m[k] >= d1 * (1.0 - tol) {
            converged = true;
            break;
        }
        if m[j] - d1 >= d1 - m[k] {
            let beta = (m[j] - d1) / (d1 * (m[j] - 1.0));
            u.iter_mut().for_each(|v| *v *= 1.0 - beta);
            u[j] += beta;
        } else {
            let beta = ((d1 - m[k]) / (d1 * (m[k] - 1.0))).min(u[k] / (1.0 - u[k]));
            u.iter_mut().for_each(|v| *v *= 1.0 + beta);
            u[k] -= beta;
            if u[k] < 1e-300 {
                u[k] = 0.0;
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence(alloc::format!("MVEE did not converge in {MAX_ITER} iterations")));
    }
    let cx: f64 = q.iter().zip(&u).map(|(v, w)| w * v[0]).sum();
    let cy: f64 = q.iter().zip(&u).map(|(v, w)| w * v[1]).sum();
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (v, w) in q.iter().zip(&u) {
        sxx += w * v[0] * v[0];
        sxy += w * v[0] * v[1];
        syy += w * v[1] * v[1];
    }
    sxx -= cx * cx;
    sxy -= cx * cy;
    syy -= cy * cy;
    let det = sxx * syy - sxy * sxy;
    if !(det > 0.0) {
        return Err(Error::Degenerate("ellipse covariance is singular".into()));
    }
    // E = (1/d) S⁻¹ with d = 2
    let mut e = Ellipse { c: [cx + mx, cy + my], exx: syy / det / 2.0, exy: -sxy / det / 2.0, eyy: sxx / det / 2.0 };
    // shrink-wrap so that every point is inside
    let worst = p.iter().map(|v| e.quad_form(*v)).fold(0.0, f64::max);
    if worst > 0.0 {
        e.exx /= worst;
        e.exy /= worst;
        e.eyy /= worst;
    }
    Ok(e)
}

fn inverse3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c00 = a[1][1] * a[2][2] - a[1][2] * a[2][1];
    let c01 = a[1][2] * a[2][0] - a[1][0] * a[2][2];
    let c02 = a[1][0] * a[2][1] - a[1][1] * a[2][0];
    let det = a[0][0] * c00 + a[0][1] * c01 + a[0][2] * c02;
    if !(det.abs() > 1e-300) {
        return None;
    }
    let inv = 1.0 / det;
    Some([
        [c00 * inv, (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * inv, (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * inv],
        [c01 * inv, (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * inv, (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * inv],
        [c02 * inv, (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * inv, (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * inv],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn circle_is_its_own_mvee() {
        let pts: Vec<[f64; 2]> = (0..16)
            .map(|k| {
                let a = k as f64 * PI / 8.0;
                [5.0 + a.cos(), 5.0 + a.sin()]
            })
            .collect();
        let e = khachiyan_mvee(&pts, 1e-4).unwrap();
        assert!((e.c[0] - 5.0).abs() < 1e-3 && (e.c[1] - 5.0).abs() < 1e-3);
        assert!((e.exx - 1.0).abs() < 1e-2 && e.exy.abs() < 1e-2 && (e.eyy - 1.0).abs() < 1e-2);
    }

    #[test]
    fn rectangle_corners() {
        let pts = [[1.0, 2.0], [-1.0, 2.0], [-1.0, -2.0], [1.0, -2.0]];
        let e = khachiyan_mvee(&pts, 1e-4).unwrap();
        let (a, b, _) = e.axes();
        assert!(e.c[0].abs() < 1e-6 && e.c[1].abs() < 1e-6);
        assert!((a / (2.0 * 2f64.sqrt()) - 1.0).abs() < 0.01);
        assert!((b / 2f64.sqrt() - 1.0).abs() < 0.01);
    }

    #[test]
    fn collinear_points_are_padded() {
        let pts: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, 2.0 * i as f64]).collect();
        let e = khachiyan_mvee(&pts, 1e-4).unwrap();
        assert!(pts.iter().all(|p| e.contains(*p)));
        let e1 = khachiyan_mvee(&[[3.0, 4.0]], 1e-4).unwrap();
        assert!(e1.contains([3.0, 4.0]));
    }

    #[test]
    fn axes_round_trip() {
        let g = 30f64.to_radians();
        let e = Ellipse::from_axes([0.0, 0.0], 4.0, 2.0, g);
        let (a, b, u) = e.axes();
        assert!((a - 4.0).abs() < 1e-9 && (b - 2.0).abs() < 1e-9);
        assert!((u[0] * -g.sin() + u[1] * g.cos()).abs() > 1.0 - 1e-12);
        let bb = Ellipse::from_axes([1.0, 1.0], 3.0, 1.0, 0.0).bounding_box();
        assert!((bb.0 + 0.0).abs() < 1e-12 && (bb.3 - 4.0).abs() < 1e-12);
        assert!(vec![e.boundary_point(0.3)].iter().all(|p| (e.quad_form(*p) - 1.0).abs() < 1e-12));
    }
}
