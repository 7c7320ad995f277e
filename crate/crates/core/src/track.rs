//! Cyclone tracks.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub t: i64,
    pub lon: f64,
    pub lat: f64,
    pub vorticity: f64,
}

/// A cyclone track with consecutive time steps `1..=ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StormTrack {
    pub id: String,
    pub points: Vec<TrackPoint>,
}

impl StormTrack {
    pub fn new(id: impl Into<String>, points: Vec<TrackPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("track must contain at least one point"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.t != i as i64 + 1 {
                return Err(invalid("non-consecutive time in track"));
            }
            if !(p.vorticity > 0.0 && p.vorticity.is_finite()) {
                return Err(invalid("track vorticity must be positive"));
            }
            if !p.lon.is_finite() || !p.lat.is_finite() {
                return Err(invalid("track location must be finite"));
            }
        }
        Ok(Self { id: id.into(), points })
    }

    /// Track duration ℓ.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point at time step `t` (1-based).
    pub fn at(&self, t: usize) -> &TrackPoint {
        &self.points[t - 1]
    }

    /// Time step of maximum vorticity; the earliest one on ties.
    pub fn t_max_vorticity(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.points.iter().enumerate() {
            if p.vorticity > self.points[best].vorticity {
                best = i;
            }
        }
        best + 1
    }

    /// Storm centre at step `t` in continuous grid coordinates.
    pub fn centre_cell(&self, grid: &Grid, t: usize) -> (f64, f64) {
        let p = self.at(t);
        grid.lonlat_to_cell(p.lon, p.lat)
    }

    /// Linearly interpolate a coarsely sampled track onto `factor` sub-steps
    /// per original interval. Location and vorticity are interpolated between
    /// neighbouring points; the first and last points are kept unchanged (no
    /// extrapolation beyond the observed endpoints). Times are renumbered
    /// `1..=ℓ'` with `ℓ' = (ℓ − 1)·factor + 1`.
    pub fn interpolate(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("interpolation factor must be positive"));
        }
        let mut out = Vec::with_capacity((self.len() - 1) * factor + 1);
        for w in self.points.windows(2) {
            for k in 0..factor {
                let f = k as f64 / factor as f64;
                out.push(TrackPoint {
                    t: out.len() as i64 + 1,
                    lon: w[0].lon + f * (w[1].lon - w[0].lon),
                    lat: w[0].lat + f * (w[1].lat - w[0].lat),
                    vorticity: w[0].vorticity + f * (w[1].vorticity - w[0].vorticity),
                });
            }
        }
        let last = self.points[self.len() - 1];
        out.push(TrackPoint { t: out.len() as i64 + 1, ..last });
        Self::new(self.id.clone(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pt(t: i64, lon: f64, v: f64) -> TrackPoint {
        TrackPoint { t, lon, lat: 50.0, vorticity: v }
    }

    #[test]
    fn validates_times_and_vorticity() {
        assert!(StormTrack::new("a", vec![pt(1, 0.0, 1.0), pt(3, 0.0, 1.0)]).is_err());
        assert!(StormTrack::new("a", vec![pt(1, 0.0, 0.0)]).is_err());
        assert!(StormTrack::new("a", vec![]).is_err());
        let t = StormTrack::new("a", vec![pt(1, 0.0, 1.0), pt(2, 1.0, 3.0), pt(3, 1.0, 3.0)]).unwrap();
        assert_eq!(t.t_max_vorticity(), 2);
    }

    #[test]
    fn interpolation_hits_midpoints() {
        let t = StormTrack::new("a", vec![pt(1, 0.0, 1.0), pt(2, 3.0, 4.0)]).unwrap();
        let h = t.interpolate(3).unwrap();
        assert_eq!(h.len(), 4);
        assert!((h.at(2).lon - 1.0).abs() < 1e-12 && (h.at(3).vorticity - 3.0).abs() < 1e-12);
        assert_eq!(h.at(4).lon, 3.0);
    }
}
