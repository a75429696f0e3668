//! Path-relative (along-track / cross-track) coordinate frame over polylines.
//!
//! The frame is defined on a non-differentiable polyline: a point's along-track
//! coordinate is the arclength of its closest-point projection, and its
//! cross-track coordinate is the signed perpendicular offset, positive to the
//! left of the direction of travel.

use crate::geom::{cumulative_lengths, Point2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrenetError {
    #[error("polyline is degenerate: {0}")]
    DegeneratePolyline(String),
    #[error("negative along-track value {0} rejected")]
    NegativeAlongTrack(f64),
}

/// A spatio-temporal trajectory with 2D waypoints in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianTrajectory {
    /// (t seconds, position), timestamps strictly increasing.
    pub waypoints: Vec<(f64, Point2)>,
}

impl CartesianTrajectory {
    pub fn new(waypoints: Vec<(f64, Point2)>) -> Self {
        debug_assert!(
            waypoints.windows(2).all(|w| w[1].0 > w[0].0),
            "timestamps must be strictly increasing"
        );
        CartesianTrajectory { waypoints }
    }

    pub fn points(&self) -> impl Iterator<Item = Point2> + '_ {
        self.waypoints.iter().map(|&(_, p)| p)
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }
}

/// A trajectory expressed in the frame of a reference path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFrameTrajectory {
    /// (t seconds, along-track m, cross-track m), timestamps strictly increasing.
    pub waypoints: Vec<(f64, f64, f64)>,
}

impl PathFrameTrajectory {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }
}

/// Result of projecting one point onto a polyline.
#[derive(Debug, Clone, Copy)]
pub struct PathProjection {
    /// Index of the segment holding the closest point (0-indexed, <= L-2).
    pub segment_index: usize,
    /// The closest point on the polyline (never past its geometric end).
    pub closest_point: Point2,
    /// Arclength of the closest point; extends past the total length when the
    /// query point projects beyond the final segment.
    pub along: f64,
    /// Signed perpendicular offset, positive to the left of travel.
    pub cross: f64,
}

/// Closest-point projection of `p` onto a polyline with per-vertex arclengths.
///
/// Tie-breaking: when two segments are equally close, the lower segment index
/// wins. Points past the final vertex project onto the extension of the last
/// segment, so `along` keeps growing past the end of the path.
pub fn project_point(points: &[Point2], cum: &[f64], p: Point2) -> PathProjection {
    assert!(points.len() >= 2, "polyline needs at least 2 points");
    let last_seg = points.len() - 2;

    let mut best_d2 = f64::INFINITY;
    let mut best = PathProjection {
        segment_index: 0,
        closest_point: points[0],
        along: 0.0,
        cross: 0.0,
    };

    for i in 0..=last_seg {
        let a = points[i];
        let b = points[i + 1];
        let ab = b.sub(a);
        let len2 = ab.dot(ab);
        if len2 < 1e-24 {
            continue;
        }
        let len = len2.sqrt();
        let t_raw = p.sub(a).dot(ab) / len2;
        // The final segment extends past its far vertex; every other segment
        // is clamped so the shared vertex belongs to the lower index.
        let t = if i == last_seg {
            t_raw.max(0.0)
        } else {
            t_raw.clamp(0.0, 1.0)
        };
        let on_line = a.lerp(b, t);
        // Distances compare against the clamped-on-path point so that the
        // beyond-end extension never outcompetes an interior segment.
        let on_path = a.lerp(b, t.min(1.0));
        let d2 = {
            let d = p.sub(on_path);
            d.dot(d)
        };
        if d2 + 1e-18 < best_d2 {
            best_d2 = d2;
            let dir = ab.scale(1.0 / len);
            let cross = p.sub(on_line).dot(dir.perp());
            best = PathProjection {
                segment_index: i,
                closest_point: on_path,
                along: cum[i] + t * len,
                cross,
            };
        }
    }
    best
}

/// A reference path plus its precomputed vertex arclengths.
#[derive(Debug, Clone)]
pub struct PathFrame<'a> {
    points: &'a [Point2],
    cum: Vec<f64>,
}

impl<'a> PathFrame<'a> {
    pub fn new(points: &'a [Point2]) -> Self {
        PathFrame {
            points,
            cum: cumulative_lengths(points),
        }
    }

    pub fn total_length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn project_point(&self, p: Point2) -> PathProjection {
        project_point(self.points, &self.cum, p)
    }

    /// Project a full trajectory into this path's frame.
    pub fn project(&self, traj: &CartesianTrajectory) -> PathFrameTrajectory {
        let waypoints = traj
            .waypoints
            .iter()
            .map(|&(t, p)| {
                let proj = self.project_point(p);
                (t, proj.along, proj.cross)
            })
            .collect();
        PathFrameTrajectory { waypoints }
    }

    /// Map path-frame waypoints back to world coordinates.
    ///
    /// Along-track values beyond the path length extrapolate along the final
    /// segment direction; negative values are rejected.
    pub fn unproject(&self, traj: &PathFrameTrajectory) -> Result<CartesianTrajectory, FrenetError> {
        let waypoints = traj
            .waypoints
            .iter()
            .map(|&(t, a, c)| Ok((t, self.unproject_point(a, c)?)))
            .collect::<Result<Vec<_>, FrenetError>>()?;
        Ok(CartesianTrajectory { waypoints })
    }

    pub fn unproject_point(&self, along: f64, cross: f64) -> Result<Point2, FrenetError> {
        if along < 0.0 {
            return Err(FrenetError::NegativeAlongTrack(along));
        }
        let pts = self.points;
        let cum = &self.cum;
        let last_seg = pts.len() - 2;
        // Largest segment index whose start arclength is <= along.
        let i = match cum.binary_search_by(|v| v.partial_cmp(&along).unwrap()) {
            Ok(k) => k.min(last_seg),
            Err(k) => k.saturating_sub(1).min(last_seg),
        };
        let a = pts[i];
        let b = pts[i + 1];
        let len = a.dist(b);
        let dir = b.sub(a).scale(1.0 / len);
        let base = a.add(dir.scale(along - cum[i]));
        Ok(base.add(dir.perp().scale(cross)))
    }
}

/// Project `traj` into the frame of `path_points`.
pub fn project(path_points: &[Point2], traj: &CartesianTrajectory) -> PathFrameTrajectory {
    PathFrame::new(path_points).project(traj)
}

/// Inverse of [`project`] for valid along-track values.
pub fn unproject(
    path_points: &[Point2],
    traj: &PathFrameTrajectory,
) -> Result<CartesianTrajectory, FrenetError> {
    PathFrame::new(path_points).unproject(traj)
}

/// Resample a polyline at exact arclength multiples of `spacing`.
///
/// The first point is preserved and the last original point is appended unless
/// the final sample already lands within 1e-9 of it.
pub fn resample_polyline(points: &[Point2], spacing: f64) -> Result<Vec<Point2>, FrenetError> {
    assert!(spacing > 0.0, "spacing must be positive");
    if points.len() < 2 {
        return Err(FrenetError::DegeneratePolyline(format!(
            "{} point(s), need at least 2",
            points.len()
        )));
    }
    let cum = cumulative_lengths(points);
    let total = *cum.last().unwrap();
    if total < 1e-12 {
        return Err(FrenetError::DegeneratePolyline(
            "zero total arclength".to_string(),
        ));
    }

    let mut out = Vec::with_capacity((total / spacing) as usize + 2);
    let mut seg = 0usize;
    let mut k = 0u64;
    loop {
        let s = k as f64 * spacing;
        if s > total + 1e-12 {
            break;
        }
        let s = s.min(total);
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let t = if seg_len > 1e-18 {
            (s - cum[seg]) / seg_len
        } else {
            0.0
        };
        out.push(points[seg].lerp(points[seg + 1], t));
        k += 1;
    }
    let last = *points.last().unwrap();
    if out.last().map(|p| p.dist(last) > 1e-9).unwrap_or(true) {
        out.push(last);
    }
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::oracle::project as oracle_project;
    use super::*;
    use crate::geom::polyline_length;

    fn straight_path(len_m: usize) -> Vec<Point2> {
        (0..=len_m).map(|i| Point2::new(i as f64, 0.0)).collect()
    }

    fn traj(points: &[(f64, f64)]) -> CartesianTrajectory {
        CartesianTrajectory::new(
            points
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| (i as f64 * 0.5, Point2::new(x, y)))
                .collect(),
        )
    }

    #[test]
    fn axis_aligned_projection() {
        let path = straight_path(10);
        let frame = PathFrame::new(&path);
        let proj = frame.project_point(Point2::new(3.5, 2.0));
        assert_eq!(proj.segment_index, 3);
        assert!((proj.closest_point.x - 3.5).abs() < 1e-12);
        assert!((proj.closest_point.y - 0.0).abs() < 1e-12);
        assert!((proj.along - 3.5).abs() < 1e-12);
        assert!((proj.cross - 2.0).abs() < 1e-12);
    }

    #[test]
    fn on_path_point_has_zero_cross() {
        let path = straight_path(10);
        let frame = PathFrame::new(&path);
        let proj = frame.project_point(Point2::new(4.25, 0.0));
        assert_eq!(proj.cross, 0.0);
        assert!((proj.along - 4.25).abs() < 1e-12);
    }

    #[test]
    fn final_vertex_maps_to_last_segment() {
        let path = straight_path(10);
        let frame = PathFrame::new(&path);
        let proj = frame.project_point(Point2::new(10.0, 0.0));
        assert_eq!(proj.segment_index, path.len() - 2);
    }

    #[test]
    fn shared_vertex_takes_lower_segment() {
        // L-shaped path; the corner vertex is shared by segments 9 and 10.
        let mut path = straight_path(10);
        for i in 1..=10 {
            path.push(Point2::new(10.0, i as f64));
        }
        let frame = PathFrame::new(&path);
        let proj = frame.project_point(Point2::new(10.0, 0.0));
        assert_eq!(proj.segment_index, 9);
    }

    #[test]
    fn corner_region_matches_dense_oracle() {
        let mut path = straight_path(10);
        for i in 1..=10 {
            path.push(Point2::new(10.0, i as f64));
        }
        let frame = PathFrame::new(&path);
        let p = Point2::new(11.0, -1.0);
        let proj = frame.project_point(p);
        let (a_o, c_o) = oracle_project(&path, p, 1e-4);
        assert!((proj.along - a_o).abs() < 1e-3, "{} vs {}", proj.along, a_o);
        assert!((proj.cross.abs() - c_o).abs() < 1e-3);
    }

    #[test]
    fn project_straight_offsets() {
        let path = straight_path(10);
        let t = traj(&[(1.0, 1.0), (2.0, 1.0)]);
        let pf = project(&path, &t);
        assert!((pf.waypoints[0].1 - 1.0).abs() < 1e-12);
        assert!((pf.waypoints[1].1 - 2.0).abs() < 1e-12);
        assert!((pf.waypoints[0].2 - 1.0).abs() < 1e-12);
        assert!((pf.waypoints[1].2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_on_path() {
        let path = straight_path(20);
        let t = traj(&[(0.0, 0.0), (3.0, 0.0), (7.5, 0.0), (12.0, 0.0)]);
        let pf = project(&path, &t);
        for w in &pf.waypoints {
            assert_eq!(w.2, 0.0);
        }
        assert!(pf.waypoints.windows(2).all(|w| w[1].1 > w[0].1));
    }

    #[test]
    fn mirrored_trajectory_flips_cross_sign() {
        let path = straight_path(20);
        let t = traj(&[(2.0, 1.5), (5.0, 0.5), (9.0, 1.0)]);
        let m = traj(&[(2.0, -1.5), (5.0, -0.5), (9.0, -1.0)]);
        let pf = project(&path, &t);
        let pm = project(&path, &m);
        for (a, b) in pf.waypoints.iter().zip(pm.waypoints.iter()) {
            assert_eq!(a.2, -b.2);
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn quarter_circle_matches_oracle() {
        let r = 20.0;
        let n = 100;
        let arc: Vec<Point2> = (0..=n)
            .map(|i| {
                let th = i as f64 / n as f64 * std::f64::consts::FRAC_PI_2;
                Point2::new(r * th.sin(), r * (1.0 - th.cos()))
            })
            .collect();
        let path = resample_polyline(&arc, 1.0).unwrap();
        // A chord crossing the arc.
        let chord = traj(&[(2.0, 0.5), (8.0, 2.0), (14.0, 6.0), (18.0, 11.0)]);
        let pf = project(&path, &chord);
        for (w, (_, p)) in pf.waypoints.iter().zip(chord.waypoints.iter()) {
            let (a_o, c_o) = oracle_project(&path, *p, 1e-4);
            assert!((w.1 - a_o).abs() < 1e-3);
            assert!((w.2.abs() - c_o).abs() < 1e-3);
        }
    }

    #[test]
    fn unproject_basics() {
        let path = straight_path(10);
        let frame = PathFrame::new(&path);
        let p = frame.unproject_point(3.5, 2.0).unwrap();
        assert!((p.x - 3.5).abs() < 1e-12);
        assert!((p.y - 2.0).abs() < 1e-12);
        assert!(frame.unproject_point(-0.1, 0.0).is_err());
    }

    #[test]
    fn unproject_extrapolates_past_end() {
        let path = straight_path(80);
        let frame = PathFrame::new(&path);
        let p = frame.unproject_point(82.0, 0.0).unwrap();
        assert!((p.x - 82.0).abs() < 1e-12);
        assert!((p.y - 0.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_near_smooth_path() {
        let r = 30.0;
        let arc: Vec<Point2> = (0..=180)
            .map(|i| {
                let th = i as f64 / 180.0 * std::f64::consts::FRAC_PI_2;
                Point2::new(r * th.sin(), r * (1.0 - th.cos()))
            })
            .collect();
        let path = resample_polyline(&arc, 1.0).unwrap();
        let frame = PathFrame::new(&path);
        let t = traj(&[(3.0, 1.2), (10.0, 2.5), (20.0, 8.0), (28.0, 14.0)]);
        let pf = frame.project(&t);
        let back = frame.unproject(&pf).unwrap();
        for ((_, p), (_, q)) in t.waypoints.iter().zip(back.waypoints.iter()) {
            assert!((p.x - q.x).abs() < 1e-9);
            assert!((p.y - q.y).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_counts() {
        let seg = [Point2::new(0.0, 0.0), Point2::new(10.0, 0.0)];
        let r = resample_polyline(&seg, 1.0).unwrap();
        assert_eq!(r.len(), 11);

        let short = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
        let r = resample_polyline(&short, 0.4).unwrap();
        let xs: Vec<f64> = r.iter().map(|p| p.x).collect();
        assert_eq!(r.len(), 4);
        assert!((xs[0] - 0.0).abs() < 1e-12);
        assert!((xs[1] - 0.4).abs() < 1e-12);
        assert!((xs[2] - 0.8).abs() < 1e-12);
        assert!((xs[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resample_quarter_circle_arclength() {
        let r = 10.0;
        let arc: Vec<Point2> = (0..=2000)
            .map(|i| {
                let th = i as f64 / 2000.0 * std::f64::consts::FRAC_PI_2;
                Point2::new(r * th.cos(), r * th.sin())
            })
            .collect();
        let res = resample_polyline(&arc, 0.1).unwrap();
        let total = polyline_length(&res);
        let exact = 0.5 * std::f64::consts::PI * r;
        assert!((total - exact).abs() / exact < 1e-3);
    }

    #[test]
    fn resample_rejects_degenerate() {
        let p = [Point2::new(1.0, 1.0)];
        assert!(resample_polyline(&p, 1.0).is_err());
        let z = [Point2::new(1.0, 1.0), Point2::new(1.0, 1.0)];
        assert!(resample_polyline(&z, 1.0).is_err());
    }
}
