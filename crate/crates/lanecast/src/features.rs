//! Model input construction: actor-history features, along-path scene rasters,
//! and path-relative kinematic rollouts.

use crate::frenet::{CartesianTrajectory, PathFrame};
use crate::geom::{point_in_polygon, Point2};
use crate::lane_map::{ControlKind, GoalPath, LaneMap};
use serde::{Deserialize, Serialize};

/// History samples: 2 s at 10 Hz, oldest first, last point = current centroid.
pub const HISTORY_LEN: usize = 20;
/// Future samples: 6 s at 2 Hz.
pub const FUTURE_LEN: usize = 12;
/// Rollout samples: t = 0.0, 0.5, ..., 6.0 s.
pub const ROLLOUT_LEN: usize = 13;
pub const ROLLOUT_DT: f64 = 0.5;

/// Raster extent: 80 rows along-track (1 m each) x 4 columns cross-track
/// covering [-2, +2) m, with the path between columns 1 and 2.
pub const RASTER_ALONG: usize = 80;
pub const RASTER_CROSS: usize = 4;
pub const RASTER_CHANNELS: usize = 8;
/// Raster channel order.
pub const CH_CURVATURE: usize = 0;
pub const CH_OCCUPANCY: usize = 1;
pub const CH_SPEED: usize = 2;
pub const CH_STOP_SIGN: usize = 3;
pub const CH_YIELD_SIGN: usize = 4;
pub const CH_LIGHT_GREEN: usize = 5;
pub const CH_LIGHT_RED: usize = 6;
pub const CH_LIGHT_OTHER: usize = 7;
/// Only this many nearest neighbors are rasterized.
pub const MAX_RASTER_ACTORS: usize = 20;

/// One tracked actor: current state plus history and optional labeled future.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActorState {
    pub id: u64,
    pub centroid: Point2,
    /// Heading, radians, world frame.
    pub heading: f64,
    /// Velocity vector, m/s.
    pub velocity: Point2,
    /// Acceleration vector, m/s^2.
    pub acceleration: Point2,
    /// Exactly [`HISTORY_LEN`] positions at 10 Hz, oldest first.
    pub history: Vec<Point2>,
    /// Ground-truth future at 2 Hz over 6 s, when labeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub future: Option<Vec<Point2>>,
    #[serde(default)]
    pub is_target: bool,
    #[serde(default)]
    pub is_parked: bool,
}

impl ActorState {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// Ground-truth future as a timed trajectory (t = 0.5 .. 6.0 s).
    pub fn future_trajectory(&self) -> Option<CartesianTrajectory> {
        self.future.as_ref().map(|pts| {
            CartesianTrajectory::new(
                pts.iter()
                    .enumerate()
                    .map(|(i, &p)| ((i + 1) as f64 * 0.5, p))
                    .collect(),
            )
        })
    }
}

/// The along-path scene raster for one goal path.
#[derive(Debug, Clone)]
pub struct PathRaster {
    /// Row-major `[channel][along][cross]`.
    data: Vec<f64>,
}

impl PathRaster {
    fn zeros() -> Self {
        PathRaster {
            data: vec![0.0; RASTER_CHANNELS * RASTER_ALONG * RASTER_CROSS],
        }
    }

    /// Wrap an existing flat `[channel][along][cross]` buffer.
    pub fn from_flat(data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            RASTER_CHANNELS * RASTER_ALONG * RASTER_CROSS,
            "raster buffer has the wrong size"
        );
        PathRaster { data }
    }

    #[inline]
    fn idx(channel: usize, along: usize, cross: usize) -> usize {
        (channel * RASTER_ALONG + along) * RASTER_CROSS + cross
    }

    pub fn get(&self, channel: usize, along: usize, cross: usize) -> f64 {
        self.data[Self::idx(channel, along, cross)]
    }

    fn set(&mut self, channel: usize, along: usize, cross: usize, v: f64) {
        self.data[Self::idx(channel, along, cross)] = v;
    }

    /// Flat `[channel][along][cross]` view for the CNN encoder.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Constant-acceleration extrapolation projected into a goal path's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicRollout {
    /// [`ROLLOUT_LEN`] (along, cross) pairs at 2 Hz starting at t = 0.
    pub path_frame: Vec<(f64, f64)>,
}

impl KinematicRollout {
    /// Flattened [a0, c0, a1, c1, ...] for use as graph edge features.
    pub fn flat(&self) -> Vec<f64> {
        self.path_frame.iter().flat_map(|&(a, c)| [a, c]).collect()
    }
}

/// Constant-acceleration world positions at the rollout timestamps.
pub fn kinematic_rollout_world(actor: &ActorState) -> Vec<Point2> {
    (0..ROLLOUT_LEN)
        .map(|k| {
            let t = k as f64 * ROLLOUT_DT;
            actor
                .centroid
                .add(actor.velocity.scale(t))
                .add(actor.acceleration.scale(0.5 * t * t))
        })
        .collect()
}

/// Project the constant-acceleration rollout into the path frame.
pub fn kinematic_rollout(actor: &ActorState, path: &GoalPath) -> KinematicRollout {
    let frame = path.frame();
    let path_frame = kinematic_rollout_world(actor)
        .into_iter()
        .map(|p| {
            let proj = frame.project_point(p);
            (proj.along, proj.cross)
        })
        .collect();
    KinematicRollout { path_frame }
}

/// Build the 8-channel along-path raster for one goal path.
///
/// Rows cover along-track `[l, l+1)` m; columns cover cross-track `[w-2, w-1)`
/// m. Curvature is the signed heading change per meter between consecutive
/// path segments, constant across each row. Occupancy and speed mark the
/// projected centroids of the [`MAX_RASTER_ACTORS`] scene actors closest to
/// the target (ties by id, target excluded). Traffic channels mark cells whose
/// center lies inside a control region of that kind.
pub fn build_raster(
    path: &GoalPath,
    scene_actors: &[ActorState],
    target: &ActorState,
    map: &LaneMap,
) -> PathRaster {
    let mut raster = PathRaster::zeros();
    let frame = path.frame();

    // Curvature rows: heading difference between segments l-1 and l.
    for l in 1..path.points.len().saturating_sub(1) {
        if l >= RASTER_ALONG {
            break;
        }
        let prev = path.points[l].sub(path.points[l - 1]);
        let next = path.points[l + 1].sub(path.points[l]);
        let dlen = path.points[l].dist(path.points[l + 1]);
        if dlen < 1e-9 {
            continue;
        }
        let dtheta = crate::geom::wrap_angle(next.angle() - prev.angle());
        let kappa = dtheta / dlen;
        for w in 0..RASTER_CROSS {
            raster.set(CH_CURVATURE, l, w, kappa);
        }
    }

    // Nearest scene actors by centroid distance to the target, ties by id.
    let mut neighbors: Vec<&ActorState> = scene_actors.iter().filter(|a| a.id != target.id).collect();
    neighbors.sort_by(|a, b| {
        let da = a.centroid.dist(target.centroid);
        let db = b.centroid.dist(target.centroid);
        da.partial_cmp(&db).unwrap().then_with(|| a.id.cmp(&b.id))
    });
    for actor in neighbors.into_iter().take(MAX_RASTER_ACTORS) {
        let proj = frame.project_point(actor.centroid);
        let Some((l, w)) = cell_of(proj.along, proj.cross) else {
            continue;
        };
        raster.set(CH_OCCUPANCY, l, w, 1.0);
        let speed = actor.speed();
        if speed > raster.get(CH_SPEED, l, w) {
            raster.set(CH_SPEED, l, w, speed);
        }
    }

    // Traffic-control channels: cell centers tested against every region.
    let kinds = [
        (ControlKind::StopSign, CH_STOP_SIGN),
        (ControlKind::YieldSign, CH_YIELD_SIGN),
        (ControlKind::LightGreen, CH_LIGHT_GREEN),
        (ControlKind::LightRed, CH_LIGHT_RED),
        (ControlKind::LightOther, CH_LIGHT_OTHER),
    ];
    let total_len = frame.total_length();
    for (kind, channel) in kinds {
        let regions: Vec<&Vec<Point2>> = map.controls_of_kind(kind).map(|c| &c.region).collect();
        if regions.is_empty() {
            continue;
        }
        for l in 0..RASTER_ALONG {
            let along = l as f64 + 0.5;
            if along > total_len {
                break;
            }
            for w in 0..RASTER_CROSS {
                let cross = w as f64 - 1.5;
                let center = frame.unproject_point(along, cross).expect("along >= 0");
                if regions.iter().any(|r| point_in_polygon(r, center)) {
                    raster.set(channel, l, w, 1.0);
                }
            }
        }
    }

    raster
}

/// Grid cell of a path-frame coordinate, or `None` when outside the raster.
fn cell_of(along: f64, cross: f64) -> Option<(usize, usize)> {
    if !(0.0..RASTER_ALONG as f64).contains(&along) || !(-2.0..2.0).contains(&cross) {
        return None;
    }
    Some((along.floor() as usize, (cross.floor() + 2.0) as usize))
}

/// History positions in the actor-centric frame (origin at the centroid,
/// +x along the heading), oldest first.
pub fn actor_history_features(actor: &ActorState) -> Vec<Point2> {
    assert_eq!(actor.history.len(), HISTORY_LEN, "history must hold 2 s at 10 Hz");
    actor
        .history
        .iter()
        .map(|&p| p.sub(actor.centroid).rotate(-actor.heading))
        .collect()
}

/// Higher-order motion state fed to the state encoder:
/// [speed, longitudinal acceleration, lateral acceleration, yaw rate].
pub fn higher_order_state(actor: &ActorState) -> [f64; 4] {
    let speed = actor.speed();
    let dir = actor
        .velocity
        .normalized()
        .unwrap_or_else(|| Point2::new(actor.heading.cos(), actor.heading.sin()));
    let long_acc = actor.acceleration.dot(dir);
    let lat_acc = actor.acceleration.dot(dir.perp());
    [speed, long_acc, lat_acc, yaw_rate_from_history(actor)]
}

/// Average heading change per second over the observed history.
fn yaw_rate_from_history(actor: &ActorState) -> f64 {
    let h = &actor.history;
    let first = h.windows(2).find(|w| w[0].dist(w[1]) > 1e-6);
    let last = h.windows(2).rev().find(|w| w[0].dist(w[1]) > 1e-6);
    match (first, last) {
        (Some(f), Some(l)) if f[0] != l[0] || f[1] != l[1] => {
            let h0 = f[1].sub(f[0]).angle();
            let h1 = l[1].sub(l[0]).angle();
            crate::geom::wrap_angle(h1 - h0) / 1.9
        }
        _ => 0.0,
    }
}
