//! Ground-truth mode targets: goal auto-labeling from the observed future,
//! temporal-mode selection, and the joint mode-target distribution.

use crate::frenet::CartesianTrajectory;
use crate::geom::Point2;
use crate::lane_map::GoalPath;

/// Paths whose max cross-track deviation ties the best one within this many
/// meters are all labeled as followed.
pub const TIE_TOLERANCE: f64 = 0.1;
/// A path counts as followed only if the best deviation is under this, meters.
pub const FOLLOW_THRESHOLD: f64 = 5.0;

/// Target distribution over the N goal modes plus the goal-free mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialTarget {
    pub goal_probs: Vec<f64>,
    pub goal_free_prob: f64,
}

impl SpatialTarget {
    /// Number of goals with nonzero probability.
    pub fn followed_count(&self) -> usize {
        self.goal_probs.iter().filter(|&&p| p > 0.0).count()
    }

    pub fn is_goal_free(&self) -> bool {
        self.goal_free_prob == 1.0
    }
}

/// Joint target over K = (N+1)*M modes, goal-major with goal-free last.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTarget {
    pub joint_probs: Vec<f64>,
}

/// Maximum absolute cross-track deviation of `future` from `path`.
pub fn max_cross_track_deviation(path: &GoalPath, future: &CartesianTrajectory) -> f64 {
    let pf = path.frame().project(future);
    pf.waypoints
        .iter()
        .map(|&(_, _, c)| c.abs())
        .fold(0.0, f64::max)
}

/// Auto-label which goal paths the observed future follows.
///
/// All paths within [`TIE_TOLERANCE`] of the minimum deviation are selected and
/// share probability 1/G, provided the minimum is under [`FOLLOW_THRESHOLD`];
/// otherwise (or with no paths at all) the goal-free mode gets probability 1.
pub fn label_spatial(paths: &[GoalPath], future: &CartesianTrajectory) -> SpatialTarget {
    assert!(!future.is_empty(), "future trajectory must be nonempty");
    if paths.is_empty() {
        return SpatialTarget {
            goal_probs: vec![],
            goal_free_prob: 1.0,
        };
    }
    let devs: Vec<f64> = paths
        .iter()
        .map(|p| max_cross_track_deviation(p, future))
        .collect();
    let min_dev = devs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_dev < FOLLOW_THRESHOLD {
        let selected: Vec<bool> = devs.iter().map(|&d| d <= min_dev + TIE_TOLERANCE).collect();
        let g = selected.iter().filter(|&&s| s).count();
        let p = 1.0 / g as f64;
        SpatialTarget {
            goal_probs: selected.iter().map(|&s| if s { p } else { 0.0 }).collect(),
            goal_free_prob: 0.0,
        }
    } else {
        SpatialTarget {
            goal_probs: vec![0.0; paths.len()],
            goal_free_prob: 1.0,
        }
    }
}

/// Index of the predicted trajectory closest to the ground truth by average
/// displacement; ties break to the lowest index. Works in any 2D frame as
/// long as both sides use the same one.
pub fn label_temporal(predicted: &[Vec<Point2>], ground_truth: &[Point2]) -> usize {
    assert!(!predicted.is_empty(), "need at least one temporal mode");
    let mut best = 0;
    let mut best_ade = f64::INFINITY;
    for (i, traj) in predicted.iter().enumerate() {
        debug_assert_eq!(traj.len(), ground_truth.len());
        let ade = traj
            .iter()
            .zip(ground_truth)
            .map(|(p, q)| p.dist(*q))
            .sum::<f64>()
            / ground_truth.len() as f64;
        if ade < best_ade {
            best_ade = ade;
            best = i;
        }
    }
    best
}

/// Joint target: spatial probability times a one-hot temporal indicator.
///
/// `temporal_indices[j]` selects the target temporal mode of spatial mode `j`
/// (goal modes 0..N, goal-free at index N); entries for zero-probability
/// spatial modes are ignored.
pub fn build_mode_target(
    spatial: &SpatialTarget,
    temporal_indices: &[usize],
    temporal_modes: usize,
) -> ModeTarget {
    let n = spatial.goal_probs.len();
    assert_eq!(temporal_indices.len(), n + 1, "one temporal index per spatial mode");
    assert!(temporal_modes >= 1);
    let mut joint = Vec::with_capacity((n + 1) * temporal_modes);
    for j in 0..=n {
        let sp = if j < n {
            spatial.goal_probs[j]
        } else {
            spatial.goal_free_prob
        };
        for m in 0..temporal_modes {
            let hit = sp > 0.0 && temporal_indices[j] == m;
            joint.push(if hit { sp } else { 0.0 });
        }
    }
    ModeTarget { joint_probs: joint }
}
