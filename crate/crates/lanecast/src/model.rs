//! The goal-conditioned graph network.
//!
//! One actor node, one goal node per proposed path, and one edge per goal.
//! Two rounds of edge/actor updates with mean aggregation, then per-edge heads
//! for the goal-based modes and an actor-node head for the goal-free mode.

use crate::features::{
    actor_history_features, build_raster, higher_order_state, kinematic_rollout, ActorState,
    KinematicRollout, PathRaster, FUTURE_LEN, RASTER_ALONG, RASTER_CHANNELS, RASTER_CROSS,
};
use crate::frenet::{CartesianTrajectory, PathFrameTrajectory};
use crate::geom::Point2;
use crate::lane_map::{propose_goal_paths, GoalPath, LaneMap};
use crate::tensor::{Array, ParamId, ParamStore, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fixed input scale factors; raw features are meter/second quantities with
/// very different ranges.
const HISTORY_SCALE: f64 = 0.1;
const SPEED_SCALE: f64 = 0.1;
const ACCEL_SCALE: f64 = 1.0 / 3.0;
const YAW_RATE_SCALE: f64 = 2.0;
const CURVATURE_SCALE: f64 = 5.0;
const ROLLOUT_ALONG_SCALE: f64 = 1.0 / 40.0;
const ROLLOUT_CROSS_SCALE: f64 = 0.2;
/// Trajectory heads emit normalized units, converted to meters on output.
const OUT_ALONG_SCALE: f64 = 40.0;
const OUT_CROSS_SCALE: f64 = 5.0;

/// Network sizes and mode counts. `temporal_modes` is the M in the joint
/// (N+1) x M mode layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub temporal_modes: usize,
    pub history_hidden: usize,
    pub state_hidden: usize,
    pub cnn_channels: [usize; 3],
    pub graph_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            temporal_modes: 1,
            history_hidden: 64,
            state_hidden: 32,
            cnn_channels: [16, 32, 32],
            graph_hidden: 64,
        }
    }
}

impl ModelConfig {
    /// Values per trajectory: 12 along-track then 12 cross-track.
    pub const TRAJ_VALUES: usize = 2 * FUTURE_LEN;

    /// Per-head output width: 1 spatial score, M temporal scores, M trajectories.
    pub fn head_width(&self) -> usize {
        1 + self.temporal_modes + self.temporal_modes * Self::TRAJ_VALUES
    }

    pub fn mode_count(&self, n_goals: usize) -> usize {
        (n_goals + 1) * self.temporal_modes
    }
}

struct Linear {
    w: ParamId,
    b: ParamId,
}

struct Mlp {
    l1: Linear,
    l2: Linear,
}

struct GruCell {
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wh: ParamId,
    uh: ParamId,
    bh: ParamId,
}

struct Conv {
    w: ParamId,
    b: ParamId,
}

struct Layout {
    gru: GruCell,
    state_mlp: Mlp,
    conv: [Conv; 3],
    edge_mlp1: Mlp,
    actor_mlp1: Mlp,
    edge_mlp2: Mlp,
    actor_mlp2: Mlp,
    edge_head: Linear,
    actor_head: Linear,
}

/// The prediction network: parameter store plus the layer layout.
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

/// Per-sample features consumed by the model; they do not depend on the
/// parameters, so callers cache them across epochs.
#[derive(Debug, Clone)]
pub struct SampleFeatures {
    pub history: Vec<Point2>,
    pub state: [f64; 4],
    pub paths: Vec<GoalPath>,
    pub rasters: Vec<PathRaster>,
    pub rollouts: Vec<KinematicRollout>,
}

impl SampleFeatures {
    pub fn goal_count(&self) -> usize {
        self.paths.len()
    }
}

/// Build all model inputs for one target actor in a scene.
pub fn build_sample_features(
    map: &LaneMap,
    scene_actors: &[ActorState],
    target: &ActorState,
) -> SampleFeatures {
    let paths = propose_goal_paths(map, target.centroid);
    let rasters = paths
        .iter()
        .map(|p| build_raster(p, scene_actors, target, map))
        .collect();
    let rollouts = paths.iter().map(|p| kinematic_rollout(target, p)).collect();
    SampleFeatures {
        history: actor_history_features(target),
        state: higher_order_state(target),
        paths,
        rasters,
        rollouts,
    }
}

/// Tape handles for the encoded scene graph.
pub struct GraphInputs {
    pub actor: Var,
    pub goals: Vec<Var>,
    pub edges: Vec<Var>,
}

/// Tape handles for everything the loss needs.
pub struct Forward {
    /// Pre-softmax spatial scores, goal modes first, goal-free last; len N+1.
    pub spatial_scores: Var,
    pub spatial_probs: Var,
    /// Per spatial mode: pre-softmax temporal scores and probabilities, len M.
    pub temporal_scores: Vec<Var>,
    pub temporal_probs: Vec<Var>,
    /// Joint categorical over K modes, goal-major with goal-free last.
    pub joint_probs: Var,
    /// Goal trajectories [N][M], each 24 values: 12 along then 12 cross, meters.
    pub goal_trajs: Vec<Vec<Var>>,
    /// Goal-free trajectories [M] in the actor-centric frame, same layout.
    pub free_trajs: Vec<Var>,
}

/// Plain-value snapshot of a forward pass.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub spatial_scores: Vec<f64>,
    pub temporal_scores: Vec<Vec<f64>>,
    pub joint_probs: Vec<f64>,
    /// [N][M] path-frame trajectories at t = 0.5 .. 6.0 s.
    pub goal_trajectories: Vec<Vec<PathFrameTrajectory>>,
    /// [M] actor-centric trajectories (x along heading, y left of it).
    pub free_trajectories: Vec<Vec<Point2>>,
}

/// Which spatial anchor a predicted mode used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialMode {
    Goal(usize),
    Free,
}

/// One world-frame output mode.
#[derive(Debug, Clone)]
pub struct PredictedMode {
    pub trajectory: CartesianTrajectory,
    pub probability: f64,
    pub spatial: SpatialMode,
    pub temporal: usize,
}

/// Full pipeline output for one actor, in joint-mode order.
#[derive(Debug, Clone)]
pub struct WorldPrediction {
    pub modes: Vec<PredictedMode>,
    pub goal_paths: Vec<GoalPath>,
}

/// Leaf bindings of every parameter on one tape, in parameter order.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }
}

impl Model {
    /// Fresh model with uniform fan-in initialization from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Model {
        assert!(config.temporal_modes >= 1);
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        fn linear(
            params: &mut ParamStore,
            rng: &mut ChaCha8Rng,
            name: &str,
            out: usize,
            inp: usize,
        ) -> Linear {
            let bound = 1.0 / (inp as f64).sqrt();
            Linear {
                w: params.add(format!("{name}.w"), Array::uniform(&[out, inp], bound, rng)),
                b: params.add(format!("{name}.b"), Array::zeros(&[out])),
            }
        }

        let hh = config.history_hidden;
        let gru = {
            let mut gate = |params: &mut ParamStore, rng: &mut ChaCha8Rng, g: &str| {
                let wb = 1.0 / (2.0f64).sqrt();
                let ub = 1.0 / (hh as f64).sqrt();
                (
                    params.add(format!("enc.gru.w{g}"), Array::uniform(&[hh, 2], wb, rng)),
                    params.add(format!("enc.gru.u{g}"), Array::uniform(&[hh, hh], ub, rng)),
                    params.add(format!("enc.gru.b{g}"), Array::zeros(&[hh])),
                )
            };
            let (wz, uz, bz) = gate(&mut params, &mut rng, "z");
            let (wr, ur, br) = gate(&mut params, &mut rng, "r");
            let (wh, uh, bh) = gate(&mut params, &mut rng, "h");
            GruCell {
                wz,
                uz,
                bz,
                wr,
                ur,
                br,
                wh,
                uh,
                bh,
            }
        };

        let sh = config.state_hidden;
        let state_mlp = Mlp {
            l1: linear(&mut params, &mut rng, "enc.state.l1", sh, 4),
            l2: linear(&mut params, &mut rng, "enc.state.l2", sh, sh),
        };

        let [c1, c2, c3] = config.cnn_channels;
        let mut conv_layer = |params: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, out: usize, inp: usize| {
            let bound = 1.0 / ((inp * 3) as f64).sqrt();
            Conv {
                w: params.add(format!("{name}.w"), Array::uniform(&[out, inp, 3, 1], bound, rng)),
                b: params.add(format!("{name}.b"), Array::zeros(&[out])),
            }
        };
        let conv = [
            conv_layer(&mut params, &mut rng, "enc.conv1", c1, RASTER_CHANNELS),
            conv_layer(&mut params, &mut rng, "enc.conv2", c2, c1),
            conv_layer(&mut params, &mut rng, "enc.conv3", c3, c2),
        ];

        let gh = config.graph_hidden;
        let actor_dim = hh + sh;
        let edge_dim = 2 * crate::features::ROLLOUT_LEN;
        fn mlp(
            params: &mut ParamStore,
            rng: &mut ChaCha8Rng,
            name: &str,
            hidden: usize,
            inp: usize,
        ) -> Mlp {
            Mlp {
                l1: linear(params, rng, &format!("{name}.l1"), hidden, inp),
                l2: linear(params, rng, &format!("{name}.l2"), hidden, hidden),
            }
        }
        let edge_mlp1 = mlp(&mut params, &mut rng, "graph1.edge", gh, actor_dim + edge_dim + c3);
        let actor_mlp1 = mlp(&mut params, &mut rng, "graph1.actor", gh, actor_dim + gh);
        let edge_mlp2 = mlp(&mut params, &mut rng, "graph2.edge", gh, gh + gh + c3);
        let actor_mlp2 = mlp(&mut params, &mut rng, "graph2.actor", gh, gh + gh);

        let head_w = config.head_width();
        let edge_head = linear(&mut params, &mut rng, "head.edge", head_w, gh);
        let actor_head = linear(&mut params, &mut rng, "head.actor", head_w, gh);

        Model {
            config,
            params,
            layout: Layout {
                gru,
                state_mlp,
                conv,
                edge_mlp1,
                actor_mlp1,
                edge_mlp2,
                actor_mlp2,
                edge_head,
                actor_head,
            },
        }
    }

    /// Create one tape leaf per parameter, in parameter order.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .params
            .values()
            .iter()
            .map(|a| tape.leaf(a.clone()))
            .collect();
        BoundParams { vars }
    }

    fn linear_fw(&self, tape: &mut Tape, bound: &BoundParams, lin: &Linear, x: Var) -> Var {
        let wx = tape.matmul(bound.var(lin.w), x);
        tape.add(wx, bound.var(lin.b))
    }

    fn mlp_fw(&self, tape: &mut Tape, bound: &BoundParams, mlp: &Mlp, x: Var) -> Var {
        let h = self.linear_fw(tape, bound, &mlp.l1, x);
        let h = tape.relu(h);
        self.linear_fw(tape, bound, &mlp.l2, h)
    }

    fn gru_step(&self, tape: &mut Tape, bound: &BoundParams, x: Var, h: Var) -> Var {
        let g = &self.layout.gru;
        let mut gate = |tape: &mut Tape, w, u, b, inp: Var| {
            let wx = tape.matmul(bound.var(w), x);
            let uh = tape.matmul(bound.var(u), inp);
            let s = tape.add(wx, uh);
            tape.add(s, bound.var(b))
        };
        let z = gate(tape, g.wz, g.uz, g.bz, h);
        let z = tape.sigmoid(z);
        let r = gate(tape, g.wr, g.ur, g.br, h);
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h);
        let s = gate(tape, g.wh, g.uh, g.bh, rh);
        let cand = tape.tanh(s);
        // h' = h + z * (cand - h)
        let delta = tape.sub(cand, h);
        let zd = tape.mul(z, delta);
        tape.add(h, zd)
    }

    /// Encode history, state, rasters, and rollouts into graph attributes.
    pub fn encode(&self, tape: &mut Tape, bound: &BoundParams, feats: &SampleFeatures) -> GraphInputs {
        // Actor node: GRU over the 20-step history plus the state MLP.
        let mut h = tape.leaf(Array::zeros(&[self.config.history_hidden]));
        for p in &feats.history {
            let x = tape.leaf(Array::vector(vec![p.x * HISTORY_SCALE, p.y * HISTORY_SCALE]));
            h = self.gru_step(tape, bound, x, h);
        }
        let [speed, long_acc, lat_acc, yaw] = feats.state;
        let state = tape.leaf(Array::vector(vec![
            speed * SPEED_SCALE,
            long_acc * ACCEL_SCALE,
            lat_acc * ACCEL_SCALE,
            yaw * YAW_RATE_SCALE,
        ]));
        let s = self.mlp_fw(tape, bound, &self.layout.state_mlp, state);
        let s = tape.relu(s);
        let actor = tape.concat(&[h, s]);

        // Goal nodes: CNN over each normalized raster, then global max pool.
        let goals = feats
            .rasters
            .iter()
            .map(|raster| {
                let x = tape.leaf(normalize_raster(raster));
                let mut y = x;
                for conv in &self.layout.conv {
                    y = tape.conv2d(y, bound.var(conv.w), bound.var(conv.b));
                    y = tape.relu(y);
                }
                let shape = tape.value(y).shape().to_vec();
                let pooled = tape.maxpool2d(y, shape[1], shape[2]);
                tape.reshape(pooled, &[self.config.cnn_channels[2]])
            })
            .collect();

        // Edges: flattened, normalized rollouts.
        let edges = feats
            .rollouts
            .iter()
            .map(|r| {
                let mut flat = Vec::with_capacity(2 * r.path_frame.len());
                for &(a, c) in &r.path_frame {
                    flat.push(a * ROLLOUT_ALONG_SCALE);
                    flat.push(c * ROLLOUT_CROSS_SCALE);
                }
                tape.leaf(Array::vector(flat))
            })
            .collect();

        GraphInputs { actor, goals, edges }
    }

    /// Two graph-update rounds plus the output heads.
    ///
    /// Goal latents are never updated; with zero goals the aggregated edge
    /// state is the zero vector and only the goal-free head contributes.
    pub fn graph_forward(&self, tape: &mut Tape, bound: &BoundParams, inputs: &GraphInputs) -> Forward {
        assert_eq!(inputs.goals.len(), inputs.edges.len());
        let n = inputs.goals.len();
        let m = self.config.temporal_modes;
        let gh = self.config.graph_hidden;

        // Round 1.
        let e1: Vec<Var> = (0..n)
            .map(|j| {
                let cat = tape.concat(&[inputs.actor, inputs.edges[j], inputs.goals[j]]);
                self.mlp_fw(tape, bound, &self.layout.edge_mlp1, cat)
            })
            .collect();
        let agg1 = if e1.is_empty() {
            tape.leaf(Array::zeros(&[gh]))
        } else {
            tape.mean_stack(&e1)
        };
        let cat = tape.concat(&[inputs.actor, agg1]);
        let a1 = self.mlp_fw(tape, bound, &self.layout.actor_mlp1, cat);

        // Round 2.
        let e2: Vec<Var> = (0..n)
            .map(|j| {
                let cat = tape.concat(&[a1, e1[j], inputs.goals[j]]);
                self.mlp_fw(tape, bound, &self.layout.edge_mlp2, cat)
            })
            .collect();
        let agg2 = if e2.is_empty() {
            tape.leaf(Array::zeros(&[gh]))
        } else {
            tape.mean_stack(&e2)
        };
        let cat = tape.concat(&[a1, agg2]);
        let a2 = self.mlp_fw(tape, bound, &self.layout.actor_mlp2, cat);

        // Heads: per-edge goal modes, actor-node goal-free mode.
        let mut score_parts = Vec::with_capacity(n + 1);
        let mut temporal_scores = Vec::with_capacity(n + 1);
        let mut goal_trajs = Vec::with_capacity(n);
        for latent in e2.iter() {
            let out = self.linear_fw(tape, bound, &self.layout.edge_head, *latent);
            let (score, temps, trajs) = self.split_head(tape, out);
            score_parts.push(score);
            temporal_scores.push(temps);
            goal_trajs.push(trajs);
        }
        let out = self.linear_fw(tape, bound, &self.layout.actor_head, a2);
        let (score, temps, free_trajs) = self.split_head(tape, out);
        score_parts.push(score);
        temporal_scores.push(temps);

        let spatial_scores = tape.concat(&score_parts);
        let spatial_probs = tape.softmax(spatial_scores);
        let temporal_probs: Vec<Var> = temporal_scores
            .iter()
            .map(|&t| tape.softmax(t))
            .collect();

        // Joint distribution: spatial probability times conditional temporal.
        let mut joint_parts = Vec::with_capacity(n + 1);
        for (j, &tp) in temporal_probs.iter().enumerate() {
            let sp = tape.slice(spatial_probs, j, 1);
            joint_parts.push(tape.mul_scalar(tp, sp));
        }
        let joint_probs = tape.concat(&joint_parts);
        debug_assert_eq!(tape.value(joint_probs).numel(), (n + 1) * m);

        Forward {
            spatial_scores,
            spatial_probs,
            temporal_scores,
            temporal_probs,
            joint_probs,
            goal_trajs,
            free_trajs,
        }
    }

    /// Split one head output into (spatial score, temporal scores, M trajectories).
    fn split_head(&self, tape: &mut Tape, out: Var) -> (Var, Var, Vec<Var>) {
        let m = self.config.temporal_modes;
        let score = tape.slice(out, 0, 1);
        let temps = tape.slice(out, 1, m);
        let trajs = (0..m)
            .map(|k| {
                let start = 1 + m + k * ModelConfig::TRAJ_VALUES;
                let a_raw = tape.slice(out, start, FUTURE_LEN);
                let c_raw = tape.slice(out, start + FUTURE_LEN, FUTURE_LEN);
                let a = tape.scale_const(a_raw, OUT_ALONG_SCALE);
                let c = tape.scale_const(c_raw, OUT_CROSS_SCALE);
                tape.concat(&[a, c])
            })
            .collect();
        (score, temps, trajs)
    }

    /// Encode + graph update in one call.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, feats: &SampleFeatures) -> Forward {
        let inputs = self.encode(tape, bound, feats);
        self.graph_forward(tape, bound, &inputs)
    }

    /// Detach a forward pass into plain values.
    pub fn prediction_values(&self, tape: &Tape, fwd: &Forward) -> Prediction {
        let traj_of = |v: Var| -> PathFrameTrajectory {
            let data = tape.value(v).data();
            PathFrameTrajectory {
                waypoints: (0..FUTURE_LEN)
                    .map(|i| ((i + 1) as f64 * 0.5, data[i], data[FUTURE_LEN + i]))
                    .collect(),
            }
        };
        Prediction {
            spatial_scores: tape.value(fwd.spatial_scores).data().to_vec(),
            temporal_scores: fwd
                .temporal_scores
                .iter()
                .map(|&v| tape.value(v).data().to_vec())
                .collect(),
            joint_probs: tape.value(fwd.joint_probs).data().to_vec(),
            goal_trajectories: fwd
                .goal_trajs
                .iter()
                .map(|row| row.iter().map(|&v| traj_of(v)).collect())
                .collect(),
            free_trajectories: fwd
                .free_trajs
                .iter()
                .map(|&v| {
                    let data = tape.value(v).data();
                    (0..FUTURE_LEN)
                        .map(|i| Point2::new(data[i], data[FUTURE_LEN + i]))
                        .collect()
                })
                .collect(),
        }
    }

    /// Full pipeline: propose goals, build features, run the network, and map
    /// every mode back to the world frame.
    pub fn predict(
        &self,
        map: &LaneMap,
        scene_actors: &[ActorState],
        target: &ActorState,
    ) -> WorldPrediction {
        let feats = build_sample_features(map, scene_actors, target);
        self.predict_from_features(&feats, target)
    }

    pub fn predict_from_features(
        &self,
        feats: &SampleFeatures,
        target: &ActorState,
    ) -> WorldPrediction {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let fwd = self.forward(&mut tape, &bound, feats);
        let pred = self.prediction_values(&tape, &fwd);
        let m = self.config.temporal_modes;
        let n = feats.goal_count();

        let mut modes = Vec::with_capacity((n + 1) * m);
        for (j, path) in feats.paths.iter().enumerate() {
            let frame = path.frame();
            for k in 0..m {
                let pf = &pred.goal_trajectories[j][k];
                // Early-training outputs can go slightly negative; clamp to
                // the path start rather than erroring out.
                let clamped = PathFrameTrajectory {
                    waypoints: pf
                        .waypoints
                        .iter()
                        .map(|&(t, a, c)| (t, a.max(0.0), c))
                        .collect(),
                };
                let trajectory = frame.unproject(&clamped).expect("non-negative along-track");
                modes.push(PredictedMode {
                    trajectory,
                    probability: pred.joint_probs[j * m + k],
                    spatial: SpatialMode::Goal(j),
                    temporal: k,
                });
            }
        }
        for k in 0..m {
            let pts = &pred.free_trajectories[k];
            let trajectory = CartesianTrajectory::new(
                pts.iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let world = target.centroid.add(p.rotate(target.heading));
                        ((i + 1) as f64 * 0.5, world)
                    })
                    .collect(),
            );
            modes.push(PredictedMode {
                trajectory,
                probability: pred.joint_probs[n * m + k],
                spatial: SpatialMode::Free,
                temporal: k,
            });
        }
        WorldPrediction {
            modes,
            goal_paths: feats.paths.clone(),
        }
    }
}

fn normalize_raster(raster: &PathRaster) -> Array {
    let mut data = raster.as_slice().to_vec();
    let plane = RASTER_ALONG * RASTER_CROSS;
    let scale_channel = |data: &mut [f64], ch: usize, s: f64| {
        for v in &mut data[ch * plane..(ch + 1) * plane] {
            *v *= s;
        }
    };
    scale_channel(&mut data, crate::features::CH_CURVATURE, CURVATURE_SCALE);
    scale_channel(&mut data, crate::features::CH_SPEED, SPEED_SCALE);
    Array::from_vec(&[RASTER_CHANNELS, RASTER_ALONG, RASTER_CROSS], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{ROLLOUT_LEN};

    fn tiny_config(m: usize) -> ModelConfig {
        ModelConfig {
            temporal_modes: m,
            history_hidden: 8,
            state_hidden: 8,
            cnn_channels: [4, 4, 8],
            graph_hidden: 8,
        }
    }

    fn random_features(n_goals: usize, seed: u64) -> SampleFeatures {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rnd = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let history = (0..crate::features::HISTORY_LEN)
            .map(|i| Point2::new(-(19 - i as i64) as f64 * 0.5 + rnd(-0.05, 0.05), rnd(-0.2, 0.2)))
            .collect();
        let state = [rnd(0.0, 15.0), rnd(-2.0, 2.0), rnd(-1.0, 1.0), rnd(-0.3, 0.3)];
        let mut paths = Vec::new();
        let mut rasters = Vec::new();
        let mut rollouts = Vec::new();
        for g in 0..n_goals {
            let dy = (g as f64 - 1.0) * 0.3;
            let dir = Point2::new(1.0, dy).normalized().unwrap();
            let points: Vec<Point2> = (0..=80).map(|i| dir.scale(i as f64)).collect();
            paths.push(GoalPath {
                points,
                source_lane_ids: vec![format!("lane{g}")],
            });
            // Hand-rolled raster content; enough to exercise the CNN.
            let mut data = vec![0.0; RASTER_CHANNELS * RASTER_ALONG * RASTER_CROSS];
            for v in data.iter_mut().step_by(7) {
                *v = rnd(-0.1, 0.4);
            }
            rasters.push(test_raster(data));
            rollouts.push(KinematicRollout {
                path_frame: (0..ROLLOUT_LEN)
                    .map(|k| (k as f64 * rnd(3.0, 6.0), rnd(-1.0, 1.0)))
                    .collect(),
            });
        }
        SampleFeatures {
            history,
            state,
            paths,
            rasters,
            rollouts,
        }
    }

    fn test_raster(data: Vec<f64>) -> PathRaster {
        PathRaster::from_flat(data)
    }

    #[test]
    fn mode_counts() {
        for (n, m) in [(0usize, 1usize), (1, 2), (3, 1), (5, 2)] {
            let model = Model::new(tiny_config(m), 1);
            let feats = random_features(n, 42);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let fwd = model.forward(&mut tape, &bound, &feats);
            let probs = tape.value(fwd.joint_probs);
            assert_eq!(probs.numel(), (n + 1) * m);
            let sum: f64 = probs.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
        }
    }

    #[test]
    fn single_mode_probability_one() {
        let model = Model::new(tiny_config(1), 3);
        let feats = random_features(0, 7);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let fwd = model.forward(&mut tape, &bound, &feats);
        assert_eq!(tape.value(fwd.joint_probs).data(), &[1.0]);
    }

    #[test]
    fn joint_factorizes_exactly() {
        let model = Model::new(tiny_config(2), 5);
        let feats = random_features(3, 9);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let fwd = model.forward(&mut tape, &bound, &feats);
        let joint = tape.value(fwd.joint_probs).data();
        let spatial = tape.value(fwd.spatial_probs).data();
        for j in 0..4 {
            let temporal = tape.value(fwd.temporal_probs[j]).data();
            for m in 0..2 {
                assert_eq!(joint[j * 2 + m], spatial[j] * temporal[m]);
            }
        }
    }

    #[test]
    fn identical_rasters_encode_identically() {
        let model = Model::new(tiny_config(1), 11);
        let mut feats = random_features(2, 13);
        feats.rasters[1] = feats.rasters[0].clone();
        feats.rollouts[1] = feats.rollouts[0].clone();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let inputs = model.encode(&mut tape, &bound, &feats);
        assert_eq!(
            tape.value(inputs.goals[0]).data(),
            tape.value(inputs.goals[1]).data()
        );
    }

    #[test]
    fn permutation_equivariance() {
        let model = Model::new(tiny_config(2), 21);
        let feats = random_features(4, 31);
        // Permutation sigma maps original index -> new position.
        let sigma = [2usize, 0, 3, 1];
        let mut permuted = feats.clone();
        for (src, &dst) in sigma.iter().enumerate() {
            permuted.paths[dst] = feats.paths[src].clone();
            permuted.rasters[dst] = feats.rasters[src].clone();
            permuted.rollouts[dst] = feats.rollouts[src].clone();
        }

        let mut tape_a = Tape::new();
        let bound_a = model.bind(&mut tape_a);
        let fwd_a = model.forward(&mut tape_a, &bound_a, &feats);
        let mut tape_b = Tape::new();
        let bound_b = model.bind(&mut tape_b);
        let fwd_b = model.forward(&mut tape_b, &bound_b, &permuted);

        let sa = tape_a.value(fwd_a.spatial_probs).data();
        let sb = tape_b.value(fwd_b.spatial_probs).data();
        for (src, &dst) in sigma.iter().enumerate() {
            assert!((sa[src] - sb[dst]).abs() < 1e-9);
            let ta = tape_a.value(fwd_a.goal_trajs[src][0]).data();
            let tb = tape_b.value(fwd_b.goal_trajs[dst][0]).data();
            for (x, y) in ta.iter().zip(tb) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        // Goal-free outputs unchanged.
        assert!((sa[4] - sb[4]).abs() < 1e-9);
        let fa = tape_a.value(fwd_a.free_trajs[0]).data();
        let fb = tape_b.value(fwd_b.free_trajs[0]).data();
        for (x, y) in fa.iter().zip(fb) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
