//! Multi-agent driving environment.
//!
//! Agents follow waypoint lanes with a goal-point path follower and choose
//! one of four high-level actions each step. Parked cars are static
//! obstacles that take part in collision checks and perception.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Point2};
use crate::rng::{stream, SimRng};
use crate::track::{LaneId, LaneProjection, TrackMap};
use crate::vehicle::{
    apply_actuation, forward_kinematics, integrate_pose, inverse_kinematics, motor_lag,
    steer_to_twist, steering_angle, ActuationProfile, BodyTwist, Pose, SpeedLimits, VehicleParams,
    VehicleState, WheelCommand,
};

pub const OBS_DIM: usize = 9;
/// Per-agent block of the global state that is not part of the observation.
pub const KINEMATIC_DIM: usize = 4;
const SPAWN_ATTEMPTS: usize = 1000;

pub fn global_state_dim(n_agents: usize) -> usize {
    (OBS_DIM + KINEMATIC_DIM) * n_agents
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub n_agents: usize,
    pub n_parked: usize,
    pub max_steps: usize,
    pub dt: f64,
    pub v_min: f64,
    /// One entry per agent, or a single entry shared by all agents.
    pub v_max: Vec<f64>,
    pub accel: f64,
    pub perception_radius: f64,
    pub collision_radius: f64,
    pub seed: u64,
    pub vehicle: VehicleParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_agents: 3,
            n_parked: 3,
            max_steps: 400,
            dt: 0.1,
            v_min: 0.1,
            v_max: vec![0.3, 0.4, 0.5],
            accel: 0.25,
            perception_radius: 1.0,
            collision_radius: 0.09,
            seed: 0,
            vehicle: VehicleParams::default(),
        }
    }
}

impl EnvConfig {
    pub fn v_max_of(&self, agent: usize) -> f64 {
        if self.v_max.len() == 1 {
            self.v_max[0]
        } else {
            self.v_max[agent]
        }
    }

    pub fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    pub fn state_dim(&self) -> usize {
        global_state_dim(self.n_agents)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_agents == 0 {
            return bad("n_agents must be at least 1".into());
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.v_max.len() != 1 && self.v_max.len() != self.n_agents {
            return bad(format!(
                "v_max has {} entries for {} agents",
                self.v_max.len(),
                self.n_agents
            ));
        }
        let v_max_min = self.v_max.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(self.v_min >= 0.0 && self.v_min <= v_max_min) {
            return bad(format!("v_min {} must lie in [0, min(v_max)]", self.v_min));
        }
        if self.v_max.iter().any(|&v| v > self.vehicle.v_wheel_max) {
            return bad("v_max exceeds v_wheel_max".into());
        }
        if !(self.accel >= 0.0) || !(self.perception_radius > 0.0) || !(self.collision_radius > 0.0) {
            return bad("accel, perception_radius and collision_radius must be positive".into());
        }
        let v = &self.vehicle;
        if !(v.baseline > 0.0)
            || !(v.k_steer >= 0.0)
            || !(v.omega_max > 0.0)
            || !(v.tau >= 0.0)
            || !(v.lookahead >= 0.0)
            || !(v.v_wheel_max > 0.0)
        {
            return bad("vehicle parameters out of range".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionId {
    Accelerate = 0,
    Brake = 1,
    ChangeLane = 2,
    NoOp = 3,
}

impl ActionId {
    pub const ALL: [ActionId; 4] = [
        ActionId::Accelerate,
        ActionId::Brake,
        ActionId::ChangeLane,
        ActionId::NoOp,
    ];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ActionId> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionId::Accelerate => "accelerate",
            ActionId::Brake => "brake",
            ActionId::ChangeLane => "change_lane",
            ActionId::NoOp => "noop",
        }
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionId {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown action `{s}`"))
    }
}

/// Local view of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observation {
    pub steering_angle: f64,
    /// Signed lateral offset from the target lane centerline.
    pub lane_center_distance: f64,
    pub tangent_angle_error: f64,
    pub dist_same_lane_ahead: f64,
    pub dist_opposite_lane_ahead: f64,
    pub vel_same_lane_neighbor: f64,
    pub vel_opposite_lane_neighbor: f64,
    pub off_track: f64,
    pub own_speed: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [
            self.steering_angle,
            self.lane_center_distance,
            self.tangent_angle_error,
            self.dist_same_lane_ahead,
            self.dist_opposite_lane_ahead,
            self.vel_same_lane_neighbor,
            self.vel_opposite_lane_neighbor,
            self.off_track,
            self.own_speed,
        ]
    }

    pub fn from_array(a: &[f64; OBS_DIM]) -> Self {
        Observation {
            steering_angle: a[0],
            lane_center_distance: a[1],
            tangent_angle_error: a[2],
            dist_same_lane_ahead: a[3],
            dist_opposite_lane_ahead: a[4],
            vel_same_lane_neighbor: a[5],
            vel_opposite_lane_neighbor: a[6],
            off_track: a[7],
            own_speed: a[8],
        }
    }
}

/// Critic input: every agent's observation followed by every agent's
/// absolute `(x, y, θ, v)`, stored in agent index order.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    n_agents: usize,
    data: Vec<f64>,
}

impl GlobalState {
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    /// Agent-centric ordering: blocks are rotated so that `agent` comes first.
    /// The dimension is unchanged.
    pub fn for_agent(&self, agent: usize) -> Vec<f64> {
        let n = self.n_agents;
        let mut out = Vec::with_capacity(self.data.len());
        for k in 0..n {
            let j = (agent + k) % n;
            out.extend_from_slice(&self.data[j * OBS_DIM..(j + 1) * OBS_DIM]);
        }
        let base = n * OBS_DIM;
        for k in 0..n {
            let j = (agent + k) % n;
            out.extend_from_slice(&self.data[base + j * KINEMATIC_DIM..base + (j + 1) * KINEMATIC_DIM]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardTerms {
    /// Measured speed, m/s.
    pub v: f64,
    pub collision: bool,
    pub off_track: bool,
    pub lane_change: bool,
}

pub fn compute_reward(terms: &RewardTerms) -> f64 {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    terms.v - 5.0 * flag(terms.collision) - 5.0 * flag(terms.off_track) - 0.5 * flag(terms.lane_change)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub global_state: GlobalState,
    pub rewards: Vec<f64>,
    pub terms: Vec<RewardTerms>,
    pub done: bool,
}

/// Applies an action to the speed set-point and target lane.
pub fn action_semantics(state: &VehicleState, action: ActionId, dv: f64) -> VehicleState {
    let mut next = *state;
    let SpeedLimits { v_min, v_max } = state.limits;
    match action {
        ActionId::Accelerate => next.commanded_speed = (state.commanded_speed + dv).clamp(v_min, v_max),
        ActionId::Brake => next.commanded_speed = (state.commanded_speed - dv).clamp(v_min, v_max),
        ActionId::ChangeLane => next.lane_id = state.lane_id.other(),
        ActionId::NoOp => {}
    }
    next
}

/// Flags every car closer than `2 * collision_radius` to any other car.
pub fn detect_collisions(positions: &[Point2], collision_radius: f64) -> Vec<bool> {
    let limit = 2.0 * collision_radius;
    let mut flags = vec![false; positions.len()];
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            if positions[i].distance(positions[j]) < limit {
                flags[i] = true;
                flags[j] = true;
            }
        }
    }
    flags
}

/// Per-step overrides used to model an imperfect deployment.
#[derive(Debug, Clone, Default)]
pub struct StepOverrides {
    /// Agents whose motion update is skipped this step.
    pub skip_motion: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
struct CarGeometry {
    position: Point2,
    proj: [LaneProjection; 2],
    lane: LaneId,
    speed: f64,
}

#[derive(Debug, Clone)]
pub struct ParkedCar {
    pub pose: Pose,
}

#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    track: Arc<TrackMap>,
    agents: Vec<VehicleState>,
    profiles: Vec<ActuationProfile>,
    measured_speed: Vec<f64>,
    parked: Vec<ParkedCar>,
    parked_geometry: Vec<CarGeometry>,
    steps: usize,
    done: bool,
    noise_rng: SimRng,
}

impl Environment {
    pub fn new(config: EnvConfig, track: Arc<TrackMap>) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        Ok(Environment {
            config,
            track,
            agents: Vec::new(),
            profiles: Vec::new(),
            measured_speed: Vec::new(),
            parked: Vec::new(),
            parked_geometry: Vec::new(),
            steps: 0,
            done: true,
            noise_rng: stream(seed, &[0]),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn track(&self) -> &Arc<TrackMap> {
        &self.track
    }

    pub fn agents(&self) -> &[VehicleState] {
        &self.agents
    }

    pub fn profiles(&self) -> &[ActuationProfile] {
        &self.profiles
    }

    pub fn parked(&self) -> &[ParkedCar] {
        &self.parked
    }

    pub fn measured_speeds(&self) -> &[f64] {
        &self.measured_speed
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Starts a new episode. Cars are placed on random waypoints of random
    /// lanes, with every pairwise initial gap above three collision radii.
    pub fn reset(&mut self, profiles: &[ActuationProfile], seed: u64) -> Result<StepResult> {
        let cfg = &self.config;
        if profiles.len() != cfg.n_agents {
            return Err(Error::InvalidConfig(format!(
                "{} actuation profiles for {} agents",
                profiles.len(),
                cfg.n_agents
            )));
        }
        if let Some(p) = profiles.iter().find(|p| !p.is_valid()) {
            return Err(Error::InvalidConfig(format!("invalid actuation profile {p:?}")));
        }
        let mut spawn_rng = stream(seed, &[1]);
        self.noise_rng = stream(seed, &[2]);

        let n_cars = cfg.n_agents + cfg.n_parked;
        let min_gap = 3.0 * cfg.collision_radius;
        let mut placed: Vec<(Pose, LaneId)> = Vec::with_capacity(n_cars);
        for _ in 0..n_cars {
            let mut ok = None;
            for _ in 0..SPAWN_ATTEMPTS {
                let lane = if spawn_rng.random_bool(0.5) { LaneId::Outer } else { LaneId::Inner };
                let ring = self.track.lane(lane);
                let idx = spawn_rng.random_range(0..ring.len());
                let (a, b) = ring.segment(idx);
                let d = b - a;
                let pose = Pose::new(a.x, a.y, d.y.atan2(d.x));
                if placed.iter().all(|(p, _)| p.position().distance(pose.position()) > min_gap) {
                    ok = Some((pose, lane));
                    break;
                }
            }
            match ok {
                Some(p) => placed.push(p),
                None => return Err(Error::SpawnFailed { attempts: SPAWN_ATTEMPTS }),
            }
        }

        let v0 = cfg.v_min;
        self.agents = placed[..cfg.n_agents]
            .iter()
            .enumerate()
            .map(|(i, &(pose, lane))| VehicleState {
                pose,
                twist: BodyTwist { v: v0, omega: 0.0 },
                wheel_actual: WheelCommand { v_left: v0, v_right: v0 },
                lane_id: lane,
                commanded_speed: v0,
                limits: SpeedLimits {
                    v_min: cfg.v_min,
                    v_max: cfg.v_max_of(i),
                },
            })
            .collect();
        self.parked = placed[cfg.n_agents..]
            .iter()
            .map(|&(pose, _)| ParkedCar { pose })
            .collect();
        self.profiles = profiles.to_vec();
        self.measured_speed = vec![v0; cfg.n_agents];
        self.steps = 0;
        self.done = false;
        self.parked_geometry = self
            .parked
            .iter()
            .map(|p| self.geometry(p.pose.position(), 0.0))
            .collect();

        let flags = vec![false; cfg.n_agents];
        Ok(self.finish_step(&flags, false))
    }

    pub fn step(&mut self, actions: &[ActionId]) -> Result<StepResult> {
        self.step_with(actions, &StepOverrides::default())
    }

    /// One transition: action semantics, then path following and the
    /// actuation chain for each agent in index order, then collisions,
    /// off-track flags, rewards and fresh observations.
    pub fn step_with(&mut self, actions: &[ActionId], overrides: &StepOverrides) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        if actions.len() != self.config.n_agents {
            return Err(Error::InvalidConfig(format!(
                "{} actions for {} agents",
                actions.len(),
                self.config.n_agents
            )));
        }
        let dt = self.config.dt;
        let dv = self.config.accel * dt;
        let params = self.config.vehicle;
        let mut lane_change = vec![false; actions.len()];
        for (i, &action) in actions.iter().enumerate() {
            lane_change[i] = action == ActionId::ChangeLane;
            let mut state = action_semantics(&self.agents[i], action, dv);
            if overrides.skip_motion.get(i).copied().unwrap_or(false) {
                state.twist = BodyTwist::default();
                self.measured_speed[i] = 0.0;
                self.agents[i] = state;
                continue;
            }
            let profile = self.profiles[i];
            let proj = self.track.project(state.lane_id, state.pose.position());
            let goal = self.track.goal_point(state.lane_id, &proj, params.lookahead);
            let alpha = steering_angle(&state.pose, goal);
            let noise = if profile.steer_error_sigma > 0.0 {
                Normal::new(0.0, profile.steer_error_sigma)
                    .expect("validated sigma")
                    .sample(&mut self.noise_rng)
            } else {
                0.0
            };
            let twist_cmd = steer_to_twist(alpha, state.commanded_speed, &profile, noise, &params);
            let wheels = apply_actuation(inverse_kinematics(twist_cmd, params.baseline), &profile, params.v_wheel_max);
            state.wheel_actual = motor_lag(state.wheel_actual, wheels, dt, params.tau);
            state.twist = forward_kinematics(state.wheel_actual, params.baseline);
            state.pose = integrate_pose(&state.pose, state.twist, dt);
            self.measured_speed[i] = state.twist.v.clamp(0.0, params.v_wheel_max);
            self.agents[i] = state;
        }
        self.steps += 1;
        self.done = self.steps >= self.config.max_steps;
        Ok(self.finish_step(&lane_change, true))
    }

    fn geometry(&self, position: Point2, speed: f64) -> CarGeometry {
        let proj = [
            self.track.project(LaneId::Inner, position),
            self.track.project(LaneId::Outer, position),
        ];
        let lane = if proj[1].lateral_offset.abs() < proj[0].lateral_offset.abs() {
            LaneId::Outer
        } else {
            LaneId::Inner
        };
        CarGeometry {
            position,
            proj,
            lane,
            speed,
        }
    }

    fn finish_step(&self, lane_change: &[bool], score: bool) -> StepResult {
        let n = self.config.n_agents;
        let agent_geo: Vec<CarGeometry> = self
            .agents
            .iter()
            .zip(&self.measured_speed)
            .map(|(a, &v)| self.geometry(a.pose.position(), v))
            .collect();
        let all: Vec<CarGeometry> = agent_geo.iter().chain(&self.parked_geometry).copied().collect();
        let positions: Vec<Point2> = all.iter().map(|g| g.position).collect();
        let collisions = detect_collisions(&positions, self.config.collision_radius);
        let half = self.track.track_half_width();

        let mut observations = Vec::with_capacity(n);
        let mut terms = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        for i in 0..n {
            let g = &agent_geo[i];
            let off_track = g.proj[0].lateral_offset.abs().min(g.proj[1].lateral_offset.abs()) > half;
            observations.push(self.observation(i, &all, off_track));
            let t = RewardTerms {
                v: if score { self.measured_speed[i] } else { 0.0 },
                collision: score && collisions[i],
                off_track: score && off_track,
                lane_change: score && lane_change[i],
            };
            rewards.push(if score { compute_reward(&t) } else { 0.0 });
            terms.push(t);
        }

        let mut data = Vec::with_capacity(global_state_dim(n));
        for o in &observations {
            data.extend_from_slice(&o.to_array());
        }
        for (a, &v) in self.agents.iter().zip(&self.measured_speed) {
            data.extend_from_slice(&[a.pose.x, a.pose.y, a.pose.theta, v]);
        }
        StepResult {
            observations,
            global_state: GlobalState { n_agents: n, data },
            rewards,
            terms,
            done: self.done,
        }
    }

    fn observation(&self, i: usize, cars: &[CarGeometry], off_track: bool) -> Observation {
        let me = &cars[i];
        let state = &self.agents[i];
        let lane = state.lane_id;
        let own = me.proj[lane.index()];
        let goal = self.track.goal_point(lane, &own, self.config.vehicle.lookahead);
        let radius = self.config.perception_radius;
        let same = nearest_ahead(&self.track, cars, i, lane, radius);
        let opposite = nearest_ahead(&self.track, cars, i, lane.other(), radius);
        Observation {
            steering_angle: steering_angle(&state.pose, goal),
            lane_center_distance: own.lateral_offset,
            tangent_angle_error: wrap_angle(state.pose.theta - own.tangent_angle),
            dist_same_lane_ahead: same.0,
            dist_opposite_lane_ahead: opposite.0,
            vel_same_lane_neighbor: same.1,
            vel_opposite_lane_neighbor: opposite.1,
            off_track: if off_track { 1.0 } else { 0.0 },
            own_speed: state.commanded_speed,
        }
    }

    /// Builds the observation of agent `i` from the current world.
    pub fn build_observation(&self, i: usize) -> Observation {
        let agent_geo: Vec<CarGeometry> = self
            .agents
            .iter()
            .zip(&self.measured_speed)
            .map(|(a, &v)| self.geometry(a.pose.position(), v))
            .collect();
        let all: Vec<CarGeometry> = agent_geo.iter().chain(&self.parked_geometry).copied().collect();
        let off = self.track.is_off_track(all[i].position);
        self.observation(i, &all, off)
    }

    /// Replaces the world state. Used to construct specific scenes.
    pub fn set_scene(&mut self, agents: Vec<VehicleState>, parked: Vec<Pose>) -> Result<StepResult> {
        if agents.len() != self.config.n_agents {
            return Err(Error::InvalidConfig("agent count does not match config".into()));
        }
        self.measured_speed = agents.iter().map(|a| a.twist.v.max(0.0)).collect();
        self.agents = agents;
        if self.profiles.len() != self.agents.len() {
            self.profiles = vec![ActuationProfile::NOMINAL; self.agents.len()];
        }
        self.parked = parked.into_iter().map(|pose| ParkedCar { pose }).collect();
        self.parked_geometry = self
            .parked
            .iter()
            .map(|p| self.geometry(p.pose.position(), 0.0))
            .collect();
        self.steps = 0;
        self.done = false;
        let flags = vec![false; self.agents.len()];
        Ok(self.finish_step(&flags, false))
    }
}

/// Arc distance and speed of the closest car ahead of car `me` within
/// `radius`, measured along `lane`. Sentinel `(radius, 0)` when none.
fn nearest_ahead(track: &TrackMap, cars: &[CarGeometry], me: usize, lane: LaneId, radius: f64) -> (f64, f64) {
    let length = track.lane(lane).length();
    let origin = cars[me].proj[lane.index()].arc_position;
    let mut best = (radius, 0.0);
    for (j, c) in cars.iter().enumerate() {
        if j == me || c.lane != lane {
            continue;
        }
        let gap = (c.proj[lane.index()].arc_position - origin).rem_euclid(length);
        if gap <= radius && gap < best.0 {
            best = (gap, c.speed);
        }
    }
    best
}
