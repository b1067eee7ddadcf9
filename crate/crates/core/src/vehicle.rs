//! Vehicle command chain: goal-point steering, differential-drive kinematics,
//! actuation distortion, first-order motor lag and exact-arc pose integration.

use crate::geom::{wrap_angle, Point2};
use crate::track::LaneId;

/// Motor constant of the nominal actuation profile; `motor_k` scales wheel
/// speed by `motor_k / NOMINAL_MOTOR_K`.
pub const NOMINAL_MOTOR_K: f64 = 27.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading in `(-π, π]`.
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Body-frame linear and angular velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyTwist {
    pub v: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WheelCommand {
    pub v_left: f64,
    pub v_right: f64,
}

/// Per-vehicle actuation parameters subject to randomization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuationProfile {
    pub steer_factor: f64,
    pub motor_k: f64,
    pub gain: f64,
    pub trim: f64,
    /// Standard deviation of the per-step additive steering noise, radians.
    pub steer_error_sigma: f64,
}

impl Default for ActuationProfile {
    fn default() -> Self {
        ActuationProfile::NOMINAL
    }
}

impl ActuationProfile {
    pub const NOMINAL: ActuationProfile = ActuationProfile {
        steer_factor: 1.0,
        motor_k: NOMINAL_MOTOR_K,
        gain: 1.0,
        trim: 0.0,
        steer_error_sigma: 0.0,
    };

    pub fn is_valid(&self) -> bool {
        self.steer_factor > 0.0
            && self.motor_k > 0.0
            && self.gain > 0.0
            && self.steer_error_sigma >= 0.0
            && self.trim.is_finite()
    }

    /// Stacks a second distortion on top of this one. Composing with the
    /// nominal profile returns `self` bit-for-bit.
    pub fn compose(&self, bias: &ActuationProfile) -> ActuationProfile {
        ActuationProfile {
            steer_factor: self.steer_factor * bias.steer_factor,
            motor_k: self.motor_k * (bias.motor_k / NOMINAL_MOTOR_K),
            gain: self.gain * bias.gain,
            trim: self.trim + bias.trim,
            steer_error_sigma: self.steer_error_sigma.hypot(bias.steer_error_sigma),
        }
    }
}

/// Tunables of the vehicle model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    /// Wheel separation, meters.
    pub baseline: f64,
    /// Proportional steering gain, 1/s.
    pub k_steer: f64,
    pub omega_max: f64,
    /// Motor time constant, seconds. Zero disables the lag.
    pub tau: f64,
    /// Goal point distance ahead of the projection, meters.
    pub lookahead: f64,
    pub v_wheel_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            baseline: 0.1,
            k_steer: 4.0,
            omega_max: 4.0,
            tau: 0.1,
            lookahead: 0.15,
            v_wheel_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedLimits {
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub pose: Pose,
    pub twist: BodyTwist,
    /// Wheel speeds after the motor lag.
    pub wheel_actual: WheelCommand,
    pub lane_id: LaneId,
    pub commanded_speed: f64,
    pub limits: SpeedLimits,
}

/// Heading error towards `goal`, in `(-π, π]`. Returns 0 when the goal
/// coincides with the vehicle position.
pub fn steering_angle(pose: &Pose, goal: Point2) -> f64 {
    let d = goal - pose.position();
    if d.norm() < 1e-9 {
        return 0.0;
    }
    wrap_angle(d.y.atan2(d.x) - pose.theta)
}

/// Proportional steering law with randomized steering factor and additive
/// noise on the steering angle.
pub fn steer_to_twist(
    alpha: f64,
    speed: f64,
    profile: &ActuationProfile,
    noise_draw: f64,
    params: &VehicleParams,
) -> BodyTwist {
    let omega = params.k_steer * (profile.steer_factor * alpha + noise_draw);
    BodyTwist {
        v: speed,
        omega: omega.clamp(-params.omega_max, params.omega_max),
    }
}

pub fn inverse_kinematics(twist: BodyTwist, baseline: f64) -> WheelCommand {
    let half = twist.omega * baseline / 2.0;
    WheelCommand {
        v_left: twist.v - half,
        v_right: twist.v + half,
    }
}

pub fn forward_kinematics(cmd: WheelCommand, baseline: f64) -> BodyTwist {
    BodyTwist {
        v: (cmd.v_left + cmd.v_right) / 2.0,
        omega: (cmd.v_right - cmd.v_left) / baseline,
    }
}

/// Gain/trim/motor-constant distortion of commanded wheel speeds, clamped to
/// `±v_wheel_max`.
pub fn apply_actuation(cmd: WheelCommand, profile: &ActuationProfile, v_wheel_max: f64) -> WheelCommand {
    let scale = profile.motor_k / NOMINAL_MOTOR_K;
    WheelCommand {
        v_left: ((profile.gain - profile.trim) * scale * cmd.v_left).clamp(-v_wheel_max, v_wheel_max),
        v_right: ((profile.gain + profile.trim) * scale * cmd.v_right).clamp(-v_wheel_max, v_wheel_max),
    }
}

/// First-order relaxation of the wheel speeds towards `target`.
pub fn motor_lag(actual: WheelCommand, target: WheelCommand, dt: f64, tau: f64) -> WheelCommand {
    if tau <= 0.0 {
        return target;
    }
    let alpha = 1.0 - (-dt / tau).exp();
    WheelCommand {
        v_left: actual.v_left + (target.v_left - actual.v_left) * alpha,
        v_right: actual.v_right + (target.v_right - actual.v_right) * alpha,
    }
}

/// Exact integration of a constant twist over `dt`.
pub fn integrate_pose(pose: &Pose, twist: BodyTwist, dt: f64) -> Pose {
    let BodyTwist { v, omega } = twist;
    let theta = pose.theta;
    if omega.abs() < 1e-8 {
        return Pose {
            x: pose.x + v * dt * theta.cos(),
            y: pose.y + v * dt * theta.sin(),
            theta: wrap_angle(theta + omega * dt),
        };
    }
    let theta_next = theta + omega * dt;
    let r = v / omega;
    Pose {
        x: pose.x + r * (theta_next.sin() - theta.sin()),
        y: pose.y + r * (theta.cos() - theta_next.cos()),
        theta: wrap_angle(theta_next),
    }
}
