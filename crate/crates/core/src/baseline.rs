//! Rule-based comparison driver: RSS following distances with a gap-acceptance
//! lane-change rule, expressed through the environment's four actions.

use crate::env::{ActionId, Observation};
use crate::error::{Error, Result};
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RssParams {
    /// Response time ρ, s.
    pub response_time: f64,
    pub max_accel: f64,
    pub min_brake: f64,
    pub max_brake: f64,
}

impl Default for RssParams {
    fn default() -> Self {
        RssParams {
            response_time: 0.1,
            max_accel: 0.25,
            min_brake: 0.25,
            max_brake: 0.25,
        }
    }
}

impl RssParams {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [self.response_time, self.max_accel, self.min_brake, self.max_brake]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !all_positive || self.min_brake > self.max_brake {
            return Err(Error::InvalidConfig(format!(
                "RSS parameters must be positive with min_brake <= max_brake, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Minimum longitudinal gap keeping the rear car safe if the front car
/// brakes as hard as possible while the rear car accelerates for ρ and then
/// brakes gently.
pub fn rss_safe_distance(v_rear: f64, v_front: f64, p: &RssParams) -> f64 {
    let rho = p.response_time;
    let v_resp = v_rear + rho * p.max_accel;
    let d = v_rear * rho + 0.5 * p.max_accel * rho * rho + v_resp * v_resp / (2.0 * p.min_brake)
        - v_front * v_front / (2.0 * p.max_brake);
    d.max(0.0)
}

/// Decision cascade of the rule-based driver.
///
/// The observation has no rear gap for the opposite lane, so the
/// opposite-lane neighbor reading stands in for it.
pub fn rule_based_action(obs: &Observation, state: &VehicleState, p: &RssParams) -> ActionId {
    let v = obs.own_speed;
    let safe = rss_safe_distance(v, obs.vel_same_lane_neighbor, p);
    if obs.dist_same_lane_ahead < safe {
        let v_opp = obs.vel_opposite_lane_neighbor;
        let gap = obs.dist_opposite_lane_ahead;
        if gap > rss_safe_distance(v, v_opp, p) && gap > rss_safe_distance(v_opp, v, p) {
            return ActionId::ChangeLane;
        }
        return ActionId::Brake;
    }
    if obs.dist_same_lane_ahead > 2.0 * safe && v < state.limits.v_max {
        return ActionId::Accelerate;
    }
    ActionId::NoOp
}
