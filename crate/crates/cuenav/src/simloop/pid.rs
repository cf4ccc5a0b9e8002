//! Per-axis PID on the body-frame position error, plus a proportional yaw
//! alignment toward the waypoint bearing.

use serde::{Deserialize, Serialize};

use super::dynamics::VelocityCommand;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Per-axis clamp on the integral term (anti-windup).
    pub integral_max: f64,
    /// Proportional gain from waypoint bearing to yaw rate.
    pub yaw_kp: f64,
    pub max_yaw_rate: f64,
    /// Norm clamp on the linear velocity command.
    pub max_speed: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: 1.2,
            ki: 0.1,
            kd: 0.3,
            integral_max: 0.5,
            yaw_kp: 1.5,
            max_yaw_rate: 1.5,
            max_speed: 0.4,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PidState {
    integral: [f64; 3],
    prev_error: Option<[f64; 3]>,
}

impl PidState {
    pub fn reset(&mut self) {
        *self = PidState::default();
    }
}

/// One PID update on a body-frame 3D error. Returns the body-frame velocity
/// command; yaw rate aligns the heading with the error bearing when the
/// target is not directly underneath.
pub fn pid_update(
    error: [f64; 3],
    state: &mut PidState,
    dt: f64,
    gains: &PidGains,
) -> VelocityCommand {
    assert!(dt > 0.0, "dt must be positive");
    let mut u = [0.0; 3];
    let prev = state.prev_error;
    for a in 0..3 {
        state.integral[a] =
            (state.integral[a] + error[a] * dt).clamp(-gains.integral_max, gains.integral_max);
        let deriv = match prev {
            Some(p) => (error[a] - p[a]) / dt,
            None => 0.0,
        };
        u[a] = gains.kp * error[a] + gains.ki * state.integral[a] + gains.kd * deriv;
    }
    state.prev_error = Some(error);
    let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if norm > gains.max_speed {
        let k = gains.max_speed / norm;
        for v in &mut u {
            *v *= k;
        }
    }
    let horizontal = (error[0] * error[0] + error[1] * error[1]).sqrt();
    let yaw_rate = if horizontal > 0.05 {
        (gains.yaw_kp * error[1].atan2(error[0]))
            .clamp(-gains.max_yaw_rate, gains.max_yaw_rate)
    } else {
        0.0
    };
    VelocityCommand {
        vx: u[0],
        vy: u[1],
        vz: u[2],
        yaw_rate,
    }
}
