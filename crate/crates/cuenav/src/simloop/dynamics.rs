//! Drone translational/yaw dynamics: per-axis double integrator with a
//! first-order velocity response, linear drag, and seeded disturbance.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed::gaussian;

/// Body-frame velocity command: three linear velocities plus a yaw rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub yaw_rate: f64,
}

impl VelocityCommand {
    pub fn as_array(&self) -> [f64; 4] {
        [self.vx, self.vy, self.vz, self.yaw_rate]
    }
    pub fn from_array(a: [f64; 4]) -> Self {
        VelocityCommand {
            vx: a[0],
            vy: a[1],
            vz: a[2],
            yaw_rate: a[3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneState {
    pub pos: [f64; 3],
    pub vel: [f64; 3],
    pub yaw: f64,
    pub yaw_rate: f64,
    /// Command currently held by the actuators (zero-order hold between
    /// controller updates).
    pub held_command: VelocityCommand,
}

impl DroneState {
    pub fn at(pos: [f64; 3], yaw: f64) -> Self {
        DroneState {
            pos,
            vel: [0.0; 3],
            yaw,
            yaw_rate: 0.0,
            held_command: VelocityCommand::default(),
        }
    }

    pub fn pose(&self) -> crate::worldgen::camera::Pose {
        crate::worldgen::camera::Pose::new(self.pos[0], self.pos[1], self.pos[2], self.yaw)
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().chain(self.vel.iter()).all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.yaw_rate.is_finite()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub profile: String,
    /// Velocity response time constant (s).
    pub tau: f64,
    /// Linear drag coefficient (1/s).
    pub drag: f64,
    /// Velocity disturbance density (m/s per √s).
    pub disturbance_std: f64,
    /// Hard speed limit (m/s).
    pub max_speed: f64,
    /// Yaw-rate response time constant (s).
    pub yaw_tau: f64,
}

impl DynamicsConfig {
    /// Dynamics the training data is collected under.
    pub fn train_sim() -> Self {
        DynamicsConfig {
            profile: "train-sim".into(),
            tau: 0.15,
            drag: 0.05,
            disturbance_std: 0.0,
            max_speed: 1.0,
            yaw_tau: 0.1,
        }
    }

    /// Intentionally mismatched dynamics for evaluation: slower actuators,
    /// more drag, and a little turbulence.
    pub fn deploy_proxy() -> Self {
        DynamicsConfig {
            profile: "deploy-proxy".into(),
            tau: 0.35,
            drag: 0.30,
            disturbance_std: 0.015,
            max_speed: 1.0,
            yaw_tau: 0.30,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "train-sim" => Some(Self::train_sim()),
            "deploy-proxy" => Some(Self::deploy_proxy()),
            _ => None,
        }
    }
}

/// Advance the state by `dt` with the command interpreted in the current
/// body frame. Integration is the exact solution of the linear ODE
/// `v' = (u - v)/τ - drag·v`, so the discretization is stable for any `dt`.
pub fn step_dynamics(
    state: &DroneState,
    command: &VelocityCommand,
    dt: f64,
    cfg: &DynamicsConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> DroneState {
    assert!(dt > 0.0, "dt must be positive");
    let tau = cfg.tau.max(1e-9);
    let lambda = 1.0 / tau + cfg.drag;
    let decay = (-lambda * dt).exp();
    // World-frame commanded velocity.
    let (s, c) = state.yaw.sin_cos();
    let u = [
        c * command.vx - s * command.vy,
        s * command.vx + c * command.vy,
        command.vz,
    ];
    let mut pos = state.pos;
    let mut vel = state.vel;
    for a in 0..3 {
        let v_inf = u[a] / (tau * lambda);
        let dv = vel[a] - v_inf;
        pos[a] += v_inf * dt + dv * (1.0 - decay) / lambda;
        vel[a] = v_inf + dv * decay;
    }
    if let Some(rng) = rng {
        if cfg.disturbance_std > 0.0 {
            let scale = cfg.disturbance_std * dt.sqrt();
            for v in &mut vel {
                *v += scale * gaussian(rng);
            }
        }
    }
    // Speed limit.
    let speed = (vel[0] * vel[0] + vel[1] * vel[1] + vel[2] * vel[2]).sqrt();
    if speed > cfg.max_speed {
        let k = cfg.max_speed / speed;
        for v in &mut vel {
            *v *= k;
        }
    }
    // Yaw-rate first-order tracking with exact integration.
    let ytau = cfg.yaw_tau.max(1e-9);
    let ydecay = (-dt / ytau).exp();
    let dyr = state.yaw_rate - command.yaw_rate;
    let yaw = state.yaw + command.yaw_rate * dt + dyr * ytau * (1.0 - ydecay);
    let yaw_rate = command.yaw_rate + dyr * ydecay;

    DroneState {
        pos,
        vel,
        yaw: wrap_angle(yaw),
        yaw_rate,
        held_command: *command,
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_command_zero_velocity_stays_put() {
        let cfg = DynamicsConfig::train_sim();
        let s0 = DroneState::at([1.0, 2.0, 1.0], 0.3);
        let s1 = step_dynamics(&s0, &VelocityCommand::default(), 0.1, &cfg, None);
        assert_eq!(s0.pos, s1.pos);
        assert_eq!(s0.vel, s1.vel);
        assert_eq!(s0.yaw, s1.yaw);
    }

    #[test]
    fn tiny_tau_no_drag_advances_at_commanded_velocity() {
        let cfg = DynamicsConfig {
            tau: 1e-12,
            drag: 0.0,
            disturbance_std: 0.0,
            ..DynamicsConfig::train_sim()
        };
        let mut s = DroneState::at([0.0; 3], 0.0);
        let cmd = VelocityCommand {
            vx: 0.4,
            vy: -0.2,
            vz: 0.1,
            yaw_rate: 0.0,
        };
        let dt = 1.0 / 30.0;
        for _ in 0..30 {
            s = step_dynamics(&s, &cmd, dt, &cfg, None);
        }
        assert!((s.pos[0] - 0.4).abs() < 1e-9, "x: {}", s.pos[0]);
        assert!((s.pos[1] + 0.2).abs() < 1e-9, "y: {}", s.pos[1]);
        assert!((s.pos[2] - 0.1).abs() < 1e-9, "z: {}", s.pos[2]);
    }

    #[test]
    fn velocity_step_response_is_first_order() {
        // Against the analytic response v(t) = v_cmd (1 - exp(-t/tau)).
        let cfg = DynamicsConfig {
            tau: 0.2,
            drag: 0.0,
            disturbance_std: 0.0,
            ..DynamicsConfig::train_sim()
        };
        let cmd = VelocityCommand {
            vx: 0.5,
            ..Default::default()
        };
        let mut s = DroneState::at([0.0; 3], 0.0);
        let dt = 1.0 / 30.0;
        let mut t = 0.0;
        for _ in 0..90 {
            s = step_dynamics(&s, &cmd, dt, &cfg, None);
            t += dt;
            let expected = 0.5 * (1.0 - (-t / 0.2f64).exp());
            let rel = (s.vel[0] - expected).abs() / expected.max(1e-9);
            assert!(rel < 0.01, "t={t:.3}: {} vs {expected}", s.vel[0]);
        }
    }

    #[test]
    fn disturbance_is_seeded_and_reproducible() {
        let cfg = DynamicsConfig::deploy_proxy();
        let run = || {
            let mut rng = crate::seed::substream(9, "dynamics", 0);
            let mut s = DroneState::at([0.0; 3], 0.0);
            for _ in 0..50 {
                s = step_dynamics(
                    &s,
                    &VelocityCommand {
                        vx: 0.3,
                        ..Default::default()
                    },
                    1.0 / 30.0,
                    &cfg,
                    Some(&mut rng),
                );
            }
            s
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn speed_is_bounded() {
        let cfg = DynamicsConfig {
            max_speed: 0.5,
            ..DynamicsConfig::train_sim()
        };
        let mut s = DroneState::at([0.0; 3], 0.0);
        for _ in 0..200 {
            s = step_dynamics(
                &s,
                &VelocityCommand {
                    vx: 5.0,
                    vy: 5.0,
                    vz: 1.0,
                    yaw_rate: 0.0,
                },
                1.0 / 30.0,
                &cfg,
                None,
            );
            let speed = (s.vel[0].powi(2) + s.vel[1].powi(2) + s.vel[2].powi(2)).sqrt();
            assert!(speed <= 0.5 + 1e-9);
            assert!(s.is_finite());
        }
    }
}
