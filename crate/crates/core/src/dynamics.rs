//! Vehicle kinematics and the three benchmark action spaces.
//!
//! Continuous control integrates a kinematic bicycle model exactly over one
//! step (constant speed and yaw rate arc). Pose actions are clamped to what
//! the same bicycle could realize in one step, and their acceleration and jerk
//! come from finite differences of realized motion.

use crate::geom::{wrap_angle, OrientedRect, Pose, Vec2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_LENGTH: f64 = 4.5;
pub const DEFAULT_WIDTH: f64 = 1.8;

#[derive(Debug, Error, PartialEq)]
pub enum ActionError {
    #[error("{field} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("{0} is not finite")]
    NotFinite(&'static str),
}

/// Longitudinal / lateral pair in the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LongLat {
    pub long: f64,
    pub lat: f64,
}

impl LongLat {
    pub const ZERO: LongLat = LongLat { long: 0.0, lat: 0.0 };

    pub fn new(long: f64, lat: f64) -> Self {
        Self { long, lat }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    /// Radians in (-pi, pi].
    pub heading: f64,
    /// m/s, never negative.
    pub speed: f64,
    /// Realized world-frame velocity of the last step.
    pub velocity: Vec2,
    pub accel: LongLat,
    pub jerk: LongLat,
    pub length: f64,
    pub width: f64,
    pub step: u64,
}

impl VehicleState {
    pub fn new(position: Vec2, heading: f64, speed: f64) -> Self {
        let heading = wrap_angle(heading);
        Self {
            position,
            heading,
            speed,
            velocity: Vec2::from_angle(heading) * speed,
            accel: LongLat::ZERO,
            jerk: LongLat::ZERO,
            length: DEFAULT_LENGTH,
            width: DEFAULT_WIDTH,
            step: 0,
        }
    }

    pub fn with_dimensions(mut self, length: f64, width: f64) -> Self {
        self.length = length;
        self.width = width;
        self
    }

    pub fn pose(&self) -> Pose {
        Pose {
            position: self.position,
            heading: self.heading,
        }
    }

    pub fn forward(&self) -> Vec2 {
        Vec2::from_angle(self.heading)
    }
}

/// Footprint rectangle centered on the vehicle position.
pub fn footprint(state: &VehicleState) -> OrientedRect {
    OrientedRect::new(state.position, state.heading, state.length, state.width)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    /// Displacement and heading change in the ego frame (x forward, y left).
    RelativeTargetPose { dx: f64, dy: f64, dheading: f64 },
    /// Absolute target pose in the world frame.
    TargetPose { x: f64, y: f64, heading: f64 },
    Continuous {
        throttle: f64,
        brake: f64,
        steering: f64,
    },
}

impl Action {
    pub const ZERO_RELATIVE: Action = Action::RelativeTargetPose {
        dx: 0.0,
        dy: 0.0,
        dheading: 0.0,
    };

    pub fn validate(&self) -> Result<(), ActionError> {
        let finite = |name, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ActionError::NotFinite(name))
            }
        };
        let range = |field, value: f64, lo, hi| {
            if (lo..=hi).contains(&value) {
                Ok(())
            } else {
                Err(ActionError::OutOfRange {
                    field,
                    value,
                    lo,
                    hi,
                })
            }
        };
        match *self {
            Action::RelativeTargetPose { dx, dy, dheading } => {
                finite("dx", dx)?;
                finite("dy", dy)?;
                finite("dheading", dheading)
            }
            Action::TargetPose { x, y, heading } => {
                finite("x", x)?;
                finite("y", y)?;
                finite("heading", heading)
            }
            Action::Continuous {
                throttle,
                brake,
                steering,
            } => {
                range("throttle", throttle, 0.0, 1.0)?;
                range("brake", brake, 0.0, 1.0)?;
                range("steering", steering, -1.0, 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsLimits {
    pub max_speed: f64,
    pub max_accel: f64,
    pub max_decel: f64,
    pub max_steer_angle: f64,
    pub wheelbase: f64,
}

impl Default for DynamicsLimits {
    fn default() -> Self {
        Self {
            max_speed: 22.0,
            max_accel: 3.0,
            max_decel: 6.0,
            max_steer_angle: 0.5,
            wheelbase: 2.8,
        }
    }
}

impl DynamicsLimits {
    pub fn validate(&self) -> bool {
        [
            self.max_speed,
            self.max_accel,
            self.max_decel,
            self.max_steer_angle,
            self.wheelbase,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0)
    }

    /// Yaw rate bound of the bicycle model at `speed`.
    pub fn max_yaw_rate(&self, speed: f64) -> f64 {
        speed * self.max_steer_angle.tan() / self.wheelbase
    }
}

/// Fills velocity, speed, acceleration and jerk of the new state by finite
/// differences against `prev`.
fn finish(prev: &VehicleState, position: Vec2, heading: f64, velocity: Vec2, dt: f64) -> VehicleState {
    let heading = wrap_angle(heading);
    let a_world = (velocity - prev.velocity) * (1.0 / dt);
    let f = Vec2::from_angle(heading);
    let accel = LongLat::new(a_world.dot(f), a_world.dot(f.perp()));
    let jerk = LongLat::new(
        (accel.long - prev.accel.long) / dt,
        (accel.lat - prev.accel.lat) / dt,
    );
    VehicleState {
        position,
        heading,
        speed: velocity.norm(),
        velocity,
        accel,
        jerk,
        length: prev.length,
        width: prev.width,
        step: prev.step + 1,
    }
}

/// Kinematic bicycle update. Inputs are clamped to their valid ranges.
pub fn step_continuous(
    state: &VehicleState,
    throttle: f64,
    brake: f64,
    steering: f64,
    limits: &DynamicsLimits,
    dt: f64,
) -> VehicleState {
    let throttle = throttle.clamp(0.0, 1.0);
    let brake = brake.clamp(0.0, 1.0);
    let steering = steering.clamp(-1.0, 1.0);
    let a = throttle * limits.max_accel - brake * limits.max_decel;
    let v = (state.speed + a * dt).clamp(0.0, limits.max_speed);
    let delta = steering * limits.max_steer_angle;
    let yaw_rate = v * delta.tan() / limits.wheelbase;
    let h0 = state.heading;
    let h1 = h0 + yaw_rate * dt;
    let position = if yaw_rate.abs() > 1e-12 {
        let r = v / yaw_rate;
        state.position + Vec2::new(r * (h1.sin() - h0.sin()), r * (h0.cos() - h1.cos()))
    } else {
        state.position + Vec2::from_angle(h0) * (v * dt)
    };
    finish(state, position, h1, Vec2::from_angle(h1) * v, dt)
}

/// Expresses a world-frame target pose relative to `state`.
pub fn to_relative(state: &VehicleState, x: f64, y: f64, heading: f64) -> (f64, f64, f64) {
    let d = (Vec2::new(x, y) - state.position).rotate(-state.heading);
    (d.x, d.y, wrap_angle(heading - state.heading))
}

/// Pose-action update: no reversing, displacement capped at `max_speed * dt`,
/// heading change capped by the bicycle yaw-rate bound at the realized speed.
pub fn step_relative(
    state: &VehicleState,
    dx: f64,
    dy: f64,
    dheading: f64,
    limits: &DynamicsLimits,
    dt: f64,
) -> VehicleState {
    let local = Vec2::new(dx.max(0.0), dy);
    let mut disp = local.rotate(state.heading);
    let cap = limits.max_speed * dt;
    let mag = disp.norm();
    if mag > cap {
        disp = disp * (cap / mag);
    }
    let speed = disp.norm() / dt;
    let max_turn = limits.max_yaw_rate(speed) * dt;
    let dh = wrap_angle(dheading).clamp(-max_turn, max_turn);
    finish(
        state,
        state.position + disp,
        state.heading + dh,
        disp * (1.0 / dt),
        dt,
    )
}

pub fn step_pose(state: &VehicleState, action: &Action, limits: &DynamicsLimits, dt: f64) -> VehicleState {
    match *action {
        Action::RelativeTargetPose { dx, dy, dheading } => {
            step_relative(state, dx, dy, dheading, limits, dt)
        }
        Action::TargetPose { x, y, heading } => {
            let (dx, dy, dh) = to_relative(state, x, y, heading);
            step_relative(state, dx, dy, dh, limits, dt)
        }
        Action::Continuous { .. } => step(state, action, limits, dt),
    }
}

/// Dispatches on the action space.
pub fn step(state: &VehicleState, action: &Action, limits: &DynamicsLimits, dt: f64) -> VehicleState {
    match *action {
        Action::Continuous {
            throttle,
            brake,
            steering,
        } => step_continuous(state, throttle, brake, steering, limits, dt),
        _ => step_pose(state, action, limits, dt),
    }
}

/// Places a replayed vehicle exactly at `pose`, deriving its kinematics.
pub fn step_replayed(state: &VehicleState, pose: Pose, dt: f64) -> VehicleState {
    let velocity = (pose.position - state.position) * (1.0 / dt);
    finish(state, pose.position, pose.heading, velocity, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    const DT: f64 = 0.1;

    #[test]
    fn coasting_advances_along_heading() {
        let s = VehicleState::new(Vec2::ZERO, 0.0, 10.0);
        let n = step_continuous(&s, 0.0, 0.0, 0.0, &DynamicsLimits::default(), DT);
        assert_eq!(n.position, Vec2::new(1.0, 0.0));
        assert_eq!(n.heading, 0.0);
        assert_eq!(n.step, 1);
    }

    #[test]
    fn braking_never_reverses() {
        let s = VehicleState::new(Vec2::ZERO, 0.3, 0.0);
        let n = step_continuous(&s, 0.0, 1.0, 0.0, &DynamicsLimits::default(), DT);
        assert_eq!(n.speed, 0.0);
        assert_eq!(n.position, Vec2::ZERO);
    }

    #[test]
    fn constant_steering_traces_bicycle_circle() {
        let limits = DynamicsLimits::default();
        let delta: f64 = 0.5 * limits.max_steer_angle;
        let expected = limits.wheelbase / delta.tan();
        let mut s = VehicleState::new(Vec2::ZERO, 0.0, 5.0);
        // Circle center is to the left of the start pose.
        let center = Vec2::new(0.0, expected);
        for _ in 0..300 {
            s = step_continuous(&s, 0.0, 0.0, 0.5, &limits, DT);
            let r = s.position.distance(center);
            assert!((r - expected).abs() / expected < 0.01, "r = {r}");
        }
    }

    #[test]
    fn zero_relative_pose_is_identity() {
        let s = VehicleState::new(Vec2::new(3.0, -2.0), 0.7, 0.0);
        let n = step_pose(&s, &Action::ZERO_RELATIVE, &DynamicsLimits::default(), DT);
        assert_eq!(n.position, s.position);
        assert_eq!(n.heading, s.heading);
        assert_eq!(n.speed, 0.0);
        assert_eq!(n.accel, s.accel);
        assert_eq!(n.jerk, s.jerk);
        assert_eq!(n.step, s.step + 1);
    }

    #[test]
    fn large_displacement_is_scaled_back() {
        let s = VehicleState::new(Vec2::ZERO, 0.0, 0.0);
        let a = Action::RelativeTargetPose {
            dx: 60.0,
            dy: 80.0,
            dheading: 0.0,
        };
        let n = step_pose(&s, &a, &DynamicsLimits::default(), DT);
        let d = n.position;
        assert!((d.norm() - 2.2).abs() < 1e-12);
        assert!((d.y / d.x - 80.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn capped_at_max_speed_twenty() {
        let limits = DynamicsLimits {
            max_speed: 20.0,
            ..Default::default()
        };
        let s = VehicleState::new(Vec2::ZERO, 0.0, 0.0);
        let a = Action::RelativeTargetPose {
            dx: 100.0,
            dy: 0.0,
            dheading: 0.0,
        };
        let n = step_pose(&s, &a, &limits, DT);
        assert!((n.position.x - 2.0).abs() < 1e-12);
        assert_eq!(n.position.y, 0.0);
    }

    #[test]
    fn target_pose_matches_relative() {
        let limits = DynamicsLimits {
            max_speed: 20.0,
            ..Default::default()
        };
        let s = VehicleState::new(Vec2::new(5.0, 5.0), 0.0, 0.0);
        let t = step_pose(
            &s,
            &Action::TargetPose {
                x: 6.0,
                y: 5.0,
                heading: 0.0,
            },
            &limits,
            DT,
        );
        let r = step_pose(
            &s,
            &Action::RelativeTargetPose {
                dx: 1.0,
                dy: 0.0,
                dheading: 0.0,
            },
            &limits,
            DT,
        );
        assert_eq!(t, r);
    }

    #[test]
    fn footprint_corners() {
        let s = VehicleState::new(Vec2::ZERO, 0.0, 0.0).with_dimensions(4.0, 2.0);
        let c = footprint(&s).corners();
        assert_eq!(
            c,
            [
                Vec2::new(2.0, 1.0),
                Vec2::new(2.0, -1.0),
                Vec2::new(-2.0, -1.0),
                Vec2::new(-2.0, 1.0)
            ]
        );
        let s = VehicleState::new(Vec2::ZERO, FRAC_PI_2, 0.0).with_dimensions(4.0, 2.0);
        for (got, want) in footprint(&s).corners().iter().zip([
            Vec2::new(-1.0, 2.0),
            Vec2::new(1.0, 2.0),
            Vec2::new(1.0, -2.0),
            Vec2::new(-1.0, -2.0),
        ]) {
            assert!(got.distance(want) < 1e-12);
        }
    }

    #[test]
    fn footprint_matches_rotation_matrix() {
        let s = VehicleState::new(Vec2::new(1.0, 2.0), FRAC_PI_4, 0.0).with_dimensions(4.0, 2.0);
        let (c, sn) = (FRAC_PI_4.cos(), FRAC_PI_4.sin());
        let rot = |x: f64, y: f64| Vec2::new(1.0 + c * x - sn * y, 2.0 + sn * x + c * y);
        let want = [rot(2.0, 1.0), rot(2.0, -1.0), rot(-2.0, -1.0), rot(-2.0, 1.0)];
        for (got, want) in footprint(&s).corners().iter().zip(want) {
            assert!(got.distance(want) < 1e-12);
        }
    }

    #[test]
    fn jerk_tracks_accel_ramp() {
        // Acceleration ramps by 0.5 m/s^2 per step: jerk = 5 m/s^3.
        let limits = DynamicsLimits::default();
        let mut s = VehicleState::new(Vec2::ZERO, 0.0, 0.0);
        let mut v = 0.0;
        for k in 1..20 {
            let a = 0.5 * k as f64;
            v += a * DT;
            let prev_a = s.accel.long;
            s = step_pose(
                &s,
                &Action::RelativeTargetPose {
                    dx: v * DT,
                    dy: 0.0,
                    dheading: 0.0,
                },
                &limits,
                DT,
            );
            assert!((s.jerk.long - (s.accel.long - prev_a) / DT).abs() < 1e-6);
            if k > 1 {
                assert!((s.jerk.long - 5.0).abs() < 1e-6, "k={k} jerk={}", s.jerk.long);
            }
        }
    }

    #[test]
    fn out_of_range_continuous_is_rejected() {
        let a = Action::Continuous {
            throttle: 1.5,
            brake: 0.0,
            steering: 0.0,
        };
        assert!(matches!(a.validate(), Err(ActionError::OutOfRange { field: "throttle", .. })));
    }

    fn any_state() -> impl Strategy<Value = VehicleState> {
        (-100.0..100.0f64, -100.0..100.0f64, -3.1..3.1f64, 0.0..22.0f64)
            .prop_map(|(x, y, h, v)| VehicleState::new(Vec2::new(x, y), h, v))
    }

    fn any_action() -> impl Strategy<Value = Action> {
        prop_oneof![
            (-50.0..50.0f64, -50.0..50.0f64, -4.0..4.0f64)
                .prop_map(|(dx, dy, dheading)| Action::RelativeTargetPose { dx, dy, dheading }),
            (-150.0..150.0f64, -150.0..150.0f64, -4.0..4.0f64)
                .prop_map(|(x, y, heading)| Action::TargetPose { x, y, heading }),
            (0.0..=1.0f64, 0.0..=1.0f64, -1.0..=1.0f64).prop_map(|(throttle, brake, steering)| {
                Action::Continuous {
                    throttle,
                    brake,
                    steering,
                }
            }),
        ]
    }

    proptest! {
        #[test]
        fn displacement_bounded(s in any_state(), a in any_action(), dt in 0.01..0.5f64) {
            let limits = DynamicsLimits::default();
            let n = step(&s, &a, &limits, dt);
            prop_assert!(n.position.distance(s.position) <= limits.max_speed * dt + 1e-9);
            prop_assert!(n.speed >= 0.0);
            prop_assert!(n.heading > -std::f64::consts::PI && n.heading <= std::f64::consts::PI);
        }

        #[test]
        fn target_pose_equals_ego_frame_relative(
            s in any_state(), x in -150.0..150.0f64, y in -150.0..150.0f64, h in -4.0..4.0f64
        ) {
            let limits = DynamicsLimits::default();
            let t = step_pose(&s, &Action::TargetPose { x, y, heading: h }, &limits, DT);
            let (dx, dy, dheading) = to_relative(&s, x, y, h);
            let r = step_pose(&s, &Action::RelativeTargetPose { dx, dy, dheading }, &limits, DT);
            prop_assert_eq!(t, r);
        }
    }
}
