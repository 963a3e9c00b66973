//! Kinematic suturing world: a velocity-tracked end-effector holding a
//! curved needle, a movable phantom pad with entry/exit points, a droppable
//! needle, and a synthetic pinhole camera producing scene features.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Full observation dimension (robot state + scene features).
pub const OBS_DIM: usize = 18;
/// Robot-state part of the observation: position 3 + rot6 6 + gripper 1.
pub const ROBOT_STATE_DIM: usize = 10;
/// Scene-feature part: 2D projections of 4 keypoints.
pub const SCENE_FEATURE_DIM: usize = 8;
/// Action dimension: desired position 3 + rot6 6 + gripper 1.
pub const ACTION_DIM: usize = 10;

/// Needle tip offset in the end-effector frame (m).
pub const NEEDLE_OFFSET: Vec3 = Vec3([0.0, 0.0, -0.05]);
/// Suture entry point in the phantom frame (m).
pub const ENTRY_OFFSET: Vec3 = Vec3([-0.01, 0.0, 0.0]);
/// Suture exit point in the phantom frame (m).
pub const EXIT_OFFSET: Vec3 = Vec3([0.01, 0.0, 0.0]);
/// Floor plane height a detached needle falls to (m).
pub const FLOOR_Z: f64 = 0.0;
/// Constant fall speed of a detached needle (m/s).
pub const NEEDLE_DROP_SPEED: f64 = 0.05;
/// Pinhole camera focal length (unitless; principal point at 0).
pub const FOCAL_LENGTH: f64 = 1.0;
/// Camera-frame depth below which a keypoint is clamped instead of projected.
pub const BEHIND_CAMERA_EPSILON: f64 = 1e-6;

// ── vectors and rotations ───────────────────────────────────────────────

/// Length-3 vector (meters unless noted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub fn x(&self) -> f64 {
        self.0[0]
    }
    pub fn y(&self) -> f64 {
        self.0[1]
    }
    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn dot(&self, o: Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(&self, o: Vec3) -> Vec3 {
        Vec3([
            self.0[1] * o.0[2] - self.0[2] * o.0[1],
            self.0[2] * o.0[0] - self.0[0] * o.0[2],
            self.0[0] * o.0[1] - self.0[1] * o.0[0],
        ])
    }

    pub fn norm(&self) -> f64 {
        self.dot(*self).sqrt()
    }

    pub fn normalized(&self) -> Result<Vec3> {
        let n = self.norm();
        if n < 1e-12 {
            return Err(Error::InvalidCommand(
                "cannot normalize near-zero vector".into(),
            ));
        }
        Ok(*self * (1.0 / n))
    }

    pub fn dist(&self, o: Vec3) -> f64 {
        (*self - o).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

/// 6D rotation representation: the first two columns of a rotation matrix,
/// packed column-major (elements 0..3 are column one, 3..6 column two).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot6(pub [f64; 6]);

impl Rot6 {
    pub fn identity() -> Rot6 {
        Rot6([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    }

    pub fn col1(&self) -> Vec3 {
        Vec3([self.0[0], self.0[1], self.0[2]])
    }

    pub fn col2(&self) -> Vec3 {
        Vec3([self.0[3], self.0[4], self.0[5]])
    }

    /// Third column of the implied rotation matrix.
    pub fn col3(&self) -> Vec3 {
        self.col1().cross(self.col2())
    }

    pub fn from_cols(c1: Vec3, c2: Vec3) -> Rot6 {
        Rot6([c1.0[0], c1.0[1], c1.0[2], c2.0[0], c2.0[1], c2.0[2]])
    }

    /// Gram-Schmidt: normalize column one, remove its component from column
    /// two, normalize the remainder.
    pub fn orthonormalized(&self) -> Result<Rot6> {
        let c1 = self.col1().normalized().map_err(|_| {
            Error::InvalidCommand("degenerate rotation: first column near zero".into())
        })?;
        let raw2 = self.col2();
        let c2 = (raw2 - c1 * c1.dot(raw2)).normalized().map_err(|_| {
            Error::InvalidCommand("degenerate rotation: columns near parallel".into())
        })?;
        Ok(Rot6::from_cols(c1, c2))
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        (self.col1().norm() - 1.0).abs() <= tol
            && (self.col2().norm() - 1.0).abs() <= tol
            && self.col1().dot(self.col2()).abs() <= tol
    }

    /// Rotate a vector: R·v.
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        self.col1() * v.0[0] + self.col2() * v.0[1] + self.col3() * v.0[2]
    }

    /// Inverse rotation: Rᵀ·v.
    pub fn rotate_back(&self, v: Vec3) -> Vec3 {
        Vec3([self.col1().dot(v), self.col2().dot(v), self.col3().dot(v)])
    }

    /// Compose rotations: (self · other) as a rotation matrix product.
    pub fn compose(&self, other: &Rot6) -> Rot6 {
        Rot6::from_cols(self.rotate(other.col1()), self.rotate(other.col2()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Rigid pose: position plus 6D rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub rot6: Rot6,
}

impl Pose {
    pub fn identity() -> Pose {
        Pose {
            position: Vec3::ZERO,
            rot6: Rot6::identity(),
        }
    }

    pub fn new(position: Vec3, rot6: Rot6) -> Pose {
        Pose { position, rot6 }
    }

    /// Map a point from the local frame to the world frame.
    pub fn transform_point(&self, local: Vec3) -> Vec3 {
        self.position + self.rot6.rotate(local)
    }

    /// Map a world point into the local frame.
    pub fn inverse_transform_point(&self, world: Vec3) -> Vec3 {
        self.rot6.rotate_back(world - self.position)
    }
}

/// Camera pose looking from `eye` toward `target`; the camera frame has
/// +z along the view direction.
pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Pose> {
    let forward = (target - eye).normalized()?;
    let up_eff = if forward.cross(up).norm() < 1e-9 {
        // Degenerate: view direction parallel to up; pick a fallback.
        let alt = Vec3([1.0, 0.0, 0.0]);
        if forward.cross(alt).norm() < 1e-9 {
            Vec3([0.0, 1.0, 0.0])
        } else {
            alt
        }
    } else {
        up
    };
    let x_cam = up_eff.cross(forward).normalized()?;
    let y_cam = forward.cross(x_cam);
    Ok(Pose::new(eye, Rot6::from_cols(x_cam, y_cam)))
}

// ── world state ─────────────────────────────────────────────────────────

/// Exponential velocity-tracking plant parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocityTrackingParams {
    /// Exponential tracking rate λ (1/s).
    pub lambda_track: f64,
    /// Integration step (s).
    pub dt: f64,
}

impl Default for VelocityTrackingParams {
    fn default() -> Self {
        VelocityTrackingParams {
            lambda_track: 5.0,
            dt: 0.1,
        }
    }
}

impl VelocityTrackingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_track > 0.0 && self.lambda_track.is_finite()) {
            return Err(Error::config("lambda_track", "must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", "must be positive"));
        }
        Ok(())
    }
}

/// Complete world state at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub ee_pose: Pose,
    pub ee_velocity: Vec3,
    /// Gripper opening in [0,1]; 1 = closed on the needle.
    pub gripper: f64,
    pub needle_attached: bool,
    pub needle_tip: Vec3,
    pub phantom_pose: Pose,
    pub camera_pose: Pose,
    pub time_step: u64,
}

impl SimState {
    /// Spawn with the end-effector above the workspace, needle held.
    pub fn initial(ee_position: Vec3, phantom_pose: Pose, camera_pose: Pose) -> SimState {
        let ee_pose = Pose::new(ee_position, Rot6::identity());
        let needle_tip = ee_pose.transform_point(NEEDLE_OFFSET);
        SimState {
            ee_pose,
            ee_velocity: Vec3::ZERO,
            gripper: 1.0,
            needle_attached: true,
            needle_tip,
            phantom_pose,
            camera_pose,
            time_step: 0,
        }
    }

    /// Suture entry point in world coordinates.
    pub fn entry_point(&self) -> Vec3 {
        self.phantom_pose.transform_point(ENTRY_OFFSET)
    }

    /// Suture exit point in world coordinates.
    pub fn exit_point(&self) -> Vec3 {
        self.phantom_pose.transform_point(EXIT_OFFSET)
    }

    /// Outward phantom surface normal in world coordinates.
    pub fn phantom_normal(&self) -> Vec3 {
        self.phantom_pose.rot6.col3()
    }

    /// The position the safety filter constrains: the needle tip while the
    /// needle is held, otherwise the end-effector itself.
    pub fn filtered_point(&self) -> Vec3 {
        if self.needle_attached {
            self.needle_tip
        } else {
            self.ee_pose.position
        }
    }
}

/// Advance the world by one step under the exponential tracking plant.
///
/// The velocity update is the exact closed form
/// `v' = v_des + (v − v_des)·e^(−λ·dt)`; position integrates the new
/// velocity; the rotation advances by `rate·dt` and is re-orthonormalized.
pub fn step(
    state: &SimState,
    desired_velocity: Vec3,
    desired_rot6_rate: &[f64; 6],
    gripper_cmd: f64,
    params: &VelocityTrackingParams,
) -> Result<SimState> {
    params.validate()?;
    if !desired_velocity.is_finite()
        || !desired_rot6_rate.iter().all(|v| v.is_finite())
        || !gripper_cmd.is_finite()
    {
        return Err(Error::InvalidCommand(
            "non-finite command rejected".into(),
        ));
    }

    let eta = (-params.lambda_track * params.dt).exp();
    let ee_velocity = desired_velocity + (state.ee_velocity - desired_velocity) * eta;
    let position = state.ee_pose.position + ee_velocity * params.dt;

    let mut raw = state.ee_pose.rot6.0;
    for (r, rate) in raw.iter_mut().zip(desired_rot6_rate) {
        *r += rate * params.dt;
    }
    let rot6 = Rot6(raw).orthonormalized()?;
    let ee_pose = Pose::new(position, rot6);

    let gripper = gripper_cmd.clamp(0.0, 1.0);
    let mut needle_attached = state.needle_attached;
    if needle_attached && gripper_cmd < 0.5 {
        needle_attached = false;
    }
    let needle_tip = if needle_attached {
        ee_pose.transform_point(NEEDLE_OFFSET)
    } else if state.needle_attached {
        // Released this step; it starts falling on subsequent steps.
        state.needle_tip
    } else {
        fall_step(state.needle_tip, params.dt)
    };

    Ok(SimState {
        ee_pose,
        ee_velocity,
        gripper,
        needle_attached,
        needle_tip,
        phantom_pose: state.phantom_pose,
        camera_pose: state.camera_pose,
        time_step: state.time_step + 1,
    })
}

fn fall_step(tip: Vec3, dt: f64) -> Vec3 {
    Vec3([
        tip.0[0],
        tip.0[1],
        (tip.0[2] - NEEDLE_DROP_SPEED * dt).max(FLOOR_Z),
    ])
}

// ── observation ─────────────────────────────────────────────────────────

/// What the policy sees: proprioception plus projected scene keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// position 3 ∥ rot6 6 ∥ gripper 1.
    pub robot_state: [f64; ROBOT_STATE_DIM],
    /// 2D projections of: needle tip, entry, exit, phantom center.
    pub scene_features: [f64; SCENE_FEATURE_DIM],
}

impl Observation {
    pub fn flat(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        out[..ROBOT_STATE_DIM].copy_from_slice(&self.robot_state);
        out[ROBOT_STATE_DIM..].copy_from_slice(&self.scene_features);
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Observation> {
        if flat.len() != OBS_DIM {
            return Err(Error::DimensionMismatch(format!(
                "observation needs {OBS_DIM} values, got {}",
                flat.len()
            )));
        }
        let mut robot_state = [0.0; ROBOT_STATE_DIM];
        robot_state.copy_from_slice(&flat[..ROBOT_STATE_DIM]);
        let mut scene_features = [0.0; SCENE_FEATURE_DIM];
        scene_features.copy_from_slice(&flat[ROBOT_STATE_DIM..]);
        Ok(Observation {
            robot_state,
            scene_features,
        })
    }
}

/// Per-step camera diagnostics; a keypoint behind the camera is clamped to
/// a minimum depth rather than aborting, and counted here.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObservationDiagnostics {
    pub clamped_keypoints: usize,
}

fn project(camera: &Pose, world: Vec3) -> ([f64; 2], bool) {
    let cam = camera.inverse_transform_point(world);
    let clamped = cam.0[2] <= BEHIND_CAMERA_EPSILON;
    let z = if clamped {
        BEHIND_CAMERA_EPSILON
    } else {
        cam.0[2]
    };
    (
        [FOCAL_LENGTH * cam.0[0] / z, FOCAL_LENGTH * cam.0[1] / z],
        clamped,
    )
}

/// Observe the world through the synthetic camera.
pub fn observe(state: &SimState) -> Observation {
    observe_with_diagnostics(state).0
}

/// Observation plus the behind-camera clamp count.
pub fn observe_with_diagnostics(state: &SimState) -> (Observation, ObservationDiagnostics) {
    let mut robot_state = [0.0; ROBOT_STATE_DIM];
    robot_state[..3].copy_from_slice(&state.ee_pose.position.0);
    robot_state[3..9].copy_from_slice(&state.ee_pose.rot6.0);
    robot_state[9] = state.gripper;

    let keypoints = [
        state.needle_tip,
        state.entry_point(),
        state.exit_point(),
        state.phantom_pose.position,
    ];
    let mut scene_features = [0.0; SCENE_FEATURE_DIM];
    let mut diag = ObservationDiagnostics::default();
    for (i, kp) in keypoints.iter().enumerate() {
        let (f, clamped) = project(&state.camera_pose, *kp);
        scene_features[2 * i] = f[0];
        scene_features[2 * i + 1] = f[1];
        if clamped {
            diag.clamped_keypoints += 1;
        }
    }
    (
        Observation {
            robot_state,
            scene_features,
        },
        diag,
    )
}

// ── scenario events ─────────────────────────────────────────────────────

/// A scripted world mutation; poses are deltas applied to the current pose.
#[derive(Debug, Clone)]
pub enum ScenarioEventKind {
    DropNeedle,
    MoveCamera(Pose),
    MovePhantom(Pose),
}

#[derive(Debug, Clone)]
pub struct ScenarioEvent {
    pub trigger_step: u64,
    pub kind: ScenarioEventKind,
}

fn apply_delta(pose: &Pose, delta: &Pose) -> Pose {
    Pose::new(
        pose.position + delta.position,
        delta.rot6.compose(&pose.rot6),
    )
}

/// Apply an event if the state is at its trigger step; otherwise identity.
pub fn apply_scenario_event(state: &SimState, event: &ScenarioEvent) -> SimState {
    if state.time_step != event.trigger_step {
        return state.clone();
    }
    let mut next = state.clone();
    match &event.kind {
        ScenarioEventKind::DropNeedle => next.needle_attached = false,
        ScenarioEventKind::MoveCamera(delta) => {
            next.camera_pose = apply_delta(&state.camera_pose, delta);
        }
        ScenarioEventKind::MovePhantom(delta) => {
            next.phantom_pose = apply_delta(&state.phantom_pose, delta);
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_world() -> SimState {
        let phantom = Pose::new(Vec3([0.0, 0.0, 0.02]), Rot6::identity());
        let camera = look_at(Vec3([0.0, 0.0, 0.35]), phantom.position, Vec3([0.0, 0.0, 1.0]))
            .expect("camera");
        SimState::initial(Vec3([0.0, 0.0, 0.10]), phantom, camera)
    }

    #[test]
    fn zero_velocity_is_a_fixed_point() {
        let state = default_world();
        let params = VelocityTrackingParams::default();
        let next = step(&state, Vec3::ZERO, &[0.0; 6], 1.0, &params).unwrap();
        assert_eq!(next.ee_pose.position, state.ee_pose.position);
        assert_eq!(next.ee_velocity, Vec3::ZERO);
        assert_eq!(next.time_step, 1);
    }

    #[test]
    fn zero_tracking_error_stays_zero() {
        let mut state = default_world();
        let v = Vec3([0.01, -0.02, 0.03]);
        state.ee_velocity = v;
        let params = VelocityTrackingParams::default();
        let next = step(&state, v, &[0.0; 6], 1.0, &params).unwrap();
        assert_eq!(next.ee_velocity, v);
    }

    #[test]
    fn velocity_tracks_closed_form_exponential() {
        let mut state = default_world();
        state.ee_velocity = Vec3([1.0, 0.0, 0.0]);
        let params = VelocityTrackingParams {
            lambda_track: 2.0,
            dt: 0.1,
        };
        let next = step(&state, Vec3::ZERO, &[0.0; 6], 1.0, &params).unwrap();
        let expect = (-0.2f64).exp();
        assert!((next.ee_velocity.x() - expect).abs() < 1e-12);

        // Independent oracle: fine-step Euler on v̇ = −λ(v − v_des).
        let substeps = 100_000;
        let h = params.dt / substeps as f64;
        let mut v = 1.0;
        for _ in 0..substeps {
            v += -params.lambda_track * v * h;
        }
        assert!(
            (next.ee_velocity.x() - v).abs() < 1e-5,
            "closed form {} vs euler {v}",
            next.ee_velocity.x()
        );
    }

    #[test]
    fn tracking_error_decays_exactly() {
        let params = VelocityTrackingParams::default();
        let v_des = Vec3([0.02, 0.01, -0.005]);
        let mut state = default_world();
        state.ee_velocity = Vec3([0.05, -0.03, 0.04]);
        let e0 = (state.ee_velocity - v_des).norm();
        let eta = (-params.lambda_track * params.dt).exp();
        for k in 1..=30u32 {
            state = step(&state, v_des, &[0.0; 6], 1.0, &params).unwrap();
            let ek = (state.ee_velocity - v_des).norm();
            let want = e0 * eta.powi(k as i32);
            assert!(
                (ek - want).abs() < 1e-12,
                "step {k}: error {ek} vs {want}"
            );
        }
    }

    #[test]
    fn orthonormalization_is_idempotent() {
        let raw = Rot6([0.2, 0.7, -0.4, 0.9, -0.1, 0.3]);
        let once = raw.orthonormalized().unwrap();
        let twice = once.orthonormalized().unwrap();
        for (a, b) in once.0.iter().zip(twice.0.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(once.is_orthonormal(1e-9));
    }

    #[test]
    fn needle_stays_rigid_while_attached() {
        let params = VelocityTrackingParams::default();
        let mut state = default_world();
        let rate = [0.0, 0.3, -0.2, -0.3, 0.0, 0.1];
        for _ in 0..50 {
            state = step(&state, Vec3([0.01, 0.005, -0.01]), &rate, 1.0, &params).unwrap();
            assert!(state.needle_attached);
            let expect = state.ee_pose.transform_point(NEEDLE_OFFSET);
            assert!(state.needle_tip.dist(expect) < 1e-9);
        }
    }

    #[test]
    fn released_needle_falls_to_the_floor() {
        let params = VelocityTrackingParams::default();
        let mut state = default_world();
        // Release: tip frozen on the release step, then falls.
        state = step(&state, Vec3::ZERO, &[0.0; 6], 0.0, &params).unwrap();
        assert!(!state.needle_attached);
        let frozen = state.needle_tip;
        assert!((frozen.z() - 0.05).abs() < 1e-12);
        state = step(&state, Vec3::ZERO, &[0.0; 6], 0.0, &params).unwrap();
        assert!((state.needle_tip.z() - (frozen.z() - NEEDLE_DROP_SPEED * params.dt)).abs() < 1e-12);
        for _ in 0..30 {
            state = step(&state, Vec3::ZERO, &[0.0; 6], 0.0, &params).unwrap();
            assert_eq!(state.needle_tip.x(), frozen.x());
            assert_eq!(state.needle_tip.y(), frozen.y());
        }
        assert_eq!(state.needle_tip.z(), FLOOR_Z);
    }

    #[test]
    fn non_finite_commands_are_rejected() {
        let state = default_world();
        let params = VelocityTrackingParams::default();
        assert!(step(&state, Vec3([f64::NAN, 0.0, 0.0]), &[0.0; 6], 1.0, &params).is_err());
        assert!(step(&state, Vec3::ZERO, &[f64::INFINITY; 6], 1.0, &params).is_err());
        assert!(step(&state, Vec3::ZERO, &[0.0; 6], f64::NAN, &params).is_err());
    }

    #[test]
    fn step_is_deterministic() {
        let state = default_world();
        let params = VelocityTrackingParams::default();
        let rate = [0.01, -0.02, 0.03, 0.04, -0.05, 0.06];
        let a = step(&state, Vec3([0.011, 0.007, -0.003]), &rate, 0.8, &params).unwrap();
        let b = step(&state, Vec3([0.011, 0.007, -0.003]), &rate, 0.8, &params).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.ee_pose.rot6.0.iter().zip(b.ee_pose.rot6.0.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn robot_state_packs_pose_and_gripper() {
        let mut state = default_world();
        state.gripper = 0.73;
        let obs = observe(&state);
        assert_eq!(obs.robot_state[9], 0.73);
        assert_eq!(&obs.robot_state[..3], &state.ee_pose.position.0);
        assert_eq!(&obs.robot_state[3..9], &state.ee_pose.rot6.0);
        let flat = obs.flat();
        assert_eq!(flat.len(), OBS_DIM);
        let rt = Observation::from_flat(&flat).unwrap();
        assert_eq!(rt, obs);
    }

    #[test]
    fn keypoint_on_optical_axis_projects_to_origin() {
        let state = default_world();
        // Camera looks straight down at the phantom center.
        let obs = observe(&state);
        // Phantom center features are the last pair.
        assert!(obs.scene_features[6].abs() < 1e-12);
        assert!(obs.scene_features[7].abs() < 1e-12);
    }

    #[test]
    fn pinhole_formula_matches_hand_example() {
        // Identity camera at origin: camera frame = world frame.
        let mut state = default_world();
        state.camera_pose = Pose::identity();
        state.phantom_pose = Pose::new(Vec3([0.1, 0.0, 1.0]), Rot6::identity());
        let obs = observe(&state);
        // Phantom center at camera-frame (0.1, 0, 1) with f=1 → (0.1, 0).
        assert!((obs.scene_features[6] - 0.1).abs() < 1e-12);
        assert!(obs.scene_features[7].abs() < 1e-12);
    }

    #[test]
    fn behind_camera_keypoints_clamp_without_abort() {
        let mut state = default_world();
        state.camera_pose = Pose::identity();
        // Phantom behind the camera (negative camera-frame z).
        state.phantom_pose = Pose::new(Vec3([0.0, 0.0, -1.0]), Rot6::identity());
        let (obs, diag) = observe_with_diagnostics(&state);
        assert!(diag.clamped_keypoints >= 1);
        assert!(obs.scene_features.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn drop_event_detaches_at_trigger_only() {
        let state = default_world();
        let event = ScenarioEvent {
            trigger_step: 8,
            kind: ScenarioEventKind::DropNeedle,
        };
        let untouched = apply_scenario_event(&state, &event);
        assert!(untouched.needle_attached);

        let mut at8 = state.clone();
        at8.time_step = 8;
        let dropped = apply_scenario_event(&at8, &event);
        assert!(!dropped.needle_attached);
    }

    #[test]
    fn identity_camera_delta_is_a_noop() {
        let mut state = default_world();
        state.time_step = 3;
        let event = ScenarioEvent {
            trigger_step: 3,
            kind: ScenarioEventKind::MoveCamera(Pose::identity()),
        };
        let moved = apply_scenario_event(&state, &event);
        assert_eq!(observe(&moved), observe(&state));
    }

    #[test]
    fn phantom_shift_moves_entry_and_exit_together() {
        let mut state = default_world();
        state.time_step = 5;
        let delta = Pose::new(Vec3([0.02, 0.0, 0.0]), Rot6::identity());
        let event = ScenarioEvent {
            trigger_step: 5,
            kind: ScenarioEventKind::MovePhantom(delta),
        };
        let moved = apply_scenario_event(&state, &event);
        let shift = Vec3([0.02, 0.0, 0.0]);
        assert!(moved.entry_point().dist(state.entry_point() + shift) < 1e-12);
        assert!(moved.exit_point().dist(state.exit_point() + shift) < 1e-12);
    }

    #[test]
    fn look_at_builds_an_orthonormal_frame() {
        let pose = look_at(
            Vec3([0.3, 0.2, 0.3]),
            Vec3([0.0, 0.0, 0.02]),
            Vec3([0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!(pose.rot6.is_orthonormal(1e-9));
        // Forward (third column) points from eye to target.
        let fwd = pose.rot6.col3();
        let want = (Vec3([0.0, 0.0, 0.02]) - Vec3([0.3, 0.2, 0.3])).normalized().unwrap();
        assert!(fwd.dist(want) < 1e-9);

        // Degenerate up direction falls back instead of failing.
        let top_down = look_at(
            Vec3([0.0, 0.0, 0.4]),
            Vec3([0.0, 0.0, 0.0]),
            Vec3([0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!(top_down.rot6.is_orthonormal(1e-9));
    }
}
