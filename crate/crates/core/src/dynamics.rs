//! Rigid-body multirotor model.
//!
//! State is `[p, q, v_F, ω_B]`: position and linear velocity in the fixed
//! frame, a scalar-first Hamilton quaternion rotating body to world, and the
//! body angular rate. Rotor speeds map to collective thrust and body torques
//! through a mixing matrix; the vehicle is integrated with explicit Euler so
//! that one-step residuals can be inverted exactly (see [`crate::sysid`]).

use nalgebra::{Matrix4xX, Quaternion, UnitQuaternion, Vector3, Vector4};

use crate::error::{Error, Result};

/// Gravitational acceleration (m/s²).
pub const GRAVITY: f64 = 9.81;

/// Default rotor speed ceiling (rad/s).
pub const DEFAULT_MAX_ROTOR_SPEED: f64 = 2000.0;

/// Rotor geometry: maps squared rotor speeds to `[thrust, roll, pitch, yaw]`
/// before the physical coefficients are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixer {
    matrix: Matrix4xX<f64>,
}

impl Mixer {
    /// Plus-configuration quadrotor. Rotor 0 sits on +x, then −y, −x, +y;
    /// rotors 0 and 2 spin the same way.
    pub fn plus_quad() -> Self {
        #[rustfmt::skip]
        let matrix = Matrix4xX::from_row_slice(&[
             1.0,  1.0, 1.0,  1.0,
             0.0, -1.0, 0.0,  1.0,
            -1.0,  0.0, 1.0,  0.0,
             1.0, -1.0, 1.0, -1.0,
        ]);
        Self { matrix }
    }

    /// Hexarotor with arms every 60°, rotor `i` at angle `i·60°` from +x,
    /// alternating spin.
    pub fn hexa() -> Self {
        let mut rows = Vec::with_capacity(24);
        let angles: Vec<f64> = (0..6).map(|i| i as f64 * std::f64::consts::FRAC_PI_3).collect();
        rows.extend(std::iter::repeat(1.0).take(6));
        // torque about x from a rotor at (cos a, sin a): +sin a
        rows.extend(angles.iter().map(|a| clean(a.sin())));
        // torque about y: −cos a
        rows.extend(angles.iter().map(|a| clean(-a.cos())));
        rows.extend((0..6).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }));
        Self {
            matrix: Matrix4xX::from_row_slice(&rows),
        }
    }

    /// Builds a mixer from an arbitrary 4×n matrix.
    pub fn from_matrix(matrix: Matrix4xX<f64>) -> Result<Self> {
        let n = matrix.ncols();
        if n != 4 && n != 6 {
            return Err(Error::invalid(format!("mixer must have 4 or 6 columns, got {n}")));
        }
        if matrix.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-12) {
            return Err(Error::invalid("mixer entries must lie in [-1, 1]"));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix4xX<f64> {
        &self.matrix
    }

    pub fn n_rotors(&self) -> usize {
        self.matrix.ncols()
    }

    /// `M Ω²` for the given rotor speeds.
    pub fn apply_squared(&self, speeds: &[f64]) -> Vector4<f64> {
        let mut out = Vector4::zeros();
        for (j, w) in speeds.iter().enumerate() {
            let w2 = w * w;
            for i in 0..4 {
                out[i] += self.matrix[(i, j)] * w2;
            }
        }
        out
    }
}

// Round away the 1e-17 residue of sin/cos at multiples of 60°.
fn clean(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        0.0
    } else {
        v
    }
}

/// Physical constants of the vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct DroneParams {
    /// Mass (kg).
    pub mass: f64,
    /// Diagonal inertia `(Jx, Jy, Jz)` (kg·m²), `Jx = Jy`.
    pub inertia: Vector3<f64>,
    /// Rotor arm length (m).
    pub arm_length: f64,
    /// Thrust coefficient (N·s²/rad²).
    pub k_thrust: f64,
    /// Yaw torque coefficient (N·m·s²/rad²).
    pub k_torque: f64,
    pub mixer: Mixer,
    /// Rotor speed ceiling (rad/s).
    pub max_rotor_speed: f64,
}

impl Default for DroneParams {
    /// 50 g plus-quad that hovers at 150 rad/s per rotor.
    fn default() -> Self {
        Self {
            mass: 0.05,
            inertia: Vector3::new(1.4e-5, 1.4e-5, 2.2e-5),
            arm_length: 0.046,
            k_thrust: 5.45e-6,
            k_torque: 1.0e-7,
            mixer: Mixer::plus_quad(),
            max_rotor_speed: DEFAULT_MAX_ROTOR_SPEED,
        }
    }
}

impl DroneParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("Jx", self.inertia.x),
            ("Jy", self.inertia.y),
            ("Jz", self.inertia.z),
            ("arm_length", self.arm_length),
            ("k_thrust", self.k_thrust),
            ("k_torque", self.k_torque),
            ("max_rotor_speed", self.max_rotor_speed),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if (self.inertia.x - self.inertia.y).abs() > 1e-12 * self.inertia.x {
            return Err(Error::invalid("inertia must satisfy Jx = Jy"));
        }
        let n = self.mixer.n_rotors();
        if n != 4 && n != 6 {
            return Err(Error::invalid(format!("unsupported rotor count {n}")));
        }
        Ok(())
    }

    pub fn n_rotors(&self) -> usize {
        self.mixer.n_rotors()
    }

    /// Per-row scale `[k_T, l·k_T, l·k_T, k_M]` applied after mixing.
    pub fn wrench_scale(&self) -> Vector4<f64> {
        let lk = self.arm_length * self.k_thrust;
        Vector4::new(self.k_thrust, lk, lk, self.k_torque)
    }

    /// Uniform rotor speed that balances weight: `k_T·n·Ω² = m·g`.
    pub fn hover_speed(&self) -> RotorCommand {
        let n = self.n_rotors();
        let w = (self.mass * GRAVITY / (self.k_thrust * n as f64)).sqrt();
        RotorCommand(vec![w; n])
    }

    /// Validates a command against this vehicle's rotor count and speed range.
    pub fn check_command(&self, cmd: &RotorCommand) -> Result<()> {
        if cmd.0.len() != self.n_rotors() {
            return Err(Error::invalid(format!(
                "command has {} rotors, vehicle has {}",
                cmd.0.len(),
                self.n_rotors()
            )));
        }
        for (i, &w) in cmd.0.iter().enumerate() {
            if !(w.is_finite() && (0.0..=self.max_rotor_speed).contains(&w)) {
                return Err(Error::invalid(format!(
                    "rotor {i} speed {w} outside [0, {}]",
                    self.max_rotor_speed
                )));
            }
        }
        Ok(())
    }
}

/// Rotor speeds (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct RotorCommand(pub Vec<f64>);

impl RotorCommand {
    pub fn speeds(&self) -> &[f64] {
        &self.0
    }

    /// `Σ Ωᵢ²`.
    pub fn sum_squares(&self) -> f64 {
        self.0.iter().map(|w| w * w).sum()
    }
}

/// Rigid-body state.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub position: Vector3<f64>,
    pub attitude: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
}

impl Default for State {
    fn default() -> Self {
        Self::at_rest(Vector3::zeros())
    }
}

impl State {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            attitude: UnitQuaternion::identity(),
            velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.attitude.coords.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
    }

    /// Flattens to `[p(3), q(w,x,y,z), v(3), ω(3)]`.
    pub fn to_array(&self) -> [f64; 13] {
        let q = self.attitude.quaternion();
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q.w,
            q.i,
            q.j,
            q.k,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
            self.angular_velocity.x,
            self.angular_velocity.y,
            self.angular_velocity.z,
        ]
    }

    /// Inverse of [`State::to_array`]. The quaternion is taken as stored,
    /// without renormalization, so the round trip is bit-exact.
    pub fn from_array(a: &[f64; 13]) -> Self {
        Self {
            position: Vector3::new(a[0], a[1], a[2]),
            attitude: UnitQuaternion::new_unchecked(Quaternion::new(a[3], a[4], a[5], a[6])),
            velocity: Vector3::new(a[7], a[8], a[9]),
            angular_velocity: Vector3::new(a[10], a[11], a[12]),
        }
    }
}

/// External disturbance. `specific_force` is an acceleration (m/s²) added
/// to `v̇_F`; the torque is carried for completeness and kept at zero by
/// every producer in this crate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WrenchInput {
    pub specific_force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl WrenchInput {
    /// Vertical disturbance from a force in Newtons. This is the single
    /// place where ground-effect forces become accelerations.
    pub fn vertical_force(force_n: f64, mass: f64) -> Self {
        Self {
            specific_force: Vector3::new(0.0, 0.0, force_n / mass),
            torque: Vector3::zeros(),
        }
    }
}

/// Time derivative of [`State`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub position: Vector3<f64>,
    pub attitude: Quaternion<f64>,
    pub velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
}

impl StateDerivative {
    pub fn to_array(&self) -> [f64; 13] {
        let q = &self.attitude;
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q.w,
            q.i,
            q.j,
            q.k,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
            self.angular_velocity.x,
            self.angular_velocity.y,
            self.angular_velocity.z,
        ]
    }
}

/// Collective thrust (N) and body torque (N·m) produced by a command.
pub fn rotor_mixing(params: &DroneParams, cmd: &RotorCommand) -> (f64, Vector3<f64>) {
    let w = params.wrench_scale().component_mul(&params.mixer.apply_squared(&cmd.0));
    (w[0], Vector3::new(w[1], w[2], w[3]))
}

/// Continuous-time dynamics.
pub fn derivative(
    params: &DroneParams,
    x: &State,
    cmd: &RotorCommand,
    w: &WrenchInput,
) -> StateDerivative {
    let (thrust, torque) = rotor_mixing(params, cmd);
    let omega = x.angular_velocity;
    let q = x.attitude.quaternion();

    let q_dot = q * Quaternion::from_imag(omega) * 0.5;
    let accel = x.attitude * Vector3::new(0.0, 0.0, thrust) / params.mass + w.specific_force
        - Vector3::new(0.0, 0.0, GRAVITY);

    let j = params.inertia;
    let j_omega = j.component_mul(&omega);
    let torque_body = x.attitude.inverse() * w.torque;
    let omega_dot = (-omega.cross(&j_omega) + torque + torque_body).component_div(&j);

    StateDerivative {
        position: x.velocity,
        attitude: q_dot,
        velocity: accel,
        angular_velocity: omega_dot,
    }
}

/// One explicit-Euler step followed by quaternion renormalization.
pub fn step(
    params: &DroneParams,
    x: &State,
    cmd: &RotorCommand,
    w: &WrenchInput,
    dt: f64,
) -> Result<State> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let d = derivative(params, x, cmd, w);
    let q = x.attitude.quaternion() + d.attitude * dt;
    let next = State {
        position: x.position + d.position * dt,
        attitude: UnitQuaternion::new_normalize(q),
        velocity: x.velocity + d.velocity * dt,
        angular_velocity: x.angular_velocity + d.angular_velocity * dt,
    };
    if !next.is_finite() {
        return Err(Error::NumericalBlowUp { dt });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fig2() -> DroneParams {
        DroneParams::default()
    }

    #[test]
    fn hover_mixing_balances_weight() {
        let p = fig2();
        let (t, tau) = rotor_mixing(&p, &RotorCommand(vec![150.0; 4]));
        assert_relative_eq!(t, 0.4905, max_relative = 1e-12);
        assert_eq!(tau, Vector3::zeros());
    }

    #[test]
    fn zero_command_gives_zero_wrench() {
        let (t, tau) = rotor_mixing(&fig2(), &RotorCommand(vec![0.0; 4]));
        assert_eq!(t, 0.0);
        assert_eq!(tau, Vector3::zeros());
    }

    #[test]
    fn unbalanced_pair_matches_direct_product() {
        let p = fig2();
        let w = [160.0f64, 150.0, 140.0, 150.0];
        let (t, tau) = rotor_mixing(&p, &RotorCommand(w.to_vec()));
        let sq: Vec<f64> = w.iter().map(|v| v * v).collect();
        let lk = p.arm_length * p.k_thrust;
        assert_relative_eq!(t, p.k_thrust * sq.iter().sum::<f64>(), max_relative = 1e-14);
        assert_eq!(tau.x, 0.0);
        // faster rotor on +x pitches the nose down (negative y torque)
        assert_relative_eq!(tau.y, lk * (sq[2] - sq[0]), max_relative = 1e-14);
        assert!(tau.y < 0.0);
        assert_relative_eq!(tau.z, p.k_torque * (sq[0] - sq[1] + sq[2] - sq[3]), max_relative = 1e-14);
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = fig2();
        let d = derivative(&p, &State::default(), &p.hover_speed(), &WrenchInput::default());
        for v in d.to_array() {
            assert!(v.abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn free_fall() {
        let p = fig2();
        let x = State {
            attitude: UnitQuaternion::from_euler_angles(0.0, 0.0, 0.7),
            ..State::default()
        };
        let d = derivative(&p, &x, &RotorCommand(vec![0.0; 4]), &WrenchInput::default());
        assert_eq!(d.velocity, Vector3::new(0.0, 0.0, -GRAVITY));
    }

    #[test]
    fn rolled_ninety_degrees_pushes_sideways() {
        let p = fig2();
        // rotation about x by -90° takes body z onto world +y
        let x = State {
            attitude: UnitQuaternion::from_axis_angle(&Vector3::x_axis(), -std::f64::consts::FRAC_PI_2),
            ..State::default()
        };
        let cmd = p.hover_speed();
        let (t, _) = rotor_mixing(&p, &cmd);
        let d = derivative(&p, &x, &cmd, &WrenchInput::default());
        assert!(d.velocity.x.abs() < 1e-15);
        assert_relative_eq!(d.velocity.y, t / p.mass, max_relative = 1e-12);
        assert_relative_eq!(d.velocity.z, -GRAVITY, max_relative = 1e-12);
    }

    #[test]
    fn hover_step_is_fixed_point() {
        let p = fig2();
        let x = State::at_rest(Vector3::new(1.0, 2.0, 3.0));
        let next = step(&p, &x, &p.hover_speed(), &WrenchInput::default(), 0.02).unwrap();
        assert!((next.position - x.position).norm() < 1e-15);
        assert!(next.velocity.norm() < 1e-15);
        assert_eq!(next.attitude, x.attitude);
    }

    #[test]
    fn free_fall_matches_euler_sum() {
        let p = fig2();
        let dt = 1e-3;
        let mut x = State::default();
        let off = RotorCommand(vec![0.0; 4]);
        for _ in 0..1000 {
            x = step(&p, &x, &off, &WrenchInput::default(), dt).unwrap();
        }
        // p_z after n steps = -g dt² Σ_{k<n} k
        let expected_pz = -GRAVITY * dt * dt * (999.0 * 1000.0 / 2.0);
        assert!((x.velocity.z + GRAVITY).abs() < 1e-9);
        assert_relative_eq!(x.position.z, expected_pz, max_relative = 1e-10);
    }

    #[test]
    fn disturbance_enters_linearly() {
        let p = fig2();
        let dt = 0.02;
        let w = WrenchInput {
            specific_force: Vector3::new(0.0, 0.0, 2.0),
            torque: Vector3::zeros(),
        };
        let next = step(&p, &State::default(), &p.hover_speed(), &w, dt).unwrap();
        assert_relative_eq!(next.velocity.z, 2.0 * dt, max_relative = 1e-9);
    }

    #[test]
    fn hover_speed_laws() {
        let p = fig2();
        for w in p.hover_speed().0 {
            assert_relative_eq!(w, 150.0, max_relative = 1e-12);
        }
        let heavy = DroneParams { mass: 0.1, ..fig2() };
        assert_relative_eq!(heavy.hover_speed().0[0], 150.0 * 2f64.sqrt(), max_relative = 1e-12);
        let hex = DroneParams { mixer: Mixer::hexa(), ..fig2() };
        let h = hex.hover_speed();
        assert_eq!(h.0.len(), 6);
        assert_relative_eq!(h.0[0], 150.0 * (4.0f64 / 6.0).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn hexa_hover_has_no_torque() {
        let p = DroneParams { mixer: Mixer::hexa(), ..fig2() };
        let (t, tau) = rotor_mixing(&p, &p.hover_speed());
        assert!(tau.norm() < 1e-15 * t);
    }

    #[test]
    fn rejects_bad_dt_and_blowup() {
        let p = fig2();
        assert!(step(&p, &State::default(), &p.hover_speed(), &WrenchInput::default(), 0.0).is_err());
        let w = WrenchInput {
            specific_force: Vector3::new(f64::INFINITY, 0.0, 0.0),
            torque: Vector3::zeros(),
        };
        assert!(matches!(
            step(&p, &State::default(), &p.hover_speed(), &w, 0.01),
            Err(Error::NumericalBlowUp { .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(fig2().validate().is_ok());
        let bad = DroneParams {
            inertia: Vector3::new(1e-5, 2e-5, 3e-5),
            ..fig2()
        };
        assert!(bad.validate().is_err());
        let p = fig2();
        assert!(p.check_command(&RotorCommand(vec![150.0; 3])).is_err());
        assert!(p.check_command(&RotorCommand(vec![-1.0, 1.0, 1.0, 1.0])).is_err());
        assert!(p.check_command(&RotorCommand(vec![2500.0; 4])).is_err());
    }

    fn arb_state() -> impl Strategy<Value = State> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-2.0f64..2.0),
            prop::array::uniform3(-10.0f64..10.0),
        )
            .prop_filter("non-degenerate quaternion", |(q, _, _)| {
                q.iter().map(|v| v * v).sum::<f64>() > 0.1
            })
            .prop_map(|(q, v, w)| State {
                position: Vector3::zeros(),
                attitude: UnitQuaternion::new_normalize(Quaternion::new(q[0], q[1], q[2], q[3])),
                velocity: Vector3::from(v),
                angular_velocity: Vector3::from(w),
            })
    }

    proptest! {
        #[test]
        fn quaternion_stays_unit(x0 in arb_state(), speeds in prop::array::uniform4(0.0f64..400.0)) {
            let p = fig2();
            let cmd = RotorCommand(speeds.to_vec());
            let mut x = x0;
            for _ in 0..200 {
                x = step(&p, &x, &cmd, &WrenchInput::default(), 1e-3).unwrap();
                prop_assert!((x.attitude.quaternion().norm() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn horizontal_velocity_conserved_without_thrust(x0 in arb_state()) {
            let p = fig2();
            let x = State { angular_velocity: Vector3::zeros(), ..x0 };
            let next = step(&p, &x, &RotorCommand(vec![0.0; 4]), &WrenchInput::default(), 0.01).unwrap();
            prop_assert_eq!(next.velocity.x, x.velocity.x);
            prop_assert_eq!(next.velocity.y, x.velocity.y);
        }

        #[test]
        fn mixing_is_degree_two(speeds in prop::array::uniform4(0.0f64..500.0), c in 0.1f64..3.0) {
            let p = fig2();
            let (t1, tau1) = rotor_mixing(&p, &RotorCommand(speeds.to_vec()));
            let scaled: Vec<f64> = speeds.iter().map(|v| v * c).collect();
            let (t2, tau2) = rotor_mixing(&p, &RotorCommand(scaled));
            prop_assert!((t2 - c * c * t1).abs() <= 1e-12 * t2.abs().max(1e-12));
            prop_assert!((tau2 - tau1 * c * c).norm() <= 1e-12 * tau2.norm().max(1e-9));
        }

        #[test]
        fn disturbance_is_affine_with_unit_jacobian(
            x in arb_state(),
            f in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let p = fig2();
            let cmd = p.hover_speed();
            let base = derivative(&p, &x, &cmd, &WrenchInput::default());
            let w = WrenchInput { specific_force: Vector3::from(f), torque: Vector3::zeros() };
            let with = derivative(&p, &x, &cmd, &w);
            prop_assert!((with.velocity - base.velocity - Vector3::from(f)).norm() < 1e-12);
            prop_assert_eq!(with.angular_velocity, base.angular_velocity);
        }
    }
}
