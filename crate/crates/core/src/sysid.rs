//! Identification from flight logs.
//!
//! * [`identify_theta`] recovers the four observable parameter combinations
//!   `θ₀ = k_T/m`, `θ₁ = l·k_T/Jx`, `θ₂ = k_M/Jz`, `θ₃ = Jz/Jx` by linear
//!   least squares on forward-difference accelerations.
//! * [`extract_gt_turbulence`] inverts one Euler step per sample to get the
//!   disturbance the nominal model cannot explain.
//! * [`fit_ground_effect`] fits the identified Cheeseman law `(α, β)` with BFGS.

use nalgebra::{Matrix4, SymmetricEigen, Vector3, Vector4};

use crate::dynamics::{derivative, DroneParams, Mixer, RotorCommand, State, WrenchInput, GRAVITY};
use crate::error::{Error, Result};
use crate::groundfx::IdentifiedGroundEffect;

/// Measured states and commands on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightLog {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub commands: Vec<RotorCommand>,
}

impl FlightLog {
    pub fn new(times: Vec<f64>, states: Vec<State>, commands: Vec<RotorCommand>) -> Result<Self> {
        let log = Self {
            times,
            states,
            commands,
        };
        log.validate()?;
        Ok(log)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n < 2 {
            return Err(Error::invalid(format!("flight log needs at least 2 samples, got {n}")));
        }
        if self.states.len() != n || self.commands.len() != n {
            return Err(Error::invalid(format!(
                "flight log length mismatch: {} times, {} states, {} commands",
                n,
                self.states.len(),
                self.commands.len()
            )));
        }
        let dt = self.times[1] - self.times[0];
        if !(dt > 0.0) {
            return Err(Error::invalid("flight log times must be strictly increasing"));
        }
        for (i, w) in self.times.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 {
                return Err(Error::invalid(format!("non-uniform sampling at sample {}", i + 1)));
            }
        }
        let rotors = self.commands[0].0.len();
        for (i, (x, c)) in self.states.iter().zip(&self.commands).enumerate() {
            if !x.is_finite() {
                return Err(Error::invalid(format!("non-finite state at sample {i}")));
            }
            if c.0.len() != rotors || c.0.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::invalid(format!("invalid rotor command at sample {i}")));
            }
        }
        Ok(())
    }

    /// Sampling period.
    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Reads the plain-text log format: one row per sample with columns
    /// `t, px, py, pz, qw, qx, qy, qz, vx, vy, vz, wx, wy, wz, Ω₁ … Ωₙ`,
    /// comma separated. Blank lines and lines starting with `#` are
    /// skipped; a non-numeric first line is treated as a header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut commands = Vec::new();
        let mut width = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if times.is_empty() && width.is_none() && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) => {
                    // header row
                    width = Some(fields.len());
                    continue;
                }
                Err(e) => {
                    return Err(Error::format(format!("csv line {line_no}"), e.to_string()));
                }
            };
            let expected = *width.get_or_insert(values.len());
            if values.len() != expected {
                return Err(Error::format(
                    format!("csv line {line_no}"),
                    format!("expected {expected} columns, found {}", values.len()),
                ));
            }
            if values.len() < 15 {
                return Err(Error::format(
                    format!("csv line {line_no}"),
                    format!("need 14 state columns plus rotor speeds, found {}", values.len()),
                ));
            }
            let mut arr = [0.0; 13];
            arr.copy_from_slice(&values[1..14]);
            let q = nalgebra::Quaternion::new(arr[3], arr[4], arr[5], arr[6]);
            if !(q.norm() > 0.0) {
                return Err(Error::format(format!("csv line {line_no}"), "zero quaternion"));
            }
            let mut state = State::from_array(&arr);
            state.attitude = nalgebra::UnitQuaternion::new_normalize(q);
            times.push(values[0]);
            states.push(state);
            commands.push(RotorCommand(values[14..].to_vec()));
        }
        Self::new(times, states, commands)
    }

    /// Writes the format read by [`FlightLog::from_csv`], with a header.
    pub fn to_csv(&self) -> String {
        let n = self.commands.first().map_or(0, |c| c.0.len());
        let mut out = String::from("t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz");
        for i in 0..n {
            out.push_str(&format!(",rotor{i}"));
        }
        out.push('\n');
        for ((t, x), c) in self.times.iter().zip(&self.states).zip(&self.commands) {
            out.push_str(&format!("{t:?}"));
            for v in x.to_array() {
                out.push_str(&format!(",{v:?}"));
            }
            for w in &c.0 {
                out.push_str(&format!(",{w:?}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Observable parameter combinations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaParams {
    /// `k_T / m`
    pub theta0: f64,
    /// `l·k_T / Jx`
    pub theta1: f64,
    /// `k_M / Jz`
    pub theta2: f64,
    /// `Jz / Jx`
    pub theta3: f64,
}

impl ThetaParams {
    pub fn from_params(p: &DroneParams) -> Self {
        Self {
            theta0: p.k_thrust / p.mass,
            theta1: p.arm_length * p.k_thrust / p.inertia.x,
            theta2: p.k_torque / p.inertia.z,
            theta3: p.inertia.z / p.inertia.x,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.theta0, self.theta1, self.theta2, self.theta3]
    }

    /// Largest relative deviation from `other`, component-wise.
    pub fn max_relative_error(&self, truth: &ThetaParams) -> f64 {
        self.as_array()
            .iter()
            .zip(truth.as_array())
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max)
    }
}

const THETA_NAMES: [&str; 4] = ["theta0 (k_T/m)", "theta1 (l k_T/Jx)", "theta2 (k_M/Jz)", "theta3 (Jz/Jx)"];

/// Options for [`identify_theta`].
#[derive(Debug, Clone)]
pub struct IdentifyConfig {
    /// Minimum number of samples.
    pub min_samples: usize,
    /// Centered moving-average window over the differenced accelerations;
    /// 1 disables smoothing.
    pub smoothing_window: usize,
    /// Largest accepted condition number of the column-scaled regressor.
    pub max_condition: f64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            min_samples: 50,
            smoothing_window: 1,
            max_condition: 1e8,
        }
    }
}

/// Forward-difference accelerations `(v̇_F, ω̇_B)` for samples `0..T-1`.
pub fn finite_difference_accelerations(log: &FlightLog) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let dt = log.dt();
    log.states
        .windows(2)
        .map(|w| {
            (
                (w[1].velocity - w[0].velocity) / dt,
                (w[1].angular_velocity - w[0].angular_velocity) / dt,
            )
        })
        .collect()
}

fn moving_average(acc: &[(Vector3<f64>, Vector3<f64>)], window: usize) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    if window <= 1 {
        return acc.to_vec();
    }
    let half = window / 2;
    (0..acc.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(acc.len());
            let n = (hi - lo) as f64;
            let (mut a, mut b) = (Vector3::zeros(), Vector3::zeros());
            for (x, y) in &acc[lo..hi] {
                a += x;
                b += y;
            }
            (a / n, b / n)
        })
        .collect()
}

/// Least-squares estimate of θ from a log.
pub fn identify_theta(log: &FlightLog, mixer: &Mixer, config: &IdentifyConfig) -> Result<ThetaParams> {
    log.validate()?;
    if log.len() < config.min_samples {
        return Err(Error::invalid(format!(
            "identification needs at least {} samples, got {}",
            config.min_samples,
            log.len()
        )));
    }
    let acc = moving_average(&finite_difference_accelerations(log), config.smoothing_window);
    identify_theta_with_accelerations(&log.states[..acc.len()], &log.commands[..acc.len()], &acc, mixer, config)
}

/// Least-squares estimate of θ from states, commands, and externally
/// supplied accelerations `(v̇_F, ω̇_B)` of equal length.
pub fn identify_theta_with_accelerations(
    states: &[State],
    commands: &[RotorCommand],
    accelerations: &[(Vector3<f64>, Vector3<f64>)],
    mixer: &Mixer,
    config: &IdentifyConfig,
) -> Result<ThetaParams> {
    if states.len() != commands.len() || states.len() != accelerations.len() {
        return Err(Error::invalid("states, commands and accelerations must have equal length"));
    }
    let mut ata = Matrix4::<f64>::zeros();
    let mut aty = Vector4::<f64>::zeros();
    let mut accumulate = |row: Vector4<f64>, y: f64| {
        ata += row * row.transpose();
        aty += row * y;
    };
    for ((x, cmd), (v_dot, w_dot)) in states.iter().zip(commands).zip(accelerations) {
        if cmd.0.len() != mixer.n_rotors() {
            return Err(Error::invalid("rotor count does not match mixer"));
        }
        let m = mixer.apply_squared(&cmd.0);
        let w = x.angular_velocity;
        let z_body = x.attitude * Vector3::z();
        // v̇ + g ẑ = θ₀ (M Ω²)₁ R ẑ
        let gravity = Vector3::new(0.0, 0.0, -GRAVITY);
        for k in 0..3 {
            accumulate(Vector4::new(z_body[k] * m[0], 0.0, 0.0, 0.0), v_dot[k] - gravity[k]);
        }
        // ω̇x = θ₁ m₂ − θ₃ ωyωz + ωyωz
        accumulate(Vector4::new(0.0, m[1], 0.0, -w.y * w.z), w_dot.x - w.y * w.z);
        // ω̇y = θ₁ m₃ + θ₃ ωxωz − ωxωz
        accumulate(Vector4::new(0.0, m[2], 0.0, w.x * w.z), w_dot.y + w.x * w.z);
        // ω̇z = θ₂ m₄
        accumulate(Vector4::new(0.0, 0.0, m[3], 0.0), w_dot.z);
    }

    let norms = Vector4::from_fn(|i, _| ata[(i, i)].sqrt());
    let dead: Vec<String> = (0..4)
        .filter(|&i| !(norms[i] > 0.0) || !norms[i].is_finite())
        .map(|i| THETA_NAMES[i].to_string())
        .collect();
    if !dead.is_empty() {
        return Err(Error::InsufficientExcitation {
            columns: dead,
            condition: f64::INFINITY,
        });
    }
    // Jacobi scaling so the conditioning reflects collinearity, not units.
    let scaled = Matrix4::from_fn(|i, j| ata[(i, j)] / (norms[i] * norms[j]));
    let eig = SymmetricEigen::new(scaled);
    let (mut imin, mut imax) = (0, 0);
    for i in 1..4 {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    let lmin = eig.eigenvalues[imin].max(0.0);
    let condition = (eig.eigenvalues[imax] / lmin).sqrt();
    if !(condition < config.max_condition) {
        let v = eig.eigenvectors.column(imin);
        let peak = v.amax();
        let columns = (0..4)
            .filter(|&i| v[i].abs() >= 0.5 * peak)
            .map(|i| THETA_NAMES[i].to_string())
            .collect();
        return Err(Error::InsufficientExcitation { columns, condition });
    }
    let rhs = aty.component_div(&norms);
    let chol = scaled
        .cholesky()
        .ok_or_else(|| Error::InsufficientExcitation {
            columns: THETA_NAMES.iter().map(|s| s.to_string()).collect(),
            condition,
        })?;
    let theta = chol.solve(&rhs).component_div(&norms);
    Ok(ThetaParams {
        theta0: theta[0],
        theta1: theta[1],
        theta2: theta[2],
        theta3: theta[3],
    })
}

/// Per-step residual disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct TurbulenceResiduals {
    /// Residual acceleration in the fixed frame (m/s²), length `T − 1`.
    pub acceleration: Vec<Vector3<f64>>,
    /// Vertical disturbance force `m · a_z` (N), length `T − 1`.
    pub vertical_force: Vec<f64>,
}

/// Ground-truth disturbance by exact inversion of the Euler step.
///
/// The Euler update is affine in the disturbance with a unit block on
/// `v̇_F`, so the least-squares disturbance is
/// `(v_{t+1} − v_t)/dt − v̇_model(x_t, Ω_t, 0)`.
pub fn extract_gt_turbulence(log: &FlightLog, params: &DroneParams) -> Result<TurbulenceResiduals> {
    log.validate()?;
    params.validate()?;
    let dt = log.dt();
    let none = WrenchInput::default();
    let acceleration: Vec<Vector3<f64>> = log
        .states
        .windows(2)
        .zip(&log.commands)
        .map(|(w, cmd)| {
            let model = derivative(params, &w[0], cmd, &none).velocity;
            (w[1].velocity - w[0].velocity) / dt - model
        })
        .collect();
    let vertical_force = acceleration.iter().map(|a| params.mass * a.z).collect();
    Ok(TurbulenceResiduals {
        acceleration,
        vertical_force,
    })
}

/// One observation for the ground-effect fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundEffectSample {
    /// Disturbance force (N).
    pub force: f64,
    /// Height over ground (m).
    pub height: f64,
    /// `Σ Ωᵢ²` (rad²/s²).
    pub sum_sq: f64,
}

impl GroundEffectSample {
    pub fn new(force: f64, height: f64, cmd: &RotorCommand) -> Self {
        Self {
            force,
            height,
            sum_sq: cmd.sum_squares(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub min_samples: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Backtracking shrink factor.
    pub shrink: f64,
    /// Relative step for central-difference gradients.
    pub fd_step: f64,
    /// Gradient-norm tolerance, relative to `initial loss + 1`.
    pub gradient_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            min_samples: 20,
            armijo: 1e-4,
            shrink: 0.5,
            fd_step: 1e-7,
            gradient_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: IdentifiedGroundEffect,
    /// Unnormalized sum of squared residuals (N²).
    pub loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Normalized loss after each accepted iteration, starting with the
    /// initial value.
    pub loss_history: Vec<f64>,
}

/// Unnormalized least-squares objective of the identified law.
pub fn ground_effect_loss(samples: &[GroundEffectSample], alpha: f64, beta: f64) -> f64 {
    samples
        .iter()
        .map(|s| {
            let r = s.force - alpha * s.sum_sq / (s.height * s.height - beta);
            r * r
        })
        .sum()
}

struct Reparam {
    alpha0: f64,
    beta_max: f64,
    gap0: f64,
    norm: f64,
}

impl Reparam {
    // α = α₀·e^a, β = β_max − gap₀·e^s keeps α > 0 and β < min d².
    fn decode(&self, x: [f64; 2]) -> (f64, f64) {
        (self.alpha0 * x[0].exp(), self.beta_max - self.gap0 * x[1].exp())
    }

    fn loss(&self, samples: &[GroundEffectSample], x: [f64; 2]) -> f64 {
        let (a, b) = self.decode(x);
        let l = ground_effect_loss(samples, a, b) / self.norm;
        if l.is_finite() {
            l
        } else {
            f64::INFINITY
        }
    }
}

/// Fits `(α, β)` by BFGS with backtracking line search and
/// central-difference gradients.
pub fn fit_ground_effect(
    samples: &[GroundEffectSample],
    init: &IdentifiedGroundEffect,
    config: &FitConfig,
) -> Result<FitReport> {
    if samples.len() < config.min_samples {
        return Err(Error::invalid(format!(
            "ground effect fit needs at least {} samples, got {}",
            config.min_samples,
            samples.len()
        )));
    }
    if samples
        .iter()
        .any(|s| !(s.force.is_finite() && s.height > 0.0 && s.height.is_finite() && s.sum_sq >= 0.0))
    {
        return Err(Error::invalid("ground effect samples must be finite with positive height"));
    }
    let d_min = samples.iter().map(|s| s.height).fold(f64::INFINITY, f64::min);
    let d_max = samples.iter().map(|s| s.height).fold(0.0, f64::max);
    if d_max < 2.0 * d_min {
        return Err(Error::invalid(format!(
            "heights must span at least 2:1, got [{d_min}, {d_max}]"
        )));
    }
    let beta_max = d_min * d_min;
    if !(init.alpha > 0.0 && init.beta < beta_max) {
        return Err(Error::invalid("initial alpha must be positive and beta below min d²"));
    }

    let force_energy: f64 = samples.iter().map(|s| s.force * s.force).sum();
    let norm = if force_energy > 0.0 {
        force_energy
    } else {
        let e: f64 = samples
            .iter()
            .map(|s| init.raw(s.sum_sq, s.height).powi(2))
            .sum();
        if e > 0.0 {
            e
        } else {
            1.0
        }
    };
    let rp = Reparam {
        alpha0: init.alpha,
        beta_max,
        gap0: beta_max - init.beta,
        norm,
    };
    let f = |x: [f64; 2]| rp.loss(samples, x);
    let grad = |x: [f64; 2]| -> [f64; 2] {
        let mut g = [0.0; 2];
        for i in 0..2 {
            let h = config.fd_step * x[i].abs().max(1.0);
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            g[i] = (f(xp) - f(xm)) / (2.0 * h);
        }
        g
    };

    let mut x = [0.0f64; 2];
    let mut fx = f(x);
    let initial = fx;
    let tol = config.gradient_tolerance * (initial + 1.0);
    let mut history = vec![fx];
    let mut h_inv = [[1.0, 0.0], [0.0, 1.0]];
    let mut g = grad(x);
    let norm2 = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();

    for iter in 0..config.max_iterations {
        let gn = norm2(g);
        if gn <= tol {
            let (alpha, beta) = rp.decode(x);
            return Ok(FitReport {
                params: IdentifiedGroundEffect {
                    alpha,
                    beta,
                    f_cap: init.f_cap,
                    eps: init.eps,
                },
                loss: fx * norm,
                initial_loss: initial * norm,
                iterations: iter,
                gradient_norm: gn,
                loss_history: history,
            });
        }
        let mut p = [
            -(h_inv[0][0] * g[0] + h_inv[0][1] * g[1]),
            -(h_inv[1][0] * g[0] + h_inv[1][1] * g[1]),
        ];
        let mut slope = p[0] * g[0] + p[1] * g[1];
        if !(slope < 0.0) {
            h_inv = [[1.0, 0.0], [0.0, 1.0]];
            p = [-g[0], -g[1]];
            slope = -gn * gn;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let xn = [x[0] + t * p[0], x[1] + t * p[1]];
            let fxn = f(xn);
            if fxn <= fx + config.armijo * t * slope {
                accepted = Some((xn, fxn));
                break;
            }
            t *= config.shrink;
        }
        let Some((xn, fxn)) = accepted else {
            // No descent available along a descent direction: the gradient
            // estimate is at its noise floor.
            if !(h_inv[0][0] == 1.0 && h_inv[1][1] == 1.0 && h_inv[0][1] == 0.0) {
                h_inv = [[1.0, 0.0], [0.0, 1.0]];
                continue;
            }
            break;
        };
        let gn_new = grad(xn);
        let s = [xn[0] - x[0], xn[1] - x[1]];
        let y = [gn_new[0] - g[0], gn_new[1] - g[1]];
        let sy = s[0] * y[0] + s[1] * y[1];
        if sy > 1e-300 {
            // H⁺ = (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy = [
                h_inv[0][0] * y[0] + h_inv[0][1] * y[1],
                h_inv[1][0] * y[0] + h_inv[1][1] * y[1],
            ];
            let yhy = y[0] * hy[0] + y[1] * hy[1];
            for i in 0..2 {
                for j in 0..2 {
                    h_inv[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        x = xn;
        fx = fxn;
        g = gn_new;
        history.push(fx);
    }
    let (alpha, beta) = rp.decode(x);
    Err(Error::NoConvergence {
        iterations: history.len() - 1,
        loss: fx * norm,
        alpha,
        beta,
    })
}

/// Open-loop excitation flight: every rotor follows hover speed plus a sum
/// of three random-phase sinusoids (±6% amplitude, 0.5–3 Hz), optionally
/// with a disturbance `disturbance(t)` in Newtons along world z.
/// Deterministic in `seed`.
pub fn excitation_flight(
    params: &DroneParams,
    duration: f64,
    dt: f64,
    seed: u64,
    disturbance: impl Fn(f64) -> f64,
) -> Result<FlightLog> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let hover = params.hover_speed();
    let n_rot = params.n_rotors();
    let comps: Vec<[(f64, f64, f64); 3]> = (0..n_rot)
        .map(|_| {
            std::array::from_fn(|_| {
                (
                    rng.random_range(0.01..0.02),
                    rng.random_range(0.5..3.0) * std::f64::consts::TAU,
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
        })
        .collect();
    let steps = (duration / dt).round() as usize;
    let mut x = State::at_rest(Vector3::new(0.0, 0.0, 1.0));
    let (mut times, mut states, mut commands) = (vec![], vec![], vec![]);
    for i in 0..=steps {
        let t = i as f64 * dt;
        let cmd = RotorCommand(
            (0..n_rot)
                .map(|r| {
                    let wobble: f64 = comps[r].iter().map(|(a, w, ph)| a * (w * t + ph).sin()).sum();
                    (hover.0[r] * (1.0 + wobble)).clamp(0.0, params.max_rotor_speed)
                })
                .collect(),
        );
        times.push(t);
        states.push(x.clone());
        commands.push(cmd.clone());
        let w = WrenchInput::vertical_force(disturbance(t), params.mass);
        x = crate::dynamics::step(params, &x, &cmd, &w, dt)?;
    }
    FlightLog::new(times, states, commands)
}
