//! Generically tilted multirotor (GTMR) rigid-body model.
//!
//! The extended state stacks position, ZYX Euler angles, world-frame velocity,
//! body rates and the per-rotor mechanical speeds (Hz). The control input is
//! the rotor acceleration; thrust and drag torque scale with the squared speed.
//!
//! Flat vectors use the layout `[p(3), η(3), v(3), ω(3), γ(N_p)]`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Matrix6xX, Vector3};

use crate::{Error, Result};

/// Offsets into the flat extended state.
pub const POS: usize = 0;
pub const EULER: usize = 3;
pub const VEL: usize = 6;
pub const RATES: usize = 9;
pub const ROTORS: usize = 12;

/// Margin to the gimbal-lock pitch angle below which the Euler-rate map is
/// accepted.
pub const PITCH_GUARD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GtmrParams {
    pub n_rotors: usize,
    /// kg
    pub mass: f64,
    /// m/s²
    pub gravity: f64,
    /// kg·m², principal axes
    pub inertia_diag: Vector3<f64>,
    /// N per squared rotor speed (Hz²)
    pub thrust_coeff: f64,
    /// N·m per squared rotor speed (Hz²)
    pub torque_coeff: f64,
    /// m, rotor distance from the centre of mass
    pub arm_length: f64,
    /// rad, tilt about the radial direction
    pub tilt_alpha: Vec<f64>,
    /// rad, tilt about the tangential direction
    pub tilt_beta: Vec<f64>,
    /// ±1 per rotor; sign of the reaction drag torque along the rotor axis
    pub spin_dir: Vec<f64>,
    /// Hz
    pub speed_min: f64,
    pub speed_max: f64,
    /// Hz/s
    pub accel_min: f64,
    pub accel_max: f64,
}

impl GtmrParams {
    /// Tilted hexarotor used in the inspection experiment: α = ±20°
    /// alternating, β = 0, alternating spin.
    pub fn tilted_hexarotor() -> Self {
        let alpha = 20f64.to_radians();
        Self {
            n_rotors: 6,
            mass: 2.57,
            gravity: 9.81,
            inertia_diag: Vector3::new(0.11, 0.11, 0.19),
            thrust_coeff: 1.18e-3,
            torque_coeff: 2.5e-5,
            arm_length: 0.4,
            tilt_alpha: alternating(6, alpha),
            tilt_beta: vec![0.0; 6],
            spin_dir: alternating(6, 1.0),
            speed_min: 16.0,
            speed_max: 100.0,
            accel_min: -200.0,
            accel_max: 400.0,
        }
    }

    /// Same airframe with all rotor axes parallel to the body z axis.
    pub fn coplanar_hexarotor() -> Self {
        Self {
            tilt_alpha: vec![0.0; 6],
            ..Self::tilted_hexarotor()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_rotors;
        if n < 4 {
            return Err(Error::invalid("n_rotors", format!("need at least 4 rotors, got {n}")));
        }
        positive("mass", self.mass)?;
        positive("gravity", self.gravity)?;
        for (i, j) in self.inertia_diag.iter().enumerate() {
            positive(&format!("inertia[{i}]"), *j)?;
        }
        positive("thrust_coeff", self.thrust_coeff)?;
        if !self.torque_coeff.is_finite() || self.torque_coeff < 0.0 {
            return Err(Error::invalid("torque_coeff", "must be finite and non-negative"));
        }
        positive("arm_length", self.arm_length)?;
        for (name, v) in [
            ("tilt_alpha", &self.tilt_alpha),
            ("tilt_beta", &self.tilt_beta),
            ("spin_dir", &self.spin_dir),
        ] {
            if v.len() != n {
                return Err(Error::invalid(name, format!("expected {n} entries, got {}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(name, "entries must be finite"));
            }
        }
        if self.spin_dir.iter().any(|s| s.abs() != 1.0) {
            return Err(Error::invalid("spin_dir", "entries must be +1 or -1"));
        }
        if !(self.speed_min < self.speed_max) {
            return Err(Error::invalid("speed bounds", "speed_min must be below speed_max"));
        }
        if !(self.accel_min < 0.0 && 0.0 < self.accel_max) {
            return Err(Error::invalid("acceleration bounds", "need accel_min < 0 < accel_max"));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        ROTORS + self.n_rotors
    }

    /// Equal rotor speed (Hz) whose vertical thrust balances gravity. Lateral
    /// components cancel for the symmetric layouts built here.
    pub fn hover_speed(&self) -> f64 {
        let vertical: f64 = (0..self.n_rotors).map(|i| self.rotor_axis(i).z).sum();
        (self.mass * self.gravity / (self.thrust_coeff * vertical)).sqrt()
    }

    /// Rotor azimuth in the body x–y plane.
    pub fn rotor_azimuth(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * i as f64 / self.n_rotors as f64
    }

    pub fn rotor_position(&self, i: usize) -> Vector3<f64> {
        let az = self.rotor_azimuth(i);
        Vector3::new(az.cos(), az.sin(), 0.0) * self.arm_length
    }

    /// z_P = Rz(azimuth) · Rx(α) · Ry(β) · e₃, i.e. α about the radial and β
    /// about the tangential direction.
    pub fn rotor_axis(&self, i: usize) -> Vector3<f64> {
        let az = self.rotor_azimuth(i);
        let (sa, ca) = self.tilt_alpha[i].sin_cos();
        let (sb, cb) = self.tilt_beta[i].sin_cos();
        // Rx(α) Ry(β) e₃ in the rotor-local frame (x radial, y tangential).
        let local = Vector3::new(sb, -sa * cb, ca * cb);
        let (s, c) = az.sin_cos();
        Vector3::new(c * local.x - s * local.y, s * local.x + c * local.y, local.z)
    }
}

fn alternating(n: usize, value: f64) -> Vec<f64> {
    (0..n).map(|i| if i % 2 == 0 { value } else { -value }).collect()
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be positive, got {v}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidBodyState {
    /// m, world frame
    pub position: Vector3<f64>,
    /// rad, (roll, pitch, yaw)
    pub euler: Vector3<f64>,
    /// m/s, world frame
    pub velocity: Vector3<f64>,
    /// rad/s, body frame
    pub body_rates: Vector3<f64>,
}

impl RigidBodyState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            euler: Vector3::zeros(),
            velocity: Vector3::zeros(),
            body_rates: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    pub body: RigidBodyState,
    /// Hz, one entry per rotor
    pub rotor_speeds: DVector<f64>,
}

impl ExtendedState {
    /// Level, motionless vehicle at `position` spinning every rotor at the
    /// hover speed.
    pub fn hover(params: &GtmrParams, position: Vector3<f64>) -> Self {
        Self {
            body: RigidBodyState::at_rest(position),
            rotor_speeds: DVector::from_element(params.n_rotors, params.hover_speed()),
        }
    }

    pub fn n_rotors(&self) -> usize {
        self.rotor_speeds.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(ROTORS + self.n_rotors());
        x.fixed_rows_mut::<3>(POS).copy_from(&self.body.position);
        x.fixed_rows_mut::<3>(EULER).copy_from(&self.body.euler);
        x.fixed_rows_mut::<3>(VEL).copy_from(&self.body.velocity);
        x.fixed_rows_mut::<3>(RATES).copy_from(&self.body.body_rates);
        x.rows_mut(ROTORS, self.n_rotors()).copy_from(&self.rotor_speeds);
        x
    }

    pub fn from_slice(x: &[f64]) -> Self {
        assert!(x.len() >= ROTORS, "extended state needs at least {ROTORS} entries");
        let v3 = |o: usize| Vector3::new(x[o], x[o + 1], x[o + 2]);
        Self {
            body: RigidBodyState {
                position: v3(POS),
                euler: v3(EULER),
                velocity: v3(VEL),
                body_rates: v3(RATES),
            },
            rotor_speeds: DVector::from_column_slice(&x[ROTORS..]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlRate {
    /// Hz/s, one entry per rotor
    pub rotor_accels: DVector<f64>,
}

impl ControlRate {
    pub fn zeros(n_rotors: usize) -> Self {
        Self {
            rotor_accels: DVector::zeros(n_rotors),
        }
    }

    pub fn from_slice(u: &[f64]) -> Self {
        Self {
            rotor_accels: DVector::from_column_slice(u),
        }
    }
}

/// Wrench of each rotor per unit squared speed.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrices {
    /// N per Hz², body frame
    pub force_map: Matrix3xX<f64>,
    /// N·m per Hz², body frame
    pub torque_map: Matrix3xX<f64>,
}

impl AllocationMatrices {
    pub fn stacked(&self) -> Matrix6xX<f64> {
        let n = self.force_map.ncols();
        let mut w = Matrix6xX::zeros(n);
        w.fixed_rows_mut::<3>(0).copy_from(&self.force_map);
        w.fixed_rows_mut::<3>(3).copy_from(&self.torque_map);
        w
    }

    /// Numerical rank of `[F; M]`: singular values above `rel_tol` times the
    /// largest one.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let sv = self.stacked().svd(false, false).singular_values;
        let max = sv.max();
        sv.iter().filter(|s| **s > rel_tol * max).count()
    }
}

pub fn build_allocation(params: &GtmrParams) -> Result<AllocationMatrices> {
    params.validate()?;
    let n = params.n_rotors;
    let mut force_map = Matrix3xX::zeros(n);
    let mut torque_map = Matrix3xX::zeros(n);
    for i in 0..n {
        let axis = params.rotor_axis(i);
        let arm = params.rotor_position(i);
        force_map.set_column(i, &(axis * params.thrust_coeff));
        let torque = arm.cross(&axis) * params.thrust_coeff
            + axis * (params.spin_dir[i] * params.torque_coeff);
        torque_map.set_column(i, &torque);
    }
    Ok(AllocationMatrices {
        force_map,
        torque_map,
    })
}

/// ZYX composition R = Rz(ψ)·Ry(ϑ)·Rx(φ), mapping body vectors to the world
/// frame.
pub fn rotation_matrix(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sp, cp) = euler.x.sin_cos();
    let (st, ct) = euler.y.sin_cos();
    let (ss, cs) = euler.z.sin_cos();
    Matrix3::new(
        cs * ct,
        cs * st * sp - ss * cp,
        cs * st * cp + ss * sp,
        ss * ct,
        ss * st * sp + cs * cp,
        ss * st * cp - cs * sp,
        -st,
        ct * sp,
        ct * cp,
    )
}

/// Partial derivatives ∂R/∂φ, ∂R/∂ϑ, ∂R/∂ψ.
pub fn rotation_partials(euler: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (sp, cp) = euler.x.sin_cos();
    let (st, ct) = euler.y.sin_cos();
    let (ss, cs) = euler.z.sin_cos();
    let d_roll = Matrix3::new(
        0.0,
        cs * st * cp + ss * sp,
        -cs * st * sp + ss * cp,
        0.0,
        ss * st * cp - cs * sp,
        -ss * st * sp - cs * cp,
        0.0,
        ct * cp,
        -ct * sp,
    );
    let d_pitch = Matrix3::new(
        -cs * st,
        cs * ct * sp,
        cs * ct * cp,
        -ss * st,
        ss * ct * sp,
        ss * ct * cp,
        -ct,
        -st * sp,
        -st * cp,
    );
    let d_yaw = Matrix3::new(
        -ss * ct,
        -ss * st * sp - cs * cp,
        -ss * st * cp + cs * sp,
        cs * ct,
        cs * st * sp - ss * cp,
        cs * st * cp + ss * sp,
        0.0,
        0.0,
        0.0,
    );
    [d_roll, d_pitch, d_yaw]
}

fn check_pitch(euler: &Vector3<f64>) -> Result<()> {
    let pitch = euler.y;
    if !pitch.is_finite() || pitch.abs() >= std::f64::consts::FRAC_PI_2 - PITCH_GUARD {
        return Err(Error::EulerSingularity { pitch });
    }
    Ok(())
}

/// Map T(η) from body rates to ZYX Euler-angle rates.
pub fn euler_rate_matrix(euler: &Vector3<f64>) -> Result<Matrix3<f64>> {
    check_pitch(euler)?;
    let (sp, cp) = euler.x.sin_cos();
    let (st, ct) = euler.y.sin_cos();
    let tt = st / ct;
    Ok(Matrix3::new(
        1.0,
        sp * tt,
        cp * tt,
        0.0,
        cp,
        -sp,
        0.0,
        sp / ct,
        cp / ct,
    ))
}

/// ∂T/∂φ and ∂T/∂ϑ (T does not depend on yaw).
fn euler_rate_partials(euler: &Vector3<f64>) -> [Matrix3<f64>; 2] {
    let (sp, cp) = euler.x.sin_cos();
    let (st, ct) = euler.y.sin_cos();
    let tt = st / ct;
    let sec2 = 1.0 / (ct * ct);
    let d_roll = Matrix3::new(0.0, cp * tt, -sp * tt, 0.0, -sp, -cp, 0.0, cp / ct, -sp / ct);
    let d_pitch = Matrix3::new(
        0.0,
        sp * sec2,
        cp * sec2,
        0.0,
        0.0,
        0.0,
        0.0,
        sp * st * sec2,
        cp * st * sec2,
    );
    [d_roll, d_pitch]
}

/// Skew-symmetric matrix with `skew(a) b = a × b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Parameters and allocation bundled for repeated evaluation on flat vectors.
#[derive(Debug, Clone)]
pub struct GtmrModel {
    pub params: GtmrParams,
    pub alloc: AllocationMatrices,
}

impl GtmrModel {
    pub fn new(params: GtmrParams) -> Result<Self> {
        let alloc = build_allocation(&params)?;
        Ok(Self { params, alloc })
    }

    pub fn nx(&self) -> usize {
        self.params.state_dim()
    }

    pub fn nu(&self) -> usize {
        self.params.n_rotors
    }

    fn squared_speeds(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.nu(), x[ROTORS..].iter().map(|g| g * g))
    }

    /// World-frame acceleration v̇ predicted by the model.
    pub fn acceleration(&self, x: &[f64]) -> Vector3<f64> {
        let euler = Vector3::new(x[EULER], x[EULER + 1], x[EULER + 2]);
        let thrust = &self.alloc.force_map * self.squared_speeds(x);
        rotation_matrix(&euler) * thrust / self.params.mass
            - Vector3::new(0.0, 0.0, self.params.gravity)
    }

    /// ∂v̇/∂x̄ (3 × nx); only the attitude and rotor-speed columns are nonzero.
    pub fn acceleration_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let euler = Vector3::new(x[EULER], x[EULER + 1], x[EULER + 2]);
        let body_force = &self.alloc.force_map * self.squared_speeds(x);
        let m = self.params.mass;
        let mut jac = DMatrix::zeros(3, self.nx());
        for (k, drk) in rotation_partials(&euler).iter().enumerate() {
            jac.fixed_view_mut::<3, 1>(0, EULER + k)
                .copy_from(&(drk * body_force / m));
        }
        let rf = rotation_matrix(&euler) * &self.alloc.force_map;
        for i in 0..self.nu() {
            let g = x[ROTORS + i];
            jac.fixed_view_mut::<3, 1>(0, ROTORS + i)
                .copy_from(&(rf.column(i) * (2.0 * g / m)));
        }
        jac
    }

    pub fn derivative(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        let nx = self.nx();
        debug_assert_eq!(x.len(), nx);
        debug_assert_eq!(u.len(), self.nu());
        let euler = Vector3::new(x[EULER], x[EULER + 1], x[EULER + 2]);
        let omega = Vector3::new(x[RATES], x[RATES + 1], x[RATES + 2]);
        let t = euler_rate_matrix(&euler)?;
        let sq = self.squared_speeds(x);
        let j = self.params.inertia_diag;

        let mut dx = DVector::zeros(nx);
        dx.fixed_rows_mut::<3>(POS)
            .copy_from_slice(&x[VEL..VEL + 3]);
        dx.fixed_rows_mut::<3>(EULER).copy_from(&(t * omega));
        let accel = rotation_matrix(&euler) * (&self.alloc.force_map * &sq) / self.params.mass
            - Vector3::new(0.0, 0.0, self.params.gravity);
        dx.fixed_rows_mut::<3>(VEL).copy_from(&accel);
        let jw = j.component_mul(&omega);
        let torque = &self.alloc.torque_map * &sq - omega.cross(&jw);
        dx.fixed_rows_mut::<3>(RATES)
            .copy_from(&torque.component_div(&j));
        dx.rows_mut(ROTORS, self.nu()).copy_from_slice(u);
        Ok(dx)
    }

    /// ∂f/∂x̄ of the continuous dynamics. ∂f/∂ū is the constant selector
    /// `[0; I]`.
    pub fn state_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let nx = self.nx();
        let nu = self.nu();
        let euler = Vector3::new(x[EULER], x[EULER + 1], x[EULER + 2]);
        let omega = Vector3::new(x[RATES], x[RATES + 1], x[RATES + 2]);
        let t = euler_rate_matrix(&euler)?;
        let dt = euler_rate_partials(&euler);
        let r = rotation_matrix(&euler);
        let dr = rotation_partials(&euler);
        let sq = self.squared_speeds(x);
        let body_force = &self.alloc.force_map * &sq;
        let m = self.params.mass;
        let j = self.params.inertia_diag;

        let mut a = DMatrix::zeros(nx, nx);
        for i in 0..3 {
            a[(POS + i, VEL + i)] = 1.0;
        }
        // η̇ = T(η) ω
        for (k, dtk) in dt.iter().enumerate() {
            a.fixed_view_mut::<3, 1>(EULER, EULER + k)
                .copy_from(&(dtk * omega));
        }
        a.fixed_view_mut::<3, 3>(EULER, RATES).copy_from(&t);
        // v̇ = R F Ω / m − g e₃
        for (k, drk) in dr.iter().enumerate() {
            a.fixed_view_mut::<3, 1>(VEL, EULER + k)
                .copy_from(&(drk * body_force / m));
        }
        let rf = r * &self.alloc.force_map;
        for i in 0..nu {
            let g = x[ROTORS + i];
            a.fixed_view_mut::<3, 1>(VEL, ROTORS + i)
                .copy_from(&(rf.column(i) * (2.0 * g / m)));
        }
        // J ω̇ = −ω × Jω + M Ω
        let jw = j.component_mul(&omega);
        let d_omega = -skew(&omega) * Matrix3::from_diagonal(&j) + skew(&jw);
        for c in 0..3 {
            for rr in 0..3 {
                a[(RATES + rr, RATES + c)] = d_omega[(rr, c)] / j[rr];
            }
        }
        for i in 0..nu {
            let g = x[ROTORS + i];
            let col = self.alloc.torque_map.column(i) * (2.0 * g);
            for rr in 0..3 {
                a[(RATES + rr, ROTORS + i)] = col[rr] / j[rr];
            }
        }
        Ok(a)
    }

    /// Classical RK4 step with the input held constant over the interval.
    pub fn rk4(&self, x: &[f64], u: &[f64], dt: f64) -> Result<DVector<f64>> {
        let x0 = DVector::from_column_slice(x);
        let k1 = self.derivative(x, u)?;
        let x2 = &x0 + &k1 * (0.5 * dt);
        let k2 = self.derivative(x2.as_slice(), u)?;
        let x3 = &x0 + &k2 * (0.5 * dt);
        let k3 = self.derivative(x3.as_slice(), u)?;
        let x4 = &x0 + &k3 * dt;
        let k4 = self.derivative(x4.as_slice(), u)?;
        Ok(x0 + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0))
    }

    /// RK4 step together with its exact sensitivities ∂x⁺/∂x and ∂x⁺/∂u,
    /// propagated through the four stages.
    pub fn rk4_sensitivity(
        &self,
        x: &[f64],
        u: &[f64],
        dt: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let nx = self.nx();
        let nu = self.nu();
        let nz = nx + nu;
        let mut seed = DMatrix::zeros(nx, nz);
        seed.view_mut((0, 0), (nx, nx)).fill_with_identity();

        let stage = |xs: &DVector<f64>, sens: &DMatrix<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let k = self.derivative(xs.as_slice(), u)?;
            let a = self.state_jacobian(xs.as_slice())?;
            let mut dk = a * sens;
            for i in 0..nu {
                dk[(ROTORS + i, nx + i)] += 1.0;
            }
            Ok((k, dk))
        };

        let x0 = DVector::from_column_slice(x);
        let (k1, d1) = stage(&x0, &seed)?;
        let (k2, d2) = stage(&(&x0 + &k1 * (0.5 * dt)), &(&seed + &d1 * (0.5 * dt)))?;
        let (k3, d3) = stage(&(&x0 + &k2 * (0.5 * dt)), &(&seed + &d2 * (0.5 * dt)))?;
        let (k4, d4) = stage(&(&x0 + &k3 * dt), &(&seed + &d3 * dt))?;
        let next = x0 + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
        let sens = seed + (d1 + (d2 + d3) * 2.0 + d4) * (dt / 6.0);
        let fx = sens.columns(0, nx).into_owned();
        let fu = sens.columns(nx, nu).into_owned();
        Ok((next, fx, fu))
    }
}

/// Time derivative of the extended state.
pub fn continuous_dynamics(
    x: &ExtendedState,
    u: &ControlRate,
    params: &GtmrParams,
    alloc: &AllocationMatrices,
) -> Result<ExtendedState> {
    check_dims(x, u, params)?;
    let model = GtmrModel {
        params: params.clone(),
        alloc: alloc.clone(),
    };
    let dx = model.derivative(x.to_vector().as_slice(), u.rotor_accels.as_slice())?;
    Ok(ExtendedState::from_slice(dx.as_slice()))
}

pub fn rk4_step(
    x: &ExtendedState,
    u: &ControlRate,
    dt: f64,
    params: &GtmrParams,
    alloc: &AllocationMatrices,
) -> Result<ExtendedState> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "integration step must be positive"));
    }
    check_dims(x, u, params)?;
    let model = GtmrModel {
        params: params.clone(),
        alloc: alloc.clone(),
    };
    let next = model.rk4(x.to_vector().as_slice(), u.rotor_accels.as_slice(), dt)?;
    Ok(ExtendedState::from_slice(next.as_slice()))
}

/// Model-based world-frame acceleration (the v̇ rows of the dynamics).
pub fn acceleration_output(
    x: &ExtendedState,
    params: &GtmrParams,
    alloc: &AllocationMatrices,
) -> Vector3<f64> {
    let sq = x.rotor_speeds.map(|g| g * g);
    rotation_matrix(&x.body.euler) * (&alloc.force_map * sq) / params.mass
        - Vector3::new(0.0, 0.0, params.gravity)
}

fn check_dims(x: &ExtendedState, u: &ControlRate, params: &GtmrParams) -> Result<()> {
    if x.n_rotors() != params.n_rotors || u.rotor_accels.len() != params.n_rotors {
        return Err(Error::Dimension(format!(
            "expected {} rotors, state has {} and control has {}",
            params.n_rotors,
            x.n_rotors(),
            u.rotor_accels.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_euler(rng: &mut impl Rng) -> Vector3<f64> {
        Vector3::new(
            rng.gen_range(-1.2..1.2),
            rng.gen_range(-1.2..1.2),
            rng.gen_range(-3.0..3.0),
        )
    }

    #[test]
    fn coplanar_columns_are_vertical_and_rank_four() {
        let p = GtmrParams::coplanar_hexarotor();
        let a = build_allocation(&p).unwrap();
        for i in 0..6 {
            let col = a.force_map.column(i);
            assert_relative_eq!(col.x, 0.0, epsilon = 1e-18);
            assert_relative_eq!(col.y, 0.0, epsilon = 1e-18);
            assert_relative_eq!(col.z, p.thrust_coeff, epsilon = 1e-18);
        }
        assert_eq!(a.rank(1e-6), 4);
    }

    #[test]
    fn tilted_allocation_has_full_rank() {
        let a = build_allocation(&GtmrParams::tilted_hexarotor()).unwrap();
        assert_eq!(a.rank(1e-6), 6);
    }

    #[test]
    fn torque_column_matches_cross_product() {
        let p = GtmrParams::coplanar_hexarotor();
        let a = build_allocation(&p).unwrap();
        // rotor 0 sits at (0.4, 0, 0); (0.4,0,0) × (0,0,1) = (0,−0.4,0)
        let expected = Vector3::new(0.0, -0.4 * p.thrust_coeff, p.torque_coeff);
        assert_relative_eq!(a.torque_map.column(0).into_owned(), expected, epsilon = 1e-18);
        let expected1 = {
            let az = std::f64::consts::PI / 3.0;
            let pos = Vector3::new(0.4 * az.cos(), 0.4 * az.sin(), 0.0);
            Vector3::new(pos.y, -pos.x, 0.0) * p.thrust_coeff - Vector3::z() * p.torque_coeff
        };
        assert_relative_eq!(a.torque_map.column(1).into_owned(), expected1, epsilon = 1e-15);
    }

    #[test]
    fn rotation_identities() {
        assert_eq!(rotation_matrix(&Vector3::zeros()), Matrix3::identity());
        let yaw = rotation_matrix(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        assert_relative_eq!(yaw * Vector3::x(), Vector3::y(), epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let r = rotation_matrix(&random_euler(&mut rng));
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-6;
        for _ in 0..50 {
            let e = random_euler(&mut rng);
            let d = rotation_partials(&e);
            for k in 0..3 {
                let mut ep = e;
                let mut em = e;
                ep[k] += h;
                em[k] -= h;
                let fd = (rotation_matrix(&ep) - rotation_matrix(&em)) / (2.0 * h);
                assert!((fd - d[k]).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn euler_rate_identity_and_singularity() {
        assert_eq!(euler_rate_matrix(&Vector3::zeros()).unwrap(), Matrix3::identity());
        let bad = Vector3::new(0.0, std::f64::consts::FRAC_PI_2 - 1e-4, 0.0);
        assert!(matches!(euler_rate_matrix(&bad), Err(Error::EulerSingularity { .. })));
    }

    /// Ṙ = R [ω]× must hold when the angles evolve as η̇ = T(η) ω.
    #[test]
    fn euler_rates_reproduce_rotation_kinematics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..200 {
            let e = random_euler(&mut rng);
            let w = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let eta_dot = euler_rate_matrix(&e).unwrap() * w;
            let fd = (rotation_matrix(&(e + eta_dot * h)) - rotation_matrix(&(e - eta_dot * h)))
                / (2.0 * h);
            let exact = rotation_matrix(&e) * skew(&w);
            assert!((fd - exact).norm() <= 1e-5 * exact.norm().max(1e-3));
        }
    }

    #[test]
    fn hover_is_a_fixed_point() {
        for p in [GtmrParams::coplanar_hexarotor(), GtmrParams::tilted_hexarotor()] {
            let a = build_allocation(&p).unwrap();
            let x = ExtendedState::hover(&p, Vector3::new(1.0, -2.0, 3.0));
            let dx = continuous_dynamics(&x, &ControlRate::zeros(6), &p, &a).unwrap();
            assert!(dx.to_vector().norm() < 1e-10, "{}", dx.to_vector().norm());
        }
    }

    #[test]
    fn tilted_hover_speed_matches_force_balance() {
        let p = GtmrParams::tilted_hexarotor();
        let expected = (2.57 * 9.81 / (1.18e-3 * 6.0 * 20f64.to_radians().cos())).sqrt();
        assert_relative_eq!(p.hover_speed(), expected, epsilon = 1e-12);
        assert!((p.hover_speed() - 61.6).abs() < 0.05);
    }

    #[test]
    fn free_fall_with_rotors_off() {
        let p = GtmrParams::tilted_hexarotor();
        let a = build_allocation(&p).unwrap();
        let mut x = ExtendedState::hover(&p, Vector3::zeros());
        x.rotor_speeds.fill(0.0);
        let dx = continuous_dynamics(&x, &ControlRate::zeros(6), &p, &a).unwrap();
        assert_eq!(dx.body.velocity, Vector3::new(0.0, 0.0, -9.81));
        assert_eq!(acceleration_output(&x, &p, &a), Vector3::new(0.0, 0.0, -9.81));
    }

    #[test]
    fn acceleration_output_matches_dynamics_row() {
        let p = GtmrParams::tilted_hexarotor();
        let model = GtmrModel::new(p.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x = random_state(&mut rng, &p);
            let u = ControlRate::zeros(6);
            let dx = continuous_dynamics(&x, &u, &p, &model.alloc).unwrap();
            assert_eq!(acceleration_output(&x, &p, &model.alloc), dx.body.velocity);
        }
    }

    pub(crate) fn random_state(rng: &mut impl Rng, p: &GtmrParams) -> ExtendedState {
        let mut v = || Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let body = RigidBodyState {
            position: v() * 3.0,
            euler: v() * 0.8,
            velocity: v(),
            body_rates: v(),
        };
        let speeds = DVector::from_fn(p.n_rotors, |_, _| rng.gen_range(p.speed_min..p.speed_max));
        ExtendedState {
            body,
            rotor_speeds: speeds,
        }
    }

    #[test]
    fn state_jacobian_matches_finite_differences() {
        let p = GtmrParams::tilted_hexarotor();
        let model = GtmrModel::new(p.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = [0.0; 6];
        for _ in 0..50 {
            let x = random_state(&mut rng, &p).to_vector();
            let a = model.state_jacobian(x.as_slice()).unwrap();
            for c in 0..model.nx() {
                let h = 1e-6 * x[c].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let fd = (model.derivative(xp.as_slice(), &u).unwrap()
                    - model.derivative(xm.as_slice(), &u).unwrap())
                    / (2.0 * h);
                let col = a.column(c);
                assert!((fd - col).norm() <= 1e-5 * col.norm().max(1.0));
            }
        }
    }

    #[test]
    fn rk4_hover_stays_put() {
        let p = GtmrParams::tilted_hexarotor();
        let a = build_allocation(&p).unwrap();
        let x0 = ExtendedState::hover(&p, Vector3::new(0.0, 0.0, 1.0));
        let mut x = x0.clone();
        let u = ControlRate::zeros(6);
        for _ in 0..1000 {
            x = rk4_step(&x, &u, 1e-3, &p, &a).unwrap();
        }
        let diff = x.to_vector() - x0.to_vector();
        assert!(diff.amax() < 1e-9, "{}", diff.amax());
    }

    #[test]
    fn rk4_rejects_non_positive_step() {
        let p = GtmrParams::tilted_hexarotor();
        let a = build_allocation(&p).unwrap();
        let x = ExtendedState::hover(&p, Vector3::zeros());
        assert!(rk4_step(&x, &ControlRate::zeros(6), 0.0, &p, &a).is_err());
    }

    #[test]
    fn rk4_sensitivity_matches_finite_differences() {
        let p = GtmrParams::tilted_hexarotor();
        let model = GtmrModel::new(p.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let x = random_state(&mut rng, &p).to_vector();
            let u: Vec<f64> = (0..6).map(|_| rng.gen_range(-200.0..400.0)).collect();
            let (_, fx, fu) = model.rk4_sensitivity(x.as_slice(), &u, 0.015).unwrap();
            for c in 0..model.nx() {
                let h = 1e-6 * x[c].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let fd = (model.rk4(xp.as_slice(), &u, 0.015).unwrap()
                    - model.rk4(xm.as_slice(), &u, 0.015).unwrap())
                    / (2.0 * h);
                assert!((&fd - fx.column(c)).norm() <= 1e-5 * fd.norm().max(1.0));
            }
            for c in 0..6 {
                let h = 1e-4;
                let mut up = u.clone();
                let mut um = u.clone();
                up[c] += h;
                um[c] -= h;
                let fd = (model.rk4(x.as_slice(), &up, 0.015).unwrap()
                    - model.rk4(x.as_slice(), &um, 0.015).unwrap())
                    / (2.0 * h);
                assert!((&fd - fu.column(c)).norm() <= 1e-5 * fd.norm().max(1e-3));
            }
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = GtmrParams::tilted_hexarotor();
        p.mass = -1.0;
        assert!(build_allocation(&p).is_err());
        let mut p = GtmrParams::tilted_hexarotor();
        p.tilt_alpha.pop();
        assert!(p.validate().is_err());
        let mut p = GtmrParams::tilted_hexarotor();
        p.accel_min = 10.0;
        assert!(p.validate().is_err());
    }
}
