//! Optical transceiver geometry and connectivity indicators.
//!
//! The link vector runs from the receiver to the transmitter aperture,
//! `d_C = p_T − p_R`, where `p_T = p + R(η)·p_BT`. The beam leaves along the
//! transmitter z axis, `z_T = R(η)·R_BT·e₃`.

use nalgebra::{Matrix3, RowSVector, SMatrix, Vector3};

use crate::dynamics::{rotation_matrix, rotation_partials, skew, ExtendedState, EULER, POS, RATES, VEL};
use crate::{Error, Result};

/// Separations at or below this are treated as degenerate.
pub const MIN_RANGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OpticalParams {
    /// cos ψ_C used by the NMPC cone constraint on the misalignment cosine
    pub cone_cos_threshold: f64,
    /// rad, receiver field-of-view aperture used by the I_rx indicator
    pub rx_fov: f64,
    /// rad, transmitter half-power beam width Φ_1/2
    pub tx_half_power: f64,
    /// m
    pub range_min: f64,
    pub range_max: f64,
    /// m, target link distance Υ
    pub desired_range: f64,
    /// m, transmitter position in the body frame
    pub tx_offset_body: Vector3<f64>,
    /// transmitter frame orientation in the body frame
    pub tx_rotation_body: Matrix3<f64>,
    /// s, averaging window T_rx
    pub rx_window: f64,
    /// s, first-order lag of the receiver gimbal (0 = perfect tracking)
    pub rx_lag: f64,
}

impl Default for OpticalParams {
    /// Downward-looking transmitter 0.1 m ahead of the centre of mass.
    fn default() -> Self {
        Self {
            cone_cos_threshold: 0.17,
            rx_fov: 89f64.to_radians(),
            tx_half_power: 10f64.to_radians(),
            range_min: 0.25,
            range_max: 1.4,
            desired_range: 1.0,
            tx_offset_body: Vector3::new(0.1, 0.0, 0.0),
            tx_rotation_body: Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
            rx_window: 26.0,
            rx_lag: 0.0,
        }
    }
}

impl OpticalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_min > 0.0 && self.range_max > 0.0) {
            return Err(Error::invalid("range bounds", "range_min and range_max must be positive"));
        }
        if !(self.cone_cos_threshold > 0.0 && self.cone_cos_threshold < 1.0) {
            return Err(Error::invalid("cone_cos_threshold", "must lie in (0, 1)"));
        }
        if !(self.tx_half_power > 0.0 && self.tx_half_power < std::f64::consts::FRAC_PI_2) {
            return Err(Error::invalid("tx_half_power", "must lie in (0, π/2)"));
        }
        if !(self.rx_fov > 0.0 && self.rx_fov < std::f64::consts::PI) {
            return Err(Error::invalid("rx_fov", "must lie in (0, π)"));
        }
        if !(self.desired_range > 0.0) {
            return Err(Error::invalid("desired_range", "must be positive"));
        }
        if !(self.rx_window > 0.0) {
            return Err(Error::invalid("rx_window", "must be positive"));
        }
        if !(self.rx_lag >= 0.0) {
            return Err(Error::invalid("rx_lag", "must be non-negative"));
        }
        let r = &self.tx_rotation_body;
        if (r.transpose() * r - Matrix3::identity()).amax() > 1e-9 || r.determinant() < 0.0 {
            return Err(Error::invalid("tx_rotation_body", "must be a proper rotation"));
        }
        Ok(())
    }

    /// Beam direction in the body frame, R_BT·e₃.
    pub fn beam_body(&self) -> Vector3<f64> {
        self.tx_rotation_body.column(2).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSample {
    pub time: f64,
    pub cos_delta: f64,
    pub cos_delta_rate: f64,
    pub range: f64,
    pub i_tx: u8,
    pub i_rx: u8,
    pub i_link: u8,
}

pub fn link_vector(mrav_pos: &Vector3<f64>, rx_pos: &Vector3<f64>) -> Vector3<f64> {
    mrav_pos - rx_pos
}

pub fn transmitter_position(x: &ExtendedState, params: &OpticalParams) -> Vector3<f64> {
    x.body.position + rotation_matrix(&x.body.euler) * params.tx_offset_body
}

pub fn beam_axis_world(x: &ExtendedState, params: &OpticalParams) -> Vector3<f64> {
    rotation_matrix(&x.body.euler) * params.beam_body()
}

fn checked_range(d_c: &Vector3<f64>) -> Result<f64> {
    let range = d_c.norm();
    if !(range > MIN_RANGE) {
        return Err(Error::DegenerateRange { range });
    }
    Ok(range)
}

/// `z_Tᵀ(−d_C)/‖d_C‖`, clamped to [−1, 1].
pub fn misalignment_cosine(beam_axis: &Vector3<f64>, d_c: &Vector3<f64>) -> Result<f64> {
    let range = checked_range(d_c)?;
    Ok((-beam_axis.dot(d_c) / range).clamp(-1.0, 1.0))
}

/// Time derivative of the misalignment cosine along the rigid-body flow with
/// a receiver moving at `rx_vel`.
pub fn misalignment_rate(
    x: &ExtendedState,
    rx_pos: &Vector3<f64>,
    rx_vel: &Vector3<f64>,
    params: &OpticalParams,
) -> Result<f64> {
    let geo = LinkGeometry::new(&x.to_vector().as_slice()[..12], rx_pos, rx_vel, params)?;
    Ok(geo.cos_delta_rate())
}

pub fn tx_indicator(cos_delta: f64, params: &OpticalParams) -> u8 {
    u8::from(cos_delta >= params.tx_half_power.cos())
}

pub fn rx_indicator(rx_axis: &Vector3<f64>, d_c: &Vector3<f64>, params: &OpticalParams) -> Result<u8> {
    let range = checked_range(d_c)?;
    Ok(u8::from(rx_axis.dot(d_c) / range >= params.rx_fov.cos()))
}

/// Angular indicators combined with the admissible range window.
pub fn link_indicator(i_tx: u8, i_rx: u8, range: f64, params: &OpticalParams) -> u8 {
    let in_range = range >= params.range_min && range <= params.range_max;
    i_tx * i_rx * u8::from(in_range)
}

/// Fraction of `[t_now − window, t_now]` during which the link was up, with
/// each sample held until the next one. When the history starts inside the
/// window only the covered span is averaged.
pub fn moving_average(history: &[LinkSample], t_now: f64, window: f64) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    if !(window > 0.0) {
        return Err(Error::invalid("window", "must be positive"));
    }
    let start = (t_now - window).max(history[0].time);
    if t_now <= start {
        let last = history.iter().rev().find(|s| s.time <= t_now).unwrap_or(&history[0]);
        return Ok(f64::from(last.i_link));
    }
    let mut up = 0.0;
    for (i, s) in history.iter().enumerate() {
        if s.time >= t_now {
            break;
        }
        let end = history.get(i + 1).map_or(t_now, |n| n.time.min(t_now));
        let lo = s.time.max(start);
        if end > lo {
            up += f64::from(s.i_link) * (end - lo);
        }
    }
    Ok((up / (t_now - start)).clamp(0.0, 1.0))
}

/// Link geometry evaluated at one body state, with the intermediate vectors
/// kept for derivative evaluation.
#[derive(Debug, Clone)]
pub struct LinkGeometry {
    rot: Matrix3<f64>,
    partials: [Matrix3<f64>; 3],
    omega: Vector3<f64>,
    beam_body: Vector3<f64>,
    offset_body: Vector3<f64>,
    beam: Vector3<f64>,
    beam_dot: Vector3<f64>,
    d_c: Vector3<f64>,
    d_c_dot: Vector3<f64>,
    range: f64,
    dir: Vector3<f64>,
}

/// Row Jacobian with respect to the flat body state `[p, η, v, ω]`.
pub type BodyRow = RowSVector<f64, 12>;

impl LinkGeometry {
    /// `body` holds the first twelve entries of the flat extended state.
    pub fn new(
        body: &[f64],
        rx_pos: &Vector3<f64>,
        rx_vel: &Vector3<f64>,
        params: &OpticalParams,
    ) -> Result<Self> {
        let v3 = |o: usize| Vector3::new(body[o], body[o + 1], body[o + 2]);
        let euler = v3(EULER);
        let omega = v3(RATES);
        let rot = rotation_matrix(&euler);
        let beam_body = params.beam_body();
        let offset_body = params.tx_offset_body;
        let d_c = v3(POS) + rot * offset_body - rx_pos;
        let range = checked_range(&d_c)?;
        Ok(Self {
            partials: rotation_partials(&euler),
            beam: rot * beam_body,
            beam_dot: rot * omega.cross(&beam_body),
            d_c_dot: v3(VEL) + rot * omega.cross(&offset_body) - rx_vel,
            dir: d_c / range,
            rot,
            omega,
            beam_body,
            offset_body,
            d_c,
            range,
        })
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn link_vector(&self) -> Vector3<f64> {
        self.d_c
    }

    pub fn beam_axis(&self) -> Vector3<f64> {
        self.beam
    }

    pub fn cos_delta(&self) -> f64 {
        (-self.beam.dot(&self.dir)).clamp(-1.0, 1.0)
    }

    pub fn cos_delta_rate(&self) -> f64 {
        let proj = |w: &Vector3<f64>| w - self.dir * self.dir.dot(w);
        -self.beam_dot.dot(&self.dir) - self.beam.dot(&proj(&self.d_c_dot)) / self.range
    }

    fn project(&self, w: &Vector3<f64>) -> Vector3<f64> {
        w - self.dir * self.dir.dot(w)
    }

    pub fn range_jacobian(&self) -> BodyRow {
        let mut row = BodyRow::zeros();
        for i in 0..3 {
            row[POS + i] = self.dir[i];
            row[EULER + i] = self.dir.dot(&(self.partials[i] * self.offset_body));
        }
        row
    }

    pub fn cos_delta_jacobian(&self) -> BodyRow {
        let l = self.range;
        let d_beam = -self.dir;
        let d_link = -self.project(&self.beam) / l;
        let mut row = BodyRow::zeros();
        for i in 0..3 {
            row[POS + i] = d_link[i];
            row[EULER + i] = d_beam.dot(&(self.partials[i] * self.beam_body))
                + d_link.dot(&(self.partials[i] * self.offset_body));
        }
        row
    }

    pub fn cos_delta_rate_jacobian(&self) -> BodyRow {
        let l = self.range;
        let z = &self.beam;
        let zd = &self.beam_dot;
        let dd = &self.d_c_dot;
        let n = &self.dir;
        let zn = z.dot(n);
        let nd = n.dot(dd);

        let g_zdot = -n;
        let g_ddot = -self.project(z) / l;
        let g_z = -self.project(dd) / l;
        let g_d = -self.project(zd) / l + n * (z.dot(dd) / (l * l))
            + (self.project(z) * nd + self.project(dd) * zn - n * (zn * nd)) / (l * l);

        let w_b = self.omega.cross(&self.beam_body);
        let w_r = self.omega.cross(&self.offset_body);
        let d_omega_beam = -self.rot * skew(&self.beam_body);
        let d_omega_link = -self.rot * skew(&self.offset_body);

        let mut row = BodyRow::zeros();
        for i in 0..3 {
            let r = &self.partials[i];
            row[POS + i] = g_d[i];
            row[VEL + i] = g_ddot[i];
            row[EULER + i] = g_z.dot(&(r * self.beam_body))
                + g_zdot.dot(&(r * w_b))
                + g_d.dot(&(r * self.offset_body))
                + g_ddot.dot(&(r * w_r));
        }
        let w_row = g_zdot.transpose() * d_omega_beam + g_ddot.transpose() * d_omega_link;
        for i in 0..3 {
            row[RATES + i] = w_row[i];
        }
        row
    }

    /// Rows for (c_δ, ċ_δ, ‖d_C‖).
    pub fn jacobian(&self) -> SMatrix<f64, 3, 12> {
        let mut j = SMatrix::<f64, 3, 12>::zeros();
        j.set_row(0, &self.cos_delta_jacobian());
        j.set_row(1, &self.cos_delta_rate_jacobian());
        j.set_row(2, &self.range_jacobian());
        j
    }
}
