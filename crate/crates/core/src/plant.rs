//! The simulated electrical world.
//!
//! An ideal inverter voltage source drives the LCL filter, which connects
//! at the PCC to a Thevenin grid source behind `R_g + jX_g`. Optionally a
//! classical synchronous machine hangs off the PCC through an inductive
//! tie; a small node capacitance then makes the PCC voltage a state.
//!
//! Everything is in per unit with time in seconds: inductances are
//! `L/Z_base` and capacitances `C·Z_base`. The network is linear and is
//! advanced by an exact discretization in which the inverter voltage is
//! held over the step and the source EMFs rotate at the nominal
//! frequency.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{wrap_angle, AlphaBeta, Angle, Dq};
use crate::kalman_sync::GridImpedance;
use crate::lqr::{saturate, ControlOutput, LclParams, UnitConvention};
use crate::numerics::{self, RealMatrix};

type CMatrix = DMatrix<Complex64>;

/// How the PCC voltage follows from the grid branch when no machine is
/// attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PccModel {
    /// The grid inductance is a circuit element: `V_pcc = V_g + R_g i + L_g di/dt`.
    #[default]
    Dynamic,
    /// Phasor drop applied instantaneously: `V_pcc = V_g + (R_g + jX_g) i`.
    QuasiStatic,
}

/// Inductive tie to the machine and the PCC node capacitance, per unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineTie {
    pub l_sync: f64,
    pub r_sync: f64,
    pub c_node: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkParams {
    pub l_f1: f64,
    pub l_f2: f64,
    pub c_f: f64,
    pub omega_g: f64,
    pub pcc_model: PccModel,
    pub inverter_connected: bool,
    pub machine_tie: Option<MachineTie>,
}

impl NetworkParams {
    pub fn from_lcl(p: &LclParams, pcc_model: PccModel) -> Self {
        let (l_f1, l_f2, c_f) = p.elements(UnitConvention::PerUnit);
        Self {
            l_f1,
            l_f2,
            c_f,
            omega_g: p.omega_g,
            pcc_model,
            inverter_connected: true,
            machine_tie: None,
        }
    }

    /// Attach a machine tie. Inductance and capacitance in SI, stator
    /// resistance in pu.
    pub fn with_machine(mut self, p: &LclParams, l_sync: f64, r_sync: f64, c_node: f64) -> Self {
        let zb = p.z_base();
        self.machine_tie = Some(MachineTie {
            l_sync: l_sync / zb,
            r_sync,
            c_node: c_node * zb,
        });
        self
    }

    fn state_len(&self) -> usize {
        if self.machine_tie.is_some() {
            12
        } else {
            6
        }
    }
}

/// Classical machine: EMF `E∠δ` behind the tie reactance, swing dynamics.
/// `delta` is measured in the frame rotating at the synchronous speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineState {
    pub delta: Angle,
    pub omega_m: f64,
    pub inertia: f64,
    pub damping: f64,
    pub emf: f64,
    pub x_sync: f64,
    pub p_mech: f64,
    pub omega_s: f64,
}

impl MachineState {
    pub fn validate(&self) -> Result<()> {
        if !(self.inertia.is_finite() && self.inertia > 0.0) {
            return Err(Error::config("machine.inertia", "must be positive"));
        }
        if !(self.x_sync.is_finite() && self.x_sync > 0.0) {
            return Err(Error::config("machine.x_sync", "must be positive"));
        }
        Ok(())
    }

    /// `E·|V|/X · sin(δ - ∠V)` with `v_pcc` in the synchronous frame.
    pub fn electrical_power(&self, delta: f64, v_pcc: Dq) -> f64 {
        let v_mag = v_pcc.norm();
        if v_mag == 0.0 {
            return 0.0;
        }
        self.emf * v_mag / self.x_sync * (delta - v_pcc.q.atan2(v_pcc.d)).sin()
    }
}

/// Network state plus the source phases.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub i_inv: AlphaBeta,
    /// Current leaving the filter towards the PCC.
    pub i_pcc: AlphaBeta,
    pub v_c: AlphaBeta,
    pub v_pcc_node: Option<AlphaBeta>,
    pub i_grid: Option<AlphaBeta>,
    pub i_machine: Option<AlphaBeta>,
    pub grid_phase: Angle,
    pub machine: Option<MachineState>,
}

impl PlantState {
    pub fn zero(params: &NetworkParams) -> Self {
        let with_node = params.machine_tie.map(|_| AlphaBeta::ZERO);
        Self {
            i_inv: AlphaBeta::ZERO,
            i_pcc: AlphaBeta::ZERO,
            v_c: AlphaBeta::ZERO,
            v_pcc_node: with_node,
            i_grid: with_node,
            i_machine: with_node,
            grid_phase: Angle::ZERO,
            machine: None,
        }
    }

    fn to_vector(&self, n: usize) -> DVector<f64> {
        let mut x = DVector::zeros(n);
        let mut put = |k: usize, v: AlphaBeta| {
            x[k] = v.alpha;
            x[k + 1] = v.beta;
        };
        put(0, self.i_inv);
        put(2, self.v_c);
        put(4, self.i_pcc);
        if n == 12 {
            put(6, self.v_pcc_node.unwrap_or_default());
            put(8, self.i_grid.unwrap_or_default());
            put(10, self.i_machine.unwrap_or_default());
        }
        x
    }

    fn load_vector(&mut self, x: &DVector<f64>) {
        let get = |k: usize| AlphaBeta::new(x[k], x[k + 1]);
        self.i_inv = get(0);
        self.v_c = get(2);
        self.i_pcc = get(4);
        if x.len() == 12 {
            self.v_pcc_node = Some(get(6));
            self.i_grid = Some(get(8));
            self.i_machine = Some(get(10));
        }
    }

    /// Largest absolute network quantity, used for divergence detection.
    pub fn max_abs(&self) -> f64 {
        let mut m = [self.i_inv, self.i_pcc, self.v_c]
            .iter()
            .map(|v| v.alpha.abs().max(v.beta.abs()))
            .fold(0.0, f64::max);
        for v in [self.v_pcc_node, self.i_grid, self.i_machine]
            .into_iter()
            .flatten()
        {
            m = m.max(v.alpha.abs().max(v.beta.abs()));
        }
        if let Some(mach) = &self.machine {
            m = m.max((mach.omega_m - mach.omega_s).abs());
        }
        if self.is_finite() {
            m
        } else {
            f64::INFINITY
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.i_inv, self.i_pcc, self.v_c]
            .iter()
            .all(|v| v.is_finite())
            && [self.v_pcc_node, self.i_grid, self.i_machine]
                .into_iter()
                .flatten()
                .all(|v| v.is_finite())
            && self
                .machine
                .is_none_or(|m| m.omega_m.is_finite() && m.delta.radians().is_finite())
    }
}

/// The discretized linear network for one impedance value.
#[derive(Debug, Clone)]
pub struct Network {
    params: NetworkParams,
    z: GridImpedance,
    v_grid: f64,
    ts: f64,
    phi: RealMatrix,
    gamma_u: RealMatrix,
    gamma_src: RealMatrix,
}

const J: [[f64; 2]; 2] = [[0.0, -1.0], [1.0, 0.0]];

fn put2(m: &mut RealMatrix, r: usize, c: usize, k: f64, block: [[f64; 2]; 2]) {
    for i in 0..2 {
        for j in 0..2 {
            m[(r + i, c + j)] += k * block[i][j];
        }
    }
}

const I2: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

impl Network {
    pub fn new(params: NetworkParams, z: GridImpedance, v_grid: f64, ts: f64) -> Result<Self> {
        if !(ts.is_finite() && ts > 0.0) {
            return Err(Error::config("simulation.ts", "must be positive"));
        }
        if !(z.resistance >= 0.0 && z.reactance >= 0.0 && z.magnitude().is_finite()) {
            return Err(Error::config(
                "grid.impedance",
                "resistance and reactance must be non-negative",
            ));
        }
        let (a, b_u, b_src) = Self::continuous(&params, z)?;
        let n = a.nrows();
        let m = b_src.ncols();
        // Augmented generator: [x; rotating sources; held input].
        let size = n + m + 2;
        let mut big = RealMatrix::zeros(size, size);
        big.view_mut((0, 0), (n, n)).copy_from(&a);
        big.view_mut((0, n), (n, m)).copy_from(&b_src);
        big.view_mut((0, n + m), (n, 2)).copy_from(&b_u);
        for s in 0..m / 2 {
            put2(&mut big, n + 2 * s, n + 2 * s, params.omega_g, J);
        }
        let e = numerics::expm(&big, ts)?;
        Ok(Self {
            params,
            z,
            v_grid,
            ts,
            phi: e.view((0, 0), (n, n)).into_owned(),
            gamma_src: e.view((0, n), (n, m)).into_owned(),
            gamma_u: e.view((0, n + m), (n, 2)).into_owned(),
        })
    }

    /// Continuous `(A, B_inverter, B_sources)`. Sources are the grid EMF
    /// and, with a machine, the machine EMF.
    fn continuous(
        p: &NetworkParams,
        z: GridImpedance,
    ) -> Result<(RealMatrix, RealMatrix, RealMatrix)> {
        let n = p.state_len();
        let m = if p.machine_tie.is_some() { 4 } else { 2 };
        let mut a = RealMatrix::zeros(n, n);
        let mut bu = RealMatrix::zeros(n, 2);
        let mut bs = RealMatrix::zeros(n, m);
        let l_g = z.reactance / p.omega_g;
        let (l1, l2, c) = (p.l_f1, p.l_f2, p.c_f);
        if p.inverter_connected {
            put2(&mut a, 0, 2, -1.0 / l1, I2);
            put2(&mut bu, 0, 0, 1.0 / l1, I2);
            put2(&mut a, 2, 0, 1.0 / c, I2);
            put2(&mut a, 2, 4, -1.0 / c, I2);
        }
        match p.machine_tie {
            None => {
                if !p.inverter_connected {
                    return Ok((a, bu, bs));
                }
                match p.pcc_model {
                    PccModel::Dynamic => {
                        let lt = l2 + l_g;
                        put2(&mut a, 4, 2, 1.0 / lt, I2);
                        put2(&mut a, 4, 4, -z.resistance / lt, I2);
                        put2(&mut bs, 4, 0, -1.0 / lt, I2);
                    }
                    PccModel::QuasiStatic => {
                        put2(&mut a, 4, 2, 1.0 / l2, I2);
                        put2(&mut a, 4, 4, -z.resistance / l2, I2);
                        put2(&mut a, 4, 4, -z.reactance / l2, J);
                        put2(&mut bs, 4, 0, -1.0 / l2, I2);
                    }
                }
            }
            Some(tie) => {
                if l_g <= 0.0 {
                    return Err(Error::config(
                        "grid.impedance",
                        "needs positive reactance when a machine is attached",
                    ));
                }
                if !(tie.l_sync > 0.0 && tie.c_node > 0.0 && tie.r_sync >= 0.0) {
                    return Err(Error::config(
                        "machine",
                        "tie inductance and node capacitance must be positive",
                    ));
                }
                if p.inverter_connected {
                    put2(&mut a, 4, 2, 1.0 / l2, I2);
                    put2(&mut a, 4, 6, -1.0 / l2, I2);
                    put2(&mut a, 6, 4, 1.0 / tie.c_node, I2);
                }
                // Node: C dv/dt = i_f2 + i_m - i_g.
                put2(&mut a, 6, 10, 1.0 / tie.c_node, I2);
                put2(&mut a, 6, 8, -1.0 / tie.c_node, I2);
                // Grid branch: L_g di_g/dt = v_n - R_g i_g - V_g.
                put2(&mut a, 8, 6, 1.0 / l_g, I2);
                put2(&mut a, 8, 8, -z.resistance / l_g, I2);
                put2(&mut bs, 8, 0, -1.0 / l_g, I2);
                // Machine branch: L_s di_m/dt = E - v_n - R_s i_m.
                put2(&mut a, 10, 6, -1.0 / tie.l_sync, I2);
                put2(&mut a, 10, 10, -tie.r_sync / tie.l_sync, I2);
                put2(&mut bs, 10, 2, 1.0 / tie.l_sync, I2);
            }
        }
        Ok((a, bu, bs))
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn impedance(&self) -> GridImpedance {
        self.z
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn grid_emf(&self, grid_phase: Angle) -> AlphaBeta {
        AlphaBeta::from_polar(self.v_grid, grid_phase.radians())
    }

    fn machine_emf(state: &PlantState) -> AlphaBeta {
        match &state.machine {
            Some(m) => AlphaBeta::from_polar(m.emf, state.grid_phase.radians() + m.delta.radians()),
            None => AlphaBeta::ZERO,
        }
    }

    /// Instantaneous PCC voltage for the given state.
    pub fn pcc_voltage(&self, state: &PlantState) -> AlphaBeta {
        if let Some(v) = state.v_pcc_node {
            return v;
        }
        let vg = self.grid_emf(state.grid_phase);
        let i = state.i_pcc;
        match self.params.pcc_model {
            PccModel::QuasiStatic => vg + self.z.drop(i),
            PccModel::Dynamic => {
                let l_g = self.z.reactance / self.params.omega_g;
                let lt = self.params.l_f2 + l_g;
                let ri = i * self.z.resistance;
                vg + ri + (state.v_c - vg - ri) * (l_g / lt)
            }
        }
    }

    /// Sinusoidal steady state at the nominal frequency, with the inverter
    /// voltage chosen so the inverter current is zero. Sources take their
    /// phases from `template`. Returns the state and the inverter voltage
    /// phasor in the grid frame.
    pub fn idle_steady_state(&self, template: &PlantState) -> Result<(PlantState, Complex64)> {
        let (a, bu, bs) = Self::continuous(&self.params, self.z)?;
        let n = a.nrows() / 2;
        let cplx = |m: &RealMatrix, cols: usize| {
            CMatrix::from_fn(n, cols, |i, j| {
                Complex64::new(m[(2 * i, 2 * j)], m[(2 * i + 1, 2 * j)])
            })
        };
        let w = self.params.omega_g;
        let lhs = CMatrix::identity(n, n) * Complex64::new(0.0, w) - cplx(&a, n);
        let lu = lhs.lu();
        let phase = template.grid_phase.radians();
        let mut src = CMatrix::zeros(bs.ncols() / 2, 1);
        src[(0, 0)] = Complex64::from_polar(self.v_grid, phase);
        if let Some(m) = &template.machine {
            src[(1, 0)] = Complex64::from_polar(m.emf, phase + m.delta.radians());
        }
        let x0 = lu
            .solve(&(cplx(&bs, bs.ncols() / 2) * src))
            .ok_or(Error::Singular("idle_steady_state"))?;
        let x1 = lu
            .solve(&cplx(&bu, 1))
            .ok_or(Error::Singular("idle_steady_state"))?;
        let u = if self.params.inverter_connected && x1[(0, 0)].norm() > 0.0 {
            -x0[(0, 0)] / x1[(0, 0)]
        } else {
            Complex64::new(0.0, 0.0)
        };
        let x = x0 + x1 * u;
        let mut real = DVector::zeros(2 * n);
        for i in 0..n {
            real[2 * i] = x[(i, 0)].re;
            real[2 * i + 1] = x[(i, 0)].im;
        }
        let mut out = template.clone();
        out.load_vector(&real);
        Ok((out, u * Complex64::from_polar(1.0, -phase)))
    }

    /// Advance the network one sample with `v_inv` held over the step. The
    /// machine mechanical state is not touched here.
    pub fn step(&self, state: &PlantState, v_inv: AlphaBeta) -> PlantState {
        let n = self.phi.nrows();
        let x = state.to_vector(n);
        let mut src = DVector::zeros(self.gamma_src.ncols());
        let vg = self.grid_emf(state.grid_phase);
        src[0] = vg.alpha;
        src[1] = vg.beta;
        if src.len() == 4 {
            let e = Self::machine_emf(state);
            src[2] = e.alpha;
            src[3] = e.beta;
        }
        let u = DVector::from_column_slice(&[v_inv.alpha, v_inv.beta]);
        let next = &self.phi * x + &self.gamma_src * src + &self.gamma_u * u;
        let mut out = state.clone();
        out.load_vector(&next);
        out.grid_phase = wrap_angle(state.grid_phase.radians() + self.params.omega_g * self.ts);
        out
    }
}

/// One fixed step of the swing equation by classical RK4, with `v_pcc`
/// (in the synchronous frame) held over the step. Returns the new state
/// and the quasi-static injected current `(E∠δ - v)/(jX)` in the same
/// frame.
pub fn machine_step(m: &MachineState, v_pcc: Dq, ts: f64) -> (MachineState, Dq) {
    let next = swing_rk4(m, ts, |delta| m.electrical_power(delta, v_pcc));
    let e = Dq::from_polar(m.emf, next.delta.radians());
    let diff = e - v_pcc;
    // Divide by jX: (a + jb)/(jX) = (b - ja)/X.
    let injected = Dq::new(diff.q / m.x_sync, -diff.d / m.x_sync);
    (next, injected)
}

fn swing_rk4(m: &MachineState, ts: f64, pe: impl Fn(f64) -> f64) -> MachineState {
    let ws = m.omega_s;
    let f = |delta: f64, omega: f64| -> (f64, f64) {
        let dw = ws / (2.0 * m.inertia) * (m.p_mech - pe(delta) - m.damping * (omega - ws) / ws);
        (omega - ws, dw)
    };
    let d0 = m.delta.radians();
    let w0 = m.omega_m;
    let (k1d, k1w) = f(d0, w0);
    let (k2d, k2w) = f(d0 + 0.5 * ts * k1d, w0 + 0.5 * ts * k1w);
    let (k3d, k3w) = f(d0 + 0.5 * ts * k2d, w0 + 0.5 * ts * k2w);
    let (k4d, k4w) = f(d0 + ts * k3d, w0 + ts * k3w);
    MachineState {
        delta: wrap_angle(d0 + ts / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)),
        omega_m: w0 + ts / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w),
        ..*m
    }
}

/// Phasor operating point of a machine tied to the PCC, with the grid
/// behind its impedance and an optional fixed current injected at the PCC
/// (grid frame). The node capacitance is neglected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineOperatingPoint {
    pub emf: f64,
    pub x_sync: f64,
    pub r_sync: f64,
    pub grid: GridImpedance,
    pub v_grid: f64,
    pub delta: f64,
    pub injection: Complex64,
}

impl MachineOperatingPoint {
    pub fn pcc_phasor(&self, delta: f64) -> Complex64 {
        let j = Complex64::i();
        let zg = Complex64::new(self.grid.resistance, self.grid.reactance);
        let ys = 1.0 / (self.r_sync + j * self.x_sync);
        let e = Complex64::from_polar(self.emf, delta);
        (e * ys + self.injection + self.v_grid / zg) / (ys + 1.0 / zg)
    }

    pub fn electrical_power(&self, delta: f64) -> f64 {
        let v = self.pcc_phasor(delta);
        self.emf * v.norm() / self.x_sync * (delta - v.arg()).sin()
    }

    /// `dP_e/dδ` at the operating point, network response included.
    pub fn synchronizing_coefficient(&self) -> f64 {
        let h = 1e-6;
        (self.electrical_power(self.delta + h) - self.electrical_power(self.delta - h)) / (2.0 * h)
    }
}

/// Inertia giving a small-signal swing frequency of `f_target` for the
/// synchronizing coefficient `k_s`: `H = ω_s K_s / (2 (2π f)²)`.
pub fn inertia_for_frequency(f_target: f64, k_s: f64, omega_s: f64) -> Result<f64> {
    if !(f_target.is_finite() && f_target > 0.0) {
        return Err(Error::config(
            "machine.target_frequency_hz",
            "must be positive",
        ));
    }
    if k_s.is_nan() || k_s <= 0.0 {
        return Err(Error::UnstableOperatingPoint(k_s));
    }
    let w = 2.0 * std::f64::consts::PI * f_target;
    Ok(omega_s * k_s / (2.0 * w * w))
}

/// d-q PI on the inverter current with cross-coupling decoupling and PCC
/// voltage feedforward. Integration stops while the output is clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct PiCurrentController {
    pub kp: f64,
    pub ki: f64,
    pub omega_g: f64,
    pub l_total: f64,
    pub v_sat: f64,
    integral: Dq,
}

impl PiCurrentController {
    /// Gains for a first-order closed-loop bandwidth `bandwidth_hz` over
    /// the series filter inductance.
    pub fn tuned(net: &NetworkParams, bandwidth_hz: f64, v_sat: f64) -> Self {
        let l_total = net.l_f1 + net.l_f2;
        let wc = 2.0 * std::f64::consts::PI * bandwidth_hz;
        let kp = wc * l_total;
        Self {
            kp,
            ki: kp * net.omega_g,
            omega_g: net.omega_g,
            l_total,
            v_sat,
            integral: Dq::ZERO,
        }
    }

    pub fn step(&mut self, i_ref: Dq, i_meas: Dq, v_ff: Dq, ts: f64) -> ControlOutput {
        let e = i_ref - i_meas;
        let decouple = i_meas.rotate_scale(0.0, self.omega_g * self.l_total);
        let raw = v_ff + decouple + e * self.kp + self.integral;
        let out = saturate(raw, self.v_sat);
        if !out.saturated {
            self.integral = self.integral + e * (self.ki * ts);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{inv_park, park};
    use std::f64::consts::PI;

    const TS: f64 = 1e-4;

    fn lcl() -> LclParams {
        LclParams::default()
    }

    fn z() -> GridImpedance {
        GridImpedance::from_polar(2.0, 70f64.to_radians())
    }

    #[test]
    fn zero_sources_stay_zero() {
        let p = NetworkParams::from_lcl(&lcl(), PccModel::Dynamic);
        let net = Network::new(p, z(), 0.0, TS).unwrap();
        let mut s = PlantState::zero(&p);
        for _ in 0..1000 {
            s = net.step(&s, AlphaBeta::ZERO);
        }
        assert_eq!(s.i_inv, AlphaBeta::ZERO);
        assert_eq!(s.v_c, AlphaBeta::ZERO);
        assert_eq!(s.i_pcc, AlphaBeta::ZERO);
    }

    #[test]
    fn lossless_energy_is_conserved() {
        let p = NetworkParams::from_lcl(&lcl(), PccModel::Dynamic);
        let zl = GridImpedance::new(0.0, 0.5);
        let net = Network::new(p, zl, 0.0, TS).unwrap();
        let lt = p.l_f2 + zl.reactance / p.omega_g;
        let energy = |s: &PlantState| {
            0.5 * p.l_f1 * s.i_inv.norm().powi(2)
                + 0.5 * p.c_f * s.v_c.norm().powi(2)
                + 0.5 * lt * s.i_pcc.norm().powi(2)
        };
        let mut s = PlantState::zero(&p);
        s.i_inv = AlphaBeta::new(0.7, -0.2);
        s.v_c = AlphaBeta::new(0.1, 0.9);
        let e0 = energy(&s);
        for _ in 0..200 {
            s = net.step(&s, AlphaBeta::ZERO);
            assert!((energy(&s) - e0).abs() < 1e-6 * e0);
        }
    }

    #[test]
    fn quasi_static_and_dynamic_agree_on_pcc_voltage_in_steady_state() {
        for model in [PccModel::Dynamic, PccModel::QuasiStatic] {
            let p = NetworkParams::from_lcl(&lcl(), model);
            let net = Network::new(p, GridImpedance::from_polar(0.5, 1.2), 1.0, TS).unwrap();
            let mut s = PlantState::zero(&p);
            // Hold a rotating inverter voltage long enough for transients to die.
            for _ in 0..40_000 {
                let v = inv_park(Dq::new(1.05, 0.2), s.grid_phase);
                s = net.step(&s, v);
            }
            let v = park(net.pcc_voltage(&s), s.grid_phase);
            let i = park(s.i_pcc, s.grid_phase);
            let drop = i.rotate_scale(net.impedance().resistance, net.impedance().reactance);
            assert!((v.d - 1.0 - drop.d).abs() < 1e-3, "{model:?}");
            assert!((v.q - drop.q).abs() < 1e-3, "{model:?}");
        }
    }

    fn machine(inertia: f64) -> MachineState {
        MachineState {
            delta: Angle::new(0.3),
            omega_m: 100.0 * PI,
            inertia,
            damping: 0.0,
            emf: 1.0,
            x_sync: 0.06,
            p_mech: 0.0,
            omega_s: 100.0 * PI,
        }
    }

    #[test]
    fn machine_fixed_point() {
        let v = Dq::new(1.0, 0.0);
        let mut m = machine(0.5);
        m.p_mech = m.electrical_power(0.3, v);
        let (next, _) = machine_step(&m, v, TS);
        assert!(next.delta.diff(m.delta).radians().abs() < 1e-14);
        assert!((next.omega_m - m.omega_m).abs() < 1e-12);
    }

    #[test]
    fn machine_zero_angle_injects_nothing() {
        let mut m = machine(0.5);
        m.delta = Angle::ZERO;
        let (_, i) = machine_step(&m, Dq::new(1.0, 0.0), TS);
        assert!(i.norm() < 1e-15);
        assert_eq!(m.electrical_power(0.0, Dq::new(1.0, 0.0)), 0.0);
    }

    #[test]
    fn machine_small_signal_frequency() {
        let v = Dq::new(1.0, 0.0);
        let mut m = machine(2.0);
        let d0 = 0.3_f64;
        m.p_mech = m.electrical_power(d0, v);
        m.delta = Angle::new(d0 + 1e-3);
        let ks = m.emf / m.x_sync * d0.cos();
        let expected = (m.omega_s * ks / (2.0 * m.inertia)).sqrt() / (2.0 * PI);
        let mut crossings = Vec::new();
        let mut prev = 1e-3;
        for k in 1..200_000 {
            m = machine_step(&m, v, TS).0;
            let dev = m.delta.radians() - d0;
            if prev > 0.0 && dev <= 0.0 {
                crossings.push(k as f64 * TS);
            }
            prev = dev;
        }
        let period = (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
        assert!(((1.0 / period) - expected).abs() < 0.05 * expected);
    }

    #[test]
    fn inertia_law() {
        let ws = 100.0 * PI;
        let h8 = inertia_for_frequency(8.0, 0.5, ws).unwrap();
        let h16 = inertia_for_frequency(16.0, 0.5, ws).unwrap();
        assert!((h8 / h16 - 4.0).abs() < 1e-12);
        let h3 = inertia_for_frequency(3.0, 0.5, ws).unwrap();
        let h15 = inertia_for_frequency(15.0, 0.5, ws).unwrap();
        assert!((h3 / h15 - 25.0).abs() < 1e-12);
        assert!(matches!(
            inertia_for_frequency(8.0, -0.1, ws),
            Err(Error::UnstableOperatingPoint(_))
        ));
    }

    #[test]
    fn operating_point_without_injection_is_flat_at_zero_angle() {
        let op = MachineOperatingPoint {
            emf: 1.0,
            x_sync: 0.06,
            r_sync: 0.0,
            grid: z(),
            v_grid: 1.0,
            delta: 0.0,
            injection: Complex64::new(0.0, 0.0),
        };
        assert!((op.pcc_phasor(0.0) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(op.electrical_power(0.0).abs() < 1e-15);
        assert!(op.synchronizing_coefficient() > 0.0);
    }

    #[test]
    fn pi_holds_reference_with_feedforward() {
        let p = NetworkParams::from_lcl(&lcl(), PccModel::Dynamic);
        let mut pi = PiCurrentController::tuned(&p, 500.0, 10.0);
        let i = Dq::new(0.8, 0.2);
        let v = Dq::new(1.0, 0.0);
        let out = pi.step(i, i, v, TS);
        let expect = v + i.rotate_scale(0.0, p.omega_g * (p.l_f1 + p.l_f2));
        assert!((out.u - expect).norm() < 1e-15);
        let mut tight = PiCurrentController::tuned(&p, 500.0, 0.5);
        let before = tight.clone();
        assert!(tight.step(Dq::new(5.0, 0.0), Dq::ZERO, v, TS).saturated);
        assert_eq!(tight, before);
    }
}
