//! SRF-PLL synchronizers: conventional, conventional virtual impedance and
//! modified (line-drop compensated) virtual impedance.
//!
//! All three share one loop. They differ only in the point they lock to:
//! `v_sync = v_pcc - κ·(Rv + jXv)·i_pcc`.

use serde::{Deserialize, Serialize};

use crate::frames::{park, wrap_angle, AlphaBeta, Angle};
use crate::kalman_sync::GridImpedance;
use crate::numerics::{self, EigenSpectrum, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PllMode {
    Cpll,
    Cvi,
    Mvi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PllConfig {
    pub mode: PllMode,
    pub kp: f64,
    pub ki: f64,
    pub omega_nominal: f64,
    /// Impedance the virtual point is computed with.
    pub virtual_impedance: GridImpedance,
    /// Fraction of `virtual_impedance` applied; ignored for CPLL.
    pub compensation_fraction: f64,
    /// Symmetric clamp on the integrator, rad/s.
    pub integrator_limit: f64,
}

impl PllConfig {
    pub fn new(mode: PllMode, virtual_impedance: GridImpedance, omega_nominal: f64) -> Self {
        let compensation_fraction = match mode {
            PllMode::Cpll => 0.0,
            PllMode::Cvi => 0.5,
            PllMode::Mvi => 1.0,
        };
        Self {
            mode,
            kp: 5.0,
            ki: 5.0,
            omega_nominal,
            virtual_impedance,
            compensation_fraction,
            integrator_limit: 2.0 * std::f64::consts::PI * 10.0,
        }
    }

    pub fn effective_fraction(&self) -> f64 {
        match self.mode {
            PllMode::Cpll => 0.0,
            _ => self.compensation_fraction,
        }
    }

    pub fn sync_voltage(&self, v_pcc: AlphaBeta, i_pcc: AlphaBeta) -> AlphaBeta {
        let kappa = self.effective_fraction();
        if kappa == 0.0 {
            return v_pcc;
        }
        v_pcc - self.virtual_impedance.scaled(kappa).drop(i_pcc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PllState {
    pub theta_hat: Angle,
    pub integrator: f64,
}

/// Advance the loop one sample. Returns the new state and the angle
/// estimate valid at the current sample.
pub fn pll_step(
    cfg: &PllConfig,
    state: &PllState,
    v_pcc: AlphaBeta,
    i_pcc: AlphaBeta,
    ts: f64,
) -> (PllState, Angle) {
    let v_sync = cfg.sync_voltage(v_pcc, i_pcc);
    let e = park(v_sync, state.theta_hat).q;
    let omega = cfg.omega_nominal + cfg.kp * e + state.integrator;
    let integrator =
        (state.integrator + cfg.ki * e * ts).clamp(-cfg.integrator_limit, cfg.integrator_limit);
    let next = PllState {
        theta_hat: wrap_angle(state.theta_hat.radians() + omega * ts),
        integrator,
    };
    (next, state.theta_hat)
}

/// Continuous small-signal poles of the loop `[θ error, integrator]` with
/// the phase-detector gain equal to the voltage magnitude.
pub fn pll_linearized_poles(cfg: &PllConfig, v_mag: f64) -> EigenSpectrum {
    let a = RealMatrix::from_row_slice(2, 2, &[-cfg.kp * v_mag, -1.0, cfg.ki * v_mag, 0.0]);
    numerics::eigvals(&a).expect("2x2 closed form")
}

/// Running PLL with its configuration.
#[derive(Debug, Clone)]
pub struct PllSync {
    cfg: PllConfig,
    state: PllState,
    ts: f64,
}

impl PllSync {
    pub fn new(cfg: PllConfig, initial_angle: Angle, ts: f64) -> Self {
        Self {
            cfg,
            state: PllState {
                theta_hat: initial_angle,
                integrator: 0.0,
            },
            ts,
        }
    }

    pub fn config(&self) -> &PllConfig {
        &self.cfg
    }

    pub fn state(&self) -> &PllState {
        &self.state
    }

    pub fn set_impedance(&mut self, z: GridImpedance) {
        self.cfg.virtual_impedance = z;
    }

    pub fn step(&mut self, v_pcc: AlphaBeta, i_pcc: AlphaBeta) -> Angle {
        let (next, angle) = pll_step(&self.cfg, &self.state, v_pcc, i_pcc, self.ts);
        self.state = next;
        angle
    }
}
