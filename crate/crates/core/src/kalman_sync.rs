//! Kalman-filter grid synchronization.
//!
//! The state is the grid EMF in the stationary frame, which rotates at the
//! nominal grid frequency. The measurement is the PCC voltage, related to
//! the state through the grid-impedance drop driven by the PCC current:
//!
//! ```text
//! x(k+1) = Ad x(k) + v(k)
//! y(k)   = x(k) + Dd u(k) + w(k),   Dd = [[Rg, -Xg], [Xg, Rg]]
//! ```
//!
//! The line-drop variant keeps `Dd`; the conventional variant sets it to
//! zero and therefore locks to the PCC voltage itself.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{phase_of, AlphaBeta, Angle};
use crate::numerics::{self, EigenSpectrum, RealMatrix};

/// Series grid impedance, in per unit at nominal frequency.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GridImpedance {
    pub resistance: f64,
    pub reactance: f64,
}

impl GridImpedance {
    pub fn new(resistance: f64, reactance: f64) -> Self {
        Self {
            resistance,
            reactance,
        }
    }

    /// Impedance from magnitude (pu) and angle (radians).
    pub fn from_polar(magnitude: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(magnitude * c, magnitude * s)
    }

    pub fn magnitude(&self) -> f64 {
        self.resistance.hypot(self.reactance)
    }

    pub fn angle(&self) -> f64 {
        self.reactance.atan2(self.resistance)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.resistance * k, self.reactance * k)
    }

    /// Voltage drop `(R + jX)·i` in the stationary frame.
    pub fn drop(&self, i: AlphaBeta) -> AlphaBeta {
        i.rotate_scale(self.resistance, self.reactance)
    }

    /// The 2×2 real matrix form of `R + jX`.
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(
            self.resistance,
            -self.reactance,
            self.reactance,
            self.resistance,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KfVariant {
    /// Line-drop compensated measurement model.
    Aaekf,
    /// Measurement model without the impedance term.
    Caekf,
}

/// How the gain is obtained at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainMode {
    #[default]
    TimeVarying,
    SteadyState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKfModel {
    pub ad: Matrix2<f64>,
    pub cd: Matrix2<f64>,
    pub dd: Matrix2<f64>,
    pub q: Matrix2<f64>,
    pub r: Matrix2<f64>,
    pub ts: f64,
    pub q_kf: f64,
    pub omega_g: f64,
    pub variant: KfVariant,
}

pub(crate) fn to_dmatrix(m: &Matrix2<f64>) -> RealMatrix {
    RealMatrix::from_column_slice(2, 2, m.as_slice())
}

pub(crate) fn from_dmatrix(m: &RealMatrix) -> Matrix2<f64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

pub fn build_kf_model(
    z: GridImpedance,
    omega_g: f64,
    ts: f64,
    q_kf: f64,
    r_kf: Matrix2<f64>,
    variant: KfVariant,
) -> Result<DiscreteKfModel> {
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::config("kalman.ts", "must be positive"));
    }
    if !(q_kf.is_finite() && q_kf > 0.0) {
        return Err(Error::config("kalman.q_kf", "must be positive"));
    }
    if (r_kf - r_kf.transpose()).abs().max() > 1e-12 * r_kf.abs().max().max(1.0)
        || r_kf.cholesky().is_none()
    {
        return Err(Error::config(
            "kalman.r_kf",
            "must be symmetric positive definite",
        ));
    }
    let generator = RealMatrix::from_row_slice(2, 2, &[0.0, -omega_g, omega_g, 0.0]);
    let ad = from_dmatrix(&numerics::expm(&generator, ts)?);
    let dd = match variant {
        KfVariant::Aaekf => z.matrix(),
        KfVariant::Caekf => Matrix2::zeros(),
    };
    Ok(DiscreteKfModel {
        ad,
        cd: Matrix2::identity(),
        dd,
        q: Matrix2::identity() * q_kf,
        r: r_kf,
        ts,
        q_kf,
        omega_g,
        variant,
    })
}

impl DiscreteKfModel {
    /// Same model with a different impedance in the feedthrough.
    pub fn with_impedance(&self, z: GridImpedance) -> Self {
        let mut m = self.clone();
        if self.variant == KfVariant::Aaekf {
            m.dd = z.matrix();
        }
        m
    }

    pub fn steady_gain(&self) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
        let (k, p) = numerics::kalman_steady_gain(
            &to_dmatrix(&self.ad),
            &to_dmatrix(&self.cd),
            &to_dmatrix(&self.q),
            &to_dmatrix(&self.r),
        )?;
        Ok((from_dmatrix(&k), from_dmatrix(&p)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x_hat: AlphaBeta,
    pub p: Matrix2<f64>,
    pub k_last: Matrix2<f64>,
    pub step: u64,
}

impl KalmanState {
    /// Unit-magnitude, zero-angle estimate with identity covariance.
    pub fn flat_start() -> Self {
        Self {
            x_hat: AlphaBeta::new(1.0, 0.0),
            p: Matrix2::identity(),
            k_last: Matrix2::zeros(),
            step: 0,
        }
    }
}

/// One predict/update cycle with the time-varying gain.
pub fn kf_step(
    model: &DiscreteKfModel,
    state: &KalmanState,
    y: AlphaBeta,
    u: AlphaBeta,
) -> Result<(KalmanState, Angle)> {
    let p_prior = model.ad * state.p * model.ad.transpose() + model.q;
    let innov_cov = model.cd * p_prior * model.cd.transpose() + model.r;
    let inv = innov_cov
        .try_inverse()
        .ok_or(Error::Singular("kf_step innovation covariance"))?;
    let k = p_prior * model.cd.transpose() * inv;
    let p_post = (Matrix2::identity() - k * model.cd) * p_prior;
    let p_post = (p_post + p_post.transpose()) * 0.5;
    update_with_gain(model, state, y, u, k, p_post)
}

/// One cycle with a fixed gain; the covariance is left untouched.
pub fn kf_step_fixed_gain(
    model: &DiscreteKfModel,
    state: &KalmanState,
    y: AlphaBeta,
    u: AlphaBeta,
    k: &Matrix2<f64>,
) -> Result<(KalmanState, Angle)> {
    update_with_gain(model, state, y, u, *k, state.p)
}

fn update_with_gain(
    model: &DiscreteKfModel,
    state: &KalmanState,
    y: AlphaBeta,
    u: AlphaBeta,
    k: Matrix2<f64>,
    p: Matrix2<f64>,
) -> Result<(KalmanState, Angle)> {
    let x_prior = model.ad * Vector2::new(state.x_hat.alpha, state.x_hat.beta);
    let y = Vector2::new(y.alpha, y.beta);
    let u = Vector2::new(u.alpha, u.beta);
    let innovation = y - (model.cd * x_prior + model.dd * u);
    let x = x_prior + k * innovation;
    let x_hat = AlphaBeta::new(x[0], x[1]);
    let angle = phase_of(x_hat)?;
    Ok((
        KalmanState {
            x_hat,
            p,
            k_last: k,
            step: state.step + 1,
        },
        angle,
    ))
}

/// Estimation-error transition `Ad (I - K Cd)` and its spectrum.
#[derive(Debug, Clone)]
pub struct ErrorDynamics {
    pub a_err: Matrix2<f64>,
    pub spectrum: EigenSpectrum,
    pub stable: bool,
}

pub fn error_dynamics(model: &DiscreteKfModel, k: &Matrix2<f64>) -> Result<ErrorDynamics> {
    let a_err = model.ad * (Matrix2::identity() - k * model.cd);
    let spectrum = numerics::eigvals(&to_dmatrix(&a_err))?;
    let stable = spectrum.is_schur_stable();
    Ok(ErrorDynamics {
        a_err,
        spectrum,
        stable,
    })
}

/// A running estimator: model plus state plus gain policy.
#[derive(Debug, Clone)]
pub struct KalmanSync {
    model: DiscreteKfModel,
    state: KalmanState,
    steady_gain: Option<Matrix2<f64>>,
}

impl KalmanSync {
    pub fn new(model: DiscreteKfModel, mode: GainMode) -> Result<Self> {
        let steady_gain = match mode {
            GainMode::TimeVarying => None,
            GainMode::SteadyState => Some(model.steady_gain()?.0),
        };
        Ok(Self {
            model,
            state: KalmanState::flat_start(),
            steady_gain,
        })
    }

    pub fn model(&self) -> &DiscreteKfModel {
        &self.model
    }

    pub fn state(&self) -> &KalmanState {
        &self.state
    }

    pub fn set_impedance(&mut self, z: GridImpedance) {
        self.model = self.model.with_impedance(z);
    }

    pub fn step(&mut self, v_pcc: AlphaBeta, i_pcc: AlphaBeta) -> Result<Angle> {
        let (next, angle) = match &self.steady_gain {
            Some(k) => kf_step_fixed_gain(&self.model, &self.state, v_pcc, i_pcc, k)?,
            None => kf_step(&self.model, &self.state, v_pcc, i_pcc)?,
        };
        self.state = next;
        Ok(angle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::wrap_angle;
    use std::f64::consts::PI;

    const W: f64 = 100.0 * PI;
    const TS: f64 = 1e-4;

    fn model(variant: KfVariant, q_kf: f64) -> DiscreteKfModel {
        let z = GridImpedance::from_polar(2.0, 70f64.to_radians());
        build_kf_model(z, W, TS, q_kf, Matrix2::identity(), variant).unwrap()
    }

    #[test]
    fn model_matrices() {
        let m = model(KfVariant::Aaekf, 1e-6);
        assert!((m.ad[(0, 0)] - 0.9995066).abs() < 5e-8);
        assert!((m.ad[(0, 1)] + 0.0314108).abs() < 5e-8);
        assert!((m.ad.transpose() * m.ad - Matrix2::identity()).abs().max() < 1e-12);
        assert!((m.dd[(0, 0)] - 0.6840).abs() < 5e-5);
        assert!((m.dd[(0, 1)] + 1.8794).abs() < 5e-5);
        assert!((m.dd[(1, 0)] - 1.8794).abs() < 5e-5);
        assert_eq!(model(KfVariant::Caekf, 1e-6).dd, Matrix2::zeros());
    }

    #[test]
    fn rejects_bad_covariances() {
        let z = GridImpedance::default();
        assert!(build_kf_model(z, W, TS, 0.0, Matrix2::identity(), KfVariant::Aaekf).is_err());
        let bad_r = Matrix2::new(1.0, 2.0, 2.0, 1.0);
        assert!(build_kf_model(z, W, TS, 1e-6, bad_r, KfVariant::Aaekf).is_err());
    }

    #[test]
    fn variants_agree_without_current() {
        let a = model(KfVariant::Aaekf, 1e-6);
        let c = model(KfVariant::Caekf, 1e-6);
        let mut sa = KalmanState::flat_start();
        let mut sc = KalmanState::flat_start();
        for k in 0..50 {
            let y = AlphaBeta::from_polar(1.0, W * TS * k as f64 + 0.3);
            let (na, pa) = kf_step(&a, &sa, y, AlphaBeta::ZERO).unwrap();
            let (nc, pc) = kf_step(&c, &sc, y, AlphaBeta::ZERO).unwrap();
            assert_eq!(na, nc);
            assert_eq!(pa, pc);
            sa = na;
            sc = nc;
        }
    }

    #[test]
    fn error_dynamics_limits() {
        let m = model(KfVariant::Aaekf, 1e-6);
        let full = error_dynamics(&m, &Matrix2::identity()).unwrap();
        assert_eq!(full.a_err, Matrix2::zeros());
        assert!(full.spectrum.values().iter().all(|v| v.norm() == 0.0));
        let none = error_dynamics(&m, &Matrix2::zeros()).unwrap();
        assert!((none.spectrum.spectral_radius() - 1.0).abs() < 1e-12);
        assert!(!none.stable || none.spectrum.spectral_radius() < 1.0);
    }

    #[test]
    fn steady_gain_matches_recursion_and_has_rotation_structure() {
        for q in [1e-5, 1e-6, 1e-7] {
            let m = model(KfVariant::Aaekf, q);
            let (k, _) = m.steady_gain().unwrap();
            let (k_rec, _) = numerics::kalman_recursive_gain(
                &to_dmatrix(&m.ad),
                &to_dmatrix(&m.cd),
                &to_dmatrix(&m.q),
                &to_dmatrix(&m.r),
                &RealMatrix::identity(2, 2),
            )
            .unwrap();
            assert!((to_dmatrix(&k) - k_rec).abs().max() < 1e-9);
            // Gain commutes with the rotation: [[a, -b], [b, a]].
            assert!((k[(0, 0)] - k[(1, 1)]).abs() < 1e-12);
            assert!((k[(0, 1)] + k[(1, 0)]).abs() < 1e-12);
            let rho = error_dynamics(&m, &k).unwrap().spectrum.spectral_radius();
            assert!(rho > 0.99 && rho < 1.0, "q={q}: rho={rho}");
        }
    }

    #[test]
    fn line_drop_estimate_converges_to_grid_phase() {
        // Measurements synthesized from the measurement equation with a
        // constant-magnitude current; the algebraic inversion
        // V_g = V_pcc - D i_pcc is the exact target.
        let z = GridImpedance::from_polar(2.0, 70f64.to_radians());
        let m = model(KfVariant::Aaekf, 1e-6);
        let mut s = KalmanState::flat_start();
        let mut err = 0.0;
        for k in 0..20_000 {
            let phi = W * TS * (k + 1) as f64 + 0.4;
            let vg = AlphaBeta::from_polar(1.0, phi);
            let i = AlphaBeta::from_polar(1.0, phi + 30f64.to_radians());
            let y = vg + z.drop(i);
            let (n, est) = kf_step(&m, &s, y, i).unwrap();
            let inverted = phase_of(y - z.drop(i)).unwrap();
            assert!(inverted.diff(Angle::new(phi)).radians().abs() < 1e-12);
            err = wrap_angle(est.radians() - phi).radians().abs();
            s = n;
        }
        assert!(err < 1e-3, "final error {err}");
    }
}
