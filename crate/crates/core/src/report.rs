//! Design report: LQR matrices and gains, Kalman steady gain and error spectrum.

use nalgebra::{Dim, Matrix, Matrix2, RawStorage};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kalman_sync::{build_kf_model, error_dynamics, KfVariant};
use crate::lqr::{design_lqr, gain_symmetry_defect, LqrWeights, UnitConvention};
use crate::numerics::EigenSpectrum;
use crate::scenario::{ScenarioConfig, SyncMethod};

#[derive(Debug, Clone, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
    pub modulus: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub spectral_radius: f64,
    pub eigenvalues: Vec<Eigenvalue>,
}

impl From<&EigenSpectrum> for SpectrumReport {
    fn from(s: &EigenSpectrum) -> Self {
        Self {
            spectral_radius: s.spectral_radius(),
            eigenvalues: s
                .sorted()
                .into_iter()
                .map(|l| Eigenvalue {
                    re: l.re,
                    im: l.im,
                    modulus: l.norm(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LqrReport {
    pub convention: UnitConvention,
    pub weights: LqrWeights,
    pub ts: f64,
    pub a: Vec<Vec<f64>>,
    pub b1: Vec<Vec<f64>>,
    pub ad: Vec<Vec<f64>>,
    pub b1d: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub k_continuous_form: Vec<Vec<f64>>,
    pub k_per_unit: Vec<Vec<f64>>,
    pub symmetry_defect: f64,
    pub closed_loop: SpectrumReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct KalmanReport {
    pub variant: KfVariant,
    pub q_kf: f64,
    pub r_kf: f64,
    pub impedance_magnitude: f64,
    pub impedance_angle_deg: f64,
    pub steady_gain: Vec<Vec<f64>>,
    pub steady_covariance: Vec<Vec<f64>>,
    pub a_error: Vec<Vec<f64>>,
    pub a_error_spectrum: SpectrumReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignReport {
    pub lqr: LqrReport,
    pub kalman: KalmanReport,
}

fn rows<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(m: &Matrix<f64, R, C, S>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Design both filters for `cfg` at its initial grid impedance, as seen by
/// the synchronizer (model error included).
pub fn design_report(cfg: &ScenarioConfig) -> Result<DesignReport> {
    cfg.validate()?;
    let ts = cfg.simulation.ts;
    let d = design_lqr(&cfg.lcl, cfg.lqr.weights, ts, cfg.lqr.convention)?;
    let lqr = LqrReport {
        convention: d.convention,
        weights: d.weights,
        ts,
        a: rows(&d.a),
        b1: rows(&d.b1),
        ad: rows(&d.ad),
        b1d: rows(&d.b1d),
        k: rows(&d.k),
        k_continuous_form: rows(&d.k_continuous_form),
        k_per_unit: rows(&d.k_pu),
        symmetry_defect: gain_symmetry_defect(&d.k),
        closed_loop: (&d.closed_loop).into(),
    };

    let variant = match cfg.method {
        SyncMethod::Caekf => KfVariant::Caekf,
        _ => KfVariant::Aaekf,
    };
    let z = cfg
        .grid
        .initial
        .impedance()
        .scaled(1.0 + cfg.grid.model_error);
    let model = build_kf_model(
        z,
        cfg.lcl.omega_g,
        ts,
        cfg.kalman.q_kf,
        Matrix2::identity() * cfg.kalman.r_kf,
        variant,
    )?;
    let (k, p) = model.steady_gain()?;
    let err = error_dynamics(&model, &k)?;
    let kalman = KalmanReport {
        variant,
        q_kf: cfg.kalman.q_kf,
        r_kf: cfg.kalman.r_kf,
        impedance_magnitude: z.magnitude(),
        impedance_angle_deg: z.angle().to_degrees(),
        steady_gain: rows(&k),
        steady_covariance: rows(&p),
        a_error: rows(&err.a_err),
        a_error_spectrum: (&err.spectrum).into(),
    };
    Ok(DesignReport { lqr, kalman })
}

impl DesignReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<report>", e.to_string()))
    }
}
