//! LCL filter model in the rotating frame and the LQR current controller.
//!
//! State ordering is `[i_inv,d, i_inv,q, i_pcc,d, i_pcc,q, v_c,d, v_c,q]`,
//! input `[v_inv,d, v_inv,q]`. The PCC voltage is a disturbance input and
//! is left out of the Riccati design.

use nalgebra::{DVector, Matrix2x6, Vector6};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::Dq;
use crate::numerics::{self, EigenSpectrum, RealMatrix};

/// Unit system used to build the plant matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitConvention {
    /// Volts, amperes, henries, farads.
    #[default]
    Si,
    /// Per unit on the rated base, time in seconds.
    PerUnit,
}

/// LCL filter and system base, in SI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LclParams {
    pub l_f1: f64,
    pub l_f2: f64,
    pub c_f: f64,
    pub omega_g: f64,
    pub v_base: f64,
    pub s_base: f64,
}

impl Default for LclParams {
    fn default() -> Self {
        Self {
            l_f1: 500e-6,
            l_f2: 500e-6,
            c_f: 100e-6,
            omega_g: 2.0 * std::f64::consts::PI * 50.0,
            v_base: 415.0,
            s_base: 110e3,
        }
    }
}

impl LclParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lcl.l_f1", self.l_f1),
            ("lcl.l_f2", self.l_f2),
            ("lcl.c_f", self.c_f),
            ("lcl.omega_g", self.omega_g),
            ("lcl.v_base", self.v_base),
            ("lcl.s_base", self.s_base),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn z_base(&self) -> f64 {
        self.v_base * self.v_base / self.s_base
    }

    /// Inductances and capacitance in the requested convention. In per
    /// unit, inductance is `L/Z_base` and capacitance `C·Z_base`, both in
    /// seconds, so time stays in seconds.
    pub fn elements(&self, conv: UnitConvention) -> (f64, f64, f64) {
        match conv {
            UnitConvention::Si => (self.l_f1, self.l_f2, self.c_f),
            UnitConvention::PerUnit => {
                let zb = self.z_base();
                (self.l_f1 / zb, self.l_f2 / zb, self.c_f * zb)
            }
        }
    }

    pub fn x_f1_pu(&self) -> f64 {
        self.omega_g * self.l_f1 / self.z_base()
    }

    pub fn x_f2_pu(&self) -> f64 {
        self.omega_g * self.l_f2 / self.z_base()
    }

    pub fn b_c_pu(&self) -> f64 {
        self.omega_g * self.c_f * self.z_base()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantMatrices {
    pub a: RealMatrix,
    pub b1: RealMatrix,
    pub b2: RealMatrix,
}

pub fn build_plant(p: &LclParams, conv: UnitConvention) -> PlantMatrices {
    let (l1, l2, c) = p.elements(conv);
    let w = p.omega_g;
    #[rustfmt::skip]
    let a = RealMatrix::from_row_slice(6, 6, &[
        0.0,      w,        0.0,      0.0,      -1.0 / l1, 0.0,
        -w,       0.0,      0.0,      0.0,      0.0,       -1.0 / l1,
        0.0,      0.0,      0.0,      w,        1.0 / l2,  0.0,
        0.0,      0.0,      -w,       0.0,      0.0,       1.0 / l2,
        1.0 / c,  0.0,      -1.0 / c, 0.0,      0.0,       w,
        0.0,      1.0 / c,  0.0,      -1.0 / c, -w,        0.0,
    ]);
    let mut b1 = RealMatrix::zeros(6, 2);
    b1[(0, 0)] = 1.0 / l1;
    b1[(1, 1)] = 1.0 / l1;
    let mut b2 = RealMatrix::zeros(6, 2);
    b2[(2, 0)] = -1.0 / l2;
    b2[(3, 1)] = -1.0 / l2;
    PlantMatrices { a, b1, b2 }
}

/// Steady operating point of the filter, in per unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumPoint {
    pub x_bar: Vector6<f64>,
    pub u_bar: Dq,
}

fn cx(v: Dq) -> Complex64 {
    Complex64::new(v.d, v.q)
}

fn dq(c: Complex64) -> Dq {
    Dq::new(c.re, c.im)
}

/// Solve the phasor equations of the filter for a given inverter-current
/// reference and PCC voltage (both per unit, in the controller frame).
pub fn equilibrium(p: &LclParams, i_inv_ref: Dq, v_pcc_op: Dq) -> Result<EquilibriumPoint> {
    let (l1, l2, c) = p.elements(UnitConvention::PerUnit);
    let w = p.omega_g;
    let denom = 1.0 - w * w * l2 * c;
    if denom.abs() < 1e-6 {
        return Err(Error::Resonance(denom.abs()));
    }
    let j = Complex64::i();
    let i_inv = cx(i_inv_ref);
    let v_c = (cx(v_pcc_op) + j * w * l2 * i_inv) / denom;
    let i_pcc = i_inv - j * w * c * v_c;
    let u = v_c + j * w * l1 * i_inv;
    Ok(EquilibriumPoint {
        x_bar: Vector6::new(i_inv.re, i_inv.im, i_pcc.re, i_pcc.im, v_c.re, v_c.im),
        u_bar: dq(u),
    })
}

/// Continuous-time state derivative of the per-unit plant.
pub fn plant_derivative(p: &LclParams, x: &Vector6<f64>, u: Dq, v_pcc: Dq) -> Vector6<f64> {
    let pm = build_plant(p, UnitConvention::PerUnit);
    let xd = DVector::from_column_slice(x.as_slice());
    let ud = DVector::from_column_slice(&[u.d, u.q]);
    let vd = DVector::from_column_slice(&[v_pcc.d, v_pcc.q]);
    let dx = &pm.a * xd + &pm.b1 * ud + &pm.b2 * vd;
    Vector6::from_column_slice(dx.as_slice())
}

/// Diagonal weights `Q = diag(q1, q1, q2, q2, q3, q3)`, `R = r I₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrWeights {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub r: f64,
}

impl LqrWeights {
    /// Uniform weights, the low-gain set.
    pub const LOW_GAIN: LqrWeights = LqrWeights {
        q1: 10.0,
        q2: 10.0,
        q3: 10.0,
        r: 1e-2,
    };
    /// Current-heavy weights, the high-gain set.
    pub const HIGH_GAIN: LqrWeights = LqrWeights {
        q1: 1e3,
        q2: 1e3,
        q3: 10.0,
        r: 1e-2,
    };

    pub fn q_matrix(&self) -> RealMatrix {
        RealMatrix::from_diagonal(&DVector::from_column_slice(&[
            self.q1, self.q1, self.q2, self.q2, self.q3, self.q3,
        ]))
    }

    pub fn r_matrix(&self) -> RealMatrix {
        RealMatrix::identity(2, 2) * self.r
    }
}

#[derive(Debug, Clone)]
pub struct LqrDesign {
    pub convention: UnitConvention,
    pub weights: LqrWeights,
    pub ts: f64,
    pub a: RealMatrix,
    pub b1: RealMatrix,
    pub b2: RealMatrix,
    pub ad: RealMatrix,
    pub b1d: RealMatrix,
    pub q: RealMatrix,
    pub r: RealMatrix,
    pub s: RealMatrix,
    /// Gain in the design convention.
    pub k: RealMatrix,
    /// `R⁻¹B₁dᵀS`, kept for comparison only.
    pub k_continuous_form: RealMatrix,
    pub closed_loop: EigenSpectrum,
    /// Gain expressed for per-unit states and inputs.
    pub k_pu: Matrix2x6<f64>,
}

pub fn design_lqr(
    p: &LclParams,
    weights: LqrWeights,
    ts: f64,
    conv: UnitConvention,
) -> Result<LqrDesign> {
    p.validate()?;
    let pm = build_plant(p, conv);
    let (ad, b1d) = numerics::zoh_discretize(&pm.a, &pm.b1, ts)?;
    let q = weights.q_matrix();
    let r = weights.r_matrix();
    let sol = numerics::lqr_solve(&ad, &b1d, &q, &r)?;
    let closed_loop = numerics::eigvals(&(&ad - &b1d * &sol.k))?;
    let k_pu = gain_to_per_unit(&sol.k, p, conv);
    Ok(LqrDesign {
        convention: conv,
        weights,
        ts,
        a: pm.a,
        b1: pm.b1,
        b2: pm.b2,
        ad,
        b1d,
        q,
        r,
        s: sol.s,
        k: sol.k,
        k_continuous_form: sol.k_continuous_form,
        closed_loop,
        k_pu,
    })
}

/// Convert a gain to per unit. Current columns map amperes to volts, so
/// they scale by `1/Z_base`; voltage columns are dimensionless.
pub fn gain_to_per_unit(k: &RealMatrix, p: &LclParams, conv: UnitConvention) -> Matrix2x6<f64> {
    let mut out = Matrix2x6::from_fn(|i, j| k[(i, j)]);
    if conv == UnitConvention::Si {
        let zb = p.z_base();
        for i in 0..2 {
            for j in 0..4 {
                out[(i, j)] /= zb;
            }
        }
    }
    out
}

/// Largest violation of the d-q rotation symmetry
/// `K[1][2j] = -K[0][2j+1]`, `K[1][2j+1] = K[0][2j]`.
pub fn gain_symmetry_defect(k: &RealMatrix) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..k.ncols() / 2 {
        worst = worst.max((k[(1, 2 * j)] + k[(0, 2 * j + 1)]).abs());
        worst = worst.max((k[(1, 2 * j + 1)] - k[(0, 2 * j)]).abs());
    }
    worst
}

/// Voltage clamp applied to the controller output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub u: Dq,
    pub saturated: bool,
}

/// Circular limiter: scale `u` onto the circle of radius `v_sat` if outside.
pub fn saturate(u: Dq, v_sat: f64) -> ControlOutput {
    let mag = u.norm();
    if mag > v_sat {
        ControlOutput {
            u: u * (v_sat / mag),
            saturated: true,
        }
    } else {
        ControlOutput {
            u,
            saturated: false,
        }
    }
}

/// `u = ū - K (x - x̄)`, or the bare `-K (x - x̄)` when `feedforward` is off.
pub fn control_step(
    k_pu: &Matrix2x6<f64>,
    x: &Vector6<f64>,
    eq: &EquilibriumPoint,
    v_sat: f64,
    feedforward: bool,
) -> ControlOutput {
    let fb = k_pu * (x - eq.x_bar);
    let base = if feedforward { eq.u_bar } else { Dq::ZERO };
    saturate(Dq::new(base.d - fb[0], base.q - fb[1]), v_sat)
}
