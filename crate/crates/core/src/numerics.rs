//! Small dense real-matrix numerics.
//!
//! Everything in this crate is at most 8×8, so the routines favour
//! transparency over blocking or workspace reuse. Matrices are plain
//! `nalgebra::DMatrix<f64>`; the algorithms (exponential, ZOH, QR
//! eigenvalues, Riccati iteration) are implemented here.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type RealMatrix = DMatrix<f64>;

/// Riccati iteration stops once the largest entry change drops below this
/// fraction of the solution scale.
pub const DARE_TOLERANCE: f64 = 1e-12;
pub const DARE_MAX_ITERATIONS: usize = 1_000_000;
pub const DARE_MAX_DOUBLINGS: usize = 100;

/// Eigenpair certificate: smallest singular value of `A - λI` relative to ‖A‖.
pub const EIGEN_RESIDUAL_BOUND: f64 = 1e-8;

/// Eigenvalues of a real square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSpectrum {
    values: Vec<Complex64>,
}

impl EigenSpectrum {
    pub fn new(values: Vec<Complex64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// All eigenvalues strictly inside the unit circle.
    pub fn is_schur_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// All eigenvalues strictly in the open left half plane.
    pub fn is_hurwitz_stable(&self) -> bool {
        self.values.iter().all(|v| v.re < 0.0)
    }

    /// Values sorted by (real, imaginary) for stable comparisons.
    pub fn sorted(&self) -> Vec<Complex64> {
        let mut v = self.values.clone();
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }
}

fn require_square(op: &'static str, a: &RealMatrix) -> Result<usize> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::Dimension {
            op,
            detail: format!(
                "expected a non-empty square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            ),
        });
    }
    Ok(a.nrows())
}

fn require_finite(op: &'static str, what: &'static str, a: &RealMatrix) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix {
            op,
            what,
            requirement: "finite",
        })
    }
}

/// Largest absolute entry.
pub fn max_abs(a: &RealMatrix) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn inf_norm(a: &RealMatrix) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential `e^{A t}` (Padé approximant with scaling and squaring).
pub fn expm(a: &RealMatrix, t: f64) -> Result<RealMatrix> {
    require_square("expm", a)?;
    require_finite("expm", "A", a)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::config("t", "must be finite and non-negative"));
    }
    Ok((a * t).exp())
}

/// Exact zero-order-hold discretization through the augmented exponential
/// `exp([[A, B], [0, 0]] Ts) = [[Ad, Bd], [0, I]]`.
pub fn zoh_discretize(a: &RealMatrix, b: &RealMatrix, ts: f64) -> Result<(RealMatrix, RealMatrix)> {
    let n = require_square("zoh_discretize", a)?;
    if b.nrows() != n {
        return Err(Error::Dimension {
            op: "zoh_discretize",
            detail: format!("B has {} rows, A is {n}x{n}", b.nrows()),
        });
    }
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::config("ts", "sampling time must be positive"));
    }
    let m = b.ncols();
    let mut aug = RealMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, m)).copy_from(b);
    let e = expm(&aug, ts)?;
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, m)).into_owned();
    Ok((ad, bd))
}

/// Eigenvalues of a square matrix.
///
/// 1×1 and 2×2 use closed forms. Larger matrices are reduced to upper
/// Hessenberg form by stabilized elimination and then iterated with
/// Francis double-shift QR; every returned value is certified by the
/// smallest singular value of `A - λI`.
pub fn eigvals(a: &RealMatrix) -> Result<EigenSpectrum> {
    let n = require_square("eigvals", a)?;
    require_finite("eigvals", "A", a)?;
    match n {
        1 => Ok(EigenSpectrum::new(vec![Complex64::new(a[(0, 0)], 0.0)])),
        2 => Ok(EigenSpectrum::new(
            eig2(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]).to_vec(),
        )),
        _ => {
            let values = hessenberg_qr(a)?;
            certify(a, &values)?;
            Ok(EigenSpectrum::new(values))
        }
    }
}

fn eig2(a: f64, b: f64, c: f64, d: f64) -> [Complex64; 2] {
    let half_tr = 0.5 * (a + d);
    let det = a * d - b * c;
    let disc = half_tr * half_tr - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        // Avoid cancellation in the smaller root.
        let big = if half_tr >= 0.0 {
            half_tr + s
        } else {
            half_tr - s
        };
        let small = if big != 0.0 { det / big } else { half_tr - s };
        let (hi, lo) = if big >= small {
            (big, small)
        } else {
            (small, big)
        };
        [Complex64::new(hi, 0.0), Complex64::new(lo, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex64::new(half_tr, s), Complex64::new(half_tr, -s)]
    }
}

fn certify(a: &RealMatrix, values: &[Complex64]) -> Result<()> {
    let n = a.nrows();
    let scale = inf_norm(a).max(f64::MIN_POSITIVE);
    let bound = EIGEN_RESIDUAL_BOUND * scale;
    for &lambda in values {
        let shifted = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
            let v = Complex64::new(a[(i, j)], 0.0);
            if i == j {
                v - lambda
            } else {
                v
            }
        });
        let sv = shifted.singular_values();
        let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smallest.is_nan() || smallest > bound {
            return Err(Error::EigenCertificate {
                op: "eigvals",
                value: format!("{lambda}"),
                residual: smallest,
                bound,
            });
        }
    }
    Ok(())
}

/// Hessenberg reduction followed by shifted QR. Indices are 1-based inside
/// so the sweep bookkeeping stays readable.
#[allow(clippy::needless_range_loop)]
fn hessenberg_qr(input: &RealMatrix) -> Result<Vec<Complex64>> {
    let n = input.nrows();
    let mut a = vec![vec![0.0_f64; n + 1]; n + 1];
    for i in 1..=n {
        for j in 1..=n {
            a[i][j] = input[(i - 1, j - 1)];
        }
    }

    // Reduction by elimination with partial pivoting.
    for m in 2..n {
        let mut x = 0.0_f64;
        let mut piv = m;
        for j in m..=n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                piv = j;
            }
        }
        if piv != m {
            for j in (m - 1)..=n {
                let t = a[piv][j];
                a[piv][j] = a[m][j];
                a[m][j] = t;
            }
            for row in a.iter_mut().skip(1) {
                row.swap(piv, m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..=n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..=n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut().skip(1) {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
    for i in 3..=n {
        for j in 1..(i - 1) {
            a[i][j] = 0.0;
        }
    }

    let mut wr = vec![0.0_f64; n + 1];
    let mut wi = vec![0.0_f64; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }

    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r, mut s, mut w, mut x, mut y, mut z);
    while nn >= 1 {
        let mut its = 0;
        loop {
            // Look for a single small subdiagonal element.
            let mut l = nn;
            while l >= 2 {
                s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
            } else {
                y = a[nn - 1][nn - 1];
                w = a[nn][nn - 1] * a[nn - 1][nn];
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + z.copysign(p);
                        wr[nn - 1] = x + z;
                        wr[nn] = x + z;
                        if z != 0.0 {
                            wr[nn] = x - w / z;
                        }
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    nn -= 2;
                } else {
                    if its == 60 {
                        return Err(Error::NoConvergence {
                            op: "eigvals",
                            iterations: its,
                            last_change: a[nn][nn - 1].abs(),
                        });
                    }
                    if its == 10 || its == 20 || its == 40 {
                        // Exceptional shift.
                        t += x;
                        for i in 1..=nn {
                            a[i][i] -= x;
                        }
                        s = a[nn][nn - 1].abs() + a[nn - 1][nn - 2].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    let mut m = nn - 2;
                    loop {
                        z = a[m][m];
                        r = x - z;
                        s = y - z;
                        p = (r * s - w) / a[m + 1][m] + a[m][m + 1];
                        q = a[m + 1][m + 1] - z - r - s;
                        r = a[m + 2][m + 1];
                        s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in (m + 2)..=nn {
                        a[i][i - 2] = 0.0;
                        if i != m + 2 {
                            a[i][i - 3] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k < nn {
                        if k != m {
                            p = a[k][k - 1];
                            q = a[k + 1][k - 1];
                            r = 0.0;
                            if k != nn - 1 {
                                r = a[k + 2][k - 1];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        s = (p * p + q * q + r * r).sqrt().copysign(p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a[k][k - 1] = -a[k][k - 1];
                                }
                            } else {
                                a[k][k - 1] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                p = a[k][j] + q * a[k + 1][j];
                                if k != nn - 1 {
                                    p += r * a[k + 2][j];
                                    a[k + 2][j] -= p * z;
                                }
                                a[k + 1][j] -= p * y;
                                a[k][j] -= p * x;
                            }
                            let mmin = if nn < k + 3 { nn } else { k + 3 };
                            for row in a.iter_mut().take(mmin + 1).skip(l) {
                                p = x * row[k] + y * row[k + 1];
                                if k != nn - 1 {
                                    p += z * row[k + 2];
                                    row[k + 2] -= p * r;
                                }
                                row[k + 1] -= p * q;
                                row[k] -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 2 || l + 1 >= nn {
                break;
            }
        }
    }

    Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
}

fn require_symmetric(op: &'static str, what: &'static str, m: &RealMatrix) -> Result<()> {
    let scale = max_abs(m).max(1.0);
    if (m - m.transpose()).iter().any(|v| v.abs() > 1e-12 * scale) {
        return Err(Error::InvalidMatrix {
            op,
            what,
            requirement: "symmetric",
        });
    }
    Ok(())
}

fn require_psd(op: &'static str, what: &'static str, m: &RealMatrix) -> Result<()> {
    require_symmetric(op, what, m)?;
    let sym = (m + m.transpose()) * 0.5;
    let min = sym
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min < -1e-12 * max_abs(m).max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidMatrix {
            op,
            what,
            requirement: "positive semi-definite",
        });
    }
    Ok(())
}

fn require_pd(op: &'static str, what: &'static str, m: &RealMatrix) -> Result<()> {
    require_symmetric(op, what, m)?;
    if m.clone().cholesky().is_none() {
        return Err(Error::InvalidMatrix {
            op,
            what,
            requirement: "positive definite",
        });
    }
    Ok(())
}

/// One Riccati map application `AᵀSA − AᵀSB(R + BᵀSB)⁻¹BᵀSA + Q`.
fn riccati_map(
    ad: &RealMatrix,
    bd: &RealMatrix,
    q: &RealMatrix,
    r: &RealMatrix,
    s: &RealMatrix,
) -> Result<RealMatrix> {
    let at_s = ad.transpose() * s;
    let bt_s = bd.transpose() * s;
    let g = r + &bt_s * bd;
    let chol = g.cholesky().ok_or(Error::Singular("solve_dare"))?;
    let x = chol.solve(&(&bt_s * ad));
    let next = &at_s * ad - (&at_s * bd) * x + q;
    Ok((&next + next.transpose()) * 0.5)
}

fn check_dare_inputs(
    op: &'static str,
    ad: &RealMatrix,
    bd: &RealMatrix,
    q: &RealMatrix,
    r: &RealMatrix,
) -> Result<()> {
    let n = require_square(op, ad)?;
    if bd.nrows() != n || q.shape() != (n, n) || r.shape() != (bd.ncols(), bd.ncols()) {
        return Err(Error::Dimension {
            op,
            detail: format!(
                "A {}x{}, B {}x{}, Q {}x{}, R {}x{}",
                ad.nrows(),
                ad.ncols(),
                bd.nrows(),
                bd.ncols(),
                q.nrows(),
                q.ncols(),
                r.nrows(),
                r.ncols()
            ),
        });
    }
    for (what, m) in [("A", ad), ("B", bd), ("Q", q), ("R", r)] {
        require_finite(op, what, m)?;
    }
    require_psd(op, "Q", q)?;
    require_pd(op, "R", r)?;
    Ok(())
}

/// Stabilizing solution of the discrete algebraic Riccati equation.
///
/// The Riccati recursion `S ← AᵀS(I + GS)⁻¹A + Q`, `G = BR⁻¹Bᵀ`, is
/// iterated from `S = 0` by structured doubling: after `k` passes the
/// iterate equals the recursion advanced `2^k` steps. Convergence is
/// declared when the entrywise change falls below
/// [`DARE_TOLERANCE`] times the solution scale.
pub fn solve_dare(
    ad: &RealMatrix,
    bd: &RealMatrix,
    q: &RealMatrix,
    r: &RealMatrix,
) -> Result<RealMatrix> {
    check_dare_inputs("solve_dare", ad, bd, q, r)?;
    let n = ad.nrows();
    let eye = RealMatrix::identity(n, n);
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or(Error::Singular("solve_dare"))?
        .inverse();
    let mut a = ad.clone();
    let mut g = bd * r_inv * bd.transpose();
    let mut h = q.clone();
    let mut change = f64::INFINITY;
    for _ in 0..DARE_MAX_DOUBLINGS {
        let w = (&eye + &g * &h).lu();
        let wa = w.solve(&a).ok_or(Error::Singular("solve_dare"))?;
        let wg = w.solve(&g).ok_or(Error::Singular("solve_dare"))?;
        let h_next = &h + a.transpose() * &h * &wa;
        let g_next = &g + &a * &wg * a.transpose();
        let a_next = &a * &wa;
        let h_next = (&h_next + h_next.transpose()) * 0.5;
        change = max_abs(&(&h_next - &h));
        if !h_next.iter().chain(a_next.iter()).all(|v| v.is_finite()) {
            break;
        }
        let scale = max_abs(&h_next).max(max_abs(q));
        h = h_next;
        g = (&g_next + g_next.transpose()) * 0.5;
        a = a_next;
        if change <= DARE_TOLERANCE * scale {
            return Ok(h);
        }
    }
    Err(Error::NoConvergence {
        op: "solve_dare",
        iterations: DARE_MAX_DOUBLINGS,
        last_change: change,
    })
}

/// Plain fixed-point iteration of the Riccati recursion from `S = Q`.
/// Linear convergence; used as a cross-check for [`solve_dare`].
pub fn solve_dare_fixed_point(
    ad: &RealMatrix,
    bd: &RealMatrix,
    q: &RealMatrix,
    r: &RealMatrix,
) -> Result<RealMatrix> {
    check_dare_inputs("solve_dare_fixed_point", ad, bd, q, r)?;
    let q_scale = max_abs(q);
    let mut s = q.clone();
    let mut change = f64::INFINITY;
    for _ in 0..DARE_MAX_ITERATIONS {
        let next = riccati_map(ad, bd, q, r, &s)?;
        change = max_abs(&(&next - &s));
        if !change.is_finite() || !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let scale = max_abs(&next).max(q_scale);
        s = next;
        if change <= DARE_TOLERANCE * scale {
            return Ok(s);
        }
    }
    Err(Error::NoConvergence {
        op: "solve_dare_fixed_point",
        iterations: DARE_MAX_ITERATIONS,
        last_change: change,
    })
}

/// Largest entry of the DARE residual for a candidate solution.
pub fn dare_residual(
    ad: &RealMatrix,
    bd: &RealMatrix,
    q: &RealMatrix,
    r: &RealMatrix,
    s: &RealMatrix,
) -> f64 {
    let at_s = ad.transpose() * s;
    let g = r + bd.transpose() * s * bd;
    let Some(g_inv) = g.try_inverse() else {
        return f64::INFINITY;
    };
    let res = &at_s * ad - s - &at_s * bd * g_inv * bd.transpose() * s * ad + q;
    max_abs(&res)
}

/// Discrete LQR solution: Riccati matrix plus both gain readings.
#[derive(Debug, Clone)]
pub struct LqrSolution {
    pub s: RealMatrix,
    /// `(R + BᵀSB)⁻¹BᵀSA`, the gain used for control.
    pub k: RealMatrix,
    /// `R⁻¹BᵀS`, the continuous-time formula evaluated on discrete matrices.
    pub k_continuous_form: RealMatrix,
}

pub fn lqr_solve(
    ad: &RealMatrix,
    bd: &RealMatrix,
    q: &RealMatrix,
    r: &RealMatrix,
) -> Result<LqrSolution> {
    let s = solve_dare(ad, bd, q, r)?;
    let bt_s = bd.transpose() * &s;
    let g = r + &bt_s * bd;
    let k = g
        .cholesky()
        .ok_or(Error::Singular("lqr_gain"))?
        .solve(&(&bt_s * ad));
    let k_continuous_form = r
        .clone()
        .cholesky()
        .ok_or(Error::Singular("lqr_gain"))?
        .solve(&bt_s);
    Ok(LqrSolution {
        s,
        k,
        k_continuous_form,
    })
}

/// Discrete LQR gain `K = (R + BᵀSB)⁻¹BᵀSA`.
pub fn lqr_gain(
    ad: &RealMatrix,
    bd: &RealMatrix,
    q: &RealMatrix,
    r: &RealMatrix,
) -> Result<RealMatrix> {
    Ok(lqr_solve(ad, bd, q, r)?.k)
}

/// Steady-state Kalman gain from the filter-form DARE.
///
/// Returns `(K, P)` with `P` the steady prediction covariance and
/// `K = P Cᵀ (C P Cᵀ + R)⁻¹`.
pub fn kalman_steady_gain(
    ad: &RealMatrix,
    cd: &RealMatrix,
    qp: &RealMatrix,
    rm: &RealMatrix,
) -> Result<(RealMatrix, RealMatrix)> {
    let p = solve_dare(&ad.transpose(), &cd.transpose(), qp, rm)?;
    let k = filter_gain(cd, rm, &p)?;
    Ok((k, p))
}

fn filter_gain(cd: &RealMatrix, rm: &RealMatrix, p: &RealMatrix) -> Result<RealMatrix> {
    let innov = cd * p * cd.transpose() + rm;
    let inv = innov.try_inverse().ok_or(Error::Singular("kalman gain"))?;
    Ok(p * cd.transpose() * inv)
}

/// Runs the time-varying covariance recursion from `P(0)` until the gain
/// stops changing; the independent route to [`kalman_steady_gain`].
pub fn kalman_recursive_gain(
    ad: &RealMatrix,
    cd: &RealMatrix,
    qp: &RealMatrix,
    rm: &RealMatrix,
    p0: &RealMatrix,
) -> Result<(RealMatrix, RealMatrix)> {
    check_dare_inputs(
        "kalman_recursive_gain",
        &ad.transpose(),
        &cd.transpose(),
        qp,
        rm,
    )?;
    let n = ad.nrows();
    let eye = RealMatrix::identity(n, n);
    let mut post = p0.clone();
    let mut last_k: Option<RealMatrix> = None;
    let mut change = f64::INFINITY;
    for _ in 0..DARE_MAX_ITERATIONS {
        let prior = ad * &post * ad.transpose() + qp;
        let prior = (&prior + prior.transpose()) * 0.5;
        let k = filter_gain(cd, rm, &prior)?;
        post = (&eye - &k * cd) * &prior;
        post = (&post + post.transpose()) * 0.5;
        if let Some(prev) = &last_k {
            change = max_abs(&(&k - prev));
            if change <= 1e-15 * max_abs(&k).max(f64::MIN_POSITIVE) {
                return Ok((k, prior));
            }
        }
        last_k = Some(k);
    }
    Err(Error::NoConvergence {
        op: "kalman_recursive_gain",
        iterations: DARE_MAX_ITERATIONS,
        last_change: change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn m(rows: usize, cols: usize, v: &[f64]) -> RealMatrix {
        RealMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn expm_rotation_generator() {
        let w = 100.0 * PI;
        let e = expm(&m(2, 2, &[0.0, -w, w, 0.0]), 1e-4).unwrap();
        let (s, c) = (w * 1e-4).sin_cos();
        assert!((e[(0, 0)] - c).abs() < 1e-14);
        assert!((e[(0, 1)] + s).abs() < 1e-14);
        assert!((e[(1, 0)] - s).abs() < 1e-14);
        assert!((e[(0, 0)] - 0.9995066).abs() < 5e-8);
        assert!((e[(1, 0)] - 0.0314108).abs() < 5e-8);
    }

    #[test]
    fn expm_identity_at_zero_and_diagonal() {
        let a = m(3, 3, &[1.0, 2.0, 3.0, -4.0, 5.0, 6.0, 7.0, 8.0, -9.0]);
        assert_eq!(expm(&a, 0.0).unwrap(), RealMatrix::identity(3, 3));
        let d = expm(&m(2, 2, &[-0.3, 0.0, 0.0, 1.7]), 2.0).unwrap();
        assert!((d[(0, 0)] - (-0.6f64).exp()).abs() < 1e-14);
        assert!((d[(1, 1)] - 3.4f64.exp()).abs() < 1e-12 * 3.4f64.exp());
        assert_eq!(d[(0, 1)], 0.0);
    }

    #[test]
    fn expm_rejects_non_square() {
        assert!(matches!(
            expm(&RealMatrix::zeros(2, 3), 1.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zoh_scalar_cases() {
        let (ad, bd) = zoh_discretize(&m(1, 1, &[0.0]), &m(1, 1, &[1.0]), 0.1).unwrap();
        assert!((ad[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((bd[(0, 0)] - 0.1).abs() < 1e-15);

        let (ad, bd) = zoh_discretize(&m(1, 1, &[-1.0]), &m(1, 1, &[1.0]), 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((ad[(0, 0)] - e).abs() < 1e-14);
        assert!((bd[(0, 0)] - (1.0 - e)).abs() < 1e-14);

        let w = 100.0 * PI;
        let (ad, bd) =
            zoh_discretize(&m(2, 2, &[0.0, -w, w, 0.0]), &RealMatrix::zeros(2, 1), 1e-4).unwrap();
        assert!((ad[(1, 0)] - (w * 1e-4).sin()).abs() < 1e-14);
        assert_eq!(bd, RealMatrix::zeros(2, 1));

        assert!(zoh_discretize(&m(1, 1, &[0.0]), &RealMatrix::zeros(2, 1), 0.1).is_err());
    }

    #[test]
    fn eig_small_cases() {
        let rot = eigvals(&m(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
        assert_eq!(
            rot.sorted(),
            vec![Complex64::new(0.0, -1.0), Complex64::new(0.0, 1.0)]
        );
        let diag = eigvals(&m(2, 2, &[0.5, 0.0, 0.0, 0.9])).unwrap().sorted();
        assert!((diag[0] - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        assert!((diag[1] - Complex64::new(0.9, 0.0)).norm() < 1e-15);
        assert!(eigvals(&RealMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn eig_companion_matrix() {
        // Roots 1, 2, 3, 4 and ±2i: (x-1)(x-2)(x-3)(x-4)(x²+4)
        let coeffs = [1.0, -10.0, 39.0, -90.0, 164.0, -200.0, 96.0];
        let n = 6;
        let mut a = RealMatrix::zeros(n, n);
        for j in 0..n {
            a[(0, j)] = -coeffs[j + 1];
        }
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        let spec = eigvals(&a).unwrap().sorted();
        let expected = [
            Complex64::new(0.0, -2.0),
            Complex64::new(0.0, 2.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(3.0, 0.0),
            Complex64::new(4.0, 0.0),
        ];
        for (got, want) in spec.iter().zip(expected.iter()) {
            assert!((got - want).norm() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn eig_block_rotation_six() {
        // Three decoupled scaled rotations.
        let mut a = RealMatrix::zeros(6, 6);
        for (b, (r, th)) in [(0.9_f64, 0.1_f64), (0.5, 1.0), (0.2, 2.5)]
            .iter()
            .enumerate()
        {
            let (s, c) = th.sin_cos();
            a[(2 * b, 2 * b)] = r * c;
            a[(2 * b, 2 * b + 1)] = -r * s;
            a[(2 * b + 1, 2 * b)] = r * s;
            a[(2 * b + 1, 2 * b + 1)] = r * c;
        }
        let spec = eigvals(&a).unwrap();
        let mut mags: Vec<f64> = spec.values().iter().map(|v| v.norm()).collect();
        mags.sort_by(f64::total_cmp);
        for (got, want) in mags.iter().zip([0.2, 0.2, 0.5, 0.5, 0.9, 0.9]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn dare_scalar_golden_ratio() {
        let one = m(1, 1, &[1.0]);
        let sol = lqr_solve(&one, &one, &one, &one).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.s[(0, 0)] - phi).abs() < 1e-9);
        assert!((sol.k[(0, 0)] - phi / (1.0 + phi)).abs() < 1e-9);
    }

    #[test]
    fn dare_zero_cost_and_bad_weights() {
        let a = m(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = m(2, 1, &[0.0, 0.1]);
        let q0 = RealMatrix::zeros(2, 2);
        let r = m(1, 1, &[1.0]);
        let sol = lqr_solve(&a, &b, &q0, &r).unwrap();
        assert_eq!(sol.s, q0);
        assert_eq!(sol.k, RealMatrix::zeros(1, 2));
        let bad_r = m(1, 1, &[0.0]);
        assert!(matches!(
            solve_dare(&a, &b, &RealMatrix::identity(2, 2), &bad_r),
            Err(Error::InvalidMatrix { what: "R", .. })
        ));
    }

    #[test]
    fn dare_lyapunov_limit_when_input_is_absent() {
        let a = m(2, 2, &[0.5, 0.2, -0.1, 0.7]);
        let b = RealMatrix::zeros(2, 1);
        let q = m(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let s = solve_dare(&a, &b, &q, &m(1, 1, &[1.0])).unwrap();
        // Oracle: truncated series Σ (Aᵀ)^k Q A^k.
        let mut sum = RealMatrix::zeros(2, 2);
        let mut ak = RealMatrix::identity(2, 2);
        for _ in 0..400 {
            sum += ak.transpose() * &q * &ak;
            ak = &ak * &a;
        }
        assert!(max_abs(&(&s - &sum)) < 1e-10);
    }

    #[test]
    fn unstabilizable_pair_fails() {
        let a = m(1, 1, &[1.5]);
        let b = m(1, 1, &[0.0]);
        let one = m(1, 1, &[1.0]);
        assert!(matches!(
            solve_dare(&a, &b, &one, &one),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn kalman_scalar_duality() {
        let one = m(1, 1, &[1.0]);
        let (k, p) = kalman_steady_gain(&one, &one, &one, &one).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((p[(0, 0)] - phi).abs() < 1e-9);
        assert!((k[(0, 0)] - phi / (phi + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn doubling_matches_fixed_point() {
        let a = m(2, 2, &[0.9, 0.2, -0.1, 1.05]);
        let b = m(2, 1, &[0.0, 1.0]);
        let q = m(2, 2, &[1.0, 0.1, 0.1, 2.0]);
        let r = m(1, 1, &[0.5]);
        let s1 = solve_dare(&a, &b, &q, &r).unwrap();
        let s2 = solve_dare_fixed_point(&a, &b, &q, &r).unwrap();
        assert!(max_abs(&(&s1 - &s2)) < 1e-9 * max_abs(&s1));
        assert!(dare_residual(&a, &b, &q, &r, &s1) < 1e-9);
    }

    #[test]
    fn kalman_ignores_noisy_measurements() {
        let w = 100.0 * PI * 1e-4;
        let a = m(2, 2, &[w.cos(), -w.sin(), w.sin(), w.cos()]);
        let eye = RealMatrix::identity(2, 2);
        let (k, _) = kalman_steady_gain(&a, &eye, &(&eye * 1e-6), &(&eye * 1e6)).unwrap();
        assert!(max_abs(&k) < 1e-5);
    }
}
