//! Trace metrics: settling time, exponential decay constant and stability
//! classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default settling band, as a fraction of the target.
pub const SETTLING_BAND: f64 = 0.02;
/// Peak-to-peak phase error in the final window above which a run is
/// oscillatory, radians.
pub const OSCILLATION_THRESHOLD: f64 = 0.05;
/// Any state above this magnitude marks a run as diverged, pu.
pub const DIVERGENCE_LIMIT: f64 = 1e3;
/// Fraction of the trace, at its end, inspected for oscillation.
pub const FINAL_WINDOW: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    Oscillatory,
    Diverged,
}

impl Stability {
    pub fn as_str(self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Oscillatory => "oscillatory",
            Stability::Diverged => "diverged",
        }
    }
}

/// First time, measured from the first sample, after which every sample
/// stays within the band around `target`. The band is relative to
/// `|target|`, or absolute when the target is zero. `None` if the last
/// sample is still outside.
pub fn settling_time(t: &[f64], v: &[f64], target: f64, band: f64) -> Option<f64> {
    assert!(band > 0.0, "band must be positive");
    let tol = if target == 0.0 {
        band
    } else {
        band * target.abs()
    };
    let last_out = v.iter().rposition(|x| {
        let d = (x - target).abs();
        d.is_nan() || d > tol
    });
    match last_out {
        None => t.first().map(|_| 0.0),
        Some(k) if k + 1 == v.len() => None,
        Some(k) => Some(t[k + 1] - t[0]),
    }
}

/// Indices of strict local extrema, with plateaus collapsed to their
/// first sample.
fn extrema(v: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last_slope = 0.0_f64;
    let mut last_change = 0;
    for k in 1..v.len() {
        let slope = v[k] - v[k - 1];
        if slope == 0.0 {
            continue;
        }
        if last_slope != 0.0 && slope.signum() != last_slope.signum() {
            out.push(last_change);
        }
        last_slope = slope;
        last_change = k;
    }
    out
}

/// Time for the oscillation envelope to fall to `e⁻¹`.
///
/// Half-amplitudes are taken between consecutive extrema, which removes a
/// constant offset without estimating it. A least-squares line through
/// their logarithms, ignoring amplitudes under 1% of the largest, gives
/// the decay rate. Returns `Ok(None)` when the envelope does not decay
/// within the span of the series.
pub fn decay_time_constant(t: &[f64], v: &[f64]) -> Result<Option<f64>> {
    let ext = extrema(v);
    if ext.len() < 3 {
        return Err(Error::InsufficientOscillation(ext.len()));
    }
    let amps: Vec<(f64, f64)> = ext
        .windows(2)
        .map(|w| (0.5 * (t[w[0]] + t[w[1]]), 0.5 * (v[w[0]] - v[w[1]]).abs()))
        .collect();
    let peak = amps.iter().map(|a| a.1).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = amps
        .iter()
        .filter(|a| a.1 >= 0.01 * peak && a.1 > 0.0)
        .map(|a| (a.0, a.1.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientOscillation(pts.len() + 1));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    let span = t[t.len() - 1] - t[0];
    if slope.is_nan() || slope >= 0.0 || -1.0 / slope > span {
        return Ok(None);
    }
    Ok(Some(-1.0 / slope))
}

/// Classify a run from its phase error, the largest state magnitude seen
/// and whether the simulator stopped it.
pub fn stability_classify(
    phase_error: &[f64],
    max_state: f64,
    diverged: bool,
    threshold: f64,
) -> Stability {
    if diverged || max_state.is_nan() || max_state > DIVERGENCE_LIMIT {
        return Stability::Diverged;
    }
    if phase_error.is_empty() {
        return Stability::Stable;
    }
    let start = ((1.0 - FINAL_WINDOW) * phase_error.len() as f64).floor() as usize;
    let tail = &phase_error[start.min(phase_error.len() - 1)..];
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    if hi - lo > threshold {
        Stability::Oscillatory
    } else {
        Stability::Stable
    }
}

/// Mean of `|x|` over the final window.
pub fn final_window_mean_abs(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let start = ((1.0 - FINAL_WINDOW) * x.len() as f64).floor() as usize;
    let tail = &x[start.min(x.len() - 1)..];
    tail.iter().map(|v| v.abs()).sum::<f64>() / tail.len() as f64
}

/// Per-run summary written next to each trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean absolute phase error over the final window, rad.
    pub steady_state_phase_error: f64,
    /// Largest absolute phase error over the final window, rad.
    pub final_max_phase_error: f64,
    /// Settling time of the d-axis PCC voltage, s.
    pub settling_time: Option<f64>,
    /// Envelope decay constant of the machine load angle after release, s.
    pub decay_time_constant: Option<f64>,
    pub stability: Stability,
    /// Peak of the d-axis PCC voltage above its final value, pu.
    pub peak_overshoot: f64,
    /// Time of the first inverter-voltage saturation, s.
    pub first_saturation: Option<f64>,
    pub duration: f64,
}
