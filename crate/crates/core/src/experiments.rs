//! Canned experiments and their summaries.
//!
//! Each experiment is a list of labelled scenario configurations plus a
//! summary computed from the finished runs. Running the configurations is
//! left to the caller so that it can parallelize; [`run_all`] is the
//! sequential reference.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::analysis::{self, MetricsReport};
use crate::error::{Error, Result};
use crate::io::{self, MetricsRow};
use crate::kalman_sync::{build_kf_model, error_dynamics, GainMode, GridImpedance, KfVariant};
use crate::lqr::{design_lqr, gain_symmetry_defect, LclParams, LqrWeights, UnitConvention};
use crate::numerics::EigenSpectrum;
use crate::scenario::{
    compute_metrics, run_scenario, ImpedanceConfig, ImpedanceStep, MachineConfig, ScenarioConfig,
    SimulationOutcome, SyncMethod,
};

/// Reference low-gain matrix, first row. The second row follows from d-q symmetry.
pub const REFERENCE_LOW_GAIN: [f64; 6] = [0.426, 0.007, 0.002, 0.001, 0.034, 0.001];
pub const REFERENCE_HIGH_GAIN: [f64; 6] = [5.292, 0.085, 0.317, 0.003, 0.943, 0.015];

/// Entries above this magnitude decide a gain match.
pub const DOMINANT_ENTRY: f64 = 0.1;
pub const GAIN_MATCH_TOLERANCE: f64 = 0.15;

pub const TRADEOFF_Q_KF: [f64; 3] = [1e-5, 1e-6, 1e-7];
pub const TRADEOFF_CONVERGENCE_BAND: f64 = 1e-2;
pub const MODEL_ERROR_SWEEP: [f64; 7] = [-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2];
pub const STAIRCASE_LEVELS: [f64; 4] = [0.6, 1.2, 1.9, 2.2];
pub const STAIRCASE_INTERVAL: f64 = 0.08;
/// Fraction of samples saturated within an impedance level that counts as
/// clipping.
pub const CLIP_FRACTION: f64 = 0.05;
pub const MACHINE_FREQUENCIES: [f64; 3] = [3.0, 8.0, 15.0];
/// Time simulated after the machine is released, s.
pub const MACHINE_OBSERVATION: f64 = 4.0;
pub const GAIN_STEP_TIME: f64 = 0.3;
pub const WEAK_GRID: ImpedanceConfig = ImpedanceConfig {
    magnitude: 2.0,
    angle_deg: 70.0,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    NoiseTradeoff,
    GainStep,
    ModelError,
    Staircase,
    MachineModes,
    ReferenceGains,
    Aerror,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::NoiseTradeoff,
        ExperimentId::GainStep,
        ExperimentId::ModelError,
        ExperimentId::Staircase,
        ExperimentId::MachineModes,
        ExperimentId::ReferenceGains,
        ExperimentId::Aerror,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::NoiseTradeoff => "fig3",
            ExperimentId::GainStep => "fig4",
            ExperimentId::ModelError => "fig5",
            ExperimentId::Staircase => "fig6_fig7",
            ExperimentId::MachineModes => "fig8_tableIV",
            ExperimentId::ReferenceGains => "eq22_eq23",
            ExperimentId::Aerror => "aerror",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = ExperimentId::ALL.iter().map(|id| id.as_str()).collect();
                Error::config(
                    "experiment",
                    format!("unknown id `{s}`, expected one of {}", valid.join(", ")),
                )
            })
    }
}

/// A labelled configuration inside an experiment.
#[derive(Debug, Clone)]
pub struct Case {
    pub label: String,
    /// Name shown in the metrics `method` column.
    pub method: String,
    pub config: ScenarioConfig,
}

/// A finished case.
#[derive(Debug, Clone)]
pub struct Run {
    pub case: Case,
    pub outcome: SimulationOutcome,
    pub metrics: MetricsReport,
}

pub fn run_case(case: Case) -> Result<Run> {
    let outcome = run_scenario(&case.config)?;
    let metrics = compute_metrics(&case.config, &outcome);
    Ok(Run {
        case,
        outcome,
        metrics,
    })
}

fn case(label: impl Into<String>, method: impl Into<String>, config: ScenarioConfig) -> Case {
    let label = label.into();
    let mut config = config;
    config.name = label.clone();
    Case {
        label,
        method: method.into(),
        config,
    }
}

fn weak_grid(method: SyncMethod) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(method);
    c.grid.initial = WEAK_GRID;
    c
}

fn reference_rows(first: [f64; 6]) -> Vec<Vec<f64>> {
    let second: Vec<f64> = (0..3)
        .flat_map(|j| [-first[2 * j + 1], first[2 * j]])
        .collect();
    vec![first.to_vec(), second]
}

/// Full reference matrix with the second row rebuilt by d-q symmetry.
pub fn reference_gain(weights: LqrWeights) -> Option<Vec<Vec<f64>>> {
    if weights == LqrWeights::LOW_GAIN {
        Some(reference_rows(REFERENCE_LOW_GAIN))
    } else if weights == LqrWeights::HIGH_GAIN {
        Some(reference_rows(REFERENCE_HIGH_GAIN))
    } else {
        None
    }
}

pub fn tradeoff_cases() -> Vec<Case> {
    TRADEOFF_Q_KF
        .iter()
        .map(|&q| {
            let mut c = weak_grid(SyncMethod::AaekfLqr);
            c.lqr.weights = LqrWeights::LOW_GAIN;
            c.kalman.q_kf = q;
            c.kalman.gain_mode = GainMode::SteadyState;
            c.simulation.duration = 2.0;
            case(format!("q_kf={q:e}"), SyncMethod::AaekfLqr.as_str(), c)
        })
        .collect()
}

pub fn gain_step_cases() -> Vec<Case> {
    let mut out = Vec::new();
    for (name, w) in [
        ("low", LqrWeights::LOW_GAIN),
        ("high", LqrWeights::HIGH_GAIN),
    ] {
        for reference in [true, false] {
            let mut c = weak_grid(SyncMethod::AaekfLqr);
            c.lqr.weights = w;
            if reference {
                c.lqr.convention = UnitConvention::PerUnit;
                c.lqr.gain_override = reference_gain(w);
            }
            c.simulation.i_ref_step_time = GAIN_STEP_TIME;
            c.simulation.duration = GAIN_STEP_TIME + 0.1;
            let source = if reference { "reference" } else { "designed" };
            out.push(case(
                format!("{name}-{source}"),
                SyncMethod::AaekfLqr.as_str(),
                c,
            ));
        }
    }
    out
}

pub fn model_error_cases() -> Vec<Case> {
    MODEL_ERROR_SWEEP
        .iter()
        .map(|&e| {
            let mut c = weak_grid(SyncMethod::AaekfLqr);
            c.grid.model_error = e;
            c.simulation.duration = 1.0;
            case(format!("model_error={e}"), SyncMethod::AaekfLqr.as_str(), c)
        })
        .collect()
}

/// The staircase schedule shared by the five methods.
pub fn staircase_config(method: SyncMethod) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(method);
    c.grid.schedule = STAIRCASE_LEVELS
        .iter()
        .enumerate()
        .map(|(k, &z)| ImpedanceStep {
            time: STAIRCASE_INTERVAL * (k + 1) as f64,
            magnitude: z,
            angle_deg: 70.0,
        })
        .collect();
    c.simulation.duration = STAIRCASE_INTERVAL * (STAIRCASE_LEVELS.len() + 2) as f64;
    c
}

pub fn staircase_cases() -> Vec<Case> {
    SyncMethod::ALL
        .iter()
        .map(|&m| case(m.as_str(), m.as_str(), staircase_config(m)))
        .collect()
}

/// Machine configurations compared in the damping study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MachineCase {
    NoInverter,
    Cpll,
    CviPll,
    MviPll,
    AaekfLqr,
}

impl MachineCase {
    pub const ALL: [MachineCase; 4] = [
        MachineCase::NoInverter,
        MachineCase::CviPll,
        MachineCase::MviPll,
        MachineCase::AaekfLqr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MachineCase::NoInverter => "no-inverter",
            MachineCase::Cpll => "cpll",
            MachineCase::CviPll => "cvi-pll",
            MachineCase::MviPll => "mvi-pll",
            MachineCase::AaekfLqr => "aaekf-lqr",
        }
    }

    fn method(self) -> SyncMethod {
        match self {
            MachineCase::NoInverter | MachineCase::AaekfLqr => SyncMethod::AaekfLqr,
            MachineCase::Cpll => SyncMethod::Cpll,
            MachineCase::CviPll => SyncMethod::CviPll,
            MachineCase::MviPll => SyncMethod::MviPll,
        }
    }
}

pub fn machine_config(f_hz: f64, which: MachineCase) -> ScenarioConfig {
    let mut c = weak_grid(which.method());
    let m = MachineConfig {
        target_frequency_hz: f_hz,
        inverter_connected: which != MachineCase::NoInverter,
        ..MachineConfig::default()
    };
    c.simulation.duration = m.release_time + MACHINE_OBSERVATION;
    c.machine = Some(m);
    c
}

pub fn machine_cases() -> Vec<Case> {
    let mut out = Vec::new();
    for f in MACHINE_FREQUENCIES {
        let mut which = MachineCase::ALL.to_vec();
        if f == 8.0 {
            which.insert(1, MachineCase::Cpll);
        }
        for w in which {
            out.push(case(
                format!("f={f};{}", w.as_str()),
                w.as_str(),
                machine_config(f, w),
            ));
        }
    }
    out
}

pub fn cases(id: ExperimentId) -> Vec<Case> {
    match id {
        ExperimentId::NoiseTradeoff => tradeoff_cases(),
        ExperimentId::GainStep => gain_step_cases(),
        ExperimentId::ModelError => model_error_cases(),
        ExperimentId::Staircase => staircase_cases(),
        ExperimentId::MachineModes => machine_cases(),
        ExperimentId::ReferenceGains | ExperimentId::Aerror => Vec::new(),
    }
}

/// A small CSV table of strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub q_kf: f64,
    pub peak_error: f64,
    /// Time after which `|phase error|` stays below the convergence band.
    pub convergence_time: Option<f64>,
    pub steady_state_error: f64,
}

pub fn tradeoff_summary(runs: &[Run]) -> Vec<TradeoffRow> {
    runs.iter()
        .map(|r| {
            let rec = &r.outcome.records;
            let t: Vec<f64> = rec.iter().map(|x| x.t).collect();
            let e: Vec<f64> = rec.iter().map(|x| x.phase_error).collect();
            TradeoffRow {
                q_kf: r.case.config.kalman.q_kf,
                peak_error: e.iter().fold(0.0, |a: f64, b| a.max(b.abs())),
                convergence_time: analysis::settling_time(&t, &e, 0.0, TRADEOFF_CONVERGENCE_BAND),
                steady_state_error: r.metrics.steady_state_phase_error,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaircaseRow {
    pub method: String,
    pub stability: analysis::Stability,
    pub final_phase_error: f64,
    /// Impedance level at which the inverter voltage starts to clip.
    pub clipping_onset: Option<f64>,
    /// Saturated fraction of samples at each level, initial level first.
    pub saturation_fraction: Vec<f64>,
}

pub fn staircase_summary(runs: &[Run]) -> Vec<StaircaseRow> {
    runs.iter()
        .map(|r| {
            let cfg = &r.case.config;
            let timeline = cfg.impedance_timeline();
            let mut fractions = Vec::with_capacity(timeline.len());
            for (k, (t0, _)) in timeline.iter().enumerate() {
                let t1 = timeline.get(k + 1).map_or(f64::INFINITY, |x| x.0);
                let seg: Vec<bool> = r
                    .outcome
                    .records
                    .iter()
                    .filter(|x| x.t >= *t0 && x.t < t1)
                    .map(|x| x.saturated)
                    .collect();
                let n = seg.len().max(1) as f64;
                fractions.push(seg.iter().filter(|s| **s).count() as f64 / n);
            }
            let onset = fractions
                .iter()
                .position(|&f| f > CLIP_FRACTION)
                .map(|k| timeline[k].1.magnitude());
            StaircaseRow {
                method: r.case.method.clone(),
                stability: r.metrics.stability,
                final_phase_error: r.metrics.steady_state_phase_error,
                clipping_onset: onset,
                saturation_fraction: fractions,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub frequency_hz: f64,
    pub case: String,
    pub decay_time_constant: Option<f64>,
    pub stability: analysis::Stability,
}

pub fn decay_summary(runs: &[Run]) -> Vec<DecayRow> {
    runs.iter()
        .map(|r| DecayRow {
            frequency_hz: r
                .case
                .config
                .machine
                .as_ref()
                .map_or(0.0, |m| m.target_frequency_hz),
            case: r.case.method.clone(),
            decay_time_constant: r.metrics.decay_time_constant,
            stability: r.metrics.stability,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainEntry {
    pub weights: &'static str,
    pub convention: UnitConvention,
    pub index: usize,
    pub designed: f64,
    pub reference: f64,
    pub relative_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainComparison {
    pub entries: Vec<GainEntry>,
    /// Largest d-q symmetry defect over all designs.
    pub symmetry_defect: f64,
    /// Per weight set, the conventions whose dominant entries match.
    pub matches: Vec<(&'static str, Vec<UnitConvention>)>,
}

pub fn gain_comparison(lcl: &LclParams, ts: f64) -> Result<GainComparison> {
    let mut entries = Vec::new();
    let mut symmetry_defect = 0.0_f64;
    let mut matches = Vec::new();
    for (name, w, reference) in [
        ("low", LqrWeights::LOW_GAIN, REFERENCE_LOW_GAIN),
        ("high", LqrWeights::HIGH_GAIN, REFERENCE_HIGH_GAIN),
    ] {
        let mut ok = Vec::new();
        for conv in [UnitConvention::Si, UnitConvention::PerUnit] {
            let d = design_lqr(lcl, w, ts, conv)?;
            symmetry_defect = symmetry_defect.max(gain_symmetry_defect(&d.k));
            let mut all_dominant = true;
            for (j, &p) in reference.iter().enumerate() {
                let k = d.k[(0, j)];
                let dev = (k - p).abs() / p.abs();
                if p.abs() > DOMINANT_ENTRY && dev > GAIN_MATCH_TOLERANCE {
                    all_dominant = false;
                }
                entries.push(GainEntry {
                    weights: name,
                    convention: conv,
                    index: j,
                    designed: k,
                    reference: p,
                    relative_deviation: dev,
                });
            }
            if all_dominant {
                ok.push(conv);
            }
        }
        matches.push((name, ok));
    }
    Ok(GainComparison {
        entries,
        symmetry_defect,
        matches,
    })
}

#[derive(Debug, Clone)]
pub struct AerrorRow {
    pub q_kf: f64,
    pub spectrum: EigenSpectrum,
}

pub fn aerror_table(omega_g: f64, ts: f64) -> Result<Vec<AerrorRow>> {
    let z = GridImpedance::from_polar(WEAK_GRID.magnitude, WEAK_GRID.angle_deg.to_radians());
    TRADEOFF_Q_KF
        .iter()
        .map(|&q| {
            let model = build_kf_model(
                z,
                omega_g,
                ts,
                q,
                nalgebra::Matrix2::identity(),
                KfVariant::Aaekf,
            )?;
            let (k, _) = model.steady_gain()?;
            Ok(AerrorRow {
                q_kf: q,
                spectrum: error_dynamics(&model, &k)?.spectrum,
            })
        })
        .collect()
}

fn convention_name(c: UnitConvention) -> &'static str {
    match c {
        UnitConvention::Si => "si",
        UnitConvention::PerUnit => "per-unit",
    }
}

/// Experiment-specific tables built from finished runs.
pub fn summary_tables(id: ExperimentId, runs: &[Run]) -> Result<Vec<Table>> {
    let defaults = ScenarioConfig::new(SyncMethod::AaekfLqr);
    let mut out = Vec::new();
    match id {
        ExperimentId::NoiseTradeoff => {
            let mut t = Table::new(
                "summary",
                &[
                    "q_kf",
                    "peak_error",
                    "convergence_time",
                    "steady_state_error",
                ],
            );
            for r in tradeoff_summary(runs) {
                t.push(vec![
                    num(r.q_kf),
                    num(r.peak_error),
                    opt_num(r.convergence_time),
                    num(r.steady_state_error),
                ]);
            }
            out.push(t);
        }
        ExperimentId::GainStep => {
            let mut t = Table::new(
                "summary",
                &[
                    "case",
                    "settling_time",
                    "peak_overshoot",
                    "first_saturation",
                ],
            );
            for r in runs {
                t.push(vec![
                    r.case.label.clone(),
                    opt_num(r.metrics.settling_time),
                    num(r.metrics.peak_overshoot),
                    opt_num(r.metrics.first_saturation),
                ]);
            }
            out.push(t);
        }
        ExperimentId::ModelError => {
            let mut t = Table::new(
                "summary",
                &["model_error", "stability", "steady_state_phase_error"],
            );
            for r in runs {
                t.push(vec![
                    num(r.case.config.grid.model_error),
                    r.metrics.stability.as_str().to_string(),
                    num(r.metrics.steady_state_phase_error),
                ]);
            }
            out.push(t);
        }
        ExperimentId::Staircase => {
            let levels: Vec<String> = std::iter::once(defaults.grid.initial.magnitude)
                .chain(STAIRCASE_LEVELS)
                .map(|z| format!("saturated_at_{z}"))
                .collect();
            let mut header = vec!["method", "stability", "final_phase_error", "clipping_onset"];
            header.extend(levels.iter().map(String::as_str));
            let mut t = Table::new("summary", &header);
            for r in staircase_summary(runs) {
                let mut row = vec![
                    r.method,
                    r.stability.as_str().to_string(),
                    num(r.final_phase_error),
                    opt_num(r.clipping_onset),
                ];
                row.extend(r.saturation_fraction.into_iter().map(num));
                t.push(row);
            }
            out.push(t);
        }
        ExperimentId::MachineModes => {
            let mut t = Table::new(
                "decay_constants",
                &["frequency_hz", "case", "decay_time_constant", "stability"],
            );
            for r in decay_summary(runs) {
                t.push(vec![
                    num(r.frequency_hz),
                    r.case,
                    opt_num(r.decay_time_constant),
                    r.stability.as_str().to_string(),
                ]);
            }
            out.push(t);
        }
        ExperimentId::ReferenceGains => {
            let cmp = gain_comparison(&defaults.lcl, defaults.simulation.ts)?;
            let mut t = Table::new(
                "gain_comparison",
                &[
                    "weights",
                    "convention",
                    "index",
                    "designed",
                    "reference",
                    "relative_deviation",
                ],
            );
            for e in &cmp.entries {
                t.push(vec![
                    e.weights.to_string(),
                    convention_name(e.convention).to_string(),
                    e.index.to_string(),
                    num(e.designed),
                    num(e.reference),
                    num(e.relative_deviation),
                ]);
            }
            out.push(t);
            let mut v = Table::new(
                "verdict",
                &["weights", "matching_conventions", "symmetry_defect"],
            );
            for (name, convs) in &cmp.matches {
                let names: Vec<&str> = convs.iter().map(|c| convention_name(*c)).collect();
                v.push(vec![
                    name.to_string(),
                    names.join(" "),
                    num(cmp.symmetry_defect),
                ]);
            }
            out.push(v);
        }
        ExperimentId::Aerror => {
            let mut t = Table::new(
                "aerror",
                &["q_kf", "eigenvalue_re", "eigenvalue_im", "modulus"],
            );
            for row in aerror_table(defaults.lcl.omega_g, defaults.simulation.ts)? {
                for l in row.spectrum.sorted() {
                    t.push(vec![num(row.q_kf), num(l.re), num(l.im), num(l.norm())]);
                }
            }
            out.push(t);
        }
    }
    Ok(out)
}

/// Run every case of an experiment, one after another.
pub fn run_all(id: ExperimentId) -> Result<Vec<Run>> {
    cases(id).into_iter().map(run_case).collect()
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Write traces, the metrics table and the summary tables under `dir`.
pub fn write_bundle(dir: &Path, id: ExperimentId, runs: &[Run]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rows = Vec::with_capacity(runs.len());
    for r in runs {
        io::write_trace_file(
            &dir.join(format!("trace_{}.csv", file_stem(&r.case.label))),
            &r.outcome.records,
        )?;
        rows.push(MetricsRow {
            label: r.case.label.clone(),
            method: r.case.method.clone(),
            report: r.metrics.clone(),
        });
    }
    if !runs.is_empty() {
        io::write_metrics_file(&dir.join("metrics.csv"), &rows)?;
    }
    for t in summary_tables(id, runs)? {
        t.write(&dir.join(format!("{}.csv", t.name)))?;
    }
    Ok(())
}
