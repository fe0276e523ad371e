//! Scenario description and the closed-loop runner.
//!
//! Each control step reads the PCC measurements, advances the
//! synchronizer, transforms the measurements into the estimated frame,
//! runs the current controller, applies the inverter voltage and advances
//! the network and the machine. Impedance steps rebuild the discretized
//! network.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix2x6, Vector6};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, MetricsReport};
use crate::error::{Error, Result};
use crate::frames::{inv_park, park, wrap_angle, AlphaBeta, Angle, Dq};
use crate::kalman_sync::{build_kf_model, GainMode, GridImpedance, KalmanSync, KfVariant};
use crate::lqr::{self, control_step, design_lqr, LclParams, LqrWeights, UnitConvention};
use crate::plant::{
    inertia_for_frequency, machine_step, MachineOperatingPoint, MachineState, Network,
    NetworkParams, PccModel, PiCurrentController, PlantState,
};
use crate::pll_sync::{PllConfig, PllMode, PllSync};

/// Version string expected at the top of every scenario document.
pub const SCHEMA: &str = "gridsync-scenario/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyncMethod {
    Cpll,
    CviPll,
    MviPll,
    Caekf,
    AaekfLqr,
}

impl SyncMethod {
    pub const ALL: [SyncMethod; 5] = [
        SyncMethod::Cpll,
        SyncMethod::CviPll,
        SyncMethod::MviPll,
        SyncMethod::Caekf,
        SyncMethod::AaekfLqr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SyncMethod::Cpll => "cpll",
            SyncMethod::CviPll => "cvi-pll",
            SyncMethod::MviPll => "mvi-pll",
            SyncMethod::Caekf => "caekf",
            SyncMethod::AaekfLqr => "aaekf-lqr",
        }
    }

    /// PLL methods pair with the PI baseline, filter methods with LQR.
    pub fn default_controller(self) -> ControllerKind {
        match self {
            SyncMethod::Cpll | SyncMethod::CviPll | SyncMethod::MviPll => ControllerKind::Pi,
            SyncMethod::Caekf | SyncMethod::AaekfLqr => ControllerKind::Lqr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Lqr,
    Pi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceConfig {
    pub magnitude: f64,
    pub angle_deg: f64,
}

impl ImpedanceConfig {
    pub fn impedance(&self) -> GridImpedance {
        GridImpedance::from_polar(self.magnitude, self.angle_deg.to_radians())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceStep {
    pub time: f64,
    pub magnitude: f64,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub duration: f64,
    pub ts: f64,
    pub seed: u64,
    pub pcc_model: PccModel,
    /// Inverter voltage limit, pu.
    pub v_sat: f64,
    pub i_ref_magnitude: f64,
    pub i_ref_angle_deg: f64,
    /// The current reference is zero before this time, s.
    pub i_ref_step_time: f64,
    pub divergence_limit: f64,
    pub settling_band: f64,
    pub oscillation_threshold: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            duration: 0.5,
            ts: 1e-4,
            seed: 0,
            pcc_model: PccModel::Dynamic,
            v_sat: 2.5,
            i_ref_magnitude: 1.0,
            i_ref_angle_deg: 30.0,
            i_ref_step_time: 0.0,
            divergence_limit: analysis::DIVERGENCE_LIMIT,
            settling_band: analysis::SETTLING_BAND,
            oscillation_threshold: analysis::OSCILLATION_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub v_grid: f64,
    pub initial: ImpedanceConfig,
    pub schedule: Vec<ImpedanceStep>,
    /// Relative error of the impedance given to the synchronizer.
    pub model_error: f64,
    /// Whether the synchronizer learns about scheduled impedance steps.
    pub track_impedance: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            v_grid: 1.0,
            initial: ImpedanceConfig {
                magnitude: 0.3,
                angle_deg: 70.0,
            },
            schedule: Vec::new(),
            model_error: 0.0,
            track_impedance: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    pub q_kf: f64,
    /// Measurement covariance `r_kf·I₂`.
    pub r_kf: f64,
    pub gain_mode: GainMode,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            q_kf: 1e-6,
            r_kf: 1.0,
            gain_mode: GainMode::TimeVarying,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PllSettings {
    pub kp: f64,
    pub ki: f64,
    pub cvi_fraction: f64,
    pub integrator_limit: f64,
}

impl Default for PllSettings {
    fn default() -> Self {
        Self {
            kp: 5.0,
            ki: 5.0,
            cvi_fraction: 0.5,
            integrator_limit: 2.0 * PI * 10.0,
        }
    }
}

/// Where the LQR takes the PCC voltage of its operating point from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatingPointSource {
    /// Estimated grid EMF plus the modelled drop of the reference current.
    /// PLL synchronizers have no EMF estimate and fall back to `measured`.
    #[default]
    Model,
    /// The PCC voltage measured at each step.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrConfig {
    pub weights: LqrWeights,
    pub convention: UnitConvention,
    pub operating_point: OperatingPointSource,
    /// Add the equilibrium input to the state feedback.
    pub feedforward: bool,
    /// Use this 2×6 gain, in the configured convention, instead of designing one.
    pub gain_override: Option<Vec<Vec<f64>>>,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self {
            weights: LqrWeights::HIGH_GAIN,
            convention: UnitConvention::Si,
            operating_point: OperatingPointSource::Model,
            feedforward: true,
            gain_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiConfig {
    pub bandwidth_hz: f64,
}

impl Default for PiConfig {
    fn default() -> Self {
        Self {
            bandwidth_hz: 500.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub v_std: f64,
    pub i_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachineConfig {
    pub target_frequency_hz: f64,
    pub emf: f64,
    /// Tie inductance, henries.
    pub l_sync: f64,
    /// Stator resistance, pu.
    pub r_stator: f64,
    /// PCC node capacitance, farads.
    pub c_node: f64,
    /// Load angle the machine is held at before release.
    pub delta0_deg: f64,
    /// Kick added to the load angle at release.
    pub perturbation_deg: f64,
    pub release_time: f64,
    pub inverter_connected: bool,
    /// Explicit inertia, s. Derived from the target frequency when absent.
    pub inertia: Option<f64>,
    /// Mechanical damping, pu.
    pub damping: f64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            target_frequency_hz: 8.0,
            emf: 1.0,
            l_sync: 300e-6,
            r_stator: 0.029,
            c_node: 1e-6,
            delta0_deg: 20.0,
            perturbation_deg: 5.0,
            release_time: 0.3,
            inverter_connected: true,
            inertia: None,
            damping: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Vec<SweepAxis>,
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,
    #[serde(default)]
    pub name: String,
    pub method: SyncMethod,
    #[serde(default)]
    pub controller: Option<ControllerKind>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub kalman: KalmanConfig,
    #[serde(default)]
    pub pll: PllSettings,
    #[serde(default)]
    pub lqr: LqrConfig,
    #[serde(default)]
    pub pi: PiConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub lcl: LclParams,
    #[serde(default)]
    pub machine: Option<MachineConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, "must be positive"))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, "must be non-negative"))
    }
}

impl ScenarioConfig {
    pub fn new(method: SyncMethod) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            name: String::new(),
            method,
            controller: None,
            simulation: SimulationConfig::default(),
            grid: GridConfig::default(),
            kalman: KalmanConfig::default(),
            pll: PllSettings::default(),
            lqr: LqrConfig::default(),
            pi: PiConfig::default(),
            noise: NoiseConfig::default(),
            lcl: LclParams::default(),
            machine: None,
            sweep: None,
        }
    }

    pub fn controller(&self) -> ControllerKind {
        self.controller.unwrap_or(self.method.default_controller())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::config(
                "schema",
                format!("expected \"{SCHEMA}\", found \"{}\"", self.schema),
            ));
        }
        let s = &self.simulation;
        positive("simulation.duration", s.duration)?;
        positive("simulation.ts", s.ts)?;
        if s.duration < s.ts {
            return Err(Error::config(
                "simulation.duration",
                "shorter than one sample",
            ));
        }
        positive("simulation.v_sat", s.v_sat)?;
        non_negative("simulation.i_ref_magnitude", s.i_ref_magnitude)?;
        positive("simulation.divergence_limit", s.divergence_limit)?;
        positive("simulation.settling_band", s.settling_band)?;
        non_negative("simulation.i_ref_step_time", s.i_ref_step_time)?;
        if s.i_ref_step_time >= s.duration {
            return Err(Error::config(
                "simulation.i_ref_step_time",
                "must be before the end of the run",
            ));
        }
        positive("simulation.oscillation_threshold", s.oscillation_threshold)?;
        if !s.i_ref_angle_deg.is_finite() {
            return Err(Error::config(
                "simulation.i_ref_angle_deg",
                "must be finite",
            ));
        }

        let g = &self.grid;
        positive("grid.v_grid", g.v_grid)?;
        non_negative("grid.initial.magnitude", g.initial.magnitude)?;
        let mut last = 0.0;
        for (k, st) in g.schedule.iter().enumerate() {
            non_negative(&format!("grid.schedule[{k}].time"), st.time)?;
            non_negative(&format!("grid.schedule[{k}].magnitude"), st.magnitude)?;
            if st.time < last {
                return Err(Error::config(
                    format!("grid.schedule[{k}].time"),
                    "schedule times must be nondecreasing",
                ));
            }
            last = st.time;
        }
        for (k, z) in self.impedance_timeline().iter().enumerate() {
            if z.1.resistance < -1e-12 || z.1.reactance < -1e-12 {
                return Err(Error::config(
                    format!("grid.schedule[{k}].angle_deg"),
                    "must lie in [0, 90]",
                ));
            }
        }
        if !(g.model_error.is_finite() && g.model_error > -1.0) {
            return Err(Error::config("grid.model_error", "must be greater than -1"));
        }

        positive("kalman.q_kf", self.kalman.q_kf)?;
        positive("kalman.r_kf", self.kalman.r_kf)?;
        non_negative("pll.kp", self.pll.kp)?;
        non_negative("pll.ki", self.pll.ki)?;
        non_negative("pll.integrator_limit", self.pll.integrator_limit)?;
        if !(0.0..=1.0).contains(&self.pll.cvi_fraction) {
            return Err(Error::config("pll.cvi_fraction", "must lie in [0, 1]"));
        }
        let w = &self.lqr.weights;
        non_negative("lqr.weights.q1", w.q1)?;
        non_negative("lqr.weights.q2", w.q2)?;
        non_negative("lqr.weights.q3", w.q3)?;
        positive("lqr.weights.r", w.r)?;
        if let Some(k) = &self.lqr.gain_override {
            if k.len() != 2
                || k.iter()
                    .any(|row| row.len() != 6 || row.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::config(
                    "lqr.gain_override",
                    "must be 2 rows of 6 finite numbers",
                ));
            }
        }
        positive("pi.bandwidth_hz", self.pi.bandwidth_hz)?;
        non_negative("noise.v_std", self.noise.v_std)?;
        non_negative("noise.i_std", self.noise.i_std)?;
        self.lcl.validate()?;
        if let Some(m) = &self.machine {
            positive("machine.target_frequency_hz", m.target_frequency_hz)?;
            positive("machine.emf", m.emf)?;
            positive("machine.l_sync", m.l_sync)?;
            positive("machine.c_node", m.c_node)?;
            non_negative("machine.r_stator", m.r_stator)?;
            non_negative("machine.release_time", m.release_time)?;
            non_negative("machine.damping", m.damping)?;
            if m.release_time >= s.duration {
                return Err(Error::config(
                    "machine.release_time",
                    "must be before the end of the run",
                ));
            }
            if let Some(h) = m.inertia {
                positive("machine.inertia", h)?;
            }
            if g.initial.impedance().reactance <= 0.0
                || g.schedule.iter().any(|st| st.magnitude == 0.0)
            {
                return Err(Error::config(
                    "grid.initial",
                    "needs positive reactance when a machine is attached",
                ));
            }
        }
        Ok(())
    }

    /// Impedance in force from each switching time on, starting at zero.
    pub fn impedance_timeline(&self) -> Vec<(f64, GridImpedance)> {
        let mut out = vec![(0.0, self.grid.initial.impedance())];
        for st in &self.grid.schedule {
            out.push((
                st.time,
                GridImpedance::from_polar(st.magnitude, st.angle_deg.to_radians()),
            ));
        }
        out
    }

    pub fn i_ref(&self) -> Dq {
        Dq::from_polar(
            self.simulation.i_ref_magnitude,
            self.simulation.i_ref_angle_deg.to_radians(),
        )
    }

    /// Gain used by the LQR controller, per unit.
    pub fn lqr_gain(&self) -> Result<Matrix2x6<f64>> {
        let conv = self.lqr.convention;
        match &self.lqr.gain_override {
            Some(rows) => {
                let k = crate::numerics::RealMatrix::from_fn(2, 6, |i, j| rows[i][j]);
                Ok(lqr::gain_to_per_unit(&k, &self.lcl, conv))
            }
            None => Ok(design_lqr(&self.lcl, self.lqr.weights, self.simulation.ts, conv)?.k_pu),
        }
    }

    /// Machine state at the operating point with the derived inertia and
    /// damping. The load angle is measured from the grid EMF.
    pub fn machine_seed(&self) -> Result<Option<MachineState>> {
        let Some(m) = &self.machine else {
            return Ok(None);
        };
        let omega_s = self.lcl.omega_g;
        let x_sync = omega_s * m.l_sync / self.lcl.z_base();
        let delta0 = m.delta0_deg.to_radians();
        let op = MachineOperatingPoint {
            emf: m.emf,
            x_sync,
            r_sync: m.r_stator,
            grid: self.grid.initial.impedance(),
            v_grid: self.grid.v_grid,
            delta: delta0,
            injection: Complex64::new(0.0, 0.0),
        };
        let k_s = op.synchronizing_coefficient();
        let inertia = match m.inertia {
            Some(h) => h,
            None => inertia_for_frequency(m.target_frequency_hz, k_s, omega_s)?,
        };
        let damping = m.damping;
        let state = MachineState {
            delta: Angle::new(delta0),
            omega_m: omega_s,
            inertia,
            damping,
            emf: m.emf,
            x_sync,
            p_mech: op.electrical_power(delta0),
            omega_s,
        };
        state.validate()?;
        Ok(Some(state))
    }
}

/// One row of simulation output. Quantities in d-q use the estimated
/// angle.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub v_pcc_alpha: f64,
    pub v_pcc_beta: f64,
    pub v_pcc_d: f64,
    pub v_pcc_q: f64,
    pub theta_true: f64,
    pub theta_hat: f64,
    pub phase_error: f64,
    pub i_inv_d: f64,
    pub i_inv_q: f64,
    pub i_pcc_d: f64,
    pub i_pcc_q: f64,
    pub v_c_d: f64,
    pub v_c_q: f64,
    pub u_d: f64,
    pub u_q: f64,
    pub saturated: bool,
    pub delta: Option<f64>,
    pub omega_m: Option<f64>,
    pub z_active: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    pub records: Vec<TraceRecord>,
    pub diverged: bool,
    pub max_state: f64,
    pub release_time: Option<f64>,
}

enum Synchronizer {
    Pll(PllSync),
    Kalman(Box<KalmanSync>),
}

impl Synchronizer {
    fn build(cfg: &ScenarioConfig, z_model: GridImpedance) -> Result<Self> {
        let w = cfg.lcl.omega_g;
        let ts = cfg.simulation.ts;
        let pll = |mode: PllMode| {
            let mut p = PllConfig::new(mode, z_model, w);
            p.kp = cfg.pll.kp;
            p.ki = cfg.pll.ki;
            p.integrator_limit = cfg.pll.integrator_limit;
            if mode == PllMode::Cvi {
                p.compensation_fraction = cfg.pll.cvi_fraction;
            }
            Synchronizer::Pll(PllSync::new(p, Angle::ZERO, ts))
        };
        let kf = |variant: KfVariant| -> Result<Self> {
            let model = build_kf_model(
                z_model,
                w,
                ts,
                cfg.kalman.q_kf,
                Matrix2::identity() * cfg.kalman.r_kf,
                variant,
            )?;
            Ok(Synchronizer::Kalman(Box::new(KalmanSync::new(
                model,
                cfg.kalman.gain_mode,
            )?)))
        };
        match cfg.method {
            SyncMethod::Cpll => Ok(pll(PllMode::Cpll)),
            SyncMethod::CviPll => Ok(pll(PllMode::Cvi)),
            SyncMethod::MviPll => Ok(pll(PllMode::Mvi)),
            SyncMethod::Caekf => kf(KfVariant::Caekf),
            SyncMethod::AaekfLqr => kf(KfVariant::Aaekf),
        }
    }

    fn step(&mut self, v: AlphaBeta, i: AlphaBeta) -> Result<Angle> {
        match self {
            Synchronizer::Pll(p) => Ok(p.step(v, i)),
            Synchronizer::Kalman(k) => k.step(v, i),
        }
    }

    /// Modelled PCC voltage for a current `i` in the estimated frame.
    fn model_pcc_voltage(&self, i: Dq) -> Option<Dq> {
        match self {
            Synchronizer::Pll(_) => None,
            Synchronizer::Kalman(k) => {
                let dd = k.model().dd;
                let emf = k.state().x_hat.norm();
                Some(Dq::new(
                    emf + dd[(0, 0)] * i.d + dd[(0, 1)] * i.q,
                    dd[(1, 0)] * i.d + dd[(1, 1)] * i.q,
                ))
            }
        }
    }

    fn set_impedance(&mut self, z: GridImpedance) {
        match self {
            Synchronizer::Pll(p) => p.set_impedance(z),
            Synchronizer::Kalman(k) => k.set_impedance(z),
        }
    }
}

enum Controller {
    Lqr {
        k: Matrix2x6<f64>,
        feedforward: bool,
    },
    Pi(PiCurrentController),
}

struct Noise {
    rng: ChaCha8Rng,
    v: Option<Normal<f64>>,
    i: Option<Normal<f64>>,
}

impl Noise {
    fn new(cfg: &ScenarioConfig) -> Self {
        let dist = |s: f64| (s > 0.0).then(|| Normal::new(0.0, s).expect("validated deviation"));
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.simulation.seed),
            v: dist(cfg.noise.v_std),
            i: dist(cfg.noise.i_std),
        }
    }

    fn add(&mut self, x: AlphaBeta, voltage: bool) -> AlphaBeta {
        let d = if voltage { self.v } else { self.i };
        match d {
            Some(d) => AlphaBeta::new(
                x.alpha + d.sample(&mut self.rng),
                x.beta + d.sample(&mut self.rng),
            ),
            None => x,
        }
    }
}

/// Samples of the machine electrical power over the last cycle before
/// release, used to set the mechanical power.
struct Warmup {
    release_step: usize,
    window: usize,
    sum: f64,
    count: usize,
}

/// Run one scenario to completion or divergence.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimulationOutcome> {
    cfg.validate()?;
    let sim = &cfg.simulation;
    let ts = sim.ts;
    let steps = (sim.duration / ts).round() as usize;
    let omega_g = cfg.lcl.omega_g;

    let mut params = NetworkParams::from_lcl(&cfg.lcl, sim.pcc_model);
    let machine_seed = cfg.machine_seed()?;
    if let (Some(m), Some(_)) = (&cfg.machine, &machine_seed) {
        params = params.with_machine(&cfg.lcl, m.l_sync, m.r_stator, m.c_node);
        params.inverter_connected = m.inverter_connected;
    }
    let timeline = cfg.impedance_timeline();
    let model_scale = 1.0 + cfg.grid.model_error;
    let mut networks: Vec<Option<Network>> = vec![None; timeline.len()];
    let mut network_for = |idx: usize| -> Result<Network> {
        if networks[idx].is_none() {
            networks[idx] = Some(Network::new(params, timeline[idx].1, cfg.grid.v_grid, ts)?);
        }
        Ok(networks[idx].clone().expect("just built"))
    };
    let active_index = |t: f64| {
        timeline
            .iter()
            .rposition(|(t0, _)| *t0 <= t + 0.5 * ts)
            .unwrap_or(0)
    };

    let mut z_idx = active_index(0.0);
    let mut net = network_for(z_idx)?;
    let mut template = PlantState::zero(&params);
    template.machine = machine_seed;
    let (mut state, _) = net.idle_steady_state(&template)?;

    let mut sync = Synchronizer::build(cfg, timeline[z_idx].1.scaled(model_scale))?;
    let mut controller = match cfg.controller() {
        ControllerKind::Lqr => Controller::Lqr {
            k: cfg.lqr_gain()?,
            feedforward: cfg.lqr.feedforward,
        },
        ControllerKind::Pi => Controller::Pi(PiCurrentController::tuned(
            &params,
            cfg.pi.bandwidth_hz,
            sim.v_sat,
        )),
    };
    let mut noise = Noise::new(cfg);
    let i_ref_final = cfg.i_ref();
    let step_k = (sim.i_ref_step_time / ts).round() as usize;

    let mut warmup = cfg.machine.as_ref().map(|m| Warmup {
        release_step: (m.release_time / ts).round() as usize,
        window: ((2.0 * PI / omega_g) / ts).round().max(1.0) as usize,
        sum: 0.0,
        count: 0,
    });
    let perturbation = cfg
        .machine
        .as_ref()
        .map_or(0.0, |m| m.perturbation_deg.to_radians());

    let mut records = Vec::with_capacity(steps);
    let mut diverged = false;
    let mut max_state = state.max_abs();

    for k in 0..steps {
        let t = k as f64 * ts;
        let i_ref = if k >= step_k {
            i_ref_final
        } else {
            Dq::new(0.0, 0.0)
        };
        let idx = active_index(t);
        if idx != z_idx {
            z_idx = idx;
            net = network_for(idx)?;
            if cfg.grid.track_impedance {
                sync.set_impedance(timeline[idx].1.scaled(model_scale));
            }
        }

        if let (Some(w), Some(m)) = (warmup.as_mut(), state.machine.as_mut()) {
            if k == w.release_step {
                if w.count > 0 {
                    m.p_mech = w.sum / w.count as f64;
                }
                m.delta = wrap_angle(m.delta.radians() + perturbation);
            }
        }

        let v_pcc = net.pcc_voltage(&state);
        let v_meas = noise.add(v_pcc, true);
        let i_pcc_meas = noise.add(state.i_pcc, false);
        let i_line_meas = match state.i_grid {
            Some(i) => noise.add(i, false),
            None => i_pcc_meas,
        };
        let i_inv_meas = noise.add(state.i_inv, false);
        let v_c_meas = noise.add(state.v_c, true);

        let theta_hat = sync.step(v_meas, i_line_meas)?;
        let v_dq = park(v_meas, theta_hat);
        let i_inv_dq = park(i_inv_meas, theta_hat);
        let i_pcc_dq = park(i_pcc_meas, theta_hat);
        let v_c_dq = park(v_c_meas, theta_hat);

        let out = match &mut controller {
            Controller::Lqr { k, feedforward } => {
                let x = Vector6::new(
                    i_inv_dq.d, i_inv_dq.q, i_pcc_dq.d, i_pcc_dq.q, v_c_dq.d, v_c_dq.q,
                );
                let v_op = match cfg.lqr.operating_point {
                    OperatingPointSource::Model => sync.model_pcc_voltage(i_ref).unwrap_or(v_dq),
                    OperatingPointSource::Measured => v_dq,
                };
                let eq = lqr::equilibrium(&cfg.lcl, i_ref, v_op)?;
                control_step(k, &x, &eq, sim.v_sat, *feedforward)
            }
            Controller::Pi(pi) => pi.step(i_ref, i_inv_dq, v_dq, ts),
        };
        let v_inv = inv_park(out.u, theta_hat);

        let est_frame = |v: AlphaBeta| park(v, theta_hat);
        let vd = est_frame(v_pcc);
        let iinv = est_frame(state.i_inv);
        let ipcc = est_frame(state.i_pcc);
        let vc = est_frame(state.v_c);
        let mut record = TraceRecord {
            t,
            v_pcc_alpha: v_pcc.alpha,
            v_pcc_beta: v_pcc.beta,
            v_pcc_d: vd.d,
            v_pcc_q: vd.q,
            theta_true: state.grid_phase.radians(),
            theta_hat: theta_hat.radians(),
            phase_error: theta_hat.diff(state.grid_phase).radians(),
            i_inv_d: iinv.d,
            i_inv_q: iinv.q,
            i_pcc_d: ipcc.d,
            i_pcc_q: ipcc.q,
            v_c_d: vc.d,
            v_c_q: vc.q,
            u_d: out.u.d,
            u_q: out.u.q,
            saturated: out.saturated,
            delta: state.machine.map(|m| m.delta.radians()),
            omega_m: state.machine.map(|m| m.omega_m),
            z_active: timeline[z_idx].1.magnitude(),
            diverged: false,
        };

        let mut next = net.step(&state, v_inv);
        if let Some(m) = &state.machine {
            let v_sync_frame = park(v_pcc, state.grid_phase);
            let w = warmup.as_mut().expect("machine implies warmup");
            if k < w.release_step {
                if k + w.window >= w.release_step {
                    w.sum += m.electrical_power(m.delta.radians(), v_sync_frame);
                    w.count += 1;
                }
            } else {
                next.machine = Some(machine_step(m, v_sync_frame, ts).0);
            }
        }

        let mag = next.max_abs();
        max_state = max_state.max(mag);
        if mag.is_nan() || mag > sim.divergence_limit {
            record.diverged = true;
            records.push(record);
            diverged = true;
            break;
        }
        records.push(record);
        state = next;
    }

    Ok(SimulationOutcome {
        records,
        diverged,
        max_state,
        release_time: cfg.machine.as_ref().map(|m| m.release_time),
    })
}

/// Summarize a run.
pub fn compute_metrics(cfg: &ScenarioConfig, out: &SimulationOutcome) -> MetricsReport {
    let rec = &out.records;
    let t: Vec<f64> = rec.iter().map(|r| r.t).collect();
    let err: Vec<f64> = rec.iter().map(|r| r.phase_error).collect();
    let vd: Vec<f64> = rec.iter().map(|r| r.v_pcc_d).collect();
    let tail_start = ((1.0 - analysis::FINAL_WINDOW) * rec.len() as f64).floor() as usize;
    let tail = |x: &[f64]| -> Vec<f64> { x[tail_start.min(x.len().saturating_sub(1))..].to_vec() };
    let from =
        rec.partition_point(|r| r.t < cfg.simulation.i_ref_step_time - 0.5 * cfg.simulation.ts);
    let target = if from >= vd.len() {
        0.0
    } else {
        let post = &vd[from..];
        let k0 = ((1.0 - analysis::FINAL_WINDOW) * post.len() as f64).floor() as usize;
        let tv = &post[k0.min(post.len() - 1)..];
        tv.iter().sum::<f64>() / tv.len() as f64
    };
    let stability = analysis::stability_classify(
        &err,
        out.max_state,
        out.diverged,
        cfg.simulation.oscillation_threshold,
    );
    let settling_time = if out.diverged || from >= vd.len() {
        None
    } else {
        analysis::settling_time(
            &t[from..],
            &vd[from..],
            target,
            cfg.simulation.settling_band,
        )
    };
    let decay_time_constant = out.release_time.and_then(|t0| {
        let (tt, dd): (Vec<f64>, Vec<f64>) = rec
            .iter()
            .filter(|r| r.t >= t0)
            .filter_map(|r| r.delta.map(|d| (r.t, d)))
            .unzip();
        analysis::decay_time_constant(&tt, &dd).ok().flatten()
    });
    MetricsReport {
        steady_state_phase_error: analysis::final_window_mean_abs(&err),
        final_max_phase_error: tail(&err).iter().fold(0.0, |a: f64, b| a.max(b.abs())),
        settling_time,
        decay_time_constant,
        stability,
        peak_overshoot: vd[from.min(vd.len())..]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            - target,
        first_saturation: rec.iter().find(|r| r.saturated).map(|r| r.t),
        duration: t.last().copied().unwrap_or(0.0),
    }
}
