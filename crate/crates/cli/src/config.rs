//! Experiment configuration: one TOML file drives every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twospeed::dp::{GridSpec, SolverOptions, TerminationSpec};
use twospeed::model::{lead_to_transmission, ActuatorParams, ControlInput, CostKind, CostWeights, Mode, State};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub actuator: ActuatorConfig,
    pub cost: CostConfig,
    pub grid: GridConfig,
    pub termination: TerminationSpec<f64>,
    #[serde(default)]
    pub solver: SolverOptions<f64>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Physical constants. Same fields as the core parameter set, except that the
/// screw is given by its lead (m per turn).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorConfig {
    pub m_o: f64,
    pub b_o: f64,
    pub j_1: f64,
    pub j_2: f64,
    pub b_1: f64,
    pub b_2: f64,
    pub r_1: f64,
    pub r_2: f64,
    pub lead: f64,
    pub u1_max: f64,
    pub v_gate: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl ActuatorConfig {
    pub fn params(&self) -> ActuatorParams<f64> {
        ActuatorParams {
            m_o: self.m_o,
            b_o: self.b_o,
            j_1: self.j_1,
            j_2: self.j_2,
            b_1: self.b_1,
            b_2: self.b_2,
            r_1: self.r_1,
            r_2: self.r_2,
            l_o: lead_to_transmission(self.lead),
            u1_max: self.u1_max,
            v_gate: self.v_gate,
            x_min: self.x_min,
            x_max: self.x_max,
            v_min: self.v_min,
            v_max: self.v_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostName {
    MinTime,
    Quadratic,
    MinEnergy,
}

impl From<CostName> for CostKind {
    fn from(c: CostName) -> Self {
        match c {
            CostName::MinTime => CostKind::MinTime,
            CostName::Quadratic => CostKind::Quadratic,
            CostName::MinEnergy => CostKind::MinEnergy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub kind: CostName,
    /// Quadratic weights on x², v² and u1². Used by the quadratic kind and by
    /// `fit`/`export-figures`, which always need a quadratic solve.
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl CostConfig {
    pub fn weights(&self, kind: CostKind) -> CostWeights<f64> {
        match kind {
            CostKind::Quadratic => CostWeights::quadratic(self.w1, self.w2, self.w3),
            other => CostWeights::for_kind(other),
        }
    }

    pub fn kind(&self) -> CostKind {
        self.kind.into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_x: usize,
    pub n_v: usize,
    pub n_u1: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Zone boundary speed (m/s); defaults to the actuator's mode gate.
    pub threshold: Option<f64>,
}


/// Batch of closed-loop runs used by `verify`. Lattice points from which
/// even full braking leaves the domain are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Lattice of start states: `n_x` positions by `n_v` speeds.
    pub n_x: usize,
    pub n_v: usize,
    /// Half-extents of the lattice (m, m/s), centred on the origin.
    pub x_extent: f64,
    pub v_extent: f64,
    pub t_final: f64,
    /// Allowed energy rise within a segment, relative to its start.
    pub tolerance: f64,
    /// Final state must be within this fraction of the start's distance.
    pub final_ratio: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n_x: 15,
            n_v: 15,
            x_extent: 0.14,
            v_extent: 0.45,
            t_final: 20.0,
            tolerance: 1e-3,
            final_ratio: 0.01,
        }
    }
}

impl VerifyConfig {
    pub fn starts(&self) -> Vec<State<f64>> {
        let lerp = |e: f64, k: usize, n: usize| if n < 2 { 0.0 } else { -e + 2.0 * e * k as f64 / (n - 1) as f64 };
        let mut out = Vec::with_capacity(self.n_x * self.n_v);
        for j in 0..self.n_v {
            for i in 0..self.n_x {
                out.push(State::new(lerp(self.x_extent, i, self.n_x), lerp(self.v_extent, j, self.n_v)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceName {
    Law,
    Tabular,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub x: f64,
    pub v: f64,
    pub source: SourceName,
    /// Torque and mode for a constant source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<u8>,
}

impl Scenario {
    pub fn start(&self) -> State<f64> {
        State::new(self.x, self.v)
    }

    pub fn constant_input(&self) -> Result<ControlInput<f64>, CliError> {
        let u1 = self
            .u1
            .ok_or_else(|| CliError::Config(format!("scenario {}: constant source needs u1", self.name)))?;
        let mode = Mode::from_index(self.mode.unwrap_or(1) as i64)
            .map_err(|e| CliError::Config(format!("scenario {}: {e}", self.name)))?;
        Ok(ControlInput::new(u1, mode))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub dt_control: f64,
    pub substeps: usize,
    pub t_final: f64,
    /// Arrow-field lattice size per axis.
    pub field_n: usize,
    pub scenarios: Vec<Scenario>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { dt_control: 0.02, substeps: 10, t_final: 20.0, field_n: 41, scenarios: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(config_err)
    }

    pub fn params(&self) -> ActuatorParams<f64> {
        self.actuator.params()
    }

    pub fn grid(&self) -> Result<GridSpec<f64>, CliError> {
        GridSpec::new(&self.params(), self.grid.n_x, self.grid.n_v, self.grid.n_u1, self.grid.dt).map_err(config_err)
    }

    pub fn threshold(&self) -> f64 {
        self.fit.threshold.unwrap_or(self.actuator.v_gate)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let params = self.params();
        params.validate().map_err(config_err)?;
        if !(self.actuator.lead > 0.0 && self.actuator.lead.is_finite()) {
            return Err(CliError::Config("actuator.lead must be positive".into()));
        }
        self.cost.weights(CostKind::Quadratic).validate().map_err(config_err)?;
        let grid = self.grid()?;
        self.termination.validate(&grid).map_err(config_err)?;
        self.solver.validate().map_err(config_err)?;
        let th = self.threshold();
        if !(th > 0.0 && th <= self.actuator.v_gate) {
            return Err(CliError::Config(format!(
                "fit.threshold must be in (0, v_gate = {}], got {th}",
                self.actuator.v_gate
            )));
        }
        let v = &self.verify;
        if v.n_x * v.n_v == 0 || !(v.t_final > 0.0) || !(v.tolerance >= 0.0) || !(v.final_ratio > 0.0) {
            return Err(CliError::Config("verify: need n_x, n_v >= 1 and positive t_final, final_ratio".into()));
        }
        if !(v.x_extent >= 0.0 && v.x_extent <= self.actuator.x_max.min(-self.actuator.x_min))
            || !(v.v_extent >= 0.0 && v.v_extent <= self.actuator.v_max.min(-self.actuator.v_min))
        {
            return Err(CliError::Config("verify: start lattice exceeds the state bounds".into()));
        }
        let s = &self.simulation;
        if !(s.dt_control > 0.0 && s.t_final > 0.0) || s.substeps == 0 || s.field_n < 2 {
            return Err(CliError::Config(
                "simulation: need positive dt_control and t_final, substeps >= 1, field_n >= 2".into(),
            ));
        }
        for sc in &s.scenarios {
            if !params.in_bounds(&sc.start()) {
                return Err(CliError::Config(format!("scenario {} starts outside the state bounds", sc.name)));
            }
            if sc.source == SourceName::Constant {
                let c = sc.constant_input()?;
                params.check_torque(c.u1).map_err(config_err)?;
            }
            if sc.name.is_empty() || !sc.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(CliError::Config(format!(
                    "scenario name {:?} must be non-empty ASCII letters, digits, '-' or '_'",
                    sc.name
                )));
            }
        }
        Ok(())
    }

    pub fn out_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        override_dir.map(Path::to_path_buf).unwrap_or_else(|| self.output.dir.clone())
    }
}

/// The shipped paper-default configuration.
pub const PAPER_DEFAULT: &str = include_str!("../../../configs/paper-default.toml");
