//! Line-oriented experiment configuration: `section.key = value` per line,
//! `#` comments, unknown keys rejected, duplicate keys reported with both
//! line numbers.

use crate::casimir::CasimirModel;
use crate::dynamics::PerturbKind;
use crate::error::{CammError, Result};
use std::collections::HashMap;

/// Steady-state solve settings.
#[derive(Debug, Clone)]
pub struct SteadySection {
    pub central_psi: f64,
    /// When set, the central value is adjusted to hit this total mass.
    pub mass: Option<f64>,
    pub r_cap: Option<f64>,
    pub n_grid: usize,
    /// Cross-check the shooting solution against the fixed-point minimizer.
    pub use_scf: bool,
}

impl Default for SteadySection {
    fn default() -> Self {
        SteadySection {
            central_psi: 1.0,
            mass: None,
            r_cap: None,
            n_grid: 1024,
            use_scf: false,
        }
    }
}

/// Mass-scaling experiment settings.
#[derive(Debug, Clone)]
pub struct ScalingSection {
    pub m1: f64,
    pub m2: f64,
    pub gamma_grid: Vec<f64>,
}

impl Default for ScalingSection {
    fn default() -> Self {
        ScalingSection {
            m1: 0.5,
            m2: 1.0,
            gamma_grid: vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1],
        }
    }
}

/// Particle simulation settings, shared by the `stability` and `sim` verbs.
#[derive(Debug, Clone)]
pub struct StabilitySection {
    pub n_particles: usize,
    /// Steps per dynamical time; dt = t_dyn / steps_per_tdyn.
    pub steps_per_tdyn: usize,
    /// Run length in dynamical times.
    pub t_end_dyn: f64,
    /// Steps between diagnostic samples.
    pub cadence: usize,
    pub seed: u64,
    pub kind: PerturbKind,
    pub amplitude: f64,
    /// Relative energy-drift tolerance asserted after a run.
    pub energy_tol: f64,
    /// Substep flagging threshold; lower values substep more shells.
    pub substep_fraction: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection {
            n_particles: 2000,
            steps_per_tdyn: 400,
            t_end_dyn: 2.0,
            cadence: 50,
            seed: 1,
            kind: PerturbKind::VelocityDilation,
            amplitude: 0.01,
            energy_tol: 1e-4,
            substep_fraction: crate::dynamics::SUBSTEP_FRACTION,
        }
    }
}

/// Parsed experiment configuration with the raw text kept for the manifest.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: CasimirModel,
    pub steady: SteadySection,
    pub scaling: ScalingSection,
    pub stability: StabilitySection,
    pub raw: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: CasimirModel::polytrope(1.0, 0.0),
            steady: SteadySection::default(),
            scaling: ScalingSection::default(),
            stability: StabilitySection::default(),
            raw: String::new(),
        }
    }
}

fn bad(line_no: usize, msg: impl std::fmt::Display) -> CammError {
    CammError::Config(format!("line {line_no}: {msg}"))
}

fn parse_f64(line_no: usize, key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| bad(line_no, format!("{key}: expected a number, got `{v}`")))
}

fn parse_usize(line_no: usize, key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| bad(line_no, format!("{key}: expected a nonnegative integer, got `{v}`")))
}

fn parse_bool(line_no: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(line_no, format!("{key}: expected true/false, got `{v}`"))),
    }
}

/// Parses a config text. Every line is `section.key = value`, blank, or a
/// `#` comment. Unknown keys and duplicate keys are errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig {
        raw: text.to_string(),
        ..ExperimentConfig::default()
    };
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(line_no, "expected `section.key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        if let Some(&first) = seen.get(key) {
            return Err(bad(
                line_no,
                format!("duplicate key `{key}` (first set on line {first})"),
            ));
        }
        seen.insert(key.to_string(), line_no);
        match key {
            "model.c1" => cfg.model.c1 = parse_f64(line_no, key, value)?,
            "model.c2" => cfg.model.c2 = parse_f64(line_no, key, value)?,
            "model.k1" => cfg.model.k1 = parse_f64(line_no, key, value)?,
            "model.k2" => cfg.model.k2 = parse_f64(line_no, key, value)?,
            "model.l" => cfg.model.l = parse_f64(line_no, key, value)?,
            "model.gamma" => cfg.model.gamma = parse_f64(line_no, key, value)?,
            "model.f0_threshold" => cfg.model.f0_threshold = parse_f64(line_no, key, value)?,
            "steady.central_psi" => cfg.steady.central_psi = parse_f64(line_no, key, value)?,
            "steady.mass" => cfg.steady.mass = Some(parse_f64(line_no, key, value)?),
            "steady.r_cap" => cfg.steady.r_cap = Some(parse_f64(line_no, key, value)?),
            "steady.n_grid" => cfg.steady.n_grid = parse_usize(line_no, key, value)?,
            "steady.use_scf" => cfg.steady.use_scf = parse_bool(line_no, key, value)?,
            "scaling.m1" => cfg.scaling.m1 = parse_f64(line_no, key, value)?,
            "scaling.m2" => cfg.scaling.m2 = parse_f64(line_no, key, value)?,
            "scaling.gamma_grid" => {
                let mut grid = Vec::new();
                for part in value.split(',') {
                    grid.push(parse_f64(line_no, key, part.trim())?);
                }
                cfg.scaling.gamma_grid = grid;
            }
            "stability.n_particles" => {
                cfg.stability.n_particles = parse_usize(line_no, key, value)?
            }
            "stability.steps_per_tdyn" => {
                cfg.stability.steps_per_tdyn = parse_usize(line_no, key, value)?
            }
            "stability.t_end_dyn" => cfg.stability.t_end_dyn = parse_f64(line_no, key, value)?,
            "stability.cadence" => cfg.stability.cadence = parse_usize(line_no, key, value)?,
            "stability.seed" => {
                cfg.stability.seed = value
                    .parse::<u64>()
                    .map_err(|_| bad(line_no, format!("{key}: expected an integer seed")))?
            }
            "stability.kind" => {
                cfg.stability.kind = match value {
                    "velocity" => PerturbKind::VelocityDilation,
                    "interior" => PerturbKind::InteriorModulation,
                    _ => {
                        return Err(bad(
                            line_no,
                            format!("{key}: expected `velocity` or `interior`, got `{value}`"),
                        ))
                    }
                }
            }
            "stability.amplitude" => cfg.stability.amplitude = parse_f64(line_no, key, value)?,
            "stability.energy_tol" => cfg.stability.energy_tol = parse_f64(line_no, key, value)?,
            "stability.substep_fraction" => {
                cfg.stability.substep_fraction = parse_f64(line_no, key, value)?
            }
            _ => return Err(bad(line_no, format!("unknown key `{key}`"))),
        }
    }
    cfg.model.check_basic()?;
    Ok(cfg)
}
