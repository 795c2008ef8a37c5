//! Run dispatcher: executes one experiment verb, writes its outputs, and
//! finishes with a checksummed manifest. The manifest is written last so a
//! complete manifest implies a complete run.

use crate::casimir;
use crate::dynamics::{self, StabilityConfig};
use crate::error::{CammError, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::persist;
use crate::scalinglab;
use crate::steadystate::{self, AnsatzState, ScfOptions, SolveOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

/// Experiment verbs exposed by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Steady,
    Scaling,
    Stability,
    Checks,
    Sim,
}

impl Verb {
    pub fn parse(s: &str) -> Result<Verb> {
        match s {
            "steady" => Ok(Verb::Steady),
            "scaling" => Ok(Verb::Scaling),
            "stability" => Ok(Verb::Stability),
            "checks" => Ok(Verb::Checks),
            "sim" => Ok(Verb::Sim),
            _ => Err(CammError::Config(format!("unknown verb `{s}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Verb::Steady => "steady",
            Verb::Scaling => "scaling",
            Verb::Stability => "stability",
            Verb::Checks => "checks",
            Verb::Sim => "sim",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Overrides the config seed when set.
    pub seed: Option<u64>,
    pub allow_out_of_range: bool,
}

/// One checked condition of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssertionRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

/// Summary of a run, written to manifest.json after all other outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub verb: String,
    pub started: String,
    pub finished: String,
    pub seed: Option<u64>,
    pub config_echo: String,
    pub files: Vec<FileEntry>,
    pub assertions: Vec<AssertionRecord>,
    pub all_passed: bool,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

struct RunState {
    out_dir: PathBuf,
    files: Vec<FileEntry>,
    assertions: Vec<AssertionRecord>,
}

impl RunState {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents)?;
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    fn write_state(&mut self, name: &str, state: &AnsatzState) -> Result<()> {
        let path = self.out_dir.join(name);
        persist::store_state(state, &path)?;
        let bytes = fs::read(&path)?;
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.assertions.push(AssertionRecord {
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

fn solve_from_config(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<AnsatzState> {
    let mut sopts = SolveOptions::new(cfg.steady.central_psi);
    sopts.r_cap = cfg.steady.r_cap;
    sopts.n_grid = cfg.steady.n_grid;
    sopts.allow_out_of_range = opts.allow_out_of_range;
    match cfg.steady.mass {
        Some(m) => steadystate::match_mass(&cfg.model, m, &sopts),
        None => steadystate::solve_steady(&cfg.model, &sopts),
    }
}

#[derive(Serialize)]
struct SteadySummary {
    e0: f64,
    central_psi: f64,
    mass: f64,
    r_support: f64,
    compact: bool,
    report: crate::phasespace::FunctionalReport,
    el_sup_on_support: f64,
    el_min_off_support: f64,
    e0_residual: f64,
    virial_residual: f64,
}

fn run_steady(cfg: &ExperimentConfig, opts: &RunOptions, rs: &mut RunState) -> Result<()> {
    let state = solve_from_config(cfg, opts)?;
    let report = state.functional_report()?;
    let (el_sup, el_min) = steadystate::el_residual(&state);
    let e0_res = steadystate::e0_consistency(&state)?;
    let virial = (2.0 * report.e_kin + report.e_pot).abs();
    rs.write_state("profile.dat", &state)?;
    let summary = SteadySummary {
        e0: state.e0(),
        central_psi: state.central_psi(),
        mass: state.mass(),
        r_support: state.r_support(),
        compact: state.is_compact(),
        report: report.clone(),
        el_sup_on_support: el_sup,
        el_min_off_support: el_min,
        e0_residual: e0_res,
        virial_residual: virial,
    };
    rs.write("summary.json", &serde_json::to_string_pretty(&summary).unwrap())?;

    let el_tol = 1e-6 * state.e0().abs().max(1.0);
    rs.check(
        "euler_lagrange_on_support",
        el_sup <= el_tol,
        format!("sup residual {el_sup:.3e}, tolerance {el_tol:.3e}"),
    );
    rs.check(
        "cutoff_sign_off_support",
        el_min >= -1e-10,
        format!("min of E + gamma L - E0 off support: {el_min:.3e}"),
    );
    rs.check(
        "cutoff_energy_consistency",
        e0_res < 1e-6,
        format!("relative residual {e0_res:.3e}"),
    );
    rs.check(
        "virial_identity",
        virial <= 1e-4 * report.e_pot.abs(),
        format!("|2 E_kin + E_pot| = {virial:.3e}"),
    );
    if cfg.steady.use_scf && state.is_compact() {
        let scf_opts = ScfOptions {
            r_max: 1.3 * state.r_support(),
            n_grid: cfg.steady.n_grid,
            max_iter: 400,
            damping: 0.5,
            tol: 1e-9,
            allow_out_of_range: opts.allow_out_of_range,
        };
        let outcome = steadystate::scf_minimize(&cfg.model, state.mass(), &scf_opts)?;
        let mut sup = 0.0f64;
        for &r in state.grid().nodes() {
            if r <= 0.0 {
                continue;
            }
            sup = sup.max((outcome.state.potential_at(r) - state.potential_at(r)).abs());
        }
        rs.check(
            "scf_agrees_with_shooting",
            sup < 1e-6 * state.central_psi(),
            format!("sup potential difference {sup:.3e} after {} iterations", outcome.iterations),
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ScalingSummary {
    alpha: f64,
    c_alpha: f64,
    d_m1: f64,
    d_m2: f64,
    /// Infimum approximations from constructed states (upper bounds).
    d_m_provenance: String,
    r_m: Option<f64>,
    inequality_margin: f64,
    exponent_identity_residual: f64,
    witness_gammas_found: Vec<f64>,
}

fn run_scaling(cfg: &ExperimentConfig, opts: &RunOptions, rs: &mut RunState) -> Result<()> {
    let model = cfg.model;
    let alpha = scalinglab::scaling_exponent_alpha(model.l, model.k3())?;
    let c_alpha = scalinglab::concentration_constant(alpha)?;
    let mut sopts = SolveOptions::new(cfg.steady.central_psi);
    sopts.allow_out_of_range = opts.allow_out_of_range;
    let ineq =
        scalinglab::scaling_inequality_check(&model, cfg.scaling.m1, cfg.scaling.m2, &sopts)?;
    let r_m = if ineq.d_m2 < 0.0 {
        Some(scalinglab::r_m(cfg.scaling.m2, ineq.d_m2, c_alpha)?)
    } else {
        None
    };
    let witnesses =
        scalinglab::negativity_witness(&model, cfg.scaling.m2, &cfg.scaling.gamma_grid)?;

    let mut csv = String::from("gamma,b,d\n");
    for w in &witnesses {
        for (b, d) in &w.sweep {
            writeln!(csv, "{},{},{}", w.gamma, b, d).unwrap();
        }
    }
    rs.write("witness_sweep.csv", &csv)?;
    let summary = ScalingSummary {
        alpha,
        c_alpha,
        d_m1: ineq.d_m1,
        d_m2: ineq.d_m2,
        d_m_provenance: "mass-matched steady states; upper bounds for the infima".into(),
        r_m,
        inequality_margin: ineq.margin,
        exponent_identity_residual: ineq.exponent_identity_residual,
        witness_gammas_found: witnesses
            .iter()
            .filter(|w| w.found())
            .map(|w| w.gamma)
            .collect(),
    };
    rs.write("scaling.json", &serde_json::to_string_pretty(&summary).unwrap())?;

    let margin_detail = if ineq.margin < 0.0 {
        format!(
            "margin {:.3e}; constructed states are not the infima, a small negative margin only reflects that",
            ineq.margin
        )
    } else {
        format!("margin {:.3e}", ineq.margin)
    };
    rs.check(
        "mass_scaling_inequality",
        ineq.margin >= -1e-6,
        margin_detail,
    );
    rs.check(
        "scaling_exponent_identity",
        ineq.exponent_identity_residual < 1e-12,
        format!("residual {:.3e}", ineq.exponent_identity_residual),
    );
    if cfg.scaling.gamma_grid.contains(&0.0) {
        let found0 = witnesses.iter().any(|w| w.gamma == 0.0 && w.found());
        rs.check(
            "negativity_witness_at_gamma_zero",
            found0,
            "rescaled test state with D < 0 at gamma = 0".into(),
        );
    }
    rs.check(
        "steady_d_negative",
        ineq.d_m2 < 0.0,
        format!("D at the larger mass: {:.6e}", ineq.d_m2),
    );
    Ok(())
}

fn run_particles(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    rs: &mut RunState,
    perturbed: bool,
) -> Result<()> {
    let state = solve_from_config(cfg, opts)?;
    if !state.is_compact() {
        return Err(CammError::domain("particle runs need a compact steady state"));
    }
    let s = &cfg.stability;
    let sim = StabilityConfig {
        n_particles: s.n_particles,
        dt: state.t_dyn() / s.steps_per_tdyn as f64,
        n_steps: (s.t_end_dyn * s.steps_per_tdyn as f64).round() as usize,
        cadence: s.cadence,
        seed: opts.seed.unwrap_or(s.seed),
        kind: s.kind,
        amplitude: if perturbed { s.amplitude } else { 0.0 },
        substep_fraction: s.substep_fraction,
    };
    let (series, _) = dynamics::run_stability(&state, &sim)?;
    rs.write("diagnostics.csv", &series.csv())?;

    let first = &series.samples[0];
    let mass_exact = series.samples.iter().all(|d| d.mass == first.mass);
    rs.check(
        "mass_conserved_exactly",
        mass_exact,
        format!("total mass {}", first.mass),
    );
    let l_drift = series
        .samples
        .iter()
        .map(|d| d.l_drift_max)
        .fold(0.0f64, f64::max);
    rs.check(
        "angular_momentum_conserved_exactly",
        l_drift == 0.0,
        format!("max |L - L(0)| = {l_drift}"),
    );
    let e_drift = series
        .samples
        .iter()
        .map(|d| (d.e_tot - first.e_tot).abs())
        .fold(0.0f64, f64::max)
        / first.e_tot.abs();
    rs.check(
        "energy_drift_bounded",
        e_drift < s.energy_tol,
        format!(
            "max relative energy drift {e_drift:.3e}, tolerance {:.1e}",
            s.energy_tol
        ),
    );
    if perturbed {
        let peak = series
            .samples
            .iter()
            .map(|d| d.lyapunov_sum)
            .fold(f64::NEG_INFINITY, f64::max);
        let bound = 5.0 * first.lyapunov_sum.abs().max(1e-12);
        rs.check(
            "distance_surrogate_bounded",
            peak <= bound,
            format!("peak {peak:.3e} against 5x initial {bound:.3e}"),
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ChecksSummary {
    assumptions: casimir::AssumptionReport,
    alpha: f64,
    c_alpha: f64,
    e0_residual: f64,
}

fn run_checks(cfg: &ExperimentConfig, opts: &RunOptions, rs: &mut RunState) -> Result<()> {
    let model = cfg.model;
    let report = casimir::validate_assumptions(&model);
    for (name, check) in [
        ("assumption_q1", &report.q1),
        ("assumption_q2", &report.q2),
        ("assumption_q3", &report.q3),
        ("assumption_q4", &report.q4),
    ] {
        rs.check(
            name,
            check.passed,
            match check.witness {
                Some((x, margin)) => format!("violated near {x:.3e} with margin {margin:.3e}"),
                None => "holds on the sampled range".into(),
            },
        );
    }
    let in_range = report.exponent_range.passed;
    rs.check(
        "exponent_range",
        in_range || opts.allow_out_of_range,
        if in_range {
            "0 < k1, k2 < l + 3/2".into()
        } else {
            "outside 0 < k < l + 3/2 (override active)".into()
        },
    );
    let alpha = scalinglab::scaling_exponent_alpha(model.l, model.k3()).unwrap_or(f64::NAN);
    let c_alpha = if alpha.is_finite() {
        scalinglab::concentration_constant(alpha)?
    } else {
        f64::NAN
    };
    let e0_res = if in_range || opts.allow_out_of_range {
        let state = solve_from_config(cfg, opts)?;
        steadystate::e0_consistency(&state)?
    } else {
        f64::NAN
    };
    if e0_res.is_finite() {
        rs.check(
            "cutoff_energy_consistency",
            e0_res < 1e-6,
            format!("relative residual {e0_res:.3e}"),
        );
    }
    let summary = ChecksSummary {
        assumptions: report,
        alpha,
        c_alpha,
        e0_residual: e0_res,
    };
    rs.write("checks.json", &serde_json::to_string_pretty(&summary).unwrap())?;
    Ok(())
}

/// Runs one experiment verb, writing outputs and finally manifest.json into
/// the output directory. Returns the manifest; `all_passed` reports whether
/// every assertion of the run held.
pub fn run_experiment(
    verb: Verb,
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<RunManifest> {
    fs::create_dir_all(&opts.out_dir)?;
    let started = chrono::Utc::now().to_rfc3339();
    let mut rs = RunState {
        out_dir: opts.out_dir.clone(),
        files: Vec::new(),
        assertions: Vec::new(),
    };
    match verb {
        Verb::Steady => run_steady(cfg, opts, &mut rs)?,
        Verb::Scaling => run_scaling(cfg, opts, &mut rs)?,
        Verb::Stability => run_particles(cfg, opts, &mut rs, true)?,
        Verb::Sim => run_particles(cfg, opts, &mut rs, false)?,
        Verb::Checks => run_checks(cfg, opts, &mut rs)?,
    }
    let all_passed = rs.assertions.iter().all(|a| a.passed);
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        verb: verb.name().to_string(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        seed: opts.seed,
        config_echo: cfg.raw.clone(),
        files: rs.files,
        assertions: rs.assertions,
        all_passed,
    };
    fs::write(
        opts.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;
    use std::path::Path;

    fn opts(dir: &Path) -> RunOptions {
        RunOptions {
            out_dir: dir.to_path_buf(),
            seed: None,
            allow_out_of_range: false,
        }
    }

    #[test]
    fn steady_run_produces_outputs_and_passes() {
        let cfg = parse_config("steady.central_psi = 1.0\nsteady.n_grid = 768\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = run_experiment(Verb::Steady, &cfg, &opts(dir.path())).unwrap();
        assert!(manifest.all_passed, "{:#?}", manifest.assertions);
        assert!(dir.path().join("profile.dat").exists());
        assert!(dir.path().join("summary.json").exists());
        assert!(dir.path().join("manifest.json").exists());
        // manifest checksums match file contents
        for f in &manifest.files {
            let bytes = fs::read(dir.path().join(&f.path)).unwrap();
            assert_eq!(sha256_hex(&bytes), f.sha256, "{}", f.path);
        }
        let loaded = persist::load_state(&dir.path().join("profile.dat")).unwrap();
        assert!(loaded.is_compact());
    }

    #[test]
    fn checks_run_passes_for_admissible_model() {
        let cfg = parse_config("model.k1 = 1.0\nmodel.l = 0.0\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = run_experiment(Verb::Checks, &cfg, &opts(dir.path())).unwrap();
        assert!(manifest.all_passed, "{:#?}", manifest.assertions);
    }

    #[test]
    fn out_of_range_exponent_is_rejected_without_override() {
        // k1 = 2 with l = 0 violates k < l + 3/2
        let cfg = parse_config("model.k1 = 2.0\nmodel.l = 0.0\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(run_experiment(Verb::Steady, &cfg, &opts(dir.path())).is_err());
    }

    #[test]
    fn sim_run_conserves_invariants() {
        let cfg = parse_config(
            "steady.mass = 1.0\nstability.n_particles = 800\nstability.steps_per_tdyn = 600\nstability.t_end_dyn = 0.5\nstability.cadence = 60\nstability.energy_tol = 5e-3\n",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = run_experiment(Verb::Sim, &cfg, &opts(dir.path())).unwrap();
        assert!(manifest.all_passed, "{:#?}", manifest.assertions);
        let csv = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        assert!(csv.starts_with(
            "t,e_kin,e_pot,e_tot,d_surrogate,field_dist,lyapunov_sum,mass,l_drift_max"
        ));
        assert!(csv.lines().count() > 3);
    }
}
