//! End-to-end acceptance suite: ten numbered criteria covering the steady
//! state solver, the functional inequalities, the scaling laws and the shell
//! simulator. Each criterion prints one PASS/FAIL line; the test fails if
//! any criterion does.

use camm_vp::casimir::CasimirModel;
use camm_vp::dynamics::{
    self, run_stability, sample_state, PerturbKind, StabilityConfig,
};
use camm_vp::phasespace::{self, GridDensity};
use camm_vp::radialfield::{self, RadialGrid, SpatialDensity};
use camm_vp::scalinglab;
use camm_vp::steadystate::{self, AnsatzState, SolveOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::time::Instant;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

fn err_str<T>(r: camm_vp::error::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Plummer oracle: k = 7/2, l = 0 solves the Emden-5 equation whose
/// potential is -M_inf (a^2 + r^2)^{-1/2}.
fn c1_plummer() -> Result<String, String> {
    let t0 = Instant::now();
    let model = CasimirModel::polytrope(3.5, 0.0);
    // Emden coefficient from the independent velocity quadrature
    let c = steadystate::rho_velocity_oracle(&model, 1.0, 1.0);
    let a = (3.0 / (4.0 * PI * c)).sqrt();
    let m_inf = a; // psi0 = 1
    let mut opts = SolveOptions::new(1.0);
    opts.allow_out_of_range = true;
    opts.r_cap = Some(400.0 * a);
    opts.n_grid = 2048;
    let s = err_str(steadystate::solve_steady(&model, &opts))?;
    ensure!(!s.is_compact(), "Plummer support must be infinite");
    let mut worst = 0.0f64;
    for &r in s.grid().nodes().iter().skip(1) {
        let m_exact = m_inf * r.powi(3) / (a * a + r * r).powf(1.5);
        if m_exact > 0.999 * m_inf {
            break;
        }
        let u_exact = -m_inf / (a * a + r * r).sqrt();
        worst = worst.max(((s.potential_at(r) - u_exact) / u_exact).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(worst < 1e-5, "potential rel err {worst:.3e}");
    ensure!(secs < 5.0, "runtime {secs:.2} s exceeds 5 s");
    Ok(format!("rel err {worst:.2e}, {secs:.2} s"))
}

/// Closed-form density of the potential vs the 2D velocity quadrature.
fn c2_ansatz_reduction() -> Result<String, String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let l = rng.gen_range(0.0..1.2);
        let k = rng.gen_range(0.3..l + 1.45);
        let gamma = rng.gen_range(0.0..0.05);
        let psi = rng.gen_range(0.2..2.5);
        let r = rng.gen_range(0.3..2.0);
        let model = CasimirModel::polytrope(k, l).with_gamma(gamma);
        let closed = steadystate::rho_of_potential(&model, psi, r);
        let oracle = steadystate::rho_velocity_oracle(&model, psi, r);
        ensure!(oracle > 0.0, "oracle not positive at psi = {psi}");
        worst = worst.max(((closed - oracle) / oracle).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(worst <= 1e-8, "worst rel err {worst:.3e}");
    ensure!(secs < 30.0, "runtime {secs:.2} s exceeds 30 s");
    Ok(format!("worst rel err {worst:.2e} on 100 draws, {secs:.1} s"))
}

/// Five admissible parameter sets, including gamma > 0 and l > 0.
fn suite_states() -> Result<Vec<AnsatzState>, String> {
    let sets = [
        (1.0, 0.0, 0.0, 1.0),
        (1.4, 0.0, 0.0, 1.5),
        (0.5, 1.0, 0.0, 1.3),
        (0.5, 1.0, 0.05, 0.8),
        (1.2, 0.4, 0.01, 2.0),
    ];
    let mut out = Vec::new();
    for (k, l, gamma, psi0) in sets {
        let model = CasimirModel::polytrope(k, l).with_gamma(gamma);
        let s = err_str(steadystate::solve_steady(&model, &SolveOptions::new(psi0)))?;
        ensure!(s.is_compact(), "k={k} l={l}: expected compact support");
        out.push(s);
    }
    Ok(out)
}

fn c3_euler_lagrange() -> Result<String, String> {
    let mut worst_el = 0.0f64;
    for s in suite_states()? {
        let m = s.model();
        let tag = format!("k={} l={} gamma={}", m.k1, m.l, m.gamma);
        let (sup_on, min_off) = steadystate::el_residual(&s);
        let rel = sup_on / s.e0().abs();
        ensure!(rel < 1e-6, "{tag}: EL residual {rel:.3e}");
        ensure!(min_off >= -1e-10, "{tag}: off-support min {min_off:.3e}");
        let mismatch = err_str(steadystate::e0_consistency(&s))?;
        ensure!(mismatch < 1e-6, "{tag}: E0 mismatch {mismatch:.3e}");
        ensure!(s.e0() < 0.0, "{tag}: E0 = {}", s.e0());
        let d = err_str(s.functional_report())?.total_d;
        ensure!(d < 0.0, "{tag}: D = {d}");
        worst_el = worst_el.max(rel);
    }
    Ok(format!("5 states, worst EL residual {worst_el:.2e} of |E0|"))
}

fn c4_virial() -> Result<String, String> {
    let mut worst = 0.0f64;
    for s in suite_states()? {
        let rep = err_str(s.functional_report())?;
        let rel = (2.0 * rep.e_kin + rep.e_pot).abs() / rep.e_pot.abs();
        let m = s.model();
        ensure!(
            rel <= 1e-4,
            "k={} l={} gamma={}: |2Ekin+Epot| = {rel:.3e} |Epot|",
            m.k1,
            m.l,
            m.gamma
        );
        worst = worst.max(rel);
    }
    Ok(format!("worst |2Ekin+Epot| = {worst:.2e} |Epot|"))
}

/// Smooth positive radial bump mixture for the field inequalities.
fn random_radial(rng: &mut ChaCha8Rng) -> SpatialDensity {
    let r_max = rng.gen_range(1.0..5.0);
    let grid = RadialGrid::standard(r_max, 257);
    let n_b = rng.gen_range(1..4usize);
    let bumps: Vec<(f64, f64, f64)> = (0..n_b)
        .map(|_| {
            (
                rng.gen_range(0.1..0.8) * r_max,
                rng.gen_range(0.1..0.3) * r_max,
                rng.gen_range(0.2..1.0),
            )
        })
        .collect();
    let values = grid
        .nodes()
        .iter()
        .map(|&r| {
            bumps
                .iter()
                .map(|&(c, s, a)| a * (-((r - c) / s).powi(2)).exp())
                .sum()
        })
        .collect();
    SpatialDensity::new(grid, values).unwrap()
}

fn c5_mass_bound_and_field_split() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = f64::INFINITY;
    for case in 0..100 {
        let rho = random_radial(&mut rng);
        let n1 = rng.gen_range(1.0..4.0);
        let l = rng.gen_range(0.0..1.0);
        let norm = err_str(radialfield::rho_norm(&rho, n1, l))?;
        let cb = radialfield::mass_bound_constant(n1);
        let p = (2.0 * l + 3.0) / (n1 + 1.0);
        let m = err_str(radialfield::mass_function(&rho))?;
        for (&r, &mv) in rho.grid().nodes().iter().zip(m.values()).skip(1) {
            let rhs = cb * norm * r.powf(p);
            let margin = (rhs - mv.abs()) / rhs;
            ensure!(margin >= -1e-10, "case {case}: mass bound margin {margin:.3e}");
            worst = worst.min(margin);
        }
    }
    let mut worst_split = f64::INFINITY;
    for case in 0..100 {
        let rho = random_radial(&mut rng);
        let r_split = rng.gen_range(0.2..0.9) * rho.grid().r_max();
        let m = err_str(radialfield::mass_function(&rho))?;
        let field = radialfield::grad_dot_integral(&m, &m);
        let (interior, tail) = err_str(radialfield::grad_sq_split(&rho, r_split))?;
        let margin = (interior + tail - field) / field;
        ensure!(margin >= -1e-10, "case {case}: field split margin {margin:.3e}");
        worst_split = worst_split.min(margin);
    }
    Ok(format!(
        "100 densities each; min margins {worst:.2e} (mass), {worst_split:.2e} (split)"
    ))
}

fn c6_green_identity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let rho1 = random_radial(&mut rng);
        let mut rng2 = ChaCha8Rng::seed_from_u64(6000 + case);
        let rho2 = random_radial(&mut rng2);
        let resid = radialfield::green_identity_residual(&rho1, &rho2);
        ensure!(resid < 1e-6, "case {case}: residual {resid:.3e}");
        worst = worst.max(resid);
    }
    Ok(format!("worst residual {worst:.2e} on 100 pairs"))
}

fn c7_d_distance() -> Result<String, String> {
    let model = CasimirModel::polytrope(1.0, 0.0);
    let state = err_str(steadystate::solve_steady(&model, &SolveOptions::new(1.0)))?;
    let r_supp = state.r_support();
    let v_max = (2.0 * state.central_psi()).sqrt() * 1.02;
    let (r, u, w) = GridDensity::uniform_axes(r_supp * 1.2, 49, v_max, 33, 25);
    let f0 = err_str(state.sample_grid(r.clone(), u.clone(), w.clone()))?;
    let d00 = err_str(phasespace::d_distance(&f0, &state))?;
    ensure!(d00.abs() < 1e-10, "d(f0, f0) = {d00:.3e}");

    // fixed-mass constraint set: match the grid-sampled reference mass
    let mass = f0.mass();
    let mut min_d = f64::INFINITY;
    for seed in 0..100 {
        let f = err_str(phasespace::random_density(
            r.clone(),
            u.clone(),
            w.clone(),
            mass,
            3,
            7000 + seed,
        ))?;
        let d = err_str(phasespace::d_distance(&f, &state))?;
        ensure!(d >= -1e-12, "seed {seed}: d = {d:.3e}");
        min_d = min_d.min(d);
    }

    // quadratic response: doubling the perturbation quadruples d
    let f1 = err_str(dynamics::perturb_grid(
        &f0,
        PerturbKind::InteriorModulation,
        0.01,
        r_supp,
    ))?;
    let f2 = err_str(dynamics::perturb_grid(
        &f0,
        PerturbKind::InteriorModulation,
        0.02,
        r_supp,
    ))?;
    let d1 = err_str(phasespace::d_distance(&f1, &state))?;
    let d2 = err_str(phasespace::d_distance(&f2, &state))?;
    let ratio = d2 / d1;
    ensure!((3.5..=4.5).contains(&ratio), "quadratic ratio {ratio:.3}");

    // energy-Casimir identity D(f) - D(f0) = d - field/(8 pi)
    let d0_val = err_str(phasespace::functional_report(&f0, &model))?.total_d;
    let mut worst_resid = 0.0f64;
    for seed in 0..10 {
        let f = err_str(phasespace::random_density(
            r.clone(),
            u.clone(),
            w.clone(),
            mass,
            3,
            7500 + seed,
        ))?;
        let df = err_str(phasespace::functional_report(&f, &model))?.total_d;
        let d = err_str(phasespace::d_distance(&f, &state))?;
        let fd = err_str(phasespace::field_distance_grid(&f, &state))?;
        let resid = ((df - d0_val) - (d - fd / (8.0 * PI))).abs();
        ensure!(
            resid < 1e-8 * (1.0 + df.abs()),
            "seed {seed}: identity residual {resid:.3e}"
        );
        worst_resid = worst_resid.max(resid / (1.0 + df.abs()));
    }
    Ok(format!(
        "d(f0,f0) = {d00:.1e}, min d {min_d:.2e}, ratio {ratio:.2}, identity {worst_resid:.2e}"
    ))
}

fn c8_scaling() -> Result<String, String> {
    // mass identity under (a, b, c) rescaling
    let (r, u, w) = GridDensity::uniform_axes(3.0, 49, 3.0, 33, 25);
    let f = err_str(GridDensity::from_fn(r, u, w, |r, u, w| {
        0.4 * (-(r * r) - u * u - (w - 0.5).powi(2)).exp()
    }))?;
    let (a, b, c) = (1.9, 0.8, 1.4);
    let fbar = err_str(f.rescale(a, b, c))?;
    let m_expect = a * b.powi(-3) * c.powi(-3) * f.mass();
    let m_err = (fbar.mass() - m_expect).abs() / m_expect;
    ensure!(m_err <= 1e-12, "mass identity err {m_err:.3e}");

    // full functional identity assembled from unscaled ingredients
    let model = CasimirModel {
        c1: 1.0,
        c2: 0.5,
        k1: 1.0,
        k2: 0.5,
        l: 0.0,
        gamma: 0.02,
        f0_threshold: 1.0,
    };
    let lhs = err_str(phasespace::functional_report(&fbar, &model))?.total_d;
    let scaled_arg = err_str(f.rescale(
        a * b.powf(2.0 * model.l) * c.powf(2.0 * model.l),
        1.0,
        1.0,
    ))?;
    let rhs = model.gamma * a * b.powi(-5) * c.powi(-5) * phasespace::angular_term(&f)
        + b.powf(-3.0 - 2.0 * model.l)
            * c.powf(-3.0 - 2.0 * model.l)
            * err_str(phasespace::casimir_functional(&scaled_arg, &model))?
        + a * b.powi(-3) * c.powi(-5) * phasespace::kinetic_energy(&f)
        + a * a
            * b.powi(-5)
            * c.powi(-6)
            * err_str(radialfield::field_energy(&err_str(phasespace::rho_from_f(&f))?))?;
    let d_err = (lhs - rhs).abs() / lhs.abs().max(1.0);
    ensure!(d_err < 1e-6, "functional identity err {d_err:.3e}");

    let c1 = err_str(scalinglab::concentration_constant(1.0))?;
    ensure!(c1 == 2.0, "concentration constant C(1) = {c1}");

    let poly = CasimirModel::polytrope(1.0, 0.0);
    let si = err_str(scalinglab::scaling_inequality_check(
        &poly,
        0.5,
        1.0,
        &SolveOptions::new(1.0),
    ))?;
    ensure!(si.margin >= -1e-6, "scaling margin {:.3e}", si.margin);

    let witnesses = err_str(scalinglab::negativity_witness(&poly, 1.0, &[0.0, 1e-3]))?;
    for wres in &witnesses {
        ensure!(wres.found(), "no negativity witness at gamma = {}", wres.gamma);
    }

    // split estimate on a family of perturbed minimizers, assembled with the
    // grid-sampled reference so both sides share the same discretization
    let state = err_str(steadystate::match_mass(&poly, 1.0, &SolveOptions::new(1.0)))?;
    let r_supp = state.r_support();
    let v_max = (2.0 * state.central_psi()).sqrt() * 1.02;
    let (r, u, w) = GridDensity::uniform_axes(r_supp * 1.001, 96, v_max, 64, 48);
    let f0 = err_str(state.sample_grid(r, u, w))?;
    let d_m0 = err_str(phasespace::functional_report(&f0, &poly))?.total_d;
    let alpha = err_str(scalinglab::scaling_exponent_alpha(poly.l, poly.k3()))?;
    let c_alpha = err_str(scalinglab::concentration_constant(alpha))?;
    let mut min_gap = f64::INFINITY;
    for kind in [PerturbKind::VelocityDilation, PerturbKind::InteriorModulation] {
        for amp in [0.005, 0.01, 0.02] {
            let fp = err_str(dynamics::perturb_grid(&f0, kind, amp, r_supp))?;
            let d = err_str(phasespace::d_distance(&fp, &state))?;
            let fd = err_str(phasespace::field_distance_grid(&fp, &state))?;
            let lhs = d - fd / (8.0 * PI);
            let mass = fp.mass();
            let r_mass = err_str(scalinglab::r_m(mass, d_m0, c_alpha))?;
            let mf = err_str(radialfield::mass_function(&err_str(
                phasespace::rho_from_f(&fp),
            )?))?;
            for r_split in [1.2 * r_mass, 3.0 * r_mass, 2.0 * r_supp] {
                let m_r = mf.eval(r_split);
                let rhs = (1.0 / r_mass - 1.0 / r_split) * m_r * (mass - m_r);
                let gap = lhs - rhs;
                ensure!(
                    gap >= -1e-8 * (1.0 + lhs.abs()),
                    "{kind:?} amp {amp}: lhs {lhs:.3e} < rhs {rhs:.3e}"
                );
                min_gap = min_gap.min(gap);
            }
        }
    }
    Ok(format!(
        "identities {m_err:.1e}/{d_err:.1e}, margin {:.2e}, split gap >= {min_gap:.2e}",
        si.margin
    ))
}

fn c9_simulator() -> Result<String, String> {
    // exact invariants under self-gravity
    let poly = CasimirModel::polytrope(1.0, 0.0);
    let state = err_str(steadystate::match_mass(&poly, 1.0, &SolveOptions::new(1.0)))?;
    let mut e = err_str(sample_state(&state, 2000, 5))?;
    let mass0 = e.total_mass();
    let ell0 = e.ell.clone();
    for _ in 0..500 {
        e.step(state.t_dyn() / 400.0);
    }
    ensure!(e.ell == ell0, "angular momentum drifted");
    ensure!(e.total_mass() == mass0, "mass drifted");

    // Kepler convergence order under dt halving
    let kepler = |dt: f64| -> Result<f64, String> {
        let mut e = err_str(dynamics::ParticleEnsemble::new(
            vec![1.0],
            vec![0.3],
            vec![0.7],
            vec![1e-12],
            1e-9,
        ))?;
        e.frozen_mass = Some(1.0);
        let steps = (2.0 / dt).round() as usize;
        for _ in 0..steps {
            e.step(dt);
        }
        Ok(e.r[0])
    };
    let reference = kepler(1e-5)?;
    let err1 = (kepler(4e-3)? - reference).abs();
    let err2 = (kepler(2e-3)? - reference).abs();
    let ratio = err1 / err2;
    ensure!((3.5..=4.5).contains(&ratio), "convergence ratio {ratio:.3}");

    // time reversal in a frozen potential
    let mut e = err_str(dynamics::ParticleEnsemble::new(
        vec![1.0, 1.5, 0.7],
        vec![0.1, -0.2, 0.05],
        vec![0.5, 0.9, 0.6],
        vec![1e-12; 3],
        1e-9,
    ))?;
    e.frozen_mass = Some(1.0);
    let (r0, u0) = (e.r.clone(), e.u.clone());
    for _ in 0..1000 {
        e.step(0.002);
    }
    e.reverse_velocities();
    for _ in 0..1000 {
        e.step(0.002);
    }
    let mut worst = 0.0f64;
    for i in 0..3 {
        worst = worst.max((e.r[i] - r0[i]).abs()).max((e.u[i] + u0[i]).abs());
    }
    ensure!(worst < 1e-10, "reversal error {worst:.3e}");
    Ok(format!(
        "exact L and mass, order ratio {ratio:.2}, reversal {worst:.1e}"
    ))
}

fn c10_stability() -> Result<String, String> {
    let poly = CasimirModel::polytrope(1.0, 0.0);
    let state = err_str(steadystate::match_mass(&poly, 1.0, &SolveOptions::new(1.0)))?;
    let mut detail = String::new();
    for kind in [PerturbKind::VelocityDilation, PerturbKind::InteriorModulation] {
        let cfg = StabilityConfig {
            n_particles: 100_000,
            dt: state.t_dyn() / 2000.0,
            n_steps: 100_000, // 50 dynamical times
            cadence: 500,
            seed: 11,
            kind,
            amplitude: 0.01,
            substep_fraction: 0.03,
        };
        let t0 = Instant::now();
        let (series, _) = err_str(run_stability(&state, &cfg))?;
        let secs = t0.elapsed().as_secs_f64();
        let first = &series.samples[0];
        let peak = series
            .samples
            .iter()
            .fold(f64::MIN, |m, s| m.max(s.lyapunov_sum));
        let ratio = peak / first.lyapunov_sum;
        let drift = series
            .samples
            .iter()
            .fold(0.0f64, |m, s| m.max((s.e_tot - first.e_tot).abs()))
            / first.e_tot.abs();
        ensure!(
            ratio <= 5.0,
            "{kind:?}: peak distance {peak:.3e} is {ratio:.2}x the initial {:.3e}",
            first.lyapunov_sum
        );
        ensure!(drift < 1e-4, "{kind:?}: energy drift {drift:.3e}");
        ensure!(secs < 600.0, "{kind:?}: runtime {secs:.0} s exceeds 600 s");
        detail.push_str(&format!(
            "{kind:?}: ratio {ratio:.2}, drift {drift:.1e}, {secs:.0} s; "
        ));
    }
    Ok(detail.trim_end_matches("; ").to_string())
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Result<String, String>); 10] = [
        ("Plummer oracle", c1_plummer),
        ("ansatz reduction", c2_ansatz_reduction),
        ("Euler-Lagrange suite", c3_euler_lagrange),
        ("virial identity", c4_virial),
        ("mass bound and field split", c5_mass_bound_and_field_split),
        ("Green identity", c6_green_identity),
        ("d-distance", c7_d_distance),
        ("scaling laws", c8_scaling),
        ("simulator invariants", c9_simulator),
        ("stability experiment", c10_stability),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail})", i + 1),
            Err(detail) => {
                println!("FAIL criterion {}: {name} ({detail})", i + 1);
                failures += 1;
            }
        }
    }
    assert_eq!(failures, 0, "{failures} acceptance criteria failed");
}
