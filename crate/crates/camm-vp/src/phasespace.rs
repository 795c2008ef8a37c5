//! Discretized spherically symmetric phase-space densities and the
//! functionals built on them: kinetic energy, Casimir functional, weighted
//! norms, rescaling, the energy-Casimir report, and the stability distance
//! d(f, f0).
//!
//! Coordinates are (r, u, w) with u the radial velocity, w >= 0 the
//! tangential speed, and L = r^2 w^2. The spherically symmetric measure is
//! 8 pi^2 r^2 w dr du dw. Quadrature weights per axis come from integrating
//! the local cubic through each cell, so smooth integrands converge at
//! fourth order; the singular weight L^{-q} at w = 0 is integrated
//! semi-analytically over the first w cell.

use crate::casimir::CasimirModel;
use crate::error::{CammError, Result};
use crate::quad;
use crate::radialfield::{self, MassFunction, RadialGrid, SpatialDensity};
use crate::steadystate::AnsatzState;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const MEASURE: f64 = 8.0 * std::f64::consts::PI * std::f64::consts::PI;

/// Nonnegative phase-space density f(r, u, w) on a tensor grid.
#[derive(Debug, Clone)]
pub struct GridDensity {
    r: Vec<f64>,
    u: Vec<f64>,
    w: Vec<f64>,
    values: Vec<f64>,
    r_weights: Vec<f64>,
    u_weights: Vec<f64>,
    w_weights: Vec<f64>,
}

/// Per-axis quadrature weights from exact integration of the local cubic on
/// each cell; fourth-order accurate on non-uniform axes.
fn axis_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut wgt = vec![0.0; n];
    if n == 1 {
        return wgt;
    }
    if n < 4 {
        for i in 0..n - 1 {
            let h = 0.5 * (x[i + 1] - x[i]);
            wgt[i] += h;
            wgt[i + 1] += h;
        }
        return wgt;
    }
    for i in 0..n - 1 {
        let s = i.saturating_sub(1).min(n - 4);
        // integrate each Lagrange basis of the 4-node stencil over the cell
        for t in 0..4 {
            let contribution = quad::gl5(x[i], x[i + 1], |p| {
                let mut val = 1.0;
                for m in 0..4 {
                    if m != t {
                        val *= (p - x[s + m]) / (x[s + t] - x[s + m]);
                    }
                }
                val
            });
            wgt[s + t] += contribution;
        }
    }
    wgt
}

fn validate_axis(x: &[f64], name: &str) -> Result<()> {
    if x.len() < 2 {
        return Err(CammError::domain(format!("{name} axis needs >= 2 nodes")));
    }
    if x.windows(2).any(|p| p[1] <= p[0]) || x.iter().any(|v| !v.is_finite()) {
        return Err(CammError::domain(format!(
            "{name} axis must be finite and strictly increasing"
        )));
    }
    Ok(())
}

impl GridDensity {
    pub fn new(r: Vec<f64>, u: Vec<f64>, w: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        validate_axis(&r, "r")?;
        validate_axis(&u, "u")?;
        validate_axis(&w, "w")?;
        if r[0] < 0.0 || w[0] < 0.0 {
            return Err(CammError::domain("r and w axes must be nonnegative"));
        }
        if values.len() != r.len() * u.len() * w.len() {
            return Err(CammError::domain("value block does not match axes"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CammError::domain(
                "phase-space density must be finite and nonnegative",
            ));
        }
        let r_weights = axis_weights(&r);
        let u_weights = axis_weights(&u);
        let w_weights = axis_weights(&w);
        Ok(GridDensity {
            r,
            u,
            w,
            values,
            r_weights,
            u_weights,
            w_weights,
        })
    }

    pub fn from_fn<F: Fn(f64, f64, f64) -> f64>(
        r: Vec<f64>,
        u: Vec<f64>,
        w: Vec<f64>,
        f: F,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(r.len() * u.len() * w.len());
        for &ri in &r {
            for &uj in &u {
                for &wk in &w {
                    values.push(f(ri, uj, wk));
                }
            }
        }
        Self::new(r, u, w, values)
    }

    /// Uniform axes covering r in [0, r_max], u in [-v_max, v_max],
    /// w in [0, v_max].
    pub fn uniform_axes(
        r_max: f64,
        nr: usize,
        v_max: f64,
        nu: usize,
        nw: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let r = (0..nr)
            .map(|i| r_max * i as f64 / (nr - 1) as f64)
            .collect();
        let u = (0..nu)
            .map(|j| -v_max + 2.0 * v_max * j as f64 / (nu - 1) as f64)
            .collect();
        let w = (0..nw)
            .map(|k| v_max * k as f64 / (nw - 1) as f64)
            .collect();
        (r, u, w)
    }

    pub fn r_axis(&self) -> &[f64] {
        &self.r
    }
    pub fn u_axis(&self) -> &[f64] {
        &self.u
    }
    pub fn w_axis(&self) -> &[f64] {
        &self.w
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.u.len() + j) * self.w.len() + k
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.idx(i, j, k)]
    }

    /// Integral of g(r, u, w, f) against the measure 8 pi^2 r^2 w dr du dw,
    /// in fixed lexicographic order.
    pub fn integrate_with<F: Fn(f64, f64, f64, f64) -> f64>(&self, g: F) -> f64 {
        let mut total = 0.0;
        for (i, &ri) in self.r.iter().enumerate() {
            let wr = self.r_weights[i] * ri * ri;
            if wr == 0.0 && ri == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for (j, &uj) in self.u.iter().enumerate() {
                let mut col = 0.0;
                for (k, &wk) in self.w.iter().enumerate() {
                    col += self.w_weights[k] * wk * g(ri, uj, wk, self.value(i, j, k));
                }
                row += self.u_weights[j] * col;
            }
            total += wr * row;
        }
        MEASURE * total
    }

    /// Total mass M(f).
    pub fn mass(&self) -> f64 {
        self.integrate_with(|_, _, _, f| f)
    }

    /// Exact node-remapped rescaling: returns fbar(r,u,w) = a f(b r, c u, c w)
    /// represented on the scaled axes r/b, u/c, w/c.
    pub fn rescale(&self, a: f64, b: f64, c: f64) -> Result<GridDensity> {
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(CammError::domain("rescale parameters must be positive"));
        }
        let r = self.r.iter().map(|&x| x / b).collect();
        let u = self.u.iter().map(|&x| x / c).collect();
        let w = self.w.iter().map(|&x| x / c).collect();
        let values = self.values.iter().map(|&v| a * v).collect();
        GridDensity::new(r, u, w, values)
    }
}

/// Spatial density rho(r_i) = 2 pi int f w dw du.
pub fn rho_from_f(f: &GridDensity) -> Result<SpatialDensity> {
    let grid = RadialGrid::new(f.r.clone())?;
    let mut rho = Vec::with_capacity(f.r.len());
    for i in 0..f.r.len() {
        let mut acc = 0.0;
        for (j, _) in f.u.iter().enumerate() {
            let mut col = 0.0;
            for (k, &wk) in f.w.iter().enumerate() {
                col += f.w_weights[k] * wk * f.value(i, j, k);
            }
            acc += f.u_weights[j] * col;
        }
        rho.push((TWO_PI * acc).max(0.0));
    }
    SpatialDensity::new(grid, rho)
}

/// E_kin(f) = 1/2 int (u^2 + w^2) f dmu.
pub fn kinetic_energy(f: &GridDensity) -> f64 {
    f.integrate_with(|_, u, w, v| 0.5 * (u * u + w * w) * v)
}

/// int L f dmu with L = r^2 w^2 (the gamma factor is applied by callers).
pub fn angular_term(f: &GridDensity) -> f64 {
    f.integrate_with(|r, _, w, v| r * r * w * w * v)
}

/// Monomial coefficients of the interpolating polynomial through up to four
/// leading nodes (Newton divided differences, expanded).
fn cubic_monomial(x: &[f64], y: &[f64]) -> [f64; 4] {
    let n = x.len().min(4);
    let mut dd: Vec<f64> = y[..n].to_vec();
    for j in 1..n {
        for i in (j..n).rev() {
            dd[i] = (dd[i] - dd[i - 1]) / (x[i] - x[i - j]);
        }
    }
    let mut coef = [0.0; 4];
    let mut basis = [0.0; 4];
    basis[0] = 1.0;
    for (j, &d) in dd.iter().enumerate() {
        for t in 0..4 {
            coef[t] += d * basis[t];
        }
        let mut nb = [0.0; 4];
        for t in 0..3 {
            nb[t + 1] += basis[t];
        }
        for t in 0..4 {
            nb[t] -= x[j] * basis[t];
        }
        basis = nb;
    }
    coef
}

/// int h(w) w^{w_exp} dw over the w axis, h tabulated at the nodes. The
/// first cell at w = 0 is integrated analytically against the local cubic
/// so integrable singularities of the weight are exact; non-integrable
/// combinations are domain errors.
fn w_weighted_integral(wx: &[f64], h: &[f64], w_exp: f64) -> Result<f64> {
    let nw = wx.len();
    let mut col = 0.0;
    let start = if wx[0] == 0.0 {
        if h[0] > 0.0 && w_exp <= -1.0 {
            return Err(CammError::domain(
                "weighted integral diverges at w = 0 (non-integrable L weight)",
            ));
        }
        let coeffs = cubic_monomial(wx, h);
        let mut acc = 0.0;
        for (j, &a) in coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let e = j as f64 + w_exp + 1.0;
            if e <= 0.0 {
                return Err(CammError::domain(
                    "weighted integral diverges at w = 0 (non-integrable L weight)",
                ));
            }
            acc += a * wx[1].powf(e) / e;
        }
        col += acc.max(0.0);
        1
    } else {
        0
    };
    for k in start..nw - 1 {
        col += quad::gl5(wx[k], wx[k + 1], |s| {
            quad::interp_local_cubic(wx, h, k, s).max(0.0) * s.powf(w_exp)
        });
    }
    Ok(col)
}

/// int f^p L^{-q} dmu with L = r^2 w^2. For q = 0 this reduces to the plain
/// nodal quadrature (bitwise consistent with [`GridDensity::integrate_with`]);
/// for q > 0 the w axis is integrated cell by cell against the analytic
/// weight w^{1-2q}, with the singular first cell handled per
/// [`w_weighted_integral`].
pub fn weighted_power_integral(f: &GridDensity, p: f64, q: f64) -> Result<f64> {
    if p <= 0.0 {
        return Err(CammError::domain("power p must be positive"));
    }
    if q == 0.0 {
        return Ok(f.integrate_with(|_, _, _, v| v.powf(p)));
    }
    let r_exp = 2.0 - 2.0 * q;
    let w_exp = 1.0 - 2.0 * q;
    let nw = f.w.len();
    let mut total = 0.0;
    for (i, &ri) in f.r.iter().enumerate() {
        let r_fac = if ri == 0.0 {
            if r_exp > 0.0 {
                0.0
            } else if r_exp == 0.0 {
                1.0
            } else {
                // r^{negative} at r = 0: only admissible if f vanishes there
                let any = (0..f.u.len()).any(|j| (0..nw).any(|k| f.value(i, j, k) > 0.0));
                if any {
                    return Err(CammError::domain(
                        "weighted integral diverges at r = 0 for this (p, q)",
                    ));
                }
                0.0
            }
        } else {
            ri.powf(r_exp)
        };
        if r_fac == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (j, _) in f.u.iter().enumerate() {
            let h: Vec<f64> = (0..nw).map(|k| f.value(i, j, k).powf(p)).collect();
            row += f.u_weights[j] * w_weighted_integral(&f.w, &h, w_exp)?;
        }
        total += f.r_weights[i] * r_fac * row;
    }
    Ok(MEASURE * total)
}

/// C(f) = int Q(L^{-l} f) L^l dmu for the two-term power model, assembled
/// termwise as weighted power integrals.
pub fn casimir_functional(f: &GridDensity, model: &CasimirModel) -> Result<f64> {
    let mut c = model.c1 * weighted_power_integral(f, 1.0 + 1.0 / model.k1, model.l / model.k1)?;
    if model.c2 > 0.0 {
        c += model.c2 * weighted_power_integral(f, 1.0 + 1.0 / model.k2, model.l / model.k2)?;
    }
    Ok(c)
}

/// Weighted phase-space norm
/// ( int f^{1+1/k1} L^{-l/k1} dmu )^{k1/(k1+1)}.
pub fn f_norm(f: &GridDensity, k1: f64, l: f64) -> Result<f64> {
    if k1 <= 0.0 {
        return Err(CammError::domain("f_norm: k1 must be positive"));
    }
    let v = weighted_power_integral(f, 1.0 + 1.0 / k1, l / k1)?;
    Ok(v.powf(k1 / (k1 + 1.0)))
}

/// All energy-Casimir functionals of a density in one report.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub mass: f64,
    pub e_kin: f64,
    pub e_pot: f64,
    pub casimir: f64,
    pub gamma_l: f64,
    /// P(f) = gamma int L f + C(f) + E_kin(f).
    pub positive_part: f64,
    /// D(f) = P(f) + E_pot(f).
    pub total_d: f64,
}

pub fn functional_report(f: &GridDensity, model: &CasimirModel) -> Result<FunctionalReport> {
    let mass = f.mass();
    let e_kin = kinetic_energy(f);
    let rho = rho_from_f(f)?;
    let e_pot = radialfield::field_energy(&rho)?;
    let cas = casimir_functional(f, model)?;
    let gamma_l = model.gamma * angular_term(f);
    let positive_part = gamma_l + cas + e_kin;
    Ok(FunctionalReport {
        mass,
        e_kin,
        e_pot,
        casimir: cas,
        gamma_l,
        positive_part,
        total_d: positive_part + e_pot,
    })
}

fn mass_function_of(f: &GridDensity) -> Result<MassFunction> {
    radialfield::mass_function(&rho_from_f(f)?)
}

/// The Lyapunov distance
/// d(f, f0) = int [ Q(L^{-l}f)L^l - Q(L^{-l}f0)L^l
///                  + (E + gamma L - E0)(f - f0) ] dmu,
/// with E = |v|^2/2 + U0 evaluated against the frozen steady potential. The
/// U0 contribution is assembled through the mass functions (Green identity),
/// which keeps the energy-Casimir identity
/// D(f) - D(f0) = d(f, f0) - (1/8 pi) ||grad U_f - grad U_0||^2 exact at the
/// discrete level; f0 is sampled on f's own axes so d(f0, f0) = 0 exactly.
pub fn d_distance(f: &GridDensity, steady: &AnsatzState) -> Result<f64> {
    let f0 = steady.sample_grid(f.r.clone(), f.u.clone(), f.w.clone())?;
    let model = steady.model();

    let cas_f = casimir_functional(f, &model)?;
    let cas_0 = casimir_functional(&f0, &model)?;
    let ang = model.gamma * (angular_term(f) - angular_term(&f0));
    let kin = kinetic_energy(f) - kinetic_energy(&f0);
    let dm = f.mass() - f0.mass();

    let mf = mass_function_of(f)?;
    let m0 = mass_function_of(&f0)?;
    // int U0 (rho_f - rho_0) dx = -(1/4 pi) int grad U0 . (grad U_f - grad U_0)
    let cross = radialfield::grad_dot_integral(&mf, &m0);
    let self0 = radialfield::grad_dot_integral(&m0, &m0);
    let u0_term = -(cross - self0) / (4.0 * std::f64::consts::PI);

    Ok(cas_f - cas_0 + ang + kin - steady.e0() * dm + u0_term)
}

/// ||grad U_f - grad U_0||_2^2 = 4 pi int (m_f - m_0)^2 / r^2 dr, with the
/// reference mass profile taken from the steady state sampled on f's axes
/// (consistent with [`d_distance`]).
pub fn field_distance_grid(f: &GridDensity, steady: &AnsatzState) -> Result<f64> {
    let f0 = steady.sample_grid(f.r.clone(), f.u.clone(), f.w.clone())?;
    let mf = mass_function_of(f)?;
    let m0 = mass_function_of(&f0)?;
    Ok(radialfield::grad_dot_integral(&mf, &mf)
        - 2.0 * radialfield::grad_dot_integral(&mf, &m0)
        + radialfield::grad_dot_integral(&m0, &m0))
}

/// Smooth positive bump mixture of prescribed total mass; the workhorse for
/// randomized functional and inequality checks.
pub fn random_density(
    r: Vec<f64>,
    u: Vec<f64>,
    w: Vec<f64>,
    target_mass: f64,
    n_bumps: usize,
    seed: u64,
) -> Result<GridDensity> {
    if target_mass <= 0.0 {
        return Err(CammError::domain("target mass must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r_max, v_lo, v_hi, w_max) = (
        *r.last().unwrap(),
        u[0],
        *u.last().unwrap(),
        *w.last().unwrap(),
    );
    let mut bumps = Vec::with_capacity(n_bumps);
    for _ in 0..n_bumps.max(1) {
        let cr = rng.gen_range(0.1..0.9) * r_max;
        let cu = v_lo + rng.gen_range(0.2..0.8) * (v_hi - v_lo);
        let cw = rng.gen_range(0.1..0.8) * w_max;
        let sr = rng.gen_range(0.08..0.25) * r_max;
        let sv = rng.gen_range(0.08..0.25) * (v_hi - v_lo) * 0.5;
        let amp = rng.gen_range(0.2..1.0);
        bumps.push((cr, cu, cw, sr, sv, amp));
    }
    let mut f = GridDensity::from_fn(r, u, w, |r, u, w| {
        bumps
            .iter()
            .map(|&(cr, cu, cw, sr, sv, amp)| {
                let e = ((r - cr) / sr).powi(2) + ((u - cu) / sv).powi(2) + ((w - cw) / sv).powi(2);
                amp * (-e).exp()
            })
            .sum()
    })?;
    let m = f.mass();
    let scale = target_mass / m;
    for v in &mut f.values {
        *v *= scale;
    }
    Ok(f)
}

/// Explicit constant of the pointwise interpolation bound
/// rho_f(r) <= C r^{2l/(k1+l+5/2)} (I1 + I2)^{n1/(n1+1)},
/// assembled from the Hoelder/optimization chain.
pub fn density_bound_constant(k1: f64, l: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    // c_l = int_{|v|<=1} (L/r^2)^l dv = 2 pi sqrt(pi) Gamma(l+1) /
    //       ((2l+3) Gamma(l+3/2))
    let c_l = TWO_PI * std::f64::consts::PI.sqrt() / (2.0 * l + 3.0)
        * (ln_gamma(l + 1.0) - ln_gamma(l + 1.5)).exp();
    let p = (2.0 * l + 3.0) / (1.0 + k1);
    // min over R of a R^p + b R^{-2} = K_p a^{2/(p+2)} b^{p/(p+2)}
    let k_p = (p / 2.0).powf(2.0 / (p + 2.0)) + (2.0 / p).powf(p / (p + 2.0));
    k_p * c_l.powf(1.0 / (k1 + l + 2.5))
}

/// Per-radius velocity-space profiles used by the pointwise bound:
/// (rho(r_i), I1(r_i) = int f^{1+1/k1} L^{-l/k1} dv, I2(r_i) = int v^2 f dv).
pub fn pointwise_bound_profiles(
    f: &GridDensity,
    k1: f64,
    l: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let p = 1.0 + 1.0 / k1;
    let q = l / k1;
    let w_exp = 1.0 - 2.0 * q;
    let nw = f.w.len();
    let rho = rho_from_f(f)?;
    let mut i1 = Vec::with_capacity(f.r.len());
    let mut i2 = Vec::with_capacity(f.r.len());
    for (i, &ri) in f.r.iter().enumerate() {
        let mut a1 = 0.0;
        let mut a2 = 0.0;
        for (j, &uj) in f.u.iter().enumerate() {
            let h: Vec<f64> = (0..nw).map(|k| f.value(i, j, k).powf(p)).collect();
            let c1 = w_weighted_integral(&f.w, &h, w_exp)?;
            let mut c2 = 0.0;
            for (k, &wk) in f.w.iter().enumerate() {
                c2 += f.w_weights[k] * wk * (uj * uj + wk * wk) * f.value(i, j, k);
            }
            a1 += f.u_weights[j] * c1;
            a2 += f.u_weights[j] * c2;
        }
        let r2q = if ri == 0.0 && q > 0.0 {
            0.0
        } else {
            ri.powf(-2.0 * q)
        };
        i1.push(TWO_PI * a1 * r2q);
        i2.push(TWO_PI * a2);
    }
    Ok((rho.values().to_vec(), i1, i2))
}
