//! Spatial-side quantities for spherically symmetric densities: cumulative
//! mass, potential, field energy, weighted norms, and the explicit
//! mass-bound and field-split inequalities.
//!
//! Densities are tabulated on a radial grid starting at r = 0 and
//! reconstructed between nodes by local cubics; every integral is taken cell
//! by cell with Gauss-Legendre points, and all exterior tails (-M/r for the
//! potential, -M^2/(2 r_max) for the field energy) are added analytically.

use crate::error::{CammError, Result};
use crate::quad;

/// Strictly increasing radial nodes with r_0 = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    nodes: Vec<f64>,
}

impl RadialGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 17 {
            return Err(CammError::domain("radial grid needs at least 17 nodes"));
        }
        if nodes[0] != 0.0 {
            return Err(CammError::domain("radial grid must start at r = 0"));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) || nodes.iter().any(|r| !r.is_finite()) {
            return Err(CammError::domain("radial nodes must be strictly increasing"));
        }
        Ok(RadialGrid { nodes })
    }

    /// Default grid: a linear patch near the origin followed by log-spaced
    /// nodes out to `r_max`, `n` nodes in total.
    pub fn standard(r_max: f64, n: usize) -> Self {
        assert!(r_max > 0.0 && n >= 32);
        let n_lin = (n / 32).max(16);
        let r_lin = r_max * 1e-3;
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n_lin {
            nodes.push(r_lin * i as f64 / n_lin as f64);
        }
        let n_log = n - n_lin;
        let (a, b) = (r_lin.ln(), r_max.ln());
        for j in 0..n_log {
            nodes.push((a + (b - a) * j as f64 / (n_log - 1) as f64).exp());
        }
        RadialGrid { nodes }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn r_max(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A spherically symmetric spatial density rho(r) on a radial grid.
///
/// Physical densities are nonnegative; signed densities are only accepted
/// with the explicit `signed` flag and are restricted to the norm and
/// Green-identity paths.
#[derive(Debug, Clone)]
pub struct SpatialDensity {
    grid: RadialGrid,
    values: Vec<f64>,
    signed: bool,
}

impl SpatialDensity {
    pub fn new(grid: RadialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(CammError::domain("density length must match grid"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CammError::domain(
                "physical densities must be finite and nonnegative",
            ));
        }
        Ok(SpatialDensity {
            grid,
            values,
            signed: false,
        })
    }

    /// Signed variant, permitted only in norm/identity checks.
    pub fn new_signed(grid: RadialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(CammError::domain("density length must match grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CammError::domain("density values must be finite"));
        }
        Ok(SpatialDensity {
            grid,
            values,
            signed: true,
        })
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    /// Local-cubic reconstruction; zero outside the grid. Physical densities
    /// are clamped at zero so interpolation overshoot cannot turn them
    /// negative.
    pub fn eval(&self, r: f64) -> f64 {
        if r > self.grid.r_max() {
            return 0.0;
        }
        let v = quad::interp(self.grid.nodes(), &self.values, r);
        if self.signed {
            v
        } else {
            v.max(0.0)
        }
    }
}

/// Cumulative mass m(r) = 4 pi int_0^r s^2 rho(s) ds.
#[derive(Debug, Clone)]
pub struct MassFunction {
    grid: RadialGrid,
    rho: Vec<f64>,
    m: Vec<f64>,
    signed: bool,
}

impl MassFunction {
    fn build(rho: &SpatialDensity) -> Self {
        let x = rho.grid.nodes();
        let signed = rho.signed;
        let m = quad::cumulative_nodal(x, &rho.values, |s, v| {
            let v = if signed { v } else { v.max(0.0) };
            4.0 * std::f64::consts::PI * s * s * v
        });
        MassFunction {
            grid: rho.grid.clone(),
            rho: rho.values.clone(),
            m,
            signed,
        }
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.m
    }

    pub fn total(&self) -> f64 {
        *self.m.last().unwrap()
    }

    /// m(r) anywhere; constant (= total mass) beyond the grid.
    pub fn eval(&self, r: f64) -> f64 {
        let x = self.grid.nodes();
        if r >= self.grid.r_max() {
            return self.total();
        }
        if r <= 0.0 {
            return 0.0;
        }
        let cell = quad::find_cell(x, r);
        let signed = self.signed;
        self.m[cell]
            + quad::cell_integral(x, &self.rho, cell, x[cell], r, &|s, v| {
                let v = if signed { v } else { v.max(0.0) };
                4.0 * std::f64::consts::PI * s * s * v
            })
    }
}

/// Gravitational potential with U(infinity) = 0 and analytic -M/r tail.
#[derive(Debug, Clone)]
pub struct Potential {
    grid: RadialGrid,
    values: Vec<f64>,
    total_mass: f64,
    /// Set when the grid does not appear to contain essentially all mass.
    pub truncated: bool,
}

impl Potential {
    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// U(r) anywhere; -M/r beyond the grid.
    pub fn eval(&self, r: f64) -> f64 {
        if r >= self.grid.r_max() {
            return -self.total_mass / r;
        }
        quad::interp(self.grid.nodes(), &self.values, r)
    }
}

/// m(r) by composite quadrature consistent with the local-cubic
/// reconstruction; rejects signed densities.
pub fn mass_function(rho: &SpatialDensity) -> Result<MassFunction> {
    if rho.signed {
        return Err(CammError::domain(
            "mass_function requires a nonnegative density",
        ));
    }
    Ok(MassFunction::build(rho))
}

fn mass_function_any(rho: &SpatialDensity) -> MassFunction {
    MassFunction::build(rho)
}

/// Solves U'(r) = m(r)/r^2 with U(infinity) = 0 via
/// U(r) = -m(r)/r - 4 pi int_r^rmax s rho(s) ds and the -M/r exterior tail.
pub fn potential_from_density(rho: &SpatialDensity) -> Result<Potential> {
    if rho.signed {
        return Err(CammError::domain(
            "potential_from_density requires a nonnegative density",
        ));
    }
    let mf = MassFunction::build(rho);
    let x = rho.grid.nodes();
    let n = x.len();
    // outward integral J(r_i) = 4 pi int_{r_i}^{r_max} s rho ds
    let cum = quad::cumulative_nodal(x, &rho.values, |s, v| {
        4.0 * std::f64::consts::PI * s * v.max(0.0)
    });
    let total_j = cum[n - 1];
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let shell = total_j - cum[i];
        let central = if i == 0 { 0.0 } else { mf.m[i] / x[i] };
        values.push(-central - shell);
    }
    let total_mass = mf.total();
    // crude containment heuristic: the density at the edge would add more
    // than 0.1% of the mass over one more decade of radius
    let edge = rho.values[n - 1].max(0.0);
    let r_max = rho.grid.r_max();
    let truncated =
        total_mass > 0.0 && 4.0 * std::f64::consts::PI * r_max.powi(3) * edge > 1e-3 * total_mass;
    Ok(Potential {
        grid: rho.grid.clone(),
        values,
        total_mass,
        truncated,
    })
}

/// int grad U_1 . grad U_2 dx = 4 pi [ int_0^rb m1 m2 / r^2 dr + M1 M2 / rb ].
pub fn grad_dot_integral(m1: &MassFunction, m2: &MassFunction) -> f64 {
    let rb = m1.grid.r_max().max(m2.grid.r_max());
    let mut breaks: Vec<f64> = m1
        .grid
        .nodes()
        .iter()
        .chain(m2.grid.nodes().iter())
        .copied()
        .collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();
    let mut acc = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        acc += quad::gl8(a, b, |r| m1.eval(r) * m2.eval(r) / (r * r));
    }
    4.0 * std::f64::consts::PI * (acc + m1.total() * m2.total() / rb)
}

/// E_pot(rho) = -(1/8 pi) int |grad U_rho|^2 dx, always <= 0.
pub fn field_energy(rho: &SpatialDensity) -> Result<f64> {
    if rho.signed {
        return Err(CammError::domain("field_energy requires nonnegative density"));
    }
    let mf = MassFunction::build(rho);
    Ok(-grad_dot_integral(&mf, &mf) / (8.0 * std::f64::consts::PI))
}

/// The two pieces of the field split bound:
/// (4 pi int_0^R m^2/r^2 dr, 4 pi M^2 / R).
pub fn grad_sq_split(rho: &SpatialDensity, r_split: f64) -> Result<(f64, f64)> {
    if r_split <= 0.0 {
        return Err(CammError::domain("split radius must be positive"));
    }
    let mf = mass_function_any(rho);
    let x = mf.grid.nodes();
    let mut acc = 0.0;
    for i in 0..x.len() - 1 {
        let a = x[i];
        let b = x[i + 1].min(r_split);
        if b <= a {
            break;
        }
        acc += quad::gl8(a, b, |r| {
            let m = mf.eval(r);
            m * m / (r * r)
        });
    }
    if r_split > mf.grid.r_max() {
        let m = mf.total();
        acc += m * m * (1.0 / mf.grid.r_max() - 1.0 / r_split);
    }
    let four_pi = 4.0 * std::f64::consts::PI;
    Ok((
        four_pi * acc,
        four_pi * mf.total() * mf.total() / r_split,
    ))
}

/// Relative residual of the Green identity
/// int grad U_1 . grad U_2 dx = -4 pi int U_1 rho_2 dx.
pub fn green_identity_residual(rho1: &SpatialDensity, rho2: &SpatialDensity) -> f64 {
    let m1 = mass_function_any(rho1);
    let m2 = mass_function_any(rho2);
    let lhs = grad_dot_integral(&m1, &m2);

    // potential of rho1 without the nonnegativity clamp so the identity
    // stays linear for signed test densities
    let x1 = rho1.grid.nodes();
    let cum = quad::cumulative_nodal(x1, &rho1.values, |s, v| {
        4.0 * std::f64::consts::PI * s * v
    });
    let total_j = *cum.last().unwrap();
    let u1 = |r: f64| -> f64 {
        if r >= rho1.grid.r_max() {
            return -m1.total() / r;
        }
        if r <= 0.0 {
            return -total_j;
        }
        let cell = quad::find_cell(x1, r);
        let j = total_j
            - cum[cell]
            - quad::cell_integral(x1, &rho1.values, cell, x1[cell], r, &|s, v| {
                4.0 * std::f64::consts::PI * s * v
            });
        -m1.eval(r) / r - j
    };

    let x2 = rho2.grid.nodes();
    let mut rhs = 0.0;
    for i in 0..x2.len() - 1 {
        rhs += quad::gl8(x2[i], x2[i + 1], |r| {
            u1(r) * quad::interp_local_cubic(x2, &rho2.values, i, r) * r * r
        });
    }
    rhs *= -(4.0 * std::f64::consts::PI) * (4.0 * std::f64::consts::PI);

    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

/// Weighted density norm
/// ( int |rho|^{1+1/n1} |x|^{-2l/n1} dx )^{n1/(n1+1)}.
pub fn rho_norm(rho: &SpatialDensity, n1: f64, l: f64) -> Result<f64> {
    if n1 <= 0.0 {
        return Err(CammError::domain("rho_norm: n1 must be positive"));
    }
    if l <= -1.0 {
        return Err(CammError::domain("rho_norm: l must exceed -1"));
    }
    let w_exp = 2.0 - 2.0 * l / n1;
    if w_exp <= -1.0 {
        return Err(CammError::domain(
            "rho_norm: weight not integrable at the origin for these (n1, l)",
        ));
    }
    let p = 1.0 + 1.0 / n1;
    let x = rho.grid.nodes();
    let integral = quad::integrate_nodal(x, &rho.values, |s, v| {
        if s == 0.0 {
            return 0.0;
        }
        4.0 * std::f64::consts::PI * v.abs().powf(p) * s.powf(w_exp)
    });
    Ok(integral.powf(n1 / (n1 + 1.0)))
}

/// Explicit constant of the mass bound
/// |m(r)| <= (4 pi)^{1/(1+n1)} ||rho||_{n1,l} r^{(2l+3)/(n1+1)}.
pub fn mass_bound_constant(n1: f64) -> f64 {
    (4.0 * std::f64::consts::PI).powf(1.0 / (1.0 + n1))
}
