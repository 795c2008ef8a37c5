//! Quadrature and interpolation helpers shared across the crate.
//!
//! Profiles are tabulated on strictly increasing node vectors; between nodes
//! values are reconstructed by the local cubic through the four nearest
//! nodes, and integrals are taken cell by cell with Gauss-Legendre points so
//! that the quadrature is fourth-order accurate in the node spacing.

/// Gauss-Legendre nodes/weights on [-1, 1], 5 points (exact to degree 9).
const GL5: [(f64, f64); 5] = [
    (-0.906179845938664, 0.23692688505618908),
    (-0.5384693101056831, 0.47862867049936647),
    (0.0, 0.5688888888888889),
    (0.5384693101056831, 0.47862867049936647),
    (0.906179845938664, 0.23692688505618908),
];

/// Gauss-Legendre nodes/weights on [-1, 1], 8 points (exact to degree 15).
const GL8: [(f64, f64); 8] = [
    (-0.9602898564975363, 0.10122853629037626),
    (-0.7966664774136267, 0.22238103445337448),
    (-0.525532409916329, 0.31370664587788727),
    (-0.18343464249564978, 0.362683783378362),
    (0.18343464249564978, 0.362683783378362),
    (0.525532409916329, 0.31370664587788727),
    (0.7966664774136267, 0.22238103445337448),
    (0.9602898564975363, 0.10122853629037626),
];

/// Integrate a closure over [a, b] with a fixed Gauss-Legendre rule.
pub fn gl5<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for &(x, w) in &GL5 {
        s += w * f(c + h * x);
    }
    s * h
}

/// Like [`gl5`] but with the 8-point rule.
pub fn gl8<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for &(x, w) in &GL8 {
        s += w * f(c + h * x);
    }
    s * h
}

/// Locate the cell index i with x[i] <= r < x[i+1], clamped to valid cells.
pub fn find_cell(x: &[f64], r: f64) -> usize {
    debug_assert!(x.len() >= 2);
    let n = x.len();
    if r <= x[0] {
        return 0;
    }
    if r >= x[n - 1] {
        return n - 2;
    }
    // partition_point returns the first index with x[idx] > r
    let idx = x.partition_point(|&v| v <= r);
    (idx - 1).min(n - 2)
}

/// Stencil start for the local cubic of cell i: four nodes centered on the
/// cell, clamped at the boundaries.
fn stencil_start(n: usize, cell: usize) -> usize {
    if n < 4 {
        return 0;
    }
    cell.saturating_sub(1).min(n - 4)
}

/// Evaluate the local interpolating cubic of cell `cell` at `r` (Neville).
pub fn interp_local_cubic(x: &[f64], y: &[f64], cell: usize, r: f64) -> f64 {
    let n = x.len();
    if n < 4 {
        // fall back to linear interpolation on the cell
        let i = cell.min(n - 2);
        let t = (r - x[i]) / (x[i + 1] - x[i]);
        return y[i] + t * (y[i + 1] - y[i]);
    }
    let s = stencil_start(n, cell);
    let xs = &x[s..s + 4];
    let mut p = [y[s], y[s + 1], y[s + 2], y[s + 3]];
    for m in 1..4 {
        for i in 0..(4 - m) {
            p[i] = ((r - xs[i + m]) * p[i] + (xs[i] - r) * p[i + 1]) / (xs[i] - xs[i + m]);
        }
    }
    p[0]
}

/// Evaluate the tabulated function at an arbitrary abscissa.
pub fn interp(x: &[f64], y: &[f64], r: f64) -> f64 {
    interp_local_cubic(x, y, find_cell(x, r), r)
}

/// Integrate `transform(s, y(s))` over the sub-interval [a, b] of cell `cell`,
/// reconstructing y by the cell's local cubic.
pub fn cell_integral<F: Fn(f64, f64) -> f64>(
    x: &[f64],
    y: &[f64],
    cell: usize,
    a: f64,
    b: f64,
    transform: &F,
) -> f64 {
    gl5(a, b, |s| transform(s, interp_local_cubic(x, y, cell, s)))
}

/// Integrate `transform(s, y(s))` over the full node range.
pub fn integrate_nodal<F: Fn(f64, f64) -> f64>(x: &[f64], y: &[f64], transform: F) -> f64 {
    let mut total = 0.0;
    for i in 0..x.len() - 1 {
        total += cell_integral(x, y, i, x[i], x[i + 1], &transform);
    }
    total
}

/// Cumulative integral of `transform(s, y(s))` from x[0] to every node.
pub fn cumulative_nodal<F: Fn(f64, f64) -> f64>(x: &[f64], y: &[f64], transform: F) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 0..x.len() - 1 {
        acc += cell_integral(x, y, i, x[i], x[i + 1], &transform);
        out.push(acc);
    }
    out
}

/// Adaptive Simpson quadrature with absolute/relative tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_rules_integrate_polynomials_exactly() {
        // degree 9 for GL5, degree 15 for GL8
        let exact = |p: f64, a: f64, b: f64| (b.powf(p + 1.0) - a.powf(p + 1.0)) / (p + 1.0);
        for p in 0..=9 {
            let v = gl5(0.5, 2.0, |x| x.powi(p));
            assert!((v - exact(p as f64, 0.5, 2.0)).abs() < 1e-13 * v.abs().max(1.0));
        }
        for p in 0..=15 {
            let v = gl8(0.5, 2.0, |x| x.powi(p));
            assert!((v - exact(p as f64, 0.5, 2.0)).abs() < 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn cubic_interpolation_reproduces_cubics() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64).powf(1.3) * 0.1).collect();
        let f = |t: f64| 2.0 - t + 3.0 * t * t - 0.5 * t * t * t;
        let y: Vec<f64> = x.iter().map(|&t| f(t)).collect();
        for k in 0..100 {
            let r = x[0] + (x[19] - x[0]) * (k as f64) / 99.0;
            let v = interp(&x, &y, r);
            assert!((v - f(r)).abs() < 1e-11 * f(r).abs().max(1.0), "r={r}");
        }
    }

    #[test]
    fn cumulative_matches_total() {
        let x: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
        let y: Vec<f64> = x.iter().map(|&t| (1.0 + t * t).recip()).collect();
        let cum = cumulative_nodal(&x, &y, |_, v| v);
        let total = integrate_nodal(&x, &y, |_, v| v);
        assert!((cum[63] - total).abs() < 1e-14);
        // integral of 1/(1+t^2) from 0 to 1 is pi/4
        assert!((total - std::f64::consts::FRAC_PI_4).abs() < 1e-9);
    }

    #[test]
    fn adaptive_simpson_hits_tolerance() {
        let v = adaptive_simpson(&|x: f64| (x * x).exp(), 0.0, 1.0, 1e-12);
        // reference value of int_0^1 exp(x^2) dx
        assert!((v - 1.462_651_745_907_181_6).abs() < 1e-10);
    }
}
