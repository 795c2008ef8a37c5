//! Spherically symmetric particle-shell simulator for the Vlasov-Poisson
//! flow: leapfrog integration of radial characteristics with exact shell
//! self-gravity, perturbation operators, and stability diagnostics built
//! around a conserved Casimir surrogate for the distance functional.

use crate::casimir::CasimirModel;
use crate::error::{CammError, Result};
use crate::phasespace::{self, GridDensity};
use crate::steadystate::AnsatzState;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Weighted radial shells. `ell` stores the conserved squared angular
/// momentum L = (r v_t)^2 of each shell; it is never modified by the
/// integrator, so angular momentum conservation is exact by construction.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub ell: Vec<f64>,
    pub weights: Vec<f64>,
    pub t: f64,
    /// Reflection radius for purely radial shells.
    pub eps_r: f64,
    /// When set, replaces shell self-gravity by a fixed point mass.
    pub frozen_mass: Option<f64>,
    /// Fraction of the local timescale a step may cover before a shell is
    /// handed to the substepping path. The default resolves typical runs;
    /// tighten it (more substepped shells) when many shells populate the
    /// deep interior, e.g. 0.02 for N ~ 1e5 high-accuracy runs.
    pub substep_fraction: f64,
    /// End-of-step radius ordering, revalidated in O(n) before reuse.
    sort_cache: Vec<(u64, u32)>,
    /// Reused per-step work buffers.
    scratch: Scratch,
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    pairs: Vec<(u64, u32)>,
    tmp: Vec<(u64, u32)>,
    hist: Vec<u32>,
    prof_r: Vec<f64>,
    prof_m: Vec<f64>,
    flagged: Vec<bool>,
}

/// Monotone bijection from f64 (by `total_cmp` order) to u64.
fn radius_key(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | 0x8000_0000_0000_0000
    }
}

/// Stable LSD radix sort of (radius key, shell index) pairs: same
/// permutation as sorting by (r.total_cmp, index) since the input is in
/// index order and the sort is stable.
fn radix_sort_pairs(a: &mut Vec<(u64, u32)>, tmp: &mut Vec<(u64, u32)>, hist: &mut Vec<u32>) {
    let n = a.len();
    tmp.clear();
    tmp.resize(n, (0, 0));
    hist.resize(4 << 16, 0);
    hist.iter_mut().for_each(|h| *h = 0);
    // all four digit histograms in a single counting pass
    for &(k, _) in a.iter() {
        hist[(k & 0xffff) as usize] += 1;
        hist[(1 << 16) | ((k >> 16) & 0xffff) as usize] += 1;
        hist[(2 << 16) | ((k >> 32) & 0xffff) as usize] += 1;
        hist[(3 << 16) | ((k >> 48) & 0xffff) as usize] += 1;
    }
    for (pass, shift) in [0u32, 16, 32, 48].into_iter().enumerate() {
        let seg = &mut hist[pass << 16..(pass + 1) << 16];
        let mut sum = 0u32;
        let mut trivial = false;
        for h in seg.iter_mut() {
            let c = *h;
            if c as usize == n {
                trivial = true;
                break;
            }
            *h = sum;
            sum += c;
        }
        if trivial {
            continue;
        }
        for &(k, i) in a.iter() {
            let d = ((k >> shift) & 0xffff) as usize;
            tmp[seg[d] as usize] = (k, i);
            seg[d] += 1;
        }
        std::mem::swap(a, tmp);
    }
}

/// Sorted (key, index) pairs for the given radii.
fn sorted_radius_pairs(r: &[f64]) -> Vec<(u64, u32)> {
    let mut a: Vec<(u64, u32)> = r
        .iter()
        .enumerate()
        .map(|(i, &x)| (radius_key(x), i as u32))
        .collect();
    let (mut tmp, mut hist) = (Vec::new(), Vec::new());
    radix_sort_pairs(&mut a, &mut tmp, &mut hist);
    a
}

impl ParticleEnsemble {
    pub fn new(
        r: Vec<f64>,
        u: Vec<f64>,
        ell: Vec<f64>,
        weights: Vec<f64>,
        eps_r: f64,
    ) -> Result<Self> {
        let n = r.len();
        if n == 0 || u.len() != n || ell.len() != n || weights.len() != n {
            return Err(CammError::domain("ensemble arrays must share a nonzero length"));
        }
        if eps_r <= 0.0 {
            return Err(CammError::domain("reflection radius must be positive"));
        }
        for i in 0..n {
            if !(r[i] > 0.0) || ell[i] < 0.0 || !(weights[i] > 0.0) {
                return Err(CammError::domain(
                    "shells need r > 0, ell >= 0 and positive weights",
                ));
            }
        }
        Ok(Self {
            r,
            u,
            ell,
            weights,
            t: 0.0,
            eps_r,
            frozen_mass: None,
            substep_fraction: SUBSTEP_FRACTION,
            sort_cache: Vec::new(),
            scratch: Scratch::default(),
        })
    }

    /// Whether the cached ordering still matches the current radii (the
    /// second half-kick leaves r unchanged, so consecutive steps share it).
    /// Strict lexicographic order with key == radius_key(r[i]) forces every
    /// index to appear at most once, so a full-length valid cache is a
    /// genuine sorted permutation.
    fn order_is_cached(&self) -> bool {
        let n = self.len();
        if self.sort_cache.len() != n {
            return false;
        }
        let mut prev = (0u64, 0u32);
        for (k, &(key, i)) in self.sort_cache.iter().enumerate() {
            if (i as usize) >= n
                || key != radius_key(self.r[i as usize])
                || (k > 0 && (key, i) <= prev)
            {
                return false;
            }
            prev = (key, i);
        }
        true
    }

    /// Returns the radius ordering, reusing the cached one when valid.
    fn radius_order(&self) -> Vec<(u64, u32)> {
        if self.order_is_cached() {
            self.sort_cache.clone()
        } else {
            sorted_radius_pairs(&self.r)
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Interior mass seen by each shell: the sum of strictly inner weights
    /// plus half its own, with index order breaking radius ties.
    pub fn interior_masses(&self) -> Vec<f64> {
        let n = self.len();
        let mut m = vec![0.0; n];
        let mut acc = 0.0;
        for &(_, i) in &self.radius_order() {
            let i = i as usize;
            m[i] = acc + 0.5 * self.weights[i];
            acc += self.weights[i];
        }
        m
    }

    /// One kick-drift-kick leapfrog step. Shells whose local timescale
    /// min(r/|u|, sqrt(r^3/m), r^2/sqrt(L)) is well resolved by dt take the
    /// plain time-symmetric KDK substep with forces recomputed at the
    /// drifted positions. Shells diving toward pericenter faster than that
    /// are flagged and advanced by deterministic substeps in the mass
    /// profile frozen at the start of the step, which keeps the motion
    /// Hamiltonian while the centrifugal term varies rapidly. Shells with
    /// L = 0 reaching r < eps_r are reflected (r -> 2 eps_r - r, u -> -u).
    pub fn step(&mut self, dt: f64) {
        let n = self.len();
        let mut s = std::mem::take(&mut self.scratch);
        // step-function mass profile at the start of the step, for the
        // flagged shells only; the same pass yields the interior masses
        if !self.order_is_cached() {
            s.pairs.clear();
            s.pairs
                .extend(self.r.iter().enumerate().map(|(i, &x)| (radius_key(x), i as u32)));
            radix_sort_pairs(&mut s.pairs, &mut s.tmp, &mut s.hist);
            std::mem::swap(&mut self.sort_cache, &mut s.pairs);
        }
        s.prof_r.clear();
        s.prof_m.clear();
        s.flagged.clear();
        s.flagged.resize(n, false);
        let mut any_flagged = false;
        let t_loc_cut = dt / self.substep_fraction;
        let mut acc = 0.0;
        // one pass in radius order: builds the frozen profile, flags the
        // marginally resolved shells and half-kick-drifts the rest
        for &(_, i) in &self.sort_cache {
            let i = i as usize;
            let r0 = self.r[i];
            s.prof_r.push(r0);
            s.prof_m.push(acc);
            let m = match self.frozen_mass {
                Some(mc) => mc,
                None => acc + 0.5 * self.weights[i],
            };
            acc += self.weights[i];
            if timescale_below(r0, self.u[i], self.ell[i], m, t_loc_cut) {
                s.flagged[i] = true;
                any_flagged = true;
            } else {
                let inv_r = r0.recip();
                let a0 = (self.ell[i] * inv_r - m) * (inv_r * inv_r);
                let mut u1 = self.u[i] + 0.5 * dt * a0;
                let mut r1 = r0 + dt * u1;
                if r1 < self.eps_r && self.ell[i] == 0.0 {
                    r1 = 2.0 * self.eps_r - r1;
                    u1 = -u1;
                }
                self.r[i] = r1;
                self.u[i] = u1;
            }
        }
        if any_flagged {
            // radius order makes the sorted position a free initial rank
            // hint and keeps the profile walks cache-local
            for (j, &(_, i)) in self.sort_cache.iter().enumerate() {
                let i = i as usize;
                if !s.flagged[i] {
                    continue;
                }
                let force = ShellForce {
                    frozen: self.frozen_mass,
                    prof_r: &s.prof_r,
                    prof_m: &s.prof_m,
                    total: acc,
                    w_self: self.weights[i],
                    r_self: self.r[i],
                };
                let (r, u) =
                    advance_shell(self.r[i], self.u[i], self.ell[i], &force, dt, self.eps_r, j);
                self.r[i] = r;
                self.u[i] = u;
            }
        }
        // second half-kick with interior masses at the drifted positions
        match self.frozen_mass {
            Some(mc) => {
                for i in 0..n {
                    if !s.flagged[i] {
                        let inv_r = self.r[i].recip();
                        self.u[i] += 0.5 * dt * (self.ell[i] * inv_r - mc) * (inv_r * inv_r);
                    }
                }
            }
            None => {
                s.pairs.clear();
                s.pairs
                    .extend(self.r.iter().enumerate().map(|(i, &x)| (radius_key(x), i as u32)));
                radix_sort_pairs(&mut s.pairs, &mut s.tmp, &mut s.hist);
                let mut acc = 0.0;
                for &(_, i) in &s.pairs {
                    let i = i as usize;
                    if !s.flagged[i] {
                        let m = acc + 0.5 * self.weights[i];
                        let inv_r = self.r[i].recip();
                        self.u[i] += 0.5 * dt * (self.ell[i] * inv_r - m) * (inv_r * inv_r);
                    }
                    acc += self.weights[i];
                }
                // the second half-kick leaves r unchanged, so this ordering
                // is valid at the start of the next step
                std::mem::swap(&mut self.sort_cache, &mut s.pairs);
            }
        }
        self.t += dt;
        self.scratch = s;
    }

    pub fn kinetic_energy(&self) -> f64 {
        let mut e = 0.0;
        for i in 0..self.len() {
            e += self.weights[i]
                * 0.5
                * (self.u[i] * self.u[i] + self.ell[i] / (self.r[i] * self.r[i]));
        }
        e
    }

    /// Exact shell potential energy, consistent with the discrete force:
    /// W = -sum_i w_i (m_inner,i + w_i / 2) / r_i.
    pub fn potential_energy(&self) -> f64 {
        match self.frozen_mass {
            Some(mc) => {
                let mut e = 0.0;
                for i in 0..self.len() {
                    e -= self.weights[i] * mc / self.r[i];
                }
                e
            }
            None => {
                let m = self.interior_masses();
                let mut e = 0.0;
                for i in 0..self.len() {
                    e -= self.weights[i] * m[i] / self.r[i];
                }
                e
            }
        }
    }

    pub fn total_energy(&self) -> f64 {
        self.kinetic_energy() + self.potential_energy()
    }

    /// Reverses all radial velocities (for time-reversal checks).
    pub fn reverse_velocities(&mut self) {
        for u in &mut self.u {
            *u = -*u;
        }
    }
}

/// Fraction of the local timescale a step may cover before a shell is
/// handed to the substepping path.
pub const SUBSTEP_FRACTION: f64 = 0.25;

/// Fraction of the local timescale covered by one substep of a flagged
/// shell.
const SUBSTEP_INNER_FRACTION: f64 = 0.01;

/// Whether the local timescale min(r/|u|, sqrt(r^3/m), r^2/sqrt(L)) falls
/// below `c`, tested term by term on
/// squared quantities so the hot flagging pass needs no sqrt or division.
fn timescale_below(r: f64, u: f64, ell: f64, m: f64, c: f64) -> bool {
    let c2 = c * c;
    let r2 = r * r;
    r < c * u.abs() || r2 * r < c2 * m || r2 * r2 < c2 * ell
}

/// Frozen mass profile seen by one flagged shell: the interior mass of all
/// other shells at their start-of-step positions plus half its own weight,
/// matching the convention of the discrete potential energy.
struct ShellForce<'a> {
    frozen: Option<f64>,
    prof_r: &'a [f64],
    prof_m: &'a [f64],
    total: f64,
    w_self: f64,
    r_self: f64,
}

impl ShellForce<'_> {
    /// Interior mass seen by the flagged shell at radius r: the frozen
    /// profile without its own weight, plus half its own weight. `k` is kept
    /// incrementally as the insertion rank, cheap for the small moves
    /// between substeps.
    fn m_at(&self, r: f64, k: &mut usize) -> f64 {
        if let Some(mc) = self.frozen {
            return mc;
        }
        let prof_r = self.prof_r;
        let n = prof_r.len();
        let mut j = (*k).min(n);
        // gallop from the hint toward the insertion rank, then binary search
        // the bracket; stays cache-local even for fast-plunging shells
        if j < n && prof_r[j] < r {
            let mut step = 1usize;
            let mut lo = j + 1;
            let mut probe = j + step;
            while probe < n && prof_r[probe] < r {
                lo = probe + 1;
                step <<= 1;
                probe = j + step;
            }
            let hi = probe.min(n);
            j = lo + prof_r[lo..hi].partition_point(|&x| x < r);
        } else if j > 0 && prof_r[j - 1] >= r {
            let mut step = 1usize;
            let mut hi = j - 1;
            let mut lo = 0usize;
            loop {
                if step > j - 1 {
                    break;
                }
                let probe = j - 1 - step;
                if prof_r[probe] < r {
                    lo = probe + 1;
                    break;
                }
                hi = probe;
                step <<= 1;
            }
            j = lo + prof_r[lo..hi].partition_point(|&x| x < r);
        }
        *k = j;
        let m_all = if j == prof_r.len() {
            self.total
        } else {
            self.prof_m[j]
        };
        let own = if r > self.r_self { self.w_self } else { 0.0 };
        m_all - own + 0.5 * self.w_self
    }
}

/// Advances one flagged shell by dt in the frozen mass profile with
/// substeps capped at a fraction of the local timescale.
fn advance_shell(
    mut r: f64,
    mut u: f64,
    ell: f64,
    force: &ShellForce,
    dt: f64,
    eps_r: f64,
    k0: usize,
) -> (f64, f64) {
    let mut k = k0.min(force.prof_r.len());
    let h_floor = dt / 65_536.0;
    let inv_sqrt_ell = if ell > 0.0 { ell.sqrt().recip() } else { 0.0 };
    let mut left = dt;
    while left > 0.0 {
        let m = force.m_at(r, &mut k);
        let mut t_loc = r / u.abs().max(1e-300);
        if m > 0.0 {
            t_loc = t_loc.min((r * r * r / m).sqrt());
        }
        if ell > 0.0 {
            t_loc = t_loc.min(r * r * inv_sqrt_ell);
        }
        let mut h = left;
        if h > SUBSTEP_INNER_FRACTION * t_loc {
            h = (SUBSTEP_INNER_FRACTION * t_loc).max(h_floor).min(left);
        }
        if h >= left {
            h = left;
            left = 0.0;
        } else {
            left -= h;
        }
        let inv_r = r.recip();
        let a0 = (ell * inv_r - m) * (inv_r * inv_r);
        u += 0.5 * h * a0;
        r += h * u;
        if r < eps_r {
            if ell == 0.0 {
                r = 2.0 * eps_r - r;
                u = -u;
            } else if r <= 0.0 {
                // centrifugal barrier undersampled even by the substep
                r = eps_r - r;
                u = -u;
            }
        }
        let inv_r1 = r.recip();
        let a1 = (ell * inv_r1 - force.m_at(r, &mut k)) * (inv_r1 * inv_r1);
        u += 0.5 * h * a1;
    }
    (r, u)
}

fn trilerp(f: &GridDensity, r: f64, u: f64, w: f64) -> f64 {
    fn bracket(x: &[f64], v: f64) -> Option<(usize, f64)> {
        if v < x[0] || v > x[x.len() - 1] {
            return None;
        }
        let i = match x.binary_search_by(|a| a.total_cmp(&v)) {
            Ok(i) => i.min(x.len() - 2),
            Err(i) => i - 1,
        };
        Some((i, (v - x[i]) / (x[i + 1] - x[i])))
    }
    let (ri, rt) = match bracket(f.r_axis(), r) {
        Some(p) => p,
        None => return 0.0,
    };
    let (ui, ut) = match bracket(f.u_axis(), u) {
        Some(p) => p,
        None => return 0.0,
    };
    let (wi, wt) = match bracket(f.w_axis(), w) {
        Some(p) => p,
        None => return 0.0,
    };
    let mut acc = 0.0;
    for (di, cr) in [(0, 1.0 - rt), (1, rt)] {
        for (dj, cu) in [(0, 1.0 - ut), (1, ut)] {
            for (dk, cw) in [(0, 1.0 - wt), (1, wt)] {
                acc += cr * cu * cw * f.value(ri + di, uj(ui, dj), wi + dk);
            }
        }
    }
    return acc;

    fn uj(i: usize, d: usize) -> usize {
        i + d
    }
}

fn rejection_sample(
    eval: impl Fn(f64, f64, f64) -> f64,
    r_lo: f64,
    r_hi: f64,
    u_max: f64,
    w_max: f64,
    envelope: f64,
    total_mass: f64,
    n: usize,
    seed: u64,
    eps_r: f64,
) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(CammError::domain("need at least one shell"));
    }
    if envelope <= 0.0 {
        return Err(CammError::domain("sampling envelope must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    let mut ell = Vec::with_capacity(n);
    let mut attempts: u64 = 0;
    while r.len() < n {
        attempts += 1;
        if attempts > 20_000 && (r.len() as f64) < 1e-4 * attempts as f64 {
            return Err(CammError::NonConvergence {
                iterations: attempts as usize,
                reason: "rejection sampling acceptance rate below 1e-4".into(),
            });
        }
        let rr = rng.gen_range(r_lo..r_hi);
        let uu = rng.gen_range(-u_max..u_max);
        let ww = rng.gen_range(0.0..w_max);
        // phase-space measure 8 pi^2 r^2 w folded into the target density
        let p = eval(rr, uu, ww) * rr * rr * ww;
        if rng.gen_range(0.0..envelope) < p {
            r.push(rr);
            u.push(uu);
            ell.push(rr * rr * ww * ww);
        }
    }
    let weights = vec![total_mass / n as f64; n];
    ParticleEnsemble::new(r, u, ell, weights, eps_r)
}

/// Draws equal-weight shells from a steady state by rejection sampling.
pub fn sample_state(state: &AnsatzState, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    if !state.is_compact() {
        return Err(CammError::domain("sampling requires a compact steady state"));
    }
    let r_supp = state.r_support();
    let v_max = (2.0 * state.central_psi()).sqrt() * 1.02;
    // nodal scan for the envelope; the density is continuous so a margin
    // over a fine lattice is a safe bound
    let mut env = 0.0f64;
    let scan = 160;
    for i in 0..=scan {
        let r = r_supp * (i as f64 + 0.5) / (scan as f64 + 1.0);
        for j in 0..=scan {
            let u = v_max * (2.0 * j as f64 / scan as f64 - 1.0);
            for k in 0..=scan {
                let w = v_max * k as f64 / scan as f64;
                env = env.max(state.eval_f(r, u, w) * r * r * w);
            }
        }
    }
    rejection_sample(
        |r, u, w| state.eval_f(r, u, w),
        0.0,
        r_supp,
        v_max,
        v_max,
        env * 1.3,
        state.mass(),
        n,
        seed,
        1e-6 * r_supp,
    )
}

/// Draws equal-weight shells from a gridded density (trilinear between
/// nodes, so nodal maxima bound the envelope).
pub fn sample_grid_density(f: &GridDensity, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    let r = f.r_axis();
    let u = f.u_axis();
    let w = f.w_axis();
    let mut env = 0.0f64;
    for (i, &rv) in r.iter().enumerate() {
        for j in 0..u.len() {
            for (k, &wv) in w.iter().enumerate() {
                env = env.max(f.value(i, j, k) * rv * rv * wv);
            }
        }
    }
    // interpolated f r^2 w can exceed nodal products only through the
    // r^2 w factor varying inside a cell; pad generously
    rejection_sample(
        |rr, uu, ww| trilerp(f, rr, uu, ww),
        r[0].max(0.0),
        r[r.len() - 1],
        u[u.len() - 1].abs().max(u[0].abs()),
        w[w.len() - 1],
        env * 1.5,
        f.mass(),
        n,
        seed,
        1e-6 * r[r.len() - 1],
    )
}

/// Perturbation families applied to initial data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbKind {
    /// v -> (1 + amplitude) v with the density renormalized to keep mass.
    VelocityDilation,
    /// f -> f (1 + amplitude sin(2 pi r / r_scale)) inside r < r_scale,
    /// renormalized to keep mass.
    InteriorModulation,
}

fn modulation(r: f64, r_scale: f64) -> f64 {
    if r < r_scale {
        (2.0 * PI * r / r_scale).sin()
    } else {
        0.0
    }
}

/// Applies a perturbation to gridded initial data. Amplitude zero returns
/// the input bit for bit.
pub fn perturb_grid(
    f: &GridDensity,
    kind: PerturbKind,
    amplitude: f64,
    r_scale: f64,
) -> Result<GridDensity> {
    match kind {
        PerturbKind::VelocityDilation => {
            let s = 1.0 + amplitude;
            if s <= 0.0 {
                return Err(CammError::domain("velocity dilation needs amplitude > -1"));
            }
            f.rescale(s.powi(-3), 1.0, 1.0 / s)
        }
        PerturbKind::InteriorModulation => {
            if r_scale <= 0.0 {
                return Err(CammError::domain("modulation scale must be positive"));
            }
            let mass0 = f.mass();
            let mut vals = Vec::with_capacity(f.values().len());
            let (nr, nu, nw) = (f.r_axis().len(), f.u_axis().len(), f.w_axis().len());
            for i in 0..nr {
                let fac = 1.0 + amplitude * modulation(f.r_axis()[i], r_scale);
                if fac < 0.0 {
                    return Err(CammError::domain("modulation amplitude too large"));
                }
                for j in 0..nu {
                    for k in 0..nw {
                        vals.push(f.value(i, j, k) * fac);
                    }
                }
            }
            let mut out = GridDensity::new(
                f.r_axis().to_vec(),
                f.u_axis().to_vec(),
                f.w_axis().to_vec(),
                vals,
            )?;
            let mass1 = out.mass();
            out = out.rescale(mass0 / mass1, 1.0, 1.0)?;
            Ok(out)
        }
    }
}

/// Applies a perturbation to an ensemble. Amplitude zero is the identity.
pub fn perturb_ensemble(
    e: &mut ParticleEnsemble,
    kind: PerturbKind,
    amplitude: f64,
    r_scale: f64,
) -> Result<()> {
    match kind {
        PerturbKind::VelocityDilation => {
            let s = 1.0 + amplitude;
            if s <= 0.0 {
                return Err(CammError::domain("velocity dilation needs amplitude > -1"));
            }
            for u in &mut e.u {
                *u *= s;
            }
            for l in &mut e.ell {
                *l *= s * s;
            }
        }
        PerturbKind::InteriorModulation => {
            if r_scale <= 0.0 {
                return Err(CammError::domain("modulation scale must be positive"));
            }
            let mass0 = e.total_mass();
            for i in 0..e.len() {
                let fac = 1.0 + amplitude * modulation(e.r[i], r_scale);
                if fac < 0.0 {
                    return Err(CammError::domain("modulation amplitude too large"));
                }
                e.weights[i] *= fac;
            }
            let mass1 = e.total_mass();
            let fac = mass0 / mass1;
            for w in &mut e.weights {
                *w *= fac;
            }
        }
    }
    Ok(())
}

/// One diagnostic sample along a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticSample {
    pub t: f64,
    pub e_kin: f64,
    pub e_pot: f64,
    pub e_tot: f64,
    /// Distance surrogate built from the conserved Casimir of the initial
    /// data and the frozen steady potential.
    pub d_surrogate: f64,
    /// |grad U_f - grad U_0|^2 from the shell step mass function.
    pub field_dist: f64,
    /// d_surrogate + field_dist / (8 pi): the quantity controlled by the
    /// energy-Casimir stability estimate.
    pub lyapunov_sum: f64,
    pub mass: f64,
    pub l_drift_max: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DiagnosticSeries {
    pub samples: Vec<DiagnosticSample>,
}

impl DiagnosticSeries {
    pub fn csv(&self) -> String {
        let mut s = String::from(
            "t,e_kin,e_pot,e_tot,d_surrogate,field_dist,lyapunov_sum,mass,l_drift_max\n",
        );
        for d in &self.samples {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                d.t,
                d.e_kin,
                d.e_pot,
                d.e_tot,
                d.d_surrogate,
                d.field_dist,
                d.lyapunov_sum,
                d.mass,
                d.l_drift_max
            ));
        }
        s
    }
}

/// Frozen quantities of the reference steady state needed to evaluate the
/// distance surrogate along a run.
pub struct DiagnosticContext {
    state: AnsatzState,
    model: CasimirModel,
    e0: f64,
    /// C(f0) + gamma * integral of L f0 on the reference lattice.
    c0_terms: f64,
    /// integral of (E + gamma L - E0) f0 on the reference lattice.
    lin0: f64,
    /// Casimir + gamma term of the initial data, conserved by the flow.
    c_initial: f64,
}

impl DiagnosticContext {
    /// `f0_grid` must be the steady state sampled on the same lattice as the
    /// perturbed initial data, and `c_initial` the conserved Casimir plus
    /// gamma term of that initial data.
    pub fn new(state: &AnsatzState, f0_grid: &GridDensity, c_initial: f64) -> Result<Self> {
        let model = state.model();
        let c0_terms = phasespace::casimir_functional(f0_grid, &model)?
            + model.gamma * phasespace::angular_term(f0_grid);
        let e0 = state.e0();
        let lin0 = f0_grid.integrate_with(|r, u, w, v| {
            let energy = 0.5 * (u * u + w * w) + state.potential_at(r);
            (energy + model.gamma * r * r * w * w - e0) * v
        });
        Ok(Self {
            state: state.clone(),
            model,
            e0,
            c0_terms,
            lin0,
            c_initial,
        })
    }

    pub fn c_initial(&self) -> f64 {
        self.c_initial
    }

    /// d surrogate: conserved Casimir terms of the evolved data minus those
    /// of the steady state, plus the particle linear part with the steady
    /// potential frozen.
    pub fn d_surrogate(&self, e: &ParticleEnsemble) -> f64 {
        let mut lin = 0.0;
        for i in 0..e.len() {
            let r = e.r[i];
            let energy = 0.5 * (e.u[i] * e.u[i] + e.ell[i] / (r * r)) + self.state.potential_at(r);
            lin += e.weights[i] * (energy + self.model.gamma * e.ell[i] - self.e0);
        }
        self.c_initial - self.c0_terms + lin - self.lin0
    }

    /// 4 pi * integral of (m_f - m_0)^2 / r^2 over radius, with m_f the
    /// step mass function of the sorted shells.
    pub fn field_distance(&self, e: &ParticleEnsemble) -> f64 {
        let n = e.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&a, &b| e.r[a].total_cmp(&e.r[b]).then(a.cmp(&b)));
        let m0_total = self.state.mass();
        let mut acc = 0.0;
        // leading segment: m_f = 0
        let r_first = e.r[order[0]];
        acc += segment_midpoint(&self.state, 0.0, 1e-12, r_first, 8);
        let mut cum = 0.0;
        for (s, &i) in order.iter().enumerate() {
            cum += e.weights[i];
            let a = e.r[i];
            let b = if s + 1 < n { e.r[order[s + 1]] } else { a };
            if b > a {
                acc += segment_midpoint(&self.state, cum, a, b, 1);
            }
        }
        // tail: m_f = total out to where m_0 has saturated, then analytic
        let r_last = e.r[order[n - 1]];
        let r_big = r_last.max(self.state.r_support()) * 1.000001;
        if r_big > r_last {
            acc += segment_midpoint(&self.state, cum, r_last, r_big, 32);
        }
        acc += (cum - m0_total) * (cum - m0_total) / r_big;
        4.0 * PI * acc
    }

    /// Full diagnostic sample; `ell0` supplies the initial angular momenta
    /// for the drift column (zero drift when omitted).
    pub fn sample(&self, e: &ParticleEnsemble, ell0: Option<&[f64]>) -> DiagnosticSample {
        let e_kin = e.kinetic_energy();
        let e_pot = e.potential_energy();
        let d = self.d_surrogate(e);
        let fd = self.field_distance(e);
        let l_drift_max = match ell0 {
            Some(l0) => e
                .ell
                .iter()
                .zip(l0)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max),
            None => 0.0,
        };
        DiagnosticSample {
            t: e.t,
            e_kin,
            e_pot,
            e_tot: e_kin + e_pot,
            d_surrogate: d,
            field_dist: fd,
            lyapunov_sum: d + fd / (8.0 * PI),
            mass: e.total_mass(),
            l_drift_max,
        }
    }
}

fn segment_midpoint(state: &AnsatzState, m_f: f64, a: f64, b: f64, parts: usize) -> f64 {
    let mut acc = 0.0;
    let h = (b - a) / parts as f64;
    for p in 0..parts {
        let r = a + (p as f64 + 0.5) * h;
        let d = m_f - state.m_at(r);
        acc += d * d / (r * r) * h;
    }
    acc
}

/// Configuration of a stability run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub n_particles: usize,
    pub dt: f64,
    pub n_steps: usize,
    /// Steps between diagnostic samples.
    pub cadence: usize,
    pub seed: u64,
    pub kind: PerturbKind,
    pub amplitude: f64,
    /// Substep flagging threshold passed to the ensemble; see
    /// [`ParticleEnsemble::substep_fraction`].
    pub substep_fraction: f64,
}

/// Samples the steady state, perturbs the initial data on the grid before
/// drawing shells, evolves with leapfrog, and records diagnostics.
pub fn run_stability(
    state: &AnsatzState,
    cfg: &StabilityConfig,
) -> Result<(DiagnosticSeries, ParticleEnsemble)> {
    if cfg.dt <= 0.0 || cfg.n_steps == 0 || cfg.cadence == 0 {
        return Err(CammError::domain("need positive dt, steps and cadence"));
    }
    if !(cfg.substep_fraction > 0.0) {
        return Err(CammError::domain("substep fraction must be positive"));
    }
    let r_supp = state.r_support();
    let v_max = (2.0 * state.central_psi()).sqrt() * 1.02;
    let (r, u, w) = GridDensity::uniform_axes(r_supp * 1.001, 96, v_max, 64, 48);
    let f0g = state.sample_grid(r, u, w)?;
    let fpert = perturb_grid(&f0g, cfg.kind, cfg.amplitude, r_supp)?;
    let model = state.model();
    let c_initial = phasespace::casimir_functional(&fpert, &model)?
        + model.gamma * phasespace::angular_term(&fpert);
    let ctx = DiagnosticContext::new(state, &f0g, c_initial)?;
    let mut ens = sample_grid_density(&fpert, cfg.n_particles, cfg.seed)?;
    ens.substep_fraction = cfg.substep_fraction;
    let ell0 = ens.ell.clone();
    let mut series = DiagnosticSeries::default();
    series.samples.push(ctx.sample(&ens, Some(&ell0)));
    for s in 1..=cfg.n_steps {
        ens.step(cfg.dt);
        if s % cfg.cadence == 0 || s == cfg.n_steps {
            series.samples.push(ctx.sample(&ens, Some(&ell0)));
        }
    }
    Ok((series, ens))
}
