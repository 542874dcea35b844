//! Runtime checks of the four structural assumptions on the filtered Haar
//! projection. Every sup-norm estimate compares per-cell Gauss averages
//! against pointwise values on a regular interior grid of each kept cell.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::FilteredBasis;
use crate::kernel::{post_collision_raw, sample_sigma};
use crate::velocity_map::{bracket_sq, max_norm, phi_inv_raw};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    /// Gauss points per axis per sub-box for cell averages.
    pub quad_order: usize,
    /// Each cell is split into `quad_splits^3` sub-boxes.
    pub quad_splits: usize,
    /// Pointwise samples per axis per cell.
    pub samples_per_axis: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            quad_order: super::DEFAULT_QUAD_ORDER,
            quad_splits: 2,
            samples_per_axis: 9,
        }
    }
}

/// `(|vb| / (1 - |vb|))^2`, the squared physical max norm.
fn x_of(m: f64) -> f64 {
    let r = m / (1.0 - m);
    r * r
}

/// `eta(vb) = 1 / (1 + |vb|^2 / (1 - |vb|)^2)`.
fn eta(m: f64) -> f64 {
    1.0 / (1.0 + x_of(m))
}

#[derive(Debug, Clone, Copy)]
struct CellScan {
    min_ratio: (f64, [f64; 3]),
    max_ratio: (f64, [f64; 3]),
    max_diff: (f64, [f64; 3]),
    lo_val: f64,
    hi_val: f64,
}

/// For each kept cell, compares the cell average of `f(|vb|)` with the
/// pointwise values on the sample grid.
fn scan_cells<F>(basis: &FilteredBasis, opts: &VerifyOptions, f: F) -> Vec<CellScan>
where
    F: Fn(f64) -> f64 + Sync,
{
    let avgs = basis
        .cell_averages(|p| f(max_norm(p)), opts.quad_order, opts.quad_splits)
        .expect("verifier quadrature order is positive");
    let n = opts.samples_per_axis.max(1);
    (0..basis.len())
        .into_par_iter()
        .map(|i| {
            let c = basis.cell(i);
            let avg = avgs[i];
            let mut s = CellScan {
                min_ratio: (f64::INFINITY, [0.0; 3]),
                max_ratio: (f64::NEG_INFINITY, [0.0; 3]),
                max_diff: (0.0, [0.0; 3]),
                lo_val: f64::INFINITY,
                hi_val: f64::NEG_INFINITY,
            };
            for a in 0..n {
                for b in 0..n {
                    for d in 0..n {
                        let mut p = [0.0; 3];
                        for (axis, j) in [a, b, d].into_iter().enumerate() {
                            let t = (j as f64 + 0.5) / n as f64;
                            p[axis] = c.bar_lo[axis] + t * (c.bar_hi[axis] - c.bar_lo[axis]);
                        }
                        let val = f(max_norm(&p));
                        let r = avg / val;
                        if r < s.min_ratio.0 {
                            s.min_ratio = (r, p);
                        }
                        if r > s.max_ratio.0 {
                            s.max_ratio = (r, p);
                        }
                        let diff = (val - avg).abs();
                        if diff > s.max_diff.0 {
                            s.max_diff = (diff, p);
                        }
                    }
                }
            }
            // Radial profile: extremes over the cell sit at the min/max of |vb|.
            let (mlo, mhi) = norm_range(&c.bar_lo, &c.bar_hi);
            let (ya, yb) = (f(mlo), f(mhi));
            s.lo_val = ya.min(yb);
            s.hi_val = ya.max(yb);
            s
        })
        .collect()
}

/// Min and max of the max norm over a box.
fn norm_range(lo: &[f64; 3], hi: &[f64; 3]) -> (f64, f64) {
    let mut mn: f64 = 0.0;
    let mut mx: f64 = 0.0;
    for d in 0..3 {
        let near = if lo[d] <= 0.0 && hi[d] >= 0.0 {
            0.0
        } else {
            lo[d].abs().min(hi[d].abs())
        };
        mn = mn.max(near);
        mx = mx.max(lo[d].abs().max(hi[d].abs()));
    }
    (mn, mx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quadruple {
    pub v: [f64; 3],
    pub v_star: [f64; 3],
    pub sigma: [f64; 3],
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption1Report {
    /// Max deviation of the projected constant 1 from the kept-box indicator.
    pub projection_defect: f64,
    pub samples: usize,
    /// Largest `kappa(v'*) + kappa(v') - kappa(v) - kappa(v*)`, relative to
    /// `kappa(v) + kappa(v*)`.
    pub max_defect: f64,
    /// Samples where at least one post-collision velocity left the kept box.
    pub escaped: usize,
    pub counterexample: Option<Quadruple>,
    pub passed: bool,
}

/// Checks that `P_N 1` is the indicator of the kept box, and that
/// `kappa(v) = (1 + |v|_2^2) chi_box(v)` never increases through a collision
/// with both pre-collision velocities in the box.
pub fn verify_assumption1(basis: &FilteredBasis, samples: usize, seed: u64) -> Assumption1Report {
    let tol = 1e-12;
    let vals = basis.cell_averages(|_| 1.0, 2, 1).expect("order 2 is valid");
    let mut projection_defect = vals.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let z = basis.zeta();
    let lo = (0..basis.len())
        .map(|i| basis.cell(i).bar_lo[0])
        .fold(f64::INFINITY, f64::min);
    let hi = (0..basis.len())
        .map(|i| basis.cell(i).bar_hi[0])
        .fold(f64::NEG_INFINITY, f64::max);
    projection_defect = projection_defect.max((lo + z).abs()).max((hi - z).abs());

    let kappa = |v: &[f64; 3]| if basis.locate(v).is_some() { bracket_sq(v) } else { 0.0 };
    let chunk = 1 << 14;
    let chunks = samples.div_ceil(chunk);
    let results: Vec<(f64, usize, Option<Quadruple>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let n = chunk.min(samples - c * chunk);
            let mut worst = f64::NEG_INFINITY;
            let mut escaped = 0;
            let mut bad = None;
            for _ in 0..n {
                let vb: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-z..z));
                let vsb: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-z..z));
                let (v, vs) = (phi_inv_raw(&vb), phi_inv_raw(&vsb));
                let sigma = sample_sigma(&mut rng);
                let (vp, vps) = post_collision_raw(&v, &vs, &sigma);
                let before = kappa(&v) + kappa(&vs);
                let after = kappa(&vp) + kappa(&vps);
                if basis.locate(&vp).is_none() || basis.locate(&vps).is_none() {
                    escaped += 1;
                }
                let rel = (after - before) / before;
                if rel > worst {
                    worst = rel;
                }
                if rel > tol && bad.is_none() {
                    bad = Some(Quadruple {
                        v,
                        v_star: vs,
                        sigma,
                        defect: after - before,
                    });
                }
            }
            (worst, escaped, bad)
        })
        .collect();
    let max_defect = results.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let escaped = results.iter().map(|r| r.1).sum();
    let counterexample = results.iter().find_map(|r| r.2);
    Assumption1Report {
        projection_defect,
        samples,
        max_defect,
        escaped,
        passed: projection_defect <= tol && counterexample.is_none(),
        counterexample,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption2Report {
    pub s: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub min_point: [f64; 3],
    pub max_point: [f64; 3],
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub passed: bool,
}

/// Sandwich `3^-|s| <= P_N[(1-|vb|)^s] / (1-|vb|)^s <= 3^|s|`.
pub fn verify_assumption2(basis: &FilteredBasis, s: f64, opts: &VerifyOptions) -> Assumption2Report {
    let scans = scan_cells(basis, opts, |m| (1.0 - m).powf(s));
    let (mut mn, mut mx) = ((f64::INFINITY, [0.0; 3]), (f64::NEG_INFINITY, [0.0; 3]));
    for c in &scans {
        if c.min_ratio.0 < mn.0 {
            mn = c.min_ratio;
        }
        if c.max_ratio.0 > mx.0 {
            mx = c.max_ratio;
        }
    }
    let upper = 3f64.powf(s.abs());
    let lower = 1.0 / upper;
    let slack = 1e-12;
    Assumption2Report {
        s,
        min_ratio: mn.0,
        max_ratio: mx.0,
        min_point: mn.1,
        max_point: mx.1,
        lower_bound: lower,
        upper_bound: upper,
        passed: mn.0 >= lower * (1.0 - slack) && mx.0 <= upper * (1.0 + slack),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption3Report {
    pub n: u32,
    /// `sup |x^n - P_N x^n|` with `x = (|vb|/(1-|vb|))^2` over the kept box.
    pub measured_eps: f64,
    pub worst_point: [f64; 3],
    /// Same sup for `eta^-n = (1 + x)^n`; equal to `measured_eps` when n = 1.
    pub eta_power_eps: f64,
    /// Local error on the central cell.
    pub central_eps: f64,
    pub interior_bound: f64,
    pub central_bound: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Printed bound `2^(1-N) 2n D^(2n-1) / (1-D)^(2n+1) + (2^-N / (1-2^-N))^(2n)`,
/// split into its interior and central-cell terms.
pub fn assumption3_bound(level: u32, delta: f64, n: u32) -> (f64, f64) {
    let n = n as i32;
    let interior = 2f64.powi(1 - level as i32) * 2.0 * n as f64 * delta.powi(2 * n - 1) / (1.0 - delta).powi(2 * n + 1);
    let h = 2f64.powi(-(level as i32));
    let central = (h / (1.0 - h)).powi(2 * n);
    (interior, central)
}

pub fn verify_assumption3(basis: &FilteredBasis, n: u32, opts: &VerifyOptions) -> Assumption3Report {
    let n = n.max(1);
    let scans = scan_cells(basis, opts, |m| x_of(m).powi(n as i32));
    let (mut eps, mut worst) = (0.0, [0.0; 3]);
    for c in &scans {
        if c.max_diff.0 > eps {
            (eps, worst) = c.max_diff;
        }
    }
    let eta_eps = if n == 1 {
        eps
    } else {
        scan_cells(basis, opts, |m| eta(m).powi(-(n as i32)))
            .iter()
            .map(|c| c.max_diff.0)
            .fold(0.0, f64::max)
    };
    let central = basis.position([0, 0, 0]).map(|i| scans[i].max_diff.0).unwrap_or(0.0);
    let (interior_bound, central_bound) = assumption3_bound(basis.level(), basis.delta(), n);
    let bound = interior_bound + central_bound;
    Assumption3Report {
        n,
        measured_eps: eps,
        worst_point: worst,
        eta_power_eps: eta_eps,
        central_eps: central,
        interior_bound,
        central_bound,
        bound,
        passed: eps <= bound && central <= central_bound * (1.0 + 1e-12),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption4Report {
    pub a: f64,
    pub q: f64,
    /// Smallest `K` with `P_N W <= K W` on the sample grid.
    pub kbar: f64,
    pub kbar_point: [f64; 3],
    /// Largest per-cell ratio divided by its structural bound
    /// `2 exp(a (D/(1-D))^(2q)) * eta_max/eta_min`; at most 1 when the
    /// structure holds.
    pub structural_ratio: f64,
    pub passed: bool,
}

/// Weight `W(vb) = eta(vb) exp(a (|vb|/(1-|vb|))^(2q))`.
pub fn verify_assumption4(basis: &FilteredBasis, a: f64, q: f64, opts: &VerifyOptions) -> Assumption4Report {
    let w = |m: f64| eta(m) * (a * x_of(m).powf(q)).exp();
    let scans = scan_cells(basis, opts, w);
    let etas = scan_cells(basis, opts, eta);
    let d = basis.delta();
    let growth = 2.0 * (a * (d / (1.0 - d)).powf(2.0 * q)).exp();
    let (mut kbar, mut point) = (0.0, [0.0; 3]);
    let mut structural: f64 = 0.0;
    for (c, e) in scans.iter().zip(etas.iter()) {
        if c.max_ratio.0 > kbar {
            (kbar, point) = c.max_ratio;
        }
        let bound = growth * e.hi_val / e.lo_val;
        structural = structural.max(c.max_ratio.0 / bound);
    }
    Assumption4Report {
        a,
        q,
        kbar,
        kbar_point: point,
        structural_ratio: structural,
        passed: kbar.is_finite() && structural <= 1.0,
    }
}
