//! Deterministic reference for the Monte-Carlo build: the same pair
//! integrals by nested Gauss–Legendre over both cells and, on the cutoff
//! band of the sphere, equispaced azimuths with the polar direction cut at
//! every point where an outgoing velocity changes cell.
//!
//! Only one cell pair per orbit of the cube's symmetry group is integrated;
//! the others are copies with relabelled cells.

use fnv::FnvHashMap;
use rayon::prelude::*;

use super::build::{assemble, maxwell_pair, PairAcc, RowChunk};
use super::{Ansatz, CollisionTensor, TensorError, TensorMeta};
use crate::haar_basis::{FilteredBasis, DEFAULT_QUAD_ORDER};
use crate::kernel::{post_collision_raw, KernelSpec};
use crate::quadrature::{BoxRule, GaussLegendre};
use crate::velocity_map::{jacobian_raw, phi_inv_raw};

pub const ORACLE_MAX_CELLS: usize = 64;

/// Gauss points on every polar segment.
const SEGMENT_ORDER: usize = 3;
/// Bisection steps locating a cell crossing inside one polar panel.
const CROSSING_STEPS: u32 = 26;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub cell_order: usize,
    pub cell_splits: usize,
    /// Equal panels in `cos θ` over `[-cos θ_b, cos θ_b]`, before cutting at
    /// cell crossings.
    pub n_mu: usize,
    /// Equispaced azimuths.
    pub n_phi: usize,
    pub ansatz: Ansatz,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            cell_order: 4,
            cell_splits: 1,
            n_mu: 8,
            n_phi: 32,
            ansatz: Ansatz::default(),
        }
    }
}

/// Orthonormal frame with `u / |u|` as first axis.
fn frame(u: &[f64; 3], r: f64) -> [[f64; 3]; 3] {
    let e1 = [u[0] / r, u[1] / r, u[2] / r];
    let pick = if e1[0].abs() < 0.6 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let d = pick[0] * e1[0] + pick[1] * e1[1] + pick[2] * e1[2];
    let mut e2 = [pick[0] - d * e1[0], pick[1] - d * e1[1], pick[2] - d * e1[2]];
    let n2 = (e2[0] * e2[0] + e2[1] * e2[1] + e2[2] * e2[2]).sqrt();
    e2 = [e2[0] / n2, e2[1] / n2, e2[2] / n2];
    let e3 = [
        e1[1] * e2[2] - e1[2] * e2[1],
        e1[2] * e2[0] - e1[0] * e2[2],
        e1[0] * e2[1] - e1[1] * e2[0],
    ];
    [e1, e2, e3]
}

/// The 48 signed permutations of the axes, as `(perm, signs)`.
fn cube_symmetries() -> Vec<([usize; 3], [i32; 3])> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(48);
    for p in perms {
        for m in 0..8 {
            out.push((p, [0, 1, 2].map(|i| if (m >> i) & 1 == 1 { -1 } else { 1 })));
        }
    }
    out
}

/// `maps[g][i]` is the cell that symmetry `g` sends cell `i` to.
fn cell_maps(basis: &FilteredBasis) -> Vec<Vec<usize>> {
    cube_symmetries()
        .iter()
        .map(|(p, s)| {
            basis
                .kept()
                .iter()
                .map(|idx| {
                    let k = idx.k();
                    basis
                        .position([0, 1, 2].map(|i| s[i] * k[p[i]]))
                        .expect("kept set is symmetric")
                })
                .collect()
        })
        .collect()
}

struct PairResult {
    gain: Vec<(u32, f64)>,
    fwd: f64,
    bwd: f64,
    dropped: f64,
    total: f64,
}

struct Ctx<'a> {
    basis: &'a FilteredBasis,
    spec: &'a KernelSpec,
    ansatz: Ansatz,
    a3: f64,
    cells: Vec<BoxRule>,
    /// Panel edges in `cos θ`.
    panels: Vec<f64>,
    segment: Vec<(f64, f64)>,
    /// `(cos φ, sin φ)`.
    azimuths: Vec<(f64, f64)>,
    dphi: f64,
}

type Label = (Option<usize>, Option<usize>);

fn bisect_crossings(
    a: f64,
    la: Label,
    b: f64,
    lb: Label,
    label: &dyn Fn(f64) -> Label,
    cuts: &mut Vec<f64>,
    depth: u32,
) {
    let m = 0.5 * (a + b);
    if depth == 0 {
        cuts.push(m);
        return;
    }
    let lm = label(m);
    if lm != la {
        bisect_crossings(a, la, m, lm, label, cuts, depth - 1);
    }
    if lm != lb {
        bisect_crossings(m, lm, b, lb, label, cuts, depth - 1);
    }
}

fn integrate_pair(ctx: &Ctx, kappa: usize, ks: usize) -> PairAcc {
    let (basis, ansatz) = (ctx.basis, &ctx.ansatz);
    let same = ks == kappa;
    let mult = if same { 0.5 } else { 1.0 };
    let mut acc = PairAcc::default();
    let mut cuts = Vec::new();
    for (vb, wv) in ctx.cells[kappa].points.iter().zip(&ctx.cells[kappa].weights) {
        let v = phi_inv_raw(vb);
        let jv = jacobian_raw(vb);
        for (vsb, wvs) in ctx.cells[ks].points.iter().zip(&ctx.cells[ks].weights) {
            let vs = phi_inv_raw(vsb);
            let u = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
            let r = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            if r == 0.0 {
                continue;
            }
            let radial = ctx.spec.radial(r) * ctx.spec.b0();
            if radial == 0.0 {
                continue;
            }
            let meas = mult * ctx.a3 * wv * wvs * jv * jacobian_raw(vsb) * radial * ctx.dphi;
            let base = meas / (ansatz.omega(vb, &v) * ansatz.omega(vsb, &vs));
            let rbase = meas * maxwell_pair(&v, &vs);
            let e = frame(&u, r);
            for &(cs, sn) in &ctx.azimuths {
                let sigma_at = |mu: f64| -> [f64; 3] {
                    let s = (1.0 - mu * mu).sqrt();
                    std::array::from_fn(|d| mu * e[0][d] + s * (cs * e[1][d] + sn * e[2][d]))
                };
                let label = |mu: f64| -> Label {
                    let (p, ps) = post_collision_raw(&v, &vs, &sigma_at(mu));
                    (basis.locate(&p), basis.locate(&ps))
                };
                cuts.clear();
                let mut prev = (ctx.panels[0], label(ctx.panels[0]));
                cuts.push(prev.0);
                for &m in &ctx.panels[1..] {
                    let l = label(m);
                    if l != prev.1 {
                        bisect_crossings(prev.0, prev.1, m, l, &label, &mut cuts, CROSSING_STEPS);
                    }
                    cuts.push(m);
                    prev = (m, l);
                }
                for w in cuts.windows(2) {
                    let len = w[1] - w[0];
                    for &(x, wx) in &ctx.segment {
                        let sigma = sigma_at(w[0] + len * x);
                        acc.deposit(basis, ansatz, same, &v, &vs, &sigma, base * wx * len, rbase * wx * len);
                    }
                }
            }
        }
    }
    acc
}

pub fn oracle_build(
    basis: &FilteredBasis,
    spec: &KernelSpec,
    opts: &OracleOptions,
) -> Result<CollisionTensor, TensorError> {
    let n = basis.len();
    if n > ORACLE_MAX_CELLS {
        return Err(TensorError::OracleSize {
            limit: ORACLE_MAX_CELLS,
            cells: n,
        });
    }
    let ansatz = opts.ansatz;
    let rule = GaussLegendre::new(opts.cell_order);
    let cb = spec.theta_b().cos();
    let dphi = std::f64::consts::TAU / opts.n_phi as f64;
    let ctx = Ctx {
        basis,
        spec,
        ansatz,
        a3: basis.amplitude().powi(3),
        cells: (0..n)
            .map(|i| {
                let c = basis.cell(i);
                BoxRule::sectored(&rule, c.bar_lo, c.bar_hi, opts.cell_splits)
            })
            .collect(),
        panels: (0..=opts.n_mu)
            .map(|i| -cb + 2.0 * cb * i as f64 / opts.n_mu as f64)
            .collect(),
        segment: GaussLegendre::new(SEGMENT_ORDER).on_interval(0.0, 1.0).collect(),
        azimuths: (0..opts.n_phi)
            .map(|j| {
                let (sn, cs) = ((j as f64 + 0.5) * dphi).sin_cos();
                (cs, sn)
            })
            .collect(),
        dphi,
    };

    // orbit representative (a <= b) of every pair i <= j, the symmetry
    // taking the pair onto it, and whether it swaps the two cells
    let maps = cell_maps(basis);
    let mut reps: Vec<(usize, usize)> = Vec::new();
    let mut rep_pos: FnvHashMap<(usize, usize), usize> = FnvHashMap::default();
    let mut orbit = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let mut best: Option<((usize, usize), usize, bool)> = None;
            for (g, m) in maps.iter().enumerate() {
                let (a, b) = (m[i], m[j]);
                let key = (a.min(b), a.max(b));
                if best.is_none_or(|(k, _, _)| key < k) {
                    best = Some((key, g, a > b));
                }
            }
            let (key, g, swapped) = best.expect("identity is a symmetry");
            let r = *rep_pos.entry(key).or_insert_with(|| {
                reps.push(key);
                reps.len() - 1
            });
            orbit.push((r, g, swapped));
        }
    }
    let results: Vec<PairResult> = reps
        .par_iter()
        .map(|&(a, b)| {
            let acc = integrate_pair(&ctx, a, b);
            PairResult {
                gain: acc.gain.into_iter().map(|(k, (s, _))| (k, s)).collect(),
                fwd: acc.fwd.0,
                bwd: acc.bwd.0,
                dropped: acc.dropped,
                total: acc.total,
            }
        })
        .collect();
    let inverse: Vec<Vec<usize>> = maps
        .iter()
        .map(|m| {
            let mut inv = vec![0; n];
            for (i, &j) in m.iter().enumerate() {
                inv[j] = i;
            }
            inv
        })
        .collect();

    let mut pairs = orbit.into_iter();
    let chunks: Vec<RowChunk> = (0..n)
        .map(|kappa| {
            let mut chunk = RowChunk::default();
            let mut acc = PairAcc::default();
            for ks in kappa..n {
                let (r, g, swapped) = pairs.next().expect("one entry per pair");
                let res = &results[r];
                acc.clear();
                for &(k, s) in &res.gain {
                    acc.gain.insert(inverse[g][k as usize] as u32, (s, 0.0));
                }
                let (f, b) = if swapped {
                    (res.bwd, res.fwd)
                } else {
                    (res.fwd, res.bwd)
                };
                acc.fwd = (f, 0.0);
                acc.bwd = (b, 0.0);
                acc.dropped = res.dropped;
                acc.total = res.total;
                chunk.absorb(ks as u32, &mut acc, false);
            }
            chunk.finish();
            chunk
        })
        .collect();
    let mass = ansatz.mass_diagonal(basis, DEFAULT_QUAD_ORDER);
    let (gain, loss, _, dropped) = assemble(basis, chunks, 1.0, false, usize::MAX, &mass)?;
    Ok(CollisionTensor {
        meta: TensorMeta {
            level: basis.level(),
            delta: basis.delta(),
            kernel: *spec,
            seed: 0,
            samples_per_pair: 0,
            ansatz,
            dropped_mass: dropped,
        },
        gain,
        loss,
        variance: None,
    })
}
