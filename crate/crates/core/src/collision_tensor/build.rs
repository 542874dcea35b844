//! Monte-Carlo tensor assembly.
//!
//! The estimator works on the weak form: pre-collision pairs `(v, v*)` are
//! drawn from a pair of cells and the kernel-weighted product of trial
//! functions is deposited on the cells of the outgoing velocities. Each
//! unordered cell pair `κ <= κ*` is visited once with both test points
//! `(v', v'*)` credited, which is the symmetrised form of the same integral.

use fnv::FnvHashMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Ansatz, CollisionTensor, GainTensor, LossTensor, TensorError, TensorMeta, TensorVariance};
use crate::haar_basis::{CellGeometry, FilteredBasis, DEFAULT_QUAD_ORDER};
use crate::kernel::{kernel_eval_raw, post_collision_raw, sample_sigma, KernelSpec};
use crate::velocity_map::{euclid_sq, jacobian_raw, phi_inv_raw};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub samples_per_pair: u64,
    pub seed: u64,
    pub ansatz: Ansatz,
    /// Also accumulate per-entry sums of squares.
    pub track_variance: bool,
    pub max_gain_entries: usize,
    /// Gauss order for the per-cell Jacobian volumes in the mass matrix.
    pub mass_order: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            samples_per_pair: 16,
            seed: 0,
            ansatz: Ansatz::default(),
            track_variance: false,
            max_gain_entries: 400_000_000,
            mass_order: DEFAULT_QUAD_ORDER,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// RNG seed of unordered pair number `pair`: `splitmix64(seed ^ splitmix64(pair))`.
pub fn pair_seed(seed: u64, pair: u64) -> u64 {
    splitmix64(seed ^ splitmix64(pair))
}

/// Index of the unordered pair `(i, j)`, `i <= j`, in row-major upper
/// triangle order.
pub(crate) fn pair_index(n: usize, i: usize, j: usize) -> u64 {
    (i * n - i * (i + 1) / 2 + j) as u64
}

/// Accumulator for one unordered cell pair.
#[derive(Default)]
pub(crate) struct PairAcc {
    pub gain: FnvHashMap<u32, (f64, f64)>,
    pub fwd: (f64, f64),
    pub bwd: (f64, f64),
    pub dropped: f64,
    pub total: f64,
}

/// Unit-Maxwellian product `M(v) M(v*)`; the reference density for the
/// dropped fraction.
#[inline]
pub(crate) fn maxwell_pair(v: &[f64; 3], vs: &[f64; 3]) -> f64 {
    let c = (2.0 * std::f64::consts::PI).powi(-3);
    c * (-0.5 * (euclid_sq(v) + euclid_sq(vs))).exp()
}

impl PairAcc {
    pub fn clear(&mut self) {
        self.gain.clear();
        self.fwd = (0.0, 0.0);
        self.bwd = (0.0, 0.0);
        self.dropped = 0.0;
        self.total = 0.0;
    }

    /// One quadrature/sample point. `w` already includes the measure, the
    /// kernel, `A^3`, the symmetrisation factor and `1/(ω(v)ω(v*))`; `r` is
    /// the same point's measure times kernel times `M(v) M(v*)`.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn deposit(
        &mut self,
        basis: &FilteredBasis,
        ansatz: &Ansatz,
        same: bool,
        v: &[f64; 3],
        vs: &[f64; 3],
        sigma: &[f64; 3],
        w: f64,
        r: f64,
    ) {
        let (tf, tb) = (w * ansatz.theta(v), w * ansatz.theta(vs));
        if same {
            let x = tf + tb;
            self.fwd.0 += x;
            self.fwd.1 += x * x;
        } else {
            self.fwd.0 += tf;
            self.fwd.1 += tf * tf;
            self.bwd.0 += tb;
            self.bwd.1 += tb * tb;
        }
        let (vp, vps) = post_collision_raw(v, vs, sigma);
        let g1 = w * ansatz.theta(&vp);
        let g2 = w * ansatz.theta(&vps);
        self.total += 2.0 * r;
        let k1 = basis.locate(&vp);
        let k2 = basis.locate(&vps);
        match (k1, k2) {
            (Some(a), Some(b)) if a == b => self.add(a as u32, g1 + g2),
            _ => {
                match k1 {
                    Some(a) => self.add(a as u32, g1),
                    None => self.dropped += r,
                }
                match k2 {
                    Some(b) => self.add(b as u32, g2),
                    None => self.dropped += r,
                }
            }
        }
    }

    #[inline]
    fn add(&mut self, k: u32, x: f64) {
        if x > 0.0 {
            let e = self.gain.entry(k).or_insert((0.0, 0.0));
            e.0 += x;
            e.1 += x * x;
        }
    }
}

/// Everything produced for one outer cell κ: pairs `(κ, κ*)` for `κ* >= κ`.
#[derive(Default)]
pub(crate) struct RowChunk {
    /// `(k, l', sum, sumsq)` sorted by `(k, l')`.
    pub gain: Vec<(u32, u32, f64, f64)>,
    /// `L[κ][κ*]` for `κ* = κ..n`.
    pub fwd: Vec<(f64, f64)>,
    /// `L[κ*][κ]` for `κ* = κ..n`; the diagonal lives in `fwd`.
    pub bwd: Vec<(f64, f64)>,
    pub dropped: f64,
    pub total: f64,
}

impl RowChunk {
    pub fn absorb(&mut self, lp: u32, acc: &mut PairAcc, keep_sq: bool) {
        let start = self.gain.len();
        self.gain.extend(
            acc.gain
                .drain()
                .map(|(k, (s, q))| (k, lp, s, if keep_sq { q } else { 0.0 })),
        );
        self.gain[start..].sort_unstable_by_key(|e| e.0);
        self.fwd.push(acc.fwd);
        self.bwd.push(acc.bwd);
        self.dropped += acc.dropped;
        self.total += acc.total;
    }

    pub fn finish(&mut self) {
        self.gain.sort_unstable_by_key(|e| (e.0, e.1));
    }
}

/// Merges the per-κ chunks (in κ order) into frozen tensors and divides
/// every row by its mass.
pub(crate) fn assemble(
    basis: &FilteredBasis,
    chunks: Vec<RowChunk>,
    samples: f64,
    track_variance: bool,
    cap: usize,
    mass: &[f64],
) -> Result<(GainTensor, LossTensor, Option<TensorVariance>, f64), TensorError> {
    let n = basis.len();
    let count: usize = chunks.iter().map(|c| c.gain.len()).sum();
    if count > cap {
        return Err(TensorError::EntryCap { cap, reached: count });
    }

    let mut row_ptr = vec![0usize; n + 1];
    for c in &chunks {
        for e in &c.gain {
            row_ptr[e.0 as usize + 1] += 1;
        }
    }
    for i in 0..n {
        row_ptr[i + 1] += row_ptr[i];
    }
    let mut next = row_ptr.clone();
    let mut l = vec![0u32; count];
    let mut lp = vec![0u32; count];
    let mut w = vec![0f64; count];
    let mut gv = if track_variance { vec![0f64; count] } else { Vec::new() };
    let mut loss = vec![0f64; n * n];
    let mut lv = if track_variance { vec![0f64; n * n] } else { Vec::new() };
    let var = |s: f64, q: f64| (q - s * s / samples).max(0.0);
    let (mut dropped, mut total) = (0.0, 0.0);
    for (kappa, c) in chunks.into_iter().enumerate() {
        for (k, lpi, s, q) in c.gain {
            let k = k as usize;
            let pos = next[k];
            next[k] += 1;
            l[pos] = kappa as u32;
            lp[pos] = lpi;
            w[pos] = s / mass[k];
            if track_variance {
                gv[pos] = var(s, q) / (mass[k] * mass[k]);
            }
        }
        for (off, (f, b)) in c.fwd.iter().zip(c.bwd.iter()).enumerate() {
            let ks = kappa + off;
            loss[kappa * n + ks] = f.0 / mass[kappa];
            if ks != kappa {
                loss[ks * n + kappa] = b.0 / mass[ks];
            }
            if track_variance {
                lv[kappa * n + ks] = var(f.0, f.1) / (mass[kappa] * mass[kappa]);
                if ks != kappa {
                    lv[ks * n + kappa] = var(b.0, b.1) / (mass[ks] * mass[ks]);
                }
            }
        }
        dropped += c.dropped;
        total += c.total;
    }
    let frac = if total > 0.0 { dropped / total } else { 0.0 };
    let variance = track_variance.then_some(TensorVariance { gain: gv, loss: lv });
    Ok((
        GainTensor::from_rows(row_ptr, l, lp, w),
        LossTensor::from_dense(n, loss),
        variance,
        frac,
    ))
}

#[inline]
fn uniform_in(rng: &mut ChaCha8Rng, c: &CellGeometry) -> [f64; 3] {
    std::array::from_fn(|d| c.bar_lo[d] + (c.bar_hi[d] - c.bar_lo[d]) * rng.gen::<f64>())
}

/// Monte-Carlo build. Deterministic for a fixed `(basis, spec, opts)`
/// regardless of thread count.
pub fn build(basis: &FilteredBasis, spec: &KernelSpec, opts: &BuildOptions) -> Result<CollisionTensor, TensorError> {
    if opts.samples_per_pair == 0 {
        return Err(TensorError::Samples);
    }
    let n = basis.len();
    let s = opts.samples_per_pair;
    let a3 = basis.amplitude().powi(3);
    let vol = basis.cell_bar_volume();
    let base = vol * vol * 4.0 * std::f64::consts::PI / s as f64 * a3;
    let ansatz = opts.ansatz;

    let chunks: Vec<RowChunk> = (0..n)
        .into_par_iter()
        .map(|kappa| {
            let ck = basis.cell(kappa);
            let mut chunk = RowChunk::default();
            let mut acc = PairAcc::default();
            for ks in kappa..n {
                let cs = basis.cell(ks);
                let same = ks == kappa;
                let mult = if same { 0.5 } else { 1.0 };
                let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(opts.seed, pair_index(n, kappa, ks)));
                acc.clear();
                for _ in 0..s {
                    let vb = uniform_in(&mut rng, &ck);
                    let vsb = uniform_in(&mut rng, &cs);
                    let sigma = sample_sigma(&mut rng);
                    let v = phi_inv_raw(&vb);
                    let vs = phi_inv_raw(&vsb);
                    let b = kernel_eval_raw(spec, &v, &vs, &sigma);
                    if b == 0.0 {
                        continue;
                    }
                    let (j, js) = (jacobian_raw(&vb), jacobian_raw(&vsb));
                    let m = base * mult * b * j * js;
                    let w = m / (ansatz.omega(&vb, &v) * ansatz.omega(&vsb, &vs));
                    acc.deposit(basis, &ansatz, same, &v, &vs, &sigma, w, m * maxwell_pair(&v, &vs));
                }
                chunk.absorb(ks as u32, &mut acc, opts.track_variance);
            }
            chunk.finish();
            chunk
        })
        .collect();

    let mass = ansatz.mass_diagonal(basis, opts.mass_order);
    let (gain, loss, variance, dropped) = assemble(
        basis,
        chunks,
        s as f64,
        opts.track_variance,
        opts.max_gain_entries,
        &mass,
    )?;
    Ok(CollisionTensor {
        meta: TensorMeta {
            level: basis.level(),
            delta: basis.delta(),
            kernel: *spec,
            seed: opts.seed,
            samples_per_pair: s,
            ansatz,
            dropped_mass: dropped,
        },
        gain,
        loss,
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (FilteredBasis, KernelSpec) {
        (
            FilteredBasis::new(2, 0.75).unwrap(),
            KernelSpec::normalized(0.5, std::f64::consts::PI / 6.0, None).unwrap(),
        )
    }

    #[test]
    fn pair_index_enumerates_upper_triangle() {
        let n = 7;
        let mut expect = 0;
        for i in 0..n {
            for j in i..n {
                assert_eq!(pair_index(n, i, j), expect);
                expect += 1;
            }
        }
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let (b, k) = small();
        let opts = BuildOptions {
            samples_per_pair: 200,
            seed: 5,
            ..Default::default()
        };
        let t1 = build(&b, &k, &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let t2 = pool.install(|| build(&b, &k, &opts).unwrap());
        assert_eq!(t1, t2);
        let t3 = build(&b, &k, &BuildOptions { seed: 6, ..opts }).unwrap();
        assert_ne!(t1.gain, t3.gain);
    }

    #[test]
    fn zero_amplitude_gives_empty_tensors() {
        let (b, _) = small();
        let k = KernelSpec::with_b0(0.5, 0.5, 0.0, None).unwrap();
        let t = build(
            &b,
            &k,
            &BuildOptions {
                samples_per_pair: 50,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(t.gain.is_empty());
        assert_eq!(t.loss.nonzero_count(), 0);
        assert_eq!(t.meta.dropped_mass, 0.0);
    }

    #[test]
    fn loss_positive_and_gain_rows_sorted() {
        let (b, k) = small();
        let t = build(
            &b,
            &k,
            &BuildOptions {
                samples_per_pair: 400,
                ..Default::default()
            },
        )
        .unwrap();
        for i in 0..b.len() {
            for j in 0..b.len() {
                assert!(t.loss.get(i, j) > 0.0);
            }
            let (ls, lps, ws) = t.gain.row(i);
            for e in 1..ls.len() {
                assert!((ls[e - 1], lps[e - 1]) < (ls[e], lps[e]));
            }
            assert!(ws.iter().all(|&w| w > 0.0));
            assert!(ls.iter().zip(lps).all(|(a, b)| a <= b));
        }
        assert!(t.meta.dropped_mass > 0.0 && t.meta.dropped_mass < 0.5);
    }

    // Energy conservation: a target cell whose smallest |v'|^2 already
    // exceeds the largest |v|^2 + |v*|^2 of the source pair cannot be hit.
    #[test]
    fn energy_forbidden_entries_absent() {
        let b = FilteredBasis::new(3, 0.9).unwrap();
        let k = KernelSpec::normalized(0.5, std::f64::consts::PI / 6.0, None).unwrap();
        let t = build(
            &b,
            &k,
            &BuildOptions {
                samples_per_pair: 64,
                ..Default::default()
            },
        )
        .unwrap();
        let (emin, emax): (Vec<f64>, Vec<f64>) = (0..b.len())
            .map(|i| {
                let e = b.v_extent_of(i);
                let lo: f64 = e
                    .iter()
                    .map(|(a, c)| {
                        if *a <= 0.0 && *c >= 0.0 {
                            0.0
                        } else {
                            a.abs().min(c.abs()).powi(2)
                        }
                    })
                    .sum();
                let hi: f64 = e.iter().map(|(a, c)| a.abs().max(c.abs()).powi(2)).sum();
                (lo, hi)
            })
            .unzip();
        let mut forbidden = 0usize;
        for kk in 0..b.len() {
            for l in 0..b.len() {
                for lp in l..b.len() {
                    if emin[kk] > emax[l] + emax[lp] {
                        forbidden += 1;
                        assert_eq!(t.gain.get(kk, l, lp), 0.0);
                    }
                }
            }
        }
        assert!(forbidden > 1000, "{forbidden}");
    }

    #[test]
    fn dropped_fraction_shrinks_with_delta() {
        let k = KernelSpec::normalized(0.5, std::f64::consts::PI / 6.0, None).unwrap();
        let opts = BuildOptions {
            samples_per_pair: 100,
            ..Default::default()
        };
        let d: Vec<f64> = [0.45, 0.7, 0.95]
            .iter()
            .map(|&d| {
                build(&FilteredBasis::new(3, d).unwrap(), &k, &opts)
                    .unwrap()
                    .meta
                    .dropped_mass
            })
            .collect();
        assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
    }

    #[test]
    fn entry_cap_is_enforced() {
        let (b, k) = small();
        let opts = BuildOptions {
            samples_per_pair: 50,
            max_gain_entries: 10,
            ..Default::default()
        };
        assert!(matches!(
            build(&b, &k, &opts),
            Err(TensorError::EntryCap { cap: 10, .. })
        ));
        assert_eq!(
            build(
                &b,
                &k,
                &BuildOptions {
                    samples_per_pair: 0,
                    ..Default::default()
                }
            ),
            Err(TensorError::Samples)
        );
    }

    // Weighted energy pairing: gain can only lose energy to the filter.
    #[test]
    fn energy_flux_balance() {
        let (b, k) = small();
        let t = build(
            &b,
            &k,
            &BuildOptions {
                samples_per_pair: 300,
                ..Default::default()
            },
        )
        .unwrap();
        let mass = Ansatz::default().mass_diagonal(&b, 6);
        let ones = vec![1.0; b.len()];
        let mut g = vec![0.0; b.len()];
        let mut l = vec![0.0; b.len()];
        t.contract(&ones, &mut g, &mut l);
        let gain: f64 = g.iter().zip(&mass).map(|(x, m)| x * m).sum();
        let loss: f64 = l.iter().zip(&mass).map(|(x, m)| x * m).sum();
        assert!(gain < loss);
        assert!((loss - gain) / loss < 0.5);
    }

    #[test]
    fn rhs_variance_from_entry_variances() {
        let (b, k) = small();
        let plain = build(
            &b,
            &k,
            &BuildOptions {
                samples_per_pair: 200,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(plain.rhs_variance(&vec![1.0; b.len()]).is_none());
        let t = build(
            &b,
            &k,
            &BuildOptions {
                samples_per_pair: 200,
                track_variance: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(t.gain, plain.gain);
        let var = t.variance.as_ref().unwrap();
        let j = 13;
        let mut a = vec![0.0; b.len()];
        a[j] = 2.0;
        let got = t.rhs_variance(&a).unwrap();
        let mut want = vec![0.0; b.len()];
        for (i, (kk, l, lp, _)) in t.gain.iter().enumerate() {
            if l == j && lp == j {
                want[kk] += 16.0 * var.gain[i];
            }
        }
        want[j] += 16.0 * var.loss[j * b.len() + j];
        for kk in 0..b.len() {
            assert!((got[kk] - want[kk]).abs() <= 1e-14 * want[kk].max(1e-300), "{kk}");
        }
        // variance of a sample mean falls like 1/S
        let t4 = build(
            &b,
            &k,
            &BuildOptions {
                samples_per_pair: 800,
                track_variance: true,
                ..Default::default()
            },
        )
        .unwrap();
        let ones = vec![1.0; b.len()];
        let (v1, v4): (f64, f64) = (
            t.rhs_variance(&ones).unwrap().iter().sum(),
            t4.rhs_variance(&ones).unwrap().iter().sum(),
        );
        assert!(v1 / v4 > 3.0 && v1 / v4 < 5.0, "{}", v1 / v4);
    }
}
