//! Gain and loss tensors of the spectral collision operator.
//!
//! With trial functions `Φ_l(φ(v)) / ω(v)` (see [`Ansatz`]) and test
//! functions `Φ_k(φ(v)) θ(v)`, the Galerkin system in `L^2(dv)` reads
//!
//! ```text
//! da_k/dt = Σ_{l,l'} G[k][l][l'] a_l a_l' - a_k Σ_l L[k][l] a_l
//! ```
//!
//! Both tensors already carry the division by the diagonal mass
//! `M_k = A^2 ∫_cell θ J / ω dvb`. Gain entries are stored once per
//! unordered trial pair, with `l <= l'`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::haar_basis::FilteredBasis;
use crate::kernel::KernelSpec;
use crate::velocity_map::{bracket_sq, jacobian_raw};

mod build;
mod cache;
mod oracle;

pub use build::{build, pair_seed, BuildOptions};
pub use cache::{load, load_matching, save, CacheError, MAGIC, VERSION};
pub use oracle::{oracle_build, OracleOptions, ORACLE_MAX_CELLS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("samples_per_pair must be at least 1")]
    Samples,
    #[error("gain tensor would exceed the entry cap of {cap} (reached {reached})")]
    EntryCap { cap: usize, reached: usize },
    #[error("oracle is limited to {limit} kept cells, basis has {cells}")]
    OracleSize { limit: usize, cells: usize },
}

/// Weights of the trial functions: `f_N = Σ a_k Φ_k(φ(v)) / ω(v)` with
/// `ω = θ J`, where `θ = 1 + |v|^2` (or 1 when `weighted` is off) and
/// `J = (1 + |v|_∞)^4` (or 1 when `jacobian` is off). Test functions are
/// always `Φ_k θ`, so `∫ f θ` over the kept box is what the scheme conserves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ansatz {
    pub weighted: bool,
    pub jacobian: bool,
}

impl Default for Ansatz {
    fn default() -> Self {
        Self {
            weighted: true,
            jacobian: true,
        }
    }
}

impl Ansatz {
    #[inline]
    pub fn theta(&self, v: &[f64; 3]) -> f64 {
        if self.weighted {
            bracket_sq(v)
        } else {
            1.0
        }
    }

    /// `ω(v)` for `v = φ^-1(vb)`.
    #[inline]
    pub fn omega(&self, vb: &[f64; 3], v: &[f64; 3]) -> f64 {
        let j = if self.jacobian { jacobian_raw(vb) } else { 1.0 };
        self.theta(v) * j
    }

    /// Diagonal of the mass matrix, `A^2 ∫_cell θ J / ω dvb`.
    pub fn mass_diagonal(&self, basis: &FilteredBasis, order: usize) -> Vec<f64> {
        let a2 = basis.amplitude() * basis.amplitude();
        if self.jacobian {
            // θ J / ω = 1 and A^2 times the cell volume is exactly one
            return vec![a2 * basis.cell_bar_volume(); basis.len()];
        }
        basis
            .jacobian_volumes(order)
            .expect("mass quadrature order is positive")
            .into_iter()
            .map(|v| a2 * v)
            .collect()
    }
}

/// Everything that determines a tensor build bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TensorMeta {
    pub level: u32,
    pub delta: f64,
    pub kernel: KernelSpec,
    pub seed: u64,
    pub samples_per_pair: u64,
    pub ansatz: Ansatz,
    /// Fraction of the collision outflow of a unit Maxwellian restricted to
    /// the kept box whose post-collision velocity left the box.
    pub dropped_mass: f64,
}

impl TensorMeta {
    /// True when two metas describe the same build request.
    pub fn same_request(&self, other: &TensorMeta) -> bool {
        self.level == other.level
            && self.delta.to_bits() == other.delta.to_bits()
            && self.kernel.gamma().to_bits() == other.kernel.gamma().to_bits()
            && self.kernel.theta_b().to_bits() == other.kernel.theta_b().to_bits()
            && self.kernel.b0().to_bits() == other.kernel.b0().to_bits()
            && self.kernel.lambda().map(f64::to_bits) == other.kernel.lambda().map(f64::to_bits)
            && self.seed == other.seed
            && self.samples_per_pair == other.samples_per_pair
            && self.ansatz == other.ansatz
    }
}

/// Sparse gain weights in compressed rows: row `k` holds the `(l, l')`
/// pairs sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTensor {
    row_ptr: Vec<usize>,
    l: Vec<u32>,
    lp: Vec<u32>,
    w: Vec<f64>,
}

impl GainTensor {
    /// Builds from entries already sorted by `(k, l, l')` with no duplicates.
    pub(crate) fn from_sorted(n: usize, k: &[u32], l: Vec<u32>, lp: Vec<u32>, w: Vec<f64>) -> Self {
        let mut row_ptr = vec![0usize; n + 1];
        for &ki in k {
            row_ptr[ki as usize + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { row_ptr, l, lp, w }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            row_ptr: vec![0; n + 1],
            l: vec![],
            lp: vec![],
            w: vec![],
        }
    }

    pub(crate) fn from_rows(row_ptr: Vec<usize>, l: Vec<u32>, lp: Vec<u32>, w: Vec<f64>) -> Self {
        Self { row_ptr, l, lp, w }
    }

    pub fn n_cells(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// `(l, l', w)` slices of row `k`.
    #[inline]
    pub fn row(&self, k: usize) -> (&[u32], &[u32], &[f64]) {
        let r = self.row_ptr[k]..self.row_ptr[k + 1];
        (&self.l[r.clone()], &self.lp[r.clone()], &self.w[r])
    }

    pub fn get(&self, k: usize, l: usize, lp: usize) -> f64 {
        let (a, b) = if l <= lp {
            (l as u32, lp as u32)
        } else {
            (lp as u32, l as u32)
        };
        let (ls, lps, ws) = self.row(k);
        let lo = ls.partition_point(|&x| x < a);
        let hi = ls.partition_point(|&x| x <= a);
        match lps[lo..hi].binary_search(&b) {
            Ok(i) => ws[lo + i],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        (0..self.n_cells()).flat_map(move |k| {
            let (ls, lps, ws) = self.row(k);
            (0..ls.len()).map(move |i| (k, ls[i] as usize, lps[i] as usize, ws[i]))
        })
    }
}

/// Dense loss matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTensor {
    n: usize,
    w: Vec<f64>,
}

impl LossTensor {
    pub(crate) fn from_dense(n: usize, w: Vec<f64>) -> Self {
        assert_eq!(w.len(), n * n);
        Self { n, w }
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.w[k * self.n + l]
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.w[k * self.n..(k + 1) * self.n]
    }

    pub fn nonzero_count(&self) -> usize {
        self.w.iter().filter(|&&x| x != 0.0).count()
    }

    pub fn iter_nonzero(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.w
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(move |(i, &x)| (i / self.n, i % self.n, x))
    }
}

/// Per-entry Monte-Carlo variance estimates, laid out like the tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorVariance {
    pub gain: Vec<f64>,
    pub loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionTensor {
    pub meta: TensorMeta,
    pub gain: GainTensor,
    pub loss: LossTensor,
    pub variance: Option<TensorVariance>,
}

impl CollisionTensor {
    pub fn n_cells(&self) -> usize {
        self.loss.n_cells()
    }

    /// `(Σ G a a)_k` and `(L a)_k` for every k.
    pub fn contract(&self, a: &[f64], gain_out: &mut [f64], loss_out: &mut [f64]) {
        use rayon::prelude::*;
        gain_out
            .par_iter_mut()
            .zip(loss_out.par_iter_mut())
            .enumerate()
            .for_each(|(k, (g, l))| {
                let (ls, lps, ws) = self.gain.row(k);
                let mut s = 0.0;
                for i in 0..ws.len() {
                    s += ws[i] * a[ls[i] as usize] * a[lps[i] as usize];
                }
                *g = s;
                *l = self.loss.row(k).iter().zip(a).map(|(w, x)| w * x).sum();
            });
    }

    /// Variance of every right-hand-side component at `a`, from the
    /// per-entry sample variances with entries treated as independent.
    /// `None` unless the build tracked variances.
    pub fn rhs_variance(&self, a: &[f64]) -> Option<Vec<f64>> {
        let var = self.variance.as_ref()?;
        let n = self.n_cells();
        let mut out = vec![0.0; n];
        let mut pos = 0;
        for (k, o) in out.iter_mut().enumerate() {
            let (ls, lps, _) = self.gain.row(k);
            for i in 0..ls.len() {
                let p = a[ls[i] as usize] * a[lps[i] as usize];
                *o += var.gain[pos + i] * p * p;
            }
            pos += ls.len();
            let lrow = &var.loss[k * n..(k + 1) * n];
            *o += a[k] * a[k] * lrow.iter().zip(a).map(|(v, x)| v * x * x).sum::<f64>();
        }
        Some(out)
    }

    /// Largest loss rate `Σ_l L[k][l] a_l` over k.
    pub fn max_loss_rate(&self, a: &[f64]) -> f64 {
        (0..self.n_cells())
            .map(|k| self.loss.row(k).iter().zip(a).map(|(w, x)| w * x).sum::<f64>())
            .fold(0.0, f64::max)
    }
}
