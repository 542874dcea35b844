//! Level-N rearranged periodized Haar basis on (-1,1)^3 and the
//! boundary-removing filter.
//!
//! Along one axis the level-N functions are indicators of the intervals
//! `(2^-N (2k-1), 2^-N (2k+1))` for `|k| <= 2^(N-1) - 1`, plus the
//! boundary-straddling index `k = 2^(N-1)` whose support is
//! `(-1, -1 + 2^-N) ∪ (1 - 2^-N, 1)`. The filter keeps the indices with
//! `max_i |k_i| <= khat`; kept cells tile `(-zeta, zeta)^3` exactly, with
//! `zeta = 2^-N (2 khat + 1)`.
//!
//! Basis functions are L^2-normalised: height `2^(3(N-1)/2)` on a cell of
//! volume `2^(3(1-N))`. Projection onto the kept span is therefore plain cell
//! averaging, which is positive and non-expansive in L^1 and L^inf.

use rayon::prelude::*;
use thiserror::Error;

use crate::quadrature::{BoxRule, GaussLegendre};
use crate::velocity_map::{jacobian_raw, phi_inv_raw, phi_raw};

mod verify;

pub use verify::{
    verify_assumption1, verify_assumption2, verify_assumption3, verify_assumption4, Assumption1Report,
    Assumption2Report, Assumption3Report, Assumption4Report, Quadruple, VerifyOptions,
};

/// Per-axis Gauss order used for cell integrals unless a caller overrides it.
pub const DEFAULT_QUAD_ORDER: usize = 6;

/// Largest supported level; keeps kept-cell indices comfortably inside u32.
pub const MAX_LEVEL: u32 = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("level must be in 1..={MAX_LEVEL}, got {0}")]
    Level(u32),
    #[error("delta must lie in (0,1), got {0}")]
    Delta(f64),
    #[error("filter keeps no cell: delta * 2^N = {0} <= 1")]
    EmptyBasis(f64),
    #[error("index {k:?} is outside the level-{level} range")]
    IndexRange { level: u32, k: [i32; 3] },
    #[error("index {0:?} straddles the cube boundary and has no single-interval cell")]
    BoundaryIndex([i32; 3]),
    #[error("index {0:?} is removed by the filter")]
    Filtered([i32; 3]),
    #[error("quadrature order must be at least 1")]
    QuadratureOrder,
}

/// A rearranged Haar index at level N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisIndex {
    level: u32,
    k: [i32; 3],
}

impl BasisIndex {
    pub fn new(level: u32, k: [i32; 3]) -> Result<Self, BasisError> {
        if level == 0 || level > MAX_LEVEL {
            return Err(BasisError::Level(level));
        }
        let top = 1i32 << (level - 1);
        if k.iter().any(|&ki| ki <= -top || ki > top) {
            return Err(BasisError::IndexRange { level, k });
        }
        Ok(Self { level, k })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn k(&self) -> [i32; 3] {
        self.k
    }

    /// True when some component is the boundary-straddling index `2^(N-1)`.
    pub fn is_boundary(&self) -> bool {
        let top = 1i32 << (self.level - 1);
        self.k.contains(&top)
    }

    pub fn max_abs(&self) -> i32 {
        self.k.iter().map(|k| k.abs()).max().unwrap_or(0)
    }
}

/// Basis amplitude `2^(3(N-1)/2)`.
pub fn amplitude(level: u32) -> f64 {
    2f64.powf(1.5 * (level as f64 - 1.0))
}

/// `floor((delta 2^N - 1) / 2)`: the largest kept |k_i|.
pub fn khat_of(level: u32, delta: f64) -> Result<u32, BasisError> {
    if level == 0 || level > MAX_LEVEL {
        return Err(BasisError::Level(level));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(BasisError::Delta(delta));
    }
    let scaled = delta * 2f64.powi(level as i32);
    if scaled <= 1.0 {
        return Err(BasisError::EmptyBasis(scaled));
    }
    Ok(((scaled - 1.0) / 2.0).floor().max(0.0) as u32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    delta: f64,
    khat: u32,
}

impl FilterSpec {
    pub fn new(level: u32, delta: f64) -> Result<Self, BasisError> {
        Ok(Self {
            delta,
            khat: khat_of(level, delta)?,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn khat(&self) -> u32 {
        self.khat
    }
}

/// Bar-space box of one kept index together with its basis height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGeometry {
    pub bar_lo: [f64; 3],
    pub bar_hi: [f64; 3],
    pub amplitude: f64,
}

impl CellGeometry {
    pub fn bar_volume(&self) -> f64 {
        (0..3).map(|d| self.bar_hi[d] - self.bar_lo[d]).product()
    }

    pub fn contains(&self, vb: &[f64; 3]) -> bool {
        (0..3).all(|d| vb[d] > self.bar_lo[d] && vb[d] < self.bar_hi[d])
    }
}

/// Cell of a non-boundary index.
pub fn bar_cell(idx: &BasisIndex) -> Result<CellGeometry, BasisError> {
    if idx.is_boundary() {
        return Err(BasisError::BoundaryIndex(idx.k));
    }
    let h = 2f64.powi(-(idx.level as i32));
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for d in 0..3 {
        let k = idx.k[d] as f64;
        lo[d] = h * (2.0 * k - 1.0);
        hi[d] = h * (2.0 * k + 1.0);
    }
    Ok(CellGeometry {
        bar_lo: lo,
        bar_hi: hi,
        amplitude: amplitude(idx.level),
    })
}

/// Value of the basis function at a bar point.
pub fn eval_basis(idx: &BasisIndex, vb: &[f64; 3]) -> f64 {
    let a = amplitude(idx.level);
    let h = 2f64.powi(-(idx.level as i32));
    let top = 1i32 << (idx.level - 1);
    let inside = (0..3).all(|d| {
        if idx.k[d] == top {
            vb[d] < -1.0 + h || vb[d] > 1.0 - h
        } else {
            let k = idx.k[d] as f64;
            vb[d] > h * (2.0 * k - 1.0) && vb[d] < h * (2.0 * k + 1.0)
        }
    });
    if inside && vb.iter().all(|x| x.abs() < 1.0) {
        a
    } else {
        0.0
    }
}

/// Per-axis (min, max) of physical velocity over the image of a bar cell.
///
/// Each component `v_i = vb_i / (1 - |vb|)` is increasing in `vb_i`; for a
/// fixed `vb_i` it is extremal when `|vb|` is extremal, which happens at the
/// box corners or where another component crosses zero.
pub fn v_cell_extent(idx: &BasisIndex) -> Result<[(f64, f64); 3], BasisError> {
    let cell = bar_cell(idx)?;
    Ok(box_image_extent(&cell.bar_lo, &cell.bar_hi))
}

pub(crate) fn box_image_extent(lo: &[f64; 3], hi: &[f64; 3]) -> [(f64, f64); 3] {
    let cand = |d: usize| -> Vec<f64> {
        let mut c = vec![lo[d], hi[d]];
        if lo[d] < 0.0 && hi[d] > 0.0 {
            c.push(0.0);
        }
        c
    };
    let c: Vec<Vec<f64>> = (0..3).map(cand).collect();
    let mut out = [(f64::INFINITY, f64::NEG_INFINITY); 3];
    for &x in &c[0] {
        for &y in &c[1] {
            for &z in &c[2] {
                let v = phi_inv_raw(&[x, y, z]);
                for d in 0..3 {
                    out[d].0 = out[d].0.min(v[d]);
                    out[d].1 = out[d].1.max(v[d]);
                }
            }
        }
    }
    out
}

/// The kept part of the level-N basis.
#[derive(Debug, Clone)]
pub struct FilteredBasis {
    level: u32,
    filter: FilterSpec,
    kept: Vec<BasisIndex>,
    side: usize,
    half_width: f64,
    zeta: f64,
    amplitude: f64,
}

impl FilteredBasis {
    pub fn new(level: u32, delta: f64) -> Result<Self, BasisError> {
        let filter = FilterSpec::new(level, delta)?;
        let khat = filter.khat as i32;
        let side = 2 * filter.khat as usize + 1;
        let mut kept = Vec::with_capacity(side * side * side);
        for k1 in -khat..=khat {
            for k2 in -khat..=khat {
                for k3 in -khat..=khat {
                    kept.push(BasisIndex { level, k: [k1, k2, k3] });
                }
            }
        }
        let half_width = 2f64.powi(-(level as i32));
        Ok(Self {
            level,
            filter,
            kept,
            side,
            half_width,
            zeta: half_width * (2.0 * khat as f64 + 1.0),
            amplitude: amplitude(level),
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn filter(&self) -> FilterSpec {
        self.filter
    }

    pub fn delta(&self) -> f64 {
        self.filter.delta
    }

    pub fn khat(&self) -> u32 {
        self.filter.khat
    }

    /// Half-side of the kept bar box.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Half-side (max norm) of the kept region in physical velocity.
    pub fn v_extent(&self) -> f64 {
        self.zeta / (1.0 - self.zeta)
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn kept(&self) -> &[BasisIndex] {
        &self.kept
    }

    /// Bar volume of every cell, `2^(3(1-N))`.
    pub fn cell_bar_volume(&self) -> f64 {
        (2.0 * self.half_width).powi(3)
    }

    /// Position of `k` in the kept ordering.
    pub fn position(&self, k: [i32; 3]) -> Option<usize> {
        let khat = self.filter.khat as i32;
        if k.iter().any(|x| x.abs() > khat) {
            return None;
        }
        let s = self.side;
        Some(((k[0] + khat) as usize * s + (k[1] + khat) as usize) * s + (k[2] + khat) as usize)
    }

    /// Kept cell containing a bar point, if any.
    #[inline]
    pub fn locate_bar(&self, vb: &[f64; 3]) -> Option<usize> {
        let scale = 0.5 / self.half_width;
        let khat = self.filter.khat as i64;
        let s = self.side as i64;
        let mut pos = 0i64;
        for x in vb {
            let j = (x * scale + 0.5).floor() as i64;
            if j.abs() > khat {
                return None;
            }
            pos = pos * s + (j + khat);
        }
        Some(pos as usize)
    }

    /// Kept cell containing the image of a physical velocity, if any.
    #[inline]
    pub fn locate(&self, v: &[f64; 3]) -> Option<usize> {
        self.locate_bar(&phi_raw(v))
    }

    pub fn cell(&self, i: usize) -> CellGeometry {
        let k = self.kept[i].k;
        let h = self.half_width;
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for d in 0..3 {
            lo[d] = h * (2.0 * k[d] as f64 - 1.0);
            hi[d] = h * (2.0 * k[d] as f64 + 1.0);
        }
        CellGeometry {
            bar_lo: lo,
            bar_hi: hi,
            amplitude: self.amplitude,
        }
    }

    /// Bounding box of the physical image of cell `i`.
    pub fn v_extent_of(&self, i: usize) -> [(f64, f64); 3] {
        let c = self.cell(i);
        box_image_extent(&c.bar_lo, &c.bar_hi)
    }

    /// Gauss rule over cell `i` with `order` points per axis, cut along the
    /// kinks of `|vb|_∞`.
    pub fn cell_rule(&self, i: usize, rule: &GaussLegendre) -> BoxRule {
        let c = self.cell(i);
        BoxRule::sectored(rule, c.bar_lo, c.bar_hi, 1)
    }

    /// Coefficients `c_k = ∫ g Φ_k dvb` for every kept index, by per-cell
    /// Gauss quadrature of the given order.
    pub fn project<G>(&self, g: G, order: usize) -> Result<Vec<f64>, BasisError>
    where
        G: Fn(&[f64; 3]) -> f64 + Sync,
    {
        self.project_composite(g, order, 1)
    }

    /// As [`FilteredBasis::project`], with every cell split into `splits^3`
    /// sub-boxes.
    pub fn project_composite<G>(&self, g: G, order: usize, splits: usize) -> Result<Vec<f64>, BasisError>
    where
        G: Fn(&[f64; 3]) -> f64 + Sync,
    {
        if order == 0 || splits == 0 {
            return Err(BasisError::QuadratureOrder);
        }
        let rule = GaussLegendre::new(order);
        Ok((0..self.len())
            .into_par_iter()
            .map(|i| {
                let c = self.cell(i);
                self.amplitude * BoxRule::sectored(&rule, c.bar_lo, c.bar_hi, splits).integrate(&g)
            })
            .collect())
    }

    /// `∫_cell (1-|vb|)^-4 dvb`, the physical volume of every kept cell.
    pub fn jacobian_volumes(&self, order: usize) -> Result<Vec<f64>, BasisError> {
        let inv_a = 1.0 / self.amplitude;
        Ok(self
            .project(jacobian_raw, order)?
            .into_iter()
            .map(|c| c * inv_a)
            .collect())
    }

    /// `Σ_k c_k Φ_k(vb)`.
    pub fn reconstruct_bar(&self, coeffs: &[f64], vb: &[f64; 3]) -> f64 {
        match self.locate_bar(vb) {
            Some(i) if vb.iter().all(|x| x.abs() < 1.0) => coeffs[i] * self.amplitude,
            _ => 0.0,
        }
    }

    /// Cell averages of `g`, i.e. the values of its projection.
    pub fn cell_averages<G>(&self, g: G, order: usize, splits: usize) -> Result<Vec<f64>, BasisError>
    where
        G: Fn(&[f64; 3]) -> f64 + Sync,
    {
        let a = self.amplitude;
        Ok(self
            .project_composite(g, order, splits)?
            .into_iter()
            .map(|c| c * a)
            .collect())
    }
}
