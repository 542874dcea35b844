//! Observables of a spectral state: moments, entropy, distance to the
//! matched Maxwellian and fitted relaxation rate / lower bound.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::collision_tensor::{Ansatz, CollisionTensor};
use crate::haar_basis::{FilteredBasis, DEFAULT_QUAD_ORDER};
use crate::quadrature::{BoxRule, GaussLegendre};
use crate::spectral_solver::{reconstruct, SpectralState};
use crate::velocity_map::{euclid_sq, jacobian_raw, phi_inv_raw};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagError {
    #[error("temperature {0:e} is not positive")]
    DegenerateTemperature(f64),
    #[error("mass {0:e} is not positive")]
    NoMass(f64),
    #[error("rate fit needs at least {need} positive samples, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("state has {got} coefficients, table has {want}")]
    Length { got: usize, want: usize },
}

/// Moment weights `w(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Weight {
    One,
    Velocity(usize),
    /// `|v|^2`.
    Energy,
    /// `|v|^p`.
    Power(f64),
    /// `exp(a |v|^s)`.
    Exp {
        a: f64,
        s: f64,
    },
}

impl Weight {
    #[inline]
    pub fn eval(&self, v: &[f64; 3]) -> f64 {
        match *self {
            Weight::One => 1.0,
            Weight::Velocity(d) => v[d],
            Weight::Energy => euclid_sq(v),
            Weight::Power(p) => euclid_sq(v).powf(0.5 * p),
            Weight::Exp { a, s } => (a * euclid_sq(v).powf(0.5 * s)).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentSpec {
    /// Records `m_{2s} = ∫ f |v|^{2s}` for each s.
    pub s: Vec<f64>,
    pub exp_a: f64,
    pub exp_s: f64,
}

impl Default for MomentSpec {
    fn default() -> Self {
        Self {
            s: vec![2.0, 3.0],
            exp_a: 0.05,
            exp_s: 0.5,
        }
    }
}

/// Per-cell integrals `W_w[k] = A ∫_cell w J / ω dvb`, so that
/// `Σ_k a_k W_w[k] = ∫ f_N w dv`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    ansatz: Ansatz,
    order: usize,
    weights: Vec<Weight>,
    values: Vec<Vec<f64>>,
    /// `A ∫ log ω J / ω`.
    log_omega: Vec<f64>,
    /// `A^2 ∫ J / ω^2`.
    square: Vec<f64>,
}

impl WeightTable {
    pub fn build(basis: &FilteredBasis, ansatz: &Ansatz, weights: &[Weight], order: usize) -> Self {
        let a = basis.amplitude();
        let rule = GaussLegendre::new(order.max(1));
        let per_cell: Vec<(Vec<f64>, f64, f64)> = (0..basis.len())
            .into_par_iter()
            .map(|i| {
                let r = basis.cell_rule(i, &rule);
                let mut w = vec![0.0; weights.len()];
                let (mut lt, mut sq) = (0.0, 0.0);
                for (p, q) in r.points.iter().zip(&r.weights) {
                    let v = phi_inv_raw(p);
                    let om = ansatz.omega(p, &v);
                    let m = q * jacobian_raw(p) / om;
                    for (acc, wt) in w.iter_mut().zip(weights) {
                        *acc += m * wt.eval(&v);
                    }
                    lt += m * om.ln();
                    sq += m / om;
                }
                (w.into_iter().map(|x| a * x).collect(), a * lt, a * a * sq)
            })
            .collect();
        let mut values = vec![Vec::with_capacity(basis.len()); weights.len()];
        let mut log_omega = Vec::with_capacity(basis.len());
        let mut square = Vec::with_capacity(basis.len());
        for (w, lt, sq) in per_cell {
            for (col, x) in values.iter_mut().zip(w) {
                col.push(x);
            }
            log_omega.push(lt);
            square.push(sq);
        }
        Self {
            ansatz: *ansatz,
            order,
            weights: weights.to_vec(),
            values,
            log_omega,
            square,
        }
    }

    /// The standard set: 1, v1, v2, v3, |v|^2, |v|^{2s}, exp(a|v|^s).
    pub fn standard(basis: &FilteredBasis, ansatz: &Ansatz, moments: &MomentSpec) -> Self {
        let mut w = vec![
            Weight::One,
            Weight::Velocity(0),
            Weight::Velocity(1),
            Weight::Velocity(2),
            Weight::Energy,
        ];
        w.extend(moments.s.iter().map(|&s| Weight::Power(2.0 * s)));
        w.push(Weight::Exp {
            a: moments.exp_a,
            s: moments.exp_s,
        });
        Self::build(basis, ansatz, &w, DEFAULT_QUAD_ORDER)
    }

    pub fn n_cells(&self) -> usize {
        self.log_omega.len()
    }

    pub fn ansatz(&self) -> &Ansatz {
        &self.ansatz
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn weights(&self) -> &[Weight] {
        &self.weights
    }

    pub fn get(&self, w: &Weight) -> Option<&[f64]> {
        self.weights
            .iter()
            .position(|x| x == w)
            .map(|i| self.values[i].as_slice())
    }

    /// `Σ_k a_k W_w[k]`.
    pub fn pair(&self, w: &Weight, a: &[f64]) -> Option<f64> {
        self.get(w).map(|col| col.iter().zip(a).map(|(x, y)| x * y).sum())
    }

    /// `∫ f_N log f_N`, with `0 log 0 = 0`; nonpositive cells contribute 0.
    pub fn entropy(&self, a: &[f64], amplitude: f64) -> f64 {
        let one = self.get(&Weight::One).expect("table holds weight 1");
        a.iter()
            .enumerate()
            .filter(|(_, &x)| x > 0.0)
            .map(|(k, &x)| x * ((x * amplitude).ln() * one[k] - self.log_omega[k]))
            .sum()
    }

    /// `∂/∂a_k` of [`WeightTable::entropy`] (zero on nonpositive cells).
    pub fn entropy_gradient(&self, a: &[f64], amplitude: f64) -> Vec<f64> {
        let one = self.get(&Weight::One).expect("table holds weight 1");
        a.iter()
            .enumerate()
            .map(|(k, &x)| {
                if x > 0.0 {
                    ((x * amplitude).ln() + 1.0) * one[k] - self.log_omega[k]
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn l2_norm(&self, a: &[f64]) -> f64 {
        a.iter().zip(&self.square).map(|(x, w)| x * x * w).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Maxwellian {
    pub rho: f64,
    pub u: [f64; 3],
    pub temperature: f64,
}

impl Maxwellian {
    #[inline]
    pub fn eval(&self, v: &[f64; 3]) -> f64 {
        let d2 = (v[0] - self.u[0]).powi(2) + (v[1] - self.u[1]).powi(2) + (v[2] - self.u[2]).powi(2);
        self.rho * (2.0 * PI * self.temperature).powf(-1.5) * (-d2 / (2.0 * self.temperature)).exp()
    }

    pub fn energy(&self) -> f64 {
        self.rho * (euclid_sq(&self.u) + 3.0 * self.temperature)
    }

    /// `∫ M (1 + |v|^2)` over the complement of the cube `|v|_∞ <= x`.
    pub fn weighted_tail(&self, x: f64) -> f64 {
        let sd = self.temperature.sqrt();
        // per axis: P(|v_d| <= x) and E[v_d^2; |v_d| <= x]
        let axes: [(f64, f64); 3] = std::array::from_fn(|d| {
            let mu = self.u[d];
            let (lo, hi) = ((-x - mu) / sd, (x - mu) / sd);
            let cdf = |z: f64| 0.5 * erfc(-z / SQRT_2);
            let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
            let p = cdf(hi) - cdf(lo);
            let z1 = pdf(lo) - pdf(hi);
            let z2 = p + lo * pdf(lo) - hi * pdf(hi);
            (p, mu * mu * p + 2.0 * mu * sd * z1 + sd * sd * z2)
        });
        let inside_mass = axes[0].0 * axes[1].0 * axes[2].0;
        let inside_e: f64 = (0..3)
            .map(|d| axes[d].1 * (0..3).filter(|&e| e != d).map(|e| axes[e].0).product::<f64>())
            .sum();
        let out = self.rho * (1.0 - inside_mass) + (self.energy() - self.rho * inside_e);
        out.max(0.0)
    }
}

/// `u = p / ρ`, `T = (E/ρ - |u|^2) / 3`.
pub fn maxwellian_from_moments(mass: f64, momentum: [f64; 3], energy: f64) -> Result<Maxwellian, DiagError> {
    if !(mass > 0.0) {
        return Err(DiagError::NoMass(mass));
    }
    let u = momentum.map(|p| p / mass);
    let temperature = (energy / mass - euclid_sq(&u)) / 3.0;
    if !(temperature > 0.0) {
        return Err(DiagError::DegenerateTemperature(temperature));
    }
    Ok(Maxwellian {
        rho: mass,
        u,
        temperature,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
    /// `m_{2s}` in the order of [`MomentSpec::s`].
    pub moments: Vec<f64>,
    pub expmom: f64,
    pub l2: f64,
    pub entropy: f64,
    pub dist_eq: f64,
    pub min_cell: f64,
    pub dropped_mass: f64,
}

/// Evaluates records for one basis; holds the weight table.
#[derive(Debug, Clone)]
pub struct Diagnostics<'a> {
    basis: &'a FilteredBasis,
    table: WeightTable,
    moments: MomentSpec,
    dropped_mass: f64,
    dist_order: usize,
}

impl<'a> Diagnostics<'a> {
    pub fn new(basis: &'a FilteredBasis, ansatz: &Ansatz, moments: MomentSpec, dropped_mass: f64) -> Self {
        let table = WeightTable::standard(basis, ansatz, &moments);
        Self {
            basis,
            table,
            moments,
            dropped_mass,
            dist_order: 4,
        }
    }

    pub fn table(&self) -> &WeightTable {
        &self.table
    }

    pub fn moments(&self) -> &MomentSpec {
        &self.moments
    }

    pub fn basis(&self) -> &FilteredBasis {
        self.basis
    }

    pub fn mass(&self, a: &[f64]) -> f64 {
        self.table.pair(&Weight::One, a).expect("standard")
    }

    pub fn record(&self, state: &SpectralState) -> Result<DiagnosticsRecord, DiagError> {
        let a = &state.a;
        if a.len() != self.table.n_cells() {
            return Err(DiagError::Length {
                got: a.len(),
                want: self.table.n_cells(),
            });
        }
        let t = &self.table;
        let p = |w: Weight| t.pair(&w, a).expect("standard weight");
        let mass = p(Weight::One);
        let momentum = [p(Weight::Velocity(0)), p(Weight::Velocity(1)), p(Weight::Velocity(2))];
        let energy = p(Weight::Energy);
        let moments = self.moments.s.iter().map(|&s| p(Weight::Power(2.0 * s))).collect();
        let expmom = p(Weight::Exp {
            a: self.moments.exp_a,
            s: self.moments.exp_s,
        });
        let dist_eq = match maxwellian_from_moments(mass, momentum, energy) {
            Ok(m) => self.distance_to(state, &m),
            Err(_) => 0.0,
        };
        Ok(DiagnosticsRecord {
            t: state.t,
            mass,
            momentum,
            energy,
            moments,
            expmom,
            l2: t.l2_norm(a),
            entropy: t.entropy(a, self.basis.amplitude()),
            dist_eq,
            min_cell: if a.is_empty() { 0.0 } else { state.min_coefficient() },
            dropped_mass: self.dropped_mass,
        })
    }

    /// `∫ |f_N - M| (1 + |v|^2) dv` over the kept box plus the weighted tail of
    /// `M` outside it.
    pub fn distance_to(&self, state: &SpectralState, m: &Maxwellian) -> f64 {
        let rule = GaussLegendre::new(self.dist_order);
        let basis = self.basis;
        let amp = basis.amplitude();
        let ansatz = self.table.ansatz;
        let inside: f64 = (0..basis.len())
            .into_par_iter()
            .map(|i| {
                let r = basis.cell_rule(i, &rule);
                let c = state.a[i] * amp;
                r.points
                    .iter()
                    .zip(&r.weights)
                    .map(|(pt, q)| {
                        let v = phi_inv_raw(pt);
                        let f = c / ansatz.omega(pt, &v);
                        q * jacobian_raw(pt) * (f - m.eval(&v)).abs() * (1.0 + euclid_sq(&v))
                    })
                    .sum::<f64>()
            })
            .sum();
        inside + m.weighted_tail(basis.v_extent())
    }
}

/// Mass-averaged loss rate `Σ_k (L a)_k a_k W_1[k] / Σ_k a_k W_1[k]`.
pub fn mean_collision_frequency(tensor: &CollisionTensor, a: &[f64], diag: &Diagnostics) -> f64 {
    let n = a.len();
    let (mut g, mut l) = (vec![0.0; n], vec![0.0; n]);
    tensor.contract(a, &mut g, &mut l);
    let w1 = diag.table.get(&Weight::One).expect("standard");
    let num: f64 = (0..n).map(|k| l[k] * a[k] * w1[k]).sum();
    let den: f64 = (0..n).map(|k| a[k] * w1[k]).sum();
    num / den
}

/// Monte-Carlo tolerance on the change of a functional with gradient `grad`
/// over one step of length `dt`: `sigmas · dt · sqrt(Σ_k grad_k^2 Var[rhs_k])`.
/// `None` when the tensor carries no variances.
pub fn step_tolerance(tensor: &CollisionTensor, a: &[f64], grad: &[f64], dt: f64, sigmas: f64) -> Option<f64> {
    let var = tensor.rhs_variance(a)?;
    let s: f64 = var.iter().zip(grad).map(|(v, g)| v * g * g).sum();
    Some(sigmas * dt * s.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub c: f64,
    /// Coefficient of determination of the log-linear fit.
    pub quality: f64,
    pub samples: usize,
}

pub const MIN_FIT_SAMPLES: usize = 5;

/// Least-squares fit of `log d = b - c t`; nonpositive distances are skipped.
pub fn equilibrium_rate_fit(series: &[(f64, f64)]) -> Result<RateFit, DiagError> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(_, d)| *d > 0.0)
        .map(|&(t, d)| (t, d.ln()))
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(DiagError::InsufficientData {
            need: MIN_FIT_SAMPLES,
            got: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ym).powi(2)).sum();
    if stt == 0.0 {
        return Err(DiagError::InsufficientData { need: 2, got: 1 });
    }
    let slope = sty / stt;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - ym - slope * (p.0 - tm)).powi(2)).sum();
    let quality = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RateFit {
        c: -slope + 0.0,
        quality,
        samples: pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBound {
    pub c1: f64,
    pub c2: f64,
}

/// Largest `C1` such that `f_N(v) >= C1 exp(-C2 |v|^2)` on every kept cell,
/// maximised over the grid of `C2`. Per cell the bound uses `ω` at the
/// farthest corner and `|v|` at the nearest one, so it holds pointwise.
pub fn lower_bound_fit(state: &SpectralState, basis: &FilteredBasis, ansatz: &Ansatz, c2_grid: &[f64]) -> LowerBound {
    let amp = basis.amplitude();
    let ranges: Vec<(f64, f64)> = (0..basis.len())
        .map(|i| {
            let c = basis.cell(i);
            let near: [f64; 3] = std::array::from_fn(|d| 0f64.clamp(c.bar_lo[d], c.bar_hi[d]));
            let far: [f64; 3] = std::array::from_fn(|d| {
                if c.bar_lo[d].abs() > c.bar_hi[d].abs() {
                    c.bar_lo[d]
                } else {
                    c.bar_hi[d]
                }
            });
            (euclid_sq(&phi_inv_raw(&near)), ansatz.omega(&far, &phi_inv_raw(&far)))
        })
        .collect();
    let mut best = LowerBound {
        c1: 0.0,
        c2: c2_grid.first().copied().unwrap_or(0.0),
    };
    for &c2 in c2_grid {
        let mut c1 = f64::INFINITY;
        for (k, &(r2n, om)) in ranges.iter().enumerate() {
            c1 = c1.min(state.a[k] * amp * (c2 * r2n).exp() / om);
        }
        let c1 = if c1.is_finite() { c1.max(0.0) } else { 0.0 };
        if c1 > best.c1 {
            best = LowerBound { c1, c2 };
        }
    }
    best
}

/// `∫ |f_a - f_b| (1 + |v|^2) dv` over the union of both kept regions.
pub fn self_distance(
    (sa, ba): (&SpectralState, &FilteredBasis),
    (sb, bb): (&SpectralState, &FilteredBasis),
    ansatz: &Ansatz,
    order: usize,
    splits: usize,
) -> f64 {
    let rule = GaussLegendre::new(order.max(1));
    let part =
        |s1: &SpectralState, b1: &FilteredBasis, s2: &SpectralState, b2: &FilteredBasis, skip_common: bool| -> f64 {
            (0..b1.len())
                .into_par_iter()
                .map(|i| {
                    let c = b1.cell(i);
                    let r = BoxRule::sectored(&rule, c.bar_lo, c.bar_hi, splits);
                    r.points
                        .iter()
                        .zip(&r.weights)
                        .map(|(pt, q)| {
                            let v = phi_inv_raw(pt);
                            if skip_common && b2.locate(&v).is_some() {
                                return 0.0;
                            }
                            let d = reconstruct(s1, b1, ansatz, &v) - reconstruct(s2, b2, ansatz, &v);
                            q * jacobian_raw(pt) * d.abs() * (1.0 + euclid_sq(&v))
                        })
                        .sum::<f64>()
                })
                .sum()
        };
    part(sa, ba, sb, bb, false) + part(sb, bb, sa, ba, true)
}
