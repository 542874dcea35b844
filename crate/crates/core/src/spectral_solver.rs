//! Coefficient ODE: initial projection, right-hand side, explicit stepping
//! and reconstruction of `f_N`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision_tensor::{Ansatz, CollisionTensor};
use crate::haar_basis::{FilteredBasis, DEFAULT_QUAD_ORDER};
use crate::quadrature::GaussLegendre;
use crate::velocity_map::{jacobian_raw, phi_inv_raw, phi_raw};

/// Gauss order per axis used to project the initial datum.
pub const INIT_QUAD_ORDER: usize = 8;

/// Smallest step the halving logic may reach, as a fraction of the nominal dt.
pub const HALVING_FLOOR: f64 = 1.0 / 1024.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("bump {index}: {what}")]
    Bump { index: usize, what: String },
    #[error("initial condition needs at least one bump")]
    NoBumps,
    #[error("state has {got} coefficients, basis has {want}")]
    Length { got: usize, want: usize },
    #[error("time step must be positive and finite, got {0}")]
    TimeStep(f64),
    #[error("t_end must be nonnegative and finite, got {0}")]
    EndTime(f64),
    #[error("coefficient {index} reached {value:e} at t = {t} (tolerance {tol:e})")]
    Positivity { t: f64, index: usize, value: f64, tol: f64 },
    #[error("step failed at t = {t} even with dt reduced to {dt:e}")]
    Instability { t: f64, dt: f64 },
    #[error("automatic dt needs a positive loss rate; initial state has none")]
    AutoStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStep {
    Fixed(f64),
    /// `0.5 / max_k (L a(0))_k`.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub dt: TimeStep,
    pub t_end: f64,
    pub method: Method,
    pub positivity_tol: f64,
    pub output_stride: usize,
    /// Retry a step in halves when a coefficient dips below `-positivity_tol`.
    pub halve_on_negative: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: TimeStep::Auto,
            t_end: 1.0,
            method: Method::Rk4,
            positivity_tol: 1e-10,
            output_stride: 1,
            halve_on_negative: true,
        }
    }
}

/// Gaussian bump `rho (2 pi T)^-3/2 exp(-|v-u|^2 / 2T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub rho: f64,
    pub u: [f64; 3],
    pub temperature: f64,
}

impl Bump {
    #[inline]
    pub fn eval(&self, v: &[f64; 3]) -> f64 {
        let d2 = (v[0] - self.u[0]).powi(2) + (v[1] - self.u[1]).powi(2) + (v[2] - self.u[2]).powi(2);
        self.rho * (2.0 * std::f64::consts::PI * self.temperature).powf(-1.5) * (-d2 / (2.0 * self.temperature)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialCondition {
    bumps: Vec<Bump>,
}

impl InitialCondition {
    /// Weights may be zero (an empty datum) but not negative.
    pub fn new(bumps: Vec<Bump>) -> Result<Self, SolverError> {
        if bumps.is_empty() {
            return Err(SolverError::NoBumps);
        }
        for (index, b) in bumps.iter().enumerate() {
            let bad = |what: &str| {
                Err(SolverError::Bump {
                    index,
                    what: what.into(),
                })
            };
            if !(b.rho.is_finite() && b.rho >= 0.0) {
                return bad("rho must be finite and nonnegative");
            }
            if !(b.temperature.is_finite() && b.temperature > 0.0) {
                return bad("temperature must be positive");
            }
            if !b.u.iter().all(|x| x.is_finite()) {
                return bad("mean velocity must be finite");
            }
        }
        Ok(Self { bumps })
    }

    pub fn bumps(&self) -> &[Bump] {
        &self.bumps
    }

    #[inline]
    pub fn density(&self, v: &[f64; 3]) -> f64 {
        self.bumps.iter().map(|b| b.eval(v)).sum()
    }

    pub fn mass(&self) -> f64 {
        self.bumps.iter().map(|b| b.rho).sum()
    }

    pub fn momentum(&self) -> [f64; 3] {
        std::array::from_fn(|d| self.bumps.iter().map(|b| b.rho * b.u[d]).sum())
    }

    /// `∫ |v|^2 f`.
    pub fn energy(&self) -> f64 {
        self.bumps
            .iter()
            .map(|b| b.rho * (b.u.iter().map(|x| x * x).sum::<f64>() + 3.0 * b.temperature))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub t: f64,
    pub a: Vec<f64>,
}

impl SpectralState {
    pub fn zeros(n: usize) -> Self {
        Self {
            t: 0.0,
            a: vec![0.0; n],
        }
    }

    pub fn min_coefficient(&self) -> f64 {
        self.a.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Galerkin projection of `f0`: `a_k = A ∫_cell θ f0 J dvb / M_k`.
pub fn init_from_f0<F>(f0: F, basis: &FilteredBasis, ansatz: &Ansatz, order: usize) -> SpectralState
where
    F: Fn(&[f64; 3]) -> f64 + Sync,
{
    let a = basis.amplitude();
    let mass = ansatz.mass_diagonal(basis, DEFAULT_QUAD_ORDER);
    let rule = GaussLegendre::new(order.max(1));
    let coeffs = (0..basis.len())
        .into_par_iter()
        .map(|i| {
            let r = basis.cell_rule(i, &rule);
            let num = r.integrate(|p| {
                let v = phi_inv_raw(p);
                ansatz.theta(&v) * f0(&v) * jacobian_raw(p)
            });
            a * num / mass[i]
        })
        .collect();
    SpectralState { t: 0.0, a: coeffs }
}

/// [`init_from_f0`] for a bump list at the default order.
pub fn init_from_ic(ic: &InitialCondition, basis: &FilteredBasis, ansatz: &Ansatz) -> SpectralState {
    init_from_f0(|v| ic.density(v), basis, ansatz, INIT_QUAD_ORDER)
}

/// `f_N(v) = Σ_k a_k Φ_k(φ(v)) / ω(v)`; zero outside the kept box.
pub fn reconstruct(state: &SpectralState, basis: &FilteredBasis, ansatz: &Ansatz, v: &[f64; 3]) -> f64 {
    let vb = phi_raw(v);
    match basis.locate_bar(&vb) {
        Some(k) => state.a[k] * basis.amplitude() / ansatz.omega(&vb, v),
        None => 0.0,
    }
}

/// `da_k/dt = Σ G[k][l][l'] a_l a_l' - a_k Σ_l L[k][l] a_l`.
pub fn rhs(a: &[f64], tensor: &CollisionTensor, out: &mut [f64]) {
    let n = a.len();
    let mut loss = vec![0.0; n];
    tensor.contract(a, out, &mut loss);
    for k in 0..n {
        out[k] -= a[k] * loss[k];
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// One unchecked step of the chosen method.
pub fn raw_step(a: &[f64], dt: f64, method: Method, tensor: &CollisionTensor) -> Vec<f64> {
    let n = a.len();
    let mut k1 = vec![0.0; n];
    rhs(a, tensor, &mut k1);
    match method {
        Method::Euler => {
            let mut out = a.to_vec();
            axpy(&mut out, dt, &k1);
            out
        }
        Method::Rk4 => {
            let mut tmp = a.to_vec();
            axpy(&mut tmp, 0.5 * dt, &k1);
            let mut k2 = vec![0.0; n];
            rhs(&tmp, tensor, &mut k2);
            tmp.copy_from_slice(a);
            axpy(&mut tmp, 0.5 * dt, &k2);
            let mut k3 = vec![0.0; n];
            rhs(&tmp, tensor, &mut k3);
            tmp.copy_from_slice(a);
            axpy(&mut tmp, dt, &k3);
            let mut k4 = vec![0.0; n];
            rhs(&tmp, tensor, &mut k4);
            let mut out = a.to_vec();
            for i in 0..n {
                out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            out
        }
    }
}

/// What happened during one nominal step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    /// Depth of the deepest halving (0 when the full step was accepted).
    pub halvings: u32,
    /// Number of rejected attempts that dipped below `-positivity_tol`.
    pub negative_events: u32,
}

fn worst(a: &[f64]) -> (usize, f64) {
    a.iter().enumerate().fold(
        (0, f64::INFINITY),
        |m, (i, &x)| if x < m.1 || x.is_nan() { (i, x) } else { m },
    )
}

fn advance(
    a: &[f64],
    t: f64,
    dt: f64,
    floor: f64,
    depth: u32,
    config: &SolverConfig,
    tensor: &CollisionTensor,
    report: &mut StepReport,
) -> Result<Vec<f64>, SolverError> {
    let next = raw_step(a, dt, config.method, tensor);
    let (index, value) = worst(&next);
    let finite = next.iter().all(|x| x.is_finite());
    if finite && value >= -config.positivity_tol {
        report.halvings = report.halvings.max(depth);
        return Ok(next);
    }
    if finite {
        report.negative_events += 1;
    }
    if !config.halve_on_negative {
        if !finite {
            return Err(SolverError::Instability { t, dt });
        }
        return Err(SolverError::Positivity {
            t: t + dt,
            index,
            value,
            tol: config.positivity_tol,
        });
    }
    let half = 0.5 * dt;
    if half < floor {
        return Err(SolverError::Instability { t, dt: half });
    }
    let mid = advance(a, t, half, floor, depth + 1, config, tensor, report)?;
    advance(&mid, t + half, half, floor, depth + 1, config, tensor, report)
}

/// Advances `state` by `dt`, halving on negativity when configured.
pub fn step(
    state: &SpectralState,
    dt: f64,
    config: &SolverConfig,
    tensor: &CollisionTensor,
) -> Result<(SpectralState, StepReport), SolverError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SolverError::TimeStep(dt));
    }
    let mut report = StepReport::default();
    let a = advance(
        &state.a,
        state.t,
        dt,
        dt * HALVING_FLOOR,
        0,
        config,
        tensor,
        &mut report,
    )?;
    Ok((SpectralState { t: state.t + dt, a }, report))
}

/// Step size the run will use.
pub fn resolve_dt(config: &SolverConfig, state: &SpectralState, tensor: &CollisionTensor) -> Result<f64, SolverError> {
    match config.dt {
        TimeStep::Fixed(dt) if dt > 0.0 && dt.is_finite() => Ok(dt),
        TimeStep::Fixed(dt) => Err(SolverError::TimeStep(dt)),
        TimeStep::Auto => {
            let rate = tensor.max_loss_rate(&state.a);
            if rate > 0.0 && rate.is_finite() {
                Ok(0.5 / rate)
            } else {
                Err(SolverError::AutoStep)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub final_state: SpectralState,
    pub dt: f64,
    pub steps: usize,
    pub halvings: u32,
    pub negative_events: u32,
}

/// Integrates from `state` to `config.t_end`, calling `sink` on the initial
/// state, every `output_stride` steps and on the final state.
pub fn run<S>(
    initial: SpectralState,
    tensor: &CollisionTensor,
    config: &SolverConfig,
    mut sink: S,
) -> Result<RunSummary, SolverError>
where
    S: FnMut(&SpectralState),
{
    if initial.a.len() != tensor.n_cells() {
        return Err(SolverError::Length {
            got: initial.a.len(),
            want: tensor.n_cells(),
        });
    }
    if !(config.t_end >= 0.0 && config.t_end.is_finite()) {
        return Err(SolverError::EndTime(config.t_end));
    }
    let stride = config.output_stride.max(1);
    sink(&initial);
    if config.t_end == 0.0 {
        let dt = resolve_dt(config, &initial, tensor).unwrap_or(0.0);
        return Ok(RunSummary {
            final_state: initial,
            dt,
            steps: 0,
            halvings: 0,
            negative_events: 0,
        });
    }
    let dt = resolve_dt(config, &initial, tensor)?;
    let t0 = initial.t;
    let steps = (config.t_end / dt - 1e-9).ceil().max(1.0) as usize;
    let mut state = initial;
    let (mut halvings, mut negative_events) = (0, 0);
    for i in 1..=steps {
        let target = if i == steps {
            t0 + config.t_end
        } else {
            t0 + i as f64 * dt
        };
        let (mut next, rep) = step(&state, target - state.t, config, tensor)?;
        next.t = target;
        halvings = halvings.max(rep.halvings);
        negative_events += rep.negative_events;
        state = next;
        if i % stride == 0 || i == steps {
            sink(&state);
        }
    }
    Ok(RunSummary {
        final_state: state,
        dt,
        steps,
        halvings,
        negative_events,
    })
}
