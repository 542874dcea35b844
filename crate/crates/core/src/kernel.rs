//! Elastic collision kinematics and the cutoff hard-potential kernel
//! `B = r^gamma * b0 * chi[theta_b, pi - theta_b](theta)`.
//!
//! All kinematics use the Euclidean norm.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::velocity_map::Velocity;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("gamma must lie in (-3, 1), got {0}")]
    Gamma(f64),
    #[error("theta_b must lie in (0, pi/2), got {0}")]
    Theta(f64),
    #[error("b0 must be finite and nonnegative, got {0}")]
    Amplitude(f64),
    #[error("lambda must be positive and finite, got {0}")]
    Lambda(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    gamma: f64,
    theta_b: f64,
    b0: f64,
    lambda: Option<f64>,
    normalized: bool,
}

/// `1 / (4 pi cos theta_b)`, which makes `∫_{S^2} b dσ = 1`.
pub fn normalized_b0(theta_b: f64) -> f64 {
    1.0 / (4.0 * std::f64::consts::PI * theta_b.cos())
}

impl KernelSpec {
    /// Kernel with the normalised angular amplitude.
    pub fn normalized(gamma: f64, theta_b: f64, lambda: Option<f64>) -> Result<Self, KernelError> {
        Self::check(gamma, theta_b, lambda)?;
        Ok(Self {
            gamma,
            theta_b,
            b0: normalized_b0(theta_b),
            lambda,
            normalized: true,
        })
    }

    pub fn with_b0(gamma: f64, theta_b: f64, b0: f64, lambda: Option<f64>) -> Result<Self, KernelError> {
        Self::check(gamma, theta_b, lambda)?;
        if !(b0.is_finite() && b0 >= 0.0) {
            return Err(KernelError::Amplitude(b0));
        }
        Ok(Self {
            gamma,
            theta_b,
            b0,
            lambda,
            normalized: false,
        })
    }

    // Soft potentials are accepted for experimentation; the structural
    // guarantees are only claimed for gamma in (0, 1).
    fn check(gamma: f64, theta_b: f64, lambda: Option<f64>) -> Result<(), KernelError> {
        if !(gamma > -3.0 && gamma < 1.0) {
            return Err(KernelError::Gamma(gamma));
        }
        if !(theta_b > 0.0 && theta_b < std::f64::consts::FRAC_PI_2) {
            return Err(KernelError::Theta(theta_b));
        }
        if let Some(l) = lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(KernelError::Lambda(l));
            }
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn theta_b(&self) -> f64 {
        self.theta_b
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// `min(r, lambda)^gamma`, or 0 at r = 0.
    #[inline]
    pub fn radial(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let r = match self.lambda {
            Some(l) => r.min(l),
            None => r,
        };
        r.powf(self.gamma)
    }

    /// Angular factor as a function of `cos theta`.
    #[inline]
    pub fn angular(&self, cos_theta: f64) -> f64 {
        if cos_theta.abs() <= self.theta_b.cos() {
            self.b0
        } else {
            0.0
        }
    }
}

/// `v' = (v+vs)/2 + σ|v-vs|/2`, `v'_* = (v+vs)/2 - σ|v-vs|/2`.
pub fn post_collision(v: &Velocity, vs: &Velocity, sigma: &[f64; 3]) -> (Velocity, Velocity) {
    let (a, b) = post_collision_raw(&v.0, &vs.0, sigma);
    (Velocity(a), Velocity(b))
}

#[inline]
pub fn post_collision_raw(v: &[f64; 3], vs: &[f64; 3], sigma: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let u = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
    let half = 0.5 * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let mut a = [0.0; 3];
    let mut b = [0.0; 3];
    for i in 0..3 {
        let c = 0.5 * (v[i] + vs[i]);
        a[i] = c + half * sigma[i];
        b[i] = c - half * sigma[i];
    }
    (a, b)
}

pub fn kernel_eval(spec: &KernelSpec, v: &Velocity, vs: &Velocity, sigma: &[f64; 3]) -> f64 {
    kernel_eval_raw(spec, &v.0, &vs.0, sigma)
}

#[inline]
pub fn kernel_eval_raw(spec: &KernelSpec, v: &[f64; 3], vs: &[f64; 3], sigma: &[f64; 3]) -> f64 {
    let u = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
    let r = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    let cos = (u[0] * sigma[0] + u[1] * sigma[1] + u[2] * sigma[2]) / r;
    spec.angular(cos) * spec.radial(r)
}

/// Uniform point on the unit sphere (Archimedes: uniform z, uniform angle).
#[inline]
pub fn sample_sigma<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    let (sn, cs) = phi.sin_cos();
    let p = [s * cs, s * sn, z];
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / n, p[1] / n, p[2] / n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit(x: [f64; 3]) -> [f64; 3] {
        let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        [x[0] / n, x[1] / n, x[2] / n]
    }

    #[test]
    fn head_on_example() {
        let (a, b) = post_collision_raw(&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        assert_eq!(a, [0.0, 1.0, 0.0]);
        assert_eq!(b, [0.0, -1.0, 0.0]);
    }

    #[test]
    fn normalized_amplitude() {
        let k = KernelSpec::normalized(0.5, PI / 6.0, None).unwrap();
        assert!((k.b0() - 1.0 / (2.0 * 3f64.sqrt() * PI)).abs() < 1e-15);
        assert!((k.b0() - 0.091888).abs() < 1e-6);
        // ∫ b dσ = 2π b0 ∫_{-cos θb}^{cos θb} dμ = 1.
        assert!((2.0 * PI * k.b0() * 2.0 * (PI / 6.0).cos() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn kernel_examples() {
        let k = KernelSpec::with_b0(0.5, PI / 6.0, 1.0, None).unwrap();
        let v = [4.0, 0.0, 0.0];
        let z = [0.0; 3];
        assert!((kernel_eval_raw(&k, &v, &z, &[0.0, 1.0, 0.0]) - 2.0).abs() < 1e-15);
        assert_eq!(kernel_eval_raw(&k, &v, &z, &[1.0, 0.0, 0.0]), 0.0);
        assert_eq!(kernel_eval_raw(&k, &z, &z, &[0.0, 1.0, 0.0]), 0.0);
        let t = KernelSpec::with_b0(0.5, PI / 6.0, 1.0, Some(1.0)).unwrap();
        assert!((kernel_eval_raw(&t, &v, &z, &[0.0, 1.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spec_validation() {
        assert!(KernelSpec::normalized(1.0, 0.5, None).is_err());
        assert!(KernelSpec::normalized(0.5, 0.0, None).is_err());
        assert!(KernelSpec::normalized(0.5, PI / 2.0, None).is_err());
        assert!(KernelSpec::normalized(0.5, 0.5, Some(0.0)).is_err());
        assert!(KernelSpec::with_b0(0.5, 0.5, -1.0, None).is_err());
        assert!(KernelSpec::with_b0(0.5, 0.5, 0.0, None).is_ok());
    }

    #[test]
    fn sphere_sampling_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let cb = (PI / 6.0).cos();
        let mut mean = [0.0; 3];
        let mut band = 0usize;
        for _ in 0..n {
            let s = sample_sigma(&mut rng);
            let norm = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
            assert!((norm - 1.0).abs() < 1e-14);
            for i in 0..3 {
                mean[i] += s[i] / n as f64;
            }
            if s[0].abs() <= cb {
                band += 1;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 0.01));
        let frac = band as f64 / n as f64;
        assert!((frac - cb).abs() < 5e-3, "{frac}");
    }

    proptest! {
        #[test]
        fn elastic_invariants(
            v in prop::array::uniform3(-50.0f64..50.0),
            vs in prop::array::uniform3(-50.0f64..50.0),
            s in prop::array::uniform3(-1.0f64..1.0),
            w in prop::array::uniform3(-20.0f64..20.0),
        ) {
            prop_assume!(s.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            let sigma = unit(s);
            let (a, b) = post_collision_raw(&v, &vs, &sigma);
            let e0: f64 = (0..3).map(|i| v[i] * v[i] + vs[i] * vs[i]).sum();
            let e1: f64 = (0..3).map(|i| a[i] * a[i] + b[i] * b[i]).sum();
            prop_assert!((e0 - e1).abs() <= 1e-12 * e0.max(1.0));
            for i in 0..3 {
                prop_assert!((a[i] + b[i] - v[i] - vs[i]).abs() <= 1e-12 * 100.0);
            }
            // σ -> -σ swaps the outgoing pair.
            let (c, d) = post_collision_raw(&v, &vs, &[-sigma[0], -sigma[1], -sigma[2]]);
            for i in 0..3 {
                prop_assert!((c[i] - b[i]).abs() <= 1e-12 && (d[i] - a[i]).abs() <= 1e-12);
            }
            // Galilean shift.
            let vw = [v[0] + w[0], v[1] + w[1], v[2] + w[2]];
            let vsw = [vs[0] + w[0], vs[1] + w[1], vs[2] + w[2]];
            let (e, f) = post_collision_raw(&vw, &vsw, &sigma);
            for i in 0..3 {
                prop_assert!((e[i] - a[i] - w[i]).abs() <= 1e-12 * 100.0);
                prop_assert!((f[i] - b[i] - w[i]).abs() <= 1e-12 * 100.0);
            }
            // Kernel symmetry under (v, vs, σ) -> (vs, v, -σ).
            let k = KernelSpec::normalized(0.5, 0.4, Some(30.0)).unwrap();
            let k1 = kernel_eval_raw(&k, &v, &vs, &sigma);
            let k2 = kernel_eval_raw(&k, &vs, &v, &[-sigma[0], -sigma[1], -sigma[2]]);
            prop_assert!((k1 - k2).abs() <= 1e-14 * k1.max(1.0));
        }

        #[test]
        fn identity_collision(v in prop::array::uniform3(-10.0f64..10.0), vs in prop::array::uniform3(-10.0f64..10.0)) {
            let u = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
            prop_assume!(u.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            let (a, b) = post_collision_raw(&v, &vs, &unit(u));
            for i in 0..3 {
                prop_assert!((a[i] - v[i]).abs() < 1e-12 && (b[i] - vs[i]).abs() < 1e-12);
            }
        }
    }
}
