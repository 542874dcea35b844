//! Compactifying change of variables between physical velocities in R^3 and
//! the open cube (-1,1)^3.
//!
//! The map uses the max norm `|v| = max_i |v_i|`, so cubes centred at the
//! origin map to cubes. Euclidean norms are only used for collision
//! kinematics (see [`crate::kernel`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("bar velocity {0:?} is not inside the open cube (-1,1)^3")]
    OutsideCube([f64; 3]),
    #[error("velocity {0:?} has a non-finite component")]
    NonFinite([f64; 3]),
}

/// Physical velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Velocity(pub [f64; 3]);

/// Point of the computational cube; max-norm strictly below one.
///
/// The gap `1 - |vb|` is carried alongside the components: near the cube
/// boundary it cannot be recovered from them without cancellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarVelocity {
    c: [f64; 3],
    gap: f64,
}

impl Velocity {
    pub fn new(c: [f64; 3]) -> Result<Self, MapError> {
        if c.iter().all(|x| x.is_finite()) {
            Ok(Self(c))
        } else {
            Err(MapError::NonFinite(c))
        }
    }

    pub fn max_norm(&self) -> f64 {
        max_norm(&self.0)
    }
}

impl BarVelocity {
    pub fn new(c: [f64; 3]) -> Result<Self, MapError> {
        if c.iter().all(|x| x.is_finite()) && max_norm(&c) < 1.0 {
            Ok(Self {
                c,
                gap: 1.0 - max_norm(&c),
            })
        } else {
            Err(MapError::OutsideCube(c))
        }
    }

    pub fn components(&self) -> [f64; 3] {
        self.c
    }

    pub fn max_norm(&self) -> f64 {
        max_norm(&self.c)
    }

    /// `1 - |vb|`.
    pub fn gap(&self) -> f64 {
        self.gap
    }
}

#[inline]
pub fn max_norm(v: &[f64; 3]) -> f64 {
    v[0].abs().max(v[1].abs()).max(v[2].abs())
}

#[inline]
pub fn euclid_sq(v: &[f64; 3]) -> f64 {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

/// `<v>^2 = 1 + |v|_2^2`.
#[inline]
pub fn bracket_sq(v: &[f64; 3]) -> f64 {
    1.0 + euclid_sq(v)
}

pub fn phi(v: &Velocity) -> BarVelocity {
    let gap = 1.0 / (1.0 + v.max_norm());
    BarVelocity {
        c: [v.0[0] * gap, v.0[1] * gap, v.0[2] * gap],
        gap,
    }
}

pub fn phi_inv(vb: &BarVelocity) -> Velocity {
    let s = 1.0 / vb.gap;
    Velocity([vb.c[0] * s, vb.c[1] * s, vb.c[2] * s])
}

/// `(1 - |vb|)^-4`, the density of dv with respect to d(vb).
pub fn jacobian_factor(vb: &BarVelocity) -> f64 {
    let d2 = vb.gap * vb.gap;
    1.0 / (d2 * d2)
}

#[inline]
pub(crate) fn phi_raw(v: &[f64; 3]) -> [f64; 3] {
    let s = 1.0 / (1.0 + max_norm(v));
    [v[0] * s, v[1] * s, v[2] * s]
}

#[inline]
pub(crate) fn phi_inv_raw(vb: &[f64; 3]) -> [f64; 3] {
    let s = 1.0 / (1.0 - max_norm(vb));
    [vb[0] * s, vb[1] * s, vb[2] * s]
}

#[inline]
pub(crate) fn jacobian_raw(vb: &[f64; 3]) -> f64 {
    let d = 1.0 - max_norm(vb);
    let d2 = d * d;
    1.0 / (d2 * d2)
}

/// Inverse of the one-dimensional radial profile `r -> r / (1 + r)`.
#[inline]
pub fn radial_inv(rb: f64) -> f64 {
    rb / (1.0 - rb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussLegendre;
    use proptest::prelude::*;

    fn close(a: [f64; 3], b: [f64; 3]) -> bool {
        a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-15)
    }

    #[test]
    fn phi_examples() {
        let f = |c| phi(&Velocity(c)).components();
        assert!(close(f([0.0; 3]), [0.0; 3]));
        assert!(close(f([1.0, 0.0, 0.0]), [0.5, 0.0, 0.0]));
        assert!(close(f([3.0, -1.0, 2.0]), [0.75, -0.25, 0.5]));
    }

    #[test]
    fn phi_inv_examples() {
        let inv = |c| phi_inv(&BarVelocity::new(c).unwrap()).0;
        assert!(close(inv([0.0; 3]), [0.0; 3]));
        assert!(close(inv([0.5, 0.0, 0.0]), [1.0, 0.0, 0.0]));
        assert!(close(inv([0.75, -0.25, 0.5]), [3.0, -1.0, 2.0]));
    }

    #[test]
    fn boundary_is_rejected() {
        assert!(BarVelocity::new([1.0, 0.0, 0.0]).is_err());
        assert!(BarVelocity::new([0.2, -1.5, 0.0]).is_err());
        assert!(BarVelocity::new([f64::NAN, 0.0, 0.0]).is_err());
        assert!(Velocity::new([f64::INFINITY, 0.0, 0.0]).is_err());
    }

    #[test]
    fn jacobian_examples() {
        let j = |c| jacobian_factor(&BarVelocity::new(c).unwrap());
        assert_eq!(j([0.0; 3]), 1.0);
        assert!((j([0.5, 0.0, 0.0]) - 16.0).abs() < 1e-12);
        assert!((j([0.75, 0.0, 0.0]) - 256.0).abs() < 1e-10);
    }

    // Change of measure: a Gaussian integrated over R^3 against the bar-space
    // integral of g(phi_inv(vb)) * J(vb). The bar-space integrand has kinks on
    // the diagonals |vb_i| = |vb_j|, so integrate over the smooth region
    // {0 < x2, x3 < x1} and use the cube's symmetry.
    #[test]
    fn change_of_measure_gaussian() {
        let g = |v: [f64; 3]| (-euclid_sq(&v)).exp();
        let exact = std::f64::consts::PI.powf(1.5);
        let rule = GaussLegendre::new(24);
        let mut total = 0.0;
        let pieces = 8;
        let outer = (0..pieces).flat_map(|p| {
            let a = p as f64 / pieces as f64;
            rule.on_interval(a, a + 1.0 / pieces as f64).collect::<Vec<_>>()
        });
        for (x1, w1) in outer {
            for (s2, w2) in rule.on_interval(0.0, 1.0) {
                for (s3, w3) in rule.on_interval(0.0, 1.0) {
                    let vb = [x1, s2 * x1, s3 * x1];
                    let v = phi_inv_raw(&vb);
                    total += w1 * w2 * w3 * x1 * x1 * g(v) * jacobian_raw(&vb);
                }
            }
        }
        // {x2, x3 < x1} is 1/3 of the positive octant.
        let total = 24.0 * total;
        assert!((total - exact).abs() / exact < 1e-8, "{total} vs {exact}");
    }

    proptest! {
        #[test]
        fn roundtrip(x in -1e6f64..1e6, y in -1e6f64..1e6, z in -1e6f64..1e6, scale in -6i32..0) {
            let v = [x * 10f64.powi(scale), y, z * 10f64.powi(scale)];
            let back = phi_inv(&phi(&Velocity(v))).0;
            for i in 0..3 {
                let tol = 1e-13 * max_norm(&v).max(1.0);
                prop_assert!((back[i] - v[i]).abs() <= tol);
            }
        }

        #[test]
        fn radial_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6) {
            prop_assume!(a != b);
            let pa = max_norm(&phi_raw(&[a, 0.3 * a, -0.1 * a]));
            let pb = max_norm(&phi_raw(&[b, 0.3 * b, -0.1 * b]));
            prop_assert_eq!(a < b, pa < pb);
        }
    }
}
