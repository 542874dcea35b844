#![allow(dead_code)]

use boltzwave_core::haar_basis::FilteredBasis;
use boltzwave_core::quadrature::{BoxRule, GaussLegendre};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sum of Gaussian blobs in bar coordinates.
#[derive(Debug, Clone)]
pub struct Blobs {
    pub centres: Vec<[f64; 3]>,
    pub widths: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Blobs {
    pub fn random(rng: &mut impl Rng, nonneg: bool) -> Self {
        let n = rng.gen_range(1..=4);
        let mut b = Blobs {
            centres: vec![],
            widths: vec![],
            weights: vec![],
        };
        for _ in 0..n {
            b.centres.push([0; 3].map(|_: i32| rng.gen_range(-0.9..0.9)));
            b.widths.push(rng.gen_range(0.05..0.6));
            let w = rng.gen_range(0.1..2.0);
            b.weights.push(if nonneg || rng.gen_bool(0.5) { w } else { -w });
        }
        b
    }

    pub fn eval(&self, p: &[f64; 3]) -> f64 {
        let mut s = 0.0;
        for ((c, w), a) in self.centres.iter().zip(&self.widths).zip(&self.weights) {
            let r2: f64 = (0..3).map(|i| (p[i] - c[i]).powi(2)).sum();
            s += a * (-r2 / (w * w)).exp();
        }
        s
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `∫_{(-1,1)^3} |g| dvb` on a fine composite rule, independent of the mesh.
pub fn l1_on_cube(g: impl Fn(&[f64; 3]) -> f64, splits: usize) -> f64 {
    BoxRule::subdivided(&GaussLegendre::new(4), [-1.0; 3], [1.0; 3], splits).integrate(|p| g(p).abs())
}

/// `‖P_N g‖_{L^1}` from projection coefficients.
pub fn projected_l1(basis: &FilteredBasis, coeffs: &[f64]) -> f64 {
    coeffs.iter().map(|c| c.abs()).sum::<f64>() * basis.amplitude() * basis.cell_bar_volume()
}
