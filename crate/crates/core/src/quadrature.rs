//! Gauss–Legendre rules and tensor-product rules on axis-aligned boxes.

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on P_n started from the Chebyshev-like guess.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// (node, weight) pairs mapped to [a, b].
    pub fn on_interval(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(self.weights.iter())
            .map(move |(x, w)| (mid + half * x, half * w))
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let (p, pm1) = if n == 0 { (1.0, 0.0) } else { (p1, p0) };
    let d = n as f64 * (x * p - pm1) / (x * x - 1.0);
    (p, d)
}

/// Tensor-product Gauss rule over the box `lo..hi`, materialised as points.
#[derive(Debug, Clone)]
pub struct BoxRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl BoxRule {
    pub fn new(rule: &GaussLegendre, lo: [f64; 3], hi: [f64; 3]) -> Self {
        Self::subdivided(rule, lo, hi, 1)
    }

    /// Composite rule: the box is split into `splits^3` sub-boxes.
    pub fn subdivided(rule: &GaussLegendre, lo: [f64; 3], hi: [f64; 3], splits: usize) -> Self {
        let axis: Vec<Vec<(f64, f64)>> = (0..3)
            .map(|d| {
                let h = (hi[d] - lo[d]) / splits as f64;
                (0..splits)
                    .flat_map(|s| {
                        let a = lo[d] + s as f64 * h;
                        rule.on_interval(a, a + h).collect::<Vec<_>>()
                    })
                    .collect()
            })
            .collect();
        let n = axis[0].len();
        let mut points = Vec::with_capacity(n * n * n);
        let mut weights = Vec::with_capacity(n * n * n);
        for &(x, wx) in &axis[0] {
            for &(y, wy) in &axis[1] {
                for &(z, wz) in &axis[2] {
                    points.push([x, y, z]);
                    weights.push(wx * wy * wz);
                }
            }
        }
        Self { points, weights }
    }

    /// Rule for integrands that are smooth except where two coordinates tie
    /// for the largest magnitude (functions of `|x|_∞`). Each sub-box is cut
    /// into the pieces where `s x_i = |x|_∞`; a piece is integrated with
    /// `t = s x_i` outermost, split at every breakpoint where the inner
    /// rectangle changes shape.
    pub fn sectored(rule: &GaussLegendre, lo: [f64; 3], hi: [f64; 3], splits: usize) -> Self {
        let mut out = Self {
            points: Vec::new(),
            weights: Vec::new(),
        };
        let splits = splits.max(1);
        let h: [f64; 3] = std::array::from_fn(|d| (hi[d] - lo[d]) / splits as f64);
        for sx in 0..splits {
            for sy in 0..splits {
                for sz in 0..splits {
                    let s = [sx, sy, sz];
                    let l: [f64; 3] = std::array::from_fn(|d| lo[d] + s[d] as f64 * h[d]);
                    let u: [f64; 3] = std::array::from_fn(|d| if s[d] + 1 == splits { hi[d] } else { l[d] + h[d] });
                    out.push_sectors(rule, l, u);
                }
            }
        }
        out
    }

    fn push_sectors(&mut self, rule: &GaussLegendre, lo: [f64; 3], hi: [f64; 3]) {
        for i in 0..3 {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            for sign in [1.0f64, -1.0] {
                let (a, b) = if sign > 0.0 {
                    (lo[i].max(0.0), hi[i])
                } else {
                    ((-hi[i]).max(0.0), -lo[i])
                };
                if b <= a {
                    continue;
                }
                let mut cuts = vec![a, b];
                for &x in &[lo[j], hi[j], lo[k], hi[k]] {
                    if x.abs() > a && x.abs() < b {
                        cuts.push(x.abs());
                    }
                }
                cuts.sort_by(f64::total_cmp);
                cuts.dedup();
                for w in cuts.windows(2) {
                    let (t0, t1) = (w[0], w[1]);
                    let tm = 0.5 * (t0 + t1);
                    if lo[j].max(-tm) >= hi[j].min(tm) || lo[k].max(-tm) >= hi[k].min(tm) {
                        continue;
                    }
                    for (t, wt) in rule.on_interval(t0, t1) {
                        let (ja, jb) = (lo[j].max(-t), hi[j].min(t));
                        let (ka, kb) = (lo[k].max(-t), hi[k].min(t));
                        if ja >= jb || ka >= kb {
                            continue;
                        }
                        for (y, wy) in rule.on_interval(ja, jb) {
                            for (z, wz) in rule.on_interval(ka, kb) {
                                let mut p = [0.0; 3];
                                p[i] = sign * t;
                                p[j] = y;
                                p[k] = z;
                                self.points.push(p);
                                self.weights.push(wt * wy * wz);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn integrate(&self, f: impl Fn(&[f64; 3]) -> f64) -> f64 {
        self.points.iter().zip(self.weights.iter()).map(|(p, w)| w * f(p)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials() {
        for n in 1..12 {
            let rule = GaussLegendre::new(n);
            for deg in 0..(2 * n) {
                let approx: f64 = rule.on_interval(0.0, 2.0).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = 2f64.powi(deg as i32 + 1) / (deg as f64 + 1.0);
                assert!((approx - exact).abs() < 1e-12 * exact.max(1.0), "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn weights_sum_to_length() {
        let rule = GaussLegendre::new(7);
        let s: f64 = rule.weights().iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        assert!(rule.nodes().windows(2).all(|w| w[0] < w[1]));
    }

    // ∫_box g(|x|_∞) = ∫ g dV with V(t) the volume of box ∩ [-t, t]^3;
    // integrated by parts and done in one dimension.
    fn radial_oracle(lo: [f64; 3], hi: [f64; 3], g: impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64) -> f64 {
        let vol = |t: f64| (0..3).map(|d| (hi[d].min(t) - lo[d].max(-t)).max(0.0)).product::<f64>();
        let top = (0..3).map(|d| lo[d].abs().max(hi[d].abs())).fold(0.0, f64::max);
        let mut cuts: Vec<f64> = lo.iter().chain(hi.iter()).map(|x| x.abs()).chain([0.0, top]).collect();
        cuts.sort_by(f64::total_cmp);
        let rule = GaussLegendre::new(20);
        let mut s = 0.0;
        for w in cuts.windows(2) {
            s += rule
                .on_interval(w[0], w[1])
                .map(|(t, wt)| wt * dg(t) * vol(t))
                .sum::<f64>();
        }
        g(top) * vol(top) - s
    }

    #[test]
    fn sectored_rule_on_max_norm_integrands() {
        let rule = GaussLegendre::new(4);
        let boxes = [
            ([-0.3, -0.2, -0.25], [0.25, 0.3, 0.1]),
            ([0.1, -0.4, 0.2], [0.5, 0.1, 0.45]),
            ([0.6, 0.6, -0.1], [0.7, 0.8, 0.05]),
        ];
        for (lo, hi) in boxes {
            for splits in [1, 2] {
                let r = BoxRule::sectored(&rule, lo, hi, splits);
                let vol: f64 = (0..3).map(|d| hi[d] - lo[d]).product();
                assert!((r.integrate(|_| 1.0) - vol).abs() < 1e-14);
                let m = |p: &[f64; 3]| p.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                let got = r.integrate(|p| m(p).powi(3) + p[0] * p[1]);
                let poly = (hi[0] * hi[0] - lo[0] * lo[0]) * (hi[1] * hi[1] - lo[1] * lo[1]) / 4.0 * (hi[2] - lo[2]);
                let want = radial_oracle(lo, hi, |t| t.powi(3), |t| 3.0 * t * t) + poly;
                assert!((got - want).abs() < 1e-14, "{got} {want}");
                let r8 = BoxRule::sectored(&GaussLegendre::new(8), lo, hi, splits);
                let got = r8.integrate(|p| (1.0 - m(p)).powi(-4));
                let want = radial_oracle(lo, hi, |t| (1.0 - t).powi(-4), |t| 4.0 * (1.0 - t).powi(-5));
                assert!((got - want).abs() < 1e-11 * want, "{got} {want}");
            }
        }
    }

    #[test]
    fn box_rule_volume_and_moment() {
        let rule = GaussLegendre::new(3);
        let b = BoxRule::subdivided(&rule, [0.0, -1.0, 2.0], [1.0, 1.0, 2.5], 2);
        assert!((b.integrate(|_| 1.0) - 1.0).abs() < 1e-14);
        let m = b.integrate(|p| p[0] * p[1] * p[1] * p[2]);
        let exact = 0.5 * (2.0 / 3.0) * (2.5f64.powi(2) - 4.0) / 2.0;
        assert!((m - exact).abs() < 1e-13);
    }
}
