//! Gauss–Legendre rules on `[−1, 1]`, nodes by Newton on the Legendre
//! recurrence.

use std::f64::consts::PI;

/// `n`-point rule, exact for polynomials of degree `2n − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi's initial guess, then Newton.
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped affinely onto `[a, b]`.
    pub fn on_interval(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (mid + half * x, half * w))
    }
}

/// `(P_n(x), P_n'(x))`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Rules of order `base · 2^j`, built once and shared.
#[derive(Debug, Clone)]
pub struct RuleLadder {
    rules: Vec<GaussLegendre>,
}

impl RuleLadder {
    pub fn new(base: usize, max_order: usize) -> Self {
        let mut rules = Vec::new();
        let mut n = base;
        while n <= max_order {
            rules.push(GaussLegendre::new(n));
            n *= 2;
        }
        Self { rules }
    }

    pub fn rules(&self) -> &[GaussLegendre] {
        &self.rules
    }

    pub fn max_order(&self) -> usize {
        self.rules.last().map_or(0, |r| r.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weights_sum_to_two_and_nodes_sorted() {
        for n in [1, 2, 5, 16, 64, 257] {
            let r = GaussLegendre::new(n);
            let s: f64 = r.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "{n}: {s}");
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(r.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn known_three_point_rule() {
        let r = GaussLegendre::new(3);
        assert!((r.nodes[2] - (0.6f64).sqrt()).abs() < 1e-15);
        assert!((r.weights[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn oscillatory_integral() {
        // ∫_{-1}^{1} cos(20x) dx = sin(20)/10
        let r = GaussLegendre::new(64);
        let v: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * (20.0 * x).cos()).sum();
        assert!((v - 20f64.sin() / 10.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn exact_for_monomials(n in 1usize..30, k in 0usize..59) {
            prop_assume!(k < 2 * n);
            let r = GaussLegendre::new(n);
            let v: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            prop_assert!((v - exact).abs() < 1e-13);
        }
    }
}
