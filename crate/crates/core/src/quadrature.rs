//! Gauss–Legendre rules and a small adaptive integrator.

use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Rule with `n` points on [-1, 1], computed by Newton iteration on P_n.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess for the i-th largest root.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
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
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive bisection with a 15/30-point Gauss–Legendre error estimate.
pub struct AdaptiveIntegrator {
    coarse: GaussLegendre,
    fine: GaussLegendre,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_depth: u32,
}

impl Default for AdaptiveIntegrator {
    fn default() -> Self {
        AdaptiveIntegrator {
            coarse: GaussLegendre::new(15),
            fine: GaussLegendre::new(30),
            abs_tol: 1e-13,
            rel_tol: 1e-12,
            max_depth: 40,
        }
    }
}

impl AdaptiveIntegrator {
    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: &F) -> f64 {
        let whole = self.fine.integrate(a, b, f);
        self.refine(a, b, f, whole, self.abs_tol.max(self.rel_tol * whole.abs()), 0)
    }

    fn refine<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: &F, fine: f64, tol: f64, depth: u32) -> f64 {
        let coarse = self.coarse.integrate(a, b, f);
        let floor = 64.0 * f64::EPSILON * fine.abs();
        if (fine - coarse).abs() <= tol.max(floor) || depth >= self.max_depth {
            return fine;
        }
        let m = 0.5 * (a + b);
        let left = self.fine.integrate(a, m, f);
        let right = self.fine.integrate(m, b, f);
        self.refine(a, m, f, left, 0.5 * tol, depth + 1)
            + self.refine(m, b, f, right, 0.5 * tol, depth + 1)
    }
}
