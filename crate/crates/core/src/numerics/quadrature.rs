//! Gauss-Hermite quadrature (physicists' convention, weight `exp(-u^2)`).

use nalgebra::DMatrix;

/// Nodes and positive weights of a quadrature rule.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Approximates the integral of `f(u) * exp(-u^2)` over the real line.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Evaluates the physicists' Hermite polynomial pair `(H_n, H_{n-1})` at `x`
/// by the three-term recurrence.
fn hermite_pair(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 1.0; // H_0
    if n == 0 {
        return (prev, 0.0);
    }
    let mut cur = 2.0 * x; // H_1
    for k in 1..n {
        let next = 2.0 * x * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Order-`n` Gauss-Hermite rule via Golub-Welsch with a Newton polish.
///
/// The Jacobi matrix of the Hermite recurrence is symmetric tridiagonal with
/// zero diagonal and off-diagonal `sqrt(k/2)`; its eigenvalues approximate
/// the nodes. Each node is then refined on `H_n(x) = 0` (the eigen-solver
/// alone leaves ~1e-11 in the extreme nodes, which high-degree integrands
/// amplify) and the weight recomputed from the closed form
/// `2^(n-1) n! sqrt(pi) / (n H_{n-1}(x))^2 * n`. The rule integrates
/// polynomials of degree `2n - 1` exactly.
pub fn gauss_hermite(n: usize) -> QuadratureRule {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eigen = jacobi.symmetric_eigen();
    let sqrt_pi = std::f64::consts::PI.sqrt();

    // 2^(n-1) n! sqrt(pi) / n^2
    let mut weight_scale = sqrt_pi / (n * n) as f64;
    for k in 1..=n {
        weight_scale *= 2.0 * k as f64;
    }
    weight_scale *= 0.5;

    let mut pairs: Vec<(f64, f64)> = eigen
        .eigenvalues
        .iter()
        .map(|&node0| {
            let mut x = node0;
            for _ in 0..3 {
                let (hn, hn1) = hermite_pair(n, x);
                let deriv = 2.0 * n as f64 * hn1;
                if deriv == 0.0 {
                    break;
                }
                let step = hn / deriv;
                x -= step;
                if step.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, hn1) = hermite_pair(n, x);
            (x, weight_scale / (hn1 * hn1))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}
