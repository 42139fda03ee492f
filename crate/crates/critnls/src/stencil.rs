//! Finite-difference weights (Fornberg's recursion) and fixed stencils.

/// Weights `c[m][j]` so that `f^{(m)}(x0) ≈ Σ_j c[m][j] f(xs[j])` for m ≤ max_order.
pub fn fornberg(x0: f64, xs: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Centered weights on offsets -p..=p (unit spacing) for derivative `m`.
pub fn centered(p: usize, m: usize) -> Vec<f64> {
    let xs: Vec<f64> = (-(p as i64)..=p as i64).map(|k| k as f64).collect();
    fornberg(0.0, &xs, m).swap_remove(m)
}

/// Lagrange interpolation weights at `x` through nodes `xs`.
pub fn lagrange(x: f64, xs: &[f64]) -> Vec<f64> {
    fornberg(x, xs, 0).swap_remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eighth_order_first_derivative() {
        let w = centered(4, 1);
        let want = [1.0 / 280.0, -4.0 / 105.0, 0.2, -0.8, 0.0, 0.8, -0.2, 4.0 / 105.0, -1.0 / 280.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_on_polynomials() {
        let xs = [0.0, 0.3, 0.7, 1.2, 1.9, 2.0];
        let c = fornberg(0.5, &xs, 3);
        let p = |x: f64| 1.0 - 2.0 * x + x.powi(3) - 0.5 * x.powi(5);
        let dp = |x: f64| -2.0 + 3.0 * x * x - 2.5 * x.powi(4);
        let got: f64 = xs.iter().zip(&c[1]).map(|(x, w)| w * p(*x)).sum();
        assert!((got - dp(0.5)).abs() < 1e-12);
        let l = lagrange(1.0, &xs);
        let got: f64 = xs.iter().zip(&l).map(|(x, w)| w * p(*x)).sum();
        assert!((got - p(1.0)).abs() < 1e-12);
    }
}
