//! Legendre functions for the Hartree channel kernels.

/// P_0..=P_lmax at x.
pub fn legendre_p(lmax: usize, x: f64) -> Vec<f64> {
    let mut p = vec![1.0; lmax + 1];
    if lmax >= 1 {
        p[1] = x;
    }
    for l in 1..lmax {
        p[l + 1] = ((2 * l + 1) as f64 * x * p[l] - l as f64 * p[l - 1]) / (l + 1) as f64;
    }
    p
}

pub fn legendre_p_one(l: usize, x: f64) -> f64 {
    legendre_p(l, x)[l]
}

/// Q_l(z) for z > 1, passing `zm1 = z - 1` separately to keep precision near the
/// diagonal. Forward recursion near z = 1, hypergeometric series further out.
pub fn legendre_q(l: usize, z: f64, zm1: f64) -> f64 {
    if z <= 1.25 {
        let q0 = 0.5 * ((z + 1.0) / zm1).ln();
        if l == 0 {
            return q0;
        }
        let mut a = q0;
        let mut b = z * q0 - 1.0;
        for k in 1..l {
            let c = ((2 * k + 1) as f64 * z * b - k as f64 * a) / (k + 1) as f64;
            a = b;
            b = c;
        }
        b
    } else {
        // Q_l = √π l! / (Γ(l+3/2) (2z)^{l+1}) · 2F1((l+1)/2, (l+2)/2; l+3/2; 1/z²)
        let lf = l as f64;
        let mut pref = 1.0;
        // l!/Γ(l+3/2) · √π = Π_{k=1..l} k/(k+1/2) · √π/Γ(3/2) = 2 Π k/(k+½)
        for k in 1..=l {
            pref *= k as f64 / (k as f64 + 0.5);
        }
        pref *= 2.0 / (2.0 * z).powi(l as i32 + 1);
        let (a, b, c) = ((lf + 1.0) / 2.0, (lf + 2.0) / 2.0, lf + 1.5);
        let x = 1.0 / (z * z);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 0..400 {
            let k = k as f64;
            term *= (a + k) * (b + k) / ((c + k) * (k + 1.0)) * x;
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        pref * sum
    }
}

/// W_{l-1}(z) = Σ_{k=1}^{l} P_{k-1}(z) P_{l-k}(z) / k, the polynomial part of Q_l.
pub fn legendre_w(l: usize, z: f64) -> f64 {
    if l == 0 {
        return 0.0;
    }
    let p = legendre_p(l, z);
    (1..=l).map(|k| p[k - 1] * p[l - k] / k as f64).sum()
}

pub fn harmonic(l: usize) -> f64 {
    (1..=l).map(|k| 1.0 / k as f64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_matches_log_form_and_series_branches() {
        for l in 0..6 {
            for &z in &[1.001, 1.3, 1.9, 2.0, 2.1, 3.0, 10.0] {
                let direct = 0.5 * legendre_p_one(l, z) * ((z + 1.0) / (z - 1.0)).ln() - legendre_w(l, z);
                let q = legendre_q(l, z, z - 1.0);
                let tol = if z > 2.5 { 1e-6 } else { 1e-8 };
                assert!((q - direct).abs() <= tol * direct.abs().max(1e-3), "l={l} z={z} {q} {direct}");
            }
        }
        // branches agree at the switch
        for l in 0..8 {
            let a = legendre_q(l, 1.25, 0.25);
            let b = legendre_q(l, 1.25 + 1e-12, 0.25 + 1e-12);
            assert!((a - b).abs() < 1e-10 * a.abs(), "{l}");
        }
    }

    #[test]
    fn q_far_asymptotics() {
        // Q_l(z) ~ l!/(2l+1)!! z^{-l-1}
        let z: f64 = 1e4;
        let mut dfac = 1.0;
        let mut fac = 1.0;
        for l in 0..6usize {
            if l > 0 {
                fac *= l as f64;
            }
            dfac *= (2 * l + 1) as f64;
            let want = fac / dfac * z.powi(-(l as i32) - 1);
            assert!((legendre_q(l, z, z - 1.0) / want - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn w_at_one_is_harmonic() {
        for l in 0..7 {
            assert!((legendre_w(l, 1.0) - harmonic(l)).abs() < 1e-14);
        }
    }
}
