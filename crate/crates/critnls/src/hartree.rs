//! The Riesz potential `A(f) = |x|⁻² * f` restricted to spherical-harmonic channels.
//!
//! For `f = f_l(ρ) P_l(cos θ)` the Funk–Hecke theorem gives
//! `A(f) = P_l(cos θ) ∫ K_l(r, ρ) f_l(ρ) ρ² dρ` with `K_l = c Q_l(z)/(rρ)`,
//! `z = (r² + ρ²)/(2rρ)`, `c = 2π`. The leading behaviour of `Q_l` away from the diagonal is
//! `(r∧ρ)^l/(r∨ρ)^{l+2}` (times `l!/(2l+1)!!`), but the kernel is not of that form near `r = ρ`,
//! where it carries a `log|r − ρ|` singularity.
//!
//! Discretization: in the computational coordinate the integrand extends to the full line
//! as `a(s) log|r − s| + smooth`, with `a` odd. Off-diagonal nodes use `K_l` directly; the
//! diagonal receives the mirror node and the Navot–Sidi correction for the logarithm
//! (`Σ 2ζ'(−2k) F^{(2k)} h^{2k+1}/(2k)!`), with derivatives taken by centered stencils.

use crate::error::{Error, Result};
use crate::grid::{RadialField, RadialGrid};
use crate::quad;
use crate::special::{harmonic, legendre_p, legendre_q};
use crate::stencil;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

/// Channel normalization of the Funk–Hecke kernel (confirmed against the 3-D oracle).
pub const CHANNEL_COEFFICIENT: f64 = 2.0 * PI;

// ζ'(−2), ζ'(−4), ζ'(−6)
const ZETA_PRIME: [f64; 3] = [
    -0.030_448_457_058_393_27,
    0.007_983_811_450_268_625,
    -0.005_899_759_143_515_937,
];

#[derive(Clone, Debug)]
pub struct MultipoleKernel {
    pub l: usize,
    pub coefficient: f64,
    pub grid: Arc<RadialGrid>,
    /// Row-major n×n: `(A_l f)(r_i) = Σ_j m[i n + j] f_j`.
    pub matrix: Vec<f64>,
}

impl MultipoleKernel {
    pub fn new(grid: &Arc<RadialGrid>, l: usize) -> Self {
        Self::with_coefficient(grid, l, CHANNEL_COEFFICIENT)
    }

    pub fn with_coefficient(grid: &Arc<RadialGrid>, l: usize, c: f64) -> Self {
        let n = grid.n();
        let r = grid.nodes();
        let jac = grid.jacobian();
        let h = grid.h();
        let hl = harmonic(l);
        let mut m = vec![0.0; n * n];

        // stencils for F'', F'''', F^{(6)} at unit spacing
        let p = 4usize;
        let st: Vec<Vec<f64>> = (1..=3).map(|k| stencil::centered(p, 2 * k)).collect();
        let mut fact = [0.0; 3];
        let mut acc = 1.0;
        for k in 1..=6 {
            acc *= k as f64;
            if k % 2 == 0 {
                fact[k / 2 - 1] = acc;
            }
        }
        let mut corr = vec![0.0; 2 * p + 1];
        for (o, c) in corr.iter_mut().enumerate() {
            for k in 0..3 {
                *c += 2.0 * ZETA_PRIME[k] * h / fact[k] * st[k][o];
            }
        }

        for i in 0..n {
            let ri = r[i];
            let row = &mut m[i * n..(i + 1) * n];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let rho = r[j];
                let z = (ri * ri + rho * rho) / (2.0 * ri * rho);
                let d = ri - rho;
                let zm1 = d * d / (2.0 * ri * rho);
                row[j] = h * jac[j] * c * rho / ri * legendre_q(l, z, zm1);
            }
            // log amplitude F(ξ) = a(ρ) J, a = −(c ρ / r) P_l(z) f
            let amp = |k: usize| -> f64 {
                let rho = r[k];
                let z = (ri * ri + rho * rho) / (2.0 * ri * rho);
                -(c * rho / ri) * legendre_p(l, z)[l] * jac[k]
            };
            let fi = -c * jac[i];
            let ci = -0.5 * c * hl;
            // mirror node −ξ_i and the singular node itself
            row[i] += h * jac[i] * (c * (2.0 * ri).ln() + ci);
            row[i] += h * (fi * (h / (2.0 * PI)).ln() + fi * jac[i].ln() + ci * jac[i]);
            for (o, w) in corr.iter().enumerate() {
                let k = i as i64 + o as i64 - p as i64;
                if k >= n as i64 {
                    continue;
                }
                if k < 0 {
                    let q = (-k - 1) as usize;
                    row[q] -= w * amp(q);
                } else {
                    row[k as usize] += w * amp(k as usize);
                }
            }
        }

        // symmetrize in the quadrature inner product: M ← W⁻¹ (W M + Mᵀ W)/2
        let w = grid.weights();
        for i in 0..n {
            for j in i + 1..n {
                let s = 0.5 * (w[i] * m[i * n + j] + w[j] * m[j * n + i]);
                m[i * n + j] = s / w[i];
                m[j * n + i] = s / w[j];
            }
        }
        Self { l, coefficient: c, grid: grid.clone(), matrix: m }
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|i| dot(&self.matrix[i * n..(i + 1) * n], f)).collect()
    }

    pub fn apply_complex(&self, f: &[crate::C64]) -> Vec<crate::C64> {
        let re: Vec<f64> = f.iter().map(|v| v.re).collect();
        let im: Vec<f64> = f.iter().map(|v| v.im).collect();
        let (a, b) = (self.apply(&re), self.apply(&im));
        a.into_iter().zip(b).map(|(x, y)| crate::C64::new(x, y)).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.matrix[i * n..(i + 1) * n]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four partial sums: fixed association order keeps results reproducible
    let mut s = [0.0; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        for t in 0..4 {
            s[t] += a[4 * k + t] * b[4 * k + t];
        }
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

/// Lazily assembled channel kernels on one grid.
#[derive(Debug)]
pub struct Hartree {
    grid: Arc<RadialGrid>,
    kernels: Vec<OnceLock<MultipoleKernel>>,
}

impl Hartree {
    pub fn new(grid: &Arc<RadialGrid>, lmax: usize) -> Self {
        Self { grid: grid.clone(), kernels: (0..=lmax).map(|_| OnceLock::new()).collect() }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn lmax(&self) -> usize {
        self.kernels.len() - 1
    }

    pub fn kernel(&self, l: usize) -> &MultipoleKernel {
        assert!(l < self.kernels.len(), "channel {l} beyond lmax {}", self.lmax());
        self.kernels[l].get_or_init(|| MultipoleKernel::new(&self.grid, l))
    }

    /// Channel-l multipole of `A(f P_l)`.
    pub fn channel(&self, l: usize, f: &[f64]) -> Vec<f64> {
        self.kernel(l).apply(f)
    }

    /// `A(f)` for a radial density.
    pub fn potential(&self, f: &[f64]) -> Vec<f64> {
        self.channel(0, f)
    }
}

pub fn channel_convolve(kernel: &MultipoleKernel, f: &RadialField<f64>) -> Result<RadialField<f64>> {
    if f.l != kernel.l {
        return Err(Error::Mismatch(format!("field channel {} vs kernel channel {}", f.l, kernel.l)));
    }
    if !f.grid.same_as(&kernel.grid) {
        return Err(Error::Mismatch("kernel and field grids differ".into()));
    }
    Ok(f.with_values(kernel.apply(&f.values)))
}

/// `A(f)` for a radial density; `nonnegative` rejects densities with negative samples.
pub fn hartree_potential(h: &Hartree, f: &RadialField<f64>, nonnegative: bool) -> Result<RadialField<f64>> {
    if f.l != 0 {
        return Err(Error::Mismatch(format!("hartree_potential needs l = 0, got {}", f.l)));
    }
    if !f.grid.same_as(h.grid()) {
        return Err(Error::Mismatch("grid differs from the Hartree operator's".into()));
    }
    if nonnegative && f.values.iter().any(|v| *v < 0.0) {
        return Err(Error::Config("negative density with nonnegativity flag set".into()));
    }
    Ok(f.with_values(h.potential(&f.values)))
}

/// `A(f)(0) = 4π ∫₀^∞ f(ρ) dρ` for a radial density.
pub fn potential_at_origin(grid: &RadialGrid, f: &[f64]) -> f64 {
    let h = grid.h();
    4.0 * PI * f.iter().zip(grid.jacobian()).map(|(v, j)| h * j * v).sum::<f64>()
}

/// Independent check: `A f(x) = ∫₀^∞ dρ ∫_{S²} f(x + ρω) dΩ` by adaptive product quadrature,
/// for a radial density given as a function of |y|. `jumps` lists radii where f is
/// discontinuous; `support` bounds the region where f is non-negligible.
pub fn brute_force_radial(f: &dyn Fn(f64) -> f64, r: f64, jumps: &[f64], support: f64, tol: f64) -> Result<(f64, f64)> {
    let mut errs = 0.0f64;
    let mut fail: Option<Error> = None;
    let mut outer = |rho: f64| -> f64 {
        let mut tb = vec![-1.0, 1.0];
        if r > 0.0 && rho > 0.0 {
            for &a in jumps {
                let t = (a * a - r * r - rho * rho) / (2.0 * r * rho);
                if t > -1.0 && t < 1.0 {
                    tb.push(t);
                }
            }
        }
        tb.sort_by(f64::total_cmp);
        let mut inner = |t: f64| f((r * r + rho * rho + 2.0 * r * rho * t).max(0.0).sqrt());
        match quad::adaptive(&mut inner, &tb, tol * 0.1, 4000) {
            Ok((v, e)) => {
                errs = errs.max(e);
                2.0 * PI * v
            }
            Err(e) => {
                fail = Some(e);
                f64::NAN
            }
        }
    };
    let mut rb = vec![0.0, support + r];
    for &a in jumps {
        for c in [a - r, a + r, (r - a).abs()] {
            if c > 0.0 && c < support + r {
                rb.push(c);
            }
        }
    }
    rb.sort_by(f64::total_cmp);
    rb.dedup();
    let res = quad::adaptive(&mut outer, &rb, tol, 20000);
    if let Some(e) = fail {
        return Err(e);
    }
    let (v, e) = res?;
    Ok((v, e + errs))
}

/// Same oracle for a general (smooth) 3-D density, evaluated at point `x`.
pub fn brute_force_3d(f: &dyn Fn([f64; 3]) -> f64, x: [f64; 3], support: f64, tol: f64) -> Result<(f64, f64)> {
    let (pn, pw) = quad::gauss_legendre(48);
    let mut fail: Option<Error> = None;
    let mut outer = |rho: f64| -> f64 {
        let mut inner = |t: f64| {
            let st = (1.0 - t * t).max(0.0).sqrt();
            let mut s = 0.0;
            for (u, w) in pn.iter().zip(&pw) {
                let ph = PI * (u + 1.0);
                let y = [x[0] + rho * st * ph.cos(), x[1] + rho * st * ph.sin(), x[2] + rho * t];
                s += w * PI * f(y);
            }
            s
        };
        match quad::adaptive(&mut inner, &[-1.0, 0.0, 1.0], tol * 0.1, 4000) {
            Ok((v, _)) => v,
            Err(e) => {
                fail = Some(e);
                f64::NAN
            }
        }
    };
    let norm = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    let res = quad::adaptive(&mut outer, &[0.0, 0.5 * (support + norm), support + norm], tol, 20000);
    if let Some(e) = fail {
        return Err(e);
    }
    res
}

/// Result of fitting the channel normalization against the oracle.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub fitted: Vec<f64>,
    pub used: f64,
    pub radii: Vec<f64>,
    pub max_rel_err: f64,
}

/// Fit `c_l` per channel by comparing unit-coefficient kernels with the 3-D oracle on
/// `ρ^l e^{−ρ²} P_l` at several nodes.
pub fn calibrate(grid: &Arc<RadialGrid>, lmax: usize, node_ids: &[usize]) -> Result<Calibration> {
    let mut fitted = Vec::new();
    let mut worst = 0.0f64;
    let radii: Vec<f64> = node_ids.iter().map(|&i| grid.nodes()[i]).collect();
    for l in 0..=lmax {
        let k = MultipoleKernel::with_coefficient(grid, l, 1.0);
        let f = grid.field(l, |r| r.powi(l as i32) * (-r * r).exp());
        let a = k.apply(&f.values);
        let mut ratios = Vec::new();
        for (&i, &r) in node_ids.iter().zip(&radii) {
            let dens = |y: [f64; 3]| {
                let rr = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
                if rr == 0.0 {
                    return if l == 0 { 1.0 } else { 0.0 };
                }
                rr.powi(l as i32) * (-rr * rr).exp() * legendre_p(l, y[2] / rr)[l]
            };
            let (v, _) = brute_force_3d(&dens, [0.0, 0.0, r], 7.0, 1e-10)?;
            ratios.push(v / a[i]);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        for q in &ratios {
            worst = worst.max((q / CHANNEL_COEFFICIENT - 1.0).abs());
        }
        fitted.push(mean);
    }
    Ok(Calibration { fitted, used: CHANNEL_COEFFICIENT, radii, max_rel_err: worst })
}
