//! Staggered radial mesh `r_i = R g((i+½)/n)` with parity-aware high-order operators.
//!
//! A channel-l field is the radial coefficient of `P_l(cos θ)` (or `Y_lm`); it extends
//! to negative r with parity `(-1)^l`, which is what the ghost folding at the origin
//! encodes. At `r_max` fields are continued oddly (homogeneous Dirichlet).

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stencil;
use std::f64::consts::PI;
use std::sync::Arc;

const HALF: i64 = 4; // 8th-order centered stencils

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stretch {
    Uniform,
    /// `g(ξ) ∝ ξ + s(ξ − tanh(κξ)/κ)`: spacing near the origin is `1 + s tanh²κ` times finer.
    Tanh { strength: f64, rate: f64 },
}

impl Stretch {
    pub fn graded() -> Self {
        Stretch::Tanh { strength: 4.0, rate: 3.0 }
    }

    fn raw(&self, x: f64) -> (f64, f64) {
        match *self {
            Stretch::Uniform => (x, 1.0),
            Stretch::Tanh { strength: s, rate: k } => {
                let t = (k * x).tanh();
                (x + s * (x - t / k), 1.0 + s * t * t)
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Stretch::Uniform => "uniform".into(),
            Stretch::Tanh { strength, rate } => format!("tanh(s={strength},k={rate})"),
        }
    }
}

/// Sparse operator rows: `(Af)_i = Σ c f_j` over `rows[i] = [(j, c)]`.
#[derive(Clone, Debug)]
pub struct Rows(pub Vec<Vec<(usize, f64)>>);

impl Rows {
    pub fn apply<T: Scalar>(&self, f: &[T]) -> Vec<T> {
        self.0
            .iter()
            .map(|row| {
                let mut s = T::zero();
                for &(j, c) in row {
                    s += f[j].scale(c);
                }
                s
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct RadialGrid {
    n: usize,
    r_max: f64,
    stretch: Stretch,
    h: f64,
    xi: Vec<f64>,
    nodes: Vec<f64>,
    jac: Vec<f64>,
    weights: Vec<f64>,
    mid_weights: Vec<f64>,
    // node → face derivative (faces at ξ = kh, k = 1..n) for the Laplacian form
    face_even: Rows,
    face_odd: Rows,
    face_weights: Vec<f64>,
    // first derivative on even / odd fields, Dirichlet at r_max
    d_even: Rows,
    d_odd: Rows,
    // first derivative with one-sided closure at r_max (no boundary condition)
    d_even_free: Rows,
    d_odd_free: Rows,
}

pub fn build_grid(n: usize, r_max: f64, stretch: Stretch) -> Result<Arc<RadialGrid>> {
    RadialGrid::new(n, r_max, stretch).map(Arc::new)
}

impl RadialGrid {
    pub fn new(n: usize, r_max: f64, stretch: Stretch) -> Result<Self> {
        if n < 16 {
            return Err(Error::Config(format!("grid needs n >= 16, got {n}")));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(Error::Config(format!("r_max must be positive, got {r_max}")));
        }
        if let Stretch::Tanh { strength, rate } = stretch {
            if !(strength >= 0.0 && rate > 0.0) {
                return Err(Error::Config("tanh grading needs strength >= 0, rate > 0".into()));
            }
        }
        let h = 1.0 / n as f64;
        let g1 = stretch.raw(1.0).0;
        let xi: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
        let nodes: Vec<f64> = xi.iter().map(|&x| r_max * stretch.raw(x).0 / g1).collect();
        let jac: Vec<f64> = xi.iter().map(|&x| r_max * stretch.raw(x).1 / g1).collect();
        let mid_weights: Vec<f64> = (0..n).map(|i| h * jac[i] * nodes[i] * nodes[i]).collect();

        // Euler–Maclaurin closure of the midpoint rule at ξ = 1; the integrand is even at ξ = 0.
        // Five nodes keep every corrected weight positive; the closure is O(h⁶).
        let m = 5;
        let tail: Vec<f64> = (n - m..n).map(|i| xi[i]).collect();
        let c = stencil::fornberg(1.0, &tail, 3);
        let mut weights = mid_weights.clone();
        for (k, i) in (n - m..n).enumerate() {
            let corr = h * h / 24.0 * c[1][k] - 7.0 * h.powi(4) / 5760.0 * c[3][k];
            weights[i] += corr * jac[i] * nodes[i] * nodes[i];
        }

        let mut g = Self {
            n,
            r_max,
            stretch,
            h,
            xi,
            nodes,
            jac,
            weights,
            mid_weights,
            face_even: Rows(vec![]),
            face_odd: Rows(vec![]),
            face_weights: vec![],
            d_even: Rows(vec![]),
            d_odd: Rows(vec![]),
            d_even_free: Rows(vec![]),
            d_odd_free: Rows(vec![]),
        };
        g.face_even = g.face_rows(1.0);
        g.face_odd = g.face_rows(-1.0);
        g.face_weights = (1..=n)
            .map(|k| {
                let (gx, dg) = stretch.raw(k as f64 * h);
                let r = r_max * gx / g1;
                let w = h * r_max * dg / g1 * r * r;
                if k == n { 0.5 * w } else { w }
            })
            .collect();
        g.d_even = g.derivative_rows(1.0, false);
        g.d_odd = g.derivative_rows(-1.0, false);
        g.d_even_free = g.derivative_rows(1.0, true);
        g.d_odd_free = g.derivative_rows(-1.0, true);
        Ok(g)
    }

    /// Staggered 8th-order derivative from nodes to faces `ξ = kh`, k = 1..n. Unlike the
    /// collocated stencil it does not annihilate the odd–even mode, so `DᵀΩD` has no spurious
    /// near-kernel.
    fn face_rows(&self, parity: f64) -> Rows {
        let n = self.n as i64;
        let offs: Vec<f64> = (-HALF..HALF).map(|o| o as f64 + 0.5).collect();
        let w = stencil::fornberg(0.0, &offs, 1)[1].clone();
        let rows = (1..=n)
            .map(|k| {
                let (_, dg) = self.stretch.raw(k as f64 * self.h);
                let scale = 1.0 / (self.h * self.r_max * dg / self.stretch.raw(1.0).0);
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * HALF as usize);
                let mut push = |j: usize, v: f64| match row.iter_mut().find(|e| e.0 == j) {
                    Some(e) => e.1 += v,
                    None => row.push((j, v)),
                };
                for (o, c) in (-HALF..HALF).zip(&w) {
                    let i = k + o;
                    if i < 0 {
                        push((-i - 1) as usize, parity * c * scale);
                    } else if i >= n {
                        push((2 * n - 1 - i) as usize, -c * scale);
                    } else {
                        push(i as usize, c * scale);
                    }
                }
                row.retain(|e| e.1 != 0.0);
                row
            })
            .collect();
        Rows(rows)
    }

    fn derivative_rows(&self, parity: f64, free: bool) -> Rows {
        let n = self.n as i64;
        let w = stencil::centered(HALF as usize, 1);
        let tail = 2 * HALF as usize + 1;
        let tail_xi: Vec<f64> = (self.n - tail..self.n).map(|i| self.xi[i]).collect();
        let rows = (0..self.n)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(tail);
                let scale = 1.0 / (self.h * self.jac[i]);
                if free && i as i64 + HALF >= n {
                    let c = stencil::fornberg(self.xi[i], &tail_xi, 1);
                    for (k, cj) in c[1].iter().enumerate() {
                        row.push((self.n - tail + k, cj / self.jac[i]));
                    }
                    return row;
                }
                let mut push = |j: usize, v: f64| match row.iter_mut().find(|e| e.0 == j) {
                    Some(e) => e.1 += v,
                    None => row.push((j, v)),
                };
                for (o, c) in (-HALF..=HALF).zip(&w) {
                    if *c == 0.0 {
                        continue;
                    }
                    let k = i as i64 + o;
                    if k < 0 {
                        push((-k - 1) as usize, parity * c * scale);
                    } else if k >= n {
                        push((2 * n - 1 - k) as usize, -c * scale);
                    } else {
                        push(k as usize, c * scale);
                    }
                }
                row
            })
            .collect();
        Rows(rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn stretch(&self) -> Stretch {
        self.stretch
    }
    /// Spacing of the computational coordinate ξ ∈ (0, 1).
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    /// dr/dξ at the nodes.
    pub fn jacobian(&self) -> &[f64] {
        &self.jac
    }
    /// Weights for `∫₀^{r_max} f r² dr`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    /// Plain midpoint weights `h J r²` (the measure used inside operators).
    pub fn midpoint_weights(&self) -> &[f64] {
        &self.mid_weights
    }
    /// Smallest local spacing dr.
    pub fn min_spacing(&self) -> f64 {
        self.jac.iter().cloned().fold(f64::INFINITY, f64::min) * self.h
    }

    pub fn describe(&self) -> String {
        format!("n={} r_max={} stretch={}", self.n, self.r_max, self.stretch.label())
    }

    pub fn same_as(&self, other: &RadialGrid) -> bool {
        std::ptr::eq(self, other) || (self.n == other.n && self.r_max == other.r_max && self.stretch == other.stretch)
    }

    pub fn xi_of_r(&self, r: f64) -> f64 {
        let g1 = self.stretch.raw(1.0).0;
        let target = r / self.r_max * g1;
        match self.stretch {
            Stretch::Uniform => target,
            _ => {
                let (mut lo, mut hi) = (0.0, 2.0);
                while self.stretch.raw(hi).0 < target {
                    hi *= 2.0;
                }
                let mut x = target / self.stretch.raw(target.min(1.0)).1.max(1.0);
                for _ in 0..100 {
                    let (g, dg) = self.stretch.raw(x);
                    if g > target {
                        hi = x;
                    } else {
                        lo = x;
                    }
                    let mut nx = x - (g - target) / dg;
                    if !(nx > lo && nx < hi) {
                        nx = 0.5 * (lo + hi);
                    }
                    if (nx - x).abs() < 1e-16 {
                        break;
                    }
                    x = nx;
                }
                x
            }
        }
    }

    pub fn r_of_xi(&self, x: f64) -> f64 {
        self.r_max * self.stretch.raw(x).0 / self.stretch.raw(1.0).0
    }

    pub fn quadrature(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    /// First derivative d/dr of a field with parity `(-1)^parity_l`, Dirichlet at r_max.
    pub fn derivative<T: Scalar>(&self, f: &[T], parity_l: usize) -> Vec<T> {
        if parity_l.is_multiple_of(2) { self.d_even.apply(f) } else { self.d_odd.apply(f) }
    }

    /// First derivative with a one-sided closure at r_max (annihilates constants).
    pub fn derivative_free<T: Scalar>(&self, f: &[T], parity_l: usize) -> Vec<T> {
        if parity_l.is_multiple_of(2) { self.d_even_free.apply(f) } else { self.d_odd_free.apply(f) }
    }

    pub fn derivative_rows_for(&self, parity_l: usize, free: bool) -> &Rows {
        match (parity_l.is_multiple_of(2), free) {
            (true, false) => &self.d_even,
            (false, false) => &self.d_odd,
            (true, true) => &self.d_even_free,
            (false, true) => &self.d_odd_free,
        }
    }

    /// `(−Δ)_l = W⁻¹ Dᵀ Ω D + l(l+1)/r²` with D the node-to-face derivative and Ω the face
    /// weights; symmetric in the quadrature inner product and positive semidefinite.
    pub fn laplacian(&self, l: usize) -> BandMatrix<f64> {
        let d = if l.is_multiple_of(2) { &self.face_even } else { &self.face_odd };
        let mut k = BandMatrix::zeros(self.n, 2 * HALF as usize, 2 * HALF as usize);
        for (i, row) in d.0.iter().enumerate() {
            let om = self.face_weights[i];
            for &(a, ca) in row {
                for &(b, cb) in row {
                    k.add(a, b, ca * om * cb);
                }
            }
        }
        let ll = (l * (l + 1)) as f64;
        for i in 0..self.n {
            let wi = 1.0 / self.weights[i];
            for j in k.row_range(i) {
                let v = k.get(i, j);
                k.set(i, j, v * wi);
            }
            k.add(i, i, ll / (self.nodes[i] * self.nodes[i]));
        }
        k
    }

    /// Λf = (3/2) f + r f′.
    pub fn generator<T: Scalar>(&self, f: &[T], parity_l: usize) -> Vec<T> {
        let d = self.derivative_free(f, parity_l);
        f.iter().zip(d).zip(&self.nodes).map(|((v, dv), r)| v.scale(1.5) + dv.scale(*r)).collect()
    }

    /// High-order interpolation at an arbitrary radius (parity at 0, odd beyond r_max).
    pub fn interpolate<T: Scalar>(&self, f: &[T], parity_l: usize, r: f64) -> T {
        let sigma = if parity_l.is_multiple_of(2) { 1.0 } else { -1.0 };
        let (r, sign) = if r < 0.0 { (-r, sigma) } else { (r, 1.0) };
        let x = self.xi_of_r(r);
        // Past the stencil reach of the last node the odd extension would wrap back onto
        // the interior samples; the field is taken to vanish there.
        if x > (self.n as f64 + 4.0) * self.h {
            return T::zero();
        }
        let n = self.n as i64;
        let centre = (x / self.h - 0.5).floor() as i64;
        let ks: Vec<i64> = (centre - 4..=centre + 5).collect();
        let xs: Vec<f64> = ks.iter().map(|&k| (k as f64 + 0.5) * self.h).collect();
        let w = stencil::lagrange(x, &xs);
        let mut s = T::zero();
        for (&k, c) in ks.iter().zip(&w) {
            let v = if k < 0 {
                let m = (-k - 1) as usize;
                if m >= self.n { T::zero() } else { f[m].scale(sigma) }
            } else if k >= n {
                let m = 2 * n - 1 - k;
                if m < 0 { T::zero() } else { -f[m as usize] }
            } else {
                f[k as usize]
            };
            s += v.scale(*c);
        }
        s.scale(sign)
    }

    pub fn field<T: Scalar>(self: &Arc<Self>, l: usize, f: impl Fn(f64) -> T) -> RadialField<T> {
        RadialField { grid: self.clone(), l, values: self.nodes.iter().map(|&r| f(r)).collect() }
    }
}

/// Samples of one spherical-harmonic channel.
#[derive(Clone, Debug)]
pub struct RadialField<T> {
    pub grid: Arc<RadialGrid>,
    pub l: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> RadialField<T> {
    pub fn new(grid: Arc<RadialGrid>, l: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::Mismatch(format!("field length {} on grid of {}", values.len(), grid.n())));
        }
        Ok(Self { grid, l, values })
    }

    pub fn zeros(grid: &Arc<RadialGrid>, l: usize) -> Self {
        Self { grid: grid.clone(), l, values: vec![T::zero(); grid.n()] }
    }

    pub fn with_values(&self, values: Vec<T>) -> Self {
        Self { grid: self.grid.clone(), l: self.l, values }
    }

    fn check(&self, other: &Self) -> Result<()> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::Mismatch("fields live on different grids".into()));
        }
        if self.l != other.l {
            return Err(Error::Mismatch(format!("channels {} and {}", self.l, other.l)));
        }
        Ok(())
    }

    /// Channel inner product `∫ f̄ g r² dr` (orthonormal angular convention).
    pub fn inner(&self, other: &Self) -> Result<T> {
        self.check(other)?;
        Ok(inner_raw(&self.grid, &self.values, &other.values))
    }

    /// Inner product in ℝ³ for fields stored as coefficients of `P_l(cos θ)`;
    /// for l = 0 this is the usual 4π embedding.
    pub fn inner_3d(&self, other: &Self) -> Result<T> {
        Ok(self.inner(other)?.scale(4.0 * PI / (2 * self.l + 1) as f64))
    }

    pub fn norm(&self) -> f64 {
        norm_raw(&self.grid, &self.values)
    }

    pub fn norm_3d(&self) -> f64 {
        self.norm() * (4.0 * PI / (2 * self.l + 1) as f64).sqrt()
    }

    pub fn laplacian(&self) -> Self {
        let v = self.grid.laplacian(self.l).map(T::from_f64).matvec(&self.values);
        self.with_values(v)
    }

    pub fn generator(&self) -> Self {
        self.with_values(self.grid.generator(&self.values, self.l))
    }

    pub fn derivative(&self) -> Vec<T> {
        self.grid.derivative(&self.values, self.l)
    }

    pub fn at(&self, r: f64) -> T {
        self.grid.interpolate(&self.values, self.l, r)
    }

    pub fn axpy(&mut self, a: T, x: &Self) -> Result<()> {
        self.check(x)?;
        for (u, v) in self.values.iter_mut().zip(&x.values) {
            *u += a * *v;
        }
        Ok(())
    }

    pub fn scaled(&self, a: T) -> Self {
        self.with_values(self.values.iter().map(|v| *v * a).collect())
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

pub fn inner_raw<T: Scalar>(g: &RadialGrid, f: &[T], h: &[T]) -> T {
    let mut s = T::zero();
    for ((a, b), w) in f.iter().zip(h).zip(&g.weights) {
        s += (a.conj() * *b).scale(*w);
    }
    s
}

pub fn norm_raw<T: Scalar>(g: &RadialGrid, f: &[T]) -> f64 {
    f.iter().zip(&g.weights).map(|(a, w)| a.abs_sq() * w).sum::<f64>().sqrt()
}

pub fn inner_product<T: Scalar>(f: &RadialField<T>, g: &RadialField<T>) -> Result<T> {
    f.inner(g)
}

pub fn apply_channel_laplacian<T: Scalar>(f: &RadialField<T>) -> RadialField<T> {
    f.laplacian()
}

pub fn apply_generator<T: Scalar>(f: &RadialField<T>) -> RadialField<T> {
    f.generator()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uni(n: usize, r: f64) -> Arc<RadialGrid> {
        build_grid(n, r, Stretch::Uniform).unwrap()
    }

    #[test]
    fn staggered_nodes() {
        let g = uni(16, 1.0);
        for (i, r) in g.nodes().iter().enumerate() {
            assert!((r - (i as f64 + 0.5) / 16.0).abs() < 1e-15);
        }
        assert!(build_grid(8, 1.0, Stretch::Uniform).is_err());
        assert!(build_grid(32, 0.0, Stretch::Uniform).is_err());
    }

    #[test]
    fn ball_volume_moment() {
        for stretch in [Stretch::Uniform, Stretch::graded()] {
            let g = build_grid(512, 7.0, stretch).unwrap();
            let one = vec![1.0; g.n()];
            let v = g.quadrature(&one);
            assert!((v / (343.0 / 3.0) - 1.0).abs() < 1e-10, "{stretch:?} {v}");
            assert!(g.weights().iter().all(|w| *w > 0.0));
        }
    }

    #[test]
    fn graded_density() {
        let g = build_grid(4096, 40.0, Stretch::graded()).unwrap();
        let j = g.jacobian();
        assert!(j[g.n() - 1] / j[0] >= 4.0);
        let mut prev = 0.0;
        for &r in g.nodes() {
            assert!(r > prev);
            prev = r;
        }
        assert!(prev <= 40.0);
        let x = g.xi_of_r(3.3);
        assert!((g.r_of_xi(x) - 3.3).abs() < 1e-12);
    }

    #[test]
    fn gaussian_integral_3d() {
        let g = uni(1024, 20.0);
        let f = g.field(0, |r| (-r * r / 2.0).exp());
        let v = f.inner_3d(&f).unwrap();
        assert!((v / PI.powf(1.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_derivative_annihilates_constants() {
        let g = build_grid(300, 10.0, Stretch::graded()).unwrap();
        let d = g.derivative_free(&vec![1.0; g.n()], 0);
        assert!(d.iter().all(|v| v.abs() < 1e-12));
        let lam = g.generator(&vec![1.0; g.n()], 0);
        assert!(lam.iter().all(|v| (v - 1.5).abs() < 1e-10));
    }

    #[test]
    fn laplacian_of_gaussian() {
        for stretch in [Stretch::Uniform, Stretch::graded()] {
            let g = build_grid(1024, 20.0, stretch).unwrap();
            let f = g.field(0, |r| (-r * r / 2.0).exp());
            let lf = f.laplacian();
            let err = g.nodes().iter().zip(&lf.values).map(|(r, v)| (v - (3.0 - r * r) * (-r * r / 2.0).exp()).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "{stretch:?} {err}");
        }
    }

    #[test]
    fn harmonic_fields_interior() {
        let g = uni(400, 10.0);
        let c = g.field(0, |_| 1.0).laplacian();
        let x = g.field(1, |r| r).laplacian();
        for i in 0..g.n() - 12 {
            assert!(c.values[i].abs() < 1e-8);
            assert!(x.values[i].abs() < 1e-7, "{i} {}", x.values[i]);
        }
    }

    #[test]
    fn laplacian_symmetric_psd() {
        let g = build_grid(200, 12.0, Stretch::graded()).unwrap();
        for l in 0..4 {
            let m = g.laplacian(l);
            let w = g.weights();
            for i in 0..g.n() {
                for j in m.row_range(i) {
                    let a = w[i] * m.get(i, j);
                    let b = w[j] * m.get(j, i);
                    assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-300));
                }
            }
            let f = g.field(l, |r| r.powi(l as i32) * (-r).exp() * (1.0 + r).sin());
            let q = f.inner(&f.laplacian()).unwrap();
            assert!(q > 0.0);
        }
    }

    #[test]
    fn generator_skew() {
        let g = uni(2048, 40.0);
        let f = g.field(0, |r| (-r).exp() * (1.0 + r * r).cos() / (1.0 + r).sqrt() * (1.0 + r));
        let h = g.field(0, |r| (-0.7 * r * r).exp() + (-r).exp() * r);
        let a = f.generator().inner(&h).unwrap();
        let b = f.inner(&h.generator()).unwrap();
        assert!((a + b).abs() <= 1e-8 * a.abs().max(b.abs()));
    }

    #[test]
    fn interpolation_with_parity() {
        let g = build_grid(512, 10.0, Stretch::graded()).unwrap();
        let f = g.field(1, |r| r * (-r * r).exp());
        for r in [0.0, 0.001, 0.37, 1.234, 3.0] {
            assert!((f.at(r) - r * (-r * r).exp()).abs() < 1e-10, "{r}");
        }
        let e = g.field(0, |r| (-r * r).exp());
        assert!((e.at(0.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hermitian_and_mismatch() {
        use num_complex::Complex64 as C;
        let g = uni(64, 5.0);
        let f = g.field(0, |r| C::new(r.cos(), r.sin()) * (-r).exp());
        let h = g.field(0, |r| C::new(1.0, r) * (-r * r).exp());
        let a = f.inner(&h).unwrap();
        let b = h.inner(&f).unwrap();
        assert!((a - b.conj()).norm() < 1e-14);
        let other = g.field(1, |r| C::new(r, 0.0));
        assert!(f.inner(&other).is_err());
        let g2 = uni(64, 6.0);
        assert!(f.inner(&g2.field(0, |_| C::new(1.0, 0.0))).is_err());
    }
}
