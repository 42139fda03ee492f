//! Linearized operators `L_{±,μ}` around a ground state, per spherical-harmonic channel.
//!
//! `L_+ = −Δ + 1 − (7/3)Q^{4/3} − μA(Q²) − 2μ Q A(Q ·)`,
//! `L_− = −Δ + 1 − Q^{4/3} − μA(Q²)`.
//! The nonlocal block of `L_+` acts on channel l through the channel-l kernel.

use crate::banded::BandMatrix;
use crate::dense::{self, Dense};
use crate::error::{Error, Result};
use crate::grid::{inner_raw, norm_raw, RadialField, RadialGrid};
use crate::groundstate::GroundState;
use crate::hartree::Hartree;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Plus,
    Minus,
}

impl Kind {
    pub fn label(&self) -> &'static str {
        match self {
            Kind::Plus => "L+",
            Kind::Minus => "L-",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChannelOperator {
    pub kind: Kind,
    pub l: usize,
    pub mu: f64,
    pub grid: Arc<RadialGrid>,
    /// `(−Δ)_l + 1 + local_potential` as a band matrix.
    pub local: BandMatrix<f64>,
    pub local_potential: Vec<f64>,
    nonlocal: Option<(f64, Vec<f64>, Arc<Hartree>)>,
}

pub fn assemble(hartree: &Arc<Hartree>, q: &[f64], a_q2: &[f64], mu: f64, kind: Kind, l: usize) -> ChannelOperator {
    let grid = hartree.grid().clone();
    let c = match kind {
        Kind::Plus => 7.0 / 3.0,
        Kind::Minus => 1.0,
    };
    let pot: Vec<f64> = q.iter().zip(a_q2).map(|(v, a)| -c * v.abs().powf(4.0 / 3.0) - mu * a).collect();
    let mut local = grid.laplacian(l);
    for (i, p) in pot.iter().enumerate() {
        local.add(i, i, 1.0 + p);
    }
    let nonlocal = (kind == Kind::Plus && mu != 0.0).then(|| (-2.0 * mu, q.to_vec(), hartree.clone()));
    ChannelOperator { kind, l, mu, grid, local, local_potential: pot, nonlocal }
}

pub fn assemble_channel_operator(gs: &GroundState, kind: Kind, l: usize) -> Result<ChannelOperator> {
    if l > gs.hartree.lmax() {
        return Err(Error::Config(format!("channel {l} beyond lmax {}", gs.hartree.lmax())));
    }
    Ok(assemble(&gs.hartree, &gs.q.values, &gs.a_q2, gs.mu, kind, l))
}

impl ChannelOperator {
    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn has_nonlocal(&self) -> bool {
        self.nonlocal.is_some()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.local.matvec(x);
        if let Some((c, q, h)) = &self.nonlocal {
            let qx: Vec<f64> = q.iter().zip(x).map(|(a, b)| a * b).collect();
            let a = h.channel(self.l, &qx);
            for i in 0..y.len() {
                y[i] += c * q[i] * a[i];
            }
        }
        y
    }

    pub fn apply_field(&self, f: &RadialField<f64>) -> Result<RadialField<f64>> {
        if f.l != self.l || !f.grid.same_as(&self.grid) {
            return Err(Error::Mismatch("field does not match operator channel/grid".into()));
        }
        Ok(f.with_values(self.apply(&f.values)))
    }

    pub fn to_dense(&self) -> Dense {
        let n = self.n();
        let mut m = Dense::zeros(n, n);
        for i in 0..n {
            for j in self.local.row_range(i) {
                m[(i, j)] = self.local.get(i, j);
            }
        }
        if let Some((c, q, h)) = &self.nonlocal {
            let k = h.kernel(self.l);
            for i in 0..n {
                let row = k.row(i);
                for j in 0..n {
                    m[(i, j)] += c * q[i] * row[j] * q[j];
                }
            }
        }
        m
    }

    /// `W^{1/2} L W^{-1/2}`, exactly symmetrized.
    fn symmetric_form(&self) -> Dense {
        let n = self.n();
        let s: Vec<f64> = self.grid.weights().iter().map(|w| w.sqrt()).collect();
        let a = self.to_dense();
        Dense::from_fn(n, n, |i, j| 0.5 * (s[i] * a[(i, j)] / s[j] + s[j] * a[(j, i)] / s[i]))
    }

    /// max |(Lf, g) − (f, Lg)| / (‖f‖‖g‖) over the given probes.
    pub fn symmetry_defect(&self, probes: &[Vec<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for f in probes {
            for g in probes {
                let a = inner_raw(&self.grid, &self.apply(f), g);
                let b = inner_raw(&self.grid, f, &self.apply(g));
                worst = worst.max((a - b).abs() / (norm_raw(&self.grid, f) * norm_raw(&self.grid, g)));
            }
        }
        worst
    }
}

#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub kind: Kind,
    pub l: usize,
    pub eigenvalues: Vec<f64>,
    pub eigenfields: Vec<RadialField<f64>>,
    pub gaps: Vec<f64>,
}

/// The k lowest eigenpairs; eigenfields are orthonormal in the channel inner product and
/// signed so that their largest-magnitude sample is positive.
pub fn lowest_eigenpairs(op: &ChannelOperator, k: usize) -> Result<SpectrumReport> {
    if k == 0 || k > 10 {
        return Err(Error::Config(format!("k must be in 1..=10, got {k}")));
    }
    let n = op.n();
    let (vals, vecs) = dense::sym_eigen(&op.symmetric_form())?;
    let s: Vec<f64> = op.grid.weights().iter().map(|w| w.sqrt()).collect();
    let mut fields = Vec::with_capacity(k);
    for c in 0..k {
        let mut v: Vec<f64> = (0..n).map(|i| vecs[(i, c)] / s[i]).collect();
        let nrm = norm_raw(&op.grid, &v);
        let big = v.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sgn = if big < 0.0 { -1.0 } else { 1.0 };
        for x in &mut v {
            *x *= sgn / nrm;
        }
        fields.push(RadialField { grid: op.grid.clone(), l: op.l, values: v });
    }
    let eigenvalues: Vec<f64> = vals[..k].to_vec();
    let gaps = eigenvalues.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(SpectrumReport { kind: op.kind, l: op.l, eigenvalues, eigenfields: fields, gaps })
}

/// True when the field has no sign change beyond `tol` of its peak amplitude.
pub fn has_fixed_sign(f: &[f64], tol: f64) -> bool {
    let peak = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    f.iter().all(|x| *x >= -tol * peak) || f.iter().all(|x| *x <= tol * peak)
}

#[derive(Clone, Debug)]
pub struct ConstrainedSolution {
    pub x: RadialField<f64>,
    pub multipliers: Vec<f64>,
    /// ‖L x − s‖ / ‖s‖ (the multipliers absorb any kernel component of s).
    pub residual: f64,
    /// ‖x‖_{H²} / ‖s‖_{L²} with ‖x‖_{H²} := ‖(1 − Δ)x‖.
    pub amplification: f64,
    /// Largest normalized kernel component of the source.
    pub kernel_component: f64,
}

/// Solve `L x = s` with `(x, c) = 0` for each constraint by saddle-point bordering.
/// The constraints must span the kernel; a source with a kernel component above `tol`
/// (relative) is rejected.
pub fn solve_with_constraints(
    op: &ChannelOperator,
    source: &RadialField<f64>,
    constraints: &[RadialField<f64>],
    tol: f64,
) -> Result<ConstrainedSolution> {
    if source.l != op.l || !source.grid.same_as(&op.grid) {
        return Err(Error::Mismatch("source does not match operator".into()));
    }
    let g = &op.grid;
    let sn = source.norm();
    let mut kc = 0.0f64;
    for c in constraints {
        if c.l != op.l {
            return Err(Error::Mismatch("constraint channel differs".into()));
        }
        if sn > 0.0 {
            kc = kc.max((c.inner(source)?).abs() / (c.norm() * sn));
        }
    }
    if kc > tol {
        return Err(Error::Solvability(format!(
            "source has kernel component {kc:.3e} (tolerance {tol:.1e}) in {} channel {}",
            op.kind.label(),
            op.l
        )));
    }
    let n = op.n();
    let m = constraints.len();
    let a = op.to_dense();
    let w = g.weights();
    let mut big = Dense::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            big[(i, j)] = a[(i, j)];
        }
    }
    for (k, c) in constraints.iter().enumerate() {
        let cn = c.norm();
        for i in 0..n {
            big[(i, n + k)] = c.values[i] / cn;
            big[(n + k, i)] = w[i] * c.values[i] / cn;
        }
    }
    let mut rhs = source.values.clone();
    rhs.extend(std::iter::repeat_n(0.0, m));
    let sol = dense::Lu::new(&big)?.solve(&rhs)?;
    let x = source.with_values(sol[..n].to_vec());
    let multipliers = sol[n..].to_vec();
    let lx = op.apply(&x.values);
    let res: Vec<f64> = lx.iter().zip(&source.values).map(|(a, b)| a - b).collect();
    let residual = if sn > 0.0 { norm_raw(g, &res) / sn } else { norm_raw(g, &res) };
    Ok(ConstrainedSolution {
        amplification: if sn > 0.0 { h2_norm(&x) / sn } else { 0.0 },
        x,
        multipliers,
        residual,
        kernel_component: kc,
    })
}

/// ‖(1 − Δ)f‖ in the channel inner product.
pub fn h2_norm(f: &RadialField<f64>) -> f64 {
    let lf = f.laplacian();
    let v: Vec<f64> = f.values.iter().zip(&lf.values).map(|(a, b)| a + b).collect();
    norm_raw(&f.grid, &v)
}

/// Eigenvalue counted as zero: |λ| ≤ zero_tol with the next eigenvalue above gap_tol.
pub const ZERO_TOL: f64 = 1e-6;
pub const GAP_TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct ChannelVerdict {
    pub kind: Kind,
    pub l: usize,
    pub eigenvalues: Vec<f64>,
    pub kernel_dim: usize,
    pub expected_kernel_dim: usize,
    pub negative_count: usize,
    pub ground_fixed_sign: bool,
    pub ok: bool,
    pub note: String,
}

#[derive(Clone, Debug)]
pub struct NondegeneracyReport {
    pub mu: f64,
    pub channels: Vec<ChannelVerdict>,
    /// Coercivity constant of L_− on Q⊥ (second eigenvalue of the radial L_−).
    pub minus_coercivity: f64,
    /// Cosine between the L_−,0 ground eigenfield and Q_μ.
    pub minus_kernel_cosine: f64,
    pub passed: bool,
}

impl NondegeneracyReport {
    pub fn failing(&self) -> Vec<String> {
        self.channels.iter().filter(|c| !c.ok).map(|c| format!("{} l={}: {}", c.kind.label(), c.l, c.note)).collect()
    }
}

fn kernel_dim(vals: &[f64]) -> usize {
    let mut d = 0;
    for (i, v) in vals.iter().enumerate() {
        if v.abs() <= ZERO_TOL {
            let next = vals.get(i + 1).copied().unwrap_or(f64::INFINITY);
            if next.abs() > GAP_TOL || next.abs() <= ZERO_TOL {
                d += 1;
            }
        }
    }
    d
}

pub fn nondegeneracy_report(gs: &GroundState, lmax: usize, k: usize) -> Result<NondegeneracyReport> {
    let mut channels = Vec::new();
    let mut cos = 0.0;
    let mut coerc = 0.0;
    let mut jobs = vec![(Kind::Minus, 0usize)];
    for l in 0..=lmax {
        jobs.push((Kind::Plus, l));
    }
    for (kind, l) in jobs {
        let op = assemble_channel_operator(gs, kind, l)?;
        let spec = lowest_eigenpairs(&op, k)?;
        let vals = spec.eigenvalues.clone();
        let kd = kernel_dim(&vals);
        let negative_count = vals.iter().filter(|v| **v < -ZERO_TOL).count();
        let fixed = has_fixed_sign(&spec.eigenfields[0].values, 1e-6);
        let (expected, mut ok, mut note) = match (kind, l) {
            (Kind::Minus, 0) => {
                cos = (spec.eigenfields[0].inner(&gs.q)? / gs.q.norm()).abs();
                coerc = vals[1];
                let ok = kd == 1 && vals[0].abs() <= ZERO_TOL && cos >= 1.0 - 1e-6 && negative_count == 0;
                (1, ok, format!("lowest {:.3e}, cosine to Q {:.9}", vals[0], cos))
            }
            (Kind::Plus, 0) => {
                let none_zero = vals.iter().all(|v| v.abs() > ZERO_TOL);
                (0, none_zero && kd == 0, format!("{negative_count} negative, smallest |λ| {:.3e}", vals.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))))
            }
            (Kind::Plus, 1) => {
                let ok = kd == 1 && vals[0].abs() <= ZERO_TOL && vals[1] >= GAP_TOL;
                (1, ok, format!("lowest {:.3e}, next {:.3e}", vals[0], vals[1]))
            }
            (Kind::Plus, _) => (0, vals[0] > 0.0, format!("lowest {:.3e}", vals[0])),
            (Kind::Minus, _) => unreachable!(),
        };
        if kd != expected {
            ok = false;
            note.push_str(&format!("; kernel dim {kd} != {expected}"));
        }
        channels.push(ChannelVerdict {
            kind,
            l,
            eigenvalues: vals,
            kernel_dim: kd,
            expected_kernel_dim: expected,
            negative_count,
            ground_fixed_sign: fixed,
            ok,
            note,
        });
    }
    let passed = channels.iter().all(|c| c.ok);
    Ok(NondegeneracyReport { mu: gs.mu, channels, minus_coercivity: coerc, minus_kernel_cosine: cos, passed })
}

/// Factored constrained inverse `x = L⁻¹Pf`, `(x, c) = 0`, where P removes the constraint
/// components of the source. Reusable across many sources.
pub struct ConstrainedInverse {
    grid: Arc<RadialGrid>,
    l: usize,
    constraints: Vec<Vec<f64>>,
    lu: dense::Lu,
}

impl ConstrainedInverse {
    pub fn new(op: &ChannelOperator, constraints: &[RadialField<f64>]) -> Result<Self> {
        let n = op.n();
        let m = constraints.len();
        let g = &op.grid;
        let w = g.weights();
        let cs: Vec<Vec<f64>> = constraints
            .iter()
            .map(|c| {
                let nn = c.norm();
                c.values.iter().map(|v| v / nn).collect()
            })
            .collect();
        let a = op.to_dense();
        let mut big = Dense::zeros(n + m, n + m);
        for i in 0..n {
            for j in 0..n {
                big[(i, j)] = a[(i, j)];
            }
        }
        for (k, c) in cs.iter().enumerate() {
            for i in 0..n {
                big[(i, n + k)] = c[i];
                big[(n + k, i)] = w[i] * c[i];
            }
        }
        Ok(Self { grid: op.grid.clone(), l: op.l, constraints: cs, lu: dense::Lu::new(&big)? })
    }

    /// Projects out the constraint directions (assumed mutually orthogonal), then solves.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n();
        let mut rhs = f.to_vec();
        for c in &self.constraints {
            let a = inner_raw(&self.grid, c, &rhs);
            for i in 0..n {
                rhs[i] -= a * c[i];
            }
        }
        rhs.extend(std::iter::repeat_n(0.0, self.constraints.len()));
        let mut x = self.lu.solve(&rhs)?;
        x.truncate(n);
        Ok(x)
    }

    pub fn channel(&self) -> usize {
        self.l
    }
}

/// Operator norm of `f ↦ e^{cr}(1 − Δ)L⁻¹P(e^{−cr}f)` (H² ← L², exponentially weighted when
/// c > 0), by power iteration on `BᵀB`. Every operator involved is self-adjoint in the channel
/// inner product, so `Bᵀ = e^{−cr}L⁻¹P e^{cr}(1 − Δ)` up to the projection.
pub fn constrained_inverse_norm(op: &ChannelOperator, constraints: &[RadialField<f64>], c: f64, iterations: usize) -> Result<f64> {
    let inv = ConstrainedInverse::new(op, constraints)?;
    let g = op.grid.clone();
    let lap = g.laplacian(op.l).affine(1.0, 1.0);
    let e: Vec<f64> = g.nodes().iter().map(|r| (c * r).exp()).collect();
    let n = g.n();
    let mut v: Vec<f64> = g.nodes().iter().map(|r| (-r * r / 8.0).exp() * (1.0 + r)).collect();
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let nv = norm_raw(&g, &v);
        v.iter_mut().for_each(|x| *x /= nv);
        // B v
        let t: Vec<f64> = (0..n).map(|i| v[i] / e[i]).collect();
        let x = inv.apply(&t)?;
        let ex: Vec<f64> = (0..n).map(|i| e[i] * x[i]).collect();
        let bv = lap.matvec(&ex);
        sigma = norm_raw(&g, &bv);
        // Bᵀ (B v)
        let s = lap.matvec(&bv);
        let t: Vec<f64> = (0..n).map(|i| e[i] * s[i]).collect();
        let y = inv.apply(&t)?;
        v = (0..n).map(|i| y[i] / e[i]).collect();
    }
    Ok(sigma)
}

/// `max_{r ≤ r_cut} |x|/Q` for `x = L⁻¹P g` over the supplied sources (each meant to satisfy
/// |g| ≤ e^{−r}). Beyond `r_cut` both sides sink below roundoff and the ratio is not meaningful.
pub fn domination_constant(
    op: &ChannelOperator,
    constraints: &[RadialField<f64>],
    q: &RadialField<f64>,
    sources: &[Vec<f64>],
    r_cut: f64,
) -> Result<f64> {
    let inv = ConstrainedInverse::new(op, constraints)?;
    let mut k = 0.0f64;
    for s in sources {
        let x = inv.apply(s)?;
        for (i, r) in op.grid.nodes().iter().enumerate() {
            if *r <= r_cut {
                k = k.max(x[i].abs() / q.values[i]);
            }
        }
    }
    Ok(k)
}
