//! Radial time evolution of `i u_t + Δu + |u|^{4/3}u + μA(|u|²)u = 0`.
//!
//! Strang splitting: an exact phase rotation by `|u|^{4/3} + μA(|u|²)` (which leaves |u|
//! unchanged) around a Crank–Nicolson step of the channel-0 Laplacian. Both substeps are
//! unitary in the quadrature norm, so mass is conserved to roundoff.

use crate::banded::{BandLu, BandMatrix};
use crate::error::{Error, Result};
use crate::grid::{inner_raw, RadialField, RadialGrid};
use crate::groundstate::{linear_fit, GroundState};
use crate::hartree::Hartree;
use crate::profile::{assemble_r, ProfileSet};
use crate::{ComplexField, C64};
use std::f64::consts::PI;
use std::sync::Arc;

const FOUR_PI: f64 = 4.0 * PI;

/// Grid, coupling and the operators an evolution needs.
#[derive(Clone, Debug)]
pub struct Medium {
    pub grid: Arc<RadialGrid>,
    pub mu: f64,
    hartree: Option<Arc<Hartree>>,
    lap: BandMatrix<f64>,
}

impl Medium {
    pub fn new(grid: &Arc<RadialGrid>, mu: f64) -> Self {
        let hartree = (mu != 0.0).then(|| Arc::new(Hartree::new(grid, 0)));
        Self { grid: grid.clone(), mu, hartree, lap: grid.laplacian(0) }
    }

    /// Reuses the ground state's kernels (same grid).
    pub fn with_hartree(hartree: &Arc<Hartree>, mu: f64) -> Self {
        let grid = hartree.grid().clone();
        Self { lap: grid.laplacian(0), grid, mu, hartree: (mu != 0.0).then(|| hartree.clone()) }
    }

    fn potential(&self, rho: &[f64]) -> Option<Vec<f64>> {
        self.hartree.as_ref().map(|h| h.potential(rho))
    }

    /// `(mass, energy, ‖∇u‖)`, reusing a precomputed `A(|u|²)` when given.
    fn invariants(&self, u: &[C64], a_rho: Option<&[f64]>) -> (f64, f64, f64) {
        let g = &self.grid;
        let w = g.weights();
        let rho: Vec<f64> = u.iter().map(|c| c.norm_sqr()).collect();
        let mass = FOUR_PI * g.quadrature(&rho);
        let (re, im): (Vec<f64>, Vec<f64>) = u.iter().map(|c| (c.re, c.im)).unzip();
        let grad_sq = FOUR_PI * (inner_raw(g, &re, &self.lap.matvec(&re)) + inner_raw(g, &im, &self.lap.matvec(&im)));
        let local = FOUR_PI * rho.iter().zip(w).map(|(p, w)| w * p.powf(5.0 / 3.0)).sum::<f64>();
        let hart = if self.mu != 0.0 {
            let owned;
            let a = match a_rho {
                Some(a) => a,
                None => {
                    owned = self.potential(&rho).unwrap();
                    &owned
                }
            };
            FOUR_PI * inner_raw(g, a, &rho)
        } else {
            0.0
        };
        (mass, 0.5 * grad_sq - 0.3 * local - 0.25 * self.mu * hart, grad_sq.max(0.0).sqrt())
    }

    fn variance(&self, u: &[C64]) -> f64 {
        let g = &self.grid;
        FOUR_PI * u.iter().zip(g.nodes()).zip(g.weights()).map(|((c, r), w)| w * r * r * c.norm_sqr()).sum::<f64>()
    }

    /// `d/dt ‖xu‖² = 4 Im ∫ ū x·∇u`.
    pub fn variance_rate(&self, u: &[C64]) -> f64 {
        let g = &self.grid;
        let du = g.derivative(u, 0);
        4.0 * FOUR_PI * (0..u.len()).map(|i| g.weights()[i] * g.nodes()[i] * (u[i].conj() * du[i]).im).sum::<f64>()
    }
}

#[derive(Clone, Debug)]
pub struct EvolutionState {
    pub t: f64,
    pub field: ComplexField,
    pub dt: f64,
    pub mass: f64,
    pub energy: f64,
    /// Identically zero on the radial path.
    pub momentum: f64,
    pub grad_norm: f64,
}

impl EvolutionState {
    pub fn new(medium: &Medium, field: ComplexField, t: f64) -> Result<Self> {
        if field.l != 0 || !field.grid.same_as(&medium.grid) {
            return Err(Error::Mismatch("evolution needs a radial field on the medium grid".into()));
        }
        let (mass, energy, grad_norm) = medium.invariants(&field.values, None);
        if !(mass > 0.0) {
            return Err(Error::Config("initial data has zero mass".into()));
        }
        Ok(Self { t, field, dt: 0.0, mass, energy, momentum: 0.0, grad_norm })
    }

    /// Recomputed `(mass, energy, ‖∇u‖)`.
    pub fn recompute(&self, medium: &Medium) -> (f64, f64, f64) {
        medium.invariants(&self.field.values, None)
    }

    pub fn variance(&self, medium: &Medium) -> f64 {
        medium.variance(&self.field.values)
    }

    /// Focal length `√(M/‖∇u‖²)`.
    pub fn focal_scale(&self) -> f64 {
        (self.mass).sqrt() / self.grad_norm
    }
}

#[derive(Clone, Debug)]
pub enum InitialData {
    /// `α^{3/2} Q_μ(αβ r)`.
    RescaledSoliton { alpha: f64, beta: f64 },
    /// `R_P(b₀, d₀)` renormalized to `‖Q_μ‖²`; only `d₀ = 0` on the radial path.
    MinimalMassProfile { b0: f64, d0: f64 },
    /// `A e^{−r²/(2w²)}`.
    Gaussian { width: f64, amplitude: f64 },
}

/// Exact free evolution of `A e^{−r²/(2w²)}` under `i u_t + Δu = 0`.
pub fn free_gaussian(width: f64, amplitude: f64, t: f64, r: f64) -> C64 {
    let a = C64::new(0.5 * width * width, 0.0);
    let z = a + C64::new(0.0, t);
    (a / z).powf(1.5) * (-(r * r) / (4.0 * z)).exp() * amplitude
}

pub fn make_initial_data(kind: &InitialData, medium: &Medium, gs: Option<&GroundState>, ps: Option<&ProfileSet>) -> Result<EvolutionState> {
    let g = &medium.grid;
    let need_gs = || gs.ok_or_else(|| Error::Config("this initial datum needs a ground state".into()));
    let values: Vec<C64> = match *kind {
        InitialData::RescaledSoliton { alpha, beta } => {
            if !(alpha > 0.0 && beta > 0.0) {
                return Err(Error::Config(format!("rescaled soliton needs α, β > 0, got ({alpha}, {beta})")));
            }
            let q = &need_gs()?.q;
            g.nodes().iter().map(|&r| C64::new(alpha.powf(1.5) * q.at(alpha * beta * r), 0.0)).collect()
        }
        InitialData::MinimalMassProfile { b0, d0 } => {
            if d0 != 0.0 {
                return Err(Error::Config("drift d₀ ≠ 0 needs the 3-D path; the radial path takes d₀ = 0".into()));
            }
            let ps = ps.ok_or_else(|| Error::Config("minimal-mass data needs a profile hierarchy".into()))?;
            if !ps.grid().same_as(g) {
                return Err(Error::Mismatch("profile and evolution grids differ".into()));
            }
            let r = assemble_r(ps, b0, 0.0)?;
            let k = (ps.gs.mass / r.mass).sqrt();
            r.field[0].values.iter().map(|c| c * k).collect()
        }
        InitialData::Gaussian { width, amplitude } => {
            if !(width > 0.0 && width < 0.25 * g.r_max() && amplitude > 0.0) {
                return Err(Error::Config(format!("gaussian needs 0 < width < r_max/4 and amplitude > 0, got ({width}, {amplitude})")));
            }
            g.nodes().iter().map(|&r| C64::new(amplitude * (-r * r / (2.0 * width * width)).exp(), 0.0)).collect()
        }
    };
    EvolutionState::new(medium, RadialField::new(g.clone(), 0, values)?, 0.0)
}

#[derive(Clone, Copy, Debug)]
pub struct Scheme {
    /// Step at the initial gradient norm.
    pub dt: f64,
    /// `dt ∝ 1/‖∇u‖²` when set.
    pub adaptive: bool,
    /// Drop the nonlinear substeps (free Schrödinger flow).
    pub linear_only: bool,
    /// Stop once the focal scale is below this many local grid cells.
    pub guard_cells: f64,
}

impl Default for Scheme {
    fn default() -> Self {
        Self { dt: 1e-3, adaptive: false, linear_only: false, guard_cells: 8.0 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Stop {
    pub t_final: f64,
    pub grad_threshold: Option<f64>,
    /// Frames at multiples of this interval.
    pub output_every: f64,
    /// Extra frames whenever ‖∇u‖ grew by this factor since the last frame.
    pub frame_growth: Option<f64>,
    pub max_steps: usize,
}

impl Stop {
    pub fn at(t_final: f64, output_every: f64) -> Self {
        Self { t_final, grad_threshold: None, output_every, frame_growth: None, max_steps: 10_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    FinalTime,
    GradThreshold,
    /// Resolution-limit guard; the last frame is the last trusted state.
    ResolutionGuard { focal_scale: f64, cell: f64 },
    MaxSteps,
}

/// Scalar diagnostics after every step.
#[derive(Clone, Debug, Default)]
pub struct Series {
    pub t: Vec<f64>,
    pub dt: Vec<f64>,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// `‖x u‖²`
    pub variance: Vec<f64>,
}

impl Series {
    fn push(&mut self, t: f64, dt: f64, mass: f64, energy: f64, grad: f64, var: f64) {
        self.t.push(t);
        self.dt.push(dt);
        self.mass.push(mass);
        self.energy.push(energy);
        self.grad_norm.push(grad);
        self.variance.push(var);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub mu: f64,
    pub frames: Vec<EvolutionState>,
    pub series: Series,
    pub reason: StopReason,
    pub steps: usize,
    pub medium: Medium,
}

impl Trajectory {
    pub fn last(&self) -> &EvolutionState {
        self.frames.last().expect("a trajectory has at least its initial frame")
    }

    /// Largest relative mass change per unit time.
    pub fn mass_drift_rate(&self) -> f64 {
        let s = &self.series;
        let m0 = s.mass[0];
        let span = (s.t.last().unwrap() - s.t[0]).abs().max(1e-300);
        s.mass.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max) / m0 / span.max(1.0)
    }

    /// Largest energy change per unit time, relative to `max(|E₀|, ‖∇u₀‖²)`.
    pub fn energy_drift_rate(&self) -> f64 {
        let s = &self.series;
        let scale = s.energy[0].abs().max(s.grad_norm[0].powi(2));
        let span = (s.t.last().unwrap() - s.t[0]).abs().max(1e-300);
        s.energy.iter().map(|e| (e - s.energy[0]).abs()).fold(0.0, f64::max) / scale / span.max(1.0)
    }
}

struct Stepper<'a> {
    medium: &'a Medium,
    linear_only: bool,
    cached: Option<(f64, BandLu<C64>, BandMatrix<C64>)>,
}

impl Stepper<'_> {
    /// Phase rotation `u ← u e^{iτV}`; returns `A(|u|²)` (unchanged by the rotation).
    fn rotate(&self, u: &mut [C64], tau: f64) -> Option<Vec<f64>> {
        let rho: Vec<f64> = u.iter().map(|c| c.norm_sqr()).collect();
        let a = self.medium.potential(&rho);
        if !self.linear_only {
            for i in 0..u.len() {
                let v = rho[i].powf(2.0 / 3.0) + a.as_ref().map_or(0.0, |a| self.medium.mu * a[i]);
                u[i] *= C64::from_polar(1.0, tau * v);
            }
        }
        a
    }

    /// `(1 + iτK/2)u⁺ = (1 − iτK/2)u`, K = −Δ.
    fn linear(&mut self, u: &mut Vec<C64>, tau: f64) -> Result<()> {
        if self.cached.as_ref().is_none_or(|c| c.0 != tau) {
            let k = &self.medium.lap;
            let mut lhs = k.map(|v| C64::new(0.0, 0.5 * tau * v));
            let mut rhs = k.map(|v| C64::new(0.0, -0.5 * tau * v));
            let ones = vec![C64::new(1.0, 0.0); u.len()];
            lhs.add_diag(&ones);
            rhs.add_diag(&ones);
            self.cached = Some((tau, lhs.lu()?, rhs));
        }
        let (_, lu, rhs) = self.cached.as_ref().unwrap();
        *u = lu.solve(&rhs.matvec(u));
        Ok(())
    }

    fn step(&mut self, u: &mut Vec<C64>, dt: f64) -> Result<Option<Vec<f64>>> {
        self.rotate(u, 0.5 * dt);
        self.linear(u, dt)?;
        Ok(self.rotate(u, 0.5 * dt))
    }
}

/// Advances `u0` under the full equation (or the free flow with `scheme.linear_only`).
/// A negative `scheme.dt` integrates backwards in time to `stop.t_final < u0.t`.
pub fn evolve(u0: &EvolutionState, medium: &Medium, scheme: &Scheme, stop: &Stop) -> Result<Trajectory> {
    if !u0.field.grid.same_as(&medium.grid) {
        return Err(Error::Mismatch("initial state and medium grids differ".into()));
    }
    let dir = scheme.dt.signum();
    if scheme.dt == 0.0 || !scheme.dt.is_finite() || (stop.t_final - u0.t) * dir < 0.0 || !(stop.output_every > 0.0) {
        return Err(Error::Config("time step must be nonzero, point towards t_final, and output_every > 0".into()));
    }
    let g = &medium.grid;
    // Local cell size at the origin, where radial blowup concentrates.
    let cell = g.nodes()[1] - g.nodes()[0];
    let mut stepper = Stepper { medium, linear_only: scheme.linear_only, cached: None };
    let mut u = u0.field.values.clone();
    let mut state = u0.clone();
    let mut series = Series::default();
    series.push(state.t, 0.0, state.mass, state.energy, state.grad_norm, medium.variance(&u));
    let mut frames = vec![state.clone()];
    let mut next_out = u0.t + dir * stop.output_every;
    let mut last_frame_grad = state.grad_norm;
    let g0 = u0.grad_norm;
    let mut steps = 0;
    let reason = loop {
        if (stop.t_final - state.t) * dir <= 1e-13 * stop.t_final.abs().max(1.0) {
            break StopReason::FinalTime;
        }
        if stop.grad_threshold.is_some_and(|th| state.grad_norm >= th) {
            break StopReason::GradThreshold;
        }
        let focal = state.focal_scale();
        if !scheme.linear_only && focal < scheme.guard_cells * cell {
            break StopReason::ResolutionGuard { focal_scale: focal, cell };
        }
        if steps >= stop.max_steps {
            break StopReason::MaxSteps;
        }
        let mut dt = scheme.dt;
        if scheme.adaptive {
            dt *= (g0 / state.grad_norm).powi(2).min(1.0);
        }
        let to_out = next_out - state.t;
        let mut hit = false;
        if to_out * dir <= dt.abs() * (1.0 + 1e-9) {
            dt = to_out;
            hit = true;
        }
        let to_end = stop.t_final - state.t;
        if to_end * dir <= dt.abs() * (1.0 + 1e-9) {
            dt = to_end;
            hit = true;
        }
        let a = stepper.step(&mut u, dt)?;
        steps += 1;
        if u.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Numerical(format!("non-finite field at t = {}", state.t + dt)));
        }
        let (mass, energy, grad) = medium.invariants(&u, a.as_deref());
        let t = if hit && (next_out - state.t - dt).abs() < 1e-12 { next_out } else { state.t + dt };
        state = EvolutionState { t, field: state.field.with_values(u.clone()), dt, mass, energy, momentum: 0.0, grad_norm: grad };
        series.push(t, dt, mass, energy, grad, medium.variance(&u));
        let grew = stop.frame_growth.is_some_and(|f| grad >= f * last_frame_grad);
        if hit || grew {
            if (next_out - t).abs() <= 1e-12 * t.abs().max(1.0) {
                next_out += dir * stop.output_every;
            }
            last_frame_grad = grad;
            frames.push(state.clone());
        }
    };
    if frames.last().map(|f| f.t) != Some(state.t) {
        frames.push(state);
    }
    Ok(Trajectory { mu: medium.mu, frames, series, reason, steps, medium: medium.clone() })
}

#[derive(Clone, Debug)]
pub struct VirialReport {
    pub energy: f64,
    /// `(t, V''/E₀)` at the sampled interior points.
    pub ratios: Vec<(f64, f64)>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `V''` from a global quadratic fit, divided by E₀.
    pub fitted_ratio: f64,
    /// `d/dt ‖xu‖²` at the first sample, from `4 Im ∫ ū x·∇u`.
    pub initial_rate: f64,
    /// Every sampled second difference is negative.
    pub concave: bool,
    /// Largest second difference (most positive).
    pub max_second_difference: f64,
}

/// Second differences of `‖xu‖²` on ~`samples` roughly equispaced points of the series.
pub fn virial_check(traj: &Trajectory, samples: usize) -> Result<VirialReport> {
    let s = &traj.series;
    if s.len() < 5 || samples < 5 {
        return Err(Error::Config("insufficient output density for a virial check".into()));
    }
    let (t0, t1) = (s.t[0], *s.t.last().unwrap());
    let mut idx: Vec<usize> = Vec::new();
    for k in 0..samples {
        let target = t0 + (t1 - t0) * k as f64 / (samples - 1) as f64;
        let j = s.t.partition_point(|t| (t - target) * (t1 - t0).signum() < 0.0).min(s.len() - 1);
        if idx.last() != Some(&j) {
            idx.push(j);
        }
    }
    if idx.len() < 5 {
        return Err(Error::Config("insufficient output density for a virial check".into()));
    }
    let e0 = s.energy[0];
    let mut ratios = Vec::new();
    let mut max_dd = f64::NEG_INFINITY;
    for w in idx.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        let (ta, tb, tc) = (s.t[a], s.t[b], s.t[c]);
        let dd = 2.0 * ((s.variance[c] - s.variance[b]) / (tc - tb) - (s.variance[b] - s.variance[a]) / (tb - ta)) / (tc - ta);
        max_dd = max_dd.max(dd);
        ratios.push((tb, dd / e0));
    }
    let ts: Vec<f64> = idx.iter().map(|&i| s.t[i] - t0).collect();
    let vs: Vec<f64> = idx.iter().map(|&i| s.variance[i]).collect();
    let c = quadratic_fit(&ts, &vs)?;
    let initial_rate = traj.medium.variance_rate(&traj.frames[0].field.values);
    let (mn, mx) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, r)| (a.min(*r), b.max(*r)));
    Ok(VirialReport {
        energy: e0,
        min_ratio: mn,
        max_ratio: mx,
        fitted_ratio: 2.0 * c[2] / e0,
        initial_rate,
        concave: max_dd < 0.0,
        max_second_difference: max_dd,
        ratios,
    })
}

fn quadratic_fit(t: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let a = crate::dense::from_rows(3, 3, |i, j| t.iter().map(|x| x.powi((i + j) as i32)).sum());
    let b: Vec<f64> = (0..3).map(|i| t.iter().zip(v).map(|(x, y)| x.powi(i) * y).sum()).collect();
    crate::dense::Lu::new(&a)?.solve(&b)
}

#[derive(Clone, Debug)]
pub struct BlowupFit {
    pub t_star: f64,
    pub c: f64,
    pub exponent: f64,
    /// Half-width of a 95% interval on the exponent from the regression at fixed T*.
    pub exponent_ci: f64,
    /// Max |log residual|.
    pub residual: f64,
    /// (first, last) time of the fitted window.
    pub window: (f64, f64),
    pub growth: f64,
}

/// `‖∇u‖ ≈ C (T* − t)^{−γ}` over the last decade of growth.
pub fn blowup_fit(traj: &Trajectory) -> Result<BlowupFit> {
    let s = &traj.series;
    let g_end = *s.grad_norm.last().unwrap();
    let g_min = s.grad_norm.iter().cloned().fold(f64::INFINITY, f64::min);
    if g_end < 10.0 * g_min {
        return Err(Error::NoConvergence(format!("no blowup detected (growth {:.2}×)", g_end / g_min)));
    }
    let start = s.grad_norm.iter().rposition(|g| *g <= g_end / 10.0).unwrap_or(0);
    let t: Vec<f64> = s.t[start..].to_vec();
    let y: Vec<f64> = s.grad_norm[start..].iter().map(|g| g.ln()).collect();
    let t_last = *t.last().unwrap();
    let span = t_last - t[0];
    let fit_at = |ts: f64| {
        let x: Vec<f64> = t.iter().map(|tt| (ts - tt).ln()).collect();
        let (slope, icpt, res) = linear_fit(&x, &y);
        let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
        (rss, slope, icpt, res, x)
    };
    // Golden-section search for T* over log-spaced offsets beyond the last sample.
    let (mut lo, mut hi) = ((1e-6 * span).ln(), (10.0 * span).ln());
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let f = |z: f64| fit_at(t_last + z.exp()).0;
    let (mut c, mut d) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = f(d);
        }
    }
    let ts = t_last + (0.5 * (lo + hi)).exp();
    let (rss, slope, icpt, res, x) = fit_at(ts);
    let m = x.len() as f64;
    let xm = x.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|a| (a - xm).powi(2)).sum();
    let se = (rss / (m - 2.0).max(1.0) / sxx).sqrt();
    Ok(BlowupFit {
        t_star: ts,
        c: icpt.exp(),
        exponent: -slope,
        exponent_ci: 1.96 * se,
        residual: res,
        window: (t[0], t_last),
        growth: g_end / s.grad_norm[start..].iter().cloned().fold(f64::INFINITY, f64::min),
    })
}

#[derive(Clone, Debug, Default)]
pub struct ModulationTrace {
    pub times: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Fitted profile parameter b.
    pub b: Vec<f64>,
    /// `−λλ_t` from centered differences of the fitted λ.
    pub b_dynamic: Vec<f64>,
    /// Phase, unwrapped.
    pub gamma: Vec<f64>,
    /// Center and drift; zero on the radial path.
    pub alpha: Vec<f64>,
    pub d: Vec<f64>,
    /// `‖u − λ^{−3/2}R_b(·/λ)e^{iγ}‖ / ‖u‖`.
    pub residual: Vec<f64>,
    /// Frames whose fit did not converge.
    pub flagged: Vec<usize>,
}

/// Reference profile for the modulation fit: `R_P(b)` from the hierarchy, or the
/// pseudo-conformal ansatz `Q e^{−ibr²/4}` without one.
fn reference(gs: &GroundState, ps: Option<&ProfileSet>, b: f64, r: f64) -> C64 {
    match ps {
        Some(p) => {
            let (b2, b3, b4) = (b * b, b * b * b, b * b * b * b);
            let re = p.gs.q.at(r) + b2 * p.t20.at(r) + b4 * p.t40.at(r);
            let im = b * p.s10.at(r) + b3 * p.s30.at(r);
            C64::new(re, im)
        }
        None => gs.q.at(r) * C64::from_polar(1.0, -b * r * r / 4.0),
    }
}

struct FrameFit {
    lambda: f64,
    b: f64,
    gamma: f64,
    residual: f64,
    converged: bool,
}

fn fit_frame(u: &ComplexField, gs: &GroundState, ps: Option<&ProfileSet>, lambda0: f64, b0: f64, fit_b: bool) -> FrameFit {
    let g = &u.grid;
    let w = g.weights();
    let un = u.norm();
    let resid = |lam: f64, b: f64| -> (Vec<f64>, f64) {
        let reach = g.r_max() * lam;
        let v: Vec<C64> = g.nodes().iter().map(|&r| if r > reach { C64::new(0.0, 0.0) } else { reference(gs, ps, b, r / lam) * lam.powf(-1.5) }).collect();
        let ip: C64 = (0..v.len()).map(|i| v[i].conj() * u.values[i] * w[i]).sum();
        let ph = if ip.norm() > 0.0 { ip / ip.norm() } else { C64::new(1.0, 0.0) };
        let mut out = Vec::with_capacity(2 * v.len());
        for i in 0..v.len() {
            let d = (u.values[i] - v[i] * ph) * (w[i].sqrt() / un);
            out.push(d.re);
            out.push(d.im);
        }
        (out, ph.arg())
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut p = [lambda0.ln(), b0];
    let np = if fit_b { 2 } else { 1 };
    let (mut r, _) = resid(p[0].exp(), p[1]);
    let mut cost = norm(&r);
    let mut damping = 1e-3;
    let mut converged = false;
    for _ in 0..100 {
        let h = 1e-7;
        let cols: Vec<Vec<f64>> = (0..np)
            .map(|k| {
                let mut q = p;
                q[k] += h;
                let (rp, _) = resid(q[0].exp(), q[1]);
                rp.iter().zip(&r).map(|(a, b)| (a - b) / h).collect()
            })
            .collect();
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for a in 0..np {
            for b in 0..np {
                jtj[a][b] = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum();
            }
            jtr[a] = cols[a].iter().zip(&r).map(|(x, y)| x * y).sum();
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut m = jtj;
            for a in 0..np {
                m[a][a] *= 1.0 + damping;
            }
            let step = if np == 1 {
                [-jtr[0] / m[0][0], 0.0]
            } else {
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                [-(m[1][1] * jtr[0] - m[0][1] * jtr[1]) / det, -(m[0][0] * jtr[1] - m[1][0] * jtr[0]) / det]
            };
            let q = [p[0] + step[0], p[1] + step[1]];
            let (rq, _) = resid(q[0].exp(), q[1]);
            let cq = norm(&rq);
            if cq.is_finite() && cq <= cost {
                let small = step[0].abs() < 1e-12 && step[1].abs() < 1e-12;
                p = q;
                r = rq;
                let rel = (cost - cq) / cost.max(1e-300);
                cost = cq;
                damping = (damping * 0.3).max(1e-12);
                improved = true;
                if small || rel < 1e-14 {
                    converged = true;
                }
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            converged = true;
        }
        if converged {
            break;
        }
    }
    let (_, gamma) = resid(p[0].exp(), p[1]);
    FrameFit { lambda: p[0].exp(), b: p[1], gamma, residual: cost, converged: converged && cost.is_finite() }
}

/// Per-frame `(λ, γ, b)` minimizing the L² distance to the modulated profile.
pub fn modulation_extract(traj: &Trajectory, gs: &GroundState, ps: Option<&ProfileSet>) -> Result<ModulationTrace> {
    let mut tr = ModulationTrace::default();
    let gq = gs.q.norm().powi(2) / {
        let l = gs.q.laplacian();
        gs.q.inner(&l)?
    };
    let mut guess: Option<(f64, f64)> = None;
    for (k, f) in traj.frames.iter().enumerate() {
        // First guess from the focal scale of Q: λ² ≈ (M/G)_u / (M/G)_Q.
        let (l0, b0) = guess.unwrap_or_else(|| ((f.mass / f.grad_norm.powi(2) / gq).sqrt(), 0.0));
        let fit = fit_frame(&f.field, gs, ps, l0, b0, true);
        if !fit.converged || fit.lambda <= 0.0 {
            tr.flagged.push(k);
        }
        guess = Some((fit.lambda, fit.b));
        tr.times.push(f.t);
        tr.lambda.push(fit.lambda);
        tr.b.push(fit.b);
        let mut gamma = fit.gamma;
        if let Some(prev) = tr.gamma.last() {
            gamma += 2.0 * PI * ((prev - gamma) / (2.0 * PI)).round();
        }
        tr.gamma.push(gamma);
        tr.alpha.push(0.0);
        tr.d.push(0.0);
        tr.residual.push(fit.residual);
    }
    let n = tr.times.len();
    tr.b_dynamic = (0..n)
        .map(|i| {
            let (a, c) = (i.saturating_sub(1), (i + 1).min(n - 1));
            if c == a {
                return f64::NAN;
            }
            -tr.lambda[i] * (tr.lambda[c] - tr.lambda[a]) / (tr.times[c] - tr.times[a])
        })
        .collect();
    Ok(tr)
}

/// Fits only `(λ, γ)` against `Q_μ` (b fixed at 0); exact on an unmodulated soliton.
pub fn fit_soliton(u: &ComplexField, gs: &GroundState, lambda_guess: f64) -> (f64, f64, f64) {
    let f = fit_frame(u, gs, None, lambda_guess, 0.0, false);
    (f.lambda, f.gamma, f.residual)
}

/// `φ` with `φ′(r) = r` on [0, 1], `φ′(r) = 3 − e^{−r}` on [2, ∞), and a quintic Hermite
/// bridge for φ′ on (1, 2) matching value, slope and curvature at both ends.
#[derive(Clone, Debug)]
pub struct CutoffProfile {
    pub m: f64,
    pub r: Vec<f64>,
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
    pub d2phi: Vec<f64>,
    bridge: [f64; 6],
    phi1: f64,
    phi2: f64,
}

impl CutoffProfile {
    pub fn new(m: f64, r_max: f64, samples: usize) -> Result<Self> {
        if !(m > 0.0) || samples < 2 {
            return Err(Error::Config("cutoff scale must be positive".into()));
        }
        // φ′ on [1, 2] in s = r − 1: p(s) = Σ c_k s^k with p(0)=1, p'(0)=1, p''(0)=0 and
        // p(1)=3−e^{−2}, p'(1)=e^{−2}, p''(1)=−e^{−2}.
        let e2 = (-2.0f64).exp();
        let (v0, d0, c0) = (1.0, 1.0, 0.0);
        let (v1, d1, c1) = (3.0 - e2, e2, -e2);
        let a = v1 - v0 - d0 - 0.5 * c0;
        let b = d1 - d0 - c0;
        let c = c1 - c0;
        let c3 = 10.0 * a - 4.0 * b + 0.5 * c;
        let c4 = -15.0 * a + 7.0 * b - c;
        let c5 = 6.0 * a - 3.0 * b + 0.5 * c;
        let bridge = [v0, d0, 0.5 * c0, c3, c4, c5];
        let phi1 = 0.5;
        let phi2 = phi1 + bridge.iter().enumerate().map(|(k, ck)| ck / (k + 1) as f64).sum::<f64>();
        let mut me = Self { m, r: vec![], phi: vec![], dphi: vec![], d2phi: vec![], bridge, phi1, phi2 };
        for k in 0..samples {
            let r = r_max * k as f64 / (samples - 1) as f64;
            let (p, d, dd) = me.eval(r);
            me.r.push(r);
            me.phi.push(p);
            me.dphi.push(d);
            me.d2phi.push(dd);
        }
        Ok(me)
    }

    /// `(φ, φ′, φ″)` at r.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        if r <= 1.0 {
            (0.5 * r * r, r, 1.0)
        } else if r < 2.0 {
            let s = r - 1.0;
            let c = &self.bridge;
            let d = c.iter().rev().fold(0.0, |acc, ck| acc * s + ck);
            let dd = (1..6).rev().fold(0.0, |acc, k| acc * s + k as f64 * c[k]);
            let p = self.phi1 + (0..6).rev().fold(0.0, |acc, k| acc * s + c[k] / (k + 1) as f64) * s;
            (p, d, dd)
        } else {
            let p = self.phi2 + 3.0 * (r - 2.0) + (-r).exp() - (-2.0f64).exp();
            (p, 3.0 - (-r).exp(), (-r).exp())
        }
    }

    pub fn min_second_derivative(&self) -> f64 {
        self.d2phi.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Geometry of the reference profile in the refined energy.
#[derive(Clone, Copy, Debug)]
pub struct Geometry {
    pub lambda: f64,
    pub b: f64,
}

/// The refined energy `J` for `ũ = u − w` (radial, centred at the origin).
pub fn refined_energy(state: &EvolutionState, w: &EvolutionState, geom: Geometry, medium: &Medium, cutoff: &CutoffProfile) -> Result<f64> {
    let g = &medium.grid;
    if !state.field.grid.same_as(g) || !w.field.grid.same_as(g) {
        return Err(Error::Mismatch("refined energy needs u and w on the medium grid".into()));
    }
    let wt = g.weights();
    let u = &state.field.values;
    let wv = &w.field.values;
    let n = u.len();
    let ut: Vec<C64> = (0..n).map(|i| u[i] - wv[i]).collect();
    let (re, im): (Vec<f64>, Vec<f64>) = ut.iter().map(|c| (c.re, c.im)).unzip();
    let grad = FOUR_PI * (inner_raw(g, &re, &medium.lap.matvec(&re)) + inner_raw(g, &im, &medium.lap.matvec(&im)));
    let l2 = FOUR_PI * ut.iter().zip(wt).map(|(c, w)| w * c.norm_sqr()).sum::<f64>();
    let big_f = |z: C64| 0.3 * z.norm_sqr().powf(5.0 / 3.0);
    let small_f = |z: C64| z * z.norm_sqr().powf(2.0 / 3.0);
    let mut local = 0.0;
    for i in 0..n {
        let rem = big_f(wv[i] + ut[i]) - big_f(wv[i]) - (small_f(wv[i]) * ut[i].conj()).re;
        local += FOUR_PI * wt[i] * rem;
    }
    let mut nonlocal = 0.0;
    if medium.mu != 0.0 {
        let rho_u: Vec<f64> = u.iter().map(|c| c.norm_sqr()).collect();
        let rho_w: Vec<f64> = wv.iter().map(|c| c.norm_sqr()).collect();
        let a_u = medium.potential(&rho_u).unwrap();
        let a_w = medium.potential(&rho_w).unwrap();
        for i in 0..n {
            let rem = 0.25 * a_u[i] * rho_u[i] - 0.25 * a_w[i] * rho_w[i] - (wv[i] * ut[i].conj()).re * a_w[i];
            nonlocal += FOUR_PI * wt[i] * rem;
        }
    }
    let dut = g.derivative(&ut, 0);
    let mut flux = 0.0;
    for i in 0..n {
        let (_, dphi, _) = cutoff.eval(g.nodes()[i] / (cutoff.m * geom.lambda));
        flux += FOUR_PI * wt[i] * cutoff.m * dphi * (dut[i] * ut[i].conj()).im;
    }
    Ok(0.5 * grad + 0.5 * l2 / geom.lambda.powi(2) - local - medium.mu * nonlocal + 0.5 * geom.b / geom.lambda * flux)
}

/// The quadratic part `½‖∇ũ‖² + ½‖ũ‖²/λ²`.
pub fn refined_energy_quadratic(state: &EvolutionState, w: &EvolutionState, lambda: f64, medium: &Medium) -> f64 {
    let g = &medium.grid;
    let ut: Vec<C64> = state.field.values.iter().zip(&w.field.values).map(|(a, b)| a - b).collect();
    let (re, im): (Vec<f64>, Vec<f64>) = ut.iter().map(|c| (c.re, c.im)).unzip();
    let grad = FOUR_PI * (inner_raw(g, &re, &medium.lap.matvec(&re)) + inner_raw(g, &im, &medium.lap.matvec(&im)));
    let l2 = FOUR_PI * g.quadrature(&ut.iter().map(|c| c.norm_sqr()).collect::<Vec<_>>());
    0.5 * grad + 0.5 * l2 / (lambda * lambda)
}
