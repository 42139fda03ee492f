//! The seven pipelines and the exit-code contract (0 ok, 1 numerical failure, 2 configuration).

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use clap::Parser;
use critnls::dynamics::{self, InitialData, Medium, Scheme, Stop, StopReason, Trajectory};
use critnls::grid::build_grid;
use critnls::groundstate::{self, GroundState};
use critnls::linop::{self, Kind};
use critnls::profile;
use critnls::{RadialGrid, Result};

use crate::config::{Cli, Command, Config, Preset};
use crate::output::{fmt, RunDir, RunManifest};

/// μ ladder of the `rate` command: 10^{-3}, 10^{-2.75}, …, 10^{-1.5}.
const RATE_EXPONENTS: [f64; 7] = [-3.0, -2.75, -2.5, -2.25, -2.0, -1.75, -1.5];
/// Gaussian preset `A e^{−r²/(2w²)}`.
const GAUSSIAN: (f64, f64) = (1.5, 1.2);
/// Collapse preset `α^{3/2} Q(αβ r)` built on the classical ground state.
const COLLAPSE: (f64, f64) = (1.0, 0.6);

pub fn run_command(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match Config::resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("critnls: {e}");
            return 2;
        }
    };
    let started = Instant::now();
    let mut dir = match RunDir::create(&cfg.out) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("critnls: {e}");
            return 2;
        }
    };
    let mut ctx = Context { cfg: &cfg, grids: Vec::new() };
    let outcome = ctx.dispatch(&mut dir);
    let (status, code, diagnostics) = match &outcome {
        Ok(Verdict::Ok) => ("ok", 0, Vec::new()),
        Ok(Verdict::Failed(why)) => ("numerical_failure", 1, why.clone()),
        Err(e) if e.is_config() => ("configuration_error", 2, vec![e.to_string()]),
        Err(e) => ("numerical_failure", 1, vec![e.to_string()]),
    };
    if code != 0 {
        for d in &diagnostics {
            eprintln!("critnls: {d}");
        }
    }
    dir.note("status", status);
    let manifest = RunManifest {
        command: std::iter::once("critnls").chain(argv.iter().skip(1).map(String::as_str)).collect::<Vec<_>>().join(" "),
        configuration: cfg.snapshot(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        grid: ctx.grids.clone(),
        tolerances: tolerances(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        status: status.to_string(),
        diagnostics,
        files: Vec::new(),
    };
    let root = dir.root().to_path_buf();
    print!("{}", dir.summary_text());
    if let Err(e) = dir.finish(manifest) {
        eprintln!("critnls: writing {}: {e}", root.display());
        return 1;
    }
    code
}

fn tolerances() -> BTreeMap<String, f64> {
    [
        ("eigenvalue_zero", linop::ZERO_TOL),
        ("eigenvalue_gap", linop::GAP_TOL),
        ("solvability", profile::SOLVABILITY_TOL),
        ("hierarchy_residual", profile::RESIDUAL_TOL),
        ("decay_rate", profile::DECAY_RATE),
        ("psi_radius", profile::PSI_RADIUS),
        ("parameter_box", profile::PARAMETER_BOX),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

enum Verdict {
    Ok,
    Failed(Vec<String>),
}

struct Context<'a> {
    cfg: &'a Config,
    grids: Vec<String>,
}

impl Context<'_> {
    fn dispatch(&mut self, dir: &mut RunDir) -> Result<Verdict> {
        match self.cfg.command {
            Command::Groundstate => self.groundstate(dir),
            Command::Spectrum => self.spectrum(dir),
            Command::Profile => self.profile(dir),
            Command::Evolve => self.evolve(dir, false),
            Command::Virial => self.evolve(dir, true),
            Command::Rate => self.rate(dir),
            Command::Report => self.report(dir),
        }
    }

    fn grid(&mut self) -> Result<Arc<RadialGrid>> {
        let g = build_grid(self.cfg.grid_n, self.cfg.rmax, self.cfg.stretch)?;
        self.grids.push(g.describe());
        Ok(g)
    }

    fn ground_state(&mut self) -> Result<GroundState> {
        let g = self.grid()?;
        let mu = self.cfg.mu;
        eprintln!("solving Q_μ at μ = {mu} on {}", g.describe());
        let q = groundstate::solve_classical_q(&g)?;
        match mu {
            0.0 => Ok(q),
            m if m > 0.0 => groundstate::continue_to(&q, m),
            m => groundstate::continue_signed(&q, m),
        }
    }

    fn record_functionals(dir: &mut RunDir, gs: &GroundState) {
        let f = gs.report();
        dir.num("mu", gs.mu);
        dir.num("mass", f.mass);
        dir.num("grad_sq", f.grad_sq);
        dir.num("potential_local", f.potential_local);
        dir.num("potential_hartree", f.potential_hartree);
        dir.num("energy", f.energy);
        dir.num("pohozaev_defect", f.pohozaev_defect);
        dir.num("pairing_defect", f.pairing_defect);
        dir.num("gn_local", f.gn_local);
        dir.num("gn_nonlocal", f.gn_nonlocal);
        dir.num("equation_residual", gs.eq_residual);
        dir.num("classical_mass", gs.classical_mass);
    }

    fn groundstate(&mut self, dir: &mut RunDir) -> Result<Verdict> {
        let gs = self.ground_state()?;
        dir.real_field("q_mu.csv", &gs.q)?;
        Self::record_functionals(dir, &gs);
        Ok(Verdict::Ok)
    }

    fn spectrum(&mut self, dir: &mut RunDir) -> Result<Verdict> {
        let gs = self.ground_state()?;
        let rep = linop::nondegeneracy_report(&gs, self.cfg.lmax, self.cfg.k)?;
        let mut rows = Vec::new();
        for c in &rep.channels {
            for (i, v) in c.eigenvalues.iter().enumerate() {
                rows.push(vec![c.kind.label().to_string(), c.l.to_string(), i.to_string(), fmt(*v)]);
            }
        }
        dir.table("eigenvalues.csv", &["operator", "l", "index", "eigenvalue [1]"], &rows)?;
        let verdicts: Vec<Vec<String>> = rep
            .channels
            .iter()
            .map(|c| {
                vec![c.kind.label().to_string(), c.l.to_string(), c.kernel_dim.to_string(), c.expected_kernel_dim.to_string(), c.negative_count.to_string(), c.ok.to_string()]
            })
            .collect();
        dir.table("channels.csv", &["operator", "l", "kernel_dim", "expected_kernel_dim", "negative_count", "ok"], &verdicts)?;
        dir.num("mu", gs.mu);
        dir.num("minus_coercivity", rep.minus_coercivity);
        dir.num("minus_kernel_cosine", rep.minus_kernel_cosine);
        let lplus = linop::assemble_channel_operator(&gs, Kind::Plus, 0)?;
        let lq = lplus.apply_field(&gs.lambda_q())?;
        let defect: Vec<f64> = lq.values.iter().zip(&gs.q.values).map(|(a, q)| a + 2.0 * q).collect();
        dir.num("lplus_lambda_q_defect", lq.with_values(defect).norm() / (2.0 * gs.q.norm()));
        dir.note("nondegeneracy", if rep.passed { "PASSED" } else { "FAILED" });
        Ok(if rep.passed { Verdict::Ok } else { Verdict::Failed(rep.failing()) })
    }

    fn profile(&mut self, dir: &mut RunDir) -> Result<Verdict> {
        let gs = self.ground_state()?;
        let ps = profile::build_hierarchy(&gs)?;
        for (name, f) in ps.fields() {
            dir.real_field(&format!("fields/{}.csv", name.to_lowercase()), f)?;
        }
        let rows: Vec<Vec<String>> = ps
            .solves
            .iter()
            .map(|s| {
                vec![
                    s.field.to_string(),
                    s.order.replace(' ', ""),
                    s.operator.to_string(),
                    s.channel.to_string(),
                    fmt(s.solvability),
                    fmt(s.residual),
                    fmt(s.decay_constant),
                    s.decays.to_string(),
                ]
            })
            .collect();
        dir.table("solves.csv", &["field", "order", "operator", "channel", "solvability [1]", "residual [1]", "decay_constant [1]", "decays"], &rows)?;
        dir.num("mu", gs.mu);
        dir.num("e_mu", ps.e_mu);
        dir.num("p_mu", ps.p_mu);
        dir.num("max_solvability", ps.max_solvability());
        dir.num("max_residual", ps.max_residual());
        dir.num("mass_identity", ps.identities.mass_identity);
        let (b, d) = (self.cfg.b, self.cfg.d);
        let psi = profile::residual_psi(&ps, b, d)?;
        let half = profile::residual_psi(&ps, 0.5 * b, 0.5 * d)?;
        dir.num("psi_weighted_sup", psi.weighted_sup);
        dir.num("psi_weighted_sup_halved", half.weighted_sup);
        dir.num("psi_halving_ratio", psi.weighted_sup / half.weighted_sup);
        let grid = [0.0, 0.025, 0.05, 0.1];
        let fit = profile::invariant_expansions(&ps, &grid, &grid)?;
        dir.num("energy_coefficient", fit.energy_coefficient);
        dir.num("energy_relative_error", fit.energy_relative_error);
        dir.num("momentum_coefficient", fit.momentum_coefficient);
        dir.num("momentum_relative_error", fit.momentum_relative_error);
        dir.num("mass_constant", fit.mass_constant);
        let bad = ps.max_solvability() > profile::SOLVABILITY_TOL || profile::profile_constants(&ps).is_err();
        Ok(if bad { Verdict::Failed(vec![format!("solvability {:.3e}, e_μ {:.6}, p_μ {:.6}", ps.max_solvability(), ps.e_mu, ps.p_mu)]) } else { Verdict::Ok })
    }

    fn evolve(&mut self, dir: &mut RunDir, virial: bool) -> Result<Verdict> {
        let cfg = self.cfg;
        let gs = match cfg.preset {
            Preset::Collapse => {
                let g = self.grid()?;
                groundstate::solve_classical_q(&g)?
            }
            _ => self.ground_state()?,
        };
        let medium = Medium::with_hartree(&gs.hartree, cfg.mu);
        let ps = match cfg.preset {
            Preset::MinimalMass => Some(profile::build_hierarchy(&gs)?),
            _ => None,
        };
        let kind = match cfg.preset {
            Preset::MinimalMass => InitialData::MinimalMassProfile { b0: cfg.b, d0: cfg.d },
            Preset::Collapse => InitialData::RescaledSoliton { alpha: COLLAPSE.0, beta: COLLAPSE.1 },
            Preset::Soliton => InitialData::RescaledSoliton { alpha: 1.0, beta: 1.0 },
            Preset::Gaussian => InitialData::Gaussian { width: GAUSSIAN.0, amplitude: GAUSSIAN.1 },
        };
        let u0 = dynamics::make_initial_data(&kind, &medium, Some(&gs), ps.as_ref())?;
        let blowup = matches!(cfg.preset, Preset::MinimalMass | Preset::Collapse);
        let scheme = Scheme { dt: cfg.dt, adaptive: blowup, ..Default::default() };
        let stop = Stop {
            t_final: cfg.t_final,
            grad_threshold: None,
            output_every: (cfg.t_final / 50.0).min(0.5),
            frame_growth: blowup.then_some(1.05),
            max_steps: 5_000_000,
        };
        eprintln!("evolving preset {} to t = {}", cfg.preset.name(), cfg.t_final);
        let tr = dynamics::evolve(&u0, &medium, &scheme, &stop)?;
        write_series(dir, &tr)?;
        dir.complex_field("field_initial.csv", &u0.field)?;
        dir.complex_field("field_final.csv", &tr.last().field)?;
        dir.note("preset", cfg.preset.name());
        dir.num("mu", cfg.mu);
        dir.num("initial_mass", u0.mass);
        dir.num("initial_energy", u0.energy);
        dir.num("t_end", tr.last().t);
        dir.note("steps", tr.steps);
        dir.note("stop_reason", reason(&tr.reason));
        dir.num("mass_drift_rate", tr.mass_drift_rate());
        dir.num("energy_drift_rate", tr.energy_drift_rate());
        let mut failures = Vec::new();
        if virial {
            let v = dynamics::virial_check(&tr, 21)?;
            dir.csv("virial.csv", &["t [time]", "second_difference_over_energy [1]"], v.ratios.iter().map(|(t, r)| vec![*t, *r]))?;
            dir.num("virial_energy", v.energy);
            dir.num("virial_min_ratio", v.min_ratio);
            dir.num("virial_max_ratio", v.max_ratio);
            dir.num("virial_fitted_ratio", v.fitted_ratio);
            dir.note("virial_concave", v.concave);
        }
        if blowup {
            match dynamics::blowup_fit(&tr) {
                Ok(f) => {
                    dir.num("blowup_t_star", f.t_star);
                    dir.num("blowup_exponent", f.exponent);
                    dir.num("blowup_exponent_ci", f.exponent_ci);
                    dir.num("blowup_constant", f.c);
                    dir.num("blowup_growth", f.growth);
                    dir.num("blowup_window_start", f.window.0);
                    dir.num("blowup_window_end", f.window.1);
                    if let Some(ps) = &ps {
                        let mt = dynamics::modulation_extract(&tr, &gs, Some(ps))?;
                        let rows = (0..mt.times.len()).map(|i| {
                            vec![mt.times[i], mt.lambda[i], mt.b[i], mt.b_dynamic[i], mt.gamma[i], mt.lambda[i] / (f.t_star - mt.times[i]), mt.residual[i]]
                        });
                        dir.csv(
                            "modulation.csv",
                            &["t [time]", "lambda [length]", "b [1]", "b_dynamic [1]", "gamma [rad]", "lambda_over_tstar_minus_t [length/time]", "residual [1]"],
                            rows,
                        )?;
                        dir.note("modulation_flagged_frames", mt.flagged.len());
                    }
                }
                Err(e) => failures.push(format!("blowup fit: {e}")),
            }
        }
        Ok(if failures.is_empty() { Verdict::Ok } else { Verdict::Failed(failures) })
    }

    fn rate(&mut self, dir: &mut RunDir) -> Result<Verdict> {
        let g = self.grid()?;
        let base = groundstate::solve_classical_q(&g)?;
        let mus: Vec<f64> = RATE_EXPONENTS.iter().map(|e| 10f64.powf(*e)).collect();
        let fit = groundstate::perturbation_rate_from(&base, &mus)?;
        let rows = (0..fit.mus.len()).map(|i| vec![fit.mus[i], fit.h2_distances[i], fit.l2_distances[i]]);
        dir.csv("rate.csv", &["mu [1]", "h2_distance [1]", "l2_distance [1]"], rows)?;
        dir.num("slope", fit.slope);
        dir.num("intercept", fit.intercept);
        dir.num("fit_residual", fit.residual);
        dir.note("monotone", fit.monotone);
        dir.note("excluded", fit.excluded.len());
        Ok(Verdict::Ok)
    }

    fn report(&mut self, dir: &mut RunDir) -> Result<Verdict> {
        let gs = self.ground_state()?;
        Self::record_functionals(dir, &gs);
        let rep = linop::nondegeneracy_report(&gs, self.cfg.lmax, self.cfg.k)?;
        dir.note("nondegeneracy", if rep.passed { "PASSED" } else { "FAILED" });
        dir.num("minus_coercivity", rep.minus_coercivity);
        let ps = profile::build_hierarchy(&gs)?;
        dir.num("e_mu", ps.e_mu);
        dir.num("p_mu", ps.p_mu);
        dir.num("max_solvability", ps.max_solvability());
        let classical = if gs.mu == 0.0 { gs.clone() } else { groundstate::solve_classical_q(gs.grid())? };
        let c_star = groundstate::gn_nonlocal_bound(&classical)?;
        dir.num("nonlocal_gn_constant", c_star);
        dir.num("coercivity_threshold", groundstate::coercivity_threshold(gs.mu, gs.classical_mass, c_star));
        Ok(if rep.passed { Verdict::Ok } else { Verdict::Failed(rep.failing()) })
    }
}

fn reason(r: &StopReason) -> String {
    match r {
        StopReason::FinalTime => "final_time".into(),
        StopReason::GradThreshold => "grad_threshold".into(),
        StopReason::ResolutionGuard { focal_scale, cell } => format!("resolution_guard(focal={},cell={})", fmt(*focal_scale), fmt(*cell)),
        StopReason::MaxSteps => "max_steps".into(),
    }
}

fn write_series(dir: &mut RunDir, tr: &Trajectory) -> Result<()> {
    let s = &tr.series;
    // Every step is kept in memory; the file is thinned to at most ~4000 rows plus the last.
    let stride = (s.len() / 4000).max(1);
    let rows = (0..s.len()).filter(|i| i % stride == 0 || *i + 1 == s.len()).map(|i| vec![s.t[i], s.dt[i], s.mass[i], s.energy[i], s.grad_norm[i], s.variance[i]]);
    dir.csv(
        "series.csv",
        &["t [time]", "dt [time]", "mass [L2^2]", "energy [1]", "grad_norm [L2 of gradient]", "variance [L2^2 of x u]"],
        rows,
    )?;
    let frames = tr.frames.iter().map(|f| vec![f.t, f.mass, f.energy, f.grad_norm]);
    dir.csv("frames.csv", &["t [time]", "mass [L2^2]", "energy [1]", "grad_norm [L2 of gradient]"], frames)
}
