use critnls::dynamics::*;
use critnls::grid::{build_grid, norm_raw, RadialGrid, Stretch};
use critnls::groundstate::*;
use critnls::{RadialField, C64};
use proptest::prelude::*;
use std::sync::{Arc, OnceLock};

fn grid() -> &'static Arc<RadialGrid> {
    static G: OnceLock<Arc<RadialGrid>> = OnceLock::new();
    G.get_or_init(|| build_grid(1024, 40.0, Stretch::Uniform).unwrap())
}

fn states() -> &'static [GroundState; 2] {
    static S: OnceLock<[GroundState; 2]> = OnceLock::new();
    S.get_or_init(|| {
        let q = solve_classical_q(grid()).unwrap();
        let q2 = continue_to(&q, 0.02).unwrap();
        [q, q2]
    })
}

fn rel_diff(g: &RadialGrid, a: &[C64], b: &[C64]) -> f64 {
    let d: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm_raw(g, &d) / norm_raw(g, b)
}

#[test]
fn free_flow_matches_the_exact_gaussian() {
    let g = grid();
    let m = Medium::new(g, 0.0);
    let u0 = make_initial_data(&InitialData::Gaussian { width: 2.0, amplitude: 1.0 }, &m, None, None).unwrap();
    let tr = evolve(&u0, &m, &Scheme { dt: 1e-3, linear_only: true, ..Default::default() }, &Stop::at(1.0, 0.5)).unwrap();
    assert_eq!(tr.reason, StopReason::FinalTime);
    let last = tr.last();
    assert!((last.t - 1.0).abs() < 1e-12);
    let exact: Vec<C64> = g.nodes().iter().map(|&r| free_gaussian(2.0, 1.0, last.t, r)).collect();
    let err = rel_diff(g, &last.field.values, &exact);
    assert!(err <= 1e-6, "free Gaussian error {err:e}");
}

#[test]
fn standing_wave_is_stationary_up_to_phase() {
    let g = grid();
    let q = &states()[0];
    let m = Medium::new(g, 0.0);
    let u0 = make_initial_data(&InitialData::RescaledSoliton { alpha: 1.0, beta: 1.0 }, &m, Some(q), None).unwrap();
    let tr = evolve(&u0, &m, &Scheme { dt: 5e-4, ..Default::default() }, &Stop::at(1.0, 0.25)).unwrap();
    for f in &tr.frames {
        let exact: Vec<C64> = q.q.values.iter().map(|v| C64::from_polar(*v, f.t)).collect();
        let err = rel_diff(g, &f.field.values, &exact);
        assert!(err <= 1e-4, "t = {}: {err:e}", f.t);
    }
    assert!(tr.mass_drift_rate() <= 1e-8, "mass drift {:e}", tr.mass_drift_rate());
}

#[test]
fn virial_identity_holds_with_hartree_coupling() {
    let gs = &states()[1];
    let m = Medium::with_hartree(&gs.hartree, 0.02);
    let u0 = make_initial_data(&InitialData::Gaussian { width: 1.5, amplitude: 1.2 }, &m, None, None).unwrap();
    let tr = evolve(&u0, &m, &Scheme { dt: 1e-3, ..Default::default() }, &Stop::at(1.0, 0.05)).unwrap();
    assert!(tr.mass_drift_rate() <= 1e-8);
    let v = virial_check(&tr, 21).unwrap();
    for r in [v.min_ratio, v.max_ratio, v.fitted_ratio] {
        assert!((r / 16.0 - 1.0).abs() <= 0.02, "{v:?}");
    }
}

#[test]
fn scheme_is_time_reversible() {
    let gs = &states()[1];
    let m = Medium::with_hartree(&gs.hartree, 0.02);
    let u0 = make_initial_data(&InitialData::Gaussian { width: 1.5, amplitude: 1.2 }, &m, None, None).unwrap();
    let fw = evolve(&u0, &m, &Scheme { dt: 1e-2, ..Default::default() }, &Stop::at(0.5, 0.5)).unwrap();
    let bw = evolve(fw.last(), &m, &Scheme { dt: -1e-2, ..Default::default() }, &Stop::at(0.0, 0.5)).unwrap();
    assert!(bw.last().t.abs() < 1e-12);
    let err = rel_diff(grid(), &bw.last().field.values, &u0.field.values);
    assert!(err < 1e-9, "round trip {err:e}");
}

#[test]
fn soliton_fit_recovers_scale_and_phase() {
    let q = &states()[0];
    let (lam0, gam0) = (0.7f64, 0.3);
    let vals: Vec<C64> = grid().nodes().iter().map(|&r| C64::from_polar(lam0.powf(-1.5) * q.q.at(r / lam0), gam0)).collect();
    let u = RadialField::new(grid().clone(), 0, vals).unwrap();
    let (lam, gam, res) = fit_soliton(&u, q, 0.6);
    assert!((lam - lam0).abs() < 1e-4 && (gam - gam0).abs() < 1e-4, "λ {lam}, γ {gam}");
    assert!(res < 1e-6);
}

#[test]
fn cutoff_is_convex_and_matches_its_pieces() {
    let c = CutoffProfile::new(1.0, 10.0, 2001).unwrap();
    assert!(c.min_second_derivative() >= 0.0);
    for r in [0.3, 0.9] {
        assert_eq!(c.eval(r), (0.5 * r * r, r, 1.0));
    }
    // C¹ (in φ′) across both junctions
    for r0 in [1.0, 2.0] {
        let (p0, d0, dd0) = c.eval(r0 - 1e-9);
        let (p1, d1, dd1) = c.eval(r0 + 1e-9);
        assert!((p0 - p1).abs() < 1e-8 && (d0 - d1).abs() < 1e-8 && (dd0 - dd1).abs() < 1e-7);
    }
    assert!(c.dphi.iter().all(|d| *d >= 0.0 && *d < 3.0));
    assert!(CutoffProfile::new(0.0, 10.0, 10).unwrap_err().is_config());
}

#[test]
fn refined_energy_is_quadratic_near_the_reference() {
    let gs = &states()[1];
    let m = Medium::with_hartree(&gs.hartree, 0.02);
    let w = make_initial_data(&InitialData::RescaledSoliton { alpha: 1.0, beta: 1.0 }, &m, Some(gs), None).unwrap();
    let c = CutoffProfile::new(2.0, 40.0, 101).unwrap();
    let geom = Geometry { lambda: 1.0, b: 0.1 };
    assert!(refined_energy(&w, &w, geom, &m, &c).unwrap().abs() < 1e-12);
    let perturbed = |eps: f64| {
        let v: Vec<C64> = w.field.values.iter().zip(grid().nodes()).map(|(u, r)| u + C64::new(0.0, eps * (-r * r / 4.0).exp())).collect();
        EvolutionState::new(&m, RadialField::new(grid().clone(), 0, v).unwrap(), 0.0).unwrap()
    };
    let j1 = refined_energy(&perturbed(1e-2), &w, geom, &m, &c).unwrap();
    let j2 = refined_energy(&perturbed(5e-3), &w, geom, &m, &c).unwrap();
    assert!((j1 / j2 - 4.0).abs() < 0.05, "J ratio {}", j1 / j2);
    assert!(refined_energy_quadratic(&perturbed(1e-2), &w, 1.0, &m) > 0.0);
}

#[test]
fn bad_initial_data_is_a_configuration_error() {
    let m = Medium::new(grid(), 0.0);
    let q = &states()[0];
    let bad = [
        make_initial_data(&InitialData::Gaussian { width: 20.0, amplitude: 1.0 }, &m, None, None),
        make_initial_data(&InitialData::Gaussian { width: 1.0, amplitude: -1.0 }, &m, None, None),
        make_initial_data(&InitialData::RescaledSoliton { alpha: 1.0, beta: 0.0 }, &m, Some(q), None),
        make_initial_data(&InitialData::RescaledSoliton { alpha: 1.0, beta: 1.0 }, &m, None, None),
        make_initial_data(&InitialData::MinimalMassProfile { b0: 0.1, d0: 0.0 }, &m, Some(q), None),
    ];
    for b in bad {
        assert!(b.unwrap_err().is_config());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    // Each substep is unitary, so mass is conserved to round-off for any datum.
    #[test]
    fn mass_is_conserved(w in 0.8f64..3.0, a in 0.2f64..1.2) {
        let gs = &states()[1];
        let m = Medium::with_hartree(&gs.hartree, 0.02);
        let u0 = make_initial_data(&InitialData::Gaussian { width: w, amplitude: a }, &m, None, None).unwrap();
        let tr = evolve(&u0, &m, &Scheme { dt: 2e-3, ..Default::default() }, &Stop::at(0.2, 0.1)).unwrap();
        let m0 = tr.series.mass[0];
        prop_assert!(tr.series.mass.iter().all(|x| (x / m0 - 1.0).abs() < 1e-10));
    }
}
