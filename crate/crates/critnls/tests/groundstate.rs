use critnls::grid::{build_grid, Stretch};
use critnls::groundstate::*;
use proptest::prelude::*;
use std::sync::OnceLock;

fn classical() -> &'static GroundState {
    static Q: OnceLock<GroundState> = OnceLock::new();
    Q.get_or_init(|| solve_classical_q(&build_grid(1024, 40.0, Stretch::Uniform).unwrap()).unwrap())
}

#[test]
fn classical_q_satisfies_its_identities() {
    let q = classical();
    let f = q.report();
    assert!(q.eq_residual < 1e-8, "residual {:e}", q.eq_residual);
    assert!(f.pohozaev_defect < 1e-6);
    assert!(f.pairing_defect < 1e-6);
    // E(Q) = 0, G = 3M/2, N = 5M/2
    assert!(f.energy.abs() < 1e-7 * f.grad_sq);
    assert!((f.grad_sq / f.mass - 1.5).abs() < 1e-7);
    assert!((f.potential_local / f.mass - 2.5).abs() < 1e-7);
    assert!((f.gn_local - 1.0).abs() < 1e-7);
    assert!(q.is_positive_decreasing(1e-200));
    let (shot, _) = shooting_profile().unwrap();
    assert!((q.q.at(0.0) / shot.q0 - 1.0).abs() < 1e-5, "Q(0) {} vs shot {}", q.q.at(0.0), shot.q0);
}

#[test]
fn tail_decays_like_yukawa() {
    let q = classical();
    for r in [15.0, 20.0, 25.0] {
        // d log(rQ)/dr → −1
        let h = 1e-3;
        let lf = |s: f64| (s * q.q.at(s)).ln();
        let slope = (lf(r + h) - lf(r - h)) / (2.0 * h);
        assert!((slope + 1.0).abs() < 1e-3, "r = {r}: {slope}");
    }
}

#[test]
fn mass_converges_under_refinement() {
    let q2 = solve_classical_q(&build_grid(2048, 40.0, Stretch::Uniform).unwrap()).unwrap();
    assert!((classical().mass / q2.mass - 1.0).abs() < 1e-6);
    let qg = solve_classical_q(&build_grid(1024, 40.0, Stretch::graded()).unwrap()).unwrap();
    assert!((qg.mass / q2.mass - 1.0).abs() < 1e-6);
}

#[test]
fn constrained_flow_recovers_q() {
    let q = classical();
    let m = minimize_constrained(0.9 * q.mass, 0.0, q).unwrap();
    assert!(m.eq_residual < 1e-8);
    assert!((m.rescaled_mass / q.mass - 1.0).abs() < 1e-6, "{} vs {}", m.rescaled_mass, q.mass);
    assert!(l2_distance(&m.rescaled, q) < 1e-6 * q.mass.sqrt());
}

#[test]
fn continuation_branch_is_ordered() {
    let q = classical();
    let a = continue_to(q, 0.02).unwrap();
    let b = continue_to(q, 0.05).unwrap();
    assert!(a.eq_residual < 1e-8 && b.eq_residual < 1e-8);
    assert!(a.report().pohozaev_defect < 1e-6 && b.report().pohozaev_defect < 1e-6);
    // the focusing Hartree term lowers the threshold mass
    assert!(q.mass > a.mass && a.mass > b.mass);
    assert!(l2_distance(&a, q) < l2_distance(&b, q));
    // the branch does not depend on the path taken along it
    let via = continue_to(&a, 0.05).unwrap();
    assert!(l2_distance(&via, &b) < 1e-8 * b.mass.sqrt());
    assert!(b.is_positive_decreasing(1e-200));
    // Pohozaev at unit multiplier makes E_μ(Q_μ) vanish
    assert!(b.report().energy.abs() < 1e-7 * b.report().grad_sq);
    let neg = continue_signed(q, -0.005).unwrap();
    assert!(neg.mass > q.mass && neg.eq_residual < 1e-8);
}

#[test]
fn coercivity_threshold_sits_below_q_mu_mass() {
    let q = classical();
    let c = gn_nonlocal_bound(q).unwrap();
    assert!(c > 0.69 && c < 0.72, "C* = {c}");
    assert!((coercivity_threshold(0.0, q.mass, c) / q.mass - 1.0).abs() < 1e-12);
    let t = coercivity_threshold(0.05, q.mass, c);
    let qm = continue_to(q, 0.05).unwrap();
    assert!(t < qm.mass && t > 0.9 * qm.mass, "threshold {t}, ‖Q_μ‖² {}", qm.mass);
    assert!(minimize_constrained(1.01 * t, 0.05, q).unwrap_err().is_config());
}

#[test]
fn rejects_out_of_range_couplings() {
    let g = build_grid(256, 40.0, Stretch::Uniform).unwrap();
    assert!(solve_q_mu(0.2, &g).unwrap_err().is_config());
    assert!(solve_q_mu(-0.01, &g).unwrap_err().is_config());
    assert!(continue_signed(classical(), 0.5).unwrap_err().is_config());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    // u_λ = λ^{3/2} Q(λ r): mass invariant, every functional scales like λ².
    #[test]
    fn functionals_follow_mass_critical_scaling(lam in 0.7f64..1.4) {
        let q = classical();
        let u = q.q.grid.field(0, |r| lam.powf(1.5) * q.q.at(lam * r));
        let f = functional_report(&u, 0.02, &q.hartree, q.mass).unwrap();
        let f0 = functional_report(&q.q, 0.02, &q.hartree, q.mass).unwrap();
        prop_assert!((f.mass / f0.mass - 1.0).abs() < 1e-6);
        for (a, b) in [(f.grad_sq, f0.grad_sq), (f.potential_local, f0.potential_local), (f.potential_hartree, f0.potential_hartree)] {
            prop_assert!((a / (lam * lam * b) - 1.0).abs() < 1e-5, "{} vs {}", a, lam * lam * b);
        }
        // the GN quotients are scale invariant
        prop_assert!((f.gn_local / f0.gn_local - 1.0).abs() < 1e-5);
        prop_assert!((f.gn_nonlocal / f0.gn_nonlocal - 1.0).abs() < 1e-5);
    }

    // Sharp local GN: the normalized quotient never exceeds its value at Q.
    #[test]
    fn local_gn_quotient_is_maximal_at_q(w in 0.5f64..3.0, t in 0.0f64..1.0) {
        let q = classical();
        let u = q.q.grid.field(0, |r| (1.0 - t) * q.q.at(r) + t * (-(r * r) / (2.0 * w * w)).exp());
        let f = functional_report(&u, 0.0, &q.hartree, q.mass).unwrap();
        prop_assert!(f.gn_local <= 1.0 + 1e-8, "quotient {}", f.gn_local);
    }
}
