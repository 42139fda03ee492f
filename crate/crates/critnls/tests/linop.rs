use critnls::grid::{build_grid, Stretch};
use critnls::groundstate::*;
use critnls::linop::*;
use critnls::RealField;
use proptest::prelude::*;
use std::sync::OnceLock;

fn states() -> &'static [GroundState; 2] {
    static S: OnceLock<[GroundState; 2]> = OnceLock::new();
    S.get_or_init(|| {
        let q = solve_classical_q(&build_grid(1024, 40.0, Stretch::Uniform).unwrap()).unwrap();
        let q5 = continue_to(&q, 0.05).unwrap();
        [q, q5]
    })
}

fn rel(a: &RealField, scale: &RealField) -> f64 {
    a.norm() / scale.norm()
}

#[test]
fn symmetry_modes_are_annihilated() {
    for gs in states() {
        let lm = assemble_channel_operator(gs, Kind::Minus, 0).unwrap();
        assert!(rel(&lm.apply_field(&gs.q).unwrap(), &gs.q) < 1e-7);
        let lp1 = assemble_channel_operator(gs, Kind::Plus, 1).unwrap();
        let dq = gs.q_prime();
        assert!(rel(&lp1.apply_field(&dq).unwrap(), &dq) < 1e-6, "μ = {}", gs.mu);
        // L₊ΛQ = −2Q
        let lp0 = assemble_channel_operator(gs, Kind::Plus, 0).unwrap();
        let mut d = lp0.apply_field(&gs.lambda_q()).unwrap();
        d.axpy(2.0, &gs.q).unwrap();
        assert!(d.norm() / (2.0 * gs.q.norm()) < 1e-6, "μ = {}", gs.mu);
    }
}

#[test]
fn nondegeneracy_holds() {
    for gs in states() {
        let rep = nondegeneracy_report(gs, 4, 6).unwrap();
        assert!(rep.passed, "μ = {}: {:?}", gs.mu, rep.failing());
        assert!(rep.minus_kernel_cosine >= 1.0 - 1e-6);
        let plus0 = &rep.channels.iter().find(|c| c.kind == Kind::Plus && c.l == 0).unwrap();
        // exactly one negative direction for L₊ (the ground state is a mountain pass)
        assert_eq!(plus0.negative_count, 1);
        assert!(plus0.ground_fixed_sign);
    }
}

#[test]
fn spectrum_is_ordered_and_normalized() {
    let gs = &states()[0];
    let op = assemble_channel_operator(gs, Kind::Plus, 2).unwrap();
    let s = lowest_eigenpairs(&op, 5).unwrap();
    assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    for (i, f) in s.eigenfields.iter().enumerate() {
        assert!((f.norm() - 1.0).abs() < 1e-10);
        let lf = op.apply_field(f).unwrap();
        let mut d = lf.clone();
        d.axpy(-s.eigenvalues[i], f).unwrap();
        assert!(d.norm() < 1e-8 * (1.0 + s.eigenvalues[i].abs()));
    }
    assert!(lowest_eigenpairs(&op, 0).unwrap_err().is_config());
}

#[test]
fn constrained_solves_respect_orthogonality() {
    let gs = &states()[1];
    let lm = assemble_channel_operator(gs, Kind::Minus, 0).unwrap();
    let g = gs.grid();
    // |y|²Q is orthogonal to nothing in particular; project it off Q first
    let mut s = g.field(0, |r| r * r * gs.q.at(r));
    let c = s.inner(&gs.q).unwrap() / gs.q.inner(&gs.q).unwrap();
    s.axpy(-c, &gs.q).unwrap();
    let sol = solve_with_constraints(&lm, &s, std::slice::from_ref(&gs.q), 1e-8).unwrap();
    assert!(sol.residual < 1e-8);
    assert!(sol.x.inner(&gs.q).unwrap().abs() < 1e-10 * sol.x.norm() * gs.q.norm());
    // a source along the kernel is a solvability violation
    let err = solve_with_constraints(&lm, &gs.q, std::slice::from_ref(&gs.q), 1e-6).unwrap_err();
    assert!(matches!(err, critnls::Error::Solvability(_)));
    // the factored inverse agrees with the bordered solve
    let inv = ConstrainedInverse::new(&lm, std::slice::from_ref(&gs.q)).unwrap();
    let x = inv.apply(&s.values).unwrap();
    let d: f64 = x.iter().zip(&sol.x.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d < 1e-8 * sol.x.sup());
}

#[test]
fn inverse_bounds_are_finite() {
    let gs = &states()[1];
    let lm = assemble_channel_operator(gs, Kind::Minus, 0).unwrap();
    let n0 = constrained_inverse_norm(&lm, std::slice::from_ref(&gs.q), 0.0, 30).unwrap();
    let n1 = constrained_inverse_norm(&lm, std::slice::from_ref(&gs.q), 0.5, 30).unwrap();
    assert!(n0.is_finite() && n0 > 0.0 && n1.is_finite() && n1 > 0.0);
    let g = gs.grid();
    let src: Vec<f64> = g.nodes().iter().map(|r| (-r).exp() * (1.0 - r / 3.0)).collect();
    let q: Vec<f64> = gs.q.values.clone();
    let c: f64 = critnls::grid::inner_raw(g, &src, &q) / critnls::grid::inner_raw(g, &q, &q);
    let src: Vec<f64> = src.iter().zip(&q).map(|(s, q)| s - c * q).collect();
    let k = domination_constant(&lm, std::slice::from_ref(&gs.q), &gs.q, &[src], 10.0).unwrap();
    assert!(k.is_finite() && k > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    // (f, Lg) = (Lf, g) in the channel inner product, for every channel and both operators.
    #[test]
    fn operators_are_symmetric(l in 0usize..4, plus in any::<bool>(), a in 0.3f64..2.0, b in 0.3f64..2.0, p in 0.0f64..2.0) {
        let gs = &states()[1];
        let kind = if plus { Kind::Plus } else { Kind::Minus };
        if kind == Kind::Minus && l > 0 {
            return Ok(());
        }
        let op = assemble_channel_operator(gs, kind, l).unwrap();
        let g = gs.grid();
        let f = g.field(l, |r| r.powi(l as i32) * (-a * r * r).exp());
        let h = g.field(l, |r| r.powi(l as i32) * (1.0 + p * r) * (-b * r).exp() * (-r * r / 20.0).exp());
        let lhs = f.inner(&op.apply_field(&h).unwrap()).unwrap();
        let rhs = op.apply_field(&f).unwrap().inner(&h).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (lhs.abs() + rhs.abs() + 1e-3), "{} vs {}", lhs, rhs);
    }
}
