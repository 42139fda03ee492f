use critnls::grid::{build_grid, Stretch};
use critnls::hartree::*;
use critnls::quad;
use std::f64::consts::PI;

// Dawson's integral by Gauss–Legendre panels: F(x) = e^{-x²} ∫₀^x e^{t²} dt
fn dawson(x: f64) -> f64 {
    let (t, w) = quad::gauss_legendre(40);
    let panels = (x.ceil() as usize).max(1) * 4;
    let dx = x / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let a = p as f64 * dx;
        for (u, wi) in t.iter().zip(&w) {
            let y = a + 0.5 * dx * (u + 1.0);
            s += 0.5 * dx * wi * (y * y - x * x).exp();
        }
    }
    s
}

#[test]
fn gaussian_potential_closed_form() {
    // |x|^{-2} * e^{-|y|²} = 2π^{3/2} F(r)/r
    for stretch in [Stretch::Uniform, Stretch::graded()] {
        let g = build_grid(1024, 20.0, stretch).unwrap();
        let h = Hartree::new(&g, 0);
        let f = g.field(0, |r| (-r * r).exp());
        let a = hartree_potential(&h, &f, true).unwrap();
        let mut worst = 0.0f64;
        for (i, &r) in g.nodes().iter().enumerate() {
            if r > 15.0 {
                break;
            }
            let want = 2.0 * PI.powf(1.5) * dawson(r) / r;
            worst = worst.max((a.values[i] / want - 1.0).abs());
        }
        assert!(worst < 1e-9, "{stretch:?} worst {worst:e}");
        let a0 = potential_at_origin(&g, &f.values);
        assert!((a0 / (2.0 * PI.powf(1.5)) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn unit_ball_indicator() {
    // cell-aligned: r = 1 is a cell boundary
    let g = build_grid(4096, 32.0, Stretch::Uniform).unwrap();
    let h = Hartree::new(&g, 0);
    let f = g.field(0, |r| if r < 1.0 { 1.0 } else { 0.0 });
    assert!((potential_at_origin(&g, &f.values) / (4.0 * PI) - 1.0).abs() < 1e-12);
    let a = hartree_potential(&h, &f, true).unwrap();
    let i = g.nodes().iter().position(|&r| r > 10.0).unwrap();
    let r = g.nodes()[i];
    assert!((a.values[i] * r * r / (4.0 * PI / 3.0) - 1.0).abs() < 0.01);
}

#[test]
fn oracle_on_simple_densities() {
    let (v, _) = brute_force_radial(&|r| if r < 1.0 { 1.0 } else { 0.0 }, 0.0, &[1.0], 1.0, 1e-10).unwrap();
    assert!((v / (4.0 * PI) - 1.0).abs() < 1e-4);
    let (v, _) = brute_force_radial(&|r| (-r * r).exp(), 0.0, &[], 9.0, 1e-10).unwrap();
    assert!((v / (2.0 * PI.powf(1.5)) - 1.0).abs() < 1e-4);
    let (v, _) = brute_force_3d(&|y| (-(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])).exp(), [0.0; 3], 9.0, 1e-10).unwrap();
    assert!((v / (2.0 * PI.powf(1.5)) - 1.0).abs() < 1e-4);
}

#[test]
fn channel_constants_calibrate_to_two_pi() {
    let g = build_grid(512, 12.0, Stretch::Uniform).unwrap();
    let ids = [10, 40, 80, 150, 250];
    let cal = calibrate(&g, 4, &ids).unwrap();
    for (l, c) in cal.fitted.iter().enumerate() {
        assert!((c / (2.0 * PI) - 1.0).abs() < 1e-6, "l={l} c={c}");
    }
    assert!(cal.max_rel_err < 1e-6);
}

#[test]
fn symmetric_linear_far_field() {
    let g = build_grid(800, 30.0, Stretch::graded()).unwrap();
    let h = Hartree::new(&g, 2);
    let f = g.field(0, |r| (-r * r / 3.0).exp() * (1.0 + r));
    let e = g.field(0, |r| (-(r - 2.0) * (r - 2.0)).exp());
    let af = h.potential(&f.values);
    let ae = h.potential(&e.values);
    let lhs = critnls::grid::inner_raw(&g, &af, &e.values);
    let rhs = critnls::grid::inner_raw(&g, &f.values, &ae);
    assert!((lhs - rhs).abs() < 1e-8 * lhs.abs());
    // A(f + 2e) = A f + 2 A e
    let s: Vec<f64> = f.values.iter().zip(&e.values).map(|(a, b)| a + 2.0 * b).collect();
    let as_ = h.potential(&s);
    for i in 0..g.n() {
        assert!((as_[i] - af[i] - 2.0 * ae[i]).abs() < 1e-10 * as_[i].abs());
    }
    // monotone: e ≤ e + f pointwise
    assert!(as_.iter().zip(&ae).all(|(a, b)| a >= b));
    // far field → ‖f‖_{L¹(ℝ³)} / r²
    let mass = 4.0 * PI * g.quadrature(&f.values);
    let i = g.nodes().iter().position(|&r| r > 25.0).unwrap();
    let r = g.nodes()[i];
    assert!((af[i] * r * r / mass - 1.0).abs() < 5e-3);
    // off-diagonal kernel entries are nonnegative away from the singular correction
    for l in 0..=2 {
        let k = h.kernel(l);
        for i in (0..g.n()).step_by(37) {
            for (j, v) in k.row(i).iter().enumerate() {
                if (i as i64 - j as i64).abs() > 4 {
                    assert!(*v >= 0.0);
                }
            }
        }
    }
}

#[test]
fn higher_channels_match_oracle() {
    let g = build_grid(600, 12.0, Stretch::Uniform).unwrap();
    let h = Hartree::new(&g, 3);
    for l in 1..=3usize {
        let f = g.field(l, |r| r.powi(l as i32) * (-r * r / 2.0).exp() * (1.0 + 0.3 * r * r));
        let a = channel_convolve(h.kernel(l), &f).unwrap();
        for &i in &[7usize, 60, 120, 300] {
            let r = g.nodes()[i];
            let dens = |y: [f64; 3]| {
                let rr = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
                if rr == 0.0 {
                    return 0.0;
                }
                rr.powi(l as i32) * (-rr * rr / 2.0).exp() * (1.0 + 0.3 * rr * rr)
                    * critnls::special::legendre_p_one(l, y[2] / rr)
            };
            let (v, _) = brute_force_3d(&dens, [0.0, 0.0, r], 10.0, 1e-10).unwrap();
            assert!((a.values[i] / v - 1.0).abs() < 1e-8, "l={l} r={r} {} {v}", a.values[i]);
        }
    }
    let zero = g.field(2, |_| 0.0);
    assert!(channel_convolve(h.kernel(2), &zero).unwrap().values.iter().all(|v| *v == 0.0));
    assert!(channel_convolve(h.kernel(1), &zero).is_err());
}

#[test]
fn hls_quotient_scale_invariant() {
    let g = build_grid(2048, 40.0, Stretch::Uniform).unwrap();
    let h = Hartree::new(&g, 0);
    let quotient = |s: f64| {
        let u = g.field(0, |r| (-r * r / (2.0 * s * s)).exp());
        let u2: Vec<f64> = u.values.iter().map(|v| v * v).collect();
        let a = h.potential(&u2);
        let num = 4.0 * PI * critnls::grid::inner_raw(&g, &a, &u2);
        let grad = 4.0 * PI * u.inner(&u.laplacian()).unwrap();
        let mass = 4.0 * PI * u.inner(&u).unwrap();
        num / (grad * mass)
    };
    let q0 = quotient(1.0);
    for s in [0.7, 1.3, 2.0] {
        assert!((quotient(s) / q0 - 1.0).abs() < 1e-8);
    }
}

#[test]
fn rejects_bad_inputs() {
    let g = build_grid(64, 8.0, Stretch::Uniform).unwrap();
    let h = Hartree::new(&g, 1);
    let neg = g.field(0, |r| r - 1.0);
    assert!(hartree_potential(&h, &neg, true).is_err());
    assert!(hartree_potential(&h, &neg, false).is_ok());
    assert!(hartree_potential(&h, &g.field(1, |r| r), false).is_err());
}

