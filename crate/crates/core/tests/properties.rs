//! Invariants of kernels, sets, curvature and the flow.

use nlcf_core::curvature::{curvature_pv, PvOptions};
use nlcf_core::flow::{evolve_set, FlowParams};
use nlcf_core::geometry::{make_shape, Primitive, Window};
use nlcf_core::kernel::{
    ball_curvature, ball_evolution, classify_regime, lambda_of, make_kernel, psi, tail_mass, Kernel, KernelSpec, Regime, StepControl,
};
use proptest::prelude::*;
use std::f64::consts::PI;

fn frac(s: f64) -> Kernel {
    make_kernel(&KernelSpec::Fractional { s }).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

const LAMBDAS: [f64; 3] = [0.5, 2.0, 4.0];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn psi_is_homogeneous(s in 0.1f64..0.9, r in 0.05f64..2.0) {
        let k = frac(s);
        let base = psi(&k, r);
        for l in LAMBDAS {
            prop_assert!(rel(psi(&k, l * r), l.powf(-s) * base) < 1e-3);
        }
    }

    #[test]
    fn lambda_is_homogeneous(s in 0.1f64..0.9, r in 0.05f64..2.0) {
        let k = frac(s);
        let base = lambda_of(&k, r).unwrap();
        for l in LAMBDAS {
            prop_assert!(rel(lambda_of(&k, l * r).unwrap(), l.powf(1.0 + s) * base) < 1e-3);
        }
    }

    #[test]
    fn ball_curvature_is_homogeneous(s in 0.1f64..0.9, r in 0.05f64..2.0) {
        let k = frac(s);
        let base = ball_curvature(&k, r);
        for l in LAMBDAS {
            prop_assert!(rel(ball_curvature(&k, l * r), l.powf(-s) * base) < 1e-3);
        }
    }

    #[test]
    fn extinction_time_is_homogeneous(s in 0.2f64..0.8, r in 0.2f64..2.0) {
        let k = frac(s);
        let base = ball_evolution(&k, r, StepControl::default()).extinction_time;
        let closed = r.powf(1.0 + s) / (ball_curvature(&k, 1.0) * (1.0 + s));
        prop_assert!(rel(base, closed) < 1e-3);
        for l in LAMBDAS {
            let t = ball_evolution(&k, l * r, StepControl::default()).extinction_time;
            prop_assert!(rel(t, l.powf(1.0 + s) * base) < 1e-3);
        }
    }

    /// The disk `B_{r/4}(7r/4, 0)` lies in the annulus `3r/2 ≤ |y| ≤ 2r`.
    #[test]
    fn psi_is_bracketed_by_the_annulus(s in 0.1f64..0.9, r in 0.05f64..4.0) {
        let k = frac(s);
        let area = PI * r * r / 16.0;
        let v = psi(&k, r);
        prop_assert!(v >= area * k.k0(2.0 * r) && v <= area * k.k0(1.5 * r));
    }

    #[test]
    fn tail_mass_matches_closed_form(s in 0.1f64..0.9, r in 0.01f64..100.0, f in 1.01f64..10.0) {
        let k = frac(s);
        let t = tail_mass(&k, r).unwrap();
        prop_assert!(rel(t, 2.0 * PI * r.powf(-s) / s) < 1e-6);
        prop_assert!(tail_mass(&k, f * r).unwrap() < t);
    }

    #[test]
    fn fractional_kernels_are_strong(s in 0.2f64..0.8) {
        prop_assert_eq!(classify_regime(&frac(s)).regime, Regime::Strong);
    }

    #[test]
    fn indicator_agrees_with_signed_distance(x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let shapes = [
            Primitive::Ball { center: [0.2, -0.1], radius: 1.0 },
            Primitive::Cross,
            Primitive::PerturbedCross { r: 0.5 },
            Primitive::Droplet,
            Primitive::TangentBalls,
            Primitive::Stadium { half_length: 0.7, radius: 0.4 },
        ];
        for p in shapes {
            let e = make_shape(&p).unwrap();
            let d = e.signed_distance([x, y]);
            if d.abs() > 1e-12 {
                prop_assert_eq!(e.indicator([x, y]), d > 0.0, "{:?} at ({}, {})", p, x, y);
            }
        }
    }

    #[test]
    fn shapes_keep_their_symmetries(x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let cross = make_shape(&Primitive::Cross).unwrap();
        let d = cross.signed_distance([x, y]);
        for q in [[-x, y], [x, -y], [-x, -y]] {
            prop_assert!((cross.signed_distance(q) - d).abs() < 1e-12);
        }
        // the quarter turn swaps the cross and its complement
        prop_assert!((cross.signed_distance([-y, x]) + d).abs() < 1e-12);
        for p in [Primitive::Droplet0, Primitive::TangentBalls] {
            let e = make_shape(&p).unwrap();
            let d = e.signed_distance([x, y]);
            prop_assert!((e.signed_distance([-x, y]) - d).abs() < 1e-12);
            prop_assert!((e.signed_distance([x, -y]) - d).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_is_exact(x in -3.0f64..3.0, y in -3.0f64..3.0, l in 0.1f64..10.0, r in 0.1f64..2.0) {
        let b = make_shape(&Primitive::Ball { center: [0.3, 0.1], radius: r }).unwrap();
        let scaled = make_shape(&Primitive::Ball { center: [0.3 * l, 0.1 * l], radius: l * r }).unwrap();
        let via = b.scale(l).unwrap();
        let p = [l * x, l * y];
        prop_assert!((via.signed_distance(p) - scaled.signed_distance(p)).abs() < 1e-12 * l.max(1.0));
        let c = make_shape(&Primitive::PerturbedCross { r }).unwrap();
        let cs = make_shape(&Primitive::PerturbedCross { r: l * r }).unwrap();
        prop_assert!((l * c.signed_distance([x, y]) - cs.signed_distance(p)).abs() < 1e-12 * l.max(1.0));
    }

    /// Eroding a ball shrinks its radius; dilating the complement matches
    /// eroding the set.
    #[test]
    fn erosion_and_dilation_are_dual(x in -3.0f64..3.0, y in -3.0f64..3.0, lam in 0.0f64..0.8) {
        let ball = |r: f64| make_shape(&Primitive::Ball { center: [0.0, 0.0], radius: r }).unwrap();
        let p = [x, y];
        prop_assert!((ball(1.0).erode(lam).unwrap().signed_distance(p) - ball(1.0 - lam).signed_distance(p)).abs() < 1e-12);
        prop_assert!((ball(1.0).dilate(lam).unwrap().signed_distance(p) - ball(1.0 + lam).signed_distance(p)).abs() < 1e-12);
        let st = make_shape(&Primitive::Stadium { half_length: 0.5, radius: 1.0 }).unwrap();
        let a = st.clone().erode(lam).unwrap().complement();
        let b = st.complement().dilate(lam).unwrap();
        prop_assert_eq!(a.indicator(p), b.indicator(p));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// `H_{gE+v}(gx+v) = H_E(x)` for rotations and translations.
    #[test]
    fn curvature_is_equivariant(t in -0.7f64..0.7, th in 0.0f64..6.28, vx in -1.0f64..1.0, vy in -1.0f64..1.0) {
        let k = frac(0.5);
        let st = make_shape(&Primitive::Stadium { half_length: 0.7, radius: 0.4 }).unwrap();
        let x = [t, 0.4];
        let moved = st.clone().rotate(th).translate([vx, vy]);
        let y = [th.cos() * x[0] - th.sin() * x[1] + vx, th.sin() * x[0] + th.cos() * x[1] + vy];
        let a = curvature_pv(&st, x, &k, &PvOptions::default()).unwrap();
        let b = curvature_pv(&moved, y, &k, &PvOptions::default()).unwrap();
        prop_assert!((a.value - b.value).abs() <= a.bar() + b.bar() + 1e-9, "{:?} {:?}", a, b);
    }

    /// `H_{λE}(λx) = λ^{-s} H_E(x)`.
    #[test]
    fn fractional_curvature_scales(s in 0.2f64..0.8, l in 0.25f64..4.0, r in 0.2f64..1.0) {
        let k = frac(s);
        let e = make_shape(&Primitive::PerturbedCross { r }).unwrap();
        let f = make_shape(&Primitive::PerturbedCross { r: l * r }).unwrap();
        let a = curvature_pv(&e, [0.3 * r, r], &k, &PvOptions::default()).unwrap();
        let b = curvature_pv(&f, [0.3 * l * r, l * r], &k, &PvOptions::default()).unwrap();
        let want = l.powf(-s) * a.value;
        prop_assert!((b.value - want).abs() <= b.bar() + l.powf(-s) * a.bar() + 1e-9, "{} vs {}", b.value, want);
    }

    /// `E ⊂ F` touching at `x` gives `H_F(x) ≤ H_E(x)`.
    #[test]
    fn curvature_is_monotone_under_inclusion(r in 0.2f64..1.0, a in 1.2f64..3.0) {
        let k = frac(0.5);
        let cross = make_shape(&Primitive::Cross).unwrap();
        let bigger = make_shape(&Primitive::PerturbedCross { r }).unwrap();
        let x = [a * r, a * r];
        let he = curvature_pv(&cross, x, &k, &PvOptions::default()).unwrap();
        let hf = curvature_pv(&bigger, x, &k, &PvOptions::default()).unwrap();
        prop_assert!(hf.value <= he.value + he.bar() + hf.bar(), "{:?} {:?}", hf, he);
    }
}

fn params(half: f64, n: usize) -> FlowParams {
    FlowParams { window: Window::square(half), n, frames: 4, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    /// Nested initial sets stay nested at every recorded frame.
    #[test]
    fn flow_preserves_inclusion(r1 in 0.5f64..0.8, gap in 0.15f64..0.4) {
        let k = frac(0.5);
        let ball = |r: f64| make_shape(&Primitive::Ball { center: [0.0, 0.0], radius: r }).unwrap();
        let p = params(2.4, 64);
        let a = evolve_set(&ball(r1), &k, 0.01, p).unwrap();
        let b = evolve_set(&ball(r1 + gap), &k, 0.01, p).unwrap();
        for (fa, fb) in a.fields.iter().zip(&b.fields) {
            prop_assert!(fa.u.iter().zip(&fb.u).all(|(x, y)| *x < 0.0 || *y >= 0.0));
        }
    }

    /// Mirror-symmetric data keep their symmetry.
    #[test]
    fn flow_preserves_symmetry(len in 0.2f64..0.5, rad in 0.4f64..0.5) {
        let k = frac(0.5);
        let e = make_shape(&Primitive::Stadium { half_length: len, radius: rad }).unwrap();
        let tr = evolve_set(&e, &k, 0.01, params(2.4, 64)).map_err(|e| TestCaseError::fail(e.to_string()))?;
        // contour tie-breaks on exact zeros leave a drift far below a cell
        let f = tr.fields.last().unwrap();
        let tol = 0.02 * f.h;
        for j in 0..f.ny {
            for i in 0..f.nx {
                let v = f.at(i, j);
                prop_assert!((v - f.at(f.nx - 1 - i, j)).abs() < tol);
                prop_assert!((v - f.at(i, f.ny - 1 - j)).abs() < tol);
            }
        }
    }
}

#[test]
fn piecewise_kernels_below_the_threshold_are_weak() {
    for alpha in [0.5, 1.0] {
        let k = make_kernel(&KernelSpec::PiecewisePower { alpha, tail_exponent: 3.0 }).unwrap();
        assert_eq!(classify_regime(&k).regime, Regime::Weak, "alpha = {alpha}");
    }
}
