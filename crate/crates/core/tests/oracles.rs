//! Oracle checks of the reference constants and the local perimeter.

mod common;

use common::{ball_oracle, composite, gauss_legendre, psi_oracle, C1, PSI1};
use nlcf_core::geometry::{make_shape, Primitive};
use nlcf_core::kernel::{ball_curvature, make_kernel, psi, KernelSpec};
use nlcf_core::perimeter::{per_local, LocalOptions};
use std::f64::consts::PI;

#[test]
fn ball_constant_matches_cartesian_oracle() {
    for (s, frozen) in C1 {
        let o = ball_oracle(s, 1.0);
        assert!((o - frozen).abs() < 1e-9 * frozen, "s = {s}: oracle {o} vs frozen {frozen}");
        let k = make_kernel(&KernelSpec::Fractional { s }).unwrap();
        let v = ball_curvature(&k, 1.0);
        assert!((v - o).abs() < 1e-6 * o, "s = {s}: library {v} vs oracle {o}");
    }
}

#[test]
fn ball_oracle_scales_like_r_to_minus_s() {
    for (s, frozen) in C1 {
        for r in [0.5, 2.0] {
            let o = ball_oracle(s, r);
            let want = frozen * r.powf(-s);
            assert!((o - want).abs() < 1e-8 * want, "s = {s}, R = {r}: {o} vs {want}");
        }
    }
}

#[test]
fn tail_constant_matches_oracle() {
    for (s, frozen) in PSI1 {
        let o = psi_oracle(s, 1.0);
        assert!((o - frozen).abs() < 1e-10 * frozen, "s = {s}: oracle {o} vs frozen {frozen}");
        let k = make_kernel(&KernelSpec::Fractional { s }).unwrap();
        let v = psi(&k, 1.0);
        assert!((v - o).abs() < 1e-8 * o, "s = {s}: library {v} vs oracle {o}");
    }
}

/// `Per(B_1) = ∫_{B_1} a(x) dx` with `a(x) = (1/s)∫ t(θ)^{-s} dθ` and
/// `t(θ)` the distance from `x` to the circle along direction `θ`.
fn ball_perimeter_oracle(s: f64) -> f64 {
    let gl = gauss_legendre(24);
    let a = |r: f64| {
        let t = |th: f64| {
            let c = r * th.cos();
            -c + (1.0 - r * r + c * c).sqrt()
        };
        composite(|th| t(th).powf(-s), 0.0, 2.0 * PI, 32, &gl) / s
    };
    // r = 1 − y^{1/(1−s)} tames the (1 − r)^{-s} growth of a
    let m = 1.0 / (1.0 - s);
    composite(|y| { let r = 1.0 - y.powf(m); 2.0 * PI * a(r) * r * m * y.powf(m - 1.0) }, 0.0, 1.0, 32, &gl)
}

#[test]
fn local_perimeter_of_ball_matches_oracle() {
    for s in [0.3, 0.5] {
        let k = make_kernel(&KernelSpec::Fractional { s }).unwrap();
        // off-centre: circles about the ball's centre make interval search slow
        let e = make_shape(&Primitive::Ball { center: [0.3, 0.2], radius: 1.0 }).unwrap();
        let opts = LocalOptions { angles: 8, level: 2, ..Default::default() };
        let est = per_local(&e, &k, 2.0, opts).unwrap();
        let o = ball_perimeter_oracle(s);
        assert!((est.value - o).abs() < 2e-3 * o, "s = {s}: {} ± {} vs oracle {o}", est.value, est.error);
    }
}
