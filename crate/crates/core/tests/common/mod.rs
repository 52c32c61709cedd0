//! Independent oracles for the reference constants: plain composite
//! Gauss-Legendre in Cartesian coordinates, sharing no code with the
//! library's quadrature.

#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI};

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

pub fn composite<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, gl: &[(f64, f64)]) -> f64 {
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        for &(x, w) in gl {
            acc += w * f(c + 0.5 * h * x);
        }
    }
    0.5 * h * acc
}

/// `J(b) = ∫_0^b sin^s ψ dψ`, with `ψ = z^p`, `p = 4/(1+s)`, so the
/// integrand starts as `z³`.
pub fn j(b: f64, s: f64, gl: &[(f64, f64)]) -> f64 {
    let p = 4.0 / (1.0 + s);
    let top = b.max(0.0).powf(1.0 / p);
    composite(|z| z.powf(p).sin().powf(s) * p * z.powf(p - 1.0), 0.0, top, 8, gl)
}

/// `c(R) = 4[∫_0^{2R} u^{-(1+s)} J(atan(u/w)) du + J(π/2)(2R)^{-s}/s]`,
/// `w = √(2Ru − u²)`: the ball seen from the boundary point at the origin,
/// compared with the tangent half plane, integrated column by column.
pub fn ball_oracle(s: f64, r: f64) -> f64 {
    let gl = gauss_legendre(24);
    let g = |u: f64| {
        let w = (2.0 * r * u - u * u).max(0.0).sqrt();
        u.powf(-(1.0 + s)) * j(u.atan2(w), s, &gl)
    };
    // g(u) du = y^{-s} (analytic in y) dy for u = y²; y = z^q with
    // q = 4/(1−s) leaves z³ (analytic in z^q) on (0, R]
    let q = 4.0 / (1.0 - s);
    let lower = composite(
        |z| {
            let y = z.powf(q);
            g(y * y) * 2.0 * y * q * z.powf(q - 1.0)
        },
        0.0,
        r.sqrt().powf(1.0 / q),
        64,
        &gl,
    );
    // u = 2R − y² on [R, 2R)
    let upper = composite(|y| g(2.0 * r - y * y) * 2.0 * y, 0.0, r.sqrt(), 64, &gl);
    4.0 * (lower + upper + j(FRAC_PI_2, s, &gl) * (2.0 * r).powf(-s) / s)
}

/// `Ψ(r) = ∫_{B_{r/4}(7r/4, 0)} |y|^{-(2+s)} dy` over vertical chords.
pub fn psi_oracle(s: f64, r: f64) -> f64 {
    let gl = gauss_legendre(24);
    let q = r / 4.0;
    // x = 7r/4 + q sin θ removes the chord-length square root
    composite(
        |th| {
            let x = 1.75 * r + q * th.sin();
            let half = q * th.cos();
            let col = composite(|y| (x * x + y * y).powf(-(2.0 + s) / 2.0), -half, half, 4, &gl);
            col * q * th.cos()
        },
        -FRAC_PI_2,
        FRAC_PI_2,
        16,
        &gl,
    )
}

/// `c(1)` for `s = 0.3, 0.5, 0.7`.
pub const C1: [(f64, f64); 3] = [(0.3, 21.96668273463814), (0.5, 14.83259741841098), (0.7, 14.00263644398522)];
/// `Ψ(1)` for the same `s`.
pub const PSI1: [(f64, f64); 3] = [(0.3, 0.05494857285331210), (0.5, 0.04925201224964966), (0.7, 0.04415514725752227)];
