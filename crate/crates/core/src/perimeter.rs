//! Nonlocal perimeters and the cross non-minimality experiment.
//!
//! `Per_K(E, B_R)` sums the interaction of `E ∩ B_R` with `Eᶜ` and of
//! `E ∖ B_R` with `B_R ∖ E`. The cross comparison never subtracts two
//! perimeters: with `W_r = C_r ∖ C` the difference equals
//! `∫_{W_r} [∫_{C_rᶜ} K(x−y)dy − ∫_C K(x−y)dy] dx`, and the inner bracket is
//! a radial integral of exact arc measures (all boundaries are lines).

use crate::curvature::radial;
use crate::geometry::{self, add, circle_intervals_of, mul, norm, polar, Asymptote, PlanarSet, P2};
use crate::kernel::{make_kernel, psi, tail_mass, Kernel, KernelError, KernelSpec};
use crate::quad::{self, tanh_sinh_nodes, Estimate, Tol};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::{PI, SQRT_2};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PerimeterError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("interaction integral diverges: {0}")]
    Divergent(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Coordinates used for the cross computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// `C = {|x1| ≥ |x2|}`.
    Cross,
    /// The same configuration rotated by `π/4`.
    Rotated,
}

impl Frame {
    fn angle(self) -> f64 {
        match self {
            Frame::Cross => 0.0,
            Frame::Rotated => 0.25 * PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerimeterEstimate {
    pub value: f64,
    pub error: f64,
}

/// `Per_K(C_r, B_R) − Per_K(C, B_R)` and the comparison bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerimeterDiffReport {
    pub r: f64,
    pub big_r: f64,
    pub diff: f64,
    /// `−2 ∫_{W_r} Ψ(|x2|) dx`.
    pub bound: f64,
    pub quadrature_error: f64,
    pub bound_error: f64,
    /// `{|x1| < |x2| < r}` in the cross frame.
    pub region: String,
    pub frame: Frame,
}

impl PerimeterDiffReport {
    /// `diff + bar < 0`.
    pub fn certified_negative(&self) -> bool {
        self.diff + self.quadrature_error < 0.0
    }

    /// `diff ≤ bound` within the combined bars.
    pub fn bound_holds(&self) -> bool {
        self.diff <= self.bound + self.quadrature_error + self.bound_error
    }
}

/// Geometry of `C`, `C_r` and `W_r` in a chosen frame.
struct CrossConfig {
    r: f64,
    rot: (f64, f64),
    /// Boundary lines `{y : n·y = c}` in the computation frame.
    lines: Vec<(P2, f64)>,
    corners: Vec<P2>,
}

impl CrossConfig {
    fn new(r: f64, frame: Frame) -> CrossConfig {
        let (s, c) = frame.angle().sin_cos();
        let rot = |p: P2| [c * p[0] - s * p[1], s * p[0] + c * p[1]];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let base: [(P2, f64); 6] =
            [([h, -h], 0.0), ([h, h], 0.0), ([1.0, 0.0], r), ([1.0, 0.0], -r), ([0.0, 1.0], r), ([0.0, 1.0], -r)];
        CrossConfig {
            r,
            rot: (s, c),
            lines: base.iter().map(|&(n, off)| (rot(n), off)).collect(),
            corners: [[r, r], [-r, r], [r, -r], [-r, -r], [0.0, 0.0]].iter().map(|&p| rot(p)).collect(),
        }
    }

    /// Cross-frame coordinates of a computation-frame point.
    #[inline]
    fn back(&self, p: P2) -> P2 {
        let (s, c) = self.rot;
        [c * p[0] + s * p[1], -s * p[0] + c * p[1]]
    }

    #[inline]
    fn fwd(&self, p: P2) -> P2 {
        let (s, c) = self.rot;
        [c * p[0] - s * p[1], s * p[0] + c * p[1]]
    }

    #[inline]
    fn in_c(&self, p: P2) -> bool {
        let q = self.back(p);
        q[0].abs() >= q[1].abs()
    }

    #[inline]
    fn in_cr(&self, p: P2) -> bool {
        let q = self.back(p);
        q[0].abs() >= q[1].abs() || (q[0].abs() <= self.r && q[1].abs() <= self.r)
    }

    /// `Σ_arcs |arc|·weight(in C_r, in C)` over `∂B_ρ(x)`.
    fn arc_sum(&self, x: P2, rho: f64, weight: &dyn Fn(bool, bool) -> f64) -> f64 {
        let mut cuts: Vec<f64> = Vec::with_capacity(14);
        for &(n, off) in &self.lines {
            let t = (off - geometry::dot(n, x)) / rho;
            if t.abs() < 1.0 {
                let phi = n[1].atan2(n[0]);
                let a = t.acos();
                cuts.push((phi + a).rem_euclid(2.0 * PI));
                cuts.push((phi - a).rem_euclid(2.0 * PI));
            }
        }
        if cuts.is_empty() {
            let p = add(x, [rho, 0.0]);
            return 2.0 * PI * weight(self.in_cr(p), self.in_c(p));
        }
        cuts.sort_by(f64::total_cmp);
        let first = cuts[0];
        cuts.push(first + 2.0 * PI);
        let mut s = 0.0;
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            let p = add(x, mul(polar(0.5 * (w[0] + w[1])), rho));
            s += len * weight(self.in_cr(p), self.in_c(p));
        }
        s
    }

    /// Radii where the arc structure around `x` changes.
    fn breaks(&self, x: P2) -> Vec<f64> {
        let mut b: Vec<f64> = self.corners.iter().map(|&c| geometry::dist(c, x)).collect();
        b.extend(self.lines.iter().map(|&(n, off)| (off - geometry::dot(n, x)).abs()));
        b
    }
}

/// `∫_{C_rᶜ} K(x−y)dy − ∫_C K(x−y)dy` for `x ∈ W_r`, with its error.
fn bracket(cfg: &CrossConfig, k: &Kernel, x: P2, r_max: f64) -> Estimate {
    let q = cfg.back(x);
    // distance to ∂W_r: the top/bottom edge or a diagonal
    let rho0 = (cfg.r - q[1].abs()).min((q[1].abs() - q[0].abs()) * std::f64::consts::FRAC_1_SQRT_2).max(1e-300);
    radial_with_breaks(cfg, k, x, rho0, r_max, &|in_cr, in_c| f64::from(!in_cr as u8) - f64::from(in_c as u8))
}

fn radial_with_breaks(cfg: &CrossConfig, k: &Kernel, x: P2, a: f64, b: f64, w: &dyn Fn(bool, bool) -> f64) -> Estimate {
    let mut br = vec![a];
    let mut r = a;
    while r * 1.5 < b {
        r *= 1.5;
        br.push(r);
    }
    br.extend(cfg.breaks(x).into_iter().chain(k.kinks()).filter(|&q| q > a && q < b));
    br.push(b);
    br.sort_by(f64::total_cmp);
    br.dedup();
    let tol = Tol { abs: 1e-12, rel: 1e-9, max_panels: 4000 };
    quad::adaptive(|rho| k.k0(rho) * rho * cfg.arc_sum(x, rho, w), &br, tol)
}

/// Integrate `f` over the quarter `{0 < x1 < x2 < r}` of `W_r` (cross
/// frame) with tanh-sinh in both directions; returns the integral and the
/// level-difference error.
fn quarter_integral<F: Fn(P2) -> Estimate + Sync>(r: f64, level: u32, f: F) -> (f64, f64) {
    let nodes = tanh_sinh_nodes(level);
    let coarse: Vec<bool> = (0..nodes.len()).map(|i| ((i + 1) / 2) % 2 == 0).collect();
    // x2 = r·t, x1 = x2·v; dx = r²·t dt dv
    let rows: Vec<(f64, f64, f64)> = nodes
        .par_iter()
        .enumerate()
        .map(|(i, nt)| {
            let x2 = r * nt.lo;
            let mut fine = 0.0;
            let mut crs = 0.0;
            let mut err = 0.0;
            for (j, nv) in nodes.iter().enumerate() {
                let x1 = x2 * nv.lo;
                let e = f([x1, x2]);
                let w = nt.w * nv.w * r * r * nt.lo;
                fine += w * e.value;
                err += w * e.error;
                if coarse[i] && coarse[j] {
                    crs += 4.0 * w * e.value;
                }
            }
            (fine, crs, err)
        })
        .collect();
    let fine: f64 = rows.iter().map(|r| r.0).sum();
    let crs: f64 = rows.iter().map(|r| r.1).sum();
    let inner: f64 = rows.iter().map(|r| r.2).sum();
    (fine, (fine - crs).abs() + inner)
}

/// Options for [`per_diff_cross`].
#[derive(Debug, Clone, Copy)]
pub struct DiffOptions {
    pub frame: Frame,
    /// Tanh-sinh level of the outer quadrature.
    pub level: u32,
    /// Radial truncation radius.
    pub r_max: f64,
}

impl Default for DiffOptions {
    fn default() -> Self {
        DiffOptions { frame: Frame::Cross, level: 3, r_max: 1e4 }
    }
}

/// Bound on the bracket beyond `r_max` for `|x| ≤ a`: outside the square
/// the circle sees `C_rᶜ` and `C` with measures `2π − m` and `m`, and `m`
/// differs from `π` only within `2 asin(d/ρ)` of each of the four crossing
/// directions of the two diagonals, `d ≤ a`.
fn far_bound(k: &Kernel, r_max: f64, a: f64) -> f64 {
    match quad::to_infinity(|q| k.k0(q), r_max, Tol::rel(1e-8)) {
        quad::Improper::Converged(e) => 8.0 * PI * a * e.value * (1.0 + 1e-6),
        _ => f64::INFINITY,
    }
}

/// `Per_K(C_r, B_R) − Per_K(C, B_R)` from the `W_r` identity, with the
/// bound `−2∫_{W_r}Ψ(|x2|)dx`.
pub fn per_diff_cross(k: &Kernel, r: f64, big_r: f64, opts: DiffOptions) -> Result<PerimeterDiffReport, PerimeterError> {
    if !(r > 0.0) || !(big_r > SQRT_2 * r) {
        return Err(PerimeterError::Parameter(format!("need r > 0 and R > √2 r, got r = {r}, R = {big_r}")));
    }
    let cfg = CrossConfig::new(r, opts.frame);
    let (q, err) = quarter_integral(r, opts.level.max(2), |p| bracket(&cfg, k, cfg.fwd(p), opts.r_max));
    let area = 2.0 * r * r;
    let trunc = area * far_bound(k, opts.r_max, SQRT_2 * r);
    let (bound, bound_error) = psi_bound(k, r);
    Ok(PerimeterDiffReport {
        r,
        big_r,
        diff: 4.0 * q,
        bound,
        quadrature_error: 4.0 * err + trunc,
        bound_error,
        region: "|x1| < |x2| < r".into(),
        frame: opts.frame,
    })
}

/// `−2∫_{W_r}Ψ(|x2|)dx = −8∫_0^r tΨ(t)dt`.
fn psi_bound(k: &Kernel, r: f64) -> (f64, f64) {
    if let Some(s) = k.fractional_s() {
        let v = -8.0 * psi(k, 1.0) * r.powf(2.0 - s) / (2.0 - s);
        return (v, 1e-10 * v.abs());
    }
    let mut br: Vec<f64> = (0..40).map(|i| r * 0.5f64.powi(i)).collect();
    br.push(0.0);
    br.extend(k.kinks().into_iter().flat_map(|q| [q / 1.75, q / 1.5, q / 2.0]).filter(|&q| q > 0.0 && q < r));
    br.sort_by(f64::total_cmp);
    br.dedup();
    let e = quad::adaptive(|t| t * psi(k, t), &br, Tol::rel(1e-9));
    (-8.0 * e.value, 8.0 * e.error)
}

/// `∫_{W_r}∫_{B_δ(x)∖W_r} K(x−y) dy dx`, which bounds the change of the
/// cross difference when `K` is cut off inside `B_δ`.
pub fn truncation_gap_bound(k: &Kernel, r: f64, delta: f64, level: u32) -> (f64, f64) {
    let cfg = CrossConfig::new(r, Frame::Cross);
    let (q, err) = quarter_integral(r, level, |p| {
        let rho0 = (r - p[1]).min((p[1] - p[0]) * std::f64::consts::FRAC_1_SQRT_2).max(1e-300);
        if rho0 >= delta {
            return Estimate::zero();
        }
        radial_with_breaks(&cfg, k, p, rho0, delta, &|in_cr, in_c| f64::from(!in_cr as u8) + f64::from(in_c as u8))
    });
    (4.0 * q, 4.0 * err)
}

/// `K·(1 − χ_{B_δ})`.
pub fn delta_regularize(k: &Kernel, delta: f64) -> Result<Kernel, KernelError> {
    let kd = make_kernel(&KernelSpec::Truncated { delta, base: Box::new(k.spec().clone()) })?;
    let support_left = tail_mass(&kd, delta).map(|m| m > 0.0).unwrap_or(true);
    if !support_left {
        log::warn!("truncation radius {delta} removes the whole kernel");
    }
    Ok(kd)
}

/// Result of scanning an `r`-grid for a certified negative difference.
#[derive(Debug, Clone, Serialize)]
pub struct WitnessReport {
    pub big_r: f64,
    /// `r` with the most negative `diff + bar`, if any is negative.
    pub best: Option<f64>,
    pub margin: f64,
    pub reports: Vec<PerimeterDiffReport>,
}

/// Scan `r_grid` for the most negative certified difference.
pub fn find_nonminimality_witness(k: &Kernel, big_r: f64, r_grid: &[f64]) -> Result<WitnessReport, PerimeterError> {
    let reports: Vec<PerimeterDiffReport> = r_grid
        .iter()
        .map(|&r| per_diff_cross(k, r, big_r, DiffOptions::default()))
        .collect::<Result<_, _>>()?;
    let mut best = None;
    let mut margin = f64::INFINITY;
    for rep in &reports {
        let m = rep.diff + rep.quadrature_error;
        if m < 0.0 && m < margin {
            margin = m;
            best = Some(rep.r);
        }
    }
    Ok(WitnessReport { big_r, best, margin: if best.is_some() { margin } else { 0.0 }, reports })
}

/// Options for [`per_local`].
#[derive(Debug, Clone, Copy)]
pub struct LocalOptions {
    /// Angular nodes of the outer periodic trapezoid rule.
    pub angles: usize,
    /// Tanh-sinh level of the radial pieces.
    pub level: u32,
    pub r_max: f64,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions { angles: 64, level: 4, r_max: 1e3 }
    }
}

/// `Per_K(E, B_R) = ∫_{E∩B_R}∫_{Eᶜ}K + ∫_{E∖B_R}∫_{B_R∖E}K`.
pub fn per_local(e: &PlanarSet, k: &Kernel, big_r: f64, opts: LocalOptions) -> Result<PerimeterEstimate, PerimeterError> {
    if !(big_r > 0.0) {
        return Err(PerimeterError::Parameter(format!("R = {big_r}")));
    }
    // far-field fraction of E on large circles
    let m_inf = match e.asymptote() {
        Asymptote::Bounded { .. } => 0.0,
        Asymptote::CoBounded { .. } => 2.0 * PI,
        Asymptote::Cone { measure, .. } => measure,
        Asymptote::Unknown => return Err(PerimeterError::Parameter("set without a far-field description".into())),
    };
    let tail = tail_mass(k, opts.r_max).map_err(|err| PerimeterError::Divergent(err.to_string()))?;
    let na = opts.angles.max(8);
    let nodes = tanh_sinh_nodes(opts.level);
    let tol = Tol { abs: 1e-12, rel: 1e-7, max_panels: 400 };
    let bound = match e.asymptote() {
        Asymptote::Bounded { radius } => Some(radius),
        _ => None,
    };
    let point_value = |x: P2| -> Estimate {
        let d = e.signed_distance(x);
        let rho0 = d.abs().max(1e-300);
        if d >= 0.0 {
            // ∫_{Eᶜ} K(x−y) dy
            let f = |rho: f64| 2.0 * PI - e.circle_measure(x, rho);
            if let Some(radius) = bound {
                // Eᶜ contains every circle beyond |x| + radius
                let reach = norm(x) + radius;
                let mid = radial(k, f, rho0, reach, tol);
                return match tail_mass(k, reach.max(rho0)) {
                    Ok(t) => Estimate { value: mid.value + t, error: mid.error },
                    Err(_) => Estimate { value: f64::NAN, error: f64::INFINITY },
                };
            }
            let mid = radial(k, f, rho0, opts.r_max, tol);
            let t = (2.0 * PI - m_inf) / (2.0 * PI) * tail;
            Estimate { value: mid.value + t, error: mid.error + tail }
        } else if bound.is_some_and(|radius| radius <= big_r) {
            // E ⊂ B_R
            Estimate::zero()
        } else {
            // ∫_{E∖B_R} K(x−y) dy
            let start = rho0.max(big_r - norm(x));
            let f = |rho: f64| {
                let iv = circle_intervals_of(
                    &|th: f64| {
                        let y = add(x, mul(polar(th), rho));
                        e.signed_distance(y).min(norm(y) - big_r)
                    },
                    rho,
                );
                iv.iter().map(|(a, b)| b - a).sum::<f64>()
            };
            let mid = radial(k, f, start, opts.r_max, tol);
            let t = m_inf / (2.0 * PI) * tail;
            Estimate { value: mid.value + t, error: mid.error + tail }
        }
    };
    let rows: Vec<(f64, f64, f64)> = (0..na)
        .into_par_iter()
        .map(|ia| {
            let th = 2.0 * PI * (ia as f64 + 0.5) / na as f64;
            let dir = polar(th);
            // crossings of ∂E along the ray split the radius
            let n_probe = 256;
            let mut cuts = vec![0.0];
            let sd = |t: f64| e.signed_distance(mul(dir, t));
            let mut prev = sd(0.0);
            for i in 1..=n_probe {
                let t = big_r * i as f64 / n_probe as f64;
                let cur = sd(t);
                if (prev >= 0.0) != (cur >= 0.0) {
                    let (mut lo, mut hi) = (big_r * (i - 1) as f64 / n_probe as f64, t);
                    for _ in 0..60 {
                        let m = 0.5 * (lo + hi);
                        if (sd(m) >= 0.0) == (prev >= 0.0) {
                            lo = m;
                        } else {
                            hi = m;
                        }
                    }
                    cuts.push(0.5 * (lo + hi));
                }
                prev = cur;
            }
            cuts.push(big_r);
            let mut fine = 0.0;
            let mut crs = 0.0;
            let mut inner = 0.0;
            for w in cuts.windows(2) {
                let len = w[1] - w[0];
                if len <= 0.0 {
                    continue;
                }
                for (j, n) in nodes.iter().enumerate() {
                    let t = w[0] + n.lo * len;
                    let v = point_value(mul(dir, t));
                    let wt = n.w * len * t;
                    fine += wt * v.value;
                    inner += wt * v.error;
                    if ((j + 1) / 2) % 2 == 0 {
                        crs += 2.0 * wt * v.value;
                    }
                }
            }
            (fine, crs, inner)
        })
        .collect();
    let dth = 2.0 * PI / na as f64;
    let fine: f64 = rows.iter().map(|r| r.0).sum::<f64>() * dth;
    let crs: f64 = rows.iter().map(|r| r.1).sum::<f64>() * dth;
    // odd-indexed angles alone form the half-resolution trapezoid rule
    let half: f64 = rows.iter().skip(1).step_by(2).map(|r| r.0).sum::<f64>() * 2.0 * dth;
    let inner: f64 = rows.iter().map(|r| r.2).sum::<f64>() * dth;
    let value = fine;
    let error = (fine - crs).abs() + (fine - half).abs() + inner;
    Ok(PerimeterEstimate { value, error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_shape, Primitive};

    fn frac(s: f64) -> Kernel {
        make_kernel(&KernelSpec::Fractional { s }).unwrap()
    }

    #[test]
    fn arc_sum_counts_full_circle() {
        let cfg = CrossConfig::new(0.5, Frame::Cross);
        for (x, rho) in [([0.1, 0.3], 0.05), ([0.1, 0.3], 0.7), ([0.0, 0.45], 3.0)] {
            let total = cfg.arc_sum(x, rho, &|_, _| 1.0);
            assert!((total - 2.0 * PI).abs() < 1e-12);
            let in_c = cfg.arc_sum(x, rho, &|_, c| f64::from(c as u8));
            let in_cr = cfg.arc_sum(x, rho, &|cr, _| f64::from(cr as u8));
            let cross = make_shape(&Primitive::Cross).unwrap();
            let pc = make_shape(&Primitive::PerturbedCross { r: 0.5 }).unwrap();
            assert!((in_c - cross.circle_measure(x, rho)).abs() < 1e-9);
            assert!((in_cr - pc.circle_measure(x, rho)).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_difference_is_negative_and_below_bound() {
        let k = frac(0.5);
        let rep = per_diff_cross(&k, 0.5, 2.0, DiffOptions::default()).unwrap();
        assert!(rep.certified_negative(), "{rep:?}");
        assert!(rep.bound_holds(), "{rep:?}");
        assert!(rep.quadrature_error < 1e-2 * rep.diff.abs(), "{rep:?}");
    }

    #[test]
    fn frames_agree() {
        let k = frac(0.5);
        let a = per_diff_cross(&k, 0.25, 2.0, DiffOptions::default()).unwrap();
        let b = per_diff_cross(&k, 0.25, 2.0, DiffOptions { frame: Frame::Rotated, ..Default::default() }).unwrap();
        assert!((a.diff - b.diff).abs() <= a.quadrature_error + b.quadrature_error);
    }

    #[test]
    fn fractional_difference_scales() {
        // W_r and both sets are cones or squares: diff(λr) = λ^{2−s} diff(r)
        let k = frac(0.5);
        let a = per_diff_cross(&k, 0.25, 2.0, DiffOptions::default()).unwrap();
        let b = per_diff_cross(&k, 0.5, 2.0, DiffOptions::default()).unwrap();
        let pred = a.diff * 2f64.powf(1.5);
        assert!((b.diff - pred).abs() <= b.quadrature_error + 2.0 * 2f64.powf(1.5) * a.quadrature_error);
    }

    #[test]
    fn precondition_checked() {
        let k = frac(0.5);
        assert!(per_diff_cross(&k, 1.0, 1.2, DiffOptions::default()).is_err());
    }

    #[test]
    fn zero_kernel_has_no_witness() {
        let z = make_kernel(&KernelSpec::Table { rho: vec![1.0, 2.0], k0: vec![0.0, 0.0], interp: crate::kernel::Interp::Linear })
            .unwrap();
        let w = find_nonminimality_witness(&z, 2.0, &[0.25, 0.5]).unwrap();
        assert!(w.best.is_none());
        assert!(w.reports.iter().all(|r| r.diff == 0.0));
    }

    #[test]
    fn full_plane_has_zero_perimeter() {
        let b = make_shape(&Primitive::Ball { center: [0.0, 0.0], radius: 1.0 }).unwrap();
        let full = b.clone().union(b.complement());
        let k = frac(0.5);
        let p = per_local(&full, &k, 1.5, LocalOptions { angles: 8, level: 2, ..Default::default() }).unwrap();
        assert!(p.value.abs() < 1e-9, "{p:?}");
    }
}
