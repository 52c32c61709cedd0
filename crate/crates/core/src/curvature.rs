//! K-curvature of analytic sets by principal value, and of grid
//! superlevel sets by cell weights.
//!
//! For a boundary point `x` the PV integral is reduced to one radial
//! integral `H = ∫_0^∞ K0(ρ) ρ g(ρ) dρ`, where `g(ρ) = 2π − 2·m(ρ)` and
//! `m(ρ)` is the angular measure of `∂B_ρ(x)` inside the set. The near field
//! `ρ < eps_pv` uses the osculating line or circle (exact when the boundary
//! is a single line or circle there), the mid field uses adaptive
//! Gauss–Kronrod panels on a geometric grid, and the tail uses the set's
//! far-field description.

use crate::flow::{AsymptoticModel, GridField};
use crate::geometry::{self, add, dist, mul, polar, Asymptote, PlanarSet, Regularity, P2};
use crate::kernel::{tail_mass, Kernel};
use crate::quad::{self, Estimate, Improper, Tol};
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureEstimate {
    pub value: f64,
    pub near_field_bound: f64,
    pub mid_field_error: f64,
    pub tail_bound: f64,
    pub eps_pv: f64,
    /// Tolerance was not reached within the panel budget.
    pub warning: bool,
}

impl CurvatureEstimate {
    /// Total certified error.
    pub fn bar(&self) -> f64 {
        self.near_field_bound + self.mid_field_error + self.tail_bound
    }

    fn exact(value: f64) -> CurvatureEstimate {
        CurvatureEstimate { value, near_field_bound: 0.0, mid_field_error: 0.0, tail_bound: 0.0, eps_pv: 0.0, warning: false }
    }
}

/// Declared exact symmetry at a non-smooth point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    /// Rotation about the point by `angle` maps the set onto its complement,
    /// so the PV vanishes.
    RotationToComplement { angle: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct PvOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Overrides the default excision radius.
    pub eps_pv: Option<f64>,
    pub symmetry: Option<Symmetry>,
    /// Truncation radius for unbounded sets (default `1e4`).
    pub r_max: Option<f64>,
}

impl Default for PvOptions {
    fn default() -> Self {
        PvOptions { rel_tol: 1e-8, abs_tol: 1e-9, eps_pv: None, symmetry: None, r_max: None }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CurvatureError {
    #[error("point is {0:e} away from the boundary")]
    NotOnBoundary(f64),
    #[error("angular point at {0:?} without a symmetry assertion")]
    Angular(P2),
    #[error("declared symmetry does not hold at {0:?}")]
    SymmetryFails(P2),
    #[error("grid node ({0}, {1}) too close to the window edge")]
    GridEdge(usize, usize),
    #[error("vanishing gradient at grid node ({0}, {1})")]
    FlatNode(usize, usize),
}

/// `∫_a^b K0(ρ) ρ f(ρ) dρ` over geometric panels.
pub(crate) fn radial<F: FnMut(f64) -> f64>(k: &Kernel, mut f: F, a: f64, b: f64, tol: Tol) -> Estimate {
    if b <= a {
        return Estimate::zero();
    }
    let mut br = vec![a];
    let mut r = a;
    while r * 1.5 < b {
        r *= 1.5;
        br.push(r);
    }
    br.extend(k.kinks().into_iter().filter(|&q| q > a && q < b));
    br.push(b);
    br.sort_by(f64::total_cmp);
    br.dedup();
    quad::adaptive(|rho| k.k0(rho) * rho * f(rho), &br, tol)
}

/// Contribution of `ρ > r` when the set beyond `B_r(x)` is described by its
/// far field: returns (value, bound).
pub(crate) fn far_tail(k: &Kernel, x: P2, asym: &Asymptote, r: f64) -> Option<(f64, f64, f64)> {
    match asym {
        Asymptote::Bounded { radius } => {
            let r0 = r.max(geometry::norm(x) + radius);
            Some((r0, tail_mass(k, r0).ok()?, 0.0))
        }
        Asymptote::CoBounded { radius } => {
            let r0 = r.max(geometry::norm(x) + radius);
            Some((r0, -tail_mass(k, r0).ok()?, 0.0))
        }
        Asymptote::Cone { rays, measure, core } => {
            let mut r0 = r.max(geometry::norm(x) + core);
            let mut dsum = 0.0;
            for (o, d) in rays {
                r0 = r0.max(dist(x, *o));
                let v = geometry::sub(x, *o);
                dsum += (v[0] * d[1] - v[1] * d[0]).abs();
            }
            let r0 = r0 * 1.0000001;
            let g_inf = 2.0 * PI - 2.0 * measure;
            let m0 = tail_mass(k, r0).ok()?;
            // ∫_r0^∞ K0 dρ bounds the deviation of g from g_inf
            let k0_tail = match quad::to_infinity(|q| k.k0(q), r0, Tol::rel(1e-6)) {
                Improper::Converged(e) => e.value,
                _ => return None,
            };
            Some((r0, g_inf / (2.0 * PI) * m0, PI * dsum * k0_tail))
        }
        Asymptote::Unknown => None,
    }
}

/// Principal-value K-curvature of `e` at the boundary point `x`.
pub fn curvature_pv(e: &PlanarSet, x: P2, k: &Kernel, opts: &PvOptions) -> Result<CurvatureEstimate, CurvatureError> {
    let d = e.signed_distance(x);
    let scale = 1.0 + geometry::norm(x);
    if d.abs() > 1e-9 * scale {
        return Err(CurvatureError::NotOnBoundary(d));
    }
    let probe = e.local(x, 0.0);
    let cd = probe.corner_distance();
    if cd <= 1e-9 * scale {
        return match opts.symmetry {
            Some(Symmetry::RotationToComplement { angle }) => {
                if check_rotation_symmetry(e, x, angle) {
                    Ok(CurvatureEstimate::exact(0.0))
                } else {
                    Err(CurvatureError::SymmetryFails(x))
                }
            }
            None => Err(CurvatureError::Angular(x)),
        };
    }
    let feature = cd.min(if probe.kappa_bound > 0.0 { 1.0 / probe.kappa_bound } else { f64::INFINITY }).min(1.0);
    let mut eps = opts.eps_pv.unwrap_or((1e-3 * feature).min(cd / 16.0));
    let mut loc = e.local(x, eps);
    if opts.eps_pv.is_none() && !loc.uniform {
        eps = (eps * 1e-3).max(1e-6 * feature);
        loc = e.local(x, eps);
    }
    let kappa = loc.kappa;
    // osculating model: g = ±4 asin(ρ|κ|/2)
    let model = |rho: f64| {
        let z = (0.5 * rho * kappa.abs()).min(1.0);
        4.0 * z.asin() * kappa.signum()
    };
    let near = match quad::near_zero(|rho| k.k0(rho) * rho * model(rho), eps, Tol::rel(1e-12)) {
        Improper::Converged(v) => v,
        _ => Estimate::zero(),
    };
    let near_bound = if loc.uniform {
        near.error
    } else {
        2.02 * (loc.kappa_bound + kappa.abs()) * k.near_moment(eps) + near.error
    };
    let g = |rho: f64| 2.0 * PI - 2.0 * e.circle_measure(x, rho);
    let asym = e.asymptote();
    let r_far = match asym {
        Asymptote::Bounded { radius } | Asymptote::CoBounded { radius } => geometry::norm(x) + radius,
        _ => opts.r_max.unwrap_or(1e4),
    };
    let tol = Tol { abs: opts.abs_tol, rel: opts.rel_tol, max_panels: 20_000 };
    let (r_end, tail_v, tail_b) = match far_tail(k, x, &asym, r_far) {
        Some(t) => t,
        None => {
            // unknown far field: |g| ≤ 2π beyond r_far
            let m = tail_mass(k, r_far).unwrap_or(f64::INFINITY);
            (r_far, 0.0, m)
        }
    };
    let mid = radial(k, g, eps, r_end, tol);
    let warning = mid.error > tol.abs.max(tol.rel * mid.value.abs()) * 10.0;
    Ok(CurvatureEstimate {
        value: near.value + mid.value + tail_v,
        near_field_bound: near_bound,
        mid_field_error: mid.error,
        tail_bound: tail_b,
        eps_pv: eps,
        warning,
    })
}

fn check_rotation_symmetry(e: &PlanarSet, x: P2, angle: f64) -> bool {
    let (s, c) = angle.sin_cos();
    for i in 1..=24 {
        for j in 0..16 {
            let rho = 0.05 * i as f64 * (1.0 + 0.37 * j as f64);
            let th = 0.41 + 2.0 * PI * j as f64 / 16.0 + 0.1 * i as f64;
            let v = mul(polar(th), rho);
            let y = add(x, v);
            let ry = add(x, [c * v[0] - s * v[1], s * v[0] + c * v[1]]);
            if (e.signed_distance(ry) + e.signed_distance(y)).abs() > 1e-12 * (1.0 + rho) {
                return false;
            }
        }
    }
    true
}

/// One entry of [`curvature_profile`].
#[derive(Debug, Clone, Serialize)]
pub struct ProfileEntry {
    pub arclength: f64,
    pub point: P2,
    pub normal: P2,
    pub regularity: Regularity,
    pub estimate: Option<CurvatureEstimate>,
    pub skipped: Option<String>,
}

/// Curvature at each sample; angular samples are skipped with a reason.
pub fn curvature_profile(
    e: &PlanarSet,
    k: &Kernel,
    samples: &[geometry::BoundarySample],
    opts: &PvOptions,
) -> Vec<ProfileEntry> {
    use rayon::prelude::*;
    let mut arc = Vec::with_capacity(samples.len());
    let mut acc = 0.0;
    for (i, s) in samples.iter().enumerate() {
        if i > 0 {
            acc += dist(samples[i - 1].point, s.point);
        }
        arc.push(acc);
    }
    samples
        .par_iter()
        .zip(arc.par_iter())
        .map(|(s, &al)| {
            let (estimate, skipped) = if s.regularity == Regularity::Angular && opts.symmetry.is_none() {
                (None, Some("angular point".to_string()))
            } else {
                match curvature_pv(e, s.point, k, opts) {
                    Ok(v) => (Some(v), None),
                    Err(err) => (None, Some(err.to_string())),
                }
            };
            ProfileEntry { arclength: al, point: s.point, normal: s.outward_normal, regularity: s.regularity, estimate, skipped }
        })
        .collect()
}

/// CSV with columns `arclength,x,y,value,bar,regularity`.
pub fn profile_csv(entries: &[ProfileEntry]) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["arclength", "x", "y", "value", "bar", "regularity"]).unwrap();
    for e in entries {
        let (v, b) = e.estimate.map(|c| (c.value, c.bar())).unwrap_or((f64::NAN, f64::NAN));
        w.write_record([
            format!("{:.12e}", e.arclength),
            format!("{:.12e}", e.point[0]),
            format!("{:.12e}", e.point[1]),
            format!("{v:.12e}"),
            format!("{b:.12e}"),
            format!("{:?}", e.regularity),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Fraction of a cell with half-extents `(ax, ay)` (in units of `u`
/// slope times length) where `v + L ≥ 0`, `L` linear with range
/// `[-(ax+ay), ax+ay]`; returns the fraction and its derivative in `v`.
#[inline]
pub fn coverage(v: f64, ax: f64, ay: f64) -> (f64, f64) {
    let (a, b) = if ax >= ay { (ax, ay) } else { (ay, ax) };
    if a <= 1e-300 {
        return (if v > 0.0 { 1.0 } else if v < 0.0 { 0.0 } else { 0.5 }, 0.0);
    }
    let t = v.abs();
    let (f, dens) = if t >= a + b {
        (1.0, 0.0)
    } else if t <= a - b {
        (0.5 + t / (2.0 * a), 1.0 / (2.0 * a))
    } else {
        let q = a + b - t;
        (1.0 - q * q / (8.0 * a * b), q / (4.0 * a * b))
    };
    if v >= 0.0 {
        (f, dens)
    } else {
        (1.0 - f, dens)
    }
}

/// Sub-cells per axis in the cells next to the evaluation node.
pub const SUB: usize = 4;
/// Offsets with `|d|∞ ≤ NEAR_SUB` use sub-cell weights.
pub const NEAR_SUB: i64 = 2;

/// Kernel mass of every grid cell offset, for one `(kernel, h)`.
#[derive(Debug, Clone)]
pub struct CellWeights {
    pub h: f64,
    /// Largest tabulated `|d|∞`.
    pub reach: usize,
    w: Vec<f64>,
    sub: Vec<[f64; SUB * SUB]>,
    /// `m2(r) = ∫_0^r ρ² K0` on a table over `r ∈ [h/2, h/√2]`.
    m2_lo: f64,
    m2_hi: f64,
    m2_tab: Vec<f64>,
}

impl CellWeights {
    pub fn new(k: &Kernel, h: f64, reach: usize) -> CellWeights {
        use rayon::prelude::*;
        let n = reach + 1;
        let g4 = quad::gauss_legendre(4);
        let g8 = quad::gauss_legendre(8);
        let cell = |dx: usize, dy: usize| -> f64 {
            if dx == 0 && dy == 0 {
                return 0.0;
            }
            let (x0, x1) = ((dx as f64 - 0.5) * h, (dx as f64 + 0.5) * h);
            let (y0, y1) = ((dy as f64 - 0.5) * h, (dy as f64 + 0.5) * h);
            let mut f = |x: f64, y: f64| k.k0(x.hypot(y));
            if dx.max(dy) <= 3 {
                let tol = 1e-13 * h * h * k.k0(0.5 * h);
                quad::rect_adaptive(&mut f, x0, x1, y0, y1, tol, 12).value
            } else if dx.max(dy) <= 12 {
                quad::rect_gl(&mut f, x0, x1, y0, y1, &g8)
            } else {
                quad::rect_gl(&mut f, x0, x1, y0, y1, &g4)
            }
        };
        let w: Vec<f64> = (0..n * n).into_par_iter().map(|i| cell(i % n, i / n)).collect();
        let ns = (2 * NEAR_SUB + 1) as usize;
        let hs = h / SUB as f64;
        let sub: Vec<[f64; SUB * SUB]> = (0..ns * ns)
            .into_par_iter()
            .map(|c| {
                let dx = (c % ns) as i64 - NEAR_SUB;
                let dy = (c / ns) as i64 - NEAR_SUB;
                let mut out = [0.0; SUB * SUB];
                if dx == 0 && dy == 0 {
                    return out;
                }
                for sy in 0..SUB {
                    for sx in 0..SUB {
                        let x0 = (dx as f64 - 0.5) * h + sx as f64 * hs;
                        let y0 = (dy as f64 - 0.5) * h + sy as f64 * hs;
                        let mut f = |x: f64, y: f64| k.k0(x.hypot(y));
                        let tol = 1e-13 * h * h * k.k0(0.5 * h);
                        out[sy * SUB + sx] = quad::rect_adaptive(&mut f, x0, x0 + hs, y0, y0 + hs, tol, 14).value;
                    }
                }
                out
            })
            .collect();
        let m2_lo = 0.5 * h;
        let m2_hi = h * std::f64::consts::FRAC_1_SQRT_2;
        let base = k.near_moment(m2_lo);
        let m2_tab: Vec<f64> = (0..=64)
            .map(|i| {
                let r = m2_lo + (m2_hi - m2_lo) * i as f64 / 64.0;
                base + quad::integrate(|q| q * q * k.k0(q), m2_lo, r, Tol::rel(1e-12)).value
            })
            .collect();
        CellWeights { h, reach, w, sub, m2_lo, m2_hi, m2_tab }
    }

    /// Mass of the cell at offset `(dx, dy)`; zero for the center cell.
    #[inline]
    pub fn w(&self, dx: i64, dy: i64) -> f64 {
        let (ax, ay) = (dx.unsigned_abs() as usize, dy.unsigned_abs() as usize);
        if ax > self.reach || ay > self.reach {
            return 0.0;
        }
        self.w[ay * (self.reach + 1) + ax]
    }

    /// Sub-cell masses of a near cell, row-major from the lower left.
    #[inline]
    pub fn sub(&self, dx: i64, dy: i64) -> &[f64; SUB * SUB] {
        let ns = 2 * NEAR_SUB + 1;
        &self.sub[((dy + NEAR_SUB) * ns + dx + NEAR_SUB) as usize]
    }

    /// `∫_0^r ρ² K0` for `r ∈ [h/2, h/√2]`.
    pub fn m2(&self, r: f64) -> f64 {
        let t = ((r - self.m2_lo) / (self.m2_hi - self.m2_lo)).clamp(0.0, 1.0) * 64.0;
        let i = (t.floor() as usize).min(63);
        let f = t - i as f64;
        self.m2_tab[i] * (1.0 - f) + self.m2_tab[i + 1] * f
    }

    /// Sum of the tabulated masses over `0 < |d|∞ ≤ reach`.
    pub fn total(&self) -> f64 {
        let n = self.reach as i64;
        let mut s = 0.0;
        for dy in -n..=n {
            for dx in -n..=n {
                s += self.w(dx, dy);
            }
        }
        s
    }
}

/// Kernel mass outside the centered square of half-width `a`.
pub fn mass_outside_square(k: &Kernel, a: f64) -> f64 {
    let r2 = a * std::f64::consts::SQRT_2;
    let ring = quad::adaptive(|rho| k.k0(rho) * rho * 8.0 * (a / rho).min(1.0).acos(), &[a, 0.5 * (a + r2), r2], Tol::rel(1e-12));
    ring.value + tail_mass(k, r2).unwrap_or(f64::INFINITY)
}

/// Per-node correction for the kernel mass outside the grid window, where
/// the set is replaced by the field's asymptotic model. Values are computed
/// lazily on a lattice of stride [`TailTable::STRIDE`] and interpolated.
#[derive(Debug)]
pub struct TailTable {
    nx: usize,
    ny: usize,
    cells: Vec<OnceLock<f64>>,
}

impl TailTable {
    pub const STRIDE: usize = 4;

    pub fn new(nx: usize, ny: usize) -> TailTable {
        let lx = nx / Self::STRIDE + 2;
        let ly = ny / Self::STRIDE + 2;
        TailTable { nx, ny, cells: (0..lx * ly).map(|_| OnceLock::new()).collect() }
    }

    fn lattice(&self, u: &GridField, k: &Kernel, li: usize, lj: usize) -> f64 {
        let lx = self.nx / Self::STRIDE + 2;
        *self.cells[lj * lx + li].get_or_init(|| {
            let i = (li * Self::STRIDE).min(self.nx - 1);
            let j = (lj * Self::STRIDE).min(self.ny - 1);
            outside_window(u, k, u.pos(i, j))
        })
    }

    /// Bilinear interpolation of the lattice values at node `(i, j)`.
    pub fn at(&self, u: &GridField, k: &Kernel, i: usize, j: usize) -> f64 {
        let s = Self::STRIDE;
        let (li, lj) = (i / s, j / s);
        let fx = (i % s) as f64 / s as f64;
        let fy = (j % s) as f64 / s as f64;
        let v00 = self.lattice(u, k, li, lj);
        if fx == 0.0 && fy == 0.0 {
            return v00;
        }
        let v10 = self.lattice(u, k, li + 1, lj);
        let v01 = self.lattice(u, k, li, lj + 1);
        let v11 = self.lattice(u, k, li + 1, lj + 1);
        v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
    }
}

/// Angle intervals in `[0, 2π)` of `∂B_ρ(x)` outside the rectangle.
pub fn arcs_outside_rect(x: P2, rho: f64, w: &geometry::Window) -> Vec<(f64, f64)> {
    let mut cuts = vec![0.0, 2.0 * PI];
    for (c, axis) in [(w.x0, 0), (w.x1, 0), (w.y0, 1), (w.y1, 1)] {
        let q = (c - x[axis]) / rho;
        if q.abs() < 1.0 {
            let a = q.acos();
            // x-lines: θ = ±a; y-lines: θ = π/2 ∓ (π/2 − asin q)
            let (t1, t2) = if axis == 0 { (a, -a) } else { (PI / 2.0 - a, PI / 2.0 + a) };
            cuts.push(t1.rem_euclid(2.0 * PI));
            cuts.push(t2.rem_euclid(2.0 * PI));
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, f64)> = vec![];
    for c in cuts.windows(2) {
        if c[1] - c[0] <= 0.0 {
            continue;
        }
        let p = add(x, mul(polar(0.5 * (c[0] + c[1])), rho));
        if !w.contains(p) {
            match out.last_mut() {
                Some(l) if l.1 == c[0] => l.1 = c[1],
                _ => out.push((c[0], c[1])),
            }
        }
    }
    out
}

fn overlap(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += (x.1.min(y.1) - x.0.max(y.0)).max(0.0);
        }
    }
    s
}

/// `∫_{outside window} K(y − x)(χ_c − χ_model)(y) dy`.
pub fn outside_window(u: &GridField, k: &Kernel, x: P2) -> f64 {
    let win = u.window();
    let lo = (x[0] - win.x0).min(win.x1 - x[0]).min(x[1] - win.y0).min(win.y1 - x[1]).max(1e-12);
    let corners = [[win.x0, win.y0], [win.x1, win.y0], [win.x0, win.y1], [win.x1, win.y1]];
    let hi = corners.iter().map(|c| dist(*c, x)).fold(0.0, f64::max) * 1.0000001;
    let tol = Tol { abs: 1e-10, rel: 1e-8, max_panels: 4000 };
    let out_len = |rho: f64| arcs_outside_rect(x, rho, &win).iter().map(|(a, b)| b - a).sum::<f64>();
    match &u.model {
        AsymptoticModel::Vanishing | AsymptoticModel::Full => {
            let sgn = if matches!(u.model, AsymptoticModel::Vanishing) { 1.0 } else { -1.0 };
            let mut br = vec![lo];
            for c in [x[0] - win.x0, win.x1 - x[0], x[1] - win.y0, win.y1 - x[1]] {
                br.push(c);
            }
            for c in corners {
                br.push(dist(c, x));
            }
            br.retain(|&r| r >= lo && r <= hi);
            br.push(hi);
            br.sort_by(f64::total_cmp);
            br.dedup();
            let mut mid = 0.0;
            for p in br.windows(2) {
                mid += radial(k, out_len, p[0], p[1], tol).value;
            }
            sgn * (mid + tail_mass(k, hi).unwrap_or(0.0))
        }
        AsymptoticModel::Shape(set) => {
            let asym = set.asymptote();
            // outside a window that contains the core, the boundary is the rays
            let rays = match &asym {
                Asymptote::Cone { rays, core, .. }
                    if win.x0 < -core && win.x1 > *core && win.y0 < -core && win.y1 > *core =>
                {
                    Some(rays.clone())
                }
                _ => None,
            };
            let f = |rho: f64| {
                let out = arcs_outside_rect(x, rho, &win);
                let a: f64 = out.iter().map(|(a, b)| b - a).sum();
                let inside = match &rays {
                    Some(r) => arcs_inside_cone(x, rho, &out, r, set),
                    None => overlap(&out, &set.circle_intervals(x, rho)),
                };
                a - 2.0 * inside
            };
            let (r_end, tail_v, _) = far_tail(k, x, &asym, hi).unwrap_or((hi, 0.0, 0.0));
            let mid = radial(k, f, lo, r_end, tol).value;
            mid + tail_v
        }
    }
}

/// Measure of the arcs in `out` inside `set`, when `∂set` meets those arcs
/// only along `rays`.
fn arcs_inside_cone(x: P2, rho: f64, out: &[(f64, f64)], rays: &[(P2, P2)], set: &PlanarSet) -> f64 {
    let mut cuts: Vec<f64> = vec![];
    for &(o, d) in rays {
        let v = geometry::sub(o, x);
        let b = geometry::dot(d, v);
        let c = geometry::dot(v, v) - rho * rho;
        let disc = b * b - c;
        if disc <= 0.0 {
            continue;
        }
        for t in [-b - disc.sqrt(), -b + disc.sqrt()] {
            if t >= 0.0 {
                let y = geometry::sub(add(o, mul(d, t)), x);
                cuts.push(y[1].atan2(y[0]).rem_euclid(2.0 * PI));
            }
        }
    }
    let mut total = 0.0;
    for &(a, b) in out {
        let mut pts = vec![a];
        pts.extend(cuts.iter().copied().filter(|&c| c > a && c < b));
        pts.push(b);
        pts.sort_by(f64::total_cmp);
        for w in pts.windows(2) {
            let y = add(x, mul(polar(0.5 * (w[0] + w[1])), rho));
            if set.signed_distance(y) >= 0.0 {
                total += w[1] - w[0];
            }
        }
    }
    total
}

/// Curvature of `{u ≥ u(node)}` at a grid node by the full-window cell sum.
pub fn grid_curvature(
    u: &GridField,
    i: usize,
    j: usize,
    k: &Kernel,
    weights: &CellWeights,
    tail: &TailTable,
) -> Result<f64, CurvatureError> {
    if i < 2 || j < 2 || i + 2 >= u.nx || j + 2 >= u.ny {
        return Err(CurvatureError::GridEdge(i, j));
    }
    let geo = u.node_geometry(i, j);
    if geo.grad_norm <= 1e-12 {
        return Err(CurvatureError::FlatNode(i, j));
    }
    let ui = u.at(i, j);
    let mut sum = 0.0;
    for jj in 0..u.ny {
        for ii in 0..u.nx {
            let dx = ii as i64 - i as i64;
            let dy = jj as i64 - j as i64;
            if dx == 0 && dy == 0 {
                continue;
            }
            sum += u.cell_sigma(ii, jj, ui, dx, dy, weights);
        }
    }
    Ok(sum + center_term(&geo, weights) + tail.at(u, k, i, j))
}

/// Local data at a node used by the cell sums.
#[derive(Debug, Clone, Copy)]
pub struct NodeGeometry {
    pub grad: P2,
    pub grad_norm: f64,
    pub kappa: f64,
}

/// PV of the excised center cell for a boundary of curvature `κ` through
/// the node: `2κ m2(r)`, with `r` the half-extent of the cell along the
/// tangent.
#[inline]
pub fn center_term(geo: &NodeGeometry, weights: &CellWeights) -> f64 {
    let n = [geo.grad[0] / geo.grad_norm, geo.grad[1] / geo.grad_norm];
    let r = 0.5 * weights.h / n[0].abs().max(n[1].abs());
    2.0 * geo.kappa * weights.m2(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_shape, Primitive};
    use crate::kernel::{ball_curvature, make_kernel, psi, KernelSpec};

    fn frac(s: f64) -> Kernel {
        make_kernel(&KernelSpec::Fractional { s }).unwrap()
    }

    #[test]
    fn coverage_limits() {
        assert_eq!(coverage(0.0, 1.0, 0.5).0, 0.5);
        assert_eq!(coverage(2.0, 1.0, 0.5).0, 1.0);
        assert_eq!(coverage(-2.0, 1.0, 0.5).0, 0.0);
        for v in [-1.2, -0.7, -0.2, 0.3, 0.9, 1.4] {
            let (c, dc) = coverage(v, 1.0, 0.5);
            let (c2, _) = coverage(-v, 1.0, 0.5);
            assert!((c + c2 - 1.0).abs() < 1e-15);
            let (cp, _) = coverage(v + 1e-6, 1.0, 0.5);
            let (cm, _) = coverage(v - 1e-6, 1.0, 0.5);
            assert!(((cp - cm) / 2e-6 - dc).abs() < 1e-6);
        }
    }

    #[test]
    fn ball_pv_matches_radial_formula() {
        let k = frac(0.5);
        let b = make_shape(&Primitive::Ball { center: [0.0, 0.0], radius: 1.0 }).unwrap();
        let c = curvature_pv(&b, [1.0, 0.0], &k, &PvOptions::default()).unwrap();
        let c1 = ball_curvature(&k, 1.0);
        assert!((c.value - c1).abs() <= c.bar() + 1e-7 * c1, "{c:?} {c1}");
        assert!(c.bar() < 1e-5 * c1);
    }

    #[test]
    fn halfplane_and_cross_vanish() {
        let k = frac(0.5);
        let h = make_shape(&Primitive::Halfplane { normal: [0.3, 1.0], offset: 0.2 }).unwrap();
        let n = crate::geometry::unit([0.3, 1.0]);
        let x = mul(n, 0.2 / (0.09f64 + 1.0).sqrt());
        let c = curvature_pv(&h, x, &k, &PvOptions::default()).unwrap();
        assert!(c.value.abs() <= c.bar() + 1e-9, "{c:?}");
        let cr = make_shape(&Primitive::Cross).unwrap();
        let c = curvature_pv(&cr, [2.0, 2.0], &k, &PvOptions::default()).unwrap();
        assert!(c.value.abs() <= c.bar() + 1e-9, "{c:?}");
        assert!(c.bar() < 1e-3 * 2.0 * psi(&k, 1.0));
    }

    #[test]
    fn angular_points_need_symmetry() {
        let k = frac(0.5);
        let cr = make_shape(&Primitive::Cross).unwrap();
        assert!(matches!(curvature_pv(&cr, [0.0, 0.0], &k, &PvOptions::default()), Err(CurvatureError::Angular(_))));
        let opts = PvOptions { symmetry: Some(Symmetry::RotationToComplement { angle: 0.5 * PI }), ..Default::default() };
        assert_eq!(curvature_pv(&cr, [0.0, 0.0], &k, &opts).unwrap().value, 0.0);
        let o = make_shape(&Primitive::TangentBalls).unwrap();
        assert!(matches!(curvature_pv(&o, [0.0, 0.0], &k, &opts), Err(CurvatureError::SymmetryFails(_))));
    }

    #[test]
    fn perturbed_cross_top_edge() {
        let k = frac(0.5);
        let r = 0.5;
        let c = make_shape(&Primitive::PerturbedCross { r }).unwrap();
        let v = curvature_pv(&c, [0.0, r], &k, &PvOptions::default()).unwrap();
        assert!(v.value <= -2.0 * psi(&k, r) + v.bar(), "{v:?}");
    }

    #[test]
    fn cell_weights_reproduce_mass() {
        let k = frac(0.5);
        let h = 0.05;
        let cw = CellWeights::new(&k, h, 20);
        let expect = mass_outside_square(&k, 0.5 * h) - mass_outside_square(&k, 20.5 * h);
        assert!((cw.total() / expect - 1.0).abs() < 1e-8, "{} {}", cw.total(), expect);
        for (dx, dy) in [(1, 0), (-2, 1), (0, -2)] {
            let s: f64 = cw.sub(dx, dy).iter().sum();
            assert!((s / cw.w(dx, dy) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cone_arcs_match_certified_intervals() {
        let win = geometry::Window::square(0.8);
        for shape in [Primitive::Cross, Primitive::RotatedCross] {
            let set = make_shape(&shape).unwrap().dilate(0.05).unwrap();
            let Asymptote::Cone { rays, .. } = set.asymptote() else { panic!() };
            for (x, rho) in [([0.3, 0.31], 0.6), ([0.7, -0.1], 1.3), ([0.0, 0.05], 2.5), ([-0.6, 0.6], 0.25)] {
                let out = arcs_outside_rect(x, rho, &win);
                let a = arcs_inside_cone(x, rho, &out, &rays, &set);
                let b = overlap(&out, &set.circle_intervals(x, rho));
                assert!((a - b).abs() < 1e-9, "{a} {b}");
            }
        }
    }
}
