//! Post-processing of ladder traces and numerical checks of the barrier
//! inequalities and curvature bounds behind the fattening results.
//!
//! Verdicts are computed from the gap between the outer and inner ladder
//! members, extrapolated to zero threshold. Barrier checks sample a moving
//! family at a few times, compare the family's analytic normal velocity
//! with the PV curvature of the current set, and count the samples that
//! satisfy the inequality within the quadrature bars.

use crate::curvature::{curvature_pv, CurvatureError, PvOptions};
use crate::flow::{FlowTrace, GridField};
use crate::geometry::{make_shape, norm, GeometryError, PlanarSet, Primitive, Regularity, Window, P2};
use crate::kernel::{self, Kernel, KernelError};
use crate::quad::{self, Tol};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("unknown barrier family {0:?}")]
    UnknownFamily(String),
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Least squares `y ≈ a + b x`, returned as `(a, b)`.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}

// ---------------------------------------------------------------------------
// Fattening
// ---------------------------------------------------------------------------

/// Cells of `{outer ≥ 0} ∖ {inner ≥ 0}` on the ladder grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GapMask {
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<bool>,
}

impl GapMask {
    pub fn new(outer: &GridField, inner: &GridField) -> GapMask {
        let cells = outer.u.iter().zip(&inner.u).map(|(&a, &b)| a >= 0.0 && b < 0.0).collect();
        GapMask { x0: outer.x0, y0: outer.y0, h: outer.h, nx: outer.nx, ny: outer.ny, cells }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn contains(&self, p: P2) -> bool {
        let i = ((p[0] - self.x0) / self.h).floor();
        let j = ((p[1] - self.y0) / self.h).floor();
        if i < 0.0 || j < 0.0 || i >= self.nx as f64 || j >= self.ny as f64 {
            return false;
        }
        self.cells[j as usize * self.nx + i as usize]
    }

    /// Maximal horizontal runs `(j, i_start, i_end_exclusive)`.
    pub fn runs(&self) -> Vec<(usize, usize, usize)> {
        let mut out = vec![];
        for j in 0..self.ny {
            let row = &self.cells[j * self.nx..(j + 1) * self.nx];
            let mut i = 0;
            while i < self.nx {
                if row[i] {
                    let s = i;
                    while i < self.nx && row[i] {
                        i += 1;
                    }
                    out.push((j, s, i));
                } else {
                    i += 1;
                }
            }
        }
        out
    }
}

/// Gap area at one recorded time across the threshold ladder.
#[derive(Debug, Clone, Serialize)]
pub struct GapEstimate {
    pub t: f64,
    /// Decreasing thresholds.
    pub etas: Vec<f64>,
    pub gaps: Vec<f64>,
    /// Intercept of the least-squares line `gap(η)`.
    pub extrapolated: f64,
    pub slope: f64,
    /// `gap(η)` nonincreasing as `η` decreases, up to the tolerance.
    pub monotone: bool,
    #[serde(skip)]
    pub mask: GapMask,
}

/// Gap at recorded time index `ti`; the mask is that of the finest threshold.
pub fn fattening_gap(trace: &FlowTrace, ti: usize, monotone_tol: f64) -> Result<GapEstimate, AnalysisError> {
    if trace.etas.len() < 3 {
        return Err(AnalysisError::Insufficient(format!("{} threshold levels, need 3", trace.etas.len())));
    }
    if ti >= trace.times.len() {
        return Err(AnalysisError::Parameter(format!("time index {ti} past {} records", trace.times.len())));
    }
    let gaps: Vec<f64> = trace.gap_area.iter().map(|g| g[ti]).collect();
    let (a, b) = line_fit(&trace.etas, &gaps);
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0] + monotone_tol);
    let last = trace.etas.len() - 1;
    let mask = GapMask::new(&trace.outer[last].fields[ti], &trace.inner[last].fields[ti]);
    Ok(GapEstimate { t: trace.times[ti], etas: trace.etas.clone(), gaps, extrapolated: a, slope: b, monotone, mask })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Fattening,
    NoFattening,
    Inconclusive,
}

/// Verdict thresholds; areas are in units of `h²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub fattening_area: f64,
    pub nofattening_area: f64,
    pub consecutive: usize,
    pub monotone_area: f64,
    /// Largest log-log slope of the inscribed radius in `η` still read as
    /// a radius that survives `η → 0`.
    pub max_eta_exponent: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { fattening_area: 10.0, nofattening_area: 2.0, consecutive: 3, monotone_area: 2.0, max_eta_exponent: 0.5 }
    }
}

/// Power law `r ≈ c t^p` with a bootstrap band on `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub p: f64,
    pub c: f64,
    pub p_low: f64,
    pub p_high: f64,
    pub points: usize,
}

/// Log-log least squares over the points with `t > 0` and `r > min_radius`,
/// with a 95% percentile band from 400 paired bootstrap resamples.
pub fn fit_exponent(times: &[f64], radii: &[f64], min_radius: f64, seed: u64) -> Result<ExponentFit, AnalysisError> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(radii)
        .filter(|&(&t, &r)| t > 0.0 && r > min_radius && r.is_finite())
        .map(|(&t, &r)| (t.ln(), r.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(AnalysisError::Insufficient(format!("{} resolved radii, need 5", pts.len())));
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = pts.iter().cloned().unzip();
    let (a, p) = line_fit(&lx, &ly);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(400);
    let n = pts.len();
    while slopes.len() < 400 {
        let (bx, by): (Vec<f64>, Vec<f64>) = (0..n).map(|_| pts[rng.gen_range(0..n)]).unzip();
        if bx.iter().all(|&v| v == bx[0]) {
            continue;
        }
        slopes.push(line_fit(&bx, &by).1);
    }
    slopes.sort_by(f64::total_cmp);
    Ok(ExponentFit { p, c: a.exp(), p_low: slopes[9], p_high: slopes[389], points: n })
}

#[derive(Debug, Clone, Serialize)]
pub struct FatteningReport {
    pub verdict: Verdict,
    pub h: f64,
    pub times: Vec<f64>,
    pub etas: Vec<f64>,
    /// Extrapolated to `η = 0`.
    pub gap_area: Vec<f64>,
    pub gap_finest: Vec<f64>,
    /// Extrapolated to `η = 0`, clamped at zero.
    pub inscribed_radius: Vec<f64>,
    pub inscribed_radius_finest: Vec<f64>,
    /// Log-log slope of the inscribed radius in `η`, where all are positive.
    pub radius_eta_exponent: Vec<Option<f64>>,
    pub monotone: Vec<bool>,
    pub fitted_exponent: Option<ExponentFit>,
    pub exponent_note: Option<String>,
    pub thresholds: Thresholds,
}

impl FatteningReport {
    /// Longest run of consecutive times meeting the fattening test.
    pub fn fattening_run(&self) -> usize {
        let mut best = 0;
        let mut cur = 0;
        for i in 0..self.times.len() {
            if self.fattens_at(i) {
                cur += 1;
                best = best.max(cur);
            } else {
                cur = 0;
            }
        }
        best
    }

    fn fattens_at(&self, i: usize) -> bool {
        let h2 = self.h * self.h;
        self.gap_area[i] > self.thresholds.fattening_area * h2
            && self.monotone[i]
            && self.radius_eta_exponent[i].is_some_and(|q| q <= self.thresholds.max_eta_exponent)
    }
}

/// Verdict over all recorded times of a ladder trace.
///
/// Fattening needs an extrapolated gap above the area threshold, monotone
/// in `η`, with an inscribed radius that does not decay like a power of
/// `η`, at `consecutive` successive records. No fattening needs the
/// extrapolated gap below its threshold at every record.
pub fn fattening_report(trace: &FlowTrace, th: Thresholds, seed: u64) -> Result<FatteningReport, AnalysisError> {
    let h2 = trace.h * trace.h;
    let n = trace.times.len();
    let mut gap_area = vec![];
    let mut monotone = vec![];
    let mut radius = vec![];
    let mut expo = vec![];
    for ti in 0..n {
        let g = fattening_gap(trace, ti, th.monotone_area * h2)?;
        gap_area.push(g.extrapolated);
        monotone.push(g.monotone);
        let rs: Vec<f64> = trace.inscribed_radius.iter().map(|r| r[ti]).collect();
        let (a, _) = line_fit(&trace.etas, &rs);
        radius.push(a.max(0.0));
        expo.push(if rs.iter().all(|&r| r > 0.0) {
            let le: Vec<f64> = trace.etas.iter().map(|e| e.ln()).collect();
            let lr: Vec<f64> = rs.iter().map(|r| r.ln()).collect();
            Some(line_fit(&le, &lr).1)
        } else {
            None
        });
    }
    let last = trace.etas.len() - 1;
    let mut rep = FatteningReport {
        verdict: Verdict::Inconclusive,
        h: trace.h,
        times: trace.times.clone(),
        etas: trace.etas.clone(),
        gap_area,
        gap_finest: trace.gap_area[last].clone(),
        inscribed_radius: radius,
        inscribed_radius_finest: trace.inscribed_radius[last].clone(),
        radius_eta_exponent: expo,
        monotone,
        fitted_exponent: None,
        exponent_note: None,
        thresholds: th,
    };
    match fit_exponent(&rep.times, &rep.inscribed_radius, 4.0 * trace.h, seed) {
        Ok(f) => rep.fitted_exponent = Some(f),
        Err(e) => rep.exponent_note = Some(e.to_string()),
    }
    rep.verdict = if rep.fattening_run() >= th.consecutive {
        Verdict::Fattening
    } else if rep.gap_area.iter().all(|&g| g <= th.nofattening_area * h2) && rep.monotone.iter().all(|&m| m) {
        Verdict::NoFattening
    } else {
        Verdict::Inconclusive
    };
    Ok(rep)
}

/// Fraction of the grid cells crossed by the diagonals `|x1| = |x2|`
/// (away from the window rim) that lie in the finest gap, or within one
/// cell of it, at time index `ti`.
pub fn diagonal_containment(trace: &FlowTrace, ti: usize, margin: f64) -> f64 {
    let last = trace.etas.len() - 1;
    let m = GapMask::new(&trace.outer[last].fields[ti], &trace.inner[last].fields[ti]);
    let w = trace.outer[last].fields[ti].window();
    let lim = (w.x1 - margin).min(w.y1 - margin);
    let mut hit = 0;
    let mut tot = 0;
    let steps = (lim / m.h).floor() as i64;
    for q in -steps..=steps {
        let a = q as f64 * m.h;
        for p in [[a, a], [a, -a]] {
            tot += 1;
            let near = (-1..=1).any(|dx| (-1..=1).any(|dy| m.contains([p[0] + dx as f64 * m.h, p[1] + dy as f64 * m.h])));
            if near {
                hit += 1;
            }
        }
    }
    hit as f64 / tot.max(1) as f64
}

// ---------------------------------------------------------------------------
// Barriers
// ---------------------------------------------------------------------------

/// Built-in moving families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum BarrierFamily {
    /// (a) Neighbourhoods `{d_E ≥ −λ(t)}`, `λ(t) = ε − (δ̄ − h) t`, of a
    /// set with positive curvature; outer barrier.
    ErodedSublevel { shape: Primitive, eps: f64 },
    /// (b) Perturbed crosses `C_{r*(t)}` with `ṙ* = Ψ(r*)` from `r` until
    /// `r* = growth·r`, and their `λ`-neighbourhoods outside `B_{3√2 r*}`.
    GrowingCross { r: f64, lambda: f64, growth: f64 },
    /// (c) Boxes `M_r = {d_{N_r} ≥ −r/2}` with `ṙ = 6Φ(2r)` from `rho`
    /// until `growth·rho`, and their `λ`-neighbourhoods.
    ShrinkingBoxes { rho: f64, lambda: f64, growth: f64 },
    /// (d) Pinched droplets `G_{δ,r}`: waist speed `(c♯ − ε) r^{-s}`, lobes
    /// driven by `δ̇ = 1/((c♯ − ε) r)`, at pairs `δ = delta_frac·c♯⁴ r`.
    Droplet { eps_frac: f64, delta_frac: f64, radii: Vec<f64> },
    /// (e) Two balls of radius `1 − ε − C₀t` at gap `2(ε − μt)`.
    TwoBall { eps: f64, mu: f64, c: f64 },
}

impl BarrierFamily {
    pub fn name(&self) -> &'static str {
        match self {
            BarrierFamily::ErodedSublevel { .. } => "eroded_sublevel",
            BarrierFamily::GrowingCross { .. } => "growing_cross",
            BarrierFamily::ShrinkingBoxes { .. } => "shrinking_boxes",
            BarrierFamily::Droplet { .. } => "droplet",
            BarrierFamily::TwoBall { .. } => "two_ball",
        }
    }

    /// Default parameters for a family given by name or letter `a`–`e`.
    pub fn named(name: &str) -> Result<BarrierFamily, AnalysisError> {
        Ok(match name {
            "a" | "eroded_sublevel" => BarrierFamily::ErodedSublevel {
                shape: Primitive::Stadium { half_length: 0.5, radius: 0.5 },
                eps: 0.1,
            },
            "b" | "growing_cross" => BarrierFamily::GrowingCross { r: 0.25, lambda: 0.0625, growth: 2.0 },
            "c" | "shrinking_boxes" => BarrierFamily::ShrinkingBoxes { rho: 0.25, lambda: 0.0625, growth: 2.0 },
            "d" | "droplet" => BarrierFamily::Droplet { eps_frac: 0.25, delta_frac: 0.5, radii: DROPLET_RADII.to_vec() },
            "e" | "two_ball" => BarrierFamily::TwoBall { eps: 0.01, mu: 0.1, c: 0.2 },
            _ => return Err(AnalysisError::UnknownFamily(name.to_string())),
        })
    }

    /// Kernel the family is stated for.
    pub fn default_kernel(&self) -> kernel::KernelSpec {
        match self {
            BarrierFamily::ShrinkingBoxes { .. } => kernel::KernelSpec::PiecewisePower { alpha: 1.0, tail_exponent: 3.0 },
            _ => kernel::KernelSpec::Fractional { s: 0.5 },
        }
    }
}

/// `Super`: `v ≥ −H + δ`. `Sub`: `v ≤ −H − δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Super,
    Sub,
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierSampling {
    pub times: usize,
    /// Target boundary points per time and set.
    pub points: usize,
}

impl Default for BarrierSampling {
    fn default() -> Self {
        BarrierSampling { times: 4, points: 24 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierSample {
    pub t: f64,
    pub piece: &'static str,
    pub point: P2,
    pub normal: P2,
    /// Outward normal velocity of the family.
    pub lhs: f64,
    /// `−H ± δ`.
    pub rhs: f64,
    pub delta: f64,
    pub curvature: f64,
    pub bar: f64,
    /// Signed slack, positive when the inequality holds strictly.
    pub margin: f64,
    pub pass: bool,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierReport {
    pub family: String,
    pub sense: Sense,
    /// Constants fixed or fitted before sampling.
    pub constants: BTreeMap<String, f64>,
    pub samples: Vec<BarrierSample>,
    pub checked: usize,
    pub angular_excluded: usize,
    pub curvature_failures: usize,
    pub pass_fraction: f64,
    pub worst_margin: f64,
    pub pass: bool,
}

impl BarrierReport {
    /// CSV with one row per sample.
    pub fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["t", "piece", "x", "y", "nx", "ny", "lhs", "rhs", "delta", "curvature", "bar", "margin", "pass", "skipped"])
            .unwrap();
        for s in &self.samples {
            w.write_record([
                format!("{:.12e}", s.t),
                s.piece.to_string(),
                format!("{:.12e}", s.point[0]),
                format!("{:.12e}", s.point[1]),
                format!("{:.6e}", s.normal[0]),
                format!("{:.6e}", s.normal[1]),
                format!("{:.12e}", s.lhs),
                format!("{:.12e}", s.rhs),
                format!("{:.6e}", s.delta),
                format!("{:.12e}", s.curvature),
                format!("{:.3e}", s.bar),
                format!("{:.6e}", s.margin),
                s.pass.to_string(),
                s.skipped.clone().unwrap_or_default(),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// One boundary point of a family member with its analytic data.
struct Probe {
    t: f64,
    piece: &'static str,
    set: usize,
    point: P2,
    normal: P2,
    lhs: f64,
    delta: f64,
    angular: bool,
}

/// Evenly thinned boundary samples of `e` inside `w`.
fn boundary_points(e: &PlanarSet, spacing: f64, w: Window, keep: usize) -> Result<Vec<(P2, P2, bool)>, AnalysisError> {
    let s = e.boundary_sample(spacing, Some(w))?;
    let all: Vec<(P2, P2, bool)> =
        s.samples.iter().map(|b| (b.point, b.outward_normal, b.regularity == Regularity::Angular)).collect();
    if all.len() <= keep || keep == 0 {
        return Ok(all);
    }
    let stride = all.len() as f64 / keep as f64;
    Ok((0..keep).map(|i| all[(i as f64 * stride) as usize]).collect())
}

fn times_between(t_end: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect()
}

fn curvature_or_skip(e: &PlanarSet, x: P2, k: &Kernel, opts: &PvOptions) -> Result<(f64, f64), String> {
    curvature_pv(e, x, k, opts).map(|c| (c.value, c.bar())).map_err(|err| match err {
        CurvatureError::Angular(_) => "angular".to_string(),
        other => other.to_string(),
    })
}

fn evaluate(family: &str, sense: Sense, constants: BTreeMap<String, f64>, sets: &[PlanarSet], probes: Vec<Probe>, k: &Kernel, opts: &PvOptions) -> BarrierReport {
    let samples: Vec<BarrierSample> = probes
        .par_iter()
        .map(|p| {
            let mut s = BarrierSample {
                t: p.t,
                piece: p.piece,
                point: p.point,
                normal: p.normal,
                lhs: p.lhs,
                rhs: f64::NAN,
                delta: p.delta,
                curvature: f64::NAN,
                bar: f64::NAN,
                margin: f64::NAN,
                pass: false,
                skipped: None,
            };
            if p.angular {
                s.skipped = Some("angular".into());
                return s;
            }
            match curvature_or_skip(&sets[p.set], p.point, k, opts) {
                Ok((hv, bar)) => {
                    s.curvature = hv;
                    s.bar = bar;
                    match sense {
                        Sense::Super => {
                            s.rhs = -hv + p.delta;
                            s.margin = s.lhs - s.rhs;
                        }
                        Sense::Sub => {
                            s.rhs = -hv - p.delta;
                            s.margin = s.rhs - s.lhs;
                        }
                    }
                    s.pass = s.margin >= -bar;
                }
                Err(reason) => s.skipped = Some(reason),
            }
            s
        })
        .collect();
    let angular = samples.iter().filter(|s| s.skipped.as_deref() == Some("angular")).count();
    let failures = samples.iter().filter(|s| s.skipped.as_deref().is_some_and(|r| r != "angular")).count();
    let checked = samples.iter().filter(|s| s.skipped.is_none()).count();
    let passed = samples.iter().filter(|s| s.pass).count();
    let worst = samples.iter().filter(|s| s.skipped.is_none()).map(|s| s.margin).fold(f64::INFINITY, f64::min);
    let frac = if checked + failures > 0 { passed as f64 / (checked + failures) as f64 } else { 0.0 };
    BarrierReport {
        family: family.to_string(),
        sense,
        constants,
        samples,
        checked,
        angular_excluded: angular,
        curvature_failures: failures,
        pass_fraction: frac,
        worst_margin: worst,
        pass: checked > 0 && failures == 0 && passed == checked,
    }
}

/// Check the barrier inequality of `family` along its evolution.
pub fn verify_barrier(family: &BarrierFamily, k: &Kernel, sampling: BarrierSampling, opts: &PvOptions) -> Result<BarrierReport, AnalysisError> {
    let mut c = BTreeMap::new();
    let mut sets: Vec<PlanarSet> = vec![];
    let mut probes: Vec<Probe> = vec![];
    let np = sampling.points.max(4);
    let sense = match family {
        BarrierFamily::ErodedSublevel { shape, eps } => {
            let eps = *eps;
            if !(eps > 0.0) {
                return Err(AnalysisError::Parameter("eps must be positive".into()));
            }
            let e = make_shape(shape)?;
            let w = match e.asymptote() {
                crate::geometry::Asymptote::Bounded { radius } => Window::square(radius + eps + 0.1),
                _ => return Err(AnalysisError::Parameter("eroded sublevel family needs a bounded shape".into())),
            };
            let hull = |lam: f64| -> Result<PlanarSet, AnalysisError> {
                Ok(if lam > 0.0 { e.clone().dilate(lam)? } else { e.clone() })
            };
            // δ̄: 90% of the smallest curvature seen over the neighbourhoods
            let mut hmin = f64::INFINITY;
            for lam in [0.0, 0.5 * eps, eps] {
                let set = hull(lam)?;
                let pts = boundary_points(&set, w.x1 / 64.0, w, np)?;
                let hs: Vec<f64> = pts
                    .par_iter()
                    .filter(|p| !p.2)
                    .filter_map(|p| curvature_or_skip(&set, p.0, k, opts).ok().map(|v| v.0))
                    .collect();
                hmin = hs.into_iter().fold(hmin, f64::min);
            }
            if !(hmin > 0.0) {
                return Err(AnalysisError::Parameter(format!("curvature of the shape is not positive (min {hmin:e})")));
            }
            let dbar = 0.9 * hmin;
            let hm = 0.5 * dbar;
            let t_end = eps / dbar;
            c.insert("eps".into(), eps);
            c.insert("delta_bar".into(), dbar);
            c.insert("h".into(), hm);
            c.insert("t_end".into(), t_end);
            for t in times_between(t_end, sampling.times) {
                let set = hull(eps - (dbar - hm) * t)?;
                let pts = boundary_points(&set, w.x1 / (2.0 * np as f64), w, np)?;
                for (p, n, ang) in pts {
                    probes.push(Probe { t, piece: "boundary", set: sets.len(), point: p, normal: n, lhs: -(dbar - hm), delta: hm, angular: ang });
                }
                sets.push(set);
            }
            Sense::Super
        }
        BarrierFamily::GrowingCross { r, lambda, growth } => {
            let (r, lam, growth) = (*r, *lambda, *growth);
            if !(r > 0.0 && growth > 1.0 && lam >= 0.0 && lam < 0.5 * r) {
                return Err(AnalysisError::Parameter("growing cross needs r > 0, growth > 1, 0 ≤ λ < r/2".into()));
            }
            let l0 = kernel::lambda_of(k, r)?;
            let t_end = kernel::lambda_of(k, growth * r)? - l0;
            c.insert("r0".into(), r);
            c.insert("lambda".into(), lam);
            c.insert("t_end".into(), t_end);
            let ne = np / 2;
            for t in times_between(t_end, sampling.times) {
                let rs = kernel::invert_lambda(k, t + l0)?;
                let psi = kernel::psi(k, rs);
                let d2 = kernel::positivity_infimum(k, rs);
                let delta = psi.min(d2);
                let big_r = 3.0 * SQRT_2 * rs;
                let set = make_shape(&Primitive::PerturbedCross { r: rs })?;
                let id = sets.len();
                for i in 0..ne {
                    let x = rs * (-1.0 + 2.0 * (i as f64 + 0.5) / ne as f64);
                    probes.push(Probe { t, piece: "edge", set: id, point: [x, rs], normal: [0.0, 1.0], lhs: psi, delta, angular: false });
                }
                let na = np - ne;
                for i in 0..na {
                    let a = rs + (big_r * FRAC_1_SQRT_2 - rs) * (i as f64 + 0.5) / na as f64;
                    let n = [-FRAC_1_SQRT_2, FRAC_1_SQRT_2];
                    probes.push(Probe { t, piece: "arm", set: id, point: [a, a], normal: n, lhs: 0.0, delta, angular: false });
                }
                sets.push(set);
                if lam > 0.0 {
                    let sl = make_shape(&Primitive::PerturbedCross { r: rs })?.dilate(lam)?;
                    let id = sets.len();
                    for i in 0..na {
                        let a = big_r * (1.0 + (i as f64 + 0.5) / na as f64) * FRAC_1_SQRT_2;
                        let p = [a - lam * FRAC_1_SQRT_2, a + lam * FRAC_1_SQRT_2];
                        if norm(p) > big_r {
                            probes.push(Probe { t, piece: "neighbourhood", set: id, point: p, normal: [-FRAC_1_SQRT_2, FRAC_1_SQRT_2], lhs: 0.0, delta: 0.0, angular: false });
                        }
                    }
                    sets.push(sl);
                }
                c.insert(format!("delta_at_{t:.6}"), delta);
            }
            Sense::Sub
        }
        BarrierFamily::ShrinkingBoxes { rho, lambda, growth } => {
            let (rho, lam, growth) = (*rho, *lambda, *growth);
            if !(rho > 0.0 && growth > 1.0 && growth * rho < 1.0 && lam >= 0.0 && lam < rho) {
                return Err(AnalysisError::Parameter("shrinking boxes need 0 < rho < growth·rho < 1, 0 ≤ λ < rho".into()));
            }
            let phi2 = |r: f64| kernel::phi(k, 2.0 * r);
            let delta = phi2(rho)?;
            if !delta.is_finite() {
                return Err(AnalysisError::Parameter("Phi is infinite for this kernel".into()));
            }
            c.insert("rho".into(), rho);
            c.insert("lambda".into(), lam);
            c.insert("delta".into(), delta);
            let n = sampling.times.max(2);
            for i in 0..n {
                let r = rho * (1.0 + (growth - 1.0) * i as f64 / (n - 1) as f64);
                let t = if i == 0 {
                    0.0
                } else {
                    quad::integrate(|q| 1.0 / (6.0 * phi2(q).unwrap_or(f64::INFINITY)), rho, r, Tol::rel(1e-6)).value
                };
                let rdot = 6.0 * phi2(r)?;
                let w = Window::square(4.0 * r);
                for (lm, d, piece) in [(0.5 * r, delta, "box"), (0.5 * r + lam, 0.0, "neighbourhood")] {
                    if piece == "neighbourhood" && lam == 0.0 {
                        continue;
                    }
                    let set = make_shape(&Primitive::BoxPair { r })?.dilate(lm)?;
                    let id = sets.len();
                    for (p, nrm, ang) in boundary_points(&set, r / (2.0 * np as f64), w, np)? {
                        let sign = if p[0] + p[1] > 0.0 { 1.0 } else { -1.0 };
                        let v = rdot * (sign * (nrm[0] + nrm[1]) + 0.5);
                        probes.push(Probe { t, piece, set: id, point: p, normal: nrm, lhs: v, delta: d, angular: ang });
                    }
                    sets.push(set);
                }
            }
            Sense::Sub
        }
        BarrierFamily::Droplet { eps_frac, delta_frac, radii } => {
            let s = k.fractional_s().ok_or_else(|| AnalysisError::Parameter("droplet family needs a fractional kernel".into()))?;
            if !(*eps_frac > 0.0 && *eps_frac < 0.5 && *delta_frac > 0.0 && *delta_frac < 1.0) || radii.is_empty() {
                return Err(AnalysisError::Parameter("droplet family needs eps_frac in (0,1/2), delta_frac in (0,1), radii".into()));
            }
            let waist = check_named_curvature_bounds(k, NamedCase::DropletWaist, &NamedParams::default(), opts)?;
            let global = check_named_curvature_bounds(k, NamedCase::DropletGlobal, &NamedParams::default(), opts)?;
            let a = waist.samples.iter().map(|q| -q.value * q.r.powf(s)).fold(f64::INFINITY, f64::min);
            let hmax = global.samples.iter().map(|q| q.value).fold(f64::NEG_INFINITY, f64::max);
            if !(a > 0.0) || !(hmax > 0.0) {
                return Err(AnalysisError::Parameter("droplet curvature constants could not be fitted".into()));
            }
            let csharp = a.min(1.0 / hmax);
            let eps = eps_frac * csharp;
            c.insert("c_sharp".into(), csharp);
            c.insert("waist_constant".into(), a);
            c.insert("global_max".into(), hmax);
            c.insert("eps".into(), eps);
            let cstar = ((csharp - eps) * (1.0 + s)).powf(1.0 / (1.0 + s));
            for &r in radii {
                let t = (r / cstar).powf(1.0 + s);
                let delta = delta_frac * csharp.powi(4) * r;
                let rdot = (csharp - eps) * r.powf(-s);
                let ddot = 1.0 / ((csharp - eps) * r);
                let set = make_shape(&Primitive::PinchedDroplet { delta, r })?;
                let id = sets.len();
                let rad = 1.0 - delta;
                let sin_t = rad / SQRT_2;
                let cos_t = (1.0 - sin_t * sin_t).sqrt();
                let xc = r * cos_t / sin_t;
                let w = Window::square(SQRT_2 + 1.1);
                let mut pts = boundary_points(&set, 0.02, w, 4 * np)?;
                // the waist scale is far below the global spacing
                for i in 0..np / 2 {
                    let x = xc * (-1.0 + 2.0 * (i as f64 + 0.5) / (np / 2) as f64);
                    pts.push(([x, r], [0.0, 1.0], false));
                }
                let l0 = r / sin_t;
                for i in 0..np / 4 {
                    let l = l0 * (1.0 + 0.25 * 2f64.powi(i as i32));
                    if l >= SQRT_2 * cos_t {
                        break;
                    }
                    for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
                        pts.push(([sx * l * cos_t, sy * l * sin_t], [-sx * sin_t, sy * cos_t], false));
                    }
                }
                for (p, nrm, ang) in pts {
                    let (piece, lhs, d) = if (p[1].abs() - r).abs() < 1e-12 && nrm[1].abs() > 0.999 {
                        ("waist", rdot, eps * r.powf(-s))
                    } else {
                        let cx = if p[0] > 0.0 { SQRT_2 } else { -SQRT_2 };
                        let on_arc = ((p[0] - cx).hypot(p[1]) - rad).abs() < 1e-9;
                        let v = if on_arc {
                            -ddot
                        } else {
                            // tangent segment from the origin: the hull half angle θ has
                            // sin θ = (1−δ)/√2, and a point at distance ℓ moves by ℓ θ̇
                            -norm(p) * ddot / (SQRT_2 * cos_t)
                        };
                        (if on_arc { "lobe" } else { "hull" }, v, eps / (csharp * (csharp - eps)))
                    };
                    probes.push(Probe { t, piece, set: id, point: p, normal: nrm, lhs, delta: d, angular: ang });
                }
                sets.push(set);
            }
            Sense::Sub
        }
        BarrierFamily::TwoBall { eps, mu, c: cnuk } => {
            let (eps, mu, cn) = (*eps, *mu, *cnuk);
            if !(eps > 0.0 && eps < 0.5 && mu >= 0.0 && cn > 0.0 && cn < 0.5) {
                return Err(AnalysisError::Parameter("two-ball family needs 0 < eps < 1/2, mu ≥ 0, 0 < c < 1/2".into()));
            }
            // away from B_c the normals of the initial pair satisfy |ν₁| ≤ 1 − c0
            let r0 = 1.0 - eps;
            let cx = r0 + eps;
            // nearest point of the right circle to the origin at distance c
            let cos_a = (cx * cx + r0 * r0 - cn * cn) / (2.0 * cx * r0);
            let c0 = 1.0 - cos_a.clamp(-1.0, 1.0);
            let r_end = 0.75 * r0;
            let c_ball = k.ball_curvature_cached(r_end);
            let big_c0 = 2.0 * (c_ball + mu) / c0;
            let t_end = (r0 - r_end) / big_c0;
            c.insert("eps".into(), eps);
            c.insert("mu".into(), mu);
            c.insert("c".into(), cn);
            c.insert("c0".into(), c0);
            c.insert("C0".into(), big_c0);
            c.insert("t_end".into(), t_end.min(eps / mu.max(1e-300)));
            for t in times_between(t_end.min(0.999 * eps / mu.max(1e-300)), sampling.times) {
                let set = make_shape(&Primitive::BarrierPair { eps, mu, c0: big_c0, t })?;
                let id = sets.len();
                let w = Window::square(2.1);
                let rad = r0 - big_c0 * t;
                let mut pts = boundary_points(&set, rad / np as f64, w, 2 * np)?;
                // refine next to the gap
                let gap = eps - mu * t;
                let ccx = rad + gap;
                for i in 1..=np / 2 {
                    let a = PI - 0.5 * (i as f64 / (np / 2) as f64).powi(2);
                    for sy in [1.0, -1.0] {
                        let n = [a.cos(), sy * a.sin()];
                        pts.push(([ccx + rad * n[0], rad * n[1]], n, false));
                    }
                }
                for (p, nrm, ang) in pts {
                    let sigma = if p[0] > 0.0 { 1.0 } else { -1.0 };
                    let v = -big_c0 * (1.0 + sigma * nrm[0]) - mu * sigma * nrm[0];
                    let piece = if norm(p) < cn { "inner" } else { "outer" };
                    probes.push(Probe { t, piece, set: id, point: p, normal: nrm, lhs: v, delta: 0.0, angular: ang });
                }
                sets.push(set);
            }
            Sense::Sub
        }
    };
    Ok(evaluate(family.name(), sense, c, &sets, probes, k, opts))
}

// ---------------------------------------------------------------------------
// Named curvature bounds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedCase {
    Box,
    ErodedBox,
    DropletWaist,
    DropletGlobal,
    NearTangent,
}

/// The waist bound is only negative once `r^{-s}` beats the positive far
/// field of the lobes, which for `s = 1/2` needs `r` below about `5e-3`.
pub const DROPLET_RADII: [f64; 3] = [1e-4, 4e-4, 1.6e-3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NamedParams {
    /// Scale parameters; empty selects the case default.
    pub radii: Vec<f64>,
    /// Pinching `δ` as a fraction of `r` (droplets) or absolute (near tangent).
    pub delta: Option<f64>,
    /// Neighbourhood width as a fraction of `r` for the eroded box.
    pub lambda_frac: f64,
    /// Radius fraction of the ball where the near-tangent bound is negative.
    pub c: f64,
    pub points: usize,
}

impl Default for NamedParams {
    fn default() -> Self {
        NamedParams { radii: vec![], delta: None, lambda_frac: 0.5, c: 0.2, points: 16 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedSample {
    pub r: f64,
    pub point: P2,
    pub value: f64,
    pub bar: f64,
    pub bound: Option<f64>,
    /// `bound − value`, when a bound is stated.
    pub margin: Option<f64>,
}

/// `H ≈ offset − a·r^power` over the case's radii. The offset absorbs
/// the far field of the bounded set, which does not scale with `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerFit {
    pub a: f64,
    pub power: f64,
    pub offset: f64,
}

/// Least squares `y ≈ b − a x^p` over `p ∈ [−3, −0.01]`; linear in `(a, b)`
/// for each `p`, scanned in steps of `1e-4`.
pub fn fit_offset_power(x: &[f64], y: &[f64]) -> Option<PowerFit> {
    if x.len() < 3 || x.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let mut best: Option<(f64, PowerFit)> = None;
    for i in 100..=30_000 {
        let p = -(i as f64) * 1e-4;
        let u: Vec<f64> = x.iter().map(|v| -v.powf(p)).collect();
        let (b, a) = line_fit(&u, y);
        let res: f64 = u.iter().zip(y).map(|(ui, yi)| (b + a * ui - yi).powi(2)).sum();
        if best.as_ref().is_none_or(|(r, _)| res < *r) {
            best = Some((res, PowerFit { a, power: p, offset: b }));
        }
    }
    best.map(|b| b.1)
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedBoundReport {
    pub case: NamedCase,
    pub bound: String,
    pub samples: Vec<NamedSample>,
    pub skipped: usize,
    pub fit: Option<PowerFit>,
    /// Fitted value of the unnamed constant of the bound, if any.
    pub constant: Option<f64>,
    pub pass: bool,
    pub note: String,
}

fn sample_set(e: &PlanarSet, pts: &[(P2, P2, bool)], r: f64, k: &Kernel, opts: &PvOptions, bound: Option<f64>) -> (Vec<NamedSample>, usize) {
    let res: Vec<Option<NamedSample>> = pts
        .par_iter()
        .map(|&(p, _, ang)| {
            if ang {
                return None;
            }
            curvature_or_skip(e, p, k, opts).ok().map(|(v, bar)| NamedSample { r, point: p, value: v, bar, bound, margin: bound.map(|b| b - v) })
        })
        .collect();
    let skipped = res.iter().filter(|x| x.is_none()).count();
    (res.into_iter().flatten().collect(), skipped)
}

/// Batch curvature over the canonical samples of a named case, with margins
/// against the stated bound or a fit of its unnamed constant.
pub fn check_named_curvature_bounds(k: &Kernel, case: NamedCase, params: &NamedParams, opts: &PvOptions) -> Result<NamedBoundReport, AnalysisError> {
    let np = params.points.max(4);
    let mut samples = vec![];
    let mut skipped = 0;
    let radii = |d: &[f64]| if params.radii.is_empty() { d.to_vec() } else { params.radii.clone() };
    match case {
        NamedCase::Box | NamedCase::ErodedBox => {
            for r in radii(&[0.25, 0.5]) {
                let bound = 2.0 * kernel::phi(k, 2.0 * r)?;
                let mut e = make_shape(&Primitive::BoxPair { r })?;
                if case == NamedCase::ErodedBox {
                    e = e.dilate(params.lambda_frac * r)?;
                }
                let pts = boundary_points(&e, r / np as f64, Window::square(4.0 * r), 2 * np)?;
                let (s, sk) = sample_set(&e, &pts, r, k, opts, Some(bound));
                samples.extend(s);
                skipped += sk;
            }
            let pass = !samples.is_empty() && samples.iter().all(|q| q.margin.unwrap() >= -q.bar);
            Ok(NamedBoundReport {
                case,
                bound: "H <= 2 Phi(2r)".into(),
                samples,
                skipped,
                fit: None,
                constant: None,
                pass,
                note: String::new(),
            })
        }
        NamedCase::DropletWaist | NamedCase::DropletGlobal => {
            let s = k.fractional_s().ok_or_else(|| AnalysisError::Parameter("droplet bounds need a fractional kernel".into()))?;
            let frac = params.delta.unwrap_or(1e-6);
            for r in radii(&DROPLET_RADII) {
                let delta = frac * r;
                let e = make_shape(&Primitive::PinchedDroplet { delta, r })?;
                let sin_t = (1.0 - delta) / SQRT_2;
                let cot = (1.0 - sin_t * sin_t).sqrt() / sin_t;
                let pts: Vec<(P2, P2, bool)> = if case == NamedCase::DropletWaist {
                    (0..np).map(|i| ([0.9 * r * cot * (-1.0 + 2.0 * (i as f64 + 0.5) / np as f64), r], [0.0, 1.0], false)).collect()
                } else {
                    boundary_points(&e, 0.02, Window::square(SQRT_2 + 1.1), 4 * np)?
                };
                let (sm, sk) = sample_set(&e, &pts, r, k, opts, None);
                samples.extend(sm);
                skipped += sk;
            }
            let rs = radii(&DROPLET_RADII);
            if case == NamedCase::DropletWaist {
                // least negative value per radius
                let worst: Vec<f64> = rs
                    .iter()
                    .map(|&r| samples.iter().filter(|q| q.r == r).map(|q| q.value).fold(f64::NEG_INFINITY, f64::max))
                    .collect();
                let all_neg = samples.iter().all(|q| q.value + q.bar < 0.0);
                let fit = if all_neg { fit_offset_power(&rs, &worst) } else { None };
                let constant = rs.iter().zip(&worst).map(|(r, v)| -v * r.powf(s)).fold(f64::INFINITY, f64::min);
                let pass = fit.is_some_and(|f| f.a > 0.0 && (f.power + s).abs() <= 0.15 * s);
                Ok(NamedBoundReport {
                    case,
                    bound: "H <= -c r^-s on the waist".into(),
                    samples,
                    skipped,
                    fit,
                    constant: all_neg.then_some(constant),
                    pass,
                    note: format!("power should be -{s}"),
                })
            } else {
                let maxes: Vec<f64> = rs
                    .iter()
                    .map(|&r| samples.iter().filter(|q| q.r == r).map(|q| q.value).fold(f64::NEG_INFINITY, f64::max))
                    .collect();
                let hi = maxes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = maxes.iter().cloned().fold(f64::INFINITY, f64::min);
                let pass = hi.is_finite() && hi > 0.0 && hi <= 1.5 * lo;
                Ok(NamedBoundReport {
                    case,
                    bound: "H <= 1/c uniformly in r".into(),
                    samples,
                    skipped,
                    fit: None,
                    constant: (hi > 0.0).then(|| 1.0 / hi),
                    pass,
                    note: format!("per-radius maxima {maxes:?}"),
                })
            }
        }
        NamedCase::NearTangent => {
            let s = k.fractional_s().unwrap_or(0.0);
            let delta = params.delta.unwrap_or(0.01);
            let cn = params.c;
            if !(delta < cn * cn) {
                return Err(AnalysisError::Parameter(format!("near tangent needs delta < c² ({delta} vs {})", cn * cn)));
            }
            let mut all_max: f64 = f64::NEG_INFINITY;
            let mut inner_ok = true;
            let mut n_inner = 0;
            for r in radii(&[0.5, 1.0, 2.0]) {
                let e = make_shape(&Primitive::NearTangent { delta, r })?;
                let cx = (1.0 + delta) * r;
                let mut pts = vec![];
                for i in 0..np {
                    // arc of the right ball inside B_{cr}
                    let half = ((cx * cx + r * r - (cn * r).powi(2)) / (2.0 * cx * r)).clamp(-1.0, 1.0).acos();
                    let a = PI - half + 2.0 * half * (i as f64 + 0.5) / np as f64;
                    let n = [a.cos(), a.sin()];
                    pts.push(([cx + r * n[0], r * n[1]], n, false));
                }
                let (inner, sk) = sample_set(&e, &pts, r, k, opts, Some(0.0));
                skipped += sk;
                n_inner += inner.len();
                inner_ok &= inner.iter().all(|q| q.value + q.bar < 0.0);
                let outer_pts = boundary_points(&e, r / np as f64, Window::square(2.5 * r), 2 * np)?;
                let (outer, sk) = sample_set(&e, &outer_pts, r, k, opts, None);
                skipped += sk;
                for q in &outer {
                    all_max = all_max.max(q.value * r.powf(s));
                }
                samples.extend(inner);
                samples.extend(outer);
            }
            Ok(NamedBoundReport {
                case,
                bound: "H < 0 in B_{cr}; H <= C r^-s".into(),
                samples,
                skipped,
                fit: None,
                constant: Some(all_max),
                pass: inner_ok && n_inner > 0,
                note: format!("c = {cn}, delta = {delta}"),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{make_kernel, KernelSpec};

    #[test]
    fn exact_power_law_is_recovered() {
        let t: Vec<f64> = (1..=8).map(|i| 0.01 * i as f64).collect();
        let r: Vec<f64> = t.iter().map(|t| 2.0 * t.powf(2.0 / 3.0)).collect();
        let f = fit_exponent(&t, &r, 0.0, 1).unwrap();
        assert!((f.p - 2.0 / 3.0).abs() < 1e-6);
        assert!((f.c - 2.0).abs() < 1e-6);
        assert!(f.p_low <= f.p && f.p <= f.p_high);
        assert!(fit_exponent(&t[..4], &r[..4], 0.0, 1).is_err());
    }

    #[test]
    fn offset_power_law_is_recovered() {
        let r: [f64; 4] = [1e-4, 4e-4, 1.6e-3, 6.4e-3];
        let h: Vec<f64> = r.iter().map(|r| 8.0 - 0.6 * r.powf(-0.5)).collect();
        let f = fit_offset_power(&r, &h).unwrap();
        assert!((f.power + 0.5).abs() < 1e-3 && (f.a - 0.6).abs() < 1e-2 && (f.offset - 8.0).abs() < 0.1, "{f:?}");
    }

    #[test]
    fn unknown_family_is_rejected() {
        assert!(matches!(BarrierFamily::named("z"), Err(AnalysisError::UnknownFamily(_))));
    }

    #[test]
    fn growing_cross_top_edge() {
        let k = make_kernel(&KernelSpec::Fractional { s: 0.5 }).unwrap();
        let fam = BarrierFamily::GrowingCross { r: 0.25, lambda: 0.0, growth: 1.5 };
        let rep = verify_barrier(&fam, &k, BarrierSampling { times: 2, points: 16 }, &PvOptions::default()).unwrap();
        let edge: Vec<&BarrierSample> = rep.samples.iter().filter(|s| s.piece == "edge").collect();
        assert_eq!(edge.len(), 16);
        assert!(edge.iter().all(|s| s.pass), "{:?}", edge.iter().map(|s| s.margin).collect::<Vec<_>>());
    }

    #[test]
    fn gap_mask_runs() {
        let m = GapMask { x0: 0.0, y0: 0.0, h: 1.0, nx: 4, ny: 2, cells: vec![true, true, false, true, false, false, false, false] };
        assert_eq!(m.runs(), vec![(0, 0, 2), (0, 3, 4)]);
        assert_eq!(m.count(), 3);
        assert!(m.contains([1.5, 0.5]) && !m.contains([2.5, 0.5]));
    }
}
