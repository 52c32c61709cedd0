//! Level-set evolution under the K-curvature flow.
//!
//! The unknown is a truncated signed distance `u` (positive inside) sampled
//! at cell centers. Per step, the curvature of the level set through each
//! band node is the cell-weight sum of `1 − 2·coverage` over the window plus
//! the out-of-window tail of the asymptotic model; `u` is then advected by
//! `u_t = −H |∇u|` with Godunov upwinding.
//!
//! The fast scheme splits the cell sum: offsets inside a `(2m+1)²` window
//! are summed exactly, farther cells use the zero-level coverage linearized
//! in the node level, which turns the far sum into one FFT convolution of
//! the packed pair (coverage, coverage slope).

use crate::curvature::{center_term, coverage, CellWeights, NodeGeometry, TailTable, NEAR_SUB, SUB};
use crate::geometry::{dist, Asymptote, PlanarSet, Window, P2};
use crate::kernel::Kernel;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Declared behavior of the set outside the grid window.
#[derive(Debug, Clone, PartialEq)]
pub enum AsymptoticModel {
    /// Empty outside the window.
    Vanishing,
    /// Whole plane outside the window.
    Full,
    /// Equal to a fixed analytic set outside the window.
    Shape(PlanarSet),
}

impl AsymptoticModel {
    pub fn of(e: &PlanarSet) -> AsymptoticModel {
        match e.asymptote() {
            Asymptote::Bounded { .. } => AsymptoticModel::Vanishing,
            Asymptote::CoBounded { .. } => AsymptoticModel::Full,
            _ => AsymptoticModel::Shape(e.clone()),
        }
    }

    fn clamped(&self, x: P2, m: f64) -> f64 {
        match self {
            AsymptoticModel::Vanishing => -m,
            AsymptoticModel::Full => m,
            AsymptoticModel::Shape(e) => e.signed_distance(x).clamp(-m, m),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AsymptoticModel::Vanishing => "vanishing",
            AsymptoticModel::Full => "constant",
            AsymptoticModel::Shape(_) => "shape",
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("zero level set reaches the frozen rim of the window")]
    WindowTooSmall,
    #[error("field has no zero contour")]
    EmptyContour,
    #[error("CFL violation: dt {dt:e} exceeds {bound:e}")]
    Cfl { dt: f64, bound: f64 },
    #[error("ladder nesting violated by {cells:.2} cells at t = {t}")]
    Nesting { t: f64, cells: f64 },
    #[error("curvature evaluation failed: {0}")]
    Curvature(String),
}

/// Truncated signed distance on a uniform grid; node `(i, j)` sits at
/// `(x0 + (i+½)h, y0 + (j+½)h)`, stored row-major in `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub u: Vec<f64>,
    /// Truncation level.
    pub m: f64,
    pub model: AsymptoticModel,
}

impl GridField {
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.u[j * self.nx + i]
    }

    #[inline]
    pub fn pos(&self, i: usize, j: usize) -> P2 {
        [self.x0 + (i as f64 + 0.5) * self.h, self.y0 + (j as f64 + 0.5) * self.h]
    }

    pub fn window(&self) -> Window {
        Window { x0: self.x0, x1: self.x0 + self.nx as f64 * self.h, y0: self.y0, y1: self.y0 + self.ny as f64 * self.h }
    }

    /// Central-difference gradient, one-sided at the edge.
    pub fn gradient(&self, i: usize, j: usize) -> P2 {
        let h = self.h;
        let gx = if i == 0 {
            (self.at(1, j) - self.at(0, j)) / h
        } else if i + 1 == self.nx {
            (self.at(i, j) - self.at(i - 1, j)) / h
        } else {
            (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * h)
        };
        let gy = if j == 0 {
            (self.at(i, 1) - self.at(i, 0)) / h
        } else if j + 1 == self.ny {
            (self.at(i, j) - self.at(i, j - 1)) / h
        } else {
            (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * h)
        };
        [gx, gy]
    }

    pub fn gradients(&self) -> Vec<P2> {
        (0..self.nx * self.ny).map(|k| self.gradient(k % self.nx, k / self.nx)).collect()
    }

    /// Gradient and level-set curvature `−div(∇u/|∇u|)` at an interior
    /// node; curvature is capped at `1/h`.
    pub fn node_geometry(&self, i: usize, j: usize) -> NodeGeometry {
        let h = self.h;
        let c = self.at(i, j);
        let (l, r, d, t) = (self.at(i - 1, j), self.at(i + 1, j), self.at(i, j - 1), self.at(i, j + 1));
        let ux = (r - l) / (2.0 * h);
        let uy = (t - d) / (2.0 * h);
        let uxx = (r - 2.0 * c + l) / (h * h);
        let uyy = (t - 2.0 * c + d) / (h * h);
        let uxy = (self.at(i + 1, j + 1) - self.at(i + 1, j - 1) - self.at(i - 1, j + 1) + self.at(i - 1, j - 1)) / (4.0 * h * h);
        let g2 = ux * ux + uy * uy;
        let gn = g2.sqrt();
        let kappa = if gn > 1e-12 {
            (-(uxx * uy * uy - 2.0 * ux * uy * uxy + uyy * ux * ux) / (g2 * gn)).clamp(-1.0 / h, 1.0 / h)
        } else {
            0.0
        };
        NodeGeometry { grad: [ux, uy], grad_norm: gn, kappa }
    }

    /// Weighted `1 − 2·coverage` of cell `(ii, jj)` relative to the level
    /// `ui`, at offset `(dx, dy)` from the evaluation node.
    pub fn cell_sigma(&self, ii: usize, jj: usize, ui: f64, dx: i64, dy: i64, w: &CellWeights) -> f64 {
        sigma_cell(self.at(ii, jj) - ui, self.gradient(ii, jj), self.h, dx, dy, w)
    }

    /// Bilinear interpolation, clamped to the node hull.
    pub fn sample(&self, p: P2) -> f64 {
        let fx = ((p[0] - self.x0) / self.h - 0.5).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((p[1] - self.y0) / self.h - 0.5).clamp(0.0, (self.ny - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        self.at(i, j) * (1.0 - tx) * (1.0 - ty)
            + self.at(i + 1, j) * tx * (1.0 - ty)
            + self.at(i, j + 1) * (1.0 - tx) * ty
            + self.at(i + 1, j + 1) * tx * ty
    }

    /// Area of `{u ≥ 0}` in the window, by per-cell linear coverage.
    pub fn area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let h = self.h;
        let mut a = 0.0;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let g = self.gradient(i, j);
                a += coverage(self.at(i, j), 0.5 * g[0].abs() * h, 0.5 * g[1].abs() * h).0;
            }
        }
        a * h * h
    }

    /// Largest neighbor difference quotient.
    pub fn lipschitz(&self) -> f64 {
        let mut l: f64 = 0.0;
        for j in 0..self.ny {
            for i in 0..self.nx {
                if i + 1 < self.nx {
                    l = l.max((self.at(i + 1, j) - self.at(i, j)).abs());
                }
                if j + 1 < self.ny {
                    l = l.max((self.at(i, j + 1) - self.at(i, j)).abs());
                }
            }
        }
        l / self.h
    }

    /// True when no node lies in `{u ≥ 0}`.
    pub fn is_empty(&self) -> bool {
        self.u.iter().all(|&v| v < 0.0)
    }

    /// Zero contour by marching squares, as segments. Saddles are resolved
    /// by the cell average; a zero average joins all four crossings at the
    /// cell center.
    pub fn zero_contour(&self) -> Vec<[P2; 2]> {
        let mut segs = vec![];
        for j in 0..self.ny.saturating_sub(1) {
            for i in 0..self.nx.saturating_sub(1) {
                let p = [self.pos(i, j), self.pos(i + 1, j), self.pos(i + 1, j + 1), self.pos(i, j + 1)];
                let v = [self.at(i, j), self.at(i + 1, j), self.at(i + 1, j + 1), self.at(i, j + 1)];
                let ins = v.map(|x| x >= 0.0);
                let mut cross: Vec<(usize, P2)> = vec![];
                for e in 0..4 {
                    let (a, b) = (e, (e + 1) % 4);
                    if ins[a] != ins[b] {
                        let t = v[a] / (v[a] - v[b]);
                        cross.push((e, [p[a][0] + t * (p[b][0] - p[a][0]), p[a][1] + t * (p[b][1] - p[a][1])]));
                    }
                }
                match cross.len() {
                    2 => segs.push([cross[0].1, cross[1].1]),
                    4 => {
                        let c = 0.25 * (v[0] + v[1] + v[2] + v[3]);
                        let e = |k: usize| cross[k].1;
                        if c == 0.0 {
                            let mid = [0.5 * (p[0][0] + p[2][0]), 0.5 * (p[0][1] + p[2][1])];
                            for k in 0..4 {
                                segs.push([e(k), mid]);
                            }
                        } else if (c >= 0.0) == ins[0] {
                            // corners 1 and 3 are cut off
                            segs.push([e(0), e(1)]);
                            segs.push([e(2), e(3)]);
                        } else {
                            segs.push([e(3), e(0)]);
                            segs.push([e(1), e(2)]);
                        }
                    }
                    _ => {}
                }
            }
        }
        segs
    }
}

fn seg_dist(p: P2, s: &[P2; 2]) -> f64 {
    let d = [s[1][0] - s[0][0], s[1][1] - s[0][1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let t = if l2 > 0.0 { (((p[0] - s[0][0]) * d[0] + (p[1] - s[0][1]) * d[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, [s[0][0] + t * d[0], s[0][1] + t * d[1]])
}

/// Distance from `p` to a segment set (`∞` when empty).
pub fn distance_to_contour(p: P2, segs: &[[P2; 2]]) -> f64 {
    segs.iter().map(|s| seg_dist(p, s)).fold(f64::INFINITY, f64::min)
}

/// Symmetric Hausdorff distance between two contours, sampled at segment
/// endpoints and midpoints.
pub fn contour_distance(a: &[[P2; 2]], b: &[[P2; 2]]) -> f64 {
    let pts = |s: &[[P2; 2]]| -> Vec<P2> {
        s.iter().flat_map(|q| [q[0], [0.5 * (q[0][0] + q[1][0]), 0.5 * (q[0][1] + q[1][1])]]).collect()
    };
    let dir = |x: &[P2], y: &[[P2; 2]]| x.par_iter().map(|&p| distance_to_contour(p, y)).reduce(|| 0.0, f64::max);
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    dir(&pts(a), b).max(dir(&pts(b), a))
}

/// Smallest distance between two contours.
pub fn contour_separation(a: &[[P2; 2]], b: &[[P2; 2]]) -> f64 {
    a.par_iter()
        .map(|s| distance_to_contour(s[0], b).min(distance_to_contour(s[1], b)))
        .reduce(|| f64::INFINITY, f64::min)
}

/// Sample `clamp(d_E + shift, ±M)` at the cell centers of `window`.
pub fn init_field(e: &PlanarSet, window: Window, h: f64, m: f64) -> Result<GridField, FlowError> {
    init_field_shifted(e, window, h, m, 0.0)
}

/// [`init_field`] for the superlevel set `{d_E ≥ −shift}`.
pub fn init_field_shifted(e: &PlanarSet, window: Window, h: f64, m: f64, shift: f64) -> Result<GridField, FlowError> {
    if !(h > 0.0) || !(m > 0.0) {
        return Err(FlowError::Parameter(format!("h = {h}, M = {m}")));
    }
    let nx = ((window.x1 - window.x0) / h).round() as usize;
    let ny = ((window.y1 - window.y0) / h).round() as usize;
    if nx < 8 || ny < 8 {
        return Err(FlowError::Parameter(format!("grid {nx}x{ny} too small")));
    }
    let base = if shift > 0.0 {
        e.clone().dilate(shift)
    } else if shift < 0.0 {
        e.clone().erode(-shift)
    } else {
        Ok(e.clone())
    }
    .map_err(|err| FlowError::Parameter(err.to_string()))?;
    let mut f = GridField { x0: window.x0, y0: window.y0, h, nx, ny, u: vec![0.0; nx * ny], m, model: AsymptoticModel::of(&base) };
    let vals: Vec<f64> = (0..nx * ny)
        .into_par_iter()
        .map(|k| (e.signed_distance(f.pos(k % nx, k / nx)) + shift).clamp(-m, m))
        .collect();
    f.u = vals;
    Ok(f)
}

/// Rebuild `u` as the clamped distance to its zero contour; nodes within
/// `rim` cells of the edge keep their values.
pub fn redistance(u: &GridField) -> Result<GridField, FlowError> {
    redistance_rim(u, 0)
}

fn redistance_rim(u: &GridField, rim: usize) -> Result<GridField, FlowError> {
    let segs = u.zero_contour();
    if segs.is_empty() {
        return Err(FlowError::EmptyContour);
    }
    let (nx, ny, h, m) = (u.nx, u.ny, u.h, u.m);
    let mut d = vec![f64::INFINITY; nx * ny];
    let reach = m + h;
    for s in &segs {
        let lo = [s[0][0].min(s[1][0]) - reach, s[0][1].min(s[1][1]) - reach];
        let hi = [s[0][0].max(s[1][0]) + reach, s[0][1].max(s[1][1]) + reach];
        let i0 = (((lo[0] - u.x0) / h - 0.5).ceil().max(0.0)) as usize;
        let j0 = (((lo[1] - u.y0) / h - 0.5).ceil().max(0.0)) as usize;
        let i1 = (((hi[0] - u.x0) / h - 0.5).floor().min(nx as f64 - 1.0)).max(-1.0);
        let j1 = (((hi[1] - u.y0) / h - 0.5).floor().min(ny as f64 - 1.0)).max(-1.0);
        if i1 < 0.0 || j1 < 0.0 {
            continue;
        }
        for j in j0..=j1 as usize {
            for i in i0..=i1 as usize {
                let k = j * nx + i;
                let v = seg_dist(u.pos(i, j), s);
                if v < d[k] {
                    d[k] = v;
                }
            }
        }
    }
    let mut out = u.clone();
    for j in 0..ny {
        for i in 0..nx {
            if i < rim || j < rim || i + rim >= nx || j + rim >= ny {
                continue;
            }
            let k = j * nx + i;
            let s = if u.u[k] >= 0.0 { 1.0 } else { -1.0 };
            out.u[k] = s * d[k].min(m);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Near window plus FFT far field.
    Fast,
    /// Full-window per-node sum.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    pub window: Window,
    /// Cells along x.
    pub n: usize,
    pub cfl: f64,
    pub redistance_every: usize,
    /// Band half-width and truncation level, in cells.
    pub band_cells: f64,
    pub clamp_cells: f64,
    /// Half-width of the exact near window, in cells.
    pub near_cells: usize,
    /// Frozen cells along the window edge.
    pub rim_cells: usize,
    /// Recorded frames after the initial one.
    pub frames: usize,
    pub max_steps: usize,
    pub scheme: Scheme,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            window: Window::square(2.0),
            n: 128,
            cfl: 0.4,
            redistance_every: 5,
            band_cells: 4.0,
            clamp_cells: 8.0,
            near_cells: 8,
            rim_cells: 8,
            frames: 10,
            max_steps: 200_000,
            scheme: Scheme::Fast,
        }
    }
}

impl FlowParams {
    pub fn h(&self) -> f64 {
        (self.window.x1 - self.window.x0) / self.n as f64
    }
}

struct FarField {
    p: usize,
    q: usize,
    w_hat: Vec<Complex64>,
    row: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl FarField {
    fn new(w: &CellWeights, nx: usize, ny: usize, near: usize) -> FarField {
        let (p, q) = (2 * nx, 2 * ny);
        let mut planner = FftPlanner::new();
        let mut f = FarField {
            p,
            q,
            w_hat: vec![Complex64::new(0.0, 0.0); p * q],
            row: planner.plan_fft_forward(p),
            row_inv: planner.plan_fft_inverse(p),
            col: planner.plan_fft_forward(q),
            col_inv: planner.plan_fft_inverse(q),
        };
        let near = near as i64;
        for dy in -(ny as i64 - 1)..=(ny as i64 - 1) {
            for dx in -(nx as i64 - 1)..=(nx as i64 - 1) {
                if dx.abs().max(dy.abs()) <= near {
                    continue;
                }
                let a = dx.rem_euclid(p as i64) as usize;
                let b = dy.rem_euclid(q as i64) as usize;
                f.w_hat[b * p + a] = Complex64::new(w.w(dx, dy), 0.0);
            }
        }
        let mut wh = std::mem::take(&mut f.w_hat);
        f.transform(&mut wh, false);
        f.w_hat = wh;
        f
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let (p, q) = (self.p, self.q);
        let (row, col) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row, &self.col) };
        data.par_chunks_mut(p).for_each(|r| row.process(r));
        let mut t = vec![Complex64::new(0.0, 0.0); p * q];
        for b in 0..q {
            for a in 0..p {
                t[a * q + b] = data[b * p + a];
            }
        }
        t.par_chunks_mut(q).for_each(|c| col.process(c));
        for a in 0..p {
            for b in 0..q {
                data[b * p + a] = t[a * q + b];
            }
        }
    }

    /// Correlation of the packed field with the far weights.
    fn apply(&self, z: &[Complex64], nx: usize, ny: usize) -> Vec<Complex64> {
        let (p, q) = (self.p, self.q);
        let mut buf = vec![Complex64::new(0.0, 0.0); p * q];
        for j in 0..ny {
            buf[j * p..j * p + nx].copy_from_slice(&z[j * nx..(j + 1) * nx]);
        }
        self.transform(&mut buf, false);
        for (b, w) in buf.iter_mut().zip(&self.w_hat) {
            *b *= *w;
        }
        self.transform(&mut buf, true);
        let norm = 1.0 / (p * q) as f64;
        let mut out = vec![Complex64::new(0.0, 0.0); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                out[j * nx + i] = buf[j * p + i] * norm;
            }
        }
        out
    }
}

/// Weighted `1 − 2·coverage` of one cell with level offset `v` and
/// gradient `g`; cells next to the node are split into sub-cells.
#[inline]
fn sigma_cell(v: f64, g: P2, h: f64, dx: i64, dy: i64, w: &CellWeights) -> f64 {
    if dx.abs() <= NEAR_SUB && dy.abs() <= NEAR_SUB {
        let hs = h / SUB as f64;
        let (ax, ay) = (0.5 * g[0].abs() * hs, 0.5 * g[1].abs() * hs);
        let ws = w.sub(dx, dy);
        let mut s = 0.0;
        for sy in 0..SUB {
            let cy = (sy as f64 + 0.5) * hs - 0.5 * h;
            for sx in 0..SUB {
                let cx = (sx as f64 + 0.5) * hs - 0.5 * h;
                let c = coverage(v + g[0] * cx + g[1] * cy, ax, ay).0;
                s += ws[sy * SUB + sx] * (1.0 - 2.0 * c);
            }
        }
        s
    } else {
        let c = coverage(v, 0.5 * g[0].abs() * h, 0.5 * g[1].abs() * h).0;
        w.w(dx, dy) * (1.0 - 2.0 * c)
    }
}

/// Per-grid state of a run: cell weights, tail table and far-field plan.
pub struct Engine<'k> {
    pub k: &'k Kernel,
    pub params: FlowParams,
    pub weights: CellWeights,
    pub tail: TailTable,
    far: Option<FarField>,
}

impl<'k> Engine<'k> {
    pub fn new(field: &GridField, k: &'k Kernel, params: FlowParams) -> Engine<'k> {
        let reach = field.nx.max(field.ny);
        let weights = CellWeights::new(k, field.h, reach);
        let far = match params.scheme {
            Scheme::Fast => Some(FarField::new(&weights, field.nx, field.ny, params.near_cells)),
            Scheme::Direct => None,
        };
        Engine { k, params, weights, tail: TailTable::new(field.nx, field.ny), far }
    }

    fn rim(&self) -> usize {
        self.params.rim_cells.max(2)
    }

    /// Band nodes: `|u| ≤ band` away from the frozen rim.
    pub fn band(&self, u: &GridField) -> Vec<usize> {
        let rim = self.rim();
        let lim = self.params.band_cells * u.h;
        (0..u.nx * u.ny)
            .filter(|&k| {
                let (i, j) = (k % u.nx, k / u.nx);
                i >= rim && j >= rim && i + rim < u.nx && j + rim < u.ny && u.u[k].abs() <= lim
            })
            .collect()
    }

    /// Curvature of the level set through each band node.
    pub fn curvature(&self, u: &GridField, band: &[usize]) -> Vec<f64> {
        let grads = u.gradients();
        let far = self.far.as_ref().map(|f| {
            let z: Vec<Complex64> = u
                .u
                .iter()
                .zip(&grads)
                .map(|(&v, g)| {
                    let (c, dc) = coverage(v, 0.5 * g[0].abs() * u.h, 0.5 * g[1].abs() * u.h);
                    Complex64::new(1.0 - 2.0 * c, 2.0 * dc)
                })
                .collect();
            f.apply(&z, u.nx, u.ny)
        });
        let reach = match self.params.scheme {
            Scheme::Fast => self.params.near_cells as i64,
            Scheme::Direct => u.nx.max(u.ny) as i64,
        };
        band.par_iter()
            .map(|&k| {
                let (i, j) = (k % u.nx, k / u.nx);
                let ui = u.u[k];
                let mut s = 0.0;
                let (j0, j1) = ((j as i64 - reach).max(0), (j as i64 + reach).min(u.ny as i64 - 1));
                let (i0, i1) = ((i as i64 - reach).max(0), (i as i64 + reach).min(u.nx as i64 - 1));
                for jj in j0..=j1 {
                    for ii in i0..=i1 {
                        let (dx, dy) = (ii - i as i64, jj - j as i64);
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let kk = jj as usize * u.nx + ii as usize;
                        s += sigma_cell(u.u[kk] - ui, grads[kk], u.h, dx, dy, &self.weights);
                    }
                }
                if let Some(fr) = &far {
                    s += fr[k].re + ui * fr[k].im;
                }
                let geo = u.node_geometry(i, j);
                s + center_term(&geo, &self.weights) + self.tail.at(u, self.k, i, j)
            })
            .collect()
    }

    /// Stable step for the given band curvatures.
    pub fn cfl_dt(&self, u: &GridField, hs: &[f64]) -> f64 {
        let hmax = hs.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if hmax > 0.0 {
            self.params.cfl * u.h / hmax
        } else {
            f64::INFINITY
        }
    }

    /// One explicit Godunov step of `u_t = −H|∇u|`; returns the step taken,
    /// at most `dt_max`.
    pub fn step(&self, u: &mut GridField, dt_max: f64) -> Result<f64, FlowError> {
        let band = self.band(u);
        if band.is_empty() {
            return Err(FlowError::EmptyContour);
        }
        let hs = self.curvature(u, &band);
        let dt = self.cfl_dt(u, &hs).min(dt_max);
        godunov(u, &band, &hs, dt);
        Ok(dt)
    }

    /// Step with a prescribed `dt`, rejecting steps above the CFL bound.
    pub fn step_exact(&self, u: &mut GridField, dt: f64) -> Result<(), FlowError> {
        let band = self.band(u);
        if band.is_empty() {
            return Ok(());
        }
        let hs = self.curvature(u, &band);
        let bound = self.cfl_dt(u, &hs);
        if dt > bound * (1.0 + 1e-12) {
            return Err(FlowError::Cfl { dt, bound });
        }
        godunov(u, &band, &hs, dt);
        Ok(())
    }

    pub fn redistance(&self, u: &GridField) -> Result<GridField, FlowError> {
        redistance_rim(u, self.rim())
    }
}

fn godunov(u: &mut GridField, band: &[usize], hs: &[f64], dt: f64) {
    let (nx, h) = (u.nx, u.h);
    let old = &u.u;
    let new: Vec<f64> = band
        .par_iter()
        .zip(hs.par_iter())
        .map(|(&k, &hk)| {
            let c = old[k];
            let dmx = (c - old[k - 1]) / h;
            let dpx = (old[k + 1] - c) / h;
            let dmy = (c - old[k - nx]) / h;
            let dpy = (old[k + nx] - c) / h;
            let g = if hk > 0.0 {
                (dmx.max(0.0).powi(2) + dpx.min(0.0).powi(2) + dmy.max(0.0).powi(2) + dpy.min(0.0).powi(2)).sqrt()
            } else {
                (dmx.min(0.0).powi(2) + dpx.max(0.0).powi(2) + dmy.min(0.0).powi(2) + dpy.max(0.0).powi(2)).sqrt()
            };
            (c - dt * hk * g).clamp(-u.m, u.m)
        })
        .collect();
    for (&k, v) in band.iter().zip(new) {
        u.u[k] = v;
    }
}

/// One direct-scheme step of a small field (at most 96² nodes).
pub fn step_direct(u: &GridField, k: &Kernel, dt: f64) -> Result<GridField, FlowError> {
    if u.nx * u.ny > 96 * 96 {
        return Err(FlowError::Parameter(format!("direct scheme limited to 96² nodes, got {}x{}", u.nx, u.ny)));
    }
    let params = FlowParams { scheme: Scheme::Direct, ..Default::default() };
    let eng = Engine::new(u, k, params);
    let mut out = u.clone();
    eng.step_exact(&mut out, dt)?;
    Ok(out)
}

/// Evolution of one initial field.
#[derive(Debug, Clone)]
pub struct SetTrace {
    /// Initial superlevel `{d_E ≥ threshold}`.
    pub threshold: f64,
    pub times: Vec<f64>,
    pub fields: Vec<GridField>,
    pub areas: Vec<f64>,
    pub lipschitz: Vec<f64>,
    /// `(t, area)` after every step.
    pub step_log: Vec<(f64, f64)>,
    pub steps: usize,
    pub vanished_at: Option<f64>,
    /// Vanishing time extrapolated from the last resolved radii.
    pub extinction_time: Option<f64>,
}

impl SetTrace {
    pub fn contours(&self) -> Vec<Vec<[P2; 2]>> {
        self.fields.iter().map(|f| f.zero_contour()).collect()
    }
}

/// The frozen rim must agree with the model wherever the mismatch could
/// reach the narrow band.
fn check_rim(u: &GridField, rim: usize, band: f64) -> Result<(), FlowError> {
    let lim = u.h;
    for j in 0..u.ny {
        for i in 0..u.nx {
            let edge = i < rim || j < rim || i + rim >= u.nx || j + rim >= u.ny;
            let inner_edge = i == rim || j == rim || i + rim + 1 == u.nx || j + rim + 1 == u.ny;
            if !edge && inner_edge {
                let model = u.model.clamped(u.pos(i, j), u.m);
                let v = u.at(i, j);
                if (v - model).abs() > lim && v.abs().min(model.abs()) < band {
                    return Err(FlowError::WindowTooSmall);
                }
            }
        }
    }
    Ok(())
}

/// Evolve a prepared field to time `t_end`, recording `params.frames`
/// evenly spaced frames.
pub fn evolve_field(u0: GridField, k: &Kernel, t_end: f64, params: FlowParams, threshold: f64) -> Result<SetTrace, FlowError> {
    let eng = Engine::new(&u0, k, params);
    let rim = eng.rim();
    // frozen rim equals the model
    let mut u = u0;
    for j in 0..u.ny {
        for i in 0..u.nx {
            if i < rim || j < rim || i + rim >= u.nx || j + rim >= u.ny {
                let k = u.idx(i, j);
                u.u[k] = u.model.clamped(u.pos(i, j), u.m);
            }
        }
    }
    check_rim(&u, rim, (params.band_cells + 1.0) * u.h)?;
    let frames = params.frames.max(1);
    let mut tr = SetTrace {
        threshold,
        times: vec![0.0],
        areas: vec![u.area()],
        lipschitz: vec![u.lipschitz()],
        fields: vec![u.clone()],
        step_log: vec![(0.0, u.area())],
        steps: 0,
        vanished_at: None,
        extinction_time: None,
    };
    let mut t = 0.0;
    let bounded = matches!(u.model, AsymptoticModel::Vanishing);
    for f in 1..=frames {
        let t_rec = t_end * f as f64 / frames as f64;
        while t < t_rec * (1.0 - 1e-12) && tr.vanished_at.is_none() {
            if tr.steps >= params.max_steps {
                return Err(FlowError::Parameter(format!("step limit {} reached at t = {t}", params.max_steps)));
            }
            let dt = match eng.step(&mut u, t_rec - t) {
                Ok(dt) => dt,
                Err(FlowError::EmptyContour) => 0.0,
                Err(e) => return Err(e),
            };
            t += dt;
            tr.steps += 1;
            if tr.steps % params.redistance_every.max(1) == 0 && !u.is_empty() {
                u = eng.redistance(&u)?;
            }
            let a = u.area();
            tr.step_log.push((t, a));
            if bounded && u.is_empty() || dt == 0.0 {
                tr.vanished_at = Some(t);
                tr.extinction_time = Some(extrapolate_extinction(&tr.step_log, k, u.h).unwrap_or(t));
            }
        }
        tr.times.push(t_rec);
        tr.areas.push(u.area());
        tr.lipschitz.push(u.lipschitz());
        tr.fields.push(u.clone());
    }
    Ok(tr)
}

/// Fit `R^(1+s)` (area-equivalent radius) linearly in time over the
/// records with `4h ≤ R ≤ 12h` and extrapolate to zero.
fn extrapolate_extinction(log: &[(f64, f64)], k: &Kernel, h: f64) -> Option<f64> {
    let p = 1.0 + k.fractional_s().unwrap_or(1.0);
    let pts: Vec<(f64, f64)> = log
        .iter()
        .filter_map(|&(t, a)| {
            let r = (a / std::f64::consts::PI).sqrt();
            (r >= 4.0 * h && r <= 12.0 * h).then(|| (t, r.powf(p)))
        })
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, my) = (pts.iter().map(|q| q.0).sum::<f64>() / n, pts.iter().map(|q| q.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|q| (q.0 - mt) * (q.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|q| (q.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    (slope < 0.0).then(|| mt - my / slope)
}

/// Evolve the set `e` to time `t_end`.
pub fn evolve_set(e: &PlanarSet, k: &Kernel, t_end: f64, params: FlowParams) -> Result<SetTrace, FlowError> {
    let h = params.h();
    let u0 = init_field(e, params.window, h, params.clamp_cells * h)?;
    evolve_field(u0, k, t_end, params, 0.0)
}

/// Outer and inner ladders with gap diagnostics.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub h: f64,
    pub times: Vec<f64>,
    /// Positive thresholds, decreasing.
    pub etas: Vec<f64>,
    /// Evolutions of `{d_E ≥ −η}`.
    pub outer: Vec<SetTrace>,
    /// Evolutions of `{d_E ≥ η}`.
    pub inner: Vec<SetTrace>,
    /// `gap_area[η][t]`: area of outer minus inner.
    pub gap_area: Vec<Vec<f64>>,
    /// `inscribed_radius[η][t]`: largest disk at `gap_center` inside the gap.
    pub inscribed_radius: Vec<Vec<f64>>,
    pub gap_center: P2,
    /// Largest nesting overlap seen, in cells.
    pub nesting_defect: f64,
}

/// Radius of the largest disk at `c` inside `{outer ≥ 0} \ {inner ≥ 0}`.
pub fn inscribed_gap_radius(outer: &GridField, inner: &GridField, c: P2) -> f64 {
    if outer.sample(c) < 0.0 || inner.sample(c) >= 0.0 {
        return 0.0;
    }
    let d_out = distance_to_contour(c, &outer.zero_contour());
    let d_in = distance_to_contour(c, &inner.zero_contour());
    d_out.min(d_in)
}

/// Evolve `{d_E ≥ ∓η}` for every `η` in `etas`.
pub fn evolve_ladder(e: &PlanarSet, k: &Kernel, t_end: f64, etas: &[f64], params: FlowParams, gap_center: P2) -> Result<FlowTrace, FlowError> {
    if etas.is_empty() || etas.iter().any(|&x| !(x > 0.0)) {
        return Err(FlowError::Parameter("thresholds must be positive".into()));
    }
    let mut etas = etas.to_vec();
    etas.sort_by(|a, b| b.total_cmp(a));
    let h = params.h();
    let m = params.clamp_cells * h;
    let jobs: Vec<f64> = etas.iter().flat_map(|&x| [x, -x]).collect();
    let runs: Vec<Result<SetTrace, FlowError>> = jobs
        .par_iter()
        .map(|&shift| {
            let u0 = init_field_shifted(e, params.window, h, m, shift)?;
            evolve_field(u0, k, t_end, params, -shift)
        })
        .collect();
    let mut outer = vec![];
    let mut inner = vec![];
    for (r, &shift) in runs.into_iter().zip(&jobs) {
        if shift > 0.0 {
            outer.push(r?);
        } else {
            inner.push(r?);
        }
    }
    let times = outer[0].times.clone();
    let mut gap_area = vec![];
    let mut inscribed_radius = vec![];
    for (o, i) in outer.iter().zip(&inner) {
        gap_area.push(o.areas.iter().zip(&i.areas).map(|(a, b)| a - b).collect());
        inscribed_radius.push(o.fields.iter().zip(&i.fields).map(|(fo, fi)| inscribed_gap_radius(fo, fi, gap_center)).collect());
    }
    // members ordered by threshold: inner (largest η first) ... outer
    let mut chain: Vec<&SetTrace> = inner.iter().collect();
    chain.extend(outer.iter().rev());
    let mut defect: f64 = 0.0;
    for (ti, &t) in times.iter().enumerate() {
        for w in chain.windows(2) {
            // w[0] has the larger threshold: its set must sit inside w[1]'s
            let (a, b) = (&w[0].fields[ti], &w[1].fields[ti]);
            for kk in 0..a.u.len() {
                if a.u[kk] >= 0.0 && b.u[kk] < 0.0 {
                    defect = defect.max(-b.u[kk] / h);
                }
            }
            if defect > 2.0 {
                return Err(FlowError::Nesting { t, cells: defect });
            }
        }
    }
    Ok(FlowTrace { h, times, etas, outer, inner, gap_area, inscribed_radius, gap_center, nesting_defect: defect })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_shape, Primitive};
    use crate::kernel::{make_kernel, KernelSpec};

    fn ball(r: f64) -> PlanarSet {
        make_shape(&Primitive::Ball { center: [0.0, 0.0], radius: r }).unwrap()
    }

    #[test]
    fn init_clamps() {
        let f = init_field(&ball(1.0), Window::square(2.0), 1.0 / 64.0, 0.5).unwrap();
        assert_eq!(f.nx, 256);
        assert_eq!(f.sample([0.0, 0.0]), 0.5);
        assert_eq!(f.at(0, 128), -0.5);
        let g = init_field(&ball(1.0), Window::square(2.0), 1.0 / 16.0, 10.0).unwrap();
        assert!(g.u.iter().all(|v| v.abs() < 10.0));
    }

    #[test]
    fn redistance_reproduces_ball_distance() {
        let h = 1.0 / 32.0;
        let f = init_field(&ball(1.0), Window::square(2.0), h, 8.0 * h).unwrap();
        let mut g = f.clone();
        for v in g.u.iter_mut() {
            *v = (*v * 3.0).clamp(-f.m, f.m);
        }
        let r = redistance(&g).unwrap();
        let err = r.u.iter().zip(&f.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 0.25 * h, "{err}");
    }

    #[test]
    fn area_of_ball() {
        let h = 1.0 / 64.0;
        let f = init_field(&ball(1.0), Window::square(1.5), h, 8.0 * h).unwrap();
        assert!((f.area() - std::f64::consts::PI).abs() < 2.0 * h * h * 2.0 * std::f64::consts::PI);
    }

    #[test]
    fn far_field_matches_direct_sum() {
        let k = make_kernel(&KernelSpec::Fractional { s: 0.5 }).unwrap();
        let h = 1.5 / 24.0;
        let u = init_field(&ball(0.8), Window::square(1.5), h, 8.0 * h).unwrap();
        let pf = FlowParams { window: Window::square(1.5), n: 48, rim_cells: 4, ..Default::default() };
        let fast = Engine::new(&u, &k, pf);
        let direct = Engine::new(&u, &k, FlowParams { scheme: Scheme::Direct, ..pf });
        let band: Vec<usize> = fast.band(&u).into_iter().filter(|&q| u.u[q].abs() < 0.5 * h).collect();
        let a = fast.curvature(&u, &band);
        let b = direct.curvature(&u, &band);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-2 * y.abs(), "{x} {y}");
        }
    }
}
