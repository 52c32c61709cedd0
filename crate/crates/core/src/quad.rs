//! Adaptive quadrature used by every integral in the crate.
//!
//! Three entry points cover the shapes of integrals that appear here:
//! [`adaptive`] for proper integrals on a finite interval, and
//! [`near_zero`] / [`to_infinity`] for improper integrals, which sum
//! geometric (dyadic) panels and run a ratio test on the panel sums to
//! separate convergence from divergence.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Value of an integral together with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn zero() -> Self {
        Estimate { value: 0.0, error: 0.0 }
    }
}

impl std::ops::Add for Estimate {
    type Output = Estimate;
    fn add(self, o: Estimate) -> Estimate {
        Estimate { value: self.value + o.value, error: self.error + o.error }
    }
}

/// One Gauss-Kronrod 7/15 panel. Error is |K15 - G7|.
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Estimate {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    Estimate { value: k * h, error: ((k - g) * h).abs() }
}

struct Panel {
    a: f64,
    b: f64,
    est: Estimate,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.est.error == o.est.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> Ordering {
        self.est.error.total_cmp(&o.est.error)
    }
}

/// Tolerances and budget for [`adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct Tol {
    pub abs: f64,
    pub rel: f64,
    pub max_panels: usize,
}

impl Tol {
    pub const DEFAULT_1D: Tol = Tol { abs: 1e-14, rel: 1e-6, max_panels: 2000 };

    pub fn rel(rel: f64) -> Tol {
        Tol { rel, ..Tol::DEFAULT_1D }
    }
}

/// Globally adaptive GK15 on `[a, b]` with the given breakpoints inserted.
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], tol: Tol) -> Estimate {
    let mut heap = BinaryHeap::new();
    let mut total = Estimate::zero();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let est = gk15(&mut f, w[0], w[1]);
            total = total + est;
            heap.push(Panel { a: w[0], b: w[1], est });
        }
    }
    let mut panels = heap.len();
    while total.error > tol.abs.max(tol.rel * total.value.abs()) && panels < tol.max_panels {
        let Some(p) = heap.pop() else { break };
        let m = 0.5 * (p.a + p.b);
        if !(m > p.a && m < p.b) {
            heap.push(p);
            break;
        }
        let l = gk15(&mut f, p.a, m);
        let r = gk15(&mut f, m, p.b);
        total.value += l.value + r.value - p.est.value;
        total.error += l.error + r.error - p.est.error;
        heap.push(Panel { a: p.a, b: m, est: l });
        heap.push(Panel { a: m, b: p.b, est: r });
        panels += 1;
    }
    // re-sum to shed accumulated cancellation in the running totals
    let mut out = Estimate::zero();
    for p in heap.into_iter() {
        out = out + p.est;
    }
    out
}

/// Convenience wrapper over a single interval.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: Tol) -> Estimate {
    adaptive(f, &[a, b], tol)
}

/// Outcome of an improper integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Improper {
    Converged(Estimate),
    Diverged { partial: f64, panels: usize },
    Undetermined { partial: f64, panels: usize },
}

impl Improper {
    pub fn converged(self) -> Option<Estimate> {
        match self {
            Improper::Converged(e) => Some(e),
            _ => None,
        }
    }
}

/// Panels needed before the ratio test is trusted.
const MIN_PANELS: usize = 6;
/// Consecutive failed ratios that declare divergence.
const FAIL_RUN: usize = 5;
const MAX_PANELS: usize = 400;

/// Ratio test on a stream of geometric-panel sums.
///
/// A panel sum `S_k` fails when `|S_k| >= (1 - 1.5/k) |S_{k-1}|`: that is
/// the decay of a harmonic (divergent) series or slower. Convergence is
/// declared once the geometric tail bound drops below tolerance.
struct RatioTest {
    sums: Vec<f64>,
    fails: usize,
    total: Estimate,
    last_sign: f64,
}

enum Step {
    More,
    Done(Improper),
}

impl RatioTest {
    fn new() -> Self {
        RatioTest { sums: Vec::new(), fails: 0, total: Estimate::zero(), last_sign: 1.0 }
    }

    fn push(&mut self, e: Estimate, rel: f64, abs: f64) -> Step {
        self.total = self.total + e;
        self.last_sign = if e.value < 0.0 { -1.0 } else { 1.0 };
        let s = e.value.abs();
        self.sums.push(s);
        let n = self.sums.len();
        if n < 2 {
            return Step::More;
        }
        let g = |q: f64| q / (1.0 - q);
        // ratios of the last four panel sums; a power law gives a constant ratio
        let w = &self.sums[n.saturating_sub(4)..];
        let ratios: Vec<f64> =
            w.windows(2).map(|p| if p[0] > 0.0 { p[1] / p[0] } else { 0.0 }).collect();
        let qmax = ratios.iter().cloned().fold(0.0_f64, f64::max);
        let qmin = ratios.iter().cloned().fold(1.0_f64, f64::min);
        let stable = w.len() == 4 && qmax < 0.999 && qmax - qmin <= 1e-3 * (1.0 - qmax);
        let prev = self.sums[n - 2];
        let kk = n as f64;
        if n > MIN_PANELS && !stable && prev > 0.0 && s >= (1.0 - 1.5 / kk) * prev {
            self.fails += 1;
        } else {
            self.fails = 0;
        }
        if n < MIN_PANELS {
            return Step::More;
        }
        if self.fails >= FAIL_RUN {
            return Step::Done(Improper::Diverged { partial: self.total.value, panels: n });
        }
        if w.iter().all(|&v| v == 0.0) {
            return Step::Done(Improper::Converged(self.total));
        }
        let thresh = abs.max(rel * self.total.value.abs());
        let last = w[w.len() - 1];
        if qmax < 0.999 {
            // geometric extrapolation of the remaining panels; the spread of
            // the recent ratios bounds its error
            let tail = last * g(qmax);
            let tail_err = last * (g(qmax) - g(qmin));
            if tail <= thresh || (stable && tail_err <= thresh) {
                let mut t = self.total;
                t.value += self.last_sign * last * g(0.5 * (qmax + qmin));
                t.error += tail_err.min(tail);
                return Step::Done(Improper::Converged(t));
            }
        }
        if n >= MAX_PANELS {
            return Step::Done(Improper::Undetermined { partial: self.total.value, panels: n });
        }
        Step::More
    }
}

/// `∫_0^b f` summed over dyadic panels `[b 2^{-k-1}, b 2^{-k}]`.
pub fn near_zero<F: FnMut(f64) -> f64>(mut f: F, b: f64, tol: Tol) -> Improper {
    let mut rt = RatioTest::new();
    let mut hi = b;
    let panel_tol = Tol { rel: tol.rel * 0.1, abs: tol.abs * 0.1, max_panels: 200 };
    loop {
        let lo = 0.5 * hi;
        let e = adaptive(&mut f, &[lo, hi], panel_tol);
        if let Step::Done(out) = rt.push(e, tol.rel, tol.abs) {
            return out;
        }
        hi = lo;
    }
}

/// `∫_a^∞ f` summed over panels `[a 2^k, a 2^{k+1}]`.
pub fn to_infinity<F: FnMut(f64) -> f64>(mut f: F, a: f64, tol: Tol) -> Improper {
    assert!(a > 0.0);
    let mut rt = RatioTest::new();
    let mut lo = a;
    let panel_tol = Tol { rel: tol.rel * 0.1, abs: tol.abs * 0.1, max_panels: 200 };
    loop {
        let hi = 2.0 * lo;
        let e = adaptive(&mut f, &[lo, hi], panel_tol);
        if let Step::Done(out) = rt.push(e, tol.rel, tol.abs) {
            return out;
        }
        lo = hi;
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Tensor Gauss-Legendre over a rectangle.
pub fn rect_gl<F: FnMut(f64, f64) -> f64>(
    f: &mut F,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    nodes: &(Vec<f64>, Vec<f64>),
) -> f64 {
    let (xs, ws) = nodes;
    let (cx, hx) = (0.5 * (x0 + x1), 0.5 * (x1 - x0));
    let (cy, hy) = (0.5 * (y0 + y1), 0.5 * (y1 - y0));
    let mut acc = 0.0;
    for (i, &xi) in xs.iter().enumerate() {
        for (j, &yj) in xs.iter().enumerate() {
            acc += ws[i] * ws[j] * f(cx + hx * xi, cy + hy * yj);
        }
    }
    acc * hx * hy
}

/// Adaptive 2D integral on a rectangle by quadtree refinement of a tensor
/// Gauss rule, comparing each cell with its four children.
pub fn rect_adaptive<F: FnMut(f64, f64) -> f64>(
    f: &mut F,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    tol: f64,
    depth: u32,
) -> Estimate {
    let nodes = gauss_legendre(6);
    fn rec<F: FnMut(f64, f64) -> f64>(
        f: &mut F,
        r: [f64; 4],
        whole: f64,
        tol: f64,
        depth: u32,
        nodes: &(Vec<f64>, Vec<f64>),
    ) -> Estimate {
        let [x0, x1, y0, y1] = r;
        let xm = 0.5 * (x0 + x1);
        let ym = 0.5 * (y0 + y1);
        let quads = [[x0, xm, y0, ym], [xm, x1, y0, ym], [x0, xm, ym, y1], [xm, x1, ym, y1]];
        let parts: Vec<f64> = quads.iter().map(|q| rect_gl(f, q[0], q[1], q[2], q[3], nodes)).collect();
        let sum: f64 = parts.iter().sum();
        let err = (sum - whole).abs();
        if err <= tol || depth == 0 {
            return Estimate { value: sum, error: err };
        }
        let mut out = Estimate::zero();
        for (q, &p) in quads.iter().zip(parts.iter()) {
            out = out + rec(f, *q, p, 0.25 * tol, depth - 1, nodes);
        }
        out
    }
    let whole = rect_gl(f, x0, x1, y0, y1, &nodes);
    rec(f, [x0, x1, y0, y1], whole, tol, depth, &nodes)
}

/// Node of the tanh-sinh rule on `[0, 1]`; `lo` and `hi` are the
/// distances to the two ends, each accurate near its own end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeNode {
    pub lo: f64,
    pub hi: f64,
    pub w: f64,
}

/// Tanh-sinh nodes with step `2^-level`, truncated once a node is within
/// `1e-15` of an end. Level `L` contains every node of level `L − 1`.
pub fn tanh_sinh_nodes(level: u32) -> Vec<DeNode> {
    let step = 0.5f64.powi(level as i32);
    let mut out = vec![];
    let mut k = 0i64;
    loop {
        let u = k as f64 * step;
        let q = 0.5 * std::f64::consts::PI * u.sinh();
        let e = (-2.0 * q).exp();
        let near = e / (1.0 + e);
        if near < 1e-15 {
            break;
        }
        let w = step * std::f64::consts::PI * u.cosh() * e / ((1.0 + e) * (1.0 + e));
        let far = 1.0 / (1.0 + e);
        if k == 0 {
            out.push(DeNode { lo: 0.5, hi: 0.5, w });
        } else {
            out.push(DeNode { lo: far, hi: near, w });
            out.push(DeNode { lo: near, hi: far, w });
        }
        k += 1;
    }
    out
}

/// Tanh-sinh integral of `f(x, x − a, b − x)` over `[a, b]`, with the
/// difference between levels `level` and `level − 1` as error.
pub fn tanh_sinh<F: FnMut(f64, f64, f64) -> f64>(mut f: F, a: f64, b: f64, level: u32) -> Estimate {
    let len = b - a;
    let fine = tanh_sinh_nodes(level);
    let coarse_step = 0.5f64.powi(level as i32 - 1);
    let mut total = 0.0;
    let mut coarse = 0.0;
    let step = 0.5f64.powi(level as i32);
    for (idx, n) in fine.iter().enumerate() {
        let v = f(a + n.lo * len, n.lo * len, n.hi * len) * n.w;
        total += v;
        // nodes 0, then pairs (k, ±): node k sits on the coarse grid when k is even
        let k = (idx + 1) / 2;
        if k % 2 == 0 {
            coarse += v * coarse_step / step;
        }
    }
    Estimate { value: total * len, error: ((total - coarse) * len).abs() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk15_exact_on_polynomials() {
        let mut f = |x: f64| 3.0 * x.powi(5) - x.powi(2) + 1.0;
        let e = gk15(&mut f, -1.0, 2.0);
        let exact = 3.0 * (64.0 - 1.0) / 6.0 - (8.0 + 1.0) / 3.0 + 3.0;
        assert!((e.value - exact).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_endpoint_sqrt() {
        let e = integrate(|x: f64| x.sqrt(), 0.0, 1.0, Tol::rel(1e-10));
        assert!((e.value - 2.0 / 3.0).abs() < 1e-9, "{e:?}");
    }

    #[test]
    fn near_zero_power_law() {
        let r = near_zero(|x: f64| x.powf(-0.5), 1.0, Tol::rel(1e-9));
        let e = r.converged().expect("converges");
        assert!((e.value - 2.0).abs() < 1e-7, "{e:?}");
    }

    #[test]
    fn near_zero_log_divergence() {
        let r = near_zero(|x: f64| 1.0 / x, 1.0, Tol::rel(1e-9));
        assert!(matches!(r, Improper::Diverged { .. }), "{r:?}");
    }

    #[test]
    fn near_zero_loglog_divergence() {
        let r = near_zero(|x: f64| 1.0 / (x * (1.0 - x.ln())), 0.5, Tol::rel(1e-9));
        assert!(matches!(r, Improper::Diverged { .. }), "{r:?}");
    }

    #[test]
    fn to_infinity_power_tail() {
        let r = to_infinity(|x: f64| x.powf(-1.5), 1.0, Tol::rel(1e-9));
        let e = r.converged().expect("converges");
        assert!((e.value - 2.0).abs() < 1e-7, "{e:?}");
        let r = to_infinity(|x: f64| 1.0 / x, 1.0, Tol::rel(1e-9));
        assert!(matches!(r, Improper::Diverged { .. }));
    }

    #[test]
    fn gauss_legendre_weights_sum_to_two() {
        for n in [1, 2, 5, 8] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
            if n > 1 {
                assert!((m2 - 2.0 / 3.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rect_adaptive_smooth() {
        let mut f = |x: f64, y: f64| (x * y).exp();
        let e = rect_adaptive(&mut f, 0.0, 1.0, 0.0, 1.0, 1e-12, 6);
        // ∫∫ e^{xy} = Σ 1/(n! (n+1)^2)
        let mut exact = 0.0;
        let mut fact = 1.0;
        for n in 0..20 {
            if n > 0 {
                fact *= n as f64;
            }
            exact += 1.0 / (fact * ((n + 1) * (n + 1)) as f64);
        }
        assert!((e.value - exact).abs() < 1e-11);
    }

    #[test]
    fn tanh_sinh_endpoint_singularity() {
        // ∫_0^1 (x(1-x))^{-1/2} dx = π
        let e = tanh_sinh(|_, a, b| (a * b).powf(-0.5), 0.0, 1.0, 6);
        assert!((e.value - std::f64::consts::PI).abs() < 1e-6, "{e:?}");
        let g = tanh_sinh(|x, _, _| x.exp(), -1.0, 2.0, 5);
        assert!((g.value - (2f64.exp() - (-1f64).exp())).abs() < 1e-13);
        assert!(g.error < 1e-8);
    }
}
