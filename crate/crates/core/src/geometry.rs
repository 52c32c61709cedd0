//! Analytic planar sets with exact signed distances.
//!
//! A primitive is an indicator plus a finite list of boundary pieces
//! (segments, rays, lines, circular arcs). Its signed distance is the
//! indicator sign times the distance to the nearest piece, which is exact
//! because the pieces are exactly the boundary. Modifiers compose through
//! the usual min/max/offset rules on the signed distance.
//!
//! Sign convention: `d > 0` inside, `d < 0` outside.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

pub type P2 = [f64; 2];

#[inline]
pub fn add(a: P2, b: P2) -> P2 {
    [a[0] + b[0], a[1] + b[1]]
}
#[inline]
pub fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}
#[inline]
pub fn mul(a: P2, s: f64) -> P2 {
    [a[0] * s, a[1] * s]
}
#[inline]
pub fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}
#[inline]
pub fn norm(a: P2) -> f64 {
    a[0].hypot(a[1])
}
#[inline]
pub fn dist(a: P2, b: P2) -> f64 {
    norm(sub(a, b))
}
#[inline]
pub fn unit(a: P2) -> P2 {
    let n = norm(a);
    [a[0] / n, a[1] / n]
}
#[inline]
pub fn polar(th: f64) -> P2 {
    [th.cos(), th.sin()]
}
#[inline]
fn rot(a: P2, th: f64) -> P2 {
    let (s, c) = th.sin_cos();
    [c * a[0] - s * a[1], s * a[0] + c * a[1]]
}

/// Axis-aligned window `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Window {
    pub fn square(half: f64) -> Window {
        Window { x0: -half, x1: half, y0: -half, y1: half }
    }

    pub fn contains(&self, p: P2) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    pub fn grow(&self, m: f64) -> Window {
        Window { x0: self.x0 - m, x1: self.x1 + m, y0: self.y0 - m, y1: self.y1 + m }
    }

    fn corners(&self) -> [P2; 4] {
        [[self.x0, self.y0], [self.x1, self.y0], [self.x1, self.y1], [self.x0, self.y1]]
    }

    fn hull<I: IntoIterator<Item = P2>>(pts: I) -> Window {
        let mut w = Window {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for p in pts {
            w.x0 = w.x0.min(p[0]);
            w.x1 = w.x1.max(p[0]);
            w.y0 = w.y0.min(p[1]);
            w.y1 = w.y1.max(p[1]);
        }
        w
    }

    /// Parameter range `t` of `o + t dir` inside the window.
    fn clip(&self, o: P2, dir: P2) -> Option<(f64, f64)> {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (oc, dc, a, b) in [(o[0], dir[0], self.x0, self.x1), (o[1], dir[1], self.y0, self.y1)] {
            if dc.abs() < 1e-300 {
                if oc < a || oc > b {
                    return None;
                }
            } else {
                let (t0, t1) = ((a - oc) / dc, (b - oc) / dc);
                lo = lo.max(t0.min(t1));
                hi = hi.min(t0.max(t1));
            }
        }
        (lo <= hi).then_some((lo, hi))
    }
}

pub const DEFAULT_WINDOW: Window = Window { x0: -8.0, x1: 8.0, y0: -8.0, y1: 8.0 };

/// One boundary piece; `n` is the outward unit normal.
#[derive(Debug, Clone, PartialEq)]
pub enum Piece {
    Seg { a: P2, b: P2, n: P2 },
    Ray { o: P2, dir: P2, n: P2 },
    Line { p: P2, dir: P2, n: P2 },
    /// Points `c + rad e(θ)`, `θ ∈ [t0, t0 + sweep]`; `convex` when the set
    /// lies inside the circle.
    Arc { c: P2, rad: f64, t0: f64, sweep: f64, convex: bool },
}

/// Nearest point on a piece.
#[derive(Debug, Clone, Copy)]
struct Foot {
    dist: f64,
    point: P2,
    normal: P2,
    kappa: f64,
}

fn wrap(t: f64) -> f64 {
    t.rem_euclid(2.0 * PI)
}

impl Piece {
    fn foot(&self, x: P2) -> Foot {
        match *self {
            Piece::Seg { a, b, n } => {
                let ab = sub(b, a);
                let t = (dot(sub(x, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
                let p = add(a, mul(ab, t));
                Foot { dist: dist(x, p), point: p, normal: n, kappa: 0.0 }
            }
            Piece::Ray { o, dir, n } => {
                let t = dot(sub(x, o), dir).max(0.0);
                let p = add(o, mul(dir, t));
                Foot { dist: dist(x, p), point: p, normal: n, kappa: 0.0 }
            }
            Piece::Line { p, dir, n } => {
                let t = dot(sub(x, p), dir);
                let q = add(p, mul(dir, t));
                Foot { dist: dist(x, q), point: q, normal: n, kappa: 0.0 }
            }
            Piece::Arc { c, rad, t0, sweep, convex } => {
                let v = sub(x, c);
                let th = if norm(v) == 0.0 { t0 } else { v[1].atan2(v[0]) };
                let rel = wrap(th - t0);
                let th = if rel <= sweep {
                    th
                } else if rel - sweep < 2.0 * PI - rel {
                    t0 + sweep
                } else {
                    t0
                };
                let e = polar(th);
                let p = add(c, mul(e, rad));
                let sgn = if convex { 1.0 } else { -1.0 };
                Foot { dist: dist(x, p), point: p, normal: mul(e, sgn), kappa: sgn / rad }
            }
        }
    }

    /// Line `(n, n·p)` or circle `(c, ±rad)` carrying the piece.
    fn carrier(&self) -> (P2, f64, bool) {
        match *self {
            Piece::Seg { a: p, n, .. } | Piece::Ray { o: p, n, .. } | Piece::Line { p, n, .. } => (n, dot(n, p), false),
            Piece::Arc { c, rad, convex, .. } => (c, if convex { rad } else { -rad }, true),
        }
    }

    fn kappa_abs(&self) -> f64 {
        match self {
            Piece::Arc { rad, .. } => 1.0 / rad,
            _ => 0.0,
        }
    }

    /// Ordered samples no farther apart than `h`, clipped to the window.
    fn sample(&self, h: f64, w: &Window) -> (Vec<BoundarySample>, bool) {
        let straight = |o: P2, dir: P2, t0: f64, t1: f64, n: P2| {
            let len = t1 - t0;
            let m = ((len / h).ceil() as usize).max(1);
            (0..=m)
                .map(|i| BoundarySample::smooth(add(o, mul(dir, t0 + len * i as f64 / m as f64)), n, 0.0))
                .collect::<Vec<_>>()
        };
        match *self {
            Piece::Seg { a, b, n } => {
                let len = dist(a, b);
                let dir = unit(sub(b, a));
                match w.clip(a, dir) {
                    Some((lo, hi)) => {
                        let (t0, t1) = (lo.max(0.0), hi.min(len));
                        if t0 > t1 {
                            (vec![], true)
                        } else {
                            (straight(a, dir, t0, t1, n), t0 > 0.0 || t1 < len)
                        }
                    }
                    None => (vec![], true),
                }
            }
            Piece::Ray { o, dir, n } => match w.clip(o, dir) {
                Some((lo, hi)) if hi >= lo.max(0.0) => (straight(o, dir, lo.max(0.0), hi, n), true),
                _ => (vec![], true),
            },
            Piece::Line { p, dir, n } => match w.clip(p, dir) {
                Some((lo, hi)) => (straight(p, dir, lo, hi, n), true),
                None => (vec![], true),
            },
            Piece::Arc { c, rad, t0, sweep, convex } => {
                let m = ((rad * sweep / h).ceil() as usize).max(2);
                let sgn = if convex { 1.0 } else { -1.0 };
                let mut out = Vec::with_capacity(m + 1);
                let mut partial = false;
                for i in 0..=m {
                    let th = t0 + sweep * i as f64 / m as f64;
                    let e = polar(th);
                    let p = add(c, mul(e, rad));
                    if w.contains(p) {
                        out.push(BoundarySample::smooth(p, mul(e, sgn), sgn / rad));
                    } else {
                        partial = true;
                    }
                }
                (out, partial)
            }
        }
    }
}

/// Non-smooth boundary point. `convex` when the set is locally a wedge of
/// opening below π, `concave` when the complement is; both for crossings.
#[derive(Debug, Clone, PartialEq)]
pub struct Corner {
    pub p: P2,
    pub n1: P2,
    pub n2: P2,
    pub convex: bool,
    pub concave: bool,
}

impl Corner {
    fn new(p: P2, n1: P2, n2: P2, convex: bool) -> Corner {
        Corner { p, n1, n2, convex, concave: !convex }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regularity {
    Smooth,
    Angular,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundarySample {
    pub point: P2,
    pub outward_normal: P2,
    pub regularity: Regularity,
    /// Signed curvature (positive where the set is locally convex).
    pub curvature: f64,
    pub local_curvature_bound: Option<f64>,
    /// One-sided normals at angular points.
    #[serde(skip)]
    pub one_sided: Option<(P2, P2)>,
    #[serde(skip)]
    pub convex: bool,
    #[serde(skip)]
    pub concave: bool,
}

impl BoundarySample {
    fn smooth(p: P2, n: P2, kappa: f64) -> BoundarySample {
        BoundarySample {
            point: p,
            outward_normal: n,
            regularity: Regularity::Smooth,
            curvature: kappa,
            local_curvature_bound: Some(kappa.abs()),
            one_sided: None,
            convex: false,
            concave: false,
        }
    }

    fn corner(c: &Corner) -> BoundarySample {
        let s = add(c.n1, c.n2);
        let n = if norm(s) > 1e-12 { unit(s) } else { c.n1 };
        BoundarySample {
            point: c.p,
            outward_normal: n,
            regularity: Regularity::Angular,
            curvature: 0.0,
            local_curvature_bound: None,
            one_sided: Some((c.n1, c.n2)),
            convex: c.convex,
            concave: c.concave,
        }
    }

    fn map(&self, f: &dyn Fn(P2) -> P2, g: &dyn Fn(P2) -> P2, kscale: f64) -> BoundarySample {
        let mut s = self.clone();
        s.point = f(self.point);
        s.outward_normal = g(self.outward_normal);
        s.one_sided = self.one_sided.map(|(a, b)| (g(a), g(b)));
        s.curvature *= kscale;
        s.local_curvature_bound = self.local_curvature_bound.map(|b| b * kscale.abs());
        s
    }
}

/// Result of [`PlanarSet::boundary_sample`].
#[derive(Debug, Clone, Serialize)]
pub struct BoundarySampling {
    pub samples: Vec<BoundarySample>,
    /// Boundary extends past the window.
    pub partial: bool,
}

/// Local boundary data at the point nearest to a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Local {
    pub point: P2,
    pub normal: P2,
    pub kappa: f64,
    /// Bound on `|κ|` over the boundary within the query radius.
    pub kappa_bound: f64,
    /// Lower bounds on the distance from the query to corners.
    pub convex_corner: f64,
    pub concave_corner: f64,
    /// The boundary within the query radius is one line or one circle.
    pub uniform: bool,
}

impl Local {
    pub fn corner_distance(&self) -> f64 {
        self.convex_corner.min(self.concave_corner)
    }
}

/// Far-field description used by tail estimates.
#[derive(Debug, Clone, PartialEq)]
pub enum Asymptote {
    /// Contained in `B_radius(0)`.
    Bounded { radius: f64 },
    /// Outside `B_core(0)` the boundary is the listed rays, and the set
    /// fills the angular fraction `measure / 2π` of large circles.
    Cone { rays: Vec<(P2, P2)>, measure: f64, core: f64 },
    /// Whole plane minus a bounded set, or unknown.
    CoBounded { radius: f64 },
    Unknown,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("no boundary inside the window")]
    EmptyBoundary,
}

/// Named analytic shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Primitive {
    Ball {
        #[serde(default)]
        center: P2,
        radius: f64,
    },
    /// `{x : x·normal ≤ offset}`.
    Halfplane { normal: P2, offset: f64 },
    /// `|x1| ≥ |x2|`.
    Cross,
    /// `x1 x2 ≥ 0`.
    RotatedCross,
    /// `[-r,r]² ∪ cross`.
    PerturbedCross { r: f64 },
    /// `(plane ∖ cross) ∪ [-r,r]²`.
    ComplementCrossSquare { r: f64 },
    /// `[r,∞)² ∪ (-∞,-r]²`.
    BoxPair { r: f64 },
    /// `(-∞,-r]×[r,∞) ∪ [r,∞)×(-∞,-r]`.
    RotatedBoxPair { r: f64 },
    /// Hulls of `B_1(-1,1)` and of `B_1(1,-1)` with the origin.
    Droplet,
    /// Hulls of `B_1(±√2,0)` with the origin.
    Droplet0,
    /// `[-r,r]² ∪ droplet0`.
    DropletR { r: f64 },
    /// `[-2r,2r]×[-r,r]` with hulls of `B_{1-δ}(±√2,0)` and the origin.
    PinchedDroplet { delta: f64, r: f64 },
    /// `B_1(-1,0) ∪ B_1(1,0)`.
    TangentBalls,
    /// `B_r(±(1+δ)r, 0)`.
    NearTangent { delta: f64, r: f64 },
    /// Balls of radius `1-ε-c0 t` centered at `±(radius + ε - μ t, 0)`.
    BarrierPair { eps: f64, mu: f64, c0: f64, t: f64 },
    /// Points within `radius` of `[-half_length, half_length] × {0}`.
    Stadium { half_length: f64, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Modifier {
    Erode { lambda: f64 },
    Dilate { lambda: f64 },
    Scale { factor: f64 },
    Rotate { theta: f64 },
    Translate { v: P2 },
    Union { with: Box<ShapeSpec> },
    Intersection { with: Box<ShapeSpec> },
    Complement,
}

/// Serializable shape: a primitive followed by modifiers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    #[serde(flatten)]
    pub base: Primitive,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modifiers: Vec<Modifier>,
}

impl ShapeSpec {
    pub fn build(&self) -> Result<PlanarSet, GeometryError> {
        let mut s = make_shape(&self.base)?;
        for m in &self.modifiers {
            s = match m {
                Modifier::Erode { lambda } => s.erode(*lambda)?,
                Modifier::Dilate { lambda } => s.dilate(*lambda)?,
                Modifier::Scale { factor } => s.scale(*factor)?,
                Modifier::Rotate { theta } => s.rotate(*theta),
                Modifier::Translate { v } => s.translate(*v),
                Modifier::Union { with } => s.union(with.build()?),
                Modifier::Intersection { with } => s.intersection(with.build()?),
                Modifier::Complement => s.complement(),
            };
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Inside {
    Ball { c: P2, r: f64 },
    Half { n: P2, off: f64 },
    Cross,
    RotCross,
    /// `|x1|,|x2| ≤ a` or the cross; `complement` selects the cross complement.
    SquareCross { hx: f64, hy: f64, complement: bool },
    Quadrants { r: f64, rotated: bool },
    /// Union of lobes (disk ∪ triangle with the origin) and an optional box.
    Lobes { lobes: Vec<Lobe>, boxed: Option<(f64, f64)> },
    Balls(Vec<(P2, f64)>),
    Stadium { l: f64, a: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Lobe {
    c: P2,
    a: f64,
    t1: P2,
    t2: P2,
}

impl Lobe {
    fn new(c: P2, a: f64) -> Lobe {
        let d = norm(c);
        let alpha = (a / d).asin();
        let len = (d * d - a * a).sqrt();
        let phi = c[1].atan2(c[0]);
        Lobe { c, a, t1: mul(polar(phi + alpha), len), t2: mul(polar(phi - alpha), len) }
    }

    fn contains(&self, x: P2) -> bool {
        if dist(x, self.c) <= self.a {
            return true;
        }
        // triangle (0, t1, t2)
        let cr = |u: P2, v: P2| u[0] * v[1] - u[1] * v[0];
        let s1 = cr(self.t2, x);
        let s2 = cr(sub(self.t1, self.t2), sub(x, self.t2));
        let s3 = cr(mul(self.t1, -1.0), sub(x, self.t1));
        (s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0) || (s1 <= 0.0 && s2 <= 0.0 && s3 <= 0.0)
    }

    /// Pieces starting from the points `p1` (on segment to `t1`) and `p2`.
    fn pieces(&self, p1: P2, p2: P2) -> Vec<Piece> {
        let n1 = outward_of_segment(p1, self.t1, self.c);
        let n2 = outward_of_segment(p2, self.t2, self.c);
        let e1 = sub(self.t1, self.c);
        let e2 = sub(self.t2, self.c);
        let a1 = e1[1].atan2(e1[0]);
        let a2 = e2[1].atan2(e2[0]);
        // the arc runs from t1 to t2 the long way round, away from the origin
        let sweep = wrap(a2 - a1);
        let (t0, sw) = if sweep > PI { (a1, sweep) } else { (a2, 2.0 * PI - sweep) };
        vec![
            Piece::Seg { a: p1, b: self.t1, n: n1 },
            Piece::Seg { a: p2, b: self.t2, n: n2 },
            Piece::Arc { c: self.c, rad: self.a, t0, sweep: sw, convex: true },
        ]
    }
}

/// Normal to segment `ab` pointing away from `inside`.
fn outward_of_segment(a: P2, b: P2, inside: P2) -> P2 {
    let d = unit(sub(b, a));
    let n = [d[1], -d[0]];
    if dot(n, sub(inside, a)) > 0.0 {
        mul(n, -1.0)
    } else {
        n
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Prim {
    spec: Primitive,
    inside: Inside,
    pieces: Vec<Piece>,
    corners: Vec<Corner>,
    asym: Asymptote,
}

impl Prim {
    fn contains(&self, x: P2) -> bool {
        match &self.inside {
            Inside::Ball { c, r } => dist(x, *c) <= *r,
            Inside::Half { n, off } => dot(x, *n) <= *off,
            Inside::Cross => x[0].abs() >= x[1].abs(),
            Inside::RotCross => x[0] * x[1] >= 0.0,
            Inside::SquareCross { hx, hy, complement } => {
                let sq = x[0].abs() <= *hx && x[1].abs() <= *hy;
                let cr = if *complement { x[0].abs() <= x[1].abs() } else { x[0].abs() >= x[1].abs() };
                sq || cr
            }
            Inside::Quadrants { r, rotated } => {
                let y1 = if *rotated { -x[0] } else { x[0] };
                (y1 >= *r && x[1] >= *r) || (y1 <= -*r && x[1] <= -*r)
            }
            Inside::Lobes { lobes, boxed } => {
                boxed.is_some_and(|(hx, hy)| x[0].abs() <= hx && x[1].abs() <= hy)
                    || lobes.iter().any(|l| l.contains(x))
            }
            Inside::Balls(bs) => bs.iter().any(|(c, r)| dist(x, *c) <= *r),
            Inside::Stadium { l, a } => {
                let px = x[0].clamp(-l, *l);
                dist(x, [px, 0.0]) <= *a
            }
        }
    }

    fn nearest(&self, x: P2) -> Foot {
        let mut best = Foot { dist: f64::INFINITY, point: x, normal: [1.0, 0.0], kappa: 0.0 };
        for p in &self.pieces {
            let f = p.foot(x);
            if f.dist < best.dist {
                best = f;
            }
        }
        best
    }

    fn sdf(&self, x: P2) -> f64 {
        let d = self.nearest(x).dist;
        if self.contains(x) {
            d
        } else {
            -d
        }
    }

    fn local(&self, x: P2, radius: f64) -> Local {
        let f = self.nearest(x);
        let mut kb = f.kappa.abs();
        let own = self.pieces.iter().find(|p| p.foot(x).dist == f.dist).map(|p| p.carrier());
        let mut uniform = true;
        for p in &self.pieces {
            if p.foot(x).dist <= f.dist + radius {
                kb = kb.max(p.kappa_abs());
                if let Some((a, b, circ)) = own {
                    let (a2, b2, c2) = p.carrier();
                    if circ != c2 || dist(a, a2) > 1e-12 || (b - b2).abs() > 1e-12 {
                        uniform = false;
                    }
                }
            }
        }
        let mut cvx = f64::INFINITY;
        let mut ccv = f64::INFINITY;
        for c in &self.corners {
            let d = dist(x, c.p);
            if c.convex {
                cvx = cvx.min(d);
            }
            if c.concave {
                ccv = ccv.min(d);
            }
        }
        let uniform = uniform && cvx.min(ccv) > f.dist + radius;
        Local { point: f.point, normal: f.normal, kappa: f.kappa, kappa_bound: kb, convex_corner: cvx, concave_corner: ccv, uniform }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Prim(Prim),
    Erode(Box<PlanarSet>, f64),
    Dilate(Box<PlanarSet>, f64),
    Scale(Box<PlanarSet>, f64),
    Rotate(Box<PlanarSet>, f64),
    Translate(Box<PlanarSet>, P2),
    Union(Box<PlanarSet>, Box<PlanarSet>),
    Intersection(Box<PlanarSet>, Box<PlanarSet>),
    Complement(Box<PlanarSet>),
}

/// Analytic planar set.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarSet {
    node: Node,
}

fn ray(o: P2, dir: P2, n: P2) -> Piece {
    Piece::Ray { o, dir: unit(dir), n: unit(n) }
}

fn seg(a: P2, b: P2, n: P2) -> Piece {
    Piece::Seg { a, b, n: unit(n) }
}

fn circle(c: P2, r: f64) -> Piece {
    Piece::Arc { c, rad: r, t0: 0.0, sweep: 2.0 * PI, convex: true }
}

fn param(ok: bool, msg: impl Into<String>) -> Result<(), GeometryError> {
    if ok {
        Ok(())
    } else {
        Err(GeometryError::Parameter(msg.into()))
    }
}

/// Four rays of the cross `|x1| ≥ |x2|` starting at `(±h, ±h)`, with the
/// outward normals of `sign · cross`.
fn cross_rays(h: f64, sign: f64) -> Vec<Piece> {
    let s = FRAC_1_SQRT_2;
    vec![
        ray([h, h], [1.0, 1.0], mul([-s, s], sign)),
        ray([h, -h], [1.0, -1.0], mul([-s, -s], sign)),
        ray([-h, h], [-1.0, 1.0], mul([s, s], sign)),
        ray([-h, -h], [-1.0, -1.0], mul([s, -s], sign)),
    ]
}

fn cross_rays_asym(h: f64) -> Vec<(P2, P2)> {
    [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]
        .iter()
        .map(|d: &P2| ([h * d[0], h * d[1]], unit(*d)))
        .collect()
}

/// Build a named primitive.
pub fn make_shape(spec: &Primitive) -> Result<PlanarSet, GeometryError> {
    let s = FRAC_1_SQRT_2;
    let prim = match *spec {
        Primitive::Ball { center, radius } => {
            param(radius > 0.0, "ball radius must be positive")?;
            Prim {
                spec: spec.clone(),
                inside: Inside::Ball { c: center, r: radius },
                pieces: vec![circle(center, radius)],
                corners: vec![],
                asym: Asymptote::Bounded { radius: norm(center) + radius },
            }
        }
        Primitive::Halfplane { normal, offset } => {
            param(norm(normal) > 0.0, "halfplane normal must be nonzero")?;
            let n = unit(normal);
            let p = mul(n, offset / norm(normal));
            let dir = [-n[1], n[0]];
            Prim {
                spec: spec.clone(),
                inside: Inside::Half { n, off: offset / norm(normal) },
                pieces: vec![Piece::Line { p, dir, n }],
                corners: vec![],
                asym: Asymptote::Cone {
                    rays: vec![(p, dir), (p, mul(dir, -1.0))],
                    measure: PI,
                    core: norm(p),
                },
            }
        }
        Primitive::Cross => Prim {
            spec: spec.clone(),
            inside: Inside::Cross,
            pieces: cross_rays(0.0, 1.0),
            corners: vec![
                Corner { p: [0.0, 0.0], n1: [-s, s], n2: [-s, -s], convex: true, concave: true },
                Corner { p: [0.0, 0.0], n1: [s, s], n2: [s, -s], convex: true, concave: true },
            ],
            asym: Asymptote::Cone { rays: cross_rays_asym(0.0), measure: PI, core: 0.0 },
        },
        Primitive::RotatedCross => Prim {
            spec: spec.clone(),
            inside: Inside::RotCross,
            pieces: vec![
                ray([0.0, 0.0], [1.0, 0.0], [0.0, -1.0]),
                ray([0.0, 0.0], [-1.0, 0.0], [0.0, 1.0]),
                ray([0.0, 0.0], [0.0, 1.0], [-1.0, 0.0]),
                ray([0.0, 0.0], [0.0, -1.0], [1.0, 0.0]),
            ],
            corners: vec![
                Corner { p: [0.0, 0.0], n1: [0.0, -1.0], n2: [-1.0, 0.0], convex: true, concave: true },
                Corner { p: [0.0, 0.0], n1: [0.0, 1.0], n2: [1.0, 0.0], convex: true, concave: true },
            ],
            asym: Asymptote::Cone {
                rays: vec![
                    ([0.0, 0.0], [1.0, 0.0]),
                    ([0.0, 0.0], [-1.0, 0.0]),
                    ([0.0, 0.0], [0.0, 1.0]),
                    ([0.0, 0.0], [0.0, -1.0]),
                ],
                measure: PI,
                core: 0.0,
            },
        },
        Primitive::PerturbedCross { r } | Primitive::ComplementCrossSquare { r } => {
            param(r > 0.0, "r must be positive")?;
            let comp = matches!(spec, Primitive::ComplementCrossSquare { .. });
            let mut pieces = cross_rays(r, if comp { -1.0 } else { 1.0 });
            let mut corners = vec![];
            if comp {
                pieces.push(seg([r, -r], [r, r], [1.0, 0.0]));
                pieces.push(seg([-r, -r], [-r, r], [-1.0, 0.0]));
                for (cx, cy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    corners.push(Corner::new([cx * r, cy * r], [cx, 0.0], [cx * s, -cy * s], false));
                }
            } else {
                pieces.push(seg([-r, r], [r, r], [0.0, 1.0]));
                pieces.push(seg([-r, -r], [r, -r], [0.0, -1.0]));
                for (cx, cy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    corners.push(Corner::new([cx * r, cy * r], [0.0, cy], [-cx * s, cy * s], false));
                }
            }
            Prim {
                spec: spec.clone(),
                inside: Inside::SquareCross { hx: r, hy: r, complement: comp },
                pieces,
                corners,
                asym: Asymptote::Cone { rays: cross_rays_asym(r), measure: PI, core: r * SQRT_2 },
            }
        }
        Primitive::BoxPair { r } | Primitive::RotatedBoxPair { r } => {
            param(r > 0.0, "r must be positive")?;
            let rotated = matches!(spec, Primitive::RotatedBoxPair { .. });
            // build unrotated, then reflect x1 -> -x1 when rotated
            let f = |p: P2| if rotated { [-p[0], p[1]] } else { p };
            let pieces = vec![
                ray(f([r, r]), f([1.0, 0.0]), f([0.0, -1.0])),
                ray(f([r, r]), f([0.0, 1.0]), f([-1.0, 0.0])),
                ray(f([-r, -r]), f([-1.0, 0.0]), f([0.0, 1.0])),
                ray(f([-r, -r]), f([0.0, -1.0]), f([1.0, 0.0])),
            ];
            let corners = vec![
                Corner::new(f([r, r]), f([0.0, -1.0]), f([-1.0, 0.0]), true),
                Corner::new(f([-r, -r]), f([0.0, 1.0]), f([1.0, 0.0]), true),
            ];
            let rays = vec![
                (f([r, r]), f([1.0, 0.0])),
                (f([r, r]), f([0.0, 1.0])),
                (f([-r, -r]), f([-1.0, 0.0])),
                (f([-r, -r]), f([0.0, -1.0])),
            ];
            Prim {
                spec: spec.clone(),
                inside: Inside::Quadrants { r, rotated },
                pieces,
                corners,
                asym: Asymptote::Cone { rays, measure: PI, core: r * SQRT_2 },
            }
        }
        Primitive::Droplet | Primitive::Droplet0 => {
            let cs: [P2; 2] =
                if matches!(spec, Primitive::Droplet) { [[-1.0, 1.0], [1.0, -1.0]] } else { [[SQRT_2, 0.0], [-SQRT_2, 0.0]] };
            let lobes: Vec<Lobe> = cs.iter().map(|c| Lobe::new(*c, 1.0)).collect();
            let mut pieces = vec![];
            let mut corners = vec![];
            for l in &lobes {
                let ps = l.pieces([0.0, 0.0], [0.0, 0.0]);
                let (n1, n2) = match (&ps[0], &ps[1]) {
                    (Piece::Seg { n: a, .. }, Piece::Seg { n: b, .. }) => (*a, *b),
                    _ => unreachable!(),
                };
                corners.push(Corner { p: [0.0, 0.0], n1, n2, convex: true, concave: true });
                pieces.extend(ps);
            }
            Prim {
                spec: spec.clone(),
                inside: Inside::Lobes { lobes, boxed: None },
                pieces,
                corners,
                asym: Asymptote::Bounded { radius: SQRT_2 + 1.0 },
            }
        }
        Primitive::DropletR { r } => {
            param(r > 0.0 && r < 0.5, "droplet_r needs r in (0, 1/2)")?;
            pinched(spec, 0.0, r, r)?
        }
        Primitive::PinchedDroplet { delta, r } => {
            param(delta > 0.0 && delta < r, "pinched_droplet needs 0 < delta < r")?;
            pinched(spec, delta, r, 2.0 * r)?
        }
        Primitive::TangentBalls => Prim {
            spec: spec.clone(),
            inside: Inside::Balls(vec![([-1.0, 0.0], 1.0), ([1.0, 0.0], 1.0)]),
            pieces: vec![circle([-1.0, 0.0], 1.0), circle([1.0, 0.0], 1.0)],
            corners: vec![Corner::new([0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], false)],
            asym: Asymptote::Bounded { radius: 2.0 },
        },
        Primitive::NearTangent { delta, r } => {
            param((0.0..=0.125).contains(&delta), "near_tangent needs delta in [0, 1/8]")?;
            param(r > 0.0, "r must be positive")?;
            let c = (1.0 + delta) * r;
            let corners = if delta == 0.0 {
                vec![Corner::new([0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], false)]
            } else {
                vec![]
            };
            Prim {
                spec: spec.clone(),
                inside: Inside::Balls(vec![([c, 0.0], r), ([-c, 0.0], r)]),
                pieces: vec![circle([c, 0.0], r), circle([-c, 0.0], r)],
                corners,
                asym: Asymptote::Bounded { radius: c + r },
            }
        }
        Primitive::BarrierPair { eps, mu, c0, t } => {
            let rad = 1.0 - eps - c0 * t;
            let gap = eps - mu * t;
            param(eps > 0.0 && eps < 1.0, "barrier_pair needs eps in (0,1)")?;
            param(rad > 0.0, "barrier_pair radius 1 - eps - c0 t must be positive")?;
            param(gap >= 0.0, "barrier_pair balls overlap (eps - mu t < 0)")?;
            let c = rad + gap;
            let corners = if gap == 0.0 {
                vec![Corner::new([0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], false)]
            } else {
                vec![]
            };
            Prim {
                spec: spec.clone(),
                inside: Inside::Balls(vec![([c, 0.0], rad), ([-c, 0.0], rad)]),
                pieces: vec![circle([c, 0.0], rad), circle([-c, 0.0], rad)],
                corners,
                asym: Asymptote::Bounded { radius: c + rad },
            }
        }
        Primitive::Stadium { half_length: l, radius: a } => {
            param(l >= 0.0 && a > 0.0, "stadium needs half_length >= 0, radius > 0")?;
            Prim {
                spec: spec.clone(),
                inside: Inside::Stadium { l, a },
                pieces: vec![
                    seg([-l, a], [l, a], [0.0, 1.0]),
                    seg([-l, -a], [l, -a], [0.0, -1.0]),
                    Piece::Arc { c: [l, 0.0], rad: a, t0: -0.5 * PI, sweep: PI, convex: true },
                    Piece::Arc { c: [-l, 0.0], rad: a, t0: 0.5 * PI, sweep: PI, convex: true },
                ],
                corners: vec![],
                asym: Asymptote::Bounded { radius: l + a },
            }
        }
    };
    Ok(PlanarSet { node: Node::Prim(prim) })
}

/// Box `[-bx, bx] × [-r, r]` joined to lobes of radius `1-δ` at `(±√2, 0)`.
fn pinched(spec: &Primitive, delta: f64, r: f64, bx: f64) -> Result<Prim, GeometryError> {
    let a = 1.0 - delta;
    let alpha = (a / SQRT_2).asin();
    let xc = r / alpha.tan();
    let len = (2.0 - a * a).sqrt();
    param(xc <= bx + 1e-12, "box top edge does not reach the lobe boundary")?;
    param(bx < len * alpha.cos(), "box reaches past the lobe tangent points")?;
    let xc = xc.min(bx);
    let lobes = vec![Lobe::new([SQRT_2, 0.0], a), Lobe::new([-SQRT_2, 0.0], a)];
    let mut pieces = vec![seg([-xc, r], [xc, r], [0.0, 1.0]), seg([-xc, -r], [xc, -r], [0.0, -1.0])];
    let mut corners = vec![];
    for l in &lobes {
        let sx = l.c[0].signum();
        // t1 has positive x2 by construction for the right lobe
        let (p_up, p_dn) = ([sx * xc, r], [sx * xc, -r]);
        let (p1, p2) = if l.t1[1] > 0.0 { (p_up, p_dn) } else { (p_dn, p_up) };
        let ps = l.pieces(p1, p2);
        for (p, piece) in [(p1, &ps[0]), (p2, &ps[1])] {
            if let Piece::Seg { n, .. } = piece {
                corners.push(Corner::new(p, [0.0, p[1].signum()], *n, false));
            }
        }
        pieces.extend(ps);
    }
    Ok(Prim {
        spec: spec.clone(),
        inside: Inside::Lobes { lobes, boxed: Some((bx, r)) },
        pieces,
        corners,
        asym: Asymptote::Bounded { radius: SQRT_2 + a },
    })
}

impl PlanarSet {
    fn wrap(node: Node) -> PlanarSet {
        PlanarSet { node }
    }

    /// `{d ≥ λ}`.
    pub fn erode(self, lambda: f64) -> Result<PlanarSet, GeometryError> {
        param(lambda >= 0.0, "erosion depth must be nonnegative")?;
        Ok(Self::wrap(Node::Erode(Box::new(self), lambda)))
    }

    /// `{d ≥ -λ}`.
    pub fn dilate(self, lambda: f64) -> Result<PlanarSet, GeometryError> {
        param(lambda >= 0.0, "dilation radius must be nonnegative")?;
        Ok(Self::wrap(Node::Dilate(Box::new(self), lambda)))
    }

    pub fn scale(self, factor: f64) -> Result<PlanarSet, GeometryError> {
        param(factor > 0.0, "scale factor must be positive")?;
        Ok(Self::wrap(Node::Scale(Box::new(self), factor)))
    }

    pub fn rotate(self, theta: f64) -> PlanarSet {
        Self::wrap(Node::Rotate(Box::new(self), theta))
    }

    pub fn translate(self, v: P2) -> PlanarSet {
        Self::wrap(Node::Translate(Box::new(self), v))
    }

    pub fn union(self, other: PlanarSet) -> PlanarSet {
        Self::wrap(Node::Union(Box::new(self), Box::new(other)))
    }

    pub fn intersection(self, other: PlanarSet) -> PlanarSet {
        Self::wrap(Node::Intersection(Box::new(self), Box::new(other)))
    }

    pub fn complement(self) -> PlanarSet {
        Self::wrap(Node::Complement(Box::new(self)))
    }

    /// The named primitive when the set is unmodified.
    pub fn primitive(&self) -> Option<&Primitive> {
        match &self.node {
            Node::Prim(p) => Some(&p.spec),
            _ => None,
        }
    }

    /// Signed distance to the boundary, positive inside.
    pub fn signed_distance(&self, x: P2) -> f64 {
        match &self.node {
            Node::Prim(p) => p.sdf(x),
            Node::Erode(e, l) => e.signed_distance(x) - l,
            Node::Dilate(e, l) => e.signed_distance(x) + l,
            Node::Scale(e, f) => f * e.signed_distance(mul(x, 1.0 / f)),
            Node::Rotate(e, th) => e.signed_distance(rot(x, -th)),
            Node::Translate(e, v) => e.signed_distance(sub(x, *v)),
            Node::Union(a, b) => a.signed_distance(x).max(b.signed_distance(x)),
            Node::Intersection(a, b) => a.signed_distance(x).min(b.signed_distance(x)),
            Node::Complement(e) => -e.signed_distance(x),
        }
    }

    pub fn indicator(&self, x: P2) -> bool {
        match &self.node {
            Node::Prim(p) => p.contains(x),
            _ => self.signed_distance(x) >= 0.0,
        }
    }

    /// Boundary data at the point nearest to `x`; `radius` sets the
    /// neighbourhood used for the curvature bound.
    pub fn local(&self, x: P2, radius: f64) -> Local {
        match &self.node {
            Node::Prim(p) => p.local(x, radius),
            Node::Erode(e, l) | Node::Dilate(e, l) => {
                let sign = if matches!(self.node, Node::Dilate(..)) { 1.0 } else { -1.0 };
                let b = e.local(x, radius + l);
                let off = sub(x, b.point);
                let dn = norm(off);
                let (normal, kappa) = if dn > 1e-12 * (1.0 + l) {
                    let n = mul(off, sign / dn * if e.signed_distance(x) * sign < 0.0 { 1.0 } else { -1.0 });
                    // a foot at a corner of the base gives a circular arc of radius l
                    let at_corner = if sign > 0.0 { b.convex_corner } else { b.concave_corner } <= dn + 1e-9;
                    let k = if at_corner && (dot(n, b.normal) < 1.0 - 1e-9) {
                        sign / l
                    } else {
                        b.kappa / (1.0 + sign * l * b.kappa)
                    };
                    (n, k)
                } else {
                    (b.normal, b.kappa)
                };
                let point = add(b.point, mul(normal, sign * l));
                let moved = if sign > 0.0 { b.concave_corner } else { b.convex_corner };
                let moved = (moved - 2.5 * l).max(0.0);
                let kb = if b.kappa_bound * l < 0.5 {
                    b.kappa_bound / (1.0 - b.kappa_bound * l)
                } else {
                    f64::INFINITY
                };
                let near_arc = (if sign > 0.0 { b.convex_corner } else { b.concave_corner }) <= radius + 2.0 * l;
                let kb = if near_arc { kb.max(1.0 / l) } else { kb };
                let (cvx, ccv) = if sign > 0.0 { (f64::INFINITY, moved) } else { (moved, f64::INFINITY) };
                let uniform = b.uniform && b.convex_corner.min(b.concave_corner) > radius + 2.0 * l;
                Local { point, normal, kappa, kappa_bound: kb, convex_corner: cvx, concave_corner: ccv, uniform }
            }
            Node::Scale(e, f) => {
                let b = e.local(mul(x, 1.0 / f), radius / f);
                Local {
                    point: mul(b.point, *f),
                    normal: b.normal,
                    kappa: b.kappa / f,
                    kappa_bound: b.kappa_bound / f,
                    convex_corner: b.convex_corner * f,
                    concave_corner: b.concave_corner * f,
                    uniform: b.uniform,
                }
            }
            Node::Rotate(e, th) => {
                let b = e.local(rot(x, -th), radius);
                Local { point: rot(b.point, *th), normal: rot(b.normal, *th), ..b }
            }
            Node::Translate(e, v) => {
                let b = e.local(sub(x, *v), radius);
                Local { point: add(b.point, *v), ..b }
            }
            Node::Union(a, b) | Node::Intersection(a, b) => {
                let uni = matches!(self.node, Node::Union(..));
                let (da, db) = (a.signed_distance(x), b.signed_distance(x));
                let a_wins = if uni { da >= db } else { da <= db };
                let (w, o, gap, dw, do_) =
                    if a_wins { (a, b, (da - db).abs(), da, db) } else { (b, a, (da - db).abs(), db, da) };
                let mut l = w.local(x, radius);
                if do_.abs() <= radius + dw.abs() {
                    l.kappa_bound = l.kappa_bound.max(o.local(x, radius).kappa_bound);
                    l.uniform = false;
                }
                if uni {
                    l.concave_corner = l.concave_corner.min(0.5 * gap);
                } else {
                    l.convex_corner = l.convex_corner.min(0.5 * gap);
                }
                l
            }
            Node::Complement(e) => {
                let b = e.local(x, radius);
                Local {
                    normal: mul(b.normal, -1.0),
                    kappa: -b.kappa,
                    convex_corner: b.concave_corner,
                    concave_corner: b.convex_corner,
                    ..b
                }
            }
        }
    }

    /// Far-field description of the set.
    pub fn asymptote(&self) -> Asymptote {
        match &self.node {
            Node::Prim(p) => p.asym.clone(),
            Node::Erode(e, l) | Node::Dilate(e, l) => match e.asymptote() {
                Asymptote::Bounded { radius } => Asymptote::Bounded { radius: radius + l },
                Asymptote::CoBounded { radius } => Asymptote::CoBounded { radius: radius + l },
                Asymptote::Cone { rays, measure, core } => {
                    // rays move by at most l sideways; widen them into the bound
                    Asymptote::Cone { rays: self.offset_rays(e, &rays, *l), measure, core: core + 3.0 * l }
                }
                Asymptote::Unknown => Asymptote::Unknown,
            },
            Node::Scale(e, f) => match e.asymptote() {
                Asymptote::Bounded { radius } => Asymptote::Bounded { radius: radius * f },
                Asymptote::CoBounded { radius } => Asymptote::CoBounded { radius: radius * f },
                Asymptote::Cone { rays, measure, core } => Asymptote::Cone {
                    rays: rays.into_iter().map(|(o, d)| (mul(o, *f), d)).collect(),
                    measure,
                    core: core * f,
                },
                Asymptote::Unknown => Asymptote::Unknown,
            },
            Node::Rotate(e, th) => match e.asymptote() {
                Asymptote::Cone { rays, measure, core } => Asymptote::Cone {
                    rays: rays.into_iter().map(|(o, d)| (rot(o, *th), rot(d, *th))).collect(),
                    measure,
                    core,
                },
                a => a,
            },
            Node::Translate(e, v) => match e.asymptote() {
                Asymptote::Bounded { radius } => Asymptote::Bounded { radius: radius + norm(*v) },
                Asymptote::CoBounded { radius } => Asymptote::CoBounded { radius: radius + norm(*v) },
                Asymptote::Cone { rays, measure, core } => Asymptote::Cone {
                    rays: rays.into_iter().map(|(o, d)| (add(o, *v), d)).collect(),
                    measure,
                    core: core + norm(*v),
                },
                Asymptote::Unknown => Asymptote::Unknown,
            },
            Node::Complement(e) => match e.asymptote() {
                Asymptote::Bounded { radius } => Asymptote::CoBounded { radius },
                Asymptote::CoBounded { radius } => Asymptote::Bounded { radius },
                Asymptote::Cone { rays, measure, core } => Asymptote::Cone { rays, measure: 2.0 * PI - measure, core },
                Asymptote::Unknown => Asymptote::Unknown,
            },
            Node::Union(a, b) | Node::Intersection(a, b) => {
                let uni = matches!(self.node, Node::Union(..));
                match (a.asymptote(), b.asymptote()) {
                    (Asymptote::Bounded { radius: r1 }, Asymptote::Bounded { radius: r2 }) if uni => {
                        Asymptote::Bounded { radius: r1.max(r2) }
                    }
                    (Asymptote::Bounded { radius }, _) | (_, Asymptote::Bounded { radius }) if !uni => {
                        Asymptote::Bounded { radius }
                    }
                    (Asymptote::Bounded { radius }, Asymptote::Cone { rays, measure, core })
                    | (Asymptote::Cone { rays, measure, core }, Asymptote::Bounded { radius })
                        if uni =>
                    {
                        Asymptote::Cone { rays, measure, core: core.max(radius) }
                    }
                    (Asymptote::CoBounded { radius }, Asymptote::Cone { rays, measure, core })
                    | (Asymptote::Cone { rays, measure, core }, Asymptote::CoBounded { radius })
                        if !uni =>
                    {
                        Asymptote::Cone { rays, measure, core: core.max(radius) }
                    }
                    (Asymptote::CoBounded { radius: r1 }, Asymptote::CoBounded { radius: r2 }) => {
                        Asymptote::CoBounded { radius: r1.max(r2) }
                    }
                    (Asymptote::CoBounded { radius }, _) | (_, Asymptote::CoBounded { radius }) if uni => {
                        Asymptote::CoBounded { radius }
                    }
                    _ => Asymptote::Unknown,
                }
            }
        }
    }

    fn offset_rays(&self, base: &PlanarSet, rays: &[(P2, P2)], l: f64) -> Vec<(P2, P2)> {
        let sign = if matches!(self.node, Node::Dilate(..)) { 1.0 } else { -1.0 };
        rays.iter()
            .map(|&(o, d)| {
                // probe far along the ray for its outward normal
                let far = add(o, mul(d, 1e3 * (1.0 + norm(o))));
                let n = base.local(far, 0.0).normal;
                (add(o, mul(n, sign * l)), d)
            })
            .collect()
    }

    /// Ordered boundary chains and corners inside `w`.
    fn chains(&self, h: f64, w: &Window) -> (Vec<Vec<BoundarySample>>, Vec<Corner>, bool) {
        match &self.node {
            Node::Prim(p) => {
                let mut chains = vec![];
                let mut partial = false;
                for piece in &p.pieces {
                    let (c, part) = piece.sample(h, w);
                    partial |= part;
                    if !c.is_empty() {
                        chains.push(c);
                    }
                }
                let corners = p.corners.iter().filter(|c| w.contains(c.p)).cloned().collect();
                (chains, corners, partial)
            }
            Node::Scale(e, f) => {
                let wi = Window { x0: w.x0 / f, x1: w.x1 / f, y0: w.y0 / f, y1: w.y1 / f };
                let (ch, co, part) = e.chains(h / f, &wi);
                let fp = |p: P2| mul(p, *f);
                let id = |n: P2| n;
                let ch = ch.into_iter().map(|c| c.iter().map(|s| s.map(&fp, &id, 1.0 / f)).collect()).collect();
                let co = co.into_iter().map(|c| Corner { p: fp(c.p), ..c }).collect();
                (ch, co, part)
            }
            Node::Rotate(e, th) => {
                let wi = Window::hull(w.corners().iter().map(|c| rot(*c, -th)));
                let (ch, co, part) = e.chains(h, &wi);
                let r = |p: P2| rot(p, *th);
                let ch = ch.into_iter().map(|c| c.iter().map(|s| s.map(&r, &r, 1.0)).collect()).collect();
                let co = co
                    .into_iter()
                    .map(|c| Corner { p: r(c.p), n1: r(c.n1), n2: r(c.n2), ..c })
                    .collect();
                (ch, co, part)
            }
            Node::Translate(e, v) => {
                let wi = Window { x0: w.x0 - v[0], x1: w.x1 - v[0], y0: w.y0 - v[1], y1: w.y1 - v[1] };
                let (ch, co, part) = e.chains(h, &wi);
                let t = |p: P2| add(p, *v);
                let id = |n: P2| n;
                let ch = ch.into_iter().map(|c| c.iter().map(|s| s.map(&t, &id, 1.0)).collect()).collect();
                let co = co.into_iter().map(|c| Corner { p: t(c.p), ..c }).collect();
                (ch, co, part)
            }
            Node::Complement(e) => {
                let (ch, co, part) = e.chains(h, w);
                let id = |p: P2| p;
                let neg = |n: P2| mul(n, -1.0);
                let ch = ch.into_iter().map(|c| c.iter().map(|s| s.map(&id, &neg, -1.0)).collect()).collect();
                let co = co
                    .into_iter()
                    .map(|c| Corner { n1: neg(c.n1), n2: neg(c.n2), convex: c.concave, concave: c.convex, ..c })
                    .collect();
                (ch, co, part)
            }
            Node::Union(a, b) | Node::Intersection(a, b) => {
                let uni = matches!(self.node, Node::Union(..));
                let mut chains = vec![];
                let mut corners = vec![];
                let mut partial = false;
                for (me, other, first) in [(a, b, true), (b, a, false)] {
                    let (ch, co, part) = me.chains(h, w);
                    partial |= part;
                    // shared boundary is kept from the first operand only
                    let keep = |p: P2| {
                        let d = other.signed_distance(p);
                        let d = if uni { d } else { -d };
                        if first {
                            d <= 1e-12
                        } else {
                            d < -1e-12
                        }
                    };
                    let project = |p: P2| {
                        let l = me.local(p, 0.0);
                        BoundarySample::smooth(l.point, l.normal, l.kappa)
                    };
                    for c in ch {
                        let (kept, cut) = truncate(c, &keep, &project);
                        chains.extend(kept);
                        for s in cut {
                            corners.push(Corner { p: s.point, n1: s.outward_normal, n2: s.outward_normal, convex: !uni, concave: uni });
                        }
                    }
                    corners.extend(co.into_iter().filter(|c| keep(c.p)));
                }
                (chains, merge_corners(corners), partial)
            }
            Node::Dilate(e, l) | Node::Erode(e, l) => {
                let sign = if matches!(self.node, Node::Dilate(..)) { 1.0 } else { -1.0 };
                let l = *l;
                let (ch, co, part) = e.chains(h, &w.grow(l));
                let mut chains = vec![];
                let mut corners = vec![];
                let offset = |s: &BoundarySample| -> Option<BoundarySample> {
                    let den = 1.0 + sign * l * s.curvature;
                    if den <= 1e-12 {
                        return None;
                    }
                    let mut o = BoundarySample::smooth(add(s.point, mul(s.outward_normal, sign * l)), s.outward_normal, s.curvature / den);
                    o.local_curvature_bound = s.local_curvature_bound.map(|b| b / (1.0 - l * b).max(1e-300));
                    Some(o)
                };
                let keep = |p: P2| (e.signed_distance(p) + sign * l).abs() <= 1e-10 * (1.0 + l);
                let project = |p: P2| {
                    let b = e.local(p, 0.0);
                    let q = add(b.point, mul(b.normal, sign * l));
                    let lq = self.local(q, 0.0);
                    BoundarySample::smooth(q, lq.normal, lq.kappa)
                };
                let mut cands: Vec<Vec<BoundarySample>> = vec![];
                for c in ch {
                    let mut run = vec![];
                    for s in &c {
                        match offset(s) {
                            Some(o) => run.push(o),
                            None => {
                                if !run.is_empty() {
                                    cands.push(std::mem::take(&mut run));
                                }
                            }
                        }
                    }
                    if !run.is_empty() {
                        cands.push(run);
                    }
                }
                // arcs around corners on the side being offset
                for c in &co {
                    let fill = if sign > 0.0 { c.convex } else { c.concave };
                    if !fill {
                        continue;
                    }
                    let a1 = c.n1[1].atan2(c.n1[0]);
                    let mut sw = wrap(c.n2[1].atan2(c.n2[0]) - a1);
                    let mut a0 = a1;
                    if sw > PI {
                        a0 = a1 + sw;
                        sw = 2.0 * PI - sw;
                    }
                    let m = ((l * sw / h).ceil() as usize).max(2);
                    let arc: Vec<BoundarySample> = (0..=m)
                        .map(|i| {
                            let e_ = polar(a0 + sw * i as f64 / m as f64);
                            let mut s = BoundarySample::smooth(add(c.p, mul(e_, sign * l)), e_, sign / l);
                            s.local_curvature_bound = Some(1.0 / l);
                            s
                        })
                        .collect();
                    cands.push(arc);
                }
                for c in cands {
                    let (kept, cut) = truncate(c, &keep, &project);
                    chains.extend(kept);
                    for s in cut {
                        corners.push(Corner {
                            p: s.point,
                            n1: s.outward_normal,
                            n2: s.outward_normal,
                            convex: sign < 0.0,
                            concave: sign > 0.0,
                        });
                    }
                }
                (chains, merge_corners(corners), part)
            }
        }
    }

    /// Boundary samples with gaps at most `spacing`, restricted to `window`.
    /// Corners are included and flagged [`Regularity::Angular`].
    pub fn boundary_sample(&self, spacing: f64, window: Option<Window>) -> Result<BoundarySampling, GeometryError> {
        param(spacing > 0.0, "spacing must be positive")?;
        let w = window.unwrap_or(match self.asymptote() {
            Asymptote::Bounded { radius } => Window::square(radius * 1.01 + spacing),
            _ => DEFAULT_WINDOW,
        });
        let (ch, co, partial) = self.chains(spacing, &w);
        let mut samples: Vec<BoundarySample> = vec![];
        let tol = 1e-9 * (1.0 + w.x1.abs().max(w.x0.abs()));
        for c in &co {
            if w.contains(c.p) {
                samples.push(BoundarySample::corner(c));
            }
        }
        let ncorner = samples.len();
        for c in ch {
            for s in c {
                if !w.contains(s.point) {
                    continue;
                }
                if samples[..ncorner].iter().any(|k| dist(k.point, s.point) <= tol) {
                    continue;
                }
                samples.push(s);
            }
        }
        // drop duplicates at chain junctions
        let mut out: Vec<BoundarySample> = Vec::with_capacity(samples.len());
        let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> = Default::default();
        let key = |p: P2| ((p[0] / (100.0 * tol)).floor() as i64, (p[1] / (100.0 * tol)).floor() as i64);
        for s in samples {
            let (kx, ky) = key(s.point);
            let dup = (-1..=1).any(|dx| {
                (-1..=1).any(|dy| {
                    grid.get(&(kx + dx, ky + dy)).is_some_and(|v| v.iter().any(|&i| dist(out[i].point, s.point) <= tol))
                })
            });
            if !dup {
                grid.entry((kx, ky)).or_default().push(out.len());
                out.push(s);
            }
        }
        Ok(BoundarySampling { samples: out, partial })
    }

    /// Angular measure of `{θ : x + ρ e(θ) ∈ E}`.
    pub fn circle_measure(&self, x: P2, rho: f64) -> f64 {
        self.circle_intervals(x, rho).iter().map(|(a, b)| b - a).sum()
    }

    /// Angle intervals (within `[0, 2π)`) of the circle `∂B_ρ(x)` inside
    /// the set. Intervals of constant sign are certified by the 1-Lipschitz
    /// bound on the signed distance; roots are bisected to `1e-13` rad.
    pub fn circle_intervals(&self, x: P2, rho: f64) -> Vec<(f64, f64)> {
        let f = |th: f64| self.signed_distance(add(x, mul(polar(th), rho)));
        circle_intervals_of(&f, rho)
    }
}

pub(crate) fn circle_intervals_of(f: &dyn Fn(f64) -> f64, rho: f64) -> Vec<(f64, f64)> {
    const START: usize = 16;
    const WMIN: f64 = 1e-13;
    // below this chord the sign of a distance is rounding noise
    const NOISE: f64 = 1e-15;
    const BUDGET: usize = 200_000;
    let mut stack: Vec<(f64, f64, f64)> = Vec::with_capacity(64);
    let step = 2.0 * PI / START as f64;
    for i in (0..START).rev() {
        let a = step * i as f64;
        let b = a + step;
        stack.push((a, b, f(0.5 * (a + b))));
    }
    let mut out: Vec<(f64, f64)> = vec![];
    let mut evals = 0usize;
    let push = |a: f64, b: f64, out: &mut Vec<(f64, f64)>| {
        if let Some(last) = out.last_mut() {
            if (last.1 - a).abs() <= 1e-15 {
                last.1 = b;
                return;
            }
        }
        out.push((a, b));
    };
    while let Some((a, b, dm)) = stack.pop() {
        let hw = 0.5 * (b - a);
        let reach = 2.0 * rho * (0.5 * hw).sin();
        if dm.abs() > reach {
            if dm > 0.0 {
                push(a, b, &mut out);
            }
            continue;
        }
        if hw < WMIN || reach < NOISE || evals > BUDGET {
            // unresolved sliver: counted by the sign at its midpoint
            if dm >= 0.0 {
                push(a, b, &mut out);
            }
            continue;
        }
        let m = 0.5 * (a + b);
        let (l, r) = (f(0.5 * (a + m)), f(0.5 * (m + b)));
        evals += 2;
        stack.push((m, b, r));
        stack.push((a, m, l));
    }
    out
}

/// Split an ordered chain into maximal runs where `keep` holds; each cut
/// between a kept and a dropped sample is located by bisection along the
/// chord, projected onto the chain's curve by `project`.
fn truncate(
    chain: Vec<BoundarySample>,
    keep: &dyn Fn(P2) -> bool,
    project: &dyn Fn(P2) -> BoundarySample,
) -> (Vec<Vec<BoundarySample>>, Vec<BoundarySample>) {
    let flags: Vec<bool> = chain.iter().map(|s| keep(s.point)).collect();
    let mut runs = vec![];
    let mut cuts = vec![];
    let mut run: Vec<BoundarySample> = vec![];
    for i in 0..chain.len() {
        if flags[i] {
            if i > 0 && !flags[i - 1] {
                let c = bisect_cut(&chain[i], &chain[i - 1], keep, project);
                cuts.push(c.clone());
                run.push(c);
            }
            run.push(chain[i].clone());
        } else if i > 0 && flags[i - 1] {
            let c = bisect_cut(&chain[i - 1], &chain[i], keep, project);
            cuts.push(c.clone());
            run.push(c);
            runs.push(std::mem::take(&mut run));
        }
    }
    if !run.is_empty() {
        runs.push(run);
    }
    (runs, cuts)
}

fn bisect_cut(
    good: &BoundarySample,
    bad: &BoundarySample,
    keep: &dyn Fn(P2) -> bool,
    project: &dyn Fn(P2) -> BoundarySample,
) -> BoundarySample {
    let (mut lo, mut hi) = (0.0, 1.0);
    let at = |t: f64| project(add(good.point, mul(sub(bad.point, good.point), t)));
    for _ in 0..60 {
        let m = 0.5 * (lo + hi);
        if keep(at(m).point) {
            lo = m;
        } else {
            hi = m;
        }
    }
    at(lo)
}

fn merge_corners(cs: Vec<Corner>) -> Vec<Corner> {
    let mut out: Vec<Corner> = vec![];
    for c in cs {
        if let Some(o) = out.iter_mut().find(|o| dist(o.p, c.p) <= 1e-9 && o.n1 == o.n2 && c.n1 == c.n2 && o.n1 != c.n1) {
            o.n2 = c.n1;
            continue;
        }
        if out.iter().any(|o| dist(o.p, c.p) <= 1e-9 && o.n1 == c.n1 && o.n2 == c.n2) {
            continue;
        }
        out.push(c);
    }
    out
}

/// Distance between the boundaries of `e` and `f` inside `window`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SetDistance {
    pub value: f64,
    /// Certified lower bound from the sample spacing.
    pub lower_bound: f64,
    pub witness: P2,
}

pub fn set_distance(e: &PlanarSet, f: &PlanarSet, window: Window) -> Result<SetDistance, GeometryError> {
    let span = (window.x1 - window.x0).max(window.y1 - window.y0);
    let h = span / 2048.0;
    let se = e.boundary_sample(h, Some(window))?.samples;
    if se.is_empty() {
        return Err(GeometryError::EmptyBoundary);
    }
    if f.boundary_sample(h, Some(window))?.samples.is_empty() {
        return Err(GeometryError::EmptyBoundary);
    }
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for s in &se {
        let d = f.signed_distance(s.point).abs();
        if d < best.0 {
            best = (d, s.point);
        }
    }
    // local descent along ∂E around the best sample
    let mut p = best.1;
    let mut step = h;
    for _ in 0..60 {
        let l = e.local(p, 0.0);
        let t = [-l.normal[1], l.normal[0]];
        let mut improved = false;
        for sgn in [-1.0, 1.0] {
            let q = e.local(add(p, mul(t, sgn * step)), 0.0).point;
            let d = f.signed_distance(q).abs();
            if d < best.0 {
                best = (d, q);
                p = q;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(SetDistance { value: best.0, lower_bound: (best.0 - h).max(0.0), witness: best.1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(p: Primitive) -> PlanarSet {
        make_shape(&p).unwrap()
    }

    #[test]
    fn spot_values() {
        let c = shape(Primitive::Cross);
        assert!((c.signed_distance([0.0, 0.7]) + 0.7 * FRAC_1_SQRT_2).abs() < 1e-15);
        let pc = shape(Primitive::PerturbedCross { r: 0.5 });
        assert_eq!(pc.signed_distance([0.0, 0.5]), 0.0);
        let o = shape(Primitive::TangentBalls);
        assert_eq!(o.signed_distance([0.0, 0.0]), 0.0);
        assert!((o.signed_distance([1.0, 0.0]) - 1.0).abs() < 1e-15);
        let b = shape(Primitive::Ball { center: [0.0, 0.0], radius: 1.0 });
        assert!((b.signed_distance([2.0, 0.0]) + 1.0).abs() < 1e-15);
        let n = shape(Primitive::BoxPair { r: 0.3 });
        assert!((n.signed_distance([0.0, 0.0]) + 0.3 * SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn rotated_cross_matches_formula() {
        let c = shape(Primitive::RotatedCross);
        for p in [[1.0f64, 2.0], [1.0, -2.0], [-0.3, -0.1], [0.2, -5.0]] {
            let sgn = if p[0] * p[1] >= 0.0 { 1.0 } else { -1.0 };
            let v: f64 = sgn * p[0].abs().min(p[1].abs());
            assert!((c.signed_distance(p) - v).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(make_shape(&Primitive::PinchedDroplet { delta: 0.2, r: 0.1 }).is_err());
        assert!(make_shape(&Primitive::NearTangent { delta: 0.2, r: 1.0 }).is_err());
        assert!(make_shape(&Primitive::Ball { center: [0.0, 0.0], radius: -1.0 }).is_err());
    }

    #[test]
    fn droplet_frames_agree() {
        let g = shape(Primitive::Droplet);
        let g0 = shape(Primitive::Droplet0).rotate(0.75 * PI);
        for i in 0..200 {
            let p = [-2.5 + 0.0251 * i as f64, 1.7 - 0.017 * i as f64];
            assert!((g.signed_distance(p) - g0.signed_distance(p)).abs() < 1e-12);
        }
        // tangent points of the upper lobe
        assert!(g.signed_distance([0.0, 1.0]).abs() < 1e-15);
        assert!(g.signed_distance([-1.0, 0.0]).abs() < 1e-15);
        assert!((g.signed_distance([-0.5, 0.5]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pinched_reduces_to_droplet_r() {
        let r = 0.2;
        let a = shape(Primitive::DropletR { r });
        assert!(a.signed_distance([0.0, r]).abs() < 1e-15);
        assert!(a.signed_distance([r, r]).abs() < 1e-15);
        let p = shape(Primitive::PinchedDroplet { delta: 0.05, r });
        let alpha = (0.95f64 / SQRT_2).asin();
        assert!(p.signed_distance([r / alpha.tan(), r]).abs() < 1e-14);
        assert!(p.signed_distance([1.9 * r, 0.99 * r]) > 0.0);
    }

    #[test]
    fn ball_samples() {
        let b = shape(Primitive::Ball { center: [0.0, 0.0], radius: 1.0 });
        let s = b.boundary_sample(2.0 * PI / 8.0, None).unwrap();
        assert_eq!(s.samples.len(), 8);
        for x in &s.samples {
            assert_eq!(x.regularity, Regularity::Smooth);
            assert!(dist(x.outward_normal, x.point) < 1e-12);
        }
        assert!(!s.partial);
    }

    #[test]
    fn perturbed_cross_corners() {
        let r = 0.5;
        let s = shape(Primitive::PerturbedCross { r }).boundary_sample(0.05, Some(Window::square(3.0))).unwrap();
        assert!(s.partial);
        let ang: Vec<_> = s.samples.iter().filter(|x| x.regularity == Regularity::Angular).collect();
        assert_eq!(ang.len(), 4);
        for a in ang {
            assert!((a.point[0].abs() - r).abs() < 1e-15 && (a.point[1].abs() - r).abs() < 1e-15);
        }
    }

    #[test]
    fn barrier_pair_samples() {
        let f = shape(Primitive::BarrierPair { eps: 0.1, mu: 0.3, c0: 1.0, t: 0.0 });
        for x in f.boundary_sample(0.1, None).unwrap().samples {
            let c = if x.point[0] > 0.0 { [1.0, 0.0] } else { [-1.0, 0.0] };
            assert!(dist(unit(sub(x.point, c)), x.outward_normal) < 1e-12);
            assert!(f.signed_distance(x.point).abs() < 1e-12);
        }
    }

    #[test]
    fn dilated_box_pair_distance() {
        let n = shape(Primitive::BoxPair { r: 0.3 });
        let nl = n.clone().dilate(0.1).unwrap();
        let d = set_distance(&n, &nl, Window::square(2.0)).unwrap();
        assert!((d.value - 0.1).abs() < 1e-9, "{d:?}");
        let b1 = shape(Primitive::Ball { center: [0.0, 0.0], radius: 1.0 });
        let b2 = shape(Primitive::Ball { center: [0.0, 0.0], radius: 2.0 });
        assert!((set_distance(&b1, &b2, Window::square(3.0)).unwrap().value - 1.0).abs() < 1e-12);
        let c = shape(Primitive::Cross);
        let cr = shape(Primitive::PerturbedCross { r: 0.2 });
        assert!(set_distance(&c, &cr, Window::square(2.0)).unwrap().value < 1e-12);
    }

    #[test]
    fn dilated_samples_on_zero_level() {
        let sets = [
            shape(Primitive::BoxPair { r: 0.3 }).dilate(0.15).unwrap(),
            shape(Primitive::PerturbedCross { r: 0.3 }).dilate(0.1).unwrap(),
            shape(Primitive::Cross).dilate(0.1).unwrap(),
            shape(Primitive::Stadium { half_length: 0.5, radius: 0.3 }).erode(0.1).unwrap(),
            shape(Primitive::DropletR { r: 0.2 }).erode(0.05).unwrap(),
        ];
        for e in sets {
            let s = e.boundary_sample(0.01, Some(Window::square(2.0))).unwrap();
            assert!(!s.samples.is_empty());
            for x in &s.samples {
                assert!(e.signed_distance(x.point).abs() < 1e-9, "{:?} {}", x.point, e.signed_distance(x.point));
                assert!((norm(x.outward_normal) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dilated_cross_corner_moves() {
        let e = shape(Primitive::Cross).dilate(0.1).unwrap();
        let s = e.boundary_sample(0.01, Some(Window::square(1.0))).unwrap();
        let ang: Vec<_> = s.samples.iter().filter(|x| x.regularity == Regularity::Angular).collect();
        assert_eq!(ang.len(), 2, "{ang:?}");
        for a in ang {
            assert!(a.point[0].abs() < 1e-9 && (a.point[1].abs() - 0.1 * SQRT_2).abs() < 1e-9);
        }
    }

    #[test]
    fn circle_measure_half_plane_and_ball() {
        let h = shape(Primitive::Halfplane { normal: [0.0, 1.0], offset: 0.0 });
        assert!((h.circle_measure([0.3, 0.0], 0.7) - PI).abs() < 1e-12);
        let b = shape(Primitive::Ball { center: [0.0, 0.0], radius: 1.0 });
        // circle of radius ρ about a boundary point: inside arc 2 acos(ρ/2)
        for rho in [0.1, 0.5, 1.3, 1.99] {
            let m = b.circle_measure([1.0, 0.0], rho);
            assert!((m - 2.0 * (rho / 2.0f64).acos()).abs() < 1e-11, "{rho} {m}");
        }
        assert_eq!(b.circle_measure([1.0, 0.0], 2.5), 0.0);
    }

    #[test]
    fn local_data() {
        let b = shape(Primitive::Ball { center: [0.0, 0.0], radius: 2.0 });
        let l = b.local([2.0, 0.0], 0.1);
        assert!((l.kappa - 0.5).abs() < 1e-15);
        let d = b.clone().dilate(1.0).unwrap().local([3.0, 0.0], 0.1);
        assert!((d.kappa - 1.0 / 3.0).abs() < 1e-12);
        let c = b.complement().local([2.0, 0.0], 0.1);
        assert!((c.kappa + 0.5).abs() < 1e-15 && c.normal[0] < 0.0);
        let m = shape(Primitive::BoxPair { r: 0.2 }).dilate(0.1).unwrap();
        let arc = m.local([0.2 - 0.1 * FRAC_1_SQRT_2, 0.2 - 0.1 * FRAC_1_SQRT_2], 0.0);
        assert!((arc.kappa - 10.0).abs() < 1e-9);
        assert!(arc.corner_distance().is_infinite());
    }

    #[test]
    fn json_round_trip() {
        let s: ShapeSpec = serde_json::from_str(r#"{"shape":"perturbed_cross","r":0.5}"#).unwrap();
        assert_eq!(s.base, Primitive::PerturbedCross { r: 0.5 });
        let s: ShapeSpec = serde_json::from_str(
            r#"{"shape":"box_pair","r":0.25,"modifiers":[{"op":"dilate","lambda":0.125},{"op":"rotate","theta":0.5}]}"#,
        )
        .unwrap();
        let back: ShapeSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, back);
        assert!(s.build().is_ok());
    }
}
