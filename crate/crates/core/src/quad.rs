//! Adaptive quadrature over triangles and polygons.
//!
//! Base rule: the 7-point degree-5 symmetric triangle rule. Adaptivity
//! splits the element with the largest error indicator into four midpoint
//! children until the summed indicator drops below the requested tolerance
//! relative to the current global estimate. The indicator is the Richardson
//! difference between an element's own rule value and the sum over its
//! children (children are evaluated eagerly), so a peaked integrand missed
//! by the first coarse pass is still found and resolved. The rates
//! integrands are piecewise smooth with kinks along curves; refinement
//! concentrates on the elements those curves cross.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geom::{triangulate, Point};

// Degree-5 rule: centroid plus two symmetric orbits.
const W0: f64 = 9.0 / 40.0;
const A1: f64 = 0.059_715_871_789_77; // (6 - sqrt(15)) / 21
const B1: f64 = 0.470_142_064_105_115;
const W1: f64 = 0.132_394_152_788_506;
const A2: f64 = 0.797_426_985_353_087; // 1 - 2 (6 + sqrt(15)) / 21
const B2: f64 = 0.101_286_507_323_456;
const W2: f64 = 0.125_939_180_544_827;

/// Result of an adaptive integration.
#[derive(Clone, Copy, Debug)]
pub struct QuadResult {
    pub value: f64,
    /// Remaining summed error indicator (absolute).
    pub err: f64,
    /// Integrand evaluations used.
    pub evals: u64,
    /// True if the depth cap or the evaluation budget cut refinement short.
    pub capped: bool,
}

#[inline]
fn tri_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * (b.sub(a).cross(c.sub(a)))
}

/// 7-point rule on one triangle.
pub fn tri_rule<F: FnMut(Point) -> f64>(a: Point, b: Point, c: Point, f: &mut F) -> f64 {
    let area = tri_area(a, b, c);
    let at = |l1: f64, l2: f64, l3: f64| {
        Point::new(
            l1 * a.x + l2 * b.x + l3 * c.x,
            l1 * a.y + l2 * b.y + l3 * c.y,
        )
    };
    let third = 1.0 / 3.0;
    let mut s = W0 * f(at(third, third, third));
    for (u, v, w) in [(A1, B1, B1), (B1, A1, B1), (B1, B1, A1)] {
        s += W1 * f(at(u, v, w));
    }
    for (u, v, w) in [(A2, B2, B2), (B2, A2, B2), (B2, B2, A2)] {
        s += W2 * f(at(u, v, w));
    }
    s * area
}

/// Default subdivision depth cap (relative to the input elements).
pub const DEFAULT_MAX_DEPTH: u32 = 20;
/// Default integrand evaluation budget per integral.
pub const DEFAULT_MAX_EVALS: u64 = 40_000_000;

// One active element: a triangle whose value is already the sum over its
// four midpoint children, with the parent-child difference as error.
struct Element {
    tri: [Point; 3],
    value: f64,
    err: f64,
    depth: u32,
}

impl PartialEq for Element {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Element {}
impl PartialOrd for Element {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Element {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.partial_cmp(&other.err).unwrap_or(Ordering::Equal)
    }
}

struct Worklist<'f, F> {
    f: &'f mut F,
    evals: u64,
    max_evals: u64,
    max_depth: u32,
    heap: BinaryHeap<Element>,
    value: f64,
    err: f64,
    capped: bool,
}

impl<F: FnMut(Point) -> f64> Worklist<'_, F> {
    fn rule(&mut self, a: Point, b: Point, c: Point) -> f64 {
        self.evals += 7;
        tri_rule(a, b, c, self.f)
    }

    fn children(tri: [Point; 3]) -> [[Point; 3]; 4] {
        let [a, b, c] = tri;
        let mab = Point::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
        let mbc = Point::new(0.5 * (b.x + c.x), 0.5 * (b.y + c.y));
        let mca = Point::new(0.5 * (c.x + a.x), 0.5 * (c.y + a.y));
        [
            [a, mab, mca],
            [mab, b, mbc],
            [mca, mbc, c],
            [mab, mbc, mca],
        ]
    }

    /// Creates an element: evaluates the 4 children, compares with the
    /// parent rule value, books value and error.
    fn push(&mut self, tri: [Point; 3], coarse: f64, depth: u32) {
        let mut fine = 0.0;
        for child in Self::children(tri) {
            fine += self.rule(child[0], child[1], child[2]);
        }
        // On smooth integrands the rule gains 2^6 per halving, making the
        // fine-pass error (fine - coarse) / 15; on the kink curves these
        // integrands carry, the gain is closer to 2 and that scaling
        // underestimates badly. Book the conservative difference as the
        // indicator and keep the extrapolated value (its correction is
        // bounded by the indicator either way).
        let err = (fine - coarse).abs();
        let value = fine + (fine - coarse) / 15.0;
        self.value += value;
        self.err += err;
        self.heap.push(Element {
            tri,
            value,
            err,
            depth,
        });
    }

    fn split_worst(&mut self) -> bool {
        loop {
            let Some(el) = self.heap.pop() else {
                // Everything splittable is frozen or resolved.
                return false;
            };
            if el.err == 0.0 {
                // Max-heap: all remaining elements are exact.
                self.heap.push(el);
                return false;
            }
            if self.evals + 28 > self.max_evals {
                self.capped = true;
                self.heap.push(el);
                return false;
            }
            if el.depth >= self.max_depth {
                // Freeze: its value and error stay booked in the totals,
                // it just stops competing; refinement continues elsewhere.
                self.capped = true;
                continue;
            }
            self.value -= el.value;
            self.err -= el.err;
            for child in Self::children(el.tri) {
                let coarse = self.rule(child[0], child[1], child[2]);
                self.push(child, coarse, el.depth + 1);
            }
            return true;
        }
    }
}

/// Adaptive integral of `f` over a set of triangles with tolerance
/// `rel_tol` relative to `max(|integral|, abs_floor)`.
pub fn integrate_triangles<F: FnMut(Point) -> f64>(
    tris: &[[Point; 3]],
    f: &mut F,
    rel_tol: f64,
    abs_floor: f64,
    max_depth: u32,
    max_evals: u64,
) -> QuadResult {
    let mut wl = Worklist {
        f,
        evals: 0,
        max_evals,
        max_depth,
        heap: BinaryHeap::with_capacity(64),
        value: 0.0,
        err: 0.0,
        capped: false,
    };
    for &t in tris {
        let coarse = wl.rule(t[0], t[1], t[2]);
        wl.push(t, coarse, 0);
    }
    loop {
        let target = rel_tol * wl.value.abs().max(abs_floor);
        if wl.err <= target || !wl.split_worst() {
            break;
        }
    }
    QuadResult {
        value: wl.value,
        err: wl.err,
        evals: wl.evals,
        capped: wl.capped,
    }
}

/// Adaptive integral of `f` over one triangle.
pub fn integrate_triangle<F: FnMut(Point) -> f64>(
    a: Point,
    b: Point,
    c: Point,
    f: &mut F,
    rel_tol: f64,
    abs_floor: f64,
) -> QuadResult {
    integrate_triangles(
        &[[a, b, c]],
        f,
        rel_tol,
        abs_floor,
        DEFAULT_MAX_DEPTH,
        DEFAULT_MAX_EVALS,
    )
}

/// Adaptive integral of `f` over a simple polygon (triangulated first).
pub fn integrate_polygon<F: FnMut(Point) -> f64>(
    poly: &[Point],
    f: &mut F,
    rel_tol: f64,
    abs_floor: f64,
) -> QuadResult {
    let tris = triangulate(poly);
    integrate_triangles(
        &tris,
        f,
        rel_tol,
        abs_floor,
        DEFAULT_MAX_DEPTH,
        DEFAULT_MAX_EVALS,
    )
}

/// Triangulates a polygon and splits every triangle uniformly until its
/// diameter is at most `max_diam`, so an integrand whose support is a
/// feature of that scale cannot slip between the seed quadrature points.
/// The seed count is capped; adaptivity handles the rest.
pub fn seeded_triangles(poly: &[Point], max_diam: f64, cap: usize) -> Vec<[Point; 3]> {
    let mut tris = triangulate(poly);
    loop {
        let mut next = Vec::with_capacity(tris.len() * 4);
        let mut any = false;
        for &[a, b, c] in &tris {
            let d = a.dist(b).max(b.dist(c)).max(c.dist(a));
            if d > max_diam && (tris.len() + next.len()) * 4 <= cap * 4 {
                let mab = Point::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
                let mbc = Point::new(0.5 * (b.x + c.x), 0.5 * (b.y + c.y));
                let mca = Point::new(0.5 * (c.x + a.x), 0.5 * (c.y + a.y));
                next.push([a, mab, mca]);
                next.push([mab, b, mbc]);
                next.push([mca, mbc, c]);
                next.push([mab, mbc, mca]);
                any = true;
            } else {
                next.push([a, b, c]);
            }
        }
        tris = next;
        if !any || tris.len() >= cap {
            break;
        }
    }
    tris
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1],
/// computed by Newton iteration on the Legendre recurrence so no
/// transcribed table can be wrong. Exact for polynomials of degree
/// 2n - 1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, 0.0f64);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            let dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                x[i] = -z;
                x[n - 1 - i] = z;
                let ww = 2.0 / ((1.0 - z * z) * dp * dp);
                w[i] = ww;
                w[n - 1 - i] = ww;
                break;
            }
        }
    }
    (x, w)
}
