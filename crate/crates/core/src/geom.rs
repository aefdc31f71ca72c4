//! Planar geometry for polygonal voxels: point/polygon predicates, affine
//! maps, polygon clipping, and exact disk-polygon intersection areas.
//!
//! The disk-polygon area uses the divergence theorem: the area of `D ∩ P` is
//! half the boundary integral of `x · n`, split into straight pieces of the
//! polygon boundary lying inside the disk and circular arcs lying inside the
//! polygon. All pieces are closed-form, so the only error is floating-point
//! roundoff. Tangential contacts are deliberately ignored: they form a
//! measure-zero set and never affect areas.

/// A point (or vector) in the plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the cross product `self x o`.
    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    pub fn dist(self, o: Point) -> f64 {
        self.sub(o).norm()
    }
}

/// A simple polygon stored as a counter-clockwise vertex loop.
pub type Polygon = Vec<Point>;

/// Signed area of a vertex loop (positive for counter-clockwise).
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        a += p.cross(q);
    }
    0.5 * a
}

/// Area of a counter-clockwise simple polygon.
pub fn polygon_area(poly: &[Point]) -> f64 {
    signed_area(poly)
}

/// Axis-aligned bounding box as (min, max) corners.
pub fn bbox(poly: &[Point]) -> (Point, Point) {
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in poly {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

/// Largest pairwise vertex distance.
pub fn polygon_diameter(poly: &[Point]) -> f64 {
    let mut d2: f64 = 0.0;
    for i in 0..poly.len() {
        for j in (i + 1)..poly.len() {
            d2 = d2.max(poly[i].sub(poly[j]).norm2());
        }
    }
    d2.sqrt()
}

/// Centroid of the polygon's vertex set (not the area centroid; used only as
/// a fan apex and for bucketing, where any interior-ish point works).
pub fn vertex_centroid(poly: &[Point]) -> Point {
    let mut c = Point::new(0.0, 0.0);
    for p in poly {
        c = c.add(*p);
    }
    c.scale(1.0 / poly.len() as f64)
}

/// Distance from a point to a closed segment.
pub fn point_segment_dist(p: Point, a: Point, b: Point) -> f64 {
    let ab = b.sub(a);
    let l2 = ab.norm2();
    if l2 == 0.0 {
        return p.dist(a);
    }
    let t = (p.sub(a).dot(ab) / l2).clamp(0.0, 1.0);
    p.dist(a.add(ab.scale(t)))
}

fn segment_segment_dist(a: Point, b: Point, c: Point, d: Point) -> f64 {
    // Proper crossings mean distance zero.
    let d1 = b.sub(a).cross(c.sub(a));
    let d2 = b.sub(a).cross(d.sub(a));
    let d3 = d.sub(c).cross(a.sub(c));
    let d4 = d.sub(c).cross(b.sub(c));
    if (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) {
        return 0.0;
    }
    point_segment_dist(a, c, d)
        .min(point_segment_dist(b, c, d))
        .min(point_segment_dist(c, a, b))
        .min(point_segment_dist(d, a, b))
}

/// Distance between the boundaries of two polygons. For polygons with
/// disjoint interiors (voxels) this equals the set distance.
pub fn polygon_dist(p: &[Point], q: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..p.len() {
        let (a, b) = (p[i], p[(i + 1) % p.len()]);
        for j in 0..q.len() {
            let (c, d) = (q[j], q[(j + 1) % q.len()]);
            best = best.min(segment_segment_dist(a, b, c, d));
            if best == 0.0 {
                return 0.0;
            }
        }
    }
    best
}

/// Point-in-polygon test; points within `eps` of the boundary count as
/// inside. Works for any simple polygon via even-odd ray casting.
pub fn point_in_polygon(p: Point, poly: &[Point], eps: f64) -> bool {
    if eps > 0.0 {
        for i in 0..poly.len() {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            if point_segment_dist(p, a, b) <= eps {
                return true;
            }
        }
    }
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi.y > p.y) != (pj.y > p.y) {
            let x_cross = pi.x + (p.y - pi.y) / (pj.y - pi.y) * (pj.x - pi.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Applies `v -> scale * v + shift` to every vertex.
pub fn scale_translate_polygon(poly: &[Point], scale: f64, shift: Point) -> Polygon {
    poly.iter().map(|v| v.scale(scale).add(shift)).collect()
}

/// Intersection parameters of the segment `p0 + s (p1 - p0)`, `s` in [0, 1],
/// with the circle of radius `r` around `c`. Transversal crossings only:
/// tangencies (discriminant <= 0) yield no parameters. Returned values are
/// sorted ascending; 0, 1, or 2 entries.
pub fn segment_circle_intersections(p0: Point, p1: Point, c: Point, r: f64) -> Vec<f64> {
    let t = p1.sub(p0);
    let l2 = t.norm2();
    let mut out = Vec::new();
    if l2 == 0.0 {
        return out;
    }
    let w = p0.sub(c);
    let b = t.dot(w) / l2;
    let d = (w.norm2() - r * r) / l2;
    let disc = b * b - d;
    if disc <= 0.0 {
        return out;
    }
    let sq = disc.sqrt();
    for s in [-b - sq, -b + sq] {
        if (0.0..=1.0).contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Exact area of the intersection of the disk of radius `r` around `c` with
/// a counter-clockwise simple polygon.
pub fn disk_polygon_area(c: Point, r: f64, poly: &[Point]) -> f64 {
    let n = poly.len();
    debug_assert!(n >= 3);
    let mut acc = 0.0;
    // Angles (in [0, 2pi)) of transversal crossing points on the circle.
    let mut angles: Vec<f64> = Vec::new();

    for i in 0..n {
        let p0 = poly[i];
        let p1 = poly[(i + 1) % n];
        let t = p1.sub(p0);
        let len = t.norm();
        if len == 0.0 {
            continue;
        }
        // Outward normal of a counter-clockwise edge.
        let eta = Point::new(t.y / len, -t.x / len);
        let plane = p0.dot(eta); // x . eta is constant on the edge line

        let mut cuts = vec![0.0];
        for s in segment_circle_intersections(p0, p1, c, r) {
            if s > 0.0 && s < 1.0 {
                cuts.push(s);
            }
            // Collect the crossing angle once per circle point; s = 1 at a
            // vertex reappears as s = 0 on the next edge, so keep s < 1.
            if s < 1.0 {
                let q = p0.add(t.scale(s)).sub(c);
                let mut a = q.y.atan2(q.x);
                if a < 0.0 {
                    a += std::f64::consts::TAU;
                }
                angles.push(a);
            }
        }
        cuts.push(1.0);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());

        for w in cuts.windows(2) {
            let (s0, s1) = (w[0], w[1]);
            if s1 <= s0 {
                continue;
            }
            let mid = p0.add(t.scale(0.5 * (s0 + s1)));
            if mid.dist(c) < r {
                acc += plane * len * (s1 - s0);
            }
        }
    }

    if angles.is_empty() {
        // No transversal crossing: the regions are nested or disjoint.
        if poly.iter().any(|v| v.dist(c) < r) {
            return polygon_area(poly); // polygon inside disk
        }
        if point_in_polygon(c, poly, 0.0) {
            return std::f64::consts::PI * r * r; // disk inside polygon
        }
        return 0.0;
    }

    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let m = angles.len();
    for j in 0..m {
        let t0 = angles[j];
        let t1 = if j + 1 < m {
            angles[j + 1]
        } else {
            angles[0] + std::f64::consts::TAU
        };
        if t1 <= t0 {
            continue;
        }
        let tm = 0.5 * (t0 + t1);
        let mid = Point::new(c.x + r * tm.cos(), c.y + r * tm.sin());
        if point_in_polygon(mid, poly, 0.0) {
            acc += r
                * (c.x * (t1.sin() - t0.sin()) - c.y * (t1.cos() - t0.cos()) + r * (t1 - t0));
        }
    }

    0.5 * acc
}

/// Clips a simple polygon against one half-plane (left of `a -> b`).
fn clip_halfplane(subject: &[Point], a: Point, b: Point) -> Polygon {
    let dir = b.sub(a);
    let side = |p: Point| dir.cross(p.sub(a));
    let mut out = Vec::with_capacity(subject.len() + 2);
    let n = subject.len();
    for i in 0..n {
        let cur = subject[i];
        let nxt = subject[(i + 1) % n];
        let sc = side(cur);
        let sn = side(nxt);
        if sc >= 0.0 {
            out.push(cur);
        }
        if (sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0) {
            let t = sc / (sc - sn);
            out.push(cur.add(nxt.sub(cur).scale(t)));
        }
    }
    out
}

/// Clips `subject` against a convex counter-clockwise polygon.
pub fn clip_convex(subject: &[Point], convex: &[Point]) -> Polygon {
    let mut cur = subject.to_vec();
    let n = convex.len();
    for i in 0..n {
        if cur.len() < 3 {
            return Vec::new();
        }
        cur = clip_halfplane(&cur, convex[i], convex[(i + 1) % n]);
    }
    if cur.len() < 3 {
        Vec::new()
    } else {
        cur
    }
}

/// True if the vertex loop is convex (counter-clockwise, no reflex vertex).
pub fn is_convex(poly: &[Point]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        if b.sub(a).cross(c.sub(b)) < 0.0 {
            return false;
        }
    }
    true
}

/// Triangulates a simple counter-clockwise polygon by ear clipping.
/// Falls back from a centroid fan only when the fan would fold over.
pub fn triangulate(poly: &[Point]) -> Vec<[Point; 3]> {
    let n = poly.len();
    debug_assert!(n >= 3);
    if n == 3 {
        return vec![[poly[0], poly[1], poly[2]]];
    }
    // Centroid fan covers the polygon exactly when every fan triangle keeps
    // positive orientation (star-shaped about the vertex centroid).
    let c = vertex_centroid(poly);
    let area = polygon_area(poly);
    let eps = 1e-12 * area.abs().max(1e-300);
    if poly
        .iter()
        .enumerate()
        .all(|(i, &p)| poly[(i + 1) % n].sub(p).cross(c.sub(p)) > eps)
    {
        return (0..n)
            .map(|i| [poly[i], poly[(i + 1) % n], c])
            .collect();
    }

    // Ear clipping.
    let mut idx: Vec<usize> = (0..n).collect();
    let mut tris = Vec::with_capacity(n - 2);
    let mut guard = 0usize;
    while idx.len() > 3 {
        let m = idx.len();
        let mut clipped = false;
        for k in 0..m {
            let (ia, ib, ic) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
            let (a, b, c) = (poly[ia], poly[ib], poly[ic]);
            if b.sub(a).cross(c.sub(b)) <= 0.0 {
                continue; // reflex corner, not an ear
            }
            let ear_blocked = idx.iter().any(|&j| {
                j != ia
                    && j != ib
                    && j != ic
                    && point_in_triangle_strict(poly[j], a, b, c)
            });
            if !ear_blocked {
                tris.push([a, b, c]);
                idx.remove(k);
                clipped = true;
                break;
            }
        }
        guard += 1;
        if !clipped || guard > 4 * n {
            // Degenerate input; fall back to a fan to stay total.
            break;
        }
    }
    if idx.len() == 3 {
        tris.push([poly[idx[0]], poly[idx[1]], poly[idx[2]]]);
    } else if idx.len() > 3 {
        let c = vertex_centroid(poly);
        for k in 0..idx.len() {
            tris.push([poly[idx[k]], poly[idx[(k + 1) % idx.len()]], c]);
        }
    }
    tris
}

fn point_in_triangle_strict(p: Point, a: Point, b: Point, c: Point) -> bool {
    let s1 = b.sub(a).cross(p.sub(a));
    let s2 = c.sub(b).cross(p.sub(b));
    let s3 = a.sub(c).cross(p.sub(c));
    s1 > 0.0 && s2 > 0.0 && s3 > 0.0
}

/// Intersection of two simple polygons as a list of pieces whose areas sum
/// to `|P ∩ Q|`. When `Q` is convex the result is a single piece (possibly
/// empty); otherwise `Q` is triangulated and `P` is clipped against each
/// triangle, so pieces may be split along chords of `Q`.
pub fn clip_polygons(p: &[Point], q: &[Point]) -> Vec<Polygon> {
    let keep = |poly: Polygon, out: &mut Vec<Polygon>| {
        if poly.len() >= 3 && signed_area(&poly) > 0.0 {
            out.push(poly);
        }
    };
    let mut out = Vec::new();
    if is_convex(q) {
        keep(clip_convex(p, q), &mut out);
    } else {
        for t in triangulate(q) {
            keep(clip_convex(p, &t), &mut out);
        }
    }
    out
}

/// Total area of the intersection of two simple polygons.
pub fn polygon_intersection_area(p: &[Point], q: &[Point]) -> f64 {
    clip_polygons(p, q).iter().map(|r| signed_area(r)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> Polygon {
        vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ]
    }

    /// Rejection-sampling reference for |disk ∩ polygon|: samples uniformly
    /// in the intersection of the two bounding boxes and counts hits in both
    /// sets. Written against the definitions only, no shared code paths with
    /// the closed-form routine beyond the point-in-polygon predicate.
    fn mc_disk_polygon_area(c: Point, r: f64, poly: &[Point], n: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let (plo, phi) = bbox(poly);
        let lo = Point::new(plo.x.max(c.x - r), plo.y.max(c.y - r));
        let hi = Point::new(phi.x.min(c.x + r), phi.y.min(c.y + r));
        if lo.x >= hi.x || lo.y >= hi.y {
            return (0.0, 0.0);
        }
        let box_area = (hi.x - lo.x) * (hi.y - lo.y);
        let mut hits = 0usize;
        for _ in 0..n {
            let p = Point::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
            if p.dist(c) < r && point_in_polygon(p, poly, 0.0) {
                hits += 1;
            }
        }
        let frac = hits as f64 / n as f64;
        let se = box_area * (frac * (1.0 - frac) / n as f64).sqrt();
        (box_area * frac, se)
    }

    fn random_simple_polygon(rng: &mut ChaCha8Rng) -> Polygon {
        // Star-shaped polygon: sorted distinct angles, random radii. Covers
        // convex and non-convex shapes while staying simple.
        let cx = rng.gen_range(-0.5..0.5);
        let cy = rng.gen_range(-0.5..0.5);
        loop {
            let n = rng.gen_range(3..9);
            let mut angles: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            angles.dedup_by(|a, b| *a - *b < 0.05);
            // A radial polygon is simple only if its vertices wind fully
            // around the center: reject any angular gap of pi or more
            // (including the wrap-around gap).
            let mut max_gap = angles[0] + std::f64::consts::TAU - angles[angles.len() - 1];
            for w in angles.windows(2) {
                max_gap = max_gap.max(w[1] - w[0]);
            }
            if angles.len() < 3 || max_gap > 3.0 {
                continue;
            }
            return angles
                .iter()
                .map(|&a| {
                    let r = rng.gen_range(0.1..1.0);
                    Point::new(cx + r * a.cos(), cy + r * a.sin())
                })
                .collect();
        }
    }

    #[test]
    fn area_of_unit_square_is_one() {
        assert!((polygon_area(&unit_square()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn segment_circle_no_intersection() {
        let s = segment_circle_intersections(
            Point::new(2.0, 2.0),
            Point::new(3.0, 2.0),
            Point::new(0.0, 0.0),
            1.0,
        );
        assert!(s.is_empty());
    }

    #[test]
    fn segment_circle_two_crossings_of_diameter() {
        // Horizontal segment through the center of the unit circle.
        let s = segment_circle_intersections(
            Point::new(-2.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(0.0, 0.0),
            1.0,
        );
        assert_eq!(s.len(), 2);
        assert!((s[0] - 0.25).abs() < 1e-14, "entry at x=-1 -> s=0.25");
        assert!((s[1] - 0.75).abs() < 1e-14, "exit at x=+1 -> s=0.75");
    }

    #[test]
    fn segment_circle_single_crossing() {
        // Starts inside, ends outside: exactly one parameter.
        let s = segment_circle_intersections(
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(0.0, 0.0),
            1.0,
        );
        assert_eq!(s.len(), 1);
        assert!((s[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn segment_circle_tangent_excluded() {
        // Tangent line y = 1 touches the unit circle at one point.
        let s = segment_circle_intersections(
            Point::new(-2.0, 1.0),
            Point::new(2.0, 1.0),
            Point::new(0.0, 0.0),
            1.0,
        );
        assert!(s.is_empty(), "tangency must not count as a crossing");
    }

    #[test]
    fn disk_area_polygon_inside_disk() {
        let a = disk_polygon_area(Point::new(0.5, 0.5), 10.0, &unit_square());
        assert!((a - 1.0).abs() < 1e-10);
    }

    #[test]
    fn disk_area_disk_inside_polygon() {
        let r = 0.25;
        let a = disk_polygon_area(Point::new(0.5, 0.5), r, &unit_square());
        assert!((a - std::f64::consts::PI * r * r).abs() < 1e-10);
    }

    #[test]
    fn disk_area_disjoint() {
        let a = disk_polygon_area(Point::new(5.0, 5.0), 1.0, &unit_square());
        assert_eq!(a, 0.0);
    }

    #[test]
    fn disk_area_half_disk() {
        // Disk centered on the square's left edge: exactly half the disk is
        // inside (radius small enough to avoid corners).
        let r = 0.3;
        let a = disk_polygon_area(Point::new(0.0, 0.5), r, &unit_square());
        assert!((a - 0.5 * std::f64::consts::PI * r * r).abs() < 1e-12);
    }

    #[test]
    fn disk_area_quarter_disk_at_corner() {
        let r = 0.4;
        let a = disk_polygon_area(Point::new(0.0, 0.0), r, &unit_square());
        assert!((a - 0.25 * std::f64::consts::PI * r * r).abs() < 1e-12);
    }

    #[test]
    fn disk_area_matches_monte_carlo_on_fixed_case() {
        // Disk cutting through all four square edges but not containing any
        // corner: a genuine eight-crossing configuration.
        let c = Point::new(0.45, 0.55);
        let r = 0.52;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mc, se) = mc_disk_polygon_area(c, r, &unit_square(), 10_000_000, &mut rng);
        let a = disk_polygon_area(c, r, &unit_square());
        assert!(
            (a - mc).abs() <= 4.0 * se,
            "closed form {a} vs Monte Carlo {mc} +- {se}"
        );
    }

    #[test]
    fn disk_area_fuzz_against_monte_carlo() {
        // Smoke-level fuzz; the acceptance suite runs the full-size version.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut fails = 0;
        let cases = 300;
        for _ in 0..cases {
            let poly = random_simple_polygon(&mut rng);
            let c = Point::new(rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2));
            let r = rng.gen_range(0.05..1.5);
            let a = disk_polygon_area(c, r, &poly);
            let (mc, se) = mc_disk_polygon_area(c, r, &poly, 200_000, &mut rng);
            let tol = 4.0 * se + 1e-12;
            if (a - mc).abs() > tol {
                fails += 1;
            }
            assert!(
                a >= -1e-12 && a <= polygon_area(&poly) + 1e-9,
                "area {a} outside [0, {}] for disk c=({},{}) r={r} poly={poly:?}",
                polygon_area(&poly),
                c.x,
                c.y
            );
        }
        assert!(fails <= 3, "{fails}/{cases} beyond 4 standard errors");
    }

    #[test]
    fn disk_area_translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let poly = random_simple_polygon(&mut rng);
            let c = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let r = rng.gen_range(0.1..1.2);
            let t = Point::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let moved = scale_translate_polygon(&poly, 1.0, t);
            let a0 = disk_polygon_area(c, r, &poly);
            let a1 = disk_polygon_area(c.add(t), r, &moved);
            assert!((a0 - a1).abs() < 1e-10 * (1.0 + a0.abs()));
        }
    }

    #[test]
    fn scale_translate_scales_area_quadratically() {
        let poly = unit_square();
        let s = 2.5;
        let out = scale_translate_polygon(&poly, s, Point::new(3.0, -1.0));
        assert!((polygon_area(&out) - s * s).abs() < 1e-12);
    }

    #[test]
    fn clip_identical_squares() {
        let p = unit_square();
        let parts = clip_polygons(&p, &p);
        assert_eq!(parts.len(), 1);
        let total: f64 = parts.iter().map(|r| polygon_area(r)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clip_shifted_squares() {
        let p = unit_square();
        let q = scale_translate_polygon(&p, 1.0, Point::new(0.5, 0.0));
        let total: f64 = clip_polygons(&p, &q).iter().map(|r| polygon_area(r)).sum();
        assert!((total - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clip_disjoint_is_empty() {
        let p = unit_square();
        let q = scale_translate_polygon(&p, 1.0, Point::new(3.0, 3.0));
        assert!(clip_polygons(&p, &q).is_empty());
    }

    #[test]
    fn clip_nonconvex_clipper_preserves_area() {
        // L-shaped (non-convex) clipper over the unit square.
        let l_shape = vec![
            Point::new(0.0, 0.0),
            Point::new(0.8, 0.0),
            Point::new(0.8, 0.3),
            Point::new(0.3, 0.3),
            Point::new(0.3, 0.8),
            Point::new(0.0, 0.8),
        ];
        let expect = polygon_area(&l_shape); // L inside the square
        let total: f64 = clip_polygons(&unit_square(), &l_shape)
            .iter()
            .map(|r| polygon_area(r))
            .sum();
        assert!((total - expect).abs() < 1e-12);
    }

    #[test]
    fn clip_area_fuzz_against_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = random_simple_polygon(&mut rng);
            let q = random_simple_polygon(&mut rng);
            let total = polygon_intersection_area(&p, &q);
            // Rejection oracle over p's bounding box.
            let (lo, hi) = bbox(&p);
            let box_area = (hi.x - lo.x) * (hi.y - lo.y);
            let n = 100_000;
            let mut hits = 0;
            for _ in 0..n {
                let pt = Point::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
                if point_in_polygon(pt, &p, 0.0) && point_in_polygon(pt, &q, 0.0) {
                    hits += 1;
                }
            }
            let frac = hits as f64 / n as f64;
            let mc = box_area * frac;
            let se = box_area * (frac * (1.0 - frac) / n as f64).sqrt();
            assert!(
                (total - mc).abs() < 5.0 * se + 1e-9,
                "clip area {total} vs MC {mc} +- {se}\np={p:?}\nq={q:?}"
            );
        }
    }

    #[test]
    fn triangulate_covers_polygon() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let p = random_simple_polygon(&mut rng);
            let tris = triangulate(&p);
            let sum: f64 = tris
                .iter()
                .map(|t| 0.5 * t[1].sub(t[0]).cross(t[2].sub(t[0])))
                .sum();
            assert!(
                (sum - polygon_area(&p)).abs() < 1e-10 * (1.0 + polygon_area(&p)),
                "triangulation area mismatch"
            );
        }
    }

    #[test]
    fn point_in_polygon_boundary_counts_inside() {
        let sq = unit_square();
        assert!(point_in_polygon(Point::new(0.5, 0.0), &sq, 1e-12));
        assert!(point_in_polygon(Point::new(0.0, 0.0), &sq, 1e-12));
        assert!(!point_in_polygon(Point::new(1.5, 0.5), &sq, 1e-12));
        assert!(point_in_polygon(Point::new(0.5, 0.5), &sq, 0.0));
    }

    #[test]
    fn polygon_dist_between_separated_squares() {
        let p = unit_square();
        let q = scale_translate_polygon(&p, 1.0, Point::new(2.5, 0.0));
        assert!((polygon_dist(&p, &q) - 1.5).abs() < 1e-12);
        assert_eq!(polygon_dist(&p, &p), 0.0);
    }
}
