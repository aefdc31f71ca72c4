//! Bimolecular reaction rate tables over voxel pairs.
//!
//! The volume-reactivity model reacts an A at `x` with a B at `y` at rate
//! `kplus(x, y)`, placing the product C at `z = gamma x + (1 - gamma) y`,
//! with the reaction suppressed when `z` falls outside the domain. Averaging
//! over voxels gives the discrete rates
//!
//! ```text
//! kplus[i][j]    = mean of kplus(x, y) over x in V_i, y in V_j
//! kplus[i][j][k] = same, restricted to pairs whose product lands in V_k
//! ```
//!
//! The substitution `s = y - x` reduces both averages to integrals over the
//! kernel support:
//!
//! ```text
//! kplus[i][j]    ∝ ∫ w(|s|) |V_i ∩ (V_j - s)| ds
//! kplus[i][j][k] ∝ ∫ w(|s|) |V_i ∩ (V_j - s) ∩ (V_k - (1 - gamma) s)| ds
//! ```
//!
//! whose domains scale with the kernel reach rather than the voxel size, so
//! the cost per pair does not grow as the mesh is refined past the reaction
//! radius. Each integral runs in polar coordinates over the radial window
//! where the overlap can be nonzero. On convex domains the pair rate and the
//! placement decomposition are computed by independent routes, and their
//! agreement is a build-time consistency check. Pairs congruent by
//! translation (the interior of a structured mesh) share one integration
//! through a translation-class memo.
//!
//! Dissociation rates come either from rejection sampling at the detachment
//! rate `mu` (no table needed) or from the detailed-balance identity
//! `kminus[i][j][k] = K_d |V_i| |V_j| / |V_k| * kplus[i][j][k]`,
//! which makes the discrete chain exactly reversible with respect to the
//! continuous model's equilibrium.

use std::collections::HashMap;

use thiserror::Error;

use crate::geom::{
    bbox, is_convex, polygon_dist, signed_area, triangulate, vertex_centroid, Point, Polygon,
};
use crate::mesh::DualMesh;
use crate::quad::{
    integrate_triangles, seeded_triangles, QuadResult, DEFAULT_MAX_DEPTH, DEFAULT_MAX_EVALS,
};

/// Bimolecular interaction kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Interaction {
    /// `lambda` inside the reaction radius, zero outside.
    Doi { rb: f64, lambda: f64 },
    /// `lambda (3/2pi)^{3/2} rb^-3 exp(-3 s^2 / (2 rb^2))`, truncated at
    /// `cutoff * rb` (tail mass below `exp(-3 cutoff^2 / 2)`).
    Gaussian { rb: f64, lambda: f64, cutoff: f64 },
    /// Lattice model: reactions only inside one voxel at `beta / |V_i|`.
    Rdme { beta: f64 },
}

impl Interaction {
    /// Distance beyond which a voxel pair cannot react.
    pub fn reach(&self) -> f64 {
        match *self {
            Interaction::Doi { rb, .. } => rb,
            Interaction::Gaussian { rb, cutoff, .. } => rb * cutoff,
            Interaction::Rdme { .. } => 0.0,
        }
    }

    /// Pointwise reaction rate at reactant separation `s`; the lattice
    /// model has no continuous kernel.
    pub fn rate_at(&self, s: f64) -> f64 {
        match *self {
            Interaction::Doi { rb, lambda } => {
                if s < rb {
                    lambda
                } else {
                    0.0
                }
            }
            Interaction::Gaussian { rb, lambda, cutoff } => {
                if s >= rb * cutoff {
                    return 0.0;
                }
                let norm =
                    (3.0 / (2.0 * std::f64::consts::PI)).powf(1.5) / (rb * rb * rb);
                lambda * norm * (-1.5 * s * s / (rb * rb)).exp()
            }
            Interaction::Rdme { .. } => panic!("lattice model has no continuous kernel"),
        }
    }
}

/// Tolerances and placement geometry for table construction.
#[derive(Clone, Copy, Debug)]
pub struct RateParams {
    pub interaction: Interaction,
    /// Product position weight: `z = gamma x + (1 - gamma) y`.
    pub gamma: f64,
    /// Relative tolerance for pair rates.
    pub tol_pair: f64,
    /// Relative tolerance for placement components.
    pub tol_placement: f64,
}

impl RateParams {
    pub fn new(interaction: Interaction) -> Self {
        RateParams {
            interaction,
            gamma: 0.5,
            tol_pair: 1e-6,
            tol_placement: 1e-5,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_tols(mut self, tol_pair: f64, tol_placement: f64) -> Self {
        self.tol_pair = tol_pair;
        self.tol_placement = tol_placement;
        self
    }
}

/// Per-voxel dissociation rates with product-pair placement distributions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DissocTable {
    /// Total dissociation rate of a complex in voxel `k`.
    pub rate: Vec<f64>,
    /// CSR over `k` into the placement triples.
    pub off: Vec<u32>,
    pub pair_i: Vec<u32>,
    pub pair_j: Vec<u32>,
    /// Probability of placing (A in i, B in j) given a dissociation in `k`.
    pub pair_p: Vec<f64>,
}

impl DissocTable {
    pub fn placements(&self, k: u32) -> (&[u32], &[u32], &[f64]) {
        let r = self.off[k as usize] as usize..self.off[k as usize + 1] as usize;
        (
            &self.pair_i[r.clone()],
            &self.pair_j[r.clone()],
            &self.pair_p[r],
        )
    }
}

/// Sparse pair rate table with optional placement distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ReactionTable {
    pub interaction: Interaction,
    pub gamma: f64,
    /// Fingerprint of the mesh the table was built for.
    pub fingerprint: u64,
    pub n_voxels: u32,
    /// CSR over the A-side voxel `i`: entries are B-side voxels.
    pub row_off: Vec<u32>,
    pub col_j: Vec<u32>,
    pub rate: Vec<f64>,
    /// Placement range per entry (empty table when built rate-only).
    pub pl_off: Vec<u32>,
    pub pl_k: Vec<u32>,
    pub pl_p: Vec<f64>,
    /// Transpose: CSR over the B-side voxel `j`, referencing entry indices.
    pub brow_off: Vec<u32>,
    pub bcol_i: Vec<u32>,
    pub bentry: Vec<u32>,
    /// Largest remaining error indicator from the pair quadratures.
    pub max_quad_err: f64,
}

impl ReactionTable {
    pub fn entries(&self) -> usize {
        self.rate.len()
    }

    /// Pair entries with A fixed in voxel `i`.
    pub fn pairs_for_a(&self, i: u32) -> (&[u32], &[f64]) {
        let r = self.row_off[i as usize] as usize..self.row_off[i as usize + 1] as usize;
        (&self.col_j[r.clone()], &self.rate[r])
    }

    /// Pair entry index for (i, j), if present.
    pub fn entry(&self, i: u32, j: u32) -> Option<usize> {
        let r = self.row_off[i as usize] as usize..self.row_off[i as usize + 1] as usize;
        self.col_j[r.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| r.start + k)
    }

    pub fn rate_of(&self, i: u32, j: u32) -> f64 {
        self.entry(i, j).map_or(0.0, |e| self.rate[e])
    }

    /// Placement distribution of entry `e` as (voxels, probabilities).
    pub fn placement(&self, e: usize) -> (&[u32], &[f64]) {
        let r = self.pl_off[e] as usize..self.pl_off[e + 1] as usize;
        (&self.pl_k[r.clone()], &self.pl_p[r])
    }

    pub fn has_placements(&self) -> bool {
        !self.pl_k.is_empty()
    }

    /// Pair entries with B fixed in voxel `j`: (A voxels, entry indices).
    pub fn pairs_for_b(&self, j: u32) -> (&[u32], &[u32]) {
        let r = self.brow_off[j as usize] as usize..self.brow_off[j as usize + 1] as usize;
        (&self.bcol_i[r.clone()], &self.bentry[r])
    }
}

// Per-pair build result prior to flattening.
struct PairBuild {
    j: u32,
    rate: f64,
    err: f64,
    placement: Vec<(u32, f64)>,
}

/// Clips `src` to the half-plane left of `a -> b`, writing into `out`.
fn clip_halfplane_into(src: &[Point], a: Point, b: Point, out: &mut Vec<Point>) {
    out.clear();
    let dir = b.sub(a);
    let n = src.len();
    for i in 0..n {
        let cur = src[i];
        let nxt = src[(i + 1) % n];
        let sc = dir.cross(cur.sub(a));
        let sn = dir.cross(nxt.sub(a));
        if sc >= 0.0 {
            out.push(cur);
        }
        if (sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0) {
            let t = sc / (sc - sn);
            out.push(cur.add(nxt.sub(cur).scale(t)));
        }
    }
}

/// Clips `subject` against the convex CCW polygon `clip` shifted by `-s`,
/// leaving the result in `a`. Both scratch buffers are clobbered. Returns
/// false when the intersection is empty.
fn shifted_clip_into(
    subject: &[Point],
    clip: &[Point],
    s: Point,
    a: &mut Vec<Point>,
    b: &mut Vec<Point>,
) -> bool {
    a.clear();
    a.extend_from_slice(subject);
    let n = clip.len();
    for e in 0..n {
        if a.len() < 3 {
            return false;
        }
        clip_halfplane_into(a, clip[e].sub(s), clip[(e + 1) % n].sub(s), b);
        std::mem::swap(a, b);
    }
    a.len() >= 3
}

/// A polygon as convex pieces: itself when convex, else its triangulation,
/// so every clip below is convex against convex.
fn convex_pieces(poly: &[Point]) -> Vec<Polygon> {
    if is_convex(poly) {
        vec![poly.to_vec()]
    } else {
        triangulate(poly).into_iter().map(|t| t.to_vec()).collect()
    }
}

/// `|V_i ∩ (V_j - s)|` from the convex pieces of both voxels.
fn overlap_area(si: &[Polygon], sj: &[Polygon], s: Point, a: &mut Vec<Point>, b: &mut Vec<Point>) -> f64 {
    let mut total = 0.0;
    for pi in si {
        for pj in sj {
            if shifted_clip_into(pi, pj, s, a, b) {
                total += signed_area(a);
            }
        }
    }
    total
}

/// `|V_i ∩ (V_j - s) ∩ (V_k - sp)|`.
#[allow(clippy::too_many_arguments)]
fn triple_overlap_area(
    si: &[Polygon],
    sj: &[Polygon],
    sk: &[Polygon],
    s: Point,
    sp: Point,
    a: &mut Vec<Point>,
    b: &mut Vec<Point>,
    mid: &mut Vec<Point>,
) -> f64 {
    let mut total = 0.0;
    for pi in si {
        for pj in sj {
            if !shifted_clip_into(pi, pj, s, a, b) {
                continue;
            }
            mid.clear();
            mid.extend_from_slice(a);
            for pk in sk {
                if shifted_clip_into(mid, pk, sp, a, b) {
                    total += signed_area(a);
                }
            }
        }
    }
    total
}

/// Shift length beyond which `V_i` and `V_j - s` cannot overlap: centroid
/// separation plus both circumradii.
fn outer_radius(vi: &[Point], vj: &[Point]) -> f64 {
    let ci = vertex_centroid(vi);
    let cj = vertex_centroid(vj);
    let ri = vi.iter().map(|p| p.dist(ci)).fold(0.0, f64::max);
    let rj = vj.iter().map(|p| p.dist(cj)).fold(0.0, f64::max);
    cj.sub(ci).norm() + ri + rj
}

/// Total kernel mass `∫ w(|s|) ds` over the plane, truncation included.
fn kernel_mass(interaction: Interaction) -> f64 {
    match interaction {
        Interaction::Doi { rb, lambda } => lambda * std::f64::consts::PI * rb * rb,
        Interaction::Gaussian { rb, lambda, cutoff } => {
            let a = 1.5 / (rb * rb);
            let norm = (3.0 / (2.0 * std::f64::consts::PI)).powf(1.5) / (rb * rb * rb);
            lambda * norm * std::f64::consts::PI / a * (1.0 - (-a * (cutoff * rb).powi(2)).exp())
        }
        Interaction::Rdme { .. } => 0.0,
    }
}

// Seed elements for the polar unit square; the support always spans the
// radial window by construction, so light seeding plus adaptivity suffices.
const PAIR_SEED_DIAM: f64 = 0.71;
const PAIR_SEED_CAP: usize = 256;
const COMP_SEED_CAP: usize = 512;

/// Integral of `w(|s|) g(s)` over the annulus `lo <= |s| <= hi`, in polar
/// coordinates mapped onto the unit square so the radial support window
/// fills the whole domain.
#[allow(clippy::too_many_arguments)]
fn annulus_integral<G: FnMut(Point) -> f64>(
    interaction: Interaction,
    lo: f64,
    hi: f64,
    mut g: G,
    tol: f64,
    floor: f64,
    seed_diam: f64,
    cap: usize,
) -> QuadResult {
    let span = hi - lo;
    let jac = 2.0 * std::f64::consts::PI * span;
    let mut f = |p: Point| {
        let r = lo + span * p.x;
        let w = interaction.rate_at(r);
        if w == 0.0 {
            return 0.0;
        }
        let th = 2.0 * std::f64::consts::PI * p.y;
        let s = Point::new(r * th.cos(), r * th.sin());
        let a = g(s);
        if a == 0.0 {
            0.0
        } else {
            jac * r * w * a
        }
    };
    let sq = [
        Point::new(0.0, 0.0),
        Point::new(1.0, 0.0),
        Point::new(1.0, 1.0),
        Point::new(0.0, 1.0),
    ];
    let seeds = seeded_triangles(&sq, seed_diam, cap);
    integrate_triangles(&seeds, &mut f, tol, floor, DEFAULT_MAX_DEPTH, DEFAULT_MAX_EVALS)
}

/// Mean of the kernel over a voxel pair: raw integral divided by both
/// areas. Works for any kernel with a pointwise rate.
fn pair_rate(dual: &DualMesh, i: u32, j: u32, interaction: Interaction, tol: f64) -> (f64, f64) {
    let vi = &dual.voxels[i as usize];
    let vj = &dual.voxels[j as usize];
    let scale = dual.areas[i as usize] * dual.areas[j as usize];
    let d0 = if i == j { 0.0 } else { polygon_dist(vi, vj) };
    let hi = interaction.reach().min(outer_radius(vi, vj) * (1.0 + 1e-12));
    if hi <= d0 {
        return (0.0, 0.0);
    }
    let si = convex_pieces(vi);
    let sj = convex_pieces(vj);
    let (mut ba, mut bb) = (Vec::with_capacity(16), Vec::with_capacity(16));
    // Floor the relative tolerance at the largest possible raw integral
    // (full kernel mass over the smaller voxel) so genuinely tiny overlaps
    // converge quickly instead of chasing digits of nothing.
    let floor =
        1e-9 * kernel_mass(interaction) * dual.areas[i as usize].min(dual.areas[j as usize]);
    let r = annulus_integral(
        interaction,
        d0,
        hi,
        |s| overlap_area(&si, &sj, s, &mut ba, &mut bb),
        tol,
        floor,
        PAIR_SEED_DIAM,
        PAIR_SEED_CAP,
    );
    (r.value / scale, r.err / scale)
}

fn doi_pair_rate(
    dual: &DualMesh,
    i: u32,
    j: u32,
    rb: f64,
    lambda: f64,
    tol: f64,
) -> (f64, f64) {
    pair_rate(dual, i, j, Interaction::Doi { rb, lambda }, tol)
}

/// One placement component `kplus[i][j][k]`, restricted to the radial
/// window where the product map `x + (1-gamma) s` can land in `V_k`.
/// `seed_div` deepens the seed mesh on retries when part of a small
/// support was missed. `pair_raw` (the raw pair integral) floors the
/// tolerance so components tiny against the pair rate converge
/// immediately instead of being resolved to useless relative precision.
#[allow(clippy::too_many_arguments)]
fn doi_component(
    dual: &DualMesh,
    i: u32,
    j: u32,
    k: u32,
    rb: f64,
    lambda: f64,
    gamma: f64,
    tol: f64,
    pair_raw: f64,
    seed_div: u32,
) -> f64 {
    let vi = &dual.voxels[i as usize];
    let vj = &dual.voxels[j as usize];
    let vk = &dual.voxels[k as usize];
    let scale = dual.areas[i as usize] * dual.areas[j as usize];
    let om = 1.0 - gamma;
    // Degenerate gammas are shortcut to a parent voxel before integration.
    assert!(om > 0.0 && gamma >= 0.0);
    let d0ij = if i == j { 0.0 } else { polygon_dist(vi, vj) };
    let d0ik = if i == k { 0.0 } else { polygon_dist(vi, vk) };
    let lo = d0ij.max(d0ik / om);
    let hi = rb
        .min(outer_radius(vi, vj) * (1.0 + 1e-12))
        .min(outer_radius(vi, vk) * (1.0 + 1e-12) / om);
    if hi <= lo {
        return 0.0;
    }
    let si = convex_pieces(vi);
    let sj = convex_pieces(vj);
    let sk = convex_pieces(vk);
    let (mut ba, mut bb, mut bm) = (
        Vec::with_capacity(16),
        Vec::with_capacity(16),
        Vec::with_capacity(16),
    );
    let inter = Interaction::Doi { rb, lambda };
    let cap = COMP_SEED_CAP << (2 * seed_div);
    let r = annulus_integral(
        inter,
        lo,
        hi,
        |s| triple_overlap_area(&si, &sj, &sk, s, s.scale(om), &mut ba, &mut bb, &mut bm),
        tol,
        pair_raw,
        PAIR_SEED_DIAM / (1u64 << seed_div) as f64,
        cap,
    );
    r.value / scale
}

/// Placement components `kplus[i][j][k]` over all candidate `k`, with
/// retries against the pair rate: on a convex domain no product mass is
/// lost, so a component-sum deficit beyond tolerance means seed points
/// missed part of some component's support. All components are then
/// recomputed with denser seeds. Pass `check_total: None` on non-convex
/// domains, where a deficit is genuine. Zeros are filtered from the result.
fn doi_placement_components(
    dual: &DualMesh,
    i: u32,
    j: u32,
    rb: f64,
    lambda: f64,
    gamma: f64,
    tol: f64,
    pair_raw: f64,
    candidates: &[u32],
    check_total: Option<f64>,
) -> Vec<(u32, f64)> {
    let mut comps: Vec<(u32, f64)> = candidates
        .iter()
        .map(|&k| {
            (
                k,
                doi_component(dual, i, j, k, rb, lambda, gamma, tol, pair_raw, 0),
            )
        })
        .collect();
    if let Some(hull_rate) = check_total {
        let mut total: f64 = comps.iter().map(|&(_, v)| v).sum();
        let mut div = 1;
        while hull_rate - total > 3.0 * tol * hull_rate && div <= 3 {
            for c in comps.iter_mut() {
                c.1 = doi_component(dual, i, j, c.0, rb, lambda, gamma, tol, pair_raw, div);
            }
            total = comps.iter().map(|&(_, v)| v).sum();
            div += 1;
        }
    }
    comps.retain(|&(_, v)| v > 0.0);
    comps
}

/// Candidate product voxels for the pair (i, j): every voxel whose bounding
/// box meets the bounding box of all possible product positions.
fn placement_candidates(dual: &DualMesh, i: u32, j: u32, gamma: f64) -> Vec<u32> {
    let (ilo, ihi) = bbox(&dual.voxels[i as usize]);
    let (jlo, jhi) = bbox(&dual.voxels[j as usize]);
    let lo = Point::new(
        gamma * ilo.x + (1.0 - gamma) * jlo.x,
        gamma * ilo.y + (1.0 - gamma) * jlo.y,
    );
    let hi = Point::new(
        gamma * ihi.x + (1.0 - gamma) * jhi.x,
        gamma * ihi.y + (1.0 - gamma) * jhi.y,
    );
    dual.voxels_near_box(lo, hi)
}

fn gaussian_pair_rate(
    dual: &DualMesh,
    i: u32,
    j: u32,
    rb: f64,
    lambda: f64,
    cutoff: f64,
    tol: f64,
) -> (f64, f64) {
    pair_rate(dual, i, j, Interaction::Gaussian { rb, lambda, cutoff }, tol)
}

/// Translation class of a voxel relative to another voxel's node: shape
/// class id plus the quantized node offset.
type VoxelSig = (u32, i64, i64);
/// Pair identity up to translation: both shape classes and the offset.
type PairKey = (u32, u32, i64, i64);

/// Memo for pairs congruent by translation. Voxels get a shape class from
/// their node-relative vertex loops quantized well below any real geometric
/// difference; pair rates reuse across equal `(class_i, class_j, offset)`
/// keys, placement rows additionally across equal candidate environments.
struct TranslationMemo {
    quantum: f64,
    voxel_class: Vec<u32>,
    pair: HashMap<PairKey, (f64, f64)>,
    rows: HashMap<(PairKey, Vec<VoxelSig>), Vec<(VoxelSig, f64)>>,
}

fn quant(x: f64, q: f64) -> i64 {
    (x / q).round() as i64
}

impl TranslationMemo {
    fn new(dual: &DualMesh) -> Self {
        let quantum = dual.h_max.max(f64::MIN_POSITIVE) * 1e-9;
        let mut ids: HashMap<Vec<(i64, i64)>, u32> = HashMap::new();
        let mut voxel_class = Vec::with_capacity(dual.voxel_count());
        for (v, node) in dual.voxels.iter().zip(&dual.nodes) {
            let key: Vec<(i64, i64)> = v
                .iter()
                .map(|p| (quant(p.x - node.x, quantum), quant(p.y - node.y, quantum)))
                .collect();
            let next = ids.len() as u32;
            voxel_class.push(*ids.entry(key).or_insert(next));
        }
        TranslationMemo {
            quantum,
            voxel_class,
            pair: HashMap::new(),
            rows: HashMap::new(),
        }
    }

    fn sig(&self, dual: &DualMesh, base: u32, k: u32) -> VoxelSig {
        let d = dual.nodes[k as usize].sub(dual.nodes[base as usize]);
        (
            self.voxel_class[k as usize],
            quant(d.x, self.quantum),
            quant(d.y, self.quantum),
        )
    }

    fn pair_key(&self, dual: &DualMesh, i: u32, j: u32) -> PairKey {
        let (c, dx, dy) = self.sig(dual, i, j);
        (self.voxel_class[i as usize], c, dx, dy)
    }
}

fn build_pair_row(
    dual: &DualMesh,
    i: u32,
    params: &RateParams,
    with_placement: bool,
    convex_domain: bool,
    memo: &mut TranslationMemo,
) -> Vec<PairBuild> {
    let reach = params.interaction.reach();
    let (lo, hi) = bbox(&dual.voxels[i as usize]);
    let candidates = dual.voxels_near_box(
        Point::new(lo.x - reach, lo.y - reach),
        Point::new(hi.x + reach, hi.y + reach),
    );
    let mut row = Vec::new();
    for j in candidates {
        if polygon_dist(&dual.voxels[i as usize], &dual.voxels[j as usize]) >= reach
            && i != j
        {
            continue;
        }
        match params.interaction {
            Interaction::Doi { rb, lambda } => {
                let gamma = params.gamma;
                // Degenerate placement weights put the product in a parent
                // voxel with certainty.
                let trivial_k = if gamma >= 1.0 {
                    Some(i)
                } else if gamma <= 0.0 {
                    Some(j)
                } else {
                    None
                };
                // The hull-formula rate bounds the true rate from above
                // (lost products only reduce it) and sets the error scale.
                let pkey = memo.pair_key(dual, i, j);
                let (hull_rate, err) = match memo.pair.get(&pkey) {
                    Some(&v) => v,
                    None => {
                        let v = doi_pair_rate(dual, i, j, rb, lambda, params.tol_pair);
                        memo.pair.insert(pkey, v);
                        v
                    }
                };
                if hull_rate <= 0.0 {
                    continue;
                }
                if with_placement && trivial_k.is_none() {
                    let scale = dual.areas[i as usize] * dual.areas[j as usize];
                    let pair_raw = hull_rate * scale;
                    let cand = placement_candidates(dual, i, j, gamma);
                    let sigs: Vec<VoxelSig> = cand.iter().map(|&k| memo.sig(dual, i, k)).collect();
                    let rkey = (pkey, {
                        let mut s = sigs.clone();
                        s.sort_unstable();
                        s
                    });
                    let comps: Vec<(u32, f64)> = if let Some(stored) = memo.rows.get(&rkey) {
                        let by_sig: HashMap<VoxelSig, u32> =
                            sigs.iter().copied().zip(cand.iter().copied()).collect();
                        stored.iter().map(|&(sg, v)| (by_sig[&sg], v)).collect()
                    } else {
                        let comps = doi_placement_components(
                            dual,
                            i,
                            j,
                            rb,
                            lambda,
                            gamma,
                            params.tol_placement,
                            pair_raw,
                            &cand,
                            convex_domain.then_some(hull_rate),
                        );
                        let stored: Vec<(VoxelSig, f64)> = comps
                            .iter()
                            .map(|&(k, v)| (memo.sig(dual, i, k), v))
                            .collect();
                        memo.rows.insert(rkey, stored);
                        comps
                    };
                    let total: f64 = comps.iter().map(|&(_, v)| v).sum();
                    if total <= 0.0 {
                        continue;
                    }
                    // Non-convex domain: the decomposition IS the rate
                    // (product positions outside the domain are lost).
                    let rate = if convex_domain { hull_rate } else { total };
                    let placement = comps
                        .into_iter()
                        .map(|(k, v)| (k, v / total))
                        .filter(|&(_, p)| p > 1e-13)
                        .collect();
                    row.push(PairBuild {
                        j,
                        rate,
                        err,
                        placement,
                    });
                } else {
                    let placement = match trivial_k {
                        Some(k) if with_placement => vec![(k, 1.0)],
                        _ => Vec::new(),
                    };
                    row.push(PairBuild {
                        j,
                        rate: hull_rate,
                        err,
                        placement,
                    });
                }
            }
            Interaction::Gaussian { rb, lambda, cutoff } => {
                let pkey = memo.pair_key(dual, i, j);
                let (rate, err) = match memo.pair.get(&pkey) {
                    Some(&v) => v,
                    None => {
                        let v = gaussian_pair_rate(dual, i, j, rb, lambda, cutoff, params.tol_pair);
                        memo.pair.insert(pkey, v);
                        v
                    }
                };
                if rate <= 0.0 {
                    continue;
                }
                row.push(PairBuild {
                    j,
                    rate,
                    err,
                    placement: Vec::new(),
                });
            }
            Interaction::Rdme { beta } => {
                if i == j {
                    row.push(PairBuild {
                        j,
                        rate: beta / dual.areas[i as usize],
                        err: 0.0,
                        placement: if with_placement {
                            vec![(i, 1.0)]
                        } else {
                            Vec::new()
                        },
                    });
                }
            }
        }
    }
    row.sort_by_key(|p| p.j);
    row
}

/// True if the meshed domain is convex: the convex hull of the boundary
/// nodes has the same area as the voxel tiling exactly when no part of the
/// hull lies outside the domain.
pub fn domain_is_convex(dual: &DualMesh) -> bool {
    let pts: Vec<Point> = dual
        .nodes
        .iter()
        .zip(dual.is_boundary.iter())
        .filter(|&(_, &b)| b)
        .map(|(&p, _)| p)
        .collect();
    if pts.len() < 3 {
        return true;
    }
    let hull = convex_hull(&pts);
    let hull_area = crate::geom::polygon_area(&hull);
    // Compare against the voxel tiling's total area.
    (hull_area - dual.total_area).abs() <= 1e-9 * dual.total_area
}

fn convex_hull(pts: &[Point]) -> Vec<Point> {
    let mut p: Vec<Point> = pts.to_vec();
    p.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    p.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(p.iter())
        } else {
            Box::new(p.iter().rev())
        };
        for &q in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if b.sub(a).cross(q.sub(a)) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

fn flatten_rows(
    dual: &DualMesh,
    interaction: Interaction,
    gamma: f64,
    rows: Vec<Vec<PairBuild>>,
) -> ReactionTable {
    let n = dual.voxel_count() as u32;
    let mut row_off = Vec::with_capacity(n as usize + 1);
    let mut col_j = Vec::new();
    let mut rate = Vec::new();
    let mut pl_off = vec![0u32];
    let mut pl_k = Vec::new();
    let mut pl_p = Vec::new();
    let mut max_quad_err: f64 = 0.0;
    row_off.push(0u32);
    for row in &rows {
        for p in row {
            col_j.push(p.j);
            rate.push(p.rate);
            max_quad_err = max_quad_err.max(p.err);
            for &(k, prob) in &p.placement {
                pl_k.push(k);
                pl_p.push(prob);
            }
            pl_off.push(pl_k.len() as u32);
        }
        row_off.push(col_j.len() as u32);
    }
    // Transpose for B-side lookups.
    let mut bcounts = vec![0u32; n as usize + 1];
    for &j in &col_j {
        bcounts[j as usize + 1] += 1;
    }
    for k in 0..n as usize {
        bcounts[k + 1] += bcounts[k];
    }
    let brow_off = bcounts.clone();
    let mut cursor = bcounts;
    let mut bcol_i = vec![0u32; col_j.len()];
    let mut bentry = vec![0u32; col_j.len()];
    for i in 0..n {
        let r = row_off[i as usize] as usize..row_off[i as usize + 1] as usize;
        for e in r {
            let j = col_j[e] as usize;
            let slot = cursor[j] as usize;
            bcol_i[slot] = i;
            bentry[slot] = e as u32;
            cursor[j] += 1;
        }
    }
    ReactionTable {
        interaction,
        gamma,
        fingerprint: dual.fingerprint,
        n_voxels: n,
        row_off,
        col_j,
        rate,
        pl_off,
        pl_k,
        pl_p,
        brow_off,
        bcol_i,
        bentry,
        max_quad_err,
    }
}

/// Builds the Doi pair rate table; `with_placement` adds the product
/// placement distributions (needed for any reaction that creates a C).
pub fn build_doi_table(dual: &DualMesh, params: &RateParams, with_placement: bool) -> ReactionTable {
    assert!(matches!(params.interaction, Interaction::Doi { .. }));
    let convex = domain_is_convex(dual);
    let mut memo = TranslationMemo::new(dual);
    let rows: Vec<Vec<PairBuild>> = (0..dual.voxel_count() as u32)
        .map(|i| build_pair_row(dual, i, params, with_placement, convex, &mut memo))
        .collect();
    flatten_rows(dual, params.interaction, params.gamma, rows)
}

/// Builds the Gaussian-kernel pair rate table (annihilation use: rates
/// only, no placements).
pub fn build_gaussian_table(dual: &DualMesh, params: &RateParams) -> ReactionTable {
    assert!(matches!(params.interaction, Interaction::Gaussian { .. }));
    let mut memo = TranslationMemo::new(dual);
    let rows: Vec<Vec<PairBuild>> = (0..dual.voxel_count() as u32)
        .map(|i| build_pair_row(dual, i, params, false, true, &mut memo))
        .collect();
    flatten_rows(dual, params.interaction, params.gamma, rows)
}

/// Builds the lattice (same-voxel) table with `kplus[i][i] = beta / |V_i|`.
pub fn build_rdme_table(dual: &DualMesh, beta: f64, with_placement: bool) -> ReactionTable {
    let params = RateParams::new(Interaction::Rdme { beta });
    let mut memo = TranslationMemo::new(dual);
    let rows: Vec<Vec<PairBuild>> = (0..dual.voxel_count() as u32)
        .map(|i| build_pair_row(dual, i, &params, with_placement, true, &mut memo))
        .collect();
    flatten_rows(dual, params.interaction, params.gamma, rows)
}

/// Lattice dissociation: rate `beta_minus` everywhere, both products placed
/// back in the dissolving voxel.
pub fn rdme_dissociation(dual: &DualMesh, beta_minus: f64) -> DissocTable {
    let n = dual.voxel_count();
    let mut off = Vec::with_capacity(n + 1);
    off.push(0u32);
    let mut pair_i = Vec::with_capacity(n);
    let mut pair_j = Vec::with_capacity(n);
    let mut pair_p = Vec::with_capacity(n);
    for k in 0..n as u32 {
        pair_i.push(k);
        pair_j.push(k);
        pair_p.push(1.0);
        off.push(pair_i.len() as u32);
    }
    DissocTable {
        rate: vec![beta_minus; n],
        off,
        pair_i,
        pair_j,
        pair_p,
    }
}

/// Derives dissociation rates from the association table by detailed
/// balance: `kminus[i][j][k] = kd * |V_i| |V_j| / |V_k| * kplus[i][j][k]`.
/// In the domain interior the total rate reduces to
/// `kd * lambda * pi * rb^2` independent of the mesh.
pub fn detailed_balance_dissociation(
    table: &ReactionTable,
    dual: &DualMesh,
    kd: f64,
) -> DissocTable {
    assert!(
        table.has_placements(),
        "detailed balance needs placement components"
    );
    let n = dual.voxel_count();
    let mut per_k: Vec<Vec<(u32, u32, f64)>> = vec![Vec::new(); n];
    for i in 0..table.n_voxels {
        let r = table.row_off[i as usize] as usize..table.row_off[i as usize + 1] as usize;
        for e in r {
            let j = table.col_j[e];
            let vij = dual.areas[i as usize] * dual.areas[j as usize];
            let (ks, ps) = table.placement(e);
            for (&k, &p) in ks.iter().zip(ps) {
                // kplus[i][j][k] = rate * p
                let km = kd * vij / dual.areas[k as usize] * table.rate[e] * p;
                per_k[k as usize].push((i, j, km));
            }
        }
    }
    let mut off = Vec::with_capacity(n + 1);
    off.push(0u32);
    let mut rate = Vec::with_capacity(n);
    let mut pair_i = Vec::new();
    let mut pair_j = Vec::new();
    let mut pair_p = Vec::new();
    for k in 0..n {
        let list = &mut per_k[k];
        list.sort_by_key(|&(i, j, _)| (i, j));
        let total: f64 = list.iter().map(|&(_, _, v)| v).sum();
        rate.push(total);
        if total > 0.0 {
            for &(i, j, v) in list.iter() {
                let p = v / total;
                if p > 1e-15 {
                    pair_i.push(i);
                    pair_j.push(j);
                    pair_p.push(p);
                }
            }
        }
        off.push(pair_i.len() as u32);
    }
    DissocTable {
        rate,
        off,
        pair_i,
        pair_j,
        pair_p,
    }
}

/// Table file errors.
#[derive(Debug, Error)]
pub enum TableError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a rate table file")]
    BadMagic,
    #[error("unsupported table version {0}")]
    BadVersion(u32),
    #[error("table was built for a different mesh (fingerprint {found:#x}, mesh {expected:#x})")]
    FingerprintMismatch { found: u64, expected: u64 },
    #[error("corrupt table file: {0}")]
    Corrupt(String),
}

const TABLE_MAGIC: u32 = 0x43524454; // "CRDT"
const TABLE_VERSION: u32 = 1;

struct ByteWriter<W: std::io::Write>(W);

impl<W: std::io::Write> ByteWriter<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u32s(&mut self, vs: &[u32]) -> std::io::Result<()> {
        self.u64(vs.len() as u64)?;
        for &v in vs {
            self.u32(v)?;
        }
        Ok(())
    }
    fn f64s(&mut self, vs: &[f64]) -> std::io::Result<()> {
        self.u64(vs.len() as u64)?;
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct ByteReader<R: std::io::Read>(R);

impl<R: std::io::Read> ByteReader<R> {
    fn u32(&mut self) -> Result<u32, TableError> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64, TableError> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64, TableError> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn u32s(&mut self) -> Result<Vec<u32>, TableError> {
        let n = self.u64()? as usize;
        if n > (1 << 33) {
            return Err(TableError::Corrupt("array length".into()));
        }
        (0..n).map(|_| self.u32()).collect()
    }
    fn f64s(&mut self) -> Result<Vec<f64>, TableError> {
        let n = self.u64()? as usize;
        if n > (1 << 33) {
            return Err(TableError::Corrupt("array length".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Serializes a table (and optional dissociation table) byte-exactly.
pub fn save_table<W: std::io::Write>(
    table: &ReactionTable,
    dissoc: Option<&DissocTable>,
    w: W,
) -> std::io::Result<()> {
    let mut w = ByteWriter(std::io::BufWriter::new(w));
    w.u32(TABLE_MAGIC)?;
    w.u32(TABLE_VERSION)?;
    w.u64(table.fingerprint)?;
    match table.interaction {
        Interaction::Doi { rb, lambda } => {
            w.u32(0)?;
            w.f64(rb)?;
            w.f64(lambda)?;
            w.f64(0.0)?;
        }
        Interaction::Gaussian { rb, lambda, cutoff } => {
            w.u32(1)?;
            w.f64(rb)?;
            w.f64(lambda)?;
            w.f64(cutoff)?;
        }
        Interaction::Rdme { beta } => {
            w.u32(2)?;
            w.f64(beta)?;
            w.f64(0.0)?;
            w.f64(0.0)?;
        }
    }
    w.f64(table.gamma)?;
    w.u32(table.n_voxels)?;
    w.f64(table.max_quad_err)?;
    w.u32s(&table.row_off)?;
    w.u32s(&table.col_j)?;
    w.f64s(&table.rate)?;
    w.u32s(&table.pl_off)?;
    w.u32s(&table.pl_k)?;
    w.f64s(&table.pl_p)?;
    w.u32s(&table.brow_off)?;
    w.u32s(&table.bcol_i)?;
    w.u32s(&table.bentry)?;
    match dissoc {
        Some(d) => {
            w.u32(1)?;
            w.f64s(&d.rate)?;
            w.u32s(&d.off)?;
            w.u32s(&d.pair_i)?;
            w.u32s(&d.pair_j)?;
            w.f64s(&d.pair_p)?;
        }
        None => w.u32(0)?,
    }
    use std::io::Write as _;
    w.0.flush()
}

/// Loads a table saved by [`save_table`], refusing tables built for a
/// different mesh when `expect_fingerprint` is given.
pub fn load_table<R: std::io::Read>(
    r: R,
    expect_fingerprint: Option<u64>,
) -> Result<(ReactionTable, Option<DissocTable>), TableError> {
    let mut r = ByteReader(std::io::BufReader::new(r));
    if r.u32()? != TABLE_MAGIC {
        return Err(TableError::BadMagic);
    }
    let version = r.u32()?;
    if version != TABLE_VERSION {
        return Err(TableError::BadVersion(version));
    }
    let fingerprint = r.u64()?;
    if let Some(expected) = expect_fingerprint {
        if fingerprint != expected {
            return Err(TableError::FingerprintMismatch {
                found: fingerprint,
                expected,
            });
        }
    }
    let kind = r.u32()?;
    let (p0, p1, p2) = (r.f64()?, r.f64()?, r.f64()?);
    let interaction = match kind {
        0 => Interaction::Doi { rb: p0, lambda: p1 },
        1 => Interaction::Gaussian {
            rb: p0,
            lambda: p1,
            cutoff: p2,
        },
        2 => Interaction::Rdme { beta: p0 },
        k => return Err(TableError::Corrupt(format!("interaction kind {k}"))),
    };
    let gamma = r.f64()?;
    let n_voxels = r.u32()?;
    let max_quad_err = r.f64()?;
    let table = ReactionTable {
        interaction,
        gamma,
        fingerprint,
        n_voxels,
        max_quad_err,
        row_off: r.u32s()?,
        col_j: r.u32s()?,
        rate: r.f64s()?,
        pl_off: r.u32s()?,
        pl_k: r.u32s()?,
        pl_p: r.f64s()?,
        brow_off: r.u32s()?,
        bcol_i: r.u32s()?,
        bentry: r.u32s()?,
    };
    if table.row_off.len() != n_voxels as usize + 1
        || table.col_j.len() != table.rate.len()
        || table.pl_off.len() != table.rate.len() + 1
    {
        return Err(TableError::Corrupt("inconsistent array sizes".into()));
    }
    let dissoc = match r.u32()? {
        0 => None,
        1 => Some(DissocTable {
            rate: r.f64s()?,
            off: r.u32s()?,
            pair_i: r.u32s()?,
            pair_j: r.u32s()?,
            pair_p: r.f64s()?,
        }),
        k => return Err(TableError::Corrupt(format!("dissociation marker {k}"))),
    };
    Ok((table, dissoc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_dual, PrimalMesh};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_in_polygon(rng: &mut ChaCha8Rng, poly: &[Point]) -> Point {
        let (lo, hi) = bbox(poly);
        loop {
            let p = Point::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
            if crate::geom::point_in_polygon(p, poly, 0.0) {
                return p;
            }
        }
    }

    /// Monte-Carlo oracle for the pair rate: fraction of uniformly drawn
    /// (x, y) pairs within the reaction radius, times lambda.
    fn mc_doi_pair_rate(
        dual: &DualMesh,
        i: u32,
        j: u32,
        rb: f64,
        lambda: f64,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> (f64, f64) {
        let vi = &dual.voxels[i as usize];
        let vj = &dual.voxels[j as usize];
        let mut hits = 0usize;
        for _ in 0..n {
            let x = sample_in_polygon(rng, vi);
            let y = sample_in_polygon(rng, vj);
            if x.dist(y) < rb {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let se = lambda * (p * (1.0 - p) / n as f64).sqrt();
        (lambda * p, se)
    }

    /// Monte-Carlo oracle for one placement component: fraction of reacting
    /// pairs whose product position lands in voxel k.
    fn mc_doi_component(
        dual: &DualMesh,
        i: u32,
        j: u32,
        k: u32,
        rb: f64,
        gamma: f64,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> (f64, f64) {
        let vi = &dual.voxels[i as usize];
        let vj = &dual.voxels[j as usize];
        let vk = &dual.voxels[k as usize];
        let mut react = 0usize;
        let mut in_k = 0usize;
        for _ in 0..n {
            let x = sample_in_polygon(rng, vi);
            let y = sample_in_polygon(rng, vj);
            if x.dist(y) < rb {
                react += 1;
                let z = x.scale(gamma).add(y.scale(1.0 - gamma));
                if crate::geom::point_in_polygon(z, vk, 0.0) {
                    in_k += 1;
                }
            }
        }
        let p = in_k as f64 / react.max(1) as f64;
        let se = (p * (1.0 - p) / react.max(1) as f64).sqrt();
        (p, se)
    }

    fn square_dual(l: f64, n: usize) -> DualMesh {
        build_dual(&PrimalMesh::cartesian_square(l, n)).unwrap()
    }

    #[test]
    fn tiny_pair_saturates_at_lambda() {
        // Voxels much smaller than the reaction radius: every (x, y) pair
        // reacts, so the rate is exactly lambda.
        let dual = square_dual(0.01, 2);
        let params = RateParams::new(Interaction::Doi {
            rb: 1.0,
            lambda: 250.0,
        });
        let t = build_doi_table(&dual, &params, false);
        for i in 0..dual.voxel_count() as u32 {
            for j in 0..dual.voxel_count() as u32 {
                let r = t.rate_of(i, j);
                assert!(
                    (r - 250.0).abs() < 1e-6 * 250.0,
                    "rate({i},{j}) = {r} should saturate at lambda"
                );
            }
        }
    }

    #[test]
    fn pair_rates_match_monte_carlo() {
        let dual = square_dual(1.0, 3);
        let rb = 0.4;
        let lambda = 2.0;
        let params = RateParams::new(Interaction::Doi { rb, lambda });
        let t = build_doi_table(&dual, &params, false);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        // A corner pair, an adjacent pair, and a same-voxel pair.
        for (i, j) in [(0u32, 5u32), (5, 6), (5, 5), (0, 0)] {
            let (mc, se) = mc_doi_pair_rate(&dual, i, j, rb, lambda, 2_000_000, &mut rng);
            let r = t.rate_of(i, j);
            assert!(
                (r - mc).abs() <= 4.0 * se + 1e-9,
                "pair ({i},{j}): table {r} vs MC {mc} +- {se}"
            );
        }
    }

    #[test]
    fn rates_never_exceed_lambda_and_table_is_symmetric() {
        let dual = square_dual(1.0, 4);
        let lambda = 7.0;
        let params = RateParams::new(Interaction::Doi { rb: 0.3, lambda });
        let t = build_doi_table(&dual, &params, false);
        assert!(t.entries() > 0);
        for i in 0..dual.voxel_count() as u32 {
            let (js, rates) = t.pairs_for_a(i);
            for (&j, &r) in js.iter().zip(rates) {
                assert!(r <= lambda * (1.0 + 1e-9), "rate({i},{j}) = {r} > lambda");
                let rt = t.rate_of(j, i);
                assert!(
                    (r - rt).abs() <= 1e-4 * r.max(rt),
                    "asymmetry at ({i},{j}): {r} vs {rt}"
                );
            }
        }
    }

    #[test]
    fn far_pairs_are_absent() {
        let dual = square_dual(1.0, 4);
        let params = RateParams::new(Interaction::Doi {
            rb: 0.05,
            lambda: 1.0,
        });
        let t = build_doi_table(&dual, &params, false);
        // Opposite corners are ~1.4 apart with rb = 0.05.
        assert_eq!(t.entry(0, 24), None);
    }

    #[test]
    fn placement_rows_sum_to_one_and_decompose_rate() {
        let dual = square_dual(1.0, 3);
        let rb = 0.35;
        let lambda = 3.0;
        let params = RateParams::new(Interaction::Doi { rb, lambda });
        let t = build_doi_table(&dual, &params, true);
        assert!(t.has_placements());
        let mut checked = 0;
        for i in 0..dual.voxel_count() as u32 {
            let r = t.row_off[i as usize] as usize..t.row_off[i as usize + 1] as usize;
            for e in r {
                let (_, ps) = t.placement(e);
                let sum: f64 = ps.iter().sum();
                assert!(
                    (sum - 1.0).abs() < 1e-8,
                    "placement row at entry {e} sums to {sum}"
                );
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn placement_distribution_matches_monte_carlo() {
        let dual = square_dual(1.0, 3);
        let rb = 0.45;
        let lambda = 1.0;
        let gamma = 0.5;
        let params = RateParams::new(Interaction::Doi { rb, lambda }).with_gamma(gamma);
        let t = build_doi_table(&dual, &params, true);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (i, j) = (5u32, 6u32);
        let e = t.entry(i, j).expect("adjacent pair present");
        let (ks, ps) = t.placement(e);
        assert!(ks.len() >= 2, "midpoints should spread over voxels");
        for (&k, &p) in ks.iter().zip(ps) {
            let (mc, se) = mc_doi_component(&dual, i, j, k, rb, gamma, 400_000, &mut rng);
            assert!(
                (p - mc).abs() <= 4.0 * se + 2e-3,
                "component ({i},{j},{k}): table {p} vs MC {mc} +- {se}"
            );
        }
    }

    #[test]
    fn component_sum_matches_pair_rate_on_convex_domain() {
        // Two independent routes to kplus[i][j]: the direct area integral
        // and the sum of clipped placement components.
        let dual = square_dual(1.0, 3);
        for (i, j) in [(4u32, 5u32), (0, 0), (0, 1), (4, 8)] {
            let (direct, _) = doi_pair_rate(&dual, i, j, 0.4, 2.0, 1e-9);
            let scale = dual.areas[i as usize] * dual.areas[j as usize];
            let raw = direct * scale;
            let cand = placement_candidates(&dual, i, j, 0.5);
            let comps = doi_placement_components(
                &dual,
                i,
                j,
                0.4,
                2.0,
                0.5,
                1e-8,
                raw,
                &cand,
                Some(direct),
            );
            let total: f64 = comps.iter().map(|&(_, v)| v).sum();
            assert!(
                (total - direct).abs() <= 1e-6 * direct,
                "pair ({i},{j}): component sum {total} vs direct rate {direct}"
            );
        }
    }

    #[test]
    fn gamma_one_places_in_a_voxel() {
        let dual = square_dual(1.0, 2);
        let params = RateParams::new(Interaction::Doi {
            rb: 0.5,
            lambda: 1.0,
        })
        .with_gamma(1.0);
        let t = build_doi_table(&dual, &params, true);
        let e = t.entry(1, 2).unwrap();
        let (ks, ps) = t.placement(e);
        assert_eq!(ks, &[1]);
        assert_eq!(ps, &[1.0]);
    }

    #[test]
    fn gaussian_rate_approaches_kernel_on_tiny_voxels() {
        // Voxels tiny against rb: the pair rate is the kernel at the node
        // separation to high accuracy.
        let dual = square_dual(0.004, 2);
        let rb = 0.1;
        let lambda = 5.0;
        let params = RateParams::new(Interaction::Gaussian {
            rb,
            lambda,
            cutoff: 6.0,
        });
        let t = build_gaussian_table(&dual, &params);
        let norm = (3.0 / (2.0 * std::f64::consts::PI)).powf(1.5) / (rb * rb * rb);
        for (i, j) in [(0u32, 8u32), (0, 4), (3, 5)] {
            let s2 = dual.nodes[i as usize].sub(dual.nodes[j as usize]).norm2();
            let expect = lambda * norm * (-3.0 * s2 / (2.0 * rb * rb)).exp();
            let r = t.rate_of(i, j);
            assert!(
                (r - expect).abs() < 1e-2 * expect,
                "gaussian rate ({i},{j}) = {r} want about {expect}"
            );
        }
    }

    #[test]
    fn gaussian_rate_matches_nested_quadrature_and_monte_carlo() {
        // The edge-reduced kernel integral against two independent routes:
        // nested adaptive quadrature of the raw kernel, and Monte Carlo.
        let dual = square_dual(0.1, 2);
        let rb = 0.04;
        let lambda = 3.0;
        let cutoff = 8.0;
        let params = RateParams::new(Interaction::Gaussian { rb, lambda, cutoff });
        let t = build_gaussian_table(&dual, &params);
        let norm = (3.0 / (2.0 * std::f64::consts::PI)).powf(1.5) / (rb * rb * rb);
        let a = 3.0 / (2.0 * rb * rb);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (i, j) in [(4u32, 4u32), (4, 5), (0, 8)] {
            let r = t.rate_of(i, j);
            let vi = &dual.voxels[i as usize];
            let vj = &dual.voxels[j as usize];
            let scale = dual.areas[i as usize] * dual.areas[j as usize];
            let mut f = |x: Point| {
                let mut g = |y: Point| (-a * y.sub(x).norm2()).exp();
                crate::quad::integrate_polygon(vj, &mut g, 1e-7, 0.0).value
            };
            let nested = crate::quad::integrate_polygon(vi, &mut f, 1e-6, 0.0).value
                * lambda
                * norm
                / scale;
            assert!(
                (r - nested).abs() <= 1e-4 * nested,
                "pair ({i},{j}): edge-reduced {r} vs nested {nested}"
            );
            if i == 0 {
                continue; // corner pair too weak for a stable MC estimate
            }
            let m = 400_000;
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..m {
                let x = sample_in_polygon(&mut rng, vi);
                let y = sample_in_polygon(&mut rng, vj);
                let k = lambda * norm * (-a * y.sub(x).norm2()).exp();
                s += k;
                s2 += k * k;
            }
            let mc = s / m as f64;
            let se = ((s2 / m as f64 - mc * mc).max(0.0) / m as f64).sqrt();
            assert!(
                (r - mc).abs() <= 4.0 * se,
                "pair ({i},{j}): table {r} vs MC {mc} +- {se}"
            );
        }
    }

    #[test]
    fn gaussian_cutoff_prunes_pairs() {
        let dual = square_dual(1.0, 5);
        // Loose tolerances: this checks which pairs exist, not their values.
        let params = RateParams::new(Interaction::Gaussian {
            rb: 0.02,
            lambda: 1.0,
            cutoff: 4.0,
        })
        .with_tols(1e-4, 1e-4);
        let t = build_gaussian_table(&dual, &params);
        // Reach is 0.08: nodes 0 and 2 are 0.4 apart.
        assert_eq!(t.entry(0, 2), None);
        assert!(t.entry(0, 0).is_some());
    }

    #[test]
    fn rdme_table_is_diagonal_with_beta_over_area() {
        let dual = square_dual(0.2, 4);
        let beta = 3.5;
        let t = build_rdme_table(&dual, beta, true);
        assert_eq!(t.entries(), dual.voxel_count());
        for i in 0..dual.voxel_count() as u32 {
            let expect = beta / dual.areas[i as usize];
            assert!((t.rate_of(i, i) - expect).abs() < 1e-12 * expect);
            let e = t.entry(i, i).unwrap();
            let (ks, ps) = t.placement(e);
            assert_eq!((ks, ps), (&[i][..], &[1.0][..]));
        }
        let d = rdme_dissociation(&dual, 0.7);
        assert!(d.rate.iter().all(|&r| r == 0.7));
    }

    #[test]
    fn detailed_balance_gives_mu_in_interior() {
        // With kd = mu / (lambda pi rb^2) the total dissociation rate is
        // bounded by mu everywhere and equals mu for voxels farther than
        // rb from the boundary, independent of the mesh.
        let lambda = 5e3;
        let mu = 7.0;
        let rb = 0.15;
        let kd = mu / (lambda * std::f64::consts::PI * rb * rb);
        let dual = square_dual(1.0, 2);
        let params = RateParams::new(Interaction::Doi { rb, lambda }).with_tols(1e-7, 1e-7);
        let t = build_doi_table(&dual, &params, true);
        let d = detailed_balance_dissociation(&t, &dual, kd);
        let mut interior_checked = 0;
        for k in 0..dual.voxel_count() {
            assert!(
                d.rate[k] <= mu * (1.0 + 1e-6),
                "voxel {k}: kminus {} exceeds mu {mu}",
                d.rate[k]
            );
            let far = dual.voxels[k]
                .iter()
                .all(|p| p.x > rb && p.x < 1.0 - rb && p.y > rb && p.y < 1.0 - rb);
            if far {
                assert!(
                    (d.rate[k] - mu).abs() < 1e-6 * mu,
                    "interior voxel {k}: kminus {} want {mu}",
                    d.rate[k]
                );
                interior_checked += 1;
            }
        }
        assert!(interior_checked >= 1);
        // Placement rows are normalized.
        for k in 0..dual.voxel_count() as u32 {
            let (_, _, ps) = d.placements(k);
            if !ps.is_empty() {
                let s: f64 = ps.iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let dual = square_dual(1.0, 3);
        let params = RateParams::new(Interaction::Doi {
            rb: 0.3,
            lambda: 2.0,
        });
        let t = build_doi_table(&dual, &params, true);
        let d = detailed_balance_dissociation(&t, &dual, 0.9);
        let mut buf = Vec::new();
        save_table(&t, Some(&d), &mut buf).unwrap();
        let (t2, d2) = load_table(&buf[..], Some(dual.fingerprint)).unwrap();
        assert_eq!(t, t2);
        assert_eq!(Some(d), d2);
    }

    #[test]
    fn load_rejects_wrong_fingerprint() {
        let dual = square_dual(1.0, 2);
        let t = build_rdme_table(&dual, 1.0, false);
        let mut buf = Vec::new();
        save_table(&t, None, &mut buf).unwrap();
        let err = load_table(&buf[..], Some(dual.fingerprint ^ 1)).unwrap_err();
        assert!(matches!(err, TableError::FingerprintMismatch { .. }));
        assert!(load_table(&buf[..], Some(dual.fingerprint)).is_ok());
    }

    #[test]
    fn load_rejects_garbage() {
        assert!(matches!(
            load_table(&b"not a table"[..], None),
            Err(TableError::BadMagic)
        ));
    }

    #[test]
    fn convexity_detection() {
        let sq = square_dual(1.0, 4);
        assert!(domain_is_convex(&sq));
        // L-shaped domain: remove one quadrant's triangles.
        let mesh = PrimalMesh::cartesian_square(1.0, 4);
        let keep: Vec<[u32; 3]> = mesh
            .triangles
            .iter()
            .filter(|t| {
                let cx = (0..3)
                    .map(|c| mesh.nodes[t[c] as usize].x)
                    .sum::<f64>()
                    / 3.0;
                let cy = (0..3)
                    .map(|c| mesh.nodes[t[c] as usize].y)
                    .sum::<f64>()
                    / 3.0;
                !(cx > 0.5 && cy > 0.5)
            })
            .cloned()
            .collect();
        // Drop now-unused nodes by compacting indices.
        let mut used = vec![false; mesh.nodes.len()];
        for t in &keep {
            for &v in t {
                used[v as usize] = true;
            }
        }
        let mut remap = vec![0u32; mesh.nodes.len()];
        let mut nodes = Vec::new();
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = nodes.len() as u32;
                nodes.push(mesh.nodes[i]);
            }
        }
        let triangles: Vec<[u32; 3]> = keep
            .iter()
            .map(|t| [remap[t[0] as usize], remap[t[1] as usize], remap[t[2] as usize]])
            .collect();
        let l_dual = build_dual(&PrimalMesh { nodes, triangles }).unwrap();
        assert!(!domain_is_convex(&l_dual));
    }

    #[test]
    fn nonconvex_domain_rate_drops_lost_products() {
        // On a non-convex domain the pair rate must exclude reactions whose
        // product would land outside. Construct an L-shape and compare the
        // built rate against a Monte-Carlo estimate with the domain test.
        let mesh = PrimalMesh::cartesian_square(1.0, 4);
        let keep: Vec<[u32; 3]> = mesh
            .triangles
            .iter()
            .filter(|t| {
                let cx = (0..3).map(|c| mesh.nodes[t[c] as usize].x).sum::<f64>() / 3.0;
                let cy = (0..3).map(|c| mesh.nodes[t[c] as usize].y).sum::<f64>() / 3.0;
                !(cx > 0.5 && cy > 0.5)
            })
            .cloned()
            .collect();
        let mut used = vec![false; mesh.nodes.len()];
        for t in &keep {
            for &v in t {
                used[v as usize] = true;
            }
        }
        let mut remap = vec![0u32; mesh.nodes.len()];
        let mut nodes = Vec::new();
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = nodes.len() as u32;
                nodes.push(mesh.nodes[i]);
            }
        }
        let triangles: Vec<[u32; 3]> = keep
            .iter()
            .map(|t| [remap[t[0] as usize], remap[t[1] as usize], remap[t[2] as usize]])
            .collect();
        let dual = build_dual(&PrimalMesh { nodes, triangles }).unwrap();
        assert!(!domain_is_convex(&dual));

        let rb = 0.6;
        let lambda = 1.0;
        let gamma = 0.5;
        let params = RateParams::new(Interaction::Doi { rb, lambda })
            .with_gamma(gamma)
            .with_tols(1e-7, 1e-6);
        let t = build_doi_table(&dual, &params, true);

        // Voxels on opposite arms of the L: products near the inner corner
        // can fall outside the domain.
        let a = dual
            .locate_point(Point::new(0.85, 0.30))
            .expect("arm voxel");
        let b = dual
            .locate_point(Point::new(0.30, 0.85))
            .expect("arm voxel");
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let va = &dual.voxels[a as usize];
        let vb = &dual.voxels[b as usize];
        let mut react = 0usize;
        let n = 2_000_000;
        for _ in 0..n {
            let x = sample_in_polygon(&mut rng, va);
            let y = sample_in_polygon(&mut rng, vb);
            if x.dist(y) < rb {
                let z = x.scale(gamma).add(y.scale(1.0 - gamma));
                if dual.locate_point(z).is_some() {
                    react += 1;
                }
            }
        }
        let p = react as f64 / n as f64;
        let mc = lambda * p;
        let se = lambda * (p * (1.0 - p) / n as f64).sqrt();
        let r = t.rate_of(a, b);
        assert!(
            (r - mc).abs() <= 4.0 * se + 1e-9,
            "nonconvex rate ({a},{b}) = {r} vs MC {mc} +- {se}"
        );
        // And it must be strictly below the convex-formula value.
        let (hull_rate, _) = doi_pair_rate(&dual, a, b, rb, lambda, 1e-8);
        assert!(r < hull_rate * 0.999, "lost products must reduce the rate");
    }

    #[test]
    fn clipped_pieces_tile_the_voxel_pointwise() {
        // At every shift s the per-k triple overlaps must sum to the pair
        // overlap: the shifted voxels tile the shifted domain, and products
        // from this interior pair cannot leave it.
        let dual = square_dual(1.0, 3);
        let (i, j) = (5u32, 6u32);
        let vi = &dual.voxels[i as usize];
        let vj = &dual.voxels[j as usize];
        let rb = 0.3;
        let gamma = 0.5;
        let si = convex_pieces(vi);
        let sj = convex_pieces(vj);
        let sks: Vec<Vec<Polygon>> = dual.voxels.iter().map(|v| convex_pieces(v)).collect();
        let (mut a, mut b, mut m) = (Vec::new(), Vec::new(), Vec::new());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let r = rb * rng.gen::<f64>().sqrt();
            let th = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
            let s = Point::new(r * th.cos(), r * th.sin());
            let whole = overlap_area(&si, &sj, s, &mut a, &mut b);
            let mut sum = 0.0;
            for sk in &sks {
                sum +=
                    triple_overlap_area(&si, &sj, sk, s, s.scale(1.0 - gamma), &mut a, &mut b, &mut m);
            }
            assert!(
                (whole - sum).abs() <= 1e-12 * whole.max(1e-30),
                "at shift ({}, {}): pair {whole} vs component sum {sum}",
                s.x,
                s.y
            );
        }
    }
}
