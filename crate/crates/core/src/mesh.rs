//! Triangular primal meshes and their polygonal dual voxel meshes.
//!
//! A voxel is built around each primal node from the centroids of the
//! incident triangles and the midpoints of the incident edges; around
//! boundary nodes the polygon closes along the domain boundary through the
//! node itself. Voxel `i` therefore corresponds to node `i`, voxels tile the
//! domain exactly, and the voxel area equals the lumped P1 mass of the node.
//!
//! Mesh generation is out of scope except for structured squares; meshes
//! come from files in a plain text format (see [`PrimalMesh::parse`]).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geom::{
    bbox, point_in_polygon, polygon_area, polygon_diameter, Point, Polygon,
};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid mesh: {0}")]
    Invalid(String),
}

/// Triangulation of a polygonal domain.
#[derive(Clone, Debug)]
pub struct PrimalMesh {
    pub nodes: Vec<Point>,
    /// Vertex index triples, counter-clockwise.
    pub triangles: Vec<[u32; 3]>,
}

impl PrimalMesh {
    /// Parses the mesh text format:
    ///
    /// ```text
    /// # comment
    /// nodes N
    /// x y            (N lines)
    /// triangles T
    /// i j k          (T lines, 0-based corner indices)
    /// ```
    pub fn parse(text: &str) -> Result<Self, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let perr = |line: usize, msg: &str| MeshError::Parse {
            line,
            msg: msg.to_string(),
        };

        let (ln, header) = lines
            .next()
            .ok_or_else(|| perr(0, "empty mesh file"))?;
        let n: usize = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["nodes", count] => count
                .parse()
                .map_err(|_| perr(ln, "bad node count"))?,
            _ => return Err(perr(ln, "expected 'nodes N'")),
        };
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| perr(0, "unexpected end of file in node list"))?;
            let mut it = l.split_whitespace();
            let x: f64 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| perr(ln, "bad node coordinate"))?;
            let y: f64 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| perr(ln, "bad node coordinate"))?;
            if it.next().is_some() {
                return Err(perr(ln, "trailing tokens on node line"));
            }
            if !x.is_finite() || !y.is_finite() {
                return Err(perr(ln, "non-finite coordinate"));
            }
            nodes.push(Point::new(x, y));
        }
        let (ln, header) = lines
            .next()
            .ok_or_else(|| perr(0, "missing 'triangles T' header"))?;
        let t: usize = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["triangles", count] => count
                .parse()
                .map_err(|_| perr(ln, "bad triangle count"))?,
            _ => return Err(perr(ln, "expected 'triangles T'")),
        };
        let mut triangles = Vec::with_capacity(t);
        for _ in 0..t {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| perr(0, "unexpected end of file in triangle list"))?;
            let idx: Result<Vec<u32>, _> = l.split_whitespace().map(|t| t.parse()).collect();
            let idx = idx.map_err(|_| perr(ln, "bad triangle index"))?;
            if idx.len() != 3 {
                return Err(perr(ln, "expected three corner indices"));
            }
            triangles.push([idx[0], idx[1], idx[2]]);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(perr(ln, "trailing content after triangle list"));
        }
        let mesh = PrimalMesh { nodes, triangles };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn load(path: &Path) -> Result<Self, MeshError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes back to the text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {}", self.nodes.len());
        for p in &self.nodes {
            let _ = writeln!(s, "{:.17e} {:.17e}", p.x, p.y);
        }
        let _ = writeln!(s, "triangles {}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    fn tri_signed_area(&self, t: &[u32; 3]) -> f64 {
        let a = self.nodes[t[0] as usize];
        let b = self.nodes[t[1] as usize];
        let c = self.nodes[t[2] as usize];
        0.5 * b.sub(a).cross(c.sub(a))
    }

    /// Index bounds, orientation normalization, degeneracy and manifoldness
    /// checks. Clockwise triangles are reoriented in place.
    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.nodes.len() as u32;
        let mut scale: f64 = 0.0;
        for p in &self.nodes {
            scale = scale.max(p.x.abs()).max(p.y.abs());
        }
        let area_floor = 1e-14 * scale * scale;
        let mut edge_use: HashMap<(u32, u32), u32> = HashMap::new();
        for (k, t) in self.triangles.iter().enumerate() {
            for &v in t {
                if v >= n {
                    return Err(MeshError::Invalid(format!(
                        "triangle {k} references node {v} out of range"
                    )));
                }
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(MeshError::Invalid(format!("triangle {k} repeats a node")));
            }
            let a = self.tri_signed_area(t);
            if a.abs() <= area_floor {
                return Err(MeshError::Invalid(format!("triangle {k} is degenerate")));
            }
            for e in 0..3 {
                let (u, v) = (t[e], t[(e + 1) % 3]);
                let key = (u.min(v), u.max(v));
                let c = edge_use.entry(key).or_insert(0);
                *c += 1;
                if *c > 2 {
                    return Err(MeshError::Invalid(format!(
                        "edge ({},{}) shared by more than two triangles",
                        key.0, key.1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Returns a copy with all triangles counter-clockwise.
    pub fn normalized(mut self) -> Self {
        for k in 0..self.triangles.len() {
            if self.tri_signed_area(&self.triangles[k]) < 0.0 {
                self.triangles[k].swap(1, 2);
            }
        }
        self
    }

    /// Uniform refinement: every edge gains a midpoint node and every
    /// triangle splits into four similar children. Boundary polylines keep
    /// their geometry (midpoints are not projected anywhere).
    pub fn refine(&self) -> PrimalMesh {
        let mut nodes = self.nodes.clone();
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |u: u32, v: u32, nodes: &mut Vec<Point>| -> u32 {
            let key = (u.min(v), u.max(v));
            *mid.entry(key).or_insert_with(|| {
                let p = nodes[u as usize];
                let q = nodes[v as usize];
                nodes.push(Point::new(0.5 * (p.x + q.x), 0.5 * (p.y + q.y)));
                (nodes.len() - 1) as u32
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for t in &self.triangles {
            let m01 = midpoint(t[0], t[1], &mut nodes);
            let m12 = midpoint(t[1], t[2], &mut nodes);
            let m20 = midpoint(t[2], t[0], &mut nodes);
            triangles.push([t[0], m01, m20]);
            triangles.push([t[1], m12, m01]);
            triangles.push([t[2], m20, m12]);
            triangles.push([m01, m12, m20]);
        }
        PrimalMesh { nodes, triangles }
    }

    /// Refines `levels` times.
    pub fn refine_times(&self, levels: u32) -> PrimalMesh {
        let mut m = self.clone();
        for _ in 0..levels {
            m = m.refine();
        }
        m
    }

    /// Structured triangulation of the square `[0, l]^2` with `n x n` cells,
    /// each split along its up-diagonal.
    pub fn cartesian_square(l: f64, n: usize) -> PrimalMesh {
        let id = |i: usize, j: usize| (j * (n + 1) + i) as u32;
        let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                nodes.push(Point::new(l * i as f64 / n as f64, l * j as f64 / n as f64));
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        PrimalMesh { nodes, triangles }
    }

    /// 64-bit FNV-1a over node coordinates; identifies the geometry a rate
    /// table was built for.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(&(self.nodes.len() as u64).to_le_bytes());
        for p in &self.nodes {
            eat(&p.x.to_le_bytes());
            eat(&p.y.to_le_bytes());
        }
        h
    }
}

/// Uniform background grid mapping points to candidate voxels.
#[derive(Clone, Debug)]
pub struct GridLocator {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl GridLocator {
    fn build(voxels: &[Polygon], h_max: f64) -> GridLocator {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in voxels {
            let (a, b) = bbox(v);
            lo.x = lo.x.min(a.x);
            lo.y = lo.y.min(a.y);
            hi.x = hi.x.max(b.x);
            hi.y = hi.y.max(b.y);
        }
        let cell = h_max.max(1e-300);
        let nx = (((hi.x - lo.x) / cell).ceil() as usize).max(1);
        let ny = (((hi.y - lo.y) / cell).ceil() as usize).max(1);
        let mut cells = vec![Vec::new(); nx * ny];
        for (k, v) in voxels.iter().enumerate() {
            let (a, b) = bbox(v);
            let i0 = (((a.x - lo.x) / cell).floor() as isize).clamp(0, nx as isize - 1) as usize;
            let i1 = (((b.x - lo.x) / cell).floor() as isize).clamp(0, nx as isize - 1) as usize;
            let j0 = (((a.y - lo.y) / cell).floor() as isize).clamp(0, ny as isize - 1) as usize;
            let j1 = (((b.y - lo.y) / cell).floor() as isize).clamp(0, ny as isize - 1) as usize;
            for j in j0..=j1 {
                for i in i0..=i1 {
                    cells[j * nx + i].push(k as u32);
                }
            }
        }
        // Candidate lists ascend so the lowest index wins boundary ties.
        for c in &mut cells {
            c.sort_unstable();
        }
        GridLocator {
            origin: lo,
            cell,
            nx,
            ny,
            cells,
        }
    }

    fn candidates(&self, p: Point) -> &[u32] {
        let i = (((p.x - self.origin.x) / self.cell).floor() as isize).clamp(0, self.nx as isize - 1)
            as usize;
        let j = (((p.y - self.origin.y) / self.cell).floor() as isize).clamp(0, self.ny as isize - 1)
            as usize;
        &self.cells[j * self.nx + i]
    }

    /// Voxels whose bounding box may intersect the given box.
    pub fn candidates_in_box(&self, lo: Point, hi: Point) -> Vec<u32> {
        let i0 = (((lo.x - self.origin.x) / self.cell).floor() as isize).clamp(0, self.nx as isize - 1)
            as usize;
        let i1 = (((hi.x - self.origin.x) / self.cell).floor() as isize).clamp(0, self.nx as isize - 1)
            as usize;
        let j0 = (((lo.y - self.origin.y) / self.cell).floor() as isize).clamp(0, self.ny as isize - 1)
            as usize;
        let j1 = (((hi.y - self.origin.y) / self.cell).floor() as isize).clamp(0, self.ny as isize - 1)
            as usize;
        let mut out = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                out.extend_from_slice(&self.cells[j * self.nx + i]);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Polygonal voxel mesh dual to a triangulation.
#[derive(Clone, Debug)]
pub struct DualMesh {
    /// Primal node positions; voxel `i` surrounds node `i`.
    pub nodes: Vec<Point>,
    pub voxels: Vec<Polygon>,
    pub areas: Vec<f64>,
    pub diameters: Vec<f64>,
    pub is_boundary: Vec<bool>,
    /// CSR adjacency over primal edges: `neighbors[off[i]..off[i+1]]`.
    pub neighbor_off: Vec<u32>,
    pub neighbors: Vec<u32>,
    /// Largest voxel diameter (the mesh width h).
    pub h_max: f64,
    pub total_area: f64,
    pub fingerprint: u64,
    locator: GridLocator,
}

impl DualMesh {
    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }

    pub fn neighbors_of(&self, i: u32) -> &[u32] {
        &self.neighbors[self.neighbor_off[i as usize] as usize
            ..self.neighbor_off[i as usize + 1] as usize]
    }

    /// Tolerance used for boundary-inclusive point membership.
    pub fn locate_eps(&self) -> f64 {
        1e-12 * self.h_max
    }

    /// Voxel containing `p`; ties on shared edges resolve to the lowest
    /// index. `None` when `p` lies outside the meshed domain.
    pub fn locate_point(&self, p: Point) -> Option<u32> {
        let eps = self.locate_eps();
        for &k in self.locator.candidates(p) {
            if point_in_polygon(p, &self.voxels[k as usize], eps) {
                return Some(k);
            }
        }
        None
    }

    /// Voxels whose bounding boxes intersect the given box.
    pub fn voxels_near_box(&self, lo: Point, hi: Point) -> Vec<u32> {
        self.locator.candidates_in_box(lo, hi)
    }
}

/// Builds the dual voxel mesh of a validated triangulation.
pub fn build_dual(mesh: &PrimalMesh) -> Result<DualMesh, MeshError> {
    let mesh = mesh.clone().normalized();
    mesh.validate()?;
    let n = mesh.nodes.len();

    // For corner i of a counter-clockwise triangle (i, a, b), the fan around
    // i enters through edge (i, a) and exits through edge (i, b).
    let mut exit_tri: HashMap<(u32, u32), usize> = HashMap::new(); // (i, b) -> triangle
    let mut entry_of: Vec<Vec<(u32, usize)>> = vec![Vec::new(); n]; // i -> [(a, triangle)]
    for (k, t) in mesh.triangles.iter().enumerate() {
        for c in 0..3 {
            let i = t[c];
            let a = t[(c + 1) % 3];
            let b = t[(c + 2) % 3];
            entry_of[i as usize].push((a, k));
            if exit_tri.insert((i, b), k).is_some() {
                return Err(MeshError::Invalid(format!(
                    "non-manifold fan at node {i}"
                )));
            }
        }
    }

    let centroid = |k: usize| -> Point {
        let t = &mesh.triangles[k];
        let (a, b, c) = (
            mesh.nodes[t[0] as usize],
            mesh.nodes[t[1] as usize],
            mesh.nodes[t[2] as usize],
        );
        Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    };
    let mid = |u: u32, v: u32| -> Point {
        let p = mesh.nodes[u as usize];
        let q = mesh.nodes[v as usize];
        Point::new(0.5 * (p.x + q.x), 0.5 * (p.y + q.y))
    };

    let mut voxels: Vec<Polygon> = Vec::with_capacity(n);
    let mut is_boundary = vec![false; n];
    let mut neighbor_sets: Vec<Vec<u32>> = vec![Vec::new(); n];

    for i in 0..n as u32 {
        let entries = &entry_of[i as usize];
        if entries.is_empty() {
            return Err(MeshError::Invalid(format!(
                "node {i} belongs to no triangle"
            )));
        }
        for &(a, _) in entries {
            neighbor_sets[i as usize].push(a);
        }
        // A boundary fan starts at an entry edge that is not any exit edge.
        let start = entries
            .iter()
            .find(|&&(a, _)| !exit_tri.contains_key(&(i, a)));
        let mut poly: Polygon = Vec::with_capacity(2 * entries.len() + 3);
        let (mut a_cur, mut t_cur, boundary) = match start {
            Some(&(a, t)) => {
                is_boundary[i as usize] = true;
                poly.push(mesh.nodes[i as usize]);
                (a, t, true)
            }
            None => {
                let (a, t) = entries[0];
                (a, t, false)
            }
        };
        let first_entry = a_cur;
        for step in 0..entries.len() {
            poly.push(mid(i, a_cur));
            poly.push(centroid(t_cur));
            // Exit edge of this triangle at corner i.
            let t = &mesh.triangles[t_cur];
            let c = t.iter().position(|&v| v == i).unwrap();
            let b = t[(c + 2) % 3];
            match exit_tri.get(&(i, b)).copied() {
                _ if step + 1 == entries.len() => {
                    // Fan complete; close along the boundary if open.
                    if boundary {
                        poly.push(mid(i, b));
                    } else if b != first_entry {
                        return Err(MeshError::Invalid(format!(
                            "fan around node {i} does not close"
                        )));
                    }
                }
                Some(_) => {
                    // The next triangle is the one entered through (i, b):
                    // its entry corner pairing was recorded in entry_of.
                    let next = entry_of[i as usize]
                        .iter()
                        .find(|&&(a2, _)| a2 == b)
                        .copied();
                    match next {
                        Some((a2, t2)) => {
                            a_cur = a2;
                            t_cur = t2;
                        }
                        None => {
                            return Err(MeshError::Invalid(format!(
                                "broken fan around node {i}"
                            )))
                        }
                    }
                }
                None => {
                    return Err(MeshError::Invalid(format!(
                        "fan around node {i} ends early"
                    )))
                }
            }
        }
        voxels.push(poly);
    }

    let areas: Vec<f64> = voxels.iter().map(|v| polygon_area(v)).collect();
    if let Some((i, &a)) = areas
        .iter()
        .enumerate()
        .find(|&(_, &a)| !(a > 0.0))
    {
        return Err(MeshError::Invalid(format!(
            "voxel {i} has non-positive area {a}"
        )));
    }
    let diameters: Vec<f64> = voxels.iter().map(|v| polygon_diameter(v)).collect();
    let h_max = diameters.iter().cloned().fold(0.0, f64::max);
    let total_area = areas.iter().sum();

    let mut neighbor_off = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::new();
    neighbor_off.push(0u32);
    for set in &mut neighbor_sets {
        set.sort_unstable();
        set.dedup();
        neighbors.extend_from_slice(set);
        neighbor_off.push(neighbors.len() as u32);
    }

    let locator = GridLocator::build(&voxels, h_max);
    Ok(DualMesh {
        nodes: mesh.nodes.clone(),
        voxels,
        areas,
        diameters,
        is_boundary,
        neighbor_off,
        neighbors,
        h_max,
        total_area,
        fingerprint: mesh.fingerprint(),
        locator,
    })
}
