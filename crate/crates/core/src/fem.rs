//! P1 finite element assembly on triangulations and the derived hop rates.
//!
//! Diffusion on the dual voxel mesh is a continuous-time random walk whose
//! generator comes from the mass-lumped P1 discretization: a molecule in
//! voxel `j` hops to the neighbor voxel `i` with rate
//! `D * (cot a + cot b) / (2 |V_j|)`, the cotangents taken at the corners
//! opposite the shared primal edge. On Delaunay meshes these rates are
//! non-negative; on non-Delaunay meshes the negative entries are clamped to
//! zero and the exit rates recomputed, which preserves probability exactly
//! and perturbs the diffusion approximation by the clamped mass.

use crate::geom::Point;
use crate::mesh::{DualMesh, PrimalMesh};

/// Symmetric sparse matrix in CSR form with explicit diagonal entries.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_off: Vec<u32>,
    pub col: Vec<u32>,
    pub val: Vec<f64>,
}

impl SparseMatrix {
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_off[i] as usize..self.row_off[i + 1] as usize;
        (&self.col[r.clone()], &self.val[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let r = self.row_off[i] as usize..self.row_off[i + 1] as usize;
        let k = self.col[r.clone()]
            .binary_search(&(j as u32))
            .expect("assembly touched an entry outside the sparsity pattern");
        self.val[r.start + k] += v;
    }

    /// Plain text triplet dump: `i j value` per line.
    pub fn write_triplets<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(w, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

/// Builds an empty matrix with the mesh adjacency pattern (plus diagonal).
fn adjacency_pattern(mesh: &PrimalMesh) -> SparseMatrix {
    let n = mesh.nodes.len();
    let mut sets: Vec<Vec<u32>> = vec![Vec::new(); n];
    for t in &mesh.triangles {
        for c in 0..3 {
            let i = t[c] as usize;
            sets[i].push(t[(c + 1) % 3]);
            sets[i].push(t[(c + 2) % 3]);
        }
    }
    let mut row_off = Vec::with_capacity(n + 1);
    let mut col = Vec::new();
    row_off.push(0u32);
    for (i, s) in sets.iter_mut().enumerate() {
        s.push(i as u32);
        s.sort_unstable();
        s.dedup();
        col.extend_from_slice(s);
        row_off.push(col.len() as u32);
    }
    let val = vec![0.0; col.len()];
    SparseMatrix {
        n,
        row_off,
        col,
        val,
    }
}

/// P1 stiffness and consistent mass matrices.
#[derive(Clone, Debug)]
pub struct FemMatrices {
    /// Positive semi-definite stiffness (integrals of grad phi_i . grad
    /// phi_j); rows sum to zero.
    pub stiffness: SparseMatrix,
    /// Consistent mass matrix (integrals of phi_i phi_j).
    pub mass: SparseMatrix,
}

/// Assembles P1 stiffness and mass over a counter-clockwise triangulation.
pub fn assemble(mesh: &PrimalMesh) -> FemMatrices {
    let mut stiffness = adjacency_pattern(mesh);
    let mut mass = stiffness.clone();
    for t in &mesh.triangles {
        let p = [
            mesh.nodes[t[0] as usize],
            mesh.nodes[t[1] as usize],
            mesh.nodes[t[2] as usize],
        ];
        let area = 0.5 * p[1].sub(p[0]).cross(p[2].sub(p[0]));
        debug_assert!(area > 0.0);
        // Gradient of the barycentric function of corner c is the inward
        // normal of the opposite edge over twice the area.
        let grad = |c: usize| -> Point {
            let e = p[(c + 2) % 3].sub(p[(c + 1) % 3]);
            Point::new(-e.y / (2.0 * area), e.x / (2.0 * area))
        };
        let g = [grad(0), grad(1), grad(2)];
        for a in 0..3 {
            for b in 0..3 {
                stiffness.add(t[a] as usize, t[b] as usize, area * g[a].dot(g[b]));
                let m = if a == b { area / 6.0 } else { area / 12.0 };
                mass.add(t[a] as usize, t[b] as usize, m);
            }
        }
    }
    FemMatrices { stiffness, mass }
}

/// Row sums of the consistent mass matrix. Equals the dual voxel areas.
pub fn lumped_mass(mass: &SparseMatrix) -> Vec<f64> {
    (0..mass.n)
        .map(|i| {
            let (_, vals) = mass.row(i);
            vals.iter().sum()
        })
        .collect()
}

/// Hop rates out of every voxel: `targets/rates` hold the per-destination
/// rates for hops leaving voxel `j`, `exit[j]` their sum.
#[derive(Clone, Debug)]
pub struct HopTable {
    pub exit: Vec<f64>,
    pub row_off: Vec<u32>,
    pub targets: Vec<u32>,
    pub rates: Vec<f64>,
}

impl HopTable {
    pub fn hops_from(&self, j: u32) -> (&[u32], &[f64]) {
        let r = self.row_off[j as usize] as usize..self.row_off[j as usize + 1] as usize;
        (&self.targets[r.clone()], &self.rates[r])
    }

    pub fn voxel_count(&self) -> usize {
        self.exit.len()
    }
}

/// What the non-negativity repair changed.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClampReport {
    pub clamped: usize,
    pub max_magnitude: f64,
    /// Sum of clamped rate magnitudes over all voxels.
    pub total_magnitude: f64,
}

/// Raw hop rates from the lumped discretization. The rate from `j` to `i`
/// is `-D * stiffness[i][j] / area[j]`; it can be negative off Delaunay
/// meshes. Exit rates are the plain sums, so total probability flux is
/// conserved whatever the signs.
pub fn hop_rates_raw(stiffness: &SparseMatrix, areas: &[f64], d: f64) -> HopTable {
    let n = stiffness.n;
    let mut row_off = Vec::with_capacity(n + 1);
    let mut targets = Vec::new();
    let mut rates = Vec::new();
    let mut exit = Vec::with_capacity(n);
    row_off.push(0u32);
    for j in 0..n {
        let (cols, vals) = stiffness.row(j);
        let mut sum = 0.0;
        // Stiffness is symmetric, so the column of j equals the row of j.
        for (&i, &s) in cols.iter().zip(vals) {
            if i as usize == j {
                continue;
            }
            let q = -d * s / areas[j];
            targets.push(i);
            rates.push(q);
            sum += q;
        }
        exit.push(sum);
        row_off.push(targets.len() as u32);
    }
    HopTable {
        exit,
        row_off,
        targets,
        rates,
    }
}

/// Clamps negative hop rates to zero and recomputes exit rates, returning
/// what was clamped.
pub fn fix_negative_rates(table: &mut HopTable) -> ClampReport {
    let mut report = ClampReport::default();
    for j in 0..table.exit.len() {
        let r = table.row_off[j] as usize..table.row_off[j + 1] as usize;
        let mut sum = 0.0;
        for k in r {
            if table.rates[k] < 0.0 {
                report.clamped += 1;
                report.max_magnitude = report.max_magnitude.max(-table.rates[k]);
                report.total_magnitude += -table.rates[k];
                table.rates[k] = 0.0;
            }
            sum += table.rates[k];
        }
        table.exit[j] = sum;
    }
    report
}

/// Non-negative hop table for diffusion constant `d` on the dual mesh.
pub fn hop_rates(stiffness: &SparseMatrix, areas: &[f64], d: f64) -> (HopTable, ClampReport) {
    let mut t = hop_rates_raw(stiffness, areas, d);
    let report = fix_negative_rates(&mut t);
    (t, report)
}

/// Convenience: assemble and derive hop rates for one species on a dual
/// mesh (the dual carries the exact voxel areas).
pub fn hop_table_for(mesh: &PrimalMesh, dual: &DualMesh, d: f64) -> (HopTable, ClampReport) {
    let fem = assemble(mesh);
    hop_rates(&fem.stiffness, &dual.areas, d)
}
