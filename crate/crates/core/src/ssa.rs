//! Next-reaction stochastic simulation of the spatial jump process.
//!
//! State is a per-species, per-voxel count vector. Channels cover diffusive
//! hops, pair associations with product placement, dissociations (either
//! candidate-rate rejection sampling or a materialized table), and linear
//! reactions. Tentative firing times live in an indexed binary min-heap;
//! after each firing, exactly the channels whose propensity could have
//! changed are redrawn with fresh exponentials. Redrawing at event times
//! preserves the process law (the exponential race is memoryless), so
//! trajectories are statistically exact realizations of the jump process.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::fem::HopTable;
use crate::geom::{triangulate, Point};
use crate::mesh::DualMesh;
use crate::rates::{DissocTable, ReactionTable};
use crate::rng::exp_time;

/// How association products are placed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PlacementStrategy {
    /// One channel per stored pair; the product voxel is sampled from the
    /// pair's placement row when the channel fires.
    #[default]
    RateThenPlace,
    /// One channel per (pair, product voxel) component at the component
    /// rate; firing places the product deterministically. Statistically
    /// equivalent, kept for cross-validation.
    PerComponent,
}

pub struct SpeciesDef {
    pub name: String,
    /// Hop rates; `None` makes the species immobile.
    pub hop: Option<Arc<HopTable>>,
}

/// One reaction in the network. Tables are shared, never copied per replica.
#[derive(Clone)]
pub enum ReactionDef {
    /// A + B -> C at the stored pair rates. `c = None` is annihilation.
    Assoc {
        a: usize,
        b: usize,
        c: Option<usize>,
        table: Arc<ReactionTable>,
    },
    /// C -> A + B by rejection: candidates fire at rate `mu * c_k`, the
    /// complex position is drawn uniformly in the voxel, A uniformly in the
    /// ball of radius `(1 - gamma) rb` around it, B by reflection through
    /// the complex; candidates with either product outside the domain are
    /// rejected without consuming the complex.
    DissocReject {
        c: usize,
        a: usize,
        b: usize,
        mu: f64,
        rb: f64,
        gamma: f64,
        /// Point unbinding: both products appear in the complex's voxel and
        /// no candidate is ever rejected.
        point: bool,
    },
    /// C -> A + B from a materialized per-voxel table.
    DissocTable {
        c: usize,
        a: usize,
        b: usize,
        table: Arc<DissocTable>,
    },
    /// S -> nothing at `rate` per molecule, optionally restricted to a
    /// sorted voxel subset.
    Decay {
        s: usize,
        rate: f64,
        voxels: Option<Vec<u32>>,
    },
    /// nothing -> S at fixed total rate, placed with probability
    /// proportional to voxel area.
    Production { s: usize, rate: f64 },
    /// S + E -> P + E at the stored pair rates; P takes S's voxel and the
    /// catalyst E is untouched.
    Convert {
        s: usize,
        e: usize,
        p: usize,
        table: Arc<ReactionTable>,
    },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("reaction {0}: species index out of range")]
    SpeciesOutOfRange(usize),
    #[error("reaction {0}: table was built for a different mesh")]
    FingerprintMismatch(usize),
    #[error("reaction {0}: table voxel count does not match the mesh")]
    VoxelCountMismatch(usize),
    #[error("species {0}: hop table voxel count does not match the mesh")]
    HopVoxelMismatch(usize),
    #[error("reaction {0}: needs placement rows but the table has none")]
    MissingPlacements(usize),
    #[error("reaction {0}: identical reactant species are not supported")]
    SameSpeciesPair(usize),
    #[error("reaction {0}: invalid parameter ({1})")]
    BadParameter(usize, &'static str),
}

/// Per-species, per-voxel molecule counts plus the current time.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub t: f64,
    /// `counts[species][voxel]`
    pub counts: Vec<Vec<u32>>,
}

impl SystemState {
    pub fn new(n_species: usize, n_voxels: usize) -> Self {
        SystemState {
            t: 0.0,
            counts: vec![vec![0; n_voxels]; n_species],
        }
    }

    pub fn total(&self, species: usize) -> u64 {
        self.counts[species].iter().map(|&c| c as u64).sum()
    }
}

/// What happened at one firing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Event {
    Hop { species: u32, from: u32, to: u32 },
    Assoc { rx: u32, i: u32, j: u32, k: u32 },
    Dissoc { rx: u32, k: u32, i: u32, j: u32 },
    /// A dissociation candidate whose products landed outside the domain.
    DissocRejected { rx: u32, k: u32 },
    Decay { rx: u32, i: u32 },
    Production { rx: u32, i: u32 },
    Convert { rx: u32, i: u32, j: u32 },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Event::Hop { species, from, to } => write!(f, "hop s{species} {from}->{to}"),
            Event::Assoc { rx, i, j, k } => write!(f, "assoc r{rx} ({i},{j})->{k}"),
            Event::Dissoc { rx, k, i, j } => write!(f, "dissoc r{rx} {k}->({i},{j})"),
            Event::DissocRejected { rx, k } => write!(f, "dissoc-rejected r{rx} {k}"),
            Event::Decay { rx, i } => write!(f, "decay r{rx} {i}"),
            Event::Production { rx, i } => write!(f, "production r{rx} {i}"),
            Event::Convert { rx, i, j } => write!(f, "convert r{rx} {i} by {j}"),
        }
    }
}

/// Whether to keep simulating after an observed event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

// Channels carry every index needed to fire without searches.
#[derive(Clone, Copy, Debug)]
enum Channel {
    Hop { s: u32, from: u32 },
    Assoc { rx: u32, e: u32, i: u32, j: u32 },
    // `pe` indexes the placement arrays of the reaction's table.
    AssocComp { rx: u32, e: u32, pe: u32, i: u32, j: u32 },
    DissocR { rx: u32, k: u32 },
    DissocT { rx: u32, k: u32 },
    Decay { rx: u32, i: u32 },
    Production { rx: u32 },
    Convert { rx: u32, e: u32, i: u32, j: u32 },
}

// Which side of a reaction a species feeds, for dependency lookup.
#[derive(Clone, Copy, Debug)]
enum Role {
    AssocA,
    AssocB,
    DissocC,
    DecayS,
    ConvertS,
    ConvertE,
}

struct Sub {
    rx: u32,
    role: Role,
}

// Uniform sampling over a fixed polygon: fan triangulation with a
// cumulative-area table, then the square-root barycentric map.
struct PolySampler {
    tris: Vec<[Point; 3]>,
    cum: Vec<f64>,
}

impl PolySampler {
    fn build(poly: &[Point]) -> Self {
        let tris = triangulate(poly);
        let mut cum = Vec::with_capacity(tris.len());
        let mut acc = 0.0;
        for t in &tris {
            acc += 0.5 * (t[1].sub(t[0]).cross(t[2].sub(t[0]))).abs();
            cum.push(acc);
        }
        PolySampler { tris, cum }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Point {
        let total = *self.cum.last().expect("polygon has area");
        let u = rng.gen::<f64>() * total;
        let ti = self.cum.partition_point(|&c| c <= u).min(self.tris.len() - 1);
        let [a, b, c] = self.tris[ti];
        let r1 = rng.gen::<f64>().sqrt();
        let r2 = rng.gen::<f64>();
        Point::new(
            a.x * (1.0 - r1) + b.x * r1 * (1.0 - r2) + c.x * r1 * r2,
            a.y * (1.0 - r1) + b.y * r1 * (1.0 - r2) + c.y * r1 * r2,
        )
    }
}

/// Immutable simulation model shared across replicas.
pub struct SimModel {
    pub dual: Arc<DualMesh>,
    pub species: Vec<SpeciesDef>,
    pub reactions: Vec<ReactionDef>,
    pub strategy: PlacementStrategy,
    channels: Vec<Channel>,
    // Channel id of `Hop { s, from: v }` is `hop_base[s] + v`.
    hop_base: Vec<Option<u32>>,
    // First channel id of each reaction's block.
    rx_base: Vec<u32>,
    subs: Vec<Vec<Sub>>,
    samplers: Vec<PolySampler>,
    area_cum: Vec<f64>,
}

impl SimModel {
    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    fn propensity(&self, c: u32, state: &SystemState) -> f64 {
        match self.channels[c as usize] {
            Channel::Hop { s, from } => {
                let n = state.counts[s as usize][from as usize];
                if n == 0 {
                    return 0.0;
                }
                let hop = self.species[s as usize].hop.as_ref().unwrap();
                n as f64 * hop.exit[from as usize]
            }
            Channel::Assoc { rx, e, i, j } => {
                let (a, b, table) = match &self.reactions[rx as usize] {
                    ReactionDef::Assoc { a, b, table, .. } => (*a, *b, table),
                    _ => unreachable!(),
                };
                let na = state.counts[a][i as usize];
                let nb = state.counts[b][j as usize];
                na as f64 * nb as f64 * table.rate[e as usize]
            }
            Channel::AssocComp { rx, e, pe, i, j } => {
                let (a, b, table) = match &self.reactions[rx as usize] {
                    ReactionDef::Assoc { a, b, table, .. } => (*a, *b, table),
                    _ => unreachable!(),
                };
                let na = state.counts[a][i as usize];
                let nb = state.counts[b][j as usize];
                na as f64 * nb as f64 * table.rate[e as usize] * table.pl_p[pe as usize]
            }
            Channel::DissocR { rx, k } => {
                let (c, mu) = match &self.reactions[rx as usize] {
                    ReactionDef::DissocReject { c, mu, .. } => (*c, *mu),
                    _ => unreachable!(),
                };
                state.counts[c][k as usize] as f64 * mu
            }
            Channel::DissocT { rx, k } => {
                let (c, table) = match &self.reactions[rx as usize] {
                    ReactionDef::DissocTable { c, table, .. } => (*c, table),
                    _ => unreachable!(),
                };
                state.counts[c][k as usize] as f64 * table.rate[k as usize]
            }
            Channel::Decay { rx, i } => {
                let (s, rate) = match &self.reactions[rx as usize] {
                    ReactionDef::Decay { s, rate, .. } => (*s, *rate),
                    _ => unreachable!(),
                };
                state.counts[s][i as usize] as f64 * rate
            }
            Channel::Production { rx } => match &self.reactions[rx as usize] {
                ReactionDef::Production { rate, .. } => *rate,
                _ => unreachable!(),
            },
            Channel::Convert { rx, e, i, j } => {
                let (s, es, table) = match &self.reactions[rx as usize] {
                    ReactionDef::Convert { s, e, table, .. } => (*s, *e, table),
                    _ => unreachable!(),
                };
                let ns = state.counts[s][i as usize];
                let ne = state.counts[es][j as usize];
                ns as f64 * ne as f64 * table.rate[e as usize]
            }
        }
    }

    // Channel ids whose propensity reads (species, voxel).
    fn dirty_channels(&self, species: usize, voxel: u32, out: &mut Vec<u32>) {
        if let Some(base) = self.hop_base[species] {
            out.push(base + voxel);
        }
        for sub in &self.subs[species] {
            let rx = sub.rx as usize;
            let base = self.rx_base[rx];
            match sub.role {
                Role::AssocA | Role::ConvertS => {
                    let table = reaction_table(&self.reactions[rx]);
                    let r = table.row_off[voxel as usize]..table.row_off[voxel as usize + 1];
                    self.push_entry_channels(rx, r.start..r.end, out);
                }
                Role::AssocB | Role::ConvertE => {
                    let table = reaction_table(&self.reactions[rx]);
                    let (_, entries) = table.pairs_for_b(voxel);
                    for &e in entries {
                        self.push_entry_channels(rx, e..e + 1, out);
                    }
                }
                Role::DissocC => out.push(base + voxel),
                Role::DecayS => match &self.reactions[rx] {
                    ReactionDef::Decay { voxels: None, .. } => out.push(base + voxel),
                    ReactionDef::Decay {
                        voxels: Some(mask), ..
                    } => {
                        if let Ok(off) = mask.binary_search(&voxel) {
                            out.push(base + off as u32);
                        }
                    }
                    _ => unreachable!(),
                },
            }
        }
    }

    // Pushes the channel ids covering pair entries `es` of reaction `rx`,
    // honoring the channel layout of the placement strategy.
    fn push_entry_channels(&self, rx: usize, es: std::ops::Range<u32>, out: &mut Vec<u32>) {
        let base = self.rx_base[rx];
        let expanded = self.strategy == PlacementStrategy::PerComponent
            && matches!(self.reactions[rx], ReactionDef::Assoc { .. });
        if expanded {
            let table = reaction_table(&self.reactions[rx]);
            for e in es {
                let r = table.pl_off[e as usize]..table.pl_off[e as usize + 1];
                out.extend(r.map(|pe| base + pe));
            }
        } else {
            out.extend(es.map(|e| base + e));
        }
    }
}

fn reaction_table(r: &ReactionDef) -> &ReactionTable {
    match r {
        ReactionDef::Assoc { table, .. } | ReactionDef::Convert { table, .. } => table,
        _ => unreachable!("reaction has no pair table"),
    }
}

/// Validates the network against the mesh and lays out the channel set.
pub fn build_model(
    dual: Arc<DualMesh>,
    species: Vec<SpeciesDef>,
    reactions: Vec<ReactionDef>,
    strategy: PlacementStrategy,
) -> Result<SimModel, ModelError> {
    let nv = dual.voxel_count();
    let ns = species.len();
    for (s, def) in species.iter().enumerate() {
        if let Some(hop) = &def.hop {
            if hop.voxel_count() != nv {
                return Err(ModelError::HopVoxelMismatch(s));
            }
        }
    }
    let check_species = |rxi: usize, list: &[usize]| {
        list.iter()
            .all(|&s| s < ns)
            .then_some(())
            .ok_or(ModelError::SpeciesOutOfRange(rxi))
    };
    let check_table = |rxi: usize, t: &ReactionTable| {
        if t.fingerprint != dual.fingerprint {
            Err(ModelError::FingerprintMismatch(rxi))
        } else if t.n_voxels as usize != nv {
            Err(ModelError::VoxelCountMismatch(rxi))
        } else {
            Ok(())
        }
    };
    for (rxi, r) in reactions.iter().enumerate() {
        match r {
            ReactionDef::Assoc { a, b, c, table } => {
                let mut sp = vec![*a, *b];
                sp.extend(*c);
                check_species(rxi, &sp)?;
                if a == b {
                    return Err(ModelError::SameSpeciesPair(rxi));
                }
                check_table(rxi, table)?;
                let needs_rows =
                    c.is_some() || strategy == PlacementStrategy::PerComponent;
                if needs_rows && !table.has_placements() {
                    return Err(ModelError::MissingPlacements(rxi));
                }
            }
            ReactionDef::DissocReject {
                c,
                a,
                b,
                mu,
                rb,
                gamma,
                point,
            } => {
                check_species(rxi, &[*c, *a, *b])?;
                if a == b {
                    return Err(ModelError::SameSpeciesPair(rxi));
                }
                if !(*mu >= 0.0) {
                    return Err(ModelError::BadParameter(rxi, "mu must be >= 0"));
                }
                if !point && !(*rb > 0.0) {
                    return Err(ModelError::BadParameter(rxi, "rb must be > 0"));
                }
                if !(0.0..=1.0).contains(gamma) {
                    return Err(ModelError::BadParameter(rxi, "gamma must be in [0, 1]"));
                }
            }
            ReactionDef::DissocTable { c, a, b, table } => {
                check_species(rxi, &[*c, *a, *b])?;
                if a == b {
                    return Err(ModelError::SameSpeciesPair(rxi));
                }
                if table.rate.len() != nv {
                    return Err(ModelError::VoxelCountMismatch(rxi));
                }
            }
            ReactionDef::Decay { s, rate, voxels } => {
                check_species(rxi, &[*s])?;
                if !(*rate >= 0.0) {
                    return Err(ModelError::BadParameter(rxi, "rate must be >= 0"));
                }
                if let Some(mask) = voxels {
                    let sorted = mask.windows(2).all(|w| w[0] < w[1]);
                    if !sorted || mask.iter().any(|&v| v as usize >= nv) {
                        return Err(ModelError::BadParameter(
                            rxi,
                            "voxel subset must be sorted, unique, in range",
                        ));
                    }
                }
            }
            ReactionDef::Production { s, rate } => {
                check_species(rxi, &[*s])?;
                if !(*rate >= 0.0) {
                    return Err(ModelError::BadParameter(rxi, "rate must be >= 0"));
                }
            }
            ReactionDef::Convert { s, e, p, table } => {
                check_species(rxi, &[*s, *e, *p])?;
                if s == e {
                    return Err(ModelError::SameSpeciesPair(rxi));
                }
                check_table(rxi, table)?;
            }
        }
    }

    let mut channels = Vec::new();
    let mut hop_base = vec![None; ns];
    for (s, def) in species.iter().enumerate() {
        if def.hop.is_some() {
            hop_base[s] = Some(channels.len() as u32);
            for v in 0..nv as u32 {
                channels.push(Channel::Hop {
                    s: s as u32,
                    from: v,
                });
            }
        }
    }
    let mut rx_base = Vec::with_capacity(reactions.len());
    let mut subs: Vec<Vec<Sub>> = (0..ns).map(|_| Vec::new()).collect();
    for (rxi, r) in reactions.iter().enumerate() {
        rx_base.push(channels.len() as u32);
        let rx = rxi as u32;
        match r {
            ReactionDef::Assoc { a, b, table, .. } => {
                subs[*a].push(Sub {
                    rx,
                    role: Role::AssocA,
                });
                subs[*b].push(Sub {
                    rx,
                    role: Role::AssocB,
                });
                for i in 0..nv as u32 {
                    let r = table.row_off[i as usize]..table.row_off[i as usize + 1];
                    for e in r {
                        let j = table.col_j[e as usize];
                        if strategy == PlacementStrategy::PerComponent {
                            let pr = table.pl_off[e as usize]..table.pl_off[e as usize + 1];
                            for pe in pr {
                                channels.push(Channel::AssocComp { rx, e, pe, i, j });
                            }
                        } else {
                            channels.push(Channel::Assoc { rx, e, i, j });
                        }
                    }
                }
            }
            ReactionDef::DissocReject { c, .. } => {
                subs[*c].push(Sub {
                    rx,
                    role: Role::DissocC,
                });
                for k in 0..nv as u32 {
                    channels.push(Channel::DissocR { rx, k });
                }
            }
            ReactionDef::DissocTable { c, .. } => {
                subs[*c].push(Sub {
                    rx,
                    role: Role::DissocC,
                });
                for k in 0..nv as u32 {
                    channels.push(Channel::DissocT { rx, k });
                }
            }
            ReactionDef::Decay { s, voxels, .. } => {
                subs[*s].push(Sub {
                    rx,
                    role: Role::DecayS,
                });
                match voxels {
                    None => {
                        for i in 0..nv as u32 {
                            channels.push(Channel::Decay { rx, i });
                        }
                    }
                    Some(mask) => {
                        for &i in mask {
                            channels.push(Channel::Decay { rx, i });
                        }
                    }
                }
            }
            ReactionDef::Production { .. } => {
                channels.push(Channel::Production { rx });
            }
            ReactionDef::Convert { s, e, table, .. } => {
                subs[*s].push(Sub {
                    rx,
                    role: Role::ConvertS,
                });
                subs[*e].push(Sub {
                    rx,
                    role: Role::ConvertE,
                });
                for i in 0..nv as u32 {
                    let r = table.row_off[i as usize]..table.row_off[i as usize + 1];
                    for en in r {
                        let j = table.col_j[en as usize];
                        channels.push(Channel::Convert { rx, e: en, i, j });
                    }
                }
            }
        }
    }

    let samplers = dual.voxels.iter().map(|p| PolySampler::build(p)).collect();
    let mut area_cum = Vec::with_capacity(nv);
    let mut acc = 0.0;
    for &a in &dual.areas {
        acc += a;
        area_cum.push(acc);
    }

    Ok(SimModel {
        dual,
        species,
        reactions,
        strategy,
        channels,
        hop_base,
        rx_base,
        subs,
        samplers,
        area_cum,
    })
}

// Indexed binary min-heap over channel tentative times; ties break on the
// channel id so trajectories are reproducible.
struct EventQueue {
    time: Vec<f64>,
    heap: Vec<u32>,
    pos: Vec<u32>,
}

impl EventQueue {
    fn new(n: usize) -> Self {
        EventQueue {
            time: vec![f64::INFINITY; n],
            heap: (0..n as u32).collect(),
            pos: (0..n as u32).collect(),
        }
    }

    #[inline]
    fn less(&self, a: u32, b: u32) -> bool {
        let (ta, tb) = (self.time[a as usize], self.time[b as usize]);
        ta < tb || (ta == tb && a < b)
    }

    fn set(&mut self, c: u32, t: f64) {
        self.time[c as usize] = t;
        let p = self.pos[c as usize] as usize;
        if !self.sift_up(p) {
            self.sift_down(p);
        }
    }

    fn sift_up(&mut self, mut p: usize) -> bool {
        let mut moved = false;
        while p > 0 {
            let parent = (p - 1) / 2;
            if self.less(self.heap[p], self.heap[parent]) {
                self.swap(p, parent);
                p = parent;
                moved = true;
            } else {
                break;
            }
        }
        moved
    }

    fn sift_down(&mut self, mut p: usize) {
        loop {
            let (l, r) = (2 * p + 1, 2 * p + 2);
            let mut best = p;
            if l < self.heap.len() && self.less(self.heap[l], self.heap[best]) {
                best = l;
            }
            if r < self.heap.len() && self.less(self.heap[r], self.heap[best]) {
                best = r;
            }
            if best == p {
                break;
            }
            self.swap(p, best);
            p = best;
        }
    }

    fn swap(&mut self, a: usize, b: usize) {
        self.heap.swap(a, b);
        self.pos[self.heap[a] as usize] = a as u32;
        self.pos[self.heap[b] as usize] = b as u32;
    }

    fn peek(&self) -> Option<(u32, f64)> {
        self.heap.first().map(|&c| (c, self.time[c as usize]))
    }
}

/// Snapshots plus the state the run ended in.
pub struct RunResult {
    pub final_state: SystemState,
    /// One state per requested observation time, in order; shorter if the
    /// observer stopped the run early.
    pub snapshots: Vec<SystemState>,
}

// Samples an index from a short cumulative walk over probabilities `ps`
// (which sum to 1); the last entry absorbs rounding.
#[inline]
fn sample_discrete<R: Rng>(rng: &mut R, ps: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (q, &p) in ps.iter().enumerate() {
        acc += p;
        if u < acc {
            return q;
        }
    }
    ps.len() - 1
}

type Delta = (usize, u32, i32);

/// Runs the jump process from `state` to `t_final`, recording snapshots at
/// the sorted `obs_times` and reporting every firing to `on_event` (which
/// can stop the run). Trajectories are deterministic given the RNG state.
pub fn simulate<R: Rng, F: FnMut(f64, &Event, &SystemState) -> Flow>(
    model: &SimModel,
    mut state: SystemState,
    t_final: f64,
    obs_times: &[f64],
    rng: &mut R,
    mut on_event: F,
) -> RunResult {
    debug_assert!(obs_times.windows(2).all(|w| w[0] <= w[1]));
    let n = model.channels.len();
    let mut queue = EventQueue::new(n);
    for c in 0..n as u32 {
        let a = model.propensity(c, &state);
        if a > 0.0 {
            queue.set(c, state.t + exp_time(rng, a));
        }
    }
    let mut snapshots = Vec::with_capacity(obs_times.len());
    let mut next_obs = 0;
    let mut dirty: Vec<u32> = Vec::with_capacity(64);
    let mut deltas: Vec<Delta> = Vec::with_capacity(4);
    let mut stopped = false;

    loop {
        // An infinite tentative time means no channel can fire at all.
        let (chan, tev) = match queue.peek() {
            Some(pk) if pk.1 <= t_final && pk.1.is_finite() => pk,
            _ => break,
        };
        debug_assert!(tev >= state.t, "tentative time fell behind the clock");
        while next_obs < obs_times.len() && obs_times[next_obs] < tev {
            let mut snap = state.clone();
            snap.t = obs_times[next_obs];
            snapshots.push(snap);
            next_obs += 1;
        }
        state.t = tev;
        deltas.clear();
        let event = fire(model, chan, rng, &mut deltas);
        for &(s, v, d) in deltas.iter() {
            let c = &mut state.counts[s][v as usize];
            *c = c
                .checked_add_signed(d)
                .expect("propensity fired without its reactants");
        }
        dirty.clear();
        dirty.push(chan);
        for &(s, v, _) in deltas.iter() {
            model.dirty_channels(s, v, &mut dirty);
        }
        dirty.sort_unstable();
        dirty.dedup();
        for &c in &dirty {
            let a = model.propensity(c, &state);
            let t = if a > 0.0 {
                tev + exp_time(rng, a)
            } else {
                f64::INFINITY
            };
            queue.set(c, t);
        }
        if on_event(tev, &event, &state) == Flow::Stop {
            stopped = true;
            break;
        }
    }

    if !stopped {
        while next_obs < obs_times.len() && obs_times[next_obs] <= t_final {
            let mut snap = state.clone();
            snap.t = obs_times[next_obs];
            snapshots.push(snap);
            next_obs += 1;
        }
        state.t = t_final;
    }
    RunResult {
        final_state: state,
        snapshots,
    }
}

// Applies channel `chan` at the current time: samples placements, returns
// the event, and pushes count changes into `deltas` (empty on rejection).
fn fire<R: Rng>(model: &SimModel, chan: u32, rng: &mut R, deltas: &mut Vec<Delta>) -> Event {
    match model.channels[chan as usize] {
        Channel::Hop { s, from } => {
            let hop = model.species[s as usize].hop.as_ref().unwrap();
            let (targets, rates) = hop.hops_from(from);
            let u = rng.gen::<f64>() * hop.exit[from as usize];
            let mut acc = 0.0;
            let mut to = targets[targets.len() - 1];
            for (q, &r) in rates.iter().enumerate() {
                acc += r;
                if u < acc {
                    to = targets[q];
                    break;
                }
            }
            deltas.push((s as usize, from, -1));
            deltas.push((s as usize, to, 1));
            Event::Hop { species: s, from, to }
        }
        Channel::Assoc { rx, e, i, j } => {
            let (a, b, c, table) = match &model.reactions[rx as usize] {
                ReactionDef::Assoc { a, b, c, table } => (*a, *b, *c, table),
                _ => unreachable!(),
            };
            deltas.push((a, i, -1));
            deltas.push((b, j, -1));
            let k = match c {
                Some(cs) => {
                    let (ks, ps) = table.placement(e as usize);
                    let k = ks[sample_discrete(rng, ps)];
                    deltas.push((cs, k, 1));
                    k
                }
                None => u32::MAX,
            };
            Event::Assoc { rx, i, j, k }
        }
        Channel::AssocComp { rx, pe, i, j, .. } => {
            let (a, b, c, table) = match &model.reactions[rx as usize] {
                ReactionDef::Assoc { a, b, c, table } => (*a, *b, *c, table),
                _ => unreachable!(),
            };
            deltas.push((a, i, -1));
            deltas.push((b, j, -1));
            let k = table.pl_k[pe as usize];
            if let Some(cs) = c {
                deltas.push((cs, k, 1));
            }
            Event::Assoc { rx, i, j, k }
        }
        Channel::DissocR { rx, k } => {
            let (c, a, b, rb, gamma, point) = match &model.reactions[rx as usize] {
                ReactionDef::DissocReject {
                    c,
                    a,
                    b,
                    rb,
                    gamma,
                    point,
                    ..
                } => (*c, *a, *b, *rb, *gamma, *point),
                _ => unreachable!(),
            };
            if point {
                deltas.push((c, k, -1));
                deltas.push((a, k, 1));
                deltas.push((b, k, 1));
                return Event::Dissoc { rx, k, i: k, j: k };
            }
            let z = model.samplers[k as usize].sample(rng);
            // A uniform in the ball of radius (1 - gamma) rb around z; B by
            // reflecting A through z so the pair's placement map returns z.
            let radius = (1.0 - gamma) * rb;
            let r = radius * rng.gen::<f64>().sqrt();
            let th = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
            let x = Point::new(z.x + r * th.cos(), z.y + r * th.sin());
            let y = if 1.0 - gamma < 1e-12 {
                z
            } else {
                Point::new(
                    (z.x - gamma * x.x) / (1.0 - gamma),
                    (z.y - gamma * x.y) / (1.0 - gamma),
                )
            };
            let (vi, vj) = match (model.dual.locate_point(x), model.dual.locate_point(y)) {
                (Some(vi), Some(vj)) => (vi, vj),
                _ => return Event::DissocRejected { rx, k },
            };
            deltas.push((c, k, -1));
            deltas.push((a, vi, 1));
            deltas.push((b, vj, 1));
            Event::Dissoc { rx, k, i: vi, j: vj }
        }
        Channel::DissocT { rx, k } => {
            let (c, a, b, table) = match &model.reactions[rx as usize] {
                ReactionDef::DissocTable { c, a, b, table } => (*c, *a, *b, table),
                _ => unreachable!(),
            };
            let (is, js, ps) = table.placements(k);
            let q = sample_discrete(rng, ps);
            deltas.push((c, k, -1));
            deltas.push((a, is[q], 1));
            deltas.push((b, js[q], 1));
            Event::Dissoc {
                rx,
                k,
                i: is[q],
                j: js[q],
            }
        }
        Channel::Decay { rx, i } => {
            let s = match &model.reactions[rx as usize] {
                ReactionDef::Decay { s, .. } => *s,
                _ => unreachable!(),
            };
            deltas.push((s, i, -1));
            Event::Decay { rx, i }
        }
        Channel::Production { rx } => {
            let s = match &model.reactions[rx as usize] {
                ReactionDef::Production { s, .. } => *s,
                _ => unreachable!(),
            };
            let total = *model.area_cum.last().unwrap();
            let u = rng.gen::<f64>() * total;
            let i = model
                .area_cum
                .partition_point(|&c| c <= u)
                .min(model.area_cum.len() - 1) as u32;
            deltas.push((s, i, 1));
            Event::Production { rx, i }
        }
        Channel::Convert { rx, i, j, .. } => {
            let (s, p) = match &model.reactions[rx as usize] {
                ReactionDef::Convert { s, p, .. } => (*s, *p),
                _ => unreachable!(),
            };
            deltas.push((s, i, -1));
            deltas.push((p, i, 1));
            Event::Convert { rx, i, j }
        }
    }
}
