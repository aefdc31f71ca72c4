//! Model assembly from a parsed config, rate table caching, and the
//! ensemble drivers shared by the command line and the validation suite.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crdme_core::bd::{bd_run, BDConfig, BDEvent, BDState, Domain, Unbinding};
use crdme_core::fem::{hop_table_for, ClampReport};
use crdme_core::mesh::{build_dual, DualMesh, PrimalMesh};
use crdme_core::rates::{
    build_doi_table, build_gaussian_table, build_rdme_table, detailed_balance_dissociation,
    load_table, rdme_dissociation, save_table, DissocTable, Interaction, RateParams,
    ReactionTable,
};
use crdme_core::rng::replica_rng;
use crdme_core::ssa::{
    build_model, simulate, Event, Flow, PlacementStrategy, ReactionDef, SimModel, SpeciesDef,
    SystemState,
};
use crdme_core::stats::SummaryStats;

use crate::config::{ConfigFile, ReactionSection};

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("{0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("mesh: {0}")]
    Mesh(#[from] crdme_core::mesh::MeshError),
    #[error("model: {0}")]
    Model(#[from] crdme_core::ssa::ModelError),
    #[error("table file: {0}")]
    Table(#[from] crdme_core::rates::TableError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

fn fail(msg: impl Into<String>) -> DriverError {
    DriverError::Other(msg.into())
}

/// 64-bit FNV-1a, used for cache keys and the manifest config hash.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Builds the primal mesh named by the config, plus `extra_refine` uniform
/// refinements on top of the configured ones.
pub fn build_primal(cfg: &ConfigFile, extra_refine: u32) -> Result<PrimalMesh, DriverError> {
    let base = match (&cfg.mesh.file, &cfg.mesh.square) {
        (Some(p), None) => PrimalMesh::load(p)?,
        (None, Some(sq)) => PrimalMesh::cartesian_square(sq.l, sq.n),
        _ => unreachable!("config validation enforces exactly one source"),
    };
    Ok(base.refine_times(cfg.mesh.refine + extra_refine))
}

/// The interaction kernel named by the config, if any.
pub fn interaction_of(cfg: &ConfigFile) -> Result<Option<Interaction>, DriverError> {
    let Some(it) = &cfg.interaction else {
        return Ok(None);
    };
    let kernel = match it.kind.as_str() {
        "doi" => Interaction::Doi {
            rb: it.rb.expect("validated"),
            lambda: it.lambda.expect("validated"),
        },
        "gaussian" => Interaction::Gaussian {
            rb: it.rb.expect("validated"),
            lambda: it.lambda.expect("validated"),
            cutoff: it.cutoff,
        },
        "rdme" => Interaction::Rdme {
            beta: cfg.rdme_beta()?,
        },
        _ => unreachable!("config validation rejects unknown kinds"),
    };
    Ok(Some(kernel))
}

/// How the reverse reaction is realized on the mesh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DissocSpec {
    None,
    /// Reverse rates from the association table and the dissociation
    /// constant, exactly balancing the forward kernel.
    Balanced { kd: f64 },
    /// Same-voxel lattice release at rate `mu`.
    Lattice { mu: f64 },
}

pub struct TableRequest<'a> {
    pub dual: &'a DualMesh,
    pub interaction: Interaction,
    pub gamma: f64,
    pub with_placement: bool,
    pub dissoc: DissocSpec,
}

fn table_key(req: &TableRequest) -> u64 {
    let mut s = String::new();
    match req.interaction {
        Interaction::Doi { rb, lambda } => {
            s.push_str(&format!("doi:{:x}:{:x}", rb.to_bits(), lambda.to_bits()));
        }
        Interaction::Gaussian { rb, lambda, cutoff } => {
            s.push_str(&format!(
                "gauss:{:x}:{:x}:{:x}",
                rb.to_bits(),
                lambda.to_bits(),
                cutoff.to_bits()
            ));
        }
        Interaction::Rdme { beta } => {
            s.push_str(&format!("rdme:{:x}", beta.to_bits()));
        }
    }
    s.push_str(&format!(":g{:x}:p{}", req.gamma.to_bits(), req.with_placement));
    match req.dissoc {
        DissocSpec::None => s.push_str(":dnone"),
        DissocSpec::Balanced { kd } => s.push_str(&format!(":dbal{:x}", kd.to_bits())),
        DissocSpec::Lattice { mu } => s.push_str(&format!(":dlat{:x}", mu.to_bits())),
    }
    fnv64(s.as_bytes())
}

/// Builds the pair rate table (and reverse table when requested), serving
/// from `cache_dir` when a file for this mesh and parameter set exists.
/// Returns whether the cache was hit.
pub fn table_for(
    req: &TableRequest,
    cache_dir: Option<&Path>,
) -> Result<(Arc<ReactionTable>, Option<Arc<DissocTable>>, bool), DriverError> {
    let path = cache_dir.map(|dir| {
        dir.join(format!(
            "table-{:016x}-{:016x}.crdt",
            req.dual.fingerprint,
            table_key(req)
        ))
    });
    if let Some(path) = &path {
        if let Ok(file) = std::fs::File::open(path) {
            if let Ok((table, dissoc)) = load_table(file, Some(req.dual.fingerprint)) {
                return Ok((Arc::new(table), dissoc.map(Arc::new), true));
            }
        }
    }

    let params = RateParams::new(req.interaction).with_gamma(req.gamma);
    let table = match req.interaction {
        Interaction::Doi { .. } => build_doi_table(req.dual, &params, req.with_placement),
        Interaction::Gaussian { .. } => build_gaussian_table(req.dual, &params),
        Interaction::Rdme { beta } => build_rdme_table(req.dual, beta, req.with_placement),
    };
    let dissoc = match req.dissoc {
        DissocSpec::None => None,
        DissocSpec::Balanced { kd } => {
            Some(detailed_balance_dissociation(&table, req.dual, kd))
        }
        DissocSpec::Lattice { mu } => Some(rdme_dissociation(req.dual, mu)),
    };

    if let Some(path) = &path {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        save_table(&table, dissoc.as_ref(), std::fs::File::create(&tmp)?)?;
        std::fs::rename(&tmp, path)?;
    }
    Ok((Arc::new(table), dissoc.map(Arc::new), false))
}

/// Initial molecule placement, realized per replica.
#[derive(Clone, Debug)]
pub enum InitKind {
    /// Voxels drawn independently with probability proportional to area.
    Uniform { count: u32 },
    Voxels { pairs: Vec<(u32, u32)> },
}

pub struct BuiltModel {
    pub model: SimModel,
    pub init_plan: Vec<(usize, InitKind)>,
    /// Species whose count snapshot curves report.
    pub track: usize,
    pub has_assoc: bool,
    /// Negative-rate clamp reports per mobile species.
    pub clamps: Vec<(String, ClampReport)>,
    /// Whether the rate table came from the cache; `None` without a table.
    pub cache_hit: Option<bool>,
    area_cum: Vec<f64>,
}

impl BuiltModel {
    pub fn dual(&self) -> &DualMesh {
        &self.model.dual
    }

    /// The pair rate table backing association or conversion, if any.
    pub fn table(&self) -> Option<&ReactionTable> {
        self.model.reactions.iter().find_map(|r| match r {
            ReactionDef::Assoc { table, .. } | ReactionDef::Convert { table, .. } => {
                Some(&**table)
            }
            _ => None,
        })
    }
}

/// Assembles the jump-process model the config describes.
pub fn assemble(cfg: &ConfigFile, cache_dir: Option<&Path>) -> Result<BuiltModel, DriverError> {
    let primal = build_primal(cfg, 0)?;
    let dual = Arc::new(build_dual(&primal)?);
    let nv = dual.voxel_count();

    let mut species = Vec::with_capacity(cfg.species.len());
    let mut clamps = Vec::new();
    for s in &cfg.species {
        let hop = if s.d > 0.0 {
            let (table, clamp) = hop_table_for(&primal, &dual, s.d);
            clamps.push((s.name.clone(), clamp));
            Some(Arc::new(table))
        } else {
            None
        };
        species.push(SpeciesDef {
            name: s.name.clone(),
            hop,
        });
    }

    let strategy = if cfg.run.per_component {
        PlacementStrategy::PerComponent
    } else {
        PlacementStrategy::RateThenPlace
    };

    let assoc = cfg.assoc();
    let needs_table = assoc.is_some()
        || cfg
            .reactions
            .iter()
            .any(|r| matches!(r, ReactionSection::Convert { .. }));
    let mut table: Option<Arc<ReactionTable>> = None;
    let mut dissoc_table: Option<Arc<DissocTable>> = None;
    let mut cache_hit = None;
    let mut gamma = 0.5;
    if needs_table {
        let interaction = interaction_of(cfg)?.expect("validated: reactions imply interaction");
        gamma = cfg.interaction.as_ref().expect("validated").gamma;
        let lattice = matches!(interaction, Interaction::Rdme { .. });
        let dissoc = match &cfg.unbinding {
            Some(un) => match un.kind.as_str() {
                "balanced" => DissocSpec::Balanced {
                    kd: un.kd.expect("validated"),
                },
                "point" if lattice => DissocSpec::Lattice { mu: un.mu },
                _ => DissocSpec::None,
            },
            None => DissocSpec::None,
        };
        let with_placement = assoc.map_or(false, |(_, _, c)| c.is_some())
            || strategy == PlacementStrategy::PerComponent
            || matches!(dissoc, DissocSpec::Balanced { .. });
        let req = TableRequest {
            dual: &dual,
            interaction,
            gamma,
            with_placement,
            dissoc,
        };
        let (t, d, hit) = table_for(&req, cache_dir)?;
        table = Some(t);
        dissoc_table = d;
        cache_hit = Some(hit);
    }

    let mut reactions = Vec::new();
    for r in &cfg.reactions {
        match r {
            ReactionSection::Assoc { a, b, c } => {
                let a = cfg.species_index(a)?;
                let b = cfg.species_index(b)?;
                let c = match c {
                    Some(c) => Some(cfg.species_index(c)?),
                    None => None,
                };
                reactions.push(ReactionDef::Assoc {
                    a,
                    b,
                    c,
                    table: table.clone().expect("assoc implies a table"),
                });
                if let (Some(un), Some(cs)) = (&cfg.unbinding, c) {
                    let interaction = interaction_of(cfg)?.expect("validated");
                    match un.kind.as_str() {
                        "balanced" => reactions.push(ReactionDef::DissocTable {
                            c: cs,
                            a,
                            b,
                            table: dissoc_table.clone().expect("balanced builds one"),
                        }),
                        "point" if matches!(interaction, Interaction::Rdme { .. }) => {
                            reactions.push(ReactionDef::DissocTable {
                                c: cs,
                                a,
                                b,
                                table: dissoc_table.clone().expect("lattice builds one"),
                            })
                        }
                        kind => reactions.push(ReactionDef::DissocReject {
                            c: cs,
                            a,
                            b,
                            mu: un.mu,
                            rb: match interaction {
                                Interaction::Doi { rb, .. }
                                | Interaction::Gaussian { rb, .. } => rb,
                                Interaction::Rdme { .. } => 1.0,
                            },
                            gamma,
                            point: kind == "point",
                        }),
                    }
                }
            }
            ReactionSection::Decay {
                species: name,
                rate,
                voxels,
            } => {
                let mut voxels = voxels.clone();
                if let Some(mask) = &mut voxels {
                    mask.sort_unstable();
                    mask.dedup();
                    if mask.iter().any(|&v| v as usize >= nv) {
                        return Err(fail(format!(
                            "decay mask references a voxel >= {nv}"
                        )));
                    }
                }
                reactions.push(ReactionDef::Decay {
                    s: cfg.species_index(name)?,
                    rate: *rate,
                    voxels,
                });
            }
            ReactionSection::Production { species: name, rate } => {
                reactions.push(ReactionDef::Production {
                    s: cfg.species_index(name)?,
                    rate: *rate,
                });
            }
            ReactionSection::Convert {
                species,
                catalyst,
                product,
            } => {
                reactions.push(ReactionDef::Convert {
                    s: cfg.species_index(species)?,
                    e: cfg.species_index(catalyst)?,
                    p: cfg.species_index(product)?,
                    table: table.clone().expect("convert implies a table"),
                });
            }
        }
    }

    let mut init_plan = Vec::new();
    for init in &cfg.init {
        let sp = cfg.species_index(&init.species)?;
        let kind = match init.mode.as_str() {
            "uniform" => InitKind::Uniform {
                count: init.count.expect("validated") as u32,
            },
            "density" => {
                let want = init.density.expect("validated") * dual.total_area;
                InitKind::Uniform {
                    count: want.round() as u32,
                }
            }
            "voxels" => {
                let pairs = init.voxels.clone().expect("validated");
                if pairs.iter().any(|&(v, _)| v as usize >= nv) {
                    return Err(fail(format!("init references a voxel >= {nv}")));
                }
                InitKind::Voxels { pairs }
            }
            _ => unreachable!("validated"),
        };
        init_plan.push((sp, kind));
    }

    let mut area_cum = Vec::with_capacity(nv);
    let mut acc = 0.0;
    for &a in &dual.areas {
        acc += a;
        area_cum.push(acc);
    }

    let track = cfg.tracked_species()?;
    let model = build_model(dual, species, reactions, strategy)?;
    Ok(BuiltModel {
        model,
        init_plan,
        track,
        has_assoc: assoc.is_some(),
        clamps,
        cache_hit,
        area_cum,
    })
}

fn sample_voxel_by_area<R: Rng>(area_cum: &[f64], rng: &mut R) -> usize {
    let total = *area_cum.last().expect("nonempty mesh");
    let u = rng.gen::<f64>() * total;
    area_cum.partition_point(|&c| c <= u).min(area_cum.len() - 1)
}

/// Realizes the initial condition with the replica's generator.
pub fn initial_state<R: Rng>(built: &BuiltModel, rng: &mut R) -> SystemState {
    let nv = built.dual().voxel_count();
    let mut st = SystemState::new(built.model.species.len(), nv);
    for (sp, kind) in &built.init_plan {
        match kind {
            InitKind::Uniform { count } => {
                for _ in 0..*count {
                    let v = sample_voxel_by_area(&built.area_cum, rng);
                    st.counts[*sp][v] += 1;
                }
            }
            InitKind::Voxels { pairs } => {
                for &(v, c) in pairs {
                    st.counts[*sp][v as usize] += c;
                }
            }
        }
    }
    st
}

pub enum EnsembleOutput {
    /// First-binding time per replica; infinite when censored at the horizon.
    Survival { times: Vec<f64> },
    /// Tracked-species count per replica and observation time.
    Curves { grid: Vec<f64>, series: Vec<Vec<f64>> },
}

impl EnsembleOutput {
    pub fn censored(&self) -> usize {
        match self {
            EnsembleOutput::Survival { times } => {
                times.iter().filter(|t| !t.is_finite()).count()
            }
            EnsembleOutput::Curves { .. } => 0,
        }
    }
}

/// Runs the configured replica ensemble. Replicas use independent generator
/// streams derived from the seed, so aggregates are reproducible and
/// independent of scheduling.
pub fn run_ensemble(built: &BuiltModel, cfg: &ConfigFile) -> Result<EnsembleOutput, DriverError> {
    let run = &cfg.run;
    match run.mode.as_str() {
        "first-binding" => {
            let times: Vec<f64> = (0..run.replicas)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replica_rng(run.seed, r);
                    let st = initial_state(built, &mut rng);
                    let mut t_bind = f64::INFINITY;
                    simulate(&built.model, st, run.t_final, &[], &mut rng, |t, ev, _| {
                        if matches!(ev, Event::Assoc { .. }) {
                            t_bind = t;
                            Flow::Stop
                        } else {
                            Flow::Continue
                        }
                    });
                    t_bind
                })
                .collect();
            Ok(EnsembleOutput::Survival { times })
        }
        "snapshots" => {
            if run.observe.is_empty() {
                return Err(fail("snapshots mode needs observe times"));
            }
            let series: Vec<Vec<f64>> = (0..run.replicas)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replica_rng(run.seed, r);
                    let st = initial_state(built, &mut rng);
                    let out = simulate(
                        &built.model,
                        st,
                        run.t_final,
                        &run.observe,
                        &mut rng,
                        |_, _, _| Flow::Continue,
                    );
                    out.snapshots
                        .iter()
                        .map(|s| s.total(built.track) as f64)
                        .collect()
                })
                .collect();
            Ok(EnsembleOutput::Curves {
                grid: run.observe.clone(),
                series,
            })
        }
        _ => unreachable!("validated"),
    }
}

/// Continuous-space twin of the configured model. Only the reaction set the
/// particle sampler supports is accepted: one association with product,
/// point or uniform unbinding, production of the complex species, and
/// unmasked decay of the reactants.
pub struct BdBuilt {
    pub bd: BDConfig,
    /// Initial particle counts (a, b, c).
    pub init: (u32, u32, u32),
    /// Which of a/b/c snapshot curves count.
    pub track: usize,
}

pub fn assemble_bd(cfg: &ConfigFile) -> Result<BdBuilt, DriverError> {
    let bd_sec = cfg
        .bd
        .as_ref()
        .ok_or_else(|| fail("this run needs a [bd] section"))?;
    let domain = match bd_sec.domain.as_str() {
        "square" => Domain::Square {
            l: bd_sec.l.expect("validated"),
        },
        "disk" => Domain::Disk {
            r: bd_sec.r.expect("validated"),
        },
        _ => unreachable!("validated"),
    };
    let (a_name, b_name, c_name) = cfg
        .assoc()
        .ok_or_else(|| fail("particle runs need an association reaction"))?;
    let ia = cfg.species_index(a_name)?;
    let ib = cfg.species_index(b_name)?;
    let ic = match c_name {
        Some(c) => Some(cfg.species_index(c)?),
        None => None,
    };
    let interaction = interaction_of(cfg)?.expect("assoc implies interaction");
    if matches!(interaction, Interaction::Rdme { .. }) {
        return Err(fail("the lattice kernel has no continuous-space form"));
    }
    let it = cfg.interaction.as_ref().expect("validated");

    let mut unbinding = Unbinding::Point;
    let mut mu = 0.0;
    if let Some(un) = &cfg.unbinding {
        match un.kind.as_str() {
            "point" => unbinding = Unbinding::Point,
            "uniform" => {
                unbinding = Unbinding::Uniform {
                    rb: it.rb.expect("validated"),
                }
            }
            _ => return Err(fail("balanced unbinding has no continuous-space form")),
        }
        mu = un.mu;
    }

    let mut k_prod_c = 0.0;
    let (mut k_decay_a, mut k_decay_b) = (0.0, 0.0);
    for r in &cfg.reactions {
        match r {
            ReactionSection::Assoc { .. } => {}
            ReactionSection::Production { species, rate } => {
                if Some(cfg.species_index(species)?) == ic {
                    k_prod_c += rate;
                } else {
                    return Err(fail("particle runs only support producing the complex"));
                }
            }
            ReactionSection::Decay {
                species,
                rate,
                voxels,
            } => {
                if voxels.is_some() {
                    return Err(fail("particle runs do not support masked decay"));
                }
                let s = cfg.species_index(species)?;
                if s == ia {
                    k_decay_a += rate;
                } else if s == ib {
                    k_decay_b += rate;
                } else {
                    return Err(fail("particle runs only support decaying the reactants"));
                }
            }
            ReactionSection::Convert { .. } => {
                return Err(fail("particle runs do not support conversion"));
            }
        }
    }

    let d_of = |i: usize| cfg.species[i].d;
    let bd = BDConfig {
        domain,
        dt: bd_sec.dt,
        d_a: d_of(ia),
        d_b: d_of(ib),
        d_c: ic.map_or(0.0, d_of),
        interaction,
        unbinding,
        mu,
        gamma: it.gamma,
        k_prod_c,
        k_decay_a,
        k_decay_b,
    };
    bd.validate().map_err(DriverError::Other)?;

    let mut init = (0u32, 0u32, 0u32);
    for sec in &cfg.init {
        let sp = cfg.species_index(&sec.species)?;
        let count = match sec.mode.as_str() {
            "uniform" => sec.count.expect("validated") as u32,
            "density" => (sec.density.expect("validated") * domain.area()).round() as u32,
            _ => return Err(fail("particle runs need uniform or density initial conditions")),
        };
        if sp == ia {
            init.0 += count;
        } else if sp == ib {
            init.1 += count;
        } else if Some(sp) == ic {
            init.2 += count;
        } else if count > 0 {
            return Err(fail("particle runs only place the reacting species"));
        }
    }

    let track_sp = cfg.tracked_species()?;
    let track = if track_sp == ia {
        0
    } else if track_sp == ib {
        1
    } else if Some(track_sp) == ic {
        2
    } else {
        return Err(fail("tracked species is not part of the pair reaction"));
    };
    Ok(BdBuilt { bd, init, track })
}

/// Particle-model ensemble with the same output shapes as [`run_ensemble`].
/// Streams derive from a sub-seed, so a mesh run and a particle run with the
/// same seed stay independent.
pub fn run_bd_ensemble(built: &BdBuilt, cfg: &ConfigFile) -> Result<EnsembleOutput, DriverError> {
    let run = &cfg.run;
    let sub_seed = run.seed ^ 0x9e3779b97f4a7c15;
    let init_state = |rng: &mut crdme_core::rng::SimRng| {
        let mut st = BDState::new();
        for _ in 0..built.init.0 {
            st.a.push(built.bd.domain.sample(rng));
        }
        for _ in 0..built.init.1 {
            st.b.push(built.bd.domain.sample(rng));
        }
        for _ in 0..built.init.2 {
            st.c.push(built.bd.domain.sample(rng));
        }
        st
    };
    match run.mode.as_str() {
        "first-binding" => {
            if !run.t_final.is_finite() {
                return Err(fail("particle runs need a finite horizon"));
            }
            let times: Vec<f64> = (0..run.replicas)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replica_rng(sub_seed, r);
                    let st = init_state(&mut rng);
                    let mut t_bind = f64::INFINITY;
                    bd_run(&built.bd, st, run.t_final, &[], &mut rng, |t, ev, _| {
                        if matches!(ev, BDEvent::Bind { .. }) {
                            t_bind = t;
                            Flow::Stop
                        } else {
                            Flow::Continue
                        }
                    });
                    t_bind
                })
                .collect();
            Ok(EnsembleOutput::Survival { times })
        }
        "snapshots" => {
            if run.observe.is_empty() {
                return Err(fail("snapshots mode needs observe times"));
            }
            let series: Vec<Vec<f64>> = (0..run.replicas)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replica_rng(sub_seed, r);
                    let st = init_state(&mut rng);
                    let out = bd_run(
                        &built.bd,
                        st,
                        run.t_final,
                        &run.observe,
                        &mut rng,
                        |_, _, _| Flow::Continue,
                    );
                    out.snapshots
                        .iter()
                        .map(|s| match built.track {
                            0 => s.a.len() as f64,
                            1 => s.b.len() as f64,
                            _ => s.c.len() as f64,
                        })
                        .collect()
                })
                .collect();
            Ok(EnsembleOutput::Curves {
                grid: run.observe.clone(),
                series,
            })
        }
        _ => unreachable!("validated"),
    }
}

#[derive(Clone, Debug)]
pub struct LevelRow {
    pub level: u32,
    pub voxels: usize,
    pub h: f64,
    pub rb_over_h: f64,
    pub stat: SummaryStats,
    pub censored: usize,
    /// Mean at this level minus the mean one level coarser.
    pub diff: Option<f64>,
}

/// Runs the first-binding ensemble on a ladder of uniformly refined meshes.
pub fn convergence_study(
    cfg: &ConfigFile,
    levels: u32,
    cache_dir: Option<&Path>,
) -> Result<Vec<LevelRow>, DriverError> {
    if levels < 3 {
        return Err(fail("a convergence study needs at least 3 levels"));
    }
    if cfg.run.mode != "first-binding" {
        return Err(fail("convergence studies use first-binding mode"));
    }
    let rb = cfg.interaction.as_ref().and_then(|it| it.rb).unwrap_or(0.0);
    let mut rows: Vec<LevelRow> = Vec::with_capacity(levels as usize);
    for level in 0..levels {
        let mut c = cfg.clone();
        c.mesh.refine = cfg.mesh.refine + level;
        let built = assemble(&c, cache_dir)?;
        let out = run_ensemble(&built, &c)?;
        let EnsembleOutput::Survival { times } = out else {
            unreachable!("first-binding mode yields times");
        };
        let censored = times.iter().filter(|t| !t.is_finite()).count();
        let finite: Vec<f64> = times.into_iter().filter(|t| t.is_finite()).collect();
        let stat = SummaryStats::from_samples(&finite)
            .map_err(|_| fail(format!("level {level}: every replica was censored")))?;
        let h = built.dual().h_max;
        rows.push(LevelRow {
            level,
            voxels: built.dual().voxel_count(),
            h,
            rb_over_h: if rb > 0.0 { rb / h } else { 0.0 },
            stat,
            censored,
            diff: rows.last().map(|p| stat.mean - p.stat.mean),
        });
    }
    Ok(rows)
}

/// Per-level order estimates `log2(|d_l| / |d_{l+1}|)` from successive
/// differences; empty with fewer than two differences.
pub fn order_estimates(rows: &[LevelRow]) -> Vec<f64> {
    let diffs: Vec<f64> = rows.iter().filter_map(|r| r.diff).collect();
    diffs
        .windows(2)
        .map(|w| (w[0].abs() / w[1].abs()).log2())
        .collect()
}
