//! Run configuration: a TOML document with one section per model element.
//!
//! ```toml
//! [mesh]
//! square = { l = 0.2, n = 50 }   # or: file = "disk.mesh"
//! refine = 1                     # optional uniform refinements
//!
//! [[species]]
//! name = "A"
//! d = 0.01
//!
//! [interaction]
//! kind = "doi"                   # doi | gaussian | rdme
//! rb = 1e-3
//! lambda = 9.3662e7
//!
//! [unbinding]
//! kind = "uniform"               # point | uniform | balanced
//! mu = 9.2735e5
//!
//! [[reactions]]
//! kind = "assoc"                 # assoc | decay | production | convert
//! a = "A"
//! b = "B"
//! c = "C"
//!
//! [[init]]
//! species = "C"
//! mode = "uniform"               # uniform | density | voxels
//! count = 1
//!
//! [run]
//! t_final = 0.01
//! replicas = 1000
//! seed = 7
//! observe = [1e-3, 1e-2]
//! mode = "snapshots"             # snapshots | first-binding
//! ```

use serde::Deserialize;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config: {0}")]
    Invalid(String),
}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub mesh: MeshSection,
    pub species: Vec<SpeciesSection>,
    pub interaction: Option<InteractionSection>,
    pub unbinding: Option<UnbindingSection>,
    #[serde(default)]
    pub reactions: Vec<ReactionSection>,
    #[serde(default)]
    pub init: Vec<InitSection>,
    pub run: RunSection,
    pub bd: Option<BdSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub file: Option<PathBuf>,
    pub square: Option<SquareSpec>,
    #[serde(default)]
    pub refine: u32,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquareSpec {
    pub l: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSection {
    pub name: String,
    pub d: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSection {
    pub kind: String,
    pub rb: Option<f64>,
    pub lambda: Option<f64>,
    /// Lattice pair rate; defaults to `lambda * pi * rb^2` when absent.
    pub beta: Option<f64>,
    /// Gaussian truncation radius in units of `rb`.
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    /// Product position weight: `z = gamma x + (1 - gamma) y`.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_cutoff() -> f64 {
    6.0
}

fn default_gamma() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnbindingSection {
    /// `point` and `uniform` draw product positions geometrically and
    /// reject out-of-domain placements; `balanced` builds the reverse rate
    /// table from the association table and the dissociation constant.
    pub kind: String,
    #[serde(default)]
    pub mu: f64,
    pub kd: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReactionSection {
    Assoc {
        a: String,
        b: String,
        c: Option<String>,
    },
    Decay {
        species: String,
        rate: f64,
        voxels: Option<Vec<u32>>,
    },
    Production {
        species: String,
        rate: f64,
    },
    Convert {
        species: String,
        catalyst: String,
        product: String,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub species: String,
    pub mode: String,
    pub count: Option<u64>,
    /// Expected molecules per unit area; realized as `round(density |Omega|)`.
    pub density: Option<f64>,
    /// Explicit (voxel, count) pairs.
    pub voxels: Option<Vec<(u32, u32)>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub t_final: f64,
    pub replicas: u64,
    pub seed: u64,
    #[serde(default)]
    pub observe: Vec<f64>,
    #[serde(default = "default_mode")]
    pub mode: String,
    /// Species whose mean count the snapshot curve reports; defaults to the
    /// association product.
    pub track: Option<String>,
    /// Sample the product voxel per placement component instead of per pair.
    #[serde(default)]
    pub per_component: bool,
}

fn default_mode() -> String {
    "snapshots".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BdSection {
    pub dt: f64,
    pub domain: String,
    pub l: Option<f64>,
    pub r: Option<f64>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with_overrides(text, None, None)
    }

    /// Parses with command-line seed and replica overrides applied before
    /// validation, so an override of zero replicas is rejected like a
    /// configured one.
    pub fn parse_with_overrides(
        text: &str,
        seed: Option<u64>,
        replicas: Option<u64>,
    ) -> Result<Self, ConfigError> {
        let mut cfg: ConfigFile =
            toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        if let Some(s) = seed {
            cfg.run.seed = s;
        }
        if let Some(r) = replicas {
            cfg.run.replicas = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn species_index(&self, name: &str) -> Result<usize, ConfigError> {
        self.species
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| bad(format!("unknown species '{name}'")))
    }

    /// The single association reaction, if any.
    pub fn assoc(&self) -> Option<(&str, &str, Option<&str>)> {
        self.reactions.iter().find_map(|r| match r {
            ReactionSection::Assoc { a, b, c } => Some((a.as_str(), b.as_str(), c.as_deref())),
            _ => None,
        })
    }

    /// The species whose count snapshot curves report.
    pub fn tracked_species(&self) -> Result<usize, ConfigError> {
        if let Some(name) = &self.run.track {
            return self.species_index(name);
        }
        if let Some((_, _, Some(c))) = self.assoc() {
            return self.species_index(c);
        }
        Ok(0)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        match (&self.mesh.file, &self.mesh.square) {
            (Some(_), Some(_)) => return Err(bad("mesh: give either file or square, not both")),
            (None, None) => return Err(bad("mesh: needs file or square")),
            (None, Some(sq)) => {
                if !(sq.l > 0.0 && sq.l.is_finite()) || sq.n == 0 {
                    return Err(bad("mesh.square: l must be > 0 and n >= 1"));
                }
            }
            _ => {}
        }

        if self.species.is_empty() {
            return Err(bad("at least one species is required"));
        }
        for (i, s) in self.species.iter().enumerate() {
            if s.name.is_empty() {
                return Err(bad("species name must be nonempty"));
            }
            if !(s.d >= 0.0 && s.d.is_finite()) {
                return Err(bad(format!("species '{}': d must be finite and >= 0", s.name)));
            }
            if self.species[..i].iter().any(|t| t.name == s.name) {
                return Err(bad(format!("species '{}' is defined twice", s.name)));
            }
        }

        if let Some(it) = &self.interaction {
            match it.kind.as_str() {
                "doi" | "gaussian" => {
                    let rb = it.rb.ok_or_else(|| bad("interaction: rb is required"))?;
                    let lam = it.lambda.ok_or_else(|| bad("interaction: lambda is required"))?;
                    if !(rb > 0.0 && rb.is_finite()) {
                        return Err(bad("interaction: rb must be > 0"));
                    }
                    if !(lam >= 0.0 && lam.is_finite()) {
                        return Err(bad("interaction: lambda must be >= 0"));
                    }
                    if it.beta.is_some() {
                        return Err(bad("interaction: beta applies only to kind = \"rdme\""));
                    }
                }
                "rdme" => {
                    let beta = self.rdme_beta()?;
                    if !(beta >= 0.0 && beta.is_finite()) {
                        return Err(bad("interaction: beta must be >= 0"));
                    }
                }
                k => return Err(bad(format!("interaction: unknown kind '{k}'"))),
            }
            if !(it.cutoff > 0.0 && it.cutoff.is_finite()) {
                return Err(bad("interaction: cutoff must be > 0"));
            }
            if !(0.0..=1.0).contains(&it.gamma) {
                return Err(bad("interaction: gamma must be in [0, 1]"));
            }
        }

        let mut assoc_seen = false;
        for r in &self.reactions {
            match r {
                ReactionSection::Assoc { a, b, c } => {
                    if assoc_seen {
                        return Err(bad("only one association reaction is supported"));
                    }
                    assoc_seen = true;
                    if self.interaction.is_none() {
                        return Err(bad("association needs an [interaction] section"));
                    }
                    let (ia, ib) = (self.species_index(a)?, self.species_index(b)?);
                    if ia == ib {
                        return Err(bad("association requires two distinct species"));
                    }
                    if let Some(c) = c {
                        self.species_index(c)?;
                    }
                }
                ReactionSection::Decay { species, rate, .. }
                | ReactionSection::Production { species, rate } => {
                    self.species_index(species)?;
                    if !(*rate >= 0.0 && rate.is_finite()) {
                        return Err(bad("reaction rates must be finite and >= 0"));
                    }
                }
                ReactionSection::Convert {
                    species,
                    catalyst,
                    product,
                } => {
                    if self.interaction.is_none() {
                        return Err(bad("conversion needs an [interaction] section"));
                    }
                    let s = self.species_index(species)?;
                    let e = self.species_index(catalyst)?;
                    self.species_index(product)?;
                    if s == e {
                        return Err(bad("conversion requires a distinct catalyst"));
                    }
                }
            }
        }

        if let Some(un) = &self.unbinding {
            let assoc = self
                .assoc()
                .ok_or_else(|| bad("unbinding needs an association reaction"))?;
            if assoc.2.is_none() {
                return Err(bad("unbinding needs an association with a product"));
            }
            let it = self.interaction.as_ref().expect("assoc implies interaction");
            let lattice = it.kind == "rdme";
            match (un.kind.as_str(), lattice) {
                ("point", _) | ("uniform", false) => {
                    if !(un.mu >= 0.0 && un.mu.is_finite()) {
                        return Err(bad("unbinding: mu must be finite and >= 0"));
                    }
                    if un.kd.is_some() {
                        return Err(bad("unbinding: kd applies only to kind = \"balanced\""));
                    }
                }
                ("balanced", false) => match un.kd {
                    Some(kd) if kd > 0.0 && kd.is_finite() => {}
                    _ => return Err(bad("unbinding: balanced needs kd > 0")),
                },
                ("uniform" | "balanced", true) => {
                    return Err(bad("lattice unbinding must use kind = \"point\""));
                }
                (k, _) => return Err(bad(format!("unbinding: unknown kind '{k}'"))),
            }
        }

        for init in &self.init {
            self.species_index(&init.species)?;
            match init.mode.as_str() {
                "uniform" => {
                    let n = init.count.ok_or_else(|| bad("init uniform: count is required"))?;
                    if n > u32::MAX as u64 {
                        return Err(bad("init: count does not fit in 32 bits"));
                    }
                    if init.density.is_some() || init.voxels.is_some() {
                        return Err(bad("init uniform: only count applies"));
                    }
                }
                "density" => match init.density {
                    Some(d) if d >= 0.0 && d.is_finite() => {
                        if init.count.is_some() || init.voxels.is_some() {
                            return Err(bad("init density: only density applies"));
                        }
                    }
                    _ => return Err(bad("init density: density must be finite and >= 0")),
                },
                "voxels" => {
                    if init.voxels.as_ref().map_or(true, |v| v.is_empty()) {
                        return Err(bad("init voxels: needs (voxel, count) pairs"));
                    }
                    if init.count.is_some() || init.density.is_some() {
                        return Err(bad("init voxels: only voxels applies"));
                    }
                }
                m => return Err(bad(format!("init: unknown mode '{m}'"))),
            }
        }

        let run = &self.run;
        if run.replicas == 0 {
            return Err(bad("run: replicas must be >= 1"));
        }
        if !(run.t_final > 0.0) {
            return Err(bad("run: t_final must be > 0"));
        }
        match run.mode.as_str() {
            "snapshots" => {
                if !run.t_final.is_finite() {
                    return Err(bad("run: snapshots mode needs a finite t_final"));
                }
            }
            "first-binding" => {
                if self.assoc().is_none() {
                    return Err(bad("run: first-binding mode needs an association reaction"));
                }
            }
            m => return Err(bad(format!("run: unknown mode '{m}'"))),
        }
        if run
            .observe
            .windows(2)
            .any(|w| !(w[0] < w[1]))
        {
            return Err(bad("run: observe times must be strictly increasing"));
        }
        if run
            .observe
            .iter()
            .any(|&t| !(t.is_finite() && t >= 0.0 && t <= run.t_final))
        {
            return Err(bad("run: observe times must lie in [0, t_final]"));
        }
        if let Some(track) = &run.track {
            self.species_index(track)?;
        }

        if let Some(bd) = &self.bd {
            if !(bd.dt > 0.0 && bd.dt.is_finite()) {
                return Err(bad("bd: dt must be > 0"));
            }
            match bd.domain.as_str() {
                "square" => match bd.l {
                    Some(l) if l > 0.0 && l.is_finite() => {}
                    _ => return Err(bad("bd: square domain needs l > 0")),
                },
                "disk" => match bd.r {
                    Some(r) if r > 0.0 && r.is_finite() => {}
                    _ => return Err(bad("bd: disk domain needs r > 0")),
                },
                d => return Err(bad(format!("bd: unknown domain '{d}'"))),
            }
        }
        Ok(())
    }

    /// Lattice pair rate: explicit `beta` or `lambda * pi * rb^2`.
    pub fn rdme_beta(&self) -> Result<f64, ConfigError> {
        let it = self
            .interaction
            .as_ref()
            .ok_or_else(|| bad("no [interaction] section"))?;
        if let Some(beta) = it.beta {
            return Ok(beta);
        }
        match (it.rb, it.lambda) {
            (Some(rb), Some(lam)) => Ok(lam * std::f64::consts::PI * rb * rb),
            _ => Err(bad("interaction rdme: needs beta or both rb and lambda")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"
[mesh]
square = { l = 1.0, n = 2 }

[[species]]
name = "A"
d = 1.0

[run]
t_final = 1.0
replicas = 10
seed = 1
"#
        .to_string()
    }

    fn pair() -> String {
        r#"
[mesh]
square = { l = 1.0, n = 2 }

[[species]]
name = "A"
d = 1.0
[[species]]
name = "B"
d = 1.0
[[species]]
name = "C"
d = 1.0

[interaction]
kind = "doi"
rb = 0.2
lambda = 50.0

[unbinding]
kind = "uniform"
mu = 2.0

[[reactions]]
kind = "assoc"
a = "A"
b = "B"
c = "C"

[[init]]
species = "C"
mode = "uniform"
count = 1

[run]
t_final = 1.0
replicas = 10
seed = 1
"#
        .to_string()
    }

    #[test]
    fn minimal_and_pair_configs_parse() {
        let cfg = ConfigFile::parse(&minimal()).unwrap();
        assert_eq!(cfg.species.len(), 1);
        assert_eq!(cfg.run.mode, "snapshots");
        let cfg = ConfigFile::parse(&pair()).unwrap();
        assert_eq!(cfg.assoc(), Some(("A", "B", Some("C"))));
        assert_eq!(cfg.tracked_species().unwrap(), 2);
        assert_eq!(cfg.interaction.as_ref().unwrap().gamma, 0.5);
    }

    #[test]
    fn unknown_keys_and_typos_are_rejected() {
        let text = minimal().replace("seed = 1", "seed = 1\nbogus = 2");
        assert!(matches!(ConfigFile::parse(&text), Err(ConfigError::Syntax(_))));
        let text = minimal().replace("[mesh]", "[mesk]");
        assert!(ConfigFile::parse(&text).is_err());
    }

    #[test]
    fn validation_rejects_inconsistent_sections() {
        let cases: Vec<(&str, &str)> = vec![
            ("replicas = 10", "replicas = 0"),
            ("t_final = 1.0", "t_final = 0.0"),
            ("d = 1.0", "d = -1.0"),
            ("square = { l = 1.0, n = 2 }", "square = { l = 0.0, n = 2 }"),
        ];
        for (from, to) in cases {
            let text = minimal().replacen(from, to, 1);
            assert!(ConfigFile::parse(&text).is_err(), "{to} must be rejected");
        }
        let cases: Vec<(&str, &str)> = vec![
            ("lambda = 50.0", "lambda = -1.0"),
            ("rb = 0.2", "rb = 0.0"),
            ("mu = 2.0", "mu = -2.0"),
            ("a = \"A\"", "a = \"Z\""),
            ("kind = \"uniform\"", "kind = \"sideways\""),
            ("mode = \"uniform\"", "mode = \"pile\""),
            ("count = 1", "density = 1.0"),
        ];
        for (from, to) in cases {
            let text = pair().replacen(from, to, 1);
            assert!(ConfigFile::parse(&text).is_err(), "{to} must be rejected");
        }
    }

    #[test]
    fn observe_times_must_increase_within_the_horizon() {
        let text = minimal().replace("seed = 1", "seed = 1\nobserve = [0.1, 0.1]");
        assert!(ConfigFile::parse(&text).is_err());
        let text = minimal().replace("seed = 1", "seed = 1\nobserve = [0.1, 2.0]");
        assert!(ConfigFile::parse(&text).is_err());
        let text = minimal().replace("seed = 1", "seed = 1\nobserve = [0.1, 0.9]");
        assert!(ConfigFile::parse(&text).is_ok());
    }

    #[test]
    fn first_binding_mode_requires_an_association() {
        let text = minimal().replace("seed = 1", "seed = 1\nmode = \"first-binding\"");
        assert!(ConfigFile::parse(&text).is_err());
        let text = pair().replace("seed = 1", "seed = 1\nmode = \"first-binding\"");
        assert!(ConfigFile::parse(&text).is_ok());
    }

    #[test]
    fn balanced_unbinding_needs_kd_and_lattice_needs_point() {
        let text = pair().replace("kind = \"uniform\"\nmu = 2.0", "kind = \"balanced\"");
        assert!(ConfigFile::parse(&text).is_err());
        let text = pair().replace("kind = \"uniform\"\nmu = 2.0", "kind = \"balanced\"\nkd = 1.5");
        assert!(ConfigFile::parse(&text).is_ok());
        let text = pair().replace("kind = \"doi\"", "kind = \"rdme\"");
        assert!(ConfigFile::parse(&text).is_err(), "rdme + uniform unbinding");
        let text = pair()
            .replace("kind = \"doi\"", "kind = \"rdme\"")
            .replace("kind = \"uniform\"", "kind = \"point\"");
        let cfg = ConfigFile::parse(&text).unwrap();
        let beta = cfg.rdme_beta().unwrap();
        assert!((beta - 50.0 * std::f64::consts::PI * 0.04).abs() < 1e-12);
    }

    #[test]
    fn infinite_horizon_is_first_binding_only() {
        let text = pair()
            .replace("t_final = 1.0", "t_final = inf")
            .replace("seed = 1", "seed = 1\nmode = \"first-binding\"");
        assert!(ConfigFile::parse(&text).is_ok());
        let text = minimal().replace("t_final = 1.0", "t_final = inf");
        assert!(ConfigFile::parse(&text).is_err());
    }
}
