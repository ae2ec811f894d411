//! Run configuration as read from TOML and sent over the wire. Rules (PML
//! width, frequency scaling, compression tolerance) stay symbolic here and
//! are turned into numbers by [`RunConfig::resolve`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid value for {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("could not parse configuration: {0}")]
    Parse(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub frequency: FrequencySection,
    pub layers: usize,
    pub pml: PmlSection,
    pub plr: PlrSection,
    pub gmres: GmresSection,
    pub preconditioner: PreconditionerSection,
    pub model: ModelSection,
    pub source: SourceSection,
    pub oracle: bool,
    pub output_dir: Option<String>,
    pub seed: u64,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSection::default(),
            frequency: FrequencySection::default(),
            layers: 4,
            pml: PmlSection::default(),
            plr: PlrSection::default(),
            gmres: GmresSection::default(),
            preconditioner: PreconditionerSection::default(),
            model: ModelSection::default(),
            source: SourceSection::default(),
            oracle: false,
            output_dir: None,
            seed: 0,
            sweep: SweepSection::default(),
        }
    }
}

/// Interior points per side; the unit square gets `h = 1 / (n + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    pub nx: Option<usize>,
    pub nz: Option<usize>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n: 100, nx: None, nz: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyRule {
    /// `omega = c0 * sqrt(n)`
    Sqrt,
    /// `omega = c0 * n`
    Linear,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencySection {
    pub rule: FrequencyRule,
    pub c0: f64,
    pub omega: Option<f64>,
}

impl Default for FrequencySection {
    fn default() -> Self {
        Self { rule: FrequencyRule::Sqrt, c0: 4.5, omega: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmlSection {
    /// Absorbing points per side; default `max(8, ceil(n / 10))`.
    pub points: Option<usize>,
    /// Damping constant; default `40 * max velocity`.
    pub strength: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlrSection {
    pub enabled: bool,
    /// Tolerance is `epsilon_scale / layers`, relative to each block's norm.
    pub epsilon_scale: f64,
    /// Default `ceil(sqrt(n))`.
    pub r_max: Option<usize>,
    /// Directory (on the solver's machine) receiving one `PLR1` file per
    /// compressed kernel after the offline stage.
    pub dump_dir: Option<String>,
}

impl Default for PlrSection {
    fn default() -> Self {
        Self { enabled: true, epsilon_scale: 1e-9, r_max: None, dump_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmresSection {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GmresSection {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    Jump,
    Extrapolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreconditionerSection {
    pub n_it: usize,
    pub variant: VariantName,
}

impl Default for PreconditionerSection {
    fn default() -> Self {
        Self { n_it: 2, variant: VariantName::Jump }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Homogeneous,
    Gradient,
    Smooth,
    Rough,
    Cavity,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelName,
    /// Falls back to the run seed.
    pub seed: Option<u64>,
    pub wall_speed: f64,
    /// VM2D file, required when `kind = "file"`.
    pub path: Option<String>,
    /// Swap x and z so layers are stacked along x.
    pub transpose: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { kind: ModelName::Gradient, seed: None, wall_speed: 5.0, path: None, transpose: false }
    }
}

/// Right-hand sides: every point and every random point is its own solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    /// Physical `(x, z)` positions of unit point sources.
    pub points: Vec<[f64; 2]>,
    /// Additional point sources at seeded random interior positions.
    pub random: usize,
    /// VM2D file holding a real source field on the extended grid.
    pub file: Option<String>,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self { points: vec![[0.5, 0.25]], random: 0, file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub n: Vec<usize>,
    pub layers: Vec<usize>,
}

/// All rules evaluated except those needing the velocity model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub nx: usize,
    pub nz: usize,
    pub h: f64,
    pub n_pml: usize,
    pub omega: f64,
    pub layers: usize,
    pub plr_epsilon: Option<f64>,
    pub r_max: usize,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    /// Representative size: the larger interior dimension.
    pub fn size(&self) -> usize {
        self.grid.nx.unwrap_or(self.grid.n).max(self.grid.nz.unwrap_or(self.grid.n))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let nx = self.grid.nx.unwrap_or(self.grid.n);
        let nz = self.grid.nz.unwrap_or(self.grid.n);
        if nx < 2 || nz < 2 {
            return Err(invalid("grid", format!("need at least 2 points per side, got {nx} x {nz}")));
        }
        if self.layers < 2 {
            return Err(invalid("layers", format!("the layered solver needs at least 2 layers, got {}", self.layers)));
        }
        if nz < 2 * self.layers {
            return Err(invalid("layers", format!("{} layers do not fit in {nz} depth rows (2 rows minimum each)", self.layers)));
        }
        match self.frequency.rule {
            FrequencyRule::Explicit => match self.frequency.omega {
                Some(w) if w > 0.0 && w.is_finite() => {}
                other => return Err(invalid("frequency.omega", format!("explicit rule needs a positive omega, got {other:?}"))),
            },
            _ if !(self.frequency.c0 > 0.0 && self.frequency.c0.is_finite()) => {
                return Err(invalid("frequency.c0", format!("must be positive, got {}", self.frequency.c0)));
            }
            _ => {}
        }
        if let Some(0) = self.pml.points {
            return Err(invalid("pml.points", "must be at least 1"));
        }
        if let Some(c) = self.pml.strength {
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid("pml.strength", format!("must be positive, got {c}")));
            }
        }
        if self.plr.enabled && !(self.plr.epsilon_scale > 0.0 && self.plr.epsilon_scale < 1.0) {
            return Err(invalid("plr.epsilon_scale", format!("must lie in (0, 1), got {}", self.plr.epsilon_scale)));
        }
        if let Some(0) = self.plr.r_max {
            return Err(invalid("plr.r_max", "must be at least 1"));
        }
        if !(self.gmres.tol > 0.0 && self.gmres.tol < 1.0) {
            return Err(invalid("gmres.tol", format!("must lie in (0, 1), got {}", self.gmres.tol)));
        }
        if self.gmres.max_iter == 0 {
            return Err(invalid("gmres.max_iter", "must be at least 1"));
        }
        if self.preconditioner.n_it == 0 {
            return Err(invalid("preconditioner.n_it", "must be at least 1"));
        }
        if self.model.kind == ModelName::File && self.model.path.is_none() {
            return Err(invalid("model.path", "required when model.kind = \"file\""));
        }
        if self.model.kind == ModelName::Cavity && !(self.model.wall_speed > 0.0) {
            return Err(invalid("model.wall_speed", "must be positive"));
        }
        for p in &self.source.points {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(invalid("source.points", format!("non-finite position {p:?}")));
            }
        }
        Ok(())
    }

    /// Evaluates every rule that does not depend on the model.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        self.validate()?;
        let nx = self.grid.nx.unwrap_or(self.grid.n);
        let nz = self.grid.nz.unwrap_or(self.grid.n);
        let n = nx.max(nz);
        let omega = match self.frequency.rule {
            FrequencyRule::Sqrt => self.frequency.c0 * (n as f64).sqrt(),
            FrequencyRule::Linear => self.frequency.c0 * n as f64,
            FrequencyRule::Explicit => self.frequency.omega.expect("validated"),
        };
        Ok(Resolved {
            nx,
            nz,
            h: 1.0 / (n as f64 + 1.0),
            n_pml: self.pml.points.unwrap_or_else(|| default_pml_points(n)),
            omega,
            layers: self.layers,
            plr_epsilon: self.plr.enabled.then(|| self.plr.epsilon_scale / self.layers as f64),
            r_max: self.plr.r_max.unwrap_or_else(|| (n as f64).sqrt().ceil() as usize),
        })
    }

    pub fn model_seed(&self) -> u64 {
        self.model.seed.unwrap_or(self.seed)
    }
}

pub fn default_pml_points(n: usize) -> usize {
    n.div_ceil(10).max(8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let r = RunConfig::default().resolve().unwrap();
        assert_eq!((r.nx, r.nz, r.n_pml, r.layers, r.r_max), (100, 100, 10, 4, 10));
        assert!((r.omega - 45.0).abs() < 1e-12);
        assert_eq!(r.plr_epsilon, Some(0.25e-9));
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = RunConfig::from_toml("layers = 8\n[grid]\nn = 60\n[frequency]\nrule = \"linear\"\nc0 = 0.5\n").unwrap();
        assert_eq!(cfg.layers, 8);
        assert_eq!(cfg.resolve().unwrap().omega, 30.0);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(matches!(RunConfig::from_toml("layer = 3"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = RunConfig { layers: 1, ..Default::default() };
        assert!(matches!(c.validate(), Err(ConfigError::Invalid { field: "layers", .. })));
        c.layers = 2;
        c.frequency.rule = FrequencyRule::Explicit;
        assert!(c.validate().is_err());
        c.frequency.omega = Some(10.0);
        assert!(c.validate().is_ok());
        c.gmres.tol = 1.5;
        assert!(c.validate().is_err());
        let c = RunConfig { model: ModelSection { kind: ModelName::File, ..Default::default() }, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn pml_rule_grows_linearly() {
        assert_eq!(default_pml_points(40), 8);
        assert_eq!(default_pml_points(200), 20);
        assert_eq!(default_pml_points(201), 21);
    }
}
