//! Command-line flags and how they override the TOML configuration.

use clap::{Args, Parser, Subcommand, ValueEnum};
use polartrace_api::config::{FrequencyRule, ModelName, VariantName};
use polartrace_api::RunConfig;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "polartrace", version, about = "Layered polarized-trace Helmholtz solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Factorize, extract and compress; report sizes and timings.
    Offline(Common),
    /// Offline stage followed by one GMRES solve per source.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Also write each field as a complex VM2D file.
        #[arg(long)]
        write_fields: bool,
    },
    /// Iteration counts over a grid of sizes and layer counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Interior sizes, comma separated.
        #[arg(long = "sweep-n", value_delimiter = ',')]
        sweep_n: Vec<usize>,
        /// Layer counts, comma separated.
        #[arg(long = "sweep-layers", value_delimiter = ',')]
        sweep_layers: Vec<usize>,
    },
    /// Eigenvalues of the once-swept preconditioned system.
    Spectrum(Common),
    /// Identity checks against independent references and a direct solve.
    OracleCheck(Common),
    /// Run the service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8730")]
        bind: String,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelArg {
    Homogeneous,
    Gradient,
    Smooth,
    Rough,
    Cavity,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    Jump,
    Extrapolation,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// TOML configuration; flags below override it.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Service URL; without it an in-process service is started.
    #[arg(long, env = "POLARTRACE_SERVER")]
    pub server: Option<String>,
    /// Where CSV and VM2D outputs go.
    #[arg(long, env = "POLARTRACE_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,

    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub nz: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Fixed angular frequency (otherwise `c0 * sqrt(n)`).
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub c0: Option<f64>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// VM2D velocity or squared-slowness file on the extended grid.
    #[arg(long, conflicts_with = "model")]
    pub model_file: Option<String>,
    #[arg(long)]
    pub wall_speed: Option<f64>,
    /// Stack layers along x instead of z.
    #[arg(long)]
    pub transpose: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pml_points: Option<usize>,
    #[arg(long)]
    pub pml_strength: Option<f64>,
    /// Keep the kernels dense.
    #[arg(long)]
    pub no_plr: bool,
    #[arg(long)]
    pub plr_epsilon_scale: Option<f64>,
    #[arg(long)]
    pub r_max: Option<usize>,
    /// Write every compressed kernel as a PLR1 file into this directory.
    #[arg(long)]
    pub plr_dump: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub n_it: Option<usize>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Point source at `x,z`; repeat for several. Replaces configured points.
    #[arg(long = "source", value_parser = parse_point)]
    pub sources: Vec<[f64; 2]>,
    #[arg(long)]
    pub random_sources: Option<usize>,
    /// VM2D source field on the extended grid.
    #[arg(long)]
    pub source_file: Option<String>,
    /// Compare each solution with a global direct solve.
    #[arg(long)]
    pub oracle: bool,
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let (x, z) = s.split_once(',').ok_or_else(|| format!("expected x,z, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok([p(x)?, p(z)?])
}

impl Common {
    /// Flags win over the file.
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(n) = self.n {
            cfg.grid.n = n;
        }
        if self.nx.is_some() {
            cfg.grid.nx = self.nx;
        }
        if self.nz.is_some() {
            cfg.grid.nz = self.nz;
        }
        if let Some(l) = self.layers {
            cfg.layers = l;
        }
        if let Some(w) = self.omega {
            cfg.frequency.rule = FrequencyRule::Explicit;
            cfg.frequency.omega = Some(w);
        }
        if let Some(c0) = self.c0 {
            cfg.frequency.c0 = c0;
            if self.omega.is_none() && cfg.frequency.rule == FrequencyRule::Explicit {
                cfg.frequency.rule = FrequencyRule::Sqrt;
            }
        }
        if let Some(m) = self.model {
            cfg.model.kind = match m {
                ModelArg::Homogeneous => ModelName::Homogeneous,
                ModelArg::Gradient => ModelName::Gradient,
                ModelArg::Smooth => ModelName::Smooth,
                ModelArg::Rough => ModelName::Rough,
                ModelArg::Cavity => ModelName::Cavity,
            };
        }
        if let Some(p) = &self.model_file {
            cfg.model.kind = ModelName::File;
            cfg.model.path = Some(p.clone());
        }
        if let Some(w) = self.wall_speed {
            cfg.model.wall_speed = w;
        }
        if self.transpose {
            cfg.model.transpose = true;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.pml_points.is_some() {
            cfg.pml.points = self.pml_points;
        }
        if self.pml_strength.is_some() {
            cfg.pml.strength = self.pml_strength;
        }
        if self.no_plr {
            cfg.plr.enabled = false;
        }
        if let Some(e) = self.plr_epsilon_scale {
            cfg.plr.epsilon_scale = e;
        }
        if self.r_max.is_some() {
            cfg.plr.r_max = self.r_max;
        }
        if self.plr_dump.is_some() {
            cfg.plr.dump_dir = self.plr_dump.clone();
        }
        if let Some(t) = self.tol {
            cfg.gmres.tol = t;
        }
        if let Some(m) = self.max_iter {
            cfg.gmres.max_iter = m;
        }
        if let Some(k) = self.n_it {
            cfg.preconditioner.n_it = k;
        }
        if let Some(v) = self.variant {
            cfg.preconditioner.variant = match v {
                VariantArg::Jump => VariantName::Jump,
                VariantArg::Extrapolation => VariantName::Extrapolation,
            };
        }
        if !self.sources.is_empty() {
            cfg.source.points = self.sources.clone();
        }
        if let Some(r) = self.random_sources {
            cfg.source.random = r;
        }
        if self.source_file.is_some() {
            cfg.source.file = self.source_file.clone();
        }
        if self.oracle {
            cfg.oracle = true;
        }
    }

    /// Flag or environment, then the file, then `./polartrace-out`.
    pub fn output_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("polartrace-out"))
    }
}
