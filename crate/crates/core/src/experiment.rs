//! Runs configured experiments end to end and produces the report rows the
//! service returns: model and source preparation, offline sessions, solves,
//! spectra, iteration sweeps and the identity checks.

use crate::checks;
use crate::grid::{ComplexGrid2D, Form, GridError, SquaredSlownessModel};
use crate::models::ModelKind;
use crate::partition::{make_partition, Policy};
use crate::solver::{
    direct_solve, interior_rel_error, run_offline, spectrum, GmresConfig, GmresStatus, OfflineConfig, OfflineState,
    SolverError,
};
use crate::trace_system::{Kernel, PlrSettings, Variant};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use polartrace_api::config::{ModelName, Resolved, SourceSection, VariantName};
use polartrace_api::dto::{FieldDump, OracleResponse, SessionInfo, SolveRequest, SolveResponse, SpectrumResponse, SweepResponse};
use polartrace_api::report::{
    CompressionRow, MuRow, OfflineRow, OracleRow, ResidualRow, SolveRow, SolveTimingRow, SpectrumRow, SpectrumSummary,
    SweepRow, SweepTimingRow, TimingRow,
};
use polartrace_api::vm2d::{Unit, Vm2d, Vm2dError};
use polartrace_api::{ConfigError, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

/// Offline storage allowed before a configuration is refused.
pub const MEMORY_BUDGET_BYTES: f64 = 3.0e9;

/// Default PML damping per unit of the fastest wave speed.
pub const PML_STRENGTH_PER_SPEED: f64 = 40.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    File { path: String, source: Vm2dError },
    #[error("{0}")]
    Input(String),
    #[error("model: {0}")]
    Model(GridError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl ExperimentError {
    /// Errors the caller can fix by changing the configuration or inputs.
    pub fn is_config(&self) -> bool {
        match self {
            ExperimentError::Config(_) | ExperimentError::File { .. } | ExperimentError::Input(_) => true,
            ExperimentError::Model(e) => matches!(e, GridError::InvalidSlowness { .. } | GridError::DimensionMismatch { .. }),
            ExperimentError::Solver(e) => matches!(e, SolverError::Config(_) | SolverError::SourceShape { .. } | SolverError::TooLarge { .. }),
        }
    }
}

/// Grid and medium in solver orientation (depth is the layering axis).
pub struct Setup {
    pub config: RunConfig,
    pub resolved: Resolved,
    pub grid: ComplexGrid2D,
    pub model: SquaredSlownessModel,
    pub pml_strength: f64,
    /// Input x and z are swapped so layers stack along x.
    pub transposed: bool,
}

/// Rough bytes held by the block factorizations of all layers.
pub fn estimated_offline_bytes(r: &Resolved, transposed: bool) -> f64 {
    let (nx, nz) = if transposed { (r.nz, r.nx) } else { (r.nx, r.nz) };
    let nxe = (nx + 2 * r.n_pml) as f64;
    let rows = (nz + 2 * r.n_pml * r.layers) as f64;
    16.0 * nxe * nxe * rows
}

fn builtin(cfg: &RunConfig) -> Option<ModelKind> {
    let seed = cfg.model_seed();
    Some(match cfg.model.kind {
        ModelName::Homogeneous => ModelKind::Homogeneous,
        ModelName::Gradient => ModelKind::Gradient,
        ModelName::Smooth => ModelKind::SmoothInclusions { seed },
        ModelName::Rough => ModelKind::RoughInclusions { seed },
        ModelName::Cavity => ModelKind::Cavity { wall_speed: cfg.model.wall_speed },
        ModelName::File => return None,
    })
}

fn read_vm2d(path: &str) -> Result<Vm2d, ExperimentError> {
    Vm2d::read_path(Path::new(path)).map_err(|source| ExperimentError::File { path: path.to_string(), source })
}

/// Checks that a file matches the grid in input orientation.
fn check_file_grid(path: &str, f: &Vm2d, nx_ext: usize, nz_ext: usize, h: f64) -> Result<(), ExperimentError> {
    if (f.nx_ext, f.nz_ext) != (nx_ext, nz_ext) {
        return Err(ExperimentError::Input(format!(
            "{path}: file grid is {} x {} (depth x width), configuration needs {nz_ext} x {nx_ext}",
            f.nz_ext, f.nx_ext
        )));
    }
    if ((f.h - h) / h).abs() > 1e-9 {
        return Err(ExperimentError::Input(format!("{path}: file spacing {} differs from grid spacing {h}", f.h)));
    }
    Ok(())
}

fn orient(a: Array2<f64>, transposed: bool) -> Array2<f64> {
    if transposed {
        a.reversed_axes().as_standard_layout().to_owned()
    } else {
        a
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Setup, ExperimentError> {
    let resolved = cfg.resolve()?;
    let transposed = cfg.model.transpose;
    let est = estimated_offline_bytes(&resolved, transposed);
    if est > MEMORY_BUDGET_BYTES {
        return Err(ExperimentError::Input(format!(
            "estimated offline storage {:.2} GB exceeds the {:.1} GB budget",
            est / 1e9,
            MEMORY_BUDGET_BYTES / 1e9
        )));
    }
    let (nx, nz) = if transposed { (resolved.nz, resolved.nx) } else { (resolved.nx, resolved.nz) };
    let grid = ComplexGrid2D::new(nx, nz, resolved.h, resolved.n_pml).map_err(ExperimentError::Model)?;
    let model = match builtin(cfg) {
        Some(kind) => {
            let c = kind.velocity();
            if transposed {
                SquaredSlownessModel::from_velocity(&grid, |x, z| c(z, x))
            } else {
                SquaredSlownessModel::from_velocity(&grid, c)
            }
            .map_err(ExperimentError::Model)?
        }
        None => {
            let path = cfg.model.path.as_deref().expect("validated");
            let f = read_vm2d(path)?;
            let (nxe, nze) = (resolved.nx + 2 * resolved.n_pml, resolved.nz + 2 * resolved.n_pml);
            check_file_grid(path, &f, nxe, nze, resolved.h)?;
            let m = f.squared_slowness().map_err(|source| ExperimentError::File { path: path.to_string(), source })?;
            let a = Array2::from_shape_vec((nze, nxe), m).expect("length checked on read");
            SquaredSlownessModel::given_on_extended(orient(a, transposed)).map_err(ExperimentError::Model)?
        }
    };
    let pml_strength = cfg.pml.strength.unwrap_or(PML_STRENGTH_PER_SPEED * model.max_velocity());
    Ok(Setup { config: cfg.clone(), resolved, grid, model, pml_strength, transposed })
}

/// One right-hand side on the extended grid.
pub struct Source {
    pub label: String,
    pub field: Array2<C64>,
}

impl Setup {
    /// Storage node nearest to input position `(x, z)`, clamped to the
    /// physical interior.
    fn nearest_node(&self, x: f64, z: f64) -> (usize, usize) {
        let (x, z) = if self.transposed { (z, x) } else { (x, z) };
        let g = &self.grid;
        let snap = |v: f64, n: usize| ((v / g.h).round() as isize).clamp(1, n as isize);
        (g.depth_row(snap(x, g.nx)), g.depth_row(snap(z, g.nz)))
    }

    fn point_source(&self, ix: usize, iz: usize) -> Array2<C64> {
        let g = &self.grid;
        let mut f = Array2::zeros((g.nz_ext(), g.nx_ext()));
        f[[iz, ix]] = C64::new(1.0 / (g.h * g.h), 0.0);
        f
    }

    pub fn sources(&self, section: &SourceSection) -> Result<Vec<Source>, ExperimentError> {
        let mut out = Vec::new();
        for p in &section.points {
            let (ix, iz) = self.nearest_node(p[0], p[1]);
            out.push(Source { label: format!("point({}, {})", p[0], p[1]), field: self.point_source(ix, iz) });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        for k in 0..section.random {
            let g = &self.grid;
            let ix = g.depth_row(rng.random_range(1..=g.nx as i64) as isize);
            let iz = g.depth_row(rng.random_range(1..=g.nz as i64) as isize);
            out.push(Source { label: format!("random {k}"), field: self.point_source(ix, iz) });
        }
        if let Some(path) = &section.file {
            let f = read_vm2d(path)?;
            let r = &self.resolved;
            let (nxe, nze) = (r.nx + 2 * r.n_pml, r.nz + 2 * r.n_pml);
            check_file_grid(path, &f, nxe, nze, r.h)?;
            let field = match f.unit {
                Unit::Field => {
                    let a = Array2::from_shape_vec((nze, nxe), f.values).expect("length checked on read");
                    orient(a, self.transposed).mapv(|v| C64::new(v, 0.0))
                }
                Unit::ComplexField => {
                    let re = Array2::from_shape_fn((nze, nxe), |(i, j)| f.values[2 * (i * nxe + j)]);
                    let im = Array2::from_shape_fn((nze, nxe), |(i, j)| f.values[2 * (i * nxe + j) + 1]);
                    let (re, im) = (orient(re, self.transposed), orient(im, self.transposed));
                    Array2::from_shape_fn(re.dim(), |ij| C64::new(re[ij], im[ij]))
                }
                u => return Err(ExperimentError::Input(format!("{path}: unit {u:?} is not a source field"))),
            };
            out.push(Source { label: format!("file {path}"), field });
        }
        if out.is_empty() {
            return Err(ExperimentError::Input("no sources configured".into()));
        }
        Ok(out)
    }

    pub fn offline_config(&self) -> OfflineConfig {
        let r = &self.resolved;
        OfflineConfig {
            omega: r.omega,
            pml_strength: self.pml_strength,
            form: Form::Unsymmetric,
            compression: r.plr_epsilon.map(|rel_epsilon| PlrSettings { rel_epsilon, r_max: r.r_max }),
            variant: match self.config.preconditioner.variant {
                VariantName::Jump => Variant::Jump,
                VariantName::Extrapolation => Variant::Extrapolation,
            },
        }
    }

    pub fn gmres_config(&self) -> GmresConfig {
        GmresConfig { rel_tol: self.config.gmres.tol, max_iter: self.config.gmres.max_iter }
    }

    pub fn run_offline(&self) -> Result<OfflineState, ExperimentError> {
        let part = make_partition(self.grid.nz, self.resolved.layers, Policy::Equal)
            .map_err(|e| ExperimentError::Input(e.to_string()))?;
        Ok(run_offline(&self.grid, &self.model, &part, &self.offline_config())?)
    }

    /// Field back in input orientation.
    fn dump(&self, source_id: usize, u: &Array2<C64>) -> FieldDump {
        let u = if self.transposed { u.t().as_standard_layout().to_owned() } else { u.clone() };
        let (nz_ext, nx_ext) = u.dim();
        FieldDump {
            source_id,
            nx_ext,
            nz_ext,
            h: self.grid.h,
            re: u.iter().map(|z| z.re).collect(),
            im: u.iter().map(|z| z.im).collect(),
        }
    }
}

pub fn status_name(s: GmresStatus) -> &'static str {
    match s {
        GmresStatus::Converged => "converged",
        GmresStatus::Breakdown => "breakdown",
        GmresStatus::MaxIterations => "max_iterations",
        GmresStatus::Stagnated => "stagnated",
    }
}

fn depth_name(d: crate::local_solver::Depth) -> &'static str {
    use crate::local_solver::Depth::*;
    match d {
        Zero => "0",
        One => "1",
        N => "n",
        NPlus1 => "n+1",
    }
}

fn file_depth(d: crate::local_solver::Depth) -> &'static str {
    match depth_name(d) {
        "n+1" => "np1",
        s => s,
    }
}

/// Offline state plus everything needed to serve solves against it.
pub struct Session {
    pub setup: Setup,
    pub state: OfflineState,
}

impl Session {
    pub fn open(cfg: &RunConfig) -> Result<Self, ExperimentError> {
        let setup = prepare(cfg)?;
        let state = setup.run_offline()?;
        let session = Self { setup, state };
        if let (true, Some(dir)) = (cfg.plr.enabled, &cfg.plr.dump_dir) {
            session.dump_plr(Path::new(dir))?;
        }
        Ok(session)
    }

    /// Writes every compressed kernel as `plr_<layer>_<target>_<source>.plr`.
    pub fn dump_plr(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, ExperimentError> {
        let io = |e: std::io::Error| ExperimentError::Input(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut written = Vec::new();
        for (&(layer, target, source), k) in self.state.operators.kernels() {
            if let Kernel::Compressed { tree, .. } = k.as_ref() {
                let name = format!("plr_{layer}_{}_{}.plr", file_depth(target), file_depth(source));
                let path = dir.join(name);
                let file = std::fs::File::create(&path).map_err(io)?;
                tree.write_to(std::io::BufWriter::new(file)).map_err(|e| ExperimentError::Input(format!("{}: {e}", path.display())))?;
                written.push(path);
            }
        }
        written.sort();
        Ok(written)
    }

    pub fn offline_row(&self) -> OfflineRow {
        let r = &self.setup.resolved;
        let (mut kernels, mut stored, mut dense) = (0, 0, 0);
        for (_, k) in self.state.operators.kernels() {
            let (rows, cols) = k.dim();
            kernels += 1;
            stored += k.stored_entries();
            dense += rows * cols;
        }
        let min_pivot = self.state.factorizations.iter().map(|f| f.min_relative_pivot).fold(f64::INFINITY, f64::min);
        OfflineRow {
            nx: self.setup.grid.nx,
            nz: self.setup.grid.nz,
            n_pml: r.n_pml,
            h: r.h,
            omega: r.omega,
            pml_strength: self.setup.pml_strength,
            layers: r.layers,
            plr_enabled: r.plr_epsilon.is_some(),
            plr_epsilon: r.plr_epsilon.unwrap_or(0.0),
            r_max: r.r_max,
            kernels,
            stored_entries: stored,
            dense_entries: dense,
            compression_ratio: stored as f64 / dense.max(1) as f64,
            min_relative_pivot: min_pivot,
        }
    }

    pub fn compression_rows(&self) -> Vec<CompressionRow> {
        let mut rows: Vec<CompressionRow> = self
            .state
            .operators
            .kernels()
            .filter_map(|(&(layer, target, source), k)| match k.as_ref() {
                Kernel::Compressed { tree, .. } => {
                    let rep = tree.report();
                    Some(CompressionRow {
                        layer,
                        target: depth_name(target).into(),
                        source: depth_name(source).into(),
                        rows: rep.rows,
                        cols: rep.cols,
                        stored_entries: rep.stored_entries,
                        ratio: rep.ratio,
                        leaves: rep.leaves,
                        max_rank: rep.rank_histogram.keys().next_back().copied().unwrap_or(0),
                    })
                }
                Kernel::Dense(_) => None,
            })
            .collect();
        rows.sort_by(|a, b| (a.layer, &a.target, &a.source).cmp(&(b.layer, &b.target, &b.source)));
        rows
    }

    pub fn info(&self, id: &str) -> SessionInfo {
        SessionInfo {
            id: id.to_string(),
            offline: self.offline_row(),
            timings: self.state.timings.iter().map(|t| TimingRow { stage: t.stage.into(), seconds: t.seconds }).collect(),
            compression: self.compression_rows(),
            warnings: self.state.warnings.clone(),
        }
    }

    /// Solves every source; a failing source is reported in its row and does
    /// not abort the others.
    pub fn solve(&self, req: &SolveRequest) -> Result<SolveResponse, ExperimentError> {
        let section = req.sources.as_ref().unwrap_or(&self.setup.config.source);
        let sources = self.setup.sources(section)?;
        let oracle = req.oracle.unwrap_or(self.setup.config.oracle);
        let gmres = self.setup.gmres_config();
        gmres.validate()?;
        let n_it = self.setup.config.preconditioner.n_it;
        let mut resp = SolveResponse { rows: Vec::new(), residuals: Vec::new(), timings: Vec::new(), fields: Vec::new() };
        for (id, src) in sources.iter().enumerate() {
            match self.state.solve(&src.field, &gmres, n_it) {
                Ok(rep) => {
                    let oracle_error = if oracle {
                        let t = Instant::now();
                        let u = direct_solve(&self.state.grid, &self.setup.model, &self.state.profile, self.state.config.form, &src.field)?;
                        resp.timings.push(SolveTimingRow { source_id: id, stage: "oracle".into(), seconds: t.elapsed().as_secs_f64() });
                        Some(interior_rel_error(&self.state.grid, &rep.field, &u))
                    } else {
                        None
                    };
                    resp.rows.push(SolveRow {
                        source_id: id,
                        iterations: rep.iterations,
                        status: status_name(rep.status).into(),
                        final_residual: rep.residuals.last().copied().unwrap_or(f64::NAN),
                        true_residual: rep.true_residual,
                        oracle_error,
                        error: String::new(),
                    });
                    resp.residuals.extend(
                        rep.residuals.iter().enumerate().map(|(iteration, &r)| ResidualRow { source_id: id, iteration, relative_residual: r }),
                    );
                    resp.timings.extend(
                        rep.timings.iter().map(|t| SolveTimingRow { source_id: id, stage: t.stage.into(), seconds: t.seconds }),
                    );
                    if req.include_fields {
                        resp.fields.push(self.setup.dump(id, &rep.field));
                    }
                }
                Err(e) => resp.rows.push(SolveRow {
                    source_id: id,
                    iterations: 0,
                    status: "failed".into(),
                    final_residual: f64::NAN,
                    true_residual: f64::NAN,
                    oracle_error: None,
                    error: format!("{}: {e}", src.label),
                }),
            }
        }
        Ok(resp)
    }

    pub fn spectrum(&self) -> Result<SpectrumResponse, ExperimentError> {
        let sp = spectrum(&self.state.split)?;
        let one = C64::new(1.0, 0.0);
        let eigenvalues = sp
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(index, z)| SpectrumRow { index, re: z.re, im: z.im, distance_to_one: (z - one).norm() })
            .collect();
        let mu = sp.mu.iter().enumerate().map(|(index, z)| MuRow { index, re: z.re, im: z.im }).collect();
        let summary = SpectrumSummary {
            dimension: sp.eigenvalues.len(),
            within_1e_8: sp.count_within(one, 1e-8),
            outside_0_2: sp.count_outside(one, 0.2),
        };
        Ok(SpectrumResponse { eigenvalues, mu, summary })
    }
}

/// Iteration table over `sweep.n x sweep.layers`. Cells that cannot run are
/// marked infeasible with the reason instead of failing the whole sweep.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepResponse, ExperimentError> {
    cfg.validate()?;
    let ns = if cfg.sweep.n.is_empty() { vec![cfg.size()] } else { cfg.sweep.n.clone() };
    let ls = if cfg.sweep.layers.is_empty() { vec![cfg.layers] } else { cfg.sweep.layers.clone() };
    let mut resp = SweepResponse { rows: Vec::new(), timings: Vec::new() };
    for &n in &ns {
        for &layers in &ls {
            let mut c = cfg.clone();
            c.grid = polartrace_api::config::GridSection { n, nx: None, nz: None };
            c.layers = layers;
            let omega = c.resolve().map(|r| r.omega).unwrap_or(f64::NAN);
            let mut row = SweepRow { n, omega, layers, sources: 0, min_iterations: None, max_iterations: None, status: "ok".into() };
            let t = Instant::now();
            let session = match Session::open(&c) {
                Ok(s) => s,
                Err(e) if e.is_config() || matches!(e, ExperimentError::Solver(SolverError::Local { .. })) => {
                    row.status = format!("infeasible: {e}");
                    resp.rows.push(row);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let offline_seconds = t.elapsed().as_secs_f64();
            let solved = session.solve(&SolveRequest { sources: None, oracle: Some(false), include_fields: false })?;
            row.sources = solved.rows.len();
            let ok: Vec<usize> = solved.rows.iter().filter(|r| r.succeeded()).map(|r| r.iterations).collect();
            row.min_iterations = ok.iter().min().copied();
            row.max_iterations = ok.iter().max().copied();
            if ok.len() < solved.rows.len() {
                row.status = format!("not converged: {} of {} sources", solved.rows.len() - ok.len(), solved.rows.len());
            }
            let gmres_seconds: f64 = solved.timings.iter().filter(|t| t.stage == "gmres").map(|t| t.seconds).sum();
            let iterations: usize = solved.rows.iter().map(|r| r.iterations).sum();
            resp.timings.push(SweepTimingRow {
                n,
                layers,
                offline_seconds,
                mean_iteration_seconds: gmres_seconds / iterations.max(1) as f64,
            });
            resp.rows.push(row);
        }
    }
    Ok(resp)
}

fn oracle_row(check: &str, case: impl Into<String>, value: f64, tolerance: f64) -> OracleRow {
    OracleRow { check: check.into(), case: case.into(), value, tolerance, pass: value <= tolerance }
}

/// Identity checks on independent 1D references and on the configured
/// medium: dense kernels for the exact identities, then the configured
/// compression for the end-to-end comparison with a direct solve.
pub fn oracle_check(cfg: &RunConfig) -> Result<OracleResponse, ExperimentError> {
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        for symmetric in [true, false] {
            let tri = checks::random_tridiagonal(32, seed, symmetric);
            let v = checks::tridiagonal_inverse_defect(&tri).map_err(|e| ExperimentError::Input(e.to_string()))?;
            let case = format!("n=32 seed={seed} {}", if symmetric { "symmetric" } else { "general" });
            rows.push(oracle_row("tridiagonal_inverse", case, v, 1e-12));
        }
    }
    for symmetric in [true, false] {
        let tri = checks::random_tridiagonal(32, 11, symmetric);
        let (r, j) = checks::rank_one_defects(&tri).map_err(|e| ExperimentError::Input(e.to_string()))?;
        let case = format!("n=32 {}", if symmetric { "symmetric" } else { "general" });
        rows.push(oracle_row("rank_one_reproduction", case.clone(), r, 1e-12));
        rows.push(oracle_row("rank_one_jump", case, j, 1e-12));
    }
    let (inside, outside) = checks::grf_1d_defects(80, 40.0).map_err(|e| ExperimentError::Input(e.to_string()))?;
    rows.push(oracle_row("grf_1d_inside", "n=80 omega=40", inside, 1e-12));
    rows.push(oracle_row("grf_1d_outside", "n=80 omega=40", outside, 1e-12));

    let mut dense_cfg = cfg.clone();
    dense_cfg.plr.enabled = false;
    let dense = Session::open(&dense_cfg)?;
    let sources = dense.setup.sources(&cfg.source)?;
    let ops = &dense.state.operators;
    for k in 0..ops.interfaces() {
        let d = checks::extrapolator_defects(ops, k).map_err(|source| SolverError::Trace { stage: "check", source })?;
        let case = format!("interface {k}");
        rows.push(oracle_row("extrapolator_up_reproduction", case.clone(), d.up_reproduction, 1e-10));
        rows.push(oracle_row("extrapolator_up_jump", case.clone(), d.up_jump, 1e-10));
        rows.push(oracle_row("extrapolator_down_reproduction", case.clone(), d.down_reproduction, 1e-10));
        rows.push(oracle_row("extrapolator_down_jump", case, d.down_jump, 1e-10));
    }
    let gmres = dense.setup.gmres_config();
    let n_it = cfg.preconditioner.n_it;
    for (id, src) in sources.iter().enumerate() {
        let u = direct_solve(&dense.state.grid, &dense.setup.model, &dense.state.profile, dense.state.config.form, &src.field)?;
        let t = checks::trace_defects(&dense.state, &src.field, &u)?;
        let case = format!("source {id}");
        rows.push(oracle_row("m_residual_exact_traces", case.clone(), t.m_exact, 1e-9));
        rows.push(oracle_row("m0_residual_exact_traces", case.clone(), t.m0_exact, 1e-9));
        rows.push(oracle_row("m0_residual_of_m_solution", case.clone(), t.m0_of_m_solution, 1e-9));
        rows.push(oracle_row("reconstruction_from_exact_traces", case.clone(), t.reconstruction, 1e-9));
        let (e, _) = checks::equivalence_error(&dense.state, &dense.setup.model, &src.field, &gmres, n_it)?;
        rows.push(oracle_row("equivalence_dense", case, e, 1e-5));
    }
    if cfg.plr.enabled {
        drop(dense);
        let plr = Session::open(cfg)?;
        for (id, src) in sources.iter().enumerate() {
            let (e, _) = checks::equivalence_error(&plr.state, &plr.setup.model, &src.field, &gmres, n_it)?;
            rows.push(oracle_row("equivalence_compressed", format!("source {id}"), e, 1e-5));
        }
    }
    Ok(OracleResponse { rows })
}
