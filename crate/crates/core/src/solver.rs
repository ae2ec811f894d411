//! Offline and online pipelines: local factorizations and Green's blocks,
//! the polarized system, GMRES with the Gauss-Seidel sweep preconditioner,
//! recombination, volume reconstruction and spectrum diagnostics.

use crate::dense::norm2;
use crate::grid::{assemble_global, assemble_local, ComplexGrid2D, Form, GridError, PmlProfile, SquaredSlownessModel};
use crate::local_solver::{
    depths_for_layer, extract_interface_greens, factorize, newton_trace, reconstruct_volume, InterfaceGreens,
    LayerTraces, LocalFactorization, LocalSolveError, NewtonTrace,
};
use crate::partition::{LayerPartition, PartitionError};
use crate::plr::CompressionReport;
use crate::trace_system::{trace_block, PlrSettings, PolarizedSystem, RhsKind, Split, TraceError, TraceOperators, Variant};
use ndarray::{s, Array1, Array2, ArrayView1};
use ndarray_linalg::EigVals;
use num_complex::Complex64 as C64;
use std::time::Instant;
use thiserror::Error;

/// Largest polarized system the spectrum dump will densify.
pub const SPECTRUM_MAX_DIM: usize = 6000;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("stage {stage}: {source}")]
    Grid { stage: &'static str, source: GridError },
    #[error("stage {stage}: {source}")]
    Partition { stage: &'static str, source: PartitionError },
    #[error("stage {stage}, layer {layer}: {source}")]
    Local { stage: &'static str, layer: usize, source: LocalSolveError },
    #[error("stage {stage}: {source}")]
    Trace { stage: &'static str, source: TraceError },
    #[error("GMRES produced a non-finite value at iteration {0}")]
    NotFinite(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("system of dimension {dim} exceeds the dense spectrum limit {limit}")]
    TooLarge { dim: usize, limit: usize },
    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),
    #[error("source field has shape {got:?}, expected {want:?}")]
    SourceShape { got: (usize, usize), want: (usize, usize) },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-7, max_iter: 100 }
    }
}

impl GmresConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(SolverError::Config(format!("rel_tol must lie in (0, 1), got {}", self.rel_tol)));
        }
        if self.max_iter == 0 {
            return Err(SolverError::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreconditionerConfig {
    pub n_it: usize,
    pub variant: Variant,
}

impl Default for PreconditionerConfig {
    fn default() -> Self {
        Self { n_it: 2, variant: Variant::Jump }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmresStatus {
    Converged,
    /// The Krylov space became invariant; the iterate is exact up to rounding.
    Breakdown,
    MaxIterations,
    Stagnated,
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Array1<C64>,
    pub iterations: usize,
    /// Relative preconditioned residual after each iteration, starting with 1.
    pub residuals: Vec<f64>,
    pub status: GmresStatus,
}

fn dot(a: ArrayView1<C64>, b: ArrayView1<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Left-preconditioned GMRES without restart, modified Gram-Schmidt and
/// Givens rotations. Solves `M^{-1} A x = M^{-1} b` from `x0 = 0`.
pub fn gmres(
    apply_a: impl Fn(ArrayView1<C64>) -> Array1<C64>,
    apply_minv: impl Fn(ArrayView1<C64>) -> Array1<C64>,
    b: ArrayView1<C64>,
    cfg: &GmresConfig,
) -> Result<GmresOutcome, SolverError> {
    cfg.validate()?;
    let n = b.len();
    let r0 = apply_minv(b);
    let beta = norm2(r0.view());
    if !beta.is_finite() {
        return Err(SolverError::NotFinite(0));
    }
    if beta == 0.0 {
        return Ok(GmresOutcome { x: Array1::zeros(n), iterations: 0, residuals: vec![0.0], status: GmresStatus::Converged });
    }
    let mut basis: Vec<Array1<C64>> = vec![r0 / C64::new(beta, 0.0)];
    let mut hess: Vec<Vec<C64>> = Vec::new();
    let mut rot: Vec<(f64, C64)> = Vec::new();
    let mut g = vec![C64::new(beta, 0.0)];
    let mut residuals = vec![1.0];
    let mut status = GmresStatus::MaxIterations;

    for j in 0..cfg.max_iter {
        let mut w = apply_minv(apply_a(basis[j].view()).view());
        let mut col = vec![C64::default(); j + 2];
        for (i, v) in basis.iter().enumerate() {
            col[i] = dot(v.view(), w.view());
            w.scaled_add(-col[i], v);
        }
        let wn = norm2(w.view());
        if !wn.is_finite() {
            return Err(SolverError::NotFinite(j + 1));
        }
        col[j + 1] = C64::new(wn, 0.0);
        for (i, &(c, s)) in rot.iter().enumerate() {
            let (x, y) = (col[i], col[i + 1]);
            col[i] = c * x + s * y;
            col[i + 1] = -s.conj() * x + c * y;
        }
        let (a, bb) = (col[j], col[j + 1]);
        let d = (a.norm_sqr() + bb.norm_sqr()).sqrt();
        let (c, s) = if a.norm() == 0.0 { (0.0, C64::new(1.0, 0.0)) } else { (a.norm() / d, (a / a.norm()) * bb.conj() / d) };
        col[j] = c * a + s * bb;
        col[j + 1] = C64::default();
        rot.push((c, s));
        g.push(-s.conj() * g[j]);
        g[j] *= c;
        hess.push(col);
        let rel = g[j + 1].norm() / beta;
        residuals.push(rel);

        let breakdown = wn <= 1e-14 * beta;
        if rel <= cfg.rel_tol {
            status = GmresStatus::Converged;
        } else if breakdown {
            status = GmresStatus::Breakdown;
        } else if j >= 10 && rel > (1.0 - 1e-3) * residuals[j + 1 - 10] {
            status = GmresStatus::Stagnated;
        }
        if status != GmresStatus::MaxIterations || j + 1 == cfg.max_iter {
            break;
        }
        basis.push(w / C64::new(wn, 0.0));
    }

    // back substitution on the rotated Hessenberg matrix
    let k = hess.len();
    let mut y = vec![C64::default(); k];
    for i in (0..k).rev() {
        let mut acc = g[i];
        for (jj, yj) in y.iter().enumerate().skip(i + 1) {
            acc -= hess[jj][i] * yj;
        }
        y[i] = acc / hess[i][i];
    }
    let mut x = Array1::zeros(n);
    for (v, yi) in basis.iter().zip(&y) {
        x.scaled_add(*yi, v);
    }
    Ok(GmresOutcome { x, iterations: k, residuals, status })
}

/// One Gauss-Seidel sweep `D^{-1} (P b - R u)`.
pub fn gs_sweep(split: &Split, permuted_rhs: ArrayView1<C64>, u: ArrayView1<C64>) -> Array1<C64> {
    let y = &permuted_rhs - &split.apply_r(u);
    split.solve_d(y.view())
}

/// `n_it` sweeps from zero; a fixed linear map of `r`.
pub fn precondition(split: &Split, n_it: usize, r: ArrayView1<C64>) -> Array1<C64> {
    let pr = split.permute(r);
    let mut u = split.solve_d(pr.view());
    for _ in 1..n_it {
        u = gs_sweep(split, pr.view(), u.view());
    }
    u
}

#[derive(Debug, Clone)]
pub struct OfflineConfig {
    pub omega: f64,
    pub pml_strength: f64,
    pub form: Form,
    pub compression: Option<PlrSettings>,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTime {
    pub stage: &'static str,
    pub seconds: f64,
}

fn timed<T>(times: &mut Vec<StageTime>, stage: &'static str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    times.push(StageTime { stage, seconds: t.elapsed().as_secs_f64() });
    out
}

/// Everything that depends only on the operator.
pub struct OfflineState {
    pub grid: ComplexGrid2D,
    pub partition: LayerPartition,
    pub profile: PmlProfile,
    pub config: OfflineConfig,
    pub factorizations: Vec<LocalFactorization>,
    pub operators: TraceOperators,
    pub system: PolarizedSystem,
    pub split: Split,
    pub compression: Vec<CompressionReport>,
    pub timings: Vec<StageTime>,
    pub warnings: Vec<String>,
}

pub fn run_offline(
    grid: &ComplexGrid2D,
    model: &SquaredSlownessModel,
    partition: &LayerPartition,
    config: &OfflineConfig,
) -> Result<OfflineState, SolverError> {
    let layers = partition.layer_count();
    if layers < 2 {
        return Err(SolverError::Config(format!("the layered solver needs at least 2 layers, got {layers}")));
    }
    if partition.nz() != grid.nz {
        return Err(SolverError::Config(format!("partition covers {} rows, grid has {}", partition.nz(), grid.nz)));
    }
    model.check_shape(grid).map_err(|source| SolverError::Grid { stage: "partition", source })?;
    let profile =
        PmlProfile::new(grid, config.pml_strength, config.omega).map_err(|source| SolverError::Grid { stage: "partition", source })?;
    let mut timings = Vec::new();
    let mut factorizations = Vec::with_capacity(layers);
    let mut greens: Vec<InterfaceGreens> = Vec::with_capacity(layers);
    let (mut t_fact, mut t_green) = (0.0, 0.0);
    for l in 0..layers {
        let t = Instant::now();
        let local_m =
            partition.extended_slowness(grid, model, l).map_err(|source| SolverError::Partition { stage: "factorize", source })?;
        let op = assemble_local(grid, &local_m, partition.thickness(l), &profile, config.form)
            .map_err(|source| SolverError::Grid { stage: "factorize", source })?;
        let local = grid.with_depth(partition.thickness(l)).map_err(|source| SolverError::Grid { stage: "factorize", source })?;
        let fact = factorize(&op, &local, l).map_err(|source| SolverError::Local { stage: "factorize", layer: l, source })?;
        t_fact += t.elapsed().as_secs_f64();
        let t = Instant::now();
        greens.push(extract_interface_greens(&fact, depths_for_layer(l, layers)));
        t_green += t.elapsed().as_secs_f64();
        factorizations.push(fact);
    }
    timings.push(StageTime { stage: "factorize", seconds: t_fact });
    timings.push(StageTime { stage: "extract_greens", seconds: t_green });

    let operators = timed(&mut timings, "compress", || TraceOperators::new(&greens, config.compression))
        .map_err(|source| SolverError::Trace { stage: "compress", source })?;
    drop(greens);
    let compression = operators
        .kernels()
        .filter_map(|(_, k)| match k.as_ref() {
            crate::trace_system::Kernel::Compressed { tree, .. } => Some(tree.report()),
            _ => None,
        })
        .collect();
    let system = timed(&mut timings, "assemble", || operators.assemble_polarized(config.variant))
        .map_err(|source| SolverError::Trace { stage: "assemble", source })?;
    let split = system.split().map_err(|source| SolverError::Trace { stage: "assemble", source })?;
    let mut warnings = Vec::new();
    for (k, (down, up)) in system.extrapolators.iter().enumerate() {
        for (name, e) in [("down", down), ("up", up)] {
            if e.ill_conditioned() {
                warnings.push(format!("interface {k}: {name}-going extrapolator condition estimate {:.3e}", 1.0 / e.rcond));
            }
        }
    }
    Ok(OfflineState {
        grid: *grid,
        partition: partition.clone(),
        profile,
        config: config.clone(),
        factorizations,
        operators,
        system,
        split,
        compression,
        timings,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub status: GmresStatus,
    pub residuals: Vec<f64>,
    /// `||b - A x|| / ||b||` of the unpreconditioned polarized system.
    pub true_residual: f64,
    /// Recombined interface traces `u = u_down + u_up`.
    pub traces: Array1<C64>,
    /// Global field on the extended grid; z-PML rows are zero.
    pub field: Array2<C64>,
    pub timings: Vec<StageTime>,
}

impl OfflineState {
    pub fn layers(&self) -> usize {
        self.partition.layer_count()
    }

    pub fn apply_preconditioner(&self, n_it: usize, r: ArrayView1<C64>) -> Array1<C64> {
        precondition(&self.split, n_it, r)
    }

    pub fn newton_traces(&self, f: &Array2<C64>) -> Result<Vec<NewtonTrace>, SolverError> {
        (0..self.layers())
            .map(|l| {
                let fl = self.partition.restrict_source(&self.grid, f, l);
                newton_trace(&self.factorizations[l], fl.view()).map_err(|source| SolverError::Local { stage: "newton", layer: l, source })
            })
            .collect()
    }

    /// Volume field from interface traces, layer by layer.
    pub fn reconstruct(&self, f: &Array2<C64>, traces: ArrayView1<C64>) -> Result<Array2<C64>, SolverError> {
        let n = self.grid.nx_ext();
        let zero = Array1::<C64>::zeros(n);
        let layers = self.layers();
        let mut field = Array2::zeros((self.grid.nz_ext(), n));
        for l in 0..layers {
            let (u0, u1) = if l > 0 {
                (trace_block(traces, 2 * (l - 1), n), trace_block(traces, 2 * (l - 1) + 1, n))
            } else {
                (zero.view(), zero.view())
            };
            let (un, un1) = if l + 1 < layers {
                (trace_block(traces, 2 * l, n), trace_block(traces, 2 * l + 1, n))
            } else {
                (zero.view(), zero.view())
            };
            let fl = self.partition.restrict_source(&self.grid, f, l);
            let v = reconstruct_volume(&self.factorizations[l], fl.view(), LayerTraces { u0, u1, un, un1 })
                .map_err(|source| SolverError::Local { stage: "reconstruct", layer: l, source })?;
            field += &self.partition.pad_to_global(&self.grid, &v, l);
        }
        Ok(field)
    }

    /// Right-hand side of the polarized system for a global source field.
    pub fn polarized_rhs(&self, newton: &[NewtonTrace]) -> Result<Array1<C64>, SolverError> {
        let map = |source| SolverError::Trace { stage: "rhs", source };
        let f = self.operators.assemble_rhs(newton, RhsKind::M).map_err(map)?;
        let f0 = self.operators.assemble_rhs(newton, RhsKind::M0).map_err(map)?;
        self.system.rhs(f.view(), f0.view()).map_err(map)
    }

    /// Online stage for one source field on the extended grid.
    pub fn solve(&self, f: &Array2<C64>, gmres_cfg: &GmresConfig, n_it: usize) -> Result<SolveReport, SolverError> {
        let want = (self.grid.nz_ext(), self.grid.nx_ext());
        if f.dim() != want {
            return Err(SolverError::SourceShape { got: f.dim(), want });
        }
        if n_it == 0 {
            return Err(SolverError::Config("n_it must be at least 1".into()));
        }
        let mut timings = Vec::new();
        let newton = timed(&mut timings, "newton", || self.newton_traces(f))?;
        let b = timed(&mut timings, "rhs", || self.polarized_rhs(&newton))?;
        let a = |x: ArrayView1<C64>| self.system.matrix.matvec(x);
        let out = timed(&mut timings, "gmres", || gmres(a, |r| self.apply_preconditioner(n_it, r), b.view(), gmres_cfg))?;
        let bn = norm2(b.view());
        let true_residual = if bn == 0.0 { 0.0 } else { norm2((&b - &a(out.x.view())).view()) / bn };
        let traces = self.system.recombine(out.x.view());
        let field = timed(&mut timings, "reconstruct", || self.reconstruct(f, traces.view()))?;
        Ok(SolveReport {
            iterations: out.iterations,
            status: out.status,
            residuals: out.residuals,
            true_residual,
            traces,
            field,
            timings,
        })
    }

    /// Interface traces of a global field, stacked like the trace system.
    pub fn sample_traces(&self, u: &Array2<C64>) -> Array1<C64> {
        let n = self.grid.nx_ext();
        let mut out = Array1::zeros(self.operators.trace_len());
        for k in 0..self.layers() - 1 {
            let top = self.partition.offset(k + 1) as isize;
            out.slice_mut(s![2 * k * n..(2 * k + 1) * n]).assign(&u.row(self.grid.depth_row(top)));
            out.slice_mut(s![(2 * k + 1) * n..(2 * k + 2) * n]).assign(&u.row(self.grid.depth_row(top + 1)));
        }
        out
    }
}

/// Reference solution by one direct factorization of the global operator.
pub fn direct_solve(
    grid: &ComplexGrid2D,
    model: &SquaredSlownessModel,
    profile: &PmlProfile,
    form: Form,
    f: &Array2<C64>,
) -> Result<Array2<C64>, SolverError> {
    let op = assemble_global(grid, model, profile, form).map_err(|source| SolverError::Grid { stage: "direct", source })?;
    let fact = factorize(&op, grid, usize::MAX).map_err(|source| SolverError::Local { stage: "direct", layer: usize::MAX, source })?;
    fact.solve_field(f.view()).map_err(|source| SolverError::Local { stage: "direct", layer: usize::MAX, source })
}

/// Relative l2 difference over the physical depth rows `1..=nz`.
pub fn interior_rel_error(grid: &ComplexGrid2D, u: &Array2<C64>, reference: &Array2<C64>) -> f64 {
    let rows = s![grid.depth_row(1)..=grid.depth_row(grid.nz as isize), ..];
    let d: f64 = (&u.slice(rows) - &reference.slice(rows)).iter().map(|z| z.norm_sqr()).sum();
    let r: f64 = reference.slice(rows).iter().map(|z| z.norm_sqr()).sum();
    if r == 0.0 {
        d.sqrt()
    } else {
        (d / r).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Eigenvalues of `D^{-1} P A` (one sweep).
    pub eigenvalues: Vec<C64>,
    /// Eigenvalues of the double-reflection operator `D_up^{-1} L D_down^{-1} U`.
    pub mu: Vec<C64>,
}

impl Spectrum {
    pub fn count_within(&self, center: C64, radius: f64) -> usize {
        self.eigenvalues.iter().filter(|z| (**z - center).norm() <= radius).count()
    }

    pub fn count_outside(&self, center: C64, radius: f64) -> usize {
        self.eigenvalues.len() - self.count_within(center, radius)
    }
}

fn columns_of(n: usize, f: impl Fn(ArrayView1<C64>) -> Array1<C64>) -> Array2<C64> {
    let mut out = Array2::zeros((n, n));
    let mut e = Array1::<C64>::zeros(n);
    for j in 0..n {
        e[j] = C64::new(1.0, 0.0);
        out.column_mut(j).assign(&f(e.view()));
        e[j] = C64::default();
    }
    out
}

/// Dense spectrum of the once-swept preconditioned system.
pub fn spectrum(split: &Split) -> Result<Spectrum, SolverError> {
    let h = split.half_len();
    let dim = 2 * h;
    if dim > SPECTRUM_MAX_DIM {
        return Err(SolverError::TooLarge { dim, limit: SPECTRUM_MAX_DIM });
    }
    let pre = columns_of(dim, |e| {
        let mut y = split.solve_d(split.apply_r(e).view());
        y += &e;
        y
    });
    let eigenvalues = pre.eigvals().map_err(|e| SolverError::Eigen(e.to_string()))?.to_vec();
    let reflect = columns_of(h, |e| {
        let x = split.d_down.triangular_solve(split.upper.matvec(e).view(), true);
        split.d_up.triangular_solve(split.lower.matvec(x.view()).view(), false)
    });
    let mu = reflect.eigvals().map_err(|e| SolverError::Eigen(e.to_string()))?.to_vec();
    Ok(Spectrum { eigenvalues, mu })
}
