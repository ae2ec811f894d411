//! Identity measurements shared by the oracle-check command and the test
//! suites. Every function returns a relative defect; callers own tolerances.

use crate::dense::{self, frobenius, norm2};
use crate::grid::SquaredSlownessModel;
use crate::local_solver::Depth;
use crate::oracle::{self, Tridiag1D, Window1D};
use crate::solver::{direct_solve, interior_rel_error, GmresConfig, OfflineState, SolverError, Spectrum};
use crate::trace_system::{RhsKind, TraceError, TraceOperators};
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    let s = frobenius(b.view());
    let d = frobenius((a - b).view());
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

/// Random diagonally dominated complex tridiagonal matrix.
pub fn random_tridiagonal(n: usize, seed: u64, symmetric: bool) -> Tridiag1D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = |s: f64| C64::new(rng.random_range(-s..s), rng.random_range(-s..s));
    let diag: Vec<C64> = (0..n).map(|_| C64::new(3.0, 0.0) + c(1.0)).collect();
    let off: Vec<C64> = (0..n.saturating_sub(1)).map(|_| c(1.0)).collect();
    if symmetric {
        Tridiag1D::symmetric(diag, off).expect("consistent lengths")
    } else {
        let sup = (0..n.saturating_sub(1)).map(|_| c(1.0)).collect();
        Tridiag1D::new(off, diag, sup).expect("consistent lengths")
    }
}

/// Max entrywise gap between the minor-recurrence inverse and an LU inverse,
/// relative to the largest inverse entry.
pub fn tridiagonal_inverse_defect(tri: &Tridiag1D) -> Result<f64, oracle::OracleError> {
    let n = tri.len();
    let formula = oracle::dense_inverse(tri)?;
    let dense = Array2::from_shape_fn((n, n), |(i, j)| tri.to_dense()[i][j]);
    let lu = dense::invert(dense.view()).map_err(|_| oracle::OracleError::Singular)?.inverse;
    let scale = dense::max_abs(lu.iter().copied());
    let gap = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (formula[i][j] - lu[[i, j]]).norm()).fold(0.0, f64::max);
    Ok(gap / scale)
}

/// Rank-one structure of a 1D inverse `G`: with `e_i = G(i,i+1) / G(i+1,i+1)`,
/// row `i` equals `e_i` times row `i+1` right of the diagonal, and the
/// diagonal jumps by `e_i G(i+1,i) - G(i,i) = e_i / c_i`. Returns both
/// defects relative to the largest inverse entry.
pub fn rank_one_defects(tri: &Tridiag1D) -> Result<(f64, f64), oracle::OracleError> {
    let n = tri.len();
    let inv = oracle::dense_inverse(tri)?;
    let g = |i: usize, j: usize| inv[i - 1][j - 1];
    let scale = inv.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
    let (mut reproduction, mut jump): (f64, f64) = (0.0, 0.0);
    for i in 1..n {
        let e = g(i, i + 1) / g(i + 1, i + 1);
        for k in i + 1..=n {
            reproduction = reproduction.max((e * g(i + 1, k) - g(i, k)).norm());
        }
        jump = jump.max((e * g(i + 1, i) - g(i, i) - e / tri.c(i)).norm());
    }
    Ok((reproduction / scale, jump / scale))
}

/// 1D representation formula on a window of a PML Helmholtz line: defect
/// inside the window against the direct solution, and the largest value
/// outside it, both relative to the solution's max norm.
pub fn grf_1d_defects(n: usize, omega: f64) -> Result<(f64, f64), oracle::OracleError> {
    let np = 6;
    let h = 1.0 / (n as f64 + 1.0);
    let m: Vec<f64> = (0..n + 2 * np).map(|i| 1.0 / (1.0 + 0.2 * (i as f64 * h)).powi(2)).collect();
    let tri = oracle::assemble_1d(n, h, np, &m, omega, 40.0, 0.0, false);
    let ne = tri.len();
    let mut f = vec![C64::default(); ne];
    f[ne / 3] = C64::new(1.0, 0.0);
    f[2 * ne / 3] = C64::new(0.0, -2.0);
    let u = oracle::solve_1d(&tri, &f)?;
    let (first, last) = (ne / 4, 3 * ne / 4);
    let w = Window1D { first, last, u0: u[first - 2], u1: u[first - 1], un: u[last - 1], un1: u[last] };
    let v = oracle::grf_1d(&tri, &f, w)?;
    let scale = u.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let inside = (first..=last).map(|k| (v[k - 1] - u[k - 1]).norm()).fold(0.0, f64::max) / scale;
    let outside = (1..=ne).filter(|k| *k < first || *k > last).map(|k| v[k - 1].norm()).fold(0.0, f64::max) / scale;
    Ok((inside, outside))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrapolatorDefects {
    /// `E_up K_{1j} = K_{0j}` over the available `j >= 1`.
    pub up_reproduction: f64,
    /// `K_00 - E_up = E_up K_10`.
    pub up_jump: f64,
    /// `E_down K_{nj} = K_{n+1,j}` over the available `j <= n`.
    pub down_reproduction: f64,
    /// `K_{n+1,n+1} - E_down = E_down K_{n,n+1}`.
    pub down_jump: f64,
}

impl ExtrapolatorDefects {
    pub fn max(&self) -> f64 {
        [self.up_reproduction, self.up_jump, self.down_reproduction, self.down_jump].into_iter().fold(0.0, f64::max)
    }
}

/// Extrapolator identities at interface `k` (uses dense kernels).
pub fn extrapolator_defects(ops: &TraceOperators, k: usize) -> Result<ExtrapolatorDefects, TraceError> {
    let kern = |l, t, s| ops.kernel(l, t, s).map(|k| k.to_dense());
    let up = ops.extrapolator_up(k)?.op;
    let below = k + 1;
    let mut up_reproduction: f64 = 0.0;
    for j in [Depth::One, Depth::N, Depth::NPlus1] {
        if let (Ok(k1), Ok(k0)) = (kern(below, Depth::One, j), kern(below, Depth::Zero, j)) {
            up_reproduction = up_reproduction.max(rel(&up.dot(&k1), &k0));
        }
    }
    let k00 = kern(below, Depth::Zero, Depth::Zero)?;
    let k10 = kern(below, Depth::One, Depth::Zero)?;
    let up_jump = rel(&(&k00 - &up), &up.dot(&k10));

    let down = ops.extrapolator_down(k)?.op;
    let mut down_reproduction: f64 = 0.0;
    for j in [Depth::Zero, Depth::One, Depth::N] {
        if let (Ok(kn), Ok(kn1)) = (kern(k, Depth::N, j), kern(k, Depth::NPlus1, j)) {
            down_reproduction = down_reproduction.max(rel(&down.dot(&kn), &kn1));
        }
    }
    let knn1 = kern(k, Depth::NPlus1, Depth::NPlus1)?;
    let kn_n1 = kern(k, Depth::N, Depth::NPlus1)?;
    let down_jump = rel(&(&knn1 - &down), &down.dot(&kn_n1));
    Ok(ExtrapolatorDefects { up_reproduction, up_jump, down_reproduction, down_jump })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceDefects {
    /// `||M u + f|| / ||f||` at the exact interface traces.
    pub m_exact: f64,
    /// `||M0 u + f0|| / ||f0||` at the exact traces: the representation
    /// formula one row outside every layer.
    pub m0_exact: f64,
    /// `||M0 v + f0|| / ||f0||` where `v` solves `M v = -f` densely.
    pub m0_of_m_solution: f64,
    /// Gap between the dense `M` solution and the exact traces.
    pub m_solution_vs_exact: f64,
    /// Volume reconstruction from exact traces against the direct field.
    pub reconstruction: f64,
}

/// Interface identities for the direct solution of one source field.
pub fn trace_defects(state: &OfflineState, f: &Array2<C64>, u_direct: &Array2<C64>) -> Result<TraceDefects, SolverError> {
    let map = |source| SolverError::Trace { stage: "check", source };
    let ops = &state.operators;
    let tr = state.sample_traces(u_direct);
    let newton = state.newton_traces(f)?;
    let rhs = ops.assemble_rhs(&newton, RhsKind::M).map_err(map)?;
    let rhs0 = ops.assemble_rhs(&newton, RhsKind::M0).map_err(map)?;
    let m = ops.assemble_m().map_err(map)?;
    let m0 = ops.assemble_m0().map_err(map)?;
    let resid = |a: &Array1<C64>, b: &Array1<C64>| {
        let s = norm2(b.view());
        norm2((a + b).view()) / if s == 0.0 { 1.0 } else { s }
    };
    let m_exact = resid(&m.matvec(tr.view()), &rhs);
    let m0_exact = resid(&m0.matvec(tr.view()), &rhs0);
    let neg = rhs.mapv(|z| -z).insert_axis(ndarray::Axis(1));
    let (v, _) = dense::solve(m.to_dense().view(), neg.view()).map_err(|e| SolverError::Eigen(e.to_string()))?;
    let v = v.column(0).to_owned();
    let m0_of_m_solution = resid(&m0.matvec(v.view()), &rhs0);
    let m_solution_vs_exact = dense::rel_diff1(v.view(), tr.view());
    let rec = state.reconstruct(f, tr.view())?;
    let reconstruction = interior_rel_error(&state.grid, &rec, u_direct);
    Ok(TraceDefects { m_exact, m0_exact, m0_of_m_solution, m_solution_vs_exact, reconstruction })
}

/// End-to-end relative error of the layered solver against a global direct
/// solve, with the GMRES iteration count.
pub fn equivalence_error(
    state: &OfflineState,
    model: &SquaredSlownessModel,
    f: &Array2<C64>,
    gmres: &GmresConfig,
    n_it: usize,
) -> Result<(f64, usize), SolverError> {
    let rep = state.solve(f, gmres, n_it)?;
    let u = direct_solve(&state.grid, model, &state.profile, state.config.form, f)?;
    Ok((interior_rel_error(&state.grid, &rep.field, &u), rep.iterations))
}

/// Splits a once-swept spectrum into the eigenvalues within `unit_radius` of
/// one and the rest; returns the count of the former and the largest distance
/// from any other eigenvalue to the nearest `1 +- sqrt(mu_i)`.
pub fn spectral_pairing(sp: &Spectrum, unit_radius: f64) -> (usize, f64) {
    let one = C64::new(1.0, 0.0);
    let roots: Vec<C64> = sp.mu.iter().map(|m| m.sqrt()).collect();
    let mut at_one = 0;
    let mut worst: f64 = 0.0;
    for z in &sp.eigenvalues {
        if (z - one).norm() <= unit_radius {
            at_one += 1;
            continue;
        }
        let d = roots.iter().map(|r| (z - one - r).norm().min((z - one + r).norm())).fold(f64::INFINITY, f64::min);
        worst = worst.max(d);
    }
    (at_one, worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_oracle_agrees() {
        for seed in 0..4 {
            for sym in [true, false] {
                let t = random_tridiagonal(24, seed, sym);
                assert!(tridiagonal_inverse_defect(&t).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn rank_one_structure() {
        for sym in [true, false] {
            let (r, j) = rank_one_defects(&random_tridiagonal(20, 5, sym)).unwrap();
            assert!(r < 1e-12 && j < 1e-12, "{r} {j}");
        }
    }

    #[test]
    fn grf_line_identities() {
        let (inside, outside) = grf_1d_defects(60, 30.0).unwrap();
        assert!(inside < 1e-12 && outside < 1e-12, "{inside} {outside}");
    }
}
