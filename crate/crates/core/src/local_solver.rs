//! Direct factorization of layer operators, interface Green's blocks, Newton
//! traces and volume reconstruction.
//!
//! Operators on the extended grid are block tridiagonal when unknowns are
//! grouped by depth row: a tridiagonal block per row, diagonal couplings to
//! the rows above and below. The factorization is block LU by Schur
//! complements, `S_0 = D_0`, `S_r = D_r - Lo_r S_{r-1}^{-1} Up_{r-1}`, with
//! every `S_r^{-1}` stored so that solves are matrix products.

use crate::dense;
use crate::grid::{ComplexGrid2D, GridError, SparseOperator};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalSolveError {
    #[error("layer {layer}: numerically singular pivot {magnitude:.3e} (relative {relative:.3e}) at storage row {row}")]
    SingularPivot { layer: usize, row: usize, magnitude: f64, relative: f64 },
    #[error("operator row {0} is not block tridiagonal with diagonal depth couplings")]
    UnsupportedPattern(usize),
    #[error("operator has {got} unknowns, grid expects {want}")]
    GridMismatch { got: usize, want: usize },
    #[error("layer {layer}: Green's block G({target:?}, {from:?}) was not extracted")]
    MissingBlock { layer: usize, target: Depth, from: Depth },
    #[error("field has shape {got:?}, expected {want:?}")]
    Shape { got: (usize, usize), want: (usize, usize) },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Relative pivot size below which a Schur complement is declared singular.
pub const PIVOT_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct LocalFactorization {
    pub layer: usize,
    pub grid: ComplexGrid2D,
    lower: Vec<Array1<C64>>,
    upper: Vec<Array1<C64>>,
    schur_inv: Vec<Array2<C64>>,
    /// Smallest relative LU pivot seen over all Schur complements.
    pub min_relative_pivot: f64,
}

pub fn factorize(op: &SparseOperator, grid: &ComplexGrid2D, layer: usize) -> Result<LocalFactorization, LocalSolveError> {
    let nxe = grid.nx_ext();
    let rows = grid.nz_ext();
    if op.dim() != grid.len() || op.nx_ext != nxe {
        return Err(LocalSolveError::GridMismatch { got: op.dim(), want: grid.len() });
    }
    let mut lower = Vec::with_capacity(rows);
    let mut upper = Vec::with_capacity(rows);
    let mut schur_inv: Vec<Array2<C64>> = Vec::with_capacity(rows);
    let mut min_relative_pivot = f64::INFINITY;
    for r in 0..rows {
        let mut d = Array2::<C64>::zeros((nxe, nxe));
        let mut lo = Array1::<C64>::zeros(nxe);
        let mut up = Array1::<C64>::zeros(nxe);
        for i in 0..nxe {
            let gi = r * nxe + i;
            for (c, v) in op.row(gi) {
                let (rc, ic) = (c / nxe, c % nxe);
                if rc == r {
                    d[[i, ic]] = v;
                } else if rc + 1 == r && ic == i {
                    lo[i] = v;
                } else if rc == r + 1 && ic == i {
                    up[i] = v;
                } else {
                    return Err(LocalSolveError::UnsupportedPattern(gi));
                }
            }
        }
        if r > 0 {
            let prev = &schur_inv[r - 1];
            let up_prev: &Array1<C64> = &upper[r - 1];
            for i in 0..nxe {
                for k in 0..nxe {
                    d[[i, k]] -= lo[i] * prev[[i, k]] * up_prev[k];
                }
            }
        }
        let scale = dense::max_abs(d.iter().copied());
        // LAPACK reports exact zero pivots as errors
        let inv = dense::invert(d.view())
            .map_err(|_| LocalSolveError::SingularPivot { layer, row: r, magnitude: 0.0, relative: 0.0 })?;
        let relative = inv.min_pivot / scale.max(f64::MIN_POSITIVE);
        min_relative_pivot = min_relative_pivot.min(relative);
        if !(relative > PIVOT_FLOOR) || inv.inverse.iter().any(|z| !z.is_finite()) {
            return Err(LocalSolveError::SingularPivot { layer, row: r, magnitude: inv.min_pivot, relative });
        }
        schur_inv.push(inv.inverse);
        lower.push(lo);
        upper.push(up);
    }
    Ok(LocalFactorization { layer, grid: *grid, lower, upper, schur_inv, min_relative_pivot })
}

/// Multiplies row `i` of `m` by `d[i]`.
fn scale_rows(d: &Array1<C64>, m: &Array2<C64>) -> Array2<C64> {
    let mut out = m.clone();
    for (mut row, &s) in out.axis_iter_mut(Axis(0)).zip(d.iter()) {
        row.mapv_inplace(|z| z * s);
    }
    out
}

impl LocalFactorization {
    pub fn rows(&self) -> usize {
        self.schur_inv.len()
    }

    pub fn nx_ext(&self) -> usize {
        self.grid.nx_ext()
    }

    /// Multi-column solve with a right-hand side supported on a few depth rows.
    ///
    /// `rhs` lists `(storage row, block)` pairs, every block `nx_ext x ncols`.
    /// Returns the solution restricted to each requested target row.
    pub fn solve_rows(&self, rhs: &[(usize, Array2<C64>)], targets: &[usize]) -> Vec<Array2<C64>> {
        let rows = self.rows();
        let ncols = rhs.first().map(|(_, b)| b.ncols()).unwrap_or(0);
        let nxe = self.nx_ext();
        if rhs.is_empty() || targets.is_empty() {
            return targets.iter().map(|_| Array2::zeros((nxe, ncols))).collect();
        }
        let start = rhs.iter().map(|(r, _)| *r).min().unwrap();
        let stop = *targets.iter().min().unwrap();

        // forward: w_r = S_r^{-1} (b_r - Lo_r w_{r-1})
        let mut w: Vec<Array2<C64>> = Vec::with_capacity(rows - start);
        for r in start..rows {
            let mut y = Array2::<C64>::zeros((nxe, ncols));
            for (rr, b) in rhs {
                if *rr == r {
                    y += b;
                }
            }
            if r > start {
                y -= &scale_rows(&self.lower[r], &w[r - start - 1]);
            }
            w.push(self.schur_inv[r].dot(&y));
        }

        // backward: x_r = w_r - S_r^{-1} Up_r x_{r+1}
        let mut out: Vec<Option<Array2<C64>>> = vec![None; targets.len()];
        let mut next: Option<Array2<C64>> = None;
        for r in (stop..rows).rev() {
            let mut x = if r >= start { w[r - start].clone() } else { Array2::zeros((nxe, ncols)) };
            if let Some(xn) = &next {
                x -= &self.schur_inv[r].dot(&scale_rows(&self.upper[r], xn));
            }
            for (t, slot) in targets.iter().zip(out.iter_mut()) {
                if *t == r {
                    *slot = Some(x.clone());
                }
            }
            next = Some(x);
        }
        out.into_iter().map(|x| x.expect("target row inside operator")).collect()
    }

    /// Solves `H u = b` for a full field (`nz_ext x nx_ext`, depth rows).
    pub fn solve_field(&self, b: ArrayView2<C64>) -> Result<Array2<C64>, LocalSolveError> {
        let want = (self.rows(), self.nx_ext());
        if b.dim() != want {
            return Err(LocalSolveError::Shape { got: b.dim(), want });
        }
        let rows = self.rows();
        let mut w: Vec<Array1<C64>> = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut y = b.row(r).to_owned();
            if r > 0 {
                y -= &(&self.lower[r] * &w[r - 1]);
            }
            w.push(self.schur_inv[r].dot(&y));
        }
        let mut u = Array2::zeros(want);
        for r in (0..rows).rev() {
            let mut x = std::mem::take(&mut w[r]);
            if r + 1 < rows {
                let up = &self.upper[r] * &u.row(r + 1);
                x -= &self.schur_inv[r].dot(&up);
            }
            u.row_mut(r).assign(&x);
        }
        Ok(u)
    }

    pub fn depth_row(&self, d: Depth) -> usize {
        self.grid.depth_row(d.local(self.grid.nz))
    }
}

/// The four depth rows that carry interface data inside a layer of
/// thickness `n`: `0`, `1`, `n`, `n + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Depth {
    Zero,
    One,
    N,
    NPlus1,
}

impl Depth {
    pub const ALL: [Depth; 4] = [Depth::Zero, Depth::One, Depth::N, Depth::NPlus1];
    pub const TOP: [Depth; 2] = [Depth::Zero, Depth::One];
    pub const BOTTOM: [Depth; 2] = [Depth::N, Depth::NPlus1];

    pub fn local(self, n: usize) -> isize {
        match self {
            Depth::Zero => 0,
            Depth::One => 1,
            Depth::N => n as isize,
            Depth::NPlus1 => n as isize + 1,
        }
    }

    pub fn slot(self) -> usize {
        self as usize
    }
}

/// Dense Green's blocks `G(z_j, z_k)` between interface depth rows of one
/// layer. Each block already includes the quadrature weight `h`, i.e. it is
/// `h` times the pointwise Green's function, `(H^{-1})_{jk} / h`.
#[derive(Debug, Clone)]
pub struct InterfaceGreens {
    pub layer: usize,
    pub thickness: usize,
    pub h: f64,
    blocks: [[Option<Array2<C64>>; 4]; 4],
}

impl InterfaceGreens {
    pub fn get(&self, target: Depth, source: Depth) -> Result<&Array2<C64>, LocalSolveError> {
        self.blocks[target.slot()][source.slot()]
            .as_ref()
            .ok_or(LocalSolveError::MissingBlock { layer: self.layer, target, from: source })
    }

    pub fn has(&self, target: Depth, source: Depth) -> bool {
        self.blocks[target.slot()][source.slot()].is_some()
    }

    pub fn from_blocks(layer: usize, thickness: usize, h: f64, blocks: [[Option<Array2<C64>>; 4]; 4]) -> Self {
        Self { layer, thickness, h, blocks }
    }
}

/// Interface depths a layer needs given its position in the stack.
pub fn depths_for_layer(layer: usize, layer_count: usize) -> &'static [Depth] {
    match (layer == 0, layer + 1 == layer_count) {
        (true, true) => &Depth::ALL,
        (true, false) => &Depth::BOTTOM,
        (false, true) => &Depth::TOP,
        (false, false) => &Depth::ALL,
    }
}

/// Extracts `G(z_j, z_k)` for all pairs of `depths`, one multi-column solve
/// per source depth with delta right-hand sides `1/h^2`.
pub fn extract_interface_greens(fact: &LocalFactorization, depths: &[Depth]) -> InterfaceGreens {
    let g = &fact.grid;
    let h = g.h;
    let nxe = g.nx_ext();
    let targets: Vec<usize> = depths.iter().map(|&d| fact.depth_row(d)).collect();
    let mut blocks: [[Option<Array2<C64>>; 4]; 4] = Default::default();
    for &src in depths {
        let delta = Array2::<C64>::eye(nxe) * C64::new(1.0 / (h * h), 0.0);
        let cols = fact.solve_rows(&[(fact.depth_row(src), delta)], &targets);
        for (&tgt, block) in depths.iter().zip(cols) {
            blocks[tgt.slot()][src.slot()] = Some(block * C64::new(h, 0.0));
        }
    }
    InterfaceGreens { layer: fact.layer, thickness: g.nz, h, blocks }
}

/// Interface-row samples of `H^{-1} f` for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonTrace {
    traces: [Array1<C64>; 4],
}

impl NewtonTrace {
    pub fn at(&self, d: Depth) -> ArrayView1<'_, C64> {
        self.traces[d.slot()].view()
    }

    pub fn zeros(nxe: usize) -> Self {
        Self { traces: std::array::from_fn(|_| Array1::zeros(nxe)) }
    }
}

/// One full local solve, sliced at the four interface rows.
pub fn newton_trace(fact: &LocalFactorization, f_local: ArrayView2<C64>) -> Result<NewtonTrace, LocalSolveError> {
    let w = fact.solve_field(f_local)?;
    Ok(NewtonTrace { traces: Depth::ALL.map(|d| w.row(fact.depth_row(d)).to_owned()) })
}

/// Interface data of one layer: values at local depths `0, 1, n, n+1`.
#[derive(Debug, Clone, Copy)]
pub struct LayerTraces<'a> {
    pub u0: ArrayView1<'a, C64>,
    pub u1: ArrayView1<'a, C64>,
    pub un: ArrayView1<'a, C64>,
    pub un1: ArrayView1<'a, C64>,
}

/// Solves the layer problem with delta forcings carrying the interface data
/// and returns rows `1..=n` (`n x nx_ext`).
pub fn reconstruct_volume(
    fact: &LocalFactorization,
    f_local: ArrayView2<C64>,
    traces: LayerTraces<'_>,
) -> Result<Array2<C64>, LocalSolveError> {
    let g = &fact.grid;
    let n = g.nz;
    let want = (g.nz_ext(), g.nx_ext());
    if f_local.dim() != want {
        return Err(LocalSolveError::Shape { got: f_local.dim(), want });
    }
    let inv_h2 = 1.0 / (g.h * g.h);
    let mut b = f_local.to_owned();
    let row = |d: Depth| fact.depth_row(d);
    {
        let mut r1 = b.row_mut(row(Depth::One));
        r1.scaled_add(C64::new(inv_h2, 0.0), &traces.u0);
    }
    b.row_mut(row(Depth::Zero)).scaled_add(C64::new(-inv_h2, 0.0), &traces.u1);
    b.row_mut(row(Depth::NPlus1)).scaled_add(C64::new(-inv_h2, 0.0), &traces.un);
    b.row_mut(row(Depth::N)).scaled_add(C64::new(inv_h2, 0.0), &traces.un1);
    let v = fact.solve_field(b.view())?;
    let top = row(Depth::One);
    Ok(v.slice(s![top..top + n, ..]).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble_global, Form, PmlProfile, SquaredSlownessModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<C64> {
        Array2::from_shape_fn((rows, cols), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn layer(n: usize, nz: usize, np: usize, form: Form) -> (ComplexGrid2D, SparseOperator, LocalFactorization) {
        let g = ComplexGrid2D::new(n, nz, 1.0 / (n as f64 + 1.0), np).unwrap();
        let m = SquaredSlownessModel::from_velocity(&g, |x, z| 1.0 + 0.2 * x - 0.1 * z).unwrap();
        let p = PmlProfile::new(&g, 25.0, 15.0).unwrap();
        let op = assemble_global(&g, &m, &p, form).unwrap();
        let f = factorize(&op, &g, 3).unwrap();
        (g, op, f)
    }

    #[test]
    fn field_solve_residual() {
        let (g, op, fact) = layer(12, 7, 4, Form::Unsymmetric);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_field(&mut rng, g.nz_ext(), g.nx_ext());
        let u = fact.solve_field(b.view()).unwrap();
        let flat = Array1::from_iter(u.iter().copied());
        let hb = op.matvec(flat.view());
        let bf = Array1::from_iter(b.iter().copied());
        assert!(dense::rel_diff1(hb.view(), bf.view()) < 1e-12);
        // deterministic
        let u2 = fact.solve_field(b.view()).unwrap();
        assert_eq!(u, u2);
    }

    #[test]
    fn solve_rows_matches_dense_inverse() {
        let (g, op, fact) = layer(6, 5, 2, Form::Unsymmetric);
        let inv = dense::invert(op.to_dense().view()).unwrap().inverse;
        let nxe = g.nx_ext();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = random_field(&mut rng, nxe, 3);
        let src = 4;
        let targets = [0, 2, 4, 8];
        let got = fact.solve_rows(&[(src, b.clone())], &targets);
        for (t, x) in targets.iter().zip(got) {
            let block = inv.slice(s![t * nxe..(t + 1) * nxe, src * nxe..(src + 1) * nxe]);
            let want = block.dot(&b);
            assert!(dense::rel_diff2(x.view(), want.view()) < 1e-12);
        }
    }

    #[test]
    fn greens_columns_solve_delta_problem() {
        let (g, op, fact) = layer(8, 4, 3, Form::Unsymmetric);
        let greens = extract_interface_greens(&fact, &Depth::ALL);
        let inv = dense::invert(op.to_dense().view()).unwrap().inverse;
        let nxe = g.nx_ext();
        for t in Depth::ALL {
            for s_ in Depth::ALL {
                let (rt, rs) = (fact.depth_row(t), fact.depth_row(s_));
                let want = inv.slice(s![rt * nxe..(rt + 1) * nxe, rs * nxe..(rs + 1) * nxe]).to_owned() / C64::new(g.h, 0.0);
                assert!(dense::rel_diff2(greens.get(t, s_).unwrap().view(), want.view()) < 1e-11);
            }
        }
        let partial = extract_interface_greens(&fact, &Depth::TOP);
        assert!(partial.get(Depth::N, Depth::One).is_err());
    }

    #[test]
    fn symmetric_reciprocity() {
        let (_, _, fact) = layer(7, 5, 3, Form::Symmetric);
        let greens = extract_interface_greens(&fact, &Depth::ALL);
        for t in Depth::ALL {
            for s_ in Depth::ALL {
                let a = greens.get(t, s_).unwrap();
                let b = greens.get(s_, t).unwrap().t().to_owned();
                assert!(dense::rel_diff2(a.view(), b.view()) < 1e-10);
            }
        }
    }

    #[test]
    fn zero_data_reconstructs_zero() {
        let (g, _, fact) = layer(5, 4, 2, Form::Unsymmetric);
        let f = Array2::zeros((g.nz_ext(), g.nx_ext()));
        let z = Array1::zeros(g.nx_ext());
        let tr = LayerTraces { u0: z.view(), u1: z.view(), un: z.view(), un1: z.view() };
        let v = reconstruct_volume(&fact, f.view(), tr).unwrap();
        assert!(v.iter().all(|c| *c == C64::default()));
        let nt = newton_trace(&fact, f.view()).unwrap();
        assert_eq!(nt, NewtonTrace::zeros(g.nx_ext()));
    }

    #[test]
    fn singular_pivot_is_reported() {
        let g = ComplexGrid2D::new(2, 2, 1.0, 1).unwrap();
        let m = SquaredSlownessModel::constant(&g, 1.0).unwrap();
        let p = PmlProfile::new(&g, 0.0, 1.0).unwrap();
        let mut st = crate::grid::stencil(&g, &m, &p, Form::Unsymmetric).unwrap();
        st.center.fill(C64::default());
        st.west.fill(C64::default());
        st.east.fill(C64::default());
        let op = SparseOperator::from_stencil(&st, Form::Unsymmetric);
        assert!(matches!(factorize(&op, &g, 7), Err(LocalSolveError::SingularPivot { layer: 7, row: 0, .. })));
    }
}
