//! Interface-level operators: incomplete Green's integrals, the trace systems
//! `M` and `M0`, extrapolators, the polarized systems and their permuted
//! `D + R` split.
//!
//! Every kernel is stored as `K = G / h`, the `1/h` prefactor of the
//! incomplete integrals already absorbed, so identity blocks are exact.
//!
//! Traces are stacked per interface `k` (between layers `k` and `k + 1`) as
//! `a_k = u^k_n` followed by `b_k = u^k_{n+1}`.

use crate::dense;
use crate::local_solver::{Depth, InterfaceGreens, LocalSolveError, NewtonTrace};
use crate::plr::{self, PlrError, PlrMatrix, PlrSparseForm};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayViewMut1};
use num_complex::Complex64 as C64;
use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;
use thiserror::Error;

/// Condition number above which an extrapolator is flagged.
pub const EXTRAPOLATOR_COND_WARN: f64 = 1e12;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("the trace system needs at least 2 layers, got {0}")]
    TooFewLayers(usize),
    #[error("expected Green's blocks for {want} layers, got {got}")]
    LayerCount { got: usize, want: usize },
    #[error(transparent)]
    Local(#[from] LocalSolveError),
    #[error("extrapolator at interface {interface}: {message}")]
    Extrapolator { interface: usize, message: String },
    #[error("compression failed for layer {layer}: {source}")]
    Compression { layer: usize, source: PlrError },
    #[error("vector of length {got}, expected {want}")]
    Shape { got: usize, want: usize },
    #[error("variant {0:?} has no D + R split")]
    NoSplit(Variant),
}

/// One interface kernel `K = G / h`.
#[derive(Debug, Clone)]
pub enum Kernel {
    Dense(Array2<C64>),
    Compressed { tree: PlrMatrix, sparse: PlrSparseForm },
}

impl Kernel {
    pub fn dim(&self) -> (usize, usize) {
        match self {
            Kernel::Dense(a) => a.dim(),
            Kernel::Compressed { tree, .. } => (tree.rows, tree.cols),
        }
    }

    /// `y += coef * K x`
    pub fn apply_add(&self, coef: C64, x: ArrayView1<C64>, mut y: ArrayViewMut1<C64>) {
        match self {
            Kernel::Dense(a) => ndarray::linalg::general_mat_vec_mul(coef, a, &x, C64::new(1.0, 0.0), &mut y),
            Kernel::Compressed { sparse, .. } => {
                let v = sparse.matvec(x).expect("kernel dimensions checked at assembly");
                y.scaled_add(coef, &v);
            }
        }
    }

    pub fn to_dense(&self) -> Array2<C64> {
        match self {
            Kernel::Dense(a) => a.clone(),
            Kernel::Compressed { tree, .. } => tree.to_dense(),
        }
    }

    pub fn stored_entries(&self) -> usize {
        match self {
            Kernel::Dense(a) => a.len(),
            Kernel::Compressed { sparse, .. } => sparse.stored_entries(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum BlockEntry {
    Identity(C64),
    Kernel(Arc<Kernel>, C64),
}

/// Square-blocked operator; every block is `n x n`.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    pub block_size: usize,
    pub block_cols: usize,
    rows: Vec<Vec<(usize, BlockEntry)>>,
}

impl BlockMatrix {
    pub fn new(block_rows: usize, block_cols: usize, block_size: usize) -> Self {
        Self { block_size, block_cols, rows: vec![Vec::new(); block_rows] }
    }

    pub fn block_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.block_rows() * self.block_size, self.block_cols * self.block_size)
    }

    pub fn push(&mut self, row: usize, col: usize, entry: BlockEntry) {
        assert!(col < self.block_cols, "block column {col} out of range");
        self.rows[row].push((col, entry));
    }

    pub fn row_entries(&self, row: usize) -> &[(usize, BlockEntry)] {
        &self.rows[row]
    }

    fn span(&self, b: usize) -> Range<usize> {
        b * self.block_size..(b + 1) * self.block_size
    }

    /// `y_row += sum over the row's entries`, skipping columns rejected by `keep`.
    fn row_apply(&self, row: usize, x: ArrayView1<C64>, mut y: ArrayViewMut1<C64>, keep: impl Fn(usize) -> bool) {
        for (c, e) in &self.rows[row] {
            if !keep(*c) {
                continue;
            }
            let xc = x.slice(s![self.span(*c)]);
            match e {
                BlockEntry::Identity(a) => y.scaled_add(*a, &xc),
                BlockEntry::Kernel(k, a) => k.apply_add(*a, xc, y.view_mut()),
            }
        }
    }

    pub fn matvec(&self, x: ArrayView1<C64>) -> Array1<C64> {
        let (m, n) = self.dim();
        assert_eq!(x.len(), n, "block matvec dimension");
        let mut y = Array1::zeros(m);
        for r in 0..self.block_rows() {
            let span = self.span(r);
            self.row_apply(r, x, y.slice_mut(s![span]), |_| true);
        }
        y
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut a = Array2::zeros(self.dim());
        let bs = self.block_size;
        for (r, row) in self.rows.iter().enumerate() {
            for (c, e) in row {
                let mut blk = a.slice_mut(s![r * bs..(r + 1) * bs, c * bs..(c + 1) * bs]);
                match e {
                    BlockEntry::Identity(v) => blk.diag_mut().iter_mut().for_each(|z| *z += v),
                    BlockEntry::Kernel(k, v) => blk.scaled_add(*v, &k.to_dense()),
                }
            }
        }
        a
    }

    /// Nonzero block pattern.
    pub fn mask(&self) -> Array2<bool> {
        let mut m = Array2::from_elem((self.block_rows(), self.block_cols), false);
        for (r, row) in self.rows.iter().enumerate() {
            for (c, _) in row {
                m[[r, *c]] = true;
            }
        }
        m
    }

    /// Row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        Self { block_size: self.block_size, block_cols: self.block_cols, rows: perm.iter().map(|&p| self.rows[p].clone()).collect() }
    }

    /// Sub-block matrix over block ranges, re-indexed from zero.
    pub fn sub(&self, rows: Range<usize>, cols: Range<usize>) -> Self {
        let mut out = Self::new(rows.len(), cols.len(), self.block_size);
        for (i, r) in rows.enumerate() {
            for (c, e) in &self.rows[r] {
                if cols.contains(c) {
                    out.push(i, c - cols.start, e.clone());
                }
            }
        }
        out
    }

    /// The single identity coefficient on the diagonal block `i`, if that is
    /// the only diagonal entry.
    fn unit_diagonal(&self, i: usize) -> Option<C64> {
        let mut diag = self.rows[i].iter().filter(|(c, _)| *c == i);
        match (diag.next(), diag.next()) {
            (Some((_, BlockEntry::Identity(a))), None) => Some(*a),
            _ => None,
        }
    }

    /// Solves a block-triangular system by substitution. `lower` selects
    /// forward substitution (entries left of the diagonal only).
    pub fn triangular_solve(&self, rhs: ArrayView1<C64>, lower: bool) -> Array1<C64> {
        let nb = self.block_rows();
        let mut x = Array1::zeros(nb * self.block_size);
        let order: Vec<usize> = if lower { (0..nb).collect() } else { (0..nb).rev().collect() };
        for i in order {
            let d = self.unit_diagonal(i).expect("diagonal blocks are scalar identities");
            let span = self.span(i);
            let mut acc = Array1::<C64>::zeros(self.block_size);
            self.row_apply(i, x.view(), acc.view_mut(), |c| c != i);
            let mut xi = x.slice_mut(s![span.clone()]);
            // d is exactly -1 or 1 for every system assembled here
            xi.assign(&((&rhs.slice(s![span]) - &acc) / d));
        }
        x
    }

    pub fn is_lower(&self) -> bool {
        self.rows.iter().enumerate().all(|(r, row)| row.iter().all(|(c, _)| *c <= r))
    }

    pub fn is_upper(&self) -> bool {
        self.rows.iter().enumerate().all(|(r, row)| row.iter().all(|(c, _)| *c >= r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlrSettings {
    /// Truncation threshold relative to the largest singular value of each block.
    pub rel_epsilon: f64,
    pub r_max: usize,
}

/// Kernels of every layer plus the geometry needed to place them.
#[derive(Debug, Clone)]
pub struct TraceOperators {
    pub layers: usize,
    pub block_size: usize,
    kernels: BTreeMap<(usize, Depth, Depth), Arc<Kernel>>,
}

impl TraceOperators {
    pub fn new(greens: &[InterfaceGreens], compression: Option<PlrSettings>) -> Result<Self, TraceError> {
        let layers = greens.len();
        if layers < 2 {
            return Err(TraceError::TooFewLayers(layers));
        }
        let mut kernels = BTreeMap::new();
        let mut block_size = 0;
        for (l, g) in greens.iter().enumerate() {
            for t in Depth::ALL {
                for src in Depth::ALL {
                    if !g.has(t, src) {
                        continue;
                    }
                    let k = g.get(t, src)? / C64::new(g.h, 0.0);
                    block_size = k.nrows();
                    let kernel = match compression {
                        None => Kernel::Dense(k),
                        Some(p) => {
                            let tree = plr::compress_relative(k.view(), p.r_max, p.rel_epsilon)
                                .map_err(|source| TraceError::Compression { layer: l, source })?;
                            let sparse = tree.to_sparse_form();
                            Kernel::Compressed { tree, sparse }
                        }
                    };
                    kernels.insert((l, t, src), Arc::new(kernel));
                }
            }
        }
        Ok(Self { layers, block_size, kernels })
    }

    pub fn interfaces(&self) -> usize {
        self.layers - 1
    }

    /// Length of one trace vector (`2 (L - 1)` blocks).
    pub fn trace_len(&self) -> usize {
        2 * self.interfaces() * self.block_size
    }

    pub fn kernel(&self, layer: usize, target: Depth, source: Depth) -> Result<Arc<Kernel>, TraceError> {
        self.kernels
            .get(&(layer, target, source))
            .cloned()
            .ok_or(TraceError::Local(LocalSolveError::MissingBlock { layer, target, from: source }))
    }

    pub fn kernels(&self) -> impl Iterator<Item = (&(usize, Depth, Depth), &Arc<Kernel>)> {
        self.kernels.iter()
    }

    /// Down-going integral of `layer` at `target`, fed by the traces of the
    /// interface above the layer: `K_{j1} a - K_{j0} b`.
    fn push_down(&self, m: &mut BlockMatrix, row: usize, layer: usize, target: Depth, col0: usize) -> Result<(), TraceError> {
        let k = layer - 1;
        m.push(row, col0 + 2 * k, BlockEntry::Kernel(self.kernel(layer, target, Depth::One)?, C64::new(1.0, 0.0)));
        m.push(row, col0 + 2 * k + 1, BlockEntry::Kernel(self.kernel(layer, target, Depth::Zero)?, C64::new(-1.0, 0.0)));
        Ok(())
    }

    /// Up-going integral of `layer` at `target`, fed by the traces of the
    /// interface below the layer: `-K_{j,n+1} a + K_{jn} b`.
    fn push_up(&self, m: &mut BlockMatrix, row: usize, layer: usize, target: Depth, col0: usize) -> Result<(), TraceError> {
        let k = layer;
        m.push(row, col0 + 2 * k, BlockEntry::Kernel(self.kernel(layer, target, Depth::NPlus1)?, C64::new(-1.0, 0.0)));
        m.push(row, col0 + 2 * k + 1, BlockEntry::Kernel(self.kernel(layer, target, Depth::N)?, C64::new(1.0, 0.0)));
        Ok(())
    }

    /// Both integrals that exist for this layer (the full representation
    /// formula without its Newton term).
    fn push_full(&self, m: &mut BlockMatrix, row: usize, layer: usize, target: Depth, col0: usize) -> Result<(), TraceError> {
        if layer > 0 {
            self.push_down(m, row, layer, target, col0)?;
        }
        if layer + 1 < self.layers {
            self.push_up(m, row, layer, target, col0)?;
        }
        Ok(())
    }

    fn identity(m: &mut BlockMatrix, row: usize, col: usize, coef: f64) {
        m.push(row, col, BlockEntry::Identity(C64::new(coef, 0.0)));
    }

    /// Self-consistency at `j = n` (upper layer) and `j = 1` (lower layer)
    /// of every interface; `M u = -f`.
    pub fn assemble_m(&self) -> Result<BlockMatrix, TraceError> {
        let ni = self.interfaces();
        let mut m = BlockMatrix::new(2 * ni, 2 * ni, self.block_size);
        for k in 0..ni {
            self.push_full(&mut m, 2 * k, k, Depth::N, 0)?;
            Self::identity(&mut m, 2 * k, 2 * k, -1.0);
            self.push_full(&mut m, 2 * k + 1, k + 1, Depth::One, 0)?;
            Self::identity(&mut m, 2 * k + 1, 2 * k + 1, -1.0);
        }
        Ok(m)
    }

    /// The representation formula evaluated one row outside each layer,
    /// where it vanishes; `M0 u = -f0`.
    pub fn assemble_m0(&self) -> Result<BlockMatrix, TraceError> {
        let ni = self.interfaces();
        let mut m = BlockMatrix::new(2 * ni, 2 * ni, self.block_size);
        for k in 0..ni {
            self.push_full(&mut m, 2 * k, k, Depth::NPlus1, 0)?;
            self.push_full(&mut m, 2 * k + 1, k + 1, Depth::Zero, 0)?;
        }
        Ok(m)
    }

    /// Stacks Newton traces as `(N^k_n, N^{k+1}_1, ...)` for `M` or
    /// `(N^k_{n+1}, N^{k+1}_0, ...)` for `M0`.
    pub fn assemble_rhs(&self, newton: &[NewtonTrace], system: RhsKind) -> Result<Array1<C64>, TraceError> {
        if newton.len() != self.layers {
            return Err(TraceError::LayerCount { got: newton.len(), want: self.layers });
        }
        let (upper, lower) = match system {
            RhsKind::M => (Depth::N, Depth::One),
            RhsKind::M0 => (Depth::NPlus1, Depth::Zero),
        };
        let n = self.block_size;
        let mut f = Array1::zeros(self.trace_len());
        for k in 0..self.interfaces() {
            f.slice_mut(s![2 * k * n..(2 * k + 1) * n]).assign(&newton[k].at(upper));
            f.slice_mut(s![(2 * k + 1) * n..(2 * k + 2) * n]).assign(&newton[k + 1].at(lower));
        }
        Ok(f)
    }

    /// `E_down = K_{nn}^{-1} K_{n,n+1}` of the layer above interface `k`.
    pub fn extrapolator_down(&self, k: usize) -> Result<Extrapolator, TraceError> {
        let a = self.kernel(k, Depth::N, Depth::N)?.to_dense();
        let b = self.kernel(k, Depth::N, Depth::NPlus1)?.to_dense();
        Extrapolator::solve(k, &a, &b)
    }

    /// `E_up = K_{11}^{-1} K_{10}` of the layer below interface `k`.
    pub fn extrapolator_up(&self, k: usize) -> Result<Extrapolator, TraceError> {
        let a = self.kernel(k + 1, Depth::One, Depth::One)?.to_dense();
        let b = self.kernel(k + 1, Depth::One, Depth::Zero)?.to_dense();
        Extrapolator::solve(k, &a, &b)
    }

    /// Polarized system over `(u_down, u_up)`, `4 (L - 1)` block rows.
    pub fn assemble_polarized(&self, variant: Variant) -> Result<PolarizedSystem, TraceError> {
        let ni = self.interfaces();
        let half = 2 * ni;
        let (dn, up) = (0, half);
        let mut m = BlockMatrix::new(2 * half, 2 * half, self.block_size);
        let mut extrapolators = Vec::new();
        match variant {
            Variant::Annihilator => {
                for k in 0..ni {
                    for col0 in [dn, up] {
                        self.push_full(&mut m, 2 * k, k, Depth::N, col0)?;
                        Self::identity(&mut m, 2 * k, col0 + 2 * k, -1.0);
                        self.push_full(&mut m, 2 * k + 1, k + 1, Depth::One, col0)?;
                        Self::identity(&mut m, 2 * k + 1, col0 + 2 * k + 1, -1.0);
                    }
                    // a down-going pair is invisible to the layer above's up-going integral
                    self.push_up(&mut m, half + 2 * k, k, Depth::N, dn)?;
                    self.push_down(&mut m, half + 2 * k + 1, k + 1, Depth::One, up)?;
                }
            }
            Variant::Jump | Variant::Extrapolation => {
                for k in 0..ni {
                    // top rows: the M system split by polarization
                    if k > 0 {
                        self.push_down(&mut m, 2 * k, k, Depth::N, dn)?;
                    }
                    Self::identity(&mut m, 2 * k, dn + 2 * k, -1.0);
                    self.push_full(&mut m, 2 * k, k, Depth::N, up)?;
                    Self::identity(&mut m, 2 * k, up + 2 * k, -1.0);

                    self.push_full(&mut m, 2 * k + 1, k + 1, Depth::One, dn)?;
                    Self::identity(&mut m, 2 * k + 1, dn + 2 * k + 1, -1.0);
                    if k + 2 < self.layers {
                        self.push_up(&mut m, 2 * k + 1, k + 1, Depth::One, up)?;
                    }
                    Self::identity(&mut m, 2 * k + 1, up + 2 * k + 1, -1.0);
                }
                if variant == Variant::Jump {
                    for k in 0..ni {
                        let r = half + 2 * k;
                        if k > 0 {
                            self.push_down(&mut m, r, k, Depth::NPlus1, dn)?;
                        }
                        Self::identity(&mut m, r, dn + 2 * k + 1, -1.0);
                        self.push_full(&mut m, r, k, Depth::NPlus1, up)?;

                        let r = half + 2 * k + 1;
                        self.push_full(&mut m, r, k + 1, Depth::Zero, dn)?;
                        if k + 2 < self.layers {
                            self.push_up(&mut m, r, k + 1, Depth::Zero, up)?;
                        }
                        Self::identity(&mut m, r, up + 2 * k, -1.0);
                    }
                } else {
                    for k in 0..ni {
                        let down = self.extrapolator_down(k)?;
                        let upx = self.extrapolator_up(k)?;
                        let r = half + 2 * k;
                        m.push(r, dn + 2 * k, BlockEntry::Kernel(Arc::new(Kernel::Dense(down.op.clone())), C64::new(1.0, 0.0)));
                        Self::identity(&mut m, r, dn + 2 * k + 1, -1.0);
                        let r = half + 2 * k + 1;
                        Self::identity(&mut m, r, up + 2 * k, -1.0);
                        m.push(r, up + 2 * k + 1, BlockEntry::Kernel(Arc::new(Kernel::Dense(upx.op.clone())), C64::new(1.0, 0.0)));
                        extrapolators.push((down, upx));
                    }
                }
            }
        }
        let permutation = match variant {
            Variant::Annihilator => None,
            _ => Some(sweep_permutation(ni)),
        };
        Ok(PolarizedSystem { variant, interfaces: ni, matrix: m, permutation, extrapolators })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsKind {
    M,
    M0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Annihilator,
    Extrapolation,
    Jump,
}

/// Dense one-sided extrapolator with its reciprocal condition estimate.
#[derive(Debug, Clone)]
pub struct Extrapolator {
    pub op: Array2<C64>,
    pub rcond: f64,
}

impl Extrapolator {
    fn solve(interface: usize, a: &Array2<C64>, b: &Array2<C64>) -> Result<Self, TraceError> {
        let (op, rcond) = dense::solve(a.view(), b.view())
            .map_err(|e| TraceError::Extrapolator { interface, message: e.to_string() })?;
        Ok(Self { op, rcond })
    }

    pub fn ill_conditioned(&self) -> bool {
        self.rcond * EXTRAPOLATOR_COND_WARN < 1.0
    }
}

/// Row order that turns the jump or extrapolation system into `D + R`:
/// for every interface the two down-going rows, then for every interface
/// the two up-going rows.
pub fn sweep_permutation(interfaces: usize) -> Vec<usize> {
    let half = 2 * interfaces;
    let mut p = Vec::with_capacity(2 * half);
    for k in 0..interfaces {
        p.extend([2 * k, half + 2 * k]);
    }
    for k in 0..interfaces {
        p.extend([half + 2 * k + 1, 2 * k + 1]);
    }
    p
}

#[derive(Debug, Clone)]
pub struct PolarizedSystem {
    pub variant: Variant,
    pub interfaces: usize,
    pub matrix: BlockMatrix,
    pub permutation: Option<Vec<usize>>,
    pub extrapolators: Vec<(Extrapolator, Extrapolator)>,
}

impl PolarizedSystem {
    pub fn half_len(&self) -> usize {
        2 * self.interfaces * self.matrix.block_size
    }

    /// Right-hand side `(-f, -f0)` for the jump variant, `(-f, 0)` otherwise.
    pub fn rhs(&self, f: ArrayView1<C64>, f0: ArrayView1<C64>) -> Result<Array1<C64>, TraceError> {
        let n = self.half_len();
        for v in [f, f0] {
            if v.len() != n {
                return Err(TraceError::Shape { got: v.len(), want: n });
            }
        }
        let mut b = Array1::zeros(2 * n);
        b.slice_mut(s![..n]).assign(&f.mapv(|z| -z));
        if self.variant == Variant::Jump {
            b.slice_mut(s![n..]).assign(&f0.mapv(|z| -z));
        }
        Ok(b)
    }

    /// `u = u_down + u_up`.
    pub fn recombine(&self, x: ArrayView1<C64>) -> Array1<C64> {
        let n = self.half_len();
        &x.slice(s![..n]) + &x.slice(s![n..])
    }

    pub fn split(&self) -> Result<Split, TraceError> {
        let perm = self.permutation.as_ref().ok_or(TraceError::NoSplit(self.variant))?;
        Ok(split_dr(&self.matrix, perm))
    }
}

/// `P M = D + R` with `D = diag(D_down, D_up)` and `R = [0 U; L 0]`.
#[derive(Debug, Clone)]
pub struct Split {
    pub permutation: Vec<usize>,
    pub d_down: BlockMatrix,
    pub d_up: BlockMatrix,
    pub upper: BlockMatrix,
    pub lower: BlockMatrix,
}

pub fn split_dr(matrix: &BlockMatrix, perm: &[usize]) -> Split {
    let pm = matrix.permute_rows(perm);
    let half = pm.block_rows() / 2;
    let (a, b) = (0..half, half..2 * half);
    Split {
        permutation: perm.to_vec(),
        d_down: pm.sub(a.clone(), a.clone()),
        d_up: pm.sub(b.clone(), b.clone()),
        upper: pm.sub(a.clone(), b.clone()),
        lower: pm.sub(b, a),
    }
}

impl Split {
    pub fn block_size(&self) -> usize {
        self.d_down.block_size
    }

    pub fn half_len(&self) -> usize {
        self.d_down.dim().0
    }

    /// Applies the row permutation to a full-length vector.
    pub fn permute(&self, v: ArrayView1<C64>) -> Array1<C64> {
        let n = self.block_size();
        let mut out = Array1::zeros(v.len());
        for (i, &p) in self.permutation.iter().enumerate() {
            out.slice_mut(s![i * n..(i + 1) * n]).assign(&v.slice(s![p * n..(p + 1) * n]));
        }
        out
    }

    /// `D^{-1} y` by forward substitution on `D_down` and backward on `D_up`.
    pub fn solve_d(&self, y: ArrayView1<C64>) -> Array1<C64> {
        let h = self.half_len();
        let mut x = Array1::zeros(2 * h);
        x.slice_mut(s![..h]).assign(&self.d_down.triangular_solve(y.slice(s![..h]), true));
        x.slice_mut(s![h..]).assign(&self.d_up.triangular_solve(y.slice(s![h..]), false));
        x
    }

    /// `R x`.
    pub fn apply_r(&self, x: ArrayView1<C64>) -> Array1<C64> {
        let h = self.half_len();
        let mut y = Array1::zeros(2 * h);
        y.slice_mut(s![..h]).assign(&self.upper.matvec(x.slice(s![h..])));
        y.slice_mut(s![h..]).assign(&self.lower.matvec(x.slice(s![..h])));
        y
    }

    pub fn d_plus_r_dense(&self) -> Array2<C64> {
        let h = self.half_len();
        let mut a = Array2::zeros((2 * h, 2 * h));
        a.slice_mut(s![..h, ..h]).assign(&self.d_down.to_dense());
        a.slice_mut(s![h.., h..]).assign(&self.d_up.to_dense());
        a.slice_mut(s![..h, h..]).assign(&self.upper.to_dense());
        a.slice_mut(s![h.., ..h]).assign(&self.lower.to_dense());
        a
    }
}

/// Incomplete down-going integral of one layer at `target`:
/// `(G_{j1} v0 - G_{j0} v1) / h`.
pub fn incomplete_green_down(
    greens: &InterfaceGreens,
    target: Depth,
    v0: ArrayView1<C64>,
    v1: ArrayView1<C64>,
) -> Result<Array1<C64>, TraceError> {
    let a = greens.get(target, Depth::One)?;
    let b = greens.get(target, Depth::Zero)?;
    check_len(a.ncols(), [v0, v1])?;
    Ok((a.dot(&v0) - b.dot(&v1)) / C64::new(greens.h, 0.0))
}

/// Incomplete up-going integral of one layer at `target`:
/// `(-G_{j,n+1} vn + G_{jn} vn1) / h`.
pub fn incomplete_green_up(
    greens: &InterfaceGreens,
    target: Depth,
    vn: ArrayView1<C64>,
    vn1: ArrayView1<C64>,
) -> Result<Array1<C64>, TraceError> {
    let a = greens.get(target, Depth::NPlus1)?;
    let b = greens.get(target, Depth::N)?;
    check_len(a.ncols(), [vn, vn1])?;
    Ok((b.dot(&vn1) - a.dot(&vn)) / C64::new(greens.h, 0.0))
}

fn check_len<const N: usize>(want: usize, vs: [ArrayView1<C64>; N]) -> Result<(), TraceError> {
    match vs.iter().find(|v| v.len() != want) {
        Some(v) => Err(TraceError::Shape { got: v.len(), want }),
        None => Ok(()),
    }
}

/// Block `i` of a stacked trace vector.
pub fn trace_block(v: ArrayView1<'_, C64>, i: usize, n: usize) -> ArrayView1<'_, C64> {
    v.slice_move(s![i * n..(i + 1) * n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{rel_diff1, rel_diff2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kernel_block(n: usize, seed: u64) -> Array2<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, n), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    /// Synthetic Green's blocks (not from an operator) for structural checks.
    fn fake_greens(layers: usize, n: usize) -> Vec<InterfaceGreens> {
        (0..layers)
            .map(|l| {
                let mut blocks: [[Option<Array2<C64>>; 4]; 4] = Default::default();
                for t in Depth::ALL {
                    for src in Depth::ALL {
                        blocks[t.slot()][src.slot()] = Some(kernel_block(n, (l * 16 + t.slot() * 4 + src.slot()) as u64) * 0.1);
                    }
                }
                InterfaceGreens::from_blocks(l, 5, 0.5, blocks)
            })
            .collect()
    }

    #[test]
    fn m_corners_follow_the_two_layer_pattern() {
        let g = fake_greens(2, 3);
        let ops = TraceOperators::new(&g, None).unwrap();
        let m = ops.assemble_m().unwrap().to_dense();
        let h = 0.5;
        let k = |l: usize, t, s| g[l].get(t, s).unwrap() / C64::new(h, 0.0);
        let eye = Array2::<C64>::eye(3);
        let blk = |r: usize, c: usize| m.slice(s![r * 3..(r + 1) * 3, c * 3..(c + 1) * 3]).to_owned();
        assert!(rel_diff2(blk(0, 0).view(), (-k(0, Depth::N, Depth::NPlus1) - &eye).view()) < 1e-15);
        assert!(rel_diff2(blk(0, 1).view(), k(0, Depth::N, Depth::N).view()) < 1e-15);
        assert!(rel_diff2(blk(1, 0).view(), k(1, Depth::One, Depth::One).view()) < 1e-15);
        assert!(rel_diff2(blk(1, 1).view(), (-k(1, Depth::One, Depth::Zero) - &eye).view()) < 1e-15);

        let m0 = ops.assemble_m0().unwrap().to_dense();
        let blk0 = |r: usize, c: usize| m0.slice(s![r * 3..(r + 1) * 3, c * 3..(c + 1) * 3]).to_owned();
        assert!(rel_diff2(blk0(0, 0).view(), (-k(0, Depth::NPlus1, Depth::NPlus1)).view()) < 1e-15);
        assert!(rel_diff2(blk0(1, 1).view(), (-k(1, Depth::Zero, Depth::Zero)).view()) < 1e-15);
    }

    #[test]
    fn incomplete_integrals_match_difference_form() {
        let g = &fake_greens(1, 6)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v = || Array1::from_shape_fn(6, |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let (vn, vn1, v0, v1) = (v(), v(), v(), v());
        let h = C64::new(g.h, 0.0);
        for t in Depth::ALL {
            let gn1 = g.get(t, Depth::NPlus1).unwrap();
            let gn = g.get(t, Depth::N).unwrap();
            let diff = gn1.dot(&(&vn1 - &vn)) / h - (gn1 - gn).dot(&vn1) / h;
            let up = incomplete_green_up(g, t, vn.view(), vn1.view()).unwrap();
            assert!(rel_diff1(up.view(), diff.view()) < 1e-13);

            let g0 = g.get(t, Depth::Zero).unwrap();
            let g1 = g.get(t, Depth::One).unwrap();
            let diff = (g1 - g0).dot(&v0) / h - g0.dot(&(&v1 - &v0)) / h;
            let down = incomplete_green_down(g, t, v0.view(), v1.view()).unwrap();
            assert!(rel_diff1(down.view(), diff.view()) < 1e-13);
        }
        let z = Array1::zeros(6);
        assert_eq!(incomplete_green_up(g, Depth::N, z.view(), z.view()).unwrap(), z);
        assert!(incomplete_green_down(g, Depth::N, z.view(), z.slice(s![..3])).is_err());
    }

    #[test]
    fn split_reassembles_and_is_triangular() {
        let g = fake_greens(4, 3);
        let ops = TraceOperators::new(&g, None).unwrap();
        for variant in [Variant::Jump, Variant::Extrapolation] {
            let sys = ops.assemble_polarized(variant).unwrap();
            let sp = sys.split().unwrap();
            assert!(sp.d_down.is_lower() && sp.d_up.is_upper());
            for i in 0..sp.d_down.block_rows() {
                assert_eq!(sp.d_down.unit_diagonal(i), Some(C64::new(-1.0, 0.0)));
                assert_eq!(sp.d_up.unit_diagonal(i), Some(C64::new(-1.0, 0.0)));
            }
            let pm = sys.matrix.permute_rows(&sp.permutation).to_dense();
            assert!(rel_diff2(sp.d_plus_r_dense().view(), pm.view()) == 0.0);

            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let y = Array1::from_shape_fn(2 * sp.half_len(), |_| C64::new(rng.random_range(-1.0..1.0), 0.0));
            let x = sp.solve_d(y.view());
            let h = sp.half_len();
            let mut d = Array2::zeros((2 * h, 2 * h));
            d.slice_mut(s![..h, ..h]).assign(&sp.d_down.to_dense());
            d.slice_mut(s![h.., h..]).assign(&sp.d_up.to_dense());
            assert!(rel_diff1(d.dot(&x).view(), y.view()) < 1e-12);
        }
        assert!(matches!(ops.assemble_polarized(Variant::Annihilator).unwrap().split(), Err(TraceError::NoSplit(_))));
    }

    #[test]
    fn jump_split_block_pattern() {
        let g = fake_greens(3, 2);
        let ops = TraceOperators::new(&g, None).unwrap();
        let sp = ops.assemble_polarized(Variant::Jump).unwrap().split().unwrap();
        // two interfaces: D_down couples interface 1 to interface 0 only
        let dd = sp.d_down.mask();
        let want = ndarray::array![
            [true, false, false, false],
            [false, true, false, false],
            [true, true, true, false],
            [true, true, false, true]
        ];
        assert_eq!(dd, want);
        let du = sp.d_up.mask();
        assert_eq!(du, want.t().to_owned());
    }

    #[test]
    fn too_few_layers_rejected() {
        let g = fake_greens(1, 2);
        assert!(matches!(TraceOperators::new(&g, None), Err(TraceError::TooFewLayers(1))));
    }
}
