//! Partitioned low-rank (PLR) compression: an adaptive quadtree whose leaves
//! hold truncated SVD factors, plus a flattened two-factor sparse form used
//! for fast products.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::{JobSvd, SVDDC};
use num_complex::Complex64 as C64;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlrError {
    #[error("invalid compression parameters: {0}")]
    Params(String),
    #[error("vector of length {got} applied to a {rows}x{cols} matrix")]
    Dimension { got: usize, rows: usize, cols: usize },
    #[error("SVD failed on a {rows}x{cols} block: {message}")]
    Svd { rows: usize, cols: usize, message: String },
    #[error("malformed PLR stream: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Low-rank factors of one tile: the tile equals `u * vt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub row0: usize,
    pub col0: usize,
    pub u: Array2<C64>,
    pub vt: Array2<C64>,
    /// Tile too small to split further; kept at its full numerical rank.
    pub minimal: bool,
}

impl Leaf {
    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.vt.ncols()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn stored(&self) -> usize {
        self.rank() * (self.rows() + self.cols())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(Leaf),
    Branch(Box<[Node; 4]>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub epsilon: f64,
    pub r_max: usize,
    pub root: Node,
}

/// Compresses `block` so that every leaf satisfies
/// `sigma_{r_max+1}(tile) < epsilon` (absolute threshold).
pub fn compress(block: ArrayView2<C64>, r_max: usize, epsilon: f64) -> Result<PlrMatrix, PlrError> {
    if r_max == 0 {
        return Err(PlrError::Params("r_max must be at least 1".into()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(PlrError::Params(format!("epsilon must be positive, got {epsilon}")));
    }
    if block.is_empty() {
        return Err(PlrError::Params("cannot compress an empty block".into()));
    }
    let root = build(block, 0, 0, r_max, epsilon)?;
    Ok(PlrMatrix { rows: block.nrows(), cols: block.ncols(), epsilon, r_max, root })
}

/// Like [`compress`] with the threshold `rel_epsilon * ||block||_2`.
pub fn compress_relative(block: ArrayView2<C64>, r_max: usize, rel_epsilon: f64) -> Result<PlrMatrix, PlrError> {
    let (_, sv, _) = svd(block, false)?;
    let top = sv.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return compress(block, r_max, f64::MIN_POSITIVE);
    }
    compress(block, r_max, rel_epsilon * top)
}

fn svd(block: ArrayView2<C64>, vectors: bool) -> Result<(Option<Array2<C64>>, Vec<f64>, Option<Array2<C64>>), PlrError> {
    let job = if vectors { JobSvd::Some } else { JobSvd::None };
    let owned = block.to_owned();
    let (u, sv, vt) = owned.svddc(job).map_err(|e| PlrError::Svd {
        rows: block.nrows(),
        cols: block.ncols(),
        message: e.to_string(),
    })?;
    Ok((u, sv.to_vec(), vt))
}

fn truncated_leaf(
    block: ArrayView2<C64>,
    row0: usize,
    col0: usize,
    epsilon: f64,
    minimal: bool,
) -> Result<Leaf, PlrError> {
    let (u, sv, vt) = svd(block, true)?;
    let (u, vt) = (u.expect("requested U"), vt.expect("requested Vt"));
    let r = sv.iter().take_while(|&&s| s >= epsilon).count();
    let mut us = u.slice(s![.., ..r]).to_owned();
    for (k, mut col) in us.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|z| z * sv[k]);
    }
    Ok(Leaf { row0, col0, u: us, vt: vt.slice(s![..r, ..]).to_owned(), minimal })
}

fn build(block: ArrayView2<C64>, row0: usize, col0: usize, r_max: usize, epsilon: f64) -> Result<Node, PlrError> {
    let (m, k) = block.dim();
    if m.min(k) <= 2 * r_max {
        return Ok(Node::Leaf(truncated_leaf(block, row0, col0, epsilon, true)?));
    }
    let (_, sv, _) = svd(block, false)?;
    if sv.get(r_max).is_none_or(|&s| s < epsilon) {
        return Ok(Node::Leaf(truncated_leaf(block, row0, col0, epsilon, false)?));
    }
    let (mh, kh) = (m / 2, k / 2);
    let quad = |r: std::ops::Range<usize>, c: std::ops::Range<usize>| {
        build(block.slice(s![r.clone(), c.clone()]), row0 + r.start, col0 + c.start, r_max, epsilon)
    };
    Ok(Node::Branch(Box::new([
        quad(0..mh, 0..kh)?,
        quad(0..mh, kh..k)?,
        quad(mh..m, 0..kh)?,
        quad(mh..m, kh..k)?,
    ])))
}

impl Node {
    fn visit<'a>(&'a self, depth: usize, f: &mut dyn FnMut(&'a Leaf, usize)) {
        match self {
            Node::Leaf(l) => f(l, depth),
            Node::Branch(ch) => ch.iter().for_each(|c| c.visit(depth + 1, f)),
        }
    }

    fn node_count(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Branch(ch) => 1 + ch.iter().map(Node::node_count).sum::<usize>(),
        }
    }
}

impl PlrMatrix {
    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        self.root.visit(0, &mut |l, _| out.push(l));
        out
    }

    pub fn stored_entries(&self) -> usize {
        self.leaves().iter().map(|l| l.stored()).sum()
    }

    fn check(&self, len: usize, want: usize) -> Result<(), PlrError> {
        if len != want {
            return Err(PlrError::Dimension { got: len, rows: self.rows, cols: self.cols });
        }
        Ok(())
    }

    /// Leaf-by-leaf product `y = A x`.
    pub fn matvec(&self, x: ArrayView1<C64>) -> Result<Array1<C64>, PlrError> {
        self.check(x.len(), self.cols)?;
        let mut y = Array1::zeros(self.rows);
        for l in self.leaves() {
            if l.rank() == 0 {
                continue;
            }
            let t = l.vt.dot(&x.slice(s![l.col0..l.col0 + l.cols()]));
            let mut ys = y.slice_mut(s![l.row0..l.row0 + l.rows()]);
            ys += &l.u.dot(&t);
        }
        Ok(y)
    }

    /// `y = A^H x`: factors swapped and conjugated.
    pub fn matvec_adjoint(&self, x: ArrayView1<C64>) -> Result<Array1<C64>, PlrError> {
        self.check(x.len(), self.rows)?;
        let mut y = Array1::zeros(self.cols);
        for l in self.leaves() {
            if l.rank() == 0 {
                continue;
            }
            let xs = x.slice(s![l.row0..l.row0 + l.rows()]);
            let t = l.u.t().mapv(|z| z.conj()).dot(&xs);
            let mut ys = y.slice_mut(s![l.col0..l.col0 + l.cols()]);
            ys += &l.vt.t().mapv(|z| z.conj()).dot(&t);
        }
        Ok(y)
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut a = Array2::zeros((self.rows, self.cols));
        for l in self.leaves() {
            a.slice_mut(s![l.row0..l.row0 + l.rows(), l.col0..l.col0 + l.cols()]).assign(&l.u.dot(&l.vt));
        }
        a
    }

    pub fn report(&self) -> CompressionReport {
        let mut rank_histogram = BTreeMap::new();
        let mut depth_histogram = BTreeMap::new();
        let mut stored = 0;
        let mut leaves = 0;
        self.root.visit(0, &mut |l, d| {
            *rank_histogram.entry(l.rank()).or_insert(0) += 1;
            *depth_histogram.entry(d).or_insert(0) += 1;
            stored += l.stored();
            leaves += 1;
        });
        CompressionReport {
            rows: self.rows,
            cols: self.cols,
            stored_entries: stored,
            ratio: stored as f64 / (self.rows * self.cols) as f64,
            leaves,
            rank_histogram,
            depth_histogram,
        }
    }

    pub fn to_sparse_form(&self) -> PlrSparseForm {
        let leaves = self.leaves();
        let total_rank: usize = leaves.iter().map(|l| l.rank()).sum();
        // V: one row per retained singular direction, entries on the leaf's columns
        let mut v = CsrBuilder::new(self.cols);
        // U: one row per matrix row, entries in the rank slots of leaves covering it
        let mut u_rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); self.rows];
        let mut slot = 0;
        for l in &leaves {
            for k in 0..l.rank() {
                v.push_row(l.vt.row(k).iter().enumerate().map(|(j, &z)| (l.col0 + j, z)));
                for i in 0..l.rows() {
                    u_rows[l.row0 + i].push((slot + k, l.u[[i, k]]));
                }
            }
            slot += l.rank();
        }
        let mut u = CsrBuilder::new(total_rank);
        for row in u_rows {
            u.push_row(row.into_iter());
        }
        PlrSparseForm { rows: self.rows, cols: self.cols, v: v.finish(), u: u.finish() }
    }

    /// Binary dump: magic `PLR1`, header, then preorder node records.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), PlrError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for v in [self.rows as u64, self.cols as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.epsilon.to_le_bytes())?;
        w.write_all(&(self.r_max as u64).to_le_bytes())?;
        w.write_all(&(self.root.node_count() as u64).to_le_bytes())?;
        write_node(&self.root, &mut w)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, PlrError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(PlrError::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(PlrError::Format(format!("unsupported version {version}")));
        }
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let epsilon = f64::from_le_bytes(read_bytes::<8, _>(&mut r)?);
        let r_max = read_u64(&mut r)? as usize;
        let nodes = read_u64(&mut r)? as usize;
        let mut seen = 0;
        let root = read_node(&mut r, &mut seen)?;
        if seen != nodes {
            return Err(PlrError::Format(format!("header promises {nodes} nodes, stream has {seen}")));
        }
        Ok(Self { rows, cols, epsilon, r_max, root })
    }
}

const MAGIC: &[u8; 4] = b"PLR1";
const FORMAT_VERSION: u32 = 1;

fn write_node<W: Write>(node: &Node, w: &mut W) -> Result<(), PlrError> {
    match node {
        Node::Branch(ch) => {
            w.write_all(&[1])?;
            for c in ch.iter() {
                write_node(c, w)?;
            }
        }
        Node::Leaf(l) => {
            w.write_all(&[0, u8::from(l.minimal)])?;
            for v in [l.row0, l.col0, l.rows(), l.cols(), l.rank()] {
                w.write_all(&(v as u64).to_le_bytes())?;
            }
            for z in l.u.iter().chain(l.vt.iter()) {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_bytes<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], PlrError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, PlrError> {
    Ok(u32::from_le_bytes(read_bytes::<4, _>(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, PlrError> {
    Ok(u64::from_le_bytes(read_bytes::<8, _>(r)?))
}

fn read_complex_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Array2<C64>, PlrError> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let re = f64::from_le_bytes(read_bytes::<8, _>(r)?);
        let im = f64::from_le_bytes(read_bytes::<8, _>(r)?);
        data.push(C64::new(re, im));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| PlrError::Format(e.to_string()))
}

fn read_node<R: Read>(r: &mut R, seen: &mut usize) -> Result<Node, PlrError> {
    *seen += 1;
    let [tag] = read_bytes::<1, _>(r)?;
    match tag {
        1 => {
            let a = read_node(r, seen)?;
            let b = read_node(r, seen)?;
            let c = read_node(r, seen)?;
            let d = read_node(r, seen)?;
            Ok(Node::Branch(Box::new([a, b, c, d])))
        }
        0 => {
            let [minimal] = read_bytes::<1, _>(r)?;
            let mut f = [0usize; 5];
            for v in f.iter_mut() {
                *v = read_u64(r)? as usize;
            }
            let [row0, col0, rows, cols, rank] = f;
            let u = read_complex_matrix(r, rows, rank)?;
            let vt = read_complex_matrix(r, rank, cols)?;
            Ok(Node::Leaf(Leaf { row0, col0, u, vt, minimal: minimal != 0 }))
        }
        t => Err(PlrError::Format(format!("unknown node tag {t}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionReport {
    pub rows: usize,
    pub cols: usize,
    pub stored_entries: usize,
    pub ratio: f64,
    pub leaves: usize,
    pub rank_histogram: BTreeMap<usize, usize>,
    pub depth_histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<C64>,
}

struct CsrBuilder(Csr);

impl CsrBuilder {
    fn new(ncols: usize) -> Self {
        Self(Csr { ncols, row_ptr: vec![0], col_idx: Vec::new(), vals: Vec::new() })
    }

    fn push_row(&mut self, entries: impl Iterator<Item = (usize, C64)>) {
        for (c, v) in entries {
            self.0.col_idx.push(c);
            self.0.vals.push(v);
        }
        self.0.row_ptr.push(self.0.col_idx.len());
    }

    fn finish(self) -> Csr {
        self.0
    }
}

impl Csr {
    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            *out = self.col_idx[span.clone()].iter().zip(&self.vals[span]).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    /// `y = A^H x` (scatter form).
    pub fn matvec_adjoint(&self, x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|v| *v = C64::default());
        for (r, &xr) in x.iter().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.vals[k].conj() * xr;
            }
        }
    }
}

/// Flattened PLR: `A = U V` with `V` stacking every leaf's `Vt` rows and `U`
/// placing every leaf's `U` columns in the matching rank slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PlrSparseForm {
    pub rows: usize,
    pub cols: usize,
    pub v: Csr,
    pub u: Csr,
}

impl PlrSparseForm {
    pub fn stored_entries(&self) -> usize {
        self.u.nnz() + self.v.nnz()
    }

    pub fn total_rank(&self) -> usize {
        self.v.nrows()
    }

    pub fn matvec(&self, x: ArrayView1<C64>) -> Result<Array1<C64>, PlrError> {
        if x.len() != self.cols {
            return Err(PlrError::Dimension { got: x.len(), rows: self.rows, cols: self.cols });
        }
        let xs = x.as_standard_layout();
        let mut t = vec![C64::default(); self.total_rank()];
        self.v.matvec(xs.as_slice().unwrap(), &mut t);
        let mut y = vec![C64::default(); self.rows];
        self.u.matvec(&t, &mut y);
        Ok(Array1::from(y))
    }

    pub fn matvec_adjoint(&self, x: ArrayView1<C64>) -> Result<Array1<C64>, PlrError> {
        if x.len() != self.rows {
            return Err(PlrError::Dimension { got: x.len(), rows: self.rows, cols: self.cols });
        }
        let xs = x.as_standard_layout();
        let mut t = vec![C64::default(); self.total_rank()];
        self.u.matvec_adjoint(xs.as_slice().unwrap(), &mut t);
        let mut y = vec![C64::default(); self.cols];
        self.v.matvec_adjoint(&t, &mut y);
        Ok(Array1::from(y))
    }
}
