//! Finite-difference Helmholtz operators on a PML-padded grid.
//!
//! Two formulations are assembled from the same coefficients: the
//! unsymmetric one used by the solver, and a symmetric one obtained by
//! dividing every row by `alpha_x * alpha_z`.

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("slowness model is {got_rows}x{got_cols} but the extended grid is {want_rows}x{want_cols}")]
    DimensionMismatch {
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("squared slowness {value} at (row {row}, col {col}) is not positive and finite")]
    InvalidSlowness { row: usize, col: usize, value: f64 },
    #[error("layer has {0} depth rows, at least 2 are required")]
    LayerTooThin(usize),
    #[error("angular frequency must be positive and finite, got {0}")]
    InvalidFrequency(f64),
}

/// Interior grid plus PML padding on every side.
///
/// Interior points sit at `x_p = p h` for `p = 1..=nx` (same in z). PML points
/// extend `n_pml` rows/columns outward; the homogeneous Dirichlet ring one
/// step further out is eliminated. Storage index of interior point `p` is
/// `p + n_pml - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexGrid2D {
    pub nx: usize,
    pub nz: usize,
    pub h: f64,
    pub n_pml: usize,
}

impl ComplexGrid2D {
    pub fn new(nx: usize, nz: usize, h: f64, n_pml: usize) -> Result<Self, GridError> {
        if nx == 0 || nz == 0 {
            return Err(GridError::InvalidGrid(format!(
                "interior counts must be positive (nx={nx}, nz={nz})"
            )));
        }
        if n_pml == 0 {
            return Err(GridError::InvalidGrid("n_pml must be at least 1".into()));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(GridError::InvalidGrid(format!("grid step must be positive, got {h}")));
        }
        Ok(Self { nx, nz, h, n_pml })
    }

    /// Square `n x n` interior grid on the unit square, `h = 1/(n+1)`.
    pub fn unit_square(n: usize, n_pml: usize) -> Result<Self, GridError> {
        Self::new(n, n, 1.0 / (n as f64 + 1.0), n_pml)
    }

    pub fn lx(&self) -> f64 {
        (self.nx as f64 + 1.0) * self.h
    }

    pub fn lz(&self) -> f64 {
        (self.nz as f64 + 1.0) * self.h
    }

    pub fn nx_ext(&self) -> usize {
        self.nx + 2 * self.n_pml
    }

    pub fn nz_ext(&self) -> usize {
        self.nz + 2 * self.n_pml
    }

    /// Total number of unknowns on the extended grid.
    pub fn len(&self) -> usize {
        self.nx_ext() * self.nz_ext()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// PML thickness, `n_pml * h`.
    pub fn delta(&self) -> f64 {
        self.n_pml as f64 * self.h
    }

    pub fn x_coord(&self, ix: usize) -> f64 {
        self.x_at(ix as f64)
    }

    pub fn z_coord(&self, iz: usize) -> f64 {
        self.x_at(iz as f64)
    }

    /// Coordinate of a possibly half-integer storage index; both axes share
    /// the same map. Midpoints computed this way are bit-identical from
    /// either neighbour.
    pub fn x_at(&self, index: f64) -> f64 {
        (index - self.n_pml as f64 + 1.0) * self.h
    }

    /// Same horizontal geometry with a different number of interior depth rows.
    pub fn with_depth(&self, nz: usize) -> Result<Self, GridError> {
        Self::new(self.nx, nz, self.h, self.n_pml)
    }

    /// Storage index of signed depth `q` (interior rows are `1..=nz`).
    pub fn depth_row(&self, q: isize) -> usize {
        let r = q + self.n_pml as isize - 1;
        debug_assert!(r >= 0 && (r as usize) < self.nz_ext());
        r as usize
    }

    pub fn index(&self, ix: usize, iz: usize) -> usize {
        iz * self.nx_ext() + ix
    }
}

/// PML absorption parameters: `sigma(x) = (C/delta) (x/delta)^2` outside the
/// physical interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmlProfile {
    pub c: f64,
    pub delta: f64,
    pub omega: f64,
}

impl PmlProfile {
    pub fn new(grid: &ComplexGrid2D, c: f64, omega: f64) -> Result<Self, GridError> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(GridError::InvalidFrequency(omega));
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(GridError::InvalidGrid(format!("PML strength must be >= 0, got {c}")));
        }
        Ok(Self { c, delta: grid.delta(), omega })
    }
}

/// Damping profile along one axis of physical extent `[0, extent]`.
pub fn sigma(x: f64, extent: f64, profile: &PmlProfile) -> f64 {
    let d = profile.delta;
    if x < 0.0 {
        let t = x / d;
        profile.c / d * t * t
    } else if x > extent {
        let t = (x - extent) / d;
        profile.c / d * t * t
    } else {
        0.0
    }
}

/// Complex stretching factor `1 / (1 + i sigma / omega)`.
pub fn alpha(x: f64, extent: f64, profile: &PmlProfile) -> C64 {
    let s = sigma(x, extent, profile);
    if s == 0.0 {
        return C64::new(1.0, 0.0);
    }
    C64::new(1.0, 0.0) / C64::new(1.0, s / profile.omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Form {
    Unsymmetric,
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    GivenOnExtended,
    NormalExtended,
}

/// Squared slowness `m = 1/c^2` sampled on the extended grid, stored with
/// depth as the row index.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredSlownessModel {
    pub values: Array2<f64>,
    pub provenance: Provenance,
}

impl SquaredSlownessModel {
    pub fn given_on_extended(values: Array2<f64>) -> Result<Self, GridError> {
        validate_positive(&values)?;
        Ok(Self { values, provenance: Provenance::GivenOnExtended })
    }

    /// Pads interior samples (`nz x nx`) by replicating the nearest boundary value.
    pub fn normal_extended(grid: &ComplexGrid2D, interior: &Array2<f64>) -> Result<Self, GridError> {
        if interior.dim() != (grid.nz, grid.nx) {
            return Err(GridError::DimensionMismatch {
                got_rows: interior.nrows(),
                got_cols: interior.ncols(),
                want_rows: grid.nz,
                want_cols: grid.nx,
            });
        }
        validate_positive(interior)?;
        let np = grid.n_pml;
        let values = Array2::from_shape_fn((grid.nz_ext(), grid.nx_ext()), |(iz, ix)| {
            let q = iz.saturating_sub(np).min(grid.nz - 1);
            let p = ix.saturating_sub(np).min(grid.nx - 1);
            interior[[q, p]]
        });
        Ok(Self { values, provenance: Provenance::NormalExtended })
    }

    /// Samples a velocity function `c(x, z)` at interior points, then pads.
    pub fn from_velocity<F: Fn(f64, f64) -> f64>(grid: &ComplexGrid2D, c: F) -> Result<Self, GridError> {
        let interior = Array2::from_shape_fn((grid.nz, grid.nx), |(q, p)| {
            let v = c((p + 1) as f64 * grid.h, (q + 1) as f64 * grid.h);
            1.0 / (v * v)
        });
        Self::normal_extended(grid, &interior)
    }

    pub fn constant(grid: &ComplexGrid2D, m: f64) -> Result<Self, GridError> {
        Self::normal_extended(grid, &Array2::from_elem((grid.nz, grid.nx), m))
    }

    pub fn check_shape(&self, grid: &ComplexGrid2D) -> Result<(), GridError> {
        if self.values.dim() != (grid.nz_ext(), grid.nx_ext()) {
            return Err(GridError::DimensionMismatch {
                got_rows: self.values.nrows(),
                got_cols: self.values.ncols(),
                want_rows: grid.nz_ext(),
                want_cols: grid.nx_ext(),
            });
        }
        Ok(())
    }

    /// Largest wave speed present in the model.
    pub fn max_velocity(&self) -> f64 {
        let m_min = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        1.0 / m_min.sqrt()
    }
}

fn validate_positive(values: &Array2<f64>) -> Result<(), GridError> {
    for ((row, col), &value) in values.indexed_iter() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(GridError::InvalidSlowness { row, col, value });
        }
    }
    Ok(())
}

/// Five-point stencil coefficients per extended-grid node.
///
/// `north` couples to depth row `iz - 1`, `south` to `iz + 1`.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub center: Array2<C64>,
    pub west: Array2<C64>,
    pub east: Array2<C64>,
    pub north: Array2<C64>,
    pub south: Array2<C64>,
}

pub fn stencil(
    grid: &ComplexGrid2D,
    m: &SquaredSlownessModel,
    profile: &PmlProfile,
    form: Form,
) -> Result<Stencil, GridError> {
    m.check_shape(grid)?;
    let (nze, nxe) = (grid.nz_ext(), grid.nx_ext());
    let h = grid.h;
    let h2 = h * h;
    let (lx, lz) = (grid.lx(), grid.lz());
    let w2 = profile.omega * profile.omega;

    let ax: Vec<[C64; 3]> = (0..nxe)
        .map(|ix| {
            let i = ix as f64;
            [
                alpha(grid.x_at(i - 0.5), lx, profile),
                alpha(grid.x_at(i), lx, profile),
                alpha(grid.x_at(i + 0.5), lx, profile),
            ]
        })
        .collect();
    let az: Vec<[C64; 3]> = (0..nze)
        .map(|iz| {
            let i = iz as f64;
            [
                alpha(grid.x_at(i - 0.5), lz, profile),
                alpha(grid.x_at(i), lz, profile),
                alpha(grid.x_at(i + 0.5), lz, profile),
            ]
        })
        .collect();

    let zero = Array2::<C64>::zeros((nze, nxe));
    let mut st = Stencil {
        center: zero.clone(),
        west: zero.clone(),
        east: zero.clone(),
        north: zero.clone(),
        south: zero,
    };
    for iz in 0..nze {
        let [zm, z0, zp] = az[iz];
        for ix in 0..nxe {
            let [xm, x0, xp] = ax[ix];
            let mass = w2 * m.values[[iz, ix]];
            let (w, e, n, s, c) = match form {
                Form::Unsymmetric => (
                    -x0 * xm / h2,
                    -x0 * xp / h2,
                    -z0 * zm / h2,
                    -z0 * zp / h2,
                    x0 * (xm + xp) / h2 + z0 * (zm + zp) / h2 - mass,
                ),
                Form::Symmetric => (
                    -xm / (z0 * h2),
                    -xp / (z0 * h2),
                    -zm / (x0 * h2),
                    -zp / (x0 * h2),
                    (xm + xp) / (z0 * h2) + (zm + zp) / (x0 * h2) - mass / (x0 * z0),
                ),
            };
            st.west[[iz, ix]] = w;
            st.east[[iz, ix]] = e;
            st.north[[iz, ix]] = n;
            st.south[[iz, ix]] = s;
            st.center[[iz, ix]] = c;
        }
    }
    Ok(st)
}

/// Compressed-row sparse operator over the extended grid (x fastest).
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub nx_ext: usize,
    pub nz_ext: usize,
    pub form: Form,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOperator {
    pub fn from_stencil(st: &Stencil, form: Form) -> Self {
        let (nze, nxe) = st.center.dim();
        let mut row_ptr = Vec::with_capacity(nze * nxe + 1);
        let mut col_idx = Vec::with_capacity(5 * nze * nxe);
        let mut vals = Vec::with_capacity(5 * nze * nxe);
        row_ptr.push(0);
        for iz in 0..nze {
            for ix in 0..nxe {
                let me = iz * nxe + ix;
                if iz > 0 {
                    col_idx.push(me - nxe);
                    vals.push(st.north[[iz, ix]]);
                }
                if ix > 0 {
                    col_idx.push(me - 1);
                    vals.push(st.west[[iz, ix]]);
                }
                col_idx.push(me);
                vals.push(st.center[[iz, ix]]);
                if ix + 1 < nxe {
                    col_idx.push(me + 1);
                    vals.push(st.east[[iz, ix]]);
                }
                if iz + 1 < nze {
                    col_idx.push(me + nxe);
                    vals.push(st.south[[iz, ix]]);
                }
                row_ptr.push(col_idx.len());
            }
        }
        Self { nx_ext: nxe, nz_ext: nze, form, row_ptr, col_idx, vals }
    }

    pub fn dim(&self) -> usize {
        self.nx_ext * self.nz_ext
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(column, value)` pairs of one row, columns ascending.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.row(r).find(|&(j, _)| j == c).map(|(_, v)| v).unwrap_or_default()
    }

    pub fn matvec(&self, x: ArrayView1<C64>) -> Array1<C64> {
        assert_eq!(x.len(), self.dim(), "operator/vector dimension mismatch");
        Array1::from_shape_fn(self.dim(), |r| self.row(r).map(|(c, v)| v * x[c]).sum())
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let n = self.dim();
        let mut a = Array2::zeros((n, n));
        for r in 0..n {
            for (c, v) in self.row(r) {
                a[[r, c]] = v;
            }
        }
        a
    }

    /// `max |A - A^T| / max |A|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for r in 0..self.dim() {
            for (c, v) in self.row(r) {
                scale = scale.max(v.norm());
                diff = diff.max((v - self.get(c, r)).norm());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }
}

pub fn assemble_global(
    grid: &ComplexGrid2D,
    m: &SquaredSlownessModel,
    profile: &PmlProfile,
    form: Form,
) -> Result<SparseOperator, GridError> {
    Ok(SparseOperator::from_stencil(&stencil(grid, m, profile, form)?, form))
}

/// Operator of one layer: the layer's depth rows padded by their own z-PML.
///
/// `grid` describes the global horizontal geometry; `m_tilde` must already be
/// sampled on the layer's extended grid.
pub fn assemble_local(
    grid: &ComplexGrid2D,
    m_tilde: &SquaredSlownessModel,
    layer_depth_count: usize,
    profile: &PmlProfile,
    form: Form,
) -> Result<SparseOperator, GridError> {
    if layer_depth_count < 2 {
        return Err(GridError::LayerTooThin(layer_depth_count));
    }
    let local = grid.with_depth(layer_depth_count)?;
    assemble_global(&local, m_tilde, profile, form)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: usize, np: usize) -> (ComplexGrid2D, PmlProfile) {
        let g = ComplexGrid2D::unit_square(n, np).unwrap();
        let p = PmlProfile::new(&g, 30.0, 12.0).unwrap();
        (g, p)
    }

    #[test]
    fn sigma_branches() {
        let p = PmlProfile { c: 7.0, delta: 0.2, omega: 3.0 };
        assert_eq!(sigma(0.5, 1.0, &p), 0.0);
        assert!((sigma(-0.2, 1.0, &p) - 7.0 / 0.2).abs() < 1e-12);
        assert!((sigma(-0.1, 1.0, &p) - 7.0 / (4.0 * 0.2)).abs() < 1e-12);
        assert!((sigma(1.2, 1.0, &p) - 7.0 / 0.2).abs() < 1e-12);
        assert_eq!(sigma(0.0, 1.0, &p), 0.0);
        assert_eq!(sigma(1.0, 1.0, &p), 0.0);
    }

    #[test]
    fn alpha_values() {
        let p = PmlProfile { c: 1.0, delta: 1.0, omega: 10.0 };
        assert_eq!(alpha(0.3, 1.0, &p), C64::new(1.0, 0.0));
        // sigma = 3 omega at x = -sqrt(30)/10 with c/delta = 1
        let x = -(30.0f64).sqrt();
        let a = alpha(x, 1.0, &p);
        assert!((a - C64::new(0.1, -0.3)).norm() < 1e-14);
        let p1 = PmlProfile { c: 10.0, delta: 1.0, omega: 10.0 };
        assert!((alpha(-1.0, 1.0, &p1) - C64::new(0.5, -0.5)).norm() < 1e-15);
    }

    #[test]
    fn laplacian_kills_constants() {
        let g = ComplexGrid2D::unit_square(6, 2).unwrap();
        let m = SquaredSlownessModel::constant(&g, 1.0).unwrap();
        let prof = PmlProfile::new(&g, 20.0, 5.0).unwrap();
        let mut st = stencil(&g, &m, &prof, Form::Unsymmetric).unwrap();
        // drop the mass term: constant m = 1 contributes omega^2 on the diagonal
        st.center.mapv_inplace(|c| c + 25.0);
        let op = SparseOperator::from_stencil(&st, Form::Unsymmetric);
        let u = Array1::from_elem(g.len(), C64::new(1.0, 0.0));
        let hu = op.matvec(u.view());
        for q in 1..=g.nz as isize {
            for p in 1..=g.nx as isize {
                let r = g.index(g.depth_row(p), g.depth_row(q));
                assert!(hu[r].norm() < 1e-9, "row {r}: {}", hu[r]);
            }
        }
    }

    #[test]
    fn interior_center_coefficient() {
        let (g, p) = setup(8, 3);
        let m = SquaredSlownessModel::constant(&g, 1.0).unwrap();
        let op = assemble_global(&g, &m, &p, Form::Unsymmetric).unwrap();
        let r = g.index(g.depth_row(4), g.depth_row(4));
        let h2 = g.h * g.h;
        let want = 4.0 / h2 - p.omega * p.omega;
        assert!((op.get(r, r) - C64::new(want, 0.0)).norm() < 1e-9 * want.abs());
        assert_eq!(op.row(r).count(), 5);
        assert!((op.get(r, r + 1) + 1.0 / h2).norm() < 1e-9 / h2);
    }

    #[test]
    fn symmetric_form_is_symmetric() {
        let (g, p) = setup(7, 4);
        let m = SquaredSlownessModel::from_velocity(&g, |x, z| 1.0 + 0.3 * x + 0.2 * z).unwrap();
        let op = assemble_global(&g, &m, &p, Form::Symmetric).unwrap();
        assert!(op.asymmetry() <= 1e-14);
        let un = assemble_global(&g, &m, &p, Form::Unsymmetric).unwrap();
        assert!(un.asymmetry() > 1e-6);
    }

    #[test]
    fn symmetric_is_row_scaled_unsymmetric() {
        let (g, p) = setup(5, 3);
        let m = SquaredSlownessModel::constant(&g, 0.8).unwrap();
        let s = assemble_global(&g, &m, &p, Form::Symmetric).unwrap();
        let u = assemble_global(&g, &m, &p, Form::Unsymmetric).unwrap();
        for iz in 0..g.nz_ext() {
            for ix in 0..g.nx_ext() {
                let scale = alpha(g.x_coord(ix), g.lx(), &p) * alpha(g.z_coord(iz), g.lz(), &p);
                let r = g.index(ix, iz);
                for (c, v) in u.row(r) {
                    let w = s.get(r, c);
                    assert!((w - v / scale).norm() <= 1e-12 * v.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn normal_extension_replicates_boundary() {
        let g = ComplexGrid2D::new(3, 2, 0.25, 2).unwrap();
        let interior = Array2::from_shape_fn((2, 3), |(q, p)| 1.0 + q as f64 * 10.0 + p as f64);
        let m = SquaredSlownessModel::normal_extended(&g, &interior).unwrap();
        assert_eq!(m.values.dim(), (6, 7));
        assert_eq!(m.values[[0, 0]], 1.0);
        assert_eq!(m.values[[5, 6]], 13.0);
        assert_eq!(m.values[[2, 2]], 1.0);
        assert_eq!(m.values[[3, 3]], 12.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ComplexGrid2D::new(0, 3, 0.1, 1).is_err());
        assert!(ComplexGrid2D::new(3, 3, 0.1, 0).is_err());
        let g = ComplexGrid2D::unit_square(4, 2).unwrap();
        let bad = Array2::from_elem((3, 3), 1.0);
        assert!(matches!(
            SquaredSlownessModel::given_on_extended(bad).unwrap().check_shape(&g),
            Err(GridError::DimensionMismatch { .. })
        ));
        let neg = Array2::from_elem((4, 4), -1.0);
        assert!(SquaredSlownessModel::normal_extended(&g, &neg).is_err());
        let p = PmlProfile::new(&g, 10.0, 3.0).unwrap();
        let m = SquaredSlownessModel::constant(&g.with_depth(1).unwrap(), 1.0).unwrap();
        assert_eq!(assemble_local(&g, &m, 1, &p, Form::Unsymmetric).err(), Some(GridError::LayerTooThin(1)));
    }
}
