//! Horizontal layering of the physical depth rows and the index maps between
//! global and per-layer storage.
//!
//! Layers are numbered from 0 here. Layer `l` owns global depths
//! `offset(l) + 1 ..= offset(l) + thickness(l)`; its local depth `j` maps to
//! global depth `offset(l) + j`.

use crate::grid::{ComplexGrid2D, GridError, Provenance, SquaredSlownessModel};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("cannot split {nz} depth rows into {layers} layers of at least 2 rows")]
    Infeasible { nz: usize, layers: usize },
    #[error("explicit offsets {0:?} must start at 0, end at nz, and increase by at least 2")]
    BadOffsets(Vec<usize>),
    #[error("local depth {j} is outside layer {layer} (allowed {lo}..={hi})")]
    DepthOutOfRange { layer: usize, j: isize, lo: isize, hi: isize },
    #[error("layer {0} does not exist")]
    NoSuchLayer(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Policy {
    Equal,
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPartition {
    offsets: Vec<usize>,
}

pub fn make_partition(nz: usize, layers: usize, policy: Policy) -> Result<LayerPartition, PartitionError> {
    match policy {
        Policy::Equal => {
            if layers == 0 || nz < 2 * layers {
                return Err(PartitionError::Infeasible { nz, layers });
            }
            let base = nz / layers;
            let extra = nz % layers;
            let mut offsets = vec![0];
            for l in 0..layers {
                let t = base + usize::from(l < extra);
                offsets.push(offsets[l] + t);
            }
            Ok(LayerPartition { offsets })
        }
        Policy::Explicit(offsets) => {
            let ok = offsets.len() >= 2
                && offsets[0] == 0
                && *offsets.last().unwrap() == nz
                && offsets.windows(2).all(|w| w[1] >= w[0] + 2);
            if !ok || offsets.len() != layers + 1 {
                return Err(PartitionError::BadOffsets(offsets));
            }
            Ok(LayerPartition { offsets })
        }
    }
}

impl LayerPartition {
    pub fn layer_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn interface_count(&self) -> usize {
        self.layer_count() - 1
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    pub fn thickness(&self, l: usize) -> usize {
        self.offsets[l + 1] - self.offsets[l]
    }

    pub fn thicknesses(&self) -> Vec<usize> {
        (0..self.layer_count()).map(|l| self.thickness(l)).collect()
    }

    pub fn nz(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn local_to_global_depth(&self, l: usize, j: isize, n_pml: usize) -> Result<isize, PartitionError> {
        if l >= self.layer_count() {
            return Err(PartitionError::NoSuchLayer(l));
        }
        let lo = 1 - n_pml as isize;
        let hi = (self.thickness(l) + n_pml) as isize;
        if j < lo || j > hi {
            return Err(PartitionError::DepthOutOfRange { layer: l, j, lo, hi });
        }
        Ok(self.offset(l) as isize + j)
    }

    /// Owning layer and local depth of physical global depth `q` (`1..=nz`).
    pub fn global_to_local_depth(&self, q: usize) -> Option<(usize, isize)> {
        if q == 0 || q > self.nz() {
            return None;
        }
        let l = self.offsets.partition_point(|&o| o < q) - 1;
        Some((l, (q - self.offsets[l]) as isize))
    }

    /// Grid of layer `l`: same x geometry, `thickness(l)` interior depth rows.
    pub fn local_grid(&self, grid: &ComplexGrid2D, l: usize) -> Result<ComplexGrid2D, PartitionError> {
        Ok(grid.with_depth(self.thickness(l))?)
    }

    /// Layer slowness: rows `1..=n` copied from the global model, replicated
    /// upward from row 1 and downward from row `n`.
    pub fn extended_slowness(
        &self,
        grid: &ComplexGrid2D,
        m: &SquaredSlownessModel,
        l: usize,
    ) -> Result<SquaredSlownessModel, PartitionError> {
        m.check_shape(grid)?;
        let local = self.local_grid(grid, l)?;
        let n = self.thickness(l) as isize;
        let off = self.offset(l) as isize;
        let mut values = Array2::zeros((local.nz_ext(), grid.nx_ext()));
        for iz in 0..local.nz_ext() {
            let j = (iz as isize + 1 - grid.n_pml as isize).clamp(1, n);
            values.row_mut(iz).assign(&m.values.row(grid.depth_row(off + j)));
        }
        Ok(SquaredSlownessModel { values, provenance: Provenance::NormalExtended })
    }

    /// `f` times the indicator of layer `l`, on the layer's extended grid.
    pub fn restrict_source(&self, grid: &ComplexGrid2D, f: &Array2<C64>, l: usize) -> Array2<C64> {
        let local = grid.with_depth(self.thickness(l)).expect("valid layer grid");
        let mut out = Array2::zeros((local.nz_ext(), grid.nx_ext()));
        let off = self.offset(l) as isize;
        for j in 1..=self.thickness(l) as isize {
            out.row_mut(local.depth_row(j)).assign(&f.row(grid.depth_row(off + j)));
        }
        out
    }

    /// Places interior rows `1..=n` of a layer field into a zero global field.
    pub fn pad_to_global(&self, grid: &ComplexGrid2D, local_rows: &Array2<C64>, l: usize) -> Array2<C64> {
        let mut out = Array2::zeros((grid.nz_ext(), grid.nx_ext()));
        let off = self.offset(l) as isize;
        for j in 1..=self.thickness(l) as isize {
            out.row_mut(grid.depth_row(off + j)).assign(&local_rows.row((j - 1) as usize));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_partitions() {
        assert_eq!(make_partition(12, 3, Policy::Equal).unwrap().thicknesses(), vec![4, 4, 4]);
        assert_eq!(make_partition(13, 3, Policy::Equal).unwrap().thicknesses(), vec![5, 4, 4]);
        assert_eq!(make_partition(14, 3, Policy::Equal).unwrap().thicknesses(), vec![5, 5, 4]);
        assert!(make_partition(5, 3, Policy::Equal).is_err());
        assert!(make_partition(5, 0, Policy::Equal).is_err());
    }

    #[test]
    fn explicit_offsets_validated() {
        assert!(make_partition(10, 2, Policy::Explicit(vec![0, 3, 10])).is_ok());
        assert!(make_partition(10, 2, Policy::Explicit(vec![0, 1, 10])).is_err());
        assert!(make_partition(10, 2, Policy::Explicit(vec![0, 5, 9])).is_err());
        assert!(make_partition(10, 3, Policy::Explicit(vec![0, 5, 10])).is_err());
    }

    #[test]
    fn depth_maps() {
        let p = make_partition(12, 3, Policy::Equal).unwrap();
        assert_eq!(p.local_to_global_depth(0, 1, 2).unwrap(), 1);
        assert_eq!(p.local_to_global_depth(1, 0, 2).unwrap(), 4);
        assert!(p.local_to_global_depth(1, -2, 2).is_err());
        assert!(p.local_to_global_depth(1, 7, 2).is_err());
        assert!(p.local_to_global_depth(3, 1, 2).is_err());
        // continuity aliasing across each interface
        for l in 0..2 {
            let n = p.thickness(l) as isize;
            assert_eq!(p.local_to_global_depth(l, n, 2).unwrap(), p.local_to_global_depth(l + 1, 0, 2).unwrap());
            assert_eq!(p.local_to_global_depth(l, n + 1, 2).unwrap(), p.local_to_global_depth(l + 1, 1, 2).unwrap());
        }
        for q in 1..=12 {
            let (l, j) = p.global_to_local_depth(q).unwrap();
            assert!(j >= 1 && j <= p.thickness(l) as isize);
            assert_eq!(p.local_to_global_depth(l, j, 1).unwrap(), q as isize);
        }
        assert!(p.global_to_local_depth(0).is_none());
        assert!(p.global_to_local_depth(13).is_none());
    }

    #[test]
    fn slowness_extension() {
        let g = ComplexGrid2D::new(3, 6, 0.1, 2).unwrap();
        let interior = Array2::from_shape_fn((6, 3), |(q, p)| 1.0 + q as f64 + 0.1 * p as f64);
        let m = SquaredSlownessModel::normal_extended(&g, &interior).unwrap();
        let p = make_partition(6, 2, Policy::Equal).unwrap();
        let mt = p.extended_slowness(&g, &m, 1).unwrap();
        assert_eq!(mt.values.dim(), (7, 7));
        // local rows 1..=3 are global rows 4..=6 (interior indices 3..=5)
        assert_eq!(mt.values[[2, 2]], interior[[3, 0]]);
        assert_eq!(mt.values[[0, 2]], interior[[3, 0]]);
        assert_eq!(mt.values[[6, 4]], interior[[5, 2]]);
        assert_eq!(mt.provenance, Provenance::NormalExtended);
    }

    #[test]
    fn point_source_restriction() {
        let g = ComplexGrid2D::new(4, 9, 0.1, 1).unwrap();
        let p = make_partition(9, 3, Policy::Equal).unwrap();
        let mut f = Array2::zeros((g.nz_ext(), g.nx_ext()));
        f[[g.depth_row(5), 2]] = C64::new(1.0, 0.0);
        let f0 = p.restrict_source(&g, &f, 0);
        let f1 = p.restrict_source(&g, &f, 1);
        let f2 = p.restrict_source(&g, &f, 2);
        assert!(f0.iter().all(|v| *v == C64::default()));
        assert!(f2.iter().all(|v| *v == C64::default()));
        assert_eq!(f1.iter().filter(|v| **v != C64::default()).count(), 1);
    }
}
