//! Small dense helpers on top of LAPACK.

use lax::layout::MatrixLayout;
use lax::Lapack;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64 as C64;

/// Inverse through partially pivoted LU, with the pivot range for
/// singularity diagnostics.
pub struct PivotedInverse {
    pub inverse: Array2<C64>,
    pub min_pivot: f64,
    pub max_pivot: f64,
}

pub fn invert(a: ArrayView2<C64>) -> Result<PivotedInverse, lax::error::Error> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "invert needs a square matrix");
    let mut buf: Vec<C64> = a.iter().copied().collect();
    let layout = MatrixLayout::C { row: n as i32, lda: n as i32 };
    let piv = C64::lu(layout, &mut buf)?;
    let (mut min_pivot, mut max_pivot) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let p = buf[i * n + i].norm();
        min_pivot = min_pivot.min(p);
        max_pivot = max_pivot.max(p);
    }
    <C64 as Lapack>::inv(layout, &mut buf, &piv)?;
    let inverse = Array2::from_shape_vec((n, n), buf).expect("square buffer");
    Ok(PivotedInverse { inverse, min_pivot, max_pivot })
}

/// Solves `A X = B` by pivoted LU without forming the inverse.
/// Returns the solution and a reciprocal condition estimate in the 1-norm.
pub fn solve(a: ArrayView2<C64>, b: ArrayView2<C64>) -> Result<(Array2<C64>, f64), lax::error::Error> {
    use lax::NormType;
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.nrows());
    // column-major copies so every right-hand side is contiguous
    let mut lu: Vec<C64> = a.t().iter().copied().collect();
    let layout = MatrixLayout::F { col: n as i32, lda: n as i32 };
    let anorm = C64::opnorm(NormType::One, layout, &lu);
    let piv = C64::lu(layout, &mut lu)?;
    let rcond = C64::rcond(layout, &lu, anorm)?;
    let mut x = Array2::zeros(b.raw_dim());
    for (k, col) in b.columns().into_iter().enumerate() {
        let mut rhs: Vec<C64> = col.iter().copied().collect();
        C64::solve(layout, lax::Transpose::No, &lu, &piv, &mut rhs)?;
        x.column_mut(k).assign(&Array1::from(rhs));
    }
    Ok((x, rcond))
}

pub fn norm2(v: ArrayView1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn frobenius(a: ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `||a - b|| / ||b||` in the Frobenius norm (0 when both vanish).
pub fn rel_diff2(a: ArrayView2<C64>, b: ArrayView2<C64>) -> f64 {
    let d = frobenius((&a - &b).view());
    let s = frobenius(b);
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

pub fn rel_diff1(a: ArrayView1<C64>, b: ArrayView1<C64>) -> f64 {
    let d = norm2((&a - &b).view());
    let s = norm2(b);
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

pub fn max_abs(a: impl IntoIterator<Item = C64>) -> f64 {
    a.into_iter().map(|z| z.norm()).fold(0.0, f64::max)
}
