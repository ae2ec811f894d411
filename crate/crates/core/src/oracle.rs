//! Independent 1D reference computations: tridiagonal inverses through the
//! leading/trailing minor recurrences, the 1D discrete Green's representation
//! and the summation-by-parts identity.

use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("tridiagonal arrays have inconsistent lengths (sub {sub}, diag {diag}, sup {sup})")]
    Shape { sub: usize, diag: usize, sup: usize },
    #[error("tridiagonal matrix is singular (determinant vanishes)")]
    Singular,
    #[error("index ({0}, {1}) outside the matrix")]
    Index(usize, usize),
}

/// Tridiagonal matrix with 1-based rows: `H[i][i] = diag[i-1]`,
/// `H[i][i-1] = sub[i-2]` (`a_i`), `H[i][i+1] = sup[i-1]` (`c_i`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiag1D {
    pub sub: Vec<C64>,
    pub diag: Vec<C64>,
    pub sup: Vec<C64>,
}

/// Minors can overflow; values are kept as `mantissa * 1e150^exponent`.
const RESCALE: f64 = 1e150;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scaled {
    m: C64,
    e: i32,
}

impl Scaled {
    fn value_ratio(num: [Scaled; 2], den: Scaled) -> C64 {
        let e = num[0].e + num[1].e - den.e;
        num[0].m * num[1].m / den.m * RESCALE.powi(e)
    }
}

/// Leading minors `theta_0..=theta_n` and trailing minors `phi_1..=phi_{n+1}`.
#[derive(Debug, Clone)]
pub struct Minors {
    theta: Vec<Scaled>,
    phi: Vec<Scaled>,
}

impl Minors {
    /// `theta_i` for `0 <= i <= n` (unscaled; may overflow for large n).
    pub fn theta(&self, i: usize) -> C64 {
        let s = self.theta[i];
        s.m * RESCALE.powi(s.e)
    }

    /// `phi_i` for `1 <= i <= n + 1`.
    pub fn phi(&self, i: usize) -> C64 {
        let s = self.phi[i - 1];
        s.m * RESCALE.powi(s.e)
    }
}

impl Tridiag1D {
    pub fn new(sub: Vec<C64>, diag: Vec<C64>, sup: Vec<C64>) -> Result<Self, OracleError> {
        let n = diag.len();
        if n == 0 || sub.len() + 1 != n || sup.len() + 1 != n {
            return Err(OracleError::Shape { sub: sub.len(), diag: n, sup: sup.len() });
        }
        Ok(Self { sub, diag, sup })
    }

    pub fn symmetric(diag: Vec<C64>, off: Vec<C64>) -> Result<Self, OracleError> {
        Self::new(off.clone(), diag, off)
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `a_i`, the coupling of row `i` to row `i - 1` (`2 <= i <= n`).
    pub fn a(&self, i: usize) -> C64 {
        self.sub[i - 2]
    }

    pub fn b(&self, i: usize) -> C64 {
        self.diag[i - 1]
    }

    /// `c_i`, the coupling of row `i` to row `i + 1` (`1 <= i <= n - 1`).
    pub fn c(&self, i: usize) -> C64 {
        self.sup[i - 1]
    }

    pub fn to_dense(&self) -> Vec<Vec<C64>> {
        let n = self.len();
        let mut m = vec![vec![C64::default(); n]; n];
        for i in 1..=n {
            m[i - 1][i - 1] = self.b(i);
            if i > 1 {
                m[i - 1][i - 2] = self.a(i);
            }
            if i < n {
                m[i - 1][i] = self.c(i);
            }
        }
        m
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let n = self.len();
        (1..=n)
            .map(|i| {
                let mut s = self.b(i) * x[i - 1];
                if i > 1 {
                    s += self.a(i) * x[i - 2];
                }
                if i < n {
                    s += self.c(i) * x[i];
                }
                s
            })
            .collect()
    }
}

/// `theta_i = b_i theta_{i-1} - a_i c_{i-1} theta_{i-2}` forward from
/// `theta_{-1} = 0, theta_0 = 1`, and the mirrored recurrence for `phi`
/// backward from `phi_{n+2} = 0, phi_{n+1} = 1`.
pub fn theta_phi(tri: &Tridiag1D) -> Minors {
    let n = tri.len();
    let one = Scaled { m: C64::new(1.0, 0.0), e: 0 };
    let zero = Scaled { m: C64::default(), e: 0 };

    let mut theta = vec![one];
    let mut prev2 = zero;
    for i in 1..=n {
        let p1 = theta[i - 1];
        let couple = if i > 1 { tri.a(i) * tri.c(i - 1) } else { C64::default() };
        // bring the older term to the newer exponent before combining
        let p2m = prev2.m * RESCALE.powi(prev2.e - p1.e);
        let mut next = Scaled { m: tri.b(i) * p1.m - couple * p2m, e: p1.e };
        if next.m.norm() > RESCALE {
            next.m /= RESCALE;
            next.e += 1;
        }
        prev2 = p1;
        theta.push(next);
    }

    let mut phi_rev = vec![one];
    let mut prev2 = zero;
    for i in (1..=n).rev() {
        let p1 = *phi_rev.last().unwrap();
        let couple = if i < n { tri.c(i) * tri.a(i + 1) } else { C64::default() };
        let p2m = prev2.m * RESCALE.powi(prev2.e - p1.e);
        let mut next = Scaled { m: tri.b(i) * p1.m - couple * p2m, e: p1.e };
        if next.m.norm() > RESCALE {
            next.m /= RESCALE;
            next.e += 1;
        }
        prev2 = p1;
        phi_rev.push(next);
    }
    phi_rev.reverse();
    Minors { theta, phi: phi_rev }
}

/// Entry `(i, j)` (1-based) of the inverse from the minors.
pub fn inverse_entry(tri: &Tridiag1D, minors: &Minors, i: usize, j: usize) -> Result<C64, OracleError> {
    let n = tri.len();
    if i == 0 || j == 0 || i > n || j > n {
        return Err(OracleError::Index(i, j));
    }
    let det = minors.theta[n];
    if det.m == C64::default() {
        return Err(OracleError::Singular);
    }
    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
    let (lo, hi) = (i.min(j), i.max(j));
    let mut prod = C64::new(sign, 0.0);
    for k in lo..hi {
        prod *= if i < j { tri.c(k) } else { tri.a(k + 1) };
    }
    let num = [minors.theta[lo - 1], minors.phi[hi]];
    Ok(prod * Scaled::value_ratio(num, det))
}

pub fn dense_inverse(tri: &Tridiag1D) -> Result<Vec<Vec<C64>>, OracleError> {
    let m = theta_phi(tri);
    let n = tri.len();
    (1..=n).map(|i| (1..=n).map(|j| inverse_entry(tri, &m, i, j)).collect()).collect()
}

/// Interface data for a 1D window `first..=last` inside a longer line.
#[derive(Debug, Clone, Copy)]
pub struct Window1D {
    pub first: usize,
    pub last: usize,
    pub u0: C64,
    pub u1: C64,
    pub un: C64,
    pub un1: C64,
}

/// Reconstructs `u_k` for every `k` from the source restricted to the window
/// and the four interface values, through boundary forcings built from the
/// couplings across the window edges. With exact traces the result equals the
/// true solution inside the window and vanishes outside it.
pub fn grf_1d(tri: &Tridiag1D, f: &[C64], w: Window1D) -> Result<Vec<C64>, OracleError> {
    let n = tri.len();
    if f.len() != n || w.first < 2 || w.last + 1 > n || w.first > w.last {
        return Err(OracleError::Index(w.first, w.last));
    }
    let minors = theta_phi(tri);
    let mut rhs = vec![C64::default(); n];
    for k in w.first..=w.last {
        rhs[k - 1] = f[k - 1];
    }
    rhs[w.first - 1] -= tri.a(w.first) * w.u0;
    rhs[w.first - 2] += tri.c(w.first - 1) * w.u1;
    rhs[w.last - 1] -= tri.c(w.last) * w.un1;
    rhs[w.last] += tri.a(w.last + 1) * w.un;
    (1..=n)
        .map(|k| {
            let mut s = C64::default();
            for (j, r) in rhs.iter().enumerate() {
                if *r != C64::default() {
                    s += inverse_entry(tri, &minors, k, j + 1)? * r;
                }
            }
            Ok(s)
        })
        .collect()
}

/// Thomas-free reference solve through the explicit inverse.
pub fn solve_1d(tri: &Tridiag1D, f: &[C64]) -> Result<Vec<C64>, OracleError> {
    let inv = dense_inverse(tri)?;
    Ok(inv.iter().map(|row| row.iter().zip(f).map(|(a, b)| a * b).sum()).collect())
}

/// Symmetric 1D Helmholtz operator with PML on `n` interior points plus
/// `n_pml` points per side, Dirichlet ends eliminated: rows
/// `-(alpha(u_{p+1}-u_p) - alpha(u_p-u_{p-1}))/h^2 / alpha_p - omega^2 m u + shift u`
/// written in symmetric form (divided by the node's `alpha`).
pub fn assemble_1d(
    n: usize,
    h: f64,
    n_pml: usize,
    m: &[f64],
    omega: f64,
    strength: f64,
    shift: f64,
    symmetric: bool,
) -> Tridiag1D {
    let ne = n + 2 * n_pml;
    assert_eq!(m.len(), ne);
    let extent = (n as f64 + 1.0) * h;
    let delta = n_pml as f64 * h;
    let sigma = |x: f64| {
        let t = if x < 0.0 {
            x / delta
        } else if x > extent {
            (x - extent) / delta
        } else {
            0.0
        };
        strength / delta * t * t
    };
    let alpha = |x: f64| C64::new(1.0, 0.0) / C64::new(1.0, sigma(x) / omega);
    // half-index coordinates so neighbouring rows share bit-identical midpoints
    let coord = |i2: f64| (i2 - n_pml as f64 + 1.0) * h;
    let h2 = h * h;
    let mut diag = Vec::with_capacity(ne);
    let mut sub = Vec::with_capacity(ne - 1);
    let mut sup = Vec::with_capacity(ne - 1);
    for i in 0..ne {
        let fi = i as f64;
        let (am, a0, ap) = (alpha(coord(fi - 0.5)), alpha(coord(fi)), alpha(coord(fi + 0.5)));
        let (west, east, center) = if symmetric {
            (-am / h2, -ap / h2, (am + ap) / h2 + (shift - omega * omega * m[i]) / a0)
        } else {
            (-a0 * am / h2, -a0 * ap / h2, a0 * (am + ap) / h2 + shift - omega * omega * m[i])
        };
        diag.push(center);
        if i > 0 {
            sub.push(west);
        }
        if i + 1 < ne {
            sup.push(east);
        }
    }
    Tridiag1D { sub, diag, sup }
}

/// `sum_{i=1..n} [(D u)_i v_i - u_i (D v)_i]` with `(D u)_i = u_{i+1} - 2u_i + u_{i-1}`;
/// both vectors carry the boundary samples at positions `0` and `n+1`.
pub fn laplacian_pairing_defect(u: &[C64], v: &[C64]) -> C64 {
    let n = u.len() - 2;
    let lap = |w: &[C64], i: usize| w[i + 1] - 2.0 * w[i] + w[i - 1];
    (1..=n).map(|i| lap(u, i) * v[i] - u[i] * lap(v, i)).sum()
}

/// The four boundary terms the pairing defect must equal.
pub fn sbp_boundary_terms(u: &[C64], v: &[C64]) -> C64 {
    let n = u.len() - 2;
    -v[0] * (u[1] - u[0]) + u[0] * (v[1] - v[0]) + v[n + 1] * (u[n + 1] - u[n]) - u[n + 1] * (v[n + 1] - v[n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn rnd(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn random_tri(rng: &mut ChaCha8Rng, n: usize) -> Tridiag1D {
        let off: Vec<C64> = (0..n - 1).map(|_| rnd(rng)).collect();
        let diag: Vec<C64> = (0..n).map(|_| rnd(rng) + c(3.0)).collect();
        Tridiag1D::symmetric(diag, off).unwrap()
    }

    fn dense_inv(a: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let n = a.len();
        let arr = ndarray::Array2::from_shape_fn((n, n), |(i, j)| a[i][j]);
        let inv = crate::dense::invert(arr.view()).unwrap().inverse;
        (0..n).map(|i| (0..n).map(|j| inv[[i, j]]).collect()).collect()
    }

    #[test]
    fn identity_minors() {
        let t = Tridiag1D::symmetric(vec![c(1.0); 4], vec![c(0.0); 3]).unwrap();
        let m = theta_phi(&t);
        for i in 0..=4 {
            assert_eq!(m.theta(i), c(1.0));
        }
        let inv = dense_inverse(&t).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(inv[i][j], if i == j { c(1.0) } else { c(0.0) });
            }
        }
    }

    #[test]
    fn small_minors() {
        let t = Tridiag1D::symmetric(vec![c(2.0); 2], vec![c(1.0)]).unwrap();
        let m = theta_phi(&t);
        assert_eq!([m.theta(0), m.theta(1), m.theta(2)], [c(1.0), c(2.0), c(3.0)]);
        assert_eq!([m.phi(3), m.phi(2), m.phi(1)], [c(1.0), c(2.0), c(3.0)]);
    }

    #[test]
    fn inverse_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 5, 8, 13] {
            let t = random_tri(&mut rng, n);
            let want = dense_inv(&t.to_dense());
            let got = dense_inverse(&t).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert!((got[i][j] - want[i][j]).norm() <= 1e-12 * want[i][j].norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn casorati_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_tri(&mut rng, 9);
        let m = theta_phi(&t);
        let n = 9;
        for i in 1..n {
            let prev = m.theta(i - 1);
            let phi2 = if i + 2 <= n + 1 { m.phi(i + 2) } else { c(0.0) };
            let lhs = m.theta(i) * m.phi(i + 1) - t.a(i + 1) * t.c(i) * prev * phi2;
            assert!((lhs - m.theta(n)).norm() <= 1e-12 * m.theta(n).norm());
        }
    }

    #[test]
    fn rescaling_keeps_inverse_accurate() {
        // large diagonal forces minors past the rescale threshold
        let n = 40;
        let t = Tridiag1D::symmetric(vec![c(1e9); n], vec![c(1.0); n - 1]).unwrap();
        let m = theta_phi(&t);
        assert!(m.theta.last().unwrap().e > 0);
        let v = inverse_entry(&t, &m, 3, 3).unwrap();
        assert!((v - c(1e-9)).norm() < 1e-20);
        let off = inverse_entry(&t, &m, 3, 4).unwrap();
        assert!((off + c(1e-18)).norm() < 1e-28);
    }

    #[test]
    fn singular_reported() {
        let t = Tridiag1D::symmetric(vec![c(1.0), c(1.0)], vec![c(1.0)]).unwrap();
        let m = theta_phi(&t);
        assert_eq!(inverse_entry(&t, &m, 1, 1), Err(OracleError::Singular));
        assert!(Tridiag1D::new(vec![], vec![c(1.0); 2], vec![c(1.0)]).is_err());
    }

    #[test]
    fn rank_one_and_jump() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10;
        let t = random_tri(&mut rng, n);
        let inv = dense_inverse(&t).unwrap();
        let g = |i: usize, j: usize| inv[i - 1][j - 1];
        for i in 1..n {
            let e = g(i + 1, i) / g(i + 1, i + 1);
            for k in i + 1..=n {
                assert!((e * g(i + 1, k) - g(i, k)).norm() <= 1e-12 * g(i, k).norm().max(1e-300));
            }
            let jump = e * g(i + 1, i) - g(i, i) - e / t.c(i);
            assert!(jump.norm() <= 1e-12 * g(i, i).norm());
        }
    }

    #[test]
    fn grf_reconstructs_and_annihilates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 16;
        let t = random_tri(&mut rng, n);
        let f: Vec<C64> = (0..n).map(|i| if (5..=11).contains(&(i + 1)) { rnd(&mut rng) } else { c(0.0) }).collect();
        let u = solve_1d(&t, &f).unwrap();
        let (first, last) = (6, 10);
        let w = Window1D { first, last, u0: u[first - 2], u1: u[first - 1], un: u[last - 1], un1: u[last] };
        let v = grf_1d(&t, &f, w).unwrap();
        for k in 1..=n {
            if (first..=last).contains(&k) {
                assert!((v[k - 1] - u[k - 1]).norm() <= 1e-12 * u[k - 1].norm().max(1.0));
            } else {
                assert!(v[k - 1].norm() <= 1e-12, "k={k}: {}", v[k - 1]);
            }
        }
        let zero = Window1D { first, last, u0: c(0.0), u1: c(0.0), un: c(0.0), un1: c(0.0) };
        assert!(grf_1d(&t, &vec![c(0.0); n], zero).unwrap().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn symmetric_assembly_is_symmetric() {
        let m = vec![1.0; 14];
        let t = assemble_1d(8, 0.1, 3, &m, 10.0, 30.0, 0.0, true);
        for i in 0..t.sub.len() {
            assert_eq!(t.sub[i], t.sup[i]);
        }
        let u = assemble_1d(8, 0.1, 3, &m, 10.0, 30.0, 0.0, false);
        assert!((u.b(6) - c(2.0 / 0.01 - 100.0)).norm() < 1e-9);
    }
}
