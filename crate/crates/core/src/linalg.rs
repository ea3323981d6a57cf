//! Dense real linear-algebra helpers: numerical rank, least squares, range
//! bases, and complex/real stacking.

use nalgebra::{DMatrix, DVector, Dyn, SVD};
use num_complex::Complex64;

/// Relative tolerance for numerical rank: singular values below
/// `RANK_TOL * sigma_max` count as zero.
pub const RANK_TOL: f64 = 1e-9;

/// Thin SVD in nalgebra's layout. nalgebra's own bidiagonal QR iteration can
/// return factors that do not recompose `m` when singular values come in
/// pairs, as they do for `[G -B; B G]` blocks, so the factorization is done by
/// faer and copied back.
pub fn svd(m: &DMatrix<f64>) -> SVD<f64, Dyn, Dyn> {
    let f = faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
        .thin_svd()
        .expect("SVD of a finite matrix");
    let (u, v, s) = (f.U(), f.V(), f.S().column_vector());
    let k = s.nrows();
    SVD {
        u: Some(DMatrix::from_fn(m.nrows(), k, |i, j| u[(i, j)])),
        v_t: Some(DMatrix::from_fn(k, m.ncols(), |i, j| v[(j, i)])),
        singular_values: DVector::from_fn(k, |i, _| s[i]),
    }
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = svd(m).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank via SVD with relative tolerance [`RANK_TOL`].
pub fn rank(m: &DMatrix<f64>) -> usize {
    rank_with_tol(m, RANK_TOL)
}

pub fn rank_with_tol(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&v| v > rel_tol * smax).count(),
        _ => 0,
    }
}

/// Numerical rank from the diagonal of a column-pivoted QR factorization.
/// Independent of the SVD path; used to cross-check it.
pub fn qr_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let r = m.clone().col_piv_qr().unpack_r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].abs()).collect();
    let top = diag.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    diag.iter().filter(|&&d| d > RANK_TOL * top).count()
}

/// Minimum-norm least-squares solution of `a x = b` and its residual norm.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    if a.ncols() == 0 {
        return (DVector::zeros(0), b.norm());
    }
    if a.nrows() == 0 {
        return (DVector::zeros(a.ncols()), 0.0);
    }
    let f = svd(a);
    let smax = f.singular_values.max();
    let x = f
        .solve(b, RANK_TOL * smax.max(f64::MIN_POSITIVE))
        .expect("U and V were computed");
    let residual = (a * &x - b).norm();
    (x, residual)
}

/// Orthonormal basis of the column space of `m` (numerical rank columns).
pub fn range_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let f = svd(m);
    let u = f.u.expect("U was computed");
    let smax = f.singular_values.max();
    let keep: Vec<usize> = (0..f.singular_values.len())
        .filter(|&i| smax > 0.0 && f.singular_values[i] > RANK_TOL * smax)
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

/// `[re z; im z]`.
pub fn stack_complex(z: &DVector<Complex64>) -> DVector<f64> {
    let n = z.len();
    DVector::from_fn(2 * n, |i, _| if i < n { z[i].re } else { z[i - n].im })
}

/// Inverse of [`stack_complex`].
pub fn unstack_complex(v: &DVector<f64>) -> DVector<Complex64> {
    let n = v.len() / 2;
    DVector::from_fn(n, |i, _| Complex64::new(v[i], v[i + n]))
}

pub fn re(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    m.map(|z| z.re)
}

pub fn im(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    m.map(|z| z.im)
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_of_empty_and_zero() {
        assert_eq!(rank(&DMatrix::zeros(0, 3)), 0);
        assert_eq!(rank(&DMatrix::zeros(3, 3)), 0);
        assert_eq!(qr_rank(&DMatrix::zeros(3, 3)), 0);
    }

    #[test]
    fn rank_deficient_product() {
        let a = DMatrix::from_fn(6, 2, |r, c| (r + 2 * c + 1) as f64);
        let b = DMatrix::from_fn(2, 5, |r, c| ((r + 1) * (c + 3)) as f64 - 4.0);
        let m = a * b;
        assert_eq!(rank(&m), 2);
        assert_eq!(qr_rank(&m), 2);
    }

    #[test]
    fn lstsq_recovers_consistent_system() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let x = DVector::from_vec(vec![0.3, -1.7]);
        let (xs, res) = lstsq(&a, &(&a * &x));
        assert!((xs - x).norm() < 1e-12);
        assert!(res < 1e-12);
    }

    #[test]
    fn svd_recomposes_paired_spectrum() {
        // [G -B; B G] has every singular value doubled.
        let g = DMatrix::from_fn(7, 4, |r, c| ((r * 3 + c * 5) % 7) as f64 - 3.0);
        let b = DMatrix::from_fn(7, 4, |r, c| ((r + 2 * c) % 5) as f64 * 4.0 - 9.0);
        let mut m = DMatrix::zeros(14, 8);
        m.view_mut((0, 0), (7, 4)).copy_from(&g);
        m.view_mut((0, 4), (7, 4)).copy_from(&(-&b));
        m.view_mut((7, 0), (7, 4)).copy_from(&b);
        m.view_mut((7, 4), (7, 4)).copy_from(&g);
        let f = svd(&m);
        assert!((f.recompose().unwrap() - &m).amax() < 1e-10);
        let x = DVector::from_fn(8, |i, _| i as f64 * 0.25 - 1.0);
        let (_, res) = lstsq(&m, &(&m * &x));
        assert!(res < 1e-10);
    }

    #[test]
    fn range_basis_is_orthonormal() {
        let a = DMatrix::from_fn(5, 3, |r, c| ((r * c) % 3) as f64 + if c == 2 { 0.0 } else { 1.0 });
        let u = range_basis(&a);
        let gram = u.transpose() * &u;
        assert!((gram - DMatrix::identity(u.ncols(), u.ncols())).norm() < 1e-12);
        assert_eq!(u.ncols(), rank(&a));
    }

    #[test]
    fn complex_stacking_round_trip() {
        let z = DVector::from_vec(vec![Complex64::new(1.0, 2.0), Complex64::new(-3.0, 0.5)]);
        assert_eq!(unstack_complex(&stack_complex(&z)), z);
    }

    proptest! {
        #[test]
        fn svd_and_qr_rank_agree(r in 1usize..5, rows in 5usize..9, cols in 5usize..9, seed in 0u64..1000) {
            // Random integer factors give an exact rank-r product.
            let mut s = seed;
            let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((s >> 33) % 7) as f64 - 3.0 };
            let a = DMatrix::from_fn(rows, r, |_, _| next());
            let b = DMatrix::from_fn(r, cols, |_, _| next());
            let m = a * b;
            prop_assert_eq!(rank(&m), qr_rank(&m));
        }
    }
}
