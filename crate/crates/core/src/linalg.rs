//! Small dense matrices for 6x6 phase-space Jacobians and Hessians.

use crate::scalar::Real;

pub type Mat<T, const N: usize> = [[T; N]; N];

pub fn identity<T: Real, const N: usize>() -> Mat<T, N> {
    let mut m = [[T::zero(); N]; N];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

pub fn matmul<T: Real, const N: usize>(a: &Mat<T, N>, b: &Mat<T, N>) -> Mat<T, N> {
    let mut c = [[T::zero(); N]; N];
    for i in 0..N {
        for k in 0..N {
            let aik = a[i][k];
            for j in 0..N {
                c[i][j] = c[i][j] + aik * b[k][j];
            }
        }
    }
    c
}

pub fn transpose<T: Real, const N: usize>(a: &Mat<T, N>) -> Mat<T, N> {
    let mut t = *a;
    for (i, row) in a.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            t[j][i] = *x;
        }
    }
    t
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det<T: Real, const N: usize>(a: &Mat<T, N>) -> T {
    let mut m = *a;
    let mut d = T::one();
    for col in 0..N {
        let mut piv = col;
        for r in col + 1..N {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        if m[piv][col] == T::zero() {
            return T::zero();
        }
        if piv != col {
            m.swap(piv, col);
            d = -d;
        }
        d = d * m[col][col];
        for r in col + 1..N {
            let f = m[r][col] / m[col][col];
            for c in col..N {
                m[r][c] = m[r][c] - f * m[col][c];
            }
        }
    }
    d
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigenvalues<T: Real, const N: usize>(a: &Mat<T, N>) -> [T; N] {
    let mut m = *a;
    let eps = T::epsilon();
    for _sweep in 0..64 {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..N {
            diag = diag + m[i][i] * m[i][i];
            for j in 0..N {
                if i != j {
                    off = off + m[i][j] * m[i][j];
                }
            }
        }
        if off <= eps * eps * diag || off == T::zero() {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                if m[p][q] == T::zero() {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (T::lit(2.0) * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..N {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..N {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev = [T::zero(); N];
    for (i, e) in ev.iter_mut().enumerate() {
        *e = m[i][i];
    }
    ev
}

/// Spectral norm of a symmetric matrix.
pub fn sym_norm<T: Real, const N: usize>(a: &Mat<T, N>) -> T {
    sym_eigenvalues(a)
        .iter()
        .fold(T::zero(), |acc, e| acc.max(e.abs()))
}

/// Operator 2-norm of a general square matrix.
pub fn op_norm<T: Real, const N: usize>(a: &Mat<T, N>) -> T {
    let ata = matmul(&transpose(a), a);
    sym_eigenvalues(&ata)
        .iter()
        .fold(T::zero(), |acc, e| acc.max(*e))
        .max(T::zero())
        .sqrt()
}

pub fn mat_vec<T: Real, const N: usize>(a: &Mat<T, N>, x: &[T; N]) -> [T; N] {
    let mut y = [T::zero(); N];
    for (i, row) in a.iter().enumerate() {
        y[i] = row.iter().zip(x).fold(T::zero(), |acc, (p, q)| acc + *p * *q);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_of_permutation_and_scaling() {
        let mut m: Mat<f64, 3> = [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 2.0]];
        assert!((det(&m) + 2.0).abs() < 1e-15);
        m[2][2] = 0.0;
        assert_eq!(det(&m), 0.0);
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        let m: Mat<f64, 2> = [[2.0, 1.0], [1.0, 2.0]];
        let mut ev = sym_eigenvalues(&m);
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
        let r: Mat<f64, 2> = [[0.0, -1.0], [1.0, 0.0]];
        assert!((op_norm(&r) - 1.0).abs() < 1e-14);
    }
}
