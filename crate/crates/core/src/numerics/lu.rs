use crate::error::{Error, Result};

use super::Matrix;

/// Inverse of a general square matrix by LU with partial pivoting.
pub fn inverse(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    let scale = m.max_abs();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
            .unwrap();
        let pivot = a[(p, k)];
        if pivot.abs() <= f64::EPSILON * scale * n as f64 || pivot == 0.0 {
            return Err(Error::SingularTransform(f64::INFINITY));
        }
        if p != k {
            swap_rows(&mut a, p, k);
            swap_rows(&mut inv, p, k);
        }
        for i in 0..n {
            if i == k {
                continue;
            }
            let f = a[(i, k)] / pivot;
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                let (akj, ikj) = (a[(k, j)], inv[(k, j)]);
                a.row_mut(i)[j] -= f * akj;
                inv.row_mut(i)[j] -= f * ikj;
            }
        }
    }
    for k in 0..n {
        let d = a[(k, k)];
        for v in inv.row_mut(k) {
            *v /= d;
        }
    }
    Ok(inv)
}

fn swap_rows(m: &mut Matrix, a: usize, b: usize) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    for j in 0..cols {
        data.swap(a * cols + j, b * cols + j);
    }
}

/// 1-norm condition number `‖A‖₁‖A⁻¹‖₁`; infinite when singular.
pub fn condition_number(m: &Matrix) -> f64 {
    match inverse(m) {
        Ok(inv) => norm1(m) * norm1(&inv),
        Err(_) => f64::INFINITY,
    }
}

fn norm1(m: &Matrix) -> f64 {
    (0..m.cols())
        .map(|j| (0..m.rows()).map(|i| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
