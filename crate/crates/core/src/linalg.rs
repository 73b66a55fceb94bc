//! Dense vector helpers shared by the dynamics, network, and metric code.
//!
//! Everything operates on plain `&[f64]` slices; the dimensions in this
//! crate are small enough that a dedicated matrix type would be noise.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| c * x).collect()
}

/// `a + c * b`, the update shape used by every integrator step.
pub fn axpy(a: &[f64], c: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + c * y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Determinant of a small row-major `n x n` matrix via LU with partial
/// pivoting. Used only for the finite-difference symplecticity check, where
/// n = 2d <= 8.
pub fn det(matrix: &[f64], n: usize) -> f64 {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut sign = 1.0;
    let mut result = 1.0;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| {
                a[i * n + col]
                    .abs()
                    .partial_cmp(&a[j * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        if a[pivot_row * n + col] == 0.0 {
            return 0.0;
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            sign = -sign;
        }
        let pivot = a[col * n + col];
        result *= pivot;
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
        }
    }
    sign * result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_identity_and_shear() {
        let eye = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(det(&eye, 2), 1.0);
        let shear = [1.0, 3.0, 0.0, 1.0];
        assert_eq!(det(&shear, 2), 1.0);
        let rot = [0.0, -1.0, 1.0, 0.0];
        assert!((det(&rot, 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_matches_direct_sum() {
        let xs: [f64; 3] = [-700.0, -701.0, -699.5];
        let direct: f64 = xs.iter().map(|x| (x + 699.5).exp()).sum::<f64>().ln() - 699.5;
        assert!((logsumexp(&xs) - direct).abs() < 1e-12);
    }
}
