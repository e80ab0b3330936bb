//! Minimal dense linear algebra for the kernel and policy builders.

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from row-major data; panics if the length does not match.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shapes");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `M x` for a column vector `x` of length `cols`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// `x M` for a row vector `x` of length `rows`.
    pub fn vec_mul(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += xi * w;
            }
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `M Mᵀ`.
    pub fn gram_rows(&self) -> Matrix {
        self.matmul(&self.transpose())
    }

    /// `Mᵀ M`.
    pub fn gram_cols(&self) -> Matrix {
        self.transpose().matmul(self)
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Thin Householder QR of a tall matrix (`rows >= cols`).
///
/// Returns `(Q, R)` with `Q` of shape `rows × cols` having orthonormal
/// columns and `R` upper triangular `cols × cols` with a non-negative
/// diagonal, which makes the factorization unique for full-rank input.
pub fn householder_qr(a: &Matrix) -> (Matrix, Matrix) {
    let (m, n) = (a.rows(), a.cols());
    assert!(m >= n, "householder_qr expects rows >= cols");
    let mut r = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);

    for k in 0..n {
        let norm = (k..m).map(|i| r[(i, k)] * r[(i, k)]).sum::<f64>().sqrt();
        let mut v: Vec<f64> = (k..m).map(|i| r[(i, k)]).collect();
        if norm == 0.0 {
            reflectors.push(vec![0.0; m - k]);
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let v_norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if v_norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= v_norm);
        }
        for j in k..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * r[(i, j)]).sum();
            for i in k..m {
                r[(i, j)] -= 2.0 * v[i - k] * dot;
            }
        }
        reflectors.push(v);
    }

    // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of the identity.
    let mut q = Matrix::zeros(m, n);
    for j in 0..n {
        q[(j, j)] = 1.0;
    }
    for k in (0..n).rev() {
        let v = &reflectors[k];
        for j in 0..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * q[(i, j)]).sum();
            if dot == 0.0 {
                continue;
            }
            for i in k..m {
                q[(i, j)] -= 2.0 * v[i - k] * dot;
            }
        }
    }

    let mut r_square = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            r_square[(i, j)] = r[(i, j)];
        }
    }
    for k in 0..n {
        if r_square[(k, k)] < 0.0 {
            for j in k..n {
                r_square[(k, j)] = -r_square[(k, j)];
            }
            for i in 0..m {
                q[(i, k)] = -q[(i, k)];
            }
        }
    }
    (q, r_square)
}

/// Spectral norm `‖M‖₂` by power iteration on the smaller Gram matrix,
/// stopping once successive estimates agree to `rel_tol`.
pub fn spectral_norm(m: &Matrix, rel_tol: f64) -> f64 {
    let gram = if m.rows() <= m.cols() {
        m.gram_rows()
    } else {
        m.gram_cols()
    };
    let n = gram.rows();
    if n == 0 {
        return 0.0;
    }
    // A strictly positive start vector cannot be orthogonal to the Perron
    // vector of a non-negative Gram matrix; add a ramp so signed matrices
    // are also unlikely to start in a null direction.
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64 / n as f64).collect();
    let mut lambda = 0.0f64;
    for _ in 0..100_000 {
        let y = gram.mul_vec(&x);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()
            / x.iter().map(|v| v * v).sum::<f64>();
        x = y.into_iter().map(|v| v / norm).collect();
        if (next - lambda).abs() <= rel_tol * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = RandomStream::derive(seed, 0u64);
        Matrix::from_row_major(rows, cols, s.gaussian_vec(rows * cols))
    }

    #[test]
    fn qr_reconstructs_and_is_orthonormal() {
        for (m, n) in [(1, 1), (4, 4), (8, 3), (16, 16), (5, 1)] {
            let a = random_matrix(m, n, (m * 31 + n) as u64);
            let (q, r) = householder_qr(&a);
            assert!(q.matmul(&r).max_abs_diff(&a) < 1e-12);
            assert!(q.gram_cols().max_abs_diff(&Matrix::identity(n)) < 1e-13);
            for k in 0..n {
                assert!(r[(k, k)] >= 0.0);
                for i in k + 1..n {
                    assert_eq!(r[(i, k)], 0.0);
                }
            }
        }
    }

    #[test]
    fn spectral_norm_known_values() {
        let d = Matrix::from_row_major(2, 3, vec![3.0, 0.0, 0.0, 0.0, -5.0, 0.0]);
        assert!((spectral_norm(&d, 1e-12) - 5.0).abs() < 1e-9);
        let ones = Matrix::from_row_major(2, 2, vec![1.0; 4]);
        assert!((spectral_norm(&ones, 1e-12) - 2.0).abs() < 1e-9);
        // Rank-one row-stochastic matrix: ‖1ᵀ/n ⊗ 1‖₂ = sqrt(rows / cols).
        let u = Matrix::from_row_major(4, 8, vec![0.125; 32]);
        assert!((spectral_norm(&u, 1e-12) - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn vec_products_agree_with_transpose() {
        let a = random_matrix(3, 5, 11);
        let x = [0.1, -0.4, 2.0];
        let left = a.vec_mul(&x);
        let right = a.transpose().mul_vec(&x);
        for (l, r) in left.iter().zip(&right) {
            assert!((l - r).abs() < 1e-15);
        }
    }
}
