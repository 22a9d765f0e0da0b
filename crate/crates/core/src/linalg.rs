//! Small dense linear algebra: packed lower-triangular factors and
//! symmetric positive-definite helpers.

use std::fmt;

/// Square matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Panics unless `rows` is square.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n, "matrix must be square");
            data.extend_from_slice(r);
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        Matrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Cholesky factor of a symmetric positive-definite matrix.
    pub fn cholesky(&self) -> Option<LowerTriangular> {
        let n = self.n;
        let mut l = LowerTriangular::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    l.set(i, i, s.sqrt());
                } else {
                    l.set(i, j, s / l.get(j, j));
                }
            }
        }
        Some(l)
    }

    /// Inverse of a symmetric positive-definite matrix.
    pub fn spd_inverse(&self) -> Option<Matrix> {
        let l = self.cholesky()?;
        let li = l.inverse().ok()?;
        // A⁻¹ = L⁻ᵀ L⁻¹
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in i.max(j)..n {
                    s += li.get(k, i) * li.get(k, j);
                }
                out[(i, j)] = s;
            }
        }
        Some(out)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularFactor {
    pub index: usize,
    pub value: f64,
}

impl fmt::Display for SingularFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "diagonal entry {} of the factor is {}", self.index, self.value)
    }
}

/// Smallest |L_kk| treated as non-degenerate.
pub const MIN_DIAGONAL: f64 = 1e-12;

/// Lower-triangular matrix holding only the n(n+1)/2 free entries,
/// packed row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerTriangular {
    n: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut l = Self::zeros(n);
        for i in 0..n {
            l.set(i, i, 1.0);
        }
        l
    }

    /// Packed entries, row-major over the lower triangle.
    pub fn from_packed(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * (n + 1) / 2, "packed length");
        Self { n, data }
    }

    /// Lower triangle of `m`; entries above the diagonal are ignored.
    pub fn from_matrix(m: &Matrix) -> Self {
        let mut l = Self::zeros(m.dim());
        for i in 0..m.dim() {
            for j in 0..=i {
                l.set(i, j, m[(i, j)]);
            }
        }
        l
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn packed_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn offset(i: usize, j: usize) -> usize {
        i * (i + 1) / 2 + j
    }

    /// Entry (i, j); zero above the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.data[Self::offset(i, j)]
        }
    }

    /// Panics when `j > i`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j <= i, "write above the diagonal");
        self.data[Self::offset(i, j)] = v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..=i).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// L Lᵀ
    pub fn gram(&self) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..=i {
                m[(i, j)] = self.get(i, j);
            }
        }
        m
    }

    fn check_diagonal(&self) -> Result<(), SingularFactor> {
        for i in 0..self.n {
            let d = self.get(i, i);
            if !(d.abs() >= MIN_DIAGONAL) {
                return Err(SingularFactor { index: i, value: d });
            }
        }
        Ok(())
    }

    /// Solve L x = b by forward substitution.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SingularFactor> {
        self.check_diagonal()?;
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            let mut s = b[i];
            for j in 0..i {
                s -= self.get(i, j) * x[j];
            }
            x[i] = s / self.get(i, i);
        }
        Ok(x)
    }

    /// L⁻¹, itself lower-triangular.
    pub fn inverse(&self) -> Result<LowerTriangular, SingularFactor> {
        self.check_diagonal()?;
        let n = self.n;
        let mut inv = Self::zeros(n);
        let mut e = vec![0.0; n];
        for col in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[col] = 1.0;
            let x = self.solve(&e)?;
            for (row, &v) in x.iter().enumerate().skip(col) {
                inv.set(row, col, v);
            }
        }
        Ok(inv)
    }

    /// (L⁻¹)ᵀ restricted to the lower triangle.
    pub fn inverse_transpose_lower(&self) -> Result<LowerTriangular, SingularFactor> {
        let inv = self.inverse()?;
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..=i {
                out.set(i, j, inv.get(j, i));
            }
        }
        Ok(out)
    }

    /// ln |det L| = Σ ln |L_kk|.
    pub fn log_abs_det(&self) -> Result<f64, SingularFactor> {
        self.check_diagonal()?;
        Ok(self.diagonal().iter().map(|d| d.abs().ln()).sum())
    }
}
