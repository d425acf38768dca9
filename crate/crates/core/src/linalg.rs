//! Dense least squares and small linear solves.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is rank deficient (column {column})")]
    RankDeficient { column: usize },
    #[error("dimension mismatch")]
    Shape,
}

/// Column-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut m = Matrix::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c);
            for (j, v) in row.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Keeps only the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(self.rows, cols.len());
        for (k, &j) in cols.iter().enumerate() {
            m.data[k * self.rows..(k + 1) * self.rows].copy_from_slice(self.column(j));
        }
        m
    }
}

fn norm(v: &[f64]) -> f64 {
    // scaled to avoid overflow on large polynomial features
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * crate::math::sqrt(v.iter().map(|x| (x / m) * (x / m)).sum::<f64>())
}

/// Minimises `||A x - b_k||` for each right-hand side column via Householder
/// QR with column equilibration. Returns one solution per right-hand side.
pub fn least_squares(a: &Matrix, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LinalgError> {
    let (m, n) = (a.rows, a.cols);
    if m < n || rhs.iter().any(|b| b.len() != m) {
        return Err(LinalgError::Shape);
    }
    let scales: Vec<f64> = (0..n).map(|j| norm(a.column(j))).collect();
    let mut r = a.clone();
    for (j, &s) in scales.iter().enumerate() {
        if s == 0.0 {
            return Err(LinalgError::RankDeficient { column: j });
        }
        for v in &mut r.data[j * m..(j + 1) * m] {
            *v /= s;
        }
    }
    let mut bs: Vec<Vec<f64>> = rhs.to_vec();
    for k in 0..n {
        let alpha = {
            let col = &r.data[k * m + k..(k + 1) * m];
            let nrm = norm(col);
            if col[0] > 0.0 {
                -nrm
            } else {
                nrm
            }
        };
        // relative rank test against the equilibrated column norm of 1
        if alpha.abs() < 1e-12 {
            return Err(LinalgError::RankDeficient { column: k });
        }
        let mut v: Vec<f64> = r.data[k * m + k..(k + 1) * m].to_vec();
        v[0] -= alpha;
        let vn2: f64 = v.iter().map(|x| x * x).sum();
        if vn2 == 0.0 {
            continue;
        }
        for j in k..n {
            let col = &mut r.data[j * m + k..(j + 1) * m];
            let d: f64 = col.iter().zip(&v).map(|(a, b)| a * b).sum();
            let f = 2.0 * d / vn2;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        for b in bs.iter_mut() {
            let seg = &mut b[k..];
            let d: f64 = seg.iter().zip(&v).map(|(a, b)| a * b).sum();
            let f = 2.0 * d / vn2;
            for (c, vi) in seg.iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
    }
    let mut out = Vec::with_capacity(bs.len());
    for b in &bs {
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= r.get(i, j) * x[j];
            }
            x[i] = s / r.get(i, i);
        }
        for (xi, s) in x.iter_mut().zip(&scales) {
            *xi /= s;
        }
        out.push(x);
    }
    Ok(out)
}

/// Greedy left-to-right selection of linearly independent columns: a column
/// is kept when its component orthogonal to the kept ones exceeds `tol`
/// relative to its own norm.
pub fn independent_columns(a: &Matrix, tol: f64) -> Vec<usize> {
    let m = a.rows;
    let mut reflectors: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for j in 0..a.cols {
        if reflectors.len() == m {
            break;
        }
        let s = norm(a.column(j));
        if s == 0.0 {
            continue;
        }
        let mut col: Vec<f64> = a.column(j).iter().map(|x| x / s).collect();
        for (k, v) in reflectors.iter().enumerate() {
            let seg = &mut col[k..];
            let vn2: f64 = v.iter().map(|x| x * x).sum();
            let f = 2.0 * seg.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / vn2;
            for (c, vi) in seg.iter_mut().zip(v) {
                *c -= f * vi;
            }
        }
        let k = reflectors.len();
        let rest = &col[k..];
        let nrm = norm(rest);
        if nrm < tol {
            continue;
        }
        let mut v = rest.to_vec();
        v[0] += if v[0] > 0.0 { nrm } else { -nrm };
        reflectors.push(v);
        kept.push(j);
    }
    kept
}

/// Solves the square system `A x = b` by Gaussian elimination with
/// partial pivoting. `a` is row-major `n x n`.
pub fn solve(a: &[f64], b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = b.len();
    if a.len() != n * n {
        return Err(LinalgError::Shape);
    }
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[i * n + k].abs().total_cmp(&m[j * n + k].abs()))
            .unwrap();
        if m[p * n + k].abs() <= 1e-14 * scale {
            return Err(LinalgError::RankDeficient { column: k });
        }
        if p != k {
            for j in 0..n {
                m.swap(k * n + j, p * n + j);
            }
            x.swap(k, p);
        }
        for i in k + 1..n {
            let f = m[i * n + k] / m[k * n + k];
            for j in k..n {
                m[i * n + j] -= f * m[k * n + j];
            }
            x[i] -= f * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= m[i * n + j] * x[j];
        }
        x[i] = s / m[i * n + i];
    }
    Ok(x)
}
