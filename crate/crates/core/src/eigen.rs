//! Dominant eigenvector of a dense symmetric matrix by power iteration.

use crate::error::{invalid, Error, Result};

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("matrix rows must all have length equal to the row count"));
        }
        Ok(Self { dim, data: rows.concat() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] += v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.dim).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// `self * self` scaled to unit Frobenius norm.
    fn square_scaled(&self) -> Self {
        let n = self.dim;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += a * self.data[k * n + j];
                }
            }
        }
        let mut out = Self { dim: n, data };
        let f = out.frobenius_norm();
        if f > 0.0 && f.is_finite() {
            out.data.iter_mut().for_each(|x| *x /= f);
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// Unit-norm eigenvector.
    pub vector: Vec<f64>,
    pub iterations: usize,
}

pub const MAX_POWER_ITERATIONS: usize = 20_000;

/// Residual target relative to the Frobenius norm. The contract only needs
/// 1e-8; iterating further keeps the vector itself accurate.
const TARGET_RESIDUAL: f64 = 1e-12;
const REQUIRED_RESIDUAL: f64 = 1e-8;
const STALL_ITERATIONS: usize = 2_000;
const MAX_SQUARINGS: usize = 64;

/// Fixed start vector used when the caller has no better guess. It has
/// no zero entries and is not orthogonal to the constant vector, nor a
/// multiple of it.
pub fn default_start(dim: usize) -> Vec<f64> {
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    (0..dim).map(|i| 1.0 + ((i as f64 + 1.0) * GOLDEN).fract()).collect()
}

/// Principal eigenpair (largest |eigenvalue|) from the deterministic start.
pub fn principal_eigenvector(matrix: &SquareMatrix) -> Result<EigenPair> {
    principal_eigenvector_from(matrix, &default_start(matrix.dim()))
}

/// Power iteration from `start`. Falls back to [`default_start`] when `start`
/// is zero.
pub fn principal_eigenvector_from(matrix: &SquareMatrix, start: &[f64]) -> Result<EigenPair> {
    let dim = matrix.dim();
    if dim == 0 {
        return Err(invalid("empty matrix"));
    }
    if start.len() != dim {
        return Err(invalid(format!("start vector has length {}, expected {dim}", start.len())));
    }
    let norm = matrix.frobenius_norm();
    if !norm.is_finite() {
        return Err(Error::NumericalFailure("matrix has non-finite entries".into()));
    }
    if !matrix.is_symmetric(1e-9 * norm.max(1.0)) {
        return Err(invalid("matrix is not symmetric"));
    }

    let mut v = start.to_vec();
    if normalize(&mut v) == 0.0 {
        v = default_start(dim);
        normalize(&mut v);
    }
    if norm == 0.0 {
        return Ok(EigenPair { value: 0.0, vector: v, iterations: 0 });
    }

    let mut w = vec![0.0; dim];
    let mut best: Option<(f64, f64, Vec<f64>, usize)> = None;
    let mut since_improvement = 0usize;
    for iter in 1..=MAX_POWER_ITERATIONS {
        matrix.mul_vec(&v, &mut w);
        let lambda: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let residual = w.iter().zip(&v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
        if residual <= TARGET_RESIDUAL * norm {
            return Ok(EigenPair { value: lambda, vector: v, iterations: iter });
        }
        match &best {
            Some((r, _, _, _)) if residual >= *r => since_improvement += 1,
            _ => {
                best = Some((residual, lambda, v.clone(), iter));
                since_improvement = 0;
            }
        }
        if since_improvement >= STALL_ITERATIONS {
            break;
        }
        if normalize(&mut w) == 0.0 {
            break;
        }
        std::mem::swap(&mut v, &mut w);
    }
    let (mut best_residual, mut best_value, mut best_vector, iterations) =
        best.unwrap_or((f64::INFINITY, 0.0, v, MAX_POWER_ITERATIONS));

    // A small spectral gap makes plain iteration crawl. Iterating with
    // M^(2^j) instead squares the convergence factor at every step.
    let mut power = matrix.clone();
    for _ in 0..MAX_SQUARINGS {
        power = power.square_scaled();
        let mut u = vec![0.0; dim];
        power.mul_vec(&best_vector, &mut u);
        if normalize(&mut u) == 0.0 {
            break;
        }
        matrix.mul_vec(&u, &mut w);
        let lambda: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
        let residual = w.iter().zip(&u).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
        if residual < best_residual {
            best_residual = residual;
            best_value = lambda;
            best_vector = u;
        }
        if best_residual <= TARGET_RESIDUAL * norm {
            break;
        }
    }
    match best_residual <= REQUIRED_RESIDUAL * norm {
        true => Ok(EigenPair { value: best_value, vector: best_vector, iterations }),
        false => Err(Error::NumericalFailure(format!(
            "power iteration did not reach residual {REQUIRED_RESIDUAL:e} relative to the matrix norm"
        ))),
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        v.iter_mut().for_each(|x| *x /= n);
        n
    } else {
        0.0
    }
}
