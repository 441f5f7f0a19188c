//! Small dense complex linear algebra over any [`Real`] scalar.
//!
//! nalgebra covers the `f64` paths; these routines exist so the modal basis can
//! be refined and inverted in extended precision.

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::scalar::{cabs2, Real};

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat<T: Real> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Real> CMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let v = a * other[(k, j)];
                    out[(i, j)] += v;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut acc = Complex::zero();
                for (j, vj) in v.iter().enumerate() {
                    acc += self[(i, j)] * *vj;
                }
                acc
            })
            .collect()
    }

    pub fn column(&self, j: usize) -> Vec<Complex<T>> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[Complex<T>]) {
        for (i, x) in v.iter().enumerate() {
            self[(i, j)] = *x;
        }
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| cabs2(*z).to_f64()).fold(0.0, f64::max).sqrt()
    }
}

impl<T: Real> std::ops::Index<(usize, usize)> for CMat<T> {
    type Output = Complex<T>;
    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.data[i * self.cols + j]
    }
}

impl<T: Real> std::ops::IndexMut<(usize, usize)> for CMat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct CLu<T: Real> {
    lu: CMat<T>,
    perm: Vec<usize>,
    /// Smallest pivot modulus relative to the largest entry of the input.
    pub min_pivot_ratio: f64,
}

impl<T: Real> CLu<T> {
    /// Factorizes `a`. Exactly zero pivots are replaced by `floor` so inverse
    /// iteration on a numerically singular shift still produces a direction.
    pub fn new(a: &CMat<T>, floor: T) -> Self {
        assert_eq!(a.rows, a.cols);
        let n = a.rows;
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let mut p = k;
            let mut best = cabs2(lu[(k, k)]);
            for i in k + 1..n {
                let v = cabs2(lu[(i, k)]);
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            if lu[(k, k)].is_zero() {
                lu[(k, k)] = Complex::new(floor, T::zero());
            }
            min_pivot = min_pivot.min(cabs2(lu[(k, k)]).to_f64().sqrt() / scale);
            let inv = Complex::<T>::one() / lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] * inv;
                if f.is_zero() {
                    continue;
                }
                lu[(i, k)] = f;
                for j in k + 1..n {
                    let v = f * lu[(k, j)];
                    lu[(i, j)] -= v;
                }
            }
        }
        Self {
            lu,
            perm,
            min_pivot_ratio: min_pivot,
        }
    }

    pub fn solve(&self, b: &[Complex<T>]) -> Vec<Complex<T>> {
        let n = self.lu.rows;
        let mut x: Vec<Complex<T>> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let v = self.lu[(i, j)] * x[j];
                x[i] -= v;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let v = self.lu[(i, j)] * x[j];
                x[i] -= v;
            }
            x[i] = x[i] / self.lu[(i, i)];
        }
        x
    }

    pub fn inverse(&self) -> CMat<T> {
        let n = self.lu.rows;
        let mut out = CMat::zeros(n, n);
        let mut e = vec![Complex::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|z| *z = Complex::zero());
            e[j] = Complex::one();
            out.set_column(j, &self.solve(&e));
        }
        out
    }
}
