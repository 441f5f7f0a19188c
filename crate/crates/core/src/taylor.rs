//! Dense truncated multivariate polynomials.
//!
//! A [`MonomialIndex`] enumerates every exponent vector over `d` variables of
//! total degree `0..=order` in graded-lexicographic order and caches the
//! product and derivative tables used by the homological solver.

use std::collections::HashMap;

use num_complex::Complex;
use num_traits::Zero;

use crate::scalar::Real;
use crate::spectral::exponents_of_degree;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct MonomialIndex {
    d: usize,
    order: u32,
    exps: Vec<Vec<u32>>,
    degree_start: Vec<usize>,
    lookup: HashMap<Vec<u32>, usize>,
    /// `(index of m - e_v, v)` with `v` the first variable present in `m`.
    parent: Vec<(usize, usize)>,
    /// `products[i * len + j]`, or `NONE` when the degree exceeds `order`.
    products: Vec<usize>,
    /// `deriv[i * d + l] = index of m - e_l`, or `NONE` when `m_l = 0`.
    deriv: Vec<usize>,
}

impl MonomialIndex {
    pub fn new(d: usize, order: u32) -> Self {
        let mut exps = Vec::new();
        let mut degree_start = Vec::new();
        for k in 0..=order {
            degree_start.push(exps.len());
            if k == 0 {
                exps.push(vec![0; d]);
            } else {
                exps.extend(exponents_of_degree(d, k));
            }
        }
        degree_start.push(exps.len());
        let lookup: HashMap<Vec<u32>, usize> = exps.iter().cloned().enumerate().map(|(i, e)| (e, i)).collect();
        let len = exps.len();
        let mut parent = vec![(NONE, NONE); len];
        let mut deriv = vec![NONE; len * d];
        for (i, e) in exps.iter().enumerate() {
            for l in 0..d {
                if e[l] > 0 {
                    let mut lower = e.clone();
                    lower[l] -= 1;
                    let j = lookup[&lower];
                    deriv[i * d + l] = j;
                    if parent[i].0 == NONE {
                        parent[i] = (j, l);
                    }
                }
            }
        }
        let mut products = vec![NONE; len * len];
        let mut sum = vec![0u32; d];
        for i in 0..len {
            for j in 0..len {
                for l in 0..d {
                    sum[l] = exps[i][l] + exps[j][l];
                }
                if let Some(&k) = lookup.get(&sum) {
                    products[i * len + j] = k;
                }
            }
        }
        Self {
            d,
            order,
            exps,
            degree_start,
            lookup,
            parent,
            products,
            deriv,
        }
    }

    pub fn vars(&self) -> usize {
        self.d
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exponents(&self, i: usize) -> &[u32] {
        &self.exps[i]
    }

    pub fn degree(&self, i: usize) -> u32 {
        self.exps[i].iter().sum()
    }

    pub fn position(&self, exps: &[u32]) -> Option<usize> {
        self.lookup.get(exps).copied()
    }

    /// Index range of the monomials of total degree `k`.
    pub fn degree_range(&self, k: u32) -> std::ops::Range<usize> {
        self.degree_start[k as usize]..self.degree_start[k as usize + 1]
    }

    /// Index of `x^a x^b`, if its degree is within the order.
    pub fn product(&self, a: usize, b: usize) -> Option<usize> {
        let k = self.products[a * self.exps.len() + b];
        (k != NONE).then_some(k)
    }

    /// `(index of m - e_l, m_l)` if `m_l > 0`.
    pub fn derivative(&self, i: usize, l: usize) -> Option<(usize, u32)> {
        let j = self.deriv[i * self.d + l];
        (j != NONE).then(|| (j, self.exps[i][l]))
    }

    /// Values of every monomial at `x`.
    pub fn monomials<T: Real>(&self, x: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.exps.len());
        out.push(T::one());
        for i in 1..self.exps.len() {
            let (p, v) = self.parent[i];
            let val = out[p] * x[v];
            out.push(val);
        }
        out
    }

    /// Adds the part of `a * b` with total degree in `lo..=hi` into `out`.
    pub fn mul_add<T: Real>(&self, a: &[Complex<T>], b: &[Complex<T>], lo: u32, hi: u32, out: &mut [Complex<T>]) {
        let len = self.exps.len();
        for (i, ai) in a.iter().enumerate() {
            if ai.is_zero() {
                continue;
            }
            let di = self.degree(i);
            if di > hi {
                break;
            }
            let from = lo.saturating_sub(di);
            let to = hi - di;
            for j in self.degree_range(from).start..self.degree_range(to).end {
                let bj = b[j];
                if bj.is_zero() {
                    continue;
                }
                let k = self.products[i * len + j];
                out[k] += *ai * bj;
            }
        }
    }

    /// `a * b` truncated at degree `hi`.
    pub fn mul<T: Real>(&self, a: &[Complex<T>], b: &[Complex<T>], hi: u32) -> Vec<Complex<T>> {
        let mut out = vec![Complex::zero(); self.exps.len()];
        self.mul_add(a, b, 0, hi, &mut out);
        out
    }

    /// `∂a/∂x_l`.
    pub fn differentiate<T: Real>(&self, a: &[Complex<T>], l: usize) -> Vec<Complex<T>> {
        let mut out = vec![Complex::zero(); self.exps.len()];
        for (i, ai) in a.iter().enumerate() {
            if ai.is_zero() {
                continue;
            }
            if let Some((j, e)) = self.derivative(i, l) {
                out[j] += *ai * T::from_f64(f64::from(e));
            }
        }
        out
    }
}
