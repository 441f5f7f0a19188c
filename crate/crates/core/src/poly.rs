//! Sparse polynomial maps `R^n -> R^m` with monomials of total degree >= 2.
//!
//! Terms are kept in insertion order after canonicalization (duplicate
//! `(exponents, output)` pairs merged into their first occurrence), and every
//! evaluation sums in that order so results are reproducible bit-for-bit.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyTerm {
    pub exponents: Vec<u32>,
    pub output: usize,
    pub coeff: f64,
}

impl PolyTerm {
    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolynomialMap")]
pub struct PolynomialMap {
    input_dim: usize,
    output_dim: usize,
    terms: Vec<PolyTerm>,
}

#[derive(Deserialize)]
struct RawPolynomialMap {
    input_dim: usize,
    output_dim: usize,
    #[serde(default)]
    terms: Vec<PolyTerm>,
}

impl TryFrom<RawPolynomialMap> for PolynomialMap {
    type Error = Error;
    fn try_from(raw: RawPolynomialMap) -> Result<Self> {
        PolynomialMap::new(raw.input_dim, raw.output_dim, raw.terms)
    }
}

#[inline]
fn powi<T: Real>(x: T, e: u32) -> T {
    let mut acc = T::one();
    for _ in 0..e {
        acc *= x;
    }
    acc
}

impl PolynomialMap {
    pub fn new(input_dim: usize, output_dim: usize, terms: Vec<PolyTerm>) -> Result<Self> {
        let mut index: HashMap<(Vec<u32>, usize), usize> = HashMap::new();
        let mut merged: Vec<PolyTerm> = Vec::with_capacity(terms.len());
        for term in terms {
            if term.exponents.len() != input_dim {
                return Err(Error::DimensionMismatch {
                    expected: input_dim,
                    got: term.exponents.len(),
                });
            }
            if term.output >= output_dim {
                return Err(Error::InvalidModel(format!(
                    "term output index {} out of range for output dimension {output_dim}",
                    term.output
                )));
            }
            if term.degree() < 2 {
                return Err(Error::InvalidModel(format!(
                    "monomial {:?} has total degree {} (nonlinear terms need degree >= 2)",
                    term.exponents,
                    term.degree()
                )));
            }
            if !term.coeff.is_finite() {
                return Err(Error::InvalidModel("non-finite polynomial coefficient".into()));
            }
            let key = (term.exponents.clone(), term.output);
            match index.get(&key) {
                Some(&i) => merged[i].coeff += term.coeff,
                None => {
                    index.insert(key, merged.len());
                    merged.push(term);
                }
            }
        }
        merged.retain(|t| t.coeff != 0.0);
        Ok(Self {
            input_dim,
            output_dim,
            terms: merged,
        })
    }

    pub fn zero(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            terms: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn terms(&self) -> &[PolyTerm] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.iter().map(PolyTerm::degree).max().unwrap_or(0)
    }

    /// Concatenates the term lists of two maps with equal shapes.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        if self.input_dim != other.input_dim || self.output_dim != other.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: other.input_dim,
            });
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self::new(self.input_dim, self.output_dim, terms)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| PolyTerm {
                coeff: t.coeff * factor,
                ..t.clone()
            })
            .filter(|t| t.coeff != 0.0)
            .collect();
        Self {
            terms,
            ..self.clone()
        }
    }

    /// Adds `coeff * (x_i - x_j)^power` to output `target`, expanded into
    /// monomials by the binomial theorem. `j = None` gives `coeff * x_i^power`.
    pub fn add_power_of_difference(
        &mut self,
        i: usize,
        j: Option<usize>,
        power: u32,
        coeff: f64,
        target: usize,
    ) -> Result<()> {
        let mut terms = std::mem::take(&mut self.terms);
        let mut binom = 1.0_f64;
        for r in 0..=power {
            // term: C(power, r) x_i^(power - r) (-x_j)^r
            let mut e = vec![0_u32; self.input_dim];
            match j {
                Some(j) => {
                    e[i] += power - r;
                    e[j] += r;
                }
                None if r > 0 => break,
                None => e[i] = power,
            }
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            terms.push(PolyTerm {
                exponents: e,
                output: target,
                coeff: coeff * sign * binom,
            });
            binom = binom * f64::from(power - r) / f64::from(r + 1);
        }
        *self = Self::new(self.input_dim, self.output_dim, terms)?;
        Ok(())
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: len,
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.eval_generic(x)
    }

    pub fn eval_generic<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x.len())?;
        let mut out = vec![T::zero(); self.output_dim];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Adds `p(x)` into `out` without shape checks (hot path of the integrators).
    pub fn eval_into<T: Real>(&self, x: &[T], out: &mut [T]) {
        for t in &self.terms {
            let mut v = T::from_f64(t.coeff);
            for (&xi, &e) in x.iter().zip(&t.exponents) {
                if e > 0 {
                    v *= powi(xi, e);
                }
            }
            out[t.output] += v;
        }
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(x.len())?;
        let mut jac = DMatrix::zeros(self.output_dim, self.input_dim);
        self.jacobian_into(x, &mut jac);
        Ok(jac)
    }

    /// Adds the Jacobian of `p` at `x` into `jac`.
    pub fn jacobian_into(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        for t in &self.terms {
            for (var, &e) in t.exponents.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let mut v = t.coeff * f64::from(e) * powi(x[var], e - 1);
                for (other, &eo) in t.exponents.iter().enumerate() {
                    if other != var && eo > 0 {
                        v *= powi(x[other], eo);
                    }
                }
                jac[(t.output, var)] += v;
            }
        }
    }

    /// Groups the terms by exponent vector, preserving first-appearance order.
    pub fn grouped_by_exponents(&self) -> Vec<(Vec<u32>, Vec<(usize, f64)>)> {
        let mut order: Vec<(Vec<u32>, Vec<(usize, f64)>)> = Vec::new();
        let mut index: HashMap<&[u32], usize> = HashMap::new();
        for t in &self.terms {
            match index.get(t.exponents.as_slice()) {
                Some(&i) => order[i].1.push((t.output, t.coeff)),
                None => {
                    index.insert(&t.exponents, order.len());
                    order.push((t.exponents.clone(), vec![(t.output, t.coeff)]));
                }
            }
        }
        order
    }
}
