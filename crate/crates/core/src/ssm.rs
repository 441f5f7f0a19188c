//! Autonomous spectral submanifold: Taylor expansion of the parametrization
//! `W(ξ)` and reduced dynamics `R(ξ)` solving `A W + F(W) = DW · R`.
//!
//! The solve runs in complex modal coordinates `x = V y` with the graph-style
//! choice `y_j = p_j` on the slow modes. At order `k` each non-slow
//! coefficient solves `(λ_j - ⟨m, λ_E⟩) y_{j,m} = mixed_{j,m} - N_{j,m}`, and
//! the slow-mode right-hand side goes into `R`. The result is mapped to the
//! real coordinates `ξ` of the block basis by `p = S ξ`.

use nalgebra::DMatrix;
use num_complex::Complex;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::model::FirstOrderSystem;
use crate::scalar::{cabs, DoubleDouble, Real};
use crate::spectral::{check_nonresonance, spectral_quotient, ModalBasis, SpectralSubspace};
use crate::taylor::MonomialIndex;

/// Relative threshold on `|λ_j - ⟨m, λ_E⟩| / ‖A‖` below which a divisor is flagged.
pub const SMALL_DIVISOR_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SmallDivisor {
    pub exponents: Vec<u32>,
    pub index: usize,
    pub magnitude: f64,
}

/// Order-`N` expansion of `W₀` and `R₀` in real subspace coordinates.
#[derive(Debug, Clone)]
pub struct SsmExpansion<T: Real = f64> {
    pub d: usize,
    pub dim: usize,
    pub order: u32,
    pub index: MonomialIndex,
    /// `w[i][m]`: coefficient of `ξ^m` in component `i` of `W`.
    pub w: Vec<Vec<T>>,
    /// `r[j][m]`: coefficient of `ξ^m` in component `j` of `R`.
    pub r: Vec<Vec<T>>,
    pub small_divisors: Vec<SmallDivisor>,
    /// Largest imaginary part dropped in the real conversion, relative to the
    /// largest coefficient.
    pub max_imag_residue: f64,
    /// Heuristic radius where orders `N` and `N-1` differ by less than 1%.
    pub validity_radius: f64,
}

impl<T: Real> SsmExpansion<T> {
    fn eval_rows(coeffs: &[Vec<T>], mono: &[T], upto: usize, out: &mut [T]) {
        for (o, row) in out.iter_mut().zip(coeffs) {
            let mut acc = T::zero();
            for (c, m) in row[..upto].iter().zip(&mono[..upto]) {
                acc += *c * *m;
            }
            *o = acc;
        }
    }

    fn upto(&self, max_degree: u32) -> usize {
        self.index.degree_range(max_degree.min(self.order)).end
    }

    /// `W₀(ξ)`.
    pub fn parametrization(&self, xi: &[T]) -> Vec<T> {
        self.parametrization_to_degree(xi, self.order)
    }

    pub fn parametrization_to_degree(&self, xi: &[T], max_degree: u32) -> Vec<T> {
        let mono = self.index.monomials(xi);
        let mut out = vec![T::zero(); self.dim];
        Self::eval_rows(&self.w, &mono, self.upto(max_degree), &mut out);
        out
    }

    /// Selected components of `W₀(ξ)` from precomputed monomials.
    pub fn parametrization_rows(&self, mono: &[T], rows: &[usize], out: &mut [T]) {
        let n = self.index.len();
        for (o, &r) in out.iter_mut().zip(rows) {
            let mut acc = T::zero();
            for (c, m) in self.w[r][..n].iter().zip(mono) {
                acc += *c * *m;
            }
            *o = acc;
        }
    }

    /// `R₀(ξ)`.
    pub fn reduced_rhs(&self, xi: &[T]) -> Vec<T> {
        let mono = self.index.monomials(xi);
        let mut out = vec![T::zero(); self.d];
        Self::eval_rows(&self.r, &mono, self.index.len(), &mut out);
        out
    }

    /// `R₀` from precomputed monomials, written into `out`.
    pub fn reduced_rhs_from_monomials(&self, mono: &[T], out: &mut [T]) {
        Self::eval_rows(&self.r, mono, self.index.len(), out);
    }

    /// `DW₀(ξ)` as `dim` rows of `d` partial derivatives.
    pub fn tangent(&self, xi: &[T]) -> Vec<Vec<T>> {
        let mono = self.index.monomials(xi);
        let mut out = vec![vec![T::zero(); self.d]; self.dim];
        for (i, row) in self.w.iter().enumerate() {
            for (m, c) in row.iter().enumerate() {
                if c.is_zero() {
                    continue;
                }
                for l in 0..self.d {
                    if let Some((lower, e)) = self.index.derivative(m, l) {
                        out[i][l] += *c * T::from_f64(f64::from(e)) * mono[lower];
                    }
                }
            }
        }
        out
    }

    /// Coefficient of `ξ^m` in component `i` of `W`.
    pub fn w_coeff(&self, i: usize, exps: &[u32]) -> Option<T> {
        self.index.position(exps).map(|m| self.w[i][m])
    }

    pub fn r_coeff(&self, j: usize, exps: &[u32]) -> Option<T> {
        self.index.position(exps).map(|m| self.r[j][m])
    }

    /// Converts the coefficients to `f64`.
    pub fn to_f64(&self) -> SsmExpansion<f64> {
        let conv = |v: &Vec<Vec<T>>| v.iter().map(|r| r.iter().map(|c| c.to_f64()).collect()).collect();
        SsmExpansion {
            d: self.d,
            dim: self.dim,
            order: self.order,
            index: self.index.clone(),
            w: conv(&self.w),
            r: conv(&self.r),
            small_divisors: self.small_divisors.clone(),
            max_imag_residue: self.max_imag_residue,
            validity_radius: self.validity_radius,
        }
    }
}

/// `W₀(ξ)`.
pub fn evaluate_parametrization<T: Real>(exp: &SsmExpansion<T>, xi: &[T]) -> Vec<T> {
    exp.parametrization(xi)
}

/// `R₀(ξ)`.
pub fn evaluate_reduced_rhs<T: Real>(exp: &SsmExpansion<T>, xi: &[T]) -> Vec<T> {
    exp.reduced_rhs(xi)
}

/// `‖A W₀(ξ) + F(W₀(ξ)) - DW₀(ξ) R₀(ξ)‖₂`, evaluated in precision `T`.
pub fn invariance_residual<T: Real>(fos: &FirstOrderSystem, exp: &SsmExpansion<T>, xi: &[T]) -> T {
    let w = exp.parametrization(xi);
    let dw = exp.tangent(xi);
    let r = exp.reduced_rhs(xi);
    let a = fos.a();
    let mut res = vec![T::zero(); exp.dim];
    for (i, ri) in res.iter_mut().enumerate() {
        let mut acc = T::zero();
        for (j, wj) in w.iter().enumerate() {
            let aij = a[(i, j)];
            if aij != 0.0 {
                acc += T::from_f64(aij) * *wj;
            }
        }
        for (l, rl) in r.iter().enumerate() {
            acc -= dw[i][l] * *rl;
        }
        *ri = acc;
    }
    fos.f().eval_into(&w, &mut res);
    res.iter().fold(T::zero(), |s, x| s + *x * *x).sqrt()
}

/// Sparse factor list `[(var, power)]` per distinct exponent vector of `F`.
type Groups = Vec<(Vec<usize>, Vec<(usize, f64)>)>;

fn factor_groups(fos: &FirstOrderSystem) -> Groups {
    fos.f()
        .grouped_by_exponents()
        .into_iter()
        .map(|(exps, outs)| {
            let factors: Vec<usize> = exps
                .iter()
                .enumerate()
                .flat_map(|(v, &e)| std::iter::repeat_n(v, e as usize))
                .collect();
            (factors, outs)
        })
        .collect()
}

/// Homological solve in precision `T` for the first `d` modes of `basis`.
pub fn solve_homological<T: Real>(
    fos: &FirstOrderSystem,
    basis: &ModalBasis<T>,
    d: usize,
    order: u32,
    a_norm: f64,
) -> Result<SsmExpansion<T>> {
    let dim = fos.dim();
    if order < 2 {
        return Err(Error::InvalidArgument(format!("expansion order must be at least 2, got {order}")));
    }
    if d == 0 || d > dim {
        return Err(Error::InvalidArgument(format!("subspace dimension {d} out of range")));
    }
    let idx = MonomialIndex::new(d, order);
    let len = idx.len();
    let zero = Complex::<T>::zero();
    let one = Complex::new(T::one(), T::zero());
    let lam = &basis.lambda;

    // y: modal coordinates of W; r: reduced dynamics; x = V y
    let mut y = vec![vec![zero; len]; dim];
    let mut r = vec![vec![zero; len]; d];
    for j in 0..d {
        let e = idx.degree_range(1).start + j;
        y[j][e] = one;
        r[j][e] = lam[j];
    }
    let mut x = vec![vec![zero; len]; dim];
    for (i, xi) in x.iter_mut().enumerate() {
        for j in 0..d {
            xi[idx.degree_range(1).start + j] = basis.v[(i, j)];
        }
    }
    let groups = factor_groups(fos);
    let mut small_divisors = Vec::new();

    for k in 2..=order {
        let range = idx.degree_range(k);
        // order-k part of F(x_{<k}) in physical coordinates
        let mut fk = vec![vec![zero; len]; dim];
        let mut tmp = vec![zero; len];
        for (factors, outs) in &groups {
            if factors.len() as u32 > k {
                continue;
            }
            tmp.iter_mut().for_each(|z| *z = zero);
            let last = factors.len() - 1;
            let mut acc = x[factors[0]].clone();
            for &f in &factors[1..last] {
                acc = idx.mul(&acc, &x[f], k - 1);
            }
            idx.mul_add(&acc, &x[factors[last]], k, k, &mut tmp);
            for &(o, c) in outs {
                let c = T::from_f64(c);
                for m in range.clone() {
                    let t = tmp[m];
                    fk[o][m] += t * c;
                }
            }
        }
        // modal projection
        let mut nk = vec![vec![zero; len]; dim];
        for (j, nj) in nk.iter_mut().enumerate() {
            for (i, fi) in fk.iter().enumerate() {
                let vij = basis.v_inv[(j, i)];
                if vij.is_zero() {
                    continue;
                }
                for m in range.clone() {
                    let f = fi[m];
                    if !f.is_zero() {
                        nj[m] += vij * f;
                    }
                }
            }
        }
        for (j, nj) in nk.iter().enumerate().take(d) {
            for m in range.clone() {
                r[j][m] = nj[m];
            }
        }
        for j in d..dim {
            let mut mixed = vec![zero; len];
            if k > 2 {
                for (l, rl) in r.iter().enumerate() {
                    let dy = idx.differentiate(&y[j], l);
                    idx.mul_add(&dy, rl, k, k, &mut mixed);
                }
            }
            for m in range.clone() {
                let rhs = mixed[m] - nk[j][m];
                let exps = idx.exponents(m);
                let mut inner = zero;
                for (l, &e) in exps.iter().enumerate() {
                    if e > 0 {
                        inner += lam[l] * T::from_f64(f64::from(e));
                    }
                }
                let div = lam[j] - inner;
                let mag = cabs(div).to_f64();
                if mag == 0.0 {
                    if rhs.is_zero() {
                        continue;
                    }
                    return Err(Error::InnerOuterResonance {
                        exponents: exps.to_vec(),
                        index: j,
                    });
                }
                if mag < SMALL_DIVISOR_TOL * a_norm {
                    log::warn!("small divisor {mag:e} at exponents {exps:?}, mode {j}");
                    small_divisors.push(SmallDivisor {
                        exponents: exps.to_vec(),
                        index: j,
                        magnitude: mag,
                    });
                }
                y[j][m] = rhs / div;
            }
        }
        for (i, xi) in x.iter_mut().enumerate() {
            for m in range.clone() {
                let mut acc = zero;
                for j in d..dim {
                    let yj = y[j][m];
                    if !yj.is_zero() {
                        acc += basis.v[(i, j)] * yj;
                    }
                }
                xi[m] = acc;
            }
        }
    }

    // substitute p = S ξ
    let half = T::from_f64(0.5);
    let mut s_poly = vec![vec![zero; len]; d];
    let mut col = 0;
    for &b in &basis.blocks {
        if col >= d {
            break;
        }
        let e0 = idx.degree_range(1).start + col;
        if b == 1 {
            s_poly[col][e0] = one;
        } else {
            s_poly[col][e0] = Complex::new(half, T::zero());
            s_poly[col][e0 + 1] = Complex::new(T::zero(), -half);
            s_poly[col + 1][e0] = Complex::new(half, T::zero());
            s_poly[col + 1][e0 + 1] = Complex::new(T::zero(), half);
        }
        col += b;
    }
    if col != d {
        return Err(Error::PairSplit { dim: d });
    }
    let mut p_pow: Vec<Vec<Complex<T>>> = Vec::with_capacity(len);
    let mut unit = vec![zero; len];
    unit[0] = one;
    p_pow.push(unit);
    for m in 1..len {
        let exps = idx.exponents(m);
        let v = exps.iter().position(|&e| e > 0).expect("nonconstant monomial");
        let mut lower = exps.to_vec();
        lower[v] -= 1;
        let parent = idx.position(&lower).expect("parent monomial");
        let next = idx.mul(&p_pow[parent], &s_poly[v], order);
        p_pow.push(next);
    }
    let substitute = |poly: &[Complex<T>]| -> Vec<Complex<T>> {
        let mut out = vec![zero; len];
        for (m, c) in poly.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            for (q, pq) in p_pow[m].iter().enumerate() {
                if !pq.is_zero() {
                    out[q] += *c * *pq;
                }
            }
        }
        out
    };
    let mut max_re = 0.0_f64;
    let mut max_im = 0.0_f64;
    let mut take_real = |v: Vec<Complex<T>>| -> Vec<T> {
        v.into_iter()
            .map(|z| {
                max_re = max_re.max(z.re.to_f64().abs());
                max_im = max_im.max(z.im.to_f64().abs());
                z.re
            })
            .collect()
    };
    let w: Vec<Vec<T>> = x.iter().map(|xi| take_real(substitute(xi))).collect();
    let rc: Vec<Vec<Complex<T>>> = r.iter().map(|rj| substitute(rj)).collect();
    let mut r_real = Vec::with_capacity(d);
    let mut col = 0;
    for &b in &basis.blocks {
        if col >= d {
            break;
        }
        if b == 1 {
            r_real.push(take_real(rc[col].clone()));
        } else {
            let sum: Vec<Complex<T>> = rc[col].iter().zip(&rc[col + 1]).map(|(a, b)| *a + *b).collect();
            let diff: Vec<Complex<T>> = rc[col]
                .iter()
                .zip(&rc[col + 1])
                .map(|(a, b)| {
                    let t = *a - *b;
                    Complex::new(-t.im, t.re)
                })
                .collect();
            r_real.push(take_real(sum));
            r_real.push(take_real(diff));
        }
        col += b;
    }
    let mut exp = SsmExpansion {
        d,
        dim,
        order,
        index: idx,
        w,
        r: r_real,
        small_divisors,
        max_imag_residue: if max_re > 0.0 { max_im / max_re } else { max_im },
        validity_radius: f64::INFINITY,
    };
    exp.validity_radius = validity_radius(&exp);
    Ok(exp)
}

/// Largest `s` on a log grid in `[1e-6, 1e3]` such that along every unit
/// coordinate direction, for all grid points up to `s`, the order-`N` and
/// order-`(N-1)` parametrizations differ by less than 1% relative.
pub fn validity_radius<T: Real>(exp: &SsmExpansion<T>) -> f64 {
    let mut radius = 0.0;
    for step in 0..=180 {
        let s = 10f64.powf(-6.0 + step as f64 * 0.05);
        let ok = (0..exp.d).all(|l| {
            let mut xi = vec![T::zero(); exp.d];
            xi[l] = T::from_f64(s);
            let hi = exp.parametrization_to_degree(&xi, exp.order);
            let lo = exp.parametrization_to_degree(&xi, exp.order - 1);
            let num: f64 = hi.iter().zip(&lo).map(|(a, b)| (*a - *b).to_f64().powi(2)).sum::<f64>().sqrt();
            let den: f64 = hi.iter().map(|a| a.to_f64().powi(2)).sum::<f64>().sqrt();
            num <= 0.01 * den
        });
        if !ok {
            break;
        }
        radius = s;
    }
    radius
}

fn precheck(sub: &SpectralSubspace, order: u32) -> Result<()> {
    let spec = &sub.spectrum;
    let sigma = spectral_quotient(spec).min(u64::from(order)) as u32;
    if sigma >= 2 && sub.d < spec.dim() {
        if let Some(res) = check_nonresonance(spec, sub.d, sigma)?.into_iter().next() {
            return Err(Error::InnerOuterResonance {
                exponents: res.exponents,
                index: res.index,
            });
        }
    }
    Ok(())
}

/// Order-`N` autonomous SSM over `sub`, computed in `f64`.
pub fn compute_autonomous_ssm(fos: &FirstOrderSystem, sub: &SpectralSubspace, order: u32) -> Result<SsmExpansion<f64>> {
    precheck(sub, order)?;
    let basis = ModalBasis::from_spectrum(&sub.spectrum);
    solve_homological(fos, &basis, sub.d, order, sub.spectrum.a_norm)
}

/// Same expansion computed in double-double arithmetic, with the modal basis
/// Newton-refined to that precision. Used to resolve residual decay below the
/// `f64` rounding floor.
pub fn compute_autonomous_ssm_extended(
    fos: &FirstOrderSystem,
    sub: &SpectralSubspace,
    order: u32,
) -> Result<SsmExpansion<DoubleDouble>> {
    precheck(sub, order)?;
    let basis: ModalBasis<DoubleDouble> = ModalBasis::refined(&sub.spectrum, fos.a());
    solve_homological(fos, &basis, sub.d, order, sub.spectrum.a_norm)
}

/// Real `dim x d` matrix of the linear coefficients of `W`.
pub fn linear_part(exp: &SsmExpansion<f64>) -> DMatrix<f64> {
    let start = exp.index.degree_range(1).start;
    DMatrix::from_fn(exp.dim, exp.d, |i, l| exp.w[i][start + l])
}

/// Real `d x d` matrix of the linear coefficients of `R`.
pub fn reduced_linear_part(exp: &SsmExpansion<f64>) -> DMatrix<f64> {
    let start = exp.index.degree_range(1).start;
    DMatrix::from_fn(exp.d, exp.d, |j, l| exp.r[j][start + l])
}
