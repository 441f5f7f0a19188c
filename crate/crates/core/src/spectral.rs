//! Eigen-analysis of the linear part `A`.
//!
//! Eigenvalues come from the real Schur form; eigenvectors from inverse
//! iteration, normalized so the largest component is real and positive.
//! The canonical basis is real: each complex pair `λ = α + iβ` (listed with
//! `β > 0` first) contributes the columns `(Re v, Im v)`, on which `A` acts as
//! the block `[[α, β], [-β, α]]`.

use nalgebra::{DMatrix, DVector};
use num_complex::{Complex, Complex64};
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::linalg::{CLu, CMat};
use crate::scalar::{cabs2, cfrom, Real};

/// Condition-number cap on the real eigenvector basis.
pub const DEFECTIVE_CAP: f64 = 1e10;
/// Default enumeration budget of the nonresonance check.
pub const RESONANCE_BUDGET: u128 = 10_000_000;

#[derive(Debug, Clone)]
pub struct SpectralData {
    pub eigenvalues: Vec<Complex64>,
    /// Unit right eigenvectors, same order as the eigenvalues.
    pub eigenvectors: Vec<DVector<Complex64>>,
    pub t_r: DMatrix<f64>,
    pub t_l: DMatrix<f64>,
    /// 1 for a real eigenvalue, 2 for a conjugate pair.
    pub blocks: Vec<usize>,
    pub a_norm: f64,
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Offsets where each block starts.
    pub fn block_starts(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut at = 0;
        for b in &self.blocks {
            out.push(at);
            at += b;
        }
        out
    }

    /// Block index of every eigenvalue.
    pub fn block_ids(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, &b)| std::iter::repeat_n(i, b))
            .collect()
    }

    /// `T_L A T_R`.
    pub fn block_diagonal(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        &self.t_l * a * &self.t_r
    }
}

fn normalize_phase(v: &mut DVector<Complex64>) {
    let (imax, _) = v
        .iter()
        .enumerate()
        .fold((0, -1.0), |(bi, bv), (i, z)| if z.norm() > bv + 1e-14 * bv.abs() { (i, z.norm()) } else { (bi, bv) });
    let z = v[imax];
    let phase = if z.norm() > 0.0 { z.conj() / z.norm() } else { Complex64::new(1.0, 0.0) };
    let norm = v.norm();
    v.iter_mut().for_each(|x| *x = *x * phase / norm);
    v[imax] = Complex64::new(v[imax].re, 0.0);
}

fn to_cmat(a: &DMatrix<f64>) -> CMat<f64> {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| Complex64::new(a[(i, j)], 0.0))
}

/// Inverse iteration for every eigenvalue of `cluster` at once, returning an
/// orthonormalized set of vectors spanning their eigenspace.
fn cluster_vectors(a: &DMatrix<f64>, shift: Complex64, count: usize) -> Vec<DVector<Complex64>> {
    let n = a.nrows();
    let mut shifted = to_cmat(a);
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    let floor = f64::EPSILON * a.norm().max(1.0);
    let lu = CLu::new(&shifted, Complex64::new(floor, 0.0).re);
    let mut basis: Vec<DVector<Complex64>> = Vec::new();
    for c in 0..count {
        let mut x: Vec<Complex64> = (0..n)
            .map(|i| {
                let t = (i + 1) as f64;
                Complex64::new(1.0 + 0.37 * (t * (c + 1) as f64).sin(), 0.21 * (t * 1.7 + c as f64).cos())
            })
            .collect();
        for _ in 0..3 {
            x = lu.solve(&x);
            let nrm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            x.iter_mut().for_each(|z| *z /= nrm);
        }
        let mut v = DVector::from_vec(x);
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dotc(&v);
                v -= b * proj;
            }
        }
        let nrm = v.norm();
        if nrm > 0.0 {
            v /= Complex64::new(nrm, 0.0);
        }
        basis.push(v);
    }
    basis
}

/// Ordered spectrum and real bi-orthonormal bases of `A`.
pub fn compute_spectrum(a: &DMatrix<f64>) -> Result<SpectralData> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidArgument("matrix must be square and non-empty".into()));
    }
    let a_norm = a.norm();
    let tol = 1e-12 * a_norm.max(f64::MIN_POSITIVE);
    let raw = a.complex_eigenvalues();
    let max_re = raw.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if !(max_re < 0.0) {
        return Err(Error::UnstableSpectrum { real_part: max_re });
    }
    // representatives: real eigenvalues and the Im > 0 member of each pair
    let mut reps: Vec<Complex64> = Vec::new();
    let mut n_neg = 0;
    for z in raw.iter() {
        if z.im.abs() <= tol {
            reps.push(Complex64::new(z.re, 0.0));
        } else if z.im > 0.0 {
            reps.push(*z);
        } else {
            n_neg += 1;
        }
    }
    let n_pos = reps.iter().filter(|z| z.im > 0.0).count();
    if n_pos != n_neg {
        return Err(Error::DefectiveMatrix { condition: f64::INFINITY });
    }
    reps.sort_by(|x, y| {
        if (x.re - y.re).abs() > tol {
            y.re.total_cmp(&x.re)
        } else {
            x.im.abs().total_cmp(&y.im.abs()).then(x.im.total_cmp(&y.im))
        }
    });

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Vec::with_capacity(n);
    let mut blocks = Vec::new();
    let cluster_tol = 1e-8 * a_norm.max(f64::MIN_POSITIVE);
    let mut i = 0;
    while i < reps.len() {
        let mut j = i + 1;
        while j < reps.len() && (reps[j] - reps[i]).norm() <= cluster_tol {
            j += 1;
        }
        let shift = reps[i];
        let vecs = cluster_vectors(a, shift, j - i);
        for (k, mut v) in vecs.into_iter().enumerate() {
            let lam = reps[i + k];
            let resid = (a.map(|x| Complex64::new(x, 0.0)) * &v - &v * lam).norm();
            if !(resid <= 1e-6 * a_norm) {
                return Err(Error::DefectiveMatrix { condition: f64::INFINITY });
            }
            normalize_phase(&mut v);
            if lam.im == 0.0 {
                v.iter_mut().for_each(|z| z.im = 0.0);
                let nrm = v.norm();
                v /= Complex64::new(nrm, 0.0);
                eigenvalues.push(lam);
                eigenvectors.push(v);
                blocks.push(1);
            } else {
                eigenvalues.push(lam);
                eigenvalues.push(lam.conj());
                eigenvectors.push(v.clone());
                eigenvectors.push(v.map(|z| z.conj()));
                blocks.push(2);
            }
        }
        i = j;
    }
    debug_assert_eq!(eigenvalues.len(), n);

    let mut t_r = DMatrix::zeros(n, n);
    let mut col = 0;
    for &b in &blocks {
        let v = &eigenvectors[col];
        for r in 0..n {
            t_r[(r, col)] = v[r].re;
            if b == 2 {
                t_r[(r, col + 1)] = v[r].im;
            }
        }
        col += b;
    }
    let sv = t_r.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= DEFECTIVE_CAP) {
        return Err(Error::DefectiveMatrix { condition });
    }
    let t_l = t_r.clone().try_inverse().ok_or(Error::DefectiveMatrix { condition })?;
    Ok(SpectralData {
        eigenvalues,
        eigenvectors,
        t_r,
        t_l,
        blocks,
        a_norm,
    })
}

#[derive(Debug, Clone)]
pub struct SpectralSubspace {
    /// Number of eigenspaces (blocks) spanned.
    pub s: usize,
    pub d: usize,
    pub ve_r: DMatrix<f64>,
    pub ve_l: DMatrix<f64>,
    /// Complementary right columns of `T_R`.
    pub v_r: DMatrix<f64>,
    pub v_l: DMatrix<f64>,
    pub ae: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// The spectrum the subspace was cut from.
    pub spectrum: SpectralData,
}

impl SpectralSubspace {
    /// `P⊥ = I - VE_R VE_L`.
    pub fn complement_projector(&self) -> DMatrix<f64> {
        let n = self.ve_r.nrows();
        DMatrix::identity(n, n) - &self.ve_r * &self.ve_l
    }
}

fn build_subspace(spec: &SpectralData, a: &DMatrix<f64>, s: usize, d: usize) -> SpectralSubspace {
    let n = spec.dim();
    let ve_r = spec.t_r.columns(0, d).into_owned();
    let ve_l = spec.t_l.rows(0, d).into_owned();
    let v_r = spec.t_r.columns(d, n - d).into_owned();
    let v_l = spec.t_l.rows(d, n - d).into_owned();
    let ae = &ve_l * a * &ve_r;
    let b = &v_l * a * &v_r;
    SpectralSubspace {
        s,
        d,
        ve_r,
        ve_l,
        v_r,
        v_l,
        ae,
        b,
        spectrum: spec.clone(),
    }
}

/// Subspace spanned by the first `s` eigenspaces (blocks).
pub fn slow_subspace(spec: &SpectralData, a: &DMatrix<f64>, s: usize) -> Result<SpectralSubspace> {
    if s == 0 || s > spec.blocks.len() {
        return Err(Error::InvalidArgument(format!(
            "subspace count must be in 1..={}, got {s}",
            spec.blocks.len()
        )));
    }
    let d = spec.blocks[..s].iter().sum();
    Ok(build_subspace(spec, a, s, d))
}

/// Subspace of real dimension `d`; fails if `d` cuts a conjugate pair.
pub fn slow_subspace_by_dim(spec: &SpectralData, a: &DMatrix<f64>, d: usize) -> Result<SpectralSubspace> {
    let mut acc = 0;
    for (s, &b) in spec.blocks.iter().enumerate() {
        if acc == d && d > 0 {
            return Ok(build_subspace(spec, a, s, d));
        }
        if acc < d && d < acc + b {
            return Err(Error::PairSplit { dim: d });
        }
        acc += b;
    }
    if acc == d {
        Ok(build_subspace(spec, a, spec.blocks.len(), d))
    } else {
        Err(Error::InvalidArgument(format!("subspace dimension {d} exceeds {acc}")))
    }
}

/// `⌊Re λ_dim / Re λ_1⌋`.
pub fn spectral_quotient(spec: &SpectralData) -> u64 {
    let first = spec.eigenvalues[0].re;
    let last = spec.eigenvalues[spec.dim() - 1].re;
    (last / first).floor() as u64
}

/// `⌊Re λ_{d+1} / Re λ_d⌋` for `1 <= d < dim`.
pub fn spectral_gap(spec: &SpectralData, d: usize) -> Result<u64> {
    if d == 0 || d >= spec.dim() {
        return Err(Error::InvalidArgument(format!("gap needs 1 <= d < {}, got {d}", spec.dim())));
    }
    Ok((spec.eigenvalues[d].re / spec.eigenvalues[d - 1].re).floor() as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resonance {
    pub exponents: Vec<u32>,
    /// Zero-based index of the outer eigenvalue.
    pub index: usize,
    pub defect: f64,
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// All exponent vectors over `d` variables with total degree exactly `k`,
/// in graded-lexicographic order (first variable varies slowest).
pub fn exponents_of_degree(d: usize, k: u32) -> Vec<Vec<u32>> {
    fn rec(d: usize, k: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if d == 1 {
            prefix.push(k);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=k).rev() {
            prefix.push(first);
            rec(d - 1, k - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if d == 0 {
        return out;
    }
    rec(d, k, &mut Vec::with_capacity(d), &mut out);
    out
}

pub fn check_nonresonance(spec: &SpectralData, d: usize, max_order: u32) -> Result<Vec<Resonance>> {
    check_nonresonance_with(spec, d, max_order, 1e-6, RESONANCE_BUDGET)
}

/// Lists `(m, k)` with `2 <= |m| <= max_order`, `k > d` and
/// `|⟨m, λ_E⟩ - λ_k| < rel_tol |λ_k|`.
pub fn check_nonresonance_with(
    spec: &SpectralData,
    d: usize,
    max_order: u32,
    rel_tol: f64,
    budget: u128,
) -> Result<Vec<Resonance>> {
    if max_order < 2 {
        return Err(Error::InvalidArgument("max_order must be at least 2".into()));
    }
    if d == 0 || d > spec.dim() {
        return Err(Error::InvalidArgument(format!("subspace dimension {d} out of range")));
    }
    let outer = (spec.dim() - d) as u128;
    if outer == 0 {
        return Ok(Vec::new());
    }
    let mut needed: u128 = 0;
    for k in 2..=u128::from(max_order) {
        needed = needed.saturating_add(binomial(k + d as u128 - 1, d as u128 - 1).saturating_mul(outer));
    }
    if needed > budget {
        return Err(Error::CombinatorialCap { needed, budget });
    }
    let lam = &spec.eigenvalues;
    let mut out = Vec::new();
    for k in 2..=max_order {
        for m in exponents_of_degree(d, k) {
            let combo: Complex64 = m.iter().zip(lam).map(|(&mi, l)| l * f64::from(mi)).sum();
            for (idx, lk) in lam.iter().enumerate().skip(d) {
                let defect = (combo - lk).norm();
                if defect < rel_tol * lk.norm() {
                    out.push(Resonance {
                        exponents: m.clone(),
                        index: idx,
                        defect,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Complex modal basis `V`, its inverse and the eigenvalues, in a chosen
/// precision. `V = T_R Q` blockwise with `Q = [[1, 1], [i, -i]]`.
#[derive(Debug, Clone)]
pub struct ModalBasis<T: Real> {
    pub lambda: Vec<Complex<T>>,
    pub v: CMat<T>,
    pub v_inv: CMat<T>,
    pub blocks: Vec<usize>,
}

impl ModalBasis<f64> {
    /// Exact complexification of the real bases of `spec`.
    pub fn from_spectrum(spec: &SpectralData) -> Self {
        let n = spec.dim();
        let mut v = CMat::zeros(n, n);
        let mut v_inv = CMat::zeros(n, n);
        let mut col = 0;
        let half = 0.5;
        for &b in &spec.blocks {
            for r in 0..n {
                if b == 1 {
                    v[(r, col)] = Complex64::new(spec.t_r[(r, col)], 0.0);
                    v_inv[(col, r)] = Complex64::new(spec.t_l[(col, r)], 0.0);
                } else {
                    let (re, im) = (spec.t_r[(r, col)], spec.t_r[(r, col + 1)]);
                    v[(r, col)] = Complex64::new(re, im);
                    v[(r, col + 1)] = Complex64::new(re, -im);
                    let (l1, l2) = (spec.t_l[(col, r)], spec.t_l[(col + 1, r)]);
                    v_inv[(col, r)] = Complex64::new(half * l1, -half * l2);
                    v_inv[(col + 1, r)] = Complex64::new(half * l1, half * l2);
                }
            }
            col += b;
        }
        Self {
            lambda: spec.eigenvalues.clone(),
            v,
            v_inv,
            blocks: spec.blocks.clone(),
        }
    }
}

impl<T: Real> ModalBasis<T> {
    /// Newton-refines every simple eigenpair of `a` in precision `T`, starting
    /// from the `f64` basis, then inverts `V` in that precision. Eigenvalues
    /// that belong to a numerical cluster are kept at their `f64` values.
    pub fn refined(spec: &SpectralData, a: &DMatrix<f64>) -> Self {
        let base = ModalBasis::<f64>::from_spectrum(spec);
        let n = spec.dim();
        let at: CMat<T> = CMat::from_fn(n, n, |i, j| Complex::new(T::from_f64(a[(i, j)]), T::zero()));
        let mut lambda: Vec<Complex<T>> = base.lambda.iter().map(|z| cfrom(*z)).collect();
        let mut v: CMat<T> = CMat::from_fn(n, n, |i, j| cfrom(base.v[(i, j)]));
        let cluster_tol = 1e-8 * spec.a_norm;
        let mut col = 0;
        for &b in &spec.blocks {
            let lam0 = spec.eigenvalues[col];
            let clustered = spec
                .eigenvalues
                .iter()
                .enumerate()
                .any(|(k, z)| k != col && k != col + b - 1 && (z - lam0).norm() <= cluster_tol);
            if !clustered {
                let (l, vec) = newton_eigenpair(&at, lambda[col], &v.column(col));
                lambda[col] = l;
                v.set_column(col, &vec);
                if b == 2 {
                    lambda[col + 1] = l.conj();
                    let conj: Vec<Complex<T>> = vec.iter().map(|z| z.conj()).collect();
                    v.set_column(col + 1, &conj);
                } else {
                    lambda[col] = Complex::new(l.re, T::zero());
                    let real: Vec<Complex<T>> = v.column(col).iter().map(|z| Complex::new(z.re, T::zero())).collect();
                    v.set_column(col, &real);
                }
            }
            col += b;
        }
        let v_inv = CLu::new(&v, T::from_f64(f64::MIN_POSITIVE)).inverse();
        Self {
            lambda,
            v,
            v_inv,
            blocks: spec.blocks.clone(),
        }
    }
}

/// Newton iteration on `(A - λ) v = 0`, `c^H v = c^H v0`, with `c = v0`.
fn newton_eigenpair<T: Real>(a: &CMat<T>, lam0: Complex<T>, v0: &[Complex<T>]) -> (Complex<T>, Vec<Complex<T>>) {
    let n = v0.len();
    let mut lam = lam0;
    let mut v = v0.to_vec();
    let target: Complex<T> = v0.iter().map(|z| z.conj() * *z).fold(Complex::zero(), |s, x| s + x);
    for _ in 0..4 {
        let av = a.mul_vec(&v);
        let mut rhs: Vec<Complex<T>> = av.iter().zip(&v).map(|(x, y)| -(*x - lam * *y)).collect();
        let cv: Complex<T> = v0.iter().zip(&v).map(|(c, x)| c.conj() * *x).fold(Complex::zero(), |s, x| s + x);
        rhs.push(-(cv - target));
        let res: f64 = rhs.iter().map(|z| cabs2(*z).to_f64()).sum::<f64>().sqrt();
        if res == 0.0 {
            break;
        }
        let mut bordered = CMat::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                bordered[(i, j)] = a[(i, j)];
            }
            bordered[(i, i)] -= lam;
            bordered[(i, n)] = -v[i];
            bordered[(n, i)] = v0[i].conj();
        }
        let step = CLu::new(&bordered, T::from_f64(f64::MIN_POSITIVE)).solve(&rhs);
        for i in 0..n {
            v[i] += step[i];
        }
        lam += step[n];
    }
    (lam, v)
}
