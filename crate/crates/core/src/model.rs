//! Second-order mechanical systems and their first-order state-space form.
//!
//! The second-order model is
//!
//! ```text
//! M q̈ + C q̇ + K q + f(q, q̇) = g(q, q̇, t),
//! g = ε Σ_j θ_j(t) (v_j + P_j(q, q̇)),
//! ```
//!
//! with one bounded noise signal `θ_j` per forcing channel. With the state
//! `x = (q, q̇)` it becomes `ẋ = A x + F(x) + G(x, t)` where
//! `A = [0, I; -M⁻¹K, -M⁻¹C]`, `F = (0, -M⁻¹f)` and `G = (0, M⁻¹g)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::NoiseSourceConfig;
use crate::poly::{PolyTerm, PolynomialMap};

/// One additive noise channel `θ_j(t) (v_j + P_j(q, q̇))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingChannel {
    #[serde(default)]
    pub label: String,
    /// Constant shape vector `v_j` in physical coordinates.
    pub shape: Vec<f64>,
    /// Optional state-dependent part `P_j(q, q̇)` multiplying the same noise.
    #[serde(default)]
    pub parametric: Option<PolynomialMap>,
    pub source: NoiseSourceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    /// Overall forcing amplitude `ε`.
    pub amplitude: f64,
    pub channels: Vec<ForcingChannel>,
}

impl ForcingSpec {
    pub fn none() -> Self {
        Self {
            amplitude: 0.0,
            channels: Vec::new(),
        }
    }

    pub fn with_amplitude(mut self, eps: f64) -> Self {
        self.amplitude = eps;
        self
    }

    fn validate(&self, n_dof: usize) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "forcing amplitude must be finite and >= 0, got {}",
                self.amplitude
            )));
        }
        for (j, ch) in self.channels.iter().enumerate() {
            if ch.shape.len() != n_dof {
                return Err(Error::DimensionMismatch {
                    expected: n_dof,
                    got: ch.shape.len(),
                });
            }
            if ch.shape.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("forcing channel {j} has a non-finite shape")));
            }
            if let Some(p) = &ch.parametric {
                if p.input_dim() != 2 * n_dof || p.output_dim() != n_dof {
                    return Err(Error::InvalidModel(format!(
                        "parametric forcing of channel {j} must map R^{} -> R^{n_dof}",
                        2 * n_dof
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Relative tolerance for the semidefiniteness checks on `C` and `K`.
const DEFINITENESS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystem", into = "RawSystem")]
pub struct MechanicalSystem {
    name: String,
    mass: DMatrix<f64>,
    damping: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    nonlinearity: PolynomialMap,
    forcing: ForcingSpec,
}

/// Serialized layout: dense row-major matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(default)]
    name: String,
    mass: Vec<Vec<f64>>,
    damping: Vec<Vec<f64>>,
    stiffness: Vec<Vec<f64>>,
    #[serde(default)]
    nonlinearity: Vec<PolyTerm>,
    forcing: ForcingSpec,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidModel(format!("{what} matrix must be square")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl TryFrom<RawSystem> for MechanicalSystem {
    type Error = Error;
    fn try_from(raw: RawSystem) -> Result<Self> {
        let mass = matrix_from_rows(&raw.mass, "mass")?;
        let n = mass.nrows();
        let nl = PolynomialMap::new(2 * n, n, raw.nonlinearity)?;
        MechanicalSystem::new(
            raw.name,
            mass,
            matrix_from_rows(&raw.damping, "damping")?,
            matrix_from_rows(&raw.stiffness, "stiffness")?,
            nl,
            raw.forcing,
        )
    }
}

impl From<MechanicalSystem> for RawSystem {
    fn from(s: MechanicalSystem) -> Self {
        RawSystem {
            name: s.name,
            mass: rows_of(&s.mass),
            damping: rows_of(&s.damping),
            stiffness: rows_of(&s.stiffness),
            nonlinearity: s.nonlinearity.terms().to_vec(),
            forcing: s.forcing,
        }
    }
}

fn check_symmetric_psd(m: &DMatrix<f64>, what: &str, strict: bool) -> Result<()> {
    let scale = m.norm().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).norm() > 1e-12 * scale {
        return Err(Error::InvalidModel(format!("{what} matrix is not symmetric")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel(format!("{what} matrix has non-finite entries")));
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if strict && !(min > 0.0) {
        return Err(Error::InvalidModel(format!("{what} matrix is not positive definite (min eigenvalue {min})")));
    }
    if min < -DEFINITENESS_TOL * scale {
        return Err(Error::InvalidModel(format!(
            "{what} matrix is not positive semidefinite (min eigenvalue {min})"
        )));
    }
    Ok(())
}

impl MechanicalSystem {
    pub fn new(
        name: impl Into<String>,
        mass: DMatrix<f64>,
        damping: DMatrix<f64>,
        stiffness: DMatrix<f64>,
        nonlinearity: PolynomialMap,
        forcing: ForcingSpec,
    ) -> Result<Self> {
        let n = mass.nrows();
        if n == 0 {
            return Err(Error::InvalidModel("system needs at least one degree of freedom".into()));
        }
        for (m, what) in [(&mass, "mass"), (&damping, "damping"), (&stiffness, "stiffness")] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidModel(format!("{what} matrix must be {n}x{n}")));
            }
        }
        check_symmetric_psd(&mass, "mass", true)?;
        check_symmetric_psd(&damping, "damping", false)?;
        check_symmetric_psd(&stiffness, "stiffness", false)?;
        if nonlinearity.input_dim() != 2 * n || nonlinearity.output_dim() != n {
            return Err(Error::InvalidModel(format!(
                "nonlinearity must map R^{} -> R^{n}, got R^{} -> R^{}",
                2 * n,
                nonlinearity.input_dim(),
                nonlinearity.output_dim()
            )));
        }
        forcing.validate(n)?;
        Ok(Self {
            name: name.into(),
            mass,
            damping,
            stiffness,
            nonlinearity,
            forcing,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_dof(&self) -> usize {
        self.mass.nrows()
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn damping(&self) -> &DMatrix<f64> {
        &self.damping
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn nonlinearity(&self) -> &PolynomialMap {
        &self.nonlinearity
    }

    pub fn forcing(&self) -> &ForcingSpec {
        &self.forcing
    }

    pub fn with_amplitude(mut self, eps: f64) -> Result<Self> {
        self.forcing = self.forcing.with_amplitude(eps);
        self.forcing.validate(self.n_dof())?;
        Ok(self)
    }

    pub fn with_forcing(mut self, forcing: ForcingSpec) -> Result<Self> {
        forcing.validate(self.n_dof())?;
        self.forcing = forcing;
        Ok(self)
    }

    /// The same system with the nonlinearity removed.
    pub fn linearized(&self) -> Self {
        Self {
            nonlinearity: PolynomialMap::zero(2 * self.n_dof(), self.n_dof()),
            ..self.clone()
        }
    }

    /// Physical force `g(q, q̇, t)` for channel values `theta`, added into `out`.
    pub fn add_external_force(&self, q: &[f64], qd: &[f64], theta: &[f64], out: &mut [f64]) {
        let eps = self.forcing.amplitude;
        let mut state: Vec<f64> = Vec::new();
        for (ch, &th) in self.forcing.channels.iter().zip(theta) {
            let s = eps * th;
            if s == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&ch.shape) {
                *o += s * v;
            }
            if let Some(p) = &ch.parametric {
                if state.is_empty() {
                    state.extend_from_slice(q);
                    state.extend_from_slice(qd);
                }
                let mut tmp = vec![0.0; out.len()];
                p.eval_into(&state, &mut tmp);
                for (o, v) in out.iter_mut().zip(&tmp) {
                    *o += s * v;
                }
            }
        }
    }

    /// Second-order residual `M q̈ + C q̇ + K q + f - g`.
    pub fn residual(&self, q: &[f64], qd: &[f64], qdd: &[f64], theta: &[f64]) -> DVector<f64> {
        let q_v = DVector::from_column_slice(q);
        let qd_v = DVector::from_column_slice(qd);
        let mut r = &self.mass * DVector::from_column_slice(qdd) + &self.damping * &qd_v + &self.stiffness * &q_v;
        let mut x = q.to_vec();
        x.extend_from_slice(qd);
        self.nonlinearity.eval_into(&x, r.as_mut_slice());
        let mut g = vec![0.0; self.n_dof()];
        self.add_external_force(q, qd, theta, &mut g);
        for (ri, gi) in r.iter_mut().zip(&g) {
            *ri -= gi;
        }
        r
    }
}

/// Default cap on the condition number of `M`.
pub const MASS_CONDITION_CAP: f64 = 1e12;

/// First-order form `ẋ = A x + F(x) + G(x, t)` with `x = (q, q̇)`.
#[derive(Debug, Clone)]
pub struct FirstOrderSystem {
    system: MechanicalSystem,
    a: DMatrix<f64>,
    f: PolynomialMap,
    /// `(0, M⁻¹ v_j)` per channel, without the amplitude.
    channel_vectors: Vec<DVector<f64>>,
    /// `(0, M⁻¹ P_j)` per channel.
    channel_parametric: Vec<Option<PolynomialMap>>,
    mass_factor: Cholesky<f64, Dyn>,
}

/// Pushes a polynomial `R^{2n} -> R^n` through `x ↦ (0, s·M⁻¹x)`.
fn lift_through_mass(p: &PolynomialMap, minv_cols: &dyn Fn(usize) -> DVector<f64>, scale: f64, n: usize) -> Result<PolynomialMap> {
    let mut terms = Vec::new();
    let mut cache: Vec<Option<DVector<f64>>> = vec![None; n];
    for t in p.terms() {
        let col = cache[t.output].get_or_insert_with(|| minv_cols(t.output));
        for r in 0..n {
            let c = scale * t.coeff * col[r];
            if c != 0.0 {
                terms.push(PolyTerm {
                    exponents: t.exponents.clone(),
                    output: n + r,
                    coeff: c,
                });
            }
        }
    }
    PolynomialMap::new(2 * n, 2 * n, terms)
}

impl FirstOrderSystem {
    pub fn system(&self) -> &MechanicalSystem {
        &self.system
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_dof(&self) -> usize {
        self.system.n_dof()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn f(&self) -> &PolynomialMap {
        &self.f
    }

    pub fn amplitude(&self) -> f64 {
        self.system.forcing.amplitude
    }

    pub fn channel_count(&self) -> usize {
        self.channel_vectors.len()
    }

    /// `(0, M⁻¹ v_j)` of channel `j`, without the amplitude.
    pub fn channel_vector(&self, j: usize) -> &DVector<f64> {
        &self.channel_vectors[j]
    }

    /// Applies `M⁻¹` through the cached factorization.
    pub fn solve_mass(&self, b: &DVector<f64>) -> DVector<f64> {
        self.mass_factor.solve(b)
    }

    /// State-independent forcing `G(0, θ) = ε Σ_j θ_j (0, M⁻¹ v_j)`.
    pub fn forcing_at_origin(&self, theta: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        let eps = self.amplitude();
        for (v, &th) in self.channel_vectors.iter().zip(theta) {
            out.axpy(eps * th, v, 1.0);
        }
        out
    }

    /// Full forcing `G(x, θ)` including parametric channels.
    pub fn forcing(&self, x: &[f64], theta: &[f64]) -> DVector<f64> {
        let mut out = self.forcing_at_origin(theta);
        let eps = self.amplitude();
        for (p, &th) in self.channel_parametric.iter().zip(theta) {
            if let Some(p) = p {
                let mut tmp = vec![0.0; self.dim()];
                p.eval_into(x, &mut tmp);
                for (o, v) in out.iter_mut().zip(&tmp) {
                    *o += eps * th * v;
                }
            }
        }
        out
    }

    /// `A x + F(x) + G(x, θ)`.
    pub fn rhs(&self, x: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let xv = DVector::from_column_slice(x);
        let mut out = &self.a * &xv;
        self.f.eval_into(x, out.as_mut_slice());
        out += self.forcing(x, theta);
        Ok(out)
    }
}

/// Assembles the first-order form. Rejects ill-conditioned mass matrices and
/// origins that are not strictly asymptotically stable.
pub fn to_first_order(sys: &MechanicalSystem) -> Result<FirstOrderSystem> {
    to_first_order_with_cap(sys, MASS_CONDITION_CAP)
}

pub fn to_first_order_with_cap(sys: &MechanicalSystem, condition_cap: f64) -> Result<FirstOrderSystem> {
    let n = sys.n_dof();
    let eig = SymmetricEigen::new(sys.mass.clone()).eigenvalues;
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= condition_cap) {
        return Err(Error::SingularMass { condition });
    }
    let chol = Cholesky::new(sys.mass.clone()).ok_or(Error::SingularMass { condition })?;
    let minv_k = chol.solve(&sys.stiffness);
    let minv_c = chol.solve(&sys.damping);
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = 1.0;
        for j in 0..n {
            a[(n + i, j)] = -minv_k[(i, j)];
            a[(n + i, n + j)] = -minv_c[(i, j)];
        }
    }
    let minv_col = |i: usize| {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        chol.solve(&e)
    };
    let f = lift_through_mass(&sys.nonlinearity, &minv_col, -1.0, n)?;
    let mut channel_vectors = Vec::new();
    let mut channel_parametric = Vec::new();
    for ch in &sys.forcing.channels {
        let v = chol.solve(&DVector::from_column_slice(&ch.shape));
        let mut full = DVector::zeros(2 * n);
        full.rows_mut(n, n).copy_from(&v);
        channel_vectors.push(full);
        channel_parametric.push(match &ch.parametric {
            Some(p) => Some(lift_through_mass(p, &minv_col, 1.0, n)?),
            None => None,
        });
    }
    let norm = a.norm();
    let max_re = a
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(max_re < -1e-12 * norm) {
        return Err(Error::UnstableOrigin { real_part: max_re });
    }
    Ok(FirstOrderSystem {
        system: sys.clone(),
        a,
        f,
        channel_vectors,
        channel_parametric,
        mass_factor: chol,
    })
}
