//! Random reduced-order model on the slow spectral submanifold.
//!
//! Reduced dynamics `ξ̇ = R₀(ξ) + ε VE_L G₀(t)` with `G₀(t) = G(0, θ(t))`,
//! plus the optional first-order manifold correction `h₁`, carried as the
//! state `w` of `ẇ = A w + P⊥ G₀(t)` and lifted as `W₀(ξ) + ε w`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::forcing::NoiseRealization;
use crate::model::FirstOrderSystem;
use crate::spectral::SpectralSubspace;
use crate::ssm::SsmExpansion;

/// `VE_L · G₀`.
pub fn reduced_forcing(sub: &SpectralSubspace, g0: &DVector<f64>) -> DVector<f64> {
    &sub.ve_l * g0
}

/// Exact zero-order-hold propagators of `ẇ = A w + P⊥ G u` over a step and a half step.
#[derive(Debug, Clone)]
struct H1Propagator {
    dt: f64,
    phi: DMatrix<f64>,
    gamma: DMatrix<f64>,
    phi_half: DMatrix<f64>,
    gamma_half: DMatrix<f64>,
}

impl H1Propagator {
    fn new(a: &DMatrix<f64>, input: &DMatrix<f64>, dt: f64) -> Self {
        let (phi, gamma) = zoh(a, input, dt);
        let (phi_half, gamma_half) = zoh(a, input, dt / 2.0);
        Self {
            dt,
            phi,
            gamma,
            phi_half,
            gamma_half,
        }
    }
}

/// `(e^{A h}, ∫₀ʰ e^{A s} ds · B)` from the exponential of the augmented matrix.
fn zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let c = b.ncols();
    let mut aug = DMatrix::zeros(n + c, n + c);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * h));
    aug.view_mut((0, n), (n, c)).copy_from(&(b * h));
    let e = aug.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, c)).into_owned())
}

#[derive(Debug, Clone)]
pub struct RandomReducedModel {
    name: String,
    pub expansion: SsmExpansion<f64>,
    pub sub: SpectralSubspace,
    pub eps: f64,
    include_h1: bool,
    a: DMatrix<f64>,
    f: crate::poly::PolynomialMap,
    /// `VE_L (0, M⁻¹ v_j)` per channel.
    reduced_channels: Vec<DVector<f64>>,
    /// `(0, M⁻¹ v_j)` per channel, as columns.
    channels: DMatrix<f64>,
    h1: Option<H1Propagator>,
    /// Running `w`; stays zero unless `include_h1` is set.
    pub h1_state: DVector<f64>,
}

impl RandomReducedModel {
    pub fn new(fos: &FirstOrderSystem, sub: SpectralSubspace, expansion: SsmExpansion<f64>, include_h1: bool) -> Result<Self> {
        if expansion.dim != fos.dim() || expansion.d != sub.d {
            return Err(Error::DimensionMismatch {
                expected: fos.dim(),
                got: expansion.dim,
            });
        }
        let dim = fos.dim();
        let channels = DMatrix::from_fn(dim, fos.channel_count(), |i, j| fos.channel_vector(j)[i]);
        let reduced_channels = (0..fos.channel_count())
            .map(|j| reduced_forcing(&sub, fos.channel_vector(j)))
            .collect();
        Ok(Self {
            name: format!("{}:reduced", fos.system().name()),
            expansion,
            eps: fos.amplitude(),
            include_h1,
            a: fos.a().clone(),
            f: fos.f().clone(),
            reduced_channels,
            channels,
            h1: None,
            h1_state: DVector::zeros(dim),
            sub,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.sub.d
    }

    pub fn dim(&self) -> usize {
        self.expansion.dim
    }

    pub fn include_h1(&self) -> bool {
        self.include_h1
    }

    pub fn channel_count(&self) -> usize {
        self.channels.ncols()
    }

    /// `G₀ = Σ_j θ_j (0, M⁻¹ v_j)`, without the amplitude.
    pub fn forcing_at_origin(&self, theta: &[f64]) -> DVector<f64> {
        &self.channels * DVector::from_column_slice(theta)
    }

    /// Spin-up horizon `10 / |Re λ_{d+1}|` for the `h₁` state, zero if the
    /// subspace is the whole space.
    pub fn spin_up_time(&self) -> f64 {
        let spec = &self.sub.spectrum;
        match spec.eigenvalues.get(self.sub.d) {
            Some(l) => 10.0 / l.re.abs(),
            None => 0.0,
        }
    }

    /// Prepares the `h₁` propagators for step `dt` and resets the state.
    pub fn prepare(&mut self, dt: f64) {
        self.h1_state.fill(0.0);
        if self.include_h1 && self.h1.as_ref().is_none_or(|p| p.dt != dt) {
            let input = self.sub.complement_projector() * &self.channels;
            self.h1 = Some(H1Propagator::new(&self.a, &input, dt));
        }
    }

    /// `R₀(ξ) + ε VE_L G₀`, plus `ε VE_L DF(W₀(ξ)) w` when `h₁` is on.
    pub fn reduced_rhs_with(&self, xi: &[f64], theta: &[f64], w: Option<&DVector<f64>>, out: &mut [f64]) {
        let mono = self.expansion.index.monomials(xi);
        self.expansion.reduced_rhs_from_monomials(&mono, out);
        if self.eps == 0.0 {
            return;
        }
        for (g, &th) in self.reduced_channels.iter().zip(theta) {
            let s = self.eps * th;
            if s != 0.0 {
                for (o, gi) in out.iter_mut().zip(g.iter()) {
                    *o += s * gi;
                }
            }
        }
        if let Some(w) = w {
            if w.iter().all(|v| *v == 0.0) || self.f.is_empty() {
                return;
            }
            let x = self.expansion.parametrization(xi);
            let mut jac = DMatrix::zeros(self.dim(), self.dim());
            self.f.jacobian_into(&x, &mut jac);
            let corr = &self.sub.ve_l * (jac * w);
            for (o, c) in out.iter_mut().zip(corr.iter()) {
                *o += self.eps * c;
            }
        }
    }

    /// Reduced right-hand side with the current `h₁` state.
    pub fn reduced_rhs(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d()];
        let w = self.include_h1.then_some(&self.h1_state);
        self.reduced_rhs_with(xi, theta, w, &mut out);
        out
    }

    /// Reduced right-hand side with `θ` looked up (zero-order hold) from the realizations.
    pub fn reduced_rhs_at(&self, xi: &[f64], noise: &[NoiseRealization], t: f64) -> Result<Vec<f64>> {
        let theta = noise.iter().map(|n| n.at(t)).collect::<Result<Vec<_>>>()?;
        Ok(self.reduced_rhs(xi, &theta))
    }

    /// Half-step and full-step `h₁` states for a step with held `θ`; the
    /// state itself is not modified. `None` when `h₁` is off.
    pub fn h1_stages(&self, theta: &[f64]) -> Option<(DVector<f64>, DVector<f64>)> {
        if !self.include_h1 {
            return None;
        }
        let prop = self.h1.as_ref().expect("prepare() sets up the h1 propagator");
        let u = DVector::from_column_slice(theta);
        let half = &prop.phi_half * &self.h1_state + &prop.gamma_half * &u;
        let next = &prop.phi * &self.h1_state + &prop.gamma * &u;
        Some((half, next))
    }

    /// Advances `w` over one step with held `θ`. No-op when `h₁` is off.
    pub fn advance_h1(&mut self, theta: &[f64]) {
        if !self.include_h1 {
            return;
        }
        let prop = self.h1.as_ref().expect("prepare() sets up the h1 propagator");
        let u = DVector::from_column_slice(theta);
        self.h1_state = &prop.phi * &self.h1_state + &prop.gamma * &u;
    }

    /// `h₁ = V_L w` in complement coordinates.
    pub fn h1(&self) -> DVector<f64> {
        &self.sub.v_l * &self.h1_state
    }

    /// Physical state `W₀(ξ) + ε V_R h₁`; with `h₁` off this is `W₀(ξ)`.
    pub fn lift(&self, xi: &[f64]) -> Vec<f64> {
        let mut x = self.expansion.parametrization(xi);
        if self.include_h1 && self.eps != 0.0 {
            let emb = &self.sub.v_r * self.h1();
            for (o, e) in x.iter_mut().zip(emb.iter()) {
                *o += self.eps * e;
            }
        }
        x
    }

    /// Selected components of `W₀(ξ)` (plus the `h₁` embedding when on).
    pub fn lift_rows(&self, xi: &[f64], rows: &[usize], out: &mut [f64]) {
        let mono = self.expansion.index.monomials(xi);
        self.expansion.parametrization_rows(&mono, rows, out);
        if self.include_h1 && self.eps != 0.0 {
            let emb = &self.sub.v_r * self.h1();
            for (o, &r) in out.iter_mut().zip(rows) {
                *o += self.eps * emb[r];
            }
        }
    }
}
