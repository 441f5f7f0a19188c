//! Time integration: implicit Newmark for the full second-order system, the
//! filter-coupled variant for Methods 2 and 3, and classical RK4 for reduced
//! models. The forcing is zero-order held between grid points everywhere.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{FilterConfig, FilterDriver, NoiseRealization};
use crate::model::MechanicalSystem;
use crate::reduced::RandomReducedModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Newton tolerance, relative to `1 + ‖g‖`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            gamma: 0.5,
            beta: 0.25,
            tol: 1e-10,
            max_iters: 30,
        }
    }
}

impl IntegratorConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self { dt, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(0.0..=0.5).contains(&self.beta) {
            return bad("Newmark beta must lie in [0, 0.5]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("Newmark gamma must lie in [0, 1]");
        }
        if !(self.tol > 0.0) {
            return bad("Newton tolerance must be positive");
        }
        if self.max_iters == 0 {
            return bad("Newton iteration cap must be at least 1");
        }
        Ok(())
    }
}

/// Held channel samples `θ_j(t_n)` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingPath {
    pub dt: f64,
    pub len: usize,
    pub channels: Vec<Vec<f64>>,
}

impl ForcingPath {
    pub fn from_noise(noise: &[NoiseRealization]) -> Result<Self> {
        let first = noise
            .first()
            .ok_or_else(|| Error::InvalidArgument("forcing path needs at least one channel".into()))?;
        for n in noise {
            if n.len() != first.len() {
                return Err(Error::LengthMismatch {
                    expected: first.len(),
                    got: n.len(),
                });
            }
            if n.dt != first.dt {
                return Err(Error::GridMismatch);
            }
        }
        Ok(Self {
            dt: first.dt,
            len: first.len(),
            channels: noise.iter().map(|n| n.samples.clone()).collect(),
        })
    }

    /// All-zero path with `channels` channels.
    pub fn silent(dt: f64, len: usize, channels: usize) -> Self {
        Self {
            dt,
            len,
            channels: vec![vec![0.0; len]; channels],
        }
    }

    pub fn theta(&self, n: usize, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.channels) {
            *o = c[n];
        }
    }

    /// The path from grid index `start` on.
    pub fn shifted(&self, start: usize) -> Self {
        Self {
            dt: self.dt,
            len: self.len - start,
            channels: self.channels.iter().map(|c| c[start..].to_vec()).collect(),
        }
    }

    /// The first `len` samples.
    pub fn truncated(&self, len: usize) -> Self {
        Self {
            dt: self.dt,
            len,
            channels: self.channels.iter().map(|c| c[..len].to_vec()).collect(),
        }
    }
}

/// Which state components a trajectory keeps.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Record {
    /// `(q, q̇)` for full runs, `ξ` for reduced runs.
    #[default]
    All,
    /// Selected physical components of `(q, q̇)`; reduced runs record the lifted values.
    Rows(Vec<usize>),
}

/// Uniformly sampled trajectory, one row per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub labels: Vec<String>,
    data: Vec<f64>,
    pub model: String,
    pub seed: Option<u64>,
    /// Wall time spent integrating [s].
    pub wall_time: f64,
}

impl Trajectory {
    fn new(dt: f64, labels: Vec<String>, capacity: usize, model: &str) -> Self {
        let width = labels.len();
        Self {
            dt,
            labels,
            data: Vec::with_capacity(capacity * width),
            model: model.to_string(),
            seed: None,
            wall_time: 0.0,
        }
    }

    pub fn width(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        if self.width() == 0 {
            0
        } else {
            self.data.len() / self.width()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| i as f64 * self.dt).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.len() - 1)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let w = self.width();
        self.data.iter().skip(j).step_by(w).copied().collect()
    }

    fn push(&mut self, row: &[f64]) {
        self.data.extend_from_slice(row);
    }

    /// CSV with header `t,<labels>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.labels.iter().cloned());
        wr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![format!("{:e}", i as f64 * self.dt)];
            rec.extend(self.row(i).iter().map(|v| format!("{v:e}")));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the format written by [`Trajectory::write_csv`]; `dt` comes
    /// from the first two time stamps.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Trajectory> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.get(0) != Some("t") || header.len() < 2 {
            return Err(Error::InvalidArgument(
                "not a trajectory table (expected t, <label>... columns)".into(),
            ));
        }
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut times = Vec::new();
        let mut data = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            for (i, field) in rec.iter().enumerate() {
                let v = field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad number `{field}` in row {}", line + 2)))?;
                if i == 0 {
                    times.push(v);
                } else {
                    data.push(v);
                }
            }
        }
        if times.len() < 2 {
            return Err(Error::InvalidArgument("trajectory needs at least two rows".into()));
        }
        Ok(Trajectory {
            dt: times[1] - times[0],
            labels,
            data,
            model: String::new(),
            seed: None,
            wall_time: 0.0,
        })
    }
}

fn state_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("q{i}")).chain((0..n).map(|i| format!("qd{i}"))).collect()
}

fn rows_or_all(record: &Record, dim: usize) -> Result<Vec<usize>> {
    match record {
        Record::All => Ok((0..dim).collect()),
        Record::Rows(rows) => {
            if let Some(&r) = rows.iter().find(|&&r| r >= dim) {
                return Err(Error::InvalidArgument(format!("state row {r} out of range (dimension {dim})")));
            }
            Ok(rows.clone())
        }
    }
}

/// Newmark stepper state and scratch.
struct Newmark<'a> {
    sys: &'a MechanicalSystem,
    mass: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Held force at the current grid point.
    theta: Vec<f64>,
    cfg: IntegratorConfig,
    n: usize,
    q: Vec<f64>,
    v: Vec<f64>,
    a: Vec<f64>,
    jac_lin: DMatrix<f64>,
    lu_lin: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    x: Vec<f64>,
    nl_jac: DMatrix<f64>,
}

impl<'a> Newmark<'a> {
    fn new(sys: &'a MechanicalSystem, cfg: IntegratorConfig, q0: &[f64], v0: &[f64], theta0: &[f64]) -> Result<Self> {
        cfg.validate()?;
        let n = sys.n_dof();
        for s in [q0, v0] {
            if s.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: s.len() });
            }
        }
        let (dt, gamma, beta) = (cfg.dt, cfg.gamma, cfg.beta);
        let jac_lin = sys.mass() + sys.damping() * (gamma * dt) + sys.stiffness() * (beta * dt * dt);
        let linear = sys.nonlinearity().is_empty() && sys.forcing().channels.iter().all(|c| c.parametric.is_none());
        let lu_lin = linear.then(|| jac_lin.clone().lu());
        // consistent initial acceleration from M a0 = g - C v0 - K q0 - f
        let r0 = sys.residual(q0, v0, &vec![0.0; n], theta0);
        let mass = sys
            .mass()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidModel("mass matrix is not positive definite".into()))?;
        let a0 = mass.solve(&(-r0));
        Ok(Self {
            mass,
            theta: theta0.to_vec(),
            sys,
            cfg,
            n,
            q: q0.to_vec(),
            v: v0.to_vec(),
            a: a0.as_slice().to_vec(),
            jac_lin,
            lu_lin,
            x: vec![0.0; 2 * n],
            nl_jac: DMatrix::zeros(n, 2 * n),
        })
    }

    /// Advances one step with the force `theta` held over `[t_n, t_{n+1})`.
    /// A change of the held value jumps the acceleration at `t_n` by
    /// `M⁻¹ Δg`, so both trapezoid ends see the same force.
    fn step(&mut self, theta: &[f64], step: usize) -> Result<()> {
        let IntegratorConfig {
            dt,
            gamma,
            beta,
            tol,
            max_iters,
        } = self.cfg;
        let n = self.n;
        if theta != self.theta.as_slice() {
            let delta: Vec<f64> = theta.iter().zip(&self.theta).map(|(a, b)| a - b).collect();
            let mut dg = nalgebra::DVector::zeros(n);
            self.sys.add_external_force(&self.q, &self.v, &delta, dg.as_mut_slice());
            let da = self.mass.solve(&dg);
            for (a, d) in self.a.iter_mut().zip(da.iter()) {
                *a += d;
            }
            self.theta.copy_from_slice(theta);
        }
        let q_pred: Vec<f64> = (0..n)
            .map(|i| self.q[i] + dt * self.v[i] + dt * dt * (0.5 - beta) * self.a[i])
            .collect();
        let v_pred: Vec<f64> = (0..n).map(|i| self.v[i] + dt * (1.0 - gamma) * self.a[i]).collect();
        let mut a = self.a.clone();
        let mut q = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut last = f64::INFINITY;
        for _ in 0..max_iters {
            for i in 0..n {
                q[i] = q_pred[i] + beta * dt * dt * a[i];
                v[i] = v_pred[i] + gamma * dt * a[i];
            }
            let r = self.sys.residual(&q, &v, &a, theta);
            g.iter_mut().for_each(|x| *x = 0.0);
            self.sys.add_external_force(&q, &v, theta, &mut g);
            let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            last = r.norm();
            if last <= tol * (1.0 + gnorm) {
                self.q = q;
                self.v = v;
                self.a = a;
                return Ok(());
            }
            let delta = if let Some(lu) = &self.lu_lin {
                lu.solve(&r)
            } else {
                let jac = self.jacobian(&q, &v, theta);
                jac.lu().solve(&r)
            }
            .ok_or(Error::NewtonDivergence { step, residual: last })?;
            let mut dmax = 0.0_f64;
            let mut amax = 0.0_f64;
            for i in 0..n {
                a[i] -= delta[i];
                dmax = dmax.max(delta[i].abs());
                amax = amax.max(a[i].abs());
            }
            if !dmax.is_finite() {
                break;
            }
            if dmax <= 4.0 * f64::EPSILON * amax {
                // update below rounding: accept the converged iterate
                for i in 0..n {
                    q[i] = q_pred[i] + beta * dt * dt * a[i];
                    v[i] = v_pred[i] + gamma * dt * a[i];
                }
                self.q = q;
                self.v = v;
                self.a = a;
                return Ok(());
            }
        }
        Err(Error::NewtonDivergence { step, residual: last })
    }

    fn jacobian(&mut self, q: &[f64], v: &[f64], theta: &[f64]) -> DMatrix<f64> {
        let (n, dt) = (self.n, self.cfg.dt);
        self.x[..n].copy_from_slice(q);
        self.x[n..].copy_from_slice(v);
        self.nl_jac.fill(0.0);
        self.sys.nonlinearity().jacobian_into(&self.x, &mut self.nl_jac);
        let eps = self.sys.forcing().amplitude;
        for (ch, &th) in self.sys.forcing().channels.iter().zip(theta) {
            if let Some(p) = &ch.parametric {
                let s = eps * th;
                if s != 0.0 {
                    let mut pj = DMatrix::zeros(n, 2 * n);
                    p.jacobian_into(&self.x, &mut pj);
                    self.nl_jac -= pj * s;
                }
            }
        }
        let mut jac = self.jac_lin.clone();
        jac += self.nl_jac.columns(0, n) * (self.cfg.beta * dt * dt);
        jac += self.nl_jac.columns(n, n) * (self.cfg.gamma * dt);
        jac
    }

    fn state(&self, rows: &[usize], out: &mut [f64]) {
        let n = self.n;
        for (o, &r) in out.iter_mut().zip(rows) {
            *o = if r < n { self.q[r] } else { self.v[r - n] };
        }
    }
}

fn check_channels(sys: &MechanicalSystem, path: &ForcingPath, dt: f64) -> Result<()> {
    let want = sys.forcing().channels.len();
    if path.channels.len() != want {
        return Err(Error::DimensionMismatch {
            expected: want,
            got: path.channels.len(),
        });
    }
    if path.len == 0 {
        return Err(Error::InvalidArgument("forcing path is empty".into()));
    }
    if (path.dt - dt).abs() > 1e-12 * dt {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Average-acceleration Newmark with Newton iterations on the nonlinear
/// residual. Sample `θ_k` is held over `[t_k, t_{k+1})`, the same reading
/// the reduced RK4 integrator uses; the trajectory has one row per sample.
pub fn newmark_integrate(
    sys: &MechanicalSystem,
    path: &ForcingPath,
    q0: &[f64],
    v0: &[f64],
    cfg: &IntegratorConfig,
    record: &Record,
) -> Result<Trajectory> {
    check_channels(sys, path, cfg.dt)?;
    let start = Instant::now();
    let mut theta = vec![0.0; path.channels.len()];
    path.theta(0, &mut theta);
    let mut nm = Newmark::new(sys, *cfg, q0, v0, &theta)?;
    let rows = rows_or_all(record, 2 * sys.n_dof())?;
    let labels = state_labels(sys.n_dof());
    let mut traj = Trajectory::new(cfg.dt, rows.iter().map(|&r| labels[r].clone()).collect(), path.len, sys.name());
    let mut buf = vec![0.0; rows.len()];
    nm.state(&rows, &mut buf);
    traj.push(&buf);
    for k in 1..path.len {
        path.theta(k - 1, &mut theta);
        nm.step(&theta, k)?;
        nm.state(&rows, &mut buf);
        traj.push(&buf);
    }
    traj.wall_time = start.elapsed().as_secs_f64();
    Ok(traj)
}

/// Newmark coupled to the exact discrete filter of Methods 2/3: at every
/// grid point the filter emits its (reflected, for Method 3) output from
/// the next increment, and that output is held as the force of channel 0
/// until the next grid point.
/// Produces the same path as generating the noise first and then calling
/// [`newmark_integrate`].
pub fn coupled_implicit_integrate(
    sys: &MechanicalSystem,
    filter: &FilterConfig,
    increments: &[f64],
    q0: &[f64],
    v0: &[f64],
    cfg: &IntegratorConfig,
    record: &Record,
) -> Result<Trajectory> {
    if sys.forcing().channels.len() != 1 {
        return Err(Error::InvalidArgument(
            "coupled integration needs a single forcing channel".into(),
        ));
    }
    if increments.is_empty() {
        return Err(Error::InvalidArgument("increment sequence is empty".into()));
    }
    let start = Instant::now();
    let mut driver = FilterDriver::new(*filter, cfg.dt)?;
    let mut theta = [driver.next_sample(increments[0])];
    let mut nm = Newmark::new(sys, *cfg, q0, v0, &theta)?;
    let rows = rows_or_all(record, 2 * sys.n_dof())?;
    let labels = state_labels(sys.n_dof());
    let mut traj = Trajectory::new(cfg.dt, rows.iter().map(|&r| labels[r].clone()).collect(), increments.len(), sys.name());
    let mut buf = vec![0.0; rows.len()];
    nm.state(&rows, &mut buf);
    traj.push(&buf);
    for (k, &dw) in increments.iter().enumerate().skip(1) {
        nm.step(&theta, k)?;
        theta[0] = driver.next_sample(dw);
        nm.state(&rows, &mut buf);
        traj.push(&buf);
    }
    traj.wall_time = start.elapsed().as_secs_f64();
    Ok(traj)
}

/// Classical RK4 on the reduced model with `θ_n` held over `[t_n, t_{n+1})`.
/// Because the forcing jumps at grid points, the formal order drops to one
/// there; the deterministic part keeps fourth order. The `h₁` state, when
/// enabled, advances in lockstep with exact propagators.
pub fn rk4_reduced_integrate(
    model: &mut RandomReducedModel,
    path: &ForcingPath,
    xi0: &[f64],
    dt: f64,
    record: &Record,
) -> Result<Trajectory> {
    let d = model.d();
    if xi0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: xi0.len() });
    }
    if path.channels.len() != model.channel_count() {
        return Err(Error::DimensionMismatch {
            expected: model.channel_count(),
            got: path.channels.len(),
        });
    }
    if !(dt > 0.0) || (path.dt - dt).abs() > 1e-12 * dt {
        return Err(Error::GridMismatch);
    }
    let start = Instant::now();
    model.prepare(dt);
    let (labels, rows) = match record {
        Record::All => ((0..d).map(|i| format!("xi{i}")).collect::<Vec<_>>(), None),
        Record::Rows(r) => {
            let rows = rows_or_all(record, model.dim())?;
            let n = model.dim() / 2;
            let all = state_labels(n);
            (r.iter().map(|&i| all[i].clone()).collect(), Some(rows))
        }
    };
    let mut traj = Trajectory::new(dt, labels, path.len, &model.name());
    let mut buf = vec![0.0; traj.width()];
    let mut xi = xi0.to_vec();
    let mut theta = vec![0.0; path.channels.len()];
    let emit = |model: &RandomReducedModel, xi: &[f64], buf: &mut [f64], traj: &mut Trajectory| {
        match &rows {
            None => buf.copy_from_slice(xi),
            Some(rows) => model.lift_rows(xi, rows, buf),
        }
        traj.push(buf);
    };
    emit(model, &xi, &mut buf, &mut traj);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    for n in 0..path.len.saturating_sub(1) {
        path.theta(n, &mut theta);
        let stages = model.h1_stages(&theta);
        let (w0, wh, w1) = match &stages {
            Some((h, f)) => (Some(&model.h1_state), Some(h), Some(f)),
            None => (None, None, None),
        };
        model.reduced_rhs_with(&xi, &theta, w0, &mut k1);
        for i in 0..d {
            tmp[i] = xi[i] + 0.5 * dt * k1[i];
        }
        model.reduced_rhs_with(&tmp, &theta, wh, &mut k2);
        for i in 0..d {
            tmp[i] = xi[i] + 0.5 * dt * k2[i];
        }
        model.reduced_rhs_with(&tmp, &theta, wh, &mut k3);
        for i in 0..d {
            tmp[i] = xi[i] + dt * k3[i];
        }
        model.reduced_rhs_with(&tmp, &theta, w1, &mut k4);
        for i in 0..d {
            xi[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !xi.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { step: n + 1 });
        }
        if let Some((_, next)) = stages {
            model.h1_state = next;
        }
        emit(model, &xi, &mut buf, &mut traj);
    }
    traj.wall_time = start.elapsed().as_secs_f64();
    Ok(traj)
}

/// Split-advection defect `‖φ(T, x0) - φ(T - t_s, φ(t_s, x0))‖` of the
/// Newmark flow on a replayed path, restarting the second leg from the
/// phase state `(q, q̇)` only. `split` is a grid index in `0..path.len`.
pub fn cocycle_check(
    sys: &MechanicalSystem,
    path: &ForcingPath,
    q0: &[f64],
    v0: &[f64],
    cfg: &IntegratorConfig,
    split: usize,
) -> Result<f64> {
    if split >= path.len {
        return Err(Error::InvalidArgument(format!("split index {split} beyond path length {}", path.len)));
    }
    let n = sys.n_dof();
    let whole = newmark_integrate(sys, path, q0, v0, cfg, &Record::All)?;
    let first = newmark_integrate(sys, &path.truncated(split + 1), q0, v0, cfg, &Record::All)?;
    let mid = first.last();
    let second = newmark_integrate(sys, &path.shifted(split), &mid[..n], &mid[n..], cfg, &Record::All)?;
    let defect = whole
        .last()
        .iter()
        .zip(second.last())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(defect)
}

/// Same split-advection defect for the reduced RK4 flow.
pub fn cocycle_check_reduced(model: &RandomReducedModel, path: &ForcingPath, xi0: &[f64], split: usize) -> Result<f64> {
    if split >= path.len {
        return Err(Error::InvalidArgument(format!("split index {split} beyond path length {}", path.len)));
    }
    if model.include_h1() {
        return Err(Error::InvalidArgument(
            "reduced cocycle check needs the h1 correction off (its state is not part of ξ)".into(),
        ));
    }
    let mut m = model.clone();
    let whole = rk4_reduced_integrate(&mut m, path, xi0, path.dt, &Record::All)?;
    let first = rk4_reduced_integrate(&mut m, &path.truncated(split + 1), xi0, path.dt, &Record::All)?;
    let mid = first.last().to_vec();
    let second = rk4_reduced_integrate(&mut m, &path.shifted(split), &mid, path.dt, &Record::All)?;
    Ok(whole
        .last()
        .iter()
        .zip(second.last())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}
