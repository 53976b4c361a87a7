//! Combinatorial alpha-Yamabe and alpha-Calabi flows with surgery by
//! flipping, a damped Newton solver for prescribed alpha-curvature and
//! maximum-principle monitors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curvature::{self, ConformalState, JacobianL};
use crate::error::{Error, Result};
use crate::surface::{self, FlipEvent, MarkedSurface, PhMetric, TOL_DELAUNAY};

/// `|u_i|` beyond this aborts a run.
pub const U_LIMIT: f64 = 50.0;
/// Absolute step-doubling tolerance on `u`.
pub const STEP_ATOL: f64 = 1e-8;
pub const DEFAULT_TOL: f64 = 1e-10;
/// RK4 real-axis stability interval is about 2.785; keep a margin.
const RK4_STABILITY: f64 = 2.5;
const GROWTH_AFTER: usize = 5;
const GROWTH: f64 = 1.5;
const BISECTION_WIDTH: f64 = 1e-13;

/// A surface, its metric in the current triangulation and the cumulative
/// conformal factor the metric was scaled to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalMesh {
    pub surface: MarkedSurface,
    pub metric: PhMetric,
    pub state: ConformalState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveReport {
    pub flips: Vec<FlipEvent>,
    /// Largest sup-norm change of `K` across any surgery on the way.
    pub k_jump: f64,
    /// Segment parameters in `[0, 1]` at which surgeries happened, ascending.
    pub crossings: Vec<f64>,
    /// Parameter of each entry of `flips`.
    pub flip_params: Vec<f64>,
}

impl ConformalMesh {
    pub fn new(surface: MarkedSurface, metric: PhMetric) -> Result<Self> {
        surface::validate(&surface, &metric)?;
        let state = ConformalState { u: metric.scaled_u.clone() };
        Ok(ConformalMesh { surface, metric, state })
    }

    pub fn n(&self) -> usize {
        self.surface.n_vertices()
    }

    pub fn curvature(&self) -> Result<Vec<f64>> {
        curvature::curvature(&self.surface, &self.metric)
    }

    pub fn jacobian(&self) -> Result<JacobianL> {
        curvature::laplacian(&self.surface, &self.metric)
    }

    pub fn make_delaunay(&mut self) -> Result<MoveReport> {
        let before = curvature::extended_curvature(&self.surface, &self.metric)?.0;
        let flips = surface::make_delaunay(&mut self.surface, &mut self.metric)?;
        let after = curvature::extended_curvature(&self.surface, &self.metric)?.0;
        let flip_params = vec![0.0; flips.len()];
        Ok(MoveReport { k_jump: sup_diff(&before, &after), flips, crossings: Vec::new(), flip_params })
    }

    /// Metric at `u` along the straight segment from the current state, in
    /// the current triangulation, if it stays admissible and Delaunay.
    fn probe(&self, u: &[f64]) -> Option<PhMetric> {
        let mut m = self.metric.clone();
        m.apply_u(&self.surface, u).ok()?;
        let weights = surface::delaunay_weights(&self.surface, &m).ok()?;
        weights.iter().all(|w| *w >= -TOL_DELAUNAY).then_some(m)
    }

    /// Moves the cumulative conformal factor to `target` along the straight
    /// segment, flipping whenever the triangulation stops being Delaunay.
    ///
    /// The crossing parameter is located by bisection; the flip happens on
    /// the admissible side of the crossing, where the metric is identical in
    /// both triangulations.
    pub fn move_to(&mut self, target: &[f64]) -> Result<MoveReport> {
        let n = self.n();
        if target.len() != n {
            return Err(Error::Dimension { expected: n, got: target.len() });
        }
        let start = self.state.u.clone();
        let at = |s: f64| -> Vec<f64> { start.iter().zip(target).map(|(a, b)| a + s * (b - a)).collect() };
        let mut report = MoveReport::default();
        if self.probe(&start).is_none() {
            report = self.make_delaunay()?;
        }
        let mut s_lo = 0.0;
        for _ in 0..100 * self.surface.n_edges().max(1) {
            if let Some(m) = self.probe(target) {
                self.metric = m;
                self.state.u = target.to_vec();
                return Ok(report);
            }
            let (mut lo, mut hi) = (s_lo, 1.0);
            while hi - lo > BISECTION_WIDTH {
                let mid = 0.5 * (lo + hi);
                if self.probe(&at(mid)).is_some() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let u_lo = at(lo);
            let Some(m_lo) = self.probe(&u_lo) else {
                return Err(Error::PathFollowing(format!("start of segment at s = {lo} is not Delaunay")));
            };
            // which edges break just past the crossing
            let mut past = self.metric.clone();
            past.apply_u(&self.surface, &at(hi))?;
            let mut culprits = Vec::new();
            for e in 0..self.surface.n_edges() {
                match surface::delaunay_weight(&self.surface, &past, e) {
                    Ok(w) if w >= -TOL_DELAUNAY => {}
                    Ok(w) => culprits.push((e, w)),
                    Err(_) => {}
                }
            }
            self.metric = m_lo;
            self.state.u = u_lo;
            let before = curvature::extended_curvature(&self.surface, &self.metric)?.0;
            culprits.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let mut flipped = 0;
            let mut refusals = Vec::new();
            for (e, w) in &culprits {
                match surface::flip_edge(&mut self.surface, &mut self.metric, *e) {
                    Ok(ev) => {
                        report.flips.push(ev);
                        flipped += 1;
                    }
                    Err(err @ (Error::NotFlippable { .. } | Error::DegenerateFlip)) => {
                        refusals.push(format!("edge {e} (weight {w:e}): {err}"))
                    }
                    Err(err) => return Err(err),
                }
            }
            report.flips.extend(surface::make_delaunay(&mut self.surface, &mut self.metric)?);
            report.flip_params.resize(report.flips.len(), lo);
            if report.crossings.last() != Some(&lo) {
                report.crossings.push(lo);
            }
            let after = curvature::extended_curvature(&self.surface, &self.metric)?.0;
            report.k_jump = report.k_jump.max(sup_diff(&before, &after));
            if flipped == 0 && lo <= s_lo {
                let bad_faces = (0..self.surface.n_faces())
                    .filter(|f| !past.face_lengths(&self.surface, *f).is_admissible())
                    .count();
                return Err(Error::PathFollowing(format!(
                    "no progress at s = {lo}: {} faces inadmissible past the crossing, refused flips [{}]",
                    bad_faces,
                    refusals.join("; ")
                )));
            }
            s_lo = lo;
        }
        Err(Error::PathFollowing("too many surgeries on one segment".into()))
    }

    /// Copy of the mesh moved to `u`.
    pub fn evaluate(&self, u: &[f64]) -> Result<ConformalMesh> {
        let mut next = self.clone();
        next.move_to(u)?;
        Ok(next)
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Yamabe,
    Calabi,
    Newton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub kind: FlowKind,
    pub alpha: f64,
    /// Prescribed alpha-curvature per vertex.
    pub target: Vec<f64>,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub tol_converge: f64,
    pub max_steps: usize,
    pub monitors: bool,
}

impl FlowConfig {
    pub fn new(kind: FlowKind, alpha: f64, target: Vec<f64>) -> Self {
        FlowConfig {
            kind,
            alpha,
            target,
            dt_init: 0.05,
            dt_min: 1e-12,
            dt_max: 10.0,
            tol_converge: DEFAULT_TOL,
            max_steps: 100_000,
            monitors: true,
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.target.len() != n {
            return Err(Error::Dimension { expected: n, got: self.target.len() });
        }
        let ordered = 0.0 < self.dt_min && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max;
        if !ordered || !(self.tol_converge > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Combinatorics("flow config needs 0 < dt_min <= dt_init <= dt_max and tol > 0".into()));
        }
        Ok(())
    }
}

/// Which existence case a prescribed problem falls into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Regime {
    /// `alpha > 0`, `chi < 0`, `target <= 0`.
    PositiveAlpha,
    /// `alpha < 0`, `target > 0`.
    NegativeAlpha,
    /// `alpha = 0`, `target < 2 pi`, `sum target > 2 pi chi`.
    Classical,
    Outside(String),
}

pub fn existence_regime(alpha: f64, target: &[f64], chi: i64) -> Regime {
    use std::f64::consts::PI;
    if alpha > 0.0 {
        if chi >= 0 {
            return Regime::Outside(format!("alpha > 0 needs chi < 0 (chi = {chi})"));
        }
        match target.iter().position(|t| *t > 0.0) {
            None => Regime::PositiveAlpha,
            Some(v) => Regime::Outside(format!("alpha > 0 needs target <= 0 (vertex {v})")),
        }
    } else if alpha < 0.0 {
        match target.iter().position(|t| *t <= 0.0) {
            None => Regime::NegativeAlpha,
            Some(v) => Regime::Outside(format!("alpha < 0 needs target > 0 (vertex {v})")),
        }
    } else {
        if let Some(v) = target.iter().position(|t| *t >= 2.0 * PI) {
            return Regime::Outside(format!("alpha = 0 needs target < 2 pi (vertex {v})"));
        }
        let sum: f64 = target.iter().sum();
        if sum <= 2.0 * PI * chi as f64 {
            return Regime::Outside(format!("alpha = 0 needs sum of targets {sum} > 2 pi chi"));
        }
        Regime::Classical
    }
}

/// First vertex with `alpha * target > 0`, if any.
pub fn convexity_violation(alpha: f64, target: &[f64]) -> Option<usize> {
    target.iter().position(|t| alpha * t > 0.0)
}

/// `du/dt = target - K / w^alpha`.
pub fn yamabe_rhs(mesh: &ConformalMesh, alpha: f64, target: &[f64]) -> Result<Vec<f64>> {
    let k = mesh.curvature()?;
    let r = curvature::alpha_curvature(&k, &mesh.state, alpha);
    Ok(target.iter().zip(&r).map(|(t, r)| t - r).collect())
}

/// `dw/dt = (target - R_alpha) w`.
pub fn yamabe_rhs_w(mesh: &ConformalMesh, alpha: f64, target: &[f64]) -> Result<Vec<f64>> {
    let du = yamabe_rhs(mesh, alpha, target)?;
    Ok(du.iter().zip(mesh.state.w()).map(|(d, w)| d * w).collect())
}

/// `du/dt = Delta_alpha (R_alpha - target)`.
pub fn calabi_rhs(mesh: &ConformalMesh, alpha: f64, target: &[f64]) -> Result<Vec<f64>> {
    let k = mesh.curvature()?;
    let jac = mesh.jacobian()?;
    let r = curvature::alpha_curvature(&k, &mesh.state, alpha);
    let m: Vec<f64> = r.iter().zip(target).map(|(r, t)| r - t).collect();
    curvature::alpha_laplacian_apply(&jac, &mesh.state, alpha, &m)
}

fn rhs(mesh: &ConformalMesh, cfg: &FlowConfig) -> Result<Vec<f64>> {
    match cfg.kind {
        FlowKind::Yamabe => yamabe_rhs(mesh, cfg.alpha, &cfg.target),
        FlowKind::Calabi => calabi_rhs(mesh, cfg.alpha, &cfg.target),
        FlowKind::Newton => Err(Error::Combinatorics("newton is not a flow; use newton_solve".into())),
    }
}

/// Spectral radius of the linearized right-hand side.
///
/// With `D = diag(w^-alpha)` the Yamabe linearization `D L - alpha diag(R)` is
/// similar to the symmetric `S = D^1/2 L D^1/2 - alpha diag(R)`, and the
/// Calabi one to `P^1/2 S P^1/2` with `P = D^1/2 L D^1/2`.
fn stiffness(mesh: &ConformalMesh, cfg: &FlowConfig) -> Result<f64> {
    let k = mesh.curvature()?;
    let r = curvature::alpha_curvature(&k, &mesh.state, cfg.alpha);
    let half = DVector::from_vec(mesh.state.w_pow(-0.5 * cfg.alpha));
    let d = DMatrix::from_diagonal(&half);
    let p = &d * mesh.jacobian()?.to_dense() * &d;
    let mut s = p.clone();
    for v in 0..mesh.n() {
        s[(v, v)] -= cfg.alpha * r[v];
    }
    let op = match cfg.kind {
        FlowKind::Calabi => {
            let eig = p.symmetric_eigen();
            let root = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
            let sqrt_p = &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose();
            &sqrt_p * s * &sqrt_p
        }
        _ => s,
    };
    let op = 0.5 * (&op + op.transpose());
    Ok(op.symmetric_eigenvalues().iter().fold(0.0, |a: f64, x| a.max(x.abs())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    /// `sup |R_alpha - target|`.
    pub sup_err: f64,
    pub min_m: f64,
    pub max_m: f64,
    pub flips: usize,
    pub energy: f64,
    /// Sup-norm jump of `K` across this step's surgeries.
    pub k_jump: f64,
    pub gauss_bonnet: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStatus {
    Converged,
    MaxSteps,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRun {
    pub kind: FlowKind,
    pub alpha: f64,
    pub target: Vec<f64>,
    /// First record is the initial state at `t = 0`.
    pub records: Vec<StepRecord>,
    pub flips: Vec<FlipEvent>,
    pub status: FlowStatus,
    pub rejected: usize,
    pub u: Vec<f64>,
    /// Least-squares slope of `ln sup|M|` against `t` over the last half of the run.
    pub decay_slope: Option<f64>,
}

impl FlowRun {
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_sup_err(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.sup_err)
    }
}

fn sample(mesh: &ConformalMesh, cfg: &FlowConfig) -> Result<(Vec<f64>, f64, f64, f64, f64)> {
    let k = mesh.curvature()?;
    let r = curvature::alpha_curvature(&k, &mesh.state, cfg.alpha);
    let m: Vec<f64> = r.iter().zip(&cfg.target).map(|(r, t)| r - t).collect();
    let min_m = m.iter().copied().fold(f64::INFINITY, f64::min);
    let max_m = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gb = curvature::gauss_bonnet_residual(&mesh.surface, &mesh.metric)?;
    Ok((k, sup_norm(&m), min_m, max_m, gb))
}

fn rk4(mesh: &ConformalMesh, k1: &[f64], dt: f64, cfg: &FlowConfig) -> Result<ConformalMesh> {
    let u0 = &mesh.state.u;
    let shift = |k: &[f64], h: f64| -> Vec<f64> { u0.iter().zip(k).map(|(u, k)| u + h * k).collect() };
    let k2 = rhs(&mesh.evaluate(&shift(k1, 0.5 * dt))?, cfg)?;
    let k3 = rhs(&mesh.evaluate(&shift(&k2, 0.5 * dt))?, cfg)?;
    let k4 = rhs(&mesh.evaluate(&shift(&k3, dt))?, cfg)?;
    let u1: Vec<f64> =
        (0..u0.len()).map(|i| u0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
    mesh.evaluate(&u1)
}

/// Outcome of one attempted step.
pub enum StepOutcome {
    Accepted { mesh: ConformalMesh, error: f64 },
    Rejected { reason: String },
}

/// One RK4 step of size `dt` with step doubling; the two-half-step result is
/// kept when the difference to the full step is within `STEP_ATOL`.
pub fn step(mesh: &ConformalMesh, cfg: &FlowConfig, dt: f64) -> Result<StepOutcome> {
    let k1 = rhs(mesh, cfg)?;
    let attempt = || -> Result<(ConformalMesh, f64)> {
        let full = rk4(mesh, &k1, dt, cfg)?;
        let half = rk4(mesh, &k1, 0.5 * dt, cfg)?;
        let k1h = rhs(&half, cfg)?;
        let two = rk4(&half, &k1h, 0.5 * dt, cfg)?;
        Ok((two.clone(), sup_diff(&full.state.u, &two.state.u)))
    };
    match attempt() {
        Ok((next, err)) if err <= STEP_ATOL => Ok(StepOutcome::Accepted { mesh: next, error: err }),
        Ok((_, err)) => Ok(StepOutcome::Rejected { reason: format!("step error {err:e}") }),
        Err(e) => Ok(StepOutcome::Rejected { reason: e.to_string() }),
    }
}

/// Integrates the configured flow with surgery until `sup |R_alpha - target|`
/// drops to `tol_converge` or `max_steps` accepted steps have been taken.
pub fn run_flow(mesh: &mut ConformalMesh, cfg: &FlowConfig) -> Result<FlowRun> {
    cfg.check(mesh.n())?;
    if cfg.kind == FlowKind::Newton {
        return Err(Error::Combinatorics("newton is not a flow; use newton_solve".into()));
    }
    let initial = mesh.make_delaunay()?;
    let mut flips = initial.flips.clone();
    let (mut k_prev, sup_err, min_m, max_m, gb) = sample(mesh, cfg)?;
    let mut records = vec![StepRecord {
        t: 0.0,
        dt: 0.0,
        sup_err,
        min_m,
        max_m,
        flips: initial.flips.len(),
        energy: 0.0,
        k_jump: initial.k_jump,
        gauss_bonnet: gb,
    }];
    let mut t = 0.0;
    let mut dt = cfg.dt_init;
    let mut energy = 0.0;
    let mut streak = 0;
    let mut rejected = 0;
    let mut status = FlowStatus::MaxSteps;
    let mut accepted = 0;
    loop {
        if records.last().unwrap().sup_err <= cfg.tol_converge {
            status = FlowStatus::Converged;
            break;
        }
        if accepted >= cfg.max_steps {
            break;
        }
        let cap = match stiffness(mesh, cfg) {
            Ok(rho) if rho > 0.0 => RK4_STABILITY / rho,
            _ => cfg.dt_max,
        };
        let h = dt.min(cfg.dt_max).min(cap);
        match step(mesh, cfg, h)? {
            StepOutcome::Rejected { reason } => {
                rejected += 1;
                streak = 0;
                dt = 0.5 * h;
                log::debug!("rejected step at t = {t}: {reason}");
                if dt < cfg.dt_min {
                    status = FlowStatus::Failed(format!("dt below dt_min at t = {t}: {reason}"));
                    break;
                }
            }
            StepOutcome::Accepted { mesh: next, .. } => {
                let u_prev = mesh.state.u.clone();
                // replay the accepted segment on the live mesh to log its surgeries
                let moved = mesh.move_to(&next.state.u)?;
                t += h;
                accepted += 1;
                let (k, sup_err, min_m, max_m, gb) = sample(mesh, cfg)?;
                energy +=
                    curvature::energy_increment(&k_prev, &k, &u_prev, &mesh.state.u, &cfg.target, cfg.alpha);
                k_prev = k;
                for (mut ev, s) in moved.flips.iter().cloned().zip(&moved.flip_params) {
                    ev.time = Some(t - h + s * h);
                    flips.push(ev);
                }
                records.push(StepRecord {
                    t,
                    dt: h,
                    sup_err,
                    min_m,
                    max_m,
                    flips: moved.flips.len(),
                    energy,
                    k_jump: moved.k_jump,
                    gauss_bonnet: gb,
                });
                streak += 1;
                dt = h;
                if streak >= GROWTH_AFTER {
                    dt = (dt * GROWTH).min(cfg.dt_max);
                    streak = 0;
                }
                if let Some(v) = mesh.state.u.iter().position(|u| u.abs() > U_LIMIT) {
                    status = FlowStatus::Failed(Error::ConformalEscape { vertex: v, limit: U_LIMIT }.to_string());
                    break;
                }
            }
        }
    }
    let decay_slope = decay_slope(&records);
    Ok(FlowRun {
        kind: cfg.kind,
        alpha: cfg.alpha,
        target: cfg.target.clone(),
        records,
        flips,
        status,
        rejected,
        u: mesh.state.u.clone(),
        decay_slope,
    })
}

/// Least-squares slope of `ln sup_err` against `t` over the records with
/// `t >= t_end / 2`.
pub fn decay_slope(records: &[StepRecord]) -> Option<f64> {
    let t_end = records.last()?.t;
    let pts: Vec<(f64, f64)> =
        records.iter().filter(|r| r.t >= 0.5 * t_end && r.sup_err > 0.0).map(|r| (r.t, r.sup_err.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSign {
    NonPositive,
    NonNegative,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// Largest `max_M(t) / bound(t)` over the samples.
    pub worst_ratio: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxPrincipleReport {
    pub initial_sign: InitialSign,
    pub applicable: bool,
    /// Largest excursion to the wrong side over all samples.
    pub worst_violation: f64,
    pub sign_preserved: bool,
    pub envelope: Option<EnvelopeReport>,
}

/// Slack on sign preservation of `M_alpha`.
pub const SIGN_SLACK: f64 = 1e-9;
/// Relative slack on the decay envelope.
pub const ENVELOPE_SLACK: f64 = 0.10;

/// Checks sign preservation of `M = R_alpha - target` along a Yamabe run and,
/// for `alpha > 0` with a constant negative target and `M(0) >= 0`, the decay
/// envelope `M(t) <= target M_max(0) / R_max(0) e^(alpha target t)`.
pub fn monitor_max_principle(run: &FlowRun) -> MaxPrincipleReport {
    let Some(first) = run.records.first() else {
        return MaxPrincipleReport {
            initial_sign: InitialSign::Mixed,
            applicable: false,
            worst_violation: 0.0,
            sign_preserved: true,
            envelope: None,
        };
    };
    let initial_sign = if first.max_m <= 0.0 {
        InitialSign::NonPositive
    } else if first.min_m >= 0.0 {
        InitialSign::NonNegative
    } else {
        InitialSign::Mixed
    };
    let applicable = run.kind == FlowKind::Yamabe && initial_sign != InitialSign::Mixed;
    let worst_violation = match initial_sign {
        InitialSign::NonPositive => run.records.iter().map(|r| r.max_m).fold(f64::NEG_INFINITY, f64::max).max(0.0),
        InitialSign::NonNegative => (-run.records.iter().map(|r| r.min_m).fold(f64::INFINITY, f64::min)).max(0.0),
        InitialSign::Mixed => 0.0,
    };
    let target = run.target.first().copied().unwrap_or(0.0);
    let constant = run.target.iter().all(|t| *t == target);
    let r_max0 = first.max_m + target;
    let envelope = (applicable
        && run.alpha > 0.0
        && constant
        && target < 0.0
        && initial_sign == InitialSign::NonNegative
        && r_max0 < 0.0)
        .then(|| {
            let coeff = target * first.max_m / r_max0;
            let mut worst_ratio: f64 = 0.0;
            let mut holds = true;
            for r in &run.records {
                let bound = coeff * (run.alpha * target * r.t).exp();
                worst_ratio = worst_ratio.max(r.max_m / bound);
                if r.max_m > (1.0 + ENVELOPE_SLACK) * bound {
                    holds = false;
                }
            }
            EnvelopeReport { worst_ratio, holds }
        });
    MaxPrincipleReport {
        initial_sign,
        applicable,
        worst_violation,
        sign_preserved: !applicable || worst_violation <= SIGN_SLACK,
        envelope,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub alpha: f64,
    pub target: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Refuse targets with `alpha * target > 0`.
    pub enforce_regime: bool,
}

impl NewtonConfig {
    pub fn new(alpha: f64, target: Vec<f64>) -> Self {
        NewtonConfig { alpha, target, tol: DEFAULT_TOL, max_iter: 100, enforce_regime: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonIteration {
    /// `sup |K - target w^alpha|` before the update.
    pub residual: f64,
    pub step_scale: f64,
    pub flips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonRun {
    pub u: Vec<f64>,
    pub converged: bool,
    /// One entry per accepted update.
    pub iterations: Vec<NewtonIteration>,
    pub final_residual: f64,
    pub flips: Vec<FlipEvent>,
}

const MIN_STEP: f64 = 1.0 / (1u64 << 30) as f64;

fn newton_residual(mesh: &ConformalMesh, cfg: &NewtonConfig) -> Result<Vec<f64>> {
    Ok(curvature::energy_gradient(&mesh.curvature()?, &mesh.state.u, &cfg.target, cfg.alpha))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton on `g(u) = K(u) - target w^alpha` with Hessian
/// `L - alpha diag(target w^alpha)`, re-triangulating after every update.
pub fn newton_solve(mesh: &mut ConformalMesh, cfg: &NewtonConfig) -> Result<NewtonRun> {
    let n = mesh.n();
    if cfg.target.len() != n {
        return Err(Error::Dimension { expected: n, got: cfg.target.len() });
    }
    if cfg.enforce_regime {
        if let Some(vertex) = convexity_violation(cfg.alpha, &cfg.target) {
            return Err(Error::Regime { vertex });
        }
    }
    let mut flips = mesh.make_delaunay()?.flips;
    let mut iterations = Vec::new();
    let mut g = newton_residual(mesh, cfg)?;
    loop {
        let residual = sup_norm(&g);
        if residual <= cfg.tol {
            return Ok(NewtonRun { u: mesh.state.u.clone(), converged: true, iterations, final_residual: residual, flips });
        }
        if iterations.len() >= cfg.max_iter {
            return Ok(NewtonRun { u: mesh.state.u.clone(), converged: false, iterations, final_residual: residual, flips });
        }
        let jac = mesh.jacobian()?;
        let mut h: DMatrix<f64> = jac.to_dense();
        let wa = mesh.state.w_pow(cfg.alpha);
        for v in 0..n {
            h[(v, v)] -= cfg.alpha * cfg.target[v] * wa[v];
        }
        let chol = h.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let delta = chol.solve(&DVector::from_column_slice(&g));
        let norm0 = l2(&g);
        let mut s = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = mesh.state.u.iter().zip(delta.iter()).map(|(u, d)| u - s * d).collect();
            if let Ok(next) = mesh.evaluate(&trial) {
                if let Ok(gt) = newton_residual(&next, cfg) {
                    if l2(&gt) <= (1.0 - 1e-4 * s) * norm0 || sup_norm(&gt) <= cfg.tol {
                        break Some((next, gt));
                    }
                }
            }
            s *= 0.5;
            if s < MIN_STEP {
                break None;
            }
        };
        let Some((next, gt)) = accepted else {
            return Err(Error::LineSearch { residual, u: mesh.state.u.clone() });
        };
        let moved = mesh.move_to(&next.state.u)?;
        debug_assert_eq!(mesh.state.u, next.state.u);
        iterations.push(NewtonIteration { residual, step_scale: s, flips: moved.flips.len() });
        flips.extend(moved.flips);
        g = if moved.k_jump == 0.0 && mesh.surface == next.surface { gt } else { newton_residual(mesh, cfg)? };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn mesh(seed: u64) -> ConformalMesh {
        let s = fixtures::genus_two().unwrap();
        let m = fixtures::perturbed_unit_lengths(&s, 0.1, seed).unwrap();
        ConformalMesh::new(s, m).unwrap()
    }

    #[test]
    fn luo_flow_rhs_is_minus_k() {
        let m = mesh(0);
        let n = m.n();
        let rhs = yamabe_rhs(&m, 0.0, &vec![0.0; n]).unwrap();
        let k = m.curvature().unwrap();
        for v in 0..n {
            assert_eq!(rhs[v], -k[v]);
        }
    }

    #[test]
    fn w_form_matches_u_form() {
        let mut m = mesh(1);
        let n = m.n();
        let u: Vec<f64> = (0..n).map(|i| 0.02 * (i as f64).cos()).collect();
        m.move_to(&u).unwrap();
        let target = vec![-0.5; n];
        let du = yamabe_rhs(&m, 1.0, &target).unwrap();
        let dw = yamabe_rhs_w(&m, 1.0, &target).unwrap();
        let k = m.curvature().unwrap();
        for v in 0..n {
            let w = u[v].exp();
            let r = k[v] / w;
            assert!((dw[v] - (target[v] - r) * w).abs() < 1e-14);
            assert!((dw[v] / w - du[v]).abs() < 1e-14);
        }
    }

    #[test]
    fn calabi_rhs_matrix_form() {
        let mut m = mesh(2);
        let n = m.n();
        let u: Vec<f64> = (0..n).map(|i| 0.05 * (i as f64).sin()).collect();
        m.move_to(&u).unwrap();
        let target = vec![-1.0; n];
        let got = calabi_rhs(&m, 1.0, &target).unwrap();
        let k = m.curvature().unwrap();
        let r = curvature::alpha_curvature(&k, &m.state, 1.0);
        let diff: Vec<f64> = r.iter().zip(&target).map(|(r, t)| r - t).collect();
        let lm = m.jacobian().unwrap().to_dense() * DVector::from_vec(diff);
        for v in 0..n {
            let expect = -(-u[v]).exp() * lm[v];
            assert!((got[v] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_input_does_not_move() {
        let mut m = mesh(3);
        let n = m.n();
        let k = m.curvature().unwrap();
        // the current curvature is a fixed point of the alpha = 0 flow
        let cfg = FlowConfig::new(FlowKind::Yamabe, 0.0, k.clone());
        let before = m.clone();
        match step(&m, &cfg, 0.1).unwrap() {
            StepOutcome::Accepted { mesh: next, .. } => {
                assert!(sup_diff(&next.state.u, &before.state.u) < 1e-15);
                assert_eq!(next.surface, before.surface);
            }
            StepOutcome::Rejected { reason } => panic!("{reason}"),
        }
        let run = run_flow(&mut m, &FlowConfig { max_steps: 5, ..cfg }).unwrap();
        assert_eq!(run.status, FlowStatus::Converged);
        assert_eq!(run.steps(), 0);
        assert_eq!(n, run.u.len());
    }

    #[test]
    fn zero_max_steps() {
        let mut m = mesh(4);
        let n = m.n();
        let mut cfg = FlowConfig::new(FlowKind::Yamabe, 0.0, vec![0.0; n]);
        cfg.max_steps = 0;
        let run = run_flow(&mut m, &cfg).unwrap();
        assert_eq!(run.status, FlowStatus::MaxSteps);
        assert_eq!(run.records.len(), 1);
    }

    #[test]
    fn regimes() {
        assert_eq!(existence_regime(1.0, &[-1.0, 0.0], -2), Regime::PositiveAlpha);
        assert!(matches!(existence_regime(1.0, &[-1.0], 0), Regime::Outside(_)));
        assert!(matches!(existence_regime(1.0, &[1.0], -2), Regime::Outside(_)));
        assert_eq!(existence_regime(-1.0, &[1.0], 2), Regime::NegativeAlpha);
        assert!(matches!(existence_regime(-1.0, &[0.0], 2), Regime::Outside(_)));
        assert_eq!(existence_regime(0.0, &[0.0; 4], -2), Regime::Classical);
        assert!(matches!(existence_regime(0.0, &[-4.0; 4], -2), Regime::Outside(_)));
        assert_eq!(convexity_violation(1.0, &[-1.0, 1.0]), Some(1));
        assert_eq!(convexity_violation(-1.0, &[1.0, 1.0]), None);
    }

    #[test]
    fn newton_refuses_outside_regime() {
        let mut m = mesh(5);
        let n = m.n();
        let err = newton_solve(&mut m, &NewtonConfig::new(1.0, vec![1.0; n])).unwrap_err();
        assert!(matches!(err, Error::Regime { vertex: 0 }));
    }

    #[test]
    fn newton_at_solution_takes_no_iterations() {
        let mut m = mesh(6);
        let n = m.n();
        let run = newton_solve(&mut m, &NewtonConfig { tol: 1e-11, ..NewtonConfig::new(0.0, vec![0.0; n]) }).unwrap();
        assert!(run.converged);
        let again = newton_solve(&mut m, &NewtonConfig { tol: 1e-11, ..NewtonConfig::new(0.0, vec![0.0; n]) }).unwrap();
        assert!(again.iterations.is_empty());
        assert_eq!(again.u, run.u);
    }

    #[test]
    fn move_to_handles_large_bump() {
        let mut m = mesh(7);
        let n = m.n();
        let mut u = vec![0.0; n];
        u[3] = 1.0;
        let report = m.move_to(&u).unwrap();
        assert!(!report.flips.is_empty());
        assert!(surface::is_delaunay(&m.surface, &m.metric).unwrap());
        assert!(report.k_jump < 1e-9, "{}", report.k_jump);
        assert_eq!(m.state.u, u);
    }

    #[test]
    fn multi_edge_surgery_is_refused() {
        let m = mesh(7);
        let mut u = vec![0.0; m.n()];
        u[3] = 2.0;
        let err = m.evaluate(&u).unwrap_err();
        assert!(matches!(err, Error::PathFollowing(ref msg) if msg.contains("already exists")), "{err}");
    }

    #[test]
    fn decay_slope_of_exponential() {
        let recs: Vec<StepRecord> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.5;
                StepRecord {
                    t,
                    dt: 0.5,
                    sup_err: (-2.0 * t).exp(),
                    min_m: 0.0,
                    max_m: 0.0,
                    flips: 0,
                    energy: 0.0,
                    k_jump: 0.0,
                    gauss_bonnet: 0.0,
                }
            })
            .collect();
        assert!((decay_slope(&recs).unwrap() + 2.0).abs() < 1e-12);
    }
}
