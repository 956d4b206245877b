//! Independent numerical oracles: perturbation sampling, RK4 method of steps
//! with Hermite history, variational equations, Newton shooting, and the
//! sampling checks run against reach results.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::{dominance_margins, point_inf_norm, IntervalBox};
use crate::model::{steps_per_delay, ModelSpec};
use crate::reach::ReachResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidateError {
    #[error("sensitivity matrix at the start of segment {segment} is singular")]
    SingularSegmentStart { segment: usize },
    #[error("{0}")]
    Params(String),
}

/// Slack for comparing simulated points with computed sets; covers RK4
/// truncation and rounding, far below any enclosure width.
pub const CONTAINMENT_SLACK: f64 = 1e-9;
/// Simulation error budget used to deflate inner boxes before testing
/// strict-interior entry.
pub const EXCLUSION_BUDGET: f64 = 1e-6;
/// Newton residual accepted as a successful shot.
pub const SHOOT_TOLERANCE: f64 = 1e-6;

// --- perturbation signals ---------------------------------------------------

/// Piecewise-linear `d: [0, horizon] -> D` on uniformly spaced knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSignal {
    pub spacing: f64,
    /// One value per knot `k * spacing`; the last knot is at or beyond the
    /// horizon.
    pub values: Vec<Vec<f64>>,
    pub l: f64,
}

impl PerturbationSignal {
    pub fn constant(v: Vec<f64>, horizon: f64) -> Self {
        PerturbationSignal {
            spacing: horizon.max(1e-300),
            values: vec![v.clone(), v],
            l: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let last = self.values.len() - 1;
        let pos = (t / self.spacing).max(0.0);
        let i = (pos.floor() as usize).min(last.saturating_sub(1));
        let lam = (pos - i as f64).clamp(0.0, 1.0);
        let (a, b) = (&self.values[i], &self.values[(i + 1).min(last)]);
        for (k, o) in out.iter_mut().enumerate() {
            *o = a[k] + lam * (b[k] - a[k]);
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out);
        out
    }
}

fn random_point(b: &IntervalBox, rng: &mut impl Rng) -> Vec<f64> {
    b.dims()
        .iter()
        .map(|iv| if iv.is_degenerate() { iv.lo() } else { rng.random_range(iv.lo()..=iv.hi()) })
        .collect()
}

fn random_vertex(b: &IntervalBox, rng: &mut impl Rng) -> Vec<f64> {
    b.dims()
        .iter()
        .map(|iv| if rng.random_bool(0.5) { iv.lo() } else { iv.hi() })
        .collect()
}

/// Random walk on the knots, each move at most `L * spacing` in 2-norm,
/// projected back onto `D`. Projection onto a box is nonexpansive, so the
/// slope bound survives it.
pub fn sample_perturbation_with(
    d: &IntervalBox,
    l: f64,
    horizon: f64,
    spacing: f64,
    rng: &mut impl Rng,
) -> PerturbationSignal {
    let m = d.dim();
    let degenerate = d.dims().iter().all(|iv| iv.is_degenerate());
    if l == 0.0 || degenerate || m == 0 {
        return PerturbationSignal::constant(random_point(d, rng), horizon);
    }
    let knots = (horizon / spacing).ceil() as usize + 1;
    // a constant vertex signal probes the extremes of D
    if rng.random_bool(0.2) {
        let mut s = PerturbationSignal::constant(random_vertex(d, rng), horizon);
        s.l = l;
        return s;
    }
    let step = l * spacing;
    let mut v = random_point(d, rng);
    let mut values = Vec::with_capacity(knots);
    values.push(v.clone());
    for _ in 1..knots {
        let dir: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let len = if rng.random_bool(0.5) { step } else { rng.random_range(0.0..=step) };
        for k in 0..m {
            // shave a relative ulp-scale margin so rounding never lifts the slope over L
            let moved = v[k] + dir[k] / norm * len * (1.0 - 1e-12);
            v[k] = moved.clamp(d[k].lo(), d[k].hi());
        }
        values.push(v.clone());
    }
    PerturbationSignal { spacing, values, l }
}

/// Reproducible signal with knots every `horizon / 200`.
pub fn sample_perturbation(d: &IntervalBox, l: f64, horizon: f64, seed: u64) -> PerturbationSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_perturbation_with(d, l, horizon, horizon / 200.0, &mut rng)
}

/// Knot spacing for a model: long enough that a full swing across `D`
/// takes about two knots at slope `L`, never shorter than a simulation step
/// and always a multiple of it.
pub fn knot_spacing(spec: &ModelSpec, h_sim: f64) -> f64 {
    let width = spec.d.widths().into_iter().fold(f64::INFINITY, f64::min);
    let target = if spec.l > 0.0 && width.is_finite() { width / (2.0 * spec.l) } else { spec.tau };
    let r = (target.min(spec.tau) / h_sim).floor().max(1.0);
    r * h_sim
}

// --- method-of-steps RK4 ----------------------------------------------------

/// Dense output of one simulation: grid values and a domain-exit flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub x: Vec<Vec<f64>>,
    pub exited_domain: bool,
}

impl Trajectory {
    pub fn at(&self, t: f64) -> &[f64] {
        let j = (t / self.h).round() as usize;
        &self.x[j.min(self.x.len() - 1)]
    }

    pub fn end(&self) -> &[f64] {
        self.x.last().expect("nonempty trajectory")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTrace {
    pub t: Vec<f64>,
    /// `s(t)`, the Jacobian of the state with respect to the state at the
    /// start of the current delay segment.
    #[serde(skip)]
    pub s: Vec<DMatrix<f64>>,
    pub segment: Vec<usize>,
    pub margins: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    /// Jacobian of the final state with respect to `x0`.
    #[serde(skip)]
    pub total_at_end: DMatrix<f64>,
}

struct StepRecord {
    y0: Vec<f64>,
    y1: Vec<f64>,
    d0: Vec<f64>,
    d1: Vec<f64>,
}

fn hermite(r: &StepRecord, theta: f64, h: f64, out: &mut [f64]) {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    for k in 0..out.len() {
        out[k] = h00 * r.y0[k] + h10 * h * r.d0[k] + h01 * r.y1[k] + h11 * h * r.d1[k];
    }
}

struct Integrator<'a> {
    spec: &'a ModelSpec,
    signal: &'a PerturbationSignal,
    h: f64,
    q: usize,
    sens: bool,
}

impl Integrator<'_> {
    fn ny(&self) -> usize {
        let n = self.spec.n;
        if self.sens {
            n + n * n
        } else {
            n
        }
    }

    fn rhs(&self, seg: usize, t: f64, y: &[f64], ylag: Option<&[f64]>, inv_prev: &DMatrix<f64>, out: &mut [f64]) {
        let n = self.spec.n;
        let m = self.spec.m;
        let mut env = vec![0.0; 2 * n + m + 1];
        env[..n].copy_from_slice(&y[..n]);
        match ylag {
            Some(l) => env[n..2 * n].copy_from_slice(&l[..n]),
            None => env[n..2 * n].copy_from_slice(&y[..n]),
        }
        self.signal.eval_into(t, &mut env[2 * n..2 * n + m]);
        env[2 * n + m] = t;
        let field = if seg == 0 { &self.spec.g } else { &self.spec.f };
        field.eval_real(&env, &mut out[..n]);
        if self.sens {
            let s = DMatrix::from_column_slice(n, n, &y[n..]);
            let mut ds = field.jacobian_x_real(&env) * &s;
            if seg > 0 {
                let slag = DMatrix::from_column_slice(n, n, &ylag.expect("lag for delayed segments")[n..]);
                ds += field.jacobian_lag_real(&env) * slag * inv_prev;
            }
            out[n..].copy_from_slice(ds.as_slice());
        }
    }

    /// Integrate to `t_end` (a grid time); returns step records.
    fn run(&self, x0: &[f64], t_end: f64) -> Result<Vec<StepRecord>, ValidateError> {
        let n = self.spec.n;
        let ny = self.ny();
        let steps = (t_end / self.h).round() as usize;
        let mut recs: Vec<StepRecord> = Vec::with_capacity(steps);
        let mut y = vec![0.0; ny];
        y[..n].copy_from_slice(x0);
        let mut inv_prev = DMatrix::identity(n, n);
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; ny], vec![0.0; ny], vec![0.0; ny], vec![0.0; ny]);
        let mut tmp = vec![0.0; ny];
        let mut lag_mid = vec![0.0; ny];
        for i in 0..steps {
            let seg = i / self.q;
            if i % self.q == 0 && self.sens {
                if seg > 0 {
                    let end = DMatrix::from_column_slice(n, n, &y[n..]);
                    inv_prev = end.try_inverse().ok_or(ValidateError::SingularSegmentStart { segment: seg })?;
                }
                let id = DMatrix::<f64>::identity(n, n);
                y[n..].copy_from_slice(id.as_slice());
            }
            let t = i as f64 * self.h;
            let h = self.h;
            let (lag0, lag1) = if seg > 0 {
                let r = &recs[i - self.q];
                hermite(r, 0.5, h, &mut lag_mid);
                (Some(r.y0.clone()), Some(r.y1.clone()))
            } else {
                (None, None)
            };
            let lm = if seg > 0 { Some(lag_mid.as_slice()) } else { None };
            self.rhs(seg, t, &y, lag0.as_deref(), &inv_prev, &mut k1);
            for k in 0..ny {
                tmp[k] = y[k] + 0.5 * h * k1[k];
            }
            self.rhs(seg, t + 0.5 * h, &tmp, lm, &inv_prev, &mut k2);
            for k in 0..ny {
                tmp[k] = y[k] + 0.5 * h * k2[k];
            }
            self.rhs(seg, t + 0.5 * h, &tmp, lm, &inv_prev, &mut k3);
            for k in 0..ny {
                tmp[k] = y[k] + h * k3[k];
            }
            self.rhs(seg, t + h, &tmp, lag1.as_deref(), &inv_prev, &mut k4);
            let y0 = y.clone();
            for k in 0..ny {
                y[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
            }
            let mut d1 = vec![0.0; ny];
            self.rhs(seg, t + h, &y, lag1.as_deref(), &inv_prev, &mut d1);
            recs.push(StepRecord {
                y0,
                y1: y.clone(),
                d0: k1.clone(),
                d1,
            });
        }
        Ok(recs)
    }
}

fn integrator<'a>(spec: &'a ModelSpec, signal: &'a PerturbationSignal, h_sim: f64, sens: bool) -> Integrator<'a> {
    let q = steps_per_delay(spec.tau, h_sim).expect("simulation step must divide tau");
    Integrator {
        spec,
        signal,
        h: h_sim,
        q,
        sens,
    }
}

/// Classic RK4 method of steps up to `t_end`; `h_sim` must divide `tau`.
pub fn simulate_to(spec: &ModelSpec, x0: &[f64], signal: &PerturbationSignal, h_sim: f64, t_end: f64) -> Trajectory {
    let recs = integrator(spec, signal, h_sim, false).run(x0, t_end).expect("no sensitivities");
    let mut x = Vec::with_capacity(recs.len() + 1);
    x.push(x0.to_vec());
    x.extend(recs.into_iter().map(|r| r.y1));
    let exited_domain = x.iter().any(|p| !spec.x.contains_point(p));
    Trajectory {
        h: h_sim,
        x,
        exited_domain,
    }
}

/// Simulation over the full horizon `[0, K tau]`.
pub fn simulate(spec: &ModelSpec, x0: &[f64], signal: &PerturbationSignal, h_sim: f64) -> Trajectory {
    simulate_to(spec, x0, signal, h_sim, spec.horizon())
}

/// Co-integrate the per-segment variational equations; `s` resets to the
/// identity at every `k tau`.
pub fn sensitivity_flow(
    spec: &ModelSpec,
    x0: &[f64],
    signal: &PerturbationSignal,
    h_sim: f64,
) -> Result<SensitivityTrace, ValidateError> {
    let n = spec.n;
    let it = integrator(spec, signal, h_sim, true);
    let recs = it.run(x0, spec.horizon())?;
    let mut trace = SensitivityTrace {
        t: Vec::new(),
        s: Vec::new(),
        segment: Vec::new(),
        margins: Vec::new(),
        norms: Vec::new(),
        total_at_end: DMatrix::identity(n, n),
    };
    let mut push = |t: f64, s: DMatrix<f64>, seg: usize| {
        trace.t.push(t);
        trace.margins.push(dominance_margins(&s));
        trace.norms.push(point_inf_norm(&s));
        trace.s.push(s);
        trace.segment.push(seg);
    };
    let mut composed = DMatrix::<f64>::identity(n, n);
    for (i, r) in recs.iter().enumerate() {
        let seg = i / it.q;
        if i % it.q == 0 {
            push(i as f64 * h_sim, DMatrix::identity(n, n), seg);
        }
        let s1 = DMatrix::from_column_slice(n, n, &r.y1[n..]);
        if (i + 1) % it.q == 0 {
            composed = &s1 * &composed;
        }
        push((i + 1) as f64 * h_sim, s1, seg);
    }
    if recs.len() % it.q != 0 {
        let s_last = DMatrix::from_column_slice(n, n, &recs.last().expect("steps").y1[n..]);
        composed = s_last * composed;
    }
    trace.total_at_end = composed;
    Ok(trace)
}

/// Largest relative deviation between the composed sensitivity at the
/// horizon and central finite differences of simulated endpoints.
pub fn fd_sensitivity_error(
    spec: &ModelSpec,
    x0: &[f64],
    signal: &PerturbationSignal,
    h_sim: f64,
) -> Result<f64, ValidateError> {
    let s = sensitivity_flow(spec, x0, signal, h_sim)?.total_at_end;
    let n = spec.n;
    let mut fd = DMatrix::zeros(n, n);
    for j in 0..n {
        let delta = 1e-6 * x0[j].abs().max(1.0);
        let mut p = x0.to_vec();
        let mut q = x0.to_vec();
        p[j] += delta;
        q[j] -= delta;
        let a = simulate(spec, &p, signal, h_sim);
        let b = simulate(spec, &q, signal, h_sim);
        for i in 0..n {
            fd[(i, j)] = (a.end()[i] - b.end()[i]) / (2.0 * delta);
        }
    }
    let scale = point_inf_norm(&s).max(1e-300);
    Ok(point_inf_norm(&(s - fd)) / scale)
}

// --- sampling helpers -------------------------------------------------------

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Initial state in `I0`: a vertex, a boundary point, or an interior point.
fn sample_initial(i0: &IntervalBox, rng: &mut impl Rng) -> Vec<f64> {
    match rng.random_range(0..4) {
        0 => random_vertex(i0, rng),
        1 => sample_boundary(i0, rng),
        _ => random_point(i0, rng),
    }
}

fn sample_boundary(i0: &IntervalBox, rng: &mut impl Rng) -> Vec<f64> {
    let mut x = random_point(i0, rng);
    let k = rng.random_range(0..i0.dim());
    x[k] = if rng.random_bool(0.5) { i0[k].lo() } else { i0[k].hi() };
    x
}

fn sim_step(result: &ReachResult) -> f64 {
    result.h / 4.0
}

// --- homeomorphism ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeomorphismReport {
    pub samples: usize,
    pub passed: bool,
    /// Smallest dominance margin seen (must stay positive).
    pub min_margin: f64,
    /// Largest `||s||_inf` seen (must stay at most R).
    pub max_norm: f64,
    /// Largest `max_i 1/margin_i` seen (must stay at most epsilon).
    pub max_inverse_margin: f64,
    pub r: f64,
    pub epsilon: f64,
    /// Largest relative error between sensitivities and finite differences
    /// over the first few samples.
    pub fd_max_rel_error: f64,
    pub violations: Vec<String>,
}

pub fn check_homeomorphism(spec: &ModelSpec, samples: usize, seed: u64, h_sim: f64) -> HomeomorphismReport {
    let spacing = knot_spacing(spec, h_sim);
    let per_sample: Vec<_> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            let x0 = sample_initial(&spec.i0, &mut rng);
            let sig = sample_perturbation_with(&spec.d, spec.l, spec.horizon(), spacing, &mut rng);
            let trace = sensitivity_flow(spec, &x0, &sig, h_sim);
            let fd = if i < 5 { fd_sensitivity_error(spec, &x0, &sig, h_sim).ok() } else { None };
            (i, x0, trace, fd)
        })
        .collect();
    let mut rep = HomeomorphismReport {
        samples,
        passed: true,
        min_margin: f64::INFINITY,
        max_norm: 0.0,
        max_inverse_margin: 0.0,
        r: spec.r,
        epsilon: spec.epsilon,
        fd_max_rel_error: 0.0,
        violations: Vec::new(),
    };
    let note = |rep: &mut HomeomorphismReport, msg: String| {
        rep.passed = false;
        if rep.violations.len() < 20 {
            rep.violations.push(msg);
        }
    };
    for (i, x0, trace, fd) in per_sample {
        if let Some(e) = fd {
            rep.fd_max_rel_error = rep.fd_max_rel_error.max(e);
        }
        let trace = match trace {
            Ok(t) => t,
            Err(e) => {
                note(&mut rep, format!("sample {i} x0={x0:?}: {e}"));
                continue;
            }
        };
        for (k, t) in trace.t.iter().enumerate() {
            let margin = trace.margins[k].iter().copied().fold(f64::INFINITY, f64::min);
            let inv = if margin > 0.0 { 1.0 / margin } else { f64::INFINITY };
            rep.min_margin = rep.min_margin.min(margin);
            rep.max_norm = rep.max_norm.max(trace.norms[k]);
            rep.max_inverse_margin = rep.max_inverse_margin.max(inv);
            if !(margin > 0.0) || trace.norms[k] > spec.r || inv > spec.epsilon {
                note(
                    &mut rep,
                    format!(
                        "sample {i} t={t}: margin {margin}, norm {}, 1/margin {inv}",
                        trace.norms[k]
                    ),
                );
            }
        }
    }
    rep
}

// --- containment checks -----------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub sample: usize,
    pub t: f64,
    pub x0: Vec<f64>,
    pub state: Vec<f64>,
    pub what: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub samples: usize,
    pub checkpoints: usize,
    pub passed: bool,
    pub exited_domain: usize,
    pub violations: Vec<Violation>,
}

fn template_slack_ok(c: &crate::reach::DiagonalConstraint, x: &[f64]) -> bool {
    c.si * x[c.i] + c.sj * x[c.j] <= c.bound + CONTAINMENT_SLACK
}

/// Sample trajectories from `I0` and require every checkpoint state to lie
/// in the outer box and satisfy the template bound.
pub fn check_over(spec: &ModelSpec, result: &ReachResult, samples: usize, seed: u64) -> SampleReport {
    let h_sim = sim_step(result);
    let spacing = knot_spacing(spec, h_sim);
    let t_end = result.checkpoints.iter().map(|c| c.t).fold(0.0, f64::max);
    let per: Vec<(Vec<Violation>, bool)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            let x0 = sample_initial(&spec.i0, &mut rng);
            let sig = sample_perturbation_with(&spec.d, spec.l, spec.horizon(), spacing, &mut rng);
            let traj = simulate_to(spec, &x0, &sig, h_sim, t_end);
            let mut v = Vec::new();
            for cp in &result.checkpoints {
                let x = traj.at(cp.t);
                if !cp.o_full.contains_point_with_slack(x, CONTAINMENT_SLACK) {
                    v.push(violation(i, cp.t, &x0, x, "outside outer box"));
                } else if let Some(c) = cp.template.iter().find(|c| !template_slack_ok(c, x)) {
                    v.push(violation(i, cp.t, &x0, x, &format!("violates template {c:?}")));
                }
            }
            (v, traj.exited_domain)
        })
        .collect();
    collect_report(samples, result.checkpoints.len(), per)
}

fn violation(sample: usize, t: f64, x0: &[f64], x: &[f64], what: &str) -> Violation {
    Violation {
        sample,
        t,
        x0: x0.to_vec(),
        state: x.to_vec(),
        what: what.into(),
    }
}

fn collect_report(samples: usize, checkpoints: usize, per: Vec<(Vec<Violation>, bool)>) -> SampleReport {
    let exited_domain = per.iter().filter(|(_, e)| *e).count();
    let violations: Vec<Violation> = per.into_iter().flat_map(|(v, _)| v).collect();
    SampleReport {
        samples,
        checkpoints,
        passed: violations.is_empty(),
        exited_domain,
        violations,
    }
}

/// Sample trajectories from the boundary of `I0` and require that no
/// checkpoint state enters the strict interior of the inner box.
pub fn check_boundary_exclusion(spec: &ModelSpec, result: &ReachResult, samples: usize, seed: u64) -> SampleReport {
    let h_sim = sim_step(result);
    let spacing = knot_spacing(spec, h_sim);
    let t_end = result.checkpoints.iter().map(|c| c.t).fold(0.0, f64::max);
    let inner: Vec<(f64, IntervalBox)> = result
        .checkpoints
        .iter()
        .filter_map(|c| c.u.as_ref().and_then(|u| u.deflate(EXCLUSION_BUDGET)).map(|u| (c.t, u)))
        .collect();
    let per: Vec<(Vec<Violation>, bool)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            let x0 = sample_boundary(&spec.i0, &mut rng);
            let sig = sample_perturbation_with(&spec.d, spec.l, spec.horizon(), spacing, &mut rng);
            let traj = simulate_to(spec, &x0, &sig, h_sim, t_end);
            let v = inner
                .iter()
                .filter(|(t, u)| u.interior_contains_point(traj.at(*t)))
                .map(|(t, _)| violation(i, *t, &x0, traj.at(*t), "boundary trajectory inside inner box"))
                .collect();
            (v, traj.exited_domain)
        })
        .collect();
    collect_report(samples, inner.len(), per)
}

// --- Newton shooting --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    pub x0: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Damped Newton on `x0 -> phi(t; x0, d) - target` with central-difference
/// Jacobians, started from `start`.
pub fn shoot(
    spec: &ModelSpec,
    target: &[f64],
    t: f64,
    signal: &PerturbationSignal,
    h_sim: f64,
    start: &[f64],
) -> ShotResult {
    let n = spec.n;
    let resid = |x0: &[f64]| -> Vec<f64> {
        let tr = simulate_to(spec, x0, signal, h_sim, t);
        tr.end().iter().zip(target).map(|(a, b)| a - b).collect()
    };
    let mut x0 = start.to_vec();
    let mut r = resid(&x0);
    let mut norm = max_abs(&r);
    let mut iterations = 0;
    while iterations < 50 && norm > 1e-13 {
        iterations += 1;
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let delta = 1e-7 * x0[j].abs().max(1.0);
            let mut p = x0.clone();
            let mut q = x0.clone();
            p[j] += delta;
            q[j] -= delta;
            let (rp, rq) = (resid(&p), resid(&q));
            for i in 0..n {
                jac[(i, j)] = (rp[i] - rq[i]) / (2.0 * delta);
            }
        }
        let Some(step) = jac.lu().solve(&(-DVector::from_column_slice(&r))) else {
            break;
        };
        let mut lam = 1.0;
        let mut accepted = false;
        while lam > 1e-6 {
            let cand: Vec<f64> = (0..n).map(|k| x0[k] + lam * step[k]).collect();
            let rc = resid(&cand);
            let nc = max_abs(&rc);
            if nc < norm {
                x0 = cand;
                r = rc;
                norm = nc;
                accepted = true;
                break;
            }
            lam *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    ShotResult {
        x0,
        residual: norm,
        iterations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotFailure {
    pub t: f64,
    pub signal: usize,
    pub target: Vec<f64>,
    pub x0: Vec<f64>,
    pub residual: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderReport {
    pub signals: usize,
    pub checkpoints_tested: usize,
    pub points_tested: usize,
    pub passed: bool,
    pub max_residual: f64,
    pub failures: Vec<ShotFailure>,
}

/// Corners and centre of a box.
pub fn test_points(u: &IntervalBox) -> Vec<Vec<f64>> {
    let mut pts = u.corners();
    pts.push(u.mid());
    pts
}

/// For every checkpoint with an inner box, every sampled signal and every
/// corner and the centre of the box, find an initial state in `I0` that
/// reaches it.
pub fn check_under(spec: &ModelSpec, result: &ReachResult, d_samples: usize, seed: u64) -> UnderReport {
    let targets: Vec<(f64, Vec<f64>)> = result
        .checkpoints
        .iter()
        .filter_map(|c| c.u.as_ref().map(|u| (c.t, test_points(u))))
        .flat_map(|(t, pts)| pts.into_iter().map(move |p| (t, p)))
        .collect();
    check_points_reachable(spec, result, &targets, d_samples, seed)
}

/// Shooting check for explicit `(t, target)` pairs.
pub fn check_points_reachable(
    spec: &ModelSpec,
    result: &ReachResult,
    targets: &[(f64, Vec<f64>)],
    d_samples: usize,
    seed: u64,
) -> UnderReport {
    let h_sim = sim_step(result);
    let spacing = knot_spacing(spec, h_sim);
    let signals: Vec<PerturbationSignal> = (0..d_samples)
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            sample_perturbation_with(&spec.d, spec.l, spec.horizon(), spacing, &mut rng)
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..signals.len()).flat_map(|s| (0..targets.len()).map(move |k| (s, k))).collect();
    let start = spec.i0.mid();
    let results: Vec<(usize, usize, ShotResult)> = jobs
        .into_par_iter()
        .map(|(s, k)| {
            let (t, ref target) = targets[k];
            (s, k, shoot(spec, target, t, &signals[s], h_sim, &start))
        })
        .collect();
    let mut rep = UnderReport {
        signals: d_samples,
        checkpoints_tested: {
            let mut ts: Vec<f64> = targets.iter().map(|(t, _)| *t).collect();
            ts.dedup();
            ts.len()
        },
        points_tested: targets.len(),
        passed: true,
        max_residual: 0.0,
        failures: Vec::new(),
    };
    for (s, k, shot) in results {
        rep.max_residual = rep.max_residual.max(shot.residual);
        let inside = spec.i0.contains_point_with_slack(&shot.x0, CONTAINMENT_SLACK);
        if shot.residual > SHOOT_TOLERANCE || !inside {
            rep.passed = false;
            rep.failures.push(ShotFailure {
                t: targets[k].0,
                signal: s,
                target: targets[k].1.clone(),
                x0: shot.x0,
                residual: shot.residual,
                reason: if shot.residual > SHOOT_TOLERANCE {
                    "Newton did not converge".into()
                } else {
                    "preimage lies outside I0".into()
                },
            });
        }
    }
    rep
}
