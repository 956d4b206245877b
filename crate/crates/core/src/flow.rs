//! Validated integration of `x' = F(x, u, t)` with interval-valued inputs.
//!
//! Each step takes a Picard a priori enclosure `B` followed by a first-order
//! mean-value update
//!
//! ```text
//! x(t+h) in c + h F(c, U) + (I + h J(X, U)) (X - c) + h^2/2 J(B, U) F(B, U)
//! ```
//!
//! The set between steps is held as `c + A r` (point centre, point
//! orthogonal matrix, interval vector) and re-orthogonalised by QR each step,
//! which keeps the wrapping of rotating or shearing flows under control. All
//! public inputs and outputs are plain boxes.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{FieldKind, VectorField};
use crate::interval::{add_up, div_up, mul_up, Interval, IntervalBox, IntervalMatrix};
use crate::report::sig17;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("no a priori enclosure found at t = {t} (step size too large or blow-up)")]
    StepFailure { t: f64 },
    #[error("enclosure left the domain at t = {t}")]
    DomainExit { t: f64 },
    #[error("duration {duration} is not a multiple of the step {h}")]
    OffGrid { duration: f64, h: f64 },
    #[error("delayed field needs a lag input channel")]
    MissingLag,
}

const APRIORI_ROUNDS: usize = 40;

/// Inputs held constant over one step: lag box, perturbation box and the
/// time interval of the step.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs<'a> {
    pub lag: Option<&'a IntervalBox>,
    pub d: &'a IntervalBox,
    pub t: Interval,
}

impl StepInputs<'_> {
    fn env(&self, x: &[Interval]) -> Vec<Interval> {
        let mut e = Vec::with_capacity(2 * x.len() + self.d.dim() + 1);
        e.extend_from_slice(x);
        match self.lag {
            Some(l) => e.extend_from_slice(l.dims()),
            None => e.extend_from_slice(x),
        }
        e.extend_from_slice(self.d.dims());
        e.push(self.t);
        e
    }
}

fn step_time(t: f64, h: f64) -> Interval {
    Interval::new(t, add_up(t, h))
}

fn clip(b: &IntervalBox, domain: Option<&IntervalBox>, t: f64) -> Result<IntervalBox, FlowError> {
    match domain {
        None => Ok(b.clone()),
        Some(x) => match b.intersect(x) {
            Ok(Some(c)) => Ok(c),
            _ => Err(FlowError::DomainExit { t }),
        },
    }
}

/// A box `B ⊇ x` with `x + [0,h] F(B, U) ⊆ B`, so every solution starting
/// in `x` stays in `B` over the whole step.
pub fn apriori_enclosure(
    field: &VectorField,
    x: &IntervalBox,
    inputs: &StepInputs,
    h: f64,
) -> Result<IntervalBox, FlowError> {
    assert!(h > 0.0, "step must be positive");
    let hh = Interval::new(0.0, h);
    let t = inputs.t.lo();
    let mut b = x.clone();
    for _ in 0..APRIORI_ROUNDS {
        let fb = field.eval_interval(&inputs.env(b.dims()));
        if fb.iter().any(|v| !v.lo().is_finite() || !v.hi().is_finite()) {
            return Err(FlowError::StepFailure { t });
        }
        let cand: IntervalBox = x.dims().iter().zip(&fb).map(|(xi, fi)| *xi + hh * *fi).collect();
        if cand.subset_of(&b) {
            // the candidate is itself a valid enclosure (F is inclusion monotone)
            return Ok(cand);
        }
        b = cand
            .dims()
            .iter()
            .zip(b.dims())
            .map(|(c, old)| {
                let grow = 0.1 * c.width() + 1e-14 * (1.0 + c.mag());
                c.hull(old).inflate(grow)
            })
            .collect();
    }
    Err(FlowError::StepFailure { t })
}

/// `(c + A r) ∩ bound`, the set representation carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSet {
    pub c: Vec<f64>,
    pub a: DMatrix<f64>,
    pub r: Vec<Interval>,
    /// A box independently known to contain the set.
    pub bound: IntervalBox,
}

impl AffineSet {
    pub fn from_box(b: &IntervalBox) -> Self {
        let c = b.mid();
        let r = b.dims().iter().zip(&c).map(|(i, &ci)| *i - Interval::point(ci)).collect();
        AffineSet {
            a: DMatrix::identity(c.len(), c.len()),
            c,
            r,
            bound: b.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Box enclosure of the set.
    pub fn enclosure(&self) -> IntervalBox {
        let ar = IntervalMatrix::from_points(&self.a).mul_vec(&self.r).expect("dimensions agree");
        let e: IntervalBox = self.c.iter().zip(ar).map(|(&c, v)| Interval::point(c) + v).collect();
        match e.intersect(&self.bound) {
            Ok(Some(b)) => b,
            _ => e,
        }
    }
}

/// Enclosure of `q^{-1}` for a nonsingular point matrix, or `None` if the
/// residual bound cannot be certified.
pub fn verified_inverse(q: &DMatrix<f64>) -> Option<IntervalMatrix> {
    let n = q.nrows();
    let y = q.clone().try_inverse()?;
    let yq = IntervalMatrix::from_points(&y).mul_mat(&IntervalMatrix::from_points(q)).ok()?;
    let mut c = IntervalMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            c.set(i, j, Interval::point(id) - yq.get(i, j));
        }
    }
    let cn = c.inf_norm();
    if !(cn < 0.5) {
        return None;
    }
    // q^{-1} = (I - C)^{-1} y = y + C (I - C)^{-1} y, whose entries are
    // bounded by ||C|| ||y|| / (1 - ||C||)
    let yn = IntervalMatrix::from_points(&y).inf_norm();
    let one_minus = crate::interval::add_down(1.0, -cn);
    let delta = div_up(mul_up(cn, yn), one_minus);
    let mut out = IntervalMatrix::from_points(&y);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, out.get(i, j).inflate(delta));
        }
    }
    Some(out)
}

/// Result of one validated step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Enclosure of all states at `t + h` (clipped to the domain).
    pub tip: IntervalBox,
    /// Enclosure of all states over `[t, t + h]` (clipped to the domain).
    pub tube: IntervalBox,
    pub raw_tip: IntervalBox,
    pub raw_tube: IntervalBox,
}

fn step_affine(
    field: &VectorField,
    set: &AffineSet,
    inputs: &StepInputs,
    h: f64,
    domain: Option<&IntervalBox>,
) -> Result<(AffineSet, StepOutput), FlowError> {
    let n = set.dim();
    let t = inputs.t.lo();
    let xh = clip(&set.enclosure(), domain, t)?;
    let raw_b = apriori_enclosure(field, &xh, inputs, h)?;
    let b = clip(&raw_b, domain, t)?;

    let hi = Interval::point(h);
    let half_h2 = hi * hi * Interval::point(0.5);
    let env_b = inputs.env(b.dims());
    let fb = field.eval_interval(&env_b);
    let jb = field.jacobian_x_interval(&env_b);
    let rem = jb.mul_vec(&fb).expect("square Jacobian");

    let c_iv: Vec<Interval> = set.c.iter().map(|&v| Interval::point(v)).collect();
    let fc = field.eval_interval(&inputs.env(&c_iv));
    let z: Vec<Interval> = (0..n).map(|i| c_iv[i] + hi * fc[i] + half_h2 * rem[i]).collect();

    // the mean-value segment from c to any state must lie in the box the
    // Jacobian is evaluated over; c itself need not lie in `bound`
    let xc = xh.hull(&IntervalBox::point(&set.c)).expect("same dimension");
    let jx = field.jacobian_x_interval(&inputs.env(xc.dims()));
    let mut m = IntervalMatrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, m.get(i, j) + hi * jx.get(i, j));
        }
    }
    let p = m.mul_mat(&IntervalMatrix::from_points(&set.a)).expect("square");
    let pr = p.mul_vec(&set.r).expect("square");
    let direct: IntervalBox = z.iter().zip(&pr).map(|(a, b)| *a + *b).collect();

    // re-orthogonalise: columns ordered by their extent so the first basis
    // vector follows the longest direction of the set
    let am = p.mid();
    let mut order: Vec<usize> = (0..n).collect();
    let extent: Vec<f64> = (0..n).map(|j| am.column(j).norm() * set.r[j].rad()).collect();
    order.sort_by(|&a, &b| extent[b].total_cmp(&extent[a]).then(a.cmp(&b)));
    let permuted = DMatrix::from_fn(n, n, |i, j| am[(i, order[j])]);
    let mut q = permuted.qr().q();
    let mut qinv = verified_inverse(&q);
    if qinv.is_none() {
        q = DMatrix::identity(n, n);
        qinv = Some(IntervalMatrix::identity(n));
    }
    let qinv = qinv.expect("set above");

    let c_new: Vec<f64> = z.iter().map(Interval::mid).collect();
    let z_off: Vec<Interval> = z.iter().zip(&c_new).map(|(zi, &ci)| *zi - Interval::point(ci)).collect();
    let qp = qinv.mul_mat(&p).expect("square");
    let r_new: Vec<Interval> = qp
        .mul_vec(&set.r)
        .expect("square")
        .into_iter()
        .zip(qinv.mul_vec(&z_off).expect("square"))
        .map(|(a, b)| a + b)
        .collect();
    let mut next = AffineSet {
        c: c_new,
        a: q,
        r: r_new,
        bound: direct.clone(),
    };

    let lohner = next.enclosure();
    let mut raw_tip = match direct.intersect(&lohner) {
        Ok(Some(v)) => v,
        _ => direct.clone(),
    };
    if let Ok(Some(v)) = raw_tip.intersect(&raw_b) {
        raw_tip = v;
    }
    let tip = clip(&raw_tip, domain, t + h)?;
    next.bound = raw_tip.clone();
    Ok((
        next,
        StepOutput {
            tip,
            tube: b,
            raw_tip,
            raw_tube: raw_b,
        },
    ))
}

/// One validated step from a box.
pub fn step(
    field: &VectorField,
    x: &IntervalBox,
    inputs: &StepInputs,
    h: f64,
    domain: Option<&IntervalBox>,
) -> Result<StepOutput, FlowError> {
    step_affine(field, &AffineSet::from_box(x), inputs, h, domain).map(|(_, o)| o)
}

/// Per-step sequence of boxes for one input channel.
#[derive(Debug, Clone)]
pub enum Channel {
    Constant(IntervalBox),
    Steps(Vec<IntervalBox>),
}

impl Channel {
    pub fn at(&self, j: usize) -> &IntervalBox {
        match self {
            Channel::Constant(b) => b,
            Channel::Steps(v) => &v[j],
        }
    }
}

/// Input channels for a segment, aligned with the flow step grid: entry `j`
/// covers `[t0 + j h, t0 + (j+1) h]`.
#[derive(Debug, Clone)]
pub struct InputSignal {
    pub d: Channel,
    pub lag: Option<Channel>,
}

#[derive(Debug, Clone)]
pub struct FlowParams {
    pub h: f64,
    pub max_halvings: u32,
    pub domain: Option<IntervalBox>,
    /// Absolute start time of the segment.
    pub t0: f64,
}

impl FlowParams {
    pub fn new(h: f64) -> Self {
        FlowParams {
            h,
            max_halvings: 10,
            domain: None,
            t0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipeSegment {
    pub t_lo: f64,
    pub t_hi: f64,
    /// Enclosure over `[t_lo, t_hi]`.
    pub reach: IntervalBox,
    /// Enclosure at `t_hi`; always inside `reach`.
    pub tip: IntervalBox,
    /// Domain-unclipped counterparts, for checking domain containment.
    #[serde(skip)]
    pub raw_reach: IntervalBox,
    #[serde(skip)]
    pub raw_tip: IntervalBox,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flowpipe {
    pub origin: String,
    pub segments: Vec<PipeSegment>,
}

impl Flowpipe {
    pub fn new(origin: impl Into<String>) -> Self {
        Flowpipe {
            origin: origin.into(),
            segments: Vec::new(),
        }
    }

    pub fn final_tip(&self) -> Option<&IntervalBox> {
        self.segments.last().map(|s| &s.tip)
    }

    /// True if any enclosure had to be cut back to the domain.
    pub fn clipped(&self) -> bool {
        self.segments.iter().any(|s| s.raw_reach != s.reach || s.raw_tip != s.tip)
    }

    /// One row per segment: `t_lo,t_hi,x1_lo,x1_hi,...` of the reach box.
    pub fn to_csv(&self) -> String {
        let n = self.segments.first().map_or(0, |s| s.reach.dim());
        let mut out = String::from("t_lo,t_hi");
        for i in 1..=n {
            out.push_str(&format!(",x{i}_lo,x{i}_hi"));
        }
        out.push('\n');
        for s in &self.segments {
            out.push_str(&sig17(s.t_lo));
            out.push(',');
            out.push_str(&sig17(s.t_hi));
            for iv in s.reach.dims() {
                out.push(',');
                out.push_str(&sig17(iv.lo()));
                out.push(',');
                out.push_str(&sig17(iv.hi()));
            }
            out.push('\n');
        }
        out
    }
}

/// Number of `h` steps in `duration`, if it is a whole multiple.
pub fn whole_steps(duration: f64, h: f64) -> Option<usize> {
    let q = duration / h;
    let k = q.round();
    ((q - k).abs() <= 1e-9 * k.max(1.0) && k >= 0.0).then_some(k as usize)
}

/// Advance `state` by one grid step, halving on enclosure failure.
fn advance(
    field: &VectorField,
    state: &mut AffineSet,
    lag: Option<&IntervalBox>,
    d: &IntervalBox,
    t: f64,
    h: f64,
    domain: Option<&IntervalBox>,
    halvings_left: u32,
) -> Result<StepOutput, FlowError> {
    let inputs = StepInputs {
        lag,
        d,
        t: step_time(t, h),
    };
    match step_affine(field, state, &inputs, h, domain) {
        Ok((next, out)) => {
            *state = next;
            Ok(out)
        }
        Err(FlowError::StepFailure { .. }) if halvings_left > 0 => {
            let half = 0.5 * h;
            let a = advance(field, state, lag, d, t, half, domain, halvings_left - 1)?;
            let b = advance(field, state, lag, d, t + half, half, domain, halvings_left - 1)?;
            let hull = |x: &IntervalBox, y: &IntervalBox| x.hull(y).expect("same dimension");
            Ok(StepOutput {
                tube: hull(&a.tube, &b.tube),
                raw_tube: hull(&a.raw_tube, &b.raw_tube),
                tip: b.tip,
                raw_tip: b.raw_tip,
            })
        }
        Err(e) => Err(e),
    }
}

/// Continue an existing affine set over `duration`, appending to `pipe`.
pub fn flow_segment_from(
    field: &VectorField,
    state: &mut AffineSet,
    inputs: &InputSignal,
    duration: f64,
    params: &FlowParams,
    pipe: &mut Flowpipe,
) -> Result<(), FlowError> {
    let h = params.h;
    let steps = whole_steps(duration, h).ok_or(FlowError::OffGrid { duration, h })?;
    if field.kind() == FieldKind::Delayed && field.uses_lag() && inputs.lag.is_none() {
        return Err(FlowError::MissingLag);
    }
    for j in 0..steps {
        let t = params.t0 + j as f64 * h;
        let t_hi = params.t0 + (j + 1) as f64 * h;
        let out = advance(
            field,
            state,
            inputs.lag.as_ref().map(|c| c.at(j)),
            inputs.d.at(j),
            t,
            h,
            params.domain.as_ref(),
            params.max_halvings,
        )?;
        pipe.segments.push(PipeSegment {
            t_lo: t,
            t_hi,
            reach: out.tube,
            tip: out.tip,
            raw_reach: out.raw_tube,
            raw_tip: out.raw_tip,
        });
    }
    Ok(())
}

/// Flowpipe of `init` over `[t0, t0 + duration]`.
pub fn flow_segment(
    field: &VectorField,
    init: &IntervalBox,
    inputs: &InputSignal,
    duration: f64,
    params: &FlowParams,
) -> Result<Flowpipe, FlowError> {
    let mut pipe = Flowpipe::new("init");
    if duration == 0.0 {
        pipe.segments.push(PipeSegment {
            t_lo: params.t0,
            t_hi: params.t0,
            reach: init.clone(),
            tip: init.clone(),
            raw_reach: init.clone(),
            raw_tip: init.clone(),
        });
        return Ok(pipe);
    }
    let mut state = AffineSet::from_box(init);
    flow_segment_from(field, &mut state, inputs, duration, params, &mut pipe)?;
    Ok(pipe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(b: &[(f64, f64)]) -> IntervalBox {
        IntervalBox::from_bounds(b)
    }

    fn pre(n: usize, m: usize, texts: &[&str]) -> VectorField {
        VectorField::parse(FieldKind::PreDelay, n, m, texts).unwrap()
    }

    fn inputs<'a>(d: &'a IntervalBox, t: f64, h: f64) -> StepInputs<'a> {
        StepInputs {
            lag: None,
            d,
            t: step_time(t, h),
        }
    }

    #[test]
    fn zero_field_is_stationary() {
        let f = VectorField::zero(FieldKind::PreDelay, 2, 1);
        let x = bx(&[(0.1, 0.3), (-1.0, 2.0)]);
        let d = bx(&[(-1.0, 1.0)]);
        assert_eq!(apriori_enclosure(&f, &x, &inputs(&d, 0.0, 0.5), 0.5).unwrap(), x);
        let out = step(&f, &x, &inputs(&d, 0.0, 0.5), 0.5, None).unwrap();
        assert_eq!(out.tip, x);
        assert_eq!(out.tube, x);
        let pipe = flow_segment(
            &f,
            &x,
            &InputSignal {
                d: Channel::Constant(d),
                lag: None,
            },
            1.0,
            &FlowParams::new(0.1),
        )
        .unwrap();
        assert_eq!(pipe.segments.len(), 10);
        assert!(pipe.segments.iter().all(|s| s.tip == x && s.reach == x));
    }

    #[test]
    fn constant_field_apriori() {
        let f = pre(1, 0, &["1"]);
        let x = bx(&[(0.0, 0.0)]);
        let d = IntervalBox::new(vec![]);
        let b = apriori_enclosure(&f, &x, &inputs(&d, 0.0, 0.1), 0.1).unwrap();
        assert!(Interval::new(0.0, 0.1).subset_of(&b[0]));
    }

    #[test]
    fn linear_decay_contains_closed_form() {
        let f = pre(1, 0, &["-x1"]);
        let d = IntervalBox::new(vec![]);
        let out = step(&f, &bx(&[(1.0, 1.0)]), &inputs(&d, 0.0, 0.01), 0.01, None).unwrap();
        assert!(out.tip[0].contains((-0.01f64).exp()));
        assert!(out.tip[0].width() < 1e-5);
        let pipe = flow_segment(
            &f,
            &bx(&[(1.0, 1.0)]),
            &InputSignal {
                d: Channel::Constant(d),
                lag: None,
            },
            1.0,
            &FlowParams::new(0.01),
        )
        .unwrap();
        let tip = pipe.final_tip().unwrap()[0];
        assert!(tip.contains((-1.0f64).exp()) && tip.width() < 1e-3, "{tip:?}");
    }

    #[test]
    fn extremal_constant_inputs_are_covered() {
        let f = pre(1, 1, &["d1"]);
        let pipe = flow_segment(
            &f,
            &bx(&[(0.0, 0.0)]),
            &InputSignal {
                d: Channel::Constant(bx(&[(-1.0, 1.0)])),
                lag: None,
            },
            1.0,
            &FlowParams::new(0.1),
        )
        .unwrap();
        assert!(Interval::new(-1.0, 1.0).subset_of(&pipe.final_tip().unwrap()[0]));
    }

    #[test]
    fn zero_duration_is_degenerate() {
        let f = pre(1, 0, &["x1"]);
        let x = bx(&[(1.0, 2.0)]);
        let pipe = flow_segment(
            &f,
            &x,
            &InputSignal {
                d: Channel::Constant(IntervalBox::new(vec![])),
                lag: None,
            },
            0.0,
            &FlowParams::new(0.1),
        )
        .unwrap();
        assert_eq!(pipe.segments.len(), 1);
        assert_eq!(pipe.segments[0].tip, x);
    }

    #[test]
    fn off_grid_duration_is_rejected() {
        let f = pre(1, 0, &["x1"]);
        let r = flow_segment(
            &f,
            &bx(&[(1.0, 2.0)]),
            &InputSignal {
                d: Channel::Constant(IntervalBox::new(vec![])),
                lag: None,
            },
            0.25,
            &FlowParams::new(0.1),
        );
        assert!(matches!(r, Err(FlowError::OffGrid { .. })));
    }

    #[test]
    fn halving_rescues_stiff_steps_and_blowup_is_reported() {
        // x' = x^2 from 1 blows up at t = 1
        let f = pre(1, 0, &["x1^2"]);
        let d = Channel::Constant(IntervalBox::new(vec![]));
        let sig = InputSignal { d, lag: None };
        let ok = flow_segment(&f, &bx(&[(1.0, 1.0)]), &sig, 0.5, &FlowParams::new(0.5)).unwrap();
        assert!(ok.final_tip().unwrap()[0].contains(2.0));
        let err = flow_segment(&f, &bx(&[(1.0, 1.0)]), &sig, 2.0, &FlowParams::new(0.5)).unwrap_err();
        assert!(matches!(err, FlowError::StepFailure { t } if t <= 1.0));
    }

    #[test]
    fn domain_exit_is_reported() {
        let f = pre(1, 0, &["1"]);
        let mut p = FlowParams::new(0.1);
        p.domain = Some(bx(&[(0.0, 0.5)]));
        let sig = InputSignal {
            d: Channel::Constant(IntervalBox::new(vec![])),
            lag: None,
        };
        let err = flow_segment(&f, &bx(&[(0.0, 0.0)]), &sig, 1.0, &p).unwrap_err();
        assert!(matches!(err, FlowError::DomainExit { .. }));
    }

    #[test]
    fn verified_inverse_encloses_exact_inverse() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let inv = verified_inverse(&q).unwrap();
        let exact = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 2.0]);
        assert!(inv.contains_point_matrix(&exact));
        assert!(verified_inverse(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).is_none());
    }

    /// RK4 for a box-free field with a fixed perturbation function; the
    /// reference against which enclosures are checked.
    fn rk4_path(field: &VectorField, x0: &[f64], d: impl Fn(f64) -> f64, t_end: f64, steps: usize) -> Vec<Vec<f64>> {
        let n = field.n();
        let dt = t_end / steps as f64;
        let eval = |x: &[f64], t: f64| {
            let mut env = vec![0.0; field.env_len()];
            env[..n].copy_from_slice(x);
            env[n..2 * n].copy_from_slice(x);
            if field.m() > 0 {
                env[2 * n] = d(t);
            }
            env[2 * n + field.m()] = t;
            let mut out = vec![0.0; n];
            field.eval_real(&env, &mut out);
            out
        };
        let mut path = vec![x0.to_vec()];
        let mut x = x0.to_vec();
        for s in 0..steps {
            let t = s as f64 * dt;
            let k1 = eval(&x, t);
            let x2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k1[i]).collect();
            let k2 = eval(&x2, t + 0.5 * dt);
            let x3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k2[i]).collect();
            let k3 = eval(&x3, t + 0.5 * dt);
            let x4: Vec<f64> = (0..n).map(|i| x[i] + dt * k3[i]).collect();
            let k4 = eval(&x4, t + dt);
            for i in 0..n {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            path.push(x.clone());
        }
        path
    }

    #[test]
    fn example_one_g_apriori_contains_sampled_tubes() {
        let g = pre(2, 1, &["-0.1*x2 + d1*x1", "-0.01*x1 + 0.02*x2"]);
        let x = bx(&[(0.1, 0.3), (0.1, 0.3)]);
        let d = bx(&[(-0.01, 0.01)]);
        let h = 0.1;
        let b = apriori_enclosure(&g, &x, &inputs(&d, 0.0, h), h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x0 = [rng.random_range(0.1..=0.3), rng.random_range(0.1..=0.3)];
            let (a, w) = (rng.random_range(-0.01..=0.01), rng.random_range(0.0..50.0));
            let path = rk4_path(&g, &x0, |t| (a * (w * t).cos()).clamp(-0.01, 0.01), h, 20);
            assert!(path.iter().all(|p| b.contains_point(p)));
        }
    }

    #[test]
    fn example_one_face_flowpipe_contains_sampled_trajectories() {
        let g = pre(2, 1, &["-0.1*x2 + d1*x1", "-0.01*x1 + 0.02*x2"]);
        let face = bx(&[(0.1, 0.1), (0.1, 0.3)]);
        let sig = InputSignal {
            d: Channel::Constant(bx(&[(-0.01, 0.01)])),
            lag: None,
        };
        let h = 0.05;
        let pipe = flow_segment(&g, &face, &sig, 1.0, &FlowParams::new(h)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sub = 8;
        for _ in 0..1000 {
            let x0 = [0.1, rng.random_range(0.1..=0.3)];
            let (a, w) = (rng.random_range(-0.01..=0.01), rng.random_range(0.0..20.0));
            let path = rk4_path(&g, &x0, |t| (a * (w * t).sin()).clamp(-0.01, 0.01), 1.0, 20 * sub);
            for (k, seg) in pipe.segments.iter().enumerate() {
                for p in &path[k * sub..=(k + 1) * sub] {
                    assert!(seg.reach.contains_point(p), "tube miss at step {k}");
                }
                assert!(seg.tip.contains_point(&path[(k + 1) * sub]));
            }
        }
    }

    #[test]
    fn affine_set_round_trips_boxes() {
        let b = bx(&[(0.1, 0.3), (-2.0, 5.0)]);
        let s = AffineSet::from_box(&b);
        assert!(b.subset_of(&s.enclosure()));
        assert!(s.enclosure().subset_of(&b.inflate(1e-15)));
    }

    #[test]
    fn csv_has_one_row_per_segment() {
        let f = pre(2, 0, &["x2", "-x1"]);
        let sig = InputSignal {
            d: Channel::Constant(IntervalBox::new(vec![])),
            lag: None,
        };
        let pipe = flow_segment(&f, &bx(&[(1.0, 1.1), (0.0, 0.1)]), &sig, 0.5, &FlowParams::new(0.1)).unwrap();
        let csv = pipe.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t_lo,t_hi,x1_lo,x1_hi,x2_lo,x2_hi");
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[1].split(',').count(), 6);
        for w in pipe.segments.windows(2) {
            assert_eq!(w[0].t_hi, w[1].t_lo);
        }
        assert!(pipe.segments.iter().all(|s| s.tip.subset_of(&s.reach)));
    }

    #[test]
    fn rotation_does_not_wrap_badly() {
        // a full turn of a harmonic oscillator: plain boxes would grow by
        // roughly e^(2 pi); the affine representation stays near the start
        let f = pre(2, 0, &["x2", "-x1"]);
        let sig = InputSignal {
            d: Channel::Constant(IntervalBox::new(vec![])),
            lag: None,
        };
        let init = bx(&[(0.9, 1.1), (-0.1, 0.1)]);
        let steps = 628;
        let h = 2.0 * std::f64::consts::PI / steps as f64;
        let pipe = flow_segment(&f, &init, &sig, h * steps as f64, &FlowParams::new(h)).unwrap();
        let tip = pipe.final_tip().unwrap();
        assert!(init.subset_of(tip));
        assert!(tip.max_width() < 0.25, "{tip}");
    }

    fn small_box() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<(f64, f64)>)> {
        (
            proptest::collection::vec((0.1f64..0.3, 0.0f64..0.05), 2),
            proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 2),
        )
            .prop_map(|(outer, frac)| {
                let outer: Vec<(f64, f64)> = outer.iter().map(|&(lo, w)| (lo, lo + w)).collect();
                let inner = outer
                    .iter()
                    .zip(&frac)
                    .map(|(&(lo, hi), &(a, b))| {
                        let (a, b) = if a <= b { (a, b) } else { (b, a) };
                        (lo + a * (hi - lo), (lo + b * (hi - lo)).min(hi))
                    })
                    .collect();
                (inner, outer)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn step_is_monotone_in_the_initial_box((inner, outer) in small_box()) {
            let g = pre(2, 1, &["-0.1*x2 + d1*x1", "-0.01*x1 + 0.02*x2"]);
            let d = bx(&[(-0.01, 0.01)]);
            let h = 0.05;
            let a = step(&g, &bx(&inner), &inputs(&d, 0.0, h), h, None).unwrap();
            let b = step(&g, &bx(&outer), &inputs(&d, 0.0, h), h, None).unwrap();
            prop_assert!(a.tip.subset_of(&b.tip), "{} vs {}", a.tip, b.tip);
            prop_assert!(a.tube.subset_of(&b.tube));
        }

        #[test]
        fn zero_width_inputs_with_zero_field_are_exact(lo in -5.0f64..5.0, w in 0.0f64..2.0) {
            let f = VectorField::zero(FieldKind::Delayed, 1, 1);
            let x = bx(&[(lo, lo + w)]);
            let d = bx(&[(0.0, 0.0)]);
            let sig = InputSignal { d: Channel::Constant(d), lag: Some(Channel::Constant(x.clone())) };
            let pipe = flow_segment(&f, &x, &sig, 0.3, &FlowParams::new(0.1)).unwrap();
            prop_assert!(pipe.segments.iter().all(|s| s.tip == x && s.reach == x));
        }
    }
}
