//! Set-boundary reachability: propagate the faces of `I0` segment by segment
//! and assemble outer boxes, diagonal-template bounds and inner boxes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{
    flow_segment_from, whole_steps, AffineSet, Channel, FlowError, FlowParams, Flowpipe, InputSignal, PipeSegment,
};
use crate::interval::{add_down, add_up, Interval, IntervalBox};
use crate::model::{check_model, steps_per_delay, ModelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReachError {
    #[error("initial set is degenerate in dimension {0}")]
    DegenerateInitialSet(usize),
    #[error("time {0} is not on the flow step grid")]
    OffGrid(f64),
    #[error("face {face}: {source}")]
    Flow {
        face: String,
        #[source]
        source: FlowError,
    },
    #[error("{0}")]
    Params(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub label: String,
    /// Dimension held fixed and whether it sits at the upper bound.
    pub fixed_dim: usize,
    pub upper: bool,
    pub patch: IntervalBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPartition {
    pub faces: Vec<Face>,
}

/// Split each of the `2n` faces of `i0` into `k` pieces along every free
/// dimension, `k^(n-1)` patches per face.
pub fn partition_boundary(i0: &IntervalBox, subdivisions: usize) -> Result<BoundaryPartition, ReachError> {
    let n = i0.dim();
    if let Some(i) = (0..n).find(|&i| i0.is_degenerate_in(i)) {
        return Err(ReachError::DegenerateInitialSet(i));
    }
    let k = subdivisions.max(1);
    let cut = |iv: Interval, j: usize| -> f64 {
        match j {
            0 => iv.lo(),
            j if j == k => iv.hi(),
            j => iv.lo() + (iv.hi() - iv.lo()) * (j as f64 / k as f64),
        }
    };
    let mut faces = Vec::new();
    for fixed in 0..n {
        for upper in [false, true] {
            let free: Vec<usize> = (0..n).filter(|&i| i != fixed).collect();
            let count = k.pow(free.len() as u32);
            for p in 0..count {
                let mut idx = p;
                let mut dims = i0.dims().to_vec();
                let v = if upper { i0[fixed].hi() } else { i0[fixed].lo() };
                dims[fixed] = Interval::point(v);
                let mut tag = Vec::with_capacity(free.len());
                for &f in &free {
                    let j = idx % k;
                    idx /= k;
                    dims[f] = Interval::new(cut(i0[f], j), cut(i0[f], j + 1));
                    tag.push(j.to_string());
                }
                let side = if upper { "hi" } else { "lo" };
                let label = if k == 1 {
                    format!("x{}_{side}", fixed + 1)
                } else {
                    format!("x{}_{side}_{}", fixed + 1, tag.join("-"))
                };
                faces.push(Face {
                    label,
                    fixed_dim: fixed,
                    upper,
                    patch: IntervalBox::new(dims),
                });
            }
        }
    }
    Ok(BoundaryPartition { faces })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachParams {
    pub h: f64,
    pub subdivisions: usize,
    pub checkpoints: Vec<f64>,
    /// Compute under-approximations even when the delay certificate fails
    /// (they are then reported but marked uncertified and suppressed).
    pub allow_uncertified: bool,
}

impl ReachParams {
    /// Parameters from the model's solver section; the step defaults to a
    /// tenth of the delay.
    pub fn from_spec(spec: &ModelSpec) -> Self {
        ReachParams {
            h: spec.solver.h.unwrap_or(spec.tau / 10.0),
            subdivisions: spec.solver.subdivisions,
            checkpoints: spec.checkpoint_times(),
            allow_uncertified: false,
        }
    }
}

/// Flow `init` across all `K` delay segments: `g` on the first, `f` with
/// the lag channel bound to this pipe's own tubes one delay earlier.
fn propagate_one(spec: &ModelSpec, init: &IntervalBox, label: &str, h: f64) -> Result<Flowpipe, ReachError> {
    let q = steps_per_delay(spec.tau, h).map_err(|e| ReachError::Params(e.to_string()))?;
    let mut state = AffineSet::from_box(init);
    let mut pipe = Flowpipe::new(label);
    let wrap = |source| ReachError::Flow {
        face: label.to_string(),
        source,
    };
    let d = Channel::Constant(spec.d.clone());
    for seg in 0..spec.k {
        let mut params = FlowParams::new(h);
        params.domain = Some(spec.x.clone());
        params.t0 = seg as f64 * spec.tau;
        let duration = q as f64 * h;
        let (field, lag) = if seg == 0 {
            (&spec.g, None)
        } else {
            let prev: Vec<IntervalBox> = pipe.segments[(seg - 1) * q..seg * q]
                .iter()
                .map(|s| s.reach.clone())
                .collect();
            (&spec.f, Some(Channel::Steps(prev)))
        };
        let inputs = InputSignal { d: d.clone(), lag };
        // keep the absolute step grid: t0 + j*h equals global index times h
        flow_segment_from(field, &mut state, &inputs, duration, &params, &mut pipe).map_err(wrap)?;
        debug_assert_eq!(pipe.segments.len(), (seg + 1) * q);
    }
    Ok(pipe)
}

/// Flowpipes for every face patch plus the interior witness (centre of
/// `I0`). Faces are independent and run in parallel.
pub fn propagate(
    spec: &ModelSpec,
    partition: &BoundaryPartition,
    h: f64,
) -> Result<(Vec<Flowpipe>, Flowpipe), ReachError> {
    let pipes = partition
        .faces
        .par_iter()
        .map(|f| propagate_one(spec, &f.patch, &f.label, h))
        .collect::<Result<Vec<_>, _>>()?;
    let witness = propagate_one(spec, &IntervalBox::point(&spec.i0.mid()), "witness", h)?;
    Ok((pipes, witness))
}

/// Box of a pipe at grid time `t`; `t = 0` yields the initial patch.
pub fn box_at(pipe: &Flowpipe, init: &IntervalBox, t: f64, h: f64) -> Result<IntervalBox, ReachError> {
    let j = whole_steps(t, h).ok_or(ReachError::OffGrid(t))?;
    if j == 0 {
        return Ok(init.clone());
    }
    pipe.segments
        .get(j - 1)
        .map(|s| s.tip.clone())
        .ok_or(ReachError::OffGrid(t))
}

/// Hull of the face boxes: an outer box of the whole reach set.
pub fn over_approx(face_boxes: &[IntervalBox]) -> IntervalBox {
    let mut it = face_boxes.iter();
    let first = it.next().expect("at least one face").clone();
    it.fold(first, |acc, b| acc.hull(b).expect("same dimension"))
}

/// Half-plane `si*x_i + sj*x_j <= bound` (0-based dimensions, signs ±1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagonalConstraint {
    pub i: usize,
    pub j: usize,
    pub si: f64,
    pub sj: f64,
    pub bound: f64,
}

/// Octagonal template bound: for each pair of dimensions and sign pattern,
/// the largest value of the linear form over the face boxes. Every reach
/// set whose boundary lies in the face boxes lies in their convex hull, so
/// it satisfies every constraint.
pub fn template_bound(face_boxes: &[IntervalBox]) -> Vec<DiagonalConstraint> {
    let n = face_boxes.first().map_or(0, IntervalBox::dim);
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let bound = face_boxes
                    .iter()
                    .map(|b| {
                        let a = if si > 0.0 { b[i].hi() } else { -b[i].lo() };
                        let c = if sj > 0.0 { b[j].hi() } else { -b[j].lo() };
                        add_up(a, c)
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                out.push(DiagonalConstraint { i, j, si, sj, bound });
            }
        }
    }
    out
}

/// A template constraint that no point of `bx` satisfies, if any.
pub fn separating_constraint(template: &[DiagonalConstraint], bx: &IntervalBox) -> Option<DiagonalConstraint> {
    template.iter().copied().find(|c| {
        let a = if c.si > 0.0 { bx[c.i].lo() } else { -bx[c.i].hi() };
        let b = if c.sj > 0.0 { bx[c.j].lo() } else { -bx[c.j].hi() };
        add_down(a, b) > c.bound
    })
}

/// Why an under-approximation is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnderStatus {
    Nonempty,
    /// The witness enclosure touches a boundary enclosure or leaves `O`.
    WitnessNotInterior,
    /// Shrinking left no room around the witness.
    Degenerate,
    /// The delay certificate failed; inner boxes are not trusted.
    Uncertified,
}

fn open_overlap(a: Interval, b: Interval) -> bool {
    a.lo() < b.hi() && b.lo() < a.hi()
}

/// True if the interior of `u` avoids the closed box `b`.
fn interior_avoids(u: &IntervalBox, b: &IntervalBox) -> bool {
    (0..u.dim()).any(|i| u[i].hi() <= b[i].lo() || u[i].lo() >= b[i].hi())
}

/// Inner box: the largest box found by growing around the witness box `w`
/// inside `o` whose interior meets no face box. Such a box is contained in
/// every reach set: its interior is connected, contains an interior image
/// point, and never crosses an image of the boundary.
pub fn under_approx(face_boxes: &[IntervalBox], w: &IntervalBox, o: &IntervalBox) -> Result<IntervalBox, UnderStatus> {
    let n = o.dim();
    if !(0..n).all(|i| o[i].lo() < w[i].lo() && w[i].hi() < o[i].hi()) {
        return Err(UnderStatus::WitnessNotInterior);
    }
    if face_boxes.iter().any(|b| b.intersects(w)) {
        return Err(UnderStatus::WitnessNotInterior);
    }
    let sigma = o.widths();
    // uniform growth u(s) = w ± s*sigma until the interior first meets a box
    let mut s_max = f64::INFINITY;
    for i in 0..n {
        s_max = s_max.min((w[i].lo() - o[i].lo()) / sigma[i]);
        s_max = s_max.min((o[i].hi() - w[i].hi()) / sigma[i]);
    }
    for b in face_boxes {
        let s_b = (0..n)
            .map(|i| ((w[i].lo() - b[i].hi()) / sigma[i]).max((b[i].lo() - w[i].hi()) / sigma[i]))
            .fold(f64::NEG_INFINITY, f64::max);
        s_max = s_max.min(s_b);
    }
    if !(s_max > 0.0) {
        return Err(UnderStatus::Degenerate);
    }
    let s = s_max * (1.0 - 1e-9);
    let mut lo: Vec<f64> = (0..n).map(|i| (w[i].lo() - s * sigma[i]).max(o[i].lo())).collect();
    let mut hi: Vec<f64> = (0..n).map(|i| (w[i].hi() + s * sigma[i]).min(o[i].hi())).collect();
    let mk = |lo: &[f64], hi: &[f64]| IntervalBox::new(lo.iter().zip(hi).map(|(&a, &b)| Interval::new(a, b)).collect());
    let mut u = mk(&lo, &hi);
    if !face_boxes.iter().all(|b| interior_avoids(&u, b)) {
        return Err(UnderStatus::Degenerate);
    }

    // push each side outward until it meets a box that overlaps the others
    for _ in 0..64 {
        let mut changed = false;
        for i in 0..n {
            let blocking = |b: &&IntervalBox| (0..n).filter(|&j| j != i).all(|j| open_overlap(u[j], b[j]));
            let new_hi = face_boxes
                .iter()
                .filter(blocking)
                .filter(|b| b[i].hi() > u[i].lo())
                .map(|b| b[i].lo())
                .fold(o[i].hi(), f64::min);
            if new_hi > hi[i] {
                hi[i] = new_hi;
                u = mk(&lo, &hi);
                changed = true;
            }
            let blocking = |b: &&IntervalBox| (0..n).filter(|&j| j != i).all(|j| open_overlap(u[j], b[j]));
            let new_lo = face_boxes
                .iter()
                .filter(blocking)
                .filter(|b| b[i].lo() < u[i].hi())
                .map(|b| b[i].hi())
                .fold(o[i].lo(), f64::max);
            if new_lo < lo[i] {
                lo[i] = new_lo;
                u = mk(&lo, &hi);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let ok = face_boxes.iter().all(|b| interior_avoids(&u, b))
        && (0..n).all(|i| u[i].lo() < w[i].lo() && w[i].hi() < u[i].hi())
        && u.subset_of(o);
    if ok {
        Ok(u)
    } else {
        Err(UnderStatus::Degenerate)
    }
}

/// True iff, at every step, the hull of all unclipped face tubes lies in the
/// interior of `x`.
pub fn check_domain_containment(pipes: &[Flowpipe], x: &IntervalBox) -> bool {
    let steps = pipes.iter().map(|p| p.segments.len()).min().unwrap_or(0);
    let inside = |b: &IntervalBox| (0..x.dim()).all(|i| x[i].lo() < b[i].lo() && b[i].hi() < x[i].hi());
    (0..steps).all(|j| {
        let hull = over_approx(&pipes.iter().map(|p| p.segments[j].raw_reach.clone()).collect::<Vec<_>>());
        inside(&hull)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub o_boundary: Vec<IntervalBox>,
    pub o_full: IntervalBox,
    pub template: Vec<DiagonalConstraint>,
    pub witness: IntervalBox,
    pub u: Option<IntervalBox>,
    pub u_status: UnderStatus,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachResult {
    pub h: f64,
    pub subdivisions: usize,
    pub face_labels: Vec<String>,
    pub checkpoints: Vec<Checkpoint>,
    pub certified: bool,
    pub domain_ok: bool,
    pub clipped: bool,
    #[serde(skip)]
    pub face_pipes: Vec<Flowpipe>,
    #[serde(skip)]
    pub witness_pipe: Option<Flowpipe>,
}

impl ReachResult {
    pub fn checkpoint(&self, t: f64) -> Option<&Checkpoint> {
        self.checkpoints
            .iter()
            .find(|c| (c.t - t).abs() <= 1e-9 * t.abs().max(1.0))
    }
}

/// Full pipeline: partition, propagate, assemble every checkpoint.
pub fn reach(spec: &ModelSpec, params: &ReachParams) -> Result<ReachResult, ReachError> {
    steps_per_delay(spec.tau, params.h).map_err(|e| ReachError::Params(e.to_string()))?;
    let certified = check_model(spec).certified;
    let partition = partition_boundary(&spec.i0, params.subdivisions)?;
    let (pipes, witness) = propagate(spec, &partition, params.h)?;
    let witness_init = IntervalBox::point(&spec.i0.mid());
    let mut checkpoints = Vec::with_capacity(params.checkpoints.len());
    for &t in &params.checkpoints {
        if t < 0.0 || t > spec.horizon() * (1.0 + 1e-12) {
            return Err(ReachError::OffGrid(t));
        }
        let boxes = pipes
            .iter()
            .zip(&partition.faces)
            .map(|(p, f)| box_at(p, &f.patch, t, params.h))
            .collect::<Result<Vec<_>, _>>()?;
        let w = box_at(&witness, &witness_init, t, params.h)?;
        let o_full = over_approx(&boxes);
        let template = template_bound(&boxes);
        let (u, u_status) = if !certified && !params.allow_uncertified {
            (None, UnderStatus::Uncertified)
        } else {
            match under_approx(&boxes, &w, &o_full) {
                Ok(u) if certified => (Some(u), UnderStatus::Nonempty),
                Ok(_) => (None, UnderStatus::Uncertified),
                Err(s) => (None, s),
            }
        };
        checkpoints.push(Checkpoint {
            t,
            o_boundary: boxes,
            o_full,
            template,
            witness: w,
            u,
            u_status,
            certified,
        });
    }
    let domain_ok = check_domain_containment(&pipes, &spec.x);
    let clipped = pipes.iter().any(Flowpipe::clipped);
    Ok(ReachResult {
        h: params.h,
        subdivisions: params.subdivisions,
        face_labels: partition.faces.iter().map(|f| f.label.clone()).collect(),
        checkpoints,
        certified,
        domain_ok,
        clipped,
        face_pipes: pipes,
        witness_pipe: Some(witness),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    RobustlySafe,
    RobustlyUnsafe,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub verdict: Verdict,
    pub t: f64,
    /// The set relation that witnesses the verdict.
    pub relation: String,
}

/// Robustly safe when the outer enclosure misses `xu`; robustly unsafe when
/// a certified inner box meets it.
pub fn safety_verdict(cp: &Checkpoint, xu: &IntervalBox) -> SafetyVerdict {
    let t = cp.t;
    if !cp.o_full.intersects(xu) {
        return SafetyVerdict {
            verdict: Verdict::RobustlySafe,
            t,
            relation: "outer box is disjoint from Xu".into(),
        };
    }
    if let Some(c) = separating_constraint(&cp.template, xu) {
        let term = |s: f64, i: usize| format!("{}x{}", if s > 0.0 { "+" } else { "-" }, i + 1);
        return SafetyVerdict {
            verdict: Verdict::RobustlySafe,
            t,
            relation: format!(
                "outer template {}{} <= {} excludes Xu",
                term(c.si, c.i),
                term(c.sj, c.j),
                c.bound
            ),
        };
    }
    if let (Some(u), true) = (&cp.u, cp.certified) {
        if u.intersects(xu) {
            return SafetyVerdict {
                verdict: Verdict::RobustlyUnsafe,
                t,
                relation: "certified inner box intersects Xu".into(),
            };
        }
    }
    SafetyVerdict {
        verdict: Verdict::Unknown,
        t,
        relation: "outer set meets Xu and no inner box does".into(),
    }
}

/// Segment boxes of a pipe for CSV emission, including the `t = 0` row.
pub fn pipe_with_initial(pipe: &Flowpipe, init: &IntervalBox) -> Flowpipe {
    let mut out = Flowpipe::new(pipe.origin.clone());
    out.segments.push(PipeSegment {
        t_lo: 0.0,
        t_hi: 0.0,
        reach: init.clone(),
        tip: init.clone(),
        raw_reach: init.clone(),
        raw_tip: init.clone(),
    });
    out.segments.extend(pipe.segments.iter().cloned());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_model;

    fn bx(b: &[(f64, f64)]) -> IntervalBox {
        IntervalBox::from_bounds(b)
    }

    #[test]
    fn partition_of_example_one_square() {
        let p = partition_boundary(&bx(&[(0.1, 0.3), (0.1, 0.3)]), 1).unwrap();
        assert_eq!(p.faces.len(), 4);
        assert_eq!(p.faces[0].patch, bx(&[(0.1, 0.1), (0.1, 0.3)]));
        assert_eq!(p.faces[1].patch, bx(&[(0.3, 0.3), (0.1, 0.3)]));
        assert_eq!(p.faces[2].patch, bx(&[(0.1, 0.3), (0.1, 0.1)]));
        assert_eq!(p.faces[3].patch, bx(&[(0.1, 0.3), (0.3, 0.3)]));
    }

    #[test]
    fn partition_counts_and_coverage() {
        let i7 = IntervalBox::new(vec![Interval::new(0.0, 1.0); 7]);
        assert_eq!(partition_boundary(&i7, 1).unwrap().faces.len(), 14);
        let sq = bx(&[(0.0, 1.0), (0.0, 1.0)]);
        let p = partition_boundary(&sq, 2).unwrap();
        assert_eq!(p.faces.len(), 8);
        for f in &p.faces {
            assert!(f.patch.subset_of(&sq));
            assert!((0..2).any(|i| f.patch.is_degenerate_in(i)));
        }
        // every boundary point lies in some patch, interior points in none
        for k in 0..=100 {
            let s = k as f64 / 100.0;
            for q in [[s, 0.0], [s, 1.0], [0.0, s], [1.0, s]] {
                assert!(p.faces.iter().any(|f| f.patch.contains_point(&q)));
            }
        }
        assert!(!p.faces.iter().any(|f| f.patch.contains_point(&[0.5, 0.5])));
        assert!(matches!(
            partition_boundary(&bx(&[(0.0, 1.0), (2.0, 2.0)]), 1),
            Err(ReachError::DegenerateInitialSet(1))
        ));
    }

    #[test]
    fn hull_of_identical_boxes() {
        let b = bx(&[(0.0, 1.0), (2.0, 3.0)]);
        assert_eq!(over_approx(&[b.clone(), b.clone()]), b);
    }

    #[test]
    fn frame_shrinks_to_inner_box() {
        let w = 0.1;
        let frame = vec![
            bx(&[(0.0, 1.0), (0.0, w)]),
            bx(&[(0.0, 1.0), (1.0 - w, 1.0)]),
            bx(&[(0.0, w), (0.0, 1.0)]),
            bx(&[(1.0 - w, 1.0), (0.0, 1.0)]),
        ];
        let o = over_approx(&frame);
        let u = under_approx(&frame, &bx(&[(0.49, 0.51), (0.49, 0.51)]), &o).unwrap();
        assert_eq!(u, bx(&[(w, 1.0 - w), (w, 1.0 - w)]));
        // covering boxes leave nothing
        let cover = vec![o.clone()];
        assert_eq!(
            under_approx(&cover, &bx(&[(0.49, 0.51), (0.49, 0.51)]), &o),
            Err(UnderStatus::WitnessNotInterior)
        );
    }

    #[test]
    fn growth_follows_a_sheared_frame() {
        // boundary of a parallelogram with slope -1, sampled by small boxes
        let mut boxes = Vec::new();
        let e = 0.01;
        for k in 0..=100 {
            let s = k as f64 / 100.0;
            let pts = [(s, 0.0), (s - 1.0, 1.0), (-s, s), (1.0 - s, s)];
            for (x, y) in pts {
                boxes.push(bx(&[(x - e, x + e), (y - e, y + e)]));
            }
        }
        let o = over_approx(&boxes);
        let w = bx(&[(-0.01, 0.01), (0.49, 0.51)]);
        let u = under_approx(&boxes, &w, &o).unwrap();
        assert!(boxes.iter().all(|b| interior_avoids(&u, b)));
        assert!(u.volume() > 0.1, "{u}");
    }

    #[test]
    fn template_separates_a_corner() {
        let faces = vec![bx(&[(0.0, 1.0), (0.0, 0.0)]), bx(&[(0.0, 0.0), (0.0, 1.0)]), bx(&[(0.0, 1.0), (0.0, 1.0)]).with_dim(0, Interval::new(0.0, 0.5)).with_dim(1, Interval::new(0.0, 0.5))];
        let t = template_bound(&faces);
        assert!(separating_constraint(&t, &bx(&[(0.9, 1.0), (0.9, 1.0)])).is_some());
        assert!(separating_constraint(&t, &bx(&[(0.1, 0.2), (0.1, 0.2)])).is_none());
    }

    #[test]
    fn zero_dynamics_keep_the_initial_set() {
        let text = "[system]\nn = 2\nm = 1\ntau = 0.5\nK = 2\nL = 1\n[dynamics]\ng1 = 0\ng2 = 0\nf1 = 0\nf2 = 0\n\
                    [domains]\nX = [-1,2]x[-1,2]\nD = [-0.1,0.1]\nI0 = [0,1]x[0,1]\n";
        let spec = load_model(text).unwrap();
        let mut p = ReachParams::from_spec(&spec);
        p.checkpoints.insert(0, 0.0);
        let r = reach(&spec, &p).unwrap();
        for cp in &r.checkpoints {
            assert_eq!(cp.o_full, spec.i0);
        }
        assert!(r.domain_ok);
        for pipe in &r.face_pipes {
            assert!(pipe.segments.iter().all(|s| s.reach == s.tip));
        }
        let u = r.checkpoints[1].u.as_ref().unwrap();
        assert!(u.subset_of(&spec.i0));
    }

    #[test]
    fn shrunk_domain_fails_containment() {
        let text = "[system]\nn = 1\nm = 0\ntau = 0.5\nK = 2\n[dynamics]\ng1 = 1\nf1 = 1\n\
                    [domains]\nX = [0,1]\nI0 = [0,1]\n";
        let spec = load_model(text).unwrap();
        let r = reach(&spec, &ReachParams::from_spec(&spec));
        // the set is pushed out of X; either clipping shows or the flow exits
        match r {
            Ok(r) => assert!(!r.domain_ok),
            Err(ReachError::Flow { source: FlowError::DomainExit { .. }, .. }) => {}
            Err(e) => panic!("unexpected {e}"),
        }
    }
}
