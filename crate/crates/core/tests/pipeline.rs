use ddereach::interval::IntervalBox;
use ddereach::model::{load_model, ModelSpec};
use ddereach::reach::{reach, ReachParams, ReachResult};
use ddereach::report::to_json;
use ddereach::validate::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EX1: &str = include_str!("../../../models/example1.model");
const EX2: &str = include_str!("../../../models/example2.model");
const EX3: &str = include_str!("../../../models/example3.model");

const ZERO: &str = "
[system]
n = 2
m = 1
tau = 0.5
K = 3
L = 1
[dynamics]
g1 = 0
g2 = 0
f1 = 0
f2 = 0
[domains]
X = [-5,5]x[-5,5]
D = [-1,1]
I0 = [0,1]x[2,3]
[solver]
h = 0.1
";

fn run(text: &str, checkpoints: Option<Vec<f64>>) -> (ModelSpec, ReachResult) {
    let spec = load_model(text).unwrap();
    let mut p = ReachParams::from_spec(&spec);
    if let Some(c) = checkpoints {
        p.checkpoints = c;
    }
    let r = reach(&spec, &p).unwrap();
    (spec, r)
}

#[test]
fn example_one_nominal_trajectory_lies_in_outer_box() {
    let (spec, r) = run(EX1, Some(vec![10.0]));
    let sig = PerturbationSignal::constant(vec![0.0], spec.horizon());
    let tr = simulate(&spec, &[0.2, 0.2], &sig, r.h / 4.0);
    assert!(r.checkpoint(10.0).unwrap().o_full.contains_point(tr.end()));
}

#[test]
fn halving_the_simulation_step_changes_endpoints_little() {
    for text in [EX1, EX2, EX3] {
        let spec = load_model(text).unwrap();
        let h = spec.solver.h.unwrap() / 4.0;
        let sig = sample_perturbation(&spec.d, spec.l, spec.horizon(), 11);
        let x0 = spec.i0.mid();
        let a = simulate(&spec, &x0, &sig, h);
        let b = simulate(&spec, &x0, &sig, h / 2.0);
        let diff = a.end().iter().zip(b.end()).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(diff < 1e-6, "difference {diff}");
        // determinism per (spec, x0, signal)
        assert_eq!(a, simulate(&spec, &x0, &sig, h));
    }
}

#[test]
fn sensitivities_match_finite_differences_on_all_examples() {
    for text in [EX1, EX2, EX3] {
        let spec = load_model(text).unwrap();
        let h = spec.solver.h.unwrap() / 4.0;
        let sig = sample_perturbation(&spec.d, spec.l, spec.horizon(), 5);
        let e = fd_sensitivity_error(&spec, &spec.i0.mid(), &sig, h).unwrap();
        assert!(e <= 1e-3, "relative error {e}");
    }
}

#[test]
fn zero_dynamics_pass_every_check() {
    let (spec, r) = run(ZERO, None);
    for cp in &r.checkpoints {
        assert_eq!(cp.o_full, spec.i0);
    }
    assert!(check_over(&spec, &r, 50, 0).passed);
    assert!(check_boundary_exclusion(&spec, &r, 50, 0).passed);
    let under = check_under(&spec, &r, 3, 0);
    assert!(under.passed && under.points_tested > 0);
}

#[test]
fn shrunk_outer_box_is_caught() {
    let (spec, mut r) = run(EX1, Some(vec![10.0]));
    let cp = &mut r.checkpoints[0];
    cp.o_full = IntervalBox::point(&cp.o_full.mid());
    let rep = check_over(&spec, &r, 50, 0);
    assert!(!rep.passed && !rep.violations.is_empty());
}

#[test]
fn target_outside_outer_box_is_unreachable() {
    let (spec, r) = run(EX1, Some(vec![10.0]));
    let o = &r.checkpoints[0].o_full;
    let outside = vec![o[0].hi() + 0.5, o[1].hi() + 0.5];
    let rep = check_points_reachable(&spec, &r, &[(10.0, outside)], 2, 0);
    assert!(!rep.passed && rep.failures.len() == 2);
}

#[test]
fn inflated_inner_box_is_caught() {
    let (spec, mut r) = run(EX1, Some(vec![10.0]));
    let cp = &mut r.checkpoints[0];
    cp.u = Some(cp.o_full.clone());
    let rep = check_boundary_exclusion(&spec, &r, 200, 0);
    assert!(!rep.passed);
}

#[test]
fn inner_boxes_lie_in_outer_boxes_and_start_at_the_initial_set() {
    for text in [EX1, EX2, EX3] {
        let spec = load_model(text).unwrap();
        let mut p = ReachParams::from_spec(&spec);
        p.checkpoints.insert(0, 0.0);
        let r = reach(&spec, &p).unwrap();
        assert_eq!(r.checkpoints[0].o_full, spec.i0);
        for cp in &r.checkpoints {
            for b in cp.o_boundary.iter().chain([&cp.o_full, &cp.witness]) {
                assert!(b.dims().iter().all(|iv| iv.lo() <= iv.hi()));
            }
            if let Some(u) = &cp.u {
                assert!(u.subset_of(&cp.o_full), "t = {}", cp.t);
            }
        }
    }
}

#[test]
fn reach_is_bit_identical_across_runs() {
    let (_, a) = run(EX2, Some(vec![1.0, 5.0]));
    let (_, b) = run(EX2, Some(vec![1.0, 5.0]));
    assert_eq!(to_json(&a), to_json(&b));
}

fn winding_contains(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[test]
fn boundary_images_enclose_interior_images() {
    let spec = load_model(EX1).unwrap();
    let h = 0.0125;
    let sig = sample_perturbation(&spec.d, spec.l, spec.horizon(), 21);
    let (lo, hi) = (spec.i0.lo(), spec.i0.hi());
    let per_side = 100;
    let mut boundary = Vec::new();
    // counter-clockwise walk around the square
    for side in 0..4 {
        for j in 0..per_side {
            let s = j as f64 / per_side as f64;
            let p = match side {
                0 => [lo[0] + s * (hi[0] - lo[0]), lo[1]],
                1 => [hi[0], lo[1] + s * (hi[1] - lo[1])],
                2 => [hi[0] - s * (hi[0] - lo[0]), hi[1]],
                _ => [lo[0], hi[1] - s * (hi[1] - lo[1])],
            };
            boundary.push(p);
        }
    }
    let image = |p: &[f64]| {
        let e = simulate(&spec, p, &sig, h);
        [e.end()[0], e.end()[1]]
    };
    let poly: Vec<[f64; 2]> = boundary.iter().map(|p| image(p)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        // keep interior samples away from the boundary so the polygon's
        // chord error cannot matter
        let p: Vec<f64> = (0..2).map(|k| rng.random_range(lo[k] + 0.01..hi[k] - 0.01)).collect();
        assert!(winding_contains(&poly, image(&p)), "interior x0 {p:?}");
    }
}
