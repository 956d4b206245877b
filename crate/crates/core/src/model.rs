//! Problem descriptions: the model file format, validation, Jacobian norm
//! bounds and the delay certificate.

use serde::Serialize;
use thiserror::Error;

use crate::expr::{parse, Alphabet, Expr, ExprError, FieldKind, VectorField};
use crate::interval::{Interval, IntervalBox};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: in `{key}`: {source}")]
    Expr {
        line: usize,
        key: String,
        #[source]
        source: ExprError,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ModelError> {
    Err(ModelError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverParams {
    /// Flow step; must divide `tau`. `None` lets the engine choose.
    pub h: Option<f64>,
    pub checkpoints: Vec<f64>,
    /// Patches per nondegenerate dimension of each boundary face.
    pub subdivisions: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            h: None,
            checkpoints: Vec::new(),
            subdivisions: 1,
            samples: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetySpec {
    pub xu: IntervalBox,
    pub t: f64,
}

/// User-supplied replacements for the computed Jacobian bounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BoundOverrides {
    pub m_prime: Option<f64>,
    pub m: Option<f64>,
    pub n: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub n: usize,
    pub m: usize,
    pub g: VectorField,
    pub f: VectorField,
    pub tau: f64,
    pub k: usize,
    pub x: IntervalBox,
    pub d: IntervalBox,
    pub i0: IntervalBox,
    pub l: f64,
    pub r: f64,
    pub epsilon: f64,
    pub overrides: BoundOverrides,
    /// Uniform subdivisions per referenced variable when bounding Jacobians.
    pub jacobian_subdivisions: usize,
    pub solver: SolverParams,
    pub safety: Option<SafetySpec>,
}

impl ModelSpec {
    pub fn horizon(&self) -> f64 {
        self.tau * self.k as f64
    }

    pub fn alphabet(&self) -> Alphabet {
        Alphabet::dde(self.n, self.m)
    }

    /// Default checkpoints: every segment boundary `k*tau`, plus the
    /// requested times, sorted and deduplicated.
    pub fn checkpoint_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = (1..=self.k).map(|j| j as f64 * self.tau).collect();
        ts.extend(self.solver.checkpoints.iter().copied());
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        ts
    }

    /// Re-run all invariant checks; used after programmatic edits.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n == 0 {
            return invalid("n must be at least 1");
        }
        if self.k < 2 {
            return invalid("K must be at least 2");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return invalid("tau must be positive");
        }
        if !(self.l >= 0.0) {
            return invalid("L must be nonnegative");
        }
        if !(self.r > 1.0) {
            return invalid("R must exceed 1");
        }
        if !(self.epsilon > 1.0) {
            return invalid("epsilon must exceed 1");
        }
        for (name, b, dim) in [("X", &self.x, self.n), ("I0", &self.i0, self.n), ("D", &self.d, self.m)] {
            if b.dim() != dim {
                return invalid(format!("{name} has dimension {} but {dim} was declared", b.dim()));
            }
        }
        if !self.i0.subset_of(&self.x) {
            return invalid("I0 must lie inside X");
        }
        if self.g.kind() != FieldKind::PreDelay || self.g.uses_lag() {
            return invalid("g must not reference delayed variables");
        }
        for (name, v) in [
            ("M_prime", self.overrides.m_prime),
            ("M", self.overrides.m),
            ("N", self.overrides.n),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return invalid(format!("{name} override must be a nonnegative number"));
                }
            }
        }
        if self.jacobian_subdivisions == 0 {
            return invalid("jacobian_subdivisions must be at least 1");
        }
        if self.solver.subdivisions == 0 {
            return invalid("subdivisions must be at least 1");
        }
        if let Some(h) = self.solver.h {
            steps_per_delay(self.tau, h)?;
        }
        let horizon = self.horizon();
        for &t in &self.solver.checkpoints {
            if !(0.0..=horizon * (1.0 + 1e-12)).contains(&t) {
                return invalid(format!("checkpoint {t} lies outside [0, K*tau] = [0, {horizon}]"));
            }
        }
        if let Some(s) = &self.safety {
            if s.xu.dim() != self.n {
                return invalid("Xu must have dimension n");
            }
            if !(0.0..=horizon * (1.0 + 1e-12)).contains(&s.t) {
                return invalid("safety time must lie in [0, K*tau]");
            }
        }
        Ok(())
    }
}

/// Number of flow steps per delay interval, or an error when `h` does not
/// divide `tau`.
pub fn steps_per_delay(tau: f64, h: f64) -> Result<usize, ModelError> {
    if !(h > 0.0 && h.is_finite()) {
        return invalid("h must be positive");
    }
    let q = tau / h;
    let k = q.round();
    if k < 1.0 || (q - k).abs() > 1e-9 * k {
        return invalid(format!("h = {h} does not divide tau = {tau}"));
    }
    Ok(k as usize)
}

// --- model file parsing -----------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Section {
    None,
    System,
    Dynamics,
    Domains,
    Certificate,
    Solver,
    Safety,
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

/// Parse and validate a model file.
pub fn load_model(text: &str) -> Result<ModelSpec, ModelError> {
    let mut sections: Vec<(Section, Entry)> = Vec::new();
    let mut current = Section::None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            if !name.contains(',') {
                current = match name.trim() {
                    "system" => Section::System,
                    "dynamics" => Section::Dynamics,
                    "domains" => Section::Domains,
                    "certificate" => Section::Certificate,
                    "solver" => Section::Solver,
                    "safety" => Section::Safety,
                    other => {
                        return Err(ModelError::Syntax {
                            line,
                            msg: format!("unknown section [{other}]"),
                        })
                    }
                };
                continue;
            }
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ModelError::Syntax {
                line,
                msg: "expected `key = value`".into(),
            });
        };
        if current == Section::None {
            return Err(ModelError::Syntax {
                line,
                msg: "entry outside of any section".into(),
            });
        }
        let key = key.trim().to_string();
        if sections.iter().any(|(s, e)| *s == current && e.key == key) {
            return Err(ModelError::Syntax {
                line,
                msg: format!("duplicate key `{key}`"),
            });
        }
        sections.push((
            current,
            Entry {
                line,
                key,
                value: value.trim().to_string(),
            },
        ));
    }

    let get = |sec: Section, key: &str| sections.iter().find(|(s, e)| *s == sec && e.key == key).map(|(_, e)| e);
    let known: &[(Section, &[&str])] = &[
        (Section::System, &["n", "m", "tau", "K", "L"]),
        (Section::Domains, &["X", "D", "I0"]),
        (
            Section::Certificate,
            &["R", "epsilon", "M_prime", "M", "N", "jacobian_subdivisions"],
        ),
        (Section::Solver, &["h", "checkpoints", "subdivisions", "samples", "seed"]),
        (Section::Safety, &["Xu", "t"]),
    ];
    for (s, e) in &sections {
        if *s == Section::Dynamics {
            continue;
        }
        let ok = known.iter().any(|(ks, keys)| ks == s && keys.contains(&e.key.as_str()));
        if !ok {
            return Err(ModelError::Syntax {
                line: e.line,
                msg: format!("unknown key `{}`", e.key),
            });
        }
    }

    let required = |sec: Section, key: &str| {
        get(sec, key).ok_or_else(|| ModelError::Invalid(format!("missing required key `{key}`")))
    };

    let n = parse_uint(required(Section::System, "n")?)?;
    let m = match get(Section::System, "m") {
        Some(e) => parse_uint(e)?,
        None => 0,
    };
    let tau = parse_real(required(Section::System, "tau")?)?;
    let k = parse_uint(required(Section::System, "K")?)?;
    let l = match get(Section::System, "L") {
        Some(e) => parse_real(e)?,
        None => 0.0,
    };

    let alphabet = Alphabet::dde(n, m);
    let mut g_exprs = Vec::with_capacity(n);
    let mut f_exprs = Vec::with_capacity(n);
    for (s, e) in &sections {
        if *s != Section::Dynamics {
            continue;
        }
        let valid = e
            .key
            .strip_prefix(['g', 'f'])
            .and_then(|i| i.parse::<usize>().ok())
            .is_some_and(|i| (1..=n).contains(&i));
        if !valid {
            return Err(ModelError::Syntax {
                line: e.line,
                msg: format!("unknown dynamics key `{}`; expected g1..g{n} or f1..f{n}", e.key),
            });
        }
    }
    for (prefix, out) in [("g", &mut g_exprs), ("f", &mut f_exprs)] {
        for i in 1..=n {
            let key = format!("{prefix}{i}");
            let e = required(Section::Dynamics, &key)?;
            let expr = parse(&e.value, &alphabet).map_err(|source| ModelError::Expr {
                line: e.line,
                key: key.clone(),
                source,
            })?;
            out.push(expr);
        }
    }
    let g = build_field(FieldKind::PreDelay, n, m, g_exprs, &sections)?;
    let f = build_field(FieldKind::Delayed, n, m, f_exprs, &sections)?;

    let x = parse_box_entry(required(Section::Domains, "X")?)?;
    let i0 = parse_box_entry(required(Section::Domains, "I0")?)?;
    let d = match get(Section::Domains, "D") {
        Some(e) => parse_box_entry(e)?,
        None if m == 0 => IntervalBox::new(Vec::new()),
        None => return invalid("missing required key `D`"),
    };

    let opt_real = |sec, key| get(sec, key).map(parse_real).transpose();
    let r = opt_real(Section::Certificate, "R")?.unwrap_or(2.0);
    let epsilon = opt_real(Section::Certificate, "epsilon")?.unwrap_or(2.0);
    let overrides = BoundOverrides {
        m_prime: opt_real(Section::Certificate, "M_prime")?,
        m: opt_real(Section::Certificate, "M")?,
        n: opt_real(Section::Certificate, "N")?,
    };
    let jacobian_subdivisions = match get(Section::Certificate, "jacobian_subdivisions") {
        Some(e) => parse_uint(e)?,
        None => 1,
    };

    let mut solver = SolverParams::default();
    if let Some(e) = get(Section::Solver, "h") {
        solver.h = Some(parse_real(e)?);
    }
    if let Some(e) = get(Section::Solver, "checkpoints") {
        solver.checkpoints = parse_real_list(e)?;
    }
    if let Some(e) = get(Section::Solver, "subdivisions") {
        solver.subdivisions = parse_uint(e)?;
    }
    if let Some(e) = get(Section::Solver, "samples") {
        solver.samples = parse_uint(e)?;
    }
    if let Some(e) = get(Section::Solver, "seed") {
        solver.seed = parse_uint(e)? as u64;
    }

    let safety = match (get(Section::Safety, "Xu"), get(Section::Safety, "t")) {
        (Some(xu), Some(t)) => Some(SafetySpec {
            xu: parse_box_entry(xu)?,
            t: parse_real(t)?,
        }),
        (None, None) => None,
        _ => return invalid("[safety] needs both Xu and t"),
    };

    let spec = ModelSpec {
        n,
        m,
        g,
        f,
        tau,
        k,
        x,
        d,
        i0,
        l,
        r,
        epsilon,
        overrides,
        jacobian_subdivisions,
        solver,
        safety,
    };
    spec.validate()?;
    Ok(spec)
}

fn build_field(
    kind: FieldKind,
    n: usize,
    m: usize,
    exprs: Vec<Expr>,
    sections: &[(Section, Entry)],
) -> Result<VectorField, ModelError> {
    VectorField::new(kind, n, m, exprs).map_err(|source| {
        let (line, key) = match &source {
            ExprError::DelayedVariableInPreDelayField { component, .. } => {
                let key = format!("g{component}");
                let line = sections
                    .iter()
                    .find(|(s, e)| *s == Section::Dynamics && e.key == key)
                    .map_or(0, |(_, e)| e.line);
                (line, key)
            }
            _ => (0, String::new()),
        };
        if matches!(source, ExprError::DelayedVariableInPreDelayField { .. }) {
            ModelError::Invalid(format!("g must not reference delayed variables (line {line}, `{key}`: {source})"))
        } else {
            ModelError::Expr { line, key, source }
        }
    })
}

fn parse_real_str(s: &str, line: usize) -> Result<f64, ModelError> {
    let v: f64 = s.trim().parse().map_err(|_| ModelError::Syntax {
        line,
        msg: format!("expected a number, found `{}`", s.trim()),
    })?;
    if !v.is_finite() {
        return Err(ModelError::Syntax {
            line,
            msg: format!("`{}` is not finite", s.trim()),
        });
    }
    Ok(v)
}

fn parse_real(e: &Entry) -> Result<f64, ModelError> {
    parse_real_str(&e.value, e.line)
}

fn parse_uint(e: &Entry) -> Result<usize, ModelError> {
    e.value.parse().map_err(|_| ModelError::Syntax {
        line: e.line,
        msg: format!("`{}` expects a nonnegative integer, found `{}`", e.key, e.value),
    })
}

fn parse_real_list(e: &Entry) -> Result<Vec<f64>, ModelError> {
    e.value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_real_str(s, e.line))
        .collect()
}

fn parse_box_entry(e: &Entry) -> Result<IntervalBox, ModelError> {
    parse_box(&e.value).map_err(|msg| ModelError::Syntax { line: e.line, msg })
}

/// Parse `[a,b]x[c,d]...`; a factor may carry a repetition `[a,b]^k`.
pub fn parse_box(text: &str) -> Result<IntervalBox, String> {
    let mut dims = Vec::new();
    let mut rest = text.trim();
    loop {
        let Some(after) = rest.strip_prefix('[') else {
            return Err(format!("expected `[` in box `{text}`"));
        };
        let Some(close) = after.find(']') else {
            return Err(format!("unclosed `[` in box `{text}`"));
        };
        let inner = &after[..close];
        let Some((a, b)) = inner.split_once(',') else {
            return Err(format!("expected `[lo,hi]`, found `[{inner}]`"));
        };
        let lo: f64 = a.trim().parse().map_err(|_| format!("bad bound `{}`", a.trim()))?;
        let hi: f64 = b.trim().parse().map_err(|_| format!("bad bound `{}`", b.trim()))?;
        let iv = Interval::try_new(lo, hi).map_err(|_| format!("empty interval [{lo},{hi}]"))?;
        rest = after[close + 1..].trim_start();
        let mut reps = 1;
        if let Some(r) = rest.strip_prefix('^') {
            let r = r.trim_start();
            let end = r.find(|c: char| !c.is_ascii_digit()).unwrap_or(r.len());
            reps = r[..end].parse().map_err(|_| format!("bad repetition in box `{text}`"))?;
            rest = r[end..].trim_start();
        }
        dims.extend(std::iter::repeat_n(iv, reps));
        if rest.is_empty() {
            break;
        }
        rest = rest
            .strip_prefix('x')
            .or_else(|| rest.strip_prefix('×'))
            .or_else(|| rest.strip_prefix('*'))
            .ok_or_else(|| format!("expected `x` between factors in box `{text}`"))?
            .trim_start();
    }
    Ok(IntervalBox::new(dims))
}

// --- bounds and certificate -------------------------------------------------

/// Sound upper bounds on the infinity norms of dg/dx, df/dx and df/dx_tau
/// over X x X x D (and t over the horizon).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobianBounds {
    pub m_prime: f64,
    pub m: f64,
    pub n: f64,
}

pub fn jacobian_bounds(spec: &ModelSpec) -> JacobianBounds {
    let mut env: Vec<Interval> = Vec::with_capacity(2 * spec.n + spec.m + 1);
    env.extend(spec.x.dims().iter().copied());
    env.extend(spec.x.dims().iter().copied());
    env.extend(spec.d.dims().iter().copied());
    env.push(Interval::new(0.0, spec.horizon()));
    let s = spec.jacobian_subdivisions;
    JacobianBounds {
        m_prime: matrix_norm_bound(spec.g.jacobian_x_exprs(), &env, s),
        m: matrix_norm_bound(spec.f.jacobian_x_exprs(), &env, s),
        n: matrix_norm_bound(spec.f.jacobian_lag_exprs(), &env, s),
    }
}

/// Max over a uniform grid of sub-boxes of the interval inf-norm. Only the
/// variables the matrix references are split.
fn matrix_norm_bound(exprs: &[Vec<Expr>], env: &[Interval], subdiv: usize) -> f64 {
    let vars: Vec<usize> = (0..env.len())
        .filter(|&v| exprs.iter().flatten().any(|e| e.references(v)))
        .filter(|&v| !env[v].is_degenerate())
        .collect();
    let subdiv = if subdiv <= 1 { 1 } else { subdiv };
    let cells = (subdiv as u128).checked_pow(vars.len() as u32).unwrap_or(u128::MAX);
    let subdiv = if cells > 1 << 22 { 1 } else { subdiv };
    let mut idx = vec![0usize; vars.len()];
    let mut cell = env.to_vec();
    let mut best = 0.0f64;
    loop {
        for (slot, &v) in vars.iter().enumerate() {
            cell[v] = sub_interval(env[v], idx[slot], subdiv);
        }
        let mut norm = 0.0f64;
        for row in exprs {
            let mut acc = 0.0;
            for e in row {
                acc = crate::interval::add_up(acc, e.eval_interval_unchecked(&cell).mag());
            }
            norm = norm.max(acc);
        }
        best = best.max(norm);
        // odometer increment
        let mut carry = true;
        for i in idx.iter_mut() {
            if !carry {
                break;
            }
            *i += 1;
            carry = *i == subdiv;
            if carry {
                *i = 0;
            }
        }
        if carry {
            return best;
        }
    }
}

/// Piece `j` of `s` equal pieces of `iv`, widened outward to cover rounding.
fn sub_interval(iv: Interval, j: usize, s: usize) -> Interval {
    if s == 1 {
        return iv;
    }
    let w = iv.hi() - iv.lo();
    let a = if j == 0 { iv.lo() } else { (iv.lo() + w * j as f64 / s as f64).next_down() };
    let b = if j + 1 == s {
        iv.hi()
    } else {
        (iv.lo() + w * (j + 1) as f64 / s as f64).next_up()
    };
    Interval::new(a.max(iv.lo()), b.min(iv.hi()))
}

/// The delay bound and its four constituent terms. `None` encodes an
/// unbounded (+inf) value and serialises as `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    #[serde(rename = "M_prime")]
    pub m_prime: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "N")]
    pub n: f64,
    pub terms: [Option<f64>; 4],
    pub tau_max: Option<f64>,
    /// Index into `terms` of the binding (smallest) term.
    pub binding_term: Option<usize>,
    #[serde(rename = "R_used")]
    pub r_used: f64,
    pub epsilon_used: f64,
}

pub fn tau_bound(m_prime: f64, m: f64, n: f64, r: f64, epsilon: f64) -> Result<BoundsReport, ModelError> {
    if !(r > 1.0) {
        return invalid("R must exceed 1");
    }
    if !(epsilon > 1.0) {
        return invalid("epsilon must exceed 1");
    }
    if !(m_prime >= 0.0 && m >= 0.0 && n >= 0.0) {
        return invalid("Jacobian bounds must be nonnegative");
    }
    let ratio = |num: f64, den: f64| if den == 0.0 { None } else { Some(num / den) };
    let mn = m + n * epsilon;
    let terms = [
        ratio(epsilon - 1.0, epsilon * m_prime * r),
        ratio(r - 1.0, m_prime * r),
        ratio(epsilon - 1.0, epsilon * r * mn),
        ratio(r - 1.0, r * mn),
    ];
    let binding_term = (0..4)
        .filter(|&i| terms[i].is_some())
        .min_by(|&a, &b| terms[a].unwrap().total_cmp(&terms[b].unwrap()));
    Ok(BoundsReport {
        m_prime,
        m,
        n,
        terms,
        tau_max: binding_term.and_then(|i| terms[i]),
        binding_term,
        r_used: r,
        epsilon_used: epsilon,
    })
}

/// Grid search maximising the delay bound; ties go to smaller R, then
/// smaller epsilon.
pub fn optimize_tau(
    m_prime: f64,
    m: f64,
    n: f64,
    r_grid: &[f64],
    eps_grid: &[f64],
) -> Result<(f64, f64, Option<f64>), ModelError> {
    if r_grid.is_empty() || eps_grid.is_empty() {
        return invalid("empty grid");
    }
    let mut rs = r_grid.to_vec();
    let mut es = eps_grid.to_vec();
    rs.sort_by(f64::total_cmp);
    es.sort_by(f64::total_cmp);
    let key = |t: Option<f64>| t.unwrap_or(f64::INFINITY);
    let mut best: Option<(f64, f64, Option<f64>)> = None;
    for &r in &rs {
        for &e in &es {
            let t = tau_bound(m_prime, m, n, r, e)?.tau_max;
            if best.is_none_or(|(_, _, bt)| key(t) > key(bt)) {
                best = Some((r, e, t));
            }
        }
    }
    Ok(best.expect("grid nonempty"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub computed: JacobianBounds,
    pub overrides: BoundOverrides,
    /// True when some override is smaller than the computed sound bound.
    pub override_below_computed: bool,
    pub bounds: BoundsReport,
    pub tau: f64,
    pub certified: bool,
}

pub fn check_model(spec: &ModelSpec) -> CertificateReport {
    let computed = jacobian_bounds(spec);
    let o = spec.overrides;
    let mp = o.m_prime.unwrap_or(computed.m_prime);
    let m = o.m.unwrap_or(computed.m);
    let n = o.n.unwrap_or(computed.n);
    // a few ulps of slack: computed bounds carry the outward rounding of
    // decimal literals that the override denotes exactly
    let low = |ov: Option<f64>, c: f64| ov.is_some_and(|v| v < c * (1.0 - 8.0 * f64::EPSILON));
    let below = low(o.m_prime, computed.m_prime) || low(o.m, computed.m) || low(o.n, computed.n);
    let bounds = tau_bound(mp, m, n, spec.r, spec.epsilon).expect("spec validated R and epsilon");
    let certified = bounds.tau_max.is_none_or(|t| spec.tau <= t);
    CertificateReport {
        computed,
        overrides: o,
        override_below_computed: below,
        bounds,
        tau: spec.tau,
        certified,
    }
}
