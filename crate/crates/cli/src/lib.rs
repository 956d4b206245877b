//! Subcommand implementations behind the `ddereach` binary.
//!
//! Every command reads a model file, does its work through `ddereach`, and
//! writes JSON or CSV into the output directory. Exit codes: 0 success or
//! pass, 1 check failure, 2 usage, input or parse error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ddereach::interval::IntervalBox;
use ddereach::model::{check_model, load_model, parse_box, CertificateReport, ModelSpec};
use ddereach::reach::{self, pipe_with_initial, ReachError, ReachParams, ReachResult, SafetyVerdict};
use ddereach::report::{sig17, to_json};
use ddereach::validate::{self, HomeomorphismReport, SampleReport, UnderReport};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ddereach", version, about = "Robust reach sets of perturbed delay differential equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bound the Jacobians and certify the delay.
    CheckTau(CommonArgs),
    /// Compute outer and inner boxes at the checkpoints.
    Reach(CommonArgs),
    /// Run the sampling oracles against a previous `reach` output.
    Validate(CommonArgs),
    /// Decide robust safety against an unsafe box at one checkpoint.
    Safety(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Flow step; must divide tau.
    #[arg(long)]
    pub h: Option<f64>,
    /// Comma-separated checkpoint times; replaces the model's list.
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<f64>>,
    /// Patches per free dimension of each face of I0.
    #[arg(long)]
    pub subdiv: Option<usize>,
    /// Sample count for the over, exclusion and homeomorphism checks.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Perturbation count for the inner-box shooting check.
    #[arg(long, default_value_t = 20)]
    pub under_samples: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Unsafe box such as `[0.15,0.2]x[0.3,0.35]`; defaults to the model's.
    #[arg(long)]
    pub xu: Option<String>,
    /// Safety time; defaults to the model's.
    #[arg(long)]
    pub t: Option<f64>,
    /// Run `reach` even when the delay is not certified; inner boxes are
    /// then suppressed.
    #[arg(long)]
    pub allow_uncertified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubcommandKind {
    CheckTau,
    Reach,
    Validate,
    Safety,
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub subcommand: SubcommandKind,
    pub model_path: PathBuf,
    pub spec: ModelSpec,
    pub out: PathBuf,
    pub reach: ReachParams,
    pub samples: usize,
    pub under_samples: usize,
    pub seed: u64,
    pub xu: Option<IntervalBox>,
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn failure(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_FAIL,
            message: message.into(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

impl RunConfig {
    pub fn resolve(kind: SubcommandKind, args: &CommonArgs) -> CliResult<Self> {
        let text = fs::read_to_string(&args.model)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", args.model.display())))?;
        let spec = load_model(&text).map_err(|e| CliError::usage(format!("{}: {e}", args.model.display())))?;
        let mut reach = ReachParams::from_spec(&spec);
        if let Some(h) = args.h {
            reach.h = h;
        }
        if let Some(c) = &args.checkpoints {
            reach.checkpoints = c.clone();
        }
        if let Some(k) = args.subdiv {
            reach.subdivisions = k;
        }
        reach.allow_uncertified = args.allow_uncertified;
        ddereach::model::steps_per_delay(spec.tau, reach.h).map_err(|e| CliError::usage(e.to_string()))?;
        let xu = match &args.xu {
            Some(s) => Some(parse_box(s).map_err(|e| CliError::usage(format!("--xu: {e}")))?),
            None => spec.safety.as_ref().map(|s| s.xu.clone()),
        };
        let t = args.t.or(spec.safety.as_ref().map(|s| s.t));
        Ok(RunConfig {
            subcommand: kind,
            model_path: args.model.clone(),
            out: args.out.clone(),
            samples: args.samples.unwrap_or(spec.solver.samples),
            under_samples: args.under_samples,
            seed: args.seed.unwrap_or(spec.solver.seed),
            spec,
            reach,
            xu,
            t,
        })
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn box_text(b: &IntervalBox) -> String {
    b.dims()
        .iter()
        .map(|iv| format!("[{}, {}]", sig17(iv.lo()), sig17(iv.hi())))
        .collect::<Vec<_>>()
        .join(" x ")
}

pub struct Outcome<T> {
    pub value: T,
    pub code: i32,
    pub text: String,
}

// --- check-tau --------------------------------------------------------------

pub fn cmd_check_tau(cfg: &RunConfig) -> CliResult<Outcome<CertificateReport>> {
    let rep = check_model(&cfg.spec);
    write_file(&cfg.out, "bounds.json", &to_json(&rep))?;
    let b = &rep.bounds;
    let opt = |v: Option<f64>| v.map_or("inf".to_string(), sig17);
    let mut text = String::new();
    let _ = writeln!(
        text,
        "computed  M' = {}  M = {}  N = {}",
        sig17(rep.computed.m_prime),
        sig17(rep.computed.m),
        sig17(rep.computed.n)
    );
    let _ = writeln!(text, "used      M' = {}  M = {}  N = {}", sig17(b.m_prime), sig17(b.m), sig17(b.n));
    if rep.override_below_computed {
        let _ = writeln!(text, "warning: an override is below the computed sound bound");
    }
    for (i, t) in b.terms.iter().enumerate() {
        let _ = writeln!(text, "term {} = {}", i + 1, opt(*t));
    }
    let _ = writeln!(text, "R = {}  epsilon = {}", b.r_used, b.epsilon_used);
    let _ = writeln!(text, "tau_max = {}", opt(b.tau_max));
    let _ = writeln!(
        text,
        "tau = {} {}",
        rep.tau,
        if rep.certified { "certified" } else { "NOT certified" }
    );
    let code = if rep.certified { EXIT_OK } else { EXIT_FAIL };
    Ok(Outcome { value: rep, code, text })
}

// --- reach ------------------------------------------------------------------

fn map_reach_error(e: ReachError) -> CliError {
    match e {
        ReachError::Flow { .. } => CliError::failure(e.to_string()),
        _ => CliError::usage(e.to_string()),
    }
}

fn checkpoint_csv(cp: &reach::Checkpoint, labels: &[String]) -> String {
    let n = cp.o_full.dim();
    let mut s = String::from("set");
    for i in 1..=n {
        let _ = write!(s, ",x{i}_lo,x{i}_hi");
    }
    s.push('\n');
    let mut row = |name: &str, b: &IntervalBox| {
        s.push_str(name);
        for iv in b.dims() {
            let _ = write!(s, ",{},{}", sig17(iv.lo()), sig17(iv.hi()));
        }
        s.push('\n');
    };
    for (label, b) in labels.iter().zip(&cp.o_boundary) {
        row(label, b);
    }
    row("O", &cp.o_full);
    row("witness", &cp.witness);
    if let Some(u) = &cp.u {
        row("U", u);
    }
    s
}

pub fn cmd_reach(cfg: &RunConfig) -> CliResult<Outcome<ReachResult>> {
    let cert = check_model(&cfg.spec);
    if !cert.certified && !cfg.reach.allow_uncertified {
        return Err(CliError::failure(format!(
            "tau = {} exceeds the certified bound {:?}; pass --allow-uncertified to compute outer sets only",
            cfg.spec.tau, cert.bounds.tau_max
        )));
    }
    let result = reach::reach(&cfg.spec, &cfg.reach).map_err(map_reach_error)?;
    write_file(&cfg.out, "reach.json", &to_json(&result))?;
    let partition = reach::partition_boundary(&cfg.spec.i0, result.subdivisions).map_err(map_reach_error)?;
    for (pipe, face) in result.face_pipes.iter().zip(&partition.faces) {
        write_file(
            &cfg.out,
            &format!("flowpipe_{}.csv", face.label),
            &pipe_with_initial(pipe, &face.patch).to_csv(),
        )?;
    }
    if let Some(w) = &result.witness_pipe {
        let init = IntervalBox::point(&cfg.spec.i0.mid());
        write_file(&cfg.out, "flowpipe_witness.csv", &pipe_with_initial(w, &init).to_csv())?;
    }
    for cp in &result.checkpoints {
        write_file(
            &cfg.out,
            &format!("checkpoint_t{}.csv", cp.t),
            &checkpoint_csv(cp, &result.face_labels),
        )?;
    }
    let mut text = String::new();
    let _ = writeln!(
        text,
        "h = {}  faces = {}  certified = {}  domain_ok = {}  clipped = {}",
        result.h,
        result.face_labels.len(),
        result.certified,
        result.domain_ok,
        result.clipped
    );
    for cp in &result.checkpoints {
        let _ = writeln!(text, "t = {}", cp.t);
        let _ = writeln!(text, "  O = {}", box_text(&cp.o_full));
        match &cp.u {
            Some(u) => {
                let _ = writeln!(text, "  U = {}", box_text(u));
            }
            None => {
                let _ = writeln!(text, "  U = empty ({:?})", cp.u_status);
            }
        }
    }
    Ok(Outcome {
        value: result,
        code: EXIT_OK,
        text,
    })
}

fn read_reach(cfg: &RunConfig) -> CliResult<ReachResult> {
    let path = cfg.out.join("reach.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::usage(format!("missing reach output {}: {e}; run `ddereach reach` first", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

// --- validate ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub samples: usize,
    pub seed: u64,
    pub over: SampleReport,
    /// Absent when the delay is not certified (no inner boxes exist).
    pub under: Option<UnderReport>,
    pub exclusion: SampleReport,
    pub homeomorphism: HomeomorphismReport,
}

pub fn cmd_validate(cfg: &RunConfig) -> CliResult<Outcome<ValidationReport>> {
    let result = read_reach(cfg)?;
    let spec = &cfg.spec;
    // independent seed streams per check
    let over = validate::check_over(spec, &result, cfg.samples, cfg.seed);
    let under = result
        .certified
        .then(|| validate::check_under(spec, &result, cfg.under_samples, cfg.seed.wrapping_add(1)));
    let exclusion = validate::check_boundary_exclusion(spec, &result, cfg.samples, cfg.seed.wrapping_add(2));
    let homeomorphism = validate::check_homeomorphism(spec, cfg.samples, cfg.seed.wrapping_add(3), result.h / 4.0);
    let passed = over.passed && under.as_ref().is_none_or(|u| u.passed) && exclusion.passed && homeomorphism.passed;
    let rep = ValidationReport {
        passed,
        samples: cfg.samples,
        seed: cfg.seed,
        over,
        under,
        exclusion,
        homeomorphism,
    };
    write_file(&cfg.out, "report.json", &to_json(&rep))?;
    let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
    let mut text = String::new();
    let _ = writeln!(
        text,
        "over:          {} ({} samples, {} violations)",
        verdict(rep.over.passed),
        rep.over.samples,
        rep.over.violations.len()
    );
    match &rep.under {
        Some(u) => {
            let _ = writeln!(
                text,
                "under:         {} ({} points x {} perturbations, max residual {:e})",
                verdict(u.passed),
                u.points_tested,
                u.signals,
                u.max_residual
            );
        }
        None => {
            let _ = writeln!(text, "under:         skipped (delay not certified)");
        }
    }
    let _ = writeln!(
        text,
        "exclusion:     {} ({} samples, {} violations)",
        verdict(rep.exclusion.passed),
        rep.exclusion.samples,
        rep.exclusion.violations.len()
    );
    let h = &rep.homeomorphism;
    let _ = writeln!(
        text,
        "homeomorphism: {} (min margin {}, max norm {} <= R={}, max 1/margin {} <= eps={}, fd error {:e})",
        verdict(h.passed),
        h.min_margin,
        h.max_norm,
        h.r,
        h.max_inverse_margin,
        h.epsilon,
        h.fd_max_rel_error
    );
    let code = if passed { EXIT_OK } else { EXIT_FAIL };
    Ok(Outcome { value: rep, code, text })
}

// --- safety -----------------------------------------------------------------

pub fn cmd_safety(cfg: &RunConfig) -> CliResult<Outcome<SafetyVerdict>> {
    let xu = cfg
        .xu
        .as_ref()
        .ok_or_else(|| CliError::usage("no unsafe set: pass --xu or add a [safety] section"))?;
    let t = cfg
        .t
        .ok_or_else(|| CliError::usage("no safety time: pass --t or add a [safety] section"))?;
    if xu.dim() != cfg.spec.n {
        return Err(CliError::usage(format!("Xu has {} dimensions, the model has {}", xu.dim(), cfg.spec.n)));
    }
    let result = read_reach(cfg)?;
    let cp = result
        .checkpoint(t)
        .ok_or_else(|| CliError::usage(format!("t = {t} is not a checkpoint of the reach output")))?;
    let v = reach::safety_verdict(cp, xu);
    write_file(&cfg.out, "safety.json", &to_json(&v))?;
    let text = format!("{:?} at t = {}: {}\n", v.verdict, v.t, v.relation);
    Ok(Outcome {
        value: v,
        code: EXIT_OK,
        text,
    })
}

/// Parse-free entry point used by the binary; returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let (kind, args) = match &cli.command {
        Command::CheckTau(a) => (SubcommandKind::CheckTau, a),
        Command::Reach(a) => (SubcommandKind::Reach, a),
        Command::Validate(a) => (SubcommandKind::Validate, a),
        Command::Safety(a) => (SubcommandKind::Safety, a),
    };
    let outcome = RunConfig::resolve(kind, args).and_then(|cfg| match kind {
        SubcommandKind::CheckTau => cmd_check_tau(&cfg).map(|o| (o.code, o.text)),
        SubcommandKind::Reach => cmd_reach(&cfg).map(|o| (o.code, o.text)),
        SubcommandKind::Validate => cmd_validate(&cfg).map(|o| (o.code, o.text)),
        SubcommandKind::Safety => cmd_safety(&cfg).map(|o| (o.code, o.text)),
    });
    match outcome {
        Ok((code, text)) => {
            print!("{text}");
            code
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
