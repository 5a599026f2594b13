//! Command-line front end. Every run writes one JSON report (CSV for
//! sweeps) and a one-line summary.
//!
//! Exit codes: 0 certified or holds, 1 usage or specification error,
//! 2 falsified, 3 inconclusive or not applicable.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::certify::{
    band_certificate, conditions::T_CAP, lemma_suite, pue_certificate_with, ray_condition,
    sweep_levels, Band, CertificateStatus, Classification, PueOptions, RayRegime, SweepRow,
    DEFAULT_BAND_LEVELS, MAX_RECORDED_VIOLATIONS, VIOLATION_THRESHOLD,
};
use crate::cones::{is_type2, kappa, Cone, MEMBERSHIP_TOL, TYPE2_MARGIN};
use crate::error::{Error, Result};
use crate::levelset::{LevelSetContext, BOUNDARY_MARGIN, DEGENERATE_RATIO, LEVEL_TOL, R_MAX, UNBOUNDED_T};
use crate::numeric::BISECTION_MAX_ITER;
use crate::symfun::{make_operator, SymmetricOperator};
use crate::transform::{
    certify_thm39, certify_transformed, check_gate, make_transform, BranchOutcome, OperatorExpr,
    TransformSpec,
};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Parser, Debug)]
#[command(name = "ellcert", version, about = "Ellipticity certificates for symmetric operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Level-set certificate at order 1 + kappa_sigma (or --order).
    Certify(RunArgs),
    /// Maximal number of negative entries of a cone member.
    Kappa(RunArgs),
    /// Diagonal level value and infimum of the tangent intercept.
    Tau(RunArgs),
    /// Certificate uniform over a band of levels.
    BandCertify(RunArgs),
    /// Certificate for the transformed operator.
    TransformCertify(RunArgs),
    /// Level-set kappa statements for negative entries and type-2 cones.
    Thm39(RunArgs),
    /// Per-level certificate table over a band.
    Sweep(RunArgs),
    /// Limit conditions along a ray, or the standard hypothesis battery.
    CheckConditions(RunArgs),
    /// Hypotheses and implications on sampled instances.
    LemmaSuite(RunArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum RegimeArg {
    ExceedsAtInfinity,
    BoundedBelowAtInfinity,
    NonnegativeSlopeAtInfinity,
    BoundedBelowAtZero,
    ExceedsSomewhere,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Operator: sum | sigma(k) | sigma_root(k) | quotient(k,l) | log_sigma_n,
    /// or transform(<op>, rho=<r>, scale=<s>).
    #[arg(long)]
    op: Option<String>,
    /// Cone: gamma(k) | positive | halfspace. Defaults to the operator's domain.
    #[arg(long)]
    cone: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<f64>,
    /// `lo,hi`.
    #[arg(long, allow_hyphen_values = true)]
    band: Option<String>,
    #[arg(long, default_value_t = DEFAULT_BAND_LEVELS)]
    levels: usize,
    #[arg(long)]
    order: Option<usize>,
    /// Threshold K of the band certificate.
    #[arg(long, default_value_t = 0.0)]
    k: f64,
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    #[arg(long)]
    scale: Option<f64>,
    /// Check the rho gate before certifying a transform.
    #[arg(long)]
    gate: bool,
    /// Use this whole-cone constant in the rho gate instead of estimating it.
    #[arg(long)]
    theta_gamma: Option<f64>,
    /// Comma-separated ray base point (default: origin).
    #[arg(long, allow_hyphen_values = true)]
    base: Option<String>,
    /// Comma-separated ray direction.
    #[arg(long, allow_hyphen_values = true)]
    direction: Option<String>,
    #[arg(long, value_enum)]
    regime: Option<RegimeArg>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Iteration budget for the intercept search and the closed-form bound.
    #[arg(long, default_value_t = 2_000)]
    budget: usize,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

/// Resolved configuration echoed into every report.
#[derive(Debug, Clone, Serialize)]
struct RunConfig {
    subcommand: &'static str,
    op: Option<String>,
    cone: Option<String>,
    n: usize,
    sigma: Option<f64>,
    band: Option<Band>,
    order: Option<usize>,
    k: f64,
    rho: Option<f64>,
    scale: Option<f64>,
    gate: bool,
    theta_gamma: Option<f64>,
    base: Option<Vec<f64>>,
    direction: Option<Vec<f64>>,
    regime: Option<RegimeArg>,
    samples: usize,
    seed: u64,
    budget: usize,
    output: Option<String>,
    format: Format,
}

/// Status word, exit code and the numbers shown on the summary line.
#[derive(Debug, Default)]
struct Outcome {
    word: &'static str,
    exit: i32,
    order: Option<usize>,
    theta: Option<f64>,
    kappa: Option<usize>,
}

impl Outcome {
    fn from_status(status: CertificateStatus) -> Self {
        let (word, exit) = match status {
            CertificateStatus::Certified => ("CERTIFIED", 0),
            CertificateStatus::Falsified => ("FALSIFIED", 2),
            CertificateStatus::Inconclusive => ("INCONCLUSIVE", 3),
            CertificateStatus::NotApplicable => ("NOT-APPLICABLE", 3),
        };
        Outcome {
            word,
            exit,
            ..Outcome::default()
        }
    }

    fn holds() -> Self {
        Outcome {
            word: "HOLDS",
            exit: 0,
            ..Outcome::default()
        }
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::UnboundedBelow { .. } | Error::NoWitness(_) => 3,
                _ => 1,
            }
        }
    }
}

fn parse_vector(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad {what} entry `{}`", x.trim())))
        })
        .collect::<Result<_>>()?;
    if v.len() != n {
        return Err(Error::Parse(format!("{what} needs {n} entries, got {}", v.len())));
    }
    Ok(v)
}

fn require<T: Copy>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Parse(format!("missing --{flag}")))
}

/// The operator named by `--op`, `--cone` and the transform parameters.
struct ResolvedOperator {
    op: SymmetricOperator,
    canonical: String,
    warnings: Vec<String>,
    transform: Option<TransformSpec>,
}

fn resolve_operator(args: &RunArgs, n: usize) -> Result<ResolvedOperator> {
    let text = args.op.as_deref().ok_or_else(|| Error::Parse("missing --op".into()))?;
    let expr: OperatorExpr = text.parse()?;
    let with_cone = |op: SymmetricOperator| -> Result<SymmetricOperator> {
        match &args.cone {
            Some(c) => op.with_domain(Cone::parse(c, n)?),
            None => Ok(op),
        }
    };
    match expr {
        OperatorExpr::Base(spec) => {
            let op = with_cone(make_operator(spec, n)?)?;
            Ok(ResolvedOperator {
                op,
                canonical: expr.to_string(),
                warnings: Vec::new(),
                transform: None,
            })
        }
        OperatorExpr::Transform { base, rho, scale } => {
            let base_op = with_cone(make_operator(base, n)?)?;
            let scale = scale.unwrap_or(1.0 / (n as f64 - 1.0));
            let spec = TransformSpec::new(base_op, rho, scale);
            let pair = make_transform(&spec, false)?;
            Ok(ResolvedOperator {
                op: pair.f_tilde,
                canonical: OperatorExpr::Transform {
                    base,
                    rho,
                    scale: Some(scale),
                }
                .to_string(),
                warnings: pair.warnings,
                transform: Some(spec),
            })
        }
    }
}

fn tolerances() -> Value {
    json!({
        "r_max": R_MAX,
        "level_tol": LEVEL_TOL,
        "unbounded_below_t": UNBOUNDED_T,
        "degenerate_acceptance": DEGENERATE_RATIO,
        "tau_boundary_margin": BOUNDARY_MARGIN,
        "membership_tol": MEMBERSHIP_TOL,
        "type2_margin": TYPE2_MARGIN,
        "violation_threshold": VIOLATION_THRESHOLD,
        "max_recorded_violations": MAX_RECORDED_VIOLATIONS,
        "ray_probe_cap": T_CAP,
        "bisection_max_iter": BISECTION_MAX_ITER,
    })
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Inconsistency(format!("serialisation: {e}")))
}

fn execute(command: Command) -> Result<i32> {
    let (name, args) = match command {
        Command::Certify(a) => ("certify", a),
        Command::Kappa(a) => ("kappa", a),
        Command::Tau(a) => ("tau", a),
        Command::BandCertify(a) => ("band-certify", a),
        Command::TransformCertify(a) => ("transform-certify", a),
        Command::Thm39(a) => ("thm39", a),
        Command::Sweep(a) => ("sweep", a),
        Command::CheckConditions(a) => ("check-conditions", a),
        Command::LemmaSuite(a) => ("lemma-suite", a),
    };
    if args.format == Format::Csv && name != "sweep" {
        return Err(Error::Parse("--format csv is only available for sweep".into()));
    }
    let n = require(args.n, "n")?;
    if n < 2 {
        return Err(Error::Domain(format!("n = {n} must be at least 2")));
    }
    let band = match &args.band {
        Some(b) => Some(Band::parse(b, args.levels)?),
        None => None,
    };
    let mut config = RunConfig {
        subcommand: name,
        op: None,
        cone: args.cone.clone(),
        n,
        sigma: args.sigma,
        band: band.clone(),
        order: args.order,
        k: args.k,
        rho: args.rho,
        scale: args.scale,
        gate: args.gate,
        theta_gamma: args.theta_gamma,
        base: None,
        direction: None,
        regime: args.regime,
        samples: args.samples,
        seed: args.seed,
        budget: args.budget,
        output: args.output.as_ref().map(|p| p.display().to_string()),
        format: args.format,
    };

    let started = Instant::now();
    let mut csv = None;
    let (results, outcome) = match name {
        "kappa" => {
            let cone = match (&args.cone, &args.op) {
                (Some(c), _) => Cone::parse(c, n)?,
                (None, Some(_)) => resolve_operator(&args, n)?.op.domain().clone(),
                (None, None) => return Err(Error::Parse("kappa needs --cone or --op".into())),
            };
            config.cone = Some(cone.label());
            let k = kappa(&cone, args.budget.min(1_000), args.seed)?;
            let mut out = Outcome::holds();
            out.kappa = Some(k.kappa);
            let results = json!({
                "cone": cone.label(),
                "kappa": to_value(&k)?,
                "type2": is_type2(&cone),
            });
            (results, out)
        }
        _ => {
            let resolved = resolve_operator(&args, n)?;
            config.op = Some(resolved.canonical.clone());
            config.cone = Some(resolved.op.domain().label());
            let mut results = run_operator_command(name, &args, &resolved, band.as_ref(), &mut config)?;
            if !resolved.warnings.is_empty() {
                results.0["warnings"] = to_value(&resolved.warnings)?;
            }
            if name == "sweep" && args.format == Format::Csv {
                csv = results.2.take();
            }
            (results.0, results.1)
        }
    };
    let wall = started.elapsed().as_secs_f64();

    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "config": to_value(&config)?,
        "results": results,
        "tolerances": tolerances(),
        "timing": { "wall_seconds": wall },
    });
    let body = match csv {
        Some(text) => text,
        None => {
            let mut s = to_json_string(&report)?;
            s.push('\n');
            s
        }
    };
    match &args.output {
        Some(path) => write_atomic(path, body.as_bytes())?,
        None => {
            let mut out = io::stdout().lock();
            out.write_all(body.as_bytes())?;
        }
    }
    println!("{}", summary_line(&outcome, args.samples, args.seed));
    Ok(outcome.exit)
}

type CommandResult = (Value, Outcome, Option<String>);

fn pue_options(args: &RunArgs) -> PueOptions {
    PueOptions {
        samples: args.samples,
        seed: args.seed,
        tau_budget: args.budget,
        remark_budget: Some(args.budget),
        ..PueOptions::default()
    }
}

fn run_operator_command(
    name: &str,
    args: &RunArgs,
    resolved: &ResolvedOperator,
    band: Option<&Band>,
    config: &mut RunConfig,
) -> Result<CommandResult> {
    let op = &resolved.op;
    let n = op.arity();
    match name {
        "certify" => {
            let sigma = require(args.sigma, "sigma")?;
            let ctx = LevelSetContext::new(op, sigma, args.seed)?;
            let cert = pue_certificate_with(&ctx, args.order, &pue_options(args))?;
            let mut out = Outcome::from_status(cert.status);
            out.order = Some(cert.order);
            out.theta = Some(cert.theta_empirical);
            let kappa_sigma = if cert.fully_isotropic { Some(0) } else { cert.kappa_used };
            out.kappa = kappa_sigma;
            let results = json!({
                "c_sigma": ctx.c_sigma(),
                "kappa_sigma": kappa_sigma,
                "order": cert.order,
                "theta_empirical": cert.theta_empirical,
                "fully_isotropic": cert.fully_isotropic,
                "certificate": to_value(&cert)?,
            });
            Ok((results, out, None))
        }
        "tau" => {
            let sigma = require(args.sigma, "sigma")?;
            let ctx = LevelSetContext::new(op, sigma, args.seed)?.with_tau(args.budget)?;
            let tau = ctx.tau().expect("tau estimated above");
            let results = json!({
                "c_sigma": ctx.c_sigma(),
                "anchor": ctx.anchor(),
                "tau": to_value(tau)?,
            });
            Ok((results, Outcome::holds(), None))
        }
        "band-certify" => {
            let band = band.ok_or_else(|| Error::Parse("missing --band".into()))?;
            let cert = band_certificate(op, band, args.k, args.samples, args.seed)?;
            let mut out = Outcome::from_status(cert.status);
            out.theta = cert.theta_empirical;
            Ok((json!({ "certificate": to_value(&cert)? }), out, None))
        }
        "sweep" => {
            let band = band.ok_or_else(|| Error::Parse("missing --band".into()))?;
            let rows = sweep_levels(op, band, &pue_options(args));
            let mut out = if rows.iter().any(SweepRow::inconclusive) {
                Outcome::from_status(CertificateStatus::Inconclusive)
            } else if rows.iter().any(|r| r.violations.unwrap_or(0) > 0) {
                Outcome::from_status(CertificateStatus::Falsified)
            } else {
                Outcome::from_status(CertificateStatus::Certified)
            };
            out.theta = rows
                .iter()
                .filter_map(|r| r.theta_empirical)
                .reduce(f64::min);
            let csv = sweep_csv(&rows);
            Ok((
                json!({ "rows": to_value(&rows)?, "warnings": band.placement_warnings(op) }),
                out,
                Some(csv),
            ))
        }
        "transform-certify" => {
            let sigma = require(args.sigma, "sigma")?;
            let spec = match &resolved.transform {
                Some(spec) => spec.clone(),
                None => {
                    let rho = args.rho.unwrap_or(1.0);
                    let scale = args.scale.unwrap_or(1.0 / (n as f64 - 1.0));
                    config.rho = Some(rho);
                    config.scale = Some(scale);
                    TransformSpec::new(op.clone(), rho, scale)
                }
            };
            let mut results = json!({});
            if args.gate {
                let gate = check_gate(&spec, args.theta_gamma, args.samples.min(2_000), args.seed)?;
                results["gate"] = to_value(&gate)?;
                if !gate.passes {
                    return Ok((results, Outcome::from_status(CertificateStatus::NotApplicable), None));
                }
            }
            let tc = certify_transformed(&spec, sigma, args.order, args.samples, args.seed)?;
            let mut out = Outcome::from_status(tc.certificate.status);
            out.order = Some(tc.requested_order);
            out.theta = Some(tc.certificate.theta_empirical);
            results["transform"] = to_value(&tc)?;
            Ok((results, out, None))
        }
        "thm39" => {
            let sigma = require(args.sigma, "sigma")?;
            let report = certify_thm39(op, sigma, args.samples, args.seed)?;
            let branches = [report.branch_negative_entries.outcome, report.branch_type2.outcome];
            let mut out = if branches.contains(&BranchOutcome::Fail) {
                Outcome::from_status(CertificateStatus::Falsified)
            } else if branches.contains(&BranchOutcome::Pass) {
                Outcome::holds()
            } else {
                Outcome::from_status(CertificateStatus::NotApplicable)
            };
            out.kappa = report.kappa_sigma;
            if let Some(c) = &report.certificate {
                out.order = Some(c.order);
                out.theta = Some(c.theta_empirical);
            }
            Ok((json!({ "report": to_value(&report)? }), out, None))
        }
        "check-conditions" => {
            let Some(dir) = &args.direction else {
                let hyps = crate::certify::lemmas::check_hypotheses(op, args.samples.min(2_000), args.seed);
                let statuses: Vec<Classification> = hyps.iter().map(|h| h.status).collect();
                return Ok((
                    json!({ "hypotheses": to_value(&hyps)? }),
                    classification_outcome(&statuses),
                    None,
                ));
            };
            let direction = parse_vector(dir, n, "direction")?;
            let base = match &args.base {
                Some(b) => parse_vector(b, n, "base")?,
                None => vec![0.0; n],
            };
            config.base = Some(base.clone());
            config.direction = Some(direction.clone());
            let regime = match args.regime.unwrap_or(RegimeArg::ExceedsSomewhere) {
                RegimeArg::ExceedsAtInfinity => RayRegime::ExceedsAtInfinity {
                    threshold: require(args.sigma, "sigma")?,
                },
                RegimeArg::ExceedsSomewhere => RayRegime::ExceedsSomewhere {
                    threshold: require(args.sigma, "sigma")?,
                },
                RegimeArg::BoundedBelowAtInfinity => RayRegime::BoundedBelowAtInfinity,
                RegimeArg::NonnegativeSlopeAtInfinity => RayRegime::NonnegativeSlopeAtInfinity,
                RegimeArg::BoundedBelowAtZero => RayRegime::BoundedBelowAtZero,
            };
            let report = ray_condition(op, &base, &direction, regime)?;
            let out = classification_outcome(&[report.classification]);
            Ok((json!({ "condition": to_value(&report)? }), out, None))
        }
        "lemma-suite" => {
            let report = lemma_suite(op, args.samples, args.seed)?;
            let out = if report.hard_errors == 0 {
                Outcome::holds()
            } else {
                Outcome::from_status(CertificateStatus::Falsified)
            };
            Ok((json!({ "suite": to_value(&report)? }), out, None))
        }
        _ => unreachable!("subcommand table covers {name}"),
    }
}

fn classification_outcome(statuses: &[Classification]) -> Outcome {
    if statuses.contains(&Classification::Fails) {
        Outcome::from_status(CertificateStatus::Falsified)
    } else if statuses.contains(&Classification::Inconclusive) {
        Outcome::from_status(CertificateStatus::Inconclusive)
    } else {
        Outcome::holds()
    }
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt_f = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    let opt_u = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("sigma,c_sigma,tau_hat,tau_converged,kappa_sigma,order,theta_empirical,violations\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt_float(r.sigma),
            opt_f(r.c_sigma),
            opt_f(r.tau_hat),
            r.tau_converged.map(|b| b.to_string()).unwrap_or_default(),
            opt_u(r.kappa_sigma),
            opt_u(r.order),
            opt_f(r.theta_empirical),
            opt_u(r.violations),
        ));
    }
    s
}

fn summary_line(o: &Outcome, samples: usize, seed: u64) -> String {
    let dash = || "-".to_string();
    format!(
        "{} order={} theta={} kappa={} samples={samples} seed={seed}",
        o.word,
        o.order.map_or_else(dash, |m| m.to_string()),
        o.theta.map_or_else(dash, fmt_float),
        o.kappa.map_or_else(dash, |k| k.to_string()),
    )
}

/// Writes floats with 17 significant digits.
struct RoundTripFormatter;

impl serde_json::ser::Formatter for RoundTripFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_float(value).as_bytes())
    }
}

fn to_json_string(v: &Value) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, RoundTripFormatter);
    v.serialize(&mut ser)
        .map_err(|e| Error::Inconsistency(format!("serialisation: {e}")))?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Parse(format!("output path {} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
