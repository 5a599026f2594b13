//! The eigenvalue transform `mu_i = scale (sum_j lambda_j - rho lambda_i)`.
//!
//! With `rho = 1` and `scale = 1` this is `mu_i = sum_{j != i} lambda_j`.
//! The transformed operator is `f~(lambda) = f(mu)` on the cone
//! `Gamma~ = {lambda : mu in Gamma}`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::certify::conditions::{ray_condition, Classification, RayRegime};
use crate::certify::lemmas::check_hypotheses;
use crate::certify::{order_ratio, pue_certificate_with, EllipticityCertificate, PueOptions};
use crate::cones::{is_type2, kappa, Cone, ConeOracle};
use crate::error::{Error, Result};
use crate::levelset::{LevelSetContext, SigmaConeOutcome};
use crate::numeric::bisect_predicate;
use crate::symfun::{split_call, CustomOperator, OperatorSpec, SymmetricOperator};

/// Transform parameters together with the operator they act on.
#[derive(Debug, Clone)]
pub struct TransformSpec {
    pub rho: f64,
    pub scale: f64,
    pub base: SymmetricOperator,
}

impl TransformSpec {
    pub fn new(base: SymmetricOperator, rho: f64, scale: f64) -> Self {
        Self { rho, scale, base }
    }

    /// `rho = 1`, `scale = 1/(n-1)`: maps the diagonal to itself.
    pub fn normalized(base: SymmetricOperator) -> Self {
        let n = base.arity() as f64;
        Self::new(base, 1.0, 1.0 / (n - 1.0))
    }

    pub fn base_cone(&self) -> &Cone {
        self.base.domain()
    }

    fn validate(&self) -> Result<()> {
        let n = self.base.arity() as f64;
        if !self.rho.is_finite() || !self.scale.is_finite() {
            return Err(Error::Domain("rho and scale must be finite".into()));
        }
        if !(self.scale > 0.0) {
            return Err(Error::Domain(format!("scale must be positive, got {}", self.scale)));
        }
        if self.rho >= n {
            return Err(Error::Domain(format!(
                "rho = {} must stay below n = {n} so the diagonal maps onto the positive diagonal",
                self.rho
            )));
        }
        Ok(())
    }
}

pub fn mu_map(lambda: &[f64], rho: f64, scale: f64) -> Vec<f64> {
    let total: f64 = lambda.iter().sum();
    lambda.iter().map(|l| scale * (total - rho * l)).collect()
}

/// Inverse of [`mu_map`]; `None` when the map is singular (`rho = 0`).
pub fn mu_preimage(mu: &[f64], rho: f64, scale: f64) -> Option<Vec<f64>> {
    let n = mu.len() as f64;
    if rho == 0.0 || rho == n {
        return None;
    }
    let s = mu.iter().sum::<f64>() / (scale * (n - rho));
    Some(mu.iter().map(|m| (s - m / scale) / rho).collect())
}

struct MuCone {
    base: Cone,
    rho: f64,
    scale: f64,
}

impl ConeOracle for MuCone {
    fn arity(&self) -> usize {
        self.base.arity()
    }

    fn margin(&self, v: &[f64]) -> f64 {
        self.base.margin(&mu_map(v, self.rho, self.scale))
    }

    fn label(&self) -> String {
        format!(
            "transform({}, rho={}, scale={})",
            self.base.label(),
            self.rho,
            self.scale
        )
    }
}

#[derive(Debug, Clone)]
pub struct TransformedPair {
    pub spec: TransformSpec,
    pub f_tilde: SymmetricOperator,
    pub gamma_tilde: Cone,
    pub warnings: Vec<String>,
}

impl TransformedPair {
    pub fn mu(&self, lambda: &[f64]) -> Vec<f64> {
        mu_map(lambda, self.spec.rho, self.spec.scale)
    }

    pub fn preimage(&self, mu: &[f64]) -> Option<Vec<f64>> {
        mu_preimage(mu, self.spec.rho, self.spec.scale)
    }
}

/// Builds `f~` and `Gamma~`. With `gate` set, `rho = 0` is rejected;
/// otherwise it is accepted with a warning.
pub fn make_transform(spec: &TransformSpec, gate: bool) -> Result<TransformedPair> {
    spec.validate()?;
    let mut warnings = Vec::new();
    if spec.rho == 0.0 {
        if gate {
            return Err(Error::Precondition(
                "rho = 0 reduces the transform to a trace shift".into(),
            ));
        }
        warnings.push("rho = 0: f~ depends on the trace only".into());
    }
    let (rho, scale) = (spec.rho, spec.scale);
    let gamma_tilde = Cone::custom(MuCone {
        base: spec.base.domain().clone(),
        rho,
        scale,
    });
    let base = spec.base.clone();
    let base_for_grad = spec.base.clone();
    let name = format!("transform({}, rho={rho}, scale={scale})", spec.base.name());
    let f_tilde = SymmetricOperator::custom(CustomOperator {
        name,
        domain: gamma_tilde.clone(),
        eval: Arc::new(move |x: &[f64]| base.eval(&mu_map(x, rho, scale))),
        grad: Some(Arc::new(move |x: &[f64]| {
            let g = base_for_grad.grad(&mu_map(x, rho, scale))?;
            let total: f64 = g.iter().sum();
            Some(g.iter().map(|gi| scale * (total - rho * gi)).collect())
        })),
        homogeneity_degree: spec.base.homogeneity_degree(),
        sup_on_boundary: if rho != 0.0 { spec.base.sup_on_boundary() } else { None },
    })?;
    Ok(TransformedPair {
        spec: spec.clone(),
        f_tilde,
        gamma_tilde,
        warnings,
    })
}

/// `rho < 1/(1 - kappa theta)` and `rho != 0`; the bound is infinite when
/// `kappa theta >= 1`.
#[derive(Debug, Clone, Serialize)]
pub struct GateReport {
    pub rho: f64,
    pub kappa_gamma: usize,
    pub theta_gamma: f64,
    /// `estimated` from a level sweep or `override`.
    pub theta_source: &'static str,
    #[serde(with = "crate::numeric::ext_real")]
    pub bound: f64,
    pub passes: bool,
}

pub fn gate_bound(kappa_gamma: usize, theta_gamma: f64) -> f64 {
    let d = 1.0 - kappa_gamma as f64 * theta_gamma;
    if d <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / d
    }
}

pub fn gate_passes(rho: f64, kappa_gamma: usize, theta_gamma: f64) -> bool {
    rho != 0.0 && rho < gate_bound(kappa_gamma, theta_gamma)
}

/// Estimates the whole-cone constant as the smallest certificate value over
/// five diagonal levels at order `1 + kappa_gamma`.
pub fn estimate_theta_gamma(base: &SymmetricOperator, samples: usize, seed: u64) -> Result<f64> {
    let n = base.arity();
    let kg = kappa(base.domain(), 200, seed)?.kappa;
    let order = (1 + kg).min(n);
    let mut theta = f64::INFINITY;
    for t in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let Some(sigma) = base.eval(&vec![t; n]) else { continue };
        let ctx = LevelSetContext::new(base, sigma, seed)?;
        let cert = pue_certificate_with(
            &ctx,
            Some(order),
            &PueOptions {
                samples,
                seed,
                ..PueOptions::default()
            },
        )?;
        theta = theta.min(cert.theta_empirical);
    }
    if theta.is_finite() {
        Ok(theta)
    } else {
        Err(Error::Precondition("no level available to estimate theta".into()))
    }
}

pub fn check_gate(
    spec: &TransformSpec,
    theta_override: Option<f64>,
    samples: usize,
    seed: u64,
) -> Result<GateReport> {
    let kg = kappa(spec.base_cone(), 200, seed)?.kappa;
    let (theta, source) = match theta_override {
        Some(t) => (t, "override"),
        None => (estimate_theta_gamma(&spec.base, samples, seed)?, "estimated"),
    };
    Ok(GateReport {
        rho: spec.rho,
        kappa_gamma: kg,
        theta_gamma: theta,
        theta_source: source,
        bound: gate_bound(kg, theta),
        passes: gate_passes(spec.rho, kg, theta),
    })
}

/// Which case of the transformed-operator statement applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformBranch {
    /// Base cone strictly larger than the positive cone: full order `n`.
    GeneralCone,
    /// Base cone is the positive cone: order `n - 1`.
    PositiveCone,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransformCertificate {
    pub branch: TransformBranch,
    pub expected_order: usize,
    pub requested_order: usize,
    pub expected_to_pass: bool,
    pub literal_parameters: bool,
    pub hypotheses: BTreeMap<String, Classification>,
    pub warnings: Vec<String>,
    pub certificate: EllipticityCertificate,
    /// Smallest order-n ratio along [`squeezed_point`], when order n is requested.
    pub degenerate_family: Option<FamilyWitness>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyWitness {
    pub t: f64,
    pub point: Vec<f64>,
    pub ratio: f64,
}

/// The level-set point of `f~` whose image is `(s, t, ..., t)`, with `s <= t`
/// solved from `f(mu) = sigma`. As `t` grows the first gradient component of
/// the base operator dominates, which is what degrades full ellipticity of
/// `f~` on the positive cone.
pub fn squeezed_point(pair: &TransformedPair, sigma: f64, t: f64) -> Option<Vec<f64>> {
    let n = pair.spec.base.arity();
    let mu_at = |s: f64| {
        let mut m = vec![t; n];
        m[0] = s;
        m
    };
    let above = |s: f64| pair.spec.base.eval(&mu_at(s)).is_some_and(|v| v >= sigma);
    if !above(t) {
        return None;
    }
    let mut step = t.abs().max(1.0);
    let mut lo = t - step;
    for _ in 0..200 {
        if !above(lo) {
            break;
        }
        step *= 2.0;
        lo = t - step;
    }
    if above(lo) {
        return None;
    }
    let (_, hi) = bisect_predicate(lo, t, above);
    pair.preimage(&mu_at(hi))
}

/// Minimum order-`m` ratio of `f~` over [`squeezed_point`] at `t = 2^j <= t_max`.
pub fn squeezed_family(pair: &TransformedPair, sigma: f64, m: usize, t_max: f64) -> Option<FamilyWitness> {
    let mut best: Option<FamilyWitness> = None;
    let mut t = 1.0;
    while t <= t_max {
        if let Some(p) = squeezed_point(pair, sigma, t) {
            if let Some(r) = order_ratio(&pair.f_tilde, &p, m) {
                if best.as_ref().is_none_or(|b| r < b.ratio) {
                    best = Some(FamilyWitness { t, point: p, ratio: r });
                }
            }
        }
        t *= 2.0;
    }
    best
}

fn hypothesis_map(op: &SymmetricOperator, names: &[&str], seed: u64) -> BTreeMap<String, Classification> {
    let checks = check_hypotheses(op, 200, seed);
    names
        .iter()
        .map(|name| {
            let status = checks
                .iter()
                .find(|h| h.name == *name)
                .map_or(Classification::Inconclusive, |h| h.status);
            (name.to_string(), status)
        })
        .collect()
}

/// Certifies the transformed operator on its level set at `sigma`, at the
/// order the base cone predicts unless `order` overrides it.
pub fn certify_transformed(
    spec: &TransformSpec,
    sigma: f64,
    order: Option<usize>,
    samples: usize,
    seed: u64,
) -> Result<TransformCertificate> {
    let pair = make_transform(spec, false)?;
    let n = spec.base.arity();
    let base_kappa = kappa(spec.base_cone(), 200, seed)?.kappa;
    let (branch, expected) = if base_kappa == 0 {
        (TransformBranch::PositiveCone, n - 1)
    } else {
        (TransformBranch::GeneralCone, n)
    };
    let requested = order.unwrap_or(expected);
    let hypotheses = hypothesis_map(
        &spec.base,
        &["concave", "exceeds-at-infinity", "elliptic-weak"],
        seed,
    );
    let ctx = LevelSetContext::new(&pair.f_tilde, sigma, seed)?;
    let certificate = pue_certificate_with(
        &ctx,
        Some(requested),
        &PueOptions {
            samples,
            seed,
            ..PueOptions::default()
        },
    )?;
    let mut warnings = pair.warnings.clone();
    if requested > expected {
        warnings.push(format!(
            "order {requested} exceeds the order {expected} guaranteed for this branch"
        ));
    }
    let degenerate_family = (requested == n)
        .then(|| squeezed_family(&pair, sigma, n, 1e4))
        .flatten();
    let literal = spec.rho == 1.0 && (spec.scale - 1.0 / (n as f64 - 1.0)).abs() < 1e-15;
    Ok(TransformCertificate {
        branch,
        expected_order: expected,
        requested_order: requested,
        expected_to_pass: requested <= expected,
        literal_parameters: literal,
        hypotheses,
        warnings,
        certificate,
        degenerate_family,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchOutcome {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchReport {
    pub outcome: BranchOutcome,
    pub detail: String,
}

impl BranchReport {
    fn not_applicable(detail: impl Into<String>) -> Self {
        Self {
            outcome: BranchOutcome::NotApplicable,
            detail: detail.into(),
        }
    }
}

/// Report for the two level-set kappa statements: a level set leaving the
/// closed positive cone forces `kappa_sigma >= 1`, and a type-2 cone whose
/// axis ray crosses the level forces `kappa_sigma = n - 1` with full
/// ellipticity.
#[derive(Debug, Clone, Serialize)]
pub struct KappaBranchesReport {
    pub operator: String,
    pub cone: String,
    pub sigma: f64,
    pub hypotheses: BTreeMap<String, Classification>,
    pub intercept_nonnegative: bool,
    pub fully_isotropic: bool,
    pub kappa_sigma: Option<usize>,
    pub negative_entry_witness: Option<Vec<f64>>,
    pub type2: bool,
    pub axis_ray: Option<Classification>,
    pub branch_negative_entries: BranchReport,
    pub branch_type2: BranchReport,
    pub certificate: Option<EllipticityCertificate>,
}

pub fn certify_thm39(
    op: &SymmetricOperator,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<KappaBranchesReport> {
    let n = op.arity();
    let hypotheses = hypothesis_map(op, &["concave", "elliptic-weak"], seed);
    let ctx = LevelSetContext::new(op, sigma, seed)?.with_tau(2_000)?;
    let pts = ctx.sample_level_set(samples).points;
    let intercept_ok = pts.iter().all(|p| {
        op.grad(p).is_some_and(|g| {
            let s: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
            let scale: f64 = g.iter().zip(p).map(|(a, b)| (a * b).abs()).sum();
            s >= -1e-12 * scale
        })
    });
    let type2 = is_type2(op.domain());
    let mut axis = vec![0.0; n];
    axis[n - 1] = 1.0;
    let axis_ray = ray_condition(op, &vec![0.0; n], &axis, RayRegime::ExceedsSomewhere { threshold: sigma })
        .ok()
        .map(|r| r.classification);

    let mut report = KappaBranchesReport {
        operator: op.name().to_string(),
        cone: op.domain().label(),
        sigma,
        hypotheses: hypotheses.clone(),
        intercept_nonnegative: intercept_ok,
        fully_isotropic: false,
        kappa_sigma: None,
        negative_entry_witness: pts.iter().find(|p| p.iter().any(|x| *x < 0.0)).cloned(),
        type2,
        axis_ray,
        branch_negative_entries: BranchReport::not_applicable("pending"),
        branch_type2: BranchReport::not_applicable("pending"),
        certificate: None,
    };
    let held = hypotheses.values().all(|s| *s == Classification::Holds) && intercept_ok;
    if !held {
        report.branch_negative_entries = BranchReport::not_applicable("hypotheses not established");
        report.branch_type2 = BranchReport::not_applicable("hypotheses not established");
        return Ok(report);
    }
    let sc = match ctx.sigma_cone(200, seed)? {
        SigmaConeOutcome::FullyIsotropic { .. } => {
            report.fully_isotropic = true;
            let msg = "fully isotropic level set: no level-set cone";
            report.branch_negative_entries = BranchReport::not_applicable(msg);
            report.branch_type2 = BranchReport::not_applicable(msg);
            return Ok(report);
        }
        SigmaConeOutcome::Cone(sc) => sc,
    };
    let k = sc.kappa_sigma.kappa;
    report.kappa_sigma = Some(k);
    report.branch_negative_entries = match &report.negative_entry_witness {
        None => BranchReport::not_applicable("no sampled level-set point with a negative entry"),
        Some(w) => BranchReport {
            outcome: if k >= 1 { BranchOutcome::Pass } else { BranchOutcome::Fail },
            detail: format!("witness {w:?}; kappa_sigma = {k}"),
        },
    };
    report.branch_type2 = if !type2 {
        BranchReport::not_applicable("cone is not type 2")
    } else if axis_ray != Some(Classification::Holds) {
        BranchReport::not_applicable("axis ray does not exceed the level")
    } else {
        let cert = pue_certificate_with(
            &ctx,
            Some(n),
            &PueOptions {
                samples,
                seed,
                ..PueOptions::default()
            },
        )?;
        let ok = k == n - 1 && cert.passed();
        let detail = format!(
            "kappa_sigma = {k} (expected {}), order-{n} theta {}",
            n - 1,
            cert.theta_empirical
        );
        report.certificate = Some(cert);
        BranchReport {
            outcome: if ok { BranchOutcome::Pass } else { BranchOutcome::Fail },
            detail,
        }
    };
    Ok(report)
}

/// Full-order certificate for the `rho = 1`, `scale = 1` transform on one
/// level set, after checking the hypotheses that make it hold.
#[derive(Debug, Clone, Serialize)]
pub struct LevelTransformReport {
    pub operator: String,
    pub sigma: f64,
    pub applicable: bool,
    pub reasons: Vec<String>,
    pub hypotheses: BTreeMap<String, Classification>,
    pub certificate: Option<EllipticityCertificate>,
}

pub fn certify_cor312(
    op: &SymmetricOperator,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<LevelTransformReport> {
    let n = op.arity();
    let mut hypotheses = hypothesis_map(op, &["concave", "elliptic-weak"], seed);
    let mut reasons = Vec::new();
    if kappa(op.domain(), 200, seed)?.kappa == 0 {
        reasons.push("base cone is the positive cone".to_string());
    }
    let mut edge = vec![1.0; n];
    edge[n - 1] = 0.0;
    let edge_ray = ray_condition(op, &vec![0.0; n], &edge, RayRegime::ExceedsSomewhere { threshold: sigma })
        .map_or(Classification::Inconclusive, |r| r.classification);
    hypotheses.insert("edge-ray-exceeds-level".into(), edge_ray);
    match LevelSetContext::new(op, sigma, seed) {
        Ok(ctx) => {
            let pts = ctx.sample_level_set(samples.min(2_000)).points;
            let ok = pts.iter().all(|p| {
                op.grad(p).is_some_and(|g| {
                    let s: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                    let scale: f64 = g.iter().zip(p).map(|(a, b)| (a * b).abs()).sum();
                    s >= -1e-12 * scale
                })
            });
            hypotheses.insert("intercept-nonnegative".into(), if ok { Classification::Holds } else { Classification::Fails });
        }
        Err(e) => reasons.push(e.to_string()),
    }
    for (name, status) in &hypotheses {
        if *status != Classification::Holds {
            reasons.push(format!("{name}: {status:?}"));
        }
    }
    if !reasons.is_empty() {
        return Ok(LevelTransformReport {
            operator: op.name().to_string(),
            sigma,
            applicable: false,
            reasons,
            hypotheses,
            certificate: None,
        });
    }
    let pair = make_transform(&TransformSpec::new(op.clone(), 1.0, 1.0), true)?;
    let ctx = LevelSetContext::new(&pair.f_tilde, sigma, seed)?;
    let cert = pue_certificate_with(
        &ctx,
        Some(n),
        &PueOptions {
            samples,
            seed,
            ..PueOptions::default()
        },
    )?;
    Ok(LevelTransformReport {
        operator: op.name().to_string(),
        sigma,
        applicable: true,
        reasons,
        hypotheses,
        certificate: Some(cert),
    })
}

/// An operator description from the command line: a built-in family,
/// optionally wrapped in `transform(<spec>, rho=<real>, scale=<real>)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorExpr {
    Base(OperatorSpec),
    Transform {
        base: OperatorSpec,
        rho: f64,
        scale: Option<f64>,
    },
}

impl fmt::Display for OperatorExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorExpr::Base(s) => write!(f, "{s}"),
            OperatorExpr::Transform { base, rho, scale } => match scale {
                Some(sc) => write!(f, "transform({base}, rho={rho}, scale={sc})"),
                None => write!(f, "transform({base}, rho={rho})"),
            },
        }
    }
}

impl std::str::FromStr for OperatorExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if !t.starts_with("transform") {
            return Ok(OperatorExpr::Base(t.parse()?));
        }
        let (name, args) =
            split_call(t).ok_or_else(|| Error::Parse(format!("malformed transform `{t}`")))?;
        if name != "transform" || args.is_empty() {
            return Err(Error::Parse(format!("malformed transform `{t}`")));
        }
        let base: OperatorSpec = args[0].parse()?;
        let mut rho = None;
        let mut scale = None;
        for arg in &args[1..] {
            let (key, value) = arg
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got `{arg}`")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad number `{}`", value.trim())))?;
            match key.trim() {
                "rho" if rho.is_none() => rho = Some(v),
                "scale" if scale.is_none() => scale = Some(v),
                k => return Err(Error::Parse(format!("unexpected transform parameter `{k}`"))),
            }
        }
        Ok(OperatorExpr::Transform {
            base,
            rho: rho.unwrap_or(1.0),
            scale,
        })
    }
}
