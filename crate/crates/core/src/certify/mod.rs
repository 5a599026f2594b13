//! Sample-based ellipticity certificates.
//!
//! A certificate records the smallest observed value of
//! `f_(m)(lambda) / sum f_j(lambda)` over seeded level-set samples, where
//! `f_(m)` is the m-th largest gradient component, together with every
//! count, seed, cap and assumption needed to re-run it. Certificates are
//! numerical evidence, not proofs.

pub mod conditions;
pub mod lemmas;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::levelset::{
    t_from_grad, LevelSetContext, SigmaCone, SigmaConeOutcome, TauFiniteness, LEVEL_TOL, R_MAX,
};
use crate::numeric::{nelder_mead, norm_inf, SimplexOptions};
use crate::symfun::{GradientProvenance, SymmetricOperator};

pub use conditions::{ray_condition, Classification, ConditionReport, RayRegime};
pub use lemmas::{check_hypotheses, lemma_suite, HypothesisCheck, ImplicationCheck, ImplicationOutcome, SuiteReport};

/// Ratios at or below this count as violations.
pub const VIOLATION_THRESHOLD: f64 = 1e-12;

/// Violations stored verbatim; the total is always reported.
pub const MAX_RECORDED_VIOLATIONS: usize = 100;

/// Default number of levels in a band.
pub const DEFAULT_BAND_LEVELS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateStatus {
    Certified,
    Falsified,
    Inconclusive,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Level {
    Single { sigma: f64 },
    Band { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    /// Sampler index of the offending point.
    pub index: usize,
    pub point: Vec<f64>,
    pub ratio: f64,
}

/// Evidence for m-uniform ellipticity on a level set.
#[derive(Debug, Clone, Serialize)]
pub struct EllipticityCertificate {
    pub operator: String,
    pub cone: String,
    pub level: Level,
    pub order: usize,
    /// Minimum ratio when no violations occurred, otherwise 0.
    pub theta_empirical: f64,
    #[serde(with = "crate::numeric::ext_real")]
    pub min_ratio: f64,
    pub min_ratio_point: Vec<f64>,
    #[serde(with = "crate::numeric::ext_real::option")]
    pub theta_remark_bound: Option<f64>,
    pub kappa_used: Option<usize>,
    #[serde(with = "crate::numeric::ext_real::option")]
    pub tau_hat: Option<f64>,
    pub tau_converged: Option<bool>,
    pub samples: usize,
    pub attempted: usize,
    pub seed: u64,
    pub violation_count: usize,
    pub violations: Vec<Violation>,
    pub near_boundary_samples: usize,
    pub fully_isotropic: bool,
    pub sampler_degenerate: bool,
    pub gradient: GradientProvenance,
    pub assumption_flags: BTreeMap<String, String>,
    pub status: CertificateStatus,
}

impl EllipticityCertificate {
    pub fn passed(&self) -> bool {
        self.status == CertificateStatus::Certified
    }
}

/// `min_{i < m} f_i / sum f_j` with `lambda` sorted ascending, so that the
/// first m gradient components are the m largest.
pub fn order_ratio(op: &SymmetricOperator, lambda: &[f64], m: usize) -> Option<f64> {
    let (_, g) = op.sorted_gradient(lambda)?;
    ratio_from_grad(&g, m)
}

fn ratio_from_grad(g: &[f64], m: usize) -> Option<f64> {
    let total: f64 = g.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let worst = g[..m].iter().cloned().fold(f64::INFINITY, f64::min);
    Some(worst / total)
}

/// Tuning for [`pue_certificate_with`].
#[derive(Debug, Clone)]
pub struct PueOptions {
    pub samples: usize,
    pub seed: u64,
    pub tau_budget: usize,
    pub kappa_budget: usize,
    /// Also compute the closed-form lower bound (needs `kappa_sigma >= 1`).
    pub remark_budget: Option<usize>,
    /// Samples whose relative cone margin falls below this are counted as
    /// near the boundary, where gradients of quotients blow up.
    pub boundary_margin: f64,
}

impl Default for PueOptions {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 42,
            tau_budget: 2_000,
            kappa_budget: 200,
            remark_budget: None,
            boundary_margin: 1e-6,
        }
    }
}

/// Level-set certificate at order `m`; `None` uses `1 + kappa_sigma`
/// (or `n` when the level set is isotropic).
pub fn pue_certificate(
    ctx: &LevelSetContext,
    m: Option<usize>,
    samples: usize,
    seed: u64,
) -> Result<EllipticityCertificate> {
    pue_certificate_with(
        ctx,
        m,
        &PueOptions {
            samples,
            seed,
            ..PueOptions::default()
        },
    )
}

pub fn pue_certificate_with(
    ctx: &LevelSetContext,
    m: Option<usize>,
    opts: &PueOptions,
) -> Result<EllipticityCertificate> {
    let op = ctx.operator();
    let n = op.arity();
    if let Some(m) = m {
        if m == 0 || m > n {
            return Err(Error::Domain(format!("order {m} outside 1..={n}")));
        }
    }
    let mut flags = BTreeMap::new();
    let need_structure = m.is_none() || opts.remark_budget.is_some();
    let mut kappa_used = None;
    let mut remark = None;
    let mut isotropic = false;
    let mut tau_hat = None;
    let mut tau_converged = None;
    if need_structure {
        let ctx = match ctx.tau() {
            Some(_) => ctx.clone(),
            None => ctx.with_tau(opts.tau_budget)?,
        };
        let tau = ctx.tau().expect("tau estimated above");
        tau_hat = Some(tau.value);
        tau_converged = Some(tau.converged);
        flags.insert("tau_finiteness".into(), finiteness_flag(tau.finiteness).into());
        match ctx.sigma_cone(opts.kappa_budget, opts.seed)? {
            SigmaConeOutcome::FullyIsotropic { .. } => {
                isotropic = true;
                kappa_used = Some(n - 1);
            }
            SigmaConeOutcome::Cone(sc) => {
                kappa_used = Some(sc.kappa_sigma.kappa);
                flags.insert(
                    "kappa_confidence".into(),
                    format!("{:?}", sc.kappa_sigma.confidence).to_lowercase(),
                );
                if let Some(budget) = opts.remark_budget {
                    if sc.kappa_sigma.kappa >= 1 {
                        remark = Some(theta_remark_bound(&sc, budget)?.value);
                    }
                }
            }
        }
    } else {
        flags.insert("tau_finiteness".into(), "not-evaluated".into());
    }
    let order = m.unwrap_or_else(|| if isotropic { n } else { 1 + kappa_used.unwrap_or(0) });

    let sample = ctx.sample_level_set_seeded(opts.samples, opts.seed);
    let cone = op.domain().clone();
    let rows: Vec<Option<(f64, bool)>> = sample
        .points
        .par_iter()
        .map(|p| {
            let r = order_ratio(op, p, order)?;
            let near = cone.margin(p) < opts.boundary_margin * norm_inf(p);
            Some((r, near))
        })
        .collect();

    let mut min_ratio = f64::INFINITY;
    let mut min_point = Vec::new();
    let mut violations = Vec::new();
    let mut violation_count = 0;
    let mut near_boundary = 0;
    let mut evaluated = 0;
    for (i, row) in rows.iter().enumerate() {
        let Some((r, near)) = *row else { continue };
        evaluated += 1;
        near_boundary += usize::from(near);
        if r < min_ratio {
            min_ratio = r;
            min_point = sample.points[i].clone();
        }
        if r <= VIOLATION_THRESHOLD {
            violation_count += 1;
            if violations.len() < MAX_RECORDED_VIOLATIONS {
                violations.push(Violation {
                    index: i,
                    point: sample.points[i].clone(),
                    ratio: r,
                });
            }
        }
    }
    flags.insert(
        "level_concavity".into(),
        superlevel_midpoint_flag(ctx, &sample.points).into(),
    );
    if evaluated < sample.points.len() {
        flags.insert(
            "gradient_sum".into(),
            format!("nonpositive at {} samples", sample.points.len() - evaluated),
        );
    }
    let degenerate = sample.degenerate() || evaluated == 0;
    let status = if violation_count > 0 {
        CertificateStatus::Falsified
    } else if degenerate {
        CertificateStatus::Inconclusive
    } else {
        CertificateStatus::Certified
    };
    Ok(EllipticityCertificate {
        operator: op.name().to_string(),
        cone: op.domain().label(),
        level: Level::Single { sigma: ctx.sigma() },
        order,
        theta_empirical: if violation_count == 0 && evaluated > 0 {
            min_ratio
        } else {
            0.0
        },
        min_ratio,
        min_ratio_point: min_point,
        theta_remark_bound: remark,
        kappa_used,
        tau_hat,
        tau_converged,
        samples: sample.points.len(),
        attempted: sample.attempted,
        seed: opts.seed,
        violation_count,
        violations,
        near_boundary_samples: near_boundary,
        fully_isotropic: isotropic,
        sampler_degenerate: degenerate,
        gradient: op.gradient_provenance(),
        assumption_flags: flags,
        status,
    })
}

fn finiteness_flag(f: TauFiniteness) -> &'static str {
    match f {
        TauFiniteness::Analytic => "analytic",
        TauFiniteness::Assumed => "assumed, not proven",
    }
}

/// Midpoints of level-set samples must stay in the closed superlevel set
/// when f is concave.
fn superlevel_midpoint_flag(ctx: &LevelSetContext, points: &[Vec<f64>]) -> &'static str {
    let tol = ctx.level_tolerance();
    let pairs = points.len() / 2;
    let ok = (0..pairs.min(500)).all(|i| {
        let (a, b) = (&points[2 * i], &points[2 * i + 1]);
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        ctx.operator().eval(&mid).is_some_and(|v| v >= ctx.sigma() - tol)
    });
    if pairs == 0 {
        "not-evaluated"
    } else if ok {
        "sampled-pass"
    } else {
        "sampled-fail"
    }
}

/// A lower bound for the level-set ellipticity constant at order
/// `1 + kappa_sigma`, with the sign pattern realising it.
#[derive(Debug, Clone, Serialize)]
pub struct RemarkBound {
    pub value: f64,
    /// `(a_1, ..., a_n) > 0` for the member `(-a_1, ..., -a_kappa, a_{kappa+1}, ...)`.
    pub alpha: Vec<f64>,
}

/// `(a_1 / n) / (sum_{i > kappa} a_i - sum_{2 <= i <= kappa} a_i)`, or `None`
/// when the denominator is not positive.
pub fn remark_ratio(alpha: &[f64], kappa: usize) -> Option<f64> {
    let n = alpha.len();
    let pos: f64 = alpha[kappa..].iter().sum();
    let neg: f64 = alpha[1..kappa].iter().sum();
    let den = pos - neg;
    (den > 0.0).then(|| alpha[0] / n as f64 / den)
}

fn pattern(alpha: &[f64], kappa: usize) -> Vec<f64> {
    alpha
        .iter()
        .enumerate()
        .map(|(i, a)| if i < kappa { -a } else { *a })
        .collect()
}

/// Orders the negative block descending, as the bound requires.
fn canonical_alpha(mut alpha: Vec<f64>, kappa: usize) -> Vec<f64> {
    alpha[..kappa].sort_by(|a, b| b.total_cmp(a));
    alpha
}

/// Maximises [`remark_ratio`] over sign patterns inside the cone of `sc`.
pub fn theta_remark_bound(sc: &SigmaCone, budget: usize) -> Result<RemarkBound> {
    let kappa = sc.kappa_sigma.kappa;
    let n = sc.cone.arity();
    if kappa == 0 {
        return Err(Error::Precondition(
            "the closed-form bound needs kappa_sigma >= 1".into(),
        ));
    }
    let feasible_ratio = |alpha: &[f64]| -> Option<f64> {
        let alpha = canonical_alpha(alpha.to_vec(), kappa);
        let r = remark_ratio(&alpha, kappa)?;
        sc.cone.contains(&pattern(&alpha, kappa)).then_some(r)
    };

    let grid = crate::cones::alpha_grid();
    let mut seeds: Vec<Vec<f64>> = Vec::new();
    for &a in &grid {
        if kappa == 1 {
            let mut alpha = vec![1.0; n];
            alpha[0] = a;
            seeds.push(alpha);
        } else {
            for &b in grid.iter().filter(|b| **b <= a) {
                let alpha: Vec<f64> = (0..n)
                    .map(|i| match i {
                        0 => a,
                        i if i < kappa => b,
                        _ => 1.0,
                    })
                    .collect();
                seeds.push(alpha);
            }
        }
    }
    let witness: Vec<f64> = sc.kappa_sigma.witness.iter().map(|x| x.abs()).collect();
    seeds.push(canonical_alpha(witness, kappa));

    let scored: Vec<Option<f64>> = seeds.par_iter().map(|a| feasible_ratio(a)).collect();
    let (best_idx, best_val) = scored
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .fold(None, |acc: Option<(usize, f64)>, (i, r)| match acc {
            Some((_, v)) if v >= r => acc,
            _ => Some((i, r)),
        })
        .ok_or_else(|| {
            Error::NoWitness(format!(
                "no admissible sign pattern found although kappa_sigma = {kappa}"
            ))
        })?;

    let limit = R_MAX.ln();
    let to_alpha = |y: &[f64]| -> Vec<f64> { y.iter().map(|t| t.clamp(-limit, limit).exp()).collect() };
    let objective = |y: &[f64]| feasible_ratio(&to_alpha(y)).map_or(f64::INFINITY, |r| -r);
    let y0: Vec<f64> = seeds[best_idx].iter().map(|a| a.ln()).collect();
    let res = nelder_mead(
        objective,
        &y0,
        &vec![0.3; n],
        &SimplexOptions {
            max_iter: budget,
            ftol: 1e-14,
            xtol: 1e-12,
        },
        |_| false,
    );
    let (value, alpha) = if -res.fx > best_val {
        (-res.fx, canonical_alpha(to_alpha(&res.x), kappa))
    } else {
        (best_val, canonical_alpha(seeds[best_idx].clone(), kappa))
    };
    Ok(RemarkBound { value, alpha })
}

#[derive(Debug, Clone, Serialize)]
pub struct PointCheckReport {
    pub applicable: bool,
    pub reason: Option<String>,
    pub coefficient: Option<f64>,
    pub checked: usize,
    pub violation_count: usize,
    pub violations: Vec<Violation>,
    pub all_pass: bool,
}

impl PointCheckReport {
    fn not_applicable(reason: impl Into<String>) -> Self {
        Self {
            applicable: false,
            reason: Some(reason.into()),
            coefficient: None,
            checked: 0,
            violation_count: 0,
            violations: Vec::new(),
            all_pass: true,
        }
    }
}

/// Checks `f_{1+kappa} >= a_1 / (sum_{i>kappa} a_i - sum_{2<=i<=kappa} a_i) f_1`
/// pointwise on level-set samples, for a given member pattern `alpha`.
pub fn prop22_check(
    outcome: &SigmaConeOutcome,
    alpha: &[f64],
    samples: usize,
    seed: u64,
) -> Result<PointCheckReport> {
    let sc = match outcome {
        SigmaConeOutcome::FullyIsotropic { .. } => {
            return Ok(PointCheckReport::not_applicable(
                "fully isotropic level set, kappa_sigma = 0 path",
            ))
        }
        SigmaConeOutcome::Cone(sc) => sc,
    };
    let kappa = sc.kappa_sigma.kappa;
    let n = sc.cone.arity();
    if kappa == 0 {
        return Ok(PointCheckReport::not_applicable("kappa_sigma = 0"));
    }
    if alpha.len() != n || alpha.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Precondition(format!(
            "alpha must have {n} positive entries"
        )));
    }
    if alpha[..kappa].windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Precondition(
            "the negative block of alpha must be non-increasing".into(),
        ));
    }
    let pos: f64 = alpha[kappa..].iter().sum();
    let neg: f64 = alpha[1..kappa].iter().sum();
    if !(pos - neg > 0.0) {
        return Err(Error::Precondition(format!(
            "denominator {} is not positive",
            pos - neg
        )));
    }
    if !sc.cone.contains(&pattern(alpha, kappa)) {
        return Err(Error::Precondition(
            "the sign pattern of alpha is not a member of the level-set cone".into(),
        ));
    }
    let coef = alpha[0] / (pos - neg);
    let ctx = &sc.context;
    let sample = ctx.sample_level_set_seeded(samples, seed);
    let op = ctx.operator();
    let results: Vec<Option<f64>> = sample
        .points
        .par_iter()
        .map(|p| {
            let (_, g) = op.sorted_gradient(p)?;
            let total: f64 = g.iter().sum();
            Some(g[kappa] - coef * g[0] + 1e-9 * total)
        })
        .collect();
    let mut report = PointCheckReport {
        applicable: true,
        reason: None,
        coefficient: Some(coef),
        checked: 0,
        violation_count: 0,
        violations: Vec::new(),
        all_pass: true,
    };
    for (i, r) in results.iter().enumerate() {
        let Some(slack) = *r else { continue };
        report.checked += 1;
        if slack < 0.0 {
            report.violation_count += 1;
            if report.violations.len() < MAX_RECORDED_VIOLATIONS {
                report.violations.push(Violation {
                    index: i,
                    point: sample.points[i].clone(),
                    ratio: slack,
                });
            }
        }
    }
    report.all_pass = report.violation_count == 0;
    Ok(report)
}

/// Checks `f_i >= theta sum f_j` at every index with `lambda_i <= tau`,
/// using the closed-form lower bound as theta.
pub fn prop26_check(
    ctx: &LevelSetContext,
    samples: usize,
    seed: u64,
    budget: usize,
) -> Result<PointCheckReport> {
    let ctx = match ctx.tau() {
        Some(_) => ctx.clone(),
        None => match ctx.with_tau(budget) {
            Ok(c) => c,
            Err(Error::UnboundedBelow { observed }) => {
                return Ok(PointCheckReport::not_applicable(format!(
                    "tangent intercept unbounded below (observed {observed})"
                )))
            }
            Err(e) => return Err(e),
        },
    };
    let sc = match ctx.sigma_cone(200, seed)? {
        SigmaConeOutcome::FullyIsotropic { .. } => {
            let mut r = PointCheckReport::not_applicable("fully isotropic level set");
            r.reason = Some("fully isotropic level set: holds trivially".into());
            return Ok(r);
        }
        SigmaConeOutcome::Cone(sc) => sc,
    };
    if sc.kappa_sigma.kappa == 0 {
        return Ok(PointCheckReport::not_applicable("kappa_sigma = 0"));
    }
    let theta = theta_remark_bound(&sc, budget)?.value;
    let tau = sc.tau;
    let op = ctx.operator();
    let sample = ctx.sample_level_set_seeded(samples, seed);
    let results: Vec<Option<f64>> = sample
        .points
        .par_iter()
        .map(|p| {
            let (s, g) = op.sorted_gradient(p)?;
            let total: f64 = g.iter().sum();
            let worst = s
                .iter()
                .zip(&g)
                .filter(|(l, _)| **l <= tau)
                .map(|(_, gi)| gi - theta * total + 1e-9 * total)
                .fold(f64::INFINITY, f64::min);
            Some(worst)
        })
        .collect();
    let mut report = PointCheckReport {
        applicable: true,
        reason: None,
        coefficient: Some(theta),
        checked: 0,
        violation_count: 0,
        violations: Vec::new(),
        all_pass: true,
    };
    for (i, r) in results.iter().enumerate() {
        let Some(slack) = *r else { continue };
        if slack == f64::INFINITY {
            continue;
        }
        report.checked += 1;
        if slack < 0.0 {
            report.violation_count += 1;
            if report.violations.len() < MAX_RECORDED_VIOLATIONS {
                report.violations.push(Violation {
                    index: i,
                    point: sample.points[i].clone(),
                    ratio: slack,
                });
            }
        }
    }
    report.all_pass = report.violation_count == 0;
    Ok(report)
}

/// A closed range of levels `[lo, hi]` with its sampling grid.
#[derive(Debug, Clone, Serialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub levels: Vec<f64>,
}

impl Band {
    /// `count` levels, geometric when `lo > 0` and uniform otherwise.
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Band> {
        if !(lo.is_finite() && hi.is_finite()) || !(lo < hi) {
            return Err(Error::Precondition(format!(
                "band needs finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        if count < 2 {
            return Err(Error::Precondition("a band needs at least 2 levels".into()));
        }
        let levels = (0..count)
            .map(|i| {
                let s = i as f64 / (count - 1) as f64;
                if i + 1 == count {
                    hi
                } else if lo > 0.0 {
                    lo * (hi / lo).powf(s)
                } else {
                    lo + s * (hi - lo)
                }
            })
            .collect();
        Ok(Band { lo, hi, levels })
    }

    /// Parses `lo,hi` or `[lo,hi]`.
    pub fn parse(s: &str, count: usize) -> Result<Band> {
        let t = s.trim().trim_start_matches('[').trim_end_matches(']');
        let parts: Vec<&str> = t.split(',').map(str::trim).collect();
        let [lo, hi] = parts.as_slice() else {
            return Err(Error::Parse(format!("band `{s}` is not `lo,hi`")));
        };
        let parse = |x: &str| {
            x.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad band endpoint `{x}`")))
        };
        Band::new(parse(lo)?, parse(hi)?, count)
    }

    /// Problems with the band's placement relative to the operator's range,
    /// as far as they can be probed.
    pub fn placement_warnings(&self, op: &SymmetricOperator) -> Vec<String> {
        let mut out = Vec::new();
        match op.sup_on_boundary() {
            Some(b) if self.lo <= b => out.push(format!(
                "lower end {} is not above the boundary supremum {b}",
                self.lo
            )),
            None => out.push("boundary supremum unknown; lower end unchecked".into()),
            _ => {}
        }
        if self.hi >= op.sup_on_diagonal() {
            out.push(format!(
                "upper end {} is not below the supremum {}",
                self.hi,
                op.sup_on_diagonal()
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BandLevel {
    pub sigma: f64,
    pub samples: usize,
    #[serde(with = "crate::numeric::ext_real::option")]
    pub k_best: Option<f64>,
    #[serde(with = "crate::numeric::ext_real::option")]
    pub theta_empirical: Option<f64>,
    #[serde(with = "crate::numeric::ext_real::option")]
    pub sum_grad_floor: Option<f64>,
    pub tested_indices: usize,
    pub error: Option<String>,
}

/// Evidence for `f_i >= theta (1 + sum f_j)` whenever `lambda_i <= -K`,
/// uniformly over a band of levels.
#[derive(Debug, Clone, Serialize)]
pub struct BandCertificate {
    pub operator: String,
    pub cone: String,
    pub level: Level,
    pub k: f64,
    pub k_best: f64,
    pub k_hypothesis_holds: bool,
    #[serde(with = "crate::numeric::ext_real::option")]
    pub theta_empirical: Option<f64>,
    #[serde(with = "crate::numeric::ext_real")]
    pub sum_grad_floor: f64,
    pub vacuous: bool,
    pub samples: usize,
    pub seed: u64,
    pub levels: Vec<BandLevel>,
    pub warnings: Vec<String>,
    pub gradient: GradientProvenance,
    pub status: CertificateStatus,
}

/// Certificate over every level of `band` with threshold `K`. The
/// hypothesis `sum f_i lambda_i >= -K sum f_i` is checked first through
/// `K_best = max(0, -min t_lambda)`.
pub fn band_certificate(
    op: &SymmetricOperator,
    band: &Band,
    k: f64,
    samples: usize,
    seed: u64,
) -> Result<BandCertificate> {
    if !(k >= 0.0) {
        return Err(Error::Precondition(format!("K must be nonnegative, got {k}")));
    }
    let mut levels = Vec::new();
    let mut total_samples = 0;
    for &sigma in &band.levels {
        let row = match LevelSetContext::new(op, sigma, seed) {
            Err(e) => BandLevel {
                sigma,
                samples: 0,
                k_best: None,
                theta_empirical: None,
                sum_grad_floor: None,
                tested_indices: 0,
                error: Some(e.to_string()),
            },
            Ok(ctx) => band_level(&ctx, k, samples, seed),
        };
        total_samples += row.samples;
        levels.push(row);
    }
    let failed_level = levels.iter().any(|l| l.error.is_some());
    let k_best = levels
        .iter()
        .filter_map(|l| l.k_best)
        .fold(0.0f64, f64::max);
    let k_holds = k_best <= k + 1e-6;
    let theta = levels
        .iter()
        .filter_map(|l| l.theta_empirical)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))));
    let floor = levels
        .iter()
        .filter_map(|l| l.sum_grad_floor)
        .fold(f64::INFINITY, f64::min);
    let vacuous = theta.is_none();
    let status = if failed_level || !k_holds || vacuous {
        CertificateStatus::Inconclusive
    } else if theta.is_some_and(|t| t <= VIOLATION_THRESHOLD) || !(floor > 0.0) {
        CertificateStatus::Falsified
    } else {
        CertificateStatus::Certified
    };
    Ok(BandCertificate {
        operator: op.name().to_string(),
        cone: op.domain().label(),
        level: Level::Band {
            lo: band.lo,
            hi: band.hi,
        },
        k,
        k_best,
        k_hypothesis_holds: k_holds,
        theta_empirical: theta,
        sum_grad_floor: floor,
        vacuous,
        samples: total_samples,
        seed,
        levels,
        warnings: band.placement_warnings(op),
        gradient: op.gradient_provenance(),
        status,
    })
}

fn band_level(ctx: &LevelSetContext, k: f64, samples: usize, seed: u64) -> BandLevel {
    let op = ctx.operator();
    let sample = ctx.sample_level_set_seeded(samples, seed);
    // per point: (t_lambda, sum f, min ratio over indices lambda_i <= -K, count)
    let rows: Vec<Option<(f64, f64, f64, usize)>> = sample
        .points
        .par_iter()
        .map(|p| {
            let g = op.grad(p)?;
            let total: f64 = g.iter().sum();
            let t = t_from_grad(p, &g).ok()?;
            let (worst, count) = p
                .iter()
                .zip(&g)
                .filter(|(l, _)| **l <= -k)
                .fold((f64::INFINITY, 0), |(w, c), (_, gi)| {
                    (w.min(gi / (1.0 + total)), c + 1)
                });
            Some((t, total, worst, count))
        })
        .collect();
    let mut t_min = f64::INFINITY;
    let mut floor = f64::INFINITY;
    let mut theta = f64::INFINITY;
    let mut tested = 0;
    for (t, total, worst, count) in rows.into_iter().flatten() {
        t_min = t_min.min(t);
        floor = floor.min(total);
        theta = theta.min(worst);
        tested += count;
    }
    BandLevel {
        sigma: ctx.sigma(),
        samples: sample.points.len(),
        k_best: t_min.is_finite().then(|| (-t_min).max(0.0)),
        theta_empirical: (tested > 0).then_some(theta),
        sum_grad_floor: floor.is_finite().then_some(floor),
        tested_indices: tested,
        error: sample
            .degenerate()
            .then(|| "sampler acceptance below 1%".to_string()),
    }
}

/// Level-sweep row: one certificate summary per level.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub sigma: f64,
    #[serde(with = "crate::numeric::ext_real::option")]
    pub c_sigma: Option<f64>,
    #[serde(with = "crate::numeric::ext_real::option")]
    pub tau_hat: Option<f64>,
    pub tau_converged: Option<bool>,
    pub kappa_sigma: Option<usize>,
    pub order: Option<usize>,
    #[serde(with = "crate::numeric::ext_real::option")]
    pub theta_empirical: Option<f64>,
    pub violations: Option<usize>,
    pub fully_isotropic: bool,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn inconclusive(&self) -> bool {
        self.error.is_some()
    }
}

/// Certifies each level of `band` at its own order `1 + kappa_sigma`.
pub fn sweep_levels(op: &SymmetricOperator, band: &Band, opts: &PueOptions) -> Vec<SweepRow> {
    band.levels
        .iter()
        .map(|&sigma| {
            let empty = |e: String| SweepRow {
                sigma,
                c_sigma: None,
                tau_hat: None,
                tau_converged: None,
                kappa_sigma: None,
                order: None,
                theta_empirical: None,
                violations: None,
                fully_isotropic: false,
                error: Some(e),
            };
            let ctx = match LevelSetContext::new(op, sigma, opts.seed) {
                Ok(c) => c,
                Err(e) => return empty(e.to_string()),
            };
            match pue_certificate_with(&ctx, None, opts) {
                Err(e) => {
                    let mut row = empty(e.to_string());
                    row.c_sigma = Some(ctx.c_sigma());
                    row
                }
                Ok(cert) => SweepRow {
                    sigma,
                    c_sigma: Some(ctx.c_sigma()),
                    tau_hat: cert.tau_hat,
                    tau_converged: cert.tau_converged,
                    kappa_sigma: if cert.fully_isotropic { Some(0) } else { cert.kappa_used },
                    order: Some(cert.order),
                    theta_empirical: Some(cert.theta_empirical),
                    violations: Some(cert.violation_count),
                    fully_isotropic: cert.fully_isotropic,
                    error: cert
                        .sampler_degenerate
                        .then(|| "sampler acceptance below 1%".to_string()),
                },
            }
        })
        .collect()
}

/// Whether `p` is inside the domain and on the context's level set.
pub fn on_level_set(ctx: &LevelSetContext, p: &[f64]) -> bool {
    ctx.operator()
        .eval(p)
        .is_some_and(|v| (v - ctx.sigma()).abs() <= LEVEL_TOL * (1.0 + ctx.sigma().abs()))
}
