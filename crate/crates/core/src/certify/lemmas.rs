//! A battery of structural hypotheses and the implications that should
//! follow from them, checked on seeded samples.
//!
//! Hypotheses are classified first. An implication is only asserted when
//! every hypothesis it needs holds; a failing implication under holding
//! hypotheses is a hard error.

use rayon::prelude::*;
use serde::Serialize;

use super::conditions::{ray_condition, Classification, RayRegime};
use super::{band_certificate, Band, CertificateStatus};
use crate::error::Result;
use crate::levelset::{c_sigma, LevelSetContext, SigmaConeOutcome};
use crate::symfun::SymmetricOperator;

/// Rays probed per ray-based hypothesis.
const RAY_PROBES: usize = 64;

/// Membership probes per level for the cone-inclusion check.
const INCLUSION_PROBES: usize = 100;

/// Diagonal points whose values serve as test levels.
const LEVEL_DIAGONALS: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub status: Classification,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImplicationOutcome {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImplicationCheck {
    pub name: &'static str,
    pub requires: Vec<&'static str>,
    pub outcome: ImplicationOutcome,
    pub checked: usize,
    pub failures: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub operator: String,
    pub cone: String,
    pub samples: usize,
    pub seed: u64,
    pub hypotheses: Vec<HypothesisCheck>,
    pub implications: Vec<ImplicationCheck>,
    pub hard_errors: usize,
}

impl SuiteReport {
    pub fn hypothesis(&self, name: &str) -> Option<Classification> {
        self.hypotheses.iter().find(|h| h.name == name).map(|h| h.status)
    }

    pub fn implication(&self, name: &str) -> Option<&ImplicationCheck> {
        self.implications.iter().find(|i| i.name == name)
    }
}

struct Tally {
    checked: usize,
    failures: usize,
}

impl Tally {
    fn new() -> Self {
        Tally {
            checked: 0,
            failures: 0,
        }
    }

    fn record(&mut self, ok: bool) {
        self.checked += 1;
        self.failures += usize::from(!ok);
    }

    fn merge(&mut self, other: Tally) {
        self.checked += other.checked;
        self.failures += other.failures;
    }

    fn from_bools(it: impl IntoIterator<Item = bool>) -> Tally {
        let mut t = Tally::new();
        for ok in it {
            t.record(ok);
        }
        t
    }
}

fn aggregate(statuses: impl IntoIterator<Item = Classification>) -> Classification {
    let mut all_hold = true;
    let mut any = false;
    for s in statuses {
        any = true;
        match s {
            Classification::Fails => return Classification::Fails,
            Classification::Inconclusive => all_hold = false,
            Classification::Holds => {}
        }
    }
    if any && all_hold {
        Classification::Holds
    } else {
        Classification::Inconclusive
    }
}

fn status_in(hyps: &[HypothesisCheck], name: &str) -> Classification {
    hyps.iter()
        .find(|h| h.name == name)
        .map_or(Classification::Inconclusive, |h| h.status)
}

fn from_bool(ok: bool) -> Classification {
    if ok {
        Classification::Holds
    } else {
        Classification::Fails
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn abs_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x * y).abs()).sum()
}

struct Sample {
    point: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
}

impl Sample {
    fn grad_sum(&self) -> f64 {
        self.grad.iter().sum()
    }

    fn grad_tol(&self) -> f64 {
        1e-10 * self.grad.iter().map(|g| g.abs()).sum::<f64>()
    }
}

struct Battery {
    members: Vec<Sample>,
    hypotheses: Vec<HypothesisCheck>,
}

/// Classifies every structural hypothesis on `samples` pairs of members of
/// the operator's domain.
pub fn check_hypotheses(op: &SymmetricOperator, samples: usize, seed: u64) -> Vec<HypothesisCheck> {
    hypothesis_battery(op, samples, seed).hypotheses
}

fn hypothesis_battery(op: &SymmetricOperator, samples: usize, seed: u64) -> Battery {
    let cone = op.domain().clone();
    let n = op.arity();
    let members: Vec<Sample> = (0..2 * samples as u64)
        .into_par_iter()
        .filter_map(|i| {
            let p = cone.sample_member(seed, i);
            Some(Sample {
                value: op.eval(&p)?,
                grad: op.grad(&p)?,
                point: p,
            })
        })
        .collect();
    let (first, second) = members.split_at(members.len() / 2);
    let pairs: Vec<(&Sample, &Sample)> = first.iter().zip(second).collect();

    let mut hyps = Vec::new();

    let concave = Tally::from_bools(pairs.iter().map(|(a, b)| {
        let mid: Vec<f64> = a.point.iter().zip(&b.point).map(|(x, y)| 0.5 * (x + y)).collect();
        let tol = 1e-10 * (1.0 + a.value.abs() + b.value.abs());
        op.eval(&mid)
            .is_some_and(|m| m >= 0.5 * (a.value + b.value) - tol)
    }));
    hyps.push(HypothesisCheck {
        name: "concave",
        status: from_bool(concave.failures == 0 && concave.checked > 0),
        detail: format!("{} of {} midpoints below the chord", concave.failures, concave.checked),
    });

    let weak = Tally::from_bools(
        members
            .iter()
            .map(|s| s.grad.iter().all(|g| *g >= -s.grad_tol())),
    );
    hyps.push(HypothesisCheck {
        name: "elliptic-weak",
        status: from_bool(weak.failures == 0),
        detail: format!("{} of {} samples with a negative component", weak.failures, weak.checked),
    });
    let strict = Tally::from_bools(members.iter().map(|s| s.grad.iter().all(|g| *g > 0.0)));
    hyps.push(HypothesisCheck {
        name: "elliptic",
        status: from_bool(strict.failures == 0),
        detail: format!(
            "{} of {} samples with a nonpositive component",
            strict.failures, strict.checked
        ),
    });
    let sum_pos = Tally::from_bools(members.iter().map(|s| s.grad_sum() > 0.0));
    hyps.push(HypothesisCheck {
        name: "gradient-sum-positive",
        status: from_bool(sum_pos.failures == 0),
        detail: format!("{} of {} samples fail", sum_pos.failures, sum_pos.checked),
    });

    let ray_pairs = &pairs[..pairs.len().min(RAY_PROBES)];
    let zero = vec![0.0; n];
    let ray_status = |regime_for: &(dyn Fn(&Sample) -> RayRegime + Sync)| -> Classification {
        let statuses: Vec<Classification> = ray_pairs
            .par_iter()
            .map(|(a, _)| {
                ray_condition(op, &zero, &a.point, regime_for(a))
                    .map_or(Classification::Inconclusive, |r| r.classification)
            })
            .collect();
        aggregate(statuses)
    };
    let exceeds = aggregate(
        ray_pairs
            .par_iter()
            .map(|(a, b)| {
                ray_condition(
                    op,
                    &zero,
                    &a.point,
                    RayRegime::ExceedsAtInfinity { threshold: b.value },
                )
                .map_or(Classification::Inconclusive, |r| r.classification)
            })
            .collect::<Vec<_>>(),
    );
    hyps.push(HypothesisCheck {
        name: "exceeds-at-infinity",
        status: exceeds,
        detail: format!("{} rays against other members' values", ray_pairs.len()),
    });
    let bounded = ray_status(&|_| RayRegime::BoundedBelowAtInfinity);
    hyps.push(HypothesisCheck {
        name: "bounded-below-at-infinity",
        status: bounded,
        detail: format!("{} rays", ray_pairs.len()),
    });
    let slope = ray_status(&|_| RayRegime::NonnegativeSlopeAtInfinity);
    hyps.push(HypothesisCheck {
        name: "nonnegative-slope-at-infinity",
        status: slope,
        detail: format!("{} rays", ray_pairs.len()),
    });
    let at_zero = ray_condition(op, &zero, &vec![1.0; n], RayRegime::BoundedBelowAtZero)
        .map_or(Classification::Inconclusive, |r| r.classification);
    hyps.push(HypothesisCheck {
        name: "bounded-below-at-zero",
        status: at_zero,
        detail: "diagonal ray".into(),
    });
    let (vanishing, vanishing_detail) = boundary_vanishing(op, &members, seed);
    hyps.push(HypothesisCheck {
        name: "positive-vanishing-on-boundary",
        status: vanishing,
        detail: vanishing_detail,
    });

    Battery {
        members,
        hypotheses: hyps,
    }
}

/// Runs every hypothesis and implication on `samples` members of the
/// operator's domain.
pub fn lemma_suite(op: &SymmetricOperator, samples: usize, seed: u64) -> Result<SuiteReport> {
    let cone = op.domain().clone();
    let n = op.arity();
    let Battery {
        members,
        hypotheses: hyps,
    } = hypothesis_battery(op, samples, seed);
    let (first, second) = members.split_at(members.len() / 2);
    let pairs: Vec<(&Sample, &Sample)> = first.iter().zip(second).collect();
    let exceeds = status_in(&hyps, "exceeds-at-infinity");
    let bounded = status_in(&hyps, "bounded-below-at-infinity");
    let slope = status_in(&hyps, "nonnegative-slope-at-infinity");

    let status_of = |name: &str| status_in(&hyps, name);
    let mut implications = Vec::new();
    let mut push = |name: &'static str,
                    requires: Vec<&'static str>,
                    run: &dyn Fn() -> (Tally, String)| {
        let held = requires.iter().all(|r| status_of(r) == Classification::Holds);
        let (outcome, tally, detail) = if held {
            let (t, d) = run();
            let outcome = if t.failures == 0 {
                ImplicationOutcome::Pass
            } else {
                ImplicationOutcome::Fail
            };
            (outcome, t, d)
        } else {
            let missing: Vec<&str> = requires
                .iter()
                .copied()
                .filter(|r| status_of(r) != Classification::Holds)
                .collect();
            (
                ImplicationOutcome::NotApplicable,
                Tally::new(),
                format!("hypotheses not established: {}", missing.join(", ")),
            )
        };
        implications.push(ImplicationCheck {
            name,
            requires,
            outcome,
            checked: tally.checked,
            failures: tally.failures,
            detail,
        });
    };

    push(
        "pairing-positive",
        vec!["concave", "exceeds-at-infinity"],
        &|| {
            let t = Tally::from_bools(pairs.iter().map(|(a, b)| {
                let s = dot(&a.grad, &b.point);
                let sum: Vec<f64> = a.point.iter().zip(&b.point).map(|(x, y)| x + y).collect();
                let grows = op
                    .eval(&sum)
                    .is_some_and(|v| v > a.value - 1e-12 * (1.0 + a.value.abs()));
                s > -1e-12 * abs_dot(&a.grad, &b.point) && grows
            }));
            (t, "sum f_i(lambda) mu_i > 0 and f(lambda + mu) > f(lambda)".into())
        },
    );
    push(
        "gradient-nonnegative",
        vec!["concave", "exceeds-at-infinity"],
        &|| {
            let t = Tally::from_bools(members.iter().map(|s| {
                s.grad.iter().all(|g| *g >= -s.grad_tol()) && s.grad_sum() > 0.0
            }));
            (t, "f_i >= 0 and sum f_i > 0".into())
        },
    );
    let levels = test_levels(op);
    push(
        "cone-inclusion",
        vec![
            "concave",
            "elliptic-weak",
            "gradient-sum-positive",
            "exceeds-at-infinity",
        ],
        &|| cone_inclusion(op, &levels, &members, seed),
    );
    push(
        "level-set-pairing",
        vec!["concave", "elliptic-weak"],
        &|| level_set_pairing(op, &levels, samples, seed),
    );
    push(
        "monotone-along-members",
        vec!["concave", "nonnegative-slope-at-infinity"],
        &|| {
            let mut t = Tally::from_bools(pairs.iter().map(|(a, b)| {
                dot(&a.grad, &b.point) >= -1e-12 * abs_dot(&a.grad, &b.point)
            }));
            t.merge(Tally::from_bools(members.iter().map(|s| {
                s.grad.iter().all(|g| *g >= -s.grad_tol())
                    && dot(&s.grad, &s.point) >= -1e-12 * abs_dot(&s.grad, &s.point)
            })));
            (t, "sum f_i mu_i >= 0, f_i >= 0, sum f_i lambda_i >= 0".into())
        },
    );
    push(
        "ray-conditions-equivalent",
        vec!["concave", "gradient-sum-positive"],
        &|| {
            let statuses = [exceeds, bounded, slope];
            let holds = statuses.iter().filter(|s| **s == Classification::Holds).count();
            let fails = statuses.iter().filter(|s| **s == Classification::Fails).count();
            let mut t = Tally::new();
            t.record(!(holds > 0 && fails > 0));
            if holds == 3 {
                t.merge(Tally::from_bools(members.iter().map(|s| {
                    dot(&s.grad, &s.point) >= -1e-12 * abs_dot(&s.grad, &s.point)
                })));
            }
            (
                t,
                format!("growth/bounded/slope classified {exceeds:?}/{bounded:?}/{slope:?}"),
            )
        },
    );
    push(
        "diagonal-limit-implies-growth",
        vec!["concave", "elliptic", "bounded-below-at-zero"],
        &|| {
            let mut t = Tally::new();
            t.record(exceeds != Classification::Fails);
            (t, format!("growth condition classified {exceeds:?}"))
        },
    );
    push(
        "intercept-positive",
        vec!["concave", "elliptic", "bounded-below-at-zero"],
        &|| {
            let mut t = Tally::from_bools(members.iter().map(|s| dot(&s.grad, &s.point) > 0.0));
            let (bt, bd) = band_positive(op, samples, seed);
            t.merge(bt);
            (t, format!("sum f_i lambda_i > 0; {bd}"))
        },
    );
    push(
        "vanishing-boundary-consequences",
        vec!["concave", "positive-vanishing-on-boundary"],
        &|| {
            let mut t = Tally::from_bools(members.iter().map(|s| {
                s.grad.iter().all(|g| *g >= -s.grad_tol())
                    && dot(&s.grad, &s.point) >= -1e-12 * abs_dot(&s.grad, &s.point)
            }));
            let (bt, bd) = band_positive(op, samples, seed);
            t.merge(bt);
            (t, format!("f_i >= 0, sum f_i lambda_i >= 0; {bd}"))
        },
    );
    push(
        "diagonal-level-and-gradient-sum",
        vec!["concave", "elliptic-weak"],
        &|| {
            let mut t = Tally::new();
            for &sigma in &levels {
                match c_sigma(op, sigma) {
                    Ok(c) => {
                        let v = op.eval(&vec![c; n]);
                        t.record(v.is_some_and(|v| (v - sigma).abs() <= 1e-10 * (1.0 + sigma.abs())));
                    }
                    Err(_) => t.record(false),
                }
                if let Ok(ctx) = LevelSetContext::new(op, sigma, seed) {
                    let pts = ctx.sample_level_set(samples.min(500)).points;
                    t.merge(Tally::from_bools(pts.iter().map(|p| {
                        op.grad(p).is_some_and(|g| g.iter().sum::<f64>() > 0.0)
                    })));
                }
            }
            (t, "f(c_sigma 1) = sigma and sum f_i > 0 on level sets".into())
        },
    );

    let hard_errors = implications
        .iter()
        .filter(|i| i.outcome == ImplicationOutcome::Fail)
        .count();
    Ok(SuiteReport {
        operator: op.name().to_string(),
        cone: cone.label(),
        samples,
        seed,
        hypotheses: hyps,
        implications,
        hard_errors,
    })
}

/// Levels `f(t 1)` above the boundary supremum, when that is known.
fn test_levels(op: &SymmetricOperator) -> Vec<f64> {
    let n = op.arity();
    let floor = op.sup_on_boundary();
    LEVEL_DIAGONALS
        .iter()
        .filter_map(|&t| op.eval(&vec![t; n]))
        .filter(|s| floor.is_some_and(|b| *s > b))
        .collect()
}

/// `f > 0` on members and `f(b + eps 1) -> 0` geometrically as `eps -> 0`
/// from sampled boundary points `b`.
fn boundary_vanishing(op: &SymmetricOperator, members: &[Sample], seed: u64) -> (Classification, String) {
    if members.iter().any(|s| s.value <= 0.0) {
        return (Classification::Fails, "f <= 0 at a sampled member".into());
    }
    let cone = op.domain();
    let statuses: Vec<Classification> = (0..RAY_PROBES as u64)
        .into_par_iter()
        .map(|i| {
            let b = cone.sample_boundary(seed ^ 0x5eed, i);
            let scale = 1.0 + crate::numeric::norm_inf(&b);
            let values: Vec<Option<f64>> = (1..=5)
                .map(|j| {
                    let eps = scale * 10f64.powi(-2 * j);
                    let p: Vec<f64> = b.iter().map(|x| x + eps).collect();
                    op.eval(&p)
                })
                .collect();
            if values.iter().any(|v| v.is_none_or(|v| v <= 0.0)) {
                return Classification::Fails;
            }
            let v: Vec<f64> = values.into_iter().flatten().collect();
            if v.windows(2).all(|w| w[1] <= 0.95 * w[0]) {
                Classification::Holds
            } else {
                Classification::Inconclusive
            }
        })
        .collect();
    let status = aggregate(statuses);
    (status, format!("{RAY_PROBES} boundary approaches"))
}

fn cone_inclusion(
    op: &SymmetricOperator,
    levels: &[f64],
    members: &[Sample],
    seed: u64,
) -> (Tally, String) {
    let mut t = Tally::new();
    let mut notes = Vec::new();
    for &sigma in levels {
        let ctx = match LevelSetContext::new(op, sigma, seed).and_then(|c| c.with_tau(500)) {
            Ok(c) => c,
            Err(e) => {
                notes.push(format!("sigma={sigma}: {e}"));
                t.record(false);
                continue;
            }
        };
        match ctx.sigma_cone(100, seed) {
            Ok(SigmaConeOutcome::Cone(sc)) => {
                let probes = &members[..members.len().min(INCLUSION_PROBES)];
                let oks: Vec<bool> = probes.par_iter().map(|s| sc.cone.contains(&s.point)).collect();
                t.merge(Tally::from_bools(oks));
            }
            Ok(SigmaConeOutcome::FullyIsotropic { .. }) => {
                notes.push(format!("sigma={sigma}: isotropic, no cone to compare"));
            }
            Err(e) => {
                notes.push(format!("sigma={sigma}: {e}"));
                t.record(false);
            }
        }
    }
    let detail = if notes.is_empty() {
        format!("members inside the level-set cone at {} levels", levels.len())
    } else {
        notes.join("; ")
    };
    (t, detail)
}

fn level_set_pairing(
    op: &SymmetricOperator,
    levels: &[f64],
    samples: usize,
    seed: u64,
) -> (Tally, String) {
    let mut t = Tally::new();
    for &sigma in levels {
        let Ok(ctx) = LevelSetContext::new(op, sigma, seed).and_then(|c| c.with_tau(500)) else {
            t.record(false);
            continue;
        };
        let tau = ctx.tau().map_or(0.0, |e| e.value);
        let pts = ctx.sample_level_set(samples.min(500)).points;
        let half = pts.len() / 2;
        let oks: Vec<bool> = (0..half)
            .into_par_iter()
            .filter_map(|i| {
                let g = op.grad(&pts[i])?;
                let mu: Vec<f64> = pts[half + i].iter().map(|x| x - tau).collect();
                Some(dot(&g, &mu) >= -1e-8 * abs_dot(&g, &mu))
            })
            .collect();
        t.merge(Tally::from_bools(oks));
    }
    (t, "sum f_i(lambda) mu_i >= 0 for mu in the level-set slice".into())
}

fn band_positive(op: &SymmetricOperator, samples: usize, seed: u64) -> (Tally, String) {
    let n = op.arity();
    let mut t = Tally::new();
    let (Some(lo), Some(hi)) = (op.eval(&vec![0.5; n]), op.eval(&vec![1.0; n])) else {
        t.record(false);
        return (t, "band endpoints unavailable".into());
    };
    let Ok(band) = Band::new(lo, hi, 3) else {
        t.record(false);
        return (t, "band endpoints out of order".into());
    };
    match band_certificate(op, &band, 0.0, samples.min(300), seed) {
        Ok(c) => {
            let ok = c.vacuous
                || matches!(c.status, CertificateStatus::Certified)
                || c.theta_empirical.is_some_and(|th| th > 0.0) && c.k_hypothesis_holds;
            t.record(ok);
            (
                t,
                format!(
                    "band [{lo}, {hi}] theta {:?}{}",
                    c.theta_empirical,
                    if c.vacuous { " (vacuous)" } else { "" }
                ),
            )
        }
        Err(e) => {
            t.record(false);
            (t, format!("band certificate failed: {e}"))
        }
    }
}
