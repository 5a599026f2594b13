//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero on any failure.

mod common;

use std::time::{Duration, Instant};

use serde_json::json;

use ellcert::certify::{
    band_certificate, lemma_suite, order_ratio, pue_certificate_with, Band, ImplicationOutcome,
    PueOptions,
};
use ellcert::cones::{kappa, Cone, KappaConfidence};
use ellcert::levelset::{c_sigma, LevelSetContext};
use ellcert::symfun::{make_operator, OperatorSpec, SymmetricOperator};
use ellcert::transform::{certify_transformed, make_transform, TransformBranch, TransformSpec};

use common::*;

const SEED: u64 = 42;

struct Outcome {
    pass: bool,
    detail: String,
    /// Canonical record of every number the criterion produced.
    report: String,
}

fn outcome(failures: Vec<String>, summary: String, report: serde_json::Value) -> Outcome {
    let pass = failures.is_empty();
    let detail = if pass {
        summary
    } else {
        format!("{summary}; {}", failures.join("; "))
    };
    Outcome {
        pass,
        detail,
        report: report.to_string(),
    }
}

fn opts(samples: usize) -> PueOptions {
    PueOptions {
        samples,
        seed: SEED,
        remark_budget: Some(2_000),
        ..PueOptions::default()
    }
}

fn root(k: usize, n: usize) -> SymmetricOperator {
    make_operator(OperatorSpec::SigmaRoot(k), n).unwrap()
}

fn garding_kappa_table() -> Outcome {
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for n in 2..=6 {
        for k in 1..=n {
            let cone = Cone::garding(n, k).unwrap();
            let found = kappa(&cone, 200, SEED).unwrap();
            let brute = brute_kappa_garding(n, k);
            if found.kappa != n - k || brute != n - k {
                failures.push(format!("n={n} k={k}: search {} brute {brute}", found.kappa));
            }
            if !cone.contains(&found.witness) || found.confidence != KappaConfidence::Exact {
                failures.push(format!("n={n} k={k}: witness or confidence wrong"));
            }
            rows.push(json!([n, k, found.kappa, brute, found.witness]));
        }
    }
    outcome(failures, "20 cones, search and brute force agree on n-k".into(), json!(rows))
}

fn lin_trudinger_configs() -> Vec<(usize, usize)> {
    [3, 4, 5]
        .iter()
        .flat_map(|&n| (2..=n).map(move |k| (n, k)))
        .collect()
}

fn lin_trudinger_order() -> Outcome {
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    let mut worst_theta = f64::INFINITY;
    for (n, k) in lin_trudinger_configs() {
        let op = root(k, n);
        let ctx = LevelSetContext::new(&op, 1.0, SEED).unwrap();
        let m = n - k + 1;
        let cert = pue_certificate_with(&ctx, Some(m), &opts(10_000)).unwrap();
        worst_theta = worst_theta.min(cert.theta_empirical);
        if !cert.passed() || cert.theta_empirical < 1e-2 || cert.samples != 10_000 {
            failures.push(format!(
                "n={n} k={k} order {m}: status {:?} theta {}",
                cert.status, cert.theta_empirical
            ));
        }
        let above = pue_certificate_with(&ctx, Some(m + 1), &opts(10_000)).unwrap();
        let mut family_min = f64::INFINITY;
        let mut t = 1.0;
        while t <= 1e4 {
            let p = lin_trudinger_family(n, k, 1.0, t);
            if let Some(r) = order_ratio(&op, &p, m + 1) {
                family_min = family_min.min(r);
            }
            t *= 2.0;
        }
        let driven = above.min_ratio.min(family_min);
        if !(driven < 1e-2) {
            failures.push(format!("n={n} k={k} order {}: min ratio {driven}", m + 1));
        }
        rows.push(json!({
            "n": n, "k": k,
            "certificate": cert,
            "next_order_sampled": above.min_ratio,
            "next_order_family": family_min,
        }));
    }
    outcome(
        failures,
        format!("9 configurations, smallest theta {worst_theta:.4}"),
        json!(rows),
    )
}

fn level_set_geometry() -> Outcome {
    let mut failures = Vec::new();
    let mut report = Vec::new();
    let exact = [
        (make_operator(OperatorSpec::Sum, 3).unwrap(), 6.0, 2.0),
        (root(2, 3), 3f64.sqrt(), 1.0),
        (make_operator(OperatorSpec::LogSigmaN, 2).unwrap(), 0.0, 1.0),
    ];
    for (op, sigma, want) in &exact {
        let c = c_sigma(op, *sigma).unwrap();
        if (c - want).abs() > 1e-10 {
            failures.push(format!("c_sigma {} at {sigma}: {c}", op.name()));
        }
        report.push(json!(["c_sigma", op.name(), c]));
    }

    // Euler: for degree-1 operators t_lambda = sigma / sum f_i, so the
    // infimum is sigma / sup sum f_i over the level set.
    for n in [3, 4] {
        for k in 2..=n {
            let op = root(k, n);
            let ctx = LevelSetContext::new(&op, 1.0, SEED).unwrap().with_tau(2_000).unwrap();
            let tau = ctx.tau().unwrap();
            if !(0.0..=1e-3).contains(&tau.value) || tau.converged {
                failures.push(format!("{} n={n}: tau {} converged {}", op.name(), tau.value, tau.converged));
            }
            report.push(json!(["tau", op.name(), n, tau.value, tau.converged]));
        }
        // sum f_i of sigma_k / sigma_{k-1} tends to n - k + 1 and never exceeds it
        for k in 2..=n.min(3) {
            let op = make_operator(OperatorSpec::Quotient(k, k - 1), n).unwrap();
            let ctx = LevelSetContext::new(&op, 1.0, SEED).unwrap().with_tau(2_000).unwrap();
            let tau = ctx.tau().unwrap();
            let want = 1.0 / (n - k + 1) as f64;
            if (tau.value - want).abs() > 1e-3 * want {
                failures.push(format!("{} n={n}: tau {} want {want}", op.name(), tau.value));
            }
            report.push(json!(["tau", op.name(), n, tau.value, tau.converged]));
        }
    }
    let sum = make_operator(OperatorSpec::Sum, 3).unwrap();
    let ctx = LevelSetContext::new(&sum, 6.0, SEED).unwrap().with_tau(2_000).unwrap();
    let tau = ctx.tau().unwrap();
    if (tau.value - 2.0).abs() > 1e-12 || !tau.converged {
        failures.push(format!("sum tau {} converged {}", tau.value, tau.converged));
    }

    let mut worst = 0.0f64;
    let mut configs = 0;
    for n in [3, 4] {
        for op in builtins(n) {
            let sigma = op.eval(&vec![1.0; n]).unwrap();
            let ctx = LevelSetContext::new(&op, sigma, SEED).unwrap();
            let sample = ctx.sample_level_set(10_000);
            if sample.points.len() != 10_000 {
                failures.push(format!("{} n={n}: {} samples", op.name(), sample.points.len()));
            }
            for p in &sample.points {
                let g = op.grad(p).unwrap();
                let total: f64 = g.iter().sum();
                let t = g.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / total;
                let residual: f64 = g.iter().zip(p).map(|(gi, li)| gi * (t - li)).sum();
                let scale: f64 = g.iter().zip(p).map(|(gi, li)| (gi * li).abs() + (gi * t).abs()).sum();
                worst = worst.max(residual.abs() / scale.max(f64::MIN_POSITIVE));
            }
            configs += 1;
        }
    }
    if worst > 1e-8 {
        failures.push(format!("tangent residual {worst:e}"));
    }
    report.push(json!(["tangent_residual", worst]));
    outcome(
        failures,
        format!("c_sigma exact, tau oracle matched, tangent residual {worst:.1e} over {configs} configurations"),
        json!(report),
    )
}

fn remark_consistency() -> Outcome {
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    let mut checked = 0;
    for (n, k) in lin_trudinger_configs() {
        let op = root(k, n);
        let ctx = LevelSetContext::new(&op, 1.0, SEED).unwrap();
        let cert = pue_certificate_with(&ctx, None, &opts(10_000)).unwrap();
        let kappa_sigma = cert.kappa_used.unwrap();
        if kappa_sigma != n - k {
            failures.push(format!("n={n} k={k}: kappa_sigma {kappa_sigma}"));
        }
        if kappa_sigma >= 1 {
            checked += 1;
            match cert.theta_remark_bound {
                Some(b) if b <= cert.theta_empirical + 1e-9 && b > 0.0 => {}
                other => failures.push(format!(
                    "n={n} k={k}: bound {other:?} vs theta {}",
                    cert.theta_empirical
                )),
            }
        }
        rows.push(json!([n, k, kappa_sigma, cert.theta_remark_bound, cert.theta_empirical]));
    }
    outcome(
        failures,
        format!("bound below empirical theta on {checked} configurations with kappa >= 1"),
        json!(rows),
    )
}

fn band_condition() -> Outcome {
    let op = root(2, 3);
    let band = Band::new(1.0, 2.0, 9).unwrap();
    let cert = band_certificate(&op, &band, 0.0, 10_000, SEED).unwrap();
    let mut failures = Vec::new();
    if cert.k_best > 1e-9 {
        failures.push(format!("K_best {}", cert.k_best));
    }
    if !cert.theta_empirical.is_some_and(|t| t > 0.0) {
        failures.push(format!("theta {:?}", cert.theta_empirical));
    }
    if !(cert.sum_grad_floor > 0.0) {
        failures.push(format!("sum f_i floor {}", cert.sum_grad_floor));
    }
    outcome(
        failures,
        format!(
            "K_best {:.1e}, theta {:.4}, sum f_i floor {:.4}",
            cert.k_best,
            cert.theta_empirical.unwrap_or(f64::NAN),
            cert.sum_grad_floor
        ),
        json!(cert),
    )
}

fn transform_branches() -> Outcome {
    let mut failures = Vec::new();
    let general = TransformSpec::normalized(root(2, 3));
    let a = certify_transformed(&general, 1.0, None, 10_000, SEED).unwrap();
    if a.branch != TransformBranch::GeneralCone
        || a.requested_order != 3
        || !a.certificate.passed()
        || a.certificate.theta_empirical < 1e-2
    {
        failures.push(format!(
            "general cone: branch {:?} order {} theta {}",
            a.branch, a.requested_order, a.certificate.theta_empirical
        ));
    }
    let positive = TransformSpec::normalized(root(3, 3));
    let b = certify_transformed(&positive, 1.0, None, 10_000, SEED).unwrap();
    if b.branch != TransformBranch::PositiveCone || b.requested_order != 2 || !b.certificate.passed() {
        failures.push(format!(
            "positive cone: branch {:?} order {} status {:?}",
            b.branch, b.requested_order, b.certificate.status
        ));
    }
    let c = certify_transformed(&positive, 1.0, Some(3), 10_000, SEED).unwrap();
    let family = c.degenerate_family.as_ref().map_or(f64::INFINITY, |w| w.ratio);
    if !(family <= 1e-2) || c.expected_to_pass {
        failures.push(format!("positive cone order 3: family ratio {family}"));
    }
    outcome(
        failures,
        format!(
            "order-3 theta {:.4}; order-2 theta {:.4}; order-3 family ratio {family:.1e}",
            a.certificate.theta_empirical, b.certificate.theta_empirical
        ),
        json!([a, b, c]),
    )
}

fn gradient_oracle() -> Outcome {
    let mut ops: Vec<SymmetricOperator> = Vec::new();
    for n in [3, 4] {
        for base in builtins(n) {
            for (rho, scale) in [(1.0, 1.0), (1.0, 1.0 / (n as f64 - 1.0)), (0.5, 0.7)] {
                let pair = make_transform(&TransformSpec::new(base.clone(), rho, scale), true).unwrap();
                ops.push(pair.f_tilde);
            }
            ops.push(base);
        }
    }
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut rng = seeded(SEED);
    for op in &ops {
        let mut bad = 0;
        for _ in 0..1_000 {
            let x = rejection_member(op, &mut rng);
            let analytic = op.grad(&x).unwrap();
            match fd_gradient(|y| op.eval(y), &x) {
                Some(fd) => {
                    let gap = relative_gap(&analytic, &fd);
                    worst = worst.max(gap);
                    if gap > 1e-5 {
                        bad += 1;
                    }
                }
                None => bad += 1,
            }
            checked += 1;
        }
        if bad > 0 {
            failures.push(format!("{}: {bad} of 1000 disagree", op.name()));
        }
    }
    outcome(
        failures,
        format!("{} operators, {checked} points, worst relative gap {worst:.1e}", ops.len()),
        json!(worst),
    )
}

fn lemma_suites() -> Outcome {
    let mut failures = Vec::new();
    let mut count = 0;
    let mut implications = 0;
    for n in [3, 4] {
        for op in builtins(n) {
            let suite = lemma_suite(&op, 1_000, SEED).unwrap();
            count += 1;
            if suite.hard_errors > 0 {
                failures.push(format!("{} n={n}: {} hard errors", op.name(), suite.hard_errors));
            }
            for imp in &suite.implications {
                match imp.outcome {
                    ImplicationOutcome::Pass => implications += 1,
                    ImplicationOutcome::Fail => {
                        failures.push(format!("{} n={n}: {} failed", op.name(), imp.name))
                    }
                    ImplicationOutcome::NotApplicable => {}
                }
            }
        }
    }
    outcome(
        failures,
        format!("{count} operators, {implications} applicable implications passed"),
        json!(null),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 kappa table", garding_kappa_table, Some(Duration::from_secs(60))),
        ("2 order of the k-Hessian quotient", lin_trudinger_order, Some(Duration::from_secs(300))),
        ("3 level-set geometry", level_set_geometry, None),
        ("4 closed-form bound consistency", remark_consistency, None),
        ("5 band certificate", band_condition, Some(Duration::from_secs(120))),
        ("6 transform branches", transform_branches, Some(Duration::from_secs(180))),
        ("7 gradient oracle", gradient_oracle, None),
        ("8 lemma suites", lemma_suites, None),
    ];
    let mut all_pass = true;
    let mut reports = Vec::new();
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let pass = out.pass && in_time;
        all_pass &= pass;
        let timing = match limit {
            Some(l) if !in_time => format!("{:.1}s over the {}s limit", elapsed.as_secs_f64(), l.as_secs()),
            _ => format!("{:.1}s", elapsed.as_secs_f64()),
        };
        println!(
            "{} criterion {name}: {} [{timing}]",
            if pass { "PASS" } else { "FAIL" },
            out.detail
        );
        reports.push(out.report);
    }

    let start = Instant::now();
    let mut mismatched = Vec::new();
    for (i, (name, run, _)) in criteria.iter().take(6).enumerate() {
        if run().report != reports[i] {
            mismatched.push(*name);
        }
    }
    let pass = mismatched.is_empty();
    all_pass &= pass;
    println!(
        "{} criterion 9 determinism: {} [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        if pass {
            "criteria 1-6 re-run to byte-identical reports".to_string()
        } else {
            format!("reports differ for {}", mismatched.join(", "))
        },
        start.elapsed().as_secs_f64()
    );
    if !all_pass {
        std::process::exit(1);
    }
}
