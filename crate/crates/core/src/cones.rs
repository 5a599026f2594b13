//! Open symmetric convex cones containing the positive cone.
//!
//! A cone is a membership oracle with a continuous, 1-homogeneous margin
//! (positive inside, nonpositive outside). The Garding cones
//! `Gamma_k = {sigma_1 > 0, ..., sigma_k > 0}` are built in; anything else
//! implements [`ConeOracle`].

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{binomial, bisect_predicate, nelder_mead, norm_inf, SimplexOptions};
use crate::rng::{self, Purpose};
use crate::symfun::{elementary_symmetric_all, split_call};

/// Relative margin a point needs to count as strictly inside.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

/// Margin the last coordinate axis needs for the type-2 classification.
pub const TYPE2_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConeFamily {
    Garding(usize),
    Custom,
}

/// Membership oracle for a symmetric convex cone.
pub trait ConeOracle: Send + Sync {
    fn arity(&self) -> usize;
    /// Continuous, 1-homogeneous, positive exactly on the open cone.
    fn margin(&self, v: &[f64]) -> f64;
    fn label(&self) -> String;
    fn family(&self) -> ConeFamily {
        ConeFamily::Custom
    }
}

struct Garding {
    n: usize,
    k: usize,
}

impl ConeOracle for Garding {
    fn arity(&self) -> usize {
        self.n
    }

    fn margin(&self, v: &[f64]) -> f64 {
        let e = elementary_symmetric_all(v, self.k);
        (1..=self.k)
            .map(|j| {
                let s = e[j] / binomial(self.n, j);
                s.signum() * s.abs().powf(1.0 / j as f64)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn label(&self) -> String {
        format!("gamma({})", self.k)
    }

    fn family(&self) -> ConeFamily {
        ConeFamily::Garding(self.k)
    }
}

/// Shared handle to a cone oracle.
#[derive(Clone)]
pub struct Cone(Arc<dyn ConeOracle>);

impl fmt::Debug for Cone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cone({}, n={})", self.label(), self.arity())
    }
}

/// `Gamma_k` in dimension `n`.
pub fn garding_cone(n: usize, k: usize) -> Result<Cone> {
    Cone::garding(n, k)
}

impl Cone {
    pub fn garding(n: usize, k: usize) -> Result<Cone> {
        if n < 2 {
            return Err(Error::Domain(format!("arity must be at least 2, got {n}")));
        }
        if k == 0 || k > n {
            return Err(Error::Domain(format!("gamma({k}) needs 1 <= k <= {n}")));
        }
        Ok(Cone(Arc::new(Garding { n, k })))
    }

    pub fn positive(n: usize) -> Result<Cone> {
        Cone::garding(n, n)
    }

    pub fn halfspace(n: usize) -> Result<Cone> {
        Cone::garding(n, 1)
    }

    pub fn custom(oracle: impl ConeOracle + 'static) -> Cone {
        Cone(Arc::new(oracle))
    }

    /// Parses `gamma(k) | positive | halfspace`.
    pub fn parse(spec: &str, n: usize) -> Result<Cone> {
        match spec.trim() {
            "positive" => Cone::positive(n),
            "halfspace" => Cone::halfspace(n),
            s => match split_call(s) {
                Some(("gamma", args)) if args.len() == 1 => {
                    let k = args[0]
                        .parse::<usize>()
                        .map_err(|_| Error::Parse(format!("bad cone index in `{s}`")))?;
                    Cone::garding(n, k)
                }
                _ => Err(Error::Parse(format!("unrecognised cone `{s}`"))),
            },
        }
    }

    pub fn arity(&self) -> usize {
        self.0.arity()
    }

    pub fn label(&self) -> String {
        self.0.label()
    }

    pub fn family(&self) -> ConeFamily {
        self.0.family()
    }

    pub fn margin(&self, v: &[f64]) -> f64 {
        self.0.margin(v)
    }

    /// The strict-membership threshold at `v`.
    pub fn tolerance(v: &[f64]) -> f64 {
        MEMBERSHIP_TOL * (1.0 + norm_inf(v))
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.arity()
            && v.iter().all(|x| x.is_finite())
            && self.margin(v) > Self::tolerance(v)
    }

    /// Smallest shift `s` with `v + s 1` inside, bracketed to adjacent floats.
    /// Returns `(outside, inside)` shifts.
    pub fn diagonal_entry(&self, v: &[f64]) -> (f64, f64) {
        let m = norm_inf(v);
        let mut hi = m + 1.0;
        let shifted = |s: f64| -> Vec<f64> { v.iter().map(|x| x + s).collect() };
        while !self.contains(&shifted(hi)) {
            hi = 2.0 * hi + 1.0;
        }
        bisect_predicate(-m - 1.0, hi, |s| self.contains(&shifted(s)))
    }

    /// A deterministic interior point: a Gaussian vector pushed along the
    /// diagonal just past the boundary, then deeper by a random fraction of
    /// its scale. Small depths produce near-boundary members.
    pub fn sample_member(&self, seed: u64, index: u64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = rng::stream(seed, Purpose::ConeSample, index);
        let g = rng::gaussian_vector(&mut rng, self.arity());
        let (_, s0) = self.diagonal_entry(&g);
        let depth = rng.random_range(0.02..1.5) * (1.0 + norm_inf(&g));
        g.iter().map(|x| x + s0 + depth).collect()
    }

    /// A point adjacent to the boundary from inside: the entry point of a
    /// Gaussian vector's diagonal line.
    pub fn sample_boundary(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, Purpose::ConeSample, index);
        let g = rng::gaussian_vector(&mut rng, self.arity());
        let (_, s0) = self.diagonal_entry(&g);
        g.iter().map(|x| x + s0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaConfidence {
    Exact,
    MonteCarloLowerBound,
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaResult {
    pub kappa: usize,
    /// `(-a_1, ..., -a_kappa, a_{kappa+1}, ..., a_n)` with the negative block
    /// sorted so `a_1 >= ... >= a_kappa`.
    pub witness: Vec<f64>,
    pub confidence: KappaConfidence,
}

/// Exponents of the alpha log-grid, `10^e` for `e = -3, -2.5, ..., 3`.
pub fn alpha_grid() -> Vec<f64> {
    (0..13).map(|i| 10f64.powf(-3.0 + 0.5 * i as f64)).collect()
}

fn sign_pattern(alpha: &[f64], k: usize) -> Vec<f64> {
    alpha
        .iter()
        .enumerate()
        .map(|(i, a)| if i < k { -a } else { *a })
        .collect()
}

fn normalised_margin(cone: &Cone, v: &[f64]) -> f64 {
    let scale = norm_inf(v);
    if scale == 0.0 {
        return f64::NEG_INFINITY;
    }
    cone.margin(v) / scale
}

/// Searches for a member with exactly `k` negative entries.
fn find_pattern(cone: &Cone, k: usize, budget: usize, seed: u64) -> Option<Vec<f64>> {
    let n = cone.arity();
    let grid = alpha_grid();
    // block vectors (-a 1_k, b 1_{n-k}) suffice for symmetric convex cones
    let a_values: Vec<f64> = if k == 0 { vec![1.0] } else { grid.clone() };
    let b_values: Vec<f64> = if k == n { vec![1.0] } else { grid.clone() };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for &a in &a_values {
        for &b in &b_values {
            let alpha: Vec<f64> = (0..n).map(|i| if i < k { a } else { b }).collect();
            let v = sign_pattern(&alpha, k);
            if cone.contains(&v) {
                return Some(v);
            }
            let m = normalised_margin(cone, &v);
            if best.as_ref().is_none_or(|(bm, _)| m > *bm) {
                best = Some((m, alpha));
            }
        }
    }
    let (_, start) = best?;
    let lo = 1e-3f64.ln();
    let hi = 1e3f64.ln();
    let to_alpha = |y: &[f64]| -> Vec<f64> { y.iter().map(|t| t.clamp(lo, hi).exp()).collect() };
    let objective = |y: &[f64]| -normalised_margin(cone, &sign_pattern(&to_alpha(y), k));
    let escape = |y: &[f64]| cone.contains(&sign_pattern(&to_alpha(y), k));
    let opts = SimplexOptions {
        max_iter: budget,
        ftol: 0.0,
        xtol: 1e-12,
    };
    let mut starts = vec![start.iter().map(|a| a.ln()).collect::<Vec<f64>>()];
    for r in 0..4u64 {
        use rand::Rng;
        let mut rng = rng::stream(seed, Purpose::ConeSample, (k as u64) << 32 | r);
        starts.push((0..n).map(|_| rng.random_range(lo..hi)).collect());
    }
    for y0 in starts {
        let res = nelder_mead(objective, &y0, &vec![0.5; n], &opts, escape);
        let v = sign_pattern(&to_alpha(&res.x), k);
        if cone.contains(&v) {
            return Some(v);
        }
    }
    None
}

/// The largest number of negative entries a member of `cone` can have.
///
/// Patterns are scanned on the alpha log-grid and refined by margin ascent.
/// For Garding cones the search must reproduce `n - k`; a disagreement is an
/// error rather than a silently wrong answer.
pub fn kappa(cone: &Cone, search_budget: usize, seed: u64) -> Result<KappaResult> {
    let n = cone.arity();
    let found: Vec<Option<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|k| find_pattern(cone, k, search_budget, seed))
        .collect();
    let (k, mut witness) = found
        .into_iter()
        .enumerate()
        .filter_map(|(k, w)| w.map(|w| (k, w)))
        .last()
        .ok_or_else(|| {
            Error::Inconsistency(format!(
                "no member of {} found, not even a positive vector",
                cone.label()
            ))
        })?;
    witness[..k].sort_by(f64::total_cmp);
    let confidence = match cone.family() {
        ConeFamily::Garding(kk) => {
            if k != n - kk {
                return Err(Error::Inconsistency(format!(
                    "kappa search found {k} for {}, expected {}",
                    cone.label(),
                    n - kk
                )));
            }
            KappaConfidence::Exact
        }
        ConeFamily::Custom => KappaConfidence::MonteCarloLowerBound,
    };
    Ok(KappaResult {
        kappa: k,
        witness,
        confidence,
    })
}

/// Whether the last coordinate axis lies in the open cone.
pub fn is_type2(cone: &Cone) -> bool {
    let mut axis = vec![0.0; cone.arity()];
    *axis.last_mut().unwrap() = 1.0;
    cone.margin(&axis) > TYPE2_MARGIN
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn garding_membership_examples() {
        let g33 = Cone::garding(3, 3).unwrap();
        assert!(g33.contains(&[1.0, 1.0, 1.0]));
        let g31 = Cone::garding(3, 1).unwrap();
        assert!(g31.contains(&[-1.0, -1.0, 3.0]));
        let g32 = Cone::garding(3, 2).unwrap();
        assert!(!g32.contains(&[-1.0, 2.0, 2.0]));
        assert!(Cone::garding(3, 0).is_err());
        assert!(Cone::garding(3, 4).is_err());
    }

    #[test]
    fn cone_grammar() {
        assert_eq!(Cone::parse("positive", 4).unwrap().label(), "gamma(4)");
        assert_eq!(Cone::parse("halfspace", 4).unwrap().label(), "gamma(1)");
        assert_eq!(Cone::parse(" gamma(2) ", 4).unwrap().label(), "gamma(2)");
        assert!(matches!(Cone::parse("gamma(x)", 4), Err(Error::Parse(_))));
        assert!(matches!(Cone::parse("cube", 4), Err(Error::Parse(_))));
        assert!(matches!(Cone::parse("gamma(5)", 4), Err(Error::Domain(_))));
    }

    #[test]
    fn kappa_examples() {
        for n in 2..=5 {
            assert_eq!(kappa(&Cone::garding(n, n).unwrap(), 200, 1).unwrap().kappa, 0);
            assert_eq!(kappa(&Cone::garding(n, 1).unwrap(), 200, 1).unwrap().kappa, n - 1);
        }
        let r = kappa(&Cone::garding(4, 2).unwrap(), 200, 1).unwrap();
        assert_eq!(r.kappa, 2);
        assert_eq!(r.confidence, KappaConfidence::Exact);
        assert!(Cone::garding(4, 2).unwrap().contains(&r.witness));
        assert_eq!(r.witness.iter().filter(|x| **x < 0.0).count(), 2);
        assert!(r.witness[0] <= r.witness[1]);
    }

    #[test]
    fn type2_examples() {
        assert!(is_type2(&Cone::garding(3, 1).unwrap()));
        assert!(!is_type2(&Cone::garding(3, 3).unwrap()));
        assert!(!is_type2(&Cone::garding(3, 2).unwrap()));
    }

    #[test]
    fn sampled_members_are_members() {
        let c = Cone::garding(4, 2).unwrap();
        for i in 0..200 {
            assert!(c.contains(&c.sample_member(9, i)));
            let b = c.sample_boundary(9, i);
            assert!(c.contains(&b));
            assert!(c.margin(&b) < 1e-6 * (1.0 + norm_inf(&b)));
        }
    }
}
