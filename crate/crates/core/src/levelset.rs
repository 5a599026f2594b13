//! Level-set geometry of an operator at a level `sigma`: the diagonal point
//! `c_sigma 1`, the tangent intercept `t_lambda`, its infimum `tau_sigma`, a
//! seeded sampler for the level set and the derived cone spanned by
//! `level set - tau_sigma 1`.

use std::cell::Cell;

use rayon::prelude::*;
use serde::Serialize;

use crate::cones::{kappa, Cone, ConeOracle, KappaResult};
use crate::error::{Error, Result};
use crate::numeric::{bisect_predicate, golden_max, nelder_mead, norm2, norm_inf, SimplexOptions};
use crate::rng::{self, Purpose};
use crate::symfun::SymmetricOperator;

/// Radius treated as numerically infinite.
pub const R_MAX: f64 = 1e6;

/// Accepted level-set points satisfy `|f - sigma| <= LEVEL_TOL (1 + |sigma|)`.
pub const LEVEL_TOL: f64 = 1e-9;

/// Observing `t_lambda` below `-UNBOUNDED_T` falsifies a finite infimum.
pub const UNBOUNDED_T: f64 = 1e6;

/// Cap on the diagonal search for `c_sigma`.
const DIAGONAL_CAP: f64 = 1e300;

/// Sampler attempts per requested point before giving up.
const MAX_ATTEMPTS_PER_POINT: usize = 100;

/// Accepted-to-attempted ratio below which the sampler is degenerate.
pub const DEGENERATE_RATIO: f64 = 0.01;

/// Relative diagonal distance below which a tau minimiser counts as on the boundary.
pub const BOUNDARY_MARGIN: f64 = 1e-6;

fn diagonal(n: usize, t: f64) -> Vec<f64> {
    vec![t; n]
}

/// The diagonal level value: `f(c 1) = sigma`, `c > 0`.
pub fn c_sigma(op: &SymmetricOperator, sigma: f64) -> Result<f64> {
    let n = op.arity();
    if !sigma.is_finite() {
        return Err(Error::Domain(format!("level {sigma} is not finite")));
    }
    if sigma >= op.sup_on_diagonal() {
        return Err(Error::LevelAboveSup {
            sigma,
            sup: op.sup_on_diagonal(),
        });
    }
    let above = |t: f64| op.eval(&diagonal(n, t)).is_some_and(|v| v > sigma);
    let mut hi = 1.0;
    while !above(hi) {
        hi *= 2.0;
        if hi > DIAGONAL_CAP {
            let probe = op.eval(&diagonal(n, DIAGONAL_CAP)).unwrap_or(f64::NAN);
            return Err(Error::LevelAboveSup { sigma, sup: probe });
        }
    }
    let mut lo = hi;
    loop {
        match op.eval(&diagonal(n, lo)) {
            Some(v) if v > sigma => {}
            Some(_) => break,
            // the diagonal left the domain while still above the level
            None => return Err(Error::LevelBelowRange { sigma }),
        }
        lo *= 0.5;
        if lo < 1.0 / DIAGONAL_CAP {
            return Err(Error::LevelBelowRange { sigma });
        }
    }
    let (lo, hi) = bisect_predicate(lo, hi, above);
    let gap = |t: f64| {
        op.eval(&diagonal(n, t))
            .map_or(f64::INFINITY, |v| (v - sigma).abs())
    };
    Ok(if gap(lo) < gap(hi) { lo } else { hi })
}

/// `t_lambda = sum f_i lambda_i / sum f_j`, where the tangent plane of the
/// level set through `lambda` meets the diagonal.
pub fn t_lambda(op: &SymmetricOperator, lambda: &[f64]) -> Result<f64> {
    let g = op
        .grad(lambda)
        .ok_or_else(|| Error::Domain(format!("{lambda:?} outside the domain of {}", op.name())))?;
    t_from_grad(lambda, &g)
}

pub(crate) fn t_from_grad(lambda: &[f64], g: &[f64]) -> Result<f64> {
    let total: f64 = g.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Precondition(format!(
            "gradient sum {total} is not positive; the level is at or above the supremum"
        )));
    }
    Ok(g.iter().zip(lambda).map(|(a, b)| a * b).sum::<f64>() / total)
}

/// How the finiteness of `tau_sigma` is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauFiniteness {
    /// Homogeneity and a nonnegative level force `t_lambda >= 0`.
    Analytic,
    /// Not falsified by the probe; assumed, not proven.
    Assumed,
}

#[derive(Debug, Clone, Serialize)]
pub struct TauEstimate {
    #[serde(with = "crate::numeric::ext_real")]
    pub value: f64,
    pub converged: bool,
    /// The simplex stage left the `R_MAX` ball.
    pub escaped: bool,
    /// Moving the minimising point down the diagonal by `BOUNDARY_MARGIN`
    /// times its size leaves the cone: the infimum is approached at the
    /// boundary rather than attained.
    pub at_boundary: bool,
    pub samples_used: usize,
    pub simplex_iterations: usize,
    /// Level-set point attaining the estimate.
    pub argmin: Vec<f64>,
    pub finiteness: TauFiniteness,
}

/// Points on the level set with sampler bookkeeping.
#[derive(Debug, Clone)]
pub struct LevelSetSample {
    pub points: Vec<Vec<f64>>,
    pub attempted: usize,
    pub seed: u64,
}

impl LevelSetSample {
    pub fn degenerate(&self) -> bool {
        self.attempted > 0 && (self.points.len() as f64) < DEGENERATE_RATIO * self.attempted as f64
    }
}

/// An operator paired with a level, with the diagonal point and sampler
/// anchor resolved. Immutable once built.
#[derive(Debug, Clone)]
pub struct LevelSetContext {
    operator: SymmetricOperator,
    sigma: f64,
    c_sigma: f64,
    anchor: Vec<f64>,
    sampler_seed: u64,
    tau: Option<TauEstimate>,
}

impl LevelSetContext {
    pub fn new(op: &SymmetricOperator, sigma: f64, sampler_seed: u64) -> Result<Self> {
        let c = c_sigma(op, sigma)?;
        let n = op.arity();
        // 2c keeps the anchor scale-equivariant for homogeneous operators
        let mut offset = c.abs().max(f64::MIN_POSITIVE);
        let mut anchor = None;
        for _ in 0..60 {
            let a = diagonal(n, c + offset);
            if op.eval(&a).is_some_and(|v| v > sigma) {
                anchor = Some(a);
                break;
            }
            offset *= 0.5;
        }
        let anchor = anchor.ok_or_else(|| {
            Error::Precondition(format!(
                "no diagonal point above level {sigma} found near c_sigma = {c}"
            ))
        })?;
        Ok(Self {
            operator: op.clone(),
            sigma,
            c_sigma: c,
            anchor,
            sampler_seed,
            tau: None,
        })
    }

    pub fn operator(&self) -> &SymmetricOperator {
        &self.operator
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn c_sigma(&self) -> f64 {
        self.c_sigma
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn sampler_seed(&self) -> u64 {
        self.sampler_seed
    }

    pub fn tau(&self) -> Option<&TauEstimate> {
        self.tau.as_ref()
    }

    pub fn level_tolerance(&self) -> f64 {
        LEVEL_TOL * (1.0 + self.sigma.abs())
    }

    fn above(&self, x: &[f64]) -> bool {
        self.operator.eval(x).is_some_and(|v| v > self.sigma)
    }

    fn accept(&self, p: Vec<f64>) -> Option<Vec<f64>> {
        let tol = self.level_tolerance();
        let f = self.operator.eval(&p)?;
        if (f - self.sigma).abs() <= tol {
            return Some(p);
        }
        self.radial_polish(&p)
    }

    /// Re-solves `f(s p) = sigma` for `s` near 1. Far-out points lose
    /// accuracy along the sampling ray but the radial slice stays well
    /// conditioned.
    fn radial_polish(&self, p: &[f64]) -> Option<Vec<f64>> {
        let tol = self.level_tolerance();
        let g = |s: f64| -> Option<f64> {
            let q: Vec<f64> = p.iter().map(|x| s * x).collect();
            self.operator.eval(&q).map(|v| v - self.sigma)
        };
        let mut delta = 1e-9;
        while delta <= 0.5 {
            if let (Some(a), Some(b)) = (g(1.0 - delta), g(1.0 + delta)) {
                if a.signum() != b.signum() {
                    let increasing = b > a;
                    let (lo, hi) = bisect_predicate(1.0 - delta, 1.0 + delta, |s| {
                        g(s).is_some_and(|v| (v > 0.0) == increasing)
                    });
                    let best = [lo, hi]
                        .into_iter()
                        .filter_map(|s| g(s).map(|v| (s, v.abs())))
                        .min_by(|x, y| x.1.total_cmp(&y.1))?;
                    if best.1 > tol {
                        return None;
                    }
                    let q: Vec<f64> = p.iter().map(|x| best.0 * x).collect();
                    return self.operator.domain().contains(&q).then_some(q);
                }
            }
            delta *= 4.0;
        }
        None
    }

    /// Shoots ray `index` of the given seed from the anchor to the level set.
    fn shoot(&self, seed: u64, index: u64) -> Option<Vec<f64>> {
        let mut rng = rng::stream(seed, Purpose::LevelSetRay, index);
        let d = rng::unit_direction(&mut rng, self.operator.arity());
        let at = |t: f64| -> Vec<f64> {
            self.anchor.iter().zip(&d).map(|(a, di)| a + t * di).collect()
        };
        let mut prev = 0.0;
        let mut t = 1e-3 * norm_inf(&self.anchor).max(f64::MIN_POSITIVE);
        loop {
            if t >= R_MAX {
                if self.above(&at(R_MAX)) {
                    return None;
                }
                t = R_MAX;
                break;
            }
            if !self.above(&at(t)) {
                break;
            }
            prev = t;
            t *= 2.0;
        }
        let (lo, _) = bisect_predicate(prev, t, |s| !self.above(&at(s)));
        self.accept(at(lo))
    }

    /// Up to `count` level-set points from the context's own seed.
    pub fn sample_level_set(&self, count: usize) -> LevelSetSample {
        self.sample_level_set_seeded(count, self.sampler_seed)
    }

    /// Up to `count` level-set points. Rays are tried in index order and the
    /// first `count` successes are kept, so the result does not depend on
    /// thread scheduling.
    pub fn sample_level_set_seeded(&self, count: usize, seed: u64) -> LevelSetSample {
        let cap = count.saturating_mul(MAX_ATTEMPTS_PER_POINT);
        let mut points = Vec::with_capacity(count);
        let mut attempted = 0usize;
        while points.len() < count && attempted < cap {
            let batch = (2 * (count - points.len())).max(64).min(cap - attempted);
            let found: Vec<Option<Vec<f64>>> = (attempted..attempted + batch)
                .into_par_iter()
                .map(|i| self.shoot(seed, i as u64))
                .collect();
            for p in found {
                attempted += 1;
                if let Some(p) = p {
                    points.push(p);
                    if points.len() == count {
                        break;
                    }
                }
            }
        }
        LevelSetSample {
            points,
            attempted,
            seed,
        }
    }

    /// Moves `x` along the diagonal onto the level set.
    pub fn project_to_level_set(&self, x: &[f64]) -> Option<Vec<f64>> {
        let m = norm_inf(x);
        let c = self.c_sigma.abs();
        let shifted = |s: f64| -> Vec<f64> { x.iter().map(|v| v + s).collect() };
        let mut hi = m + 2.0 * c + 1.0;
        let mut tries = 0;
        while !self.above(&shifted(hi)) {
            hi = 2.0 * hi + c + 1.0;
            tries += 1;
            if tries > 60 || !hi.is_finite() {
                return None;
            }
        }
        let lo = -m - c - 1.0;
        if self.above(&shifted(lo)) {
            return None;
        }
        let (_, hi) = bisect_predicate(lo, hi, |s| self.above(&shifted(s)));
        Some(shifted(hi))
    }

    pub fn t_lambda(&self, lambda: &[f64]) -> Result<f64> {
        t_lambda(&self.operator, lambda)
    }

    fn finiteness(&self) -> TauFiniteness {
        match self.operator.homogeneity_degree() {
            Some(p) if p > 0.0 && self.sigma >= 0.0 => TauFiniteness::Analytic,
            _ => TauFiniteness::Assumed,
        }
    }

    /// Estimates `tau_sigma = inf t_lambda` over the level set: the minimum
    /// over `budget` samples, then a simplex search in the hyperplane
    /// orthogonal to the diagonal with every iterate projected back onto the
    /// level set along the diagonal.
    pub fn tau_sigma(&self, budget: usize) -> Result<TauEstimate> {
        let sample = self.sample_level_set(budget.max(1));
        let ts: Vec<(f64, usize)> = sample
            .points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| self.t_lambda(p).ok().map(|t| (t, i)))
            .collect();
        let &(t0, i0) = ts
            .iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .ok_or_else(|| Error::Precondition("no level-set samples for tau".into()))?;
        if t0 < -UNBOUNDED_T {
            return Err(Error::UnboundedBelow { observed: t0 });
        }
        let start = sample.points[i0].clone();

        let n = self.operator.arity();
        let basis = helmert_basis(n);
        let embed = |y: &[f64]| -> Vec<f64> {
            let mut x = vec![0.0; n];
            for (yj, e) in y.iter().zip(&basis) {
                for (xi, ei) in x.iter_mut().zip(e) {
                    *xi += yj * ei;
                }
            }
            x
        };
        let y0: Vec<f64> = basis
            .iter()
            .map(|e| e.iter().zip(&start).map(|(a, b)| a * b).sum())
            .collect();
        let lowest = Cell::new(t0);
        let objective = |y: &[f64]| -> f64 {
            let Some(lambda) = self.project_to_level_set(&embed(y)) else {
                return f64::INFINITY;
            };
            match self.t_lambda(&lambda) {
                Ok(t) => {
                    if t < lowest.get() {
                        lowest.set(t);
                    }
                    t
                }
                Err(_) => f64::INFINITY,
            }
        };
        let step: Vec<f64> = vec![0.1 * (1.0 + norm_inf(&y0)); n - 1];
        let res = nelder_mead(
            objective,
            &y0,
            &step,
            &SimplexOptions::default(),
            |y: &[f64]| norm_inf(&embed(y)) > R_MAX,
        );
        if lowest.get() < -UNBOUNDED_T {
            return Err(Error::UnboundedBelow {
                observed: lowest.get(),
            });
        }
        let (value, argmin) = if res.fx < t0 {
            let p = self
                .project_to_level_set(&embed(&res.x))
                .unwrap_or_else(|| start.clone());
            (res.fx, p)
        } else {
            (t0, start)
        };
        let back = BOUNDARY_MARGIN * norm_inf(&argmin);
        let shifted: Vec<f64> = argmin.iter().map(|x| x - back).collect();
        let at_boundary = !self.operator.domain().contains(&shifted);
        Ok(TauEstimate {
            value,
            converged: res.converged && !res.escaped && !at_boundary,
            escaped: res.escaped,
            at_boundary,
            samples_used: sample.points.len(),
            simplex_iterations: res.iterations,
            argmin,
            finiteness: self.finiteness(),
        })
    }

    /// Returns a copy carrying a `tau_sigma` estimate.
    pub fn with_tau(&self, budget: usize) -> Result<Self> {
        let tau = self.tau_sigma(budget)?;
        let mut out = self.clone();
        out.tau = Some(tau);
        Ok(out)
    }

    /// Builds the cone spanned by `level set - tau 1`, or reports the
    /// isotropic case `tau = c_sigma`.
    pub fn sigma_cone(&self, kappa_budget: usize, seed: u64) -> Result<SigmaConeOutcome> {
        let tau = self
            .tau
            .as_ref()
            .ok_or_else(|| Error::Precondition("tau_sigma not estimated".into()))?;
        if tau.value >= self.c_sigma - 1e-9 * (1.0 + self.c_sigma.abs()) {
            return Ok(SigmaConeOutcome::FullyIsotropic {
                c_sigma: self.c_sigma,
                tau: tau.value,
            });
        }
        let oracle = SigmaSlice {
            operator: self.operator.clone(),
            sigma: self.sigma,
            tau: tau.value,
        };
        let cone = Cone::custom(oracle);
        let kappa_sigma = kappa(&cone, kappa_budget, seed)?;
        Ok(SigmaConeOutcome::Cone(SigmaCone {
            context: self.clone(),
            tau: tau.value,
            cone,
            kappa_sigma,
        }))
    }
}

/// Orthonormal basis of the hyperplane orthogonal to the diagonal.
pub(crate) fn helmert_basis(n: usize) -> Vec<Vec<f64>> {
    (1..n)
        .map(|j| {
            let s = ((j * (j + 1)) as f64).sqrt();
            (0..n)
                .map(|i| match i.cmp(&j) {
                    std::cmp::Ordering::Less => 1.0 / s,
                    std::cmp::Ordering::Equal => -(j as f64) / s,
                    std::cmp::Ordering::Greater => 0.0,
                })
                .collect()
        })
        .collect()
}

/// Membership oracle for the cone over `level set - tau 1`: `mu` is inside
/// when the ray `tau 1 + s mu` climbs strictly above the level for some
/// `s` in `(0, R_MAX]`.
struct SigmaSlice {
    operator: SymmetricOperator,
    sigma: f64,
    tau: f64,
}

impl SigmaSlice {
    fn best_excess(&self, dir: &[f64]) -> f64 {
        let h = |s: f64| -> f64 {
            let p: Vec<f64> = dir.iter().map(|d| self.tau + s * d).collect();
            self.operator
                .eval(&p)
                .map_or(f64::NEG_INFINITY, |v| v - self.sigma)
        };
        let grid: Vec<f64> = (0..=60).map(|j| R_MAX * 0.5f64.powi(j)).collect();
        let (j, best) = grid
            .iter()
            .map(|&s| h(s))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
        if best == f64::NEG_INFINITY {
            return best;
        }
        let hi = grid[j.saturating_sub(1)];
        let lo = grid[(j + 1).min(60)];
        let (_, refined) = golden_max(lo, hi, 60, h);
        best.max(refined)
    }
}

impl ConeOracle for SigmaSlice {
    fn arity(&self) -> usize {
        self.operator.arity()
    }

    fn margin(&self, v: &[f64]) -> f64 {
        let norm = norm2(v);
        if !(norm > 0.0) || !norm.is_finite() {
            return 0.0;
        }
        let dir: Vec<f64> = v.iter().map(|x| x / norm).collect();
        let excess = self.best_excess(&dir);
        if excess == f64::NEG_INFINITY {
            return -norm;
        }
        norm * (excess / (1.0 + self.sigma.abs())).tanh()
    }

    fn label(&self) -> String {
        format!(
            "sigma-cone({}, sigma={}, tau={})",
            self.operator.name(),
            self.sigma,
            self.tau
        )
    }
}

/// The cone over `level set - tau 1` with its kappa.
#[derive(Debug, Clone)]
pub struct SigmaCone {
    pub context: LevelSetContext,
    pub tau: f64,
    pub cone: Cone,
    pub kappa_sigma: KappaResult,
}

#[derive(Debug, Clone)]
pub enum SigmaConeOutcome {
    Cone(SigmaCone),
    /// `tau = c_sigma`: the gradient is isotropic on the whole level set.
    FullyIsotropic { c_sigma: f64, tau: f64 },
}

impl SigmaConeOutcome {
    pub fn cone(&self) -> Option<&SigmaCone> {
        match self {
            SigmaConeOutcome::Cone(c) => Some(c),
            SigmaConeOutcome::FullyIsotropic { .. } => None,
        }
    }
}
