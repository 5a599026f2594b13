//! Limit conditions along rays, classified from geometric probes.
//!
//! Each regime probes `f(base + t direction)` at `t = 2^j` up to `1e8` (or
//! `t = 2^-j` down to `1e-8` for the limit at zero) and reads the trend of
//! the tail. Concavity along the ray is assumed when turning a trend into
//! `holds` or `fails`; anything the trend does not settle is `inconclusive`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::symfun::SymmetricOperator;

/// Largest probe parameter.
pub const T_CAP: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "regime", rename_all = "kebab-case")]
pub enum RayRegime {
    /// `lim_{t -> inf} f(base + t d) > threshold`.
    ExceedsAtInfinity { threshold: f64 },
    /// `lim_{t -> inf} f(base + t d) > -inf`.
    BoundedBelowAtInfinity,
    /// `limsup_{t -> inf} f(base + t d) / t >= 0`.
    NonnegativeSlopeAtInfinity,
    /// `lim_{t -> 0+} f(base + t d) > -inf`.
    BoundedBelowAtZero,
    /// `f(base + t d) > threshold` for some `t > 0`.
    ExceedsSomewhere { threshold: f64 },
}

impl RayRegime {
    fn toward_zero(&self) -> bool {
        matches!(self, RayRegime::BoundedBelowAtZero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Holds,
    Fails,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub regime: RayRegime,
    pub classification: Classification,
    /// `(t, f(base + t d))` for every probe inside the domain.
    pub trace: Vec<(f64, f64)>,
    /// The ray left the domain before the last probe.
    pub exited: bool,
    pub note: String,
}

fn probes(toward_zero: bool) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = 1.0;
    if toward_zero {
        while t >= 1.0 / T_CAP {
            out.push(t);
            t *= 0.5;
        }
    } else {
        while t <= T_CAP {
            out.push(t);
            t *= 2.0;
        }
    }
    out
}

/// Evaluates the ray and classifies the requested condition.
pub fn ray_condition(
    op: &SymmetricOperator,
    base: &[f64],
    direction: &[f64],
    regime: RayRegime,
) -> Result<ConditionReport> {
    let n = op.arity();
    if base.len() != n || direction.len() != n {
        return Err(Error::Domain(format!("ray vectors must have length {n}")));
    }
    let mut trace = Vec::new();
    let mut exited = false;
    for t in probes(regime.toward_zero()) {
        let p: Vec<f64> = base.iter().zip(direction).map(|(b, d)| b + t * d).collect();
        match op.eval(&p) {
            Some(v) => trace.push((t, v)),
            None => {
                exited = true;
                break;
            }
        }
    }
    if trace.is_empty() {
        return Err(Error::Domain(
            "the ray leaves the domain at its first probe".into(),
        ));
    }
    let (classification, note) = classify(regime, &trace, exited);
    Ok(ConditionReport {
        regime,
        classification,
        trace,
        exited,
        note,
    })
}

struct Tail {
    last: f64,
    /// Last three increments in probe order.
    steps: Vec<f64>,
    tol: f64,
}

impl Tail {
    fn new(values: &[f64]) -> Option<Tail> {
        if values.len() < 4 {
            return None;
        }
        let k = values.len();
        let scale = values[k - 4..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Some(Tail {
            last: values[k - 1],
            steps: (k - 3..k).map(|i| values[i] - values[i - 1]).collect(),
            tol: 1e-12 * (1.0 + scale),
        })
    }

    fn nondecreasing(&self) -> bool {
        self.steps.iter().all(|d| *d >= -self.tol)
    }

    fn strictly_decreasing(&self) -> bool {
        self.steps.iter().all(|d| *d < -self.tol)
    }

    /// Ratio of the last two increments when both are positive.
    fn step_ratio(&self) -> Option<f64> {
        let (a, b) = (self.steps[1], self.steps[2]);
        (a > self.tol && b > 0.0).then(|| b / a)
    }

    /// Geometric extrapolation of the remaining increase.
    fn extrapolated_limit(&self) -> Option<f64> {
        if self.steps[2] <= self.tol {
            return Some(self.last);
        }
        let r = self.step_ratio()?;
        (r < 0.9).then(|| self.last + self.steps[2] * r / (1.0 - r))
    }
}

fn classify(regime: RayRegime, trace: &[(f64, f64)], exited: bool) -> (Classification, String) {
    use Classification::*;
    let values: Vec<f64> = trace.iter().map(|p| p.1).collect();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if let RayRegime::ExceedsSomewhere { threshold } = regime {
        if max > threshold {
            return (Holds, format!("observed {max} > {threshold}"));
        }
    }
    let Some(tail) = Tail::new(&values) else {
        return (Inconclusive, "fewer than 4 probes inside the domain".into());
    };
    if exited && !regime.toward_zero() {
        return (
            Inconclusive,
            format!("ray left the domain after t = {}", trace.last().unwrap().0),
        );
    }
    match regime {
        RayRegime::ExceedsAtInfinity { threshold } => {
            if tail.nondecreasing() && tail.last > threshold {
                (Holds, format!("nondecreasing tail reached {}", tail.last))
            } else if tail.strictly_decreasing() {
                (Fails, "strictly decreasing tail: concave limit is -inf".into())
            } else if tail.nondecreasing() {
                match tail.extrapolated_limit() {
                    Some(lim) if lim < threshold - tail.tol => {
                        (Fails, format!("increments decay; limit near {lim}"))
                    }
                    _ => (Inconclusive, format!("tail {} still below {threshold}", tail.last)),
                }
            } else {
                (Inconclusive, "mixed tail".into())
            }
        }
        RayRegime::BoundedBelowAtInfinity => {
            if tail.nondecreasing() {
                (Holds, format!("nondecreasing tail, bounded below by {}", tail.last))
            } else if tail.strictly_decreasing() {
                (Fails, "strictly decreasing tail: concave limit is -inf".into())
            } else {
                (Inconclusive, "mixed tail".into())
            }
        }
        RayRegime::NonnegativeSlopeAtInfinity => {
            let k = trace.len();
            let q1 = trace[k - 1].1 / trace[k - 1].0;
            let q0 = trace[k - 2].1 / trace[k - 2].0;
            if tail.nondecreasing() || q1 >= -tail.tol {
                (Holds, format!("f/t ends at {q1}"))
            } else if tail.strictly_decreasing() && (q1 - q0).abs() <= 0.1 * q1.abs() {
                (Fails, format!("f/t settles near {q1} < 0"))
            } else {
                (Inconclusive, format!("f/t ends at {q1}"))
            }
        }
        RayRegime::BoundedBelowAtZero => {
            // drops as t halves; positive means f decreasing toward 0
            let k = values.len();
            let drops: Vec<f64> = (k - 3..k).map(|i| values[i - 1] - values[i]).collect();
            if drops.iter().all(|d| *d <= tail.tol) {
                (Holds, format!("no further decrease, bounded by {}", tail.last))
            } else if drops.iter().all(|d| *d > tail.tol) {
                let r1 = drops[1] / drops[0];
                let r2 = drops[2] / drops[1];
                if r1 <= 0.75 && r2 <= 0.75 {
                    let rest = drops[2] * r2 / (1.0 - r2);
                    (Holds, format!("drops decay geometrically; limit near {}", tail.last - rest))
                } else if r1 >= 0.95 && r2 >= 0.95 {
                    (Fails, "drops do not decay: limit is -inf".into())
                } else {
                    (Inconclusive, format!("drop ratios {r1}, {r2}"))
                }
            } else {
                (Inconclusive, "mixed tail".into())
            }
        }
        RayRegime::ExceedsSomewhere { threshold } => {
            if tail.strictly_decreasing() {
                (Fails, format!("concave profile peaked at {max} <= {threshold}"))
            } else if tail.nondecreasing() {
                match tail.extrapolated_limit() {
                    Some(lim) if lim < threshold - tail.tol => {
                        (Fails, format!("increments decay; supremum near {lim}"))
                    }
                    _ => (Inconclusive, format!("maximum {max} still below {threshold}")),
                }
            } else {
                (Inconclusive, "mixed tail".into())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symfun::{make_operator, OperatorSpec};

    #[test]
    fn diagonal_limit_at_zero() {
        let root = make_operator(OperatorSpec::SigmaRoot(2), 3).unwrap();
        let r = ray_condition(&root, &[0.0; 3], &[1.0; 3], RayRegime::BoundedBelowAtZero).unwrap();
        assert_eq!(r.classification, Classification::Holds);
        let log = make_operator(OperatorSpec::LogSigmaN, 3).unwrap();
        let r = ray_condition(&log, &[0.0; 3], &[1.0; 3], RayRegime::BoundedBelowAtZero).unwrap();
        assert_eq!(r.classification, Classification::Fails);
    }

    #[test]
    fn growth_past_threshold() {
        let root = make_operator(OperatorSpec::SigmaRoot(2), 3).unwrap();
        let r = ray_condition(
            &root,
            &[0.0; 3],
            &[1.0, 1.0, 0.0],
            RayRegime::ExceedsAtInfinity { threshold: 5.0 },
        )
        .unwrap();
        assert_eq!(r.classification, Classification::Holds);
    }

    #[test]
    fn boundary_ray_is_domain_error() {
        let pos = make_operator(OperatorSpec::SigmaRoot(3), 3).unwrap();
        let r = ray_condition(
            &pos,
            &[0.0; 3],
            &[0.0, 0.0, 1.0],
            RayRegime::ExceedsSomewhere { threshold: 1.0 },
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn bounded_profile_fails_large_threshold() {
        let op = crate::symfun::SymmetricOperator::custom(crate::symfun::CustomOperator {
            name: "saturating".into(),
            domain: crate::cones::Cone::garding(2, 2).unwrap(),
            eval: std::sync::Arc::new(|x: &[f64]| Some(1.0 - 1.0 / (1.0 + x[0] + x[1]))),
            grad: None,
            homogeneity_degree: None,
            sup_on_boundary: None,
        })
        .unwrap();
        let r = ray_condition(
            &op,
            &[0.0; 2],
            &[1.0; 2],
            RayRegime::ExceedsAtInfinity { threshold: 2.0 },
        )
        .unwrap();
        assert_eq!(r.classification, Classification::Fails);
        let r = ray_condition(&op, &[0.0; 2], &[1.0; 2], RayRegime::BoundedBelowAtInfinity).unwrap();
        assert_eq!(r.classification, Classification::Holds);
    }
}
