//! Symmetric operators acting on eigenvalue vectors.
//!
//! Built-in families are the Garding-type operators `sum`, `sigma(k)`,
//! `sigma_root(k)`, `quotient(k,l)` and `log_sigma_n`; arbitrary operators can
//! be wrapped with [`SymmetricOperator::custom`]. Evaluation outside the
//! domain cone yields `None` instead of an error so that ray shooting can
//! probe boundaries freely.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::cones::{Cone, ConeFamily};
use crate::error::{Error, Result};
use crate::numeric::{central_difference, norm_inf};

/// A validated eigenvalue vector: at least two finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    entries: Vec<f64>,
}

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::Domain(format!(
                "vectors need at least 2 entries, got {}",
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite entry {bad}")));
        }
        Ok(Self { entries })
    }

    /// The all-ones vector of length `n`.
    pub fn ones(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.entries
    }

    /// Indices that sort the entries ascending.
    pub fn ascending_permutation(&self) -> Vec<usize> {
        ascending_permutation(&self.entries)
    }

    pub fn sorted_ascending(&self) -> Vector {
        Vector {
            entries: sorted_ascending(&self.entries),
        }
    }
}

pub(crate) fn ascending_permutation(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    idx
}

pub(crate) fn sorted_ascending(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    out.sort_by(f64::total_cmp);
    out
}

/// `sigma_0 .. sigma_k` of `lambda` by the one-pass prefix recurrence.
pub fn elementary_symmetric_all(lambda: &[f64], k: usize) -> Vec<f64> {
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for (i, &x) in lambda.iter().enumerate() {
        for j in (1..=k.min(i + 1)).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e
}

/// The k-th elementary symmetric function `sigma_k(lambda)`; `sigma_0 = 1`.
pub fn elementary_symmetric(lambda: &[f64], k: usize) -> Result<f64> {
    if k > lambda.len() {
        return Err(Error::Domain(format!(
            "sigma_{k} undefined for n = {}",
            lambda.len()
        )));
    }
    Ok(elementary_symmetric_all(lambda, k)[k])
}

/// Gradient of `sigma_k`: entry i is `sigma_{k-1}` of `lambda` with entry i
/// removed, assembled from prefix and suffix recurrences (no division).
pub fn elementary_symmetric_grad(lambda: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = lambda.len();
    if k == 0 || k > n {
        return Err(Error::Domain(format!(
            "gradient of sigma_{k} undefined for n = {n}"
        )));
    }
    let m = k - 1;
    let mut prefix: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut cur = vec![0.0; m + 1];
    cur[0] = 1.0;
    prefix.push(cur.clone());
    for &x in lambda {
        for j in (1..=m).rev() {
            cur[j] += x * cur[j - 1];
        }
        prefix.push(cur.clone());
    }
    let mut grad = vec![0.0; n];
    let mut suffix = vec![0.0; m + 1];
    suffix[0] = 1.0;
    for i in (0..n).rev() {
        let p = &prefix[i];
        grad[i] = (0..=m).map(|a| p[a] * suffix[m - a]).sum();
        for j in (1..=m).rev() {
            suffix[j] += lambda[i] * suffix[j - 1];
        }
    }
    Ok(grad)
}

/// Built-in operator families, in the text grammar
/// `sum | sigma(k) | sigma_root(k) | quotient(k,l) | log_sigma_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OperatorSpec {
    Sum,
    Sigma(usize),
    SigmaRoot(usize),
    /// `(sigma_k / sigma_l)^(1/(k-l))`, `0 <= l < k`.
    Quotient(usize, usize),
    LogSigmaN,
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorSpec::Sum => write!(f, "sum"),
            OperatorSpec::Sigma(k) => write!(f, "sigma({k})"),
            OperatorSpec::SigmaRoot(k) => write!(f, "sigma_root({k})"),
            OperatorSpec::Quotient(k, l) => write!(f, "quotient({k},{l})"),
            OperatorSpec::LogSigmaN => write!(f, "log_sigma_n"),
        }
    }
}

/// Splits `name(a,b,...)` into `name` and its top-level arguments.
pub(crate) fn split_call(s: &str) -> Option<(&str, Vec<&str>)> {
    let s = s.trim();
    let open = s.find('(')?;
    if !s.ends_with(')') {
        return None;
    }
    let name = s[..open].trim();
    let inner = &s[open + 1..s.len() - 1];
    let mut args = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in inner.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                args.push(inner[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return None;
        }
    }
    if depth != 0 {
        return None;
    }
    args.push(inner[start..].trim());
    Some((name, args))
}

fn parse_index(s: &str, whole: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| Error::Parse(format!("bad integer `{s}` in `{whole}`")))
}

impl FromStr for OperatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t {
            "sum" => return Ok(OperatorSpec::Sum),
            "log_sigma_n" => return Ok(OperatorSpec::LogSigmaN),
            _ => {}
        }
        let (name, args) =
            split_call(t).ok_or_else(|| Error::Parse(format!("unrecognised operator `{t}`")))?;
        let spec = match (name, args.as_slice()) {
            ("sigma", [k]) => OperatorSpec::Sigma(parse_index(k, t)?),
            ("sigma_root", [k]) => OperatorSpec::SigmaRoot(parse_index(k, t)?),
            ("quotient", [k, l]) => OperatorSpec::Quotient(parse_index(k, t)?, parse_index(l, t)?),
            _ => return Err(Error::Parse(format!("unrecognised operator `{t}`"))),
        };
        Ok(spec)
    }
}

impl OperatorSpec {
    fn validate(&self, n: usize) -> Result<()> {
        let check = |k: usize| {
            if k == 0 || k > n {
                Err(Error::Domain(format!("{self}: index {k} outside 1..={n}")))
            } else {
                Ok(())
            }
        };
        match *self {
            OperatorSpec::Sum | OperatorSpec::LogSigmaN => Ok(()),
            OperatorSpec::Sigma(k) | OperatorSpec::SigmaRoot(k) => check(k),
            OperatorSpec::Quotient(k, l) => {
                check(k)?;
                if l >= k {
                    return Err(Error::Domain(format!("{self}: requires l < k")));
                }
                Ok(())
            }
        }
    }

    /// The Garding index of the natural domain cone.
    fn natural_cone_index(&self, n: usize) -> usize {
        match *self {
            OperatorSpec::Sum => 1,
            OperatorSpec::Sigma(k) | OperatorSpec::SigmaRoot(k) | OperatorSpec::Quotient(k, _) => k,
            OperatorSpec::LogSigmaN => n,
        }
    }

    fn homogeneity(&self) -> Option<f64> {
        match *self {
            OperatorSpec::Sum | OperatorSpec::SigmaRoot(_) | OperatorSpec::Quotient(..) => Some(1.0),
            OperatorSpec::Sigma(k) => Some(k as f64),
            OperatorSpec::LogSigmaN => None,
        }
    }

    /// Supremum of f over the boundary of the natural domain.
    fn boundary_sup(&self) -> f64 {
        match self {
            OperatorSpec::LogSigmaN => f64::NEG_INFINITY,
            _ => 0.0,
        }
    }

    fn eval(&self, x: &[f64]) -> Option<f64> {
        let v = match *self {
            OperatorSpec::Sum => x.iter().sum(),
            OperatorSpec::Sigma(k) => elementary_symmetric_all(x, k)[k],
            OperatorSpec::SigmaRoot(k) => {
                let s = elementary_symmetric_all(x, k)[k];
                if s <= 0.0 {
                    return None;
                }
                s.powf(1.0 / k as f64)
            }
            OperatorSpec::Quotient(k, l) => {
                let e = elementary_symmetric_all(x, k);
                let q = e[k] / e[l];
                if !(q > 0.0) {
                    return None;
                }
                q.powf(1.0 / (k - l) as f64)
            }
            OperatorSpec::LogSigmaN => {
                if x.iter().any(|&v| v <= 0.0) {
                    return None;
                }
                x.iter().map(|v| v.ln()).sum()
            }
        };
        v.is_finite().then_some(v)
    }

    fn grad(&self, x: &[f64]) -> Option<Vec<f64>> {
        let n = x.len();
        let g = match *self {
            OperatorSpec::Sum => vec![1.0; n],
            OperatorSpec::Sigma(k) => elementary_symmetric_grad(x, k).ok()?,
            OperatorSpec::SigmaRoot(k) => {
                let s = elementary_symmetric_all(x, k)[k];
                if s <= 0.0 {
                    return None;
                }
                let f = s.powf(1.0 / k as f64);
                let c = f / (k as f64 * s);
                elementary_symmetric_grad(x, k)
                    .ok()?
                    .into_iter()
                    .map(|d| c * d)
                    .collect()
            }
            OperatorSpec::Quotient(k, l) => {
                let e = elementary_symmetric_all(x, k);
                let (sk, sl) = (e[k], e[l]);
                let q = sk / sl;
                if !(q > 0.0) {
                    return None;
                }
                let p = (k - l) as f64;
                let f = q.powf(1.0 / p);
                let dk = elementary_symmetric_grad(x, k).ok()?;
                let dl = if l == 0 {
                    vec![0.0; n]
                } else {
                    elementary_symmetric_grad(x, l).ok()?
                };
                if sk > 0.0 && sl > 0.0 {
                    // log-space: d log f = (d sigma_k / sigma_k - d sigma_l / sigma_l) / (k - l)
                    dk.iter()
                        .zip(&dl)
                        .map(|(a, b)| f / p * (a / sk - b / sl))
                        .collect()
                } else {
                    let c = f / (p * q * sl * sl);
                    dk.iter()
                        .zip(&dl)
                        .map(|(a, b)| c * (a * sl - sk * b))
                        .collect()
                }
            }
            OperatorSpec::LogSigmaN => {
                if x.iter().any(|&v| v <= 0.0) {
                    return None;
                }
                x.iter().map(|v| 1.0 / v).collect()
            }
        };
        g.iter().all(|v| v.is_finite()).then_some(g)
    }
}

pub type EvalFn = Arc<dyn Fn(&[f64]) -> Option<f64> + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&[f64]) -> Option<Vec<f64>> + Send + Sync>;

#[derive(Clone)]
enum Body {
    Builtin(OperatorSpec),
    Custom { eval: EvalFn, grad: Option<GradFn> },
}

/// Where an operator's gradient comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientProvenance {
    Analytic,
    FdGradient,
}

/// Description of a user-supplied operator.
pub struct CustomOperator {
    pub name: String,
    pub domain: Cone,
    pub eval: EvalFn,
    pub grad: Option<GradFn>,
    pub homogeneity_degree: Option<f64>,
    /// Supremum over the boundary of the domain, if known.
    pub sup_on_boundary: Option<f64>,
}

/// A smooth symmetric function on an open symmetric convex cone.
#[derive(Clone)]
pub struct SymmetricOperator {
    name: String,
    n: usize,
    domain: Cone,
    natural_domain: Option<Cone>,
    body: Body,
    homogeneity_degree: Option<f64>,
    sup_on_diagonal: f64,
    sup_on_boundary: Option<f64>,
}

impl fmt::Debug for SymmetricOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetricOperator")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("domain", &self.domain.label())
            .finish()
    }
}

/// Builds a built-in operator on its natural Garding domain.
pub fn make_operator(spec: OperatorSpec, n: usize) -> Result<SymmetricOperator> {
    if n < 2 {
        return Err(Error::Domain(format!("arity must be at least 2, got {n}")));
    }
    spec.validate(n)?;
    let domain = Cone::garding(n, spec.natural_cone_index(n))?;
    Ok(SymmetricOperator {
        name: spec.to_string(),
        n,
        domain,
        natural_domain: None,
        body: Body::Builtin(spec),
        homogeneity_degree: spec.homogeneity(),
        sup_on_diagonal: f64::INFINITY,
        sup_on_boundary: Some(spec.boundary_sup()),
    })
}

/// Values of t -> f(t 1) are probed at t = 2^j up to this cap.
const DIAGONAL_PROBE_CAP: f64 = 1e8;

fn probe_diagonal_sup(n: usize, eval: &dyn Fn(&[f64]) -> Option<f64>) -> f64 {
    let mut values = Vec::new();
    let mut t = 1.0;
    while t <= DIAGONAL_PROBE_CAP {
        if let Some(v) = eval(&vec![t; n]) {
            values.push(v);
        }
        t *= 2.0;
    }
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if values.len() < 3 {
        return best;
    }
    let k = values.len();
    let d1 = values[k - 1] - values[k - 2];
    let d0 = values[k - 2] - values[k - 3];
    let tol = 1e-12 * (1.0 + best.abs());
    if d1 > tol && d1 >= 0.5 * d0 {
        f64::INFINITY
    } else {
        best
    }
}

impl SymmetricOperator {
    pub fn custom(spec: CustomOperator) -> Result<SymmetricOperator> {
        let n = spec.domain.arity();
        if n < 2 {
            return Err(Error::Domain(format!("arity must be at least 2, got {n}")));
        }
        let sup_on_diagonal = probe_diagonal_sup(n, &|x: &[f64]| {
            if spec.domain.contains(x) {
                (spec.eval)(x).filter(|v| v.is_finite())
            } else {
                None
            }
        });
        Ok(SymmetricOperator {
            name: spec.name,
            n,
            domain: spec.domain,
            natural_domain: None,
            body: Body::Custom {
                eval: spec.eval,
                grad: spec.grad,
            },
            homogeneity_degree: spec.homogeneity_degree,
            sup_on_diagonal,
            sup_on_boundary: spec.sup_on_boundary,
        })
    }

    /// Restricts the operator to a sub-cone of its natural domain.
    ///
    /// Garding cones are checked for containment (`Gamma_j` is inside
    /// `Gamma_k` iff `j >= k`); custom cones are intersected with the natural
    /// domain at evaluation time.
    pub fn with_domain(&self, cone: Cone) -> Result<SymmetricOperator> {
        if cone.arity() != self.n {
            return Err(Error::Domain(format!(
                "cone arity {} does not match operator arity {}",
                cone.arity(),
                self.n
            )));
        }
        if cone.label() == self.domain.label() {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        match (self.domain.family(), cone.family()) {
            (ConeFamily::Garding(k_nat), ConeFamily::Garding(k)) => {
                if k < k_nat {
                    return Err(Error::Domain(format!(
                        "{} is not defined on {} (natural domain {})",
                        self.name,
                        cone.label(),
                        self.domain.label()
                    )));
                }
                out.natural_domain = None;
            }
            _ => out.natural_domain = Some(self.domain.clone()),
        }
        out.domain = cone;
        out.sup_on_boundary = None;
        Ok(out)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.n
    }

    pub fn domain(&self) -> &Cone {
        &self.domain
    }

    pub fn spec(&self) -> Option<OperatorSpec> {
        match self.body {
            Body::Builtin(s) => Some(s),
            Body::Custom { .. } => None,
        }
    }

    pub fn homogeneity_degree(&self) -> Option<f64> {
        self.homogeneity_degree
    }

    /// `lim f(t 1)` as `t -> inf`; `+inf` when unbounded.
    pub fn sup_on_diagonal(&self) -> f64 {
        self.sup_on_diagonal
    }

    /// Supremum of f over the boundary of the domain, when known.
    pub fn sup_on_boundary(&self) -> Option<f64> {
        self.sup_on_boundary
    }

    pub fn gradient_provenance(&self) -> GradientProvenance {
        match &self.body {
            Body::Builtin(_) | Body::Custom { grad: Some(_), .. } => GradientProvenance::Analytic,
            Body::Custom { grad: None, .. } => GradientProvenance::FdGradient,
        }
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        x.len() == self.n
            && self.domain.contains(x)
            && self.natural_domain.as_ref().is_none_or(|c| c.contains(x))
    }

    /// f(x), or `None` outside the domain cone.
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        if !self.in_domain(x) {
            return None;
        }
        match &self.body {
            Body::Builtin(s) => s.eval(x),
            Body::Custom { eval, .. } => eval(x).filter(|v| v.is_finite()),
        }
    }

    /// The gradient `(f_1, ..., f_n)`, or `None` outside the domain cone.
    pub fn grad(&self, x: &[f64]) -> Option<Vec<f64>> {
        if !self.in_domain(x) {
            return None;
        }
        match &self.body {
            Body::Builtin(s) => s.grad(x),
            Body::Custom { grad: Some(g), .. } => g(x),
            Body::Custom { grad: None, .. } => central_difference(x, |p| self.eval(p)),
        }
    }

    /// Gradient evaluated at the ascending rearrangement of `x`. The
    /// returned pair is `(sorted x, gradient at sorted x)`.
    pub fn sorted_gradient(&self, x: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let sorted = sorted_ascending(x);
        let g = self.grad(&sorted)?;
        Some((sorted, g))
    }
}

/// `sum_i f_i(x) x_i - p f(x)` for an operator homogeneous of degree `p`.
pub fn euler_residual(op: &SymmetricOperator, x: &[f64]) -> Result<f64> {
    let p = op.homogeneity_degree().ok_or_else(|| {
        Error::Unsupported(format!("{} has no declared homogeneity degree", op.name()))
    })?;
    let f = op
        .eval(x)
        .ok_or_else(|| Error::Domain(format!("{x:?} outside the domain of {}", op.name())))?;
    let g = op.grad(x).ok_or_else(|| Error::Domain("gradient unavailable".into()))?;
    Ok(g.iter().zip(x).map(|(gi, xi)| gi * xi).sum::<f64>() - p * f)
}

/// Relative gap between an analytic gradient and central differences,
/// measured in the max norm against the larger of the two gradients.
pub fn gradient_fd_error(op: &SymmetricOperator, x: &[f64]) -> Option<f64> {
    let g = op.grad(x)?;
    let fd = central_difference(x, |p| op.eval(p))?;
    let scale = norm_inf(&g).max(norm_inf(&fd)).max(f64::MIN_POSITIVE);
    let diff = g
        .iter()
        .zip(&fd)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Some(diff / scale)
}
