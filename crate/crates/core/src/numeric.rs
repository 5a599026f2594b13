//! Small numerical kernels shared by the geometry and certification layers:
//! predicate bisection, golden-section maximisation, a Nelder-Mead simplex
//! minimiser and central finite differences.

/// Iteration cap for every bisection in the crate.
pub const BISECTION_MAX_ITER: usize = 200;

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Bisects a monotone predicate with `pred(lo) == false` and `pred(hi) == true`
/// until the endpoints are adjacent floats or the iteration cap is hit.
/// Returns the final `(lo, hi)` bracket.
pub fn bisect_predicate(
    mut lo: f64,
    mut hi: f64,
    mut pred: impl FnMut(f64) -> bool,
) -> (f64, f64) {
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo.min(hi) || mid >= lo.max(hi) {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

/// Maximises `g` over `[a, b]` by golden-section search. `g` is expected to be
/// unimodal there; non-finite values are treated as `-inf`.
pub fn golden_max(mut a: f64, mut b: f64, iters: usize, g: impl Fn(f64) -> f64) -> (f64, f64) {
    let clean = |x: f64| {
        let v = g(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut gc = clean(c);
    let mut gd = clean(d);
    for _ in 0..iters {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = clean(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = clean(d);
        }
    }
    if gc >= gd {
        (c, gc)
    } else {
        (d, gd)
    }
}

/// Central-difference gradient with step `h = 1e-6 * (1 + |x|_inf)`.
/// Returns `None` when any probe leaves the domain.
pub fn central_difference(x: &[f64], f: impl Fn(&[f64]) -> Option<f64>) -> Option<Vec<f64>> {
    let h = 1e-6 * (1.0 + norm_inf(x));
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    Some(grad)
}

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    pub max_iter: usize,
    /// Spread of objective values at which the simplex counts as converged.
    pub ftol: f64,
    /// Simplex diameter at which the simplex counts as converged.
    pub xtol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            ftol: 1e-12,
            xtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the escape predicate fired on an evaluated vertex.
    pub escaped: bool,
}

/// Nelder-Mead minimisation with standard coefficients (reflection 1,
/// expansion 2, contraction 1/2, shrink 1/2).
///
/// The objective may return `+inf` for infeasible points. When `escape`
/// returns true for any evaluated point the search stops immediately and the
/// result carries `escaped = true` together with the best point seen.
pub fn nelder_mead(
    objective: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    opts: &SimplexOptions,
    escape: impl Fn(&[f64]) -> bool,
) -> SimplexResult {
    let dim = x0.len();
    let clean = |x: &[f64]| {
        let v = objective(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| clean(v)).collect();
    let mut best = (x0.to_vec(), values[0]);
    let mut escaped = false;

    let track = |x: &[f64], fx: f64, best: &mut (Vec<f64>, f64)| -> bool {
        if fx < best.1 {
            *best = (x.to_vec(), fx);
        }
        escape(x)
    };
    for (v, fv) in simplex.iter().zip(&values) {
        if track(v, *fv, &mut best) {
            escaped = true;
        }
    }

    let mut iterations = 0;
    let mut converged = false;
    while !escaped && iterations < opts.max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[dim] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            })
            .fold(0.0f64, f64::max);
        let scale = 1.0 + norm_inf(&simplex[0]);
        if values[0].is_finite()
            && spread.abs() <= opts.ftol * (1.0 + values[0].abs())
            && diameter <= opts.xtol * scale
        {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|v| v[j]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = along(-1.0);
        let fr = clean(&xr);
        if track(&xr, fr, &mut best) {
            escaped = true;
            break;
        }
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = clean(&xe);
            if track(&xe, fe, &mut best) {
                escaped = true;
                break;
            }
            if fe < fr {
                simplex[dim] = xe;
                values[dim] = fe;
            } else {
                simplex[dim] = xr;
                values[dim] = fr;
            }
            continue;
        }
        if fr < values[dim - 1] {
            simplex[dim] = xr;
            values[dim] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[dim] {
            let xc = along(-0.5);
            let fc = clean(&xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = clean(&xc);
            (xc, fc)
        };
        if track(&xc, fc, &mut best) {
            escaped = true;
            break;
        }
        if fc < values[dim].min(fr) {
            simplex[dim] = xc;
            values[dim] = fc;
            continue;
        }
        for i in 1..=dim {
            let shrunk: Vec<f64> = simplex[i]
                .iter()
                .zip(&simplex[0])
                .map(|(v, b)| b + 0.5 * (v - b))
                .collect();
            values[i] = clean(&shrunk);
            simplex[i] = shrunk;
            if track(&simplex[i], values[i], &mut best) {
                escaped = true;
            }
        }
    }

    SimplexResult {
        x: best.0,
        fx: best.1,
        iterations,
        converged,
        escaped,
    }
}

/// Serde adapter for extended reals: infinities become `"+inf"`/`"-inf"`.
pub mod ext_real {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("+inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub mod option {
        use serde::Serializer;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(x) => super::serialize(x, s),
                None => s.serialize_none(),
            }
        }
    }
}
