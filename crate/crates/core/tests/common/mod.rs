//! Reference computations written independently of the library: subset-sum
//! elementary symmetric functions, exhaustive sign-pattern search, exact
//! level-set parametrisations and extrapolated finite differences.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use ellcert::symfun::{make_operator, OperatorSpec, SymmetricOperator};

/// `sigma_j(x)` as a sum over all `j`-subsets.
pub fn esym_subsets(x: &[f64], j: usize) -> f64 {
    let n = x.len();
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == j)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).map(|i| x[i]).product::<f64>())
        .sum()
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Strict membership in the cone where `sigma_1, ..., sigma_k > 0`, with a
/// relative cutoff on the normalised values.
pub fn garding_member(x: &[f64], k: usize) -> bool {
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    (1..=k).all(|j| esym_subsets(x, j) / binom(x.len(), j) > 1e-10 * scale.powi(j as i32))
}

/// `10^e` for `e = -3, -2.5, ..., 3`.
pub fn log_grid() -> Vec<f64> {
    (0..=12).map(|i| 10f64.powf(-3.0 + 0.5 * i as f64)).collect()
}

/// Odometer over `grid^len`.
fn for_each_tuple(grid: &[f64], len: usize, mut visit: impl FnMut(&[f64]) -> bool) -> bool {
    let mut idx = vec![0usize; len];
    let mut tuple = vec![grid[0]; len];
    loop {
        if visit(&tuple) {
            return true;
        }
        let mut pos = 0;
        loop {
            if pos == len {
                return false;
            }
            idx[pos] += 1;
            if idx[pos] < grid.len() {
                tuple[pos] = grid[idx[pos]];
                break;
            }
            idx[pos] = 0;
            tuple[pos] = grid[0];
            pos += 1;
        }
    }
}

/// Largest `q` such that some `(-a_1, ..., -a_q, a_{q+1}, ..., a_n)` with
/// every `a_i` on the log-grid lies in the `k`-th Garding cone. Exhaustive
/// over the grid for `n <= 5`; for larger `n` each block is held constant,
/// which loses nothing because averaging a member over permutations of a
/// block keeps it in a symmetric convex cone.
pub fn brute_kappa_garding(n: usize, k: usize) -> usize {
    let grid = log_grid();
    for q in (0..n).rev() {
        let found = if n <= 5 {
            for_each_tuple(&grid, n, |a| {
                let v: Vec<f64> = (0..n).map(|i| if i < q { -a[i] } else { a[i] }).collect();
                garding_member(&v, k)
            })
        } else {
            grid.iter().any(|&a| {
                grid.iter().any(|&b| {
                    let v: Vec<f64> = (0..n).map(|i| if i < q { -a } else { b }).collect();
                    garding_member(&v, k)
                })
            })
        };
        if found {
            return q;
        }
    }
    panic!("no sign pattern of gamma({k}) in dimension {n} is a member");
}

pub fn seeded(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // Box-Muller
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let v: f64 = rng.random();
            (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
        })
        .collect()
}

/// A random vector in the operator's domain by rejection from a Gaussian
/// around a random diagonal point, with log-uniform spread so points near
/// the boundary and far out along it both occur.
pub fn rejection_member(op: &SymmetricOperator, rng: &mut impl Rng) -> Vec<f64> {
    let n = op.arity();
    loop {
        let spread = 10f64.powf(rng.random_range(-1.0..3.0));
        let centre: f64 = rng.random_range(0.0..1.0);
        let x: Vec<f64> = gaussian(rng, n).iter().map(|g| centre + spread * g).collect();
        if op.domain().contains(&x) && op.eval(&x).is_some() {
            return x;
        }
    }
}

/// Exact level-set point along the ray through `x` for a positively
/// homogeneous operator of degree `p` with `f(x) > 0` and `sigma > 0`.
pub fn scale_to_level(op: &SymmetricOperator, x: &[f64], sigma: f64) -> Option<Vec<f64>> {
    let p = op.homogeneity_degree()?;
    let v = op.eval(x)?;
    (v > 0.0 && sigma > 0.0).then(|| {
        let s = (sigma / v).powf(1.0 / p);
        x.iter().map(|xi| s * xi).collect()
    })
}

/// Exact level-set point for `log sigma_n`, using `log sigma_n(s x) = n log s + log sigma_n(x)`.
pub fn scale_to_log_level(x: &[f64], sigma: f64) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let prod: f64 = x.iter().product();
    (prod > 0.0).then(|| {
        let s = ((sigma - prod.ln()) / n).exp();
        x.iter().map(|xi| s * xi).collect()
    })
}

/// `min_{i<m} g_(i) / sum g` with the gradient sorted descending.
pub fn ratio_desc(grad: &[f64], m: usize) -> f64 {
    let mut g = grad.to_vec();
    g.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = g.iter().sum();
    g[m - 1] / total
}

/// Central differences at step `h = 1e-6 (1 + |x|_inf)` and `h/2`, combined
/// by Richardson extrapolation so the truncation error is `O(h^4)`. Plain
/// central differences lose about five digits at entries only a few hundred
/// steps from zero.
pub fn fd_gradient(f: impl Fn(&[f64]) -> Option<f64>, x: &[f64]) -> Option<Vec<f64>> {
    let h = 1e-6 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let central = |i: usize, h: f64| -> Option<f64> {
        let mut p = x.to_vec();
        let mut q = x.to_vec();
        p[i] += h;
        q[i] -= h;
        Some((f(&p)? - f(&q)?) / (2.0 * h))
    };
    (0..x.len())
        .map(|i| {
            let coarse = central(i, h)?;
            let fine = central(i, 0.5 * h)?;
            Some((4.0 * fine - coarse) / 3.0)
        })
        .collect()
}

/// Largest relative deviation, scaled by the gradient's sup norm.
pub fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Every built-in family at arity `n`, with its natural domain.
pub fn builtins(n: usize) -> Vec<SymmetricOperator> {
    let mut specs = vec![OperatorSpec::Sum, OperatorSpec::LogSigmaN];
    for k in 2..=n {
        specs.push(OperatorSpec::Sigma(k));
        specs.push(OperatorSpec::SigmaRoot(k));
        for l in 1..k {
            specs.push(OperatorSpec::Quotient(k, l));
        }
    }
    specs.into_iter().map(|s| make_operator(s, n).unwrap()).collect()
}

/// Built-ins that are concave on their domain.
pub fn concave_builtins(n: usize) -> Vec<SymmetricOperator> {
    builtins(n)
        .into_iter()
        .filter(|op| !matches!(op.spec(), Some(OperatorSpec::Sigma(k)) if k >= 2))
        .collect()
}

/// `(a, ..., a, t, ..., t)` with `n - k + 1` copies of `a` and `k - 1` of
/// `t`, with `a` solved so that `sigma_k^{1/k} = sigma`. As `t` grows the
/// gradient entries at the `t` positions vanish relative to the sum, so the
/// order `n - k + 2` ratio tends to 0.
pub fn lin_trudinger_family(n: usize, k: usize, sigma: f64, t: f64) -> Vec<f64> {
    let point = |a: f64| -> Vec<f64> { (0..n).map(|i| if i < n - k + 1 { a } else { t }).collect() };
    let value = |a: f64| esym_subsets(&point(a), k);
    let target = sigma.powi(k as i32);
    // value is increasing in a for a > 0 on this family
    let (mut lo, mut hi) = (0.0, t.max(1.0));
    while value(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if value(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    point(hi)
}
