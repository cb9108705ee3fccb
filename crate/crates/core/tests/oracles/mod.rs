//! Reference computations written independently of the library code.
#![allow(dead_code)]

/// Sinkhorn-Knopp scaling: alternate row and column normalization until every
/// row and column sums to one within `tol`.
pub fn sinkhorn_knopp(a: &[Vec<f64>], tol: f64, max_iters: usize) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let m = a[0].len();
    let mut x = a.to_vec();
    for _ in 0..max_iters {
        for row in x.iter_mut() {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        for j in 0..m {
            let s: f64 = (0..n).map(|i| x[i][j]).sum();
            (0..n).for_each(|i| x[i][j] /= s);
        }
        let worst_row = x
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        if worst_row < tol {
            return Some(x);
        }
    }
    None
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Every nonzero entry of the square 0/1 matrix lies on a positive diagonal.
pub fn has_total_support(x: &[Vec<u8>]) -> bool {
    let n = x.len();
    let mut covered = vec![vec![false; n]; n];
    let mut any = false;
    for p in permutations(n) {
        if (0..n).all(|i| x[i][p[i]] == 1) {
            any = true;
            (0..n).for_each(|i| covered[i][p[i]] = true);
        }
    }
    any && (0..n).all(|i| (0..n).all(|j| (x[i][j] == 1) == covered[i][j]))
}

/// Rank of a real matrix by Gaussian elimination with partial pivoting.
pub fn rank(rows: &[Vec<f64>]) -> usize {
    let mut a = rows.to_vec();
    let (n, m) = (a.len(), a[0].len());
    let mut r = 0;
    for col in 0..m {
        let Some(p) = (r..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())) else {
            break;
        };
        if a[p][col].abs() < 1e-9 {
            continue;
        }
        a.swap(r, p);
        for i in r + 1..n {
            let f = a[i][col] / a[r][col];
            for j in col..m {
                a[i][j] -= f * a[r][j];
            }
        }
        r += 1;
        if r == n {
            break;
        }
    }
    r
}

/// Contexts with no empty or repeated action column, optionally also of full
/// rank when square. Row-major rows.
pub fn valid_contexts(n: usize, m: usize, full_rank: bool) -> Vec<Vec<Vec<u8>>> {
    let mut out = Vec::new();
    for bits in 0u64..(1 << (n * m)) {
        let x: Vec<Vec<u8>> = (0..n)
            .map(|c| (0..m).map(|a| ((bits >> (c * m + a)) & 1) as u8).collect())
            .collect();
        let cols: Vec<Vec<u8>> = (0..m).map(|a| (0..n).map(|c| x[c][a]).collect()).collect();
        if cols.iter().any(|c| c.iter().all(|&v| v == 0)) {
            continue;
        }
        if (0..m).any(|i| (i + 1..m).any(|j| cols[i] == cols[j])) {
            continue;
        }
        if full_rank && n == m {
            let f: Vec<Vec<f64>> = x
                .iter()
                .map(|r| r.iter().map(|&v| v as f64).collect())
                .collect();
            if rank(&f) < n {
                continue;
            }
        }
        out.push(x);
    }
    out
}

/// Posterior marginals `P(x_{c,a} = 1)` over `contexts` (row-major entries),
/// from unnormalized log posteriors.
pub fn entry_marginals(contexts: &[Vec<Vec<u8>>], log_post: &[f64]) -> Vec<Vec<f64>> {
    let top = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_post.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();
    let (n, m) = (contexts[0].len(), contexts[0][0].len());
    let mut out = vec![vec![0.0; m]; n];
    for (x, wi) in contexts.iter().zip(&w) {
        for c in 0..n {
            for a in 0..m {
                out[c][a] += x[c][a] as f64 * wi / z;
            }
        }
    }
    out
}

/// Central difference of `f` along every coordinate of `x`.
pub fn central_gradient<F: Fn(&[f64]) -> f64>(x: &[f64], h: f64, f: F) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Base-2 Jensen-Shannon divergence of two Bernoulli laws.
pub fn bernoulli_js(p: f64, q: f64) -> f64 {
    let h = |v: f64| {
        if v <= 0.0 || v >= 1.0 {
            0.0
        } else {
            -v * v.log2() - (1.0 - v) * (1.0 - v).log2()
        }
    };
    h(0.5 * (p + q)) - 0.5 * (h(p) + h(q))
}

/// One-sided sign test p-value
/// `P(Binomial(n, 1/2) >= k)`.
pub fn sign_test_p(k: usize, n: usize) -> f64 {
    let mut total = 0.0;
    for j in k..=n {
        total += binom(n, j);
    }
    total / 2f64.powi(n as i32)
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shannon entropy in bits.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|v| -v * v.log2()).sum()
}
