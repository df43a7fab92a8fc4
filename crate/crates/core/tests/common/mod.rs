//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the solver code paths it is used to check.
#![allow(dead_code)]

use bregman_ot::{generate, GenConfig, OtInstance};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn instance(m: usize, n: usize, seed: u64) -> OtInstance {
    generate(&GenConfig::new(m, n, seed)).expect("generator")
}

pub fn uniform_matrix(rng: &mut impl Rng, m: usize, n: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((m, n), |_| rng.random_range(lo..hi))
}

pub fn simplex(rng: &mut impl Rng, n: usize) -> Array1<f64> {
    let v: Array1<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s = v.sum();
    v / s
}

pub fn max_abs_diff(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    x.iter().zip(y.iter()).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

/// Plain Sinkhorn with scalar loops, run for a fixed number of sweeps.
/// Returns `Diag(u) K Diag(v)` for `K = S ⊙ exp(-C/γ)`.
pub fn long_run_sinkhorn(inst: &OtInstance, s: &Array2<f64>, gamma: f64, sweeps: usize) -> Array2<f64> {
    let (m, n) = inst.dim();
    let (a, b) = (inst.a(), inst.b());
    let k: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..n)
                .map(|j| s[[i, j]] * (-inst.cost()[[i, j]] / gamma).exp())
                .collect()
        })
        .collect();
    let mut u = vec![1.0; m];
    let mut v = vec![1.0; n];
    for _ in 0..sweeps {
        for i in 0..m {
            let kv: f64 = (0..n).map(|j| k[i][j] * v[j]).sum();
            u[i] = a[i] / kv;
        }
        for j in 0..n {
            let ktu: f64 = (0..m).map(|i| k[i][j] * u[i]).sum();
            v[j] = b[j] / ktu;
        }
    }
    Array2::from_shape_fn((m, n), |(i, j)| u[i] * k[i][j] * v[j])
}

/// Solves the square system `A x = rhs` by Gaussian elimination with partial
/// pivoting; `None` when a pivot falls below `1e-12`.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        rhs.swap(col, piv);
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for (row, r) in rest.iter_mut().zip(col + 1..n) {
            let f = row[col] / pivot_row[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / a[r][r];
    }
    Some(x)
}

/// Euclidean projection of `g` onto `{X >= 0 : X e = a, X^T e = b}` by
/// enumerating which cells are zero. For each pattern the free cells are
/// `X_ij = g_ij + y_i + w_j` with the last `w` fixed to zero; the pattern is
/// accepted when the free cells are nonnegative and every zero cell has
/// `g_ij + y_i + w_j <= 0`.
pub fn active_set_projection(g: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (m, n) = g.dim();
    let cells = m * n;
    assert!(cells <= 16, "enumeration is exponential in the cell count");
    let unknowns = m + n - 1;
    let tol = 1e-12;
    for mask in 0u32..(1 << cells) {
        let free = |i: usize, j: usize| mask & (1 << (i * n + j)) == 0;
        // Equations: every row sum, and every column sum but the last.
        let mut mat = vec![vec![0.0; unknowns]; unknowns];
        let mut rhs = vec![0.0; unknowns];
        for i in 0..m {
            rhs[i] = a[i];
            for j in 0..n {
                if free(i, j) {
                    mat[i][i] += 1.0;
                    if j < n - 1 {
                        mat[i][m + j] += 1.0;
                    }
                    rhs[i] -= g[[i, j]];
                }
            }
        }
        for j in 0..n - 1 {
            let r = m + j;
            rhs[r] = b[j];
            for i in 0..m {
                if free(i, j) {
                    mat[r][i] += 1.0;
                    mat[r][m + j] += 1.0;
                    rhs[r] -= g[[i, j]];
                }
            }
        }
        let Some(sol) = gauss_solve(mat, rhs) else { continue };
        let shift = |i: usize, j: usize| g[[i, j]] + sol[i] + if j < n - 1 { sol[m + j] } else { 0.0 };
        let mut x = Array2::zeros((m, n));
        let mut ok = true;
        for i in 0..m {
            for j in 0..n {
                let w = shift(i, j);
                if free(i, j) {
                    ok &= w >= -tol;
                    x[[i, j]] = w.max(0.0);
                } else {
                    ok &= w <= tol;
                }
            }
        }
        let col_ok = (0..n).all(|j| ((0..m).map(|i| x[[i, j]]).sum::<f64>() - b[j]).abs() < 1e-10);
        if ok && col_ok {
            return x;
        }
    }
    panic!("no active set satisfies the optimality conditions");
}

/// Central difference of `f` along each coordinate.
pub fn central_difference(f: impl Fn(&Array1<f64>) -> f64, y: &Array1<f64>, h: f64) -> Array1<f64> {
    (0..y.len())
        .map(|k| {
            let mut up = y.clone();
            let mut down = y.clone();
            up[k] += h;
            down[k] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// Least-squares slope of `log values` against `log ks`.
pub fn log_log_slope(ks: &[f64], values: &[f64]) -> f64 {
    let xs: Vec<f64> = ks.iter().map(|k| k.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
