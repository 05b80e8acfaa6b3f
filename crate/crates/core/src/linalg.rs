//! Restarted GMRES for the generator systems.

/// Outcome of a [`gmres`] run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresInfo {
    pub iterations: usize,
    /// Final true residual `‖b - A x‖₂`.
    pub residual: f64,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `A x = b` with right Jacobi preconditioning `A D^{-1} (D x) = b`.
///
/// `apply(v, out)` computes `out = A v`. Iterates until `‖b - A x‖₂ ≤ tol`,
/// checking the true residual at every restart.
pub fn gmres<F: FnMut(&[f64], &mut [f64])>(
    mut apply: F,
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> GmresInfo {
    let n = b.len();
    let inv_d: Vec<f64> = diag.iter().map(|&d| if d.abs() > 1e-300 { 1.0 / d } else { 1.0 }).collect();
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut total = 0usize;
    let m = restart.max(1);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut h = vec![vec![0.0; m]; m + 1];
    loop {
        apply(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm(&r);
        if beta <= tol || total >= max_iter {
            return GmresInfo { iterations: total, residual: beta, converged: beta <= tol };
        }
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut k_used = 0;
        for k in 0..m {
            for i in 0..n {
                z[i] = basis[k][i] * inv_d[i];
            }
            apply(&z, &mut w);
            for (j, v) in basis.iter().enumerate() {
                let hj: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
                h[j][k] = hj;
                for i in 0..n {
                    w[i] -= hj * v[i];
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let rho = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            cs[k] = h[k][k] / rho;
            sn[k] = h[k + 1][k] / rho;
            h[k][k] = rho;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k_used = k + 1;
            if g[k + 1].abs() <= 0.5 * tol || hn == 0.0 || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        // back substitution and update x += D^{-1} V y
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                x[i] += yj * basis[j][i] * inv_d[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_nonsymmetric_tridiagonal_system() {
        let n = 200;
        let apply = |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { v[i - 1] } else { 0.0 };
                let r = if i + 1 < n { v[i + 1] } else { 0.0 };
                out[i] = 4.0 * v[i] - 1.5 * l - 0.5 * r;
            }
        };
        let exact: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let mut b = vec![0.0; n];
        apply(&exact, &mut b);
        let mut x = vec![0.0; n];
        let info = gmres(apply, &vec![4.0; n], &b, &mut x, 1e-12, 30, 1000);
        assert!(info.converged);
        for (a, e) in x.iter().zip(&exact) {
            assert!((a - e).abs() < 1e-10);
        }
    }
}
